mod common;

use automata2attn::automata::{make_counting_wfa, wfa_states, Wfa};
use automata2attn::linalg::Matrix;
use automata2attn::scan::{prefix_scan_trace, MatrixProduct};
use automata2attn::tensor_ops::{unvec, vec};
use automata2attn::transformer::transformer_trace;
use automata2attn::wfa_compiler::*;
use common::*;
use std::collections::BTreeMap;

#[test]
fn counting_word_states() {
    let a = make_counting_wfa();
    let c = compile_exact(&a, 4).unwrap();
    let s = simulate_word(&c.spec, &chars("0010")).unwrap();
    let want = vec![vec![0.0, 1.0], vec![1.0, 1.0], vec![2.0, 1.0], vec![2.0, 1.0], vec![3.0, 1.0]];
    assert_eq!(s.rows, want);
}

#[test]
fn short_words_and_empty_word() {
    let a = make_counting_wfa();
    let c = compile_exact(&a, 8).unwrap();
    for w in ["", "0", "010", "1100100"] {
        let w = chars(w);
        let got = simulate_word(&c.spec, &w).unwrap();
        assert_eq!(got, wfa_states(&a, &w).unwrap());
    }
}

#[test]
fn identity_symbols_keep_alpha() {
    let mut t = BTreeMap::new();
    t.insert("i".to_string(), Matrix::identity(3));
    let a = Wfa::new(vec!["i".into()], vec![0.2, -0.4, 0.9], t, vec![1.0; 3]).unwrap();
    let c = compile_exact(&a, 8).unwrap();
    let s = simulate_word(&c.spec, &["i"; 8]).unwrap();
    assert!(s.rows.iter().all(|r| r == &a.alpha));
}

#[test]
fn exact_on_random_automata() {
    let mut r = rng(11);
    for n in 1..=3 {
        for t in [2, 4, 8, 16] {
            let a = random_wfa(&mut r, n, 3);
            let c = compile_exact(&a, t).unwrap();
            assert_eq!(c.spec.layers.len(), t.trailing_zeros() as usize);
            assert_eq!(c.spec.d, 2 * n * n + 2);
            for _ in 0..50 {
                let w = random_word(&mut r, &a.alphabet, t);
                let got = simulate_word(&c.spec, &w).unwrap();
                let want = wfa_states(&a, &w).unwrap();
                let err = max_abs_rows(&got.rows, &want.rows);
                assert!(err <= 1e-9, "n={n} T={t}: {err}");
            }
        }
    }
}

/// Right blocks after layer ℓ equal the scan state after round ℓ, and every
/// word row's hard attention reads position t − 2^{ℓ−1}.
#[test]
fn layers_follow_the_scan() {
    let mut r = rng(12);
    for t in [4, 8, 16] {
        let a = random_wfa(&mut r, 2, 2);
        let c = compile_exact(&a, t).unwrap();
        let w = random_word(&mut r, &a.alphabet, t);
        let trace = transformer_trace(&c.spec, &w).unwrap();
        let mats: Vec<Matrix> = w.iter().map(|s| a.transitions[s].clone()).collect();
        let scan = prefix_scan_trace(&MatrixProduct { n: 2 }, &mats);
        assert_eq!(scan.rounds, trace.layers.len());
        let identity = vec(&Matrix::identity(2));
        let mut input = trace.embedded.clone();
        for (l, layer) in trace.layers.iter().enumerate() {
            let shift = 1usize << l;
            for pos in 1..=t {
                let row = pos + t - 1;
                let right = &layer.output.row(row)[4..8];
                let want = vec(&scan.levels[l][pos - 1]);
                let err = right.iter().zip(&want).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()));
                assert!(err < 1e-12, "T={t} layer {} pos {pos}", l + 1);
                let hit = layer.attention[0].row(row).iter().position(|p| *p == 1.0).unwrap();
                assert_eq!(hit, row - shift);
                if hit < t {
                    // buffer rows read by word rows still hold the identity
                    assert_eq!(&input.row(hit)[..4], identity.as_slice());
                    assert_eq!(&input.row(hit)[4..8], identity.as_slice());
                }
                assert_eq!(layer.attention[1].row(row).iter().position(|p| *p == 1.0), Some(row));
            }
            input = layer.output.clone();
        }
    }
}

#[test]
fn readout_matches_direct_formula() {
    let mut r = rng(13);
    let a = random_wfa(&mut r, 3, 2);
    let m = &a.transitions["a"];
    let mut row = vec![0.0; 20];
    row[9..18].copy_from_slice(&vec(m));
    let s = readout(&a.alpha, &Matrix::row_vector(&row)).unwrap();
    let want = unvec(&vec(m), 3).unwrap().left_mul(&a.alpha).unwrap();
    assert_eq!(s.rows[1], want);
}

#[test]
fn approx_counting_below_threshold() {
    let a = make_counting_wfa();
    let c = compile_approx(&a, 8, 1e3).unwrap();
    let words = random_words(&a.alphabet, 8, 100, 7);
    let err = max_simulation_error(&a, &c.spec, &words).unwrap();
    assert!(err < 1e-3, "{err}");
}

#[test]
fn approx_converges_to_exact() {
    let a = make_counting_wfa();
    let approx = compile_approx(&a, 8, 1e6).unwrap();
    let exact = compile_exact(&a, 8).unwrap();
    for w in random_words(&a.alphabet, 8, 20, 8) {
        let x = simulate_word(&approx.spec, &w).unwrap();
        let y = simulate_word(&exact.spec, &w).unwrap();
        assert!(max_abs_rows(&x.rows, &y.rows) < 1e-6);
    }
}

#[test]
fn calibrated_c_holds_on_fresh_words() {
    let a = make_counting_wfa();
    let cal = calibrate_saturation(&a, 8, 1e-3).unwrap();
    let comp = compile_approx(&a, 8, cal.c).unwrap();
    let fresh = random_words(&a.alphabet, 8, 100, 99);
    assert!(max_simulation_error(&a, &comp.spec, &fresh).unwrap() < 1e-3);
}

#[test]
fn error_shrinks_with_c_and_stays_under_bound() {
    let a = make_counting_wfa();
    let exact = compile_exact(&a, 8).unwrap();
    let words = random_words(&a.alphabet, 8, 20, 5);
    let mut last = f64::INFINITY;
    for c in [50.0, 100.0, 200.0, 400.0, 800.0, 1600.0] {
        let approx = compile_approx(&a, 8, c).unwrap();
        let err = max_simulation_error(&a, &approx.spec, &words).unwrap();
        assert!(err <= last, "C={c}: {err} > {last}");
        last = err;
        let m = measure_errors(&approx, &exact, &words).unwrap();
        let b = error_bound(norm_constant(&a), m.eps_attn, &m.eps_mlp, m.total.len());
        for (l, (got, bound)) in m.total.iter().zip(&b.eps_total).enumerate() {
            assert!(got <= bound, "C={c} layer {}: {got} > {bound}", l + 1);
        }
    }
}
