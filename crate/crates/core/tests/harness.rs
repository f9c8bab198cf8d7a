mod common;

use std::collections::BTreeMap;

use automata2attn::automata::{hmm_to_wfa, make_counting_wfa, pfa_to_wfa, wfa_eval, wta_mu, BinaryTree};
use automata2attn::harness::{
    balanced_tree, comb_tree, gen_trees, gen_words, parse_pautomac, symbol_sparsity, verify_wfa, verify_wta,
    Dataset, PautomacModel, TreeFamily,
};
use automata2attn::linalg::Matrix;
use automata2attn::transformer::TransformerSpec;
use automata2attn::wfa_compiler::{calibrate_saturation, compile_approx, compile_exact};
use automata2attn::wta_compiler::compile_wta;
use automata2attn::Error;
use common::*;

fn sabotage(spec: &mut TransformerSpec, layer: usize) {
    let mut m: Matrix = spec.layers[layer].merge.matrix().clone();
    m[(0, 0)] += 1.0;
    spec.layers[layer].merge = m.into();
}

#[test]
fn exact_wfa_passes_with_clean_layers() {
    let a = random_wfa(&mut rng(1), 3, 2);
    let c = compile_exact(&a, 16).unwrap();
    let words = gen_words(&a.alphabet, 16, 100, 7).unwrap().words();
    let r = verify_wfa(&a, &c.spec, &words, 1e-9).unwrap();
    assert!(r.passed, "{r}");
    assert_eq!(r.count, 100);
    assert_eq!(r.layer_errors.len(), 4);
    assert!(r.layer_errors.iter().all(|e| *e < 1e-9));
    assert_eq!(r.first_bad_layer, None);
}

#[test]
fn exact_error_does_not_depend_on_content() {
    let a = random_wfa(&mut rng(2), 2, 3);
    let c = compile_exact(&a, 8).unwrap();
    let mut r = rng(3);
    let words: Vec<Vec<String>> = (0..40).map(|k| random_word(&mut r, &a.alphabet, k % 9)).collect();
    let rep = verify_wfa(&a, &c.spec, &words, 1e-9).unwrap();
    assert!(rep.inputs.iter().all(|i| i.error < 1e-9));
}

#[test]
fn approximate_wfa_passes_at_calibrated_c() {
    let a = make_counting_wfa();
    let cal = calibrate_saturation(&a, 8, 1e-3).unwrap();
    let c = compile_approx(&a, 8, cal.c).unwrap();
    let words = gen_words(&a.alphabet, 8, 100, 99).unwrap().words();
    let r = verify_wfa(&a, &c.spec, &words, 1e-3).unwrap();
    assert!(r.passed, "{r}");
}

#[test]
fn sabotaged_wfa_fails_at_the_faulty_layer() {
    let a = random_wfa(&mut rng(4), 2, 2);
    let mut c = compile_exact(&a, 8).unwrap();
    sabotage(&mut c.spec, 1);
    let words = gen_words(&a.alphabet, 8, 20, 5).unwrap().words();
    let r = verify_wfa(&a, &c.spec, &words, 1e-9).unwrap();
    assert!(!r.passed);
    assert_eq!(r.first_bad_layer, Some(2));
    assert!(r.layer_errors[0] < 1e-9);
    assert!(r.to_string().contains("first deviating layer 2"));
}

#[test]
fn wfa_budget() {
    let a = make_counting_wfa();
    let c = compile_exact(&a, 4).unwrap();
    let words = vec![vec!["0".to_string(); 5]];
    assert!(matches!(verify_wfa(&a, &c.spec, &words, 1e-9), Err(Error::BudgetExceeded { len: 5, budget: 4 })));
}

#[test]
fn wta_passes_with_depth_breakdown() {
    let a = random_wta(&mut rng(6), 2, 2, 1.0);
    let trees = gen_trees(&a.alphabet, 19, TreeFamily::Uniform, 30, 8).unwrap().trees().unwrap();
    let depth = trees.iter().map(BinaryTree::depth).max().unwrap();
    let c = compile_wta(&a, 19, depth).unwrap();
    let r = verify_wta(&a, &c.spec, &trees, 1e-6).unwrap();
    assert!(r.passed, "{r}");
    assert_eq!(r.layer_errors.len(), 2 + depth);
    assert!(r.depth_errors.contains_key(&0));
    assert!(r.depth_errors.contains_key(&depth));
}

#[test]
fn sabotaged_wta_fails_at_the_faulty_layer() {
    let a = random_wta(&mut rng(7), 2, 2, 1.0);
    let trees = gen_trees(&a.alphabet, 16, TreeFamily::Balanced, 10, 9).unwrap().trees().unwrap();
    let mut c = compile_wta(&a, 16, 3).unwrap();
    sabotage(&mut c.spec, 3);
    let r = verify_wta(&a, &c.spec, &trees, 1e-6).unwrap();
    assert!(!r.passed);
    assert_eq!(r.first_bad_layer, Some(4));
}

#[test]
fn single_leaf_trees_pass() {
    let a = random_wta(&mut rng(8), 3, 2, 1.0);
    let c = compile_wta(&a, 4, 1).unwrap();
    let trees = vec![BinaryTree::leaf("a"), BinaryTree::leaf("b")];
    let r = verify_wta(&a, &c.spec, &trees, 1e-9).unwrap();
    assert!(r.passed);
    assert_eq!(r.depth_errors.keys().copied().collect::<Vec<_>>(), vec![0]);
}

#[test]
fn wta_budgets() {
    let a = random_wta(&mut rng(9), 2, 2, 1.0);
    let c = compile_wta(&a, 10, 2).unwrap();
    let deep = comb(&["a", "b", "a", "b"]);
    assert!(matches!(verify_wta(&a, &c.spec, &[deep], 1e-6), Err(Error::DepthExceeded { depth: 3, budget: 2 })));
    assert!(verify_wta(&a, &c.spec, &[balanced(2, "a")], 1e-6).unwrap().passed);
    let longer = comb(&["a", "b", "a", "b", "a"]);
    assert!(matches!(verify_wta(&a, &c.spec, &[longer], 1e-6), Err(Error::BudgetExceeded { len: 13, budget: 10 })));
}

#[test]
fn reports_are_reproducible() {
    let a = random_wfa(&mut rng(10), 2, 2);
    let c = compile_exact(&a, 8).unwrap();
    let run = || {
        let words = gen_words(&a.alphabet, 8, 25, 42).unwrap().words();
        verify_wfa(&a, &c.spec, &words, 1e-9).unwrap().without_timing()
    };
    let (x, y) = (run(), run());
    assert_eq!(serde_json::to_string(&x).unwrap(), serde_json::to_string(&y).unwrap());
}

#[test]
fn tree_shapes() {
    let s = |v: &[&str]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    assert_eq!(comb_tree(&s(&["a", "b", "c"])).to_string(), "(a(bc))");
    let b = balanced_tree(&s(&["a", "a", "a", "a"]));
    assert_eq!(b.to_string(), "((aa)(aa))");
    assert_eq!(b.depth(), 2);
    let d = gen_trees(&s(&["a"]), 10, TreeFamily::Balanced, 1, 0).unwrap();
    assert_eq!(d.trees().unwrap()[0].to_string(), "((aa)(aa))");
}

#[test]
fn datasets_follow_the_seed() {
    let al = chars("ab");
    assert_eq!(gen_words(&al, 12, 10, 3).unwrap(), gen_words(&al, 12, 10, 3).unwrap());
    assert_ne!(gen_words(&al, 12, 10, 3).unwrap(), gen_words(&al, 12, 10, 4).unwrap());
    let t1 = gen_trees(&al, 31, TreeFamily::Uniform, 10, 3).unwrap();
    assert_eq!(t1, gen_trees(&al, 31, TreeFamily::Uniform, 10, 3).unwrap());
    for t in t1.trees().unwrap() {
        assert_eq!(t.leaves(), 11);
    }
}

#[test]
fn uniform_shapes_are_uniform() {
    let d = gen_trees(&chars("a"), 10, TreeFamily::Uniform, 5000, 11).unwrap();
    let mut counts: BTreeMap<String, usize> = BTreeMap::new();
    for t in d.trees().unwrap() {
        *counts.entry(t.to_string()).or_default() += 1;
    }
    assert_eq!(counts.len(), 5);
    // chi-square with 4 degrees of freedom; 18.47 is the 0.999 quantile
    let chi: f64 = counts.values().map(|&c| (c as f64 - 1000.0).powi(2) / 1000.0).sum();
    assert!(chi < 18.47, "{counts:?}");
}

#[test]
fn jsonl_round_trip_with_targets() {
    let a = make_counting_wfa();
    let d = gen_words(&a.alphabet, 6, 5, 1).unwrap().with_wfa_targets(&a).unwrap();
    let text = d.to_jsonl().unwrap();
    assert_eq!(text.lines().count(), 5);
    assert!(text.lines().all(|l| l.contains("\"seed\":1")));
    let back = Dataset::from_jsonl(text.as_bytes()).unwrap();
    assert_eq!(back, d);
    let w = &d.records[0];
    let states = w.states.as_ref().unwrap();
    assert_eq!(states.len(), 7);

    let wta = random_wta(&mut rng(12), 2, 2, 1.0);
    let trees = gen_trees(&wta.alphabet, 7, TreeFamily::Comb, 3, 2).unwrap().with_wta_targets(&wta).unwrap();
    let back = Dataset::from_jsonl(trees.to_jsonl().unwrap().as_bytes()).unwrap();
    assert_eq!(back, trees);
    let rec = &trees.records[0];
    let t = rec.input.tree().unwrap().unwrap();
    let root = &rec.subtrees.as_ref().unwrap()[0];
    assert_eq!(root.0, 1);
    assert_eq!(root.1, wta_mu(&wta, &t).unwrap());
}

#[test]
fn sparsity_statistic() {
    let a = make_counting_wfa();
    // each symbol matrix of the counting automaton is upper triangular 2x2 with
    // no zero row
    assert_eq!(symbol_sparsity(&a), 1.0);
    let mut b = a.clone();
    b.transitions.insert("1".into(), Matrix::from_rows(vec![vec![0.0, 0.0], vec![0.0, 1.0]]).unwrap());
    assert_eq!(symbol_sparsity(&b), 0.75);
    let s = gen_words(&a.alphabet, 4, 3, 0).unwrap().summary(Some(symbol_sparsity(&b)));
    assert_eq!(s.mean_length, 4.0);
    assert_eq!(s.symbol_sparsity, Some(0.75));
}

const HMM_ONE: &str = "I: (state)\n  (0) 1\nS: (state,symbol)\n  (0,0) 0.25\n  (0,1) 0.75\nT: (state,state)\n  (0,0) 1\n";

const PFA_TWO: &str = "\
I: (state)
  (0) 0.6
  (1) 0.4
F: (state)
  (0) 0.3
  (1) 0.5
S: (state,symbol)
  (0,0) 0.4
  (0,1) 0.3
  (1,0) 0.5
T: (state,symbol,state)
  (0,0,0) 0.5
  (0,0,1) 0.5
  (0,1,1) 1
  (1,0,0) 0.2
  (1,0,1) 0.8
";

fn all_words(alphabet: &[String], max: usize) -> Vec<Vec<String>> {
    let mut out = vec![vec![]];
    let mut frontier = vec![vec![]];
    for _ in 0..max {
        let mut next = Vec::new();
        for w in &frontier {
            for s in alphabet {
                let mut v: Vec<String> = w.clone();
                v.push(s.clone());
                next.push(v);
            }
        }
        out.extend(next.iter().cloned());
        frontier = next;
    }
    out
}

#[test]
fn pautomac_hmm() {
    let PautomacModel::Hmm(h) = parse_pautomac(HMM_ONE).unwrap() else { panic!("expected an HMM") };
    assert_eq!(h.n, 1);
    assert_eq!(h.alphabet, vec!["0", "1"]);
    let w = hmm_to_wfa(&h).unwrap();
    assert!((wfa_eval(&w, &["1", "0"]).unwrap() - 0.1875).abs() < 1e-15);
    // an HMM distributes mass per length
    for len in 0..=3 {
        let s: f64 = all_words(&h.alphabet, len).iter().filter(|x| x.len() == len).map(|x| wfa_eval(&w, x).unwrap()).sum();
        assert!((s - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn pautomac_pfa() {
    let PautomacModel::Pfa(p) = parse_pautomac(PFA_TWO).unwrap() else { panic!("expected a PFA") };
    let w = pfa_to_wfa(&p).unwrap();
    let empty: [&str; 0] = [];
    assert!((wfa_eval(&w, &empty).unwrap() - 0.38).abs() < 1e-12);
    // P("1") = 0.6·0.3·1·F(1) = 0.09
    assert!((wfa_eval(&w, &["1"]).unwrap() - 0.09).abs() < 1e-12);
    let total: f64 = all_words(&p.alphabet, 3).iter().map(|x| wfa_eval(&w, x).unwrap()).sum();
    assert!(total <= 1.0 + 1e-6, "{total}");
    assert!(total > 0.38);
}

#[test]
fn pautomac_errors() {
    let neg = HMM_ONE.replace("(0,0) 0.25", "(0,0) -0.25");
    assert!(matches!(parse_pautomac(&neg), Err(Error::InvalidModel(_))));
    let garbled = HMM_ONE.replace("(0,1) 0.75", "(0,1 0.75");
    assert!(matches!(parse_pautomac(&garbled), Err(Error::ModelFormat { line: 5, .. })));
    let off = HMM_ONE.replace("(0,1) 0.75", "(0,1) 0.7");
    assert!(matches!(parse_pautomac(&off), Err(Error::InvalidModel(_))));
    let near = HMM_ONE.replace("(0,1) 0.75", "(0,1) 0.7500001");
    assert!(parse_pautomac(&near).is_ok());
    let bad_t = PFA_TWO.replace("(0,0,1) 0.5", "(0,0,1) 0.6");
    assert!(matches!(parse_pautomac(&bad_t), Err(Error::InvalidModel(_))));
    assert!(matches!(parse_pautomac("X: (state)\n"), Err(Error::ModelFormat { line: 1, .. })));
}
