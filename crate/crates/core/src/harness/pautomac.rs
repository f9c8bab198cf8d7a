//! Reader for PAutomaC model files.
//!
//! ```text
//! I: (state)
//!   (0) 1
//! F: (state)
//!   (0) 0.5
//! S: (state,symbol)
//!   (0,0) 0.5
//! T: (state,symbol,state)
//!   (0,0,0) 1
//! ```
//!
//! `T` entries over `(state,symbol,state)` describe a PFA: from q the process
//! stops with probability F(q) or emits σ with S(q,σ) and moves to q' with
//! T(q,σ,q'). `T` entries over `(state,state)` describe an HMM whose `S`
//! section is the emission table; HMM files carry no `F` section.
//! Symbols and states are 0-based integers; symbol names are their decimal
//! strings.

use std::collections::BTreeMap;

use crate::automata::{Hmm, Pfa};
use crate::error::{Error, Result};
use crate::linalg::Matrix;

/// Tolerance for the stochasticity checks on parsed files.
pub const MODEL_TOL: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub enum PautomacModel {
    Hmm(Hmm),
    Pfa(Pfa),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Section {
    I,
    F,
    S,
    T,
}

type Entries = Vec<(usize, Vec<usize>, f64)>;

fn parse_entry(line: &str, lineno: usize) -> Result<(Vec<usize>, f64)> {
    let bad = |m: &str| Error::ModelFormat { line: lineno, message: m.to_string() };
    let rest = line.strip_prefix('(').ok_or_else(|| bad("expected `(`"))?;
    let (tuple, value) = rest.split_once(')').ok_or_else(|| bad("missing `)`"))?;
    let idx = tuple
        .split(',')
        .map(|p| p.trim().parse::<usize>().map_err(|_| bad(&format!("bad index `{}`", p.trim()))))
        .collect::<Result<Vec<_>>>()?;
    let value = value.trim();
    let v: f64 = value.parse().map_err(|_| bad(&format!("bad value `{value}`")))?;
    if !v.is_finite() {
        return Err(bad("value is not finite"));
    }
    Ok((idx, v))
}

pub fn parse_pautomac(text: &str) -> Result<PautomacModel> {
    let mut sections: BTreeMap<u8, (usize, Entries)> = BTreeMap::new();
    let mut current: Option<Section> = None;
    for (k, raw) in text.lines().enumerate() {
        let lineno = k + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some((head, _)) = line.split_once(':') {
            let sec = match head.trim() {
                "I" => Section::I,
                "F" => Section::F,
                "S" => Section::S,
                "T" => Section::T,
                other => {
                    return Err(Error::ModelFormat { line: lineno, message: format!("unknown section `{other}`") })
                }
            };
            if sections.contains_key(&(sec as u8)) {
                return Err(Error::ModelFormat { line: lineno, message: format!("duplicate section {sec:?}") });
            }
            sections.insert(sec as u8, (lineno, Vec::new()));
            current = Some(sec);
            continue;
        }
        let sec = current
            .ok_or_else(|| Error::ModelFormat { line: lineno, message: "entry before any section".into() })?;
        let (idx, v) = parse_entry(line, lineno)?;
        sections.get_mut(&(sec as u8)).expect("inserted on header").1.push((lineno, idx, v));
    }
    let take = |s: Section| sections.get(&(s as u8)).cloned();
    let (_, init) = take(Section::I).ok_or_else(|| Error::InvalidModel("missing I section".into()))?;
    let (_, emit) = take(Section::S).ok_or_else(|| Error::InvalidModel("missing S section".into()))?;
    let (t_line, trans) = take(Section::T).ok_or_else(|| Error::InvalidModel("missing T section".into()))?;
    let arity = trans.first().map(|e| e.1.len()).unwrap_or(3);
    let check_arity = |entries: &Entries, want: usize| {
        for (line, idx, _) in entries {
            if idx.len() != want {
                return Err(Error::ModelFormat {
                    line: *line,
                    message: format!("expected {want} indices, found {}", idx.len()),
                });
            }
        }
        Ok(())
    };
    check_arity(&init, 1)?;
    check_arity(&emit, 2)?;
    check_arity(&trans, arity)?;
    for (line, _, v) in init.iter().chain(&emit).chain(&trans) {
        if *v < 0.0 {
            return Err(Error::InvalidModel(format!("negative probability {v} on line {line}")));
        }
    }
    let final_sec = take(Section::F);
    if let Some((_, f)) = &final_sec {
        check_arity(f, 1)?;
        if let Some((line, _, v)) = f.iter().find(|e| e.2 < 0.0) {
            return Err(Error::InvalidModel(format!("negative probability {v} on line {line}")));
        }
    }

    let state_idx = init
        .iter()
        .map(|e| e.1[0])
        .chain(emit.iter().map(|e| e.1[0]))
        .chain(trans.iter().map(|e| e.1[0]))
        .chain(trans.iter().map(|e| *e.1.last().unwrap()))
        .chain(final_sec.iter().flat_map(|(_, f)| f.iter().map(|e| e.1[0])));
    let n = state_idx.max().map_or(0, |m| m + 1);
    let symbols = emit
        .iter()
        .map(|e| e.1[1])
        .chain(trans.iter().filter(|e| e.1.len() == 3).map(|e| e.1[1]))
        .max()
        .map_or(0, |m| m + 1);
    if n == 0 || symbols == 0 {
        return Err(Error::InvalidModel("model has no states or no symbols".into()));
    }
    let alphabet: Vec<String> = (0..symbols).map(|s| s.to_string()).collect();
    let mut initial = vec![0.0; n];
    for (_, idx, v) in &init {
        initial[idx[0]] += v;
    }

    match arity {
        2 => {
            if let Some((line, _)) = final_sec {
                return Err(Error::ModelFormat { line, message: "HMM files have no F section".into() });
            }
            let mut transition = Matrix::zeros(n, n);
            for (_, idx, v) in &trans {
                transition[(idx[0], idx[1])] += v;
            }
            let mut observation = Matrix::zeros(symbols, n);
            for (_, idx, v) in &emit {
                observation[(idx[1], idx[0])] += v;
            }
            let h = Hmm { n, alphabet, transition, observation, initial };
            h.validate_with(MODEL_TOL)?;
            Ok(PautomacModel::Hmm(h))
        }
        3 => {
            let mut s = vec![vec![0.0; symbols]; n];
            for (_, idx, v) in &emit {
                s[idx[0]][idx[1]] += v;
            }
            let mut t: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
            for (_, idx, v) in &trans {
                t.entry((idx[0], idx[1])).or_insert_with(|| vec![0.0; n])[idx[2]] += v;
            }
            for ((q, x), row) in &t {
                let sum: f64 = row.iter().sum();
                if s[*q][*x] > 0.0 && (sum - 1.0).abs() > MODEL_TOL {
                    return Err(Error::InvalidModel(format!(
                        "transitions from state {q} on symbol {x} sum to {sum}"
                    )));
                }
            }
            for q in 0..n {
                for x in 0..symbols {
                    if s[q][x] > 0.0 && !t.contains_key(&(q, x)) {
                        return Err(Error::InvalidModel(format!(
                            "state {q} emits symbol {x} but has no transition for it (T section at line {t_line})"
                        )));
                    }
                }
            }
            let mut final_weights = vec![0.0; n];
            if let Some((_, f)) = &final_sec {
                for (_, idx, v) in f {
                    final_weights[idx[0]] += v;
                }
            }
            let transitions = alphabet
                .iter()
                .enumerate()
                .map(|(x, sym)| {
                    let m = Matrix::from_fn(n, n, |q, r| {
                        t.get(&(q, x)).map_or(0.0, |row| s[q][x] * row[r])
                    });
                    (sym.clone(), m)
                })
                .collect();
            let p = Pfa { n, alphabet, initial, transitions, final_weights };
            p.validate_with(MODEL_TOL)?;
            Ok(PautomacModel::Pfa(p))
        }
        k => Err(Error::ModelFormat { line: t_line, message: format!("T entries must have 2 or 3 indices, found {k}") }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entry_syntax() {
        assert_eq!(parse_entry("(0,1) 0.25", 1).unwrap(), (vec![0, 1], 0.25));
        assert_eq!(parse_entry("( 3 ) 1e-3", 1).unwrap(), (vec![3], 1e-3));
        assert!(matches!(parse_entry("0,1 0.2", 7), Err(Error::ModelFormat { line: 7, .. })));
        assert!(matches!(parse_entry("(a) 0.2", 2), Err(Error::ModelFormat { line: 2, .. })));
        assert!(matches!(parse_entry("(0) x", 3), Err(Error::ModelFormat { line: 3, .. })));
    }
}
