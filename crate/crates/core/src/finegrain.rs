//! Equal-amplitude fine-graining with ancillas.
//!
//! A coarse state with rational weights `m_k / M` is expanded into `M`
//! branches of amplitude `√(1/M)` by attaching to outcome `k` an ancilla with
//! `m_k` symbols. Ancilla `k` is written with `k` primes (`1'`, `2'`, `1''`, ...)
//! so a branch's ancilla size can be read back from the basis labels alone.

use num_complex::Complex64;
use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{CheckedAdd, One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{Factor, StateVector};

pub const SYSTEM: &str = "system";
pub const ANCILLA: &str = "ancilla";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FineGrainPlan {
    /// Coarse weights, serialized as `[numerator, denominator]` pairs.
    pub weights: Vec<Rational64>,
    /// Common denominator `M`.
    pub m_total: i64,
    /// Per-outcome numerators `m_k`, also the ancilla sizes.
    pub m: Vec<i64>,
}

impl FineGrainPlan {
    pub fn new(weights: &[Rational64]) -> Result<Self> {
        if weights.is_empty() {
            return Err(invalid("no weights"));
        }
        if let Some(w) = weights.iter().find(|w| **w < Rational64::zero()) {
            return Err(invalid(format!("negative weight {w}")));
        }
        let sum = weights
            .iter()
            .try_fold(Rational64::zero(), |acc, w| acc.checked_add(w))
            .ok_or_else(|| invalid("weight sum overflows i64"))?;
        if sum != Rational64::one() {
            return Err(invalid(format!("weights sum to {sum}, not 1")));
        }
        let m_total = weights.iter().fold(1i64, |l, w| l.lcm(w.denom()));
        let m = weights.iter().map(|w| w.numer() * (m_total / w.denom())).collect();
        Ok(FineGrainPlan { weights: weights.to_vec(), m_total, m })
    }

    pub fn outcomes(&self) -> usize {
        self.weights.len()
    }
}

/// Parse `"3/5"` or `"1"`.
pub fn parse_rational(s: &str) -> Result<Rational64> {
    let s = s.trim();
    let bad = || invalid(format!("not a rational number: `{s}`"));
    match s.split_once('/') {
        Some((n, d)) => {
            let n: i64 = n.trim().parse().map_err(|_| bad())?;
            let d: i64 = d.trim().parse().map_err(|_| bad())?;
            if d == 0 {
                return Err(bad());
            }
            Ok(Rational64::new(n, d))
        }
        None => Ok(Rational64::from_integer(s.parse().map_err(|_| bad())?)),
    }
}

fn primes(k: usize) -> String {
    "'".repeat(k)
}

fn ancilla_symbol(j: usize, outcome: usize) -> String {
    format!("{}{}", j + 1, primes(outcome + 1))
}

/// Ancilla alphabet with `sizes[k]` symbols for outcome `k`.
fn ancilla_factor(sizes: &[i64]) -> Factor {
    let alphabet: Vec<String> = sizes
        .iter()
        .enumerate()
        .flat_map(|(k, &s)| (0..s as usize).map(move |j| ancilla_symbol(j, k)))
        .collect();
    Factor::new(ANCILLA, alphabet)
}

fn system_factor(n: usize) -> Factor {
    Factor::new(SYSTEM, (1..=n).map(|k| k.to_string()))
}

fn build(plan: &FineGrainPlan, sizes: &[i64]) -> Result<StateVector> {
    let n = plan.outcomes();
    let anc_dim: usize = sizes.iter().map(|&s| s as usize).sum();
    let amp = Complex64::new((1.0 / plan.m_total as f64).sqrt(), 0.0);
    let mut amps = vec![Complex64::new(0.0, 0.0); n * anc_dim];
    let mut offset = 0usize;
    for (k, (&mk, &size)) in plan.m.iter().zip(sizes).enumerate() {
        for j in 0..mk as usize {
            amps[k * anc_dim + offset + j] = amp;
        }
        offset += size as usize;
    }
    StateVector::new(vec![system_factor(n), ancilla_factor(sizes)], amps)
}

/// `Σ_k Σ_{j<m_k} √(1/M) |k⟩|j⟩_k`.
pub fn fine_grain(weights: &[Rational64]) -> Result<StateVector> {
    let plan = FineGrainPlan::new(weights)?;
    build(&plan, &plan.m)
}

/// Outcome probabilities by counting equal-weight branches: exactly `m_k / M`.
pub fn branch_count_probability(plan: &FineGrainPlan) -> Vec<Rational64> {
    plan.m.iter().map(|&mk| Rational64::new(mk, plan.m_total)).collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize)]
pub struct FineBranch {
    /// 0-based coarse outcome.
    pub outcome: usize,
    pub ancilla_symbol: String,
    /// Alphabet size of the ancilla attached to this outcome.
    pub ancilla_size: usize,
}

/// Populated branches of a fine-grained state, in basis order.
pub fn branches(state: &StateVector) -> Result<Vec<FineBranch>> {
    let sys_pos = state.factor_position(SYSTEM)?;
    let anc_pos = state.factor_position(ANCILLA)?;
    let anc = &state.factors()[anc_pos];
    let size_of = |prime_count: usize| {
        anc.alphabet
            .iter()
            .filter(|s| s.len() - s.trim_end_matches('\'').len() == prime_count)
            .count()
    };
    let mut out = Vec::new();
    for (i, z) in state.amps().iter().enumerate() {
        if *z == Complex64::new(0.0, 0.0) {
            continue;
        }
        let t = state.basis_tuple(i);
        let outcome = t.indices()[sys_pos];
        let sym = &anc.alphabet[t.indices()[anc_pos]];
        let level = sym.len() - sym.trim_end_matches('\'').len();
        if level != outcome + 1 {
            return Err(Error::InvalidState(format!(
                "ancilla symbol {sym} is attached to outcome {}",
                outcome + 1
            )));
        }
        out.push(FineBranch { outcome, ancilla_symbol: sym.clone(), ancilla_size: size_of(level) });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum SwapVerdict {
    Admissible,
    Dissimilar,
}

/// Branches `i` and `j` (0-based, among populated branches) may be exchanged
/// only if their ancillas have the same alphabet size.
pub fn swap_admissibility(state: &StateVector, i: usize, j: usize) -> Result<SwapVerdict> {
    let b = branches(state)?;
    let get = |k: usize| {
        b.get(k)
            .ok_or_else(|| invalid(format!("branch index {k} out of range ({} branches)", b.len())))
    };
    let (bi, bj) = (get(i)?, get(j)?);
    Ok(if bi.ancilla_size == bj.ancilla_size { SwapVerdict::Admissible } else { SwapVerdict::Dissimilar })
}

/// Two-outcome fine-graining with both ancillas padded to the larger size;
/// the extra slots carry amplitude zero.
pub fn uniformize_workaround(weights: &[Rational64]) -> Result<StateVector> {
    if weights.len() != 2 {
        return Err(invalid("padding is defined for two outcomes"));
    }
    let plan = FineGrainPlan::new(weights)?;
    let size = *plan.m.iter().max().expect("two outcomes");
    build(&plan, &[size, size])
}

/// Recover the plan-level probabilities from a fine-grained state by counting
/// populated branches per outcome.
pub fn coarse_probabilities(state: &StateVector) -> Result<Vec<Rational64>> {
    let b = branches(state)?;
    let n = state.factor(SYSTEM).ok_or_else(|| Error::UnknownFactor(SYSTEM.into()))?.dim();
    let total = b.len() as i64;
    if total == 0 {
        return Err(Error::InvalidState("no populated branches".into()));
    }
    let mut counts = vec![0i64; n];
    for br in &b {
        counts[br.outcome] += 1;
    }
    Ok(counts.into_iter().map(|c| Rational64::new(c, total)).collect())
}

#[derive(Clone, Debug, Serialize)]
pub struct FineGrainReport {
    pub plan: FineGrainPlan,
    pub branches: Vec<FineBranch>,
    /// Squared amplitude of every populated branch, `1/M`.
    pub branch_weight: Rational64,
    pub probabilities: Vec<Rational64>,
    pub state: crate::tensor::StateDocument,
}

pub fn report(weights: &[Rational64]) -> Result<FineGrainReport> {
    let plan = FineGrainPlan::new(weights)?;
    let state = build(&plan, &plan.m)?;
    Ok(FineGrainReport {
        branches: branches(&state)?,
        branch_weight: Rational64::new(1, plan.m_total),
        probabilities: branch_count_probability(&plan),
        state: state.to_document(),
        plan,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn r(n: i64, d: i64) -> Rational64 {
        Rational64::new(n, d)
    }

    #[test]
    fn three_fifths_two_fifths() {
        let w = [r(3, 5), r(2, 5)];
        let psi = fine_grain(&w).unwrap();
        let b = branches(&psi).unwrap();
        assert_eq!(b.len(), 5);
        let labels: Vec<_> = b.iter().map(|x| (x.outcome + 1, x.ancilla_symbol.as_str())).collect();
        assert_eq!(labels, vec![(1, "1'"), (1, "2'"), (1, "3'"), (2, "1''"), (2, "2''")]);
        let plan = FineGrainPlan::new(&w).unwrap();
        assert_eq!(plan.m_total, 5);
        assert_eq!(plan.m, vec![3, 2]);
        assert_eq!(branch_count_probability(&plan), w.to_vec());
        assert!((psi.norm_sqr() - 1.0).abs() < 1e-15);
        assert_eq!(swap_admissibility(&psi, 2, 3).unwrap(), SwapVerdict::Dissimilar);
        assert_eq!(swap_admissibility(&psi, 0, 1).unwrap(), SwapVerdict::Admissible);
        assert_eq!(swap_admissibility(&psi, 4, 4).unwrap(), SwapVerdict::Admissible);
        assert!(swap_admissibility(&psi, 0, 5).is_err());
    }

    #[test]
    fn small_cases() {
        assert_eq!(branches(&fine_grain(&[r(1, 2), r(1, 2)]).unwrap()).unwrap().len(), 2);
        let third = fine_grain(&[r(1, 3), r(2, 3)]).unwrap();
        assert_eq!(branches(&third).unwrap().len(), 3);
        assert!(third.amps().iter().filter(|z| z.re != 0.0).all(|z| z.re == (1.0f64 / 3.0).sqrt()));
    }

    #[test]
    fn certain_outcome() {
        let plan = FineGrainPlan::new(&[r(1, 1), r(0, 1)]).unwrap();
        assert_eq!(branch_count_probability(&plan), vec![r(1, 1), r(0, 1)]);
        let psi = fine_grain(&plan.weights).unwrap();
        assert_eq!(coarse_probabilities(&psi).unwrap(), vec![r(1, 1), r(0, 1)]);
    }

    #[test]
    fn rejects_bad_weights() {
        assert!(FineGrainPlan::new(&[r(1, 2), r(1, 3)]).is_err());
        assert!(FineGrainPlan::new(&[r(3, 2), r(-1, 2)]).is_err());
        assert!(FineGrainPlan::new(&[]).is_err());
        assert!(parse_rational("0.6").is_err());
        assert!(parse_rational("1/0").is_err());
        assert_eq!(parse_rational(" 3/5 ").unwrap(), r(3, 5));
    }

    #[test]
    fn padding_keeps_probabilities() {
        let w = [r(3, 5), r(2, 5)];
        let padded = uniformize_workaround(&w).unwrap();
        assert_eq!(padded.factor(ANCILLA).unwrap().dim(), 6);
        let b = branches(&padded).unwrap();
        assert_eq!(b.len(), 5);
        assert_eq!(padded.amps().iter().filter(|z| z.re == 0.0).count(), padded.dim() - 5);
        for i in 0..5 {
            for j in 0..5 {
                assert_eq!(swap_admissibility(&padded, i, j).unwrap(), SwapVerdict::Admissible);
            }
        }
        assert_eq!(coarse_probabilities(&padded).unwrap(), w.to_vec());
        let half = uniformize_workaround(&[r(1, 2), r(1, 2)]).unwrap();
        assert_eq!(half.factor(ANCILLA).unwrap().dim(), 2);
    }

    #[test]
    fn rationals_serialize_as_pairs() {
        let plan = FineGrainPlan::new(&[r(3, 5), r(2, 5)]).unwrap();
        let v = serde_json::to_value(&plan).unwrap();
        assert_eq!(v["weights"], serde_json::json!([[3, 5], [2, 5]]));
        let back: FineGrainPlan = serde_json::from_value(v).unwrap();
        assert_eq!(back, plan);
    }
}
