//! Repeated two-outcome experiments: branch classes, exact counting, and the
//! macro distribution induced by a per-branch micro-law.
//!
//! For `N` runs with `p = |a(1)|²`, the class of branches with `n` outcome-1
//! results has `C(N, n)` members, each of squared amplitude
//! `p^n (1−p)^(N−n)`. Everything here is computed in log space by default;
//! `N = 10 000` is far outside the range of `f64`.

use num_bigint::{BigInt, BigUint};
use num_rational::BigRational;
use num_traits::{One, ToPrimitive, Zero};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Serialize, Serializer};
use statrs::function::factorial::ln_binomial;

use crate::born::{log_sum_exp, LawKind, ProbabilityLaw};
use crate::error::{invalid, Error, Result};
use crate::runner::derive_seed;

pub const MAX_EXACT_N: u64 = 20_000;
pub const MAX_VERSIONS_N: u64 = 100_000;

/// How non-Born macro weights are normalized; recorded in every report.
pub const NORMALIZATION_CONVENTION: &str =
    "weight(n) = C(N,n) * law(p^n (1-p)^(N-n)), normalized by its total over n = 0..N";

fn serialize_decimal<S: Serializer>(v: &BigUint, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.serialize_str(&v.to_string())
}

/// `C(N, n)` as an exact integer.
pub fn exact_binomial(big_n: u64, n: u64) -> BigUint {
    if n > big_n {
        return BigUint::zero();
    }
    let k = n.min(big_n - n);
    let mut acc = BigUint::one();
    for i in 0..k {
        acc *= big_n - i;
        acc /= i + 1;
    }
    acc
}

/// `log10` of a positive big integer, from its leading 64 bits.
pub fn big_log10(x: &BigUint) -> f64 {
    if x.is_zero() {
        return f64::NEG_INFINITY;
    }
    let bits = x.bits();
    let shift = bits.saturating_sub(64);
    let lead = (x >> shift).to_f64().expect("64-bit value fits in f64");
    lead.log10() + shift as f64 * std::f64::consts::LOG10_2
}

fn check_p(p: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&p) || p.is_nan() {
        return Err(invalid(format!("p must lie in [0, 1], got {p}")));
    }
    Ok(())
}

/// `ln x_n` for a single branch with `n` outcome-1 results, `x_n = p^n (1−p)^(N−n)`.
fn ln_branch_amp2(big_n: u64, n: u64, p: f64) -> f64 {
    let term = |count: u64, prob: f64| if count == 0 { 0.0 } else { count as f64 * prob.ln() };
    term(n, p) + term(big_n - n, 1.0 - p)
}

/// `ln |A(n)|² = ln C(N,n) + n ln p + (N−n) ln(1−p)`. At `p ∈ {0, 1}` only the
/// matching extreme class carries weight; the others return `−∞`.
pub fn branch_class_amplitude(big_n: u64, n: u64, p: f64) -> Result<f64> {
    if n > big_n {
        return Err(invalid(format!("n = {n} exceeds N = {big_n}")));
    }
    check_p(p)?;
    Ok(ln_binomial(big_n, n) + ln_branch_amp2(big_n, n, p))
}

/// `|A(n)|²` as an exact rational for rational `p`.
pub fn branch_class_weight_exact(big_n: u64, n: u64, p: &BigRational) -> Result<BigRational> {
    if big_n > MAX_EXACT_N {
        return Err(invalid(format!("exact path supports N ≤ {MAX_EXACT_N}")));
    }
    if n > big_n {
        return Err(invalid(format!("n = {n} exceeds N = {big_n}")));
    }
    if p < &BigRational::zero() || p > &BigRational::one() {
        return Err(invalid("p must lie in [0, 1]"));
    }
    let q = BigRational::one() - p;
    let count = BigRational::from_integer(BigInt::from(exact_binomial(big_n, n)));
    Ok(count * num_traits::pow(p.clone(), n as usize) * num_traits::pow(q, (big_n - n) as usize))
}

/// One class of branches: all sequences with `n` outcome-1 results out of `N`.
#[derive(Clone, Debug, Serialize)]
pub struct BranchClass {
    pub big_n: u64,
    pub n: u64,
    #[serde(serialize_with = "serialize_decimal")]
    pub count: BigUint,
    pub log10_count: f64,
    /// Natural log of `|A(n)|²`.
    pub ln_amp2: f64,
}

pub fn branch_class(big_n: u64, n: u64, p: f64) -> Result<BranchClass> {
    let ln_amp2 = branch_class_amplitude(big_n, n, p)?;
    let count = exact_binomial(big_n, n);
    Ok(BranchClass { big_n, n, log10_count: big_log10(&count), count, ln_amp2 })
}

#[derive(Clone, Debug, Serialize)]
pub struct BranchCountRatio {
    pub big_n: u64,
    pub n1: u64,
    pub n2: u64,
    pub log10_count_n1: f64,
    pub log10_count_n2: f64,
    /// `log10[C(N,n1) / C(N,n2)]`.
    pub log10_ratio: f64,
}

/// Exact big-integer comparison of two branch-class sizes.
pub fn branch_count_ratio(big_n: u64, n1: u64, n2: u64) -> Result<BranchCountRatio> {
    if n1 > big_n || n2 > big_n {
        return Err(invalid(format!("indices ({n1}, {n2}) must not exceed N = {big_n}")));
    }
    let c1 = exact_binomial(big_n, n1);
    let c2 = exact_binomial(big_n, n2);
    let (l1, l2) = (big_log10(&c1), big_log10(&c2));
    let log10_ratio = if c1 == c2 { 0.0 } else { l1 - l2 };
    Ok(BranchCountRatio { big_n, n1, n2, log10_count_n1: l1, log10_count_n2: l2, log10_ratio })
}

/// An exact figure set against a quoted order of magnitude.
#[derive(Clone, Debug, Serialize)]
pub struct QuotedComparison {
    pub exact_log10: f64,
    pub quoted_log10: f64,
    /// `|exact − quoted| / quoted`.
    pub relative_exponent_error: f64,
    pub tolerance: f64,
    pub agrees: bool,
}

pub fn compare_with_quoted(exact_log10: f64, quoted_log10: f64, tolerance: f64) -> QuotedComparison {
    let relative_exponent_error = ((exact_log10 - quoted_log10) / quoted_log10).abs();
    QuotedComparison {
        exact_log10,
        quoted_log10,
        relative_exponent_error,
        tolerance,
        agrees: relative_exponent_error <= tolerance,
    }
}

/// `2^N`, the number of distinct outcome sequences.
pub fn versions_count(big_n: u64) -> Result<BigUint> {
    if big_n > MAX_VERSIONS_N {
        return Err(invalid(format!("N must not exceed {MAX_VERSIONS_N}")));
    }
    Ok(BigUint::one() << big_n)
}

/// Distribution over run-count `n` induced by a micro-law.
#[derive(Clone, Debug, Serialize)]
pub struct MacroDistribution {
    pub big_n: u64,
    pub p: f64,
    pub law: String,
    pub convention: &'static str,
    /// `ln` of the total unnormalized weight.
    pub ln_normalization: f64,
    /// Normalized `ln weight(n)`.
    pub ln_weights: Vec<f64>,
    pub weights: Vec<f64>,
}

impl MacroDistribution {
    pub fn mode(&self) -> u64 {
        self.ln_weights
            .iter()
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |best, (i, &w)| if w > best.1 { (i, w) } else { best })
            .0 as u64
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().enumerate().map(|(n, w)| n as f64 * w).sum()
    }

    pub fn std_dev(&self) -> f64 {
        let m = self.mean();
        self.weights
            .iter()
            .enumerate()
            .map(|(n, w)| w * (n as f64 - m).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }
}

/// `weight(n) ∝ C(N,n) · law(p^n (1−p)^(N−n))`, normalized over `n`.
pub fn induced_macro_distribution(law: &ProbabilityLaw, big_n: u64, p: f64) -> Result<MacroDistribution> {
    check_p(p)?;
    let unnormalized: Vec<f64> = (0..=big_n)
        .into_par_iter()
        .map(|n| {
            let ln_x = ln_branch_amp2(big_n, n, p);
            let ln_count = ln_binomial(big_n, n);
            if ln_x == f64::NEG_INFINITY {
                // branch never occurs; a law with a positive offset still weights it
                let w = law.eval(0, 0.0);
                return if w > 0.0 { ln_count + w.ln() } else { f64::NEG_INFINITY };
            }
            ln_count + law.ln_eval(0, ln_x)
        })
        .collect();
    if unnormalized.iter().any(|w| w.is_nan()) {
        return Err(invalid(format!("law {} produced a negative or undefined weight", law.id())));
    }
    let ln_normalization = log_sum_exp(&unnormalized);
    if !ln_normalization.is_finite() {
        return Err(Error::Degenerate(format!("law {} gives zero total weight", law.id())));
    }
    let ln_weights: Vec<f64> = unnormalized.iter().map(|w| w - ln_normalization).collect();
    let weights = ln_weights.iter().map(|w| w.exp()).collect();
    Ok(MacroDistribution {
        big_n,
        p,
        law: law.id(),
        convention: NORMALIZATION_CONVENTION,
        ln_normalization,
        ln_weights,
        weights,
    })
}

pub fn mode_and_width(d: &MacroDistribution) -> (u64, f64) {
    (d.mode(), d.std_dev())
}

/// Mass carried by the quadratic term of `α x + β x²` summed over all `2^N` branches.
#[derive(Clone, Debug, Serialize)]
pub struct QuadraticMass {
    /// `ln[β Σ_n C(N,n) x_n²]`.
    pub ln_mass: f64,
    /// `ln[β (p² + (1−p)²)^N]`.
    pub ln_bound: f64,
    /// Quadratic share of the total (unnormalized) weight.
    pub fraction: f64,
}

pub fn quadratic_term_mass(alpha: f64, beta: f64, big_n: u64, p: f64) -> Result<QuadraticMass> {
    check_p(p)?;
    if alpha <= 0.0 || beta <= 0.0 {
        return Err(invalid("quadratic mass needs positive α and β"));
    }
    let terms: Vec<f64> = (0..=big_n)
        .map(|n| ln_binomial(big_n, n) + 2.0 * ln_branch_amp2(big_n, n, p))
        .collect();
    let ln_mass = beta.ln() + log_sum_exp(&terms);
    let ln_bound = beta.ln() + big_n as f64 * (p * p + (1.0 - p) * (1.0 - p)).ln();
    // linear part sums to α exactly
    let ln_linear = alpha.ln();
    let fraction = 1.0 / (1.0 + (ln_linear - ln_mass).exp());
    Ok(QuadraticMass { ln_mass, ln_bound, fraction })
}

#[derive(Clone, Debug, Serialize)]
pub struct RunByRunReport {
    pub law: String,
    pub big_n: u64,
    pub p: f64,
    pub runs: u64,
    pub seed: u64,
    /// `law(p) / (law(p) + law(1−p))`.
    pub per_run_probability: f64,
    pub outcome1_count: u64,
    pub per_run_frequency: Option<f64>,
    /// Binomial standard error of the frequency at `per_run_probability`.
    pub sigma: Option<f64>,
    pub macro_mode: u64,
    pub macro_mode_fraction: f64,
    /// Per-run probability and macro mode fraction differ by more than 3σ.
    pub scales_disagree: bool,
}

/// Contrast the per-run perception frequency under a micro-law with the mode
/// of the end-of-`N` distribution that law induces.
pub fn run_by_run_experiment(law: &ProbabilityLaw, big_n: u64, p: f64, runs: u64, seed: u64) -> Result<RunByRunReport> {
    check_p(p)?;
    let w1 = law.eval(0, p);
    let w2 = law.eval(1, 1.0 - p);
    if !(w1 >= 0.0 && w2 >= 0.0) || w1 + w2 <= 0.0 {
        return Err(Error::Degenerate(format!("law {} gives zero or negative per-run weight", law.id())));
    }
    let q = w1 / (w1 + w2);
    let outcome1_count = (0..runs)
        .into_par_iter()
        .filter(|&i| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, i));
            rng.random::<f64>() < q
        })
        .count() as u64;
    let macro_dist = induced_macro_distribution(law, big_n, p)?;
    let macro_mode = macro_dist.mode();
    let macro_mode_fraction = if big_n == 0 { 0.0 } else { macro_mode as f64 / big_n as f64 };
    let (per_run_frequency, sigma) = if runs == 0 {
        (None, None)
    } else {
        (Some(outcome1_count as f64 / runs as f64), Some((q * (1.0 - q) / runs as f64).sqrt()))
    };
    let scales_disagree = sigma.map(|s| (q - macro_mode_fraction).abs() > 3.0 * s).unwrap_or(false);
    Ok(RunByRunReport {
        law: law.id(),
        big_n,
        p,
        runs,
        seed,
        per_run_probability: q,
        outcome1_count,
        per_run_frequency,
        sigma,
        macro_mode,
        macro_mode_fraction,
        scales_disagree,
    })
}

/// Whether a law reduces to Born exactly (used to label reports).
pub fn is_born(law: &ProbabilityLaw) -> bool {
    matches!(law.kind(), LawKind::Born)
}
