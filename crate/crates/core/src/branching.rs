//! Measurement-chain states: system, detectors, observer, and write register.
//!
//! Each coupling step is the linear extension of a record-copying map, realized
//! as a permutation unitary on two adjacent factors. Branch `k` is the
//! component whose detector register reads `D:k,yes`.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::tensor::{
    self, apply_on_factors, evolution_operator, inner_product, subspace_weight, BasisTuple, Factor,
    LinearOperator, StateDocument, StateVector,
};

pub const SYSTEM: &str = "system";
pub const DETECTOR: &str = "detector";
pub const OBSERVER: &str = "observer";
pub const WRITE: &str = "write";

pub const BLANK: &str = "blank";
pub const NONCLASSICAL: &str = "∞";

/// Normalization tolerance for input amplitudes.
pub const INPUT_NORM_TOL: f64 = 1e-10;

/// Anything below this is treated as an empty subspace.
const EMPTY_WEIGHT: f64 = 1e-24;

pub fn detector_symbol(k: usize) -> String {
    format!("D:{k},yes")
}

pub fn observer_symbol(k: usize) -> String {
    format!("Obs {k}")
}

/// Value held by the write register.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum WriteSymbol {
    Blank,
    Outcome(usize),
    NonClassical,
}

impl WriteSymbol {
    pub fn parse(token: &str) -> Option<Self> {
        match token {
            BLANK => Some(WriteSymbol::Blank),
            NONCLASSICAL => Some(WriteSymbol::NonClassical),
            t => t.parse().ok().map(WriteSymbol::Outcome),
        }
    }

    pub fn token(&self) -> String {
        match self {
            WriteSymbol::Blank => BLANK.to_string(),
            WriteSymbol::Outcome(k) => k.to_string(),
            WriteSymbol::NonClassical => NONCLASSICAL.to_string(),
        }
    }
}

/// How far along the measurement chain a state has been coupled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Prepared,
    Detected,
    Observed,
    Written,
}

fn chain_factors(n: usize) -> Vec<Factor> {
    let system = Factor::new(SYSTEM, (1..=n).map(|k| k.to_string()));
    let detector = Factor::new(DETECTOR, std::iter::once(BLANK.to_string()).chain((1..=n).map(detector_symbol)));
    let observer = Factor::new(OBSERVER, std::iter::once(BLANK.to_string()).chain((1..=n).map(observer_symbol)));
    let write = Factor::new(
        WRITE,
        std::iter::once(BLANK.to_string())
            .chain((1..=n).map(|k| k.to_string()))
            .chain(std::iter::once(NONCLASSICAL.to_string())),
    );
    vec![system, detector, observer, write]
}

/// A measurement-chain state together with its coupling stage.
///
/// `observer_frame`, when set, means the stored amplitudes are coordinates in
/// a rotated observer basis `{U|o⟩}`; record predicates are always evaluated
/// after mapping back to the record basis.
#[derive(Clone, Debug, PartialEq)]
pub struct BranchState {
    n: usize,
    stage: Stage,
    state: StateVector,
    observer_frame: Option<LinearOperator>,
}

impl BranchState {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn stage(&self) -> Stage {
        self.stage
    }

    /// Coordinates as stored (possibly in a rotated observer frame).
    pub fn state(&self) -> &StateVector {
        &self.state
    }

    pub fn observer_frame(&self) -> Option<&LinearOperator> {
        self.observer_frame.as_ref()
    }

    /// The state expressed in the record basis.
    pub fn record_state(&self) -> Result<StateVector> {
        match &self.observer_frame {
            None => Ok(self.state.clone()),
            Some(frame) => apply_on_factors(frame, &self.state, &[OBSERVER]),
        }
    }

    /// Branch label of basis element `i`: the detector record once detectors
    /// are coupled, the system index before that. Outcomes are 1-based.
    pub fn branch_of(&self, i: usize) -> Option<usize> {
        let t = self.state.basis_tuple(i);
        self.branch_of_tuple(&t)
    }

    fn branch_of_tuple(&self, t: &BasisTuple<'_>) -> Option<usize> {
        if self.stage == Stage::Prepared {
            t.index(SYSTEM).map(|i| i + 1)
        } else {
            match t.index(DETECTOR)? {
                0 => None,
                k => Some(k),
            }
        }
    }

    /// Unnormalized projections onto each branch, in the record basis.
    pub fn branches(&self) -> Result<Vec<StateVector>> {
        let rec = self.record_state()?;
        Ok((1..=self.n)
            .map(|k| rec.project(|t| self.branch_of_tuple(t) == Some(k)))
            .collect())
    }

    pub fn branch_weights(&self) -> Result<Vec<f64>> {
        Ok(self.branches()?.iter().map(StateVector::norm_sqr).collect())
    }

    /// Gram matrix of the normalized branches; empty branches contribute zero rows.
    pub fn gram_matrix(&self) -> Result<DMatrix<Complex64>> {
        let normalized: Vec<Option<StateVector>> = self
            .branches()?
            .into_iter()
            .map(|b| if b.norm_sqr() > EMPTY_WEIGHT { b.normalize().ok() } else { None })
            .collect();
        let mut g = DMatrix::zeros(self.n, self.n);
        for j in 0..self.n {
            for k in 0..self.n {
                if let (Some(bj), Some(bk)) = (&normalized[j], &normalized[k]) {
                    g[(j, k)] = inner_product(bj, bk)?;
                }
            }
        }
        Ok(g)
    }

    fn require_stage(&self, stage: Stage, op: &str) -> Result<()> {
        if self.stage != stage {
            return Err(Error::InvalidState(format!(
                "{op} requires stage {stage:?}, state is at {:?}",
                self.stage
            )));
        }
        if self.observer_frame.is_some() {
            return Err(Error::InvalidState(format!("{op} requires the record basis")));
        }
        Ok(())
    }

    fn require_blank(&self, factor: &str, op: &str) -> Result<()> {
        let w = subspace_weight(&self.state, |t| t.symbol(factor) != Some(BLANK));
        if w > tensor::NORM_TOL {
            return Err(Error::InvalidState(format!("{op}: {factor} register is not blank (weight {w:e})")));
        }
        Ok(())
    }

    /// Active unitary on the observer factor (a physical change of observer state).
    pub fn rotate_observer(&self, u: &LinearOperator) -> Result<BranchState> {
        if self.observer_frame.is_some() {
            return Err(Error::InvalidState("rotate_observer requires the record basis".into()));
        }
        Ok(BranchState { state: tensor::rotate_factor(&self.state, OBSERVER, u)?, ..self.clone() })
    }

    /// Re-express the same state in the observer basis `{U|o⟩}`. The stored
    /// coordinates change; the physical state does not.
    pub fn reexpress_observer(&self, u: &LinearOperator) -> Result<BranchState> {
        let coords = tensor::rotate_factor(&self.state, OBSERVER, &u.adjoint())?;
        let frame = match &self.observer_frame {
            None => u.clone(),
            Some(f) => f.compose(u)?,
        };
        Ok(BranchState { state: coords, observer_frame: Some(frame), ..self.clone() })
    }

    pub fn to_document(&self) -> BranchDocument {
        BranchDocument {
            n: self.n,
            stage: self.stage,
            state: self.state.to_document(),
            observer_frame: self.observer_frame.as_ref().map(|f| {
                let m = f.matrix();
                (0..m.nrows())
                    .map(|i| (0..m.ncols()).map(|j| [m[(i, j)].re, m[(i, j)].im]).collect())
                    .collect()
            }),
        }
    }
}

/// JSON form of a [`BranchState`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchDocument {
    pub n: usize,
    pub stage: Stage,
    pub state: StateDocument,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub observer_frame: Option<Vec<Vec<[f64; 2]>>>,
}

impl TryFrom<BranchDocument> for BranchState {
    type Error = Error;

    fn try_from(doc: BranchDocument) -> Result<Self> {
        let state = StateVector::try_from(doc.state)?;
        if state.factors() != chain_factors(doc.n).as_slice() {
            return Err(Error::BasisMismatch(format!("factors do not match a chain with n = {}", doc.n)));
        }
        let observer_frame = doc
            .observer_frame
            .map(|rows| {
                let d = rows.len();
                if rows.iter().any(|r| r.len() != d) {
                    return Err(invalid("observer frame must be square"));
                }
                LinearOperator::unitary(DMatrix::from_fn(d, d, |i, j| Complex64::new(rows[i][j][0], rows[i][j][1])))
            })
            .transpose()?;
        Ok(BranchState { n: doc.n, stage: doc.stage, state, observer_frame })
    }
}

impl Serialize for BranchState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for BranchState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        BranchState::try_from(BranchDocument::deserialize(d)?).map_err(serde::de::Error::custom)
    }
}

/// System state `Σ a(k)|k⟩` with every record register blank.
pub fn premeasurement(a: &[Complex64], n: usize) -> Result<BranchState> {
    if n == 0 {
        return Err(invalid("need at least one outcome"));
    }
    if a.len() != n {
        return Err(Error::DimensionMismatch { expected: n, got: a.len() });
    }
    let norm: f64 = a.iter().map(|z| z.norm_sqr()).sum();
    if (norm - 1.0).abs() > INPUT_NORM_TOL {
        return Err(Error::Unnormalized(norm));
    }
    let factors = chain_factors(n);
    let mut state = StateVector::zeros(factors)?;
    let mut amps = state.amps().to_vec();
    for (k, ak) in a.iter().enumerate() {
        let sys = (k + 1).to_string();
        amps[state.index_of(&[&sys, BLANK, BLANK, BLANK])?] = *ak;
    }
    state = StateVector::new(state.factors().to_vec(), amps)?;
    Ok(BranchState { n, stage: Stage::Prepared, state, observer_frame: None })
}

pub fn premeasurement_real(a: &[f64]) -> Result<BranchState> {
    let a: Vec<Complex64> = a.iter().map(|&x| Complex64::new(x, 0.0)).collect();
    premeasurement(&a, a.len())
}

/// Permutation unitary on `d1 ⊗ d2` swapping `|i, from⟩ ↔ |i, to(i)⟩` for each `i`
/// in `pairs`; identity elsewhere.
fn record_swap(d1: usize, d2: usize, pairs: &[(usize, usize, usize)]) -> LinearOperator {
    let dim = d1 * d2;
    let mut perm: Vec<usize> = (0..dim).collect();
    for &(i, from, to) in pairs {
        let a = i * d2 + from;
        let b = i * d2 + to;
        perm[a] = b;
        perm[b] = a;
    }
    let m = DMatrix::from_fn(dim, dim, |r, c| {
        if perm[c] == r {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    LinearOperator::unitary(m).expect("permutation matrices are unitary")
}

/// `|k⟩|blank⟩ → |k⟩|D:k,yes⟩`.
pub fn couple_detectors(s: &BranchState) -> Result<BranchState> {
    s.require_stage(Stage::Prepared, "couple_detectors")?;
    s.require_blank(DETECTOR, "couple_detectors")?;
    let n = s.n;
    let pairs: Vec<_> = (0..n).map(|k| (k, 0, k + 1)).collect();
    let u = record_swap(n, n + 1, &pairs);
    let state = apply_on_factors(&u, &s.state, &[SYSTEM, DETECTOR])?;
    Ok(BranchState { stage: Stage::Detected, state, ..s.clone() })
}

/// Detector coupling with imperfect records: system `k` drives the detector into
/// `(|D:k⟩ + ε Σ_{j≠k} |D:j⟩)/√(1+(n−1)ε²)`, so distinct records overlap.
pub fn couple_detectors_with_overlap(s: &BranchState, epsilon: f64) -> Result<BranchState> {
    s.require_stage(Stage::Prepared, "couple_detectors_with_overlap")?;
    s.require_blank(DETECTOR, "couple_detectors_with_overlap")?;
    if !epsilon.is_finite() || epsilon < 0.0 {
        return Err(invalid("overlap parameter must be finite and nonnegative"));
    }
    let n = s.n;
    let norm = (1.0 + (n as f64 - 1.0) * epsilon * epsilon).sqrt();
    let mut amps = vec![Complex64::new(0.0, 0.0); s.state.dim()];
    for (i, amp) in s.state.amps().iter().enumerate() {
        if *amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut multi = s.state.multi_index(i);
        let k = multi[0];
        for rec in 1..=n {
            let c = if rec == k + 1 { 1.0 } else { epsilon } / norm;
            multi[1] = rec;
            amps[s.state.flat_index(&multi)] += amp * c;
        }
    }
    let state = StateVector::new(s.state.factors().to_vec(), amps)?;
    Ok(BranchState { stage: Stage::Detected, state, ..s.clone() })
}

/// `|D:k,yes⟩|blank⟩ → |D:k,yes⟩|Obs k⟩`.
pub fn couple_observer(s: &BranchState) -> Result<BranchState> {
    s.require_stage(Stage::Detected, "couple_observer")?;
    s.require_blank(OBSERVER, "couple_observer")?;
    let n = s.n;
    let pairs: Vec<_> = (1..=n).map(|k| (k, 0, k)).collect();
    let u = record_swap(n + 1, n + 1, &pairs);
    let state = apply_on_factors(&u, &s.state, &[DETECTOR, OBSERVER])?;
    Ok(BranchState { stage: Stage::Observed, state, ..s.clone() })
}

/// The writer map: linear extension of `|Obs k, blank⟩ → |Obs k, writes k⟩`.
pub fn writer_unitary(n: usize) -> LinearOperator {
    let pairs: Vec<_> = (1..=n).map(|k| (k, 0, k)).collect();
    record_swap(n + 1, n + 2, &pairs)
}

pub fn couple_writer(s: &BranchState) -> Result<BranchState> {
    s.require_stage(Stage::Observed, "couple_writer")?;
    s.require_blank(WRITE, "couple_writer")?;
    let state = apply_on_factors(&writer_unitary(s.n), &s.state, &[OBSERVER, WRITE])?;
    Ok(BranchState { stage: Stage::Written, state, ..s.clone() })
}

/// Convenience: premeasurement followed by all three couplings.
pub fn full_chain(a: &[Complex64]) -> Result<BranchState> {
    let s = premeasurement(a, a.len())?;
    couple_writer(&couple_observer(&couple_detectors(&s)?)?)
}

/// Whether a basis tuple carries a classical record pair: either both the
/// observer and write registers are blank, or the observer perceives `k` and
/// the register holds `k`.
pub fn is_classical_record(t: &BasisTuple<'_>) -> bool {
    let obs = t.index(OBSERVER);
    let write = t.symbol(WRITE).and_then(WriteSymbol::parse);
    match (obs, write) {
        (Some(0), Some(WriteSymbol::Blank)) => true,
        (Some(o), Some(WriteSymbol::Outcome(k))) => o == k,
        _ => false,
    }
}

/// Weight on `{write = ∞} ∪ {write ≠ observer record}`, evaluated in the record basis.
pub fn nonclassical_weight(s: &BranchState) -> Result<f64> {
    if s.stage != Stage::Written {
        return Err(Error::InvalidState("nonclassical_weight requires a written state".into()));
    }
    let rec = s.record_state()?;
    Ok(subspace_weight(&rec, |t| !is_classical_record(t)))
}

/// The `±1/√2` observer combinations of a two-outcome observed chain.
#[derive(Clone, Debug)]
pub struct MixedObserverStates {
    pub a: BranchState,
    pub b: BranchState,
    /// `s = coefficients.0 · a + coefficients.1 · b`.
    pub coefficients: (Complex64, Complex64),
}

pub fn mixed_observer_states(s: &BranchState) -> Result<MixedObserverStates> {
    if s.n != 2 {
        return Err(invalid(format!("mixed observer states need n = 2, got {}", s.n)));
    }
    s.require_stage(Stage::Observed, "mixed_observer_states")?;
    let factors = s.state.factors().to_vec();
    let ket = |k: usize| {
        StateVector::basis_state(
            factors.clone(),
            &[&k.to_string(), &detector_symbol(k), &observer_symbol(k), BLANK],
        )
    };
    let (b1, b2) = (ket(1)?, ket(2)?);
    let h = Complex64::new(std::f64::consts::FRAC_1_SQRT_2, 0.0);
    let a_state = b1.scale(h).add_scaled(h, &b2)?;
    let b_state = b1.scale(h).add_scaled(-h, &b2)?;
    let coefficients = (inner_product(&a_state, &s.state)?, inner_product(&b_state, &s.state)?);
    let wrap = |state| BranchState { n: 2, stage: Stage::Observed, state, observer_frame: None };
    Ok(MixedObserverStates { a: wrap(a_state), b: wrap(b_state), coefficients })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Color {
    Blue,
    Yellow,
    Green,
}

#[derive(Clone, Debug, Serialize)]
pub struct ColorReport {
    /// Color emitted on each populated branch, in branch order.
    pub colors: Vec<(usize, Color)>,
    /// Weight of basis elements that carry both detector-yes records.
    pub green_weight: f64,
    pub green_seen: bool,
}

/// Decode a detector token into the set of detectors reading "yes".
/// Composite tokens join single records with `;`.
pub fn detectors_reading_yes(token: &str) -> Vec<usize> {
    token
        .split(';')
        .filter_map(|part| part.strip_prefix("D:")?.strip_suffix(",yes")?.parse().ok())
        .collect()
}

/// Scan every populated basis element of `state` for detector records: detector 1
/// lights blue, detector 2 yellow, and both at once green.
pub fn color_scan(state: &StateVector) -> Result<ColorReport> {
    state.factor_position(DETECTOR)?;
    let mut colors: Vec<(usize, Color)> = Vec::new();
    let mut green_weight = 0.0;
    for (i, amp) in state.amps().iter().enumerate() {
        let w = amp.norm_sqr();
        if w <= EMPTY_WEIGHT {
            continue;
        }
        let t = state.basis_tuple(i);
        let yes = detectors_reading_yes(t.symbol(DETECTOR).unwrap_or(BLANK));
        let color = match (yes.contains(&1), yes.contains(&2)) {
            (true, true) => Some(Color::Green),
            (true, false) => Some(Color::Blue),
            (false, true) => Some(Color::Yellow),
            _ => None,
        };
        match color {
            Some(Color::Green) => {
                green_weight += w;
                if !colors.contains(&(0, Color::Green)) {
                    colors.push((0, Color::Green));
                }
            }
            Some(c) => {
                let k = if c == Color::Blue { 1 } else { 2 };
                if !colors.contains(&(k, c)) {
                    colors.push((k, c));
                }
            }
            None => {}
        }
    }
    colors.sort_by_key(|(k, _)| *k);
    Ok(ColorReport { colors, green_weight, green_seen: green_weight > 0.0 })
}

pub fn color_signal(s: &BranchState) -> Result<ColorReport> {
    if s.n > 2 {
        return Err(invalid(format!("color signal is defined for n ≤ 2, got {}", s.n)));
    }
    if s.stage < Stage::Detected {
        return Err(Error::InvalidState("color_signal requires coupled detectors".into()));
    }
    color_scan(&s.record_state()?)
}

/// A hermitian operator on the (system, detector) factors, nominally of the
/// form `Σ_r H_r ⊗ Π_r` with `Π_r` projecting on detector record `r`.
#[derive(Clone, Debug)]
pub struct BlockHamiltonian {
    n: usize,
    op: LinearOperator,
}

impl BlockHamiltonian {
    /// `blocks[r]` acts on the system while the detector reads record `r`
    /// (`r = 0` is blank).
    pub fn from_blocks(n: usize, blocks: &[LinearOperator]) -> Result<Self> {
        if blocks.len() != n + 1 {
            return Err(Error::DimensionMismatch { expected: n + 1, got: blocks.len() });
        }
        let dim = n * (n + 1);
        let mut m = DMatrix::zeros(dim, dim);
        for (r, h) in blocks.iter().enumerate() {
            if h.dim() != n {
                return Err(Error::DimensionMismatch { expected: n, got: h.dim() });
            }
            m += h.kron(&record_projector(n, r)).matrix();
        }
        Ok(BlockHamiltonian { n, op: LinearOperator::hermitian(m)? })
    }

    /// Any hermitian operator on (system, detector); block structure is not enforced.
    pub fn from_operator(n: usize, op: LinearOperator) -> Result<Self> {
        if op.dim() != n * (n + 1) {
            return Err(Error::DimensionMismatch { expected: n * (n + 1), got: op.dim() });
        }
        Ok(BlockHamiltonian { n, op: LinearOperator::hermitian(op.matrix().clone())? })
    }

    pub fn random<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        let blocks: Vec<_> = (0..=n).map(|_| tensor::random::hermitian(n, rng)).collect();
        Self::from_blocks(n, &blocks).expect("random blocks are hermitian")
    }

    pub fn zero(n: usize) -> Self {
        BlockHamiltonian { n, op: LinearOperator::zero(n * (n + 1)) }
    }

    /// Adds `g (V ⊗ |D:j⟩⟨D:k| + h.c.)`, a term that moves amplitude between records.
    pub fn with_cross_term(&self, v: &LinearOperator, j: usize, k: usize, g: f64) -> Result<Self> {
        let n = self.n;
        if j == 0 || k == 0 || j > n || k > n || j == k {
            return Err(invalid("cross term needs two distinct records in 1..=n"));
        }
        let mut t = DMatrix::zeros(n + 1, n + 1);
        t[(j, k)] = Complex64::new(g, 0.0);
        let term = v.kron(&LinearOperator::general(t)?);
        let m = self.op.matrix() + term.matrix() + term.matrix().adjoint();
        Self::from_operator(n, LinearOperator::general(m)?)
    }

    pub fn operator(&self) -> &LinearOperator {
        &self.op
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Max over records of `|[H, 1 ⊗ Π_r]|`.
    pub fn commutator_defect(&self) -> f64 {
        let id = LinearOperator::identity(self.n);
        (0..=self.n)
            .map(|r| {
                let p = id.kron(&record_projector(self.n, r));
                let c = self.op.matrix() * p.matrix() - p.matrix() * self.op.matrix();
                c.iter().map(|z| z.norm()).fold(0.0, f64::max)
            })
            .fold(0.0, f64::max)
    }

    pub fn is_block(&self) -> bool {
        self.commutator_defect() <= tensor::HERMITIAN_TOL
    }
}

fn record_projector(n: usize, r: usize) -> LinearOperator {
    let m = DMatrix::from_fn(n + 1, n + 1, |i, j| {
        if i == r && j == r {
            Complex64::new(1.0, 0.0)
        } else {
            Complex64::new(0.0, 0.0)
        }
    });
    LinearOperator::hermitian(m).expect("projectors are hermitian")
}

#[derive(Clone, Debug)]
pub struct InterbranchReport {
    /// `M(j,k) = ⟨branch j|H|branch k⟩` over normalized branches.
    pub matrix: DMatrix<Complex64>,
    pub max_offdiagonal: f64,
    /// False when `H` moves amplitude between detector records.
    pub is_block: bool,
}

pub fn interbranch_elements(h: &BlockHamiltonian, s: &BranchState) -> Result<InterbranchReport> {
    if s.stage < Stage::Detected {
        return Err(Error::InvalidState("interbranch_elements requires coupled detectors".into()));
    }
    if h.n != s.n {
        return Err(Error::DimensionMismatch { expected: s.n, got: h.n });
    }
    let branches: Vec<Option<StateVector>> = s
        .branches()?
        .into_iter()
        .map(|b| if b.norm_sqr() > EMPTY_WEIGHT { b.normalize().ok() } else { None })
        .collect();
    let h_branches: Vec<Option<StateVector>> = branches
        .iter()
        .map(|b| b.as_ref().map(|b| apply_on_factors(&h.op, b, &[SYSTEM, DETECTOR])).transpose())
        .collect::<Result<_>>()?;
    let n = s.n;
    let mut m = DMatrix::zeros(n, n);
    let mut max_off: f64 = 0.0;
    for j in 0..n {
        for k in 0..n {
            if let (Some(bj), Some(hbk)) = (&branches[j], &h_branches[k]) {
                m[(j, k)] = inner_product(bj, hbk)?;
                if j != k {
                    max_off = max_off.max(m[(j, k)].norm());
                }
            }
        }
    }
    Ok(InterbranchReport { matrix: m, max_offdiagonal: max_off, is_block: h.is_block() })
}

#[derive(Clone, Debug, Serialize)]
pub struct WeightEvolution {
    pub initial: Vec<f64>,
    pub evolved: Vec<f64>,
    pub max_deviation: f64,
}

/// Evolve by `exp(−iHt)` on (system, detector) and compare per-branch weights.
pub fn evolve_and_check_weights(h: &BlockHamiltonian, s: &BranchState, t: f64) -> Result<WeightEvolution> {
    if s.stage < Stage::Detected {
        return Err(Error::InvalidState("evolve_and_check_weights requires coupled detectors".into()));
    }
    if h.n != s.n {
        return Err(Error::DimensionMismatch { expected: s.n, got: h.n });
    }
    let initial = s.branch_weights()?;
    let u = evolution_operator(&h.op, t)?;
    let evolved_state = BranchState {
        state: apply_on_factors(&u, &s.record_state()?, &[SYSTEM, DETECTOR])?,
        observer_frame: None,
        ..s.clone()
    };
    let evolved = evolved_state.branch_weights()?;
    let max_deviation = initial
        .iter()
        .zip(&evolved)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(WeightEvolution { initial, evolved, max_deviation })
}

/// Random unitary on the observer's perceiving states `Obs 1..n`, identity on blank.
pub fn random_observer_rotation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> LinearOperator {
    let u = tensor::random::unitary(n, rng);
    let m = DMatrix::from_fn(n + 1, n + 1, |i, j| match (i, j) {
        (0, 0) => Complex64::new(1.0, 0.0),
        (0, _) | (_, 0) => Complex64::new(0.0, 0.0),
        _ => u.matrix()[(i - 1, j - 1)],
    });
    LinearOperator::unitary(m).expect("block-diagonal embedding of a unitary")
}
