//! Dense complex tensor algebra over labeled finite bases.
//!
//! A [`StateVector`] is a list of named tensor factors, each with a finite
//! alphabet of symbols, plus one amplitude per element of the full product
//! basis. Basis elements are enumerated in row-major order: the last factor
//! varies fastest.

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

pub type Amplitude = Complex64;

pub const NORM_TOL: f64 = 1e-12;
pub const UNITARY_TOL: f64 = 1e-10;
pub const HERMITIAN_TOL: f64 = 1e-12;

/// Largest dimension accepted by [`matrix_exponential_apply`].
pub const MAX_EXPM_DIM: usize = 64;

/// A named tensor factor with a finite alphabet of basis symbols.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Factor {
    pub name: String,
    pub alphabet: Vec<String>,
}

impl Factor {
    pub fn new<S: Into<String>>(name: impl Into<String>, alphabet: impl IntoIterator<Item = S>) -> Self {
        Factor {
            name: name.into(),
            alphabet: alphabet.into_iter().map(Into::into).collect(),
        }
    }

    pub fn dim(&self) -> usize {
        self.alphabet.len()
    }

    pub fn symbol_index(&self, symbol: &str) -> Option<usize> {
        self.alphabet.iter().position(|s| s == symbol)
    }
}

/// One element of a tensor-product basis, viewed as a tuple of (factor, symbol).
#[derive(Clone, Debug)]
pub struct BasisTuple<'a> {
    factors: &'a [Factor],
    indices: Vec<usize>,
}

impl<'a> BasisTuple<'a> {
    pub fn symbol(&self, factor: &str) -> Option<&'a str> {
        let pos = self.factors.iter().position(|f| f.name == factor)?;
        Some(self.factors[pos].alphabet[self.indices[pos]].as_str())
    }

    pub fn index(&self, factor: &str) -> Option<usize> {
        let pos = self.factors.iter().position(|f| f.name == factor)?;
        Some(self.indices[pos])
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn symbols(&self) -> Vec<&'a str> {
        self.factors
            .iter()
            .zip(&self.indices)
            .map(|(f, &i)| f.alphabet[i].as_str())
            .collect()
    }
}

/// A dense pure state over a labeled tensor-product basis.
#[derive(Clone, Debug, PartialEq)]
pub struct StateVector {
    factors: Vec<Factor>,
    amps: Vec<Amplitude>,
}

fn validate_factors(factors: &[Factor]) -> Result<()> {
    for (i, f) in factors.iter().enumerate() {
        if f.alphabet.is_empty() {
            return Err(Error::BasisMismatch(format!("factor `{}` has an empty alphabet", f.name)));
        }
        if factors[..i].iter().any(|g| g.name == f.name) {
            return Err(Error::OverlappingFactors(f.name.clone()));
        }
        for (j, s) in f.alphabet.iter().enumerate() {
            if f.alphabet[..j].contains(s) {
                return Err(Error::BasisMismatch(format!(
                    "symbol `{s}` repeated in factor `{}`",
                    f.name
                )));
            }
        }
    }
    Ok(())
}

impl StateVector {
    pub fn new(factors: Vec<Factor>, amps: Vec<Amplitude>) -> Result<Self> {
        validate_factors(&factors)?;
        let dim: usize = factors.iter().map(Factor::dim).product();
        if amps.len() != dim {
            return Err(Error::DimensionMismatch { expected: dim, got: amps.len() });
        }
        if let Some(i) = amps.iter().position(|a| !a.re.is_finite() || !a.im.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(StateVector { factors, amps })
    }

    /// Single-factor state from real amplitudes.
    pub fn from_real(factor: Factor, amps: &[f64]) -> Result<Self> {
        Self::new(vec![factor], amps.iter().map(|&a| Complex64::new(a, 0.0)).collect())
    }

    pub fn zeros(factors: Vec<Factor>) -> Result<Self> {
        let dim = factors.iter().map(Factor::dim).product();
        Self::new(factors, vec![Complex64::new(0.0, 0.0); dim])
    }

    /// The product basis state selected by one symbol per factor.
    pub fn basis_state(factors: Vec<Factor>, symbols: &[&str]) -> Result<Self> {
        let mut s = Self::zeros(factors)?;
        let idx = s.index_of(symbols)?;
        s.amps[idx] = Complex64::new(1.0, 0.0);
        Ok(s)
    }

    pub fn factors(&self) -> &[Factor] {
        &self.factors
    }

    pub fn factor(&self, name: &str) -> Option<&Factor> {
        self.factors.iter().find(|f| f.name == name)
    }

    pub fn amps(&self) -> &[Amplitude] {
        &self.amps
    }

    pub fn into_amps(self) -> Vec<Amplitude> {
        self.amps
    }

    pub fn dim(&self) -> usize {
        self.amps.len()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amps.iter().map(|a| a.norm_sqr()).sum()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    pub fn normalize(&self) -> Result<Self> {
        let n = self.norm();
        if n == 0.0 {
            return Err(Error::Degenerate("cannot normalize the zero vector".into()));
        }
        Ok(self.scale(Complex64::new(1.0 / n, 0.0)))
    }

    pub fn is_normalized(&self, tol: f64) -> bool {
        (self.norm_sqr() - 1.0).abs() <= tol
    }

    pub fn scale(&self, c: Amplitude) -> Self {
        StateVector {
            factors: self.factors.clone(),
            amps: self.amps.iter().map(|a| a * c).collect(),
        }
    }

    /// Elementwise `self + c * other` on an identical basis.
    pub fn add_scaled(&self, c: Amplitude, other: &StateVector) -> Result<Self> {
        self.require_same_basis(other)?;
        Ok(StateVector {
            factors: self.factors.clone(),
            amps: self.amps.iter().zip(&other.amps).map(|(a, b)| a + c * b).collect(),
        })
    }

    pub fn same_basis(&self, other: &StateVector) -> bool {
        self.factors == other.factors
    }

    fn require_same_basis(&self, other: &StateVector) -> Result<()> {
        if self.same_basis(other) {
            Ok(())
        } else {
            Err(Error::BasisMismatch("states are expressed over different bases".into()))
        }
    }

    /// Per-factor symbol indices of basis element `i`.
    pub fn multi_index(&self, mut i: usize) -> Vec<usize> {
        let mut idx = vec![0; self.factors.len()];
        for (slot, f) in idx.iter_mut().zip(&self.factors).rev() {
            *slot = i % f.dim();
            i /= f.dim();
        }
        idx
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi
            .iter()
            .zip(&self.factors)
            .fold(0, |acc, (&m, f)| acc * f.dim() + m)
    }

    pub fn index_of(&self, symbols: &[&str]) -> Result<usize> {
        if symbols.len() != self.factors.len() {
            return Err(Error::DimensionMismatch { expected: self.factors.len(), got: symbols.len() });
        }
        let multi = symbols
            .iter()
            .zip(&self.factors)
            .map(|(s, f)| {
                f.symbol_index(s).ok_or_else(|| Error::UnknownSymbol {
                    factor: f.name.clone(),
                    symbol: (*s).to_string(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(self.flat_index(&multi))
    }

    pub fn amplitude(&self, symbols: &[&str]) -> Result<Amplitude> {
        Ok(self.amps[self.index_of(symbols)?])
    }

    pub fn basis_tuple(&self, i: usize) -> BasisTuple<'_> {
        BasisTuple { factors: &self.factors, indices: self.multi_index(i) }
    }

    pub fn basis_tuples(&self) -> impl Iterator<Item = BasisTuple<'_>> + '_ {
        (0..self.dim()).map(move |i| self.basis_tuple(i))
    }

    pub fn factor_position(&self, name: &str) -> Result<usize> {
        self.factors
            .iter()
            .position(|f| f.name == name)
            .ok_or_else(|| Error::UnknownFactor(name.to_string()))
    }

    /// Keep only the components whose basis tuple satisfies `keep`.
    pub fn project<F>(&self, keep: F) -> Self
    where
        F: Fn(&BasisTuple<'_>) -> bool,
    {
        let amps = self
            .amps
            .iter()
            .enumerate()
            .map(|(i, a)| if keep(&self.basis_tuple(i)) { *a } else { Complex64::new(0.0, 0.0) })
            .collect();
        StateVector { factors: self.factors.clone(), amps }
    }

    pub fn to_document(&self) -> StateDocument {
        StateDocument {
            factors: self.factors.clone(),
            basis: self
                .basis_tuples()
                .map(|t| t.symbols().into_iter().map(str::to_string).collect())
                .collect(),
            amplitudes: self.amps.iter().map(|a| [a.re, a.im]).collect(),
        }
    }
}

/// JSON form of a [`StateVector`]: factor alphabets, explicit basis tuples, and
/// `[re, im]` amplitude pairs.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StateDocument {
    pub factors: Vec<Factor>,
    pub basis: Vec<Vec<String>>,
    pub amplitudes: Vec<[f64; 2]>,
}

impl TryFrom<StateDocument> for StateVector {
    type Error = Error;

    fn try_from(doc: StateDocument) -> Result<Self> {
        let amps = doc.amplitudes.iter().map(|[re, im]| Complex64::new(*re, *im)).collect();
        let state = StateVector::new(doc.factors, amps)?;
        if doc.basis.len() != state.dim() {
            return Err(Error::DimensionMismatch { expected: state.dim(), got: doc.basis.len() });
        }
        for (i, tuple) in doc.basis.iter().enumerate() {
            let expected = state.basis_tuple(i).symbols();
            if tuple.len() != expected.len() || tuple.iter().zip(&expected).any(|(a, b)| a != b) {
                return Err(Error::BasisMismatch(format!("basis tuple {i} out of order")));
            }
        }
        Ok(state)
    }
}

impl Serialize for StateVector {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_document().serialize(s)
    }
}

impl<'de> Deserialize<'de> for StateVector {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let doc = StateDocument::deserialize(d)?;
        StateVector::try_from(doc).map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OperatorKind {
    Unitary,
    Hermitian,
    General,
}

/// A dense complex matrix with a declared structural kind.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearOperator {
    matrix: DMatrix<Complex64>,
    kind: OperatorKind,
}

fn max_abs_diff(a: &DMatrix<Complex64>, b: &DMatrix<Complex64>) -> f64 {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

impl LinearOperator {
    pub fn general(matrix: DMatrix<Complex64>) -> Result<Self> {
        if !matrix.is_square() {
            return Err(invalid(format!("operator must be square, got {}x{}", matrix.nrows(), matrix.ncols())));
        }
        Ok(LinearOperator { matrix, kind: OperatorKind::General })
    }

    pub fn unitary(matrix: DMatrix<Complex64>) -> Result<Self> {
        let op = Self::general(matrix)?;
        let dev = op.unitarity_defect();
        if dev > UNITARY_TOL {
            return Err(Error::NotUnitary(dev));
        }
        Ok(LinearOperator { kind: OperatorKind::Unitary, ..op })
    }

    pub fn hermitian(matrix: DMatrix<Complex64>) -> Result<Self> {
        let op = Self::general(matrix)?;
        let dev = op.hermiticity_defect();
        if dev > HERMITIAN_TOL {
            return Err(Error::NotHermitian(dev));
        }
        Ok(LinearOperator { kind: OperatorKind::Hermitian, ..op })
    }

    pub fn identity(dim: usize) -> Self {
        LinearOperator { matrix: DMatrix::identity(dim, dim), kind: OperatorKind::Unitary }
    }

    pub fn zero(dim: usize) -> Self {
        LinearOperator { matrix: DMatrix::zeros(dim, dim), kind: OperatorKind::Hermitian }
    }

    pub fn from_real_rows(rows: &[&[f64]]) -> Result<Self> {
        let n = rows.len();
        if rows.iter().any(|r| r.len() != n) {
            return Err(invalid("rows must form a square matrix"));
        }
        Self::general(DMatrix::from_fn(n, n, |i, j| Complex64::new(rows[i][j], 0.0)))
    }

    pub fn matrix(&self) -> &DMatrix<Complex64> {
        &self.matrix
    }

    pub fn kind(&self) -> OperatorKind {
        self.kind
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn adjoint(&self) -> Self {
        LinearOperator { matrix: self.matrix.adjoint(), kind: self.kind }
    }

    pub fn unitarity_defect(&self) -> f64 {
        let n = self.dim();
        max_abs_diff(&(self.matrix.adjoint() * &self.matrix), &DMatrix::identity(n, n))
    }

    pub fn hermiticity_defect(&self) -> f64 {
        max_abs_diff(&self.matrix, &self.matrix.adjoint())
    }

    /// Product `self · other`; kind is kept only when both share it and it is closed under products.
    pub fn compose(&self, other: &LinearOperator) -> Result<Self> {
        if self.dim() != other.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: other.dim() });
        }
        let kind = match (self.kind, other.kind) {
            (OperatorKind::Unitary, OperatorKind::Unitary) => OperatorKind::Unitary,
            _ => OperatorKind::General,
        };
        Ok(LinearOperator { matrix: &self.matrix * &other.matrix, kind })
    }

    /// Kronecker product; the left operand acts on the slower-varying index.
    pub fn kron(&self, other: &LinearOperator) -> Self {
        let kind = match (self.kind, other.kind) {
            (OperatorKind::Unitary, OperatorKind::Unitary) => OperatorKind::Unitary,
            (OperatorKind::Hermitian, OperatorKind::Hermitian) => OperatorKind::Hermitian,
            _ => OperatorKind::General,
        };
        LinearOperator { matrix: self.matrix.kronecker(&other.matrix), kind }
    }

    pub fn apply_vec(&self, v: &[Amplitude]) -> Result<Vec<Amplitude>> {
        if v.len() != self.dim() {
            return Err(Error::DimensionMismatch { expected: self.dim(), got: v.len() });
        }
        let n = self.dim();
        Ok((0..n)
            .map(|i| (0..n).map(|j| self.matrix[(i, j)] * v[j]).sum())
            .collect())
    }
}

/// Pure tensor product; factor names must be disjoint.
pub fn tensor_product(u: &StateVector, v: &StateVector) -> Result<StateVector> {
    if let Some(f) = u.factors.iter().find(|f| v.factor(&f.name).is_some()) {
        return Err(Error::OverlappingFactors(f.name.clone()));
    }
    let factors = u.factors.iter().chain(&v.factors).cloned().collect();
    let amps = u
        .amps
        .iter()
        .flat_map(|a| v.amps.iter().map(move |b| a * b))
        .collect();
    StateVector::new(factors, amps)
}

/// `⟨u|v⟩`, conjugate-linear in `u`.
pub fn inner_product(u: &StateVector, v: &StateVector) -> Result<Amplitude> {
    u.require_same_basis(v)?;
    Ok(u.amps.iter().zip(&v.amps).map(|(a, b)| a.conj() * b).sum())
}

pub fn apply(op: &LinearOperator, psi: &StateVector) -> Result<StateVector> {
    let amps = op.apply_vec(&psi.amps)?;
    StateVector::new(psi.factors.clone(), amps)
}

/// Apply `op` to the listed factors (in the listed order) and the identity elsewhere.
pub fn apply_on_factors(op: &LinearOperator, psi: &StateVector, names: &[&str]) -> Result<StateVector> {
    let positions = names
        .iter()
        .map(|n| psi.factor_position(n))
        .collect::<Result<Vec<_>>>()?;
    for (i, p) in positions.iter().enumerate() {
        if positions[..i].contains(p) {
            return Err(invalid(format!("factor `{}` listed twice", names[i])));
        }
    }
    let sub_dims: Vec<usize> = positions.iter().map(|&p| psi.factors[p].dim()).collect();
    let sub_dim: usize = sub_dims.iter().product();
    if op.dim() != sub_dim {
        return Err(Error::DimensionMismatch { expected: sub_dim, got: op.dim() });
    }

    let sub_index = |multi: &[usize]| positions.iter().zip(&sub_dims).fold(0, |acc, (&p, &d)| acc * d + multi[p]);

    let mut out = vec![Complex64::new(0.0, 0.0); psi.dim()];
    for (i, amp) in psi.amps.iter().enumerate() {
        if *amp == Complex64::new(0.0, 0.0) {
            continue;
        }
        let mut multi = psi.multi_index(i);
        let col = sub_index(&multi);
        for row in 0..sub_dim {
            let m = op.matrix[(row, col)];
            if m == Complex64::new(0.0, 0.0) {
                continue;
            }
            let mut r = row;
            for (&p, &d) in positions.iter().zip(&sub_dims).rev() {
                multi[p] = r % d;
                r /= d;
            }
            out[psi.flat_index(&multi)] += m * amp;
        }
    }
    StateVector::new(psi.factors.clone(), out)
}

/// Transform a single tensor factor by a unitary acting on its alphabet.
pub fn rotate_factor(psi: &StateVector, factor: &str, u2: &LinearOperator) -> Result<StateVector> {
    let dev = u2.unitarity_defect();
    if dev > UNITARY_TOL {
        return Err(Error::NotUnitary(dev));
    }
    apply_on_factors(u2, psi, &[factor])
}

/// Squared norm of the components whose basis tuples satisfy `pred`.
pub fn subspace_weight<F>(psi: &StateVector, pred: F) -> f64
where
    F: Fn(&BasisTuple<'_>) -> bool,
{
    psi.amps
        .iter()
        .enumerate()
        .filter(|(i, _)| pred(&psi.basis_tuple(*i)))
        .map(|(_, a)| a.norm_sqr())
        .sum()
}

/// `exp(-i h t)` for hermitian `h`, by scaling and squaring a truncated Taylor series.
pub fn evolution_operator(h: &LinearOperator, t: f64) -> Result<LinearOperator> {
    let dev = h.hermiticity_defect();
    if dev > HERMITIAN_TOL {
        return Err(Error::NotHermitian(dev));
    }
    if h.dim() > MAX_EXPM_DIM {
        return Err(invalid(format!("dimension {} exceeds {MAX_EXPM_DIM}", h.dim())));
    }
    let n = h.dim();
    let a = h.matrix.map(|z| Complex64::new(0.0, -t) * z);
    let norm1 = (0..n)
        .map(|j| (0..n).map(|i| a[(i, j)].norm()).sum::<f64>())
        .fold(0.0, f64::max);
    let mut squarings = 0u32;
    let mut scale = 1.0;
    while norm1 * scale > 0.5 {
        scale *= 0.5;
        squarings += 1;
    }
    let a = a.map(|z| z * scale);

    let mut result = DMatrix::<Complex64>::identity(n, n);
    let mut term = DMatrix::<Complex64>::identity(n, n);
    for k in 1..=40 {
        term = (&term * &a).map(|z| z / k as f64);
        result += &term;
        let tn = term.iter().map(|z| z.norm()).fold(0.0, f64::max);
        if tn < 1e-18 {
            break;
        }
    }
    for _ in 0..squarings {
        result = &result * &result;
    }
    Ok(LinearOperator { matrix: result, kind: OperatorKind::Unitary })
}

/// `exp(-i h t)|ψ⟩`.
pub fn matrix_exponential_apply(h: &LinearOperator, t: f64, psi: &StateVector) -> Result<StateVector> {
    apply(&evolution_operator(h, t)?, psi)
}

/// Random operators and states for experiments and property checks.
pub mod random {
    use super::*;

    pub fn complex_gaussian<R: Rng + ?Sized>(rng: &mut R) -> Complex64 {
        Complex64::new(rng.sample(StandardNormal), rng.sample(StandardNormal))
    }

    /// Haar-like unitary from Gram-Schmidt on a complex Gaussian matrix.
    pub fn unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> LinearOperator {
        loop {
            let mut cols: Vec<Vec<Complex64>> = Vec::with_capacity(dim);
            let mut ok = true;
            for _ in 0..dim {
                let mut v: Vec<Complex64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
                // two passes keep orthogonality at machine precision
                for _ in 0..2 {
                    for c in &cols {
                        let proj: Complex64 = c.iter().zip(&v).map(|(a, b)| a.conj() * b).sum();
                        for (x, y) in v.iter_mut().zip(c) {
                            *x -= proj * y;
                        }
                    }
                }
                let n = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
                if n < 1e-8 {
                    ok = false;
                    break;
                }
                v.iter_mut().for_each(|z| *z /= n);
                cols.push(v);
            }
            if ok {
                let m = DMatrix::from_fn(dim, dim, |i, j| cols[j][i]);
                return LinearOperator { matrix: m, kind: OperatorKind::Unitary };
            }
        }
    }

    pub fn hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> LinearOperator {
        let g = DMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
        let h = (&g + g.adjoint()).map(|z| z * 0.5);
        LinearOperator { matrix: h, kind: OperatorKind::Hermitian }
    }

    pub fn general<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> LinearOperator {
        let g = DMatrix::from_fn(dim, dim, |_, _| complex_gaussian(rng));
        LinearOperator { matrix: g, kind: OperatorKind::General }
    }

    pub fn state<R: Rng + ?Sized>(factors: Vec<Factor>, rng: &mut R) -> StateVector {
        let dim = factors.iter().map(Factor::dim).product();
        let amps: Vec<Complex64> = (0..dim).map(|_| complex_gaussian(rng)).collect();
        let n = amps.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        StateVector { factors, amps: amps.into_iter().map(|z| z / n).collect() }
    }

    /// Uniform point on the positive orthant of the real unit sphere.
    pub fn positive_sphere_point<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
        loop {
            let v: Vec<f64> = (0..n).map(|_| rng.sample::<f64, _>(StandardNormal).abs()).collect();
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > 1e-12 {
                return v.into_iter().map(|x| x / norm).collect();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    fn qubit(name: &str) -> Factor {
        Factor::new(name, ["0", "1"])
    }

    #[test]
    fn product_of_basis_states() {
        let u = StateVector::basis_state(vec![qubit("a")], &["0"]).unwrap();
        let v = StateVector::basis_state(vec![qubit("b")], &["0"]).unwrap();
        let w = tensor_product(&u, &v).unwrap();
        assert_eq!(w.dim(), 4);
        assert_eq!(w.amplitude(&["0", "0"]).unwrap(), c(1.0));
        assert_eq!(w.norm_sqr(), 1.0);
    }

    #[test]
    fn product_pairs_labels() {
        let sys = StateVector::from_real(Factor::new("system", ["1", "2"]), &[0.6f64.sqrt(), 0.4f64.sqrt()]).unwrap();
        let det = StateVector::basis_state(vec![Factor::new("det", ["yes", "no"])], &["yes"]).unwrap();
        let w = tensor_product(&sys, &det).unwrap();
        assert_eq!(w.amplitude(&["1", "yes"]).unwrap(), c(0.6f64.sqrt()));
        assert_eq!(w.amplitude(&["2", "yes"]).unwrap(), c(0.4f64.sqrt()));
        assert_eq!(w.amplitude(&["1", "no"]).unwrap(), c(0.0));
    }

    #[test]
    fn overlapping_factor_names_rejected() {
        let u = StateVector::basis_state(vec![qubit("a")], &["0"]).unwrap();
        assert!(matches!(tensor_product(&u, &u), Err(Error::OverlappingFactors(_))));
    }

    #[test]
    fn product_norm_against_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let u = random::state(vec![Factor::new("a", ["x", "y", "z"])], &mut rng);
        let v = random::state(vec![Factor::new("b", ["p", "q", "r", "s"])], &mut rng);
        let w = tensor_product(&u, &v).unwrap();
        let mut direct = 0.0;
        for a in u.amps() {
            for b in v.amps() {
                direct += (a * b).norm_sqr();
            }
        }
        assert!((w.norm_sqr() - direct).abs() < 1e-12);
        assert!((w.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn inner_product_cases() {
        let e1 = StateVector::basis_state(vec![qubit("a")], &["0"]).unwrap();
        let e2 = StateVector::basis_state(vec![qubit("a")], &["1"]).unwrap();
        assert_eq!(inner_product(&e1, &e1).unwrap(), c(1.0));
        assert_eq!(inner_product(&e1, &e2).unwrap(), c(0.0));
        let other = StateVector::basis_state(vec![qubit("b")], &["0"]).unwrap();
        assert!(matches!(inner_product(&e1, &other), Err(Error::BasisMismatch(_))));

        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let f = vec![Factor::new("a", ["0", "1", "2", "3", "4"])];
        let u = random::state(f.clone(), &mut rng);
        let v = random::state(f, &mut rng);
        let mut oracle = Complex64::new(0.0, 0.0);
        for i in 0..u.dim() {
            oracle += u.amps()[i].conj() * v.amps()[i];
        }
        assert!((inner_product(&u, &v).unwrap() - oracle).norm() < 1e-14);
    }

    #[test]
    fn apply_identity_and_swap() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let psi = random::state(vec![qubit("a")], &mut rng);
        assert_eq!(apply(&LinearOperator::identity(2), &psi).unwrap(), psi);
        let x = LinearOperator::unitary(LinearOperator::from_real_rows(&[&[0.0, 1.0], &[1.0, 0.0]]).unwrap().matrix().clone()).unwrap();
        let swapped = apply(&x, &psi).unwrap();
        assert_eq!(swapped.amps()[0], psi.amps()[1]);
        assert_eq!(swapped.amps()[1], psi.amps()[0]);
        assert!(matches!(apply(&LinearOperator::identity(3), &psi), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn random_unitary_preserves_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let u = random::unitary(8, &mut rng);
        assert!(u.unitarity_defect() < 1e-12);
        let psi = random::state(vec![Factor::new("a", (0..8).map(|i| i.to_string()))], &mut rng);
        assert!((apply(&u, &psi).unwrap().norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn constructors_check_kind() {
        let m = DMatrix::from_element(2, 2, c(1.0));
        assert!(matches!(LinearOperator::unitary(m.clone()), Err(Error::NotUnitary(_))));
        assert!(LinearOperator::hermitian(m).is_ok());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let g = random::general(3, &mut rng);
        assert!(matches!(LinearOperator::hermitian(g.matrix().clone()), Err(Error::NotHermitian(_))));
    }

    #[test]
    fn rotate_one_factor_only() {
        let s = 0.5f64.sqrt();
        let hadamard = LinearOperator::unitary(LinearOperator::from_real_rows(&[&[s, s], &[s, -s]]).unwrap().matrix().clone()).unwrap();
        let psi = StateVector::basis_state(vec![qubit("a"), qubit("b")], &["1", "0"]).unwrap();
        let out = rotate_factor(&psi, "b", &hadamard).unwrap();
        assert!((out.amplitude(&["1", "0"]).unwrap() - c(s)).norm() < 1e-15);
        assert!((out.amplitude(&["1", "1"]).unwrap() - c(s)).norm() < 1e-15);
        assert_eq!(out.amplitude(&["0", "0"]).unwrap(), c(0.0));

        let same = rotate_factor(&psi, "a", &LinearOperator::identity(2)).unwrap();
        assert_eq!(same, psi);

        let bad = LinearOperator::from_real_rows(&[&[1.0, 1.0], &[0.0, 1.0]]).unwrap();
        assert!(matches!(rotate_factor(&psi, "a", &bad), Err(Error::NotUnitary(_))));
        assert!(matches!(rotate_factor(&psi, "zz", &hadamard), Err(Error::UnknownFactor(_))));
    }

    #[test]
    fn rotation_then_inverse_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let f = vec![Factor::new("a", ["0", "1", "2"]), qubit("b")];
        let psi = random::state(f, &mut rng);
        let u = random::unitary(3, &mut rng);
        let back = rotate_factor(&rotate_factor(&psi, "a", &u).unwrap(), "a", &u.adjoint()).unwrap();
        for (x, y) in back.amps().iter().zip(psi.amps()) {
            assert!((x - y).norm() < 1e-12);
        }
    }

    #[test]
    fn apply_on_factors_matches_kron() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        let f = vec![qubit("a"), Factor::new("b", ["0", "1", "2"]), qubit("c")];
        let psi = random::state(f, &mut rng);
        let u = random::unitary(6, &mut rng);
        let via_factors = apply_on_factors(&u, &psi, &["a", "b"]).unwrap();
        let full = u.kron(&LinearOperator::identity(2));
        let via_kron = apply(&full, &psi).unwrap();
        for (x, y) in via_factors.amps().iter().zip(via_kron.amps()) {
            assert!((x - y).norm() < 1e-13);
        }
    }

    #[test]
    fn subspace_weight_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(29);
        let f = vec![Factor::new("a", ["0", "1", "2"]), qubit("b")];
        let psi = random::state(f, &mut rng);
        assert!((subspace_weight(&psi, |_| true) - 1.0).abs() < 1e-12);
        let pred = |t: &BasisTuple<'_>| t.symbol("a") == Some("2") || t.symbol("b") == Some("0");
        let oracle: f64 = psi
            .amps()
            .iter()
            .enumerate()
            .filter(|(i, _)| {
                let m = psi.multi_index(*i);
                m[0] == 2 || m[1] == 0
            })
            .map(|(_, a)| a.norm_sqr())
            .sum();
        assert!((subspace_weight(&psi, pred) - oracle).abs() < 1e-15);
    }

    #[test]
    fn exponential_simple_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let f = vec![Factor::new("a", ["0", "1", "2"])];
        let psi = random::state(f, &mut rng);
        let h = random::hermitian(3, &mut rng);
        let same = matrix_exponential_apply(&h, 0.0, &psi).unwrap();
        assert_eq!(same, psi);

        let lambdas = [0.3, -1.7, 2.5];
        let diag = LinearOperator::hermitian(DMatrix::from_fn(3, 3, |i, j| if i == j { c(lambdas[i]) } else { c(0.0) })).unwrap();
        let t = 1.3;
        let out = matrix_exponential_apply(&diag, t, &psi).unwrap();
        for k in 0..3 {
            let expected = psi.amps()[k] * Complex64::new(0.0, -lambdas[k] * t).exp();
            assert!((out.amps()[k] - expected).norm() < 1e-13);
        }

        let g = random::general(3, &mut rng);
        assert!(matches!(matrix_exponential_apply(&g, 1.0, &psi), Err(Error::NotHermitian(_))));
    }

    // Independent oracle: unscaled Taylor series taken in many small steps.
    fn stepped_series(h: &DMatrix<Complex64>, t: f64, v: &[Complex64], steps: usize) -> Vec<Complex64> {
        let n = v.len();
        let a = h.map(|z| Complex64::new(0.0, -t / steps as f64) * z);
        let mut x: Vec<Complex64> = v.to_vec();
        for _ in 0..steps {
            let mut sum = x.clone();
            let mut term = x.clone();
            for k in 1..30 {
                term = (0..n).map(|i| (0..n).map(|j| a[(i, j)] * term[j]).sum::<Complex64>() / k as f64).collect();
                for (s, tk) in sum.iter_mut().zip(&term) {
                    *s += tk;
                }
            }
            x = sum;
        }
        x
    }

    #[test]
    fn exponential_matches_stepped_series() {
        let mut rng = ChaCha8Rng::seed_from_u64(37);
        let f = vec![Factor::new("a", ["0", "1", "2", "3"])];
        let psi = random::state(f, &mut rng);
        let h = random::hermitian(4, &mut rng);
        let t = 2.0;
        let out = matrix_exponential_apply(&h, t, &psi).unwrap();
        let coarse = stepped_series(h.matrix(), t, psi.amps(), 64);
        let fine = stepped_series(h.matrix(), t, psi.amps(), 128);
        for k in 0..4 {
            assert!((coarse[k] - fine[k]).norm() < 1e-12);
            assert!((out.amps()[k] - fine[k]).norm() < 1e-12);
        }
        assert!((out.norm() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn document_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        let psi = random::state(vec![Factor::new("a", ["0", "1", "2"]), qubit("b")], &mut rng);
        let json = serde_json::to_string(&psi).unwrap();
        let back: StateVector = serde_json::from_str(&json).unwrap();
        for (x, y) in back.amps().iter().zip(psi.amps()) {
            assert_eq!(x.re.to_bits(), y.re.to_bits());
            assert_eq!(x.im.to_bits(), y.im.to_bits());
        }
        assert_eq!(back.factors(), psi.factors());
    }

    #[test]
    fn document_rejects_reordered_basis() {
        let psi = StateVector::basis_state(vec![qubit("a")], &["0"]).unwrap();
        let mut doc = psi.to_document();
        doc.basis.swap(0, 1);
        assert!(StateVector::try_from(doc).is_err());
    }

    #[test]
    fn duplicate_symbols_rejected() {
        let r = StateVector::zeros(vec![Factor::new("a", ["x", "x"])]);
        assert!(matches!(r, Err(Error::BasisMismatch(_))));
    }
}
