//! Dense complex linear algebra on finite tensor-product Hilbert spaces.
//!
//! Composite basis indices are row-major over the factor list: the first
//! factor varies slowest. The three-level atom uses the basis order
//! `(|g⟩, |e⟩, |i⟩) = (0, 1, 2)` and a qubit uses `(|g⟩, |e⟩) = (0, 1)`.

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use rand::Rng;

use crate::error::{Error, Result};

pub type C64 = Complex64;
pub type CMatrix = DMatrix<C64>;
pub type CVector = DVector<C64>;

pub(crate) const ZERO: C64 = C64::new(0.0, 0.0);
pub(crate) const ONE: C64 = C64::new(1.0, 0.0);
pub(crate) const I: C64 = C64::new(0.0, 1.0);

/// Ordered list of subsystem dimensions.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct HilbertLayout {
    factors: Vec<usize>,
    total_dim: usize,
}

impl HilbertLayout {
    pub fn new(factors: Vec<usize>) -> Result<Self> {
        if factors.is_empty() {
            return Err(Error::InvalidDimension("layout needs at least one factor".into()));
        }
        if let Some(d) = factors.iter().find(|&&d| d < 2) {
            return Err(Error::InvalidDimension(format!("factor dimension {d} < 2")));
        }
        let total_dim = factors.iter().product();
        Ok(Self { factors, total_dim })
    }

    pub fn single(dim: usize) -> Result<Self> {
        Self::new(vec![dim])
    }

    pub fn factors(&self) -> &[usize] {
        &self.factors
    }

    pub fn total_dim(&self) -> usize {
        self.total_dim
    }

    /// Layout of `self ⊗ other`.
    pub fn tensor(&self, other: &HilbertLayout) -> HilbertLayout {
        let mut factors = self.factors.clone();
        factors.extend_from_slice(&other.factors);
        HilbertLayout { total_dim: self.total_dim * other.total_dim, factors }
    }

    /// Flat index of a product basis state, one level per factor.
    pub fn index_of(&self, levels: &[usize]) -> Result<usize> {
        if levels.len() != self.factors.len() {
            return Err(Error::LayoutMismatch(format!(
                "{} levels for a {}-factor layout",
                levels.len(),
                self.factors.len()
            )));
        }
        let mut idx = 0;
        for (&l, &d) in levels.iter().zip(&self.factors) {
            if l >= d {
                return Err(Error::InvalidDimension(format!("level {l} out of range for factor of dimension {d}")));
            }
            idx = idx * d + l;
        }
        Ok(idx)
    }

    /// Inverse of [`index_of`](Self::index_of).
    pub fn levels_of(&self, mut index: usize) -> Vec<usize> {
        let mut levels = vec![0; self.factors.len()];
        for (slot, &d) in levels.iter_mut().zip(&self.factors).rev() {
            *slot = index % d;
            index /= d;
        }
        levels
    }

    fn check_same(&self, other: &HilbertLayout) -> Result<()> {
        if self != other {
            return Err(Error::LayoutMismatch(format!("{:?} vs {:?}", self.factors, other.factors)));
        }
        Ok(())
    }
}

/// Levels of the cascade three-level atom.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum AtomLevel {
    G,
    E,
    I,
}

impl AtomLevel {
    pub const ALL: [AtomLevel; 3] = [AtomLevel::G, AtomLevel::E, AtomLevel::I];

    pub fn index(self) -> usize {
        match self {
            AtomLevel::G => 0,
            AtomLevel::E => 1,
            AtomLevel::I => 2,
        }
    }
}

/// A pure state, not necessarily normalized.
#[derive(Debug, Clone, PartialEq)]
pub struct StateVector {
    layout: HilbertLayout,
    amplitudes: CVector,
}

impl StateVector {
    pub fn new(layout: HilbertLayout, amplitudes: CVector) -> Result<Self> {
        if amplitudes.len() != layout.total_dim() {
            return Err(Error::InvalidDimension(format!(
                "{} amplitudes for total dimension {}",
                amplitudes.len(),
                layout.total_dim()
            )));
        }
        Ok(Self { layout, amplitudes })
    }

    /// Computational basis state `index`.
    pub fn basis(layout: HilbertLayout, index: usize) -> Result<Self> {
        let d = layout.total_dim();
        if index >= d {
            return Err(Error::InvalidDimension(format!("basis index {index} >= {d}")));
        }
        let mut amplitudes = CVector::zeros(d);
        amplitudes[index] = ONE;
        Ok(Self { layout, amplitudes })
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn amplitudes(&self) -> &CVector {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> CVector {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.norm_squared()
    }

    pub fn is_normalized(&self) -> bool {
        (self.norm_sqr() - 1.0).abs() <= 1e-10
    }

    pub fn normalized(&self) -> Result<Self> {
        let n = self.amplitudes.norm();
        if n == 0.0 || !n.is_finite() {
            return Err(Error::InvalidState("cannot normalize a zero-norm state".into()));
        }
        Ok(Self { layout: self.layout.clone(), amplitudes: self.amplitudes.unscale(n) })
    }

    /// `⟨ψ|O|ψ⟩` (unnormalized).
    pub fn expectation(&self, op: &OperatorMatrix) -> Result<C64> {
        self.layout.check_same(&op.layout)?;
        Ok(self.amplitudes.dotc(&(&op.entries * &self.amplitudes)))
    }

    pub fn apply(&self, op: &OperatorMatrix) -> Result<StateVector> {
        self.layout.check_same(&op.layout)?;
        Ok(StateVector { layout: self.layout.clone(), amplitudes: &op.entries * &self.amplitudes })
    }

    pub fn inner(&self, other: &StateVector) -> Result<C64> {
        self.layout.check_same(&other.layout)?;
        Ok(self.amplitudes.dotc(&other.amplitudes))
    }
}

/// Mixed state `ρ`.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityMatrix {
    layout: HilbertLayout,
    entries: CMatrix,
}

/// Numerical health of a density matrix.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hygiene {
    pub trace_error: f64,
    pub hermiticity_error: f64,
    pub min_eigenvalue: f64,
}

impl Hygiene {
    pub const TRACE_TOL: f64 = 1e-9;
    pub const HERMITIAN_TOL: f64 = 1e-10;
    pub const EIGEN_FLOOR: f64 = -1e-8;

    pub fn is_valid(&self) -> bool {
        self.trace_error <= Self::TRACE_TOL
            && self.hermiticity_error <= Self::HERMITIAN_TOL
            && self.min_eigenvalue >= Self::EIGEN_FLOOR
    }

    /// Componentwise worst case of two reports.
    pub fn worst(self, other: Hygiene) -> Hygiene {
        Hygiene {
            trace_error: self.trace_error.max(other.trace_error),
            hermiticity_error: self.hermiticity_error.max(other.hermiticity_error),
            min_eigenvalue: self.min_eigenvalue.min(other.min_eigenvalue),
        }
    }
}

impl Default for Hygiene {
    fn default() -> Self {
        Hygiene { trace_error: 0.0, hermiticity_error: 0.0, min_eigenvalue: f64::INFINITY }
    }
}

impl DensityMatrix {
    /// Wraps a matrix without checking the physical invariants; see
    /// [`validate`](Self::validate).
    pub fn new(layout: HilbertLayout, entries: CMatrix) -> Result<Self> {
        let d = layout.total_dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::InvalidDimension(format!(
                "{}x{} matrix for total dimension {d}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { layout, entries })
    }

    pub fn from_pure(psi: &StateVector) -> Self {
        let a = &psi.amplitudes;
        Self { layout: psi.layout.clone(), entries: a * a.adjoint() }
    }

    pub fn basis(layout: HilbertLayout, index: usize) -> Result<Self> {
        Ok(Self::from_pure(&StateVector::basis(layout, index)?))
    }

    pub fn maximally_mixed(layout: HilbertLayout) -> Self {
        let d = layout.total_dim();
        Self { entries: CMatrix::identity(d, d).unscale(d as f64), layout }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn into_entries(self) -> CMatrix {
        self.entries
    }

    pub fn trace(&self) -> C64 {
        self.entries.trace()
    }

    pub fn purity(&self) -> f64 {
        (&self.entries * &self.entries).trace().re
    }

    pub fn population(&self, index: usize) -> f64 {
        self.entries[(index, index)].re
    }

    pub fn hygiene(&self) -> Hygiene {
        let herm = max_abs(&(&self.entries - self.entries.adjoint()));
        let eig = hermitian_eigenvalues(&self.entries);
        Hygiene {
            trace_error: (self.trace() - ONE).norm(),
            hermiticity_error: herm,
            min_eigenvalue: eig.iter().cloned().fold(f64::INFINITY, f64::min),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = self.hygiene();
        if !h.is_valid() {
            return Err(Error::InvalidState(format!(
                "density matrix fails invariants: trace error {:e}, hermiticity {:e}, min eigenvalue {:e}",
                h.trace_error, h.hermiticity_error, h.min_eigenvalue
            )));
        }
        Ok(())
    }

    /// Population of the top Fock level of `factor`.
    pub fn top_level_population(&self, factor: usize) -> Result<f64> {
        let nf = self.layout.factors().len();
        if factor >= nf {
            return Err(Error::LayoutMismatch(format!("factor {factor} of {nf}")));
        }
        let reduced = partial_trace(self, factor)?;
        let top = reduced.entries.nrows() - 1;
        Ok(reduced.population(top))
    }
}

/// Square operator on a declared layout.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorMatrix {
    layout: HilbertLayout,
    entries: CMatrix,
    label: String,
}

impl OperatorMatrix {
    pub fn new(layout: HilbertLayout, entries: CMatrix, label: impl Into<String>) -> Result<Self> {
        let d = layout.total_dim();
        if entries.nrows() != d || entries.ncols() != d {
            return Err(Error::InvalidDimension(format!(
                "{}x{} operator for total dimension {d}",
                entries.nrows(),
                entries.ncols()
            )));
        }
        Ok(Self { layout, entries, label: label.into() })
    }

    pub fn identity(layout: HilbertLayout) -> Self {
        let d = layout.total_dim();
        Self { entries: CMatrix::identity(d, d), layout, label: "I".into() }
    }

    pub fn zeros(layout: HilbertLayout) -> Self {
        let d = layout.total_dim();
        Self { entries: CMatrix::zeros(d, d), layout, label: "0".into() }
    }

    pub fn layout(&self) -> &HilbertLayout {
        &self.layout
    }

    pub fn entries(&self) -> &CMatrix {
        &self.entries
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn dim(&self) -> usize {
        self.layout.total_dim()
    }

    pub fn adjoint(&self) -> Self {
        Self { layout: self.layout.clone(), entries: self.entries.adjoint(), label: format!("{}†", self.label) }
    }

    pub fn compose(&self, rhs: &OperatorMatrix) -> Result<Self> {
        self.layout.check_same(&rhs.layout)?;
        Ok(Self {
            layout: self.layout.clone(),
            entries: &self.entries * &rhs.entries,
            label: format!("{}{}", self.label, rhs.label),
        })
    }

    pub fn add(&self, rhs: &OperatorMatrix) -> Result<Self> {
        self.layout.check_same(&rhs.layout)?;
        Ok(Self {
            layout: self.layout.clone(),
            entries: &self.entries + &rhs.entries,
            label: format!("{} + {}", self.label, rhs.label),
        })
    }

    pub fn scale(&self, c: C64) -> Self {
        Self { layout: self.layout.clone(), entries: self.entries.map(|z| z * c), label: self.label.clone() }
    }

    pub fn hermiticity_error(&self) -> f64 {
        max_abs(&(&self.entries - self.entries.adjoint()))
    }

    /// Lifts an operator acting on `factor` of `layout` to the full space.
    pub fn embed(&self, layout: &HilbertLayout, factor: usize) -> Result<Self> {
        let factors = layout.factors();
        if factor >= factors.len() {
            return Err(Error::LayoutMismatch(format!("factor {factor} of {}", factors.len())));
        }
        if factors[factor] != self.dim() {
            return Err(Error::LayoutMismatch(format!(
                "operator of dimension {} on factor of dimension {}",
                self.dim(),
                factors[factor]
            )));
        }
        let mut out: Option<CMatrix> = None;
        for (k, &d) in factors.iter().enumerate() {
            let m = if k == factor { self.entries.clone() } else { CMatrix::identity(d, d) };
            out = Some(match out {
                None => m,
                Some(acc) => acc.kronecker(&m),
            });
        }
        Ok(Self { layout: layout.clone(), entries: out.expect("non-empty layout"), label: self.label.clone() })
    }
}

/// Kronecker composition, `self ⊗ other`.
pub trait Tensor<Rhs = Self> {
    type Output;
    fn tensor(&self, other: &Rhs) -> Self::Output;
}

impl Tensor for OperatorMatrix {
    type Output = OperatorMatrix;
    fn tensor(&self, other: &OperatorMatrix) -> OperatorMatrix {
        OperatorMatrix {
            layout: self.layout.tensor(&other.layout),
            entries: self.entries.kronecker(&other.entries),
            label: format!("{}⊗{}", self.label, other.label),
        }
    }
}

impl Tensor for StateVector {
    type Output = StateVector;
    fn tensor(&self, other: &StateVector) -> StateVector {
        StateVector {
            layout: self.layout.tensor(&other.layout),
            amplitudes: self.amplitudes.kronecker(&other.amplitudes),
        }
    }
}

impl Tensor for DensityMatrix {
    type Output = DensityMatrix;
    fn tensor(&self, other: &DensityMatrix) -> DensityMatrix {
        DensityMatrix {
            layout: self.layout.tensor(&other.layout),
            entries: self.entries.kronecker(&other.entries),
        }
    }
}

/// Bosonic annihilation operator truncated to `n_trunc` Fock levels.
pub fn annihilation_op(n_trunc: usize) -> Result<OperatorMatrix> {
    if n_trunc < 2 {
        return Err(Error::InvalidDimension(format!("Fock truncation {n_trunc} < 2")));
    }
    let mut m = CMatrix::zeros(n_trunc, n_trunc);
    for k in 1..n_trunc {
        m[(k - 1, k)] = C64::from((k as f64).sqrt());
    }
    OperatorMatrix::new(HilbertLayout::single(n_trunc)?, m, "a")
}

pub fn creation_op(n_trunc: usize) -> Result<OperatorMatrix> {
    Ok(annihilation_op(n_trunc)?.adjoint().with_label("a†"))
}

/// `a†a`, built as the exact diagonal `diag(0, 1, …, n_trunc − 1)`.
pub fn number_op(n_trunc: usize) -> Result<OperatorMatrix> {
    if n_trunc < 2 {
        return Err(Error::InvalidDimension(format!("Fock truncation {n_trunc} < 2")));
    }
    let diag = CVector::from_iterator(n_trunc, (0..n_trunc).map(|m| C64::from(m as f64)));
    OperatorMatrix::new(HilbertLayout::single(n_trunc)?, CMatrix::from_diagonal(&diag), "n")
}

/// Fock state `|m⟩` in a mode truncated to `n_trunc` levels.
pub fn fock(n_trunc: usize, m: usize) -> Result<StateVector> {
    StateVector::basis(HilbertLayout::single(n_trunc)?, m)
}

pub fn atom_ket(level: AtomLevel) -> StateVector {
    StateVector::basis(atom_layout(), level.index()).expect("atom basis")
}

pub fn atom_layout() -> HilbertLayout {
    HilbertLayout::single(3).expect("3 >= 2")
}

pub fn qubit_layout() -> HilbertLayout {
    HilbertLayout::single(2).expect("2 >= 2")
}

/// `|to⟩⟨from|` on the three-level atom.
pub fn atom_transition(from: AtomLevel, to: AtomLevel) -> OperatorMatrix {
    let mut m = CMatrix::zeros(3, 3);
    m[(to.index(), from.index())] = ONE;
    OperatorMatrix::new(atom_layout(), m, format!("|{to:?}⟩⟨{from:?}|")).expect("3x3")
}

fn qubit_op(entries: [[C64; 2]; 2], label: &str) -> OperatorMatrix {
    let m = CMatrix::from_fn(2, 2, |r, c| entries[r][c]);
    OperatorMatrix::new(qubit_layout(), m, label).expect("2x2")
}

/// `σ− = |g⟩⟨e|`.
pub fn sigma_minus() -> OperatorMatrix {
    qubit_op([[ZERO, ONE], [ZERO, ZERO]], "σ-")
}

/// `σ+ = |e⟩⟨g|`.
pub fn sigma_plus() -> OperatorMatrix {
    qubit_op([[ZERO, ZERO], [ONE, ZERO]], "σ+")
}

pub fn sigma_x() -> OperatorMatrix {
    qubit_op([[ZERO, ONE], [ONE, ZERO]], "σx")
}

pub fn sigma_y() -> OperatorMatrix {
    qubit_op([[ZERO, -I], [I, ZERO]], "σy")
}

/// `σz = |e⟩⟨e| − |g⟩⟨g|`.
pub fn sigma_z() -> OperatorMatrix {
    qubit_op([[-ONE, ZERO], [ZERO, ONE]], "σz")
}

/// Reduced state on factor `keep`.
pub fn partial_trace(rho: &DensityMatrix, keep: usize) -> Result<DensityMatrix> {
    let factors = rho.layout.factors();
    if keep >= factors.len() {
        return Err(Error::LayoutMismatch(format!("cannot keep factor {keep} of {}", factors.len())));
    }
    let dk = factors[keep];
    let outer: usize = factors[..keep].iter().product();
    let inner: usize = factors[keep + 1..].iter().product();
    let m = &rho.entries;
    let mut out = CMatrix::zeros(dk, dk);
    for a in 0..outer {
        for b in 0..inner {
            for i in 0..dk {
                let row = (a * dk + i) * inner + b;
                for j in 0..dk {
                    let col = (a * dk + j) * inner + b;
                    out[(i, j)] += m[(row, col)];
                }
            }
        }
    }
    DensityMatrix::new(HilbertLayout::single(dk)?, out)
}

/// `tr(ρ O)`.
pub fn expectation(rho: &DensityMatrix, op: &OperatorMatrix) -> Result<C64> {
    rho.layout.check_same(&op.layout)?;
    // tr(ρO) = Σ_ij ρ_ij O_ji without forming the product.
    let d = rho.layout.total_dim();
    let mut acc = ZERO;
    for i in 0..d {
        for j in 0..d {
            acc += rho.entries[(i, j)] * op.entries[(j, i)];
        }
    }
    Ok(acc)
}

/// `½ tr|ρ − σ|`.
pub fn trace_distance(rho: &DensityMatrix, sigma: &DensityMatrix) -> Result<f64> {
    rho.layout.check_same(&sigma.layout)?;
    let diff = &rho.entries - &sigma.entries;
    Ok(0.5 * hermitian_eigenvalues(&diff).iter().map(|x| x.abs()).sum::<f64>())
}

/// Eigenvalues of the Hermitian part of `m`.
pub fn hermitian_eigenvalues(m: &CMatrix) -> Vec<f64> {
    let h = (m + m.adjoint()).unscale(2.0);
    h.symmetric_eigenvalues().iter().cloned().collect()
}

pub fn max_abs(m: &CMatrix) -> f64 {
    m.iter().map(|z| z.norm()).fold(0.0, f64::max)
}

/// `‖U†U − I‖_max`.
pub fn unitarity_deviation(u: &CMatrix) -> f64 {
    if u.nrows() != u.ncols() {
        return f64::INFINITY;
    }
    let n = u.nrows();
    max_abs(&(u.adjoint() * u - CMatrix::identity(n, n)))
}

pub(crate) fn check_unitary(u: &CMatrix, what: &'static str) -> Result<()> {
    let deviation = unitarity_deviation(u);
    if deviation > 1e-12 {
        return Err(Error::NotUnitary { what, deviation });
    }
    Ok(())
}

/// `exp(iH)` for a random Hermitian `H` with entries uniform in a unit box.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let mut h = CMatrix::zeros(dim, dim);
    for i in 0..dim {
        h[(i, i)] = C64::from(rng.gen_range(-std::f64::consts::PI..std::f64::consts::PI));
        for j in (i + 1)..dim {
            let z = C64::new(rng.gen_range(-1.0..1.0), rng.gen_range(-1.0..1.0));
            h[(i, j)] = z;
            h[(j, i)] = z.conj();
        }
    }
    let eig = h.symmetric_eigen();
    let phases = CMatrix::from_diagonal(&eig.eigenvalues.map(|l| C64::from_polar(1.0, l)));
    &eig.eigenvectors * phases * eig.eigenvectors.adjoint()
}
