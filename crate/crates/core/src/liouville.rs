//! Lindblad generators and fixed-step RK4 integration of density matrices.
//!
//! Models are written in a rotating frame with `ħ = 1`. The generator is
//!
//! ```text
//! dρ/dt = −i[H, ρ] + Σ_k γ_k D[c_k]ρ,   D[c]ρ = cρc† − ½(c†cρ + ρc†c)
//! ```
//!
//! Operators are stored densely; [`Generator`] keeps only their nonzero
//! entries so that right-hand-side evaluations cost `O(nnz · d)` instead of
//! `O(d³)`.

use crate::error::{Error, Result};
use crate::qstate::{hermitian_eigenvalues, CMatrix, DensityMatrix, HilbertLayout, OperatorMatrix, C64, I, ZERO};

/// One dissipative channel `γ D[c]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Channel {
    pub rate: f64,
    pub op: OperatorMatrix,
}

impl Channel {
    pub fn new(rate: f64, op: OperatorMatrix) -> Self {
        Self { rate, op }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LindbladModel {
    hamiltonian: OperatorMatrix,
    channels: Vec<Channel>,
}

impl LindbladModel {
    pub fn new(hamiltonian: OperatorMatrix, channels: Vec<Channel>) -> Result<Self> {
        let herm = hamiltonian.hermiticity_error();
        if herm > 1e-10 {
            return Err(Error::InvalidState(format!("Hamiltonian is not Hermitian (deviation {herm:e})")));
        }
        for ch in &channels {
            if !(ch.rate >= 0.0) || !ch.rate.is_finite() {
                return Err(Error::Domain(format!("channel {} has rate {}", ch.op.label(), ch.rate)));
            }
            if ch.op.layout() != hamiltonian.layout() {
                return Err(Error::LayoutMismatch(format!(
                    "channel {} on {:?}, Hamiltonian on {:?}",
                    ch.op.label(),
                    ch.op.layout().factors(),
                    hamiltonian.layout().factors()
                )));
            }
        }
        Ok(Self { hamiltonian, channels })
    }

    /// Purely dissipative model.
    pub fn dissipative(layout: HilbertLayout, channels: Vec<Channel>) -> Result<Self> {
        Self::new(OperatorMatrix::zeros(layout), channels)
    }

    pub fn hamiltonian(&self) -> &OperatorMatrix {
        &self.hamiltonian
    }

    pub fn channels(&self) -> &[Channel] {
        &self.channels
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.hamiltonian.layout()
    }

    pub fn max_rate(&self) -> f64 {
        self.channels.iter().map(|c| c.rate).fold(0.0, f64::max)
    }

    pub fn hamiltonian_norm(&self) -> f64 {
        hermitian_eigenvalues(self.hamiltonian.entries()).iter().map(|x| x.abs()).fold(0.0, f64::max)
    }

    /// Largest step accepted by [`integrate`]: `0.1 / max(rates, ‖H‖)`.
    pub fn stability_limit(&self) -> f64 {
        let scale = self.max_rate().max(self.hamiltonian_norm());
        if scale == 0.0 {
            f64::INFINITY
        } else {
            0.1 / scale
        }
    }
}

/// `D[c]ρ = cρc† − ½(c†cρ + ρc†c)`.
pub fn dissipator(c: &OperatorMatrix, rho: &DensityMatrix) -> Result<CMatrix> {
    if c.layout() != rho.layout() {
        return Err(Error::LayoutMismatch("dissipator operator and state".into()));
    }
    let c = c.entries();
    let r = rho.entries();
    let cd = c.adjoint();
    let cdc = &cd * c;
    Ok(c * r * &cd - (&cdc * r + r * &cdc).unscale(2.0))
}

pub fn lindblad_rhs(model: &LindbladModel, rho: &DensityMatrix) -> Result<CMatrix> {
    if model.layout() != rho.layout() {
        return Err(Error::LayoutMismatch("model and state".into()));
    }
    let gen = Generator::compile(model);
    let d = rho.layout().total_dim();
    let mut out = CMatrix::zeros(d, d);
    let mut scratch = CMatrix::zeros(d, d);
    gen.apply(rho.entries().as_slice(), out.as_mut_slice(), scratch.as_mut_slice());
    Ok(out)
}

#[derive(Debug, Clone)]
struct SparseOp {
    // (row, col, value)
    entries: Vec<(usize, usize, C64)>,
}

impl SparseOp {
    fn from_dense(m: &CMatrix, scale: C64) -> Self {
        let mut entries = Vec::new();
        for c in 0..m.ncols() {
            for r in 0..m.nrows() {
                let v = m[(r, c)];
                if v != ZERO {
                    entries.push((r, c, v * scale));
                }
            }
        }
        Self { entries }
    }

    /// `out += S · x` for column-major `d × d` slices.
    #[inline]
    fn left_mul_add(&self, x: &[C64], out: &mut [C64], d: usize) {
        for j in 0..d {
            let xc = &x[j * d..(j + 1) * d];
            let oc = &mut out[j * d..(j + 1) * d];
            for &(r, c, v) in &self.entries {
                oc[r] += v * xc[c];
            }
        }
    }

    /// `out += x · S†` for column-major `d × d` slices.
    #[inline]
    fn right_mul_adj_add(&self, x: &[C64], out: &mut [C64], d: usize) {
        for &(r, c, v) in &self.entries {
            let vc = v.conj();
            let (xc, oc) = (c * d, r * d);
            for i in 0..d {
                out[oc + i] += vc * x[xc + i];
            }
        }
    }
}

/// Compiled form of a [`LindbladModel`]:
/// `dρ/dt = −i(H_eff ρ − ρ H_eff†) + Σ_k L_k ρ L_k†` with
/// `H_eff = H − (i/2) Σ_k γ_k c_k†c_k` and `L_k = √γ_k c_k`.
#[derive(Debug, Clone)]
pub struct Generator {
    dim: usize,
    // −i H_eff
    drift: SparseOp,
    jumps: Vec<SparseOp>,
}

impl Generator {
    pub fn compile(model: &LindbladModel) -> Self {
        let d = model.layout().total_dim();
        let mut heff = model.hamiltonian.entries().clone();
        let mut jumps = Vec::new();
        for ch in &model.channels {
            if ch.rate == 0.0 {
                continue;
            }
            let c = ch.op.entries();
            heff -= (c.adjoint() * c).map(|z| z * C64::new(0.0, 0.5 * ch.rate));
            jumps.push(SparseOp::from_dense(c, C64::from(ch.rate.sqrt())));
        }
        Self { dim: d, drift: SparseOp::from_dense(&heff, -I), jumps }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Writes `L(ρ)` into `out`; `scratch` is clobbered. All slices are
    /// column-major `d × d`.
    pub fn apply(&self, rho: &[C64], out: &mut [C64], scratch: &mut [C64]) {
        let d = self.dim;
        out.fill(ZERO);
        // (−iH_eff)ρ + ρ(−iH_eff)† = −iH_eff ρ + iρH_eff†
        self.drift.left_mul_add(rho, out, d);
        self.drift.right_mul_adj_add(rho, out, d);
        for l in &self.jumps {
            scratch.fill(ZERO);
            l.left_mul_add(rho, scratch, d);
            l.right_mul_adj_add(scratch, out, d);
        }
    }
}

/// Fixed-step classical RK4 over `t_grid`, returning one snapshot per grid
/// point (the first is `ρ0` itself). Each interval is split into the
/// smallest number of equal sub-steps not exceeding `step`.
pub fn integrate(model: &LindbladModel, rho0: &DensityMatrix, t_grid: &[f64], step: f64) -> Result<Vec<DensityMatrix>> {
    let mut out = Vec::with_capacity(t_grid.len());
    integrate_with(model, rho0, t_grid, step, |_, rho| {
        out.push(rho.clone());
        Ok(())
    })?;
    Ok(out)
}

/// As [`integrate`], but hands each snapshot to `visit` instead of storing it.
pub fn integrate_with<F>(model: &LindbladModel, rho0: &DensityMatrix, t_grid: &[f64], step: f64, mut visit: F) -> Result<()>
where
    F: FnMut(f64, &DensityMatrix) -> Result<()>,
{
    if model.layout() != rho0.layout() {
        return Err(Error::LayoutMismatch("model and initial state".into()));
    }
    if !(step > 0.0) {
        return Err(Error::Domain(format!("integration step {step} must be positive")));
    }
    let limit = model.stability_limit();
    if step > limit {
        return Err(Error::StepTooLarge { step, limit });
    }
    if t_grid.is_empty() {
        return Ok(());
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("time grid must be strictly increasing".into()));
    }

    let gen = Generator::compile(model);
    let d = gen.dim();
    let n = d * d;
    let layout = rho0.layout().clone();
    let trace0 = rho0.trace();

    let mut rho = rho0.entries().clone();
    let mut k = vec![ZERO; n];
    let mut acc = vec![ZERO; n];
    let mut stage = vec![ZERO; n];
    let mut scratch = vec![ZERO; n];

    visit(t_grid[0], rho0)?;
    for w in t_grid.windows(2) {
        let span = w[1] - w[0];
        let substeps = ((span / step) * (1.0 - 1e-12)).ceil().max(1.0) as usize;
        let h = span / substeps as f64;
        for s in 0..substeps {
            let r = rho.as_mut_slice();
            // k1
            gen.apply(r, &mut k, &mut scratch);
            for i in 0..n {
                acc[i] = k[i];
                stage[i] = r[i] + k[i] * (0.5 * h);
            }
            // k2
            gen.apply(&stage, &mut k, &mut scratch);
            for i in 0..n {
                acc[i] += k[i] * 2.0;
                stage[i] = r[i] + k[i] * (0.5 * h);
            }
            // k3
            gen.apply(&stage, &mut k, &mut scratch);
            for i in 0..n {
                acc[i] += k[i] * 2.0;
                stage[i] = r[i] + k[i] * h;
            }
            // k4
            gen.apply(&stage, &mut k, &mut scratch);
            for i in 0..n {
                r[i] += (acc[i] + k[i]) * (h / 6.0);
            }
            hermitize(&mut rho);
            let drift = (rho.trace() - trace0).norm();
            if drift > 1e-6 || !drift.is_finite() {
                return Err(Error::TraceDrift { drift, time: w[0] + (s + 1) as f64 * h });
            }
        }
        visit(w[1], &DensityMatrix::new(layout.clone(), rho.clone())?)?;
    }
    Ok(())
}

pub(crate) fn hermitize(m: &mut CMatrix) {
    let d = m.nrows();
    for i in 0..d {
        m[(i, i)].im = 0.0;
        for j in (i + 1)..d {
            let avg = (m[(i, j)] + m[(j, i)].conj()) * 0.5;
            m[(i, j)] = avg;
            m[(j, i)] = avg.conj();
        }
    }
}

/// Uniform grid `0, dt, 2dt, …` with `n + 1` points.
pub fn uniform_grid(t_final: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|k| t_final * k as f64 / n as f64).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{
        annihilation_op, creation_op, expectation, fock, max_abs, number_op, qubit_layout, sigma_minus, sigma_plus,
        sigma_z, StateVector, Tensor, CVector, ONE,
    };

    fn ket_plus() -> DensityMatrix {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let psi = StateVector::new(qubit_layout(), CVector::from_vec(vec![C64::from(s), C64::from(s)])).unwrap();
        DensityMatrix::from_pure(&psi)
    }

    fn thermal_field(n: usize, gm: f64, gp: f64) -> LindbladModel {
        let layout = HilbertLayout::single(n).unwrap();
        LindbladModel::dissipative(
            layout,
            vec![Channel::new(gm, annihilation_op(n).unwrap()), Channel::new(gp, creation_op(n).unwrap())],
        )
        .unwrap()
    }

    #[test]
    fn dissipator_on_fock_states() {
        let a = annihilation_op(3).unwrap();
        let vac = DensityMatrix::from_pure(&fock(3, 0).unwrap());
        assert_eq!(max_abs(&dissipator(&a, &vac).unwrap()), 0.0);
        let one = DensityMatrix::from_pure(&fock(3, 1).unwrap());
        let d = dissipator(&a, &one).unwrap();
        let mut want = CMatrix::zeros(3, 3);
        want[(0, 0)] = ONE;
        want[(1, 1)] = -ONE;
        assert!(max_abs(&(d - want)) < 1e-15);
    }

    #[test]
    fn dissipator_on_plus_state() {
        // σ−ρσ+ = ½|g⟩⟨g|; σ+σ− = |e⟩⟨e|; {|e⟩⟨e|, |+⟩⟨+|} = [[0, ½], [½, 1]]
        let d = dissipator(&sigma_minus(), &ket_plus()).unwrap();
        let h = C64::from(0.5);
        let q = C64::from(0.25);
        let want = CMatrix::from_row_slice(2, 2, &[h, -q, -q, -h]);
        assert!(max_abs(&(&d - want)) < 1e-15);
        assert!(d.trace().norm() < 1e-15);
        assert!(max_abs(&(&d - d.adjoint())) < 1e-15);
    }

    #[test]
    fn rhs_reduces_to_single_dissipator() {
        let g = 0.3;
        let n = 4;
        let model = LindbladModel::dissipative(
            HilbertLayout::single(n).unwrap(),
            vec![Channel::new(g, annihilation_op(n).unwrap())],
        )
        .unwrap();
        let one = DensityMatrix::from_pure(&fock(n, 1).unwrap());
        let rhs = lindblad_rhs(&model, &one).unwrap();
        let mut want = CMatrix::zeros(n, n);
        want[(0, 0)] = C64::from(g);
        want[(1, 1)] = C64::from(-g);
        assert!(max_abs(&(rhs - want)) < 1e-15);
    }

    #[test]
    fn thermal_state_is_stationary() {
        let (gm, gp) = (0.4, 0.1);
        let n = 40;
        let x: f64 = gp / gm;
        let norm: f64 = (0..n).map(|m| x.powi(m as i32)).sum();
        let mut rho = CMatrix::zeros(n, n);
        for m in 0..n {
            rho[(m, m)] = C64::from(x.powi(m as i32) / norm);
        }
        let rho = DensityMatrix::new(HilbertLayout::single(n).unwrap(), rho).unwrap();
        let nbar = expectation(&rho, &number_op(n).unwrap()).unwrap().re;
        assert!((nbar - gp / (gm - gp)).abs() < 1e-10);
        let rhs = lindblad_rhs(&thermal_field(n, gm, gp), &rho).unwrap();
        assert!(max_abs(&rhs) < 1e-10);
    }

    #[test]
    fn rhs_matches_dense_construction() {
        let layout = HilbertLayout::new(vec![2, 3]).unwrap();
        let a = annihilation_op(3).unwrap().embed(&layout, 1).unwrap();
        let sm = sigma_minus().embed(&layout, 0).unwrap();
        let coupling = sm.adjoint().compose(&a).unwrap();
        let h = coupling.add(&coupling.adjoint()).unwrap().scale(C64::from(0.7));
        let model = LindbladModel::new(h.clone(), vec![Channel::new(0.2, a.clone()), Channel::new(0.05, sm.clone())]).unwrap();
        let psi = StateVector::new(
            layout.clone(),
            CVector::from_vec((0..6).map(|k| C64::new(k as f64 * 0.3 - 0.5, 0.1 * k as f64)).collect()),
        )
        .unwrap()
        .normalized()
        .unwrap();
        let rho = DensityMatrix::from_pure(&psi);
        let r = rho.entries();
        let dense = (h.entries() * r - r * h.entries()).map(|z| -I * z)
            + dissipator(&a, &rho).unwrap() * C64::from(0.2)
            + dissipator(&sm, &rho).unwrap() * C64::from(0.05);
        let fast = lindblad_rhs(&model, &rho).unwrap();
        assert!(max_abs(&(fast.clone() - dense)) < 1e-14);
        assert!(fast.trace().norm() < 1e-12);
    }

    #[test]
    fn static_model_leaves_state_alone() {
        let model = LindbladModel::dissipative(qubit_layout(), vec![]).unwrap();
        let rho0 = ket_plus();
        let snaps = integrate(&model, &rho0, &[0.0, 1.0, 2.5], 0.1).unwrap();
        assert_eq!(snaps.len(), 3);
        for s in &snaps {
            assert!(max_abs(&(s.entries() - rho0.entries())) < 1e-15);
        }
    }

    #[test]
    fn qubit_decay_is_exponential() {
        let g = 1.0;
        let model = LindbladModel::dissipative(qubit_layout(), vec![Channel::new(g, sigma_minus())]).unwrap();
        let rho0 = DensityMatrix::basis(qubit_layout(), 1).unwrap();
        let snaps = integrate(&model, &rho0, &[0.0, 1.0], 0.01).unwrap();
        assert!((snaps[1].population(1) - (-g * 1.0f64).exp()).abs() < 1e-6);
        assert!(snaps[1].hygiene().is_valid());
    }

    #[test]
    fn single_photon_decay() {
        let gm = 0.5;
        let n = 4;
        let model = thermal_field(n, gm, 0.0);
        let rho0 = DensityMatrix::from_pure(&fock(n, 1).unwrap());
        let t = 2.0;
        let snaps = integrate(&model, &rho0, &[0.0, t], 0.01).unwrap();
        let nbar = expectation(&snaps[1], &number_op(n).unwrap()).unwrap().re;
        assert!((nbar - (-gm * t).exp()).abs() < 1e-6);
    }

    #[test]
    fn fourth_order_convergence() {
        // Error of RK4 should drop ~16x per halving of the step.
        let model = LindbladModel::dissipative(qubit_layout(), vec![Channel::new(1.0, sigma_minus())]).unwrap();
        let rho0 = DensityMatrix::basis(qubit_layout(), 1).unwrap();
        let exact = (-1.0f64).exp();
        let err = |h: f64| (integrate(&model, &rho0, &[0.0, 1.0], h).unwrap()[1].population(1) - exact).abs();
        let (e1, e2) = (err(0.1), err(0.05));
        let ratio = e1 / e2;
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn rejects_oversized_step_and_bad_grids() {
        let model = LindbladModel::dissipative(qubit_layout(), vec![Channel::new(10.0, sigma_minus())]).unwrap();
        let rho0 = DensityMatrix::basis(qubit_layout(), 1).unwrap();
        assert!(matches!(integrate(&model, &rho0, &[0.0, 1.0], 0.02), Err(Error::StepTooLarge { .. })));
        assert!(integrate(&model, &rho0, &[0.0, 0.0], 0.001).is_err());
        assert!(LindbladModel::dissipative(qubit_layout(), vec![Channel::new(-1.0, sigma_plus())]).is_err());
        let not_hermitian = sigma_minus();
        assert!(LindbladModel::new(not_hermitian, vec![]).is_err());
    }

    #[test]
    fn integration_keeps_density_matrix_healthy() {
        let layout = HilbertLayout::new(vec![2, 4]).unwrap();
        let a = annihilation_op(4).unwrap().embed(&layout, 1).unwrap();
        let sz = sigma_z().embed(&layout, 0).unwrap();
        let sm = sigma_minus().embed(&layout, 0).unwrap();
        let x = sm.adjoint().compose(&a).unwrap();
        let h = x.add(&x.adjoint()).unwrap().add(&sz.scale(C64::from(0.3))).unwrap();
        let model = LindbladModel::new(h, vec![Channel::new(0.5, a), Channel::new(0.1, sm)]).unwrap();
        let psi = StateVector::basis(qubit_layout(), 1).unwrap().tensor(&fock(4, 1).unwrap());
        let snaps = integrate(&model, &DensityMatrix::from_pure(&psi), &uniform_grid(5.0, 10), 0.01).unwrap();
        for s in snaps {
            assert!(s.hygiene().is_valid(), "{:?}", s.hygiene());
        }
    }
}
