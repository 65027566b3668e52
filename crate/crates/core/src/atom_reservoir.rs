//! Engineered thermal reservoir for a cavity mode built from a beam of
//! cascade three-level atoms.
//!
//! Each atom enters in `|e⟩`, is first resonant with the cavity on the
//! `g–e` transition for `δt1`, then on the `e–i` transition for `δt2`,
//! and is finally rotated by a 3×3 unitary `R` and detected. Detection in
//! `|m⟩` applies the field Kraus operator `K_m = ⟨m|R U2 U1|e⟩`. With
//! `R = I` these reduce, to second order in `λδt`, to the no-jump operator
//! (`|e⟩`), the photon creation jump `−iλ1δt1 a†` (`|g⟩`) and the photon
//! annihilation jump `−iλ2δt2 a` (`|i⟩`).
//!
//! The propagators are exact: each Jaynes–Cummings stage is a set of 2×2
//! rotations inside its excitation manifolds.

use crate::error::{Error, Result};
use crate::liouville::{dissipator, Channel, LindbladModel};
use crate::qstate::{
    annihilation_op, check_unitary, creation_op, max_abs, AtomLevel, CMatrix, DensityMatrix, HilbertLayout, OperatorMatrix,
    StateVector, C64, I,
};
use crate::unraveller::{run_trajectory, ChannelSet, Observable, SampleGrid, TrajectoryRecord};

/// Largest `λδt` treated as a short interaction.
pub const MAX_INTERACTION_ANGLE: f64 = 0.1;

/// Top Fock population above which a run is declared truncation-limited.
pub const TRUNCATION_LEAK: f64 = 1e-4;

/// Injection fluxes for the two-level-atom variant of the reservoir.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ThermalFlux {
    pub r_e: f64,
    pub r_g: f64,
    pub n_bar: f64,
}

impl ThermalFlux {
    /// Splits a total flux `r` so that `r_e / r_g = n̄ / (1 + n̄)`.
    pub fn from_n_bar(n_bar: f64, r: f64) -> Result<Self> {
        let ratio = thermal_flux_ratio(n_bar)?;
        let r_g = r / (1.0 + ratio);
        Ok(Self { r_e: r - r_g, r_g, n_bar })
    }

    /// `(γ+, γ−) = (r_e (λδt)², r_g (λδt)²)` for a resonant two-level atom.
    pub fn rates(&self, angle: f64) -> EngineeredRates {
        EngineeredRates { gamma_plus: self.r_e * angle * angle, gamma_minus: self.r_g * angle * angle }
    }

    fn validate(&self) -> Result<()> {
        let want = thermal_flux_ratio(self.n_bar)?;
        if !(self.r_g > 0.0) || ((self.r_e / self.r_g) - want).abs() > 1e-9 * want.max(1.0) {
            return Err(Error::Domain(format!(
                "r_e / r_g = {} does not match n̄/(1+n̄) = {want} for n̄ = {}",
                self.r_e / self.r_g,
                self.n_bar
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeAParams {
    /// Coupling on the `g–e` stage.
    pub lambda1: f64,
    /// Coupling on the `e–i` stage.
    pub lambda2: f64,
    pub dt1: f64,
    pub dt2: f64,
    /// Atoms per unit time.
    pub rate: f64,
    pub n_trunc: usize,
    pub thermal_flux: Option<ThermalFlux>,
}

impl SchemeAParams {
    /// Parameters with unit couplings, so `dt1`, `dt2` are the interaction angles.
    pub fn from_angles(angle1: f64, angle2: f64, rate: f64, n_trunc: usize) -> Self {
        Self { lambda1: 1.0, lambda2: 1.0, dt1: angle1, dt2: angle2, rate, n_trunc, thermal_flux: None }
    }

    pub fn angle1(&self) -> f64 {
        self.lambda1 * self.dt1
    }

    pub fn angle2(&self) -> f64 {
        self.lambda2 * self.dt2
    }

    pub fn layout(&self) -> Result<HilbertLayout> {
        HilbertLayout::new(vec![3, self.n_trunc])
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("lambda1", self.lambda1), ("lambda2", self.lambda2), ("dt1", self.dt1), ("dt2", self.dt2)] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if !(self.rate > 0.0) {
            return Err(Error::Domain(format!("atom rate r = {} must be positive", self.rate)));
        }
        if self.n_trunc < 2 {
            return Err(Error::InvalidDimension(format!("Fock truncation {} < 2", self.n_trunc)));
        }
        for (name, a) in [("lambda1*dt1", self.angle1()), ("lambda2*dt2", self.angle2())] {
            if a > MAX_INTERACTION_ANGLE {
                return Err(Error::Domain(format!("{name} = {a} exceeds the short-interaction limit {MAX_INTERACTION_ANGLE}")));
            }
        }
        if let Some(f) = &self.thermal_flux {
            f.validate()?;
        }
        Ok(())
    }
}

/// `r_e / r_g = n̄ / (1 + n̄)`.
pub fn thermal_flux_ratio(n_bar: f64) -> Result<f64> {
    if !(n_bar >= 0.0) || !n_bar.is_finite() {
        return Err(Error::Domain(format!("thermal occupation n̄ = {n_bar} must be finite and non-negative")));
    }
    Ok(n_bar / (1.0 + n_bar))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EngineeredRates {
    pub gamma_plus: f64,
    pub gamma_minus: f64,
}

impl EngineeredRates {
    /// Steady photon number `γ+ / (γ− − γ+)`; `None` when there is no
    /// normalizable steady state.
    pub fn steady_n_bar(&self) -> Option<f64> {
        (self.gamma_minus > self.gamma_plus).then(|| self.gamma_plus / (self.gamma_minus - self.gamma_plus))
    }

    /// `γ− D[a] + γ+ D[a†]` on a mode truncated to `n_trunc` levels.
    pub fn field_model(&self, n_trunc: usize) -> Result<LindbladModel> {
        LindbladModel::dissipative(
            HilbertLayout::single(n_trunc)?,
            vec![
                Channel::new(self.gamma_minus, annihilation_op(n_trunc)?),
                Channel::new(self.gamma_plus, creation_op(n_trunc)?),
            ],
        )
    }
}

/// `γ+ = r (λ1δt1)²`, `γ− = r (λ2δt2)²`.
pub fn engineered_rates(p: &SchemeAParams) -> EngineeredRates {
    let (a1, a2) = (p.angle1(), p.angle2());
    EngineeredRates { gamma_plus: p.rate * a1 * a1, gamma_minus: p.rate * a2 * a2 }
}

fn manifold_rotation(u: &mut CMatrix, lo: usize, hi: usize, theta: f64) {
    let (c, s) = (theta.cos(), theta.sin());
    u[(lo, lo)] = C64::from(c);
    u[(hi, hi)] = C64::from(c);
    u[(lo, hi)] = C64::new(0.0, -s);
    u[(hi, lo)] = C64::new(0.0, -s);
}

/// `U1 = exp(−iH1δt1)`, `H1 = λ1(|e⟩⟨g|a + |g⟩⟨e|a†)` and
/// `U2 = exp(−iH2δt2)`, `H2 = λ2(|i⟩⟨e|a + |e⟩⟨i|a†)` on atom ⊗ field.
pub fn stage_propagators(p: &SchemeAParams) -> Result<(OperatorMatrix, OperatorMatrix)> {
    let layout = p.layout()?;
    let n = p.n_trunc;
    let d = layout.total_dim();
    let idx = |l: AtomLevel, k: usize| l.index() * n + k;
    let mut u1 = CMatrix::identity(d, d);
    let mut u2 = CMatrix::identity(d, d);
    for k in 0..n - 1 {
        let w = ((k + 1) as f64).sqrt();
        // |e,k⟩ ↔ |g,k+1⟩
        manifold_rotation(&mut u1, idx(AtomLevel::E, k), idx(AtomLevel::G, k + 1), p.angle1() * w);
        // |e,k+1⟩ ↔ |i,k⟩
        manifold_rotation(&mut u2, idx(AtomLevel::E, k + 1), idx(AtomLevel::I, k), p.angle2() * w);
    }
    Ok((OperatorMatrix::new(layout.clone(), u1, "U1")?, OperatorMatrix::new(layout, u2, "U2")?))
}

/// `R = exp(−i θ/2 (e^{iφ}|g⟩⟨i| + e^{−iφ}|i⟩⟨g|))`, a rotation of angle
/// `θ` between `|g⟩` and `|i⟩` that leaves `|e⟩` alone.
pub fn gi_rotation(theta: f64, phi: f64) -> CMatrix {
    let (c, s) = ((theta / 2.0).cos(), (theta / 2.0).sin());
    let (g, i) = (AtomLevel::G.index(), AtomLevel::I.index());
    let mut r = CMatrix::identity(3, 3);
    r[(g, g)] = C64::from(c);
    r[(i, i)] = C64::from(c);
    r[(g, i)] = -I * C64::from_polar(s, phi);
    r[(i, g)] = -I * C64::from_polar(s, -phi);
    r
}

/// Field Kraus operators `K_m = ⟨m|R U2 U1|e⟩`, indexed by atomic level
/// in basis order `(g, e, i)`.
pub fn detection_kraus(p: &SchemeAParams, rotation: &CMatrix) -> Result<[OperatorMatrix; 3]> {
    if rotation.nrows() != 3 || rotation.ncols() != 3 {
        return Err(Error::InvalidDimension("detection rotation must be 3x3".into()));
    }
    check_unitary(rotation, "detection rotation")?;
    let (u1, u2) = stage_propagators(p)?;
    let n = p.n_trunc;
    let r_full = rotation.kronecker(&CMatrix::identity(n, n));
    let v = r_full * u2.entries() * u1.entries();
    let field = HilbertLayout::single(n)?;
    let col0 = AtomLevel::E.index() * n;
    let make = |level: AtomLevel| {
        let row0 = level.index() * n;
        OperatorMatrix::new(field.clone(), v.view((row0, col0), (n, n)).into_owned(), format!("K{level:?}"))
    };
    Ok([make(AtomLevel::G)?, make(AtomLevel::E)?, make(AtomLevel::I)?])
}

/// The detection outcomes as a [`ChannelSet`] in the order `(e, g, i)`,
/// i.e. `(J0, J+, J−)` before rotation, with step `1/r`.
pub fn kraus_channel_set(p: &SchemeAParams, rotation: &CMatrix) -> Result<ChannelSet> {
    let [kg, ke, ki] = detection_kraus(p, rotation)?;
    let rates = engineered_rates(p);
    ChannelSet::from_kraus(vec![ke, kg, ki], 1.0 / p.rate, vec![rates.gamma_plus, rates.gamma_minus])
}

/// `Φ(ρ) = Σ_m K_m ρ K_m†`.
pub fn apply_channel(kraus: &[OperatorMatrix], rho: &CMatrix) -> CMatrix {
    let d = rho.nrows();
    let mut out = CMatrix::zeros(d, d);
    for k in kraus {
        let m = k.entries();
        out += m * rho * m.adjoint();
    }
    out
}

/// Largest entry of `Φ(E) − E − L(E)/r` over all matrix units
/// `E = |n⟩⟨m|` with `n, m ≤ max_level`, where `L` is the thermal
/// Lindbladian with the engineered rates.
pub fn generator_residual(p: &SchemeAParams, rotation: &CMatrix, max_level: usize) -> Result<f64> {
    let n = p.n_trunc;
    if max_level >= n {
        return Err(Error::InvalidDimension(format!("level {max_level} beyond truncation {n}")));
    }
    let kraus = detection_kraus(p, rotation)?;
    let rates = engineered_rates(p);
    let a = annihilation_op(n)?;
    let ad = creation_op(n)?;
    let field = HilbertLayout::single(n)?;
    let mut worst: f64 = 0.0;
    for r in 0..=max_level {
        for c in 0..=max_level {
            let mut e = CMatrix::zeros(n, n);
            e[(r, c)] = C64::from(1.0);
            let unit = DensityMatrix::new(field.clone(), e.clone())?;
            let l = dissipator(&a, &unit)? * C64::from(rates.gamma_minus) + dissipator(&ad, &unit)? * C64::from(rates.gamma_plus);
            let diff = apply_channel(&kraus, &e) - &e - l.unscale(p.rate);
            worst = worst.max(max_abs(&diff));
        }
    }
    Ok(worst)
}

fn check_leak(top_population: f64) -> Result<()> {
    if top_population > TRUNCATION_LEAK {
        return Err(Error::TruncationLeak { factor: 0, population: top_population });
    }
    Ok(())
}

/// Field states after every `sample_every` atoms with the atoms traced out.
#[derive(Debug, Clone)]
pub struct TracedRun {
    pub times: Vec<f64>,
    pub states: Vec<DensityMatrix>,
}

/// Applies the traced channel once per atom; atom `k` leaves at `t = k/r`.
pub fn run_traced(
    p: &SchemeAParams,
    rotation: &CMatrix,
    rho0: &DensityMatrix,
    n_atoms: usize,
    sample_every: usize,
) -> Result<TracedRun> {
    p.validate()?;
    let field = HilbertLayout::single(p.n_trunc)?;
    if rho0.layout() != &field {
        return Err(Error::LayoutMismatch("initial field state and truncation".into()));
    }
    if sample_every == 0 {
        return Err(Error::Domain("sample_every must be at least 1".into()));
    }
    let kraus = detection_kraus(p, rotation)?;
    let top = p.n_trunc - 1;
    let mut rho = rho0.entries().clone();
    check_leak(rho[(top, top)].re)?;
    let mut times = vec![0.0];
    let mut states = vec![rho0.clone()];
    for k in 1..=n_atoms {
        rho = apply_channel(&kraus, &rho);
        crate::liouville::hermitize(&mut rho);
        check_leak(rho[(top, top)].re)?;
        if k % sample_every == 0 {
            times.push(k as f64 / p.rate);
            states.push(DensityMatrix::new(field.clone(), rho.clone())?);
        }
    }
    Ok(TracedRun { times, states })
}

/// One monitored realization: every atom is detected and its outcome
/// recorded as a channel index in the order `(e, g, i)`.
pub fn run_monitored(
    p: &SchemeAParams,
    rotation: &CMatrix,
    psi0: &StateVector,
    n_atoms: usize,
    sample_every: usize,
    seed: u64,
    observables: &[Observable],
) -> Result<TrajectoryRecord> {
    p.validate()?;
    let cs = kraus_channel_set(p, rotation)?;
    if sample_every == 0 || !n_atoms.is_multiple_of(sample_every) {
        return Err(Error::Domain(format!("{n_atoms} atoms are not a multiple of sample_every = {sample_every}")));
    }
    let grid = SampleGrid { n_steps: n_atoms, sample_every };
    let top = p.n_trunc - 1;
    let mut worst_top: f64 = 0.0;
    let mut series = vec![Vec::with_capacity(grid.n_samples()); observables.len()];
    let outcomes = run_trajectory(psi0, &cs, grid, seed, |_, psi| {
        worst_top = worst_top.max(psi.amplitudes()[top].norm_sqr());
        for (o, s) in observables.iter().zip(series.iter_mut()) {
            s.push(o.eval(psi));
        }
    })?;
    check_leak(worst_top)?;
    Ok(TrajectoryRecord {
        seed,
        times: grid.times(cs.dt()),
        outcomes,
        observables: observables.iter().map(|o| o.name().to_string()).zip(series).collect(),
    })
}

/// Best fit `K ≈ c (a + e^{iφ} a†)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QuadratureFit {
    pub scale: C64,
    pub phase: f64,
    /// `‖K − c(a + e^{iφ}a†)‖_max` at the optimal `c`.
    pub residual: f64,
}

pub fn fit_quadrature(k: &OperatorMatrix) -> Result<QuadratureFit> {
    let n = k.dim();
    let a = annihilation_op(n)?.entries().clone();
    let ad = a.adjoint();
    let km = k.entries();
    let alpha = a.dotc(km) / a.dotc(&a);
    let beta = ad.dotc(km) / ad.dotc(&ad);
    if alpha.norm() < 1e-300 && beta.norm() < 1e-300 {
        return Err(Error::Domain("operator has no quadrature component".into()));
    }
    let phase = if alpha.norm() > 0.0 { (beta / alpha).arg() } else { beta.arg() };
    let q = &a + ad.map(|z| z * C64::from_polar(1.0, phase));
    let scale = q.dotc(km) / q.dotc(&q);
    let residual = max_abs(&(km - q.map(|z| z * scale)));
    Ok(QuadratureFit { scale, phase, residual })
}

/// Atomic populations after one pass, for an initial field state.
pub fn atom_populations_after(p: &SchemeAParams, field: &StateVector) -> Result<[f64; 3]> {
    let kraus = detection_kraus(p, &CMatrix::identity(3, 3))?;
    let mut out = [0.0; 3];
    for (slot, k) in out.iter_mut().zip(&kraus) {
        *slot = field.apply(k)?.norm_sqr();
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::liouville::integrate;
    use crate::qstate::{atom_ket, expectation, fock, number_op, unitarity_deviation, Tensor, CVector, ZERO};

    /// `exp(−iHt)` by Taylor series, independent of the manifold construction.
    fn expm_taylor(h: &CMatrix, t: f64) -> CMatrix {
        let d = h.nrows();
        let x = h.map(|z| z * C64::new(0.0, -t));
        let mut term = CMatrix::identity(d, d);
        let mut sum = term.clone();
        for k in 1..60 {
            term = &term * &x / C64::from(k as f64);
            sum += &term;
        }
        sum
    }

    fn jc_hamiltonians(n: usize, l1: f64, l2: f64) -> (CMatrix, CMatrix) {
        let layout = HilbertLayout::new(vec![3, n]).unwrap();
        let a = annihilation_op(n).unwrap().embed(&layout, 1).unwrap();
        let lift = |from, to| crate::qstate::atom_transition(from, to).embed(&layout, 0).unwrap();
        let eg = lift(AtomLevel::G, AtomLevel::E).compose(&a).unwrap();
        let ie = lift(AtomLevel::E, AtomLevel::I).compose(&a).unwrap();
        let h1 = (eg.entries() + eg.entries().adjoint()).map(|z| z * l1);
        let h2 = (ie.entries() + ie.entries().adjoint()).map(|z| z * l2);
        (h1, h2)
    }

    #[test]
    fn flux_ratio_values() {
        assert_eq!(thermal_flux_ratio(0.0).unwrap(), 0.0);
        assert_eq!(thermal_flux_ratio(1.0).unwrap(), 0.5);
        assert!((thermal_flux_ratio(1e6).unwrap() - 1.0).abs() < 1e-5);
        assert!(thermal_flux_ratio(-0.1).is_err());
        let f = ThermalFlux::from_n_bar(2.0, 3.0).unwrap();
        assert!((f.r_e / f.r_g - 2.0 / 3.0).abs() < 1e-15);
        assert!((f.r_e + f.r_g - 3.0).abs() < 1e-15);
        let rates = f.rates(0.05);
        // detailed balance of the two-level variant recovers n̄
        let nb = rates.gamma_plus / (rates.gamma_minus - rates.gamma_plus);
        assert!((nb - 2.0).abs() < 1e-12);
    }

    #[test]
    fn propagators_match_matrix_exponential() {
        let p = SchemeAParams { lambda1: 0.8, lambda2: 1.3, dt1: 0.07, dt2: 0.05, rate: 1.0, n_trunc: 5, thermal_flux: None };
        let (u1, u2) = stage_propagators(&p).unwrap();
        let (h1, h2) = jc_hamiltonians(5, p.lambda1, p.lambda2);
        assert!(max_abs(&(u1.entries() - expm_taylor(&h1, p.dt1))) < 1e-14);
        assert!(max_abs(&(u2.entries() - expm_taylor(&h2, p.dt2))) < 1e-14);
        assert!(unitarity_deviation(u1.entries()) < 1e-14);
    }

    #[test]
    fn quarter_period_swaps_single_excitation() {
        let n = 4;
        let p = SchemeAParams::from_angles(std::f64::consts::FRAC_PI_2, 0.0, 1.0, n);
        let (u1, _) = stage_propagators(&p).unwrap();
        let e0 = atom_ket(AtomLevel::E).tensor(&fock(n, 0).unwrap());
        let g1 = atom_ket(AtomLevel::G).tensor(&fock(n, 1).unwrap());
        let out = e0.apply(&u1).unwrap();
        assert!((g1.inner(&out).unwrap() - C64::new(0.0, -1.0)).norm() < 1e-15);
        let back = g1.apply(&u1).unwrap();
        assert!((e0.inner(&back).unwrap() - C64::new(0.0, -1.0)).norm() < 1e-15);
    }

    /// Second-order expansions of the one- and two-stage states on `|e⟩|Φ⟩`.
    fn truncated_states(n: usize, x: f64, y: f64, phi: &StateVector) -> (StateVector, StateVector) {
        let layout = HilbertLayout::new(vec![3, n]).unwrap();
        let a = annihilation_op(n).unwrap();
        let ad = a.adjoint();
        let f = phi.amplitudes();
        let aad_f = a.entries() * ad.entries() * f;
        let ada_f = ad.entries() * a.entries() * f;
        let ad_f = ad.entries() * f;
        let a_f = a.entries() * f;
        let mut one = CVector::zeros(3 * n);
        let mut two = CVector::zeros(3 * n);
        for k in 0..n {
            let e = f[k] - aad_f[k] * (x * x / 2.0);
            one[n + k] = e;
            one[k] = ad_f[k] * C64::new(0.0, -x);
            two[n + k] = e - ada_f[k] * (y * y / 2.0);
            two[k] = ad_f[k] * C64::new(0.0, -x);
            two[2 * n + k] = a_f[k] * C64::new(0.0, -y);
        }
        (StateVector::new(layout.clone(), one).unwrap(), StateVector::new(layout, two).unwrap())
    }

    #[test]
    fn short_time_expansion_matches_exact_stages() {
        let n = 6;
        let phi = StateVector::new(
            HilbertLayout::single(n).unwrap(),
            CVector::from_vec(vec![C64::from(0.6), C64::new(0.5, 0.2), C64::from(0.4), C64::new(0.0, 0.3), ZERO, ZERO]),
        )
        .unwrap()
        .normalized()
        .unwrap();
        for &x in &[0.02, 0.05, 0.1] {
            let y = 0.8 * x;
            let p = SchemeAParams::from_angles(x, y, 1.0, n);
            let (u1, u2) = stage_propagators(&p).unwrap();
            let start = atom_ket(AtomLevel::E).tensor(&phi);
            let s1 = start.apply(&u1).unwrap();
            let s2 = s1.apply(&u2).unwrap();
            let (t1, t2) = truncated_states(n, x, y, &phi);
            let r1 = (s1.amplitudes() - t1.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            let r2 = (s2.amplitudes() - t2.amplitudes()).iter().map(|z| z.norm()).fold(0.0, f64::max);
            assert!(r1 <= 2.0 * x.powi(3), "x = {x}: {r1}");
            // the combined two-stage remainder is measured, not assumed
            assert!(r2 <= 2.0 * x.powi(3) + 2.0 * x * y * x, "x = {x}: {r2}");
        }
    }

    #[test]
    fn kraus_family_is_complete_for_any_rotation() {
        let p = SchemeAParams::from_angles(0.03, 0.06, 1.0, 8);
        for r in [CMatrix::identity(3, 3), gi_rotation(std::f64::consts::FRAC_PI_2, 0.4), gi_rotation(1.1, -2.0)] {
            let ks = detection_kraus(&p, &r).unwrap();
            let sum = ks.iter().fold(CMatrix::zeros(8, 8), |acc, k| acc + k.entries().adjoint() * k.entries());
            assert!(max_abs(&(sum - CMatrix::identity(8, 8))) <= 1e-12);
        }
        let mut bad = CMatrix::identity(3, 3);
        bad[(0, 1)] = C64::from(0.1);
        assert!(matches!(detection_kraus(&p, &bad), Err(Error::NotUnitary { .. })));
    }

    #[test]
    fn unrotated_kraus_are_photon_jumps() {
        let (x, y) = (0.03, 0.06);
        let n = 6;
        let p = SchemeAParams::from_angles(x, y, 1.0, n);
        let [kg, ke, ki] = detection_kraus(&p, &CMatrix::identity(3, 3)).unwrap();
        let a = annihilation_op(n).unwrap().entries().clone();
        let ad = a.adjoint();
        let j0 = CMatrix::identity(n, n) - (&a * &ad).map(|z| z * (x * x / 2.0)) - (&ad * &a).map(|z| z * (y * y / 2.0));
        // entries grow like (level)^{3/2}, so compare on the low-photon block
        let block = |m: &CMatrix| m.view((0, 0), (3, 3)).into_owned();
        let cubic = x.max(y).powi(3);
        assert!(max_abs(&block(&(ke.entries() - j0))) <= 10.0 * cubic);
        assert!(max_abs(&block(&(kg.entries() - ad.map(|z| z * C64::new(0.0, -x))))) <= 10.0 * cubic);
        assert!(max_abs(&block(&(ki.entries() - a.map(|z| z * C64::new(0.0, -y))))) <= 10.0 * cubic);
        let vac = fock(n, 0).unwrap();
        assert_eq!(vac.apply(&ki).unwrap().norm_sqr(), 0.0);
    }

    #[test]
    fn pi_half_rotation_gives_quadrature_jumps() {
        let theta = 0.04;
        let p = SchemeAParams::from_angles(theta, theta, 1.0, 3);
        let ks = detection_kraus(&p, &gi_rotation(std::f64::consts::FRAC_PI_2, 0.9)).unwrap();
        let fg = fit_quadrature(&ks[0]).unwrap();
        let fi = fit_quadrature(&ks[2]).unwrap();
        assert!(fg.residual <= theta.powi(3));
        assert!(fi.residual <= theta.powi(3));
        // the two outcomes carry opposite quadratures: phases differ by π
        let dphi = (fg.phase - fi.phase).rem_euclid(2.0 * std::f64::consts::PI);
        assert!((dphi - std::f64::consts::PI).abs() < 1e-9, "{dphi}");
    }

    #[test]
    fn rates_and_steady_occupation() {
        let p = SchemeAParams::from_angles(0.03, 0.06, 1.0, 12);
        let r = engineered_rates(&p);
        assert!((r.gamma_plus - 9e-4).abs() < 1e-18);
        assert!((r.gamma_minus - 3.6e-3).abs() < 1e-18);
        assert!((r.steady_n_bar().unwrap() - 1.0 / 3.0).abs() < 1e-12);
        let doubled = engineered_rates(&SchemeAParams { rate: 2.0, ..p.clone() });
        assert!((doubled.gamma_plus - 2.0 * r.gamma_plus).abs() < 1e-18);
        assert!((doubled.gamma_minus - 2.0 * r.gamma_minus).abs() < 1e-18);
        assert_eq!(engineered_rates(&SchemeAParams::from_angles(0.0, 0.06, 1.0, 4)).gamma_plus, 0.0);
    }

    #[test]
    fn traced_map_is_unravelling_independent() {
        let p = SchemeAParams::from_angles(0.05, 0.07, 1.0, 6);
        let rho = DensityMatrix::from_pure(
            &StateVector::new(
                HilbertLayout::single(6).unwrap(),
                CVector::from_vec(vec![C64::from(0.7), C64::new(0.3, 0.4), C64::from(0.2), ZERO, ZERO, ZERO]),
            )
            .unwrap()
            .normalized()
            .unwrap(),
        );
        let base = apply_channel(&detection_kraus(&p, &CMatrix::identity(3, 3)).unwrap(), rho.entries());
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(5);
        for _ in 0..10 {
            let r = crate::qstate::random_unitary(3, &mut rng);
            if unitarity_deviation(&r) > 1e-12 {
                continue;
            }
            let other = apply_channel(&detection_kraus(&p, &r).unwrap(), rho.entries());
            assert!(max_abs(&(other - &base)) <= 1e-12);
        }
    }

    #[test]
    fn empty_run_leaves_state() {
        let p = SchemeAParams::from_angles(0.03, 0.06, 1.0, 6);
        let rho0 = DensityMatrix::from_pure(&fock(6, 1).unwrap());
        let run = run_traced(&p, &CMatrix::identity(3, 3), &rho0, 0, 1).unwrap();
        assert_eq!(run.states.len(), 1);
        assert_eq!(run.states[0], rho0);
    }

    #[test]
    fn traced_growth_follows_master_equation() {
        let p = SchemeAParams::from_angles(0.05, 0.05, 1.0, 10);
        let rates = engineered_rates(&p);
        let vac = DensityMatrix::from_pure(&fock(10, 0).unwrap());
        let run = run_traced(&p, &CMatrix::identity(3, 3), &vac, 200, 50).unwrap();
        let model = rates.field_model(10).unwrap();
        let master = integrate(&model, &vac, &run.times, 1.0).unwrap();
        let n = number_op(10).unwrap();
        for (a, b) in run.states.iter().zip(&master) {
            let (na, nb) = (expectation(a, &n).unwrap().re, expectation(b, &n).unwrap().re);
            assert!((na - nb).abs() < 1e-3 * nb.max(1e-3), "{na} vs {nb}");
        }
        // initial growth ≈ γ+ t
        let n50 = expectation(&run.states[1], &n).unwrap().re;
        assert!((n50 - rates.gamma_plus * 50.0).abs() < 0.05 * rates.gamma_plus * 50.0);
    }

    #[test]
    fn generator_residual_is_fourth_order() {
        let mut res = Vec::new();
        for &x in &[0.02, 0.04, 0.08] {
            let p = SchemeAParams::from_angles(x / 2.0, x, 1.0, 8);
            res.push(generator_residual(&p, &CMatrix::identity(3, 3), 3).unwrap());
        }
        for w in res.windows(2) {
            let order = (w[1] / w[0]).log2();
            assert!((order - 4.0).abs() < 0.2, "order {order} from {res:?}");
        }
    }

    #[test]
    fn leakage_is_detected() {
        let p = SchemeAParams::from_angles(0.1, 0.0, 1.0, 3);
        let vac = DensityMatrix::from_pure(&fock(3, 0).unwrap());
        let r = run_traced(&p, &CMatrix::identity(3, 3), &vac, 500, 1);
        assert!(matches!(r, Err(Error::TruncationLeak { .. })));
    }

    #[test]
    fn monitored_run_records_every_atom() {
        let p = SchemeAParams::from_angles(0.05, 0.05, 1.0, 10);
        let obs = [Observable::expectation("n", number_op(10).unwrap())];
        let rec = run_monitored(&p, &gi_rotation(std::f64::consts::FRAC_PI_2, 0.0), &fock(10, 0).unwrap(), 300, 10, 11, &obs)
            .unwrap();
        assert_eq!(rec.outcomes.len(), 300);
        assert_eq!(rec.series("n").unwrap().len(), 31);
        assert!(rec.outcomes.iter().all(|&k| k < 3));
    }

    #[test]
    fn populations_after_one_atom() {
        let p = SchemeAParams::from_angles(0.03, 0.06, 1.0, 5);
        let pops = atom_populations_after(&p, &fock(5, 0).unwrap()).unwrap();
        // vacuum: only the creation branch can fire, with probability sin²(λ1δt1)
        assert!((pops[0] - 0.03f64.sin().powi(2)).abs() < 1e-15);
        assert_eq!(pops[2], 0.0);
        assert!((pops.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}
