//! Two-qubit concurrence and local-monitoring entanglement protection.
//!
//! Two qubits sit in independent infinite-temperature baths
//! (`γ D[σ−] + γ D[σ+]` each). Unmonitored, a Bell state disentangles in
//! finite time. Detected in the balanced basis, every jump operator is
//! proportional to a local unitary (`σx` or `iσy`) and the no-jump operator
//! is proportional to the identity, so each trajectory stays maximally
//! entangled.

use crate::error::{Error, Result};
use crate::liouville::{integrate, Channel, LindbladModel};
use crate::purcell_reservoir::detector_basis;
use crate::qstate::{
    hermitian_eigenvalues, qubit_layout, sigma_minus, sigma_plus, sigma_y, CMatrix, DensityMatrix, HilbertLayout,
    OperatorMatrix, StateVector, Tensor, C64,
};
use crate::unraveller::{block_mixing, build_jump_channels, ensemble_average, ChannelSet, EnsembleConfig, Observable};

pub fn two_qubit_layout() -> HilbertLayout {
    qubit_layout().tensor(&qubit_layout())
}

/// `(|gg⟩ + |ee⟩)/√2`.
pub fn phi_plus() -> StateVector {
    let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
    let mut amps = crate::qstate::CVector::zeros(4);
    amps[0] = s;
    amps[3] = s;
    StateVector::new(two_qubit_layout(), amps).expect("four amplitudes on a 2x2 layout")
}

fn check_two_qubits(layout: &HilbertLayout) -> Result<()> {
    if layout.factors() != [2, 2] {
        return Err(Error::LayoutMismatch(format!("concurrence needs a [2, 2] layout, got {:?}", layout.factors())));
    }
    Ok(())
}

fn psd_sqrt(m: &CMatrix) -> CMatrix {
    let h = (m + m.adjoint()).unscale(2.0);
    let eig = h.symmetric_eigen();
    let roots = eig.eigenvalues.map(|l| C64::from(l.max(0.0).sqrt()));
    &eig.eigenvectors * CMatrix::from_diagonal(&roots) * eig.eigenvectors.adjoint()
}

/// Wootters concurrence `max(0, μ1 − μ2 − μ3 − μ4)`.
pub fn concurrence(rho: &DensityMatrix) -> Result<f64> {
    check_two_qubits(rho.layout())?;
    rho.validate()?;
    let yy = sigma_y().tensor(&sigma_y());
    let yy = yy.entries();
    let r = rho.entries();
    let tilde = yy * r.conjugate() * yy;
    let s = psd_sqrt(r);
    let mut mu: Vec<f64> = hermitian_eigenvalues(&(&s * tilde * &s)).into_iter().map(|l| l.max(0.0).sqrt()).collect();
    mu.sort_by(|a, b| b.total_cmp(a));
    Ok((mu[0] - mu[1] - mu[2] - mu[3]).max(0.0))
}

/// `|⟨ψ|σy⊗σy|ψ*⟩| = 2|ψ_gg ψ_ee − ψ_ge ψ_eg|` for a normalized pure state.
pub fn concurrence_pure(psi: &StateVector) -> Result<f64> {
    check_two_qubits(psi.layout())?;
    let a = psi.amplitudes();
    Ok(2.0 * (a[0] * a[3] - a[1] * a[2]).norm() / psi.norm_sqr())
}

/// Closed-form concurrence of `|Φ+⟩` under local infinite-temperature
/// baths of rate `γ`: `e^{−2γt} − (1 − e^{−4γt})/2`, floored at zero.
pub fn bell_concurrence_decay(gamma: f64, t: f64) -> f64 {
    let x = (-2.0 * gamma * t).exp();
    (x - (1.0 - x * x) / 2.0).max(0.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProtectionConfig {
    pub gamma: f64,
    pub t_final: f64,
    pub n_traj: usize,
    pub dt: f64,
    pub sample_every: usize,
    pub master_seed: u64,
}

impl ProtectionConfig {
    pub fn new(gamma: f64, t_final: f64, n_traj: usize, master_seed: u64) -> Self {
        Self { gamma, t_final, n_traj, dt: 1e-3, sample_every: 10, master_seed }
    }
}

#[derive(Debug, Clone)]
pub struct ProtectionRun {
    pub times: Vec<f64>,
    /// Concurrence at each sample, one series per trajectory.
    pub trajectory_concurrence: Vec<Vec<f64>>,
    pub master_concurrence: Vec<f64>,
    pub master_states: Vec<DensityMatrix>,
    pub mean_states: Vec<DensityMatrix>,
    /// Largest `|C − 1|` over all trajectories and samples.
    pub max_trajectory_deviation: f64,
    /// First time the master-equation concurrence drops below `0.1`,
    /// linearly interpolated between samples.
    pub crossing_time: Option<f64>,
}

/// Four local channels `(γ, σ−⊗I), (γ, σ+⊗I), (γ, I⊗σ−), (γ, I⊗σ+)`.
pub fn protection_channels(gamma: f64) -> Result<Vec<(f64, OperatorMatrix)>> {
    let layout = two_qubit_layout();
    let mut out = Vec::with_capacity(4);
    for factor in 0..2 {
        out.push((gamma, sigma_minus().embed(&layout, factor)?));
        out.push((gamma, sigma_plus().embed(&layout, factor)?));
    }
    Ok(out)
}

/// Five-channel set with each qubit's pair mixed by the plate-free detector.
pub fn protection_channel_set(gamma: f64, dt: f64) -> Result<ChannelSet> {
    let cs = build_jump_channels(&protection_channels(gamma)?, dt)?;
    cs.mix(&block_mixing(&[detector_basis(false), detector_basis(false)]))
}

pub fn protection_model(gamma: f64) -> Result<LindbladModel> {
    let channels = protection_channels(gamma)?.into_iter().map(|(g, c)| Channel::new(g, c)).collect();
    LindbladModel::dissipative(two_qubit_layout(), channels)
}

pub fn crossing_time(times: &[f64], values: &[f64], level: f64) -> Option<f64> {
    let first = values.iter().position(|&v| v < level)?;
    if first == 0 {
        return Some(times[0]);
    }
    let (t0, t1, v0, v1) = (times[first - 1], times[first], values[first - 1], values[first]);
    Some(t0 + (t1 - t0) * (v0 - level) / (v0 - v1))
}

pub fn protection_run(cfg: &ProtectionConfig) -> Result<ProtectionRun> {
    if !(cfg.gamma > 0.0) || !cfg.gamma.is_finite() {
        return Err(Error::Domain(format!("gamma = {} must be positive", cfg.gamma)));
    }
    let cs = protection_channel_set(cfg.gamma, cfg.dt)?;
    let psi0 = phi_plus();
    let observable = Observable::from_fn("concurrence", |psi| concurrence_pure(psi).unwrap_or(f64::NAN));
    let ens = ensemble_average(
        &psi0,
        &cs,
        &EnsembleConfig {
            n_traj: cfg.n_traj,
            t_final: cfg.t_final,
            sample_every: cfg.sample_every,
            master_seed: cfg.master_seed,
            keep_records: cfg.n_traj,
        },
        &[observable],
    )?;
    let trajectory_concurrence: Vec<Vec<f64>> =
        ens.records.iter().map(|r| r.series("concurrence").map(<[f64]>::to_vec).unwrap_or_default()).collect();
    let max_trajectory_deviation =
        trajectory_concurrence.iter().flatten().map(|c| if c.is_nan() { f64::INFINITY } else { (c - 1.0).abs() }).fold(0.0, f64::max);

    let master_states = integrate(&protection_model(cfg.gamma)?, &DensityMatrix::from_pure(&psi0), &ens.times, cfg.dt)?;
    let master_concurrence = master_states.iter().map(concurrence).collect::<Result<Vec<_>>>()?;
    let crossing_time = crossing_time(&ens.times, &master_concurrence, 0.1);
    Ok(ProtectionRun {
        times: ens.times,
        trajectory_concurrence,
        master_concurrence,
        master_states,
        mean_states: ens.mean_states,
        max_trajectory_deviation,
        crossing_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::qstate::{max_abs, sigma_x, trace_distance, CVector};
    use crate::unraveller::trajectory_step;
    use proptest::prelude::*;

    fn werner(p: f64) -> DensityMatrix {
        let bell = DensityMatrix::from_pure(&phi_plus());
        let mixed = DensityMatrix::maximally_mixed(two_qubit_layout());
        DensityMatrix::new(two_qubit_layout(), bell.entries().map(|z| z * p) + mixed.entries().map(|z| z * (1.0 - p))).unwrap()
    }

    /// Brute force: square roots of the (real, non-negative) eigenvalues of
    /// the non-Hermitian `ρ ρ̃`, from its characteristic roots.
    fn concurrence_brute(rho: &DensityMatrix) -> f64 {
        let yy = sigma_y().tensor(&sigma_y());
        let r = rho.entries();
        let m = r * yy.entries() * r.conjugate() * yy.entries();
        let eig = m.schur().eigenvalues().expect("complex Schur form is triangular");
        let mut mu: Vec<f64> = eig.iter().map(|z| z.re.max(0.0).sqrt()).collect();
        mu.sort_by(|a, b| b.total_cmp(a));
        (mu[0] - mu[1] - mu[2] - mu[3]).max(0.0)
    }

    #[test]
    fn bell_and_product_states() {
        assert!((concurrence(&DensityMatrix::from_pure(&phi_plus())).unwrap() - 1.0).abs() < 1e-12);
        let ge = StateVector::basis(two_qubit_layout(), 1).unwrap();
        assert!(concurrence(&DensityMatrix::from_pure(&ge)).unwrap() < 1e-12);
        assert!((concurrence_pure(&phi_plus()).unwrap() - 1.0).abs() < 1e-15);
        assert_eq!(concurrence_pure(&ge).unwrap(), 0.0);
    }

    #[test]
    fn werner_states() {
        for k in 0..=20 {
            let p = k as f64 / 20.0;
            let c = concurrence(&werner(p)).unwrap();
            let oracle = ((3.0 * p - 1.0) / 2.0).max(0.0);
            assert!((c - oracle).abs() < 1e-7, "p = {p}: {c} vs {oracle}");
            assert!((concurrence_brute(&werner(p)) - oracle).abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_other_layouts() {
        let rho = DensityMatrix::maximally_mixed(HilbertLayout::single(4).unwrap());
        assert!(matches!(concurrence(&rho), Err(Error::LayoutMismatch(_))));
        let mut bad = werner(1.0).into_entries();
        bad[(0, 0)] -= C64::from(0.2);
        bad[(1, 1)] += C64::from(0.2);
        bad[(0, 3)] += C64::from(0.3);
        bad[(3, 0)] += C64::from(0.3);
        assert!(concurrence(&DensityMatrix::new(two_qubit_layout(), bad).unwrap()).is_err());
    }

    #[test]
    fn local_jump_keeps_bell_state_maximal() {
        let flipped = phi_plus().apply(&sigma_x().tensor(&OperatorMatrix::identity(qubit_layout()))).unwrap();
        assert!((concurrence_pure(&flipped).unwrap() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn no_jump_operator_is_scalar() {
        let cs = protection_channel_set(0.1, 1e-3).unwrap();
        let j0 = cs.ops()[0].entries();
        assert!(max_abs(&(j0 - CMatrix::identity(4, 4).map(|z| z * (1.0 - 0.1 * 1e-3)))) < 1e-15);
        assert_eq!(cs.len(), 5);
        // the no-jump branch (first slice of the unit interval) leaves the state alone
        let (k, psi) = trajectory_step(&phi_plus(), &cs, 1e-6).unwrap();
        assert_eq!(k, 0);
        assert!((psi.inner(&phi_plus()).unwrap().norm() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn closed_form_decay_matches_master_equation() {
        let gamma = 0.1;
        let grid = crate::liouville::uniform_grid(6.0, 60);
        let states = integrate(&protection_model(gamma).unwrap(), &DensityMatrix::from_pure(&phi_plus()), &grid, 1e-3).unwrap();
        let mut prev = f64::INFINITY;
        for (t, s) in grid.iter().zip(&states) {
            let c = concurrence(s).unwrap();
            assert!((c - bell_concurrence_decay(gamma, *t)).abs() < 1e-9, "t = {t}");
            assert!(c <= prev + 1e-12);
            prev = c;
        }
        assert_eq!(concurrence(states.last().unwrap()).unwrap(), 0.0);
    }

    #[test]
    fn small_protection_run() {
        let cfg = ProtectionConfig { gamma: 0.1, t_final: 5.0, n_traj: 64, dt: 1e-3, sample_every: 50, master_seed: 9 };
        let run = protection_run(&cfg).unwrap();
        assert!(run.max_trajectory_deviation <= 1e-6);
        assert_eq!(run.trajectory_concurrence.len(), 64);
        for (k, (mean, master)) in run.mean_states.iter().zip(&run.master_states).enumerate() {
            assert!(trace_distance(mean, master).unwrap() <= 3.0 / 8.0);
            // convexity: the averaged state is no more entangled than its members
            let avg_c: f64 = run.trajectory_concurrence.iter().map(|s| s[k]).sum::<f64>() / 64.0;
            assert!(concurrence(mean).unwrap() <= avg_c + 1e-9);
        }
        let crossing = run.crossing_time.expect("master concurrence crosses 0.1 before t = 5");
        assert!((bell_concurrence_decay(0.1, crossing) - 0.1).abs() < 1e-3);
        assert!(protection_run(&ProtectionConfig { gamma: 0.0, ..cfg }).is_err());
    }

    #[test]
    fn crossing_interpolates() {
        assert_eq!(crossing_time(&[0.0, 1.0, 2.0], &[1.0, 0.5, 0.0], 0.25), Some(1.5));
        assert_eq!(crossing_time(&[0.0, 1.0], &[1.0, 0.5], 0.25), None);
    }

    proptest! {
        #[test]
        fn pure_formula_agrees_with_mixed(re in prop::collection::vec(-1.0f64..1.0, 4), im in prop::collection::vec(-1.0f64..1.0, 4)) {
            let amps = CVector::from_iterator(4, re.iter().zip(&im).map(|(a, b)| C64::new(*a, *b)));
            prop_assume!(amps.norm() > 0.1);
            let psi = StateVector::new(two_qubit_layout(), amps).unwrap().normalized().unwrap();
            let a = concurrence_pure(&psi).unwrap();
            let b = concurrence(&DensityMatrix::from_pure(&psi)).unwrap();
            prop_assert!((a - b).abs() < 1e-6, "{} vs {}", a, b);
        }
    }
}
