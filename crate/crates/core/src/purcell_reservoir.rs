//! Engineered reservoir for a stationary three-level atom inside a very
//! lossy two-mode cavity.
//!
//! The `e → g` transition couples to the left-polarized mode `a_L` and the
//! `i → e` transition to the right-polarized mode `a_R`; a classical field
//! `Ω` drives `g ↔ i`. When `κ ≫ λ_ie > λ_ge > Ω`, both modes and the level
//! `|i⟩` can be eliminated, leaving a qubit on `(g, e)` with effective decay
//! `γ−` and incoherent pump `γ+`:
//!
//! ```text
//! γ− = 4λ_ge² / (κ (1 + 4Δ_ge²/κ²)),   γ+ = Ω²κ / λ_ie²
//! ```
//!
//! The full model lives on `atom ⊗ a_R ⊗ a_L`, written in the frame
//! rotating with the cavity and drive frequencies.

use crate::error::{Error, Result};
use crate::liouville::{integrate, integrate_with, Channel, LindbladModel};
use crate::qstate::{
    annihilation_op, atom_transition, partial_trace, qubit_layout, sigma_minus, sigma_plus, trace_distance, AtomLevel, CMatrix,
    DensityMatrix, Hygiene, HilbertLayout, OperatorMatrix, C64, I,
};
use crate::unraveller::{block_mixing, build_jump_channels, ChannelSet};

const ATOM: usize = 0;
const MODE_R: usize = 1;
const MODE_L: usize = 2;

/// Bare frequencies. The models are built in the rotating frame, so these
/// are carried along for output and never enter the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct FrameFrequencies {
    pub omega_e: f64,
    pub omega_i: f64,
    pub omega_r: f64,
    pub omega_l: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchemeBParams {
    pub kappa: f64,
    pub lambda_ge: f64,
    pub lambda_ie: f64,
    pub omega_drive: f64,
    /// Natural `e → g` linewidth `γ`.
    pub gamma_nat: f64,
    /// Natural `i → e` linewidth `Γ`.
    pub big_gamma_nat: f64,
    pub delta_ge: f64,
    pub n_trunc_r: usize,
    pub n_trunc_l: usize,
    pub frame: FrameFrequencies,
}

impl SchemeBParams {
    /// `(κ, λ_ie, λ_ge, Ω, γ, Γ) = (1000, 100, 5, 1, 0.01, 0.01)`, on
    /// resonance, three levels per mode.
    pub fn reference() -> Self {
        Self {
            kappa: 1000.0,
            lambda_ge: 5.0,
            lambda_ie: 100.0,
            omega_drive: 1.0,
            gamma_nat: 0.01,
            big_gamma_nat: 0.01,
            delta_ge: 0.0,
            n_trunc_r: 3,
            n_trunc_l: 3,
            frame: FrameFrequencies::default(),
        }
    }

    pub fn layout(&self) -> Result<HilbertLayout> {
        HilbertLayout::new(vec![3, self.n_trunc_r, self.n_trunc_l])
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("kappa", self.kappa),
            ("lambda_ge", self.lambda_ge),
            ("lambda_ie", self.lambda_ie),
            ("omega_drive", self.omega_drive),
            ("gamma_nat", self.gamma_nat),
            ("Gamma_nat", self.big_gamma_nat),
        ];
        for (name, v) in fields {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(Error::Domain(format!("{name} = {v} must be finite and non-negative")));
            }
        }
        if !self.delta_ge.is_finite() {
            return Err(Error::Domain(format!("delta_ge = {} must be finite", self.delta_ge)));
        }
        self.layout().map(|_| ())
    }

    /// Warnings for each violated ratio of `κ ≫ λ_ie > λ_ge > Ω ≫ γ, Γ`.
    pub fn check_hierarchy(&self) -> Vec<String> {
        let checks = [
            ("kappa / lambda_ie", self.kappa / self.lambda_ie, 5.0),
            ("lambda_ie / lambda_ge", self.lambda_ie / self.lambda_ge, 2.0),
            ("lambda_ge / omega_drive", self.lambda_ge / self.omega_drive, 2.0),
            ("omega_drive / max(gamma, Gamma)", self.omega_drive / self.gamma_nat.max(self.big_gamma_nat), 10.0),
        ];
        checks
            .iter()
            .filter(|(_, ratio, min)| !(ratio >= min))
            .map(|(name, ratio, min)| format!("{name} = {ratio} is below {min}; adiabatic elimination may be inaccurate"))
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EffectiveRates {
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// Purcell-enhanced decay of `|i⟩`.
    pub gamma_ie: f64,
}

impl EffectiveRates {
    /// Steady excited population `γ+ / (γ− + γ+)`.
    pub fn steady_excited_population(&self) -> f64 {
        self.gamma_plus / (self.gamma_minus + self.gamma_plus)
    }
}

pub fn effective_rates(p: &SchemeBParams) -> Result<EffectiveRates> {
    if !(p.kappa > 0.0) {
        return Err(Error::Domain(format!("kappa = {} must be positive", p.kappa)));
    }
    if !(p.lambda_ie > 0.0) {
        return Err(Error::Domain(format!("lambda_ie = {} must be positive", p.lambda_ie)));
    }
    let detuning = 1.0 + 4.0 * p.delta_ge * p.delta_ge / (p.kappa * p.kappa);
    Ok(EffectiveRates {
        gamma_minus: 4.0 * p.lambda_ge * p.lambda_ge / (p.kappa * detuning),
        gamma_plus: p.omega_drive * p.omega_drive * p.kappa / (p.lambda_ie * p.lambda_ie),
        gamma_ie: 4.0 * p.lambda_ie * p.lambda_ie / p.kappa,
    })
}

/// `i g (a X − a† X†)` for a mode operator `a` and atomic raising `X`.
fn exchange(g: f64, a: &OperatorMatrix, raise: &OperatorMatrix) -> Result<OperatorMatrix> {
    let forward = a.compose(raise)?;
    Ok(forward.add(&forward.adjoint().scale(C64::from(-1.0)))?.scale(I * g))
}

fn atom_op(layout: &HilbertLayout, from: AtomLevel, to: AtomLevel) -> Result<OperatorMatrix> {
    atom_transition(from, to).embed(layout, ATOM)
}

/// Full atom–cavity model on `atom ⊗ a_R ⊗ a_L`.
pub fn full_model(p: &SchemeBParams) -> Result<LindbladModel> {
    p.validate()?;
    let layout = p.layout()?;
    let a_r = annihilation_op(p.n_trunc_r)?.embed(&layout, MODE_R)?;
    let a_l = annihilation_op(p.n_trunc_l)?.embed(&layout, MODE_L)?;
    let up_eg = atom_op(&layout, AtomLevel::G, AtomLevel::E)?;
    let up_ie = atom_op(&layout, AtomLevel::E, AtomLevel::I)?;
    let up_ig = atom_op(&layout, AtomLevel::G, AtomLevel::I)?;
    let ident = OperatorMatrix::identity(layout.clone());
    let sigma_ee = atom_op(&layout, AtomLevel::E, AtomLevel::E)?;

    let h = exchange(p.lambda_ge, &a_l, &up_eg)?
        .add(&exchange(p.lambda_ie, &a_r, &up_ie)?)?
        .add(&exchange(p.omega_drive, &ident, &up_ig)?)?
        .add(&sigma_ee.scale(C64::from(p.delta_ge)))?
        .with_label("H");
    let channels = vec![
        Channel::new(p.gamma_nat, up_eg.adjoint().with_label("sigma_ge")),
        Channel::new(p.big_gamma_nat, up_ie.adjoint().with_label("sigma_ei")),
        Channel::new(p.kappa, a_r.with_label("a_R")),
        Channel::new(p.kappa, a_l.with_label("a_L")),
    ];
    LindbladModel::new(h, channels)
}

/// `σ_ee + 2σ_ii + a_R†a_R + a_L†a_L` on the full layout.
pub fn excitation_number(p: &SchemeBParams) -> Result<OperatorMatrix> {
    let layout = p.layout()?;
    let n_r = crate::qstate::number_op(p.n_trunc_r)?.embed(&layout, MODE_R)?;
    let n_l = crate::qstate::number_op(p.n_trunc_l)?.embed(&layout, MODE_L)?;
    let ee = atom_op(&layout, AtomLevel::E, AtomLevel::E)?;
    let ii = atom_op(&layout, AtomLevel::I, AtomLevel::I)?.scale(C64::from(2.0));
    Ok(ee.add(&ii)?.add(&n_r)?.add(&n_l)?.with_label("N_exc"))
}

/// Effective qubit model with channels `(γ−, σ−)`, `(γ+, σ+)` and `H = 0`.
pub fn effective_model(p: &SchemeBParams) -> Result<LindbladModel> {
    let r = effective_rates(p)?;
    LindbladModel::dissipative(
        qubit_layout(),
        vec![Channel::new(r.gamma_minus, sigma_minus()), Channel::new(r.gamma_plus, sigma_plus())],
    )
}

/// Mixing over the two detected channels `(σ−, σ+)`: identity with the
/// quarter-wave plate in place, a balanced beam splitter without it.
pub fn detector_basis(plate_in: bool) -> CMatrix {
    if plate_in {
        CMatrix::identity(2, 2)
    } else {
        let s = C64::from(std::f64::consts::FRAC_1_SQRT_2);
        CMatrix::from_row_slice(2, 2, &[s, s, s, -s])
    }
}

/// Directly detected effective-qubit channels for a trajectory step `dt`.
pub fn monitored_channels(p: &SchemeBParams, dt: f64, plate_in: bool) -> Result<ChannelSet> {
    let r = effective_rates(p)?;
    let cs = build_jump_channels(&[(r.gamma_minus, sigma_minus()), (r.gamma_plus, sigma_plus())], dt)?;
    cs.mix(&block_mixing(&[detector_basis(plate_in)]))
}

/// Qubit state on `(g, e)` and the `|i⟩` population of an atom state.
pub fn split_atom_state(atom: &DensityMatrix) -> Result<(DensityMatrix, f64)> {
    if atom.layout().factors() != [3] {
        return Err(Error::LayoutMismatch("expected a three-level atom state".into()));
    }
    let block = atom.entries().view((0, 0), (2, 2)).into_owned();
    Ok((DensityMatrix::new(qubit_layout(), block)?, atom.population(AtomLevel::I.index())))
}

#[derive(Debug, Clone)]
pub struct ReducedComparison {
    pub times: Vec<f64>,
    /// Trace distance between the `(g, e)` block and the effective model.
    pub distances: Vec<f64>,
    pub i_populations: Vec<f64>,
    pub max_distance: f64,
    pub max_i_population: f64,
    /// Largest top-level population seen in either mode.
    pub max_top_population: f64,
    /// Worst hygiene of the full-model snapshots.
    pub hygiene: Hygiene,
    pub reduced: Vec<DensityMatrix>,
    pub effective: Vec<DensityMatrix>,
}

/// Integrates the full model from `ρ_atom ⊗ |0⟩⟨0| ⊗ |0⟩⟨0|` with RK4 step
/// `step`, reduces to the atom, and compares its `(g, e)` block with the
/// effective model started from the same block.
pub fn reduced_compare(p: &SchemeBParams, rho_atom: &DensityMatrix, t_grid: &[f64], step: f64) -> Result<ReducedComparison> {
    let model = full_model(p)?;
    let eff = effective_model(p)?;
    let (qubit0, _) = split_atom_state(rho_atom)?;
    let vac = |n| DensityMatrix::basis(HilbertLayout::single(n)?, 0);
    let rho0 = DensityMatrix::new(
        p.layout()?,
        rho_atom.entries().kronecker(vac(p.n_trunc_r)?.entries()).kronecker(vac(p.n_trunc_l)?.entries()),
    )?;
    let effective = integrate(&eff, &qubit0, t_grid, eff.stability_limit().min(1e-3))?;

    let mut out = ReducedComparison {
        times: t_grid.to_vec(),
        distances: Vec::with_capacity(t_grid.len()),
        i_populations: Vec::with_capacity(t_grid.len()),
        max_distance: 0.0,
        max_i_population: 0.0,
        max_top_population: 0.0,
        hygiene: Hygiene::default(),
        reduced: Vec::with_capacity(t_grid.len()),
        effective: effective.clone(),
    };
    let mut k = 0;
    integrate_with(&model, &rho0, t_grid, step, |_, rho| {
        out.hygiene = out.hygiene.worst(rho.hygiene());
        let top = rho.top_level_population(MODE_R)?.max(rho.top_level_population(MODE_L)?);
        out.max_top_population = out.max_top_population.max(top);
        if top > crate::atom_reservoir::TRUNCATION_LEAK {
            let factor = if rho.top_level_population(MODE_R)? >= top { MODE_R } else { MODE_L };
            return Err(Error::TruncationLeak { factor, population: top });
        }
        let (qubit, p_i) = split_atom_state(&partial_trace(rho, ATOM)?)?;
        let d = trace_distance(&qubit, &effective[k])?;
        out.distances.push(d);
        out.i_populations.push(p_i);
        out.max_distance = out.max_distance.max(d);
        out.max_i_population = out.max_i_population.max(p_i);
        out.reduced.push(qubit);
        k += 1;
        Ok(())
    })?;
    Ok(out)
}

/// Least-squares slope of `−ln y` against `t`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Result<f64> {
    if times.len() != values.len() || times.len() < 2 {
        return Err(Error::Domain("decay fit needs at least two matching samples".into()));
    }
    if values.iter().any(|&v| !(v > 0.0)) {
        return Err(Error::Domain("decay fit needs positive samples".into()));
    }
    let n = times.len() as f64;
    let ys: Vec<f64> = values.iter().map(|v| v.ln()).collect();
    let tm = times.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx) = (0.0, 0.0);
    for (t, y) in times.iter().zip(&ys) {
        sxy += (t - tm) * (y - ym);
        sxx += (t - tm) * (t - tm);
    }
    Ok(-sxy / sxx)
}
