//! Run configuration files.
//!
//! A config is a TOML document with a top-level `experiment` key and one
//! section per record. Every section is validated before anything runs, and
//! errors name the offending key.

use std::path::Path;

use cavity_unravel::atom_reservoir::{gi_rotation, SchemeAParams, ThermalFlux};
use cavity_unravel::purcell_reservoir::{FrameFrequencies, SchemeBParams};
use cavity_unravel::qstate::{unitarity_deviation, CMatrix, CVector, C64};
use serde::{Deserialize, Serialize};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// Thermal master equation for a qubit or a field mode.
    Master,
    /// Quantum-jump ensemble for the same thermal models.
    Trajectories,
    /// Repeated-interaction reservoir of three-level atoms.
    SchemeA,
    /// Purcell-engineered reservoir, full versus effective model.
    SchemeB,
    /// Two-qubit entanglement protection.
    Protection,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Master => "master",
            Experiment::Trajectories => "trajectories",
            Experiment::SchemeA => "scheme_a",
            Experiment::SchemeB => "scheme_b",
            Experiment::Protection => "protection",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSection {
    pub t_final: f64,
    /// Integration or trajectory step. Scheme A fixes it to `1/rate`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dt: Option<f64>,
    #[serde(default = "one")]
    pub sample_every: usize,
}

fn one() -> usize {
    1
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n_traj: usize,
    pub master_seed: u64,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self { n_traj: 100, master_seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSection {
    /// CSV file name; defaults to `<experiment>.csv`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub file: Option<String>,
    /// Output directory; `--out-dir` overrides it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dir: Option<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThermalSystem {
    Qubit,
    Mode,
}

/// `γ− D[σ−] + γ+ D[σ+]` on a qubit, or `γ− D[a] + γ+ D[a†]` on a mode.
/// Jump channels are ordered `(J0, J−, J+)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThermalSection {
    pub system: ThermalSystem,
    pub gamma_minus: f64,
    pub gamma_plus: f64,
    /// Fock truncation; required for `system = "mode"`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_trunc: Option<usize>,
    /// Initial basis state (qubit: 0 = g, 1 = e; mode: Fock number).
    #[serde(default = "one")]
    pub initial_level: usize,
    /// Initial amplitudes as `[re, im]` pairs; overrides `initial_level`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_amplitudes: Option<Vec<[f64; 2]>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SchemeAMode {
    Traced,
    Monitored,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RotationSection {
    pub theta: f64,
    #[serde(default)]
    pub phi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeASection {
    pub lambda1: f64,
    pub lambda2: f64,
    pub dt1: f64,
    pub dt2: f64,
    pub rate: f64,
    pub n_trunc: usize,
    pub mode: SchemeAMode,
    #[serde(default)]
    pub initial_fock: usize,
    /// g–i rotation applied before detection; identity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rotation: Option<RotationSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_e: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_bar: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SchemeBSection {
    pub kappa: f64,
    pub lambda_ge: f64,
    pub lambda_ie: f64,
    pub omega_drive: f64,
    pub gamma_nat: f64,
    #[serde(rename = "Gamma_nat")]
    pub big_gamma_nat: f64,
    #[serde(default)]
    pub delta_ge: f64,
    #[serde(default = "three")]
    pub n_trunc_r: usize,
    #[serde(default = "three")]
    pub n_trunc_l: usize,
    /// Initial atomic level: 0 = g, 1 = e, 2 = i.
    #[serde(default = "one")]
    pub initial_level: usize,
    #[serde(default)]
    pub omega_e: f64,
    #[serde(default)]
    pub omega_i: f64,
    #[serde(default)]
    pub omega_r: f64,
    #[serde(default)]
    pub omega_l: f64,
}

fn three() -> usize {
    3
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProtectionSection {
    pub gamma: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct UnravellingSection {
    /// Row-major `[re, im]` entries of the mixing matrix over all channels,
    /// the no-jump channel first.
    pub u: Vec<[f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub grid: GridSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub thermal: Option<ThermalSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub unravelling: Option<UnravellingSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_a: Option<SchemeASection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scheme_b: Option<SchemeBSection>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub protection: Option<ProtectionSection>,
    /// Written by runs; ignored when a manifest is used as a config.
    #[serde(default, skip_serializing)]
    pub manifest: Option<toml::Table>,
}

fn invalid(field: &str, message: impl Into<String>) -> CliError {
    CliError::Invalid { field: field.to_string(), message: message.into() }
}

fn positive(field: &str, v: f64) -> Result<f64, CliError> {
    if v > 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be a positive finite number, got {v}")))
    }
}

fn non_negative(field: &str, v: f64) -> Result<f64, CliError> {
    if v >= 0.0 && v.is_finite() {
        Ok(v)
    } else {
        Err(invalid(field, format!("must be a non-negative finite number, got {v}")))
    }
}

fn wrap(field: &str) -> impl Fn(cavity_unravel::Error) -> CliError + '_ {
    move |e| invalid(field, e.to_string())
}

pub fn complex_matrix(field: &str, entries: &[[f64; 2]], n: usize) -> Result<CMatrix, CliError> {
    if entries.len() != n * n {
        return Err(invalid(field, format!("expected {} entries for a {n}x{n} matrix, got {}", n * n, entries.len())));
    }
    let m = CMatrix::from_row_iterator(n, n, entries.iter().map(|[re, im]| C64::new(*re, *im)));
    let dev = unitarity_deviation(&m);
    if !(dev <= 1e-12) {
        return Err(invalid(field, format!("matrix is not unitary (max deviation {dev:e} > 1e-12)")));
    }
    Ok(m)
}

pub fn amplitudes(field: &str, entries: &[[f64; 2]], dim: usize) -> Result<CVector, CliError> {
    if entries.len() != dim {
        return Err(invalid(field, format!("expected {dim} amplitudes, got {}", entries.len())));
    }
    let v = CVector::from_iterator(dim, entries.iter().map(|[re, im]| C64::new(*re, *im)));
    if !(v.norm() > 0.0) || !v.norm().is_finite() {
        return Err(invalid(field, "amplitudes must have a positive finite norm"));
    }
    Ok(v.unscale(v.norm()))
}

impl ThermalSection {
    pub fn dim(&self) -> Result<usize, CliError> {
        match (self.system, self.n_trunc) {
            (ThermalSystem::Qubit, None) => Ok(2),
            (ThermalSystem::Qubit, Some(_)) => Err(invalid("thermal.n_trunc", "only valid for system = \"mode\"")),
            (ThermalSystem::Mode, Some(n)) if n >= 2 => Ok(n),
            (ThermalSystem::Mode, Some(n)) => Err(invalid("thermal.n_trunc", format!("must be at least 2, got {n}"))),
            (ThermalSystem::Mode, None) => Err(invalid("thermal.n_trunc", "required for system = \"mode\"")),
        }
    }

    pub fn initial(&self) -> Result<CVector, CliError> {
        let dim = self.dim()?;
        match &self.initial_amplitudes {
            Some(a) => amplitudes("thermal.initial_amplitudes", a, dim),
            None if self.initial_level < dim => {
                let mut v = CVector::zeros(dim);
                v[self.initial_level] = C64::from(1.0);
                Ok(v)
            }
            None => Err(invalid("thermal.initial_level", format!("{} is outside a {dim}-level system", self.initial_level))),
        }
    }
}

impl SchemeASection {
    pub fn params(&self) -> Result<SchemeAParams, CliError> {
        let flux = match (self.r_e, self.r_g, self.n_bar) {
            (None, None, None) => None,
            (Some(r_e), Some(r_g), Some(n_bar)) => Some(ThermalFlux { r_e, r_g, n_bar }),
            _ => return Err(invalid("scheme_a.r_e", "r_e, r_g and n_bar must be given together")),
        };
        let p = SchemeAParams {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            dt1: self.dt1,
            dt2: self.dt2,
            rate: self.rate,
            n_trunc: self.n_trunc,
            thermal_flux: flux,
        };
        p.validate().map_err(wrap("scheme_a"))?;
        if self.initial_fock >= self.n_trunc {
            return Err(invalid("scheme_a.initial_fock", format!("{} is outside the truncation {}", self.initial_fock, self.n_trunc)));
        }
        Ok(p)
    }

    pub fn rotation_matrix(&self) -> CMatrix {
        match &self.rotation {
            Some(r) => gi_rotation(r.theta, r.phi),
            None => CMatrix::identity(3, 3),
        }
    }
}

impl SchemeBSection {
    pub fn params(&self) -> Result<SchemeBParams, CliError> {
        let p = SchemeBParams {
            kappa: self.kappa,
            lambda_ge: self.lambda_ge,
            lambda_ie: self.lambda_ie,
            omega_drive: self.omega_drive,
            gamma_nat: self.gamma_nat,
            big_gamma_nat: self.big_gamma_nat,
            delta_ge: self.delta_ge,
            n_trunc_r: self.n_trunc_r,
            n_trunc_l: self.n_trunc_l,
            frame: FrameFrequencies { omega_e: self.omega_e, omega_i: self.omega_i, omega_r: self.omega_r, omega_l: self.omega_l },
        };
        p.validate().map_err(wrap("scheme_b"))?;
        positive("scheme_b.kappa", p.kappa)?;
        positive("scheme_b.lambda_ie", p.lambda_ie)?;
        if self.initial_level > 2 {
            return Err(invalid("scheme_b.initial_level", format!("{} is not an atomic level (0, 1, 2)", self.initial_level)));
        }
        Ok(p)
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Parse(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
        Self::from_toml(&text)
    }

    pub fn output_file(&self) -> String {
        self.output.file.clone().unwrap_or_else(|| format!("{}.csv", self.experiment.name()))
    }

    fn require<'a, T>(&self, section: &'a Option<T>, name: &str) -> Result<&'a T, CliError> {
        section.as_ref().ok_or_else(|| invalid(name, format!("section [{name}] is required for experiment = \"{}\"", self.experiment.name())))
    }

    pub fn thermal(&self) -> Result<&ThermalSection, CliError> {
        self.require(&self.thermal, "thermal")
    }

    pub fn scheme_a(&self) -> Result<&SchemeASection, CliError> {
        self.require(&self.scheme_a, "scheme_a")
    }

    pub fn scheme_b(&self) -> Result<&SchemeBSection, CliError> {
        self.require(&self.scheme_b, "scheme_b")
    }

    pub fn protection(&self) -> Result<&ProtectionSection, CliError> {
        self.require(&self.protection, "protection")
    }

    pub fn step(&self) -> Result<f64, CliError> {
        let dt = self.grid.dt.ok_or_else(|| invalid("grid.dt", "required for this experiment"))?;
        positive("grid.dt", dt)
    }

    /// Checks that only the sections used by the experiment are present and
    /// that every value is in range.
    pub fn validate(&self) -> Result<Vec<String>, CliError> {
        let used: &[&str] = match self.experiment {
            Experiment::Master => &["thermal"],
            Experiment::Trajectories => &["thermal", "unravelling"],
            Experiment::SchemeA => &["scheme_a"],
            Experiment::SchemeB => &["scheme_b"],
            Experiment::Protection => &["protection"],
        };
        let present = [
            ("thermal", self.thermal.is_some()),
            ("unravelling", self.unravelling.is_some()),
            ("scheme_a", self.scheme_a.is_some()),
            ("scheme_b", self.scheme_b.is_some()),
            ("protection", self.protection.is_some()),
        ];
        for (name, is_present) in present {
            if is_present && !used.contains(&name) {
                return Err(invalid(name, format!("section is not used by experiment = \"{}\"", self.experiment.name())));
            }
        }
        non_negative("grid.t_final", self.grid.t_final)?;
        if self.grid.sample_every == 0 {
            return Err(invalid("grid.sample_every", "must be at least 1"));
        }
        if let Some(dir) = &self.output.dir {
            if dir.is_empty() {
                return Err(invalid("output.dir", "must not be empty"));
            }
        }
        let file = self.output_file();
        if file.is_empty() || file.contains('/') || file.contains('\\') {
            return Err(invalid("output.file", "must be a plain file name"));
        }

        let mut warnings = Vec::new();
        match self.experiment {
            Experiment::Master | Experiment::Trajectories => {
                let th = self.thermal()?;
                non_negative("thermal.gamma_minus", th.gamma_minus)?;
                non_negative("thermal.gamma_plus", th.gamma_plus)?;
                th.initial()?;
                self.step()?;
                if self.experiment == Experiment::Trajectories {
                    self.ensemble_checks()?;
                    if let Some(u) = &self.unravelling {
                        complex_matrix("unravelling.u", &u.u, 3)?;
                    }
                }
            }
            Experiment::SchemeA => {
                let sa = self.scheme_a()?;
                let p = sa.params()?;
                if let Some(dt) = self.grid.dt {
                    if (dt * p.rate - 1.0).abs() > 1e-12 {
                        return Err(invalid("grid.dt", format!("scheme_a steps one atom at a time; dt must be 1/rate = {}", 1.0 / p.rate)));
                    }
                }
                if sa.mode == SchemeAMode::Monitored {
                    self.ensemble_checks()?;
                }
            }
            Experiment::SchemeB => {
                let p = self.scheme_b()?.params()?;
                self.step()?;
                warnings = p.check_hierarchy();
            }
            Experiment::Protection => {
                positive("protection.gamma", self.protection()?.gamma)?;
                self.step()?;
                self.ensemble_checks()?;
            }
        }
        Ok(warnings)
    }

    fn ensemble_checks(&self) -> Result<(), CliError> {
        if self.ensemble.n_traj == 0 {
            return Err(invalid("ensemble.n_traj", "must be at least 1"));
        }
        Ok(())
    }
}
