//! Experiment dispatch, CSV and manifest output.
//!
//! Everything that can be checked without running is checked in
//! [`prepare`]; files are only written after the whole run has succeeded.

use std::path::{Path, PathBuf};

use cavity_unravel::atom_reservoir::{engineered_rates, kraus_channel_set, run_traced, SchemeAParams, TRUNCATION_LEAK};
use cavity_unravel::entanglement::{bell_concurrence_decay, concurrence, protection_channel_set, protection_run, ProtectionConfig};
use cavity_unravel::liouville::{integrate, integrate_with, Channel, LindbladModel};
use cavity_unravel::output::{emit_csv, TimeSeries};
use cavity_unravel::purcell_reservoir::{effective_rates, full_model, reduced_compare, SchemeBParams};
use cavity_unravel::qstate::{
    annihilation_op, atom_layout, creation_op, expectation, fock, number_op, qubit_layout, sigma_minus, sigma_plus,
    trace_distance, DensityMatrix, HilbertLayout, OperatorMatrix, StateVector,
};
use cavity_unravel::unraveller::{build_jump_channels, ensemble_average, ChannelSet, EnsembleConfig, Observable, SampleGrid};
use cavity_unravel::Error;

use crate::config::{complex_matrix, ExperimentConfig, SchemeAMode, ThermalSection, ThermalSystem};
use crate::error::CliError;

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

/// Result of a run before anything is written.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub series: Vec<TimeSeries>,
    /// Values computed from the parameters or the run, echoed in the manifest.
    pub derived: toml::Table,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunPaths {
    pub csv: PathBuf,
    pub manifest: PathBuf,
}

struct ThermalSetup {
    layout: HilbertLayout,
    lower: OperatorMatrix,
    raise: OperatorMatrix,
    number: OperatorMatrix,
    psi0: StateVector,
    label: &'static str,
}

enum Plan {
    Master { th: ThermalSetup, model: LindbladModel, grid: Vec<f64>, step: f64 },
    Trajectories { th: ThermalSetup, model: LindbladModel, cs: ChannelSet, step: f64 },
    SchemeA { p: SchemeAParams, rotation: cavity_unravel::qstate::CMatrix, n_atoms: usize, cs: Option<ChannelSet> },
    SchemeB { p: SchemeBParams, grid: Vec<f64>, step: f64 },
    Protection { cfg: ProtectionConfig },
}

fn field_error(field: &str, e: Error) -> CliError {
    CliError::Invalid { field: field.to_string(), message: e.to_string() }
}

fn thermal_setup(th: &ThermalSection) -> Result<ThermalSetup, CliError> {
    let dim = th.dim()?;
    let (layout, lower, raise, number, label) = match th.system {
        ThermalSystem::Qubit => {
            let number = sigma_plus().compose(&sigma_minus())?.with_label("σ+σ−");
            (qubit_layout(), sigma_minus(), sigma_plus(), number, "p_e")
        }
        ThermalSystem::Mode => {
            (HilbertLayout::single(dim)?, annihilation_op(dim)?, creation_op(dim)?, number_op(dim)?, "n_mean")
        }
    };
    let psi0 = StateVector::new(layout.clone(), th.initial()?)?;
    Ok(ThermalSetup { layout, lower, raise, number, psi0, label })
}

fn thermal_model(th: &ThermalSection, setup: &ThermalSetup) -> Result<LindbladModel, CliError> {
    Ok(LindbladModel::dissipative(
        setup.layout.clone(),
        vec![Channel::new(th.gamma_minus, setup.lower.clone()), Channel::new(th.gamma_plus, setup.raise.clone())],
    )?)
}

fn check_step(model: &LindbladModel, step: f64) -> Result<(), CliError> {
    let limit = model.stability_limit();
    if step > limit {
        return Err(field_error("grid.dt", Error::StepTooLarge { step, limit }));
    }
    Ok(())
}

fn sample_grid(cfg: &ExperimentConfig, dt: f64) -> Result<SampleGrid, CliError> {
    SampleGrid::new(cfg.grid.t_final, dt, cfg.grid.sample_every).map_err(|e| field_error("grid", e))
}

fn prepare(cfg: &ExperimentConfig) -> Result<Plan, CliError> {
    use crate::config::Experiment::*;
    Ok(match cfg.experiment {
        Master => {
            let section = cfg.thermal()?;
            let th = thermal_setup(section)?;
            let model = thermal_model(section, &th)?;
            let step = cfg.step()?;
            check_step(&model, step)?;
            let grid = sample_grid(cfg, step)?.times(step);
            Plan::Master { th, model, grid, step }
        }
        Trajectories => {
            let section = cfg.thermal()?;
            let th = thermal_setup(section)?;
            let model = thermal_model(section, &th)?;
            let step = cfg.step()?;
            check_step(&model, step)?;
            sample_grid(cfg, step)?;
            let mut cs = build_jump_channels(
                &[(section.gamma_minus, th.lower.clone()), (section.gamma_plus, th.raise.clone())],
                step,
            )
            .map_err(|e| field_error("grid.dt", e))?;
            if let Some(u) = &cfg.unravelling {
                cs = cs.mix(&complex_matrix("unravelling.u", &u.u, cs.len())?).map_err(|e| field_error("unravelling.u", e))?;
            }
            Plan::Trajectories { th, model, cs, step }
        }
        SchemeA => {
            let sa = cfg.scheme_a()?;
            let p = sa.params()?;
            let rotation = sa.rotation_matrix();
            let n = (cfg.grid.t_final * p.rate).round();
            if (n / p.rate - cfg.grid.t_final).abs() > 1e-9 * cfg.grid.t_final.max(1.0) {
                return Err(CliError::Invalid {
                    field: "grid.t_final".into(),
                    message: format!("must be a whole number of atoms at rate {}", p.rate),
                });
            }
            let n_atoms = n as usize;
            if !n_atoms.is_multiple_of(cfg.grid.sample_every) {
                return Err(CliError::Invalid {
                    field: "grid.sample_every".into(),
                    message: format!("{n_atoms} atoms are not a multiple of {}", cfg.grid.sample_every),
                });
            }
            let cs = match sa.mode {
                SchemeAMode::Traced => None,
                SchemeAMode::Monitored => Some(kraus_channel_set(&p, &rotation).map_err(|e| field_error("scheme_a", e))?),
            };
            Plan::SchemeA { p, rotation, n_atoms, cs }
        }
        SchemeB => {
            let p = cfg.scheme_b()?.params()?;
            let step = cfg.step()?;
            check_step(&full_model(&p)?, step)?;
            let grid = sample_grid(cfg, step)?.times(step);
            Plan::SchemeB { p, grid, step }
        }
        Protection => {
            let gamma = cfg.protection()?.gamma;
            let step = cfg.step()?;
            sample_grid(cfg, step)?;
            protection_channel_set(gamma, step).map_err(|e| field_error("grid.dt", e))?;
            Plan::Protection {
                cfg: ProtectionConfig {
                    gamma,
                    t_final: cfg.grid.t_final,
                    n_traj: cfg.ensemble.n_traj,
                    dt: step,
                    sample_every: cfg.grid.sample_every,
                    master_seed: cfg.ensemble.master_seed,
                },
            }
        }
    })
}

/// Validates `cfg` completely without running it; returns hierarchy warnings.
pub fn validate(cfg: &ExperimentConfig) -> Result<Vec<String>, CliError> {
    let warnings = cfg.validate()?;
    prepare(cfg)?;
    Ok(warnings)
}

fn top_population(rho: &DensityMatrix) -> f64 {
    let d = rho.layout().total_dim();
    rho.population(d - 1)
}

fn leak_check(population: f64) -> Result<(), CliError> {
    if population > TRUNCATION_LEAK {
        return Err(Error::TruncationLeak { factor: 0, population }.into());
    }
    Ok(())
}

fn real(rho: &DensityMatrix, op: &OperatorMatrix) -> Result<f64, CliError> {
    Ok(expectation(rho, op)?.re)
}

fn counts_table(labels: &[&str], counts: &[u64]) -> toml::Table {
    labels.iter().zip(counts).map(|(l, c)| (l.to_string(), toml::Value::Integer(*c as i64))).collect()
}

fn insert(t: &mut toml::Table, key: &str, v: impl Into<toml::Value>) {
    t.insert(key.to_string(), v.into());
}

/// Runs the experiment in memory.
pub fn execute(cfg: &ExperimentConfig) -> Result<RunOutput, CliError> {
    let warnings = cfg.validate()?;
    let plan = prepare(cfg)?;
    let mut derived = toml::Table::new();
    let series = match plan {
        Plan::Master { th, model, grid, step } => {
            let is_mode = cfg.thermal()?.system == ThermalSystem::Mode;
            let mut obs = Vec::with_capacity(grid.len());
            let mut tops = Vec::with_capacity(grid.len());
            let mut coherence = Vec::with_capacity(grid.len());
            integrate_with(&model, &DensityMatrix::from_pure(&th.psi0), &grid, step, |_, rho| {
                obs.push(expectation(rho, &th.number)?.re);
                coherence.push(rho.entries()[(0, 1)]);
                let top = top_population(rho);
                if is_mode && top > TRUNCATION_LEAK {
                    return Err(Error::TruncationLeak { factor: 0, population: top });
                }
                tops.push(top);
                Ok(())
            })?;
            let th_cfg = cfg.thermal()?;
            let (gm, gp) = (th_cfg.gamma_minus, th_cfg.gamma_plus);
            if is_mode && gm > gp {
                insert(&mut derived, "steady_n_mean", gp / (gm - gp));
            } else if !is_mode && gm + gp > 0.0 {
                insert(&mut derived, "steady_p_e", gp / (gm + gp));
            }
            let mut s = vec![TimeSeries::real(th.label, &grid, obs)];
            if is_mode {
                insert(&mut derived, "max_top_population", tops.iter().copied().fold(0.0, f64::max));
                s.push(TimeSeries::real("p_top", &grid, tops));
            } else {
                s.push(TimeSeries::complex("rho_ge", &grid, coherence));
            }
            s
        }
        Plan::Trajectories { th, model, cs, step } => {
            let is_mode = cfg.thermal()?.system == ThermalSystem::Mode;
            let ens = ensemble_average(
                &th.psi0,
                &cs,
                &EnsembleConfig {
                    n_traj: cfg.ensemble.n_traj,
                    t_final: cfg.grid.t_final,
                    sample_every: cfg.grid.sample_every,
                    master_seed: cfg.ensemble.master_seed,
                    keep_records: 0,
                },
                &[],
            )?;
            let master = integrate(&model, &DensityMatrix::from_pure(&th.psi0), &ens.times, step)?;
            let mut mean = Vec::with_capacity(ens.times.len());
            let mut reference = Vec::with_capacity(ens.times.len());
            let mut distance = Vec::with_capacity(ens.times.len());
            for (m, r) in ens.mean_states.iter().zip(&master) {
                if is_mode {
                    leak_check(top_population(m).max(top_population(r)))?;
                }
                mean.push(real(m, &th.number)?);
                reference.push(real(r, &th.number)?);
                distance.push(trace_distance(m, r)?);
            }
            insert(&mut derived, "max_trace_distance", distance.iter().copied().fold(0.0, f64::max));
            insert(&mut derived, "channel_counts", counts_table(&["J0", "J_minus", "J_plus"], &ens.channel_counts));
            vec![
                TimeSeries::real(th.label, &ens.times, mean),
                TimeSeries::real(format!("{}_master", th.label), &ens.times, reference),
                TimeSeries::real("trace_distance", &ens.times, distance),
            ]
        }
        Plan::SchemeA { p, rotation, n_atoms, cs } => {
            let sa = cfg.scheme_a()?;
            let rates = engineered_rates(&p);
            insert(&mut derived, "gamma_plus", rates.gamma_plus);
            insert(&mut derived, "gamma_minus", rates.gamma_minus);
            if let Some(n) = rates.steady_n_bar() {
                insert(&mut derived, "steady_n_mean", n);
            }
            if let Some(flux) = &p.thermal_flux {
                let r = flux.rates(p.angle1());
                insert(&mut derived, "thermal_gamma_plus", r.gamma_plus);
                insert(&mut derived, "thermal_gamma_minus", r.gamma_minus);
            }
            let psi0 = fock(p.n_trunc, sa.initial_fock)?;
            let traced = run_traced(&p, &rotation, &DensityMatrix::from_pure(&psi0), n_atoms, cfg.grid.sample_every)?;
            let number = number_op(p.n_trunc)?;
            let n_traced = traced.states.iter().map(|r| real(r, &number)).collect::<Result<Vec<_>, _>>()?;
            let tops: Vec<f64> = traced.states.iter().map(top_population).collect();
            insert(&mut derived, "max_top_population", tops.iter().copied().fold(0.0, f64::max));
            match cs {
                None => vec![TimeSeries::real("n_mean", &traced.times, n_traced), TimeSeries::real("p_top", &traced.times, tops)],
                Some(cs) => {
                    let ens = ensemble_average(
                        &psi0,
                        &cs,
                        &EnsembleConfig {
                            n_traj: cfg.ensemble.n_traj,
                            t_final: cfg.grid.t_final,
                            sample_every: cfg.grid.sample_every,
                            master_seed: cfg.ensemble.master_seed,
                            keep_records: 0,
                        },
                        &[Observable::expectation("n", number.clone())],
                    )?;
                    let mut n_mean = Vec::with_capacity(ens.times.len());
                    let mut distance = Vec::with_capacity(ens.times.len());
                    for (m, r) in ens.mean_states.iter().zip(&traced.states) {
                        leak_check(top_population(m))?;
                        n_mean.push(real(m, &number)?);
                        distance.push(trace_distance(m, r)?);
                    }
                    insert(&mut derived, "max_trace_distance", distance.iter().copied().fold(0.0, f64::max));
                    insert(&mut derived, "channel_counts", counts_table(&["e", "g", "i"], &ens.channel_counts));
                    vec![
                        TimeSeries::real("n_mean", &ens.times, n_mean),
                        TimeSeries::real("n_mean_traced", &ens.times, n_traced),
                        TimeSeries::real("trace_distance", &ens.times, distance),
                    ]
                }
            }
        }
        Plan::SchemeB { p, grid, step } => {
            let rates = effective_rates(&p)?;
            insert(&mut derived, "gamma_minus", rates.gamma_minus);
            insert(&mut derived, "gamma_plus", rates.gamma_plus);
            insert(&mut derived, "gamma_ie", rates.gamma_ie);
            insert(&mut derived, "steady_p_e", rates.steady_excited_population());
            let level = cfg.scheme_b()?.initial_level;
            let rho_atom = DensityMatrix::basis(atom_layout(), level)?;
            let cmp = reduced_compare(&p, &rho_atom, &grid, step)?;
            insert(&mut derived, "max_trace_distance", cmp.max_distance);
            insert(&mut derived, "max_i_population", cmp.max_i_population);
            insert(&mut derived, "max_top_population", cmp.max_top_population);
            let pick = |states: &[DensityMatrix], k: usize| states.iter().map(|r| r.population(k)).collect::<Vec<_>>();
            vec![
                TimeSeries::real("p_g", &grid, pick(&cmp.reduced, 0)),
                TimeSeries::real("p_e", &grid, pick(&cmp.reduced, 1)),
                TimeSeries::real("p_i", &grid, cmp.i_populations.clone()),
                TimeSeries::real("p_e_effective", &grid, pick(&cmp.effective, 1)),
                TimeSeries::real("trace_distance", &grid, cmp.distances.clone()),
            ]
        }
        Plan::Protection { cfg: pc } => {
            let run = protection_run(&pc)?;
            if let Some(t) = run.crossing_time {
                insert(&mut derived, "crossing_time", t);
            }
            insert(&mut derived, "max_trajectory_deviation", run.max_trajectory_deviation);
            let n = run.times.len();
            let column = |f: fn(f64, f64) -> f64, init: f64| {
                (0..n).map(|k| run.trajectory_concurrence.iter().map(|c| c[k]).fold(init, f)).collect::<Vec<_>>()
            };
            let mean_c = run.mean_states.iter().map(concurrence).collect::<Result<Vec<_>, _>>()?;
            vec![
                TimeSeries::real("concurrence_master", &run.times, run.master_concurrence.clone()),
                TimeSeries::real("concurrence_closed_form", &run.times, run.times.iter().map(|t| bell_concurrence_decay(pc.gamma, *t)).collect()),
                TimeSeries::real("concurrence_mean_state", &run.times, mean_c),
                TimeSeries::real("concurrence_traj_min", &run.times, column(f64::min, f64::INFINITY)),
                TimeSeries::real("concurrence_traj_max", &run.times, column(f64::max, f64::NEG_INFINITY)),
            ]
        }
    };
    Ok(RunOutput { series, derived, warnings })
}

/// The config as it was run, with output names resolved, plus a
/// `[manifest]` table. Feeding it back as a config reproduces the run.
pub fn manifest_text(cfg: &ExperimentConfig, out: &RunOutput) -> Result<String, CliError> {
    let mut table = toml::Table::try_from(cfg).map_err(|e| CliError::Parse(e.to_string()))?;
    let mut info = toml::Table::new();
    insert(&mut info, "version", VERSION);
    insert(&mut info, "library_version", cavity_unravel::VERSION);
    insert(&mut info, "master_seed", cfg.ensemble.master_seed as i64);
    insert(&mut info, "warnings", out.warnings.iter().map(|w| toml::Value::String(w.clone())).collect::<Vec<_>>());
    insert(&mut info, "derived", out.derived.clone());
    table.insert("manifest".into(), toml::Value::Table(info));
    toml::to_string(&table).map_err(|e| CliError::Parse(e.to_string()))
}

fn manifest_name(csv: &str) -> String {
    let stem = csv.strip_suffix(".csv").unwrap_or(csv);
    format!("{stem}.manifest.toml")
}

/// Applies the command-line overrides and fills in output names, so the
/// manifest records exactly what ran.
pub fn resolve(mut cfg: ExperimentConfig, seed: Option<u64>, out_dir: Option<&Path>) -> ExperimentConfig {
    if let Some(s) = seed {
        cfg.ensemble.master_seed = s;
    }
    if let Some(d) = out_dir {
        cfg.output.dir = Some(d.to_string_lossy().into_owned());
    }
    cfg.output.file = Some(cfg.output_file());
    cfg.manifest = None;
    cfg
}

/// Runs `cfg` and writes the CSV and manifest into its output directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<(RunPaths, RunOutput), CliError> {
    let out = execute(cfg)?;
    let manifest = manifest_text(cfg, &out)?;
    let dir = PathBuf::from(cfg.output.dir.clone().unwrap_or_else(|| ".".into()));
    let file = cfg.output_file();
    let paths = RunPaths { csv: dir.join(&file), manifest: dir.join(manifest_name(&file)) };
    let io = |path: &Path| {
        let path = path.to_path_buf();
        move |source| CliError::Io { path, source }
    };
    std::fs::create_dir_all(&dir).map_err(io(&dir))?;
    emit_csv(&out.series, &paths.csv).map_err(|e| match e {
        Error::Io(source) => CliError::Io { path: paths.csv.clone(), source },
        other => other.into(),
    })?;
    std::fs::write(&paths.manifest, manifest).map_err(io(&paths.manifest))?;
    Ok((paths, out))
}
