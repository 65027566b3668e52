//! Jump-type quantum trajectories with arbitrary unitary channel mixing.
//!
//! A [`ChannelSet`] holds the measurement operators `M_k` for one step of
//! length `dt`. Index 0 is the no-jump operator before any mixing. Mixing
//! by a unitary `U` replaces `M_j` with `Σ_k U_jk M_k`, which leaves
//! `Σ_k M_k†M_k` (and therefore the averaged dynamics) unchanged while
//! changing what a single click means.
//!
//! Every step evaluates all branch probabilities, renormalizes them to sum
//! to one, and picks a branch by inverse CDF in channel order.

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::qstate::{check_unitary, max_abs, CMatrix, DensityMatrix, HilbertLayout, OperatorMatrix, StateVector, C64, ONE, ZERO};

/// Maximum `dt · γ` for which the first-order no-jump operator is accepted.
pub const MAX_RATE_STEP: f64 = 0.05;

#[derive(Debug, Clone, PartialEq)]
pub struct ChannelSet {
    dt: f64,
    ops: Vec<OperatorMatrix>,
    mixing: CMatrix,
    source_rates: Vec<f64>,
}

/// `M_0 = I − (dt/2) Σ_k γ_k L_k†L_k`, `M_k = √(γ_k dt) L_k`, unmixed.
pub fn build_jump_channels(rates: &[(f64, OperatorMatrix)], dt: f64) -> Result<ChannelSet> {
    let Some((_, first)) = rates.first() else {
        return Err(Error::Domain("at least one jump channel is required".into()));
    };
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::Domain(format!("step dt = {dt} must be positive")));
    }
    let layout = first.layout().clone();
    let max_rate = rates.iter().map(|(g, _)| *g).fold(0.0, f64::max);
    if rates.iter().any(|(g, _)| !(*g >= 0.0)) {
        return Err(Error::Domain("jump rates must be non-negative".into()));
    }
    if max_rate * dt > MAX_RATE_STEP {
        return Err(Error::StepValidity(max_rate * dt));
    }
    let d = layout.total_dim();
    let mut no_jump = CMatrix::identity(d, d);
    let mut ops = Vec::with_capacity(rates.len() + 1);
    ops.push(OperatorMatrix::zeros(layout.clone()));
    for (gamma, l) in rates {
        if l.layout() != &layout {
            return Err(Error::LayoutMismatch(format!("jump operator {} on a different layout", l.label())));
        }
        let le = l.entries();
        no_jump -= (le.adjoint() * le).map(|z| z * (0.5 * gamma * dt));
        ops.push(l.scale(C64::from((gamma * dt).sqrt())).with_label(format!("J[{}]", l.label())));
    }
    ops[0] = OperatorMatrix::new(layout, no_jump, "J0")?;
    let n = ops.len();
    Ok(ChannelSet { dt, ops, mixing: CMatrix::identity(n, n), source_rates: rates.iter().map(|(g, _)| *g).collect() })
}

/// `ops'_j = Σ_k U_jk ops_k`; the accumulated mixing becomes `U · mixing`.
pub fn mix_channels(cs: &ChannelSet, u: &CMatrix) -> Result<ChannelSet> {
    let n = cs.ops.len();
    if u.nrows() != n || u.ncols() != n {
        return Err(Error::InvalidDimension(format!("{}x{} mixing for {n} channels", u.nrows(), u.ncols())));
    }
    check_unitary(u, "channel mixing")?;
    let layout = cs.layout().clone();
    let d = layout.total_dim();
    let mut ops = Vec::with_capacity(n);
    for j in 0..n {
        let mut m = CMatrix::zeros(d, d);
        for (k, op) in cs.ops.iter().enumerate() {
            let w = u[(j, k)];
            if w != ZERO {
                m += op.entries().map(|z| z * w);
            }
        }
        ops.push(OperatorMatrix::new(layout.clone(), m, format!("M{j}"))?);
    }
    Ok(ChannelSet { dt: cs.dt, ops, mixing: u * &cs.mixing, source_rates: cs.source_rates.clone() })
}

impl ChannelSet {
    /// Channel set from an exact Kraus family (e.g. detected ancillas), with
    /// `ops[0]` taken as the no-click outcome.
    pub fn from_kraus(ops: Vec<OperatorMatrix>, dt: f64, source_rates: Vec<f64>) -> Result<Self> {
        let Some(first) = ops.first() else {
            return Err(Error::Domain("empty Kraus family".into()));
        };
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("step dt = {dt} must be positive")));
        }
        let layout = first.layout().clone();
        if ops.iter().any(|o| o.layout() != &layout) {
            return Err(Error::LayoutMismatch("Kraus operators on different layouts".into()));
        }
        let n = ops.len();
        Ok(Self { dt, ops, mixing: CMatrix::identity(n, n), source_rates })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn ops(&self) -> &[OperatorMatrix] {
        &self.ops
    }

    pub fn mixing(&self) -> &CMatrix {
        &self.mixing
    }

    pub fn source_rates(&self) -> &[f64] {
        &self.source_rates
    }

    pub fn len(&self) -> usize {
        self.ops.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ops.is_empty()
    }

    pub fn layout(&self) -> &HilbertLayout {
        self.ops[0].layout()
    }

    pub fn mix(&self, u: &CMatrix) -> Result<ChannelSet> {
        mix_channels(self, u)
    }

    /// `Σ_k M_k†M_k`.
    pub fn completeness_sum(&self) -> CMatrix {
        let d = self.layout().total_dim();
        let mut acc = CMatrix::zeros(d, d);
        for op in &self.ops {
            let m = op.entries();
            acc += m.adjoint() * m;
        }
        acc
    }

    /// `‖Σ_k M_k†M_k − I‖_max`.
    pub fn completeness_residual(&self) -> f64 {
        let d = self.layout().total_dim();
        max_abs(&(self.completeness_sum() - CMatrix::identity(d, d)))
    }

    /// Residual bound for the first-order construction, `10 (max_k γ_k dt)²`.
    pub fn completeness_bound(&self) -> f64 {
        let g = self.source_rates.iter().cloned().fold(0.0, f64::max);
        10.0 * (g * self.dt).powi(2)
    }

    /// `⟨ψ|M_k†M_k|ψ⟩` for every channel.
    pub fn probabilities(&self, psi: &StateVector) -> Result<Vec<f64>> {
        self.ops.iter().map(|m| Ok(psi.apply(m)?.norm_sqr())).collect()
    }
}

/// Inverse-CDF pick over unnormalized weights; `None` if they all vanish.
fn select(weights: &[f64], draw: f64) -> Option<usize> {
    let total: f64 = weights.iter().sum();
    if !(total >= 1e-15) || weights.iter().all(|&p| p < 1e-15) {
        return None;
    }
    let target = draw * total;
    let mut cum = 0.0;
    let mut last_nonzero = 0;
    for (k, &p) in weights.iter().enumerate() {
        if p > 0.0 {
            last_nonzero = k;
        }
        cum += p;
        if p > 0.0 && target < cum {
            return Some(k);
        }
    }
    Some(last_nonzero)
}

/// One measurement step. `draw` is uniform in `[0, 1)`.
pub fn trajectory_step(psi: &StateVector, cs: &ChannelSet, draw: f64) -> Result<(usize, StateVector)> {
    if !psi.is_normalized() {
        return Err(Error::InvalidState("trajectory step needs a normalized state".into()));
    }
    let branches: Vec<StateVector> = cs.ops.iter().map(|m| psi.apply(m)).collect::<Result<_>>()?;
    let weights: Vec<f64> = branches.iter().map(StateVector::norm_sqr).collect();
    let k = select(&weights, draw).ok_or(Error::DegenerateState)?;
    Ok((k, branches[k].normalized()?))
}

/// Allocation-free stepping over a fixed channel set, for ensembles.
struct Stepper<'a> {
    cs: &'a ChannelSet,
    d: usize,
    branches: Vec<Vec<C64>>,
    weights: Vec<f64>,
}

impl<'a> Stepper<'a> {
    fn new(cs: &'a ChannelSet) -> Self {
        let d = cs.layout().total_dim();
        Self { cs, d, branches: vec![vec![ZERO; d]; cs.len()], weights: vec![0.0; cs.len()] }
    }

    fn step(&mut self, psi: &mut [C64], draw: f64) -> Result<usize> {
        let d = self.d;
        for (k, op) in self.cs.ops.iter().enumerate() {
            let m = op.entries().as_slice(); // column-major
            let out = &mut self.branches[k];
            out.fill(ZERO);
            for (c, &a) in psi.iter().enumerate() {
                if a == ZERO {
                    continue;
                }
                let col = &m[c * d..(c + 1) * d];
                for r in 0..d {
                    out[r] += col[r] * a;
                }
            }
            self.weights[k] = out.iter().map(|z| z.norm_sqr()).sum();
        }
        let k = select(&self.weights, draw).ok_or(Error::DegenerateState)?;
        let inv = 1.0 / self.weights[k].sqrt();
        for (dst, src) in psi.iter_mut().zip(&self.branches[k]) {
            *dst = src * inv;
        }
        Ok(k)
    }
}

/// Seed of trajectory `index` under `master_seed`: the SplitMix64 output
/// function applied to `master_seed + (index + 1) · 0x9E3779B97F4A7C15`.
pub fn derive_seed(master_seed: u64, index: u64) -> u64 {
    let mut z = master_seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// A real-valued quantity sampled along a trajectory.
#[derive(Clone)]
pub struct Observable {
    name: String,
    eval: Arc<dyn Fn(&StateVector) -> f64 + Send + Sync>,
}

impl Observable {
    /// `Re ⟨ψ|O|ψ⟩`.
    pub fn expectation(name: impl Into<String>, op: OperatorMatrix) -> Self {
        Self {
            name: name.into(),
            eval: Arc::new(move |psi: &StateVector| psi.expectation(&op).map(|z| z.re).unwrap_or(f64::NAN)),
        }
    }

    pub fn from_fn<F>(name: impl Into<String>, f: F) -> Self
    where
        F: Fn(&StateVector) -> f64 + Send + Sync + 'static,
    {
        Self { name: name.into(), eval: Arc::new(f) }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn eval(&self, psi: &StateVector) -> f64 {
        (self.eval)(psi)
    }
}

impl std::fmt::Debug for Observable {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Observable").field("name", &self.name).finish_non_exhaustive()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRecord {
    pub seed: u64,
    /// Sample times (the observable grid).
    pub times: Vec<f64>,
    /// Selected channel at every step.
    pub outcomes: Vec<u8>,
    pub observables: Vec<(String, Vec<f64>)>,
}

impl TrajectoryRecord {
    /// Number of times each channel fired.
    pub fn counts(&self, n_channels: usize) -> Vec<usize> {
        let mut c = vec![0; n_channels];
        for &k in &self.outcomes {
            c[k as usize] += 1;
        }
        c
    }

    pub fn series(&self, name: &str) -> Option<&[f64]> {
        self.observables.iter().find(|(n, _)| n == name).map(|(_, v)| v.as_slice())
    }
}

/// Time discretization shared by a trajectory and its samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampleGrid {
    pub n_steps: usize,
    pub sample_every: usize,
}

impl SampleGrid {
    /// `t_final / dt` steps (must be an integer to 1e−9 relative), sampled
    /// every `sample_every` steps.
    pub fn new(t_final: f64, dt: f64, sample_every: usize) -> Result<Self> {
        if !(t_final >= 0.0) || !(dt > 0.0) {
            return Err(Error::Domain(format!("bad time grid: t_final = {t_final}, dt = {dt}")));
        }
        if sample_every == 0 {
            return Err(Error::Domain("sample_every must be at least 1".into()));
        }
        let n = (t_final / dt).round();
        if (n * dt - t_final).abs() > 1e-9 * t_final.max(dt) {
            return Err(Error::Domain(format!("t_final = {t_final} is not a multiple of dt = {dt}")));
        }
        let n_steps = n as usize;
        if !n_steps.is_multiple_of(sample_every) {
            return Err(Error::Domain(format!("{n_steps} steps are not a multiple of sample_every = {sample_every}")));
        }
        Ok(Self { n_steps, sample_every })
    }

    pub fn n_samples(&self) -> usize {
        self.n_steps / self.sample_every + 1
    }

    pub fn times(&self, dt: f64) -> Vec<f64> {
        (0..self.n_samples()).map(|k| (k * self.sample_every) as f64 * dt).collect()
    }
}

/// Runs one trajectory from `psi0`, calling `on_sample(sample_index, ψ)` at
/// every sample point (including the start).
pub fn run_trajectory<F>(
    psi0: &StateVector,
    cs: &ChannelSet,
    grid: SampleGrid,
    seed: u64,
    mut on_sample: F,
) -> Result<Vec<u8>>
where
    F: FnMut(usize, &StateVector),
{
    if psi0.layout() != cs.layout() {
        return Err(Error::LayoutMismatch("initial state and channel set".into()));
    }
    if cs.len() > u8::MAX as usize {
        return Err(Error::Domain(format!("{} channels exceed the outcome encoding", cs.len())));
    }
    let mut psi = psi0.normalized()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut stepper = Stepper::new(cs);
    let mut outcomes = Vec::with_capacity(grid.n_steps);
    on_sample(0, &psi);
    let layout = psi.layout().clone();
    let mut amps: Vec<C64> = psi.amplitudes().iter().cloned().collect();
    for s in 1..=grid.n_steps {
        let k = stepper.step(&mut amps, rng.gen::<f64>())?;
        outcomes.push(k as u8);
        if s % grid.sample_every == 0 {
            psi = StateVector::new(layout.clone(), crate::qstate::CVector::from_column_slice(&amps))?;
            on_sample(s / grid.sample_every, &psi);
        }
    }
    Ok(outcomes)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnsembleConfig {
    pub n_traj: usize,
    pub t_final: f64,
    pub sample_every: usize,
    pub master_seed: u64,
    /// Records are kept for trajectories `0..keep_records`.
    pub keep_records: usize,
}

#[derive(Debug, Clone)]
pub struct Ensemble {
    pub times: Vec<f64>,
    /// Mean of `|ψ_i(t)⟩⟨ψ_i(t)|` at each sample time.
    pub mean_states: Vec<DensityMatrix>,
    pub records: Vec<TrajectoryRecord>,
    /// Total firings of each channel over all trajectories.
    pub channel_counts: Vec<u64>,
}

const CHUNK: usize = 16;

/// Averages `n_traj` independent trajectories. Trajectories are grouped into
/// fixed chunks whose partial sums are combined in index order, so the
/// result does not depend on thread scheduling.
pub fn ensemble_average(
    psi0: &StateVector,
    cs: &ChannelSet,
    cfg: &EnsembleConfig,
    observables: &[Observable],
) -> Result<Ensemble> {
    if cfg.n_traj == 0 {
        return Err(Error::Domain("n_traj must be at least 1".into()));
    }
    let grid = SampleGrid::new(cfg.t_final, cs.dt(), cfg.sample_every)?;
    let times = grid.times(cs.dt());
    let d = cs.layout().total_dim();
    let ns = grid.n_samples();
    let n_channels = cs.len();

    struct Partial {
        sums: Vec<CMatrix>,
        records: Vec<TrajectoryRecord>,
        counts: Vec<u64>,
    }

    let chunk_starts: Vec<usize> = (0..cfg.n_traj).step_by(CHUNK).collect();
    let partials: Vec<Result<Partial>> = chunk_starts
        .par_iter()
        .map(|&start| {
            let mut sums = vec![CMatrix::zeros(d, d); ns];
            let mut records = Vec::new();
            let mut counts = vec![0u64; n_channels];
            for index in start..(start + CHUNK).min(cfg.n_traj) {
                let seed = derive_seed(cfg.master_seed, index as u64);
                let keep = index < cfg.keep_records;
                let mut series: Vec<Vec<f64>> = if keep { vec![Vec::with_capacity(ns); observables.len()] } else { Vec::new() };
                let outcomes = run_trajectory(psi0, cs, grid, seed, |si, psi| {
                    let a = psi.amplitudes();
                    sums[si].gerc(ONE, a, a, ONE);
                    if keep {
                        for (o, s) in observables.iter().zip(series.iter_mut()) {
                            s.push(o.eval(psi));
                        }
                    }
                })
                .map_err(|e| Error::Trajectory { index, source: Box::new(e) })?;
                for &k in &outcomes {
                    counts[k as usize] += 1;
                }
                if keep {
                    records.push(TrajectoryRecord {
                        seed,
                        times: times.clone(),
                        outcomes,
                        observables: observables.iter().map(|o| o.name.clone()).zip(series).collect(),
                    });
                }
            }
            Ok(Partial { sums, records, counts })
        })
        .collect();

    let mut sums = vec![CMatrix::zeros(d, d); ns];
    let mut records = Vec::new();
    let mut channel_counts = vec![0u64; n_channels];
    for p in partials {
        let p = p?;
        for (acc, s) in sums.iter_mut().zip(&p.sums) {
            *acc += s;
        }
        records.extend(p.records);
        for (a, c) in channel_counts.iter_mut().zip(&p.counts) {
            *a += c;
        }
    }
    let layout = cs.layout().clone();
    let scale = 1.0 / cfg.n_traj as f64;
    let mean_states = sums
        .into_iter()
        .map(|m| DensityMatrix::new(layout.clone(), m.map(|z| z * scale)))
        .collect::<Result<_>>()?;
    Ok(Ensemble { times, mean_states, records, channel_counts })
}

/// Block-diagonal mixing that leaves the no-jump channel alone and applies
/// `blocks[b]` to the next `blocks[b].nrows()` jump channels in order.
pub fn block_mixing(blocks: &[CMatrix]) -> CMatrix {
    let n = 1 + blocks.iter().map(|b| b.nrows()).sum::<usize>();
    let mut u = CMatrix::zeros(n, n);
    u[(0, 0)] = ONE;
    let mut off = 1;
    for b in blocks {
        let k = b.nrows();
        u.view_mut((off, off), (k, k)).copy_from(b);
        off += k;
    }
    u
}

/// 2×2 mixing `(J_1 + e^{iφ}J_2)/√2`, `(J_1 − e^{iφ}J_2)/√2`.
pub fn balanced_pair(phi: f64) -> CMatrix {
    let s = std::f64::consts::FRAC_1_SQRT_2;
    let e = C64::from_polar(s, phi);
    CMatrix::from_row_slice(2, 2, &[C64::from(s), e, C64::from(s), -e])
}
