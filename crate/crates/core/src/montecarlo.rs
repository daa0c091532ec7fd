//! Seeded Monte Carlo of the closed loop: sensor power choice, lossy channel,
//! remote estimator, ACK detector, attacker and flag delivery.
//!
//! Every run gets its own seed derived from the base seed and the run index,
//! and within a run independent ChaCha8 streams for the channel (stream 0),
//! the detector window draws (stream 1) and the process/measurement noise
//! (stream 2). The channel draws one uniform per step whatever happens, so
//! two configs with the same seed see the same channel realisation. Runs are
//! grouped in fixed chunks and reduced in chunk order, which makes reports
//! bit-identical for any thread count.

use nalgebra::{DMatrix, DVector};
use num_rational::Rational64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::attack::{attacker_settle, attacker_step, reduce_beta, AttackerConfig, AttackerState, CounterSemantics};
use crate::error::{Error, Result};
use crate::lds::{psd_sqrt, remote_update, steady_state, EstimatorState, SteadyKalman, SteadyState, SystemModel};
use crate::rational::to_f64;
use crate::schedule::{
    build_offline_schedule, detector_step, DetectorConfig, DetectorState, EnergyModel, OfflineSchedule,
};

const CHANNEL_STREAM: u64 = 0;
const DETECTOR_STREAM: u64 = 1;
const NOISE_STREAM: u64 = 2;

const CHUNK_RUNS: u64 = 8;
const BATCH_CHUNKS: usize = 64;
const TRACE_TABLE_LEN: usize = 256;
const DEFAULT_RECORD_POINTS: u64 = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScheduleKind {
    Offline,
    Online,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SimMode {
    /// Track the holding time and accumulate `Tr h^τ(P̄)`.
    #[default]
    Covariance,
    /// Simulate states and measurements and accumulate `‖x − x̂‖²`.
    Trajectory,
}

/// Channel behaviour; the forced variants are for sanity checks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ChannelMode {
    #[default]
    Bernoulli,
    AlwaysArrive,
    AlwaysDrop,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub model: SystemModel,
    pub energy: EnergyModel,
    /// Required for the online schedule, ignored offline.
    pub detector: Option<DetectorConfig>,
    /// Ignored offline.
    pub attacker: AttackerConfig,
    pub schedule: ScheduleKind,
    pub horizon: u64,
    pub runs: u64,
    pub seed: u64,
    pub mode: SimMode,
    pub channel: ChannelMode,
    /// Stride of the recorded `J_k` series; by default about 1000 points.
    pub record_every: Option<u64>,
}

impl SimConfig {
    /// Offline schedule, no attacker, 1000 runs of 10⁵ steps, seed 0.
    pub fn offline(model: SystemModel, energy: EnergyModel) -> Self {
        Self {
            model,
            energy,
            detector: None,
            attacker: AttackerConfig::disabled(),
            schedule: ScheduleKind::Offline,
            horizon: 100_000,
            runs: 1000,
            seed: 0,
            mode: SimMode::Covariance,
            channel: ChannelMode::Bernoulli,
            record_every: None,
        }
    }

    pub fn online(model: SystemModel, energy: EnergyModel, detector: DetectorConfig, attacker: AttackerConfig) -> Self {
        Self {
            detector: Some(detector),
            attacker,
            schedule: ScheduleKind::Online,
            ..Self::offline(model, energy)
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.runs == 0 {
            return Err(Error::Config(format!(
                "horizon and runs must be positive, got horizon={} runs={}",
                self.horizon, self.runs
            )));
        }
        if self.record_every == Some(0) {
            return Err(Error::Config("record_every must be positive".into()));
        }
        if self.schedule == ScheduleKind::Online && self.detector.is_none() {
            return Err(Error::Config("online schedule needs a detector config".into()));
        }
        Ok(())
    }

    /// Steps at which `J_k` is recorded; always ends at the horizon.
    pub fn record_points(&self) -> Vec<u64> {
        let stride = self
            .record_every
            .unwrap_or_else(|| self.horizon.div_ceil(DEFAULT_RECORD_POINTS))
            .max(1);
        let mut ks: Vec<u64> = (1..=self.horizon / stride).map(|i| i * stride).collect();
        if ks.last() != Some(&self.horizon) {
            ks.push(self.horizon);
        }
        ks
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimReport {
    /// `(k, J_k)` with `J_k = (1/k) Σ_{i≤k} Tr P_i`, averaged over runs.
    pub jk_series: Vec<(u64, f64)>,
    pub j_final: f64,
    /// Standard error of `j_final` from the spread across runs.
    pub j_final_stderr: f64,
    pub energy_avg: f64,
    /// Flags sent per step.
    pub flag_rate: f64,
    /// Flags delivered to the sensor per step.
    pub passed_flag_rate: f64,
    /// Blocked flags over sent flags.
    pub blocked_fraction: f64,
    /// Blocks that were charged to the attacker counter, over sent flags.
    pub charged_fraction: f64,
    pub total_steps: u64,
    pub per_run_seeds: Vec<u64>,
}

/// Outcome of [`simulate_trajectory_check`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrajectoryCheck {
    /// Long-run mean of `‖x_k − x̂_k‖²`.
    pub j_trajectory: f64,
    /// Long-run mean of `Tr P_k` along the same arrival sequences.
    pub j_covariance: f64,
    pub relative_gap: f64,
    /// `(k, mean ‖x_k − x̂_k‖², mean Tr P_k)` at the recorded steps.
    pub series: Vec<(u64, f64, f64)>,
    /// Arrival steps where `x̂_k ≠ x̂ˢ_k`.
    pub arrival_mismatches: u64,
    /// Drop steps where `x̂_k ≠ A x̂_{k−1}`.
    pub drop_mismatches: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SweepPoint {
    pub beta: f64,
    pub j_final: f64,
    pub j_final_stderr: f64,
    pub energy_avg: f64,
}

/// SplitMix64 finalizer.
fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Seed of run `i` for base seed `seed`.
pub fn run_seed(seed: u64, i: u64) -> u64 {
    splitmix64(seed.wrapping_add((i + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15)))
}

fn stream(seed: u64, id: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(id);
    rng
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Kahan {
    sum: f64,
    comp: f64,
}

impl Kahan {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.comp
    }
}

struct Ctx<'a> {
    cfg: &'a SimConfig,
    ss: &'a SteadyState,
    traces: Vec<f64>,
    pattern: Option<OfflineSchedule>,
    record: Vec<u64>,
    delta_high: f64,
    delta_low: f64,
    traj: Option<TrajCtx>,
}

struct TrajCtx {
    kalman: SteadyKalman,
    sqrt_q: DMatrix<f64>,
    sqrt_r: DMatrix<f64>,
    sqrt_pbar: DMatrix<f64>,
}

impl Ctx<'_> {
    fn trace(&self, tau: usize) -> f64 {
        match self.traces.get(tau) {
            Some(&v) => v,
            None => self.ss.h_power_trace(tau),
        }
    }
}

#[derive(Default)]
struct RunOutput {
    j_sum: f64,
    energy_sum: f64,
    flags: u64,
    passed: u64,
    blocked: u64,
    charged: u64,
    series: Vec<f64>,
    // Trajectory mode only.
    trace_sum: f64,
    err_at: Vec<f64>,
    trace_at: Vec<f64>,
    arrival_mismatches: u64,
    drop_mismatches: u64,
}

struct TrajState {
    noise: ChaCha8Rng,
    x: DVector<f64>,
    sensor: DVector<f64>,
    remote: EstimatorState,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_iterator(n, (0..n).map(|_| rng.sample::<f64, _>(StandardNormal)))
}

fn run_once(ctx: &Ctx, seed: u64) -> RunOutput {
    let cfg = ctx.cfg;
    let lambda = cfg.model.lambda();
    let mut channel = stream(seed, CHANNEL_STREAM);
    let mut det_rng = stream(seed, DETECTOR_STREAM);
    let det_cfg = cfg.detector.unwrap_or(DetectorConfig {
        z0: 1,
        mu: 1.0,
        memory_len: 2,
    });
    let online = cfg.schedule == ScheduleKind::Online;
    let attacker = if online {
        cfg.attacker
    } else {
        AttackerConfig::disabled()
    };
    let mut det = DetectorState::new(&det_cfg, det_rng.gen());
    let mut att = AttackerState::default();
    // The sensor opens with a high-power step.
    let mut pending_high = true;
    let mut refund_pending = false;
    let mut tau = 0usize;

    let mut traj = ctx.traj.as_ref().map(|t| {
        let mut noise = stream(seed, NOISE_STREAM);
        let n = cfg.model.state_dim();
        let x = &t.sqrt_pbar * normal_vec(&mut noise, n);
        let sensor = DVector::zeros(n);
        TrajState {
            noise,
            x,
            remote: EstimatorState::synced(sensor.clone(), ctx.ss),
            sensor,
        }
    });

    let mut out = RunOutput {
        series: Vec::with_capacity(ctx.record.len()),
        ..Default::default()
    };
    let mut cum = 0.0;
    let mut next_record = 0;
    for k in 1..=cfg.horizon {
        let high = match &ctx.pattern {
            Some(p) => p.is_high(k - 1),
            None => pending_high,
        };
        let u: f64 = channel.gen();
        let arrived = match cfg.channel {
            ChannelMode::Bernoulli => high || u < lambda,
            ChannelMode::AlwaysArrive => true,
            ChannelMode::AlwaysDrop => false,
        };
        out.energy_sum += if high { ctx.delta_high } else { ctx.delta_low };
        tau = if arrived { 0 } else { tau + 1 };
        let tr = ctx.trace(tau);

        let cost = match (&mut traj, &ctx.traj) {
            (Some(ts), Some(tc)) => {
                let n = cfg.model.state_dim();
                let m = cfg.model.output_dim();
                ts.x = cfg.model.a() * &ts.x + &tc.sqrt_q * normal_vec(&mut ts.noise, n);
                let y = cfg.model.c() * &ts.x + &tc.sqrt_r * normal_vec(&mut ts.noise, m);
                ts.sensor = tc.kalman.step(&cfg.model, &ts.sensor, &y);
                let prev = ts.remote.xhat.clone();
                ts.remote = remote_update(&ts.remote, arrived, &ts.sensor, &cfg.model, ctx.ss);
                if arrived {
                    out.arrival_mismatches += (ts.remote.xhat != ts.sensor) as u64;
                } else {
                    out.drop_mismatches += (ts.remote.xhat != cfg.model.a() * prev) as u64;
                }
                out.trace_sum += tr;
                let err = (&ts.x - &ts.remote.xhat).norm_squared();
                // The loop is shift-invariant; re-centring on the sensor
                // estimate keeps an unstable state from eating the precision.
                let shift = ts.sensor.clone();
                ts.x -= &shift;
                ts.remote.xhat -= &shift;
                ts.sensor.fill(0.0);
                err
            }
            _ => tr,
        };
        cum += cost;

        if online {
            if refund_pending {
                let before = att.counter;
                att = attacker_settle(&attacker, att, true, arrived);
                if att.counter == before {
                    out.charged += 1;
                }
                refund_pending = false;
            }
            let (next_det, flag) = detector_step(&det_cfg, det, arrived, det_rng.gen());
            det = next_det;
            pending_high = false;
            if flag {
                out.flags += 1;
                let (next_att, blocked) = attacker_step(&attacker, att, true);
                att = next_att;
                if blocked {
                    out.blocked += 1;
                    refund_pending = true;
                } else {
                    out.passed += 1;
                    pending_high = true;
                }
            }
        }

        if ctx.record.get(next_record) == Some(&k) {
            out.series.push(cum / k as f64);
            if traj.is_some() {
                out.err_at.push(cost);
                out.trace_at.push(tr);
            }
            next_record += 1;
        }
    }
    if refund_pending {
        // A block on the final step is settled as if the packet were lost.
        out.charged += 1;
    }
    out.j_sum = cum;
    out
}

#[derive(Clone, Default)]
struct Totals {
    j: Kahan,
    j_sq: Kahan,
    trace: Kahan,
    energy: Kahan,
    flags: u64,
    passed: u64,
    blocked: u64,
    charged: u64,
    series: Vec<Kahan>,
    err_at: Vec<Kahan>,
    trace_at: Vec<Kahan>,
    arrival_mismatches: u64,
    drop_mismatches: u64,
}

impl Totals {
    fn new(points: usize) -> Self {
        Self {
            series: vec![Kahan::default(); points],
            err_at: vec![Kahan::default(); points],
            trace_at: vec![Kahan::default(); points],
            ..Default::default()
        }
    }

    fn add_run(&mut self, run: &RunOutput, horizon: f64) {
        let j = run.j_sum / horizon;
        self.j.add(j);
        self.j_sq.add(j * j);
        self.trace.add(run.trace_sum / horizon);
        self.energy.add(run.energy_sum / horizon);
        self.flags += run.flags;
        self.passed += run.passed;
        self.blocked += run.blocked;
        self.charged += run.charged;
        self.arrival_mismatches += run.arrival_mismatches;
        self.drop_mismatches += run.drop_mismatches;
        for (acc, &v) in self.series.iter_mut().zip(&run.series) {
            acc.add(v);
        }
        for (acc, &v) in self.err_at.iter_mut().zip(&run.err_at) {
            acc.add(v);
        }
        for (acc, &v) in self.trace_at.iter_mut().zip(&run.trace_at) {
            acc.add(v);
        }
    }

    fn merge(&mut self, other: &Totals) {
        self.j.add(other.j.value());
        self.j_sq.add(other.j_sq.value());
        self.trace.add(other.trace.value());
        self.energy.add(other.energy.value());
        self.flags += other.flags;
        self.passed += other.passed;
        self.blocked += other.blocked;
        self.charged += other.charged;
        self.arrival_mismatches += other.arrival_mismatches;
        self.drop_mismatches += other.drop_mismatches;
        for (a, b) in [
            (&mut self.series, &other.series),
            (&mut self.err_at, &other.err_at),
            (&mut self.trace_at, &other.trace_at),
        ] {
            for (acc, v) in a.iter_mut().zip(b) {
                acc.add(v.value());
            }
        }
    }
}

fn run_all(cfg: &SimConfig) -> Result<(Totals, Vec<u64>, Vec<u64>)> {
    cfg.validate()?;
    let ss = steady_state(&cfg.model)?;
    let traj = match cfg.mode {
        SimMode::Covariance => None,
        SimMode::Trajectory => Some(TrajCtx {
            kalman: SteadyKalman::new(&cfg.model, &ss),
            sqrt_q: psd_sqrt(cfg.model.q()),
            sqrt_r: psd_sqrt(cfg.model.r()),
            sqrt_pbar: psd_sqrt(ss.pbar()),
        }),
    };
    let ctx = Ctx {
        cfg,
        ss: &ss,
        traces: ss.h_power_traces(TRACE_TABLE_LEN),
        pattern: match cfg.schedule {
            ScheduleKind::Offline => Some(build_offline_schedule(&cfg.energy)),
            ScheduleKind::Online => None,
        },
        record: cfg.record_points(),
        delta_high: to_f64(cfg.energy.delta_high),
        delta_low: to_f64(cfg.energy.delta_low),
        traj,
    };
    let points = ctx.record.len();
    let horizon = cfg.horizon as f64;
    let seeds: Vec<u64> = (0..cfg.runs).map(|i| run_seed(cfg.seed, i)).collect();
    let chunks: Vec<&[u64]> = seeds.chunks(CHUNK_RUNS as usize).collect();

    let mut totals = Totals::new(points);
    for batch in chunks.chunks(BATCH_CHUNKS) {
        let partial: Vec<Totals> = batch
            .par_iter()
            .map(|chunk| {
                let mut t = Totals::new(points);
                for &s in chunk.iter() {
                    t.add_run(&run_once(&ctx, s), horizon);
                }
                t
            })
            .collect();
        for p in &partial {
            totals.merge(p);
        }
    }
    Ok((totals, seeds, ctx.record))
}

/// Runs the Monte Carlo described by `cfg`.
pub fn simulate(cfg: &SimConfig) -> Result<SimReport> {
    let (t, seeds, record) = run_all(cfg)?;
    let runs = cfg.runs as f64;
    let steps = cfg.runs * cfg.horizon;
    let j_final = t.j.value() / runs;
    let var = if cfg.runs > 1 {
        ((t.j_sq.value() - runs * j_final * j_final) / (runs - 1.0)).max(0.0)
    } else {
        0.0
    };
    let per_flag = |n: u64| if t.flags == 0 { 0.0 } else { n as f64 / t.flags as f64 };
    Ok(SimReport {
        jk_series: record
            .iter()
            .zip(&t.series)
            .map(|(&k, s)| (k, s.value() / runs))
            .collect(),
        j_final,
        j_final_stderr: (var / runs).sqrt(),
        energy_avg: t.energy.value() / runs,
        flag_rate: t.flags as f64 / steps as f64,
        passed_flag_rate: t.passed as f64 / steps as f64,
        blocked_fraction: per_flag(t.blocked),
        charged_fraction: per_flag(t.charged),
        total_steps: steps,
        per_run_seeds: seeds,
    })
}

/// Trajectory-mode run comparing empirical estimation error with the
/// covariance recursion along the same arrival sequences.
pub fn simulate_trajectory_check(cfg: &SimConfig) -> Result<TrajectoryCheck> {
    if cfg.mode != SimMode::Trajectory {
        return Err(Error::Config("trajectory check needs mode = trajectory".into()));
    }
    let (t, _, record) = run_all(cfg)?;
    let runs = cfg.runs as f64;
    let j_trajectory = t.j.value() / runs;
    let j_covariance = t.trace.value() / runs;
    Ok(TrajectoryCheck {
        j_trajectory,
        j_covariance,
        relative_gap: (j_trajectory / j_covariance - 1.0).abs(),
        series: record
            .iter()
            .zip(t.err_at.iter().zip(&t.trace_at))
            .map(|(&k, (e, tr))| (k, e.value() / runs, tr.value() / runs))
            .collect(),
        arrival_mismatches: t.arrival_mismatches,
        drop_mismatches: t.drop_mismatches,
    })
}

/// Runs `base` once per budget with the same seed, so every point sees the
/// same channel draws.
pub fn sweep_beta(base: &SimConfig, betas: &[Rational64]) -> Result<Vec<SweepPoint>> {
    sweep_beta_with(base, betas, base.attacker.semantics)
}

pub fn sweep_beta_with(base: &SimConfig, betas: &[Rational64], semantics: CounterSemantics) -> Result<Vec<SweepPoint>> {
    betas
        .iter()
        .map(|&b| {
            let cfg = SimConfig {
                attacker: reduce_beta(b)?.with_semantics(semantics),
                ..base.clone()
            };
            let rep = simulate(&cfg)?;
            Ok(SweepPoint {
                beta: to_f64(b),
                j_final: rep.j_final,
                j_final_stderr: rep.j_final_stderr,
                energy_avg: rep.energy_avg,
            })
        })
        .collect()
}
