//! Exact analysis of the attacked online schedule.
//!
//! With a fixed detector window `z0`, the pair (holding time `τ`, attacker
//! counter `σ`) is a finite Markov chain. Its stationary distribution gives
//! the long-run covariance trace `Σ Π*(i) Tr h^{τ_i}(P̄)`, the flag rates and,
//! swept over a grid of budgets `β = r/t`, the switching threshold `β̄`.

use std::cmp::Ordering;
use std::fmt;

use nalgebra::{DMatrix, DVector};
use num_integer::Integer;
use num_rational::Rational64;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{Binomial, ContinuousCDF, DiscreteCDF, Normal};

use crate::attack::{AttackerConfig, CounterSemantics};
use crate::error::{Error, Result};
use crate::lds::{SteadyState, SystemModel};
use crate::schedule::{build_offline_schedule, offline_j_closed_form, EnergyModel};

const STOCHASTIC_TOL: f64 = 1e-12;
const RESIDUAL_TOL: f64 = 1e-10;
const POWER_TOL: f64 = 1e-12;
const POWER_MAX_ITER: usize = 1_000_000;

/// Default upper limit on `t` for the threshold grid.
pub const DEFAULT_T_MAX: u64 = 12;
/// Default tail tolerance for [`j_max`].
pub const DEFAULT_TAIL_TOL: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct ChainState {
    pub tau: u32,
    pub sigma: u32,
}

impl fmt::Display for ChainState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.tau, self.sigma)
    }
}

fn validate(z0: u32, r: u64, t: u64) -> Result<()> {
    let bad = |reason: &str| Error::InvalidModel(format!("chain (z0={z0}, r={r}, t={t}): {reason}"));
    if z0 == 0 {
        return Err(bad("z0 must be at least 1"));
    }
    // (0, 1) is the unattacked detector.
    if (r, t) == (0, 1) {
        return Ok(());
    }
    if r == 0 || r >= t {
        return Err(bad("need 1 <= r < t"));
    }
    if r.gcd(&t) != 1 {
        return Err(bad("r and t must be co-prime"));
    }
    Ok(())
}

/// Number of states, `r(r+1)z0/2 + t(z0+1)`.
pub fn state_count(z0: u32, r: u64, t: u64) -> usize {
    (r * (r + 1) * z0 as u64 / 2 + t * (z0 as u64 + 1)) as usize
}

// Row σ holds τ = 0..=row_len(σ)-1.
fn row_len(z0: u32, r: u64, sigma: u64) -> usize {
    if sigma <= r {
        (z0 as u64 * (sigma + 1) + 1) as usize
    } else {
        z0 as usize + 1
    }
}

/// States ordered by counter `σ = 0..t`, and within a row by holding time:
/// rows `σ ≤ r` run to `τ = z0(σ+1)`, rows `σ > r` to `τ = z0`.
pub fn enumerate_states(z0: u32, r: u64, t: u64) -> Result<Vec<ChainState>> {
    validate(z0, r, t)?;
    let mut states = Vec::with_capacity(state_count(z0, r, t));
    for sigma in 0..t {
        for tau in 0..row_len(z0, r, sigma) {
            states.push(ChainState {
                tau: tau as u32,
                sigma: sigma as u32,
            });
        }
    }
    Ok(states)
}

struct Indexer {
    offsets: Vec<usize>,
}

impl Indexer {
    fn new(z0: u32, r: u64, t: u64) -> Self {
        let mut offsets = Vec::with_capacity(t as usize);
        let mut acc = 0;
        for sigma in 0..t {
            offsets.push(acc);
            acc += row_len(z0, r, sigma);
        }
        Self { offsets }
    }

    fn at(&self, tau: u32, sigma: u32) -> usize {
        self.offsets[sigma as usize] + tau as usize
    }
}

/// Column-stochastic transition matrix: entry `(i, j)` is the probability of
/// moving from state `j` to state `i`.
pub fn build_transition_matrix(
    z0: u32,
    r: u64,
    t: u64,
    lambda: f64,
    semantics: CounterSemantics,
) -> Result<(Vec<ChainState>, DMatrix<f64>)> {
    if !(lambda > 0.0 && lambda < 1.0) {
        return Err(Error::InvalidModel(format!("lambda must lie in (0, 1), got {lambda}")));
    }
    let states = enumerate_states(z0, r, t)?;
    let idx = Indexer::new(z0, r, t);
    let n = states.len();
    let mut m = DMatrix::zeros(n, n);
    let (r, last) = (r as u32, (t - 1) as u32);
    for (j, s) in states.iter().enumerate() {
        let flag = s.tau != 0 && s.tau % z0 == 0;
        if !flag {
            m[(idx.at(0, s.sigma), j)] += lambda;
            m[(idx.at(s.tau + 1, s.sigma), j)] += 1.0 - lambda;
        } else if s.sigma < r {
            // Blocked flag: the sensor stays on low power.
            let reset_sigma = match semantics {
                CounterSemantics::EveryFlag => s.sigma + 1,
                CounterSemantics::ChargeOnLoss => s.sigma,
            };
            m[(idx.at(0, reset_sigma), j)] += lambda;
            m[(idx.at(s.tau + 1, s.sigma + 1), j)] += 1.0 - lambda;
        } else if s.sigma < last {
            m[(idx.at(0, s.sigma + 1), j)] += 1.0;
        } else {
            m[(idx.at(0, 0), j)] += 1.0;
        }
    }
    Ok((states, m))
}

/// Solves `TΠ = Π`, `ΣΠ = 1` for a column-stochastic `T`.
///
/// Uses Grassmann–Taksar–Heyman elimination, which is subtraction-free and
/// keeps relative accuracy on the tiny probabilities of long holding times.
/// Falls back to power iteration if elimination breaks down or the residual
/// is too large.
pub fn stationary_distribution(t: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = t.nrows();
    if n == 0 || !t.is_square() {
        return Err(analysis_err("empty or non-square matrix", n));
    }
    for (j, col) in t.column_iter().enumerate() {
        if col.iter().any(|&v| !(0.0..=1.0 + STOCHASTIC_TOL).contains(&v)) {
            return Err(analysis_err(&format!("column {j} has entries outside [0, 1]"), n));
        }
        if (col.sum() - 1.0).abs() > STOCHASTIC_TOL {
            return Err(analysis_err(&format!("column {j} sums to {}", col.sum()), n));
        }
    }
    let pi = match gth(t) {
        Some(pi) if residual(t, &pi) < RESIDUAL_TOL => pi,
        _ => power_iteration(t)?,
    };
    Ok(pi)
}

fn analysis_err(reason: &str, n: usize) -> Error {
    Error::Analysis {
        params: format!("{n}-state chain"),
        reason: reason.to_string(),
    }
}

fn residual(t: &DMatrix<f64>, pi: &DVector<f64>) -> f64 {
    (t * pi - pi).amax()
}

fn gth(t: &DMatrix<f64>) -> Option<DVector<f64>> {
    let n = t.nrows();
    // Row-stochastic copy, row-major: p[i * n + j] = P(i -> j).
    let mut p = vec![0.0; n * n];
    for j in 0..n {
        for i in 0..n {
            p[j * n + i] = t[(i, j)];
        }
    }
    let mut into = Vec::with_capacity(n);
    let mut out = Vec::with_capacity(n);
    for k in (1..n).rev() {
        let row_k = k * n;
        let s: f64 = p[row_k..row_k + k].iter().sum();
        if !(s > 0.0) {
            return None;
        }
        out.clear();
        out.extend((0..k).filter(|&j| p[row_k + j] != 0.0));
        into.clear();
        into.extend((0..k).filter(|&i| p[i * n + k] != 0.0));
        for &i in &into {
            let f = p[i * n + k] / s;
            p[i * n + k] = f;
            for &j in &out {
                p[i * n + j] += f * p[row_k + j];
            }
        }
    }
    let mut pi = DVector::zeros(n);
    pi[0] = 1.0;
    for k in 1..n {
        pi[k] = (0..k).map(|i| pi[i] * p[i * n + k]).sum();
    }
    let total = pi.sum();
    if !(total.is_finite() && total > 0.0) {
        return None;
    }
    Some(pi / total)
}

fn power_iteration(t: &DMatrix<f64>) -> Result<DVector<f64>> {
    let n = t.nrows();
    let cols: Vec<Vec<(usize, f64)>> = t
        .column_iter()
        .map(|c| {
            c.iter()
                .enumerate()
                .filter(|(_, &v)| v != 0.0)
                .map(|(i, &v)| (i, v))
                .collect()
        })
        .collect();
    let mut pi = DVector::from_element(n, 1.0 / n as f64);
    let mut next = DVector::zeros(n);
    for _ in 0..POWER_MAX_ITER {
        next.fill(0.0);
        for (j, col) in cols.iter().enumerate() {
            for &(i, v) in col {
                next[i] += v * pi[j];
            }
        }
        let delta = (&next - &pi).amax();
        std::mem::swap(&mut pi, &mut next);
        if delta < POWER_TOL {
            pi.iter_mut().for_each(|v| *v = v.max(0.0));
            let total = pi.sum();
            return Ok(pi / total);
        }
    }
    Err(analysis_err(
        "power iteration did not converge (reducible or periodic chain?)",
        n,
    ))
}

/// Fixed-window detector under a block-first-`r`-of-`t` attacker, with its
/// transition matrix and stationary distribution.
#[derive(Debug, Clone)]
pub struct ChainModel {
    pub z0: u32,
    pub r: u64,
    pub t: u64,
    pub lambda: f64,
    pub semantics: CounterSemantics,
    pub states: Vec<ChainState>,
    pub transition: DMatrix<f64>,
    pub pi_star: DVector<f64>,
}

impl ChainModel {
    pub fn new(z0: u32, r: u64, t: u64, lambda: f64, semantics: CounterSemantics) -> Result<Self> {
        let (states, transition) = build_transition_matrix(z0, r, t, lambda, semantics)?;
        let pi_star = stationary_distribution(&transition).map_err(|e| match e {
            Error::Analysis { reason, .. } => Error::Analysis {
                params: format!("z0={z0}, r={r}, t={t}, lambda={lambda}"),
                reason,
            },
            other => other,
        })?;
        Ok(Self {
            z0,
            r,
            t,
            lambda,
            semantics,
            states,
            transition,
            pi_star,
        })
    }

    /// Chain without an attacker: holding time `τ = 0..=z0` only.
    pub fn unattacked(z0: u32, lambda: f64) -> Result<Self> {
        Self::new(z0, 0, 1, lambda, CounterSemantics::EveryFlag)
    }

    /// Chain for an attacker config; `None` when every flag is blocked, since
    /// holding times are then unbounded (see [`j_max`]).
    pub fn for_attacker(z0: u32, attacker: &AttackerConfig, lambda: f64) -> Result<Option<Self>> {
        if !attacker.enabled {
            return Self::unattacked(z0, lambda).map(Some);
        }
        if attacker.blocks_all() {
            return Ok(None);
        }
        Self::new(z0, attacker.r, attacker.t, lambda, attacker.semantics).map(Some)
    }

    pub fn len(&self) -> usize {
        self.states.len()
    }

    pub fn is_empty(&self) -> bool {
        self.states.is_empty()
    }

    pub fn max_tau(&self) -> u32 {
        self.states.iter().map(|s| s.tau).max().unwrap_or(0)
    }

    /// Long-run average trace of the remote error covariance.
    pub fn chain_j(&self, ss: &SteadyState) -> f64 {
        let traces = ss.h_power_traces(self.max_tau() as usize + 1);
        self.states
            .iter()
            .zip(self.pi_star.iter())
            .map(|(s, p)| p * traces[s.tau as usize])
            .sum()
    }

    /// Per-step rates of sent flags and of flags that reach the sensor.
    pub fn flag_rates(&self) -> FlagRates {
        let mut rates = FlagRates::default();
        for (s, p) in self.states.iter().zip(self.pi_star.iter()) {
            if s.tau != 0 && s.tau % self.z0 == 0 {
                rates.flag_rate += p;
                if s.sigma as u64 >= self.r {
                    rates.passed_flag_rate += p;
                }
            }
        }
        rates
    }

    /// `‖TΠ* − Π*‖∞`.
    pub fn residual(&self) -> f64 {
        residual(&self.transition, &self.pi_star)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct FlagRates {
    pub flag_rate: f64,
    pub passed_flag_rate: f64,
}

impl FlagRates {
    /// Average transmission energy: each passed flag buys one high-power step.
    pub fn energy_rate(&self, delta_high: f64, delta_low: f64) -> f64 {
        self.passed_flag_rate * delta_high + (1.0 - self.passed_flag_rate) * delta_low
    }
}

/// Worst case: every flag blocked, the sensor always on low power.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct JMax {
    pub value: f64,
    pub terms: usize,
    /// Whether `ρ(A)(1−λ) < 1` holds. The series itself needs `ρ(A)²(1−λ) < 1`.
    pub printed_condition_holds: bool,
}

/// `Σ_i λ(1−λ)^i Tr h^i(P̄)`, summed until the geometric tail bound drops
/// below `tail_tol`.
pub fn j_max(model: &SystemModel, ss: &SteadyState, tail_tol: f64) -> Result<JMax> {
    let lambda = model.lambda();
    let rho = model.spectral_radius();
    let ratio = rho * rho * (1.0 - lambda);
    if ratio >= 1.0 {
        return Err(Error::DivergingSeries(format!(
            "rho(A)^2 (1 - lambda) = {ratio:.6} >= 1 (rho(A) = {rho:.6}, lambda = {lambda})"
        )));
    }
    let mut value = 0.0;
    let mut weight = lambda;
    for i in 0..100_000 {
        let term = weight * ss.h_power_trace(i);
        value += term;
        weight *= 1.0 - lambda;
        if term / (1.0 - ratio) < tail_tol {
            return Ok(JMax {
                value,
                terms: i + 1,
                printed_condition_holds: rho * (1.0 - lambda) < 1.0,
            });
        }
    }
    Err(Error::DivergingSeries(format!(
        "tail still above {tail_tol:e} after 100000 terms"
    )))
}

/// Long-run covariance trace under an attacker, including the `β = 0` and
/// `β = 1` special cases.
pub fn attacked_j(
    model: &SystemModel,
    ss: &SteadyState,
    z0: u32,
    attacker: &AttackerConfig,
    tail_tol: f64,
) -> Result<f64> {
    match ChainModel::for_attacker(z0, attacker, model.lambda())? {
        Some(chain) => Ok(chain.chain_j(ss)),
        None => Ok(j_max(model, ss, tail_tol)?.value),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct GridPoint {
    pub r: u64,
    pub t: u64,
    pub beta: f64,
    pub j_chain: f64,
}

/// Where the attacked online performance crosses the offline reference.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Bracket {
    Crossing {
        beta_low: f64,
        beta_high: f64,
        estimate: f64,
    },
    /// No grid budget pushes the online schedule past the reference.
    OnlineAlways,
    /// Even the unattacked online schedule is no better than the reference.
    OfflineAlways,
}

impl Bracket {
    /// Threshold to feed [`recommend_schedule`].
    pub fn beta_bar(&self) -> f64 {
        match *self {
            Bracket::Crossing { estimate, .. } => estimate,
            Bracket::OnlineAlways => f64::INFINITY,
            Bracket::OfflineAlways => 0.0,
        }
    }

    pub fn contains(&self, beta: f64) -> bool {
        matches!(*self, Bracket::Crossing { beta_low, beta_high, .. } if beta_low <= beta && beta <= beta_high)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ThresholdReport {
    /// Co-prime budgets sorted by `β`.
    pub grid: Vec<GridPoint>,
    pub j_reference: f64,
    pub j_unattacked: f64,
    pub bracket: Bracket,
    /// Adjacent grid pairs `(β_a, β_b)`, `β_a < β_b`, where `J` decreases.
    pub monotonicity_violations: Vec<(f64, f64)>,
}

/// Every co-prime `(r, t)` with `1 ≤ r < t ≤ t_max`, sorted by `r/t`.
pub fn beta_grid(t_max: u64) -> Vec<(u64, u64)> {
    let mut grid: Vec<(u64, u64)> = (2..=t_max)
        .flat_map(|t| (1..t).filter(move |r| r.gcd(&t) == 1).map(move |r| (r, t)))
        .collect();
    grid.sort_by(|a, b| {
        Rational64::new(a.0 as i64, a.1 as i64)
            .cmp(&Rational64::new(b.0 as i64, b.1 as i64))
            .then(Ordering::Equal)
    });
    grid
}

/// Locates `β̄` against the optimal offline schedule for this budget.
pub fn threshold_beta(
    ss: &SteadyState,
    lambda: f64,
    em: &EnergyModel,
    z0: u32,
    t_max: u64,
    semantics: CounterSemantics,
) -> Result<ThresholdReport> {
    let reference = offline_j_closed_form(&build_offline_schedule(em), ss, lambda);
    threshold_beta_against(ss, lambda, reference, z0, t_max, semantics)
}

/// Locates the first grid budget whose attacked performance reaches
/// `j_reference`.
pub fn threshold_beta_against(
    ss: &SteadyState,
    lambda: f64,
    j_reference: f64,
    z0: u32,
    t_max: u64,
    semantics: CounterSemantics,
) -> Result<ThresholdReport> {
    if t_max < 2 {
        return Err(Error::InvalidModel(format!("t_max must be at least 2, got {t_max}")));
    }
    let j_unattacked = ChainModel::unattacked(z0, lambda)?.chain_j(ss);
    let grid = beta_grid(t_max)
        .into_par_iter()
        .map(|(r, t)| {
            let chain = ChainModel::new(z0, r, t, lambda, semantics)?;
            Ok(GridPoint {
                r,
                t,
                beta: r as f64 / t as f64,
                j_chain: chain.chain_j(ss),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let monotonicity_violations = grid
        .windows(2)
        .filter(|w| w[1].j_chain < w[0].j_chain)
        .map(|w| (w[0].beta, w[1].beta))
        .collect();

    let bracket = if j_unattacked >= j_reference {
        Bracket::OfflineAlways
    } else {
        match grid.iter().position(|g| g.j_chain >= j_reference) {
            None => Bracket::OnlineAlways,
            Some(i) => {
                let beta_low = if i == 0 { 0.0 } else { grid[i - 1].beta };
                let beta_high = grid[i].beta;
                Bracket::Crossing {
                    beta_low,
                    beta_high,
                    estimate: 0.5 * (beta_low + beta_high),
                }
            }
        }
    };

    Ok(ThresholdReport {
        grid,
        j_reference,
        j_unattacked,
        bracket,
        monotonicity_violations,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Recommendation {
    Online,
    Offline,
}

impl fmt::Display for Recommendation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Recommendation::Online => "online",
            Recommendation::Offline => "offline",
        })
    }
}

/// Keep the online schedule iff `β < β̄`.
pub fn recommend_schedule(beta: f64, beta_bar: f64) -> Recommendation {
    if beta < beta_bar {
        Recommendation::Online
    } else {
        Recommendation::Offline
    }
}

/// One-sided test for missing flag-ACKs: flags an attack when the observed
/// count of passed flags over `n_observed` steps falls below the `alpha`
/// quantile of `Binomial(n_observed, expected_rate)`. Uses a normal
/// approximation with continuity correction above 100 observations.
pub fn detect_attack(observed_passed_rate: f64, expected_rate: f64, n_observed: u64, alpha: f64) -> bool {
    assert!(n_observed > 0, "need at least one observation");
    assert!(alpha > 0.0 && alpha < 1.0, "alpha must lie in (0, 1)");
    let n = n_observed as f64;
    let observed = (observed_passed_rate * n).round();
    if expected_rate <= 0.0 || expected_rate >= 1.0 {
        return observed < (expected_rate.clamp(0.0, 1.0) * n).round();
    }
    let lower_tail = if n_observed > 100 {
        let mean = n * expected_rate;
        let sd = (n * expected_rate * (1.0 - expected_rate)).sqrt();
        Normal::new(0.0, 1.0)
            .expect("standard normal")
            .cdf((observed + 0.5 - mean) / sd)
    } else {
        Binomial::new(expected_rate, n_observed)
            .expect("valid binomial")
            .cdf(observed as u64)
    };
    lower_tail < alpha
}
