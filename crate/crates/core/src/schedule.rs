//! Sensor power schedules: the periodic offline schedule that meets the energy
//! budget exactly, and the online schedule driven by flag-ACKs from a
//! consecutive-drop event detector at the remote estimator.

use std::fmt;
use std::str::FromStr;

use num_rational::Rational64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::lds::SteadyState;
use crate::rational::{is_positive, to_f64};

/// High power `Δ`, low power `δ`, average budget `Ψ` and the reduced fraction
/// `p/q = (Ψ − δ)/(Δ − δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EnergyModel {
    pub delta_high: Rational64,
    pub delta_low: Rational64,
    pub psi: Rational64,
    pub p: u64,
    pub q: u64,
}

impl EnergyModel {
    /// Fraction of time steps that may use high power.
    pub fn high_fraction(&self) -> Rational64 {
        Rational64::new(self.p as i64, self.q as i64)
    }

    /// Average energy of a schedule that uses `Δ` on `high_rate` of the steps.
    pub fn energy_rate(&self, high_rate: f64) -> f64 {
        let (dh, dl) = (to_f64(self.delta_high), to_f64(self.delta_low));
        high_rate * dh + (1.0 - high_rate) * dl
    }

    pub fn span(&self) -> f64 {
        to_f64(self.delta_high - self.delta_low)
    }
}

/// Reduces the budget to lowest terms; requires `0 < δ < Ψ < Δ`.
pub fn reduce_energy_budget(delta_high: Rational64, delta_low: Rational64, psi: Rational64) -> Result<EnergyModel> {
    if !is_positive(&delta_low) {
        return Err(Error::InvalidBudget(format!(
            "delta_low must be positive, got {delta_low}"
        )));
    }
    if !(delta_low < psi && psi < delta_high) {
        return Err(Error::InvalidBudget(format!(
            "need delta_low < psi < delta_high, got {delta_low} < {psi} < {delta_high}"
        )));
    }
    let frac = (psi - delta_low) / (delta_high - delta_low);
    Ok(EnergyModel {
        delta_high,
        delta_low,
        psi,
        p: *frac.numer() as u64,
        q: *frac.denom() as u64,
    })
}

/// Periodic high/low power pattern of length `q` with `p` high slots, made of
/// `long_blocks` blocks `1 0^(s0+1)` followed by `short_blocks` blocks `1 0^s0`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineSchedule {
    pattern: Vec<bool>,
    pub s0: u64,
    pub long_blocks: u64,
    pub short_blocks: u64,
}

impl OfflineSchedule {
    pub fn pattern(&self) -> &[bool] {
        &self.pattern
    }

    pub fn period(&self) -> usize {
        self.pattern.len()
    }

    /// Whether slot `k` (0-based, cyclic) uses high power.
    pub fn is_high(&self, k: u64) -> bool {
        self.pattern[(k % self.pattern.len() as u64) as usize]
    }

    /// Exact average energy of the pattern.
    pub fn pattern_energy(&self, em: &EnergyModel) -> Rational64 {
        let ones = self.pattern.iter().filter(|&&b| b).count() as i64;
        let len = self.pattern.len() as i64;
        (em.delta_high * ones + em.delta_low * (len - ones)) / len
    }
}

impl fmt::Display for OfflineSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for &b in &self.pattern {
            f.write_str(if b { "1" } else { "0" })?;
        }
        Ok(())
    }
}

impl FromStr for OfflineSchedule {
    type Err = Error;

    /// Parses a 0/1 string; the block structure is recovered from the runs.
    fn from_str(s: &str) -> Result<Self> {
        let pattern: Vec<bool> = s
            .chars()
            .map(|c| match c {
                '1' => Ok(true),
                '0' => Ok(false),
                other => Err(Error::InvalidModel(format!("unexpected {other:?} in schedule"))),
            })
            .collect::<Result<_>>()?;
        if pattern.first() != Some(&true) {
            return Err(Error::InvalidModel("schedule must start with a high-power slot".into()));
        }
        let mut runs = Vec::new();
        for &b in &pattern {
            if b {
                runs.push(0u64);
            } else {
                *runs.last_mut().expect("pattern starts with 1") += 1;
            }
        }
        let s0 = *runs.iter().min().expect("at least one block");
        if runs.iter().any(|&z| z != s0 && z != s0 + 1) {
            return Err(Error::InvalidModel(format!(
                "{s} is not made of 1 0^s0 / 1 0^(s0+1) blocks"
            )));
        }
        let long = runs.iter().filter(|&&z| z == s0 + 1).count() as u64;
        let short = runs.len() as u64 - long;
        Ok(Self {
            pattern,
            s0,
            long_blocks: long,
            short_blocks: short,
        })
    }
}

/// Builds the optimal offline pattern: long blocks first, then short blocks.
pub fn build_offline_schedule(em: &EnergyModel) -> OfflineSchedule {
    let (p, q) = (em.p, em.q);
    let s0 = q / p - 1;
    let long_blocks = q - p * (s0 + 1);
    let short_blocks = p * (s0 + 2) - q;
    let mut pattern = Vec::with_capacity(q as usize);
    for (count, zeros) in [(long_blocks, s0 + 1), (short_blocks, s0)] {
        for _ in 0..count {
            pattern.push(true);
            pattern.extend(std::iter::repeat(false).take(zeros as usize));
        }
    }
    debug_assert_eq!(pattern.len() as u64, q);
    OfflineSchedule {
        pattern,
        s0,
        long_blocks,
        short_blocks,
    }
}

/// Closed-form average energy of the offline schedule, in exact arithmetic.
pub fn offline_energy_closed_form(sched: &OfflineSchedule, em: &EnergyModel) -> Rational64 {
    let m = sched.long_blocks as i64;
    let n = sched.short_blocks as i64;
    let s0 = sched.s0 as i64;
    let num = em.delta_high * (m + n) + em.delta_low * (m * s0 + n * s0 + m);
    num / (m * s0 + n * s0 + 2 * m + n)
}

/// Closed-form long-run average trace of the remote error covariance under
/// the offline schedule.
pub fn offline_j_closed_form(sched: &OfflineSchedule, ss: &SteadyState, lambda: f64) -> f64 {
    let m = sched.long_blocks as f64;
    let n = sched.short_blocks as f64;
    let s0 = sched.s0 as usize;
    let miss = 1.0 - lambda;
    let block_sum = |zeros: usize| -> f64 {
        (1..=zeros)
            .map(|i| (1.0 + lambda * (zeros - i) as f64) * miss.powi(i as i32) * ss.h_power_trace(i))
            .sum()
    };
    let tr_pbar = ss.h_power_trace(0);
    let total = m * (1.0 + lambda * (s0 + 1) as f64) * tr_pbar
        + n * (1.0 + lambda * s0 as f64) * tr_pbar
        + m * block_sum(s0 + 1)
        + n * block_sum(s0);
    total / (m * (s0 + 2) as f64 + n * (s0 + 1) as f64)
}

/// Same quantity as [`offline_j_closed_form`], computed slot by slot: a slot
/// `j` steps after the last forced high-power slot has expected covariance
/// trace `Σ_{i<j} λ(1−λ)^i Tr h^i(P̄) + (1−λ)^j Tr h^j(P̄)`.
pub fn first_principles_offline_j(sched: &OfflineSchedule, ss: &SteadyState, lambda: f64) -> f64 {
    let pattern = sched.pattern();
    let q = pattern.len();
    let last_high = pattern.iter().rposition(|&b| b).expect("schedule has a high slot");
    let mut since = q - 1 - last_high;
    let mut total = 0.0;
    for &high in pattern {
        since = if high { 0 } else { since + 1 };
        let mut slot = 0.0;
        for i in 0..since {
            slot += lambda * (1.0 - lambda).powi(i as i32) * ss.h_power_trace(i);
        }
        slot += (1.0 - lambda).powi(since as i32) * ss.h_power_trace(since);
        total += slot;
    }
    total / q as f64
}

/// Online schedule parameters: base window `z0`, probability `mu` of using
/// the `z0` window (otherwise `z0 + 1`) and physical memory length.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetectorConfig {
    pub z0: u32,
    pub mu: f64,
    pub memory_len: u32,
}

impl DetectorConfig {
    pub fn new(z0: u32, mu: f64, memory_len: u32) -> Result<Self> {
        if z0 == 0 {
            return Err(Error::InvalidModel("z0 must be at least 1".into()));
        }
        if z0 + 1 > memory_len {
            return Err(Error::InvalidModel(format!(
                "memory length {memory_len} must be at least z0 + 1 = {}",
                z0 + 1
            )));
        }
        if !(0.0..=1.0).contains(&mu) {
            return Err(Error::InvalidModel(format!("mu must lie in [0, 1], got {mu}")));
        }
        Ok(Self { z0, mu, memory_len })
    }

    /// Window for the next epoch given a uniform draw in `[0, 1)`.
    pub fn draw_window(&self, draw: f64) -> u32 {
        if draw < self.mu {
            self.z0
        } else {
            self.z0 + 1
        }
    }
}

/// Event detector state. The ACK memory resets to all ones after every flag,
/// so the trailing run of zeros is all that matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorState {
    pub consecutive_drops: u32,
    pub active_window: u32,
}

impl DetectorState {
    pub fn new(cfg: &DetectorConfig, draw: f64) -> Self {
        Self {
            consecutive_drops: 0,
            active_window: cfg.draw_window(draw),
        }
    }

    /// The L-bit ACK memory (LSB last) equivalent to this state.
    pub fn memory_view(&self, cfg: &DetectorConfig) -> String {
        let len = cfg.memory_len as usize;
        let zeros = (self.consecutive_drops as usize).min(len);
        format!("{}{}", "1".repeat(len - zeros), "0".repeat(zeros))
    }
}

/// Feeds one ACK into the detector. Returns the new state and whether a
/// flag-ACK is sent; the window is redrawn right after each flag.
pub fn detector_step(cfg: &DetectorConfig, st: DetectorState, arrived: bool, draw: f64) -> (DetectorState, bool) {
    if arrived {
        return (
            DetectorState {
                consecutive_drops: 0,
                ..st
            },
            false,
        );
    }
    let drops = st.consecutive_drops + 1;
    if drops >= st.active_window {
        (DetectorState::new(cfg, draw), true)
    } else {
        (
            DetectorState {
                consecutive_drops: drops,
                ..st
            },
            false,
        )
    }
}

/// Closed-form online performance expression:
///
/// `λ / (1 − μ(1−λ)^{z0+1} − μ(1−λ)^{z0+2}) · Tr[Σ_{i≤z0} (1−λ)^i h^i(P̄) + μ(1−λ)^{z0+1} h^{z0+1}(P̄)]`
///
/// It is not normalized for `0 ≤ μ < 1` and does not match the mechanism
/// simulated here; see [`online_j_renewal`] for the value that does.
pub fn online_j_closed_form(cfg: &DetectorConfig, ss: &SteadyState, lambda: f64) -> f64 {
    let miss = 1.0 - lambda;
    let z0 = cfg.z0 as i32;
    let denom = 1.0 - cfg.mu * miss.powi(z0 + 1) - cfg.mu * miss.powi(z0 + 2);
    let body: f64 = (0..=cfg.z0 as usize)
        .map(|i| miss.powi(i as i32) * ss.h_power_trace(i))
        .sum::<f64>()
        + cfg.mu * miss.powi(z0 + 1) * ss.h_power_trace(cfg.z0 as usize + 1);
    lambda / denom * body
}

// Expected visits to holding time τ in one flag-to-flag epoch with window w
// is (1−λ)^(τ−w); returns (Σ visits·Tr h^τ, Σ visits).
fn epoch_moments(window: u32, ss: &SteadyState, lambda: f64) -> (f64, f64) {
    let miss = 1.0 - lambda;
    let w = window as i32;
    (0..=window as usize).fold((0.0, 0.0), |(reward, len), tau| {
        let visits = miss.powi(tau as i32 - w);
        (reward + visits * ss.h_power_trace(tau), len + visits)
    })
}

/// Long-run average covariance trace of the online schedule under the
/// flag-to-flag window redraw, by renewal-reward over detector epochs.
pub fn online_j_renewal(cfg: &DetectorConfig, ss: &SteadyState, lambda: f64) -> f64 {
    let (r0, l0) = epoch_moments(cfg.z0, ss, lambda);
    let (r1, l1) = epoch_moments(cfg.z0 + 1, ss, lambda);
    (cfg.mu * r0 + (1.0 - cfg.mu) * r1) / (cfg.mu * l0 + (1.0 - cfg.mu) * l1)
}

/// Long-run fraction of high-power steps of the unattacked online schedule
/// (one high-power step per flag).
pub fn online_high_rate(z0: u32, mu: f64, lambda: f64) -> f64 {
    let miss = 1.0 - lambda;
    let epoch_len = |w: u32| (1.0 - miss.powi(w as i32 + 1)) / (lambda * miss.powi(w as i32));
    1.0 / (mu * epoch_len(z0) + (1.0 - mu) * epoch_len(z0 + 1))
}

/// Bisects `mu` so the unattacked online schedule spends exactly the budget.
pub fn calibrate_mu(lambda: f64, em: &EnergyModel, z0: u32, memory_len: u32) -> Result<DetectorConfig> {
    DetectorConfig::new(z0, 0.0, memory_len)?;
    let target = to_f64(em.high_fraction());
    let rate = |mu: f64| online_high_rate(z0, mu, lambda);
    let (lo_rate, hi_rate) = (rate(0.0), rate(1.0));
    let tol = 1e-12;
    if (hi_rate - target).abs() <= tol {
        return DetectorConfig::new(z0, 1.0, memory_len);
    }
    if (lo_rate - target).abs() <= tol {
        return DetectorConfig::new(z0, 0.0, memory_len);
    }
    if target > hi_rate {
        return Err(Error::CalibrationInfeasible {
            z0,
            suggestion: z0.saturating_sub(1).max(1),
            reason: format!("budget high-power rate {target:.6} exceeds the z0-window rate {hi_rate:.6}"),
        });
    }
    if target < lo_rate {
        return Err(Error::CalibrationInfeasible {
            z0,
            suggestion: z0 + 1,
            reason: format!("budget high-power rate {target:.6} is below the (z0+1)-window rate {lo_rate:.6}"),
        });
    }
    let (mut lo, mut hi) = (0.0f64, 1.0f64);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let r = rate(mid);
        if (r - target).abs() <= tol {
            return DetectorConfig::new(z0, mid, memory_len);
        }
        if r < target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    DetectorConfig::new(z0, 0.5 * (lo + hi), memory_len)
}
