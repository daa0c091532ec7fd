//! Periodic flag-ACK blocking attacker: out of every `t` flag-ACKs the first
//! `r` are dropped and the remaining `t − r` are let through.

use std::fmt;
use std::str::FromStr;

use num_integer::Integer;
use num_rational::Rational64;
use num_traits::{One, Zero};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a blocked flag is charged against the attacker's counter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CounterSemantics {
    /// Every flag advances the counter when it is seen.
    EveryFlag,
    /// A blocked flag is charged only if the following low-power packet is
    /// also lost; a block that the channel makes harmless is refunded.
    #[default]
    ChargeOnLoss,
}

impl fmt::Display for CounterSemantics {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::EveryFlag => "every_flag",
            Self::ChargeOnLoss => "charge_on_loss",
        })
    }
}

impl FromStr for CounterSemantics {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "every_flag" => Ok(Self::EveryFlag),
            "charge_on_loss" => Ok(Self::ChargeOnLoss),
            other => Err(Error::Config(format!(
                "unknown counter semantics {other:?} (expected every_flag or charge_on_loss)"
            ))),
        }
    }
}

/// Attack budget `β = r/t` in lowest terms.
///
/// `β = 0` is stored as a disabled attacker with `(r, t) = (0, 1)`; `β = 1`
/// as `(1, 1)`, which blocks every flag.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AttackerConfig {
    pub beta: Rational64,
    pub r: u64,
    pub t: u64,
    pub enabled: bool,
    pub semantics: CounterSemantics,
}

impl AttackerConfig {
    pub fn disabled() -> Self {
        Self {
            beta: Rational64::zero(),
            r: 0,
            t: 1,
            enabled: false,
            semantics: CounterSemantics::default(),
        }
    }

    /// Explicit co-prime pair with `0 ≤ r ≤ t`.
    pub fn from_pair(r: u64, t: u64) -> Result<Self> {
        if t == 0 || r > t {
            return Err(Error::InvalidBudget(format!(
                "need 0 <= r <= t and t > 0, got r={r}, t={t}"
            )));
        }
        if r.gcd(&t) != 1 {
            return Err(Error::InvalidBudget(format!("r={r} and t={t} are not co-prime")));
        }
        reduce_beta(Rational64::new(r as i64, t as i64))
    }

    pub fn with_semantics(self, semantics: CounterSemantics) -> Self {
        Self { semantics, ..self }
    }

    pub fn blocks_all(&self) -> bool {
        self.enabled && self.r == self.t
    }

    pub fn beta_f64(&self) -> f64 {
        crate::rational::to_f64(self.beta)
    }
}

/// Reduces `β ∈ [0, 1]` to the co-prime pair `(r, t)`.
pub fn reduce_beta(beta: Rational64) -> Result<AttackerConfig> {
    if beta < Rational64::zero() || beta > Rational64::one() {
        return Err(Error::InvalidBudget(format!(
            "attack budget must lie in [0, 1], got {beta}"
        )));
    }
    if beta.is_zero() {
        return Ok(AttackerConfig::disabled());
    }
    Ok(AttackerConfig {
        beta,
        r: *beta.numer() as u64,
        t: *beta.denom() as u64,
        enabled: true,
        semantics: CounterSemantics::default(),
    })
}

/// Flag counter, always in `[0, t)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct AttackerState {
    pub counter: u64,
}

/// Observes one step of the flag channel. Returns the new state and whether
/// the flag (if any) was blocked.
pub fn attacker_step(cfg: &AttackerConfig, st: AttackerState, flag_sent: bool) -> (AttackerState, bool) {
    if !flag_sent || !cfg.enabled {
        return (st, false);
    }
    let blocked = st.counter < cfg.r;
    let mut counter = st.counter + 1;
    if counter == cfg.t {
        counter = 0;
    }
    (AttackerState { counter }, blocked)
}

/// Settles a block made on the previous step under
/// [`CounterSemantics::ChargeOnLoss`]: if the packet after the blocked flag
/// arrived anyway, the block is not charged.
pub fn attacker_settle(
    cfg: &AttackerConfig,
    st: AttackerState,
    blocked_last_step: bool,
    arrived: bool,
) -> AttackerState {
    let refundable = cfg.enabled && cfg.r < cfg.t && cfg.semantics == CounterSemantics::ChargeOnLoss;
    if refundable && blocked_last_step && arrived {
        debug_assert!(st.counter >= 1 && st.counter <= cfg.r);
        AttackerState {
            counter: st.counter - 1,
        }
    } else {
        st
    }
}
