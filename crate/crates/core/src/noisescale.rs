//! Gradient-noise-scale relations between batch size, learning rate and
//! steps/data trade-offs.
//!
//! Batch sizes are in tokens throughout. SGD-style and Adam-style parameter
//! sets are independent; nothing converts between them.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NoiseError {
    #[error("{name} must be positive and finite, got {value}")]
    NonPositive { name: &'static str, value: f64 },
    #[error("no root above max(1, b) for b_ratio={b_ratio}, gamma={gamma}")]
    Infeasible { b_ratio: f64, gamma: f64 },
}

fn positive<T: Real>(name: &'static str, value: T) -> Result<(), NoiseError> {
    if value > T::zero() && value.is_finite() {
        Ok(())
    } else {
        Err(NoiseError::NonPositive {
            name,
            value: value.as_f64(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseParams<T = f64> {
    pub eta_max: T,
    pub b_noise: T,
    pub dl_max: T,
    pub gamma_tradeoff: T,
}

impl<T: Real> NoiseParams<T> {
    pub fn new(eta_max: T, b_noise: T, dl_max: T, gamma_tradeoff: T) -> Result<Self, NoiseError> {
        let p = NoiseParams {
            eta_max,
            b_noise,
            dl_max,
            gamma_tradeoff,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), NoiseError> {
        positive("eta_max", self.eta_max)?;
        positive("b_noise", self.b_noise)?;
        positive("dl_max", self.dl_max)?;
        positive("gamma_tradeoff", self.gamma_tradeoff)
    }
}

/// `eta_max / (1 + B_noise/B)`.
#[inline]
pub fn eta_opt_sgd<T: Real>(batch: T, params: &NoiseParams<T>) -> T {
    params.eta_max / (T::one() + params.b_noise / batch)
}

/// `dL_max / (1 + B_noise/B)`.
#[inline]
pub fn delta_loss_opt<T: Real>(batch: T, params: &NoiseParams<T>) -> T {
    params.dl_max / (T::one() + params.b_noise / batch)
}

/// Sign-of-gradient approximation: `eta_max / (½(√(B_noise/B) + √(B/B_noise)))`.
/// Peaks at `B = B_noise`.
#[inline]
pub fn eta_opt_adam<T: Real>(batch: T, params: &NoiseParams<T>) -> T {
    let r = (batch / params.b_noise).sqrt();
    params.eta_max / (T::lit(0.5) * (r + r.recip()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow<T = f64> {
    pub e_ratio: T,
    pub s_ratio: T,
    pub b_ratio: T,
}

/// Solves `(S/S_min − 1)(E/E_min − 1) = gamma` at fixed `B/B_crit`.
///
/// With `s = e/b` this is `e² − (1+b)e + b(1−gamma) = 0`; the larger root is
/// returned. For `gamma = 1` the root is exactly `1 + b`.
pub fn solve_tradeoff<T: Real>(b_ratio: T, gamma: T) -> Result<TradeoffRow<T>, NoiseError> {
    positive("b_ratio", b_ratio)?;
    positive("gamma", gamma)?;
    let one = T::one();
    let sum = one + b_ratio;
    let disc = sum * sum - T::lit(4.0) * b_ratio * (one - gamma);
    // disc >= (1-b)^2 whenever gamma > 0, so this is unreachable for valid input.
    if !(disc >= T::zero()) {
        return Err(NoiseError::Infeasible {
            b_ratio: b_ratio.as_f64(),
            gamma: gamma.as_f64(),
        });
    }
    let e = (sum + disc.sqrt()) / T::lit(2.0);
    Ok(TradeoffRow {
        e_ratio: e,
        s_ratio: e / b_ratio,
        b_ratio,
    })
}

pub fn tradeoff_table<T: Real>(gamma: T, b_ratios: &[T]) -> Result<Vec<TradeoffRow<T>>, NoiseError> {
    b_ratios.iter().map(|&b| solve_tradeoff(b, gamma)).collect()
}

/// The column set of the published trade-off table.
pub const TABLE_B_RATIOS: [f64; 7] = [0.1, 0.5, 1.0, 2.0, 5.0, 10.0, 100.0];

/// `B_crit = E_min / S_min`.
pub fn critical_batch<T: Real>(e_min: T, s_min: T) -> Result<T, NoiseError> {
    positive("e_min", e_min)?;
    positive("s_min", s_min)?;
    Ok(e_min / s_min)
}

/// Plain-text rendering with aligned columns, one row per ratio.
pub fn render_table<T: Real>(rows: &[TradeoffRow<T>]) -> String {
    let mut out = format!("{:>10} {:>12} {:>12}\n", "B/B_crit", "E/E_min", "S/S_min");
    for r in rows {
        out.push_str(&format!(
            "{:>10} {:>12.6} {:>12.6}\n",
            r.b_ratio.as_f64(),
            r.e_ratio.as_f64(),
            r.s_ratio.as_f64()
        ));
    }
    out
}

pub fn render_csv<T: Real>(rows: &[TradeoffRow<T>]) -> String {
    let mut out = String::from("b_ratio,e_ratio,s_ratio\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{}\n",
            r.b_ratio.as_f64(),
            r.e_ratio.as_f64(),
            r.s_ratio.as_f64()
        ));
    }
    out
}
