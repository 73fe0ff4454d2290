//! Parametric loss laws and the constrained log-Huber fit.
//!
//! The Chinchilla form `L(N, D) = E + A/N^alpha + B/D^beta` is fitted by
//! minimizing the summed Huber loss of log-residuals. When a compute-optimal
//! allocation `N_opt = p·C^a`, `D_opt = q·C^b` is known, stationarity of the
//! law along `C = 6ND` pins `alpha/beta = b/a` and
//! `A/B = beta·p^alpha / (alpha·q^beta)`, which leaves only `(B, E, beta)`
//! free.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::optim::{bfgs, BfgsOptions};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LawFitError {
    #[error("invalid law: {0}")]
    InvalidLaw(String),
    #[error("invalid constraint: {0}")]
    InvalidConstraint(String),
    #[error("insufficient data: {0}")]
    InsufficientData(String),
    #[error("observed values have zero variance; R-squared is undefined")]
    UndefinedVariance,
    #[error("length mismatch: {predicted} predictions vs {observed} observations")]
    LengthMismatch { predicted: usize, observed: usize },
    #[error("target loss {target} is at or below the attainable floor {floor}")]
    Infeasible { target: f64, floor: f64 },
    #[error("no initialization converged; best partial objective {}", .best.objective_value)]
    FitFailure { best: Box<FitReport> },
}

/// `L(N, D) = E + A/N^alpha + B/D^beta`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChinchillaLaw<T = f64> {
    #[serde(rename = "E")]
    pub e: T,
    #[serde(rename = "A")]
    pub a: T,
    pub alpha: T,
    #[serde(rename = "B")]
    pub b: T,
    pub beta: T,
}

impl<T: Real> ChinchillaLaw<T> {
    pub fn new(e: T, a: T, alpha: T, b: T, beta: T) -> Self {
        ChinchillaLaw { e, a, alpha, b, beta }
    }

    pub fn validate(&self) -> Result<(), LawFitError> {
        let unit = |v: T| v > T::zero() && v < T::one();
        if !(self.e >= T::zero() && self.e.is_finite()) {
            return Err(LawFitError::InvalidLaw(format!("E must be >= 0, got {}", self.e)));
        }
        if !(self.a > T::zero() && self.b > T::zero()) {
            return Err(LawFitError::InvalidLaw("A and B must be positive".into()));
        }
        if !(unit(self.alpha) && unit(self.beta)) {
            return Err(LawFitError::InvalidLaw(format!(
                "exponents must lie in (0, 1), got alpha={} beta={}",
                self.alpha, self.beta
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn eval(&self, n_params: T, tokens: T) -> T {
        self.e + self.a * n_params.powf(-self.alpha) + self.b * tokens.powf(-self.beta)
    }

    /// Loss reachable with unlimited data at this model size.
    pub fn n_floor(&self, n_params: T) -> T {
        self.e + self.a * n_params.powf(-self.alpha)
    }

    /// Loss reachable with an unlimited model at this data size.
    pub fn d_floor(&self, tokens: T) -> T {
        self.e + self.b * tokens.powf(-self.beta)
    }

    /// The unique `N` with `eval(N, D) == target`.
    pub fn solve_n_for_loss(&self, target: T, tokens: T) -> Result<T, LawFitError> {
        let gap = target - self.d_floor(tokens);
        if !(gap > T::zero()) {
            return Err(LawFitError::Infeasible {
                target: target.as_f64(),
                floor: self.d_floor(tokens).as_f64(),
            });
        }
        Ok((self.a / gap).powf(T::one() / self.alpha))
    }

    /// The unique `D` with `eval(N, D) == target`.
    pub fn solve_d_for_loss(&self, target: T, n_params: T) -> Result<T, LawFitError> {
        let gap = target - self.n_floor(n_params);
        if !(gap > T::zero()) {
            return Err(LawFitError::Infeasible {
                target: target.as_f64(),
                floor: self.n_floor(n_params).as_f64(),
            });
        }
        Ok((self.b / gap).powf(T::one() / self.beta))
    }

    /// Exponent `a` of the implied compute-optimal `N_opt ∝ C^a`.
    pub fn n_opt_exponent(&self) -> T {
        self.beta / (self.alpha + self.beta)
    }

    /// Compute-optimal `(N, D)` for a FLOP budget under `C = 6ND`.
    pub fn compute_optimal(&self, flops: T) -> (T, T) {
        let six = T::lit(6.0);
        let g = (self.alpha * self.a / (self.beta * self.b)).powf(T::one() / (self.alpha + self.beta));
        let n = g * (flops / six).powf(self.n_opt_exponent());
        (n, flops / (six * n))
    }
}

/// `L(N, D) = [(Nc/N)^(alpha_N/alpha_D) + Dc/D]^alpha_D`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KaplanLaw<T = f64> {
    #[serde(rename = "Nc")]
    pub nc: T,
    #[serde(rename = "Dc")]
    pub dc: T,
    #[serde(rename = "alpha_N")]
    pub alpha_n: T,
    #[serde(rename = "alpha_D")]
    pub alpha_d: T,
}

impl<T: Real> KaplanLaw<T> {
    pub fn validate(&self) -> Result<(), LawFitError> {
        if [self.nc, self.dc, self.alpha_n, self.alpha_d]
            .iter()
            .all(|&v| v > T::zero() && v.is_finite())
        {
            Ok(())
        } else {
            Err(LawFitError::InvalidLaw("Kaplan constants must be positive".into()))
        }
    }

    pub fn eval(&self, n_params: T, tokens: T) -> T {
        let n_term = (self.nc / n_params).powf(self.alpha_n / self.alpha_d);
        (n_term + self.dc / tokens).powf(self.alpha_d)
    }
}

/// Huber penalty: quadratic inside `delta`, linear outside.
#[inline]
pub fn huber<T: Real>(residual: T, delta: T) -> T {
    let r = residual.abs();
    if r <= delta {
        T::lit(0.5) * r * r
    } else {
        delta * (r - T::lit(0.5) * delta)
    }
}

/// Compute-optimal allocation `N_opt = p·C^a`, `D_opt = q·C^b`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Constraint<T = f64> {
    pub a: T,
    pub b: T,
    pub p: T,
    pub q: T,
}

impl<T: Real> Constraint<T> {
    /// Validates `a + b = 1` (to 1e-9) and `p·q = 1/6` (to 1%).
    pub fn new(a: T, b: T, p: T, q: T) -> Result<Self, LawFitError> {
        let c = Constraint { a, b, p, q };
        c.validate()?;
        Ok(c)
    }

    /// Completes an allocation from the `N_opt` law alone.
    pub fn from_n_opt(p: T, a: T) -> Result<Self, LawFitError> {
        Self::new(a, T::one() - a, p, T::one() / (T::lit(6.0) * p))
    }

    pub fn validate(&self) -> Result<(), LawFitError> {
        if ![self.a, self.b, self.p, self.q].iter().all(|&v| v > T::zero() && v.is_finite()) {
            return Err(LawFitError::InvalidConstraint("a, b, p, q must be positive".into()));
        }
        if (self.a + self.b - T::one()).abs() > T::lit(1e-9) {
            return Err(LawFitError::InvalidConstraint(format!(
                "exponents must sum to 1, got {} + {}",
                self.a, self.b
            )));
        }
        let pq = self.p * self.q * T::lit(6.0);
        if (pq - T::one()).abs() > T::lit(0.01) {
            return Err(LawFitError::InvalidConstraint(format!(
                "p*q must equal 1/6 so that C = 6ND, got {}",
                self.p * self.q
            )));
        }
        Ok(())
    }
}

/// Derives `(A, alpha)` from `(B, beta)` under a compute-optimal allocation.
pub fn apply_constraint<T: Real>(c: &Constraint<T>, b_coef: T, beta: T) -> (T, T) {
    let alpha = beta * (c.b / c.a);
    let a_coef = b_coef * (beta * c.p.powf(alpha)) / (alpha * c.q.powf(beta));
    (a_coef, alpha)
}

/// `1 - SS_res/SS_tot`. A spread within a few ulps of the mean is rounding
/// noise and counts as zero variance.
pub fn r_squared<T: Real>(predicted: &[T], observed: &[T]) -> Result<T, LawFitError> {
    if predicted.len() != observed.len() || observed.is_empty() {
        return Err(LawFitError::LengthMismatch {
            predicted: predicted.len(),
            observed: observed.len(),
        });
    }
    let n = T::from_usize(observed.len()).expect("length fits");
    let mean = observed.iter().copied().sum::<T>() / n;
    let ss_tot: T = observed.iter().map(|&o| (o - mean) * (o - mean)).sum();
    if ss_tot == T::zero() || is_flat(observed) {
        return Err(LawFitError::UndefinedVariance);
    }
    let ss_res: T = predicted.iter().zip(observed).map(|(&p, &o)| (o - p) * (o - p)).sum();
    Ok(T::one() - ss_res / ss_tot)
}

/// `r_squared` on natural-log losses.
pub fn r_squared_log<T: Real>(predicted: &[T], observed: &[T]) -> Result<T, LawFitError> {
    if is_flat(observed) {
        return Err(LawFitError::UndefinedVariance);
    }
    let lp: Vec<T> = predicted.iter().map(|v| v.ln()).collect();
    let lo: Vec<T> = observed.iter().map(|v| v.ln()).collect();
    r_squared(&lp, &lo)
}

/// All values within a few ulps of each other.
fn is_flat<T: Real>(values: &[T]) -> bool {
    let (lo, hi) = values
        .iter()
        .fold((T::infinity(), T::neg_infinity()), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    let scale = lo.abs().max(hi.abs());
    hi - lo <= T::from_f64(64.0).expect("small constant") * T::epsilon() * scale
}

/// One `(N, D, loss)` sample.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossObservation {
    pub n_params: f64,
    pub tokens: f64,
    pub loss: f64,
}

/// Log-spaced axis `[lo, hi]` with `points` samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogAxis {
    pub lo: f64,
    pub hi: f64,
    pub points: usize,
}

impl LogAxis {
    pub fn values(&self) -> Vec<f64> {
        if self.points <= 1 {
            return vec![(self.lo * self.hi).sqrt()];
        }
        let (l0, l1) = (self.lo.ln(), self.hi.ln());
        (0..self.points)
            .map(|i| (l0 + (l1 - l0) * i as f64 / (self.points - 1) as f64).exp())
            .collect()
    }
}

/// Starting points for the multi-start search, enumerated B-major, then E,
/// then beta.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitGrid {
    pub b_coef: LogAxis,
    pub e: LogAxis,
    pub beta: LogAxis,
}

impl Default for InitGrid {
    fn default() -> Self {
        InitGrid {
            b_coef: LogAxis { lo: 10.0, hi: 5000.0, points: 5 },
            e: LogAxis { lo: 0.5, hi: 3.0, points: 5 },
            beta: LogAxis { lo: 0.1, hi: 0.6, points: 5 },
        }
    }
}

impl InitGrid {
    pub fn starts(&self) -> Vec<InitPoint> {
        let mut out = Vec::new();
        for &b_coef in &self.b_coef.values() {
            for &e in &self.e.values() {
                for &beta in &self.beta.values() {
                    out.push(InitPoint {
                        index: out.len(),
                        b_coef,
                        e,
                        beta,
                    });
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitPoint {
    pub index: usize,
    pub b_coef: f64,
    pub e: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub delta: f64,
    pub grid: InitGrid,
    pub max_iter: usize,
    pub f_tol: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            delta: 1e-3,
            grid: InitGrid::default(),
            max_iter: 500,
            f_tol: 1e-12,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub law: ChinchillaLaw<f64>,
    pub r_squared: f64,
    pub huber_delta: f64,
    pub n_points: usize,
    pub init_grid_winner: InitPoint,
    /// `None` for the free five-parameter fit.
    pub constraint: Option<Constraint<f64>>,
    pub objective_value: f64,
    pub converged_starts: usize,
    pub total_starts: usize,
}

fn check_span(data: &[LossObservation]) -> Result<(), LawFitError> {
    let distinct = |f: fn(&LossObservation) -> f64| {
        let mut v: Vec<f64> = data.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v.dedup();
        v.len()
    };
    let (nn, nd) = (distinct(|o| o.n_params), distinct(|o| o.tokens));
    if data.len() < 8 || nn < 2 || nd < 4 {
        return Err(LawFitError::InsufficientData(format!(
            "need >= 8 points over >= 2 model sizes and >= 4 token counts, got {} points, {nn} sizes, {nd} token counts",
            data.len()
        )));
    }
    if data
        .iter()
        .any(|o| !(o.n_params > 0.0 && o.tokens > 0.0 && o.loss > 0.0 && o.loss.is_finite()))
    {
        return Err(LawFitError::InsufficientData(
            "observations must be positive and finite".into(),
        ));
    }
    Ok(())
}

/// Parameter vector → law, in log space.
fn decode(x: &[f64], constraint: Option<&Constraint<f64>>) -> ChinchillaLaw<f64> {
    match constraint {
        Some(c) => {
            let (b_coef, e, beta) = (x[0].exp(), x[1].exp(), x[2].exp());
            let (a_coef, alpha) = apply_constraint(c, b_coef, beta);
            ChinchillaLaw::new(e, a_coef, alpha, b_coef, beta)
        }
        None => ChinchillaLaw::new(x[1].exp(), x[3].exp(), x[4].exp(), x[0].exp(), x[2].exp()),
    }
}

fn objective(law: &ChinchillaLaw<f64>, data: &[LossObservation], delta: f64) -> f64 {
    data.iter()
        .map(|o| huber(law.eval(o.n_params, o.tokens).ln() - o.loss.ln(), delta))
        .sum()
}

/// Multi-start log-Huber fit of the Chinchilla form.
///
/// With a constraint only `(B, E, beta)` are free; without one all five
/// parameters are, and each start seeds `A = B`, `alpha = beta`.
pub fn constrained_fit(
    data: &[LossObservation],
    constraint: Option<&Constraint<f64>>,
    config: &FitConfig,
) -> Result<FitReport, LawFitError> {
    check_span(data)?;
    // Constant losses leave every coefficient unidentified.
    if is_flat(&data.iter().map(|o| o.loss).collect::<Vec<_>>()) {
        return Err(LawFitError::UndefinedVariance);
    }
    if let Some(c) = constraint {
        c.validate()?;
    }
    let opts = BfgsOptions {
        f_tol: config.f_tol,
        max_iter: config.max_iter,
        ..BfgsOptions::default()
    };
    let starts = config.grid.starts();
    let results: Vec<_> = starts
        .par_iter()
        .map(|s| {
            let mut x0 = vec![s.b_coef.ln(), s.e.ln(), s.beta.ln()];
            if constraint.is_none() {
                x0.extend([s.b_coef.ln(), s.beta.ln()]);
            }
            let f = |x: &[f64]| objective(&decode(x, constraint), data, config.delta);
            (s, bfgs(f, &x0, &opts))
        })
        .collect();

    // Reduce in grid order: strict improvement only, so ties keep the lower index.
    let mut best: Option<(&InitPoint, &crate::optim::Minimum<f64>)> = None;
    let mut best_any: Option<(&InitPoint, &crate::optim::Minimum<f64>)> = None;
    let mut converged = 0;
    for (s, m) in &results {
        if !m.f.is_finite() {
            continue;
        }
        if best_any.map_or(true, |(_, b)| m.f < b.f) {
            best_any = Some((s, m));
        }
        if m.converged {
            converged += 1;
            if best.map_or(true, |(_, b)| m.f < b.f) {
                best = Some((s, m));
            }
        }
    }

    let build = |(s, m): (&InitPoint, &crate::optim::Minimum<f64>)| -> FitReport {
        let law = decode(&m.x, constraint);
        let predicted: Vec<f64> = data.iter().map(|o| law.eval(o.n_params, o.tokens)).collect();
        let observed: Vec<f64> = data.iter().map(|o| o.loss).collect();
        FitReport {
            law,
            r_squared: r_squared_log(&predicted, &observed).unwrap_or(f64::NAN),
            huber_delta: config.delta,
            n_points: data.len(),
            init_grid_winner: *s,
            constraint: constraint.copied(),
            objective_value: m.f,
            converged_starts: converged,
            total_starts: starts.len(),
        }
    };

    match (best, best_any) {
        (Some(b), _) => Ok(build(b)),
        (None, Some(b)) => Err(LawFitError::FitFailure {
            best: Box::new(build(b)),
        }),
        (None, None) => Err(LawFitError::FitFailure {
            best: Box::new(FitReport {
                law: ChinchillaLaw::new(f64::NAN, f64::NAN, f64::NAN, f64::NAN, f64::NAN),
                r_squared: f64::NAN,
                huber_delta: config.delta,
                n_points: data.len(),
                init_grid_winner: starts[0],
                constraint: constraint.copied(),
                objective_value: f64::INFINITY,
                converged_starts: 0,
                total_starts: starts.len(),
            }),
        }),
    }
}
