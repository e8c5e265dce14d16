//! Noise schedules: the cumulative absorbing probability for type tokens
//! and the kernel width for coordinate tokens.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::transition::{build_coord_matrix, CoordMatrixKind};

/// Coordinate kernel width used once the power-law horizon is reached. The
/// coordinate matrix at this width is the uniform matrix.
pub const BETA_CAP: f64 = 1e6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TypeScheduleKind {
    /// Types untouched before `T_tilde`, then absorbed linearly until `T`.
    LateAbsorb,
    /// Absorbed linearly from the start, fully masked at `early_horizon`.
    EarlyAbsorb,
    /// `t / T` throughout.
    Linear,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoordScheduleKind {
    /// `g / (T_c - t + eps)^h` below the horizon `T_c`, [`BETA_CAP`] after.
    PowerLaw,
    /// `linear_b * t / T`.
    Linear,
}

fn default_early_horizon() -> usize {
    40
}

fn default_linear_b() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScheduleParams {
    #[serde(rename = "T")]
    pub total_steps: usize,
    #[serde(rename = "T_tilde")]
    pub absorb_start: usize,
    pub g: f64,
    pub h: f64,
    pub eps: f64,
    #[serde(rename = "type_kind")]
    pub type_kind: TypeScheduleKind,
    #[serde(rename = "coord_kind")]
    pub coord_kind: CoordScheduleKind,
    /// Power-law horizon `T_c`; defaults to `T_tilde`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub coord_horizon: Option<usize>,
    #[serde(default = "default_early_horizon")]
    pub early_horizon: usize,
    #[serde(default = "default_linear_b")]
    pub linear_b: f64,
}

impl ScheduleParams {
    /// T=200, T_tilde=160, beta_t = 12.4 / (160 - t + 1e-4)^2.48.
    pub fn paper() -> Self {
        ScheduleParams {
            total_steps: 200,
            absorb_start: 160,
            g: 12.4,
            h: 2.48,
            eps: 1e-4,
            type_kind: TypeScheduleKind::LateAbsorb,
            coord_kind: CoordScheduleKind::PowerLaw,
            coord_horizon: None,
            early_horizon: default_early_horizon(),
            linear_b: default_linear_b(),
        }
    }

    /// Rows of the timestep table for other totals, same proportions.
    pub fn for_total_steps(total: usize) -> Option<Self> {
        let (t_tilde, g, h) = match total {
            100 => (80, 20.0, 2.96),
            200 => (160, 12.4, 2.48),
            500 => (400, 6.2, 2.00),
            1000 => (800, 3.5, 1.76),
            2000 => (1600, 2.0, 1.52),
            _ => return None,
        };
        Some(ScheduleParams {
            total_steps: total,
            absorb_start: t_tilde,
            g,
            h,
            ..Self::paper()
        })
    }

    /// CI-scale schedule: T=50, T_tilde=40.
    pub fn desk() -> Self {
        ScheduleParams {
            total_steps: 50,
            absorb_start: 40,
            g: 1.0,
            h: 2.0,
            ..Self::paper()
        }
    }

    pub fn coord_horizon(&self) -> usize {
        self.coord_horizon.unwrap_or(self.absorb_start)
    }

    pub fn validate(&self) -> Result<()> {
        let t = self.total_steps;
        let bad = |m: String| Err(Error::Config(m));
        if t == 0 {
            return bad("T must be positive".into());
        }
        if self.absorb_start == 0 || self.absorb_start > t {
            return bad(format!("T_tilde must lie in (0, T], got {}", self.absorb_start));
        }
        if !(self.g > 0.0 && self.h > 0.0 && self.g.is_finite() && self.h.is_finite()) {
            return bad("g and h must be positive".into());
        }
        if !(self.eps > 0.0 && self.eps < 1.0) {
            return bad("eps must lie in (0, 1)".into());
        }
        if self.coord_horizon() == 0 || self.coord_horizon() > t {
            return bad("coordinate horizon must lie in (0, T]".into());
        }
        if self.type_kind == TypeScheduleKind::EarlyAbsorb && (self.early_horizon == 0 || self.early_horizon > t) {
            return bad("early-absorb horizon must lie in (0, T]".into());
        }
        if !(self.linear_b > 0.0) {
            return bad("linear_b must be positive".into());
        }
        Ok(())
    }
}

fn check_t(t: usize, min: usize, max: usize) -> Result<()> {
    if t < min || t > max {
        return Err(Error::TimestepOutOfRange { t, min, max });
    }
    Ok(())
}

/// Cumulative absorbing probability at `t` in `[0, T]`.
pub fn gamma_bar(t: usize, params: &ScheduleParams) -> Result<f64> {
    let total = params.total_steps;
    check_t(t, 0, total)?;
    if t == total {
        return Ok(1.0);
    }
    let (t, total_f) = (t as f64, total as f64);
    Ok(match params.type_kind {
        TypeScheduleKind::LateAbsorb => {
            let start = params.absorb_start as f64;
            if t < start {
                0.0
            } else {
                (t - start) / (total_f - start)
            }
        }
        TypeScheduleKind::EarlyAbsorb => (t / params.early_horizon as f64).min(1.0),
        TypeScheduleKind::Linear => t / total_f,
    })
}

/// Per-step absorbing probability, the factor with
/// `1 - gamma_bar(t) = prod_{i<=t} (1 - gamma(i))`.
pub fn gamma_step(t: usize, params: &ScheduleParams) -> Result<f64> {
    check_t(t, 1, params.total_steps)?;
    let prev = gamma_bar(t - 1, params)?;
    let cur = gamma_bar(t, params)?;
    if prev >= 1.0 || cur >= 1.0 {
        return Ok(1.0);
    }
    Ok((1.0 - (1.0 - cur) / (1.0 - prev)).clamp(0.0, 1.0))
}

/// Coordinate kernel width at `t` in `[1, T]`.
pub fn beta(t: usize, params: &ScheduleParams) -> Result<f64> {
    check_t(t, 1, params.total_steps)?;
    Ok(match params.coord_kind {
        CoordScheduleKind::PowerLaw => {
            let horizon = params.coord_horizon();
            if t >= horizon {
                BETA_CAP
            } else {
                params.g / ((horizon - t) as f64 + params.eps).powf(params.h)
            }
        }
        CoordScheduleKind::Linear => params.linear_b * t as f64 / params.total_steps as f64,
    })
}

/// All schedule values precomputed for `t = 0..=T` (index 0 unused for the
/// per-step arrays).
#[derive(Debug, Clone)]
pub struct Schedule<F: Scalar> {
    params: ScheduleParams,
    gamma_bar: Vec<F>,
    gamma: Vec<F>,
    beta: Vec<F>,
}

impl<F: Scalar> Schedule<F> {
    pub fn new(params: ScheduleParams) -> Result<Self> {
        params.validate()?;
        let total = params.total_steps;
        let gamma_bar = (0..=total)
            .map(|t| gamma_bar(t, &params).map(F::lit))
            .collect::<Result<Vec<_>>>()?;
        let mut gamma = vec![F::zero()];
        let mut beta_v = vec![F::zero()];
        for t in 1..=total {
            gamma.push(F::lit(gamma_step(t, &params)?));
            beta_v.push(F::lit(beta(t, &params)?));
        }
        Ok(Schedule {
            params,
            gamma_bar,
            gamma,
            beta: beta_v,
        })
    }

    pub fn params(&self) -> &ScheduleParams {
        &self.params
    }

    pub fn total_steps(&self) -> usize {
        self.params.total_steps
    }

    pub fn gamma_bar(&self, t: usize) -> F {
        self.gamma_bar[t]
    }

    pub fn gamma(&self, t: usize) -> F {
        self.gamma[t]
    }

    pub fn beta(&self, t: usize) -> F {
        self.beta[t]
    }
}

fn entry_std(m: &ndarray::Array2<f64>) -> f64 {
    let n = m.len() as f64;
    let mean = m.sum() / n;
    (m.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n).sqrt()
}

/// Standard deviation of the entries of the cumulative Gaussian coordinate
/// matrix, indexed by `t = 0..=T` (entry 0 is the identity).
pub fn cumulative_std_curve(params: &ScheduleParams, k: usize) -> Result<Vec<f64>> {
    if k < 2 {
        return Err(Error::Config("K must be at least 2".into()));
    }
    let schedule = Schedule::<f64>::new(params.clone())?;
    let mut cum = ndarray::Array2::<f64>::eye(k);
    let mut out = Vec::with_capacity(params.total_steps + 1);
    out.push(entry_std(&cum));
    for t in 1..=params.total_steps {
        let step = build_coord_matrix(t, &schedule, k, CoordMatrixKind::Gaussian);
        cum = cum.dot(&step);
        out.push(entry_std(&cum));
    }
    Ok(out)
}
