//! Mixing laws `t -> (c0, c1)` and inference time grids.
//!
//! Three families are supported:
//!
//! * `vp-discrete`: linear beta over `T` training steps, times are step indices
//!   in `[-1, T-1]` where `-1` denotes clean data (`alpha_bar = 1`).
//! * `vp-continuous`: the linear VP SDE with `beta(t) = b0 + t (b1 - b0)` on `[0, 1]`.
//! * `flow`: rectified flow, `c0 = 1 - t`, `c1 = t` on `[0, 1]`.

use serde::{Deserialize, Serialize};

use crate::error::{param, Error, Result};

/// Serializable description of a schedule. This is what goes into matrix headers.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum ScheduleSpec {
    VpDiscrete {
        beta_min: f64,
        beta_max: f64,
        steps: usize,
    },
    VpContinuous {
        beta_min: f64,
        beta_max: f64,
        /// Smallest time used by grids (the sampler's end point).
        t_min: f64,
    },
    Flow,
}

impl ScheduleSpec {
    /// Parse `vp-linear:1e-4:0.02:1000`, `vp-cont:0.1:20:1e-3` or `flow`.
    pub fn parse(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(':').collect();
        let num = |i: usize, default: f64| -> Result<f64> {
            match parts.get(i) {
                None => Ok(default),
                Some(p) => p
                    .parse::<f64>()
                    .map_err(|_| Error::Parameter(format!("bad number '{p}' in schedule '{s}'"))),
            }
        };
        match parts[0] {
            "flow" if parts.len() == 1 => Ok(ScheduleSpec::Flow),
            "vp-linear" | "vp-discrete" if parts.len() <= 4 => Ok(ScheduleSpec::VpDiscrete {
                beta_min: num(1, 1e-4)?,
                beta_max: num(2, 0.02)?,
                steps: num(3, 1000.0)? as usize,
            }),
            "vp-cont" | "vp-continuous" if parts.len() <= 4 => Ok(ScheduleSpec::VpContinuous {
                beta_min: num(1, 0.1)?,
                beta_max: num(2, 20.0)?,
                t_min: num(3, 1e-3)?,
            }),
            _ => param(format!("unknown schedule '{s}'")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Family {
    VpDiscrete,
    VpContinuous,
    Flow,
}

/// A constructed schedule. Immutable; cheap to clone for the continuous families.
#[derive(Debug, Clone)]
pub struct Schedule {
    spec: ScheduleSpec,
    betas: Vec<f64>,
    alpha_bar: Vec<f64>,
    one_minus_alpha_bar: Vec<f64>,
}

// Error-free product and sum helpers for the double-double cumulative product.
fn two_prod(a: f64, b: f64) -> (f64, f64) {
    let p = a * b;
    (p, a.mul_add(b, -p))
}

fn quick_two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    (s, b - (s - a))
}

impl Schedule {
    pub fn vp_linear(beta_min: f64, beta_max: f64, steps: usize) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max < 1.0) {
            return param(format!(
                "need 0 < beta_min <= beta_max < 1, got ({beta_min}, {beta_max})"
            ));
        }
        if steps == 0 {
            return param("step count must be at least 1");
        }
        let betas: Vec<f64> = (0..steps)
            .map(|i| {
                if steps == 1 {
                    beta_min
                } else {
                    beta_min + (beta_max - beta_min) * i as f64 / (steps - 1) as f64
                }
            })
            .collect();
        // cumulative product of (1 - beta) carried in double-double
        let mut alpha_bar = Vec::with_capacity(steps);
        let mut one_minus = Vec::with_capacity(steps);
        let (mut hi, mut lo) = (1.0f64, 0.0f64);
        for &b in &betas {
            let a_hi = 1.0 - b;
            let a_lo = (1.0 - a_hi) - b;
            let (p, mut e) = two_prod(hi, a_hi);
            e += hi * a_lo + lo * a_hi;
            let (h, l) = quick_two_sum(p, e);
            hi = h;
            lo = l;
            alpha_bar.push(hi + lo);
            one_minus.push((1.0 - hi) - lo);
        }
        Ok(Schedule {
            spec: ScheduleSpec::VpDiscrete {
                beta_min,
                beta_max,
                steps,
            },
            betas,
            alpha_bar,
            one_minus_alpha_bar: one_minus,
        })
    }

    pub fn vp_continuous(beta_min: f64, beta_max: f64, t_min: f64) -> Result<Self> {
        if !(beta_min > 0.0 && beta_min <= beta_max && beta_max.is_finite()) {
            return param(format!(
                "need 0 < beta_min <= beta_max, got ({beta_min}, {beta_max})"
            ));
        }
        if !(t_min > 0.0 && t_min < 1.0) {
            return param(format!("t_min must lie in (0, 1), got {t_min}"));
        }
        Ok(Schedule {
            spec: ScheduleSpec::VpContinuous {
                beta_min,
                beta_max,
                t_min,
            },
            betas: vec![],
            alpha_bar: vec![],
            one_minus_alpha_bar: vec![],
        })
    }

    pub fn flow() -> Self {
        Schedule {
            spec: ScheduleSpec::Flow,
            betas: vec![],
            alpha_bar: vec![],
            one_minus_alpha_bar: vec![],
        }
    }

    /// The DDPM default: linear beta from 1e-4 to 0.02 over 1000 steps.
    pub fn ddpm_default() -> Self {
        Self::vp_linear(1e-4, 0.02, 1000).expect("valid constants")
    }

    /// Linear VP SDE with beta in [0.1, 20] and end time 1e-3.
    pub fn vp_continuous_default() -> Self {
        Self::vp_continuous(0.1, 20.0, 1e-3).expect("valid constants")
    }

    pub fn from_spec(spec: &ScheduleSpec) -> Result<Self> {
        match *spec {
            ScheduleSpec::VpDiscrete {
                beta_min,
                beta_max,
                steps,
            } => Self::vp_linear(beta_min, beta_max, steps),
            ScheduleSpec::VpContinuous {
                beta_min,
                beta_max,
                t_min,
            } => Self::vp_continuous(beta_min, beta_max, t_min),
            ScheduleSpec::Flow => Ok(Self::flow()),
        }
    }

    pub fn spec(&self) -> &ScheduleSpec {
        &self.spec
    }

    pub fn family(&self) -> Family {
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => Family::VpDiscrete,
            ScheduleSpec::VpContinuous { .. } => Family::VpContinuous,
            ScheduleSpec::Flow => Family::Flow,
        }
    }

    pub fn is_vp(&self) -> bool {
        self.family() != Family::Flow
    }

    /// Closed time domain `(lo, hi)`.
    pub fn domain(&self) -> (f64, f64) {
        match self.spec {
            ScheduleSpec::VpDiscrete { steps, .. } => (-1.0, (steps - 1) as f64),
            _ => (0.0, 1.0),
        }
    }

    /// Largest time: where sampling starts.
    pub fn t_max(&self) -> f64 {
        self.domain().1
    }

    /// Time of the clean output that grids end on.
    pub fn terminal_time(&self) -> f64 {
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => -1.0,
            ScheduleSpec::VpContinuous { t_min, .. } => t_min,
            ScheduleSpec::Flow => 0.0,
        }
    }

    fn check_domain(&self, t: f64) -> Result<()> {
        let (lo, hi) = self.domain();
        if !(t >= lo && t <= hi) {
            return Err(Error::Domain { t, lo, hi });
        }
        Ok(())
    }

    /// Table lookup for `vp-discrete`, returning `(alpha_bar, 1 - alpha_bar)` at
    /// an integer index; fractional indices interpolate `log alpha_bar` linearly.
    fn discrete_abar(&self, t: f64) -> (f64, f64) {
        let at = |i: i64| -> (f64, f64) {
            if i < 0 {
                (1.0, 0.0)
            } else {
                let i = i as usize;
                (self.alpha_bar[i], self.one_minus_alpha_bar[i])
            }
        };
        let fl = t.floor();
        if fl == t {
            return at(t as i64);
        }
        let (a0, _) = at(fl as i64);
        let (a1, _) = at(fl as i64 + 1);
        let w = t - fl;
        let la = (1.0 - w) * a0.ln() + w * a1.ln();
        (la.exp(), -la.exp_m1())
    }

    /// `log c0(t)`.
    pub fn log_alpha(&self, t: f64) -> f64 {
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => 0.5 * self.discrete_abar(t).0.ln(),
            ScheduleSpec::VpContinuous {
                beta_min, beta_max, ..
            } => -0.25 * t * t * (beta_max - beta_min) - 0.5 * t * beta_min,
            ScheduleSpec::Flow => (1.0 - t).ln(),
        }
    }

    /// `(c0, c1)` at time `t`.
    pub fn mixing_coeffs(&self, t: f64) -> Result<(f64, f64)> {
        self.check_domain(t)?;
        Ok(self.coeffs_unchecked(t))
    }

    pub(crate) fn coeffs_unchecked(&self, t: f64) -> (f64, f64) {
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => {
                let (a, om) = self.discrete_abar(t);
                (a.sqrt(), om.sqrt())
            }
            ScheduleSpec::VpContinuous { .. } => {
                let la = self.log_alpha(t);
                (la.exp(), (-(2.0 * la).exp_m1()).sqrt())
            }
            ScheduleSpec::Flow => (1.0 - t, t),
        }
    }

    /// `alpha_bar(t) = c0^2` for VP families.
    pub fn alpha_bar(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => Ok(self.discrete_abar(t).0),
            ScheduleSpec::VpContinuous { .. } => Ok((2.0 * self.log_alpha(t)).exp()),
            ScheduleSpec::Flow => Err(Error::Unsupported(
                "alpha_bar is defined for vp schedules only".into(),
            )),
        }
    }

    /// `1 - alpha_bar(t)` computed without cancellation.
    pub fn one_minus_alpha_bar(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => Ok(self.discrete_abar(t).1),
            ScheduleSpec::VpContinuous { .. } => Ok(-(2.0 * self.log_alpha(t)).exp_m1()),
            ScheduleSpec::Flow => Err(Error::Unsupported(
                "alpha_bar is defined for vp schedules only".into(),
            )),
        }
    }

    /// Per-step beta for `vp-discrete` (index units), `beta(t)` for `vp-continuous`.
    pub fn beta(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        match self.spec {
            ScheduleSpec::VpDiscrete { .. } => {
                if t < 0.0 {
                    return Ok(self.betas[0]);
                }
                let fl = t.floor();
                let i = fl as usize;
                if fl == t || i + 1 >= self.betas.len() {
                    Ok(self.betas[i.min(self.betas.len() - 1)])
                } else {
                    let w = t - fl;
                    Ok((1.0 - w) * self.betas[i] + w * self.betas[i + 1])
                }
            }
            ScheduleSpec::VpContinuous {
                beta_min, beta_max, ..
            } => Ok(beta_min + t * (beta_max - beta_min)),
            ScheduleSpec::Flow => Err(Error::Unsupported(
                "beta is defined for vp schedules only".into(),
            )),
        }
    }

    /// Half log-SNR `lambda(t) = log(c0 / c1)`.
    pub fn lambda(&self, t: f64) -> Result<f64> {
        self.check_domain(t)?;
        match self.spec {
            ScheduleSpec::Flow => Ok((1.0 - t).ln() - t.ln()),
            _ => {
                let la = self.log_alpha(t);
                Ok(la - 0.5 * (-(2.0 * la).exp_m1()).ln())
            }
        }
    }

    /// Inverse of [`Schedule::lambda`].
    pub fn inverse_lambda(&self, lambda: f64) -> Result<f64> {
        if !lambda.is_finite() {
            return Err(Error::NonFinite(format!("lambda = {lambda}")));
        }
        match self.spec {
            ScheduleSpec::Flow => Ok(1.0 / (1.0 + lambda.exp())),
            ScheduleSpec::VpContinuous {
                beta_min, beta_max, ..
            } => {
                let db = beta_max - beta_min;
                // log(1 + e^{-2 lambda}) computed stably
                let x = -2.0 * lambda;
                let lae = if x > 0.0 {
                    x + (-x).exp().ln_1p()
                } else {
                    x.exp().ln_1p()
                };
                let tmp = 2.0 * db * lae;
                let delta = beta_min * beta_min + tmp;
                Ok(tmp / (delta.sqrt() + beta_min) / db)
            }
            ScheduleSpec::VpDiscrete { .. } => {
                // lambda is strictly decreasing in t; bisection over the domain
                let (mut lo, mut hi) = (-1.0 + 1e-12, self.t_max());
                let f = |t: f64| self.lambda(t).map(|l| l - lambda);
                if f(hi)? > 0.0 || f(lo)? < 0.0 {
                    return param(format!("lambda {lambda} outside schedule range"));
                }
                for _ in 0..200 {
                    let mid = 0.5 * (lo + hi);
                    if f(mid)? > 0.0 {
                        lo = mid;
                    } else {
                        hi = mid;
                    }
                    if hi - lo <= 1e-13 * (1.0 + hi.abs()) {
                        break;
                    }
                }
                Ok(0.5 * (lo + hi))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GridRule {
    /// `round(linspace(T-1, 0, n))` on discrete schedules, uniform spacing otherwise.
    Trailing,
    /// Uniform in `sqrt(t)`.
    Quadratic,
    Explicit,
}

/// Evaluation times (largest first) plus the terminal time of the output row.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    pub times: Vec<f64>,
    pub terminal: f64,
    pub rule: GridRule,
}

impl TimeGrid {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    /// Evaluation times followed by the terminal time.
    pub fn with_terminal(&self) -> Vec<f64> {
        let mut v = self.times.clone();
        v.push(self.terminal);
        v
    }

    /// Validates an explicit list of evaluation times.
    pub fn explicit(s: &Schedule, times: Vec<f64>) -> Result<Self> {
        if times.is_empty() {
            return Err(Error::Grid("empty time list".into()));
        }
        let terminal = s.terminal_time();
        let (lo, hi) = s.domain();
        for (i, &t) in times.iter().enumerate() {
            if !(t >= lo && t <= hi) {
                return Err(Error::Domain { t, lo, hi });
            }
            if t <= terminal {
                return Err(Error::Grid(format!(
                    "time {t} is not after the terminal time {terminal}"
                )));
            }
            if i > 0 && t >= times[i - 1] {
                return Err(Error::Grid(format!(
                    "times must be strictly decreasing, got {} then {t}",
                    times[i - 1]
                )));
            }
        }
        Ok(TimeGrid {
            times,
            terminal,
            rule: GridRule::Explicit,
        })
    }
}

fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    if n == 1 {
        return vec![a];
    }
    (0..n)
        .map(|i| a + (b - a) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Builds an `n`-point evaluation grid.
pub fn make_grid(s: &Schedule, n: usize, rule: GridRule) -> Result<TimeGrid> {
    if n == 0 {
        return param("grid needs at least one point");
    }
    let times: Vec<f64> = match (s.spec(), rule) {
        (_, GridRule::Explicit) => {
            return param("explicit grids are built with TimeGrid::explicit");
        }
        (ScheduleSpec::VpDiscrete { steps, .. }, r) => {
            if n > *steps {
                return param(format!("{n} grid points exceed the {steps} schedule steps"));
            }
            let top = (*steps - 1) as f64;
            match r {
                GridRule::Trailing => linspace(top, 0.0, n).iter().map(|t| t.round()).collect(),
                _ => linspace(top.sqrt(), 0.0, n)
                    .iter()
                    .map(|t| (t * t).round())
                    .collect(),
            }
        }
        (ScheduleSpec::VpContinuous { t_min, .. }, r) => match r {
            GridRule::Trailing => linspace(1.0, *t_min, n + 1)[..n].to_vec(),
            _ => linspace(1.0, t_min.sqrt(), n + 1)[..n]
                .iter()
                .map(|t| t * t)
                .collect(),
        },
        (ScheduleSpec::Flow, r) => match r {
            GridRule::Trailing => (0..n).map(|k| (n - k) as f64 / n as f64).collect(),
            _ => (0..n)
                .map(|k| {
                    let u = (n - k) as f64 / n as f64;
                    u * u
                })
                .collect(),
        },
    };
    let mut g = TimeGrid::explicit(s, times)?;
    g.rule = rule;
    Ok(g)
}
