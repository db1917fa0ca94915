//! Native iteration rules, written once against [`Element`] so the same code
//! executes on vectors and traces into coefficient matrices.
//!
//! All samplers consume an x0-prediction model. Solvers that are usually stated
//! for noise prediction convert with `eps = (x - c0 y) / c1` inside the update.

use std::fmt;
use std::str::FromStr;

use crate::affine::{lin_combine, Element, NoiseId, RunContext};
use crate::error::{param, Error, Result};
use crate::schedule::{Family, GridRule, Schedule, ScheduleSpec, TimeGrid};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepCoefficients {
    /// Weight on the current state.
    pub d: f64,
    /// Weight on the model output.
    pub e: f64,
    /// Weight on fresh noise.
    pub g: f64,
}

fn require_vp(s: &Schedule, what: &str) -> Result<()> {
    if s.is_vp() {
        Ok(())
    } else {
        Err(Error::Unsupported(format!("{what} needs a vp schedule")))
    }
}

fn interval(s: &Schedule, t: f64, t_prev: f64) -> Result<(f64, f64, f64, f64)> {
    require_vp(s, "this step")?;
    if !(t > t_prev) {
        return param(format!("step must go backwards in time, got {t} -> {t_prev}"));
    }
    let a = s.alpha_bar(t)?;
    let om = s.one_minus_alpha_bar(t)?;
    let ap = s.alpha_bar(t_prev)?;
    let omp = s.one_minus_alpha_bar(t_prev)?;
    if om == 0.0 {
        return Err(Error::Numeric(format!("alpha_bar = 1 at t = {t}")));
    }
    Ok((a, om, ap, omp))
}

/// Ancestral DDPM step between two grid times.
pub fn ddpm_step_coeffs(s: &Schedule, t: f64, t_prev: f64) -> Result<StepCoefficients> {
    let (a, om, ap, omp) = interval(s, t, t_prev)?;
    let alpha = a / ap;
    let beta = (ap - a) / ap;
    Ok(StepCoefficients {
        d: alpha.sqrt() * omp / om,
        e: ap.sqrt() * beta / om,
        g: (omp / om * beta).sqrt(),
    })
}

/// Deterministic DDIM step.
pub fn ddim_step_coeffs(s: &Schedule, t: f64, t_prev: f64) -> Result<StepCoefficients> {
    let (a, om, ap, omp) = interval(s, t, t_prev)?;
    let d = (omp / om).sqrt();
    Ok(StepCoefficients {
        d,
        e: ap.sqrt() - d * a.sqrt(),
        g: 0.0,
    })
}

/// Euler step of the rectified-flow ODE.
pub fn flow_euler_step_coeffs(t: f64, t_prev: f64) -> Result<StepCoefficients> {
    if !(0.0 <= t_prev && t_prev <= t && t <= 1.0) {
        return param(format!("need 0 <= t_prev <= t <= 1, got {t_prev}, {t}"));
    }
    if t == 0.0 {
        return Err(Error::Numeric("flow step from t = 0".into()));
    }
    let r = t_prev / t;
    Ok(StepCoefficients {
        d: r,
        e: 1.0 - r,
        g: 0.0,
    })
}

/// `(S0, St)` such that the score is `S0 * x0_hat + St * x`.
fn score_weights(s: &Schedule, t: f64) -> Result<(f64, f64)> {
    let om = s.one_minus_alpha_bar(t)?;
    if om == 0.0 {
        return Err(Error::Numeric(format!("score undefined at t = {t}")));
    }
    Ok((s.alpha_bar(t)?.sqrt() / om, -1.0 / om))
}

fn euler_setup(s: &Schedule, t: f64, t_prev: f64) -> Result<(f64, f64, f64, f64)> {
    require_vp(s, "Euler discretization of the VP SDE")?;
    if t_prev > t {
        return param(format!("step must go backwards in time, got {t} -> {t_prev}"));
    }
    let (s0, st) = score_weights(s, t)?;
    Ok((t - t_prev, s.beta(t)?, s0, st))
}

/// One Euler-Maruyama step of the reverse VP SDE. `z` is the fresh noise.
pub fn sde_euler_step(
    s: &Schedule,
    t: f64,
    t_prev: f64,
    x: &Element,
    y: &Element,
    z: &Element,
) -> Result<Element> {
    let (dt, beta, s0, st) = euler_setup(s, t, t_prev)?;
    if dt == 0.0 {
        return Ok(x.clone());
    }
    lin_combine(&[
        (1.0 + dt * beta * (0.5 + st), x),
        (dt * beta * s0, y),
        ((beta * dt).sqrt(), z),
    ])
}

/// One Euler step of the probability-flow ODE.
pub fn ode_euler_step(s: &Schedule, t: f64, t_prev: f64, x: &Element, y: &Element) -> Result<Element> {
    let (dt, beta, s0, st) = euler_setup(s, t, t_prev)?;
    if dt == 0.0 {
        return Ok(x.clone());
    }
    lin_combine(&[
        (1.0 + dt * beta * (0.5 + 0.5 * st), x),
        (0.5 * dt * beta * s0, y),
    ])
}

pub fn x0_from_eps(s: &Schedule, t: f64, x: &[f64], eps: &[f64]) -> Result<Vec<f64>> {
    let (c0, c1) = s.mixing_coeffs(t)?;
    if c0 == 0.0 {
        return Err(Error::Numeric(format!("c0 = 0 at t = {t}")));
    }
    Ok(x.iter().zip(eps).map(|(x, e)| (x - c1 * e) / c0).collect())
}

pub fn eps_from_x0(s: &Schedule, t: f64, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    let (c0, c1) = s.mixing_coeffs(t)?;
    if c1 == 0.0 {
        return Err(Error::Numeric(format!("c1 = 0 at t = {t}")));
    }
    Ok(x.iter().zip(x0).map(|(x, y)| (x - c0 * y) / c1).collect())
}

/// Rectified-flow velocity `(x - x0) / t`.
pub fn velocity_from_x0(t: f64, x: &[f64], x0: &[f64]) -> Result<Vec<f64>> {
    if t == 0.0 {
        return Err(Error::Numeric("velocity undefined at t = 0".into()));
    }
    Ok(x.iter().zip(x0).map(|(x, y)| (x - y) / t).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SamplerKind {
    Ddpm,
    Ddim,
    FlowEuler,
    SdeEuler,
    OdeEuler,
    DpmSolver2S,
    DpmSolver3S,
    DpmPp2S,
    DpmPp3S,
    Deis1,
    Deis2,
    Deis3,
}

impl SamplerKind {
    pub const ALL: [SamplerKind; 12] = [
        SamplerKind::Ddpm,
        SamplerKind::Ddim,
        SamplerKind::FlowEuler,
        SamplerKind::SdeEuler,
        SamplerKind::OdeEuler,
        SamplerKind::DpmSolver2S,
        SamplerKind::DpmSolver3S,
        SamplerKind::DpmPp2S,
        SamplerKind::DpmPp3S,
        SamplerKind::Deis1,
        SamplerKind::Deis2,
        SamplerKind::Deis3,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SamplerKind::Ddpm => "ddpm",
            SamplerKind::Ddim => "ddim",
            SamplerKind::FlowEuler => "flow-euler",
            SamplerKind::SdeEuler => "sde-euler",
            SamplerKind::OdeEuler => "ode-euler",
            SamplerKind::DpmSolver2S => "dpm-solver-2s",
            SamplerKind::DpmSolver3S => "dpm-solver-3s",
            SamplerKind::DpmPp2S => "dpmpp-2s",
            SamplerKind::DpmPp3S => "dpmpp-3s",
            SamplerKind::Deis1 => "deis-1",
            SamplerKind::Deis2 => "deis-2",
            SamplerKind::Deis3 => "deis-3",
        }
    }

    /// Model evaluations per grid interval (singlestep solvers), or the
    /// multistep order for DEIS. First-order methods return 1.
    pub fn order(self) -> usize {
        match self {
            SamplerKind::DpmSolver2S | SamplerKind::DpmPp2S | SamplerKind::Deis2 => 2,
            SamplerKind::DpmSolver3S | SamplerKind::DpmPp3S | SamplerKind::Deis3 => 3,
            _ => 1,
        }
    }

    pub fn is_singlestep(self) -> bool {
        matches!(
            self,
            SamplerKind::DpmSolver2S
                | SamplerKind::DpmSolver3S
                | SamplerKind::DpmPp2S
                | SamplerKind::DpmPp3S
        )
    }

    fn is_data_form(self) -> bool {
        matches!(self, SamplerKind::DpmPp2S | SamplerKind::DpmPp3S)
    }

    pub fn is_deis(self) -> bool {
        matches!(self, SamplerKind::Deis1 | SamplerKind::Deis2 | SamplerKind::Deis3)
    }

    /// The schedule each sampler is conventionally run with.
    pub fn default_schedule(self) -> Schedule {
        match self {
            SamplerKind::FlowEuler => Schedule::flow(),
            k if k.is_singlestep() || k.is_deis() => Schedule::vp_continuous_default(),
            _ => Schedule::ddpm_default(),
        }
    }

    pub fn default_grid_rule(self) -> GridRule {
        if self.is_deis() {
            GridRule::Quadratic
        } else {
            GridRule::Trailing
        }
    }
}

impl fmt::Display for SamplerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SamplerKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        SamplerKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| {
                let names: Vec<_> = SamplerKind::ALL.iter().map(|k| k.name()).collect();
                Error::Parameter(format!("unknown sampler '{s}', expected one of {}", names.join(", ")))
            })
    }
}

/// How singlestep solvers spend an evaluation budget that is not a multiple of the order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FinalGroup {
    /// Full groups, then one group of the remaining order.
    #[default]
    LowerOrder,
    /// The split used by the reference DPM-Solver implementation, which for
    /// third order ends on a second- and a first-order group.
    Library,
}

/// Integration of the DEIS kernels.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Quadrature {
    /// Adaptive double-exponential rule with the given relative tolerance.
    Adaptive { rtol: f64 },
    /// Left Riemann sum in time with `points` nodes per interval.
    LeftRiemann { points: usize },
}

impl Default for Quadrature {
    fn default() -> Self {
        Quadrature::Adaptive { rtol: 1e-10 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerOptions {
    /// First interior node as a fraction of the log-SNR step.
    pub r1: Option<f64>,
    /// Second interior node (third order only).
    pub r2: Option<f64>,
    pub final_group: FinalGroup,
    /// Explicit per-interval orders; overrides the uniform order.
    pub group_orders: Option<Vec<usize>>,
    /// Flip the sign of the higher-order correction terms of singlestep solvers.
    pub negate_correction: bool,
    pub quadrature: Quadrature,
}

impl Default for SamplerOptions {
    fn default() -> Self {
        SamplerOptions {
            r1: None,
            r2: None,
            final_group: FinalGroup::LowerOrder,
            group_orders: None,
            negate_correction: false,
            quadrature: Quadrature::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SamplerSpec {
    pub kind: SamplerKind,
    pub options: SamplerOptions,
}

impl From<SamplerKind> for SamplerSpec {
    fn from(kind: SamplerKind) -> Self {
        SamplerSpec::new(kind)
    }
}

impl SamplerSpec {
    pub fn new(kind: SamplerKind) -> Self {
        SamplerSpec {
            kind,
            options: SamplerOptions::default(),
        }
    }

    pub fn with_options(kind: SamplerKind, options: SamplerOptions) -> Result<Self> {
        let spec = SamplerSpec { kind, options };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let o = &self.options;
        for r in [o.r1, o.r2].into_iter().flatten() {
            if !(r > 0.0 && r < 1.0) {
                return param(format!("interior node ratio {r} must lie in (0, 1)"));
            }
        }
        if let (Some(r1), Some(r2)) = (o.r1, o.r2) {
            if r1 >= r2 {
                return param("need r1 < r2");
            }
        }
        if let Some(g) = &o.group_orders {
            if !self.kind.is_singlestep() {
                return param("group orders apply to singlestep solvers only");
            }
            if g.iter().any(|&k| k == 0 || k > self.kind.order()) {
                return param(format!("group orders must lie in 1..={}", self.kind.order()));
            }
        }
        if let Quadrature::Adaptive { rtol } = o.quadrature {
            if !(rtol > 0.0) {
                return param("quadrature tolerance must be positive");
            }
        }
        if let Quadrature::LeftRiemann { points } = o.quadrature {
            if points == 0 {
                return param("quadrature needs at least one point");
            }
        }
        Ok(())
    }

    /// Orders of the singlestep groups that spend exactly `nfe` evaluations.
    pub fn group_orders_for(&self, nfe: usize) -> Result<Vec<usize>> {
        if nfe == 0 {
            return param("need at least one model evaluation");
        }
        let k = self.kind.order();
        if !self.kind.is_singlestep() {
            return Ok(vec![1; nfe]);
        }
        Ok(match self.options.final_group {
            FinalGroup::LowerOrder => {
                let mut v = vec![k; nfe / k];
                if nfe % k != 0 {
                    v.push(nfe % k);
                }
                v
            }
            FinalGroup::Library => match (k, nfe % k) {
                (3, 0) if nfe >= 3 => {
                    let mut v = vec![3; nfe / 3 - 1];
                    v.extend([2, 1]);
                    v
                }
                (_, 0) => vec![k; nfe / k],
                (_, r) => {
                    let mut v = vec![k; nfe / k];
                    v.push(r);
                    v
                }
            },
        })
    }

    /// Sets group orders for an evaluation budget and returns the number of
    /// grid intervals the run needs.
    pub fn plan_nfe(&mut self, nfe: usize) -> Result<usize> {
        if self.kind.is_singlestep() {
            let g = self.group_orders_for(nfe)?;
            let n = g.len();
            self.options.group_orders = Some(g);
            Ok(n)
        } else {
            if nfe == 0 {
                return param("need at least one model evaluation");
            }
            Ok(nfe)
        }
    }

    fn r1(&self, order: usize) -> f64 {
        self.options
            .r1
            .unwrap_or(if order == 3 { 1.0 / 3.0 } else { 0.5 })
    }

    fn r2(&self) -> f64 {
        self.options.r2.unwrap_or(2.0 / 3.0)
    }
}

/// Per-evaluation states of a run plus its output.
#[derive(Debug, Clone)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub inputs: Vec<Element>,
    pub output: Element,
}

struct Runner<'a> {
    ctx: &'a mut dyn RunContext,
    times: Vec<f64>,
    inputs: Vec<Element>,
}

impl Runner<'_> {
    fn model(&mut self, t: f64, x: &Element) -> Result<Element> {
        self.times.push(t);
        self.inputs.push(x.clone());
        self.ctx.apply_model(t, x)
    }
}

/// Runs a sampler over `grid` in whatever representation `ctx` provides.
pub fn run_native(
    spec: &SamplerSpec,
    s: &Schedule,
    grid: &TimeGrid,
    ctx: &mut dyn RunContext,
) -> Result<Trajectory> {
    spec.validate()?;
    if grid.is_empty() {
        return Err(Error::Grid("empty grid".into()));
    }
    let kind = spec.kind;
    match kind {
        SamplerKind::FlowEuler => {
            if s.family() != Family::Flow {
                return Err(Error::Unsupported("flow-euler needs the flow schedule".into()));
            }
        }
        _ => require_vp(s, kind.name())?,
    }
    let mut r = Runner {
        ctx,
        times: vec![],
        inputs: vec![],
    };
    let x0 = r.ctx.fresh_noise(NoiseId::new(0, 0))?;
    let pts = grid.with_terminal();
    let output = match kind {
        SamplerKind::Ddpm | SamplerKind::Ddim | SamplerKind::FlowEuler => {
            let mut x = x0;
            for k in 0..grid.len() {
                let (t, tp) = (pts[k], pts[k + 1]);
                let y = r.model(t, &x)?;
                let c = match kind {
                    SamplerKind::Ddpm => ddpm_step_coeffs(s, t, tp)?,
                    SamplerKind::Ddim => ddim_step_coeffs(s, t, tp)?,
                    _ => flow_euler_step_coeffs(t, tp)?,
                };
                x = if c.g != 0.0 {
                    let z = r.ctx.fresh_noise(NoiseId::new(k as u32 + 1, 0))?;
                    lin_combine(&[(c.d, &x), (c.e, &y), (c.g, &z)])?
                } else {
                    lin_combine(&[(c.d, &x), (c.e, &y)])?
                };
            }
            x
        }
        SamplerKind::SdeEuler | SamplerKind::OdeEuler => {
            let mut x = x0;
            for k in 0..grid.len() {
                let (t, tp) = (pts[k], pts[k + 1]);
                let y = r.model(t, &x)?;
                x = if kind == SamplerKind::SdeEuler {
                    let z = r.ctx.fresh_noise(NoiseId::new(k as u32 + 1, 0))?;
                    sde_euler_step(s, t, tp, &x, &y, &z)?
                } else {
                    ode_euler_step(s, t, tp, &x, &y)?
                };
            }
            x
        }
        k if k.is_singlestep() => {
            let orders = match &spec.options.group_orders {
                Some(g) => {
                    if g.len() != grid.len() {
                        return Err(Error::Grid(format!(
                            "{} group orders for {} grid intervals",
                            g.len(),
                            grid.len()
                        )));
                    }
                    g.clone()
                }
                None => vec![k.order(); grid.len()],
            };
            let mut x = x0;
            for (i, &order) in orders.iter().enumerate() {
                x = singlestep_group(spec, s, order, pts[i], pts[i + 1], &x, &mut r)?;
            }
            x
        }
        _ => {
            let steps = deis_coeffs(kind.order(), s, grid, spec.options.quadrature)?;
            let mut x = x0;
            let mut eps_hist: Vec<Element> = vec![];
            for (k, st) in steps.iter().enumerate() {
                let t = pts[k];
                let y = r.model(t, &x)?;
                eps_hist.push(eps_of(s, t, &x, &y)?);
                let mut terms: Vec<(f64, &Element)> = vec![(st.carry, &x)];
                for (j, w) in st.weights.iter().enumerate() {
                    terms.push((*w, &eps_hist[eps_hist.len() - 1 - j]));
                }
                x = lin_combine(&terms)?;
            }
            x
        }
    };
    Ok(Trajectory {
        times: r.times,
        inputs: r.inputs,
        output,
    })
}

/// `(x - c0 y) / c1`.
fn eps_of(s: &Schedule, t: f64, x: &Element, y: &Element) -> Result<Element> {
    let (c0, c1) = s.mixing_coeffs(t)?;
    if c1 == 0.0 {
        return Err(Error::Numeric(format!("noise prediction undefined at t = {t}")));
    }
    lin_combine(&[(1.0 / c1, x), (-c0 / c1, y)])
}

/// One singlestep group from `ts` to `tt` with `order` model evaluations.
fn singlestep_group(
    spec: &SamplerSpec,
    s: &Schedule,
    order: usize,
    ts: f64,
    tt: f64,
    x: &Element,
    r: &mut Runner<'_>,
) -> Result<Element> {
    let (a_s, sg_s) = s.mixing_coeffs(ts)?;
    let (a_t, sg_t) = s.mixing_coeffs(tt)?;
    // a group that lands on clean data has infinite log-SNR step and can only be first order
    let order = if sg_t == 0.0 { 1 } else { order };
    let l_s = s.lambda(ts)?;
    let l_t = if sg_t == 0.0 { f64::INFINITY } else { s.lambda(tt)? };
    let h = l_t - l_s;
    let sign = if spec.options.negate_correction { -1.0 } else { 1.0 };
    let data = spec.kind.is_data_form();
    let la_s = s.log_alpha(ts);

    let ys = r.model(ts, x)?;
    if data {
        // x_t = sigma_t/sigma_s x - alpha_t expm1(-h) y_s + corrections
        let base = |tu: f64, hu: f64| -> Result<(f64, f64)> {
            let (au, su) = s.mixing_coeffs(tu)?;
            Ok((su / sg_s, -au * (-hu).exp_m1()))
        };
        match order {
            1 => {
                let (ratio, w) = base(tt, h)?;
                lin_combine(&[(ratio, x), (w, &ys)])
            }
            2 => {
                let r1 = spec.r1(2);
                let s1 = s.inverse_lambda(l_s + r1 * h)?;
                let (ratio1, w1) = base(s1, r1 * h)?;
                let x1 = lin_combine(&[(ratio1, x), (w1, &ys)])?;
                let y1 = r.model(s1, &x1)?;
                let (ratio, w) = base(tt, h)?;
                // - (0.5/r1) alpha_t expm1(-h) (y1 - ys)
                let c = sign * 0.5 / r1 * w;
                lin_combine(&[(ratio, x), (w - c, &ys), (c, &y1)])
            }
            _ => {
                let (r1, r2) = (spec.r1(3), spec.r2());
                let s1 = s.inverse_lambda(l_s + r1 * h)?;
                let s2 = s.inverse_lambda(l_s + r2 * h)?;
                let (ratio1, w1) = base(s1, r1 * h)?;
                let x1 = lin_combine(&[(ratio1, x), (w1, &ys)])?;
                let y1 = r.model(s1, &x1)?;
                let (ratio2, w2) = base(s2, r2 * h)?;
                let (a2, _) = s.mixing_coeffs(s2)?;
                let phi22 = (-r2 * h).exp_m1() / (r2 * h) + 1.0;
                let c2 = sign * r2 / r1 * a2 * phi22;
                let x2 = lin_combine(&[(ratio2, x), (w2 - c2, &ys), (c2, &y1)])?;
                let y2 = r.model(s2, &x2)?;
                let (ratio, w) = base(tt, h)?;
                let phi2 = (-h).exp_m1() / h + 1.0;
                let c = sign / r2 * a_t * phi2;
                lin_combine(&[(ratio, x), (w - c, &ys), (c, &y2)])
            }
        }
    } else {
        // noise form; sigma_u expm1(h_u) is written as alpha_u sigma_s / alpha_s - sigma_u
        let es = eps_of(s, ts, x, &ys)?;
        let base = |tu: f64| -> Result<(f64, f64)> {
            let (au, su) = s.mixing_coeffs(tu)?;
            Ok(((s.log_alpha(tu) - la_s).exp(), au * sg_s / a_s - su))
        };
        match order {
            1 => {
                let (ratio, w) = base(tt)?;
                lin_combine(&[(ratio, x), (-w, &es)])
            }
            2 => {
                let r1 = spec.r1(2);
                let s1 = s.inverse_lambda(l_s + r1 * h)?;
                let (ratio1, w1) = base(s1)?;
                let x1 = lin_combine(&[(ratio1, x), (-w1, &es)])?;
                let y1 = r.model(s1, &x1)?;
                let e1 = eps_of(s, s1, &x1, &y1)?;
                let (ratio, w) = base(tt)?;
                let c = sign * 0.5 / r1 * w;
                lin_combine(&[(ratio, x), (-w + c, &es), (-c, &e1)])
            }
            _ => {
                let (r1, r2) = (spec.r1(3), spec.r2());
                let s1 = s.inverse_lambda(l_s + r1 * h)?;
                let s2 = s.inverse_lambda(l_s + r2 * h)?;
                let (ratio1, w1) = base(s1)?;
                let x1 = lin_combine(&[(ratio1, x), (-w1, &es)])?;
                let y1 = r.model(s1, &x1)?;
                let e1 = eps_of(s, s1, &x1, &y1)?;
                let (ratio2, w2) = base(s2)?;
                let (_, sg2) = s.mixing_coeffs(s2)?;
                let phi22 = (r2 * h).exp_m1() / (r2 * h) - 1.0;
                let c2 = sign * r2 / r1 * sg2 * phi22;
                let x2 = lin_combine(&[(ratio2, x), (-w2 + c2, &es), (-c2, &e1)])?;
                let y2 = r.model(s2, &x2)?;
                let e2 = eps_of(s, s2, &x2, &y2)?;
                let (ratio, w) = base(tt)?;
                let phi2 = h.exp_m1() / h - 1.0;
                let c = sign / r2 * sg_t * phi2;
                lin_combine(&[(ratio, x), (-w + c, &es), (-c, &e2)])
            }
        }
    }
}

/// Exponential-integrator step of DEIS: `x' = carry * x + sum_j weights[j] * eps_j`,
/// where `eps_0` is the newest noise prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct DeisStep {
    pub t: f64,
    pub t_next: f64,
    pub carry: f64,
    pub weights: Vec<f64>,
}

/// Lagrange basis polynomial `j` over `nodes`, evaluated at `x`.
fn lagrange(nodes: &[f64], j: usize, x: f64) -> f64 {
    nodes
        .iter()
        .enumerate()
        .filter(|&(m, _)| m != j)
        .map(|(_, &tm)| (x - tm) / (nodes[j] - tm))
        .product()
}

/// `d(sigma/alpha)/dt`.
fn rho_rate(s: &Schedule, t: f64) -> Result<f64> {
    let (a, sg) = s.mixing_coeffs(t)?;
    let dla = match s.spec() {
        ScheduleSpec::VpContinuous {
            beta_min, beta_max, ..
        } => -0.5 * (beta_min + t * (beta_max - beta_min)),
        _ => {
            // log alpha is piecewise linear between integer steps; take the
            // segment below t
            let hi = t.ceil().max(0.0);
            (s.log_alpha(hi) - s.log_alpha(hi - 1.0)) / 1.0
        }
    };
    Ok(-dla / (a * sg))
}

/// Time at which `sigma/alpha = rho`.
fn time_of_rho(s: &Schedule, rho: f64) -> Result<f64> {
    if rho <= 0.0 {
        return Ok(s.terminal_time());
    }
    s.inverse_lambda(-rho.ln())
}

/// Adams-Bashforth weights of DEIS with polynomial degree `order` (0 gives DDIM).
pub fn deis_coeffs(order: usize, s: &Schedule, grid: &TimeGrid, quad: Quadrature) -> Result<Vec<DeisStep>> {
    require_vp(s, "DEIS")?;
    if order > 3 {
        return param(format!("DEIS order {order} is not in 0..=3"));
    }
    let pts = grid.with_terminal();
    let mut out = Vec::with_capacity(grid.len());
    for k in 0..grid.len() {
        let (t, tn) = (pts[k], pts[k + 1]);
        let nodes: Vec<f64> = (0..=order.min(k)).map(|j| pts[k - j]).collect();
        let (a_t, sg_t) = s.mixing_coeffs(t)?;
        let (a_n, sg_n) = s.mixing_coeffs(tn)?;
        let (rho_t, rho_n) = (sg_t / a_t, sg_n / a_n);
        let mut weights = Vec::with_capacity(nodes.len());
        for j in 0..nodes.len() {
            let c = match quad {
                Quadrature::Adaptive { rtol } => {
                    let fail = std::cell::RefCell::new(None);
                    let f = |rho: f64| match time_of_rho(s, rho) {
                        Ok(tau) => lagrange(&nodes, j, tau),
                        Err(e) => {
                            fail.borrow_mut().get_or_insert(e);
                            0.0
                        }
                    };
                    let target = rtol * (rho_t - rho_n).abs().max(f64::MIN_POSITIVE);
                    // rho decreases along the step
                    let res = quadrature::integrate(f, rho_n, rho_t, target);
                    if let Some(e) = fail.into_inner() {
                        return Err(e);
                    }
                    if !(res.integral.is_finite() && res.error_estimate <= 10.0 * target) {
                        return Err(Error::Numeric(format!(
                            "DEIS quadrature on [{tn}, {t}] basis {j}: estimate {} error {} (target {target})",
                            res.integral, res.error_estimate
                        )));
                    }
                    -res.integral
                }
                Quadrature::LeftRiemann { points } => {
                    let dt = (tn - t) / points as f64;
                    let mut acc = crate::affine::Neumaier::default();
                    for i in 0..points {
                        let tau = t + dt * i as f64;
                        acc.add(rho_rate(s, tau)? * lagrange(&nodes, j, tau) * dt);
                    }
                    acc.total()
                }
            };
            weights.push(a_n * c);
        }
        out.push(DeisStep {
            t,
            t_next: tn,
            carry: a_n / a_t,
            weights,
        });
    }
    Ok(out)
}
