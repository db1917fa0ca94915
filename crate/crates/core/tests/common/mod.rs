//! Shared checks for the integration tests and the acceptance report.
#![allow(dead_code)]

use std::collections::BTreeMap;
use std::time::Instant;

use nilab::affine::NoiseId;
use nilab::analysis::{degradation_table, DegradationReport};
use nilab::coeffmatrix::{equivalent_marginals, trace_nfe, CoefficientMatrix};
use nilab::engine::{run_matrix, run_native_batch, RunConfig};
use nilab::guidance::{classify_matrix, decompose_row, decompose_row_with, FoldOrder, Orientation, RowSummary};
use nilab::oracles::{
    gmm_marginal_logdensity, posterior_mean_dataset, posterior_mean_gmm, posterior_weights,
    score_from_x0hat, Component, Dataset, GaussianMixture, GmmPredictor,
};
use nilab::presets;
use nilab::samplers::{SamplerKind, SamplerOptions, SamplerSpec};
use nilab::schedule::{make_grid, GridRule, Schedule};
use nilab::search::{optimize_matrix, Objective, SearchOptions, SearchSpace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    fn new(pass: bool, detail: String) -> Self {
        Outcome { pass, detail }
    }
}

/// Runs `f` and appends the wall time to its detail.
pub fn timed(f: impl FnOnce() -> Outcome) -> Outcome {
    let start = Instant::now();
    let mut o = f();
    o.detail.push_str(&format!(" [{:.2?}]", start.elapsed()));
    o
}

fn round3_sign(x: f64) -> i8 {
    let r = (x * 1000.0).round();
    if r > 0.0 {
        1
    } else if r < 0.0 {
        -1
    } else {
        0
    }
}

#[derive(Debug, Default)]
pub struct Comparison {
    pub max_err: f64,
    pub sign_mismatches: Vec<(usize, usize, f64, f64)>,
    /// Entries above the tolerance: `(row, col, traced, printed)`.
    pub residuals: Vec<(usize, usize, f64, f64)>,
}

/// Compares traced signal rows with the printed ones stored in a preset.
pub fn compare_signal(traced: &CoefficientMatrix, printed: &CoefficientMatrix, tol: f64) -> Comparison {
    let mut c = Comparison::default();
    assert_eq!(traced.signal.len(), printed.signal.len(), "row count");
    for (k, (a, b)) in traced.signal.iter().zip(&printed.signal).enumerate() {
        assert_eq!(a.len(), b.len(), "column count");
        for (j, (&x, &y)) in a.iter().zip(b).enumerate() {
            let e = (x - y).abs();
            c.max_err = c.max_err.max(e);
            if round3_sign(x) != round3_sign(y) {
                c.sign_mismatches.push((k, j, x, y));
            }
            if e > tol {
                c.residuals.push((k, j, x, y));
            }
        }
    }
    c
}

/// Max error over noise weights matched by noise id.
pub fn compare_noise(traced: &CoefficientMatrix, printed: &CoefficientMatrix) -> f64 {
    let t = traced.noise.as_ref().expect("traced noise");
    let p = printed.noise.as_ref().expect("printed noise");
    let col: BTreeMap<NoiseId, usize> = t.ids.iter().enumerate().map(|(i, id)| (*id, i)).collect();
    let mut err: f64 = 0.0;
    for (k, prow) in p.rows.iter().enumerate() {
        let trow = &t.rows[k];
        for (pi, id) in p.ids.iter().enumerate() {
            let tv = col.get(id).map(|&i| trow[i]).unwrap_or(0.0);
            err = err.max((tv - prow[pi]).abs());
        }
        // traced draws missing from the printed table must be zero there
        for (id, &i) in &col {
            if !p.ids.contains(id) {
                err = err.max(trow[i].abs());
            }
        }
    }
    err
}

pub fn printed_sums() -> serde_json::Value {
    serde_json::from_str(include_str!("../data/printed_row_sums.json")).expect("row sums json")
}

fn printed_column(v: &serde_json::Value, name: &str, col: &str) -> Option<Vec<f64>> {
    v.get(name)?.get(col)?.as_array().map(|a| a.iter().map(|x| x.as_f64().unwrap()).collect())
}

pub struct Golden {
    pub preset: &'static str,
    pub spec: SamplerSpec,
    pub schedule: Schedule,
    pub rule: GridRule,
}

pub fn first_order_goldens() -> Vec<Golden> {
    vec![
        Golden {
            preset: "ddpm-18",
            spec: SamplerKind::Ddpm.into(),
            schedule: Schedule::ddpm_default(),
            rule: GridRule::Trailing,
        },
        Golden {
            preset: "ddim-18",
            spec: SamplerKind::Ddim.into(),
            schedule: Schedule::ddpm_default(),
            rule: GridRule::Trailing,
        },
        Golden {
            preset: "flow-euler-18",
            spec: SamplerKind::FlowEuler.into(),
            schedule: Schedule::flow(),
            rule: GridRule::Trailing,
        },
    ]
}

pub fn high_order_goldens() -> Vec<Golden> {
    let cont = Schedule::vp_continuous_default();
    let negated = SamplerOptions {
        negate_correction: true,
        ..SamplerOptions::default()
    };
    vec![
        Golden {
            preset: "deis-3-18",
            spec: SamplerKind::Deis3.into(),
            schedule: cont.clone(),
            rule: GridRule::Quadratic,
        },
        Golden {
            preset: "dpm-solver-2s-18",
            spec: SamplerKind::DpmSolver2S.into(),
            schedule: cont.clone(),
            rule: GridRule::Trailing,
        },
        Golden {
            preset: "dpm-solver-3s-18",
            spec: SamplerKind::DpmSolver3S.into(),
            schedule: cont.clone(),
            rule: GridRule::Trailing,
        },
        Golden {
            preset: "dpmpp-2s-18",
            spec: SamplerKind::DpmPp2S.into(),
            schedule: cont.clone(),
            rule: GridRule::Trailing,
        },
        Golden {
            preset: "dpmpp-3s-18",
            spec: SamplerSpec::with_options(SamplerKind::DpmPp3S, negated).unwrap(),
            schedule: cont,
            rule: GridRule::Trailing,
        },
    ]
}

pub fn trace_golden(g: &Golden) -> CoefficientMatrix {
    trace_nfe(&g.spec, &g.schedule, 18, g.rule).expect("trace")
}

pub fn criterion_1() -> Outcome {
    let sums = printed_sums();
    let mut pass = true;
    let mut parts = vec![];
    for g in first_order_goldens() {
        let start = Instant::now();
        let m = trace_golden(&g);
        let elapsed = start.elapsed();
        let p = presets::get(g.preset).unwrap();
        let c = compare_signal(&m, &p, 5e-4 + 1e-9);
        let mut err = c.max_err;
        if g.preset == "ddpm-18" {
            err = err.max(compare_noise(&m, &p));
        }
        let rep = equivalent_marginals(&m).unwrap();
        let mut sum_err: f64 = 0.0;
        if let Some(s) = printed_column(&sums, g.preset, "sum") {
            for (i, v) in s.iter().enumerate() {
                sum_err = sum_err.max((rep.rows[i + 1].equivalent_signal - v).abs());
            }
        }
        if let Some(s) = printed_column(&sums, g.preset, "norm") {
            for (i, v) in s.iter().enumerate() {
                sum_err = sum_err.max((rep.rows[i + 1].equivalent_noise - v).abs());
            }
        }
        let ok = err <= 5e-4 + 1e-9 && sum_err <= 2e-3 && elapsed.as_secs_f64() < 1.0;
        pass &= ok;
        parts.push(format!("{} entry {:.1e} sums {:.1e}", g.preset, err, sum_err));
    }
    Outcome::new(pass, parts.join("; "))
}

pub fn criterion_2() -> Outcome {
    let sums = printed_sums();
    let start = Instant::now();
    let mut pass = true;
    let mut parts = vec![];
    for g in high_order_goldens() {
        let m = trace_golden(&g);
        let p = presets::get(g.preset).unwrap();
        let c = compare_signal(&m, &p, 5e-3);
        let mut sum_err: f64 = 0.0;
        if let Some(s) = printed_column(&sums, g.preset, "sum") {
            let rep = equivalent_marginals(&m).unwrap();
            for (i, v) in s.iter().enumerate() {
                sum_err = sum_err.max((rep.rows[i + 1].equivalent_signal - v).abs());
            }
        }
        let ok = c.sign_mismatches.is_empty() && c.residuals.is_empty();
        pass &= ok;
        let mut d = format!(
            "{} max {:.1e} signs {} over-tol {} sums {:.1e}",
            g.preset,
            c.max_err,
            c.sign_mismatches.len(),
            c.residuals.len(),
            sum_err
        );
        for (k, j, x, y) in c.residuals.iter().chain(&c.sign_mismatches).take(4) {
            d.push_str(&format!(" ({k},{j}: traced {x:.4} printed {y:.3})"));
        }
        parts.push(d);
    }
    pass &= start.elapsed().as_secs_f64() < 10.0;
    Outcome::new(pass, parts.join("; "))
}

pub fn trend(kind: SamplerKind, counts: &[usize]) -> Vec<f64> {
    let spec = SamplerSpec::new(kind);
    let s = kind.default_schedule();
    nilab::coeffmatrix::deviation_trend(&spec, &s, counts, GridRule::Trailing).unwrap()
}

fn sci(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:.2e}")).collect();
    format!("[{}]", parts.join(", "))
}

fn strictly_decreasing(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[1] < w[0])
}

pub fn criterion_3() -> Outcome {
    let mut pass = true;
    let c0_t = Schedule::ddpm_default().mixing_coeffs(999.0).unwrap().0;
    let mut parts = vec![format!("c0(999) = {c0_t:.3e}")];
    for kind in [SamplerKind::Ddpm, SamplerKind::Ddim] {
        let v = trend(kind, &[18, 100, 500]);
        pass &= strictly_decreasing(&v);
        parts.push(format!("{kind} {}", sci(&v)));
    }
    let v = trend(SamplerKind::FlowEuler, &[18, 100, 500]);
    pass &= v.iter().all(|d| *d <= 1e-12);
    parts.push(format!("flow-euler {}", sci(&v)));
    for kind in [SamplerKind::SdeEuler, SamplerKind::OdeEuler] {
        let v = trend(kind, &[18, 200]);
        pass &= strictly_decreasing(&v);
        parts.push(format!("{kind} {}", sci(&v)));
    }
    Outcome::new(pass, parts.join("; "))
}

/// A 16-dimensional mixture with well separated, unequal components.
pub fn mixture_16d() -> GaussianMixture {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let comps = (0..6)
        .map(|i| Component {
            weight: 1.0 + i as f64,
            mean: (0..16).map(|_| rng.gen_range(-1.5..1.5)).collect(),
            variance: 0.05 + 0.05 * i as f64,
            label: Some(i),
        })
        .collect();
    GaussianMixture::new(comps).unwrap()
}

/// Largest relative gap between executor and native outputs for `kind`.
pub fn equivalence_gap(kind: SamplerKind, g: &GaussianMixture, samples: usize) -> f64 {
    let spec = SamplerSpec::new(kind);
    let s = kind.default_schedule();
    let mut planned = spec.clone();
    let n = planned.plan_nfe(18).unwrap();
    let grid = make_grid(&s, n, kind.default_grid_rule()).unwrap();
    let m = nilab::coeffmatrix::trace_sampler(&planned, &s, &grid).unwrap();
    let p = GmmPredictor {
        mixture: g.clone(),
        schedule: s.clone(),
    };
    let a = run_matrix(&RunConfig::new(&m, &p, samples, 42)).unwrap();
    let b = run_native_batch(&planned, &s, &grid, &p, 42, samples).unwrap();
    let mut gap: f64 = 0.0;
    for (x, y) in a.samples.iter().zip(&b) {
        let scale = y.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-300);
        let diff = x.iter().zip(y).map(|(u, v)| (u - v).powi(2)).sum::<f64>().sqrt();
        gap = gap.max(diff / scale);
    }
    gap
}

pub fn criterion_4() -> Outcome {
    let g = mixture_16d();
    let mut pass = true;
    let mut parts = vec![];
    for kind in SamplerKind::ALL {
        let gap = equivalence_gap(kind, &g, 8);
        pass &= gap <= 1e-9;
        parts.push(format!("{kind} {gap:.0e}"));
    }
    Outcome::new(pass, parts.join(", "))
}

fn brute_weights(ds: &Dataset, s: &Schedule, t: f64, x: &[f64]) -> Vec<f64> {
    let (c0, c1) = s.mixing_coeffs(t).unwrap();
    // exact Gaussian likelihoods without max subtraction; fine at moderate noise
    let l: Vec<f64> = ds
        .atoms()
        .map(|a| {
            let d2: f64 = a.iter().zip(x).map(|(ai, xi)| (xi - c0 * ai).powi(2)).sum();
            (-d2 / (2.0 * c1 * c1)).exp()
        })
        .collect();
    let z: f64 = l.iter().sum();
    l.iter().map(|v| v / z).collect()
}

pub fn oracle_brute_force_gap(cases: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let s = Schedule::flow();
    let mut gap: f64 = 0.0;
    for _ in 0..cases {
        let d = rng.gen_range(1..=2);
        let n = rng.gen_range(1..=64);
        let ds = Dataset::new(d, (0..n * d).map(|_| rng.gen_range(-1.0..1.0)).collect(), None).unwrap();
        let t = rng.gen_range(0.3..0.95);
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let w = posterior_weights(&ds, &s, t, &x).unwrap().weights;
        let b = brute_weights(&ds, &s, t, &x);
        let m = posterior_mean_dataset(&ds, &s, t, &x).unwrap();
        for (u, v) in w.iter().zip(&b) {
            gap = gap.max((u - v).abs());
        }
        for k in 0..d {
            let bm: f64 = b.iter().zip(ds.atoms()).map(|(wi, a)| wi * a[k]).sum();
            gap = gap.max((m[k] - bm).abs());
        }
    }
    gap
}

/// Posterior mean of a 1D mixture by dense trapezoid quadrature over x0.
pub fn gmm_quadrature_gap() -> f64 {
    let g = GaussianMixture::new(vec![
        Component {
            weight: 0.3,
            mean: vec![-1.0],
            variance: 0.04,
            label: None,
        },
        Component {
            weight: 0.7,
            mean: vec![0.8],
            variance: 0.25,
            label: None,
        },
    ])
    .unwrap();
    let s = Schedule::ddpm_default();
    let mut gap: f64 = 0.0;
    for (t, x) in [(100.0, 0.3), (400.0, -0.7), (700.0, 1.2), (900.0, 0.0)] {
        let (c0, c1) = s.mixing_coeffs(t).unwrap();
        let n = 200_000;
        let (lo, hi) = (-6.0, 6.0);
        let h = (hi - lo) / n as f64;
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..=n {
            let z: f64 = lo + h * i as f64;
            let prior: f64 = g
                .components()
                .iter()
                .map(|c| c.weight * (-(z - c.mean[0]).powi(2) / (2.0 * c.variance)).exp() / c.variance.sqrt())
                .sum();
            let lik = (-(x - c0 * z).powi(2) / (2.0 * c1 * c1)).exp();
            let w = if i == 0 || i == n { 0.5 } else { 1.0 };
            num += w * z * prior * lik;
            den += w * prior * lik;
        }
        let m = posterior_mean_gmm(&g, &s, t, &[x]).unwrap();
        gap = gap.max((m[0] - num / den).abs());
    }
    gap
}

/// Relative error between the Tweedie score and central differences of the
/// marginal log density.
pub fn score_gap() -> f64 {
    let g = mixture_16d();
    let s = Schedule::ddpm_default();
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let mut gap: f64 = 0.0;
    for t in [50.0, 300.0, 600.0, 900.0] {
        let x: Vec<f64> = (0..16).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let x0 = posterior_mean_gmm(&g, &s, t, &x).unwrap();
        let score = score_from_x0hat(&s, t, &x, &x0).unwrap();
        let h = 1e-5;
        let fd: Vec<f64> = (0..16)
            .map(|i| {
                let mut a = x.clone();
                let mut b = x.clone();
                a[i] += h;
                b[i] -= h;
                (gmm_marginal_logdensity(&g, &s, t, &a).unwrap() - gmm_marginal_logdensity(&g, &s, t, &b).unwrap())
                    / (2.0 * h)
            })
            .collect();
        let norm = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
        let diff = fd.iter().zip(&score).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        gap = gap.max(diff / norm);
    }
    gap
}

pub fn criterion_5() -> Outcome {
    let a = oracle_brute_force_gap(300, 5);
    let b = gmm_quadrature_gap();
    let c = score_gap();
    Outcome::new(
        a <= 1e-12 && b <= 1e-6 && c <= 1e-4,
        format!("dataset vs brute force {a:.1e}, gmm vs quadrature {b:.1e}, score vs finite differences {c:.1e} (relative)"),
    )
}

pub const DEG_FRACTIONS: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];

pub fn degradation_reports(trials: usize, n: usize) -> Vec<(usize, DegradationReport)> {
    let families = [Schedule::ddpm_default(), Schedule::flow()];
    [8usize, 64, 512]
        .into_iter()
        .map(|d| {
            let ds = Dataset::standard_normal(n, d, &mut ChaCha8Rng::seed_from_u64(d as u64)).unwrap();
            let fr: Vec<f64> = if d == 64 { DEG_FRACTIONS.to_vec() } else { vec![0.5] };
            (d, degradation_table(&ds, &families, &fr, trials, 7, 0.9).unwrap())
        })
        .collect()
}

pub struct DegradationVerdict {
    pub monotone: bool,
    pub flow_above_vp: bool,
    pub dims_ordered: bool,
    pub detail: String,
}

pub fn judge_degradation(reports: &[(usize, DegradationReport)]) -> DegradationVerdict {
    let get = |d: usize| &reports.iter().find(|r| r.0 == d).unwrap().1;
    let r64 = get(64);
    let mut detail = String::new();
    let mut monotone = true;
    let mut flow_above_vp = true;
    for fam in ["vp", "flow"] {
        let rates: Vec<f64> = DEG_FRACTIONS.iter().map(|&f| r64.get(fam, f).unwrap().rate).collect();
        monotone &= rates.windows(2).all(|w| w[1] <= w[0] + 0.03);
        detail.push_str(&format!("d=64 {fam} {rates:.3?}; "));
    }
    for &f in &DEG_FRACTIONS {
        flow_above_vp &= r64.get("flow", f).unwrap().rate >= r64.get("vp", f).unwrap().rate;
    }
    let mut dims_ordered = true;
    for fam in ["vp", "flow"] {
        let p: Vec<_> = [8, 64, 512].iter().map(|&d| get(d).get(fam, 0.5).unwrap().clone()).collect();
        let ordered = p[2].rate >= p[1].rate
            && p[1].rate >= p[0].rate
            && p[2].ci_low > p[1].ci_high
            && p[1].ci_low > p[0].ci_high;
        dims_ordered &= ordered;
        detail.push_str(&format!(
            "t/T=0.5 {fam} d8 {:.3} [{:.3},{:.3}] d64 {:.3} [{:.3},{:.3}] d512 {:.3} [{:.3},{:.3}]; ",
            p[0].rate, p[0].ci_low, p[0].ci_high, p[1].rate, p[1].ci_low, p[1].ci_high, p[2].rate, p[2].ci_low, p[2].ci_high
        ));
    }
    DegradationVerdict {
        monotone,
        flow_above_vp,
        dims_ordered,
        detail,
    }
}

pub fn criterion_6() -> Outcome {
    let v = judge_degradation(&degradation_reports(1000, 10_000));
    Outcome::new(
        v.monotone && v.flow_above_vp && v.dims_ordered,
        format!(
            "(a) {} (b) {} (c) {}: {}",
            v.monotone, v.flow_above_vp, v.dims_ordered, v.detail
        ),
    )
}

pub fn reconstruct_all_presets() -> (f64, usize) {
    let mut worst: f64 = 0.0;
    let mut refolded = 0;
    for (name, _) in presets::list() {
        let m = presets::get(name).unwrap();
        for row in &m.signal {
            if row.iter().filter(|v| **v != 0.0).count() < 2 {
                continue;
            }
            let d = match decompose_row(row) {
                Ok(d) => d,
                Err(_) => {
                    refolded += 1;
                    decompose_row_with(row, FoldOrder::NewestFirst, Orientation::Dominant).unwrap()
                }
            };
            for (a, b) in d.unfold().iter().zip(row) {
                worst = worst.max((a - b).abs());
            }
        }
    }
    (worst, refolded)
}

pub fn summaries(name: &str) -> Vec<RowSummary> {
    classify_matrix(&presets::get(name).unwrap())
        .into_iter()
        .map(|r| r.summary)
        .collect()
}

pub fn criterion_7() -> Outcome {
    let all_mid = |n: &str| summaries(n).iter().all(|s| matches!(s, RowSummary::AllMid | RowSummary::NoGuidance));
    let fore_rows = |n: &str| {
        summaries(n)
            .iter()
            .filter(|s| matches!(s, RowSummary::HasFore | RowSummary::Mixed))
            .count()
    };
    let (worst, refolded) = reconstruct_all_presets();
    let a = all_mid("ddim-18");
    let b = all_mid("dpmpp-2s-18");
    let c = fore_rows("deis-3-18");
    let d = fore_rows("dpm-solver-3s-18");
    Outcome::new(
        a && b && c > 0 && d > 0 && worst <= 1e-12,
        format!(
            "ddim-18 all-mid {a}, dpmpp-2s-18 all-mid {b}, deis-3-18 fore rows {c}, dpm-solver-3s-18 fore rows {d}, \
             reconstruction {worst:.1e} ({refolded} rows refolded newest-first)"
        ),
    )
}

pub struct SearchOutcome {
    pub baseline: f64,
    pub initial: f64,
    pub best: f64,
    pub monotone: bool,
    pub max_violation: f64,
    pub evaluations: usize,
    pub nfe: usize,
}

pub fn run_search(budget: usize) -> SearchOutcome {
    let s = Schedule::ddpm_default();
    let mixture = GaussianMixture::ring(8, 1.0, 0.01).unwrap();
    let predictor = GmmPredictor {
        mixture: mixture.clone(),
        schedule: s.clone(),
    };
    let reference = mixture.sample(400, &mut ChaCha8Rng::seed_from_u64(11));
    let ddim = trace_nfe(&SamplerSpec::new(SamplerKind::Ddim), &s, 5, GridRule::Trailing).unwrap();
    let objective = Objective {
        predictor: &predictor,
        reference: &reference,
        samples: 400,
        seed: 5,
    };
    let baseline = objective.evaluate(&ddim).unwrap();
    let space = SearchSpace::banded(&ddim, 3, (-3.0, 3.0)).unwrap();
    let res = optimize_matrix(&space, &objective, budget, 0, SearchOptions::default()).unwrap();
    let mut prev = res.initial_objective;
    let mut monotone = true;
    for &v in &res.trace {
        monotone &= v <= prev;
        prev = v;
    }
    SearchOutcome {
        baseline,
        initial: res.initial_objective,
        best: res.best_objective(),
        monotone,
        max_violation: res.max_violation,
        evaluations: res.evaluations,
        nfe: res.best.n_eval(),
    }
}

pub fn criterion_8() -> Outcome {
    let r = run_search(2000);
    Outcome::new(
        r.best <= r.baseline && r.monotone && r.max_violation <= 1e-12 && r.nfe == 5,
        format!(
            "ddim-5 {:.5} -> best {:.5} ({:.0}% lower) after {} evals, start {:.5}, monotone {}, max row-sum violation {:.1e}",
            r.baseline,
            r.best,
            100.0 * (1.0 - r.best / r.baseline),
            r.evaluations,
            r.initial,
            r.monotone,
            r.max_violation
        ),
    )
}

pub mod props;

pub fn criterion_9() -> Outcome {
    let mut pass = true;
    let mut parts = vec![];
    for (name, f) in props::suites() {
        match f(1000) {
            Ok(()) => parts.push(format!("{name} ok")),
            Err(e) => {
                pass = false;
                parts.push(format!("{name} FAILED: {e}"));
            }
        }
    }
    Outcome::new(pass, format!("1000 cases each: {}", parts.join(", ")))
}
