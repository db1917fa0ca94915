//! Property suites, runnable from `#[test]`s and from the acceptance report.

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use nilab::coeffmatrix::trace_nfe;
use nilab::engine::{over_enhance, EnhanceMode};
use nilab::guidance::{decompose_row, StageClass};
use nilab::oracles::{posterior_weights, Dataset, DatasetPredictor};
use nilab::samplers::{ddim_step_coeffs, ddpm_step_coeffs, flow_euler_step_coeffs, SamplerKind, SamplerSpec};
use nilab::schedule::Schedule;

pub type PropResult = Result<(), String>;

fn runner(cases: u32) -> TestRunner {
    TestRunner::new(Config {
        cases,
        failure_persistence: None,
        ..Config::default()
    })
}

fn finish<T: std::fmt::Debug>(r: Result<(), proptest::test_runner::TestError<T>>) -> PropResult {
    r.map_err(|e| e.to_string())
}

fn schedules() -> Vec<Schedule> {
    vec![Schedule::ddpm_default(), Schedule::vp_continuous_default(), Schedule::flow()]
}

/// Mixing coefficients stay in [0, 1], satisfy the family identity, and move
/// monotonically with time.
pub fn schedule_constraints(cases: u32) -> PropResult {
    let mut r = runner(cases);
    finish(r.run(&(0usize..3, 0.0f64..1.0, 0.0f64..1.0), |(fi, u, v)| {
        let s = &schedules()[fi];
        let (lo, hi) = s.domain();
        let (a, b) = (lo + u * (hi - lo), lo + v * (hi - lo));
        let (t1, t2) = (a.min(b), a.max(b));
        let (c0, c1) = s.mixing_coeffs(t1).unwrap();
        let (d0, d1) = s.mixing_coeffs(t2).unwrap();
        for c in [c0, c1, d0, d1] {
            prop_assert!((0.0..=1.0).contains(&c));
        }
        if s.is_vp() {
            prop_assert!((c0 * c0 + c1 * c1 - 1.0).abs() <= 1e-12);
        } else {
            prop_assert!((c0 + c1 - 1.0).abs() <= 1e-12);
        }
        prop_assert!(d0 <= c0 && d1 >= c1);
        Ok(())
    }))
}

/// First-order steps map the time-`t` marginal onto the time-`t_prev` one.
pub fn step_marginals(cases: u32) -> PropResult {
    let mut r = runner(cases);
    finish(r.run(&(0usize..3, 0.0f64..1.0, 0.0f64..1.0), |(which, u, v)| {
        let (s, (lo, hi)) = match which {
            2 => (Schedule::flow(), (0.0, 1.0)),
            _ => {
                let s = Schedule::ddpm_default();
                let d = s.domain();
                (s, d)
            }
        };
        let mut t = lo + u.max(v) * (hi - lo);
        let mut tp = lo + u.min(v) * (hi - lo);
        if which != 2 {
            t = t.round().max(0.0);
            tp = tp.round();
        }
        prop_assume!(tp < t);
        let c = match which {
            0 => ddpm_step_coeffs(&s, t, tp),
            1 => ddim_step_coeffs(&s, t, tp),
            _ => flow_euler_step_coeffs(t, tp),
        }
        .unwrap();
        let (c0, c1) = s.mixing_coeffs(t).unwrap();
        let (p0, p1) = s.mixing_coeffs(tp).unwrap();
        prop_assert!((c.d * c0 + c.e - p0).abs() <= 1e-12, "signal {} vs {}", c.d * c0 + c.e, p0);
        if which == 2 {
            prop_assert!((c.d * c1 - p1).abs() <= 1e-12);
        } else {
            let noise = (c.d * c.d * c1 * c1 + c.g * c.g).sqrt();
            prop_assert!((noise - p1).abs() <= 1e-12, "noise {} vs {}", noise, p1);
        }
        Ok(())
    }))
}

/// Traced matrices only ever read outputs that already exist.
pub fn lower_triangular(cases: u32) -> PropResult {
    let mut r = runner(cases);
    finish(r.run(&(0usize..SamplerKind::ALL.len(), 1usize..24), |(ki, nfe)| {
        let kind = SamplerKind::ALL[ki];
        let s = kind.default_schedule();
        let m = trace_nfe(&SamplerSpec::new(kind), &s, nfe, kind.default_grid_rule());
        let m = match m {
            Ok(m) => m,
            Err(e) => return Err(TestCaseError::fail(format!("{kind} {nfe}: {e}"))),
        };
        prop_assert!(m.validate().is_ok());
        for (k, row) in m.signal.iter().enumerate() {
            prop_assert!(row[k.min(row.len())..].iter().all(|v| *v == 0.0));
        }
        let mut broken = m.clone();
        let last = broken.signal.len() - 2;
        broken.signal[last][last] = 0.5;
        prop_assert!(broken.validate().is_err());
        Ok(())
    }))
}

fn atoms_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..4, 2usize..12).prop_flat_map(|(d, n)| {
        (
            Just(d),
            prop::collection::vec(-3.0f64..3.0, n * d),
            prop::collection::vec(-3.0f64..3.0, d),
        )
    })
}

/// Vanishing noise gives a one-hot posterior on the nearest atom, vanishing
/// signal a uniform one.
pub fn softmax_limits(cases: u32) -> PropResult {
    let mut r = runner(cases);
    let s = Schedule::flow();
    finish(r.run(&atoms_strategy(), |(d, atoms, x)| {
        let ds = Dataset::new(d, atoms, None).unwrap();
        let n = ds.len();
        let mut dist: Vec<(f64, usize)> = ds
            .atoms()
            .enumerate()
            .map(|(i, a)| (a.iter().zip(&x).map(|(u, v)| (u - v).powi(2)).sum::<f64>(), i))
            .collect();
        dist.sort_by(|a, b| a.0.total_cmp(&b.0));
        prop_assume!(dist[1].0 - dist[0].0 > 1e-3);
        let w = posterior_weights(&ds, &s, 1e-6, &x).unwrap();
        prop_assert_eq!(w.argmax().0, dist[0].1);
        prop_assert!((w.weights[dist[0].1] - 1.0).abs() <= 1e-12);
        let w = posterior_weights(&ds, &s, 1.0 - 1e-12, &x).unwrap();
        for v in &w.weights {
            prop_assert!((v - 1.0 / n as f64).abs() <= 1e-9);
        }
        let sum: f64 = w.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() <= 1e-12);
        Ok(())
    }))
}

/// Distinct atoms on a half-unit lattice, so the noise at `t = 0` is far
/// below their spacing.
fn lattice_strategy() -> impl Strategy<Value = (usize, Vec<f64>, Vec<f64>)> {
    (1usize..4, 2usize..12).prop_flat_map(|(d, n)| {
        (
            Just(d),
            prop::collection::btree_set(prop::collection::vec(-6i32..=6, d), n),
            prop::collection::vec(-3.0f64..3.0, d),
        )
            .prop_map(|(d, pts, x)| {
                let atoms = pts.into_iter().flatten().map(|v| 0.5 * v as f64).collect();
                (d, atoms, x)
            })
    })
}

/// Dry over-enhancement at low noise lands on an atom and stays there.
pub fn over_enhance_fixed_point(cases: u32) -> PropResult {
    let mut r = runner(cases);
    let s = Schedule::ddpm_default();
    finish(r.run(&lattice_strategy(), |(d, atoms, x)| {
        let ds = Dataset::new(d, atoms, None).unwrap();
        let pred = DatasetPredictor {
            dataset: ds.clone(),
            schedule: s.clone(),
        };
        let seq = over_enhance(&pred, &s, 0.0, &x, 6, EnhanceMode::Dry, 0).unwrap();
        let at_atom = |v: &[f64]| ds.atoms().any(|a| a.iter().zip(v).all(|(p, q)| (p - q).abs() <= 1e-9));
        prop_assert!(at_atom(&seq[3]), "not at an atom after 3 iterations: {:?}", &seq[3]);
        for w in seq[3..].windows(2) {
            for (p, q) in w[0].iter().zip(&w[1]) {
                prop_assert!((p - q).abs() <= 1e-12);
            }
        }
        Ok(())
    }))
}

/// Unfolding reproduces the row, and the oldest-first fold is all-Mid
/// exactly when every nonzero weight has the same sign (for rows with a
/// positive total: when every weight is non-negative).
pub fn guidance_sign_theorem(cases: u32) -> PropResult {
    let mut r = runner(cases);
    let coeff = prop_oneof![Just(0.0), -1.0f64..1.0, 0.01f64..1.0];
    finish(r.run(&prop::collection::vec(coeff, 2..=6), |row| {
        let Ok(dec) = decompose_row(&row) else {
            return Ok(());
        };
        for (a, b) in dec.unfold().iter().zip(&row) {
            prop_assert!((a - b).abs() <= 1e-12 * (1.0 + b.abs()) * 1e3);
        }
        let all_mid = dec.classes().iter().all(|c| *c == StageClass::Mid);
        let same_sign = row.iter().all(|v| *v >= 0.0) || row.iter().all(|v| *v <= 0.0);
        let degenerate = dec.classes().contains(&StageClass::Degenerate);
        if !degenerate {
            prop_assert_eq!(all_mid, same_sign, "row {:?} classes {:?}", row, dec.classes());
        }
        Ok(())
    }))
}

pub fn suites() -> Vec<(&'static str, fn(u32) -> PropResult)> {
    vec![
        ("schedule family constraints", schedule_constraints),
        ("step marginal preservation", step_marginals),
        ("lower-triangularity", lower_triangular),
        ("softmax limits", softmax_limits),
        ("over_enhance dry fixed point", over_enhance_fixed_point),
        ("guidance sign theorem", guidance_sign_theorem),
    ]
}
