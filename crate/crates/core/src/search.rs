//! Coefficient-matrix search against a sample-quality objective.
//!
//! Quality is the energy distance between executor samples and a reference
//! sample of the target distribution. Every candidate is evaluated with the
//! same noise seed, so two identical matrices score identically.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::coeffmatrix::{normalize_rows, CoefficientMatrix, NoiseMode};
use crate::engine::{run_matrix, RunConfig, RunNoise};
use crate::error::{Error, Result};
use crate::oracles::Predictor;

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

fn mean_cross(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let s: f64 = a
        .par_iter()
        .map(|x| b.iter().map(|y| dist(x, y)).sum::<f64>())
        .sum();
    s / (a.len() * b.len()) as f64
}

fn check_sets(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<usize> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Parameter("energy distance needs non-empty sets".into()));
    }
    let d = a[0].len();
    if a.iter().chain(b).any(|x| x.len() != d) {
        return Err(Error::Dimension("sample sets have mixed dimensions".into()));
    }
    Ok(d)
}

/// `2 E|A - B| - E|A - A'| - E|B - B'|` over all pairs (V-statistic).
pub fn energy_distance(a: &[Vec<f64>], b: &[Vec<f64>]) -> Result<f64> {
    check_sets(a, b)?;
    let e = 2.0 * mean_cross(a, b) - mean_cross(a, a) - mean_cross(b, b);
    Ok(e.max(0.0))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PermutationTest {
    pub statistic: f64,
    /// The 95th percentile of the permutation distribution.
    pub critical_95: f64,
    pub p_value: f64,
}

/// Permutation test of equal distributions using the energy statistic.
pub fn permutation_test(
    a: &[Vec<f64>],
    b: &[Vec<f64>],
    permutations: usize,
    seed: u64,
) -> Result<PermutationTest> {
    check_sets(a, b)?;
    if permutations == 0 {
        return Err(Error::Parameter("need at least one permutation".into()));
    }
    let statistic = energy_distance(a, b)?;
    let pooled: Vec<Vec<f64>> = a.iter().chain(b).cloned().collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut idx: Vec<usize> = (0..pooled.len()).collect();
    let mut stats = Vec::with_capacity(permutations);
    for _ in 0..permutations {
        idx.shuffle(&mut rng);
        let (ia, ib) = idx.split_at(a.len());
        let pa: Vec<Vec<f64>> = ia.iter().map(|&i| pooled[i].clone()).collect();
        let pb: Vec<Vec<f64>> = ib.iter().map(|&i| pooled[i].clone()).collect();
        stats.push(energy_distance(&pa, &pb)?);
    }
    stats.sort_by(f64::total_cmp);
    let critical_95 = stats[((0.95 * permutations as f64).ceil() as usize).min(permutations) - 1];
    let above = stats.iter().filter(|&&s| s >= statistic).count();
    Ok(PermutationTest {
        statistic,
        critical_95,
        p_value: (above + 1) as f64 / (permutations + 1) as f64,
    })
}

/// Free entries of a matrix and the constraints candidates must meet.
#[derive(Debug, Clone)]
pub struct SearchSpace {
    pub base: CoefficientMatrix,
    /// `(row, col)` of each free entry.
    pub free: Vec<(usize, usize)>,
    /// Signal sum every row is rescaled to.
    pub targets: Vec<f64>,
    pub bounds: (f64, f64),
}

impl SearchSpace {
    /// Frees the `band` entries left of each diagonal. The diagonal entry
    /// stays fixed before normalization, which then rescales the whole row
    /// to `c0(t)`. Noise becomes single-terminal.
    pub fn banded(base: &CoefficientMatrix, band: usize, bounds: (f64, f64)) -> Result<Self> {
        base.validate()?;
        if !(bounds.0 < bounds.1) {
            return Err(Error::Parameter(format!("empty bounds {bounds:?}")));
        }
        let s = base.schedule()?;
        let targets: Vec<f64> = base
            .row_times
            .iter()
            .map(|&t| s.mixing_coeffs(t).map(|c| c.0))
            .collect::<Result<_>>()?;
        let mut b = base.clone();
        b.noise = None;
        b.noise_mode = NoiseMode::SingleTerminal;
        b.row_targets = Some(targets.clone());
        let mut free = vec![];
        for k in 2..b.signal.len() {
            let diag = k - 1;
            for j in diag.saturating_sub(band)..diag {
                free.push((k, j));
            }
        }
        let space = SearchSpace {
            base: b,
            free,
            targets,
            bounds,
        };
        let (base, _) = space.normalize(&space.base)?;
        Ok(SearchSpace { base, ..space })
    }

    /// Rescales rows to their targets and reports the largest violation left.
    pub fn normalize(&self, m: &CoefficientMatrix) -> Result<(CoefficientMatrix, f64)> {
        let (out, _) = normalize_rows(m, Some(&self.targets))?;
        Ok((out.clone(), self.violation(&out)))
    }

    pub fn violation(&self, m: &CoefficientMatrix) -> f64 {
        m.signal
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, r)| (r.iter().sum::<f64>() - self.targets[k]).abs())
            .fold(0.0, f64::max)
    }

    fn values(&self, m: &CoefficientMatrix) -> Vec<f64> {
        self.free.iter().map(|&(k, j)| m.signal[k][j]).collect()
    }

    fn with_values(&self, m: &CoefficientMatrix, v: &[f64]) -> CoefficientMatrix {
        let mut out = m.clone();
        for (&(k, j), &x) in self.free.iter().zip(v) {
            out.signal[k][j] = x.clamp(self.bounds.0, self.bounds.1);
        }
        out
    }
}

/// Energy distance of executor samples against a fixed reference.
pub struct Objective<'a> {
    pub predictor: &'a dyn Predictor,
    pub reference: &'a [Vec<f64>],
    pub samples: usize,
    pub seed: u64,
}

impl Objective<'_> {
    pub fn evaluate(&self, m: &CoefficientMatrix) -> Result<f64> {
        let mut cfg = RunConfig::new(m, self.predictor, self.samples, self.seed);
        cfg.noise = RunNoise::for_matrix(m);
        let out = run_matrix(&cfg)?;
        energy_distance(&out.samples, self.reference)
    }
}

#[derive(Debug, Clone)]
pub struct SearchResult {
    pub best: CoefficientMatrix,
    pub initial_objective: f64,
    /// Best objective after each evaluation.
    pub trace: Vec<f64>,
    pub evaluations: usize,
    pub failures: usize,
    /// Largest row-sum violation over every evaluated candidate.
    pub max_violation: f64,
    pub seed: u64,
}

impl SearchResult {
    pub fn best_objective(&self) -> f64 {
        self.trace.last().copied().unwrap_or(self.initial_objective)
    }

    pub fn trace_csv(&self) -> String {
        let mut s = String::from("evaluation,best_objective\n");
        s.push_str(&format!("0,{}\n", self.initial_objective));
        for (i, v) in self.trace.iter().enumerate() {
            s.push_str(&format!("{},{v}\n", i + 1));
        }
        s
    }
}

#[derive(Debug, Clone, Copy)]
pub struct SearchOptions {
    pub initial_step: f64,
    pub min_step: f64,
    /// Scale of the Gaussian kick applied to the best point on restart.
    pub restart_scale: f64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        SearchOptions {
            initial_step: 0.1,
            min_step: 2e-3,
            restart_scale: 0.05,
        }
    }
}

/// Coordinate descent with random restarts. Only improvements are accepted,
/// so the trace never increases.
pub fn optimize_matrix(
    space: &SearchSpace,
    objective: &Objective,
    budget: usize,
    seed: u64,
    opts: SearchOptions,
) -> Result<SearchResult> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let initial_objective = objective.evaluate(&space.base)?;
    let mut best = space.base.clone();
    let mut best_v = space.values(&best);
    let mut best_f = initial_objective;
    let mut trace = Vec::with_capacity(budget);
    let mut failures = 0;
    let mut max_violation = space.violation(&best);
    let mut evaluations = 0;
    if space.free.is_empty() {
        return Ok(SearchResult {
            best,
            initial_objective,
            trace,
            evaluations,
            failures,
            max_violation,
            seed,
        });
    }

    let mut cur_v = best_v.clone();
    let mut cur_f = best_f;
    let mut step = opts.initial_step;
    let mut order: Vec<usize> = (0..space.free.len()).collect();
    'outer: while evaluations < budget {
        order.shuffle(&mut rng);
        let mut improved = false;
        for &i in &order {
            for dir in [1.0, -1.0] {
                if evaluations >= budget {
                    break 'outer;
                }
                let mut v = cur_v.clone();
                v[i] += dir * step;
                evaluations += 1;
                let cand = space.with_values(&space.base, &v);
                let scored = space
                    .normalize(&cand)
                    .and_then(|(m, viol)| Ok((objective.evaluate(&m)?, m, viol)));
                match scored {
                    Ok((f, m, viol)) => {
                        max_violation = max_violation.max(viol);
                        if f < cur_f {
                            cur_f = f;
                            cur_v = v;
                            improved = true;
                            if f < best_f {
                                best_f = f;
                                best_v = cur_v.clone();
                                best = m;
                            }
                        }
                    }
                    Err(e) => {
                        failures += 1;
                        log::warn!("candidate {evaluations} rejected: {e}");
                    }
                }
                trace.push(best_f);
                if improved {
                    break;
                }
            }
        }
        if !improved {
            step *= 0.5;
            if step < opts.min_step {
                // restart near the best point
                step = opts.initial_step;
                cur_v = best_v
                    .iter()
                    .map(|x| {
                        let z: f64 = rng.sample(StandardNormal);
                        x + opts.restart_scale * z
                    })
                    .collect();
                cur_f = f64::INFINITY;
                let cand = space.with_values(&space.base, &cur_v);
                if evaluations < budget {
                    evaluations += 1;
                    match space
                        .normalize(&cand)
                        .and_then(|(m, viol)| Ok((objective.evaluate(&m)?, viol)))
                    {
                        Ok((f, viol)) => {
                            max_violation = max_violation.max(viol);
                            cur_f = f;
                        }
                        Err(e) => {
                            failures += 1;
                            log::warn!("restart point rejected: {e}");
                            cur_v = best_v.clone();
                            cur_f = best_f;
                        }
                    }
                    trace.push(best_f);
                }
            }
        }
    }
    Ok(SearchResult {
        best,
        initial_objective,
        trace,
        evaluations,
        failures,
        max_violation,
        seed,
    })
}
