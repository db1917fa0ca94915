//! Executes a coefficient matrix against a predictor.
//!
//! Row `k` of the matrix is the input of model call `k`; the last row is the
//! returned sample. Each sample is run independently, so batches parallelize
//! over samples.

use rayon::prelude::*;

use crate::affine::{noise_vector, ConcreteContext, Neumaier, NoiseId};
use crate::coeffmatrix::{CoefficientMatrix, NoiseMode};
use crate::error::{Error, Result};
use crate::oracles::{Dataset, Predictor};
use crate::samplers::{run_native, SamplerSpec};
use crate::schedule::{Schedule, TimeGrid};

/// How noise enters each row at run time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunNoise {
    /// Replay the matrix's noise columns, one draw per noise id.
    Traced,
    /// `c1(t)` on the initial draw, whatever the matrix stores.
    SingleTerminal,
    /// An independent draw per row, scaled to that row's noise norm.
    FreshPerStep,
}

impl RunNoise {
    /// The mode implied by how the matrix was built.
    pub fn for_matrix(m: &CoefficientMatrix) -> Self {
        match m.noise_mode {
            NoiseMode::Traced | NoiseMode::Custom => RunNoise::Traced,
            NoiseMode::SingleTerminal => RunNoise::SingleTerminal,
        }
    }
}

pub struct RunConfig<'a> {
    pub matrix: &'a CoefficientMatrix,
    pub predictor: &'a dyn Predictor,
    pub noise: RunNoise,
    pub seed: u64,
    pub n: usize,
    pub record_trajectory: bool,
}

impl<'a> RunConfig<'a> {
    pub fn new(matrix: &'a CoefficientMatrix, predictor: &'a dyn Predictor, n: usize, seed: u64) -> Self {
        RunConfig {
            matrix,
            predictor,
            noise: RunNoise::for_matrix(matrix),
            seed,
            n,
            record_trajectory: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunOutput {
    pub samples: Vec<Vec<f64>>,
    /// Per sample, every model output in call order.
    pub trajectories: Option<Vec<Vec<Vec<f64>>>>,
}

impl RunOutput {
    pub fn to_dataset(&self) -> Result<Dataset> {
        Dataset::from_rows(&self.samples)
    }
}

/// Noise weights per row in the chosen mode: `(ids, rows)`.
fn noise_plan(m: &CoefficientMatrix, mode: RunNoise) -> Result<(Vec<NoiseId>, Vec<Vec<f64>>)> {
    match mode {
        RunNoise::Traced => {
            let nb = m.effective_noise()?;
            Ok((nb.ids, nb.rows))
        }
        RunNoise::SingleTerminal => {
            let s = m.schedule()?;
            let rows = m
                .row_times
                .iter()
                .map(|&t| s.mixing_coeffs(t).map(|c| vec![c.1]))
                .collect::<Result<_>>()?;
            Ok((vec![NoiseId::new(0, 0)], rows))
        }
        RunNoise::FreshPerStep => {
            let nb = m.effective_noise()?;
            let n = m.row_times.len();
            // draw index 1 keeps these apart from traced ids
            let ids = (0..n as u32).map(|k| NoiseId::new(k, 1)).collect();
            let rows = nb
                .rows
                .iter()
                .enumerate()
                .map(|(k, r)| {
                    let mut v = vec![0.0; n];
                    v[k] = r.iter().map(|b| b * b).sum::<f64>().sqrt();
                    v
                })
                .collect();
            Ok((ids, rows))
        }
    }
}

fn combine(
    dim: usize,
    signal: &[f64],
    ys: &[Vec<f64>],
    noise_w: &[f64],
    noise: &[Vec<f64>],
) -> Result<Vec<f64>> {
    let mut out = vec![0.0; dim];
    for (i, o) in out.iter_mut().enumerate() {
        let mut acc = Neumaier::default();
        for (j, &c) in signal.iter().enumerate() {
            if c != 0.0 {
                let y = ys.get(j).ok_or_else(|| {
                    Error::Validation(format!("row uses output {j} before it is produced"))
                })?;
                acc.add(c * y[i]);
            }
        }
        for (w, e) in noise_w.iter().zip(noise) {
            if *w != 0.0 {
                acc.add(w * e[i]);
            }
        }
        *o = acc.total();
    }
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("executor produced a non-finite state".into()));
    }
    Ok(out)
}

fn run_one(
    cfg: &RunConfig,
    ids: &[NoiseId],
    noise_rows: &[Vec<f64>],
    sample: u64,
) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    let m = cfg.matrix;
    let dim = cfg.predictor.dim();
    let noise: Vec<Vec<f64>> = ids
        .iter()
        .map(|&id| noise_vector(cfg.seed, sample, id, dim))
        .collect();
    let n = m.n_eval();
    let mut ys: Vec<Vec<f64>> = Vec::with_capacity(n);
    for k in 0..n {
        let x = combine(dim, &m.signal[k], &ys, &noise_rows[k], &noise)?;
        let y = cfg.predictor.predict(m.row_times[k], &x)?;
        if y.len() != dim {
            return Err(Error::Dimension(format!(
                "predictor returned {} components, expected {dim}",
                y.len()
            )));
        }
        ys.push(y);
    }
    let out = combine(dim, &m.signal[n], &ys, &noise_rows[n], &noise)?;
    Ok((out, ys))
}

/// Runs the matrix for `cfg.n` samples. Sample `i` uses noise stream `i`.
pub fn run_matrix(cfg: &RunConfig) -> Result<RunOutput> {
    cfg.matrix.validate()?;
    let (ids, rows) = noise_plan(cfg.matrix, cfg.noise)?;
    let results: Vec<(Vec<f64>, Vec<Vec<f64>>)> = (0..cfg.n as u64)
        .into_par_iter()
        .map(|i| run_one(cfg, &ids, &rows, i))
        .collect::<Result<_>>()?;
    let (samples, trajs): (Vec<_>, Vec<_>) = results.into_iter().unzip();
    Ok(RunOutput {
        samples,
        trajectories: cfg.record_trajectory.then_some(trajs),
    })
}

/// Native sampler runs with the same seeding as [`run_matrix`].
pub fn run_native_batch(
    spec: &SamplerSpec,
    s: &Schedule,
    grid: &TimeGrid,
    predictor: &dyn Predictor,
    seed: u64,
    n: usize,
) -> Result<Vec<Vec<f64>>> {
    (0..n as u64)
        .into_par_iter()
        .map(|i| {
            let mut ctx = ConcreteContext::new(predictor, seed, i);
            let traj = run_native(spec, s, grid, &mut ctx)?;
            traj.output
                .as_concrete()
                .map(<[f64]>::to_vec)
                .ok_or(Error::MixedElements)
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EnhanceMode {
    /// Re-mix fresh noise at level `t` before every call.
    Renoise,
    /// Feed the output straight back in.
    Dry,
}

/// Repeatedly applies the predictor at a fixed time. Returns `k + 1` states,
/// starting with `x_init`.
pub fn over_enhance(
    pred: &dyn Predictor,
    s: &Schedule,
    t: f64,
    x_init: &[f64],
    k: usize,
    mode: EnhanceMode,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    let (c0, c1) = s.mixing_coeffs(t)?;
    let mut seq = vec![x_init.to_vec()];
    for j in 0..k {
        let x = seq.last().expect("sequence starts non-empty");
        let input = match mode {
            EnhanceMode::Dry => x.clone(),
            EnhanceMode::Renoise => {
                let e = noise_vector(seed, 0, NoiseId::new(j as u32, 0), x.len());
                x.iter().zip(&e).map(|(a, b)| c0 * a + c1 * b).collect()
            }
        };
        seq.push(pred.predict(t, &input)?);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::coeffmatrix::{trace_sampler, NoiseBlock};
    use crate::oracles::{DatasetPredictor, FnPredictor};
    use crate::samplers::SamplerKind;
    use crate::schedule::{make_grid, GridRule};

    #[test]
    fn one_row_matrix_returns_model_of_noise() {
        let m = CoefficientMatrix {
            schedule: Schedule::flow().spec().clone(),
            row_times: vec![1.0, 0.0],
            col_times: vec![1.0],
            signal: vec![vec![0.0], vec![1.0]],
            noise: Some(NoiseBlock {
                ids: vec![NoiseId::new(0, 0)],
                rows: vec![vec![1.0], vec![0.0]],
            }),
            noise_mode: NoiseMode::Custom,
            row_targets: None,
            note: None,
        };
        let p = FnPredictor {
            dim: 3,
            f: |_t: f64, x: &[f64]| x.iter().map(|v| 2.0 * v).collect(),
        };
        let out = run_matrix(&RunConfig::new(&m, &p, 2, 9)).unwrap();
        for (i, s) in out.samples.iter().enumerate() {
            let e = noise_vector(9, i as u64, NoiseId::new(0, 0), 3);
            for (a, b) in s.iter().zip(&e) {
                assert_eq!(*a, 2.0 * b);
            }
        }
    }

    #[test]
    fn ddim_trace_matches_native() {
        let s = Schedule::ddpm_default();
        let grid = make_grid(&s, 18, GridRule::Trailing).unwrap();
        let spec = SamplerSpec::new(SamplerKind::Ddim);
        let m = trace_sampler(&spec, &s, &grid).unwrap();
        let ds = Dataset::from_rows(&[vec![1.0, -1.0], vec![-0.5, 0.25], vec![2.0, 2.0]]).unwrap();
        let p = DatasetPredictor {
            dataset: ds,
            schedule: s.clone(),
        };
        let a = run_matrix(&RunConfig::new(&m, &p, 8, 3)).unwrap();
        let b = run_native_batch(&spec, &s, &grid, &p, 3, 8).unwrap();
        for (x, y) in a.samples.iter().zip(&b) {
            for (u, v) in x.iter().zip(y) {
                assert!((u - v).abs() <= 1e-9 * v.abs().max(1.0));
            }
        }
        let again = run_matrix(&RunConfig::new(&m, &p, 8, 3)).unwrap();
        assert_eq!(a, again);
    }

    #[test]
    fn enhance_basics() {
        let s = Schedule::ddpm_default();
        let ds = Dataset::from_rows(&[vec![0.3, 0.7]]).unwrap();
        let p = DatasetPredictor {
            dataset: ds,
            schedule: s.clone(),
        };
        let seq = over_enhance(&p, &s, 400.0, &[5.0, 5.0], 0, EnhanceMode::Dry, 0).unwrap();
        assert_eq!(seq, vec![vec![5.0, 5.0]]);
        let seq = over_enhance(&p, &s, 400.0, &[5.0, 5.0], 4, EnhanceMode::Renoise, 0).unwrap();
        for x in &seq[1..] {
            assert_eq!(x, &vec![0.3, 0.7]);
        }
    }
}
