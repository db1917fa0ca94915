//! Runs a sampler natively and through its traced matrix on a 16-d mixture.

use nilab::coeffmatrix::trace_sampler;
use nilab::engine::{run_matrix, run_native_batch, RunConfig};
use nilab::oracles::{Component, GaussianMixture, GmmPredictor};
use nilab::samplers::{SamplerKind, SamplerSpec};
use nilab::schedule::make_grid;

fn main() -> nilab::Result<()> {
    let comps = (0..4)
        .map(|k| Component {
            weight: 1.0,
            mean: (0..16).map(|i| if i % 4 == k { 2.0 } else { -0.5 }).collect(),
            variance: 0.05,
            label: Some(k as u32),
        })
        .collect();
    let mixture = GaussianMixture::new(comps)?;
    for kind in [SamplerKind::Ddpm, SamplerKind::DpmPp3S, SamplerKind::Deis3] {
        let s = kind.default_schedule();
        let mut spec = SamplerSpec::new(kind);
        let steps = spec.plan_nfe(12)?;
        let grid = make_grid(&s, steps, kind.default_grid_rule())?;
        let m = trace_sampler(&spec, &s, &grid)?;
        let p = GmmPredictor {
            mixture: mixture.clone(),
            schedule: s.clone(),
        };
        let via_matrix = run_matrix(&RunConfig::new(&m, &p, 32, 7))?;
        let native = run_native_batch(&spec, &s, &grid, &p, 7, 32)?;
        let gap = via_matrix
            .samples
            .iter()
            .flatten()
            .zip(native.iter().flatten())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        println!("{:<14} {} evaluations, max |matrix - native| = {gap:.1e}", kind.name(), m.n_eval());
    }
    Ok(())
}
