//! Searches for a better 5-step matrix on an eight-mode ring, starting from DDIM.

use std::time::Instant;

use nilab::coeffmatrix::{save, trace_nfe};
use nilab::oracles::{GaussianMixture, GmmPredictor};
use nilab::samplers::{SamplerKind, SamplerSpec};
use nilab::schedule::{GridRule, Schedule};
use nilab::search::{optimize_matrix, Objective, SearchOptions, SearchSpace};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nilab::Result<()> {
    let budget: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(2000);
    let s = Schedule::ddpm_default();
    let mixture = GaussianMixture::ring(8, 1.0, 0.01)?;
    let predictor = GmmPredictor {
        mixture: mixture.clone(),
        schedule: s.clone(),
    };
    let reference = mixture.sample(400, &mut ChaCha8Rng::seed_from_u64(11));

    let ddim = trace_nfe(&SamplerSpec::new(SamplerKind::Ddim), &s, 5, GridRule::Trailing)?;
    let objective = Objective {
        predictor: &predictor,
        reference: &reference,
        samples: 400,
        seed: 5,
    };
    let baseline = objective.evaluate(&ddim)?;
    let space = SearchSpace::banded(&ddim, 3, (-3.0, 3.0))?;

    let start = Instant::now();
    let res = optimize_matrix(&space, &objective, budget, 0, SearchOptions::default())?;
    println!("ddim-5 energy distance      {baseline:.6}");
    println!("normalized start            {:.6}", res.initial_objective);
    println!("best after {:>5} evals      {:.6}", res.evaluations, res.best_objective());
    println!("max row-sum violation       {:.2e}", res.max_violation);
    println!("rejected candidates         {}", res.failures);
    println!("elapsed                     {:.1?}", start.elapsed());
    println!("\nbest signal rows:");
    for row in &res.best.signal {
        let cells: Vec<String> = row.iter().map(|v| format!("{v:8.4}")).collect();
        println!("  {}", cells.join(" "));
    }
    let out = std::env::temp_dir().join("nilab-search-best.nimatrix");
    save(&res.best, &out)?;
    println!("\nsaved to {}", out.display());
    Ok(())
}
