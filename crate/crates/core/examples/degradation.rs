//! How often the posterior over a Gaussian dataset collapses onto one atom,
//! across dimension, time and schedule family.

use nilab::analysis::degradation_table;
use nilab::oracles::Dataset;
use nilab::schedule::Schedule;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> nilab::Result<()> {
    let trials: usize = std::env::args().nth(1).and_then(|a| a.parse().ok()).unwrap_or(300);
    let families = [Schedule::ddpm_default(), Schedule::flow()];
    let fractions = [0.1, 0.3, 0.5, 0.7, 0.9];
    for d in [8, 64, 512] {
        let ds = Dataset::standard_normal(2000, d, &mut ChaCha8Rng::seed_from_u64(d as u64))?;
        let rep = degradation_table(&ds, &families, &fractions, trials, 7, 0.9)?;
        println!("d = {d}");
        for fam in ["vp", "flow"] {
            let cells: Vec<String> = fractions
                .iter()
                .map(|&f| {
                    let p = rep.get(fam, f).unwrap();
                    format!("{:.2}±{:.2}", p.rate, p.ci_half_width())
                })
                .collect();
            println!("  {fam:<5} {}", cells.join("  "));
        }
    }
    Ok(())
}
