//! Lists the shipped matrices and runs the tuned ones after normalization.

use nilab::coeffmatrix::normalize_rows;
use nilab::engine::{run_matrix, RunConfig};
use nilab::oracles::{GaussianMixture, GmmPredictor};
use nilab::presets;

fn main() -> nilab::Result<()> {
    for (name, desc) in presets::list() {
        println!("{name:<18} {desc}");
    }
    let mixture = GaussianMixture::ring(8, 1.0, 0.01)?;
    println!();
    for name in ["opt-5", "opt-10", "sd3-euler-28", "sd3-sharp-28"] {
        let (m, scales) = normalize_rows(&presets::get(name)?, None)?;
        let p = GmmPredictor {
            mixture: mixture.clone(),
            schedule: m.schedule()?,
        };
        let out = run_matrix(&RunConfig::new(&m, &p, 200, 0))?;
        let radius = out
            .samples
            .iter()
            .map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt())
            .sum::<f64>()
            / out.samples.len() as f64;
        let spread = scales.iter().cloned().fold(0.0, f64::max);
        println!("{name:<14} {} evals, largest row scale {spread:.3}, mean radius {radius:.3}", m.n_eval());
    }
    Ok(())
}
