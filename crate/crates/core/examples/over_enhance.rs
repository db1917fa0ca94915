//! Feeding the denoiser its own output at a fixed time: dry iteration snaps
//! to an atom, re-noising keeps it moving between atoms.

use nilab::engine::{over_enhance, EnhanceMode};
use nilab::oracles::{Dataset, DatasetPredictor};
use nilab::schedule::Schedule;

fn main() -> nilab::Result<()> {
    let s = Schedule::ddpm_default();
    let ds = Dataset::from_rows(&[vec![-1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.5]])?;
    let p = DatasetPredictor {
        dataset: ds,
        schedule: s.clone(),
    };
    for mode in [EnhanceMode::Dry, EnhanceMode::Renoise] {
        let seq = over_enhance(&p, &s, 300.0, &[0.2, 0.4], 8, mode, 1)?;
        println!("{mode:?}");
        for (k, x) in seq.iter().enumerate() {
            println!("  {k}: ({:+.4}, {:+.4})", x[0], x[1]);
        }
    }
    Ok(())
}
