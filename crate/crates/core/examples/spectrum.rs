//! Which frequency bands of a power-law image are below the noise floor at
//! each noise level. Pass an image path to use a real picture.

use nilab::analysis::{lowest_submerged_band, snr_profile, submerged_fraction, Image};
use nilab::schedule::Schedule;

fn main() -> nilab::Result<()> {
    let img = match std::env::args().nth(1) {
        Some(path) => Image::load(path)?,
        None => Image::power_law(128, 2.0, 1)?,
    };
    let families = [("flow", Schedule::flow()), ("vp", Schedule::ddpm_default())];
    for (name, s) in &families {
        println!("{name}");
        for f in [0.1, 0.3, 0.5, 0.7, 0.9] {
            let t = nilab::analysis::time_at_fraction(s, f)?;
            let p = snr_profile(&img, s, t)?;
            let band = lowest_submerged_band(&p, 1.0).map_or("none".into(), |b| b.to_string());
            println!(
                "  t/T {f:.1}: {:>5.1}% of bands submerged, lowest {band}",
                100.0 * submerged_fraction(&p, 1.0)
            );
        }
    }
    Ok(())
}
