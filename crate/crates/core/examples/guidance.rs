//! Reads preset rows as chains of guidance stages.

use nilab::guidance::{classify_matrix, decompose_row};
use nilab::presets;

fn main() -> nilab::Result<()> {
    for name in ["ddim-18", "dpmpp-2s-18", "deis-3-18", "dpm-solver-3s-18"] {
        let rows = classify_matrix(&presets::get(name)?);
        let mut counts = std::collections::BTreeMap::new();
        for r in &rows {
            *counts.entry(r.summary.to_string()).or_insert(0) += 1;
        }
        println!("{name:<18} {counts:?}");
    }

    let m = presets::get("deis-3-18")?;
    let row = &m.signal[10];
    let d = decompose_row(row)?;
    println!("\ndeis-3-18 row 10, oldest output first:");
    for st in &d.stages {
        println!(
            "  scale {:>8.4}  lambda {:>8.4}  {}",
            st.scale, st.stage.lambda, st.stage.class
        );
    }
    let err = d
        .unfold()
        .iter()
        .zip(row)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("  reconstruction error {err:.1e}");
    Ok(())
}
