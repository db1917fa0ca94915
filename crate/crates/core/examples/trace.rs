//! Traces every sampler at 18 evaluations and compares DDIM with its preset.

use nilab::coeffmatrix::{equivalent_marginals, trace_nfe};
use nilab::presets;
use nilab::samplers::{SamplerKind, SamplerSpec};

fn main() -> nilab::Result<()> {
    println!("{:<16} {:>5} {:>12}", "sampler", "rows", "max dev");
    for kind in SamplerKind::ALL {
        let s = kind.default_schedule();
        let m = trace_nfe(&SamplerSpec::new(kind), &s, 18, kind.default_grid_rule())?;
        let rep = equivalent_marginals(&m)?;
        println!("{:<16} {:>5} {:>12.3e}", kind.name(), m.signal.len(), rep.max_deviation());
    }

    let s = SamplerKind::Ddim.default_schedule();
    let traced = trace_nfe(&SamplerSpec::new(SamplerKind::Ddim), &s, 18, SamplerKind::Ddim.default_grid_rule())?;
    let printed = presets::get("ddim-18")?;
    let worst = traced
        .signal
        .iter()
        .flatten()
        .zip(printed.signal.iter().flatten())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("\nddim-18 traced vs preset: max entry error {worst:.1e}");
    println!("\nlast three signal rows of the traced matrix:");
    for row in &traced.signal[traced.signal.len() - 3..] {
        let cells: Vec<String> = row[row.len() - 5..].iter().map(|v| format!("{v:7.4}")).collect();
        println!("  ... {}", cells.join(" "));
    }
    Ok(())
}
