//! Equivalent marginals of DDPM, DDIM and flow Euler as the step count grows.

use nilab::coeffmatrix::{deviation_trend, equivalent_marginals};
use nilab::presets;
use nilab::samplers::{SamplerKind, SamplerSpec};

fn main() -> nilab::Result<()> {
    let counts = [18, 100, 500];
    let kinds = [
        SamplerKind::Ddpm,
        SamplerKind::Ddim,
        SamplerKind::FlowEuler,
        SamplerKind::SdeEuler,
        SamplerKind::OdeEuler,
    ];
    for kind in kinds {
        let s = kind.default_schedule();
        let v = deviation_trend(&SamplerSpec::new(kind), &s, &counts, kind.default_grid_rule())?;
        let cells: Vec<String> = counts.iter().zip(&v).map(|(n, d)| format!("{n}: {d:.2e}")).collect();
        println!("{:<12} {}", kind.name(), cells.join("  "));
    }
    println!("\nddpm-18 preset, row by row:");
    print!("{}", equivalent_marginals(&presets::get("ddpm-18")?)?.to_csv());
    Ok(())
}
