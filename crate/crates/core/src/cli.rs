//! Command line front end. `run` returns the process exit code.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::analysis::{
    degradation_table, lowest_submerged_band, snr_csv, snr_profile, submerged_fraction, time_at_fraction,
    Image,
};
use crate::coeffmatrix::{self, equivalent_marginals, normalize_rows, trace_nfe, trace_sampler, CoefficientMatrix};
use crate::engine::{run_matrix, RunConfig, RunNoise};
use crate::error::{Error, Result};
use crate::guidance::{classification_csv, classify_matrix};
use crate::oracles::{make_predictor, Dataset, GaussianMixture, Predictor, Source};
use crate::presets;
use crate::samplers::{FinalGroup, Quadrature, SamplerKind, SamplerOptions, SamplerSpec};
use crate::schedule::{GridRule, Schedule, ScheduleSpec, TimeGrid};
use crate::search::{optimize_matrix, Objective, SearchOptions, SearchSpace};

#[derive(Parser, Debug)]
#[command(name = "nilab", version, about = "Sampler coefficient matrices: trace, check, run, search")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Trace a sampler into a coefficient matrix.
    Trace(TraceArgs),
    /// Equivalent marginal coefficients of a matrix, as CSV.
    Check {
        /// Matrix file or preset name.
        matrix: String,
    },
    /// Run a matrix with an analytic predictor.
    Sample(SampleArgs),
    /// Weighted-sum degradation rates.
    Degrade(DegradeArgs),
    /// Self-guidance classification of every row.
    Guidance {
        matrix: String,
    },
    /// Search for a better matrix at a fixed step count.
    Search(SearchArgs),
    /// Per-band SNR of a noised image.
    Spectrum(SpectrumArgs),
    /// Built-in matrices.
    Presets {
        #[command(subcommand)]
        action: PresetAction,
    },
}

#[derive(Subcommand, Debug)]
enum PresetAction {
    List,
    Export {
        name: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args, Debug)]
struct TraceArgs {
    #[arg(long)]
    sampler: String,
    /// Model evaluations.
    #[arg(long)]
    steps: usize,
    /// vp-linear:BMIN:BMAX:T, vp-cont:BMIN:BMAX:TMIN or flow. Defaults per sampler.
    #[arg(long)]
    schedule: Option<String>,
    /// trailing, quadratic or explicit:FILE (one time per line).
    #[arg(long)]
    grid: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    r1: Option<f64>,
    #[arg(long)]
    r2: Option<f64>,
    /// lower-order or library.
    #[arg(long, default_value = "lower-order")]
    final_group: String,
    #[arg(long)]
    negate_correction: bool,
    /// adaptive or riemann:N.
    #[arg(long, default_value = "adaptive")]
    quadrature: String,
}

#[derive(Args, Debug)]
struct SampleArgs {
    #[arg(long)]
    matrix: String,
    /// dataset:FILE or gmm:FILE.
    #[arg(long)]
    predictor: String,
    #[arg(long)]
    label: Option<u32>,
    #[arg(long, default_value_t = 16)]
    n: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: Option<PathBuf>,
    /// traced, single-terminal or fresh-per-step. Defaults to the matrix's mode.
    #[arg(long)]
    noise: Option<String>,
    /// Rescale rows to their target signal sums first.
    #[arg(long)]
    normalize: bool,
}

#[derive(Args, Debug)]
struct DegradeArgs {
    /// Dataset file, or synthetic:N:D for standard normal atoms.
    #[arg(long)]
    data: String,
    /// Comma-separated: vp, flow.
    #[arg(long, default_value = "vp,flow")]
    family: String,
    /// Comma-separated fractions of the time range.
    #[arg(long, default_value = "0.1,0.3,0.5,0.7,0.9")]
    times: String,
    #[arg(long, default_value_t = 1000)]
    trials: usize,
    #[arg(long, default_value_t = 0.9)]
    threshold: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SearchArgs {
    #[arg(long, default_value_t = 5)]
    steps: usize,
    /// gmm:FILE, dataset:FILE or ring:K:RADIUS:VARIANCE.
    #[arg(long, default_value = "ring:8:1:0.01")]
    predictor: String,
    #[arg(long, default_value_t = 2000)]
    budget: usize,
    /// ddim or a matrix file.
    #[arg(long, default_value = "ddim")]
    init: String,
    #[arg(long, default_value_t = 3)]
    band: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 400)]
    samples: usize,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Objective trace CSV.
    #[arg(long)]
    trace_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SpectrumArgs {
    /// Image file, or synthetic:SIDE:EXPONENT.
    #[arg(long)]
    image: String,
    #[arg(long, default_value = "flow")]
    family: String,
    /// Fraction of the time range.
    #[arg(long)]
    t: f64,
    #[arg(long, default_value_t = 1.0)]
    threshold: f64,
}

fn bad(msg: impl Into<String>) -> Error {
    Error::Parameter(msg.into())
}

fn num<T: std::str::FromStr>(s: &str, what: &str) -> Result<T> {
    s.trim()
        .parse()
        .map_err(|_| bad(format!("cannot parse {what} from '{s}'")))
}

fn family_schedule(name: &str) -> Result<Schedule> {
    match name.trim() {
        "vp" => Ok(Schedule::ddpm_default()),
        "vp-cont" => Ok(Schedule::vp_continuous_default()),
        "flow" => Ok(Schedule::flow()),
        other => Schedule::from_spec(&ScheduleSpec::parse(other)?),
    }
}

/// A matrix file, or a preset name.
fn load_matrix(arg: &str) -> Result<CoefficientMatrix> {
    if Path::new(arg).exists() {
        return coeffmatrix::load(arg);
    }
    let name = arg.strip_prefix("preset:").unwrap_or(arg);
    presets::get(name).map_err(|_| {
        Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("'{arg}' is neither a file nor a preset"),
        ))
    })
}

fn load_source(arg: &str) -> Result<Source> {
    let (kind, rest) = arg
        .split_once(':')
        .ok_or_else(|| bad(format!("predictor '{arg}' should look like dataset:FILE or gmm:FILE")))?;
    match kind {
        "dataset" => Ok(Source::Dataset(Dataset::load(rest)?)),
        "gmm" => Ok(Source::Mixture(GaussianMixture::load(rest)?)),
        "ring" => {
            let p: Vec<&str> = rest.split(':').collect();
            if p.len() != 3 {
                return Err(bad("ring:K:RADIUS:VARIANCE"));
            }
            Ok(Source::Mixture(GaussianMixture::ring(
                num(p[0], "K")?,
                num(p[1], "radius")?,
                num(p[2], "variance")?,
            )?))
        }
        other => Err(bad(format!("unknown predictor kind '{other}'"))),
    }
}

fn write_out(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => std::io::stdout().write_all(text.as_bytes())?,
    }
    Ok(())
}

fn trace(a: TraceArgs) -> Result<()> {
    let kind: SamplerKind = a.sampler.parse()?;
    let s = match &a.schedule {
        Some(spec) => Schedule::from_spec(&ScheduleSpec::parse(spec)?)?,
        None => kind.default_schedule(),
    };
    let options = SamplerOptions {
        r1: a.r1,
        r2: a.r2,
        final_group: match a.final_group.as_str() {
            "lower-order" => FinalGroup::LowerOrder,
            "library" => FinalGroup::Library,
            o => return Err(bad(format!("unknown final group policy '{o}'"))),
        },
        group_orders: None,
        negate_correction: a.negate_correction,
        quadrature: match a.quadrature.split_once(':') {
            None if a.quadrature == "adaptive" => Quadrature::default(),
            Some(("riemann", n)) => Quadrature::LeftRiemann {
                points: num(n, "riemann points")?,
            },
            _ => return Err(bad(format!("unknown quadrature '{}'", a.quadrature))),
        },
    };
    let spec = SamplerSpec::with_options(kind, options)?;
    let grid = a.grid.as_deref().unwrap_or(match kind.default_grid_rule() {
        GridRule::Quadratic => "quadratic",
        _ => "trailing",
    });
    let m = match grid.split_once(':') {
        Some(("explicit", file)) => {
            let times = fs::read_to_string(file)?
                .lines()
                .filter(|l| !l.trim().is_empty())
                .map(|l| num::<f64>(l, "time"))
                .collect::<Result<Vec<_>>>()?;
            trace_sampler(&spec, &s, &TimeGrid::explicit(&s, times)?)?
        }
        None if grid == "trailing" => trace_nfe(&spec, &s, a.steps, GridRule::Trailing)?,
        None if grid == "quadratic" => trace_nfe(&spec, &s, a.steps, GridRule::Quadratic)?,
        _ => return Err(bad(format!("unknown grid '{grid}'"))),
    };
    let report = equivalent_marginals(&m)?;
    let summary = format!(
        "rows,evaluations,max_signal_deviation,max_noise_deviation,max_deviation\n{},{},{},{},{}\n",
        m.signal.len(),
        m.n_eval(),
        report.rows.iter().skip(1).map(|r| r.signal_deviation.abs()).fold(0.0, f64::max),
        report.rows.iter().skip(1).map(|r| r.noise_deviation.abs()).fold(0.0, f64::max),
        report.max_deviation()
    );
    match &a.out {
        Some(p) => {
            coeffmatrix::save(&m, p)?;
            print!("{summary}");
        }
        None => {
            print!("{}", coeffmatrix::to_text(&m));
            eprint!("{summary}");
        }
    }
    Ok(())
}

fn sample(a: SampleArgs) -> Result<()> {
    let mut m = load_matrix(&a.matrix)?;
    if a.normalize {
        m = normalize_rows(&m, None)?.0;
    }
    let s = m.schedule()?;
    let pred: Box<dyn Predictor> = make_predictor(load_source(&a.predictor)?, &s, a.label)?;
    let mut cfg = RunConfig::new(&m, pred.as_ref(), a.n, a.seed);
    if let Some(mode) = &a.noise {
        cfg.noise = match mode.as_str() {
            "traced" => RunNoise::Traced,
            "single-terminal" => RunNoise::SingleTerminal,
            "fresh-per-step" => RunNoise::FreshPerStep,
            o => return Err(bad(format!("unknown noise mode '{o}'"))),
        };
    }
    let out = run_matrix(&cfg)?;
    eprintln!("{} samples, {} model evaluations each", out.samples.len(), m.n_eval());
    match &a.out {
        Some(p) => out.to_dataset()?.save(p)?,
        None => {
            let mut text = String::new();
            for r in &out.samples {
                let cells: Vec<String> = r.iter().map(|v| v.to_string()).collect();
                text.push_str(&cells.join(","));
                text.push('\n');
            }
            write_out(None, &text)?;
        }
    }
    Ok(())
}

fn degrade(a: DegradeArgs) -> Result<()> {
    let ds = match a.data.strip_prefix("synthetic:") {
        Some(rest) => {
            let (n, d) = rest
                .split_once(':')
                .ok_or_else(|| bad("synthetic:N:D"))?;
            Dataset::standard_normal(num(n, "N")?, num(d, "D")?, &mut ChaCha8Rng::seed_from_u64(a.seed))?
        }
        None => Dataset::load(&a.data)?,
    };
    let families = a
        .family
        .split(',')
        .map(family_schedule)
        .collect::<Result<Vec<_>>>()?;
    let times = a
        .times
        .split(',')
        .map(|t| num::<f64>(t, "time"))
        .collect::<Result<Vec<_>>>()?;
    let r = degradation_table(&ds, &families, &times, a.trials, a.seed, a.threshold)?;
    write_out(None, &r.to_csv())
}

fn search(a: SearchArgs) -> Result<()> {
    let s = Schedule::ddpm_default();
    let source = load_source(&a.predictor)?;
    let mut rng = ChaCha8Rng::seed_from_u64(a.seed ^ 0x7265_6600);
    let reference: Vec<Vec<f64>> = match &source {
        Source::Mixture(g) => g.sample(a.samples, &mut rng),
        Source::Dataset(ds) => ds.atoms().take(a.samples.max(1)).map(<[f64]>::to_vec).collect(),
    };
    let init = if a.init == "ddim" {
        trace_nfe(&SamplerSpec::new(SamplerKind::Ddim), &s, a.steps, GridRule::Trailing)?
    } else {
        load_matrix(&a.init)?
    };
    let pred = make_predictor(source, &init.schedule()?, None)?;
    let objective = Objective {
        predictor: pred.as_ref(),
        reference: &reference,
        samples: a.samples,
        seed: a.seed,
    };
    let baseline = objective.evaluate(&init)?;
    let space = SearchSpace::banded(&init, a.band, (-3.0, 3.0))?;
    let res = optimize_matrix(&space, &objective, a.budget, a.seed, SearchOptions::default())?;
    eprintln!(
        "init {baseline:.6} -> best {:.6} after {} evaluations ({} rejected)",
        res.best_objective(),
        res.evaluations,
        res.failures
    );
    if let Some(p) = &a.out {
        coeffmatrix::save(&res.best, p)?;
    }
    match &a.trace_out {
        Some(p) => fs::write(p, res.trace_csv())?,
        None => print!("{}", res.trace_csv()),
    }
    Ok(())
}

fn spectrum(a: SpectrumArgs) -> Result<()> {
    let img = match a.image.strip_prefix("synthetic:") {
        Some(rest) => {
            let (side, e) = rest
                .split_once(':')
                .ok_or_else(|| bad("synthetic:SIDE:EXPONENT"))?;
            Image::power_law(num(side, "side")?, num(e, "exponent")?, 0)?
        }
        None => Image::load(&a.image)?,
    };
    let s = family_schedule(&a.family)?;
    let t = time_at_fraction(&s, a.t)?;
    let p = snr_profile(&img, &s, t)?;
    eprintln!(
        "t = {t}: {:.3} of bands submerged, lowest submerged band {}",
        submerged_fraction(&p, a.threshold),
        lowest_submerged_band(&p, a.threshold).map_or("none".into(), |b| b.to_string())
    );
    write_out(None, &snr_csv(&p))
}

fn presets_cmd(action: PresetAction) -> Result<()> {
    match action {
        PresetAction::List => {
            let mut s = String::from("name,description\n");
            for (n, d) in presets::list() {
                s.push_str(&format!("{n},{d}\n"));
            }
            write_out(None, &s)
        }
        PresetAction::Export { name, out } => {
            let text = presets::text(&name)?;
            write_out(out.as_deref(), text)
        }
    }
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.cmd {
        Command::Trace(a) => trace(a),
        Command::Check { matrix } => {
            let m = load_matrix(&matrix)?;
            write_out(None, &equivalent_marginals(&m)?.to_csv())
        }
        Command::Sample(a) => sample(a),
        Command::Degrade(a) => degrade(a),
        Command::Guidance { matrix } => {
            let m = load_matrix(&matrix)?;
            write_out(None, &classification_csv(&classify_matrix(&m)))
        }
        Command::Search(a) => search(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Presets { action } => presets_cmd(action),
    }
}

/// Parses `args` (program name first) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    match dispatch(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
