//! Weighted-sum degradation statistics and the frequency view of noising.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::Serialize;

use crate::affine::derive_seed;
use crate::error::{Error, Result};
use crate::oracles::{posterior_weights, Dataset};
use crate::schedule::{Schedule, ScheduleSpec};

pub const DEFAULT_THRESHOLD: f64 = 0.9;

/// Model time at fraction `f` of the schedule's range (`t/T` for discrete
/// schedules).
pub fn time_at_fraction(s: &Schedule, f: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&f) {
        return Err(Error::Parameter(format!("time fraction {f} outside [0, 1]")));
    }
    Ok(match s.spec() {
        ScheduleSpec::VpDiscrete { steps, .. } => (f * *steps as f64).min((steps - 1) as f64),
        ScheduleSpec::VpContinuous { t_min, .. } => f.max(*t_min),
        ScheduleSpec::Flow => f,
    })
}

/// Draws a source atom, noises it to `t` and asks whether the posterior
/// collapses onto one atom (and whether that atom is the source).
pub fn degradation_trial(
    ds: &Dataset,
    s: &Schedule,
    t: f64,
    threshold: f64,
    rng: &mut impl Rng,
) -> Result<(bool, bool)> {
    let src = rng.gen_range(0..ds.len());
    let (c0, c1) = s.mixing_coeffs(t)?;
    let x: Vec<f64> = ds
        .atom(src)
        .iter()
        .map(|a| {
            let z: f64 = rng.sample(StandardNormal);
            c0 * a + c1 * z
        })
        .collect();
    let w = posterior_weights(ds, s, t, &x)?;
    let (best, wmax) = w.argmax();
    let degraded = wmax > threshold;
    Ok((degraded, degraded && best == src))
}

/// Wilson score interval half-width and centre for `k` of `n`.
pub fn wilson(k: usize, n: usize, z: f64) -> (f64, f64) {
    if n == 0 {
        return (0.5, 0.5);
    }
    let n = n as f64;
    let p = k as f64 / n;
    let z2 = z * z;
    let denom = 1.0 + z2 / n;
    let centre = (p + z2 / (2.0 * n)) / denom;
    let half = z * (p * (1.0 - p) / n + z2 / (4.0 * n * n)).sqrt() / denom;
    (centre, half)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradationPoint {
    pub family: String,
    pub fraction: f64,
    pub t: f64,
    pub rate: f64,
    pub rate_to_source: f64,
    pub trials: usize,
    /// 95% Wilson interval for `rate`.
    pub ci_low: f64,
    pub ci_high: f64,
}

impl DegradationPoint {
    pub fn ci_half_width(&self) -> f64 {
        0.5 * (self.ci_high - self.ci_low)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DegradationReport {
    pub points: Vec<DegradationPoint>,
}

impl DegradationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("family,t_fraction,t,rate,rate_to_source,trials,ci_low,ci_high\n");
        for p in &self.points {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                p.family, p.fraction, p.t, p.rate, p.rate_to_source, p.trials, p.ci_low, p.ci_high
            ));
        }
        s
    }

    pub fn get(&self, family: &str, fraction: f64) -> Option<&DegradationPoint> {
        self.points
            .iter()
            .find(|p| p.family == family && (p.fraction - fraction).abs() < 1e-12)
    }
}

fn family_name(s: &Schedule) -> &'static str {
    match s.spec() {
        ScheduleSpec::VpDiscrete { .. } => "vp",
        ScheduleSpec::VpContinuous { .. } => "vp-cont",
        ScheduleSpec::Flow => "flow",
    }
}

/// Monte Carlo degradation rates on a grid of time fractions. Trial `i` at
/// point `p` draws from its own seeded stream, so results do not depend on
/// thread scheduling.
pub fn degradation_table(
    ds: &Dataset,
    families: &[Schedule],
    fractions: &[f64],
    trials: usize,
    seed: u64,
    threshold: f64,
) -> Result<DegradationReport> {
    if trials == 0 {
        return Err(Error::Parameter("trials must be at least 1".into()));
    }
    if ds.is_empty() {
        return Err(Error::Parameter("empty dataset".into()));
    }
    let mut points = vec![];
    for (fi, s) in families.iter().enumerate() {
        for (pi, &f) in fractions.iter().enumerate() {
            let t = time_at_fraction(s, f)?;
            let outcomes: Vec<(bool, bool)> = (0..trials as u64)
                .into_par_iter()
                .map(|i| {
                    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
                        seed,
                        fi as u64,
                        pi as u64,
                        i,
                    ]));
                    degradation_trial(ds, s, t, threshold, &mut rng)
                })
                .collect::<Result<_>>()?;
            let k = outcomes.iter().filter(|o| o.0).count();
            let k_src = outcomes.iter().filter(|o| o.1).count();
            let (c, h) = wilson(k, trials, 1.96);
            points.push(DegradationPoint {
                family: family_name(s).into(),
                fraction: f,
                t,
                rate: k as f64 / trials as f64,
                rate_to_source: k_src as f64 / trials as f64,
                trials,
                ci_low: (c - h).max(0.0),
                ci_high: (c + h).min(1.0),
            });
        }
    }
    Ok(DegradationReport { points })
}

/// A square grayscale image, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub side: usize,
    pub data: Vec<f64>,
}

impl Image {
    pub fn new(side: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != side * side {
            return Err(Error::Dimension(format!(
                "{} pixels for a {side}x{side} image",
                data.len()
            )));
        }
        if side < 4 {
            return Err(Error::Dimension(format!("image side {side} is below 4")));
        }
        Ok(Image { side, data })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let side = rows.len();
        if rows.iter().any(|r| r.len() != side) {
            return Err(Error::Dimension("image is not square".into()));
        }
        Image::new(side, rows.concat())
    }

    /// Loads any format the `image` crate reads, as luma in [0, 1].
    pub fn load(path: impl AsRef<std::path::Path>) -> Result<Self> {
        let img = image::open(path.as_ref())
            .map_err(|e| match e {
                image::ImageError::IoError(io) => Error::Io(io),
                other => Error::Parse {
                    line: 0,
                    msg: other.to_string(),
                },
            })?
            .to_luma32f();
        let (w, h) = img.dimensions();
        if w != h {
            return Err(Error::Dimension(format!("image is {w}x{h}, not square")));
        }
        Image::new(w as usize, img.pixels().map(|p| p.0[0] as f64).collect())
    }

    /// Amplitude spectrum `max(|k|, 1)^-exponent` with random phases, scaled
    /// to unit mean square.
    pub fn power_law(side: usize, exponent: f64, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut buf: Vec<Complex<f64>> = (0..side * side)
            .map(|_| Complex::new(rng.sample(StandardNormal), 0.0))
            .collect();
        fft2(&mut buf, side, false);
        for ky in 0..side {
            for kx in 0..side {
                let r = radius(kx, ky, side);
                let gain = r.max(1.0).powf(-exponent);
                buf[ky * side + kx] *= gain;
            }
        }
        fft2(&mut buf, side, true);
        let mut data: Vec<f64> = buf.iter().map(|c| c.re).collect();
        let var = data.iter().map(|v| v * v).sum::<f64>() / data.len() as f64;
        let sd = var.sqrt();
        if sd > 0.0 {
            data.iter_mut().for_each(|v| *v /= sd);
        }
        Image::new(side, data)
    }
}

fn freq(k: usize, n: usize) -> f64 {
    if k <= n / 2 {
        k as f64
    } else {
        k as f64 - n as f64
    }
}

fn radius(kx: usize, ky: usize, n: usize) -> f64 {
    freq(kx, n).hypot(freq(ky, n))
}

fn fft2(buf: &mut [Complex<f64>], n: usize, inverse: bool) {
    let mut planner = FftPlanner::new();
    let fft = if inverse {
        planner.plan_fft_inverse(n)
    } else {
        planner.plan_fft_forward(n)
    };
    for row in buf.chunks_mut(n) {
        fft.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); n];
    for x in 0..n {
        for y in 0..n {
            col[y] = buf[y * n + x];
        }
        fft.process(&mut col);
        for y in 0..n {
            buf[y * n + x] = col[y];
        }
    }
    if inverse {
        let s = 1.0 / (n * n) as f64;
        buf.iter_mut().for_each(|c| *c *= s);
    }
}

/// Mean DFT magnitude over integer-radius annuli `0..=side/2`.
pub fn radial_spectrum(img: &Image) -> Vec<f64> {
    let n = img.side;
    let mut buf: Vec<Complex<f64>> = img.data.iter().map(|&v| Complex::new(v, 0.0)).collect();
    fft2(&mut buf, n, false);
    let bands = n / 2 + 1;
    let mut sum = vec![0.0; bands];
    let mut count = vec![0usize; bands];
    for ky in 0..n {
        for kx in 0..n {
            let r = radius(kx, ky, n).round() as usize;
            if r < bands {
                sum[r] += buf[ky * n + kx].norm();
                count[r] += 1;
            }
        }
    }
    sum.iter().zip(&count).map(|(s, &c)| s / c as f64).collect()
}

/// Per-band signal-to-noise ratio of `c0 * img + c1 * noise`, against unit
/// white noise (whose DFT amplitude is `side` in every band).
pub fn snr_profile(img: &Image, s: &Schedule, t: f64) -> Result<Vec<f64>> {
    let (c0, c1) = s.mixing_coeffs(t)?;
    let noise_amp = img.side as f64;
    Ok(radial_spectrum(img)
        .into_iter()
        .map(|a| {
            if c1 == 0.0 {
                f64::INFINITY
            } else {
                (c0 * a).powi(2) / (c1 * noise_amp).powi(2)
            }
        })
        .collect())
}

pub fn submerged_fraction(profile: &[f64], threshold: f64) -> f64 {
    if profile.is_empty() {
        return 0.0;
    }
    profile.iter().filter(|&&v| v < threshold).count() as f64 / profile.len() as f64
}

/// Index of the lowest band whose SNR is below `threshold`.
pub fn lowest_submerged_band(profile: &[f64], threshold: f64) -> Option<usize> {
    profile.iter().position(|&v| v < threshold)
}

pub fn snr_csv(profile: &[f64]) -> String {
    let mut s = String::from("band,snr,submerged\n");
    for (i, v) in profile.iter().enumerate() {
        s.push_str(&format!("{i},{v},{}\n", *v < 1.0));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn single_atom_always_degrades_to_source() {
        let ds = Dataset::from_rows(&[vec![0.5, 1.0]]).unwrap();
        let s = Schedule::ddpm_default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for t in [0.0, 500.0, 999.0] {
            assert_eq!(degradation_trial(&ds, &s, t, 0.9, &mut rng).unwrap(), (true, true));
        }
    }

    #[test]
    fn pure_noise_never_degrades() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let ds = Dataset::standard_normal(10, 4, &mut rng).unwrap();
        let s = Schedule::flow();
        assert_eq!(degradation_trial(&ds, &s, 1.0, 0.9, &mut rng).unwrap(), (false, false));
    }

    #[test]
    fn one_trial_gives_binary_rates() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let ds = Dataset::standard_normal(50, 4, &mut rng).unwrap();
        let r = degradation_table(&ds, &[Schedule::flow()], &[0.1, 0.5], 1, 0, 0.9).unwrap();
        for p in &r.points {
            assert!(p.rate == 0.0 || p.rate == 1.0);
            assert!(p.rate_to_source <= p.rate);
        }
    }

    #[test]
    fn wilson_known_value() {
        let (c, h) = wilson(50, 100, 1.96);
        assert!((c - 0.5).abs() < 1e-12);
        assert!((h - 0.0962).abs() < 1e-3);
    }

    #[test]
    fn spectrum_basics() {
        let zero = Image::new(8, vec![0.0; 64]).unwrap();
        assert!(radial_spectrum(&zero).iter().all(|v| *v == 0.0));
        let img = Image::power_law(16, 1.0, 4).unwrap();
        let mut shifted = vec![0.0; 256];
        for y in 0..16 {
            for x in 0..16 {
                shifted[((y + 3) % 16) * 16 + (x + 5) % 16] = img.data[y * 16 + x];
            }
        }
        let a = radial_spectrum(&img);
        let b = radial_spectrum(&Image::new(16, shifted).unwrap());
        for (u, v) in a.iter().zip(&b) {
            assert!((u - v).abs() < 1e-9);
        }
        assert!(Image::from_rows(&[vec![0.0; 4], vec![0.0; 4], vec![0.0; 3], vec![0.0; 4]]).is_err());
    }

    #[test]
    fn snr_limits_and_monotonicity() {
        let img = Image::power_law(32, 1.0, 5).unwrap();
        let s = Schedule::flow();
        assert_eq!(submerged_fraction(&snr_profile(&img, &s, 0.0).unwrap(), 1.0), 0.0);
        assert_eq!(submerged_fraction(&snr_profile(&img, &s, 1.0).unwrap(), 1.0), 1.0);
        let mut prev_frac = 0.0;
        let mut prev_low = usize::MAX;
        for i in 0..=20 {
            let p = snr_profile(&img, &s, i as f64 / 20.0).unwrap();
            let f = submerged_fraction(&p, 1.0);
            assert!(f >= prev_frac);
            prev_frac = f;
            if let Some(l) = lowest_submerged_band(&p, 1.0) {
                assert!(l <= prev_low);
                prev_low = l;
            }
        }
    }
}
