//! Analytic x0-predictors: the exact posterior mean over a finite dataset and
//! over an isotropic Gaussian mixture, plus the matching marginal densities.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::Deserialize;

use crate::affine::Neumaier;
use crate::error::{Error, Result};
use crate::schedule::Schedule;

/// An x0-predictor `f_t(x_t)`.
pub trait Predictor: Sync {
    fn dim(&self) -> usize;
    fn predict(&self, t: f64, x: &[f64]) -> Result<Vec<f64>>;
}

/// Wraps a closure as a predictor.
pub struct FnPredictor<F> {
    pub dim: usize,
    pub f: F,
}

impl<F> Predictor for FnPredictor<F>
where
    F: Fn(f64, &[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }
    fn predict(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        Ok((self.f)(t, x))
    }
}

/// A finite set of points, optionally labelled.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    n: usize,
    d: usize,
    atoms: Vec<f64>,
    labels: Option<Vec<u32>>,
}

const NIDS_MAGIC: &[u8; 5] = b"NIDS1";

impl Dataset {
    pub fn new(d: usize, atoms: Vec<f64>, labels: Option<Vec<u32>>) -> Result<Self> {
        if d == 0 || atoms.is_empty() || atoms.len() % d != 0 {
            return Err(Error::Dimension(format!(
                "{} values do not form rows of width {d}",
                atoms.len()
            )));
        }
        if atoms.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("dataset entry".into()));
        }
        let n = atoms.len() / d;
        if let Some(l) = &labels {
            if l.len() != n {
                return Err(Error::Dimension(format!("{} labels for {n} atoms", l.len())));
            }
        }
        Ok(Dataset {
            n,
            d,
            atoms,
            labels,
        })
    }

    pub fn from_rows(rows: &[Vec<f64>]) -> Result<Self> {
        let d = rows.first().map_or(0, |r| r.len());
        if rows.iter().any(|r| r.len() != d) {
            return Err(Error::Dimension("ragged rows".into()));
        }
        Self::new(d, rows.concat(), None)
    }

    /// `n` atoms with i.i.d. standard normal coordinates.
    pub fn standard_normal(n: usize, d: usize, rng: &mut impl Rng) -> Result<Self> {
        let atoms = (0..n * d).map(|_| StandardNormal.sample(rng)).collect();
        Self::new(d, atoms, None)
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn atom(&self, i: usize) -> &[f64] {
        &self.atoms[i * self.d..(i + 1) * self.d]
    }

    pub fn atoms(&self) -> impl Iterator<Item = &[f64]> {
        self.atoms.chunks_exact(self.d)
    }

    pub fn labels(&self) -> Option<&[u32]> {
        self.labels.as_deref()
    }

    /// Atoms carrying `label`.
    pub fn subset(&self, label: u32) -> Result<Self> {
        let labels = self
            .labels
            .as_ref()
            .ok_or_else(|| Error::Parameter("dataset has no labels".into()))?;
        let mut atoms = vec![];
        for (i, &l) in labels.iter().enumerate() {
            if l == label {
                atoms.extend_from_slice(self.atom(i));
            }
        }
        if atoms.is_empty() {
            return Err(Error::Parameter(format!("no atoms with label {label}")));
        }
        let n = atoms.len() / self.d;
        Self::new(self.d, atoms, Some(vec![label; n]))
    }

    pub fn mean(&self) -> Vec<f64> {
        let mut m = vec![0.0; self.d];
        for a in self.atoms() {
            for (m, v) in m.iter_mut().zip(a) {
                *m += v;
            }
        }
        m.iter_mut().for_each(|v| *v /= self.n as f64);
        m
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(13 + 8 * self.atoms.len());
        out.extend_from_slice(NIDS_MAGIC);
        out.extend_from_slice(&(self.n as u32).to_le_bytes());
        out.extend_from_slice(&(self.d as u32).to_le_bytes());
        for v in &self.atoms {
            out.extend_from_slice(&v.to_le_bytes());
        }
        if let Some(l) = &self.labels {
            for v in l {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(b: &[u8]) -> Result<Self> {
        let bad = |msg: &str| Error::Parse {
            line: 0,
            msg: msg.to_string(),
        };
        if b.len() < 13 || &b[..5] != NIDS_MAGIC {
            return Err(bad("missing NIDS1 header"));
        }
        let n = u32::from_le_bytes(b[5..9].try_into().unwrap()) as usize;
        let d = u32::from_le_bytes(b[9..13].try_into().unwrap()) as usize;
        let body = n
            .checked_mul(d)
            .and_then(|m| m.checked_mul(8))
            .ok_or_else(|| bad("size overflow"))?;
        let rest = &b[13..];
        if rest.len() != body && rest.len() != body + 4 * n {
            return Err(bad(&format!(
                "expected {body} or {} payload bytes, found {}",
                body + 4 * n,
                rest.len()
            )));
        }
        let atoms = rest[..body]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let labels = (rest.len() > body).then(|| {
            rest[body..]
                .chunks_exact(4)
                .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
                .collect()
        });
        Self::new(d, atoms, labels)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::File::create(path)?.write_all(&self.to_bytes())?;
        Ok(())
    }

    /// Reads the binary format, or CSV when the file does not start with the magic.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let mut b = vec![];
        fs::File::open(path)?.read_to_end(&mut b)?;
        if b.starts_with(NIDS_MAGIC) {
            Self::from_bytes(&b)
        } else {
            let text = String::from_utf8(b).map_err(|_| Error::Parse {
                line: 0,
                msg: "neither NIDS1 nor UTF-8 CSV".into(),
            })?;
            Self::from_csv(&text)
        }
    }

    /// One atom per line, comma separated. A header line whose last field is
    /// `label` marks the last column as integer labels.
    pub fn from_csv(text: &str) -> Result<Self> {
        let mut rows = vec![];
        let mut labels: Option<Vec<u32>> = None;
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.iter().any(|f| f.parse::<f64>().is_err()) {
                if rows.is_empty() && labels.is_none() {
                    if fields.last() == Some(&"label") {
                        labels = Some(vec![]);
                    }
                    continue;
                }
                return Err(Error::Parse {
                    line: ln + 1,
                    msg: format!("non-numeric field in '{line}'"),
                });
            }
            let mut vals: Vec<f64> = fields.iter().map(|f| f.parse().unwrap()).collect();
            if let Some(l) = labels.as_mut() {
                let lab = vals.pop().ok_or_else(|| Error::Parse {
                    line: ln + 1,
                    msg: "empty row".into(),
                })?;
                l.push(lab as u32);
            }
            rows.push(vals);
        }
        let d = rows.first().map_or(0, |r| r.len());
        if let Some(bad) = rows.iter().position(|r| r.len() != d) {
            return Err(Error::Parse {
                line: bad + 1,
                msg: "row width differs from the first row".into(),
            });
        }
        Self::new(d, rows.concat(), labels)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Component {
    pub weight: f64,
    pub mean: Vec<f64>,
    pub variance: f64,
    pub label: Option<u32>,
}

/// Mixture of isotropic Gaussians.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianMixture {
    components: Vec<Component>,
    d: usize,
}

#[derive(Deserialize)]
struct MixtureFile {
    component: Vec<ComponentFile>,
}

#[derive(Deserialize)]
struct ComponentFile {
    weight: f64,
    mean: Vec<f64>,
    variance: f64,
    label: Option<u32>,
}

impl GaussianMixture {
    /// Weights are rescaled to sum to one.
    pub fn new(mut components: Vec<Component>) -> Result<Self> {
        let Some(first) = components.first() else {
            return Err(Error::Parameter("mixture needs a component".into()));
        };
        let d = first.mean.len();
        if d == 0 {
            return Err(Error::Dimension("zero-dimensional mixture".into()));
        }
        for c in &components {
            if c.mean.len() != d {
                return Err(Error::Dimension("component means differ in length".into()));
            }
            if !(c.weight > 0.0 && c.weight.is_finite()) {
                return Err(Error::Parameter(format!("weight {} must be positive", c.weight)));
            }
            if !(c.variance > 0.0 && c.variance.is_finite()) {
                return Err(Error::Parameter(format!(
                    "variance {} must be positive",
                    c.variance
                )));
            }
        }
        let total: f64 = components.iter().map(|c| c.weight).sum();
        components.iter_mut().for_each(|c| c.weight /= total);
        Ok(GaussianMixture { components, d })
    }

    /// `k` equal-weight modes evenly spaced on a circle of `radius` in 2D,
    /// labelled `0..k`.
    pub fn ring(k: usize, radius: f64, variance: f64) -> Result<Self> {
        Self::new(
            (0..k)
                .map(|i| {
                    let a = std::f64::consts::TAU * i as f64 / k as f64;
                    Component {
                        weight: 1.0,
                        mean: vec![radius * a.cos(), radius * a.sin()],
                        variance,
                        label: Some(i as u32),
                    }
                })
                .collect(),
        )
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let f: MixtureFile = toml::from_str(text).map_err(|e| Error::Parse {
            line: e.span().map_or(0, |s| text[..s.start].lines().count()),
            msg: e.message().to_string(),
        })?;
        Self::new(
            f.component
                .into_iter()
                .map(|c| Component {
                    weight: c.weight,
                    mean: c.mean,
                    variance: c.variance,
                    label: c.label,
                })
                .collect(),
        )
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_toml(&fs::read_to_string(path)?)
    }

    pub fn dim(&self) -> usize {
        self.d
    }

    pub fn components(&self) -> &[Component] {
        &self.components
    }

    pub fn subset(&self, label: u32) -> Result<Self> {
        let comps: Vec<Component> = self
            .components
            .iter()
            .filter(|c| c.label == Some(label))
            .cloned()
            .collect();
        if comps.is_empty() {
            return Err(Error::Parameter(format!("no components with label {label}")));
        }
        Self::new(comps)
    }

    pub fn sample(&self, n: usize, rng: &mut impl Rng) -> Vec<Vec<f64>> {
        (0..n)
            .map(|_| {
                let mut u: f64 = rng.gen();
                let mut k = self.components.len() - 1;
                for (i, c) in self.components.iter().enumerate() {
                    if u < c.weight {
                        k = i;
                        break;
                    }
                    u -= c.weight;
                }
                let c = &self.components[k];
                let sd = c.variance.sqrt();
                c.mean
                    .iter()
                    .map(|m| m + sd * { let z: f64 = StandardNormal.sample(rng); z })
                    .collect()
            })
            .collect()
    }

    /// `log N(x; c0 m_k, (c0^2 v_k + c1^2) I) + log w_k` per component.
    fn component_logs(&self, c0: f64, c1: f64, x: &[f64]) -> Vec<f64> {
        let d = self.d as f64;
        self.components
            .iter()
            .map(|c| {
                let var = c0 * c0 * c.variance + c1 * c1;
                let r2: f64 = x
                    .iter()
                    .zip(&c.mean)
                    .map(|(x, m)| (x - c0 * m).powi(2))
                    .sum();
                c.weight.ln() - 0.5 * d * (std::f64::consts::TAU * var).ln() - 0.5 * r2 / var
            })
            .collect()
    }
}

/// Posterior weights over dataset atoms.
#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorWeights {
    pub weights: Vec<f64>,
    /// Set when `c0 = 0`: the posterior is the prior and weights are uniform.
    pub degenerate: bool,
}

impl PosteriorWeights {
    /// Largest weight and its index, ties to the lowest index.
    pub fn argmax(&self) -> (usize, f64) {
        let mut best = (0, self.weights[0]);
        for (i, &w) in self.weights.iter().enumerate().skip(1) {
            if w > best.1 {
                best = (i, w);
            }
        }
        best
    }
}

fn sq_dist(a: &[f64], b: &[f64], scale: f64, compensated: bool) -> f64 {
    if compensated {
        let mut acc = Neumaier::default();
        for (x, y) in a.iter().zip(b) {
            acc.add((scale * x - y).powi(2));
        }
        acc.total()
    } else {
        a.iter().zip(b).map(|(x, y)| (scale * x - y).powi(2)).sum()
    }
}

/// Softmax of `logits` with max subtraction.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let mut w: Vec<f64> = logits.iter().map(|l| (l - m).exp()).collect();
    let z: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= z);
    w
}

/// `p(x0 = X_i | x_t)` for every atom.
pub fn posterior_weights(
    ds: &Dataset,
    s: &Schedule,
    t: f64,
    x_t: &[f64],
) -> Result<PosteriorWeights> {
    if x_t.len() != ds.dim() {
        return Err(Error::Dimension(format!("{} vs {}", x_t.len(), ds.dim())));
    }
    let (c0, c1) = s.mixing_coeffs(t)?;
    let n = ds.len();
    if c0 == 0.0 {
        return Ok(PosteriorWeights {
            weights: vec![1.0 / n as f64; n],
            degenerate: true,
        });
    }
    let compensated = ds.dim() >= 10_000;
    // ||c0 X_i - x||^2 / (2 c1^2) equals ||X_i - mu||^2 / (2 sigma^2)
    let d2: Vec<f64> = ds
        .atoms()
        .map(|a| sq_dist(a, x_t, c0, compensated))
        .collect();
    if c1 == 0.0 {
        let mut w = vec![0.0; n];
        let mut best = 0;
        for i in 1..n {
            if d2[i] < d2[best] {
                best = i;
            }
        }
        w[best] = 1.0;
        return Ok(PosteriorWeights {
            weights: w,
            degenerate: false,
        });
    }
    let logits: Vec<f64> = d2.iter().map(|d| -d / (2.0 * c1 * c1)).collect();
    Ok(PosteriorWeights {
        weights: softmax(&logits),
        degenerate: false,
    })
}

pub fn posterior_mean_dataset(ds: &Dataset, s: &Schedule, t: f64, x_t: &[f64]) -> Result<Vec<f64>> {
    let w = posterior_weights(ds, s, t, x_t)?;
    let mut acc = vec![Neumaier::default(); ds.dim()];
    for (a, &wi) in ds.atoms().zip(&w.weights) {
        if wi == 0.0 {
            continue;
        }
        for (acc, v) in acc.iter_mut().zip(a) {
            acc.add(wi * v);
        }
    }
    Ok(acc.into_iter().map(|a| a.total()).collect())
}

/// Closed-form `E[x0 | x_t]` under a Gaussian mixture prior.
pub fn posterior_mean_gmm(g: &GaussianMixture, s: &Schedule, t: f64, x_t: &[f64]) -> Result<Vec<f64>> {
    if x_t.len() != g.dim() {
        return Err(Error::Dimension(format!("{} vs {}", x_t.len(), g.dim())));
    }
    let (c0, c1) = s.mixing_coeffs(t)?;
    let resp = softmax(&g.component_logs(c0, c1, x_t));
    let mut out = vec![0.0; g.dim()];
    for (c, r) in g.components().iter().zip(resp) {
        // (sigma^2 m + v mu) / (sigma^2 + v) with mu = x/c0, sigma = c1/c0
        let den = c1 * c1 + c0 * c0 * c.variance;
        for ((o, m), x) in out.iter_mut().zip(&c.mean).zip(x_t) {
            *o += r * (c1 * c1 * m + c.variance * c0 * x) / den;
        }
    }
    Ok(out)
}

/// `log p_t(x_t)` of the mixture pushed through the forward process.
pub fn gmm_marginal_logdensity(g: &GaussianMixture, s: &Schedule, t: f64, x_t: &[f64]) -> Result<f64> {
    if x_t.len() != g.dim() {
        return Err(Error::Dimension(format!("{} vs {}", x_t.len(), g.dim())));
    }
    let (c0, c1) = s.mixing_coeffs(t)?;
    let l = g.component_logs(c0, c1, x_t);
    let m = l.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    Ok(m + l.iter().map(|v| (v - m).exp()).sum::<f64>().ln())
}

/// Score of `p_t` from an x0-prediction: `S0 x0_hat + St x_t`.
pub fn score_from_x0hat(s: &Schedule, t: f64, x_t: &[f64], x0_hat: &[f64]) -> Result<Vec<f64>> {
    if !s.is_vp() {
        return Err(Error::Unsupported("score identity needs a vp schedule".into()));
    }
    let (c0, _) = s.mixing_coeffs(t)?;
    let om = s.one_minus_alpha_bar(t)?;
    if om == 0.0 || c0 == 0.0 {
        return Err(Error::Numeric(format!("alpha_bar is 0 or 1 at t = {t}")));
    }
    Ok(x_t
        .iter()
        .zip(x0_hat)
        .map(|(x, y)| c0 / om * y - x / om)
        .collect())
}

pub struct DatasetPredictor {
    pub dataset: Dataset,
    pub schedule: Schedule,
}

impl Predictor for DatasetPredictor {
    fn dim(&self) -> usize {
        self.dataset.dim()
    }
    fn predict(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        posterior_mean_dataset(&self.dataset, &self.schedule, t, x)
    }
}

pub struct GmmPredictor {
    pub mixture: GaussianMixture,
    pub schedule: Schedule,
}

impl Predictor for GmmPredictor {
    fn dim(&self) -> usize {
        self.mixture.dim()
    }
    fn predict(&self, t: f64, x: &[f64]) -> Result<Vec<f64>> {
        posterior_mean_gmm(&self.mixture, &self.schedule, t, x)
    }
}

pub enum Source {
    Dataset(Dataset),
    Mixture(GaussianMixture),
}

/// Posterior-mean predictor, optionally restricted to one label.
pub fn make_predictor(
    source: Source,
    schedule: &Schedule,
    label: Option<u32>,
) -> Result<Box<dyn Predictor>> {
    Ok(match source {
        Source::Dataset(ds) => Box::new(DatasetPredictor {
            dataset: match label {
                Some(l) => ds.subset(l)?,
                None => ds,
            },
            schedule: schedule.clone(),
        }),
        Source::Mixture(g) => Box::new(GmmPredictor {
            mixture: match label {
                Some(l) => g.subset(l)?,
                None => g,
            },
            schedule: schedule.clone(),
        }),
    })
}
