//! State algebra shared by execution and tracing.
//!
//! A sampler is written once against [`Element`] and [`RunContext`]. Run it with a
//! [`ConcreteContext`] and it produces numbers; run it with a [`TraceContext`] and
//! every state comes out as an exact linear combination of model outputs `y_i`
//! and noise draws `eps_j`.

use std::collections::{BTreeMap, BTreeSet};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::oracles::Predictor;

/// Identifies one Gaussian draw: the grid step that introduced it and an index
/// within that step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NoiseId {
    pub step: u32,
    pub draw: u32,
}

impl NoiseId {
    pub const fn new(step: u32, draw: u32) -> Self {
        NoiseId { step, draw }
    }
}

/// `sum_i signal[i] * y_i + sum_j noise[j] * eps_j`, keyed by evaluation index and noise id.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AffineState {
    pub signal: BTreeMap<usize, f64>,
    pub noise: BTreeMap<NoiseId, f64>,
}

impl AffineState {
    pub fn signal_basis(i: usize) -> Self {
        let mut s = Self::default();
        s.signal.insert(i, 1.0);
        s
    }

    pub fn noise_basis(id: NoiseId) -> Self {
        let mut s = Self::default();
        s.noise.insert(id, 1.0);
        s
    }

    pub fn signal_sum(&self) -> f64 {
        self.signal.values().sum()
    }

    pub fn noise_norm(&self) -> f64 {
        self.noise.values().map(|b| b * b).sum::<f64>().sqrt()
    }

    /// Substitutes concrete values for the symbols.
    pub fn evaluate(
        &self,
        outputs: &[Vec<f64>],
        noise: &mut dyn FnMut(NoiseId) -> Vec<f64>,
        dim: usize,
    ) -> Result<Vec<f64>> {
        let mut acc = vec![Neumaier::default(); dim];
        for (&i, &c) in &self.signal {
            let y = outputs.get(i).ok_or_else(|| {
                Error::Protocol(format!("state references output {i} which does not exist"))
            })?;
            for (a, v) in acc.iter_mut().zip(y) {
                a.add(c * v);
            }
        }
        for (&id, &b) in &self.noise {
            let e = noise(id);
            for (a, v) in acc.iter_mut().zip(&e) {
                a.add(b * v);
            }
        }
        Ok(acc.into_iter().map(|a| a.total()).collect())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Element {
    Concrete(Vec<f64>),
    Affine(AffineState),
}

impl Element {
    pub fn as_concrete(&self) -> Option<&[f64]> {
        match self {
            Element::Concrete(v) => Some(v),
            Element::Affine(_) => None,
        }
    }

    pub fn as_affine(&self) -> Option<&AffineState> {
        match self {
            Element::Affine(a) => Some(a),
            Element::Concrete(_) => None,
        }
    }
}

/// Compensated summation.
#[derive(Debug, Clone, Copy, Default)]
pub(crate) struct Neumaier {
    sum: f64,
    comp: f64,
}

impl Neumaier {
    pub(crate) fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.comp += (self.sum - t) + x;
        } else {
            self.comp += (x - t) + self.sum;
        }
        self.sum = t;
    }

    pub(crate) fn total(self) -> f64 {
        self.sum + self.comp
    }
}

/// Weighted sum of elements of a single representation.
pub fn lin_combine(terms: &[(f64, &Element)]) -> Result<Element> {
    let Some((_, first)) = terms.first() else {
        return Err(Error::Parameter("lin_combine needs at least one term".into()));
    };
    for (c, _) in terms {
        if !c.is_finite() {
            return Err(Error::NonFinite(format!("coefficient {c}")));
        }
    }
    match first {
        Element::Concrete(v0) => {
            let d = v0.len();
            let mut acc = vec![Neumaier::default(); d];
            for (c, e) in terms {
                let Element::Concrete(v) = e else {
                    return Err(Error::MixedElements);
                };
                if v.len() != d {
                    return Err(Error::Dimension(format!("{} vs {d}", v.len())));
                }
                for (a, x) in acc.iter_mut().zip(v) {
                    a.add(c * x);
                }
            }
            Ok(Element::Concrete(acc.into_iter().map(|a| a.total()).collect()))
        }
        Element::Affine(_) => {
            let mut sig: BTreeMap<usize, Neumaier> = BTreeMap::new();
            let mut noi: BTreeMap<NoiseId, Neumaier> = BTreeMap::new();
            for (c, e) in terms {
                let Element::Affine(a) = e else {
                    return Err(Error::MixedElements);
                };
                for (&k, &v) in &a.signal {
                    sig.entry(k).or_default().add(c * v);
                }
                for (&k, &v) in &a.noise {
                    noi.entry(k).or_default().add(c * v);
                }
            }
            Ok(Element::Affine(AffineState {
                signal: sig.into_iter().map(|(k, a)| (k, a.total())).collect(),
                noise: noi.into_iter().map(|(k, a)| (k, a.total())).collect(),
            }))
        }
    }
}

/// What a sampler needs from its surroundings.
pub trait RunContext {
    /// A standard normal draw that has not been used before in this run.
    fn fresh_noise(&mut self, id: NoiseId) -> Result<Element>;
    /// The model's `x0` prediction at time `t` for input `x`.
    fn apply_model(&mut self, t: f64, x: &Element) -> Result<Element>;
}

fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Mixes several words into one seed.
pub fn derive_seed(parts: &[u64]) -> u64 {
    parts
        .iter()
        .fold(0x5eed_u64, |acc, &p| splitmix(acc ^ splitmix(p)))
}

/// The standard normal vector for `(seed, sample, id)`. Executors and native
/// samplers both draw through this, which is what lets a traced matrix replay
/// the exact noise of a native run.
pub fn noise_vector(seed: u64, sample: u64, id: NoiseId, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[
        seed,
        sample,
        id.step as u64,
        id.draw as u64,
    ]));
    (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Records the input of every model call as a matrix row.
#[derive(Debug, Default)]
pub struct TraceContext {
    pub(crate) times: Vec<f64>,
    pub(crate) inputs: Vec<AffineState>,
    used_noise: BTreeSet<NoiseId>,
}

impl TraceContext {
    pub fn new() -> Self {
        Self::default()
    }

    /// Times of the model calls so far.
    pub fn times(&self) -> &[f64] {
        &self.times
    }

    /// Recorded inputs, one per model call.
    pub fn inputs(&self) -> &[AffineState] {
        &self.inputs
    }
}

impl RunContext for TraceContext {
    fn fresh_noise(&mut self, id: NoiseId) -> Result<Element> {
        if !self.used_noise.insert(id) {
            return Err(Error::Protocol(format!("noise id {id:?} drawn twice")));
        }
        Ok(Element::Affine(AffineState::noise_basis(id)))
    }

    fn apply_model(&mut self, t: f64, x: &Element) -> Result<Element> {
        let Element::Affine(a) = x else {
            return Err(Error::MixedElements);
        };
        if self.times.iter().any(|&s| s == t) {
            return Err(Error::Protocol(format!("model evaluated twice at t = {t}")));
        }
        let k = self.inputs.len();
        self.times.push(t);
        self.inputs.push(a.clone());
        Ok(Element::Affine(AffineState::signal_basis(k)))
    }
}

/// Runs the real predictor and draws real noise.
pub struct ConcreteContext<'a> {
    predictor: &'a dyn Predictor,
    seed: u64,
    sample: u64,
    used_noise: BTreeSet<NoiseId>,
    /// Every model output in call order.
    pub outputs: Vec<Vec<f64>>,
    /// Times of the model calls.
    pub times: Vec<f64>,
}

impl<'a> ConcreteContext<'a> {
    pub fn new(predictor: &'a dyn Predictor, seed: u64, sample: u64) -> Self {
        ConcreteContext {
            predictor,
            seed,
            sample,
            used_noise: BTreeSet::new(),
            outputs: vec![],
            times: vec![],
        }
    }

    pub fn noise(&self, id: NoiseId) -> Vec<f64> {
        noise_vector(self.seed, self.sample, id, self.predictor.dim())
    }
}

impl RunContext for ConcreteContext<'_> {
    fn fresh_noise(&mut self, id: NoiseId) -> Result<Element> {
        if !self.used_noise.insert(id) {
            return Err(Error::Protocol(format!("noise id {id:?} drawn twice")));
        }
        Ok(Element::Concrete(self.noise(id)))
    }

    fn apply_model(&mut self, t: f64, x: &Element) -> Result<Element> {
        let Element::Concrete(v) = x else {
            return Err(Error::MixedElements);
        };
        if v.len() != self.predictor.dim() {
            return Err(Error::Dimension(format!(
                "state has {} components, predictor expects {}",
                v.len(),
                self.predictor.dim()
            )));
        }
        let y = self.predictor.predict(t, v)?;
        self.outputs.push(y.clone());
        self.times.push(t);
        Ok(Element::Concrete(y))
    }
}
