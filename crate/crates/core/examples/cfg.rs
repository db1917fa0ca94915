//! Classifier-free guidance with a labelled mixture: a larger scale pushes
//! samples past the conditional mode.

use nilab::affine::Element;
use nilab::coeffmatrix::trace_nfe;
use nilab::engine::{run_matrix, RunConfig};
use nilab::guidance::cfg_combine;
use nilab::oracles::{make_predictor, Component, GaussianMixture, Predictor, Source};
use nilab::samplers::{SamplerKind, SamplerSpec};
use nilab::schedule::{GridRule, Schedule};

struct Guided {
    good: Box<dyn Predictor>,
    bad: Box<dyn Predictor>,
    lambda: f64,
}

impl Predictor for Guided {
    fn dim(&self) -> usize {
        self.good.dim()
    }
    fn predict(&self, t: f64, x: &[f64]) -> nilab::Result<Vec<f64>> {
        let good = Element::Concrete(self.good.predict(t, x)?);
        let bad = Element::Concrete(self.bad.predict(t, x)?);
        match cfg_combine(&bad, &good, self.lambda)? {
            Element::Concrete(v) => Ok(v),
            Element::Affine(_) => unreachable!("concrete inputs give a concrete output"),
        }
    }
}

fn main() -> nilab::Result<()> {
    let mixture = GaussianMixture::new(vec![
        Component { weight: 1.0, mean: vec![-1.0, 0.0], variance: 0.05, label: Some(0) },
        Component { weight: 1.0, mean: vec![1.0, 0.0], variance: 0.05, label: Some(1) },
    ])?;
    let s = Schedule::ddpm_default();
    let m = trace_nfe(&SamplerSpec::new(SamplerKind::Ddim), &s, 18, GridRule::Trailing)?;
    for lambda in [0.0, 1.0, 2.0, 4.0] {
        let p = Guided {
            good: make_predictor(Source::Mixture(mixture.clone()), &s, Some(1))?,
            bad: make_predictor(Source::Mixture(mixture.clone()), &s, None)?,
            lambda,
        };
        let out = run_matrix(&RunConfig::new(&m, &p, 500, 3))?;
        let mean_x = out.samples.iter().map(|x| x[0]).sum::<f64>() / out.samples.len() as f64;
        println!("lambda {lambda:>3}: mean x = {mean_x:+.3}");
    }
    Ok(())
}
