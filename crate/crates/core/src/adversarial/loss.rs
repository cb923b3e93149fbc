use serde::{Deserialize, Serialize};

use crate::adversarial::extractor::FeatureExtractor;
use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::scalar::Scalar;

/// Clamp applied inside every logarithm.
pub const LOG_EPS: f64 = 1e-8;

/// `(alpha, lambda1, lambda2)` weighting the adversarial, L1 and perceptual terms.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub alpha: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { alpha: 5.0, lambda1: 1.0, lambda2: 1.0 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("alpha", self.alpha), ("lambda1", self.lambda1), ("lambda2", self.lambda2)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::config(format!("loss weight {name} must be a nonnegative number, got {v}")));
            }
        }
        Ok(())
    }
}

/// Generator-side adversarial objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    /// `-log D(fake)`.
    #[default]
    NonSaturating,
    /// `log(1 - D(fake))`.
    Minimax,
}

pub fn combined_score(r_a: f64, r_s: f64) -> f64 {
    r_a * r_s
}

fn mean_log<T: Scalar>(g: &mut Graph<T>, s: Var) -> Var {
    let l = g.log_clamped(s, T::lit(LOG_EPS));
    g.mean(l)
}

fn mean_log_one_minus<T: Scalar>(g: &mut Graph<T>, s: Var) -> Var {
    let neg = g.mul_scalar(s, -T::one());
    let one_minus = g.add_scalar(neg, T::one());
    mean_log(g, one_minus)
}

/// Discriminator loss: the negated sum of `E[log D(real)] + E[log(1 - D(fake))]`
/// over both judges. Fake scores should come from detached generator outputs.
pub fn gan_loss_d<T: Scalar>(g: &mut Graph<T>, real_a: Var, fake_a: Var, real_s: Var, fake_s: Var) -> Result<Var> {
    let terms = [
        mean_log(g, real_a),
        mean_log_one_minus(g, fake_a),
        mean_log(g, real_s),
        mean_log_one_minus(g, fake_s),
    ];
    let mut total = terms[0];
    for &t in &terms[1..] {
        total = g.add(total, t)?;
    }
    Ok(g.mul_scalar(total, -T::one()))
}

/// Generator adversarial loss over both judges' scores of the generated image.
pub fn gan_loss_g<T: Scalar>(g: &mut Graph<T>, fake_a: Var, fake_s: Var, mode: GanMode) -> Result<Var> {
    match mode {
        GanMode::NonSaturating => {
            let a = mean_log(g, fake_a);
            let s = mean_log(g, fake_s);
            let sum = g.add(a, s)?;
            Ok(g.mul_scalar(sum, -T::one()))
        }
        GanMode::Minimax => {
            let a = mean_log_one_minus(g, fake_a);
            let s = mean_log_one_minus(g, fake_s);
            g.add(a, s)
        }
    }
}

/// Mean absolute difference.
pub fn l1_loss<T: Scalar>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let d = g.sub(a, b)?;
    let d = g.abs(d);
    Ok(g.mean(d))
}

/// Mean absolute difference of extracted features.
pub fn perceptual_loss<T: Scalar, E: FeatureExtractor<T> + ?Sized>(g: &mut Graph<T>, a: Var, b: Var, extractor: &E) -> Result<Var> {
    let fa = extractor.features(g, a)?;
    let fb = extractor.features(g, b)?;
    l1_loss(g, fa, fb)
}

/// `alpha * gan + lambda1 * l1 + lambda2 * per`.
pub fn full_loss<T: Scalar>(g: &mut Graph<T>, gan: Var, l1: Var, per: Var, w: &LossWeights) -> Result<Var> {
    let a = g.mul_scalar(gan, T::lit(w.alpha));
    let b = g.mul_scalar(l1, T::lit(w.lambda1));
    let c = g.mul_scalar(per, T::lit(w.lambda2));
    let ab = g.add(a, b)?;
    g.add(ab, c)
}
