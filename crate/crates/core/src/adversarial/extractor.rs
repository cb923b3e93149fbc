use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::params::{ParamId, ParamStore};
use crate::rng::Streams;
use crate::scalar::Scalar;

/// Fixed feature map used by the perceptual loss. Implementations never expose
/// trainable parameters to the graph.
pub trait FeatureExtractor<T: Scalar> {
    fn features(&self, graph: &mut Graph<T>, x: Var) -> Result<Var>;
}

/// `phi(x) = x`; turns the perceptual loss into plain L1.
#[derive(Clone, Copy, Debug, Default)]
pub struct IdentityExtractor;

impl<T: Scalar> FeatureExtractor<T> for IdentityExtractor {
    fn features(&self, _graph: &mut Graph<T>, x: Var) -> Result<Var> {
        Ok(x)
    }
}

/// Two frozen 3x3 convolutions (3 -> 64 -> 64), each followed by ReLU, with
/// He-normal weights drawn from a fixed seed.
#[derive(Clone, Debug)]
pub struct RandomConvExtractor<T: Scalar> {
    store: ParamStore<T>,
    layers: Vec<(ParamId, ParamId)>,
}

impl<T: Scalar> RandomConvExtractor<T> {
    pub const WIDTH: usize = 64;

    pub fn new(seed: u64) -> Result<Self> {
        Self::with_widths(seed, &[Self::WIDTH, Self::WIDTH])
    }

    pub fn with_widths(seed: u64, widths: &[usize]) -> Result<Self> {
        let mut rng = Streams::new(seed).stream("init.extractor", 0);
        let mut store = ParamStore::new();
        let mut layers = Vec::new();
        let mut cin = 3;
        for (i, &cout) in widths.iter().enumerate() {
            let std = (2.0 / (9 * cin) as f64).sqrt();
            let w = store.add_normal(format!("extractor.conv{i}.w"), vec![cout, cin, 3, 3], std, &mut rng)?;
            let b = store.add(format!("extractor.conv{i}.b"), crate::tensor::Tensor::zeros(vec![cout]))?;
            layers.push((w, b));
            cin = cout;
        }
        Ok(RandomConvExtractor { store, layers })
    }
}

impl<T: Scalar> FeatureExtractor<T> for RandomConvExtractor<T> {
    fn features(&self, graph: &mut Graph<T>, x: Var) -> Result<Var> {
        let mut h = x;
        for &(w, b) in &self.layers {
            let (w, b) = (graph.frozen_param(&self.store, w), graph.frozen_param(&self.store, b));
            h = graph.conv2d(h, w, Some(b), 1, 1)?;
            h = graph.relu(h);
        }
        Ok(h)
    }
}
