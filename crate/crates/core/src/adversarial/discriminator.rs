use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::model::layers::{Activation, BlockSpec, Conv, ConvBlock, Ctx, Norm, NormKind};
use crate::params::ParamStore;
use crate::pose::NUM_JOINTS;
use crate::rng::Streams;
use crate::scalar::Scalar;
use crate::tensor::dims4;

pub const LEAKY_SLOPE: f64 = 0.2;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiscConfig {
    /// Widths after the two stride-2 convolutions.
    pub channels: [usize; 2],
    pub num_res_blocks: usize,
    pub norm: NormKind,
    pub init_std: f64,
}

impl Default for DiscConfig {
    fn default() -> Self {
        DiscConfig {
            channels: [64, 128],
            num_res_blocks: 3,
            norm: NormKind::Instance,
            init_std: 0.02,
        }
    }
}

impl DiscConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.contains(&0) {
            return Err(Error::config("discriminator channels must be positive"));
        }
        if !(self.init_std > 0.0) {
            return Err(Error::config("discriminator init_std must be positive"));
        }
        Ok(())
    }
}

/// Two stride-2 convolutions, residual blocks, global pooling, a 1x1 affine layer and a sigmoid.
#[derive(Clone, Debug)]
pub struct Discriminator<T: Scalar> {
    pub store: ParamStore<T>,
    in_channels: usize,
    down0: Conv,
    down1: Conv,
    norm1: Norm,
    blocks: Vec<ConvBlock>,
    head: Conv,
}

impl<T: Scalar> Discriminator<T> {
    pub fn new(name: &str, in_channels: usize, cfg: &DiscConfig, seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = Streams::new(seed).stream(&format!("init.{name}"), 0);
        Self::build(name, in_channels, cfg, &mut rng)
    }

    fn build<R: Rng>(name: &str, in_channels: usize, cfg: &DiscConfig, rng: &mut R) -> Result<Self> {
        let mut store = ParamStore::new();
        let std = cfg.init_std;
        let [c0, c1] = cfg.channels;
        let act = Activation::Leaky(LEAKY_SLOPE);
        let down0 = Conv::new(&mut store, &format!("{name}.down0"), in_channels, c0, 3, 2, true, std, rng)?;
        let down1 = Conv::new(&mut store, &format!("{name}.down1"), c0, c1, 3, 2, false, std, rng)?;
        let norm1 = Norm::new(&mut store, &format!("{name}.norm1"), cfg.norm, c1)?;
        let spec = BlockSpec {
            cin: c1,
            cout: c1,
            norm: cfg.norm,
            act,
            dropout: 0.0,
            residual: true,
            post_act: true,
        };
        let blocks = (0..cfg.num_res_blocks)
            .map(|i| ConvBlock::new(&mut store, &format!("{name}.res{i}"), spec, std, rng))
            .collect::<Result<_>>()?;
        let head = Conv::new(&mut store, &format!("{name}.head"), c1, 1, 1, 1, true, std, rng)?;
        Ok(Discriminator { store, in_channels, down0, down1, norm1, blocks, head })
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    /// Realness score in `(0, 1)` per batch element, shape `[B]`.
    ///
    /// With `frozen`, parameters enter as constants so no gradient reaches them.
    pub fn forward(&mut self, graph: &mut Graph<T>, x: Var, frozen: bool) -> Result<Var> {
        let [b, c, _, _] = dims4(graph.shape(x))?;
        if c != self.in_channels {
            return Err(Error::config(format!(
                "discriminator expects {} input channels, got {c}",
                self.in_channels
            )));
        }
        // no dropout inside, so the stream is never drawn from
        let mut rng = Streams::new(0).stream("disc.unused", 0);
        let mut cx = Ctx { graph, store: &mut self.store, mode: Mode::Train, rng: &mut rng, frozen };
        let slope = T::lit(LEAKY_SLOPE);
        let h = self.down0.forward(&mut cx, x)?;
        let h = cx.graph.leaky_relu(h, slope);
        let h = self.down1.forward(&mut cx, h)?;
        let h = self.norm1.forward(&mut cx, h)?;
        let mut h = cx.graph.leaky_relu(h, slope);
        for block in &self.blocks {
            h = block.forward(&mut cx, h)?;
        }
        let pooled = cx.graph.global_avg_pool(h)?;
        let logit = self.head.forward(&mut cx, pooled)?;
        let score = cx.graph.sigmoid(logit);
        cx.graph.reshape(score, vec![b])
    }
}

pub fn count_disc(cfg: &DiscConfig, in_channels: usize) -> usize {
    let [c0, c1] = cfg.channels;
    let spec = BlockSpec {
        cin: c1,
        cout: c1,
        norm: cfg.norm,
        act: Activation::Leaky(LEAKY_SLOPE),
        dropout: 0.0,
        residual: true,
        post_act: true,
    };
    Conv::count(in_channels, c0, 3, true)
        + Conv::count(c0, c1, 3, false)
        + Norm::count(c1)
        + cfg.num_res_blocks * ConvBlock::count(&spec)
        + Conv::count(c1, 1, 1, true)
}

/// Appearance (`P || P'`, 6 channels) and shape (`S_t || P`, 21 channels) judges.
#[derive(Clone, Debug)]
pub struct Discriminators<T: Scalar> {
    pub appearance: Discriminator<T>,
    pub shape: Discriminator<T>,
}

impl<T: Scalar> Discriminators<T> {
    pub fn new(cfg: &DiscConfig, seed: u64) -> Result<Self> {
        Ok(Discriminators {
            appearance: Discriminator::new("disc_a", 6, cfg, seed)?,
            shape: Discriminator::new("disc_s", NUM_JOINTS + 3, cfg, seed)?,
        })
    }

    /// `D_A(p_a, p_b)`: scores `[B]`.
    pub fn appearance_score(&mut self, graph: &mut Graph<T>, p_a: Var, p_b: Var, frozen: bool) -> Result<Var> {
        check_pair(graph, p_a, p_b, 3, 3)?;
        let x = graph.concat_channels(p_a, p_b)?;
        self.appearance.forward(graph, x, frozen)
    }

    /// `D_S(s_t, p)`: scores `[B]`.
    pub fn shape_score(&mut self, graph: &mut Graph<T>, s_t: Var, p: Var, frozen: bool) -> Result<Var> {
        check_pair(graph, s_t, p, NUM_JOINTS, 3)?;
        let x = graph.concat_channels(s_t, p)?;
        self.shape.forward(graph, x, frozen)
    }
}

fn check_pair<T: Scalar>(graph: &Graph<T>, a: Var, b: Var, ca: usize, cb: usize) -> Result<()> {
    let sa = dims4(graph.shape(a))?;
    let sb = dims4(graph.shape(b))?;
    if sa[1] != ca || sb[1] != cb || (sa[0], sa[2], sa[3]) != (sb[0], sb[2], sb[3]) {
        return Err(Error::config(format!(
            "discriminator inputs must be B x {ca} x H x W and B x {cb} x H x W, got {sa:?} and {sb:?}"
        )));
    }
    Ok(())
}
