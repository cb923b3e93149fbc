use rand::Rng;

use crate::error::Result;
use crate::graph::Var;
use crate::model::config::ModelConfig;
use crate::model::layers::{Activation, BlockSpec, Conv, ConvBlock, Ctx};
use crate::params::ParamStore;
use crate::scalar::Scalar;

/// `[upsample x2 -> residual block] x 2 -> conv7 -> tanh`, mirroring the encoder widths.
#[derive(Clone, Debug)]
pub struct Decoder {
    stages: Vec<ConvBlock>,
    out: Conv,
}

fn stage_specs(cfg: &ModelConfig) -> [BlockSpec; 2] {
    let e = &cfg.encoder_channels;
    let spec = |cin, cout| BlockSpec {
        cin,
        cout,
        norm: cfg.block_norm,
        act: Activation::Relu,
        dropout: 0.0,
        residual: true,
        post_act: false,
    };
    [spec(cfg.base_channels, e[1]), spec(e[1], e[0])]
}

impl Decoder {
    pub fn new<T: Scalar, R: Rng + ?Sized>(store: &mut ParamStore<T>, name: &str, cfg: &ModelConfig, rng: &mut R) -> Result<Self> {
        let stages = stage_specs(cfg)
            .iter()
            .enumerate()
            .map(|(i, s)| ConvBlock::new(store, &format!("{name}.res{i}"), *s, cfg.init_std, rng))
            .collect::<Result<Vec<_>>>()?;
        let out = Conv::new(store, &format!("{name}.out"), cfg.encoder_channels[0], 3, 7, 1, true, cfg.init_std, rng)?;
        Ok(Decoder { stages, out })
    }

    pub fn count(cfg: &ModelConfig) -> usize {
        stage_specs(cfg).iter().map(ConvBlock::count).sum::<usize>() + Conv::count(cfg.encoder_channels[0], 3, 7, true)
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, code: Var) -> Result<Var> {
        let mut h = code;
        for stage in &self.stages {
            h = cx.graph.upsample2x(h)?;
            h = stage.forward(cx, h)?;
        }
        let h = self.out.forward(cx, h)?;
        Ok(cx.graph.tanh(h))
    }
}
