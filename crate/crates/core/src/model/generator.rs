use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, Var};
use crate::model::blocks::{Apatb, Patb};
use crate::model::config::{ModelConfig, Variant};
use crate::model::decoder::Decoder;
use crate::model::encoder::Encoder;
use crate::model::layers::Ctx;
use crate::params::ParamStore;
use crate::pose::NUM_JOINTS;
use crate::rng::{StreamRng, Streams};
use crate::scalar::Scalar;
use crate::tensor::{dims4, Tensor};

/// Parameter-name prefix of the generator.
pub const PREFIX: &str = "gen";

/// Codes threaded through the transfer cascade.
#[derive(Clone, Copy, Debug)]
pub enum BlockState {
    /// Image code and joint pose code (`C` channels before the first block, `2C` after).
    Patn { image: Var, pose: Var },
    Apatn { image: Var, pose_c: Var, pose_t: Var },
}

impl BlockState {
    pub fn image(&self) -> Var {
        match *self {
            BlockState::Patn { image, .. } | BlockState::Apatn { image, .. } => image,
        }
    }
}

#[derive(Clone, Debug)]
enum Cascade {
    Patn(Vec<Patb>),
    Apatn(Vec<Apatb>),
}

#[derive(Clone, Debug)]
struct Net {
    enc_a: Encoder,
    enc_s: Encoder,
    cascade: Cascade,
    dec: Decoder,
}

/// Per-block attention in one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub enum AttentionMap<T: Scalar> {
    /// Sigmoid mask `B x C x h x w`.
    Mask(Tensor<T>),
    /// Row-stochastic alignment `B x (hw) x (hw)`.
    Alignment(Tensor<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord<T: Scalar> {
    pub code_size: (usize, usize),
    pub blocks: Vec<AttentionMap<T>>,
}

pub struct GenOutput {
    pub image: Var,
    pub attention: Vec<Var>,
}

/// Appearance encoder, shape encoder, transfer cascade and decoder, with their parameters.
#[derive(Clone, Debug)]
pub struct Generator<T: Scalar> {
    config: ModelConfig,
    pub store: ParamStore<T>,
    net: Net,
}

impl<T: Scalar> Generator<T> {
    /// Builds the network with weights drawn from the `init.gen` stream of `seed`.
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = Streams::new(seed).stream("init.gen", 0);
        let mut store = ParamStore::new();
        let cfg = &config;
        let std = cfg.init_std;
        let enc_a = Encoder::new(&mut store, "gen.enc_a", 3, &cfg.encoder_channels, cfg.encoder_norm, std, &mut rng)?;
        let enc_s = Encoder::new(
            &mut store,
            "gen.enc_s",
            cfg.pose_input_channels(),
            &cfg.encoder_channels,
            cfg.encoder_norm,
            std,
            &mut rng,
        )?;
        let c = cfg.base_channels;
        let cascade = match cfg.variant {
            Variant::Patn => Cascade::Patn(
                (0..cfg.num_blocks)
                    .map(|i| {
                        let pose_channels = if i == 0 { c } else { 2 * c };
                        Patb::new(&mut store, &block_name(i), cfg, pose_channels, &mut rng)
                    })
                    .collect::<Result<_>>()?,
            ),
            Variant::Apatn => Cascade::Apatn(
                (0..cfg.num_blocks)
                    .map(|i| Apatb::new(&mut store, &block_name(i), cfg, i + 1 < cfg.num_blocks, &mut rng))
                    .collect::<Result<_>>()?,
            ),
        };
        let dec = Decoder::new(&mut store, "gen.dec", cfg, &mut rng)?;
        Ok(Generator {
            config,
            store,
            net: Net { enc_a, enc_s, cascade, dec },
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    fn ctx<'a>(&'a mut self, graph: &'a mut Graph<T>, mode: Mode, rng: &'a mut StreamRng, frozen: bool) -> (Ctx<'a, T>, &'a Net) {
        (
            Ctx { graph, store: &mut self.store, mode, rng, frozen },
            &self.net,
        )
    }

    pub fn encode_appearance(&mut self, graph: &mut Graph<T>, mode: Mode, rng: &mut StreamRng, p_c: Var) -> Result<Var> {
        let (mut cx, net) = self.ctx(graph, mode, rng, false);
        net.enc_a.forward(&mut cx, p_c)
    }

    /// Initial pose code(s): one joint code from `S_c || S_t` for PATN, two codes
    /// through the same shared encoder for APATN.
    pub fn encode_shape(
        &mut self,
        graph: &mut Graph<T>,
        mode: Mode,
        rng: &mut StreamRng,
        s_c: Var,
        s_t: Var,
    ) -> Result<(Var, Option<Var>)> {
        let variant = self.config.variant;
        let (mut cx, net) = self.ctx(graph, mode, rng, false);
        encode_shape(net, &mut cx, variant, s_c, s_t)
    }

    /// Full forward pass on graph inputs `B x 3 x H x W` and `B x 18 x H x W` heatmaps.
    #[allow(clippy::too_many_arguments)]
    pub fn forward(
        &mut self,
        graph: &mut Graph<T>,
        mode: Mode,
        rng: &mut StreamRng,
        frozen: bool,
        p_c: Var,
        s_c: Var,
        s_t: Var,
    ) -> Result<GenOutput> {
        let [b, ch, h, w] = dims4(graph.shape(p_c))?;
        if ch != 3 {
            return Err(Error::config(format!("condition image must have 3 channels, got {ch}")));
        }
        for (name, s) in [("S_c", s_c), ("S_t", s_t)] {
            if graph.shape(s) != [b, NUM_JOINTS, h, w] {
                return Err(Error::config(format!(
                    "heatmap {name} must be {:?}, got {:?}",
                    [b, NUM_JOINTS, h, w],
                    graph.shape(s)
                )));
            }
        }
        let variant = self.config.variant;
        let num_blocks = self.config.num_blocks;
        let (mut cx, net) = self.ctx(graph, mode, rng, frozen);
        let image = net.enc_a.forward(&mut cx, p_c)?;
        let (pose, pose_t) = encode_shape(net, &mut cx, variant, s_c, s_t)?;
        let mut state = match pose_t {
            None => BlockState::Patn { image, pose },
            Some(pose_t) => BlockState::Apatn { image, pose_c: pose, pose_t },
        };
        let mut attention = Vec::with_capacity(num_blocks);
        for i in 0..num_blocks {
            let (next, att) = step(net, &mut cx, i, state)?;
            state = next;
            attention.push(att);
        }
        let image = net.dec.forward(&mut cx, state.image())?;
        Ok(GenOutput { image, attention })
    }

    /// Runs block `index` of the cascade on `state`.
    pub fn transfer_step(
        &mut self,
        graph: &mut Graph<T>,
        mode: Mode,
        rng: &mut StreamRng,
        index: usize,
        state: BlockState,
    ) -> Result<(BlockState, Var)> {
        let (mut cx, net) = self.ctx(graph, mode, rng, false);
        step(net, &mut cx, index, state)
    }

    pub fn decode(&mut self, graph: &mut Graph<T>, mode: Mode, rng: &mut StreamRng, code: Var) -> Result<Var> {
        let (mut cx, net) = self.ctx(graph, mode, rng, false);
        net.dec.forward(&mut cx, code)
    }

    /// Generates `P_g` for a batch of tensors without recording gradients.
    pub fn generate(
        &mut self,
        p_c: &Tensor<T>,
        s_c: &Tensor<T>,
        s_t: &Tensor<T>,
        mode: Mode,
        rng: &mut StreamRng,
    ) -> Result<(Tensor<T>, AttentionRecord<T>)> {
        let mut g = Graph::new();
        let (pc, sc, st) = (g.constant(p_c.clone()), g.constant(s_c.clone()), g.constant(s_t.clone()));
        let out = self.forward(&mut g, mode, rng, true, pc, sc, st)?;
        g.check_finite()?;
        let [_, _, h, w] = dims4(p_c.shape())?;
        let blocks = out
            .attention
            .iter()
            .map(|&a| match self.config.variant {
                Variant::Patn => AttentionMap::Mask(g.value(a).clone()),
                Variant::Apatn => AttentionMap::Alignment(g.value(a).clone()),
            })
            .collect();
        Ok((
            g.value(out.image).clone(),
            AttentionRecord { code_size: (h / 4, w / 4), blocks },
        ))
    }
}

pub fn block_name(i: usize) -> String {
    format!("{PREFIX}.block{i}")
}

fn encode_shape<T: Scalar>(net: &Net, cx: &mut Ctx<'_, T>, variant: Variant, s_c: Var, s_t: Var) -> Result<(Var, Option<Var>)> {
    match variant {
        Variant::Patn => {
            let joint = cx.graph.concat_channels(s_c, s_t)?;
            Ok((net.enc_s.forward(cx, joint)?, None))
        }
        Variant::Apatn => {
            let c = net.enc_s.forward(cx, s_c)?;
            let t = net.enc_s.forward(cx, s_t)?;
            Ok((c, Some(t)))
        }
    }
}

fn step<T: Scalar>(net: &Net, cx: &mut Ctx<'_, T>, index: usize, state: BlockState) -> Result<(BlockState, Var)> {
    match (&net.cascade, state) {
        (Cascade::Patn(blocks), BlockState::Patn { image, pose }) => {
            let block = blocks
                .get(index)
                .ok_or_else(|| Error::config(format!("no transfer block {index}")))?;
            let out = block.forward(cx, image, pose)?;
            Ok((BlockState::Patn { image: out.image, pose: out.pose }, out.mask))
        }
        (Cascade::Apatn(blocks), BlockState::Apatn { image, pose_c, pose_t }) => {
            let block = blocks
                .get(index)
                .ok_or_else(|| Error::config(format!("no transfer block {index}")))?;
            let out = block.forward(cx, image, pose_c, pose_t)?;
            let (pose_c, pose_t) = out.poses.unwrap_or((pose_c, pose_t));
            Ok((BlockState::Apatn { image: out.image, pose_c, pose_t }, out.alignment))
        }
        _ => Err(Error::config("block state does not match the generator variant")),
    }
}
