//! The two transfer-block designs.
//!
//! [`Patb`] gates the convolved image code with a sigmoid mask computed from a
//! joint pose code. [`Apatb`] computes a `(hw) x (hw)` row-stochastic alignment
//! between target and condition pose codes and moves image features with it.

use rand::Rng;

use crate::error::{Error, Result};
use crate::graph::Var;
use crate::model::config::ModelConfig;
use crate::model::layers::{Activation, BlockSpec, Conv, ConvBlock, Ctx, Norm};
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::dims4;

fn branch_spec(cfg: &ModelConfig, cin: usize, residual: bool) -> BlockSpec {
    BlockSpec {
        cin,
        cout: cfg.base_channels,
        norm: cfg.block_norm,
        act: Activation::Relu,
        dropout: cfg.dropout_rate,
        residual,
        post_act: false,
    }
}

/// Output of one PATB step.
pub struct PatbOutput {
    pub image: Var,
    pub pose: Var,
    /// Sigmoid attention mask, same shape as the image code.
    pub mask: Var,
}

#[derive(Clone, Debug)]
pub struct Patb {
    pub conv_s: ConvBlock,
    pub conv_p: ConvBlock,
    pose_channels: usize,
}

impl Patb {
    /// `pose_channels` is `C` for the first block and `2C` afterwards.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        pose_channels: usize,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.base_channels;
        Ok(Patb {
            conv_s: ConvBlock::new(store, &format!("{name}.conv_s"), branch_spec(cfg, pose_channels, false), cfg.init_std, rng)?,
            conv_p: ConvBlock::new(store, &format!("{name}.conv_p"), branch_spec(cfg, c, false), cfg.init_std, rng)?,
            pose_channels,
        })
    }

    pub fn count(cfg: &ModelConfig, pose_channels: usize) -> usize {
        ConvBlock::count(&branch_spec(cfg, pose_channels, false))
            + ConvBlock::count(&branch_spec(cfg, cfg.base_channels, false))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, image: Var, pose: Var) -> Result<PatbOutput> {
        let pose_shape = dims4(cx.graph.shape(pose))?;
        let img_shape = dims4(cx.graph.shape(image))?;
        if pose_shape[1] != self.pose_channels
            || (pose_shape[0], pose_shape[2], pose_shape[3]) != (img_shape[0], img_shape[2], img_shape[3])
        {
            return Err(Error::config(format!(
                "PATB expects a {}-channel pose code matching image code {img_shape:?}, got {pose_shape:?}",
                self.pose_channels
            )));
        }
        let s = self.conv_s.forward(cx, pose)?;
        let mask = cx.graph.sigmoid(s);
        let p = self.conv_p.forward(cx, image)?;
        let attended = cx.graph.mul(mask, p)?;
        let image = cx.graph.add(attended, image)?;
        let pose = cx.graph.concat_channels(s, image)?;
        Ok(PatbOutput { image, pose, mask })
    }
}

pub struct ApatbOutput {
    pub image: Var,
    /// Updated condition and target pose codes; `None` for a block that skips the update.
    pub poses: Option<(Var, Var)>,
    /// Row-stochastic alignment, `B x (hw) x (hw)`; row = target location, column = condition location.
    pub alignment: Var,
}

#[derive(Clone, Debug)]
pub struct Apatb {
    pub theta: Conv,
    pub phi: Conv,
    pub gamma: Conv,
    pub restore: Conv,
    pub fuse: Conv,
    pub fuse_norm: Norm,
    pub pose_update: Option<ConvBlock>,
    memory_cap: usize,
}

impl Apatb {
    /// `pose_update = false` drops the shared pose residual block; used for the
    /// last block, whose pose codes are never read.
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cfg: &ModelConfig,
        pose_update: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let c = cfg.base_channels;
        let r = cfg.attn_reduced_channels;
        let std = cfg.init_std;
        Ok(Apatb {
            theta: Conv::new(store, &format!("{name}.theta"), c, r, 1, 1, false, std, rng)?,
            phi: Conv::new(store, &format!("{name}.phi"), c, r, 1, 1, false, std, rng)?,
            gamma: Conv::new(store, &format!("{name}.gamma"), c, r, 1, 1, true, std, rng)?,
            restore: Conv::new(store, &format!("{name}.restore"), r, c, 1, 1, true, std, rng)?,
            fuse: Conv::new(store, &format!("{name}.fuse"), 2 * c, c, 1, 1, false, std, rng)?,
            fuse_norm: Norm::new(store, &format!("{name}.fuse_norm"), cfg.block_norm, c)?,
            pose_update: if pose_update {
                Some(ConvBlock::new(store, &format!("{name}.conv_s"), branch_spec(cfg, c, true), std, rng)?)
            } else {
                None
            },
            memory_cap: cfg.alignment_memory_cap,
        })
    }

    pub fn count(cfg: &ModelConfig, pose_update: bool) -> usize {
        let c = cfg.base_channels;
        let r = cfg.attn_reduced_channels;
        let attention = 2 * Conv::count(c, r, 1, false) + Conv::count(c, r, 1, true) + Conv::count(r, c, 1, true);
        let fuse = Conv::count(2 * c, c, 1, false) + Norm::count(c);
        let pose = if pose_update { ConvBlock::count(&branch_spec(cfg, c, true)) } else { 0 };
        attention + fuse + pose
    }

    fn check_memory<T: Scalar>(&self, batch: usize, hw: usize) -> Result<()> {
        let bytes = (batch as u128) * (hw as u128) * (hw as u128) * std::mem::size_of::<T>() as u128;
        if bytes > self.memory_cap as u128 {
            return Err(Error::Resource(format!(
                "alignment of {batch} x {hw} x {hw} needs {bytes} bytes, cap is {}",
                self.memory_cap
            )));
        }
        Ok(())
    }

    /// `softmax_rows(theta(F_t)^T phi(F_c))` over flattened spatial positions.
    pub fn alignment<T: Scalar>(&self, cx: &mut Ctx<'_, T>, pose_t: Var, pose_c: Var) -> Result<Var> {
        let [b, _, h, w] = dims4(cx.graph.shape(pose_t))?;
        if cx.graph.shape(pose_t) != cx.graph.shape(pose_c) {
            return Err(Error::config(format!(
                "alignment: pose codes differ in shape {:?} vs {:?}",
                cx.graph.shape(pose_t),
                cx.graph.shape(pose_c)
            )));
        }
        let hw = h * w;
        self.check_memory::<T>(b, hw)?;
        let r = self.theta.cout;
        let q = self.theta.forward(cx, pose_t)?;
        let q = cx.graph.reshape(q, vec![b, r, hw])?;
        let k = self.phi.forward(cx, pose_c)?;
        let k = cx.graph.reshape(k, vec![b, r, hw])?;
        let logits = cx.graph.matmul_t(q, k, true, false)?;
        Ok(cx.graph.softmax_rows(logits))
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, image: Var, pose_c: Var, pose_t: Var) -> Result<ApatbOutput> {
        let [b, c, h, w] = dims4(cx.graph.shape(image))?;
        if cx.graph.shape(pose_c) != [b, c, h, w] {
            return Err(Error::config(format!(
                "APATB expects pose codes shaped like the image code {:?}, got {:?}",
                [b, c, h, w],
                cx.graph.shape(pose_c)
            )));
        }
        let alignment = self.alignment(cx, pose_t, pose_c)?;
        let r = self.gamma.cout;
        let v = self.gamma.forward(cx, image)?;
        let v = cx.graph.reshape(v, vec![b, r, h * w])?;
        // (A V^T)^T = V A^T, already channel-major
        let moved = cx.graph.matmul_t(v, alignment, false, true)?;
        let moved = cx.graph.reshape(moved, vec![b, r, h, w])?;
        let moved = self.restore.forward(cx, moved)?;
        let fused = cx.graph.concat_channels(moved, image)?;
        let fused = self.fuse.forward(cx, fused)?;
        let image = self.fuse_norm.forward(cx, fused)?;
        let poses = match &self.pose_update {
            Some(block) => Some((block.forward(cx, pose_c)?, block.forward(cx, pose_t)?)),
            None => None,
        };
        Ok(ApatbOutput { image, poses, alignment })
    }
}
