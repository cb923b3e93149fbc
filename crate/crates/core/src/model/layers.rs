//! Parameterized building blocks shared by the generator, discriminators and
//! feature extractor.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::graph::{Graph, Mode, Var};
use crate::params::{BufferId, ParamId, ParamStore};
use crate::rng::StreamRng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const NORM_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

/// Everything a layer needs during one forward call.
pub struct Ctx<'a, T: Scalar> {
    pub graph: &'a mut Graph<T>,
    pub store: &'a mut ParamStore<T>,
    pub mode: Mode,
    pub rng: &'a mut StreamRng,
    /// Parameters enter the graph as constants; no gradient reaches them.
    pub frozen: bool,
}

impl<T: Scalar> Ctx<'_, T> {
    pub fn param(&mut self, id: ParamId) -> Var {
        if self.frozen {
            self.graph.frozen_param(self.store, id)
        } else {
            self.graph.param(self.store, id)
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NormKind {
    Batch,
    Instance,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Activation {
    Relu,
    Leaky(f64),
}

impl Activation {
    pub fn apply<T: Scalar>(self, g: &mut Graph<T>, x: Var) -> Var {
        match self {
            Activation::Relu => g.relu(x),
            Activation::Leaky(slope) => g.leaky_relu(x, T::lit(slope)),
        }
    }
}

/// Square-kernel convolution with "same" padding (`k / 2`).
#[derive(Clone, Debug)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub stride: usize,
    pub cin: usize,
    pub cout: usize,
    pub k: usize,
}

impl Conv {
    #[allow(clippy::too_many_arguments)]
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        cin: usize,
        cout: usize,
        k: usize,
        stride: usize,
        bias: bool,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add_normal(format!("{name}.w"), vec![cout, cin, k, k], std, rng)?;
        let bias = if bias {
            Some(store.add(format!("{name}.b"), Tensor::zeros(vec![cout]))?)
        } else {
            None
        };
        Ok(Conv { weight, bias, stride, cin, cout, k })
    }

    pub fn count(cin: usize, cout: usize, k: usize, bias: bool) -> usize {
        cout * cin * k * k + if bias { cout } else { 0 }
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let w = cx.param(self.weight);
        let b = self.bias.map(|b| cx.param(b));
        cx.graph.conv2d(x, w, b, self.stride, self.k / 2)
    }
}

#[derive(Clone, Debug)]
pub enum Norm {
    Instance {
        gamma: ParamId,
        beta: ParamId,
    },
    Batch {
        gamma: ParamId,
        beta: ParamId,
        running_mean: BufferId,
        running_var: BufferId,
    },
}

impl Norm {
    pub fn new<T: Scalar>(store: &mut ParamStore<T>, name: &str, kind: NormKind, c: usize) -> Result<Self> {
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(vec![c]))?;
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(vec![c]))?;
        Ok(match kind {
            NormKind::Instance => Norm::Instance { gamma, beta },
            NormKind::Batch => Norm::Batch {
                gamma,
                beta,
                running_mean: store.add_buffer(format!("{name}.running_mean"), Tensor::zeros(vec![c]))?,
                running_var: store.add_buffer(format!("{name}.running_var"), Tensor::ones(vec![c]))?,
            },
        })
    }

    pub fn count(c: usize) -> usize {
        2 * c
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let eps = T::lit(NORM_EPS);
        match *self {
            Norm::Instance { gamma, beta } => {
                let (g, b) = (cx.param(gamma), cx.param(beta));
                cx.graph.instance_norm(x, g, b, eps)
            }
            Norm::Batch { gamma, beta, running_mean, running_var } => {
                let (g, b) = (cx.param(gamma), cx.param(beta));
                match cx.mode {
                    Mode::Train => {
                        let (y, mean, var) = cx.graph.batch_norm_train(x, g, b, eps)?;
                        let m = T::lit(BN_MOMENTUM);
                        let keep = T::one() - m;
                        for (r, v) in cx.store.buffer_mut(running_mean).data_mut().iter_mut().zip(&mean) {
                            *r = keep * *r + m * *v;
                        }
                        for (r, v) in cx.store.buffer_mut(running_var).data_mut().iter_mut().zip(&var) {
                            *r = keep * *r + m * *v;
                        }
                        Ok(y)
                    }
                    Mode::Eval => {
                        let rm = cx.store.buffer(running_mean).data().to_vec();
                        let rv = cx.store.buffer(running_var).data().to_vec();
                        cx.graph.batch_norm_eval(x, g, b, &rm, &rv, eps)
                    }
                }
            }
        }
    }
}

/// `conv3 -> norm -> act -> [dropout] -> conv3 -> norm`, with an optional
/// skip connection (projected by a 1x1 convolution when widths differ).
#[derive(Clone, Debug)]
pub struct ConvBlock {
    conv1: Conv,
    norm1: Norm,
    conv2: Conv,
    norm2: Norm,
    shortcut: Shortcut,
    act: Activation,
    post_act: bool,
    dropout: f64,
}

#[derive(Clone, Debug)]
enum Shortcut {
    None,
    Identity,
    Project(Conv),
}

/// Options for [`ConvBlock::new`].
#[derive(Clone, Copy, Debug)]
pub struct BlockSpec {
    pub cin: usize,
    pub cout: usize,
    pub norm: NormKind,
    pub act: Activation,
    pub dropout: f64,
    pub residual: bool,
    /// Apply the activation once more after the skip sum.
    pub post_act: bool,
}

impl ConvBlock {
    pub fn new<T: Scalar, R: Rng + ?Sized>(
        store: &mut ParamStore<T>,
        name: &str,
        spec: BlockSpec,
        std: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let conv1 = Conv::new(store, &format!("{name}.conv1"), spec.cin, spec.cout, 3, 1, false, std, rng)?;
        let norm1 = Norm::new(store, &format!("{name}.norm1"), spec.norm, spec.cout)?;
        let conv2 = Conv::new(store, &format!("{name}.conv2"), spec.cout, spec.cout, 3, 1, false, std, rng)?;
        let norm2 = Norm::new(store, &format!("{name}.norm2"), spec.norm, spec.cout)?;
        let shortcut = match (spec.residual, spec.cin == spec.cout) {
            (false, _) => Shortcut::None,
            (true, true) => Shortcut::Identity,
            (true, false) => Shortcut::Project(Conv::new(
                store,
                &format!("{name}.proj"),
                spec.cin,
                spec.cout,
                1,
                1,
                false,
                std,
                rng,
            )?),
        };
        Ok(ConvBlock {
            conv1,
            norm1,
            conv2,
            norm2,
            shortcut,
            act: spec.act,
            post_act: spec.post_act,
            dropout: spec.dropout,
        })
    }

    pub fn count(spec: &BlockSpec) -> usize {
        let body = Conv::count(spec.cin, spec.cout, 3, false)
            + Conv::count(spec.cout, spec.cout, 3, false)
            + 2 * Norm::count(spec.cout);
        let proj = if spec.residual && spec.cin != spec.cout {
            Conv::count(spec.cin, spec.cout, 1, false)
        } else {
            0
        };
        body + proj
    }

    pub fn forward<T: Scalar>(&self, cx: &mut Ctx<'_, T>, x: Var) -> Result<Var> {
        let h = self.conv1.forward(cx, x)?;
        let h = self.norm1.forward(cx, h)?;
        let h = self.act.apply(cx.graph, h);
        let h = cx.graph.dropout(h, self.dropout, cx.mode, cx.rng)?;
        let h = self.conv2.forward(cx, h)?;
        let h = self.norm2.forward(cx, h)?;
        let out = match &self.shortcut {
            Shortcut::None => return Ok(h),
            Shortcut::Identity => cx.graph.add(x, h)?,
            Shortcut::Project(p) => {
                let s = p.forward(cx, x)?;
                cx.graph.add(s, h)?
            }
        };
        Ok(if self.post_act { self.act.apply(cx.graph, out) } else { out })
    }
}
