//! Define-by-run gradient tape.
//!
//! Every operation appends a node holding its output value and whatever it
//! needs for the backward pass. Node order is a topological order, so
//! [`Graph::backward`] walks the nodes once in reverse. Nodes whose inputs
//! carry no gradient are stored as plain constants.

use std::collections::HashMap;
use std::time::{Duration, Instant};

use rand::Rng;

use crate::error::{Error, Result};
use crate::kernels::{self, ConvGeom};
use crate::params::{ParamId, ParamStore};
use crate::scalar::{matmul_into, Scalar};
use crate::tensor::{dims4, Tensor};

/// Handle to a value recorded on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Operation families used by the timing breakdown.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum OpClass {
    Conv,
    Norm,
    Mul,
    Cat,
    Matmul,
    Softmax,
    Other,
}

impl OpClass {
    pub const MEASURED: [OpClass; 6] = [
        OpClass::Conv,
        OpClass::Norm,
        OpClass::Mul,
        OpClass::Cat,
        OpClass::Matmul,
        OpClass::Softmax,
    ];

    pub fn label(self) -> &'static str {
        match self {
            OpClass::Conv => "conv",
            OpClass::Norm => "norm",
            OpClass::Mul => "mul",
            OpClass::Cat => "cat",
            OpClass::Matmul => "matmul",
            OpClass::Softmax => "softmax",
            OpClass::Other => "other",
        }
    }
}

#[derive(Clone, Copy, Debug)]
struct NormLayout {
    batch: usize,
    channels: usize,
    plane: usize,
    per_instance: bool,
}

impl NormLayout {
    fn groups(&self) -> usize {
        if self.per_instance {
            self.batch * self.channels
        } else {
            self.channels
        }
    }

    fn group_len(&self) -> usize {
        if self.per_instance {
            self.plane
        } else {
            self.batch * self.plane
        }
    }

    /// Contiguous runs `(start, channel)` making up group `g`.
    fn runs(&self, g: usize) -> impl Iterator<Item = (usize, usize)> + '_ {
        let (lo, hi, ch) = if self.per_instance {
            (g / self.channels, g / self.channels + 1, g % self.channels)
        } else {
            (0, self.batch, g)
        };
        (lo..hi).map(move |b| ((b * self.channels + ch) * self.plane, ch))
    }
}

enum Op<T: Scalar> {
    Leaf,
    Param { store: u64, index: usize },
    Conv2d { x: Var, w: Var, b: Option<Var>, geom: ConvGeom },
    Matmul { a: Var, b: Var, batch: usize, m: usize, k: usize, n: usize, ta: bool, tb: bool },
    Transpose { x: Var, batch: usize, rows: usize, cols: usize },
    Reshape { x: Var },
    SoftmaxRows { x: Var, cols: usize },
    Add { a: Var, b: Var },
    Sub { a: Var, b: Var },
    Mul { a: Var, b: Var },
    AddScalar { x: Var },
    MulScalar { x: Var, s: T },
    Sigmoid { x: Var },
    Tanh { x: Var },
    Relu { x: Var },
    LeakyRelu { x: Var, slope: T },
    Abs { x: Var },
    LogClamped { x: Var, eps: T },
    SumAll { x: Var },
    MeanAll { x: Var },
    Concat { a: Var, b: Var, ca: usize, cb: usize, batch: usize, plane: usize },
    Slice { x: Var, start: usize, len: usize, channels: usize, batch: usize, plane: usize },
    Norm { x: Var, gamma: Var, beta: Var, xhat: Vec<T>, inv_std: Vec<T>, layout: NormLayout },
    FrozenNorm { x: Var, gamma: Var, beta: Var, mean: Vec<T>, inv_std: Vec<T>, layout: NormLayout },
    Upsample2x { x: Var, planes: usize, h: usize, w: usize },
    Dropout { x: Var, mask: Vec<T> },
    GlobalAvgPool { x: Var, planes: usize, plane: usize },
}

impl<T: Scalar> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Param { .. } => "param",
            Op::Conv2d { .. } => "conv2d",
            Op::Matmul { .. } => "matmul",
            Op::Transpose { .. } => "transpose",
            Op::Reshape { .. } => "reshape",
            Op::SoftmaxRows { .. } => "softmax_rows",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::AddScalar { .. } => "add_scalar",
            Op::MulScalar { .. } => "mul_scalar",
            Op::Sigmoid { .. } => "sigmoid",
            Op::Tanh { .. } => "tanh",
            Op::Relu { .. } => "relu",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Abs { .. } => "abs",
            Op::LogClamped { .. } => "log",
            Op::SumAll { .. } => "sum",
            Op::MeanAll { .. } => "mean",
            Op::Concat { .. } => "concat_channels",
            Op::Slice { .. } => "slice_channels",
            Op::Norm { .. } => "norm",
            Op::FrozenNorm { .. } => "frozen_norm",
            Op::Upsample2x { .. } => "upsample2x",
            Op::Dropout { .. } => "dropout",
            Op::GlobalAvgPool { .. } => "global_avg_pool",
        }
    }

    fn inputs(&self) -> Vec<Var> {
        match self {
            Op::Leaf | Op::Param { .. } => vec![],
            Op::Conv2d { x, w, b, .. } => {
                let mut v = vec![*x, *w];
                v.extend(b.iter().copied());
                v
            }
            Op::Matmul { a, b, .. }
            | Op::Add { a, b }
            | Op::Sub { a, b }
            | Op::Mul { a, b }
            | Op::Concat { a, b, .. } => vec![*a, *b],
            Op::Norm { x, gamma, beta, .. } | Op::FrozenNorm { x, gamma, beta, .. } => {
                vec![*x, *gamma, *beta]
            }
            Op::Transpose { x, .. }
            | Op::Reshape { x }
            | Op::SoftmaxRows { x, .. }
            | Op::AddScalar { x }
            | Op::MulScalar { x, .. }
            | Op::Sigmoid { x }
            | Op::Tanh { x }
            | Op::Relu { x }
            | Op::LeakyRelu { x, .. }
            | Op::Abs { x }
            | Op::LogClamped { x, .. }
            | Op::SumAll { x }
            | Op::MeanAll { x }
            | Op::Slice { x, .. }
            | Op::Upsample2x { x, .. }
            | Op::Dropout { x, .. }
            | Op::GlobalAvgPool { x, .. } => vec![*x],
        }
    }
}

struct Node<T: Scalar> {
    op: Op<T>,
    value: Tensor<T>,
    requires_grad: bool,
}

/// Parameter gradients produced by one [`Graph::backward`] call.
pub struct Gradients<T: Scalar> {
    entries: Vec<(u64, usize, Tensor<T>)>,
}

impl<T: Scalar> Gradients<T> {
    /// Adds every gradient that belongs to `store` into its parameters' `grad`.
    pub fn accumulate_into(&self, store: &mut ParamStore<T>) {
        for (sid, index, g) in &self.entries {
            if *sid == store.store_id() {
                store.accumulate_grad(*index, g);
            }
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// One recorded forward pass.
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    param_leaves: HashMap<(u64, usize, bool), Var>,
    poison: Option<String>,
    profile: Option<Vec<(OpClass, Duration)>>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        return Err(Error::config(format!("{op}: shape mismatch {a:?} vs {b:?}")));
    }
    Ok(())
}

fn add_into<T: Scalar>(slot: &mut Option<Vec<T>>, contrib: Vec<T>) {
    match slot {
        None => *slot = Some(contrib),
        Some(acc) => {
            for (a, c) in acc.iter_mut().zip(contrib) {
                *a += c;
            }
        }
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            param_leaves: HashMap::new(),
            poison: None,
            profile: None,
        }
    }

    /// Records wall-clock time spent in each operation from now on.
    pub fn enable_profiling(&mut self) {
        self.profile = Some(Vec::new());
    }

    /// Per-operation timings in execution order, if profiling is enabled.
    pub fn timings(&self) -> Option<&[(OpClass, Duration)]> {
        self.profile.as_deref()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// First non-finite value produced so far, if any.
    pub fn check_finite(&self) -> Result<()> {
        match &self.poison {
            None => Ok(()),
            Some(msg) => Err(Error::NonFinite(msg.clone())),
        }
    }

    fn push(&mut self, op: Op<T>, value: Tensor<T>, class: OpClass, started: Option<Instant>) -> Var {
        if let (Some(t0), Some(profile)) = (started, self.profile.as_mut()) {
            profile.push((class, t0.elapsed()));
        }
        if self.poison.is_none() && !value.is_finite() {
            self.poison = Some(format!("{} produced a non-finite value (node {})", op.name(), self.nodes.len()));
        }
        let requires_grad = match &op {
            Op::Leaf => false,
            Op::Param { .. } => true,
            other => other.inputs().iter().any(|v| self.nodes[v.0].requires_grad),
        };
        let op = if requires_grad { op } else { Op::Leaf };
        self.nodes.push(Node { op, value, requires_grad });
        Var(self.nodes.len() - 1)
    }

    fn clock(&self) -> Option<Instant> {
        self.profile.as_ref().map(|_| Instant::now())
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(Op::Leaf, value, OpClass::Other, None)
    }

    /// Trainable leaf for a parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (id.store, id.index, true);
        if let Some(&v) = self.param_leaves.get(&key) {
            return v;
        }
        let v = self.push(
            Op::Param { store: id.store, index: id.index },
            store.value(id).clone(),
            OpClass::Other,
            None,
        );
        self.param_leaves.insert(key, v);
        v
    }

    /// Parameter value as a constant: no gradient flows back to it.
    pub fn frozen_param(&mut self, store: &ParamStore<T>, id: ParamId) -> Var {
        let key = (id.store, id.index, false);
        if let Some(&v) = self.param_leaves.get(&key) {
            return v;
        }
        let v = self.constant(store.value(id).clone());
        self.param_leaves.insert(key, v);
        v
    }

    /// Copy of `v` cut off from the tape.
    pub fn detach(&mut self, v: Var) -> Var {
        let value = self.nodes[v.0].value.clone();
        self.constant(value)
    }

    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>, stride: usize, pad: usize) -> Result<Var> {
        let [batch, cin, h, wd] = dims4(self.shape(x))?;
        let [cout, wcin, kh, kw] = dims4(self.shape(w))?;
        if wcin != cin {
            return Err(Error::config(format!(
                "conv2d: input has {cin} channels but weight expects {wcin}"
            )));
        }
        if kh % 2 == 0 || kw % 2 == 0 {
            return Err(Error::config(format!("conv2d: kernel {kh}x{kw} must be odd")));
        }
        if stride == 0 {
            return Err(Error::config("conv2d: stride must be positive"));
        }
        if h + 2 * pad < kh || wd + 2 * pad < kw {
            return Err(Error::config(format!(
                "conv2d: padded input {}x{} smaller than kernel {kh}x{kw}",
                h + 2 * pad,
                wd + 2 * pad
            )));
        }
        if let Some(b) = b {
            if self.shape(b) != [cout] {
                return Err(Error::config(format!(
                    "conv2d: bias shape {:?}, expected [{cout}]",
                    self.shape(b)
                )));
            }
        }
        let geom = ConvGeom { batch, cin, h, w: wd, cout, kh, kw, stride, pad };
        let t0 = self.clock();
        let out = kernels::conv2d_forward(
            &geom,
            self.value(x).data(),
            self.value(w).data(),
            b.map(|b| self.value(b).data()),
        );
        let value = Tensor::new(vec![batch, cout, geom.out_h(), geom.out_w()], out)?;
        Ok(self.push(Op::Conv2d { x, w, b, geom }, value, OpClass::Conv, t0))
    }

    /// `a x b`. Rank-3 operands are batched over the leading dimension.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.matmul_t(a, b, false, false)
    }

    /// `op(a) x op(b)` where `op` transposes the last two dimensions when its flag is set.
    pub fn matmul_t(&mut self, a: Var, b: Var, ta: bool, tb: bool) -> Result<Var> {
        let sa = self.shape(a).to_vec();
        let sb = self.shape(b).to_vec();
        let (batch, ra, ca, rb, cb) = match (sa.as_slice(), sb.as_slice()) {
            (&[r1, c1], &[r2, c2]) => (1, r1, c1, r2, c2),
            (&[b1, r1, c1], &[b2, r2, c2]) if b1 == b2 => (b1, r1, c1, r2, c2),
            _ => {
                return Err(Error::config(format!(
                    "matmul: incompatible operand ranks/batches {sa:?} and {sb:?}"
                )))
            }
        };
        let (m, k) = if ta { (ca, ra) } else { (ra, ca) };
        let (k2, n) = if tb { (cb, rb) } else { (rb, cb) };
        if k != k2 {
            return Err(Error::config(format!(
                "matmul: inner dimensions differ ({k} vs {k2}) for {sa:?} x {sb:?}"
            )));
        }
        let t0 = self.clock();
        let mut out = vec![T::zero(); batch * m * n];
        {
            let ad = self.value(a).data();
            let bd = self.value(b).data();
            for i in 0..batch {
                matmul_into(
                    &ad[i * m * k..(i + 1) * m * k],
                    &bd[i * k * n..(i + 1) * k * n],
                    &mut out[i * m * n..(i + 1) * m * n],
                    m,
                    k,
                    n,
                    ta,
                    tb,
                    false,
                );
            }
        }
        let shape = if sa.len() == 2 { vec![m, n] } else { vec![batch, m, n] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Matmul { a, b, batch, m, k, n, ta, tb }, value, OpClass::Matmul, t0))
    }

    /// Swaps the last two dimensions of a rank-2 or rank-3 tensor.
    pub fn transpose(&mut self, x: Var) -> Result<Var> {
        let s = self.shape(x).to_vec();
        let (batch, rows, cols) = match s.as_slice() {
            &[r, c] => (1, r, c),
            &[b, r, c] => (b, r, c),
            _ => return Err(Error::config(format!("transpose: unsupported shape {s:?}"))),
        };
        let t0 = self.clock();
        let out = transpose_blocks(self.value(x).data(), batch, rows, cols);
        let shape = if s.len() == 2 { vec![cols, rows] } else { vec![batch, cols, rows] };
        let value = Tensor::new(shape, out)?;
        Ok(self.push(Op::Transpose { x, batch, rows, cols }, value, OpClass::Other, t0))
    }

    pub fn reshape(&mut self, x: Var, shape: impl Into<Vec<usize>>) -> Result<Var> {
        let value = self.value(x).clone().reshape(shape)?;
        Ok(self.push(Op::Reshape { x }, value, OpClass::Other, None))
    }

    /// Softmax over the last dimension, stabilized by subtracting each row's maximum.
    pub fn softmax_rows(&mut self, x: Var) -> Var {
        let t0 = self.clock();
        let cols = *self.shape(x).last().unwrap();
        let mut value = self.value(x).clone();
        for row in value.data_mut().chunks_mut(cols) {
            softmax_in_place(row);
        }
        self.push(Op::SoftmaxRows { x, cols }, value, OpClass::Softmax, t0)
    }

    fn binary(&mut self, a: Var, b: Var, name: &str, f: impl Fn(T, T) -> T) -> Result<Tensor<T>> {
        same_shape(name, self.shape(a), self.shape(b))?;
        let av = self.value(a);
        let data = av
            .data()
            .iter()
            .zip(self.value(b).data())
            .map(|(&x, &y)| f(x, y))
            .collect();
        Tensor::new(av.shape().to_vec(), data)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let t0 = self.clock();
        let value = self.binary(a, b, "add", |x, y| x + y)?;
        Ok(self.push(Op::Add { a, b }, value, OpClass::Other, t0))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let t0 = self.clock();
        let value = self.binary(a, b, "sub", |x, y| x - y)?;
        Ok(self.push(Op::Sub { a, b }, value, OpClass::Other, t0))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let t0 = self.clock();
        let value = self.binary(a, b, "mul", |x, y| x * y)?;
        Ok(self.push(Op::Mul { a, b }, value, OpClass::Mul, t0))
    }

    fn unary(&mut self, x: Var, f: impl Fn(T) -> T) -> Tensor<T> {
        self.value(x).map(f)
    }

    pub fn add_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.unary(x, |v| v + s);
        self.push(Op::AddScalar { x }, value, OpClass::Other, None)
    }

    pub fn mul_scalar(&mut self, x: Var, s: T) -> Var {
        let value = self.unary(x, |v| v * s);
        self.push(Op::MulScalar { x, s }, value, OpClass::Other, None)
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let t0 = self.clock();
        let value = self.unary(x, sigmoid);
        self.push(Op::Sigmoid { x }, value, OpClass::Other, t0)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        let value = self.unary(x, T::tanh);
        self.push(Op::Tanh { x }, value, OpClass::Other, None)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let t0 = self.clock();
        let value = self.unary(x, |v| v.max(T::zero()));
        self.push(Op::Relu { x }, value, OpClass::Other, t0)
    }

    pub fn leaky_relu(&mut self, x: Var, slope: T) -> Var {
        let value = self.unary(x, |v| if v > T::zero() { v } else { v * slope });
        self.push(Op::LeakyRelu { x, slope }, value, OpClass::Other, None)
    }

    pub fn abs(&mut self, x: Var) -> Var {
        let value = self.unary(x, T::abs);
        self.push(Op::Abs { x }, value, OpClass::Other, None)
    }

    /// `ln(max(x, eps))`; the gradient is zero where the clamp is active.
    pub fn log_clamped(&mut self, x: Var, eps: T) -> Var {
        let value = self.unary(x, |v| v.max(eps).ln());
        self.push(Op::LogClamped { x, eps }, value, OpClass::Other, None)
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(Op::SumAll { x }, value, OpClass::Other, None)
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).mean());
        self.push(Op::MeanAll { x }, value, OpClass::Other, None)
    }

    /// Stacks `a` and `b` along the channel axis.
    pub fn concat_channels(&mut self, a: Var, b: Var) -> Result<Var> {
        let [ba, ca, ha, wa] = dims4(self.shape(a))?;
        let [bb, cb, hb, wb] = dims4(self.shape(b))?;
        if (ba, ha, wa) != (bb, hb, wb) {
            return Err(Error::config(format!(
                "concat_channels: batch/spatial mismatch {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            )));
        }
        let t0 = self.clock();
        let plane = ha * wa;
        let mut out = Vec::with_capacity(ba * (ca + cb) * plane);
        {
            let (ad, bd) = (self.value(a).data(), self.value(b).data());
            for i in 0..ba {
                out.extend_from_slice(&ad[i * ca * plane..(i + 1) * ca * plane]);
                out.extend_from_slice(&bd[i * cb * plane..(i + 1) * cb * plane]);
            }
        }
        let value = Tensor::new(vec![ba, ca + cb, ha, wa], out)?;
        Ok(self.push(Op::Concat { a, b, ca, cb, batch: ba, plane }, value, OpClass::Cat, t0))
    }

    pub fn slice_channels(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let [batch, channels, h, w] = dims4(self.shape(x))?;
        let value = self.value(x).slice_channels(start, len)?;
        Ok(self.push(
            Op::Slice { x, start, len, channels, batch, plane: h * w },
            value,
            OpClass::Other,
            None,
        ))
    }

    fn norm_affine_check(&self, x: Var, gamma: Var, beta: Var, name: &str) -> Result<[usize; 4]> {
        let dims = dims4(self.shape(x))?;
        let c = dims[1];
        if self.shape(gamma) != [c] || self.shape(beta) != [c] {
            return Err(Error::config(format!(
                "{name}: affine parameters must have shape [{c}], got {:?} and {:?}",
                self.shape(gamma),
                self.shape(beta)
            )));
        }
        Ok(dims)
    }

    fn normalize(&mut self, x: Var, gamma: Var, beta: Var, eps: T, layout: NormLayout) -> Var {
        let t0 = self.clock();
        let n = T::from_usize(layout.group_len()).unwrap();
        let xd = self.value(x).data();
        let gd = self.value(gamma).data();
        let bd = self.value(beta).data();
        let mut xhat = vec![T::zero(); xd.len()];
        let mut out = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); layout.groups()];
        for (g, inv_slot) in inv_std.iter_mut().enumerate() {
            let mut mean = T::zero();
            for (s, _) in layout.runs(g) {
                mean += xd[s..s + layout.plane].iter().copied().sum::<T>();
            }
            mean /= n;
            let mut var = T::zero();
            for (s, _) in layout.runs(g) {
                var += xd[s..s + layout.plane].iter().map(|&v| (v - mean) * (v - mean)).sum::<T>();
            }
            var /= n;
            let inv = T::one() / (var + eps).sqrt();
            *inv_slot = inv;
            for (s, ch) in layout.runs(g) {
                let (gm, bt) = (gd[ch], bd[ch]);
                for i in s..s + layout.plane {
                    let xh = (xd[i] - mean) * inv;
                    xhat[i] = xh;
                    out[i] = xh * gm + bt;
                }
            }
        }
        let shape = self.shape(x).to_vec();
        let value = Tensor::new(shape, out).expect("shape preserved");
        self.push(Op::Norm { x, gamma, beta, xhat, inv_std, layout }, value, OpClass::Norm, t0)
    }

    /// Per-sample, per-channel normalization with biased variance.
    pub fn instance_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let [batch, channels, h, w] = self.norm_affine_check(x, gamma, beta, "instance_norm")?;
        if h * w == 1 && eps <= T::zero() {
            return Err(Error::config(
                "instance_norm: a 1x1 plane with eps = 0 divides by zero",
            ));
        }
        let layout = NormLayout { batch, channels, plane: h * w, per_instance: true };
        Ok(self.normalize(x, gamma, beta, eps, layout))
    }

    /// Training-mode batch normalization. Returns the output together with the
    /// per-channel batch mean and unbiased variance for running-stat updates.
    pub fn batch_norm_train(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<(Var, Vec<T>, Vec<T>)> {
        let [batch, channels, h, w] = self.norm_affine_check(x, gamma, beta, "batch_norm")?;
        let count = batch * h * w;
        if count < 2 {
            return Err(Error::config(
                "batch_norm: training mode needs at least two values per channel",
            ));
        }
        let layout = NormLayout { batch, channels, plane: h * w, per_instance: false };
        let (mean, var) = {
            let xd = self.value(x).data();
            let n = T::from_usize(count).unwrap();
            let mut means = Vec::with_capacity(channels);
            let mut vars = Vec::with_capacity(channels);
            for c in 0..channels {
                let mut m = T::zero();
                for (s, _) in layout.runs(c) {
                    m += xd[s..s + layout.plane].iter().copied().sum::<T>();
                }
                m /= n;
                let mut v = T::zero();
                for (s, _) in layout.runs(c) {
                    v += xd[s..s + layout.plane].iter().map(|&e| (e - m) * (e - m)).sum::<T>();
                }
                means.push(m);
                vars.push(v / T::from_usize(count - 1).unwrap());
            }
            (means, vars)
        };
        Ok((self.normalize(x, gamma, beta, eps, layout), mean, var))
    }

    /// Normalization with fixed statistics (batch norm in eval mode).
    pub fn batch_norm_eval(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        running_mean: &[T],
        running_var: &[T],
        eps: T,
    ) -> Result<Var> {
        let [batch, channels, h, w] = self.norm_affine_check(x, gamma, beta, "batch_norm")?;
        if running_mean.len() != channels || running_var.len() != channels {
            return Err(Error::config("batch_norm: running statistics have the wrong length"));
        }
        let t0 = self.clock();
        let layout = NormLayout { batch, channels, plane: h * w, per_instance: false };
        let inv_std: Vec<T> = running_var.iter().map(|&v| T::one() / (v + eps).sqrt()).collect();
        let mut out = self.value(x).clone();
        {
            let gd = self.value(gamma).data();
            let bd = self.value(beta).data();
            let od = out.data_mut();
            for c in 0..channels {
                for (s, _) in layout.runs(c) {
                    for v in &mut od[s..s + layout.plane] {
                        *v = (*v - running_mean[c]) * inv_std[c] * gd[c] + bd[c];
                    }
                }
            }
        }
        Ok(self.push(
            Op::FrozenNorm { x, gamma, beta, mean: running_mean.to_vec(), inv_std, layout },
            out,
            OpClass::Norm,
            t0,
        ))
    }

    /// x2 bilinear upsampling with half-pixel centers (align-corners off).
    pub fn upsample2x(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = dims4(self.shape(x))?;
        let out = kernels::upsample2x_forward(b * c, h, w, self.value(x).data());
        let value = Tensor::new(vec![b, c, 2 * h, 2 * w], out)?;
        Ok(self.push(Op::Upsample2x { x, planes: b * c, h, w }, value, OpClass::Other, None))
    }

    /// Inverted dropout. Identity in eval mode or at rate 0.
    pub fn dropout<R: Rng + ?Sized>(&mut self, x: Var, rate: f64, mode: Mode, rng: &mut R) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout: rate {rate} must lie in [0, 1)")));
        }
        if mode == Mode::Eval || rate == 0.0 {
            return Ok(x);
        }
        let keep = T::lit(1.0 / (1.0 - rate));
        let n = self.value(x).numel();
        let mask: Vec<T> = (0..n)
            .map(|_| if rng.random::<f64>() < rate { T::zero() } else { keep })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= *m;
        }
        Ok(self.push(Op::Dropout { x, mask }, value, OpClass::Other, None))
    }

    /// Spatial mean, `B x C x H x W -> B x C x 1 x 1`.
    pub fn global_avg_pool(&mut self, x: Var) -> Result<Var> {
        let [b, c, h, w] = dims4(self.shape(x))?;
        let plane = h * w;
        let n = T::from_usize(plane).unwrap();
        let out = self
            .value(x)
            .data()
            .chunks(plane)
            .map(|p| p.iter().copied().sum::<T>() / n)
            .collect();
        let value = Tensor::new(vec![b, c, 1, 1], out)?;
        Ok(self.push(Op::GlobalAvgPool { x, planes: b * c, plane }, value, OpClass::Other, None))
    }

    /// Reverse sweep from a one-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(Error::usage(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            )));
        }
        self.check_finite()?;
        let mut grads: Vec<Option<Vec<T>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut entries = Vec::new();
        for i in (0..=loss.0).rev() {
            let Some(gy) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            self.backward_node(&node.op, &node.value, gy, &mut grads, &mut entries);
        }
        for (_, _, g) in &entries {
            g.ensure_finite("gradient")?;
        }
        Ok(Gradients { entries })
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn backward_node(
        &self,
        op: &Op<T>,
        y: &Tensor<T>,
        gy: Vec<T>,
        grads: &mut [Option<Vec<T>>],
        entries: &mut Vec<(u64, usize, Tensor<T>)>,
    ) {
        let mut send = |v: Var, g: Vec<T>| {
            if self.nodes[v.0].requires_grad {
                add_into(&mut grads[v.0], g);
            }
        };
        let val = |v: Var| self.nodes[v.0].value.data();
        match op {
            Op::Leaf => {}
            Op::Param { store, index } => {
                entries.push((*store, *index, Tensor::new(y.shape().to_vec(), gy).unwrap()));
            }
            Op::Conv2d { x, w, b, geom } => {
                let g = kernels::conv2d_backward(
                    geom,
                    val(*x),
                    val(*w),
                    &gy,
                    self.wants(*x),
                    self.wants(*w),
                    b.is_some_and(|b| self.wants(b)),
                );
                if let Some(dx) = g.dx {
                    send(*x, dx);
                }
                if let Some(dw) = g.dw {
                    send(*w, dw);
                }
                if let (Some(b), Some(db)) = (b, g.db) {
                    send(*b, db);
                }
            }
            &Op::Matmul { a, b, batch, m, k, n, ta, tb } => {
                let (ad, bd) = (val(a), val(b));
                if self.wants(a) {
                    let mut da = vec![T::zero(); batch * m * k];
                    for i in 0..batch {
                        let gci = &gy[i * m * n..(i + 1) * m * n];
                        let bi = &bd[i * k * n..(i + 1) * k * n];
                        let dai = &mut da[i * m * k..(i + 1) * m * k];
                        if ta {
                            matmul_into(bi, gci, dai, k, n, m, tb, true, false);
                        } else {
                            matmul_into(gci, bi, dai, m, n, k, false, !tb, false);
                        }
                    }
                    send(a, da);
                }
                if self.wants(b) {
                    let mut db = vec![T::zero(); batch * k * n];
                    for i in 0..batch {
                        let gci = &gy[i * m * n..(i + 1) * m * n];
                        let ai = &ad[i * m * k..(i + 1) * m * k];
                        let dbi = &mut db[i * k * n..(i + 1) * k * n];
                        if tb {
                            matmul_into(gci, ai, dbi, n, m, k, true, ta, false);
                        } else {
                            matmul_into(ai, gci, dbi, k, m, n, !ta, false, false);
                        }
                    }
                    send(b, db);
                }
            }
            &Op::Transpose { x, batch, rows, cols } => {
                send(x, transpose_blocks(&gy, batch, cols, rows));
            }
            &Op::Reshape { x } => send(x, gy),
            &Op::SoftmaxRows { x, cols } => {
                let mut dx = gy;
                for (drow, yrow) in dx.chunks_mut(cols).zip(y.data().chunks(cols)) {
                    let dot: T = drow.iter().zip(yrow).map(|(&g, &p)| g * p).sum();
                    for (d, &p) in drow.iter_mut().zip(yrow) {
                        *d = p * (*d - dot);
                    }
                }
                send(x, dx);
            }
            &Op::Add { a, b } => {
                if self.wants(b) {
                    send(b, gy.clone());
                }
                send(a, gy);
            }
            &Op::Sub { a, b } => {
                if self.wants(b) {
                    send(b, gy.iter().map(|&g| -g).collect());
                }
                send(a, gy);
            }
            &Op::Mul { a, b } => {
                if self.wants(a) {
                    send(a, gy.iter().zip(val(b)).map(|(&g, &v)| g * v).collect());
                }
                if self.wants(b) {
                    send(b, gy.iter().zip(val(a)).map(|(&g, &v)| g * v).collect());
                }
            }
            &Op::AddScalar { x } => send(x, gy),
            &Op::MulScalar { x, s } => send(x, gy.into_iter().map(|g| g * s).collect()),
            &Op::Sigmoid { x } => send(
                x,
                gy.iter().zip(y.data()).map(|(&g, &s)| g * s * (T::one() - s)).collect(),
            ),
            &Op::Tanh { x } => send(
                x,
                gy.iter().zip(y.data()).map(|(&g, &t)| g * (T::one() - t * t)).collect(),
            ),
            &Op::Relu { x } => send(
                x,
                gy.iter()
                    .zip(val(x))
                    .map(|(&g, &v)| if v > T::zero() { g } else { T::zero() })
                    .collect(),
            ),
            &Op::LeakyRelu { x, slope } => send(
                x,
                gy.iter()
                    .zip(val(x))
                    .map(|(&g, &v)| if v > T::zero() { g } else { g * slope })
                    .collect(),
            ),
            &Op::Abs { x } => send(
                x,
                gy.iter()
                    .zip(val(x))
                    .map(|(&g, &v)| {
                        if v > T::zero() {
                            g
                        } else if v < T::zero() {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .collect(),
            ),
            &Op::LogClamped { x, eps } => send(
                x,
                gy.iter()
                    .zip(val(x))
                    .map(|(&g, &v)| if v > eps { g / v } else { T::zero() })
                    .collect(),
            ),
            &Op::SumAll { x } => {
                let n = self.nodes[x.0].value.numel();
                send(x, vec![gy[0]; n]);
            }
            &Op::MeanAll { x } => {
                let n = self.nodes[x.0].value.numel();
                send(x, vec![gy[0] / T::from_usize(n).unwrap(); n]);
            }
            &Op::Concat { a, b, ca, cb, batch, plane } => {
                let c = ca + cb;
                if self.wants(a) {
                    let mut da = Vec::with_capacity(batch * ca * plane);
                    for i in 0..batch {
                        da.extend_from_slice(&gy[i * c * plane..(i * c + ca) * plane]);
                    }
                    send(a, da);
                }
                if self.wants(b) {
                    let mut db = Vec::with_capacity(batch * cb * plane);
                    for i in 0..batch {
                        db.extend_from_slice(&gy[(i * c + ca) * plane..(i + 1) * c * plane]);
                    }
                    send(b, db);
                }
            }
            &Op::Slice { x, start, len, channels, batch, plane } => {
                let mut dx = vec![T::zero(); batch * channels * plane];
                for i in 0..batch {
                    let src = &gy[i * len * plane..(i + 1) * len * plane];
                    let off = (i * channels + start) * plane;
                    dx[off..off + len * plane].copy_from_slice(src);
                }
                send(x, dx);
            }
            Op::Norm { x, gamma, beta, xhat, inv_std, layout } => {
                let gd = val(*gamma);
                let n = T::from_usize(layout.group_len()).unwrap();
                let c = layout.channels;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let want_x = self.wants(*x);
                let mut dx = if want_x { vec![T::zero(); gy.len()] } else { Vec::new() };
                for (g, &inv) in inv_std.iter().enumerate() {
                    let mut sum_d = T::zero();
                    let mut sum_dx = T::zero();
                    for (s, ch) in layout.runs(g) {
                        for i in s..s + layout.plane {
                            dgamma[ch] += gy[i] * xhat[i];
                            dbeta[ch] += gy[i];
                            let d = gy[i] * gd[ch];
                            sum_d += d;
                            sum_dx += d * xhat[i];
                        }
                    }
                    if want_x {
                        for (s, ch) in layout.runs(g) {
                            for i in s..s + layout.plane {
                                let d = gy[i] * gd[ch];
                                dx[i] = inv / n * (n * d - sum_d - xhat[i] * sum_dx);
                            }
                        }
                    }
                }
                if want_x {
                    send(*x, dx);
                }
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            Op::FrozenNorm { x, gamma, beta, mean, inv_std, layout } => {
                let (xd, gd) = (val(*x), val(*gamma));
                let c = layout.channels;
                let mut dgamma = vec![T::zero(); c];
                let mut dbeta = vec![T::zero(); c];
                let mut dx = vec![T::zero(); gy.len()];
                for ch in 0..c {
                    for (s, _) in layout.runs(ch) {
                        for i in s..s + layout.plane {
                            dgamma[ch] += gy[i] * (xd[i] - mean[ch]) * inv_std[ch];
                            dbeta[ch] += gy[i];
                            dx[i] = gy[i] * gd[ch] * inv_std[ch];
                        }
                    }
                }
                send(*x, dx);
                send(*gamma, dgamma);
                send(*beta, dbeta);
            }
            &Op::Upsample2x { x, planes, h, w } => {
                send(x, kernels::upsample2x_backward(planes, h, w, &gy));
            }
            Op::Dropout { x, mask } => {
                send(*x, gy.iter().zip(mask).map(|(&g, &m)| g * m).collect());
            }
            &Op::GlobalAvgPool { x, planes, plane } => {
                let n = T::from_usize(plane).unwrap();
                let mut dx = Vec::with_capacity(planes * plane);
                for &g in &gy {
                    dx.extend(std::iter::repeat_n(g / n, plane));
                }
                send(x, dx);
            }
        }
    }
}

pub(crate) fn sigmoid<T: Scalar>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub(crate) fn softmax_in_place<T: Scalar>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}

fn transpose_blocks<T: Scalar>(x: &[T], batch: usize, rows: usize, cols: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for b in 0..batch {
        let src = &x[b * rows * cols..(b + 1) * rows * cols];
        let dst = &mut out[b * rows * cols..(b + 1) * rows * cols];
        for r in 0..rows {
            for c in 0..cols {
                dst[c * rows + r] = src[r * cols + c];
            }
        }
    }
    out
}
