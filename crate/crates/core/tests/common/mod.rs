#![allow(dead_code)]

pub mod suite;

use patn::model::{ModelConfig, Variant};
use patn::{Graph, ParamId, ParamStore, Result, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

pub const FD_STEP: f64 = 1e-5;
/// Relative-error denominators are floored here so roundoff on near-zero
/// gradients does not count as a mismatch.
pub const REL_FLOOR: f64 = 1e-3;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn normal(shape: &[usize], rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| StandardNormal.sample(rng))
}

/// Normal entries pushed at least `gap` away from zero, for ops with a kink there.
pub fn away_from_zero(shape: &[usize], gap: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| {
        let v: f64 = StandardNormal.sample(rng);
        if v.abs() < gap {
            v.signum() * gap + v
        } else {
            v
        }
    })
}

pub fn uniform(shape: &[usize], lo: f64, hi: f64, rng: &mut impl Rng) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| rng.random_range(lo..hi))
}

pub fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(REL_FLOOR)
}

#[derive(Clone, Debug)]
pub struct GradReport {
    pub max_rel: f64,
    pub worst: String,
    pub checked: usize,
}

/// Compares backward against central differences of `sum(f(...) * R)` for a
/// fixed random `R`, over every parameter in `store` (inputs included, as
/// parameters). At most `per_param` coordinates are probed per tensor.
pub fn grad_check(
    store: &mut ParamStore<f64>,
    per_param: usize,
    seed: u64,
    mut f: impl FnMut(&mut Graph<f64>, &mut ParamStore<f64>) -> Result<Var>,
) -> GradReport {
    let mut g = Graph::new();
    let out = f(&mut g, store).expect("forward");
    let weights = normal(g.shape(out), &mut rng(seed ^ 0x5eed));
    let w = g.constant(weights.clone());
    let prod = g.mul(out, w).expect("weights match output");
    let loss = g.sum(prod);
    let grads = g.backward(loss).expect("backward");
    store.zero_grad();
    grads.accumulate_into(store);
    let analytic: Vec<Tensor<f64>> = store.params().iter().map(|p| p.grad.clone()).collect();

    let mut eval = |store: &mut ParamStore<f64>| -> f64 {
        let mut g = Graph::new();
        let out = f(&mut g, store).expect("forward");
        g.value(out).data().iter().zip(weights.data()).map(|(a, b)| a * b).sum()
    };

    let mut pick = rng(seed);
    let mut report = GradReport { max_rel: 0.0, worst: String::new(), checked: 0 };
    for pi in 0..analytic.len() {
        let n = analytic[pi].numel();
        let coords: Vec<usize> = if n <= per_param {
            (0..n).collect()
        } else {
            (0..per_param).map(|_| pick.random_range(0..n)).collect()
        };
        for k in coords {
            let orig = store.params()[pi].value.data()[k];
            store.params_mut()[pi].value.data_mut()[k] = orig + FD_STEP;
            let lp = eval(store);
            store.params_mut()[pi].value.data_mut()[k] = orig - FD_STEP;
            let lm = eval(store);
            store.params_mut()[pi].value.data_mut()[k] = orig;
            let numeric = (lp - lm) / (2.0 * FD_STEP);
            let a = analytic[pi].data()[k];
            let e = rel_error(a, numeric);
            report.checked += 1;
            if e > report.max_rel {
                report.max_rel = e;
                report.worst = format!("{}[{k}]: analytic {a:e}, numeric {numeric:e}", store.params()[pi].name);
            }
        }
    }
    report
}

/// Store holding `inputs` as parameters named `x0, x1, ...`.
pub fn input_store(inputs: Vec<Tensor<f64>>) -> (ParamStore<f64>, Vec<ParamId>) {
    let mut store = ParamStore::new();
    let ids = inputs
        .into_iter()
        .enumerate()
        .map(|(i, t)| store.add(format!("x{i}"), t).unwrap())
        .collect();
    (store, ids)
}

/// Direct nested-sum convolution, `N x Cin x H x W` with `Cout x Cin x k x k` weights.
pub fn conv_oracle(x: &Tensor<f64>, w: &Tensor<f64>, b: Option<&Tensor<f64>>, stride: usize, pad: usize) -> Tensor<f64> {
    let [n, cin, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let [cout, _, kh, kw] = [w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]];
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (wd + 2 * pad - kw) / stride + 1;
    let xd = x.data();
    let wt = w.data();
    Tensor::from_fn(vec![n, cout, oh, ow], |idx| {
        let ox = idx % ow;
        let oy = (idx / ow) % oh;
        let co = (idx / (ow * oh)) % cout;
        let b_ = idx / (ow * oh * cout);
        let mut acc = b.map_or(0.0, |b| b.data()[co]);
        for ci in 0..cin {
            for ky in 0..kh {
                for kx in 0..kw {
                    let iy = (oy * stride + ky) as isize - pad as isize;
                    let ix = (ox * stride + kx) as isize - pad as isize;
                    if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                        continue;
                    }
                    let xv = xd[((b_ * cin + ci) * h + iy as usize) * wd + ix as usize];
                    acc += xv * wt[((co * cin + ci) * kh + ky) * kw + kx];
                }
            }
        }
        acc
    })
}

/// Triple-loop batched product of `B x n x k` and `B x k x m`.
pub fn matmul_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    let (bs, n, k) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let m = b.shape()[2];
    let mut out = vec![0.0; bs * n * m];
    for s in 0..bs {
        for i in 0..n {
            for j in 0..m {
                let mut acc = 0.0;
                for t in 0..k {
                    acc += a.data()[(s * n + i) * k + t] * b.data()[(s * k + t) * m + j];
                }
                out[(s * n + i) * m + j] = acc;
            }
        }
    }
    Tensor::new(vec![bs, n, m], out).unwrap()
}

/// Per-batch transpose of the last two axes of a rank-3 tensor.
pub fn transpose3(a: &Tensor<f64>) -> Tensor<f64> {
    let (bs, n, m) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    Tensor::from_fn(vec![bs, m, n], |idx| {
        let i = idx % n;
        let j = (idx / n) % m;
        let s = idx / (n * m);
        a.data()[(s * n + i) * m + j]
    })
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// A training setup small enough for debug-mode unit tests: 4 synthetic
/// pairs at 32x32, 2 blocks of width 8.
pub fn tiny_train_config(variant: Variant) -> patn::train::TrainConfig {
    let mut cfg = patn::train::TrainConfig::default();
    cfg.seed = 7;
    cfg.iterations = 4;
    cfg.batch_size = 2;
    let mut m = ModelConfig::new(variant).with_channels(8).with_input_size(32, 32);
    m.encoder_channels = vec![4, 6, 8];
    m.num_blocks = 2;
    cfg.model = m;
    cfg.disc.channels = [4, 8];
    cfg.disc.num_res_blocks = 1;
    cfg.data.n_identities = 1;
    cfg
}

/// SSIM straight from the definition: explicit 2-D Gaussian window at every
/// valid offset, then the mean over offsets and channels.
pub fn ssim_oracle(x: &Tensor<f64>, y: &Tensor<f64>, p: &patn::metrics::SsimParams) -> f64 {
    let [c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2]];
    let k = p.window;
    let r = (k / 2) as f64;
    let mut win = vec![0.0; k * k];
    for i in 0..k {
        for j in 0..k {
            let d2 = (i as f64 - r).powi(2) + (j as f64 - r).powi(2);
            win[i * k + j] = (-d2 / (2.0 * p.sigma * p.sigma)).exp();
        }
    }
    let s: f64 = win.iter().sum();
    win.iter_mut().for_each(|v| *v /= s);
    let c1 = (p.k1 * p.range).powi(2);
    let c2 = (p.k2 * p.range).powi(2);
    let mut total = 0.0;
    for ch in 0..c {
        let at = |t: &Tensor<f64>, yy: usize, xx: usize| t.data()[(ch * h + yy) * w + xx];
        let mut sum = 0.0;
        let mut count = 0;
        for oy in 0..=h - k {
            for ox in 0..=w - k {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..k {
                    for j in 0..k {
                        let wt = win[i * k + j];
                        let (a, b) = (at(x, oy + i, ox + j), at(y, oy + i, ox + j));
                        mx += wt * a;
                        my += wt * b;
                        sxx += wt * a * a;
                        syy += wt * b * b;
                        sxy += wt * a * b;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                sum += (2.0 * mx * my + c1) * (2.0 * cov + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
                count += 1;
            }
        }
        total += sum / count as f64;
    }
    total / c as f64
}

/// Valid generator config with small random widths, depth and norms.
pub fn random_model_config(r: &mut impl Rng) -> ModelConfig {
    let variant = if r.random_bool(0.5) { Variant::Patn } else { Variant::Apatn };
    let e0 = r.random_range(1..6);
    let e1 = r.random_range(e0 + 1..e0 + 6);
    let c = r.random_range(e1 + 1..e1 + 10);
    let mut cfg = ModelConfig::new(variant).with_channels(c).with_input_size(16, 16);
    cfg.encoder_channels = vec![e0, e1, c];
    cfg.num_blocks = r.random_range(1..6);
    cfg.attn_reduced_channels = r.random_range(1..=c);
    let norm = |r: &mut dyn rand::RngCore| if r.random_bool(0.5) { patn::model::layers::NormKind::Batch } else { patn::model::layers::NormKind::Instance };
    cfg.encoder_norm = norm(r);
    cfg.block_norm = norm(r);
    cfg
}
