//! Finite-difference cases shared by the gradient tests and the acceptance run.

use patn::graph::Mode;
use patn::model::blocks::{Apatb, Patb};
use patn::model::layers::Ctx;
use patn::model::{ModelConfig, Variant};
use patn::rng::Streams;
use patn::{Graph, ParamStore, Tensor};

use super::{away_from_zero, grad_check, input_store, normal, rng, uniform, GradReport};

const PER_PARAM: usize = 24;
const EPS: f64 = 1e-5;

type Case = (&'static str, GradReport);

fn unary(name: &'static str, x: Tensor<f64>, f: fn(&mut Graph<f64>, patn::Var) -> patn::Var) -> Case {
    let (mut store, ids) = input_store(vec![x]);
    let r = grad_check(&mut store, PER_PARAM, 1, |g, s| {
        let x = g.param(s, ids[0]);
        Ok(f(g, x))
    });
    (name, r)
}

fn binary(
    name: &'static str,
    a: Tensor<f64>,
    b: Tensor<f64>,
    f: fn(&mut Graph<f64>, patn::Var, patn::Var) -> patn::Result<patn::Var>,
) -> Case {
    let (mut store, ids) = input_store(vec![a, b]);
    let r = grad_check(&mut store, PER_PARAM, 2, |g, s| {
        let a = g.param(s, ids[0]);
        let b = g.param(s, ids[1]);
        f(g, a, b)
    });
    (name, r)
}

pub fn op_cases() -> Vec<Case> {
    let mut r = rng(11);
    let mut out = Vec::new();

    for (name, xs, ws, bias, stride, pad) in [
        ("conv2d 3x3 stride 1", [2, 3, 6, 6], [4, 3, 3, 3], true, 1, 1),
        ("conv2d 3x3 stride 2", [2, 3, 7, 7], [4, 3, 3, 3], false, 2, 1),
        ("conv2d 1x1", [2, 8, 4, 4], [5, 8, 1, 1], true, 1, 0),
    ] {
        let mut inputs = vec![normal(&xs, &mut r), normal(&ws, &mut r)];
        if bias {
            inputs.push(normal(&[ws[0]], &mut r));
        }
        let (mut store, ids) = input_store(inputs);
        let rep = grad_check(&mut store, PER_PARAM, 3, |g, s| {
            let x = g.param(s, ids[0]);
            let w = g.param(s, ids[1]);
            let b = ids.get(2).map(|&id| g.param(s, id));
            g.conv2d(x, w, b, stride, pad)
        });
        out.push((name, rep));
    }

    out.push(binary("matmul", normal(&[2, 3, 4], &mut r), normal(&[2, 4, 5], &mut r), |g, a, b| g.matmul(a, b)));
    out.push(binary("matmul_t a^T b", normal(&[2, 4, 3], &mut r), normal(&[2, 4, 5], &mut r), |g, a, b| {
        g.matmul_t(a, b, true, false)
    }));
    out.push(binary("matmul_t a b^T", normal(&[2, 3, 4], &mut r), normal(&[2, 5, 4], &mut r), |g, a, b| {
        g.matmul_t(a, b, false, true)
    }));
    out.push(binary("matmul_t a^T b^T", normal(&[2, 4, 3], &mut r), normal(&[2, 5, 4], &mut r), |g, a, b| {
        g.matmul_t(a, b, true, true)
    }));
    out.push(unary("transpose", normal(&[2, 3, 4], &mut r), |g, x| g.transpose(x).unwrap()));
    out.push(unary("reshape", normal(&[2, 3, 4], &mut r), |g, x| g.reshape(x, vec![6, 4]).unwrap()));
    out.push(unary("softmax_rows", normal(&[2, 5, 7], &mut r), |g, x| g.softmax_rows(x)));

    let s = [2, 3, 4, 4];
    out.push(binary("add", normal(&s, &mut r), normal(&s, &mut r), |g, a, b| g.add(a, b)));
    out.push(binary("sub", normal(&s, &mut r), normal(&s, &mut r), |g, a, b| g.sub(a, b)));
    out.push(binary("mul", normal(&s, &mut r), normal(&s, &mut r), |g, a, b| g.mul(a, b)));
    out.push(unary("mul (shared operand)", normal(&s, &mut r), |g, x| g.mul(x, x).unwrap()));
    out.push(unary("add_scalar", normal(&s, &mut r), |g, x| g.add_scalar(x, 0.7)));
    out.push(unary("mul_scalar", normal(&s, &mut r), |g, x| g.mul_scalar(x, -1.3)));
    out.push(unary("sigmoid", normal(&s, &mut r), |g, x| g.sigmoid(x)));
    out.push(unary("tanh", normal(&s, &mut r), |g, x| g.tanh(x)));
    out.push(unary("relu", away_from_zero(&s, 0.01, &mut r), |g, x| g.relu(x)));
    out.push(unary("leaky_relu", away_from_zero(&s, 0.01, &mut r), |g, x| g.leaky_relu(x, 0.2)));
    out.push(unary("abs", away_from_zero(&s, 0.01, &mut r), |g, x| g.abs(x)));
    out.push(unary("log_clamped", uniform(&s, 0.1, 2.0, &mut r), |g, x| g.log_clamped(x, 1e-8)));
    out.push(unary("sum", normal(&s, &mut r), |g, x| g.sum(x)));
    out.push(unary("mean", normal(&s, &mut r), |g, x| g.mean(x)));
    out.push(binary("concat_channels", normal(&[2, 3, 4, 4], &mut r), normal(&[2, 2, 4, 4], &mut r), |g, a, b| {
        g.concat_channels(a, b)
    }));
    out.push(unary("slice_channels", normal(&[2, 5, 3, 3], &mut r), |g, x| g.slice_channels(x, 1, 3).unwrap()));
    out.push(unary("upsample2x", normal(&[2, 3, 4, 4], &mut r), |g, x| g.upsample2x(x).unwrap()));
    out.push(unary("global_avg_pool", normal(&[2, 3, 4, 4], &mut r), |g, x| g.global_avg_pool(x).unwrap()));

    {
        let (mut store, ids) = input_store(vec![normal(&[2, 3, 4, 4], &mut r)]);
        let rep = grad_check(&mut store, PER_PARAM, 4, |g, s| {
            let x = g.param(s, ids[0]);
            let mut drop_rng = Streams::new(5).stream("dropout", 0);
            g.dropout(x, 0.5, Mode::Train, &mut drop_rng)
        });
        out.push(("dropout", rep));
    }

    for (name, batch) in [("instance_norm", false), ("batch_norm train", true)] {
        let c = 4;
        let (mut store, ids) = input_store(vec![
            normal(&[2, c, 5, 5], &mut r),
            uniform(&[c], 0.5, 1.5, &mut r),
            normal(&[c], &mut r),
        ]);
        let rep = grad_check(&mut store, PER_PARAM, 5, |g, s| {
            let x = g.param(s, ids[0]);
            let gamma = g.param(s, ids[1]);
            let beta = g.param(s, ids[2]);
            if batch {
                g.batch_norm_train(x, gamma, beta, EPS).map(|(y, _, _)| y)
            } else {
                g.instance_norm(x, gamma, beta, EPS)
            }
        });
        out.push((name, rep));
    }
    {
        let c = 4;
        let mean: Vec<f64> = normal(&[c], &mut r).into_data();
        let var: Vec<f64> = uniform(&[c], 0.5, 2.0, &mut r).into_data();
        let (mut store, ids) = input_store(vec![
            normal(&[2, c, 3, 3], &mut r),
            uniform(&[c], 0.5, 1.5, &mut r),
            normal(&[c], &mut r),
        ]);
        let rep = grad_check(&mut store, PER_PARAM, 6, |g, s| {
            let x = g.param(s, ids[0]);
            let gamma = g.param(s, ids[1]);
            let beta = g.param(s, ids[2]);
            g.batch_norm_eval(x, gamma, beta, &mean, &var, EPS)
        });
        out.push(("batch_norm eval", rep));
    }
    out
}

/// conv -> instance norm -> relu, checked end to end.
pub fn composite_case() -> Case {
    let mut r = rng(12);
    let c = 4;
    let (mut store, ids) = input_store(vec![
        normal(&[2, 3, 6, 6], &mut r),
        normal(&[c, 3, 3, 3], &mut r),
        normal(&[c], &mut r),
        uniform(&[c], 0.5, 1.5, &mut r),
        normal(&[c], &mut r),
    ]);
    let rep = grad_check(&mut store, PER_PARAM, 7, |g, s| {
        let x = g.param(s, ids[0]);
        let w = g.param(s, ids[1]);
        let b = g.param(s, ids[2]);
        let gamma = g.param(s, ids[3]);
        let beta = g.param(s, ids[4]);
        let h = g.conv2d(x, w, Some(b), 1, 1)?;
        let h = g.instance_norm(h, gamma, beta, EPS)?;
        Ok(g.relu(h))
    });
    ("conv -> norm -> relu", rep)
}

fn block_config(variant: Variant) -> ModelConfig {
    let mut cfg = ModelConfig::new(variant).with_channels(8);
    // larger weights than the training init, so the gradients are not all tiny
    cfg.init_std = 0.3;
    cfg
}

/// PATB and APATB in train mode (dropout on, fixed mask), with respect to
/// every parameter and every input code.
pub fn block_cases() -> Vec<Case> {
    let mut out = Vec::new();
    let mut r = rng(13);
    let shape = [2, 8, 6, 6];
    {
        let cfg = block_config(Variant::Patn);
        let mut store = ParamStore::<f64>::new();
        let block = Patb::new(&mut store, "patb", &cfg, 8, &mut rng(21)).unwrap();
        let image = store.add("image", normal(&shape, &mut r)).unwrap();
        let pose = store.add("pose", normal(&shape, &mut r)).unwrap();
        let rep = grad_check(&mut store, PER_PARAM, 8, |g, s| {
            let (iv, pv) = (g.param(s, image), g.param(s, pose));
            let mut drop_rng = Streams::new(9).stream("dropout", 0);
            let mut cx = Ctx { graph: g, store: s, mode: Mode::Train, rng: &mut drop_rng, frozen: false };
            let o = block.forward(&mut cx, iv, pv)?;
            // image and pose outputs together
            cx.graph.concat_channels(o.image, o.pose)
        });
        out.push(("PATB", rep));
    }
    {
        let cfg = block_config(Variant::Apatn);
        let mut store = ParamStore::<f64>::new();
        let block = Apatb::new(&mut store, "apatb", &cfg, true, &mut rng(22)).unwrap();
        let image = store.add("image", normal(&shape, &mut r)).unwrap();
        let pose_c = store.add("pose_c", normal(&shape, &mut r)).unwrap();
        let pose_t = store.add("pose_t", normal(&shape, &mut r)).unwrap();
        let rep = grad_check(&mut store, PER_PARAM, 10, |g, s| {
            let (iv, cv, tv) = (g.param(s, image), g.param(s, pose_c), g.param(s, pose_t));
            let mut drop_rng = Streams::new(9).stream("dropout", 0);
            let mut cx = Ctx { graph: g, store: s, mode: Mode::Train, rng: &mut drop_rng, frozen: false };
            let o = block.forward(&mut cx, iv, cv, tv)?;
            let (pc, pt) = o.poses.expect("pose update");
            let poses = cx.graph.concat_channels(pc, pt)?;
            cx.graph.concat_channels(o.image, poses)
        });
        out.push(("APATB", rep));
    }
    out
}

pub fn all_cases() -> Vec<Case> {
    let mut v = op_cases();
    v.push(composite_case());
    v.extend(block_cases());
    v
}
