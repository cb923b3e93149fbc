//! Procedural stick-figure people.
//!
//! An identity fixes clothing colours and limb thickness; a pose is a bounded
//! random articulation of a fixed skeleton. The returned keypoints are the exact
//! joint positions used to draw each figure.

use rand::Rng;

use crate::error::{Error, Result};
use crate::pose::image::ImageSample;
use crate::pose::joint::*;
use crate::pose::{KeypointSet, NUM_JOINTS};
use crate::rng::Streams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Condition/target pair of one identity.
#[derive(Clone, Debug)]
pub struct PairSample<T: Scalar> {
    pub pair_id: String,
    pub identity: String,
    pub condition_id: String,
    pub target_id: String,
    pub p_c: ImageSample<T>,
    pub p_t: ImageSample<T>,
    pub s_c: KeypointSet,
    pub s_t: KeypointSet,
    /// Figure coverage of the target image, row-major `H x W`.
    pub target_mask: Vec<bool>,
}

/// One rendered figure.
#[derive(Clone, Debug)]
pub struct Figure<T: Scalar> {
    pub image_id: String,
    pub identity: String,
    pub image: ImageSample<T>,
    pub keypoints: KeypointSet,
    pub mask: Vec<bool>,
}

#[derive(Clone, Copy, Debug)]
struct Appearance {
    background: [f64; 3],
    torso: [f64; 3],
    arms: [f64; 3],
    legs: [f64; 3],
    skin: [f64; 3],
    limb_width: f64,
    torso_width: f64,
}

fn random_colour<R: Rng>(rng: &mut R, lo: f64, hi: f64) -> [f64; 3] {
    [rng.random_range(lo..hi), rng.random_range(lo..hi), rng.random_range(lo..hi)]
}

fn appearance<R: Rng>(rng: &mut R) -> Appearance {
    let torso = random_colour(rng, 0.05, 0.8);
    let arms = if rng.random_bool(0.5) { torso } else { random_colour(rng, 0.05, 0.8) };
    Appearance {
        background: [0.86, 0.86, 0.84],
        torso,
        arms,
        legs: random_colour(rng, 0.05, 0.7),
        skin: [rng.random_range(0.55..0.95), rng.random_range(0.4..0.75), rng.random_range(0.3..0.6)],
        limb_width: rng.random_range(0.07..0.1),
        torso_width: rng.random_range(0.15..0.2),
    }
}

/// Joint positions in body units (body height ~1, y pointing down, hips at origin).
fn articulate<R: Rng>(rng: &mut R) -> [(f64, f64); NUM_JOINTS] {
    let mut j = [(0.0, 0.0); NUM_JOINTS];
    let deg = |d: f64| d.to_radians();
    let lean = rng.random_range(-0.04..0.04);
    let neck = (lean, -0.42);
    j[NECK] = neck;
    let tilt = rng.random_range(deg(-15.0)..deg(15.0));
    let nose = (neck.0 + 0.12 * tilt.sin(), neck.1 - 0.12 * tilt.cos());
    j[NOSE] = nose;
    j[R_EYE] = (nose.0 - 0.03, nose.1 - 0.02);
    j[L_EYE] = (nose.0 + 0.03, nose.1 - 0.02);
    j[R_EAR] = (nose.0 - 0.06, nose.1);
    j[L_EAR] = (nose.0 + 0.06, nose.1);
    j[R_SHOULDER] = (neck.0 - 0.11, neck.1 + 0.02);
    j[L_SHOULDER] = (neck.0 + 0.11, neck.1 + 0.02);
    j[R_HIP] = (-0.07, 0.0);
    j[L_HIP] = (0.07, 0.0);
    // angle measured from straight down; `side` mirrors the limb outward
    let limb = |from: (f64, f64), len: f64, angle: f64, side: f64| {
        (from.0 + side * len * angle.sin(), from.1 + len * angle.cos())
    };
    for (shoulder, elbow, wrist, side) in [(R_SHOULDER, R_ELBOW, R_WRIST, -1.0), (L_SHOULDER, L_ELBOW, L_WRIST, 1.0)] {
        let upper = rng.random_range(deg(5.0)..deg(120.0));
        let bend = rng.random_range(deg(-70.0)..deg(70.0));
        j[elbow] = limb(j[shoulder], 0.17, upper, side);
        j[wrist] = limb(j[elbow], 0.15, upper + bend, side);
    }
    for (hip, knee, ankle, side) in [(R_HIP, R_KNEE, R_ANKLE, -1.0), (L_HIP, L_KNEE, L_ANKLE, 1.0)] {
        let thigh = rng.random_range(deg(-10.0)..deg(30.0));
        let bend = rng.random_range(deg(-35.0)..deg(10.0));
        j[knee] = limb(j[hip], 0.22, thigh, side);
        j[ankle] = limb(j[knee], 0.21, thigh + bend, side);
    }
    j
}

fn segment_distance(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let t = if len2 > 0.0 {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    (p.0 - a.0 - t * dx).hypot(p.1 - a.1 - t * dy)
}

struct Canvas {
    w: usize,
    h: usize,
    rgb: Vec<[f64; 3]>,
    coverage: Vec<bool>,
}

impl Canvas {
    /// Anti-aliased capsule of the given width (pixels) from `a` to `b`.
    fn capsule(&mut self, a: (f64, f64), b: (f64, f64), width: f64, colour: [f64; 3]) {
        let r = width / 2.0;
        let x_lo = (a.0.min(b.0) - r - 1.0).floor().max(0.0) as usize;
        let y_lo = (a.1.min(b.1) - r - 1.0).floor().max(0.0) as usize;
        let x_hi = ((a.0.max(b.0) + r + 1.0).ceil().max(0.0) as usize).min(self.w.saturating_sub(1));
        let y_hi = ((a.1.max(b.1) + r + 1.0).ceil().max(0.0) as usize).min(self.h.saturating_sub(1));
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let d = segment_distance((px as f64, py as f64), a, b);
                let alpha = (r + 0.5 - d).clamp(0.0, 1.0);
                if alpha > 0.0 {
                    let i = py * self.w + px;
                    for (c, &col) in self.rgb[i].iter_mut().zip(&colour) {
                        *c = *c * (1.0 - alpha) + col * alpha;
                    }
                    self.coverage[i] = true;
                }
            }
        }
    }
}

fn render<T: Scalar>(look: &Appearance, joints: &[(f64, f64); NUM_JOINTS], h: usize, w: usize) -> (ImageSample<T>, Vec<bool>) {
    let mut canvas = Canvas {
        w,
        h,
        rgb: vec![look.background; h * w],
        coverage: vec![false; h * w],
    };
    let scale = 0.8 * h as f64;
    let limb = look.limb_width * scale;
    let p = |i: usize| joints[i];
    let mid_hip = ((p(R_HIP).0 + p(L_HIP).0) / 2.0, (p(R_HIP).1 + p(L_HIP).1) / 2.0);
    for (a, b, c) in [(R_HIP, R_KNEE, R_ANKLE), (L_HIP, L_KNEE, L_ANKLE)] {
        canvas.capsule(p(a), p(b), limb * 1.15, look.legs);
        canvas.capsule(p(b), p(c), limb, look.legs);
    }
    canvas.capsule(p(R_HIP), p(L_HIP), limb * 1.2, look.legs);
    canvas.capsule(p(NECK), mid_hip, look.torso_width * scale, look.torso);
    canvas.capsule(p(R_SHOULDER), p(L_SHOULDER), limb * 1.2, look.torso);
    for (a, b, c) in [(R_SHOULDER, R_ELBOW, R_WRIST), (L_SHOULDER, L_ELBOW, L_WRIST)] {
        canvas.capsule(p(a), p(b), limb, look.arms);
        canvas.capsule(p(b), p(c), limb * 0.9, look.skin);
    }
    canvas.capsule(p(NECK), p(NOSE), limb * 0.8, look.skin);
    let head = (p(NOSE).0, p(NOSE).1 - 0.01 * scale);
    canvas.capsule(head, head, 0.15 * scale, look.skin);

    let mut data = vec![T::zero(); 3 * h * w];
    for (i, px) in canvas.rgb.iter().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = T::lit(2.0 * px[c] - 1.0);
        }
    }
    let image = ImageSample { tensor: Tensor::new(vec![3, h, w], data).expect("consistent shape") };
    (image, canvas.coverage)
}

/// Renders `poses_per_identity` figures for each of `n_identities` people.
pub fn synth_figures<T: Scalar>(
    seed: u64,
    n_identities: usize,
    poses_per_identity: usize,
    h: usize,
    w: usize,
) -> Result<Vec<Figure<T>>> {
    if h < 32 || w < 32 {
        return Err(Error::config(format!("synthetic images must be at least 32x32, got {h}x{w}")));
    }
    let streams = Streams::new(seed);
    let scale = 0.8 * h as f64;
    let mut out = Vec::with_capacity(n_identities * poses_per_identity);
    for id in 0..n_identities {
        let look = appearance(&mut streams.stream("synth.identity", id as u64));
        for k in 0..poses_per_identity {
            let mut rng = streams.stream("synth.pose", (id * poses_per_identity + k) as u64);
            let body = articulate(&mut rng);
            let ox = w as f64 / 2.0 + rng.random_range(-0.05..0.05) * w as f64;
            let oy = h as f64 / 2.0 + 0.09 * scale + rng.random_range(-0.03..0.03) * h as f64;
            let mut joints = [(0.0, 0.0); NUM_JOINTS];
            let mut kps = KeypointSet::missing();
            for (i, &(x, y)) in body.iter().enumerate() {
                joints[i] = (ox + x * scale, oy + y * scale);
                kps.joints[i] = Some(joints[i]);
            }
            let (image, mask) = render(&look, &joints, h, w);
            out.push(Figure {
                image_id: format!("id{id:03}_pose{k:03}"),
                identity: format!("id{id:03}"),
                image,
                keypoints: kps,
                mask,
            });
        }
    }
    Ok(out)
}

/// Every ordered pose pair (self-pairs included) within each identity.
pub fn pairs_from_figures<T: Scalar>(figures: &[Figure<T>], poses_per_identity: usize) -> Vec<PairSample<T>> {
    let mut out = Vec::new();
    if poses_per_identity == 0 {
        return out;
    }
    for group in figures.chunks(poses_per_identity) {
        for c in group {
            for t in group {
                out.push(PairSample {
                    pair_id: format!("{}__{}", c.image_id, t.image_id),
                    identity: c.identity.clone(),
                    condition_id: c.image_id.clone(),
                    target_id: t.image_id.clone(),
                    p_c: c.image.clone(),
                    p_t: t.image.clone(),
                    s_c: c.keypoints,
                    s_t: t.keypoints,
                    target_mask: t.mask.clone(),
                });
            }
        }
    }
    out
}

pub fn synth_dataset<T: Scalar>(
    seed: u64,
    n_identities: usize,
    poses_per_identity: usize,
    h: usize,
    w: usize,
) -> Result<Vec<PairSample<T>>> {
    let figures = synth_figures(seed, n_identities, poses_per_identity, h, w)?;
    Ok(pairs_from_figures(&figures, poses_per_identity))
}
