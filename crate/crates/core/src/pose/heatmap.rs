use crate::pose::{KeypointSet, NUM_JOINTS};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// `18 x H x W` Gaussian rendering of a [`KeypointSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct PoseHeatmap<T: Scalar> {
    pub tensor: Tensor<T>,
    pub sigma: f64,
}

/// Channel `j` is `exp(-d^2 / (2 sigma^2))` around joint `j`, cut to zero beyond
/// `3 sigma`; missing joints leave their channel zero.
pub fn render_heatmap<T: Scalar>(kps: &KeypointSet, h: usize, w: usize, sigma: f64) -> PoseHeatmap<T> {
    assert!(h >= 1 && w >= 1, "heatmap size must be positive");
    assert!(sigma > 0.0, "sigma must be positive");
    let mut data = vec![T::zero(); NUM_JOINTS * h * w];
    let cutoff2 = (3.0 * sigma).powi(2);
    let denom = 2.0 * sigma * sigma;
    let reach = (3.0 * sigma).ceil() as isize + 1;
    for (j, (x, y)) in kps.present() {
        let plane = &mut data[j * h * w..(j + 1) * h * w];
        let (cx, cy) = (x.round() as isize, y.round() as isize);
        let y_lo = (cy - reach).max(0);
        let y_hi = (cy + reach).min(h as isize - 1);
        let x_lo = (cx - reach).max(0);
        let x_hi = (cx + reach).min(w as isize - 1);
        for py in y_lo..=y_hi {
            for px in x_lo..=x_hi {
                let d2 = (px as f64 - x).powi(2) + (py as f64 - y).powi(2);
                if d2 <= cutoff2 {
                    plane[py as usize * w + px as usize] = T::lit((-d2 / denom).exp());
                }
            }
        }
    }
    PoseHeatmap {
        tensor: Tensor::new(vec![NUM_JOINTS, h, w], data).expect("consistent shape"),
        sigma,
    }
}

/// Pixels within `radius` of any present joint.
pub fn heatmap_support_mask(kps: &KeypointSet, h: usize, w: usize, radius: f64) -> Vec<bool> {
    let mut mask = vec![false; h * w];
    let r2 = radius * radius;
    for (_, (x, y)) in kps.present() {
        for py in 0..h {
            for px in 0..w {
                if (px as f64 - x).powi(2) + (py as f64 - y).powi(2) <= r2 {
                    mask[py * w + px] = true;
                }
            }
        }
    }
    mask
}
