//! SSIM, mask-SSIM and PCKh.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{head_size, KeypointSet};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SsimParams {
    pub window: usize,
    pub sigma: f64,
    pub k1: f64,
    pub k2: f64,
    /// Dynamic range of pixel values; 2 for images in `[-1, 1]`.
    pub range: f64,
}

impl Default for SsimParams {
    fn default() -> Self {
        SsimParams { window: 11, sigma: 1.5, k1: 0.01, k2: 0.03, range: 2.0 }
    }
}

impl SsimParams {
    pub fn validate(&self) -> Result<()> {
        if self.window % 2 == 0 || self.window == 0 {
            return Err(Error::config(format!("SSIM window {} must be odd", self.window)));
        }
        if !(self.k1 > 0.0 && self.k2 > 0.0 && self.sigma > 0.0 && self.range > 0.0) {
            return Err(Error::config("SSIM constants must be positive"));
        }
        Ok(())
    }

    /// Normalized 1-D Gaussian taps.
    pub fn taps(&self) -> Vec<f64> {
        let r = (self.window / 2) as f64;
        let raw: Vec<f64> = (0..self.window)
            .map(|i| {
                let d = i as f64 - r;
                (-d * d / (2.0 * self.sigma * self.sigma)).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        raw.into_iter().map(|v| v / s).collect()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PckhParams {
    pub factor: f64,
}

impl Default for PckhParams {
    fn default() -> Self {
        PckhParams { factor: 0.5 }
    }
}

fn image_dims<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, window: usize) -> Result<(usize, usize, usize)> {
    if x.shape() != y.shape() {
        return Err(Error::config(format!("SSIM: image shapes differ {:?} vs {:?}", x.shape(), y.shape())));
    }
    let s = x.shape();
    if s.len() != 3 {
        return Err(Error::config(format!("SSIM expects C x H x W images, got {s:?}")));
    }
    if s[1] < window || s[2] < window {
        return Err(Error::config(format!("SSIM: image {}x{} is smaller than the {window}-pixel window", s[1], s[2])));
    }
    Ok((s[0], s[1], s[2]))
}

/// Valid-mode separable filtering of one `h x w` plane.
fn filter(plane: &[f64], h: usize, w: usize, taps: &[f64]) -> Vec<f64> {
    let k = taps.len();
    let (oh, ow) = (h - k + 1, w - k + 1);
    let mut rows = vec![0.0; h * ow];
    for y in 0..h {
        for x in 0..ow {
            rows[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * plane[y * w + x + i]).sum();
        }
    }
    let mut out = vec![0.0; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            out[y * ow + x] = taps.iter().enumerate().map(|(i, t)| t * rows[(y + i) * ow + x]).sum();
        }
    }
    out
}

/// Mean SSIM over all valid window positions, averaged over channels.
pub fn ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, params: &SsimParams) -> Result<f64> {
    params.validate()?;
    let (c, h, w) = image_dims(x, y, params.window)?;
    let taps = params.taps();
    let c1 = (params.k1 * params.range).powi(2);
    let c2 = (params.k2 * params.range).powi(2);
    let plane = h * w;
    let (xd, yd) = (x.data(), y.data());
    let mut total = 0.0;
    for ch in 0..c {
        let a: Vec<f64> = xd[ch * plane..(ch + 1) * plane].iter().map(|v| v.to_f64_lossy()).collect();
        let b: Vec<f64> = yd[ch * plane..(ch + 1) * plane].iter().map(|v| v.to_f64_lossy()).collect();
        let aa: Vec<f64> = a.iter().map(|v| v * v).collect();
        let bb: Vec<f64> = b.iter().map(|v| v * v).collect();
        let ab: Vec<f64> = a.iter().zip(&b).map(|(u, v)| u * v).collect();
        let (mu_a, mu_b) = (filter(&a, h, w, &taps), filter(&b, h, w, &taps));
        let (e_aa, e_bb, e_ab) = (filter(&aa, h, w, &taps), filter(&bb, h, w, &taps), filter(&ab, h, w, &taps));
        let n = mu_a.len();
        let mut sum = 0.0;
        for i in 0..n {
            let (ma, mb) = (mu_a[i], mu_b[i]);
            let va = e_aa[i] - ma * ma;
            let vb = e_bb[i] - mb * mb;
            let cov = e_ab[i] - ma * mb;
            sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
        }
        total += sum / n as f64;
    }
    Ok(total / c as f64)
}

/// SSIM after setting both images to zero wherever `mask` (row-major `H x W`) is false.
pub fn mask_ssim<T: Scalar>(x: &Tensor<T>, y: &Tensor<T>, mask: &[bool], params: &SsimParams) -> Result<f64> {
    let (c, h, w) = image_dims(x, y, params.window)?;
    if mask.len() != h * w {
        return Err(Error::config(format!("mask has {} pixels, images have {}", mask.len(), h * w)));
    }
    if !mask.iter().any(|&m| m) {
        return Err(Error::config("mask-SSIM: mask is empty"));
    }
    let apply = |t: &Tensor<T>| {
        let mut out = t.clone();
        for ch in 0..c {
            for (v, &m) in out.data_mut()[ch * h * w..(ch + 1) * h * w].iter_mut().zip(mask) {
                if !m {
                    *v = T::zero();
                }
            }
        }
        out
    };
    ssim(&apply(x), &apply(y), params)
}

/// Fraction of joints present in both sets whose offset is below
/// `factor * head_size(gt)`; `None` when undefined.
pub fn pckh(pred: &KeypointSet, gt: &KeypointSet, params: &PckhParams) -> Option<f64> {
    let head = head_size(gt)?;
    let threshold = params.factor * head;
    let mut common = 0usize;
    let mut hits = 0usize;
    for (p, g) in pred.joints.iter().zip(&gt.joints) {
        if let (Some((px, py)), Some((gx, gy))) = (p, g) {
            common += 1;
            if (px - gx).hypot(py - gy) < threshold {
                hits += 1;
            }
        }
    }
    (common > 0).then(|| hits as f64 / common as f64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EvalRow {
    pub pair_id: String,
    pub ssim: f64,
    pub mask_ssim: f64,
    pub pckh: Option<f64>,
}

/// Means with undefined PCKh rows left out of the PCKh mean.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalSummary {
    pub count: usize,
    pub ssim: f64,
    pub mask_ssim: f64,
    pub pckh: Option<f64>,
    pub pckh_count: usize,
}

pub fn summarize(rows: &[EvalRow]) -> EvalSummary {
    let n = rows.len();
    let mean = |f: &dyn Fn(&EvalRow) -> f64| if n == 0 { f64::NAN } else { rows.iter().map(f).sum::<f64>() / n as f64 };
    let defined: Vec<f64> = rows.iter().filter_map(|r| r.pckh).collect();
    EvalSummary {
        count: n,
        ssim: mean(&|r| r.ssim),
        mask_ssim: mean(&|r| r.mask_ssim),
        pckh: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        pckh_count: defined.len(),
    }
}

/// `pair_id,ssim,mask_ssim,pckh` rows, then a `mean` row and a `count` row.
pub fn format_report(rows: &[EvalRow]) -> String {
    let opt = |v: Option<f64>| v.map_or("NA".to_string(), |v| format!("{v:.6}"));
    let mut out = String::from("pair_id,ssim,mask_ssim,pckh\n");
    for r in rows {
        let _ = writeln!(out, "{},{:.6},{:.6},{}", r.pair_id, r.ssim, r.mask_ssim, opt(r.pckh));
    }
    let s = summarize(rows);
    let _ = writeln!(out, "mean,{:.6},{:.6},{}", s.ssim, s.mask_ssim, opt(s.pckh));
    let _ = writeln!(out, "count,{},{},{}", s.count, s.count, s.pckh_count);
    out
}
