//! Grayscale renderings of per-block attention.

use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::model::generator::{AttentionMap, AttentionRecord};
use crate::pose::image::save_pgm;
use crate::scalar::Scalar;
use crate::tensor::dims4;

/// Which alignment rows to average for an aligned-attention export.
#[derive(Clone, Debug, PartialEq)]
pub enum QuerySet {
    /// Every target location.
    All,
    /// Target locations flagged in a code-resolution `h x w` mask.
    Pixels(Vec<bool>),
}

impl QuerySet {
    fn label(&self) -> &'static str {
        match self {
            QuerySet::All => "full",
            QuerySet::Pixels(_) => "foreground",
        }
    }

    /// Downsamples an image-resolution mask to the code grid: a cell is a query
    /// when any of its pixels is set.
    pub fn from_image_mask(mask: &[bool], height: usize, width: usize, code: (usize, usize)) -> Self {
        let (h, w) = code;
        let mut cells = vec![false; h * w];
        for y in 0..height {
            for x in 0..width {
                if mask[y * width + x] {
                    let cy = (y * h / height).min(h - 1);
                    let cx = (x * w / width).min(w - 1);
                    cells[cy * w + cx] = true;
                }
            }
        }
        QuerySet::Pixels(cells)
    }
}

fn to_gray(v: f64) -> u8 {
    (v * 255.0 + 0.5).floor().clamp(0.0, 255.0) as u8
}

/// Channel mean of one sample's mask, mapping `[0, 1]` onto `[0, 255]`.
pub fn mask_image<T: Scalar>(mask: &crate::tensor::Tensor<T>, sample: usize) -> Result<Vec<u8>> {
    let [b, c, h, w] = dims4(mask.shape())?;
    if sample >= b {
        return Err(Error::usage(format!("sample {sample} out of range for batch {b}")));
    }
    let d = mask.data();
    let plane = h * w;
    Ok((0..plane)
        .map(|p| {
            let s: f64 = (0..c).map(|ch| d[(sample * c + ch) * plane + p].to_f64_lossy()).sum();
            to_gray(s / c as f64)
        })
        .collect())
}

/// Mean of the selected alignment rows, a distribution over condition locations.
pub fn alignment_profile<T: Scalar>(a: &crate::tensor::Tensor<T>, sample: usize, query: &QuerySet) -> Result<Vec<f64>> {
    let shape = a.shape();
    if shape.len() != 3 || shape[1] != shape[2] {
        return Err(Error::config(format!("alignment must be B x n x n, got {shape:?}")));
    }
    let (b, n) = (shape[0], shape[1]);
    if sample >= b {
        return Err(Error::usage(format!("sample {sample} out of range for batch {b}")));
    }
    let rows: Vec<usize> = match query {
        QuerySet::All => (0..n).collect(),
        QuerySet::Pixels(m) => {
            if m.len() != n {
                return Err(Error::config(format!("query mask has {} cells, alignment has {n}", m.len())));
            }
            (0..n).filter(|&i| m[i]).collect()
        }
    };
    if rows.is_empty() {
        return Err(Error::usage("query set is empty"));
    }
    let base = sample * n * n;
    let d = a.data();
    let mut out = vec![0.0; n];
    for &r in &rows {
        for (j, o) in out.iter_mut().enumerate() {
            *o += d[base + r * n + j].to_f64_lossy();
        }
    }
    out.iter_mut().for_each(|v| *v /= rows.len() as f64);
    Ok(out)
}

/// Profile values divided by their maximum, then mapped onto `[0, 255]`.
pub fn profile_image(profile: &[f64]) -> Vec<u8> {
    let max = profile.iter().cloned().fold(0.0, f64::max);
    profile
        .iter()
        .map(|&v| if max > 0.0 { to_gray(v / max) } else { 0 })
        .collect()
}

/// Writes one P5 file per block and query set; returns the paths in order.
///
/// Mask records ignore `queries` and produce `block{i}_mask.pgm`; alignment
/// records produce `block{i}_align_{full|foreground}.pgm` for each query set.
pub fn export_attention<T: Scalar>(
    record: &AttentionRecord<T>,
    sample: usize,
    queries: &[QuerySet],
    out_dir: &Path,
    stem: &str,
) -> Result<Vec<PathBuf>> {
    if record.blocks.is_empty() {
        return Err(Error::usage("attention record is empty"));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (h, w) = record.code_size;
    let mut paths = Vec::new();
    for (i, block) in record.blocks.iter().enumerate() {
        match block {
            AttentionMap::Mask(m) => {
                let path = out_dir.join(format!("{stem}block{i}_mask.pgm"));
                save_pgm(&path, w, h, &mask_image(m, sample)?)?;
                paths.push(path);
            }
            AttentionMap::Alignment(a) => {
                let defaults = [QuerySet::All];
                let qs = if queries.is_empty() { &defaults[..] } else { queries };
                for q in qs {
                    let path = out_dir.join(format!("{stem}block{i}_align_{}.pgm", q.label()));
                    save_pgm(&path, w, h, &profile_image(&alignment_profile(a, sample, q)?))?;
                    paths.push(path);
                }
            }
        }
    }
    Ok(paths)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn half_mask_is_mid_gray() {
        let m = Tensor::<f64>::full(vec![1, 4, 2, 3], 0.5);
        assert!(mask_image(&m, 0).unwrap().iter().all(|&v| v == 128));
    }

    #[test]
    fn foreground_downsampling() {
        let mut mask = vec![false; 8 * 8];
        mask[5 * 8 + 6] = true;
        let QuerySet::Pixels(cells) = QuerySet::from_image_mask(&mask, 8, 8, (2, 2)) else { unreachable!() };
        assert_eq!(cells, vec![false, false, false, true]);
    }
}
