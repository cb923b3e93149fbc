//! On-disk pair datasets.
//!
//! Layout: `images/<image_id>.ppm`, optional `masks/<image_id>.pgm` (nonzero =
//! figure), `keypoints.csv` and `pairs.csv` with header
//! `pair_id,identity,condition_id,target_id`.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::heatmap::heatmap_support_mask;
use crate::pose::image::{load_image, load_pgm, save_image, save_pgm, ImageSample};
use crate::pose::keypoints::{load_keypoints, save_keypoints};
use crate::pose::synth::{Figure, PairSample};
use crate::pose::KeypointSet;
use crate::scalar::Scalar;

pub const PAIRS_HEADER: &str = "pair_id,identity,condition_id,target_id";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairEntry {
    pub pair_id: String,
    pub identity: String,
    pub condition_id: String,
    pub target_id: String,
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes figures, their keypoints and masks, and the pair list.
pub fn save_dataset<T: Scalar>(dir: &Path, figures: &[Figure<T>], pairs: &[PairSample<T>]) -> Result<()> {
    mkdir(&dir.join("images"))?;
    mkdir(&dir.join("masks"))?;
    let mut rows = Vec::with_capacity(figures.len());
    for f in figures {
        save_image(&dir.join("images").join(format!("{}.ppm", f.image_id)), &f.image)?;
        let mask: Vec<u8> = f.mask.iter().map(|&m| if m { 255 } else { 0 }).collect();
        save_pgm(&dir.join("masks").join(format!("{}.pgm", f.image_id)), f.image.width(), f.image.height(), &mask)?;
        rows.push((f.image_id.clone(), f.keypoints));
    }
    save_keypoints(&dir.join("keypoints.csv"), &rows)?;
    let entries: Vec<PairEntry> = pairs
        .iter()
        .map(|p| PairEntry {
            pair_id: p.pair_id.clone(),
            identity: p.identity.clone(),
            condition_id: p.condition_id.clone(),
            target_id: p.target_id.clone(),
        })
        .collect();
    save_pairs(&dir.join("pairs.csv"), &entries)
}

pub fn save_pairs(path: &Path, pairs: &[PairEntry]) -> Result<()> {
    let mut s = String::from(PAIRS_HEADER);
    s.push('\n');
    for p in pairs {
        let _ = writeln!(s, "{},{},{},{}", p.pair_id, p.identity, p.condition_id, p.target_id);
    }
    std::fs::write(path, s).map_err(|e| Error::io(path, e))
}

pub fn load_pairs(path: &Path) -> Result<Vec<PairEntry>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let source_name = path.display().to_string();
    let err = |line: usize, message: String| Error::Parse { source_name: source_name.clone(), line, message };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim() == PAIRS_HEADER => {}
        _ => return Err(err(1, format!("expected header {PAIRS_HEADER}"))),
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let f: Vec<&str> = line.split(',').map(str::trim).collect();
        if f.len() != 4 || f.iter().any(|s| s.is_empty()) {
            return Err(err(i + 1, format!("expected 4 non-empty columns, found {:?}", f)));
        }
        out.push(PairEntry {
            pair_id: f[0].into(),
            identity: f[1].into(),
            condition_id: f[2].into(),
            target_id: f[3].into(),
        });
    }
    Ok(out)
}

/// Loads every pair. Targets without a stored mask get the heatmap-support mask
/// of radius `mask_radius` around their keypoints.
pub fn load_dataset<T: Scalar>(dir: &Path, mask_radius: f64) -> Result<Vec<PairSample<T>>> {
    let entries = load_pairs(&dir.join("pairs.csv"))?;
    let kps: HashMap<String, KeypointSet> = load_keypoints(&dir.join("keypoints.csv"))?.into_iter().collect();
    let mut images: HashMap<String, ImageSample<T>> = HashMap::new();
    let mut get_image = |id: &str| -> Result<ImageSample<T>> {
        if let Some(img) = images.get(id) {
            return Ok(img.clone());
        }
        let img = load_image(&dir.join("images").join(format!("{id}.ppm")))?;
        images.insert(id.to_string(), img.clone());
        Ok(img)
    };
    let lookup = |id: &str| -> Result<KeypointSet> {
        kps.get(id)
            .copied()
            .ok_or_else(|| Error::format(format!("no keypoints for image {id}")))
    };
    let mut out = Vec::with_capacity(entries.len());
    for e in entries {
        let p_c = get_image(&e.condition_id)?;
        let p_t = get_image(&e.target_id)?;
        if (p_c.height(), p_c.width()) != (p_t.height(), p_t.width()) {
            return Err(Error::format(format!("pair {}: image sizes differ", e.pair_id)));
        }
        let s_t = lookup(&e.target_id)?;
        let (h, w) = (p_t.height(), p_t.width());
        let mask_path = dir.join("masks").join(format!("{}.pgm", e.target_id));
        let target_mask = if mask_path.exists() {
            let (mw, mh, px) = load_pgm(&mask_path)?;
            if (mw, mh) != (w, h) {
                return Err(Error::format(format!("{}: mask size differs from image", mask_path.display())));
            }
            px.iter().map(|&v| v > 0).collect()
        } else {
            heatmap_support_mask(&s_t, h, w, mask_radius)
        };
        out.push(PairSample {
            s_c: lookup(&e.condition_id)?,
            s_t,
            p_c,
            p_t,
            target_mask,
            pair_id: e.pair_id,
            identity: e.identity,
            condition_id: e.condition_id,
            target_id: e.target_id,
        });
    }
    Ok(out)
}
