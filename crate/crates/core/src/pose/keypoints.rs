use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::pose::{HEAD_JOINTS, NUM_JOINTS};

/// Exactly 18 joints, each either missing or at pixel coordinates `(x, y)`.
///
/// Pixel `(i, j)` has its center at integer coordinates `(x = j, y = i)`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct KeypointSet {
    pub joints: [Option<(f64, f64)>; NUM_JOINTS],
}

impl Default for KeypointSet {
    fn default() -> Self {
        Self::missing()
    }
}

impl KeypointSet {
    pub fn missing() -> Self {
        KeypointSet { joints: [None; NUM_JOINTS] }
    }

    pub fn with(mut self, joint: usize, x: f64, y: f64) -> Self {
        self.joints[joint] = Some((x, y));
        self
    }

    pub fn present(&self) -> impl Iterator<Item = (usize, (f64, f64))> + '_ {
        self.joints.iter().enumerate().filter_map(|(i, j)| j.map(|p| (i, p)))
    }

    pub fn num_present(&self) -> usize {
        self.joints.iter().flatten().count()
    }

    /// Multiplies every coordinate, e.g. to move between image and code resolution.
    pub fn scaled(&self, sx: f64, sy: f64) -> Self {
        let mut out = *self;
        for j in out.joints.iter_mut().flatten() {
            j.0 *= sx;
            j.1 *= sy;
        }
        out
    }
}

/// Diagonal of the tight box around the present head joints; `None` with fewer than two.
pub fn head_size(kps: &KeypointSet) -> Option<f64> {
    let pts: Vec<(f64, f64)> = HEAD_JOINTS.iter().filter_map(|&j| kps.joints[j]).collect();
    if pts.len() < 2 {
        return None;
    }
    let (mut x0, mut y0, mut x1, mut y1) = (f64::INFINITY, f64::INFINITY, f64::NEG_INFINITY, f64::NEG_INFINITY);
    for (x, y) in pts {
        x0 = x0.min(x);
        y0 = y0.min(y);
        x1 = x1.max(x);
        y1 = y1.max(y);
    }
    Some((x1 - x0).hypot(y1 - y0))
}

const MISSING: f64 = -1.0;

pub fn keypoints_header() -> String {
    let mut h = String::from("image_id");
    for j in 0..NUM_JOINTS {
        write!(h, ",x{j},y{j}").unwrap();
    }
    h
}

/// Parses the keypoint CSV: `image_id,x0,y0,...,x17,y17`, with `-1,-1` for missing joints.
pub fn parse_keypoints(text: &str, source_name: &str) -> Result<Vec<(String, KeypointSet)>> {
    let err = |line: usize, message: String| Error::Parse {
        source_name: source_name.to_string(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    let Some((_, header)) = lines.next() else {
        return Err(err(1, "missing header".into()));
    };
    if header.trim() != keypoints_header() {
        return Err(err(1, "unexpected header".into()));
    }
    let mut out = Vec::new();
    for (i, line) in lines {
        let lineno = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').map(str::trim).collect();
        if fields.len() != 1 + 2 * NUM_JOINTS {
            return Err(err(
                lineno,
                format!("expected {} columns, found {}", 1 + 2 * NUM_JOINTS, fields.len()),
            ));
        }
        if fields[0].is_empty() {
            return Err(err(lineno, "empty image_id".into()));
        }
        let mut kps = KeypointSet::missing();
        for j in 0..NUM_JOINTS {
            let parse = |s: &str| -> Result<f64> {
                let v: f64 = s
                    .parse()
                    .map_err(|_| err(lineno, format!("non-numeric coordinate {s:?} for joint {j}")))?;
                if !v.is_finite() {
                    return Err(err(lineno, format!("non-finite coordinate for joint {j}")));
                }
                Ok(v)
            };
            let x = parse(fields[1 + 2 * j])?;
            let y = parse(fields[2 + 2 * j])?;
            if !(x == MISSING && y == MISSING) {
                kps.joints[j] = Some((x, y));
            }
        }
        out.push((fields[0].to_string(), kps));
    }
    Ok(out)
}

pub fn format_keypoints(rows: &[(String, KeypointSet)]) -> String {
    let mut s = keypoints_header();
    s.push('\n');
    for (id, kps) in rows {
        s.push_str(id);
        for j in &kps.joints {
            match j {
                Some((x, y)) => write!(s, ",{x},{y}").unwrap(),
                None => s.push_str(",-1,-1"),
            }
        }
        s.push('\n');
    }
    s
}

pub fn load_keypoints(path: &Path) -> Result<Vec<(String, KeypointSet)>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_keypoints(&text, &path.display().to_string())
}

pub fn save_keypoints(path: &Path, rows: &[(String, KeypointSet)]) -> Result<()> {
    std::fs::write(path, format_keypoints(rows)).map_err(|e| Error::io(path, e))
}
