//! Keypoints, pose heatmaps, PPM images and the synthetic stick-figure dataset.

pub mod dataset;
pub mod heatmap;
pub mod image;
pub mod keypoints;
pub mod synth;

pub use heatmap::{heatmap_support_mask, render_heatmap, PoseHeatmap};
pub use image::{load_image, load_pgm, save_image, save_pgm, ImageSample};
pub use keypoints::{head_size, load_keypoints, save_keypoints, KeypointSet};
pub use synth::{synth_dataset, PairSample};

pub const NUM_JOINTS: usize = 18;

/// 18-joint layout used by the OpenPose/COCO-style pose estimator.
pub const JOINT_NAMES: [&str; NUM_JOINTS] = [
    "nose",
    "neck",
    "r_shoulder",
    "r_elbow",
    "r_wrist",
    "l_shoulder",
    "l_elbow",
    "l_wrist",
    "r_hip",
    "r_knee",
    "r_ankle",
    "l_hip",
    "l_knee",
    "l_ankle",
    "r_eye",
    "l_eye",
    "r_ear",
    "l_ear",
];

pub mod joint {
    pub const NOSE: usize = 0;
    pub const NECK: usize = 1;
    pub const R_SHOULDER: usize = 2;
    pub const R_ELBOW: usize = 3;
    pub const R_WRIST: usize = 4;
    pub const L_SHOULDER: usize = 5;
    pub const L_ELBOW: usize = 6;
    pub const L_WRIST: usize = 7;
    pub const R_HIP: usize = 8;
    pub const R_KNEE: usize = 9;
    pub const R_ANKLE: usize = 10;
    pub const L_HIP: usize = 11;
    pub const L_KNEE: usize = 12;
    pub const L_ANKLE: usize = 13;
    pub const R_EYE: usize = 14;
    pub const L_EYE: usize = 15;
    pub const R_EAR: usize = 16;
    pub const L_EAR: usize = 17;
}

/// Joints whose bounding box defines the head size for PCKh.
pub const HEAD_JOINTS: [usize; 6] = [
    joint::NOSE,
    joint::NECK,
    joint::R_EYE,
    joint::L_EYE,
    joint::R_EAR,
    joint::L_EAR,
];
