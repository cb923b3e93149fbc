//! Closed-form parameter counts derived from a [`ModelConfig`].

use crate::model::blocks::{Apatb, Patb};
use crate::model::config::{ModelConfig, Variant};
use crate::model::decoder::Decoder;
use crate::model::encoder::Encoder;
use crate::model::generator::{Generator, PREFIX};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ParamCount {
    pub total: usize,
    /// `(module, count)` in network order: `enc_a`, `enc_s`, `block0..`, `dec`.
    pub modules: Vec<(String, usize)>,
}

pub fn count_params(cfg: &ModelConfig) -> ParamCount {
    let c = cfg.base_channels;
    let mut modules = vec![
        ("enc_a".to_string(), Encoder::count(3, &cfg.encoder_channels)),
        ("enc_s".to_string(), Encoder::count(cfg.pose_input_channels(), &cfg.encoder_channels)),
    ];
    for i in 0..cfg.num_blocks {
        let n = match cfg.variant {
            Variant::Patn => Patb::count(cfg, if i == 0 { c } else { 2 * c }),
            Variant::Apatn => Apatb::count(cfg, i + 1 < cfg.num_blocks),
        };
        modules.push((format!("block{i}"), n));
    }
    modules.push(("dec".to_string(), Decoder::count(cfg)));
    ParamCount { total: modules.iter().map(|m| m.1).sum(), modules }
}

/// The same breakdown, obtained by summing the instantiated parameters.
pub fn enumerate_params<T: Scalar>(gen: &Generator<T>) -> ParamCount {
    let cfg = gen.config();
    let mut names = vec!["enc_a".to_string(), "enc_s".to_string()];
    names.extend((0..cfg.num_blocks).map(|i| format!("block{i}")));
    names.push("dec".to_string());
    let modules: Vec<(String, usize)> = names
        .into_iter()
        .map(|m| {
            let prefix = format!("{PREFIX}.{m}.");
            let n = gen.store.num_scalars_with_prefix(&prefix);
            (m, n)
        })
        .collect();
    ParamCount { total: gen.store.num_scalars(), modules }
}

/// Per-block counts of one PATB and one APATB built from `cfg`'s widths.
///
/// The PATB is taken in its steady state (`2C`-channel pose input) and the
/// APATB includes its pose-update residual block.
pub fn block_counts(cfg: &ModelConfig) -> (usize, usize) {
    let c = cfg.base_channels;
    (Patb::count(cfg, 2 * c), Apatb::count(cfg, true))
}

/// Reported totals for the full-scale models, in millions.
pub const PAPER_TOTAL_APATN: f64 = 16.93;
pub const PAPER_TOTAL_PATN: f64 = 41.36;
pub const PAPER_BLOCK_APATB: f64 = 2.76;
pub const PAPER_BLOCK_PATB: f64 = 4.72;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_favour_aligned_blocks() {
        let (patb, apatb) = block_counts(&ModelConfig::new(Variant::Patn));
        assert!(apatb < patb, "{apatb} vs {patb}");
        let a = count_params(&ModelConfig::new(Variant::Apatn)).total;
        let p = count_params(&ModelConfig::new(Variant::Patn)).total;
        assert!(a < p);
    }

    #[test]
    fn analytic_matches_instantiated_small() {
        for variant in [Variant::Patn, Variant::Apatn] {
            let mut cfg = ModelConfig::new(variant).with_channels(16);
            cfg.encoder_channels = vec![4, 8, 16];
            cfg.num_blocks = 3;
            let gen = Generator::<f32>::new(cfg.clone(), 1).unwrap();
            assert_eq!(count_params(&cfg), enumerate_params(&gen));
        }
    }
}
