//! Eval-mode forward timing of one PATB and one APATB with a per-operation breakdown.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Mode, OpClass};
use crate::model::blocks::{Apatb, Patb};
use crate::model::config::{ModelConfig, Variant};
use crate::model::layers::Ctx;
use crate::params::ParamStore;
use crate::rng::Streams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub size: usize,
    pub channels: usize,
    pub batch: usize,
    pub iters: usize,
    pub warmup: usize,
    pub seed: u64,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig { size: 64, channels: 256, batch: 1, iters: 50, warmup: 5, seed: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    /// `{block}.{class}.{k}`: the `k`-th operation of that class in the block's forward pass.
    pub name: String,
    pub calls: usize,
    pub total: Duration,
    pub mean: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockTotal {
    pub block: String,
    pub calls: usize,
    pub total: Duration,
    pub mean: Duration,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchReport {
    pub config: BenchConfig,
    pub precision: &'static str,
    pub rows: Vec<BenchRow>,
    pub blocks: Vec<BlockTotal>,
}

impl BenchReport {
    pub fn block_mean(&self, block: &str) -> Option<Duration> {
        self.blocks.iter().find(|b| b.block == block).map(|b| b.mean)
    }

    /// Operation classes appearing in any row.
    pub fn classes(&self) -> Vec<&str> {
        let mut seen: Vec<&str> = self.rows.iter().filter_map(|r| r.name.split('.').nth(1)).collect();
        seen.sort_unstable();
        seen.dedup();
        seen
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("kind,name,calls,total_us,mean_us\n");
        for b in &self.blocks {
            let _ = writeln!(s, "block,{},{},{:.3},{:.3}", b.block, b.calls, us(b.total), us(b.mean));
        }
        for r in &self.rows {
            let _ = writeln!(s, "op,{},{},{:.3},{:.3}", r.name, r.calls, us(r.total), us(r.mean));
        }
        s
    }

    pub fn to_table(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.name.len())
            .chain(self.blocks.iter().map(|b| b.block.len()))
            .max()
            .unwrap_or(4)
            .max(4);
        let c = &self.config;
        let mut s = format!(
            "blocks at {}x{}, C={}, batch {}, {} iters after {} warmup, {}\n",
            c.size, c.size, c.channels, c.batch, c.iters, c.warmup, self.precision
        );
        let _ = writeln!(s, "{:<width$}  {:>6}  {:>14}  {:>12}", "name", "calls", "total_us", "mean_us");
        for b in &self.blocks {
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>14.1}  {:>12.1}", b.block, b.calls, us(b.total), us(b.mean));
        }
        for r in &self.rows {
            let _ = writeln!(s, "{:<width$}  {:>6}  {:>14.1}  {:>12.1}", r.name, r.calls, us(r.total), us(r.mean));
        }
        s
    }
}

fn us(d: Duration) -> f64 {
    d.as_secs_f64() * 1e6
}

fn random<T: Scalar>(shape: Vec<usize>, rng: &mut impl rand::Rng) -> Tensor<T> {
    Tensor::from_fn(shape, |_| {
        let v: f64 = StandardNormal.sample(rng);
        T::lit(v)
    })
}

struct Timed {
    total: Duration,
    ops: BTreeMap<(OpClass, usize), Duration>,
}

fn time_block<T: Scalar>(
    cfg: &BenchConfig,
    inputs: usize,
    mut forward: impl FnMut(&mut Graph<T>, &[crate::graph::Var]) -> Result<()>,
    values: &[Tensor<T>],
) -> Result<Timed> {
    let mut timed = Timed { total: Duration::ZERO, ops: BTreeMap::new() };
    debug_assert_eq!(values.len(), inputs);
    for i in 0..cfg.warmup + cfg.iters {
        let mut g = Graph::new();
        let vars: Vec<_> = values.iter().map(|v| g.constant(v.clone())).collect();
        g.enable_profiling();
        let t0 = Instant::now();
        forward(&mut g, &vars)?;
        let elapsed = t0.elapsed();
        g.check_finite()?;
        if i < cfg.warmup {
            continue;
        }
        timed.total += elapsed;
        let mut counters: BTreeMap<OpClass, usize> = BTreeMap::new();
        for &(class, d) in g.timings().unwrap_or(&[]) {
            let k = counters.entry(class).or_default();
            *timed.ops.entry((class, *k)).or_default() += d;
            *k += 1;
        }
    }
    Ok(timed)
}

/// Times `iters` eval-mode forward passes of a steady-state PATB (2C-channel
/// pose input) and a full APATB after `warmup` untimed passes.
pub fn bench_blocks<T: Scalar>(cfg: &BenchConfig) -> Result<BenchReport> {
    if cfg.iters < 1 || cfg.warmup < 1 {
        return Err(Error::config("bench needs iters >= 1 and warmup >= 1"));
    }
    if cfg.size == 0 || cfg.channels == 0 || cfg.batch == 0 {
        return Err(Error::config("bench size, channels and batch must be positive"));
    }
    let model = ModelConfig::new(Variant::Apatn).with_channels(cfg.channels);
    let streams = Streams::new(cfg.seed);
    let mut init = streams.stream("bench.init", 0);
    let mut store = ParamStore::<T>::new();
    let c = cfg.channels;
    let patb = Patb::new(&mut store, "patb", &model, 2 * c, &mut init)?;
    let apatb = Apatb::new(&mut store, "apatb", &model, true, &mut init)?;
    let mut data = streams.stream("bench.inputs", 0);
    let (b, s) = (cfg.batch, cfg.size);
    let image = random::<T>(vec![b, c, s, s], &mut data);
    let pose2 = random::<T>(vec![b, 2 * c, s, s], &mut data);
    let pose_c = random::<T>(vec![b, c, s, s], &mut data);
    let pose_t = random::<T>(vec![b, c, s, s], &mut data);
    let mut rng = streams.stream("bench.dropout", 0);

    let mut results = Vec::new();
    {
        let (store, rng) = (&mut store, &mut rng);
        let t = time_block(
            cfg,
            2,
            |g, v| {
                let mut cx = Ctx { graph: g, store, mode: Mode::Eval, rng, frozen: true };
                patb.forward(&mut cx, v[0], v[1]).map(|_| ())
            },
            &[image.clone(), pose2],
        )?;
        results.push(("patb", t));
    }
    {
        let (store, rng) = (&mut store, &mut rng);
        let t = time_block(
            cfg,
            3,
            |g, v| {
                let mut cx = Ctx { graph: g, store, mode: Mode::Eval, rng, frozen: true };
                apatb.forward(&mut cx, v[0], v[1], v[2]).map(|_| ())
            },
            &[image, pose_c, pose_t],
        )?;
        results.push(("apatb", t));
    }

    let n = cfg.iters;
    let mut rows = Vec::new();
    let mut blocks = Vec::new();
    for (name, t) in results {
        blocks.push(BlockTotal { block: name.to_string(), calls: n, total: t.total, mean: t.total / n as u32 });
        for ((class, k), total) in t.ops {
            rows.push(BenchRow {
                name: format!("{name}.{}.{k}", class.label()),
                calls: n,
                total,
                mean: total / n as u32,
            });
        }
    }
    Ok(BenchReport { config: cfg.clone(), precision: T::NAME, rows, blocks })
}
