use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use patn::bench::{bench_blocks, BenchConfig};
use patn::metrics::{format_report, mask_ssim, pckh, ssim, EvalRow, PckhParams, SsimParams};
use patn::model::count::{PAPER_BLOCK_APATB, PAPER_BLOCK_PATB, PAPER_TOTAL_APATN, PAPER_TOTAL_PATN};
use patn::model::{block_counts, count_params, export_attention, Generator, ModelConfig, QuerySet, Variant};
use patn::pose::dataset::load_dataset;
use patn::pose::synth::{pairs_from_figures, synth_figures};
use patn::pose::{load_keypoints, render_heatmap, save_image, ImageSample, KeypointSet, PairSample};
use patn::rng::Streams;
use patn::strict::parse_strict;
use patn::train::{checkpoint_config, run, Precision, TrainConfig, Trainer};
use patn::{Error, Mode, Result, Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::manifest::{OutputRoot, RunManifest, Versions};
use crate::{BenchArgs, Cli, Command, EvalArgs, ExportArgs, InferArgs, ParamsArgs, SynthArgs, TrainArgs};

macro_rules! with_precision {
    ($p:expr, $T:ident => $body:expr) => {
        match $p {
            Precision::F32 => {
                type $T = f32;
                $body
            }
            Precision::F64 => {
                type $T = f64;
                $body
            }
        }
    };
}

struct Finished {
    out_dir: PathBuf,
    config: serde_json::Value,
    seed: Option<u64>,
    outputs: Vec<PathBuf>,
}

pub fn dispatch(cli: &Cli, argv: &[String]) -> Result<()> {
    let root = OutputRoot::new(cli.output_root.clone());
    let (name, finished) = match &cli.command {
        Command::Synth(a) => ("synth", synth(a, &root)?),
        Command::Train(a) => ("train", train(a, &root)?),
        Command::Infer(a) => ("infer", infer(a, &root)?),
        Command::Eval(a) => ("eval", eval(a, &root)?),
        Command::Params(a) => ("params", params(a, &root)?),
        Command::Bench(a) => ("bench", bench(a, &root)?),
        Command::ExportAttn(a) => ("export-attn", export(a, &root)?),
        Command::Rerun(a) => return rerun(&a.manifest, cli.output_root.clone()),
    };
    let manifest = RunManifest {
        command: name.to_string(),
        argv: argv.iter().skip(1).cloned().collect(),
        config: finished.config,
        seed: finished.seed,
        versions: Versions::current(),
        outputs: finished.outputs,
    };
    manifest.write(&finished.out_dir)?;
    Ok(())
}

fn rerun(path: &Path, output_root: Option<PathBuf>) -> Result<()> {
    use clap::Parser;
    let manifest = RunManifest::read(path)?;
    let mut argv = vec!["patn".to_string()];
    argv.extend(manifest.argv.iter().cloned());
    let mut cli = Cli::try_parse_from(&argv)
        .map_err(|e| Error::usage(format!("manifest argv does not parse: {}", e.to_string().lines().next().unwrap_or(""))))?;
    if matches!(cli.command, Command::Rerun(_)) {
        return Err(Error::usage("a manifest may not record another rerun"));
    }
    if cli.output_root.is_none() {
        cli.output_root = output_root;
    }
    dispatch(&cli, &argv)
}

fn read_config<C: Serialize + serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<C> {
    match path {
        None => Ok(C::default()),
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            parse_strict(&text, &p.display().to_string())
        }
    }
}

fn mkdir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub seed: u64,
    pub n_identities: usize,
    pub poses_per_identity: usize,
    pub height: usize,
    pub width: usize,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig { seed: 0, n_identities: 2, poses_per_identity: 2, height: 32, width: 32 }
    }
}

fn synth(a: &SynthArgs, root: &OutputRoot) -> Result<Finished> {
    let mut cfg: SynthConfig = read_config(a.config.as_deref())?;
    if let Some(v) = a.seed {
        cfg.seed = v;
    }
    if let Some(v) = a.identities {
        cfg.n_identities = v;
    }
    if let Some(v) = a.poses {
        cfg.poses_per_identity = v;
    }
    if let Some(v) = a.height {
        cfg.height = v;
    }
    if let Some(v) = a.width {
        cfg.width = v;
    }
    let out = root.resolve(&a.out)?;
    let figures = synth_figures::<f64>(cfg.seed, cfg.n_identities, cfg.poses_per_identity, cfg.height, cfg.width)?;
    let pairs = pairs_from_figures(&figures, cfg.poses_per_identity);
    patn::pose::dataset::save_dataset(&out, &figures, &pairs)?;
    println!("wrote {} figures and {} pairs to {}", figures.len(), pairs.len(), out.display());
    Ok(Finished {
        config: serde_json::to_value(&cfg)?,
        seed: Some(cfg.seed),
        outputs: vec![out.join("images"), out.join("masks"), out.join("keypoints.csv"), out.join("pairs.csv")],
        out_dir: out,
    })
}

fn train_overrides(a: &TrainArgs) -> bool {
    a.seed.is_some()
        || a.iterations.is_some()
        || a.batch_size.is_some()
        || a.variant.is_some()
        || a.blocks.is_some()
        || a.channels.is_some()
        || a.lr.is_some()
        || a.precision.is_some()
        || a.data.is_some()
        || a.checkpoint_every.is_some()
}

fn train(a: &TrainArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let cfg = match &a.resume {
        Some(ckpt) => {
            if train_overrides(a) {
                return Err(Error::usage("--resume continues the checkpoint's own config; drop the override flags"));
            }
            checkpoint_config(ckpt)?
        }
        None => {
            let mut cfg: TrainConfig = read_config(a.config.as_deref())?;
            if let Some(v) = a.seed {
                cfg.seed = v;
            }
            if let Some(v) = a.iterations {
                cfg.iterations = v;
            }
            if let Some(v) = a.batch_size {
                cfg.batch_size = v;
            }
            if let Some(v) = a.variant {
                cfg.model.variant = v;
            }
            if let Some(v) = a.blocks {
                cfg.model.num_blocks = v;
            }
            if let Some(v) = a.channels {
                cfg.model = cfg.model.with_channels(v);
            }
            if let Some(v) = a.lr {
                cfg.lr = v;
            }
            if let Some(v) = a.precision {
                cfg.precision = v;
            }
            if let Some(v) = &a.data {
                cfg.data.dir = Some(v.clone());
            }
            if let Some(v) = a.checkpoint_every {
                cfg.checkpoint_every = v;
            }
            cfg.validate()?;
            cfg
        }
    };
    let quiet = a.quiet;
    let saved = with_precision!(cfg.precision, T => {
        let mut trainer = match &a.resume {
            Some(ckpt) => Trainer::<T>::resume(ckpt)?,
            None => Trainer::<T>::new(cfg.clone())?,
        };
        if !quiet {
            println!("{}", patn::train::LOG_HEADER);
        }
        let saved = run(&mut trainer, &out, |line| {
            if !quiet {
                println!("{line}");
            }
        })?;
        println!("eval_l1,{}", trainer.eval_l1()?);
        saved
    });
    let mut outputs = vec![out.join("log.csv")];
    outputs.extend(saved);
    Ok(Finished { config: serde_json::to_value(&cfg)?, seed: Some(cfg.seed), outputs, out_dir: out })
}

/// Precision stored with a checkpoint, else `f64`.
fn checkpoint_precision(ckpt: &Path) -> Precision {
    checkpoint_config(ckpt).map(|c| c.precision).unwrap_or_default()
}

fn generator_dir(ckpt: &Path) -> PathBuf {
    let nested = ckpt.join("gen");
    if nested.join("manifest.json").exists() {
        nested
    } else {
        ckpt.to_path_buf()
    }
}

fn single<T: Scalar>(gen: &Generator<T>, pair: &PairSample<T>) -> Result<[Tensor<T>; 3]> {
    let (h, w) = (pair.p_c.height(), pair.p_c.width());
    let [mh, mw] = gen.config().input_size;
    if (h, w) != (mh, mw) {
        return Err(Error::config(format!(
            "pair {} is {h}x{w}, generator input_size is {mh}x{mw}",
            pair.pair_id
        )));
    }
    let sigma = gen.config().heatmap_sigma;
    let s_c = render_heatmap::<T>(&pair.s_c, h, w, sigma).tensor;
    let s_t = render_heatmap::<T>(&pair.s_t, h, w, sigma).tensor;
    Ok([
        Tensor::stack(&[&pair.p_c.tensor])?,
        Tensor::stack(&[&s_c])?,
        Tensor::stack(&[&s_t])?,
    ])
}

fn infer_with<T: Scalar>(a: &InferArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let mut gen = Generator::<T>::load(&generator_dir(&a.checkpoint))?;
    let pairs = load_dataset::<T>(&a.data, 3.0 * gen.config().heatmap_sigma)?;
    mkdir(out)?;
    let mut rng = Streams::new(0).stream("eval", 0);
    let mut outputs = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let [p_c, s_c, s_t] = single(&gen, pair)?;
        let (image, _) = gen.generate(&p_c, &s_c, &s_t, Mode::Eval, &mut rng)?;
        let path = out.join(format!("{}.ppm", pair.pair_id));
        save_image(&path, &ImageSample { tensor: image.index_first(0)? })?;
        outputs.push(path);
    }
    println!("wrote {} images to {}", outputs.len(), out.display());
    Ok(outputs)
}

fn infer(a: &InferArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let precision = a.precision.unwrap_or_else(|| checkpoint_precision(&a.checkpoint));
    let outputs = with_precision!(precision, T => infer_with::<T>(a, &out)?);
    let config = serde_json::json!({
        "checkpoint": a.checkpoint,
        "data": a.data,
        "precision": precision,
    });
    Ok(Finished { config, seed: None, outputs, out_dir: out })
}

fn eval(a: &EvalArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let pairs = load_dataset::<f64>(&a.data, a.mask_radius)?;
    let predicted: Option<HashMap<String, KeypointSet>> = match &a.pred_keypoints {
        Some(p) => Some(load_keypoints(p)?.into_iter().collect()),
        None => None,
    };
    let sp = SsimParams::default();
    let pp = PckhParams::default();
    let mut rows = Vec::with_capacity(pairs.len());
    for pair in &pairs {
        let path = a.generated.join(format!("{}.ppm", pair.pair_id));
        let generated = patn::pose::load_image::<f64>(&path)?;
        let (x, y) = (&generated.tensor, &pair.p_t.tensor);
        let pckh = match &predicted {
            Some(map) => {
                let kp = map
                    .get(&pair.pair_id)
                    .ok_or_else(|| Error::format(format!("no predicted keypoints for pair {}", pair.pair_id)))?;
                pckh(kp, &pair.s_t, &pp)
            }
            None => None,
        };
        rows.push(EvalRow {
            pair_id: pair.pair_id.clone(),
            ssim: ssim(x, y, &sp)?,
            mask_ssim: mask_ssim(x, y, &pair.target_mask, &sp)?,
            pckh,
        });
    }
    mkdir(&out)?;
    let report = out.join("report.csv");
    let text = format_report(&rows);
    write_text(&report, &text)?;
    print!("{text}");
    let config = serde_json::json!({
        "generated": a.generated,
        "data": a.data,
        "pred_keypoints": a.pred_keypoints,
        "mask_radius": a.mask_radius,
        "ssim": sp,
        "pckh": pp,
    });
    Ok(Finished { config, seed: None, outputs: vec![report], out_dir: out })
}

fn millions(n: usize) -> f64 {
    n as f64 / 1e6
}

pub fn params_report(cfg: &ModelConfig) -> String {
    let count = count_params(cfg);
    let mut s = format!(
        "{} with {} blocks, C={}, input {}x{}\n",
        cfg.variant.label(),
        cfg.num_blocks,
        cfg.base_channels,
        cfg.input_size[0],
        cfg.input_size[1]
    );
    let _ = writeln!(s, "{:<10} {:>12}", "module", "params");
    for (name, n) in &count.modules {
        let _ = writeln!(s, "{name:<10} {n:>12}");
    }
    let _ = writeln!(s, "{:<10} {:>12}  ({:.2} M)", "total", count.total, millions(count.total));
    let (patb, apatb) = block_counts(cfg);
    let _ = writeln!(
        s,
        "\nper block at C={}: PATB {patb} ({:.2} M), APATB {apatb} ({:.2} M), APATB/PATB = {:.3}",
        cfg.base_channels,
        millions(patb),
        millions(apatb),
        apatb as f64 / patb as f64
    );
    let mut apatn = cfg.clone();
    apatn.variant = Variant::Apatn;
    apatn.num_blocks = Variant::Apatn.default_blocks();
    let mut patn = cfg.clone();
    patn.variant = Variant::Patn;
    patn.num_blocks = Variant::Patn.default_blocks();
    let (ta, tp) = (count_params(&apatn).total, count_params(&patn).total);
    let _ = writeln!(
        s,
        "totals at this width: APATN(5) {ta} ({:.2} M), PATN(9) {tp} ({:.2} M), ratio {:.3}",
        millions(ta),
        millions(tp),
        ta as f64 / tp as f64
    );
    let _ = writeln!(
        s,
        "\npaper-reported (architecture details unpublished): APATN(5) {PAPER_TOTAL_APATN} M, PATN(9) {PAPER_TOTAL_PATN} M, \
         APATB {PAPER_BLOCK_APATB} M, PATB {PAPER_BLOCK_PATB} M per block"
    );
    s
}

fn params(a: &ParamsArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let mut cfg = match &a.config {
        Some(_) => read_config::<ModelConfig>(a.config.as_deref())?,
        None => ModelConfig::new(a.variant.unwrap_or(Variant::Apatn)),
    };
    if a.config.is_some() {
        if let Some(v) = a.variant {
            cfg.variant = v;
        }
    }
    if let Some(v) = a.blocks {
        cfg.num_blocks = v;
    }
    if let Some(v) = a.channels {
        cfg = cfg.with_channels(v);
    }
    cfg.validate()?;
    let text = params_report(&cfg);
    print!("{text}");
    mkdir(&out)?;
    let path = out.join("params.txt");
    write_text(&path, &text)?;
    Ok(Finished { config: serde_json::to_value(&cfg)?, seed: None, outputs: vec![path], out_dir: out })
}

fn bench(a: &BenchArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let mut cfg: BenchConfig = read_config(a.config.as_deref())?;
    if let Some(v) = a.size {
        cfg.size = v;
    }
    if let Some(v) = a.channels {
        cfg.channels = v;
    }
    if let Some(v) = a.iters {
        cfg.iters = v;
    }
    if let Some(v) = a.warmup {
        cfg.warmup = v;
    }
    if let Some(v) = a.batch {
        cfg.batch = v;
    }
    let report = with_precision!(a.precision, T => bench_blocks::<T>(&cfg)?);
    mkdir(&out)?;
    let csv = out.join("bench.csv");
    let table = out.join("bench.txt");
    write_text(&csv, &report.to_csv())?;
    let text = report.to_table();
    write_text(&table, &text)?;
    print!("{text}");
    let mut config = serde_json::to_value(&cfg)?;
    config["precision"] = serde_json::to_value(a.precision)?;
    Ok(Finished { config, seed: Some(cfg.seed), outputs: vec![csv, table], out_dir: out })
}

fn export_with<T: Scalar>(a: &ExportArgs, out: &Path) -> Result<Vec<PathBuf>> {
    let mut gen = Generator::<T>::load(&generator_dir(&a.checkpoint))?;
    let pairs = load_dataset::<T>(&a.data, 3.0 * gen.config().heatmap_sigma)?;
    let pair = match &a.pair {
        Some(id) => pairs
            .iter()
            .find(|p| &p.pair_id == id)
            .ok_or_else(|| Error::usage(format!("no pair {id:?} in {}", a.data.display())))?,
        None => pairs.first().ok_or_else(|| Error::usage("dataset has no pairs"))?,
    };
    let [p_c, s_c, s_t] = single(&gen, pair)?;
    let mut rng = Streams::new(0).stream("eval", 0);
    let (_, record) = gen.generate(&p_c, &s_c, &s_t, Mode::Eval, &mut rng)?;
    let mut queries = vec![QuerySet::All];
    if a.foreground {
        let (h, w) = (pair.p_t.height(), pair.p_t.width());
        queries.push(QuerySet::from_image_mask(&pair.target_mask, h, w, record.code_size));
    }
    let paths = export_attention(&record, 0, &queries, out, &format!("{}_", pair.pair_id))?;
    println!("wrote {} attention maps to {}", paths.len(), out.display());
    Ok(paths)
}

fn export(a: &ExportArgs, root: &OutputRoot) -> Result<Finished> {
    let out = root.resolve(&a.out)?;
    let precision = a.precision.unwrap_or_else(|| checkpoint_precision(&a.checkpoint));
    let outputs = with_precision!(precision, T => export_with::<T>(a, &out)?);
    let config = serde_json::json!({
        "checkpoint": a.checkpoint,
        "data": a.data,
        "pair": a.pair,
        "foreground": a.foreground,
        "precision": precision,
    });
    Ok(Finished { config, seed: None, outputs, out_dir: out })
}
