use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::adversarial::{
    full_loss, gan_loss_d, gan_loss_g, l1_loss, perceptual_loss, Discriminator, Discriminators, FeatureExtractor,
    IdentityExtractor, RandomConvExtractor,
};
use crate::error::{Error, Result};
use crate::graph::{Graph, Mode};
use crate::model::checkpoint::{load_tensors, read_json, save_tensors, store_manifest, write_json, StoreManifest};
use crate::model::Generator;
use crate::params::ParamStore;
use crate::pose::dataset::load_dataset;
use crate::pose::{render_heatmap, synth_dataset, PairSample};
use crate::rng::Streams;
use crate::scalar::Scalar;
use crate::tensor::Tensor;
use crate::train::adam::{Adam, AdamHyper};
use crate::train::config::{ExtractorKind, TrainConfig};

pub const LOG_HEADER: &str = "iter,lr,d_loss,g_gan,g_l1,g_per,g_total";

/// Loss components of one iteration.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossReport {
    pub d_loss: f64,
    pub g_gan: f64,
    pub g_l1: f64,
    pub g_per: f64,
    pub g_total: f64,
}

impl LossReport {
    pub fn log_line(&self, iter: usize, lr: f64) -> String {
        format!(
            "{iter},{lr},{},{},{},{},{}",
            self.d_loss, self.g_gan, self.g_l1, self.g_per, self.g_total
        )
    }
}

/// Stacked tensors for one step: images `B x 3 x H x W`, heatmaps `B x 18 x H x W`.
#[derive(Clone, Debug)]
pub struct Batch<T: Scalar> {
    pub p_c: Tensor<T>,
    pub p_t: Tensor<T>,
    pub s_c: Tensor<T>,
    pub s_t: Tensor<T>,
}

#[derive(Clone, Debug)]
struct Item<T: Scalar> {
    s_c: Tensor<T>,
    s_t: Tensor<T>,
}

pub struct Trainer<T: Scalar> {
    pub config: TrainConfig,
    pub gen: Generator<T>,
    pub discs: Discriminators<T>,
    pub opt_g: Adam<T>,
    pub opt_da: Adam<T>,
    pub opt_ds: Adam<T>,
    pub pairs: Vec<PairSample<T>>,
    extractor: Box<dyn FeatureExtractor<T>>,
    items: Vec<Item<T>>,
    /// Completed iterations.
    pub iteration: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct TrainState {
    iteration: usize,
    config: TrainConfig,
    adam_steps: [u64; 3],
    /// Every random stream is a function of the run seed and the iteration.
    rng: Streams,
}

fn at_iteration(iter: usize, e: Error) -> Error {
    match e {
        Error::NonFinite(msg) => Error::NonFinite(format!("iteration {iter}: {msg}")),
        other => other,
    }
}

/// Pairs described by `config.data`.
pub fn load_pairs<T: Scalar>(config: &TrainConfig) -> Result<Vec<PairSample<T>>> {
    let [h, w] = config.model.input_size;
    let d = &config.data;
    let mut pairs = match &d.dir {
        Some(dir) => load_dataset(dir, 3.0 * config.model.heatmap_sigma)?,
        None => synth_dataset(d.seed.unwrap_or(config.seed), d.n_identities, d.poses_per_identity, h, w)?,
    };
    if let Some(n) = d.max_pairs {
        pairs.truncate(n);
    }
    if pairs.is_empty() {
        return Err(Error::config("training set is empty"));
    }
    for p in &pairs {
        if (p.p_c.height(), p.p_c.width()) != (h, w) {
            return Err(Error::config(format!(
                "pair {} is {}x{}, model input_size is {h}x{w}",
                p.pair_id,
                p.p_c.height(),
                p.p_c.width()
            )));
        }
    }
    Ok(pairs)
}

fn save_adam<T: Scalar>(opt: &Adam<T>, store: &ParamStore<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, p) in store.params().iter().enumerate() {
        opt.m[i].save_dump(&dir.join(format!("{}.m.ptns", p.name)))?;
        opt.v[i].save_dump(&dir.join(format!("{}.v.ptns", p.name)))?;
    }
    Ok(())
}

fn load_adam<T: Scalar>(opt: &mut Adam<T>, store: &ParamStore<T>, dir: &Path, t: u64) -> Result<()> {
    for (i, p) in store.params().iter().enumerate() {
        for (slot, suffix) in [(&mut opt.m[i], "m"), (&mut opt.v[i], "v")] {
            let path = dir.join(format!("{}.{suffix}.ptns", p.name));
            let value = Tensor::load_dump(&path)?;
            if value.shape() != p.value.shape() {
                return Err(Error::format(format!("{}: optimizer state shape mismatch", path.display())));
            }
            *slot = value;
        }
    }
    opt.t = t;
    Ok(())
}

fn save_disc<T: Scalar>(d: &Discriminator<T>, dir: &Path) -> Result<()> {
    save_tensors(&d.store, dir)?;
    write_json(&dir.join("manifest.json"), &store_manifest(&d.store))
}

fn load_disc<T: Scalar>(d: &mut Discriminator<T>, dir: &Path) -> Result<()> {
    let manifest: StoreManifest = read_json(&dir.join("manifest.json"))?;
    load_tensors(&mut d.store, &manifest, dir)
}

impl<T: Scalar> Trainer<T> {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let pairs = load_pairs(&config)?;
        Self::with_pairs(config, pairs)
    }

    pub fn with_pairs(config: TrainConfig, pairs: Vec<PairSample<T>>) -> Result<Self> {
        config.validate()?;
        if pairs.is_empty() {
            return Err(Error::config("training set is empty"));
        }
        let gen = Generator::new(config.model.clone(), config.seed)?;
        let discs = Discriminators::new(&config.disc, config.seed)?;
        let hyper = AdamHyper { beta1: config.beta1, beta2: config.beta2, eps: config.adam_eps };
        let extractor: Box<dyn FeatureExtractor<T>> = match config.extractor {
            ExtractorKind::Random => Box::new(RandomConvExtractor::new(config.extractor_seed)?),
            ExtractorKind::Identity => Box::new(IdentityExtractor),
        };
        let sigma = config.model.heatmap_sigma;
        let items = pairs
            .iter()
            .map(|p| {
                let (h, w) = (p.p_c.height(), p.p_c.width());
                Item {
                    s_c: render_heatmap(&p.s_c, h, w, sigma).tensor,
                    s_t: render_heatmap(&p.s_t, h, w, sigma).tensor,
                }
            })
            .collect();
        Ok(Trainer {
            opt_g: Adam::new(&gen.store, hyper),
            opt_da: Adam::new(&discs.appearance.store, hyper),
            opt_ds: Adam::new(&discs.shape.store, hyper),
            gen,
            discs,
            pairs,
            extractor,
            items,
            iteration: 0,
            config,
        })
    }

    pub fn set_extractor(&mut self, extractor: Box<dyn FeatureExtractor<T>>) {
        self.extractor = extractor;
    }

    /// Dataset indices used at iteration `iter`: consecutive slices of a
    /// per-epoch shuffle drawn from the `data` stream.
    pub fn batch_indices(&self, iter: usize) -> Vec<usize> {
        let n = self.pairs.len();
        let b = self.config.batch_size;
        let streams = Streams::new(self.config.seed);
        let mut cached: Option<(usize, Vec<usize>)> = None;
        (iter * b..(iter + 1) * b)
            .map(|pos| {
                let epoch = pos / n;
                if cached.as_ref().map(|c| c.0) != Some(epoch) {
                    let mut perm: Vec<usize> = (0..n).collect();
                    perm.shuffle(&mut streams.stream("data", epoch as u64));
                    cached = Some((epoch, perm));
                }
                cached.as_ref().unwrap().1[pos % n]
            })
            .collect()
    }

    pub fn batch(&self, indices: &[usize]) -> Result<Batch<T>> {
        fn pick<'a, T: Scalar>(indices: &[usize], f: impl Fn(usize) -> &'a Tensor<T>) -> Result<Tensor<T>> {
            let parts: Vec<&Tensor<T>> = indices.iter().map(|&i| f(i)).collect();
            Tensor::stack(&parts)
        }
        Ok(Batch {
            p_c: pick(indices, |i| &self.pairs[i].p_c.tensor)?,
            p_t: pick(indices, |i| &self.pairs[i].p_t.tensor)?,
            s_c: pick(indices, |i| &self.items[i].s_c)?,
            s_t: pick(indices, |i| &self.items[i].s_t)?,
        })
    }

    /// Runs the next iteration: one or more discriminator updates on detached
    /// fakes, then one generator update through frozen discriminators.
    pub fn train_step(&mut self) -> Result<LossReport> {
        let iter = self.iteration;
        let batch = self.batch(&self.batch_indices(iter))?;
        let lr = self.config.schedule().lr_at(iter);
        let report = self.step_on(&batch, lr, iter).map_err(|e| at_iteration(iter, e))?;
        self.iteration += 1;
        Ok(report)
    }

    pub fn step_on(&mut self, batch: &Batch<T>, lr: f64, iter: usize) -> Result<LossReport> {
        let mut rng = Streams::new(self.config.seed).stream("dropout", iter as u64);
        let mut g = Graph::new();
        let p_c = g.constant(batch.p_c.clone());
        let p_t = g.constant(batch.p_t.clone());
        let s_c = g.constant(batch.s_c.clone());
        let s_t = g.constant(batch.s_t.clone());
        let fake = self.gen.forward(&mut g, Mode::Train, &mut rng, false, p_c, s_c, s_t)?.image;
        g.check_finite()?;

        let mut d_loss = 0.0;
        for _ in 0..self.config.d_steps {
            let mut gd = Graph::new();
            let pc = gd.constant(batch.p_c.clone());
            let pt = gd.constant(batch.p_t.clone());
            let st = gd.constant(batch.s_t.clone());
            let pg = gd.constant(g.value(fake).clone());
            let real_a = self.discs.appearance_score(&mut gd, pc, pt, false)?;
            let fake_a = self.discs.appearance_score(&mut gd, pc, pg, false)?;
            let real_s = self.discs.shape_score(&mut gd, st, pt, false)?;
            let fake_s = self.discs.shape_score(&mut gd, st, pg, false)?;
            let loss = gan_loss_d(&mut gd, real_a, fake_a, real_s, fake_s)?;
            d_loss = gd.value(loss).item().to_f64_lossy();
            let grads = gd.backward(loss)?;
            for (d, opt) in [(&mut self.discs.appearance, &mut self.opt_da), (&mut self.discs.shape, &mut self.opt_ds)] {
                d.store.zero_grad();
                grads.accumulate_into(&mut d.store);
                opt.step(&mut d.store, lr)?;
            }
        }

        let fake_a = self.discs.appearance_score(&mut g, p_c, fake, true)?;
        let fake_s = self.discs.shape_score(&mut g, s_t, fake, true)?;
        let gan = gan_loss_g(&mut g, fake_a, fake_s, self.config.gan_mode)?;
        let l1 = l1_loss(&mut g, fake, p_t)?;
        let per = perceptual_loss(&mut g, fake, p_t, self.extractor.as_ref())?;
        let total = full_loss(&mut g, gan, l1, per, &self.config.weights)?;
        let grads = g.backward(total)?;
        self.gen.store.zero_grad();
        grads.accumulate_into(&mut self.gen.store);
        self.opt_g.step(&mut self.gen.store, lr)?;
        let v = |x| g.value(x).item().to_f64_lossy();
        Ok(LossReport { d_loss, g_gan: v(gan), g_l1: v(l1), g_per: v(per), g_total: v(total) })
    }

    /// Mean absolute error of eval-mode generations against the targets, over all pairs.
    pub fn eval_l1(&mut self) -> Result<f64> {
        let n = self.pairs.len();
        let mut rng = Streams::new(self.config.seed).stream("eval", 0);
        let mut total = 0.0;
        let mut count = 0usize;
        let idx: Vec<usize> = (0..n).collect();
        for chunk in idx.chunks(self.config.batch_size) {
            let b = self.batch(chunk)?;
            let (out, _) = self.gen.generate(&b.p_c, &b.s_c, &b.s_t, Mode::Eval, &mut rng)?;
            for (x, y) in out.data().iter().zip(b.p_t.data()) {
                total += (x.to_f64_lossy() - y.to_f64_lossy()).abs();
            }
            count += out.numel();
        }
        Ok(total / count as f64)
    }

    pub fn save_checkpoint(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        self.gen.save(&dir.join("gen"))?;
        save_disc(&self.discs.appearance, &dir.join("disc_a"))?;
        save_disc(&self.discs.shape, &dir.join("disc_s"))?;
        save_adam(&self.opt_g, &self.gen.store, &dir.join("opt_gen"))?;
        save_adam(&self.opt_da, &self.discs.appearance.store, &dir.join("opt_disc_a"))?;
        save_adam(&self.opt_ds, &self.discs.shape.store, &dir.join("opt_disc_s"))?;
        let state = TrainState {
            iteration: self.iteration,
            config: self.config.clone(),
            adam_steps: [self.opt_g.t, self.opt_da.t, self.opt_ds.t],
            rng: Streams::new(self.config.seed),
        };
        write_json(&dir.join("state.json"), &state)
    }

    pub fn resume(dir: &Path) -> Result<Self> {
        let state: TrainState = read_json(&dir.join("state.json"))?;
        let mut t = Trainer::new(state.config)?;
        t.gen = Generator::load(&dir.join("gen"))?;
        if t.gen.config() != &t.config.model {
            return Err(Error::format("checkpoint generator config differs from its training config"));
        }
        load_disc(&mut t.discs.appearance, &dir.join("disc_a"))?;
        load_disc(&mut t.discs.shape, &dir.join("disc_s"))?;
        let [tg, ta, ts] = state.adam_steps;
        t.opt_g = Adam::new(&t.gen.store, t.opt_g.hyper);
        load_adam(&mut t.opt_g, &t.gen.store, &dir.join("opt_gen"), tg)?;
        load_adam(&mut t.opt_da, &t.discs.appearance.store, &dir.join("opt_disc_a"), ta)?;
        load_adam(&mut t.opt_ds, &t.discs.shape.store, &dir.join("opt_disc_s"), ts)?;
        t.iteration = state.iteration;
        Ok(t)
    }
}

/// Training config stored in a checkpoint directory.
pub fn checkpoint_config(dir: &Path) -> Result<TrainConfig> {
    let state: TrainState = read_json(&dir.join("state.json"))?;
    Ok(state.config)
}

pub fn checkpoint_dir(out_dir: &Path, iteration: usize) -> PathBuf {
    out_dir.join(format!("ckpt_{iteration:06}"))
}

/// Trains to `config.iterations`, appending to `<out_dir>/log.csv` and writing
/// checkpoints under `<out_dir>/ckpt_NNNNNN`. A resumed trainer keeps the log
/// lines of the iterations it has already completed and drops the rest.
pub fn run<T: Scalar>(trainer: &mut Trainer<T>, out_dir: &Path, mut on_line: impl FnMut(&str)) -> Result<Vec<PathBuf>> {
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let log_path = out_dir.join("log.csv");
    let mut kept = vec![LOG_HEADER.to_string()];
    if trainer.iteration > 0 && log_path.exists() {
        let text = std::fs::read_to_string(&log_path).map_err(|e| Error::io(&log_path, e))?;
        kept.extend(
            text.lines()
                .skip(1)
                .filter(|l| l.split(',').next().and_then(|v| v.parse::<usize>().ok()).is_some_and(|i| i < trainer.iteration))
                .map(str::to_string),
        );
    }
    std::fs::write(&log_path, kept.join("\n") + "\n").map_err(|e| Error::io(&log_path, e))?;
    let mut log = OpenOptions::new().append(true).open(&log_path).map_err(|e| Error::io(&log_path, e))?;

    let mut saved = Vec::new();
    let total = trainer.config.iterations;
    if trainer.iteration == 0 {
        let dir = checkpoint_dir(out_dir, 0);
        trainer.save_checkpoint(&dir)?;
        saved.push(dir);
    }
    let schedule = trainer.config.schedule();
    while trainer.iteration < total {
        let iter = trainer.iteration;
        let report = trainer.train_step()?;
        if iter % trainer.config.log_every == 0 || iter + 1 == total {
            let line = report.log_line(iter, schedule.lr_at(iter));
            writeln!(log, "{line}").map_err(|e| Error::io(&log_path, e))?;
            on_line(&line);
        }
        let done = trainer.iteration;
        let every = trainer.config.checkpoint_every;
        if done == total || (every > 0 && done % every == 0) {
            let dir = checkpoint_dir(out_dir, done);
            trainer.save_checkpoint(&dir)?;
            saved.push(dir);
        }
    }
    Ok(saved)
}
