//! Directory checkpoints: `manifest.json` plus one tensor dump per parameter and buffer.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::config::ModelConfig;
use crate::model::generator::Generator;
use crate::params::ParamStore;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoreManifest {
    pub params: Vec<TensorEntry>,
    pub buffers: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
struct GeneratorManifest {
    config: ModelConfig,
    #[serde(flatten)]
    store: StoreManifest,
}

pub fn store_manifest<T: Scalar>(store: &ParamStore<T>) -> StoreManifest {
    let entry = |name: &str, t: &Tensor<T>| TensorEntry { name: name.to_string(), shape: t.shape().to_vec() };
    StoreManifest {
        params: store.params().iter().map(|p| entry(&p.name, &p.value)).collect(),
        buffers: store.buffers().iter().map(|b| entry(&b.name, &b.value)).collect(),
    }
}

pub fn write_json<S: Serialize>(path: &Path, value: &S) -> Result<()> {
    let text = serde_json::to_string_pretty(value)?;
    std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
}

pub fn read_json<S: for<'de> Deserialize<'de>>(path: &Path) -> Result<S> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::format(format!("{}: {e}", path.display())))
}

/// Writes every parameter and buffer of `store` as `<dir>/<name>.ptns`.
pub fn save_tensors<T: Scalar>(store: &ParamStore<T>, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for p in store.params() {
        p.value.save_dump(&dir.join(format!("{}.ptns", p.name)))?;
    }
    for b in store.buffers() {
        b.value.save_dump(&dir.join(format!("{}.ptns", b.name)))?;
    }
    Ok(())
}

/// Loads values saved by [`save_tensors`] into a store whose layout equals `manifest`.
pub fn load_tensors<T: Scalar>(store: &mut ParamStore<T>, manifest: &StoreManifest, dir: &Path) -> Result<()> {
    let expected = store_manifest(store);
    check_layout(&expected.params, &manifest.params, "parameter")?;
    check_layout(&expected.buffers, &manifest.buffers, "buffer")?;
    let load = |name: &str, shape: &[usize]| -> Result<Tensor<T>> {
        let path = dir.join(format!("{name}.ptns"));
        let t = Tensor::load_dump(&path)?;
        if t.shape() != shape {
            return Err(Error::format(format!(
                "{}: shape {:?} does not match expected {:?}",
                path.display(),
                t.shape(),
                shape
            )));
        }
        Ok(t)
    };
    for p in store.params_mut() {
        p.value = load(&p.name, p.value.shape())?;
    }
    for b in store.buffers_mut() {
        b.value = load(&b.name, b.value.shape())?;
    }
    Ok(())
}

fn check_layout(expected: &[TensorEntry], found: &[TensorEntry], what: &str) -> Result<()> {
    if expected.len() != found.len() {
        return Err(Error::format(format!(
            "checkpoint has {} {what}s, model expects {}",
            found.len(),
            expected.len()
        )));
    }
    for (e, f) in expected.iter().zip(found) {
        if e != f {
            return Err(Error::format(format!(
                "checkpoint {what} {} {:?} does not match model {} {:?}",
                f.name, f.shape, e.name, e.shape
            )));
        }
    }
    Ok(())
}

impl<T: Scalar> Generator<T> {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let manifest = GeneratorManifest { config: self.config().clone(), store: store_manifest(&self.store) };
        write_json(&dir.join("manifest.json"), &manifest)?;
        save_tensors(&self.store, dir)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let manifest: GeneratorManifest = read_json(&dir.join("manifest.json"))?;
        let mut gen = Generator::new(manifest.config, 0)?;
        load_tensors(&mut gen.store, &manifest.store, dir)?;
        Ok(gen)
    }
}
