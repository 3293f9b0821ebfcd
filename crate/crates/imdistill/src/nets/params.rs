//! Named-parameter registry backing every model, plus the on-disk checkpoint
//! format: a `manifest` file describing the spec and parameter table, and one
//! little-endian f32 blob per parameter. Round-trips are bit-exact.

use std::cell::RefCell;
use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use candle_core::{DType, Device, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy)]
pub enum Init {
    Normal(f64),
    Const(f64),
    /// Unit-norm random vector, used for spectral-norm power-iteration state.
    UnitVector,
}

struct Entry {
    var: Var,
    trainable: bool,
}

pub struct ParamStore {
    dev: Device,
    entries: RefCell<BTreeMap<String, Entry>>,
    rng: RefCell<ChaCha12Rng>,
}

impl ParamStore {
    pub fn new(seed: u64, dev: Device) -> Self {
        Self {
            dev,
            entries: RefCell::new(BTreeMap::new()),
            rng: RefCell::new(ChaCha12Rng::seed_from_u64(seed)),
        }
    }

    pub fn device(&self) -> &Device {
        &self.dev
    }

    fn init_tensor(&self, shape: &[usize], init: Init) -> Result<Tensor> {
        let n: usize = shape.iter().product();
        let data: Vec<f32> = match init {
            Init::Normal(std) => {
                let mut rng = self.rng.borrow_mut();
                (0..n)
                    .map(|_| {
                        let x: f64 = rng.sample(StandardNormal);
                        (x * std) as f32
                    })
                    .collect()
            }
            Init::Const(c) => vec![c as f32; n],
            Init::UnitVector => {
                let mut rng = self.rng.borrow_mut();
                let mut v: Vec<f32> = (0..n)
                    .map(|_| {
                        let x: f64 = rng.sample(StandardNormal);
                        x as f32
                    })
                    .collect();
                let norm = v.iter().map(|x| x * x).sum::<f32>().sqrt().max(1e-12);
                v.iter_mut().for_each(|x| *x /= norm);
                v
            }
        };
        Ok(Tensor::from_vec(data, shape, &self.dev)?)
    }

    fn register(&self, name: &str, shape: &[usize], init: Init, trainable: bool) -> Result<Var> {
        let mut entries = self.entries.borrow_mut();
        if entries.contains_key(name) {
            return Err(Error::Build(format!("duplicate parameter name `{name}`")));
        }
        let var = Var::from_tensor(&self.init_tensor(shape, init)?)?;
        entries.insert(
            name.to_string(),
            Entry {
                var: var.clone(),
                trainable,
            },
        );
        Ok(var)
    }

    pub fn param(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.register(name, shape, init, true)
    }

    pub fn buffer(&self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        self.register(name, shape, init, false)
    }

    /// Trainable variables in deterministic (name-sorted) order.
    pub fn trainable_vars(&self) -> Vec<Var> {
        self.entries
            .borrow()
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.var.clone())
            .collect()
    }

    pub fn trainable_param_count(&self) -> usize {
        self.entries
            .borrow()
            .values()
            .filter(|e| e.trainable)
            .map(|e| e.var.elem_count())
            .sum()
    }

    pub fn save(&self, dir: &Path, kind: &str, spec: toml::Value) -> Result<()> {
        let params_dir = dir.join("params");
        fs::create_dir_all(&params_dir).map_err(|e| Error::io(&params_dir, e))?;
        let mut table = Vec::new();
        for (name, entry) in self.entries.borrow().iter() {
            let file = format!("params/{name}.bin");
            let path = dir.join(&file);
            let data = entry
                .var
                .as_tensor()
                .to_dtype(DType::F32)?
                .flatten_all()?
                .to_vec1::<f32>()?;
            let mut bytes = Vec::with_capacity(data.len() * 4);
            for v in &data {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
            let mut f = fs::File::create(&path).map_err(|e| Error::io(&path, e))?;
            f.write_all(&bytes).map_err(|e| Error::io(&path, e))?;
            table.push(ParamRecord {
                name: name.clone(),
                shape: entry.var.dims().to_vec(),
                trainable: entry.trainable,
                file,
            });
        }
        let manifest = CheckpointManifest {
            format_version: CHECKPOINT_FORMAT_VERSION,
            kind: kind.to_string(),
            spec,
            params: table,
        };
        let text = toml::to_string_pretty(&manifest)
            .map_err(|e| Error::Checkpoint(format!("manifest encode: {e}")))?;
        // manifest written last, acting as the completion marker
        let mpath = dir.join("manifest");
        fs::write(&mpath, text).map_err(|e| Error::io(&mpath, e))?;
        Ok(())
    }

    /// Overwrites existing entries with checkpoint values; names and shapes
    /// must match the built model exactly.
    pub fn load(&self, dir: &Path) -> Result<CheckpointManifest> {
        let manifest = read_manifest(dir)?;
        let entries = self.entries.borrow();
        if manifest.params.len() != entries.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} parameters, model has {}",
                manifest.params.len(),
                entries.len()
            )));
        }
        for rec in &manifest.params {
            let entry = entries.get(&rec.name).ok_or_else(|| {
                Error::Checkpoint(format!("checkpoint parameter `{}` not in model", rec.name))
            })?;
            if entry.var.dims() != rec.shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "shape mismatch for `{}`: checkpoint {:?}, model {:?}",
                    rec.name,
                    rec.shape,
                    entry.var.dims()
                )));
            }
            let path = dir.join(&rec.file);
            let mut bytes = Vec::new();
            fs::File::open(&path)
                .map_err(|e| Error::io(&path, e))?
                .read_to_end(&mut bytes)
                .map_err(|e| Error::io(&path, e))?;
            let n: usize = rec.shape.iter().product();
            if bytes.len() != n * 4 {
                return Err(Error::Checkpoint(format!(
                    "blob `{}` has {} bytes, expected {}",
                    rec.file,
                    bytes.len(),
                    n * 4
                )));
            }
            let data: Vec<f32> = bytes
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            let t = Tensor::from_vec(data, rec.shape.as_slice(), &self.dev)?;
            entry.var.set(&t)?;
        }
        Ok(manifest)
    }
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ParamRecord {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
    pub file: String,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub format_version: u32,
    pub kind: String,
    pub spec: toml::Value,
    pub params: Vec<ParamRecord>,
}

pub fn read_manifest(dir: &Path) -> Result<CheckpointManifest> {
    let mpath = dir.join("manifest");
    let text = fs::read_to_string(&mpath).map_err(|e| Error::io(&mpath, e))?;
    let manifest: CheckpointManifest = toml::from_str(&text)
        .map_err(|e| Error::Checkpoint(format!("manifest parse: {e}")))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint format version {}",
            manifest.format_version
        )));
    }
    Ok(manifest)
}
