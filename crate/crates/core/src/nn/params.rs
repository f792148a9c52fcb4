//! Named parameter storage with versioned, consistent snapshots.
//!
//! One learner writes (inside [`ParameterStore::update`]); any number of
//! readers take [`ParameterStore::snapshot`]s. The read/write lock guarantees
//! a snapshot never observes a half-applied optimizer step.

use crate::error::{EtherError, Result};
use crate::seeding::derive_seed;
use candle_core::{DType, Device, Shape, Tensor, Var};
use candle_nn::init::NormalOrUniform;
use candle_nn::var_builder::SimpleBackend;
use candle_nn::{Init, VarBuilder, VarMap};
use rand::rngs::StdRng;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal, Uniform};
use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::RwLock;

pub struct ParameterStore {
    varmap: VarMap,
    seed: u64,
    dtype: DType,
    device: Device,
    version: AtomicU64,
    guard: RwLock<()>,
}

/// An immutable copy of every tensor in a store at one version.
#[derive(Clone, Debug)]
pub struct ParamSnapshot {
    pub version: u64,
    pub tensors: BTreeMap<String, Tensor>,
}

impl ParamSnapshot {
    pub fn var_builder(&self, dtype: DType, device: &Device) -> VarBuilder<'static> {
        let map: std::collections::HashMap<String, Tensor> =
            self.tensors.iter().map(|(k, v)| (k.clone(), v.clone())).collect();
        VarBuilder::from_tensors(map, dtype, device)
    }
}

/// Batch-norm running statistics live in the store but are not trained.
pub fn is_running_stat(name: &str) -> bool {
    name.ends_with("running_mean") || name.ends_with("running_var")
}

impl ParameterStore {
    pub fn new(dtype: DType) -> Self {
        Self::with_seed(dtype, 0)
    }

    /// Fresh variables are drawn from a stream keyed by `(seed, name)`, so
    /// initial values do not depend on construction order.
    pub fn with_seed(dtype: DType, seed: u64) -> Self {
        Self {
            varmap: VarMap::new(),
            seed,
            dtype,
            device: Device::Cpu,
            version: AtomicU64::new(0),
            guard: RwLock::new(()),
        }
    }

    pub fn dtype(&self) -> DType {
        self.dtype
    }

    pub fn device(&self) -> &Device {
        &self.device
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn var_builder(&self) -> VarBuilder<'static> {
        let backend = SeededVars {
            varmap: self.varmap.clone(),
            seed: self.seed,
        };
        VarBuilder::from_backend(Box::new(backend), self.dtype, self.device.clone())
    }

    pub fn version(&self) -> u64 {
        self.version.load(Ordering::Acquire)
    }

    pub fn names(&self) -> Vec<String> {
        let data = self.varmap.data().lock().expect("varmap poisoned");
        let mut names: Vec<String> = data.keys().cloned().collect();
        names.sort();
        names
    }

    pub fn get(&self, name: &str) -> Option<Var> {
        self.varmap.data().lock().expect("varmap poisoned").get(name).cloned()
    }

    /// Trainable variables whose name starts with any of `prefixes`.
    pub fn trainable(&self, prefixes: &[&str]) -> Vec<Var> {
        let data = self.varmap.data().lock().expect("varmap poisoned");
        let mut named: Vec<(&String, &Var)> = data
            .iter()
            .filter(|(k, _)| !is_running_stat(k) && prefixes.iter().any(|p| k.starts_with(p)))
            .collect();
        named.sort_by(|a, b| a.0.cmp(b.0));
        named.into_iter().map(|(_, v)| v.clone()).collect()
    }

    /// Run a mutation as the single writer and bump the version.
    pub fn update<T>(&self, f: impl FnOnce() -> Result<T>) -> Result<T> {
        let _w = self.guard.write().map_err(|_| EtherError::Usage("parameter lock poisoned".into()))?;
        let out = f()?;
        self.version.fetch_add(1, Ordering::AcqRel);
        Ok(out)
    }

    pub fn snapshot(&self) -> Result<ParamSnapshot> {
        let _r = self.guard.read().map_err(|_| EtherError::Usage("parameter lock poisoned".into()))?;
        let data = self.varmap.data().lock().expect("varmap poisoned");
        let mut tensors = BTreeMap::new();
        for (k, v) in data.iter() {
            tensors.insert(k.clone(), v.as_tensor().copy()?);
        }
        Ok(ParamSnapshot {
            version: self.version(),
            tensors,
        })
    }

    /// Overwrite every tensor present in `snapshot`; names must already exist.
    pub fn load_snapshot(&self, snapshot: &ParamSnapshot) -> Result<()> {
        self.update(|| {
            let data = self.varmap.data().lock().expect("varmap poisoned");
            for (k, t) in &snapshot.tensors {
                let var = data
                    .get(k)
                    .ok_or_else(|| EtherError::Usage(format!("unknown parameter {k}")))?;
                if var.shape() != t.shape() {
                    return Err(EtherError::shape(format!("{k}: {:?}", var.shape()), t.shape()));
                }
                var.set(&t.to_dtype(self.dtype)?)?;
            }
            Ok(())
        })?;
        self.version.store(snapshot.version, Ordering::Release);
        Ok(())
    }

    /// Copy every parameter under `prefix` from `source` (same names).
    pub fn copy_from(&self, source: &ParameterStore, prefixes: &[&str]) -> Result<()> {
        let src = source.snapshot()?;
        self.update(|| {
            let data = self.varmap.data().lock().expect("varmap poisoned");
            for (k, var) in data.iter() {
                if !prefixes.iter().any(|p| k.starts_with(p)) {
                    continue;
                }
                let t = src
                    .tensors
                    .get(k)
                    .ok_or_else(|| EtherError::Usage(format!("source store lacks {k}")))?;
                var.set(t)?;
            }
            Ok(())
        })
    }

    pub fn set_version(&self, version: u64) {
        self.version.store(version, Ordering::Release);
    }
}

struct SeededVars {
    varmap: VarMap,
    seed: u64,
}

fn seeded_values(init: Init, shape: &Shape, seed: u64) -> Vec<f32> {
    let n = shape.elem_count();
    let mut rng = StdRng::seed_from_u64(seed);
    let mut uniform = |lo: f64, up: f64| -> Vec<f32> {
        match Uniform::new(lo, up) {
            Ok(d) => (0..n).map(|_| d.sample(&mut rng) as f32).collect(),
            Err(_) => vec![lo as f32; n],
        }
    };
    match init {
        Init::Const(c) => vec![c as f32; n],
        Init::Uniform { lo, up } => uniform(lo, up),
        Init::Randn { mean, stdev } => {
            let d = Normal::new(mean, stdev.max(0.0)).expect("finite normal parameters");
            (0..n).map(|_| d.sample(&mut rng) as f32).collect()
        }
        Init::Kaiming { dist, fan, non_linearity } => {
            let std = non_linearity.gain() / (fan.for_shape(shape) as f64).sqrt();
            match dist {
                NormalOrUniform::Uniform => {
                    let bound = 3f64.sqrt() * std;
                    uniform(-bound, bound)
                }
                NormalOrUniform::Normal => {
                    let d = Normal::new(0.0, std).expect("finite normal parameters");
                    (0..n).map(|_| d.sample(&mut rng) as f32).collect()
                }
            }
        }
    }
}

impl SimpleBackend for SeededVars {
    fn get(&self, s: Shape, name: &str, h: Init, dtype: DType, dev: &Device) -> candle_core::Result<Tensor> {
        let mut data = self.varmap.data().lock().expect("varmap poisoned");
        if let Some(v) = data.get(name) {
            if v.shape() != &s {
                candle_core::bail!("shape mismatch on {name}: {s:?} <> {:?}", v.shape());
            }
            return Ok(v.as_tensor().clone());
        }
        let values = seeded_values(h, &s, derive_seed(self.seed, name));
        let var = Var::from_tensor(&Tensor::from_vec(values, s, dev)?.to_dtype(dtype)?)?;
        let t = var.as_tensor().clone();
        data.insert(name.to_string(), var);
        Ok(t)
    }

    fn get_unchecked(&self, name: &str, _dtype: DType, _dev: &Device) -> candle_core::Result<Tensor> {
        match self.varmap.data().lock().expect("varmap poisoned").get(name) {
            Some(v) => Ok(v.as_tensor().clone()),
            None => candle_core::bail!("no variable {name}"),
        }
    }

    fn contains_tensor(&self, name: &str) -> bool {
        self.varmap.data().lock().expect("varmap poisoned").contains_key(name)
    }
}

pub fn to_device_tensor(values: Vec<f32>, shape: &[usize], dtype: DType, device: &Device) -> Result<Tensor> {
    Ok(Tensor::from_vec(values, shape, device)?.to_dtype(dtype)?)
}
