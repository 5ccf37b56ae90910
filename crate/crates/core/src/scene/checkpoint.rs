use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::container::{read_container, write_container, AnyTensor};
use crate::tensor::{ParamStore, Real, Tensor};
use crate::train::EmaState;

/// Prefix of EMA shadow records.
pub const EMA_PREFIX: &str = "ema/";
/// Number of EMA updates behind the shadow.
const EMA_UPDATES: &str = "ema/@updates";
const EMA_DECAY: &str = "ema/@decay";

/// Parameters and optional EMA read back from a checkpoint.
#[derive(Debug, Clone)]
pub struct CheckpointData {
    pub params: Vec<(String, AnyTensor)>,
    pub ema: Option<EmaRecords>,
}

#[derive(Debug, Clone)]
pub struct EmaRecords {
    pub decay: f64,
    pub updates: u64,
    pub shadow: Vec<(String, AnyTensor)>,
}

impl EmaRecords {
    pub fn to_state<T: Real>(&self) -> EmaState<T> {
        EmaState {
            decay: self.decay,
            updates: self.updates,
            shadow: self.shadow.iter().map(|(n, t)| (n.clone(), t.to())).collect(),
        }
    }
}

pub fn save_checkpoint<T: Real>(path: &Path, params: &ParamStore<T>, ema: Option<&EmaState<T>>) -> Result<()> {
    let mut records: Vec<(String, AnyTensor)> =
        params.iter().map(|(_, p)| (p.name.clone(), AnyTensor::from_tensor(&p.value))).collect();
    if let Some(e) = ema {
        records.push((EMA_DECAY.into(), AnyTensor::F64(Tensor::scalar(e.decay))));
        records.push((EMA_UPDATES.into(), AnyTensor::F64(Tensor::scalar(e.updates as f64))));
        for (n, t) in &e.shadow {
            records.push((format!("{EMA_PREFIX}{n}"), AnyTensor::from_tensor(t)));
        }
    }
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    write_container(&mut w, &records).map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<CheckpointData> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let records = read_container(BufReader::new(f))
        .map_err(|e| Error::Checkpoint(format!("{}: {e}", path.display())))?;
    let mut params = Vec::new();
    let mut shadow = Vec::new();
    let (mut decay, mut updates) = (None, None);
    for (name, t) in records {
        if name == EMA_DECAY {
            decay = Some(t.to::<f64>().item());
        } else if name == EMA_UPDATES {
            updates = Some(t.to::<f64>().item() as u64);
        } else if let Some(rest) = name.strip_prefix(EMA_PREFIX) {
            shadow.push((rest.to_string(), t));
        } else {
            params.push((name, t));
        }
    }
    let ema = match (decay, updates) {
        (Some(decay), Some(updates)) => Some(EmaRecords { decay, updates, shadow }),
        (None, None) if shadow.is_empty() => None,
        _ => return Err(Error::Checkpoint(format!("{}: incomplete EMA records", path.display()))),
    };
    Ok(CheckpointData { params, ema })
}

/// Loads checkpoint values into `store`, preferring EMA averages when asked
/// and available.
pub fn restore_params<T: Real>(store: &mut ParamStore<T>, data: &CheckpointData, use_ema: bool) -> Result<bool> {
    let raw: Vec<(String, Tensor<T>)> = data.params.iter().map(|(n, t)| (n.clone(), t.to())).collect();
    store.load_values(&raw)?;
    if use_ema {
        if let Some(avg) = data.ema.as_ref().and_then(|e| e.to_state::<T>().averaged()) {
            store.load_values(&avg)?;
            return Ok(true);
        }
    }
    Ok(false)
}
