//! Single-file checkpoint format.
//!
//! Layout: an 8-byte magic (`DTCKPT1\n`), a little-endian `u64` manifest
//! length, the manifest JSON, then a raw little-endian 32-bit-float payload.
//! The manifest records the configuration plus the name, shape, and byte
//! offset of every tensor; the loader re-derives the expected tables from the
//! configuration and rejects any disagreement by tensor name.
//!
//! Values are held in `f64` in memory and rounded to `f32` on save, so a
//! load→save cycle is byte-stable (and a fresh save of just-loaded tensors
//! reproduces them bit-for-bit).

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::{
    adapter_shape_table, shape_table, LoraAdapters, ModelConfig, ModelParameters,
};
use super::optim::AdamWState;
use super::tensor::Tensor;
use crate::{Error, Result};

/// Version of the on-disk layout.
pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

const MAGIC: &[u8; 8] = b"DTCKPT1\n";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: u64,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct OptManifest {
    /// Per-tensor update counts.
    steps: BTreeMap<String, u64>,
    /// Moment tensors, named `m.<tensor>` / `v.<tensor>`.
    tensors: Vec<TensorEntry>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    config: ModelConfig,
    tensors: Vec<TensorEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    adapters: Option<Vec<TensorEntry>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    opt_state: Option<OptManifest>,
}

/// Everything a checkpoint file holds.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParameters,
    pub adapters: Option<LoraAdapters>,
    pub opt_state: Option<AdamWState>,
}

fn push_tensor(payload: &mut Vec<u8>, entries: &mut Vec<TensorEntry>, name: &str, t: &Tensor) {
    entries.push(TensorEntry {
        name: name.to_string(),
        shape: t.shape().to_vec(),
        offset: payload.len() as u64,
    });
    for &x in t.data() {
        payload.extend_from_slice(&(x as f32).to_le_bytes());
    }
}

/// Serialize config, parameters, and optional adapters/optimizer state.
pub fn save_checkpoint(
    path: impl AsRef<Path>,
    config: &ModelConfig,
    params: &ModelParameters,
    adapters: Option<&LoraAdapters>,
    opt_state: Option<&AdamWState>,
) -> Result<()> {
    config.validate()?;
    let mut payload = Vec::new();
    let mut entries = Vec::new();
    for (name, t) in params.tensors() {
        push_tensor(&mut payload, &mut entries, name, t);
    }
    let adapter_entries = adapters.map(|ad| {
        let mut list = Vec::new();
        for (name, t) in ad.tensors() {
            push_tensor(&mut payload, &mut list, name, t);
        }
        list
    });
    let opt_manifest = opt_state.map(|st| {
        let mut list = Vec::new();
        // `m.` sorts before `v.`, so one pass per map keeps name order.
        for (name, t) in &st.m {
            push_tensor(&mut payload, &mut list, &format!("m.{name}"), t);
        }
        for (name, t) in &st.v {
            push_tensor(&mut payload, &mut list, &format!("v.{name}"), t);
        }
        OptManifest {
            steps: st.steps.clone(),
            tensors: list,
        }
    });
    let manifest = Manifest {
        format_version: CHECKPOINT_FORMAT_VERSION,
        config: config.clone(),
        tensors: entries,
        adapters: adapter_entries,
        opt_state: opt_manifest,
    };
    let manifest_bytes = serde_json::to_vec(&manifest)
        .map_err(|e| Error::parse("checkpoint manifest", e.to_string()))?;
    let mut out = Vec::with_capacity(16 + manifest_bytes.len() + payload.len());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&(manifest_bytes.len() as u64).to_le_bytes());
    out.extend_from_slice(&manifest_bytes);
    out.extend_from_slice(&payload);
    std::fs::write(path, out)?;
    Ok(())
}

fn read_entry(
    what: &str,
    payload: &[u8],
    entry: &TensorEntry,
    expected_shape: &[usize],
) -> Result<Tensor> {
    if entry.shape != expected_shape {
        return Err(Error::parse(
            what.to_string(),
            format!(
                "tensor {} has shape {:?} in the manifest, config requires {:?}",
                entry.name, entry.shape, expected_shape
            ),
        ));
    }
    let numel: usize = entry.shape.iter().product();
    let start = entry.offset as usize;
    let end = start
        .checked_add(numel * 4)
        .ok_or_else(|| Error::parse(what.to_string(), format!("tensor {} offset overflow", entry.name)))?;
    if end > payload.len() {
        return Err(Error::parse(
            what.to_string(),
            format!(
                "payload truncated: tensor {} needs bytes {}..{}, payload has {}",
                entry.name,
                start,
                end,
                payload.len()
            ),
        ));
    }
    let data: Vec<f64> = payload[start..end]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Tensor::from_vec(&entry.shape, data)
}

/// Validate a manifest section against the config-derived shape table without
/// touching the payload, so that a wrong shape is reported for the offending
/// tensor by name rather than as a global payload-size mismatch.
fn validate_entries(
    what: &str,
    entries: &[TensorEntry],
    table: &BTreeMap<String, Vec<usize>>,
    require_all: bool,
) -> Result<()> {
    let mut seen = std::collections::BTreeSet::new();
    for entry in entries {
        let expected = table.get(&entry.name).ok_or_else(|| {
            Error::parse(
                what.to_string(),
                format!("unexpected tensor {} for this config", entry.name),
            )
        })?;
        if &entry.shape != expected {
            return Err(Error::parse(
                what.to_string(),
                format!(
                    "tensor {} has shape {:?} in the manifest, config requires {:?}",
                    entry.name, entry.shape, expected
                ),
            ));
        }
        if !seen.insert(entry.name.as_str()) {
            return Err(Error::parse(
                what.to_string(),
                format!("duplicate tensor {}", entry.name),
            ));
        }
    }
    if require_all {
        for name in table.keys() {
            if !seen.contains(name.as_str()) {
                return Err(Error::parse(
                    what.to_string(),
                    format!("missing tensor {name}"),
                ));
            }
        }
    }
    Ok(())
}

fn collect_section(
    what: &str,
    payload: &[u8],
    entries: &[TensorEntry],
    table: &BTreeMap<String, Vec<usize>>,
) -> Result<BTreeMap<String, Tensor>> {
    let mut tensors = BTreeMap::new();
    for entry in entries {
        let expected = table
            .get(&entry.name)
            .expect("entries validated before decoding");
        let t = read_entry(what, payload, entry, expected)?;
        tensors.insert(entry.name.clone(), t);
    }
    Ok(tensors)
}

/// Load and validate a checkpoint file.
pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    let path = path.as_ref();
    let what = format!("checkpoint {}", path.display());
    let bytes = std::fs::read(path)?;
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(Error::parse(what, "not a checkpoint file (bad magic)"));
    }
    let mlen = u64::from_le_bytes(bytes[8..16].try_into().expect("sliced 8 bytes")) as usize;
    let manifest_end = 16usize
        .checked_add(mlen)
        .filter(|&e| e <= bytes.len())
        .ok_or_else(|| Error::parse(what.clone(), "manifest length exceeds file size"))?;
    let manifest: Manifest = serde_json::from_slice(&bytes[16..manifest_end])
        .map_err(|e| Error::parse(what.clone(), e.to_string()))?;
    if manifest.format_version != CHECKPOINT_FORMAT_VERSION {
        return Err(Error::parse(
            what,
            format!(
                "format version {} unsupported (expected {})",
                manifest.format_version, CHECKPOINT_FORMAT_VERSION
            ),
        ));
    }
    manifest.config.validate()?;
    let payload = &bytes[manifest_end..];

    // Per-tensor name/shape validation first, so a bad shape names the tensor.
    let base_table = shape_table(&manifest.config);
    validate_entries(&what, &manifest.tensors, &base_table, true)?;
    if let Some(entries) = &manifest.adapters {
        if manifest.config.lora_rank == 0 {
            return Err(Error::parse(
                what,
                "manifest lists adapters but config has lora_rank 0",
            ));
        }
        validate_entries(&what, entries, &adapter_shape_table(&manifest.config), true)?;
    }
    let mut moment_table: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    if manifest.opt_state.is_some() {
        let adapter_table = if manifest.config.lora_rank > 0 {
            adapter_shape_table(&manifest.config)
        } else {
            BTreeMap::new()
        };
        for (n, s) in base_table.iter().chain(adapter_table.iter()) {
            moment_table.insert(format!("m.{n}"), s.clone());
            moment_table.insert(format!("v.{n}"), s.clone());
        }
    }
    if let Some(opt) = &manifest.opt_state {
        // Moments may cover a subset (e.g. adapters-only training), so no
        // missing-tensor requirement here.
        validate_entries(&what, &opt.tensors, &moment_table, false)?;
    }

    // Exact payload size: every listed tensor, 4 bytes per element.
    let mut expected_bytes = 0usize;
    let all_entries = manifest
        .tensors
        .iter()
        .chain(manifest.adapters.iter().flatten())
        .chain(manifest.opt_state.iter().flat_map(|o| o.tensors.iter()));
    for e in all_entries {
        expected_bytes += e.shape.iter().product::<usize>() * 4;
    }
    if payload.len() != expected_bytes {
        return Err(Error::parse(
            what,
            format!(
                "payload has {} bytes, manifest describes {}",
                payload.len(),
                expected_bytes
            ),
        ));
    }

    let params_tensors = collect_section(&what, payload, &manifest.tensors, &base_table)?;
    let params = ModelParameters::from_tensors(&manifest.config, params_tensors)?;
    params.check_finite()?;

    let adapters = match &manifest.adapters {
        None => None,
        Some(entries) => {
            let table = adapter_shape_table(&manifest.config);
            let tensors = collect_section(&what, payload, entries, &table)?;
            let ad = LoraAdapters::from_tensors(&manifest.config, tensors)?;
            ad.check_finite()?;
            Some(ad)
        }
    };

    let opt_state = match &manifest.opt_state {
        None => None,
        Some(opt) => {
            let mut m = BTreeMap::new();
            let mut v = BTreeMap::new();
            for entry in &opt.tensors {
                let expected = moment_table
                    .get(&entry.name)
                    .expect("entries validated before decoding");
                let t = read_entry(&what, payload, entry, expected)?;
                let (kind, base) = entry.name.split_at(2);
                match kind {
                    "m." => m.insert(base.to_string(), t),
                    "v." => v.insert(base.to_string(), t),
                    _ => unreachable!("moment_table only admits m./v. names"),
                };
            }
            Some(AdamWState {
                steps: opt.steps.clone(),
                m,
                v,
            })
        }
    };

    Ok(Checkpoint {
        config: manifest.config,
        params,
        adapters,
        opt_state,
    })
}
