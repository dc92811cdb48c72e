//! Checkpoint directories: a JSON manifest plus one binary file per tensor.
//!
//! Tensor files hold the magic `KGE1`, a little-endian `u32` rank, `rank`
//! little-endian `u64` dimensions and the row-major little-endian `f64`
//! values.

use std::fs;
use std::io::Write;
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{KgeError, Result};
use crate::numkernel::{ParamStore, RngSnapshot, Tensor};

pub const TENSOR_MAGIC: &[u8; 4] = b"KGE1";
pub const CHECKPOINT_FORMAT: &str = "kgeisd-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";
pub const TEACHER_FILE: &str = "teacher.bin";
pub const ENTITIES_FILE: &str = "entities.txt";
pub const RELATIONS_FILE: &str = "relations.txt";

/// One line of `metrics.jsonl`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss_bce: f64,
    pub loss_kl: f64,
    pub beta: f64,
    pub lr: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_mrr: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_h1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_h3: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub valid_h10: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub config: RunConfig,
    /// Completed epochs; training resumes at this epoch index.
    pub epoch: usize,
    pub seed: u64,
    pub rng: RngSnapshot,
    pub adam_step: u64,
    pub num_entities: usize,
    pub num_relations: usize,
    pub params: Vec<TensorEntry>,
    pub teacher: bool,
    pub history: Vec<EpochRecord>,
}

/// Everything a checkpoint directory holds, in memory.
#[derive(Clone, Debug)]
pub struct Checkpoint {
    pub manifest: Manifest,
    pub params: IndexMap<String, Tensor>,
    /// `(m, v)` per trainable parameter name.
    pub moments: IndexMap<String, (Tensor, Tensor)>,
    pub teacher: Option<Tensor>,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
}

fn param_file(name: &str) -> String {
    format!("{name}.bin")
}

fn moment_files(name: &str) -> (String, String) {
    (format!("adam.m.{name}.bin"), format!("adam.v.{name}.bin"))
}

pub fn encode_tensor(t: &Tensor) -> Vec<u8> {
    let mut out = Vec::with_capacity(8 + 8 * t.rank() + 8 * t.len());
    out.extend_from_slice(TENSOR_MAGIC);
    out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for &x in t.data() {
        out.extend_from_slice(&x.to_le_bytes());
    }
    out
}

pub fn decode_tensor(bytes: &[u8]) -> Result<Tensor> {
    let corrupt = |m: &str| KgeError::Checkpoint(m.to_string());
    if bytes.len() < 4 || &bytes[..4] != TENSOR_MAGIC {
        return Err(corrupt("bad tensor header: magic bytes are not KGE1"));
    }
    if bytes.len() < 8 {
        return Err(corrupt("truncated tensor file: header ends early"));
    }
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dims_end = rank
        .checked_mul(8)
        .and_then(|n| n.checked_add(8))
        .filter(|&end| end <= bytes.len())
        .ok_or_else(|| corrupt("truncated tensor file: header ends early"))?;
    let shape: Vec<usize> = bytes[8..dims_end]
        .chunks_exact(8)
        .map(|c| u64::from_le_bytes(c.try_into().unwrap()) as usize)
        .collect();
    let count = shape
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| corrupt("tensor dimensions overflow"))?;
    let body = &bytes[dims_end..];
    if body.len() != count * 8 {
        return Err(corrupt(&format!(
            "truncated tensor file: expected {} value bytes, found {}",
            count * 8,
            body.len()
        )));
    }
    let data = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Tensor::new(shape, data)
}

pub fn write_tensor(path: &Path, t: &Tensor) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| KgeError::io(path, e))?;
    f.write_all(&encode_tensor(t))
        .map_err(|e| KgeError::io(path, e))
}

pub fn read_tensor(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| KgeError::io(path, e))?;
    decode_tensor(&bytes).map_err(|e| match e {
        KgeError::Checkpoint(m) => KgeError::Checkpoint(format!("{}: {m}", path.display())),
        other => other,
    })
}

fn write_lines(path: &Path, lines: &[String]) -> Result<()> {
    let mut text = lines.join("\n");
    text.push('\n');
    fs::write(path, text).map_err(|e| KgeError::io(path, e))
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|e| KgeError::io(path, e))?;
    Ok(text.lines().map(str::to_string).collect())
}

impl Checkpoint {
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| KgeError::io(dir, e))?;
        for (name, t) in &self.params {
            write_tensor(&dir.join(param_file(name)), t)?;
        }
        for (name, (m, v)) in &self.moments {
            let (fm, fv) = moment_files(name);
            write_tensor(&dir.join(fm), m)?;
            write_tensor(&dir.join(fv), v)?;
        }
        if let Some(t) = &self.teacher {
            write_tensor(&dir.join(TEACHER_FILE), t)?;
        }
        write_lines(&dir.join(ENTITIES_FILE), &self.entities)?;
        write_lines(&dir.join(RELATIONS_FILE), &self.relations)?;
        // manifest last: its presence marks a complete checkpoint
        let path = dir.join(MANIFEST_FILE);
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        fs::write(&path, text).map_err(|e| KgeError::io(&path, e))
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| KgeError::io(&path, e))?;
        let value: serde_json::Value = serde_json::from_str(&text)
            .map_err(|e| KgeError::Checkpoint(format!("{}: {e}", path.display())))?;
        if value.get("format").and_then(|v| v.as_str()) != Some(CHECKPOINT_FORMAT) {
            return Err(KgeError::Checkpoint(format!(
                "{} is not a checkpoint manifest",
                path.display()
            )));
        }
        let version = value.get("version").and_then(|v| v.as_u64());
        if version != Some(u64::from(CHECKPOINT_VERSION)) {
            return Err(KgeError::Checkpoint(format!(
                "unsupported checkpoint version {version:?}, expected {CHECKPOINT_VERSION}"
            )));
        }
        let manifest: Manifest = serde_json::from_value(value)
            .map_err(|e| KgeError::Checkpoint(format!("{}: {e}", path.display())))?;

        let mut params = IndexMap::new();
        let mut moments = IndexMap::new();
        for entry in &manifest.params {
            params.insert(
                entry.name.clone(),
                read_tensor(&dir.join(param_file(&entry.name)))?,
            );
            if entry.trainable {
                let (fm, fv) = moment_files(&entry.name);
                let m = read_tensor(&dir.join(fm))?;
                let v = read_tensor(&dir.join(fv))?;
                moments.insert(entry.name.clone(), (m, v));
            }
        }
        let teacher = if manifest.teacher {
            Some(read_tensor(&dir.join(TEACHER_FILE))?)
        } else {
            None
        };
        let entities = read_lines(&dir.join(ENTITIES_FILE))?;
        let relations = read_lines(&dir.join(RELATIONS_FILE))?;
        Ok(Self {
            manifest,
            params,
            moments,
            teacher,
            entities,
            relations,
        })
    }

    /// Overwrites every parameter in `store` with the saved tensor of the same
    /// name. Missing names or shape disagreements are mismatches.
    pub fn fill_store(&self, store: &mut ParamStore) -> Result<()> {
        for (_, name, p) in store.iter_mut() {
            let saved = self.params.get(name).ok_or_else(|| {
                KgeError::CheckpointMismatch(format!("checkpoint has no parameter {name:?}"))
            })?;
            if saved.shape() != p.value.shape() {
                return Err(KgeError::CheckpointMismatch(format!(
                    "parameter {name:?} has shape {:?} in the checkpoint but {:?} in the model",
                    saved.shape(),
                    p.value.shape()
                )));
            }
            p.value = saved.clone();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_round_trip() {
        let t = Tensor::new(
            vec![2, 3],
            vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 1e300, -7.25],
        )
        .unwrap();
        let back = decode_tensor(&encode_tensor(&t)).unwrap();
        assert_eq!(back.shape(), t.shape());
        for (a, b) in back.data().iter().zip(t.data()) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
    }

    #[test]
    fn layout_is_little_endian() {
        let bytes = encode_tensor(&Tensor::from_vec(vec![1.0]));
        assert_eq!(&bytes[..4], b"KGE1");
        assert_eq!(&bytes[4..8], &[1, 0, 0, 0]);
        assert_eq!(&bytes[8..16], &[1, 0, 0, 0, 0, 0, 0, 0]);
        assert_eq!(&bytes[16..], &1.0f64.to_le_bytes());
    }

    #[test]
    fn wrong_magic_is_header_error() {
        let mut bytes = encode_tensor(&Tensor::from_vec(vec![1.0]));
        bytes[0] = b'X';
        let err = decode_tensor(&bytes).unwrap_err();
        assert!(err.to_string().contains("magic"));
    }

    #[test]
    fn truncation_detected() {
        let bytes = encode_tensor(&Tensor::zeros(&[4, 4]));
        for cut in [6, 12, bytes.len() - 1] {
            let err = decode_tensor(&bytes[..cut]).unwrap_err();
            assert!(err.to_string().contains("truncated"), "{err}");
        }
    }
}
