//! Versioned binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic   8 bytes  "TNDCKPT\0"
//! version u32
//! hlen    u64      header length, then `hlen` bytes of JSON header
//! count   u32      number of arrays, then per array: u64 length + f64 values
//! digest  32 bytes SHA-256 of every preceding byte
//! ```

use std::io::Write;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::lm::model::{ModelConfig, TransformerLM};

const MAGIC: &[u8; 8] = b"TNDCKPT\0";
const VERSION: u32 = 1;

/// Writes `header` and `arrays` atomically (temp file + rename).
pub fn write_container<H: Serialize>(path: &Path, header: &H, arrays: &[&[f64]]) -> Result<()> {
    let header = serde_json::to_vec(header)?;
    let total: usize = arrays.iter().map(|a| 8 + 8 * a.len()).sum();
    let mut buf = Vec::with_capacity(8 + 4 + 8 + header.len() + 4 + total + 32);
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    buf.extend_from_slice(&(header.len() as u64).to_le_bytes());
    buf.extend_from_slice(&header);
    buf.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for a in arrays {
        buf.extend_from_slice(&(a.len() as u64).to_le_bytes());
        for x in *a {
            buf.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&buf);
    buf.extend_from_slice(&digest);
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let tmp = path.with_extension("tmp");
    let mut f = std::fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&buf).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    std::fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::integrity(self.path, "truncated container"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

/// Reads and verifies a container written by [`write_container`].
pub fn read_container<H: DeserializeOwned>(path: &Path) -> Result<(H, Vec<Vec<f64>>)> {
    let buf = std::fs::read(path).map_err(|e| Error::integrity(path, format!("cannot read checkpoint: {e}")))?;
    if buf.len() < MAGIC.len() + 32 || &buf[..8] != MAGIC {
        return Err(Error::integrity(path, "not a checkpoint container"));
    }
    let body = &buf[..buf.len() - 32];
    let mut r = Reader { buf: body, pos: 8, path };
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::integrity(path, format!("unsupported container version {version}")));
    }
    let hlen = r.u64()? as usize;
    let header_bytes = r.take(hlen)?;
    // Peek at the step for error context before the digest check.
    let step = serde_json::from_slice::<serde_json::Value>(header_bytes)
        .ok()
        .and_then(|v| v.get("step").and_then(serde_json::Value::as_u64));
    let context = |reason: &str| match step {
        Some(s) => Error::integrity(path, format!("{reason} (step {s})")),
        None => Error::integrity(path, reason.to_string()),
    };
    if Sha256::digest(body).as_slice() != &buf[buf.len() - 32..] {
        return Err(context("checksum mismatch"));
    }
    let header: H = serde_json::from_slice(header_bytes).map_err(|e| context(&format!("header parse: {e}")))?;
    let count = r.u32()? as usize;
    let mut arrays = Vec::with_capacity(count);
    for _ in 0..count {
        let n = r.u64()? as usize;
        let bytes = r.take(n.checked_mul(8).ok_or_else(|| context("array length overflow"))?)?;
        arrays.push(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect());
    }
    if r.pos != body.len() {
        return Err(context("trailing bytes after arrays"));
    }
    Ok((header, arrays))
}

/// Serializable position of a ChaCha8 stream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: String,
    pub stream: u64,
    pub word_pos: String,
}

impl RngState {
    pub fn capture(rng: &ChaCha8Rng) -> Self {
        Self { seed: hex::encode(rng.get_seed()), stream: rng.get_stream(), word_pos: rng.get_word_pos().to_string() }
    }

    pub fn restore(&self) -> Result<ChaCha8Rng> {
        use rand::SeedableRng;
        let bad = |what: &str| Error::Serde(format!("invalid rng {what}"));
        let seed: [u8; 32] = hex::decode(&self.seed).map_err(|_| bad("seed"))?.try_into().map_err(|_| bad("seed"))?;
        let mut rng = ChaCha8Rng::from_seed(seed);
        rng.set_stream(self.stream);
        rng.set_word_pos(self.word_pos.parse().map_err(|_| bad("position"))?);
        Ok(rng)
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ParamSpec {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ModelHeader {
    kind: String,
    step: u64,
    config: ModelConfig,
    params: Vec<ParamSpec>,
    rng: Option<RngState>,
}

/// A saved model tagged with its training step ("neural age").
#[derive(Debug, Clone)]
pub struct TrajectoryCheckpoint {
    pub step: u64,
    pub model: TransformerLM,
    pub rng: Option<RngState>,
    pub path: PathBuf,
}

pub fn save_checkpoint(path: &Path, step: u64, model: &TransformerLM, rng: Option<&ChaCha8Rng>) -> Result<()> {
    let params = model.params().iter().map(|(n, t)| ParamSpec { name: n.to_string(), shape: t.shape().to_vec() }).collect();
    let header = ModelHeader { kind: "model".into(), step, config: *model.config(), params, rng: rng.map(RngState::capture) };
    let arrays: Vec<&[f64]> = model.params().tensors().iter().map(Tensor::values).collect();
    write_container(path, &header, &arrays)
}

pub fn load_checkpoint(path: &Path) -> Result<TrajectoryCheckpoint> {
    let (header, arrays): (ModelHeader, _) = read_container(path)?;
    if header.kind != "model" {
        return Err(Error::integrity(path, format!("expected a model checkpoint, found `{}`", header.kind)));
    }
    if header.params.len() != arrays.len() {
        return Err(Error::integrity(path, format!("header lists {} arrays, found {} (step {})", header.params.len(), arrays.len(), header.step)));
    }
    let tensors = header
        .params
        .iter()
        .zip(arrays)
        .map(|(spec, a)| Tensor::new(spec.shape.clone(), a))
        .collect::<Result<Vec<_>>>()
        .map_err(|e| Error::integrity(path, format!("{e} (step {})", header.step)))?;
    let model = TransformerLM::from_params(header.config, tensors)
        .map_err(|e| Error::integrity(path, format!("{e} (step {})", header.step)))?;
    Ok(TrajectoryCheckpoint { step: header.step, model, rng: header.rng, path: path.to_path_buf() })
}

pub fn checkpoint_file_name(step: u64) -> String {
    format!("step_{step:08}.ckpt")
}

/// `(step, path)` of every checkpoint in `dir`, ascending by step.
pub fn list_checkpoints(dir: &Path) -> Result<Vec<(u64, PathBuf)>> {
    let rd = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?;
    let mut out = Vec::new();
    for entry in rd {
        let entry = entry.map_err(|e| Error::io(dir, e))?;
        let name = entry.file_name();
        let name = name.to_string_lossy();
        if let Some(step) = name.strip_prefix("step_").and_then(|s| s.strip_suffix(".ckpt")).and_then(|s| s.parse().ok()) {
            out.push((step, entry.path()));
        }
    }
    out.sort();
    if out.windows(2).any(|w| w[0].0 >= w[1].0) {
        return Err(Error::integrity(dir, "checkpoint steps are not strictly increasing"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngCore, SeedableRng};

    fn model() -> TransformerLM {
        let cfg = ModelConfig { d_model: 8, n_heads: 2, n_layers: 1, context_len: 8, vocab_size: 9 };
        TransformerLM::new(cfg, 3).unwrap()
    }

    #[test]
    fn reload_reproduces_probe_logits_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join(checkpoint_file_name(10));
        let m = model();
        save_checkpoint(&p, 10, &m, None).unwrap();
        let ck = load_checkpoint(&p).unwrap();
        assert_eq!(ck.step, 10);
        let probe = [0, 4, 5, 6];
        let (a, _) = m.forward(&probe).unwrap();
        let (b, _) = ck.model.forward(&probe).unwrap();
        let maxdiff = a.values().iter().zip(b.values()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert_eq!(maxdiff, 0.0);
    }

    #[test]
    fn rng_state_round_trips() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        rng.next_u64();
        let st = RngState::capture(&rng);
        let mut back = st.restore().unwrap();
        assert_eq!(rng.next_u64(), back.next_u64());
    }

    #[test]
    fn missing_and_corrupt_files_are_integrity_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("nope.ckpt");
        assert!(matches!(load_checkpoint(&p), Err(Error::Integrity { .. })));
        save_checkpoint(&p, 42, &model(), None).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let n = bytes.len();
        bytes[n - 100] ^= 0xff;
        std::fs::write(&p, bytes).unwrap();
        let err = load_checkpoint(&p).unwrap_err().to_string();
        assert!(err.contains("checksum") && err.contains("step 42"), "{err}");
    }

    #[test]
    fn listing_is_ascending() {
        let dir = tempfile::tempdir().unwrap();
        for s in [20, 2, 100] {
            save_checkpoint(&dir.path().join(checkpoint_file_name(s)), s, &model(), None).unwrap();
        }
        let steps: Vec<u64> = list_checkpoints(dir.path()).unwrap().into_iter().map(|(s, _)| s).collect();
        assert_eq!(steps, vec![2, 20, 100]);
    }
}
