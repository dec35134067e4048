//! Checkpoint container.
//!
//! ```text
//! sevalckpt-v1
//! {"config":{...},"id":"...","meta":{...},"tensors":N}
//! <name> <rows> <cols>
//! <rows*cols little-endian f32>
//! ...
//! ```

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::net::{Model, ModelConfig};
use super::tensor::Mat;

pub const CHECKPOINT_FORMAT: &str = "sevalckpt-v1";

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("not a {CHECKPOINT_FORMAT} file (found {0:?})")]
    Format(String),
    #[error("bad header: {0}")]
    Header(String),
    #[error("tensor {index}: expected {expected}, found {found}")]
    Shape { index: usize, expected: String, found: String },
    #[error("invalid model configuration: {0}")]
    Config(String),
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    config: ModelConfig,
    id: String,
    meta: serde_json::Value,
    tensors: usize,
}

/// A trained model with its identity and a free-form hyperparameter echo.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub model: Model<f32>,
    pub meta: serde_json::Value,
}

impl Checkpoint {
    pub fn new(model: Model<f32>, meta: serde_json::Value) -> Self {
        Self { model, meta }
    }

    /// FNV-1a over config, tensor names and values.
    pub fn id(&self) -> String {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for &b in bytes {
                h ^= u64::from(b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        feed(serde_json::to_string(self.model.config()).unwrap_or_default().as_bytes());
        let params = self.model.params();
        for (spec, v) in params.specs().iter().zip(params.values()) {
            feed(spec.name.as_bytes());
            for x in &v.data {
                feed(&x.to_le_bytes());
            }
        }
        format!("{h:016x}")
    }

    pub fn write_to(&self, mut w: impl Write) -> Result<(), CheckpointError> {
        let params = self.model.params();
        let header = Header {
            config: *self.model.config(),
            id: self.id(),
            meta: self.meta.clone(),
            tensors: params.len(),
        };
        writeln!(w, "{CHECKPOINT_FORMAT}")?;
        writeln!(w, "{}", serde_json::to_string(&header).map_err(|e| CheckpointError::Header(e.to_string()))?)?;
        for (spec, v) in params.specs().iter().zip(params.values()) {
            writeln!(w, "{} {} {}", spec.name, v.rows, v.cols)?;
            let mut buf = Vec::with_capacity(v.len() * 4);
            for x in &v.data {
                buf.extend_from_slice(&x.to_le_bytes());
            }
            w.write_all(&buf)?;
        }
        Ok(())
    }

    pub fn read_from(mut r: impl BufRead) -> Result<Self, CheckpointError> {
        let mut line = String::new();
        r.read_line(&mut line)?;
        if line.trim_end() != CHECKPOINT_FORMAT {
            return Err(CheckpointError::Format(line.trim_end().chars().take(32).collect()));
        }
        line.clear();
        r.read_line(&mut line)?;
        let header: Header = serde_json::from_str(line.trim_end()).map_err(|e| CheckpointError::Header(e.to_string()))?;
        let mut model = Model::<f32>::new(header.config, 0).map_err(|e| CheckpointError::Config(e.to_string()))?;
        if header.tensors != model.params().len() {
            return Err(CheckpointError::Shape {
                index: header.tensors.min(model.params().len()),
                expected: format!("{} tensors", model.params().len()),
                found: format!("{} tensors", header.tensors),
            });
        }
        let specs = model.params().specs().to_vec();
        let mut values = Vec::with_capacity(specs.len());
        for (index, spec) in specs.iter().enumerate() {
            line.clear();
            r.read_line(&mut line)?;
            let parts: Vec<&str> = line.split_whitespace().collect();
            let expected = format!("{} {} {}", spec.name, spec.rows, spec.cols);
            if parts.len() != 3 || parts.join(" ") != expected {
                return Err(CheckpointError::Shape { index, expected, found: line.trim_end().to_string() });
            }
            let mut buf = vec![0u8; spec.rows * spec.cols * 4];
            r.read_exact(&mut buf)?;
            let data = buf.chunks_exact(4).map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]])).collect();
            values.push(Mat::from_vec(spec.rows, spec.cols, data));
        }
        model.params_mut().values_mut().clone_from_slice(&values);
        let ckpt = Self { model, meta: header.meta };
        if ckpt.id() != header.id {
            return Err(CheckpointError::Header(format!("id {} does not match contents {}", header.id, ckpt.id())));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CheckpointError> {
        let tmp = path.as_ref().with_extension("tmp");
        {
            let mut w = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
            self.write_to(&mut w)?;
            w.flush()?;
        }
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CheckpointError> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let ckpt = Checkpoint::new(model, serde_json::json!({"epochs": 2}));
        let mut bytes = Vec::new();
        ckpt.write_to(&mut bytes).unwrap();
        let back = Checkpoint::read_from(&bytes[..]).unwrap();
        assert_eq!(back.id(), ckpt.id());
        assert_eq!(back.model.params().values(), ckpt.model.params().values());
        assert_eq!(back.meta["epochs"], 2);
    }

    #[test]
    fn rejects_shape_mismatch() {
        let model = Model::<f32>::new(ModelConfig::tiny(), 3).unwrap();
        let mut bytes = Vec::new();
        Checkpoint::new(model, serde_json::Value::Null).write_to(&mut bytes).unwrap();
        let text = String::from_utf8_lossy(&bytes).into_owned();
        let tampered = text.replacen("hgnn.job_in.w 5 4", "hgnn.job_in.w 4 5", 1);
        assert_ne!(tampered, text);
        let err = Checkpoint::read_from(tampered.as_bytes()).unwrap_err();
        assert!(matches!(err, CheckpointError::Shape { index: 0, .. }), "{err}");
    }

    #[test]
    fn rejects_foreign_files() {
        let err = Checkpoint::read_from(&b"hello\n"[..]).unwrap_err();
        assert!(matches!(err, CheckpointError::Format(_)));
    }
}
