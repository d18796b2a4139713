//! Checkpoint container.
//!
//! Layout: the 4-byte magic `C2SQ`, a little-endian `u32` format version, a
//! little-endian `u64` header length, a JSON header (model config,
//! vocabulary, tensor names and shapes), then every tensor's entries as
//! little-endian `f64` in row-major order. Values round-trip bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::graph::ParamStore;
use super::model::{build_layout, ModelConfig, Seq2SeqModel};
use super::vocab::Vocabulary;
use super::Seq2SeqError;

pub const MAGIC: &[u8; 4] = b"C2SQ";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
struct Header {
    model_config: ModelConfig,
    vocabulary: Vocabulary,
    tensors: Vec<TensorInfo>,
}

#[derive(Debug, Serialize, Deserialize, PartialEq, Eq)]
struct TensorInfo {
    name: String,
    rows: usize,
    cols: usize,
}

fn corrupt(reason: impl Into<String>) -> Seq2SeqError {
    Seq2SeqError::Checkpoint(reason.into())
}

pub fn write_checkpoint<W: Write>(model: &Seq2SeqModel, out: &mut W) -> Result<(), Seq2SeqError> {
    let header = Header {
        model_config: model.config,
        vocabulary: model.vocab.clone(),
        tensors: model.params.iter().map(|(name, t)| TensorInfo { name: name.to_string(), rows: t.nrows(), cols: t.ncols() }).collect(),
    };
    let json = serde_json::to_vec(&header).map_err(|e| corrupt(e.to_string()))?;
    out.write_all(MAGIC)?;
    out.write_all(&FORMAT_VERSION.to_le_bytes())?;
    out.write_all(&(json.len() as u64).to_le_bytes())?;
    out.write_all(&json)?;
    for (_, tensor) in model.params.iter() {
        for v in tensor.iter() {
            out.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

pub fn read_checkpoint<R: Read>(input: &mut R) -> Result<Seq2SeqModel, Seq2SeqError> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(corrupt("not a checkpoint file (bad magic)"));
    }
    let mut word = [0u8; 4];
    input.read_exact(&mut word)?;
    let version = u32::from_le_bytes(word);
    if version != FORMAT_VERSION {
        return Err(corrupt(format!("unsupported checkpoint version {version}")));
    }
    let mut len = [0u8; 8];
    input.read_exact(&mut len)?;
    let len = u64::from_le_bytes(len) as usize;
    let mut json = vec![0u8; len];
    input.read_exact(&mut json)?;
    let header: Header = serde_json::from_slice(&json).map_err(|e| corrupt(format!("bad header: {e}")))?;
    header.model_config.validate()?;
    header.vocabulary.validate().map_err(|e| corrupt(e.to_string()))?;

    let mut params = ParamStore::new();
    let mut expected = header.tensors.iter();
    let mut mismatch = None;
    let mut buf = [0u8; 8];
    let mut read_error = None;
    let layout = build_layout(&header.model_config, header.vocabulary.len(), &mut params, |name, rows, cols, _| {
        match expected.next() {
            Some(info) if info.name == name && info.rows == rows && info.cols == cols => {}
            other => {
                mismatch.get_or_insert_with(|| format!("expected tensor {name} [{rows}x{cols}], header has {other:?}"));
                return Array2::zeros((rows, cols));
            }
        }
        if mismatch.is_some() || read_error.is_some() {
            return Array2::zeros((rows, cols));
        }
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            if let Err(e) = input.read_exact(&mut buf) {
                read_error = Some(e);
                break;
            }
            values.push(f64::from_le_bytes(buf));
        }
        values.resize(rows * cols, 0.0);
        Array2::from_shape_vec((rows, cols), values).expect("sized buffer")
    });
    if let Some(m) = mismatch {
        return Err(corrupt(m));
    }
    if let Some(e) = read_error {
        return Err(e.into());
    }
    if expected.next().is_some() {
        return Err(corrupt("header lists more tensors than the model layout"));
    }
    Ok(Seq2SeqModel { config: header.model_config, vocab: header.vocabulary, params, layout })
}

impl Seq2SeqModel {
    pub fn save(&self, path: &Path) -> Result<(), Seq2SeqError> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let mut out = BufWriter::new(File::create(path)?);
        write_checkpoint(self, &mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Seq2SeqModel, Seq2SeqError> {
        read_checkpoint(&mut BufReader::new(File::open(path)?))
    }
}
