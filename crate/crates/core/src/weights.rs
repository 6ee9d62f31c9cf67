//! Tensor container shared by every scorer.
//!
//! Layout: the 8-byte magic `ASRW0001`, a little-endian `u64` manifest
//! length, the UTF-8 JSON manifest, then the concatenated raw tensor bytes.
//! Tensors are float32 little-endian; manifest offsets are relative to the
//! first byte after the manifest.

use std::fs;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"ASRW0001";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub dtype: String,
    pub shape: Vec<usize>,
    pub offset: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub model: String,
    pub hyperparameters: Value,
    #[serde(default)]
    pub metadata: Value,
    pub tensors: Vec<TensorEntry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeightFile {
    pub model: String,
    pub hyperparameters: Value,
    /// Non-tensor payload such as vocabularies.
    pub metadata: Value,
    tensors: Vec<(String, Tensor)>,
}

impl WeightFile {
    pub fn new(model: impl Into<String>, hyperparameters: Value) -> Self {
        WeightFile {
            model: model.into(),
            hyperparameters,
            metadata: Value::Null,
            tensors: Vec::new(),
        }
    }

    pub fn put(&mut self, name: impl Into<String>, shape: Vec<usize>, data: Vec<f32>) -> Result<()> {
        let name = name.into();
        if shape.iter().product::<usize>() != data.len() {
            return Err(Error::WeightFormat(format!(
                "tensor {name}: shape {shape:?} does not match {} values",
                data.len()
            )));
        }
        if self.tensors.iter().any(|(n, _)| *n == name) {
            return Err(Error::WeightFormat(format!("duplicate tensor {name}")));
        }
        self.tensors.push((name, Tensor { shape, data }));
        Ok(())
    }

    pub fn put_matrix(&mut self, name: impl Into<String>, m: &Array2<f64>) -> Result<()> {
        let shape = vec![m.nrows(), m.ncols()];
        self.put(name, shape, m.iter().map(|&v| v as f32).collect())
    }

    pub fn put_vector(&mut self, name: impl Into<String>, v: &Array1<f64>) -> Result<()> {
        self.put(name, vec![v.len()], v.iter().map(|&x| x as f32).collect())
    }

    pub fn put_scalar(&mut self, name: impl Into<String>, v: f64) -> Result<()> {
        self.put(name, vec![1], vec![v as f32])
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| Error::WeightFormat(format!("missing tensor {name:?}")))
    }

    pub fn tensor_names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn matrix(&self, name: &str) -> Result<Array2<f64>> {
        let t = self.tensor(name)?;
        match t.shape[..] {
            [r, c] => Ok(Array2::from_shape_vec((r, c), t.data.iter().map(|&v| v as f64).collect())
                .expect("shape checked on insert")),
            _ => Err(Error::WeightFormat(format!("tensor {name} is not a matrix: {:?}", t.shape))),
        }
    }

    pub fn vector(&self, name: &str) -> Result<Array1<f64>> {
        let t = self.tensor(name)?;
        if t.shape.len() != 1 {
            return Err(Error::WeightFormat(format!("tensor {name} is not a vector: {:?}", t.shape)));
        }
        Ok(t.data.iter().map(|&v| v as f64).collect())
    }

    /// Matrix tensor, or a vector tensor viewed as a single row.
    pub fn matrix_or_row(&self, name: &str) -> Result<Array2<f64>> {
        match self.tensor(name)?.shape.len() {
            1 => Ok(self.vector(name)?.insert_axis(ndarray::Axis(0))),
            _ => self.matrix(name),
        }
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let t = self.tensor(name)?;
        match t.data[..] {
            [v] => Ok(v as f64),
            _ => Err(Error::WeightFormat(format!("tensor {name} is not a scalar"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut offset = 0u64;
        let entries = self
            .tensors
            .iter()
            .map(|(name, t)| {
                let e = TensorEntry {
                    name: name.clone(),
                    dtype: "float32".into(),
                    shape: t.shape.clone(),
                    offset,
                };
                offset += 4 * t.data.len() as u64;
                e
            })
            .collect();
        let manifest = Manifest {
            model: self.model.clone(),
            hyperparameters: self.hyperparameters.clone(),
            metadata: self.metadata.clone(),
            tensors: entries,
        };
        let json = serde_json::to_vec(&manifest).expect("manifest serializes");
        let mut out = Vec::with_capacity(16 + json.len() + offset as usize);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for (_, t) in &self.tensors {
            for v in &t.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..8] != MAGIC {
            return Err(Error::WeightFormat("missing ASRW0001 magic".into()));
        }
        let len = u64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes")) as usize;
        let data_start = 16usize
            .checked_add(len)
            .filter(|&end| end <= bytes.len())
            .ok_or_else(|| Error::WeightFormat("manifest length exceeds file size".into()))?;
        let manifest: Manifest = serde_json::from_slice(&bytes[16..data_start])
            .map_err(|e| Error::WeightFormat(format!("manifest: {e}")))?;
        let data = &bytes[data_start..];

        let mut file = WeightFile::new(manifest.model, manifest.hyperparameters);
        file.metadata = manifest.metadata;
        for entry in manifest.tensors {
            if entry.dtype != "float32" {
                return Err(Error::WeightFormat(format!(
                    "tensor {}: unsupported dtype {}",
                    entry.name, entry.dtype
                )));
            }
            let count: usize = entry.shape.iter().product();
            let start = entry.offset as usize;
            let end = start + 4 * count;
            let raw = data.get(start..end).ok_or_else(|| {
                Error::WeightFormat(format!("tensor {} runs past end of file", entry.name))
            })?;
            let values = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            file.put(entry.name, entry.shape, values)?;
        }
        Ok(file)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Round a matrix through float32, matching what a save/load cycle produces.
pub fn round_f32(m: &Array2<f64>) -> Array2<f64> {
    m.mapv(|v| v as f32 as f64)
}
