//! Typed little-endian binary arrays plus a JSON manifest describing them.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dtype {
    F64,
    U32,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub file: String,
    pub dtype: Dtype,
    pub shape: Vec<usize>,
}

/// Manifest of a directory of arrays. `meta` carries free-form JSON
/// (normalization bounds, config hashes, ...).
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub kind: String,
    pub format_version: u32,
    pub arrays: BTreeMap<String, ArrayEntry>,
    pub meta: serde_json::Map<String, serde_json::Value>,
}

pub struct ArrayWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ArrayWriter {
    pub fn create(dir: &Path, kind: &str) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest: Manifest {
                kind: kind.to_string(),
                format_version: 1,
                ..Default::default()
            },
        })
    }

    pub fn meta(&mut self, key: &str, value: impl Serialize) -> Result<()> {
        self.manifest
            .meta
            .insert(key.to_string(), serde_json::to_value(value)?);
        Ok(())
    }

    pub fn f64s(&mut self, name: &str, shape: &[usize], data: &[f64]) -> Result<()> {
        check_len(name, shape, data.len())?;
        let mut bytes = Vec::with_capacity(data.len() * 8);
        for x in data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.put(name, Dtype::F64, shape, &bytes)
    }

    pub fn u32s(&mut self, name: &str, shape: &[usize], data: &[u32]) -> Result<()> {
        check_len(name, shape, data.len())?;
        let mut bytes = Vec::with_capacity(data.len() * 4);
        for x in data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        self.put(name, Dtype::U32, shape, &bytes)
    }

    fn put(&mut self, name: &str, dtype: Dtype, shape: &[usize], bytes: &[u8]) -> Result<()> {
        let file = format!(
            "{name}.{}",
            match dtype {
                Dtype::F64 => "f64",
                Dtype::U32 => "u32",
            }
        );
        let p = self.dir.join(&file);
        fs::write(&p, bytes).map_err(|e| Error::io(&p, e))?;
        self.manifest.arrays.insert(
            name.to_string(),
            ArrayEntry {
                file,
                dtype,
                shape: shape.to_vec(),
            },
        );
        Ok(())
    }

    pub fn finish(self) -> Result<Manifest> {
        let p = self.dir.join("manifest.json");
        fs::write(&p, serde_json::to_string_pretty(&self.manifest)? + "\n")
            .map_err(|e| Error::io(&p, e))?;
        Ok(self.manifest)
    }
}

fn check_len(name: &str, shape: &[usize], len: usize) -> Result<()> {
    let n: usize = shape.iter().product();
    if n != len {
        return Err(Error::data(format!(
            "array {name}: shape {shape:?} does not match length {len}"
        )));
    }
    Ok(())
}

pub struct ArrayReader {
    dir: PathBuf,
    pub manifest: Manifest,
}

impl ArrayReader {
    pub fn open(dir: &Path, kind: &str) -> Result<Self> {
        let p = dir.join("manifest.json");
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let manifest: Manifest = serde_json::from_str(&text)?;
        if manifest.kind != kind {
            return Err(Error::data(format!(
                "{}: expected a {kind} directory, found {}",
                dir.display(),
                manifest.kind
            )));
        }
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.arrays.contains_key(name)
    }

    pub fn meta<T: serde::de::DeserializeOwned>(&self, key: &str) -> Result<T> {
        let v = self
            .manifest
            .meta
            .get(key)
            .ok_or_else(|| Error::data(format!("manifest lacks meta key {key}")))?;
        Ok(serde_json::from_value(v.clone())?)
    }

    fn raw(&self, name: &str, dtype: Dtype) -> Result<(Vec<usize>, Vec<u8>)> {
        let entry = self
            .manifest
            .arrays
            .get(name)
            .ok_or_else(|| Error::data(format!("manifest lacks array {name}")))?;
        if entry.dtype != dtype {
            return Err(Error::data(format!("array {name} has dtype {:?}", entry.dtype)));
        }
        let p = self.dir.join(&entry.file);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let width = match dtype {
            Dtype::F64 => 8,
            Dtype::U32 => 4,
        };
        let n: usize = entry.shape.iter().product();
        if bytes.len() != n * width {
            return Err(Error::data(format!("array {name}: truncated file")));
        }
        Ok((entry.shape.clone(), bytes))
    }

    pub fn f64s(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (shape, bytes) = self.raw(name, Dtype::F64)?;
        let data = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((shape, data))
    }

    pub fn u32s(&self, name: &str) -> Result<(Vec<usize>, Vec<u32>)> {
        let (shape, bytes) = self.raw(name, Dtype::U32)?;
        let data = bytes
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok((shape, data))
    }

    pub fn matrix(&self, name: &str) -> Result<ndarray::Array2<f64>> {
        let (shape, data) = self.f64s(name)?;
        let (r, c) = match shape.as_slice() {
            [r, c] => (*r, *c),
            _ => return Err(Error::data(format!("array {name} is not 2-d"))),
        };
        ndarray::Array2::from_shape_vec((r, c), data).map_err(|e| Error::data(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let vals = [0.1, -0.0, f64::MIN_POSITIVE, 1e300, std::f64::consts::PI, 7.0];
        let mut w = ArrayWriter::create(dir.path(), "test").unwrap();
        w.f64s("x", &[2, 3], &vals).unwrap();
        w.u32s("i", &[2], &[7, u32::MAX]).unwrap();
        w.meta("bound", 3.5).unwrap();
        w.finish().unwrap();

        let r = ArrayReader::open(dir.path(), "test").unwrap();
        let (shape, back) = r.f64s("x").unwrap();
        assert_eq!(shape, vec![2, 3]);
        for (a, b) in vals.iter().zip(&back) {
            assert_eq!(a.to_bits(), b.to_bits());
        }
        assert_eq!(r.u32s("i").unwrap().1, vec![7, u32::MAX]);
        assert_eq!(r.meta::<f64>("bound").unwrap(), 3.5);
        assert!(ArrayReader::open(dir.path(), "other").is_err());
    }

    #[test]
    fn shape_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let mut w = ArrayWriter::create(dir.path(), "test").unwrap();
        assert!(w.f64s("x", &[2, 2], &[1.0]).is_err());
    }
}
