//! Checkpoint container: a versioned binary file of named `f32` arrays plus JSON metadata.
//!
//! Layout (little-endian):
//! `b"FSDHCKPT"`, `u32` format version, `u32` metadata length, metadata JSON,
//! `u32` tensor count, then per tensor: `u32` name length, name, `4 × u64` NCHW shape,
//! `f32` values.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::GeneratorNet;
use crate::nn::ParamStore;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"FSDHCKPT";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub meta: serde_json::Value,
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Container {
    pub fn new(meta: serde_json::Value) -> Self {
        Self {
            meta,
            tensors: Vec::new(),
        }
    }

    /// Adds every parameter of `store` under `prefix/`.
    pub fn push_store(&mut self, prefix: &str, store: &ParamStore<f32>) {
        for (name, t) in store.iter() {
            self.tensors.push((format!("{prefix}/{name}"), t.clone()));
        }
    }

    pub fn push_tensors<'a>(&mut self, prefix: &str, names: impl Iterator<Item = &'a str>, tensors: &[Tensor<f32>]) {
        for (name, t) in names.zip(tensors) {
            self.tensors.push((format!("{prefix}/{name}"), t.clone()));
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    /// Overwrites every parameter of `store` from `prefix/<name>` entries, checking shapes.
    pub fn fill_store(&self, prefix: &str, store: &mut ParamStore<f32>, path: &Path) -> Result<()> {
        for i in 0..store.len() {
            let key = format!("{prefix}/{}", store.name(i));
            let t = self.get(&key).ok_or_else(|| Error::Format {
                path: path.to_path_buf(),
                reason: format!("missing tensor {key}"),
            })?;
            if t.shape() != store.get(i).shape() {
                return Err(Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("tensor {key} has shape {:?}, expected {:?}", t.shape(), store.get(i).shape()),
                });
            }
            *store.get_mut(i) = t.clone();
        }
        Ok(())
    }

    /// Tensors under `prefix/`, in the order of `names`.
    pub fn tensors_for<'a>(&self, prefix: &str, names: impl Iterator<Item = &'a str>, path: &Path) -> Result<Vec<Tensor<f32>>> {
        names
            .map(|n| {
                let key = format!("{prefix}/{n}");
                self.get(&key).cloned().ok_or_else(|| Error::Format {
                    path: path.to_path_buf(),
                    reason: format!("missing tensor {key}"),
                })
            })
            .collect()
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let io = |e| Error::io(path, e);
        let tmp = path.with_extension("tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp).map_err(io)?);
            let meta = serde_json::to_vec(&self.meta).expect("metadata serializes");
            w.write_all(MAGIC).map_err(io)?;
            w.write_all(&FORMAT_VERSION.to_le_bytes()).map_err(io)?;
            w.write_all(&(meta.len() as u32).to_le_bytes()).map_err(io)?;
            w.write_all(&meta).map_err(io)?;
            w.write_all(&(self.tensors.len() as u32).to_le_bytes()).map_err(io)?;
            for (name, t) in &self.tensors {
                w.write_all(&(name.len() as u32).to_le_bytes()).map_err(io)?;
                w.write_all(name.as_bytes()).map_err(io)?;
                for d in t.shape() {
                    w.write_all(&(d as u64).to_le_bytes()).map_err(io)?;
                }
                let mut buf = Vec::with_capacity(t.len() * 4);
                for v in t.data() {
                    buf.extend_from_slice(&v.to_le_bytes());
                }
                w.write_all(&buf).map_err(io)?;
            }
            w.flush().map_err(io)?;
        }
        std::fs::rename(&tmp, path).map_err(io)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let io = |e| Error::io(path, e);
        let bad = |reason: String| Error::Format {
            path: path.to_path_buf(),
            reason,
        };
        let mut r = BufReader::new(File::open(path).map_err(io)?);
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic).map_err(|_| bad("truncated header".into()))?;
        if &magic != MAGIC {
            return Err(bad("not a checkpoint file".into()));
        }
        let version = read_u32(&mut r).map_err(|_| bad("truncated header".into()))?;
        if version != FORMAT_VERSION {
            return Err(bad(format!("unsupported format version {version}")));
        }
        let meta_len = read_u32(&mut r).map_err(|_| bad("truncated header".into()))? as usize;
        let mut meta = vec![0u8; meta_len];
        r.read_exact(&mut meta).map_err(|_| bad("truncated metadata".into()))?;
        let meta = serde_json::from_slice(&meta).map_err(|e| bad(format!("metadata: {e}")))?;
        let count = read_u32(&mut r).map_err(|_| bad("truncated tensor table".into()))?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let trunc = |_| bad("truncated tensor".into());
            let name_len = read_u32(&mut r).map_err(trunc)? as usize;
            let mut name = vec![0u8; name_len];
            r.read_exact(&mut name).map_err(trunc)?;
            let name = String::from_utf8(name).map_err(|_| bad("tensor name is not UTF-8".into()))?;
            let mut shape = [0usize; 4];
            for d in &mut shape {
                let mut b = [0u8; 8];
                r.read_exact(&mut b).map_err(trunc)?;
                *d = u64::from_le_bytes(b) as usize;
            }
            let n: usize = shape.iter().product();
            let mut raw = vec![0u8; n * 4];
            r.read_exact(&mut raw).map_err(trunc)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            tensors.push((name, Tensor::from_vec(shape, data)));
        }
        Ok(Self { meta, tensors })
    }
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Metadata block written with every generator-bearing checkpoint.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureInfo {
    pub generator_fingerprint: String,
    #[serde(default)]
    pub discriminator_fingerprint: Option<String>,
}

/// Reads the generator parameters from a checkpoint, verifying the architecture fingerprint.
pub fn load_generator(path: &Path) -> Result<GeneratorNet<f32>> {
    let c = Container::read(path)?;
    let mut net = GeneratorNet::<f32>::new(0);
    let found = c
        .meta
        .get("architecture")
        .and_then(|a| serde_json::from_value::<ArchitectureInfo>(a.clone()).ok())
        .map(|a| a.generator_fingerprint)
        .unwrap_or_default();
    let expected = net.fingerprint();
    if found != expected {
        return Err(Error::Fingerprint { expected, found });
    }
    c.fill_store("gen", &mut net.params, path)?;
    Ok(net)
}

/// Writes a generator-only checkpoint.
pub fn save_generator(path: &Path, net: &GeneratorNet<f32>) -> Result<()> {
    let mut c = Container::new(serde_json::json!({
        "architecture": ArchitectureInfo {
            generator_fingerprint: net.fingerprint(),
            discriminator_fingerprint: None,
        },
    }));
    c.push_store("gen", &net.params);
    c.write(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.fsd");
        let mut c = Container::new(serde_json::json!({"k": 1}));
        c.tensors.push(("a/x".into(), Tensor::from_vec([1, 2, 1, 2], vec![1.0, -2.5, 3.25, f32::MIN_POSITIVE])));
        c.tensors.push(("b".into(), Tensor::zeros([2, 1, 1, 1])));
        c.write(&path).unwrap();
        assert_eq!(Container::read(&path).unwrap(), c);
    }

    #[test]
    fn rejects_garbage_and_wrong_fingerprint() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fsd");
        std::fs::write(&path, b"hello world").unwrap();
        assert!(matches!(Container::read(&path), Err(Error::Format { .. })));

        let c = Container::new(serde_json::json!({
            "architecture": {"generator_fingerprint": "0000000000000000"}
        }));
        c.write(&path).unwrap();
        assert!(matches!(load_generator(&path), Err(Error::Fingerprint { .. })));
    }

    #[test]
    fn generator_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.fsd");
        let net = GeneratorNet::<f32>::new(11);
        save_generator(&path, &net).unwrap();
        let back = load_generator(&path).unwrap();
        assert_eq!(back.params, net.params);
    }
}
