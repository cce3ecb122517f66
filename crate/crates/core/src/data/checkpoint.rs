//! Checkpoint container: a little-endian binary file holding named f32
//! tensors plus a small metadata map.
//!
//! Layout: magic `MLCV`, version u32, metadata count and entries, tensor
//! count and entries (name, dims, raw f32 payload), then an FNV-1a64
//! checksum of every preceding byte. Round-trips are bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::config::fnv1a64;
use super::DataError;
use crate::layers::{Layer, Network};
use crate::tensor::{KruskalFactors, Tensor};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"MLCV";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    /// Ordered named tensors; names are unique.
    pub tensors: Vec<(String, Tensor<f32>)>,
}

impl Checkpoint {
    pub fn tensor(&self, name: &str) -> Option<&Tensor<f32>> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: &Path) -> Result<(), DataError> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CHECKPOINT_MAGIC);
    buf.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    buf.extend_from_slice(&(ckpt.meta.len() as u32).to_le_bytes());
    for (k, v) in &ckpt.meta {
        put_str(&mut buf, k);
        put_str(&mut buf, v);
    }
    buf.extend_from_slice(&(ckpt.tensors.len() as u32).to_le_bytes());
    for (name, t) in &ckpt.tensors {
        put_str(&mut buf, name);
        buf.extend_from_slice(&(t.order() as u32).to_le_bytes());
        for &d in t.shape() {
            buf.extend_from_slice(&(d as u32).to_le_bytes());
        }
        for &v in t.data() {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    let checksum = fnv1a64(&buf);
    buf.extend_from_slice(&checksum.to_le_bytes());
    fs::write(path, buf).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint, DataError> {
    let bytes = fs::read(path).map_err(|source| DataError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let fail = |reason: &str| DataError::Checkpoint(format!("{}: {reason}", path.display()));
    if bytes.len() < 4 + 4 + 8 || &bytes[..4] != CHECKPOINT_MAGIC {
        return Err(fail("bad magic"));
    }
    let body = &bytes[..bytes.len() - 8];
    let stored = u64::from_le_bytes(bytes[bytes.len() - 8..].try_into().unwrap());
    if fnv1a64(body) != stored {
        return Err(fail("checksum failure"));
    }
    let mut off = 4usize;
    let version = get_u32(body, &mut off).ok_or_else(|| fail("truncated"))?;
    if version != CHECKPOINT_VERSION {
        return Err(fail(&format!(
            "version {version} not supported (expected {CHECKPOINT_VERSION})"
        )));
    }
    let meta_count = get_u32(body, &mut off).ok_or_else(|| fail("truncated"))? as usize;
    let mut meta = BTreeMap::new();
    for _ in 0..meta_count {
        let k = get_str(body, &mut off).ok_or_else(|| fail("truncated metadata"))?;
        let v = get_str(body, &mut off).ok_or_else(|| fail("truncated metadata"))?;
        meta.insert(k, v);
    }
    let tensor_count = get_u32(body, &mut off).ok_or_else(|| fail("truncated"))? as usize;
    let mut tensors = Vec::with_capacity(tensor_count);
    let mut seen = std::collections::HashSet::new();
    for _ in 0..tensor_count {
        let name = get_str(body, &mut off).ok_or_else(|| fail("truncated tensor name"))?;
        if !seen.insert(name.clone()) {
            return Err(fail(&format!("duplicate tensor name `{name}`")));
        }
        let ndim = get_u32(body, &mut off).ok_or_else(|| fail("truncated dims"))? as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(get_u32(body, &mut off).ok_or_else(|| fail("truncated dims"))? as usize);
        }
        let len: usize = shape.iter().product();
        if off + 4 * len > body.len() {
            return Err(fail("tensor payload shorter than its shape implies"));
        }
        let mut data = Vec::with_capacity(len);
        for _ in 0..len {
            data.push(f32::from_le_bytes(body[off..off + 4].try_into().unwrap()));
            off += 4;
        }
        let t = Tensor::from_vec(&shape, data).map_err(|e| fail(&e.to_string()))?;
        tensors.push((name, t));
    }
    if off != body.len() {
        return Err(fail("trailing bytes after tensor table"));
    }
    Ok(Checkpoint { meta, tensors })
}

fn put_str(buf: &mut Vec<u8>, s: &str) {
    buf.extend_from_slice(&(s.len() as u32).to_le_bytes());
    buf.extend_from_slice(s.as_bytes());
}

fn get_u32(bytes: &[u8], off: &mut usize) -> Option<u32> {
    if *off + 4 > bytes.len() {
        return None;
    }
    let v = u32::from_le_bytes(bytes[*off..*off + 4].try_into().unwrap());
    *off += 4;
    Some(v)
}

fn get_str(bytes: &[u8], off: &mut usize) -> Option<String> {
    let len = get_u32(bytes, off)? as usize;
    if *off + len > bytes.len() {
        return None;
    }
    let s = String::from_utf8(bytes[*off..*off + len].to_vec()).ok()?;
    *off += len;
    Some(s)
}

/// Serialize every parameter (and batch-norm statistic) of a network.
pub fn checkpoint_from_network(
    net: &Network<f32>,
    meta: BTreeMap<String, String>,
) -> Checkpoint {
    let mut tensors = Vec::new();
    for (i, layer) in net.layers.iter().enumerate() {
        let name = |field: &str| format!("layer{i}.{field}");
        match layer {
            Layer::Conv(b) => {
                tensors.push((name("weight"), b.weights.clone()));
                tensors.push((name("bias"), b.bias.clone()));
            }
            Layer::MLconv(b) => {
                let n = b.filters.len();
                let [d, _, c] = b.filters[0].dims();
                let r = b.filters[0].rank();
                let stack = |mode: usize, ik: usize| {
                    let mut t = Tensor::zeros(&[n, ik, r]);
                    for (fi, f) in b.filters.iter().enumerate() {
                        let src = f.factor(mode).data();
                        t.data_mut()[fi * ik * r..(fi + 1) * ik * r].copy_from_slice(src);
                    }
                    t
                };
                tensors.push((name("w1"), stack(0, d)));
                tensors.push((name("w2"), stack(1, d)));
                tensors.push((name("w3"), stack(2, c)));
                tensors.push((name("bias"), b.bias.clone()));
            }
            Layer::LRConv(b) => {
                tensors.push((name("vertical"), b.vertical.clone()));
                tensors.push((name("horizontal"), b.horizontal.clone()));
                tensors.push((name("bias"), b.bias.clone()));
            }
            Layer::BatchNorm(b) => {
                tensors.push((name("gamma"), b.gamma.clone()));
                tensors.push((name("beta"), b.beta.clone()));
                tensors.push((name("running_mean"), b.running_mean.clone()));
                tensors.push((name("running_var"), b.running_var.clone()));
            }
            _ => {}
        }
    }
    Checkpoint { meta, tensors }
}

/// Rebuild a network from a config plus a checkpoint produced by
/// [`checkpoint_from_network`] for the same architecture.
pub fn network_from_checkpoint(
    ckpt: &Checkpoint,
    cfg: &super::config::ModelConfig,
) -> Result<Network<f32>, DataError> {
    let mut net = cfg.build_network::<f32>()?;
    let missing = |n: &str| DataError::Checkpoint(format!("missing tensor `{n}`"));
    let take = |n: String, shape: &[usize]| -> Result<Tensor<f32>, DataError> {
        let t = ckpt.tensor(&n).ok_or_else(|| missing(&n))?;
        if t.shape() != shape {
            return Err(DataError::Checkpoint(format!(
                "tensor `{n}` has shape {:?}, model expects {:?}",
                t.shape(),
                shape
            )));
        }
        Ok(t.clone())
    };
    for (i, layer) in net.layers.iter_mut().enumerate() {
        let name = |field: &str| format!("layer{i}.{field}");
        match layer {
            Layer::Conv(b) => {
                b.weights = take(name("weight"), b.weights.shape())?;
                b.bias = take(name("bias"), b.bias.shape())?;
            }
            Layer::MLconv(b) => {
                let n = b.filters.len();
                let [d, _, c] = b.filters[0].dims();
                let r = b.filters[0].rank();
                let w1 = take(name("w1"), &[n, d, r])?;
                let w2 = take(name("w2"), &[n, d, r])?;
                let w3 = take(name("w3"), &[n, c, r])?;
                let unstack = |t: &Tensor<f32>, ik: usize, fi: usize| {
                    Tensor::from_vec(&[ik, r], t.data()[fi * ik * r..(fi + 1) * ik * r].to_vec())
                        .expect("factor shape")
                };
                for fi in 0..n {
                    b.filters[fi] = KruskalFactors::new([
                        unstack(&w1, d, fi),
                        unstack(&w2, d, fi),
                        unstack(&w3, c, fi),
                    ])
                    .map_err(|e| DataError::Checkpoint(e.to_string()))?;
                }
                b.bias = take(name("bias"), b.bias.shape())?;
            }
            Layer::LRConv(b) => {
                b.vertical = take(name("vertical"), b.vertical.shape())?;
                b.horizontal = take(name("horizontal"), b.horizontal.shape())?;
                b.bias = take(name("bias"), b.bias.shape())?;
            }
            Layer::BatchNorm(b) => {
                b.gamma = take(name("gamma"), b.gamma.shape())?;
                b.beta = take(name("beta"), b.beta.shape())?;
                b.running_mean = take(name("running_mean"), b.running_mean.shape())?;
                b.running_var = take(name("running_var"), b.running_var.shape())?;
            }
            _ => {}
        }
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::config::parse_model_config;

    fn sample_checkpoint() -> Checkpoint {
        let mut meta = BTreeMap::new();
        meta.insert("epoch".into(), "3".into());
        meta.insert("seed".into(), "42".into());
        Checkpoint {
            meta,
            tensors: vec![
                (
                    "layer0.weight".into(),
                    Tensor::from_vec(&[2, 2], vec![1.0, -2.5, 0.25, 1e-7]).unwrap(),
                ),
                ("layer0.bias".into(), Tensor::from_vec(&[2], vec![0.0, 9.5]).unwrap()),
            ],
        }
    }

    #[test]
    fn save_load_save_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.mlcv");
        let p2 = dir.path().join("b.mlcv");
        let ckpt = sample_checkpoint();
        save_checkpoint(&ckpt, &p1).unwrap();
        let loaded = load_checkpoint(&p1).unwrap();
        assert_eq!(loaded, ckpt);
        save_checkpoint(&loaded, &p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn corrupted_magic_and_checksum_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("c.mlcv");
        save_checkpoint(&sample_checkpoint(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        bytes[0] = b'X';
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(DataError::Checkpoint(_))));

        save_checkpoint(&sample_checkpoint(), &p).unwrap();
        let mut bytes = std::fs::read(&p).unwrap();
        let mid = bytes.len() / 2;
        bytes[mid] ^= 0xff;
        std::fs::write(&p, &bytes).unwrap();
        assert!(matches!(load_checkpoint(&p), Err(DataError::Checkpoint(_))));
    }

    #[test]
    fn network_roundtrip_preserves_every_tensor() {
        let cfg = parse_model_config(
            "input 8 8 3\nmlconv 3 4 rank=2 scheme=1\nbn\nlrelu 0.2\nlrconv 3 4 k=2\nconv 1 2\ngap\nsoftmax\nclasses 2\n",
        )
        .unwrap();
        let net = cfg.build_seeded_network::<f32>(11).unwrap();
        let ckpt = checkpoint_from_network(&net, BTreeMap::new());
        let rebuilt = network_from_checkpoint(&ckpt, &cfg).unwrap();
        let ckpt2 = checkpoint_from_network(&rebuilt, BTreeMap::new());
        assert_eq!(ckpt.tensors, ckpt2.tensors);
        assert_eq!(ckpt.tensors.len(), 4 + 4 + 3 + 2);
    }
}
