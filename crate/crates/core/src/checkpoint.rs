//! `NGRF` parameter checkpoints.
//!
//! Layout (little-endian): magic `NGRF`, `u32` version, `u32` header length and
//! a UTF-8 `key=value` header (architecture, channel layout, free-form `meta.*`
//! entries), then `u32` tensor count and per tensor: `u32` name length, name,
//! `u32` rank, `u64` dims, `f64` values. Values round-trip bit for bit.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use thiserror::Error;

use crate::graph::{Channel, ChannelLayout};
use crate::model::{ArchConfig, GnnClassifier, ModelError};
use crate::nn::Tensor;

pub const MAGIC: &[u8; 4] = b"NGRF";
pub const VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("not a checkpoint (bad magic)")]
    BadMagic,
    #[error("checkpoint version {found}, expected {expected}")]
    Version { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after the last tensor")]
    TrailingBytes(usize),
    #[error("bad header: {0}")]
    Header(String),
    #[error("checkpoint lacks tensor `{0}`")]
    MissingTensor(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub arch: ArchConfig,
    pub layout: ChannelLayout,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

fn arch_entries(a: &ArchConfig) -> Vec<(&'static str, String)> {
    vec![
        ("arch.n_times", a.n_times.to_string()),
        ("arch.kernel_size", a.kernel_size.to_string()),
        ("arch.filters", a.filters.to_string()),
        ("arch.cheb_out", a.cheb_out.to_string()),
        ("arch.cheb_order", a.cheb_order.to_string()),
        ("arch.pool_window", a.pool_window.to_string()),
        ("arch.dropout", a.dropout.to_string()),
        ("arch.edge_dropout", a.edge_dropout.to_string()),
        ("arch.radius_fraction", a.radius_fraction.to_string()),
        ("arch.bn_eps", a.bn_eps.to_string()),
        ("arch.bn_momentum", a.bn_momentum.to_string()),
        ("arch.prelu_init", a.prelu_init.to_string()),
        ("arch.freeze_batchnorm", a.freeze_batchnorm.to_string()),
    ]
}

fn parse_arch(h: &BTreeMap<String, String>) -> Result<ArchConfig, CheckpointError> {
    fn get<T: std::str::FromStr>(h: &BTreeMap<String, String>, k: &str) -> Result<T, CheckpointError> {
        h.get(k)
            .ok_or_else(|| CheckpointError::Header(format!("missing `{k}`")))?
            .parse()
            .map_err(|_| CheckpointError::Header(format!("bad value for `{k}`")))
    }
    Ok(ArchConfig {
        n_times: get(h, "arch.n_times")?,
        kernel_size: get(h, "arch.kernel_size")?,
        filters: get(h, "arch.filters")?,
        cheb_out: get(h, "arch.cheb_out")?,
        cheb_order: get(h, "arch.cheb_order")?,
        pool_window: get(h, "arch.pool_window")?,
        dropout: get(h, "arch.dropout")?,
        edge_dropout: get(h, "arch.edge_dropout")?,
        radius_fraction: get(h, "arch.radius_fraction")?,
        bn_eps: get(h, "arch.bn_eps")?,
        bn_momentum: get(h, "arch.bn_momentum")?,
        prelu_init: get(h, "arch.prelu_init")?,
        freeze_batchnorm: get(h, "arch.freeze_batchnorm")?,
    })
}

impl Checkpoint {
    pub fn of(model: &GnnClassifier, meta: BTreeMap<String, String>) -> Self {
        Self {
            arch: model.config.clone(),
            layout: model.layout().clone(),
            meta,
            tensors: model.named_tensors().into_iter().map(|(n, t)| (n, t.clone())).collect(),
        }
    }

    fn header(&self) -> String {
        let mut out = String::new();
        for (k, v) in arch_entries(&self.arch) {
            out += &format!("{k}={v}\n");
        }
        out += &format!("layout.head_radius={}\n", self.layout.head_radius());
        for (i, ch) in self.layout.channels().iter().enumerate() {
            out += &format!("layout.channel.{i}={} {} {} {}\n", ch.name, ch.pos[0], ch.pos[1], ch.pos[2]);
        }
        for (k, v) in &self.meta {
            out += &format!("meta.{k}={v}\n");
        }
        out
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let header = self.header();
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(header.as_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for (name, t) in &self.tensors {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
            for &d in t.shape() {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            for v in t.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, CheckpointError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(CheckpointError::BadMagic);
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(CheckpointError::Version { found: version, expected: VERSION });
        }
        let hlen = r.u32("header length")? as usize;
        let header = std::str::from_utf8(r.take(hlen, "header")?)
            .map_err(|_| CheckpointError::Header("not UTF-8".into()))?;
        let mut h = BTreeMap::new();
        for line in header.lines().filter(|l| !l.is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CheckpointError::Header(format!("line `{line}` is not key=value")))?;
            h.insert(k.to_string(), v.to_string());
        }
        let arch = parse_arch(&h)?;
        let layout = parse_layout(&h)?;
        let meta = h
            .iter()
            .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
            .collect();
        let count = r.u32("tensor count")?;
        let mut tensors = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let nlen = r.u32("tensor name length")? as usize;
            let name = String::from_utf8(r.take(nlen, "tensor name")?.to_vec())
                .map_err(|_| CheckpointError::Header("tensor name not UTF-8".into()))?;
            let rank = r.u32("tensor rank")? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64("tensor dims")? as usize);
            }
            let n: usize = shape.iter().product();
            let raw = r.take(n.checked_mul(8).ok_or(CheckpointError::Truncated("tensor data"))?, "tensor data")?;
            let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect();
            tensors.push((name, Tensor::new(shape, data).expect("sized from shape")));
        }
        if r.pos != bytes.len() {
            return Err(CheckpointError::TrailingBytes(bytes.len() - r.pos));
        }
        Ok(Self { arch, layout, meta, tensors })
    }

    /// Rebuilds the model; every persistent tensor must be present.
    pub fn into_model(self) -> Result<GnnClassifier, CheckpointError> {
        let mut model = GnnClassifier::new(self.arch, &self.layout, 0)?;
        let names: Vec<String> = model.named_tensors().into_iter().map(|(n, _)| n).collect();
        for want in &names {
            if !self.tensors.iter().any(|(n, _)| n == want) {
                return Err(CheckpointError::MissingTensor(want.clone()));
            }
        }
        for (name, t) in self.tensors {
            model.set_tensor(&name, t)?;
        }
        Ok(model)
    }
}

fn parse_layout(h: &BTreeMap<String, String>) -> Result<ChannelLayout, CheckpointError> {
    let bad = |m: String| CheckpointError::Header(m);
    let radius = h
        .get("layout.head_radius")
        .ok_or_else(|| bad("missing `layout.head_radius`".into()))?
        .parse::<f64>()
        .map_err(|_| bad("bad head radius".into()))?;
    let mut channels = Vec::new();
    while let Some(line) = h.get(&format!("layout.channel.{}", channels.len())) {
        let f: Vec<&str> = line.split(' ').collect();
        if f.len() != 4 {
            return Err(bad(format!("channel entry `{line}`")));
        }
        let mut pos = [0.0; 3];
        for (p, s) in pos.iter_mut().zip(&f[1..]) {
            *p = s.parse().map_err(|_| bad(format!("channel entry `{line}`")))?;
        }
        channels.push(Channel { name: f[0].to_string(), pos });
    }
    ChannelLayout::new(channels, Some(radius)).map_err(|e| bad(e.to_string()))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &'static str) -> Result<&'a [u8], CheckpointError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or(CheckpointError::Truncated(what))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self, what: &'static str) -> Result<u32, CheckpointError> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self, what: &'static str) -> Result<u64, CheckpointError> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().expect("8 bytes")))
    }
}

pub fn save_model(
    model: &GnnClassifier,
    meta: BTreeMap<String, String>,
    path: impl AsRef<Path>,
) -> Result<(), CheckpointError> {
    fs::write(path, Checkpoint::of(model, meta).to_bytes())?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint, CheckpointError> {
    Checkpoint::from_bytes(&fs::read(path)?)
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GnnClassifier, CheckpointError> {
    load_checkpoint(path)?.into_model()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn model() -> GnnClassifier {
        let cfg = ArchConfig { n_times: 16, kernel_size: 4, filters: 2, cheb_out: 3, ..ArchConfig::default() };
        let mut m = GnnClassifier::new(cfg, &ChannelLayout::standard_12(), 9).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        m.bn.running_mean = Tensor::uniform(&[2], 1.0 / 3.0, &mut rng);
        m
    }

    #[test]
    fn bit_exact_round_trip() {
        let m = model();
        let meta = BTreeMap::from([("epoch".to_string(), "10".to_string())]);
        let ck = Checkpoint::of(&m, meta.clone());
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        assert_eq!(back, ck);
        assert_eq!(back.to_bytes(), bytes);
        let restored = back.into_model().unwrap();
        assert_eq!(restored.checksum(), m.checksum());
        assert_eq!(restored.config, m.config);
        assert_eq!(restored.graph(), m.graph());
    }

    #[test]
    fn corruption_is_diagnosed() {
        let bytes = Checkpoint::of(&model(), BTreeMap::new()).to_bytes();
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::BadMagic)));
        let mut bad = bytes.clone();
        bad[4] = 9;
        assert!(matches!(Checkpoint::from_bytes(&bad), Err(CheckpointError::Version { found: 9, .. })));
        assert!(matches!(
            Checkpoint::from_bytes(&bytes[..bytes.len() - 3]),
            Err(CheckpointError::Truncated("tensor data"))
        ));
        let mut long = bytes.clone();
        long.push(0);
        assert!(matches!(Checkpoint::from_bytes(&long), Err(CheckpointError::TrailingBytes(1))));
    }

    #[test]
    fn missing_tensor_rejected() {
        let mut ck = Checkpoint::of(&model(), BTreeMap::new());
        ck.tensors.retain(|(n, _)| n != "cheb.theta");
        assert!(matches!(ck.into_model(), Err(CheckpointError::MissingTensor(n)) if n == "cheb.theta"));
    }
}
