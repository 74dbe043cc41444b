//! Binary checkpoints, all integers and floats little-endian:
//!
//! ```text
//! "LUMN" | u32 version = 1 | u64 step | u64 seed
//! then one record per parameter, until end of file:
//! u32 name_len | name (UTF-8) | u8 dtype (1 = f32, 2 = f64) | u32 rank | u64 dims[rank] | payload
//! ```
//!
//! Ladder widths and the cluster count are read back from parameter shapes.
//! Settings that no shape reveals (attention heads, pooling, temperature,
//! flash constants) are stored as rank-0 `f64` records named `meta.*`.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use lumen_core::enhancer::{LumenConfig, LumenModel};
use lumen_core::fusion::NormPlacement;
use lumen_core::{DType, ParamStore, Real, RngStream, Tensor};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LUMN";
pub const VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Header {
    pub step: u64,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct Record {
    pub name: String,
    pub dtype: DType,
    pub shape: Vec<usize>,
    /// Values widened to `f64` (lossless for both dtypes).
    pub values: Vec<f64>,
}

pub const META_PREFIX: &str = "meta.";

const META_KEYS: [&str; 11] = [
    "tau", "heads", "pool", "dropout", "fuse_gamma", "norm", "depth_detach", "flash_alpha", "flash_beta",
    "flash_gamma", "flash_eps",
];

/// Shape-independent settings of `cfg`, in record order.
pub fn meta_values(cfg: &LumenConfig) -> [(&'static str, f64); 11] {
    let e = &cfg.efb;
    let values = [
        cfg.tau,
        e.heads as f64,
        e.pool as f64,
        e.dropout,
        e.gamma,
        match e.norm {
            NormPlacement::Literal => 0.0,
            NormPlacement::PreNorm => 1.0,
        },
        cfg.depth_detach as u8 as f64,
        cfg.flash.alpha,
        cfg.flash.beta,
        cfg.flash.gamma,
        cfg.flash.eps,
    ];
    core::array::from_fn(|i| (META_KEYS[i], values[i]))
}

fn apply_meta(cfg: &mut LumenConfig, key: &str, v: f64) -> Option<()> {
    let count = |v: f64| (v >= 1.0 && v.fract() == 0.0).then_some(v as usize);
    match key {
        "tau" => cfg.tau = v,
        "heads" => cfg.efb.heads = count(v)?,
        "pool" => cfg.efb.pool = count(v)?,
        "dropout" => cfg.efb.dropout = v,
        "fuse_gamma" => cfg.efb.gamma = v,
        "norm" => {
            cfg.efb.norm = match v {
                0.0 => NormPlacement::Literal,
                1.0 => NormPlacement::PreNorm,
                _ => return None,
            }
        }
        "depth_detach" => cfg.depth_detach = v != 0.0,
        "flash_alpha" => cfg.flash.alpha = v,
        "flash_beta" => cfg.flash.beta = v,
        "flash_gamma" => cfg.flash.gamma = v,
        "flash_eps" => cfg.flash.eps = v,
        _ => return None,
    }
    Some(())
}

fn write_record<W: Write>(w: &mut W, name: &str, dtype: DType, shape: &[usize], values: impl Iterator<Item = f64>) -> std::io::Result<()> {
    w.write_all(&(name.len() as u32).to_le_bytes())?;
    w.write_all(name.as_bytes())?;
    w.write_all(&[dtype.code()])?;
    w.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        w.write_all(&(d as u64).to_le_bytes())?;
    }
    for v in values {
        match dtype {
            DType::F32 => w.write_all(&(v as f32).to_le_bytes())?,
            DType::F64 => w.write_all(&v.to_le_bytes())?,
        }
    }
    Ok(())
}

pub fn write_checkpoint<T: Real, W: Write>(
    mut w: W,
    header: Header,
    cfg: &LumenConfig,
    store: &ParamStore<T>,
) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    w.write_all(&header.step.to_le_bytes())?;
    w.write_all(&header.seed.to_le_bytes())?;
    for (key, v) in meta_values(cfg) {
        write_record(&mut w, &format!("{META_PREFIX}{key}"), DType::F64, &[], std::iter::once(v))?;
    }
    for (_, p) in store.iter() {
        write_record(&mut w, &p.name, T::DTYPE, p.value.shape(), p.value.data().iter().map(|v| v.as_f64()))?;
    }
    w.flush()
}

pub fn save_checkpoint<T: Real>(path: &Path, header: Header, cfg: &LumenConfig, store: &ParamStore<T>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_checkpoint(BufWriter::new(file), header, cfg, store).map_err(|e| Error::io(path, e))
}

/// `Ok(false)` on a clean end of input before the first byte.
fn read_exact_or_eof(r: &mut impl Read, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..])? {
            0 if filled == 0 => return Ok(false),
            0 => return Err(std::io::ErrorKind::UnexpectedEof.into()),
            n => filled += n,
        }
    }
    Ok(true)
}

fn u32_of(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn u64_of(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

pub fn read_checkpoint_from(path: &Path, r: impl Read) -> Result<(Header, Vec<Record>)> {
    let mut r = BufReader::new(r);
    let io = |e| Error::io(path, e);
    let mut magic = [0; 4];
    if !read_exact_or_eof(&mut r, &mut magic).map_err(io)? || &magic != MAGIC {
        return Err(Error::format(path, "not a LUMN checkpoint (bad magic)"));
    }
    let version = u32_of(&mut r).map_err(io)?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported checkpoint version {version}")));
    }
    let header = Header { step: u64_of(&mut r).map_err(io)?, seed: u64_of(&mut r).map_err(io)? };
    let mut records = Vec::new();
    loop {
        let mut len = [0; 4];
        if !read_exact_or_eof(&mut r, &mut len).map_err(io)? {
            break;
        }
        let mut name = vec![0; u32::from_le_bytes(len) as usize];
        r.read_exact(&mut name).map_err(io)?;
        let name = String::from_utf8(name).map_err(|_| Error::format(path, "parameter name is not UTF-8"))?;
        let mut code = [0; 1];
        r.read_exact(&mut code).map_err(io)?;
        let dtype = DType::from_code(code[0])
            .ok_or_else(|| Error::format(path, format!("parameter `{name}`: unknown dtype code {}", code[0])))?;
        let rank = u32_of(&mut r).map_err(io)? as usize;
        let shape = (0..rank).map(|_| u64_of(&mut r).map(|d| d as usize)).collect::<std::io::Result<Vec<_>>>().map_err(io)?;
        let n: usize = shape.iter().product();
        let values = match dtype {
            DType::F32 => {
                let mut buf = vec![0; n * 4];
                r.read_exact(&mut buf).map_err(io)?;
                buf.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect()
            }
            DType::F64 => {
                let mut buf = vec![0; n * 8];
                r.read_exact(&mut buf).map_err(io)?;
                buf.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()
            }
        };
        records.push(Record { name, dtype, shape, values });
    }
    Ok((header, records))
}

pub fn read_checkpoint(path: &Path) -> Result<(Header, Vec<Record>)> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_checkpoint_from(path, file)
}

/// Model rebuilt from a checkpoint together with its parameters.
pub struct Loaded<T> {
    pub header: Header,
    pub model: LumenModel,
    pub store: ParamStore<T>,
}

/// Rebuilds the model whose parameters a checkpoint holds. Every stored
/// name must exist in the model with the same shape, and every model
/// parameter must be stored. `adjust` runs after the stored settings are
/// applied.
pub fn load_model<T: Real>(path: &Path, adjust: impl FnOnce(&mut LumenConfig)) -> Result<Loaded<T>> {
    let (header, records) = read_checkpoint(path)?;
    let (meta, records): (Vec<Record>, Vec<Record>) = records.into_iter().partition(|r| r.name.starts_with(META_PREFIX));
    let mut cfg = LumenConfig::infer(|name| records.iter().find(|r| r.name == name).map(|r| r.shape.clone()))
        .map_err(|e| Error::format(path, e.to_string()))?;
    for r in &meta {
        let key = &r.name[META_PREFIX.len()..];
        let value = match r.values.as_slice() {
            [v] => Some(*v),
            _ => None,
        };
        value
            .and_then(|v| apply_meta(&mut cfg, key, v))
            .ok_or_else(|| Error::format(path, format!("invalid setting record `{}`", r.name)))?;
    }
    adjust(&mut cfg);
    let mut store = ParamStore::<T>::new();
    let model = LumenModel::new(&mut store, &mut RngStream::new(header.seed), cfg)?;
    let mut seen = vec![false; store.len()];
    for r in records {
        let id = store
            .id(&r.name)
            .ok_or_else(|| Error::format(path, format!("unknown parameter `{}` in checkpoint", r.name)))?;
        let want = store.value(id).shape().to_vec();
        if want != r.shape {
            return Err(Error::format(
                path,
                format!("parameter `{}`: checkpoint shape {:?}, model expects {:?}", r.name, r.shape, want),
            ));
        }
        let t = Tensor::new(&r.shape, r.values.into_iter().map(T::lit).collect())?;
        store.set(id, t)?;
        seen[id.index()] = true;
    }
    if let Some(i) = seen.iter().position(|s| !s) {
        let (_, p) = store.iter().nth(i).expect("index in range");
        return Err(Error::format(path, format!("parameter `{}` missing from checkpoint", p.name)));
    }
    Ok(Loaded { header, model, store })
}
