//! Precomputed perceptual features (for example from a real VGG-19), one
//! file per image, little-endian:
//!
//! ```text
//! "LFEA" | u32 version = 1
//! then one record per layer, until end of file:
//! u32 layer_index | u32 rank | u64 dims[rank] | f32 payload
//! ```

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use lumen_core::losses::{perceptual_from_features, FeatureExtractor};
use lumen_core::{Graph, Real, Tensor, Var};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"LFEA";
pub const VERSION: u32 = 1;

pub type LayerFeatures = Vec<(usize, Tensor<f32>)>;

pub fn write_features(path: &Path, layers: &[(usize, Tensor<f32>)]) -> Result<()> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let mut body = || -> std::io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&VERSION.to_le_bytes())?;
        for (layer, t) in layers {
            w.write_all(&(*layer as u32).to_le_bytes())?;
            w.write_all(&(t.rank() as u32).to_le_bytes())?;
            for &d in t.shape() {
                w.write_all(&(d as u64).to_le_bytes())?;
            }
            for v in t.data() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        w.flush()
    };
    body().map_err(|e| Error::io(path, e))
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let s = self.bytes.get(self.pos..self.pos + n).ok_or_else(|| Error::format(self.path, "truncated feature file"))?;
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

pub fn read_features(path: &Path) -> Result<LayerFeatures> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file).read_to_end(&mut bytes).map_err(|e| Error::io(path, e))?;
    let mut c = Cursor { bytes: &bytes, pos: 0, path };
    if c.take(4)? != MAGIC {
        return Err(Error::format(path, "not a LFEA feature file (bad magic)"));
    }
    let version = c.u32()?;
    if version != VERSION {
        return Err(Error::format(path, format!("unsupported feature file version {version}")));
    }
    let mut out = Vec::new();
    while c.pos < bytes.len() {
        let layer = c.u32()? as usize;
        let rank = c.u32()? as usize;
        let shape = (0..rank).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let n: usize = shape.iter().product();
        let data = c.take(4 * n)?.chunks_exact(4).map(|b| f32::from_le_bytes(b.try_into().unwrap())).collect();
        out.push((layer, Tensor::new(&shape, data).map_err(|e| Error::format(path, e.to_string()))?));
    }
    Ok(out)
}

/// Perceptual distance between two feature files.
pub fn perceptual_between_files(a: &Path, b: &Path) -> Result<f64> {
    let (fa, fb) = (read_features(a)?, read_features(b)?);
    Ok(perceptual_from_features(&fa, &fb)? as f64)
}

/// Stand-in for externally computed features inside the objective. The
/// features of a changing output image cannot be read from files, so any
/// extraction is a configuration error.
pub struct ExternalExtractor {
    pub layers: Vec<usize>,
}

impl<T: Real> FeatureExtractor<T> for ExternalExtractor {
    fn layers(&self) -> &[usize] {
        &self.layers
    }

    fn extract(&self, _g: &Graph<T>, _image: Var) -> lumen_core::Result<Vec<Var>> {
        Err(lumen_core::Error::Config(
            "the external extractor only compares precomputed feature files; use extractor = frozen-random for \
             training and evaluation"
                .into(),
        ))
    }
}
