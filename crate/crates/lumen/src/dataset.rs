//! Paired low/high/depth datasets laid out as
//! `<root>/<split>/{low,high,depth}/<stem>.png`.

use std::collections::BTreeMap;
use std::fmt;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

/// Optional marker file in `depth/` naming the depth orientation of the
/// files next to it (for example `depth` or `inverse-depth`).
pub const ORIENTATION_FILE: &str = "ORIENTATION";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn dir(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.dir())
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Record {
    pub stem: String,
    pub low: PathBuf,
    pub high: PathBuf,
    pub depth: Option<PathBuf>,
}

#[derive(Clone, Debug)]
pub struct DatasetIndex {
    pub root: PathBuf,
    pub split: Split,
    /// Sorted by stem.
    pub records: Vec<Record>,
    pub depth_orientation: Option<String>,
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let is_png = path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"));
        if let (true, Some(stem)) = (is_png, path.file_stem().and_then(|s| s.to_str())) {
            out.insert(stem.to_string(), path.clone());
        }
    }
    Ok(out)
}

impl DatasetIndex {
    pub fn load(root: &Path, split: Split) -> Result<Self> {
        let base = root.join(split.dir());
        let (low_dir, high_dir, depth_dir) = (base.join("low"), base.join("high"), base.join("depth"));
        for dir in [&low_dir, &high_dir] {
            if !dir.is_dir() {
                return Err(Error::Dataset(format!("missing directory {}", dir.display())));
            }
        }
        let low = png_stems(&low_dir)?;
        let mut high = png_stems(&high_dir)?;
        let mut depth = png_stems(&depth_dir)?;
        let mut problems = Vec::new();
        let mut records = Vec::new();
        for (stem, low_path) in low {
            match high.remove(&stem) {
                Some(high_path) => {
                    records.push(Record { depth: depth.remove(&stem), stem, low: low_path, high: high_path })
                }
                None => {
                    depth.remove(&stem);
                    problems.push(format!("{stem}: low image without high image"));
                }
            }
        }
        problems.extend(high.keys().map(|s| format!("{s}: high image without low image")));
        problems.extend(depth.keys().map(|s| format!("{s}: depth map without image pair")));
        if !problems.is_empty() {
            return Err(Error::Dataset(format!(
                "{} orphan file(s) under {}:\n  {}",
                problems.len(),
                base.display(),
                problems.join("\n  ")
            )));
        }
        if records.is_empty() {
            return Err(Error::Dataset(format!("no image pairs under {}", base.display())));
        }
        let orientation_path = depth_dir.join(ORIENTATION_FILE);
        let depth_orientation = match std::fs::read_to_string(&orientation_path) {
            Ok(s) => Some(s.trim().to_string()),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => None,
            Err(e) => return Err(Error::io(&orientation_path, e)),
        };
        Ok(DatasetIndex { root: root.to_path_buf(), split, records, depth_orientation })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Errors listing every record without a depth map.
    pub fn require_depth(&self) -> Result<()> {
        let missing: Vec<&str> =
            self.records.iter().filter(|r| r.depth.is_none()).map(|r| r.stem.as_str()).collect();
        if missing.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "depth supervision is enabled but {} record(s) of {}/{} have no depth map: {}",
                missing.len(),
                self.root.display(),
                self.split,
                missing.join(", ")
            )))
        }
    }
}
