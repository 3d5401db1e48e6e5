//! Level-set directory layout: `level_<l>.smst` per level plus a
//! `levels.txt` manifest.
//!
//! ```text
//! l_min=3
//! l_max=5
//! C=8
//! size_3=16x16
//! size_4=8x8
//! size_5=4x4
//! ```

use std::fs;
use std::path::Path;

use smsl_core::neck::LevelSet;
use smsl_core::tensor::smst;
use smsl_core::{DType, Error, Result, Scalar};

pub const LEVELS_MANIFEST: &str = "levels.txt";

pub fn level_file(l: usize) -> String {
    format!("level_{l}.smst")
}

pub fn save_levels<E: Scalar>(dir: &Path, levels: &LevelSet<E>) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut manifest = format!(
        "l_min={}\nl_max={}\nC={}\n",
        levels.l_min(),
        levels.l_max(),
        levels.channels()
    );
    for (l, feature) in levels.levels() {
        let s = feature.shape3()?;
        manifest.push_str(&format!("size_{l}={}x{}\n", s.h, s.w));
        smst::write_file(&dir.join(level_file(l)), feature)?;
    }
    fs::write(dir.join(LEVELS_MANIFEST), manifest)?;
    Ok(())
}

struct LevelsMeta {
    l_min: usize,
    l_max: usize,
    channels: usize,
    sizes: Vec<(usize, usize)>,
}

fn read_levels_meta(dir: &Path) -> Result<LevelsMeta> {
    let path = dir.join(LEVELS_MANIFEST);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let mut l_min = None;
    let mut l_max = None;
    let mut channels = None;
    let mut sizes = Vec::new();
    for line in text.lines().map(str::trim).filter(|l| !l.is_empty()) {
        let Some((key, value)) = line.split_once('=') else {
            return Err(Error::Format(format!("malformed levels line: {line}")));
        };
        match key {
            "l_min" => l_min = value.parse().ok(),
            "l_max" => l_max = value.parse().ok(),
            "C" => channels = value.parse().ok(),
            _ if key.starts_with("size_") => {
                let (h, w) = value
                    .split_once('x')
                    .and_then(|(h, w)| Some((h.parse().ok()?, w.parse().ok()?)))
                    .ok_or_else(|| Error::Format(format!("malformed size line: {line}")))?;
                sizes.push((h, w));
            }
            _ => return Err(Error::Format(format!("unrecognized levels key: {key}"))),
        }
    }
    Ok(LevelsMeta {
        l_min: l_min.ok_or_else(|| Error::Format("levels.txt missing l_min".into()))?,
        l_max: l_max.ok_or_else(|| Error::Format("levels.txt missing l_max".into()))?,
        channels: channels.ok_or_else(|| Error::Format("levels.txt missing C".into()))?,
        sizes,
    })
}

fn load_typed<E: Scalar>(dir: &Path, meta: &LevelsMeta) -> Result<LevelSet<E>> {
    let mut features = Vec::new();
    for (i, l) in (meta.l_min..=meta.l_max).enumerate() {
        let tensor = smst::read_file::<E>(&dir.join(level_file(l)))?;
        let s = tensor.shape3()?;
        if s.c != meta.channels {
            return Err(Error::Format(format!(
                "level {l} has {} channels, levels.txt says {}",
                s.c, meta.channels
            )));
        }
        if let Some(&(h, w)) = meta.sizes.get(i) {
            if (s.h, s.w) != (h, w) {
                return Err(Error::Format(format!(
                    "level {l} is {}x{}, levels.txt says {h}x{w}",
                    s.h, s.w
                )));
            }
        }
        features.push(tensor);
    }
    LevelSet::new(meta.l_min, features)
}

/// A loaded level set in whichever element type the files carry.
pub enum AnyLevels {
    F32(LevelSet<f32>),
    F64(LevelSet<f64>),
}

impl AnyLevels {
    pub fn dtype(&self) -> DType {
        match self {
            AnyLevels::F32(_) => DType::F32,
            AnyLevels::F64(_) => DType::F64,
        }
    }
}

pub fn load_levels(dir: &Path) -> Result<AnyLevels> {
    let meta = read_levels_meta(dir)?;
    let dtype = smst::peek_file_dtype(&dir.join(level_file(meta.l_min)))?;
    Ok(match dtype {
        DType::F32 => AnyLevels::F32(load_typed(dir, &meta)?),
        DType::F64 => AnyLevels::F64(load_typed(dir, &meta)?),
    })
}
