//! On-disk parameter bundles.
//!
//! A bundle is a directory holding `manifest.txt` plus one `SMST` file per
//! tensor in a `tensors/` subdirectory. The manifest is line oriented:
//!
//! ```text
//! format=smsl-params
//! version=1
//! L=3
//! C=8
//! r=4
//! seed=7
//! tensor=cr.w1 path=tensors/cr.w1.smst crc32=1a2b3c4d
//! ...
//! ```
//!
//! Each `crc32` covers the referenced file's full byte content and is
//! verified on load.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::neck::SmslParams;
use crate::tensor::{smst, DType, Scalar, Tensor};

pub const MANIFEST_NAME: &str = "manifest.txt";
pub const TENSOR_DIR: &str = "tensors";

/// Integers recorded next to the tensors.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ParamsMeta {
    pub levels: usize,
    pub channels: usize,
    pub r: usize,
    pub seed: u64,
}

pub fn save_params<E: Scalar>(dir: &Path, params: &SmslParams<E>, meta: &ParamsMeta) -> Result<()> {
    params.validate(meta.levels, meta.channels, meta.r)?;
    let tensor_dir = dir.join(TENSOR_DIR);
    fs::create_dir_all(&tensor_dir)?;
    let mut manifest = String::new();
    manifest.push_str("format=smsl-params\nversion=1\n");
    manifest.push_str(&format!(
        "L={}\nC={}\nr={}\nseed={}\n",
        meta.levels, meta.channels, meta.r, meta.seed
    ));
    for (name, tensor) in params.to_param_set().entries {
        let rel = format!("{TENSOR_DIR}/{name}.smst");
        let bytes = smst::to_bytes(&tensor);
        let crc = crc32fast::hash(&bytes);
        fs::write(dir.join(&rel), &bytes)?;
        manifest.push_str(&format!("tensor={name} path={rel} crc32={crc:08x}\n"));
    }
    fs::write(dir.join(MANIFEST_NAME), manifest)?;
    Ok(())
}

fn parse_kv<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    line.strip_prefix(key)?.strip_prefix('=')
}

struct ManifestEntry {
    name: String,
    path: PathBuf,
    crc: u32,
}

fn read_manifest(dir: &Path) -> Result<(ParamsMeta, Vec<ManifestEntry>)> {
    let path = dir.join(MANIFEST_NAME);
    let text = fs::read_to_string(&path)
        .map_err(|e| Error::Format(format!("cannot read {}: {e}", path.display())))?;
    let mut levels = None;
    let mut channels = None;
    let mut r = None;
    let mut seed = None;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(v) = parse_kv(line, "format") {
            if v != "smsl-params" {
                return Err(Error::Format(format!("unknown manifest format {v}")));
            }
        } else if let Some(v) = parse_kv(line, "version") {
            if v != "1" {
                return Err(Error::Format(format!("unsupported manifest version {v}")));
            }
        } else if let Some(v) = parse_kv(line, "L") {
            levels = v.parse().ok();
        } else if let Some(v) = parse_kv(line, "C") {
            channels = v.parse().ok();
        } else if let Some(v) = parse_kv(line, "r") {
            r = v.parse().ok();
        } else if let Some(v) = parse_kv(line, "seed") {
            seed = v.parse().ok();
        } else if line.starts_with("tensor=") {
            let mut name = None;
            let mut rel = None;
            let mut crc = None;
            for field in line.split_whitespace() {
                if let Some(v) = parse_kv(field, "tensor") {
                    name = Some(v.to_string());
                } else if let Some(v) = parse_kv(field, "path") {
                    rel = Some(v.to_string());
                } else if let Some(v) = parse_kv(field, "crc32") {
                    crc = u32::from_str_radix(v, 16).ok();
                }
            }
            match (name, rel, crc) {
                (Some(name), Some(rel), Some(crc)) => entries.push(ManifestEntry {
                    name,
                    path: dir.join(rel),
                    crc,
                }),
                _ => {
                    return Err(Error::Format(format!(
                        "malformed tensor line {} in manifest",
                        lineno + 1
                    )))
                }
            }
        } else {
            return Err(Error::Format(format!(
                "unrecognized manifest line {}: {line}",
                lineno + 1
            )));
        }
    }
    let meta = ParamsMeta {
        levels: levels.ok_or_else(|| Error::Format("manifest missing L".into()))?,
        channels: channels.ok_or_else(|| Error::Format("manifest missing C".into()))?,
        r: r.ok_or_else(|| Error::Format("manifest missing r".into()))?,
        seed: seed.ok_or_else(|| Error::Format("manifest missing seed".into()))?,
    };
    Ok((meta, entries))
}

/// Element type of a stored bundle, read from its first tensor file.
pub fn peek_params_dtype(dir: &Path) -> Result<DType> {
    let (_, entries) = read_manifest(dir)?;
    let first = entries
        .first()
        .ok_or_else(|| Error::Format("manifest lists no tensors".into()))?;
    smst::peek_file_dtype(&first.path)
}

pub fn load_params<E: Scalar>(dir: &Path) -> Result<(SmslParams<E>, ParamsMeta)> {
    let (meta, entries) = read_manifest(dir)?;
    let mut named: Vec<(String, Tensor<E>)> = Vec::with_capacity(entries.len());
    for entry in entries {
        let bytes = fs::read(&entry.path)
            .map_err(|e| Error::Format(format!("cannot read {}: {e}", entry.path.display())))?;
        let crc = crc32fast::hash(&bytes);
        if crc != entry.crc {
            return Err(Error::Format(format!(
                "checksum mismatch for {}: manifest says {:08x}, file hashes to {crc:08x}",
                entry.name, entry.crc
            )));
        }
        named.push((entry.name, smst::from_bytes(&bytes)?));
    }
    let params = SmslParams::from_param_set(
        &crate::autodiff::gradcheck::ParamSet::new(named),
        meta.levels,
        meta.r,
    )?;
    params.validate(meta.levels, meta.channels, meta.r)?;
    Ok((params, meta))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neck::init::init_params;

    #[test]
    fn save_load_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(3, 4, 2, 11, true).unwrap();
        let meta = ParamsMeta {
            levels: 3,
            channels: 4,
            r: 2,
            seed: 11,
        };
        save_params(dir.path(), &params, &meta).unwrap();
        let (loaded, got_meta) = load_params::<f64>(dir.path()).unwrap();
        assert_eq!(got_meta, meta);
        assert!(loaded.cr.w1.bit_eq(&params.cr.w1));
        assert!(loaded.sfc_local[1].v.bit_eq(&params.sfc_local[1].v));
        assert!(loaded
            .extra_level_convs
            .as_ref()
            .unwrap()
            .1
            .bit_eq(&params.extra_level_convs.as_ref().unwrap().1));
        assert_eq!(peek_params_dtype(dir.path()).unwrap(), DType::F64);
    }

    #[test]
    fn tampered_tensor_fails_the_checksum() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(2, 4, 2, 5, false).unwrap();
        let meta = ParamsMeta {
            levels: 2,
            channels: 4,
            r: 2,
            seed: 5,
        };
        save_params(dir.path(), &params, &meta).unwrap();
        let victim = dir.path().join(TENSOR_DIR).join("cr.w2.smst");
        let mut bytes = fs::read(&victim).unwrap();
        let last = bytes.len() - 1;
        bytes[last] ^= 0x01;
        fs::write(&victim, &bytes).unwrap();
        let err = load_params::<f64>(dir.path()).unwrap_err();
        assert!(err.to_string().contains("checksum"), "{err}");
    }

    #[test]
    fn missing_tensor_is_reported() {
        let dir = tempfile::tempdir().unwrap();
        let params = init_params(2, 4, 2, 5, false).unwrap();
        let meta = ParamsMeta {
            levels: 2,
            channels: 4,
            r: 2,
            seed: 5,
        };
        save_params(dir.path(), &params, &meta).unwrap();
        fs::remove_file(dir.path().join(TENSOR_DIR).join("nonlocal.g.smst")).unwrap();
        assert!(load_params::<f64>(dir.path()).is_err());
    }
}
