//! The dataset directory format.
//!
//! A dataset directory holds a JSON `manifest` and three binary payloads.
//! Every payload starts with the magic `MMTS`, a little-endian `u32` format
//! version and the little-endian `u32` dimensions, followed by row-major
//! little-endian data:
//!
//! | file          | dims      | element |
//! |---------------|-----------|---------|
//! | `values.bin`  | N, T, B   | `f32`   |
//! | `targets.bin` | N         | `f32`   |
//! | `years.bin`   | N         | `u32`   |

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::dataset::TensorDataset;
use crate::data::schema::{Band, FeatureSchema, Task, TimeStep};
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"MMTS";
pub const FORMAT_VERSION: u32 = 1;

pub const MANIFEST_FILE: &str = "manifest";
pub const VALUES_FILE: &str = "values.bin";
pub const TARGETS_FILE: &str = "targets.bin";
pub const YEARS_FILE: &str = "years.bin";

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    format_version: u32,
    task: Task,
    bands: Vec<Band>,
    timesteps: Vec<TimeStep>,
    #[serde(default)]
    class_names: Vec<String>,
}

/// Header length in bytes for a payload with `rank` dimensions.
pub fn header_len(rank: usize) -> usize {
    8 + 4 * rank
}

pub fn encode_f32(dims: &[usize], data: &[f32]) -> Vec<u8> {
    let mut out = header(dims);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn encode_u32(dims: &[usize], data: &[u32]) -> Vec<u8> {
    let mut out = header(dims);
    out.reserve(data.len() * 4);
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

fn header(dims: &[usize]) -> Vec<u8> {
    let mut out = Vec::with_capacity(header_len(dims.len()));
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
    for &d in dims {
        out.extend_from_slice(&(d as u32).to_le_bytes());
    }
    out
}

/// Parses the header of a `rank`-dimensional payload and returns the dims
/// and the raw element words.
fn decode_words(path: &Path, bytes: &[u8], rank: usize) -> Result<(Vec<usize>, Vec<[u8; 4]>)> {
    let bad = |reason: String| Error::Payload {
        path: path.to_path_buf(),
        reason,
    };
    let hlen = header_len(rank);
    if bytes.len() < hlen {
        return Err(bad(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(bad("bad magic bytes".into()));
    }
    let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap());
    let version = word(4);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported format version {version}")));
    }
    let dims: Vec<usize> = (0..rank).map(|k| word(8 + 4 * k) as usize).collect();
    let count: usize = dims.iter().product();
    let body = &bytes[hlen..];
    if body.len() != count * 4 {
        return Err(bad(format!(
            "payload size mismatch: header declares {dims:?} ({count} elements) but file holds {} bytes of data",
            body.len()
        )));
    }
    let words = body
        .chunks_exact(4)
        .map(|c| c.try_into().unwrap())
        .collect();
    Ok((dims, words))
}

pub fn decode_f32(path: &Path, bytes: &[u8], rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let (dims, words) = decode_words(path, bytes, rank)?;
    Ok((dims, words.into_iter().map(f32::from_le_bytes).collect()))
}

pub fn decode_u32(path: &Path, bytes: &[u8], rank: usize) -> Result<(Vec<usize>, Vec<u32>)> {
    let (dims, words) = decode_words(path, bytes, rank)?;
    Ok((dims, words.into_iter().map(u32::from_le_bytes).collect()))
}

pub fn read_f32(path: &Path, rank: usize) -> Result<(Vec<usize>, Vec<f32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_f32(path, &bytes, rank)
}

pub fn read_u32(path: &Path, rank: usize) -> Result<(Vec<usize>, Vec<u32>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_u32(path, &bytes, rank)
}

/// Writes through a hidden sibling and renames, so readers never see a
/// half-written file.
pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp"));
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn save_dataset(d: &TensorDataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    if d.is_empty() {
        return Err(Error::Dataset("empty dataset".into()));
    }
    if d.values.iter().chain(&d.targets).any(|v| !v.is_finite()) {
        return Err(Error::Dataset("refusing to write non-finite values".into()));
    }
    let schema = d.schema();
    let manifest = Manifest {
        format_version: FORMAT_VERSION,
        task: schema.task,
        bands: schema.bands.clone(),
        timesteps: schema.timesteps.clone(),
        class_names: schema.class_names.clone(),
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");

    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let [n, t, b] = d.shape();
    write_file(&dir.join(MANIFEST_FILE), format!("{text}\n").as_bytes())?;
    write_file(&dir.join(VALUES_FILE), &encode_f32(&[n, t, b], d.values()))?;
    write_file(&dir.join(TARGETS_FILE), &encode_f32(&[n], d.targets()))?;
    write_file(&dir.join(YEARS_FILE), &encode_u32(&[n], d.years()))?;
    Ok(())
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<TensorDataset> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let manifest: Manifest = serde_json::from_str(&text).map_err(|e| Error::Manifest {
        path: manifest_path.clone(),
        reason: e.to_string(),
    })?;
    if manifest.format_version != FORMAT_VERSION {
        return Err(Error::Manifest {
            path: manifest_path,
            reason: format!("unsupported format version {}", manifest.format_version),
        });
    }
    let schema = FeatureSchema::new(manifest.bands, manifest.timesteps, manifest.task)?
        .with_class_names(manifest.class_names)?;

    let values_path = dir.join(VALUES_FILE);
    let (dims, values) = read_f32(&values_path, 3)?;
    if dims[1] != schema.n_steps() || dims[2] != schema.n_bands() {
        return Err(Error::Payload {
            path: values_path,
            reason: format!(
                "payload declares T={}, B={} but manifest lists {} steps and {} bands",
                dims[1],
                dims[2],
                schema.n_steps(),
                schema.n_bands()
            ),
        });
    }
    let targets_path = dir.join(TARGETS_FILE);
    let (tdims, targets) = read_f32(&targets_path, 1)?;
    let years_path = dir.join(YEARS_FILE);
    let (ydims, years) = read_u32(&years_path, 1)?;
    if tdims[0] != dims[0] || ydims[0] != dims[0] {
        return Err(Error::Dataset(format!(
            "sample counts disagree: values {}, targets {}, years {}",
            dims[0], tdims[0], ydims[0]
        )));
    }
    TensorDataset::new(schema, values, targets, years)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> TensorDataset {
        let schema = FeatureSchema::indexed(3, 2, Task::Classification { n_classes: 3 }).unwrap();
        let values = (0..24).map(|v| v as f32 * 0.5 - 3.0).collect();
        TensorDataset::new(schema, values, vec![0.0, 1.0, 2.0, 1.0], vec![2019, 2020, 2021, 2021])
            .unwrap()
    }

    #[test]
    fn shape_passes_through() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.shape(), [4, 3, 2]);
        assert_eq!(back, tiny());
    }

    #[test]
    fn values_file_length() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        let len = fs::metadata(dir.path().join(VALUES_FILE)).unwrap().len();
        // magic + version + three dims, then 4·3·2 floats
        assert_eq!(len as usize, 20 + 4 * 4 * 3 * 2);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        let path = dir.path().join(VALUES_FILE);
        let bytes = encode_f32(&[4, 3, 2], &[0.0; 20]);
        fs::write(&path, bytes).unwrap();
        let err = load_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("payload size mismatch"), "{err}");
    }

    #[test]
    fn missing_manifest() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn corrupt_manifest() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join(MANIFEST_FILE), "{ not json").unwrap();
        assert!(matches!(
            load_dataset(dir.path()),
            Err(Error::Manifest { .. })
        ));
    }

    #[test]
    fn manifest_dims_must_match_payload() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        fs::write(dir.path().join(VALUES_FILE), encode_f32(&[4, 2, 3], &[0.0; 24])).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn non_finite_payload_rejected_on_load() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&tiny(), dir.path()).unwrap();
        let mut vals = vec![0.0f32; 24];
        vals[5] = f32::INFINITY;
        fs::write(dir.path().join(VALUES_FILE), encode_f32(&[4, 3, 2], &vals)).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn empty_dataset_not_written() {
        let schema = FeatureSchema::indexed(3, 2, Task::Regression).unwrap();
        let d = TensorDataset::new(schema, vec![], vec![], vec![]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let err = save_dataset(&d, dir.path().join("x")).unwrap_err();
        assert!(err.to_string().contains("empty dataset"));
        assert!(!dir.path().join("x").exists());
    }

    #[test]
    fn nan_rejected_before_write() {
        let mut d = tiny();
        d.values[3] = f32::NAN;
        let dir = tempfile::tempdir().unwrap();
        assert!(save_dataset(&d, dir.path().join("x")).is_err());
        assert!(!dir.path().join("x").exists());
    }
}
