//! On-disk dataset layout: one PGM per sample, `manifest.csv`, and an
//! optional `dataset.json` sidecar carrying charset, seed, spec and checksums.

use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::image::GrayImage;
use super::labels::encode_label;
use crate::capgen::{CaptchaSample, Charset, DistortionSpec, SampleMeta};
use crate::error::{Error, Result};

pub const MANIFEST_FILE: &str = "manifest.csv";
pub const SIDECAR_FILE: &str = "dataset.json";
pub const MANIFEST_HEADER: [&str; 10] = [
    "id", "label", "file", "rot1", "rot2", "rot3", "rot4", "rot5", "pepper_density", "gray_level",
];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub charset: Charset,
    pub seed: Option<u64>,
    pub spec: Option<DistortionSpec>,
    pub samples: Vec<CaptchaSample>,
}

impl Dataset {
    pub fn new(charset: Charset, samples: Vec<CaptchaSample>) -> Self {
        Self { charset, seed: None, spec: None, samples }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Sidecar {
    charset: Charset,
    seed: Option<u64>,
    spec: Option<DistortionSpec>,
    checksums: BTreeMap<String, u32>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Row {
    id: usize,
    label: String,
    file: String,
    rot1: Option<f64>,
    rot2: Option<f64>,
    rot3: Option<f64>,
    rot4: Option<f64>,
    rot5: Option<f64>,
    pepper_density: Option<f64>,
    gray_level: Option<u8>,
}

impl Row {
    fn rotations(&self) -> Result<Option<[f64; 5]>> {
        let r = [self.rot1, self.rot2, self.rot3, self.rot4, self.rot5];
        match r.iter().filter(|v| v.is_some()).count() {
            0 => Ok(None),
            5 => Ok(Some(r.map(Option::unwrap))),
            _ => Err(Error::Validation(format!(
                "sample {}: rotation columns are partially filled",
                self.id
            ))),
        }
    }
}

pub fn image_file_name(id: usize) -> String {
    format!("{id:06}.pgm")
}

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Images first, then the sidecar, then the manifest.
pub fn save_dataset(dataset: &Dataset, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut checksums = BTreeMap::new();
    let mut rows = Vec::with_capacity(dataset.len());
    for s in &dataset.samples {
        let file = image_file_name(s.id);
        let pgm = s.image.to_pgm();
        checksums.insert(file.clone(), crc32fast::hash(&pgm));
        write(&dir.join(&file), &pgm)?;
        let rot = s.meta.rotations.map(|r| r.map(Some)).unwrap_or([None; 5]);
        rows.push(Row {
            id: s.id,
            label: s.label.clone(),
            file,
            rot1: rot[0],
            rot2: rot[1],
            rot3: rot[2],
            rot4: rot[3],
            rot5: rot[4],
            pepper_density: s.meta.pepper_density,
            gray_level: s.meta.gray_level,
        });
    }

    let sidecar = Sidecar {
        charset: dataset.charset.clone(),
        seed: dataset.seed,
        spec: dataset.spec,
        checksums,
    };
    let mut json = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    json.push('\n');
    write(&dir.join(SIDECAR_FILE), json)?;

    let manifest = dir.join(MANIFEST_FILE);
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(Vec::new());
    let fail = |e: csv::Error| Error::MalformedManifest {
        path: manifest.clone(),
        reason: e.to_string(),
    };
    w.write_record(MANIFEST_HEADER).map_err(fail)?;
    for row in &rows {
        w.serialize(row).map_err(fail)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(&manifest, e.into_error()))?;
    write(&manifest, bytes)
}

pub fn load_dataset(dir: impl AsRef<Path>) -> Result<Dataset> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::io(
            dir,
            std::io::Error::new(std::io::ErrorKind::NotFound, "dataset directory not found"),
        ));
    }
    let sidecar_path = dir.join(SIDECAR_FILE);
    let sidecar: Option<Sidecar> = if sidecar_path.exists() {
        let text = fs::read_to_string(&sidecar_path).map_err(|e| Error::io(&sidecar_path, e))?;
        Some(serde_json::from_str(&text).map_err(|e| Error::MalformedManifest {
            path: sidecar_path.clone(),
            reason: e.to_string(),
        })?)
    } else {
        None
    };
    let charset = sidecar.as_ref().map(|s| s.charset.clone()).unwrap_or_default();

    let manifest = dir.join(MANIFEST_FILE);
    let malformed = |reason: String| Error::MalformedManifest {
        path: manifest.clone(),
        reason,
    };
    let bytes = fs::read(&manifest).map_err(|e| Error::io(&manifest, e))?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(&bytes[..]);
    let header = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    if header.iter().ne(MANIFEST_HEADER) {
        return Err(malformed(format!("unexpected header {:?}", header.iter().collect::<Vec<_>>())));
    }

    let mut ids = HashSet::new();
    let mut samples = Vec::new();
    for row in reader.deserialize::<Row>() {
        let row = row.map_err(|e| malformed(e.to_string()))?;
        if !ids.insert(row.id) {
            return Err(malformed(format!("duplicate id {}", row.id)));
        }
        encode_label(&row.label, &charset).map_err(|e| {
            Error::Validation(format!("sample {}: label {:?} does not fit charset {charset}: {e}", row.id, row.label))
        })?;
        let path = dir.join(&row.file);
        if !path.is_file() {
            return Err(Error::MissingFile { id: row.id.to_string(), path });
        }
        let pgm = fs::read(&path).map_err(|e| Error::io(&path, e))?;
        if let Some(expected) = sidecar.as_ref().and_then(|s| s.checksums.get(&row.file)) {
            let found = crc32fast::hash(&pgm);
            if found != *expected {
                return Err(Error::ChecksumMismatch {
                    id: row.id.to_string(),
                    expected: *expected,
                    found,
                });
            }
        }
        let image = GrayImage::from_pgm(&pgm)
            .map_err(|e| Error::Corrupt(format!("{}: {e}", path.display())))?;
        let meta = SampleMeta {
            rotations: row.rotations()?,
            pepper_density: row.pepper_density,
            gray_level: row.gray_level,
        };
        samples.push(CaptchaSample { id: row.id, image, label: row.label, meta });
    }
    if let Some(first) = samples.first() {
        let dims = (first.image.width(), first.image.height());
        if let Some(bad) = samples.iter().find(|s| (s.image.width(), s.image.height()) != dims) {
            return Err(Error::Validation(format!(
                "sample {} is {}x{}, expected {}x{}",
                bad.id,
                bad.image.width(),
                bad.image.height(),
                dims.0,
                dims.1
            )));
        }
    }
    Ok(Dataset {
        charset,
        seed: sidecar.as_ref().and_then(|s| s.seed),
        spec: sidecar.as_ref().and_then(|s| s.spec),
        samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::capgen::generate_dataset;

    fn sample_set(n: usize) -> Dataset {
        let cs = Charset::default();
        let spec = DistortionSpec::default();
        Dataset {
            samples: generate_dataset(n, &cs, &spec, 4).unwrap(),
            charset: cs,
            seed: Some(4),
            spec: Some(spec),
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_set(10);
        save_dataset(&ds, dir.path()).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back, ds);
        for (a, b) in ds.samples.iter().zip(&back.samples) {
            let (ra, rb) = (a.meta.rotations.unwrap(), b.meta.rotations.unwrap());
            assert!(ra.iter().zip(&rb).all(|(x, y)| x.to_bits() == y.to_bits()));
        }
    }

    #[test]
    fn manifest_format() {
        let dir = tempfile::tempdir().unwrap();
        let mut ds = sample_set(2);
        ds.samples[1].meta = SampleMeta::default();
        save_dataset(&ds, dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(MANIFEST_FILE)).unwrap();
        let lines: Vec<&str> = text.split('\n').collect();
        assert_eq!(lines[0], MANIFEST_HEADER.join(","));
        assert!(lines[1].starts_with(&format!("0,{},000000.pgm,", ds.samples[0].label)));
        assert_eq!(lines[2], format!("1,{},000001.pgm,,,,,,,", ds.samples[1].label));
        assert!(!text.contains('\r'));
        assert_eq!(load_dataset(dir.path()).unwrap(), ds);
    }

    #[test]
    fn missing_image_names_id() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(3), dir.path()).unwrap();
        fs::remove_file(dir.path().join("000001.pgm")).unwrap();
        match load_dataset(dir.path()) {
            Err(Error::MissingFile { id, .. }) => assert_eq!(id, "1"),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn label_outside_charset() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(2), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap();
        let mut lines: Vec<String> = text.lines().map(String::from).collect();
        let label = lines[1].split(',').nth(1).unwrap().to_string();
        lines[1] = lines[1].replacen(&label, "AB#CD", 1);
        fs::write(&path, lines.join("\n") + "\n").unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::Validation(_))));
    }

    #[test]
    fn corrupted_image_fails_checksum() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(2), dir.path()).unwrap();
        let path = dir.path().join("000000.pgm");
        let mut bytes = fs::read(&path).unwrap();
        *bytes.last_mut().unwrap() ^= 0xff;
        fs::write(&path, bytes).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::ChecksumMismatch { .. })));
    }

    #[test]
    fn bad_header_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        save_dataset(&sample_set(1), dir.path()).unwrap();
        let path = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).unwrap().replacen("label", "name", 1);
        fs::write(&path, text).unwrap();
        assert!(matches!(load_dataset(dir.path()), Err(Error::MalformedManifest { .. })));
    }

    #[test]
    fn loads_without_sidecar() {
        let dir = tempfile::tempdir().unwrap();
        let ds = sample_set(3);
        save_dataset(&ds, dir.path()).unwrap();
        fs::remove_file(dir.path().join(SIDECAR_FILE)).unwrap();
        let back = load_dataset(dir.path()).unwrap();
        assert_eq!(back.samples, ds.samples);
        assert_eq!(back.seed, None);
    }

    #[test]
    fn missing_directory_is_io() {
        let err = load_dataset("/nonexistent/capnet-data").unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
