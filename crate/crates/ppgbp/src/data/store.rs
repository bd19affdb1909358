//! On-disk formats: per-subject ingest records, the window-sample store and
//! the dataset manifest sidecar. All multi-byte values are little-endian.

use std::collections::BTreeMap;
use std::fs;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{SegmentationScheme, Split, SubjectRecord, WindowSample};
use crate::error::{Error, Result};

/// Magic for per-subject raw PPG+ABP record files.
pub const INGEST_MAGIC: [u8; 4] = *b"PPGR";
/// Magic for window-sample store files.
pub const STORE_MAGIC: [u8; 4] = *b"PPGW";
/// Store header is padded to a fixed 32 bytes.
pub const STORE_HEADER_LEN: u64 = 32;

const FORMAT_VERSION: u16 = 1;

struct CountingReader<R: Read> {
    inner: R,
    offset: u64,
}

impl<R: Read> CountingReader<R> {
    fn new(inner: R) -> Self {
        CountingReader { inner, offset: 0 }
    }

    fn read_exact_at(&mut self, buf: &mut [u8], what: &str) -> Result<()> {
        let at = self.offset;
        self.inner.read_exact(buf).map_err(|e| {
            if e.kind() == std::io::ErrorKind::UnexpectedEof {
                Error::Format {
                    offset: at,
                    message: format!("truncated while reading {what}"),
                }
            } else {
                Error::Io(e)
            }
        })?;
        self.offset += buf.len() as u64;
        Ok(())
    }

    fn read_u16(&mut self, what: &str) -> Result<u16> {
        let mut b = [0u8; 2];
        self.read_exact_at(&mut b, what)?;
        Ok(u16::from_le_bytes(b))
    }

    fn read_u32(&mut self, what: &str) -> Result<u32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(u32::from_le_bytes(b))
    }

    fn read_u64(&mut self, what: &str) -> Result<u64> {
        let mut b = [0u8; 8];
        self.read_exact_at(&mut b, what)?;
        Ok(u64::from_le_bytes(b))
    }

    fn read_f32(&mut self, what: &str) -> Result<f32> {
        let mut b = [0u8; 4];
        self.read_exact_at(&mut b, what)?;
        Ok(f32::from_le_bytes(b))
    }

    fn read_f32_vec(&mut self, n: usize, what: &str) -> Result<Vec<f32>> {
        let mut bytes = vec![0u8; n * 4];
        self.read_exact_at(&mut bytes, what)?;
        Ok(bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect())
    }
}

/// Writes one subject record: magic, version, subject id, fs, n, PPG, ABP.
pub fn write_record(path: &Path, record: &SubjectRecord) -> Result<()> {
    record.validate()?;
    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&INGEST_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&record.subject_id.to_le_bytes())?;
    w.write_all(&(record.fs as f32).to_le_bytes())?;
    w.write_all(&(record.ppg.len() as u64).to_le_bytes())?;
    for &v in &record.ppg {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    for &v in &record.abp {
        w.write_all(&(v as f32).to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

/// Reads one subject record written by [`write_record`].
pub fn read_record(path: &Path) -> Result<SubjectRecord> {
    let file = fs::File::open(path)?;
    let mut r = CountingReader::new(BufReader::new(file));

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "ingest magic")?;
    if magic != INGEST_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad ingest magic {magic:?}, expected \"PPGR\""),
        });
    }
    let version = r.read_u16("ingest version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported ingest version {version}"),
        });
    }
    let subject_id = r.read_u32("subject id")?;
    let fs = r.read_f32("sampling rate")? as f64;
    let n = r.read_u64("sample count")? as usize;
    let ppg = r.read_f32_vec(n, "ppg samples")?;
    let abp = r.read_f32_vec(n, "abp samples")?;

    let record = SubjectRecord {
        subject_id,
        fs,
        ppg: ppg.into_iter().map(f64::from).collect(),
        abp: abp.into_iter().map(f64::from).collect(),
    };
    record.validate()?;
    Ok(record)
}

/// Reads every `*.ppgr` file in a directory, sorted by subject id.
pub fn read_corpus_dir(dir: &Path) -> Result<Vec<SubjectRecord>> {
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().map(|e| e == "ppgr").unwrap_or(false))
        .collect();
    paths.sort();
    let mut records = Vec::with_capacity(paths.len());
    for p in &paths {
        records.push(read_record(p)?);
    }
    records.sort_by_key(|r| r.subject_id);
    Ok(records)
}

/// Writes a window-sample store. All samples must share one window length.
pub fn write_store(path: &Path, samples: &[WindowSample]) -> Result<()> {
    let n_samp = samples.first().map(|s| s.ppg.len()).unwrap_or(625);
    for (i, s) in samples.iter().enumerate() {
        if s.ppg.len() != n_samp {
            return Err(Error::Shape(format!(
                "sample {i} has window length {}, store expects {n_samp}",
                s.ppg.len()
            )));
        }
    }

    let file = fs::File::create(path)?;
    let mut w = BufWriter::new(file);
    w.write_all(&STORE_MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&(n_samp as u32).to_le_bytes())?;
    w.write_all(&(samples.len() as u64).to_le_bytes())?;
    w.write_all(&[0u8; 14])?; // reserved padding up to the 32-byte header

    for s in samples {
        w.write_all(&s.subject_id.to_le_bytes())?;
        w.write_all(&s.window_index.to_le_bytes())?;
        w.write_all(&s.sbp.to_le_bytes())?;
        w.write_all(&s.hr.to_le_bytes())?;
        w.write_all(&s.snr.to_le_bytes())?;
        for &v in &s.ppg {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Reads a window-sample store written by [`write_store`].
pub fn read_store(path: &Path) -> Result<Vec<WindowSample>> {
    let file = fs::File::open(path)?;
    let mut r = CountingReader::new(BufReader::new(file));

    let mut magic = [0u8; 4];
    r.read_exact_at(&mut magic, "store magic")?;
    if magic != STORE_MAGIC {
        return Err(Error::Format {
            offset: 0,
            message: format!("bad store magic {magic:?}, expected \"PPGW\""),
        });
    }
    let version = r.read_u16("store version")?;
    if version != FORMAT_VERSION {
        return Err(Error::Format {
            offset: 4,
            message: format!("unsupported store version {version}"),
        });
    }
    let n_samp = r.read_u32("window length")? as usize;
    let n_records = r.read_u64("record count")? as usize;
    let mut reserved = [0u8; 14];
    r.read_exact_at(&mut reserved, "reserved header bytes")?;

    let mut samples = Vec::with_capacity(n_records);
    for _ in 0..n_records {
        let subject_id = r.read_u32("subject id")?;
        let window_index = r.read_u32("window index")?;
        let sbp = r.read_f32("sbp")?;
        let hr = r.read_f32("hr")?;
        let snr = r.read_f32("snr")?;
        let ppg = r.read_f32_vec(n_samp, "window samples")?;
        samples.push(WindowSample {
            subject_id,
            window_index,
            sbp,
            hr,
            snr,
            ppg,
        });
    }
    Ok(samples)
}

/// Sidecar describing how a balanced dataset was built. Serialized as JSON
/// next to the store file (`<store>.manifest.json`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub scheme: SegmentationScheme,
    pub per_bin_quota: usize,
    pub min_windows: usize,
    pub seed: u64,
    pub split_fractions: (f64, f64, f64),
    pub split: BTreeMap<u32, Split>,
}

pub fn manifest_path(store_path: &Path) -> std::path::PathBuf {
    let mut os = store_path.as_os_str().to_owned();
    os.push(".manifest.json");
    std::path::PathBuf::from(os)
}

pub fn write_manifest(store_path: &Path, manifest: &DatasetManifest) -> Result<()> {
    let json = serde_json::to_string_pretty(manifest)
        .map_err(|e| Error::Config(format!("manifest serialization failed: {e}")))?;
    fs::write(manifest_path(store_path), json + "\n")?;
    Ok(())
}

pub fn read_manifest(store_path: &Path) -> Result<DatasetManifest> {
    let path = manifest_path(store_path);
    let text = fs::read_to_string(&path)?;
    serde_json::from_str(&text).map_err(|e| Error::Format {
        offset: 0,
        message: format!("invalid manifest {}: {e}", path.display()),
    })
}

/// Writes a balanced dataset: the sample store plus its manifest sidecar.
pub fn save_dataset(
    store_path: &Path,
    dataset: &crate::data::BalancedDataset,
    min_windows: usize,
    seed: u64,
    split_fractions: (f64, f64, f64),
) -> Result<()> {
    write_store(store_path, &dataset.samples)?;
    write_manifest(
        store_path,
        &DatasetManifest {
            scheme: dataset.scheme.clone(),
            per_bin_quota: dataset.per_bin_quota,
            min_windows,
            seed,
            split_fractions,
            split: dataset.split_assignment.clone(),
        },
    )
}

/// Loads a balanced dataset from its store and manifest, re-validating the
/// balance identity.
pub fn load_dataset(store_path: &Path) -> Result<crate::data::BalancedDataset> {
    let samples = read_store(store_path)?;
    let manifest = read_manifest(store_path)?;
    manifest.scheme.validate()?;
    let dataset = crate::data::BalancedDataset {
        scheme: manifest.scheme,
        per_bin_quota: manifest.per_bin_quota,
        samples,
        split_assignment: manifest.split,
    };
    dataset.validate()?;
    Ok(dataset)
}
