//! On-disk formats: `SPRW1` weight files and `SPRD1` dataset directories.

use crate::gm::{GmSource, GroundMotion};
use crate::nn::Tensor;
use crate::oracle::{BridgeParameters, Dataset, ParameterStatistics, ResponseHistory, Sample, Split, N_PARAMS};
use crate::sprnet::{Model, NetworkConfig, Normalizer};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use thiserror::Error;

pub const WEIGHTS_MAGIC: &[u8; 5] = b"SPRW1";
pub const RECORD_MAGIC: &[u8; 5] = b"SPRD1";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Fs {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{what}: format error at byte {offset}: {msg}")]
    Format { what: String, offset: usize, msg: String },
    #[error("{what}: {msg}")]
    Invalid { what: String, msg: String },
}

fn fs_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Fs { path: path.to_path_buf(), source }
}

/// Writes through a sibling temporary file and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), IoError> {
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.tmp{}", std::process::id()));
    let mut f = fs::File::create(&tmp).map_err(fs_err(&tmp))?;
    f.write_all(bytes).map_err(fs_err(&tmp))?;
    f.sync_all().map_err(fs_err(&tmp))?;
    drop(f);
    fs::rename(&tmp, path).map_err(fs_err(path))
}

struct Reader<'a> {
    what: &'a str,
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn new(what: &'a str, buf: &'a [u8]) -> Self {
        Reader { what, buf, pos: 0 }
    }

    fn fail(&self, msg: impl Into<String>) -> IoError {
        IoError::Format { what: self.what.to_string(), offset: self.pos, msg: msg.into() }
    }

    fn take(&mut self, n: usize, field: &str) -> Result<&'a [u8], IoError> {
        if self.buf.len() - self.pos < n {
            return Err(self.fail(format!(
                "truncated {field}: need {n} bytes, {} remain",
                self.buf.len() - self.pos
            )));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn magic(&mut self, want: &[u8; 5]) -> Result<(), IoError> {
        let got = self.take(5, "magic")?;
        if got != want {
            self.pos = 0;
            return Err(self.fail(format!(
                "bad magic {:?}, expected {:?}",
                String::from_utf8_lossy(got),
                String::from_utf8_lossy(want)
            )));
        }
        Ok(())
    }

    fn u32(&mut self, field: &str) -> Result<u32, IoError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }

    fn f64s(&mut self, n: usize, field: &str) -> Result<Vec<f64>, IoError> {
        let b = self.take(n.checked_mul(8).ok_or_else(|| self.fail("length overflow"))?, field)?;
        Ok(b.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn f32s(&mut self, n: usize, field: &str) -> Result<Vec<f64>, IoError> {
        let b = self.take(n.checked_mul(4).ok_or_else(|| self.fail("length overflow"))?, field)?;
        Ok(b.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect())
    }

    fn string(&mut self, field: &str) -> Result<String, IoError> {
        let n = self.u32(field)? as usize;
        let start = self.pos;
        let b = self.take(n, field)?;
        String::from_utf8(b.to_vec()).map_err(|_| IoError::Format {
            what: self.what.to_string(),
            offset: start,
            msg: format!("{field} is not UTF-8"),
        })
    }

    fn finish(&self) -> Result<(), IoError> {
        if self.pos != self.buf.len() {
            return Err(self.fail(format!("{} trailing bytes", self.buf.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_u32(out: &mut Vec<u8>, v: usize) {
    out.extend_from_slice(&u32::try_from(v).expect("length fits u32").to_le_bytes());
}

fn put_f32s(out: &mut Vec<u8>, v: &[f64]) {
    for x in v {
        out.extend_from_slice(&(*x as f32).to_le_bytes());
    }
}

fn put_str(out: &mut Vec<u8>, s: &str) {
    put_u32(out, s.len());
    out.extend_from_slice(s.as_bytes());
}

#[derive(Serialize, Deserialize)]
struct ModelHeader {
    config: NetworkConfig,
    normalizer: Normalizer,
}

/// Serializes a model: magic, JSON config echo, named `f32` parameter blobs
/// and the frozen mask.
pub fn model_to_bytes(model: &Model) -> Vec<u8> {
    let header = ModelHeader { config: model.config.clone(), normalizer: model.normalizer.clone() };
    let mut out = WEIGHTS_MAGIC.to_vec();
    put_str(&mut out, &serde_json::to_string(&header).expect("serializable header"));
    put_u32(&mut out, model.params.len());
    for (name, t) in model.names.iter().zip(&model.params) {
        put_str(&mut out, name);
        put_u32(&mut out, t.shape().len());
        for d in t.shape() {
            put_u32(&mut out, *d);
        }
        put_f32s(&mut out, t.data());
    }
    put_u32(&mut out, model.frozen.len());
    out.extend(model.frozen.iter().map(|f| u8::from(*f)));
    out
}

pub fn model_from_bytes(what: &str, bytes: &[u8]) -> Result<Model, IoError> {
    let mut r = Reader::new(what, bytes);
    r.magic(WEIGHTS_MAGIC)?;
    let at = r.pos;
    let header: ModelHeader = serde_json::from_str(&r.string("config block")?).map_err(|e| IoError::Format {
        what: what.to_string(),
        offset: at,
        msg: format!("config block: {e}"),
    })?;
    let n = r.u32("parameter count")? as usize;
    let mut params = Vec::with_capacity(n.min(1 << 16));
    for _ in 0..n {
        let name = r.string("parameter name")?;
        let ndim = r.u32("rank")? as usize;
        if ndim > 8 {
            return Err(r.fail(format!("parameter {name}: rank {ndim} too large")));
        }
        let shape: Vec<usize> = (0..ndim).map(|_| r.u32("dimension").map(|d| d as usize)).collect::<Result<_, _>>()?;
        let len = shape.iter().try_fold(1usize, |a, d| a.checked_mul(*d)).ok_or_else(|| r.fail("shape overflow"))?;
        let data = r.f32s(len, &format!("parameter {name}"))?;
        let t = Tensor::new(shape, data).map_err(|e| r.fail(e.to_string()))?;
        params.push((name, t));
    }
    let nf = r.u32("frozen mask length")? as usize;
    let mask = r.take(nf, "frozen mask")?;
    let frozen = mask
        .iter()
        .map(|b| match b {
            0 => Ok(false),
            1 => Ok(true),
            v => Err(r.fail(format!("frozen flag {v} is not 0 or 1"))),
        })
        .collect::<Result<Vec<bool>, _>>()?;
    r.finish()?;
    Model::from_parts(header.config, params, frozen, header.normalizer)
        .map_err(|e| IoError::Invalid { what: what.to_string(), msg: e.to_string() })
}

pub fn save_model(model: &Model, path: &Path) -> Result<(), IoError> {
    write_atomic(path, &model_to_bytes(model))
}

pub fn load_model(path: &Path) -> Result<Model, IoError> {
    let bytes = fs::read(path).map_err(fs_err(path))?;
    model_from_bytes(&path.display().to_string(), &bytes)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordEntry {
    pub file: String,
    pub gm_id: String,
    pub dt: f64,
    pub scale_factor: f64,
    pub source: GmSource,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format: String,
    pub seed: u64,
    pub n_samples: usize,
    pub split: Split,
    pub stats: ParameterStatistics,
    pub records: Vec<RecordEntry>,
}

pub fn record_file_name(i: usize) -> String {
    format!("record_{i:05}.bin")
}

/// One sample as an `SPRD1` record.
pub fn record_to_bytes(s: &Sample) -> Vec<u8> {
    let n = s.gm.accel.len();
    let mut out = RECORD_MAGIC.to_vec();
    for p in s.bridge.to_array() {
        out.extend_from_slice(&p.to_le_bytes());
    }
    put_u32(&mut out, n);
    let r = &s.response;
    for v in [&s.gm.accel, &r.drift_ratio, &r.column_force, &r.bearing_disp, &r.bearing_force] {
        put_f32s(&mut out, v);
    }
    out
}

/// Parses one record; energy channels are rebuilt from force and
/// deformation.
pub fn record_from_bytes(what: &str, bytes: &[u8], entry: &RecordEntry) -> Result<Sample, IoError> {
    let mut r = Reader::new(what, bytes);
    r.magic(RECORD_MAGIC)?;
    let at = r.pos;
    let params = r.f64s(N_PARAMS, "bridge parameters")?;
    let bridge = BridgeParameters::from_slice(&params).map_err(|e| IoError::Format {
        what: what.to_string(),
        offset: at,
        msg: e.to_string(),
    })?;
    let n = r.u32("sequence length")? as usize;
    let gm = r.f32s(n, "gm")?;
    let drift = r.f32s(n, "drift_ratio")?;
    let col_f = r.f32s(n, "column_force")?;
    let brg_d = r.f32s(n, "bearing_disp")?;
    let brg_f = r.f32s(n, "bearing_force")?;
    r.finish()?;
    let response = ResponseHistory::from_channels(entry.dt, drift, col_f, brg_d, brg_f, bridge.H_c);
    let gm = GroundMotion {
        id: entry.gm_id.clone(),
        dt: entry.dt,
        accel: gm,
        scale_factor: entry.scale_factor,
        source: entry.source,
    };
    Ok(Sample { bridge, gm, response })
}

pub fn write_dataset(ds: &Dataset, dir: &Path) -> Result<(), IoError> {
    fs::create_dir_all(dir).map_err(fs_err(dir))?;
    let mut records = Vec::with_capacity(ds.samples.len());
    for (i, s) in ds.samples.iter().enumerate() {
        let file = record_file_name(i);
        write_atomic(&dir.join(&file), &record_to_bytes(s))?;
        records.push(RecordEntry {
            file,
            gm_id: s.gm.id.clone(),
            dt: s.gm.dt,
            scale_factor: s.gm.scale_factor,
            source: s.gm.source,
        });
    }
    let manifest = DatasetManifest {
        format: "SPRD1".into(),
        seed: ds.seed,
        n_samples: ds.samples.len(),
        split: ds.split.clone(),
        stats: ds.stats.clone(),
        records,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("serializable manifest");
    write_atomic(&dir.join(MANIFEST_FILE), text.as_bytes())
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, IoError> {
    let path = dir.join(MANIFEST_FILE);
    let text = fs::read_to_string(&path).map_err(fs_err(&path))?;
    let m: DatasetManifest = serde_json::from_str(&text)
        .map_err(|e| IoError::Invalid { what: path.display().to_string(), msg: e.to_string() })?;
    let invalid = |msg: String| IoError::Invalid { what: path.display().to_string(), msg };
    if m.format != "SPRD1" {
        return Err(invalid(format!("unknown dataset format {}", m.format)));
    }
    if m.records.len() != m.n_samples {
        return Err(invalid(format!("{} records listed for {} samples", m.records.len(), m.n_samples)));
    }
    if !m.split.is_partition_of(m.n_samples) {
        return Err(invalid("split ids do not partition the records".into()));
    }
    Ok(m)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, IoError> {
    let m = read_manifest(dir)?;
    let samples = m
        .records
        .iter()
        .map(|e| {
            let path = dir.join(&e.file);
            let bytes = fs::read(&path).map_err(fs_err(&path))?;
            record_from_bytes(&path.display().to_string(), &bytes, e)
        })
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { samples, split: m.split, seed: m.seed, stats: m.stats })
}
