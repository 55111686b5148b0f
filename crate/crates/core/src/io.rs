//! Embedding file formats.
//!
//! JSONL: one object per line, `{"id": str, "camera": int, "label": str|null,
//! "feature": [float, ...]}`. Blank lines are ignored.
//!
//! Binary (little-endian):
//!
//! ```text
//! magic   b"CREM"
//! version u32 = 1
//! n       u64
//! dim     u32
//! n x { id_len u32, id utf-8 bytes, camera u32, dim x f32 }
//! ```
//!
//! The binary format carries no labels.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::{EmbeddingSet, Sample};
use crate::error::{Error, Result};

pub const BINARY_MAGIC: &[u8; 4] = b"CREM";
pub const BINARY_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    Jsonl,
    Binary,
}

impl Format {
    /// `.jsonl`/`.json` are JSONL, anything else binary.
    pub fn from_path(path: &Path) -> Format {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => Format::Jsonl,
            _ => Format::Binary,
        }
    }
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "jsonl" => Ok(Format::Jsonl),
            "binary" | "bin" => Ok(Format::Binary),
            other => Err(format!("unknown format {other:?} (expected jsonl or binary)")),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct JsonRecord {
    id: String,
    camera: u32,
    #[serde(default)]
    label: Option<String>,
    feature: Vec<f64>,
}

pub fn load_embeddings(path: &Path, format: Format) -> Result<EmbeddingSet> {
    let samples = match format {
        Format::Jsonl => read_jsonl(path)?,
        Format::Binary => read_binary(path)?,
    };
    EmbeddingSet::new(samples)
}

pub fn save_embeddings(set: &EmbeddingSet, path: &Path, format: Format) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    match format {
        Format::Jsonl => write_jsonl(set, &mut w)?,
        Format::Binary => write_binary(set, &mut w)?,
    }
    w.flush()?;
    Ok(())
}

fn read_jsonl(path: &Path) -> Result<Vec<Sample>> {
    let reader = BufReader::new(File::open(path)?);
    let mut samples = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record = samples.len() + 1;
        let r: JsonRecord =
            serde_json::from_str(&line).map_err(|e| Error::record(record, e.to_string()))?;
        samples.push(Sample {
            id: r.id,
            camera: r.camera,
            label: r.label,
            feature: r.feature,
        });
    }
    Ok(samples)
}

pub fn write_jsonl(set: &EmbeddingSet, w: &mut impl Write) -> Result<()> {
    for s in set.samples() {
        let r = JsonRecord {
            id: s.id.clone(),
            camera: s.camera,
            label: s.label.clone(),
            feature: s.feature.clone(),
        };
        serde_json::to_writer(&mut *w, &r)?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

fn write_binary(set: &EmbeddingSet, w: &mut impl Write) -> Result<()> {
    w.write_all(BINARY_MAGIC)?;
    w.write_all(&BINARY_VERSION.to_le_bytes())?;
    w.write_all(&(set.len() as u64).to_le_bytes())?;
    w.write_all(&(set.dim() as u32).to_le_bytes())?;
    for s in set.samples() {
        w.write_all(&(s.id.len() as u32).to_le_bytes())?;
        w.write_all(s.id.as_bytes())?;
        w.write_all(&s.camera.to_le_bytes())?;
        for &v in &s.feature {
            w.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_binary(path: &Path) -> Result<Vec<Sample>> {
    let mut r = BufReader::new(File::open(path)?);
    let truncated = |_| Error::format(path, "truncated binary embedding file");

    let mut magic = [0u8; 4];
    r.read_exact(&mut magic).map_err(truncated)?;
    if &magic != BINARY_MAGIC {
        return Err(Error::format(path, "bad magic, not a binary embedding file"));
    }
    let version = read_u32(&mut r).map_err(truncated)?;
    if version != BINARY_VERSION {
        return Err(Error::format(path, format!("unsupported version {version}")));
    }
    let n = read_u64(&mut r).map_err(truncated)? as usize;
    let dim = read_u32(&mut r).map_err(truncated)? as usize;

    let mut samples = Vec::with_capacity(n.min(1 << 20));
    let mut buf4 = [0u8; 4];
    for record in 1..=n {
        let id_len = read_u32(&mut r).map_err(truncated)? as usize;
        let mut id = vec![0u8; id_len];
        r.read_exact(&mut id).map_err(truncated)?;
        let id = String::from_utf8(id).map_err(|_| Error::record(record, "id is not UTF-8"))?;
        let camera = read_u32(&mut r).map_err(truncated)?;
        let mut feature = Vec::with_capacity(dim);
        for _ in 0..dim {
            r.read_exact(&mut buf4).map_err(truncated)?;
            feature.push(f32::from_le_bytes(buf4) as f64);
        }
        samples.push(Sample {
            id,
            camera,
            label: None,
            feature,
        });
    }
    Ok(samples)
}

fn read_u32(r: &mut impl Read) -> std::io::Result<u32> {
    let mut b = [0u8; 4];
    r.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

fn read_u64(r: &mut impl Read) -> std::io::Result<u64> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

/// Ground truth as `id,camera,label` CSV.
pub fn write_truth_csv(set: &EmbeddingSet, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    writeln!(w, "id,camera,label")?;
    for s in set.samples() {
        writeln!(w, "{},{},{}", s.id, s.camera, s.label.as_deref().unwrap_or(""))?;
    }
    w.flush()?;
    Ok(())
}
