//! Reliability-weighted parameter averaging across checkpoints, and
//! distance-level fusion across independently adapted models.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::data::{cross_distances, DistanceMatrix, EmbeddingSet};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::head::ProjectionHead;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CRCK";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Head parameters after one iteration and the weight they carry.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub d_in: usize,
    pub d_out: usize,
    /// Flat `weight ‖ bias`.
    pub params: Vec<f64>,
    pub p: f64,
    pub iteration: usize,
}

impl Checkpoint {
    pub fn from_head(head: &ProjectionHead, p: f64, iteration: usize) -> Self {
        Checkpoint {
            d_in: head.d_in(),
            d_out: head.d_out(),
            params: head.params(),
            p,
            iteration,
        }
    }

    pub fn head(&self) -> Result<ProjectionHead> {
        ProjectionHead::from_params(self.d_in, self.d_out, &self.params)
    }

    /// Binary layout, little-endian:
    /// `b"CRCK", version u32, iteration u32, d_in u32, d_out u32, p f64,
    /// weight (d_out*d_in f64, row-major), bias (d_out f64)`.
    pub fn write(&self, w: &mut impl Write) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
        w.write_all(&(self.iteration as u32).to_le_bytes())?;
        w.write_all(&(self.d_in as u32).to_le_bytes())?;
        w.write_all(&(self.d_out as u32).to_le_bytes())?;
        w.write_all(&self.p.to_le_bytes())?;
        for v in &self.params {
            w.write_all(&v.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read(r: &mut impl Read, origin: &Path) -> Result<Checkpoint> {
        let bad = |m: &str| Error::format(origin, m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic).map_err(|_| bad("truncated checkpoint"))?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(bad("bad magic, not a checkpoint"));
        }
        let mut u = [0u8; 4];
        let mut next_u32 = |r: &mut dyn Read| -> Result<u32> {
            r.read_exact(&mut u).map_err(|_| bad("truncated checkpoint"))?;
            Ok(u32::from_le_bytes(u))
        };
        let version = next_u32(r)?;
        if version != CHECKPOINT_VERSION {
            return Err(bad(&format!("unsupported checkpoint version {version}")));
        }
        let iteration = next_u32(r)? as usize;
        let d_in = next_u32(r)? as usize;
        let d_out = next_u32(r)? as usize;
        let mut f = [0u8; 8];
        r.read_exact(&mut f).map_err(|_| bad("truncated checkpoint"))?;
        let p = f64::from_le_bytes(f);
        let count = d_out * d_in + d_out;
        let mut params = Vec::with_capacity(count);
        for _ in 0..count {
            r.read_exact(&mut f).map_err(|_| bad("truncated checkpoint"))?;
            params.push(f64::from_le_bytes(f));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(bad("trailing bytes after checkpoint"));
        }
        Ok(Checkpoint {
            d_in,
            d_out,
            params,
            p,
            iteration,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Checkpoint> {
        Checkpoint::read(&mut BufReader::new(File::open(path)?), path)
    }
}

/// Heads are stored in the checkpoint format with `p = 1`.
pub fn save_head(head: &ProjectionHead, path: &Path) -> Result<()> {
    Checkpoint::from_head(head, 1.0, 0).save(path)
}

pub fn load_head(path: &Path) -> Result<ProjectionHead> {
    Checkpoint::load(path)?.head()
}

/// All `*.ckpt` files in `dir`, sorted by file name.
pub fn load_checkpoint_dir(dir: &Path) -> Result<Vec<Checkpoint>> {
    let mut paths: Vec<_> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "ckpt"))
        .collect();
    paths.sort();
    paths.iter().map(|p| Checkpoint::load(p)).collect()
}

/// θ = Σ pᵢ θᵢ / Σ pᵢ. Only weight and bias are averaged; the result has
/// fresh optimizer state.
pub fn self_ensemble(checkpoints: &[Checkpoint]) -> Result<ProjectionHead> {
    let first = checkpoints
        .first()
        .ok_or_else(|| Error::Config("self-ensembling needs at least one checkpoint".into()))?;
    for c in checkpoints {
        if (c.d_in, c.d_out) != (first.d_in, first.d_out) || c.params.len() != first.params.len() {
            return Err(Error::Dimension {
                expected: first.params.len(),
                actual: c.params.len(),
            });
        }
        if !(c.p >= 0.0) || !c.p.is_finite() {
            return Err(Error::Config(format!("checkpoint {} has invalid weight {}", c.iteration, c.p)));
        }
    }
    let total: f64 = checkpoints.iter().map(|c| c.p).sum();
    if total <= 0.0 {
        return Err(Error::NoReliableCheckpoints);
    }
    let mut acc = vec![0.0; first.params.len()];
    for c in checkpoints {
        for (a, v) in acc.iter_mut().zip(&c.params) {
            *a += c.p * v;
        }
    }
    acc.iter_mut().for_each(|a| *a /= total);
    ProjectionHead::from_params(first.d_in, first.d_out, &acc)
}

/// Final heads of independently adapted runs, possibly over different
/// upstream embedding spaces.
#[derive(Debug, Clone)]
pub struct ModelBank {
    heads: Vec<ProjectionHead>,
}

impl ModelBank {
    pub fn new(heads: Vec<ProjectionHead>) -> Result<Self> {
        if heads.is_empty() {
            return Err(Error::Config("a model bank needs at least one head".into()));
        }
        Ok(ModelBank { heads })
    }

    pub fn heads(&self) -> &[ProjectionHead] {
        &self.heads
    }

    pub fn len(&self) -> usize {
        self.heads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }
}

/// Checks that every set lists the same ids in the same order as the first.
fn check_aligned(sets: &[EmbeddingSet]) -> Result<()> {
    let reference = &sets[0];
    for s in &sets[1..] {
        if s.len() != reference.len() {
            return Err(Error::Misaligned(format!(
                "feature sets differ in size ({} vs {})",
                reference.len(),
                s.len()
            )));
        }
        for (a, b) in reference.samples().iter().zip(s.samples()) {
            if a.id != b.id {
                return Err(Error::Misaligned(a.id.clone()));
            }
        }
    }
    Ok(())
}

/// Element-wise mean of same-shaped distance matrices, summed in input order.
pub fn fuse_distances(matrices: &[DistanceMatrix]) -> Result<DistanceMatrix> {
    let first = matrices
        .first()
        .ok_or_else(|| Error::Config("nothing to fuse".into()))?;
    let (rows, cols) = (first.rows(), first.cols());
    let mut acc = first.values().to_vec();
    for m in &matrices[1..] {
        if (m.rows(), m.cols()) != (rows, cols) {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: m.rows() * m.cols(),
            });
        }
        for (a, v) in acc.iter_mut().zip(m.values()) {
            *a += v;
        }
    }
    let k = matrices.len() as f64;
    acc.iter_mut().for_each(|a| *a /= k);
    DistanceMatrix::from_vec(rows, cols, acc)
}

pub fn ensemble_distance(
    bank: &ModelBank,
    query_feats: &[EmbeddingSet],
    gallery_feats: &[EmbeddingSet],
) -> Result<DistanceMatrix> {
    ensemble_distance_with(bank, query_feats, gallery_feats, Exec::default())
}

/// d(q, g) = (1/K) Σₖ ‖fₖ(q) − fₖ(g)‖ where `fₖ` is model k's head applied to
/// model k's upstream features.
pub fn ensemble_distance_with(
    bank: &ModelBank,
    query_feats: &[EmbeddingSet],
    gallery_feats: &[EmbeddingSet],
    exec: Exec,
) -> Result<DistanceMatrix> {
    if query_feats.len() != bank.len() || gallery_feats.len() != bank.len() {
        return Err(Error::Config(format!(
            "{} models but {} query and {} gallery feature sets",
            bank.len(),
            query_feats.len(),
            gallery_feats.len()
        )));
    }
    check_aligned(query_feats)?;
    check_aligned(gallery_feats)?;
    let per_model: Vec<DistanceMatrix> = bank
        .heads()
        .iter()
        .zip(query_feats.iter().zip(gallery_feats))
        .map(|(h, (q, g))| {
            let q = h.project_with(q, exec)?;
            let g = h.project_with(g, exec)?;
            Ok(crate::data::cross_distances_with(&q, &g, exec))
        })
        .collect::<Result<_>>()?;
    fuse_distances(&per_model)
}

/// Per-model distances on already-projected features (used when the heads
/// were applied upstream).
pub fn model_distances(query_feats: &[EmbeddingSet], gallery_feats: &[EmbeddingSet]) -> Vec<DistanceMatrix> {
    query_feats
        .iter()
        .zip(gallery_feats)
        .map(|(q, g)| cross_distances(q, g))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ck(params: Vec<f64>, p: f64) -> Checkpoint {
        // treat params as d_in = len-1, d_out = 1
        Checkpoint {
            d_in: params.len() - 1,
            d_out: 1,
            params,
            p,
            iteration: 0,
        }
    }

    #[test]
    fn single_checkpoint_exact() {
        let c = ck(vec![0.3, -1.7, 2.25], 0.7);
        assert_eq!(self_ensemble(std::slice::from_ref(&c)).unwrap().params(), c.params);
    }

    #[test]
    fn weighted_average() {
        let h = self_ensemble(&[ck(vec![1.0, 1.0], 0.25), ck(vec![3.0, 3.0], 0.75)]).unwrap();
        assert_eq!(h.params(), vec![2.5, 2.5]);
    }

    #[test]
    fn all_zero_weights_rejected() {
        let err = self_ensemble(&[ck(vec![1.0, 1.0], 0.0), ck(vec![2.0, 2.0], 0.0)]).unwrap_err();
        assert_eq!(err.to_string(), "no reliable checkpoints: all reliability weights are zero");
    }

    #[test]
    fn checkpoint_round_trip() {
        let c = Checkpoint {
            d_in: 2,
            d_out: 2,
            params: vec![1.0, -0.0, f64::MIN_POSITIVE, 3.5, 0.25, -9.0],
            p: 0.123456789,
            iteration: 7,
        };
        let mut buf = Vec::new();
        c.write(&mut buf).unwrap();
        let back = Checkpoint::read(&mut buf.as_slice(), Path::new("mem")).unwrap();
        assert_eq!(back.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                   c.params.iter().map(|v| v.to_bits()).collect::<Vec<_>>());
        assert_eq!((back.p, back.iteration, back.d_in, back.d_out), (c.p, 7, 2, 2));
        buf.push(0);
        assert!(Checkpoint::read(&mut buf.as_slice(), Path::new("mem")).is_err());
    }

    #[test]
    fn fuse_two() {
        let a = DistanceMatrix::from_vec(1, 1, vec![0.2]).unwrap();
        let b = DistanceMatrix::from_vec(1, 1, vec![0.4]).unwrap();
        let f = fuse_distances(&[a.clone(), b]).unwrap();
        assert!((f.get(0, 0) - 0.3).abs() < 1e-15);
        assert_eq!(fuse_distances(std::slice::from_ref(&a)).unwrap(), a);
    }
}
