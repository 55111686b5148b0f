//! k-reciprocal re-ranking applied once at inference time.
//!
//! Queries and gallery are pooled into one probe set. Every sample gets a
//! sparse neighbor vector built from its k-reciprocal neighbors (expanded
//! with the half-size reciprocal sets of those neighbors), weighted by a
//! Gaussian kernel of the normalized squared distance and smoothed over its
//! `k2` nearest neighbors. Two samples are then compared with a Jaccard
//! distance over those vectors, which is blended with the original distance.

use serde::{Deserialize, Serialize};

use crate::data::DistanceMatrix;
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RerankConfig {
    pub k1: usize,
    pub k2: usize,
    /// Weight of the original distance in the blend.
    pub lambda: f64,
}

impl Default for RerankConfig {
    fn default() -> Self {
        RerankConfig {
            k1: 20,
            k2: 6,
            lambda: 0.3,
        }
    }
}

impl RerankConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::Config("k1 and k2 must be positive".into()));
        }
        if self.k2 > self.k1 {
            return Err(Error::Config(format!("k2 ({}) must not exceed k1 ({})", self.k2, self.k1)));
        }
        if !(0.0..=1.0).contains(&self.lambda) {
            return Err(Error::Config(format!("lambda must be in [0, 1], got {}", self.lambda)));
        }
        Ok(())
    }
}

pub fn k_reciprocal_rerank(
    query_gallery: &DistanceMatrix,
    gallery_gallery: &DistanceMatrix,
    query_query: &DistanceMatrix,
    cfg: &RerankConfig,
) -> Result<DistanceMatrix> {
    k_reciprocal_rerank_with(query_gallery, gallery_gallery, query_query, cfg, Exec::default())
}

pub fn k_reciprocal_rerank_with(
    query_gallery: &DistanceMatrix,
    gallery_gallery: &DistanceMatrix,
    query_query: &DistanceMatrix,
    cfg: &RerankConfig,
    exec: Exec,
) -> Result<DistanceMatrix> {
    cfg.validate()?;
    let (nq, ng) = (query_gallery.rows(), query_gallery.cols());
    if query_query.rows() != nq || query_query.cols() != nq {
        return Err(Error::Dimension {
            expected: nq * nq,
            actual: query_query.rows() * query_query.cols(),
        });
    }
    if gallery_gallery.rows() != ng || gallery_gallery.cols() != ng {
        return Err(Error::Dimension {
            expected: ng * ng,
            actual: gallery_gallery.rows() * gallery_gallery.cols(),
        });
    }
    let jaccard = jaccard_distance(query_gallery, gallery_gallery, query_query, cfg, exec);
    let lambda = cfg.lambda;
    let values = query_gallery
        .values()
        .iter()
        .zip(jaccard.values())
        .map(|(&d, &j)| j * (1.0 - lambda) + d * lambda)
        .collect();
    DistanceMatrix::from_vec(nq, ng, values)
}

/// The Jaccard term alone, queries x gallery.
pub fn jaccard_distance(
    query_gallery: &DistanceMatrix,
    gallery_gallery: &DistanceMatrix,
    query_query: &DistanceMatrix,
    cfg: &RerankConfig,
    exec: Exec,
) -> DistanceMatrix {
    let (nq, ng) = (query_gallery.rows(), query_gallery.cols());
    let all = nq + ng;
    let raw = |i: usize, j: usize| -> f64 {
        match (i < nq, j < nq) {
            (true, true) => query_query.get(i, j),
            (true, false) => query_gallery.get(i, j - nq),
            (false, true) => query_gallery.get(j, i - nq),
            (false, false) => gallery_gallery.get(i - nq, j - nq),
        }
    };

    // Squared distances scaled by the largest entry of each column, then
    // transposed: row i holds d²(j, i) / max_k d²(k, i).
    let col_max: Vec<f64> = exec.map(all, |i| {
        (0..all).map(|k| raw(k, i).powi(2)).fold(f64::NEG_INFINITY, f64::max)
    });
    let mut dist = vec![0.0; all * all];
    exec.fill_rows(&mut dist, all, |i, row| {
        for (j, v) in row.iter_mut().enumerate() {
            *v = raw(j, i).powi(2) / col_max[i];
        }
    });
    let d = |i: usize, j: usize| dist[i * all + j];

    let rank: Vec<Vec<usize>> = exec.map(all, |i| {
        let row = &dist[i * all..(i + 1) * all];
        let mut idx: Vec<usize> = (0..all).collect();
        idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
        idx
    });

    let reciprocal = |i: usize, k: usize| -> Vec<usize> {
        let k = (k + 1).min(all);
        rank[i][..k]
            .iter()
            .copied()
            .filter(|&c| rank[c][..k].contains(&i))
            .collect()
    };
    let half = ((cfg.k1 as f64) / 2.0).round_ties_even() as usize;

    // Sparse neighbor vectors, one per pooled sample.
    let v_rows: Vec<Vec<(usize, f64)>> = exec.map(all, |i| {
        let base = reciprocal(i, cfg.k1);
        let mut expansion = base.clone();
        for &candidate in &base {
            let cand = reciprocal(candidate, half);
            let mut unique = cand.clone();
            unique.sort_unstable();
            unique.dedup();
            let overlap = unique.iter().filter(|c| base.contains(c)).count();
            if overlap as f64 > 2.0 / 3.0 * cand.len() as f64 {
                expansion.extend_from_slice(&cand);
            }
        }
        expansion.sort_unstable();
        expansion.dedup();
        let weights: Vec<f64> = expansion.iter().map(|&j| (-d(i, j)).exp()).collect();
        let total: f64 = weights.iter().sum();
        expansion.into_iter().zip(weights).map(|(j, w)| (j, w / total)).collect()
    });

    let v: Vec<Vec<(usize, f64)>> = if cfg.k2 != 1 {
        exec.map(all, |i| {
            let neighbors = &rank[i][..cfg.k2.min(all)];
            let mut dense = vec![0.0; all];
            for &n in neighbors {
                for &(j, w) in &v_rows[n] {
                    dense[j] += w;
                }
            }
            let k = neighbors.len() as f64;
            dense
                .into_iter()
                .enumerate()
                .filter(|(_, w)| *w != 0.0)
                .map(|(j, w)| (j, w / k))
                .collect()
        })
    } else {
        v_rows
    };

    // column -> rows with a non-zero entry, in row order
    let mut inverted: Vec<Vec<(usize, f64)>> = vec![Vec::new(); all];
    for (r, row) in v.iter().enumerate() {
        for &(c, w) in row {
            inverted[c].push((r, w));
        }
    }

    let mut out = vec![0.0; nq * ng];
    exec.fill_rows(&mut out, ng, |i, row| {
        let mut shared = vec![0.0; all];
        for &(col, w) in &v[i] {
            for &(r, w_other) in &inverted[col] {
                shared[r] += w.min(w_other);
            }
        }
        for (g, value) in row.iter_mut().enumerate() {
            let s = shared[nq + g];
            *value = 1.0 - s / (2.0 - s);
        }
    });
    DistanceMatrix::from_vec(nq, ng, out).expect("shape matches")
}
