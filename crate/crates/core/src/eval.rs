//! Retrieval evaluation: cross-camera filtering, CMC and mAP.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::data::{DistanceMatrix, EmbeddingSet};
use crate::error::{Error, Result};
use crate::exec::Exec;

#[derive(Debug, Clone, PartialEq)]
pub struct QueryGallerySplit {
    pub queries: EmbeddingSet,
    pub gallery: EmbeddingSet,
}

impl QueryGallerySplit {
    /// Every query must carry a label. Unlabeled gallery items are
    /// distractors and never count as matches.
    pub fn new(queries: EmbeddingSet, gallery: EmbeddingSet) -> Result<Self> {
        if let Some(q) = queries.samples().iter().find(|s| s.label.is_none()) {
            return Err(Error::Config(format!("query {:?} has no label", q.id)));
        }
        Ok(QueryGallerySplit { queries, gallery })
    }

    /// Uses the first sample of every (label, camera) pair as a query and
    /// everything else as gallery.
    pub fn from_labeled(set: &EmbeddingSet) -> Result<Self> {
        let mut seen = HashSet::new();
        let mut q = Vec::new();
        let mut g = Vec::new();
        for (i, s) in set.samples().iter().enumerate() {
            match &s.label {
                Some(l) if seen.insert((l.clone(), s.camera)) => q.push(i),
                _ => g.push(i),
            }
        }
        if q.is_empty() {
            return Err(Error::Config("no labeled samples to use as queries".into()));
        }
        if g.is_empty() {
            return Err(Error::Config("split leaves the gallery empty".into()));
        }
        QueryGallerySplit::new(set.subset(&q)?, set.subset(&g)?)
    }

    /// Queries are the samples whose ids are listed; the rest is gallery.
    pub fn from_ids(set: &EmbeddingSet, query_ids: &HashSet<String>) -> Result<Self> {
        let (q, g): (Vec<usize>, Vec<usize>) =
            (0..set.len()).partition(|&i| query_ids.contains(&set.sample(i).id));
        if q.is_empty() || g.is_empty() {
            return Err(Error::Config("query id list leaves queries or gallery empty".into()));
        }
        QueryGallerySplit::new(set.subset(&q)?, set.subset(&g)?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryResult {
    pub query_id: String,
    pub ap: f64,
    /// 0-based rank of the first correct match.
    pub first_hit: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RetrievalReport {
    #[serde(rename = "mAP")]
    pub map: f64,
    pub rank1: f64,
    pub rank5: f64,
    pub rank10: f64,
    /// `cmc[k]` is the fraction of evaluated queries matched within the top
    /// `k + 1`.
    pub cmc: Vec<f64>,
    pub skipped_queries: Vec<String>,
    #[serde(skip)]
    pub per_query: Vec<QueryResult>,
}

impl RetrievalReport {
    pub fn write_per_query_csv(&self, w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "query_id,ap")?;
        for q in &self.per_query {
            writeln!(w, "{},{}", q.query_id, q.ap)?;
        }
        Ok(())
    }
}

/// Gallery indices ordered by ascending distance, ties by index.
pub fn ranking(row: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..row.len()).collect();
    idx.sort_by(|&a, &b| row[a].total_cmp(&row[b]).then(a.cmp(&b)));
    idx
}

/// Gallery entries of the same identity seen by the query's camera are
/// removed before ranking.
pub fn is_filtered(query: &crate::data::Sample, item: &crate::data::Sample) -> bool {
    item.camera == query.camera && item.label.is_some() && item.label == query.label
}

pub fn evaluate(dist: &DistanceMatrix, split: &QueryGallerySplit) -> Result<RetrievalReport> {
    evaluate_with(dist, split, Exec::default())
}

pub fn evaluate_with(dist: &DistanceMatrix, split: &QueryGallerySplit, exec: Exec) -> Result<RetrievalReport> {
    let (nq, ng) = (split.queries.len(), split.gallery.len());
    if dist.rows() != nq || dist.cols() != ng {
        return Err(Error::Dimension {
            expected: nq * ng,
            actual: dist.rows() * dist.cols(),
        });
    }

    let outcomes: Vec<Option<(f64, usize)>> = exec.map(nq, |qi| {
        let query = split.queries.sample(qi);
        let mut hits = 0usize;
        let mut precision_sum = 0.0;
        let mut first_hit = None;
        let mut rank = 0usize;
        for g in ranking(dist.row(qi)) {
            let item = split.gallery.sample(g);
            if is_filtered(query, item) {
                continue;
            }
            rank += 1;
            if item.label.is_some() && item.label == query.label {
                hits += 1;
                precision_sum += hits as f64 / rank as f64;
                first_hit.get_or_insert(rank - 1);
            }
        }
        first_hit.map(|f| (precision_sum / hits as f64, f))
    });

    let mut cmc_counts = vec![0usize; ng];
    let mut per_query = Vec::new();
    let mut skipped = Vec::new();
    for (qi, o) in outcomes.into_iter().enumerate() {
        let id = split.queries.sample(qi).id.clone();
        match o {
            Some((ap, first_hit)) => {
                cmc_counts[first_hit] += 1;
                per_query.push(QueryResult {
                    query_id: id,
                    ap,
                    first_hit,
                });
            }
            None => skipped.push(id),
        }
    }
    if !skipped.is_empty() {
        log::warn!("{} queries have no valid match in the gallery and were skipped", skipped.len());
    }

    let valid = per_query.len();
    let mut cmc = Vec::with_capacity(ng);
    let mut running = 0usize;
    for c in cmc_counts {
        running += c;
        cmc.push(if valid == 0 { 0.0 } else { running as f64 / valid as f64 });
    }
    let map = if valid == 0 {
        0.0
    } else {
        per_query.iter().map(|q| q.ap).sum::<f64>() / valid as f64
    };
    let at = |k: usize| cmc.get(k.min(ng.saturating_sub(1))).copied().unwrap_or(0.0);
    Ok(RetrievalReport {
        map,
        rank1: at(0),
        rank5: at(4),
        rank10: at(9),
        cmc,
        skipped_queries: skipped,
        per_query,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    fn labeled(items: &[(&str, u32, &str)]) -> EmbeddingSet {
        EmbeddingSet::new(
            items
                .iter()
                .map(|(id, cam, label)| Sample::new(*id, *cam, vec![1.0]).with_label(*label))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_match_at_rank_one() {
        let split = QueryGallerySplit::new(labeled(&[("q", 0, "a")]), labeled(&[("g", 1, "a")])).unwrap();
        let d = DistanceMatrix::from_vec(1, 1, vec![0.5]).unwrap();
        let r = evaluate(&d, &split).unwrap();
        assert_eq!((r.rank1, r.map), (1.0, 1.0));
    }

    #[test]
    fn ap_with_hits_at_one_and_three() {
        let split = QueryGallerySplit::new(
            labeled(&[("q", 0, "a")]),
            labeled(&[("g0", 1, "a"), ("g1", 1, "b"), ("g2", 2, "a"), ("g3", 1, "c"), ("g4", 2, "d")]),
        )
        .unwrap();
        let d = DistanceMatrix::from_vec(1, 5, vec![0.1, 0.2, 0.3, 0.4, 0.5]).unwrap();
        let r = evaluate(&d, &split).unwrap();
        assert!((r.map - (1.0 + 2.0 / 3.0) / 2.0).abs() < 1e-12);
        assert!((r.map - 0.8333).abs() < 1e-4);
        assert_eq!(r.cmc, vec![1.0; 5]);
    }

    #[test]
    fn same_camera_same_identity_is_removed() {
        // the closest gallery item is the query's own identity and camera
        let split = QueryGallerySplit::new(
            labeled(&[("q", 0, "a")]),
            labeled(&[("same", 0, "a"), ("other", 1, "b"), ("match", 1, "a")]),
        )
        .unwrap();
        let d = DistanceMatrix::from_vec(1, 3, vec![0.0, 0.1, 0.2]).unwrap();
        let r = evaluate(&d, &split).unwrap();
        assert_eq!(r.rank1, 0.0);
        assert_eq!(r.per_query[0].first_hit, 1);
        assert!((r.map - 0.5).abs() < 1e-15);
    }

    #[test]
    fn query_without_cross_camera_match_is_skipped() {
        let split = QueryGallerySplit::new(
            labeled(&[("q0", 0, "a"), ("q1", 0, "b")]),
            labeled(&[("g0", 0, "a"), ("g1", 1, "b")]),
        )
        .unwrap();
        let d = DistanceMatrix::from_vec(2, 2, vec![0.1, 0.2, 0.3, 0.1]).unwrap();
        let r = evaluate(&d, &split).unwrap();
        assert_eq!(r.skipped_queries, vec!["q0".to_string()]);
        assert_eq!(r.map, 1.0);
    }

    #[test]
    fn ties_resolved_by_gallery_index() {
        assert_eq!(ranking(&[0.5, 0.1, 0.5, 0.1]), vec![1, 3, 0, 2]);
    }

    #[test]
    fn unlabeled_query_rejected() {
        let q = EmbeddingSet::new(vec![Sample::new("q", 0, vec![1.0])]).unwrap();
        assert!(QueryGallerySplit::new(q, labeled(&[("g", 1, "a")])).is_err());
    }

    #[test]
    fn from_labeled_takes_first_per_identity_camera() {
        let set = labeled(&[("a0", 0, "a"), ("a1", 0, "a"), ("a2", 1, "a"), ("b0", 1, "b")]);
        let split = QueryGallerySplit::from_labeled(&set).unwrap();
        let ids: Vec<&str> = split.queries.samples().iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, vec!["a0", "a2", "b0"]);
        assert_eq!(split.gallery.len(), 1);
    }
}
