//! Embedding data model, deduplication, normalization and Euclidean distances.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::exec::Exec;

/// Default distance below which two features are treated as the same image.
pub const DEFAULT_DEDUP_EPS: f64 = 1e-9;

/// Tolerance on unit norms for a set flagged as normalized.
pub const NORM_TOLERANCE: f64 = 1e-6;

/// One target-domain feature vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub camera: u32,
    /// Ground truth identity. Only the evaluation harness reads it.
    pub label: Option<String>,
    pub feature: Vec<f64>,
}

impl Sample {
    pub fn new(id: impl Into<String>, camera: u32, feature: Vec<f64>) -> Self {
        Sample {
            id: id.into(),
            camera,
            label: None,
            feature,
        }
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = Some(label.into());
        self
    }
}

/// An ordered collection of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingSet {
    samples: Vec<Sample>,
    dim: usize,
    normalized: bool,
}

impl EmbeddingSet {
    /// Validates the set: non-empty, unique ids, one dimension, finite values.
    /// Indices in errors are 1-based record numbers.
    pub fn new(samples: Vec<Sample>) -> Result<Self> {
        let first = samples.first().ok_or(Error::EmptySet)?;
        let dim = first.feature.len();
        if dim == 0 {
            return Err(Error::record(1, "feature is empty"));
        }
        let mut seen = HashSet::with_capacity(samples.len());
        for (i, s) in samples.iter().enumerate() {
            let record = i + 1;
            if s.feature.len() != dim {
                return Err(Error::record(
                    record,
                    format!("dimension {} does not match {}", s.feature.len(), dim),
                ));
            }
            if let Some(j) = s.feature.iter().position(|v| !v.is_finite()) {
                return Err(Error::record(
                    record,
                    format!("non-finite component at position {j}"),
                ));
            }
            if !seen.insert(s.id.as_str()) {
                return Err(Error::DuplicateId {
                    id: s.id.clone(),
                    record,
                });
            }
        }
        Ok(EmbeddingSet {
            samples,
            dim,
            normalized: false,
        })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn is_normalized(&self) -> bool {
        self.normalized
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn sample(&self, i: usize) -> &Sample {
        &self.samples[i]
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.samples[i].feature
    }

    pub fn camera(&self, i: usize) -> u32 {
        self.samples[i].camera
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    /// New set holding the samples at `indices`, in that order. The
    /// normalization flag carries over.
    pub fn subset(&self, indices: &[usize]) -> Result<EmbeddingSet> {
        let samples = indices.iter().map(|&i| self.samples[i].clone()).collect();
        let mut out = EmbeddingSet::new(samples)?;
        out.normalized = self.normalized;
        Ok(out)
    }

    /// Builds a set from features that are already unit length. Used by
    /// the projection path, which normalizes as it goes.
    pub(crate) fn from_normalized(samples: Vec<Sample>) -> Result<Self> {
        let mut set = EmbeddingSet::new(samples)?;
        debug_assert!(set
            .samples
            .iter()
            .all(|s| (norm(&s.feature) - 1.0).abs() <= NORM_TOLERANCE));
        set.normalized = true;
        Ok(set)
    }

    /// Keeps the first sample of every group whose members lie within
    /// `epsilon` of each other. Input order is preserved.
    pub fn deduplicate(&self, epsilon: f64) -> EmbeddingSet {
        let eps2 = epsilon * epsilon;
        let mut kept: Vec<usize> = Vec::with_capacity(self.len());
        for (i, s) in self.samples.iter().enumerate() {
            let dup = kept
                .iter()
                .any(|&k| squared_distance(&self.samples[k].feature, &s.feature) <= eps2);
            if !dup {
                kept.push(i);
            }
        }
        if kept.len() < self.len() {
            log::info!("deduplicate: dropped {} samples", self.len() - kept.len());
        }
        EmbeddingSet {
            samples: kept.into_iter().map(|i| self.samples[i].clone()).collect(),
            dim: self.dim,
            normalized: self.normalized,
        }
    }

    /// Divides every feature by its Euclidean norm.
    pub fn l2_normalize(&self) -> Result<EmbeddingSet> {
        let mut samples = self.samples.clone();
        for s in &mut samples {
            normalize_in_place(&mut s.feature).ok_or_else(|| Error::ZeroNorm(s.id.clone()))?;
        }
        Ok(EmbeddingSet {
            samples,
            dim: self.dim,
            normalized: true,
        })
    }

    /// Index of each sample id.
    pub fn id_index(&self) -> std::collections::HashMap<&str, usize> {
        self.samples
            .iter()
            .enumerate()
            .map(|(i, s)| (s.id.as_str(), i))
            .collect()
    }
}

/// A dense row-major matrix of distances. Square for set-to-itself
/// distances, rectangular for query-to-gallery.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceMatrix {
    rows: usize,
    cols: usize,
    values: Vec<f64>,
}

impl DistanceMatrix {
    pub fn from_vec(rows: usize, cols: usize, values: Vec<f64>) -> Result<Self> {
        if values.len() != rows * cols {
            return Err(Error::Dimension {
                expected: rows * cols,
                actual: values.len(),
            });
        }
        Ok(DistanceMatrix { rows, cols, values })
    }

    pub fn from_fn(rows: usize, cols: usize, f: impl Fn(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                values.push(f(i, j));
            }
        }
        DistanceMatrix { rows, cols, values }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    /// Side length of a square matrix.
    pub fn n(&self) -> usize {
        debug_assert_eq!(self.rows, self.cols);
        self.rows
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.cols + j]
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.cols..(i + 1) * self.cols]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn transpose(&self) -> DistanceMatrix {
        DistanceMatrix::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Largest asymmetry |d(i,j) - d(j,i)| and largest diagonal magnitude.
    pub fn symmetry_defect(&self) -> (f64, f64) {
        let mut asym = 0.0f64;
        let mut diag = 0.0f64;
        for i in 0..self.rows {
            diag = diag.max(self.get(i, i).abs());
            for j in (i + 1)..self.cols {
                asym = asym.max((self.get(i, j) - self.get(j, i)).abs());
            }
        }
        (asym, diag)
    }
}

#[inline]
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = x - y;
            d * d
        })
        .sum()
}

#[inline]
pub fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

#[inline]
pub fn norm(a: &[f64]) -> f64 {
    a.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Normalizes in place; `None` for a zero vector.
pub(crate) fn normalize_in_place(v: &mut [f64]) -> Option<f64> {
    let n = norm(v);
    if n == 0.0 || !n.is_finite() {
        return None;
    }
    v.iter_mut().for_each(|x| *x /= n);
    Some(n)
}

/// Full pairwise Euclidean distance matrix of a normalized set.
pub fn pairwise_distances(set: &EmbeddingSet) -> DistanceMatrix {
    pairwise_distances_with(set, Exec::default())
}

pub fn pairwise_distances_with(set: &EmbeddingSet, exec: Exec) -> DistanceMatrix {
    debug_assert!(set.is_normalized(), "pairwise_distances expects a normalized set");
    let n = set.len();
    let mut values = vec![0.0; n * n];
    // Each entry is computed on its own; (x - y)^2 == (y - x)^2 bit for bit,
    // so the result is exactly symmetric without mirroring.
    exec.fill_rows(&mut values, n, |i, row| {
        let a = set.feature(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j { 0.0 } else { euclidean(a, set.feature(j)) };
        }
    });
    DistanceMatrix {
        rows: n,
        cols: n,
        values,
    }
}

/// Distances from every sample of `queries` to every sample of `gallery`.
pub fn cross_distances(queries: &EmbeddingSet, gallery: &EmbeddingSet) -> DistanceMatrix {
    cross_distances_with(queries, gallery, Exec::default())
}

pub fn cross_distances_with(
    queries: &EmbeddingSet,
    gallery: &EmbeddingSet,
    exec: Exec,
) -> DistanceMatrix {
    let (rows, cols) = (queries.len(), gallery.len());
    let mut values = vec![0.0; rows * cols];
    exec.fill_rows(&mut values, cols, |i, row| {
        let a = queries.feature(i);
        for (j, v) in row.iter_mut().enumerate() {
            *v = euclidean(a, gallery.feature(j));
        }
    });
    DistanceMatrix { rows, cols, values }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn set(features: Vec<Vec<f64>>) -> EmbeddingSet {
        EmbeddingSet::new(
            features
                .into_iter()
                .enumerate()
                .map(|(i, f)| Sample::new(format!("s{i}"), (i % 3) as u32, f))
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn normalize_three_four_five() {
        let s = set(vec![vec![3.0, 4.0]]).l2_normalize().unwrap();
        assert_eq!(s.feature(0), &[0.6, 0.8]);
        assert!(s.is_normalized());
    }

    #[test]
    fn normalize_unit_is_identity() {
        let s = set(vec![vec![0.0, 1.0, 0.0]]).l2_normalize().unwrap();
        assert_eq!(s.feature(0), &[0.0, 1.0, 0.0]);
    }

    #[test]
    fn normalize_zero_vector_fails() {
        let err = set(vec![vec![1.0, 0.0], vec![0.0, 0.0]])
            .l2_normalize()
            .unwrap_err();
        assert!(matches!(err, Error::ZeroNorm(ref id) if id == "s1"), "{err}");
        assert!(err.to_string().contains("zero-norm feature"));
    }

    #[test]
    fn construction_errors() {
        assert!(matches!(EmbeddingSet::new(vec![]), Err(Error::EmptySet)));
        let err = EmbeddingSet::new(vec![
            Sample::new("a", 0, vec![1.0, 2.0]),
            Sample::new("b", 0, vec![1.0, 2.0, 3.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::Record { record: 2, .. }));
        let err = EmbeddingSet::new(vec![
            Sample::new("a", 0, vec![1.0]),
            Sample::new("a", 1, vec![2.0]),
        ])
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId { record: 2, .. }));
        let err = EmbeddingSet::new(vec![Sample::new("a", 0, vec![f64::NAN])]).unwrap_err();
        assert!(matches!(err, Error::Record { record: 1, .. }));
    }

    #[test]
    fn dedup_exact_duplicate_keeps_first() {
        let s = set(vec![vec![1.0, 2.0], vec![1.0, 2.0]]);
        let d = s.deduplicate(0.0);
        assert_eq!(d.len(), 1);
        assert_eq!(d.sample(0).id, "s0");
    }

    #[test]
    fn dedup_distinct_untouched() {
        let s = set(vec![vec![0.0, 0.0], vec![0.5, 0.0]]);
        assert_eq!(s.deduplicate(1e-9), s);
    }

    #[test]
    fn dedup_planted_copies_matches_scan() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut feats: Vec<Vec<f64>> = (0..7)
            .map(|_| (0..5).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect();
        // three copies of earlier vectors interleaved
        feats.insert(3, feats[0].clone());
        feats.insert(6, feats[2].clone());
        feats.push(feats[4].clone());
        let s = set(feats.clone());
        let d = s.deduplicate(DEFAULT_DEDUP_EPS);

        // oracle: index i survives iff no earlier index holds the same vector
        let expected: Vec<String> = (0..feats.len())
            .filter(|&i| (0..i).all(|j| feats[j] != feats[i]))
            .map(|i| format!("s{i}"))
            .collect();
        let got: Vec<String> = d.samples().iter().map(|s| s.id.clone()).collect();
        assert_eq!(got.len(), 7);
        assert_eq!(got, expected);
    }

    #[test]
    fn distance_geometry() {
        let s = set(vec![
            vec![1.0, 0.0],
            vec![0.0, 1.0],
            vec![-1.0, 0.0],
            vec![1.0, 0.0],
        ]);
        let s = EmbeddingSet::new(s.into_samples().into_iter().enumerate().map(|(i, mut x)| {
            x.id = format!("u{i}");
            x
        }).collect()).unwrap().l2_normalize().unwrap();
        let d = pairwise_distances(&s);
        assert_eq!(d.get(0, 3), 0.0);
        assert!((d.get(0, 1) - std::f64::consts::SQRT_2).abs() < 1e-12);
        assert_eq!(d.get(0, 2), 2.0);
        assert_eq!(d.symmetry_defect(), (0.0, 0.0));
    }

    #[test]
    fn pairwise_thread_invariant() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let s = set((0..64)
            .map(|_| (0..16).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect())
        .l2_normalize()
        .unwrap();
        let a = pairwise_distances_with(&s, Exec::Sequential);
        let b = pairwise_distances_with(&s, Exec::Parallel);
        assert_eq!(a.values(), b.values());
    }

    fn features(max_n: usize, dim: usize) -> impl Strategy<Value = Vec<Vec<f64>>> {
        prop::collection::vec(
            prop::collection::vec(-1.0f64..1.0, dim)
                .prop_filter("non-zero", |v| norm(v) > 1e-3),
            1..max_n,
        )
    }

    proptest! {
        #[test]
        fn dedup_idempotent(feats in features(30, 3), eps in 0.0f64..0.8) {
            let s = set(feats);
            let once = s.deduplicate(eps);
            prop_assert_eq!(once.deduplicate(eps), once);
        }

        #[test]
        fn normalize_idempotent(feats in features(20, 4)) {
            let once = set(feats).l2_normalize().unwrap();
            let twice = once.l2_normalize().unwrap();
            for i in 0..once.len() {
                for (a, b) in once.feature(i).iter().zip(twice.feature(i)) {
                    prop_assert!((a - b).abs() <= 1e-9);
                }
                prop_assert!((norm(once.feature(i)) - 1.0).abs() <= NORM_TOLERANCE);
            }
        }

        #[test]
        fn distances_form_a_metric(feats in features(50, 5)) {
            let s = set(feats).l2_normalize().unwrap();
            let d = pairwise_distances(&s);
            let n = d.n();
            let (asym, diag) = d.symmetry_defect();
            prop_assert!(asym <= 1e-9 && diag == 0.0);
            for i in 0..n {
                for j in 0..n {
                    prop_assert!((0.0..=2.0 + 1e-12).contains(&d.get(i, j)));
                    for k in 0..n {
                        prop_assert!(d.get(i, k) <= d.get(i, j) + d.get(j, k) + 1e-9);
                    }
                }
            }
        }
    }
}
