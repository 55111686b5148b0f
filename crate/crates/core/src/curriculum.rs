//! Cluster selection: drop outliers and clusters seen by a single camera,
//! and measure how much of the target set survives.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use crate::data::EmbeddingSet;
use crate::optics::{ClusterAssignment, Label};

/// Which of the two filters are active. Both are on in the normal pipeline;
/// switching them off reproduces the ablation settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SelectionPolicy {
    pub drop_outliers: bool,
    pub drop_single_camera: bool,
}

impl Default for SelectionPolicy {
    fn default() -> Self {
        SelectionPolicy {
            drop_outliers: true,
            drop_single_camera: true,
        }
    }
}

impl SelectionPolicy {
    pub const UNFILTERED: SelectionPolicy = SelectionPolicy {
        drop_outliers: false,
        drop_single_camera: false,
    };
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedCluster {
    /// OPTICS cluster index, `None` for a kept outlier.
    pub source: Option<usize>,
    pub members: Vec<usize>,
    pub camera_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectedClusters {
    pub clusters: Vec<SelectedCluster>,
    pub reliability: f64,
    /// Size of the set the reliability is measured against.
    pub total: usize,
}

impl SelectedClusters {
    pub fn len(&self) -> usize {
        self.clusters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    pub fn camera_counts(&self) -> Vec<usize> {
        self.clusters.iter().map(|c| c.camera_count).collect()
    }

    pub fn selected_samples(&self) -> usize {
        self.clusters.iter().map(|c| c.members.len()).sum()
    }

    /// Sorted union of all members.
    pub fn member_indices(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.clusters.iter().flat_map(|c| c.members.iter().copied()).collect();
        all.sort_unstable();
        all
    }

    /// Rewrites member indices through `map` (global index -> new index).
    pub fn remap(&self, map: impl Fn(usize) -> usize) -> SelectedClusters {
        SelectedClusters {
            clusters: self
                .clusters
                .iter()
                .map(|c| SelectedCluster {
                    source: c.source,
                    members: c.members.iter().map(|&i| map(i)).collect(),
                    camera_count: c.camera_count,
                })
                .collect(),
            reliability: self.reliability,
            total: self.total,
        }
    }

    /// JSON snapshot with member ids instead of indices.
    pub fn snapshot(&self, set: &EmbeddingSet) -> serde_json::Value {
        let clusters: Vec<serde_json::Value> = self
            .clusters
            .iter()
            .map(|c| {
                serde_json::json!({
                    "source": c.source,
                    "camera_count": c.camera_count,
                    "members": c.members.iter().map(|&i| set.sample(i).id.as_str()).collect::<Vec<_>>(),
                })
            })
            .collect();
        serde_json::json!({
            "reliability": self.reliability,
            "total": self.total,
            "selected": self.selected_samples(),
            "clusters": clusters,
        })
    }
}

fn distinct_cameras(members: &[usize], set: &EmbeddingSet) -> usize {
    members.iter().map(|&i| set.camera(i)).collect::<BTreeSet<_>>().len()
}

pub fn select_clusters(assign: &ClusterAssignment, set: &EmbeddingSet) -> SelectedClusters {
    select_clusters_with(assign, set, SelectionPolicy::default())
}

/// Clusters keep OPTICS label order. Kept outliers follow as singleton
/// groups; they bypass the camera filter and, having no second camera, only
/// ever serve as negatives.
pub fn select_clusters_with(
    assign: &ClusterAssignment,
    set: &EmbeddingSet,
    policy: SelectionPolicy,
) -> SelectedClusters {
    assert_eq!(assign.labels.len(), set.len(), "labels must cover the set");
    let mut groups: Vec<Vec<usize>> = vec![Vec::new(); assign.num_clusters];
    let mut outliers = Vec::new();
    for (i, l) in assign.labels.iter().enumerate() {
        match l {
            Label::Cluster(c) => groups[*c].push(i),
            Label::Outlier => outliers.push(i),
        }
    }

    let mut clusters: Vec<SelectedCluster> = groups
        .into_iter()
        .enumerate()
        .filter(|(_, m)| !m.is_empty())
        .map(|(c, members)| SelectedCluster {
            source: Some(c),
            camera_count: distinct_cameras(&members, set),
            members,
        })
        .filter(|c| !policy.drop_single_camera || c.camera_count >= 2)
        .collect();
    if !policy.drop_outliers {
        clusters.extend(outliers.into_iter().map(|i| SelectedCluster {
            source: None,
            members: vec![i],
            camera_count: 1,
        }));
    }

    let kept: usize = clusters.iter().map(|c| c.members.len()).sum();
    let total = set.len();
    SelectedClusters {
        clusters,
        reliability: if total == 0 { 0.0 } else { kept as f64 / total as f64 },
        total,
    }
}

/// Per-iteration reliabilities, in iteration order.
pub fn reliability_series(history: &[SelectedClusters]) -> Vec<f64> {
    history.iter().map(|s| s.reliability).collect()
}
