//! Offline cross-camera triplet mining.
//!
//! For every selected cluster and every camera in it, `m` anchors are drawn
//! from that camera's members. Each anchor is paired with the median-distance
//! member of every other camera in the cluster as positive, and with the
//! nearest not-yet-used same-camera sample from another cluster as negative.

use std::cmp::Ordering;
use std::collections::{BTreeMap, HashSet};

use rand::seq::index::sample as sample_indices;
use serde::{Deserialize, Serialize};

use crate::curriculum::SelectedClusters;
use crate::data::{DistanceMatrix, EmbeddingSet};
use crate::error::{Error, Result};

pub const DEFAULT_ANCHORS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct MinerConfig {
    pub anchors_per_camera: usize,
    pub rng_seed: u64,
}

impl Default for MinerConfig {
    fn default() -> Self {
        MinerConfig {
            anchors_per_camera: DEFAULT_ANCHORS,
            rng_seed: 0,
        }
    }
}

impl MinerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.anchors_per_camera == 0 {
            return Err(Error::Config("anchors_per_camera must be at least 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Triplet {
    pub anchor: usize,
    pub positive: usize,
    pub negative: usize,
}

impl Triplet {
    pub fn new(anchor: usize, positive: usize, negative: usize) -> Self {
        Triplet {
            anchor,
            positive,
            negative,
        }
    }
}

/// Sorts candidates by distance to `anchor`, lower index first on ties.
fn by_distance(dist: &DistanceMatrix, anchor: usize, candidates: &mut [usize]) {
    let row = dist.row(anchor);
    candidates.sort_by(|&a, &b| {
        row[a]
            .partial_cmp(&row[b])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
}

/// Mines one pass of triplets. `cameras[i]` is the camera of sample `i`;
/// `dist` must cover every selected sample.
pub fn mine_triplets(
    sel: &SelectedClusters,
    cameras: &[u32],
    dist: &DistanceMatrix,
    cfg: &MinerConfig,
) -> Result<Vec<Triplet>> {
    cfg.validate()?;
    if sel.len() < 2 {
        return Err(Error::InsufficientClusters(sel.len()));
    }
    let mut rng = crate::seed::rng(cfg.rng_seed, &[crate::seed::stream::MINER]);

    // camera -> (cluster position, member) for negative lookup
    let mut by_camera: BTreeMap<u32, Vec<(usize, usize)>> = BTreeMap::new();
    for (ci, c) in sel.clusters.iter().enumerate() {
        for &m in &c.members {
            by_camera.entry(cameras[m]).or_default().push((ci, m));
        }
    }

    let mut used: HashSet<usize> = HashSet::new();
    let mut triplets = Vec::new();

    for (ci, cluster) in sel.clusters.iter().enumerate() {
        let mut per_camera: BTreeMap<u32, Vec<usize>> = BTreeMap::new();
        for &m in &cluster.members {
            per_camera.entry(cameras[m]).or_default().push(m);
        }
        if per_camera.len() < 2 {
            // no cross-camera positive exists; members still serve as negatives
            continue;
        }

        for (&cam, members) in &per_camera {
            let take = cfg.anchors_per_camera.min(members.len());
            let mut anchors: Vec<usize> = sample_indices(&mut rng, members.len(), take)
                .into_iter()
                .map(|k| members[k])
                .collect();
            anchors.sort_unstable();

            let mut negatives: Vec<usize> = by_camera
                .get(&cam)
                .map(|v| v.iter().filter(|(c, _)| *c != ci).map(|&(_, m)| m).collect())
                .unwrap_or_default();
            if negatives.is_empty() {
                log::warn!(
                    "cluster {ci}: no negatives with camera {cam} in other clusters; skipping its anchors"
                );
                continue;
            }

            for &anchor in &anchors {
                by_distance(dist, anchor, &mut negatives);
                for (&other, others) in &per_camera {
                    if other == cam {
                        continue;
                    }
                    let mut positives = others.clone();
                    by_distance(dist, anchor, &mut positives);
                    let positive = positives[(positives.len() - 1) / 2];

                    let negative = negatives
                        .iter()
                        .copied()
                        .find(|n| !used.contains(n))
                        .unwrap_or(negatives[0]);
                    used.insert(negative);
                    triplets.push(Triplet::new(anchor, positive, negative));
                }
            }
        }
    }
    Ok(triplets)
}

/// Checks every structural rule a mined triplet must satisfy.
pub fn triplet_violation(t: &Triplet, sel: &SelectedClusters, cameras: &[u32]) -> Option<String> {
    let cluster_of = |i: usize| sel.clusters.iter().position(|c| c.members.contains(&i));
    let (ca, cp, cn) = (cluster_of(t.anchor), cluster_of(t.positive), cluster_of(t.negative));
    if t.anchor == t.positive || t.anchor == t.negative || t.positive == t.negative {
        return Some("indices not distinct".into());
    }
    if ca.is_none() || ca != cp {
        return Some("positive outside the anchor's cluster".into());
    }
    if cn.is_none() || cn == ca {
        return Some("negative inside the anchor's cluster".into());
    }
    if cameras[t.anchor] == cameras[t.positive] {
        return Some("positive shares the anchor's camera".into());
    }
    if cameras[t.anchor] != cameras[t.negative] {
        return Some("negative from a different camera".into());
    }
    None
}

/// CSV `anchor_id,positive_id,negative_id`.
pub fn write_triplets_csv(
    triplets: &[Triplet],
    set: &EmbeddingSet,
    w: &mut impl std::io::Write,
) -> std::io::Result<()> {
    writeln!(w, "anchor_id,positive_id,negative_id")?;
    for t in triplets {
        writeln!(
            w,
            "{},{},{}",
            set.sample(t.anchor).id,
            set.sample(t.positive).id,
            set.sample(t.negative).id
        )?;
    }
    Ok(())
}
