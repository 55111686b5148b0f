//! OPTICS density ordering over a precomputed distance matrix and ξ-steep
//! cluster extraction.
//!
//! The ordering loop keeps one reachability value per sample and picks the
//! unprocessed sample with the smallest value next (lowest index on ties),
//! so auxiliary memory stays O(n) beyond the distance matrix.

use serde::{Deserialize, Serialize};

use crate::data::DistanceMatrix;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const DEFAULT_XI: f64 = 0.05;
pub const DEFAULT_MIN_PTS: usize = 5;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OpticsConfig {
    pub xi: f64,
    pub min_pts: usize,
    /// Neighborhood radius; `f64::INFINITY` disables it.
    pub max_eps: f64,
}

impl Default for OpticsConfig {
    fn default() -> Self {
        OpticsConfig {
            xi: DEFAULT_XI,
            min_pts: DEFAULT_MIN_PTS,
            max_eps: f64::INFINITY,
        }
    }
}

impl OpticsConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..=1.0).contains(&self.xi) {
            return Err(Error::Config(format!("xi must be in [0, 1], got {}", self.xi)));
        }
        if self.min_pts < 2 {
            return Err(Error::Config(format!(
                "min_pts must be at least 2, got {}",
                self.min_pts
            )));
        }
        if self.max_eps.is_nan() || self.max_eps < 0.0 {
            return Err(Error::Config(format!("max_eps must be >= 0, got {}", self.max_eps)));
        }
        Ok(())
    }
}

/// Output of the ordering pass. `reachability` is indexed by ordered
/// position; `core_distance` and `predecessor` by sample.
#[derive(Debug, Clone, PartialEq)]
pub struct ReachabilityPlot {
    pub order: Vec<usize>,
    pub reachability: Vec<f64>,
    pub core_distance: Vec<f64>,
    /// Sample from which each sample was last reached, if any.
    pub predecessor: Vec<Option<usize>>,
}

impl ReachabilityPlot {
    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// CSV rows `position,sample_id,reachability`.
    pub fn write_csv(&self, ids: &[&str], w: &mut impl std::io::Write) -> std::io::Result<()> {
        writeln!(w, "position,sample_id,reachability")?;
        for (pos, (&s, &r)) in self.order.iter().zip(&self.reachability).enumerate() {
            writeln!(w, "{pos},{},{r}", ids[s])?;
        }
        Ok(())
    }
}

/// Per-sample cluster label.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Cluster(usize),
    Outlier,
}

impl Label {
    pub fn cluster(self) -> Option<usize> {
        match self {
            Label::Cluster(c) => Some(c),
            Label::Outlier => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterAssignment {
    pub labels: Vec<Label>,
    pub num_clusters: usize,
}

impl ClusterAssignment {
    pub fn outliers(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Outlier).count()
    }

    pub fn cluster_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.num_clusters];
        for l in &self.labels {
            if let Label::Cluster(c) = l {
                sizes[*c] += 1;
            }
        }
        sizes
    }
}

/// Distance from each sample to its `min_pts`-th nearest neighbor, counting
/// the sample itself. Infinite when that exceeds `max_eps`.
pub fn core_distances(dist: &DistanceMatrix, min_pts: usize, max_eps: f64, exec: Exec) -> Vec<f64> {
    let n = dist.n();
    exec.map(n, |i| {
        if min_pts > n {
            return f64::INFINITY;
        }
        let mut row = dist.row(i).to_vec();
        let (_, kth, _) = row.select_nth_unstable_by(min_pts - 1, f64::total_cmp);
        if *kth > max_eps {
            f64::INFINITY
        } else {
            round15(*kth)
        }
    })
}

/// Rounds to 15 decimals so that distances differing only in the last ulp
/// tie, and ties resolve by sample index.
fn round15(x: f64) -> f64 {
    const SCALE: f64 = 1e15;
    if x.is_finite() {
        (x * SCALE).round_ties_even() / SCALE
    } else {
        x
    }
}

pub fn optics_order(dist: &DistanceMatrix, cfg: &OpticsConfig) -> ReachabilityPlot {
    optics_order_with(dist, cfg, Exec::default())
}

pub fn optics_order_with(dist: &DistanceMatrix, cfg: &OpticsConfig, exec: Exec) -> ReachabilityPlot {
    let n = dist.n();
    let core = core_distances(dist, cfg.min_pts, cfg.max_eps, exec);
    let mut reach = vec![f64::INFINITY; n];
    let mut predecessor = vec![None; n];
    let mut processed = vec![false; n];
    let mut order = Vec::with_capacity(n);

    for _ in 0..n {
        let mut point = usize::MAX;
        let mut best = f64::INFINITY;
        for (j, (&done, &r)) in processed.iter().zip(&reach).enumerate() {
            if done {
                continue;
            }
            if point == usize::MAX || r < best {
                point = j;
                best = r;
            }
        }
        processed[point] = true;
        order.push(point);

        let cd = core[point];
        if cd.is_finite() {
            let row = dist.row(point);
            for j in 0..n {
                if processed[j] || row[j] > cfg.max_eps {
                    continue;
                }
                let r = round15(cd.max(row[j]));
                if r < reach[j] {
                    reach[j] = r;
                    predecessor[j] = Some(point);
                }
            }
        }
    }

    let reachability = order.iter().map(|&p| reach[p]).collect();
    ReachabilityPlot {
        order,
        reachability,
        core_distance: core,
        predecessor,
    }
}

#[derive(Debug, Clone)]
struct SteepDownArea {
    start: usize,
    end: usize,
    mib: f64,
}

/// ξ-steep valley extraction. Returns `(start, end)` ordered-position spans,
/// inclusive, with inner clusters listed before the clusters enclosing them.
pub fn xi_clusters(plot: &ReachabilityPlot, xi: f64, min_pts: usize, min_cluster_size: usize) -> Vec<(usize, usize)> {
    let n = plot.len();
    // A trailing infinity lets a valley that runs to the end of the plot
    // close without an explicit steep-up area.
    let mut r = plot.reachability.clone();
    r.push(f64::INFINITY);
    let pred: Vec<Option<usize>> = plot.order.iter().map(|&s| plot.predecessor[s]).collect();

    // At xi = 1 the factor would be 0 and inf * 0 poisons the comparisons;
    // the smallest positive factor gives the xi -> 1 limit instead.
    let xi_c = (1.0 - xi).max(f64::MIN_POSITIVE);
    let ratio: Vec<f64> = (0..n).map(|i| r[i] / r[i + 1]).collect();
    let steep_up: Vec<bool> = ratio.iter().map(|&q| q <= xi_c).collect();
    let steep_down: Vec<bool> = ratio.iter().map(|&q| q >= 1.0 / xi_c).collect();
    let down: Vec<bool> = ratio.iter().map(|&q| q > 1.0).collect();
    let up: Vec<bool> = ratio.iter().map(|&q| q < 1.0).collect();

    let mut sdas: Vec<SteepDownArea> = Vec::new();
    let mut clusters = Vec::new();
    let mut index = 0usize;
    let mut mib = 0.0f64;

    for steep_index in (0..n).filter(|&i| steep_up[i] || steep_down[i]) {
        if steep_index < index {
            continue;
        }
        mib = mib.max(max_of(&r[index..=steep_index]));

        if steep_down[steep_index] {
            filter_sdas(&mut sdas, mib, xi_c, &r);
            let end = extend_region(&steep_down, &up, steep_index, min_pts);
            sdas.push(SteepDownArea {
                start: steep_index,
                end,
                mib: 0.0,
            });
            index = end + 1;
            mib = r[index];
        } else {
            filter_sdas(&mut sdas, mib, xi_c, &r);
            let u_start = steep_index;
            let u_end = extend_region(&steep_up, &down, u_start, min_pts);
            index = u_end + 1;
            mib = r[index];

            let mut found = Vec::new();
            for d in &sdas {
                let mut c_start = d.start;
                let mut c_end = u_end;

                if r[c_end + 1] * xi_c < d.mib {
                    continue;
                }

                let d_max = r[d.start];
                if d_max * xi_c >= r[c_end + 1] {
                    while r[c_start + 1] > r[c_end + 1] && c_start < d.end {
                        c_start += 1;
                    }
                } else if r[c_end + 1] * xi_c >= d_max {
                    while c_end > u_start && r[c_end - 1] > d_max {
                        c_end -= 1;
                    }
                }

                let Some((s, e)) = correct_predecessor(&r, &pred, &plot.order, c_start, c_end) else {
                    continue;
                };
                if e - s + 1 < min_cluster_size || s > d.end || e < u_start {
                    continue;
                }
                found.push((s, e));
            }
            found.reverse();
            clusters.extend(found);
        }
    }
    clusters
}

fn max_of(v: &[f64]) -> f64 {
    // NaN never appears in a reachability plot; infinities do.
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max)
}

fn filter_sdas(sdas: &mut Vec<SteepDownArea>, mib: f64, xi_c: f64, r: &[f64]) {
    if mib.is_infinite() {
        sdas.clear();
        return;
    }
    sdas.retain(|d| mib <= r[d.start] * xi_c);
    for d in sdas.iter_mut() {
        d.mib = d.mib.max(mib);
    }
}

/// Grows a steep area from `start` while it has no more than `min_pts`
/// consecutive non-steep points that still move in the same direction.
fn extend_region(steep: &[bool], same_dir: &[bool], start: usize, min_pts: usize) -> usize {
    let mut non_steep = 0;
    let mut end = start;
    for i in start..steep.len() {
        if steep[i] {
            non_steep = 0;
            end = i;
        } else if !same_dir[i] {
            non_steep += 1;
            if non_steep > min_pts {
                break;
            }
        } else {
            return end;
        }
    }
    end
}

/// Shrinks the cluster end until its last point was reached from inside the
/// cluster.
fn correct_predecessor(
    r: &[f64],
    pred: &[Option<usize>],
    order: &[usize],
    s: usize,
    mut e: usize,
) -> Option<(usize, usize)> {
    while s < e {
        if r[s] > r[e] {
            return Some((s, e));
        }
        if let Some(p) = pred[e] {
            if order[s..e].contains(&p) {
                return Some((s, e));
            }
        }
        e -= 1;
    }
    None
}

/// Flat labels from the ξ hierarchy, keeping innermost clusters. An outer
/// cluster is dropped whenever it overlaps one already labeled.
pub fn extract_clusters_xi(plot: &ReachabilityPlot, cfg: &OpticsConfig) -> ClusterAssignment {
    let n = plot.len();
    let spans = xi_clusters(plot, cfg.xi, cfg.min_pts, cfg.min_pts);
    let mut by_pos: Vec<Option<usize>> = vec![None; n];
    let mut next = 0;
    for (s, e) in spans {
        if by_pos[s..=e].iter().all(Option::is_none) {
            by_pos[s..=e].iter_mut().for_each(|l| *l = Some(next));
            next += 1;
        }
    }
    let mut labels = vec![Label::Outlier; n];
    for (pos, &sample) in plot.order.iter().enumerate() {
        if let Some(c) = by_pos[pos] {
            labels[sample] = Label::Cluster(c);
        }
    }
    ClusterAssignment {
        labels,
        num_clusters: next,
    }
}

/// Convenience: order then extract.
pub fn cluster(dist: &DistanceMatrix, cfg: &OpticsConfig) -> (ReachabilityPlot, ClusterAssignment) {
    let plot = optics_order(dist, cfg);
    let assign = extract_clusters_xi(&plot, cfg);
    (plot, assign)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn line(points: &[f64]) -> DistanceMatrix {
        DistanceMatrix::from_fn(points.len(), points.len(), |i, j| (points[i] - points[j]).abs())
    }

    fn cfg(xi: f64, min_pts: usize) -> OpticsConfig {
        OpticsConfig {
            xi,
            min_pts,
            max_eps: f64::INFINITY,
        }
    }

    #[test]
    fn single_point() {
        let plot = optics_order(&line(&[0.0]), &cfg(0.05, 2));
        assert_eq!(plot.order, vec![0]);
        assert_eq!(plot.reachability, vec![f64::INFINITY]);
        let a = extract_clusters_xi(&plot, &cfg(0.05, 2));
        assert_eq!((a.num_clusters, a.outliers()), (0, 1));
    }

    #[test]
    fn coincident_points() {
        let d = line(&[1.0; 5]);
        let plot = optics_order(&d, &cfg(0.05, 2));
        assert_eq!(plot.order, vec![0, 1, 2, 3, 4]);
        assert!(plot.reachability[0].is_infinite());
        assert!(plot.reachability[1..].iter().all(|&r| r == 0.0));
        for xi in [0.05, 1.0] {
            let a = extract_clusters_xi(&plot, &cfg(xi, 2));
            assert_eq!(a.num_clusters, 1, "xi = {xi}");
            assert_eq!(a.outliers(), 0);
        }
    }

    #[test]
    fn isolated_points_are_outliers() {
        let d = line(&[0.0, 10.0, 20.0, 30.0]);
        let plot = optics_order(&d, &cfg(0.05, 2).with_eps(1.0));
        assert!(plot.reachability.iter().all(|r| r.is_infinite()));
        let a = extract_clusters_xi(&plot, &cfg(0.05, 2));
        assert_eq!(a.num_clusters, 0);
        assert_eq!(a.outliers(), 4);
    }

    impl OpticsConfig {
        fn with_eps(mut self, e: f64) -> Self {
            self.max_eps = e;
            self
        }
    }

    #[test]
    fn config_validation() {
        assert!(cfg(0.05, 5).validate().is_ok());
        assert!(cfg(-0.1, 5).validate().is_err());
        assert!(cfg(1.1, 5).validate().is_err());
        assert!(cfg(0.5, 1).validate().is_err());
    }

    #[test]
    fn core_distance_counts_self() {
        let d = line(&[0.0, 1.0, 3.0]);
        assert_eq!(core_distances(&d, 2, f64::INFINITY, Exec::Sequential), vec![1.0, 1.0, 2.0]);
        assert_eq!(core_distances(&d, 3, 2.5, Exec::Sequential), vec![f64::INFINITY, 2.0, f64::INFINITY]);
    }

    #[test]
    fn order_is_a_permutation() {
        let pts: Vec<f64> = (0..40).map(|i| ((i * 37) % 23) as f64 * 0.1).collect();
        let plot = optics_order(&line(&pts), &cfg(0.05, 3));
        let mut o = plot.order.clone();
        o.sort_unstable();
        assert_eq!(o, (0..40).collect::<Vec<_>>());
    }
}
