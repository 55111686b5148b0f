use camreid::optics::xi_clusters;
use camreid::{extract_clusters_xi, optics_order, DistanceMatrix, Label, OpticsConfig};
use serde::Deserialize;

#[derive(Deserialize)]
struct Run {
    xi: f64,
    labels: Vec<i64>,
    hierarchy: Vec<[usize; 2]>,
}

#[derive(Deserialize)]
struct Instance {
    distances: Vec<Vec<f64>>,
    min_pts: usize,
    order: Vec<usize>,
    reachability: Vec<Option<f64>>,
    core_distance: Vec<f64>,
    runs: Vec<Run>,
}

#[derive(Deserialize)]
struct Fixture {
    two_blobs: Instance,
    jittered_blobs: Instance,
    two_hundred: Instance,
}

fn fixture() -> Fixture {
    serde_json::from_str(include_str!("fixtures/optics_oracle.json")).unwrap()
}

fn distances(rows: &[Vec<f64>]) -> DistanceMatrix {
    DistanceMatrix::from_vec(rows.len(), rows.len(), rows.concat()).unwrap()
}

fn labels(a: &camreid::ClusterAssignment) -> Vec<i64> {
    a.labels
        .iter()
        .map(|l| match l {
            Label::Cluster(c) => *c as i64,
            Label::Outlier => -1,
        })
        .collect()
}

fn check(inst: &Instance) {
    let d = distances(&inst.distances);
    let base = OpticsConfig {
        xi: inst.runs[0].xi,
        min_pts: inst.min_pts,
        max_eps: f64::INFINITY,
    };
    let plot = optics_order(&d, &base);
    assert_eq!(plot.order, inst.order);
    for (got, want) in plot.reachability.iter().zip(&inst.reachability) {
        match want {
            None => assert!(got.is_infinite()),
            Some(w) => assert!((got - w).abs() < 1e-12, "{got} vs {w}"),
        }
    }
    for (got, want) in plot.core_distance.iter().zip(&inst.core_distance) {
        assert!((got - want).abs() < 1e-12);
    }
    for run in &inst.runs {
        let cfg = OpticsConfig { xi: run.xi, ..base };
        assert_eq!(labels(&extract_clusters_xi(&plot, &cfg)), run.labels, "xi = {}", run.xi);
        let mut spans = xi_clusters(&plot, run.xi, inst.min_pts, inst.min_pts);
        let mut want: Vec<(usize, usize)> = run.hierarchy.iter().map(|h| (h[0], h[1])).collect();
        spans.sort_unstable();
        want.sort_unstable();
        assert_eq!(spans, want, "xi = {}", run.xi);
    }
}

#[test]
fn two_blobs_match_reference() {
    check(&fixture().two_blobs);
}

#[test]
fn jittered_blobs_match_reference() {
    check(&fixture().jittered_blobs);
}

#[test]
fn two_hundred_points_match_reference_at_every_xi() {
    check(&fixture().two_hundred);
}
