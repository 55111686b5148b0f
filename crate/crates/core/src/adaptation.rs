//! The iterative adaptation loop.
//!
//! Each iteration projects the whole target set with the current head,
//! clusters it, selects reliable clusters and then runs a number of epochs
//! over the selected samples only: re-project, mine cross-camera triplets,
//! shuffle into batches and take one Adam step per batch. The head after
//! every iteration is kept as a checkpoint weighted by that iteration's
//! reliability.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::curriculum::{select_clusters_with, SelectedClusters, SelectionPolicy};
use crate::data::{pairwise_distances, EmbeddingSet};
use crate::ensemble::Checkpoint;
use crate::error::{Error, Result};
use crate::eval::{evaluate, QueryGallerySplit};
use crate::head::{AdamConfig, ProjectionHead, TripletBatch};
use crate::miner::{mine_triplets, MinerConfig, Triplet};
use crate::optics::{extract_clusters_xi, optics_order, OpticsConfig, ReachabilityPlot};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub margin: f64,
    pub lr: f64,
    /// Number of iterations run at the base learning rate.
    pub lr_drop_iteration: usize,
    pub lr_drop_factor: f64,
    pub batch_size: usize,
    pub iterations: usize,
    pub epochs_per_iteration: usize,
    pub weight_decay: f64,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub rng_seed: u64,
    /// Output dimension of the head; `None` keeps the input dimension.
    pub out_dim: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            margin: 0.3,
            lr: 1e-4,
            lr_drop_iteration: 30,
            lr_drop_factor: 10.0,
            batch_size: 30,
            iterations: 50,
            epochs_per_iteration: 5,
            weight_decay: 0.0,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            rng_seed: 0,
            out_dim: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if !(self.margin > 0.0) {
            return bad("margin must be > 0");
        }
        if !(self.lr > 0.0) {
            return bad("lr must be > 0");
        }
        if !(self.lr_drop_factor > 0.0) {
            return bad("lr_drop_factor must be > 0");
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1");
        }
        if self.iterations == 0 {
            return bad("iterations must be >= 1");
        }
        if self.epochs_per_iteration == 0 {
            return bad("epochs_per_iteration must be >= 1");
        }
        if !(0.0..1.0).contains(&self.adam_beta1) || !(0.0..1.0).contains(&self.adam_beta2) {
            return bad("adam betas must be in [0, 1)");
        }
        if !(self.adam_eps > 0.0) || self.weight_decay < 0.0 {
            return bad("adam_eps must be > 0 and weight_decay >= 0");
        }
        if self.out_dim == Some(0) {
            return bad("out_dim must be >= 1");
        }
        Ok(())
    }

    /// Learning rate for a 0-based iteration.
    pub fn lr_at(&self, iteration: usize) -> f64 {
        if iteration < self.lr_drop_iteration {
            self.lr
        } else {
            self.lr / self.lr_drop_factor
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            beta1: self.adam_beta1,
            beta2: self.adam_beta2,
            eps: self.adam_eps,
            weight_decay: self.weight_decay,
        }
    }
}

/// One row of the training history.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub reliability: f64,
    /// Mean batch loss over all epochs; `None` when nothing was trained.
    pub loss: Option<f64>,
    pub clusters: usize,
    pub selected_clusters: usize,
    pub outliers: usize,
    pub triplets: usize,
    pub lr: f64,
    /// Probe metrics of the head after this iteration, when a labeled probe
    /// split was attached.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub rank1: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct AdaptationOutput {
    pub checkpoints: Vec<Checkpoint>,
    pub history: Vec<IterationRecord>,
    pub selections: Vec<SelectedClusters>,
    /// First-epoch triplets of every iteration, as indices into the input
    /// set, and the iteration's reachability plot. Both stay empty unless
    /// [`Adapter::with_diagnostics`] was used.
    pub triplets: Vec<Vec<Triplet>>,
    pub plots: Vec<ReachabilityPlot>,
    pub final_head: ProjectionHead,
}

/// Runs the loop with the given configuration.
#[derive(Debug, Clone)]
pub struct Adapter {
    pub optics: OpticsConfig,
    pub miner: MinerConfig,
    pub train: TrainConfig,
    pub selection: SelectionPolicy,
    probe: Option<QueryGallerySplit>,
    diagnostics: bool,
}

impl Adapter {
    pub fn new(optics: OpticsConfig, miner: MinerConfig, train: TrainConfig) -> Self {
        Adapter {
            optics,
            miner,
            train,
            selection: SelectionPolicy::default(),
            probe: None,
            diagnostics: false,
        }
    }

    pub fn with_diagnostics(mut self) -> Self {
        self.diagnostics = true;
        self
    }

    pub fn with_selection(mut self, policy: SelectionPolicy) -> Self {
        self.selection = policy;
        self
    }

    /// Evaluates the head on `probe` after every iteration. Labels in the
    /// probe never reach the training path.
    pub fn with_probe(mut self, probe: QueryGallerySplit) -> Self {
        self.probe = Some(probe);
        self
    }

    pub fn run(&self, raw: &EmbeddingSet) -> Result<AdaptationOutput> {
        self.run_from(raw, ProjectionHead::identity(raw.dim(), self.train.out_dim.unwrap_or(raw.dim())))
    }

    pub fn run_from(&self, raw: &EmbeddingSet, mut head: ProjectionHead) -> Result<AdaptationOutput> {
        self.optics.validate()?;
        self.miner.validate()?;
        self.train.validate()?;
        let cfg = &self.train;
        let adam = cfg.adam();
        let cameras: Vec<u32> = raw.samples().iter().map(|s| s.camera).collect();

        let mut checkpoints = Vec::with_capacity(cfg.iterations);
        let mut history = Vec::with_capacity(cfg.iterations);
        let mut selections = Vec::with_capacity(cfg.iterations);
        let mut triplet_log = Vec::new();
        let mut plots = Vec::new();

        for it in 0..cfg.iterations {
            let lr = cfg.lr_at(it);
            let feats = head.project(raw)?;
            let dist = pairwise_distances(&feats);
            let plot = optics_order(&dist, &self.optics);
            let assign = extract_clusters_xi(&plot, &self.optics);
            let sel = select_clusters_with(&assign, &feats, self.selection);
            log::info!(
                "iteration {it}: {} clusters, {} outliers, {} selected, reliability {:.4}",
                assign.num_clusters,
                assign.outliers(),
                sel.len(),
                sel.reliability
            );

            let mut losses = Vec::new();
            let mut triplet_total = 0;
            let mut first_epoch = Vec::new();
            if sel.len() < 2 {
                log::warn!("iteration {it}: {} selected clusters, skipping training", sel.len());
            } else {
                let members = sel.member_indices();
                let mut local = vec![usize::MAX; raw.len()];
                for (k, &g) in members.iter().enumerate() {
                    local[g] = k;
                }
                let local_sel = sel.remap(|g| local[g]);
                let local_cams: Vec<u32> = members.iter().map(|&g| cameras[g]).collect();
                let raw_sel = raw.subset(&members)?;

                for epoch in 0..cfg.epochs_per_iteration {
                    let sub = head.project(&raw_sel)?;
                    let sub_dist = pairwise_distances(&sub);
                    let miner = MinerConfig {
                        rng_seed: seed::derive(self.miner.rng_seed, &[it as u64, epoch as u64]),
                        ..self.miner
                    };
                    let mut triplets = mine_triplets(&local_sel, &local_cams, &sub_dist, &miner)?;
                    triplet_total += triplets.len();
                    if epoch == 0 && self.diagnostics {
                        first_epoch = triplets
                            .iter()
                            .map(|t| Triplet::new(members[t.anchor], members[t.positive], members[t.negative]))
                            .collect();
                    }
                    let mut rng = seed::rng(cfg.rng_seed, &[seed::stream::SHUFFLE, it as u64, epoch as u64]);
                    triplets.shuffle(&mut rng);

                    for (b, chunk) in triplets.chunks(cfg.batch_size).enumerate() {
                        let batch = TripletBatch::new(chunk.to_vec(), b)?;
                        losses.push(head.train_step(&batch, &raw_sel, cfg.margin, lr, &adam)?);
                    }
                }
            }

            let loss = (!losses.is_empty()).then(|| losses.iter().sum::<f64>() / losses.len() as f64);
            let (rank1, map) = match &self.probe {
                Some(probe) => {
                    let report = probe.evaluate_head(&head)?;
                    (Some(report.rank1), Some(report.map))
                }
                None => (None, None),
            };
            history.push(IterationRecord {
                iteration: it,
                reliability: sel.reliability,
                loss,
                clusters: assign.num_clusters,
                selected_clusters: sel.len(),
                outliers: assign.outliers(),
                triplets: triplet_total,
                lr,
                rank1,
                map,
            });
            checkpoints.push(Checkpoint::from_head(&head, sel.reliability, it));
            selections.push(sel);
            if self.diagnostics {
                triplet_log.push(first_epoch);
                plots.push(plot);
            }
        }

        Ok(AdaptationOutput {
            checkpoints,
            history,
            selections,
            triplets: triplet_log,
            plots,
            final_head: head,
        })
    }
}

/// Convenience wrapper using the default selection policy.
pub fn run_adaptation(
    raw: &EmbeddingSet,
    optics: &OpticsConfig,
    miner: &MinerConfig,
    train: &TrainConfig,
) -> Result<AdaptationOutput> {
    Adapter::new(*optics, *miner, *train).run(raw)
}

impl QueryGallerySplit {
    /// Projects both sides with `head` and evaluates.
    pub fn evaluate_head(&self, head: &ProjectionHead) -> Result<crate::eval::RetrievalReport> {
        let q = head.project(&self.queries)?;
        let g = head.project(&self.gallery)?;
        let dist = crate::data::cross_distances(&q, &g);
        evaluate(&dist, self)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Sample;

    #[test]
    fn defaults_match_reported_settings() {
        let t = TrainConfig::default();
        assert_eq!(t.margin, 0.3);
        assert_eq!(t.lr, 1e-4);
        assert_eq!(t.lr_drop_iteration, 30);
        assert_eq!(t.lr_drop_factor, 10.0);
        assert_eq!(t.batch_size, 30);
        assert_eq!((t.iterations, t.epochs_per_iteration), (50, 5));
        assert_eq!(t.weight_decay, 0.0);
        assert_eq!(MinerConfig::default().anchors_per_camera, 2);
        assert_eq!(OpticsConfig::default().xi, 0.05);
        t.validate().unwrap();
        assert_eq!(t.lr_at(0), 1e-4);
        assert_eq!(t.lr_at(29), 1e-4);
        assert_eq!(t.lr_at(30), 1e-5);
    }

    #[test]
    fn invalid_configs() {
        for f in [
            |t: &mut TrainConfig| t.margin = 0.0,
            |t: &mut TrainConfig| t.lr = -1.0,
            |t: &mut TrainConfig| t.batch_size = 0,
            |t: &mut TrainConfig| t.iterations = 0,
            |t: &mut TrainConfig| t.epochs_per_iteration = 0,
        ] {
            let mut t = TrainConfig::default();
            f(&mut t);
            assert!(t.validate().is_err());
        }
    }

    #[test]
    fn all_outliers_leaves_head_unchanged() {
        // four far-apart points never reach min_pts neighbors within max_eps
        let raw = EmbeddingSet::new(
            (0..4)
                .map(|i| {
                    let mut f = vec![0.0; 4];
                    f[i] = 1.0;
                    Sample::new(format!("s{i}"), i as u32, f)
                })
                .collect(),
        )
        .unwrap()
        .l2_normalize()
        .unwrap();
        let optics = OpticsConfig {
            max_eps: 0.5,
            min_pts: 2,
            ..Default::default()
        };
        let train = TrainConfig {
            iterations: 1,
            epochs_per_iteration: 1,
            ..Default::default()
        };
        let out = run_adaptation(&raw, &optics, &MinerConfig::default(), &train).unwrap();
        assert_eq!(out.checkpoints.len(), 1);
        assert_eq!(out.checkpoints[0].p, 0.0);
        assert_eq!(out.final_head, ProjectionHead::identity(4, 4));
        assert_eq!(out.history[0].loss, None);
    }
}
