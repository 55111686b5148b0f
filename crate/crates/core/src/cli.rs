//! Command-line front end.
//!
//! Settings for `adapt` resolve in three layers: flags, then an optional
//! config file (JSON object or `key = value` lines), then built-in defaults.

use std::collections::{BTreeMap, HashSet};
use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::adaptation::{Adapter, IterationRecord, TrainConfig};
use crate::curriculum::SelectionPolicy;
use crate::data::{cross_distances, pairwise_distances, DistanceMatrix, EmbeddingSet, DEFAULT_DEDUP_EPS};
use crate::ensemble::{ensemble_distance, load_checkpoint_dir, load_head, save_head, self_ensemble, ModelBank};
use crate::error::{Error, Result};
use crate::eval::{evaluate, QueryGallerySplit, RetrievalReport};
use crate::io::{load_embeddings, save_embeddings, write_truth_csv, Format};
use crate::miner::{write_triplets_csv, MinerConfig};
use crate::optics::OpticsConfig;
use crate::rerank::{k_reciprocal_rerank, RerankConfig};
use crate::synth::{generate, generate_with_holdout, Preset};

pub const HISTORY_VERSION: u32 = 1;

#[derive(Debug, Parser)]
#[command(name = "camreid", version, about = "Cross-camera unsupervised adaptation of re-identification embeddings")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic multi-camera embedding set
    Synth(SynthArgs),
    /// Adapt a projection head to an unlabeled target set
    Adapt(AdaptArgs),
    /// Self-ensemble checkpoints, or fuse several models at inference
    Ensemble(EnsembleArgs),
    /// Evaluate retrieval on a labeled embedding set
    Evaluate(EvaluateArgs),
    /// Export per-iteration curves from a history file as CSV
    Curves(CurvesArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value = "separable")]
    pub preset: Preset,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Ground-truth CSV (id,camera,label)
    #[arg(long)]
    pub truth: Option<PathBuf>,
    /// Also write a held-out set with this many unseen identities
    #[arg(long, requires = "holdout_out")]
    pub holdout: Option<usize>,
    #[arg(long)]
    pub holdout_out: Option<PathBuf>,
    #[arg(long)]
    pub format: Option<Format>,
}

#[derive(Debug, Args, Default, Clone, Serialize, Deserialize)]
pub struct AdaptArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    #[serde(skip)]
    pub format: Option<Format>,
    /// Output directory for checkpoints, history and manifest
    #[arg(long)]
    pub out: PathBuf,
    /// JSON or key=value file with defaults for the flags below
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Labeled set evaluated after every iteration (never used for training)
    #[arg(long)]
    pub probe: Option<PathBuf>,
    /// Write reachability plots and first-epoch triplets per iteration
    #[arg(long)]
    #[serde(skip)]
    pub diagnostics: bool,

    #[command(flatten)]
    pub settings: AdaptSettings,
}

/// Every tunable of `adapt`. `None` means "not given at this layer".
#[derive(Debug, Args, Default, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdaptSettings {
    #[arg(long)]
    pub xi: Option<f64>,
    #[arg(long)]
    pub min_pts: Option<usize>,
    #[arg(long)]
    pub max_eps: Option<f64>,
    #[arg(long)]
    pub iterations: Option<usize>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub lr_drop_iter: Option<usize>,
    #[arg(long)]
    pub lr_drop_factor: Option<f64>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long)]
    pub margin: Option<f64>,
    #[arg(long)]
    pub anchors: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub dedup_eps: Option<f64>,
    #[arg(long)]
    pub out_dim: Option<usize>,
    #[arg(long)]
    pub weight_decay: Option<f64>,
    /// Keep OPTICS outliers (as singletons usable only as negatives)
    #[arg(long)]
    pub keep_outliers: Option<bool>,
    /// Keep clusters observed by a single camera
    #[arg(long)]
    pub keep_single_camera: Option<bool>,
}

macro_rules! layer {
    ($self:ident, $other:ident, $($f:ident),*) => {
        AdaptSettings { $($f: $self.$f.or($other.$f)),* }
    };
}

impl AdaptSettings {
    /// Fields set here win over `other`.
    pub fn over(self, other: AdaptSettings) -> AdaptSettings {
        layer!(self, other, xi, min_pts, max_eps, iterations, epochs, lr, lr_drop_iter, lr_drop_factor,
            batch_size, margin, anchors, seed, dedup_eps, out_dim, weight_decay, keep_outliers, keep_single_camera)
    }

    /// Parses a JSON object or flat `key = value` lines. Keys accept either
    /// `-` or `_` as separator.
    pub fn from_config_text(text: &str) -> Result<AdaptSettings> {
        let trimmed = text.trim_start();
        let value: serde_json::Value = if trimmed.starts_with('{') {
            serde_json::from_str(text)?
        } else {
            let mut map = serde_json::Map::new();
            for (n, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let (k, v) = line
                    .split_once('=')
                    .ok_or_else(|| Error::Config(format!("config line {}: expected key = value", n + 1)))?;
                let v = v.trim();
                let parsed = serde_json::from_str(v).unwrap_or_else(|_| serde_json::Value::String(v.to_string()));
                map.insert(k.trim().to_string(), parsed);
            }
            serde_json::Value::Object(map)
        };
        let serde_json::Value::Object(map) = value else {
            return Err(Error::Config("config file must hold an object".into()));
        };
        let normalized: serde_json::Map<String, serde_json::Value> =
            map.into_iter().map(|(k, v)| (k.replace('-', "_"), v)).collect();
        serde_json::from_value(serde_json::Value::Object(normalized))
            .map_err(|e| Error::Config(format!("config file: {e}")))
    }

    pub fn resolve(&self) -> Result<Resolved> {
        let d_train = TrainConfig::default();
        let d_optics = OpticsConfig::default();
        let seed = self.seed.unwrap_or(0);
        let optics = OpticsConfig {
            xi: self.xi.unwrap_or(d_optics.xi),
            min_pts: self.min_pts.unwrap_or(d_optics.min_pts),
            max_eps: self.max_eps.unwrap_or(d_optics.max_eps),
        };
        let miner = MinerConfig {
            anchors_per_camera: self.anchors.unwrap_or(MinerConfig::default().anchors_per_camera),
            rng_seed: crate::seed::derive(seed, &[crate::seed::stream::MINER]),
        };
        let train = TrainConfig {
            margin: self.margin.unwrap_or(d_train.margin),
            lr: self.lr.unwrap_or(d_train.lr),
            lr_drop_iteration: self.lr_drop_iter.unwrap_or(d_train.lr_drop_iteration),
            lr_drop_factor: self.lr_drop_factor.unwrap_or(d_train.lr_drop_factor),
            batch_size: self.batch_size.unwrap_or(d_train.batch_size),
            iterations: self.iterations.unwrap_or(d_train.iterations),
            epochs_per_iteration: self.epochs.unwrap_or(d_train.epochs_per_iteration),
            weight_decay: self.weight_decay.unwrap_or(d_train.weight_decay),
            rng_seed: crate::seed::derive(seed, &[crate::seed::stream::SHUFFLE]),
            out_dim: self.out_dim,
            ..d_train
        };
        let selection = SelectionPolicy {
            drop_outliers: !self.keep_outliers.unwrap_or(false),
            drop_single_camera: !self.keep_single_camera.unwrap_or(false),
        };
        let dedup_eps = self.dedup_eps.unwrap_or(DEFAULT_DEDUP_EPS);
        if !(dedup_eps >= 0.0) {
            return Err(Error::Config("dedup-eps must be >= 0".into()));
        }
        optics.validate()?;
        miner.validate()?;
        train.validate()?;
        Ok(Resolved {
            seed,
            dedup_eps,
            optics,
            miner,
            train,
            selection,
        })
    }
}

/// Fully resolved `adapt` configuration, as recorded in the manifest.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolved {
    pub seed: u64,
    pub dedup_eps: f64,
    pub optics: OpticsConfig,
    pub miner: MinerConfig,
    pub train: TrainConfig,
    pub selection: SelectionPolicy,
}

#[derive(Debug, Args)]
pub struct EnsembleArgs {
    /// Directory of *.ckpt files to self-ensemble
    #[arg(long, conflicts_with = "models")]
    pub checkpoints: Option<PathBuf>,
    /// Where to write the self-ensembled head
    #[arg(long, requires = "checkpoints")]
    pub out: Option<PathBuf>,
    /// Comma-separated heads to fuse at inference
    #[arg(long, value_delimiter = ',', requires = "embeddings")]
    pub models: Vec<PathBuf>,
    /// Comma-separated labeled embedding files, one per model
    #[arg(long, value_delimiter = ',')]
    pub embeddings: Vec<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOutputArgs,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub embeddings: PathBuf,
    #[arg(long)]
    pub format: Option<Format>,
    /// Head applied before computing distances; identity when omitted
    #[arg(long)]
    pub head: Option<PathBuf>,
    #[command(flatten)]
    pub eval: EvalOutputArgs,
}

#[derive(Debug, Args)]
pub struct EvalOutputArgs {
    /// File of query ids, one per line; default is the first sample of
    /// every (label, camera) pair
    #[arg(long)]
    pub query_ids: Option<PathBuf>,
    #[arg(long)]
    pub report: Option<PathBuf>,
    #[arg(long)]
    pub per_query_csv: Option<PathBuf>,
    #[arg(long)]
    pub rerank: bool,
    #[arg(long, default_value_t = 20)]
    pub k1: usize,
    #[arg(long, default_value_t = 6)]
    pub k2: usize,
    #[arg(long, default_value_t = 0.3)]
    pub lambda: f64,
}

#[derive(Debug, Args)]
pub struct CurvesArgs {
    #[arg(long)]
    pub history: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct HistoryFile {
    pub version: u32,
    pub iterations: Vec<IterationRecord>,
}

fn format_of(path: &Path, explicit: Option<Format>) -> Format {
    explicit.unwrap_or_else(|| Format::from_path(path))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

pub fn run(cli: Cli) -> Result<()> {
    if let Ok(v) = std::env::var("CAMREID_THREADS") {
        let threads: usize = v
            .parse()
            .map_err(|_| Error::Config(format!("CAMREID_THREADS must be a positive integer, got {v:?}")))?;
        crate::exec::limit_threads(threads);
    }
    match cli.command {
        Command::Synth(a) => synth(a),
        Command::Adapt(a) => adapt(a),
        Command::Ensemble(a) => ensemble(a),
        Command::Evaluate(a) => evaluate_cmd(a),
        Command::Curves(a) => export_curves(&a.history, &a.out).map(|_| ()),
    }
}

fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.preset.config(a.seed);
    let train = match (a.holdout, &a.holdout_out) {
        (Some(k), Some(path)) => {
            let (train, test) = generate_with_holdout(&cfg, k)?;
            save_embeddings(&test, path, format_of(path, a.format))?;
            train
        }
        _ => generate(&cfg)?,
    };
    save_embeddings(&train, &a.out, format_of(&a.out, a.format))?;
    if let Some(t) = &a.truth {
        write_truth_csv(&train, t)?;
    }
    log::info!("wrote {} samples to {}", train.len(), a.out.display());
    Ok(())
}

fn load_target(path: &Path, format: Option<Format>, dedup_eps: f64) -> Result<EmbeddingSet> {
    let raw = load_embeddings(path, format_of(path, format))?;
    raw.deduplicate(dedup_eps).l2_normalize()
}

fn adapt(a: AdaptArgs) -> Result<()> {
    let file_settings = match &a.config {
        Some(p) => AdaptSettings::from_config_text(&fs::read_to_string(p)?)?,
        None => AdaptSettings::default(),
    };
    let settings = a.settings.clone().over(file_settings);
    let resolved = settings.resolve()?;

    let input_bytes = fs::read(&a.embeddings)?;
    let raw = load_target(&a.embeddings, a.format, resolved.dedup_eps)?;

    let mut adapter = Adapter::new(resolved.optics, resolved.miner, resolved.train).with_selection(resolved.selection);
    if let Some(p) = &a.probe {
        let probe = load_embeddings(p, format_of(p, None))?.l2_normalize()?;
        adapter = adapter.with_probe(QueryGallerySplit::from_labeled(&probe)?);
    }
    if a.diagnostics {
        adapter = adapter.with_diagnostics();
    }
    let out = adapter.run(&raw)?;

    let ckpt_dir = a.out.join("checkpoints");
    let sel_dir = a.out.join("selections");
    fs::create_dir_all(&ckpt_dir)?;
    fs::create_dir_all(&sel_dir)?;
    for (c, sel) in out.checkpoints.iter().zip(&out.selections) {
        c.save(&ckpt_dir.join(format!("iter_{:04}.ckpt", c.iteration)))?;
        write_json(&sel_dir.join(format!("iter_{:04}.json", c.iteration)), &sel.snapshot(&raw))?;
    }
    if a.diagnostics {
        let diag = a.out.join("diagnostics");
        fs::create_dir_all(&diag)?;
        let ids: Vec<&str> = raw.samples().iter().map(|s| s.id.as_str()).collect();
        for (it, (plot, triplets)) in out.plots.iter().zip(&out.triplets).enumerate() {
            let mut w = BufWriter::new(File::create(diag.join(format!("reachability_{it:04}.csv")))?);
            plot.write_csv(&ids, &mut w)?;
            w.flush()?;
            let mut w = BufWriter::new(File::create(diag.join(format!("triplets_{it:04}.csv")))?);
            write_triplets_csv(triplets, &raw, &mut w)?;
            w.flush()?;
        }
    }
    save_head(&out.final_head, &a.out.join("last.head"))?;
    write_json(
        &a.out.join("history.json"),
        &HistoryFile {
            version: HISTORY_VERSION,
            iterations: out.history,
        },
    )?;

    let config_json = serde_json::to_vec(&resolved)?;
    let manifest = serde_json::json!({
        "tool_version": env!("CARGO_PKG_VERSION"),
        "formats": {
            "embeddings_binary": crate::io::BINARY_VERSION,
            "checkpoint": crate::ensemble::CHECKPOINT_VERSION,
            "history": HISTORY_VERSION,
        },
        "seed": resolved.seed,
        "config": resolved,
        "config_sha256": sha256_hex(&config_json),
        "input": a.embeddings.file_name().map(|f| f.to_string_lossy().into_owned()),
        "input_sha256": sha256_hex(&input_bytes),
        "samples": raw.len(),
    });
    write_json(&a.out.join("manifest.json"), &manifest)?;
    Ok(())
}

fn read_query_ids(path: &Path) -> Result<HashSet<String>> {
    Ok(fs::read_to_string(path)?
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty())
        .map(String::from)
        .collect())
}

fn split_of(set: &EmbeddingSet, query_ids: Option<&HashSet<String>>) -> Result<QueryGallerySplit> {
    match query_ids {
        Some(ids) => QueryGallerySplit::from_ids(set, ids),
        None => QueryGallerySplit::from_labeled(set),
    }
}

fn finish_eval(
    qg: DistanceMatrix,
    qq: impl FnOnce() -> DistanceMatrix,
    gg: impl FnOnce() -> DistanceMatrix,
    split: &QueryGallerySplit,
    out: &EvalOutputArgs,
) -> Result<RetrievalReport> {
    let dist = if out.rerank {
        let cfg = RerankConfig {
            k1: out.k1,
            k2: out.k2,
            lambda: out.lambda,
        };
        k_reciprocal_rerank(&qg, &gg(), &qq(), &cfg)?
    } else {
        qg
    };
    let report = evaluate(&dist, split)?;
    println!(
        "mAP {:.4}  rank1 {:.4}  rank5 {:.4}  rank10 {:.4}  ({} queries, {} skipped)",
        report.map,
        report.rank1,
        report.rank5,
        report.rank10,
        report.per_query.len(),
        report.skipped_queries.len()
    );
    if let Some(p) = &out.report {
        write_json(p, &report)?;
    }
    if let Some(p) = &out.per_query_csv {
        let mut w = BufWriter::new(File::create(p)?);
        report.write_per_query_csv(&mut w)?;
        w.flush()?;
    }
    Ok(report)
}

fn evaluate_cmd(a: EvaluateArgs) -> Result<()> {
    let set = load_embeddings(&a.embeddings, format_of(&a.embeddings, a.format))?.l2_normalize()?;
    let ids = a.eval.query_ids.as_deref().map(read_query_ids).transpose()?;
    let mut split = split_of(&set, ids.as_ref())?;
    if let Some(h) = &a.head {
        let head = load_head(h)?;
        split = QueryGallerySplit::new(head.project(&split.queries)?, head.project(&split.gallery)?)?;
    }
    let qg = cross_distances(&split.queries, &split.gallery);
    finish_eval(
        qg,
        || pairwise_distances(&split.queries),
        || pairwise_distances(&split.gallery),
        &split,
        &a.eval,
    )?;
    Ok(())
}

fn ensemble(a: EnsembleArgs) -> Result<()> {
    if let Some(dir) = &a.checkpoints {
        let checkpoints = load_checkpoint_dir(dir)?;
        if checkpoints.is_empty() {
            return Err(Error::Config(format!("no .ckpt files in {}", dir.display())));
        }
        let head = self_ensemble(&checkpoints)?;
        let out = a.out.clone().unwrap_or_else(|| dir.join("ensembled.head"));
        save_head(&head, &out)?;
        println!("self-ensembled {} checkpoints into {}", checkpoints.len(), out.display());
        return Ok(());
    }
    if a.models.is_empty() {
        return Err(Error::Config("give --checkpoints DIR or --models a,b --embeddings a,b".into()));
    }
    if a.models.len() != a.embeddings.len() {
        return Err(Error::Config(format!(
            "{} models but {} embedding files",
            a.models.len(),
            a.embeddings.len()
        )));
    }
    let heads = a.models.iter().map(|p| load_head(p)).collect::<Result<Vec<_>>>()?;
    let bank = ModelBank::new(heads)?;
    let ids = a.eval.query_ids.as_deref().map(read_query_ids).transpose()?;
    let splits = a
        .embeddings
        .iter()
        .map(|p| split_of(&load_embeddings(p, format_of(p, None))?.l2_normalize()?, ids.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let queries: Vec<EmbeddingSet> = splits.iter().map(|s| s.queries.clone()).collect();
    let gallery: Vec<EmbeddingSet> = splits.iter().map(|s| s.gallery.clone()).collect();
    let qg = ensemble_distance(&bank, &queries, &gallery)?;
    finish_eval(
        qg,
        || ensemble_distance(&bank, &queries, &queries).expect("aligned above"),
        || ensemble_distance(&bank, &gallery, &gallery).expect("aligned above"),
        &splits[0],
        &a.eval,
    )?;
    Ok(())
}

/// Writes one `iteration,value` CSV per curve and returns the file paths.
pub fn export_curves(history: &Path, out: &Path) -> Result<Vec<PathBuf>> {
    let text = fs::read_to_string(history)?;
    let parsed: HistoryFile = serde_json::from_str(&text).map_err(|e| Error::History {
        line: e.line(),
        message: e.to_string(),
    })?;
    fs::create_dir_all(out)?;
    type Pick = fn(&IterationRecord) -> Option<f64>;
    let curves: [(&str, Pick); 6] = [
        ("reliability", |r| Some(r.reliability)),
        ("loss", |r| r.loss),
        ("clusters", |r| Some(r.clusters as f64)),
        ("selected_clusters", |r| Some(r.selected_clusters as f64)),
        ("rank1", |r| r.rank1),
        ("map", |r| r.map),
    ];
    let mut written = Vec::new();
    for (name, pick) in curves {
        let path = out.join(format!("{name}.csv"));
        let mut w = BufWriter::new(File::create(&path)?);
        writeln!(w, "iteration,{name}")?;
        for r in &parsed.iterations {
            if let Some(v) = pick(r) {
                writeln!(w, "{},{}", r.iteration, v)?;
            }
        }
        w.flush()?;
        written.push(path);
    }
    Ok(written)
}

/// Reads an `iteration,value` CSV written by [`export_curves`].
pub fn read_curve(path: &Path) -> Result<BTreeMap<usize, f64>> {
    let text = fs::read_to_string(path)?;
    let mut out = BTreeMap::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let (i, v) = line
            .split_once(',')
            .ok_or_else(|| Error::format(path, format!("line {}: expected two columns", n + 1)))?;
        let i = i.parse().map_err(|_| Error::format(path, format!("line {}: bad iteration", n + 1)))?;
        let v = v.parse().map_err(|_| Error::format(path, format!("line {}: bad value", n + 1)))?;
        out.insert(i, v);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn settings_layering() {
        let flags = AdaptSettings {
            lr: Some(0.5),
            ..Default::default()
        };
        let file = AdaptSettings::from_config_text("lr = 0.1\nmin-pts = 4\n# comment\nkeep_outliers = true\n").unwrap();
        let merged = flags.over(file);
        assert_eq!(merged.lr, Some(0.5));
        assert_eq!(merged.min_pts, Some(4));
        let r = merged.resolve().unwrap();
        assert_eq!(r.train.lr, 0.5);
        assert_eq!(r.optics.min_pts, 4);
        assert_eq!(r.train.batch_size, 30);
        assert!(!r.selection.drop_outliers && r.selection.drop_single_camera);
    }

    #[test]
    fn json_config_and_unknown_keys() {
        let s = AdaptSettings::from_config_text(r#"{"xi": 0.1, "batch-size": 8}"#).unwrap();
        assert_eq!((s.xi, s.batch_size), (Some(0.1), Some(8)));
        assert!(AdaptSettings::from_config_text(r#"{"bogus": 1}"#).is_err());
        assert!(AdaptSettings::from_config_text("just words").is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let s = AdaptSettings {
            xi: Some(2.0),
            ..Default::default()
        };
        assert!(s.resolve().is_err());
        let s = AdaptSettings {
            margin: Some(0.0),
            ..Default::default()
        };
        assert!(s.resolve().is_err());
    }

    #[test]
    fn curves_from_empty_history() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("h.json");
        fs::write(&h, r#"{"version": 1, "iterations": []}"#).unwrap();
        let files = export_curves(&h, &dir.path().join("c")).unwrap();
        for f in files {
            let text = fs::read_to_string(f).unwrap();
            assert_eq!(text.lines().count(), 1);
            assert!(text.starts_with("iteration,"));
        }
    }

    #[test]
    fn malformed_history_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let h = dir.path().join("h.json");
        fs::write(&h, "{\n  \"version\": 1,\n  \"iterations\": [ oops ]\n}").unwrap();
        let err = export_curves(&h, dir.path()).unwrap_err();
        assert!(matches!(err, Error::History { line: 3, .. }), "{err}");
    }
}
