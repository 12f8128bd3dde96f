//! Experiment orchestration: config parsing, environment construction, the
//! round loop, and CSV/JSON export.
//!
//! Config files are flat `key = value` text, one key per line, `#` starting
//! a comment. Planted clusters are declared with repeated `cluster` keys:
//!
//! ```text
//! dataset = synthetic
//! classes = 10
//! dim = 16
//! per_class = 200
//! cluster = 4 x 0-3 x 30
//! cluster = 6 x 4-9 x 30
//! algo = equitable
//! rounds = 50
//! cohort = 4
//! num_clusters = 2
//! seed = 1
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::data::{
    generate_synthetic, load_idx, partition_planted, ClusterSpec, Dataset, PartitionSpec,
};
use crate::error::{Error, Result};
use crate::federation::{run_round, Algorithm, HyperParams, ServerState, WeightMode};
use crate::metrics::RoundRecord;
use crate::model::{init_mlp, ActivationLayer};
use crate::rng::{purpose, stream};
use crate::Real;

/// Where the experiment's data comes from.
#[derive(Debug, Clone)]
pub enum DatasetSource {
    Synthetic {
        classes: usize,
        dim: usize,
        per_class: usize,
        test_per_class: usize,
        separation: f64,
        noise: f64,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
    },
}

/// A full experiment description.
#[derive(Debug, Clone)]
pub struct ExperimentConfig {
    pub source: DatasetSource,
    pub partition: PartitionSpec,
    /// Per-client, per-label sample count for held-out test shards.
    pub test_per_label: usize,
    /// Hidden layer widths; the input and class layers come from the data.
    pub hidden: Vec<usize>,
    pub hp: HyperParams,
    pub seed: u64,
    /// Evaluate metrics every this many rounds (the final round is always
    /// evaluated).
    pub eval_every: usize,
    /// Worker threads for local updates; has no effect on results.
    pub threads: usize,
    /// Output directory for CSV/JSON; nothing is written when `None`.
    pub out_dir: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            source: DatasetSource::Synthetic {
                classes: 10,
                dim: 16,
                per_class: 200,
                test_per_class: 200,
                separation: 4.0,
                noise: 1.0,
            },
            partition: PartitionSpec::default(),
            test_per_label: 10,
            hidden: vec![32],
            hp: HyperParams::default(),
            seed: 1,
            eval_every: 1,
            threads: 1,
            out_dir: None,
        }
    }
}

/// Summary of one run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub algo: String,
    pub seed: u64,
    pub records: Vec<RoundRecord>,
    /// Global test accuracy of the final model.
    pub final_global_acc: f64,
    /// Mean client disagreement over the final 20% of evaluated rounds.
    pub mean_cd_final: Option<f64>,
    /// Mean accuracy spread over the final 20% of evaluated rounds.
    pub mean_sigma_final: Option<f64>,
    /// Mean cluster-recovery score over all evaluated rounds that have one.
    pub mean_nmi: Option<f64>,
    pub total_runtime_s: f64,
}

impl ExperimentConfig {
    /// Parse a config file.
    pub fn from_file(path: &Path) -> Result<ExperimentConfig> {
        let text = fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::from_str_flat(&text)
    }

    /// Parse flat `key = value` text.
    pub fn from_str_flat(text: &str) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        let mut clusters: Vec<ClusterSpec> = Vec::new();
        let mut synth = match cfg.source.clone() {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
                noise,
            } => (classes, dim, per_class, test_per_class, separation, noise),
            DatasetSource::Idx { .. } => unreachable!("default source is synthetic"),
        };
        let mut dataset_kind = "synthetic".to_string();
        let mut idx_paths: [Option<PathBuf>; 4] = [None, None, None, None];
        let mut test_per_class_set = false;

        for raw in text.lines() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config(line.to_string(), "expected `key = value`")
            })?;
            let key = key.trim();
            let value = value.trim();
            match key {
                "dataset" => match value {
                    "synthetic" | "idx" => dataset_kind = value.to_string(),
                    other => {
                        return Err(Error::config(
                            "dataset",
                            format!("expected synthetic|idx, got `{other}`"),
                        ))
                    }
                },
                "classes" => synth.0 = parse_count(key, value)?,
                "dim" => synth.1 = parse_count(key, value)?,
                "per_class" => {
                    synth.2 = parse_count(key, value)?;
                    if !test_per_class_set {
                        synth.3 = synth.2;
                    }
                }
                "test_per_class" => {
                    synth.3 = parse_count(key, value)?;
                    test_per_class_set = true;
                }
                "separation" => synth.4 = parse_float(key, value)?,
                "noise" => synth.5 = parse_float(key, value)?,
                "train_images" => idx_paths[0] = Some(PathBuf::from(value)),
                "train_labels" => idx_paths[1] = Some(PathBuf::from(value)),
                "test_images" => idx_paths[2] = Some(PathBuf::from(value)),
                "test_labels" => idx_paths[3] = Some(PathBuf::from(value)),
                "cluster" => clusters.push(parse_cluster(value)?),
                "test_per_label" => cfg.test_per_label = parse_count(key, value)?,
                "hidden" => {
                    cfg.hidden = if value.is_empty() {
                        Vec::new()
                    } else {
                        value
                            .split(',')
                            .map(|tok| parse_count("hidden", tok.trim()))
                            .collect::<Result<_>>()?
                    }
                }
                "algo" => cfg.hp.algorithm = value.parse()?,
                "eta" => cfg.hp.eta = parse_float(key, value)?,
                "mu" => cfg.hp.mu = parse_float(key, value)?,
                "epochs" => cfg.hp.local_epochs = parse_count(key, value)?,
                "batch_size" => cfg.hp.batch_size = parse_count(key, value)?,
                "rounds" => cfg.hp.rounds = parse_count_allow_zero(key, value)?,
                "cohort" => cfg.hp.cohort_size = parse_count(key, value)?,
                "num_clusters" => cfg.hp.num_clusters = parse_count(key, value)?,
                "powd_d" => cfg.hp.powd_candidates = parse_count(key, value)?,
                "probe_size" => cfg.hp.probe_size = parse_count(key, value)?,
                "activation_layer" => {
                    cfg.hp.activation_layer = match value {
                        "penultimate" => ActivationLayer::Penultimate,
                        "final" => ActivationLayer::Final,
                        other => {
                            return Err(Error::config(
                                "activation_layer",
                                format!("expected penultimate|final, got `{other}`"),
                            ))
                        }
                    }
                }
                "normalize_similarity" => {
                    cfg.hp.normalize_similarity = parse_bool(key, value)?
                }
                "kmeans_restarts" => cfg.hp.kmeans_restarts = parse_count(key, value)?,
                "weight_mode" => {
                    cfg.hp.weight_mode = match value {
                        "proportional" => WeightMode::Proportional,
                        "uniform" => WeightMode::Uniform,
                        other => {
                            return Err(Error::config(
                                "weight_mode",
                                format!("expected proportional|uniform, got `{other}`"),
                            ))
                        }
                    }
                }
                "seed" => {
                    cfg.seed = value.parse().map_err(|_| {
                        Error::config("seed", format!("expected unsigned integer, got `{value}`"))
                    })?
                }
                "eval_every" => cfg.eval_every = parse_count(key, value)?,
                "threads" => cfg.threads = parse_count(key, value)?,
                "out_dir" => cfg.out_dir = Some(PathBuf::from(value)),
                other => {
                    return Err(Error::config(other.to_string(), "unknown key"));
                }
            }
        }

        cfg.partition = PartitionSpec { clusters };
        cfg.source = match dataset_kind.as_str() {
            "synthetic" => DatasetSource::Synthetic {
                classes: synth.0,
                dim: synth.1,
                per_class: synth.2,
                test_per_class: synth.3,
                separation: synth.4,
                noise: synth.5,
            },
            _ => {
                let [ti, tl, vi, vl] = idx_paths;
                DatasetSource::Idx {
                    train_images: ti
                        .ok_or_else(|| Error::config("train_images", "required for dataset = idx"))?,
                    train_labels: tl
                        .ok_or_else(|| Error::config("train_labels", "required for dataset = idx"))?,
                    test_images: vi
                        .ok_or_else(|| Error::config("test_images", "required for dataset = idx"))?,
                    test_labels: vl
                        .ok_or_else(|| Error::config("test_labels", "required for dataset = idx"))?,
                }
            }
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Structural validation (data capacity is checked when partitioning).
    pub fn validate(&self) -> Result<()> {
        if self.partition.clusters.is_empty() {
            return Err(Error::config("cluster", "at least one cluster line is required"));
        }
        if self.eval_every == 0 {
            return Err(Error::config("eval_every", "must be >= 1"));
        }
        if self.threads == 0 {
            return Err(Error::config("threads", "must be >= 1"));
        }
        if self.test_per_label == 0 {
            return Err(Error::config("test_per_label", "must be >= 1"));
        }
        match &self.source {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
                noise,
            } => {
                if *classes == 0 || *dim == 0 || *per_class == 0 || *test_per_class == 0 {
                    return Err(Error::config(
                        "classes/dim/per_class",
                        "synthetic dataset sizes must be >= 1",
                    ));
                }
                if !noise.is_finite() || *noise <= 0.0 {
                    return Err(Error::config("noise", "must be > 0"));
                }
                if !separation.is_finite() {
                    return Err(Error::config("separation", "must be finite"));
                }
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                for (field, path) in [
                    ("train_images", train_images),
                    ("train_labels", train_labels),
                    ("test_images", test_images),
                    ("test_labels", test_labels),
                ] {
                    if !path.is_file() {
                        return Err(Error::config(
                            field,
                            format!("file not found: {}", path.display()),
                        ));
                    }
                }
            }
        }
        self.hp.validate(self.partition.total_clients())?;
        Ok(())
    }

    /// Canonical flat rendering of the config (parses back to itself).
    pub fn to_flat_string(&self) -> String {
        let mut s = String::new();
        match &self.source {
            DatasetSource::Synthetic {
                classes,
                dim,
                per_class,
                test_per_class,
                separation,
                noise,
            } => {
                let _ = writeln!(s, "dataset = synthetic");
                let _ = writeln!(s, "classes = {classes}");
                let _ = writeln!(s, "dim = {dim}");
                let _ = writeln!(s, "per_class = {per_class}");
                let _ = writeln!(s, "test_per_class = {test_per_class}");
                let _ = writeln!(s, "separation = {separation}");
                let _ = writeln!(s, "noise = {noise}");
            }
            DatasetSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
            } => {
                let _ = writeln!(s, "dataset = idx");
                let _ = writeln!(s, "train_images = {}", train_images.display());
                let _ = writeln!(s, "train_labels = {}", train_labels.display());
                let _ = writeln!(s, "test_images = {}", test_images.display());
                let _ = writeln!(s, "test_labels = {}", test_labels.display());
            }
        }
        for c in &self.partition.clusters {
            let labels = c
                .labels
                .iter()
                .map(usize::to_string)
                .collect::<Vec<_>>()
                .join(",");
            let _ = writeln!(
                s,
                "cluster = {} x {} x {}",
                c.client_count, labels, c.samples_per_label_per_client
            );
        }
        let _ = writeln!(s, "test_per_label = {}", self.test_per_label);
        let hidden = self
            .hidden
            .iter()
            .map(usize::to_string)
            .collect::<Vec<_>>()
            .join(",");
        let _ = writeln!(s, "hidden = {hidden}");
        let _ = writeln!(s, "algo = {}", self.hp.algorithm);
        let _ = writeln!(s, "eta = {}", self.hp.eta);
        let _ = writeln!(s, "mu = {}", self.hp.mu);
        let _ = writeln!(s, "epochs = {}", self.hp.local_epochs);
        let _ = writeln!(s, "batch_size = {}", self.hp.batch_size);
        let _ = writeln!(s, "rounds = {}", self.hp.rounds);
        let _ = writeln!(s, "cohort = {}", self.hp.cohort_size);
        let _ = writeln!(s, "num_clusters = {}", self.hp.num_clusters);
        if self.hp.powd_candidates > 0 {
            let _ = writeln!(s, "powd_d = {}", self.hp.powd_candidates);
        }
        let _ = writeln!(s, "probe_size = {}", self.hp.probe_size);
        let _ = writeln!(
            s,
            "activation_layer = {}",
            match self.hp.activation_layer {
                ActivationLayer::Penultimate => "penultimate",
                ActivationLayer::Final => "final",
            }
        );
        let _ = writeln!(s, "normalize_similarity = {}", self.hp.normalize_similarity);
        let _ = writeln!(s, "kmeans_restarts = {}", self.hp.kmeans_restarts);
        let _ = writeln!(
            s,
            "weight_mode = {}",
            match self.hp.weight_mode {
                WeightMode::Proportional => "proportional",
                WeightMode::Uniform => "uniform",
            }
        );
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "threads = {}", self.threads);
        if let Some(dir) = &self.out_dir {
            let _ = writeln!(s, "out_dir = {}", dir.display());
        }
        s
    }
}

fn parse_count(field: &str, value: &str) -> Result<usize> {
    let n: usize = value.parse().map_err(|_| {
        Error::config(field.to_string(), format!("expected positive integer, got `{value}`"))
    })?;
    if n == 0 {
        return Err(Error::config(field.to_string(), "must be >= 1"));
    }
    Ok(n)
}

fn parse_count_allow_zero(field: &str, value: &str) -> Result<usize> {
    value.parse().map_err(|_| {
        Error::config(field.to_string(), format!("expected integer, got `{value}`"))
    })
}

fn parse_float(field: &str, value: &str) -> Result<f64> {
    let v: f64 = value.parse().map_err(|_| {
        Error::config(field.to_string(), format!("expected number, got `{value}`"))
    })?;
    if !v.is_finite() {
        return Err(Error::config(field.to_string(), "must be finite"));
    }
    Ok(v)
}

fn parse_bool(field: &str, value: &str) -> Result<bool> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        other => Err(Error::config(
            field.to_string(),
            format!("expected true|false, got `{other}`"),
        )),
    }
}

/// `COUNT x LABELS x PER` where LABELS is a comma list of labels or ranges,
/// e.g. `4 x 0-3 x 800` or `2 x 0,5,7 x 10`.
fn parse_cluster(value: &str) -> Result<ClusterSpec> {
    let parts: Vec<&str> = value.split('x').map(str::trim).collect();
    if parts.len() != 3 {
        return Err(Error::config(
            "cluster",
            format!("expected `COUNT x LABELS x PER`, got `{value}`"),
        ));
    }
    let client_count = parse_count("cluster", parts[0])?;
    let mut labels = Vec::new();
    for token in parts[1].split(',') {
        let token = token.trim();
        match token.split_once('-') {
            Some((a, b)) => {
                let lo: usize = a.trim().parse().map_err(|_| {
                    Error::config("cluster", format!("bad label range `{token}`"))
                })?;
                let hi: usize = b.trim().parse().map_err(|_| {
                    Error::config("cluster", format!("bad label range `{token}`"))
                })?;
                if hi < lo {
                    return Err(Error::config(
                        "cluster",
                        format!("empty label range `{token}`"),
                    ));
                }
                labels.extend(lo..=hi);
            }
            None => labels.push(token.parse().map_err(|_| {
                Error::config("cluster", format!("bad label `{token}`"))
            })?),
        }
    }
    let per = parse_count("cluster", parts[2])?;
    Ok(ClusterSpec {
        client_count,
        labels,
        samples_per_label_per_client: per,
    })
}

/// Build the datasets, partition them, and initialize the server state.
pub fn build_state(config: &ExperimentConfig) -> Result<ServerState<Real>> {
    let (train, test): (Dataset<Real>, Dataset<Real>) = match &config.source {
        DatasetSource::Synthetic {
            classes,
            dim,
            per_class,
            test_per_class,
            separation,
            noise,
        } => {
            let train = generate_synthetic(
                *classes,
                *dim,
                *per_class,
                *separation,
                *noise,
                &mut stream(config.seed, &[purpose::DATA_TRAIN]),
            )?;
            let test = generate_synthetic(
                *classes,
                *dim,
                *test_per_class,
                *separation,
                *noise,
                &mut stream(config.seed, &[purpose::DATA_TEST]),
            )?;
            (train, test)
        }
        DatasetSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
        } => {
            let train = load_idx(train_images, train_labels)?;
            let test = load_idx(test_images, test_labels)?;
            (train, test)
        }
    };

    let clients = partition_planted(
        &train,
        &config.partition,
        &mut stream(config.seed, &[purpose::PARTITION_TRAIN]),
    )?;
    let test_spec = config.partition.with_samples_per_label(config.test_per_label);
    let test_clients = partition_planted(
        &test,
        &test_spec,
        &mut stream(config.seed, &[purpose::PARTITION_TEST]),
    )?;

    let mut layer_sizes = Vec::with_capacity(config.hidden.len() + 2);
    layer_sizes.push(train.dim());
    layer_sizes.extend_from_slice(&config.hidden);
    layer_sizes.push(train.num_classes);
    let global = init_mlp(
        &layer_sizes,
        &mut stream(config.seed, &[purpose::MODEL_INIT]),
    )?;

    Ok(ServerState {
        global,
        test_shards: test_clients.into_iter().map(|c| c.shard).collect(),
        clients,
        global_test: test,
        seed: config.seed,
        round: 0,
    })
}

/// Run a configured experiment end to end, writing CSV/JSON when an output
/// directory is configured. Fully deterministic given `(config, seed)`.
pub fn run_experiment(config: &ExperimentConfig) -> Result<RunSummary> {
    let start = Instant::now();
    config.validate()?;
    let mut state = build_state(config)?;
    let k_total = config.hp.rounds;

    let mut records: Vec<RoundRecord> = Vec::new();
    for k in 0..k_total {
        let with_eval = (k + 1) % config.eval_every == 0 || k + 1 == k_total;
        match run_round(&mut state, &config.hp, config.threads, with_eval) {
            Ok(Some(record)) => records.push(record),
            Ok(None) => {}
            Err(err) => {
                // Flush what we have before surfacing the failure.
                if let Some(dir) = &config.out_dir {
                    let _ = write_run_outputs(&records, config, dir);
                }
                return Err(err);
            }
        }
    }

    let (_, final_acc) =
        crate::metrics::loss_and_accuracy(&state.global, &state.global_test)?;

    let window = final_window(&records);
    let mean_cd_final = mean_of(window.iter().map(|r| r.cd));
    let mean_sigma_final = mean_of(window.iter().map(|r| r.sigma_acc));
    let mean_nmi = mean_of(records.iter().filter_map(|r| r.nmi));

    if let Some(dir) = &config.out_dir {
        write_run_outputs(&records, config, dir)?;
    }

    Ok(RunSummary {
        algo: config.hp.algorithm.name().to_string(),
        seed: config.seed,
        records,
        final_global_acc: final_acc,
        mean_cd_final,
        mean_sigma_final,
        mean_nmi,
        total_runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// The final 20% of evaluated rounds (at least one when any exist).
fn final_window(records: &[RoundRecord]) -> &[RoundRecord] {
    if records.is_empty() {
        return records;
    }
    let n = records.len().div_ceil(5);
    &records[records.len() - n.max(1)..]
}

fn mean_of(values: impl Iterator<Item = f64>) -> Option<f64> {
    let collected: Vec<f64> = values.collect();
    if collected.is_empty() {
        None
    } else {
        Some(collected.iter().sum::<f64>() / collected.len() as f64)
    }
}

/// Nine-decimal fixed formatting: stable bytes, parses back within 5e-10.
pub fn format_float(v: f64) -> String {
    format!("{v:.9}")
}

/// Write the per-round CSV (schema:
/// `round,algo,global_acc,mean_client_loss,cd,sigma_acc,nmi,seed`) and a
/// companion `.json` with full per-client detail.
pub fn write_records(records: &[RoundRecord], csv_path: &Path) -> Result<()> {
    let mut csv = String::from("round,algo,global_acc,mean_client_loss,cd,sigma_acc,nmi,seed\n");
    for r in records {
        let nmi_field = r.nmi.map(format_float).unwrap_or_default();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            r.round,
            r.algo,
            format_float(r.global_acc),
            format_float(r.mean_client_loss),
            format_float(r.cd),
            format_float(r.sigma_acc),
            nmi_field,
            r.seed
        );
    }
    write_text(csv_path, &csv)?;

    let json_path = csv_path.with_extension("json");
    let json = serde_json::to_string_pretty(records).expect("records serialize");
    write_text(&json_path, &json)
}

fn write_run_outputs(
    records: &[RoundRecord],
    config: &ExperimentConfig,
    dir: &Path,
) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|source| Error::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let stem = format!("run_{}_seed{}", config.hp.algorithm.name(), config.seed);
    let csv_path = dir.join(format!("{stem}.csv"));
    write_records(records, &csv_path)?;
    write_text(&dir.join(format!("{stem}.config")), &config.to_flat_string())?;
    Ok(csv_path)
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Paired multi-seed, multi-algorithm sweep. Every run shares the same
/// data/partition streams per seed, so shards are identical across
/// algorithms and comparisons are paired.
pub fn run_sweep(
    base: &ExperimentConfig,
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> Result<Vec<RunSummary>> {
    if algorithms.is_empty() || seeds.is_empty() {
        return Err(Error::contract("sweep needs at least one algorithm and seed"));
    }
    let mut summaries = Vec::with_capacity(algorithms.len() * seeds.len());
    for &algorithm in algorithms {
        for &seed in seeds {
            let mut config = base.clone();
            config.hp.algorithm = algorithm;
            config.seed = seed;
            summaries.push(run_experiment(&config)?);
        }
    }
    if let Some(dir) = &base.out_dir {
        let csv = sweep_summary_csv(&summaries, algorithms, seeds);
        fs::create_dir_all(dir).map_err(|source| Error::Io {
            path: dir.to_path_buf(),
            source,
        })?;
        write_text(&dir.join("sweep_summary.csv"), &csv)?;
    }
    Ok(summaries)
}

/// Per-algorithm mean and sample standard deviation over seeds for the
/// headline metrics.
pub fn sweep_summary_csv(
    summaries: &[RunSummary],
    algorithms: &[Algorithm],
    seeds: &[u64],
) -> String {
    let mut csv = String::from(
        "algo,seeds,acc_mean,acc_std,cd_mean,cd_std,sigma_acc_mean,sigma_acc_std,nmi_mean,nmi_std\n",
    );
    let seeds_str = seeds
        .iter()
        .map(u64::to_string)
        .collect::<Vec<_>>()
        .join(";");
    for algorithm in algorithms {
        let runs: Vec<&RunSummary> = summaries
            .iter()
            .filter(|s| s.algo == algorithm.name())
            .collect();
        let accs: Vec<f64> = runs.iter().map(|s| s.final_global_acc).collect();
        let cds: Vec<f64> = runs.iter().filter_map(|s| s.mean_cd_final).collect();
        let sigmas: Vec<f64> = runs.iter().filter_map(|s| s.mean_sigma_final).collect();
        let nmis: Vec<f64> = runs.iter().filter_map(|s| s.mean_nmi).collect();
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{},{},{}",
            algorithm.name(),
            seeds_str,
            stat(&accs, Stat::Mean),
            stat(&accs, Stat::Std),
            stat(&cds, Stat::Mean),
            stat(&cds, Stat::Std),
            stat(&sigmas, Stat::Mean),
            stat(&sigmas, Stat::Std),
            stat(&nmis, Stat::Mean),
            stat(&nmis, Stat::Std),
        );
    }
    csv
}

enum Stat {
    Mean,
    Std,
}

fn stat(values: &[f64], which: Stat) -> String {
    if values.is_empty() {
        return String::new();
    }
    let mean = values.iter().sum::<f64>() / values.len() as f64;
    match which {
        Stat::Mean => format_float(mean),
        Stat::Std => {
            if values.len() < 2 {
                format_float(0.0)
            } else {
                let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
                    / (values.len() - 1) as f64;
                format_float(var.sqrt())
            }
        }
    }
}
