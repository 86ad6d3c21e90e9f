use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use imbal_core::aggregate::{feature_space_from, normalize, prepared_features, AggregationConfig};
use imbal_core::classifier::{predict, read_checkpoint, train, write_checkpoint, Activation, Channel, Mode, Reduction};
use imbal_core::edgegen::{noise_experiment, NoiseConfig, NoiseReport};
use imbal_core::graph::{FeatureMatrix, LabelSet, SparseGraph, Split};
use imbal_core::harness::{
    generate_synth, run_on, subsample_keep, subsample_to_ratio, sweep_csv, sweep_lambda, DataSource, ExperimentConfig, Method,
    SynthSpec,
};
use imbal_core::io::{self, load_dataset, LoadedDataset};
use imbal_core::metrics::evaluate;
use imbal_core::oversample::{oversample_channels, BalanceTarget};

#[derive(Parser)]
#[command(name = "imbal", version, about = "Imbalanced node classification on multi-relational graphs")]
struct Cli {
    /// Experiment config (JSON). Its sections also supply defaults for the
    /// single-stage subcommands.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out_dir: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct DataArgs {
    #[arg(long)]
    edges: PathBuf,
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    /// Keep edge orientation instead of symmetrizing.
    #[arg(long)]
    directed: bool,
}

impl DataArgs {
    fn load(&self) -> Result<LoadedDataset> {
        load_dataset(&self.edges, &self.features, &self.labels, !self.directed)
            .with_context(|| format!("loading dataset from {}", self.features.display()))
    }

    fn source(&self) -> DataSource {
        DataSource::Files {
            edges: self.edges.clone(),
            features: self.features.clone(),
            labels: self.labels.clone(),
            directed: self.directed,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the two-block synthetic benchmark.
    Synth {
        #[arg(long, default_value_t = 1000)]
        nodes: usize,
        #[arg(long, default_value_t = 0.1)]
        rho: f64,
        #[arg(long, default_value_t = 0.05)]
        intra_p: f64,
        #[arg(long, default_value_t = 0.03)]
        inter_p: f64,
        #[arg(long, default_value_t = 16)]
        dim: usize,
        #[arg(long, default_value_t = 1.0)]
        separation: f64,
    },
    /// Propagate features over each relation: X.bin, or X.r{i}.bin per relation.
    Aggregate {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        hops: Option<usize>,
        #[arg(long)]
        no_concat: bool,
        #[arg(long)]
        no_standardize: bool,
    },
    /// SMOTE the training set of aggregated channels.
    Oversample {
        /// One file per channel, all with the same node ids.
        #[arg(long = "x", required = true)]
        channels: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        k: Option<usize>,
        /// Fill every class to this many train rows instead of the majority count.
        #[arg(long)]
        target: Option<usize>,
    },
    /// Train a classifier and write model.igm.
    Train {
        #[arg(long = "x", required = true)]
        channels: Vec<PathBuf>,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "os_mlp")]
        mode: String,
        /// Graph for the gcn mode.
        #[arg(long)]
        edges: Option<PathBuf>,
        #[command(flatten)]
        hyper: HyperArgs,
    },
    /// Predict with a trained model: predictions.csv.
    Predict {
        #[arg(long)]
        model: PathBuf,
        #[arg(long = "x", required = true)]
        channels: Vec<PathBuf>,
        #[arg(long)]
        edges: Option<PathBuf>,
    },
    /// Score predictions.csv against a label file: metrics.json.
    Evaluate {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        minority: Option<usize>,
    },
    /// Repeated end-to-end runs: results.json and results.csv.
    Run {
        #[command(flatten)]
        run: RunArgs,
    },
    /// Repeat `run` across loss weights: sweep.csv.
    SweepLambda {
        #[command(flatten)]
        run: RunArgs,
        #[arg(long, value_delimiter = ',', default_value = "0,0.2,0.4,0.6,0.8,1")]
        lambdas: Vec<f64>,
    },
    /// Drop minority nodes down to a target ratio and write the dataset.
    SubsampleRho {
        #[command(flatten)]
        data: DataArgs,
        #[arg(long)]
        rho: f64,
    },
    /// Learn an edge generator, then compare GCN accuracy on true vs generated edges.
    EdgeNoise {
        #[command(flatten)]
        data: OptData,
        #[arg(long, default_value_t = 5)]
        seeds: u64,
    },
}

#[derive(Args, Clone)]
struct OptData {
    #[arg(long, requires_all = ["features", "labels"])]
    edges: Option<PathBuf>,
    #[arg(long)]
    features: Option<PathBuf>,
    #[arg(long)]
    labels: Option<PathBuf>,
    #[arg(long)]
    directed: bool,
}

impl OptData {
    fn resolve(&self) -> Option<DataArgs> {
        Some(DataArgs {
            edges: self.edges.clone()?,
            features: self.features.clone()?,
            labels: self.labels.clone()?,
            directed: self.directed,
        })
    }
}

#[derive(Args, Clone)]
struct RunArgs {
    #[command(flatten)]
    data: OptData,
    #[arg(long)]
    method: Option<Method>,
    #[arg(long)]
    repetitions: Option<usize>,
    /// Sum the loss over rows instead of averaging.
    #[arg(long)]
    sum_reduction: bool,
    /// Run repetitions concurrently. Results are identical either way.
    #[arg(long)]
    parallel: bool,
    #[command(flatten)]
    hyper: HyperArgs,
}

#[derive(Args, Clone, Default)]
struct HyperArgs {
    #[arg(long)]
    lambda: Option<f64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    weight_decay: Option<f64>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    hidden: Option<usize>,
    #[arg(long)]
    dropout: Option<f64>,
    #[arg(long)]
    patience: Option<usize>,
    /// Replace the ReLU with the identity.
    #[arg(long)]
    linear: bool,
}

impl HyperArgs {
    fn apply(&self, cfg: &mut ExperimentConfig) {
        let t = &mut cfg.train;
        if let Some(v) = self.lambda {
            t.lambda = v;
        }
        if let Some(v) = self.lr {
            t.lr = v;
        }
        if let Some(v) = self.weight_decay {
            t.weight_decay = v;
        }
        if let Some(v) = self.epochs {
            t.max_epochs = v;
        }
        if let Some(v) = self.hidden {
            t.hidden = v;
        }
        if let Some(v) = self.dropout {
            t.dropout = v;
        }
        if let Some(v) = self.patience {
            t.early_stop_patience = v;
        }
        if self.linear {
            t.activation = Some(Activation::Identity);
        }
    }
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    if let Ok(n) = std::env::var("IMBAL_THREADS") {
        let n: usize = n.parse().context("IMBAL_THREADS must be a positive integer")?;
        rayon::ThreadPoolBuilder::new().num_threads(n).build_global()?;
    }
    let cli = Cli::parse();
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::from_path(p).with_context(|| format!("reading config {}", p.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.base_seed = seed;
        cfg.train.seed = seed;
    }
    std::fs::create_dir_all(&cli.out_dir).with_context(|| format!("creating {}", cli.out_dir.display()))?;
    let out = cli.out_dir.as_path();
    match cli.command {
        Command::Synth {
            nodes,
            rho,
            intra_p,
            inter_p,
            dim,
            separation,
        } => cmd_synth(
            out,
            &SynthSpec {
                num_nodes: nodes,
                num_classes: 2,
                rho,
                intra_p,
                inter_p,
                feature_dim: dim,
                class_mean_separation: separation,
            },
            cfg.base_seed,
        ),
        Command::Aggregate {
            data,
            hops,
            no_concat,
            no_standardize,
        } => {
            let mut agg = cfg.aggregation;
            if let Some(h) = hops {
                agg.hops = h;
            }
            agg.concat_original &= !no_concat;
            agg.standardize &= !no_standardize;
            cmd_aggregate(out, &data, &agg)
        }
        Command::Oversample {
            channels,
            labels,
            k,
            target,
        } => {
            let mut os = cfg.oversample;
            if let Some(k) = k {
                os.k = k;
            }
            if let Some(t) = target {
                os.target = BalanceTarget::Count(t);
            }
            let (ids, xs) = read_channels(&channels)?;
            let l = read_labels(&labels, &ids)?;
            let (xt, lt, plan) = oversample_channels(&xs, &l, &os, cfg.base_seed)?;
            let mut all_ids = ids.clone();
            all_ids.extend((0..plan.len()).map(|i| format!("syn{i}")));
            for (i, x) in xt.iter().enumerate() {
                io::save_features_bin(&channel_path(out, "X_os", i, xt.len()), &all_ids, x)?;
            }
            io::write_labels(&lt, &all_ids, BufWriter::new(io::create(&out.join("labels_os.csv"))?))?;
            plan.write_csv(BufWriter::new(io::create(&out.join("plan.csv"))?))?;
            log::info!("appended {} synthetic rows", plan.len());
            Ok(())
        }
        Command::Train {
            channels,
            labels,
            mode,
            edges,
            hyper,
        } => {
            hyper.apply(&mut cfg);
            let mode: Mode = mode.parse()?;
            let (ids, xs) = read_channels(&channels)?;
            let l = read_labels(&labels, &ids)?;
            let adjs = adjacencies(mode, edges.as_deref(), &ids)?;
            let chans = make_channels(&xs, &adjs);
            let (model, report) = train(mode, &chans, &l, &cfg.train)?;
            write_checkpoint(&model, BufWriter::new(io::create(&out.join("model.igm"))?))?;
            std::fs::write(out.join("train_report.json"), serde_json::to_string_pretty(&report)?)?;
            log::info!(
                "best epoch {} (val bAcc {:?}) after {} epochs",
                report.best_epoch,
                report.best_val_bacc,
                report.epochs.len()
            );
            Ok(())
        }
        Command::Predict { model, channels, edges } => {
            let model = read_checkpoint(BufReader::new(io::open(&model)?))?;
            let (ids, xs) = read_channels(&channels)?;
            let adjs = adjacencies(model.mode, edges.as_deref(), &ids)?;
            let preds = predict(&model, &make_channels(&xs, &adjs))?;
            let mut w = BufWriter::new(io::create(&out.join("predictions.csv"))?);
            writeln!(w, "node_id,prediction")?;
            for (id, p) in ids.iter().zip(&preds) {
                writeln!(w, "{id},{p}")?;
            }
            w.flush()?;
            Ok(())
        }
        Command::Evaluate {
            predictions,
            labels,
            split,
            minority,
        } => {
            let (ids, preds) = read_predictions(&predictions)?;
            let l = read_labels(&labels, &ids)?;
            let minority = minority.unwrap_or_else(|| l.minority_class());
            let m = evaluate(&preds, &l, split, minority)?;
            let json = m.to_json()?;
            std::fs::write(out.join("metrics.json"), &json)?;
            println!("{json}");
            Ok(())
        }
        Command::Run { run } => {
            let (ds, cfg) = run_setup(cfg, &run)?;
            let table = run_on(&ds, &cfg)?;
            table.write_to(out)?;
            println!("{}", table.display());
            Ok(())
        }
        Command::SweepLambda { run, lambdas } => {
            let (ds, cfg) = run_setup(cfg, &run)?;
            let rows = sweep_lambda(&ds, &cfg, &lambdas)?;
            let csv = sweep_csv(&rows);
            std::fs::write(out.join("sweep.csv"), &csv)?;
            print!("{csv}");
            Ok(())
        }
        Command::SubsampleRho { data, rho } => {
            let loaded = data.load()?;
            let keep = subsample_keep(&loaded.dataset, rho, cfg.base_seed)?;
            let ds = subsample_to_ratio(&loaded.dataset, rho, cfg.base_seed)?;
            let ids: Vec<String> = keep.iter().map(|&i| loaded.node_ids[i].clone()).collect();
            write_dataset(out, &ids, &ds.graph, &ds.features, &ds.labels)?;
            log::info!("kept {} of {} nodes", ds.num_nodes(), loaded.dataset.num_nodes());
            Ok(())
        }
        Command::EdgeNoise { data, seeds } => {
            let ds = match data.resolve() {
                Some(d) => d.load()?.dataset,
                None => match &cfg.data {
                    DataSource::Synth(spec) => generate_synth(spec, cfg.base_seed)?,
                    files => files.load(cfg.base_seed)?,
                },
            };
            let noise = NoiseConfig {
                train: cfg.train,
                split: cfg.split,
                ..NoiseConfig::default()
            };
            let reports = (0..seeds)
                .map(|r| noise_experiment(&ds, &noise, cfg.base_seed + r))
                .collect::<imbal_core::Result<Vec<NoiseReport>>>()?;
            let mean = |f: fn(&NoiseReport) -> f64| reports.iter().map(f).sum::<f64>() / reports.len().max(1) as f64;
            println!(
                "edge AUC {:.4}  acc(original) {:.2}%  acc(synthetic) {:.2}%",
                mean(|r| r.edge_auc),
                100.0 * mean(|r| r.acc_original_edges),
                100.0 * mean(|r| r.acc_synthetic_edges)
            );
            std::fs::write(out.join("edge_noise.json"), serde_json::to_string_pretty(&reports)? + "\n")?;
            Ok(())
        }
    }
}

fn cmd_synth(out: &Path, spec: &SynthSpec, seed: u64) -> Result<()> {
    let ds = generate_synth(spec, seed)?;
    let ids: Vec<String> = (0..ds.num_nodes()).map(|i| i.to_string()).collect();
    write_dataset(out, &ids, &ds.graph, &ds.features, &ds.labels)?;
    log::info!(
        "{} nodes, {} undirected edges, class sizes {:?}",
        ds.num_nodes(),
        ds.graph.num_stored_edges() / 2,
        ds.labels.labeled_counts()
    );
    Ok(())
}

fn cmd_aggregate(out: &Path, data: &DataArgs, agg: &AggregationConfig) -> Result<()> {
    let loaded = data.load()?;
    let h = prepared_features(&loaded.dataset, agg);
    let xs = feature_space_from(&loaded.dataset.graph, &h, agg)?;
    for (i, x) in xs.iter().enumerate() {
        io::save_features_bin(&channel_path(out, "X", i, xs.len()), &loaded.node_ids, x)?;
    }
    io::write_ids(&out.join("node_ids.txt"), &loaded.node_ids)?;
    log::info!("{} channel(s) of width {}", xs.len(), xs[0].cols());
    Ok(())
}

fn write_dataset(out: &Path, ids: &[String], g: &SparseGraph, x: &FeatureMatrix, l: &LabelSet) -> Result<()> {
    io::write_edges(g, ids, BufWriter::new(io::create(&out.join("edges.tsv"))?))?;
    io::write_features_csv(ids, x, BufWriter::new(io::create(&out.join("features.csv"))?))?;
    io::write_labels(l, ids, BufWriter::new(io::create(&out.join("labels.csv"))?))?;
    Ok(())
}

fn channel_path(out: &Path, stem: &str, i: usize, total: usize) -> PathBuf {
    if total == 1 {
        out.join(format!("{stem}.bin"))
    } else {
        out.join(format!("{stem}.r{i}.bin"))
    }
}

fn read_channels(paths: &[PathBuf]) -> Result<(Vec<String>, Vec<FeatureMatrix>)> {
    let mut ids = None;
    let mut xs = Vec::new();
    for p in paths {
        let (i, x) = io::read_features(p).with_context(|| format!("reading {}", p.display()))?;
        match &ids {
            None => ids = Some(i),
            Some(first) if *first != i => bail!("{} does not share node ids with {}", p.display(), paths[0].display()),
            _ => {}
        }
        xs.push(x);
    }
    Ok((ids.unwrap_or_default(), xs))
}

fn read_labels(path: &Path, ids: &[String]) -> Result<LabelSet> {
    let index = io::node_index(ids)?;
    Ok(io::read_labels(BufReader::new(io::open(path)?), path, &index)?)
}

fn read_predictions(path: &Path) -> Result<(Vec<String>, Vec<usize>)> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut ids = Vec::new();
    let mut preds = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let Some((id, p)) = line.split_once(',') else {
            bail!("{}:{}: expected node_id,prediction", path.display(), n + 1);
        };
        ids.push(id.to_string());
        preds.push(p.trim().parse().with_context(|| format!("{}:{}", path.display(), n + 1))?);
    }
    Ok((ids, preds))
}

fn adjacencies(mode: Mode, edges: Option<&Path>, ids: &[String]) -> Result<Vec<imbal_core::NormalizedAdjacency>> {
    if !mode.needs_adjacency() {
        return Ok(Vec::new());
    }
    let Some(path) = edges else {
        bail!("the gcn mode needs --edges");
    };
    let index = io::node_index(ids)?;
    let e = io::read_edges(BufReader::new(io::open(path)?), path, &index)?;
    let g = SparseGraph::build(ids.len(), &e, true, None)?;
    Ok((0..g.num_relations().max(1)).map(|r| normalize(&g, r)).collect::<imbal_core::Result<_>>()?)
}

/// For gcn, one channel per relation over the single feature matrix.
fn make_channels<'a>(xs: &'a [FeatureMatrix], adjs: &'a [imbal_core::NormalizedAdjacency]) -> Vec<Channel<'a>> {
    if adjs.is_empty() {
        xs.iter().map(Channel::plain).collect()
    } else {
        adjs.iter().map(|a| Channel::with_adj(&xs[0], a)).collect()
    }
}

fn run_setup(mut cfg: ExperimentConfig, run: &RunArgs) -> Result<(imbal_core::Dataset, ExperimentConfig)> {
    if let Some(d) = run.data.resolve() {
        cfg.data = d.source();
    }
    if let Some(m) = run.method {
        cfg.method = m;
    }
    if let Some(r) = run.repetitions {
        cfg.repetitions = r;
    }
    if run.sum_reduction {
        cfg.train.reduction = Reduction::Sum;
    }
    cfg.parallel |= run.parallel;
    run.hyper.apply(&mut cfg);
    cfg.validate()?;
    let ds = cfg.data.load(cfg.base_seed)?;
    Ok((ds, cfg))
}
