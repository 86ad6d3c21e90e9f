use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::split::{stratified_split, SplitFractions};
use super::synth::{generate_synth, SynthSpec};
use crate::aggregate::{feature_space_from, normalize, prepared_features, AggregationConfig};
use crate::classifier::{predict, train, Channel, Mode, Reduction, TrainConfig};
use crate::error::{Error, Result};
use crate::graph::{Dataset, Split};
use crate::io::load_dataset;
use crate::metrics::{evaluate, MetricsBundle};
use crate::oversample::{oversample_channels, OversampleConfig};

pub const CONFIG_SCHEMA: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    VanillaGcn,
    OsGnn,
    Sgc,
}

impl Method {
    pub fn as_str(self) -> &'static str {
        match self {
            Method::VanillaGcn => "vanilla_gcn",
            Method::OsGnn => "os_gnn",
            Method::Sgc => "sgc",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "vanilla_gcn" | "vanilla" | "gcn" => Ok(Method::VanillaGcn),
            "os_gnn" | "os" => Ok(Method::OsGnn),
            "sgc" => Ok(Method::Sgc),
            other => Err(Error::InvalidConfig(format!("unknown method {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DataSource {
    Synth(SynthSpec),
    Files {
        edges: PathBuf,
        features: PathBuf,
        labels: PathBuf,
        #[serde(default)]
        directed: bool,
    },
}

impl DataSource {
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DataSource::Synth(spec) => generate_synth(spec, seed),
            DataSource::Files {
                edges,
                features,
                labels,
                directed,
            } => Ok(load_dataset(edges, features, labels, !directed)?.dataset),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub schema: u32,
    pub data: DataSource,
    pub method: Method,
    pub aggregation: AggregationConfig,
    pub oversample: OversampleConfig,
    pub train: TrainConfig,
    pub repetitions: usize,
    pub split: SplitFractions,
    pub base_seed: u64,
    /// Fixed minority class; otherwise the class with fewest real train nodes.
    pub minority_class: Option<usize>,
    pub parallel: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            schema: CONFIG_SCHEMA,
            data: DataSource::Synth(SynthSpec::default()),
            method: Method::OsGnn,
            aggregation: AggregationConfig::default(),
            oversample: OversampleConfig::default(),
            train: TrainConfig::default(),
            repetitions: 5,
            split: SplitFractions::default(),
            base_seed: 0,
            minority_class: None,
            parallel: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_path(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema != CONFIG_SCHEMA {
            return Err(Error::InvalidConfig(format!(
                "config schema {} is not supported (expected {CONFIG_SCHEMA})",
                self.schema
            )));
        }
        if self.repetitions == 0 {
            return Err(Error::InvalidConfig("repetitions must be at least 1".into()));
        }
        self.aggregation.validate()?;
        self.oversample.validate()?;
        self.train.validate()?;
        self.split.validate()
    }

    pub fn with_sum_reduction(mut self) -> Self {
        self.train.reduction = Reduction::Sum;
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepetitionResult {
    pub seed: u64,
    pub minority_class: usize,
    pub synthetic_nodes: usize,
    pub best_epoch: usize,
    pub test: MetricsBundle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    pub std: f64,
}

impl Stat {
    /// Mean and sample standard deviation (0 for a single value).
    pub fn of(values: &[f64]) -> Stat {
        let n = values.len();
        if n == 0 {
            return Stat { mean: 0.0, std: 0.0 };
        }
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = if n > 1 {
            (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
        } else {
            0.0
        };
        Stat { mean, std }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub acc: Stat,
    pub f1_macro: Stat,
    pub bacc: Stat,
    pub tpr: Stat,
    pub minor_acc: Stat,
}

impl Summary {
    pub fn of(reps: &[RepetitionResult]) -> Summary {
        let pick = |f: fn(&MetricsBundle) -> f64| Stat::of(&reps.iter().map(|r| f(&r.test)).collect::<Vec<_>>());
        Summary {
            acc: pick(|m| m.acc),
            f1_macro: pick(|m| m.f1_macro),
            bacc: pick(|m| m.bacc),
            tpr: pick(|m| m.tpr),
            minor_acc: pick(|m| m.minor_acc),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultTable {
    pub schema: u32,
    pub method: Method,
    pub lambda: f64,
    pub repetitions: Vec<RepetitionResult>,
    pub summary: Summary,
}

impl ResultTable {
    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    /// One row per repetition, then `mean` and `std` rows.
    pub fn to_csv(&self) -> String {
        let mut out = format!("seed,{}\n", MetricsBundle::CSV_HEADER);
        for r in &self.repetitions {
            let _ = writeln!(out, "{},{}", r.seed, r.test.csv_row());
        }
        let s = &self.summary;
        let stats = [s.acc, s.f1_macro, s.bacc, s.tpr, s.minor_acc];
        let join = |f: fn(&Stat) -> f64| stats.iter().map(|x| f(x).to_string()).collect::<Vec<_>>().join(",");
        let _ = writeln!(out, "mean,{}", join(|x| x.mean));
        let _ = writeln!(out, "std,{}", join(|x| x.std));
        out
    }

    /// Percent table, two decimals.
    pub fn display(&self) -> String {
        let s = &self.summary;
        let cell = |x: Stat| format!("{:.2} ± {:.2}", 100.0 * x.mean, 100.0 * x.std);
        format!(
            "method     acc              f1_macro         bacc             tpr\n{:<10} {:<16} {:<16} {:<16} {}",
            self.method.as_str(),
            cell(s.acc),
            cell(s.f1_macro),
            cell(s.bacc),
            cell(s.tpr)
        )
    }

    pub fn write_to(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        std::fs::write(dir.join("results.json"), self.to_json()?)?;
        std::fs::write(dir.join("results.csv"), self.to_csv())?;
        Ok(())
    }
}

/// Train and test one repetition on a fresh stratified split.
pub fn run_repetition(dataset: &Dataset, cfg: &ExperimentConfig, seed: u64) -> Result<RepetitionResult> {
    let labels = stratified_split(&dataset.labels, &cfg.split, seed)?;
    let ds = dataset.with_labels(labels)?;
    let minority = cfg.minority_class.unwrap_or_else(|| ds.labels.minority_class());
    let train_cfg = TrainConfig { seed, ..cfg.train };
    let h = prepared_features(&ds, &cfg.aggregation);

    let (preds, synthetic_nodes, best_epoch) = match cfg.method {
        Method::OsGnn => {
            let xs = feature_space_from(&ds.graph, &h, &cfg.aggregation)?;
            let (xt, lt, plan) = oversample_channels(&xs, &ds.labels, &cfg.oversample, seed)?;
            let chans: Vec<_> = xt.iter().map(Channel::plain).collect();
            let (model, report) = train(Mode::OsMlp, &chans, &lt, &train_cfg)?;
            let eval: Vec<_> = xs.iter().map(Channel::plain).collect();
            (predict(&model, &eval)?, plan.len(), report.best_epoch)
        }
        Method::Sgc => {
            let xs = feature_space_from(&ds.graph, &h, &cfg.aggregation)?;
            let chans: Vec<_> = xs.iter().map(Channel::plain).collect();
            let (model, report) = train(Mode::Sgc, &chans, &ds.labels, &train_cfg)?;
            (predict(&model, &chans)?, 0, report.best_epoch)
        }
        Method::VanillaGcn => {
            let adjs = (0..ds.graph.num_relations().max(1))
                .map(|r| normalize(&ds.graph, r))
                .collect::<Result<Vec<_>>>()?;
            let chans: Vec<_> = adjs.iter().map(|a| Channel::with_adj(&h, a)).collect();
            let (model, report) = train(Mode::GcnBaseline, &chans, &ds.labels, &train_cfg)?;
            (predict(&model, &chans)?, 0, report.best_epoch)
        }
    };
    debug_assert_eq!(preds.len(), ds.num_nodes());
    let test = evaluate(&preds, &ds.labels, Split::Test, minority)?;
    Ok(RepetitionResult {
        seed,
        minority_class: minority,
        synthetic_nodes,
        best_epoch,
        test,
    })
}

/// Repetitions `r = 0..R` use seed `base_seed + r`. Results do not depend
/// on `cfg.parallel`.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let dataset = cfg.data.load(cfg.base_seed)?;
    run_on(&dataset, cfg)
}

/// [`run_experiment`] on an already-loaded dataset.
pub fn run_on(dataset: &Dataset, cfg: &ExperimentConfig) -> Result<ResultTable> {
    cfg.validate()?;
    let one = |r: usize| {
        let seed = cfg.base_seed + r as u64;
        log::info!("{} repetition {r} (seed {seed})", cfg.method.as_str());
        run_repetition(dataset, cfg, seed).map_err(|e| Error::Repetition {
            seed,
            source: Box::new(e),
        })
    };
    let repetitions = if cfg.parallel {
        (0..cfg.repetitions).into_par_iter().map(one).collect::<Result<Vec<_>>>()?
    } else {
        (0..cfg.repetitions).map(one).collect::<Result<Vec<_>>>()?
    };
    let summary = Summary::of(&repetitions);
    Ok(ResultTable {
        schema: CONFIG_SCHEMA,
        method: cfg.method,
        lambda: cfg.train.lambda,
        repetitions,
        summary,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub lambda: f64,
    pub summary: Summary,
}

pub const SWEEP_HEADER: &str =
    "lambda,acc_mean,acc_std,f1_macro_mean,f1_macro_std,bacc_mean,bacc_std,tpr_mean,tpr_std,minor_acc_mean,minor_acc_std";

impl SweepRow {
    pub fn csv_row(&self) -> String {
        let s = &self.summary;
        let mut out = self.lambda.to_string();
        for x in [s.acc, s.f1_macro, s.bacc, s.tpr, s.minor_acc] {
            let _ = write!(out, ",{},{}", x.mean, x.std);
        }
        out
    }
}

/// Re-run the experiment once per `λ`, everything else fixed.
pub fn sweep_lambda(dataset: &Dataset, cfg: &ExperimentConfig, lambdas: &[f64]) -> Result<Vec<SweepRow>> {
    lambdas
        .iter()
        .map(|&lambda| {
            let mut c = cfg.clone();
            c.train.lambda = lambda;
            Ok(SweepRow {
                lambda,
                summary: run_on(dataset, &c)?.summary,
            })
        })
        .collect()
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = format!("{SWEEP_HEADER}\n");
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ExperimentConfig {
        ExperimentConfig {
            data: DataSource::Synth(SynthSpec {
                num_nodes: 200,
                rho: 0.3,
                class_mean_separation: 2.0,
                ..Default::default()
            }),
            train: TrainConfig {
                hidden: 16,
                max_epochs: 40,
                lr: 1e-2,
                ..Default::default()
            },
            repetitions: 2,
            ..Default::default()
        }
    }

    #[test]
    fn config_roundtrip_and_schema_check() {
        let cfg = small();
        let text = serde_json::to_string(&cfg).unwrap();
        assert_eq!(ExperimentConfig::from_json(&text).unwrap(), cfg);
        let bad = text.replacen("\"schema\":1", "\"schema\":2", 1);
        assert!(ExperimentConfig::from_json(&bad).is_err());
    }

    #[test]
    fn partial_config_takes_defaults() {
        let cfg = ExperimentConfig::from_json(r#"{"schema":1,"method":"sgc"}"#).unwrap();
        assert_eq!(cfg.method, Method::Sgc);
        assert_eq!(cfg.repetitions, 5);
    }

    #[test]
    fn stat_uses_sample_std() {
        let s = Stat::of(&[1.0, 2.0, 3.0]);
        assert_eq!(s.mean, 2.0);
        assert!((s.std - 1.0).abs() < 1e-12);
        assert_eq!(Stat::of(&[4.0]).std, 0.0);
    }

    #[test]
    fn every_method_runs() {
        for method in [Method::OsGnn, Method::Sgc, Method::VanillaGcn] {
            let cfg = ExperimentConfig { method, ..small() };
            let t = run_experiment(&cfg).unwrap();
            assert_eq!(t.repetitions.len(), 2);
            assert_eq!(t.repetitions[1].seed, 1);
            for r in &t.repetitions {
                assert!((0.0..=1.0).contains(&r.test.acc));
            }
            if method == Method::OsGnn {
                assert!(t.repetitions[0].synthetic_nodes > 0);
            }
        }
    }

    #[test]
    fn csv_has_rep_and_summary_rows() {
        let t = run_experiment(&small()).unwrap();
        let csv = t.to_csv();
        let lines: Vec<_> = csv.lines().collect();
        assert_eq!(lines.len(), 1 + 2 + 2);
        assert!(lines[3].starts_with("mean,"));
        assert!(t.display().contains("os_gnn"));
    }

    #[test]
    fn failed_repetition_names_its_seed() {
        let mut cfg = small();
        cfg.oversample.k = 0;
        // invalid k fails validation before any repetition
        assert!(run_experiment(&cfg).is_err());
    }
}
