//! The `appeal` command-line pipeline: configuration, subcommands and report
//! files.
//!
//! A run is described by one TOML file (see [`RunConfig`]). Every command
//! writes `resolved_<command>.toml` next to its outputs; feeding that file back
//! with `--config` reproduces the run.

use std::ffi::OsString;
use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::data::{generate, load_csv, CsvSchema, Dataset, SynthKind, SynthSpec};
use crate::error::{Error, Result};
use crate::models::{count_flops, insert_predictor_head, profile_select, Approximator, ArchSpec, BigModel, Task, TwoHeadNet};
use crate::sim::{
    self, find_delta_for_target, linspace, score_histogram, separation_auroc, sweep_thresholds, AccuracyTarget,
    CostModel, DeltaGrid, EvalReport, ExportMeta, Histogram, Outcomes, RoutingPolicy, ScoreSource,
};
use crate::trainer::{joint_train, pretrain_approximator, Mode, TrainConfig, TrainLog};

pub const SCHEMA_VERSION: u32 = 1;

/// Set to `1` to run every parallel section on a single thread.
pub const SINGLE_THREAD_ENV: &str = "APPEAL_SINGLE_THREAD";

pub const DEFAULT_OUT_DIR: &str = "appeal-out";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub schema_version: u32,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub data: Option<DataConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub small: Option<ArchSpec>,
    #[serde(default)]
    pub big: BigConfig,
    #[serde(default)]
    pub pretrain: TrainSection,
    #[serde(default)]
    pub train: TrainSection,
    #[serde(default)]
    pub cost: CostSection,
    #[serde(default)]
    pub sweep: SweepSection,
    #[serde(default)]
    pub eval: EvalSection,
    #[serde(default)]
    pub histogram: HistogramSection,
    #[serde(default)]
    pub checkpoints: CheckpointPaths,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<ProfileSection>,
}

/// Where samples come from. `std_synth` and `std_regression` are the two
/// built-in benchmarks; `synth` takes explicit generator parameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum DataConfig {
    StdSynth,
    StdRegression,
    Synth(SynthParams),
    Csv(CsvSource),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthParams {
    pub kind: SynthKind,
    pub n_per_class: usize,
    pub d: usize,
    pub k: usize,
    pub overlap: f64,
    pub noise_std: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub overlapping_classes: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub easy_separation: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CsvSource {
    pub train: PathBuf,
    pub test: PathBuf,
    pub schema: CsvSchema,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum BigConfig {
    #[default]
    Oracle,
    WhiteBox { arch: ArchSpec },
}

/// Optional overrides of a [`TrainConfig`]; unset fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub batch_size: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_epochs: Option<Vec<usize>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lr_decay_factor: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub weight_decay: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_init: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta_bounds: Option<[f64; 2]>,
}

impl TrainSection {
    pub fn apply(&self, base: TrainConfig) -> TrainConfig {
        TrainConfig {
            epochs: self.epochs.unwrap_or(base.epochs),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            lr_init: self.lr_init.unwrap_or(base.lr_init),
            lr_decay_epochs: self.lr_decay_epochs.clone().unwrap_or(base.lr_decay_epochs),
            lr_decay_factor: self.lr_decay_factor.unwrap_or(base.lr_decay_factor),
            weight_decay: self.weight_decay.unwrap_or(base.weight_decay),
            beta_init: self.beta_init.unwrap_or(base.beta_init),
            alpha: self.alpha.unwrap_or(base.alpha),
            beta_bounds: self.beta_bounds.unwrap_or(base.beta_bounds),
            ..base
        }
    }

    fn explicit(cfg: &TrainConfig) -> Self {
        Self {
            epochs: Some(cfg.epochs),
            batch_size: Some(cfg.batch_size),
            lr_init: Some(cfg.lr_init),
            lr_decay_epochs: Some(cfg.lr_decay_epochs.clone()),
            lr_decay_factor: Some(cfg.lr_decay_factor),
            weight_decay: Some(cfg.weight_decay),
            beta_init: Some(cfg.beta_init),
            alpha: Some(cfg.alpha),
            beta_bounds: Some(cfg.beta_bounds),
        }
    }
}

/// Routing costs. Missing `c1`/`c0` are derived from counted FLOPs: `c1` is the
/// small net with its predictor head, `c0` the predictor head plus the big
/// model (`big_flops`, or the white-box architecture's count) plus
/// `comm_surcharge`. The budget defaults to the midpoint.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostSection {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c0: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub budget: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big_flops: Option<f64>,
    #[serde(default)]
    pub comm_surcharge: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSection {
    /// Evenly spaced thresholds per source, from the bottom of the source's
    /// score range to 10% past its top.
    #[serde(default = "default_sweep_points")]
    pub points: usize,
    /// Explicit thresholds, used for every source instead of `points`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub deltas: Option<Vec<f64>>,
}

fn default_sweep_points() -> usize {
    23
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            points: default_sweep_points(),
            deltas: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalSection {
    #[serde(default = "default_source")]
    pub source: ScoreSource,
    #[serde(default = "default_delta")]
    pub delta: f64,
    /// When set, `delta` is replaced by the threshold that maximizes SR with
    /// `AD ≤ target_ad`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub target_ad: Option<f64>,
    /// RMSE below which a regression prediction counts as correct.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub err_threshold: Option<f64>,
}

fn default_source() -> ScoreSource {
    ScoreSource::PredictorQ
}

fn default_delta() -> f64 {
    0.5
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            source: default_source(),
            delta: default_delta(),
            target_ad: None,
            err_threshold: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HistogramSection {
    #[serde(default = "default_source")]
    pub source: ScoreSource,
    #[serde(default = "default_bins")]
    pub bins: usize,
}

fn default_bins() -> usize {
    20
}

impl Default for HistogramSection {
    fn default() -> Self {
        Self {
            source: default_source(),
            bins: default_bins(),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointPaths {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub approximator: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub big: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub two_head: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProfileSection {
    pub budget: u64,
    pub pool: Vec<PoolEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PoolEntry {
    pub name: String,
    pub arch: ArchSpec,
}

fn config_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

impl RunConfig {
    /// Parses and validates a TOML config. Relative paths inside it are taken
    /// relative to `base_dir`.
    pub fn from_toml(text: &str, base_dir: &Path) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| config_err(e.to_string()))?;
        cfg.rebase(base_dir);
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| config_err(format!("cannot read config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Self::from_toml(&text, base)
    }

    fn rebase(&mut self, base: &Path) {
        let fix = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        if let Some(DataConfig::Csv(c)) = &mut self.data {
            fix(&mut c.train);
            fix(&mut c.test);
        }
        if let Some(o) = &mut self.out_dir {
            fix(o);
        }
        for p in [
            &mut self.checkpoints.approximator,
            &mut self.checkpoints.big,
            &mut self.checkpoints.two_head,
        ]
        .into_iter()
        .flatten()
        {
            fix(p);
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(config_err(format!(
                "unsupported schema_version {} (expected {SCHEMA_VERSION})",
                self.schema_version
            )));
        }
        let wrap = |r: Result<()>, what: &str| r.map_err(|e| config_err(format!("{what}: {e}")));
        if let Some(small) = &self.small {
            wrap(small.validate(), "[small]")?;
        }
        if let BigConfig::WhiteBox { arch } = &self.big {
            wrap(arch.validate(), "[big.arch]")?;
            if arch.task == Task::Regression {
                return Err(config_err("[big] a white-box big model must be a classifier"));
            }
        }
        match &self.data {
            Some(DataConfig::Csv(c)) => {
                for p in [&c.train, &c.test] {
                    if !p.is_file() {
                        return Err(config_err(format!("[data] dataset file {} does not exist", p.display())));
                    }
                }
            }
            Some(_) => wrap(self.synth_spec().unwrap().validate(), "[data]")?,
            None => {}
        }
        wrap(self.pretrain_config().validate(), "[pretrain]")?;
        wrap(self.train_config().validate(), "[train]")?;
        if self.sweep.points < 2 && self.sweep.deltas.is_none() {
            return Err(config_err("[sweep] points must be >= 2"));
        }
        if let Some(d) = &self.sweep.deltas {
            if d.is_empty() || d.windows(2).any(|w| !(w[0] <= w[1])) {
                return Err(config_err("[sweep] deltas must be nonempty and ascending"));
            }
        }
        if self.histogram.bins < 2 {
            return Err(config_err("[histogram] bins must be >= 2"));
        }
        if let Some(t) = self.eval.err_threshold {
            if !(t > 0.0) {
                return Err(config_err("[eval] err_threshold must be positive"));
            }
        }
        if let Some(p) = &self.profile {
            if p.pool.is_empty() {
                return Err(config_err("[profile] pool is empty"));
            }
            for e in &p.pool {
                wrap(e.arch.validate(), &format!("[profile] pool entry {:?}", e.name))?;
            }
        }
        Ok(())
    }

    pub fn mode(&self) -> Mode {
        match self.big {
            BigConfig::Oracle => Mode::BlackBox,
            BigConfig::WhiteBox { .. } => Mode::WhiteBox,
        }
    }

    fn is_regression(&self) -> bool {
        self.small.as_ref().is_some_and(|s| s.task == Task::Regression)
    }

    pub fn pretrain_config(&self) -> TrainConfig {
        let base = if self.is_regression() {
            TrainConfig::pretrain_regression_default(self.seed)
        } else {
            TrainConfig::pretrain_default(self.seed)
        };
        self.pretrain.apply(base)
    }

    pub fn train_config(&self) -> TrainConfig {
        let base = if self.is_regression() {
            TrainConfig::joint_regression_default(self.seed)
        } else {
            TrainConfig::joint_default(self.seed, self.mode())
        };
        self.train.apply(base)
    }

    /// Generator parameters for synthetic sources, seeded by the run seed.
    pub fn synth_spec(&self) -> Option<SynthSpec> {
        match self.data.as_ref()? {
            DataConfig::StdSynth => Some(SynthSpec::std_synth(self.seed)),
            DataConfig::StdRegression => Some(SynthSpec::std_regression(self.seed)),
            DataConfig::Synth(p) => {
                let mut s = SynthSpec::std_synth(self.seed);
                s.kind = p.kind;
                s.n_per_class = p.n_per_class;
                s.d = p.d;
                s.k = p.k;
                s.overlap = p.overlap;
                s.noise_std = p.noise_std;
                s.overlapping_classes = p.overlapping_classes;
                if let Some(e) = p.easy_separation {
                    s.easy_separation = e;
                }
                Some(s)
            }
            DataConfig::Csv(_) => None,
        }
    }

    /// `(train, test)` datasets.
    pub fn datasets(&self) -> Result<(Dataset, Dataset)> {
        match self.data.as_ref().ok_or_else(|| config_err("config has no [data] section"))? {
            DataConfig::Csv(c) => Ok((load_csv(&c.train, c.schema)?, load_csv(&c.test, c.schema)?)),
            _ => generate(&self.synth_spec().unwrap()),
        }
    }

    pub fn small_arch(&self) -> Result<&ArchSpec> {
        self.small.as_ref().ok_or_else(|| config_err("config has no [small] section"))
    }

    pub fn cost_model(&self) -> Result<CostModel> {
        let c = &self.cost;
        let small = self.small_arch()?;
        let c1 = match c.c1 {
            Some(v) => v,
            None => count_flops(small, true) as f64,
        };
        let c0 = match c.c0 {
            Some(v) => v,
            None => {
                let big = match (&self.big, c.big_flops) {
                    (_, Some(f)) => f,
                    (BigConfig::WhiteBox { arch }, None) => count_flops(arch, false) as f64,
                    (BigConfig::Oracle, None) => {
                        return Err(config_err("[cost] an oracle big model needs c0 or big_flops"))
                    }
                };
                let predictor = (count_flops(small, true) - count_flops(small, false)) as f64;
                predictor + big + c.comm_surcharge
            }
        };
        let budget = c.budget.unwrap_or(0.5 * (c1 + c0));
        CostModel::new(c1, c0, budget).map_err(|e| config_err(format!("[cost] {e}")))
    }

    /// The config with every default spelled out.
    pub fn resolved(&self) -> Self {
        let mut r = self.clone();
        r.pretrain = TrainSection::explicit(&self.pretrain_config());
        r.train = TrainSection::explicit(&self.train_config());
        if let Ok(cost) = self.cost_model() {
            r.cost.c1 = Some(cost.c1);
            r.cost.c0 = Some(cost.c0);
            r.cost.budget = Some(cost.budget);
        }
        r
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| config_err(format!("cannot serialize config: {e}")))
    }
}

/// A validated config bound to an output directory.
#[derive(Debug, Clone)]
pub struct Run {
    pub config: RunConfig,
    pub out: PathBuf,
}

impl Run {
    pub fn new(mut config: RunConfig, seed: Option<u64>, out: Option<PathBuf>) -> Result<Self> {
        if let Some(s) = seed {
            config.seed = s;
        }
        let out = out
            .or_else(|| config.out_dir.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR));
        config.out_dir = Some(out.clone());
        config.validate()?;
        Ok(Self { config, out })
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn approximator_path(&self) -> PathBuf {
        self.config.checkpoints.approximator.clone().unwrap_or_else(|| self.path("approximator.ckpt.json"))
    }

    fn big_path(&self) -> PathBuf {
        self.config.checkpoints.big.clone().unwrap_or_else(|| self.path("big.ckpt.json"))
    }

    fn two_head_path(&self) -> PathBuf {
        self.config.checkpoints.two_head.clone().unwrap_or_else(|| self.path("two_head.ckpt.json"))
    }

    /// Writes `resolved_<command>.toml` and returns the hash stamped on
    /// exports.
    fn begin(&mut self, command: &str) -> Result<ExportMeta> {
        std::fs::create_dir_all(&self.out)?;
        let text = self.config.resolved().to_toml()?;
        std::fs::write(self.path(&format!("resolved_{command}.toml")), &text)?;
        Ok(ExportMeta {
            config_hash: hex::encode(Sha256::digest(text.as_bytes())),
            seed: self.config.seed,
        })
    }

    fn big_model(&self) -> Result<BigModel> {
        match &self.config.big {
            BigConfig::Oracle => Ok(BigModel::Oracle),
            BigConfig::WhiteBox { arch } => {
                let path = self.big_path();
                if !path.is_file() {
                    return Err(config_err(format!(
                        "white-box mode needs a big-model checkpoint; {} does not exist (run `pretrain --big` or set checkpoints.big)",
                        path.display()
                    )));
                }
                let net = Approximator::load(&path)?;
                check_arch(arch, net.arch())?;
                Ok(BigModel::WhiteBox(net))
            }
        }
    }

    fn outcomes(&self, net: &TwoHeadNet, test: &Dataset) -> Result<Outcomes> {
        if net.arch().task == Task::Regression {
            if !self.config.big.eq(&BigConfig::Oracle) {
                return Err(config_err("regression runs need an oracle big model"));
            }
            let thr = self
                .config
                .eval
                .err_threshold
                .ok_or_else(|| config_err("[eval] err_threshold is required for regression"))?;
            Outcomes::regress(net, test, thr)
        } else {
            Outcomes::classify(net, &self.big_model()?, test)
        }
    }

    fn load_two_head(&self) -> Result<TwoHeadNet> {
        let net = TwoHeadNet::load(self.two_head_path())?;
        check_arch(self.config.small_arch()?, net.arch())?;
        Ok(net)
    }
}

fn check_arch(expected: &ArchSpec, found: &ArchSpec) -> Result<()> {
    if expected != found {
        return Err(Error::ArchMismatch {
            expected: expected.to_string(),
            found: found.to_string(),
        });
    }
    Ok(())
}

fn write_log(log: &TrainLog, out: &Path, stem: &str) -> Result<()> {
    log.write_csv(BufWriter::new(File::create(out.join(format!("{stem}.csv")))?))?;
    std::fs::write(out.join(format!("{stem}.json")), log.to_json()? + "\n")?;
    Ok(())
}

fn write_reports(out: &Path, stem: &str, rows: &[(ScoreSource, EvalReport)], meta: &ExportMeta) -> Result<()> {
    sim::write_reports_csv(BufWriter::new(File::create(out.join(format!("{stem}.csv")))?), rows, meta)?;
    std::fs::write(out.join(format!("{stem}.json")), sim::reports_json(rows, meta)? + "\n")?;
    Ok(())
}

/// Trains the approximator (or, with `big`, the white-box big network) with
/// plain supervised loss and writes its checkpoint and log.
pub fn cmd_pretrain(run: &mut Run, big: bool) -> Result<PathBuf> {
    run.begin(if big { "pretrain_big" } else { "pretrain" })?;
    let arch = if big {
        match &run.config.big {
            BigConfig::WhiteBox { arch } => arch.clone(),
            BigConfig::Oracle => return Err(config_err("`pretrain --big` needs [big] kind = \"white_box\"")),
        }
    } else {
        run.config.small_arch()?.clone()
    };
    let (train, _) = run.config.datasets()?;
    let (net, log) = pretrain_approximator(&arch, &train, &run.config.pretrain_config())?;
    let (ckpt, stem) = if big {
        (run.big_path(), "pretrain_big_log")
    } else {
        (run.approximator_path(), "pretrain_log")
    };
    net.save(&ckpt)?;
    write_log(&log, &run.out, stem)?;
    Ok(ckpt)
}

/// Inserts the predictor head into the pretrained approximator and trains
/// both heads jointly.
pub fn cmd_train(run: &mut Run) -> Result<(PathBuf, TrainLog)> {
    run.begin("train")?;
    let pretrained = Approximator::load(run.approximator_path())?;
    check_arch(run.config.small_arch()?, pretrained.arch())?;
    let big = run.big_model()?;
    let (train, test) = run.config.datasets()?;
    let net = insert_predictor_head(pretrained, run.config.seed);
    let (net, log) = joint_train(net, &big, &train, Some(&test), &run.config.train_config())?;
    let ckpt = run.two_head_path();
    net.save(&ckpt)?;
    write_log(&log, &run.out, "train_log")?;
    Ok((ckpt, log))
}

/// One report on the test split for the configured source and threshold.
pub fn cmd_eval(run: &mut Run) -> Result<(ScoreSource, EvalReport)> {
    let meta = run.begin("eval")?;
    let net = run.load_two_head()?;
    let (_, test) = run.config.datasets()?;
    let outcomes = run.outcomes(&net, &test)?;
    let cost = run.config.cost_model()?;
    let e = &run.config.eval;
    let report = match e.target_ad {
        Some(ad) => find_delta_for_target(&outcomes, e.source, AccuracyTarget::MaxAd(ad), DeltaGrid::Distinct, &cost)?.1,
        None => outcomes.evaluate(
            RoutingPolicy {
                source: e.source,
                delta: e.delta,
            },
            &cost,
        )?,
    };
    let rows = [(e.source, report.clone())];
    write_reports(&run.out, "eval", &rows, &meta)?;
    Ok((e.source, report))
}

/// The threshold grid a sweep uses for `source`.
pub fn sweep_deltas(section: &SweepSection, source: ScoreSource, num_classes: Option<usize>) -> Vec<f64> {
    match &section.deltas {
        Some(d) => d.clone(),
        None => {
            let (lo, hi) = source.range(num_classes.unwrap_or(2));
            linspace(lo, hi + 0.1 * (hi - lo), section.points)
        }
    }
}

/// Threshold sweeps for every available score source.
pub fn cmd_sweep(run: &mut Run) -> Result<Vec<(ScoreSource, EvalReport)>> {
    let meta = run.begin("sweep")?;
    let net = run.load_two_head()?;
    let (_, test) = run.config.datasets()?;
    let outcomes = run.outcomes(&net, &test)?;
    let cost = run.config.cost_model()?;
    let mut rows = Vec::new();
    for source in ScoreSource::ALL {
        if outcomes.scores(source).is_err() {
            continue;
        }
        let deltas = sweep_deltas(&run.config.sweep, source, outcomes.num_classes);
        for r in sweep_thresholds(&outcomes, source, &cost, &deltas)? {
            rows.push((source, r));
        }
    }
    write_reports(&run.out, "sweep", &rows, &meta)?;
    Ok(rows)
}

/// Score histogram split by small-net correctness, plus the AUROC of the
/// source.
pub fn cmd_histogram(run: &mut Run) -> Result<(Histogram, f64)> {
    let meta = run.begin("histogram")?;
    let net = run.load_two_head()?;
    let (_, test) = run.config.datasets()?;
    let outcomes = run.outcomes(&net, &test)?;
    let h = &run.config.histogram;
    let hist = score_histogram(&outcomes, h.source, h.bins)?;
    let auroc = separation_auroc(&outcomes, h.source)?;
    let name = h.source.name();
    sim::write_histogram_csv(
        BufWriter::new(File::create(run.path(&format!("histogram_{name}.csv")))?),
        &hist,
        &meta,
    )?;
    let summary = serde_json::json!({
        "source": name,
        "auroc": auroc,
        "n_samples": outcomes.len(),
        "config_hash": meta.config_hash,
        "seed": meta.seed,
    });
    std::fs::write(
        run.path(&format!("histogram_{name}_summary.json")),
        serde_json::to_string_pretty(&summary)? + "\n",
    )?;
    Ok((hist, auroc))
}

/// FLOPs of every pool member (predictor head included) and the selected name.
pub fn cmd_profile(config: &RunConfig, budget: Option<u64>) -> Result<(Vec<(String, u64)>, Result<String>)> {
    let p = config
        .profile
        .as_ref()
        .ok_or_else(|| config_err("config has no [profile] section"))?;
    let pool: Vec<(String, ArchSpec)> = p.pool.iter().map(|e| (e.name.clone(), e.arch.clone())).collect();
    let flops = pool.iter().map(|(n, a)| (n.clone(), count_flops(a, true))).collect();
    let chosen = profile_select(&pool, budget.unwrap_or(p.budget)).map(str::to_string);
    Ok((flops, chosen))
}

#[derive(Debug, Parser)]
#[command(name = "appeal", version, about = "Two-head edge/cloud collaborative inference")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct Common {
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory (overrides `out_dir`).
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Train the approximator (or the white-box big network with --big).
    Pretrain {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        big: bool,
    },
    /// Insert the predictor head and train both heads jointly.
    Train {
        #[command(flatten)]
        common: Common,
        /// Pretrained approximator checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        big_checkpoint: Option<PathBuf>,
    },
    /// Evaluate one routing policy on the test split.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Two-head checkpoint.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        big_checkpoint: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long, allow_hyphen_values = true)]
        delta: Option<f64>,
        #[arg(long)]
        target_ad: Option<f64>,
    },
    /// Sweep thresholds for every score source.
    Sweep {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        big_checkpoint: Option<PathBuf>,
    },
    /// Histogram of a score source split by small-net correctness.
    Histogram {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        big_checkpoint: Option<PathBuf>,
        #[arg(long)]
        source: Option<String>,
        #[arg(long)]
        bins: Option<usize>,
    },
    /// Pick the largest pool architecture within a FLOPs budget.
    Profile {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        budget: Option<u64>,
    },
}

fn open(common: &Common) -> Result<Run> {
    Run::new(RunConfig::load(&common.config)?, common.seed, common.out.clone())
}

fn set_path(slot: &mut Option<PathBuf>, flag: &Option<PathBuf>) {
    if let Some(p) = flag {
        *slot = Some(std::path::absolute(p).unwrap_or_else(|_| p.clone()));
    }
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "undefined".into(), |a| format!("{a:.6}"))
}

fn execute(cmd: Command) -> Result<()> {
    match cmd {
        Command::Pretrain { common, big } => {
            let mut run = open(&common)?;
            let ckpt = cmd_pretrain(&mut run, big)?;
            println!("checkpoint {}", ckpt.display());
        }
        Command::Train {
            common,
            checkpoint,
            big_checkpoint,
        } => {
            let mut run = open(&common)?;
            set_path(&mut run.config.checkpoints.approximator, &checkpoint);
            set_path(&mut run.config.checkpoints.big, &big_checkpoint);
            let (ckpt, log) = cmd_train(&mut run)?;
            if let Some(last) = log.epochs.last() {
                println!(
                    "epoch {} mean_lp {:.6} mean_lq {} beta {} mean_q {}",
                    last.epoch,
                    last.mean_lp,
                    fmt_opt(last.mean_lq),
                    fmt_opt(last.beta),
                    fmt_opt(last.mean_q)
                );
            }
            println!("checkpoint {}", ckpt.display());
        }
        Command::Eval {
            common,
            checkpoint,
            big_checkpoint,
            source,
            delta,
            target_ad,
        } => {
            let mut run = open(&common)?;
            set_path(&mut run.config.checkpoints.two_head, &checkpoint);
            set_path(&mut run.config.checkpoints.big, &big_checkpoint);
            if let Some(s) = source {
                run.config.eval.source = ScoreSource::parse(&s)?;
            }
            if let Some(d) = delta {
                run.config.eval.delta = d;
            }
            if target_ad.is_some() {
                run.config.eval.target_ad = target_ad;
            }
            let (src, r) = cmd_eval(&mut run)?;
            println!(
                "source {} delta {} sr {:.6} ar {:.6} accuracy {:.6} acc_small {:.6} acc_big {:.6} acc_i {} ad {:.6} cost {:.3}",
                src.name(),
                r.delta,
                r.sr,
                r.ar,
                r.overall_accuracy,
                r.acc_small,
                r.acc_big,
                fmt_opt(r.acc_i),
                r.ad,
                r.overall_cost
            );
        }
        Command::Sweep {
            common,
            checkpoint,
            big_checkpoint,
        } => {
            let mut run = open(&common)?;
            set_path(&mut run.config.checkpoints.two_head, &checkpoint);
            set_path(&mut run.config.checkpoints.big, &big_checkpoint);
            let rows = cmd_sweep(&mut run)?;
            println!("{} rows written to {}", rows.len(), run.path("sweep.csv").display());
        }
        Command::Histogram {
            common,
            checkpoint,
            big_checkpoint,
            source,
            bins,
        } => {
            let mut run = open(&common)?;
            set_path(&mut run.config.checkpoints.two_head, &checkpoint);
            set_path(&mut run.config.checkpoints.big, &big_checkpoint);
            if let Some(s) = source {
                run.config.histogram.source = ScoreSource::parse(&s)?;
            }
            if let Some(b) = bins {
                run.config.histogram.bins = b;
            }
            run.config.validate()?;
            let (h, auroc) = cmd_histogram(&mut run)?;
            for i in 0..h.bin_left.len() {
                println!("{:.6} {} {}", h.bin_left[i], h.correct[i], h.incorrect[i]);
            }
            println!("auroc source={} value={auroc:.6}", run.config.histogram.source.name());
        }
        Command::Profile { common, budget } => {
            let run = open(&common)?;
            let (flops, chosen) = cmd_profile(&run.config, budget)?;
            for (name, f) in &flops {
                println!("{name} {f}");
            }
            println!("selected {}", chosen?);
        }
    }
    Ok(())
}

/// Exit code for an error: 1 for usage and configuration problems, 2 for
/// everything that fails while running.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Config(_) => 1,
        _ => 2,
    }
}

fn configure_threads() {
    if std::env::var(SINGLE_THREAD_ENV).is_ok_and(|v| v == "1") {
        // fails only if a pool already exists, which leaves it as configured
        let _ = rayon::ThreadPoolBuilder::new().num_threads(1).build_global();
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    configure_threads();
    match execute(cli.command) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"
schema_version = 1
seed = 3

[data]
source = "std_synth"

[small]
input_dim = 8
extractor = [16]
head = [16, 4]

[cost]
big_flops = 5000.0
"#;

    #[test]
    fn minimal_config_resolves_defaults() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        assert_eq!(cfg.mode(), Mode::BlackBox);
        assert_eq!(cfg.pretrain_config(), TrainConfig::pretrain_default(3));
        assert_eq!(cfg.train_config(), TrainConfig::joint_default(3, Mode::BlackBox));
        let cost = cfg.cost_model().unwrap();
        let small = cfg.small.as_ref().unwrap();
        assert_eq!(cost.c1, count_flops(small, true) as f64);
        assert_eq!(cost.c0, 5000.0 + (count_flops(small, true) - count_flops(small, false)) as f64);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = RunConfig::from_toml(MINIMAL, Path::new(".")).unwrap();
        let text = cfg.resolved().to_toml().unwrap();
        let back = RunConfig::from_toml(&text, Path::new(".")).unwrap();
        assert_eq!(back, cfg.resolved());
        assert_eq!(back.train_config(), cfg.train_config());
        assert_eq!(back.cost_model().unwrap(), cfg.cost_model().unwrap());
    }

    #[test]
    fn unknown_keys_and_versions_rejected() {
        let bad = MINIMAL.replace("seed = 3", "seed = 3\nsede = 4");
        assert!(matches!(RunConfig::from_toml(&bad, Path::new(".")), Err(Error::Config(_))));
        let bad = MINIMAL.replace("[cost]", "[cost]\nc2 = 1.0");
        assert!(matches!(RunConfig::from_toml(&bad, Path::new(".")), Err(Error::Config(_))));
        let bad = MINIMAL.replace("schema_version = 1", "schema_version = 7");
        assert!(matches!(RunConfig::from_toml(&bad, Path::new(".")), Err(Error::Config(_))));
    }

    #[test]
    fn missing_csv_is_a_config_error() {
        let cfg = MINIMAL.replace(
            "source = \"std_synth\"",
            "source = \"csv\"\ntrain = \"nope.csv\"\ntest = \"nope.csv\"\nschema = { task = \"classification\", d = 8, k = 4 }",
        );
        let e = RunConfig::from_toml(&cfg, Path::new("/nonexistent")).unwrap_err();
        assert_eq!(exit_code(&e), 1);
        assert!(e.to_string().contains("nope.csv"));
    }

    #[test]
    fn white_box_section_parses() {
        let cfg = format!("{MINIMAL}\n[big]\nkind = \"white_box\"\narch = {{ input_dim = 8, extractor = [64], head = [64, 4] }}\n");
        let cfg = RunConfig::from_toml(&cfg, Path::new(".")).unwrap();
        assert_eq!(cfg.mode(), Mode::WhiteBox);
        assert_eq!(cfg.train_config().mode, Mode::WhiteBox);
    }

    #[test]
    fn sweep_grid_spans_source_range() {
        let s = SweepSection::default();
        let q = sweep_deltas(&s, ScoreSource::PredictorQ, Some(4));
        assert_eq!(q.len(), 23);
        assert_eq!(q[0], 0.0);
        assert!((q[22] - 1.1).abs() < 1e-12);
        let e = sweep_deltas(&s, ScoreSource::Entropy, Some(4));
        assert!((e[0] + 4f64.ln()).abs() < 1e-12);
        assert!(e[22] > 0.0);
    }
}
