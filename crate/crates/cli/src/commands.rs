//! Subcommand implementations. Every output is a function of the config,
//! the flags and the seed.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use acorn_core::data::{self, DemoDataset, Trajectory};
use acorn_core::loss::{LossBreakdown, LossConfig, Regression};
use acorn_core::metrics::{self, SafetyReport};
use acorn_core::policy::{Normalizer, Policy};
use acorn_core::rng::derive_seed;
use acorn_core::sim::{self, NoiseLevel};
use acorn_core::train::{TrainConfig, Trainer, Variant};
use rayon::prelude::*;

use crate::config::{resolve, RunConfig};
use crate::error::{CliError, CliResult};
use crate::plot;

/// Offset of the evaluation seed stream from the base seed.
const EVAL_STREAM: u64 = 0xE7A1;

pub struct Context {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub seed: Option<u64>,
}

impl Context {
    pub fn new(cfg: RunConfig, out: impl Into<PathBuf>, seed: Option<u64>) -> Self {
        Self {
            cfg,
            out: out.into(),
            seed,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(self.cfg.train.seed)
    }

    pub fn path(&self, p: &Path) -> PathBuf {
        resolve(&self.out, p)
    }

    pub fn demos_path(&self) -> PathBuf {
        self.path(&self.cfg.paths.demos)
    }

    pub fn load_demos(&self) -> CliResult<DemoDataset> {
        let path = self.demos_path();
        if !path.is_file() {
            return Err(CliError::MissingFile(path));
        }
        Ok(data::load_dataset(&path, &self.cfg.env)?)
    }
}

fn write_text(path: &Path, text: &str) -> CliResult<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| acorn_core::Error::io(dir, e))?;
    }
    fs::write(path, text).map_err(|e| acorn_core::Error::io(path, e).into())
}

fn path_string(p: &Path) -> String {
    p.to_string_lossy().into_owned()
}

#[derive(Debug, Clone)]
pub struct DemoSummary {
    pub path: PathBuf,
    pub count: usize,
    pub mean_len: f64,
}

pub fn gen_demos(ctx: &Context, n: Option<usize>) -> CliResult<DemoSummary> {
    let n = n.unwrap_or(ctx.cfg.demos.count);
    if n == 0 {
        return Err(CliError::Usage("--n must be >= 1".into()));
    }
    let ds = data::generate_demonstrations(&ctx.cfg.env, n, ctx.seed())?;
    let path = ctx.demos_path();
    data::save_dataset(&ds, &path)?;
    let mean_len = ds.trajectories().iter().map(Trajectory::len).sum::<usize>() as f64 / n as f64;
    Ok(DemoSummary {
        path,
        count: n,
        mean_len,
    })
}

/// Trains one policy on `ds`. The normalizer is fitted to the demonstrations.
pub fn train_policy(
    cfg: &RunConfig,
    ds: &DemoDataset,
    variant: Variant,
    loss: &LossConfig,
    seed: u64,
) -> CliResult<(Policy, Vec<LossBreakdown>)> {
    let pc = cfg.policy.clone().for_arm(&cfg.env)?;
    let policy = Policy::init(pc, seed)?.with_normalizer(Normalizer::fit(ds))?;
    let train = TrainConfig {
        seed,
        ..cfg.train.clone()
    };
    let mut trainer = Trainer::new(policy, variant, loss.clone(), train)?;
    let history = trainer.run(ds)?;
    Ok((trainer.policy, history))
}

pub const LOSS_COLUMNS: [&str; 7] = ["step", "huber", "kl", "contrastive", "lambda_c", "baseline", "total"];

pub fn loss_csv(history: &[LossBreakdown]) -> String {
    let mut s = LOSS_COLUMNS.join(",");
    s.push('\n');
    for (i, b) in history.iter().enumerate() {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            i + 1,
            b.huber,
            b.kl,
            b.contrastive,
            b.lambda_c,
            b.baseline,
            b.total
        );
    }
    s
}

#[derive(Debug, Clone)]
pub struct TrainSummary {
    pub run: String,
    pub checkpoint: PathBuf,
    pub loss_csv: PathBuf,
    pub first: LossBreakdown,
    pub last: LossBreakdown,
}

pub fn run_name(variant: Variant, l1: bool, seed: u64) -> String {
    format!("{variant}{}-s{seed}", if l1 { "-l1" } else { "" })
}

pub fn train(ctx: &Context, variant: Variant, l1_baseline: bool) -> CliResult<TrainSummary> {
    let ds = ctx.load_demos()?;
    let seed = ctx.seed();
    let mut loss = ctx.cfg.loss.clone();
    if l1_baseline {
        loss.regression = Regression::L1;
    }
    let (policy, history) = train_policy(&ctx.cfg, &ds, variant, &loss, seed)?;
    let run = run_name(variant, l1_baseline, seed);
    let checkpoint = ctx.path(&ctx.cfg.paths.checkpoints).join(&run);
    let meta = BTreeMap::from([
        ("run".to_string(), run.clone()),
        ("variant".to_string(), variant.to_string()),
        ("regression".to_string(), format!("{:?}", loss.regression).to_lowercase()),
    ]);
    policy.save(&checkpoint, seed, history.len() as u64, meta)?;
    let loss_path = ctx.path(&ctx.cfg.paths.logs).join(format!("{run}.loss.csv"));
    write_text(&loss_path, &loss_csv(&history))?;
    let (first, last) = match (history.first(), history.last()) {
        (Some(f), Some(l)) => (f.clone(), l.clone()),
        _ => return Err(CliError::Usage("train.steps must be >= 1".into())),
    };
    Ok(TrainSummary {
        run,
        checkpoint,
        loss_csv: loss_path,
        first,
        last,
    })
}

/// Per-episode seeds for evaluation; shared by every noise level so that
/// presets are compared on the same goals.
pub fn episode_seed(base: u64, i: usize) -> u64 {
    derive_seed(derive_seed(base, EVAL_STREAM), i as u64)
}

/// Rolls out `episodes` episodes in parallel, collected in episode order.
pub fn rollouts(
    policy: &Policy,
    cfg: &RunConfig,
    noise: NoiseLevel,
    base_seed: u64,
    episodes: usize,
) -> CliResult<Vec<Trajectory>> {
    let nc = noise.config();
    let replan = policy.config.replan_every;
    (0..episodes)
        .into_par_iter()
        .map(|i| sim::run_episode(policy, &cfg.env, &nc, episode_seed(base_seed, i), replan))
        .collect::<acorn_core::Result<Vec<_>>>()
        .map_err(Into::into)
}

pub fn report_for(
    trajs: &[Trajectory],
    ds: &DemoDataset,
    cfg: &RunConfig,
    noise: NoiseLevel,
    meta: BTreeMap<String, String>,
) -> CliResult<SafetyReport> {
    let mut report = metrics::build_report(trajs, ds, &cfg.metrics)?;
    report.noise_level = noise.to_string();
    report.noise = Some(noise.config());
    report.meta = meta;
    Ok(report)
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub noise: NoiseLevel,
    pub log: PathBuf,
    pub report_path: PathBuf,
    pub report: SafetyReport,
}

pub fn eval(ctx: &Context, checkpoint: &Path, noise: Option<NoiseLevel>) -> CliResult<Vec<EvalSummary>> {
    if !checkpoint.join(acorn_core::policy::CHECKPOINT_HEADER).is_file() {
        return Err(CliError::MissingFile(checkpoint.join(acorn_core::policy::CHECKPOINT_HEADER)));
    }
    let (policy, header) = Policy::load(checkpoint)?;
    let ds = ctx.load_demos()?;
    let run = header.meta.get("run").cloned().unwrap_or_else(|| {
        checkpoint
            .file_name()
            .map_or_else(|| "policy".into(), |n| n.to_string_lossy().into_owned())
    });
    let levels = noise.map_or_else(|| ctx.cfg.eval.noise.clone(), |n| vec![n]);
    let base = ctx.seed();
    let mut out = Vec::with_capacity(levels.len());
    for level in levels {
        let trajs = rollouts(&policy, &ctx.cfg, level, base, ctx.cfg.eval.episodes_per_condition)?;
        let log_rel = ctx.cfg.paths.logs.join(format!("{run}.{level}.jsonl"));
        let log = ctx.path(&log_rel);
        data::save_log(&trajs, &log)?;
        let mut meta = header.meta.clone();
        meta.insert("run".into(), run.clone());
        meta.insert("train_seed".into(), header.seed.to_string());
        meta.insert("train_steps".into(), header.step.to_string());
        meta.insert("eval_seed".into(), base.to_string());
        meta.insert("log".into(), path_string(&log_rel));
        let report = report_for(&trajs, &ds, &ctx.cfg, level, meta)?;
        let report_path = ctx
            .path(&ctx.cfg.paths.reports)
            .join(format!("{run}.{level}.json"));
        write_text(&report_path, &(report.to_json() + "\n"))?;
        out.push(EvalSummary {
            noise: level,
            log,
            report_path,
            report,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AblationAxis {
    CurriculumK,
    Alpha,
}

impl AblationAxis {
    pub fn name(self) -> &'static str {
        match self {
            AblationAxis::CurriculumK => "curriculum_k",
            AblationAxis::Alpha => "alpha",
        }
    }

    pub fn grid(self) -> [f64; 3] {
        match self {
            AblationAxis::CurriculumK => [5.0, 10.0, 15.0],
            AblationAxis::Alpha => [0.1, 0.01, 0.001],
        }
    }

    fn apply(self, loss: &mut LossConfig, v: f64) {
        match self {
            AblationAxis::CurriculumK => loss.curriculum_k = v,
            AblationAxis::Alpha => loss.alpha = v,
        }
    }
}

pub const METRIC_COLUMNS: [&str; 5] = ["sr", "acr", "acr_f", "am_j", "am_e"];

/// One ablation row: per-metric means over the seeds' reports. Failure
/// metrics average the seeds where they are present and stay absent when
/// no seed had a failure.
pub fn ablation_row(reports: &[SafetyReport]) -> [Option<f64>; 5] {
    let mean = |f: &dyn Fn(&SafetyReport) -> Option<f64>| {
        let xs: Vec<f64> = reports.iter().filter_map(f).collect();
        (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
    };
    [
        mean(&|r| Some(r.sr)),
        mean(&|r| Some(r.acr)),
        mean(&|r| r.acr_f),
        mean(&|r| r.am_j),
        mean(&|r| r.am_e),
    ]
}

fn cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Debug, Clone)]
pub struct AblationSummary {
    pub table: PathBuf,
    pub rows: Vec<(f64, [Option<f64>; 5])>,
    pub reports: Vec<PathBuf>,
}

/// Trains and evaluates the contrastive variant at each grid value under
/// NORMAL noise, once per configured seed.
pub fn ablate(ctx: &Context, axis: AblationAxis) -> CliResult<AblationSummary> {
    let ds = ctx.load_demos()?;
    let reports_dir = ctx.path(&ctx.cfg.paths.reports);
    let noise = NoiseLevel::Normal;
    let mut rows = Vec::new();
    let mut report_paths = Vec::new();
    let mut csv = format!("{},{}\n", axis.name(), METRIC_COLUMNS.join(","));
    for v in axis.grid() {
        let mut loss = ctx.cfg.loss.clone();
        axis.apply(&mut loss, v);
        let mut reports = Vec::new();
        for &seed in &ctx.cfg.eval.seeds {
            let (policy, _) = train_policy(&ctx.cfg, &ds, Variant::Acorn, &loss, seed)?;
            let trajs = rollouts(&policy, &ctx.cfg, noise, ctx.seed(), ctx.cfg.eval.episodes_per_condition)?;
            let run = format!("ablate-{}-{v}-s{seed}", axis.name());
            let meta = BTreeMap::from([
                ("run".to_string(), run.clone()),
                ("variant".to_string(), Variant::Acorn.to_string()),
                (axis.name().to_string(), v.to_string()),
                ("train_seed".to_string(), seed.to_string()),
                ("eval_seed".to_string(), ctx.seed().to_string()),
            ]);
            let report = report_for(&trajs, &ds, &ctx.cfg, noise, meta)?;
            let path = reports_dir.join(format!("{run}.{noise}.json"));
            write_text(&path, &(report.to_json() + "\n"))?;
            report_paths.push(path);
            reports.push(report);
        }
        let row = ablation_row(&reports);
        let _ = writeln!(csv, "{v},{}", row.iter().map(|c| cell(*c)).collect::<Vec<_>>().join(","));
        rows.push((v, row));
    }
    let table = reports_dir.join(format!("ablate-{}.csv", axis.name()));
    write_text(&table, &csv)?;
    Ok(AblationSummary {
        table,
        rows,
        reports: report_paths,
    })
}

fn report_label(r: &SafetyReport, path: &Path) -> String {
    let run = r.meta.get("run").cloned().unwrap_or_else(|| {
        path.file_stem()
            .map_or_else(String::new, |s| s.to_string_lossy().into_owned())
    });
    format!("{run}/{}", r.noise_level)
}

/// Rows of the comparison table: metric name and its value per report.
pub fn comparison_rows(reports: &[SafetyReport]) -> Vec<(String, Vec<Option<f64>>)> {
    let mut rows: Vec<(String, Vec<Option<f64>>)> = vec![
        ("n_episodes".into(), reports.iter().map(|r| Some(r.n_episodes as f64)).collect()),
        ("sr".into(), reports.iter().map(|r| Some(r.sr)).collect()),
        ("acr".into(), reports.iter().map(|r| Some(r.acr)).collect()),
        ("acr_f".into(), reports.iter().map(|r| r.acr_f).collect()),
        ("am_j".into(), reports.iter().map(|r| r.am_j).collect()),
        ("am_e".into(), reports.iter().map(|r| r.am_e).collect()),
    ];
    for g in acorn_core::sim::JointGroup::ALL {
        rows.push((
            format!("am_j.{}", g.as_str()),
            reports.iter().map(|r| r.am_j_by_group.get(&g).copied()).collect(),
        ));
    }
    let tdl_label = reports
        .first()
        .map_or_else(|| "tdl.out_of_band_fraction".into(), |r| r.tdl.label());
    rows.push((tdl_label, reports.iter().map(|r| r.tdl.out_of_band_fraction).collect()));
    rows
}

#[derive(Debug, Clone)]
pub struct ReportSummary {
    pub table: PathBuf,
    pub band_files: Vec<PathBuf>,
}

/// Merges reports into `comparison.csv` (one column per report) and writes
/// TDL band CSV and SVG files next to it.
pub fn report(ctx: &Context, files: &[PathBuf]) -> CliResult<ReportSummary> {
    if files.is_empty() {
        return Err(CliError::Usage("report needs at least one report file".into()));
    }
    if let Some(missing) = files.iter().find(|p| !p.is_file()) {
        return Err(CliError::MissingFile(missing.clone()));
    }
    let mut reports = Vec::with_capacity(files.len());
    for path in files {
        let text = fs::read_to_string(path).map_err(|e| acorn_core::Error::io(path, e))?;
        let r = SafetyReport::from_json(&text).map_err(|e| acorn_core::Error::Parse {
            path: path.clone(),
            line: 1,
            message: e.to_string(),
        })?;
        reports.push(r);
    }
    let labels: Vec<String> = reports.iter().zip(files).map(|(r, p)| report_label(r, p)).collect();
    let mut csv = format!("metric,{}\n", labels.join(","));
    for (name, vals) in comparison_rows(&reports) {
        let _ = writeln!(csv, "{name},{}", vals.iter().map(|v| cell(*v)).collect::<Vec<_>>().join(","));
    }
    let dir = ctx.path(&ctx.cfg.paths.reports);
    let table = dir.join("comparison.csv");
    write_text(&table, &csv)?;

    let mut band_files = Vec::new();
    for ((r, path), label) in reports.iter().zip(files).zip(&labels) {
        let stem = path
            .file_stem()
            .map_or_else(|| "report".into(), |s| s.to_string_lossy().into_owned());
        let band_csv = dir.join(format!("{stem}.tdl.csv"));
        write_text(&band_csv, &plot::band_csv(&r.tdl))?;
        let failed: Vec<Trajectory> = match r.meta.get("log").map(|l| ctx.path(Path::new(l))) {
            Some(log) if log.is_file() => data::load_log(&log)?.into_iter().filter(|t| !t.success).collect(),
            _ => Vec::new(),
        };
        let svg = dir.join(format!("{stem}.tdl.svg"));
        write_text(&svg, &plot::band_svg(&r.tdl, &failed, label))?;
        band_files.push(band_csv);
        band_files.push(svg);
    }
    Ok(ReportSummary { table, band_files })
}
