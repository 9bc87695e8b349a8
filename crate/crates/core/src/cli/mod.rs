//! Config-driven commands behind the `bevdg` binary.
//!
//! Every command is a deterministic function of the config file and the
//! files it reads; re-running overwrites its outputs with identical bytes.

mod plot;

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::dvm::Bins;
use crate::error::{Error, Result};
use crate::eval::{
    confusions, dg_experiment, evaluate, histogram_report, inputs_of, misalignment_sweep, miou,
    scene_seed, synthesize_scene, ROLES, SWEEP_METHODS, VARIANTS,
};
use crate::io::{read_checkpoint, read_scene, write_checkpoint, write_scene, Checkpoint};
use crate::learn::{train, TrainData, TrainOptions};
use crate::scene::{ScenePair, NUM_CLASSES};

pub use plot::{bar_plot, line_plot};

#[derive(Debug, Parser)]
#[command(name = "bevdg", version, about = "BEV fusion and density-aware domain generalization on synthetic scenes")]
pub struct Cli {
    /// TOML run configuration; defaults apply to missing keys.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory (overrides `out` in the config).
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write scene files for every domain role plus a manifest.
    Synth {
        /// Scenes per role (overrides `synth.count`).
        #[arg(long)]
        count: Option<usize>,
    },
    /// Train on the synthesized source scenes.
    Train,
    /// Score a checkpoint on the held-out target scenes.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Misalignment sweep: point-to-point vs area-to-area fusion.
    Sweep,
    /// Two-source to unseen-target ablation of BAF and BDCL.
    Dg,
    /// Pillar-population histograms of the synthesized scenes.
    Hist {
        /// Lower bin edges, e.g. "1,5,20" (overrides `hist.bins`).
        #[arg(long)]
        bins: Option<String>,
    },
}

/// Process exit code for an error.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::NonFinite(_) | Error::NotNormalized { .. } | Error::EmptyConfusion => 3,
        Error::Io { .. } | Error::Format { .. } => 4,
        _ => 2,
    }
}

/// Parses nothing; runs an already-parsed command line.
pub fn run(cli: Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.out.as_ref().map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("out"));
    fs::create_dir_all(&out).map_err(|e| Error::io(&out, e))?;
    match cli.command {
        Command::Synth { count } => cmd_synth(&cfg, &out, count.unwrap_or(cfg.synth.count)),
        Command::Train => cmd_train(&cfg, &out),
        Command::Eval { checkpoint } => {
            let ckpt = checkpoint.unwrap_or_else(|| out.join(CHECKPOINT));
            cmd_eval(&cfg, &out, &ckpt)
        }
        Command::Sweep => cmd_sweep(&cfg, &out),
        Command::Dg => cmd_dg(&cfg, &out),
        Command::Hist { bins } => {
            let bins: Bins = match bins {
                Some(b) => b.parse()?,
                None => cfg.bins()?,
            };
            cmd_hist(&cfg, &out, &bins)
        }
    }
}

pub const MANIFEST: &str = "manifest.csv";
pub const CHECKPOINT: &str = "checkpoint.bdgm";

/// One synthesized scene file.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub role: String,
    pub index: usize,
    pub seed: u64,
    /// Relative to the output directory.
    pub path: String,
    pub points: usize,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| csv_error(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::format(path, format!("{other:?}")),
    }
}

fn write_rows<I, R>(path: &Path, header: &[&str], rows: I) -> Result<()>
where
    I: IntoIterator<Item = R>,
    R: IntoIterator<Item = String>,
{
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(|e| csv_error(path, e))?;
    for row in rows {
        let row: Vec<String> = row.into_iter().collect();
        w.write_record(&row).map_err(|e| csv_error(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path, count: usize) -> Result<()> {
    let dir = out.join("scenes");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = out.join(MANIFEST);
    let mut w = csv_writer(&path)?;
    if count == 0 {
        w.write_record(["role", "index", "seed", "path", "points"])
            .map_err(|e| csv_error(&path, e))?;
    }
    for role in ROLES {
        for index in 0..count {
            let pair = synthesize_scene(cfg, cfg.seed, role, index)?;
            let rel = format!("scenes/{role}_{index:04}.bdg");
            write_scene(&out.join(&rel), &pair)?;
            let row = ManifestRow {
                role: role.to_owned(),
                index,
                seed: scene_seed(cfg.seed, role, index),
                path: rel,
                points: pair.cloud.len(),
            };
            w.serialize(row).map_err(|e| csv_error(&path, e))?;
        }
    }
    w.flush().map_err(|e| Error::io(&path, e))
}

pub fn read_manifest(out: &Path) -> Result<Vec<ManifestRow>> {
    let path = out.join(MANIFEST);
    if !path.exists() {
        let hint = std::io::Error::new(std::io::ErrorKind::NotFound, "run `bevdg synth` first");
        return Err(Error::io(&path, hint));
    }
    let mut r = csv::Reader::from_path(&path).map_err(|e| csv_error(&path, e))?;
    r.deserialize()
        .map(|row| row.map_err(|e| csv_error(&path, e)))
        .collect()
}

/// Scenes of each role from the manifest, in index order.
fn load_scenes(out: &Path) -> Result<[Vec<ScenePair>; 3]> {
    let mut rows = read_manifest(out)?;
    rows.sort_by(|a, b| (a.role.as_str(), a.index).cmp(&(b.role.as_str(), b.index)));
    let mut by_role: [Vec<ScenePair>; 3] = Default::default();
    for row in rows {
        let k = ROLES
            .iter()
            .position(|r| *r == row.role)
            .ok_or_else(|| Error::format(out.join(MANIFEST), format!("unknown role {}", row.role)))?;
        by_role[k].push(read_scene(&out.join(&row.path))?);
    }
    Ok(by_role)
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(fmt).unwrap_or_default()
}

pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<()> {
    let [s1, s2, target] = load_scenes(out)?;
    let n_val = cfg.data.val_scenes.min(target.len());
    let dataset = crate::eval::Dataset {
        source1: s1,
        source2: s2,
        validation: target[..n_val].to_vec(),
        test: Vec::new(),
    };
    let data: TrainData = dataset.train_data(cfg, cfg.ablation.bdcl)?;
    let opts = TrainOptions {
        fusion: cfg.ablation.fusion(),
        bdcl: cfg.ablation.bdcl,
        bins: cfg.bins()?,
    };
    let outcome = train(&data, &cfg.model, &cfg.train, &opts, cfg.seed)?;
    write_checkpoint(
        &out.join(CHECKPOINT),
        &Checkpoint {
            params: outcome.params,
            fusion: opts.fusion,
            knn: cfg.model.knn,
        },
    )?;
    write_rows(
        &out.join("metrics.csv"),
        &[
            "iteration",
            "seg_s1",
            "seg_s2",
            "ct_s1",
            "ct_s2",
            "total",
            "val_miou_2d",
            "val_miou_3d",
            "val_miou_avg",
        ],
        outcome.log.iter().map(|r| {
            let v = r.validation;
            vec![
                r.iteration.to_string(),
                fmt(r.loss.seg_s1),
                fmt(r.loss.seg_s2),
                fmt(r.loss.ct_s1),
                fmt(r.loss.ct_s2),
                fmt(r.loss.total),
                fmt_opt(v.map(|s| s.miou_2d)),
                fmt_opt(v.map(|s| s.miou_3d)),
                fmt_opt(v.map(|s| s.miou_avg)),
            ]
        }),
    )?;
    let series = vec![(
        "total".to_owned(),
        outcome
            .log
            .iter()
            .map(|r| (r.iteration as f64, r.loss.total))
            .collect(),
    )];
    write_text(&out.join("loss.svg"), &line_plot("Training loss", "iteration", "L_all", &series))
}

pub fn cmd_eval(cfg: &RunConfig, out: &Path, checkpoint: &Path) -> Result<()> {
    let ckpt = read_checkpoint(checkpoint)?;
    let [_, _, target] = load_scenes(out)?;
    let n_val = cfg.data.val_scenes.min(target.len());
    if target.len() == n_val {
        return Err(Error::Config("no target scenes beyond the validation split".into()));
    }
    let mut scfg = cfg.clone();
    scfg.model.knn = ckpt.knn;
    let test = inputs_of(&target[n_val..], &scfg)?;
    let bins = cfg.bins()?;
    let confs = confusions(&ckpt.params, &test, ckpt.fusion, &bins)?;
    let mut header = vec!["head".to_owned(), "miou".to_owned()];
    header.extend(crate::scene::Class::ALL.iter().map(|c| format!("iou_{}", c.name())));
    let mut rows = Vec::new();
    for (head, conf) in ["2d", "3d", "avg"].iter().zip(&confs) {
        let report = miou(conf)?;
        let mut row = vec![head.to_string(), fmt(report.mean)];
        row.extend((0..NUM_CLASSES).map(|c| fmt_opt(report.per_class[c])));
        rows.push(row);
    }
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(&out.join("eval.csv"), &header, rows)
}

pub fn cmd_sweep(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = misalignment_sweep(cfg)?;
    write_rows(
        &out.join("sweep.csv"),
        &["method", "fraction", "seed", "miou_2d", "miou_3d", "miou_avg"],
        rows.iter().map(|r| {
            vec![
                r.method.name().to_owned(),
                fmt(r.fraction),
                r.seed.to_string(),
                fmt(r.scores.miou_2d),
                fmt(r.scores.miou_3d),
                fmt(r.scores.miou_avg),
            ]
        }),
    )?;
    let series: Vec<(String, Vec<(f64, f64)>)> = SWEEP_METHODS
        .iter()
        .map(|&m| {
            let pts = cfg
                .sweep
                .fractions
                .iter()
                .map(|&f| {
                    let xs: Vec<f64> = rows
                        .iter()
                        .filter(|r| r.method == m && r.fraction == f)
                        .map(|r| r.scores.miou_avg)
                        .collect();
                    (f, mean(&xs))
                })
                .collect();
            (format!("{}-to-{}", m.name(), m.name()), pts)
        })
        .collect();
    write_text(
        &out.join("sweep.svg"),
        &line_plot("Misalignment sweep", "fraction of perturbed projections", "Avg mIoU", &series),
    )
}

fn mean(xs: &[f64]) -> f64 {
    if xs.is_empty() {
        0.0
    } else {
        xs.iter().sum::<f64>() / xs.len() as f64
    }
}

pub fn cmd_dg(cfg: &RunConfig, out: &Path) -> Result<()> {
    let rows = dg_experiment(cfg, &VARIANTS)?;
    let mut table: Vec<Vec<String>> = rows
        .iter()
        .map(|r| {
            vec![
                r.variant.name.to_owned(),
                r.variant.baf.to_string(),
                r.variant.bdcl.to_string(),
                fmt(r.scores.miou_2d),
                fmt(r.scores.miou_3d),
                fmt(r.scores.miou_avg),
                r.seed.to_string(),
            ]
        })
        .collect();
    let mut means = Vec::new();
    for v in VARIANTS {
        let of = |f: fn(&crate::eval::Scores) -> f64| {
            mean(&rows.iter().filter(|r| r.variant == v).map(|r| f(&r.scores)).collect::<Vec<_>>())
        };
        let m = [of(|s| s.miou_2d), of(|s| s.miou_3d), of(|s| s.miou_avg)];
        table.push(vec![
            v.name.to_owned(),
            v.baf.to_string(),
            v.bdcl.to_string(),
            fmt(m[0]),
            fmt(m[1]),
            fmt(m[2]),
            "mean".to_owned(),
        ]);
        means.push(m);
    }
    write_rows(
        &out.join("dg.csv"),
        &["variant", "baf", "bdcl", "miou_2d", "miou_3d", "miou_avg", "seed"],
        table,
    )?;
    let cats: Vec<String> = VARIANTS.iter().map(|v| v.name.to_owned()).collect();
    let series: Vec<(String, Vec<f64>)> = ["2D", "3D", "Avg"]
        .iter()
        .enumerate()
        .map(|(k, name)| (name.to_string(), means.iter().map(|m| m[k]).collect()))
        .collect();
    write_text(&out.join("dg.svg"), &bar_plot("Unseen-density mIoU", "mIoU", &cats, &series))
}

pub fn cmd_hist(cfg: &RunConfig, out: &Path, bins: &Bins) -> Result<()> {
    let scenes = load_scenes(out)?;
    let domains: Vec<(String, Vec<ScenePair>)> = ROLES
        .iter()
        .zip(scenes)
        .map(|(role, s)| {
            let beams = crate::eval::role_lidar(cfg, role).map(|l| l.beam_count).unwrap_or(0);
            (format!("{role}-{beams}"), s)
        })
        .collect();
    let rows = histogram_report(&domains, cfg, bins)?;
    let mut header = vec!["domain_tag".to_owned()];
    let names: Vec<String> = (0..bins.len()).map(bin_name).collect();
    header.extend(names.iter().map(|n| format!("n_{n}")));
    header.push("n_all".to_owned());
    header.extend(names.iter().map(|n| format!("pct_{n}")));
    let header: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &out.join("hist.csv"),
        &header,
        rows.iter().map(|r| {
            let mut row = vec![r.domain_tag.clone()];
            row.extend(r.hist.counts.iter().map(usize::to_string));
            row.push(r.hist.n_all.to_string());
            row.extend(r.shares().into_iter().map(|s| fmt(100.0 * s)));
            row
        }),
    )?;
    let cats: Vec<String> = (0..bins.len()).map(|k| bins.label(k)).collect();
    let series: Vec<(String, Vec<f64>)> = rows
        .iter()
        .map(|r| (r.domain_tag.clone(), r.shares()))
        .collect();
    write_text(&out.join("hist.svg"), &bar_plot("Pillar populations", "share of non-empty pillars", &cats, &series))
}

/// Column stem for bin `k`: low/mid/high for the standard three bins.
fn bin_name(k: usize) -> String {
    match k {
        0 => "low".into(),
        1 => "mid".into(),
        2 => "high".into(),
        _ => format!("bin{k}"),
    }
}

/// Scores of a checkpoint on given scenes; handy for scripted evaluation.
pub fn score_checkpoint(cfg: &RunConfig, ckpt: &Checkpoint, scenes: &[ScenePair]) -> Result<crate::eval::Scores> {
    let mut scfg = cfg.clone();
    scfg.model.knn = ckpt.knn;
    evaluate(&ckpt.params, &inputs_of(scenes, &scfg)?, ckpt.fusion, &cfg.bins()?)
}
