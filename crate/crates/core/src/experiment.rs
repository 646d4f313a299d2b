//! The run pipeline behind the command-line tool: demonstrations, training,
//! evaluation, the noise-scale sweep and figures, all inside one run
//! directory.
//!
//! ```text
//! <out>/config.txt                 effective configuration
//! <out>/dataset.bin, dataset.sha256
//! <out>/cache/dispersion-<key>.bin
//! <out>/checkpoints/epoch-NNNN.ckpt, final.ckpt
//! <out>/logs/train.csv
//! <out>/reports/<tag>.txt, <tag>.csv, <tag>-trajectories.csv, <tag>-inferences.csv
//! <out>/sweep/sigma-<s>/...        one sub-run per noise scale
//! <out>/reports/sweep.csv
//! <out>/figures/*.svg
//! ```

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use crate::config::TrainConfig;
use crate::dispersion::load_or_build;
use crate::env::{
    default_map, generate_dataset, rollouts, DemoDataset, NavMap, NetPolicy, Normalizer, TrajectoryRecord,
};
use crate::error::{Error, Result};
use crate::metrics::{aggregate, spearman, EvalReport};
use crate::plot::{binned_mean, line_chart, map_overlay, Series, Trace};
use crate::policy::{Mode, PolicyDims, PolicyNets};
use crate::train::{log_from_csv, log_to_csv, train, EpochLog};

const GEN_STREAM: u64 = 0;
const TRAIN_STREAM: u64 = 1;

/// Paths of one run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.txt")
    }

    pub fn dataset(&self) -> PathBuf {
        self.root.join("dataset.bin")
    }

    pub fn dataset_hash(&self) -> PathBuf {
        self.root.join("dataset.sha256")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, epoch: usize) -> PathBuf {
        self.checkpoints().join(format!("epoch-{epoch:04}.ckpt"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.ckpt")
    }

    pub fn train_log(&self) -> PathBuf {
        self.root.join("logs").join("train.csv")
    }

    pub fn reports(&self) -> PathBuf {
        self.root.join("reports")
    }

    pub fn figures(&self) -> PathBuf {
        self.root.join("figures")
    }

    pub fn cache(&self) -> PathBuf {
        self.root.join("cache")
    }

    pub fn sweep(&self, sigma: f64) -> RunDir {
        RunDir::new(self.root.join("sweep").join(format!("sigma-{sigma}")))
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    if !path.exists() {
        return Err(Error::MissingArtifact(path.to_path_buf()));
    }
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::new(), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn load_map(cfg: &TrainConfig) -> Result<NavMap> {
    match &cfg.map {
        Some(p) => NavMap::load(p),
        None => Ok(default_map()),
    }
}

fn echo_config(cfg: &TrainConfig, run: &RunDir) -> Result<()> {
    write(&run.config(), cfg.to_text())
}

fn dims(cfg: &TrainConfig) -> PolicyDims {
    PolicyDims {
        horizon: cfg.chunk,
        action_dim: 2,
        obs_dim: 2,
    }
}

/// Generates `cfg.demos` demonstrations, saves them with their hash and
/// returns the dataset path.
pub fn cmd_gen_demos(cfg: &TrainConfig) -> Result<PathBuf> {
    let run = RunDir::new(&cfg.out);
    echo_config(cfg, &run)?;
    let map = load_map(cfg)?;
    let dataset = gen_dataset(cfg, &map, cfg.demos)?;
    let path = run.dataset();
    write(&path, dataset.encode())?;
    write(&run.dataset_hash(), format!("{}\n", hex(&dataset.content_hash())))?;
    log::info!(
        "wrote {} demonstrations ({} steps, passages {:?}) to {}",
        dataset.demos().len(),
        dataset.num_steps(),
        dataset.mode_counts(map.passages.len()),
        path.display()
    );
    Ok(path)
}

fn gen_dataset(cfg: &TrainConfig, map: &NavMap, count: usize) -> Result<DemoDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(GEN_STREAM);
    generate_dataset(map, count, &cfg.expert(), &mut rng)
}

/// Result of [`cmd_train`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub checkpoint: PathBuf,
    pub log: Vec<EpochLog>,
}

/// Trains on `dataset` (default: the run's own dataset), writing periodic and
/// final checkpoints and the per-epoch log.
pub fn cmd_train(cfg: &TrainConfig, dataset: Option<&Path>) -> Result<TrainOutcome> {
    let run = RunDir::new(&cfg.out);
    echo_config(cfg, &run)?;
    let path = dataset.map_or_else(|| run.dataset(), Path::to_path_buf);
    if !path.exists() {
        return Err(Error::MissingArtifact(path));
    }
    let data = DemoDataset::load(&path)?;
    train_on(cfg, &run, &data)
}

fn train_on(cfg: &TrainConfig, run: &RunDir, data: &DemoDataset) -> Result<TrainOutcome> {
    let d = dims(cfg);
    let pairs = data.chunk_pairs(d.horizon);
    let table = if cfg.mode == Mode::Mars {
        // The cache key covers everything the table depends on.
        let mut h = Sha256::new();
        h.update(data.content_hash());
        h.update((d.horizon as u64).to_le_bytes());
        h.update((cfg.neighbors as u64).to_le_bytes());
        let key: [u8; 32] = h.finalize().into();
        let cache = run.cache().join(format!("dispersion-{}.bin", &hex(&key)[..16]));
        fs::create_dir_all(run.cache()).map_err(|e| Error::io(run.cache(), e))?;
        Some(load_or_build(
            &cache,
            &key,
            pairs.histories.data(),
            pairs.targets.data(),
            d.horizon,
            d.action_dim,
            cfg.neighbors,
        )?)
    } else {
        None
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    rng.set_stream(TRAIN_STREAM);
    let mut nets = PolicyNets::new(cfg.mode, d, &cfg.architecture(), &mut rng)?;
    let extras = data.normalizer().to_tensors();
    let settings = cfg.train_settings();
    let mut rows = Vec::new();
    let log = train(&mut nets, &pairs, table.as_ref(), &settings, &mut rng, |nets, row| {
        rows.push(*row);
        write(&run.train_log(), log_to_csv(&rows))?;
        if cfg.checkpoint_every > 0 && row.epoch % cfg.checkpoint_every == 0 {
            write(&run.checkpoint(row.epoch), nets.to_checkpoint(cfg.k_max, &extras))?;
        }
        Ok(())
    })?;
    let checkpoint = run.final_checkpoint();
    write(&checkpoint, nets.to_checkpoint(cfg.k_max, &extras))?;
    write(&run.train_log(), log_to_csv(&log))?;
    Ok(TrainOutcome { checkpoint, log })
}

/// Loads a checkpoint into a rollout policy, checking it against `cfg`.
pub fn load_policy(cfg: &TrainConfig, checkpoint: &Path) -> Result<NetPolicy> {
    if !checkpoint.exists() {
        return Err(Error::MissingArtifact(checkpoint.to_path_buf()));
    }
    let bytes = fs::read(checkpoint).map_err(|e| Error::io(checkpoint, e))?;
    let ckpt = PolicyNets::from_checkpoint(&bytes)?;
    let got = ckpt.nets.dims();
    if got != dims(cfg) {
        return Err(Error::Config(format!(
            "checkpoint {} has chunk {} x {} and observation {}, config expects chunk {} x 2 and observation 2",
            checkpoint.display(),
            got.horizon,
            got.action_dim,
            got.obs_dim,
            cfg.chunk
        )));
    }
    if ckpt.k_max != cfg.k_max {
        log::warn!(
            "checkpoint was trained with k_max {}, evaluating with its value",
            ckpt.k_max
        );
    }
    let norm = Normalizer::from_tensors(&ckpt.extras)?;
    Ok(NetPolicy::new(ckpt.nets, norm, ckpt.k_max))
}

/// Report name for a checkpoint path: its file stem.
pub fn report_tag(checkpoint: &Path) -> String {
    checkpoint
        .file_stem()
        .map_or_else(|| "eval".to_string(), |s| s.to_string_lossy().into_owned())
}

/// Runs `cfg.eval_rollouts` closed-loop rollouts, writes the report and
/// trajectory exports, and returns the report.
pub fn cmd_eval(cfg: &TrainConfig, checkpoint: Option<&Path>) -> Result<EvalReport> {
    let run = RunDir::new(&cfg.out);
    let path = checkpoint.map_or_else(|| run.final_checkpoint(), Path::to_path_buf);
    let tag = report_tag(&path);
    let policy = load_policy(cfg, &path)?;
    let map = load_map(cfg)?;
    let (report, records) = evaluate(cfg, &policy, &map, cfg.eval_rollouts)?;
    let reports = run.reports();
    write(&reports.join(format!("{tag}.txt")), report.to_text())?;
    write(
        &reports.join(format!("{tag}.csv")),
        format!("{}\n{}\n", EvalReport::CSV_HEADER, report.csv_row()),
    )?;
    write(
        &reports.join(format!("{tag}-trajectories.csv")),
        trajectories_csv(&records),
    )?;
    write(&reports.join(format!("{tag}-inferences.csv")), inferences_csv(&records))?;
    let overlay = map_overlay(&map, &format!("{tag}: {} rollouts", records.len()), &traces(&records));
    write(&run.figures().join(format!("{tag}-overlay.svg")), overlay)?;
    Ok(report)
}

/// Rollouts of `policy` from the configured evaluation seed.
pub fn evaluate(
    cfg: &TrainConfig,
    policy: &NetPolicy,
    map: &NavMap,
    count: usize,
) -> Result<(EvalReport, Vec<TrajectoryRecord>)> {
    let records = rollouts(policy, map, cfg.eval_seed, count, cfg.rollout_horizon, cfg.replan_every)?;
    Ok((aggregate(&records, map), records))
}

fn traces(records: &[TrajectoryRecord]) -> Vec<Trace> {
    records
        .iter()
        .map(|r| Trace {
            positions: r.positions.clone(),
            segment_weight: r
                .plan_of_step
                .iter()
                .map(|&k| Some(r.inferences[k].max_weight()).filter(|w| !w.is_nan()))
                .collect(),
        })
        .collect()
}

pub const TRAJECTORY_CSV_HEADER: &str = "rollout,t,x,y,steps_used,max_w";

/// Every visited position; the last two columns describe the plan that
/// moved the agent there and are empty at the start.
pub fn trajectories_csv(records: &[TrajectoryRecord]) -> String {
    let mut s = format!("{TRAJECTORY_CSV_HEADER}\n");
    for (i, r) in records.iter().enumerate() {
        for line in r.to_csv().lines().skip(1) {
            let _ = writeln!(s, "{i},{line}");
        }
    }
    s
}

/// One row per policy call.
pub fn inferences_csv(records: &[TrajectoryRecord]) -> String {
    let mut s = format!("{TRAJECTORY_CSV_HEADER}\n");
    for (i, r) in records.iter().enumerate() {
        for inf in &r.inferences {
            let w = inf.max_weight();
            let w = if w.is_nan() { String::new() } else { format!("{w:.6}") };
            let _ = writeln!(
                s,
                "{i},{},{:.6},{:.6},{},{w}",
                inf.t, inf.position[0], inf.position[1], inf.steps_used
            );
        }
    }
    s
}

/// Parsed row of a trajectory or inference export.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TraceRow {
    pub rollout: usize,
    pub t: usize,
    pub position: [f64; 2],
    pub steps_used: Option<f64>,
    pub max_w: Option<f64>,
}

pub fn parse_trace_csv(text: &str) -> Result<Vec<TraceRow>> {
    let bad = |detail: String| Error::Malformed {
        what: "trajectory csv",
        detail,
    };
    let mut lines = text.lines();
    if lines.next() != Some(TRAJECTORY_CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(format!("row {}: expected 6 fields", i + 1)));
            }
            let num = |s: &str| {
                s.parse::<f64>()
                    .map_err(|_| bad(format!("row {}: bad number {s:?}", i + 1)))
            };
            let opt = |s: &str| if s.is_empty() { Ok(None) } else { num(s).map(Some) };
            Ok(TraceRow {
                rollout: f[0].parse().map_err(|_| bad(format!("row {}: bad rollout", i + 1)))?,
                t: f[1].parse().map_err(|_| bad(format!("row {}: bad step", i + 1)))?,
                position: [num(f[2])?, num(f[3])?],
                steps_used: opt(f[4])?,
                max_w: opt(f[5])?,
            })
        })
        .collect()
}

/// One sweep point.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepRow {
    pub sigma: f64,
    pub final_loss: f64,
    pub success_rate: f64,
    /// Training log, relative to the run directory.
    pub log_path: PathBuf,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub rows: Vec<SweepRow>,
    /// Rank correlation between noise scale and final loss.
    pub loss_rank_correlation: Option<f64>,
}

impl SweepReport {
    pub const CSV_HEADER: &'static str = "sigma,final_loss,success_rate,log";

    pub fn to_csv(&self) -> String {
        let mut s = format!("{}\n", Self::CSV_HEADER);
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.10e},{:.6},{}",
                r.sigma,
                r.final_loss,
                r.success_rate,
                r.log_path.display()
            );
        }
        s
    }
}

/// Trains a fixed-noise policy per noise scale on a shared dataset and
/// records its final loss and success rate.
pub fn cmd_sweep_variance(cfg: &TrainConfig) -> Result<SweepReport> {
    let run = RunDir::new(&cfg.out);
    echo_config(cfg, &run)?;
    let map = load_map(cfg)?;
    let data = gen_dataset(cfg, &map, cfg.sweep_demos)?;
    let mut rows = Vec::new();
    for &sigma in &cfg.sweep_sigmas {
        let sub = run.sweep(sigma);
        let sub_cfg = TrainConfig {
            mode: Mode::FixedSigma(sigma),
            epochs: cfg.sweep_epochs,
            checkpoint_every: 0,
            out: sub.root.clone(),
            ..cfg.clone()
        };
        echo_config(&sub_cfg, &sub)?;
        let outcome = train_on(&sub_cfg, &sub, &data)?;
        let policy = load_policy(&sub_cfg, &outcome.checkpoint)?;
        let (report, _) = evaluate(&sub_cfg, &policy, &map, cfg.sweep_rollouts)?;
        write(&sub.reports().join("final.txt"), report.to_text())?;
        let final_loss = outcome.log.last().map_or(f64::NAN, |r| r.total);
        log::info!(
            "sigma {sigma}: final loss {final_loss:.5}, success {:.2}",
            report.success_rate
        );
        rows.push(SweepRow {
            sigma,
            final_loss,
            success_rate: report.success_rate,
            log_path: sub
                .train_log()
                .strip_prefix(&run.root)
                .map_or_else(|_| sub.train_log(), Path::to_path_buf),
        });
    }
    let sigmas: Vec<f64> = rows.iter().map(|r| r.sigma).collect();
    let losses: Vec<f64> = rows.iter().map(|r| r.final_loss).collect();
    let report = SweepReport {
        loss_rank_correlation: spearman(&sigmas, &losses),
        rows,
    };
    write(&run.reports().join("sweep.csv"), report.to_csv())?;
    Ok(report)
}

/// Renders every figure the run's artifacts support and returns their paths.
pub fn cmd_plot(run_root: &Path) -> Result<Vec<PathBuf>> {
    let run = RunDir::new(run_root);
    let mut cfg = TrainConfig::default();
    if run.config().exists() {
        cfg.apply_file(&run.config())?;
    }
    let map = load_map(&cfg)?;
    let mut out = Vec::new();

    if run.train_log().exists() {
        let log = log_from_csv(&read_text(&run.train_log())?)?;
        let path = run.figures().join("convergence.svg");
        write(&path, convergence_chart("training losses", &log))?;
        out.push(path);
    }

    let sweep_csv = run.reports().join("sweep.csv");
    if sweep_csv.exists() {
        let mut series = Vec::new();
        for line in read_text(&sweep_csv)?.lines().skip(1) {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() < 4 {
                continue;
            }
            let log = log_from_csv(&read_text(&run.root.join(f[3]))?)?;
            series.push(Series {
                name: format!("sigma {}", f[0]),
                points: log.iter().map(|r| (r.epoch as f64, r.total)).collect(),
            });
        }
        let path = run.figures().join("sweep.svg");
        write(
            &path,
            line_chart("loss by source noise scale", "epoch", "total loss", &series, true),
        )?;
        out.push(path);
    }

    let mut tags: Vec<String> = match fs::read_dir(run.reports()) {
        Ok(entries) => entries
            .filter_map(|e| e.ok())
            .filter_map(|e| {
                let name = e.file_name().to_string_lossy().into_owned();
                name.strip_suffix("-trajectories.csv").map(str::to_string)
            })
            .collect(),
        Err(_) => Vec::new(),
    };
    tags.sort();
    for tag in tags {
        let rows = parse_trace_csv(&read_text(&run.reports().join(format!("{tag}-trajectories.csv")))?)?;
        let path = run.figures().join(format!("{tag}-overlay.svg"));
        write(&path, map_overlay(&map, &tag, &traces_from_rows(&rows)))?;
        out.push(path);

        let inf_path = run.reports().join(format!("{tag}-inferences.csv"));
        if inf_path.exists() {
            let rows = parse_trace_csv(&read_text(&inf_path)?)?;
            let path = run.figures().join(format!("{tag}-steps.svg"));
            write(&path, steps_chart(&map, &tag, &rows))?;
            out.push(path);
        }
    }

    if out.is_empty() {
        return Err(Error::MissingArtifact(run.train_log()));
    }
    Ok(out)
}

pub fn convergence_chart(title: &str, log: &[EpochLog]) -> String {
    let series = |name: &str, f: fn(&EpochLog) -> f64| Series {
        name: name.to_string(),
        points: log.iter().map(|r| (r.epoch as f64, f(r))).collect(),
    };
    line_chart(
        title,
        "epoch",
        "loss",
        &[
            series("total", |r| r.total),
            series("flow", |r| r.l_fm),
            series("reconstruction", |r| r.l_rec),
            series("dispersion", |r| r.l_div),
        ],
        true,
    )
}

fn traces_from_rows(rows: &[TraceRow]) -> Vec<Trace> {
    let mut traces: Vec<Trace> = Vec::new();
    let mut current = usize::MAX;
    for r in rows {
        if r.rollout != current {
            current = r.rollout;
            traces.push(Trace {
                positions: Vec::new(),
                segment_weight: Vec::new(),
            });
        }
        let tr = traces.last_mut().expect("pushed above");
        if !tr.positions.is_empty() {
            tr.segment_weight.push(r.max_w);
        }
        tr.positions.push(r.position);
    }
    traces
}

/// Mean integration steps against progress from start to goal.
fn steps_chart(map: &NavMap, tag: &str, rows: &[TraceRow]) -> String {
    let lo = map.start[1];
    let hi = map.goal.min[1];
    let samples: Vec<(f64, f64)> = rows
        .iter()
        .filter_map(|r| r.steps_used.map(|s| ((r.position[1] - lo) / (hi - lo), s)))
        .collect();
    let series = [Series {
        name: "mean steps".into(),
        points: binned_mean(&samples, 0.0, 1.0, 12),
    }];
    line_chart(
        &format!("{tag}: integration steps along the route"),
        "progress to goal",
        "steps",
        &series,
        false,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{InferenceRecord, Status};

    fn record() -> TrajectoryRecord {
        TrajectoryRecord {
            positions: vec![[0.5, 0.1], [0.5, 0.15], [0.52, 0.2]],
            plan_of_step: vec![0, 0],
            inferences: vec![InferenceRecord {
                t: 0,
                position: [0.5, 0.1],
                steps_used: 4,
                weight: vec![0.3, 0.35],
            }],
            status: Status::Timeout,
            passage: None,
        }
    }

    #[test]
    fn trace_exports_parse_back() {
        let recs = vec![record(), record()];
        let rows = parse_trace_csv(&trajectories_csv(&recs)).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows[0].steps_used, None);
        assert_eq!(rows[1].steps_used, Some(4.0));
        assert_eq!(rows[1].max_w, Some(0.35));
        assert_eq!(rows[3].rollout, 1);
        let traces = traces_from_rows(&rows);
        assert_eq!(traces.len(), 2);
        assert_eq!(traces[0].segment_weight, vec![Some(0.35), Some(0.35)]);

        let inf = parse_trace_csv(&inferences_csv(&recs)).unwrap();
        assert_eq!(inf.len(), 2);
        assert_eq!(inf[0].steps_used, Some(4.0));
    }

    #[test]
    fn malformed_trace_csv_is_rejected() {
        assert!(parse_trace_csv("a,b\n").is_err());
        let text = format!("{TRAJECTORY_CSV_HEADER}\n0,1,x,0.2,,\n");
        assert!(matches!(parse_trace_csv(&text), Err(Error::Malformed { .. })));
    }

    #[test]
    fn hex_encoding() {
        assert_eq!(hex(&[0, 15, 255]), "000fff");
    }
}
