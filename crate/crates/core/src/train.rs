//! Minibatch training of the velocity field and scheduler.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::Rng;

use crate::autodiff::{Adam, AdamConfig, Graph, Tensor};
use crate::dispersion::DispersionTable;
use crate::env::ChunkPairs;
use crate::error::{Error, Result};
use crate::losses::{loss_total, Batch, Draws, LossConfig};
use crate::policy::{Mode, PolicyNets};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainSettings {
    pub epochs: usize,
    pub batch_size: usize,
    /// Optimizer for the velocity field.
    pub adam: AdamConfig,
    /// Optimizer for the scheduler.
    pub scheduler_adam: AdamConfig,
    pub loss: LossConfig,
    /// Anneal the field's learning rate to zero along a half cosine over the
    /// run. The scheduler keeps its rate.
    pub cosine_decay: bool,
}

impl TrainSettings {
    /// Learning-rate multiplier for `epoch` (1-based).
    pub fn lr_scale(&self, epoch: usize) -> f64 {
        if !self.cosine_decay || self.epochs == 0 {
            return 1.0;
        }
        let progress = (epoch.saturating_sub(1)) as f64 / self.epochs as f64;
        0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

/// Sample-weighted means of one epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_fm: f64,
    pub l_rec: f64,
    pub l_div: f64,
    pub total: f64,
    /// Mean of the weight over samples and dimensions.
    pub mean_w: f64,
    /// Largest weight component seen in the epoch.
    pub max_w: f64,
}

impl EpochLog {
    pub const CSV_HEADER: &'static str = "epoch,l_fm,l_rec,l_div,total,mean_w,max_w";

    pub fn csv_row(&self) -> String {
        format!(
            "{},{:.10e},{:.10e},{:.10e},{:.10e},{:.6},{:.6}",
            self.epoch, self.l_fm, self.l_rec, self.l_div, self.total, self.mean_w, self.max_w
        )
    }
}

pub fn log_to_csv(log: &[EpochLog]) -> String {
    let mut s = String::from(EpochLog::CSV_HEADER);
    s.push('\n');
    for row in log {
        let _ = writeln!(s, "{}", row.csv_row());
    }
    s
}

/// Parses the CSV written by [`log_to_csv`].
pub fn log_from_csv(text: &str) -> Result<Vec<EpochLog>> {
    let bad = |detail: String| Error::Malformed {
        what: "training log",
        detail,
    };
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some(EpochLog::CSV_HEADER) {
        return Err(bad("unexpected header".into()));
    }
    lines
        .filter(|l| !l.trim().is_empty())
        .map(|l| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != 7 {
                return Err(bad(format!("row `{l}` has {} fields", f.len())));
            }
            let num = |s: &str| s.parse::<f64>().map_err(|_| bad(format!("bad number `{s}`")));
            Ok(EpochLog {
                epoch: f[0].parse().map_err(|_| bad(format!("bad epoch `{}`", f[0])))?,
                l_fm: num(f[1])?,
                l_rec: num(f[2])?,
                l_div: num(f[3])?,
                total: num(f[4])?,
                mean_w: num(f[5])?,
                max_w: num(f[6])?,
            })
        })
        .collect()
}

fn gather(t: &Tensor, idx: &[usize]) -> Tensor {
    let (_, c) = t.matrix_dims();
    let mut data = Vec::with_capacity(idx.len() * c);
    for &i in idx {
        data.extend_from_slice(&t.data()[i * c..(i + 1) * c]);
    }
    Tensor::new(vec![idx.len(), c], data).expect("rows of a valid tensor")
}

/// Trains `nets` in place. `on_epoch` runs after every epoch (1-based) and
/// may stop training by returning an error.
pub fn train<R, F>(
    nets: &mut PolicyNets,
    pairs: &ChunkPairs,
    table: Option<&DispersionTable>,
    settings: &TrainSettings,
    rng: &mut R,
    mut on_epoch: F,
) -> Result<Vec<EpochLog>>
where
    R: Rng + ?Sized,
    F: FnMut(&PolicyNets, &EpochLog) -> Result<()>,
{
    let n = pairs.len();
    if n == 0 || settings.batch_size == 0 {
        return Err(Error::Config("training needs samples and a positive batch size".into()));
    }
    let dims = nets.dims();
    let width = dims.chunk_len();
    if pairs.histories.matrix_dims() != (n, width) || pairs.observations.matrix_dims() != (n, dims.obs_dim) {
        return Err(Error::Shape {
            op: "training pairs",
            lhs: pairs.histories.shape().to_vec(),
            rhs: vec![n, width],
        });
    }
    let neighbors = match (nets.mode, table) {
        (Mode::Mars, Some(t)) => t.neighbors_per_sample(),
        (Mode::Mars, None) => return Err(Error::Config("training in mars mode needs a dispersion table".into())),
        _ => 0,
    };
    let dispersion = table.map(|t| (t, &pairs.histories));
    let train_scheduler = nets.mode.uses_scheduler();

    let mut field_opt = Adam::new(&nets.velocity_field, settings.adam);
    let mut sched_opt = Adam::new(&nets.scheduler, settings.scheduler_adam);
    let mut order: Vec<usize> = (0..n).collect();
    let mut log = Vec::with_capacity(settings.epochs);

    for epoch in 1..=settings.epochs {
        order.shuffle(rng);
        let scale = settings.lr_scale(epoch);
        field_opt.config.lr = settings.adam.lr * scale;
        let mut sums = [0.0; 4];
        let mut w_sum = 0.0;
        let mut w_count = 0usize;
        let mut w_max = f64::NEG_INFINITY;
        for (bi, idx) in order.chunks(settings.batch_size).enumerate() {
            let batch = Batch {
                indices: idx.to_vec(),
                history: gather(&pairs.histories, idx),
                target: gather(&pairs.targets, idx),
                obs: gather(&pairs.observations, idx),
            };
            let draws = Draws::sample(rng, idx.len(), width, neighbors);
            let mut g = Graph::new();
            let bound = nets.bind(&mut g);
            let parts = loss_total(&mut g, &bound, &batch, &draws, dispersion, &settings.loss)?;
            let values = parts.values(&g);
            if !values.total.is_finite() {
                return Err(Error::NonFiniteLoss { epoch, batch: bi });
            }
            g.backward(parts.total)?;
            field_opt.step(&mut nets.velocity_field, &bound.field.gradients(&g))?;
            if train_scheduler {
                sched_opt.step(&mut nets.scheduler, &bound.scheduler.gradients(&g))?;
            }

            let b = idx.len() as f64;
            sums[0] += values.l_fm * b;
            sums[1] += values.l_rec * b;
            sums[2] += values.l_div * b;
            sums[3] += values.total * b;
            if let Some(w) = parts.weights {
                for &v in g.value(w).data() {
                    w_sum += v;
                    w_count += 1;
                    w_max = w_max.max(v);
                }
            }
        }
        let nf = n as f64;
        let row = EpochLog {
            epoch,
            l_fm: sums[0] / nf,
            l_rec: sums[1] / nf,
            l_div: sums[2] / nf,
            total: sums[3] / nf,
            mean_w: if w_count > 0 { w_sum / w_count as f64 } else { f64::NAN },
            max_w: if w_count > 0 { w_max } else { f64::NAN },
        };
        log::info!(
            "epoch {epoch}: total {:.5} (fm {:.5}, rec {:.5}, div {:.5}) mean w {:.3}",
            row.total,
            row.l_fm,
            row.l_rec,
            row.l_div,
            row.mean_w
        );
        on_epoch(nets, &row)?;
        log.push(row);
    }
    Ok(log)
}
