//! Training objective: flow matching, gated single-step reconstruction and
//! the dispersion hinge.
//!
//! All batch quantities are matrices with one row per sample: chunks are
//! flattened to `[B, H*D]`, weights are `[B, D]` and are tiled across the `H`
//! chunk steps when they meet a chunk.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Graph, Tensor, Var};
use crate::dispersion::DispersionTable;
use crate::error::{Error, Result};
use crate::policy::{BoundPolicy, Mode};

/// One minibatch of normalized training pairs.
#[derive(Clone, Debug)]
pub struct Batch {
    /// Dataset sample ids, used for neighbour lookups.
    pub indices: Vec<usize>,
    /// `[B, H*D]`
    pub history: Tensor,
    /// `[B, H*D]`, the chunk that follows the history (`a1`).
    pub target: Tensor,
    /// `[B, S]`
    pub obs: Tensor,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Random draws consumed by one loss evaluation. Reusing the same draws gives
/// common random numbers across evaluations.
#[derive(Clone, Debug)]
pub struct Draws {
    /// `[B, 1]`, uniform on `[0, 1)`.
    pub tau: Tensor,
    /// `[B, H*D]`, source noise per sample.
    pub noise: Tensor,
    /// `[B*k, H*D]`, one independent draw per (sample, neighbour) pair.
    pub neighbor_noise: Tensor,
}

impl Draws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, batch: usize, chunk_len: usize, neighbors: usize) -> Self {
        let tau = (0..batch).map(|_| rng.random::<f64>()).collect();
        let mut normal = |n: usize| -> Vec<f64> { (0..n).map(|_| rng.sample(StandardNormal)).collect() };
        let noise = normal(batch * chunk_len);
        let neighbor_noise = if neighbors > 0 {
            normal(batch * neighbors * chunk_len)
        } else {
            Vec::new()
        };
        Self {
            tau: Tensor::from_parts(vec![batch, 1], tau),
            noise: Tensor::from_parts(vec![batch, chunk_len], noise),
            neighbor_noise: if neighbors > 0 {
                Tensor::from_parts(vec![batch * neighbors, chunk_len], neighbor_noise)
            } else {
                Tensor::zeros(&[1, chunk_len])
            },
        }
    }
}

/// Loss weights and gradient routing switches.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossConfig {
    pub lambda_rec: f64,
    pub lambda_div: f64,
    /// Let flow-matching and reconstruction gradients reach the scheduler
    /// through the source. Disabling detaches `w` inside the source.
    pub source_grad_to_weights: bool,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 1.0,
            lambda_div: 1.0,
            source_grad_to_weights: true,
        }
    }
}

/// The three terms and their weighted sum, all scalar graph nodes.
#[derive(Clone, Copy, Debug)]
pub struct LossBreakdown {
    pub l_fm: Var,
    pub l_rec: Var,
    pub l_div: Var,
    pub total: Var,
    /// `[B, D]` weights used for the source, when the mode has any.
    pub weights: Option<Var>,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct LossValues {
    pub l_fm: f64,
    pub l_rec: f64,
    pub l_div: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn values(&self, g: &Graph) -> LossValues {
        LossValues {
            l_fm: g.value(self.l_fm).item(),
            l_rec: g.value(self.l_rec).item(),
            l_div: g.value(self.l_div).item(),
            total: g.value(self.total).item(),
        }
    }
}

/// `a0 = history + tile(w) * (noise - history)`, i.e. the per-dimension
/// convex blend with `w` broadcast over the chunk steps.
pub fn blended_source(g: &mut Graph, history: &Tensor, noise: &Tensor, w: Var, horizon: usize) -> Result<Var> {
    let wt = g.tile_cols(w, horizon)?;
    let delta = zip(noise, history, |e, h| e - h)?;
    let delta = g.constant(delta);
    let h = g.constant(history.clone());
    let mixed = g.mul(wt, delta)?;
    g.add(h, mixed)
}

fn zip(a: &Tensor, b: &Tensor, f: impl Fn(f64, f64) -> f64) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(Error::Shape {
            op: "zip",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    Ok(Tensor::from_parts(
        a.shape().to_vec(),
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect(),
    ))
}

/// Mean over batch and elements of `(v(a_tau, tau) - (a1 - a0))^2` with
/// `a_tau = a0 + tau * (a1 - a0)`.
pub fn loss_fm(g: &mut Graph, policy: &BoundPolicy, a0: Var, a1: Var, obs: Var, tau: &Tensor) -> Result<Var> {
    let width = g.shape(a0)[1];
    let tau_v = g.constant(tau.clone());
    let tau_t = g.tile_cols(tau_v, width)?;
    let target = g.sub(a1, a0)?;
    let step = g.mul(tau_t, target)?;
    let a_tau = g.add(a0, step)?;
    let v = policy.velocity(g, a_tau, tau_v, obs)?;
    let err = g.sub(v, target)?;
    let sq = g.square(err);
    Ok(g.mean(sq))
}

/// Single Euler step reconstruction `a1_hat = a0 + v(a0, 0)` scored by L1.
/// With `gate = Some(w)` each dimension is weighted by `1 - w`, where `w` is
/// detached so the gate itself never carries gradient.
pub fn loss_rec_gated(
    g: &mut Graph,
    policy: &BoundPolicy,
    a0: Var,
    a1: Var,
    obs: Var,
    gate: Option<Var>,
) -> Result<Var> {
    let rows = g.shape(a0)[0];
    let zero_tau = g.constant(Tensor::zeros(&[rows, 1]));
    let v = policy.velocity(g, a0, zero_tau, obs)?;
    let a1_hat = g.add(a0, v)?;
    let err = g.sub(a1_hat, a1)?;
    let err = g.abs(err);
    let weighted = match gate {
        Some(w) => {
            let w = g.detach(w);
            let open = g.rsub_scalar(1.0, w);
            let horizon = g.shape(a0)[1] / g.shape(w)[1];
            let open = g.tile_cols(open, horizon)?;
            g.mul(open, err)?
        }
        None => err,
    };
    Ok(g.mean(weighted))
}

/// Dispersion hinge `mean_i mean_d relu(s_next[i][d] - s_curr[i][d])`.
///
/// `s_curr[i]` is the mean absolute difference between sample `i`'s source
/// and the sources of its neighbours, every source built with sample `i`'s
/// own weight `w[i]`. Sample `i` reuses its row of `own_noise`; neighbour `k`
/// of sample `i` uses row `i*k + k` of `neighbor_noise`.
pub fn loss_div(
    g: &mut Graph,
    w: Var,
    indices: &[usize],
    table: &DispersionTable,
    histories: &Tensor,
    own_noise: &Tensor,
    neighbor_noise: &Tensor,
) -> Result<Var> {
    let (rows, action_dim) = match g.shape(w) {
        [r, d] => (*r, *d),
        s => {
            return Err(Error::Shape {
                op: "loss_div weights",
                lhs: s.to_vec(),
                rhs: vec![],
            })
        }
    };
    let (n, width) = histories.matrix_dims();
    if rows != indices.len() || action_dim != table.action_dim() || width % action_dim != 0 {
        return Err(Error::Shape {
            op: "loss_div",
            lhs: vec![rows, action_dim],
            rhs: vec![indices.len(), table.action_dim()],
        });
    }
    let horizon = width / action_dim;
    let k = table.neighbors_per_sample();
    if k == 0 {
        return Err(Error::Config("dispersion table has no neighbours".into()));
    }
    if neighbor_noise.matrix_dims() != (rows * k, width) || own_noise.matrix_dims() != (rows, width) {
        return Err(Error::Shape {
            op: "loss_div noise",
            lhs: neighbor_noise.shape().to_vec(),
            rhs: vec![rows * k, width],
        });
    }

    // Constant pieces of a_curr(i) - a_curr(j) = dh + w * (de - dh).
    let hist = histories.data();
    let mut dh = Vec::with_capacity(rows * k * width);
    let mut de_minus_dh = Vec::with_capacity(rows * k * width);
    let mut s_next = Vec::with_capacity(rows * action_dim);
    for (b, &i) in indices.iter().enumerate() {
        if i >= n {
            return Err(Error::OutOfRange { index: i, len: n });
        }
        let hi = &hist[i * width..(i + 1) * width];
        let ei = &own_noise.data()[b * width..(b + 1) * width];
        for (slot, j) in table.neighbors(i).enumerate() {
            let hj = &hist[j * width..(j + 1) * width];
            let ej = &neighbor_noise.data()[(b * k + slot) * width..(b * k + slot + 1) * width];
            for c in 0..width {
                let d_h = hi[c] - hj[c];
                dh.push(d_h);
                de_minus_dh.push((ei[c] - ej[c]) - d_h);
            }
        }
        s_next.extend_from_slice(table.s_next(i));
    }
    let dh = g.constant(Tensor::from_parts(vec![rows * k, width], dh));
    let spread = g.constant(Tensor::from_parts(vec![rows * k, width], de_minus_dh));
    let s_next = g.constant(Tensor::from_parts(vec![rows, action_dim], s_next));

    let wt = g.tile_cols(w, horizon)?;
    let wt = g.repeat_rows(wt, k)?;
    let mixed = g.mul(wt, spread)?;
    let diff = g.add(dh, mixed)?;
    let diff = g.abs(diff);
    let per_sample = g.group_rows_mean(diff, k)?;
    let s_curr = g.fold_cols_mean(per_sample, action_dim)?;
    let gap = g.sub(s_next, s_curr)?;
    let hinge = g.relu_hinge(gap);
    Ok(g.mean(hinge))
}

/// Which terms a mode trains with and whether reconstruction is gated.
fn active_terms(mode: Mode) -> (bool, bool, bool) {
    // (reconstruction, gated, diversity)
    match mode {
        Mode::FlowMatching => (false, false, false),
        Mode::A2A | Mode::FixedSigma(_) => (true, false, false),
        Mode::FixedWeight(_) => (true, true, false),
        Mode::Mars => (true, true, true),
    }
}

/// Full objective `l_fm + lambda_rec * l_rec + lambda_div * l_div` for the
/// policy's mode. Inactive terms are constant zeros.
pub fn loss_total(
    g: &mut Graph,
    policy: &BoundPolicy,
    batch: &Batch,
    draws: &Draws,
    dispersion: Option<(&DispersionTable, &Tensor)>,
    config: &LossConfig,
) -> Result<LossBreakdown> {
    let horizon = policy.dims.horizon;
    let obs = g.constant(batch.obs.clone());
    let a1 = g.constant(batch.target.clone());
    let weights = policy.weights(g, obs)?;

    let a0 = match (policy.mode, weights) {
        (Mode::FlowMatching, _) => g.constant(draws.noise.clone()),
        (Mode::A2A, _) => g.constant(batch.history.clone()),
        (Mode::FixedSigma(sigma), _) => {
            let src = zip(&batch.history, &draws.noise, |h, e| h + sigma * e)?;
            g.constant(src)
        }
        (_, Some(w)) => {
            let w_src = if config.source_grad_to_weights { w } else { g.detach(w) };
            blended_source(g, &batch.history, &draws.noise, w_src, horizon)?
        }
        (_, None) => unreachable!("only FixedSigma has no weights"),
    };

    let l_fm = loss_fm(g, policy, a0, a1, obs, &draws.tau)?;
    let (use_rec, gated, use_div) = active_terms(policy.mode);

    let l_rec = if use_rec {
        loss_rec_gated(g, policy, a0, a1, obs, if gated { weights } else { None })?
    } else {
        g.constant(Tensor::scalar(0.0))
    };

    let l_div = match (use_div, weights) {
        (true, Some(w)) => {
            let (table, histories) =
                dispersion.ok_or_else(|| Error::Config("diversity loss needs a dispersion table".into()))?;
            loss_div(
                g,
                w,
                &batch.indices,
                table,
                histories,
                &draws.noise,
                &draws.neighbor_noise,
            )?
        }
        _ => g.constant(Tensor::scalar(0.0)),
    };

    let rec_term = g.scale(l_rec, config.lambda_rec);
    let div_term = g.scale(l_div, config.lambda_div);
    let partial = g.add(l_fm, rec_term)?;
    let total = g.add(partial, div_term)?;
    Ok(LossBreakdown {
        l_fm,
        l_rec,
        l_div,
        total,
        weights,
    })
}
