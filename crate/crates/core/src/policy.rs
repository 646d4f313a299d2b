//! The generative action policy.
//!
//! A chunk of `H` future actions (each `D`-dimensional) is produced by
//! integrating a learned velocity field from a source sample `a0`. The source
//! blends the recent action history with Gaussian noise per action dimension,
//! `a0 = (1 - w) * history + w * noise`, where `w` comes from a small
//! scheduling network. The number of Euler steps scales with `max(w)`.
//!
//! Plain flow matching (`w = 1`) and action-to-action regression (`w = 0`)
//! fall out as fixed-weight modes.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{encode_tensors, read_tensors, Activation, BoundMlp, Graph, Layer, MlpParams, Tensor, Var};
use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

/// Which flow source the policy uses.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Mode {
    /// Learned per-dimension weights.
    Mars,
    /// Pure Gaussian source (`w = 1`).
    FlowMatching,
    /// Pure history source (`w = 0`).
    A2A,
    /// `a0 = history + sigma * noise`, bypassing the weight machinery.
    FixedSigma(f64),
    /// Constant weight in `[0, 1]` for every dimension.
    FixedWeight(f64),
}

impl Mode {
    fn code(self) -> (u8, f64) {
        match self {
            Mode::Mars => (0, 0.0),
            Mode::FlowMatching => (1, 0.0),
            Mode::A2A => (2, 0.0),
            Mode::FixedSigma(s) => (3, s),
            Mode::FixedWeight(w) => (4, w),
        }
    }

    fn from_code(code: u8, param: f64) -> Result<Self> {
        let mode = match code {
            0 => Mode::Mars,
            1 => Mode::FlowMatching,
            2 => Mode::A2A,
            3 => Mode::FixedSigma(param),
            4 => Mode::FixedWeight(param),
            c => {
                return Err(Error::Malformed {
                    what: "policy checkpoint",
                    detail: format!("unknown mode code {c}"),
                })
            }
        };
        mode.validate()?;
        Ok(mode)
    }

    pub fn validate(self) -> Result<()> {
        match self {
            Mode::FixedSigma(s) if !(s.is_finite() && s >= 0.0) => {
                Err(Error::Config(format!("sigma must be finite and >= 0, got {s}")))
            }
            Mode::FixedWeight(w) if !(0.0..=1.0).contains(&w) => {
                Err(Error::Config(format!("fixed weight must lie in [0, 1], got {w}")))
            }
            _ => Ok(()),
        }
    }

    /// Whether the scheduling network is trained and consulted.
    pub fn uses_scheduler(self) -> bool {
        matches!(self, Mode::Mars)
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Mode::Mars => write!(f, "mars"),
            Mode::FlowMatching => write!(f, "fm"),
            Mode::A2A => write!(f, "a2a"),
            Mode::FixedSigma(s) => write!(f, "sigma:{s}"),
            Mode::FixedWeight(w) => write!(f, "weight:{w}"),
        }
    }
}

impl FromStr for Mode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lower = s.trim().to_ascii_lowercase();
        let parse_param = |p: &str| {
            p.parse::<f64>()
                .map_err(|_| Error::Config(format!("bad mode parameter in {s:?}")))
        };
        let mode = match lower.as_str() {
            "mars" => Mode::Mars,
            "fm" | "flow" | "flowmatching" | "flow-matching" => Mode::FlowMatching,
            "a2a" => Mode::A2A,
            other => {
                if let Some(p) = other.strip_prefix("sigma:") {
                    Mode::FixedSigma(parse_param(p)?)
                } else if let Some(p) = other.strip_prefix("weight:") {
                    Mode::FixedWeight(parse_param(p)?)
                } else {
                    return Err(Error::Config(format!(
                        "unknown mode {s:?} (expected mars, fm, a2a, sigma:<s>, weight:<w>)"
                    )));
                }
            }
        };
        mode.validate()?;
        Ok(mode)
    }
}

/// `[H, D]` chunk of actions in normalized units.
#[derive(Clone, Debug, PartialEq)]
pub struct ActionChunk {
    values: Tensor,
}

impl ActionChunk {
    pub fn new(horizon: usize, action_dim: usize, values: Vec<f64>) -> Result<Self> {
        Ok(Self {
            values: Tensor::matrix(horizon, action_dim, values)?,
        })
    }

    pub fn zeros(horizon: usize, action_dim: usize) -> Self {
        Self {
            values: Tensor::zeros(&[horizon, action_dim]),
        }
    }

    pub fn from_tensor(values: Tensor) -> Result<Self> {
        match values.shape() {
            [_, _] => Ok(Self { values }),
            s => Err(Error::InvalidTensor(format!("action chunk needs rank 2, got {s:?}"))),
        }
    }

    /// i.i.d. standard normal entries.
    pub fn gaussian<R: Rng + ?Sized>(horizon: usize, action_dim: usize, rng: &mut R) -> Self {
        let data = (0..horizon * action_dim)
            .map(|_| rng.sample::<f64, _>(StandardNormal))
            .collect();
        Self {
            values: Tensor::from_parts(vec![horizon, action_dim], data),
        }
    }

    pub fn horizon(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn action_dim(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }

    pub fn as_slice(&self) -> &[f64] {
        self.values.data()
    }

    pub fn get(&self, h: usize, d: usize) -> f64 {
        self.values.data()[h * self.action_dim() + d]
    }

    pub fn row(&self, h: usize) -> &[f64] {
        let d = self.action_dim();
        &self.values.data()[h * d..(h + 1) * d]
    }

    /// Soft range check: entries beyond this magnitude are suspicious in
    /// normalized units.
    pub fn out_of_range(&self, limit: f64) -> bool {
        self.values.max_abs() > limit
    }

    fn same_shape(&self, other: &ActionChunk, op: &'static str) -> Result<()> {
        if self.values.shape() != other.values.shape() {
            return Err(Error::Shape {
                op,
                lhs: self.values.shape().to_vec(),
                rhs: other.values.shape().to_vec(),
            });
        }
        Ok(())
    }
}

/// Low-dimensional state observation, normalized.
#[derive(Clone, Debug, PartialEq)]
pub struct Observation {
    state: Tensor,
}

impl Observation {
    pub fn new(state: Vec<f64>) -> Result<Self> {
        Ok(Self {
            state: Tensor::vector(state)?,
        })
    }

    pub fn dim(&self) -> usize {
        self.state.numel()
    }

    pub fn as_slice(&self) -> &[f64] {
        self.state.data()
    }
}

/// Per-action-dimension blend weight. The learned scheduler keeps entries in
/// `(0, 1)`; the fixed baselines use the closed limits.
#[derive(Clone, Debug, PartialEq)]
pub struct ModalityWeight {
    w: Vec<f64>,
}

impl ModalityWeight {
    pub fn new(w: Vec<f64>) -> Result<Self> {
        if w.is_empty() || w.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::InvalidTensor(format!("modality weight outside [0, 1]: {w:?}")));
        }
        Ok(Self { w })
    }

    pub fn constant(dim: usize, value: f64) -> Self {
        Self { w: vec![value; dim] }
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.w
    }

    pub fn max(&self) -> f64 {
        self.w.iter().copied().fold(0.0, f64::max)
    }
}

/// Flow time in `[0, 1]`.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd)]
pub struct FlowTime(f64);

impl FlowTime {
    pub fn new(tau: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&tau) {
            return Err(Error::Config(format!("flow time {tau} outside [0, 1]")));
        }
        Ok(Self(tau))
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Sizes of the action chunk and observation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PolicyDims {
    pub horizon: usize,
    pub action_dim: usize,
    pub obs_dim: usize,
}

impl PolicyDims {
    pub fn chunk_len(&self) -> usize {
        self.horizon * self.action_dim
    }

    /// Flattened chunk, flow time, observation.
    pub fn field_input(&self) -> usize {
        self.chunk_len() + 1 + self.obs_dim
    }
}

/// Hidden layer widths of both networks.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Architecture {
    pub field_hidden: Vec<usize>,
    pub scheduler_hidden: Vec<usize>,
}

impl Default for Architecture {
    fn default() -> Self {
        Self {
            field_hidden: vec![256; 3],
            scheduler_hidden: vec![64; 2],
        }
    }
}

/// Velocity field and scheduling network plus the source mode.
#[derive(Clone, Debug, PartialEq)]
pub struct PolicyNets {
    pub velocity_field: MlpParams,
    pub scheduler: MlpParams,
    pub mode: Mode,
    dims: PolicyDims,
}

impl PolicyNets {
    pub fn new<R: Rng + ?Sized>(mode: Mode, dims: PolicyDims, arch: &Architecture, rng: &mut R) -> Result<Self> {
        mode.validate()?;
        let mut field_dims = vec![dims.field_input()];
        field_dims.extend(&arch.field_hidden);
        field_dims.push(dims.chunk_len());
        let velocity_field = MlpParams::new(&field_dims, Activation::Tanh, Activation::Identity, rng)?;

        let mut sched_dims = vec![dims.obs_dim];
        sched_dims.extend(&arch.scheduler_hidden);
        sched_dims.push(dims.action_dim);
        let scheduler = MlpParams::new(&sched_dims, Activation::Tanh, Activation::Sigmoid, rng)?;
        Self::from_parts(velocity_field, scheduler, mode, dims)
    }

    pub fn from_parts(velocity_field: MlpParams, scheduler: MlpParams, mode: Mode, dims: PolicyDims) -> Result<Self> {
        let check = |ok: bool, what: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::Config(format!(
                    "policy networks do not match dims {dims:?}: {what}"
                )))
            }
        };
        check(velocity_field.input_dim() == dims.field_input(), "velocity input")?;
        check(velocity_field.output_dim() == dims.chunk_len(), "velocity output")?;
        check(scheduler.input_dim() == dims.obs_dim, "scheduler input")?;
        check(scheduler.output_dim() == dims.action_dim, "scheduler output")?;
        check(
            scheduler.layers().last().map(|l| l.activation) == Some(Activation::Sigmoid),
            "scheduler head must be sigmoid",
        )?;
        Ok(Self {
            velocity_field,
            scheduler,
            mode,
            dims,
        })
    }

    pub fn dims(&self) -> PolicyDims {
        self.dims
    }

    /// Per-dimension weight for `obs`. Fixed modes bypass the network.
    pub fn schedule_weights(&self, obs: &Observation) -> Result<ModalityWeight> {
        let d = self.dims.action_dim;
        match self.mode {
            Mode::FlowMatching => Ok(ModalityWeight::constant(d, 1.0)),
            Mode::A2A | Mode::FixedSigma(_) => Ok(ModalityWeight::constant(d, 0.0)),
            Mode::FixedWeight(w) => Ok(ModalityWeight::constant(d, w)),
            Mode::Mars => {
                self.check_obs(obs)?;
                let x = Tensor::from_parts(vec![1, obs.dim()], obs.as_slice().to_vec());
                let w = self.scheduler.forward(&x)?;
                Ok(ModalityWeight { w: w.into_data() })
            }
        }
    }

    fn check_obs(&self, obs: &Observation) -> Result<()> {
        if obs.dim() != self.dims.obs_dim {
            return Err(Error::Shape {
                op: "observation",
                lhs: vec![obs.dim()],
                rhs: vec![self.dims.obs_dim],
            });
        }
        Ok(())
    }

    /// `v(a_tau, tau | obs)`.
    pub fn velocity(&self, a_tau: &ActionChunk, tau: FlowTime, obs: &Observation) -> Result<ActionChunk> {
        self.check_obs(obs)?;
        if a_tau.horizon() != self.dims.horizon || a_tau.action_dim() != self.dims.action_dim {
            return Err(Error::Shape {
                op: "velocity",
                lhs: a_tau.tensor().shape().to_vec(),
                rhs: vec![self.dims.horizon, self.dims.action_dim],
            });
        }
        let mut input = Vec::with_capacity(self.dims.field_input());
        input.extend_from_slice(a_tau.as_slice());
        input.push(tau.value());
        input.extend_from_slice(obs.as_slice());
        let x = Tensor::from_parts(vec![1, input.len()], input);
        let v = self.velocity_field.forward(&x)?;
        Ok(ActionChunk {
            values: Tensor::from_parts(vec![self.dims.horizon, self.dims.action_dim], v.into_data()),
        })
    }

    /// Registers both networks in `g`. The scheduler is trainable only in
    /// [`Mode::Mars`].
    pub fn bind(&self, g: &mut Graph) -> BoundPolicy {
        let field = self.velocity_field.bind(g);
        let scheduler = if self.mode.uses_scheduler() {
            self.scheduler.bind(g)
        } else {
            self.scheduler.bind_frozen(g)
        };
        BoundPolicy {
            field,
            scheduler,
            mode: self.mode,
            dims: self.dims,
        }
    }

    /// Registers both networks as constants.
    pub fn bind_frozen(&self, g: &mut Graph) -> BoundPolicy {
        BoundPolicy {
            field: self.velocity_field.bind_frozen(g),
            scheduler: self.scheduler.bind_frozen(g),
            mode: self.mode,
            dims: self.dims,
        }
    }

    /// Serializes header plus tensor archive. `extras` are stored alongside the
    /// network tensors (e.g. normalization statistics).
    pub fn to_checkpoint(&self, k_max: usize, extras: &[(String, Tensor)]) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        let (code, param) = self.mode.code();
        w.u8(code);
        w.f64(param);
        for v in [self.dims.horizon, self.dims.action_dim, self.dims.obs_dim, k_max] {
            w.u32(v as u32);
        }
        let mut named: Vec<(String, &Tensor)> = self.velocity_field.named_tensors("velocity");
        named.extend(self.scheduler.named_tensors("scheduler"));
        named.extend(extras.iter().map(|(n, t)| (n.clone(), t)));
        w.bytes(&encode_tensors(named.iter().map(|(n, t)| (n.as_str(), *t))));
        w.into_inner()
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<PolicyCheckpoint> {
        let mut r = Reader::new(bytes, "policy checkpoint");
        r.expect_magic(CHECKPOINT_MAGIC)?;
        r.expect_version(CHECKPOINT_VERSION)?;
        let code = r.u8()?;
        let param = r.f64()?;
        let mode = Mode::from_code(code, param)?;
        let horizon = r.u32()? as usize;
        let action_dim = r.u32()? as usize;
        let obs_dim = r.u32()? as usize;
        let k_max = r.u32()? as usize;
        let entries = read_tensors(&mut r)?;
        r.finish()?;

        let dims = PolicyDims {
            horizon,
            action_dim,
            obs_dim,
        };
        let mut field_layers = Vec::new();
        let mut sched_layers = Vec::new();
        let mut extras = Vec::new();
        let mut pending: Option<(String, Tensor)> = None;
        for (name, t) in entries {
            let (prefix, rest) = name.split_once('.').unwrap_or((name.as_str(), ""));
            let target = match prefix {
                "velocity" => &mut field_layers,
                "scheduler" => &mut sched_layers,
                _ => {
                    extras.push((name, t));
                    continue;
                }
            };
            if rest.ends_with(".weight") {
                pending = Some((name, t));
            } else if rest.ends_with(".bias") {
                let (wname, weight) = pending.take().ok_or_else(|| Error::Malformed {
                    what: "policy checkpoint",
                    detail: format!("bias {name} without weight"),
                })?;
                if wname.trim_end_matches(".weight") != name.trim_end_matches(".bias") {
                    return Err(Error::Malformed {
                        what: "policy checkpoint",
                        detail: format!("{wname} followed by {name}"),
                    });
                }
                target.push(Layer {
                    weight,
                    bias: t,
                    activation: Activation::Tanh,
                });
            } else {
                return Err(Error::Malformed {
                    what: "policy checkpoint",
                    detail: format!("unexpected tensor {name}"),
                });
            }
        }
        if let Some(l) = field_layers.last_mut() {
            l.activation = Activation::Identity;
        }
        if let Some(l) = sched_layers.last_mut() {
            l.activation = Activation::Sigmoid;
        }
        let nets = PolicyNets::from_parts(
            MlpParams::from_layers(field_layers)?,
            MlpParams::from_layers(sched_layers)?,
            mode,
            dims,
        )?;
        Ok(PolicyCheckpoint { nets, k_max, extras })
    }
}

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MARSPOLC";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Clone, Debug)]
pub struct PolicyCheckpoint {
    pub nets: PolicyNets,
    pub k_max: usize,
    pub extras: Vec<(String, Tensor)>,
}

/// [`PolicyNets`] registered in a [`Graph`] for batched training.
pub struct BoundPolicy {
    pub field: BoundMlp,
    pub scheduler: BoundMlp,
    pub mode: Mode,
    pub dims: PolicyDims,
}

impl BoundPolicy {
    /// `[B, D]` weights for a `[B, S]` observation batch. Returns `None` for
    /// [`Mode::FixedSigma`], whose source is not a convex blend.
    pub fn weights(&self, g: &mut Graph, obs: Var) -> Result<Option<Var>> {
        let rows = g.shape(obs)[0];
        let d = self.dims.action_dim;
        let w = match self.mode {
            Mode::Mars => self.scheduler.forward(g, obs)?,
            Mode::FlowMatching => g.constant(Tensor::ones(&[rows, d])),
            Mode::A2A => g.constant(Tensor::zeros(&[rows, d])),
            Mode::FixedWeight(w) => g.constant(Tensor::full(&[rows, d], w)),
            Mode::FixedSigma(_) => return Ok(None),
        };
        Ok(Some(w))
    }

    /// Batched velocity: `a_tau [B, H*D]`, `tau [B, 1]`, `obs [B, S]` -> `[B, H*D]`.
    pub fn velocity(&self, g: &mut Graph, a_tau: Var, tau: Var, obs: Var) -> Result<Var> {
        let x = g.concat_cols(&[a_tau, tau, obs])?;
        self.field.forward(g, x)
    }
}

/// `a0[h, d] = (1 - w[d]) * history[h, d] + w[d] * noise[h, d]`.
pub fn build_source(history: &ActionChunk, w: &ModalityWeight, noise: &ActionChunk) -> Result<ActionChunk> {
    history.same_shape(noise, "build_source")?;
    let d = history.action_dim();
    if w.as_slice().len() != d {
        return Err(Error::Shape {
            op: "build_source",
            lhs: history.tensor().shape().to_vec(),
            rhs: vec![w.as_slice().len()],
        });
    }
    let wv = w.as_slice();
    let data = history
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .enumerate()
        .map(|(i, (&h, &e))| {
            let wd = wv[i % d];
            (1.0 - wd) * h + wd * e
        })
        .collect();
    Ok(ActionChunk {
        values: Tensor::from_parts(history.tensor().shape().to_vec(), data),
    })
}

/// `a0 = history + sigma * noise`.
pub fn build_source_sigma(history: &ActionChunk, sigma: f64, noise: &ActionChunk) -> Result<ActionChunk> {
    history.same_shape(noise, "build_source_sigma")?;
    let data = history
        .as_slice()
        .iter()
        .zip(noise.as_slice())
        .map(|(&h, &e)| h + sigma * e)
        .collect();
    Ok(ActionChunk {
        values: Tensor::from_parts(history.tensor().shape().to_vec(), data),
    })
}

/// `(1 - tau) * a0 + tau * a1`.
pub fn interpolate(a0: &ActionChunk, a1: &ActionChunk, tau: FlowTime) -> Result<ActionChunk> {
    a0.same_shape(a1, "interpolate")?;
    let t = tau.value();
    let data = a0
        .as_slice()
        .iter()
        .zip(a1.as_slice())
        .map(|(&x, &y)| (1.0 - t) * x + t * y)
        .collect();
    Ok(ActionChunk {
        values: Tensor::from_parts(a0.tensor().shape().to_vec(), data),
    })
}

/// `clamp(ceil(k_max * max(w)), 1, k_max)`.
pub fn schedule_steps(w: &ModalityWeight, k_max: usize) -> usize {
    let k_max = k_max.max(1);
    let raw = (k_max as f64 * w.max()).ceil();
    (raw as usize).clamp(1, k_max)
}

/// Forward Euler from `tau = 0` to `1` in `steps` uniform steps with an
/// arbitrary field.
pub fn integrate_with<F>(a0: &ActionChunk, steps: usize, mut field: F) -> Result<ActionChunk>
where
    F: FnMut(&ActionChunk, FlowTime) -> Result<ActionChunk>,
{
    if steps == 0 {
        return Err(Error::Config("integration needs at least one step".into()));
    }
    let dt = 1.0 / steps as f64;
    let mut a = a0.clone();
    for k in 0..steps {
        let tau = FlowTime(k as f64 / steps as f64);
        let v = field(&a, tau)?;
        a.same_shape(&v, "integrate")?;
        for (x, dv) in a.values.data_mut().iter_mut().zip(v.as_slice()) {
            *x += dt * dv;
        }
        if !a.values.is_finite() {
            return Err(Error::NonFinite { step: k });
        }
    }
    Ok(a)
}

/// Forward Euler through the learned field.
pub fn integrate(a0: &ActionChunk, obs: &Observation, nets: &PolicyNets, steps: usize) -> Result<ActionChunk> {
    integrate_with(a0, steps, |a, tau| nets.velocity(a, tau, obs))
}

/// Result of one policy query.
#[derive(Clone, Debug, PartialEq)]
pub struct Inference {
    pub chunk: ActionChunk,
    pub steps_used: usize,
    pub weight: ModalityWeight,
}

/// Weights, source, step budget, integration.
pub fn infer_action<R: Rng + ?Sized>(
    obs: &Observation,
    history: &ActionChunk,
    nets: &PolicyNets,
    rng: &mut R,
    k_max: usize,
) -> Result<Inference> {
    let dims = nets.dims();
    let noise = ActionChunk::gaussian(dims.horizon, dims.action_dim, rng);
    let weight = nets.schedule_weights(obs)?;
    let (a0, steps) = match nets.mode {
        Mode::FixedSigma(sigma) => {
            let steps = if sigma > 0.0 { k_max.max(1) } else { 1 };
            (build_source_sigma(history, sigma, &noise)?, steps)
        }
        _ => (build_source(history, &weight, &noise)?, schedule_steps(&weight, k_max)),
    };
    let chunk = integrate(&a0, obs, nets, steps)?;
    if chunk.out_of_range(5.0) {
        log::warn!(
            "generated chunk leaves the normalized range (max |x| = {:.2})",
            chunk.values.max_abs()
        );
    }
    Ok(Inference {
        chunk,
        steps_used: steps,
        weight,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn dims() -> PolicyDims {
        PolicyDims {
            horizon: 3,
            action_dim: 2,
            obs_dim: 2,
        }
    }

    fn small_arch() -> Architecture {
        Architecture {
            field_hidden: vec![8, 8],
            scheduler_hidden: vec![6],
        }
    }

    fn nets(mode: Mode) -> PolicyNets {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        PolicyNets::new(mode, dims(), &small_arch(), &mut rng).unwrap()
    }

    fn chunk(v: &[f64]) -> ActionChunk {
        ActionChunk::new(v.len() / 2, 2, v.to_vec()).unwrap()
    }

    #[test]
    fn mode_weights() {
        let obs = Observation::new(vec![0.3, -1.0]).unwrap();
        assert_eq!(
            nets(Mode::FlowMatching).schedule_weights(&obs).unwrap().as_slice(),
            &[1.0, 1.0]
        );
        assert_eq!(nets(Mode::A2A).schedule_weights(&obs).unwrap().as_slice(), &[0.0, 0.0]);
        assert_eq!(
            nets(Mode::FixedWeight(0.3)).schedule_weights(&obs).unwrap().as_slice(),
            &[0.3, 0.3]
        );
        let mut mars = nets(Mode::Mars);
        mars.scheduler.zero_output_layer();
        assert_eq!(mars.schedule_weights(&obs).unwrap().as_slice(), &[0.5, 0.5]);
        let w = nets(Mode::Mars).schedule_weights(&obs).unwrap();
        assert!(w.as_slice().iter().all(|&x| x > 0.0 && x < 1.0));
    }

    #[test]
    fn source_limits_and_midpoint() {
        let hist = chunk(&[2.0, -1.0, 0.5, 0.0, 3.0, 1.0]);
        let noise = chunk(&[0.0, 0.2, -0.4, 1.5, 0.1, -2.0]);
        let w0 = ModalityWeight::constant(2, 0.0);
        let w1 = ModalityWeight::constant(2, 1.0);
        assert_eq!(build_source(&hist, &w0, &noise).unwrap(), hist);
        assert_eq!(build_source(&hist, &w1, &noise).unwrap(), noise);
        let half = ModalityWeight::new(vec![0.5, 0.0]).unwrap();
        let s = build_source(&hist, &half, &noise).unwrap();
        assert_eq!(s.get(0, 0), 1.0);
        assert_eq!(s.get(0, 1), -1.0);
        let bad = chunk(&[0.0, 0.0]);
        assert!(build_source(&hist, &w0, &bad).is_err());
    }

    #[test]
    fn interpolate_examples() {
        let a0 = chunk(&[0.0, 0.0]);
        let a1 = chunk(&[2.0, 4.0]);
        let mid = interpolate(&a0, &a1, FlowTime::new(0.25).unwrap()).unwrap();
        assert_eq!(mid.as_slice(), &[0.5, 1.0]);
        assert_eq!(interpolate(&a0, &a1, FlowTime::new(0.0).unwrap()).unwrap(), a0);
        assert_eq!(interpolate(&a0, &a1, FlowTime::new(1.0).unwrap()).unwrap(), a1);
        assert!(FlowTime::new(1.5).is_err());
    }

    #[test]
    fn step_schedule() {
        assert_eq!(schedule_steps(&ModalityWeight::new(vec![0.2, 1.0]).unwrap(), 10), 10);
        assert_eq!(schedule_steps(&ModalityWeight::new(vec![0.2, 0.999]).unwrap(), 10), 10);
        assert_eq!(schedule_steps(&ModalityWeight::new(vec![1e-6, 0.0]).unwrap(), 10), 1);
        assert_eq!(schedule_steps(&ModalityWeight::constant(2, 0.0), 10), 1);
        assert_eq!(schedule_steps(&ModalityWeight::new(vec![0.45, 0.1]).unwrap(), 10), 5);
    }

    #[test]
    fn constant_field_integrates_exactly() {
        let mut n = nets(Mode::FlowMatching);
        n.velocity_field.zero_output_layer();
        let c = [0.5, -0.25, 1.0, 0.0, 2.0, -1.5];
        n.velocity_field
            .layers_mut()
            .last_mut()
            .unwrap()
            .bias
            .data_mut()
            .copy_from_slice(&c);
        let a0 = chunk(&[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let obs = Observation::new(vec![0.0, 0.0]).unwrap();
        // power-of-two step counts keep every partial sum exact in binary
        for k in [1, 2, 4, 8] {
            let out = integrate(&a0, &obs, &n, k).unwrap();
            for (i, v) in out.as_slice().iter().enumerate() {
                assert_eq!(*v, a0.as_slice()[i] + c[i], "k={k}");
            }
        }
        for k in [3, 7, 10] {
            let out = integrate(&a0, &obs, &n, k).unwrap();
            for (i, v) in out.as_slice().iter().enumerate() {
                assert!((v - (a0.as_slice()[i] + c[i])).abs() < 1e-12, "k={k}");
            }
        }
    }

    #[test]
    fn single_step_is_one_euler_step() {
        let n = nets(Mode::FlowMatching);
        let a0 = chunk(&[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let obs = Observation::new(vec![0.2, 0.1]).unwrap();
        let v = n.velocity(&a0, FlowTime::new(0.0).unwrap(), &obs).unwrap();
        let out = integrate(&a0, &obs, &n, 1).unwrap();
        for i in 0..6 {
            assert_eq!(out.as_slice()[i], a0.as_slice()[i] + v.as_slice()[i]);
        }
    }

    #[test]
    fn exponential_field_matches_closed_form() {
        let a0 = ActionChunk::new(1, 1, vec![1.0]).unwrap();
        let out = integrate_with(&a0, 100, |a, _| Ok(a.clone())).unwrap();
        let exact = std::f64::consts::E;
        assert!(((out.as_slice()[0] - exact) / exact).abs() < 0.02);
    }

    #[test]
    fn non_finite_state_reports_step() {
        let a0 = ActionChunk::new(1, 1, vec![1.0]).unwrap();
        let err = integrate_with(&a0, 5, |a, tau| {
            let v = if tau.value() >= 0.4 { f64::INFINITY } else { 0.0 };
            Ok(ActionChunk {
                values: Tensor::from_parts(a.tensor().shape().to_vec(), vec![v]),
            })
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { step: 2 }));
    }

    #[test]
    fn velocity_is_pure() {
        let n = nets(Mode::Mars);
        let a = chunk(&[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let obs = Observation::new(vec![0.2, 0.1]).unwrap();
        let t = FlowTime::new(0.3).unwrap();
        assert_eq!(n.velocity(&a, t, &obs).unwrap(), n.velocity(&a, t, &obs).unwrap());
        let mut z = n.clone();
        z.velocity_field.zero_output_layer();
        assert!(z.velocity(&a, t, &obs).unwrap().as_slice().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn inference_step_counts_by_mode() {
        let obs = Observation::new(vec![0.2, 0.1]).unwrap();
        let hist = ActionChunk::zeros(3, 2);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(
            infer_action(&obs, &hist, &nets(Mode::A2A), &mut rng, 10)
                .unwrap()
                .steps_used,
            1
        );
        assert_eq!(
            infer_action(&obs, &hist, &nets(Mode::FlowMatching), &mut rng, 10)
                .unwrap()
                .steps_used,
            10
        );
        assert_eq!(
            infer_action(&obs, &hist, &nets(Mode::FixedSigma(0.0)), &mut rng, 10)
                .unwrap()
                .steps_used,
            1
        );
        assert_eq!(
            infer_action(&obs, &hist, &nets(Mode::FixedSigma(2.0)), &mut rng, 10)
                .unwrap()
                .steps_used,
            10
        );
        let mars = nets(Mode::Mars);
        for i in 0..20 {
            let o = Observation::new(vec![i as f64 * 0.3 - 3.0, 1.0]).unwrap();
            let inf = infer_action(&o, &hist, &mars, &mut rng, 10).unwrap();
            assert!((1..=10).contains(&inf.steps_used));
            assert_eq!(inf.steps_used, schedule_steps(&inf.weight, 10));
        }
    }

    #[test]
    fn a2a_inference_is_deterministic() {
        let obs = Observation::new(vec![0.2, 0.1]).unwrap();
        let hist = chunk(&[0.1, 0.2, 0.3, -0.4, 0.5, 0.6]);
        let n = nets(Mode::A2A);
        let a = infer_action(&obs, &hist, &n, &mut ChaCha8Rng::seed_from_u64(1), 10).unwrap();
        let b = infer_action(&obs, &hist, &n, &mut ChaCha8Rng::seed_from_u64(2), 10).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn checkpoint_round_trip() {
        let n = nets(Mode::FixedSigma(4.0));
        let extra = ("norm.action_mean".to_string(), Tensor::vector(vec![0.1, 0.2]).unwrap());
        let bytes = n.to_checkpoint(10, std::slice::from_ref(&extra));
        let back = PolicyNets::from_checkpoint(&bytes).unwrap();
        assert_eq!(back.nets, n);
        assert_eq!(back.k_max, 10);
        assert_eq!(back.extras, vec![extra]);

        let mut bad = bytes.clone();
        bad[8] = 2;
        assert!(matches!(
            PolicyNets::from_checkpoint(&bad),
            Err(Error::VersionMismatch { .. })
        ));
        assert!(PolicyNets::from_checkpoint(&bytes[..bytes.len() - 1]).is_err());
    }

    #[test]
    fn mode_parsing() {
        assert_eq!("MARS".parse::<Mode>().unwrap(), Mode::Mars);
        assert_eq!("fm".parse::<Mode>().unwrap(), Mode::FlowMatching);
        assert_eq!("sigma:4".parse::<Mode>().unwrap(), Mode::FixedSigma(4.0));
        assert_eq!("weight:0.25".parse::<Mode>().unwrap(), Mode::FixedWeight(0.25));
        assert!("weight:2".parse::<Mode>().is_err());
        assert!("sigma:-1".parse::<Mode>().is_err());
        assert!("ddpm".parse::<Mode>().is_err());
        for m in [Mode::Mars, Mode::A2A, Mode::FixedSigma(1.5)] {
            assert_eq!(m.to_string().parse::<Mode>().unwrap(), m);
        }
    }
}
