use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::Normalizer;
use super::map::{NavMap, Point};
use super::sim::{clip_action, step, EnvState, Status};
use crate::error::Result;
use crate::policy::{infer_action, ActionChunk, Mode, Observation, PolicyNets};

/// One planning call's output in workspace units.
#[derive(Clone, Debug, PartialEq)]
pub struct Plan {
    pub actions: Vec<Point>,
    pub steps_used: usize,
    pub weight: Vec<f64>,
}

/// Anything that maps the current position and the executed actions to the
/// next action chunk.
pub trait ChunkPolicy {
    fn plan<R: Rng + ?Sized>(&mut self, position: Point, executed: &[Point], rng: &mut R) -> Result<Plan>;
}

/// A trained policy together with the dataset statistics it was fitted on.
#[derive(Clone, Debug)]
pub struct NetPolicy {
    pub nets: PolicyNets,
    pub norm: Normalizer,
    pub k_max: usize,
}

impl NetPolicy {
    pub fn new(nets: PolicyNets, norm: Normalizer, k_max: usize) -> Self {
        Self { nets, norm, k_max }
    }

    /// The most recent `H` executed actions, normalized, with the zero
    /// chunk standing in for steps before the episode.
    pub fn history_chunk(&self, executed: &[Point]) -> Result<ActionChunk> {
        let h = self.nets.dims().horizon;
        let mut values = vec![0.0; 2 * h];
        let take = executed.len().min(h);
        for (k, a) in executed[executed.len() - take..].iter().enumerate() {
            let n = self.norm.action(*a);
            let row = h - take + k;
            values[2 * row] = n[0];
            values[2 * row + 1] = n[1];
        }
        ActionChunk::new(h, 2, values)
    }
}

impl ChunkPolicy for NetPolicy {
    fn plan<R: Rng + ?Sized>(&mut self, position: Point, executed: &[Point], rng: &mut R) -> Result<Plan> {
        let obs = Observation::new(self.norm.obs(position).to_vec())?;
        let history = self.history_chunk(executed)?;
        let inf = infer_action(&obs, &history, &self.nets, rng, self.k_max)?;
        let actions = (0..inf.chunk.horizon())
            .map(|h| {
                let r = inf.chunk.row(h);
                self.norm.action_raw([r[0], r[1]])
            })
            .collect();
        let weight = match self.nets.mode {
            Mode::FixedSigma(_) => Vec::new(),
            _ => inf.weight.as_slice().to_vec(),
        };
        Ok(Plan {
            actions,
            steps_used: inf.steps_used,
            weight,
        })
    }
}

/// Replays a fixed action sequence chunk by chunk.
#[derive(Clone, Debug)]
pub struct ExpertReplay {
    actions: Vec<Point>,
    horizon: usize,
}

impl ExpertReplay {
    pub fn new(actions: Vec<Point>, horizon: usize) -> Self {
        Self {
            actions,
            horizon: horizon.max(1),
        }
    }
}

impl ChunkPolicy for ExpertReplay {
    fn plan<R: Rng + ?Sized>(&mut self, _position: Point, executed: &[Point], _rng: &mut R) -> Result<Plan> {
        let start = executed.len().min(self.actions.len());
        let end = (start + self.horizon).min(self.actions.len());
        Ok(Plan {
            actions: self.actions[start..end].to_vec(),
            steps_used: 0,
            weight: Vec::new(),
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct InferenceRecord {
    /// Environment step at which the plan was requested.
    pub t: usize,
    pub position: Point,
    pub steps_used: usize,
    pub weight: Vec<f64>,
}

impl InferenceRecord {
    pub fn max_weight(&self) -> f64 {
        self.weight.iter().copied().fold(f64::NAN, f64::max)
    }
}

/// Everything observed during one closed-loop episode.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryRecord {
    /// Visited positions, starting with the start point.
    pub positions: Vec<Point>,
    /// Index into `inferences` of the plan each executed action came from.
    pub plan_of_step: Vec<usize>,
    pub inferences: Vec<InferenceRecord>,
    pub status: Status,
    pub passage: Option<usize>,
}

impl TrajectoryRecord {
    pub fn success(&self) -> bool {
        self.status == Status::Success
    }

    /// CSV with one row per visited position: `t,x,y,steps_used,max_w`. The
    /// last two columns describe the plan that moved the agent there.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,x,y,steps_used,max_w\n");
        for (t, p) in self.positions.iter().enumerate() {
            let (steps, w) = t
                .checked_sub(1)
                .and_then(|i| self.plan_of_step.get(i))
                .map(|&k| (self.inferences[k].steps_used as f64, self.inferences[k].max_weight()))
                .unwrap_or((f64::NAN, f64::NAN));
            let _ = writeln!(s, "{t},{:.6},{:.6},{},{}", p[0], p[1], fmt_opt(steps), fmt_opt(w));
        }
        s
    }
}

fn fmt_opt(v: f64) -> String {
    if v.is_nan() {
        String::new()
    } else {
        format!("{v:.6}")
    }
}

/// First passage whose rectangle the path touches, in path order.
pub fn classify_passage(map: &NavMap, positions: &[Point]) -> Option<usize> {
    positions
        .windows(2)
        .find_map(|w| map.passages.iter().position(|p| p.rect.intersects_segment(w[0], w[1])))
}

/// Closed-loop episode: request a plan, execute up to `replan_every` of its
/// actions, repeat until a terminal status.
pub fn rollout<P: ChunkPolicy, R: Rng + ?Sized>(
    policy: &mut P,
    map: &NavMap,
    rng: &mut R,
    horizon: usize,
    replan_every: usize,
) -> Result<TrajectoryRecord> {
    let replan_every = replan_every.max(1);
    let mut state = EnvState::start(map);
    let mut positions = vec![state.position];
    let mut executed: Vec<Point> = Vec::new();
    let mut plan_of_step = Vec::new();
    let mut inferences = Vec::new();
    let status = 'episode: loop {
        if state.step_count >= horizon {
            break Status::Timeout;
        }
        let plan = policy.plan(state.position, &executed, rng)?;
        inferences.push(InferenceRecord {
            t: state.step_count,
            position: state.position,
            steps_used: plan.steps_used,
            weight: plan.weight,
        });
        let plan_id = inferences.len() - 1;
        let mut actions = plan.actions.into_iter().take(replan_every).peekable();
        if actions.peek().is_none() {
            // Nothing to execute: idle for one step.
            let (s, st) = step(state, [0.0, 0.0], map, horizon);
            state = s;
            executed.push([0.0, 0.0]);
            positions.push(state.position);
            plan_of_step.push(plan_id);
            if st.is_terminal() {
                break 'episode st;
            }
            continue;
        }
        for a in actions {
            let a = clip_action(a, map.max_step);
            let (s, st) = step(state, a, map, horizon);
            if st == Status::Timeout {
                break 'episode st;
            }
            state = s;
            executed.push(a);
            positions.push(state.position);
            plan_of_step.push(plan_id);
            if st.is_terminal() {
                break 'episode st;
            }
        }
    };
    let passage = classify_passage(map, &positions);
    Ok(TrajectoryRecord {
        positions,
        plan_of_step,
        inferences,
        status,
        passage,
    })
}

/// `count` independent episodes; episode `i` draws from its own stream of
/// `seed`, so results do not depend on evaluation order.
pub fn rollouts<P: ChunkPolicy + Clone>(
    policy: &P,
    map: &NavMap,
    seed: u64,
    count: usize,
    horizon: usize,
    replan_every: usize,
) -> Result<Vec<TrajectoryRecord>> {
    (0..count)
        .map(|i| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(i as u64);
            rollout(&mut policy.clone(), map, &mut rng, horizon, replan_every)
        })
        .collect()
}
