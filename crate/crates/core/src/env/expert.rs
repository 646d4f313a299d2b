use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::map::{NavMap, Point};
use super::sim::{step, EnvState, Status};
use crate::error::{Error, Result};

/// Expert behaviour knobs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ExpertConfig {
    /// Distance travelled per step along the route.
    pub step_len: f64,
    /// Standard deviation of the Gaussian perturbation of the waypoints up to
    /// and through the passage.
    pub jitter: f64,
    /// Same for the shared waypoints after the passage.
    pub gate_jitter: f64,
    pub max_retries: usize,
    pub max_steps: usize,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            step_len: 0.04,
            jitter: 0.01,
            gate_jitter: 0.0,
            max_retries: 20,
            max_steps: 200,
        }
    }
}

/// One expert episode. `positions` has one more entry than `actions`: the
/// agent is at `positions[t]` when it takes `actions[t]`.
#[derive(Clone, Debug, PartialEq)]
pub struct Demonstration {
    pub positions: Vec<Point>,
    pub actions: Vec<Point>,
    pub mode: usize,
}

impl Demonstration {
    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }

    /// Positions at which an action was taken.
    pub fn observations(&self) -> &[Point] {
        &self.positions[..self.actions.len()]
    }

    /// Replays the actions through the simulator, returning the visited
    /// positions and the final status.
    pub fn replay(&self, map: &NavMap) -> (Vec<Point>, Status) {
        let mut state = EnvState::start(map);
        let mut positions = vec![state.position];
        let mut status = Status::Running;
        for &a in &self.actions {
            let (s, st) = step(state, a, map, usize::MAX);
            state = s;
            status = st;
            positions.push(state.position);
            if st.is_terminal() {
                break;
            }
        }
        (positions, status)
    }
}

/// Walks the polyline start -> passage -> shared waypoints at constant speed,
/// perturbing the waypoints. `passage = None` draws one uniformly.
pub fn scripted_expert<R: Rng + ?Sized>(
    map: &NavMap,
    passage: Option<usize>,
    cfg: &ExpertConfig,
    rng: &mut R,
) -> Result<Demonstration> {
    let mode = match passage {
        Some(p) if p < map.passages.len() => p,
        Some(p) => {
            return Err(Error::OutOfRange {
                index: p,
                len: map.passages.len(),
            })
        }
        None => rng.random_range(0..map.passages.len()),
    };
    let normal = |sd: f64| Normal::new(0.0, sd.max(0.0)).map_err(|e| Error::Config(format!("expert jitter: {e}")));
    let (early, late) = (normal(cfg.jitter)?, normal(cfg.gate_jitter)?);
    let base = map.route(mode)?;
    let shared_from = map.lead_in.len() + 2;
    for _ in 0..cfg.max_retries.max(1) {
        let route: Vec<Point> = base
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let (dist, sd) = if i < shared_from {
                    (&early, cfg.jitter)
                } else {
                    (&late, cfg.gate_jitter)
                };
                if sd > 0.0 {
                    [p[0] + dist.sample(rng), p[1] + dist.sample(rng)]
                } else {
                    *p
                }
            })
            .collect();
        if let Some(demo) = follow(map, &route, mode, cfg) {
            return Ok(demo);
        }
    }
    Err(Error::ExpertFailed(cfg.max_retries.max(1)))
}

fn follow(map: &NavMap, route: &[Point], mode: usize, cfg: &ExpertConfig) -> Option<Demonstration> {
    let mut state = EnvState::start(map);
    let mut positions = vec![state.position];
    let mut actions = Vec::new();
    // Cursor on the polyline: the segment being walked and the point reached on it.
    let mut seg = 0;
    let mut cursor = map.start;
    let mut from = map.start;
    while actions.len() < cfg.max_steps {
        let mut budget = cfg.step_len;
        while budget > 0.0 && seg < route.len() {
            let target = route[seg];
            let d = [target[0] - cursor[0], target[1] - cursor[1]];
            let len = d[0].hypot(d[1]);
            if len <= budget {
                cursor = target;
                budget -= len;
                seg += 1;
            } else {
                cursor = [cursor[0] + d[0] / len * budget, cursor[1] + d[1] / len * budget];
                budget = 0.0;
            }
        }
        let action = [cursor[0] - from[0], cursor[1] - from[1]];
        let (next, status) = step(state, action, map, usize::MAX);
        match status {
            Status::Collision | Status::Timeout => return None,
            _ => {}
        }
        actions.push(action);
        positions.push(next.position);
        state = next;
        from = next.position;
        cursor = from;
        if status == Status::Success {
            return Some(Demonstration {
                positions,
                actions,
                mode,
            });
        }
        if seg >= route.len() {
            // Route ended outside the goal.
            return None;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::map::default_map;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn every_passage_reaches_goal() {
        let m = default_map();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for p in 0..4 {
            let d = scripted_expert(&m, Some(p), &ExpertConfig::default(), &mut rng).unwrap();
            assert_eq!(d.mode, p);
            assert!(m.goal.contains(*d.positions.last().unwrap()));
            let (replayed, status) = d.replay(&m);
            assert_eq!(status, Status::Success);
            assert_eq!(replayed, d.positions);
        }
    }

    #[test]
    fn zero_jitter_is_seed_independent() {
        let m = default_map();
        let cfg = ExpertConfig {
            jitter: 0.0,
            ..ExpertConfig::default()
        };
        for p in 0..4 {
            let a = scripted_expert(&m, Some(p), &cfg, &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
            let b = scripted_expert(&m, Some(p), &cfg, &mut ChaCha8Rng::seed_from_u64(99)).unwrap();
            assert_eq!(a, b);
        }
    }

    #[test]
    fn hopeless_jitter_gives_up() {
        let m = default_map();
        let cfg = ExpertConfig {
            jitter: 5.0,
            max_retries: 3,
            ..ExpertConfig::default()
        };
        let err = scripted_expert(&m, Some(0), &cfg, &mut ChaCha8Rng::seed_from_u64(3)).unwrap_err();
        assert!(matches!(err, Error::ExpertFailed(3)));
    }
}
