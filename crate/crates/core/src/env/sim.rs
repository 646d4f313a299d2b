use super::map::{NavMap, Point};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EnvState {
    pub position: Point,
    pub step_count: usize,
}

impl EnvState {
    pub fn start(map: &NavMap) -> Self {
        Self {
            position: map.start,
            step_count: 0,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Status {
    Running,
    Collision,
    Success,
    Timeout,
}

impl Status {
    pub fn is_terminal(self) -> bool {
        self != Status::Running
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Status::Running => "running",
            Status::Collision => "collision",
            Status::Success => "success",
            Status::Timeout => "timeout",
        }
    }
}

/// Scales `action` down to at most `max_len`.
pub fn clip_action(action: Point, max_len: f64) -> Point {
    let len = action[0].hypot(action[1]);
    if len > max_len {
        let s = max_len / len;
        [action[0] * s, action[1] * s]
    } else {
        action
    }
}

/// Advances one step. Over-long actions are clipped to `map.max_step`. A
/// blocked move leaves the position unchanged and ends the episode.
pub fn step(state: EnvState, action: Point, map: &NavMap, horizon: usize) -> (EnvState, Status) {
    if state.step_count >= horizon {
        return (state, Status::Timeout);
    }
    let a = clip_action(action, map.max_step);
    let from = state.position;
    let to = [from[0] + a[0], from[1] + a[1]];
    let mut next = EnvState {
        position: from,
        step_count: state.step_count + 1,
    };
    if !(to[0].is_finite() && to[1].is_finite()) || map.segment_blocked(from, to) {
        return (next, Status::Collision);
    }
    next.position = to;
    let status = if map.goal.contains(to) {
        Status::Success
    } else {
        Status::Running
    };
    (next, status)
}
