use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

pub type Point = [f64; 2];

/// Closed axis-aligned rectangle.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub min: Point,
    pub max: Point,
}

impl Rect {
    pub fn new(x0: f64, y0: f64, x1: f64, y1: f64) -> Result<Self> {
        if !(x0.is_finite() && y0.is_finite() && x1.is_finite() && y1.is_finite()) || x0 > x1 || y0 > y1 {
            return Err(Error::Config(format!(
                "degenerate rectangle ({x0}, {y0}) - ({x1}, {y1})"
            )));
        }
        Ok(Self {
            min: [x0, y0],
            max: [x1, y1],
        })
    }

    pub fn contains(&self, p: Point) -> bool {
        p[0] >= self.min[0] && p[0] <= self.max[0] && p[1] >= self.min[1] && p[1] <= self.max[1]
    }

    pub fn center(&self) -> Point {
        [(self.min[0] + self.max[0]) / 2.0, (self.min[1] + self.max[1]) / 2.0]
    }

    /// Overlap with positive area; shared edges do not count.
    pub fn overlaps_interior(&self, other: &Rect) -> bool {
        self.min[0] < other.max[0]
            && other.min[0] < self.max[0]
            && self.min[1] < other.max[1]
            && other.min[1] < self.max[1]
    }

    /// Whether the segment `a -> b` touches the closed rectangle.
    pub fn intersects_segment(&self, a: Point, b: Point) -> bool {
        let mut t0: f64 = 0.0;
        let mut t1: f64 = 1.0;
        for axis in 0..2 {
            let d = b[axis] - a[axis];
            if d == 0.0 {
                if a[axis] < self.min[axis] || a[axis] > self.max[axis] {
                    return false;
                }
            } else {
                let ta = (self.min[axis] - a[axis]) / d;
                let tb = (self.max[axis] - a[axis]) / d;
                t0 = t0.max(ta.min(tb));
                t1 = t1.min(ta.max(tb));
                if t0 > t1 {
                    return false;
                }
            }
        }
        true
    }
}

/// A labeled corridor through the junction.
#[derive(Clone, Debug, PartialEq)]
pub struct Passage {
    pub label: String,
    pub rect: Rect,
}

/// Obstacle map with start, goal, passages and the shared expert route after
/// the junction.
#[derive(Clone, Debug, PartialEq)]
pub struct NavMap {
    pub bounds: Rect,
    pub obstacles: Vec<Rect>,
    pub start: Point,
    pub goal: Rect,
    pub passages: Vec<Passage>,
    /// Route from the start to the fork, shared by every mode.
    pub lead_in: Vec<Point>,
    /// Route from a passage exit to the goal, shared by every mode.
    pub waypoints: Vec<Point>,
    /// Largest displacement allowed per step.
    pub max_step: f64,
    /// Distance the expert keeps from a passage's ends when entering/leaving it.
    pub approach: f64,
    /// Final stretch in front of the goal, shared by every mode.
    pub corridor: Option<Rect>,
}

impl NavMap {
    pub fn validate(&self) -> Result<()> {
        let fail = |msg: String| Err(Error::Config(msg));
        if !self.bounds.contains(self.start) || self.in_obstacle(self.start) {
            return fail("start is not free".into());
        }
        if self.obstacles.iter().any(|o| o.overlaps_interior(&self.goal)) {
            return fail("goal region overlaps an obstacle".into());
        }
        if self.goal.contains(self.start) {
            return fail("start lies inside the goal".into());
        }
        if self.passages.is_empty() {
            return fail("map has no passages".into());
        }
        for (i, p) in self.passages.iter().enumerate() {
            if self.obstacles.iter().any(|o| o.overlaps_interior(&p.rect)) {
                return fail(format!("passage {} overlaps an obstacle", p.label));
            }
            if !(p.rect.min[1] > self.start[1] && p.rect.max[1] < self.goal.min[1]) {
                return fail(format!("passage {} does not lie between start and goal", p.label));
            }
            if self.passages[i + 1..].iter().any(|q| q.rect.overlaps_interior(&p.rect)) {
                return fail(format!("passage {} overlaps another passage", p.label));
            }
        }
        if !(self.max_step > 0.0 && self.max_step.is_finite()) {
            return fail(format!("max_step must be positive, got {}", self.max_step));
        }
        if !(self.approach >= 0.0 && self.approach.is_finite()) {
            return fail(format!("approach must be non-negative, got {}", self.approach));
        }
        Ok(())
    }

    pub fn in_obstacle(&self, p: Point) -> bool {
        self.obstacles.iter().any(|o| o.contains(p))
    }

    /// Whether moving along `a -> b` hits an obstacle or leaves the workspace.
    pub fn segment_blocked(&self, a: Point, b: Point) -> bool {
        !self.bounds.contains(b) || self.obstacles.iter().any(|o| o.intersects_segment(a, b))
    }

    /// Lowest passage edge; positions below it have not reached the junction.
    pub fn junction_entry(&self) -> f64 {
        self.passages
            .iter()
            .map(|p| p.rect.min[1])
            .fold(f64::INFINITY, f64::min)
    }

    /// Highest passage edge; positions above it are past the junction.
    pub fn junction_exit(&self) -> f64 {
        self.passages
            .iter()
            .map(|p| p.rect.max[1])
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Whether `p` lies on the final shared stretch. Without an explicit
    /// corridor this is everything past the junction.
    pub fn in_final_corridor(&self, p: Point) -> bool {
        match &self.corridor {
            Some(c) => c.contains(p),
            None => p[1] > self.junction_exit(),
        }
    }

    /// Full expert route through passage `choice`, excluding the start.
    pub fn route(&self, choice: usize) -> Result<Vec<Point>> {
        let mut r = self.lead_in.clone();
        r.extend(self.passage_route(choice)?);
        r.extend(&self.waypoints);
        Ok(r)
    }

    /// Entry and exit points of passage `choice`.
    pub fn passage_route(&self, choice: usize) -> Result<[Point; 2]> {
        let p = self.passages.get(choice).ok_or(Error::OutOfRange {
            index: choice,
            len: self.passages.len(),
        })?;
        let x = p.rect.center()[0];
        Ok([[x, p.rect.min[1] - self.approach], [x, p.rect.max[1] + self.approach]])
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        text.parse()
    }

    pub fn to_config(&self) -> String {
        let mut s = String::from("# navigation map\n");
        let r = |r: &Rect| format!("{} {} {} {}", r.min[0], r.min[1], r.max[0], r.max[1]);
        let _ = writeln!(s, "bounds {}", r(&self.bounds));
        let _ = writeln!(s, "start {} {}", self.start[0], self.start[1]);
        let _ = writeln!(s, "goal {}", r(&self.goal));
        let _ = writeln!(s, "max_step {}", self.max_step);
        let _ = writeln!(s, "approach {}", self.approach);
        if let Some(c) = &self.corridor {
            let _ = writeln!(s, "corridor {}", r(c));
        }
        for p in &self.lead_in {
            let _ = writeln!(s, "lead_in {} {}", p[0], p[1]);
        }
        for o in &self.obstacles {
            let _ = writeln!(s, "obstacle {}", r(o));
        }
        for p in &self.passages {
            let _ = writeln!(s, "passage {} {}", p.label, r(&p.rect));
        }
        for w in &self.waypoints {
            let _ = writeln!(s, "waypoint {} {}", w[0], w[1]);
        }
        s
    }
}

impl std::str::FromStr for NavMap {
    type Err = Error;

    /// Line-oriented format, `#` starts a comment:
    ///
    /// ```text
    /// bounds x0 y0 x1 y1
    /// start x y
    /// goal x0 y0 x1 y1
    /// max_step s
    /// approach d
    /// corridor x0 y0 x1 y1      (optional, final stretch before the goal)
    /// obstacle x0 y0 x1 y1      (repeatable)
    /// lead_in x y               (repeatable, route before the fork)
    /// passage label x0 y0 x1 y1 (repeatable, order defines ids)
    /// waypoint x y              (repeatable, route after the passage)
    /// ```
    fn from_str(text: &str) -> Result<Self> {
        let mut bounds = None;
        let mut start = None;
        let mut goal = None;
        let mut max_step = 0.05;
        let mut approach = 0.07;
        let mut obstacles = Vec::new();
        let mut passages = Vec::new();
        let mut waypoints = Vec::new();
        let mut lead_in = Vec::new();
        let mut corridor = None;
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let err = |detail: String| Error::Malformed {
                what: "map config",
                detail: format!("line {}: {detail}", lineno + 1),
            };
            let mut words = line.split_whitespace();
            let key = words.next().unwrap_or_default();
            let rest: Vec<&str> = words.collect();
            let nums = |skip: usize, count: usize| -> Result<Vec<f64>> {
                if rest.len() != skip + count {
                    return Err(err(format!("`{key}` expects {} values", skip + count)));
                }
                rest[skip..]
                    .iter()
                    .map(|w| w.parse::<f64>().map_err(|_| err(format!("bad number `{w}`"))))
                    .collect()
            };
            let rect = |v: Vec<f64>| Rect::new(v[0], v[1], v[2], v[3]).map_err(|e| err(e.to_string()));
            match key {
                "bounds" => bounds = Some(rect(nums(0, 4)?)?),
                "start" => {
                    let v = nums(0, 2)?;
                    start = Some([v[0], v[1]]);
                }
                "goal" => goal = Some(rect(nums(0, 4)?)?),
                "max_step" => max_step = nums(0, 1)?[0],
                "approach" => approach = nums(0, 1)?[0],
                "corridor" => corridor = Some(rect(nums(0, 4)?)?),
                "obstacle" => obstacles.push(rect(nums(0, 4)?)?),
                "passage" => {
                    let v = nums(1, 4)?;
                    passages.push(Passage {
                        label: rest[0].to_string(),
                        rect: rect(v)?,
                    });
                }
                "lead_in" => {
                    let v = nums(0, 2)?;
                    lead_in.push([v[0], v[1]]);
                }
                "waypoint" => {
                    let v = nums(0, 2)?;
                    waypoints.push([v[0], v[1]]);
                }
                other => return Err(err(format!("unknown key `{other}`"))),
            }
        }
        let missing = |k: &str| Error::Malformed {
            what: "map config",
            detail: format!("missing `{k}`"),
        };
        let goal = goal.ok_or_else(|| missing("goal"))?;
        if waypoints.is_empty() {
            waypoints.push(goal.center());
        }
        let map = NavMap {
            bounds: bounds.ok_or_else(|| missing("bounds"))?,
            obstacles,
            start: start.ok_or_else(|| missing("start"))?,
            goal,
            passages,
            lead_in,
            waypoints,
            max_step,
            approach,
            corridor,
        };
        map.validate()?;
        Ok(map)
    }
}

/// Unit square with three junction blocks forming four equal passages, and a
/// narrow gate in front of the goal.
pub fn default_map() -> NavMap {
    let rect = |x0, y0, x1, y1| Rect::new(x0, y0, x1, y1).expect("static geometry");
    let band = (0.40, 0.55);
    let passage = |label: &str, x0, x1| Passage {
        label: label.to_string(),
        rect: rect(x0, band.0, x1, band.1),
    };
    NavMap {
        bounds: rect(0.0, 0.0, 1.0, 1.0),
        obstacles: vec![
            rect(0.14, band.0, 0.30, band.1),
            rect(0.44, band.0, 0.56, band.1),
            rect(0.70, band.0, 0.86, band.1),
            rect(0.0, 0.74, 0.44, 0.79),
            rect(0.56, 0.74, 1.0, 0.79),
        ],
        start: [0.5, 0.08],
        goal: rect(0.40, 0.86, 0.60, 1.0),
        passages: vec![
            passage("far-left", 0.0, 0.14),
            passage("left", 0.30, 0.44),
            passage("right", 0.56, 0.70),
            passage("far-right", 0.86, 1.0),
        ],
        lead_in: vec![[0.5, 0.16]],
        waypoints: vec![[0.5, 0.68], [0.5, 0.82], [0.5, 0.93]],
        max_step: 0.05,
        approach: 0.09,
        corridor: Some(rect(0.40, 0.66, 0.60, 1.0)),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_map_is_valid() {
        let m = default_map();
        m.validate().unwrap();
        assert_eq!(m.passages.len(), 4);
        assert!(!m.in_obstacle(m.start));
        assert!(!m.in_obstacle(m.goal.center()));
        assert!(m.in_final_corridor([0.5, 0.8]));
        assert!(!m.in_final_corridor([0.07, 0.7]));
    }

    #[test]
    fn straight_line_to_goal_is_blocked() {
        let m = default_map();
        assert!(m.segment_blocked(m.start, m.goal.center()));
    }

    #[test]
    fn segment_rectangle_cases() {
        let r = Rect::new(0.0, 0.0, 1.0, 1.0).unwrap();
        assert!(r.intersects_segment([-1.0, 0.5], [2.0, 0.5]));
        assert!(r.intersects_segment([0.5, 0.5], [0.6, 0.6]));
        assert!(!r.intersects_segment([-1.0, 2.0], [2.0, 2.0]));
        assert!(r.intersects_segment([-1.0, 1.0], [2.0, 1.0]));
        assert!(!r.intersects_segment([1.5, -1.0], [3.0, 0.5]));
        assert!(r.intersects_segment([1.5, -0.5], [-0.5, 1.5]));
    }

    #[test]
    fn config_round_trip() {
        let m = default_map();
        let back: NavMap = m.to_config().parse().unwrap();
        assert_eq!(back, m);
    }

    #[test]
    fn config_errors() {
        assert!(matches!("bounds 0 0 1".parse::<NavMap>(), Err(Error::Malformed { .. })));
        assert!(matches!(
            "start 0 0\ngoal 0 0 1 1".parse::<NavMap>(),
            Err(Error::Malformed { .. })
        ));
        let overlapping = default_map().to_config() + "obstacle 0.0 0.45 0.05 0.5\n";
        assert!(matches!(overlapping.parse::<NavMap>(), Err(Error::Config(_))));
        assert!("teleport 1 2".parse::<NavMap>().is_err());
    }
}
