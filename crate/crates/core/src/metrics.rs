//! Success rate, modal balance and inference-step statistics over rollouts.

use std::fmt::Write as _;

use crate::env::{NavMap, Status, TrajectoryRecord};

/// `2 * min(n1, n2) / (n1 + n2)`, zero when both are zero.
pub fn modal_balance(n1: usize, n2: usize) -> f64 {
    modal_balance_k(&[n1, n2])
}

/// `K * min_k n_k / sum_k n_k`, zero for an empty total. Equal counts give 1.
pub fn modal_balance_k(counts: &[usize]) -> f64 {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return 0.0;
    }
    let min = *counts.iter().min().expect("non-empty when total > 0");
    (counts.len() * min) as f64 / total as f64
}

/// Mean, min and max of the step counts of a set of inference calls.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepStats {
    pub mean: f64,
    pub min: usize,
    pub max: usize,
    pub count: usize,
}

impl StepStats {
    pub fn from_counts(steps: impl IntoIterator<Item = usize>) -> Option<Self> {
        let mut count = 0;
        let mut sum = 0;
        let mut min = usize::MAX;
        let mut max = 0;
        for s in steps {
            count += 1;
            sum += s;
            min = min.min(s);
            max = max.max(s);
        }
        (count > 0).then(|| StepStats {
            mean: sum as f64 / count as f64,
            min,
            max,
            count,
        })
    }
}

/// Summary of an evaluation.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalReport {
    pub n_rollouts: usize,
    pub successes: usize,
    pub collisions: usize,
    pub timeouts: usize,
    pub success_rate: f64,
    /// Successful rollouts per passage.
    pub mode_counts: Vec<usize>,
    /// Balance between the two halves of the passages (left vs right).
    pub gamma: f64,
    /// Balance over all passages.
    pub gamma_k: f64,
    pub steps: Option<StepStats>,
    /// Steps of inferences issued before the agent reached the junction.
    pub steps_pre_junction: Option<StepStats>,
    /// Steps of inferences issued on the final corridor to the goal.
    pub steps_final_corridor: Option<StepStats>,
    /// Mean of the largest weight component over all inferences that had one.
    pub mean_max_weight: Option<f64>,
}

/// Folds rollout records into a report. Only successes are assigned to a
/// passage; step statistics cover every inference call.
pub fn aggregate(records: &[TrajectoryRecord], map: &NavMap) -> EvalReport {
    let k = map.passages.len();
    let mut mode_counts = vec![0; k];
    let (mut successes, mut collisions, mut timeouts) = (0, 0, 0);
    for r in records {
        match r.status {
            Status::Success => {
                successes += 1;
                if let Some(p) = r.passage.filter(|&p| p < k) {
                    mode_counts[p] += 1;
                }
            }
            Status::Collision => collisions += 1,
            Status::Timeout | Status::Running => timeouts += 1,
        }
    }
    let half = k / 2;
    let left: usize = mode_counts[..half].iter().sum();
    let right: usize = mode_counts[half..].iter().sum();

    let inferences = || records.iter().flat_map(|r| r.inferences.iter());
    let entry = map.junction_entry();
    let weights: Vec<f64> = inferences()
        .filter(|i| !i.weight.is_empty())
        .map(|i| i.max_weight())
        .collect();

    EvalReport {
        n_rollouts: records.len(),
        successes,
        collisions,
        timeouts,
        success_rate: if records.is_empty() {
            0.0
        } else {
            successes as f64 / records.len() as f64
        },
        gamma: modal_balance(left, right),
        gamma_k: modal_balance_k(&mode_counts),
        mode_counts,
        steps: StepStats::from_counts(inferences().map(|i| i.steps_used)),
        steps_pre_junction: StepStats::from_counts(
            inferences().filter(|i| i.position[1] < entry).map(|i| i.steps_used),
        ),
        steps_final_corridor: StepStats::from_counts(
            inferences()
                .filter(|i| map.in_final_corridor(i.position))
                .map(|i| i.steps_used),
        ),
        mean_max_weight: (!weights.is_empty()).then(|| weights.iter().sum::<f64>() / weights.len() as f64),
    }
}

impl EvalReport {
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut line = |label: &str, value: String| {
            let _ = writeln!(s, "{label:<20}{value}");
        };
        line("rollouts", self.n_rollouts.to_string());
        line(
            "success rate",
            format!(
                "{:.4} ({} ok, {} collisions, {} timeouts)",
                self.success_rate, self.successes, self.collisions, self.timeouts
            ),
        );
        let counts: Vec<String> = self.mode_counts.iter().map(usize::to_string).collect();
        line("mode counts", counts.join("/"));
        line("gamma", format!("{:.4}", self.gamma));
        line("gamma_k", format!("{:.4}", self.gamma_k));
        let fmt = |st: &Option<StepStats>| match st {
            Some(st) => format!(
                "mean {:.3} min {} max {} over {} calls",
                st.mean, st.min, st.max, st.count
            ),
            None => "n/a".to_string(),
        };
        line("steps", fmt(&self.steps));
        line("steps pre-junction", fmt(&self.steps_pre_junction));
        line("steps corridor", fmt(&self.steps_final_corridor));
        if let Some(w) = self.mean_max_weight {
            line("mean max w", format!("{w:.4}"));
        }
        s
    }

    pub const CSV_HEADER: &'static str = "n_rollouts,success_rate,collisions,timeouts,mode_counts,gamma,gamma_k,steps_mean,steps_min,steps_max,steps_pre_mean,steps_corridor_mean";

    pub fn csv_row(&self) -> String {
        let counts: Vec<String> = self.mode_counts.iter().map(usize::to_string).collect();
        let opt = |v: Option<f64>| v.map(|v| format!("{v:.6}")).unwrap_or_default();
        format!(
            "{},{:.6},{},{},{},{:.6},{:.6},{},{},{},{},{}",
            self.n_rollouts,
            self.success_rate,
            self.collisions,
            self.timeouts,
            counts.join("/"),
            self.gamma,
            self.gamma_k,
            opt(self.steps.map(|s| s.mean)),
            self.steps.map(|s| s.min.to_string()).unwrap_or_default(),
            self.steps.map(|s| s.max.to_string()).unwrap_or_default(),
            opt(self.steps_pre_junction.map(|s| s.mean)),
            opt(self.steps_final_corridor.map(|s| s.mean)),
        )
    }
}

/// Spearman rank correlation with average ranks for ties. `None` when either
/// side is constant.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    assert_eq!(x.len(), y.len());
    let rx = ranks(x);
    let ry = ranks(y);
    let n = x.len() as f64;
    let mx = rx.iter().sum::<f64>() / n;
    let my = ry.iter().sum::<f64>() / n;
    let mut cov = 0.0;
    let mut vx = 0.0;
    let mut vy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        cov += (a - mx) * (b - my);
        vx += (a - mx).powi(2);
        vy += (b - my).powi(2);
    }
    (vx > 0.0 && vy > 0.0).then(|| cov / (vx * vy).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn balance_hand_cases() {
        assert_eq!(modal_balance(25, 25), 1.0);
        assert_eq!(modal_balance(10, 0), 0.0);
        assert_eq!(modal_balance(30, 10), 0.5);
        assert_eq!(modal_balance(0, 0), 0.0);
        assert!((modal_balance_k(&[20, 24, 29, 24]) - 0.8247).abs() < 1e-4);
        assert_eq!(modal_balance_k(&[5, 0, 7, 1]), 0.0);
    }

    #[test]
    fn spearman_cases() {
        assert_eq!(spearman(&[0.0, 1.0, 4.0, 10.0], &[0.1, 0.2, 0.5, 0.9]), Some(1.0));
        assert_eq!(spearman(&[0.0, 1.0, 4.0, 10.0], &[0.9, 0.5, 0.2, 0.1]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0], &[3.0, 3.0]), None);
        let r = spearman(&[1.0, 2.0, 3.0, 4.0], &[1.0, 1.0, 2.0, 3.0]).unwrap();
        assert!(r > 0.9 && r < 1.0);
    }
}
