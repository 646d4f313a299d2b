//! Static SVG figures: line charts, trajectory overlays on the map.

use std::fmt::Write as _;

use crate::env::{NavMap, Point, Rect};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: f64 = 56.0;
const PALETTE: &[&str] = &[
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf",
];

/// One named polyline of a [`line_chart`].
#[derive(Clone, Debug, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(w: f64, h: f64) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\" \
         font-family=\"sans-serif\" font-size=\"12\">\n<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    )
}

/// Axis range padded so flat data still spans some height.
fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        let pad = lo.abs().max(1.0) * 0.05;
        return (lo - pad, hi + pad);
    }
    (lo, hi)
}

/// Line chart with one polyline per series. With `log_y`, non-positive
/// values are dropped and the axis shows log10 of the data.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, series: &[Series], log_y: bool) -> String {
    let ty = |v: f64| if log_y { v.log10() } else { v };
    let keep = |&(_, y): &(f64, f64)| y.is_finite() && (!log_y || y > 0.0);
    let (x0, x1) = range(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| keep(p)).map(|p| p.0)),
    );
    let (y0, y1) = range(
        series
            .iter()
            .flat_map(|s| s.points.iter().filter(|p| keep(p)).map(|p| ty(p.1))),
    );
    let px = |x: f64| MARGIN + (x - x0) / (x1 - x0) * (WIDTH - 2.0 * MARGIN);
    let py = |y: f64| HEIGHT - MARGIN - (ty(y) - y0) / (y1 - y0) * (HEIGHT - 2.0 * MARGIN);

    let mut s = header(WIDTH, HEIGHT);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"24\" text-anchor=\"middle\" font-size=\"15\">{}</text>",
        WIDTH / 2.0,
        escape(title)
    );
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        s,
        "<path d=\"M{l},{t} L{l},{b} L{r},{b}\" fill=\"none\" stroke=\"black\"/>"
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let xv = x0 + f * (x1 - x0);
        let yv = y0 + f * (y1 - y0);
        let x = l + f * (r - l);
        let y = b - f * (b - t);
        let _ = writeln!(
            s,
            "<text x=\"{x:.1}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
            b + 16.0,
            tick(xv)
        );
        let label = if log_y { format!("1e{yv:.1}") } else { tick(yv) };
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{:.1}\" text-anchor=\"end\">{label}</text>",
            l - 6.0,
            y + 4.0
        );
    }
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{}</text>",
        WIDTH / 2.0,
        HEIGHT - 12.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        "<text x=\"16\" y=\"{}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {})\">{}</text>",
        HEIGHT / 2.0,
        HEIGHT / 2.0,
        escape(y_label)
    );
    for (k, ser) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = ser
            .points
            .iter()
            .filter(|p| keep(p))
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
            .collect();
        if !pts.is_empty() {
            let _ = writeln!(
                s,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\"/>",
                pts.join(" ")
            );
        }
        let ly = t + 14.0 * k as f64;
        let _ = writeln!(
            s,
            "<line x1=\"{}\" y1=\"{ly}\" x2=\"{}\" y2=\"{ly}\" stroke=\"{color}\" stroke-width=\"2\"/>",
            r - 110.0,
            r - 92.0
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\">{}</text>",
            r - 88.0,
            ly + 4.0,
            escape(&ser.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick(v: f64) -> String {
    if v == 0.0 || (v.abs() >= 0.01 && v.abs() < 1e4) {
        format!("{:.3}", v)
            .trim_end_matches('0')
            .trim_end_matches('.')
            .to_string()
    } else {
        format!("{v:.1e}")
    }
}

/// Blue at 0 through red at 1.
pub fn weight_color(w: f64) -> String {
    let t = w.clamp(0.0, 1.0);
    let r = (40.0 + 215.0 * t).round() as u8;
    let g = (90.0 + 40.0 * (1.0 - (2.0 * t - 1.0).abs())).round() as u8;
    let b = (230.0 - 200.0 * t).round() as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// A rollout drawn on the map: positions and, per segment, the weight of the
/// plan that produced it (`None` is drawn grey).
#[derive(Clone, Debug, PartialEq)]
pub struct Trace {
    pub positions: Vec<Point>,
    pub segment_weight: Vec<Option<f64>>,
}

/// Obstacles, passages, goal and the traces, each segment colored by weight.
pub fn map_overlay(map: &NavMap, title: &str, traces: &[Trace]) -> String {
    let size = 520.0;
    let pad = 30.0;
    let b = map.bounds;
    let scale = (size - 2.0 * pad) / (b.max[0] - b.min[0]).max(b.max[1] - b.min[1]);
    let px = |p: Point| (pad + (p[0] - b.min[0]) * scale, size - pad - (p[1] - b.min[1]) * scale);
    let rect = |s: &mut String, r: &Rect, style: &str| {
        let (x0, y1) = px(r.min);
        let (x1, y0) = px(r.max);
        let _ = writeln!(
            s,
            "<rect x=\"{x0:.2}\" y=\"{y0:.2}\" width=\"{:.2}\" height=\"{:.2}\" {style}/>",
            x1 - x0,
            y1 - y0
        );
    };

    let mut s = header(size + 90.0, size);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"18\" text-anchor=\"middle\" font-size=\"14\">{}</text>",
        size / 2.0,
        escape(title)
    );
    rect(&mut s, &b, "fill=\"none\" stroke=\"black\"");
    for p in &map.passages {
        rect(&mut s, &p.rect, "fill=\"#eef5ee\" stroke=\"none\"");
    }
    rect(&mut s, &map.goal, "fill=\"#d8f0d8\" stroke=\"#2ca02c\"");
    for o in &map.obstacles {
        rect(&mut s, o, "fill=\"#555555\"");
    }
    for tr in traces {
        for (i, pair) in tr.positions.windows(2).enumerate() {
            let (x0, y0) = px(pair[0]);
            let (x1, y1) = px(pair[1]);
            let color = tr
                .segment_weight
                .get(i)
                .copied()
                .flatten()
                .map_or_else(|| "#999999".to_string(), weight_color);
            let _ = writeln!(
                s,
                "<line x1=\"{x0:.2}\" y1=\"{y0:.2}\" x2=\"{x1:.2}\" y2=\"{y1:.2}\" stroke=\"{color}\" stroke-width=\"1.2\" stroke-opacity=\"0.7\"/>"
            );
        }
    }
    let (sx, sy) = px(map.start);
    let _ = writeln!(s, "<circle cx=\"{sx:.2}\" cy=\"{sy:.2}\" r=\"4\" fill=\"black\"/>");
    // color bar for max weight
    let bar_x = size + 10.0;
    for i in 0..20 {
        let w = 1.0 - i as f64 / 19.0;
        let y = pad + i as f64 * (size - 2.0 * pad) / 20.0;
        let _ = writeln!(
            s,
            "<rect x=\"{bar_x}\" y=\"{y:.2}\" width=\"16\" height=\"{:.2}\" fill=\"{}\"/>",
            (size - 2.0 * pad) / 20.0 + 0.5,
            weight_color(w)
        );
    }
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">1</text>", bar_x + 20.0, pad + 10.0);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">0</text>", bar_x + 20.0, size - pad);
    let _ = writeln!(s, "<text x=\"{}\" y=\"{}\">max w</text>", bar_x - 2.0, pad - 8.0);
    s.push_str("</svg>\n");
    s
}

/// Mean of `values` grouped into `bins` equal-width bins of `key` over
/// `[lo, hi]`; empty bins are skipped. Returns (bin center, mean).
pub fn binned_mean(samples: &[(f64, f64)], lo: f64, hi: f64, bins: usize) -> Vec<(f64, f64)> {
    if bins == 0 || hi <= lo {
        return Vec::new();
    }
    let mut acc = vec![(0.0, 0usize); bins];
    for &(k, v) in samples {
        let f = ((k - lo) / (hi - lo)).clamp(0.0, 1.0);
        let i = ((f * bins as f64) as usize).min(bins - 1);
        acc[i].0 += v;
        acc[i].1 += 1;
    }
    acc.iter()
        .enumerate()
        .filter(|(_, (_, n))| *n > 0)
        .map(|(i, (s, n))| (lo + (i as f64 + 0.5) * (hi - lo) / bins as f64, s / *n as f64))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::default_map;

    #[test]
    fn chart_is_deterministic_and_well_formed() {
        let series = vec![
            Series {
                name: "a<b".into(),
                points: vec![(1.0, 3.0), (2.0, 1.0), (3.0, 0.5)],
            },
            Series {
                name: "flat".into(),
                points: vec![(1.0, 2.0), (3.0, 2.0)],
            },
        ];
        let a = line_chart("loss", "epoch", "value", &series, true);
        assert_eq!(a, line_chart("loss", "epoch", "value", &series, true));
        assert!(a.starts_with("<svg") && a.ends_with("</svg>\n"));
        assert_eq!(a.matches("<polyline").count(), 2);
        assert!(a.contains("a&lt;b"));
    }

    #[test]
    fn empty_chart_still_renders() {
        let s = line_chart("none", "x", "y", &[], false);
        assert!(s.contains("</svg>"));
    }

    #[test]
    fn overlay_draws_every_segment() {
        let m = default_map();
        let tr = Trace {
            positions: vec![[0.5, 0.1], [0.5, 0.15], [0.5, 0.2]],
            segment_weight: vec![Some(0.9), None],
        };
        let s = map_overlay(&m, "t", &[tr]);
        assert_eq!(s.matches("<line").count(), 2);
        assert!(s.contains(&weight_color(0.9)));
        assert!(s.contains("#999999"));
    }

    #[test]
    fn colors_span_blue_to_red() {
        assert_eq!(weight_color(0.0), "#285ae6");
        assert_eq!(weight_color(1.0), "#ff5a1e");
        assert_eq!(weight_color(2.0), weight_color(1.0));
    }

    #[test]
    fn binned_means() {
        let b = binned_mean(&[(0.05, 2.0), (0.07, 4.0), (0.95, 1.0)], 0.0, 1.0, 10);
        assert_eq!(b.len(), 2);
        assert!((b[0].0 - 0.05).abs() < 1e-12 && (b[0].1 - 3.0).abs() < 1e-12);
        assert!((b[1].1 - 1.0).abs() < 1e-12);
    }
}
