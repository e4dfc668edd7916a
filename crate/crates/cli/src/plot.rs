//! SVG emitters for prediction overlays and loss curves.

use std::fmt::Write;

use socialcircle::predictor::{EpochLoss, PredictionSet};
use socialcircle::trajdata::TrajectorySample;
use socialcircle::Vec2;

pub const FACTUAL: &str = "#1f77b4";
pub const COUNTERFACTUAL: &str = "#ff7f0e";
const SIZE: f64 = 600.0;
const MARGIN: f64 = 40.0;

/// Maps data coordinates into the drawing square, y pointing up.
struct Frame {
    min: Vec2,
    scale: f64,
}

impl Frame {
    fn fit(points: impl Iterator<Item = Vec2>) -> Frame {
        let (mut lo, mut hi) = (Vec2::new(f64::MAX, f64::MAX), Vec2::new(f64::MIN, f64::MIN));
        for p in points.filter(|p| p.is_finite()) {
            lo = Vec2::new(lo.x.min(p.x), lo.y.min(p.y));
            hi = Vec2::new(hi.x.max(p.x), hi.y.max(p.y));
        }
        if lo.x > hi.x {
            return Frame { min: Vec2::ZERO, scale: 1.0 };
        }
        let span = (hi.x - lo.x).max(hi.y - lo.y).max(1e-6);
        Frame {
            min: lo,
            scale: (SIZE - 2.0 * MARGIN) / span,
        }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        (
            MARGIN + (p.x - self.min.x) * self.scale,
            SIZE - MARGIN - (p.y - self.min.y) * self.scale,
        )
    }
}

fn polyline(out: &mut String, frame: &Frame, pts: &[Vec2], stroke: &str, extra: &str) {
    if pts.is_empty() {
        return;
    }
    let coords: Vec<String> = pts
        .iter()
        .map(|&p| {
            let (x, y) = frame.map(p);
            format!("{x:.2},{y:.2}")
        })
        .collect();
    let _ = writeln!(
        out,
        r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5" {extra}/>"#,
        coords.join(" ")
    );
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="24" font-family="sans-serif" font-size="14">{}</text>"#, escape(title));
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Observed history, neighbors, ground truth, factual (blue) and
/// counterfactual (orange) predictions, injected neighbors dashed.
pub fn scene_svg(
    sample: &TrajectorySample,
    factual: &PredictionSet,
    counterfactual: &PredictionSet,
    manual: &[Vec<Vec2>],
) -> String {
    let all = sample
        .observed
        .iter()
        .chain(&sample.future)
        .chain(sample.neighbors.iter().flat_map(|n| &n.observed))
        .chain(factual.trajectories.iter().flatten())
        .chain(counterfactual.trajectories.iter().flatten())
        .chain(manual.iter().flatten())
        .copied();
    let frame = Frame::fit(all);
    let mut s = header(&sample.id);
    for n in &sample.neighbors {
        polyline(&mut s, &frame, &n.observed, "#999999", "");
    }
    for t in manual {
        polyline(&mut s, &frame, t, "#555555", r#"stroke-dasharray="6,4""#);
    }
    let last = sample.last_observed();
    let with_origin = |t: &[Vec2]| -> Vec<Vec2> { std::iter::once(last).chain(t.iter().copied()).collect() };
    for t in &factual.trajectories {
        polyline(&mut s, &frame, &with_origin(t), FACTUAL, r#"stroke-opacity="0.6""#);
    }
    for t in &counterfactual.trajectories {
        polyline(&mut s, &frame, &with_origin(t), COUNTERFACTUAL, r#"stroke-opacity="0.6""#);
    }
    polyline(&mut s, &frame, &sample.observed, "#000000", "");
    if sample.has_future() {
        polyline(&mut s, &frame, &with_origin(&sample.future), "#2ca02c", r#"stroke-dasharray="2,3""#);
    }
    let legend = [
        ("observed", "#000000"),
        ("truth", "#2ca02c"),
        ("factual", FACTUAL),
        ("counterfactual", COUNTERFACTUAL),
        ("neighbors", "#999999"),
    ];
    for (i, (label, color)) in legend.iter().enumerate() {
        let y = SIZE - 12.0 - 14.0 * (legend.len() - 1 - i) as f64;
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{y}" font-family="sans-serif" font-size="11" fill="{color}">{label}</text>"#,
            SIZE - 110.0
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Training (and validation, when present) loss against epoch.
pub fn loss_svg(curve: &[EpochLoss]) -> String {
    let train: Vec<Vec2> = curve.iter().map(|e| Vec2::new(e.epoch as f64, e.train)).collect();
    let val: Vec<Vec2> = curve
        .iter()
        .filter_map(|e| e.val.map(|v| Vec2::new(e.epoch as f64, v)))
        .collect();
    let lo = train.iter().chain(&val).map(|p| p.y).fold(f64::MAX, f64::min);
    let hi = train.iter().chain(&val).map(|p| p.y).fold(f64::MIN, f64::max);
    let n = curve.len().max(2) as f64 - 1.0;
    // Stretch the axes independently so both fill the square.
    let norm = |p: &Vec2| Vec2::new(p.x / n, if hi > lo { (p.y - lo) / (hi - lo) } else { 0.5 });
    let frame = Frame {
        min: Vec2::ZERO,
        scale: SIZE - 2.0 * MARGIN,
    };
    let mut s = header("loss");
    polyline(&mut s, &frame, &train.iter().map(norm).collect::<Vec<_>>(), FACTUAL, "");
    polyline(&mut s, &frame, &val.iter().map(norm).collect::<Vec<_>>(), COUNTERFACTUAL, "");
    if !curve.is_empty() {
        let (x0, y0) = frame.map(Vec2::ZERO);
        let (x1, y1) = frame.map(Vec2::new(1.0, 1.0));
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="#000000"/>"##);
        let _ = writeln!(s, r##"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="#000000"/>"##);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-family="sans-serif" font-size="11">{hi:.4}</text>"#, y1 - 4.0);
        let _ = writeln!(s, r#"<text x="{x0}" y="{}" font-family="sans-serif" font-size="11">{lo:.4}</text>"#, y0 + 14.0);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">epoch {}</text>"#,
            x1 - 60.0,
            y0 + 14.0,
            curve.len() - 1
        );
    }
    s.push_str("</svg>\n");
    s
}
