use std::fmt::Write as _;

use crate::roar::DeletionCurve;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 24.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 52.0;

/// Validation metric against fraction removed, with a dashed baseline rule.
/// Identical curves give identical bytes.
pub fn curve_svg(curve: &DeletionCurve, title: &str) -> String {
    let baseline = curve.baseline().value;
    let points: Vec<(f64, f64)> = curve
        .records
        .iter()
        .map(|r| (curve.fraction_removed(r), r.validation.value))
        .collect();
    let (mut lo, mut hi) = points
        .iter()
        .fold((baseline, baseline), |(lo, hi), &(_, y)| (lo.min(y), hi.max(y)));
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let pad = 0.05 * (hi - lo);
    let (lo, hi) = (lo - pad, hi + pad);
    let px = |x: f64| LEFT + x * (W - LEFT - RIGHT);
    let py = |y: f64| TOP + (hi - y) / (hi - lo) * (H - TOP - BOTTOM);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{:.1}" y="24" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, escape(title));
    let (x0, x1, y0, y1) = (px(0.0), px(1.0), py(lo), py(hi));
    let _ = writeln!(s, r#"<path d="M{x0:.1},{y1:.1}V{y0:.1}H{x1:.1}" fill="none" stroke="black"/>"#);
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let x = px(f);
        let _ = writeln!(s, r#"<line x1="{x:.1}" y1="{y0:.1}" x2="{x:.1}" y2="{:.1}" stroke="black"/>"#, y0 + 5.0);
        let _ = writeln!(s, r#"<text x="{x:.1}" y="{:.1}" text-anchor="middle">{f:.2}</text>"#, y0 + 18.0);
        let v = lo + f * (hi - lo);
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{y:.1}" x2="{x0:.1}" y2="{y:.1}" stroke="black"/>"#, x0 - 5.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, x0 - 8.0, y + 4.0);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">fraction removed</text>"#, (x0 + x1) / 2.0, H - 12.0);
    let metric = format!("{:?}", curve.baseline().kind).to_lowercase();
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{:.1}) rotate(-90)" text-anchor="middle">validation {metric}</text>"#,
        (y0 + y1) / 2.0
    );
    let yb = py(baseline);
    let _ = writeln!(
        s,
        r#"<line x1="{x0:.1}" y1="{yb:.1}" x2="{x1:.1}" y2="{yb:.1}" stroke="gray" stroke-dasharray="6 4"/>"#
    );
    let path: Vec<String> = points.iter().map(|&(x, y)| format!("{:.1},{:.1}", px(x), py(y))).collect();
    let _ = writeln!(s, r#"<polyline points="{}" fill="none" stroke="steelblue" stroke-width="2"/>"#, path.join(" "));
    for &(x, y) in &points {
        let _ = writeln!(s, r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#, px(x), py(y));
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
