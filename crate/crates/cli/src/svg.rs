//! Static SVG line charts. Output depends only on the inputs.

use std::fmt::Write;

use flame_core::evaluation::MetricSeries;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 160.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const PALETTE: [&str; 8] = ["#d62728", "#1f77b4", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn finite_range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.filter(|v| v.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 * lo.abs().max(1.0) {
        return (lo - 1.0, hi + 1.0);
    }
    (lo, hi)
}

/// Tick step from {1, 2, 5} × 10^k giving at most about six ticks.
fn tick_step(lo: f64, hi: f64) -> f64 {
    let raw = (hi - lo) / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0].iter().map(|m| m * mag).find(|s| *s >= raw).unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64) -> (Vec<f64>, usize) {
    let step = tick_step(lo, hi);
    let decimals = (-step.log10().floor()).max(0.0) as usize;
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    ((first..=last).map(|k| k as f64 * step).collect(), decimals)
}

pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, MetricSeries)]) -> String {
    let (x0, x1) = finite_range(series.iter().flat_map(|(_, s)| s.axis.iter().copied()));
    let (y0, y1) = finite_range(series.iter().flat_map(|(_, s)| s.values.iter().copied()));
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut o = String::new();
    let _ = writeln!(o, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(title));
    let _ = writeln!(o, r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#);

    let (xt, xd) = ticks(x0, x1);
    for t in xt {
        let x = sx(t);
        let _ = writeln!(o, r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(o, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t:.xd$}</text>"#, TOP + ph + 18.0);
    }
    let (yt, yd) = ticks(y0, y1);
    for t in yt {
        let y = sy(t);
        let _ = writeln!(o, r#"<line x1="{:.2}" y1="{y:.2}" x2="{LEFT}" y2="{y:.2}" stroke="black"/>"#, LEFT - 5.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{t:.yd$}</text>"#, LEFT - 8.0, y + 4.0);
    }
    let _ = writeln!(o, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, H - 12.0, escape(x_label));
    let _ = writeln!(
        o,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );

    let mut colour = 0;
    for (i, (label, s)) in series.iter().enumerate() {
        let reference = label.starts_with("reference");
        let stroke = if reference {
            "#000000"
        } else {
            colour += 1;
            PALETTE[(colour - 1) % PALETTE.len()]
        };
        let dash = if reference { r#" stroke-dasharray="6 3""# } else { "" };
        // NaN values split the line
        let mut segments: Vec<Vec<(f64, f64)>> = vec![Vec::new()];
        for (x, y) in s.axis.iter().zip(&s.values) {
            if x.is_finite() && y.is_finite() {
                segments.last_mut().unwrap().push((sx(*x), sy(*y)));
            } else if !segments.last().unwrap().is_empty() {
                segments.push(Vec::new());
            }
        }
        for seg in segments.iter().filter(|s| !s.is_empty()) {
            let pts: Vec<String> = seg.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
            let _ = writeln!(o, r#"<polyline fill="none" stroke="{stroke}" stroke-width="1.5"{dash} points="{}"/>"#, pts.join(" "));
        }
        let ly = TOP + 10.0 + 18.0 * i as f64;
        let lx = W - RIGHT + 12.0;
        let _ = writeln!(o, r#"<line x1="{lx}" y1="{ly}" x2="{:.1}" y2="{ly}" stroke="{stroke}" stroke-width="1.5"{dash}/>"#, lx + 24.0);
        let _ = writeln!(o, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, lx + 30.0, ly + 4.0, escape(label));
    }
    o.push_str("</svg>\n");
    o
}

#[cfg(test)]
mod tests {
    use super::*;
    use flame_core::evaluation::MetricKind;

    #[test]
    fn tick_steps() {
        assert_eq!(tick_step(0.0, 1.0), 0.2);
        assert_eq!(tick_step(0.0, 300.0), 100.0);
        assert_eq!(ticks(0.0, 1.0).0.len(), 6);
    }

    #[test]
    fn nan_breaks_the_line() {
        let s = MetricSeries { kind: MetricKind::ErrorCurve, axis: vec![0.0, 1.0, 2.0, 3.0, 4.0], values: vec![0.0, 1.0, f64::NAN, 1.0, 2.0], n_ensemble: 1 };
        let doc = line_plot("t", "x", "y", &[("a<b".into(), s)]);
        assert_eq!(doc.matches("<polyline").count(), 2);
        assert!(doc.contains("a&lt;b"));
    }
}
