//! Static line charts of mean suboptimality, log-scale y.

use std::fmt::Write as _;

use clap::ValueEnum;
use nsaga::bench::{AggregatePoint, MetricsTrace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum XAxis {
    #[value(name = "datapoint_evals")]
    DatapointEvals,
    #[value(name = "gradient_evals")]
    GradientEvals,
}

impl XAxis {
    pub fn name(self) -> &'static str {
        match self {
            XAxis::DatapointEvals => "datapoint_evals",
            XAxis::GradientEvals => "gradient_evals",
        }
    }

    pub fn value(self, p: &AggregatePoint) -> f64 {
        match self {
            XAxis::DatapointEvals => p.datapoint_evals as f64,
            XAxis::GradientEvals => p.mean_gradient_evals,
        }
    }
}

const W: f64 = 860.0;
const H: f64 = 520.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 260.0;
const TOP: f64 = 44.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 10] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

fn esc(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// One polyline per algorithm through the cross-seed mean. Each curve carries
/// its raw values in `data-x` / `data-y`; zero means are drawn at the bottom
/// of the axis.
pub fn render(trace: &MetricsTrace, x: XAxis, title: &str) -> String {
    let curves: Vec<(String, Vec<AggregatePoint>)> = trace
        .algorithms()
        .into_iter()
        .map(|a| (a.clone(), trace.curve(&a)))
        .collect();
    let all = curves.iter().flat_map(|(_, ps)| ps.iter());
    let xmax = all.clone().map(|p| x.value(p)).fold(0.0, f64::max).max(1.0);
    let positive: Vec<f64> = all
        .map(|p| p.mean)
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    let (lo, hi) = if positive.is_empty() {
        (-16.0, 0.0)
    } else {
        let lo = positive
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
            .log10()
            .floor();
        let hi = positive
            .iter()
            .copied()
            .fold(f64::NEG_INFINITY, f64::max)
            .log10()
            .ceil();
        (lo, if hi > lo { hi } else { lo + 1.0 })
    };
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |v: f64| LEFT + pw * v / xmax;
    let py = |v: f64| {
        let e = if v > 0.0 { v.log10().clamp(lo, hi) } else { lo };
        TOP + ph * (hi - e) / (hi - lo)
    };

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="24" font-size="15">{}</text>"#,
        LEFT,
        esc(title)
    );
    let _ = writeln!(
        s,
        r#"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for k in 0..=5 {
        let v = xmax * k as f64 / 5.0;
        let xx = px(v);
        let _ = writeln!(
            s,
            r##"<line x1="{xx:.2}" y1="{}" x2="{xx:.2}" y2="{}" stroke="#ddd"/><text x="{xx:.2}" y="{}" text-anchor="middle">{}</text>"##,
            TOP,
            TOP + ph,
            TOP + ph + 18.0,
            tick_label(v)
        );
    }
    let decades = (hi - lo) as i64;
    let stride = (decades / 10 + 1).max(1);
    let mut e = lo as i64;
    while e <= hi as i64 {
        let yy = py(10f64.powi(e as i32));
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{yy:.2}" x2="{}" y2="{yy:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">1e{e}</text>"##,
            LEFT + pw,
            LEFT - 6.0,
            yy + 4.0
        );
        e += stride;
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
        LEFT + pw / 2.0,
        H - 16.0,
        x.name()
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">mean suboptimality</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    for (k, (alg, ps)) in curves.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = ps
            .iter()
            .map(|p| format!("{:.2},{:.2}", px(x.value(p)), py(p.mean)))
            .collect();
        let xs: Vec<String> = ps.iter().map(|p| x.value(p).to_string()).collect();
        let ys: Vec<String> = ps.iter().map(|p| p.mean.to_string()).collect();
        let _ = writeln!(
            s,
            r#"<polyline class="curve" data-algorithm="{}" data-x="{}" data-y="{}" fill="none" stroke="{color}" stroke-width="1.6" points="{}"/>"#,
            esc(alg),
            xs.join(" "),
            ys.join(" "),
            points.join(" ")
        );
        let ly = TOP + 16.0 + 18.0 * k as f64;
        let lx = LEFT + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
            lx + 22.0,
            lx + 28.0,
            ly + 4.0,
            esc(alg)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(v: f64) -> String {
    if v == 0.0 {
        "0".into()
    } else if v >= 1e4 {
        format!("{v:.2e}")
    } else {
        format!("{}", (v * 100.0).round() / 100.0)
    }
}
