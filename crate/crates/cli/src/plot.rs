//! Minimal SVG line charts for sweep results.

use edgepose_core::format_float as ff;
use edgepose_core::sim::SweepRow;
use edgepose_core::Strategy;

const PANEL_W: f64 = 420.0;
const PANEL_H: f64 = 300.0;
const MARGIN: f64 = 55.0;
const TICKS: usize = 5;

fn colour(s: Strategy) -> &'static str {
    match s {
        Strategy::DeviceCentric => "#1f77b4",
        Strategy::ServerCentric => "#d62728",
        Strategy::Cascade => "#2ca02c",
        Strategy::Cooperative => "#ff7f0e",
    }
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
            (a.min(v), b.max(v))
        });
    if !lo.is_finite() {
        (0.0, 1.0)
    } else if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Points are `(x, y, feasible)`; infeasible points are drawn hollow.
struct Series {
    strategy: Strategy,
    points: Vec<(f64, f64, bool)>,
}

fn panel(out: &mut String, x0: f64, title: &str, x_label: &str, series: &[Series]) {
    let all = || series.iter().flat_map(|s| s.points.iter());
    let (xmin, xmax) = range(all().map(|p| p.0));
    let (ymin, ymax) = range(all().map(|p| p.1));
    let w = PANEL_W - 2.0 * MARGIN;
    let h = PANEL_H - 2.0 * MARGIN;
    let sx = |x: f64| x0 + MARGIN + (x - xmin) / (xmax - xmin) * w;
    let sy = |y: f64| MARGIN + h - (y - ymin) / (ymax - ymin) * h;

    out.push_str(&format!(
        "<rect x=\"{}\" y=\"{MARGIN}\" width=\"{w}\" height=\"{h}\" fill=\"none\" stroke=\"#444\"/>\n",
        x0 + MARGIN
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{title}</text>\n",
        x0 + PANEL_W / 2.0,
        MARGIN - 15.0
    ));
    out.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{x_label}</text>\n",
        x0 + PANEL_W / 2.0,
        PANEL_H - 10.0
    ));
    for k in 0..TICKS {
        let f = k as f64 / (TICKS - 1) as f64;
        let xv = xmin + f * (xmax - xmin);
        let yv = ymin + f * (ymax - ymin);
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"middle\">{}</text>\n",
            sx(xv),
            MARGIN + h + 14.0,
            ff((xv * 1e4).round() / 1e4)
        ));
        out.push_str(&format!(
            "<text x=\"{:.2}\" y=\"{:.2}\" font-size=\"10\" text-anchor=\"end\">{}</text>\n",
            x0 + MARGIN - 4.0,
            sy(yv) + 3.0,
            ff((yv * 1e4).round() / 1e4)
        ));
    }
    for s in series {
        let c = colour(s.strategy);
        let pts: Vec<String> = s
            .points
            .iter()
            .filter(|p| p.1.is_finite())
            .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
            .collect();
        if pts.len() > 1 {
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{c}\" stroke-width=\"2\" points=\"{}\"/>\n",
                pts.join(" ")
            ));
        }
        for p in s.points.iter().filter(|p| p.1.is_finite()) {
            let fill = if p.2 { c } else { "white" };
            out.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"3\" fill=\"{fill}\" stroke=\"{c}\"/>\n",
                sx(p.0),
                sy(p.1)
            ));
        }
    }
}

/// Two panels against the axis value: MPJPE (summed accuracy when not
/// simulated) and mean delay.
pub fn sweep_svg(axis: &str, rows: &[SweepRow], simulated: bool) -> String {
    let mut strategies: Vec<Strategy> = Vec::new();
    for r in rows {
        if !strategies.contains(&r.strategy) {
            strategies.push(r.strategy);
        }
    }
    let collect = |f: &dyn Fn(&SweepRow) -> f64| -> Vec<Series> {
        strategies
            .iter()
            .map(|&s| Series {
                strategy: s,
                points: rows
                    .iter()
                    .filter(|r| r.strategy == s)
                    .map(|r| (r.axis_value, f(r), r.feasible))
                    .collect(),
            })
            .collect()
    };
    let (left_title, left) = if simulated {
        ("MPJPE (m)", collect(&|r| r.mpjpe_m))
    } else {
        ("sum of accuracies", collect(&|r| r.sum_accuracy))
    };
    let right = collect(&|r| r.delay_s);

    let width = 2.0 * PANEL_W;
    let legend_h = 20.0 * strategies.len() as f64 + 10.0;
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{}\" font-family=\"sans-serif\" font-size=\"12\">\n",
        PANEL_H + legend_h
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    panel(&mut out, 0.0, left_title, axis, &left);
    panel(&mut out, PANEL_W, "mean delay (s)", axis, &right);
    for (k, s) in strategies.iter().enumerate() {
        let y = PANEL_H + 15.0 + 20.0 * k as f64;
        out.push_str(&format!(
            "<line x1=\"{MARGIN}\" y1=\"{y}\" x2=\"{}\" y2=\"{y}\" stroke=\"{}\" stroke-width=\"2\"/>\n",
            MARGIN + 25.0,
            colour(*s)
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\">{}</text>\n",
            MARGIN + 32.0,
            y + 4.0,
            s.name()
        ));
    }
    out.push_str("</svg>\n");
    out
}
