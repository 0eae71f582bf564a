//! SVG line charts of simulation metrics.
//!
//! Rows are grouped by everything in the cell except `n`; each group gets
//! one chart per metric, with `n` on a categorical x axis and one line per
//! method surrounded by a +/- 1 SE band.

use std::fmt::Write;

use card_core::simulation::{RunMetrics, Summary};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 170.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;

const PALETTE: [&str; 8] = [
    "#1b6ca8", "#d1495b", "#2e933c", "#edae49", "#6c4f9e", "#00798c", "#8c564b", "#555555",
];

#[derive(Clone, Copy, PartialEq, Eq)]
enum Metric {
    Fdr,
    Power,
    CondNullRej,
}

impl Metric {
    const ALL: [Metric; 3] = [Metric::Fdr, Metric::Power, Metric::CondNullRej];

    fn key(self) -> &'static str {
        match self {
            Metric::Fdr => "fdr",
            Metric::Power => "power",
            Metric::CondNullRej => "cond_null_rej",
        }
    }

    fn label(self) -> &'static str {
        match self {
            Metric::Fdr => "FDR",
            Metric::Power => "Power",
            Metric::CondNullRej => "Conditional-null rejection rate",
        }
    }

    fn get(self, m: &RunMetrics) -> Summary {
        match self {
            Metric::Fdr => m.fdr,
            Metric::Power => m.power,
            Metric::CondNullRej => m.cond_null_rej,
        }
    }
}

fn same_group(a: &RunMetrics, b: &RunMetrics) -> bool {
    let (x, y) = (&a.cell, &b.cell);
    x.scenario == y.scenario
        && x.p == y.p
        && x.rho == y.rho
        && x.sigma == y.sigma
        && x.signal == y.signal
        && x.alpha == y.alpha
        && x.seed == y.seed
}

fn group_stem(m: &RunMetrics) -> String {
    let c = &m.cell;
    let rho = format!("{}", c.rho).replace('.', "_");
    let sign = if c.signal < 0 { "neg" } else { "pos" };
    format!("{}_p{}_rho{}_{}_{}", c.scenario.name(), c.p, rho, c.sigma.name(), sign)
}

fn group_title(m: &RunMetrics) -> String {
    let c = &m.cell;
    format!(
        "{}  p={}  rho={}  sigma={}  r={:+}  alpha={}",
        c.scenario.name(),
        c.p,
        c.rho,
        c.sigma.name(),
        c.signal,
        c.alpha
    )
}

/// Returns `(file name, svg)` pairs in a deterministic order. Metrics with
/// no values in a group are skipped.
pub fn render_all(metrics: &[RunMetrics]) -> Vec<(String, String)> {
    let mut groups: Vec<Vec<&RunMetrics>> = Vec::new();
    for m in metrics {
        match groups.iter_mut().find(|g| same_group(g[0], m)) {
            Some(g) => g.push(m),
            None => groups.push(vec![m]),
        }
    }
    let mut out = Vec::new();
    for g in &groups {
        for metric in Metric::ALL {
            if g.iter().all(|m| metric.get(m).mean.is_none()) {
                continue;
            }
            let name = format!("{}_{}.svg", group_stem(g[0]), metric.key());
            out.push((name, render(g, metric)));
        }
    }
    out
}

fn render(rows: &[&RunMetrics], metric: Metric) -> String {
    let mut ns: Vec<usize> = rows.iter().map(|m| m.cell.n).collect();
    ns.sort_unstable();
    ns.dedup();
    let mut methods = Vec::new();
    for m in rows {
        if !methods.contains(&m.method) {
            methods.push(m.method);
        }
    }

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let x_at = |i: usize| LEFT + plot_w * (i as f64 + 0.5) / ns.len() as f64;
    let y_at = |v: f64| TOP + plot_h * (1.0 - v.clamp(0.0, 1.0));

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let c = &rows[0].cell;
    let _ = writeln!(
        s,
        "<desc>metric={} seed={} scenario={} p={} rho={} sigma={} signal={} alpha={}</desc>",
        metric.key(),
        c.seed,
        c.scenario.name(),
        c.p,
        c.rho,
        c.sigma.name(),
        c.signal,
        c.alpha
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&group_title(rows[0]))
    );

    for k in 0..=5 {
        let v = k as f64 / 5.0;
        let y = y_at(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#e0e0e0"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.1}</text>"#,
            LEFT - 6.0,
            y + 4.0
        );
    }
    for (i, n) in ns.iter().enumerate() {
        let x = x_at(i);
        let _ = writeln!(
            s,
            r##"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="#444"/>"##,
            TOP + plot_h,
            TOP + plot_h + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{n}</text>"#,
            TOP + plot_h + 18.0
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">n</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + plot_h / 2.0,
        TOP + plot_h / 2.0,
        metric.label()
    );

    if metric == Metric::Fdr {
        let y = y_at(rows[0].cell.alpha);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#000" stroke-dasharray="5,4"/>"##,
            LEFT + plot_w
        );
    }

    for (mi, method) in methods.iter().enumerate() {
        let color = PALETTE[mi % PALETTE.len()];
        let points: Vec<(f64, f64, f64)> = ns
            .iter()
            .enumerate()
            .filter_map(|(i, &n)| {
                let row = rows.iter().find(|m| m.method == *method && m.cell.n == n)?;
                let sm = metric.get(row);
                sm.mean.map(|v| (x_at(i), v, sm.se.unwrap_or(0.0)))
            })
            .collect();
        if points.is_empty() {
            continue;
        }
        if points.len() > 1 {
            let mut band = String::new();
            for &(x, v, se) in &points {
                let _ = write!(band, "{x:.2},{:.2} ", y_at(v + se));
            }
            for &(x, v, se) in points.iter().rev() {
                let _ = write!(band, "{x:.2},{:.2} ", y_at(v - se));
            }
            let _ = writeln!(
                s,
                r#"<polygon points="{}" fill="{color}" fill-opacity="0.15" stroke="none"/>"#,
                band.trim_end()
            );
            let line: Vec<String> = points.iter().map(|&(x, v, _)| format!("{x:.2},{:.2}", y_at(v))).collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                line.join(" ")
            );
        } else {
            let (x, v, se) = points[0];
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{:.2}" x2="{x:.2}" y2="{:.2}" stroke="{color}" stroke-width="2"/>"#,
                y_at(v + se),
                y_at(v - se)
            );
        }
        for &(x, v, _) in &points {
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, y_at(v));
        }
        let ly = TOP + 10.0 + 20.0 * mi as f64;
        let lx = WIDTH - RIGHT + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/>"#,
            lx + 22.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 28.0,
            ly + 4.0,
            escape(method.name())
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
