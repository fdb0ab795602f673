//! Minimal deterministic SVG line charts built from sweep rows.
//!
//! Output depends only on the rows, so charts regenerated from the same CSV
//! are byte-identical.

use std::fmt::Write;

use crate::sweep::{fmt_num, SweepRow};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 55.0;

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];
const DASHES: [&str; 3] = ["", "6 3", "2 3"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    /// `None` breaks the line.
    pub points: Vec<Option<(f64, f64)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Marker {
    pub x: f64,
    pub y: f64,
    pub label: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
    pub marker: Option<Marker>,
}

/// Tick positions at 1, 2 or 5 times a power of ten.
fn ticks(lo: f64, hi: f64, target: usize) -> Vec<f64> {
    let span = (hi - lo).max(1e-12);
    let raw = span / target as f64;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn nice_bounds(lo: f64, hi: f64) -> (f64, f64) {
    let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
    let t = ticks(lo, hi, 5);
    let step = if t.len() > 1 { t[1] - t[0] } else { hi - lo };
    ((lo / step).floor() * step, (hi / step).ceil() * step)
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn label(x: f64) -> String {
    // round away float noise such as 0.30000000000000004
    fmt_num((x * 1e9).round() / 1e9)
}

impl Chart {
    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let pts = self.series.iter().flat_map(|s| s.points.iter().flatten());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
        for &(x, y) in pts {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if !x0.is_finite() {
            return ((0.0, 1.0), (0.0, 1.0));
        }
        (nice_bounds(x0, x1), nice_bounds(y0.min(0.0).max(y0 - (y1 - y0)), y1))
    }

    pub fn to_svg(&self) -> String {
        let ((x0, x1), (y0, y1)) = self.bounds();
        let pw = WIDTH - LEFT - RIGHT;
        let ph = HEIGHT - TOP - BOTTOM;
        let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
        let sy = |y: f64| TOP + ph - (y - y0) / (y1 - y0) * ph;

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
            LEFT + pw / 2.0,
            esc(&self.title)
        );

        // axes and grid
        let _ = writeln!(s, r##"<g stroke="#cccccc" stroke-width="0.5">"##);
        for t in ticks(x0, x1, 6) {
            let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{0:.2}" y2="{2:.2}"/>"#, sx(t), TOP, TOP + ph);
        }
        for t in ticks(y0, y1, 5) {
            let _ = writeln!(s, r#"<line x1="{0:.2}" y1="{1:.2}" x2="{2:.2}" y2="{1:.2}"/>"#, LEFT, sy(t), LEFT + pw);
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<rect x="{LEFT}" y="{TOP}" width="{pw:.2}" height="{ph:.2}" fill="none" stroke="black"/>"#
        );
        for t in ticks(x0, x1, 6) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
                sx(t),
                TOP + ph + 16.0,
                label(t)
            );
        }
        for t in ticks(y0, y1, 5) {
            let _ = writeln!(
                s,
                r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
                LEFT - 6.0,
                sy(t) + 4.0,
                label(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            LEFT + pw / 2.0,
            HEIGHT - 14.0,
            esc(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="18" y="{0:.2}" text-anchor="middle" transform="rotate(-90 18 {0:.2})">{1}</text>"#,
            TOP + ph / 2.0,
            esc(&self.y_label)
        );

        // series, one polyline per unbroken run
        for (i, series) in self.series.iter().enumerate() {
            let color = COLORS[i % COLORS.len()];
            let dash = DASHES[(i / COLORS.len() + i) % DASHES.len()];
            let dash_attr = if dash.is_empty() { String::new() } else { format!(r#" stroke-dasharray="{dash}""#) };
            for run in series.points.split(Option::is_none) {
                let pts: Vec<String> = run
                    .iter()
                    .flatten()
                    .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
                    .collect();
                match pts.len() {
                    0 => {}
                    1 => {
                        let (px, py) = pts[0].split_once(',').expect("point");
                        let _ = writeln!(s, r#"<circle cx="{px}" cy="{py}" r="2" fill="{color}"/>"#);
                    }
                    _ => {
                        let _ = writeln!(
                            s,
                            r#"<polyline fill="none" stroke="{color}" stroke-width="1.8"{dash_attr} points="{}"/>"#,
                            pts.join(" ")
                        );
                    }
                }
            }
            let ly = TOP + 10.0 + 18.0 * i as f64;
            let lx = LEFT + pw + 12.0;
            let _ = writeln!(
                s,
                r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="1.8"{dash_attr}/>"#,
                lx + 24.0
            );
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, lx + 30.0, ly + 4.0, esc(&series.label));
        }

        if let Some(m) = &self.marker {
            let (mx, my) = (sx(m.x), sy(m.y));
            let _ = writeln!(
                s,
                r#"<line x1="{mx:.2}" y1="{TOP}" x2="{mx:.2}" y2="{:.2}" stroke="gray" stroke-dasharray="4 3"/>"#,
                TOP + ph
            );
            let _ = writeln!(s, r#"<circle cx="{mx:.2}" cy="{my:.2}" r="4" fill="none" stroke="black"/>"#);
            let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{}</text>"#, mx + 6.0, TOP + 14.0, esc(&m.label));
        }
        s.push_str("</svg>\n");
        s
    }
}

fn group_by<K: PartialEq + Clone>(rows: &[SweepRow], key: impl Fn(&SweepRow) -> K) -> Vec<(K, Vec<&SweepRow>)> {
    let mut groups: Vec<(K, Vec<&SweepRow>)> = Vec::new();
    for r in rows {
        let k = key(r);
        match groups.iter_mut().find(|(g, _)| *g == k) {
            Some((_, v)) => v.push(r),
            None => groups.push((k, vec![r])),
        }
    }
    groups
}

fn points(rows: &[&SweepRow], y: impl Fn(&SweepRow) -> f64) -> Vec<Option<(f64, f64)>> {
    rows.iter().map(|r| r.active.then(|| (r.mu, y(r)))).collect()
}

/// Which parameter distinguishes the lines of an effort chart.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EffortSeries {
    Delta,
    Beta,
}

/// Equilibrium effort against `mu`, one line per `delta` (or `beta`) level.
pub fn effort_chart(rows: &[SweepRow], by: EffortSeries) -> Chart {
    let (name, key): (&str, fn(&SweepRow) -> f64) = match by {
        EffortSeries::Delta => ("delta", |r| r.delta),
        EffortSeries::Beta => ("beta", |r| r.beta),
    };
    let fixed = match by {
        EffortSeries::Delta => rows.first().map(|r| format!(" (beta = {})", label(r.beta))),
        EffortSeries::Beta => rows.first().map(|r| format!(" (delta = {})", label(r.delta))),
    };
    let series = group_by(rows, |r| key(r).to_bits())
        .into_iter()
        .map(|(k, rs)| Series {
            label: format!("{name} = {}", label(f64::from_bits(k))),
            points: points(&rs, |r| r.effort),
        })
        .collect();
    Chart {
        title: format!("Equilibrium effort by {name}{}", fixed.unwrap_or_default()),
        x_label: "share of high types (mu)".into(),
        y_label: "effort e*".into(),
        series,
        marker: None,
    }
}

/// Where the upper envelope of per-model welfare changes hands, by linear
/// interpolation between adjacent grid points.
pub fn interpolated_switch(rows: &[SweepRow]) -> Option<Marker> {
    let groups = group_by(rows, |r| r.model.clone());
    if groups.len() < 2 {
        return None;
    }
    let n = groups[0].1.len();
    if groups.iter().any(|(_, g)| g.len() != n) {
        return None;
    }
    let leader = |k: usize| -> Option<usize> {
        let mut best: Option<(usize, f64)> = None;
        for (i, (_, g)) in groups.iter().enumerate() {
            let r = g[k];
            if r.active && best.is_none_or(|(_, w)| r.welfare > w) {
                best = Some((i, r.welfare));
            }
        }
        best.map(|(i, _)| i)
    };
    for k in 1..n {
        let (Some(i), Some(j)) = (leader(k - 1), leader(k)) else {
            continue;
        };
        if i == j {
            continue;
        }
        let (a0, a1) = (groups[i].1[k - 1], groups[i].1[k]);
        let (b0, b1) = (groups[j].1[k - 1], groups[j].1[k]);
        let d0 = b0.welfare - a0.welfare;
        let d1 = b1.welfare - a1.welfare;
        let t = if d1 != d0 { (-d0 / (d1 - d0)).clamp(0.0, 1.0) } else { 0.5 };
        let x = a0.mu + t * (a1.mu - a0.mu);
        let y = a0.welfare + t * (a1.welfare - a0.welfare);
        return Some(Marker {
            x,
            y,
            label: format!("{} to {} at mu = {:.3}", groups[i].0, groups[j].0, x),
        });
    }
    None
}

/// Welfare against `mu`, one line per model solved on its own, with the
/// switch of the welfare-leading model marked.
pub fn welfare_chart(rows: &[SweepRow]) -> Chart {
    let series = group_by(rows, |r| r.model.clone())
        .into_iter()
        .map(|(m, rs)| Series {
            label: format!("model {m}"),
            points: points(&rs, |r| r.welfare),
        })
        .collect();
    let marker = interpolated_switch(rows);
    if marker.is_none() {
        log::warn!("welfare lines do not cross on this grid");
    }
    let fixed = rows
        .first()
        .map(|r| format!(" (delta = {}, beta = {})", label(r.delta), label(r.beta)))
        .unwrap_or_default();
    Chart {
        title: format!("Total welfare by model{fixed}"),
        x_label: "share of high types (mu)".into(),
        y_label: "welfare W".into(),
        series,
        marker,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::Scenario;
    use crate::sweep::figure_data;

    #[test]
    fn tick_steps() {
        assert_eq!(ticks(0.0, 1.0, 5), vec![0.0, 0.2, 0.4, 0.6000000000000001, 0.8, 1.0]);
        assert_eq!(ticks(0.0, 2.3, 5).len(), 5);
        assert_eq!(nice_bounds(0.02, 0.98), (0.0, 1.0));
    }

    #[test]
    fn charts_are_deterministic_and_well_formed() {
        let mut s = Scenario::baseline();
        s.figures.mu_grid = (1..10).map(|i| i as f64 / 10.0).collect();
        let data = figure_data(&s).unwrap();
        let a = effort_chart(&data.effort_by_delta, EffortSeries::Delta);
        assert_eq!(a.series.len(), 3);
        let svg = a.to_svg();
        assert_eq!(svg, effort_chart(&data.effort_by_delta, EffortSeries::Delta).to_svg());
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert!(svg.contains("delta = 0.85"));

        let w = welfare_chart(&data.welfare_by_model);
        let m = w.marker.as_ref().expect("crossing");
        assert!(m.x > 0.2 && m.x < 0.3, "{}", m.x);
        assert!(w.to_svg().contains("A to B"));
    }

    #[test]
    fn inactive_points_break_lines() {
        let row = |mu: f64, active: bool| SweepRow {
            mu,
            delta: 0.9,
            beta: 0.7,
            model: "A".into(),
            effort: 1.0,
            price: 0.3,
            hallucination: 0.1,
            welfare: 1.0,
            v_high: 1.0,
            v_low: 0.0,
            delta_lower: None,
            binding: crate::model::Binding::Low,
            active,
        };
        let rows = vec![row(0.1, true), row(0.2, true), row(0.3, false), row(0.4, true), row(0.5, true)];
        let svg = effort_chart(&rows, EffortSeries::Delta).to_svg();
        assert_eq!(svg.matches("<polyline").count(), 2);
    }
}
