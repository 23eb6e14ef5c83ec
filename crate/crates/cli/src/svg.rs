//! Minimal SVG line plots, written as text.

use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 80.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 50.0;
const TICKS: usize = 5;
/// Series longer than this are drawn without markers.
const MARKER_LIMIT: usize = 64;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    pub fn new(label: impl Into<String>, points: Vec<(f64, f64)>) -> Self {
        Series { label: label.into(), points }
    }
}

#[derive(Debug, Clone)]
pub struct Plot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub series: Vec<Series>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn tick_label(v: f64) -> String {
    if v == 0.0 || (1e-3..1e4).contains(&v.abs()) {
        format!("{}", (v * 1e4).round() / 1e4)
    } else {
        format!("{v:.2e}")
    }
}

/// Padded range; a degenerate range is widened so the plot stays finite.
fn range(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if hi > lo {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    } else {
        let pad = if lo == 0.0 { 0.5 } else { 0.1 * lo.abs() };
        (lo - pad, hi + pad)
    }
}

/// Renders the plot, or `None` when there is nothing to draw. `meta` is
/// embedded verbatim in `<desc>`; `timestamp` (unix seconds) in
/// `<metadata>` when given.
pub fn render(plot: &Plot, meta: &str, timestamp: Option<u64>) -> Option<String> {
    let log_x = plot.log_x && plot.series.iter().flat_map(|s| &s.points).all(|p| p.0 > 0.0);
    let tx = |x: f64| if log_x { x.log10() } else { x };
    let series: Vec<(&str, Vec<(f64, f64)>)> = plot
        .series
        .iter()
        .map(|s| {
            let pts = s.points.iter().filter(|(x, y)| x.is_finite() && y.is_finite()).map(|&(x, y)| (tx(x), y)).collect();
            (s.label.as_str(), pts)
        })
        .collect();
    if series.iter().all(|(_, p)| p.is_empty()) {
        return None;
    }
    let all = || series.iter().flat_map(|(_, p)| p.iter());
    let (x0, x1) = range(all().map(|p| p.0));
    let (y0, y1) = range(all().map(|p| p.1));
    let (pw, ph) = (WIDTH - LEFT - RIGHT, HEIGHT - TOP - BOTTOM);
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(o, "<desc>{}</desc>", escape(meta));
    if let Some(t) = timestamp {
        let _ = writeln!(o, "<metadata>generated_unix={t}</metadata>");
    }
    let _ = writeln!(o, r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(o, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, LEFT + pw / 2.0, escape(&plot.title));
    let _ = writeln!(o, r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##);
    for i in 0..=TICKS {
        let f = i as f64 / TICKS as f64;
        let (xv, yv) = (x0 + f * (x1 - x0), y0 + f * (y1 - y0));
        let (px, py) = (sx(xv), sy(yv));
        let xl = if log_x { format!("1e{:.1}", xv) } else { tick_label(xv) };
        let _ = writeln!(o, r##"<line x1="{px:.2}" y1="{:.2}" x2="{px:.2}" y2="{:.2}" stroke="#333"/>"##, TOP + ph, TOP + ph + 5.0);
        let _ = writeln!(o, r#"<text x="{px:.2}" y="{:.2}" text-anchor="middle">{xl}</text>"#, TOP + ph + 18.0);
        let _ = writeln!(o, r##"<line x1="{:.2}" y1="{py:.2}" x2="{LEFT}" y2="{py:.2}" stroke="#333"/>"##, LEFT - 5.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#, LEFT - 8.0, py + 4.0, tick_label(yv));
    }
    let _ = writeln!(o, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, LEFT + pw / 2.0, HEIGHT - 10.0, escape(&plot.x_label));
    let _ = writeln!(
        o,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(&plot.y_label)
    );
    for (k, (label, pts)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        if pts.len() >= 2 {
            let coords: Vec<String> = pts.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
            let _ = writeln!(o, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, coords.join(" "));
        }
        if pts.len() == 1 || (pts.len() >= 2 && pts.len() <= MARKER_LIMIT) {
            for &(x, y) in pts {
                let _ = writeln!(o, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, sx(x), sy(y));
            }
        }
        let ly = TOP + 14.0 * (k as f64 + 1.0);
        let lx = LEFT + pw + 10.0;
        let _ = writeln!(o, r#"<rect x="{lx}" y="{:.2}" width="10" height="3" fill="{color}"/>"#, ly - 4.0);
        let _ = writeln!(o, r#"<text x="{:.2}" y="{ly:.2}">{}</text>"#, lx + 14.0, escape(label));
    }
    o.push_str("</svg>\n");
    Some(o)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn plot(points: Vec<(f64, f64)>) -> Plot {
        Plot { title: "t".into(), x_label: "x".into(), y_label: "y".into(), log_x: true, series: vec![Series::new("a", points)] }
    }

    #[test]
    fn empty_plot_is_skipped() {
        assert!(render(&plot(vec![]), "", None).is_none());
        assert!(render(&plot(vec![(1.0, f64::NAN)]), "", None).is_none());
    }

    #[test]
    fn single_point_has_one_marker_and_no_line() {
        let s = render(&plot(vec![(10.0, 0.5)]), "m", None).unwrap();
        assert_eq!(s.matches("<circle").count(), 1);
        assert!(!s.contains("<polyline"));
    }

    #[test]
    fn curve_has_a_line_and_timestamp_is_optional() {
        let p = plot(vec![(1.0, 1.0), (10.0, 0.5), (100.0, 0.3)]);
        let a = render(&p, "hash=1 & <seed>", None).unwrap();
        assert_eq!(a.matches("<polyline").count(), 1);
        assert!(a.contains("hash=1 &amp; &lt;seed&gt;"));
        assert!(!a.contains("<metadata>"));
        let b = render(&p, "hash=1 & <seed>", Some(7)).unwrap();
        assert!(b.contains("generated_unix=7"));
        assert_eq!(a, render(&p, "hash=1 & <seed>", None).unwrap());
    }
}
