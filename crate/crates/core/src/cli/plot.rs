//! Minimal SVG charts. Output depends only on the inputs, so re-running a
//! command reproduces the file byte for byte.

use std::fmt::Write as _;

const W: f64 = 640.0;
const H: f64 = 400.0;
const LEFT: f64 = 64.0;
const RIGHT: f64 = 150.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 56.0;
const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn frame(out: &mut String, title: &str, x_label: &str, y_label: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let (x1, y1) = (W - RIGHT, H - BOTTOM);
    let _ = writeln!(
        out,
        r#"<path d="M{LEFT} {TOP} L{LEFT} {y1} L{x1} {y1}" fill="none" stroke="black"/>"#
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        (LEFT + x1) / 2.0,
        H - 14.0,
        escape(x_label)
    );
    let _ = writeln!(
        out,
        r#"<text x="16" y="{:.1}" text-anchor="middle" transform="rotate(-90 16 {:.1})">{}</text>"#,
        (TOP + y1) / 2.0,
        (TOP + y1) / 2.0,
        escape(y_label)
    );
}

fn y_axis(out: &mut String, lo: f64, hi: f64) {
    for k in 0..=4 {
        let v = lo + (hi - lo) * f64::from(k) / 4.0;
        let y = sy(v, lo, hi);
        let _ = writeln!(
            out,
            r#"<line x1="{:.1}" y1="{y:.1}" x2="{LEFT}" y2="{y:.1}" stroke="black"/><text x="{:.1}" y="{:.1}" text-anchor="end">{v:.2}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            y + 4.0
        );
    }
}

fn sy(v: f64, lo: f64, hi: f64) -> f64 {
    let span = if hi > lo { hi - lo } else { 1.0 };
    H - BOTTOM - (v - lo) / span * (H - BOTTOM - TOP)
}

fn legend(out: &mut String, names: &[&str]) {
    for (k, name) in names.iter().enumerate() {
        let y = TOP + 18.0 * k as f64;
        let x = W - RIGHT + 16.0;
        let _ = writeln!(
            out,
            r#"<rect x="{x}" y="{:.1}" width="12" height="12" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            y - 10.0,
            COLORS[k % COLORS.len()],
            x + 18.0,
            y,
            escape(name)
        );
    }
}

/// One polyline per series over a shared x range; y is clamped to
/// `[0, max(1, max y)]`.
pub fn line_plot(title: &str, x_label: &str, y_label: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, x_label, y_label);
    let xs = series.iter().flat_map(|s| s.1.iter().map(|p| p.0));
    let (xlo, xhi) = xs.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    let (xlo, xhi) = if xlo.is_finite() { (xlo, xhi) } else { (0.0, 1.0) };
    let yhi = series
        .iter()
        .flat_map(|s| s.1.iter().map(|p| p.1))
        .fold(1.0f64, f64::max);
    y_axis(&mut out, 0.0, yhi);
    let xspan = if xhi > xlo { xhi - xlo } else { 1.0 };
    let sx = |x: f64| LEFT + (x - xlo) / xspan * (W - RIGHT - LEFT);
    let mut ticks: Vec<f64> = series.iter().flat_map(|s| s.1.iter().map(|p| p.0)).collect();
    ticks.sort_by(f64::total_cmp);
    ticks.dedup();
    for x in ticks {
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{x}</text>"#,
            sx(x),
            H - BOTTOM + 16.0
        );
    }
    for (k, (_, pts)) in series.iter().enumerate() {
        let path: Vec<String> = pts
            .iter()
            .map(|&(x, y)| format!("{:.1},{:.1}", sx(x), sy(y, 0.0, yhi)))
            .collect();
        let color = COLORS[k % COLORS.len()];
        let _ = writeln!(
            out,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for p in &path {
            let (x, y) = p.split_once(',').expect("formatted above");
            let _ = writeln!(out, r#"<circle cx="{x}" cy="{y}" r="3" fill="{color}"/>"#);
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

/// Grouped bars: one group per category, one bar per series.
pub fn bar_plot(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<f64>)]) -> String {
    let mut out = String::new();
    frame(&mut out, title, "", y_label);
    let yhi = series.iter().flat_map(|s| s.1.iter().copied()).fold(1.0f64, f64::max);
    y_axis(&mut out, 0.0, yhi);
    let groups = categories.len().max(1) as f64;
    let group_w = (W - RIGHT - LEFT) / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (g, cat) in categories.iter().enumerate() {
        let gx = LEFT + group_w * g as f64;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            H - BOTTOM + 16.0,
            escape(cat)
        );
        for (k, (_, values)) in series.iter().enumerate() {
            let v = values.get(g).copied().unwrap_or(0.0);
            let y = sy(v, 0.0, yhi);
            let _ = writeln!(
                out,
                r#"<rect x="{:.1}" y="{y:.1}" width="{bar_w:.1}" height="{:.1}" fill="{}"/>"#,
                gx + group_w * 0.1 + bar_w * k as f64,
                H - BOTTOM - y,
                COLORS[k % COLORS.len()]
            );
        }
    }
    let names: Vec<&str> = series.iter().map(|s| s.0.as_str()).collect();
    legend(&mut out, &names);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_plot_has_one_polyline_per_series() {
        let s = vec![
            ("a".to_owned(), vec![(0.0, 0.5), (1.0, 0.4)]),
            ("b<c".to_owned(), vec![(0.0, 0.6), (1.0, 0.6)]),
        ];
        let svg = line_plot("t", "x", "y", &s);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(svg.contains("b&lt;c"));
        assert_eq!(svg, line_plot("t", "x", "y", &s));
    }

    #[test]
    fn bar_plot_draws_every_bar() {
        let svg = bar_plot(
            "h",
            "share",
            &["low".into(), "mid".into()],
            &[("16".into(), vec![0.5, 0.2]), ("64".into(), vec![0.3, 0.4])],
        );
        assert_eq!(svg.matches("<rect x=").count(), 4 + 2);
    }
}
