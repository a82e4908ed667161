//! Minimal SVG line charts for result curves.

use std::fmt::Write as _;

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

/// Chart layout options.
#[derive(Debug, Clone, PartialEq)]
pub struct Chart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub log_x: bool,
    pub width: f64,
    pub height: f64,
}

impl Default for Chart {
    fn default() -> Self {
        Self {
            title: String::new(),
            x_label: String::new(),
            y_label: String::new(),
            log_x: false,
            width: 640.0,
            height: 400.0,
        }
    }
}

const COLORS: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];
const MARGIN: (f64, f64, f64, f64) = (60.0, 20.0, 40.0, 50.0);

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn fmt_tick(v: f64) -> String {
    let s = format!("{v:.3}");
    s.trim_end_matches('0').trim_end_matches('.').to_string()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Renders `series` as a standalone SVG document. Non-finite points and,
/// with a log x axis, non-positive x values are skipped.
pub fn line_chart_svg(chart: &Chart, series: &[Series]) -> String {
    let tx = |x: f64| if chart.log_x { x.log10() } else { x };
    let usable = |&(x, y): &(f64, f64)| {
        x.is_finite() && y.is_finite() && (!chart.log_x || x > 0.0)
    };
    let pts = || series.iter().flat_map(|s| s.points.iter().filter(|p| usable(p)));
    let (x0, x1) = range(pts().map(|p| tx(p.0)));
    let (y0, y1) = range(pts().map(|p| p.1));
    let (ml, mr, mt, mb) = MARGIN;
    let (pw, ph) = (chart.width - ml - mr, chart.height - mt - mb);
    let sx = |x: f64| ml + (tx(x) - x0) / (x1 - x0) * pw;
    let sy = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * ph;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{}" height="{}" viewBox="0 0 {} {}">"#,
        chart.width, chart.height, chart.width, chart.height
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="20" text-anchor="middle" font-family="sans-serif" font-size="14">{}</text>"#,
        chart.width / 2.0,
        escape(&chart.title)
    );
    let _ = writeln!(
        svg,
        r#"<rect x="{ml}" y="{mt}" width="{pw}" height="{ph}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let f = i as f64 / 4.0;
        let yv = y0 + f * (y1 - y0);
        let y = sy(yv);
        let _ = writeln!(
            svg,
            r##"<line x1="{ml}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end" font-family="sans-serif" font-size="10">{}</text>"##,
            ml + pw,
            ml - 4.0,
            y + 3.0,
            fmt_tick(yv)
        );
        let xt = x0 + f * (x1 - x0);
        let xv = if chart.log_x { 10f64.powf(xt) } else { xt };
        let x = ml + f * pw;
        let _ = writeln!(
            svg,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="10">{}</text>"#,
            mt + ph + 14.0,
            fmt_tick(xv)
        );
    }
    let _ = writeln!(
        svg,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12">{}</text>"#,
        ml + pw / 2.0,
        chart.height - 10.0,
        escape(&chart.x_label)
    );
    let _ = writeln!(
        svg,
        r#"<text x="14" y="{:.2}" text-anchor="middle" font-family="sans-serif" font-size="12" transform="rotate(-90 14 {:.2})">{}</text>"#,
        mt + ph / 2.0,
        mt + ph / 2.0,
        escape(&chart.y_label)
    );
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let mut points: Vec<(f64, f64)> = s.points.iter().copied().filter(usable).collect();
        points.sort_by(|a, b| a.0.total_cmp(&b.0));
        let path: Vec<String> = points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let _ = writeln!(
            svg,
            r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
            path.join(" ")
        );
        for &(x, y) in &points {
            let _ = writeln!(
                svg,
                r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#,
                sx(x),
                sy(y)
            );
        }
        let ly = mt + 14.0 + 16.0 * i as f64;
        let _ = writeln!(
            svg,
            r#"<line x1="{:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{color}" stroke-width="2"/><text x="{:.2}" y="{:.2}" font-family="sans-serif" font-size="11">{}</text>"#,
            ml + 10.0,
            ml + 30.0,
            ml + 35.0,
            ly + 4.0,
            escape(&s.name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn renders_each_series_and_is_deterministic() {
        let series = vec![
            Series {
                name: "pretrained".into(),
                points: vec![(0.01, 0.4), (0.1, 0.6), (1.0, 0.8)],
            },
            Series {
                name: "a<b".into(),
                points: vec![(1.0, 0.7), (0.1, 0.3), (0.0, 0.1), (0.5, f64::NAN)],
            },
        ];
        let chart = Chart {
            log_x: true,
            ..Chart::default()
        };
        let svg = line_chart_svg(&chart, &series);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert_eq!(svg.matches("<circle").count(), 5);
        assert!(svg.contains("a&lt;b"));
        assert!(!svg.contains("NaN"));
        assert_eq!(svg, line_chart_svg(&chart, &series));
    }

    #[test]
    fn empty_chart_is_valid() {
        let svg = line_chart_svg(&Chart::default(), &[]);
        assert!(svg.contains("</svg>"));
        assert!(!svg.contains("NaN") && !svg.contains("inf"));
    }
}
