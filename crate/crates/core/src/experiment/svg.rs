//! Minimal grouped-bar SVG charts: axes, ticks, bars, error bars, legend.

use std::fmt::Write;

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 180.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 8] = [
    "#4c72b0", "#dd8452", "#55a868", "#c44e52", "#8172b3", "#937860", "#da8bc3", "#8c8c8c",
];

#[derive(Debug, Clone, PartialEq)]
pub struct BarSeries {
    pub name: String,
    /// `(mean, standard error)` per category; `None` leaves a gap.
    pub values: Vec<Option<(f64, Option<f64>)>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BarChart {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub categories: Vec<String>,
    pub series: Vec<BarSeries>,
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// Tick step of 1, 2 or 5 times a power of ten giving about five ticks.
fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let norm = raw / mag;
    let m = if norm <= 1.0 {
        1.0
    } else if norm <= 2.0 {
        2.0
    } else if norm <= 5.0 {
        5.0
    } else {
        10.0
    };
    m * mag
}

fn fmt_tick(v: f64, step: f64) -> String {
    let digits = (-step.log10().floor()).max(0.0) as usize;
    format!("{v:.digits$}")
}

pub fn bar_chart_svg(chart: &BarChart) -> String {
    let points = chart
        .series
        .iter()
        .flat_map(|s| s.values.iter().flatten())
        .filter(|(m, _)| m.is_finite());
    let (mut lo, mut hi) = (0.0f64, 0.0f64);
    for &(m, se) in points {
        let e = se.filter(|e| e.is_finite()).unwrap_or(0.0);
        lo = lo.min(m - e);
        hi = hi.max(m + e);
    }
    if hi - lo < 1e-12 {
        hi = lo + 1.0;
    }
    let step = nice_step(hi - lo);
    let lo = (lo / step).floor() * step;
    let hi = (hi / step).ceil() * step;

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(
        s,
        r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{}" y="22" text-anchor="middle" font-size="15">{}</text>"#,
        LEFT + plot_w / 2.0,
        escape(&chart.title)
    );

    // Grid and y ticks.
    let n_ticks = ((hi - lo) / step).round() as i64;
    for k in 0..=n_ticks {
        let v = lo + k as f64 * step;
        let py = y(v);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e0e0e0"/>"##,
            LEFT + plot_w
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            fmt_tick(v, step)
        );
    }
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        TOP + plot_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        y(0.0),
        LEFT + plot_w,
        y(0.0)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.2}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        escape(&chart.y_label)
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 12.0,
        escape(&chart.x_label)
    );

    let n_cat = chart.categories.len().max(1) as f64;
    let n_ser = chart.series.len().max(1) as f64;
    let group_w = plot_w / n_cat;
    let bar_w = group_w * 0.8 / n_ser;
    for (ci, cat) in chart.categories.iter().enumerate() {
        let gx = LEFT + group_w * ci as f64;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            gx + group_w / 2.0,
            TOP + plot_h + 18.0,
            escape(cat)
        );
        for (si, series) in chart.series.iter().enumerate() {
            let Some(Some((m, se))) = series.values.get(ci) else {
                continue;
            };
            if !m.is_finite() {
                continue;
            }
            let color = PALETTE[si % PALETTE.len()];
            let x0 = gx + group_w * 0.1 + bar_w * si as f64;
            let (top, bottom) = (y(m.max(0.0)), y(m.min(0.0)));
            let _ = writeln!(
                s,
                r#"<rect x="{x0:.2}" y="{top:.2}" width="{:.2}" height="{:.2}" fill="{color}"><title>{}: {m}</title></rect>"#,
                bar_w,
                (bottom - top).max(0.0),
                escape(&series.name)
            );
            if let Some(e) = se.filter(|e| e.is_finite() && *e > 0.0) {
                let cx = x0 + bar_w / 2.0;
                let (ya, yb) = (y(m + e), y(m - e));
                let cap = bar_w * 0.25;
                let _ = writeln!(
                    s,
                    r#"<path d="M{cx:.2} {ya:.2}V{yb:.2}M{:.2} {ya:.2}H{:.2}M{:.2} {yb:.2}H{:.2}" stroke="black" fill="none"/>"#,
                    cx - cap,
                    cx + cap,
                    cx - cap,
                    cx + cap
                );
            }
        }
    }

    let lx = WIDTH - RIGHT + 16.0;
    for (si, series) in chart.series.iter().enumerate() {
        let ly = TOP + 8.0 + 20.0 * si as f64;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.2}" y="{ly:.2}" width="12" height="12" fill="{}"/>"#,
            PALETTE[si % PALETTE.len()]
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            ly + 10.0,
            escape(&series.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chart(se: Option<f64>) -> BarChart {
        BarChart {
            title: "t <1>".into(),
            x_label: "beta".into(),
            y_label: "gain".into(),
            categories: vec!["0.5".into(), "1".into()],
            series: vec![
                BarSeries {
                    name: "a".into(),
                    values: vec![Some((0.3, se)), Some((-0.1, se))],
                },
                BarSeries {
                    name: "b".into(),
                    values: vec![None, Some((0.7, se))],
                },
            ],
        }
    }

    #[test]
    fn renders_bars_legend_and_error_bars() {
        let svg = bar_chart_svg(&chart(Some(0.05)));
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<rect x=").count(), 3 + 2);
        assert_eq!(svg.matches("<path").count(), 3);
        assert!(svg.contains("t &lt;1&gt;"));
    }

    #[test]
    fn no_error_bars_without_se() {
        let svg = bar_chart_svg(&chart(None));
        assert_eq!(svg.matches("<path").count(), 0);
    }

    #[test]
    fn tick_steps() {
        for (span, step) in [(1.0, 0.2), (7.0, 2.0), (0.03, 0.01)] {
            assert!((nice_step(span) - step).abs() < 1e-12 * step);
        }
        assert_eq!(fmt_tick(0.2, 0.2), "0.2");
    }
}
