//! Deterministic SVG line charts from evaluation rows: return versus ε on
//! a log-scaled axis with ε = 0 pinned as the leftmost tick, mean ± std
//! whiskers, one series per norm (white-box figures) or per transfer mode
//! (transfer figures).
//!
//! The renderer is plain string assembly over already-aggregated numbers,
//! so identical input rows always produce identical bytes.

use crate::eval::EvalRow;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN_LEFT: f64 = 62.0;
const MARGIN_RIGHT: f64 = 20.0;
const MARGIN_TOP: f64 = 46.0;
const MARGIN_BOTTOM: f64 = 56.0;
/// Fraction of the x axis reserved between the pinned ε = 0 tick and the
/// smallest positive ε.
const ZERO_GAP: f64 = 0.12;

const COLOR_AXIS: &str = "#333333";
const COLOR_GRID: &str = "#dddddd";

fn series_color(label: &str) -> &'static str {
    match label {
        "linf" => "#1f77b4",
        "l2" => "#2ca02c",
        "l1" => "#d62728",
        "none" => "#1f77b4",
        "policy" => "#ff7f0e",
        "algorithm" => "#9467bd",
        _ => "#7f7f7f",
    }
}

/// One line on a chart: (ε, mean, whisker) triples in ascending ε order.
#[derive(Debug, Clone)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64, f64)>,
}

fn fmt2(v: f64) -> String {
    format!("{v:.2}")
}

/// Shortest decimal label for an ε tick.
fn eps_label(eps: f64) -> String {
    format!("{eps}")
}

struct XScale {
    /// log10 range of the positive ε values, when any exist.
    log_range: Option<(f64, f64)>,
    plot_left: f64,
    plot_width: f64,
}

impl XScale {
    fn new(epsilons: &BTreeSet<u64>) -> Self {
        let positives: Vec<f64> = epsilons
            .iter()
            .map(|&b| f64::from_bits(b))
            .filter(|&e| e > 0.0)
            .collect();
        let log_range = match (positives.first(), positives.last()) {
            (Some(&lo), Some(&hi)) => Some((lo.log10(), hi.log10())),
            _ => None,
        };
        XScale {
            log_range,
            plot_left: MARGIN_LEFT,
            plot_width: WIDTH - MARGIN_LEFT - MARGIN_RIGHT,
        }
    }

    fn x(&self, eps: f64) -> f64 {
        let gap = self.plot_width * ZERO_GAP;
        match self.log_range {
            None => self.plot_left + self.plot_width / 2.0,
            Some((lo, hi)) => {
                if eps <= 0.0 {
                    return self.plot_left;
                }
                let span = hi - lo;
                if span <= 0.0 {
                    return self.plot_left + gap + (self.plot_width - gap) / 2.0;
                }
                self.plot_left + gap + (eps.log10() - lo) / span * (self.plot_width - gap)
            }
        }
    }
}

fn nice_step(range: f64, target_ticks: usize) -> f64 {
    let raw = range / target_ticks.max(1) as f64;
    let magnitude = 10f64.powf(raw.log10().floor());
    let candidates = [1.0, 2.0, 5.0, 10.0];
    for c in candidates {
        if c * magnitude >= raw {
            return c * magnitude;
        }
    }
    10.0 * magnitude
}

/// Render one line chart. Whiskers span mean ± std at each point.
pub fn line_chart(title: &str, y_label: &str, series: &[Series]) -> String {
    let mut epsilons = BTreeSet::new();
    let mut y_min = f64::INFINITY;
    let mut y_max = f64::NEG_INFINITY;
    for s in series {
        for &(e, mean, std) in &s.points {
            epsilons.insert(e.to_bits());
            y_min = y_min.min(mean - std);
            y_max = y_max.max(mean + std);
        }
    }
    if !y_min.is_finite() || !y_max.is_finite() {
        y_min = 0.0;
        y_max = 1.0;
    }
    if y_max - y_min < 1e-9 {
        y_min -= 1.0;
        y_max += 1.0;
    }
    let pad = (y_max - y_min) * 0.06;
    y_min -= pad;
    y_max += pad;

    let xs = XScale::new(&epsilons);
    let plot_top = MARGIN_TOP;
    let plot_height = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let plot_bottom = plot_top + plot_height;
    let y = |v: f64| plot_bottom - (v - y_min) / (y_max - y_min) * plot_height;

    let mut svg = String::new();
    let _ = write!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" width="{WIDTH}" height="{HEIGHT}">"#
    );
    svg.push_str(r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = write!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15" fill="{COLOR_AXIS}">{}</text>"#,
        fmt2(WIDTH / 2.0),
        escape(title)
    );

    // horizontal grid and y tick labels
    let step = nice_step(y_max - y_min, 5);
    let mut tick = (y_min / step).ceil() * step;
    while tick <= y_max {
        let ty = y(tick);
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{COLOR_GRID}" stroke-width="1"/>"#,
            fmt2(xs.plot_left),
            fmt2(ty),
            fmt2(xs.plot_left + xs.plot_width),
            fmt2(ty)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="end" font-family="sans-serif" font-size="11" fill="{COLOR_AXIS}">{}</text>"#,
            fmt2(xs.plot_left - 6.0),
            fmt2(ty + 4.0),
            fmt2(tick)
        );
        tick += step;
    }

    // x ticks: one per distinct ε, log-spaced with ε = 0 pinned left
    for &bits in &epsilons {
        let eps = f64::from_bits(bits);
        let tx = xs.x(eps);
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{COLOR_AXIS}" stroke-width="1"/>"#,
            fmt2(tx),
            fmt2(plot_bottom),
            fmt2(tx),
            fmt2(plot_bottom + 4.0)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="10" fill="{COLOR_AXIS}" transform="rotate(35 {} {})">{}</text>"#,
            fmt2(tx),
            fmt2(plot_bottom + 16.0),
            fmt2(tx),
            fmt2(plot_bottom + 16.0),
            eps_label(eps)
        );
    }

    // axes
    let _ = write!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{COLOR_AXIS}" stroke-width="1.5"/>"#,
        fmt2(xs.plot_left),
        fmt2(plot_bottom),
        fmt2(xs.plot_left + xs.plot_width),
        fmt2(plot_bottom)
    );
    let _ = write!(
        svg,
        r#"<line x1="{}" y1="{}" x2="{}" y2="{}" stroke="{COLOR_AXIS}" stroke-width="1.5"/>"#,
        fmt2(xs.plot_left),
        fmt2(plot_top),
        fmt2(xs.plot_left),
        fmt2(plot_bottom)
    );
    let _ = write!(
        svg,
        r#"<text x="{}" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="{COLOR_AXIS}">epsilon</text>"#,
        fmt2(xs.plot_left + xs.plot_width / 2.0),
        fmt2(HEIGHT - 10.0)
    );
    let _ = write!(
        svg,
        r#"<text x="16" y="{}" text-anchor="middle" font-family="sans-serif" font-size="12" fill="{COLOR_AXIS}" transform="rotate(-90 16 {})">{}</text>"#,
        fmt2(HEIGHT / 2.0),
        fmt2(HEIGHT / 2.0),
        escape(y_label)
    );

    // series: whiskers beneath lines beneath markers
    for s in series {
        let color = series_color(&s.label);
        for &(e, mean, std) in &s.points {
            if std > 0.0 {
                let tx = xs.x(e);
                let (top, bottom) = (y(mean + std), y(mean - std));
                let _ = write!(
                    svg,
                    r#"<line x1="{0}" y1="{1}" x2="{0}" y2="{2}" stroke="{color}" stroke-width="1" opacity="0.55"/>"#,
                    fmt2(tx),
                    fmt2(top),
                    fmt2(bottom)
                );
                for cap_y in [top, bottom] {
                    let _ = write!(
                        svg,
                        r#"<line x1="{}" y1="{2}" x2="{}" y2="{2}" stroke="{color}" stroke-width="1" opacity="0.55"/>"#,
                        fmt2(tx - 3.0),
                        fmt2(tx + 3.0),
                        fmt2(cap_y)
                    );
                }
            }
        }
        let coords: Vec<String> = s
            .points
            .iter()
            .map(|&(e, mean, _)| format!("{},{}", fmt2(xs.x(e)), fmt2(y(mean))))
            .collect();
        let _ = write!(
            svg,
            r#"<polyline fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
            coords.join(" ")
        );
        for &(e, mean, _) in &s.points {
            let _ = write!(
                svg,
                r#"<circle cx="{}" cy="{}" r="2.6" fill="{color}"/>"#,
                fmt2(xs.x(e)),
                fmt2(y(mean))
            );
        }
    }

    // legend
    for (i, s) in series.iter().enumerate() {
        let color = series_color(&s.label);
        let ly = plot_top + 8.0 + i as f64 * 16.0;
        let lx = xs.plot_left + xs.plot_width - 110.0;
        let _ = write!(
            svg,
            r#"<line x1="{}" y1="{2}" x2="{}" y2="{2}" stroke="{color}" stroke-width="2"/>"#,
            fmt2(lx),
            fmt2(lx + 20.0),
            fmt2(ly)
        );
        let _ = write!(
            svg,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11" fill="{COLOR_AXIS}">{}</text>"#,
            fmt2(lx + 26.0),
            fmt2(ly + 4.0),
            escape(&s.label)
        );
    }

    svg.push_str("</svg>\n");
    svg
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Mean of the row means and RMS of the row stds per ε, ascending.
/// Collapses multiple targets/adversaries into one curve per label.
fn aggregate<'a>(rows: impl Iterator<Item = &'a EvalRow>) -> Vec<(f64, f64, f64)> {
    let mut buckets: BTreeMap<u64, Vec<(f64, f64)>> = BTreeMap::new();
    for row in rows {
        buckets
            .entry(row.epsilon.to_bits())
            .or_default()
            .push((row.mean_return, row.std_return));
    }
    buckets
        .into_iter()
        .map(|(bits, cells)| {
            let n = cells.len() as f64;
            let mean = cells.iter().map(|(m, _)| m).sum::<f64>() / n;
            let rms_std = (cells.iter().map(|(_, s)| s * s).sum::<f64>() / n).sqrt();
            (f64::from_bits(bits), mean, rms_std)
        })
        .collect()
}

const NORM_ORDER: [&str; 3] = ["linf", "l2", "l1"];
const MODE_ORDER: [&str; 3] = ["none", "policy", "algorithm"];

/// Build every figure the rows support: one white-box chart per
/// (env, algorithm) with a series per norm, and one transfer chart per
/// (env, algorithm, norm) with a series per transfer mode.
pub fn render_figures(rows: &[EvalRow]) -> Vec<(String, String)> {
    let groups: BTreeSet<(String, String)> = rows
        .iter()
        .map(|r| (r.env.clone(), r.algorithm.clone()))
        .collect();

    let mut figures = Vec::new();
    for (env, algorithm) in groups {
        let of_group: Vec<&EvalRow> = rows
            .iter()
            .filter(|r| r.env == env && r.algorithm == algorithm)
            .collect();

        let whitebox: Vec<Series> = NORM_ORDER
            .iter()
            .filter_map(|&norm| {
                let points = aggregate(
                    of_group
                        .iter()
                        .copied()
                        .filter(|r| r.transfer_mode == "none" && r.norm == norm),
                );
                (!points.is_empty()).then(|| Series {
                    label: norm.to_string(),
                    points,
                })
            })
            .collect();
        if !whitebox.is_empty() {
            let title = format!("{env} / {algorithm}: white-box FGSM");
            figures.push((
                format!("{env}_{algorithm}_whitebox.svg"),
                line_chart(&title, "mean return", &whitebox),
            ));
        }

        for norm in NORM_ORDER {
            let has_transfer = of_group
                .iter()
                .any(|r| r.norm == norm && r.transfer_mode != "none");
            if !has_transfer {
                continue;
            }
            let series: Vec<Series> = MODE_ORDER
                .iter()
                .filter_map(|&mode| {
                    let points = aggregate(
                        of_group
                            .iter()
                            .copied()
                            .filter(|r| r.norm == norm && r.transfer_mode == mode),
                    );
                    (!points.is_empty()).then(|| Series {
                        label: mode.to_string(),
                        points,
                    })
                })
                .collect();
            let title = format!("{env} / {algorithm}: {norm} transfer");
            figures.push((
                format!("{env}_{algorithm}_transfer_{norm}.svg"),
                line_chart(&title, "mean return", &series),
            ));
        }
    }
    figures
}
