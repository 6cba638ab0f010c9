//! Static SVG of observed levels against FULL and STORM forecasts around a test storm.

use std::fmt::Write as _;

use crate::data::format_timestamp;
use crate::error::{Error, Result};
use crate::eval::ComparisonReport;
use crate::experiment::TestData;

const WIDTH: f64 = 960.0;
const HEIGHT: f64 = 480.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const RAIN_H: f64 = 80.0;
const BOTTOM: f64 = 50.0;

/// One plotted hour: valid-time row index in the segment and the three levels.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TracePoint {
    pub row: usize,
    pub obs: f64,
    pub full: f64,
    pub storm: f64,
}

/// Forecasts `step` hours ahead whose valid times fall in a window of `hours`
/// hours. The window opens a day before the largest test storm, or at the first
/// origin when the test period has none.
pub fn trace(report: &ComparisonReport, step: usize, hours: usize) -> Result<(usize, Vec<TracePoint>)> {
    let h = report.full.horizon;
    if step == 0 || step > h {
        return Err(Error::Invalid(format!("plot step {step} outside 1..={h}")));
    }
    let lb = report.full.lookback;
    let biggest = report
        .test_events
        .iter()
        .max_by(|a, b| a.total_rain.total_cmp(&b.total_rain));
    let (segment, from) = match biggest {
        Some(e) => (e.segment_id, e.start.saturating_sub(24)),
        None => (report.full.origins[0].source.segment, 0),
    };
    let points: Vec<TracePoint> = report
        .full
        .origins
        .iter()
        .zip(&report.storm.origins)
        .filter(|(o, _)| o.source.segment == segment)
        .map(|(f, s)| TracePoint {
            row: f.source.offset + lb + step - 1,
            obs: f.obs[step - 1],
            full: f.pred[step - 1],
            storm: s.pred[step - 1],
        })
        .filter(|p| p.row >= from && p.row < from + hours)
        .collect();
    if points.len() < 2 {
        return Err(Error::Invalid("too few forecasts in the plot window".into()));
    }
    Ok((segment, points))
}

fn polyline(out: &mut String, pts: &[(f64, f64)], colour: &str, dash: &str) {
    let coords: Vec<String> = pts.iter().map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let _ = writeln!(
        out,
        r#"<polyline fill="none" stroke="{colour}" stroke-width="1.6"{dash} points="{}"/>"#,
        coords.join(" ")
    );
}

/// Renders the plot. Output depends only on the inputs.
pub fn forecast_svg(report: &ComparisonReport, test: &TestData, step: usize, hours: usize) -> Result<String> {
    let (segment, points) = trace(report, step, hours)?;
    let seg = &test.segments[segment];
    let first = points[0].row;
    let last = points[points.len() - 1].row;
    let rain: Vec<f64> = seg.rows()[first..=last].iter().map(|r| r.rainfall).collect();

    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for p in &points {
        for v in [p.obs, p.full, p.storm] {
            lo = lo.min(v);
            hi = hi.max(v);
        }
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    lo -= pad;
    hi += pad;
    let rain_max = rain.iter().copied().fold(0.0, f64::max).max(1.0);

    let plot_w = WIDTH - LEFT - RIGHT;
    let level_top = TOP + RAIN_H + 10.0;
    let level_h = HEIGHT - level_top - BOTTOM;
    let span = (last - first).max(1) as f64;
    let x = |row: usize| LEFT + (row - first) as f64 / span * plot_w;
    let y = |v: f64| level_top + (hi - v) / (hi - lo) * level_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{LEFT}" y="22" font-size="14">{}: {}-hour-ahead groundwater level forecasts</text>"#,
        escape(&report.full.well_id),
        step
    );

    // Hyetograph, hanging from the top.
    let bar_w = (plot_w / (span + 1.0)).max(0.5);
    for (i, r) in rain.iter().enumerate() {
        if *r > 0.0 {
            let hgt = r / rain_max * RAIN_H;
            let _ = writeln!(
                s,
                r##"<rect x="{:.2}" y="{TOP:.2}" width="{bar_w:.2}" height="{hgt:.2}" fill="#6baed6"/>"##,
                x(first + i) - bar_w / 2.0
            );
        }
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">rain {rain_max:.1} mm/h</text>"#,
        LEFT - 6.0,
        TOP + 10.0
    );

    // Axes and level ticks.
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{LEFT}" y2="{:.2}" stroke="black"/>"#,
        level_top,
        level_top + level_h
    );
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black"/>"#,
        level_top + level_h,
        LEFT + plot_w,
        level_top + level_h
    );
    for i in 0..=4 {
        let v = lo + (hi - lo) * i as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{v:.3}</text>"#,
            LEFT - 6.0,
            y(v) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" transform="rotate(-90 16 {:.2})" text-anchor="middle">groundwater level (m)</text>"#,
        level_top + level_h / 2.0,
        level_top + level_h / 2.0
    );
    for row in [first, (first + last) / 2, last] {
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            x(row),
            HEIGHT - BOTTOM + 18.0,
            format_timestamp(&seg.rows()[row].timestamp)
        );
    }

    let obs: Vec<(f64, f64)> = points.iter().map(|p| (x(p.row), y(p.obs))).collect();
    let full: Vec<(f64, f64)> = points.iter().map(|p| (x(p.row), y(p.full))).collect();
    let storm: Vec<(f64, f64)> = points.iter().map(|p| (x(p.row), y(p.storm))).collect();
    polyline(&mut s, &obs, "black", "");
    polyline(&mut s, &full, "#d95f02", r#" stroke-dasharray="6 3""#);
    polyline(&mut s, &storm, "#1b9e77", "");

    let legend = [("observed", "black"), ("FULL", "#d95f02"), ("STORM", "#1b9e77")];
    for (i, (name, colour)) in legend.iter().enumerate() {
        let lx = LEFT + plot_w - 260.0 + i as f64 * 90.0;
        let ly = HEIGHT - 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{colour}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}">{name}</text>"#, lx + 24.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    Ok(s)
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}
