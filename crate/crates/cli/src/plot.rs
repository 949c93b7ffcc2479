//! Plot data: TDL bands as CSV and as a static SVG, one panel per joint.

use std::fmt::Write as _;

use acorn_core::data::Trajectory;
use acorn_core::metrics::TdlSummary;

pub fn band_csv(tdl: &TdlSummary) -> String {
    let mut s = String::from("timestep,joint,mean,halfwidth\n");
    for (t, (center, half)) in tdl.band_center.iter().zip(&tdl.band_halfwidth).enumerate() {
        for (j, (m, h)) in center.iter().zip(half).enumerate() {
            let _ = writeln!(s, "{t},{j},{m},{h}");
        }
    }
    s
}

const PANEL_W: f64 = 320.0;
const PANEL_H: f64 = 160.0;
const PAD: f64 = 24.0;
const COLS: usize = 3;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn points(xy: impl Iterator<Item = (f64, f64)>) -> String {
    xy.map(|(x, y)| format!("{x:.2},{y:.2}")).collect::<Vec<_>>().join(" ")
}

/// Band (shaded), demonstration mean (line) and failed episodes (thin lines)
/// per joint.
pub fn band_svg(tdl: &TdlSummary, failed: &[Trajectory], title: &str) -> String {
    let horizon = tdl.band_center.len().max(1);
    let joints = tdl.band_center.first().map_or(0, Vec::len);
    let rows = joints.div_ceil(COLS).max(1);
    let width = COLS as f64 * (PANEL_W + PAD) + PAD;
    let height = rows as f64 * (PANEL_H + PAD) + 2.0 * PAD;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}">"#
    );
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="{}" font-family="sans-serif" font-size="13">{} ({})</text>"#,
        PAD * 0.7,
        escape(title),
        escape(&tdl.label())
    );
    for j in 0..joints {
        let ox = PAD + (j % COLS) as f64 * (PANEL_W + PAD);
        let oy = 1.5 * PAD + (j / COLS) as f64 * (PANEL_H + PAD);
        let band = |t: usize, sign: f64| tdl.band_center[t][j] + sign * tdl.band_halfwidth[t][j];
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in 0..tdl.band_center.len() {
            lo = lo.min(band(t, -1.0));
            hi = hi.max(band(t, 1.0));
        }
        for traj in failed {
            for a in &traj.joint_angles {
                lo = lo.min(a[j]);
                hi = hi.max(a[j]);
            }
        }
        if !lo.is_finite() || !hi.is_finite() {
            lo = -1.0;
            hi = 1.0;
        }
        if hi - lo < 1e-9 {
            lo -= 0.5;
            hi += 0.5;
        }
        let span_t = failed.iter().map(Trajectory::len).max().unwrap_or(0).max(horizon) as f64;
        let x = |t: f64| ox + PANEL_W * t / span_t.max(1.0);
        let y = |v: f64| oy + PANEL_H * (1.0 - (v - lo) / (hi - lo));
        let _ = writeln!(
            s,
            r##"<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="#999"/>"##
        );
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" font-family="sans-serif" font-size="11">joint {j}</text>"#,
            ox + 4.0,
            oy + 12.0
        );
        let n = tdl.band_center.len();
        if n > 0 {
            let upper = (0..n).map(|t| (x(t as f64), y(band(t, 1.0))));
            let lower = (0..n).rev().map(|t| (x(t as f64), y(band(t, -1.0))));
            let _ = writeln!(
                s,
                r##"<polygon points="{}" fill="#4a90d9" fill-opacity="0.25" stroke="none"/>"##,
                points(upper.chain(lower))
            );
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#1f5fa8" stroke-width="1.5"/>"##,
                points((0..n).map(|t| (x(t as f64), y(tdl.band_center[t][j]))))
            );
        }
        for traj in failed {
            let _ = writeln!(
                s,
                r##"<polyline points="{}" fill="none" stroke="#d0453a" stroke-opacity="0.5" stroke-width="0.8"/>"##,
                points(traj.joint_angles.iter().enumerate().map(|(t, a)| (x(t as f64), y(a[j]))))
            );
        }
    }
    s.push_str("</svg>\n");
    s
}
