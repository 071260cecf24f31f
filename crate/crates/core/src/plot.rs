//! Minimal SVG line charts for trajectories and controls.
//!
//! Output is a pure function of the input numbers, so identical runs give
//! identical files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::dynamics::{RelativeState, Trajectory};

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 78.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 34.0;
const BOTTOM: f64 = 44.0;

pub const STATE_NAMES: [&str; 6] = ["x", "y", "z", "vx", "vy", "vz"];
pub const STATE_UNITS: [&str; 6] = ["m", "m", "m", "m/s", "m/s", "m/s"];
pub const CONTROL_NAMES: [&str; 3] = ["ux", "uy", "uz"];

/// One controller's closed-loop result drawn in a chart.
#[derive(Debug, Clone, Copy)]
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub trajectory: &'a Trajectory,
}

struct Line {
    label: String,
    color: String,
    dashed: bool,
    points: Vec<(f64, f64)>,
}

fn tick_label(v: f64) -> String {
    let a = v.abs();
    if a == 0.0 {
        "0".into()
    } else if (1e-2..1e5).contains(&a) {
        let s = format!("{v:.3}");
        let s = s.trim_end_matches('0').trim_end_matches('.');
        s.to_string()
    } else {
        format!("{v:.2e}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn render(title: &str, y_label: &str, lines: &[Line]) -> String {
    let all = lines.iter().flat_map(|l| l.points.iter());
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in all.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, -1.0, 1.0);
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        let pad = if y0 == 0.0 { 1.0 } else { 0.1 * y0.abs() };
        y0 -= pad;
        y1 += pad;
    } else {
        let pad = 0.05 * (y1 - y0);
        y0 -= pad;
        y1 += pad;
    }
    let pw = WIDTH - LEFT - RIGHT;
    let ph = HEIGHT - TOP - BOTTOM;
    let sx = |x: f64| LEFT + (x - x0) / (x1 - x0) * pw;
    let sy = |y: f64| TOP + (y1 - y) / (y1 - y0) * ph;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(s, r##"<rect width="{WIDTH}" height="{HEIGHT}" fill="#ffffff"/>"##);
    let _ = writeln!(
        s,
        r#"<text x="{}" y="20" font-size="13" text-anchor="middle">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );
    for i in 0..=4 {
        let fy = i as f64 / 4.0;
        let yv = y0 + fy * (y1 - y0);
        let py = sy(yv);
        let _ = writeln!(
            s,
            r##"<line x1="{LEFT}" y1="{py:.2}" x2="{:.2}" y2="{py:.2}" stroke="#e4e4e4"/>"##,
            WIDTH - RIGHT
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            LEFT - 6.0,
            py + 4.0,
            tick_label(yv)
        );
        let xv = x0 + fy * (x1 - x0);
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            sx(xv),
            HEIGHT - BOTTOM + 16.0,
            tick_label(xv)
        );
    }
    let _ = writeln!(
        s,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444444"/>"##
    );
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">t (s)</text>"#,
        LEFT + pw / 2.0,
        HEIGHT - 8.0
    );
    let _ = writeln!(
        s,
        r#"<text x="14" y="{:.2}" text-anchor="middle" transform="rotate(-90 14 {:.2})">{}</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0,
        escape(y_label)
    );
    for line in lines {
        let pts: Vec<String> = line
            .points
            .iter()
            .filter(|(x, y)| x.is_finite() && y.is_finite())
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        let dash = if line.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        if pts.len() == 1 {
            let (cx, cy) = pts[0].split_once(',').unwrap();
            let _ = writeln!(s, r#"<circle cx="{cx}" cy="{cy}" r="3" fill="{}"/>"#, line.color);
        } else {
            let _ = writeln!(
                s,
                r#"<polyline fill="none" stroke="{}" stroke-width="1.6"{dash} points="{}"/>"#,
                line.color,
                pts.join(" ")
            );
        }
    }
    for (i, line) in lines.iter().enumerate() {
        let y = TOP + 14.0 + 15.0 * i as f64;
        let x = WIDTH - RIGHT - 150.0;
        let dash = if line.dashed { r#" stroke-dasharray="6 4""# } else { "" };
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-width="2"{dash}/>"#,
            y - 4.0,
            x + 22.0,
            y - 4.0,
            line.color
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{y:.2}">{}</text>"#, x + 28.0, escape(&line.label));
    }
    s.push_str("</svg>\n");
    s
}

/// Chart of state component `index` (0..6) with the target as a dashed line.
pub fn state_chart(index: usize, series: &[Series], target: &RelativeState) -> String {
    let mut lines: Vec<Line> = series
        .iter()
        .map(|s| Line {
            label: s.label.to_string(),
            color: s.color.to_string(),
            dashed: false,
            points: s
                .trajectory
                .t_grid
                .iter()
                .zip(&s.trajectory.states)
                .map(|(t, x)| (*t, x.to_array()[index]))
                .collect(),
        })
        .collect();
    let t_end = series
        .iter()
        .filter_map(|s| s.trajectory.t_grid.last())
        .fold(0.0, |a: f64, b| a.max(*b));
    let goal = target.to_array()[index];
    lines.push(Line {
        label: "target".into(),
        color: "#555555".into(),
        dashed: true,
        points: vec![(0.0, goal), (t_end, goal)],
    });
    render(
        &format!("{} ({})", STATE_NAMES[index], STATE_UNITS[index]),
        &format!("{} ({})", STATE_NAMES[index], STATE_UNITS[index]),
        &lines,
    )
}

/// Zero-order-hold staircase of control axis `axis` (0..3).
pub fn control_chart(axis: usize, series: &[Series]) -> String {
    let lines: Vec<Line> = series
        .iter()
        .map(|s| {
            let tr = s.trajectory;
            let mut points = Vec::with_capacity(2 * tr.controls.len());
            for (k, u) in tr.controls.0.iter().enumerate() {
                let v = u.to_vector()[axis];
                points.push((tr.t_grid[k], v));
                points.push((tr.t_grid[k + 1], v));
            }
            Line {
                label: s.label.to_string(),
                color: s.color.to_string(),
                dashed: false,
                points,
            }
        })
        .collect();
    render(
        &format!("{} (m/s²)", CONTROL_NAMES[axis]),
        &format!("{} (m/s²)", CONTROL_NAMES[axis]),
        &lines,
    )
}

/// Writes `state_<c>.svg` for the six components and `control_<c>.svg` for
/// the three axes into `dir`; returns the written paths in that order.
pub fn emit_plots(series: &[Series], target: &RelativeState, dir: &Path) -> std::io::Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for (i, name) in STATE_NAMES.iter().enumerate() {
        let path = dir.join(format!("state_{name}.svg"));
        std::fs::write(&path, state_chart(i, series, target))?;
        written.push(path);
    }
    for (i, name) in CONTROL_NAMES.iter().enumerate() {
        let path = dir.join(format!("control_{name}.svg"));
        std::fs::write(&path, control_chart(i, series))?;
        written.push(path);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{ControlInput, ControlSequence};

    fn trajectory(n: usize, scale: f64) -> Trajectory {
        let states = (0..=n)
            .map(|k| RelativeState::new(scale * k as f64, 0.0, -(k as f64), 1.0, 0.0, 0.0))
            .collect();
        Trajectory {
            states,
            controls: ControlSequence((0..n).map(|k| ControlInput::new(k as f64, 0.0, 0.5)).collect()),
            t_grid: (0..=n).map(|k| k as f64).collect(),
        }
    }

    fn polylines(svg: &str) -> Vec<&str> {
        svg.lines().filter(|l| l.starts_with("<polyline")).collect()
    }

    #[test]
    fn single_point_trajectory() {
        let t = trajectory(0, 1.0);
        let series = [Series {
            label: "a",
            color: "red",
            trajectory: &t,
        }];
        let svg = state_chart(0, &series, &RelativeState::ZERO);
        assert!(svg.contains("<circle"));
        assert!(svg.ends_with("</svg>\n"));
        let svg = control_chart(0, &series);
        assert!(!svg.contains("NaN"));
    }

    #[test]
    fn identical_series_share_polyline_data() {
        let t = trajectory(10, 2.0);
        let series = [
            Series {
                label: "a",
                color: "red",
                trajectory: &t,
            },
            Series {
                label: "b",
                color: "blue",
                trajectory: &t,
            },
        ];
        let svg = state_chart(2, &series, &RelativeState::ZERO);
        let lines = polylines(&svg);
        let pts = |l: &str| l.split("points=").nth(1).unwrap().to_string();
        assert_eq!(pts(lines[0]), pts(lines[1]));
    }

    #[test]
    fn endpoint_maps_to_extreme_pixel() {
        let t = trajectory(10, 2.0);
        let series = [Series {
            label: "a",
            color: "red",
            trajectory: &t,
        }];
        let svg = state_chart(0, &series, &RelativeState::ZERO);
        let line = polylines(&svg)[0];
        let last = line.trim_end_matches("\"/>").rsplit(' ').next().unwrap();
        // x = 20 is the maximum, 5 % below the top padding edge
        let (px, py) = last.split_once(',').unwrap();
        assert_eq!(px, format!("{:.2}", WIDTH - RIGHT));
        let ph = HEIGHT - TOP - BOTTOM;
        let expect = TOP + (1.0 / 22.0) * ph;
        assert_eq!(py, format!("{expect:.2}"));
    }

    #[test]
    fn control_staircase_has_two_points_per_step() {
        let t = trajectory(4, 1.0);
        let series = [Series {
            label: "a",
            color: "red",
            trajectory: &t,
        }];
        let svg = control_chart(0, &series);
        let line = polylines(&svg)[0];
        assert_eq!(line.split("points=").nth(1).unwrap().split(' ').count(), 8);
    }

    #[test]
    fn emits_nine_files_deterministically() {
        let dir = tempfile::tempdir().unwrap();
        let t = trajectory(5, 1.0);
        let series = [Series {
            label: "a",
            color: "red",
            trajectory: &t,
        }];
        let a = emit_plots(&series, &RelativeState::ZERO, dir.path()).unwrap();
        let first: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        emit_plots(&series, &RelativeState::ZERO, dir.path()).unwrap();
        let second: Vec<Vec<u8>> = a.iter().map(|p| std::fs::read(p).unwrap()).collect();
        assert_eq!(a.len(), 9);
        assert_eq!(first, second);
    }

    #[test]
    fn tick_labels() {
        assert_eq!(tick_label(0.0), "0");
        assert_eq!(tick_label(2.5), "2.5");
        assert_eq!(tick_label(100.0), "100");
        assert_eq!(tick_label(1.5e7), "1.50e7");
    }
}
