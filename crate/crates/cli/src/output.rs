//! CSV, JSON and SVG writers. Numbers are printed with Rust's shortest
//! round-trip formatting so files are byte-identical across runs.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;

use crate::error::{CliError, CliResult};

pub fn ensure_dir(dir: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    Ok(dir.to_path_buf())
}

pub fn num(v: f64) -> String {
    format!("{v}")
}

pub fn write_csv<I>(path: &Path, header: &[String], rows: I) -> CliResult<()>
where
    I: IntoIterator<Item = Vec<String>>,
{
    let io = |e: csv::Error| CliError::io(path, std::io::Error::other(e.to_string()));
    let mut w = csv::Writer::from_path(path).map_err(io)?;
    w.write_record(header).map_err(io)?;
    for row in rows {
        w.write_record(&row).map_err(io)?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| CliError::Numeric(format!("cannot serialize {}: {e}", path.display())))?;
    text.push('\n');
    write_text(path, &text)
}

pub fn write_text(path: &Path, text: &str) -> CliResult<()> {
    fs::write(path, text).map_err(|e| CliError::io(path, e))
}

/// Object (blue) and guide (red) paths in the plane, start marked by a
/// circle and end by a square.
pub fn overlay_svg(title: &str, object: &[(f64, f64)], guide: &[(f64, f64)]) -> String {
    const W: f64 = 800.0;
    const H: f64 = 600.0;
    const PAD: f64 = 40.0;
    let all = object.iter().chain(guide);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
    for &(x, y) in all {
        x0 = x0.min(x);
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    let span = (x1 - x0).max(y1 - y0).max(1e-9);
    let scale = ((W - 2.0 * PAD) / span).min((H - 2.0 * PAD) / span);
    let px = |(x, y): (f64, f64)| (PAD + (x - x0) * scale, H - PAD - (y - y0) * scale);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{PAD}" y="24" font-family="sans-serif" font-size="14">{}</text>"#,
        escape(title)
    );
    for (path, colour, name) in [(guide, "red", "guide"), (object, "blue", "object")] {
        if path.is_empty() {
            continue;
        }
        let pts: Vec<String> = path
            .iter()
            .map(|&p| {
                let (x, y) = px(p);
                format!("{x:.3},{y:.3}")
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline id="{name}" fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let (sx, sy) = px(path[0]);
        let (ex, ey) = px(path[path.len() - 1]);
        let _ = writeln!(
            s,
            r#"<circle cx="{sx:.3}" cy="{sy:.3}" r="4" fill="{colour}"/>"#
        );
        let _ = writeln!(
            s,
            r#"<rect x="{:.3}" y="{:.3}" width="8" height="8" fill="none" stroke="{colour}"/>"#,
            ex - 4.0,
            ey - 4.0
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
