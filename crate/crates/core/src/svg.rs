//! Trajectory pictures in the plane: teacher directions as blue lines
//! through the origin, each student neuron's path in black, end positions
//! in red. Inputs with `d > 2` are drawn in their first two coordinates.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::net::TeacherNetwork;

const SIZE: f64 = 480.0;
const MARGIN: f64 = 16.0;

/// Renders the frames (each a row-major `m × d` weight vector) as an SVG
/// document.
pub fn trajectory_svg(t: &TeacherNetwork, frames: &[Vec<f64>]) -> Result<String> {
    let d = t.dim();
    if d < 2 {
        return Err(Error::Domain("trajectory plots need d >= 2".into()));
    }
    let first = frames
        .first()
        .ok_or_else(|| Error::Domain("trajectory plot needs at least one frame".into()))?;
    if first.is_empty() || first.len() % d != 0 {
        return Err(Error::DimensionMismatch {
            expected: d,
            got: first.len(),
        });
    }
    let m = first.len() / d;
    if let Some(bad) = frames.iter().find(|f| f.len() != m * d) {
        return Err(Error::DimensionMismatch {
            expected: m * d,
            got: bad.len(),
        });
    }

    let mut extent = t
        .neurons()
        .iter()
        .map(|w| w[0].hypot(w[1]))
        .fold(0.0, f64::max);
    for f in frames {
        for w in f.chunks_exact(d) {
            extent = extent.max(w[0].abs()).max(w[1].abs());
        }
    }
    let extent = if extent > 0.0 { 1.1 * extent } else { 1.0 };
    let scale = (SIZE / 2.0 - MARGIN) / extent;
    let px = |x: f64| SIZE / 2.0 + scale * x;
    let py = |y: f64| SIZE / 2.0 - scale * y;

    let mut out = String::new();
    let w = &mut out;
    let _ = writeln!(
        w,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
    );
    let _ = writeln!(w, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(w, r#"<g id="teachers" stroke="blue" stroke-width="1.5">"#);
    for n in t.neurons() {
        let len = n[0].hypot(n[1]);
        if len == 0.0 {
            continue;
        }
        let (ux, uy) = (extent * n[0] / len, extent * n[1] / len);
        let _ = writeln!(
            w,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}"/>"#,
            px(-ux),
            py(-uy),
            px(ux),
            py(uy)
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g id="students" fill="none" stroke="black" stroke-width="1">"#);
    for j in 0..m {
        let _ = write!(w, r#"<polyline points=""#);
        for (k, f) in frames.iter().enumerate() {
            let (x, y) = (f[j * d], f[j * d + 1]);
            let sep = if k == 0 { "" } else { " " };
            let _ = write!(w, "{sep}{:.2},{:.2}", px(x), py(y));
        }
        let _ = writeln!(w, r#""/>"#);
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, r#"<g id="endpoints" fill="red">"#);
    let last = frames.last().expect("frames is non-empty");
    for j in 0..m {
        let _ = writeln!(
            w,
            r#"<circle cx="{:.2}" cy="{:.2}" r="3"/>"#,
            px(last[j * d]),
            py(last[j * d + 1])
        );
    }
    let _ = writeln!(w, "</g>");
    let _ = writeln!(w, "</svg>");
    Ok(out)
}
