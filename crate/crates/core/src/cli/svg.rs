//! Static SVG snapshot: targets as green dots, trajectories as black
//! polylines, initial positions as blue crosses, final positions as red
//! squares.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use crate::error::Result;

const SIZE: f64 = 600.0;
const MARGIN: f64 = 20.0;

/// Everything drawn in a snapshot, in 2-D positions.
#[derive(Debug, Clone, Default)]
pub struct Snapshot {
    pub targets: Vec<DVector<f64>>,
    pub initial: Vec<DVector<f64>>,
    pub last: Vec<DVector<f64>>,
    /// One path per agent.
    pub paths: Vec<Vec<DVector<f64>>>,
    /// `(min, max)` corners of the plotted region.
    pub bounds: ([f64; 2], [f64; 2]),
}

impl Snapshot {
    pub fn render(&self) -> String {
        let (lo, hi) = self.bounds;
        let span = (hi[0] - lo[0]).max(hi[1] - lo[1]).max(f64::MIN_POSITIVE);
        let scale = (SIZE - 2.0 * MARGIN) / span;
        let map = |p: &DVector<f64>| (MARGIN + (p[0] - lo[0]) * scale, SIZE - MARGIN - (p[1] - lo[1]) * scale);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{SIZE}" height="{SIZE}" viewBox="0 0 {SIZE} {SIZE}">"#
        );
        let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
        let _ = writeln!(s, r#"<g class="targets" fill="green" fill-opacity="0.6">"#);
        for p in &self.targets {
            let (x, y) = map(p);
            let _ = writeln!(s, r#"<circle cx="{x:.2}" cy="{y:.2}" r="1.5"/>"#);
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(
            s,
            r#"<g class="paths" fill="none" stroke="black" stroke-width="0.5" stroke-opacity="0.7">"#
        );
        for path in &self.paths {
            let pts: Vec<String> = path
                .iter()
                .map(|p| {
                    let (x, y) = map(p);
                    format!("{x:.2},{y:.2}")
                })
                .collect();
            let _ = writeln!(s, r#"<polyline points="{}"/>"#, pts.join(" "));
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g class="initial" stroke="blue" stroke-width="1.2">"#);
        for p in &self.initial {
            let (x, y) = map(p);
            let _ = writeln!(
                s,
                r#"<path d="M{:.2},{:.2}L{:.2},{:.2}M{:.2},{:.2}L{:.2},{:.2}"/>"#,
                x - 3.0,
                y - 3.0,
                x + 3.0,
                y + 3.0,
                x - 3.0,
                y + 3.0,
                x + 3.0,
                y - 3.0
            );
        }
        let _ = writeln!(s, "</g>");
        let _ = writeln!(s, r#"<g class="final" fill="none" stroke="red" stroke-width="1.2">"#);
        for p in &self.last {
            let (x, y) = map(p);
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="6" height="6"/>"#,
                x - 3.0,
                y - 3.0
            );
        }
        let _ = writeln!(s, "</g>");
        s.push_str("</svg>\n");
        s
    }
}

pub fn emit_snapshot(snapshot: &Snapshot, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, snapshot.render())?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(x: f64, y: f64) -> DVector<f64> {
        DVector::from_vec(vec![x, y])
    }

    #[test]
    fn empty_team_draws_targets_only() {
        let snap = Snapshot {
            targets: vec![p(1.0, 1.0), p(2.0, 2.0)],
            bounds: ([0.0, 0.0], [10.0, 10.0]),
            ..Default::default()
        };
        let svg = snap.render();
        assert_eq!(svg.matches("<circle").count(), 2);
        assert_eq!(svg.matches("<polyline").count(), 0);
        assert_eq!(svg.matches("<path ").count(), 0);
    }

    #[test]
    fn one_agent_one_target() {
        let snap = Snapshot {
            targets: vec![p(5.0, 5.0)],
            initial: vec![p(0.0, 0.0)],
            last: vec![p(5.0, 5.0)],
            paths: vec![vec![p(0.0, 0.0), p(5.0, 5.0)]],
            bounds: ([0.0, 0.0], [10.0, 10.0]),
        };
        let svg = snap.render();
        assert_eq!(svg.matches("<circle").count(), 1);
        assert_eq!(svg.matches("<path ").count(), 1);
        assert_eq!(svg.matches(r#"<rect x="#).count(), 1);
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg, snap.render());
    }
}
