//! Plain-text measure format: one atom per line as `w x1 ... xn`, with `#`
//! starting a comment line.

use std::fmt::Write as _;
use std::path::Path;

use nalgebra::DVector;

use super::DiscreteMeasure;
use crate::error::{Error, Result};

pub fn parse_measure(text: &str) -> Result<DiscreteMeasure> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut dim = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let lineno = idx + 1;
        let mut fields = line.split_whitespace().map(|tok| {
            tok.parse::<f64>().map_err(|e| Error::Parse {
                line: lineno,
                reason: format!("`{tok}`: {e}"),
            })
        });
        let w = fields.next().transpose()?.expect("non-empty line has a field");
        let coords: Vec<f64> = fields.collect::<Result<_>>()?;
        if coords.is_empty() {
            return Err(Error::Parse {
                line: lineno,
                reason: "missing coordinates".into(),
            });
        }
        match dim {
            None => dim = Some(coords.len()),
            Some(d) if d != coords.len() => {
                return Err(Error::Parse {
                    line: lineno,
                    reason: format!("expected {d} coordinates, found {}", coords.len()),
                })
            }
            _ => {}
        }
        weights.push(w);
        points.push(DVector::from_vec(coords));
    }
    DiscreteMeasure::new(points, weights)
}

pub fn format_measure(m: &DiscreteMeasure) -> String {
    let mut out = String::new();
    for (p, w) in m.points().iter().zip(m.weights()) {
        let _ = write!(out, "{w}");
        for x in p.iter() {
            let _ = write!(out, " {x}");
        }
        out.push('\n');
    }
    out
}

pub fn read_measure(path: impl AsRef<Path>) -> Result<DiscreteMeasure> {
    parse_measure(&std::fs::read_to_string(path)?)
}

pub fn write_measure(m: &DiscreteMeasure, path: impl AsRef<Path>) -> Result<()> {
    std::fs::write(path, format_measure(m))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_is_exact() {
        let text = "# two atoms\n0.25 0.1 -3\n\n0.75 1e-17 2.5\n";
        let m = parse_measure(text).unwrap();
        assert_eq!(m.len(), 2);
        assert_eq!(m.point(1)[0], 1e-17);
        let again = parse_measure(&format_measure(&m)).unwrap();
        assert_eq!(m, again);
    }

    #[test]
    fn ragged_rows_rejected_with_line() {
        let err = parse_measure("0.5 1 2\n0.5 1\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }));
    }

    #[test]
    fn bad_number_rejected() {
        assert!(matches!(parse_measure("1 x\n"), Err(Error::Parse { line: 1, .. })));
    }
}
