//! Plain-text instance files.
//!
//! ```text
//! # comments start with '#'
//! mu
//! 0.0 0.0 0.5      # coordinates..., mass
//! 1.0 0.0 0.5
//! nu
//! 0.5 1.0 1.0
//! ```

use std::fmt::Write as _;

use ndarray::{Array1, Array2};
use thiserror::Error;

use super::DiscreteMeasure;

#[derive(Debug, Clone, PartialEq, Error)]
#[error("line {line}, column {column}: {message}")]
pub struct ParseError {
    pub line: usize,
    pub column: usize,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub mu: DiscreteMeasure<f64>,
    pub nu: DiscreteMeasure<f64>,
}

#[derive(Clone, Copy, PartialEq)]
enum Section {
    None,
    Mu,
    Nu,
}

struct Rows {
    coords: Vec<f64>,
    masses: Vec<f64>,
    dim: Option<usize>,
    first_line: usize,
}

impl Rows {
    fn new() -> Self {
        Self {
            coords: Vec::new(),
            masses: Vec::new(),
            dim: None,
            first_line: 0,
        }
    }

    fn finish(self, name: &str, header_line: usize) -> Result<DiscreteMeasure<f64>, ParseError> {
        let err = |message: String| ParseError {
            line: if self.first_line > 0 { self.first_line } else { header_line },
            column: 1,
            message,
        };
        let dim = self.dim.ok_or_else(|| err(format!("section `{name}` has no atoms")))?;
        let atoms = Array2::from_shape_vec((self.masses.len(), dim), self.coords).expect("rows have equal length");
        DiscreteMeasure::new(atoms, Array1::from(self.masses)).map_err(|e| err(format!("section `{name}`: {e}")))
    }
}

pub fn parse_instance(text: &str) -> Result<Instance, ParseError> {
    let mut section = Section::None;
    let mut mu = Rows::new();
    let mut nu = Rows::new();
    let (mut mu_line, mut nu_line) = (0, 0);
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let content = raw.split('#').next().unwrap_or("");
        let trimmed = content.trim();
        if trimmed.is_empty() {
            continue;
        }
        match trimmed {
            "mu" | "nu" => {
                let (target, seen) = if trimmed == "mu" {
                    (Section::Mu, &mut mu_line)
                } else {
                    (Section::Nu, &mut nu_line)
                };
                if *seen != 0 {
                    return Err(ParseError {
                        line: line_no,
                        column: raw.find(trimmed).unwrap_or(0) + 1,
                        message: format!("duplicate section `{trimmed}` (first at line {seen})"),
                    });
                }
                *seen = line_no;
                section = target;
                continue;
            }
            _ => {}
        }
        let rows = match section {
            Section::Mu => &mut mu,
            Section::Nu => &mut nu,
            Section::None => {
                return Err(ParseError {
                    line: line_no,
                    column: raw.len() - raw.trim_start().len() + 1,
                    message: "data before a `mu` or `nu` header".into(),
                })
            }
        };
        let mut values = Vec::new();
        let mut offset = 0;
        for tok in content.split_whitespace() {
            let col = content[offset..].find(tok).expect("token comes from this line") + offset;
            offset = col + tok.len();
            let v: f64 = tok.parse().map_err(|_| ParseError {
                line: line_no,
                column: col + 1,
                message: format!("expected a number, found `{tok}`"),
            })?;
            values.push(v);
        }
        if values.len() < 2 {
            return Err(ParseError {
                line: line_no,
                column: 1,
                message: "an atom needs at least one coordinate and a mass".into(),
            });
        }
        let dim = values.len() - 1;
        match rows.dim {
            None => {
                rows.dim = Some(dim);
                rows.first_line = line_no;
            }
            Some(d) if d != dim => {
                return Err(ParseError {
                    line: line_no,
                    column: 1,
                    message: format!("expected {d} coordinates, found {dim}"),
                })
            }
            _ => {}
        }
        let mass = values.pop().expect("len >= 2");
        rows.coords.extend(values);
        rows.masses.push(mass);
    }
    let end = text.lines().count().max(1);
    if mu_line == 0 || nu_line == 0 {
        return Err(ParseError {
            line: end,
            column: 1,
            message: "instance needs both `mu` and `nu` sections".into(),
        });
    }
    let mu = mu.finish("mu", mu_line)?;
    let nu = nu.finish("nu", nu_line)?;
    if mu.dim() != nu.dim() {
        return Err(ParseError {
            line: nu_line,
            column: 1,
            message: format!("mu atoms are {}-dimensional but nu atoms are {}-dimensional", mu.dim(), nu.dim()),
        });
    }
    Ok(Instance { mu, nu })
}

pub fn write_instance(inst: &Instance) -> String {
    let mut out = String::new();
    for (name, m) in [("mu", &inst.mu), ("nu", &inst.nu)] {
        out.push_str(name);
        out.push('\n');
        for (row, mass) in m.atoms.rows().into_iter().zip(&m.masses) {
            for v in row {
                write!(out, "{v:?} ").expect("write to string");
            }
            writeln!(out, "{mass:?}").expect("write to string");
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::theory::random_instance;

    #[test]
    fn roundtrip() {
        let (mu, nu) = random_instance(4, 3, 2, 1).unwrap();
        let inst = Instance { mu, nu };
        let text = write_instance(&inst);
        assert_eq!(parse_instance(&text).unwrap(), inst);
    }

    #[test]
    fn comments_and_blank_lines() {
        let text = "# header\n\nmu\n0 0 0.5 # first\n1 0 0.5\nnu\n0.5 1 1\n";
        let inst = parse_instance(text).unwrap();
        assert_eq!(inst.mu.len(), 2);
        assert_eq!(inst.nu.dim(), 2);
    }

    #[test]
    fn errors_carry_positions() {
        let e = parse_instance("mu\n0 0 0.5\n1 x 0.5\nnu\n0 0 1\n").unwrap_err();
        assert_eq!((e.line, e.column), (3, 3));
        let e = parse_instance("0 0 1\n").unwrap_err();
        assert_eq!(e.line, 1);
        let e = parse_instance("mu\n0 0 1\nnu\n0 1\n1 2 3 4\n").unwrap_err();
        assert_eq!(e.line, 5);
        let e = parse_instance("mu\n0 0 1\n").unwrap_err();
        assert!(e.message.contains("both"));
        let e = parse_instance("mu\n0 0 -1\nnu\n0 0 1\n").unwrap_err();
        assert!(e.message.contains("mass"), "{e}");
    }
}
