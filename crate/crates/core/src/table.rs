//! Plain CSV tables: comma separated, `.` decimal, LF line endings, a
//! header row, optional leading `#` comment lines, and reals printed with
//! 17 significant digits so they round-trip exactly.

use std::fmt::Write as _;

/// Formats a real with 17 significant digits in scientific notation.
pub fn fmt_real(v: f64) -> String {
    format!("{v:.16e}")
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Table {
    pub comments: Vec<String>,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            comments: Vec::new(),
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    pub fn comment(&mut self, line: impl Into<String>) -> &mut Self {
        self.comments.push(line.into());
        self
    }

    pub fn push_reals(&mut self, row: &[f64]) -> &mut Self {
        self.rows.push(row.iter().map(|v| fmt_real(*v)).collect());
        self
    }

    pub fn push(&mut self, row: Vec<String>) -> &mut Self {
        self.rows.push(row);
        self
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.comments {
            for line in c.lines() {
                let _ = writeln!(out, "# {line}");
            }
        }
        out.push_str(&self.header.join(","));
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.join(","));
            out.push('\n');
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reals_round_trip() {
        for v in [0.1, 1.0 / 3.0, 1e-300, -2.5e17, 0.199_557_017_843_011_1] {
            let text = fmt_real(v);
            assert_eq!(text.parse::<f64>().unwrap(), v, "{text}");
        }
        assert_eq!(fmt_real(1.5), "1.5000000000000000e0");
    }

    #[test]
    fn render_layout() {
        let mut t = Table::new(["a", "b"]);
        t.comment("seed = 1\nsteps = 4").push_reals(&[1.0, 2.0]);
        assert_eq!(
            t.render(),
            "# seed = 1\n# steps = 4\na,b\n1.0000000000000000e0,2.0000000000000000e0\n"
        );
    }
}
