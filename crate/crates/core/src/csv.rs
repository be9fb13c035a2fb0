//! Minimal CSV emission: one header line, `.` decimal point, floats with 17
//! significant digits so values round-trip exactly.

use std::fmt::Write;

#[derive(Debug, Clone)]
pub struct Csv {
    out: String,
    cols: usize,
}

impl Csv {
    pub fn new(header: &[&str]) -> Self {
        let mut out = header.join(",");
        out.push('\n');
        Self {
            out,
            cols: header.len(),
        }
    }

    /// Append a row. Panics if the column count differs from the header.
    pub fn row<I, S>(&mut self, cells: I)
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        let mut n = 0;
        for (i, c) in cells.into_iter().enumerate() {
            if i > 0 {
                self.out.push(',');
            }
            self.out.push_str(c.as_ref());
            n += 1;
        }
        assert_eq!(n, self.cols, "row width does not match header");
        self.out.push('\n');
    }

    pub fn as_str(&self) -> &str {
        &self.out
    }

    pub fn finish(self) -> String {
        self.out
    }
}

/// Float formatted with 17 significant digits.
pub fn num(x: f64) -> String {
    let mut s = String::new();
    write!(s, "{x:.16e}").expect("writing to a String");
    s
}

pub fn int(x: impl Into<i128>) -> String {
    x.into().to_string()
}
