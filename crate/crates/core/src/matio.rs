//! Plain-text matrix format shared by every tool in the workspace.
//!
//! ```text
//! p
//! a11 a12 ... a1p
//! ...
//! ap1 ap2 ... app
//! ```
//!
//! Values are written with Rust's shortest round-trip float formatting, so a
//! write followed by a read reproduces the matrix bit-for-bit. The reader
//! symmetrizes with `(A + Aᵀ)/2` and rejects non-finite values.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::symkernel::SymMatrix;

pub fn format_matrix(m: &SymMatrix) -> String {
    let p = m.dim();
    let mut out = String::with_capacity(p * p * 12);
    let _ = writeln!(out, "{p}");
    for i in 0..p {
        for j in 0..p {
            if j > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{}", m.get(i, j));
        }
        out.push('\n');
    }
    out
}

pub fn parse_matrix(text: &str, context: &str) -> Result<SymMatrix> {
    let err = |reason: String| Error::Parse {
        context: context.to_string(),
        reason,
    };
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| err("empty input".into()))?;
    let p: usize = header
        .trim()
        .parse()
        .map_err(|e| err(format!("bad dimension line `{}`: {e}", header.trim())))?;
    if p == 0 {
        return Err(err("dimension must be at least 1".into()));
    }
    let mut data = Vec::with_capacity(p * p);
    for row in 0..p {
        let line = lines
            .next()
            .ok_or_else(|| err(format!("expected {p} rows, found {row}")))?;
        let before = data.len();
        for tok in line.split_whitespace() {
            let v: f64 = tok
                .parse()
                .map_err(|e| err(format!("row {row}: bad value `{tok}`: {e}")))?;
            data.push(v);
        }
        if data.len() - before != p {
            return Err(err(format!(
                "row {row}: expected {p} values, found {}",
                data.len() - before
            )));
        }
    }
    if lines.next().is_some() {
        return Err(err(format!("trailing content after {p} rows")));
    }
    SymMatrix::from_row_major(p, data).map_err(|e| err(e.to_string()))
}

pub fn write_matrix(path: impl AsRef<Path>, m: &SymMatrix) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_matrix(m)).map_err(|e| Error::io(path, e))
}

pub fn read_matrix(path: impl AsRef<Path>) -> Result<SymMatrix> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_matrix(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parses_and_symmetrizes() {
        let m = parse_matrix("2\n1 2\n4 3\n", "test").unwrap();
        assert_eq!(m.get(0, 1), 3.0);
        assert_eq!(m.get(1, 1), 3.0);
    }

    #[test]
    fn rejects_malformed() {
        for bad in ["", "x\n", "0\n", "2\n1 2\n", "2\n1 2 3\n4 5\n", "1\nnan\n", "1\n1\n2\n", "1\ninf\n"] {
            assert!(parse_matrix(bad, "bad").is_err(), "accepted {bad:?}");
        }
    }

    proptest! {
        #[test]
        fn write_read_is_bit_exact(p in 1usize..6, vals in proptest::collection::vec(-1e6f64..1e6, 36)) {
            let m = SymMatrix::from_fn(p, |i, j| vals[i * 6 + j]);
            let back = parse_matrix(&format_matrix(&m), "rt").unwrap();
            prop_assert_eq!(back, m);
        }
    }
}
