//! Matrix Market coordinate reader and writer.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::sparse::CsrMatrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Field {
    Real,
    Integer,
    Pattern,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Symmetry {
    General,
    Symmetric,
}

/// Reads a `%%MatrixMarket matrix coordinate` file into CSR.
///
/// Indices are 1-based. Pattern files get value 1.0, duplicate entries are
/// summed, and `symmetric` files are expanded to both triangles.
pub fn read_matrix_market(path: impl AsRef<Path>) -> Result<CsrMatrix> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    parse_matrix_market(BufReader::new(file), path)
}

pub fn parse_matrix_market<R: BufRead>(reader: R, path: &Path) -> Result<CsrMatrix> {
    let err = |line: usize, msg: String| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg,
    };

    let mut lines = reader.lines().enumerate();
    let (field, symmetry) = match lines.next() {
        Some((_, line)) => parse_header(&line.map_err(|e| Error::io(path, e))?)
            .map_err(|m| err(1, m))?,
        None => return Err(err(1, "empty file".into())),
    };

    let mut dims: Option<(usize, usize, usize)> = None;
    let mut triplets = Vec::new();
    for (no, line) in lines {
        let line_no = no + 1;
        let line = line.map_err(|e| Error::io(path, e))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('%') {
            continue;
        }
        let mut tok = trimmed.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tok.next()
                .ok_or_else(|| err(line_no, format!("missing {what}")))?
                .parse::<usize>()
                .map_err(|e| err(line_no, format!("bad {what}: {e}")))
        };
        match dims {
            None => {
                let m = next_usize("row count")?;
                let n = next_usize("column count")?;
                let nnz = next_usize("entry count")?;
                if symmetry == Symmetry::Symmetric && m != n {
                    return Err(err(line_no, "symmetric matrix must be square".into()));
                }
                triplets.reserve(if symmetry == Symmetry::Symmetric { 2 * nnz } else { nnz });
                dims = Some((m, n, nnz));
            }
            Some((m, n, _)) => {
                let i = next_usize("row index")?;
                let j = next_usize("column index")?;
                if i == 0 || j == 0 || i > m || j > n {
                    return Err(err(line_no, format!("index ({i}, {j}) outside {m}x{n}")));
                }
                let v = match field {
                    Field::Pattern => 1.0,
                    Field::Real | Field::Integer => {
                        let raw = tok
                            .next()
                            .ok_or_else(|| err(line_no, "missing value".into()))?;
                        let v: f64 = raw
                            .parse()
                            .map_err(|e| err(line_no, format!("bad value {raw:?}: {e}")))?;
                        if !v.is_finite() {
                            return Err(err(line_no, format!("non-finite value {raw:?}")));
                        }
                        v
                    }
                };
                let (r, c) = (i - 1, j - 1);
                triplets.push((r, c, v));
                if symmetry == Symmetry::Symmetric && r != c {
                    triplets.push((c, r, v));
                }
            }
        }
    }
    let (m, n, nnz) = dims.ok_or_else(|| err(0, "missing size line".into()))?;
    let stored = if symmetry == Symmetry::Symmetric {
        triplets.iter().filter(|t| t.0 >= t.1).count()
    } else {
        triplets.len()
    };
    if stored != nnz {
        return Err(err(0, format!("header declares {nnz} entries, found {stored}")));
    }
    CsrMatrix::from_triplets(m, n, &triplets)
}

fn parse_header(line: &str) -> std::result::Result<(Field, Symmetry), String> {
    let words: Vec<String> = line.split_whitespace().map(str::to_ascii_lowercase).collect();
    if words.len() != 5 || words[0] != "%%matrixmarket" {
        return Err(format!("expected '%%MatrixMarket matrix coordinate <field> <symmetry>', got {line:?}"));
    }
    if words[1] != "matrix" || words[2] != "coordinate" {
        return Err(format!("only 'matrix coordinate' is supported, got {line:?}"));
    }
    let field = match words[3].as_str() {
        "real" | "double" => Field::Real,
        "integer" => Field::Integer,
        "pattern" => Field::Pattern,
        other => return Err(format!("unsupported field {other:?}")),
    };
    let symmetry = match words[4].as_str() {
        "general" => Symmetry::General,
        "symmetric" => Symmetry::Symmetric,
        other => return Err(format!("unsupported symmetry {other:?}")),
    };
    Ok((field, symmetry))
}

/// Writes `a` as a general coordinate file; unit-valued matrices are written as `pattern`.
pub fn write_matrix_market(path: impl AsRef<Path>, a: &CsrMatrix) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let pattern = a.is_unit_valued();
    let io = |e| Error::io(path, e);
    writeln!(
        w,
        "%%MatrixMarket matrix coordinate {} general",
        if pattern { "pattern" } else { "real" }
    )
    .map_err(io)?;
    writeln!(w, "{} {} {}", a.n_rows(), a.n_cols(), a.nnz()).map_err(io)?;
    for (i, j, v) in a.triplets() {
        if pattern {
            writeln!(w, "{} {}", i + 1, j + 1).map_err(io)?;
        } else {
            writeln!(w, "{} {} {:?}", i + 1, j + 1, v).map_err(io)?;
        }
    }
    w.flush().map_err(io)
}
