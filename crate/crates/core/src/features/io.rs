use std::io::{BufRead, Write};

use crate::neuralcore::{SparseRows, Tensor};
use crate::scalar::Scalar;

use super::embedding::SequenceExample;
use super::{FeatureError, FeatureResult};

fn format_err(line: usize, msg: impl Into<String>) -> FeatureError {
    FeatureError::Format { line, msg: msg.into() }
}

fn parse<T: std::str::FromStr>(s: Option<&str>, line: usize, what: &str) -> FeatureResult<T> {
    s.and_then(|v| v.parse().ok()).ok_or_else(|| format_err(line, format!("bad {what}")))
}

/// Header `rows cols`, then one `row col value` triplet per stored entry.
pub fn write_sparse<F: Scalar, W: Write>(m: &SparseRows<F>, mut w: W) -> FeatureResult<()> {
    writeln!(w, "{} {}", m.rows.len(), m.cols)?;
    for (r, row) in m.rows.iter().enumerate() {
        for &(c, v) in row {
            writeln!(w, "{r} {c} {}", v.to_f64_lossy())?;
        }
    }
    Ok(())
}

pub fn read_sparse<F: Scalar, R: BufRead>(r: R) -> FeatureResult<SparseRows<F>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err(1, "missing header"))??;
    let mut h = header.split_whitespace();
    let n: usize = parse(h.next(), 1, "row count")?;
    let cols: usize = parse(h.next(), 1, "column count")?;
    let mut rows = vec![Vec::new(); n];
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 2;
        let mut p = line.split_whitespace();
        let r: usize = parse(p.next(), ln, "row")?;
        let c: u32 = parse(p.next(), ln, "column")?;
        let v: f64 = parse(p.next(), ln, "value")?;
        if r >= n || c as usize >= cols || !v.is_finite() {
            return Err(format_err(ln, "entry out of range"));
        }
        rows[r].push((c, F::of(v)));
    }
    Ok(SparseRows { cols, rows })
}

/// Header `rows cols`, then one whitespace-separated row per line.
pub fn write_dense<F: Scalar, W: Write>(m: &Tensor<F>, mut w: W) -> FeatureResult<()> {
    let cols = if m.shape().len() == 2 { m.row_len() } else { m.len() };
    let rows = if cols == 0 { 0 } else { m.len() / cols };
    writeln!(w, "{rows} {cols}")?;
    for r in m.data().chunks(cols.max(1)) {
        let s: Vec<String> = r.iter().map(|v| v.to_f64_lossy().to_string()).collect();
        writeln!(w, "{}", s.join(" "))?;
    }
    Ok(())
}

pub fn read_dense<F: Scalar, R: BufRead>(r: R) -> FeatureResult<Tensor<F>> {
    let mut lines = r.lines();
    let header = lines.next().ok_or_else(|| format_err(1, "missing header"))??;
    let mut h = header.split_whitespace();
    let rows: usize = parse(h.next(), 1, "row count")?;
    let cols: usize = parse(h.next(), 1, "column count")?;
    let mut data = Vec::with_capacity(rows * cols);
    let mut seen = 0;
    for (i, line) in lines.enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let ln = i + 2;
        let before = data.len();
        for v in line.split_whitespace() {
            let x: f64 = parse(Some(v), ln, "value")?;
            data.push(F::of(x));
        }
        if data.len() - before != cols {
            return Err(format_err(ln, format!("{} values, expected {cols}", data.len() - before)));
        }
        seen += 1;
    }
    if seen != rows {
        return Err(format_err(1, format!("{seen} rows, header says {rows}")));
    }
    Tensor::from_vec(&[rows, cols], data).map_err(|e| format_err(1, e.to_string()))
}

/// One row of space-separated indices per line.
pub fn write_sequences<W: Write>(seqs: &[SequenceExample], mut w: W) -> FeatureResult<()> {
    for s in seqs {
        let row: Vec<String> = s.indices.iter().map(u32::to_string).collect();
        writeln!(w, "{}", row.join(" "))?;
    }
    Ok(())
}

pub fn read_sequences<R: BufRead>(r: R) -> FeatureResult<Vec<SequenceExample>> {
    let mut out: Vec<SequenceExample> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        let indices = line
            .split_whitespace()
            .map(|v| parse(Some(v), i + 1, "index"))
            .collect::<FeatureResult<Vec<u32>>>()?;
        if let Some(first) = out.first() {
            if first.indices.len() != indices.len() {
                return Err(format_err(i + 1, "sequence length differs from first row"));
            }
        }
        out.push(SequenceExample { indices });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sparse_round_trip() {
        let m = SparseRows {
            cols: 4,
            rows: vec![vec![(0, 1.5), (3, 2.25)], vec![], vec![(2, -1.0)]],
        };
        let mut buf = Vec::new();
        write_sparse(&m, &mut buf).unwrap();
        let back: SparseRows<f64> = read_sparse(buf.as_slice()).unwrap();
        assert_eq!(back.rows, m.rows);
        assert_eq!(back.cols, 4);
    }

    #[test]
    fn dense_round_trip() {
        let t = Tensor::from_f64(&[2, 3], &[0.1, 0.2, 0.3, -1.0, 1e-9, 7.0]).unwrap();
        let mut buf = Vec::new();
        write_dense(&t, &mut buf).unwrap();
        let back: Tensor<f64> = read_dense(buf.as_slice()).unwrap();
        assert_eq!(back, t);
        assert!(read_dense::<f64, _>("2 2\n1 2\n3\n".as_bytes()).is_err());
    }

    #[test]
    fn sequence_round_trip() {
        let s = vec![
            SequenceExample { indices: vec![0, 0, 3] },
            SequenceExample { indices: vec![1, 2, 3] },
        ];
        let mut buf = Vec::new();
        write_sequences(&s, &mut buf).unwrap();
        assert_eq!(read_sequences(buf.as_slice()).unwrap(), s);
    }
}
