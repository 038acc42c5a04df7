//! Delimited data files: `x0..x{D-1}` inputs, `y0..y{P-1}` outputs and an
//! optional `output_index` column for heterotopic rows.

use std::io::Write;
use std::path::Path;

use svgp::models::Dataset;
use svgp::numerics::DenseMatrix;

use crate::error::{data_err, CliError, Result};

/// A parsed data file before the output count is fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Table {
    pub x: DenseMatrix,
    /// `N x P` homotopic outputs, or `N x 1` values when `output_index` is set.
    pub y: Option<DenseMatrix>,
    pub output_index: Option<Vec<usize>>,
}

impl Table {
    pub fn input_dim(&self) -> usize {
        self.x.cols()
    }

    /// Outputs implied by the file alone.
    pub fn num_outputs(&self) -> Option<usize> {
        match (&self.output_index, &self.y) {
            (Some(idx), _) => Some(idx.iter().max().map_or(1, |m| m + 1)),
            (None, Some(y)) => Some(y.cols()),
            (None, None) => None,
        }
    }

    /// Dataset with `p` outputs; heterotopic rows fill one column each.
    pub fn dataset(&self, p: usize) -> Result<Dataset> {
        let Some(y) = &self.y else {
            return Err(CliError::Data("the data file has no output columns".into()));
        };
        match &self.output_index {
            Some(idx) => Dataset::heterotopic(self.x.clone(), y.as_slice(), idx, p).map_err(data_err),
            None => {
                if y.cols() != p {
                    return Err(CliError::Data(format!("the data file has {} output columns, the model has {p} outputs", y.cols())));
                }
                Dataset::new(self.x.clone(), y.clone()).map_err(data_err)
            }
        }
    }
}

enum Column {
    X(usize),
    Y(usize),
    OutputIndex,
}

fn classify(name: &str) -> Option<Column> {
    if name == "output_index" {
        return Some(Column::OutputIndex);
    }
    let (kind, rest) = name.split_at(name.len().min(1));
    if rest.is_empty() || !rest.bytes().all(|b| b.is_ascii_digit()) || (rest.len() > 1 && rest.starts_with('0')) {
        return None;
    }
    let i = rest.parse().ok()?;
    match kind {
        "x" => Some(Column::X(i)),
        "y" => Some(Column::Y(i)),
        _ => None,
    }
}

/// Positions of columns `0..k` given `(index, position)` pairs.
fn contiguous(found: &mut [(usize, usize)], prefix: char) -> Result<Vec<usize>> {
    found.sort_unstable();
    for (want, &(i, _)) in found.iter().enumerate() {
        if i != want {
            return Err(CliError::Data(format!("header is missing column `{prefix}{want}`")));
        }
    }
    Ok(found.iter().map(|&(_, pos)| pos).collect())
}

fn parse_cell(text: &str, line: u64, column: &str, allow_missing: bool) -> Result<f64> {
    let t = text.trim();
    if allow_missing && (t.is_empty() || t.eq_ignore_ascii_case("nan")) {
        return Ok(f64::NAN);
    }
    match t.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(CliError::Data(format!("line {line}, column `{column}`: `{t}` is not a finite number"))),
    }
}

/// Reads a data file; outputs are required unless `inputs_only` is set, in
/// which case any output columns are still parsed.
pub fn read_table(path: &Path, inputs_only: bool) -> Result<Table> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_path(path)
        .map_err(|e| CliError::io(path, e))?;
    let headers = reader.headers().map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?.clone();
    let (mut xs, mut ys, mut idx_col) = (Vec::new(), Vec::new(), None);
    for (pos, name) in headers.iter().enumerate() {
        match classify(name) {
            Some(Column::X(i)) if xs.iter().any(|&(j, _)| j == i) => return Err(CliError::Data(format!("duplicate column `{name}`"))),
            Some(Column::Y(i)) if ys.iter().any(|&(j, _)| j == i) => return Err(CliError::Data(format!("duplicate column `{name}`"))),
            Some(Column::X(i)) => xs.push((i, pos)),
            Some(Column::Y(i)) => ys.push((i, pos)),
            Some(Column::OutputIndex) if idx_col.is_some() => return Err(CliError::Data("duplicate column `output_index`".into())),
            Some(Column::OutputIndex) => idx_col = Some(pos),
            None => return Err(CliError::Data(format!("unrecognised column `{name}` in header"))),
        }
    }
    if xs.is_empty() {
        return Err(CliError::Data("header has no input columns `x0..`".into()));
    }
    let xpos = contiguous(&mut xs, 'x')?;
    let ypos = contiguous(&mut ys, 'y')?;
    if idx_col.is_some() && ypos.len() != 1 {
        return Err(CliError::Data("heterotopic files take exactly one output column `y0`".into()));
    }
    if ypos.is_empty() && !inputs_only {
        return Err(CliError::Data("header has no output columns `y0..`".into()));
    }
    if idx_col.is_some() && ypos.is_empty() {
        return Err(CliError::Data("`output_index` needs a `y0` column".into()));
    }

    let (d, p) = (xpos.len(), ypos.len());
    let (mut xv, mut yv, mut idx) = (Vec::new(), Vec::new(), Vec::new());
    for record in reader.records() {
        let record = record.map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
        let line = record.position().map_or(0, |p| p.line());
        for (i, &pos) in xpos.iter().enumerate() {
            xv.push(parse_cell(&record[pos], line, &format!("x{i}"), false)?);
        }
        for (i, &pos) in ypos.iter().enumerate() {
            yv.push(parse_cell(&record[pos], line, &format!("y{i}"), idx_col.is_none())?);
        }
        if let Some(pos) = idx_col {
            let t = &record[pos];
            idx.push(t.parse::<usize>().map_err(|_| {
                CliError::Data(format!("line {line}, column `output_index`: `{t}` is not a non-negative integer"))
            })?);
        }
    }
    let n = xv.len() / d;
    if n == 0 {
        return Err(CliError::Data(format!("{} has no data rows", path.display())));
    }
    let x = DenseMatrix::from_vec(n, d, xv).map_err(data_err)?;
    let y = if p > 0 { Some(DenseMatrix::from_vec(n, p, yv).map_err(data_err)?) } else { None };
    Ok(Table { x, y, output_index: idx_col.map(|_| idx) })
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

/// Writes a header and rows of numbers as comma-separated text.
pub fn write_csv(path: &Path, header: &[String], rows: impl Iterator<Item = Vec<f64>>) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| CliError::io(path, e))?;
    w.write_record(header).map_err(|e| CliError::io(path, e))?;
    for row in rows {
        w.write_record(row.iter().map(|&v| fmt(v))).map_err(|e| CliError::io(path, e))?;
    }
    w.flush().map_err(|e| CliError::io(path, e))
}

/// Tensor file: a `# shape` line giving the logical dimensions, then the
/// row-major 2-D storage one row per line.
pub fn write_tensor(path: &Path, shape: &[usize], m: &DenseMatrix) -> Result<()> {
    let mut out = String::new();
    let dims: Vec<String> = shape.iter().map(usize::to_string).collect();
    out.push_str(&format!("# shape {}\n", dims.join(" ")));
    for i in 0..m.rows() {
        let row: Vec<String> = m.row(i).iter().map(|&v| fmt(v)).collect();
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| CliError::io(path, e))
}

/// Reads a file written by [`write_tensor`].
pub fn read_tensor(path: &Path) -> Result<(Vec<usize>, DenseMatrix)> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let mut lines = text.lines();
    let shape: Vec<usize> = lines
        .next()
        .and_then(|l| l.strip_prefix("# shape "))
        .ok_or_else(|| CliError::Data(format!("{}: missing shape line", path.display())))?
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| CliError::Data(format!("bad dimension `{t}`"))))
        .collect::<Result<_>>()?;
    let rows: Vec<Vec<f64>> = lines
        .map(|l| l.split_whitespace().map(|t| t.parse().map_err(|_| CliError::Data(format!("bad value `{t}`")))).collect())
        .collect::<Result<_>>()?;
    let cols = rows.first().map_or(0, Vec::len);
    let m = DenseMatrix::from_vec(rows.len(), cols, rows.concat()).map_err(data_err)?;
    Ok((shape, m))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(text: &str) -> Result<Table> {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        std::fs::write(&path, text).unwrap();
        read_table(&path, false)
    }

    #[test]
    fn homotopic_with_missing_outputs() {
        let t = table("y1,x0,y0\n1,0.5,\n2,1.5,nan\n3,2.5,4\n").unwrap();
        assert_eq!(t.x.as_slice(), &[0.5, 1.5, 2.5]);
        let y = t.y.as_ref().unwrap();
        assert!(y[(0, 0)].is_nan() && y[(1, 0)].is_nan());
        assert_eq!((y[(2, 0)], y[(0, 1)]), (4.0, 1.0));
        assert_eq!(t.dataset(2).unwrap().num_observations(), 4);
        assert!(t.dataset(3).is_err());
    }

    #[test]
    fn heterotopic_rows() {
        let t = table("x0,y0,output_index\n0,1,0\n1,2,2\n").unwrap();
        assert_eq!(t.num_outputs(), Some(3));
        let d = t.dataset(3).unwrap();
        assert_eq!(d.y[(1, 2)], 2.0);
        assert!(d.y[(1, 0)].is_nan());
        assert!(t.dataset(2).is_err());
    }

    #[test]
    fn rejects_malformed_files() {
        for bad in [
            "x0,z\n1,2\n",
            "x1,y0\n1,2\n",
            "x0,x0,y0\n1,1,2\n",
            "x0,y0,y1,output_index\n1,2,3,0\n",
            "x0,y0\n1,2\n3\n",
            "x0,y0\nfoo,2\n",
            "x0,y0\n,2\n",
            "x0,y0,output_index\n1,2,-1\n",
            "x0,y0\n",
            "y0\n1\n",
            "x0\n1\n",
            "x00,y0\n1,2\n",
        ] {
            assert!(matches!(table(bad), Err(CliError::Data(_))), "{bad:?}");
        }
    }

    #[test]
    fn tensor_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.txt");
        let m = DenseMatrix::from_fn(4, 2, |i, j| (i as f64 + 0.1) / (j as f64 + 3.0));
        write_tensor(&path, &[2, 2, 2], &m).unwrap();
        let (shape, back) = read_tensor(&path).unwrap();
        assert_eq!(shape, [2, 2, 2]);
        assert_eq!(back, m);
    }
}
