//! CSV ingestion. Every file has a header row; numbers use a decimal point.
//!
//! - regression: `x_1, ..., x_d, y`
//! - multi-task: `task, x_1, ..., x_d, y` (task ids are arbitrary labels,
//!   ordered by first appearance)
//! - stream clustering: `obs, point, c_1, ..., c_q`; each observation must
//!   list every point exactly once

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use nalgebra::DMatrix;

use super::cluster::{ClusterParams, StreamClusterData};
use super::multitask::{MultiTaskData, TaskData};
use super::robust::{RobustParams, RobustRegressionData};
use super::ProblemError;

fn parse_field(s: &str, line: usize, col: usize) -> Result<f64, ProblemError> {
    let v: f64 = s
        .trim()
        .parse()
        .map_err(|_| ProblemError::Data(format!("line {line}, column {col}: cannot parse {s:?}")))?;
    if !v.is_finite() {
        return Err(ProblemError::Data(format!("line {line}, column {col}: non-finite value")));
    }
    Ok(v)
}

/// Numeric rows with a common width of at least `min_cols`.
fn read_rows<R: Read>(reader: R, min_cols: usize) -> Result<Vec<Vec<f64>>, ProblemError> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let width = rdr
        .headers()
        .map_err(|e| ProblemError::Data(e.to_string()))?
        .len();
    if width < min_cols {
        return Err(ProblemError::Data(format!("expected at least {min_cols} columns, found {width}")));
    }
    let mut rows = Vec::new();
    for (r, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| ProblemError::Data(e.to_string()))?;
        let line = r + 2;
        let row = rec
            .iter()
            .enumerate()
            .map(|(c, s)| parse_field(s, line, c + 1))
            .collect::<Result<Vec<_>, _>>()?;
        rows.push(row);
    }
    if rows.is_empty() {
        return Err(ProblemError::Data("no data rows".into()));
    }
    Ok(rows)
}

fn open(path: &Path) -> Result<std::fs::File, ProblemError> {
    std::fs::File::open(path).map_err(|e| ProblemError::Data(format!("{}: {e}", path.display())))
}

pub fn read_regression<R: Read>(reader: R, params: RobustParams) -> Result<RobustRegressionData, ProblemError> {
    let rows = read_rows(reader, 2)?;
    let d = rows[0].len() - 1;
    let features = DMatrix::from_fn(rows.len(), d, |i, j| rows[i][j]);
    let labels = rows.iter().map(|r| r[d]).collect();
    RobustRegressionData::new(features, labels, params)
}

pub fn load_regression(path: &Path, params: RobustParams) -> Result<RobustRegressionData, ProblemError> {
    read_regression(open(path)?, params)
}

pub fn read_multitask<R: Read>(reader: R, lambda: f64) -> Result<MultiTaskData, ProblemError> {
    let rows = read_rows(reader, 3)?;
    let d = rows[0].len() - 2;
    let mut order: Vec<u64> = Vec::new();
    let mut groups: BTreeMap<u64, Vec<&Vec<f64>>> = BTreeMap::new();
    for r in &rows {
        let id = r[0].to_bits();
        if !groups.contains_key(&id) {
            order.push(id);
        }
        groups.entry(id).or_default().push(r);
    }
    let tasks = order
        .iter()
        .map(|id| {
            let g = &groups[id];
            TaskData {
                features: DMatrix::from_fn(g.len(), d, |i, j| g[i][j + 1]),
                targets: g.iter().map(|r| r[d + 1]).collect(),
            }
        })
        .collect();
    MultiTaskData::new(tasks, lambda)
}

pub fn load_multitask(path: &Path, lambda: f64) -> Result<MultiTaskData, ProblemError> {
    read_multitask(open(path)?, lambda)
}

fn as_index(v: f64, what: &str) -> Result<usize, ProblemError> {
    if v < 0.0 || v.fract() != 0.0 || v > u32::MAX as f64 {
        return Err(ProblemError::Data(format!("{what} index {v} is not a non-negative integer")));
    }
    Ok(v as usize)
}

/// Returns the `d x q` positions of each observation, in observation order.
pub fn read_observations<R: Read>(reader: R) -> Result<Vec<DMatrix<f64>>, ProblemError> {
    let rows = read_rows(reader, 3)?;
    let q = rows[0].len() - 2;
    let mut obs: BTreeMap<usize, BTreeMap<usize, &[f64]>> = BTreeMap::new();
    for r in &rows {
        let o = as_index(r[0], "observation")?;
        let p = as_index(r[1], "point")?;
        if obs.entry(o).or_default().insert(p, &r[2..]).is_some() {
            return Err(ProblemError::Data(format!("observation {o} lists point {p} twice")));
        }
    }
    let points: Vec<usize> = obs.values().next().map(|m| m.keys().copied().collect()).unwrap_or_default();
    obs.iter()
        .map(|(o, m)| {
            if m.keys().copied().ne(points.iter().copied()) {
                return Err(ProblemError::Data(format!("observation {o} does not list the same points")));
            }
            Ok(DMatrix::from_fn(points.len(), q, |i, j| m[&points[i]][j]))
        })
        .collect()
}

pub fn load_cluster(path: &Path, k: usize, params: ClusterParams) -> Result<StreamClusterData, ProblemError> {
    let obs = read_observations(open(path)?)?;
    StreamClusterData::from_observations(&obs, k, params)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn regression_columns() {
        let csv = "a,b,y\n1.0,2.0,3.5\n-1,0.5,0\n2,2,1e-1\n";
        let d = read_regression(csv.as_bytes(), RobustParams::default()).unwrap();
        assert_eq!(d.features.shape(), (3, 2));
        assert_eq!(d.labels, vec![3.5, 0.0, 0.1]);
        assert_eq!(d.features[(1, 1)], 0.5);
    }

    #[test]
    fn rejects_comma_decimal_and_garbage() {
        let csv = "a,y\n\"1,5\",2\n";
        assert!(matches!(read_regression(csv.as_bytes(), RobustParams::default()), Err(ProblemError::Data(_))));
        assert!(read_regression("a,y\nnan,1\n".as_bytes(), RobustParams::default()).is_err());
        assert!(read_regression("a,y\n".as_bytes(), RobustParams::default()).is_err());
    }

    #[test]
    fn multitask_groups_by_first_appearance() {
        let csv = "t,x,y\n7,1,2\n3,0,1\n7,2,4\n";
        let d = read_multitask(csv.as_bytes(), 0.1).unwrap();
        assert_eq!(d.n_tasks(), 2);
        assert_eq!(d.tasks[0].targets, vec![2.0, 4.0]);
        assert_eq!(d.tasks[1].targets, vec![1.0]);
    }

    #[test]
    fn observations_are_assembled() {
        let csv = "obs,point,x,y\n0,0,0,0\n0,1,1,0\n0,2,0,2\n1,2,0,1\n1,0,0,0\n1,1,3,0\n";
        let obs = read_observations(csv.as_bytes()).unwrap();
        assert_eq!(obs.len(), 2);
        assert_eq!(obs[1][(2, 1)], 1.0);
        assert_eq!(obs[1][(1, 0)], 3.0);
        let bad = "obs,point,x\n0,0,1\n0,1,2\n1,0,1\n";
        assert!(read_observations(bad.as_bytes()).is_err());
    }
}
