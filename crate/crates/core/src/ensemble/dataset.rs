//! Observational datasets and their CSV form.
//!
//! Columns are `x1..xd, t, y`, optionally followed by the potential outcomes
//! `y0, y1` on test sets. Columns are located by header name.

use std::path::Path;

use ndarray::{Array2, ArrayView1};

use crate::error::{ModensError, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `n × d` observed covariates.
    pub covariates: Array2<f64>,
    pub treatments: Vec<u8>,
    pub outcomes: Vec<f64>,
    /// `[y0, y1]` per row, present only where counterfactuals are known.
    pub potential_outcomes: Option<Vec<[f64; 2]>>,
}

impl Dataset {
    pub fn new(
        covariates: Array2<f64>,
        treatments: Vec<u8>,
        outcomes: Vec<f64>,
        potential_outcomes: Option<Vec<[f64; 2]>>,
    ) -> Result<Self> {
        let n = covariates.nrows();
        if treatments.len() != n || outcomes.len() != n {
            return Err(ModensError::domain(format!(
                "inconsistent row counts: {n} covariate rows, {} treatments, {} outcomes",
                treatments.len(),
                outcomes.len()
            )));
        }
        if let Some(po) = &potential_outcomes {
            if po.len() != n {
                return Err(ModensError::domain(format!(
                    "{} potential-outcome rows for {n} observations",
                    po.len()
                )));
            }
        }
        if treatments.iter().any(|&t| t > 1) {
            return Err(ModensError::domain("treatments must be 0 or 1"));
        }
        let finite = covariates.iter().all(|v| v.is_finite())
            && outcomes.iter().all(|v| v.is_finite())
            && potential_outcomes
                .iter()
                .flatten()
                .all(|p| p[0].is_finite() && p[1].is_finite());
        if !finite {
            return Err(ModensError::domain("dataset contains non-finite values"));
        }
        Ok(Self {
            covariates,
            treatments,
            outcomes,
            potential_outcomes,
        })
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    pub fn n_covariates(&self) -> usize {
        self.covariates.ncols()
    }

    pub fn row(&self, i: usize) -> ArrayView1<'_, f64> {
        self.covariates.row(i)
    }

    /// Potential outcomes of `arm` for every row.
    pub fn potential_arm(&self, arm: u8) -> Result<Vec<f64>> {
        let po = self.potential_outcomes.as_ref().ok_or_else(|| {
            ModensError::Config("dataset has no y0/y1 potential-outcome columns".into())
        })?;
        Ok(po.iter().map(|p| p[arm as usize]).collect())
    }

    /// Rows `indices`, in order.
    pub fn select(&self, indices: &[usize]) -> Dataset {
        let d = self.n_covariates();
        let mut cov = Array2::zeros((indices.len(), d));
        for (r, &i) in indices.iter().enumerate() {
            cov.row_mut(r).assign(&self.covariates.row(i));
        }
        Dataset {
            covariates: cov,
            treatments: indices.iter().map(|&i| self.treatments[i]).collect(),
            outcomes: indices.iter().map(|&i| self.outcomes[i]).collect(),
            potential_outcomes: self
                .potential_outcomes
                .as_ref()
                .map(|po| indices.iter().map(|&i| po[i]).collect()),
        }
    }
}

pub fn read_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| ModensError::io(path, e))?;
    read_dataset_from(file, path)
}

fn read_dataset_from(reader: impl std::io::Read, path: &Path) -> Result<Dataset> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| ModensError::parse(path, format!("header: {e}")))?
        .clone();
    let find = |name: &str| headers.iter().position(|h| h.trim() == name);

    let mut x_cols = Vec::new();
    while let Some(c) = find(&format!("x{}", x_cols.len() + 1)) {
        x_cols.push(c);
    }
    let t_col = find("t").ok_or_else(|| ModensError::parse(path, "missing column `t`"))?;
    let y_col = find("y").ok_or_else(|| ModensError::parse(path, "missing column `y`"))?;
    let po_cols = match (find("y0"), find("y1")) {
        (Some(a), Some(b)) => Some((a, b)),
        (None, None) => None,
        _ => {
            return Err(ModensError::parse(
                path,
                "columns `y0` and `y1` must appear together",
            ))
        }
    };
    if x_cols.is_empty() {
        return Err(ModensError::parse(path, "no covariate columns `x1..xd`"));
    }

    let d = x_cols.len();
    let mut cov = Vec::new();
    let mut treatments = Vec::new();
    let mut outcomes = Vec::new();
    let mut potential = po_cols.map(|_| Vec::new());

    for (r, record) in rdr.records().enumerate() {
        let record = record.map_err(|e| ModensError::parse(path, format!("row {}: {e}", r + 1)))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let field = |c: usize| -> Result<f64> {
            let raw = record.get(c).ok_or_else(|| {
                ModensError::parse(
                    path,
                    format!("row {} (line {line}): missing column `{}`", r + 1, &headers[c]),
                )
            })?;
            let v: f64 = raw.trim().parse().map_err(|_| {
                ModensError::parse(
                    path,
                    format!(
                        "row {} (line {line}), column `{}`: cannot parse {raw:?} as a number",
                        r + 1,
                        &headers[c]
                    ),
                )
            })?;
            if !v.is_finite() {
                return Err(ModensError::parse(
                    path,
                    format!("row {} (line {line}), column `{}`: non-finite value", r + 1, &headers[c]),
                ));
            }
            Ok(v)
        };
        for &c in &x_cols {
            cov.push(field(c)?);
        }
        let t = field(t_col)?;
        if t != 0.0 && t != 1.0 {
            return Err(ModensError::parse(
                path,
                format!("row {} (line {line}), column `t`: treatment must be 0 or 1, got {t}", r + 1),
            ));
        }
        treatments.push(t as u8);
        outcomes.push(field(y_col)?);
        if let (Some((a, b)), Some(po)) = (po_cols, potential.as_mut()) {
            po.push([field(a)?, field(b)?]);
        }
    }
    if outcomes.is_empty() {
        return Err(ModensError::parse(path, "no data rows"));
    }
    let n = outcomes.len();
    let covariates = Array2::from_shape_vec((n, d), cov)
        .map_err(|e| ModensError::Internal(format!("covariate shape: {e}")))?;
    Dataset::new(covariates, treatments, outcomes, potential)
}

pub fn write_dataset(path: impl AsRef<Path>, data: &Dataset) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| ModensError::io(path, e))?;
    let mut w = csv::Writer::from_writer(std::io::BufWriter::new(file));
    let csv_err = |e: csv::Error| ModensError::parse(path, e.to_string());

    let d = data.n_covariates();
    let mut header: Vec<String> = (1..=d).map(|k| format!("x{k}")).collect();
    header.push("t".into());
    header.push("y".into());
    if data.potential_outcomes.is_some() {
        header.push("y0".into());
        header.push("y1".into());
    }
    w.write_record(&header).map_err(csv_err)?;

    let mut row = Vec::with_capacity(header.len());
    for i in 0..data.len() {
        row.clear();
        row.extend(data.covariates.row(i).iter().map(|v| v.to_string()));
        row.push(data.treatments[i].to_string());
        row.push(data.outcomes[i].to_string());
        if let Some(po) = &data.potential_outcomes {
            row.push(po[i][0].to_string());
            row.push(po[i][1].to_string());
        }
        w.write_record(&row).map_err(csv_err)?;
    }
    w.flush().map_err(|e| ModensError::io(path, e))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn parse(text: &str) -> Result<Dataset> {
        read_dataset_from(text.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn round_trip_through_file() {
        let data = Dataset::new(
            array![[0.1, 1e-17], [0.3333333333333333, -2.5]],
            vec![0, 1],
            vec![1.25, -7.0],
            Some(vec![[1.0, 2.0], [3.0, 4.0]]),
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.csv");
        write_dataset(&path, &data).unwrap();
        assert_eq!(read_dataset(&path).unwrap(), data);
    }

    #[test]
    fn columns_found_by_name() {
        let d = parse("t,x2,y,x1\n1,0.5,3.0,0.25\n0,0.1,2.0,0.2\n").unwrap();
        assert_eq!(d.covariates, array![[0.25, 0.5], [0.2, 0.1]]);
        assert_eq!(d.treatments, vec![1, 0]);
        assert!(d.potential_outcomes.is_none());
        assert!(d.potential_arm(1).is_err());
    }

    #[test]
    fn errors_name_the_row() {
        let err = parse("x1,t,y\n0.1,0,1.0\n0.2,1,oops\n").unwrap_err().to_string();
        assert!(err.contains("row 2") && err.contains("`y`"), "{err}");
        let err = parse("x1,t,y\n0.1,2,1.0\n").unwrap_err().to_string();
        assert!(err.contains("treatment must be 0 or 1"), "{err}");
        let err = parse("x1,t,y\n0.1,0\n").unwrap_err().to_string();
        assert!(err.contains("row 1"), "{err}");
        assert!(parse("x1,y\n0.1,1\n").is_err());
        assert!(parse("x1,t,y,y0\n0.1,1,1,1\n").is_err());
        assert!(parse("x1,t,y\n").is_err());
    }
}
