//! Bayesian logistic regression likelihood and its data loading.

use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut1, ArrayViewMut2, Axis, Zip};
use rand::distr::Distribution;
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use super::LogDensity;
use crate::error::{Error, Result};
use crate::math::{sigmoid, softplus};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    Ionosphere,
    Sonar,
}

impl Dataset {
    /// Parameter dimension after the intercept is appended.
    pub fn dim(self) -> usize {
        match self {
            Dataset::Ionosphere => 35,
            Dataset::Sonar => 61,
        }
    }
}

/// Standardized design matrix with a trailing intercept column, and 0/1 labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LogisticData {
    pub x: Array2<f64>,
    pub y: Array1<f64>,
}

impl LogisticData {
    /// Standardizes each feature column (constant columns become zero) and
    /// appends a column of ones.
    pub fn from_raw(features: Array2<f64>, labels: Array1<f64>) -> Result<Self> {
        let (n, p) = features.dim();
        if n == 0 {
            return Err(Error::Schema("no data rows".into()));
        }
        if labels.len() != n {
            return Err(Error::DimensionMismatch { expected: n, got: labels.len() });
        }
        if labels.iter().any(|&y| y != 0.0 && y != 1.0) {
            return Err(Error::Schema("labels must be 0 or 1".into()));
        }
        let mut x = Array2::ones((n, p + 1));
        for j in 0..p {
            let col = features.column(j);
            let mean = col.mean().unwrap_or(0.0);
            let sd = col.mapv(|v| (v - mean).powi(2)).mean().unwrap_or(0.0).sqrt();
            let scale = if sd > 1e-12 { 1.0 / sd } else { 0.0 };
            Zip::from(x.column_mut(j)).and(col).for_each(|o, v| *o = (v - mean) * scale);
        }
        Ok(Self { x, y: labels })
    }

    pub fn dim(&self) -> usize {
        self.x.ncols()
    }

    pub fn len(&self) -> usize {
        self.x.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.x.nrows() == 0
    }

    /// Reads comma-separated rows with the label in the last column. A first
    /// row whose leading field is not numeric is taken as a header. Labels may
    /// be `0`/`1`, `g`/`b` or `M`/`R`.
    pub fn load_csv(path: &Path, expect: Option<Dataset>) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .from_reader(file);
        let data_err = |row: usize, msg: String| Error::Data { path: path.to_path_buf(), row, msg };

        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut labels = Vec::new();
        let mut width = None;
        for (i, rec) in reader.records().enumerate() {
            let row = i + 1;
            let rec = rec.map_err(|e| data_err(row, e.to_string()))?;
            if rec.iter().all(|f| f.is_empty()) {
                continue;
            }
            if i == 0 && rec.get(0).is_some_and(|f| f.parse::<f64>().is_err()) {
                continue;
            }
            if rec.len() < 2 {
                return Err(data_err(row, "expected features followed by a label".into()));
            }
            let w = *width.get_or_insert(rec.len());
            if rec.len() != w {
                return Err(data_err(row, format!("{} columns, expected {w}", rec.len())));
            }
            let feats = rec
                .iter()
                .take(w - 1)
                .map(|f| {
                    f.parse::<f64>()
                        .ok()
                        .filter(|v| v.is_finite())
                        .ok_or_else(|| data_err(row, format!("bad feature value `{f}`")))
                })
                .collect::<Result<Vec<_>>>()?;
            let label = parse_label(&rec[w - 1]).ok_or_else(|| data_err(row, format!("non-binary label `{}`", &rec[w - 1])))?;
            rows.push(feats);
            labels.push(label);
        }
        let n = rows.len();
        if n == 0 {
            return Err(data_err(0, "no data rows".into()));
        }
        let p = rows[0].len();
        if let Some(ds) = expect {
            if p + 1 != ds.dim() {
                return Err(data_err(1, format!("{} features gives D = {}, expected {}", p, p + 1, ds.dim())));
            }
        }
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        let features = Array2::from_shape_vec((n, p), flat).expect("rows have equal width");
        Self::from_raw(features, Array1::from(labels))
    }

    /// Writes raw rows (features then 0/1 label) in the format read by
    /// [`load_csv`](Self::load_csv).
    pub fn write_csv(path: &Path, features: &Array2<f64>, labels: &Array1<f64>) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data {
            path: path.to_path_buf(),
            row: 0,
            msg: e.to_string(),
        })?;
        for (row, y) in features.rows().into_iter().zip(labels) {
            let mut rec: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
            rec.push(format!("{}", *y as u8));
            w.write_record(&rec).map_err(|e| Error::Data { path: path.to_path_buf(), row: 0, msg: e.to_string() })?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Raw features and labels drawn from a logistic model with standard
    /// normal features and weights.
    pub fn synthetic_raw(n: usize, features: usize, seed: u64) -> (Array2<f64>, Array1<f64>) {
        let mut r = rng::seeded(seed);
        let w: Vec<f64> = (0..=features).map(|_| StandardNormal.sample(&mut r)).collect();
        let x = Array2::from_shape_simple_fn((n, features), || StandardNormal.sample(&mut r));
        let y = x
            .rows()
            .into_iter()
            .map(|row| {
                let z = w[features] + row.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
                if r.random::<f64>() < sigmoid(z) {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        (x, y)
    }

    pub fn synthetic(n: usize, features: usize, seed: u64) -> Result<Self> {
        let (x, y) = Self::synthetic_raw(n, features, seed);
        Self::from_raw(x, y)
    }
}

fn parse_label(s: &str) -> Option<f64> {
    match s {
        "1" | "1.0" | "g" | "M" => Some(1.0),
        "0" | "0.0" | "b" | "R" => Some(0.0),
        _ => None,
    }
}

/// `log L(w) = Σ_n [y_n z_n - log(1 + e^{z_n})]`, `z = X w`. Exact Bernoulli
/// log-likelihood, no constants dropped.
#[derive(Debug, Clone)]
pub struct LogisticLikelihood {
    data: LogisticData,
}

impl LogisticLikelihood {
    pub fn new(data: LogisticData) -> Self {
        Self { data }
    }

    pub fn data(&self) -> &LogisticData {
        &self.data
    }
}

impl LogDensity for LogisticLikelihood {
    fn dim(&self) -> usize {
        self.data.dim()
    }

    fn eval_into(&self, w: &[f64], grad: &mut [f64]) -> f64 {
        let w = ndarray::ArrayView1::from(w);
        let z = self.data.x.dot(&w);
        let mut ll = 0.0;
        let resid = Zip::from(&z).and(&self.data.y).map_collect(|&z, &y| {
            ll += y * z - softplus(z);
            y - sigmoid(z)
        });
        let g = self.data.x.t().dot(&resid);
        grad.copy_from_slice(g.as_slice().expect("fresh array"));
        ll
    }

    fn eval_rows(&self, ws: ArrayView2<f64>, mut logp: ArrayViewMut1<f64>, mut grad: ArrayViewMut2<f64>) {
        let mut z = ws.dot(&self.data.x.t());
        let y = self.data.y.view().insert_axis(Axis(0));
        let ll = Zip::from(&z).and_broadcast(&y).map_collect(|&z, &y| y * z - softplus(z));
        logp.assign(&ll.sum_axis(Axis(1)));
        Zip::from(&mut z).and_broadcast(&y).for_each(|z, &y| *z = y - sigmoid(*z));
        grad.assign(&z.dot(&self.data.x));
    }
}
