//! Effective sample size, sliced Wasserstein-2, run reports and aggregation.

use std::fmt::Write as _;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::distr::Distribution;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{mean, sample_std};
use crate::rng;
use crate::smc::systematic_resample;

/// Normalized ESS `(Σw)² / (N Σw²)` in `(0, 1]`.
pub fn ess(weights: &[f64]) -> Result<f64> {
    if weights.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let s: f64 = weights.iter().sum();
    let s2: f64 = weights.iter().map(|w| w * w).sum();
    if !(s2 > 0.0) || !s.is_finite() {
        return Err(Error::DegenerateWeights);
    }
    Ok((s * s / (weights.len() as f64 * s2)).min(1.0))
}

/// W2 between two one-dimensional empirical measures with uniform weights,
/// by coupling their quantile functions.
pub fn w2_1d(a: &mut [f64], b: &mut [f64]) -> f64 {
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let (mut i, mut j) = (0usize, 0usize);
    let mut u = 0.0;
    let mut acc = 0.0;
    while i < a.len() && j < b.len() {
        let ua = (i + 1) as f64 / na;
        let ub = (j + 1) as f64 / nb;
        let next = ua.min(ub);
        acc += (next - u) * (a[i] - b[j]).powi(2);
        u = next;
        if ua <= ub {
            i += 1;
        }
        if ub <= ua {
            j += 1;
        }
    }
    acc.max(0.0).sqrt()
}

fn resampled(x: ArrayView2<f64>, w: Option<&[f64]>, seed: u64) -> Result<Array2<f64>> {
    match w {
        None => Ok(x.to_owned()),
        Some(w) => {
            if w.len() != x.nrows() {
                return Err(Error::DimensionMismatch { expected: x.nrows(), got: w.len() });
            }
            let idx = systematic_resample(w, x.nrows(), &mut rng::seeded(seed))?;
            Ok(x.select(Axis(0), &idx))
        }
    }
}

/// Mean over `projections` random unit directions of the 1-D W2 distance
/// between the projected samples. Weighted inputs are first resampled
/// systematically to uniform weights.
pub fn sliced_w2(
    a: ArrayView2<f64>,
    wa: Option<&[f64]>,
    b: ArrayView2<f64>,
    wb: Option<&[f64]>,
    projections: usize,
    seed: u64,
) -> Result<f64> {
    if a.ncols() != b.ncols() {
        return Err(Error::DimensionMismatch { expected: a.ncols(), got: b.ncols() });
    }
    if a.nrows() == 0 || b.nrows() == 0 || projections == 0 {
        return Err(Error::EmptyBatch);
    }
    let a = resampled(a, wa, rng::derive_seed(seed, 1))?;
    let b = resampled(b, wb, rng::derive_seed(seed, 2))?;
    let d = a.ncols();
    let mut r = rng::seeded(seed);
    let mut total = 0.0;
    for _ in 0..projections {
        let mut dir: Array1<f64> = (0..d).map(|_| StandardNormal.sample(&mut r)).collect();
        let norm = dir.dot(&dir).sqrt();
        dir /= norm;
        let mut pa = a.dot(&dir).to_vec();
        let mut pb = b.dot(&dir).to_vec();
        total += w2_1d(&mut pa, &mut pb);
    }
    Ok(total / projections as f64)
}

/// One sampling run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub method: String,
    pub target: String,
    pub steps: usize,
    pub n: usize,
    pub seed: u64,
    pub log_z_hat: f64,
    #[serde(default)]
    pub log_z_path: Option<f64>,
    pub ess: f64,
    #[serde(default)]
    pub sliced_w2: Option<f64>,
    pub wall_time_s: f64,
    #[serde(default)]
    pub config: serde_json::Value,
}

impl RunReport {
    pub fn validate(&self) -> Result<()> {
        if !(self.ess > 0.0 && self.ess <= 1.0 + 1e-12) {
            return Err(Error::Schema(format!("ESS {} outside (0, 1]", self.ess)));
        }
        let finite = self.log_z_hat.is_finite()
            && self.log_z_path.is_none_or(f64::is_finite)
            && self.sliced_w2.is_none_or(f64::is_finite);
        if !finite {
            return Err(Error::Schema("non-finite estimate in report".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stat {
    pub mean: f64,
    /// Sample standard deviation; absent for a single run.
    pub std: Option<f64>,
}

impl Stat {
    pub fn of(v: &[f64]) -> Self {
        Self { mean: mean(v), std: (v.len() > 1).then(|| sample_std(v)) }
    }

    fn show(&self) -> String {
        match self.std {
            Some(s) => format!("{:.4} ± {:.4}", self.mean, s),
            None => format!("{:.4}", self.mean),
        }
    }
}

/// Per-metric mean and spread over repeated runs of one configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub method: String,
    pub target: String,
    pub steps: usize,
    pub reps: usize,
    pub log_z_hat: Stat,
    pub log_z_path: Option<Stat>,
    pub ess: Stat,
    pub sliced_w2: Option<Stat>,
}

pub fn aggregate(reports: &[RunReport]) -> Result<Summary> {
    let first = reports.first().ok_or_else(|| Error::Schema("no reports to aggregate".into()))?;
    for r in reports {
        if r.method != first.method || r.target != first.target || r.steps != first.steps {
            return Err(Error::Schema(format!(
                "mixed configurations: {}/{}/T={} vs {}/{}/T={}",
                first.method, first.target, first.steps, r.method, r.target, r.steps
            )));
        }
    }
    let collect = |f: &dyn Fn(&RunReport) -> Option<f64>| -> Option<Stat> {
        let v: Option<Vec<f64>> = reports.iter().map(f).collect();
        v.map(|v| Stat::of(&v))
    };
    Ok(Summary {
        method: first.method.clone(),
        target: first.target.clone(),
        steps: first.steps,
        reps: reports.len(),
        log_z_hat: collect(&|r| Some(r.log_z_hat)).expect("always present"),
        log_z_path: collect(&|r| r.log_z_path),
        ess: collect(&|r| Some(r.ess)).expect("always present"),
        sliced_w2: collect(&|r| r.sliced_w2),
    })
}

const COLUMNS: [&str; 12] = [
    "method", "target", "T", "reps", "log_z_hat", "log_z_hat_std", "log_z_path", "log_z_path_std", "ess",
    "ess_std", "sliced_w2", "sliced_w2_std",
];

fn opt(v: Option<f64>) -> String {
    v.map(|v| format!("{v}")).unwrap_or_default()
}

pub fn summaries_csv(rows: &[Summary]) -> String {
    let mut out = COLUMNS.join(",");
    out.push('\n');
    for s in rows {
        let fields = [
            s.method.clone(),
            s.target.clone(),
            s.steps.to_string(),
            s.reps.to_string(),
            s.log_z_hat.mean.to_string(),
            opt(s.log_z_hat.std),
            opt(s.log_z_path.map(|p| p.mean)),
            opt(s.log_z_path.and_then(|p| p.std)),
            s.ess.mean.to_string(),
            opt(s.ess.std),
            opt(s.sliced_w2.map(|p| p.mean)),
            opt(s.sliced_w2.and_then(|p| p.std)),
        ];
        out.push_str(&fields.join(","));
        out.push('\n');
    }
    out
}

/// Markdown table; `flags` adds a trailing column when given.
pub fn summaries_markdown(rows: &[Summary], flags: Option<&[String]>) -> String {
    let mut out = String::from("| method | target | T | reps | log Z-hat | log Z (path) | ESS | sliced W2 |");
    if flags.is_some() {
        out.push_str(" flag |");
    }
    out.push_str("\n|---|---|---|---|---|---|---|---|");
    if flags.is_some() {
        out.push_str("---|");
    }
    out.push('\n');
    for (i, s) in rows.iter().enumerate() {
        let _ = write!(
            out,
            "| {} | {} | {} | {} | {} | {} | {} | {} |",
            s.method,
            s.target,
            s.steps,
            s.reps,
            s.log_z_hat.show(),
            s.log_z_path.map(|p| p.show()).unwrap_or_else(|| "-".into()),
            s.ess.show(),
            s.sliced_w2.map(|p| p.show()).unwrap_or_else(|| "-".into()),
        );
        if let Some(f) = flags {
            let _ = write!(out, " {} |", f.get(i).map(String::as_str).unwrap_or(""));
        }
        out.push('\n');
    }
    out
}

/// `sqrt(sd_a² + sd_b²)` from per-run spreads.
pub fn combined_se(a: &Stat, b: &Stat) -> f64 {
    (a.std.unwrap_or(0.0).powi(2) + b.std.unwrap_or(0.0).powi(2)).sqrt()
}
