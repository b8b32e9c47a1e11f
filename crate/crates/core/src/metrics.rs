//! Correlation and error metrics for predicted vs. true quality scores.
//!
//! Conventions:
//! - SROCC assigns average ranks to ties and takes the Pearson correlation of
//!   the ranks; without ties this equals `1 - 6 Σd² / (n(n² - 1))`.
//! - KROCC is tau-a: `2(P - Q) / (n(n - 1))`, tied pairs count as neither.
//! - PLCC and RMSE in a [`MetricBundle`] are computed after mapping the
//!   predictions through a fitted four-parameter logistic.

use std::cmp::Ordering;
use std::io::Write;

use nalgebra::{Matrix4, Vector4};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum MetricError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooFew { need: usize, got: usize },
    #[error("zero variance")]
    ZeroVariance,
    #[error("non-finite input at index {0}")]
    NonFinite(usize),
}

fn check_pair(x: &[f64], y: &[f64], need: usize) -> Result<(), MetricError> {
    if x.len() != y.len() {
        return Err(MetricError::Length(x.len(), y.len()));
    }
    if x.len() < need {
        return Err(MetricError::TooFew { need, got: x.len() });
    }
    if let Some(i) = x.iter().zip(y).position(|(a, b)| !a.is_finite() || !b.is_finite()) {
        return Err(MetricError::NonFinite(i));
    }
    Ok(())
}

fn mean(x: &[f64]) -> f64 {
    x.iter().sum::<f64>() / x.len() as f64
}

/// Pearson linear correlation.
pub fn plcc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(MetricError::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the mean of the ranks they span.
pub fn average_ranks(x: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..x.len()).collect();
    idx.sort_by(|&a, &b| x[a].total_cmp(&x[b]));
    let mut ranks = vec![0.0; x.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && x[idx[j + 1]] == x[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Spearman rank-order correlation.
pub fn srocc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    plcc(&average_ranks(x), &average_ranks(y))
}

/// Kendall rank-order correlation (tau-a).
pub fn krocc(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 2)?;
    let n = x.len();
    let mut concordant: i64 = 0;
    let mut discordant: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            match (x[i].partial_cmp(&x[j]), y[i].partial_cmp(&y[j])) {
                (Some(a), Some(b)) if a != Ordering::Equal && b != Ordering::Equal => {
                    if a == b {
                        concordant += 1;
                    } else {
                        discordant += 1;
                    }
                }
                _ => {}
            }
        }
    }
    Ok(2.0 * (concordant - discordant) as f64 / (n * (n - 1)) as f64)
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64, MetricError> {
    check_pair(x, y, 1)?;
    let s: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((s / x.len() as f64).sqrt())
}

// ---------------------------------------------------------------------------
// Four-parameter logistic mapping

/// `y = β2 + (β1 - β2) / (1 + exp(-(x - β3) / |β4|))`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FourPLParams {
    pub beta1: f64,
    pub beta2: f64,
    pub beta3: f64,
    pub beta4: f64,
}

impl FourPLParams {
    pub fn eval(&self, x: f64) -> f64 {
        let s = logistic_unit((x - self.beta3) / self.beta4.abs());
        self.beta2 + (self.beta1 - self.beta2) * s
    }

    pub fn map(&self, x: &[f64]) -> Vec<f64> {
        x.iter().map(|&v| self.eval(v)).collect()
    }

    fn to_vec(self) -> Vector4<f64> {
        Vector4::new(self.beta1, self.beta2, self.beta3, self.beta4)
    }

    fn from_vec(v: &Vector4<f64>) -> Self {
        Self {
            beta1: v[0],
            beta2: v[1],
            beta3: v[2],
            beta4: v[3],
        }
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.beta1, self.beta2, self.beta3, self.beta4]
    }

    /// Partial derivatives with respect to (β1, β2, β3, β4).
    fn gradient(&self, x: f64) -> [f64; 4] {
        let scale = self.beta4.abs();
        let t = (x - self.beta3) / scale;
        let s = logistic_unit(t);
        let ds = s * (1.0 - s);
        let amp = self.beta1 - self.beta2;
        [s, 1.0 - s, -amp * ds / scale, -amp * ds * t / scale * self.beta4.signum()]
    }
}

fn logistic_unit(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Stop when the relative SSE decrease of an accepted step falls below this.
    pub rel_tol: f64,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 500,
            rel_tol: 1e-10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FourPLFit {
    pub params: FourPLParams,
    pub sse: f64,
    pub iterations: usize,
    pub converged: bool,
}

fn sse(p: &FourPLParams, x: &[f64], y: &[f64]) -> f64 {
    x.iter().zip(y).map(|(&a, &b)| (p.eval(a) - b).powi(2)).sum()
}

fn std_dev(x: &[f64]) -> f64 {
    let m = mean(x);
    (x.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / x.len() as f64).sqrt()
}

/// Levenberg-Marquardt from one starting point.
fn levenberg_marquardt(start: FourPLParams, x: &[f64], y: &[f64], opts: FitOptions) -> FourPLFit {
    let mut p = start;
    let mut cost = sse(&p, x, y);
    let mut lambda = 1e-3;
    let mut converged = false;
    let mut iterations = 0;
    while iterations < opts.max_iter {
        iterations += 1;
        if cost == 0.0 {
            converged = true;
            break;
        }
        let mut jtj = Matrix4::<f64>::zeros();
        let mut jtr = Vector4::<f64>::zeros();
        for (&xi, &yi) in x.iter().zip(y) {
            let g = Vector4::from(p.gradient(xi));
            let r = p.eval(xi) - yi;
            jtj += g * g.transpose();
            jtr += g * r;
        }
        let mut accepted = false;
        while lambda < 1e16 {
            let mut a = jtj;
            for d in 0..4 {
                a[(d, d)] += lambda * jtj[(d, d)].max(1e-12);
            }
            let Some(step) = a.lu().solve(&(-jtr)) else {
                lambda *= 10.0;
                continue;
            };
            let trial = FourPLParams::from_vec(&(p.to_vec() + step));
            let trial_cost = sse(&trial, x, y);
            if trial_cost.is_finite() && trial.beta4 != 0.0 && trial_cost < cost {
                let rel = (cost - trial_cost) / cost;
                p = trial;
                cost = trial_cost;
                lambda = (lambda / 10.0).max(1e-12);
                accepted = true;
                if rel < opts.rel_tol {
                    converged = true;
                }
                break;
            }
            lambda *= 10.0;
        }
        if !accepted {
            // no descent direction left at any damping: a stationary point
            converged = true;
        }
        if converged {
            break;
        }
    }
    FourPLFit {
        params: p,
        sse: cost,
        iterations,
        converged,
    }
}

/// Least-squares fit of the four-parameter logistic mapping `pred → label`.
///
/// Starts from β1 = max(label), β2 = min(label), β3 = mean(pred),
/// β4 = std(pred), and also from the same start with β1/β2 swapped (so a
/// decreasing relation is reachable); keeps the lower-SSE result.
pub fn fit_4pl(pred: &[f64], label: &[f64]) -> Result<FourPLFit, MetricError> {
    fit_4pl_with(pred, label, FitOptions::default())
}

pub fn fit_4pl_with(pred: &[f64], label: &[f64], opts: FitOptions) -> Result<FourPLFit, MetricError> {
    check_pair(pred, label, 5)?;
    let (lo, hi) = label
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if lo == hi {
        return Err(MetricError::ZeroVariance);
    }
    let spread = std_dev(pred);
    let start = FourPLParams {
        beta1: hi,
        beta2: lo,
        beta3: mean(pred),
        beta4: if spread > 0.0 { spread } else { 1.0 },
    };
    let swapped = FourPLParams {
        beta1: lo,
        beta2: hi,
        ..start
    };
    let a = levenberg_marquardt(start, pred, label, opts);
    let b = levenberg_marquardt(swapped, pred, label, opts);
    Ok(if b.sse < a.sse { b } else { a })
}

// ---------------------------------------------------------------------------
// Bundles and reports

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricBundle {
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub n: usize,
    pub fitted: FourPLParams,
    pub warnings: Vec<String>,
}

/// Full metric suite. Rank metrics use raw predictions; PLCC and RMSE use
/// 4PL-mapped predictions. Degenerate inputs (constant predictions) yield 0
/// correlation plus a warning instead of an error.
pub fn metric_bundle(pred: &[f64], label: &[f64]) -> Result<MetricBundle, MetricError> {
    check_pair(pred, label, 5)?;
    let mut warnings = Vec::new();
    let fit = fit_4pl(pred, label)?;
    if !fit.converged {
        warnings.push(format!("4PL fit did not converge in {} iterations", fit.iterations));
    }
    let mapped = fit.params.map(pred);
    let mut or_zero = |name: &str, r: Result<f64, MetricError>| match r {
        Ok(v) => v,
        Err(MetricError::ZeroVariance) => {
            warnings.push(format!("{name}: constant input, reported as 0"));
            0.0
        }
        Err(e) => {
            warnings.push(format!("{name}: {e}"));
            0.0
        }
    };
    let plcc_v = or_zero("plcc", plcc(&mapped, label));
    let srocc_v = or_zero("srocc", srocc(pred, label));
    let krocc_v = krocc(pred, label)?;
    Ok(MetricBundle {
        plcc: plcc_v,
        srocc: srocc_v,
        krocc: krocc_v,
        rmse: rmse(&mapped, label)?,
        n: pred.len(),
        fitted: fit.params,
        warnings,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Conventions {
    pub srocc_ties: String,
    pub krocc_variant: String,
    pub mapping: String,
}

impl Default for Conventions {
    fn default() -> Self {
        Self {
            srocc_ties: "average ranks, Pearson on ranks".into(),
            krocc_variant: "tau-a".into(),
            mapping: "plcc and rmse after 4-parameter logistic fit".into(),
        }
    }
}

/// JSON report for one method on one split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub method_id: String,
    pub split: String,
    pub n: usize,
    pub plcc: f64,
    pub srocc: f64,
    pub krocc: f64,
    pub rmse: f64,
    pub fitted_betas: [f64; 4],
    pub warnings: Vec<String>,
    #[serde(default)]
    pub conventions: Conventions,
}

impl MetricReport {
    pub fn new(method_id: &str, split: &str, b: &MetricBundle) -> Self {
        Self {
            method_id: method_id.to_string(),
            split: split.to_string(),
            n: b.n,
            plcc: b.plcc,
            srocc: b.srocc,
            krocc: b.krocc,
            rmse: b.rmse,
            fitted_betas: b.fitted.as_array(),
            warnings: b.warnings.clone(),
            conventions: Conventions::default(),
        }
    }
}

/// Scatter export: `patch_id,predicted,label`.
pub fn write_scatter(ids: &[String], pred: &[f64], label: &[f64], out: impl Write) -> Result<(), csv::Error> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["patch_id", "predicted", "label"])?;
    for ((id, p), l) in ids.iter().zip(pred).zip(label) {
        w.write_record([id.clone(), p.to_string(), l.to_string()])?;
    }
    w.flush()?;
    Ok(())
}
