//! Sample-quality metrics and the cost-versus-quality series they feed.
//!
//! Three scalar metrics summarize how well a growing sample set matches a
//! known ground truth:
//!
//! - [`relative_mean_error`]: Euclidean distance of the running sample mean
//!   from the true posterior mean, relative to the truth's norm;
//! - [`squared_bias_second_moment`]: coordinate-averaged squared relative
//!   error of the running second moment;
//! - [`mmd2`]: the unbiased maximum mean discrepancy estimate under an RBF
//!   kernel, with [`median_heuristic`] choosing the bandwidth from
//!   ground-truth samples.
//!
//! [`error_maps`] renders per-pixel mean and variance errors for problems
//! whose parameters form an image grid. [`MetricSeries`] collects metric
//! values at solve-count checkpoints; it is the payload the command-line
//! reports write out.
//!
//! Kernel sums run over row blocks in parallel and are reduced with a fixed
//! pairwise order, so results are bit-identical regardless of thread count.

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Metric values sampled at increasing step checkpoints, aligned with the
/// cumulative exact-operator costs at those checkpoints.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MetricSeries {
    /// Step indices at which the metrics were evaluated (increasing).
    pub checkpoints: Vec<u64>,
    /// Cumulative counted forward solves at each checkpoint.
    pub cost_forward: Vec<u64>,
    /// Cumulative counted inverse solves at each checkpoint.
    pub cost_inverse: Vec<u64>,
    /// Acceptance rate over the steps up to each checkpoint.
    pub acceptance_rate: Vec<f64>,
    /// Relative sample mean error at each checkpoint.
    pub rel_mean_err: Vec<f64>,
    /// Squared bias of the second moment at each checkpoint.
    pub sq_bias_2nd: Vec<f64>,
    /// Unbiased squared maximum mean discrepancy at each checkpoint.
    pub mmd: Vec<f64>,
}

impl MetricSeries {
    pub fn len(&self) -> usize {
        self.checkpoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.checkpoints.is_empty()
    }

    /// Checks the structural invariants: equal-length columns, strictly
    /// increasing checkpoints, non-decreasing costs, NaN-free metrics.
    pub fn validate(&self) -> Result<()> {
        let n = self.checkpoints.len();
        let lengths = [
            self.cost_forward.len(),
            self.cost_inverse.len(),
            self.acceptance_rate.len(),
            self.rel_mean_err.len(),
            self.sq_bias_2nd.len(),
            self.mmd.len(),
        ];
        if lengths.iter().any(|&l| l != n) {
            return Err(Error::InvalidArgument {
                context: "MetricSeries::validate",
                reason: format!("column lengths {lengths:?} do not all equal {n}"),
            });
        }
        if self.checkpoints.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidArgument {
                context: "MetricSeries::validate",
                reason: "checkpoints must increase strictly".into(),
            });
        }
        for (name, costs) in [
            ("cost_forward", &self.cost_forward),
            ("cost_inverse", &self.cost_inverse),
        ] {
            if costs.windows(2).any(|w| w[1] < w[0]) {
                return Err(Error::InvalidArgument {
                    context: "MetricSeries::validate",
                    reason: format!("{name} must be non-decreasing"),
                });
            }
        }
        for (name, column) in [
            ("acceptance_rate", &self.acceptance_rate),
            ("rel_mean_err", &self.rel_mean_err),
            ("sq_bias_2nd", &self.sq_bias_2nd),
            ("mmd", &self.mmd),
        ] {
            if column.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidArgument {
                    context: "MetricSeries::validate",
                    reason: format!("{name} contains NaN"),
                });
            }
        }
        Ok(())
    }
}

/// A relative error together with the fallback marker set when the
/// reference norm vanishes and the absolute error is returned instead.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    pub value: f64,
    pub absolute_fallback: bool,
}

/// Relative Euclidean error of the sample mean: `||mean(samples) - truth|| /
/// ||truth||`, falling back to the absolute error (with a flag) when
/// `||truth|| = 0`.
pub fn relative_mean_error(
    samples: &[DVector<f64>],
    mean_true: &DVector<f64>,
) -> Result<RelativeError> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument {
            context: "relative_mean_error",
            reason: "need at least one sample".into(),
        });
    }
    check_dims("relative_mean_error", samples, mean_true.len())?;
    let mut mean = DVector::zeros(mean_true.len());
    for x in samples {
        mean += x;
    }
    mean /= samples.len() as f64;
    let truth_norm = mean_true.norm();
    let deviation = (mean - mean_true).norm();
    if truth_norm == 0.0 {
        Ok(RelativeError {
            value: deviation,
            absolute_fallback: true,
        })
    } else {
        Ok(RelativeError {
            value: deviation / truth_norm,
            absolute_fallback: false,
        })
    }
}

/// A squared-bias value together with the number of coordinates that were
/// skipped because their true second moment vanishes.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SquaredBias {
    pub value: f64,
    pub skipped_coordinates: usize,
}

/// Squared bias of the second moment: the average over coordinates of
/// `((mean(x_j^2) - truth_j) / truth_j)^2`. Coordinates whose true second
/// moment is zero are skipped and counted in the flag.
pub fn squared_bias_second_moment(
    samples: &[DVector<f64>],
    second_moment_true: &DVector<f64>,
) -> Result<SquaredBias> {
    if samples.is_empty() {
        return Err(Error::InvalidArgument {
            context: "squared_bias_second_moment",
            reason: "need at least one sample".into(),
        });
    }
    let d = second_moment_true.len();
    check_dims("squared_bias_second_moment", samples, d)?;
    let mut second = DVector::zeros(d);
    for x in samples {
        second += x.component_mul(x);
    }
    second /= samples.len() as f64;
    let mut sum = 0.0;
    let mut used = 0usize;
    for j in 0..d {
        let truth = second_moment_true[j];
        if truth == 0.0 {
            continue;
        }
        let rel = (second[j] - truth) / truth;
        sum += rel * rel;
        used += 1;
    }
    if used == 0 {
        return Err(Error::InvalidArgument {
            context: "squared_bias_second_moment",
            reason: "every coordinate has zero true second moment".into(),
        });
    }
    Ok(SquaredBias {
        value: sum / used as f64,
        skipped_coordinates: d - used,
    })
}

fn check_dims(context: &'static str, samples: &[DVector<f64>], d: usize) -> Result<()> {
    if let Some(bad) = samples.iter().find(|x| x.len() != d) {
        return Err(Error::DimensionMismatch {
            context,
            expected: d,
            actual: bad.len(),
        });
    }
    Ok(())
}

/// Sums `values` with a fixed pairwise (divide-and-conquer) order; the
/// result does not depend on how the values were produced in parallel.
fn pairwise_sum(values: &[f64]) -> f64 {
    match values.len() {
        0 => 0.0,
        1 => values[0],
        2 => values[0] + values[1],
        n => {
            let mid = n / 2;
            pairwise_sum(&values[..mid]) + pairwise_sum(&values[mid..])
        }
    }
}

/// Sum over ordered pairs `(i, j)` of `exp(-gamma ||a_i - b_j||^2)`,
/// optionally excluding the diagonal `i == j`. Rows run in parallel; the
/// reduction order is fixed, so the result is thread-count independent.
fn kernel_sum(a: &[DVector<f64>], b: &[DVector<f64>], gamma: f64, skip_diagonal: bool) -> f64 {
    let row_sums: Vec<f64> = a
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            let terms: Vec<f64> = b
                .iter()
                .enumerate()
                .filter(|(j, _)| !(skip_diagonal && i == *j))
                .map(|(_, y)| (-gamma * (x - y).norm_squared()).exp())
                .collect();
            pairwise_sum(&terms)
        })
        .collect();
    pairwise_sum(&row_sums)
}

fn validate_mmd_inputs(x: &[DVector<f64>], y: &[DVector<f64>], gamma: f64) -> Result<()> {
    if x.is_empty() || y.is_empty() {
        return Err(Error::InvalidArgument {
            context: "mmd2",
            reason: "both sample sets must be non-empty".into(),
        });
    }
    if !(gamma > 0.0) || !gamma.is_finite() {
        return Err(Error::InvalidArgument {
            context: "mmd2",
            reason: format!("kernel bandwidth gamma must be positive and finite; got {gamma}"),
        });
    }
    let d = x[0].len();
    check_dims("mmd2", x, d)?;
    check_dims("mmd2", y, d)?;
    Ok(())
}

/// Unbiased squared maximum mean discrepancy between `x` and `y` under the
/// RBF kernel `k(a, b) = exp(-gamma ||a - b||^2)`. Within-set sums exclude
/// the diagonal, so both sets need at least two points.
pub fn mmd2(x: &[DVector<f64>], y: &[DVector<f64>], gamma: f64) -> Result<f64> {
    validate_mmd_inputs(x, y, gamma)?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    if x.len() < 2 || y.len() < 2 {
        return Err(Error::InvalidArgument {
            context: "mmd2",
            reason: "the unbiased estimator needs at least two points per set".into(),
        });
    }
    let xx = kernel_sum(x, x, gamma, true) / (n * (n - 1.0));
    let yy = kernel_sum(y, y, gamma, true) / (m * (m - 1.0));
    let xy = kernel_sum(x, y, gamma, false) / (n * m);
    Ok(xx + yy - 2.0 * xy)
}

/// Biased squared maximum mean discrepancy (diagonal terms included).
/// Identical multisets give exactly zero.
pub fn mmd2_biased(x: &[DVector<f64>], y: &[DVector<f64>], gamma: f64) -> Result<f64> {
    validate_mmd_inputs(x, y, gamma)?;
    let (n, m) = (x.len() as f64, y.len() as f64);
    let xx = kernel_sum(x, x, gamma, false) / (n * n);
    let yy = kernel_sum(y, y, gamma, false) / (m * m);
    let xy = kernel_sum(x, y, gamma, false) / (n * m);
    Ok(xx + yy - 2.0 * xy)
}

/// Largest ground-truth subset size the median heuristic considers.
pub const MEDIAN_HEURISTIC_CAP: usize = 10_000;

/// At most `cap` of the given points, subsampled without replacement with a
/// seeded generator when there are more.
fn capped_subset(points: &[DVector<f64>], cap: usize, seed: u64) -> Vec<DVector<f64>> {
    if points.len() <= cap {
        return points.to_vec();
    }
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut picks: Vec<usize> = rand::seq::index::sample(&mut rng, points.len(), cap).into_vec();
    picks.sort_unstable();
    picks.into_iter().map(|i| points[i].clone()).collect()
}

/// RBF bandwidth from ground-truth samples: `gamma = 1 / median` of the
/// pairwise squared distances (upper median), subsampling to
/// [`MEDIAN_HEURISTIC_CAP`] points with the seed when the set is larger.
pub fn median_heuristic(truth: &[DVector<f64>], seed: u64) -> Result<f64> {
    if truth.len() < 2 {
        return Err(Error::InvalidArgument {
            context: "median_heuristic",
            reason: "need at least two ground-truth points".into(),
        });
    }
    check_dims("median_heuristic", truth, truth[0].len())?;
    let points = capped_subset(truth, MEDIAN_HEURISTIC_CAP, seed);
    let mut distances = Vec::with_capacity(points.len() * (points.len() - 1) / 2);
    for i in 0..points.len() {
        for j in (i + 1)..points.len() {
            distances.push((&points[i] - &points[j]).norm_squared());
        }
    }
    let mid = distances.len() / 2;
    let (_, median, _) = distances.select_nth_unstable_by(mid, |a, b| {
        a.partial_cmp(b).expect("finite distances")
    });
    let median = *median;
    if !(median > 0.0) {
        return Err(Error::InvalidArgument {
            context: "median_heuristic",
            reason: "median pairwise distance is zero; the points are degenerate".into(),
        });
    }
    Ok(1.0 / median)
}

/// Per-pixel absolute error maps for image-shaped parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ErrorMaps {
    /// `|mean(samples)_j - truth_mean_j|`, reshaped row-major.
    pub mean_map: DMatrix<f64>,
    /// `|var(samples)_j - truth_var_j|` with the `t - 1` denominator.
    pub var_map: DMatrix<f64>,
}

/// Builds mean and variance error maps on a `rows x cols` grid (row-major
/// pixel order). The variance estimator divides by `t - 1`, so at least two
/// samples are required.
pub fn error_maps(
    samples: &[DVector<f64>],
    truth_mean: &DVector<f64>,
    truth_var: &DVector<f64>,
    shape: (usize, usize),
) -> Result<ErrorMaps> {
    let (rows, cols) = shape;
    let d = rows * cols;
    if truth_mean.len() != d || truth_var.len() != d {
        return Err(Error::DimensionMismatch {
            context: "error_maps",
            expected: d,
            actual: truth_mean.len(),
        });
    }
    if samples.len() < 2 {
        return Err(Error::InvalidArgument {
            context: "error_maps",
            reason: "the variance map needs at least two samples".into(),
        });
    }
    check_dims("error_maps", samples, d)?;
    let t = samples.len() as f64;
    let mut mean = DVector::zeros(d);
    for x in samples {
        mean += x;
    }
    mean /= t;
    let mut variance = DVector::zeros(d);
    for x in samples {
        let centered = x - &mean;
        variance += centered.component_mul(&centered);
    }
    variance /= t - 1.0;
    let as_map = |values: DVector<f64>| {
        DMatrix::from_fn(rows, cols, |r, c| values[r * cols + c].abs())
    };
    Ok(ErrorMaps {
        mean_map: as_map(mean - truth_mean),
        var_map: as_map(variance - truth_var),
    })
}

/// Least-squares slope of `ln(err)` against `ln(t)`. Points with
/// non-positive coordinates are skipped; at least two must survive.
pub fn log_log_slope(points: &[(f64, f64)]) -> Result<f64> {
    let logs: Vec<(f64, f64)> = points
        .iter()
        .filter(|(t, e)| *t > 0.0 && *e > 0.0)
        .map(|(t, e)| (t.ln(), e.ln()))
        .collect();
    if logs.len() < 2 {
        return Err(Error::InvalidArgument {
            context: "log_log_slope",
            reason: format!(
                "need at least two positive points for a slope; got {}",
                logs.len()
            ),
        });
    }
    let n = logs.len() as f64;
    let mean_x = logs.iter().map(|(x, _)| x).sum::<f64>() / n;
    let mean_y = logs.iter().map(|(_, y)| y).sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut sxy = 0.0;
    for (x, y) in &logs {
        sxx += (x - mean_x) * (x - mean_x);
        sxy += (x - mean_x) * (y - mean_y);
    }
    if sxx == 0.0 {
        return Err(Error::InvalidArgument {
            context: "log_log_slope",
            reason: "all abscissae are equal".into(),
        });
    }
    Ok(sxy / sxx)
}
