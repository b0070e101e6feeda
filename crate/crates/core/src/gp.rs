//! Stationary Gaussian process with power-exponential correlation, fitted by
//! profile maximum likelihood.
//!
//! The model is `y(x) = mu + Z(x)` with `Cov(Z(xi), Z(xj)) = sigma2 * R(xi, xj)`
//! and `R(xi, xj) = exp(-sum_k theta_k |xik - xjk|^p_k)`. For a fixed `theta`
//! the mean and variance have closed forms, so only `theta` is searched.
//! A small nugget is added to the diagonal of `R` and escalated when the
//! Cholesky factorization fails.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::design::{lhd, Design, LhdOptions};
use crate::optim::{nelder_mead, NelderMeadOptions};

#[derive(Debug, Error)]
pub enum GpError {
    #[error("invalid correlation parameters: {0}")]
    InvalidParams(String),
    #[error("need at least 2 training points, got {0}")]
    TooFewPoints(usize),
    #[error("training data contains non-finite values")]
    NonFinite,
    #[error("design has {design} rows but {responses} responses")]
    SizeMismatch { design: usize, responses: usize },
    #[error("correlation matrix is not positive definite with nugget {0:e}")]
    Factorization(f64),
    #[error("no likelihood start produced a finite objective")]
    AllStartsFailed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpOptions {
    /// Smoothness per dimension; `None` means Gaussian correlation (all 2).
    pub p: Option<Vec<f64>>,
    pub nugget_start: f64,
    pub nugget_max: f64,
    pub theta_min: f64,
    pub theta_max: f64,
    pub starts: usize,
    pub seed: u64,
    pub local: NelderMeadOptions,
}

impl Default for GpOptions {
    fn default() -> Self {
        GpOptions {
            p: None,
            nugget_start: 1e-8,
            nugget_max: 1e-4,
            theta_min: 1e-3,
            theta_max: 1e3,
            starts: 20,
            seed: 0,
            local: NelderMeadOptions {
                max_evals: 200,
                f_tol: 1e-8,
                x_tol: 1e-6,
                initial_step: 0.1,
            },
        }
    }
}

fn check_params(d: usize, theta: &[f64], p: &[f64]) -> Result<(), GpError> {
    if theta.len() != d || p.len() != d {
        return Err(GpError::InvalidParams(format!(
            "expected {d} theta and p values, got {} and {}",
            theta.len(),
            p.len()
        )));
    }
    if let Some(t) = theta.iter().find(|t| !(**t >= 0.0) || !t.is_finite()) {
        return Err(GpError::InvalidParams(format!("theta must be >= 0, got {t}")));
    }
    if let Some(pk) = p.iter().find(|pk| !(**pk > 0.0 && **pk <= 2.0)) {
        return Err(GpError::InvalidParams(format!("p must lie in (0, 2], got {pk}")));
    }
    Ok(())
}

#[inline]
fn correlation(a: &[f64], b: &[f64], theta: &[f64], p: &[f64]) -> f64 {
    let mut s = 0.0;
    for k in 0..a.len() {
        let h = (a[k] - b[k]).abs();
        let term = if p[k] == 2.0 { h * h } else { h.powf(p[k]) };
        s += theta[k] * term;
    }
    (-s).exp()
}

/// The `n x n` power-exponential correlation matrix of the design rows.
pub fn corr_matrix(x: &Design, theta: &[f64], p: &[f64]) -> Result<DMatrix<f64>, GpError> {
    check_params(x.dim(), theta, p)?;
    Ok(corr_matrix_unchecked(x, theta, p))
}

fn corr_matrix_unchecked(x: &Design, theta: &[f64], p: &[f64]) -> DMatrix<f64> {
    let n = x.n();
    let mut r = DMatrix::from_element(n, n, 1.0);
    for i in 0..n {
        for j in 0..i {
            let v = correlation(x.row(i), x.row(j), theta, p);
            r[(i, j)] = v;
            r[(j, i)] = v;
        }
    }
    r
}

pub fn corr_vector(x: &Design, point: &[f64], theta: &[f64], p: &[f64]) -> DVector<f64> {
    DVector::from_iterator(
        x.n(),
        x.rows().iter().map(|row| correlation(row, point, theta, p)),
    )
}

fn sample_variance(y: &[f64]) -> f64 {
    let n = y.len() as f64;
    let mean = y.iter().sum::<f64>() / n;
    y.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0).max(1.0)
}

fn variance_floor(y: &[f64]) -> f64 {
    (1e-12 * sample_variance(y)).max(f64::MIN_POSITIVE)
}

/// Closed-form mean and variance for a given correlation factor.
struct Profile {
    mu: f64,
    sigma2: f64,
    neg_loglik: f64,
    chol: Cholesky<f64, Dyn>,
}

fn profile_with_factor(chol: Cholesky<f64, Dyn>, y: &[f64]) -> Profile {
    let n = y.len();
    let yv = DVector::from_column_slice(y);
    let ones = DVector::from_element(n, 1.0);
    let r_inv_y = chol.solve(&yv);
    let r_inv_1 = chol.solve(&ones);
    let mu = ones.dot(&r_inv_y) / ones.dot(&r_inv_1);
    let resid = yv - DVector::from_element(n, mu);
    let r_inv_resid = chol.solve(&resid);
    let sigma2 = (resid.dot(&r_inv_resid) / n as f64).max(variance_floor(y));
    let log_det = 2.0 * chol.l_dirty().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Profile {
        mu,
        sigma2,
        neg_loglik: n as f64 * sigma2.ln() + log_det,
        chol,
    }
}

fn factor(mut r: DMatrix<f64>, nugget: f64) -> Option<Cholesky<f64, Dyn>> {
    for i in 0..r.nrows() {
        r[(i, i)] += nugget;
    }
    Cholesky::new(r)
}

fn validate_data(x: &Design, y: &[f64]) -> Result<(), GpError> {
    if x.n() != y.len() {
        return Err(GpError::SizeMismatch {
            design: x.n(),
            responses: y.len(),
        });
    }
    if y.len() < 2 {
        return Err(GpError::TooFewPoints(y.len()));
    }
    if y.iter().any(|v| !v.is_finite()) || x.rows().iter().flatten().any(|v| !v.is_finite()) {
        return Err(GpError::NonFinite);
    }
    Ok(())
}

/// Negative profile log-likelihood `n ln(sigma2_hat) + ln det(R + nugget I)`
/// (constants dropped) at a fixed nugget.
pub fn neg_profile_loglik(
    theta: &[f64],
    x: &Design,
    y: &[f64],
    p: &[f64],
    nugget: f64,
) -> Result<f64, GpError> {
    validate_data(x, y)?;
    check_params(x.dim(), theta, p)?;
    let chol = factor(corr_matrix_unchecked(x, theta, p), nugget)
        .ok_or(GpError::Factorization(nugget))?;
    Ok(profile_with_factor(chol, y).neg_loglik)
}

/// Factorizes with the smallest nugget on the ladder `start, 10*start, ...,
/// max` that succeeds.
fn escalating_profile(
    x: &Design,
    y: &[f64],
    theta: &[f64],
    p: &[f64],
    opts: &GpOptions,
) -> Result<(Profile, f64), GpError> {
    let r = corr_matrix_unchecked(x, theta, p);
    let mut nugget = opts.nugget_start;
    loop {
        if let Some(chol) = factor(r.clone(), nugget) {
            let prof = profile_with_factor(chol, y);
            if prof.neg_loglik.is_finite() {
                return Ok((prof, nugget));
            }
        }
        if nugget >= opts.nugget_max {
            return Err(GpError::Factorization(nugget));
        }
        nugget = (nugget * 10.0).min(opts.nugget_max);
    }
}

/// A fitted GP. Immutable once built; prediction only borrows it.
#[derive(Debug, Clone)]
pub struct GpFit {
    pub mu: f64,
    pub sigma2: f64,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub nugget: f64,
    pub neg_loglik: f64,
    chol: Cholesky<f64, Dyn>,
    /// `(R + nugget I)^-1 (y - mu 1)`.
    weights: DVector<f64>,
    x: Design,
    y: Vec<f64>,
}

/// Serializable audit record of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GpFitDump {
    pub mu: f64,
    pub sigma2: f64,
    pub theta: Vec<f64>,
    pub p: Vec<f64>,
    pub nugget: f64,
    pub design: Vec<Vec<f64>>,
    pub responses: Vec<f64>,
}

impl GpFit {
    fn from_profile(x: Design, y: Vec<f64>, theta: Vec<f64>, p: Vec<f64>, prof: Profile, nugget: f64) -> Self {
        let resid = DVector::from_iterator(y.len(), y.iter().map(|v| v - prof.mu));
        let weights = prof.chol.solve(&resid);
        GpFit {
            mu: prof.mu,
            sigma2: prof.sigma2,
            theta,
            p,
            nugget,
            neg_loglik: prof.neg_loglik,
            chol: prof.chol,
            weights,
            x,
            y,
        }
    }

    /// Builds a fit at fixed `theta`, `p` and nugget, profiling out the mean
    /// and variance.
    pub fn with_params(
        x: Design,
        y: Vec<f64>,
        theta: Vec<f64>,
        p: Vec<f64>,
        nugget: f64,
    ) -> Result<Self, GpError> {
        validate_data(&x, &y)?;
        check_params(x.dim(), &theta, &p)?;
        let chol = factor(corr_matrix_unchecked(&x, &theta, &p), nugget)
            .ok_or(GpError::Factorization(nugget))?;
        let prof = profile_with_factor(chol, &y);
        Ok(Self::from_profile(x, y, theta, p, prof, nugget))
    }

    pub fn design(&self) -> &Design {
        &self.x
    }

    pub fn responses(&self) -> &[f64] {
        &self.y
    }

    /// Lower-triangular factor of `R + nugget I`.
    pub fn chol_factor(&self) -> DMatrix<f64> {
        self.chol.l()
    }

    /// Best linear unbiased prediction and its mean squared error, with the
    /// error clamped at zero.
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let r = corr_vector(&self.x, point, &self.theta, &self.p);
        let yhat = self.mu + r.dot(&self.weights);
        let v = self
            .chol
            .l_dirty()
            .solve_lower_triangular(&r)
            .expect("cholesky factor has a nonzero diagonal");
        let s2 = (self.sigma2 * (1.0 - v.dot(&v))).max(0.0);
        (yhat, s2)
    }

    pub fn dump(&self) -> GpFitDump {
        GpFitDump {
            mu: self.mu,
            sigma2: self.sigma2,
            theta: self.theta.clone(),
            p: self.p.clone(),
            nugget: self.nugget,
            design: self.x.rows().to_vec(),
            responses: self.y.clone(),
        }
    }
}

pub fn gp_predict(fit: &GpFit, point: &[f64]) -> (f64, f64) {
    fit.predict(point)
}

/// Fits `theta` by multistart Nelder-Mead on `log10(theta)` over
/// `[theta_min, theta_max]^d`. Starts come from a seeded LHD; the best
/// objective wins, earlier starts winning ties.
pub fn fit_gp(x: &Design, y: &[f64], opts: &GpOptions) -> Result<GpFit, GpError> {
    validate_data(x, y)?;
    let d = x.dim();
    let p = opts.p.clone().unwrap_or_else(|| vec![2.0; d]);
    check_params(d, &vec![1.0; d], &p)?;

    let lo = vec![opts.theta_min.log10(); d];
    let hi = vec![opts.theta_max.log10(); d];
    let to_theta = |z: &[f64]| z.iter().map(|v| 10f64.powf(*v)).collect::<Vec<_>>();
    let objective = |z: &[f64]| match escalating_profile(x, y, &to_theta(z), &p, opts) {
        Ok((prof, _)) => prof.neg_loglik,
        Err(_) => f64::INFINITY,
    };

    let starts = lhd(opts.starts.max(1), d, opts.seed, &LhdOptions::random());
    let mut best: Option<(Vec<f64>, f64)> = None;
    for s in starts.rows() {
        let z0: Vec<f64> = s.iter().zip(&lo).zip(&hi).map(|((u, l), h)| l + u * (h - l)).collect();
        let m = nelder_mead(objective, &z0, &lo, &hi, &opts.local);
        if m.f.is_finite() && best.as_ref().is_none_or(|(_, f)| m.f < *f) {
            best = Some((m.x, m.f));
        }
    }
    let (z, _) = best.ok_or(GpError::AllStartsFailed)?;
    let theta = to_theta(&z);
    let (prof, nugget) = escalating_profile(x, y, &theta, &p, opts)?;
    Ok(GpFit::from_profile(x.clone(), y.to_vec(), theta, p, prof, nugget))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn design1(xs: &[f64]) -> Design {
        Design::from_rows(xs.iter().map(|v| vec![*v]).collect())
    }

    /// Dense-inverse evaluation of the predictor and its MSE.
    fn dense_predict(x: &Design, y: &[f64], theta: &[f64], p: &[f64], nugget: f64, pt: &[f64]) -> (f64, f64) {
        let n = x.n();
        let mut r = DMatrix::zeros(n, n);
        for i in 0..n {
            for j in 0..n {
                let mut s = 0.0;
                for k in 0..x.dim() {
                    s += theta[k] * (x.row(i)[k] - x.row(j)[k]).abs().powf(p[k]);
                }
                r[(i, j)] = (-s).exp() + if i == j { nugget } else { 0.0 };
            }
        }
        let rinv = r.try_inverse().unwrap();
        let ones = DVector::from_element(n, 1.0);
        let yv = DVector::from_column_slice(y);
        let mu = (ones.transpose() * &rinv * &yv)[0] / (ones.transpose() * &rinv * &ones)[0];
        let res = &yv - &ones * mu;
        let sigma2 = (res.transpose() * &rinv * &res)[0] / n as f64;
        let rv = DVector::from_iterator(
            n,
            (0..n).map(|i| {
                let s: f64 = (0..x.dim())
                    .map(|k| theta[k] * (x.row(i)[k] - pt[k]).abs().powf(p[k]))
                    .sum();
                (-s).exp()
            }),
        );
        let yhat = mu + (rv.transpose() * &rinv * &res)[0];
        let s2 = sigma2 * (1.0 - (rv.transpose() * &rinv * &rv)[0]);
        (yhat, s2.max(0.0))
    }

    #[test]
    fn zero_theta_gives_ones() {
        let x = design1(&[0.1, 0.5, 0.9]);
        let r = corr_matrix(&x, &[0.0], &[2.0]).unwrap();
        assert!(r.iter().all(|v| *v == 1.0));
    }

    #[test]
    fn unit_distance_entry() {
        let x = design1(&[0.0, 1.0]);
        let r = corr_matrix(&x, &[1.0], &[2.0]).unwrap();
        assert!((r[(0, 1)] - 0.367_879_441_171_442_3).abs() < 1e-15);
    }

    #[test]
    fn matches_double_loop() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let rows: Vec<Vec<f64>> = (0..5).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let x = Design::from_rows(rows.clone());
        let r = corr_matrix(&x, &[2.0, 3.0], &[2.0, 2.0]).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let h0 = rows[i][0] - rows[j][0];
                let h1 = rows[i][1] - rows[j][1];
                let want = (-(2.0 * h0 * h0 + 3.0 * h1 * h1)).exp();
                assert!((r[(i, j)] - want).abs() < 1e-15);
            }
        }
        assert!(r.iter().all(|v| *v > 0.0 && *v <= 1.0));
        assert_eq!(r.clone(), r.transpose());
    }

    #[test]
    fn rejects_bad_params() {
        let x = design1(&[0.0, 1.0]);
        assert!(corr_matrix(&x, &[-1.0], &[2.0]).is_err());
        assert!(corr_matrix(&x, &[1.0], &[2.5]).is_err());
        assert!(corr_matrix(&x, &[1.0], &[0.0]).is_err());
    }

    #[test]
    fn degenerate_correlation_is_finite() {
        let x = design1(&[0.2, 0.8]);
        let v = neg_profile_loglik(&[0.0], &x, &[1.0, 2.0], &[2.0], 1e-6).unwrap();
        assert!(v.is_finite());
    }

    #[test]
    fn constant_response_hits_variance_floor() {
        let x = design1(&[0.1, 0.4, 0.7]);
        let v = neg_profile_loglik(&[1.0], &x, &[3.0, 3.0, 3.0], &[2.0], 1e-8).unwrap();
        assert!(v.is_finite() && v < -100.0, "{v}");
        let fit = GpFit::with_params(x, vec![3.0; 3], vec![1.0], vec![2.0], 1e-8).unwrap();
        assert!(fit.sigma2 > 0.0 && fit.sigma2 < 1e-20);
    }

    #[test]
    fn loglik_curve_matches_dense_oracle() {
        let xs = [0.05, 0.2, 0.41, 0.6, 0.77, 0.95];
        let x = design1(&xs);
        let y: Vec<f64> = xs.iter().map(|v| (6.0 * v).sin() + v).collect();
        for k in 0..50 {
            let theta = 10f64.powf(-1.0 + 3.0 * k as f64 / 49.0);
            let fast = neg_profile_loglik(&[theta], &x, &y, &[2.0], 1e-8).unwrap();
            let n = xs.len();
            let mut r = DMatrix::zeros(n, n);
            for i in 0..n {
                for j in 0..n {
                    r[(i, j)] = (-theta * (xs[i] - xs[j]).powi(2)).exp() + if i == j { 1e-8 } else { 0.0 };
                }
            }
            let det = r.determinant();
            let rinv = r.try_inverse().unwrap();
            let ones = DVector::from_element(n, 1.0);
            let yv = DVector::from_column_slice(&y);
            let mu = (ones.transpose() * &rinv * &yv)[0] / (ones.transpose() * &rinv * &ones)[0];
            let res = &yv - &ones * mu;
            let s2 = (res.transpose() * &rinv * &res)[0] / n as f64;
            let dense = n as f64 * s2.ln() + det.ln();
            assert!(
                (fast - dense).abs() <= 1e-6 * dense.abs().max(1.0),
                "theta={theta} fast={fast} dense={dense}"
            );
        }
    }

    #[test]
    fn constant_data_predicts_constant() {
        let x = design1(&[0.1, 0.3, 0.6, 0.9]);
        let fit = fit_gp(&x, &[2.5; 4], &GpOptions::default()).unwrap();
        assert!((fit.mu - 2.5).abs() < 1e-9);
        for t in [0.0, 0.2, 0.45, 1.0] {
            assert!((fit.predict(&[t]).0 - 2.5).abs() < 1e-9);
        }
    }

    #[test]
    fn two_points_interpolate() {
        let x = design1(&[0.2, 0.7]);
        let fit = fit_gp(&x, &[1.0, -1.0], &GpOptions::default()).unwrap();
        assert!((fit.predict(&[0.2]).0 - 1.0).abs() < 1e-4);
        assert!((fit.predict(&[0.7]).0 + 1.0).abs() < 1e-4);
    }

    #[test]
    fn fitted_theta_lies_in_grid_bracket() {
        let xs = [0.03, 0.17, 0.31, 0.45, 0.58, 0.72, 0.86, 0.97];
        let x = design1(&xs);
        let y: Vec<f64> = xs.iter().map(|v| (4.0 * v).sin() * (1.0 + v)).collect();
        let fit = fit_gp(&x, &y, &GpOptions::default()).unwrap();
        // 200-point log grid over the search box.
        let grid: Vec<f64> = (0..200).map(|k| 10f64.powf(-3.0 + 6.0 * k as f64 / 199.0)).collect();
        let vals: Vec<f64> = grid
            .iter()
            .map(|t| neg_profile_loglik(&[*t], &x, &y, &[2.0], fit.nugget).unwrap_or(f64::INFINITY))
            .collect();
        let k = (0..200).min_by(|a, b| vals[*a].total_cmp(&vals[*b])).unwrap();
        let lo = grid[k.saturating_sub(1)];
        let hi = grid[(k + 1).min(199)];
        assert!(
            fit.theta[0] >= lo && fit.theta[0] <= hi,
            "theta={} bracket=[{lo}, {hi}]",
            fit.theta[0]
        );
        assert!(fit.neg_loglik <= vals[k] + 1e-9);
    }

    #[test]
    fn prediction_matches_dense_oracle() {
        let x = Design::from_rows(vec![vec![0.1, 0.2], vec![0.5, 0.9], vec![0.8, 0.4]]);
        let y = vec![1.0, -0.5, 2.0];
        let (theta, p) = (vec![2.0, 1.5], vec![2.0, 1.7]);
        let fit = GpFit::with_params(x.clone(), y.clone(), theta.clone(), p.clone(), 1e-10).unwrap();
        for pt in [[0.3, 0.3], [0.0, 1.0], [0.5, 0.5]] {
            let (a, b) = fit.predict(&pt);
            let (c, d) = dense_predict(&x, &y, &theta, &p, 1e-10, &pt);
            assert!((a - c).abs() < 1e-8 && (b - d).abs() < 1e-8);
        }
    }

    #[test]
    fn interpolation_and_far_reversion() {
        let x = design1(&[0.1, 0.4, 0.8]);
        let y = vec![0.5, 1.5, -1.0];
        let fit = GpFit::with_params(x, y.clone(), vec![10.0], vec![2.0], 1e-12).unwrap();
        for (i, xi) in [0.1, 0.4, 0.8].iter().enumerate() {
            let (yhat, s2) = fit.predict(&[*xi]);
            assert!((yhat - y[i]).abs() < 1e-6);
            assert!(s2 < 1e-6 * fit.sigma2);
        }
        let far = GpFit::with_params(design1(&[0.0, 0.05]), vec![1.0, 2.0], vec![1e3], vec![2.0], 1e-8).unwrap();
        let (yhat, s2) = far.predict(&[1.0]);
        assert!((yhat - far.mu).abs() < 1e-12);
        assert!((s2 - far.sigma2).abs() < 1e-12 * far.sigma2.max(1.0));
    }

    #[test]
    fn reordering_rows_leaves_prediction_unchanged() {
        let rows = vec![vec![0.1, 0.9], vec![0.4, 0.2], vec![0.7, 0.6], vec![0.95, 0.05]];
        let y = vec![0.3, -1.2, 0.8, 2.0];
        let a = GpFit::with_params(Design::from_rows(rows.clone()), y.clone(), vec![3.0, 1.0], vec![2.0, 2.0], 1e-8).unwrap();
        let order = [2, 0, 3, 1];
        let rows_b: Vec<_> = order.iter().map(|i| rows[*i].clone()).collect();
        let y_b: Vec<_> = order.iter().map(|i| y[*i]).collect();
        let b = GpFit::with_params(Design::from_rows(rows_b), y_b, vec![3.0, 1.0], vec![2.0, 2.0], 1e-8).unwrap();
        for pt in [[0.5, 0.5], [0.05, 0.3], [0.9, 0.9]] {
            let (ya, sa) = a.predict(&pt);
            let (yb, sb) = b.predict(&pt);
            assert!((ya - yb).abs() < 1e-10 && (sa - sb).abs() < 1e-10);
        }
    }

    #[test]
    fn affine_equivariance() {
        let x = design1(&[0.05, 0.3, 0.55, 0.8]);
        let y = vec![0.2, 1.1, -0.4, 0.9];
        let (a, b) = (3.5, -2.0);
        let ya: Vec<f64> = y.iter().map(|v| a * v + b).collect();
        let f1 = GpFit::with_params(x.clone(), y, vec![5.0], vec![2.0], 1e-8).unwrap();
        let f2 = GpFit::with_params(x, ya, vec![5.0], vec![2.0], 1e-8).unwrap();
        for t in [0.0, 0.17, 0.6, 1.0] {
            assert!((f2.predict(&[t]).0 - (a * f1.predict(&[t]).0 + b)).abs() < 1e-9);
        }
    }

    #[test]
    fn chol_reproduces_matrix() {
        let x = design1(&[0.1, 0.35, 0.6, 0.85]);
        let fit = GpFit::with_params(x.clone(), vec![1.0, 2.0, 0.0, 1.0], vec![4.0], vec![2.0], 1e-8).unwrap();
        let l = fit.chol_factor();
        let mut r = corr_matrix(&x, &[4.0], &[2.0]).unwrap();
        for i in 0..4 {
            r[(i, i)] += 1e-8;
        }
        assert!((&l * l.transpose() - r).amax() < 1e-8);
    }

    #[test]
    fn dump_is_json() {
        let x = design1(&[0.1, 0.9]);
        let fit = GpFit::with_params(x, vec![1.0, 2.0], vec![1.0], vec![2.0], 1e-8).unwrap();
        let s = serde_json::to_string(&fit.dump()).unwrap();
        let back: GpFitDump = serde_json::from_str(&s).unwrap();
        assert_eq!(back, fit.dump());
    }
}
