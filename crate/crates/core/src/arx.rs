//! ARX(p,q) processes: parameterization, joint Gaussian law, simulation.
//!
//! The model is y_t = phi_1 y_{t-1} + ... + phi_p y_{t-p} + z_t' beta + eps_t
//! with iid N(0, sigma2) innovations and the sequence initialized from zero
//! (y_t = 0 for t <= 0). Stacking the recursion gives L y = Z beta + eps for
//! the banded unit-lower-triangular coefficient matrix L, hence the joint law
//!
//!   y ~ N(L^{-1} Z beta, sigma2 (L' L)^{-1}),
//!
//! whose covariance determinant is sigma2^T exactly because |L| = 1. The same
//! ArxSpec doubles as data-generating process and candidate model template.

use ndarray::prelude::*;
use ndarray_linalg::Eig;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::stream_rng;

/// Margin by which the companion spectral radius must stay below one.
const STATIONARITY_MARGIN: f64 = 1e-10;

/// A concrete ARX(p,q) parameterization. `p = phi.len()`, `q = beta.len()`,
/// and `T = z.nrows()`; the first column of `z` is an intercept of ones.
#[derive(Debug, Clone)]
pub struct ArxSpec {
    pub phi: Vec<f64>,
    pub beta: Vec<f64>,
    pub sigma2: f64,
    pub z: Array2<f64>,
}

impl ArxSpec {
    pub fn new(phi: Vec<f64>, beta: Vec<f64>, sigma2: f64, z: Array2<f64>) -> Result<Self> {
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::invalid(format!("sigma2 must be positive, got {sigma2}")));
        }
        if beta.len() != z.ncols() {
            return Err(Error::invalid(format!(
                "beta has {} entries but Z has {} columns",
                beta.len(),
                z.ncols()
            )));
        }
        if z.ncols() == 0 {
            return Err(Error::invalid("Z needs at least the intercept column"));
        }
        if z.nrows() == 0 {
            return Err(Error::invalid("Z needs at least one row"));
        }
        if z.column(0).iter().any(|&v| v != 1.0) {
            return Err(Error::invalid("first column of Z must be all ones"));
        }
        Ok(ArxSpec { phi, beta, sigma2, z })
    }

    pub fn p(&self) -> usize {
        self.phi.len()
    }

    pub fn q(&self) -> usize {
        self.beta.len()
    }

    pub fn t(&self) -> usize {
        self.z.nrows()
    }

    /// True when phi lies strictly inside the stationarity region Phi_p.
    pub fn is_stationary(&self) -> bool {
        is_stationary(&self.phi)
    }
}

/// Spectral-radius stationarity test on the companion matrix. Robust for
/// p >= 2 where direct root conditions are awkward; p = 0 is vacuously
/// stationary and p = 1 short-circuits the eigensolver.
pub fn is_stationary(phi: &[f64]) -> bool {
    match phi.len() {
        0 => true,
        1 => phi[0].abs() < 1.0 - STATIONARITY_MARGIN,
        p => {
            let mut companion = Array2::<f64>::zeros((p, p));
            for (j, &c) in phi.iter().enumerate() {
                companion[[0, j]] = c;
            }
            for i in 1..p {
                companion[[i, i - 1]] = 1.0;
            }
            match companion.eig() {
                Ok((vals, _)) => vals.iter().all(|v| v.norm() < 1.0 - STATIONARITY_MARGIN),
                Err(_) => false,
            }
        }
    }
}

/// The joint Gaussian law of an ARX path: mean vector plus the banded
/// cov-factor L with covariance sigma2 (L' L)^{-1}. L is generated from phi
/// on demand; solves against it are O(T p).
#[derive(Debug, Clone)]
pub struct GaussianLaw {
    pub mean: Array1<f64>,
    pub sigma2: f64,
    phi: Vec<f64>,
    t: usize,
}

impl GaussianLaw {
    pub fn t(&self) -> usize {
        self.t
    }

    /// AR coefficients generating the cov factor.
    pub fn phi(&self) -> &[f64] {
        &self.phi
    }

    /// Dense T x T cov factor L (unit lower triangular, bandwidth p+1).
    pub fn cov_factor(&self) -> Array2<f64> {
        linalg::ar_coeff_dense(&self.phi, self.t)
    }

    /// Dense unit-scale covariance W = (L' L)^{-1}; the full covariance is
    /// sigma2 * W.
    pub fn w_dense(&self) -> Array2<f64> {
        let linv = linalg::unit_lower_inverse(&self.phi, self.t);
        let w = linv.dot(&linv.t());
        w
    }

    pub fn covariance(&self) -> Array2<f64> {
        let mut w = self.w_dense();
        w.mapv_inplace(|v| v * self.sigma2);
        w
    }

    /// Exact log density. |W| = 1 collapses the log-determinant to
    /// T log(sigma2), and the quadratic form is ||L (y - m)||^2 / sigma2.
    pub fn log_density(&self, y: &ArrayView1<f64>) -> f64 {
        assert_eq!(y.len(), self.t, "length mismatch in log_density");
        let mut r: Vec<f64> = y
            .iter()
            .zip(self.mean.iter())
            .map(|(a, b)| a - b)
            .collect();
        linalg::apply_lower_inplace(&self.phi, &mut r);
        let quad: f64 = r.iter().map(|v| v * v).sum();
        let t = self.t as f64;
        -0.5 * t * (2.0 * std::f64::consts::PI * self.sigma2).ln() - 0.5 * quad / self.sigma2
    }
}

/// Dense T x T AR coefficient matrix; entry (s,t) is 1 on the diagonal and
/// -phi_{s-t} for 1 <= s-t <= p.
pub fn build_coeff_matrix(phi: &[f64], t: usize) -> Result<Array2<f64>> {
    if t == 0 {
        return Err(Error::invalid("coefficient matrix needs T >= 1"));
    }
    Ok(linalg::ar_coeff_dense(phi, t))
}

/// Joint Gaussian law of the zero-initialized ARX recursion.
pub fn joint_law(spec: &ArxSpec) -> GaussianLaw {
    let t = spec.t();
    // mean = L^{-1} Z beta, via one banded solve.
    let mut mean: Vec<f64> = (0..t).map(|i| spec.z.row(i).dot(&aview1(&spec.beta))).collect();
    linalg::solve_lower_inplace(&spec.phi, &mut mean);
    GaussianLaw {
        mean: Array1::from(mean),
        sigma2: spec.sigma2,
        phi: spec.phi.clone(),
        t,
    }
}

/// Draw one path by the O(T p) recursion using the caller's generator.
pub fn simulate_with<R: Rng + ?Sized>(spec: &ArxSpec, rng: &mut R) -> Array1<f64> {
    let t = spec.t();
    let p = spec.p();
    let sigma = spec.sigma2.sqrt();
    let mut y = Array1::<f64>::zeros(t);
    for s in 0..t {
        let mut v = spec.z.row(s).dot(&aview1(&spec.beta));
        for j in 1..=p.min(s) {
            v += spec.phi[j - 1] * y[s - j];
        }
        let eps: f64 = rng.sample(StandardNormal);
        y[s] = v + sigma * eps;
    }
    y
}

/// Simulate `n_paths` independent paths; row i is path i. Paths are drawn
/// from one deterministic stream so the output depends only on the seed.
pub fn simulate(spec: &ArxSpec, seed: u64, n_paths: usize) -> Array2<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut out = Array2::<f64>::zeros((n_paths, spec.t()));
    for mut row in out.rows_mut() {
        row.assign(&simulate_with(spec, &mut rng));
    }
    out
}

/// DGP at dependence level alpha: phi = alpha * base_phi, everything else
/// copied. base_phi must be stationary so the whole alpha path stays inside
/// the stationarity region.
pub fn dgp_from_alpha(
    alpha: f64,
    base_phi: &[f64],
    beta: &[f64],
    sigma2: f64,
    z: &Array2<f64>,
) -> Result<ArxSpec> {
    if !(0.0..=1.0).contains(&alpha) {
        return Err(Error::invalid(format!("alpha must lie in [0,1], got {alpha}")));
    }
    if !is_stationary(base_phi) {
        return Err(Error::invalid("base phi is not stationary at alpha = 1"));
    }
    let phi: Vec<f64> = base_phi.iter().map(|c| alpha * c).collect();
    ArxSpec::new(phi, beta.to_vec(), sigma2, z.clone())
}

/// T x q standard-normal covariate matrix with the first column forced to
/// ones, generated from a dedicated seed stream. Generated row by row so a
/// longer series extends a shorter one instead of reshuffling it.
pub fn generate_covariates(t: usize, q: usize, seed: u64) -> Array2<f64> {
    let mut rng = stream_rng(seed, 0);
    let mut z = Array2::<f64>::zeros((t, q));
    for mut row in z.rows_mut() {
        row[0] = 1.0;
        for j in 1..q {
            row[j] = rng.sample(StandardNormal);
        }
    }
    z
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn ones_z(t: usize) -> Array2<f64> {
        Array2::from_elem((t, 1), 1.0)
    }

    #[test]
    fn coeff_matrix_single_lag() {
        let l = build_coeff_matrix(&[0.5], 3).unwrap();
        let expect = array![[1.0, 0.0, 0.0], [-0.5, 1.0, 0.0], [0.0, -0.5, 1.0]];
        assert_eq!(l, expect);
    }

    #[test]
    fn coeff_matrix_no_lags_is_identity() {
        let l = build_coeff_matrix(&[], 4).unwrap();
        assert_eq!(l, Array2::<f64>::eye(4));
    }

    #[test]
    fn coeff_matrix_two_lags_bands() {
        let l = build_coeff_matrix(&[0.75, 0.2], 4).unwrap();
        for s in 1..4 {
            assert_eq!(l[[s, s - 1]], -0.75);
        }
        for s in 2..4 {
            assert_eq!(l[[s, s - 2]], -0.2);
        }
        assert_eq!(l[[3, 0]], 0.0);
    }

    #[test]
    fn joint_law_no_dependence() {
        let z = ones_z(5);
        let spec = ArxSpec::new(vec![], vec![2.0], 1.7, z.clone()).unwrap();
        let law = joint_law(&spec);
        for i in 0..5 {
            assert_abs_diff_eq!(law.mean[i], 2.0, epsilon = 1e-14);
        }
        let cov = law.covariance();
        for i in 0..5 {
            for j in 0..5 {
                let expect = if i == j { 1.7 } else { 0.0 };
                assert_abs_diff_eq!(cov[[i, j]], expect, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn ar1_two_step_covariance_matches_hand_inversion() {
        // Brute-force oracle: invert L' L for T = 2 by the 2x2 adjugate.
        let phi = 0.5;
        let l = array![[1.0, 0.0], [-phi, 1.0]];
        let p = l.t().dot(&l);
        let det = p[[0, 0]] * p[[1, 1]] - p[[0, 1]] * p[[1, 0]];
        let w_oracle = array![
            [p[[1, 1]] / det, -p[[0, 1]] / det],
            [-p[[1, 0]] / det, p[[0, 0]] / det]
        ];

        let spec = ArxSpec::new(vec![phi], vec![0.0], 1.0, ones_z(2)).unwrap();
        let cov = joint_law(&spec).covariance();
        for i in 0..2 {
            for j in 0..2 {
                assert_abs_diff_eq!(cov[[i, j]], w_oracle[[i, j]], epsilon = 1e-14);
            }
        }
        // Frozen values from expanding the inverse by hand.
        assert_abs_diff_eq!(cov[[0, 0]], 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[[0, 1]], 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(cov[[1, 1]], 1.25, epsilon = 1e-14);
    }

    #[test]
    fn covariance_determinant_is_sigma2_to_t() {
        let z = ones_z(8);
        let spec = ArxSpec::new(vec![0.75, 0.2], vec![0.3], 2.5, z).unwrap();
        let cov = joint_law(&spec).covariance();
        let l = crate::linalg::cholesky_lower(&cov.view(), "cov").unwrap();
        let logdet = crate::linalg::logdet_from_chol(&l.view());
        let expect = 8.0 * 2.5f64.ln();
        assert!(
            (logdet - expect).abs() / expect.abs() < 1e-10,
            "logdet {logdet} vs {expect}"
        );
    }

    #[test]
    fn noiseless_paths_follow_the_mean() {
        let z = generate_covariates(12, 2, 99);
        let spec = ArxSpec::new(vec![0.6], vec![1.0, -0.5], 1e-24, z).unwrap();
        let law = joint_law(&spec);
        let paths = simulate(&spec, 5, 3);
        for row in paths.rows() {
            for (a, b) in row.iter().zip(law.mean.iter()) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-8);
            }
        }
    }

    #[test]
    fn iid_case_sample_variance() {
        let z = ones_z(4);
        let spec = ArxSpec::new(vec![], vec![0.0], 1.0, z).unwrap();
        let n = 100_000;
        let paths = simulate(&spec, 11, n);
        // SE of a sample variance of N(0,1) is about sqrt(2/n).
        let se = (2.0 / n as f64).sqrt();
        for t in 0..4 {
            let col = paths.column(t);
            let mean = col.mean().unwrap();
            let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
            assert!(
                (var - 1.0).abs() < 3.0 * se,
                "t={t}: var {var} outside 3 SE band"
            );
        }
    }

    #[test]
    fn ar1_lag_one_autocorrelation() {
        let t = 2000;
        let z = ones_z(t);
        let spec = ArxSpec::new(vec![0.9], vec![0.0], 1.0, z).unwrap();
        let path = simulate(&spec, 17, 1);
        let y = path.row(0);
        // Skip the zero-initialization transient before measuring.
        let start = 200;
        let n = t - start - 1;
        let seg: Vec<f64> = y.iter().skip(start).copied().collect();
        let mean = seg.iter().sum::<f64>() / seg.len() as f64;
        let mut num = 0.0;
        let mut den = 0.0;
        for i in 0..seg.len() {
            den += (seg[i] - mean).powi(2);
            if i + 1 < seg.len() {
                num += (seg[i] - mean) * (seg[i + 1] - mean);
            }
        }
        let r1 = num / den;
        // Large-sample SE of the lag-1 autocorrelation of an AR(1).
        let se = ((1.0 - 0.81f64) / n as f64).sqrt();
        assert!((r1 - 0.9).abs() < 4.0 * se, "r1 = {r1}, se = {se}");
    }

    #[test]
    fn log_density_matches_conditional_factorization() {
        let z = generate_covariates(10, 3, 7);
        let spec = ArxSpec::new(vec![0.4, 0.25], vec![1.0, 0.5, -0.2], 1.3, z.clone()).unwrap();
        let law = joint_law(&spec);
        let path = simulate(&spec, 23, 1);
        let y = path.row(0);

        // Oracle: the recursion factorizes the density into T univariate
        // conditionals y_t | past ~ N(phi.y_past + z_t beta, sigma2).
        let mut total = 0.0;
        for s in 0..10 {
            let mut m = z.row(s).dot(&aview1(&spec.beta));
            for j in 1..=spec.p().min(s) {
                m += spec.phi[j - 1] * y[s - j];
            }
            let d = y[s] - m;
            total += -0.5 * (2.0 * std::f64::consts::PI * spec.sigma2).ln()
                - 0.5 * d * d / spec.sigma2;
        }
        assert_abs_diff_eq!(law.log_density(&y), total, epsilon = 1e-8);
    }

    #[test]
    fn alpha_scaling() {
        let z = ones_z(6);
        let d0 = dgp_from_alpha(0.0, &[0.75, 0.2], &[1.0], 1.0, &z).unwrap();
        assert_eq!(d0.phi, vec![0.0, 0.0]);
        let d1 = dgp_from_alpha(1.0, &[0.75, 0.2], &[1.0], 1.0, &z).unwrap();
        assert_eq!(d1.phi, vec![0.75, 0.2]);
        let dh = dgp_from_alpha(0.5, &[0.75, 0.2], &[1.0], 1.0, &z).unwrap();
        assert_eq!(dh.phi, vec![0.375, 0.1]);
        assert!(dgp_from_alpha(1.5, &[0.5], &[1.0], 1.0, &z).is_err());
        assert!(dgp_from_alpha(0.5, &[1.1], &[1.0], 1.0, &z).is_err());
    }

    #[test]
    fn stationarity_boundary_cases() {
        assert!(is_stationary(&[]));
        assert!(is_stationary(&[0.999]));
        assert!(!is_stationary(&[1.0]));
        assert!(is_stationary(&[0.75, 0.2]));
        // phi1 + phi2 >= 1 leaves the region for p = 2.
        assert!(!is_stationary(&[0.75, 0.3]));
        assert!(!is_stationary(&[-0.5, 0.6]));
    }

    #[test]
    fn covariates_prefix_stable() {
        let a = generate_covariates(10, 3, 42);
        let b = generate_covariates(25, 3, 42);
        for i in 0..10 {
            for j in 0..3 {
                assert_eq!(a[[i, j]], b[[i, j]]);
            }
        }
        assert!(b.column(0).iter().all(|&v| v == 1.0));
    }

    #[test]
    fn spec_validation_errors() {
        assert!(ArxSpec::new(vec![], vec![1.0], 0.0, ones_z(3)).is_err());
        assert!(ArxSpec::new(vec![], vec![1.0, 2.0], 1.0, ones_z(3)).is_err());
        let mut z = ones_z(3);
        z[[1, 0]] = 2.0;
        assert!(ArxSpec::new(vec![], vec![1.0], 1.0, z).is_err());
    }
}
