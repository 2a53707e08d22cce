//! Generalized chi-squared laws of quadratic polynomials in Gaussian
//! vectors: exact parameters, moments, CDF by characteristic-function
//! inversion, and a sampler.
//!
//! If y ~ N(m, sigma2 W) with W = (L'L)^{-1} and omega(y) = y'Ay + y'b + c
//! with symmetric A, then rotating into the whitened coordinates of y turns
//! omega into mu + sigma N + sum_j lambda_j X_j with independent noncentral
//! chi-squared variables X_j ~ chi2(r_j, delta2_j): the lambda_j are the
//! nonzero eigenvalues of sigma2 L^{-T} A L^{-1}, the linear part aligned
//! with zero eigenvalues collapses into the Gaussian remainder, and the
//! nonzero-eigenvalue components complete the square into noncentralities.
//! The CDF comes from the inversion integral
//!
//!   F(w) = 1/2 - (1/pi) Integral_0^inf rho(t) sin(theta(t)) / t dt,
//!
//! with theta and rho the phase and modulus of the characteristic function
//! times exp(-itw), integrated adaptively with analytic truncation bounds.

use ndarray::prelude::*;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::distribution::ContinuousCDF;

use crate::analytic::QuadForm;
use crate::arx::GaussianLaw;
use crate::error::{Error, Result};
use crate::linalg;
use crate::rng::stream_rng;

/// Absolute CDF accuracy the quadrature aims for.
const CDF_TARGET: f64 = 1e-6;
/// Error estimate above which the CDF falls back to simulation.
const CDF_FALLBACK_THRESHOLD: f64 = 1e-5;
/// Sample size of the simulation fallback.
const CDF_FALLBACK_DRAWS: usize = 1_000_000;
/// Eigenvalues below this fraction of the largest magnitude count as zero.
const EIGENVALUE_CUTOFF: f64 = 1e-10;

/// Distribution of mu + sigma N + sum_j lambda_j chi2(r_j, delta2_j) with
/// every lambda_j nonzero and all terms independent.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GChi2 {
    pub lambda: Vec<f64>,
    pub r: Vec<f64>,
    pub delta2: Vec<f64>,
    pub mu: f64,
    pub sigma: f64,
}

/// How a CDF value was produced.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CdfMethod {
    Quadrature,
    Simulation,
}

/// A CDF evaluation together with its absolute error estimate.
#[derive(Debug, Clone, Copy)]
pub struct CdfEstimate {
    pub value: f64,
    pub abs_error: f64,
    pub method: CdfMethod,
}

impl GChi2 {
    pub fn new(lambda: Vec<f64>, r: Vec<f64>, delta2: Vec<f64>, mu: f64, sigma: f64) -> Result<Self> {
        if lambda.len() != r.len() || lambda.len() != delta2.len() {
            return Err(Error::invalid("lambda, r, delta2 must have equal lengths"));
        }
        if lambda.iter().any(|&l| l == 0.0 || !l.is_finite()) {
            return Err(Error::invalid("eigenvalue weights must be nonzero and finite"));
        }
        if r.iter().any(|&x| !(x >= 1.0)) {
            return Err(Error::invalid("degrees of freedom must be >= 1"));
        }
        if delta2.iter().any(|&x| !(x >= 0.0)) {
            return Err(Error::invalid("noncentralities must be nonnegative"));
        }
        if !(sigma >= 0.0) || !mu.is_finite() {
            return Err(Error::invalid("need sigma >= 0 and finite mu"));
        }
        Ok(GChi2 { lambda, r, delta2, mu, sigma })
    }

    /// E[omega] = mu + sum lambda_j (r_j + delta2_j).
    pub fn mean(&self) -> f64 {
        let mut m = self.mu;
        for j in 0..self.lambda.len() {
            m += self.lambda[j] * (self.r[j] + self.delta2[j]);
        }
        m
    }

    /// var(omega) = sigma^2 + sum lambda_j^2 (2 r_j + 4 delta2_j).
    pub fn variance(&self) -> f64 {
        let mut v = self.sigma * self.sigma;
        for j in 0..self.lambda.len() {
            v += self.lambda[j] * self.lambda[j] * (2.0 * self.r[j] + 4.0 * self.delta2[j]);
        }
        v
    }

    /// Phase theta(t) of the characteristic function times exp(-itw).
    fn phase(&self, w: f64, t: f64) -> f64 {
        let mut theta = (self.mu - w) * t;
        for j in 0..self.lambda.len() {
            let lt = self.lambda[j] * t;
            let den = 1.0 + 4.0 * lt * lt;
            theta += 0.5 * self.r[j] * (2.0 * lt).atan() + self.delta2[j] * lt / den;
        }
        theta
    }

    /// Log modulus of the characteristic function.
    fn log_modulus(&self, t: f64) -> f64 {
        let mut lr = -0.5 * self.sigma * self.sigma * t * t;
        for j in 0..self.lambda.len() {
            let lt = self.lambda[j] * t;
            let den = 1.0 + 4.0 * lt * lt;
            lr += -2.0 * self.delta2[j] * lt * lt / den - 0.25 * self.r[j] * den.ln();
        }
        lr
    }

    /// Inversion integrand, with the removable singularity at t = 0 filled
    /// by its limit E[omega] - w.
    fn integrand(&self, w: f64, t: f64) -> f64 {
        if t == 0.0 {
            return self.mean() - w;
        }
        self.log_modulus(t).exp() * self.phase(w, t).sin() / t
    }

    /// Truncation bound on (1/pi) |Integral_u^inf| from the modulus alone:
    /// each factor (1 + 4 lambda^2 t^2)^{-r/4} <= (2 |lambda| t)^{-r/2}, so
    /// the tail is a power integral. Only factors already past 2|lambda|u >
    /// 1 are kept; the rest would loosen the constant.
    fn abs_tail_bound(&self, u: f64) -> f64 {
        let mut kexp = 0.0;
        let mut logc = 0.0;
        for j in 0..self.lambda.len() {
            let a = 2.0 * self.lambda[j].abs() * u;
            if a > 1.0 {
                kexp += self.r[j];
                logc += 0.5 * self.r[j] * (2.0 * self.lambda[j].abs()).ln();
            }
        }
        if kexp < 1e-12 {
            return f64::INFINITY;
        }
        let logtail = -0.5 * self.sigma * self.sigma * u * u - logc - 0.5 * kexp * u.ln()
            + (2.0 / kexp).ln();
        logtail.exp() / std::f64::consts::PI
    }

    /// Oscillation-aware truncation bound: beyond u the phase derivative
    /// stays within `slack` of mu - w, and the modulus over t is monotone
    /// decreasing, so integration by parts bounds the tail by a multiple of
    /// rho(u) / (u |theta'|).
    fn osc_tail_bound(&self, w: f64, u: f64) -> f64 {
        let drift = self.mu - w;
        let mut slack = 0.0;
        for j in 0..self.lambda.len() {
            let labs = self.lambda[j].abs();
            let den = 1.0 + 4.0 * labs * labs * u * u;
            slack += (self.r[j] * labs + self.delta2[j] * labs) / den;
        }
        let a_lo = drift.abs() - slack;
        if a_lo <= 0.0 {
            return f64::INFINITY;
        }
        4.0 * self.log_modulus(u).exp() / (u * a_lo * std::f64::consts::PI)
    }

    /// Inversion quadrature. Returns the CDF value and an error estimate, or
    /// None when no acceptable truncation point exists.
    fn cdf_quadrature(&self, w: f64) -> Option<(f64, f64)> {
        let lam_max = self.lambda.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
        let scale = lam_max.max(self.sigma).max(1e-300);
        let tail_tol = 0.3 * CDF_TARGET;

        let mut u = 0.125 / scale;
        let mut tail = f64::INFINITY;
        for _ in 0..240 {
            tail = self.abs_tail_bound(u).min(self.osc_tail_bound(w, u));
            if tail < tail_tol {
                break;
            }
            u *= 1.4;
        }
        if !(tail < tail_tol) {
            return None;
        }

        // Split [0, u] into slabs no wider than a fixed fraction of the
        // local oscillation period, then refine each slab adaptively.
        let quad_tol_f = 0.5 * CDF_TARGET;
        let quad_tol_i = quad_tol_f * std::f64::consts::PI;
        let mut total = 0.0;
        let mut err_i = 0.0;
        let mut a = 0.0f64;
        let mut n_slabs = 0usize;
        while a < u {
            let mut freq = (self.mu - w).abs();
            for j in 0..self.lambda.len() {
                let labs = self.lambda[j].abs();
                let den = 1.0 + 4.0 * labs * labs * a * a;
                freq += (self.r[j] * labs + self.delta2[j] * labs) / den;
            }
            let width = (u - a).min(std::f64::consts::PI / (2.0 * freq.max(1e-12)));
            let b = (a + width).min(u);
            let (s, e) = adaptive_simpson(
                &|t| self.integrand(w, t),
                a,
                b,
                quad_tol_i * (b - a) / u,
                24,
            );
            total += s;
            err_i += e;
            a = b;
            n_slabs += 1;
            if n_slabs > 4_000_000 {
                return None;
            }
        }

        let value = (0.5 - total / std::f64::consts::PI).clamp(0.0, 1.0);
        Some((value, tail + err_i / std::f64::consts::PI))
    }

    /// Empirical CDF from the sampler, used when quadrature cannot reach
    /// the accuracy target. Deterministic: the internal seed is fixed.
    fn cdf_simulation(&self, w: f64) -> CdfEstimate {
        let draws = self.sample(CDF_FALLBACK_DRAWS, 0x6d68_6f66);
        let count = draws.iter().filter(|&&x| x <= w).count();
        let p = count as f64 / CDF_FALLBACK_DRAWS as f64;
        let se = (p * (1.0 - p) / CDF_FALLBACK_DRAWS as f64).sqrt();
        CdfEstimate {
            value: p,
            abs_error: 3.0 * se + 1.0 / CDF_FALLBACK_DRAWS as f64,
            method: CdfMethod::Simulation,
        }
    }

    /// CDF with method and error diagnostics. Degenerate cases are closed
    /// form; far tails use the Cantelli bound; otherwise inversion
    /// quadrature, with a flagged simulation fallback if its error estimate
    /// exceeds the acceptance threshold.
    pub fn cdf_detailed(&self, w: f64) -> Result<CdfEstimate> {
        if !w.is_finite() {
            return Err(Error::invalid("CDF argument must be finite"));
        }
        if self.lambda.is_empty() {
            let value = if self.sigma == 0.0 {
                // Point mass at mu.
                if w >= self.mu {
                    1.0
                } else {
                    0.0
                }
            } else {
                let n = statrs::distribution::Normal::new(0.0, 1.0)
                    .map_err(|e| Error::numerical(format!("normal CDF: {e}")))?;
                n.cdf((w - self.mu) / self.sigma)
            };
            return Ok(CdfEstimate { value, abs_error: 1e-15, method: CdfMethod::Quadrature });
        }

        let mean = self.mean();
        let var = self.variance();
        if w < mean {
            let gap = mean - w;
            let bound = var / (var + gap * gap);
            if bound < 0.1 * CDF_TARGET {
                return Ok(CdfEstimate {
                    value: 0.5 * bound,
                    abs_error: 0.5 * bound,
                    method: CdfMethod::Quadrature,
                });
            }
        } else {
            let gap = w - mean;
            let bound = var / (var + gap * gap);
            if bound < 0.1 * CDF_TARGET {
                return Ok(CdfEstimate {
                    value: 1.0 - 0.5 * bound,
                    abs_error: 0.5 * bound,
                    method: CdfMethod::Quadrature,
                });
            }
        }

        if let Some((value, err)) = self.cdf_quadrature(w) {
            if err <= CDF_FALLBACK_THRESHOLD {
                return Ok(CdfEstimate { value, abs_error: err, method: CdfMethod::Quadrature });
            }
        }
        Ok(self.cdf_simulation(w))
    }

    /// P(omega <= w).
    pub fn cdf(&self, w: f64) -> Result<f64> {
        Ok(self.cdf_detailed(w)?.value)
    }

    /// p-quantile, found by bisection on the CDF. The bracket starts at
    /// mean +/- 8 SD and doubles outward until it straddles p.
    pub fn quantile(&self, p: f64) -> Result<f64> {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::invalid(format!(
                "quantile level must lie strictly inside (0, 1), got {p}"
            )));
        }
        let center = self.mean();
        let sd = self.variance().sqrt();
        if !(sd > 0.0) {
            return Ok(center);
        }
        let mut step = 8.0 * sd;
        let mut lo = center - step;
        while self.cdf(lo)? > p {
            step *= 2.0;
            lo = center - step;
            if !lo.is_finite() {
                return Err(Error::numerical("quantile bracket diverged below"));
            }
        }
        let mut step = 8.0 * sd;
        let mut hi = center + step;
        while self.cdf(hi)? < p {
            step *= 2.0;
            hi = center + step;
            if !hi.is_finite() {
                return Err(Error::numerical("quantile bracket diverged above"));
            }
        }
        while hi - lo > 1e-9 * (1.0 + 0.5 * (lo.abs() + hi.abs())) {
            let mid = 0.5 * (lo + hi);
            if self.cdf(mid)? < p {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        Ok(0.5 * (lo + hi))
    }

    /// n independent draws: mu + sigma N + sum lambda_j [(N_j + delta_j)^2
    /// + chi2_{r_j - 1}].
    pub fn sample(&self, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = stream_rng(seed, 1);
        let deltas: Vec<f64> = self.delta2.iter().map(|d| d.sqrt()).collect();
        let gammas: Vec<Option<Gamma<f64>>> = self
            .r
            .iter()
            .map(|&r| {
                if r > 1.0 {
                    Some(Gamma::new(0.5 * (r - 1.0), 2.0).expect("valid gamma"))
                } else {
                    None
                }
            })
            .collect();
        let mut out = Vec::with_capacity(n);
        for _ in 0..n {
            let mut x = self.mu;
            if self.sigma > 0.0 {
                let z: f64 = rng.sample(StandardNormal);
                x += self.sigma * z;
            }
            for j in 0..self.lambda.len() {
                let z: f64 = rng.sample(StandardNormal);
                let sq = (z + deltas[j]) * (z + deltas[j]);
                let extra = match &gammas[j] {
                    Some(g) => g.sample(&mut rng),
                    None => 0.0,
                };
                x += self.lambda[j] * (sq + extra);
            }
            out.push(x);
        }
        out
    }
}

/// Adaptive Simpson on [a, b] returning (value, error estimate).
fn adaptive_simpson<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64, tol: f64, depth: usize) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let fa = f(a);
    let fm = f(m);
    let fb = f(b);
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson_step(f, a, b, fa, fm, fb, whole, tol, depth)
}

#[allow(clippy::too_many_arguments)]
fn simpson_step<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
) -> (f64, f64) {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let delta = left + right - whole;
    if depth == 0 || delta.abs() <= 15.0 * tol {
        (left + right + delta / 15.0, delta.abs() / 15.0)
    } else {
        let (lv, le) = simpson_step(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1);
        let (rv, re) = simpson_step(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1);
        (lv + rv, le + re)
    }
}

/// Rotates a quadratic polynomial omega(y) = y'Ay + y'b + c of y ~ dgp_law
/// into its generalized chi-squared parameters.
pub fn params_from_quadform(q: &QuadForm, dgp_law: &GaussianLaw) -> Result<GChi2> {
    let t = q.t();
    if dgp_law.t() != t {
        return Err(Error::invalid(format!(
            "quadratic form has T = {t} but the law has T = {}",
            dgp_law.t()
        )));
    }
    for i in 0..t {
        for j in 0..i {
            if q.a[[i, j]] != q.a[[j, i]] {
                return Err(Error::invalid("quadratic coefficient matrix is not symmetric"));
            }
        }
    }
    let phi = dgp_law.phi().to_vec();
    let sigma_star = dgp_law.sigma2.sqrt();

    // C = sigma2 L^{-T} A L^{-1}, by two banded triangular solves.
    let mut c_mat = q.a.clone();
    linalg::solve_upper_t_mat(&phi, &mut c_mat);
    let mut c_mat = c_mat.reversed_axes().as_standard_layout().to_owned();
    linalg::solve_upper_t_mat(&phi, &mut c_mat);
    let mut c_mat = c_mat.reversed_axes().as_standard_layout().to_owned();
    c_mat.mapv_inplace(|x| x * dgp_law.sigma2);
    linalg::symmetrize(&mut c_mat);

    let (evals, evecs) = linalg::eigh_sym(&c_mat)?;

    // Linear part rotated into the whitened coordinates:
    // b~ = sigma_* U' L^{-T} (2 A m_* + b).
    let mut v: Vec<f64> = (2.0 * &q.a.dot(&dgp_law.mean) + &q.b).to_vec();
    linalg::solve_upper_t_inplace(&phi, &mut v);
    let btilde = evecs.t().dot(&Array1::from(v)).mapv(|x| x * sigma_star);

    let ctilde = dgp_law.mean.dot(&q.a.dot(&dgp_law.mean)) + q.b.dot(&dgp_law.mean) + q.c;

    let lam_max = evals.iter().fold(0.0f64, |a, &l| a.max(l.abs()));
    let cutoff = EIGENVALUE_CUTOFF * lam_max;
    let mut lambda = Vec::new();
    let mut delta2 = Vec::new();
    let mut mu = ctilde;
    let mut sig2 = 0.0;
    for j in 0..t {
        let l = evals[j];
        let bj = btilde[j];
        if l.abs() > cutoff && lam_max > 0.0 {
            lambda.push(l);
            let d = bj / (2.0 * l);
            delta2.push(d * d);
            mu -= bj * bj / (4.0 * l);
        } else {
            sig2 += bj * bj;
        }
    }
    let r = vec![1.0; lambda.len()];
    GChi2::new(lambda, r, delta2, mu, sig2.sqrt())
}

/// Exact mean and variance of omega(y) under the law, from trace identities
/// rather than the eigendecomposition.
pub fn moments(q: &QuadForm, dgp_law: &GaussianLaw) -> Result<(f64, f64)> {
    let t = q.t();
    if dgp_law.t() != t {
        return Err(Error::invalid(format!(
            "quadratic form has T = {t} but the law has T = {}",
            dgp_law.t()
        )));
    }
    let s2 = dgp_law.sigma2;
    let vstar = dgp_law.w_dense();
    let av = q.a.dot(&vstar);
    let m = &dgp_law.mean;

    let tr_av = av.diag().sum();
    let am = q.a.dot(m);
    let mean = s2 * tr_av + m.dot(&am) + q.b.dot(m) + q.c;

    let mut tr_avav = 0.0;
    for i in 0..t {
        for j in 0..t {
            tr_avav += av[[i, j]] * av[[j, i]];
        }
    }
    let vb = vstar.dot(&q.b);
    let vam = vstar.dot(&am);
    let var = 2.0 * s2 * s2 * tr_avav
        + s2 * q.b.dot(&vb)
        + 4.0 * s2 * q.b.dot(&vam)
        + 4.0 * s2 * am.dot(&vam);
    Ok((mean, var))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{cv_quadform, eljpd_quadform, SarxModel};
    use crate::arx::{generate_covariates, joint_law, simulate, ArxSpec};
    use crate::schemes::{make_plan, Mode, SchemeKind, SchemeSpec};
    use approx::assert_abs_diff_eq;
    use ndarray::array;
    use statrs::distribution::ChiSquared;

    fn chi2_cdf(df: f64, w: f64) -> f64 {
        if w <= 0.0 {
            return 0.0;
        }
        ChiSquared::new(df).unwrap().cdf(w)
    }

    /// Noncentral chi-squared CDF by the Poisson mixture series.
    fn noncentral_chi2_cdf(df: f64, delta2: f64, w: f64) -> f64 {
        let half = 0.5 * delta2;
        let mut log_pois = -half;
        let mut total = 0.0;
        for m in 0..400 {
            let weight = log_pois.exp();
            total += weight * chi2_cdf(df + 2.0 * m as f64, w);
            log_pois += half.ln() - ((m + 1) as f64).ln();
            if weight < 1e-16 && m > 5 {
                break;
            }
        }
        total
    }

    fn central(lambda: Vec<f64>) -> GChi2 {
        let k = lambda.len();
        GChi2::new(lambda, vec![1.0; k], vec![0.0; k], 0.0, 0.0).unwrap()
    }

    #[test]
    fn chi_squared_cdf_matches_series_oracle() {
        // k ones gives a central chi-squared with k degrees of freedom;
        // the same law also arises from a single term with r = k.
        for k in [1usize, 2, 3, 5, 10] {
            let d1 = central(vec![1.0; k]);
            let d2 = GChi2::new(vec![1.0], vec![k as f64], vec![0.0], 0.0, 0.0).unwrap();
            for w in [0.05, 0.3, 1.0, 2.5, float_df(k), 2.0 * float_df(k), 4.0 * float_df(k) + 3.0]
            {
                let oracle = chi2_cdf(k as f64, w);
                let e1 = d1.cdf_detailed(w).unwrap();
                let e2 = d2.cdf_detailed(w).unwrap();
                assert_eq!(e1.method, CdfMethod::Quadrature, "k={k} w={w}");
                assert!(
                    (e1.value - oracle).abs() <= 2e-6,
                    "k={k} w={w}: {} vs {oracle}",
                    e1.value
                );
                assert!(
                    (e2.value - oracle).abs() <= 2e-6,
                    "r-form k={k} w={w}: {} vs {oracle}",
                    e2.value
                );
                assert!(e1.abs_error <= CDF_FALLBACK_THRESHOLD);
            }
        }
        // The quantile pinned to three decimals in standard tables.
        let d = central(vec![1.0]);
        assert!((d.cdf(3.841).unwrap() - 0.950).abs() < 0.001);
    }

    fn float_df(k: usize) -> f64 {
        k as f64
    }

    #[test]
    fn noncentral_cdf_matches_series_oracle() {
        let d = GChi2::new(vec![1.0], vec![1.0], vec![2.25], 0.0, 0.0).unwrap();
        for w in [0.2, 1.0, 3.0, 6.0, 12.0] {
            let oracle = noncentral_chi2_cdf(1.0, 2.25, w);
            let got = d.cdf(w).unwrap();
            assert!((got - oracle).abs() <= 2e-6, "w={w}: {got} vs {oracle}");
        }
        // Scaled and shifted: P(2 X + 1 <= w) = P(X <= (w-1)/2).
        let d = GChi2::new(vec![2.0], vec![3.0], vec![1.5], 1.0, 0.0).unwrap();
        for w in [1.5, 3.0, 8.0, 20.0] {
            let oracle = noncentral_chi2_cdf(3.0, 1.5, (w - 1.0) / 2.0);
            let got = d.cdf(w).unwrap();
            assert!((got - oracle).abs() <= 2e-6, "w={w}: {got} vs {oracle}");
        }
    }

    #[test]
    fn gaussian_cases_are_closed_form() {
        let d = GChi2::new(vec![], vec![], vec![], 0.0, 1.0).unwrap();
        assert_eq!(d.cdf(0.0).unwrap(), 0.5);
        let n = statrs::distribution::Normal::new(0.0, 1.0).unwrap();
        for w in [-2.0, -0.5, 1.0, 2.33] {
            assert_abs_diff_eq!(d.cdf(w).unwrap(), n.cdf(w), epsilon = 1e-12);
        }
        // Point mass.
        let d = GChi2::new(vec![], vec![], vec![], 5.0, 0.0).unwrap();
        assert_eq!(d.cdf(0.0).unwrap(), 0.0);
        assert_eq!(d.cdf(5.0).unwrap(), 1.0);
        assert_eq!(d.cdf(7.0).unwrap(), 1.0);
    }

    #[test]
    fn far_tails_clamp() {
        let d = GChi2::new(vec![1.0, -0.5], vec![1.0, 1.0], vec![0.3, 0.0], 0.2, 0.4).unwrap();
        assert!(d.cdf(-1e10).unwrap() < 1e-6);
        assert!(d.cdf(1e10).unwrap() > 1.0 - 1e-6);
    }

    #[test]
    fn cdf_mixed_sign_case_matches_simulation() {
        let d = GChi2::new(
            vec![2.0, -1.0, 0.4],
            vec![1.0, 1.0, 1.0],
            vec![0.5, 0.0, 1.2],
            0.3,
            0.7,
        )
        .unwrap();
        let n = 2_000_000usize;
        let draws = d.sample(n, 99);
        for w in [-4.0, -1.0, 0.3, 1.0, 3.0, 8.0] {
            let emp = draws.iter().filter(|&&x| x <= w).count() as f64 / n as f64;
            let se = (emp * (1.0 - emp) / n as f64).sqrt();
            let got = d.cdf(w).unwrap();
            assert!(
                (got - emp).abs() < 4.0 * se + 2e-6,
                "w={w}: {got} vs empirical {emp} (se {se})"
            );
        }
    }

    #[test]
    fn cdf_is_monotone_on_a_central_grid() {
        let d = GChi2::new(
            vec![1.5, -0.7, 0.2, 0.9],
            vec![1.0; 4],
            vec![0.0, 0.4, 1.0, 0.0],
            -0.3,
            0.5,
        )
        .unwrap();
        let mean = d.mean();
        let sd = d.variance().sqrt();
        let mut prev = -1.0;
        for i in 0..101 {
            let w = mean + sd * (-8.0 + 16.0 * i as f64 / 100.0);
            let v = d.cdf(w).unwrap();
            assert!(v >= prev - 2e-6, "dip at grid point {i}: {v} < {prev}");
            assert!((0.0..=1.0).contains(&v));
            prev = v;
        }
    }

    #[test]
    fn sampler_basics() {
        let d = GChi2::new(vec![], vec![], vec![], 3.0, 0.0).unwrap();
        assert!(d.sample(100, 1).iter().all(|&x| x == 3.0));

        let d = central(vec![1.0, 1.0]);
        let n = 100_000;
        let draws = d.sample(n, 2);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let se = (d.variance() / n as f64).sqrt();
        assert!((mean - 2.0).abs() < 4.0 * se, "mean {mean}");
    }

    fn ks_two_sample(mut a: Vec<f64>, mut b: Vec<f64>) -> f64 {
        a.sort_by(|x, y| x.partial_cmp(y).unwrap());
        b.sort_by(|x, y| x.partial_cmp(y).unwrap());
        let (n, m) = (a.len(), b.len());
        let (mut i, mut j) = (0usize, 0usize);
        let mut ks = 0.0f64;
        while i < n && j < m {
            if a[i] <= b[j] {
                i += 1;
            } else {
                j += 1;
            }
            let d = (i as f64 / n as f64 - j as f64 / m as f64).abs();
            ks = ks.max(d);
        }
        ks
    }

    /// Shared fixture: a model-comparison quadratic form and its DGP law.
    fn demo_form() -> (crate::analytic::QuadForm, GaussianLaw, ArxSpec) {
        let t = 8;
        let z = generate_covariates(t, 2, 400);
        let dgp = ArxSpec::new(vec![0.6], vec![1.0, 0.5], 1.3, z.clone()).unwrap();
        let arx_a = ArxSpec::new(vec![0.4], vec![0.0, 0.0], 1.1, z.clone()).unwrap();
        let model_a = SarxModel::new(arx_a, array![0.5, 0.2], Array2::eye(2)).unwrap();
        let plan = make_plan(
            &SchemeSpec::new(SchemeKind::HvBlock { h: 1, v: 1 }, Mode::Joint).unwrap(),
            t,
        )
        .unwrap();
        let qa = cv_quadform(&model_a, &plan).unwrap();
        let full: Vec<usize> = (1..=t).collect();
        let qb = eljpd_quadform(&model_a, &dgp, &full, &full).unwrap();
        let q = qa.diff(&qb).unwrap();
        (q, joint_law(&dgp), dgp)
    }

    #[test]
    fn rotated_parameters_match_pathwise_simulation() {
        let (q, law, dgp) = demo_form();
        let d = params_from_quadform(&q, &law).unwrap();
        let n = 200_000usize;
        let paths = simulate(&dgp, 17, n);
        let direct: Vec<f64> = paths.rows().into_iter().map(|y| q.eval(&y)).collect();
        let rotated = d.sample(n, 18);
        let ks = ks_two_sample(direct, rotated);
        assert!(ks < 0.01, "KS = {ks}");
    }

    #[test]
    fn rotated_parameters_reproduce_trace_moments() {
        let (q, law, _) = demo_form();
        let d = params_from_quadform(&q, &law).unwrap();
        let (mean, var) = moments(&q, &law).unwrap();
        assert!(
            (d.mean() - mean).abs() <= 1e-8 * (1.0 + mean.abs()),
            "{} vs {mean}",
            d.mean()
        );
        assert!(
            (d.variance() - var).abs() <= 1e-8 * (1.0 + var.abs()),
            "{} vs {var}",
            d.variance()
        );
    }

    #[test]
    fn moment_formulas_trivial_cases() {
        // Identity form on a white DGP: chi-squared moments.
        let t = 6;
        let z = Array2::from_elem((t, 1), 1.0);
        let dgp = ArxSpec::new(vec![], vec![0.0], 1.0, z).unwrap();
        let law = joint_law(&dgp);
        let q = QuadForm::new(Array2::eye(t), Array1::zeros(t), 0.0).unwrap();
        let (mean, var) = moments(&q, &law).unwrap();
        assert_abs_diff_eq!(mean, t as f64, epsilon = 1e-12);
        assert_abs_diff_eq!(var, 2.0 * t as f64, epsilon = 1e-12);

        // Pure linear form.
        let z = generate_covariates(t, 2, 401);
        let dgp = ArxSpec::new(vec![0.5], vec![1.0, -0.5], 1.7, z).unwrap();
        let law = joint_law(&dgp);
        let b = Array1::from_shape_fn(t, |i| 0.3 + i as f64 * 0.1);
        let q = QuadForm::new(Array2::zeros((t, t)), b.clone(), 2.0).unwrap();
        let (mean, var) = moments(&q, &law).unwrap();
        assert_abs_diff_eq!(mean, b.dot(&law.mean) + 2.0, epsilon = 1e-10);
        let w = law.w_dense();
        assert_abs_diff_eq!(var, 1.7 * b.dot(&w.dot(&b)), epsilon = 1e-10);

        // The degenerate constant form becomes a point mass.
        let q = QuadForm::new(Array2::zeros((t, t)), Array1::zeros(t), 5.0).unwrap();
        let d = params_from_quadform(&q, &law).unwrap();
        assert!(d.lambda.is_empty());
        assert_eq!(d.mu, 5.0);
        assert_eq!(d.sigma, 0.0);
    }

    #[test]
    fn identity_form_on_white_noise_is_chi_squared() {
        let t = 5;
        let z = Array2::from_elem((t, 1), 1.0);
        let dgp = ArxSpec::new(vec![], vec![0.0], 1.0, z).unwrap();
        let law = joint_law(&dgp);
        let q = QuadForm::new(Array2::eye(t), Array1::zeros(t), 0.0).unwrap();
        let d = params_from_quadform(&q, &law).unwrap();
        assert_eq!(d.lambda.len(), t);
        for j in 0..t {
            assert_abs_diff_eq!(d.lambda[j], 1.0, epsilon = 1e-12);
            assert!(d.delta2[j] < 1e-20);
        }
        assert_abs_diff_eq!(d.mu, 0.0, epsilon = 1e-12);
        assert_eq!(d.sigma, 0.0);
    }

    #[test]
    fn moments_match_monte_carlo() {
        let (q, law, dgp) = demo_form();
        let (mean, var) = moments(&q, &law).unwrap();
        let n = 100_000usize;
        let paths = simulate(&dgp, 55, n);
        let vals: Vec<f64> = paths.rows().into_iter().map(|y| q.eval(&y)).collect();
        let emp_mean = vals.iter().sum::<f64>() / n as f64;
        let emp_var =
            vals.iter().map(|v| (v - emp_mean) * (v - emp_mean)).sum::<f64>() / (n as f64 - 1.0);
        // SE of the sample mean, and a delta-method SE for the variance.
        let se_mean = (emp_var / n as f64).sqrt();
        let m4: f64 = vals.iter().map(|v| (v - emp_mean).powi(4)).sum::<f64>() / n as f64;
        let se_var = ((m4 - emp_var * emp_var).max(0.0) / n as f64).sqrt();
        assert!((mean - emp_mean).abs() < 4.0 * se_mean, "{mean} vs {emp_mean}");
        assert!((var - emp_var).abs() < 4.0 * se_var, "{var} vs {emp_var}");
    }

    #[test]
    fn sampler_moments_match_formulas() {
        let d = GChi2::new(
            vec![1.2, -0.4],
            vec![1.0, 2.0],
            vec![0.8, 0.0],
            0.7,
            0.9,
        )
        .unwrap();
        let n = 1_000_000usize;
        let draws = d.sample(n, 7);
        let mean = draws.iter().sum::<f64>() / n as f64;
        let var = draws.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0);
        let se_mean = (d.variance() / n as f64).sqrt();
        assert!((mean - d.mean()).abs() < 4.0 * se_mean, "{mean} vs {}", d.mean());
        assert!((var - d.variance()).abs() / d.variance() < 0.02, "{var} vs {}", d.variance());
    }

    #[test]
    fn quantiles_invert_reference_distributions() {
        // Central chi-squared with 3 degrees of freedom.
        let chi3 = GChi2::new(vec![1.0], vec![3.0], vec![0.0], 0.0, 0.0).unwrap();
        let reference = ChiSquared::new(3.0).unwrap();
        for p in [0.01, 0.5, 0.95, 0.99] {
            let q = chi3.quantile(p).unwrap();
            assert_abs_diff_eq!(q, reference.inverse_cdf(p), epsilon = 1e-4);
            assert_abs_diff_eq!(chi3.cdf(q).unwrap(), p, epsilon = 1e-6);
        }

        // Affine Gaussian part only: quantiles of mu + sigma N.
        let gauss = GChi2::new(vec![1.0], vec![1.0], vec![0.0], 3.0, 2.0).unwrap();
        let q = gauss.quantile(0.5).unwrap();
        assert_abs_diff_eq!(gauss.cdf(q).unwrap(), 0.5, epsilon = 1e-6);

        assert!(chi3.quantile(0.0).is_err());
        assert!(chi3.quantile(1.0).is_err());
    }

    #[test]
    fn invalid_parameters_rejected() {
        assert!(GChi2::new(vec![0.0], vec![1.0], vec![0.0], 0.0, 0.0).is_err());
        assert!(GChi2::new(vec![1.0], vec![0.5], vec![0.0], 0.0, 0.0).is_err());
        assert!(GChi2::new(vec![1.0], vec![1.0], vec![-0.1], 0.0, 0.0).is_err());
        assert!(GChi2::new(vec![1.0], vec![1.0], vec![0.0], 0.0, -1.0).is_err());
        assert!(GChi2::new(vec![1.0, 2.0], vec![1.0], vec![0.0], 0.0, 0.0).is_err());

        // Asymmetric A is rejected before any decomposition.
        let mut q = QuadForm::new(Array2::eye(3), Array1::zeros(3), 0.0).unwrap();
        q.a[[0, 1]] = 0.5;
        let z = Array2::from_elem((3, 1), 1.0);
        let dgp = ArxSpec::new(vec![], vec![0.0], 1.0, z).unwrap();
        assert!(params_from_quadform(&q, &joint_law(&dgp)).is_err());
    }
}
