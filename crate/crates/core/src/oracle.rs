//! Plug-in parameter selection for simplified candidate models: the
//! expected KL divergence from the data-generating process to the
//! candidate's posterior predictive, and its minimizer over (phi, sigma2).
//!
//! With full-data training the predictive is N(Dy + e, sigma2_l V_l) and
//! averaging the Gaussian KL over y ~ N(m_*, sigma2_* V_*) gives the
//! closed form
//!
//!   E[KL] = 1/2 [ log |sigma2_l V_l| - log |e sigma2_* V_*|
//!         + (sigma2_*/sigma2_l) tr(V_l^{-1}(V_* + D V_* D'))
//!         + (1/sigma2_l) mu_d' V_l^{-1} mu_d ],   mu_d = (D - I) m_* + e.
//!
//! Because the candidate posterior covariance of beta does not depend on
//! phi_l, the determinant term is constant in phi_l and every trace term
//! is a low-degree polynomial whose coefficients can be precomputed, so
//! one objective evaluation costs O(T m^2) after an O(T^2 p) setup.

use ndarray::prelude::*;

use crate::analytic::{eljpd_quadform, SarxModel};
use crate::arx::{joint_law, ArxSpec};
use crate::error::{Error, Result};
use crate::gchisq;
use crate::linalg;

/// Nelder-Mead settings: initial simplex displacement, stopping spread of
/// objective values, and the iteration cap.
const NM_SIMPLEX_SCALE: f64 = 0.1;
const NM_SPREAD_TOL: f64 = 1e-9;
const NM_MAX_ITER: usize = 2000;

/// Plug-in parameters for a candidate model, with optimizer diagnostics.
#[derive(Debug, Clone)]
pub struct OracleResult {
    pub phi_hat: Vec<f64>,
    pub sigma2_hat: f64,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
}

/// Which population criterion the plug-in fit optimizes. The expected KL
/// divergence is minimized; the expected joint log score is maximized.
/// The two are equivalent up to a constant in the candidate parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitObjective {
    ExpectedKl,
    ExpectedLogScore,
}

/// Maps partial autocorrelations in (-1, 1)^p to AR coefficients via the
/// Levinson-Durbin recursion. The image is exactly the stationary region.
pub fn pacf_to_phi(pacf: &[f64]) -> Vec<f64> {
    let p = pacf.len();
    let mut a = vec![0.0; p];
    for k in 0..p {
        let kk = pacf[k];
        let prev = a[..k].to_vec();
        for j in 0..k {
            a[j] = prev[j] - kk * prev[k - 1 - j];
        }
        a[k] = kk;
    }
    a
}

/// Inverse of `pacf_to_phi`; errors when phi is not strictly stationary.
pub fn phi_to_pacf(phi: &[f64]) -> Result<Vec<f64>> {
    let p = phi.len();
    let mut pacf = vec![0.0; p];
    let mut a = phi.to_vec();
    for k in (0..p).rev() {
        let kk = a[k];
        if !(kk.abs() < 1.0) {
            return Err(Error::invalid(
                "AR coefficients lie outside the stationary region",
            ));
        }
        pacf[k] = kk;
        let denom = 1.0 - kk * kk;
        let cur = a.clone();
        for j in 0..k {
            a[j] = (cur[j] + kk * cur[k - 1 - j]) / denom;
        }
    }
    Ok(pacf)
}

fn unconstrained_to_phi(x: &[f64]) -> Vec<f64> {
    let pacf: Vec<f64> = x.iter().map(|v| v.tanh()).collect();
    pacf_to_phi(&pacf)
}

fn phi_to_unconstrained(phi: &[f64]) -> Result<Vec<f64>> {
    Ok(phi_to_pacf(phi)?.iter().map(|k| k.atanh()).collect())
}

/// Precomputed pieces of the expected-KL objective for one candidate
/// family (fixed Z, prior) against one DGP; evaluation varies only
/// (phi_l, sigma2_l).
struct KlContext {
    t: usize,
    p: usize,
    sigma2_star: f64,
    m_star: Array1<f64>,
    z: Array2<f64>,
    /// Frobenius inner products of row-shifted copies of L_*^{-1}; entry
    /// (j, k) pairs shifts j and k, index 0 meaning no shift.
    gram_shift: Array2<f64>,
    /// K_k = L_*^{-T} (shift-up-k Z); K(phi) = K_0 - sum phi_k K_k.
    k_parts: Vec<Array2<f64>>,
    /// Posterior covariance of beta on the full training set.
    sigma_beta: Array2<f64>,
    /// (Sigma_0^{-1} + 2 Z'Z)^{-1}, the Woodbury core of V_l^{-1}.
    g_mat: Array2<f64>,
    /// Z'Z - Z'Z G Z'Z = X' V_l^{-1} X, independent of phi.
    xtvx: Array2<f64>,
    /// log |I_m + Sigma_beta Z'Z| = log |V_l|, independent of phi.
    logdet_vl: f64,
    /// Z Sigma_beta Sigma_0^{-1} mu_0; e = L_l^{-1} of this vector.
    z_we: Array1<f64>,
}

impl KlContext {
    fn new(template: &SarxModel, dgp: &ArxSpec) -> Result<Self> {
        let t = template.t();
        if dgp.t() != t {
            return Err(Error::invalid(format!(
                "candidate has T = {t} but the DGP has T = {}",
                dgp.t()
            )));
        }
        let p = template.arx.p();
        let m = template.ncoef();
        let z = template.arx.z.clone();

        // DGP-side pieces.
        let linv_star = linalg::unit_lower_inverse(&dgp.phi, t);
        let mut m_star: Vec<f64> = dgp.z.dot(&Array1::from(dgp.beta.clone())).to_vec();
        linalg::solve_lower_inplace(&dgp.phi, &mut m_star);
        let m_star = Array1::from(m_star);

        let mut gram_shift = Array2::<f64>::zeros((p + 1, p + 1));
        for j in 0..=p {
            for k in j..=p {
                // <shift_j L_*^{-1}, shift_k L_*^{-1}>: row s of shift_j is
                // row s - j of the original, zero when s < j.
                let mut acc = 0.0;
                for s in 0..t {
                    if s < j || s < k {
                        continue;
                    }
                    let rj = linv_star.row(s - j);
                    let rk = linv_star.row(s - k);
                    // Rows of L_*^{-1} are supported on columns 0..=row.
                    let lim = (s - j).min(s - k);
                    for c in 0..=lim {
                        acc += rj[c] * rk[c];
                    }
                }
                gram_shift[[j, k]] = acc;
                gram_shift[[k, j]] = acc;
            }
        }

        let mut k_parts = Vec::with_capacity(p + 1);
        for k in 0..=p {
            // shift-up-k of Z: row s becomes row s + k of Z, zero at the end.
            let mut shifted = Array2::<f64>::zeros((t, m));
            for s in 0..t - k {
                shifted.row_mut(s).assign(&z.row(s + k));
            }
            linalg::solve_upper_t_mat(&dgp.phi, &mut shifted);
            k_parts.push(shifted);
        }

        // Candidate-side pieces, all independent of (phi_l, sigma2_l).
        let ztz = z.t().dot(&z);
        let prior_prec = linalg::spd_inverse(&template.prior_cov.view(), "prior covariance")?;
        let info = &ztz + &prior_prec;
        let sigma_beta = linalg::spd_inverse(&info.view(), "posterior information")?;
        let core = &prior_prec + &(2.0 * &ztz);
        let g_mat = linalg::spd_inverse(&core.view(), "Woodbury core")?;

        // |V_l| = |I_m + Sigma_beta Z'Z| = |Sigma_beta| |Sigma_0^{-1} + 2 Z'Z|,
        // a product of two SPD determinants.
        let logdet_vl = {
            let chol_sb = linalg::cholesky_lower(&sigma_beta.view(), "posterior covariance")?;
            let chol_core = linalg::cholesky_lower(&core.view(), "Woodbury core")?;
            linalg::logdet_from_chol(&chol_sb.view()) + linalg::logdet_from_chol(&chol_core.view())
        };

        let w_e = sigma_beta.dot(&prior_prec.dot(&template.prior_mean));
        let z_we = z.dot(&w_e);

        let xtvx = &ztz - &ztz.dot(&g_mat.dot(&ztz));

        Ok(KlContext {
            t,
            p,
            sigma2_star: dgp.sigma2,
            m_star,
            z,
            gram_shift,
            k_parts,
            sigma_beta,
            g_mat,

            xtvx,
            logdet_vl,
            z_we,
        })
    }

    /// E[KL] at candidate parameters (phi, sigma2).
    fn eval(&self, phi: &[f64], sigma2: f64) -> Result<f64> {
        if phi.len() != self.p {
            return Err(Error::invalid("phi length does not match the family order"));
        }
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return Err(Error::numerical(
                "candidate predictive covariance is not positive definite",
            ));
        }
        let t = self.t;
        let tf = t as f64;

        // tr(P_l V_*) as a quadratic polynomial in phi through the shifted
        // Gram matrix; coefficient vector (1, -phi_1, ..., -phi_p).
        let mut coef = vec![1.0];
        coef.extend(phi.iter().map(|v| -v));
        let mut tr_pv = 0.0;
        for j in 0..=self.p {
            for k in 0..=self.p {
                tr_pv += coef[j] * coef[k] * self.gram_shift[[j, k]];
            }
        }

        // K(phi) = L_*^{-T} L_l' Z.
        let mut kmat = self.k_parts[0].clone();
        for k in 1..=self.p {
            kmat.scaled_add(-phi[k - 1], &self.k_parts[k]);
        }
        let ktk = kmat.t().dot(&kmat);

        // tr(V_l^{-1} V_*) = tr(P_l V_*) - tr(G K'K).
        let tr_g_ktk = (&self.g_mat * &ktk).sum();
        let tr_vinv_v = tr_pv - tr_g_ktk;

        // tr(V_l^{-1} D V_* D') with D = X Sigma_beta Z' L_l reduces to
        // m x m products: tr(Sigma_beta K'K Sigma_beta (Z'Z - Z'Z G Z'Z)).
        let ss = self.sigma_beta.dot(&ktk.dot(&self.sigma_beta));
        let tr_dvd = (&ss * &self.xtvx).sum();

        // mu_d = D m_* + e - m_*.
        let lm = apply_ll(phi, &self.m_star);
        let ztlm = self.z.t().dot(&lm);
        let w = self.sigma_beta.dot(&ztlm);
        let mut dm: Vec<f64> = self.z.dot(&w).to_vec();
        linalg::solve_lower_inplace(phi, &mut dm);
        let mut e: Vec<f64> = self.z_we.to_vec();
        linalg::solve_lower_inplace(phi, &mut e);
        let mu_d = Array1::from_shape_fn(t, |i| dm[i] + e[i] - self.m_star[i]);

        // mu_d' V_l^{-1} mu_d = mu_d' P_l mu_d - (Z' L_l mu_d)' G (Z' L_l mu_d).
        let l_mu = apply_ll(phi, &mu_d);
        let quad_p = l_mu.dot(&l_mu);
        let zt_lmu = self.z.t().dot(&l_mu);
        let quad = quad_p - zt_lmu.dot(&self.g_mat.dot(&zt_lmu));

        let s2s = self.sigma2_star;
        let value = 0.5
            * (tf * sigma2.ln() + self.logdet_vl - tf - tf * s2s.ln()
                + (s2s / sigma2) * (tr_vinv_v + tr_dvd)
                + quad / sigma2);
        if !value.is_finite() {
            return Err(Error::numerical("expected KL evaluated to a non-finite value"));
        }
        Ok(value)
    }
}

/// L_l v for the unit lower-banded coefficient matrix of phi.
fn apply_ll(phi: &[f64], v: &Array1<f64>) -> Array1<f64> {
    let t = v.len();
    let p = phi.len();
    Array1::from_shape_fn(t, |s| {
        let mut acc = v[s];
        for k in 1..=p.min(s) {
            acc -= phi[k - 1] * v[s - k];
        }
        acc
    })
}

/// Expected KL divergence from the DGP joint law to the candidate's
/// full-data posterior predictive.
pub fn expected_kl(model: &SarxModel, dgp: &ArxSpec) -> Result<f64> {
    let ctx = KlContext::new(model, dgp)?;
    ctx.eval(model.phi(), model.sigma2())
}

/// Expected joint log score E_y[eljpd], the quantity whose maximizer the
/// expected-KL minimizer must match.
pub fn expected_log_score(model: &SarxModel, dgp: &ArxSpec) -> Result<f64> {
    let all: Vec<usize> = (1..=model.t()).collect();
    let q = eljpd_quadform(model, dgp, &all, &all)?;
    let (mean, _) = gchisq::moments(&q, &joint_law(dgp))?;
    Ok(mean)
}

/// One Nelder-Mead run from a fixed start; minimizes f.
fn nelder_mead<F: Fn(&[f64]) -> f64>(
    f: &F,
    x0: &[f64],
    scale: f64,
    tol: f64,
    max_iter: usize,
) -> (Vec<f64>, f64, usize, bool) {
    let n = x0.len();
    let mut simplex: Vec<Vec<f64>> = Vec::with_capacity(n + 1);
    simplex.push(x0.to_vec());
    for i in 0..n {
        let mut v = x0.to_vec();
        v[i] += scale;
        simplex.push(v);
    }
    let mut fv: Vec<f64> = simplex.iter().map(|v| f(v)).collect();
    let mut iters = 0;
    let mut converged = false;
    while iters < max_iter {
        let mut order: Vec<usize> = (0..=n).collect();
        order.sort_by(|&a, &b| fv[a].partial_cmp(&fv[b]).unwrap_or(std::cmp::Ordering::Equal));
        let reordered: Vec<Vec<f64>> = order.iter().map(|&i| simplex[i].clone()).collect();
        let refv: Vec<f64> = order.iter().map(|&i| fv[i]).collect();
        simplex = reordered;
        fv = refv;

        if fv[n] - fv[0] <= tol {
            converged = true;
            break;
        }
        iters += 1;

        let centroid: Vec<f64> =
            (0..n).map(|j| simplex[..n].iter().map(|v| v[j]).sum::<f64>() / n as f64).collect();
        let worst = simplex[n].clone();
        let reflect: Vec<f64> =
            (0..n).map(|j| centroid[j] + (centroid[j] - worst[j])).collect();
        let fr = f(&reflect);

        if fr < fv[0] {
            let expand: Vec<f64> =
                (0..n).map(|j| centroid[j] + 2.0 * (centroid[j] - worst[j])).collect();
            let fe = f(&expand);
            if fe < fr {
                simplex[n] = expand;
                fv[n] = fe;
            } else {
                simplex[n] = reflect;
                fv[n] = fr;
            }
        } else if fr < fv[n - 1] {
            simplex[n] = reflect;
            fv[n] = fr;
        } else {
            let (point, fp) = if fr < fv[n] {
                let outside: Vec<f64> =
                    (0..n).map(|j| centroid[j] + 0.5 * (centroid[j] - worst[j])).collect();
                let fo = f(&outside);
                (outside, fo)
            } else {
                let inside: Vec<f64> =
                    (0..n).map(|j| centroid[j] - 0.5 * (centroid[j] - worst[j])).collect();
                let fi = f(&inside);
                (inside, fi)
            };
            if fp < fv[n].min(fr) {
                simplex[n] = point;
                fv[n] = fp;
            } else {
                // Shrink toward the best vertex.
                for i in 1..=n {
                    for j in 0..n {
                        simplex[i][j] = simplex[0][j] + 0.5 * (simplex[i][j] - simplex[0][j]);
                    }
                    fv[i] = f(&simplex[i]);
                }
            }
        }
    }
    let mut best = 0;
    for i in 1..=n {
        if fv[i] < fv[best] {
            best = i;
        }
    }
    (simplex[best].clone(), fv[best], iters, converged)
}

/// Fixed multi-start initial points in the unconstrained coordinates
/// (atanh of partial autocorrelations, then log sigma2).
fn fixed_starts(p: usize, dgp: &ArxSpec) -> Vec<Vec<f64>> {
    let log_s2 = dgp.sigma2.ln();
    let truth_start = {
        let truncated: Vec<f64> =
            dgp.phi.iter().take(p).map(|v| v.clamp(-0.95, 0.95)).collect();
        let padded: Vec<f64> = (0..p).map(|i| truncated.get(i).copied().unwrap_or(0.0)).collect();
        match phi_to_unconstrained(&padded) {
            Ok(mut x) => {
                x.push(log_s2);
                x
            }
            Err(_) => {
                let mut x = vec![0.0; p];
                x.push(log_s2);
                x
            }
        }
    };
    let mut zero_start = vec![0.0; p];
    zero_start.push(log_s2);
    let mut offset_start: Vec<f64> =
        (0..p).map(|i| if i % 2 == 0 { 0.4 } else { -0.4 }).collect();
    offset_start.push(log_s2 + 0.7);
    vec![truth_start, zero_start, offset_start]
}

/// Minimizes the chosen population criterion over (phi, sigma2) for the
/// candidate family defined by `template` (its Z and prior; its phi and
/// sigma2 are ignored). Deterministic: three fixed starts, best result.
pub fn fit_plugin(
    template: &SarxModel,
    dgp: &ArxSpec,
    objective: FitObjective,
) -> Result<OracleResult> {
    let p = template.arx.p();
    if p > 2 {
        return Err(Error::invalid("plug-in fitting supports AR order at most 2"));
    }
    let ctx = KlContext::new(template, dgp)?;
    let score_template = template.clone();
    let dgp_clone = dgp.clone();
    let objective_fn = move |x: &[f64]| -> f64 {
        let phi = unconstrained_to_phi(&x[..p]);
        let sigma2 = x[p].exp();
        if !(sigma2 > 0.0) || !sigma2.is_finite() {
            return f64::INFINITY;
        }
        let val = match objective {
            FitObjective::ExpectedKl => ctx.eval(&phi, sigma2),
            FitObjective::ExpectedLogScore => {
                let arx = ArxSpec::new(
                    phi.clone(),
                    score_template.arx.beta.clone(),
                    sigma2,
                    score_template.arx.z.clone(),
                );
                match arx.and_then(|a| {
                    SarxModel::new(
                        a,
                        score_template.prior_mean.clone(),
                        score_template.prior_cov.clone(),
                    )
                }) {
                    Ok(m) => expected_log_score(&m, &dgp_clone).map(|s| -s),
                    Err(e) => Err(e),
                }
            }
        };
        val.unwrap_or(f64::INFINITY)
    };

    let mut best: Option<(Vec<f64>, f64, usize, bool)> = None;
    for start in fixed_starts(p, dgp) {
        let run = nelder_mead(&objective_fn, &start, NM_SIMPLEX_SCALE, NM_SPREAD_TOL, NM_MAX_ITER);
        let better = match &best {
            None => true,
            Some(b) => run.1 < b.1,
        };
        if better {
            best = Some(run);
        }
    }
    let (x, fval, iterations, converged) = best.expect("at least one start");
    let phi_hat = unconstrained_to_phi(&x[..p]);
    let sigma2_hat = x[p].exp();
    let objective_value = match objective {
        FitObjective::ExpectedKl => fval,
        FitObjective::ExpectedLogScore => -fval,
    };
    Ok(OracleResult { phi_hat, sigma2_hat, objective: objective_value, converged, iterations })
}

/// Plug-in parameters minimizing the expected KL divergence to the DGP.
pub fn fit_oracle(template: &SarxModel, dgp: &ArxSpec) -> Result<OracleResult> {
    fit_plugin(template, dgp, FitObjective::ExpectedKl)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::predictive_params;
    use crate::arx::{generate_covariates, is_stationary};
    use crate::rng::stream_rng;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn dgp_small(t: usize, seed: u64) -> ArxSpec {
        let z = generate_covariates(t, 3, seed);
        ArxSpec::new(vec![0.5, 0.2], vec![1.0, 0.8, -0.4], 1.3, z).unwrap()
    }

    /// Candidate family sharing the first `q` covariate columns of the DGP.
    fn candidate(dgp: &ArxSpec, p: usize, q_cols: usize, phi: Vec<f64>, sigma2: f64) -> SarxModel {
        assert_eq!(phi.len(), p);
        let z = dgp.z.slice(ndarray::s![.., ..q_cols]).to_owned();
        let arx = ArxSpec::new(phi, vec![0.0; q_cols], sigma2, z).unwrap();
        let mean = Array1::from_shape_fn(q_cols, |i| dgp.beta[i]);
        SarxModel::new(arx, mean, Array2::eye(q_cols)).unwrap()
    }

    /// Dense evaluation of the expected KL through the full predictive
    /// matrices, used as the oracle for the fast path.
    fn dense_expected_kl(model: &SarxModel, dgp: &ArxSpec) -> f64 {
        let t = model.t();
        let all: Vec<usize> = (1..=t).collect();
        let pp = predictive_params(model, &all).unwrap();
        let law = joint_law(dgp);
        let sig0 = law.covariance();
        let sig1 = pp.v.mapv(|v| v * pp.sigma2);
        let c0 = linalg::cholesky_lower(&sig0.view(), "dgp cov").unwrap();
        let c1 = linalg::cholesky_lower(&sig1.view(), "model cov").unwrap();
        let ld0 = linalg::logdet_from_chol(&c0.view());
        let ld1 = linalg::logdet_from_chol(&c1.view());
        let sig1_inv = linalg::spd_inverse(&sig1.view(), "model cov").unwrap();
        let tr0 = (&sig1_inv * &sig0).sum();
        let dsd = pp.d.dot(&sig0).dot(&pp.d.t());
        let tr1 = (&sig1_inv * &dsd).sum();
        let mu_d = pp.d.dot(&law.mean) + &pp.e - &law.mean;
        let quad = mu_d.dot(&sig1_inv.dot(&mu_d));
        0.5 * (tr0 + tr1 + quad - t as f64 + ld1 - ld0)
    }

    #[test]
    fn pacf_maps_round_trip() {
        let mut rng = stream_rng(31, 0);
        for p in 1..=4 {
            for _ in 0..20 {
                let pacf: Vec<f64> =
                    (0..p).map(|_| 1.9 * rng.gen::<f64>() - 0.95).collect();
                let phi = pacf_to_phi(&pacf);
                assert!(is_stationary(&phi), "pacf {pacf:?} gave unstable {phi:?}");
                let back = phi_to_pacf(&phi).unwrap();
                for j in 0..p {
                    assert!((back[j] - pacf[j]).abs() < 1e-12);
                }
                let x = phi_to_unconstrained(&phi).unwrap();
                let phi2 = unconstrained_to_phi(&x);
                for j in 0..p {
                    assert!((phi2[j] - phi[j]).abs() < 1e-12);
                }
            }
        }
        assert!(phi_to_pacf(&[1.2]).is_err());
        assert!(phi_to_pacf(&[0.5, 0.6]).is_err());
    }

    #[test]
    fn kl_zero_for_matched_predictive() {
        let t = 20;
        let dgp = dgp_small(t, 500);
        // Point-mass prior at the truth with matched phi and sigma2: the
        // predictive collapses onto the DGP law.
        let z = dgp.z.clone();
        let arx = ArxSpec::new(dgp.phi.clone(), dgp.beta.clone(), dgp.sigma2, z).unwrap();
        let model = SarxModel::new(
            arx,
            Array1::from(dgp.beta.clone()),
            Array2::<f64>::eye(3).mapv(|v| v * 1e-12),
        )
        .unwrap();
        let kl = expected_kl(&model, &dgp).unwrap();
        assert!(kl >= -1e-10, "kl = {kl}");
        assert!(kl < 1e-6, "kl = {kl}");
    }

    #[test]
    fn kl_positive_for_mismatched_models() {
        let t = 25;
        let dgp = dgp_small(t, 501);
        let mut rng = stream_rng(77, 0);
        for _ in 0..50 {
            let phi = vec![1.8 * rng.gen::<f64>() - 0.9];
            let sigma2 = 0.3 + 2.0 * rng.gen::<f64>();
            let model = candidate(&dgp, 1, 2, phi, sigma2);
            let kl = expected_kl(&model, &dgp).unwrap();
            assert!(kl >= -1e-10);
            assert!(kl > 0.0, "mismatched candidate scored kl = {kl}");
        }
    }

    #[test]
    fn fast_path_matches_dense_formula() {
        let mut rng = stream_rng(78, 0);
        for p in 0..=2 {
            for trial in 0..4 {
                let t = 18 + trial;
                let dgp = dgp_small(t, 510 + p as u64 * 10 + trial as u64);
                let phi: Vec<f64> =
                    (0..p).map(|_| 1.2 * rng.gen::<f64>() - 0.6).collect();
                let sigma2 = 0.5 + rng.gen::<f64>();
                let model = candidate(&dgp, p, 2, phi, sigma2);
                let fast = expected_kl(&model, &dgp).unwrap();
                let dense = dense_expected_kl(&model, &dgp);
                assert!(
                    (fast - dense).abs() <= 1e-9 * (1.0 + dense.abs()),
                    "p={p} trial={trial}: {fast} vs {dense}"
                );
            }
        }
    }

    #[test]
    fn kl_matches_nested_monte_carlo() {
        let t = 6;
        let dgp = dgp_small(t, 520);
        let model = candidate(&dgp, 1, 2, vec![0.3], 1.0);
        let analytic = expected_kl(&model, &dgp).unwrap();

        let all: Vec<usize> = (1..=t).collect();
        let pp = predictive_params(&model, &all).unwrap();
        let law = joint_law(&dgp);
        let sig0 = law.covariance();
        let sig1 = pp.v.mapv(|v| v * pp.sigma2);
        let c0 = linalg::cholesky_lower(&sig0.view(), "dgp cov").unwrap();
        let c1 = linalg::cholesky_lower(&sig1.view(), "model cov").unwrap();
        let constant = 0.5
            * ((&linalg::spd_inverse(&sig1.view(), "m").unwrap() * &sig0).sum() - t as f64
                + linalg::logdet_from_chol(&c1.view())
                - linalg::logdet_from_chol(&c0.view()));
        let sig1_inv = linalg::spd_inverse(&sig1.view(), "m").unwrap();

        let n = 10_000usize;
        let paths = crate::arx::simulate(&dgp, 33, n);
        let mut vals = Vec::with_capacity(n);
        for y in paths.rows() {
            let diff = pp.d.dot(&y) + &pp.e - &law.mean;
            vals.push(constant + 0.5 * diff.dot(&sig1_inv.dot(&diff)));
        }
        let mean = vals.iter().sum::<f64>() / n as f64;
        let sd = (vals.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n as f64 - 1.0))
            .sqrt();
        let se = sd / (n as f64).sqrt();
        assert!(
            (analytic - mean).abs() <= 3.0 * se,
            "analytic {analytic} vs MC {mean} (se {se})"
        );
    }

    #[test]
    fn oracle_fit_recovers_independence() {
        // DGP without autoregression; the order-1 candidate shares Z and a
        // truth-centered prior, so the best phi is zero.
        let t = 30;
        let z = generate_covariates(t, 3, 530);
        let dgp = ArxSpec::new(vec![], vec![1.0, 0.8, -0.4], 1.3, z.clone()).unwrap();
        let arx = ArxSpec::new(vec![0.0], vec![0.0; 3], 1.0, z).unwrap();
        let template =
            SarxModel::new(arx, Array1::from(dgp.beta.clone()), Array2::eye(3)).unwrap();
        let fit = fit_oracle(&template, &dgp).unwrap();
        assert!(fit.converged);
        assert!(fit.phi_hat[0].abs() < 1e-3, "phi_hat = {:?}", fit.phi_hat);

        // Grid oracle at resolution 1e-3 in phi, with sigma2 minimized per
        // node by golden-section on the log scale.
        let ctx = KlContext::new(&template, &dgp).unwrap();
        let golden = |phi: f64| -> f64 {
            let (mut a, mut b) = (-3.0f64, 3.0f64);
            let gr = 0.5 * (5.0f64.sqrt() - 1.0);
            let f = |ls: f64| ctx.eval(&[phi], ls.exp()).unwrap_or(f64::INFINITY);
            let (mut c, mut d) = (b - gr * (b - a), a + gr * (b - a));
            let (mut fc, mut fd) = (f(c), f(d));
            for _ in 0..60 {
                if fc < fd {
                    b = d;
                    d = c;
                    fd = fc;
                    c = b - gr * (b - a);
                    fc = f(c);
                } else {
                    a = c;
                    c = d;
                    fc = fd;
                    d = a + gr * (b - a);
                    fd = f(d);
                }
            }
            fc.min(fd)
        };
        let mut best_phi = 0.0;
        let mut best_val = f64::INFINITY;
        let mut grid_phi = -0.2f64;
        while grid_phi <= 0.2 {
            let v = golden(grid_phi);
            if v < best_val {
                best_val = v;
                best_phi = grid_phi;
            }
            grid_phi += 1e-3;
        }
        assert!(
            (fit.phi_hat[0] - best_phi).abs() <= 2e-3,
            "fit {} vs grid {best_phi}",
            fit.phi_hat[0]
        );
        assert!(fit.objective <= best_val + 1e-9);
    }

    #[test]
    fn variance_only_fit_inflates_for_omitted_regressors() {
        // Candidate keeps 2 of 3 covariates and has no AR part; the missing
        // signal must be absorbed as extra predictive variance.
        let t = 40;
        let z = generate_covariates(t, 3, 531);
        let dgp = ArxSpec::new(vec![], vec![1.0, 0.8, -1.2], 1.0, z).unwrap();
        let template = candidate(&dgp, 0, 2, vec![], 1.0);
        let fit = fit_oracle(&template, &dgp).unwrap();
        assert!(fit.converged);
        assert!(fit.phi_hat.is_empty());
        assert!(fit.sigma2_hat >= dgp.sigma2, "sigma2_hat = {}", fit.sigma2_hat);

        // 1D grid oracle over log sigma2.
        let ctx = KlContext::new(&template, &dgp).unwrap();
        let mut best = f64::INFINITY;
        let mut best_s2 = 0.0;
        for i in 0..=6000 {
            let ls = -3.0 + 6.0 * i as f64 / 6000.0;
            let v = ctx.eval(&[], ls.exp()).unwrap();
            if v < best {
                best = v;
                best_s2 = ls.exp();
            }
        }
        assert!(
            (fit.sigma2_hat - best_s2).abs() <= 1e-2 * best_s2,
            "fit {} vs grid {best_s2}",
            fit.sigma2_hat
        );
        assert!(fit.objective <= best + 1e-9);
    }

    #[test]
    fn optimum_dominates_truth_and_random_points() {
        let t = 30;
        let dgp = dgp_small(t, 532);
        let template = candidate(&dgp, 1, 2, vec![0.0], 1.0);
        let fit = fit_oracle(&template, &dgp).unwrap();
        assert!(is_stationary(&fit.phi_hat));
        assert!(fit.sigma2_hat > 0.0);

        // Truncated truth: first AR coefficient of the DGP, its sigma2.
        let truth = candidate(&dgp, 1, 2, vec![dgp.phi[0]], dgp.sigma2);
        let at_truth = expected_kl(&truth, &dgp).unwrap();
        assert!(fit.objective <= at_truth + 1e-9);

        let mut rng = stream_rng(79, 0);
        for _ in 0..50 {
            let phi = vec![1.8 * rng.gen::<f64>() - 0.9];
            let sigma2 = (0.5 * rng.sample::<f64, _>(StandardNormal)).exp() * dgp.sigma2;
            let point = candidate(&dgp, 1, 2, phi, sigma2);
            let val = expected_kl(&point, &dgp).unwrap();
            assert!(fit.objective <= val + 1e-9, "{} > {}", fit.objective, val);
        }
    }

    #[test]
    fn score_and_kl_fits_agree() {
        // The expected joint log score and the expected KL differ by a
        // constant in the candidate parameters, so their optima must agree
        // coordinatewise; both optimizers are deterministic.
        for (seed, p) in [(540u64, 1usize), (541, 2)] {
            let t = 20;
            let dgp = dgp_small(t, seed);
            let template = candidate(&dgp, p, 2, vec![0.0; p], 1.0);
            let kl_fit = fit_plugin(&template, &dgp, FitObjective::ExpectedKl).unwrap();
            let score_fit =
                fit_plugin(&template, &dgp, FitObjective::ExpectedLogScore).unwrap();
            for j in 0..p {
                assert!(
                    (kl_fit.phi_hat[j] - score_fit.phi_hat[j]).abs() < 1e-6,
                    "p={p} phi: {:?} vs {:?}",
                    kl_fit.phi_hat,
                    score_fit.phi_hat
                );
            }
            assert!(
                (kl_fit.sigma2_hat - score_fit.sigma2_hat).abs()
                    < 1e-6 * (1.0 + kl_fit.sigma2_hat),
                "p={p} sigma2: {} vs {}",
                kl_fit.sigma2_hat,
                score_fit.sigma2_hat
            );
            // The two optima must reproduce the entropy-gap identity:
            // E[score] = -T/2 log(2 pi e sigma2_*) - E[KL] + (dgp entropy
            // offset), so the sum of the score and the KL at the shared
            // optimum equals the negative DGP entropy.
            let entropy = 0.5
                * (t as f64)
                * (1.0 + (2.0 * std::f64::consts::PI * dgp.sigma2).ln());
            assert!(
                (score_fit.objective + kl_fit.objective + entropy).abs() < 1e-5,
                "identity gap: {}",
                score_fit.objective + kl_fit.objective + entropy
            );
        }
    }

    #[test]
    fn fits_are_deterministic() {
        let dgp = dgp_small(24, 542);
        let template = candidate(&dgp, 2, 3, vec![0.0, 0.0], 1.0);
        let a = fit_oracle(&template, &dgp).unwrap();
        let b = fit_oracle(&template, &dgp).unwrap();
        assert_eq!(a.phi_hat, b.phi_hat);
        assert_eq!(a.sigma2_hat, b.sigma2_hat);
        assert_eq!(a.iterations, b.iterations);
    }
}
