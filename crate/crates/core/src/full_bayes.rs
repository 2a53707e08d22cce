//! Fully Bayesian treatment of the order-one autoregression with exogenous
//! regressors. The coefficient vector and noise variance carry a
//! normal-inverse-gamma prior, the autoregressive coefficient an
//! independent beta prior rescaled to (-1, 1), so every marginal or
//! predictive density reduces to a one-dimensional integral over the
//! autoregressive coefficient. That integral is evaluated by nested
//! Clenshaw-Curtis quadrature with one bisection refinement around the
//! posterior mode, and posterior sampling composes an inverse-CDF draw of
//! the autoregressive coefficient with exact conditional draws of the
//! variance and the coefficients.

use std::cell::Cell;
use std::f64::consts::PI;

use ndarray::{aview1, Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::gamma::ln_gamma;

use crate::arx::ArxSpec;
use crate::error::{Error, Result};
use crate::linalg::{
    apply_lower_inplace, apply_upper_t_inplace, cholesky_lower, logdet_from_chol,
    precision_entry, solve_lower_inplace, solve_lower_mat, solve_upper_t_inplace, spd_inverse,
    symmetrize, tri_lower_solve_mat, tri_lower_solve_vec, tri_lower_t_solve_mat,
    tri_lower_t_solve_vec,
};
use crate::rng::stream_rng;
use crate::schemes::{FoldPlan, Mode};

/// Quadrature nodes live on [-1 + inset, 1 - inset]; the inset keeps beta
/// densities with exponents below one finite at the grid ends.
pub const PHI_DOMAIN_INSET: f64 = 1e-6;

/// Node count of the base Clenshaw-Curtis rule. Odd, so the nested rule of
/// (BASE_NODES + 1) / 2 points reuses every other node.
const BASE_NODES: usize = 257;

/// Node count used for the outer panels after a refinement split.
const PANEL_NODES: usize = 129;

/// A single node may carry at most this fraction of the total mass before
/// the grid is refined around it.
const REFINE_MASS_FRACTION: f64 = 0.2;

/// The difference between the base and nested quadrature values, in log
/// units, beyond which the integral is reported as failed.
const QUAD_LOG_TOL: f64 = 1e-2;

/// Prior for the fully Bayesian model: coefficients are Gaussian with
/// covariance sigma2 * sigma0 given the variance, the variance is
/// inverse-gamma(a0, b0), and the autoregressive coefficient has an
/// independent beta(c0, d0) prior rescaled to (-1, 1).
#[derive(Debug, Clone)]
pub struct FullPrior {
    pub mu0: Array1<f64>,
    pub sigma0: Array2<f64>,
    pub a0: f64,
    pub b0: f64,
    pub c0: f64,
    pub d0: f64,
}

impl FullPrior {
    pub fn new(
        mu0: Array1<f64>,
        sigma0: Array2<f64>,
        a0: f64,
        b0: f64,
        c0: f64,
        d0: f64,
    ) -> Result<Self> {
        if sigma0.nrows() != sigma0.ncols() {
            return Err(Error::invalid("prior covariance must be square"));
        }
        if sigma0.nrows() != mu0.len() {
            return Err(Error::invalid(format!(
                "prior mean has {} entries but the covariance is {}x{}",
                mu0.len(),
                sigma0.nrows(),
                sigma0.ncols()
            )));
        }
        for (name, v) in [("a0", a0), ("b0", b0), ("c0", c0), ("d0", d0)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(format!(
                    "prior parameter {name} must be positive and finite, got {v}"
                )));
            }
        }
        cholesky_lower(&sigma0.view(), "coefficient prior covariance")?;
        Ok(Self { mu0, sigma0, a0, b0, c0, d0 })
    }

    /// Unit prior used throughout the experiments: identity coefficient
    /// covariance and all scalar hyperparameters equal to one.
    pub fn unit(mu0: Array1<f64>) -> Self {
        let m = mu0.len();
        Self { mu0, sigma0: Array2::eye(m), a0: 1.0, b0: 1.0, c0: 1.0, d0: 1.0 }
    }
}

/// Location and curvature of the log posterior of the autoregressive
/// coefficient at its mode.
#[derive(Debug, Clone, Copy)]
pub struct Laplace {
    pub mode: f64,
    pub hessian: f64,
}

/// Quadrature grid over the autoregressive coefficient. `log_weights[i]` is
/// the log of the unnormalized posterior mass carried by node i, so the log
/// marginal likelihood is the log-sum-exp of the weights.
#[derive(Debug, Clone)]
pub struct PhiGrid {
    pub nodes: Vec<f64>,
    pub log_weights: Vec<f64>,
    pub laplace: Laplace,
}

/// Log marginal likelihood together with the grid that produced it and the
/// Laplace-only estimate of the same quantity.
#[derive(Debug, Clone)]
pub struct MarginalEstimate {
    pub log_value: f64,
    pub laplace_log_value: f64,
    pub error_estimate: f64,
    pub grid: PhiGrid,
}

/// Posterior draws in struct-of-arrays form; row s of `beta` belongs to
/// draw s.
#[derive(Debug, Clone)]
pub struct PosteriorDraws {
    pub phi: Vec<f64>,
    pub sigma2: Vec<f64>,
    pub beta: Array2<f64>,
}

impl PosteriorDraws {
    pub fn len(&self) -> usize {
        self.phi.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phi.is_empty()
    }
}

/// Log density of the normal-inverse-gamma compound at `x`: the value of
/// integrating N(x | mu, sigma2 * sigma) against sigma2 ~ IG(a, b).
pub fn nig_logpdf(
    x: &ArrayView1<f64>,
    mu: &ArrayView1<f64>,
    sigma: &ArrayView2<f64>,
    a: f64,
    b: f64,
) -> Result<f64> {
    let p = x.len();
    if mu.len() != p || sigma.nrows() != p || sigma.ncols() != p {
        return Err(Error::invalid(format!(
            "dimension mismatch: x has {p}, mu has {}, sigma is {}x{}",
            mu.len(),
            sigma.nrows(),
            sigma.ncols()
        )));
    }
    if !(a.is_finite() && a > 0.0 && b.is_finite() && b > 0.0) {
        return Err(Error::invalid(format!(
            "shape and scale must be positive and finite, got a = {a}, b = {b}"
        )));
    }
    let chol = cholesky_lower(sigma, "compound density scale matrix")?;
    let resid: Vec<f64> = x.iter().zip(mu.iter()).map(|(xi, mi)| xi - mi).collect();
    let half = tri_lower_solve_vec(&chol.view(), &resid);
    let quad: f64 = half.iter().map(|v| v * v).sum();
    let hp = p as f64 / 2.0;
    Ok(ln_gamma(a + hp) - ln_gamma(a) + a * b.ln()
        - hp * (2.0 * PI).ln()
        - 0.5 * logdet_from_chol(&chol.view())
        - (a + hp) * (b + 0.5 * quad).ln())
}

/// Log density at `phi` of a beta(c, d) variable rescaled from (0, 1) to
/// (-1, 1).
pub fn scaled_beta_logpdf(phi: f64, c: f64, d: f64) -> f64 {
    if !(-1.0..=1.0).contains(&phi) || phi.abs() == 1.0 {
        return f64::NEG_INFINITY;
    }
    let x = 0.5 * (phi + 1.0);
    let ln_beta = ln_gamma(c) + ln_gamma(d) - ln_gamma(c + d);
    (c - 1.0) * x.ln() + (d - 1.0) * (1.0 - x).ln() - ln_beta - 2f64.ln()
}

/// Shared per-call state: the design matrix, prior factorizations, and the
/// coefficient-free products they determine.
struct PriorCtx<'a> {
    z: &'a Array2<f64>,
    t: usize,
    m: usize,
    mu0: &'a Array1<f64>,
    sigma0_inv: Array2<f64>,
    sigma0_inv_chol: Array2<f64>,
    logdet_sigma0: f64,
    zmu0: Array1<f64>,
    ztz: Array2<f64>,
    a0: f64,
    b0: f64,
    c0: f64,
    d0: f64,
}

impl<'a> PriorCtx<'a> {
    fn new(prior: &'a FullPrior, z: &'a Array2<f64>) -> Result<Self> {
        let t = z.nrows();
        let m = z.ncols();
        if t == 0 || m == 0 {
            return Err(Error::invalid("design matrix must be nonempty"));
        }
        if prior.mu0.len() != m {
            return Err(Error::invalid(format!(
                "prior mean has {} entries but the design matrix has {m} columns",
                prior.mu0.len()
            )));
        }
        let chol = cholesky_lower(&prior.sigma0.view(), "coefficient prior covariance")?;
        let logdet_sigma0 = logdet_from_chol(&chol.view());
        let sigma0_inv = spd_inverse(&prior.sigma0.view(), "coefficient prior covariance")?;
        let sigma0_inv_chol = cholesky_lower(&sigma0_inv.view(), "coefficient prior precision")?;
        Ok(Self {
            z,
            t,
            m,
            mu0: &prior.mu0,
            sigma0_inv,
            sigma0_inv_chol,
            logdet_sigma0,
            zmu0: z.dot(&prior.mu0),
            ztz: z.t().dot(z),
            a0: prior.a0,
            b0: prior.b0,
            c0: prior.c0,
            d0: prior.d0,
        })
    }
}

/// Sufficient statistics of one observation set at a fixed autoregressive
/// coefficient. `quad` and `logdet` describe the marginal Gaussian factor of
/// the set; `info_chol` and `info_inv_b` describe the conditional
/// coefficient posterior.
struct SetStats {
    n: usize,
    quad: f64,
    logdet: f64,
    info_chol: Array2<f64>,
    info_inv_b: Array1<f64>,
}

/// Statistics of the observation subset `set0` (0-based, sorted) with the
/// given observed values, at autoregressive coefficient `phi`. Work per call
/// is linear in the series length apart from a dense factor of the
/// complement block.
fn set_stats(phi: f64, values: &[f64], set0: &[usize], pc: &PriorCtx) -> Result<SetStats> {
    debug_assert_eq!(values.len(), set0.len());
    if set0.is_empty() {
        return Ok(SetStats {
            n: 0,
            quad: 0.0,
            logdet: 0.0,
            info_chol: pc.sigma0_inv_chol.clone(),
            info_inv_b: Array1::zeros(pc.m),
        });
    }
    let t = pc.t;
    let m = pc.m;
    let pharr = [phi];

    let mut in_set = vec![false; t];
    for &i in set0 {
        in_set[i] = true;
    }
    let comp: Vec<usize> = (0..t).filter(|i| !in_set[*i]).collect();

    let mut xmu = pc.zmu0.to_vec();
    solve_lower_inplace(&pharr, &mut xmu);

    let mut u = vec![0.0; t];
    for (j, &i) in set0.iter().enumerate() {
        u[i] = values[j] - xmu[i];
    }
    let mut v = u.clone();
    apply_lower_inplace(&pharr, &mut v);
    apply_upper_t_inplace(&pharr, &mut v);
    let quad_full: f64 = u.iter().zip(&v).map(|(a, b)| a * b).sum();

    let (quad_w, mut a_mat, b_vec, logdet_w) = if comp.is_empty() {
        let mut s = v.clone();
        solve_upper_t_inplace(&pharr, &mut s);
        let b = pc.z.t().dot(&aview1(&s));
        (quad_full, pc.ztz.clone(), b, 0.0)
    } else {
        let mut x_mat = pc.z.to_owned();
        solve_lower_mat(&pharr, &mut x_mat);
        let mut ltz = pc.z.to_owned();
        for i in 0..t {
            for (j, &ph) in pharr.iter().enumerate() {
                let k = i + j + 1;
                if k < t {
                    let row = pc.z.row(k).to_owned();
                    ltz.row_mut(i).scaled_add(-ph, &row);
                }
            }
        }

        let nc = comp.len();
        let mut pcc = Array2::<f64>::zeros((nc, nc));
        for (a, &i) in comp.iter().enumerate() {
            for (b, &j) in comp.iter().enumerate() {
                pcc[[a, b]] = precision_entry(&pharr, t, i, j);
            }
        }
        let pcc_chol = cholesky_lower(&pcc.view(), "held-out precision block")?;

        let vc: Vec<f64> = comp.iter().map(|&i| v[i]).collect();
        let half = tri_lower_solve_vec(&pcc_chol.view(), &vc);
        let xc = tri_lower_t_solve_vec(&pcc_chol.view(), &half);
        let quad_w = quad_full - vc.iter().zip(&xc).map(|(a, b)| a * b).sum::<f64>();

        let mut x_c = Array2::<f64>::zeros((nc, m));
        let mut ltz_c = Array2::<f64>::zeros((nc, m));
        for (a, &i) in comp.iter().enumerate() {
            x_c.row_mut(a).assign(&x_mat.row(i));
            ltz_c.row_mut(a).assign(&ltz.row(i));
        }
        let u_mat = &ltz_c - &pcc.dot(&x_c);
        let y_mat = {
            let tmp = tri_lower_solve_mat(&pcc_chol.view(), &u_mat.view());
            tri_lower_t_solve_mat(&pcc_chol.view(), &tmp.view())
        };
        let mut a_mat = pc.ztz.clone();
        a_mat -= &x_c.t().dot(&ltz_c);
        a_mat -= &u_mat.t().dot(&x_c);
        a_mat -= &u_mat.t().dot(&y_mat);

        let mut v_masked = v.clone();
        for &i in &comp {
            v_masked[i] = 0.0;
        }
        let mut b_vec = x_mat.t().dot(&aview1(&v_masked));
        b_vec -= &u_mat.t().dot(&aview1(&xc));

        (quad_w, a_mat, b_vec, logdet_from_chol(&pcc_chol.view()))
    };

    symmetrize(&mut a_mat);
    let mut info = &pc.sigma0_inv + &a_mat;
    symmetrize(&mut info);
    let info_chol = cholesky_lower(&info.view(), "conditional coefficient precision")?;
    let half = tri_lower_solve_vec(&info_chol.view(), b_vec.as_slice().expect("contiguous"));
    let mut quad = quad_w - half.iter().map(|x| x * x).sum::<f64>();
    if quad < 0.0 {
        if quad < -1e-8 * (1.0 + quad_w.abs()) {
            return Err(Error::numerical(format!(
                "marginal quadratic form is negative ({quad:.3e}) at phi = {phi}"
            )));
        }
        quad = 0.0;
    }
    let logdet = logdet_w + pc.logdet_sigma0 + logdet_from_chol(&info_chol.view());
    let info_inv_b = Array1::from(tri_lower_t_solve_vec(&info_chol.view(), &half));
    Ok(SetStats { n: set0.len(), quad, logdet, info_chol, info_inv_b })
}

/// Log of the marginal density of the set's values at a fixed phi, with the
/// coefficients and the variance integrated out.
fn nig_log_density_from_stats(s: &SetStats, pc: &PriorCtx) -> f64 {
    let hn = s.n as f64 / 2.0;
    ln_gamma(pc.a0 + hn) - ln_gamma(pc.a0) + pc.a0 * pc.b0.ln()
        - hn * (2.0 * PI).ln()
        - 0.5 * s.logdet
        - (pc.a0 + hn) * (pc.b0 + 0.5 * s.quad).ln()
}

/// Nodes (ascending) and weights of the n-point Clenshaw-Curtis rule on
/// [lo, hi], endpoints included. n must be odd and at least 3.
fn cc_lobatto(n: usize, lo: f64, hi: f64) -> (Vec<f64>, Vec<f64>) {
    debug_assert!(n >= 3 && n % 2 == 1);
    let big_n = n - 1;
    let half = 0.5 * (hi - lo);
    let mid = 0.5 * (hi + lo);
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for k in 0..=big_n {
        let theta = k as f64 * PI / big_n as f64;
        let mut s = 0.0;
        for j in 1..=(big_n / 2) {
            let bj = if 2 * j == big_n { 1.0 } else { 2.0 };
            s += bj * (2.0 * j as f64 * theta).cos() / ((4 * j * j - 1) as f64);
        }
        let ck = if k == 0 || k == big_n { 1.0 } else { 2.0 };
        nodes[big_n - k] = mid + half * theta.cos();
        weights[big_n - k] = ck / big_n as f64 * (1.0 - s) * half;
    }
    nodes[0] = lo;
    nodes[big_n] = hi;
    (nodes, weights)
}

struct Assembled {
    nodes: Vec<f64>,
    weights: Vec<f64>,
    fvals: Vec<f64>,
    log_value: f64,
    log_nested: f64,
}

/// Evaluate the composite Clenshaw-Curtis rule over the given panels
/// (lo, hi, node count). Panel boundaries shared by two panels are merged
/// into one node carrying both weights. The nested value reuses every other
/// node of each panel with the half-order weights.
fn assemble<F: Fn(f64) -> f64>(panels: &[(f64, f64, usize)], f: &F) -> Result<Assembled> {
    let mut nodes: Vec<f64> = Vec::new();
    let mut weights: Vec<f64> = Vec::new();
    let mut nested: Vec<f64> = Vec::new();
    for &(lo, hi, n) in panels {
        let (nd, wf) = cc_lobatto(n, lo, hi);
        let (_, wn) = cc_lobatto((n + 1) / 2, lo, hi);
        for k in 0..n {
            let w_nested = if k % 2 == 0 { wn[k / 2] } else { 0.0 };
            if k == 0 && !nodes.is_empty() && *nodes.last().unwrap() == nd[0] {
                *weights.last_mut().unwrap() += wf[0];
                *nested.last_mut().unwrap() += w_nested;
            } else {
                nodes.push(nd[k]);
                weights.push(wf[k]);
                nested.push(w_nested);
            }
        }
    }
    let fvals: Vec<f64> = nodes.iter().map(|&x| f(x)).collect();
    let shift = fvals.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    if !shift.is_finite() {
        return Err(Error::numerical(format!(
            "integrand has no finite values on {} quadrature nodes spanning [{:.6}, {:.6}]",
            nodes.len(),
            nodes.first().unwrap(),
            nodes.last().unwrap()
        )));
    }
    let mut total = 0.0;
    let mut total_nested = 0.0;
    for k in 0..nodes.len() {
        if fvals[k].is_finite() {
            let e = (fvals[k] - shift).exp();
            total += weights[k] * e;
            total_nested += nested[k] * e;
        }
    }
    if !(total > 0.0 && total.is_finite()) {
        return Err(Error::numerical(format!(
            "quadrature mass is not positive and finite: total = {total:.3e} at shift {shift:.3e}"
        )));
    }
    Ok(Assembled {
        nodes,
        weights,
        fvals,
        log_value: shift + total.ln(),
        log_nested: if total_nested > 0.0 { shift + total_nested.ln() } else { f64::NEG_INFINITY },
    })
}

/// Maximum of g on [lo, hi] by golden-section search followed by one
/// parabolic polish step. Returns the argument and the value.
fn golden_max<G: Fn(f64) -> f64>(g: &G, lo: f64, hi: f64) -> (f64, f64) {
    let invphi = 0.5 * (5f64.sqrt() - 1.0);
    let (mut a, mut b) = (lo, hi);
    let mut c = b - invphi * (b - a);
    let mut d = a + invphi * (b - a);
    let (mut gc, mut gd) = (g(c), g(d));
    for _ in 0..200 {
        if gc >= gd || gd.is_nan() {
            b = d;
            d = c;
            gd = gc;
            c = b - invphi * (b - a);
            gc = g(c);
        } else {
            a = c;
            c = d;
            gc = gd;
            d = a + invphi * (b - a);
            gd = g(d);
        }
        if b - a < 1e-13 {
            break;
        }
    }
    let mut arg = 0.5 * (a + b);
    let mut val = g(arg);

    let h = 1e-6 * (hi - lo);
    if arg - h > lo && arg + h < hi {
        let (gm, gp) = (g(arg - h), g(arg + h));
        let denom = gm - 2.0 * val + gp;
        if denom < 0.0 {
            let step = 0.5 * h * (gm - gp) / denom;
            if step.abs() < h {
                let cand = arg + step;
                let gcand = g(cand);
                if gcand > val {
                    arg = cand;
                    val = gcand;
                }
            }
        }
    }
    (arg, val)
}

/// Mode, curvature at the mode, peak value, and Laplace estimate of the log
/// integral of exp(f) over [lo, hi]. The search and the Laplace value work
/// on the unconstrained arc-tangent scale, where the integrand is closer to
/// Gaussian, and the value carries the next term of the Laplace series
/// (third and fourth log-derivatives), which removes the order-1/T bias the
/// heavy-tailed variance mixture leaves in the plain Gaussian estimate. The
/// reported mode and curvature are on the original scale.
fn laplace_fit<F: Fn(f64) -> f64>(f: &F, lo: f64, hi: f64) -> (f64, f64, f64, f64) {
    let g = |zeta: f64| -> f64 {
        let phi = zeta.tanh();
        let jac = (1.0 - phi * phi).max(f64::MIN_POSITIVE);
        f(phi) + jac.ln()
    };
    let (zlo, zhi) = (lo.atanh(), hi.atanh());
    let (zmode, g_mode) = golden_max(&g, zlo, zhi);

    let rough_h = 1e-4;
    let zc0 = zmode.clamp(zlo + rough_h, zhi - rough_h);
    let rough = (g(zc0 - rough_h) - 2.0 * g(zc0) + g(zc0 + rough_h)) / (rough_h * rough_h);
    let laplace_log_value = if rough < -1e-12 {
        // Five-point stencil scaled to the peak width for the second, third,
        // and fourth derivatives at the mode.
        let h = (0.15 / (-rough).sqrt()).min(0.25 * (zhi - zlo));
        let zc = zmode.clamp(zlo + 2.0 * h, zhi - 2.0 * h);
        let d: Vec<f64> = (-2..=2).map(|k| g(zc + k as f64 * h)).collect();
        let g2 = (-d[0] + 16.0 * d[1] - 30.0 * d[2] + 16.0 * d[3] - d[4]) / (12.0 * h * h);
        let g3 = (-d[0] + 2.0 * d[1] - 2.0 * d[3] + d[4]) / (2.0 * h * h * h);
        let g4 = (d[0] - 4.0 * d[1] + 6.0 * d[2] - 4.0 * d[3] + d[4]) / (h * h * h * h);
        let g2 = if g2 < -1e-12 { g2 } else { rough };
        let corr = g4 / (8.0 * g2 * g2) - 5.0 * g3 * g3 / (24.0 * g2 * g2 * g2);
        let base = g_mode + 0.5 * (2.0 * PI / (-g2)).ln();
        if corr.is_finite() && corr > -0.5 {
            base + corr.ln_1p()
        } else {
            base
        }
    } else {
        g_mode + (zhi - zlo).ln()
    };

    let mode = zmode.tanh().clamp(lo, hi);
    let f_mode = f(mode);
    let hp = 1e-5_f64.min(0.25 * (hi - mode).min(mode - lo)).max(1e-9);
    let center = mode.clamp(lo + hp, hi - hp);
    let hessian = (f(center - hp) - 2.0 * f(center) + f(center + hp)) / (hp * hp);
    (mode, hessian, f_mode, laplace_log_value)
}

struct GridOutcome {
    log_value: f64,
    laplace_log_value: f64,
    error_estimate: f64,
    grid: PhiGrid,
}

/// Integrate exp(f) over the inset coefficient domain. Refines the grid once
/// around the heaviest node when that node carries more than
/// REFINE_MASS_FRACTION of the mass.
fn marginal_grid<F: Fn(f64) -> f64>(f: &F) -> Result<GridOutcome> {
    let lo = -1.0 + PHI_DOMAIN_INSET;
    let hi = 1.0 - PHI_DOMAIN_INSET;

    let (mode, hessian, f_mode, laplace_log_value) = laplace_fit(f, lo, hi);

    let base = assemble(&[(lo, hi, BASE_NODES)], f)?;
    let top = top_mass_fraction(&base);
    let chosen = if top.1 > REFINE_MASS_FRACTION {
        let j = top.0;
        let mut a = if j == 0 { lo } else { base.nodes[j - 1] };
        let mut b = if j + 1 == base.nodes.len() { hi } else { base.nodes[j + 1] };
        // Tighten the panel to a curvature-sized window around the mode when
        // the peak is much narrower than the node spacing, so the refined
        // rule resolves it.
        if hessian < 0.0 {
            let sd = (-hessian).sqrt().recip();
            let (ca, cb) = (mode - 12.0 * sd, mode + 12.0 * sd);
            if ca > a && cb < b && cb > ca {
                a = ca.max(lo);
                b = cb.min(hi);
            }
        }
        let mut panels = Vec::new();
        if a - lo > 1e-12 {
            panels.push((lo, a, PANEL_NODES));
        }
        panels.push((a, b, BASE_NODES));
        if hi - b > 1e-12 {
            panels.push((b, hi, PANEL_NODES));
        }
        assemble(&panels, f)?
    } else {
        base
    };

    let error_estimate = (chosen.log_value - chosen.log_nested).abs();
    if !error_estimate.is_finite() || error_estimate > QUAD_LOG_TOL {
        return Err(Error::numerical(format!(
            "quadrature failed to converge: {} nodes, log value {:.6}, nested log value {:.6}, \
             mode {:.6}, peak log integrand {:.6}",
            chosen.nodes.len(),
            chosen.log_value,
            chosen.log_nested,
            mode,
            f_mode
        )));
    }

    let log_weights: Vec<f64> = chosen
        .weights
        .iter()
        .zip(&chosen.fvals)
        .map(|(w, fv)| w.ln() + fv)
        .collect();
    Ok(GridOutcome {
        log_value: chosen.log_value,
        laplace_log_value,
        error_estimate,
        grid: PhiGrid { nodes: chosen.nodes, log_weights, laplace: Laplace { mode, hessian } },
    })
}

fn top_mass_fraction(a: &Assembled) -> (usize, f64) {
    let shift = a.fvals.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
    let mut best = (0usize, 0.0f64);
    let mut total = 0.0;
    for k in 0..a.nodes.len() {
        if a.fvals[k].is_finite() {
            let mass = a.weights[k] * (a.fvals[k] - shift).exp();
            total += mass;
            if mass > best.1 {
                best = (k, mass);
            }
        }
    }
    (best.0, if total > 0.0 { best.1 / total } else { 0.0 })
}

/// 1-based strictly increasing indices to 0-based.
fn check_indices(t: usize, idx: &[usize], what: &str, allow_empty: bool) -> Result<Vec<usize>> {
    if idx.is_empty() && !allow_empty {
        return Err(Error::invalid(format!("{what} selection is empty")));
    }
    let mut prev = 0usize;
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        if i < 1 || i > t {
            return Err(Error::invalid(format!("{what} index {i} outside 1..={t}")));
        }
        if i <= prev {
            return Err(Error::invalid(format!("{what} indices must be strictly increasing")));
        }
        prev = i;
        out.push(i - 1);
    }
    Ok(out)
}

/// Marginal of one observation set, as a grid outcome. Node evaluations that
/// fail numerically contribute zero mass; the count is folded into the error
/// message when the whole integral fails.
fn marginal_for_set(values: &[f64], set0: &[usize], pc: &PriorCtx) -> Result<GridOutcome> {
    let failures = Cell::new(0usize);
    let f = |phi: f64| -> f64 {
        match set_stats(phi, values, set0, pc) {
            Ok(s) => {
                let v = nig_log_density_from_stats(&s, pc)
                    + scaled_beta_logpdf(phi, pc.c0, pc.d0);
                if v.is_nan() {
                    failures.set(failures.get() + 1);
                    f64::NEG_INFINITY
                } else {
                    v
                }
            }
            Err(_) => {
                failures.set(failures.get() + 1);
                f64::NEG_INFINITY
            }
        }
    };
    marginal_grid(&f).map_err(|e| {
        if failures.get() > 0 {
            Error::numerical(format!("{e} ({} node evaluations failed)", failures.get()))
        } else {
            e
        }
    })
}

/// Log marginal likelihood of the 1-based training subset of y, with the
/// coefficients, the variance, and the autoregressive coefficient all
/// integrated out. An empty training set gives log value zero (up to the
/// order-inset prior mass the domain inset trims) and a grid carrying the
/// prior.
pub fn log_marginal(
    y: &ArrayView1<f64>,
    train: &[usize],
    prior: &FullPrior,
    z: &Array2<f64>,
) -> Result<MarginalEstimate> {
    let pc = PriorCtx::new(prior, z)?;
    if y.len() != pc.t {
        return Err(Error::invalid(format!(
            "series has {} observations but the design matrix has {} rows",
            y.len(),
            pc.t
        )));
    }
    let train0 = check_indices(pc.t, train, "train", true)?;
    let values: Vec<f64> = train0.iter().map(|&i| y[i]).collect();
    let out = marginal_for_set(&values, &train0, &pc)?;
    Ok(MarginalEstimate {
        log_value: out.log_value,
        laplace_log_value: out.laplace_log_value,
        error_estimate: out.error_estimate,
        grid: out.grid,
    })
}

/// Log predictive density of the given test values at the 1-based test
/// positions, conditional on the training subset of y: the log marginal of
/// the combined set minus the log marginal of the training set. Pointwise
/// mode sums the same quantity over each test point alone.
pub fn log_predictive(
    test_values: &ArrayView1<f64>,
    test: &[usize],
    y: &ArrayView1<f64>,
    train: &[usize],
    prior: &FullPrior,
    z: &Array2<f64>,
    mode: Mode,
) -> Result<f64> {
    let pc = PriorCtx::new(prior, z)?;
    if y.len() != pc.t {
        return Err(Error::invalid(format!(
            "series has {} observations but the design matrix has {} rows",
            y.len(),
            pc.t
        )));
    }
    let test0 = check_indices(pc.t, test, "test", false)?;
    let train0 = check_indices(pc.t, train, "train", true)?;
    if test_values.len() != test0.len() {
        return Err(Error::invalid(format!(
            "{} test values for {} test positions",
            test_values.len(),
            test0.len()
        )));
    }
    let mut in_train = vec![false; pc.t];
    for &i in &train0 {
        in_train[i] = true;
    }
    if test0.iter().any(|&i| in_train[i]) {
        return Err(Error::invalid("test and train positions overlap"));
    }

    let train_values: Vec<f64> = train0.iter().map(|&i| y[i]).collect();
    let lm_train = marginal_for_set(&train_values, &train0, &pc)?.log_value;

    match mode {
        Mode::Joint => {
            let (set, values) = merge_sets(&train0, &train_values, &test0, test_values);
            let lm_full = marginal_for_set(&values, &set, &pc)?.log_value;
            Ok(lm_full - lm_train)
        }
        Mode::Pointwise => {
            let mut total = 0.0;
            for (j, &i) in test0.iter().enumerate() {
                let (set, values) =
                    merge_sets(&train0, &train_values, &[i], &test_values.slice(ndarray::s![j..j + 1]));
                let lm = marginal_for_set(&values, &set, &pc)?.log_value;
                total += lm - lm_train;
            }
            Ok(total)
        }
    }
}

/// Union of two disjoint sorted index sets with their values, sorted by
/// index.
fn merge_sets(
    a_idx: &[usize],
    a_vals: &[f64],
    b_idx: &[usize],
    b_vals: &ArrayView1<f64>,
) -> (Vec<usize>, Vec<f64>) {
    let mut idx = Vec::with_capacity(a_idx.len() + b_idx.len());
    let mut vals = Vec::with_capacity(a_idx.len() + b_idx.len());
    let (mut i, mut j) = (0usize, 0usize);
    while i < a_idx.len() || j < b_idx.len() {
        let take_a = match (a_idx.get(i), b_idx.get(j)) {
            (Some(&ai), Some(&bj)) => ai < bj,
            (Some(_), None) => true,
            _ => false,
        };
        if take_a {
            idx.push(a_idx[i]);
            vals.push(a_vals[i]);
            i += 1;
        } else {
            idx.push(b_idx[j]);
            vals.push(b_vals[j]);
            j += 1;
        }
    }
    (idx, vals)
}

/// Cross-validation statistic: per-fold log predictive densities of the
/// held-out values combined with weights T / (K * fold test size), in the
/// plan's mode.
pub fn cv_statistic(
    y: &ArrayView1<f64>,
    plan: &FoldPlan,
    prior: &FullPrior,
    z: &Array2<f64>,
) -> Result<f64> {
    if plan.t != y.len() {
        return Err(Error::invalid(format!(
            "fold plan is for T = {} but the series has T = {}",
            plan.t,
            y.len()
        )));
    }
    if plan.folds.is_empty() {
        return Err(Error::invalid("fold plan has no folds"));
    }
    let tt = plan.t as f64;
    let k = plan.folds.len() as f64;
    let mut total = 0.0;
    for fold in &plan.folds {
        let w = tt / (k * fold.test.len() as f64);
        let test_values: Array1<f64> = fold.test.iter().map(|&i| y[i - 1]).collect();
        let lp =
            log_predictive(&test_values.view(), &fold.test, y, &fold.train, prior, z, plan.mode)?;
        total += w * lp;
    }
    Ok(total)
}

/// Inverse-CDF table over the grid nodes. Each node's mass is split half
/// left, half right, so the piecewise-linear inverse is second-order
/// accurate for smooth densities.
struct PhiSampler {
    knots: Vec<f64>,
    cum: Vec<f64>,
    total: f64,
}

impl PhiSampler {
    fn new(grid: &PhiGrid) -> Result<Self> {
        let shift =
            grid.log_weights.iter().cloned().filter(|v| v.is_finite()).fold(f64::NEG_INFINITY, f64::max);
        if !shift.is_finite() {
            return Err(Error::numerical("posterior grid carries no mass"));
        }
        let masses: Vec<f64> =
            grid.log_weights.iter().map(|&lw| if lw.is_finite() { (lw - shift).exp() } else { 0.0 }).collect();
        let lo = -1.0 + PHI_DOMAIN_INSET;
        let hi = 1.0 - PHI_DOMAIN_INSET;
        let mut knots = Vec::with_capacity(grid.nodes.len() + 2);
        let mut cum = Vec::with_capacity(grid.nodes.len() + 2);
        knots.push(lo);
        cum.push(0.0);
        let mut run = 0.0;
        for (node, mass) in grid.nodes.iter().zip(&masses) {
            knots.push(*node);
            cum.push(run + 0.5 * mass);
            run += mass;
        }
        knots.push(hi);
        cum.push(run);
        Ok(Self { knots, cum, total: run })
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let target: f64 = rng.gen::<f64>() * self.total;
        let mut lo = 0usize;
        let mut hi = self.cum.len() - 1;
        while hi - lo > 1 {
            let mid = (lo + hi) / 2;
            if self.cum[mid] < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let span = self.cum[hi] - self.cum[lo];
        if span <= 0.0 {
            return self.knots[hi];
        }
        let frac = (target - self.cum[lo]) / span;
        self.knots[lo] + frac * (self.knots[hi] - self.knots[lo])
    }
}

/// Exact posterior draws given the 1-based training subset: the
/// autoregressive coefficient by inverse CDF over its marginal grid, the
/// variance from its conditional inverse-gamma, the coefficients from their
/// conditional Gaussian.
pub fn posterior_draws(
    n: usize,
    y: &ArrayView1<f64>,
    train: &[usize],
    prior: &FullPrior,
    z: &Array2<f64>,
    seed: u64,
) -> Result<PosteriorDraws> {
    if n == 0 {
        return Err(Error::invalid("draw count must be positive"));
    }
    let pc = PriorCtx::new(prior, z)?;
    if y.len() != pc.t {
        return Err(Error::invalid(format!(
            "series has {} observations but the design matrix has {} rows",
            y.len(),
            pc.t
        )));
    }
    let train0 = check_indices(pc.t, train, "train", true)?;
    let values: Vec<f64> = train0.iter().map(|&i| y[i]).collect();
    let out = marginal_for_set(&values, &train0, &pc)?;
    let sampler = PhiSampler::new(&out.grid)?;

    let shape = pc.a0 + 0.5 * train0.len() as f64;
    let gamma = Gamma::new(shape, 1.0)
        .map_err(|e| Error::invalid(format!("invalid variance posterior shape: {e}")))?;

    let mut rng = stream_rng(seed, 0);
    let mut phis = Vec::with_capacity(n);
    let mut sigma2s = Vec::with_capacity(n);
    let mut betas = Array2::<f64>::zeros((n, pc.m));
    for s in 0..n {
        let phi = sampler.draw(&mut rng);
        let stats = set_stats(phi, &values, &train0, &pc)?;
        let b_n = pc.b0 + 0.5 * stats.quad;
        let g: f64 = gamma.sample(&mut rng);
        let sigma2 = b_n / g;
        let sigma = sigma2.sqrt();
        let zeta: Vec<f64> = (0..pc.m).map(|_| rng.sample(StandardNormal)).collect();
        let noise = tri_lower_t_solve_vec(&stats.info_chol.view(), &zeta);
        for c in 0..pc.m {
            betas[[s, c]] = pc.mu0[c] + stats.info_inv_b[c] + sigma * noise[c];
        }
        phis.push(phi);
        sigma2s.push(sigma2);
    }
    Ok(PosteriorDraws { phi: phis, sigma2: sigma2s, beta: betas })
}

/// Variance of coordinate `t_idx` (0-based) of the zero-initialized
/// autoregression, in units of the noise variance: the sum of phi^(2k) for
/// k = 0..=t_idx.
fn coordinate_scale(phi: f64, t_idx: usize) -> f64 {
    let r = phi * phi;
    if (1.0 - r).abs() < 1e-12 {
        (t_idx + 1) as f64
    } else {
        (1.0 - r.powi(t_idx as i32 + 1)) / (1.0 - r)
    }
}

/// Monte Carlo expected log predictive density: for each of the first
/// `s_count` posterior draws, one fresh series from the data-generating
/// process is scored under that draw's parameters, jointly or coordinate by
/// coordinate. Returns the average and its standard error.
pub fn elpd_mc(
    draws: &PosteriorDraws,
    z: &Array2<f64>,
    dgp: &ArxSpec,
    s_count: usize,
    mode: Mode,
    seed: u64,
) -> Result<(f64, f64)> {
    if s_count < 2 {
        return Err(Error::invalid("need at least two replicates for a standard error"));
    }
    if draws.len() < s_count {
        return Err(Error::invalid(format!(
            "requested {s_count} replicates but only {} posterior draws are available",
            draws.len()
        )));
    }
    let t = dgp.t();
    if z.nrows() != t {
        return Err(Error::invalid(format!(
            "design matrix has {} rows but the data-generating process has T = {t}",
            z.nrows()
        )));
    }
    if z.ncols() != draws.beta.ncols() {
        return Err(Error::invalid(format!(
            "design matrix has {} columns but draws have {} coefficients",
            z.ncols(),
            draws.beta.ncols()
        )));
    }
    let paths = crate::arx::simulate(dgp, seed, s_count);
    let mut scores = Vec::with_capacity(s_count);
    for s in 0..s_count {
        let phi = draws.phi[s];
        let sigma2 = draws.sigma2[s];
        let pharr = [phi];
        let mut mean = z.dot(&draws.beta.row(s));
        solve_lower_inplace(&pharr, mean.as_slice_mut().expect("contiguous"));
        let path = paths.row(s);
        let score = match mode {
            Mode::Joint => {
                let mut resid: Vec<f64> = path.iter().zip(mean.iter()).map(|(a, b)| a - b).collect();
                apply_lower_inplace(&pharr, &mut resid);
                let quad: f64 = resid.iter().map(|v| v * v).sum();
                -0.5 * t as f64 * (2.0 * PI * sigma2).ln() - 0.5 * quad / sigma2
            }
            Mode::Pointwise => {
                let mut total = 0.0;
                for i in 0..t {
                    let var = sigma2 * coordinate_scale(phi, i);
                    let d = path[i] - mean[i];
                    total += -0.5 * (2.0 * PI * var).ln() - 0.5 * d * d / var;
                }
                total
            }
        };
        scores.push(score);
    }
    let est = scores.iter().sum::<f64>() / s_count as f64;
    let var = scores.iter().map(|v| (v - est) * (v - est)).sum::<f64>() / (s_count as f64 - 1.0);
    Ok((est, (var / s_count as f64).sqrt()))
}
