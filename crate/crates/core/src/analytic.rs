//! Posterior and predictive algebra for ARX models with fixed AR
//! coefficients and innovation variance, and a Gaussian prior on the
//! regression coefficients.
//!
//! With phi and sigma2 held fixed every quantity of interest is an exact
//! Gaussian integral: the posterior of beta given any training subset is
//! Gaussian, the predictive law of a replicate series is Gaussian with mean
//! affine in the observations, and consequently each score treated here
//! (joint or pointwise expected log predictive density, and every
//! cross-validation estimator of either) is an exact second-degree
//! polynomial y'Ay + y'b + c in the observed series. This module computes
//! those coefficients.
//!
//! Training subsets enter only through the inverse of the training block of
//! the unit-scale covariance W = (L'L)^{-1}. Instead of inverting dense W
//! blocks, everything runs off the banded precision P = L'L via the Schur
//! identity (S W S')^{-1} = P_rr - P_rc P_cc^{-1} P_cr, with r the training
//! rows and c their complement, so a fold costs a Cholesky of the small
//! complement block rather than a dense T x T inverse.

use ndarray::prelude::*;
use rayon::prelude::*;

use crate::arx::{joint_law, ArxSpec};
use crate::error::{Error, Result};
use crate::linalg;
use crate::schemes::{FoldPlan, Mode};

/// An ARX model whose AR coefficients and innovation variance are fixed and
/// whose regression coefficients carry a Gaussian prior scaled by sigma2:
/// beta | sigma2 ~ N(prior_mean, sigma2 * prior_cov).
///
/// The embedded `arx.beta` plays no role here; only phi, sigma2, and Z are
/// read from the spec.
#[derive(Debug, Clone)]
pub struct SarxModel {
    pub arx: ArxSpec,
    pub prior_mean: Array1<f64>,
    pub prior_cov: Array2<f64>,
}

impl SarxModel {
    pub fn new(arx: ArxSpec, prior_mean: Array1<f64>, prior_cov: Array2<f64>) -> Result<Self> {
        let m = arx.z.ncols();
        if prior_mean.len() != m {
            return Err(Error::invalid(format!(
                "prior mean has {} entries but Z has {m} columns",
                prior_mean.len()
            )));
        }
        if prior_cov.nrows() != m || prior_cov.ncols() != m {
            return Err(Error::invalid(format!(
                "prior covariance is {}x{} but Z has {m} columns",
                prior_cov.nrows(),
                prior_cov.ncols()
            )));
        }
        let scale = prior_cov.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        for i in 0..m {
            for j in 0..i {
                if (prior_cov[[i, j]] - prior_cov[[j, i]]).abs() > 1e-12 * (1.0 + scale) {
                    return Err(Error::invalid("prior covariance is not symmetric"));
                }
            }
        }
        linalg::cholesky_lower(&prior_cov.view(), "prior covariance")?;
        Ok(SarxModel { arx, prior_mean, prior_cov })
    }

    pub fn t(&self) -> usize {
        self.arx.t()
    }

    /// Number of regression coefficients (columns of Z, intercept included).
    pub fn ncoef(&self) -> usize {
        self.arx.z.ncols()
    }

    pub fn sigma2(&self) -> f64 {
        self.arx.sigma2
    }

    pub fn phi(&self) -> &[f64] {
        &self.arx.phi
    }
}

/// An affine map y -> matrix . y + offset.
#[derive(Debug, Clone)]
pub struct AffineMap {
    pub matrix: Array2<f64>,
    pub offset: Array1<f64>,
}

impl AffineMap {
    pub fn apply(&self, y: &ArrayView1<f64>) -> Array1<f64> {
        assert_eq!(y.len(), self.matrix.ncols(), "length mismatch in AffineMap::apply");
        self.matrix.dot(y) + &self.offset
    }
}

/// Parameters of the replicate predictive law: given observations y the
/// predictive for a fresh series is N(d y + e, sigma2 * v).
#[derive(Debug, Clone)]
pub struct PredictiveParams {
    pub d: Array2<f64>,
    pub e: Array1<f64>,
    pub v: Array2<f64>,
    pub sigma2: f64,
}

impl PredictiveParams {
    pub fn mean(&self, y: &ArrayView1<f64>) -> Array1<f64> {
        self.d.dot(y) + &self.e
    }
}

/// A second-degree polynomial y'Ay + y'b + c with A kept exactly symmetric.
#[derive(Debug, Clone)]
pub struct QuadForm {
    pub a: Array2<f64>,
    pub b: Array1<f64>,
    pub c: f64,
}

impl QuadForm {
    /// Builds the form, forcing A to exact symmetry via (A + A')/2.
    pub fn new(mut a: Array2<f64>, b: Array1<f64>, c: f64) -> Result<Self> {
        if a.nrows() != a.ncols() {
            return Err(Error::invalid("quadratic coefficient matrix must be square"));
        }
        if a.nrows() != b.len() {
            return Err(Error::invalid(format!(
                "quadratic form dimension mismatch: A is {}x{}, b has {}",
                a.nrows(),
                a.ncols(),
                b.len()
            )));
        }
        linalg::symmetrize(&mut a);
        Ok(QuadForm { a, b, c })
    }

    pub fn t(&self) -> usize {
        self.a.nrows()
    }

    /// y'Ay + y'b + c.
    pub fn eval(&self, y: &ArrayView1<f64>) -> f64 {
        assert_eq!(y.len(), self.t(), "length mismatch in QuadForm::eval");
        y.dot(&self.a.dot(y)) + self.b.dot(y) + self.c
    }

    /// Componentwise self - other; the difference of two scores is again a
    /// second-degree polynomial.
    pub fn diff(&self, other: &QuadForm) -> Result<QuadForm> {
        if self.t() != other.t() {
            return Err(Error::invalid(format!(
                "cannot subtract quadratic forms of sizes {} and {}",
                self.t(),
                other.t()
            )));
        }
        QuadForm::new(&self.a - &other.a, &self.b - &other.b, self.c - other.c)
    }
}

/// Per-model precomputation shared by every training subset: X = L^{-1}Z,
/// L'Z, Z'Z, the prior precision, and the dense rows of L^{-1} (from which
/// any block of W is an inner product of rows).
struct ModelContext<'a> {
    model: &'a SarxModel,
    t: usize,
    m: usize,
    x: Array2<f64>,
    ltz: Array2<f64>,
    ztz: Array2<f64>,
    linv: Array2<f64>,
    prior_prec: Array2<f64>,
    prior_prec_mean: Array1<f64>,
}

/// Gaussian posterior of beta for one training subset, in precision-free
/// form: beta | y, sigma2 ~ N(sigma_beta (n y + prior_prec_mean), sigma2 *
/// sigma_beta). Columns of n outside the training set are zero.
struct FoldPosterior {
    sigma_beta: Array2<f64>,
    n: Array2<f64>,
}

impl<'a> ModelContext<'a> {
    fn new(model: &'a SarxModel) -> Result<Self> {
        let t = model.t();
        let m = model.ncoef();
        let phi = model.phi();
        let z = &model.arx.z;

        let mut x = z.clone();
        linalg::solve_lower_mat(phi, &mut x);

        let mut ltz = Array2::<f64>::zeros((t, m));
        for j in 0..m {
            let mut col: Vec<f64> = z.column(j).to_vec();
            linalg::apply_upper_t_inplace(phi, &mut col);
            for (i, v) in col.into_iter().enumerate() {
                ltz[[i, j]] = v;
            }
        }

        let ztz = z.t().dot(z);
        let linv = linalg::unit_lower_inverse(phi, t);
        let prior_prec = linalg::spd_inverse(&model.prior_cov.view(), "prior covariance")?;
        let prior_prec_mean = prior_prec.dot(&model.prior_mean);

        Ok(ModelContext { model, t, m, x, ltz, ztz, linv, prior_prec, prior_prec_mean })
    }

    /// Posterior of beta given the training rows, via the Schur identity on
    /// the banded precision. An empty complement (training on everything)
    /// collapses to Z'Z + prior precision with no extra work.
    fn fold_posterior(&self, train: &[usize]) -> Result<FoldPosterior> {
        let (t, m) = (self.t, self.m);
        let phi = self.model.phi();
        let p = phi.len();

        let mut in_train = vec![false; t];
        for &i in train {
            in_train[i] = true;
        }
        let comp: Vec<usize> = (0..t).filter(|&i| !in_train[i]).collect();

        let mut info; // posterior precision before the prior is added
        let mut n = Array2::<f64>::zeros((m, t));
        for &j in train {
            for col in 0..m {
                n[[col, j]] = self.ltz[[j, col]];
            }
        }

        if comp.is_empty() {
            info = self.ztz.clone();
        } else {
            let vc = comp.len();
            let mut pcc = Array2::<f64>::zeros((vc, vc));
            for (a, &ia) in comp.iter().enumerate() {
                for (b, &ib) in comp.iter().enumerate() {
                    if ia.abs_diff(ib) <= p {
                        pcc[[a, b]] = linalg::precision_entry(phi, t, ia, ib);
                    }
                }
            }
            let xc = self.x.select(Axis(0), &comp);
            let ltzc = self.ltz.select(Axis(0), &comp);
            // u = rows c of L'Z - P_cc X_c equals P_cr X_r without touching r.
            let u = &ltzc - &pcc.dot(&xc);
            let cp = linalg::cholesky_lower(&pcc.view(), "train-complement precision block")?;
            let y = linalg::tri_lower_t_solve_mat(
                &cp.view(),
                &linalg::tri_lower_solve_mat(&cp.view(), &u.view()).view(),
            );
            let g = &xc + &y;
            info = &self.ztz - &xc.t().dot(&ltzc) - &u.t().dot(&xc) - &u.t().dot(&y);
            // Subtract G' P_cr from the training columns of L'Z, walking only
            // the bandwidth-p entries of P_cr.
            for (a, &ia) in comp.iter().enumerate() {
                let lo = ia.saturating_sub(p);
                let hi = (ia + p).min(t - 1);
                for j in lo..=hi {
                    if in_train[j] {
                        let pij = linalg::precision_entry(phi, t, ia, j);
                        if pij != 0.0 {
                            for col in 0..m {
                                n[[col, j]] -= g[[a, col]] * pij;
                            }
                        }
                    }
                }
            }
        }

        linalg::symmetrize(&mut info);
        info += &self.prior_prec;
        let sigma_beta = linalg::spd_inverse(&info.view(), "posterior precision")?;
        Ok(FoldPosterior { sigma_beta, n })
    }
}

/// Converts a 1-based strictly increasing selection to 0-based indices.
fn check_selection(t: usize, idx: &[usize], what: &str) -> Result<Vec<usize>> {
    if idx.is_empty() {
        return Err(Error::invalid(format!("{what} selection is empty")));
    }
    let mut prev = 0usize;
    let mut out = Vec::with_capacity(idx.len());
    for &i in idx {
        if i < 1 || i > t {
            return Err(Error::invalid(format!(
                "{what} index {i} outside 1..={t}"
            )));
        }
        if i <= prev {
            return Err(Error::invalid(format!(
                "{what} indices must be strictly increasing"
            )));
        }
        prev = i;
        out.push(i - 1);
    }
    Ok(out)
}

/// Posterior of the regression coefficients given the 1-based training rows:
/// returns (sigma_beta, map) with beta | y, sigma2 ~ N(map(y), sigma2 *
/// sigma_beta).
pub fn posterior_params(model: &SarxModel, train: &[usize]) -> Result<(Array2<f64>, AffineMap)> {
    let train0 = check_selection(model.t(), train, "train")?;
    let ctx = ModelContext::new(model)?;
    let fp = ctx.fold_posterior(&train0)?;
    let matrix = fp.sigma_beta.dot(&fp.n);
    let offset = fp.sigma_beta.dot(&ctx.prior_prec_mean);
    Ok((fp.sigma_beta, AffineMap { matrix, offset }))
}

/// Replicate predictive law given the 1-based training rows: a fresh series
/// drawn from the fitted model is N(D y + e, sigma2 V) with V = W + X
/// Sigma_beta X'.
pub fn predictive_params(model: &SarxModel, train: &[usize]) -> Result<PredictiveParams> {
    let train0 = check_selection(model.t(), train, "train")?;
    let ctx = ModelContext::new(model)?;
    let fp = ctx.fold_posterior(&train0)?;
    let xs_b = ctx.x.dot(&fp.sigma_beta);
    let d = xs_b.dot(&fp.n);
    let e = xs_b.dot(&ctx.prior_prec_mean);
    let v = ctx.linv.dot(&ctx.linv.t()) + xs_b.dot(&ctx.x.t());
    Ok(PredictiveParams { d, e, v, sigma2: model.sigma2() })
}

/// Shared assembly for the theoretical scores. `diagonal` selects the
/// pointwise variant, which replaces the predictive covariance by its
/// diagonal before the test-set restriction.
fn theoretical_quadform(
    model: &SarxModel,
    dgp: &ArxSpec,
    test: &[usize],
    train: &[usize],
    diagonal: bool,
) -> Result<QuadForm> {
    let t = model.t();
    if dgp.t() != t {
        return Err(Error::invalid(format!(
            "DGP has {} observations but the model has {t}",
            dgp.t()
        )));
    }
    let test0 = check_selection(t, test, "test")?;
    let train0 = check_selection(t, train, "train")?;
    let ctx = ModelContext::new(model)?;
    let fp = ctx.fold_posterior(&train0)?;
    let sigma2 = model.sigma2();
    let v = test0.len();

    let sn = fp.sigma_beta.dot(&fp.n);
    let xs = ctx.x.select(Axis(0), &test0);
    let sd = xs.dot(&sn);
    let e_s = xs.dot(&fp.sigma_beta.dot(&ctx.prior_prec_mean));

    let law = joint_law(dgp);
    let m_star_s = Array1::from_iter(test0.iter().map(|&i| law.mean[i]));
    let diff_s = &e_s - &m_star_s;

    let hs = ctx.linv.select(Axis(0), &test0);
    let cov = hs.dot(&hs.t()) + xs.dot(&fp.sigma_beta).dot(&xs.t());
    let linv_star = linalg::unit_lower_inverse(&dgp.phi, t);
    let hstar_s = linv_star.select(Axis(0), &test0);

    let (k1, u, logdet, tr_term) = if diagonal {
        let mut k1 = sd;
        let mut u = diff_s.to_vec();
        let mut logdet = 0.0;
        let mut tr = 0.0;
        for a in 0..v {
            let dcov = cov[[a, a]];
            if !(dcov > 0.0) {
                return Err(Error::numerical(format!(
                    "predictive variance {dcov:.3e} at test coordinate {} is not positive",
                    test0[a] + 1
                )));
            }
            let s = dcov.sqrt().recip();
            k1.row_mut(a).mapv_inplace(|x| x * s);
            u[a] *= s;
            logdet += dcov.ln();
            tr += hstar_s.row(a).dot(&hstar_s.row(a)) / dcov;
        }
        (k1, u, logdet, tr)
    } else {
        let c = linalg::cholesky_lower(&cov.view(), "test-block predictive covariance")?;
        let k1 = linalg::tri_lower_solve_mat(&c.view(), &sd.view());
        let u = linalg::tri_lower_solve_vec(&c.view(), &diff_s.to_vec());
        let logdet = linalg::logdet_from_chol(&c.view());
        let f = linalg::tri_lower_solve_mat(&c.view(), &hstar_s.view());
        let tr = f.iter().map(|x| x * x).sum::<f64>();
        (k1, u, logdet, tr)
    };

    let mut a = k1.t().dot(&k1);
    a.mapv_inplace(|x| -x / (2.0 * sigma2));
    let uv = Array1::from(u);
    let mut b = k1.t().dot(&uv);
    b.mapv_inplace(|x| -x / sigma2);
    let c = -0.5 * (v as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet)
        - dgp.sigma2 / (2.0 * sigma2) * tr_term
        - uv.dot(&uv) / (2.0 * sigma2);
    QuadForm::new(a, b, c)
}

/// Joint expected log predictive density of a replicate series on the
/// 1-based `test` rows, expecting over the data-generating law, with the
/// posterior fit on `train`: an exact quadratic polynomial in y.
pub fn eljpd_quadform(
    model: &SarxModel,
    dgp: &ArxSpec,
    test: &[usize],
    train: &[usize],
) -> Result<QuadForm> {
    theoretical_quadform(model, dgp, test, train, false)
}

/// Pointwise variant: sum of univariate expected log predictive densities,
/// i.e. the joint score with the predictive covariance diagonalized.
pub fn elppd_quadform(
    model: &SarxModel,
    dgp: &ArxSpec,
    test: &[usize],
    train: &[usize],
) -> Result<QuadForm> {
    theoretical_quadform(model, dgp, test, train, true)
}

/// One fold's contribution to the stacked residual operator: `rows` holds
/// sqrt(w) C^{-1} S(I - D), `tau` holds sqrt(w) C^{-1} S e, and `cpart` the
/// fold's constant.
struct FoldBlock {
    rows: Array2<f64>,
    tau: Vec<f64>,
    cpart: f64,
}

fn cv_fold_block(
    ctx: &ModelContext,
    fold_no: usize,
    train0: &[usize],
    test0: &[usize],
    mode: Mode,
    weight: f64,
) -> Result<FoldBlock> {
    let sigma2 = ctx.model.sigma2();
    let v = test0.len();
    let fp = ctx
        .fold_posterior(train0)
        .map_err(|e| Error::numerical(format!("fold {fold_no}: {e}")))?;

    let sn = fp.sigma_beta.dot(&fp.n);
    let xs = ctx.x.select(Axis(0), test0);
    // S (I - D): minus the projected posterior-mean operator, plus the
    // identity rows of the test block.
    let mut brow = xs.dot(&sn);
    brow.mapv_inplace(|x| -x);
    for (a, &i) in test0.iter().enumerate() {
        brow[[a, i]] += 1.0;
    }
    let es = xs.dot(&fp.sigma_beta.dot(&ctx.prior_prec_mean));
    let hs = ctx.linv.select(Axis(0), test0);
    let cov = hs.dot(&hs.t()) + xs.dot(&fp.sigma_beta).dot(&xs.t());

    let (mut rows, mut tau, logdet) = match mode {
        Mode::Joint => {
            let c = linalg::cholesky_lower(&cov.view(), "test-block predictive covariance")
                .map_err(|e| Error::numerical(format!("fold {fold_no}: {e}")))?;
            let rows = linalg::tri_lower_solve_mat(&c.view(), &brow.view());
            let tau = linalg::tri_lower_solve_vec(&c.view(), &es.to_vec());
            (rows, tau, linalg::logdet_from_chol(&c.view()))
        }
        Mode::Pointwise => {
            let mut rows = brow;
            let mut tau = es.to_vec();
            let mut logdet = 0.0;
            for a in 0..v {
                let dcov = cov[[a, a]];
                if !(dcov > 0.0) {
                    return Err(Error::numerical(format!(
                        "fold {fold_no}: predictive variance {dcov:.3e} not positive"
                    )));
                }
                let s = dcov.sqrt().recip();
                rows.row_mut(a).mapv_inplace(|x| x * s);
                tau[a] *= s;
                logdet += dcov.ln();
            }
            (rows, tau, logdet)
        }
    };

    let t2: f64 = tau.iter().map(|x| x * x).sum();
    let cpart = -0.5
        * weight
        * (v as f64 * (2.0 * std::f64::consts::PI * sigma2).ln() + logdet + t2 / sigma2);
    let sw = weight.sqrt();
    rows.mapv_inplace(|x| x * sw);
    for x in &mut tau {
        *x *= sw;
    }
    Ok(FoldBlock { rows, tau, cpart })
}

/// Exact quadratic-polynomial coefficients of the cross-validation
/// estimator defined by `plan`: the sum-scale weighted sum over folds of
/// the (joint or pointwise) log predictive density of each test block under
/// the posterior fit on that fold's training rows.
pub fn cv_quadform(model: &SarxModel, plan: &FoldPlan) -> Result<QuadForm> {
    let t = model.t();
    if plan.t != t {
        return Err(Error::invalid(format!(
            "fold plan is for T = {} but the model has T = {t}",
            plan.t
        )));
    }
    if plan.folds.is_empty() {
        return Err(Error::invalid("fold plan has no folds"));
    }
    let ctx = ModelContext::new(model)?;
    let kf = plan.folds.len() as f64;

    let mut prepared = Vec::with_capacity(plan.folds.len());
    for (k, fold) in plan.folds.iter().enumerate() {
        let train0 = check_selection(t, &fold.train, "train")?;
        let test0 = check_selection(t, &fold.test, "test")?;
        let weight = t as f64 / (kf * test0.len() as f64);
        prepared.push((k + 1, train0, test0, weight));
    }

    // Folds are independent; the stacked assembly below happens in fold
    // order no matter how the map was scheduled, so results do not depend
    // on the thread count.
    let blocks: Vec<FoldBlock> = prepared
        .par_iter()
        .map(|(no, train0, test0, w)| cv_fold_block(&ctx, *no, train0, test0, plan.mode, *w))
        .collect::<Result<Vec<_>>>()?;

    let n_rows: usize = blocks.iter().map(|b| b.rows.nrows()).sum();
    let mut r = Array2::<f64>::zeros((n_rows, t));
    let mut tau = Array1::<f64>::zeros(n_rows);
    let mut c = 0.0;
    let mut at = 0usize;
    for block in &blocks {
        let v = block.rows.nrows();
        r.slice_mut(s![at..at + v, ..]).assign(&block.rows);
        for (a, &x) in block.tau.iter().enumerate() {
            tau[at + a] = x;
        }
        c += block.cpart;
        at += v;
    }

    let sigma2 = model.sigma2();
    let mut a = r.t().dot(&r);
    a.mapv_inplace(|x| -x / (2.0 * sigma2));
    let mut b = r.t().dot(&tau);
    b.mapv_inplace(|x| x / sigma2);
    QuadForm::new(a, b, c)
}
