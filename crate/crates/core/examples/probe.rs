//! Throwaway diagnostic: theoretical joint vs pointwise selection criteria
//! across the dependence grid at the fitted oracle plug-ins.

use arxcv::analytic::SarxModel;
use arxcv::arx::{joint_law, ArxSpec};
use arxcv::experiments::{design_matrix, ExperimentSpec, Variant};
use arxcv::gchisq;
use arxcv::oracle::fit_oracle;
use arxcv::schemes::{Mode, SchemeKind, SchemeSpec};
use arxcv::selection::{selection_quadform, ComparisonSetup, Statistic, DEFAULT_GAMMA};
use ndarray::prelude::*;

fn fitted_cand(q: usize, beta: &[f64], z: &Array2<f64>, dgp: &ArxSpec) -> SarxModel {
    let zc = z.slice(s![.., ..q]).to_owned();
    let mean: Array1<f64> = beta[..q].iter().copied().collect();
    let template = SarxModel::new(
        ArxSpec::new(vec![0.0], vec![0.0; q], 1.0, zc.clone()).unwrap(),
        mean.clone(),
        Array2::eye(q),
    )
    .unwrap();
    let fit = fit_oracle(&template, dgp).unwrap();
    SarxModel::new(
        ArxSpec::new(vec![fit.phi_hat[0]], vec![0.0; q], fit.sigma2_hat, zc).unwrap(),
        mean,
        Array2::eye(q),
    )
    .unwrap()
}

fn main() {
    let t = 100usize;
    let z = design_matrix(1, t, 3);
    for variant in [Variant::Hard, Variant::Easy] {
        let spec = ExperimentSpec::preset(1, variant).unwrap();
        let beta = spec.variant.beta_star();
        for &alpha in &[0.0, 0.5, 0.75, 0.9, 0.95, 1.0] {
            let dgp = spec.dgp(alpha, &z).unwrap();
            let law = joint_law(&dgp);
            let ma = fitted_cand(2, &beta, &z, &dgp);
            let mb = fitted_cand(1, &beta, &z, &dgp);
            let mut line = format!("{variant:?} a={alpha:<4}");
            for mode in [Mode::Joint, Mode::Pointwise] {
                let sch = SchemeSpec { kind: SchemeKind::Loo, mode };
                let setup =
                    ComparisonSetup::new(dgp.clone(), ma.clone(), mb.clone(), sch, DEFAULT_GAMMA)
                        .unwrap();
                let omega = selection_quadform(&setup, Statistic::Theoretical).unwrap();
                let dist = gchisq::params_from_quadform(&omega, &law).unwrap();
                line.push_str(&format!(
                    "  {mode:?}: adv={:6.2}% mean={:8.3} sd={:6.3}",
                    100.0 * dist.cdf(0.0).unwrap(),
                    dist.mean(),
                    dist.variance().sqrt()
                ));
            }
            println!("{line}");
        }
    }
}
