//! Cross-validation blocking designs for serially dependent data.
//!
//! A scheme turns a series length T into an ordered list of (test, train)
//! index-set pairs plus an evaluation mode. Supported designs:
//!
//! - LOO: singleton test sets, train on everything else.
//! - h-block: LOO with a halo of h observations deleted around the test
//!   point.
//! - hv-block: test blocks of width 2v+1 tiling 1..T left to right (last
//!   block truncated), halo h on both sides separating test from train.
//! - K-fold: contiguous partition into K blocks, no halo.
//! - LFO(h, v, w): leave-future-out; test blocks of width 2v+1 tile w+1..T
//!   and training uses only observations more than h steps before the block.
//!
//! Indices are 1-based at this interface. Singleton-test schemes (LOO,
//! h-block) are forced to pointwise mode: joint and pointwise scoring agree
//! on singletons, so the distinction would be vacuous.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How a multivariate test block is scored: by its joint predictive log
/// density or by the sum of its univariate marginal log densities.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Joint,
    Pointwise,
}

/// Blocking-design family and its hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum SchemeKind {
    Loo,
    KFold { k: usize },
    HBlock { h: usize },
    HvBlock { h: usize, v: usize },
    Lfo { h: usize, v: usize, w: usize },
}

impl SchemeKind {
    /// Canonical short label, e.g. "loo" or "hv-block(h=3,v=3)".
    pub fn describe(&self) -> String {
        match self {
            SchemeKind::Loo => "loo".into(),
            SchemeKind::KFold { k } => format!("{k}-fold"),
            SchemeKind::HBlock { h } => format!("h-block(h={h})"),
            SchemeKind::HvBlock { h, v } => format!("hv-block(h={h},v={v})"),
            SchemeKind::Lfo { h, v, w } => format!("lfo(h={h},v={v},w={w})"),
        }
    }
}

/// A validated scheme: family plus evaluation mode. Serialized flat, so a
/// config table reads `kind = "hv-block", h = 3, v = 3, mode = "joint"`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SchemeSpec {
    #[serde(flatten)]
    pub kind: SchemeKind,
    pub mode: Mode,
}

impl SchemeSpec {
    /// Checks hyperparameter ranges; singleton-test schemes are forced to
    /// pointwise regardless of the requested mode.
    pub fn new(kind: SchemeKind, mode: Mode) -> Result<Self> {
        match kind {
            SchemeKind::KFold { k } if k < 2 => {
                return Err(Error::invalid(format!("K-fold needs K >= 2, got {k}")));
            }
            SchemeKind::Lfo { w, .. } if w < 1 => {
                return Err(Error::invalid("LFO needs warmup w >= 1"));
            }
            _ => {}
        }
        let mode = match kind {
            SchemeKind::Loo | SchemeKind::HBlock { .. } => Mode::Pointwise,
            _ => mode,
        };
        Ok(SchemeSpec { kind, mode })
    }

    pub fn label(&self) -> String {
        let m = match self.mode {
            Mode::Joint => "joint",
            Mode::Pointwise => "pointwise",
        };
        format!("{} {m}", self.kind.describe())
    }
}

/// One (test, train) pair; both lists are sorted, disjoint, non-empty,
/// 1-based.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Fold {
    pub test: Vec<usize>,
    pub train: Vec<usize>,
}

impl Fold {
    /// Index lists used to form the train and test subvectors.
    pub fn selection_indices(&self) -> (&[usize], &[usize]) {
        (&self.train, &self.test)
    }
}

/// A complete blocking design on a series of length `t`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub t: usize,
    pub folds: Vec<Fold>,
    pub mode: Mode,
}

fn feasible(fold_no: usize, test: Vec<usize>, train: Vec<usize>, kind: &SchemeKind) -> Result<Fold> {
    if test.is_empty() {
        return Err(Error::InfeasibleScheme(format!(
            "{}: fold {fold_no} has an empty test set",
            kind.describe()
        )));
    }
    if train.is_empty() {
        return Err(Error::InfeasibleScheme(format!(
            "{}: fold {fold_no} (test {}..={}) has an empty train set",
            kind.describe(),
            test[0],
            test[test.len() - 1]
        )));
    }
    Ok(Fold { test, train })
}

/// Materialize the fold list of `scheme` on a series of length `t`.
pub fn make_plan(scheme: &SchemeSpec, t: usize) -> Result<FoldPlan> {
    if t == 0 {
        return Err(Error::invalid("series length must be positive"));
    }
    let kind = scheme.kind;
    let mut folds = Vec::new();
    match kind {
        SchemeKind::Loo => {
            for k in 1..=t {
                let train: Vec<usize> = (1..=t).filter(|&i| i != k).collect();
                folds.push(feasible(k, vec![k], train, &kind)?);
            }
        }
        SchemeKind::HBlock { h } => {
            for k in 1..=t {
                let train: Vec<usize> = (1..=t).filter(|&i| i.abs_diff(k) > h).collect();
                folds.push(feasible(k, vec![k], train, &kind)?);
            }
        }
        SchemeKind::HvBlock { h, v } => {
            let width = 2 * v + 1;
            let mut a = 1usize;
            let mut fold_no = 1usize;
            while a <= t {
                let b = (a + width - 1).min(t);
                let test: Vec<usize> = (a..=b).collect();
                let train: Vec<usize> = (1..=t)
                    .filter(|&i| i + h < a || i > b + h)
                    .collect();
                folds.push(feasible(fold_no, test, train, &kind)?);
                a = b + 1;
                fold_no += 1;
            }
        }
        SchemeKind::KFold { k } => {
            if k > t {
                return Err(Error::InfeasibleScheme(format!(
                    "{}: more folds than observations (T = {t})",
                    kind.describe()
                )));
            }
            let base = t / k;
            let extra = t % k;
            let mut start = 1usize;
            for fold_no in 1..=k {
                let size = base + usize::from(fold_no <= extra);
                let test: Vec<usize> = (start..start + size).collect();
                let train: Vec<usize> = (1..=t)
                    .filter(|&i| i < start || i >= start + size)
                    .collect();
                folds.push(feasible(fold_no, test, train, &kind)?);
                start += size;
            }
        }
        SchemeKind::Lfo { h, v, w } => {
            if w + 1 > t {
                return Err(Error::InfeasibleScheme(format!(
                    "{}: warmup consumes the whole series (T = {t})",
                    kind.describe()
                )));
            }
            let width = 2 * v + 1;
            let mut a = w + 1;
            let mut fold_no = 1usize;
            while a <= t {
                let b = (a + width - 1).min(t);
                let test: Vec<usize> = (a..=b).collect();
                // Train strictly precedes the block with an h-step gap.
                let train: Vec<usize> = if a > h + 1 { (1..=a - h - 1).collect() } else { Vec::new() };
                folds.push(feasible(fold_no, test, train, &kind)?);
                a = b + 1;
                fold_no += 1;
            }
        }
    }
    Ok(FoldPlan {
        t,
        folds,
        mode: scheme.mode,
    })
}

/// Check FoldPlan invariants, returning every violation found (empty means
/// the plan is valid). Reporting rather than failing suits diagnostic use.
pub fn validate_plan(plan: &FoldPlan) -> Vec<String> {
    let mut violations = Vec::new();
    if plan.folds.is_empty() {
        violations.push("plan has no folds".to_string());
    }
    for (i, fold) in plan.folds.iter().enumerate() {
        let k = i + 1;
        if fold.test.is_empty() {
            violations.push(format!("empty test set in fold {k}"));
        }
        if fold.train.is_empty() {
            violations.push(format!("empty train set in fold {k}"));
        }
        for (name, list) in [("test", &fold.test), ("train", &fold.train)] {
            if !list.windows(2).all(|w| w[0] < w[1]) {
                violations.push(format!("{name} indices not sorted/unique in fold {k}"));
            }
            if list.iter().any(|&i| i < 1 || i > plan.t) {
                violations.push(format!("{name} index out of [1, {}] in fold {k}", plan.t));
            }
        }
        let overlap: Vec<usize> = fold
            .test
            .iter()
            .filter(|i| fold.train.binary_search(i).is_ok())
            .copied()
            .collect();
        if !overlap.is_empty() {
            violations.push(format!(
                "overlap {:?} between test and train in fold {k}",
                overlap
            ));
        }
    }
    violations
}
