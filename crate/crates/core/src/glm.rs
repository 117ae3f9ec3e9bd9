//! Logistic and least-squares regression by iteratively reweighted least
//! squares, forward-stepwise AIC selection, and ROC AUC with cross-validation.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Subject};
use crate::error::{Error, Result};
use crate::stats::{ksum, sigmoid};

const MAX_ITER: usize = 100;
const REL_TOL: f64 = 1e-8;
const SEPARATION_BOUND: f64 = 15.0;
const SEPARATION_RIDGE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    /// Logistic regression for a 0/1 response.
    #[default]
    Binomial,
    /// Ordinary least squares, for continuous outcomes.
    Gaussian,
}

/// A response vector and named feature columns.
#[derive(Debug, Clone, PartialEq)]
pub struct Rows {
    pub names: Vec<String>,
    /// One inner vector per feature.
    pub columns: Vec<Vec<f64>>,
    pub y: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Response {
    Treatment,
    Outcome,
}

impl Rows {
    pub fn new(names: Vec<String>, columns: Vec<Vec<f64>>, y: Vec<f64>) -> Result<Self> {
        if names.len() != columns.len() {
            return Err(Error::Validation("feature names and columns differ in number".into()));
        }
        if let Some(c) = columns.iter().position(|c| c.len() != y.len()) {
            return Err(Error::Validation(format!(
                "feature {:?} has the wrong length",
                names[c]
            )));
        }
        if let Some(c) = columns.iter().position(|c| c.iter().any(|v| !v.is_finite())) {
            return Err(Error::Validation(format!(
                "feature {:?} has a non-finite value",
                names[c]
            )));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::Validation("response has a non-finite value".into()));
        }
        Ok(Self { names, columns, y })
    }

    /// Covariate columns of the subjects passing `keep`, with treatment or
    /// outcome as the response.
    pub fn from_dataset(data: &Dataset, response: Response, keep: impl Fn(&Subject) -> bool) -> Result<Self> {
        let subjects: Vec<&Subject> = data.subjects().iter().filter(|s| keep(s)).collect();
        let columns = (0..data.covariate_names().len())
            .map(|j| subjects.iter().map(|s| s.covariates[j]).collect())
            .collect();
        let y = subjects
            .iter()
            .map(|s| match response {
                Response::Treatment => f64::from(u8::from(s.treated)),
                Response::Outcome => s.outcome,
            })
            .collect();
        Self::new(data.covariate_names().to_vec(), columns, y)
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    fn index(&self, name: &str) -> Result<usize> {
        self.names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::Validation(format!("unknown feature {name:?}")))
    }

    fn subset(&self, rows: &[usize]) -> Rows {
        Rows {
            names: self.names.clone(),
            columns: self
                .columns
                .iter()
                .map(|c| rows.iter().map(|&i| c[i]).collect())
                .collect(),
            y: rows.iter().map(|&i| self.y[i]).collect(),
        }
    }

    /// True if every response is 0 or 1.
    pub fn is_binary(&self) -> bool {
        self.y.iter().all(|&v| v == 0.0 || v == 1.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitMeta {
    pub family: Family,
    pub iterations: usize,
    pub deviance: f64,
    pub aic: f64,
    pub converged: bool,
    pub separation: bool,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogisticModel {
    pub intercept: f64,
    pub coefficients: BTreeMap<String, f64>,
    pub intercept_se: f64,
    pub standard_errors: BTreeMap<String, f64>,
    /// Features in the order they entered the model.
    pub selected_order: Vec<String>,
    pub meta: FitMeta,
}

impl LogisticModel {
    /// Linear predictor for one feature vector aligned with `selected_order`.
    fn eta(&self, x: &[f64]) -> f64 {
        self.intercept
            + self
                .selected_order
                .iter()
                .zip(x)
                .map(|(n, v)| self.coefficients[n] * v)
                .sum::<f64>()
    }

    /// Predicted mean response: a probability for the binomial family, the
    /// linear predictor for the Gaussian one.
    pub fn predict_one(&self, x: &[f64]) -> f64 {
        let eta = self.eta(x);
        match self.meta.family {
            Family::Binomial => sigmoid(eta),
            Family::Gaussian => eta,
        }
    }

    pub fn predict(&self, rows: &Rows) -> Result<Vec<f64>> {
        let idx = self
            .selected_order
            .iter()
            .map(|n| rows.index(n))
            .collect::<Result<Vec<_>>>()?;
        let mut x = vec![0.0; idx.len()];
        Ok((0..rows.len())
            .map(|i| {
                for (slot, &j) in x.iter_mut().zip(&idx) {
                    *slot = rows.columns[j][i];
                }
                self.predict_one(&x)
            })
            .collect())
    }

    /// In-sample ROC AUC.
    pub fn auc(&self, rows: &Rows) -> Result<f64> {
        auc(&self.predict(rows)?, &rows.y)
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn binomial_deviance(eta: &[f64], y: &[f64]) -> f64 {
    // -2 log-likelihood: y log(1 + e^-eta) + (1 - y) log(1 + e^eta).
    2.0 * ksum(
        eta.iter()
            .zip(y)
            .map(|(&e, &y)| y * softplus(-e) + (1.0 - y) * softplus(e)),
    )
}

struct Fit {
    beta: DVector<f64>,
    cov: DMatrix<f64>,
    deviance: f64,
    iterations: usize,
    converged: bool,
}

fn design(rows: &Rows, features: &[usize]) -> DMatrix<f64> {
    let n = rows.len();
    DMatrix::from_fn(n, features.len() + 1, |i, j| {
        if j == 0 {
            1.0
        } else {
            rows.columns[features[j - 1]][i]
        }
    })
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok((ch.solve(b), ch.inverse()));
    }
    let lu = a.clone().lu();
    let inv = lu
        .try_inverse()
        .ok_or_else(|| Error::Fit("normal equations are singular".into()))?;
    Ok((&inv * b, inv))
}

fn irls(x: &DMatrix<f64>, y: &[f64], ridge: f64) -> Result<Fit> {
    let (n, p) = x.shape();
    let ybar = ksum(y.iter().copied()) / n as f64;
    let mut beta = DVector::zeros(p);
    beta[0] = (ybar / (1.0 - ybar)).ln();
    let mut eta: Vec<f64> = (x * &beta).iter().copied().collect();
    let mut dev = binomial_deviance(&eta, y);
    let penalty = DMatrix::from_fn(p, p, |i, j| if i == j && i > 0 { ridge } else { 0.0 });
    let mut converged = false;
    let mut iterations = 0;
    let mut cov = DMatrix::identity(p, p);

    for it in 1..=MAX_ITER {
        iterations = it;
        let mut xtwx = penalty.clone();
        let mut xtwz = DVector::zeros(p);
        for i in 0..n {
            let mu = sigmoid(eta[i]);
            let w = (mu * (1.0 - mu)).max(1e-12);
            let z = eta[i] + (y[i] - mu) / w;
            let row = x.row(i);
            for a in 0..p {
                let wa = w * row[a];
                xtwz[a] += wa * z;
                for b in a..p {
                    xtwx[(a, b)] += wa * row[b];
                }
            }
        }
        for a in 0..p {
            for b in 0..a {
                xtwx[(a, b)] = xtwx[(b, a)];
            }
        }
        let (target, inv) = solve_spd(&xtwx, &xtwz)?;
        cov = inv;

        // Step-halving guards against deviance increases far from the optimum.
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..30 {
            let cand = &beta + (&target - &beta) * step;
            let cand_eta: Vec<f64> = (x * &cand).iter().copied().collect();
            let cand_dev = binomial_deviance(&cand_eta, y) + ridge * cand.iter().skip(1).map(|b| b * b).sum::<f64>();
            if cand_dev.is_finite() && cand_dev <= dev + 1e-12 * dev.abs().max(1.0) {
                accepted = Some((cand, cand_eta, cand_dev));
                break;
            }
            step /= 2.0;
        }
        let Some((b, e, d)) = accepted else {
            converged = true;
            break;
        };
        let change = (dev - d).abs() / (d.abs() + 0.1);
        beta = b;
        eta = e;
        dev = d;
        if change < REL_TOL {
            converged = true;
            break;
        }
    }
    if beta.iter().any(|b| !b.is_finite()) {
        return Err(Error::Fit("coefficients diverged".into()));
    }
    Ok(Fit {
        deviance: binomial_deviance(&eta, y),
        beta,
        cov,
        iterations,
        converged,
    })
}

fn least_squares(x: &DMatrix<f64>, y: &[f64]) -> Result<Fit> {
    let (n, p) = x.shape();
    let yv = DVector::from_column_slice(y);
    let xtx = x.transpose() * x;
    let xty = x.transpose() * &yv;
    let (beta, inv) = solve_spd(&xtx, &xty)?;
    let resid = &yv - x * &beta;
    let rss = resid.norm_squared();
    let sigma2 = if n > p { rss / (n - p) as f64 } else { 0.0 };
    Ok(Fit {
        beta,
        cov: inv * sigma2,
        deviance: rss,
        iterations: 1,
        converged: true,
    })
}

fn fit_indices(rows: &Rows, features: &[usize], family: Family) -> Result<LogisticModel> {
    let n = rows.len();
    if n == 0 {
        return Err(Error::Validation("cannot fit a model to no rows".into()));
    }
    let x = design(rows, features);
    let p = features.len() + 1;
    let (fit, separation, aic) = match family {
        Family::Binomial => {
            let pos = rows.y.iter().filter(|&&v| v == 1.0).count();
            if !rows.is_binary() {
                return Err(Error::Validation("logistic response must be 0 or 1".into()));
            }
            if pos == 0 || pos == n {
                return Err(Error::Validation(
                    "logistic fit needs both positive and negative labels".into(),
                ));
            }
            let mut fit = irls(&x, &rows.y, 0.0)?;
            let separated = fit.beta.iter().skip(1).any(|b| b.abs() > SEPARATION_BOUND);
            if separated {
                fit = irls(&x, &rows.y, SEPARATION_RIDGE)?;
            }
            let aic = fit.deviance + 2.0 * p as f64;
            (fit, separated, aic)
        }
        Family::Gaussian => {
            let fit = least_squares(&x, &rows.y)?;
            let nf = n as f64;
            let rss = fit.deviance.max(f64::MIN_POSITIVE);
            let aic = nf * (2.0 * std::f64::consts::PI * rss / nf).ln() + nf + 2.0 * (p + 1) as f64;
            (fit, false, aic)
        }
    };
    let names: Vec<String> = features.iter().map(|&j| rows.names[j].clone()).collect();
    let se = |j: usize| fit.cov[(j, j)].max(0.0).sqrt();
    Ok(LogisticModel {
        intercept: fit.beta[0],
        coefficients: names
            .iter()
            .enumerate()
            .map(|(j, n)| (n.clone(), fit.beta[j + 1]))
            .collect(),
        intercept_se: se(0),
        standard_errors: names.iter().enumerate().map(|(j, n)| (n.clone(), se(j + 1))).collect(),
        selected_order: names,
        meta: FitMeta {
            family,
            iterations: fit.iterations,
            deviance: fit.deviance,
            aic,
            converged: fit.converged,
            separation,
            n,
        },
    })
}

/// Logistic regression of `rows.y` on the named features.
pub fn fit_logistic(rows: &Rows, features: &[String]) -> Result<LogisticModel> {
    fit_model(rows, features, Family::Binomial)
}

pub fn fit_model(rows: &Rows, features: &[String], family: Family) -> Result<LogisticModel> {
    let idx = features.iter().map(|f| rows.index(f)).collect::<Result<Vec<_>>>()?;
    fit_indices(rows, &idx, family)
}

/// Greedy forward selection: at each step add the candidate giving the
/// lowest AIC, stopping at `max_vars` or when no addition lowers it. Ties go
/// to the earlier candidate.
pub fn forward_stepwise_aic(
    rows: &Rows,
    candidates: &[String],
    max_vars: usize,
    family: Family,
) -> Result<Vec<String>> {
    let cand = candidates.iter().map(|f| rows.index(f)).collect::<Result<Vec<_>>>()?;
    let mut chosen: Vec<usize> = Vec::new();
    let mut current = fit_indices(rows, &[], family)?.meta.aic;
    while chosen.len() < max_vars {
        let remaining: Vec<usize> = cand.iter().copied().filter(|c| !chosen.contains(c)).collect();
        if remaining.is_empty() {
            break;
        }
        let scores = remaining
            .par_iter()
            .map(|&c| {
                let mut f = chosen.clone();
                f.push(c);
                fit_indices(rows, &f, family).map(|m| m.meta.aic)
            })
            .collect::<Result<Vec<f64>>>()?;
        let (best, aic) = scores
            .iter()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, &a)| if a < acc.1 { (i, a) } else { acc });
        if aic >= current {
            break;
        }
        chosen.push(remaining[best]);
        current = aic;
    }
    Ok(chosen.into_iter().map(|j| rows.names[j].clone()).collect())
}

/// ROC AUC by the Mann-Whitney statistic; tied scores count one half.
pub fn auc(scores: &[f64], labels: &[f64]) -> Result<f64> {
    if scores.len() != labels.len() {
        return Err(Error::Validation("scores and labels differ in length".into()));
    }
    let n_pos = labels.iter().filter(|&&l| l == 1.0).count();
    let n_neg = labels.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Validation("AUC needs both classes".into()));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut rank_sum_pos = 0.0;
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        // Ranks i+1 ..= j+1 share their average.
        let avg = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            if labels[k] == 1.0 {
                rank_sum_pos += avg;
            }
        }
        i = j + 1;
    }
    let (p, q) = (n_pos as f64, n_neg as f64);
    Ok((rank_sum_pos - p * (p + 1.0) / 2.0) / (p * q))
}

/// Class-stratified fold index of every row.
pub fn stratified_folds(y: &[f64], folds: usize, seed: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0; y.len()];
    for class in [0.0, 1.0] {
        let mut idx: Vec<usize> = (0..y.len()).filter(|&i| (y[i] == 1.0) == (class == 1.0)).collect();
        idx.shuffle(&mut rng);
        for (pos, i) in idx.into_iter().enumerate() {
            out[i] = pos % folds;
        }
    }
    out
}

/// Cross-validated AUC of a logistic model on `features`: out-of-fold
/// predictions from all folds are pooled into one AUC.
pub fn cv_auc(rows: &Rows, features: &[String], folds: usize, seed: u64) -> Result<f64> {
    if folds < 2 {
        return Err(Error::Validation("cross-validation needs at least 2 folds".into()));
    }
    let fold = stratified_folds(&rows.y, folds, seed);
    let parts = (0..folds)
        .into_par_iter()
        .map(|f| {
            let train: Vec<usize> = (0..rows.len()).filter(|&i| fold[i] != f).collect();
            let test: Vec<usize> = (0..rows.len()).filter(|&i| fold[i] == f).collect();
            let model = fit_logistic(&rows.subset(&train), features)?;
            let pred = model.predict(&rows.subset(&test))?;
            Ok(test.into_iter().zip(pred).collect::<Vec<_>>())
        })
        .collect::<Result<Vec<_>>>()?;
    let mut scores = vec![0.0; rows.len()];
    for (i, s) in parts.into_iter().flatten() {
        scores[i] = s;
    }
    auc(&scores, &rows.y)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucPoint {
    pub size: usize,
    pub feature: String,
    pub nominal: f64,
    pub cross_validated: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AucTrace {
    pub points: Vec<AucPoint>,
    pub chosen_size: usize,
}

/// Nominal and cross-validated AUC for each prefix of `order`.
pub fn auc_trace(rows: &Rows, order: &[String], folds: usize, seed: u64, stop_bp: f64) -> Result<AucTrace> {
    let points = (1..=order.len())
        .into_par_iter()
        .map(|m| {
            let features = &order[..m];
            Ok(AucPoint {
                size: m,
                feature: order[m - 1].clone(),
                nominal: fit_logistic(rows, features)?.auc(rows)?,
                cross_validated: cv_auc(rows, features, folds, seed)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let mut trace = AucTrace { points, chosen_size: 0 };
    trace.chosen_size = select_model_size_bp(&trace, stop_bp);
    Ok(trace)
}

/// Largest model size whose last addition raised the cross-validated AUC by
/// at least one basis point (1e-4). Size 1 is always accepted.
pub fn select_model_size(trace: &AucTrace) -> usize {
    select_model_size_bp(trace, 1.0)
}

pub fn select_model_size_bp(trace: &AucTrace, stop_bp: f64) -> usize {
    let threshold = stop_bp * 1e-4;
    let mut chosen = usize::from(!trace.points.is_empty());
    for w in trace.points.windows(2) {
        // The slack keeps an exact one-basis-point gain from failing on
        // rounding in the subtraction.
        if w[1].cross_validated - w[0].cross_validated >= threshold - 1e-12 {
            chosen = w[1].size;
        }
    }
    chosen
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScoreTarget {
    Propensity,
    Prognostic,
}

/// Fill the propensity or prognostic score of every subject from `model`.
/// Propensities are clipped to `clip`; prognostic scores are not.
pub fn score(model: &LogisticModel, data: &Dataset, target: ScoreTarget, clip: (f64, f64)) -> Result<Dataset> {
    let (lo, hi) = clip;
    if !(lo > 0.0 && lo <= hi && hi < 1.0) {
        return Err(Error::Validation(format!(
            "clip bounds ({lo}, {hi}) must satisfy 0 < lo <= hi < 1"
        )));
    }
    let idx = model
        .selected_order
        .iter()
        .map(|n| {
            data.covariate_index(n)
                .ok_or_else(|| Error::Validation(format!("model feature {n:?} is not a column of the dataset")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut out = data.clone();
    let mut x = vec![0.0; idx.len()];
    for s in out.subjects_mut() {
        for (slot, &j) in x.iter_mut().zip(&idx) {
            *slot = s.covariates[j];
        }
        let v = model.predict_one(&x);
        match target {
            ScoreTarget::Propensity => s.propensity = Some(v.clamp(lo, hi)),
            ScoreTarget::Prognostic => s.prognostic = Some(v),
        }
    }
    Ok(out)
}

pub const DEFAULT_CLIP: (f64, f64) = (0.001, 0.999);

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::Rng;

    fn toy(n: usize, seed: u64, beta: &[f64], intercept: f64) -> Rows {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = beta.len();
        let mut cols = vec![Vec::with_capacity(n); p];
        let mut y = Vec::with_capacity(n);
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| rng.random_range(-2.0..2.0)).collect();
            let eta = intercept + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>();
            y.push(f64::from(u8::from(rng.random_bool(sigmoid(eta)))));
            for (c, v) in cols.iter_mut().zip(x) {
                c.push(v);
            }
        }
        Rows::new((1..=p).map(|j| format!("x{j}")).collect(), cols, y).unwrap()
    }

    #[test]
    fn null_model_recovers_base_rate() {
        let rows = toy(4000, 1, &[0.0, 0.0], -1.0);
        let m = fit_logistic(&rows, &rows.names.clone()).unwrap();
        let rate = rows.y.iter().sum::<f64>() / rows.len() as f64;
        assert!((m.intercept - (rate / (1.0 - rate)).ln()).abs() < 0.05);
        for (n, b) in &m.coefficients {
            assert!(b.abs() < 3.0 * m.standard_errors[n], "{n}: {b}");
        }
        assert!(m.meta.converged);
    }

    #[test]
    fn separable_data_is_flagged() {
        let x: Vec<f64> = (0..20).map(|i| i as f64).collect();
        let y: Vec<f64> = (0..20).map(|i| f64::from(u8::from(i >= 10))).collect();
        let rows = Rows::new(vec!["x".into()], vec![x], y).unwrap();
        let m = fit_logistic(&rows, &["x".into()]).unwrap();
        assert!(m.meta.separation);
        assert!(m.coefficients["x"].is_finite() && m.intercept.is_finite());
        assert_eq!(m.auc(&rows).unwrap(), 1.0);
    }

    #[test]
    fn single_class_and_nonfinite_are_rejected() {
        let rows = Rows::new(vec!["x".into()], vec![vec![1.0, 2.0]], vec![1.0, 1.0]).unwrap();
        assert!(fit_logistic(&rows, &["x".into()]).unwrap_err().is_validation());
        assert!(Rows::new(vec!["x".into()], vec![vec![f64::NAN]], vec![1.0]).is_err());
    }

    #[test]
    fn strong_feature_enters_first() {
        let mut rows = toy(2000, 2, &[0.0, 3.0, 0.0, 0.0], 0.0);
        rows.names = vec!["n1".into(), "signal".into(), "n2".into(), "n3".into()];
        let names = rows.names.clone();
        let order = forward_stepwise_aic(&rows, &names, 10, Family::Binomial).unwrap();
        assert_eq!(order[0], "signal");
        assert!(order.len() <= names.len());
        assert!(forward_stepwise_aic(&rows, &names, 0, Family::Binomial)
            .unwrap()
            .is_empty());
    }

    #[test]
    fn auc_conventions() {
        assert_eq!(auc(&[0.1, 0.2, 0.8, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 1.0);
        assert_eq!(auc(&[0.5; 6], &[0.0, 1.0, 0.0, 1.0, 1.0, 0.0]).unwrap(), 0.5);
        assert!(auc(&[0.1, 0.2], &[1.0, 1.0]).is_err());
        // One discordant pair of four.
        assert_eq!(auc(&[0.1, 0.6, 0.5, 0.9], &[0.0, 0.0, 1.0, 1.0]).unwrap(), 0.75);
    }

    #[test]
    fn auc_of_noise_is_a_half() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let s: Vec<f64> = (0..10_000).map(|_| rng.random()).collect();
        let l: Vec<f64> = (0..10_000).map(|_| f64::from(u8::from(rng.random_bool(0.5)))).collect();
        assert!((auc(&s, &l).unwrap() - 0.5).abs() < 0.02);
    }

    proptest! {
        #[test]
        fn auc_ignores_monotone_transforms(
            pairs in prop::collection::vec((-3.0f64..3.0, any::<bool>()), 2..60)
        ) {
            let s: Vec<f64> = pairs.iter().map(|p| p.0).collect();
            let l: Vec<f64> = pairs.iter().map(|p| f64::from(u8::from(p.1))).collect();
            prop_assume!(l.contains(&0.0) && l.contains(&1.0));
            let t: Vec<f64> = s.iter().map(|v| v.exp() * 3.0 + 1.0).collect();
            prop_assert_eq!(auc(&s, &l).unwrap(), auc(&t, &l).unwrap());
        }
    }

    fn trace(cv: &[f64]) -> AucTrace {
        AucTrace {
            points: cv
                .iter()
                .enumerate()
                .map(|(i, &c)| AucPoint {
                    size: i + 1,
                    feature: format!("x{}", i + 1),
                    nominal: c,
                    cross_validated: c,
                })
                .collect(),
            chosen_size: 0,
        }
    }

    #[test]
    fn basis_point_rule() {
        // Gains over the null AUC of 0.5: 0.02, 0.00005, 0.0002.
        assert_eq!(select_model_size(&trace(&[0.52, 0.52005, 0.52025])), 3);
        assert_eq!(select_model_size(&trace(&[0.6, 0.61, 0.62, 0.63])), 4);
        assert_eq!(select_model_size(&trace(&[0.6, 0.60001, 0.6, 0.59])), 1);
        assert_eq!(select_model_size(&trace(&[0.6, 0.6001])), 2);
    }

    #[test]
    fn cv_auc_is_close_to_nominal_for_a_true_model() {
        let rows = toy(1500, 8, &[1.0, -1.0], 0.0);
        let names = rows.names.clone();
        let cv = cv_auc(&rows, &names, 10, 3).unwrap();
        let nominal = fit_logistic(&rows, &names).unwrap().auc(&rows).unwrap();
        assert!(cv <= nominal + 1e-9 && nominal - cv < 0.01, "{cv} {nominal}");
        assert_eq!(cv, cv_auc(&rows, &names, 10, 3).unwrap());
    }

    #[test]
    fn gaussian_family_is_least_squares() {
        let x = vec![0.0, 1.0, 2.0, 3.0];
        let y = vec![1.0, 3.0, 5.0, 7.0];
        let rows = Rows::new(vec!["x".into()], vec![x], y).unwrap();
        let m = fit_model(&rows, &["x".into()], Family::Gaussian).unwrap();
        assert!((m.intercept - 1.0).abs() < 1e-12 && (m.coefficients["x"] - 2.0).abs() < 1e-12);
        assert_eq!(m.predict_one(&[10.0]), 21.0);
    }
}
