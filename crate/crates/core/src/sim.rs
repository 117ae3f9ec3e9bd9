//! Synthetic ODB/RCT scenarios with known potential outcomes, the
//! repeated-assignment MSE experiment, and the bootstrap comparison.
//!
//! Randomness comes from one seed per scenario, split into independent
//! ChaCha streams per covariate draw and per assignment draw, so a run is
//! reproducible regardless of thread count.

use std::fmt;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, RctDesign, Source, Subject};
use crate::error::{Error, Result};
use crate::estimators::{estimate, naive_odb, EstimateOptions, Method, UndefinedStrata};
use crate::stats::{ksum, mean, population_variance, sample_variance, sigmoid};
use crate::stratify::{propensity_bin, StratificationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EffectShape {
    Constant,
    LinearBin,
    QuadraticBin,
    LinearPropensity,
    QuadraticPropensity,
}

impl EffectShape {
    /// Unit-scale effect of a subject with true propensity `e`.
    pub fn pattern(self, e: f64, k: usize) -> f64 {
        let bin = || propensity_bin(e, k) as f64 / k as f64;
        match self {
            EffectShape::Constant => 1.0,
            EffectShape::LinearBin => bin(),
            EffectShape::QuadraticBin => (bin() - 0.5).powi(2),
            EffectShape::LinearPropensity => e,
            EffectShape::QuadraticPropensity => (e - 0.5).powi(2),
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            EffectShape::Constant => "c",
            EffectShape::LinearBin | EffectShape::LinearPropensity => "l",
            EffectShape::QuadraticBin | EffectShape::QuadraticPropensity => "q",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Enrollment {
    #[default]
    Random,
    Restricted,
}

/// `x[covariate - 1] < below` and/or `x[covariate - 1] > above`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    pub covariate: usize,
    #[serde(default)]
    pub below: Option<f64>,
    #[serde(default)]
    pub above: Option<f64>,
}

impl Bound {
    fn admits(&self, x: &[f64]) -> bool {
        let v = x[self.covariate - 1];
        self.below.is_none_or(|b| v < b) && self.above.is_none_or(|a| v > a)
    }
}

pub fn default_restriction() -> Vec<Bound> {
    vec![
        Bound {
            covariate: 1,
            below: Some(-1.0),
            above: None,
        },
        Bound {
            covariate: 5,
            below: Some(-1.0),
            above: None,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaMode {
    /// Unit diagonal, off-diagonal entries 0 or +-0.1.
    #[default]
    RandomSparse,
    Identity,
    Custom,
}

/// The four propensity directions: correlated with the all-ones outcome
/// direction or orthogonal to it, each at squared norm 3 and 6.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NamedGamma {
    Correlated3,
    Correlated6,
    Uncorrelated3,
    Uncorrelated6,
}

impl NamedGamma {
    pub const ALL: [NamedGamma; 4] = [
        NamedGamma::Correlated3,
        NamedGamma::Correlated6,
        NamedGamma::Uncorrelated3,
        NamedGamma::Uncorrelated6,
    ];

    pub fn vector(self) -> Vec<f64> {
        let s2 = 2f64.sqrt();
        let h3 = 3f64.sqrt() / 2.0;
        let h6 = 6f64.sqrt() / 2.0;
        match self {
            NamedGamma::Correlated3 => vec![1.0, 1.0, 1.0, 0.0, 0.0],
            NamedGamma::Correlated6 => vec![s2, s2, s2, 0.0, 0.0],
            NamedGamma::Uncorrelated3 => vec![h3, -h3, h3, -h3, 0.0],
            NamedGamma::Uncorrelated6 => vec![h6, -h6, h6, -h6, 0.0],
        }
    }

    pub fn correlated(self) -> bool {
        matches!(self, NamedGamma::Correlated3 | NamedGamma::Correlated6)
    }

    pub fn norm2(self) -> u32 {
        match self {
            NamedGamma::Correlated3 | NamedGamma::Uncorrelated3 => 3,
            _ => 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum GammaSpec {
    Named(NamedGamma),
    Custom(Vec<f64>),
}

impl GammaSpec {
    pub fn vector(&self) -> Vec<f64> {
        match self {
            GammaSpec::Named(g) => g.vector(),
            GammaSpec::Custom(v) => v.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSpec {
    pub n_o: usize,
    pub n_r: usize,
    pub d: usize,
    pub gamma: GammaSpec,
    pub beta: Vec<f64>,
    pub effect_shape: EffectShape,
    pub target_cohens_d: f64,
    pub enrollment: Enrollment,
    pub restriction: Vec<Bound>,
    pub p_r: f64,
    pub k: usize,
    pub n_cov_draws: usize,
    pub n_assign_draws: usize,
    pub sigma_mode: SigmaMode,
    pub sigma: Option<Vec<Vec<f64>>>,
    /// Standard deviation of the outcome noise.
    pub noise_sd: f64,
    /// Handling of strata where a method is undefined. The default counts
    /// them as zero, so an RCT that never reaches part of the propensity
    /// range is penalized for it.
    pub undefined: UndefinedStrata,
    pub seed: u64,
}

impl Default for ScenarioSpec {
    fn default() -> Self {
        Self {
            n_o: 5000,
            n_r: 200,
            d: 5,
            gamma: GammaSpec::Named(NamedGamma::Correlated3),
            beta: vec![1.0; 5],
            effect_shape: EffectShape::Constant,
            target_cohens_d: 0.5,
            enrollment: Enrollment::Random,
            restriction: default_restriction(),
            p_r: 0.5,
            k: 20,
            n_cov_draws: 100,
            n_assign_draws: 20,
            sigma_mode: SigmaMode::RandomSparse,
            sigma: None,
            noise_sd: 1.0,
            undefined: UndefinedStrata::Zero,
            seed: 0,
        }
    }
}

impl ScenarioSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Validation(m));
        if self.n_o == 0 || self.n_r == 0 || self.d == 0 || self.k == 0 {
            return bad("sizes n_o, n_r, d and k must be positive".into());
        }
        if self.n_cov_draws == 0 || self.n_assign_draws == 0 {
            return bad("draw counts must be positive".into());
        }
        if self.gamma.vector().len() != self.d || self.beta.len() != self.d {
            return bad(format!("gamma and beta must have length d = {}", self.d));
        }
        if !(self.target_cohens_d >= 0.0) {
            return bad("target Cohen's d must be nonnegative".into());
        }
        if !(self.noise_sd >= 0.0) {
            return bad("noise_sd must be nonnegative".into());
        }
        RctDesign::new(self.p_r)?;
        if self
            .restriction
            .iter()
            .any(|b| b.covariate == 0 || b.covariate > self.d)
        {
            return bad("restriction refers to a covariate outside 1..=d".into());
        }
        if self.sigma_mode == SigmaMode::Custom {
            match &self.sigma {
                Some(s) if s.len() == self.d && s.iter().all(|r| r.len() == self.d) => {}
                _ => return bad("custom sigma must be a d x d matrix".into()),
            }
        }
        Ok(())
    }

    /// Short row key such as `c,y,3`.
    pub fn row_key(&self) -> String {
        let (cor, norm) = match &self.gamma {
            GammaSpec::Named(g) => (
                if g.correlated() { "y" } else { "n" }.to_string(),
                g.norm2().to_string(),
            ),
            GammaSpec::Custom(v) => {
                let dot: f64 = v.iter().zip(&self.beta).map(|(a, b)| a * b).sum();
                let n2: f64 = v.iter().map(|a| a * a).sum();
                (if dot.abs() > 1e-9 { "y" } else { "n" }.to_string(), format!("{n2:.3}"))
            }
        };
        format!("{},{},{}", self.effect_shape.code(), cor, norm)
    }
}

/// Stream identifiers for the splittable generator.
#[derive(Debug, Clone, Copy)]
enum Stream {
    Covariates = 1,
    Assignment = 2,
    Bootstrap = 3,
}

fn stream_rng(seed: u64, kind: Stream, row: u64, cov: u64, assign: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((kind as u64) << 56 | (row & 0xFFFF) << 40 | (cov & 0xF_FFFF) << 20 | (assign & 0xF_FFFF));
    rng
}

/// Unit-diagonal covariance with off-diagonal entries 0 (probability 1/2) or
/// +-0.1 (1/4 each).
pub fn sample_covariance(
    d: usize,
    mode: SigmaMode,
    custom: Option<&[Vec<f64>]>,
    rng: &mut impl Rng,
) -> Result<DMatrix<f64>> {
    match mode {
        SigmaMode::Identity => Ok(DMatrix::identity(d, d)),
        SigmaMode::Custom => {
            let s = custom.ok_or_else(|| Error::Validation("custom sigma missing".into()))?;
            let m = DMatrix::from_fn(d, d, |i, j| s[i][j]);
            if m.clone().cholesky().is_none() {
                return Err(Error::Validation("custom sigma is not positive definite".into()));
            }
            Ok(m)
        }
        SigmaMode::RandomSparse => {
            let draw = |rng: &mut dyn rand::RngCore| {
                let mut m = DMatrix::identity(d, d);
                for i in 0..d {
                    for j in i + 1..d {
                        let v = match rng.random_range(0..4u8) {
                            0 | 1 => 0.0,
                            2 => 0.1,
                            _ => -0.1,
                        };
                        m[(i, j)] = v;
                        m[(j, i)] = v;
                    }
                }
                m
            };
            let mut last = DMatrix::identity(d, d);
            for _ in 0..100 {
                last = draw(rng);
                if last.clone().cholesky().is_some() {
                    return Ok(last);
                }
            }
            nearest_pd(&last)
        }
    }
}

/// Clip eigenvalues from below and rescale back to unit diagonal.
fn nearest_pd(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let eig = SymmetricEigen::new(m.clone());
    let vals = eig.eigenvalues.map(|v| v.max(1e-6));
    let fixed = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.transpose();
    let d = fixed.nrows();
    let scaled = DMatrix::from_fn(d, d, |i, j| fixed[(i, j)] / (fixed[(i, i)] * fixed[(j, j)]).sqrt());
    scaled
        .clone()
        .cholesky()
        .map(|_| scaled)
        .ok_or_else(|| Error::Degenerate("could not repair covariance to positive definite".into()))
}

/// One simulated subject before treatment assignment.
#[derive(Debug, Clone, PartialEq)]
pub struct Unit {
    pub x: Vec<f64>,
    pub y_t: f64,
    pub y_c: f64,
    /// True ODB propensity.
    pub e: f64,
}

/// One realization of covariates and potential outcomes.
#[derive(Debug, Clone)]
pub struct Population {
    pub odb: Vec<Unit>,
    pub rct: Vec<Unit>,
    /// Effect scale giving the target Cohen's d.
    pub t_scale: f64,
    pub sigma: DMatrix<f64>,
}

impl Population {
    /// ODB average treatment effect, the estimation target.
    pub fn true_tau(&self) -> f64 {
        ksum(self.odb.iter().map(|u| u.y_t - u.y_c)) / self.odb.len() as f64
    }
}

/// Mean effect over the pooled-arm standard deviation, using sample
/// variances of both potential outcomes.
pub fn cohens_d(y_t: &[f64], y_c: &[f64]) -> f64 {
    let diff: Vec<f64> = y_t.iter().zip(y_c).map(|(t, c)| t - c).collect();
    let sd = ((sample_variance(y_t).unwrap_or(0.0) + sample_variance(y_c).unwrap_or(0.0)) / 2.0).sqrt();
    mean(&diff).unwrap_or(0.0) / sd
}

/// Scale `T` such that adding `T * pattern` to `y_c` gives Cohen's d equal
/// to `target`. Closed form for a constant pattern, bisection otherwise.
pub fn cohens_d_scale(y_c: &[f64], pattern: &[f64], target: f64) -> Result<f64> {
    if y_c.len() != pattern.len() || y_c.len() < 2 {
        return Err(Error::Validation(
            "Cohen's d needs matching outcome and pattern vectors of length >= 2".into(),
        ));
    }
    let m = mean(pattern).unwrap();
    if !(m > 0.0) {
        return Err(Error::Validation(format!("effect pattern mean {m} must be positive")));
    }
    if target == 0.0 {
        return Ok(0.0);
    }
    let v_c = sample_variance(y_c).unwrap();
    let constant = pattern.iter().all(|&p| p == pattern[0]);
    if constant {
        return Ok(target * v_c.sqrt() / m);
    }
    // var(Y_t) = v_c + 2 T cov + T^2 v_p, so d(T) = T m / sqrt(v_c + T cov + T^2 v_p / 2).
    let n = y_c.len() as f64;
    let yc_bar = mean(y_c).unwrap();
    let cov = ksum(y_c.iter().zip(pattern).map(|(y, p)| (y - yc_bar) * (p - m))) / (n - 1.0);
    let v_p = sample_variance(pattern).unwrap();
    let d_of = |t: f64| t * m / (v_c + t * cov + t * t * v_p / 2.0).sqrt();
    // d increases while v_c + T cov / 2 > 0.
    let t_peak = if cov < 0.0 { -2.0 * v_c / cov } else { f64::INFINITY };
    let mut hi = target * v_c.sqrt().max(1e-12) / m;
    while d_of(hi) < target {
        hi *= 2.0;
        if hi > t_peak || !hi.is_finite() || hi > 1e300 {
            let hi = hi.min(t_peak);
            if d_of(hi) < target {
                return Err(Error::Degenerate(format!(
                    "Cohen's d of {target} is unreachable for this pattern"
                )));
            }
            break;
        }
    }
    let hi_cap = hi.min(t_peak);
    let (mut lo, mut hi) = (0.0, hi_cap);
    for _ in 0..300 {
        let mid = 0.5 * (lo + hi);
        let d = d_of(mid);
        if (d - target).abs() < 1e-12 {
            return Ok(mid);
        }
        if d < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo <= f64::EPSILON * hi {
            break;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn draw_x(l: &DMatrix<f64>, rng: &mut impl Rng) -> Vec<f64> {
    let d = l.nrows();
    let z: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
    (0..d).map(|i| (0..=i).map(|j| l[(i, j)] * z[j]).sum()).collect()
}

/// Covariates and potential outcomes for covariate draw `cov` of grid row
/// `row`.
pub fn generate_population(spec: &ScenarioSpec, row: usize, cov: usize) -> Result<Population> {
    spec.validate()?;
    let mut rng = stream_rng(spec.seed, Stream::Covariates, row as u64, cov as u64, 0);
    let sigma = sample_covariance(spec.d, spec.sigma_mode, spec.sigma.as_deref(), &mut rng)?;
    let l = sigma
        .clone()
        .cholesky()
        .ok_or_else(|| Error::Degenerate("covariance is not PD".into()))?
        .l();
    let gamma = spec.gamma.vector();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();

    let make = |x: Vec<f64>, rng: &mut ChaCha8Rng| {
        let eps: f64 = StandardNormal.sample(rng);
        let y_c = dot(&x, &spec.beta) + spec.noise_sd * eps;
        let e = sigmoid(dot(&x, &gamma));
        Unit { x, y_t: y_c, y_c, e }
    };
    let mut odb: Vec<Unit> = (0..spec.n_o)
        .map(|_| {
            let x = draw_x(&l, &mut rng);
            make(x, &mut rng)
        })
        .collect();

    let mut rct = Vec::with_capacity(spec.n_r);
    let mut tries: u64 = 0;
    while rct.len() < spec.n_r {
        let x = draw_x(&l, &mut rng);
        tries += 1;
        let ok = spec.enrollment == Enrollment::Random || spec.restriction.iter().all(|b| b.admits(&x));
        if ok {
            rct.push(make(x, &mut rng));
        } else if tries >= 100_000 && (rct.len() as f64) < 1e-4 * tries as f64 {
            return Err(Error::Degenerate(
                "enrollment restriction accepts fewer than 1 in 10^4 draws; loosen the predicate".into(),
            ));
        }
    }

    let pattern = |u: &Unit| spec.effect_shape.pattern(u.e, spec.k);
    let yc: Vec<f64> = odb.iter().map(|u| u.y_c).collect();
    let pat: Vec<f64> = odb.iter().map(pattern).collect();
    let t_scale = cohens_d_scale(&yc, &pat, spec.target_cohens_d)?;
    for u in odb.iter_mut().chain(rct.iter_mut()) {
        u.y_t = u.y_c + t_scale * pattern(u);
    }
    Ok(Population {
        odb,
        rct,
        t_scale,
        sigma,
    })
}

/// Draw treatments: `Bern(e)` in the ODB, `Bern(p_r)` in the RCT.
pub fn assign(pop: &Population, p_r: f64, rng: &mut impl Rng) -> Vec<Observation> {
    let obs = |u: &Unit, source, w: bool| Observation {
        source,
        treated: w,
        outcome: if w { u.y_t } else { u.y_c },
        propensity: u.e,
        prognostic: None,
        potential: Some((u.y_t, u.y_c)),
    };
    let mut out = Vec::with_capacity(pop.odb.len() + pop.rct.len());
    for u in &pop.odb {
        out.push(obs(u, Source::Odb, rng.random_bool(u.e)));
    }
    for u in &pop.rct {
        out.push(obs(u, Source::Rct, rng.random_bool(p_r)));
    }
    out
}

/// The first covariate and assignment draw of `spec` as a dataset carrying
/// potential outcomes and true propensities.
pub fn generate_scenario(spec: &ScenarioSpec) -> Result<Dataset> {
    let pop = generate_population(spec, 0, 0)?;
    let mut rng = stream_rng(spec.seed, Stream::Assignment, 0, 0, 0);
    let obs = assign(&pop, spec.p_r, &mut rng);
    let units = pop.odb.iter().chain(&pop.rct);
    let subjects = obs
        .iter()
        .zip(units)
        .enumerate()
        .map(|(i, (o, u))| {
            let id = match o.source {
                Source::Odb => format!("o{}", i + 1),
                Source::Rct => format!("r{}", i + 1 - pop.odb.len()),
            };
            Subject {
                id,
                source: o.source,
                covariates: u.x.clone(),
                treated: o.treated,
                outcome: o.outcome,
                potential_outcomes: o.potential,
                propensity: Some(o.propensity),
                prognostic: None,
            }
        })
        .collect();
    let names = (1..=spec.d).map(|j| format!("x{j}")).collect();
    let mut data = Dataset::new(subjects, names)?;
    data.metadata.insert("t_scale".into(), pop.t_scale.to_string());
    data.metadata.insert("true_tau".into(), pop.true_tau().to_string());
    Ok(data)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodStats {
    pub method: Method,
    pub mse: f64,
    pub bias2: f64,
    pub variance: f64,
    pub mean_error: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseRow {
    pub key: String,
    pub enrollment: Enrollment,
    pub effect_shape: EffectShape,
    pub gamma: GammaSpec,
    pub stats: Vec<MethodStats>,
    /// Methods from lowest to highest MSE.
    pub ranking: Vec<Method>,
    pub replicates: usize,
    pub excluded: usize,
    pub mean_t_scale: f64,
}

impl MseRow {
    pub fn mse(&self, m: Method) -> Option<f64> {
        self.stats.iter().find(|s| s.method == m).map(|s| s.mse)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplicateDraw {
    pub row: usize,
    pub cov: usize,
    pub assign: usize,
    pub truth: f64,
    pub estimates: Vec<Option<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseTable {
    pub methods: Vec<Method>,
    pub rows: Vec<MseRow>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub draws: Option<Vec<ReplicateDraw>>,
}

impl fmt::Display for MseTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:<10} {:<10}", "row", "enroll")?;
        for m in &self.methods {
            write!(f, " {:>11}", m.name())?;
        }
        writeln!(f)?;
        for r in &self.rows {
            let enroll = match r.enrollment {
                Enrollment::Random => "random",
                Enrollment::Restricted => "restricted",
            };
            write!(f, "{:<10} {:<10}", r.key, enroll)?;
            for m in &self.methods {
                match r.mse(*m) {
                    Some(v) => write!(f, " {v:>11.4}")?,
                    None => write!(f, " {:>11}", "-")?,
                }
            }
            writeln!(f)?;
        }
        Ok(())
    }
}

impl MseTable {
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record([
            "row",
            "enrollment",
            "method",
            "mse",
            "bias2",
            "variance",
            "rank",
            "replicates",
            "excluded",
        ])?;
        for r in &self.rows {
            let enroll = serde_json::to_value(r.enrollment)?;
            for s in &r.stats {
                let rank = r
                    .ranking
                    .iter()
                    .position(|m| *m == s.method)
                    .map(|p| p + 1)
                    .unwrap_or(0);
                wtr.write_record([
                    r.key.clone(),
                    enroll.as_str().unwrap_or_default().to_string(),
                    s.method.name().to_string(),
                    s.mse.to_string(),
                    s.bias2.to_string(),
                    s.variance.to_string(),
                    rank.to_string(),
                    r.replicates.to_string(),
                    r.excluded.to_string(),
                ])?;
            }
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

pub const SIM_METHODS: [Method; 6] = [
    Method::Odb,
    Method::Rct,
    Method::Weighted,
    Method::Spiked,
    Method::Dynamic,
    Method::Oracle,
];

/// Largest tolerated fraction of replicates dropped for estimator failures.
pub const MAX_EXCLUDED_FRACTION: f64 = 0.01;

fn error_stats(method: Method, errors: &[f64]) -> MethodStats {
    let mean_error = mean(errors).unwrap_or(f64::NAN);
    let variance = population_variance(errors).unwrap_or(f64::NAN);
    MethodStats {
        method,
        mse: ksum(errors.iter().map(|e| e * e)) / errors.len() as f64,
        bias2: mean_error * mean_error,
        variance,
        mean_error,
    }
}

fn ranking(stats: &[MethodStats]) -> Vec<Method> {
    let mut order: Vec<&MethodStats> = stats.iter().collect();
    order.sort_by(|a, b| a.mse.total_cmp(&b.mse));
    order.into_iter().map(|s| s.method).collect()
}

/// Run every scenario row: `n_cov_draws` covariate draws, each with
/// `n_assign_draws` treatment redraws, estimating every method against the
/// realization's true ODB effect.
pub fn run_mse_experiment(grid: &[ScenarioSpec], methods: &[Method], keep_draws: bool) -> Result<MseTable> {
    if grid.is_empty() {
        return Err(Error::Validation("scenario grid is empty".into()));
    }
    if methods.contains(&Method::DualSpiked) {
        return Err(Error::Validation(
            "simulated scenarios carry no prognostic score for dual_spiked".into(),
        ));
    }
    let mut rows = Vec::with_capacity(grid.len());
    let mut all_draws = Vec::new();
    for (r, spec) in grid.iter().enumerate() {
        spec.validate()?;
        let opts = EstimateOptions {
            design: RctDesign::new(spec.p_r)?,
            undefined: spec.undefined,
            ..EstimateOptions::default()
        };
        let per_cov = (0..spec.n_cov_draws)
            .into_par_iter()
            .map(|c| -> Result<(f64, Vec<ReplicateDraw>)> {
                let pop = generate_population(spec, r, c)?;
                let truth = pop.true_tau();
                let mut draws = Vec::with_capacity(spec.n_assign_draws);
                for a in 0..spec.n_assign_draws {
                    let mut rng = stream_rng(spec.seed, Stream::Assignment, r as u64, c as u64, a as u64);
                    let obs = assign(&pop, spec.p_r, &mut rng);
                    let plan = StratificationPlan::equal_width(&obs, spec.k)?;
                    let estimates = match estimate(&plan, &obs, methods, &opts) {
                        Ok(rep) => methods.iter().map(|m| rep.tau(*m)).collect(),
                        Err(_) => vec![None; methods.len()],
                    };
                    draws.push(ReplicateDraw {
                        row: r,
                        cov: c,
                        assign: a,
                        truth,
                        estimates,
                    });
                }
                Ok((pop.t_scale, draws))
            })
            .collect::<Result<Vec<_>>>()?;

        let total = spec.n_cov_draws * spec.n_assign_draws;
        let draws: Vec<ReplicateDraw> = per_cov.iter().flat_map(|(_, d)| d.iter().cloned()).collect();
        let kept: Vec<&ReplicateDraw> = draws
            .iter()
            .filter(|d| d.estimates.iter().all(Option::is_some))
            .collect();
        let excluded = total - kept.len();
        if excluded as f64 > MAX_EXCLUDED_FRACTION * total as f64 {
            return Err(Error::Degenerate(format!(
                "row {}: {excluded} of {total} replicates failed, more than {}%",
                spec.row_key(),
                MAX_EXCLUDED_FRACTION * 100.0
            )));
        }
        let stats: Vec<MethodStats> = methods
            .iter()
            .enumerate()
            .map(|(j, &m)| {
                let errors: Vec<f64> = kept.iter().map(|d| d.estimates[j].unwrap() - d.truth).collect();
                error_stats(m, &errors)
            })
            .collect();
        rows.push(MseRow {
            key: spec.row_key(),
            enrollment: spec.enrollment,
            effect_shape: spec.effect_shape,
            gamma: spec.gamma.clone(),
            ranking: ranking(&stats),
            stats,
            replicates: kept.len(),
            excluded,
            mean_t_scale: ksum(per_cov.iter().map(|p| p.0)) / per_cov.len() as f64,
        });
        if keep_draws {
            all_draws.extend(draws);
        }
    }
    Ok(MseTable {
        methods: methods.to_vec(),
        rows,
        draws: keep_draws.then_some(all_draws),
    })
}

/// The standard simulation grids.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Grid {
    /// Constant, linear and quadratic stratum effects; random enrollment.
    Ideal,
    /// As `Ideal` with restricted RCT enrollment.
    Restricted,
    /// Linear and quadratic effects in the propensity itself; random
    /// enrollment.
    PropensityEffects,
    /// As `PropensityEffects` with restricted enrollment.
    PropensityEffectsRestricted,
}

impl Grid {
    pub fn rows(self, base: &ScenarioSpec) -> Vec<ScenarioSpec> {
        let (shapes, enrollment): (&[EffectShape], _) = match self {
            Grid::Ideal => (
                &[EffectShape::Constant, EffectShape::LinearBin, EffectShape::QuadraticBin],
                Enrollment::Random,
            ),
            Grid::Restricted => (
                &[EffectShape::Constant, EffectShape::LinearBin, EffectShape::QuadraticBin],
                Enrollment::Restricted,
            ),
            Grid::PropensityEffects => (
                &[EffectShape::LinearPropensity, EffectShape::QuadraticPropensity],
                Enrollment::Random,
            ),
            Grid::PropensityEffectsRestricted => (
                &[EffectShape::LinearPropensity, EffectShape::QuadraticPropensity],
                Enrollment::Restricted,
            ),
        };
        shapes
            .iter()
            .flat_map(|&effect_shape| {
                NamedGamma::ALL.into_iter().map(move |g| ScenarioSpec {
                    effect_shape,
                    enrollment,
                    gamma: GammaSpec::Named(g),
                    ..base.clone()
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapOptions {
    pub k: usize,
    pub prognostic_bins: usize,
    pub min_arm: usize,
    pub design: RctDesign,
    pub seed: u64,
}

impl Default for BootstrapOptions {
    fn default() -> Self {
        Self {
            k: 10,
            prognostic_bins: 3,
            min_arm: 1,
            design: RctDesign::default(),
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BootstrapMethod {
    NaiveOdb,
    StratifiedOdb,
    Rct,
    Weighted,
    Spiked,
    DualSpiked,
    Dynamic,
}

impl BootstrapMethod {
    pub const ALL: [BootstrapMethod; 7] = [
        BootstrapMethod::NaiveOdb,
        BootstrapMethod::StratifiedOdb,
        BootstrapMethod::Rct,
        BootstrapMethod::Weighted,
        BootstrapMethod::Spiked,
        BootstrapMethod::DualSpiked,
        BootstrapMethod::Dynamic,
    ];

    fn estimator(self) -> Option<Method> {
        match self {
            BootstrapMethod::NaiveOdb => None,
            BootstrapMethod::StratifiedOdb => Some(Method::Odb),
            BootstrapMethod::Rct => Some(Method::Rct),
            BootstrapMethod::Weighted => Some(Method::Weighted),
            BootstrapMethod::Spiked => Some(Method::Spiked),
            BootstrapMethod::DualSpiked => Some(Method::DualSpiked),
            BootstrapMethod::Dynamic => Some(Method::Dynamic),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            BootstrapMethod::NaiveOdb => "naive_odb",
            BootstrapMethod::StratifiedOdb => "stratified_odb",
            BootstrapMethod::Rct => "rct",
            BootstrapMethod::Weighted => "weighted",
            BootstrapMethod::Spiked => "spiked",
            BootstrapMethod::DualSpiked => "dual_spiked",
            BootstrapMethod::Dynamic => "dynamic",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapRow {
    pub method: BootstrapMethod,
    pub mean: f64,
    pub bias: f64,
    pub variance: f64,
    pub rmse: f64,
    pub replicates: usize,
    pub failures: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BootstrapReport {
    pub reference_tau: f64,
    pub rows: Vec<BootstrapRow>,
    /// One entry per replicate, aligned with `rows`.
    pub draws: Vec<Vec<Option<f64>>>,
}

impl BootstrapReport {
    pub fn get(&self, m: BootstrapMethod) -> Option<&BootstrapRow> {
        self.rows.iter().find(|r| r.method == m)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record(["method", "mean", "bias", "variance", "rmse", "replicates", "failures"])?;
        for r in &self.rows {
            wtr.write_record([
                r.method.name().to_string(),
                r.mean.to_string(),
                r.bias.to_string(),
                r.variance.to_string(),
                r.rmse.to_string(),
                r.replicates.to_string(),
                r.failures.to_string(),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Resample the ODB (full size) and the RCT (`rct_subsample` or full size)
/// with replacement `reps` times and compare each method's estimates with
/// `reference_tau`.
pub fn bootstrap_compare(
    odb: &Dataset,
    rct: &Dataset,
    reference_tau: f64,
    reps: usize,
    rct_subsample: Option<usize>,
    methods: &[BootstrapMethod],
    opts: &BootstrapOptions,
) -> Result<BootstrapReport> {
    if reps == 0 {
        return Err(Error::Validation("bootstrap needs at least one replicate".into()));
    }
    let o = odb.observations()?;
    let r = rct.observations()?;
    if o.iter().any(|x| x.source != Source::Odb) || r.iter().any(|x| x.source != Source::Rct) {
        return Err(Error::Validation(
            "bootstrap inputs must be an ODB-only and an RCT-only dataset".into(),
        ));
    }
    if methods.contains(&BootstrapMethod::DualSpiked) {
        if let Some(s) = odb
            .subjects()
            .iter()
            .chain(rct.subjects())
            .find(|s| s.prognostic.is_none())
        {
            return Err(Error::MissingPrognostic(s.id.clone()));
        }
    }
    let m_r = rct_subsample.unwrap_or(r.len());
    let eopts = EstimateOptions {
        design: opts.design,
        undefined: UndefinedStrata::Merge,
        min_arm: opts.min_arm,
        prognostic_bins: opts.prognostic_bins,
    };
    let draws = (0..reps)
        .into_par_iter()
        .map(|b| {
            let mut rng = stream_rng(opts.seed, Stream::Bootstrap, 0, 0, b as u64);
            let mut obs: Vec<Observation> = Vec::with_capacity(o.len() + m_r);
            obs.extend((0..o.len()).map(|_| o[rng.random_range(0..o.len())]));
            if !r.is_empty() {
                obs.extend((0..m_r).map(|_| r[rng.random_range(0..r.len())]));
            }
            let plan = StratificationPlan::equal_width(&obs, opts.k);
            let mut out = Vec::with_capacity(methods.len());
            for &m in methods {
                out.push(match m.estimator() {
                    None => naive_odb(&obs),
                    Some(em) => plan
                        .as_ref()
                        .ok()
                        .and_then(|p| estimate(p, &obs, &[em], &eopts).ok())
                        .and_then(|rep| rep.tau(em)),
                });
            }
            out
        })
        .collect::<Vec<_>>();

    let rows = methods
        .iter()
        .enumerate()
        .map(|(j, &m)| {
            let vals: Vec<f64> = draws.iter().filter_map(|d| d[j]).collect();
            let mean_v = mean(&vals).unwrap_or(f64::NAN);
            let variance = population_variance(&vals).unwrap_or(f64::NAN);
            let bias = mean_v - reference_tau;
            BootstrapRow {
                method: m,
                mean: mean_v,
                bias,
                variance,
                rmse: (bias * bias + variance).sqrt(),
                replicates: vals.len(),
                failures: reps - vals.len(),
            }
        })
        .collect();
    Ok(BootstrapReport {
        reference_tau,
        rows,
        draws,
    })
}

/// Confounded binary-outcome data: a latent logistic outcome thresholded at
/// zero, an ODB assigned by a covariate-driven propensity and an RCT
/// randomized at `p_r`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinarySpec {
    pub n_o: usize,
    pub n_r: usize,
    pub gamma: Vec<f64>,
    pub beta: Vec<f64>,
    pub intercept: f64,
    /// Shift of the latent outcome under treatment.
    pub effect: f64,
    pub p_r: f64,
    pub seed: u64,
}

impl Default for BinarySpec {
    fn default() -> Self {
        Self {
            n_o: 20_000,
            n_r: 2_000,
            gamma: vec![0.8, 0.8, -0.6, 0.0, 0.0],
            beta: vec![-0.8, -0.6, 0.6, 0.5, 0.0],
            intercept: -2.5,
            effect: 0.2,
            p_r: 0.5,
            seed: 0,
        }
    }
}

/// Returns the ODB, the RCT and the true ODB average effect.
pub fn generate_binary_confounded(spec: &BinarySpec) -> Result<(Dataset, Dataset, f64)> {
    let d = spec.gamma.len();
    if spec.beta.len() != d || d == 0 {
        return Err(Error::Validation(
            "gamma and beta must have the same positive length".into(),
        ));
    }
    RctDesign::new(spec.p_r)?;
    let mut rng = stream_rng(spec.seed, Stream::Covariates, 0xFFFF, 0, 0);
    let names: Vec<String> = (1..=d).map(|j| format!("x{j}")).collect();
    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
    let make = |id: String, source: Source, rng: &mut ChaCha8Rng| {
        let x: Vec<f64> = (0..d).map(|_| StandardNormal.sample(rng)).collect();
        let u: f64 = rng.random_range(f64::EPSILON..1.0);
        let noise = (u / (1.0 - u)).ln();
        let base = spec.intercept + dot(&x, &spec.beta) + noise;
        let y_c = f64::from(u8::from(base > 0.0));
        let y_t = f64::from(u8::from(base + spec.effect > 0.0));
        let e = sigmoid(dot(&x, &spec.gamma));
        let w = match source {
            Source::Odb => rng.random_bool(e),
            Source::Rct => rng.random_bool(spec.p_r),
        };
        Subject {
            id,
            source,
            covariates: x,
            treated: w,
            outcome: if w { y_t } else { y_c },
            potential_outcomes: Some((y_t, y_c)),
            propensity: None,
            prognostic: None,
        }
    };
    let odb: Vec<Subject> = (1..=spec.n_o)
        .map(|i| make(format!("o{i}"), Source::Odb, &mut rng))
        .collect();
    let rct: Vec<Subject> = (1..=spec.n_r)
        .map(|i| make(format!("r{i}"), Source::Rct, &mut rng))
        .collect();
    let tau = ksum(odb.iter().map(|s| {
        let (t, c) = s.potential_outcomes.unwrap();
        t - c
    })) / spec.n_o as f64;
    Ok((Dataset::new(odb, names.clone())?, Dataset::new(rct, names)?, tau))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(seed: u64) -> ScenarioSpec {
        ScenarioSpec {
            n_o: 800,
            n_r: 100,
            n_cov_draws: 4,
            n_assign_draws: 3,
            seed,
            ..ScenarioSpec::default()
        }
    }

    #[test]
    fn named_gammas_match_their_norms_and_projections() {
        for g in NamedGamma::ALL {
            let v = g.vector();
            let n2: f64 = v.iter().map(|a| a * a).sum();
            let dot: f64 = v.iter().sum();
            assert!((n2 - g.norm2() as f64).abs() < 1e-12);
            let want = match g {
                NamedGamma::Correlated3 => 3.0,
                NamedGamma::Correlated6 => 3.0 * 2f64.sqrt(),
                _ => 0.0,
            };
            assert!((dot - want).abs() < 1e-12, "{g:?}");
        }
    }

    #[test]
    fn covariance_draws() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut counts = [0usize; 3];
        let draws = 10_000;
        for _ in 0..draws {
            let s = sample_covariance(5, SigmaMode::RandomSparse, None, &mut rng).unwrap();
            for i in 0..5 {
                assert_eq!(s[(i, i)], 1.0);
                for j in i + 1..5 {
                    assert_eq!(s[(i, j)], s[(j, i)]);
                    let v = s[(i, j)];
                    counts[if v == 0.0 {
                        0
                    } else if v > 0.0 {
                        1
                    } else {
                        2
                    }] += 1;
                }
            }
        }
        let total = (draws * 10) as f64;
        for (c, want) in counts.iter().zip([0.5, 0.25, 0.25]) {
            assert!((*c as f64 / total - want).abs() < 0.02);
        }
        assert_eq!(
            sample_covariance(5, SigmaMode::Identity, None, &mut rng).unwrap(),
            DMatrix::identity(5, 5)
        );
    }

    #[test]
    fn nearest_pd_repairs_an_indefinite_matrix() {
        let mut m = DMatrix::identity(3, 3);
        for (i, j, v) in [(0, 1, 0.9), (1, 2, 0.9), (0, 2, -0.9)] {
            m[(i, j)] = v;
            m[(j, i)] = v;
        }
        assert!(m.clone().cholesky().is_none());
        let fixed = nearest_pd(&m).unwrap();
        assert!(fixed.clone().cholesky().is_some());
        for i in 0..3 {
            assert!((fixed[(i, i)] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cohens_d_is_hit_exactly() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let yc: Vec<f64> = (0..500).map(|_| StandardNormal.sample(&mut rng)).collect();
        for pat in [
            vec![1.0; 500],
            (0..500).map(|i| (i % 20 + 1) as f64 / 20.0).collect::<Vec<_>>(),
            yc.iter().map(|y| sigmoid(*y)).collect(),
            yc.iter().map(|y| sigmoid(-*y)).collect(),
        ] {
            let t = cohens_d_scale(&yc, &pat, 0.5).unwrap();
            let yt: Vec<f64> = yc.iter().zip(&pat).map(|(y, p)| y + t * p).collect();
            assert!((cohens_d(&yt, &yc) - 0.5).abs() < 1e-9);
        }
        let t1 = cohens_d_scale(&yc, &[1.0; 500], 0.5).unwrap();
        let t2 = cohens_d_scale(&yc, &[2.0; 500], 0.5).unwrap();
        assert!((t1 - 2.0 * t2).abs() < 1e-12);
        assert_eq!(cohens_d_scale(&yc, &[1.0; 500], 0.0).unwrap(), 0.0);
        assert!(cohens_d_scale(&yc, &[0.0; 500], 0.5).is_err());
    }

    #[test]
    fn generated_scenario_is_consistent() {
        for shape in [
            EffectShape::Constant,
            EffectShape::QuadraticBin,
            EffectShape::LinearPropensity,
        ] {
            let spec = ScenarioSpec {
                effect_shape: shape,
                ..small(3)
            };
            let data = generate_scenario(&spec).unwrap();
            assert_eq!((data.n_odb(), data.n_rct()), (800, 100));
            let (mut yt, mut yc) = (Vec::new(), Vec::new());
            for s in data.subjects() {
                let (t, c) = s.potential_outcomes.unwrap();
                assert_eq!(s.outcome, if s.treated { t } else { c });
                if s.source == Source::Odb {
                    yt.push(t);
                    yc.push(c);
                }
            }
            assert!((cohens_d(&yt, &yc) - 0.5).abs() < 1e-9);
            if shape == EffectShape::Constant {
                let eff: Vec<f64> = yt.iter().zip(&yc).map(|(t, c)| t - c).collect();
                assert!(eff.iter().all(|e| (e - eff[0]).abs() < 1e-12));
            }
        }
    }

    #[test]
    fn restricted_enrollment_obeys_the_predicate() {
        let spec = ScenarioSpec {
            enrollment: Enrollment::Restricted,
            ..small(4)
        };
        let pop = generate_population(&spec, 0, 0).unwrap();
        assert!(pop.rct.iter().all(|u| u.x[0] < -1.0 && u.x[4] < -1.0));
        let impossible = ScenarioSpec {
            restriction: vec![Bound {
                covariate: 1,
                below: Some(-9.0),
                above: None,
            }],
            ..spec
        };
        assert!(generate_population(&impossible, 0, 0).is_err());
    }

    #[test]
    fn same_seed_same_table() {
        let grid = vec![
            small(5),
            ScenarioSpec {
                enrollment: Enrollment::Restricted,
                ..small(5)
            },
        ];
        let a = run_mse_experiment(&grid, &SIM_METHODS, true).unwrap();
        let b = run_mse_experiment(&grid, &SIM_METHODS, true).unwrap();
        assert_eq!(a, b);
        let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let c = one.install(|| run_mse_experiment(&grid, &SIM_METHODS, true)).unwrap();
        assert_eq!(a, c);
        for r in &a.rows {
            for s in &r.stats {
                assert!((s.mse - s.bias2 - s.variance).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn noiseless_randomized_case_shrinks_with_n() {
        let spec = |n_o| ScenarioSpec {
            n_o,
            n_r: n_o / 10,
            gamma: GammaSpec::Custom(vec![0.0; 5]),
            noise_sd: 0.0,
            n_cov_draws: 4,
            n_assign_draws: 5,
            ..small(6)
        };
        let small_n = run_mse_experiment(&[spec(500)], &SIM_METHODS, false).unwrap();
        let big_n = run_mse_experiment(&[spec(8000)], &SIM_METHODS, false).unwrap();
        for m in SIM_METHODS {
            let (a, b) = (small_n.rows[0].mse(m).unwrap(), big_n.rows[0].mse(m).unwrap());
            assert!(b < a / 4.0, "{m}: {a} -> {b}");
        }
    }

    #[test]
    fn binary_generator_is_confounded() {
        let (odb, rct, tau) = generate_binary_confounded(&BinarySpec::default()).unwrap();
        assert!(odb.subjects().iter().all(|s| s.outcome == 0.0 || s.outcome == 1.0));
        assert_eq!(rct.n_rct(), 2000);
        let diff = |d: &Dataset| {
            let (t, c): (Vec<&Subject>, Vec<&Subject>) = d.subjects().iter().partition(|s| s.treated);
            t.iter().map(|s| s.outcome).sum::<f64>() / t.len() as f64
                - c.iter().map(|s| s.outcome).sum::<f64>() / c.len() as f64
        };
        assert!(tau > 0.0);
        assert!((diff(&odb) - tau).abs() > 0.02, "naive {} vs truth {tau}", diff(&odb));
    }

    #[test]
    fn bootstrap_rmse_decomposes() {
        let spec = small(7);
        let data = generate_scenario(&spec).unwrap();
        let (odb, rct) = (data.partition(Source::Odb), data.partition(Source::Rct));
        let methods = [BootstrapMethod::NaiveOdb, BootstrapMethod::Spiked];
        let opts = BootstrapOptions::default();
        let rep = bootstrap_compare(&odb, &rct, 0.0, 1, None, &methods, &opts).unwrap();
        for r in &rep.rows {
            assert_eq!(r.variance, 0.0);
            assert!((r.rmse - r.bias.abs()).abs() < 1e-15);
        }
        let rep = bootstrap_compare(&odb, &rct, 0.0, 20, Some(50), &methods, &opts).unwrap();
        let spiked = rep.get(BootstrapMethod::Spiked).unwrap();
        let centred = bootstrap_compare(&odb, &rct, spiked.mean, 20, Some(50), &methods, &opts).unwrap();
        let c = centred.get(BootstrapMethod::Spiked).unwrap();
        assert!((c.rmse - c.variance.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn bootstrap_needs_scores() {
        let (odb, rct, _) = generate_binary_confounded(&BinarySpec {
            n_o: 50,
            n_r: 10,
            ..BinarySpec::default()
        })
        .unwrap();
        let err = bootstrap_compare(
            &odb,
            &rct,
            0.0,
            2,
            None,
            &BootstrapMethod::ALL,
            &BootstrapOptions::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::MissingPropensity(_)));
    }
}
