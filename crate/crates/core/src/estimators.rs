//! Stratum-level treatment-effect estimators and their aggregation to an
//! overall estimate `sum_k w_k * tau_k`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{Observation, RctDesign, Source};
use crate::error::{Error, Result};
use crate::moments::{
    delta_tau_moments, difference_in_means, estimate_moments, observation_moments, population_moments,
    rct_variance_estimate,
};
use crate::stats::{ksum, mean};
use crate::stratify::{merge_sparse_strata_by, sub_stratify_prognostic, ArmBasis, StratificationPlan};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Odb,
    Rct,
    Weighted,
    Spiked,
    Dynamic,
    DualSpiked,
    Oracle,
}

impl Method {
    pub const ALL: [Method; 7] = [
        Method::Odb,
        Method::Rct,
        Method::Weighted,
        Method::Spiked,
        Method::Dynamic,
        Method::DualSpiked,
        Method::Oracle,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Odb => "odb",
            Method::Rct => "rct",
            Method::Weighted => "weighted",
            Method::Spiked => "spiked",
            Method::Dynamic => "dynamic",
            Method::DualSpiked => "dual_spiked",
            Method::Oracle => "oracle",
        }
    }

    /// Which arm counts a stratum needs for this method to be defined there.
    pub fn arm_basis(self) -> ArmBasis {
        match self {
            Method::Odb => ArmBasis::Odb,
            Method::Rct => ArmBasis::Rct,
            Method::Spiked | Method::DualSpiked => ArmBasis::Pooled,
            Method::Weighted | Method::Dynamic | Method::Oracle => ArmBasis::EitherSource,
        }
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        Method::ALL
            .into_iter()
            .find(|m| m.name() == norm)
            .ok_or_else(|| Error::Validation(format!("unknown method {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fallback {
    #[default]
    None,
    OdbOnly,
    RctOnly,
    Undefined,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// ODB minus RCT treated-arm mean.
    pub delta_t: Option<f64>,
    /// ODB minus RCT control-arm mean.
    pub delta_c: Option<f64>,
    /// ODB share of the pooled treated arm.
    pub c_t: Option<f64>,
    /// ODB share of the pooled control arm.
    pub c_c: Option<f64>,
    /// Plug-in (or, for the oracle, true) bias, variance and MSE of the ODB
    /// estimate.
    pub odb_bias: Option<f64>,
    pub odb_variance: Option<f64>,
    pub odb_mse: Option<f64>,
    /// Plug-in (or true) variance of the RCT estimate.
    pub rct_variance: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumEstimate {
    /// Position of the stratum in its plan.
    pub k: usize,
    pub label: String,
    pub weight: f64,
    pub method: Method,
    pub tau_hat: Option<f64>,
    /// `lambda_k`, `c*_k` or its estimate: the weight on the ODB estimate.
    pub c_weight: Option<f64>,
    pub diagnostics: Option<Diagnostics>,
    pub fallback: Fallback,
}

/// The members of one stratum split by source.
#[derive(Debug, Clone)]
pub struct StratumView<'a> {
    pub k: usize,
    pub label: String,
    pub weight: f64,
    pub odb: Vec<&'a Observation>,
    pub rct: Vec<&'a Observation>,
}

impl<'a> StratumView<'a> {
    pub fn new(odb: Vec<&'a Observation>, rct: Vec<&'a Observation>) -> Self {
        Self {
            k: 0,
            label: String::new(),
            weight: 1.0,
            odb,
            rct,
        }
    }

    /// Every stratum of `plan`.
    pub fn all(plan: &StratificationPlan, obs: &'a [Observation]) -> Vec<Self> {
        (0..plan.len())
            .map(|s| {
                let (odb, rct) = plan.split(s, obs);
                Self {
                    k: s,
                    label: plan.strata[s].label.to_string(),
                    weight: plan.strata[s].weight,
                    odb,
                    rct,
                }
            })
            .collect()
    }

    fn result(&self, method: Method, tau_hat: Option<f64>) -> StratumEstimate {
        StratumEstimate {
            k: self.k,
            label: self.label.clone(),
            weight: self.weight,
            method,
            tau_hat,
            c_weight: None,
            diagnostics: None,
            fallback: if tau_hat.is_some() {
                Fallback::None
            } else {
                Fallback::Undefined
            },
        }
    }
}

fn arm_mean(obs: &[&Observation], treated: bool) -> Option<f64> {
    let ys: Vec<f64> = obs.iter().filter(|o| o.treated == treated).map(|o| o.outcome).collect();
    mean(&ys)
}

fn arm_count(obs: &[&Observation], treated: bool) -> usize {
    obs.iter().filter(|o| o.treated == treated).count()
}

pub fn tau_odb(s: &StratumView) -> StratumEstimate {
    s.result(Method::Odb, difference_in_means(s.odb.iter().copied()))
}

pub fn tau_rct(s: &StratumView, _design: RctDesign) -> StratumEstimate {
    s.result(Method::Rct, difference_in_means(s.rct.iter().copied()))
}

/// Difference of arm means over the pooled ODB and RCT members.
pub fn tau_spiked(s: &StratumView) -> StratumEstimate {
    let tau = difference_in_means(s.odb.iter().chain(&s.rct).copied());
    let mut est = s.result(Method::Spiked, tau);
    let share = |treated| {
        let (no, nr) = (arm_count(&s.odb, treated), arm_count(&s.rct, treated));
        (no + nr > 0).then(|| no as f64 / (no + nr) as f64)
    };
    let gap = |treated| Some(arm_mean(&s.odb, treated)? - arm_mean(&s.rct, treated)?);
    est.diagnostics = Some(Diagnostics {
        delta_t: gap(true),
        delta_c: gap(false),
        c_t: share(true),
        c_c: share(false),
        ..Diagnostics::default()
    });
    est
}

fn combine(
    s: &StratumView,
    method: Method,
    tau_o: Option<f64>,
    tau_r: Option<f64>,
    c: impl FnOnce() -> f64,
) -> StratumEstimate {
    let mut est = s.result(method, None);
    match (tau_o, tau_r) {
        (Some(o), Some(r)) => {
            let c = c().clamp(0.0, 1.0);
            est.tau_hat = Some(c * o + (1.0 - c) * r);
            est.c_weight = Some(c);
        }
        (Some(o), None) => {
            est.tau_hat = Some(o);
            est.c_weight = Some(1.0);
            est.fallback = Fallback::OdbOnly;
        }
        (None, Some(r)) => {
            est.tau_hat = Some(r);
            est.c_weight = Some(0.0);
            est.fallback = Fallback::RctOnly;
        }
        (None, None) => {}
    }
    est
}

/// Sample-size weighted combination with `lambda_k = n_ok / (n_ok + n_rk)`.
pub fn tau_weighted(s: &StratumView) -> StratumEstimate {
    let tau_o = difference_in_means(s.odb.iter().copied());
    let tau_r = difference_in_means(s.rct.iter().copied());
    let (no, nr) = (s.odb.len() as f64, s.rct.len() as f64);
    combine(s, Method::Weighted, tau_o, tau_r, || no / (no + nr))
}

/// MSE-optimal weight on a biased estimator with MSE `mse_biased` when
/// combined with an unbiased one of variance `var_unbiased`.
pub fn optimal_weight(mse_biased: f64, var_unbiased: f64) -> Result<f64> {
    if !(mse_biased >= 0.0 && var_unbiased >= 0.0) {
        return Err(Error::Validation(format!(
            "optimal weight needs nonnegative inputs, got {mse_biased} and {var_unbiased}"
        )));
    }
    let total = mse_biased + var_unbiased;
    if total == 0.0 {
        return Err(Error::Degenerate(
            "optimal weight is undefined when both inputs are 0".into(),
        ));
    }
    Ok(var_unbiased / total)
}

/// MSE of the optimal combination.
pub fn optimal_mse(mse_biased: f64, var_unbiased: f64) -> f64 {
    mse_biased * var_unbiased / (mse_biased + var_unbiased)
}

/// Weight used when both error estimates are exactly 0 and either source is
/// as good as the other.
const EVEN_SPLIT: f64 = 0.5;

fn weight_or_even(mse_biased: f64, var_unbiased: f64) -> f64 {
    optimal_weight(mse_biased, var_unbiased).unwrap_or(EVEN_SPLIT)
}

/// Convex combination with the weight estimated from delta-method plug-ins.
/// Without RCT variance plug-ins (fewer than two per arm) all weight goes to
/// the ODB; without ODB plug-ins, all to the RCT.
pub fn tau_dynamic(s: &StratumView, design: RctDesign) -> StratumEstimate {
    let odb = estimate_moments(&s.odb).ok();
    let var_r = rct_variance_estimate(&s.rct, design).ok();
    let tau_o = odb.and(difference_in_means(s.odb.iter().copied()));
    let tau_r = difference_in_means(s.rct.iter().copied());
    // Without an RCT variance the ODB estimate takes all the weight.
    let tau_r = if odb.is_some() && var_r.is_none() { None } else { tau_r };
    let mut est = combine(s, Method::Dynamic, tau_o, tau_r, || match (odb, var_r) {
        (Some(m), Some(v)) => weight_or_even(m.mse, v),
        _ => unreachable!("both sources present"),
    });
    est.diagnostics = Some(Diagnostics {
        odb_bias: odb.map(|m| m.bias),
        odb_variance: odb.map(|m| m.variance),
        odb_mse: odb.map(|m| m.mse),
        rct_variance: var_r,
        ..Diagnostics::default()
    });
    est
}

/// True per-stratum MSE of the ODB estimate and variance of the RCT estimate,
/// from the delta-method population moments of the members' potential
/// outcomes. `None` marks a source with no members.
pub fn oracle_inputs(s: &StratumView, design: RctDesign) -> Result<(Option<f64>, Option<f64>)> {
    let mse_o = if s.odb.is_empty() {
        None
    } else {
        Some(delta_tau_moments(&observation_moments(&s.odb)?)?.mse)
    };
    let var_r = if s.rct.is_empty() {
        None
    } else {
        let units = s
            .rct
            .iter()
            .map(|o| {
                o.potential
                    .map(|(yt, yc)| (yt, yc, design.p_r()))
                    .ok_or_else(|| Error::MissingPotentialOutcomes("RCT member lacks potential outcomes".into()))
            })
            .collect::<Result<Vec<_>>>()?;
        Some(delta_tau_moments(&population_moments(&units)?)?.variance)
    };
    Ok((mse_o, var_r))
}

/// Convex combination with the weight computed from the true MSE of the ODB
/// estimate and true variance of the RCT estimate.
pub fn tau_oracle(
    s: &StratumView,
    _design: RctDesign,
    true_mse_odb: f64,
    true_var_rct: f64,
) -> Result<StratumEstimate> {
    if s.odb.iter().chain(&s.rct).any(|o| o.potential.is_none()) {
        return Err(Error::MissingPotentialOutcomes(
            "the oracle estimator needs simulated potential outcomes".into(),
        ));
    }
    let tau_o = difference_in_means(s.odb.iter().copied());
    let tau_r = difference_in_means(s.rct.iter().copied());
    let mut est = combine(s, Method::Oracle, tau_o, tau_r, || {
        weight_or_even(true_mse_odb, true_var_rct)
    });
    est.diagnostics = Some(Diagnostics {
        odb_mse: Some(true_mse_odb),
        rct_variance: Some(true_var_rct),
        ..Diagnostics::default()
    });
    Ok(est)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodEstimate {
    pub method: Method,
    pub tau_hat: f64,
    pub strata: Vec<StratumEstimate>,
    /// Number of merges applied to the shared plan for this method.
    pub merges: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub methods: Vec<MethodEstimate>,
    /// Labels of the shared plan's strata before any per-method merging.
    pub plan_strata: Vec<String>,
    pub config: serde_json::Value,
    pub seed: Option<u64>,
}

impl EstimateReport {
    pub fn get(&self, method: Method) -> Option<&MethodEstimate> {
        self.methods.iter().find(|m| m.method == method)
    }

    pub fn tau(&self, method: Method) -> Option<f64> {
        self.get(method).map(|m| m.tau_hat)
    }

    /// One row per method and stratum.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record([
            "method", "tau_hat", "stratum", "weight", "tau_k", "c_weight", "fallback",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for m in &self.methods {
            for s in &m.strata {
                wtr.write_record([
                    m.method.name().to_string(),
                    m.tau_hat.to_string(),
                    s.label.clone(),
                    s.weight.to_string(),
                    opt(s.tau_hat),
                    opt(s.c_weight),
                    serde_json::to_value(s.fallback)?
                        .as_str()
                        .unwrap_or_default()
                        .to_string(),
                ])?;
            }
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// `sum_k w_k * tau_k` over the given strata. A stratum with positive weight
/// and no estimate is an error.
pub fn aggregate(method: Method, per_stratum: Vec<StratumEstimate>) -> Result<MethodEstimate> {
    aggregate_with(method, per_stratum, UndefinedStrata::Error)
}

/// As [`aggregate`], except that under [`UndefinedStrata::Zero`] a stratum
/// without an estimate contributes 0.
pub fn aggregate_with(
    method: Method,
    per_stratum: Vec<StratumEstimate>,
    policy: UndefinedStrata,
) -> Result<MethodEstimate> {
    let mut terms = Vec::with_capacity(per_stratum.len());
    for s in &per_stratum {
        match s.tau_hat {
            Some(t) => terms.push(s.weight * t),
            None if s.weight > 0.0 && policy != UndefinedStrata::Zero => {
                return Err(Error::UndefinedStratum {
                    stratum: s.label.clone(),
                    method: method.name().to_string(),
                })
            }
            None => {}
        }
    }
    Ok(MethodEstimate {
        method,
        tau_hat: ksum(terms),
        strata: per_stratum,
        merges: 0,
    })
}

/// What to do with a stratum where a method has no estimate.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UndefinedStrata {
    /// Merge it into a neighbour, judged by the method's own arm counts.
    #[default]
    Merge,
    /// Count it as a zero effect, keeping its weight.
    Zero,
    /// Fail with [`Error::UndefinedStratum`].
    Error,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateOptions {
    pub design: RctDesign,
    pub undefined: UndefinedStrata,
    pub min_arm: usize,
    /// Prognostic sub-bins per propensity stratum for the dual-spiked method.
    pub prognostic_bins: usize,
}

impl Default for EstimateOptions {
    fn default() -> Self {
        Self {
            design: RctDesign::default(),
            undefined: UndefinedStrata::Merge,
            min_arm: 1,
            prognostic_bins: 3,
        }
    }
}

/// One method over a plan, without merging.
pub fn estimate_on_plan(
    method: Method,
    plan: &StratificationPlan,
    obs: &[Observation],
    design: RctDesign,
) -> Result<MethodEstimate> {
    estimate_on_plan_with(method, plan, obs, design, UndefinedStrata::Error)
}

fn estimate_on_plan_with(
    method: Method,
    plan: &StratificationPlan,
    obs: &[Observation],
    design: RctDesign,
    policy: UndefinedStrata,
) -> Result<MethodEstimate> {
    let views = StratumView::all(plan, obs);
    let per = views
        .iter()
        .map(|s| {
            Ok(match method {
                Method::Odb => tau_odb(s),
                Method::Rct => tau_rct(s, design),
                Method::Weighted => tau_weighted(s),
                Method::Spiked => tau_spiked(s),
                Method::DualSpiked => StratumEstimate {
                    method: Method::DualSpiked,
                    ..tau_spiked(s)
                },
                Method::Dynamic => tau_dynamic(s, design),
                Method::Oracle => {
                    let (mse, var) = oracle_inputs(s, design)?;
                    tau_oracle(s, design, mse.unwrap_or(f64::INFINITY), var.unwrap_or(f64::INFINITY)).map(|mut e| {
                        // Infinite placeholders only arise for an absent
                        // source, which `combine` already excludes.
                        if let Some(d) = e.diagnostics.as_mut() {
                            d.odb_mse = mse;
                            d.rct_variance = var;
                        }
                        e
                    })?
                }
            })
        })
        .collect::<Result<Vec<_>>>()?;
    aggregate_with(method, per, policy)
}

/// Every requested method over `plan`. Under [`UndefinedStrata::Merge`] each
/// method merges the plan by its own arm requirement; the dual-spiked method
/// first splits each stratum by prognostic score.
pub fn estimate(
    plan: &StratificationPlan,
    obs: &[Observation],
    methods: &[Method],
    opts: &EstimateOptions,
) -> Result<EstimateReport> {
    let mut out = Vec::with_capacity(methods.len());
    for &method in methods {
        let base = if method == Method::DualSpiked {
            sub_stratify_prognostic(plan, obs, opts.prognostic_bins)?
        } else {
            plan.clone()
        };
        let used = if opts.undefined == UndefinedStrata::Merge {
            merge_sparse_strata_by(&base, obs, opts.min_arm, method.arm_basis())?
        } else {
            base
        };
        let mut est = estimate_on_plan_with(method, &used, obs, opts.design, opts.undefined)?;
        est.merges = used.merged_from.len() - plan.merged_from.len();
        out.push(est);
    }
    Ok(EstimateReport {
        methods: out,
        plan_strata: plan.strata.iter().map(|s| s.label.to_string()).collect(),
        config: serde_json::to_value(opts)?,
        seed: None,
    })
}

/// Unstratified difference of ODB arm means.
pub fn naive_odb(obs: &[Observation]) -> Option<f64> {
    difference_in_means(obs.iter().filter(|o| o.source == Source::Odb))
}
