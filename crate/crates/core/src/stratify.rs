//! Propensity strata, prognostic sub-strata and covariate balance.
//!
//! Stratum `k` of `K` holds every subject, ODB or RCT, whose ODB propensity
//! falls in `((k-1)/K, k/K]`; a score of exactly 0 goes to stratum 1. The
//! weights are `n_ok / n_o`, so the target population is the ODB.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::data::{Dataset, Observation, Source};
use crate::error::{Error, Result};
use crate::stats::{ksum, mean, sample_variance};

/// One propensity bin, optionally refined by a prognostic sub-bin. Both are
/// 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BinRef {
    pub bin: usize,
    pub sub: Option<usize>,
}

impl fmt::Display for BinRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.sub {
            Some(l) => write!(f, "{}.{}", self.bin, l),
            None => write!(f, "{}", self.bin),
        }
    }
}

/// The contiguous run of bins a stratum covers. Unmerged strata have
/// `first == last`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct StratumLabel {
    pub first: BinRef,
    pub last: BinRef,
}

impl StratumLabel {
    pub fn single(bin: usize) -> Self {
        let b = BinRef { bin, sub: None };
        Self { first: b, last: b }
    }

    fn span(a: &StratumLabel, b: &StratumLabel) -> Self {
        Self {
            first: a.first,
            last: b.last,
        }
    }
}

impl fmt::Display for StratumLabel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.first == self.last {
            write!(f, "{}", self.first)
        } else {
            write!(f, "{}-{}", self.first, self.last)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Stratum {
    pub label: StratumLabel,
    /// Indices into the observation slice the plan was built on.
    pub members: Vec<usize>,
    pub n_odb: usize,
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MergeRecord {
    pub sparse: StratumLabel,
    pub neighbor: StratumLabel,
    pub result: StratumLabel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratificationPlan {
    pub propensity_edges: Vec<f64>,
    /// Interior prognostic quantile edges, one list per propensity stratum,
    /// present after [`sub_stratify_prognostic`].
    pub prognostic_edges: Option<Vec<Vec<f64>>>,
    pub strata: Vec<Stratum>,
    assignment: Vec<usize>,
    pub merged_from: Vec<MergeRecord>,
}

/// Which arm counts decide whether a stratum is too sparse to keep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArmBasis {
    /// ODB and RCT arms counted together, as the spiked-in estimator sees them.
    #[default]
    Pooled,
    Odb,
    Rct,
    /// Either source alone has both arms.
    EitherSource,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArmCounts {
    pub odb_treated: usize,
    pub odb_control: usize,
    pub rct_treated: usize,
    pub rct_control: usize,
}

impl ArmCounts {
    pub fn of(obs: &[Observation], members: &[usize]) -> Self {
        let mut c = Self::default();
        for &i in members {
            let o = &obs[i];
            match (o.source, o.treated) {
                (Source::Odb, true) => c.odb_treated += 1,
                (Source::Odb, false) => c.odb_control += 1,
                (Source::Rct, true) => c.rct_treated += 1,
                (Source::Rct, false) => c.rct_control += 1,
            }
        }
        c
    }

    pub fn satisfies(&self, basis: ArmBasis, min_arm: usize) -> bool {
        let odb = self.odb_treated >= min_arm && self.odb_control >= min_arm;
        let rct = self.rct_treated >= min_arm && self.rct_control >= min_arm;
        match basis {
            ArmBasis::Pooled => {
                self.odb_treated + self.rct_treated >= min_arm && self.odb_control + self.rct_control >= min_arm
            }
            ArmBasis::Odb => odb,
            ArmBasis::Rct => rct,
            ArmBasis::EitherSource => odb || rct,
        }
    }
}

/// Stratum index (1-based) of a propensity score under `K` equal-width bins.
pub fn propensity_bin(e: f64, k: usize) -> usize {
    let kf = k as f64;
    let mut b = ((e * kf).ceil() as usize).clamp(1, k);
    while b > 1 && e <= (b - 1) as f64 / kf {
        b -= 1;
    }
    while b < k && e > b as f64 / kf {
        b += 1;
    }
    b
}

impl StratificationPlan {
    /// Equal-width propensity strata over `obs`.
    pub fn equal_width(obs: &[Observation], k: usize) -> Result<Self> {
        if k == 0 {
            return Err(Error::Validation("number of strata must be at least 1".into()));
        }
        let edges = (0..=k).map(|j| j as f64 / k as f64).collect();
        let mut strata: Vec<Stratum> = (1..=k)
            .map(|b| Stratum {
                label: StratumLabel::single(b),
                members: Vec::new(),
                n_odb: 0,
                weight: 0.0,
            })
            .collect();
        for (i, o) in obs.iter().enumerate() {
            if !(0.0..=1.0).contains(&o.propensity) {
                return Err(Error::Validation(format!(
                    "observation {i} has propensity {} outside [0, 1]",
                    o.propensity
                )));
            }
            strata[propensity_bin(o.propensity, k) - 1].members.push(i);
        }
        Ok(Self::assemble(edges, None, strata, obs, Vec::new()))
    }

    fn assemble(
        propensity_edges: Vec<f64>,
        prognostic_edges: Option<Vec<Vec<f64>>>,
        mut strata: Vec<Stratum>,
        obs: &[Observation],
        merged_from: Vec<MergeRecord>,
    ) -> Self {
        let n_o = obs.iter().filter(|o| o.source == Source::Odb).count();
        let mut assignment = vec![usize::MAX; obs.len()];
        for (s, stratum) in strata.iter_mut().enumerate() {
            stratum.n_odb = stratum
                .members
                .iter()
                .filter(|&&i| obs[i].source == Source::Odb)
                .count();
            stratum.weight = if n_o > 0 {
                stratum.n_odb as f64 / n_o as f64
            } else {
                0.0
            };
            for &i in &stratum.members {
                assignment[i] = s;
            }
        }
        Self {
            propensity_edges,
            prognostic_edges,
            strata,
            assignment,
            merged_from,
        }
    }

    pub fn len(&self) -> usize {
        self.strata.len()
    }

    pub fn is_empty(&self) -> bool {
        self.strata.is_empty()
    }

    /// Position in [`Self::strata`] of observation `i`.
    pub fn stratum_of(&self, i: usize) -> Option<usize> {
        self.assignment.get(i).copied().filter(|&s| s != usize::MAX)
    }

    pub fn weights(&self) -> Vec<f64> {
        self.strata.iter().map(|s| s.weight).collect()
    }

    pub fn arm_counts(&self, obs: &[Observation]) -> Vec<ArmCounts> {
        self.strata.iter().map(|s| ArmCounts::of(obs, &s.members)).collect()
    }

    /// Split the members of stratum `s` by source.
    pub fn split<'a>(&self, s: usize, obs: &'a [Observation]) -> (Vec<&'a Observation>, Vec<&'a Observation>) {
        self.strata[s]
            .members
            .iter()
            .map(|&i| &obs[i])
            .partition(|o| o.source == Source::Odb)
    }
}

/// Equal-width strata over a scored dataset.
pub fn make_equal_width_strata(data: &Dataset, k: usize) -> Result<StratificationPlan> {
    StratificationPlan::equal_width(&data.observations()?, k)
}

/// Merge strata whose pooled treated or control count is below `min_arm`.
pub fn merge_sparse_strata(
    plan: &StratificationPlan,
    obs: &[Observation],
    min_arm: usize,
) -> Result<StratificationPlan> {
    merge_sparse_strata_by(plan, obs, min_arm, ArmBasis::Pooled)
}

/// Merge sparse strata into their nearest nonempty neighbour until every
/// stratum meets `min_arm` under `basis`. The lowest-index sparse stratum is
/// handled first and ties go to the lower neighbour.
pub fn merge_sparse_strata_by(
    plan: &StratificationPlan,
    obs: &[Observation],
    min_arm: usize,
    basis: ArmBasis,
) -> Result<StratificationPlan> {
    if plan.strata.iter().all(|s| s.members.is_empty()) {
        return Err(Error::Degenerate("all strata are empty".into()));
    }
    let mut strata = plan.strata.clone();
    let mut merges = plan.merged_from.clone();

    loop {
        let sparse = strata
            .iter()
            .position(|s| !ArmCounts::of(obs, &s.members).satisfies(basis, min_arm));
        let Some(s) = sparse else { break };
        if strata.len() == 1 {
            return Err(Error::Degenerate(format!(
                "no arrangement of strata gives every stratum {min_arm} treated and {min_arm} control ({basis:?} counts)"
            )));
        }
        let left = (0..s).rev().find(|&j| !strata[j].members.is_empty());
        let right = (s + 1..strata.len()).find(|&j| !strata[j].members.is_empty());
        let target = match (left, right) {
            (Some(l), Some(r)) => {
                if s - l <= r - s {
                    l
                } else {
                    r
                }
            }
            (Some(l), None) => l,
            (None, Some(r)) => r,
            // Every other stratum is empty: fold into an adjacent one.
            (None, None) => {
                if s > 0 {
                    s - 1
                } else {
                    s + 1
                }
            }
        };
        let (lo, hi) = (s.min(target), s.max(target));
        let mut members: Vec<usize> = strata[lo..=hi]
            .iter()
            .flat_map(|st| st.members.iter().copied())
            .collect();
        members.sort_unstable();
        let label = StratumLabel::span(&strata[lo].label, &strata[hi].label);
        merges.push(MergeRecord {
            sparse: strata[s].label,
            neighbor: strata[target].label,
            result: label,
        });
        strata.splice(
            lo..=hi,
            [Stratum {
                label,
                members,
                n_odb: 0,
                weight: 0.0,
            }],
        );
    }

    if merges.len() == plan.merged_from.len() {
        return Ok(plan.clone());
    }
    Ok(StratificationPlan::assemble(
        plan.propensity_edges.clone(),
        plan.prognostic_edges.clone(),
        strata,
        obs,
        merges,
    ))
}

/// Split each propensity stratum into up to `l` equal-depth bins of the
/// prognostic score. Quantiles come from the stratum's ODB members; tied
/// quantiles collapse, so a stratum may end up with fewer than `l` bins.
pub fn sub_stratify_prognostic(plan: &StratificationPlan, obs: &[Observation], l: usize) -> Result<StratificationPlan> {
    if l == 0 {
        return Err(Error::Validation("number of prognostic bins must be at least 1".into()));
    }
    if let Some(i) = obs.iter().position(|o| o.prognostic.is_none()) {
        return Err(Error::Validation(format!("observation {i} has no prognostic score")));
    }
    let score = |i: usize| obs[i].prognostic.unwrap_or(f64::NAN);

    let mut strata = Vec::new();
    let mut all_edges = Vec::with_capacity(plan.strata.len());
    for stratum in &plan.strata {
        let mut odb: Vec<f64> = stratum
            .members
            .iter()
            .filter(|&&i| obs[i].source == Source::Odb)
            .map(|&i| score(i))
            .collect();
        odb.sort_by(f64::total_cmp);
        let edges = equal_depth_edges(&odb, l);

        let mut subs: Vec<Vec<usize>> = vec![Vec::new(); edges.len() + 1];
        for &i in &stratum.members {
            let s = score(i);
            subs[edges.iter().filter(|&&e| s > e).count()].push(i);
        }
        for (j, members) in subs.into_iter().enumerate() {
            let sub = Some(j + 1);
            strata.push(Stratum {
                label: StratumLabel {
                    first: BinRef {
                        bin: stratum.label.first.bin,
                        sub,
                    },
                    last: BinRef {
                        bin: stratum.label.last.bin,
                        sub,
                    },
                },
                members,
                n_odb: 0,
                weight: 0.0,
            });
        }
        all_edges.push(edges);
    }
    Ok(StratificationPlan::assemble(
        plan.propensity_edges.clone(),
        Some(all_edges),
        strata,
        obs,
        plan.merged_from.clone(),
    ))
}

/// Interior cut points splitting sorted `values` into `l` groups of near-equal
/// size. Group `j` is `(edge[j-1], edge[j]]`.
pub fn equal_depth_edges(sorted: &[f64], l: usize) -> Vec<f64> {
    let m = sorted.len();
    if m == 0 {
        return Vec::new();
    }
    let max = sorted[m - 1];
    let mut edges: Vec<f64> = (1..l)
        .map(|j| j * m / l)
        .filter(|&idx| idx > 0)
        .map(|idx| sorted[idx - 1])
        .filter(|&e| e < max)
        .collect();
    edges.dedup();
    edges
}

/// Dataset-level wrapper naming the subject that lacks a prognostic score.
pub fn sub_stratify_dataset(plan: &StratificationPlan, data: &Dataset, l: usize) -> Result<StratificationPlan> {
    if let Some(s) = data.subjects().iter().find(|s| s.prognostic.is_none()) {
        return Err(Error::MissingPrognostic(s.id.clone()));
    }
    sub_stratify_prognostic(plan, &data.observations()?, l)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContinuousBalance {
    pub covariate: String,
    pub treated_mean: f64,
    pub control_mean: f64,
    pub sd_unweighted: f64,
    pub treated_mean_stratified: Option<f64>,
    pub control_mean_stratified: Option<f64>,
    pub sd_stratified: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategoricalBalance {
    pub covariate: String,
    pub levels: Vec<f64>,
    pub treated: Vec<f64>,
    pub control: Vec<f64>,
    pub sd_unweighted: f64,
    pub treated_stratified: Option<Vec<f64>>,
    pub control_stratified: Option<Vec<f64>>,
    pub sd_stratified: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StratumSizes {
    pub stratum: String,
    pub weight: f64,
    pub n_odb: usize,
    pub n_rct: usize,
    #[serde(flatten)]
    pub arms: ArmCounts,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BalanceReport {
    pub continuous: Vec<ContinuousBalance>,
    pub categorical: Vec<CategoricalBalance>,
    pub strata: Vec<StratumSizes>,
}

impl BalanceReport {
    /// Flat CSV: one row per continuous covariate and one per categorical
    /// covariate, followed by nothing else. Stratum sizes go in the JSON form.
    pub fn to_csv(&self) -> Result<String> {
        let mut wtr = csv::Writer::from_writer(Vec::new());
        wtr.write_record([
            "covariate",
            "kind",
            "treated_mean",
            "control_mean",
            "sd_unweighted",
            "treated_mean_stratified",
            "control_mean_stratified",
            "sd_stratified",
        ])?;
        let opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
        for c in &self.continuous {
            wtr.write_record([
                c.covariate.clone(),
                "continuous".into(),
                c.treated_mean.to_string(),
                c.control_mean.to_string(),
                c.sd_unweighted.to_string(),
                opt(c.treated_mean_stratified),
                opt(c.control_mean_stratified),
                opt(c.sd_stratified),
            ])?;
        }
        for c in &self.categorical {
            wtr.write_record([
                c.covariate.clone(),
                "categorical".into(),
                String::new(),
                String::new(),
                c.sd_unweighted.to_string(),
                String::new(),
                String::new(),
                opt(c.sd_stratified),
            ])?;
        }
        let bytes = wtr.into_inner().map_err(|e| Error::Csv(e.into_error().into()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// Standardized differences between ODB treated and control subjects, before
/// and (when a plan is given) after stratum reweighting. The pooled
/// unweighted variance is the denominator in both.
///
/// Strata lacking an ODB arm are left out of the reweighted means and the
/// remaining weights renormalized.
pub fn balance_report(
    data: &Dataset,
    plan: Option<&StratificationPlan>,
    covariates: &[&str],
    categorical: &[&str],
) -> Result<BalanceReport> {
    let index = |name: &str| {
        data.covariate_index(name)
            .ok_or_else(|| Error::Validation(format!("unknown covariate {name:?}")))
    };
    let subjects = data.subjects();
    let odb: Vec<usize> = (0..subjects.len())
        .filter(|&i| subjects[i].source == Source::Odb)
        .collect();
    let treated: Vec<usize> = odb.iter().copied().filter(|&i| subjects[i].treated).collect();
    let control: Vec<usize> = odb.iter().copied().filter(|&i| !subjects[i].treated).collect();
    if treated.len() < 2 || control.len() < 2 {
        return Err(Error::Degenerate(
            "balance needs at least two treated and two control ODB subjects".into(),
        ));
    }

    // ODB (treated, control) members of each stratum with both arms, and n_ok.
    type ArmMembers = (Vec<usize>, Vec<usize>, f64);
    let strata: Option<Vec<ArmMembers>> = plan.map(|p| {
        p.strata
            .iter()
            .filter_map(|s| {
                let (t, c): (Vec<usize>, Vec<usize>) = s
                    .members
                    .iter()
                    .copied()
                    .filter(|&i| subjects[i].source == Source::Odb)
                    .partition(|&i| subjects[i].treated);
                (!t.is_empty() && !c.is_empty()).then_some((t, c, s.n_odb as f64))
            })
            .collect()
    });

    let mut continuous = Vec::with_capacity(covariates.len());
    for &name in covariates {
        let j = index(name)?;
        let col = |ids: &[usize]| ids.iter().map(|&i| subjects[i].covariates[j]).collect::<Vec<_>>();
        let (xt, xc) = (col(&treated), col(&control));
        let (mt, mc) = (mean(&xt).unwrap(), mean(&xc).unwrap());
        let pooled = ((sample_variance(&xt).unwrap() + sample_variance(&xc).unwrap()) / 2.0).sqrt();
        let std_diff = |diff: f64| -> Result<f64> {
            if pooled > 0.0 {
                Ok(diff / pooled)
            } else if diff == 0.0 {
                Ok(0.0)
            } else {
                Err(Error::Degenerate(format!(
                    "covariate {name:?} has zero pooled variance but unequal means"
                )))
            }
        };
        let sd_unweighted = std_diff(mt - mc)?;
        let (mut tt, mut tc, mut sd_stratified) = (None, None, None);
        if let Some(strata) = &strata {
            let total = ksum(strata.iter().map(|s| s.2));
            if total > 0.0 {
                let wmean = |pick: fn(&ArmMembers) -> &Vec<usize>| {
                    ksum(strata.iter().map(|s| s.2 * mean(&col(pick(s))).unwrap())) / total
                };
                let (a, b) = (wmean(|s| &s.0), wmean(|s| &s.1));
                tt = Some(a);
                tc = Some(b);
                sd_stratified = Some(std_diff(a - b)?);
            }
        }
        continuous.push(ContinuousBalance {
            covariate: name.to_string(),
            treated_mean: mt,
            control_mean: mc,
            sd_unweighted,
            treated_mean_stratified: tt,
            control_mean_stratified: tc,
            sd_stratified,
        });
    }

    let mut cats = Vec::with_capacity(categorical.len());
    for &name in categorical {
        let j = index(name)?;
        let mut levels: Vec<f64> = odb.iter().map(|&i| subjects[i].covariates[j]).collect();
        levels.sort_by(f64::total_cmp);
        levels.dedup();
        let props = |ids: &[usize]| -> Vec<f64> {
            let n = ids.len() as f64;
            levels
                .iter()
                .map(|&lv| ids.iter().filter(|&&i| subjects[i].covariates[j] == lv).count() as f64 / n)
                .collect()
        };
        let (pt, pc) = (props(&treated), props(&control));
        let sd_unweighted = categorical_sd(&pt, &pc, &pt, &pc)?;
        let (mut st, mut sc, mut sd_stratified) = (None, None, None);
        if let Some(strata) = &strata {
            let total = ksum(strata.iter().map(|s| s.2));
            if total > 0.0 {
                let wprops = |pick: fn(&ArmMembers) -> &Vec<usize>| -> Vec<f64> {
                    let per: Vec<(f64, Vec<f64>)> = strata.iter().map(|s| (s.2, props(pick(s)))).collect();
                    (0..levels.len())
                        .map(|lv| ksum(per.iter().map(|(w, p)| w * p[lv])) / total)
                        .collect()
                };
                let (a, b) = (wprops(|s| &s.0), wprops(|s| &s.1));
                sd_stratified = Some(categorical_sd(&a, &b, &pt, &pc)?);
                st = Some(a);
                sc = Some(b);
            }
        }
        cats.push(CategoricalBalance {
            covariate: name.to_string(),
            levels,
            treated: pt,
            control: pc,
            sd_unweighted,
            treated_stratified: st,
            control_stratified: sc,
            sd_stratified,
        });
    }

    let obs_sizes = match plan {
        Some(p) => p
            .strata
            .iter()
            .map(|s| {
                let mut arms = ArmCounts::default();
                for &i in &s.members {
                    let sub = &subjects[i];
                    match (sub.source, sub.treated) {
                        (Source::Odb, true) => arms.odb_treated += 1,
                        (Source::Odb, false) => arms.odb_control += 1,
                        (Source::Rct, true) => arms.rct_treated += 1,
                        (Source::Rct, false) => arms.rct_control += 1,
                    }
                }
                StratumSizes {
                    stratum: s.label.to_string(),
                    weight: s.weight,
                    n_odb: s.n_odb,
                    n_rct: s.members.len() - s.n_odb,
                    arms,
                }
            })
            .collect(),
        None => Vec::new(),
    };

    Ok(BalanceReport {
        continuous,
        categorical: cats,
        strata: obs_sizes,
    })
}

/// Multivariate standardized difference of two level-proportion vectors,
/// `sqrt(d' S^-1 d)` over all but the last level, where `S` is the average of
/// the two multinomial covariance matrices built from `ref_t` and `ref_c`.
pub fn categorical_sd(pt: &[f64], pc: &[f64], ref_t: &[f64], ref_c: &[f64]) -> Result<f64> {
    // Levels absent from both reference groups carry no information.
    let keep: Vec<usize> = (0..pt.len()).filter(|&i| ref_t[i] + ref_c[i] > 0.0).collect();
    if keep.len() < 2 {
        return Ok(0.0);
    }
    let keep = &keep[..keep.len() - 1];
    let m = keep.len();
    let d = DVector::from_iterator(m, keep.iter().map(|&i| pt[i] - pc[i]));
    let s = DMatrix::from_fn(m, m, |a, b| {
        let (i, j) = (keep[a], keep[b]);
        let cov = |p: &[f64]| if i == j { p[i] * (1.0 - p[i]) } else { -p[i] * p[j] };
        (cov(ref_t) + cov(ref_c)) / 2.0
    });
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::Degenerate("categorical level covariance is singular".into()))?;
    let q = d.dot(&chol.solve(&d));
    Ok(q.max(0.0).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ob(source: Source, treated: bool, propensity: f64) -> Observation {
        Observation {
            source,
            treated,
            outcome: 0.0,
            propensity,
            prognostic: None,
            potential: None,
        }
    }

    #[test]
    fn bins_are_left_open_right_closed() {
        assert_eq!(propensity_bin(0.07, 20), 2);
        assert_eq!(propensity_bin(0.05, 20), 1);
        assert_eq!(propensity_bin(0.0500001, 20), 2);
        assert_eq!(propensity_bin(0.0, 20), 1);
        assert_eq!(propensity_bin(1.0, 20), 20);
        for k in 1..=40 {
            for j in 1..=k {
                assert_eq!(propensity_bin(j as f64 / k as f64, k), j);
            }
        }
    }

    #[test]
    fn one_stratum_gets_all_weight() {
        let obs: Vec<_> = (0..5).map(|i| ob(Source::Odb, i % 2 == 0, 0.5)).collect();
        let plan = StratificationPlan::equal_width(&obs, 1).unwrap();
        assert_eq!(plan.len(), 1);
        assert_eq!(plan.strata[0].weight, 1.0);
    }

    #[test]
    fn rct_members_do_not_change_weights() {
        let obs = vec![
            ob(Source::Odb, true, 0.2),
            ob(Source::Odb, false, 0.7),
            ob(Source::Odb, false, 0.8),
            ob(Source::Rct, true, 0.1),
            ob(Source::Rct, false, 0.3),
        ];
        let plan = StratificationPlan::equal_width(&obs, 2).unwrap();
        assert_eq!(plan.strata[0].members, vec![0, 3, 4]);
        assert!((plan.strata[0].weight - 1.0 / 3.0).abs() < 1e-15);
        assert!((plan.strata[1].weight - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(plan.stratum_of(4), Some(0));
    }

    #[test]
    fn forced_merge_into_next_stratum() {
        // Stratum 1 has no treated subject at all.
        let obs = vec![
            ob(Source::Odb, false, 0.1),
            ob(Source::Odb, false, 0.2),
            ob(Source::Odb, true, 0.6),
            ob(Source::Odb, false, 0.7),
        ];
        let plan = StratificationPlan::equal_width(&obs, 2).unwrap();
        let merged = merge_sparse_strata(&plan, &obs, 1).unwrap();
        assert_eq!(merged.len(), 1);
        assert_eq!(merged.strata[0].label.to_string(), "1-2");
        assert_eq!(merged.merged_from.len(), 1);
        assert_eq!(merged.strata[0].weight, 1.0);
    }

    #[test]
    fn merge_is_identity_without_sparse_strata() {
        let obs = vec![
            ob(Source::Odb, false, 0.1),
            ob(Source::Rct, true, 0.2),
            ob(Source::Odb, true, 0.6),
            ob(Source::Odb, false, 0.7),
        ];
        let plan = StratificationPlan::equal_width(&obs, 2).unwrap();
        assert_eq!(merge_sparse_strata(&plan, &obs, 1).unwrap(), plan);
        // The ODB-only basis does see stratum 1 as sparse.
        let odb = merge_sparse_strata_by(&plan, &obs, 1, ArmBasis::Odb).unwrap();
        assert_eq!(odb.len(), 1);
    }

    #[test]
    fn ties_go_to_the_lower_neighbour() {
        let obs = vec![
            ob(Source::Odb, true, 0.1),
            ob(Source::Odb, false, 0.1),
            ob(Source::Odb, true, 0.5),
            ob(Source::Odb, true, 0.9),
            ob(Source::Odb, false, 0.9),
        ];
        let plan = StratificationPlan::equal_width(&obs, 3).unwrap();
        let merged = merge_sparse_strata(&plan, &obs, 1).unwrap();
        assert_eq!(merged.strata[0].label.to_string(), "1-2");
        assert_eq!(merged.strata[1].label.to_string(), "3");
    }

    #[test]
    fn all_empty_is_an_error() {
        let plan = StratificationPlan::equal_width(&[], 4).unwrap();
        assert!(merge_sparse_strata(&plan, &[], 1).is_err());
    }

    #[test]
    fn adversarial_alternating_arms() {
        // Strata alternate between treated-only and control-only, with empty
        // strata sprinkled in.
        let mut obs = Vec::new();
        for b in 0..20usize {
            if b % 5 == 4 {
                continue;
            }
            let e = (b as f64 + 0.5) / 20.0;
            for _ in 0..=(b % 3) {
                obs.push(ob(Source::Odb, b % 2 == 0, e));
            }
        }
        let plan = StratificationPlan::equal_width(&obs, 20).unwrap();
        for min_arm in 1..=3 {
            let merged = merge_sparse_strata(&plan, &obs, min_arm).unwrap();
            for c in merged.arm_counts(&obs) {
                assert!(c.satisfies(ArmBasis::Pooled, min_arm), "{c:?}");
            }
            let covered: usize = merged.strata.iter().map(|s| s.members.len()).sum();
            assert_eq!(covered, obs.len());
            assert_eq!(merge_sparse_strata(&merged, &obs, min_arm).unwrap(), merged);
        }
    }

    #[test]
    fn prognostic_single_bin_only_relabels() {
        let obs: Vec<_> = (0..10)
            .map(|i| Observation {
                prognostic: Some(i as f64),
                ..ob(Source::Odb, i % 2 == 0, 0.05 + 0.09 * i as f64)
            })
            .collect();
        let plan = StratificationPlan::equal_width(&obs, 3).unwrap();
        let sub = sub_stratify_prognostic(&plan, &obs, 1).unwrap();
        assert_eq!(sub.len(), plan.len());
        for (a, b) in plan.strata.iter().zip(&sub.strata) {
            assert_eq!(a.members, b.members);
            assert_eq!(a.weight, b.weight);
            assert_eq!(b.label.first.sub, Some(1));
        }
    }

    #[test]
    fn three_prognostic_bins_are_near_equal() {
        for m in [3usize, 7, 10, 31, 100] {
            let obs: Vec<_> = (0..m)
                .map(|i| Observation {
                    prognostic: Some(((i * 7919) % 1009) as f64),
                    ..ob(Source::Odb, i % 2 == 0, 0.5)
                })
                .collect();
            let plan = StratificationPlan::equal_width(&obs, 1).unwrap();
            let sub = sub_stratify_prognostic(&plan, &obs, 3).unwrap();
            let sizes: Vec<usize> = sub.strata.iter().map(|s| s.members.len()).collect();
            assert_eq!(sizes.len(), 3);
            let (lo, hi) = (sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
            assert!(hi - lo <= 1, "m={m}: {sizes:?}");
        }
    }

    #[test]
    fn heavy_ties_collapse_bins() {
        // 80% of scores are exactly zero; a quantile oracle says the 1/3 and
        // 2/3 quantiles are both 0, leaving two bins.
        let scores: Vec<f64> = (0..100).map(|i| if i < 80 { 0.0 } else { i as f64 }).collect();
        let obs: Vec<_> = scores
            .iter()
            .map(|&s| Observation {
                prognostic: Some(s),
                ..ob(Source::Odb, s > 50.0, 0.5)
            })
            .collect();
        let plan = StratificationPlan::equal_width(&obs, 1).unwrap();
        let sub = sub_stratify_prognostic(&plan, &obs, 3).unwrap();
        assert_eq!(sub.prognostic_edges.as_ref().unwrap()[0], vec![0.0]);
        let sizes: Vec<usize> = sub.strata.iter().map(|s| s.members.len()).collect();
        assert_eq!(sizes, vec![80, 20]);
    }

    #[test]
    fn rct_scores_use_odb_edges() {
        let mut obs: Vec<_> = (0..6)
            .map(|i| Observation {
                prognostic: Some(i as f64),
                ..ob(Source::Odb, i % 2 == 0, 0.5)
            })
            .collect();
        obs.push(Observation {
            prognostic: Some(100.0),
            ..ob(Source::Rct, true, 0.5)
        });
        obs.push(Observation {
            prognostic: Some(-100.0),
            ..ob(Source::Rct, false, 0.5)
        });
        let plan = StratificationPlan::equal_width(&obs, 1).unwrap();
        let sub = sub_stratify_prognostic(&plan, &obs, 2).unwrap();
        assert_eq!(sub.strata[0].members, vec![0, 1, 2, 7]);
        assert_eq!(sub.strata[1].members, vec![3, 4, 5, 6]);
        assert_eq!(sub.strata[0].weight, 0.5);
    }

    #[test]
    fn smoking_proportions_sd() {
        // Three-level smoking proportions with a known SD of 0.11.
        let t = [0.487, 0.462, 0.051];
        let c = [0.523, 0.411, 0.066];
        let sd = categorical_sd(&t, &c, &t, &c).unwrap();
        assert!((sd - 0.11).abs() < 0.005, "{sd}");
    }

    #[test]
    fn two_levels_reduce_to_the_binary_sd() {
        let (a, b) = (0.3, 0.45);
        let sd = categorical_sd(&[a, 1.0 - a], &[b, 1.0 - b], &[a, 1.0 - a], &[b, 1.0 - b]).unwrap();
        let binary = (a - b).abs() / ((a * (1.0 - a) + b * (1.0 - b)) / 2.0).sqrt();
        assert!((sd - binary).abs() < 1e-12, "{sd} vs {binary}");
    }

    #[test]
    fn identical_groups_have_zero_sd() {
        let p = [0.2, 0.3, 0.5];
        assert_eq!(categorical_sd(&p, &p, &p, &p).unwrap(), 0.0);
    }
}
