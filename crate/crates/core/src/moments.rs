//! Population moments of a set of units with Bernoulli treatment, the
//! delta-method bias and variance of the difference-in-means estimator, and
//! their inverse-probability-weighted plug-in estimates.
//!
//! Throughout, a unit is `(y_t, y_c, p)`: both potential outcomes and the
//! treatment probability.

use serde::{Deserialize, Serialize};

use crate::data::{Observation, RctDesign};
use crate::error::{Error, Result};
use crate::stats::{ksum, mean, sample_variance};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StratumMoments {
    pub n: usize,
    pub mu_t: f64,
    pub mu_c: f64,
    pub p_t: f64,
    pub p_c: f64,
    pub s_t: f64,
    pub s_c: f64,
    pub s_tt: f64,
    pub s_cc: f64,
    pub s_tc: f64,
    pub rho_t: f64,
    pub rho_c: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DeltaMoments {
    /// Lead term of the bias.
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
    /// Order of the neglected remainder.
    pub error_order: String,
}

/// Plug-in moments for the ODB members of one stratum.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentEstimate {
    pub n: usize,
    pub n_t: usize,
    pub n_c: usize,
    pub p_t: f64,
    pub p_c: f64,
    pub rho_t: f64,
    pub rho_c: f64,
    pub s_t: f64,
    pub s_tt: f64,
    pub s_cc: f64,
    pub s_tc: f64,
    pub bias: f64,
    pub variance: f64,
    pub mse: f64,
}

fn check_units(units: &[(f64, f64, f64)]) -> Result<()> {
    if units.is_empty() {
        return Err(Error::Degenerate("moments of an empty set".into()));
    }
    for (i, &(yt, yc, p)) in units.iter().enumerate() {
        if !(p > 0.0 && p < 1.0) {
            return Err(Error::Validation(format!("unit {i}: probability {p} outside (0, 1)")));
        }
        if !yt.is_finite() || !yc.is_finite() {
            return Err(Error::Validation(format!("unit {i}: non-finite outcome")));
        }
    }
    Ok(())
}

pub fn population_moments(units: &[(f64, f64, f64)]) -> Result<StratumMoments> {
    check_units(units)?;
    let nf = units.len() as f64;
    let avg = |f: &dyn Fn(&(f64, f64, f64)) -> f64| ksum(units.iter().map(f)) / nf;

    let mu_t = avg(&|u| u.0);
    let mu_c = avg(&|u| u.1);
    let p_t = avg(&|u| u.2);
    let p_c = 1.0 - p_t;
    let s_t = avg(&|u| u.0 * u.2) - mu_t * p_t;
    let s_c = avg(&|u| u.1 * (1.0 - u.2)) - mu_c * p_c;
    let rho_t = mu_t + s_t / p_t;
    let rho_c = mu_c + s_c / p_c;
    let s_tt = avg(&|u| u.2 * (1.0 - u.2) * (u.0 - rho_t).powi(2));
    let s_cc = avg(&|u| u.2 * (1.0 - u.2) * (u.1 - rho_c).powi(2));
    let s_tc = avg(&|u| u.2 * (1.0 - u.2) * (u.0 - rho_t) * (u.1 - rho_c));
    Ok(StratumMoments {
        n: units.len(),
        mu_t,
        mu_c,
        p_t,
        p_c,
        s_t,
        s_c,
        s_tt,
        s_cc,
        s_tc,
        rho_t,
        rho_c,
    })
}

/// Population moments of observations carrying potential outcomes, with
/// `p` the observation's propensity.
pub fn observation_moments(obs: &[&Observation]) -> Result<StratumMoments> {
    let units = obs
        .iter()
        .map(|o| {
            o.potential
                .map(|(yt, yc)| (yt, yc, o.propensity))
                .ok_or_else(|| Error::MissingPotentialOutcomes("observation lacks potential outcomes".into()))
        })
        .collect::<Result<Vec<_>>>()?;
    population_moments(&units)
}

/// Delta-method bias and variance of the treated-minus-control mean
/// difference.
pub fn delta_tau_moments(m: &StratumMoments) -> Result<DeltaMoments> {
    if m.n == 0 {
        return Err(Error::Degenerate("delta moments need n > 0".into()));
    }
    if !(m.p_t > 0.0 && m.p_c > 0.0) {
        return Err(Error::Degenerate("delta moments need p_t, p_c > 0".into()));
    }
    let bias = m.s_t / m.p_t - m.s_c / m.p_c;
    let variance = (m.s_tt / (m.p_t * m.p_t) + m.s_cc / (m.p_c * m.p_c) + 2.0 * m.s_tc / (m.p_t * m.p_c)) / m.n as f64;
    Ok(DeltaMoments {
        bias,
        variance,
        mse: bias * bias + variance,
        error_order: "O(1/n)".into(),
    })
}

/// Delta-method mean and variance of the ratio `y / x` of two sample means
/// with population means `mean_x`, `mean_y`. Returns `(edelt, vdelt)`.
pub fn delta_ratio_moments(mean_x: f64, mean_y: f64, var_x: f64, var_y: f64, cov_xy: f64) -> Result<(f64, f64)> {
    if mean_x == 0.0 {
        return Err(Error::Degenerate(
            "ratio moments need a nonzero denominator mean".into(),
        ));
    }
    let rho = mean_y / mean_x;
    let x2 = mean_x * mean_x;
    let edelt = rho - (cov_xy - rho * var_x) / x2;
    let vdelt = (var_y - 2.0 * rho * cov_xy + rho * rho * var_x) / x2;
    Ok((edelt, vdelt))
}

/// Lead bias of the pooled ODB+RCT estimator in a stratum, written in terms
/// of the separate ODB and RCT moments and the outcome gap `delta_k` between
/// the two sources.
pub fn spiked_bias_decomposition(
    odb: &StratumMoments,
    rct: &StratumMoments,
    n_ok: usize,
    n_rk: usize,
    delta_k: f64,
) -> Result<f64> {
    let (no, nr) = (n_ok as f64, n_rk as f64);
    let dt = no * odb.p_t + nr * rct.p_t;
    let dc = no * odb.p_c + nr * rct.p_c;
    if !(dt > 0.0 && dc > 0.0) {
        return Err(Error::Degenerate("pooled arm denominator is zero".into()));
    }
    Ok(delta_k * no * (odb.p_t / dt - odb.p_c / dc) + odb.s_t * no / dt - odb.s_c * no / dc)
}

/// `S_tc` from observed outcomes only, exact under a constant within-set
/// effect when the true `rho_t`, `rho_c`, `s_t` and `p_t` are supplied.
/// `units` holds `(treated, observed_outcome, p)`.
pub fn s_tc_from_observed(units: &[(bool, f64, f64)], p_t: f64, rho_t: f64, rho_c: f64, s_t: f64) -> f64 {
    let nf = units.len() as f64;
    let p_c = 1.0 - p_t;
    let mut sq = Vec::with_capacity(units.len());
    let mut lin = Vec::with_capacity(units.len());
    for &(treated, y, p) in units {
        let v = p * (1.0 - p);
        let r = if treated { y - rho_t } else { y - rho_c };
        sq.push(v * r * r);
        lin.push(if treated { v * r } else { -v * r });
    }
    ksum(sq) / nf + s_t / (nf * p_t * p_c) * ksum(lin)
}

/// Plug-in moments and delta-method MSE of the ODB-only estimator over the
/// ODB members of a stratum. Needs at least one subject in each arm.
pub fn estimate_moments(odb: &[&Observation]) -> Result<MomentEstimate> {
    let n = odb.len();
    let n_t = odb.iter().filter(|o| o.treated).count();
    let n_c = n - n_t;
    if n_t == 0 || n_c == 0 {
        return Err(Error::InsufficientArm(format!(
            "ODB moments need both arms (treated {n_t}, control {n_c})"
        )));
    }
    let nf = n as f64;
    let p_t = ksum(odb.iter().map(|o| o.propensity)) / nf;
    let p_c = 1.0 - p_t;
    if !(p_t > 0.0 && p_c > 0.0) {
        return Err(Error::Degenerate("stratum mean propensity is 0 or 1".into()));
    }
    let treated = || odb.iter().filter(|o| o.treated);
    let control = || odb.iter().filter(|o| !o.treated);

    let rho_t = ksum(treated().map(|o| o.outcome)) / n_t as f64;
    let rho_c = ksum(control().map(|o| o.outcome)) / n_c as f64;

    // Each arm gives its own inverse-probability estimate of s_t (the control
    // arm through s_c = -s_t); they are blended by arm share. Outcomes are
    // centred first: s_t is a covariance, and without centring the estimate
    // would move with the outcome origin.
    let centre = ksum(odb.iter().map(|o| o.outcome)) / nf;
    let s_from_t = (ksum(treated().map(|o| o.outcome - centre))
        - p_t * ksum(treated().map(|o| (o.outcome - centre) / o.propensity)))
        / nf;
    let s_from_c = -(ksum(control().map(|o| o.outcome - centre))
        - p_c * ksum(control().map(|o| (o.outcome - centre) / (1.0 - o.propensity))))
        / nf;
    let s_t = (n_t as f64 * s_from_t + n_c as f64 * s_from_c) / nf;

    let v = |o: &&&Observation| o.propensity * (1.0 - o.propensity);
    let s_tt = ksum(treated().map(|o| v(&o) * (o.outcome - rho_t).powi(2))) / n_t as f64;
    let s_cc = ksum(control().map(|o| v(&o) * (o.outcome - rho_c).powi(2))) / n_c as f64;

    let units: Vec<(bool, f64, f64)> = odb.iter().map(|o| (o.treated, o.outcome, o.propensity)).collect();
    let bound = (s_tt * s_cc).sqrt();
    let s_tc = s_tc_from_observed(&units, p_t, rho_t, rho_c, s_t).clamp(-bound, bound);

    let bias = s_t / (p_t * p_c);
    let variance = ((s_tt / (p_t * p_t) + s_cc / (p_c * p_c) + 2.0 * s_tc / (p_t * p_c)) / nf).max(0.0);
    Ok(MomentEstimate {
        n,
        n_t,
        n_c,
        p_t,
        p_c,
        rho_t,
        rho_c,
        s_t,
        s_tt,
        s_cc,
        s_tc,
        bias,
        variance,
        mse: bias * bias + variance,
    })
}

/// Plug-in variance of the RCT difference in means, from the mixture of the
/// two arms' sample variances. Needs two subjects per arm.
pub fn rct_variance_estimate(rct: &[&Observation], design: RctDesign) -> Result<f64> {
    let yt: Vec<f64> = rct.iter().filter(|o| o.treated).map(|o| o.outcome).collect();
    let yc: Vec<f64> = rct.iter().filter(|o| !o.treated).map(|o| o.outcome).collect();
    let (Some(vt), Some(vc)) = (sample_variance(&yt), sample_variance(&yc)) else {
        return Err(Error::InsufficientArm(format!(
            "RCT variance needs two subjects per arm (treated {}, control {})",
            yt.len(),
            yc.len()
        )));
    };
    let n = rct.len() as f64;
    let sigma2 = (yt.len() as f64 * vt + yc.len() as f64 * vc) / n;
    let p = design.p_r();
    Ok(sigma2 / (p * (1.0 - p) * n))
}

/// Difference of arm means, `None` if an arm is empty.
pub fn difference_in_means<'a, I>(obs: I) -> Option<f64>
where
    I: IntoIterator<Item = &'a Observation>,
{
    let (mut t, mut c) = (Vec::new(), Vec::new());
    for o in obs {
        if o.treated {
            t.push(o.outcome)
        } else {
            c.push(o.outcome)
        }
    }
    Some(mean(&t)? - mean(&c)?)
}
