//! Subcommand arguments and implementations.
//!
//! Every argument struct doubles as its config-file section: fields are
//! optional so that unset flags fall through to the file, then to defaults.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use clap::Args;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use spikein::glm::{
    auc_trace, fit_model, forward_stepwise_aic, score, Family, Response, Rows, ScoreTarget, DEFAULT_CLIP,
};
use spikein::sim::{
    bootstrap_compare, generate_scenario, run_mse_experiment, BootstrapMethod, BootstrapOptions, BootstrapReport, Grid,
    MseTable, ScenarioSpec, SIM_METHODS,
};
use spikein::stratify::{merge_sparse_strata_by, sub_stratify_dataset};
use spikein::{
    balance_report, estimate as run_estimate, read_dataset, write_dataset, ArmBasis, BalanceReport, Dataset,
    EstimateOptions, EstimateReport, Format, Method, RctDesign, Source, StratificationPlan, UndefinedStrata,
};

use crate::output::OutDir;
use crate::CliError;

fn required<T: Clone>(v: &Option<T>, flag: &str) -> Result<T, CliError> {
    v.clone().ok_or_else(|| CliError::Usage(format!("missing --{flag}")))
}

fn load(path: &Path) -> Result<Dataset, CliError> {
    Ok(read_dataset(path, Format::Csv)?)
}

fn parse_methods(names: &[String]) -> Result<Vec<Method>, CliError> {
    names
        .iter()
        .map(|n| Method::from_str(n).map_err(CliError::from))
        .collect()
}

fn parse_enum<T: serde::de::DeserializeOwned>(s: &str, what: &str) -> Result<T, CliError> {
    serde_json::from_value(Value::String(s.trim().to_ascii_lowercase().replace('-', "_")))
        .map_err(|_| CliError::Usage(format!("unknown {what} {s:?}")))
}

/// Print to stdout, ignoring a closed pipe.
fn emit(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().lock().write_all(text.as_bytes());
}

fn csv_string(header: &[String], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String, CliError> {
    let mut wtr = csv::Writer::from_writer(Vec::new());
    wtr.write_record(header).map_err(spikein::Error::from)?;
    for r in rows {
        wtr.write_record(&r).map_err(spikein::Error::from)?;
    }
    let bytes = wtr.into_inner().map_err(|e| CliError::Runtime(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct SimulateArgs {
    /// Scenario TOML: `grid`, `methods`, a `[base]` table and `[[rows]]`.
    #[arg(long)]
    pub scenario: Option<PathBuf>,
    /// Named grid when no scenario file is given: ideal, restricted,
    /// propensity_effects, propensity_effects_restricted.
    #[arg(long)]
    pub grid: Option<String>,
    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Also write every replicate's estimates.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub keep_draws: Option<bool>,
    /// 25 covariate draws x 10 assignment draws instead of the scenario's.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub fast: Option<bool>,
    /// Also write the first row's first draw as `dataset.csv`, with
    /// potential outcomes and true propensities.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub emit_dataset: Option<bool>,
}

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    grid: Option<Grid>,
    methods: Option<Vec<String>>,
    #[serde(default)]
    base: serde_json::Map<String, Value>,
    #[serde(default)]
    rows: Vec<serde_json::Map<String, Value>>,
}

fn overlay(spec: &ScenarioSpec, table: &serde_json::Map<String, Value>) -> Result<ScenarioSpec, CliError> {
    if table.contains_key("seed") {
        return Err(CliError::Usage("scenario files may not set `seed`; use --seed".into()));
    }
    let mut v = serde_json::to_value(spec).map_err(|e| CliError::Runtime(e.to_string()))?;
    let obj = v.as_object_mut().expect("spec serializes to an object");
    for (k, x) in table {
        obj.insert(k.clone(), x.clone());
    }
    serde_json::from_value(v).map_err(|e| CliError::Usage(format!("scenario: {e}")))
}

pub fn simulate(mut a: SimulateArgs) -> Result<(), CliError> {
    let seed = a
        .seed
        .ok_or_else(|| CliError::Usage("simulate needs a seed (--seed or [simulate] seed)".into()))?;
    let out = required(&a.out, "out")?;
    let file: ScenarioFile = match &a.scenario {
        Some(p) => {
            let text =
                std::fs::read_to_string(p).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", p.display())))?;
            toml::from_str(&text).map_err(|e| CliError::Usage(format!("{}: {e}", p.display())))?
        }
        None => ScenarioFile::default(),
    };
    let grid = match (&a.grid, file.grid) {
        (Some(g), _) => Some(parse_enum::<Grid>(g, "grid")?),
        (None, g) => g,
    };
    let base = overlay(
        &ScenarioSpec {
            seed,
            ..ScenarioSpec::default()
        },
        &file.base,
    )?;
    let mut specs = match (grid, file.rows.is_empty()) {
        (Some(_), false) => return Err(CliError::Usage("give either a named grid or [[rows]], not both".into())),
        (Some(g), true) => g.rows(&base),
        (None, false) => file.rows.iter().map(|r| overlay(&base, r)).collect::<Result<_, _>>()?,
        (None, true) if a.scenario.is_some() => vec![base],
        (None, true) => return Err(CliError::Usage("simulate needs --scenario or --grid".into())),
    };
    let fast = *a.fast.get_or_insert(false);
    if fast {
        for s in &mut specs {
            s.n_cov_draws = 25;
            s.n_assign_draws = 10;
        }
    }
    let methods = match &file.methods {
        Some(m) => parse_methods(m)?,
        None => SIM_METHODS.to_vec(),
    };
    let keep = *a.keep_draws.get_or_insert(false);
    let table = run_mse_experiment(&specs, &methods, keep)?;

    let mut dir = OutDir::create(&out)?;
    dir.write("mse_table.csv", table.to_csv()?)?;
    let summary = MseTable {
        draws: None,
        ..table.clone()
    };
    dir.write_json("mse_table.json", &summary)?;
    if let Some(draws) = &table.draws {
        let mut header: Vec<String> = ["row", "key", "cov", "assign", "truth"].map(String::from).to_vec();
        header.extend(methods.iter().map(|m| m.name().to_string()));
        let rows = draws.iter().map(|d| {
            let mut r = vec![
                d.row.to_string(),
                table.rows[d.row].key.clone(),
                d.cov.to_string(),
                d.assign.to_string(),
                d.truth.to_string(),
            ];
            r.extend(d.estimates.iter().map(|e| e.map(|v| v.to_string()).unwrap_or_default()));
            r
        });
        dir.write("draws.csv", csv_string(&header, rows)?)?;
    }
    dir.write_json("scenarios.json", &specs)?;
    if *a.emit_dataset.get_or_insert(false) {
        write_dataset(&generate_scenario(&specs[0])?, dir.path("dataset.csv"))?;
        dir.register("dataset.csv")?;
    }
    dir.finish("simulate", Some(seed), &a)?;
    emit(&summary.to_string());
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Debug, Clone, Copy)]
pub enum FitKind {
    Propensity,
    Prognostic,
}

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct FitArgs {
    /// Dataset CSV (ODB and RCT subjects together).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidate covariates (default: every covariate column).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Stepwise cap (default 120 for propensity, 25 for prognostic).
    #[arg(long)]
    pub max_vars: Option<usize>,
    /// Cross-validation folds (default 10).
    #[arg(long)]
    pub folds: Option<usize>,
    /// Minimum cross-validated AUC gain, in basis points, to keep a variable.
    #[arg(long)]
    pub stop_bp: Option<f64>,
    /// Seed for the cross-validation folds.
    #[arg(long)]
    pub seed: Option<u64>,
}

pub fn fit(mut a: FitArgs, kind: FitKind) -> Result<(), CliError> {
    let data = load(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let max_vars = *a.max_vars.get_or_insert(match kind {
        FitKind::Propensity => 120,
        FitKind::Prognostic => 25,
    });
    let folds = *a.folds.get_or_insert(10);
    let stop_bp = *a.stop_bp.get_or_insert(1.0);
    let seed = *a.seed.get_or_insert(0);
    let candidates = a
        .covariates
        .get_or_insert_with(|| data.covariate_names().to_vec())
        .clone();

    let (rows, target, command) = match kind {
        FitKind::Propensity => (
            Rows::from_dataset(&data, Response::Treatment, |s| s.source == Source::Odb)?,
            ScoreTarget::Propensity,
            "fit-propensity",
        ),
        FitKind::Prognostic => (
            Rows::from_dataset(&data, Response::Outcome, |s| s.source == Source::Odb && !s.treated)?,
            ScoreTarget::Prognostic,
            "fit-prognostic",
        ),
    };
    let family = if rows.is_binary() {
        Family::Binomial
    } else {
        Family::Gaussian
    };
    if matches!(kind, FitKind::Propensity) && family != Family::Binomial {
        return Err(CliError::Usage("treatment indicator is not binary".into()));
    }
    let order = forward_stepwise_aic(&rows, &candidates, max_vars, family)?;
    let mut dir = OutDir::create(&out)?;
    let features = if family == Family::Binomial && !order.is_empty() {
        let trace = auc_trace(&rows, &order, folds, seed, stop_bp)?;
        let header = ["size", "feature", "nominal_auc", "cv_auc"].map(String::from);
        let lines = trace.points.iter().map(|p| {
            vec![
                p.size.to_string(),
                p.feature.clone(),
                p.nominal.to_string(),
                p.cross_validated.to_string(),
            ]
        });
        dir.write("auc_trace.csv", csv_string(&header, lines)?)?;
        order[..trace.chosen_size].to_vec()
    } else {
        order.clone()
    };
    let model = fit_model(&rows, &features, family)?;
    let scored = score(&model, &data, target, DEFAULT_CLIP)?;
    dir.write_json("model.json", &model)?;
    write_dataset(&scored, dir.path("scored.csv"))?;
    dir.register("scored.csv")?;
    let line = format!(
        "{command}: {} of {} candidates selected by AIC, {} kept; deviance {:.3}, AIC {:.3}{}\n",
        order.len(),
        candidates.len(),
        features.len(),
        model.meta.deviance,
        model.meta.aic,
        if model.meta.separation {
            " (separation detected; ridge applied)"
        } else {
            ""
        }
    );
    dir.finish(command, Some(seed), &a)?;
    emit(&line);
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct StratifyArgs {
    /// Scored dataset CSV (ODB and RCT subjects together).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Equal-width propensity strata (default 10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fewest treated and control subjects a stratum may keep (default 1).
    #[arg(long)]
    pub min_arm: Option<usize>,
    /// Arm counts that decide sparseness: pooled, odb, rct, either_source.
    #[arg(long)]
    pub basis: Option<String>,
    /// Split each stratum into this many prognostic-score bins.
    #[arg(long)]
    pub prognostic_bins: Option<usize>,
}

pub fn stratify(mut a: StratifyArgs) -> Result<(), CliError> {
    let data = load(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let k = *a.k.get_or_insert(10);
    let min_arm = *a.min_arm.get_or_insert(1);
    let basis: ArmBasis = parse_enum(a.basis.get_or_insert_with(|| "pooled".into()), "basis")?;
    let obs = data.observations()?;
    let mut plan = StratificationPlan::equal_width(&obs, k)?;
    if let Some(l) = a.prognostic_bins {
        plan = sub_stratify_dataset(&plan, &data, l)?;
    }
    let plan = merge_sparse_strata_by(&plan, &obs, min_arm, basis)?;

    let mut dir = OutDir::create(&out)?;
    dir.write_json("plan.json", &plan)?;
    let subjects = data.subjects();
    let mut assignment: Vec<(usize, String)> = plan
        .strata
        .iter()
        .flat_map(|s| s.members.iter().map(move |&i| (i, s.label.to_string())))
        .collect();
    assignment.sort();
    let header = ["id", "stratum"].map(String::from);
    dir.write(
        "assignment.csv",
        csv_string(
            &header,
            assignment.into_iter().map(|(i, l)| vec![subjects[i].id.clone(), l]),
        )?,
    )?;
    let counts = plan.arm_counts(&obs);
    let header = [
        "stratum",
        "weight",
        "n_odb",
        "odb_treated",
        "odb_control",
        "rct_treated",
        "rct_control",
    ]
    .map(String::from);
    let rows = plan.strata.iter().zip(&counts).map(|(s, c)| {
        vec![
            s.label.to_string(),
            s.weight.to_string(),
            s.n_odb.to_string(),
            c.odb_treated.to_string(),
            c.odb_control.to_string(),
            c.rct_treated.to_string(),
            c.rct_control.to_string(),
        ]
    });
    dir.write("strata.csv", csv_string(&header, rows)?)?;
    dir.finish("stratify", None, &a)?;
    emit(&format!(
        "stratify: {} strata, {} merges\n",
        plan.strata.len(),
        plan.merged_from.len()
    ));
    Ok(())
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BalanceArgs {
    /// Scored dataset CSV (ODB and RCT subjects together).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Equal-width propensity strata (default 10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Continuous covariates (default: every covariate not listed as
    /// categorical).
    #[arg(long, value_delimiter = ',')]
    pub covariates: Option<Vec<String>>,
    /// Categorical covariates.
    #[arg(long, value_delimiter = ',')]
    pub categorical: Option<Vec<String>>,
}

pub fn balance(mut a: BalanceArgs) -> Result<(), CliError> {
    let data = load(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let k = *a.k.get_or_insert(10);
    let categorical = a.categorical.get_or_insert_with(Vec::new).clone();
    let continuous = a
        .covariates
        .get_or_insert_with(|| {
            data.covariate_names()
                .iter()
                .filter(|n| !categorical.contains(n))
                .cloned()
                .collect()
        })
        .clone();
    let plan = StratificationPlan::equal_width(&data.observations()?, k)?;
    let cont: Vec<&str> = continuous.iter().map(String::as_str).collect();
    let cat: Vec<&str> = categorical.iter().map(String::as_str).collect();
    let report = balance_report(&data, Some(&plan), &cont, &cat)?;
    let mut dir = OutDir::create(&out)?;
    dir.write_json("balance.json", &report)?;
    dir.write("balance.csv", report.to_csv()?)?;
    dir.finish("balance", None, &a)?;
    emit(&render_balance(&report));
    Ok(())
}

fn render_balance(r: &BalanceReport) -> String {
    let mut s = format!("{:<20} {:>12} {:>12}\n", "covariate", "unweighted", "stratified");
    let opt = |v: Option<f64>| {
        v.map(|v| format!("{v:>12.4}"))
            .unwrap_or_else(|| format!("{:>12}", "-"))
    };
    for c in &r.continuous {
        s += &format!(
            "{:<20} {:>12.4} {}\n",
            c.covariate,
            c.sd_unweighted,
            opt(c.sd_stratified)
        );
    }
    for c in &r.categorical {
        s += &format!(
            "{:<20} {:>12.4} {}\n",
            c.covariate,
            c.sd_unweighted,
            opt(c.sd_stratified)
        );
    }
    s
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct EstimateArgs {
    /// Scored dataset CSV (ODB and RCT subjects together).
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Comma-separated: odb, rct, weighted, spiked, dual_spiked, dynamic,
    /// oracle.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Equal-width propensity strata (default 10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Fewest treated and control subjects a stratum may keep (default 1).
    #[arg(long)]
    pub min_arm: Option<usize>,
    /// Prognostic sub-strata per stratum for dual_spiked (default 3).
    #[arg(long)]
    pub prognostic_bins: Option<usize>,
    /// RCT assignment probability (default 0.5).
    #[arg(long)]
    pub p_r: Option<f64>,
    /// Strata where a method is undefined: merge, zero or error.
    #[arg(long)]
    pub undefined: Option<String>,
}

pub fn estimate(mut a: EstimateArgs) -> Result<(), CliError> {
    let data = load(&required(&a.data, "data")?)?;
    let out = required(&a.out, "out")?;
    let k = *a.k.get_or_insert(10);
    let methods = parse_methods(a.methods.get_or_insert_with(|| {
        ["odb", "rct", "weighted", "spiked", "dynamic"]
            .map(String::from)
            .to_vec()
    }))?;
    let opts = EstimateOptions {
        design: RctDesign::new(*a.p_r.get_or_insert(0.5))?,
        undefined: parse_enum::<UndefinedStrata>(a.undefined.get_or_insert_with(|| "merge".into()), "policy")?,
        min_arm: *a.min_arm.get_or_insert(1),
        prognostic_bins: *a.prognostic_bins.get_or_insert(3),
    };
    if methods.contains(&Method::DualSpiked) {
        if let Some(s) = data.subjects().iter().find(|s| s.prognostic.is_none()) {
            return Err(spikein::Error::MissingPrognostic(s.id.clone()).into());
        }
    }
    let obs = data.observations()?;
    let plan = StratificationPlan::equal_width(&obs, k)?;
    let report = run_estimate(&plan, &obs, &methods, &opts)?;
    let mut dir = OutDir::create(&out)?;
    dir.write_json("estimate.json", &report)?;
    dir.write("estimate.csv", report.to_csv()?)?;
    dir.finish("estimate", None, &a)?;
    emit(&render_estimate(&report));
    Ok(())
}

fn render_estimate(r: &EstimateReport) -> String {
    let mut s = format!("{:<12} {:>12} {:>8} {:>7}\n", "method", "tau_hat", "strata", "merges");
    for m in &r.methods {
        s += &format!(
            "{:<12} {:>12.6} {:>8} {:>7}\n",
            m.method.name(),
            m.tau_hat,
            m.strata.len(),
            m.merges
        );
    }
    s
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct BootstrapArgs {
    /// ODB CSV with propensity scores.
    #[arg(long)]
    pub odb: Option<PathBuf>,
    /// RCT CSV with propensity scores.
    #[arg(long)]
    pub rct: Option<PathBuf>,
    /// Reference effect that bias and RMSE are measured against.
    #[arg(long, allow_hyphen_values = true)]
    pub reference: Option<f64>,
    /// Bootstrap replicates (default 100).
    #[arg(long)]
    pub reps: Option<usize>,
    /// Required.
    #[arg(long)]
    pub seed: Option<u64>,
    /// RCT resample size (default: the RCT's size).
    #[arg(long)]
    pub rct_subsample: Option<usize>,
    /// Equal-width propensity strata (default 10).
    #[arg(long)]
    pub k: Option<usize>,
    /// Prognostic sub-strata per stratum for dual_spiked (default 3).
    #[arg(long)]
    pub prognostic_bins: Option<usize>,
    /// Fewest treated and control subjects a stratum may keep (default 1).
    #[arg(long)]
    pub min_arm: Option<usize>,
    /// RCT assignment probability (default 0.5).
    #[arg(long)]
    pub p_r: Option<f64>,
    /// Comma-separated: naive_odb, stratified_odb, rct, weighted, spiked,
    /// dual_spiked, dynamic.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

pub fn bootstrap(mut a: BootstrapArgs) -> Result<(), CliError> {
    let seed = a
        .seed
        .ok_or_else(|| CliError::Usage("bootstrap needs a seed (--seed or [bootstrap] seed)".into()))?;
    let odb = load(&required(&a.odb, "odb")?)?;
    let rct = load(&required(&a.rct, "rct")?)?;
    let reference = required(&a.reference, "reference")?;
    let out = required(&a.out, "out")?;
    let reps = *a.reps.get_or_insert(100);
    let names = a.methods.get_or_insert_with(|| {
        let all = if odb
            .subjects()
            .iter()
            .chain(rct.subjects())
            .all(|s| s.prognostic.is_some())
        {
            BootstrapMethod::ALL.to_vec()
        } else {
            BootstrapMethod::ALL
                .into_iter()
                .filter(|m| *m != BootstrapMethod::DualSpiked)
                .collect()
        };
        all.iter().map(|m| m.name().to_string()).collect()
    });
    let methods: Vec<BootstrapMethod> = names
        .iter()
        .map(|n| parse_enum(n, "method"))
        .collect::<Result<_, _>>()?;
    let opts = BootstrapOptions {
        k: *a.k.get_or_insert(10),
        prognostic_bins: *a.prognostic_bins.get_or_insert(3),
        min_arm: *a.min_arm.get_or_insert(1),
        design: RctDesign::new(*a.p_r.get_or_insert(0.5))?,
        seed,
    };
    let report = bootstrap_compare(&odb, &rct, reference, reps, a.rct_subsample, &methods, &opts)?;
    let mut dir = OutDir::create(&out)?;
    dir.write_json("bootstrap.json", &report)?;
    dir.write("bootstrap.csv", report.to_csv()?)?;
    let header: Vec<String> = std::iter::once("replicate".to_string())
        .chain(methods.iter().map(|m| m.name().to_string()))
        .collect();
    let rows = report.draws.iter().enumerate().map(|(b, d)| {
        std::iter::once(b.to_string())
            .chain(d.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()))
            .collect()
    });
    dir.write("draws.csv", csv_string(&header, rows)?)?;
    dir.finish("bootstrap", Some(seed), &a)?;
    emit(&render_bootstrap(&report));
    Ok(())
}

fn render_bootstrap(r: &BootstrapReport) -> String {
    let mut s = format!(
        "{:<15} {:>10} {:>10} {:>10} {:>10} {:>8}\n",
        "method", "mean", "bias", "sd", "rmse", "failed"
    );
    for row in &r.rows {
        s += &format!(
            "{:<15} {:>10.5} {:>10.5} {:>10.5} {:>10.5} {:>8}\n",
            row.method.name(),
            row.mean,
            row.bias,
            row.variance.sqrt(),
            row.rmse,
            row.failures
        );
    }
    s
}

// ---------------------------------------------------------------------------

#[derive(Args, Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields, rename_all = "kebab-case")]
pub struct ReportArgs {
    /// Output directory of an earlier run.
    #[arg(long = "in")]
    #[serde(rename = "in")]
    pub input: Option<PathBuf>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> Result<Option<T>, CliError> {
    match std::fs::read_to_string(path) {
        Ok(text) => serde_json::from_str(&text)
            .map(Some)
            .map_err(|e| CliError::Usage(format!("{}: {e}", path.display()))),
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(None),
        Err(e) => Err(CliError::Runtime(format!("{}: {e}", path.display()))),
    }
}

pub fn report(a: ReportArgs) -> Result<(), CliError> {
    let dir = required(&a.input, "in")?;
    let mut text = String::new();
    if let Some(t) = read_json::<MseTable>(&dir.join("mse_table.json"))? {
        text += &t.to_string();
    }
    if let Some(r) = read_json::<EstimateReport>(&dir.join("estimate.json"))? {
        text += &render_estimate(&r);
    }
    if let Some(r) = read_json::<BootstrapReport>(&dir.join("bootstrap.json"))? {
        text += &render_bootstrap(&r);
    }
    if let Some(r) = read_json::<BalanceReport>(&dir.join("balance.json"))? {
        text += &render_balance(&r);
    }
    if let Some(m) = read_json::<spikein::glm::LogisticModel>(&dir.join("model.json"))? {
        text += &format!("{:<20} {:>12} {:>12}\n", "term", "estimate", "se");
        text += &format!("{:<20} {:>12.6} {:>12.6}\n", "(intercept)", m.intercept, m.intercept_se);
        for f in &m.selected_order {
            text += &format!("{:<20} {:>12.6} {:>12.6}\n", f, m.coefficients[f], m.standard_errors[f]);
        }
    }
    if !text.is_empty() {
        emit(&text);
        Ok(())
    } else {
        Err(CliError::Usage(format!("{} holds no report artifacts", dir.display())))
    }
}
