//! Subjects, datasets and the CSV interchange format.
//!
//! One row per subject. The header is
//! `id,source,w,y,<covariates...>[,yt,yc][,e][,prog]`; simulated data names
//! its covariates `x1..xd`. Floats are written in shortest round-trip form, so
//! a write/read cycle is lossless.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Odb,
    Rct,
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Source::Odb => "odb",
            Source::Rct => "rct",
        })
    }
}

impl FromStr for Source {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "odb" => Ok(Source::Odb),
            "rct" => Ok(Source::Rct),
            other => Err(format!("unknown source {other:?} (expected odb or rct)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Subject {
    pub id: String,
    pub source: Source,
    pub covariates: Vec<f64>,
    pub treated: bool,
    pub outcome: f64,
    /// `(Y_t, Y_c)`, known only for simulated data.
    pub potential_outcomes: Option<(f64, f64)>,
    pub propensity: Option<f64>,
    pub prognostic: Option<f64>,
}

impl Subject {
    fn validate(&self, d: usize) -> Result<()> {
        if self.covariates.len() != d {
            return Err(Error::Validation(format!(
                "subject {:?} has {} covariates, expected {d}",
                self.id,
                self.covariates.len()
            )));
        }
        if !self.outcome.is_finite() || self.covariates.iter().any(|x| !x.is_finite()) {
            return Err(Error::Validation(format!(
                "subject {:?} has a non-finite value",
                self.id
            )));
        }
        if let Some(p) = self.propensity {
            if !(p > 0.0 && p < 1.0) {
                return Err(Error::Validation(format!(
                    "subject {:?} has propensity {p} outside (0, 1)",
                    self.id
                )));
            }
        }
        if let Some((yt, yc)) = self.potential_outcomes {
            let chosen = if self.treated { yt } else { yc };
            if (chosen - self.outcome).abs() > 1e-12 * self.outcome.abs().max(1.0) {
                return Err(Error::Validation(format!(
                    "subject {:?}: observed outcome {} does not match its potential outcome {chosen}",
                    self.id, self.outcome
                )));
            }
        }
        Ok(())
    }
}

/// The common RCT assignment probability. Serialized as the bare number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "f64", into = "f64")]
pub struct RctDesign {
    p_r: f64,
}

impl RctDesign {
    pub fn new(p_r: f64) -> Result<Self> {
        if p_r > 0.0 && p_r < 1.0 {
            Ok(Self { p_r })
        } else {
            Err(Error::Validation(format!(
                "RCT assignment probability {p_r} must lie in (0, 1)"
            )))
        }
    }

    pub fn p_r(&self) -> f64 {
        self.p_r
    }
}

impl TryFrom<f64> for RctDesign {
    type Error = Error;

    fn try_from(p_r: f64) -> Result<Self> {
        Self::new(p_r)
    }
}

impl From<RctDesign> for f64 {
    fn from(d: RctDesign) -> f64 {
        d.p_r
    }
}

impl Default for RctDesign {
    fn default() -> Self {
        Self { p_r: 0.5 }
    }
}

/// The slice of a subject that stratification and estimation look at.
///
/// `propensity` is the ODB propensity `e(x)` used for binning. For RCT members
/// it is the score they would have had in the ODB, not their assignment
/// probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Observation {
    pub source: Source,
    pub treated: bool,
    pub outcome: f64,
    pub propensity: f64,
    pub prognostic: Option<f64>,
    pub potential: Option<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    subjects: Vec<Subject>,
    covariate_names: Vec<String>,
    pub metadata: BTreeMap<String, String>,
}

impl Dataset {
    pub fn new(subjects: Vec<Subject>, covariate_names: Vec<String>) -> Result<Self> {
        let d = covariate_names.len();
        let mut seen: HashMap<&str, Source> = HashMap::with_capacity(subjects.len());
        for s in &subjects {
            s.validate(d)?;
            if let Some(prev) = seen.insert(&s.id, s.source) {
                return Err(if prev != s.source {
                    Error::Disjointness(s.id.clone())
                } else {
                    Error::Validation(format!("duplicate subject id {:?}", s.id))
                });
            }
        }
        Ok(Self {
            subjects,
            covariate_names,
            metadata: BTreeMap::new(),
        })
    }

    pub fn subjects(&self) -> &[Subject] {
        &self.subjects
    }

    pub fn covariate_names(&self) -> &[String] {
        &self.covariate_names
    }

    pub fn covariate_index(&self, name: &str) -> Option<usize> {
        self.covariate_names.iter().position(|c| c == name)
    }

    pub fn len(&self) -> usize {
        self.subjects.len()
    }

    pub fn is_empty(&self) -> bool {
        self.subjects.is_empty()
    }

    pub fn n_odb(&self) -> usize {
        self.subjects.iter().filter(|s| s.source == Source::Odb).count()
    }

    pub fn n_rct(&self) -> usize {
        self.subjects.iter().filter(|s| s.source == Source::Rct).count()
    }

    pub fn has_potential_outcomes(&self) -> bool {
        !self.subjects.is_empty() && self.subjects.iter().all(|s| s.potential_outcomes.is_some())
    }

    /// Subjects of one source, as a new dataset sharing the covariate names.
    pub fn partition(&self, source: Source) -> Dataset {
        Dataset {
            subjects: self.subjects.iter().filter(|s| s.source == source).cloned().collect(),
            covariate_names: self.covariate_names.clone(),
            metadata: self.metadata.clone(),
        }
    }

    /// Concatenate two datasets with identical covariate names.
    pub fn merge(&self, other: &Dataset) -> Result<Dataset> {
        if self.covariate_names != other.covariate_names {
            return Err(Error::Validation("datasets have different covariate columns".into()));
        }
        let mut subjects = self.subjects.clone();
        subjects.extend(other.subjects.iter().cloned());
        let mut out = Dataset::new(subjects, self.covariate_names.clone())?;
        out.metadata = self.metadata.clone();
        Ok(out)
    }

    pub(crate) fn subjects_mut(&mut self) -> &mut [Subject] {
        &mut self.subjects
    }

    /// Stratification view of every subject. Fails on the first subject
    /// without a propensity score.
    pub fn observations(&self) -> Result<Vec<Observation>> {
        self.subjects
            .iter()
            .map(|s| {
                let propensity = s.propensity.ok_or_else(|| Error::MissingPropensity(s.id.clone()))?;
                Ok(Observation {
                    source: s.source,
                    treated: s.treated,
                    outcome: s.outcome,
                    propensity,
                    prognostic: s.prognostic,
                    potential: s.potential_outcomes,
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Format {
    #[default]
    Csv,
}

const FIXED: [&str; 4] = ["id", "source", "w", "y"];

pub fn read_dataset(path: impl AsRef<Path>, format: Format) -> Result<Dataset> {
    let path = path.as_ref();
    match format {
        Format::Csv => {
            let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
            read_csv(file, path)
        }
    }
}

fn read_csv<R: std::io::Read>(reader: R, path: &Path) -> Result<Dataset> {
    let parse_err = |row: usize, message: String| Error::Parse {
        path: path.to_path_buf(),
        row,
        message,
    };

    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr.headers()?.clone();
    let names: Vec<&str> = headers.iter().collect();
    if names.len() < FIXED.len() || names[..4] != FIXED {
        return Err(parse_err(1, format!("header must start with {}", FIXED.join(","))));
    }

    let mut covariates = Vec::new();
    let (mut yt, mut yc, mut e, mut prog) = (None, None, None, None);
    for (i, &name) in names.iter().enumerate().skip(4) {
        let slot = match name {
            "yt" => &mut yt,
            "yc" => &mut yc,
            "e" => &mut e,
            "prog" => &mut prog,
            _ => {
                covariates.push((i, name.to_string()));
                continue;
            }
        };
        if slot.replace(i).is_some() {
            return Err(parse_err(1, format!("duplicate column {name:?}")));
        }
    }
    if yt.is_some() != yc.is_some() {
        return Err(parse_err(1, "yt and yc must appear together".into()));
    }

    let mut subjects = Vec::new();
    for record in rdr.records() {
        let record = record?;
        let row = record.position().map_or(subjects.len() + 2, |p| p.line() as usize);
        if record.len() != names.len() {
            return Err(parse_err(
                row,
                format!("expected {} fields, found {}", names.len(), record.len()),
            ));
        }
        let num = |i: usize| -> Result<f64> {
            let field = &record[i];
            field
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| parse_err(row, format!("column {}: {field:?} is not a number", names[i])))
        };
        let opt = |i: Option<usize>| -> Result<Option<f64>> {
            match i {
                Some(i) if !record[i].is_empty() => num(i).map(Some),
                _ => Ok(None),
            }
        };

        let source: Source = record[1].parse().map_err(|m| parse_err(row, m))?;
        let treated = match &record[2] {
            "0" => false,
            "1" => true,
            other => {
                return Err(Error::Validation(format!(
                    "row {row}: treatment indicator {other:?} must be 0 or 1"
                )))
            }
        };
        let potential = match (opt(yt)?, opt(yc)?) {
            (Some(t), Some(c)) => Some((t, c)),
            (None, None) => None,
            _ => return Err(parse_err(row, "yt and yc must both be present or both empty".into())),
        };
        subjects.push(Subject {
            id: record[0].to_string(),
            source,
            covariates: covariates.iter().map(|&(i, _)| num(i)).collect::<Result<_>>()?,
            treated,
            outcome: num(3)?,
            potential_outcomes: potential,
            propensity: opt(e)?,
            prognostic: opt(prog)?,
        });
    }

    Dataset::new(subjects, covariates.into_iter().map(|(_, n)| n).collect())
}

pub fn write_dataset(data: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    write_csv(data, file).map_err(|e| match e {
        Error::Csv(c) if c.is_io_error() => match c.into_kind() {
            csv::ErrorKind::Io(io) => Error::io(path, io),
            _ => unreachable!(),
        },
        other => other,
    })
}

pub(crate) fn write_csv<W: std::io::Write>(data: &Dataset, writer: W) -> Result<()> {
    let with_po = data.subjects.iter().any(|s| s.potential_outcomes.is_some());
    let with_e = data.subjects.iter().any(|s| s.propensity.is_some());
    let with_prog = data.subjects.iter().any(|s| s.prognostic.is_some());

    let mut header: Vec<String> = FIXED.iter().map(|s| s.to_string()).collect();
    header.extend(data.covariate_names.iter().cloned());
    if with_po {
        header.extend(["yt".to_string(), "yc".to_string()]);
    }
    if with_e {
        header.push("e".into());
    }
    if with_prog {
        header.push("prog".into());
    }

    let mut wtr = csv::Writer::from_writer(writer);
    wtr.write_record(&header)?;
    let fmt_opt = |v: Option<f64>| v.map(|v| v.to_string()).unwrap_or_default();
    for s in &data.subjects {
        let mut row = vec![
            s.id.clone(),
            s.source.to_string(),
            if s.treated { "1" } else { "0" }.to_string(),
            s.outcome.to_string(),
        ];
        row.extend(s.covariates.iter().map(f64::to_string));
        if with_po {
            row.push(fmt_opt(s.potential_outcomes.map(|p| p.0)));
            row.push(fmt_opt(s.potential_outcomes.map(|p| p.1)));
        }
        if with_e {
            row.push(fmt_opt(s.propensity));
        }
        if with_prog {
            row.push(fmt_opt(s.prognostic));
        }
        wtr.write_record(&row)?;
    }
    wtr.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn read_str(s: &str) -> Result<Dataset> {
        read_csv(s.as_bytes(), Path::new("mem.csv"))
    }

    #[test]
    fn three_rows_two_sources() {
        let ds = read_str("id,source,w,y,x1\na,odb,1,2.5,0.1\nb,ODB,0,1,0.2\nc,Rct,1,3,-1\n").unwrap();
        assert_eq!(ds.n_odb(), 2);
        assert_eq!(ds.n_rct(), 1);
        assert_eq!(ds.covariate_names(), ["x1"]);
    }

    #[test]
    fn id_in_both_sources_is_rejected() {
        let err = read_str("id,source,w,y,x1\na,odb,1,2.5,0.1\na,rct,0,1,0.2\n").unwrap_err();
        assert!(matches!(err, Error::Disjointness(id) if id == "a"));
    }

    #[test]
    fn bad_rows_report_their_line() {
        let err = read_str("id,source,w,y,x1\na,odb,1,2.5,0.1\nb,odb,0,oops,0.2\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 3, .. }), "{err}");
        let err = read_str("id,source,w,y,x1\na,odb,1,2.5\n").unwrap_err();
        assert!(matches!(err, Error::Parse { row: 2, .. }), "{err}");
        // Missing covariates are not imputed.
        let err = read_str("id,source,w,y,x1\na,odb,1,2.5,\n").unwrap_err();
        assert!(matches!(err, Error::Parse { .. }), "{err}");
    }

    #[test]
    fn treatment_must_be_binary() {
        let err = read_str("id,source,w,y,x1\na,odb,2,2.5,0.1\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn empty_dataset_writes_header_only() {
        let ds = Dataset::new(vec![], vec!["x1".into(), "x2".into()]).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "id,source,w,y,x1,x2\n");
    }

    #[test]
    fn potential_outcomes_get_columns() {
        let s = Subject {
            id: "s1".into(),
            source: Source::Odb,
            covariates: vec![0.5],
            treated: true,
            outcome: 2.0,
            potential_outcomes: Some((2.0, 1.0)),
            propensity: Some(0.25),
            prognostic: None,
        };
        let ds = Dataset::new(vec![s], vec!["x1".into()]).unwrap();
        let mut buf = Vec::new();
        write_csv(&ds, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text, "id,source,w,y,x1,yt,yc,e\ns1,odb,1,2,0.5,2,1,0.25\n");
    }

    #[test]
    fn inconsistent_potential_outcome_is_rejected() {
        let err = read_str("id,source,w,y,x1,yt,yc\na,odb,1,2.5,0.1,3,2.5\n").unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    fn arb_subject(d: usize) -> impl Strategy<Value = Subject> {
        (
            any::<bool>(),
            any::<bool>(),
            prop::collection::vec(-1e6f64..1e6, d),
            (-1e3f64..1e3, -1e3f64..1e3),
            prop::option::of(1e-9f64..0.999_999),
            prop::option::of(-50f64..50.0),
            any::<bool>(),
        )
            .prop_map(
                |(rct, treated, covariates, (yt, yc), propensity, prognostic, po)| Subject {
                    id: String::new(),
                    source: if rct { Source::Rct } else { Source::Odb },
                    covariates,
                    treated,
                    outcome: if treated { yt } else { yc },
                    potential_outcomes: po.then_some((yt, yc)),
                    propensity,
                    prognostic,
                },
            )
    }

    proptest! {
        #[test]
        fn csv_round_trip_is_lossless(mut subjects in prop::collection::vec(arb_subject(3), 0..40)) {
            for (i, s) in subjects.iter_mut().enumerate() {
                s.id = format!("id-{i}");
            }
            // Potential outcomes are all-or-nothing per file.
            let all_po = subjects.iter().all(|s| s.potential_outcomes.is_some());
            if !all_po {
                for s in &mut subjects {
                    s.potential_outcomes = None;
                }
            }
            let ds = Dataset::new(subjects, vec!["x1".into(), "x2".into(), "x3".into()]).unwrap();
            let mut buf = Vec::new();
            write_csv(&ds, &mut buf).unwrap();
            let back = read_csv(buf.as_slice(), Path::new("mem.csv")).unwrap();
            prop_assert_eq!(back.len(), ds.len());
            for (a, b) in ds.subjects().iter().zip(back.subjects()) {
                prop_assert_eq!(&a.id, &b.id);
                prop_assert_eq!(a.source, b.source);
                prop_assert_eq!(a.treated, b.treated);
                prop_assert!((a.outcome - b.outcome).abs() <= 1e-12);
                for (x, y) in a.covariates.iter().zip(&b.covariates) {
                    prop_assert!((x - y).abs() <= 1e-12);
                }
                prop_assert_eq!(a.propensity, b.propensity);
                prop_assert_eq!(a.prognostic, b.prognostic);
                prop_assert_eq!(a.potential_outcomes, b.potential_outcomes);
            }
        }
    }
}
