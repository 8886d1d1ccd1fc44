//! OOD-detection scoring and AUROC reports.
//!
//! OOD is the positive class and every ranking score is oriented so that
//! higher means "more OOD": mutual information as is, max probability and
//! log-precision negated, and the baseline's in-domain logit negated.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::data::Dataset;
use crate::dirichlet::UncertaintyScores;
use crate::error::{Error, Result};
use crate::numeric::{mean, median, sigmoid, std_dev};
use crate::trainer::Model;

/// Which OOD source a report row compares against the in-domain holdout.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    /// Held-out samples of the training-time OOD source.
    Seen,
    /// The test-time OOD source never shown during training.
    Unseen,
}

impl Split {
    pub const ALL: [Split; 2] = [Split::Seen, Split::Unseen];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Seen => "seen",
            Split::Unseen => "unseen",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Measure {
    MaxProbability,
    MutualInformation,
    Precision,
    /// Binary in-domain vs OOD classifier.
    Baseline,
}

impl Measure {
    pub const DIRICHLET: [Measure; 3] = [Measure::MaxProbability, Measure::MutualInformation, Measure::Precision];

    pub fn as_str(self) -> &'static str {
        match self {
            Measure::MaxProbability => "max_probability",
            Measure::MutualInformation => "mutual_information",
            Measure::Precision => "precision",
            Measure::Baseline => "baseline",
        }
    }

    /// Ranking score, higher = more OOD.
    pub fn ood_score(self, s: &UncertaintyScores) -> f64 {
        match self {
            Measure::MaxProbability => -s.max_probability,
            Measure::MutualInformation => s.mutual_information,
            Measure::Precision | Measure::Baseline => -s.log_precision,
        }
    }

    /// Value reported in the mean/median columns: the measure itself
    /// (log-precision for precision, P(OOD) for the baseline).
    fn display_value(self, s: &UncertaintyScores) -> f64 {
        match self {
            Measure::MaxProbability => s.max_probability,
            Measure::MutualInformation => s.mutual_information,
            Measure::Precision => s.log_precision,
            Measure::Baseline => sigmoid(-s.log_precision),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Display for Measure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown split `{s}`")))
    }
}

impl FromStr for Measure {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Measure::DIRICHLET
            .into_iter()
            .chain([Measure::Baseline])
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::invalid(format!("unknown measure `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Provenance {
    HoldoutId,
    HoldoutOod,
    UnseenOod,
}

/// Per-sample scores of one dataset.
///
/// For a single-logit baseline model the record is filled from that logit
/// `z` treated as a one-class Dirichlet: `log_precision = z`, so the shared
/// orientation rule ranks baseline samples by `−z`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredSet {
    pub provenance: Provenance,
    pub scores: Vec<UncertaintyScores>,
}

impl ScoredSet {
    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn oriented(&self, measure: Measure) -> Vec<f64> {
        self.scores.iter().map(|s| measure.ood_score(s)).collect()
    }

    fn values(&self, measure: Measure) -> Vec<f64> {
        self.scores.iter().map(|s| measure.display_value(s)).collect()
    }
}

/// Scores of one logit vector; a single logit is the baseline record
/// described on [`ScoredSet`].
pub fn scores_of_logits(z: &[f64]) -> Result<UncertaintyScores> {
    if let [logit] = z {
        Ok(UncertaintyScores {
            max_probability: 1.0,
            mutual_information: 0.0,
            precision: logit.exp(),
            log_precision: *logit,
            expected_entropy: 0.0,
        })
    } else {
        UncertaintyScores::from_logits(z)
    }
}

pub fn score_dataset(model: &Model, data: &Dataset, provenance: Provenance) -> Result<ScoredSet> {
    let scores = model
        .logits(data)?
        .iter()
        .map(|z| scores_of_logits(z))
        .collect::<Result<Vec<_>>>()?;
    Ok(ScoredSet { provenance, scores })
}

/// Probability that a random OOD score exceeds a random in-domain score,
/// ties counting one half.
///
/// Counts are accumulated as integers (`2·greater + ties`) after sorting the
/// in-domain scores, so the result is exactly the brute-force pair count.
pub fn auroc(ood: &[f64], id: &[f64]) -> Result<f64> {
    if ood.is_empty() || id.is_empty() {
        return Err(Error::Empty("auroc needs both score sets".into()));
    }
    if ood.iter().chain(id).any(|v| v.is_nan()) {
        return Err(Error::invalid("auroc score is NaN"));
    }
    let mut sorted = id.to_vec();
    sorted.sort_by(f64::total_cmp);
    // -0.0 and 0.0 must tie, so compare with partial order
    let twice: u128 = ood
        .iter()
        .map(|&x| {
            let below = sorted.partition_point(|&v| v < x);
            let not_above = sorted.partition_point(|&v| v <= x);
            (2 * below + (not_above - below)) as u128
        })
        .sum();
    Ok(twice as f64 / (2 * ood.len() as u128 * id.len() as u128) as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub run_seed: u64,
    pub split: Split,
    pub measure: Measure,
    pub auroc: f64,
    pub mean_score_id: f64,
    pub mean_score_ood: f64,
    pub median_score_id: f64,
    pub median_score_ood: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ReportRow>,
}

pub const REPORT_HEADER: [&str; 6] = [
    "run_seed",
    "split",
    "measure",
    "auroc",
    "mean_score_id",
    "mean_score_ood",
];

fn row(seed: u64, split: Split, measure: Measure, id: &ScoredSet, ood: &ScoredSet) -> Result<ReportRow> {
    let (vid, vood) = (id.values(measure), ood.values(measure));
    Ok(ReportRow {
        run_seed: seed,
        split,
        measure,
        auroc: auroc(&ood.oriented(measure), &id.oriented(measure))?,
        mean_score_id: mean(&vid),
        mean_score_ood: mean(&vood),
        median_score_id: median(&vid),
        median_score_ood: median(&vood),
    })
}

/// Three Dirichlet measures and the baseline, each on the seen and unseen
/// split. `holdout_ood` is the held-out part of the training-time OOD source.
pub fn build_report(
    model: &Model,
    baseline: &Model,
    holdout_id: &Dataset,
    holdout_ood: &Dataset,
    unseen_ood: &Dataset,
    run_seed: u64,
) -> Result<EvalReport> {
    if model.is_binary() {
        return Err(Error::invalid("first model must be the multi-class network"));
    }
    if !baseline.is_binary() {
        return Err(Error::invalid("baseline model must have a single output"));
    }
    for (name, d) in [
        ("holdout_id", holdout_id),
        ("holdout_ood", holdout_ood),
        ("unseen_ood", unseen_ood),
    ] {
        if d.is_empty() {
            return Err(Error::Empty(format!("{name} split is empty")));
        }
    }
    let score = |m: &Model, d: &Dataset, p| score_dataset(m, d, p);
    let id = score(model, holdout_id, Provenance::HoldoutId)?;
    let seen = score(model, holdout_ood, Provenance::HoldoutOod)?;
    let unseen = score(model, unseen_ood, Provenance::UnseenOod)?;
    let b_id = score(baseline, holdout_id, Provenance::HoldoutId)?;
    let b_seen = score(baseline, holdout_ood, Provenance::HoldoutOod)?;
    let b_unseen = score(baseline, unseen_ood, Provenance::UnseenOod)?;

    let mut rows = Vec::with_capacity(8);
    for (split, ood, b_ood) in [(Split::Seen, &seen, &b_seen), (Split::Unseen, &unseen, &b_unseen)] {
        for m in Measure::DIRICHLET {
            rows.push(row(run_seed, split, m, &id, ood)?);
        }
        rows.push(row(run_seed, split, Measure::Baseline, &b_id, b_ood)?);
    }
    Ok(EvalReport { rows })
}

impl EvalReport {
    pub fn get(&self, split: Split, measure: Measure) -> Option<&ReportRow> {
        self.rows.iter().find(|r| r.split == split && r.measure == measure)
    }

    pub fn auroc(&self, split: Split, measure: Measure) -> Option<f64> {
        self.get(split, measure).map(|r| r.auroc)
    }

    /// Writes the rows of several reports to one CSV file.
    pub fn write_csv(reports: &[EvalReport], path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(REPORT_HEADER)?;
        for r in reports.iter().flat_map(|r| &r.rows) {
            w.write_record([
                r.run_seed.to_string(),
                r.split.to_string(),
                r.measure.to_string(),
                r.auroc.to_string(),
                r.mean_score_id.to_string(),
                r.mean_score_ood.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let seed = self.rows.first().map_or(0, |r| r.run_seed);
        let _ = writeln!(s, "run seed {seed}");
        let _ = writeln!(
            s,
            "{:<7} {:<19} {:>7} {:>12} {:>12} {:>12} {:>12}",
            "split", "measure", "auroc", "mean_id", "mean_ood", "median_id", "median_ood"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<7} {:<19} {:>7.4} {:>12.5} {:>12.5} {:>12.5} {:>12.5}",
                r.split.as_str(),
                r.measure.as_str(),
                r.auroc,
                r.mean_score_id,
                r.mean_score_ood,
                r.median_score_id,
                r.median_score_ood
            );
        }
        s
    }
}

/// AUROC of one (split, measure) cell across runs.
#[derive(Debug, Clone, PartialEq)]
pub struct AggregateRow {
    pub split: Split,
    pub measure: Measure,
    pub runs: usize,
    pub mean_auroc: f64,
    pub std_auroc: f64,
}

/// Mean and sample standard deviation of every cell over the given runs.
pub fn aggregate(reports: &[EvalReport]) -> Result<Vec<AggregateRow>> {
    let first = reports
        .first()
        .ok_or_else(|| Error::Empty("no reports to aggregate".into()))?;
    first
        .rows
        .iter()
        .map(|cell| {
            let values = reports
                .iter()
                .map(|r| {
                    r.auroc(cell.split, cell.measure)
                        .ok_or_else(|| Error::invalid(format!("report lacks {}/{}", cell.split, cell.measure)))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(AggregateRow {
                split: cell.split,
                measure: cell.measure,
                runs: values.len(),
                mean_auroc: mean(&values),
                std_auroc: std_dev(&values),
            })
        })
        .collect()
}

pub fn write_aggregate_csv(rows: &[AggregateRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["split", "measure", "runs", "auroc_mean", "auroc_std"])?;
    for r in rows {
        w.write_record([
            r.split.to_string(),
            r.measure.to_string(),
            r.runs.to_string(),
            r.mean_auroc.to_string(),
            r.std_auroc.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn aggregate_summary(rows: &[AggregateRow]) -> String {
    let mut s = String::new();
    let runs = rows.first().map_or(0, |r| r.runs);
    let _ = writeln!(s, "AUROC over {runs} runs (mean ± std)");
    let _ = writeln!(s, "{:<19} {:>17} {:>17}", "measure", "seen", "unseen");
    let mut measures: Vec<Measure> = rows.iter().map(|r| r.measure).collect();
    measures.dedup();
    for m in measures {
        let cell = |split| {
            rows.iter()
                .find(|r| r.measure == m && r.split == split)
                .map_or("-".to_string(), |r| format!("{:.4} ± {:.4}", r.mean_auroc, r.std_auroc))
        };
        let _ = writeln!(
            s,
            "{:<19} {:>17} {:>17}",
            m.as_str(),
            cell(Split::Seen),
            cell(Split::Unseen)
        );
    }
    s
}
