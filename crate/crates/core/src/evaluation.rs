//! Identification confusion matrices, pairwise success tables and SUS scoring.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::psychophysics::{IdentificationTrial, TrialRecord};
use crate::texture::{Ladder, SandpaperSpec};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("no trials to evaluate")]
    Empty,
    #[error("grade {0} is not on the ladder")]
    UnknownGrade(String),
    #[error("SUS needs exactly 10 items, got {0}")]
    SusLength(usize),
    #[error("SUS item {index} is {value}; items must lie in 1..=5")]
    SusRange { index: usize, value: u8 },
    #[error("records use more than one reference ({0} and {1})")]
    MixedReference(String, String),
}

/// Counts of presented (rows) against chosen (columns) textures. Labels run
/// from roughest to smoothest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConfusionMatrix {
    pub labels: Vec<SandpaperSpec>,
    pub counts: Vec<Vec<u32>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Accuracy {
    pub overall: f64,
    /// Row-normalized diagonal; `None` for a class never presented.
    pub per_true_class: Vec<Option<f64>>,
    /// Column-normalized diagonal; `None` for a class never chosen.
    pub per_chosen_class: Vec<Option<f64>>,
}

impl ConfusionMatrix {
    pub fn total(&self) -> u32 {
        self.counts.iter().flatten().sum()
    }

    pub fn trace(&self) -> u32 {
        (0..self.counts.len()).map(|i| self.counts[i][i]).sum()
    }

    pub fn accuracy(&self) -> Result<Accuracy, EvalError> {
        accuracy(self)
    }

    /// CSV with a header of chosen labels and one row per presented label.
    pub fn write_csv<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        write!(w, "presented\\chosen")?;
        for l in &self.labels {
            write!(w, ",{}", l.fepa_grade)?;
        }
        writeln!(w)?;
        for (l, row) in self.labels.iter().zip(&self.counts) {
            write!(w, "{}", l.fepa_grade)?;
            for c in row {
                write!(w, ",{c}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Labels of the ladder in descending roughness (largest grit first).
pub fn roughness_labels(ladder: &Ladder) -> Vec<SandpaperSpec> {
    let mut labels = ladder.levels.clone();
    labels.sort_by(|a, b| b.grit_um.total_cmp(&a.grit_um));
    labels
}

pub fn confusion_from_trials(trials: &[IdentificationTrial], ladder: &Ladder) -> Result<ConfusionMatrix, EvalError> {
    if trials.is_empty() {
        return Err(EvalError::Empty);
    }
    let labels = roughness_labels(ladder);
    let idx = |s: &SandpaperSpec| {
        labels.iter().position(|l| l.fepa_grade == s.fepa_grade).ok_or_else(|| EvalError::UnknownGrade(s.fepa_grade.clone()))
    };
    let mut counts = vec![vec![0u32; labels.len()]; labels.len()];
    for t in trials {
        counts[idx(&t.presented)?][idx(&t.chosen)?] += 1;
    }
    Ok(ConfusionMatrix { labels, counts })
}

pub fn accuracy(cm: &ConfusionMatrix) -> Result<Accuracy, EvalError> {
    let total = cm.total();
    if total == 0 {
        return Err(EvalError::Empty);
    }
    let k = cm.counts.len();
    let ratio = |num: u32, den: u32| (den > 0).then(|| f64::from(num) / f64::from(den));
    Ok(Accuracy {
        overall: f64::from(cm.trace()) / f64::from(total),
        per_true_class: (0..k).map(|i| ratio(cm.counts[i][i], cm.counts[i].iter().sum())).collect(),
        per_chosen_class: (0..k).map(|j| ratio(cm.counts[j][j], cm.counts.iter().map(|r| r[j]).sum())).collect(),
    })
}

/// How a response to the equal pair is scored.
pub const EQUAL_PAIR_CONVENTION: &str = "equal pair: success = response 'reference rougher' (cmp_rougher = false)";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRow {
    /// Pair label "i-r", levels numbered in ascending roughness.
    pub pair: String,
    pub comparison: SandpaperSpec,
    pub n_trials: u32,
    pub count_cmp_rougher: u32,
    pub pct_success: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseTable {
    pub reference: SandpaperSpec,
    pub rows: Vec<PairwiseRow>,
    pub equal_pair_convention: String,
    pub warnings: Vec<String>,
}

/// Per comparison level: responses judging the comparison rougher, and the
/// percentage of correct responses. A comparison with larger grit than the
/// reference is correct when judged rougher, a smaller one when judged
/// smoother, and the equal pair per [`EQUAL_PAIR_CONVENTION`]. Ladder levels
/// without trials are omitted and reported in `warnings`.
pub fn pairwise_success_table(records: &[TrialRecord], ladder: &Ladder) -> Result<PairwiseTable, EvalError> {
    let first = records.first().ok_or(EvalError::Empty)?;
    let reference = first.reference.clone();
    if let Some(r) = records.iter().find(|r| r.reference.fepa_grade != reference.fepa_grade) {
        return Err(EvalError::MixedReference(reference.fepa_grade.clone(), r.reference.fepa_grade.clone()));
    }
    for r in records {
        if ladder.index_of(&r.comparison.fepa_grade).is_none() {
            return Err(EvalError::UnknownGrade(r.comparison.fepa_grade.clone()));
        }
    }
    let mut ascending = ladder.levels.clone();
    ascending.sort_by(|a, b| a.grit_um.total_cmp(&b.grit_um));
    let ref_no = ascending.iter().position(|l| l.fepa_grade == reference.fepa_grade).map(|i| i + 1);
    let ref_label = ref_no.map_or_else(|| reference.fepa_grade.clone(), |n| n.to_string());
    let mut rows = Vec::new();
    let mut warnings = Vec::new();
    for (i, level) in ascending.iter().enumerate() {
        let at: Vec<&TrialRecord> = records.iter().filter(|r| r.comparison.fepa_grade == level.fepa_grade).collect();
        if at.is_empty() {
            warnings.push(format!("no trials for comparison {}; level omitted", level.fepa_grade));
            continue;
        }
        let n = at.len() as u32;
        let yes = at.iter().filter(|r| r.response_cmp_rougher).count() as u32;
        let correct = if level.grit_um > reference.grit_um { yes } else { n - yes };
        rows.push(PairwiseRow {
            pair: format!("{}-{}", i + 1, ref_label),
            comparison: level.clone(),
            n_trials: n,
            count_cmp_rougher: yes,
            pct_success: 100.0 * f64::from(correct) / f64::from(n),
        });
    }
    Ok(PairwiseTable { reference, rows, equal_pair_convention: EQUAL_PAIR_CONVENTION.into(), warnings })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<u8>", into = "Vec<u8>")]
pub struct SusResponse {
    items: [u8; 10],
}

impl SusResponse {
    pub fn new(items: &[u8]) -> Result<Self, EvalError> {
        let items: [u8; 10] = items.try_into().map_err(|_| EvalError::SusLength(items.len()))?;
        if let Some((index, &value)) = items.iter().enumerate().find(|(_, v)| !(1..=5).contains(*v)) {
            return Err(EvalError::SusRange { index: index + 1, value });
        }
        Ok(SusResponse { items })
    }

    pub fn items(&self) -> &[u8; 10] {
        &self.items
    }
}

impl TryFrom<Vec<u8>> for SusResponse {
    type Error = EvalError;

    fn try_from(v: Vec<u8>) -> Result<Self, EvalError> {
        SusResponse::new(&v)
    }
}

impl From<SusResponse> for Vec<u8> {
    fn from(r: SusResponse) -> Vec<u8> {
        r.items.to_vec()
    }
}

impl std::str::FromStr for SusResponse {
    type Err = EvalError;

    /// Comma-separated items, e.g. `5,2,4,1,5,2,4,2,5,2`.
    fn from_str(s: &str) -> Result<Self, EvalError> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let items = parts
            .iter()
            .enumerate()
            .map(|(i, p)| p.parse::<u8>().map_err(|_| EvalError::SusRange { index: i + 1, value: 0 }))
            .collect::<Result<Vec<u8>, _>>()?;
        SusResponse::new(&items)
    }
}

/// Standard SUS score in [0, 100]. Items are 1-based: odd items contribute
/// `x - 1`, even items `5 - x`.
pub fn sus_score(resp: &SusResponse) -> f64 {
    let raw: u32 = resp
        .items
        .iter()
        .enumerate()
        .map(|(i, &x)| if i % 2 == 0 { u32::from(x) - 1 } else { 5 - u32::from(x) })
        .sum();
    f64::from(raw) * 2.5
}
