//! Evaluation reports.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::graph::SplitTag;
use crate::metrics::{accuracy_at, macro_roc, mean_defined, roc_auc, tune_threshold_f1, RocCurve};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LabelStatus {
    Ok,
    /// Only one class among the training nodes; no model was fitted.
    TrainSingleClass,
    /// Only one class among the test nodes; AUC undefined.
    TestSingleClass,
}

impl LabelStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            LabelStatus::Ok => "ok",
            LabelStatus::TrainSingleClass => "train-single-class",
            LabelStatus::TestSingleClass => "test-single-class",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelResult {
    pub label: usize,
    pub status: LabelStatus,
    pub auc: Option<f64>,
    pub threshold: Option<f64>,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FewShotRow {
    pub k: usize,
    pub mean: Option<f64>,
    pub sd: Option<f64>,
    pub n_valid_labels: usize,
    pub n_skipped_labels: usize,
    /// Seeds that produced at least one valid label.
    pub seeds: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub stage: u8,
    pub epoch: usize,
    pub loss: f64,
    pub valid_auc: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub seed: Option<u64>,
    pub config: serde_json::Value,
    pub labels: Vec<LabelResult>,
    /// Unweighted mean test ROC-AUC over labels with status `ok`.
    pub mean_auc: Option<f64>,
    pub mean_accuracy: Option<f64>,
    pub macro_roc_auc: Option<f64>,
    pub n_valid: usize,
    pub n_invalid: usize,
    pub few_shot: Vec<FewShotRow>,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub best_valid_auc: Option<f64>,
}

impl EvalReport {
    pub fn empty(mode: &str) -> Self {
        EvalReport {
            mode: mode.to_string(),
            seed: None,
            config: serde_json::Value::Null,
            labels: Vec::new(),
            mean_auc: None,
            mean_accuracy: None,
            macro_roc_auc: None,
            n_valid: 0,
            n_invalid: 0,
            few_shot: Vec::new(),
            epochs: Vec::new(),
            best_epoch: None,
            best_valid_auc: None,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Format(format!("evaluation report: {e}")))
    }

    pub fn labels_tsv(&self) -> String {
        let mut s = String::from("label\tstatus\tauc\tthreshold\taccuracy\n");
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for r in &self.labels {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}",
                r.label,
                r.status.as_str(),
                f(r.auc),
                f(r.threshold),
                f(r.accuracy)
            );
        }
        s
    }

    pub fn few_shot_tsv(&self) -> String {
        let mut s = String::from("k\tmean_auc\tsd\tn_valid_labels\tn_skipped_labels\tseeds\n");
        let f = |v: Option<f64>| v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"));
        for r in &self.few_shot {
            let _ = writeln!(
                s,
                "{}\t{}\t{}\t{}\t{}\t{}",
                r.k,
                f(r.mean),
                f(r.sd),
                r.n_valid_labels,
                r.n_skipped_labels,
                r.seeds
            );
        }
        s
    }

    /// `report.json`, plus `labels.tsv` / `few_shot.tsv` when non-empty.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let put = |name: &str, body: String| {
            let p = dir.join(name);
            std::fs::write(&p, body).map_err(|e| Error::io(&p, e))
        };
        put("report.json", self.to_json())?;
        if !self.labels.is_empty() {
            put("labels.tsv", self.labels_tsv())?;
        }
        if !self.few_shot.is_empty() {
            put("few_shot.tsv", self.few_shot_tsv())?;
        }
        Ok(())
    }
}

/// Per-label test metrics from full-graph scores. Thresholds are tuned on
/// validation nodes only; test labels enter only the final metrics.
/// `scores[l]` is `None` when no model could be fitted for label `l`.
pub fn evaluate_scores(
    mode: &str,
    scores: &[Option<Vec<f64>>],
    columns: &[Vec<bool>],
    split: &[SplitTag],
) -> Result<EvalReport> {
    let nodes = |t: SplitTag| -> Vec<usize> { (0..split.len()).filter(|&i| split[i] == t).collect() };
    let valid = nodes(SplitTag::Valid);
    let test = nodes(SplitTag::Test);
    if test.is_empty() {
        return Err(Error::Config("the test split is empty".into()));
    }
    // thresholds fall back to training nodes when there is no validation split
    let tune_rows = if valid.is_empty() {
        nodes(SplitTag::Train)
    } else {
        valid
    };
    let mut labels = Vec::with_capacity(columns.len());
    let mut curves = Vec::new();
    for (l, col) in columns.iter().enumerate() {
        let Some(s) = &scores[l] else {
            labels.push(LabelResult {
                label: l,
                status: LabelStatus::TrainSingleClass,
                auc: None,
                threshold: None,
                accuracy: None,
            });
            continue;
        };
        let vs: Vec<f64> = tune_rows.iter().map(|&i| s[i]).collect();
        let vl: Vec<bool> = tune_rows.iter().map(|&i| col[i]).collect();
        let threshold = tune_threshold_f1(&vs, &vl);
        let ts: Vec<f64> = test.iter().map(|&i| s[i]).collect();
        let tl: Vec<bool> = test.iter().map(|&i| col[i]).collect();
        let auc = roc_auc(&ts, &tl);
        if let Some(c) = RocCurve::from_scores(&ts, &tl) {
            curves.push(c);
        }
        labels.push(LabelResult {
            label: l,
            status: if auc.is_some() {
                LabelStatus::Ok
            } else {
                LabelStatus::TestSingleClass
            },
            auc,
            threshold: Some(threshold),
            accuracy: auc.map(|_| accuracy_at(&ts, &tl, threshold)),
        });
    }
    let aucs: Vec<Option<f64>> = labels.iter().map(|r| r.auc).collect();
    let accs: Vec<Option<f64>> = labels.iter().map(|r| r.accuracy).collect();
    let n_valid = aucs.iter().flatten().count();
    Ok(EvalReport {
        mean_auc: mean_defined(&aucs),
        mean_accuracy: mean_defined(&accs),
        macro_roc_auc: macro_roc(&curves).map(|c| c.auc),
        n_valid,
        n_invalid: labels.len() - n_valid,
        labels,
        ..EvalReport::empty(mode)
    })
}
