//! Metrics reports and the ablation table.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use super::metrics::{accuracy, auc, confusion, dichotomize, f1, one_nearest_accuracy};
use crate::error::{Error, Result};
use crate::model::{argmax_rows, Mode};
use crate::tensor::Tensor;

/// Exp. A predicts good/bad outcome; Exp. B the individual mRS score.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Experiment {
    Dichotomised,
    Individual,
}

impl Experiment {
    pub fn num_classes(self) -> usize {
        match self {
            Experiment::Dichotomised => 2,
            Experiment::Individual => 7,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Dichotomised => "dichotomised",
            Experiment::Individual => "individual",
        }
    }

    /// Training/evaluation label for an mRS score.
    pub fn label(self, mrs: usize) -> Result<usize> {
        match self {
            Experiment::Dichotomised => dichotomize(mrs),
            Experiment::Individual if mrs <= 6 => Ok(mrs),
            Experiment::Individual => Err(Error::param(format!("mRS {mrs} outside 0..=6"))),
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "dichotomised" | "dichotomized" => Ok(Experiment::Dichotomised),
            "individual" => Ok(Experiment::Individual),
            other => Err(Error::config(format!(
                "unknown experiment `{other}` (dichotomised|individual)"
            ))),
        }
    }
}

pub const POSITIVE_CLASS: &str = "good(mRS 0-2)";

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub experiment: Experiment,
    pub mode: Mode,
    pub attention_enabled: bool,
    pub n_samples: usize,
    pub accuracy: f64,
    /// Dichotomised runs only.
    pub f1: Option<f64>,
    /// Dichotomised runs only.
    pub auc: Option<f64>,
    /// Individual runs only.
    pub one_nearest_accuracy: Option<f64>,
    /// Individual runs only: accuracy after mapping predictions and truth
    /// to good/bad.
    pub dichotomised_accuracy: Option<f64>,
    /// `confusion[truth][pred]`.
    pub confusion: Vec<Vec<usize>>,
}

impl MetricsReport {
    /// Scores `N×C` class probabilities against experiment labels.
    pub fn evaluate(
        probs: &Tensor,
        truth: &[usize],
        experiment: Experiment,
        mode: Mode,
        attention_enabled: bool,
    ) -> Result<Self> {
        let c = experiment.num_classes();
        if probs.rank() != 2 || probs.dim(1) != c || probs.dim(0) != truth.len() {
            return Err(Error::shape(format!(
                "{experiment} evaluation needs {}×{c} probabilities, got {:?}",
                truth.len(),
                probs.shape()
            )));
        }
        let pred = argmax_rows(probs);
        let mut report = MetricsReport {
            experiment,
            mode,
            attention_enabled,
            n_samples: truth.len(),
            accuracy: accuracy(&pred, truth)?,
            f1: None,
            auc: None,
            one_nearest_accuracy: None,
            dichotomised_accuracy: None,
            confusion: confusion(&pred, truth, c)?,
        };
        match experiment {
            Experiment::Dichotomised => {
                report.f1 = Some(f1(&pred, truth, 0)?);
                let good: Vec<f64> = probs.data().chunks(c).map(|row| row[0]).collect();
                let positive: Vec<bool> = truth.iter().map(|&t| t == 0).collect();
                report.auc = Some(auc(&good, &positive)?);
            }
            Experiment::Individual => {
                report.one_nearest_accuracy = Some(one_nearest_accuracy(&pred, truth)?);
                let dp = pred.iter().map(|&p| dichotomize(p)).collect::<Result<Vec<_>>>()?;
                let dt = truth.iter().map(|&t| dichotomize(t)).collect::<Result<Vec<_>>>()?;
                report.dichotomised_accuracy = Some(accuracy(&dp, &dt)?);
            }
        }
        Ok(report)
    }

    /// Recall of class `k` read off the confusion matrix.
    pub fn recall(&self, k: usize) -> Option<f64> {
        let row = self.confusion.get(k)?;
        let support: usize = row.iter().sum();
        (support > 0).then(|| row[k] as f64 / support as f64)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("experiment", self.experiment.to_string());
        kv("mode", self.mode.to_string());
        kv("attention_enabled", self.attention_enabled.to_string());
        kv("n_samples", self.n_samples.to_string());
        kv("positive_class", POSITIVE_CLASS.to_string());
        kv("accuracy", format!("{:?}", self.accuracy));
        let optional = [
            ("f1", self.f1),
            ("auc", self.auc),
            ("one_nearest_accuracy", self.one_nearest_accuracy),
            ("dichotomised_accuracy", self.dichotomised_accuracy),
        ];
        for (k, v) in optional {
            if let Some(v) = v {
                kv(k, format!("{v:?}"));
            }
        }
        s.push_str("confusion_matrix=rows are truth, columns are predictions\n");
        for row in &self.confusion {
            let cells: Vec<String> = row.iter().map(usize::to_string).collect();
            s.push_str(&cells.join(","));
            s.push('\n');
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let bad = |m: String| Error::Format {
            path: "report".into(),
            reason: m,
        };
        let mut lines = text.lines();
        let mut get = std::collections::HashMap::new();
        for line in lines.by_ref() {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| bad(format!("expected key=value, got `{line}`")))?;
            if k == "confusion_matrix" {
                break;
            }
            get.insert(k.to_string(), v.to_string());
        }
        let field = |k: &str| get.get(k).ok_or_else(|| bad(format!("missing `{k}`")));
        let num = |k: &str| -> Result<Option<f64>> {
            get.get(k)
                .map(|v| v.parse::<f64>().map_err(|_| bad(format!("bad number for `{k}`"))))
                .transpose()
        };
        let confusion = lines
            .filter(|l| !l.trim().is_empty())
            .map(|l| {
                l.split(',')
                    .map(|c| {
                        c.trim()
                            .parse::<usize>()
                            .map_err(|_| bad(format!("bad confusion row `{l}`")))
                    })
                    .collect()
            })
            .collect::<Result<Vec<Vec<usize>>>>()?;
        Ok(MetricsReport {
            experiment: field("experiment")?.parse()?,
            mode: field("mode")?.parse()?,
            attention_enabled: field("attention_enabled")?
                .parse()
                .map_err(|_| bad("bad attention flag".into()))?,
            n_samples: field("n_samples")?.parse().map_err(|_| bad("bad n_samples".into()))?,
            accuracy: num("accuracy")?.ok_or_else(|| bad("missing `accuracy`".into()))?,
            f1: num("f1")?,
            auc: num("auc")?,
            one_nearest_accuracy: num("one_nearest_accuracy")?,
            dichotomised_accuracy: num("dichotomised_accuracy")?,
            confusion,
        })
    }
}

pub const ABLATION_HEADER: &str =
    "mode,attention,dichotomised_accuracy,dichotomised_f1,dichotomised_auc,individual_accuracy,individual_one_nearest";

/// One CSV row per (mode, attention) variant, pairing its dichotomised and
/// individual reports. Missing cells are left empty.
pub fn ablation_table(reports: &[MetricsReport]) -> String {
    let mut keys: Vec<(Mode, bool)> = reports.iter().map(|r| (r.mode, r.attention_enabled)).collect();
    keys.sort_by_key(|(m, a)| (m.as_str(), !a));
    keys.dedup();
    let cell = |v: Option<f64>| v.map_or(String::new(), |v| format!("{v:.4}"));
    let mut out = String::from(ABLATION_HEADER);
    out.push('\n');
    for (mode, att) in keys {
        let find = |e: Experiment| {
            reports
                .iter()
                .find(|r| r.mode == mode && r.attention_enabled == att && r.experiment == e)
        };
        let d = find(Experiment::Dichotomised);
        let i = find(Experiment::Individual);
        let cells = [
            cell(d.map(|r| r.accuracy)),
            cell(d.and_then(|r| r.f1)),
            cell(d.and_then(|r| r.auc)),
            cell(i.map(|r| r.accuracy)),
            cell(i.and_then(|r| r.one_nearest_accuracy)),
        ];
        writeln!(out, "{mode},{},{}", if att { "on" } else { "off" }, cells.join(",")).unwrap();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn probs(rows: &[&[f64]]) -> Tensor {
        let c = rows[0].len();
        Tensor::new(&[rows.len(), c], rows.iter().flat_map(|r| r.iter().copied()).collect()).unwrap()
    }

    #[test]
    fn dichotomised_report_fields() {
        let p = probs(&[&[0.9, 0.1], &[0.2, 0.8], &[0.6, 0.4], &[0.3, 0.7]]);
        let r = MetricsReport::evaluate(&p, &[0, 1, 1, 0], Experiment::Dichotomised, Mode::Multimodal, true).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert!(r.auc.is_some() && r.f1.is_some());
        assert!(r.one_nearest_accuracy.is_none());
        assert_eq!(r.confusion.iter().flatten().sum::<usize>(), 4);
        let text = r.to_text();
        assert!(text.contains("auc=") && !text.contains("one_nearest"));
        assert_eq!(MetricsReport::parse(&text).unwrap(), r);
    }

    #[test]
    fn individual_report_fields() {
        let mut rows = [[0.0; 7]; 3];
        rows[0][3] = 1.0;
        rows[1][0] = 1.0;
        rows[2][6] = 1.0;
        let p = probs(&rows.iter().map(|r| r.as_slice()).collect::<Vec<_>>());
        let r = MetricsReport::evaluate(&p, &[4, 2, 6], Experiment::Individual, Mode::ImageOnly, false).unwrap();
        assert!(r.auc.is_none() && r.f1.is_none());
        assert_eq!(r.one_nearest_accuracy, Some(2.0 / 3.0));
        assert_eq!(r.accuracy, 1.0 / 3.0);
        // predictions {3,0,6} → {1,0,1}, truth {4,2,6} → {1,0,1}
        assert_eq!(r.dichotomised_accuracy, Some(1.0));
        assert_eq!(MetricsReport::parse(&r.to_text()).unwrap(), r);
    }

    #[test]
    fn all_majority_prediction_gives_zero_f1() {
        let n = 20;
        let p = Tensor::from_fn(&[n, 2], |i| if i % 2 == 0 { 0.3 } else { 0.7 });
        let truth: Vec<usize> = (0..n).map(|i| usize::from(i >= 5)).collect();
        let r = MetricsReport::evaluate(&p, &truth, Experiment::Dichotomised, Mode::ImageOnly, true).unwrap();
        assert_eq!(r.f1, Some(0.0));
        assert_eq!(r.accuracy, 0.75);
        assert_eq!(r.auc, Some(0.5));
    }

    #[test]
    fn ablation_rows_pair_experiments() {
        let base = MetricsReport {
            experiment: Experiment::Dichotomised,
            mode: Mode::Multimodal,
            attention_enabled: true,
            n_samples: 10,
            accuracy: 0.7,
            f1: Some(0.5),
            auc: Some(0.8),
            one_nearest_accuracy: None,
            dichotomised_accuracy: None,
            confusion: vec![vec![5, 0], vec![3, 2]],
        };
        let indiv = MetricsReport {
            experiment: Experiment::Individual,
            f1: None,
            auc: None,
            accuracy: 0.3,
            one_nearest_accuracy: Some(0.6),
            dichotomised_accuracy: Some(0.7),
            ..base.clone()
        };
        let off = MetricsReport {
            attention_enabled: false,
            ..base.clone()
        };
        let table = ablation_table(&[indiv, off, base]);
        let lines: Vec<&str> = table.lines().collect();
        assert_eq!(lines[0], ABLATION_HEADER);
        assert_eq!(lines[1], "multimodal,on,0.7000,0.5000,0.8000,0.3000,0.6000");
        assert_eq!(lines[2], "multimodal,off,0.7000,0.5000,0.8000,,");
    }
}
