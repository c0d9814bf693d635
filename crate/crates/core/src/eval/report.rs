use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::Serialize;

use super::MetricReport;
use crate::error::{Error, Result};

/// Mean and sample standard deviation of every metric for one
/// `(condition, axis_value)` cell.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SummaryRow {
    pub condition: String,
    pub axis_value: String,
    pub seeds: usize,
    pub metrics: Vec<MetricStat>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricStat {
    pub metric: String,
    pub mean: f64,
    pub std: f64,
}

impl SummaryRow {
    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.metrics.iter().find(|m| m.metric == metric).map(|m| m.mean)
    }
}

/// Paths written by [`emit_report`].
#[derive(Clone, Debug, PartialEq)]
pub struct ReportFiles {
    pub rows: PathBuf,
    pub summary: PathBuf,
    pub summary_json: PathBuf,
    pub sweep: Option<PathBuf>,
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// Groups reports by condition and axis value, in first-seen order.
pub fn summarize(reports: &[MetricReport]) -> Vec<SummaryRow> {
    let mut keys: Vec<(String, String)> = Vec::new();
    for r in reports {
        let k = (r.condition.clone(), r.axis_value.clone());
        if !keys.contains(&k) {
            keys.push(k);
        }
    }
    keys.into_iter()
        .map(|(condition, axis_value)| {
            let group: Vec<&MetricReport> =
                reports.iter().filter(|r| r.condition == condition && r.axis_value == axis_value).collect();
            let metrics = (0..5)
                .map(|i| {
                    let xs: Vec<f64> = group.iter().map(|r| r.metrics()[i].1).collect();
                    let (mean, std) = mean_std(&xs);
                    MetricStat { metric: group[0].metrics()[i].0.to_string(), mean, std }
                })
                .collect();
            SummaryRow { condition, axis_value, seeds: group.len(), metrics }
        })
        .collect()
}

struct Out {
    path: PathBuf,
    w: BufWriter<File>,
}

impl Out {
    fn create(path: PathBuf) -> Result<Self> {
        let f = File::create(&path).map_err(|e| Error::io(&path, e))?;
        Ok(Self { path, w: BufWriter::new(f) })
    }

    fn line(&mut self, s: &str) -> Result<()> {
        writeln!(self.w, "{s}").map_err(|e| Error::io(&self.path, e))
    }

    fn finish(mut self) -> Result<PathBuf> {
        self.w.flush().map_err(|e| Error::io(&self.path, e))?;
        Ok(self.path)
    }
}

/// Writes `<stem>.csv` (one row per condition and seed),
/// `<stem>_summary.csv` and `<stem>_summary.json` (mean and sample std over
/// seeds), and for sweeps `<stem>_sweep.csv` with one row per condition and
/// axis value.
pub fn emit_report(dir: &Path, stem: &str, reports: &[MetricReport], axis: Option<&str>) -> Result<ReportFiles> {
    if reports.is_empty() {
        return Err(Error::InvalidInput("no reports to emit".into()));
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let axis_name = axis.unwrap_or("");

    let mut rows = Out::create(dir.join(format!("{stem}.csv")))?;
    rows.line("condition,axis,axis_value,seed,samples,auc,hr@5,hr@10,ndcg@5,ndcg@10")?;
    for r in reports {
        rows.line(&format!(
            "{},{},{},{},{},{},{},{},{},{}",
            r.condition, axis_name, r.axis_value, r.seed, r.samples, r.auc, r.hr5, r.hr10, r.ndcg5, r.ndcg10
        ))?;
    }
    let rows = rows.finish()?;

    let summary_rows = summarize(reports);
    let mut summary = Out::create(dir.join(format!("{stem}_summary.csv")))?;
    summary.line("condition,axis_value,seeds,metric,mean,std")?;
    for s in &summary_rows {
        for m in &s.metrics {
            summary.line(&format!("{},{},{},{},{},{}", s.condition, s.axis_value, s.seeds, m.metric, m.mean, m.std))?;
        }
    }
    let summary = summary.finish()?;

    let json_path = dir.join(format!("{stem}_summary.json"));
    let body = serde_json::json!({ "axis": axis, "rows": summary_rows });
    let text = serde_json::to_string_pretty(&body).map_err(|e| Error::InvalidInput(e.to_string()))?;
    std::fs::write(&json_path, text + "\n").map_err(|e| Error::io(&json_path, e))?;

    let sweep = match axis {
        Some(axis) => {
            let mut out = Out::create(dir.join(format!("{stem}_sweep.csv")))?;
            out.line("axis,value,condition,seeds,auc_mean,auc_std,hr@5_mean,hr@5_std,hr@10_mean,hr@10_std,ndcg@5_mean,ndcg@5_std,ndcg@10_mean,ndcg@10_std")?;
            for s in &summary_rows {
                let stats: Vec<String> = s.metrics.iter().map(|m| format!("{},{}", m.mean, m.std)).collect();
                out.line(&format!("{axis},{},{},{},{}", s.axis_value, s.condition, s.seeds, stats.join(",")))?;
            }
            Some(out.finish()?)
        }
        None => None,
    };
    Ok(ReportFiles { rows, summary, summary_json: json_path, sweep })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(cond: &str, seed: u64, hr5: f64) -> MetricReport {
        MetricReport {
            condition: cond.into(),
            axis_value: String::new(),
            seed,
            samples: 10,
            auc: 0.5,
            hr5,
            hr10: hr5,
            ndcg5: hr5 / 2.0,
            ndcg10: hr5 / 2.0,
        }
    }

    #[test]
    fn one_condition_one_seed_one_row() {
        let dir = tempfile::tempdir().unwrap();
        let files = emit_report(dir.path(), "r", &[report("baseline", 0, 0.3)], None).unwrap();
        let text = std::fs::read_to_string(files.rows).unwrap();
        assert_eq!(text.lines().count(), 2);
        assert!(files.sweep.is_none());
    }

    #[test]
    fn sample_std_over_five_seeds() {
        let reports: Vec<_> = [2.0, 4.0, 4.0, 4.0, 6.0].iter().enumerate().map(|(i, &v)| report("m", i as u64, v)).collect();
        let s = summarize(&reports);
        let hr = &s[0].metrics[1];
        assert_eq!(hr.mean, 4.0);
        // deviations 4,0,0,0,4 -> 8 / (5-1) = 2
        assert!((hr.std - 2f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn threshold_sweep_rows_per_condition() {
        let dir = tempfile::tempdir().unwrap();
        let mut reports = Vec::new();
        for t in [0.1, 0.5, 1.0, 5.0] {
            for seed in 0..2 {
                reports.push(report("persona_m", seed, 0.4).with_axis_value(t));
            }
        }
        let files = emit_report(dir.path(), "sweep", &reports, Some("threshold")).unwrap();
        let text = std::fs::read_to_string(files.sweep.unwrap()).unwrap();
        let values: Vec<&str> = text.lines().skip(1).map(|l| l.split(',').nth(1).unwrap()).collect();
        assert_eq!(values, vec!["0.1", "0.5", "1", "5"]);
        let json: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(files.summary_json).unwrap()).unwrap();
        assert_eq!(json["rows"].as_array().unwrap().len(), 4);
    }

    #[test]
    fn unwritable_dir_names_path() {
        let err = emit_report(Path::new("/proc/nope/deeper"), "r", &[report("b", 0, 0.1)], None).unwrap_err();
        assert!(err.to_string().contains("/proc/nope"));
    }
}
