use std::io::Write;

use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_hisnce: f64,
    pub l_hisst: f64,
    pub total_loss: f64,
    pub target_accuracy: Option<f64>,
    pub mean_h_con: Option<f64>,
    pub mean_r: Option<f64>,
    pub selected_fraction: Option<f64>,
    pub lr: f64,
}

/// Per-epoch metrics, appended by the training loop only.
#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct MetricsTrace {
    pub records: Vec<EpochRecord>,
}

pub const TRACE_COLUMNS: [&str; 9] = [
    "epoch",
    "l_hisnce",
    "l_hisst",
    "total_loss",
    "target_accuracy",
    "mean_h_con",
    "mean_r",
    "selected_fraction",
    "lr",
];

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

impl EpochRecord {
    pub fn csv_cells(&self) -> Vec<String> {
        vec![
            self.epoch.to_string(),
            self.l_hisnce.to_string(),
            self.l_hisst.to_string(),
            self.total_loss.to_string(),
            opt(self.target_accuracy),
            opt(self.mean_h_con),
            opt(self.mean_r),
            opt(self.selected_fraction),
            self.lr.to_string(),
        ]
    }
}

impl MetricsTrace {
    pub(crate) fn push(&mut self, record: EpochRecord) {
        debug_assert!(self
            .records
            .last()
            .is_none_or(|last| last.epoch < record.epoch));
        self.records.push(record);
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn total_losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.total_loss).collect()
    }

    pub fn write_csv<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{}", TRACE_COLUMNS.join(","))?;
        for r in &self.records {
            writeln!(w, "{}", r.csv_cells().join(","))?;
        }
        Ok(())
    }

    pub fn summary_json(&self, config_hash: &str) -> serde_json::Value {
        let accs: Vec<f64> = self
            .records
            .iter()
            .filter_map(|r| r.target_accuracy)
            .collect();
        serde_json::json!({
            "final_accuracy": accs.last(),
            "best_accuracy": accs.iter().copied().reduce(f64::max),
            "epochs": self.records.len(),
            "config_hash": config_hash,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize, acc: Option<f64>) -> EpochRecord {
        EpochRecord {
            epoch,
            l_hisnce: 1.0,
            l_hisst: 0.5,
            total_loss: 1.5,
            target_accuracy: acc,
            mean_h_con: None,
            mean_r: Some(0.75),
            selected_fraction: Some(0.5),
            lr: 1e-3,
        }
    }

    #[test]
    fn csv_layout() {
        let mut t = MetricsTrace::default();
        t.push(rec(0, Some(0.8)));
        t.push(rec(1, None));
        let mut buf = Vec::new();
        t.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], TRACE_COLUMNS.join(","));
        assert_eq!(lines[1], "0,1,0.5,1.5,0.8,,0.75,0.5,0.001");
        assert_eq!(lines.len(), 3);
    }

    #[test]
    fn summary_fields() {
        let mut t = MetricsTrace::default();
        t.push(rec(0, Some(0.8)));
        t.push(rec(1, Some(0.9)));
        t.push(rec(2, Some(0.85)));
        let s = t.summary_json("abc");
        assert_eq!(s["final_accuracy"], 0.85);
        assert_eq!(s["best_accuracy"], 0.9);
        assert_eq!(s["epochs"], 3);
        assert_eq!(s["config_hash"], "abc");
    }
}
