//! Run reports: the per-run JSON document and the sweep CSV.

use serde::{Deserialize, Serialize};

use crate::config::TrainConfig;
use crate::training::{EpochSummary, Metrics};

/// Everything a training run produced. The wall clock is kept out of the
/// serialized form so identical runs write identical reports; the CLI
/// prints it separately.
#[derive(Clone, Debug, Serialize)]
pub struct RunReport {
    pub config: TrainConfig,
    pub epochs: Vec<EpochSummary>,
    pub final_metrics: Metrics,
    #[serde(skip)]
    pub wall_clock_secs: f64,
}

impl RunReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// One sweep result row.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub emotion_acc: f64,
    pub polarity_acc: f64,
    pub l_emo: f64,
    pub l_pol: f64,
    pub l_total: f64,
}

/// Render sweep rows as CSV with a mandatory header.
pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::from("value,emotion_acc,polarity_acc,l_emo,l_pol,l_total\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.value, r.emotion_acc, r.polarity_acc, r.l_emo, r.l_pol, r.l_total
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_has_header_and_one_row_per_value() {
        let rows = vec![
            SweepRow {
                value: 0.0,
                emotion_acc: 0.5,
                polarity_acc: 0.75,
                l_emo: 1.2,
                l_pol: 0.3,
                l_total: 1.5,
            },
            SweepRow {
                value: 1.0,
                emotion_acc: 0.6,
                polarity_acc: 0.8,
                l_emo: 1.0,
                l_pol: 0.2,
                l_total: 1.2,
            },
        ];
        let csv = sweep_csv(&rows);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0], "value,emotion_acc,polarity_acc,l_emo,l_pol,l_total");
        assert!(lines[1].starts_with("0,"));
        assert!(lines[2].starts_with("1,"));
    }
}
