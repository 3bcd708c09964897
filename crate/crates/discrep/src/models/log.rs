//! Per-epoch training history and its CSV export.

use std::path::Path;

use crate::metrics::ema;
use crate::Result;

/// One epoch's summary. Discrepancy columns are present only for runs that
/// track a generated side (discriminator training); language-model training
/// leaves them empty.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainEpoch {
    pub epoch: usize,
    pub loss: f64,
    /// Dev perplexity for generator runs, dev accuracy for discriminators.
    pub dev_metric: f64,
    pub u_d: Option<f64>,
    pub u_theta: Option<f64>,
    pub d_a: Option<f64>,
    pub d_s: Option<f64>,
}

/// Full history of one training run.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub epochs: Vec<TrainEpoch>,
    /// Index into `epochs` of the snapshot that was returned; absent when
    /// training ran for zero epochs.
    pub best_epoch: Option<usize>,
}

impl TrainLog {
    pub fn len(&self) -> usize {
        self.epochs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.epochs.is_empty()
    }

    /// Writes the history as CSV with smoothed copies of the discrepancy
    /// columns. Missing values stay as empty cells.
    pub fn write_csv(&self, path: &Path, ema_alpha: f64) -> Result<()> {
        std::fs::write(path, self.to_csv_string(ema_alpha)?)?;
        Ok(())
    }

    pub fn to_csv_string(&self, ema_alpha: f64) -> Result<String> {
        let smooth = |pick: fn(&TrainEpoch) -> Option<f64>| -> Result<Vec<Option<f64>>> {
            let present: Vec<f64> = self.epochs.iter().filter_map(pick).collect();
            if present.len() != self.epochs.len() || present.is_empty() {
                return Ok(vec![None; self.epochs.len()]);
            }
            Ok(ema(&present, ema_alpha)?.into_iter().map(Some).collect())
        };
        let ema_u_d = smooth(|e| e.u_d)?;
        let ema_u_theta = smooth(|e| e.u_theta)?;
        let ema_d_a = smooth(|e| e.d_a)?;
        let ema_d_s = smooth(|e| e.d_s)?;
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let mut out =
            String::from("epoch,loss,dev_metric,u_d,u_theta,d_a,d_s,ema_u_d,ema_u_theta,ema_d_a,ema_d_s\n");
        for (i, e) in self.epochs.iter().enumerate() {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{},{}\n",
                e.epoch,
                e.loss,
                e.dev_metric,
                cell(e.u_d),
                cell(e.u_theta),
                cell(e.d_a),
                cell(e.d_s),
                cell(ema_u_d[i]),
                cell(ema_u_theta[i]),
                cell(ema_d_a[i]),
                cell(ema_d_s[i]),
            ));
        }
        Ok(out)
    }
}
