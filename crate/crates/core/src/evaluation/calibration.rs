use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationBin {
    pub lo: f64,
    pub hi: f64,
    /// `None` for an empty bin.
    pub mean_pred: Option<f64>,
    pub frac_pos: Option<f64>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub bins: Vec<CalibrationBin>,
    /// Root of the Brier score.
    pub rmse: f64,
}

/// Equal-width reliability diagram over `[0, 1]`.
pub fn calibration_curve(predictions: &[f64], labels: &[bool], bins: usize) -> Result<CalibrationReport> {
    if predictions.len() != labels.len() || predictions.is_empty() || bins == 0 {
        return Err(Error::InvalidArgument(
            "calibration needs equally many predictions and labels and at least one bin".into(),
        ));
    }
    if predictions.iter().any(|p| !(0.0..=1.0).contains(p)) {
        return Err(Error::InvalidArgument("predictions must lie in [0, 1]".into()));
    }
    let mut sum_pred = vec![0.0; bins];
    let mut pos = vec![0usize; bins];
    let mut count = vec![0usize; bins];
    let mut sq = 0.0;
    for (&p, &y) in predictions.iter().zip(labels) {
        let b = ((p * bins as f64) as usize).min(bins - 1);
        sum_pred[b] += p;
        pos[b] += usize::from(y);
        count[b] += 1;
        sq += (p - f64::from(u8::from(y))).powi(2);
    }
    let out = (0..bins)
        .map(|b| {
            let c = count[b];
            CalibrationBin {
                lo: b as f64 / bins as f64,
                hi: (b + 1) as f64 / bins as f64,
                mean_pred: (c > 0).then(|| sum_pred[b] / c as f64),
                frac_pos: (c > 0).then(|| pos[b] as f64 / c as f64),
                count: c,
            }
        })
        .collect();
    Ok(CalibrationReport {
        bins: out,
        rmse: (sq / predictions.len() as f64).sqrt(),
    })
}

impl CalibrationReport {
    /// `bin_lo,bin_hi,mean_pred,frac_pos,count`; empty bins leave the two
    /// middle cells blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,mean_pred,frac_pos,count\n");
        let cell = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for b in &self.bins {
            let _ = writeln!(s, "{},{},{},{},{}", b.lo, b.hi, cell(b.mean_pred), cell(b.frac_pos), b.count);
        }
        s
    }

    /// Parses [`Self::to_csv`] output; `rmse` is supplied separately.
    pub fn from_csv(text: &str, rmse: f64) -> Result<Self> {
        let mut lines = text.lines();
        let header: Vec<&str> = lines
            .next()
            .ok_or_else(|| Error::Parse("empty calibration CSV".into()))?
            .split(',')
            .collect();
        for col in ["bin_lo", "bin_hi", "mean_pred", "frac_pos", "count"] {
            if !header.contains(&col) {
                return Err(Error::MissingColumn(col.into()));
            }
        }
        let bins = lines
            .enumerate()
            .map(|(i, line)| {
                let c: Vec<&str> = line.split(',').collect();
                let bad = || Error::Parse(format!("calibration CSV row {}", i + 2));
                if c.len() != 5 {
                    return Err(bad());
                }
                let opt = |s: &str| -> Result<Option<f64>> {
                    if s.is_empty() {
                        Ok(None)
                    } else {
                        s.parse().map(Some).map_err(|_| bad())
                    }
                };
                Ok(CalibrationBin {
                    lo: c[0].parse().map_err(|_| bad())?,
                    hi: c[1].parse().map_err(|_| bad())?,
                    mean_pred: opt(c[2])?,
                    frac_pos: opt(c[3])?,
                    count: c[4].parse().map_err(|_| bad())?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { bins, rmse })
    }

    pub fn write(&self, dir: impl AsRef<Path>, stem: &str) -> Result<()> {
        let dir = dir.as_ref();
        let csv = dir.join(format!("{stem}.csv"));
        std::fs::write(&csv, self.to_csv()).map_err(|e| Error::io(&csv, e))?;
        let json = dir.join(format!("{stem}.json"));
        let body = serde_json::to_string_pretty(&serde_json::json!({ "rmse": self.rmse, "bins": self.bins.len() }))
            .expect("serializable")
            + "\n";
        std::fs::write(&json, body).map_err(|e| Error::io(&json, e))
    }
}
