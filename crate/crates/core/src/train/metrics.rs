use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::loss::LossBreakdown;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub l_vv: f64,
    pub l_tt: f64,
    pub l_vt: f64,
    pub l_tv: f64,
    pub l_mm: f64,
}

impl StepRecord {
    pub fn new(step: u64, epoch: u64, b: &LossBreakdown) -> Self {
        Self {
            step,
            epoch,
            l_vv: b.l_vv,
            l_tt: b.l_tt,
            l_vt: b.l_vt,
            l_tv: b.l_tv,
            l_mm: b.l_mm,
        }
    }
}

/// Mean losses of one epoch, plus a probe accuracy when one was measured.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: u64,
    pub l_vv: f64,
    pub l_tt: f64,
    pub l_vt: f64,
    pub l_tv: f64,
    pub l_mm: f64,
    pub accuracy: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct MetricsLog {
    pub steps: Vec<StepRecord>,
    pub epochs: Vec<EpochRecord>,
}

impl MetricsLog {
    /// Appends a step; steps must arrive in increasing order.
    pub fn push_step(&mut self, record: StepRecord) {
        debug_assert!(self.steps.last().is_none_or(|l| l.step < record.step));
        self.steps.push(record);
    }

    /// Closes `epoch` by averaging its step records.
    pub fn close_epoch(&mut self, epoch: u64) -> Option<EpochRecord> {
        let rows: Vec<&StepRecord> = self.steps.iter().filter(|s| s.epoch == epoch).collect();
        if rows.is_empty() {
            return None;
        }
        let n = rows.len() as f64;
        let mean = |f: fn(&StepRecord) -> f64| rows.iter().map(|r| f(r)).sum::<f64>() / n;
        let record = EpochRecord {
            epoch,
            l_vv: mean(|r| r.l_vv),
            l_tt: mean(|r| r.l_tt),
            l_vt: mean(|r| r.l_vt),
            l_tv: mean(|r| r.l_tv),
            l_mm: mean(|r| r.l_mm),
            accuracy: None,
        };
        self.epochs.push(record);
        Some(record)
    }

    pub fn epoch_mean(&self, epoch: u64) -> Option<f64> {
        self.epochs.iter().find(|e| e.epoch == epoch).map(|e| e.l_mm)
    }

    /// Per-step CSV with header `step,epoch,l_vv,l_tt,l_vt,l_tv,l_mm`.
    pub fn steps_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.steps {
            w.serialize(r)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn epochs_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.epochs {
            w.serialize(r)?;
        }
        Ok(w.into_inner().map_err(|e| e.into_error())?)
    }

    pub fn write_steps(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.steps_csv()?)?;
        Ok(())
    }

    pub fn write_epochs(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.epochs_csv()?)?;
        Ok(())
    }

    pub fn read_steps(path: &Path) -> Result<Vec<StepRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_means() {
        let mut log = MetricsLog::default();
        for (s, l) in [(1, 1.0), (2, 3.0)] {
            log.push_step(StepRecord::new(s, 1, &LossBreakdown::from_components(l, l, 0.0, 0.0, 1.0)));
        }
        let csv = String::from_utf8(log.steps_csv().unwrap()).unwrap();
        assert_eq!(csv.lines().next().unwrap(), "step,epoch,l_vv,l_tt,l_vt,l_tv,l_mm");
        assert_eq!(csv.lines().count(), 3);
        let e = log.close_epoch(1).unwrap();
        assert_eq!(e.l_mm, 4.0);
        assert_eq!(log.epoch_mean(1), Some(4.0));
        assert!(log.close_epoch(2).is_none());
    }
}
