use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::io::write_atomic;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopReason {
    MaxEpochs,
    EarlyStop,
}

/// One epoch. `mse` and `cce` are the validation components, so that
/// `val_loss = alpha * mse + beta * cce`. `lr` is the rate used during the
/// epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub mse: f64,
    pub cce: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
    /// 1-based epoch with the lowest validation loss.
    pub best_epoch: usize,
    pub stop_reason: StopReason,
    /// Epochs after which the learning rate was reduced.
    pub lr_drops: Vec<usize>,
}

impl TrainHistory {
    pub fn best(&self) -> &EpochRecord {
        &self.records[self.best_epoch - 1]
    }

    pub fn to_csv(&self) -> Result<Vec<u8>> {
        let mut w = csv::Writer::from_writer(Vec::new());
        for r in &self.records {
            w.serialize(r)?;
        }
        Ok(w.into_inner().expect("in-memory writer"))
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        write_atomic(path, &self.to_csv()?)
    }

    pub fn read_records(path: &Path) -> Result<Vec<EpochRecord>> {
        let mut r = csv::Reader::from_path(path)?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn csv_header_and_round_trip() {
        let h = TrainHistory {
            records: vec![EpochRecord {
                epoch: 1,
                train_loss: 0.5,
                val_loss: 0.25,
                mse: 0.25,
                cce: 0.0,
                lr: 1e-3,
            }],
            best_epoch: 1,
            stop_reason: StopReason::MaxEpochs,
            lr_drops: vec![],
        };
        let bytes = h.to_csv().unwrap();
        let text = String::from_utf8(bytes).unwrap();
        assert!(text.starts_with("epoch,train_loss,val_loss,mse,cce,lr\n"));
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("h.csv");
        h.save_csv(&p).unwrap();
        assert_eq!(TrainHistory::read_records(&p).unwrap(), h.records);
    }
}
