use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// State of a run at the end of one epoch. Epoch 0 describes the network
/// before any update.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub alpha: Vec<Vec<f64>>,
    pub skip_conv_gap: Option<f64>,
    pub wall_time: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunLog {
    pub records: Vec<EpochRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, record: EpochRecord) -> Result<()> {
        if let Some(last) = self.records.last() {
            if record.epoch <= last.epoch {
                return Err(Error::InvalidArgument(format!(
                    "epoch {} does not follow {}",
                    record.epoch, last.epoch
                )));
            }
            let shape = |a: &[Vec<f64>]| a.iter().map(Vec::len).collect::<Vec<_>>();
            if shape(&record.alpha) != shape(&last.alpha) {
                return Err(Error::InvalidArgument("alpha snapshot changed shape".into()));
            }
        }
        self.records.push(record);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn first(&self) -> Option<&EpochRecord> {
        self.records.first()
    }

    pub fn last(&self) -> Option<&EpochRecord> {
        self.records.last()
    }

    /// Appends `other`, renumbering its epochs after the last one here.
    pub fn extend_shifted(&mut self, other: RunLog) -> Result<()> {
        let offset = self.records.last().map_or(0, |r| r.epoch);
        for mut r in other.records {
            r.epoch += offset;
            self.push(r)?;
        }
        Ok(())
    }

    /// One JSON object per line, one line per epoch.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self> {
        let mut log = RunLog::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: EpochRecord = serde_json::from_str(line)
                .map_err(|e| Error::format("run log", format!("line {}: {e}", i + 1)))?;
            log.push(r)?;
        }
        Ok(log)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(epoch: usize) -> EpochRecord {
        EpochRecord {
            epoch,
            train_loss: 0.5,
            val_accuracy: 0.25,
            alpha: vec![vec![0.1, -0.2]],
            skip_conv_gap: Some(0.3),
            wall_time: 0.0,
        }
    }

    #[test]
    fn epochs_must_increase() {
        let mut log = RunLog::new();
        log.push(rec(0)).unwrap();
        log.push(rec(1)).unwrap();
        assert!(log.push(rec(1)).is_err());
    }

    #[test]
    fn jsonl_round_trip_keeps_field_order() {
        let mut log = RunLog::new();
        log.push(rec(0)).unwrap();
        log.push(EpochRecord { skip_conv_gap: None, ..rec(3) }).unwrap();
        let text = log.to_jsonl();
        let first = text.lines().next().unwrap();
        let keys = ["epoch", "train_loss", "val_accuracy", "alpha", "skip_conv_gap", "wall_time"];
        let pos: Vec<usize> = keys.iter().map(|k| first.find(&format!("\"{k}\"")).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
        assert_eq!(RunLog::from_jsonl(&text).unwrap(), log);
    }
}
