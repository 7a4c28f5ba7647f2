use serde::{Deserialize, Serialize};

use super::ModelParams;
use crate::error::{HclError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SnapshotTag {
    SourceInit,
    Lagged,
}

/// Frozen copy of a model taken at an epoch boundary.
#[derive(Debug, Clone)]
pub struct Snapshot {
    params: ModelParams,
    epoch: usize,
    tag: SnapshotTag,
    hash: String,
}

impl Snapshot {
    pub fn new(params: &ModelParams, epoch: usize, tag: SnapshotTag) -> Self {
        let params = params.clone();
        let hash = params.weight_hash();
        Self {
            params,
            epoch,
            tag,
            hash,
        }
    }

    pub fn params(&self) -> &ModelParams {
        &self.params
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }

    pub fn tag(&self) -> SnapshotTag {
        self.tag
    }

    /// Hash recorded when the snapshot was taken.
    pub fn hash(&self) -> &str {
        &self.hash
    }

    /// Recomputes the weight hash and compares it with the one at creation.
    pub fn is_intact(&self) -> bool {
        self.params.weight_hash() == self.hash
    }
}

/// Bounded, epoch-ordered store of historical models.
#[derive(Debug, Clone)]
pub struct HistoryQueue {
    snapshots: Vec<Snapshot>,
    capacity: usize,
    lag_m: usize,
    pin_source_init: bool,
}

impl HistoryQueue {
    /// Creates a queue holding the source model as its epoch-0 snapshot.
    pub fn new(
        source: &ModelParams,
        capacity: usize,
        lag_m: usize,
        pin_source_init: bool,
    ) -> Result<Self> {
        if capacity == 0 {
            return Err(HclError::Validation("history capacity must be >= 1".into()));
        }
        if lag_m == 0 {
            return Err(HclError::Validation("history lag must be >= 1".into()));
        }
        Ok(Self {
            snapshots: vec![Snapshot::new(source, 0, SnapshotTag::SourceInit)],
            capacity,
            lag_m,
            pin_source_init,
        })
    }

    pub fn snapshots(&self) -> &[Snapshot] {
        &self.snapshots
    }

    pub fn len(&self) -> usize {
        self.snapshots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.snapshots.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn lag(&self) -> usize {
        self.lag_m
    }

    pub fn last_epoch(&self) -> Option<usize> {
        self.snapshots.last().map(Snapshot::epoch)
    }

    /// Appends a deep copy of `params`. Over capacity, the oldest lagged
    /// snapshot is evicted; a pinned source snapshot is never evicted.
    pub fn snapshot_push(&mut self, params: &ModelParams, epoch: usize) -> Result<()> {
        if let Some(last) = self.last_epoch() {
            if epoch <= last {
                return Err(HclError::Ordering { epoch, last });
            }
        }
        self.snapshots
            .push(Snapshot::new(params, epoch, SnapshotTag::Lagged));
        while self.snapshots.len() > self.capacity {
            let victim = self
                .snapshots
                .iter()
                .position(|s| !(self.pin_source_init && s.tag == SnapshotTag::SourceInit))
                .expect("capacity >= 1 leaves at least one evictable snapshot");
            self.snapshots.remove(victim);
        }
        Ok(())
    }

    /// Snapshots usable as key encoders at `epoch_t`: every snapshot at
    /// least `lag_m` epochs old, plus the pinned source snapshot. When none
    /// qualifies the source snapshot (or else the oldest one) is returned.
    pub fn select_history(&self, epoch_t: usize) -> Vec<&Snapshot> {
        let selected: Vec<&Snapshot> = self
            .snapshots
            .iter()
            .filter(|s| {
                (s.epoch + self.lag_m <= epoch_t && s.epoch < epoch_t)
                    || (self.pin_source_init && s.tag == SnapshotTag::SourceInit)
            })
            .collect();
        if !selected.is_empty() {
            return selected;
        }
        let fallback = self
            .snapshots
            .iter()
            .find(|s| s.tag == SnapshotTag::SourceInit)
            .or_else(|| self.snapshots.first());
        fallback.into_iter().collect()
    }

    pub fn all_intact(&self) -> bool {
        self.snapshots.iter().all(Snapshot::is_intact)
    }
}
