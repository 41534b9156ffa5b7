use super::{BufferError, RolloutRecord};

/// Consume-once LIFO pipe between inference workers and trainers.
#[derive(Debug, Clone, Default)]
pub struct TransferQueue {
    entries: Vec<RolloutRecord>,
    capacity: Option<usize>,
}

/// Returned when a push would overflow a bounded queue. Carries the
/// rejected records back to the caller.
#[derive(Debug, Clone, PartialEq)]
pub struct BackPressure(pub Vec<RolloutRecord>);

impl TransferQueue {
    pub fn unbounded() -> Self {
        Self::default()
    }

    pub fn bounded(capacity: usize) -> Self {
        Self {
            entries: Vec::with_capacity(capacity),
            capacity: Some(capacity),
        }
    }

    pub fn capacity(&self) -> Option<usize> {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn free_slots(&self) -> Option<usize> {
        self.capacity.map(|c| c.saturating_sub(self.entries.len()))
    }

    pub fn push(&mut self, record: RolloutRecord) -> Result<(), BackPressure> {
        if self.free_slots() == Some(0) {
            return Err(BackPressure(vec![record]));
        }
        self.entries.push(record);
        Ok(())
    }

    /// Pushes a whole group or nothing.
    pub fn push_all(&mut self, records: Vec<RolloutRecord>) -> Result<(), BackPressure> {
        if let Some(free) = self.free_slots() {
            if records.len() > free {
                return Err(BackPressure(records));
            }
        }
        self.entries.extend(records);
        Ok(())
    }

    pub fn pop(&mut self) -> Result<RolloutRecord, BufferError> {
        self.entries.pop().ok_or(BufferError::NotReady {
            shard: 0,
            available: 0,
            required: 1,
        })
    }

    /// Pops `n` records (freshest first) or none at all.
    pub fn pop_batch(&mut self, n: usize) -> Result<Vec<RolloutRecord>, BufferError> {
        if self.entries.len() < n {
            return Err(BufferError::NotReady {
                shard: 0,
                available: self.entries.len(),
                required: n,
            });
        }
        let start = self.entries.len() - n;
        let mut batch = self.entries.split_off(start);
        batch.reverse();
        Ok(batch)
    }

    pub fn iter(&self) -> impl Iterator<Item = &RolloutRecord> {
        self.entries.iter()
    }
}
