//! Use-ledger diagnostics: staleness, replay counts and steps since last use.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io::Write;
use std::sync::Mutex;

use rand::seq::SliceRandom;
use thiserror::Error;

use crate::rng::Rng;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("corrupted ledger: rollout {rollout_id} used at step {use_step} before its creation step {creation_step}")]
    CorruptedLedger {
        rollout_id: u64,
        creation_step: u64,
        use_step: u64,
    },
    #[error("cannot summarize an empty list of values")]
    EmptyInput,
}

/// One occurrence of a rollout inside a training batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct UseEvent {
    pub rollout_id: u64,
    pub creation_step: u64,
    pub use_step: u64,
    pub batch_id: u64,
    pub within_batch_rank: u32,
}

pub fn staleness(event: &UseEvent) -> Result<u64, MetricsError> {
    event
        .use_step
        .checked_sub(event.creation_step)
        .ok_or(MetricsError::CorruptedLedger {
            rollout_id: event.rollout_id,
            creation_step: event.creation_step,
            use_step: event.use_step,
        })
}

/// Append-only record of every use, plus the ids of every generated rollout
/// so that never-sampled rollouts count as zero uses.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct UseLedger {
    events: Vec<UseEvent>,
    generated: BTreeSet<u64>,
}

impl UseLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_generated(&mut self, rollout_id: u64) {
        self.generated.insert(rollout_id);
    }

    pub fn record_use(&mut self, event: UseEvent) {
        self.generated.insert(event.rollout_id);
        self.events.push(event);
    }

    pub fn extend_uses<I: IntoIterator<Item = UseEvent>>(&mut self, events: I) {
        for e in events {
            self.record_use(e);
        }
    }

    pub fn events(&self) -> &[UseEvent] {
        &self.events
    }

    pub fn generated(&self) -> &BTreeSet<u64> {
        &self.generated
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }
}

/// Ledger shared between producer threads.
#[derive(Debug, Default)]
pub struct SharedLedger {
    inner: Mutex<UseLedger>,
}

impl SharedLedger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn record_generated(&self, rollout_id: u64) {
        self.lock().record_generated(rollout_id);
    }

    pub fn record_uses(&self, events: &[UseEvent]) {
        self.lock().extend_uses(events.iter().copied());
    }

    pub fn snapshot(&self) -> UseLedger {
        self.lock().clone()
    }

    fn lock(&self) -> std::sync::MutexGuard<'_, UseLedger> {
        self.inner.lock().unwrap_or_else(|p| p.into_inner())
    }
}

/// Total uses per generated rollout, zero-use rollouts included.
pub fn replay_counts(ledger: &UseLedger) -> BTreeMap<u64, u64> {
    let mut counts: BTreeMap<u64, u64> = ledger.generated.iter().map(|&id| (id, 0)).collect();
    for e in &ledger.events {
        *counts.entry(e.rollout_id).or_insert(0) += 1;
    }
    counts
}

/// Replay counts as a value list, optionally dropping never-used rollouts.
pub fn replay_ratio_values(ledger: &UseLedger, include_zero: bool) -> Vec<f64> {
    replay_counts(ledger)
        .into_values()
        .filter(|&c| include_zero || c > 0)
        .map(|c| c as f64)
        .collect()
}

pub fn staleness_values(events: &[UseEvent]) -> Result<Vec<f64>, MetricsError> {
    events
        .iter()
        .map(|e| staleness(e).map(|s| s as f64))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SinceLastUse {
    New,
    Steps(u64),
}

/// Labels each event (in input order) after drawing a fresh random order
/// inside every batch.
pub fn steps_since_last_use(events: &[UseEvent], rng: &mut Rng) -> Vec<SinceLastUse> {
    let mut by_batch: BTreeMap<u64, Vec<usize>> = BTreeMap::new();
    for (i, e) in events.iter().enumerate() {
        by_batch.entry(e.batch_id).or_default().push(i);
    }
    let mut ranked = events.to_vec();
    for members in by_batch.values_mut() {
        members.shuffle(rng);
        for (rank, &i) in members.iter().enumerate() {
            ranked[i].within_batch_rank = rank as u32;
        }
    }
    steps_since_last_use_ranked(&ranked)
}

/// Labels each event (in input order) using the ranks already stored on
/// the events.
pub fn steps_since_last_use_ranked(events: &[UseEvent]) -> Vec<SinceLastUse> {
    let mut order: Vec<usize> = (0..events.len()).collect();
    order.sort_by_key(|&i| {
        let e = &events[i];
        (e.use_step, e.batch_id, e.within_batch_rank, i)
    });
    let mut last: HashMap<u64, u64> = HashMap::with_capacity(events.len());
    let mut labels = vec![SinceLastUse::New; events.len()];
    for i in order {
        let e = &events[i];
        if let Some(prev) = last.insert(e.rollout_id, e.use_step) {
            labels[i] = SinceLastUse::Steps(e.use_step - prev);
        }
    }
    labels
}

/// Integer labels only, as reals.
pub fn steps_since_values(labels: &[SinceLastUse]) -> Vec<f64> {
    labels
        .iter()
        .filter_map(|l| match l {
            SinceLastUse::New => None,
            SinceLastUse::Steps(s) => Some(*s as f64),
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricSummary {
    /// Unit-width bins keyed by `floor(value)`.
    pub histogram: BTreeMap<i64, u64>,
    pub mean: f64,
    pub median: f64,
    pub iqr: (f64, f64),
    pub count: usize,
}

/// Nearest-rank quantile of sorted data: `sorted[ceil(p * n) - 1]`.
pub fn nearest_rank(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let rank = ((p * n as f64).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

pub fn summarize(values: &[f64]) -> Result<MetricSummary, MetricsError> {
    if values.is_empty() {
        return Err(MetricsError::EmptyInput);
    }
    // Neumaier compensated sum
    let mut sum = 0.0f64;
    let mut comp = 0.0f64;
    for &v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    let mean = (sum + comp) / values.len() as f64;

    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut histogram = BTreeMap::new();
    for &v in &sorted {
        *histogram.entry(v.floor() as i64).or_insert(0) += 1;
    }
    Ok(MetricSummary {
        histogram,
        mean,
        median: nearest_rank(&sorted, 0.5),
        iqr: (nearest_rank(&sorted, 0.25), nearest_rank(&sorted, 0.75)),
        count: values.len(),
    })
}

pub const SUMMARY_HEADER: &str = "metric,mean,median,q25,q75,count";

pub fn write_summary_table<W: Write>(
    mut out: W,
    rows: &[(&str, &MetricSummary)],
) -> std::io::Result<()> {
    writeln!(out, "{SUMMARY_HEADER}")?;
    for (name, s) in rows {
        writeln!(
            out,
            "{name},{},{},{},{},{}",
            s.mean, s.median, s.iqr.0, s.iqr.1, s.count
        )?;
    }
    Ok(())
}

pub fn write_histogram_table<W: Write>(
    mut out: W,
    rows: &[(&str, &MetricSummary)],
) -> std::io::Result<()> {
    writeln!(out, "metric,bin,count")?;
    for (name, s) in rows {
        for (bin, count) in &s.histogram {
            writeln!(out, "{name},{bin},{count}")?;
        }
    }
    Ok(())
}

/// One event per line: `rollout_id creation_step use_step batch_id rank`.
pub fn write_ledger<W: Write>(mut out: W, events: &[UseEvent]) -> std::io::Result<()> {
    writeln!(
        out,
        "#rollout_id\tcreation_step\tuse_step\tbatch_id\twithin_batch_rank"
    )?;
    for e in events {
        writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}",
            e.rollout_id, e.creation_step, e.use_step, e.batch_id, e.within_batch_rank
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SeedStream;
    use proptest::prelude::*;
    use rand::Rng as _;

    fn ev(id: u64, created: u64, step: u64, batch: u64, rank: u32) -> UseEvent {
        UseEvent {
            rollout_id: id,
            creation_step: created,
            use_step: step,
            batch_id: batch,
            within_batch_rank: rank,
        }
    }

    #[test]
    fn staleness_definition() {
        assert_eq!(staleness(&ev(0, 10, 10, 0, 0)), Ok(0));
        assert_eq!(staleness(&ev(0, 10, 13, 0, 0)), Ok(3));
        assert!(matches!(
            staleness(&ev(0, 10, 9, 0, 0)),
            Err(MetricsError::CorruptedLedger { .. })
        ));
    }

    #[test]
    fn replay_counts_include_unused() {
        let mut ledger = UseLedger::new();
        ledger.record_generated(1);
        ledger.record_generated(2);
        for (step, rank) in [(3, 0), (5, 0), (5, 1), (5, 2)] {
            ledger.record_use(ev(1, 0, step, step, rank));
        }
        let counts = replay_counts(&ledger);
        assert_eq!(counts[&1], 4);
        assert_eq!(counts[&2], 0);
        assert_eq!(replay_ratio_values(&ledger, false), [4.0]);
        assert_eq!(replay_ratio_values(&ledger, true).len(), 2);
    }

    #[test]
    fn new_then_gaps() {
        let events = [
            ev(7, 0, 3, 3, 0),
            ev(7, 0, 5, 5, 0),
            ev(7, 0, 5, 5, 1),
            ev(7, 0, 5, 5, 2),
        ];
        let labels = steps_since_last_use_ranked(&events);
        use SinceLastUse::*;
        assert_eq!(labels, [New, Steps(2), Steps(0), Steps(0)]);
        let mut rng = SeedStream::new(0).rng("metrics");
        let mut shuffled = steps_since_last_use(&events, &mut rng);
        shuffled.sort_by_key(|l| match l {
            New => None,
            Steps(s) => Some(*s),
        });
        assert_eq!(shuffled, [New, Steps(0), Steps(0), Steps(2)]);
        assert_eq!(steps_since_last_use_ranked(&events[..1]), [New]);
    }

    #[test]
    fn summary_small_cases() {
        let s = summarize(&[0.0, 0.0, 0.0]).unwrap();
        assert_eq!((s.mean, s.median), (0.0, 0.0));
        let s = summarize(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(s.mean, 2.5);
        assert_eq!(s.median, 2.0);
        assert_eq!(s.iqr, (1.0, 3.0));
        assert_eq!(s.histogram.values().sum::<u64>(), 4);
        assert_eq!(summarize(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn summary_matches_reference_on_large_input() {
        let mut rng = SeedStream::new(5).rng("t");
        let values: Vec<f64> = (0..10_000)
            .map(|_| rng.random::<f64>() * 1e3 - 100.0)
            .collect();
        let s = summarize(&values).unwrap();
        // pairwise summation as an independent path
        fn pairwise(v: &[f64]) -> f64 {
            if v.len() <= 8 {
                v.iter().sum()
            } else {
                let (a, b) = v.split_at(v.len() / 2);
                pairwise(a) + pairwise(b)
            }
        }
        let reference = pairwise(&values) / values.len() as f64;
        assert!((s.mean - reference).abs() <= 1e-12 * reference.abs().max(1.0));
        let mut sorted = values.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(s.median, sorted[4999]);
        assert_eq!(s.iqr, (sorted[2499], sorted[7499]));
    }

    #[test]
    fn shared_ledger_collects_from_threads() {
        let shared = SharedLedger::new();
        std::thread::scope(|scope| {
            for t in 0..4u64 {
                let shared = &shared;
                scope.spawn(move || {
                    for k in 0..100u64 {
                        shared.record_uses(&[ev(t * 1000 + k, 0, k, t * 1000 + k, 0)]);
                    }
                });
            }
        });
        assert_eq!(shared.snapshot().len(), 400);
    }

    proptest! {
        #[test]
        fn counts_sum_to_events(uses in prop::collection::vec((0u64..20, 0u64..30), 0..200)) {
            let mut ledger = UseLedger::new();
            for (i, &(id, step)) in uses.iter().enumerate() {
                ledger.record_use(ev(id, 0, step, i as u64, 0));
            }
            prop_assert_eq!(replay_counts(&ledger).values().sum::<u64>() as usize, uses.len());
        }

        #[test]
        fn gaps_telescope(uses in prop::collection::vec((0u64..10, 0u64..30), 1..200), seed in any::<u64>()) {
            let events: Vec<UseEvent> = uses.iter().map(|&(id, step)| ev(id, 0, step, step, 0)).collect();
            let mut rng = SeedStream::new(seed).rng("metrics");
            let labels = steps_since_last_use(&events, &mut rng);
            let mut per: BTreeMap<u64, (u64, u64, u64)> = BTreeMap::new();
            for (e, l) in events.iter().zip(&labels) {
                let entry = per.entry(e.rollout_id).or_insert((u64::MAX, 0, 0));
                entry.0 = entry.0.min(e.use_step);
                entry.1 = entry.1.max(e.use_step);
                if let SinceLastUse::Steps(s) = l {
                    entry.2 += s;
                }
            }
            for (first, last, total) in per.values() {
                prop_assert_eq!(*total, last - first);
            }
        }
    }
}
