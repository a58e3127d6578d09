//! Experience replay: a bounded FIFO of earlier-stage examples and a mixer
//! that composes every batch at an exact new-to-replay ratio.

use std::collections::VecDeque;
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use super::{CorpusError, PreferenceExample, Result};
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum AdmissionPolicy {
    All,
    /// Admit only items whose observed reward is at least `threshold`.
    HighRewardOnly {
        threshold: f64,
    },
}

impl Default for AdmissionPolicy {
    /// Full Stage-1 verifiable reward (format + accuracy).
    fn default() -> Self {
        AdmissionPolicy::HighRewardOnly { threshold: 2.0 }
    }
}

impl AdmissionPolicy {
    pub fn admits(&self, reward: Option<f64>) -> bool {
        match *self {
            AdmissionPolicy::All => true,
            AdmissionPolicy::HighRewardOnly { threshold } => reward.is_some_and(|r| r >= threshold),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplayBuffer {
    capacity: usize,
    items: VecDeque<PreferenceExample>,
    admission: AdmissionPolicy,
}

impl ReplayBuffer {
    pub fn new(capacity: usize, admission: AdmissionPolicy) -> Self {
        ReplayBuffer {
            capacity,
            items: VecDeque::with_capacity(capacity.min(1 << 16)),
            admission,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn admission(&self) -> AdmissionPolicy {
        self.admission
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn items(&self) -> impl ExactSizeIterator<Item = &PreferenceExample> {
        self.items.iter()
    }

    pub fn get(&self, index: usize) -> Option<&PreferenceExample> {
        self.items.get(index)
    }

    /// Offers an item with its observed reward; returns whether it was
    /// admitted. The oldest item is evicted when the buffer is full.
    pub fn offer(&mut self, item: PreferenceExample, reward: Option<f64>) -> bool {
        if self.capacity == 0 || !self.admission.admits(reward) {
            return false;
        }
        if self.items.len() == self.capacity {
            self.items.pop_front();
        }
        self.items.push_back(item);
        true
    }
}

/// `new:replay` item counts per batch, written `5:1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct MixRatio {
    pub new: usize,
    pub replay: usize,
}

impl MixRatio {
    pub fn new(new: usize, replay: usize) -> Result<MixRatio> {
        if new == 0 && replay == 0 {
            return Err(CorpusError::InvalidRatio("0:0 selects no items".into()));
        }
        Ok(MixRatio { new, replay })
    }

    pub fn pass_through() -> MixRatio {
        MixRatio { new: 1, replay: 0 }
    }

    /// `(new, replay)` counts for one batch of `batch_size` items.
    pub fn split(&self, batch_size: usize) -> Result<(usize, usize)> {
        if self.new == 0 && self.replay == 0 {
            return Err(CorpusError::InvalidRatio("0:0 selects no items".into()));
        }
        if batch_size == 0 {
            return Err(CorpusError::InvalidRatio("batch size must be at least 1".into()));
        }
        if self.replay == 0 {
            return Ok((batch_size, 0));
        }
        let parts = self.new + self.replay;
        if batch_size % parts != 0 {
            return Err(CorpusError::InvalidRatio(format!(
                "batch size {batch_size} is not divisible by {parts} ({self})"
            )));
        }
        let unit = batch_size / parts;
        Ok((unit * self.new, unit * self.replay))
    }
}

impl fmt::Display for MixRatio {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.new, self.replay)
    }
}

impl FromStr for MixRatio {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self> {
        let bad = || CorpusError::InvalidRatio(format!("expected `new:replay`, got {s:?}"));
        let (a, b) = s.trim().split_once(':').ok_or_else(bad)?;
        let a = a.trim().parse().map_err(|_| bad())?;
        let b = b.trim().parse().map_err(|_| bad())?;
        MixRatio::new(a, b)
    }
}

impl Serialize for MixRatio {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for MixRatio {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ItemSource {
    New,
    Replay,
}

/// One batch: new items first, in stream order, then the replay draw.
#[derive(Debug, Clone, PartialEq)]
pub struct MixedBatch {
    pub items: Vec<(ItemSource, PreferenceExample)>,
}

impl MixedBatch {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn count(&self, source: ItemSource) -> usize {
        self.items.iter().filter(|(s, _)| *s == source).count()
    }
}

/// Composes a single batch from exactly the right number of `new_items`.
/// Replay items are drawn without replacement using `rng`.
pub fn mix_batch(
    new_items: Vec<PreferenceExample>,
    buffer: &ReplayBuffer,
    n_replay: usize,
    rng: &mut seed::Rng,
) -> Result<MixedBatch> {
    if n_replay > 0 && buffer.is_empty() {
        return Err(CorpusError::EmptyBuffer);
    }
    if n_replay > buffer.len() {
        return Err(CorpusError::InsufficientBuffer {
            available: buffer.len(),
            needed: n_replay,
        });
    }
    let mut items: Vec<_> = new_items.into_iter().map(|e| (ItemSource::New, e)).collect();
    if n_replay > 0 {
        for i in index::sample(rng, buffer.len(), n_replay) {
            items.push((ItemSource::Replay, buffer.items[i].clone()));
        }
    }
    Ok(MixedBatch { items })
}

/// Iterator of mixed batches over a stream of new items. Ends when the stream
/// cannot fill the next batch's new-item quota; a trailing partial quota is
/// dropped so that every emitted batch has the exact composition.
pub struct ReplayMix<'a, I> {
    new_items: I,
    buffer: &'a ReplayBuffer,
    n_new: usize,
    n_replay: usize,
    seed: u64,
    batch_index: u64,
}

impl<I: Iterator<Item = PreferenceExample>> Iterator for ReplayMix<'_, I> {
    type Item = MixedBatch;

    fn next(&mut self) -> Option<MixedBatch> {
        let new: Vec<_> = self.new_items.by_ref().take(self.n_new).collect();
        if new.len() < self.n_new || (self.n_new == 0 && self.n_replay == 0) {
            return None;
        }
        let mut rng = seed::derived_rng(self.seed, "replay", self.batch_index);
        self.batch_index += 1;
        Some(
            mix_batch(new, self.buffer, self.n_replay, &mut rng).expect("buffer size checked when the mixer was built"),
        )
    }
}

/// Validates the configuration and returns the batch iterator. Each batch
/// holds `batch_size·new/(new+replay)` new items and the rest from the buffer.
/// A ratio with no new items yields batches indefinitely.
pub fn replay_mix<I: IntoIterator<Item = PreferenceExample>>(
    new_items: I,
    buffer: &ReplayBuffer,
    ratio: MixRatio,
    batch_size: usize,
    seed: u64,
) -> Result<ReplayMix<'_, I::IntoIter>> {
    let (n_new, n_replay) = ratio.split(batch_size)?;
    if n_replay > 0 && buffer.is_empty() {
        return Err(CorpusError::EmptyBuffer);
    }
    if n_replay > buffer.len() {
        return Err(CorpusError::InsufficientBuffer {
            available: buffer.len(),
            needed: n_replay,
        });
    }
    Ok(ReplayMix {
        new_items: new_items.into_iter(),
        buffer,
        n_new,
        n_replay,
        seed,
        batch_index: 0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{synth_corpus, CorpusSpec, LabelRule, Modality};

    fn items(n: usize, prefix: &str) -> Vec<PreferenceExample> {
        let mut spec = CorpusSpec::new(n, 4, LabelRule::RandomLinear { rule_seed: 0 }, 1);
        spec.modality = Modality::Textual;
        spec.id_prefix = prefix.into();
        synth_corpus(&spec).unwrap()
    }

    fn buffer(n: usize) -> ReplayBuffer {
        let mut b = ReplayBuffer::new(n, AdmissionPolicy::All);
        for ex in items(n, "old") {
            b.offer(ex, None);
        }
        b
    }

    #[test]
    fn five_to_one_composition() {
        let b = buffer(50);
        let batches: Vec<_> = replay_mix(items(1000, "new"), &b, "5:1".parse().unwrap(), 120, 3)
            .unwrap()
            .collect();
        assert_eq!(batches.len(), 10);
        for batch in &batches {
            assert_eq!(batch.count(ItemSource::New), 100);
            assert_eq!(batch.count(ItemSource::Replay), 20);
            let mut ids: Vec<_> = batch
                .items
                .iter()
                .filter(|(s, _)| *s == ItemSource::Replay)
                .map(|(_, e)| e.id.as_str())
                .collect();
            ids.sort_unstable();
            ids.dedup();
            assert_eq!(ids.len(), 20, "replay drawn without replacement");
        }
    }

    #[test]
    fn pass_through_preserves_order() {
        let new = items(10, "new");
        let empty = ReplayBuffer::new(4, AdmissionPolicy::All);
        let out: Vec<_> = replay_mix(new.clone(), &empty, MixRatio::pass_through(), 5, 0)
            .unwrap()
            .flat_map(|b| b.items.into_iter().map(|(_, e)| e))
            .collect();
        assert_eq!(out, new);
    }

    #[test]
    fn configuration_errors() {
        let empty = ReplayBuffer::new(4, AdmissionPolicy::All);
        let r: MixRatio = "4:1".parse().unwrap();
        assert!(matches!(
            replay_mix(items(5, "n"), &empty, r, 10, 0),
            Err(CorpusError::EmptyBuffer)
        ));
        assert!(matches!(
            replay_mix(items(5, "n"), &buffer(1), r, 10, 0),
            Err(CorpusError::InsufficientBuffer {
                available: 1,
                needed: 2
            })
        ));
        assert!(matches!(
            replay_mix(items(5, "n"), &buffer(4), r, 12, 0),
            Err(CorpusError::InvalidRatio(_))
        ));
        assert!("0:0".parse::<MixRatio>().is_err());
        assert!("5-1".parse::<MixRatio>().is_err());
    }

    #[test]
    fn fifo_eviction_and_admission() {
        let mut b = ReplayBuffer::new(2, AdmissionPolicy::default());
        let xs = items(3, "x");
        assert!(!b.offer(xs[0].clone(), Some(1.0)));
        assert!(!b.offer(xs[0].clone(), None));
        for x in &xs {
            assert!(b.offer(x.clone(), Some(2.0)));
        }
        let ids: Vec<_> = b.items().map(|e| e.id.clone()).collect();
        assert_eq!(ids, vec![xs[1].id.clone(), xs[2].id.clone()]);
    }

    #[test]
    fn deterministic_in_seed() {
        let b = buffer(30);
        let run = |seed| -> Vec<MixedBatch> {
            replay_mix(items(40, "n"), &b, "4:1".parse().unwrap(), 10, seed)
                .unwrap()
                .collect()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5), run(6));
    }
}
