//! Prioritized sequence replay with stored recurrent states.

mod segment;
mod sumtree;

pub use segment::{segment_episode, RecurrentState, Segment, Trajectory, BURN_IN, OVERLAP, UNROLL};
pub use sumtree::SumTree;

use crate::error::{EtherError, Result};
use log::warn;
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::collections::{HashMap, VecDeque};
use std::sync::{Arc, Mutex};

pub const PRIORITY_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ReplayConfig {
    /// Capacity in observations (transitions).
    pub capacity: usize,
    pub priority_exponent: f64,
    pub importance_exponent: f64,
    /// Mixture between max and mean |δ| in the sequence priority.
    pub eta: f64,
    pub batch_size: usize,
}

impl Default for ReplayConfig {
    fn default() -> Self {
        Self {
            capacity: 10_000,
            priority_exponent: 0.9,
            importance_exponent: 0.6,
            eta: 0.9,
            batch_size: 64,
        }
    }
}

impl ReplayConfig {
    pub fn validate(&self) -> Result<()> {
        if self.capacity == 0 || self.batch_size == 0 {
            return Err(EtherError::Config("replay: capacity and batch_size must be positive".into()));
        }
        if !(self.priority_exponent >= 0.0 && self.importance_exponent >= 0.0 && (0.0..=1.0).contains(&self.eta)) {
            return Err(EtherError::Config("replay: exponents must be ≥ 0 and eta in [0, 1]".into()));
        }
        Ok(())
    }
}

pub type SegmentId = u64;

#[derive(Debug, Clone)]
pub struct SampledBatch<S> {
    pub ids: Vec<SegmentId>,
    pub segments: Vec<Arc<Segment<S>>>,
    /// Importance weights, max-normalised within the batch.
    pub weights: Vec<f64>,
    pub probabilities: Vec<f64>,
}

/// Sequence priority `η·max|δ| + (1 − η)·mean|δ|`, floored.
pub fn sequence_priority(td_errors: &[f64], eta: f64) -> f64 {
    if td_errors.is_empty() {
        return PRIORITY_FLOOR;
    }
    let max = td_errors.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let mean = td_errors.iter().map(|d| d.abs()).sum::<f64>() / td_errors.len() as f64;
    (eta * max + (1.0 - eta) * mean).max(PRIORITY_FLOOR)
}

struct Entry<S> {
    segment: Arc<Segment<S>>,
    slot: usize,
    priority: f64,
}

/// Proportional prioritized buffer over segments, with oldest-first eviction
/// by observation count.
pub struct PrioritizedBuffer<S> {
    cfg: ReplayConfig,
    tree: SumTree,
    free_slots: Vec<usize>,
    slot_ids: Vec<Option<SegmentId>>,
    entries: HashMap<SegmentId, Entry<S>>,
    order: VecDeque<SegmentId>,
    next_id: SegmentId,
    observations: usize,
    max_priority: f64,
}

impl<S: Clone> PrioritizedBuffer<S> {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        cfg.validate()?;
        // every segment owns at least one observation, so `capacity` slots suffice
        Ok(Self {
            cfg,
            tree: SumTree::new(cfg.capacity),
            free_slots: (0..cfg.capacity).rev().collect(),
            slot_ids: vec![None; cfg.capacity],
            entries: HashMap::new(),
            order: VecDeque::new(),
            next_id: 0,
            observations: 0,
            max_priority: 1.0,
        })
    }

    pub fn config(&self) -> &ReplayConfig {
        &self.cfg
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Observations currently held, each counted once by its owning segment.
    pub fn observations(&self) -> usize {
        self.observations
    }

    pub fn contains(&self, id: SegmentId) -> bool {
        self.entries.contains_key(&id)
    }

    pub fn priority(&self, id: SegmentId) -> Option<f64> {
        self.entries.get(&id).map(|e| e.priority)
    }

    pub fn segment(&self, id: SegmentId) -> Option<Arc<Segment<S>>> {
        self.entries.get(&id).map(|e| e.segment.clone())
    }

    /// Live ids, oldest first.
    pub fn ids(&self) -> impl Iterator<Item = SegmentId> + '_ {
        self.order.iter().copied()
    }

    /// Segment the episode, insert at the current maximum priority, evict.
    pub fn store_episode(&mut self, episode: &Trajectory<S>) -> Result<Vec<SegmentId>> {
        let segments = segment_episode(episode)?;
        let mut ids = Vec::with_capacity(segments.len());
        for seg in segments {
            ids.push(self.insert(seg));
        }
        while self.observations > self.cfg.capacity {
            self.evict_oldest();
        }
        Ok(ids.into_iter().filter(|id| self.entries.contains_key(id)).collect())
    }

    fn insert(&mut self, segment: Segment<S>) -> SegmentId {
        if self.free_slots.is_empty() {
            self.evict_oldest();
        }
        let slot = self.free_slots.pop().expect("eviction frees a slot");
        let id = self.next_id;
        self.next_id += 1;
        let p = self.max_priority;
        self.tree.set(slot, p.powf(self.cfg.priority_exponent));
        self.slot_ids[slot] = Some(id);
        self.observations += segment.owned_observations;
        self.entries.insert(
            id,
            Entry {
                segment: Arc::new(segment),
                slot,
                priority: p,
            },
        );
        self.order.push_back(id);
        id
    }

    fn evict_oldest(&mut self) {
        if let Some(id) = self.order.pop_front() {
            let e = self.entries.remove(&id).expect("ordered ids are live");
            self.tree.set(e.slot, 0.0);
            self.slot_ids[e.slot] = None;
            self.free_slots.push(e.slot);
            self.observations -= e.segment.owned_observations;
        }
    }

    /// Draw `batch_size` segments with replacement, `P(i) ∝ p_i^α`.
    pub fn sample_batch(&self, batch_size: usize, rng: &mut impl Rng) -> Result<SampledBatch<S>> {
        if self.entries.is_empty() {
            return Err(EtherError::Usage("sampling from an empty replay buffer".into()));
        }
        let total = self.tree.total();
        let n = self.entries.len() as f64;
        let mut batch = SampledBatch {
            ids: Vec::with_capacity(batch_size),
            segments: Vec::with_capacity(batch_size),
            weights: Vec::with_capacity(batch_size),
            probabilities: Vec::with_capacity(batch_size),
        };
        for _ in 0..batch_size {
            let slot = self.tree.find(rng.random::<f64>() * total);
            let id = self.slot_ids[slot].expect("positive mass only on live slots");
            let p = self.tree.get(slot) / total;
            batch.ids.push(id);
            batch.segments.push(self.entries[&id].segment.clone());
            batch.probabilities.push(p);
            batch.weights.push((1.0 / (n * p)).powf(self.cfg.importance_exponent));
        }
        let max = batch.weights.iter().cloned().fold(0.0, f64::max);
        batch.weights.iter_mut().for_each(|w| *w /= max);
        Ok(batch)
    }

    /// Set priorities from per-segment TD errors over valid trainable steps.
    /// Ids that are no longer stored are skipped.
    pub fn update_priorities(&mut self, ids: &[SegmentId], td_errors: &[Vec<f64>]) -> Result<()> {
        if ids.len() != td_errors.len() {
            return Err(EtherError::shape(format!("{} TD error rows", ids.len()), td_errors.len()));
        }
        for (id, errs) in ids.iter().zip(td_errors) {
            let p = sequence_priority(errs, self.cfg.eta);
            match self.entries.get_mut(id) {
                Some(e) => {
                    e.priority = p;
                    self.tree.set(e.slot, p.powf(self.cfg.priority_exponent));
                    self.max_priority = self.max_priority.max(p);
                }
                None => warn!("priority update for segment {id} ignored: no longer in the buffer"),
            }
        }
        Ok(())
    }
}

/// Thread-safe handle: every operation takes the lock, so concurrent appends
/// and samples are linearizable and each priority update is atomic.
pub struct SharedReplay<S> {
    inner: Mutex<PrioritizedBuffer<S>>,
}

impl<S: Clone> SharedReplay<S> {
    pub fn new(cfg: ReplayConfig) -> Result<Self> {
        Ok(Self {
            inner: Mutex::new(PrioritizedBuffer::new(cfg)?),
        })
    }

    pub fn with<T>(&self, f: impl FnOnce(&mut PrioritizedBuffer<S>) -> T) -> T {
        let mut guard = self.inner.lock().unwrap_or_else(|p| p.into_inner());
        f(&mut guard)
    }

    pub fn store_episode(&self, episode: &Trajectory<S>) -> Result<Vec<SegmentId>> {
        self.with(|b| b.store_episode(episode))
    }

    pub fn sample_batch(&self, batch_size: usize, rng: &mut impl Rng) -> Result<SampledBatch<S>> {
        self.with(|b| b.sample_batch(batch_size, rng))
    }

    pub fn update_priorities(&self, ids: &[SegmentId], td_errors: &[Vec<f64>]) -> Result<()> {
        self.with(|b| b.update_priorities(ids, td_errors))
    }

    pub fn observations(&self) -> usize {
        self.with(|b| b.observations())
    }

    pub fn len(&self) -> usize {
        self.with(|b| b.len())
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vocab::Goal;
    use rand::rngs::StdRng;
    use rand::SeedableRng;

    fn episode(len: usize, tag: u32) -> Trajectory<u32> {
        Trajectory::new(
            Goal::new([2, 3]),
            (0..=len as u32).map(|t| tag * 1000 + t).collect(),
            vec![0; len],
            vec![0.0; len],
            true,
        )
        .unwrap()
    }

    fn cfg(capacity: usize) -> ReplayConfig {
        ReplayConfig {
            capacity,
            ..ReplayConfig::default()
        }
    }

    #[test]
    fn priority_formula() {
        assert_eq!(sequence_priority(&[1.0, 1.0, 1.0], 0.9), 1.0);
        assert!((sequence_priority(&[2.0, 0.0], 0.9) - 1.9).abs() < 1e-12);
        assert_eq!(sequence_priority(&[0.0, 0.0], 0.9), PRIORITY_FLOOR);
        assert_eq!(sequence_priority(&[], 0.9), PRIORITY_FLOOR);
    }

    #[test]
    fn empty_buffer_and_empty_episode_are_usage_errors() {
        let b = PrioritizedBuffer::<u32>::new(cfg(100)).unwrap();
        let mut rng = StdRng::seed_from_u64(0);
        assert!(matches!(b.sample_batch(4, &mut rng), Err(EtherError::Usage(_))));
        assert!(matches!(
            Trajectory::<u32>::new(Goal::default(), vec![0], vec![], vec![], true),
            Err(EtherError::Usage(_))
        ));
    }

    #[test]
    fn equal_priorities_give_unit_weights() {
        let mut b = PrioritizedBuffer::new(cfg(1000)).unwrap();
        for i in 0..5 {
            b.store_episode(&episode(25, i)).unwrap();
        }
        let mut rng = StdRng::seed_from_u64(1);
        let s = b.sample_batch(64, &mut rng).unwrap();
        assert!(s.weights.iter().all(|&w| w == 1.0));
    }

    #[test]
    fn eviction_is_oldest_first_and_capacity_holds() {
        let mut b = PrioritizedBuffer::new(cfg(100)).unwrap();
        let first = b.store_episode(&episode(40, 0)).unwrap();
        assert_eq!(b.observations(), 40);
        let mut later = Vec::new();
        for i in 1..4 {
            later.extend(b.store_episode(&episode(40, i)).unwrap());
            assert!(b.observations() <= 100);
        }
        assert!(first.iter().all(|id| !b.contains(*id)));
        let live: Vec<SegmentId> = b.ids().collect();
        assert!(live.windows(2).all(|w| w[0] < w[1]));
        assert!(later.iter().rev().take(4).all(|id| b.contains(*id)));
    }

    #[test]
    fn new_segments_take_the_running_maximum_priority() {
        let mut b = PrioritizedBuffer::new(cfg(1000)).unwrap();
        let ids = b.store_episode(&episode(10, 0)).unwrap();
        b.update_priorities(&ids, &[vec![5.0]]).unwrap();
        let ids2 = b.store_episode(&episode(10, 1)).unwrap();
        assert_eq!(b.priority(ids2[0]), Some(5.0));
    }

    #[test]
    fn unknown_ids_are_ignored() {
        let mut b = PrioritizedBuffer::new(cfg(1000)).unwrap();
        let ids = b.store_episode(&episode(10, 0)).unwrap();
        b.update_priorities(&[ids[0] + 77], &[vec![3.0]]).unwrap();
        assert_eq!(b.priority(ids[0]), Some(1.0));
    }

    #[test]
    fn concurrent_appends_never_exceed_capacity() {
        let shared = Arc::new(SharedReplay::new(cfg(500)).unwrap());
        std::thread::scope(|scope| {
            for t in 0..4u32 {
                let shared = shared.clone();
                scope.spawn(move || {
                    for i in 0..50 {
                        shared
                            .store_episode(&episode(1 + (i * 7 + t as usize) % 40, t * 100 + i as u32))
                            .unwrap();
                        assert!(shared.observations() <= 500);
                    }
                });
            }
            let shared = shared.clone();
            scope.spawn(move || {
                let mut rng = StdRng::seed_from_u64(9);
                for _ in 0..100 {
                    if let Ok(b) = shared.sample_batch(8, &mut rng) {
                        let errs: Vec<Vec<f64>> = b.ids.iter().map(|_| vec![0.5]).collect();
                        shared.update_priorities(&b.ids, &errs).unwrap();
                    }
                }
            });
        });
        assert!(shared.observations() <= 500);
    }
}
