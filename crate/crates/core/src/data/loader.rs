//! Batching and the producer-consumer clip queue.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::augment::{augment_clip, AugmentConfig, ClipSample};
use super::frames::Dataset;

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[N, 3, T, S, S]`
    pub clips: Tensor<f32>,
    pub labels: Vec<usize>,
    pub videos: Vec<String>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Stacks clips along a new leading axis, preserving order.
pub fn make_batch(samples: &[ClipSample]) -> Result<Batch> {
    let first = samples
        .first()
        .ok_or_else(|| Error::invalid("cannot batch zero clips"))?;
    let shape = first.tensor.shape();
    let mut data = Vec::with_capacity(samples.len() * first.tensor.len());
    for s in samples {
        if s.tensor.shape() != shape {
            return Err(Error::shape("make_batch", s.tensor.shape(), shape));
        }
        data.extend_from_slice(s.tensor.data());
    }
    let mut full = vec![samples.len()];
    full.extend_from_slice(shape);
    Ok(Batch {
        clips: Tensor::new(full, data)?,
        labels: samples.iter().map(|s| s.label).collect(),
        videos: samples.iter().map(|s| s.provenance.video.clone()).collect(),
    })
}

/// Splits `n` items into consecutive batches of `batch_size`. A lone
/// trailing item joins the previous batch, since batch norm cannot train on
/// a single clip when the deepest feature map is 1×1×1.
pub fn batch_ranges(n: usize, batch_size: usize) -> Vec<std::ops::Range<usize>> {
    assert!(batch_size > 0);
    let mut out: Vec<std::ops::Range<usize>> = (0..n).step_by(batch_size).map(|s| s..(s + batch_size).min(n)).collect();
    if out.len() > 1 && out.last().is_some_and(|r| r.len() == 1) {
        let last = out.pop().unwrap();
        out.last_mut().unwrap().end = last.end;
    }
    out
}

/// One unit of queue work: augment dataset item `item` with a private seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Job {
    pub item: usize,
    pub seed: u64,
}

/// Shuffled visiting order for an epoch with a seed per clip.
pub fn epoch_jobs(n: usize, rng: &mut Rng) -> Vec<Job> {
    let mut order: Vec<usize> = (0..n).collect();
    rng.shuffle(&mut order);
    order
        .into_iter()
        .map(|item| Job {
            item,
            seed: rng.next_u64(),
        })
        .collect()
}

/// Bounded multi-producer queue yielding augmented clips in job order.
///
/// Each clip draws from its own seeded generator, so the stream is the same
/// for any number of producers.
pub struct ClipQueue {
    rx: Option<Receiver<(usize, Result<ClipSample>)>>,
    pending: BTreeMap<usize, Result<ClipSample>>,
    next: usize,
    total: usize,
    handles: Vec<JoinHandle<()>>,
}

impl ClipQueue {
    pub fn spawn(
        dataset: Arc<Dataset>,
        config: Arc<AugmentConfig>,
        jobs: Vec<Job>,
        producers: usize,
        capacity: usize,
    ) -> Self {
        let total = jobs.len();
        let (tx, rx) = sync_channel(capacity.max(1));
        let jobs = Arc::new(jobs);
        let cursor = Arc::new(AtomicUsize::new(0));
        let handles = (0..producers.max(1))
            .map(|_| {
                let (tx, jobs, cursor) = (tx.clone(), jobs.clone(), cursor.clone());
                let (dataset, config) = (dataset.clone(), config.clone());
                std::thread::spawn(move || loop {
                    let i = cursor.fetch_add(1, Ordering::Relaxed);
                    let Some(job) = jobs.get(i) else { break };
                    let mut rng = Rng::new(job.seed);
                    let sample = augment_clip(&dataset.items[job.item], &config, &mut rng);
                    if tx.send((i, sample)).is_err() {
                        break;
                    }
                })
            })
            .collect();
        ClipQueue {
            rx: Some(rx),
            pending: BTreeMap::new(),
            next: 0,
            total,
            handles,
        }
    }
}

impl Iterator for ClipQueue {
    type Item = Result<ClipSample>;

    fn next(&mut self) -> Option<Self::Item> {
        if self.next >= self.total {
            return None;
        }
        loop {
            if let Some(s) = self.pending.remove(&self.next) {
                self.next += 1;
                return Some(s);
            }
            match self.rx.as_ref()?.recv() {
                Ok((i, s)) => {
                    self.pending.insert(i, s);
                }
                Err(_) => {
                    self.next = self.total;
                    return Some(Err(Error::invalid("clip producers stopped early")));
                }
            }
        }
    }
}

impl Drop for ClipQueue {
    fn drop(&mut self) {
        self.rx.take();
        for h in self.handles.drain(..) {
            let _ = h.join();
        }
    }
}

/// Source of training batches.
pub trait TrainingData: Send + Sync {
    fn len(&self) -> usize;

    fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn num_classes(&self) -> usize;

    /// Batches for one epoch. All randomness is drawn from `rng` before the
    /// iterator is returned.
    fn epoch(&self, batch_size: usize, rng: &mut Rng) -> Box<dyn Iterator<Item = Result<Batch>> + '_>;
}

/// Freshly augmented clips from a dataset, one per video per epoch.
pub struct AugmentedData {
    pub dataset: Arc<Dataset>,
    pub config: Arc<AugmentConfig>,
    pub producers: usize,
    pub capacity: usize,
}

impl AugmentedData {
    pub fn new(dataset: Dataset, config: AugmentConfig) -> Self {
        AugmentedData {
            dataset: Arc::new(dataset),
            config: Arc::new(config),
            producers: 1,
            capacity: 64,
        }
    }
}

impl TrainingData for AugmentedData {
    fn len(&self) -> usize {
        self.dataset.len()
    }

    fn num_classes(&self) -> usize {
        self.dataset.num_classes()
    }

    fn epoch(&self, batch_size: usize, rng: &mut Rng) -> Box<dyn Iterator<Item = Result<Batch>> + '_> {
        let jobs = epoch_jobs(self.len(), rng);
        let ids: Vec<String> = jobs.iter().map(|j| self.dataset.items[j.item].id.clone()).collect();
        let mut queue = ClipQueue::spawn(
            self.dataset.clone(),
            self.config.clone(),
            jobs,
            self.producers,
            self.capacity,
        );
        let mut ranges = batch_ranges(ids.len(), batch_size).into_iter().enumerate();
        let mut failed = false;
        Box::new(std::iter::from_fn(move || {
            if failed {
                return None;
            }
            let (b, range) = ranges.next()?;
            let samples: Result<Vec<ClipSample>> = queue.by_ref().take(range.len()).collect();
            let out = samples.and_then(|s| make_batch(&s)).map_err(|e| Error::Batch {
                batch: b,
                videos: ids[range].to_vec(),
                source: Box::new(e),
            });
            failed = out.is_err();
            Some(out)
        }))
    }
}

/// A fixed set of pre-built clips, reshuffled every epoch.
pub struct FixedClips {
    pub clips: Vec<ClipSample>,
    pub num_classes: usize,
}

impl TrainingData for FixedClips {
    fn len(&self) -> usize {
        self.clips.len()
    }

    fn num_classes(&self) -> usize {
        self.num_classes
    }

    fn epoch(&self, batch_size: usize, rng: &mut Rng) -> Box<dyn Iterator<Item = Result<Batch>> + '_> {
        let mut order: Vec<usize> = (0..self.clips.len()).collect();
        rng.shuffle(&mut order);
        Box::new(batch_ranges(order.len(), batch_size).into_iter().map(move |r| {
            let picked: Vec<ClipSample> = order[r].iter().map(|&i| self.clips[i].clone()).collect();
            make_batch(&picked)
        }))
    }
}
