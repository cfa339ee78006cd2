use std::sync::mpsc::{sync_channel, Receiver};
use std::sync::Arc;
use std::thread::JoinHandle;

use ndarray::{Array4, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{augment, derive_seed, Dataset, ImageBatch};
use crate::{Error, Result};

const SPLIT_STREAM: u64 = 0x5EED_0001;
const EPOCH_STREAM: u64 = 0x5EED_0002;
const AUGMENT_STREAM: u64 = 0x5EED_0003;

/// Disjoint train/test partition as indices into a [`Dataset`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Split {
    pub train: Vec<usize>,
    pub test: Vec<usize>,
}

/// Stratified random split: every domain contributes
/// `round(n_k * test_fraction)` items (at least one, leaving at least one) to
/// the test side. Both sides are returned in ascending index order.
pub fn split_train_test(dataset: &Dataset, test_fraction: f64, seed: u64) -> Result<Split> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::config_at("dataset.test_fraction", format!("{test_fraction} is not in (0, 1)")));
    }
    let mut train = Vec::new();
    let mut test = Vec::new();
    for k in 0..dataset.num_domains() {
        let mut members: Vec<usize> = (0..dataset.len()).filter(|&i| dataset.labels[i] == k).collect();
        if members.len() < 2 {
            return Err(Error::Data(format!(
                "domain `{}` has {} item(s); at least 2 are needed to split",
                dataset.domain_names[k],
                members.len()
            )));
        }
        let n_test = ((members.len() as f64 * test_fraction).round() as usize).clamp(1, members.len() - 1);
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, SPLIT_STREAM, k as u64]));
        members.shuffle(&mut rng);
        test.extend_from_slice(&members[..n_test]);
        train.extend_from_slice(&members[n_test..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok(Split { train, test })
}

/// Endless without-replacement sampling over `len` items: the draw sequence
/// is the concatenation of one seeded permutation per epoch, so batches wrap
/// across epoch boundaries. The only state is the global draw position.
#[derive(Debug, Clone)]
pub struct BatchSampler {
    len: usize,
    batch_size: usize,
    seed: u64,
    cursor: u64,
    cached: Option<(u64, Vec<usize>)>,
}

impl BatchSampler {
    pub fn new(len: usize, batch_size: usize, seed: u64, cursor: u64) -> Result<Self> {
        if len == 0 {
            return Err(Error::Data("cannot sample batches from an empty set".into()));
        }
        if batch_size == 0 {
            return Err(Error::config_at("batch_size", "must be at least 1"));
        }
        Ok(Self { len, batch_size, seed, cursor, cached: None })
    }

    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn batch_size(&self) -> usize {
        self.batch_size
    }

    fn index_at(&mut self, position: u64) -> usize {
        let epoch = position / self.len as u64;
        if self.cached.as_ref().map(|(e, _)| *e) != Some(epoch) {
            let mut perm: Vec<usize> = (0..self.len).collect();
            perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(&[self.seed, EPOCH_STREAM, epoch])));
            self.cached = Some((epoch, perm));
        }
        self.cached.as_ref().expect("cached").1[(position % self.len as u64) as usize]
    }

    /// Next `batch_size` draws as `(global position, member index)` pairs.
    pub fn next_draws(&mut self) -> Vec<(u64, usize)> {
        let start = self.cursor;
        self.cursor += self.batch_size as u64;
        (start..self.cursor).map(|p| (p, self.index_at(p))).collect()
    }
}

/// Assembles one augmented batch. `members` maps sampler indices to dataset
/// indices. Each item's augmentation is seeded by its global draw position,
/// so batch contents never depend on which thread builds them.
pub fn make_batch(dataset: &Dataset, members: &[usize], draws: &[(u64, usize)], seed: u64) -> ImageBatch {
    let h = dataset.image_size;
    let mut pixels = Array4::<f32>::zeros((draws.len(), 3, h, h));
    let mut labels = Vec::with_capacity(draws.len());
    for (slot, &(position, member)) in draws.iter().enumerate() {
        let idx = members[member];
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(&[seed, AUGMENT_STREAM, position]));
        pixels.index_axis_mut(Axis(0), slot).assign(&augment(&dataset.images[idx], &mut rng));
        labels.push(dataset.labels[idx]);
    }
    ImageBatch { pixels, labels }
}

enum Source {
    Inline { dataset: Arc<Dataset>, members: Arc<Vec<usize>>, sampler: BatchSampler },
    Workers { receivers: Vec<Receiver<ImageBatch>>, handles: Vec<JoinHandle<()>>, next: usize },
}

/// Batch stream over a training subset, optionally prepared by background
/// workers feeding bounded queues. The sequence is identical for any worker
/// count.
pub struct BatchLoader {
    source: Source,
    batch_size: usize,
    cursor: u64,
}

impl BatchLoader {
    pub fn new(
        dataset: Arc<Dataset>,
        members: Arc<Vec<usize>>,
        batch_size: usize,
        seed: u64,
        cursor: u64,
        workers: usize,
    ) -> Result<Self> {
        let sampler = BatchSampler::new(members.len(), batch_size, seed, cursor)?;
        if workers == 0 {
            return Ok(Self { source: Source::Inline { dataset, members, sampler }, batch_size, cursor });
        }
        let mut receivers = Vec::with_capacity(workers);
        let mut handles = Vec::with_capacity(workers);
        for w in 0..workers {
            let (tx, rx) = sync_channel::<ImageBatch>(2);
            let (dataset, members) = (Arc::clone(&dataset), Arc::clone(&members));
            let mut sampler = sampler.clone();
            let stride = (workers * batch_size) as u64;
            sampler.cursor = cursor + (w * batch_size) as u64;
            handles.push(std::thread::spawn(move || loop {
                let draws = sampler.next_draws();
                sampler.cursor += stride - batch_size as u64;
                if tx.send(make_batch(&dataset, &members, &draws, seed)).is_err() {
                    break;
                }
            }));
            receivers.push(rx);
        }
        Ok(Self { source: Source::Workers { receivers, handles, next: 0 }, batch_size, cursor })
    }

    /// Global draw position of the next batch; persist this to resume.
    pub fn cursor(&self) -> u64 {
        self.cursor
    }

    pub fn next_batch(&mut self) -> ImageBatch {
        self.cursor += self.batch_size as u64;
        match &mut self.source {
            Source::Inline { dataset, members, sampler } => {
                let draws = sampler.next_draws();
                make_batch(dataset, members, &draws, sampler.seed)
            }
            Source::Workers { receivers, next, .. } => {
                let batch = receivers[*next % receivers.len()].recv().expect("data worker exited");
                *next += 1;
                batch
            }
        }
    }
}

impl Drop for BatchLoader {
    fn drop(&mut self) {
        if let Source::Workers { receivers, handles, .. } = &mut self.source {
            receivers.clear();
            for h in handles.drain(..) {
                let _ = h.join();
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data_pipeline::{generate_synthetic, SyntheticDomainConfig};

    fn dataset(per_domain: usize) -> Dataset {
        let cfg = SyntheticDomainConfig { num_per_domain: per_domain, ..Default::default() };
        generate_synthetic(&cfg, 3, 8, &["a".into(), "b".into(), "c".into()])
    }

    #[test]
    fn stratified_split_counts() {
        let ds = dataset(100);
        let split = split_train_test(&ds, 0.05, 3).unwrap();
        assert_eq!((split.train.len(), split.test.len()), (285, 15));
        let mut per_domain = [0; 3];
        for &i in &split.test {
            per_domain[ds.labels[i]] += 1;
        }
        assert_eq!(per_domain, [5, 5, 5]);
        assert!(split.train.iter().all(|i| !split.test.contains(i)));
    }

    #[test]
    fn split_is_reproducible() {
        let ds = dataset(20);
        assert_eq!(split_train_test(&ds, 0.2, 1).unwrap(), split_train_test(&ds, 0.2, 1).unwrap());
        assert_ne!(split_train_test(&ds, 0.2, 1).unwrap(), split_train_test(&ds, 0.2, 2).unwrap());
    }

    #[test]
    fn split_rejects_bad_fraction_and_tiny_domains() {
        let ds = dataset(10);
        assert!(split_train_test(&ds, 1.0, 0).is_err());
        assert!(split_train_test(&ds, 0.0, 0).is_err());
        let tiny = dataset(1);
        assert!(split_train_test(&tiny, 0.5, 0).is_err());
    }

    #[test]
    fn one_epoch_covers_every_index_once() {
        let mut s = BatchSampler::new(285, 16, 4, 0).unwrap();
        let draws: Vec<_> = (0..18).flat_map(|_| s.next_draws()).collect();
        let mut first_epoch: Vec<usize> = draws[..285].iter().map(|d| d.1).collect();
        first_epoch.sort_unstable();
        assert_eq!(first_epoch, (0..285).collect::<Vec<_>>());
        assert_eq!(draws.len(), 288);
    }

    #[test]
    fn batch_shape_and_determinism() {
        let ds = Arc::new(dataset(100));
        let members: Arc<Vec<usize>> = Arc::new((0..285).collect());
        let mut a = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 16, 7, 0, 0).unwrap();
        let mut b = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 16, 7, 0, 0).unwrap();
        let first = a.next_batch();
        assert_eq!(first.pixels.shape(), &[16, 3, 8, 8]);
        assert_eq!(first.labels.len(), 16);
        assert_eq!(first, b.next_batch());
        assert!(first.pixels.iter().all(|v| (-1.0..=1.0).contains(v)));
    }

    #[test]
    fn worker_count_does_not_change_the_sequence() {
        let ds = Arc::new(dataset(10));
        let members: Arc<Vec<usize>> = Arc::new((0..30).collect());
        let mut inline = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 4, 1, 8, 0).unwrap();
        let mut pooled = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 4, 1, 8, 3).unwrap();
        for _ in 0..10 {
            assert_eq!(inline.next_batch(), pooled.next_batch());
        }
        assert_eq!(inline.cursor(), pooled.cursor());
    }

    #[test]
    fn resuming_from_a_cursor_continues_the_stream() {
        let ds = Arc::new(dataset(10));
        let members: Arc<Vec<usize>> = Arc::new((0..30).collect());
        let mut full = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 4, 1, 0, 0).unwrap();
        for _ in 0..9 {
            full.next_batch();
        }
        let mut resumed = BatchLoader::new(Arc::clone(&ds), Arc::clone(&members), 4, 1, full.cursor(), 0).unwrap();
        assert_eq!(full.next_batch(), resumed.next_batch());
    }
}
