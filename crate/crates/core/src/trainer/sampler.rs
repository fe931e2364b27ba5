use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::SliceRandom;
use rand::Rng;

use super::TrainError;
use crate::preprocess::{TaskCollection, TaskKey};

/// Draws a task with probability proportional to its pool size.
pub fn sample_task<R: Rng + ?Sized>(collection: &TaskCollection, rng: &mut R) -> Result<TaskKey, TrainError> {
    let sizes = collection.sizes();
    let keys: Vec<TaskKey> = sizes.keys().copied().collect();
    let weights: Vec<u64> = sizes.values().map(|&n| n as u64).collect();
    let dist = WeightedIndex::new(&weights).map_err(|_| TrainError::Exhausted)?;
    Ok(keys[dist.sample(rng)])
}

/// Per-epoch shuffled read position within one pool. When the pool runs out
/// mid-epoch it is reshuffled and reading wraps around.
#[derive(Debug, Clone)]
pub(crate) struct PoolCursor {
    order: Vec<usize>,
    pos: usize,
}

impl PoolCursor {
    pub(crate) fn new<R: Rng + ?Sized>(len: usize, rng: &mut R) -> Self {
        let mut order: Vec<usize> = (0..len).collect();
        order.shuffle(rng);
        Self { order, pos: 0 }
    }

    /// Next `n` indices; `n` must not exceed the pool size.
    pub(crate) fn take<R: Rng + ?Sized>(&mut self, n: usize, rng: &mut R) -> Vec<usize> {
        debug_assert!(n <= self.order.len());
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            let take = (n - out.len()).min(self.order.len() - self.pos);
            out.extend_from_slice(&self.order[self.pos..self.pos + take]);
            self.pos += take;
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{Granularity, LabeledInstance, Language, SentimentLabel};
    use crate::preprocess::{build_collection, DatasetSplit};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use statrs::distribution::{ChiSquared, ContinuousCDF};

    fn pool(n: usize) -> DatasetSplit {
        let train = (0..n)
            .map(|i| LabeledInstance {
                id: i.to_string(),
                text: format!("t{i}"),
                language: Language::Sl,
                level: Granularity::Document,
                label: SentimentLabel::Neutral,
                mean_score: None,
            })
            .collect();
        DatasetSplit { train, ..DatasetSplit::default() }
    }

    /// Pearson statistic of observed counts against expected probabilities.
    fn chi_square(observed: &[u64], probs: &[f64]) -> f64 {
        let n: u64 = observed.iter().sum();
        observed
            .iter()
            .zip(probs)
            .map(|(&o, &p)| {
                let e = p * n as f64;
                (o as f64 - e).powi(2) / e
            })
            .sum()
    }

    #[test]
    fn single_pool_always_drawn() {
        let c = build_collection(vec![(Granularity::Paragraph, pool(3))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..100 {
            assert_eq!(sample_task(&c, &mut rng).unwrap(), Granularity::Paragraph);
        }
    }

    #[test]
    fn empty_pools_exhaust() {
        let c = build_collection(vec![(Granularity::Document, pool(0))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(matches!(sample_task(&c, &mut rng), Err(TrainError::Exhausted)));
    }

    #[test]
    fn two_equal_pools_are_fair() {
        let c = build_collection(vec![(Granularity::Document, pool(100)), (Granularity::Sentence, pool(100))]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut counts = [0u64; 2];
        for _ in 0..10_000 {
            match sample_task(&c, &mut rng).unwrap() {
                Granularity::Document => counts[0] += 1,
                _ => counts[1] += 1,
            }
        }
        let freq = counts[0] as f64 / 10_000.0;
        assert!((freq - 0.5).abs() <= 0.02, "{freq}");
        let critical = ChiSquared::new(1.0).unwrap().inverse_cdf(0.99);
        assert!(chi_square(&counts, &[0.5, 0.5]) < critical);
    }

    #[test]
    fn proportional_to_train_pool_sizes() {
        let sizes = [8_334usize, 69_443, 129_033];
        let total: usize = sizes.iter().sum();
        let probs: Vec<f64> = sizes.iter().map(|&s| s as f64 / total as f64).collect();
        // normalised by hand: 0.0403, 0.3358, 0.6239
        for (p, want) in probs.iter().zip([0.040, 0.336, 0.624]) {
            assert!((p - want).abs() < 5e-4);
        }
        let c = build_collection(
            Granularity::ALL.iter().zip(sizes).map(|(g, n)| (*g, pool(n))).collect(),
        )
        .unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(2021);
        let mut counts = [0u64; 3];
        for _ in 0..100_000 {
            let k = sample_task(&c, &mut rng).unwrap();
            counts[Granularity::ALL.iter().position(|g| *g == k).unwrap()] += 1;
        }
        for (i, p) in probs.iter().enumerate() {
            assert!((counts[i] as f64 / 100_000.0 - p).abs() <= 0.02);
        }
        let critical = ChiSquared::new(2.0).unwrap().inverse_cdf(0.99);
        assert!(chi_square(&counts, &probs) < critical);
    }

    #[test]
    fn cursor_covers_pool_before_wrapping() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut cursor = PoolCursor::new(10, &mut rng);
        let mut first: Vec<usize> = cursor.take(4, &mut rng);
        first.extend(cursor.take(4, &mut rng));
        first.extend(cursor.take(2, &mut rng));
        first.sort_unstable();
        assert_eq!(first, (0..10).collect::<Vec<_>>());
        let wrapped = cursor.take(10, &mut rng);
        let mut sorted = wrapped.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, (0..10).collect::<Vec<_>>());
    }
}
