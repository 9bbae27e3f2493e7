use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{BiasCategory, CorpusError, McsbItem};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub per_category_train: usize,
    pub seed: u64,
}

/// Draws exactly `per_category_train` items per category into the train set
/// and leaves the rest for testing. Both halves keep the input order.
///
/// Categories are visited in sorted order from a single seeded stream, so the
/// result depends only on the item order and the seed.
pub fn split_train_test(
    items: &[McsbItem],
    spec: &SplitSpec,
) -> Result<(Vec<McsbItem>, Vec<McsbItem>), CorpusError> {
    if spec.per_category_train == 0 {
        return Err(CorpusError::ZeroTrainCount);
    }
    let mut by_category: BTreeMap<&BiasCategory, Vec<usize>> = BTreeMap::new();
    for (i, item) in items.iter().enumerate() {
        by_category.entry(&item.category).or_default().push(i);
    }
    for (category, indices) in &by_category {
        if indices.len() <= spec.per_category_train {
            return Err(CorpusError::SplitPrecondition {
                category: (*category).clone(),
                available: indices.len(),
                requested: spec.per_category_train,
            });
        }
    }

    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let mut in_train = vec![false; items.len()];
    for indices in by_category.values() {
        for pick in rand::seq::index::sample(&mut rng, indices.len(), spec.per_category_train) {
            in_train[indices[pick]] = true;
        }
    }

    let (train, test): (Vec<_>, Vec<_>) =
        items.iter().zip(&in_train).partition(|(_, train)| **train);
    Ok((
        train.into_iter().map(|(item, _)| item.clone()).collect(),
        test.into_iter().map(|(item, _)| item.clone()).collect(),
    ))
}
