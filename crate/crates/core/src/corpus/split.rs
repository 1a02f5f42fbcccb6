use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Corpus, CorpusError, Split};

/// Assigns train/dev/test to every review without a split, in proportion
/// `ratios`. Reviews that already carry a split keep it.
pub fn split_dataset(mut corpus: Corpus, ratios: [f64; 3], seed: u64) -> Result<Corpus, CorpusError> {
    if corpus.reviews.is_empty() {
        return Err(CorpusError::Contract("cannot split an empty corpus".into()));
    }
    if ratios.iter().any(|r| *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(CorpusError::Contract(format!("split ratios {ratios:?} must be nonnegative and sum to 1")));
    }
    let mut open: Vec<usize> = (0..corpus.reviews.len()).filter(|&i| corpus.reviews[i].split.is_none()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    open.shuffle(&mut rng);
    let n = open.len() as f64;
    let train_end = (ratios[0] * n).round() as usize;
    let dev_end = (((ratios[0] + ratios[1]) * n).round() as usize).max(train_end);
    for (pos, &i) in open.iter().enumerate() {
        corpus.reviews[i].split = Some(if pos < train_end {
            Split::Train
        } else if pos < dev_end {
            Split::Dev
        } else {
            Split::Test
        });
    }
    Ok(corpus)
}
