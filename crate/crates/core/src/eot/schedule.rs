use rand::seq::index;

use crate::rng::StreamRng;

/// Next batch: `min(⌊reuse_fraction·batch_size⌋, batch_size − min_new,
/// prev.len())` items drawn uniformly without replacement from `prev` (kept
/// in their original order), followed by fresh draws from `sample` to fill
/// the batch.
pub fn pose_batch_schedule<T: Clone>(
    prev: &[T],
    rng: &mut StreamRng,
    batch_size: usize,
    reuse_fraction: f64,
    min_new: usize,
    mut sample: impl FnMut(&mut StreamRng) -> T,
) -> Vec<T> {
    let cap = (reuse_fraction * batch_size as f64).floor() as usize;
    let reuse = cap.min(batch_size.saturating_sub(min_new)).min(prev.len());
    let mut picked = if reuse > 0 {
        index::sample(rng, prev.len(), reuse).into_vec()
    } else {
        Vec::new()
    };
    picked.sort_unstable();
    let mut batch: Vec<T> = picked.into_iter().map(|i| prev[i].clone()).collect();
    while batch.len() < batch_size {
        batch.push(sample(rng));
    }
    batch
}
