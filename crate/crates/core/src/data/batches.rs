use rand::Rng;

use crate::error::{data_err, Result};
use crate::model::TokenBatch;
use crate::tensor::split_rng;

/// Inputs plus next-token targets, both `[batch×seq_len]` row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LmBatch {
    pub inputs: TokenBatch,
    pub targets: Vec<usize>,
    pub offsets: Vec<usize>,
}

fn check_len(stream: &[usize], seq_len: usize) -> Result<()> {
    if seq_len == 0 || stream.len() <= seq_len {
        return data_err(format!("stream of {} tokens cannot supply windows of {seq_len}+1", stream.len()));
    }
    Ok(())
}

fn window(stream: &[usize], seq_len: usize, offsets: Vec<usize>) -> Result<LmBatch> {
    let mut ids = Vec::with_capacity(offsets.len() * seq_len);
    let mut targets = Vec::with_capacity(offsets.len() * seq_len);
    for &o in &offsets {
        ids.extend_from_slice(&stream[o..o + seq_len]);
        targets.extend_from_slice(&stream[o + 1..o + seq_len + 1]);
    }
    Ok(LmBatch { inputs: TokenBatch::new(offsets.len(), seq_len, ids)?, targets, offsets })
}

/// One batch of windows with start offsets uniform on `0..=len−seq_len−1`.
pub fn crop_batch(stream: &[usize], seq_len: usize, batch: usize, rng: &mut impl Rng) -> Result<LmBatch> {
    check_len(stream, seq_len)?;
    let hi = stream.len() - seq_len - 1;
    let offsets = (0..batch).map(|_| rng.random_range(0..=hi)).collect();
    window(stream, seq_len, offsets)
}

/// `count` seeded batches.
pub fn crop_batches(stream: &[usize], seq_len: usize, batch: usize, count: usize, seed: u64) -> Result<Vec<LmBatch>> {
    let mut rng = split_rng(seed, "crop");
    (0..count).map(|_| crop_batch(stream, seq_len, batch, &mut rng)).collect()
}

/// Non-overlapping windows from the start of the stream, at most `max_windows`
/// of them, grouped into batches of `batch`. Used for deterministic evaluation.
pub fn tiled_batches(stream: &[usize], seq_len: usize, batch: usize, max_windows: usize) -> Result<Vec<LmBatch>> {
    check_len(stream, seq_len)?;
    let n = ((stream.len() - 1) / seq_len).min(max_windows);
    let offsets: Vec<usize> = (0..n).map(|w| w * seq_len).collect();
    offsets.chunks(batch.max(1)).map(|c| window(stream, seq_len, c.to_vec())).collect()
}
