use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{config_err, Result};

/// How kernel length grows across the processed coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelMapMode {
    /// Kernel length interpolates linearly from 2 to `L`.
    #[default]
    LinearSize,
    /// Kernel lengths are powers of two, one approximation level per band.
    DyadicLevels,
}

/// Maps an embedding coordinate `i ∈ [E/2, E)` to a causal kernel length,
/// from 2 at `i = E/2` up to the context length at `i = E − 1`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct KernelMap {
    embed_dim: usize,
    context_len: usize,
    mode: KernelMapMode,
}

impl KernelMap {
    pub fn new(embed_dim: usize, context_len: usize, mode: KernelMapMode) -> Result<Self> {
        if embed_dim < 4 || embed_dim % 2 != 0 {
            return config_err(format!("embedding dimension {embed_dim} must be even and at least 4"));
        }
        if context_len < 2 {
            return config_err(format!("context length {context_len} must be at least 2"));
        }
        Ok(Self { embed_dim, context_len, mode })
    }

    pub fn embed_dim(&self) -> usize {
        self.embed_dim
    }

    pub fn context_len(&self) -> usize {
        self.context_len
    }

    pub fn mode(&self) -> KernelMapMode {
        self.mode
    }

    /// Coordinates the operator modifies; the lower half passes through.
    pub fn processed_range(&self) -> Range<usize> {
        self.embed_dim / 2..self.embed_dim
    }

    pub fn kernel_size(&self, i: usize) -> Result<usize> {
        let range = self.processed_range();
        if !range.contains(&i) {
            return config_err(format!("coordinate {i} outside processed range {range:?}"));
        }
        let half = self.embed_dim / 2;
        let l = self.context_len;
        let offset = (i - half) as f64;
        let size = match self.mode {
            KernelMapMode::LinearSize => {
                let slope = (l - 2) as f64 / (half - 1) as f64;
                (2.0 + offset * slope).round() as usize
            }
            KernelMapMode::DyadicLevels if i == self.embed_dim - 1 => l,
            KernelMapMode::DyadicLevels => {
                let level = 1 + (offset * (l as f64).log2() / half as f64).floor() as u32;
                (1usize << level.min(usize::BITS - 1)).min(l)
            }
        };
        Ok(size.clamp(2, l))
    }

    /// Kernel lengths for every processed coordinate, in order.
    pub fn sizes(&self) -> Vec<usize> {
        self.processed_range()
            .map(|i| self.kernel_size(i).expect("coordinate is in range"))
            .collect()
    }

    /// `Σ f(i)` over the processed coordinates.
    pub fn total_kernel_len(&self) -> usize {
        self.sizes().iter().sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_config_endpoints() {
        for mode in [KernelMapMode::LinearSize, KernelMapMode::DyadicLevels] {
            let map = KernelMap::new(128, 512, mode).unwrap();
            assert_eq!(map.kernel_size(64).unwrap(), 2);
            assert_eq!(map.kernel_size(127).unwrap(), 512);
        }
    }

    #[test]
    fn linear_midpoint() {
        let map = KernelMap::new(128, 512, KernelMapMode::LinearSize).unwrap();
        // 2 + 32·510/63 = 261.047…
        assert_eq!(map.kernel_size(96).unwrap(), 261);
    }

    #[test]
    fn dyadic_covers_levels_one_to_nine() {
        let map = KernelMap::new(128, 512, KernelMapMode::DyadicLevels).unwrap();
        let mut sizes = map.sizes();
        sizes.dedup();
        assert_eq!(sizes, vec![2, 4, 8, 16, 32, 64, 128, 256, 512]);
    }

    #[test]
    fn tiny_map() {
        let map = KernelMap::new(4, 4, KernelMapMode::LinearSize).unwrap();
        assert_eq!(map.sizes(), vec![2, 4]);
    }

    #[test]
    fn out_of_range_coordinates_rejected() {
        let map = KernelMap::new(8, 16, KernelMapMode::LinearSize).unwrap();
        assert!(map.kernel_size(3).is_err());
        assert!(map.kernel_size(8).is_err());
        assert!(KernelMap::new(6, 1, KernelMapMode::LinearSize).is_err());
        assert!(KernelMap::new(7, 16, KernelMapMode::LinearSize).is_err());
    }

    proptest::proptest! {
        #[test]
        fn monotone_and_bounded(half in 2usize..80, l in 2usize..700, dyadic: bool) {
            let mode = if dyadic { KernelMapMode::DyadicLevels } else { KernelMapMode::LinearSize };
            let map = KernelMap::new(2 * half, l, mode).unwrap();
            let sizes = map.sizes();
            proptest::prop_assert_eq!(sizes[0], 2);
            proptest::prop_assert_eq!(*sizes.last().unwrap(), l);
            for w in sizes.windows(2) {
                proptest::prop_assert!(w[0] <= w[1]);
            }
            proptest::prop_assert!(sizes.iter().all(|&s| (2..=l).contains(&s)));
        }
    }
}
