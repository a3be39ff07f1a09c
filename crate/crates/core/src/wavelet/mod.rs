//! Signal-level operators: Haar analysis, the kernel map `f(i)`, and the
//! causal approximate-signal operators inserted between decoder blocks.

pub mod causal;
pub mod haar;
pub mod kernel_map;
pub mod multiscale;

pub use causal::{causal_avg, causal_conv1d, ema_smooth};
pub use haar::{
    child_wavelet_value, haar_analysis, haar_analysis_step, reconstruct_block_signal, PyramidLevel,
    WaveletPyramid,
};
pub use kernel_map::{KernelMap, KernelMapMode};
pub use multiscale::{apply_multiscale, EmaConfig, LearnableKernelBank, WaveletMode};
