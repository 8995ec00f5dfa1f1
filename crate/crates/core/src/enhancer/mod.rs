//! Waveform enhancer: a U-net style convolutional generator with a global
//! residual connection, a conditional least-squares discriminator, and a
//! warm-up phase that trains against a spectral-subtraction baseline.

mod baseline;
mod chunk;
mod segan;

pub use baseline::baseline_pre_enhance;
pub use chunk::{chunk_stream, concat_stream, ChunkMode, ChunkPlacement, ChunkSpec, CoverageMap};
pub use segan::{
    discriminator, enhance, generator, grad_check_segan, init_segan, segan_log, tiny_segan_config, train_segan, zero_final_layer,
    SeganConfig, SeganLogRow, SEGAN_KIND,
};
