//! Slice-level forward/backward kernels. The tape in [`crate::tape`] owns
//! bookkeeping; everything here is a pure function of its buffers.

pub mod conv;
pub mod norm;
pub mod pool;
pub mod upsample;
