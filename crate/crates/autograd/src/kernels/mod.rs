//! Raw forward/backward kernels on contiguous NCHW slices.
//!
//! The tape in [`crate::graph`] owns shapes and bookkeeping; these functions
//! only move numbers.

pub(crate) mod conv;
pub(crate) mod norm;
pub(crate) mod pool;
