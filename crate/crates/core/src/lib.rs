//! Secret key generation from reciprocal wideband channel estimates.
//!
//! Two endpoints of a link measure the same channel, turn their estimates
//! into bit streams, reconcile the differences over a public channel and
//! compress the result into a shared 256-bit key.

pub mod par;

pub mod alignment;
pub mod channel_sim;
pub mod keyderive;
pub mod pipeline;
pub mod presets;
pub mod quality;
pub mod reconcile;
pub mod session;
pub mod trace_model;

pub use par::run_single_threaded;
