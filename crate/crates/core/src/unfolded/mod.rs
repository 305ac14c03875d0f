//! Deep-unfolded precoders: each layer mirrors one block-coordinate sweep
//! with learnable matrix-inverse surrogates.

mod forward;
mod io;
mod params;
mod spsa;
mod train;

pub use forward::*;
pub use io::*;
pub use params::*;
pub use spsa::*;
pub use train::*;
