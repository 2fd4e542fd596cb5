pub mod apps;
pub mod color;
pub mod error;
pub mod eval;
pub mod imgf;
pub mod model;
pub mod raster;
pub mod synth;
pub mod train;

pub use error::{Error, Result};
pub use raster::{Raster, SrgbImage, XyzImage};
