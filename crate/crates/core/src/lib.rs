pub mod charset;
pub mod compose;
pub mod config;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod glyph;
pub mod inpaint;
pub mod nn;
pub mod raster;
pub mod workers;

pub use charset::{char_index, CharSet, NUM_CHARS};
pub use error::{Error, Result};
pub use raster::{Image, Rect};
