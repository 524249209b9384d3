#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        assert!((a - b).abs() <= $tol, "{a} vs {b} (tol {})", $tol);
    }};
}

pub mod cli;
pub mod data;
pub mod error;
pub mod evaluation;
pub mod image;
pub mod losses;
pub mod metrics;
pub mod models;
pub mod nn;
pub mod pipeline;
pub mod resample;
pub mod seed;

pub use error::{Error, Result};
pub use image::{Grid, Image};

/// Number of ship classes.
pub const NUM_CLASSES: usize = 6;
