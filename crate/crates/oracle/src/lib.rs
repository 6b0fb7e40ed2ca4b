//! Brute-force oracles for the diff algebra and version graph.
//!
//! Each check is deterministic for a given seed and returns how many
//! instances it examined, or a description of the first mismatch.

pub mod algebra;
pub mod graphs;

pub type Outcome = Result<usize, String>;

#[macro_export]
macro_rules! ensure {
    ($cond:expr, $($msg:tt)*) => {
        if !$cond {
            return Err(format!($($msg)*));
        }
    };
}
