pub mod error;
pub mod image;
pub mod metrics;
pub mod net;
pub mod numeric;
pub mod synth;
pub mod train;

pub use error::{Error, ErrorKind, Result};

#[cfg(doctest)]
mod guide {
    #[doc = include_str!("../../../book/src/introduction.md")]
    pub struct Introduction;
    #[doc = include_str!("../../../book/src/collages.md")]
    pub struct Collages;
    #[doc = include_str!("../../../book/src/toy-world.md")]
    pub struct ToyWorld;
    #[doc = include_str!("../../../book/src/detector.md")]
    pub struct Detector;
    #[doc = include_str!("../../../book/src/training.md")]
    pub struct Training;
    #[doc = include_str!("../../../book/src/scoring.md")]
    pub struct Scoring;
    #[doc = include_str!("../../../book/src/cli.md")]
    pub struct Cli;
}
