pub mod detect;
pub mod error;
pub mod flow;
pub mod gmrf;
pub mod metrics;
pub mod raster;
pub mod synth;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/overview.md")]
    mod overview {}
    #[doc = include_str!("../../../book/src/rasters.md")]
    mod rasters {}
    #[doc = include_str!("../../../book/src/gmrf.md")]
    mod gmrf {}
    #[doc = include_str!("../../../book/src/flow.md")]
    mod flow {}
    #[doc = include_str!("../../../book/src/bayes.md")]
    mod bayes {}
    #[doc = include_str!("../../../book/src/detection.md")]
    mod detection {}
    #[doc = include_str!("../../../book/src/simulation.md")]
    mod simulation {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
