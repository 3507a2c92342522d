pub mod cascade;
pub mod cli;
pub mod cone;
pub mod ensemble;
pub mod error;
pub mod matrix;
pub mod rng;
pub mod spectral;
pub mod tail;

pub use error::{Error, Result};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/intro.md")]
    mod intro {}
    #[doc = include_str!("../../../book/src/ensembles.md")]
    mod ensembles {}
    #[doc = include_str!("../../../book/src/transfer-operator.md")]
    mod transfer_operator {}
    #[doc = include_str!("../../../book/src/cascades.md")]
    mod cascades {}
    #[doc = include_str!("../../../book/src/tails.md")]
    mod tails {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
