pub mod autodiff;
pub mod config;
pub mod embeddings;
pub mod error;
pub mod experiment;
pub mod graph;
pub mod io;
pub mod model;
pub mod rng;
pub mod tensor;
pub mod training;
pub mod tricks;

pub use error::{Error, Result};
pub use tensor::Tensor;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    struct Introduction;
    #[doc = include_str!("../../../book/src/graphs.md")]
    struct Graphs;
    #[doc = include_str!("../../../book/src/autodiff.md")]
    struct Autodiff;
    #[doc = include_str!("../../../book/src/model.md")]
    struct Model;
    #[doc = include_str!("../../../book/src/training.md")]
    struct Training;
    #[doc = include_str!("../../../book/src/tricks.md")]
    struct Tricks;
    #[doc = include_str!("../../../book/src/embeddings.md")]
    struct Embeddings;
    #[doc = include_str!("../../../book/src/cli.md")]
    struct Cli;
}
