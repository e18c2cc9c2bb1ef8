pub mod config;
pub mod displacement;
pub mod error;
pub mod grid;
pub mod io;
pub mod mollifier;
pub mod phantom;
pub mod pipeline;
pub mod report;
pub mod shear;
pub mod stokes;
pub mod warp;

pub use error::{Error, Result};
pub use grid::{Grid2D, ScalarField2D, VectorField2D};
pub use mollifier::{mollify, Mollifier};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/fields.md")]
    mod fields {}
    #[doc = include_str!("../../../book/src/phantom.md")]
    mod phantom {}
    #[doc = include_str!("../../../book/src/stokes.md")]
    mod stokes {}
    #[doc = include_str!("../../../book/src/warp.md")]
    mod warp {}
    #[doc = include_str!("../../../book/src/displacement.md")]
    mod displacement {}
    #[doc = include_str!("../../../book/src/shear.md")]
    mod shear {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
