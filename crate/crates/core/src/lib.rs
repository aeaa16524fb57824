//! Periodic solutions of weakly forced oscillators by scaling the
//! bifurcation equation near a limit cycle.
//!
//! The guide in `book/` walks through the pipeline; its code listings are
//! compiled as doc-tests through the `book` module below.

pub mod config;
pub mod cycle;
pub mod error;
pub mod linalg;
pub mod newton;
pub mod malkin;
pub mod ode;
pub mod pipeline;
pub mod poincare;
pub mod quadrature;
pub mod scaling;
pub mod validator;
pub mod vectorfield;

pub use error::{Error, Result};

// mdbook cannot run Rust listings against a library, so each chapter is
// attached to an empty module and rustdoc tests it instead.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/scaling.md")]
    mod scaling {}
    #[doc = include_str!("../../../book/src/cycles.md")]
    mod cycles {}
    #[doc = include_str!("../../../book/src/forced.md")]
    mod forced {}
    #[doc = include_str!("../../../book/src/custom.md")]
    mod custom {}
    #[doc = include_str!("../../../book/src/configuration.md")]
    mod configuration {}
    #[doc = include_str!("../../../book/src/accuracy.md")]
    mod accuracy {}
}
