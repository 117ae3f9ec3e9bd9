//! Compiles and runs every Rust listing in the guide under `book/src` as a
//! doctest, one module per chapter so a failure names its chapter.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/data.md")]
pub mod data {}
#[doc = include_str!("../../../book/src/strata.md")]
pub mod strata {}
#[doc = include_str!("../../../book/src/estimators.md")]
pub mod estimators {}
#[doc = include_str!("../../../book/src/delta-method.md")]
pub mod delta_method {}
#[doc = include_str!("../../../book/src/dynamic-weighting.md")]
pub mod dynamic_weighting {}
#[doc = include_str!("../../../book/src/models.md")]
pub mod models {}
#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
#[doc = include_str!("../../../book/src/bootstrap.md")]
pub mod bootstrap {}
#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
