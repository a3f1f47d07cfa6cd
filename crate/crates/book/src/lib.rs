//! Guide chapters compiled as doc-tests.

#[doc = include_str!("../../../book/src/overview.md")]
pub mod overview {}

#[doc = include_str!("../../../book/src/network.md")]
pub mod network {}

#[doc = include_str!("../../../book/src/powerflow.md")]
pub mod powerflow {}

#[doc = include_str!("../../../book/src/controller.md")]
pub mod controller {}

#[doc = include_str!("../../../book/src/certificates.md")]
pub mod certificates {}

#[doc = include_str!("../../../book/src/contingency.md")]
pub mod contingency {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}
