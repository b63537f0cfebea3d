//! The guide under `book/`, compiled so every snippet runs as a doc-test.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}

#[doc = include_str!("../../../book/src/panels.md")]
pub mod panels {}

#[doc = include_str!("../../../book/src/shrinkage.md")]
pub mod shrinkage {}

#[doc = include_str!("../../../book/src/ptis.md")]
pub mod ptis {}

#[doc = include_str!("../../../book/src/gate.md")]
pub mod gate {}

#[doc = include_str!("../../../book/src/decide.md")]
pub mod decide {}

#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}

#[doc = include_str!("../../../book/src/simulation.md")]
pub mod simulation {}

#[doc = include_str!("../../../book/src/verification.md")]
pub mod verification {}

#[doc = include_str!("../../../book/src/persona_profile.md")]
pub mod persona_profile {}

#[doc = include_str!("../../../book/src/cli.md")]
pub mod cli {}
