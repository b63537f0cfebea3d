//! Decoding-time correction of a language model's binary-choice logit gap,
//! steered by a panel of persona-prompted views of the same model.
//!
//! The pipeline for one scenario:
//!
//! 1. [`panel`] symmetrises the base and persona gaps across answer orderings.
//! 2. [`shrinkage`] reduces the panel to a consensus and a disagreement estimate.
//! 3. [`ptis`] runs importance sampling over perturbations scored by a
//!    loss-averse utility; [`gate`] runs it twice and damps the correction by
//!    the disagreement between the two passes.
//! 4. [`decide`] maps the corrected gap to a sparing probability.
//!
//! [`controller::Controller`] wires these steps together. [`eval`] scores a
//! country's probabilities against human preferences, [`simulate`] generates
//! synthetic populations and baselines, and [`verify`] runs Monte Carlo checks
//! of the statistical guarantees.
//!
//! ```
//! use disca::{Attribute, Controller, ControllerConfig};
//!
//! let ctl = Controller::new(ControllerConfig::default());
//! let trace = ctl
//!     .correct_gaps("s1", Attribute::Species, 0.4, &[1.1, 0.9, 1.3, 0.7])
//!     .unwrap();
//! assert!(trace.correction.abs() <= trace.max_abs_perturbation);
//! assert!(trace.p_spare > 0.0 && trace.p_spare < 1.0);
//! ```

pub mod controller;
pub mod decide;
pub mod eval;
pub mod gate;
pub mod model;
pub mod panel;
pub mod persona_profile;
pub mod ptis;
pub mod rng;
pub mod shrinkage;
pub mod simulate;
pub mod stats;
pub mod verify;

pub use controller::Controller;
pub use model::{
    AmceVector, Attribute, ConfigError, ControllerConfig, CorrectionTrace, PanelGapRecord,
    PassSummary, PersonaGap, RecordError, TemperatureMode,
};
