//! Synthetic control estimation for comparative case studies.
//!
//! A panel of units observed over time is loaded into a [`panel::PanelDataset`],
//! a [`panel::StudySpec`] names the treated unit, donor pool, windows and
//! predictors, and [`scm::fit_synthetic_control`] builds the weighted donor
//! combination. [`inference`] runs in-space placebos and [`robustness`] runs
//! leave-one-out, in-time placebo and restricted-pool checks.
//!
//! With the default `parallel` feature placebo and search loops fan out over a
//! rayon pool; results do not depend on the number of threads.

pub mod inference;
pub mod panel;
pub mod par;
pub mod qp;
pub mod robustness;
pub mod scm;
pub mod transforms;

pub use panel::{PanelDataset, StudySpec};
pub use scm::{fit_synthetic_control, FitOptions, ScmError, SyntheticControlFit};
