//! Differentially private empirical risk minimization by input
//! perturbation.
//!
//! Gaussian noise is added once to every training row, and the model is
//! then trained by ordinary projected gradient descent. The [`privacy`]
//! module calibrates the noise and audits it with a moments accountant.
//! [`mechanisms`] also implements output, objective and gradient
//! perturbation baselines. [`bench`] runs seeded privacy-utility sweeps.

// `!(x > 0.0)` guards are deliberate: they also reject NaN
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod bench;
pub mod data;
pub mod error;
pub mod losses;
pub mod mechanisms;
pub mod objective;
pub mod privacy;
pub mod seed;
pub mod trainer;

pub use bench::{emit, run_experiment, ExperimentSpec, OutputFormat, ResultRow, ResultTable};
pub use data::{load_csv, normalize, split, Dataset, LabelColumn, SplitSpec};
pub use error::{Error, Result};
pub use losses::{
    check_pl, loss_gradient, loss_value, project_to_ball, Convexity, LossSpec, ModelParams,
};
pub use mechanisms::{GradientVariant, MechanismKind};
pub use objective::{Erm, Objective};
pub use privacy::{
    calibrate_sigma, compose_and_convert, gaussian_renyi, per_step_moment_bound,
    verify_calibration, CalibrationInputs, MomentsLedger, NoiseScale, PrivacyParams, Regime,
};
pub use trainer::{evaluate, oracle_optimum, train_gd, Init, TrainConfig};
