//! Experiment sweeps over mechanisms, privacy budgets and seeds.
//!
//! An [`ExperimentSpec`] is usually read from a flat TOML key-value file,
//! documented in `docs/spec-format.md` at the repository root.
//! [`run_experiment`] evaluates every (mechanism, ε, repetition) cell plus
//! one non-private reference row, and [`emit`] writes the table as CSV or
//! JSON.

use std::collections::BTreeMap;
use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use serde::ser::{SerializeMap, SerializeSeq};
use serde::{Deserialize, Serialize, Serializer};

use crate::data::{self, Dataset, LabelColumn, SplitSpec};
use crate::error::{Error, Result};
use crate::losses::{project_to_ball, Convexity, LossSpec, ModelParams};
use crate::mechanisms::{self, MechanismKind, NoiseContext, NoiseLayout};
use crate::objective::{Erm, Objective};
use crate::privacy::{
    calibrate_sigma, verify_calibration, CalibrationInputs, PrivacyParams, Regime,
};
use crate::seed;
use crate::trainer::{self, evaluate, minimize, train_gd, Init, OracleSettings, TrainConfig};

pub const CSV_HEADER: &str =
    "mechanism,epsilon,seed,accuracy,opt_gap,opt_gap_perturbed,realized_epsilon,wall_ms";

/// Default privacy budgets, spanning 0.01 to 0.25.
pub const DEFAULT_EPSILON_GRID: [f64; 9] = [0.01, 0.02, 0.04, 0.06, 0.08, 0.1, 0.15, 0.2, 0.25];

/// Learning rates and step counts tried when `grid_search` is on.
pub const LEARNING_RATE_GRID: [f64; 4] = [0.01, 0.1, 0.5, 1.0];
pub const STEPS_GRID: [usize; 3] = [50, 200, 1000];

// seed streams under base_seed
const SPLIT_STREAM: u64 = 1;
const DATA_STREAM: u64 = 2;
const CELL_STREAM: u64 = 3;
const TUNING_STREAM: u64 = 4;
const INIT_STREAM: u64 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum DatasetSource {
    Csv {
        path: PathBuf,
        label_column: LabelColumn,
        positive_label: String,
    },
    Iris,
    BreastCancer,
    Blobs {
        n: usize,
        d: usize,
    },
    NoisyMargin {
        n: usize,
        d: usize,
        flip: f64,
    },
}

impl DatasetSource {
    /// Loads the raw (unnormalized) dataset. Synthetic sources draw from
    /// `seed`.
    pub fn load(&self, seed: u64) -> Result<Dataset> {
        match self {
            DatasetSource::Csv {
                path,
                label_column,
                positive_label,
            } => data::load_csv(path, label_column, positive_label),
            DatasetSource::Iris => Ok(Dataset::iris()),
            DatasetSource::BreastCancer => Ok(Dataset::breast_cancer()),
            DatasetSource::Blobs { n, d } => data::synthetic_blobs(*n, *d, seed),
            DatasetSource::NoisyMargin { n, d, flip } => {
                data::synthetic_noisy_margin(*n, *d, *flip, seed)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum ModelChoice {
    Lr,
    LrL2 {
        reg_lambda: f64,
    },
    Mlp {
        /// Defaults to the input dimension.
        hidden_width: Option<usize>,
        lipschitz: f64,
        smoothness: f64,
        pl_mu: Option<f64>,
    },
}

impl ModelChoice {
    pub fn loss_spec(&self, d: usize) -> Result<LossSpec> {
        match *self {
            ModelChoice::Lr => Ok(LossSpec::logistic()),
            ModelChoice::LrL2 { reg_lambda } => LossSpec::logistic_l2(reg_lambda),
            ModelChoice::Mlp {
                hidden_width,
                lipschitz,
                smoothness,
                pl_mu,
            } => LossSpec::mlp(
                hidden_width.unwrap_or(d),
                lipschitz,
                smoothness,
                pl_mu.map_or(Convexity::None, |mu| Convexity::Pl { mu }),
            ),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitChoice {
    Zeros,
    Gaussian,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    Csv,
    Json,
}

impl FromStr for OutputFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(OutputFormat::Csv),
            "json" => Ok(OutputFormat::Json),
            other => Err(Error::Spec(format!("unknown format `{other}`"))),
        }
    }
}

/// A fully validated sweep description.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentSpec {
    pub dataset: DatasetSource,
    pub test_fraction: f64,
    pub model: ModelChoice,
    pub mechanisms: Vec<MechanismKind>,
    pub epsilon_grid: Vec<f64>,
    /// Defaults to 1/n² for the training-set size n.
    pub delta: Option<f64>,
    pub repetitions: usize,
    pub base_seed: u64,
    pub steps: usize,
    pub learning_rate: f64,
    /// Defaults to 1/λ for `lr_l2` and 10 otherwise.
    pub radius: Option<f64>,
    pub init: InitChoice,
    pub grid_search: bool,
    /// Add one shared noise draw to every row instead of one per row. The
    /// accountant does not cover this layout, so no realized ε is reported.
    pub shared_input_noise: bool,
    pub c: f64,
    pub curvature_floor: f64,
    pub oracle_tolerance: f64,
    /// Iteration cap of the reference and objective-perturbation solvers.
    pub oracle_max_iter: usize,
    pub record_wall_time: bool,
    pub workers: usize,
    pub output: Option<PathBuf>,
    pub format: OutputFormat,
}

impl ExperimentSpec {
    /// A spec with the documented defaults for every optional key.
    pub fn new(dataset: DatasetSource, model: ModelChoice, mechanisms: Vec<MechanismKind>) -> Self {
        Self {
            dataset,
            test_fraction: 0.2,
            model,
            mechanisms,
            epsilon_grid: DEFAULT_EPSILON_GRID.to_vec(),
            delta: None,
            repetitions: 1,
            base_seed: 0,
            steps: 100,
            learning_rate: 0.5,
            radius: None,
            init: InitChoice::Zeros,
            grid_search: false,
            shared_input_noise: false,
            c: 1.0,
            curvature_floor: 1.0,
            oracle_tolerance: 1e-8,
            oracle_max_iter: 200_000,
            record_wall_time: true,
            workers: 1,
            output: None,
            format: OutputFormat::Csv,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Spec(m.to_string()));
        if self.epsilon_grid.is_empty() {
            return bad("epsilon_grid must not be empty");
        }
        if self
            .epsilon_grid
            .iter()
            .any(|&e| !(e > 0.0 && e.is_finite()))
        {
            return bad("epsilon_grid values must be positive");
        }
        if self.epsilon_grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("epsilon_grid must be strictly ascending");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        if self.mechanisms.is_empty() {
            return bad("mechanisms must not be empty");
        }
        if let Some(d) = self.delta {
            if !(d > 0.0 && d < 1.0) {
                return bad("delta must lie in (0, 1)");
            }
        }
        if self.workers == 0 {
            return bad("workers must be at least 1");
        }
        if !(self.c > 0.0 && self.curvature_floor > 0.0 && self.oracle_tolerance > 0.0) {
            return bad("c, curvature_floor and oracle_tolerance must be positive");
        }
        Ok(())
    }

    /// Parses the flat key-value spec format.
    pub fn from_toml_str(text: &str) -> Result<Self> {
        let raw: SpecFile = toml::from_str(text).map_err(|e| Error::Spec(e.to_string()))?;
        raw.into_spec()
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut spec = Self::from_toml_str(&text)?;
        // relative CSV paths are resolved against the spec file
        if let DatasetSource::Csv { path: csv, .. } = &mut spec.dataset {
            if csv.is_relative() {
                if let Some(dir) = path.parent() {
                    *csv = dir.join(&*csv);
                }
            }
        }
        Ok(spec)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecFile {
    dataset: String,
    label_column: Option<toml::Value>,
    positive_label: Option<String>,
    synthetic_n: Option<usize>,
    synthetic_d: Option<usize>,
    synthetic_flip: Option<f64>,
    test_fraction: Option<f64>,
    model: String,
    reg_lambda: Option<f64>,
    hidden_width: Option<usize>,
    mlp_lipschitz: Option<f64>,
    mlp_smoothness: Option<f64>,
    mlp_pl_mu: Option<f64>,
    mechanisms: Vec<String>,
    epsilon_grid: Option<Vec<f64>>,
    delta: Option<f64>,
    repetitions: Option<usize>,
    base_seed: Option<u64>,
    steps: Option<usize>,
    learning_rate: Option<f64>,
    radius: Option<f64>,
    init: Option<InitChoice>,
    grid_search: Option<bool>,
    shared_input_noise: Option<bool>,
    c: Option<f64>,
    curvature_floor: Option<f64>,
    oracle_tolerance: Option<f64>,
    oracle_max_iter: Option<usize>,
    record_wall_time: Option<bool>,
    workers: Option<usize>,
    output: Option<PathBuf>,
    format: Option<String>,
}

impl SpecFile {
    fn into_spec(self) -> Result<ExperimentSpec> {
        let dataset = match self.dataset.as_str() {
            "iris" => DatasetSource::Iris,
            "breast_cancer" => DatasetSource::BreastCancer,
            "blobs" => DatasetSource::Blobs {
                n: self.synthetic_n.unwrap_or(500),
                d: self.synthetic_d.unwrap_or(10),
            },
            "noisy_margin" => DatasetSource::NoisyMargin {
                n: self.synthetic_n.unwrap_or(500),
                d: self.synthetic_d.unwrap_or(10),
                flip: self.synthetic_flip.unwrap_or(0.1),
            },
            path => {
                let label_column = match self.label_column {
                    Some(toml::Value::Integer(i)) if i >= 0 => LabelColumn::Index(i as usize),
                    Some(toml::Value::String(s)) => LabelColumn::Name(s),
                    Some(other) => {
                        return Err(Error::Spec(format!(
                            "label_column must be a name or index, got {other}"
                        )))
                    }
                    None => return Err(Error::Spec("CSV datasets need label_column".into())),
                };
                let positive_label = self
                    .positive_label
                    .ok_or_else(|| Error::Spec("CSV datasets need positive_label".into()))?;
                DatasetSource::Csv {
                    path: PathBuf::from(path),
                    label_column,
                    positive_label,
                }
            }
        };
        let model = match self.model.as_str() {
            "lr" => ModelChoice::Lr,
            "lr_l2" => ModelChoice::LrL2 {
                reg_lambda: self
                    .reg_lambda
                    .ok_or_else(|| Error::Spec("lr_l2 needs reg_lambda".into()))?,
            },
            "mlp" => ModelChoice::Mlp {
                hidden_width: self.hidden_width,
                lipschitz: self.mlp_lipschitz.unwrap_or(1.0),
                smoothness: self.mlp_smoothness.unwrap_or(1.0),
                pl_mu: self.mlp_pl_mu,
            },
            other => return Err(Error::Spec(format!("unknown model `{other}`"))),
        };
        let mechanisms = self
            .mechanisms
            .iter()
            .map(|m| m.parse())
            .collect::<Result<Vec<MechanismKind>>>()?;
        let mut spec = ExperimentSpec::new(dataset, model, mechanisms);
        macro_rules! set {
            ($($field:ident),*) => {$( if let Some(v) = self.$field { spec.$field = v; } )*};
        }
        set!(
            test_fraction,
            epsilon_grid,
            repetitions,
            base_seed,
            steps,
            learning_rate,
            init,
            grid_search,
            shared_input_noise,
            c,
            curvature_floor,
            oracle_tolerance,
            oracle_max_iter,
            record_wall_time,
            workers
        );
        spec.delta = self.delta;
        spec.radius = self.radius;
        spec.output = self.output;
        if let Some(f) = self.format {
            spec.format = f.parse()?;
        }
        spec.validate()?;
        Ok(spec)
    }
}

/// One evaluated (mechanism, ε, seed) cell.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultRow {
    pub mechanism: MechanismKind,
    /// Absent for the non-private reference row.
    pub epsilon: Option<f64>,
    pub seed: u64,
    pub accuracy: f64,
    pub opt_gap: f64,
    /// L̂(θ) − L* on the perturbed training data for input perturbation;
    /// equal to `opt_gap` for the other mechanisms.
    pub opt_gap_perturbed: f64,
    pub realized_epsilon: Option<f64>,
    pub wall_ms: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl ResultRow {
    fn failed(mechanism: MechanismKind, epsilon: Option<f64>, seed: u64, err: &Error) -> Self {
        Self {
            mechanism,
            epsilon,
            seed,
            accuracy: f64::NAN,
            opt_gap: f64::NAN,
            opt_gap_perturbed: f64::NAN,
            realized_epsilon: None,
            wall_ms: 0.0,
            error: Some(err.to_string()),
        }
    }
}

/// Mean and sample standard deviation over the successful rows of one
/// (mechanism, ε) group.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mechanism: MechanismKind,
    pub epsilon: Option<f64>,
    pub count: usize,
    pub accuracy_mean: f64,
    pub accuracy_std: f64,
    pub opt_gap_mean: f64,
    pub opt_gap_std: f64,
    pub opt_gap_perturbed_mean: f64,
    pub opt_gap_perturbed_std: f64,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len();
    if n == 0 {
        return (f64::NAN, f64::NAN);
    }
    let mean = values.iter().sum::<f64>() / n as f64;
    if n == 1 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean) * (v - mean)).sum();
    (mean, (ss / (n - 1) as f64).sqrt())
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResultTable {
    pub rows: Vec<ResultRow>,
}

impl ResultTable {
    pub fn any_errors(&self) -> bool {
        self.rows.iter().any(|r| r.error.is_some())
    }

    /// Groups in first-appearance order.
    pub fn aggregates(&self) -> Vec<Aggregate> {
        let mut keys: Vec<(MechanismKind, Option<u64>)> = Vec::new();
        let mut groups: BTreeMap<usize, Vec<&ResultRow>> = BTreeMap::new();
        for row in &self.rows {
            let key = (row.mechanism, row.epsilon.map(f64::to_bits));
            let idx = keys.iter().position(|k| *k == key).unwrap_or_else(|| {
                keys.push(key);
                keys.len() - 1
            });
            groups.entry(idx).or_default().push(row);
        }
        groups
            .into_iter()
            .map(|(idx, rows)| {
                let ok: Vec<&ResultRow> = rows.into_iter().filter(|r| r.error.is_none()).collect();
                let pick = |f: fn(&ResultRow) -> f64| {
                    mean_std(&ok.iter().map(|r| f(r)).collect::<Vec<_>>())
                };
                let (accuracy_mean, accuracy_std) = pick(|r| r.accuracy);
                let (opt_gap_mean, opt_gap_std) = pick(|r| r.opt_gap);
                let (opt_gap_perturbed_mean, opt_gap_perturbed_std) = pick(|r| r.opt_gap_perturbed);
                let (mechanism, eps_bits) = keys[idx];
                Aggregate {
                    mechanism,
                    epsilon: eps_bits.map(f64::from_bits),
                    count: ok.len(),
                    accuracy_mean,
                    accuracy_std,
                    opt_gap_mean,
                    opt_gap_std,
                    opt_gap_perturbed_mean,
                    opt_gap_perturbed_std,
                }
            })
            .collect()
    }

    pub fn aggregate(&self, mechanism: MechanismKind, epsilon: Option<f64>) -> Option<Aggregate> {
        self.aggregates()
            .into_iter()
            .find(|a| a.mechanism == mechanism && a.epsilon == epsilon)
    }
}

/// Hyperparameters actually used after optional tuning.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tuning {
    pub steps: usize,
    pub learning_rate: f64,
}

/// Everything shared by the cells of one sweep: the split, the loss, the
/// non-private reference solution and the chosen hyperparameters.
#[derive(Debug, Clone)]
pub struct PreparedExperiment {
    pub spec: ExperimentSpec,
    pub train: Dataset,
    pub test: Dataset,
    pub loss: LossSpec,
    pub delta: f64,
    pub radius: f64,
    pub tuning: Tuning,
    /// Non-private reference minimizer, projected onto the radius.
    pub theta_star: ModelParams,
    pub l_star: f64,
    oracle: OracleSettings,
}

/// What a mechanism produced for one seed.
#[derive(Debug, Clone, PartialEq)]
pub struct MechanismOutcome {
    pub params: ModelParams,
    /// Training objective the mechanism actually optimized, evaluated at
    /// `params`, for input perturbation.
    pub perturbed_value: Option<f64>,
    pub realized_epsilon: Option<f64>,
}

impl PreparedExperiment {
    pub fn new(spec: ExperimentSpec) -> Result<Self> {
        spec.validate()?;
        let raw = spec
            .dataset
            .load(seed::derive(spec.base_seed, DATA_STREAM))?;
        let full = data::normalize(&raw);
        let (train, test) = data::split(
            &full,
            &SplitSpec {
                test_fraction: spec.test_fraction,
                seed: seed::derive(spec.base_seed, SPLIT_STREAM),
            },
        )?;
        let loss = spec.model.loss_spec(train.dim())?;
        let n = train.len() as f64;
        let delta = spec.delta.unwrap_or(1.0 / (n * n));
        let radius = spec.radius.unwrap_or(match spec.model {
            ModelChoice::LrL2 { reg_lambda } => 1.0 / reg_lambda,
            _ => 10.0,
        });
        let oracle = OracleSettings {
            tolerance: spec.oracle_tolerance,
            max_iter: spec.oracle_max_iter,
            record_curve: false,
        };
        let tuning = if spec.grid_search {
            tune(&spec, &train, &loss, radius)?
        } else {
            Tuning {
                steps: spec.steps,
                learning_rate: spec.learning_rate,
            }
        };
        let mut prepared = Self {
            spec,
            train,
            test,
            loss,
            delta,
            radius,
            tuning,
            theta_star: ModelParams::zeros(1, 1.0)?,
            l_star: f64::NAN,
            oracle,
        };
        let (theta_star, l_star) = prepared.reference()?;
        prepared.theta_star = theta_star;
        prepared.l_star = l_star;
        Ok(prepared)
    }

    fn reference(&self) -> Result<(ModelParams, f64)> {
        if self.loss.reg_lambda() > 0.0 {
            let sol = minimize(&Erm::new(&self.train, self.loss)?, &self.oracle)?;
            Ok((
                project_to_ball(sol.params.into_theta(), self.radius)?,
                sol.value,
            ))
        } else {
            // without strong convexity there may be no finite minimizer
            // (separable data) or no certificate (MLP): use the lowest loss
            // seen on a long projected run inside the radius
            let config = TrainConfig {
                steps: (10 * self.tuning.steps).max(2000),
                ..self.train_config(self.spec.base_seed)
            };
            let out = train_gd(
                &mechanisms::training_objective(&self.train, &self.loss)?,
                &config,
            )?;
            let best = out.loss_curve.iter().copied().fold(f64::INFINITY, f64::min);
            Ok((out.params, best))
        }
    }

    pub fn train_config(&self, run_seed: u64) -> TrainConfig {
        TrainConfig {
            steps: self.tuning.steps,
            learning_rate: self.tuning.learning_rate,
            seed: seed::derive(run_seed, INIT_STREAM),
            init: match self.spec.init {
                InitChoice::Zeros => Init::Zeros,
                InitChoice::Gaussian => Init::gaussian_for_dim(self.train.dim()),
            },
            radius: self.radius,
        }
    }

    /// Calibration regime implied by the loss. Losses without a declared
    /// curvature constant fall back to the PL form.
    pub fn regime(&self) -> Regime {
        match self.loss.convexity() {
            Convexity::StronglyConvex { modulus } => Regime::StronglyConvex { modulus },
            Convexity::Pl { .. } | Convexity::None => Regime::Pl,
        }
    }

    pub fn noise_context(&self, epsilon: f64) -> Result<NoiseContext> {
        Ok(NoiseContext {
            params: PrivacyParams::new(epsilon, self.delta)?,
            steps: self.tuning.steps as u64,
            n: self.train.len(),
            lipschitz: self.loss.lipschitz(),
            smoothness: self.loss.total_smoothness(),
            regime: self.regime(),
            c: self.spec.c,
        })
    }

    /// Plain non-private projected GD with the sweep's hyperparameters.
    pub fn non_private_gd(&self, run_seed: u64) -> Result<ModelParams> {
        let objective = mechanisms::training_objective(&self.train, &self.loss)?;
        Ok(train_gd(&objective, &self.train_config(run_seed))?.params)
    }

    /// Runs one mechanism with an explicit noise variance.
    pub fn run_mechanism(
        &self,
        kind: MechanismKind,
        ctx: &NoiseContext,
        variance: f64,
        run_seed: u64,
    ) -> Result<MechanismOutcome> {
        let config = self.train_config(run_seed);
        let plain = |params| MechanismOutcome {
            params,
            perturbed_value: None,
            realized_epsilon: None,
        };
        match kind {
            MechanismKind::None => Ok(plain(self.theta_star.clone())),
            MechanismKind::Input => {
                let mut scale = calibrate_sigma(
                    ctx.params,
                    ctx.steps,
                    ctx.n,
                    ctx.lipschitz,
                    ctx.regime,
                    ctx.c,
                )?;
                scale.sigma_sq = variance;
                let layout = if self.spec.shared_input_noise {
                    NoiseLayout::Shared
                } else {
                    NoiseLayout::PerInstance
                };
                let run = mechanisms::input_perturbation_with(
                    &self.train,
                    &self.loss,
                    &scale,
                    &config,
                    run_seed,
                    layout,
                )?;
                let perturbed_value =
                    Erm::new(&run.perturbed, self.loss)?.value(run.output.params.theta().view())?;
                let realized = if variance > 0.0 && layout == NoiseLayout::PerInstance {
                    let inputs = CalibrationInputs {
                        curvature_floor: self.spec.curvature_floor,
                    };
                    Some(verify_calibration(&ctx.params, &scale, &inputs)?.realized_epsilon)
                } else {
                    None
                };
                Ok(MechanismOutcome {
                    params: run.output.params,
                    perturbed_value: Some(perturbed_value),
                    realized_epsilon: realized,
                })
            }
            MechanismKind::Output => Ok(plain(mechanisms::output_perturbation(
                &self.theta_star,
                variance,
                run_seed,
            )?)),
            MechanismKind::Objective => Ok(plain(mechanisms::objective_perturbation(
                &self.train,
                &self.loss,
                variance,
                &self.oracle,
                self.radius,
                run_seed,
            )?)),
            MechanismKind::Gradient(_) => Ok(plain(
                mechanisms::gradient_perturbation(
                    &self.train,
                    &self.loss,
                    variance,
                    &config,
                    run_seed,
                )?
                .params,
            )),
        }
    }

    fn evaluate_outcome(
        &self,
        kind: MechanismKind,
        epsilon: Option<f64>,
        run_seed: u64,
        outcome: MechanismOutcome,
        started: Option<Instant>,
    ) -> Result<ResultRow> {
        let ev = evaluate(
            &outcome.params,
            &self.test,
            &self.train,
            &self.loss,
            self.l_star,
        )?;
        let wall_ms = started.map_or(0.0, |t| t.elapsed().as_secs_f64() * 1e3);
        Ok(ResultRow {
            mechanism: kind,
            epsilon,
            seed: run_seed,
            accuracy: ev.accuracy,
            opt_gap: ev.optimality_gap,
            opt_gap_perturbed: outcome
                .perturbed_value
                .map_or(ev.optimality_gap, |v| v - self.l_star),
            realized_epsilon: outcome.realized_epsilon,
            wall_ms,
            error: None,
        })
    }

    // the clock is only read when timings are wanted, so untimed sweeps
    // also run where no clock exists (wasm32-unknown-unknown)
    fn clock(&self) -> Option<Instant> {
        self.spec.record_wall_time.then(Instant::now)
    }

    pub fn reference_row(&self) -> ResultRow {
        let started = self.clock();
        let seed = self.spec.base_seed;
        self.evaluate_outcome(
            MechanismKind::None,
            None,
            seed,
            MechanismOutcome {
                params: self.theta_star.clone(),
                perturbed_value: None,
                realized_epsilon: None,
            },
            started,
        )
        .unwrap_or_else(|e| ResultRow::failed(MechanismKind::None, None, seed, &e))
    }

    /// Seed of a cell, keyed by the mechanism's identity, the ε index and
    /// the repetition, never by scheduling order.
    pub fn cell_seed(&self, kind: MechanismKind, eps_index: usize, repetition: usize) -> u64 {
        let code = MechanismKind::ALL
            .iter()
            .position(|k| *k == kind)
            .expect("ALL lists every mechanism") as u64;
        seed::derive_path(
            self.spec.base_seed,
            &[CELL_STREAM, code, eps_index as u64, repetition as u64],
        )
    }

    pub fn run_cell(&self, kind: MechanismKind, eps_index: usize, repetition: usize) -> ResultRow {
        let epsilon = self.spec.epsilon_grid[eps_index];
        let run_seed = self.cell_seed(kind, eps_index, repetition);
        let started = self.clock();
        let result = self.noise_context(epsilon).and_then(|ctx| {
            let variance = mechanisms::mechanism_variance(kind, &ctx)?;
            let outcome = self.run_mechanism(kind, &ctx, variance, run_seed)?;
            self.evaluate_outcome(kind, Some(epsilon), run_seed, outcome, started)
        });
        result.unwrap_or_else(|e| ResultRow::failed(kind, Some(epsilon), run_seed, &e))
    }

    pub fn cells(&self) -> Vec<(MechanismKind, usize, usize)> {
        let mut cells = Vec::new();
        for &kind in self
            .spec
            .mechanisms
            .iter()
            .filter(|k| **k != MechanismKind::None)
        {
            for e in 0..self.spec.epsilon_grid.len() {
                for r in 0..self.spec.repetitions {
                    cells.push((kind, e, r));
                }
            }
        }
        cells
    }

    /// Evaluates all cells with up to `spec.workers` threads. Rows come
    /// back in cell order regardless of scheduling.
    pub fn run(&self) -> Result<ResultTable> {
        let cells = self.cells();
        let mut rows = vec![self.reference_row()];
        rows.extend(self.run_cells(&cells)?);
        Ok(ResultTable { rows })
    }

    #[cfg(feature = "parallel")]
    fn run_cells(&self, cells: &[(MechanismKind, usize, usize)]) -> Result<Vec<ResultRow>> {
        use rayon::prelude::*;
        if self.spec.workers <= 1 {
            return Ok(cells
                .iter()
                .map(|&(k, e, r)| self.run_cell(k, e, r))
                .collect());
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.spec.workers)
            .build()
            .map_err(|e| Error::Spec(format!("cannot start worker pool: {e}")))?;
        Ok(pool.install(|| {
            cells
                .par_iter()
                .map(|&(k, e, r)| self.run_cell(k, e, r))
                .collect()
        }))
    }

    #[cfg(not(feature = "parallel"))]
    fn run_cells(&self, cells: &[(MechanismKind, usize, usize)]) -> Result<Vec<ResultRow>> {
        Ok(cells
            .iter()
            .map(|&(k, e, r)| self.run_cell(k, e, r))
            .collect())
    }
}

/// Picks (α, T) from the documented grid by validation accuracy of
/// non-private GD on a held-out fifth of the training set, breaking ties
/// by validation loss.
fn tune(spec: &ExperimentSpec, train: &Dataset, loss: &LossSpec, radius: f64) -> Result<Tuning> {
    let (fit, valid) = data::split(
        train,
        &SplitSpec {
            test_fraction: 0.2,
            seed: seed::derive(spec.base_seed, TUNING_STREAM),
        },
    )?;
    let objective = mechanisms::training_objective(&fit, loss)?;
    let valid_objective = Erm::new(&valid, *loss)?;
    let mut best: Option<(f64, f64, Tuning)> = None;
    for &steps in &STEPS_GRID {
        for &learning_rate in &LEARNING_RATE_GRID {
            let config = TrainConfig {
                steps,
                learning_rate,
                seed: seed::derive(spec.base_seed, INIT_STREAM),
                init: match spec.init {
                    InitChoice::Zeros => Init::Zeros,
                    InitChoice::Gaussian => Init::gaussian_for_dim(train.dim()),
                },
                radius,
            };
            let Ok(out) = train_gd(&objective, &config) else {
                continue;
            };
            let theta = out.params.theta().view();
            let acc = trainer::accuracy(theta, &valid, loss)?;
            let vloss = valid_objective.value(theta)?;
            let better = match best {
                None => true,
                Some((a, l, _)) => acc > a || (acc == a && vloss < l),
            };
            if better {
                best = Some((
                    acc,
                    vloss,
                    Tuning {
                        steps,
                        learning_rate,
                    },
                ));
            }
        }
    }
    best.map(|(_, _, t)| t)
        .ok_or_else(|| Error::Spec("no grid point trained successfully".into()))
}

/// Prepares and runs a whole sweep.
pub fn run_experiment(spec: &ExperimentSpec) -> Result<ResultTable> {
    PreparedExperiment::new(spec.clone())?.run()
}

/// Formats a float with 17 significant digits.
pub fn format_float(v: f64) -> String {
    if v.is_nan() {
        "NaN".into()
    } else if v.is_infinite() {
        if v > 0.0 { "inf" } else { "-inf" }.into()
    } else {
        format!("{v:.16e}")
    }
}

fn parse_float(field: &str, s: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| Error::Spec(format!("bad {field} value `{s}` in results")))
}

fn parse_opt_float(field: &str, s: &str) -> Result<Option<f64>> {
    if s.is_empty() {
        Ok(None)
    } else {
        parse_float(field, s).map(Some)
    }
}

fn opt_float(v: Option<f64>) -> String {
    v.map(format_float).unwrap_or_default()
}

pub fn write_csv<W: Write>(table: &ResultTable, out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CSV_HEADER.split(','))?;
    for r in &table.rows {
        w.write_record([
            r.mechanism.name().to_string(),
            opt_float(r.epsilon),
            r.seed.to_string(),
            format_float(r.accuracy),
            format_float(r.opt_gap),
            format_float(r.opt_gap_perturbed),
            opt_float(r.realized_epsilon),
            format_float(r.wall_ms),
        ])?;
    }
    w.flush().map_err(|e| Error::Csv(e.into()))?;
    Ok(())
}

pub fn read_csv<R: Read>(input: R) -> Result<ResultTable> {
    let mut rdr = csv::Reader::from_reader(input);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.join(",") != CSV_HEADER {
        return Err(Error::Spec(format!(
            "unexpected header `{}`",
            header.join(",")
        )));
    }
    let mut rows = Vec::new();
    for record in rdr.records() {
        let rec = record?;
        rows.push(ResultRow {
            mechanism: rec[0].parse()?,
            epsilon: parse_opt_float("epsilon", &rec[1])?,
            seed: rec[2]
                .parse()
                .map_err(|_| Error::Spec(format!("bad seed `{}`", &rec[2])))?,
            accuracy: parse_float("accuracy", &rec[3])?,
            opt_gap: parse_float("opt_gap", &rec[4])?,
            opt_gap_perturbed: parse_float("opt_gap_perturbed", &rec[5])?,
            realized_epsilon: parse_opt_float("realized_epsilon", &rec[6])?,
            wall_ms: parse_float("wall_ms", &rec[7])?,
            error: None,
        });
    }
    Ok(ResultTable { rows })
}

/// serde_json formatter printing every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> std::io::Result<()> {
        writer.write_all(format_float(value).as_bytes())
    }
}

struct JsonTable<'a>(&'a ResultTable);

struct JsonAggregates<'a>(&'a [Aggregate]);

impl Serialize for JsonAggregates<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let mut by_mech: Vec<(MechanismKind, Vec<&Aggregate>)> = Vec::new();
        for a in self.0 {
            match by_mech.iter_mut().find(|(m, _)| *m == a.mechanism) {
                Some((_, v)) => v.push(a),
                None => by_mech.push((a.mechanism, vec![a])),
            }
        }
        let mut map = s.serialize_map(Some(by_mech.len()))?;
        for (m, list) in by_mech {
            map.serialize_entry(m.name(), &list)?;
        }
        map.end()
    }
}

impl Serialize for JsonTable<'_> {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        struct Rows<'a>(&'a [ResultRow]);
        impl Serialize for Rows<'_> {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                let mut seq = s.serialize_seq(Some(self.0.len()))?;
                for r in self.0 {
                    seq.serialize_element(r)?;
                }
                seq.end()
            }
        }
        let aggregates = self.0.aggregates();
        let mut map = s.serialize_map(Some(2))?;
        map.serialize_entry("rows", &Rows(&self.0.rows))?;
        map.serialize_entry("aggregates", &JsonAggregates(&aggregates))?;
        map.end()
    }
}

pub fn write_json<W: Write>(table: &ResultTable, out: W) -> Result<()> {
    let mut ser = serde_json::Serializer::with_formatter(out, FullPrecision);
    JsonTable(table).serialize(&mut ser)?;
    Ok(())
}

#[derive(Deserialize)]
struct JsonTableOwned {
    rows: Vec<ResultRow>,
}

/// Reads the rows back from emitted JSON. JSON has no NaN, so metrics of
/// failed rows come back as NaN from `null`.
pub fn read_json<R: Read>(input: R) -> Result<ResultTable> {
    let mut value: serde_json::Value = serde_json::from_reader(input)?;
    if let Some(rows) = value.get_mut("rows").and_then(|r| r.as_array_mut()) {
        for row in rows {
            for key in ["accuracy", "opt_gap", "opt_gap_perturbed", "wall_ms"] {
                if row.get(key).is_some_and(|v| v.is_null()) {
                    row[key] = serde_json::Value::String("NaN".into());
                }
            }
        }
    }
    let parsed: JsonTableOwned = serde_json::from_value(value)?;
    Ok(ResultTable { rows: parsed.rows })
}

/// Writes `table` to `path` in the given format.
pub fn emit(table: &ResultTable, format: OutputFormat, path: impl AsRef<Path>) -> Result<()> {
    if table.rows.is_empty() {
        return Err(Error::Spec("refusing to emit an empty table".into()));
    }
    let path = path.as_ref();
    let file = std::fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut out = std::io::BufWriter::new(file);
    match format {
        OutputFormat::Csv => write_csv(table, &mut out)?,
        OutputFormat::Json => write_json(table, &mut out)?,
    }
    out.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

impl fmt::Display for ResultTable {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<12} {:>8} {:>6} {:>10} {:>12}",
            "mechanism", "epsilon", "n", "accuracy", "opt_gap"
        )?;
        for a in self.aggregates() {
            writeln!(
                f,
                "{:<12} {:>8} {:>6} {:>10.4} {:>12.4e}",
                a.mechanism.name(),
                a.epsilon.map_or("-".to_string(), |e| format!("{e}")),
                a.count,
                a.accuracy_mean,
                a.opt_gap_mean
            )?;
        }
        Ok(())
    }
}
