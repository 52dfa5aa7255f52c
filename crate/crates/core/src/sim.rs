//! Monte Carlo trials: trajectory and noise synthesis plus per-step MSE.
//!
//! Random numbers come from ChaCha8 seeded with `seed_from_u64(seed)`. Trial
//! `t` reads stream `2t` for the trajectory and stream `2t + 1` for its initial
//! estimates, so any trial can be regenerated alone and in any order.
//! Gaussians are `rand_distr::StandardNormal` samples (ziggurat) mapped through
//! a symmetric square root of the covariance.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::{design_mu_distributed, design_mu_unified, ConsensusDesign, DistributedMu, MuTable};
use crate::filter::{design_gain, CentralState, FilterBank, GainDesign};
use crate::graph::DiGraph;
use crate::linalg::symmetrize;
use crate::model::{PlantModel, SensorSuite};
use crate::{Error, Matrix, Result, Vector};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MuPolicy {
    Distributed(DistributedMu),
    /// One gain `0.99 / rho(L (x) I + B)` for every channel.
    Unified,
    Explicit(MuTable),
}

impl Default for MuPolicy {
    fn default() -> Self {
        Self::Distributed(DistributedMu::default())
    }
}

/// How the initial estimates are drawn in each trial.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub enum InitialDraw {
    /// One draw shared by every sensor and the centralized filter.
    #[default]
    Shared,
    /// Independent draws per sensor; the centralized filter gets its own.
    Independent,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub plant: PlantModel,
    pub suite: SensorSuite,
    pub graph: DiGraph,
    pub mu_policy: MuPolicy,
    pub fusion_steps: usize,
    pub horizon: usize,
    pub trials: usize,
    pub seed: u64,
    pub x0: Vector,
    pub p0: Matrix,
    pub initial: InitialDraw,
    pub anchor_own: bool,
}

/// Default number of trials.
pub const DEFAULT_TRIALS: usize = 1000;

impl ScenarioConfig {
    /// Five-sensor target-tracking scenario with `T = 0.25`.
    pub fn tracking() -> Self {
        Self {
            plant: PlantModel::constant_velocity(0.25).expect("static model"),
            suite: SensorSuite::tracking_suite(),
            graph: DiGraph::tracking_network(),
            mu_policy: MuPolicy::default(),
            fusion_steps: 10,
            horizon: 200,
            trials: DEFAULT_TRIALS,
            seed: 2024,
            x0: Vector::from_element(4, 1.0),
            p0: Matrix::identity(4, 4) * 10.0,
            initial: InitialDraw::Shared,
            anchor_own: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.plant.state_dim();
        if self.trials == 0 || self.horizon == 0 {
            return Err(Error::InvalidModel("trials and horizon must be at least 1".into()));
        }
        if self.suite.state_dim() != n || self.x0.len() != n || self.p0.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "plant has {n} states; sensors expect {}, x0 has {}, P0 is {:?}",
                self.suite.state_dim(),
                self.x0.len(),
                self.p0.shape()
            )));
        }
        if self.graph.node_count() != self.suite.len() {
            return Err(Error::Dimension(format!(
                "graph has {} nodes for {} sensors",
                self.graph.node_count(),
                self.suite.len()
            )));
        }
        if self.x0.iter().chain(self.p0.iter()).any(|v| !v.is_finite()) {
            return Err(Error::InvalidModel("x0 and P0 must be finite".into()));
        }
        if (&self.p0 - self.p0.transpose()).abs().max() > 1e-12 * (1.0 + self.p0.abs().max()) {
            return Err(Error::InvalidModel("P0 must be symmetric".into()));
        }
        if crate::linalg::min_sym_eigenvalue(&self.p0)? < -1e-12 * (1.0 + self.p0.abs().max()) {
            return Err(Error::InvalidModel("P0 must be positive semidefinite".into()));
        }
        Ok(())
    }

    pub fn mu_table(&self) -> Result<MuTable> {
        if !self.graph.is_strongly_connected() {
            return Err(Error::NotStronglyConnected);
        }
        match &self.mu_policy {
            MuPolicy::Distributed(rule) => design_mu_distributed(&self.graph, *rule),
            MuPolicy::Unified => {
                let mu = design_mu_unified(&self.graph, &self.suite.dims())?;
                MuTable::uniform(self.graph.node_count(), mu)
            }
            MuPolicy::Explicit(table) => Ok(table.clone()),
        }
    }

    pub fn consensus_design(&self) -> Result<ConsensusDesign> {
        let design = ConsensusDesign::build(&self.graph, &self.suite.dims(), self.mu_table()?)?;
        Ok(design.with_own_anchor(self.anchor_own))
    }

    pub fn gains(&self) -> Result<GainDesign> {
        let (c, r) = self.suite.augment();
        design_gain(&self.plant, &c, &r)
    }
}

/// `S` with `S S' = cov` for symmetric PSD `cov` (negative eigenvalues from
/// round-off are clipped).
pub fn covariance_factor(cov: &Matrix) -> Matrix {
    let eig = symmetrize(cov).symmetric_eigen();
    let roots = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    &eig.eigenvectors * Matrix::from_diagonal(&roots)
}

fn gaussian(rng: &mut ChaCha8Rng, factor: &Matrix) -> Vector {
    let xi = Vector::from_fn(factor.ncols(), |_, _| StandardNormal.sample(rng));
    factor * xi
}

fn trial_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// One realization. `states[k]` is `x_k` for `k = 0..=horizon`;
/// `measurements[k - 1]` is `y_k`.
#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub states: Vec<Vector>,
    pub measurements: Vec<Vector>,
}

/// Precomputed noise factors shared by all trials of one config.
#[derive(Debug, Clone)]
pub struct NoiseModel {
    process: Matrix,
    measurement: Matrix,
    initial: Matrix,
    c: Matrix,
}

impl NoiseModel {
    pub fn new(cfg: &ScenarioConfig) -> Self {
        let (c, r) = cfg.suite.augment();
        Self {
            process: covariance_factor(cfg.plant.q()),
            measurement: covariance_factor(&r),
            initial: covariance_factor(&cfg.p0),
            c,
        }
    }
}

/// Trajectory `x_k = A x_(k-1) + w`, `y_k = C x_k + v`, from `x_0 = x0`.
pub fn generate_trial(cfg: &ScenarioConfig, trial_index: u64) -> Trial {
    generate_with(cfg, &NoiseModel::new(cfg), trial_index)
}

fn generate_with(cfg: &ScenarioConfig, noise: &NoiseModel, trial_index: u64) -> Trial {
    let mut rng = trial_rng(cfg.seed, 2 * trial_index);
    let a = cfg.plant.a();
    let mut states = Vec::with_capacity(cfg.horizon + 1);
    let mut measurements = Vec::with_capacity(cfg.horizon);
    let mut x = cfg.x0.clone();
    states.push(x.clone());
    for _ in 0..cfg.horizon {
        x = a * &x + gaussian(&mut rng, &noise.process);
        let y = &noise.c * &x + gaussian(&mut rng, &noise.measurement);
        states.push(x.clone());
        measurements.push(y);
    }
    Trial {
        states,
        measurements,
    }
}

/// Initial estimates `(per-sensor, centralized)` for a trial.
fn initial_estimates(cfg: &ScenarioConfig, noise: &NoiseModel, trial_index: u64) -> (Vec<Vector>, Vector) {
    let mut rng = trial_rng(cfg.seed, 2 * trial_index + 1);
    let n_sensors = cfg.suite.len();
    match cfg.initial {
        InitialDraw::Shared => {
            let x = &cfg.x0 + gaussian(&mut rng, &noise.initial);
            (vec![x.clone(); n_sensors], x)
        }
        InitialDraw::Independent => {
            let sensors = (0..n_sensors)
                .map(|_| &cfg.x0 + gaussian(&mut rng, &noise.initial))
                .collect();
            let central = &cfg.x0 + gaussian(&mut rng, &noise.initial);
            (sensors, central)
        }
    }
}

/// Estimation errors `x_hat - x` of one trial for `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialErrors {
    /// `distributed[k][i]`.
    pub distributed: Vec<Vec<Vector>>,
    pub central: Vec<Vector>,
}

/// Everything a trial needs besides its index.
#[derive(Debug, Clone)]
pub struct SimContext {
    pub cfg: ScenarioConfig,
    pub design: ConsensusDesign,
    pub gains: GainDesign,
    noise: NoiseModel,
}

impl SimContext {
    pub fn new(cfg: &ScenarioConfig) -> Result<Self> {
        cfg.validate()?;
        let design = cfg.consensus_design()?;
        if design.rho_g() >= 1.0 {
            return Err(Error::Precondition(format!(
                "fusion matrix is not contracting: rho(G) = {}",
                design.rho_g()
            )));
        }
        let gains = cfg.gains()?;
        Ok(Self {
            noise: NoiseModel::new(cfg),
            cfg: cfg.clone(),
            design,
            gains,
        })
    }

    pub fn trial(&self, trial_index: u64) -> Trial {
        generate_with(&self.cfg, &self.noise, trial_index)
    }

    /// Runs both filters over one trial.
    pub fn trial_errors(&self, trial_index: u64) -> Result<TrialErrors> {
        let trial = self.trial(trial_index);
        let (starts, central_start) = initial_estimates(&self.cfg, &self.noise, trial_index);
        let mut bank = FilterBank::new(starts, self.gains.meas_dim());
        let mut central = CentralState::new(central_start);
        let err = |est: &Vector, k: usize| est - &trial.states[k];
        let mut distributed = Vec::with_capacity(self.cfg.horizon + 1);
        let mut central_err = Vec::with_capacity(self.cfg.horizon + 1);
        distributed.push(bank.estimates.iter().map(|e| err(e, 0)).collect());
        central_err.push(err(&central.estimate, 0));
        for (idx, y) in trial.measurements.iter().enumerate() {
            let k = idx + 1;
            bank = bank.step(&self.gains, &self.design, y, self.cfg.fusion_steps)?;
            central = central.step(&self.gains, y)?;
            distributed.push(bank.estimates.iter().map(|e| err(e, k)).collect());
            central_err.push(err(&central.estimate, k));
        }
        Ok(TrialErrors {
            distributed,
            central: central_err,
        })
    }
}

/// Mean squared error per step: `sensors[k][i]` and `central[k]`,
/// `k = 0..=horizon`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MseSeries {
    pub sensors: Vec<Vec<f64>>,
    pub central: Vec<f64>,
    pub trials: usize,
}

impl MseSeries {
    pub fn horizon(&self) -> usize {
        self.central.len().saturating_sub(1)
    }

    pub fn sensor_count(&self) -> usize {
        self.sensors.first().map_or(0, Vec::len)
    }

    /// CSV `k,sensor_id,mse`; `sensor_id` 0 is the centralized filter and
    /// sensors are numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("k,sensor_id,mse\n");
        for (k, (row, c)) in self.sensors.iter().zip(&self.central).enumerate() {
            out.push_str(&format!("{k},0,{c:.16e}\n"));
            for (i, v) in row.iter().enumerate() {
                out.push_str(&format!("{k},{},{v:.16e}\n", i + 1));
            }
        }
        out
    }

    /// Time averages over `k` in `[from, to)`: `(per sensor, centralized)`.
    pub fn steady(&self, from: usize, to: usize) -> Result<(Vec<f64>, f64)> {
        let to = to.min(self.central.len());
        if from >= to {
            return Err(Error::Precondition(format!(
                "empty averaging window [{from}, {to})"
            )));
        }
        let span = (to - from) as f64;
        let per_sensor = (0..self.sensor_count())
            .map(|i| self.sensors[from..to].iter().map(|row| row[i]).sum::<f64>() / span)
            .collect();
        let central = self.central[from..to].iter().sum::<f64>() / span;
        Ok((per_sensor, central))
    }
}

/// Runs `cfg.trials` trials in parallel and averages squared errors in trial
/// order, so results do not depend on the thread count.
pub fn run_monte_carlo(cfg: &ScenarioConfig) -> Result<MseSeries> {
    let ctx = SimContext::new(cfg)?;
    let squared = (0..cfg.trials as u64)
        .into_par_iter()
        .map(|t| {
            let errs = ctx.trial_errors(t)?;
            let sensors: Vec<Vec<f64>> = errs
                .distributed
                .iter()
                .map(|row| row.iter().map(|e| e.norm_squared()).collect())
                .collect();
            let central: Vec<f64> = errs.central.iter().map(|e| e.norm_squared()).collect();
            Ok((sensors, central))
        })
        .collect::<Result<Vec<_>>>()?;

    let steps = cfg.horizon + 1;
    let n_sensors = cfg.suite.len();
    let mut sensors = vec![vec![0.0; n_sensors]; steps];
    let mut central = vec![0.0; steps];
    for (s, c) in &squared {
        for k in 0..steps {
            for i in 0..n_sensors {
                sensors[k][i] += s[k][i];
            }
            central[k] += c[k];
        }
    }
    let m = cfg.trials as f64;
    sensors.iter_mut().flatten().for_each(|v| *v /= m);
    central.iter_mut().for_each(|v| *v /= m);
    Ok(MseSeries {
        sensors,
        central,
        trials: cfg.trials,
    })
}
