//! Online estimators sharing one precomputed gain `K`.
//!
//! The distributed bank runs, for every sensor `i`,
//!
//! ```text
//! x_pred   = A x_i
//! z_i(0)   = C x_pred                  (fresh every time step)
//! z_i(l)   = l fusion rounds
//! x_i      = x_pred + K (z_i(l) - C x_pred)
//! ```
//!
//! and the centralized reference replaces `z_i(l)` with the true stacked `y`.

use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusDesign;
use crate::linalg::{solve_dare, spectral_radius};
use crate::model::{check_observability, PlantModel};
use crate::{Error, Matrix, Result, Vector};

/// Offline design: Riccati solution `P` and gain `K = P C' (C P C' + R)^-1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GainDesign {
    pub a: Matrix,
    pub c: Matrix,
    pub p: Matrix,
    pub k: Matrix,
}

impl GainDesign {
    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn meas_dim(&self) -> usize {
        self.c.nrows()
    }

    /// `A - K C A`.
    pub fn closed_loop(&self) -> Matrix {
        &self.a - &self.k * &self.c * &self.a
    }
}

pub fn design_gain(plant: &PlantModel, c: &Matrix, r: &Matrix) -> Result<GainDesign> {
    let a = plant.a();
    if c.ncols() != plant.state_dim() || r.shape() != (c.nrows(), c.nrows()) {
        return Err(Error::Dimension(format!(
            "C {:?} and R {:?} do not match a {}-state plant",
            c.shape(),
            r.shape(),
            plant.state_dim()
        )));
    }
    if !check_observability(c, a) {
        return Err(Error::NotObservable);
    }
    let p = solve_dare(a, c, plant.q(), r)?;
    let s = c * &p * c.transpose() + r;
    let k = s
        .lu()
        .solve(&(c * &p))
        .ok_or_else(|| Error::Precondition("innovation covariance is singular".into()))?
        .transpose();
    let gains = GainDesign {
        a: a.clone(),
        c: c.clone(),
        p,
        k,
    };
    let rho = spectral_radius(&gains.closed_loop())?;
    if rho >= 1.0 {
        return Err(Error::Precondition(format!(
            "A - KCA is not Schur stable (spectral radius {rho})"
        )));
    }
    Ok(gains)
}

fn ensure_finite_vec(v: &Vector, what: &str) -> Result<()> {
    if v.iter().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(Error::Precondition(format!("{what} became non-finite")))
    }
}

/// Per-sensor state estimates and the last fused measurement estimates.
#[derive(Debug, Clone, PartialEq)]
pub struct FilterBank {
    pub estimates: Vec<Vector>,
    pub z: Vec<Vector>,
    pub time: usize,
}

impl FilterBank {
    pub fn new(estimates: Vec<Vector>, meas_dim: usize) -> Self {
        let z = vec![Vector::zeros(meas_dim); estimates.len()];
        Self {
            estimates,
            z,
            time: 0,
        }
    }

    /// Every sensor starts from the same estimate.
    pub fn shared(sensors: usize, x0: &Vector, meas_dim: usize) -> Self {
        Self::new(vec![x0.clone(); sensors], meas_dim)
    }

    /// One time step: predict, fuse `fusion_steps` rounds, update.
    pub fn step(
        &self,
        gains: &GainDesign,
        design: &ConsensusDesign,
        y: &Vector,
        fusion_steps: usize,
    ) -> Result<Self> {
        let n_sensors = self.estimates.len();
        let r = gains.meas_dim();
        if fusion_steps == 0 {
            return Err(Error::Precondition("fusion needs at least one round".into()));
        }
        if design.node_count() != n_sensors || design.meas_dim() != r || y.len() != r {
            return Err(Error::Dimension(format!(
                "bank of {n_sensors} sensors, design for {} sensors/{} outputs, gain for {r} outputs, y has {}",
                design.node_count(),
                design.meas_dim(),
                y.len()
            )));
        }
        if let Some(i) = self.estimates.iter().position(|x| x.len() != gains.state_dim()) {
            return Err(Error::Dimension(format!("estimate {i} has wrong length")));
        }

        let predicted: Vec<Vector> = self.estimates.iter().map(|x| &gains.a * x).collect();
        let predicted_meas: Vec<Vector> = predicted.iter().map(|x| &gains.c * x).collect();
        let mut z0 = Vector::zeros(n_sensors * r);
        for (i, zi) in predicted_meas.iter().enumerate() {
            z0.rows_mut(i * r, r).copy_from(zi);
        }
        let fused = design.fuse(&z0, y, fusion_steps)?;

        let mut estimates = Vec::with_capacity(n_sensors);
        let mut z = Vec::with_capacity(n_sensors);
        for (i, (pred, pred_meas)) in predicted.iter().zip(&predicted_meas).enumerate() {
            let zi = fused.rows(i * r, r).into_owned();
            let x = pred + &gains.k * (&zi - pred_meas);
            ensure_finite_vec(&x, "distributed estimate")?;
            estimates.push(x);
            z.push(zi);
        }
        Ok(Self {
            estimates,
            z,
            time: self.time + 1,
        })
    }
}

/// Free function form of [`FilterBank::step`].
pub fn comdf_step(
    bank: &FilterBank,
    gains: &GainDesign,
    design: &ConsensusDesign,
    y: &Vector,
    fusion_steps: usize,
) -> Result<FilterBank> {
    bank.step(gains, design, y, fusion_steps)
}

/// Fixed-gain centralized filter state.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralState {
    pub estimate: Vector,
    pub time: usize,
}

impl CentralState {
    pub fn new(estimate: Vector) -> Self {
        Self { estimate, time: 0 }
    }

    /// `x = A x + K (y - C A x)`.
    pub fn step(&self, gains: &GainDesign, y: &Vector) -> Result<Self> {
        if y.len() != gains.meas_dim() || self.estimate.len() != gains.state_dim() {
            return Err(Error::Dimension(format!(
                "centralized step got y of length {} and x of length {}",
                y.len(),
                self.estimate.len()
            )));
        }
        let pred = &gains.a * &self.estimate;
        let estimate = &pred + &gains.k * (y - &gains.c * &pred);
        ensure_finite_vec(&estimate, "centralized estimate")?;
        Ok(Self {
            estimate,
            time: self.time + 1,
        })
    }
}

pub fn ckf_step(state: &CentralState, gains: &GainDesign, y: &Vector) -> Result<CentralState> {
    state.step(gains, y)
}
