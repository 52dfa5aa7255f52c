//! Plant dynamics and the sensor suite observing it.
//!
//! `x_{k+1} = A x_k + w_k`, `y_{i,k} = C_i x_k + v_{i,k}` with constant
//! covariances `Q` and `R_i`.

use serde::{Deserialize, Serialize};

use crate::linalg::{block_diag, min_sym_eigenvalue, symmetrize};
use crate::{Error, Matrix, Result};

const PSD_TOL: f64 = 1e-12;
const RANK_TOL: f64 = 1e-9;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlantModel {
    a: Matrix,
    q: Matrix,
}

impl PlantModel {
    pub fn new(a: Matrix, q: Matrix) -> Result<Self> {
        let n = a.nrows();
        if a.ncols() != n {
            return Err(Error::NotSquare {
                rows: a.nrows(),
                cols: a.ncols(),
            });
        }
        if q.shape() != (n, n) {
            return Err(Error::Dimension(format!(
                "Q is {:?}, expected {n}x{n}",
                q.shape()
            )));
        }
        let q = symmetrize(&q);
        let min_eig = min_sym_eigenvalue(&q)?;
        if min_eig < -PSD_TOL {
            return Err(Error::InvalidModel(format!(
                "Q is not positive semidefinite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { a, q })
    }

    /// Planar constant-velocity target with state `[px, py, vx, vy]`,
    /// sampled every `dt` seconds.
    pub fn constant_velocity(dt: f64) -> Result<Self> {
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::InvalidModel(format!("sampling interval must be positive, got {dt}")));
        }
        let mut a = Matrix::identity(4, 4);
        a[(0, 2)] = dt;
        a[(1, 3)] = dt;
        let qb = Matrix::from_row_slice(
            2,
            2,
            &[dt.powi(3) / 3.0, dt.powi(2) / 2.0, dt.powi(2) / 2.0, dt],
        );
        let mut q = Matrix::zeros(4, 4);
        q.view_mut((0, 0), (2, 2)).copy_from(&qb);
        q.view_mut((2, 2), (2, 2)).copy_from(&qb);
        q.view_mut((0, 2), (2, 2)).copy_from(&(&qb * 0.5));
        q.view_mut((2, 0), (2, 2)).copy_from(&(&qb * 0.5));
        Self::new(a, q)
    }

    pub fn a(&self) -> &Matrix {
        &self.a
    }

    pub fn q(&self) -> &Matrix {
        &self.q
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }
}

/// One observation channel: `C_i` (r_i x n) and its noise covariance `R_i`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sensor {
    c: Matrix,
    r: Matrix,
}

impl Sensor {
    pub fn new(c: Matrix, r: Matrix) -> Result<Self> {
        let m = c.nrows();
        if r.shape() != (m, m) {
            return Err(Error::Dimension(format!(
                "R_i is {:?}, expected {m}x{m}",
                r.shape()
            )));
        }
        let r = symmetrize(&r);
        let min_eig = min_sym_eigenvalue(&r)?;
        if min_eig <= 0.0 {
            return Err(Error::InvalidModel(format!(
                "R_i is not positive definite (min eigenvalue {min_eig:e})"
            )));
        }
        Ok(Self { c, r })
    }

    /// Observes `[px, py]` with unit noise.
    pub fn position() -> Self {
        let c = Matrix::from_row_slice(2, 4, &[1.0, 0.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
        Self::new(c, Matrix::identity(2, 2)).expect("static sensor is valid")
    }

    /// Observes `[vx, vy]` with noise variance 5.
    pub fn velocity() -> Self {
        let c = Matrix::from_row_slice(2, 4, &[0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 1.0]);
        Self::new(c, Matrix::identity(2, 2) * 5.0).expect("static sensor is valid")
    }

    pub fn c(&self) -> &Matrix {
        &self.c
    }

    pub fn r(&self) -> &Matrix {
        &self.r
    }

    pub fn dim(&self) -> usize {
        self.c.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSuite {
    sensors: Vec<Sensor>,
}

impl SensorSuite {
    pub fn new(sensors: Vec<Sensor>) -> Result<Self> {
        let Some(first) = sensors.first() else {
            return Err(Error::InvalidModel("sensor suite is empty".into()));
        };
        let n = first.c.ncols();
        if let Some(i) = sensors.iter().position(|s| s.c.ncols() != n) {
            return Err(Error::Dimension(format!(
                "sensor {i} observes {} states, sensor 0 observes {n}",
                sensors[i].c.ncols()
            )));
        }
        Ok(Self { sensors })
    }

    /// Five sensors: 1, 2, 4 measure position, 3 and 5 velocity.
    pub fn tracking_suite() -> Self {
        let (p, v) = (Sensor::position(), Sensor::velocity());
        Self::new(vec![p.clone(), p.clone(), v.clone(), p, v]).expect("static suite is valid")
    }

    pub fn sensors(&self) -> &[Sensor] {
        &self.sensors
    }

    pub fn len(&self) -> usize {
        self.sensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sensors.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.sensors[0].c.ncols()
    }

    /// `[r_1, ..., r_N]`.
    pub fn dims(&self) -> Vec<usize> {
        self.sensors.iter().map(Sensor::dim).collect()
    }

    /// `r = sum r_i`.
    pub fn total_dim(&self) -> usize {
        self.dims().iter().sum()
    }

    /// Row offset of each sensor's block in the stacked measurement.
    pub fn offsets(&self) -> Vec<usize> {
        self.sensors
            .iter()
            .scan(0, |acc, s| {
                let start = *acc;
                *acc += s.dim();
                Some(start)
            })
            .collect()
    }

    /// Stacked `C = [C_1; ...; C_N]` and `R = blockdiag(R_1, ..., R_N)`.
    pub fn augment(&self) -> (Matrix, Matrix) {
        let n = self.state_dim();
        let r = self.total_dim();
        let mut c = Matrix::zeros(r, n);
        for (s, off) in self.sensors.iter().zip(self.offsets()) {
            c.view_mut((off, 0), (s.dim(), n)).copy_from(&s.c);
        }
        let rs: Vec<Matrix> = self.sensors.iter().map(|s| s.r.clone()).collect();
        (c, block_diag(&rs))
    }
}

/// Stacked observability matrix `[C; CA; ...; CA^{n-1}]`.
pub fn observability_matrix(c: &Matrix, a: &Matrix) -> Matrix {
    let n = a.nrows();
    let m = c.nrows();
    let mut out = Matrix::zeros(m * n, n);
    let mut block = c.clone();
    for k in 0..n {
        out.view_mut((k * m, 0), (m, n)).copy_from(&block);
        block = &block * a;
    }
    out
}

/// Rank test on the observability matrix: singular values above
/// `1e-9 * sigma_max` count.
pub fn check_observability(c: &Matrix, a: &Matrix) -> bool {
    if c.ncols() != a.nrows() || a.nrows() != a.ncols() {
        return false;
    }
    let sv = observability_matrix(c, a).singular_values();
    let max = sv.max();
    if max == 0.0 {
        return false;
    }
    sv.iter().filter(|&&s| s > RANK_TOL * max).count() == a.nrows()
}
