//! Closed-form error covariances of the distributed filter and of the
//! fixed-gain centralized filter, in the stacked `N n` error space.
//!
//! With `e_i = x_hat_i - x` and `H = G^l`:
//!
//! ```text
//! A(l) = I (x) (A - KCA) + (I (x) K) H (I (x) CA)
//! B(l) = I (x) (I - KC)  + (I (x) K) H (I (x) C)
//! D(l) = (I (x) K)(I - H)
//! Phi(l) = B(l)(U (x) Q)B(l)' + D(l)(U (x) R)D(l)'
//! ```
//!
//! `U` is the all-ones `N x N` matrix. The centralized counterparts drop every
//! `H` term (`D_cc = I (x) K`).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::consensus::ConsensusDesign;
use crate::filter::GainDesign;
use crate::linalg::{kron, mat_pow, ones, solve_dle, spectral_norm, spectral_radius, symmetrize};
use crate::model::{PlantModel, SensorSuite};
use crate::{Error, Matrix, Result};

/// Terms kept in the difference series `sum_k A_cc^k Phi_bar A_cc^k'`.
pub const SERIES_TERMS: usize = 200;
/// Largest tolerated relative tail `||A_cc^(SERIES_TERMS+1)||^2`.
pub const SERIES_TAIL_LIMIT: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct ErrorSystem {
    pub l: usize,
    pub sensors: usize,
    pub state_dim: usize,
    pub a_l: Matrix,
    pub b_l: Matrix,
    pub d_l: Matrix,
    pub phi_l: Matrix,
    pub a_cc: Matrix,
    pub b_cc: Matrix,
    pub d_cc: Matrix,
    pub phi_cc: Matrix,
    /// `G^l`.
    pub g_l: Matrix,
    stacked_c: Matrix,
    stacked_ca: Matrix,
    process_cov: Matrix,
    meas_cov: Matrix,
    closed_loop: Matrix,
    local_phi: Matrix,
}

impl ErrorSystem {
    /// `A(l) - A_cc = (I (x) K) G^l (I (x) CA)`.
    pub fn a_bar(&self) -> Matrix {
        &self.a_l - &self.a_cc
    }

    pub fn b_bar(&self) -> Matrix {
        &self.b_l - &self.b_cc
    }

    pub fn d_bar(&self) -> Matrix {
        &self.d_l - &self.d_cc
    }

    /// Driving term of the difference series, evaluated at the distributed
    /// steady covariance `p_l`.
    pub fn phi_bar(&self, p_l: &Matrix) -> Matrix {
        let a_bar = self.a_bar();
        let cross = &a_bar * p_l * self.a_cc.transpose();
        symmetrize(
            &(&cross + cross.transpose() + &a_bar * p_l * a_bar.transpose() + &self.phi_l - &self.phi_cc),
        )
    }

    pub fn stacked_dim(&self) -> usize {
        self.sensors * self.state_dim
    }
}

/// Assembles every error-system matrix for fusion depth `l`.
pub fn build_error_system(
    plant: &PlantModel,
    suite: &SensorSuite,
    gains: &GainDesign,
    design: &ConsensusDesign,
    l: usize,
) -> Result<ErrorSystem> {
    let n = plant.state_dim();
    let sensors = suite.len();
    let (c, r) = suite.augment();
    let m = c.nrows();
    if gains.state_dim() != n
        || gains.meas_dim() != m
        || design.node_count() != sensors
        || design.meas_dim() != m
        || design.dims() != suite.dims().as_slice()
    {
        return Err(Error::Dimension(format!(
            "plant n={n}, suite {sensors} sensors/{m} outputs, gain {}x{}, design {} nodes/{} outputs",
            gains.k.nrows(),
            gains.k.ncols(),
            design.node_count(),
            design.meas_dim()
        )));
    }
    let a = plant.a();
    let k = &gains.k;
    let ca = &c * a;
    let eye_n = Matrix::identity(sensors, sensors);
    let g_l = mat_pow(design.g(), l)?;

    let stacked_k = kron(&eye_n, k);
    let stacked_c = kron(&eye_n, &c);
    let stacked_ca = kron(&eye_n, &ca);
    let closed_loop = a - k * &ca;
    let a_cc = kron(&eye_n, &closed_loop);
    let b_cc = kron(&eye_n, &(Matrix::identity(n, n) - k * &c));
    let d_cc = stacked_k.clone();

    let kh = &stacked_k * &g_l;
    let a_l = &a_cc + &kh * &stacked_ca;
    let b_l = &b_cc + &kh * &stacked_c;
    let d_l = &stacked_k - &kh;

    let u = ones(sensors);
    let process_cov = kron(&u, plant.q());
    let meas_cov = kron(&u, &r);
    let drive = |b: &Matrix, d: &Matrix| {
        symmetrize(&(b * &process_cov * b.transpose() + d * &meas_cov * d.transpose()))
    };
    let phi_l = drive(&b_l, &d_l);
    let phi_cc = drive(&b_cc, &d_cc);

    let ikc = Matrix::identity(n, n) - k * &c;
    let local_phi = symmetrize(&(&ikc * plant.q() * ikc.transpose() + k * &r * k.transpose()));

    Ok(ErrorSystem {
        l,
        sensors,
        state_dim: n,
        a_l,
        b_l,
        d_l,
        phi_l,
        a_cc,
        b_cc,
        d_cc,
        phi_cc,
        g_l,
        stacked_c,
        stacked_ca,
        process_cov,
        meas_cov,
        closed_loop,
        local_phi,
    })
}

/// One step of `P = A(l) P A(l)' + Phi(l)`.
pub fn propagate_covariance(sys: &ErrorSystem, p_prev: &Matrix) -> Matrix {
    symmetrize(&(&sys.a_l * p_prev * sys.a_l.transpose() + &sys.phi_l))
}

/// One step of the centralized recursion `P = A_cc P A_cc' + Phi_cc`.
pub fn propagate_centralized(sys: &ErrorSystem, p_prev: &Matrix) -> Matrix {
    symmetrize(&(&sys.a_cc * p_prev * sys.a_cc.transpose() + &sys.phi_cc))
}

/// First two moments of the fused-measurement error after `l` rounds.
#[derive(Debug, Clone)]
pub struct MeasurementErrorStats {
    /// Maps `E{e_(k-1)}` to `E{eps^(l)}`: `G^l (I (x) CA)`.
    pub mean_map: Matrix,
    pub covariance: Matrix,
}

/// Mean map and covariance of `eps^(l) = z^(l) - 1 (x) y` given the
/// covariance `p_prev` of the previous stacked estimation error.
pub fn measurement_error_stats(sys: &ErrorSystem, p_prev: &Matrix) -> Result<MeasurementErrorStats> {
    let nn = sys.stacked_dim();
    if p_prev.shape() != (nn, nn) {
        return Err(Error::Dimension(format!(
            "previous covariance is {:?}, expected {nn}x{nn}",
            p_prev.shape()
        )));
    }
    let initial = &sys.stacked_ca * p_prev * sys.stacked_ca.transpose()
        + &sys.stacked_c * &sys.process_cov * sys.stacked_c.transpose()
        + &sys.meas_cov;
    Ok(MeasurementErrorStats {
        mean_map: &sys.g_l * &sys.stacked_ca,
        covariance: symmetrize(&(&sys.g_l * initial * sys.g_l.transpose())),
    })
}

/// Steady covariances of both filters.
#[derive(Debug, Clone)]
pub struct SteadyState {
    pub p_l: Matrix,
    pub p_cc: Matrix,
    /// `n x n` solution of `X = (A-KCA) X (A-KCA)' + (I-KC)Q(I-KC)' + KRK'`.
    pub central_block: Matrix,
}

impl SteadyState {
    pub fn gap(&self) -> f64 {
        spectral_norm(&(&self.p_l - &self.p_cc))
    }
}

fn check_schur(m: &Matrix, what: &str) -> Result<f64> {
    let rho = spectral_radius(m)?;
    if rho >= 1.0 {
        return Err(Error::Precondition(format!(
            "{what} is not Schur stable (spectral radius {rho})"
        )));
    }
    Ok(rho)
}

fn centralized_steady(sys: &ErrorSystem) -> Result<(Matrix, Matrix)> {
    check_schur(&sys.a_cc, "A_cc")?;
    let p_cc = solve_dle(&sys.a_cc, &sys.phi_cc)?;
    let block = solve_dle(&sys.closed_loop, &sys.local_phi)?;
    let expected = kron(&ones(sys.sensors), &block);
    let deviation = (&p_cc - &expected).abs().max();
    if deviation > 1e-9 * (1.0 + block.abs().max()) {
        return Err(Error::Precondition(format!(
            "centralized covariance deviates from its block structure by {deviation:e}"
        )));
    }
    Ok((p_cc, block))
}

/// Solves both Lyapunov equations. Fails if `A(l)` or `A_cc` is not Schur.
pub fn steady_state(sys: &ErrorSystem) -> Result<SteadyState> {
    check_schur(&sys.a_l, &format!("A(l) at l = {}", sys.l))?;
    let p_l = solve_dle(&sys.a_l, &sys.phi_l)?;
    let (p_cc, central_block) = centralized_steady(sys)?;
    Ok(SteadyState {
        p_l,
        p_cc,
        central_block,
    })
}

/// Evaluates `sum_{k=0}^{SERIES_TERMS} A_cc^k Phi_bar A_cc^k'` for the given
/// distributed steady covariance.
pub fn difference_series(sys: &ErrorSystem, p_l: &Matrix) -> Result<Matrix> {
    let tail = spectral_norm(&mat_pow(&sys.a_cc, SERIES_TERMS + 1)?).powi(2);
    if tail > SERIES_TAIL_LIMIT {
        return Err(Error::Precondition(format!(
            "difference series tail estimate {tail:e} exceeds {SERIES_TAIL_LIMIT:e}"
        )));
    }
    let mut term = sys.phi_bar(p_l);
    let mut sum = term.clone();
    for _ in 0..SERIES_TERMS {
        term = &sys.a_cc * &term * sys.a_cc.transpose();
        sum += &term;
    }
    Ok(symmetrize(&sum))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapRow {
    pub l: usize,
    /// `None` when `A(l)` is not Schur stable; no Lyapunov solve is attempted.
    pub gap: Option<f64>,
    pub rho_a: f64,
    /// `||series - direct|| / ||direct||`.
    pub series_residual: Option<f64>,
    pub bound_radius: Option<f64>,
    pub bound_norm: Option<f64>,
}

impl GapRow {
    pub fn unstable(&self) -> bool {
        self.gap.is_none()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapSummary {
    pub rho_g: f64,
    pub norm_g: f64,
    pub stacked_meas_dim: usize,
    /// `rho(G) < 1`: the `l^(Nr) rho^(l-Nr)` bound applies.
    pub radius_regime: bool,
    /// `||G|| < 1`: the `||G||^l` bound applies.
    pub norm_regime: bool,
    pub m1: Option<f64>,
    pub m2: Option<f64>,
    /// Least-squares slope of `ln gap` against `l` over stable rows.
    pub log_slope: Option<f64>,
    pub unstable_count: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GapReport {
    pub rows: Vec<GapRow>,
    pub summary: GapSummary,
}

fn fmt_num(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x:.16e}"),
        None => "nan".to_string(),
    }
}

impl GapReport {
    pub fn row(&self, l: usize) -> Option<&GapRow> {
        self.rows.iter().find(|r| r.l == l)
    }

    pub fn gap(&self, l: usize) -> Option<f64> {
        self.row(l).and_then(|r| r.gap)
    }

    /// CSV with header `l,gap,bound_radius,bound_norm,rho_G,norm_G`. Unstable
    /// rows carry `unstable` in the gap column.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("l,gap,bound_radius,bound_norm,rho_G,norm_G\n");
        for row in &self.rows {
            let gap = match row.gap {
                Some(g) => format!("{g:.16e}"),
                None => "unstable".to_string(),
            };
            out.push_str(&format!(
                "{},{},{},{},{:.16e},{:.16e}\n",
                row.l,
                gap,
                fmt_num(row.bound_radius),
                fmt_num(row.bound_norm),
                self.summary.rho_g,
                self.summary.norm_g
            ));
        }
        out
    }
}

/// `ln(l^nr rho^(l - nr))`.
fn ln_radius_shape(l: usize, nr: usize, rho: f64) -> f64 {
    let ll = if l == 0 { f64::NEG_INFINITY } else { (l as f64).ln() };
    nr as f64 * ll + (l as f64 - nr as f64) * rho.ln()
}

fn least_squares_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Steady-state gap `||P^(l) - P_cc||` over `ls`, with fitted decay bounds.
pub fn gap_sweep(
    plant: &PlantModel,
    suite: &SensorSuite,
    gains: &GainDesign,
    design: &ConsensusDesign,
    ls: &[usize],
) -> Result<GapReport> {
    let base = build_error_system(plant, suite, gains, design, 0)?;
    let (p_cc, _) = centralized_steady(&base)?;

    let mut rows = ls
        .par_iter()
        .map(|&l| -> Result<GapRow> {
            let sys = build_error_system(plant, suite, gains, design, l)?;
            let rho_a = spectral_radius(&sys.a_l)?;
            if rho_a >= 1.0 {
                return Ok(GapRow {
                    l,
                    gap: None,
                    rho_a,
                    series_residual: None,
                    bound_radius: None,
                    bound_norm: None,
                });
            }
            let p_l = solve_dle(&sys.a_l, &sys.phi_l)?;
            let direct = &p_l - &p_cc;
            let gap = spectral_norm(&direct);
            let series = difference_series(&sys, &p_l)?;
            let series_residual = if gap > 0.0 {
                spectral_norm(&(series - &direct)) / gap
            } else {
                spectral_norm(&series)
            };
            Ok(GapRow {
                l,
                gap: Some(gap),
                rho_a,
                series_residual: Some(series_residual),
                bound_radius: None,
                bound_norm: None,
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let rho_g = design.rho_g();
    let norm_g = design.norm_g();
    let nr = design.g().nrows();
    let radius_regime = rho_g < 1.0;
    let norm_regime = norm_g < 1.0;
    let stable: Vec<(usize, f64)> = rows.iter().filter_map(|r| r.gap.map(|g| (r.l, g))).collect();

    let fit = |shape: &dyn Fn(usize) -> f64| -> Option<f64> {
        stable
            .iter()
            .filter(|(_, g)| *g > 0.0)
            .map(|&(l, g)| (g.ln() - shape(l)).exp())
            .filter(|v| v.is_finite())
            .fold(None, |acc: Option<f64>, v| Some(acc.map_or(v, |a| a.max(v))))
    };
    let m1 = if radius_regime && rho_g > 0.0 {
        fit(&|l| ln_radius_shape(l, nr, rho_g))
    } else {
        None
    };
    let m2 = if norm_regime && norm_g > 0.0 {
        fit(&|l| l as f64 * norm_g.ln())
    } else {
        None
    };
    for row in &mut rows {
        row.bound_radius = m1.map(|m| (m.ln() + ln_radius_shape(row.l, nr, rho_g)).exp());
        row.bound_norm = m2.map(|m| m * norm_g.powi(row.l as i32));
    }
    let log_points: Vec<(f64, f64)> = stable
        .iter()
        .filter(|(_, g)| *g > 0.0)
        .map(|&(l, g)| (l as f64, g.ln()))
        .collect();

    Ok(GapReport {
        summary: GapSummary {
            rho_g,
            norm_g,
            stacked_meas_dim: nr,
            radius_regime,
            norm_regime,
            m1,
            m2,
            log_slope: least_squares_slope(&log_points),
            unstable_count: rows.len() - stable.len(),
        },
        rows,
    })
}

/// `N x N` block of `U (x) p0`: every sensor starts from one shared draw.
pub fn shared_initial_covariance(p0: &Matrix, sensors: usize) -> Matrix {
    kron(&ones(sensors), p0)
}

/// Independent per-sensor draws: `I (x) p0`.
pub fn independent_initial_covariance(p0: &Matrix, sensors: usize) -> Matrix {
    kron(&Matrix::identity(sensors, sensors), p0)
}

/// Traces of the `n x n` diagonal blocks of a stacked covariance.
pub fn block_traces(p: &Matrix, sensors: usize, n: usize) -> Vec<f64> {
    (0..sensors)
        .map(|i| p.view((i * n, i * n), (n, n)).trace())
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransientRow {
    pub k: usize,
    pub gap: f64,
    pub sensor_traces: Vec<f64>,
    pub central_trace: f64,
}

/// Runs both covariance recursions from the same stacked `p0` for `horizon`
/// steps and reports their gap at `k = 1..=horizon`.
pub fn transient_compare(
    plant: &PlantModel,
    suite: &SensorSuite,
    gains: &GainDesign,
    design: &ConsensusDesign,
    l: usize,
    horizon: usize,
    p0: &Matrix,
) -> Result<Vec<TransientRow>> {
    let sys = build_error_system(plant, suite, gains, design, l)?;
    let nn = sys.stacked_dim();
    if p0.shape() != (nn, nn) {
        return Err(Error::Dimension(format!(
            "initial covariance is {:?}, expected {nn}x{nn}",
            p0.shape()
        )));
    }
    let n = sys.state_dim;
    let mut p = p0.clone();
    let mut pc = p0.clone();
    let mut rows = Vec::with_capacity(horizon);
    for k in 1..=horizon {
        p = propagate_covariance(&sys, &p);
        pc = propagate_centralized(&sys, &pc);
        rows.push(TransientRow {
            k,
            gap: spectral_norm(&(&p - &pc)),
            sensor_traces: block_traces(&p, sys.sensors, n),
            central_trace: pc.view((0, 0), (n, n)).trace(),
        });
    }
    Ok(rows)
}
