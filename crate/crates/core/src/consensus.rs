//! Consensus gains and the measurement-fusion rounds.
//!
//! Every sensor `i` keeps an estimate `z_i` of the whole stacked measurement
//! `y` (one block per sensor `j`). A fusion round pulls each block toward the
//! neighbours' estimates and, when `j` is an in-neighbour of `i`, toward the
//! true measurement `y_j` itself (the leader-following term). Stacked over
//! all sensors the error obeys `eps^(l) = G^l eps^(0)` with
//!
//! `G = I_{Nr} - Lambda (L (x) I_r + B)`.

use serde::{Deserialize, Serialize};

use crate::graph::DiGraph;
use crate::linalg::{kron, spectral_norm, spectral_radius, Spectrum};
use crate::{Error, Matrix, Result, Vector};

/// Margin applied to the uniform design: `mu = UNIFIED_MARGIN / rho(L (x) I_r + B)`.
pub const UNIFIED_MARGIN: f64 = 0.99;

/// Per-channel consensus gains: `mu(i, j)` is used by sensor `i` on its
/// estimate of sensor `j`'s measurement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MuTable {
    mu: Vec<Vec<f64>>,
}

impl MuTable {
    pub fn new(mu: Vec<Vec<f64>>) -> Result<Self> {
        let n = mu.len();
        if n == 0 || mu.iter().any(|row| row.len() != n) {
            return Err(Error::Dimension("mu table must be a non-empty square table".into()));
        }
        for (i, row) in mu.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                if !(v.is_finite() && v > 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "mu[{i}][{j}] = {v} must be positive and finite"
                    )));
                }
            }
        }
        Ok(Self { mu })
    }

    pub fn uniform(n: usize, mu: f64) -> Result<Self> {
        Self::new(vec![vec![mu; n]; n])
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.mu[i][j]
    }

    pub fn len(&self) -> usize {
        self.mu.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mu.is_empty()
    }

    pub fn rows(&self) -> &[Vec<f64>] {
        &self.mu
    }

    /// `0 < mu_ij <= 1 / (l_ii + a_ij)` for every entry, the range that keeps
    /// `G` nonnegative with `rho(G) < 1`.
    pub fn within_distributed_bound(&self, g: &DiGraph) -> bool {
        (0..self.len()).all(|i| {
            (0..self.len()).all(|j| {
                let denom = g.in_degree(i) as f64 + g.a(i, j);
                denom == 0.0 || self.mu[i][j] <= 1.0 / denom
            })
        })
    }
}

/// Local gain rule `mu_ij = slack / (l_ii + a_ij + shift)`.
///
/// The default (`slack = 1`, `shift = 1`) sits strictly inside the admissible
/// range; `shift = 0` lands on its upper boundary.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DistributedMu {
    pub slack: f64,
    pub shift: f64,
}

impl Default for DistributedMu {
    fn default() -> Self {
        Self {
            slack: 1.0,
            shift: 1.0,
        }
    }
}

/// Consensus gains from row-local quantities only (`l_ii` and `a_ij`).
pub fn design_mu_distributed(g: &DiGraph, rule: DistributedMu) -> Result<MuTable> {
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    if !(rule.slack > 0.0 && rule.slack <= 1.0) {
        return Err(Error::InvalidModel(format!("slack must lie in (0, 1], got {}", rule.slack)));
    }
    if !(rule.shift >= 0.0 && rule.shift.is_finite()) {
        return Err(Error::InvalidModel(format!("shift must be nonnegative, got {}", rule.shift)));
    }
    let n = g.node_count();
    let mut mu = vec![vec![0.0; n]; n];
    for (i, row) in mu.iter_mut().enumerate() {
        let degree = g.in_degree(i) as f64;
        for (j, v) in row.iter_mut().enumerate() {
            let denom = degree + g.a(i, j) + rule.shift;
            if denom <= 0.0 {
                return Err(Error::InvalidModel(format!(
                    "mu[{i}][{j}] has a zero denominator; use a positive shift"
                )));
            }
            *v = rule.slack / denom;
        }
    }
    MuTable::new(mu)
}

/// Block-diagonal leader selector `B = diag(B_1, ..., B_N)` with
/// `B_i = diag(a_i1 I_{r_1}, ..., a_iN I_{r_N})`.
pub fn leader_selector(g: &DiGraph, dims: &[usize]) -> Matrix {
    let r: usize = dims.iter().sum();
    let n = g.node_count();
    let mut b = Matrix::zeros(n * r, n * r);
    for i in 0..n {
        let mut off = i * r;
        for (j, &rj) in dims.iter().enumerate() {
            for _ in 0..rj {
                b[(off, off)] = g.a(i, j);
                off += 1;
            }
        }
    }
    b
}

/// `L (x) I_r + B`.
pub fn pinned_laplacian(g: &DiGraph, dims: &[usize]) -> Matrix {
    let r: usize = dims.iter().sum();
    kron(&g.laplacian(), &Matrix::identity(r, r)) + leader_selector(g, dims)
}

/// Channel `j` of `L (x) I_r + B` (all components of sensor `j`'s block
/// share it): `L + diag(a_1j, ..., a_Nj)`. The full matrix is a direct sum of
/// these, one copy per measurement component.
pub fn pinned_channel_laplacian(g: &DiGraph, channel: usize) -> Matrix {
    let mut m = g.laplacian();
    for i in 0..g.node_count() {
        m[(i, i)] += g.a(i, channel);
    }
    m
}

/// One uniform gain for every channel, `mu = 0.99 / rho(L (x) I_r + B)`.
/// Needs the whole topology.
pub fn design_mu_unified(g: &DiGraph, dims: &[usize]) -> Result<f64> {
    if g.node_count() < 2 {
        return Err(Error::InvalidModel(
            "uniform consensus gain is undefined for a single sensor".into(),
        ));
    }
    if !g.is_strongly_connected() {
        return Err(Error::NotStronglyConnected);
    }
    if dims.len() != g.node_count() {
        return Err(Error::Dimension(format!(
            "{} sensor dimensions for {} nodes",
            dims.len(),
            g.node_count()
        )));
    }
    let rho = spectral_radius(&pinned_laplacian(g, dims))?;
    Ok(UNIFIED_MARGIN / rho)
}

/// Assembled fusion machinery for one topology, sensor layout and gain table.
#[derive(Debug, Clone)]
pub struct ConsensusDesign {
    graph: DiGraph,
    dims: Vec<usize>,
    offsets: Vec<usize>,
    mu: MuTable,
    lambda: Matrix,
    b: Matrix,
    g: Matrix,
    spectrum: Spectrum,
    anchor_own: bool,
}

impl ConsensusDesign {
    pub fn build(graph: &DiGraph, dims: &[usize], mu: MuTable) -> Result<Self> {
        let n = graph.node_count();
        if dims.len() != n || mu.len() != n {
            return Err(Error::Dimension(format!(
                "graph has {n} nodes, {} sensor dimensions, {}x{0} mu table",
                dims.len(),
                mu.len()
            )));
        }
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::Dimension("every sensor needs at least one output".into()));
        }
        let r: usize = dims.iter().sum();
        let mut lambda = Matrix::zeros(n * r, n * r);
        for i in 0..n {
            let mut off = i * r;
            for (j, &rj) in dims.iter().enumerate() {
                for _ in 0..rj {
                    lambda[(off, off)] = mu.get(i, j);
                    off += 1;
                }
            }
        }
        let b = leader_selector(graph, dims);
        let g = Matrix::identity(n * r, n * r)
            - &lambda * (kron(&graph.laplacian(), &Matrix::identity(r, r)) + &b);
        let spectrum = Spectrum {
            radius: spectral_radius(&g)?,
            norm2: spectral_norm(&g),
        };
        let offsets = dims
            .iter()
            .scan(0, |acc, &d| {
                let start = *acc;
                *acc += d;
                Some(start)
            })
            .collect();
        Ok(Self {
            graph: graph.clone(),
            dims: dims.to_vec(),
            offsets,
            mu,
            lambda,
            b,
            g,
            spectrum,
            anchor_own: false,
        })
    }

    /// Non-standard extension: after every round, overwrite sensor `i`'s own
    /// channel with `y_i`. The closed-form `G` does not describe this mode.
    pub fn with_own_anchor(mut self, anchor: bool) -> Self {
        self.anchor_own = anchor;
        self
    }

    pub fn anchors_own_measurement(&self) -> bool {
        self.anchor_own
    }

    pub fn graph(&self) -> &DiGraph {
        &self.graph
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn mu(&self) -> &MuTable {
        &self.mu
    }

    pub fn lambda(&self) -> &Matrix {
        &self.lambda
    }

    pub fn b(&self) -> &Matrix {
        &self.b
    }

    /// The fusion matrix `G`.
    pub fn g(&self) -> &Matrix {
        &self.g
    }

    pub fn rho_g(&self) -> f64 {
        self.spectrum.radius
    }

    pub fn norm_g(&self) -> f64 {
        self.spectrum.norm2
    }

    pub fn node_count(&self) -> usize {
        self.dims.len()
    }

    /// `r = sum r_i`.
    pub fn meas_dim(&self) -> usize {
        self.dims.iter().sum()
    }

    /// Runs `steps` synchronous fusion rounds.
    ///
    /// `z0` stacks every sensor's r-vector (`N r` entries), `y` is the true
    /// stacked measurement (`r` entries). Each round reads only the previous
    /// iterate, so sensors within a round are independent.
    pub fn fuse(&self, z0: &Vector, y: &Vector, steps: usize) -> Result<Vector> {
        let n = self.node_count();
        let r = self.meas_dim();
        if z0.len() != n * r || y.len() != r {
            return Err(Error::Dimension(format!(
                "fusion expects z0 of length {} and y of length {r}, got {} and {}",
                n * r,
                z0.len(),
                y.len()
            )));
        }
        let mut z: Vec<Vector> = (0..n).map(|i| z0.rows(i * r, r).into_owned()).collect();
        for _ in 0..steps {
            let next: Vec<Vector> = (0..n).map(|i| self.sensor_round(i, &z, y)).collect();
            z = next;
        }
        let mut out = Vector::zeros(n * r);
        for (i, zi) in z.iter().enumerate() {
            out.rows_mut(i * r, r).copy_from(zi);
        }
        Ok(out)
    }

    /// Sensor `i`'s update from the previous round's estimates.
    fn sensor_round(&self, i: usize, z: &[Vector], y: &Vector) -> Vector {
        let mut innovation = Vector::zeros(z[i].len());
        for j in self.graph.in_neighbors(i) {
            innovation += &z[i] - &z[j];
        }
        let mut next = z[i].clone();
        for (ch, (&off, &rj)) in self.offsets.iter().zip(&self.dims).enumerate() {
            let mu = self.mu.get(i, ch);
            let pin = self.graph.a(i, ch);
            for q in off..off + rj {
                next[q] -= mu * (innovation[q] + pin * (z[i][q] - y[q]));
            }
            if self.anchor_own && ch == i {
                next.rows_mut(off, rj).copy_from(&y.rows(off, rj));
            }
        }
        next
    }
}

/// Free function form of [`ConsensusDesign::fuse`].
pub fn fuse_measurements(
    design: &ConsensusDesign,
    z0: &Vector,
    y: &Vector,
    steps: usize,
) -> Result<Vector> {
    design.fuse(z0, y, steps)
}

/// Norms entering the fusion-depth threshold.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityMargins {
    /// `||A - KCA||_2`
    pub closed_loop: f64,
    /// `||K||_2`
    pub gain: f64,
    /// `||CA||_2`
    pub ca: f64,
    /// `||G||_2`
    pub norm_g: f64,
}

impl StabilityMargins {
    pub fn new(design: &ConsensusDesign, k: &Matrix, c: &Matrix, a: &Matrix) -> Result<Self> {
        if k.nrows() != a.nrows() || k.ncols() != c.nrows() || c.ncols() != a.nrows() {
            return Err(Error::Dimension(format!(
                "K {:?}, C {:?}, A {:?} do not conform",
                k.shape(),
                c.shape(),
                a.shape()
            )));
        }
        let ca = c * a;
        Ok(Self {
            closed_loop: spectral_norm(&(a - k * &ca)),
            gain: spectral_norm(k),
            ca: spectral_norm(&ca),
            norm_g: design.norm_g(),
        })
    }

    /// `l0 = log_{||G||} [(1 - ||A - KCA||) / (||K|| ||CA||)]`. Any integer
    /// `l > l0` keeps the distributed error dynamics Schur stable. Negative
    /// values mean every `l >= 1` qualifies.
    pub fn l0(&self) -> Result<f64> {
        if self.norm_g >= 1.0 {
            return Err(Error::SpectralNorm(self.norm_g));
        }
        if self.closed_loop >= 1.0 {
            return Err(Error::NoStabilityMargin(self.closed_loop));
        }
        let ratio = (1.0 - self.closed_loop) / (self.gain * self.ca);
        if self.norm_g == 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        Ok(ratio.ln() / self.norm_g.ln())
    }
}

/// Lower bound `l0` on the fusion depth.
pub fn min_fusion_steps(design: &ConsensusDesign, k: &Matrix, c: &Matrix, a: &Matrix) -> Result<f64> {
    StabilityMargins::new(design, k, c, a)?.l0()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{mat_pow, matrix_from_rows, power_norm_bound};
    use proptest::prelude::*;

    fn two_node() -> ConsensusDesign {
        let g = DiGraph::complete(2).unwrap();
        let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
        ConsensusDesign::build(&g, &[1, 1], mu).unwrap()
    }

    #[test]
    fn distributed_mu_two_node() {
        let g = DiGraph::complete(2).unwrap();
        let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
        assert_eq!(mu.get(0, 0), 0.5);
        assert_eq!(mu.get(0, 1), 1.0 / 3.0);
        assert_eq!(mu.get(1, 0), 1.0 / 3.0);
        assert_eq!(mu.get(1, 1), 0.5);
        assert!(mu.within_distributed_bound(&g));
    }

    #[test]
    fn distributed_mu_three_cycle() {
        let g = DiGraph::ring(3).unwrap();
        let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
        for i in 0..3 {
            let pred = (i + 2) % 3;
            let other = (i + 1) % 3;
            assert_eq!(mu.get(i, i), 0.5);
            assert_eq!(mu.get(i, pred), 1.0 / 3.0);
            assert_eq!(mu.get(i, other), 0.5);
        }
    }

    #[test]
    fn distributed_mu_tracking_network() {
        let g = DiGraph::tracking_network();
        let edges = [(0, 1), (1, 2), (2, 3), (3, 4), (4, 0), (0, 2), (2, 4)];
        let mut indeg = [0usize; 5];
        for &(_, to) in &edges {
            indeg[to] += 1;
        }
        let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let a = if edges.contains(&(j, i)) { 1.0 } else { 0.0 };
                let expected = 1.0 / (indeg[i] as f64 + a + 1.0);
                assert_eq!(mu.get(i, j), expected);
                assert!([0.5, 1.0 / 3.0, 0.25].contains(&expected));
            }
        }
    }

    #[test]
    fn distributed_mu_at_boundary_still_contracts() {
        let g = DiGraph::tracking_network();
        let rule = DistributedMu {
            slack: 1.0,
            shift: 0.0,
        };
        let mu = design_mu_distributed(&g, rule).unwrap();
        for i in 0..5 {
            for j in 0..5 {
                let bound = 1.0 / (g.in_degree(i) as f64 + g.a(i, j));
                assert_eq!(mu.get(i, j), bound);
            }
        }
        let d = ConsensusDesign::build(&g, &[2; 5], mu).unwrap();
        assert!(d.rho_g() < 1.0);
        assert!(spectral_radius(d.g()).unwrap() < 1.0);
    }

    #[test]
    fn distributed_mu_rejects_disconnected() {
        let g = DiGraph::from_edges(2, &[(0, 1)]).unwrap();
        assert!(matches!(
            design_mu_distributed(&g, DistributedMu::default()),
            Err(Error::NotStronglyConnected)
        ));
    }

    #[test]
    fn unified_mu_two_node() {
        let g = DiGraph::complete(2).unwrap();
        let mu = design_mu_unified(&g, &[1, 1]).unwrap();
        let lb = matrix_from_rows(&[
            vec![1.0, 0.0, -1.0, 0.0],
            vec![0.0, 2.0, 0.0, -1.0],
            vec![-1.0, 0.0, 2.0, 0.0],
            vec![0.0, -1.0, 0.0, 1.0],
        ])
        .unwrap();
        // Symmetric: eigenvalues of [[1,-1],[-1,2]] are (3 ± sqrt 5)/2.
        let rho = (3.0 + 5f64.sqrt()) / 2.0;
        assert!((spectral_radius(&lb).unwrap() - rho).abs() < 1e-12);
        assert!((mu - 0.99 / rho).abs() < 1e-12);
        assert!((mu * spectral_radius(&pinned_laplacian(&g, &[1, 1])).unwrap() - 0.99).abs() < 1e-14);
    }

    #[test]
    fn unified_mu_complete_three() {
        let g = DiGraph::complete(3).unwrap();
        let mu = design_mu_unified(&g, &[1, 1, 1]).unwrap();
        let d = ConsensusDesign::build(&g, &[1, 1, 1], MuTable::uniform(3, mu).unwrap()).unwrap();
        assert!(d.rho_g() < 1.0);
    }

    #[test]
    fn unified_mu_rejects_single_node() {
        assert!(design_mu_unified(&DiGraph::empty(1).unwrap(), &[1]).is_err());
    }

    #[test]
    fn build_two_node_design() {
        let d = two_node();
        let third = 1.0 / 3.0;
        let expected = matrix_from_rows(&[
            vec![0.5, 0.0, 0.5, 0.0],
            vec![0.0, third, 0.0, third],
            vec![third, 0.0, third, 0.0],
            vec![0.0, 0.5, 0.0, 0.5],
        ])
        .unwrap();
        assert!((d.g() - &expected).abs().max() < 1e-15);
        assert_eq!(d.lambda().diagonal().as_slice(), &[0.5, third, third, 0.5]);
        assert_eq!(d.b().diagonal().as_slice(), &[0.0, 1.0, 1.0, 0.0]);
        assert!((d.rho_g() - 5.0 / 6.0).abs() < 1e-10);

        let sums: Vec<f64> = (0..4).map(|i| d.g().row(i).sum()).collect();
        assert!((sums[0] - 1.0).abs() < 1e-15);
        assert!((sums[1] - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn tiny_gains_leave_g_near_identity() {
        let g = DiGraph::complete(2).unwrap();
        let d = ConsensusDesign::build(&g, &[1, 1], MuTable::uniform(2, 1e-9).unwrap()).unwrap();
        assert!((d.g() - Matrix::identity(4, 4)).abs().max() < 1e-8);
        assert!(d.rho_g() < 1.0 && d.rho_g() > 1.0 - 1e-7);
    }

    #[test]
    fn build_rejects_mismatched_dims() {
        let g = DiGraph::complete(2).unwrap();
        let mu = MuTable::uniform(2, 0.1).unwrap();
        assert!(ConsensusDesign::build(&g, &[1], mu.clone()).is_err());
        assert!(ConsensusDesign::build(&g, &[1, 0], mu).is_err());
        assert!(MuTable::new(vec![vec![0.1, -0.1], vec![0.1, 0.1]]).is_err());
    }

    #[test]
    fn fuse_zero_steps_is_identity() {
        let d = two_node();
        let z0 = Vector::from_vec(vec![1.0, 2.0, 3.0, 4.0]);
        let y = Vector::from_vec(vec![-1.0, 0.5]);
        assert_eq!(d.fuse(&z0, &y, 0).unwrap(), z0);
    }

    #[test]
    fn fuse_consensual_truth_is_fixed_point() {
        let d = two_node();
        let y = Vector::from_vec(vec![-1.0, 0.5]);
        let z0 = Vector::from_vec(vec![-1.0, 0.5, -1.0, 0.5]);
        for steps in [1, 5, 50] {
            assert!((d.fuse(&z0, &y, steps).unwrap() - &z0).abs().max() < 1e-15);
        }
    }

    #[test]
    fn fuse_matches_matrix_power_two_node() {
        let d = two_node();
        let y = Vector::from_vec(vec![0.3, -1.7]);
        let z0 = Vector::from_vec(vec![2.0, -4.0, 1.5, 0.25]);
        let stacked_y = Vector::from_vec(vec![0.3, -1.7, 0.3, -1.7]);
        let eps0 = &z0 - &stacked_y;
        let g20 = mat_pow(d.g(), 20).unwrap();
        let via_matrix = &g20 * &eps0;
        let via_blocks = d.fuse(&z0, &y, 20).unwrap() - &stacked_y;
        assert!((&via_blocks - &via_matrix).abs().max() < 1e-12);
        let bound = power_norm_bound(d.g(), 20).unwrap();
        assert!(spectral_norm(&g20) <= bound);
        assert!(via_blocks.norm() <= spectral_norm(&g20) * eps0.norm() + 1e-15);
    }

    #[test]
    fn fuse_rejects_bad_lengths() {
        let d = two_node();
        assert!(d.fuse(&Vector::zeros(3), &Vector::zeros(2), 1).is_err());
    }

    #[test]
    fn own_anchor_pins_own_channel() {
        let d = two_node().with_own_anchor(true);
        let y = Vector::from_vec(vec![0.3, -1.7]);
        let z = d.fuse(&Vector::zeros(4), &y, 1).unwrap();
        assert_eq!(z[0], 0.3);
        assert_eq!(z[3], -1.7);
    }

    fn scalar_gain(q: f64) -> (Matrix, Matrix, Matrix) {
        // a = 0.9, C = [1; 1], R = I: clearing (1 + 2P) from the Riccati
        // equation leaves 2P^2 + (1 - a^2 - 2q)P - q = 0.
        let a2 = 0.81;
        let b = 1.0 - 2.0 * q - a2;
        let p = (-b + (b * b + 8.0 * q).sqrt()) / 4.0;
        let k = Matrix::from_row_slice(1, 2, &[p / (1.0 + 2.0 * p); 2]);
        let c = Matrix::from_element(2, 1, 1.0);
        let a = Matrix::from_element(1, 1, 0.9);
        (k, c, a)
    }

    #[test]
    fn l0_scalar_family_identity() {
        let d = two_node();
        let (k, c, a) = scalar_gain(1.0);
        let p = k[(0, 0)] / (1.0 - 2.0 * k[(0, 0)]);
        assert!((p - 1.2919976).abs() < 1e-6);
        let l0 = min_fusion_steps(&d, &k, &c, &a).unwrap();

        let closed = spectral_norm(&(&a - &k * &c * &a));
        let kn = spectral_norm(&k);
        let ca = spectral_norm(&(&c * &a));
        let ng = spectral_norm(d.g());
        assert!((ng.powf(l0) * kn * ca - (1.0 - closed)).abs() < 1e-9);
        assert!(l0 < 0.0);
    }

    #[test]
    fn l0_deadbeat_specialization() {
        let d = two_node();
        let m = StabilityMargins {
            closed_loop: 0.0,
            gain: 2.0,
            ca: 3.0,
            norm_g: d.norm_g(),
        };
        let expected = (1.0f64 / 6.0).ln() / d.norm_g().ln();
        assert!((m.l0().unwrap() - expected).abs() < 1e-12);
    }

    #[test]
    fn l0_grows_with_process_noise() {
        let d = two_node();
        let l0s: Vec<f64> = [0.5, 1.0, 2.0, 4.0]
            .iter()
            .map(|&q| {
                let (k, c, a) = scalar_gain(q);
                min_fusion_steps(&d, &k, &c, &a).unwrap()
            })
            .collect();
        assert!(l0s.windows(2).all(|w| w[1] >= w[0]), "{l0s:?}");
    }

    #[test]
    fn l0_errors() {
        let m = StabilityMargins {
            closed_loop: 0.5,
            gain: 1.0,
            ca: 1.0,
            norm_g: 1.0,
        };
        assert!(matches!(m.l0(), Err(Error::SpectralNorm(_))));
        let m = StabilityMargins {
            closed_loop: 1.0,
            norm_g: 0.5,
            ..m
        };
        assert!(matches!(m.l0(), Err(Error::NoStabilityMargin(_))));
    }

    fn strongly_connected() -> impl Strategy<Value = (DiGraph, Vec<usize>)> {
        (2usize..=6).prop_flat_map(|n| {
            (
                prop::collection::vec(prop::bool::weighted(0.3), n * n),
                prop::collection::vec(1usize..=2, n),
                Just(n),
            )
                .prop_map(|(bits, dims, n)| {
                    let mut g = DiGraph::ring(n).unwrap();
                    for i in 0..n {
                        for j in 0..n {
                            if i != j && bits[i * n + j] {
                                g.add_edge(i, j).unwrap();
                            }
                        }
                    }
                    (g, dims)
                })
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn distributed_design_contracts((g, dims) in strongly_connected()) {
            let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
            prop_assert!(mu.within_distributed_bound(&g));
            let d = ConsensusDesign::build(&g, &dims, mu.clone()).unwrap();
            prop_assert!(d.g().iter().all(|&v| v >= 0.0));
            prop_assert!(d.rho_g() < 1.0);
            let r: usize = dims.iter().sum();
            for i in 0..g.node_count() {
                let mut row = i * r;
                for (ch, &rj) in dims.iter().enumerate() {
                    for _ in 0..rj {
                        let expected = 1.0 - mu.get(i, ch) * g.a(i, ch);
                        prop_assert!((d.g().row(row).sum() - expected).abs() < 1e-12);
                        prop_assert!(d.g().row(row).sum() <= 1.0 + 1e-15);
                        row += 1;
                    }
                }
            }
        }

        #[test]
        fn pinned_channels_are_idd((g, dims) in strongly_connected()) {
            for ch in 0..g.node_count() {
                prop_assert!(crate::graph::check_idd(&pinned_channel_laplacian(&g, ch)).unwrap());
            }
            // The stacked matrix decouples into one block per measurement
            // component, so it is reducible once there are two or more.
            let full = pinned_laplacian(&g, &dims);
            prop_assert!(!crate::graph::check_idd(&full).unwrap());
            prop_assert!(full.clone().lu().is_invertible());
        }

        #[test]
        fn fusion_is_linear_in_error((g, dims) in strongly_connected(), seed in 0u64..1000, steps in 0usize..15) {
            let mu = design_mu_distributed(&g, DistributedMu::default()).unwrap();
            let d = ConsensusDesign::build(&g, &dims, mu).unwrap();
            let r: usize = dims.iter().sum();
            let n = g.node_count();
            let y = Vector::from_fn(r, |i, _| ((seed + i as u64) as f64 * 0.37).sin());
            let z0 = Vector::from_fn(n * r, |i, _| ((seed * 7 + i as u64) as f64 * 1.3).cos());
            let stacked = Vector::from_fn(n * r, |i, _| y[i % r]);
            let expected = mat_pow(d.g(), steps).unwrap() * (&z0 - &stacked);
            let got = d.fuse(&z0, &y, steps).unwrap() - stacked;
            prop_assert!((got - expected).abs().max() < 1e-12);
        }
    }
}
