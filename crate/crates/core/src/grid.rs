//! Transmission network model: per-unit bases, resistive-inductive lines,
//! the weighted Laplacian and the analytic small-signal / Thevenin relations
//! used as ground truth.
//!
//! All complex-coordinate formulas take the *normalized* frequency
//! `w = omega / omega_base`; the `+ j` term in the line admittance
//! `gamma / (rho + j (w + 1))` is the nominal frequency of the rotating frame.

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Nominal angular frequency of a 50 Hz grid (rad/s).
pub const OMEGA_B: f64 = 100.0 * std::f64::consts::PI;

/// Per-unit base quantities.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PerUnitBase {
    /// Base power (VA).
    pub s_b: f64,
    /// Base angular frequency (rad/s).
    pub omega_b: f64,
    /// Base voltage (V).
    pub v_b: f64,
    /// Base impedance (Ohm).
    pub z_b: f64,
    /// Base inductance (H).
    pub l_b: f64,
    /// Base capacitance (F).
    pub c_b: f64,
}

impl PerUnitBase {
    /// The bases of the 5-converter reference system (rounded published values).
    pub fn reference() -> Self {
        Self {
            s_b: 10e3,
            omega_b: OMEGA_B,
            v_b: 380.0,
            z_b: 21.67,
            l_b: 0.067,
            c_b: 150e-6,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("s_b", self.s_b),
            ("omega_b", self.omega_b),
            ("v_b", self.v_b),
            ("z_b", self.z_b),
            ("l_b", self.l_b),
            ("c_b", self.c_b),
        ];
        for (name, value) in fields {
            if !(value.is_finite() && value > 0.0) {
                return Err(Error::Config(format!(
                    "per-unit base {name} must be positive, got {value}"
                )));
            }
        }
        Ok(())
    }

    /// Relative deviation of `z_b` from `v_b^2 / s_b`.
    ///
    /// Rounded tables rarely satisfy the identity exactly, so this is reported
    /// rather than enforced.
    pub fn impedance_consistency(&self) -> f64 {
        let expected = self.v_b * self.v_b / self.s_b;
        (self.z_b - expected).abs() / expected
    }

    /// True when `z_b = v_b^2 / s_b` holds to 1e-9 relative. Logs a warning otherwise.
    pub fn check_consistency(&self) -> bool {
        let dev = self.impedance_consistency();
        if dev > 1e-9 {
            log::warn!(
                "per-unit bases inconsistent: z_b deviates {:.3}% from v_b^2/s_b",
                100.0 * dev
            );
            false
        } else {
            true
        }
    }

    /// Frequency droop gain in rad/s per W converted to a per-unit gain.
    pub fn frequency_droop_to_pu(&self, k_rad_per_watt: f64) -> f64 {
        k_rad_per_watt * self.s_b / self.omega_b
    }

    /// Voltage droop gain in V per var converted to a per-unit gain.
    pub fn voltage_droop_to_pu(&self, k_volt_per_var: f64) -> f64 {
        k_volt_per_var * self.s_b / self.v_b
    }
}

impl Default for PerUnitBase {
    fn default() -> Self {
        Self::reference()
    }
}

/// Series resistance and inductance of a line, in p.u.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LineParams {
    pub r: f64,
    pub l: f64,
}

impl LineParams {
    pub fn new(r: f64, l: f64) -> Result<Self> {
        if !(r.is_finite() && r > 0.0 && l.is_finite() && l > 0.0) {
            return Err(Error::Config(format!(
                "line parameters must be positive (r = {r}, l = {l})"
            )));
        }
        let line = Self { r, l };
        if line.rho() > 1.0 {
            log::warn!("line r/l ratio {:.3} exceeds 1", line.rho());
        }
        Ok(line)
    }

    /// Line susceptance scale `1 / l`.
    pub fn gamma(&self) -> f64 {
        1.0 / self.l
    }

    /// Resistance-to-inductance ratio `r / l`.
    pub fn rho(&self) -> f64 {
        self.r / self.l
    }

    /// Complex-coordinate admittance at normalized frequency `w`.
    pub fn admittance(&self, w: f64) -> Complex64 {
        line_admittance(self.gamma(), self.rho(), w)
    }
}

/// `gamma / (rho + j (w + 1))`.
pub fn line_admittance(gamma: f64, rho: f64, w: f64) -> Complex64 {
    Complex64::new(gamma, 0.0) / Complex64::new(rho, w + 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Edge {
    pub i: usize,
    pub j: usize,
    pub line: LineParams,
}

/// An undirected, connected resistive-inductive network of `n` converters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkTopology {
    n: usize,
    edges: Vec<Edge>,
}

impl NetworkTopology {
    /// Validates and normalizes the edge list (`i < j`).
    pub fn new(n: usize, edges: Vec<Edge>) -> Result<Self> {
        if n == 0 {
            return Err(Error::Config("network needs at least one node".into()));
        }
        let mut normalized: Vec<Edge> = Vec::with_capacity(edges.len());
        for e in edges {
            if e.i == e.j {
                return Err(Error::Config(format!("self-loop at node {}", e.i)));
            }
            if e.i >= n || e.j >= n {
                return Err(Error::Config(format!(
                    "edge ({}, {}) references a node outside 0..{n}",
                    e.i, e.j
                )));
            }
            let line = LineParams::new(e.line.r, e.line.l)?;
            let (i, j) = if e.i < e.j { (e.i, e.j) } else { (e.j, e.i) };
            if normalized.iter().any(|x| x.i == i && x.j == j) {
                return Err(Error::Config(format!("duplicate edge ({i}, {j})")));
            }
            normalized.push(Edge { i, j, line });
        }

        let components = connected_components(n, &normalized);
        if components.len() > 1 {
            let listing = components
                .iter()
                .map(|c| format!("{c:?}"))
                .collect::<Vec<_>>()
                .join(", ");
            return Err(Error::Config(format!(
                "network is disconnected; components: {listing}"
            )));
        }
        Ok(Self {
            n,
            edges: normalized,
        })
    }

    /// Complete graph with the given per-edge lines, in `(0,1), (0,2), ...` order.
    pub fn complete(n: usize, lines: &[LineParams]) -> Result<Self> {
        let pairs = n * n.saturating_sub(1) / 2;
        if lines.len() != pairs {
            return Err(Error::Config(format!(
                "complete graph on {n} nodes needs {pairs} lines, got {}",
                lines.len()
            )));
        }
        let mut edges = Vec::with_capacity(pairs);
        let mut it = lines.iter();
        for i in 0..n {
            for j in (i + 1)..n {
                edges.push(Edge {
                    i,
                    j,
                    line: *it.next().expect("length checked"),
                });
            }
        }
        Self::new(n, edges)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Line between `i` and `j` regardless of argument order.
    pub fn line(&self, i: usize, j: usize) -> Option<&LineParams> {
        let (a, b) = if i < j { (i, j) } else { (j, i) };
        self.edges
            .iter()
            .find(|e| e.i == a && e.j == b)
            .map(|e| &e.line)
    }

    /// Neighbors of `i` with the connecting line, in edge order.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = (usize, &LineParams)> + '_ {
        self.edges.iter().filter_map(move |e| {
            if e.i == i {
                Some((e.j, &e.line))
            } else if e.j == i {
                Some((e.i, &e.line))
            } else {
                None
            }
        })
    }

    /// Sum of `gamma_ij` over the neighbors of `i`.
    pub fn degree_gamma(&self, i: usize) -> f64 {
        self.neighbors(i).map(|(_, l)| l.gamma()).sum()
    }
}

fn connected_components(n: usize, edges: &[Edge]) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..n).collect();
    fn find(parent: &mut [usize], mut x: usize) -> usize {
        while parent[x] != x {
            parent[x] = parent[parent[x]];
            x = parent[x];
        }
        x
    }
    for e in edges {
        let a = find(&mut parent, e.i);
        let b = find(&mut parent, e.j);
        if a != b {
            parent[a.max(b)] = a.min(b);
        }
    }
    let mut groups: Vec<Vec<usize>> = Vec::new();
    let mut root_index: Vec<Option<usize>> = vec![None; n];
    for v in 0..n {
        let r = find(&mut parent, v);
        match root_index[r] {
            Some(g) => groups[g].push(v),
            None => {
                root_index[r] = Some(groups.len());
                groups.push(vec![v]);
            }
        }
    }
    groups
}

/// Weighted Laplacian with `gamma_ij = 1 / l_ij` weights.
pub fn build_laplacian(topology: &NetworkTopology) -> DMatrix<f64> {
    let n = topology.n();
    let mut lap = DMatrix::zeros(n, n);
    for e in topology.edges() {
        let g = e.line.gamma();
        lap[(e.i, e.i)] += g;
        lap[(e.j, e.j)] += g;
        lap[(e.i, e.j)] -= g;
        lap[(e.j, e.i)] -= g;
    }
    lap
}

/// One line incident to the node of interest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NeighborLine {
    pub node: usize,
    pub gamma: f64,
    pub rho: f64,
}

/// The lines seen from one PCC; defines the true equivalent admittance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EquivalentAdmittanceTruth {
    pub node: usize,
    pub lines: Vec<NeighborLine>,
}

impl EquivalentAdmittanceTruth {
    pub fn from_topology(topology: &NetworkTopology, node: usize) -> Self {
        let lines = topology
            .neighbors(node)
            .map(|(j, l)| NeighborLine {
                node: j,
                gamma: l.gamma(),
                rho: l.rho(),
            })
            .collect();
        Self { node, lines }
    }

    /// A single equivalent line with the given `(rho, gamma)`.
    pub fn homogeneous(rho: f64, gamma: f64) -> Self {
        Self {
            node: 0,
            lines: vec![NeighborLine {
                node: 1,
                gamma,
                rho,
            }],
        }
    }

    pub fn total_gamma(&self) -> f64 {
        self.lines.iter().map(|l| l.gamma).sum()
    }

    /// `(rho, gamma_i)` when every incident line shares one `rho`.
    pub fn homogeneous_pair(&self) -> Option<(f64, f64)> {
        let first = self.lines.first()?.rho;
        self.lines
            .iter()
            .all(|l| (l.rho - first).abs() <= 1e-12 * first.abs().max(1.0))
            .then(|| (first, self.total_gamma()))
    }

    /// Gamma-weighted mean of the line ratios; the best single-`rho` summary.
    pub fn mean_rho(&self) -> f64 {
        self.lines.iter().map(|l| l.gamma * l.rho).sum::<f64>() / self.total_gamma()
    }
}

/// `Y_i(jw) = sum_j gamma_ij / (rho_ij + j (w + 1))` at normalized frequency `w`.
pub fn true_equivalent_admittance(truth: &EquivalentAdmittanceTruth, w: f64) -> Complex64 {
    truth
        .lines
        .iter()
        .map(|l| line_admittance(l.gamma, l.rho, w))
        .sum()
}

/// Small-signal current injections `di_i = sum_j y_ij(jw) (dv_i - dv_j)`.
pub fn small_signal_response(
    topology: &NetworkTopology,
    dv: &[Complex64],
    w: f64,
) -> Result<Vec<Complex64>> {
    if dv.len() != topology.n() {
        return Err(Error::Argument(format!(
            "voltage vector has length {}, network has {} nodes",
            dv.len(),
            topology.n()
        )));
    }
    let mut di = vec![Complex64::new(0.0, 0.0); topology.n()];
    for e in topology.edges() {
        let flow = e.line.admittance(w) * (dv[e.i] - dv[e.j]);
        di[e.i] += flow;
        di[e.j] -= flow;
    }
    Ok(di)
}

/// Equivalent grid voltage seen from the node of `truth`:
/// `(1 / Y_i) sum_j y_ij(jw) dv_j`. `dv_neighbors` is aligned with `truth.lines`.
///
/// For homogeneous lines this is the `gamma`-weighted mean of the neighbors.
pub fn true_equivalent_voltage(
    truth: &EquivalentAdmittanceTruth,
    dv_neighbors: &[Complex64],
    w: f64,
) -> Result<Complex64> {
    if dv_neighbors.len() != truth.lines.len() {
        return Err(Error::Argument(format!(
            "{} neighbor voltages supplied for {} lines",
            dv_neighbors.len(),
            truth.lines.len()
        )));
    }
    let mut weighted = Complex64::new(0.0, 0.0);
    for (l, v) in truth.lines.iter().zip(dv_neighbors) {
        weighted += line_admittance(l.gamma, l.rho, w) * v;
    }
    Ok(weighted / true_equivalent_admittance(truth, w))
}
