//! Network model, AC power flow and voltage-violation penalty.
//!
//! Buses are indexed `0..N`. Exactly one bus is the slack (fixed magnitude, zero
//! angle); every other bus is a PQ load bus whose net injection is given. All
//! quantities are per unit on the network's `s_base_kva` / `v_base_kv`.

use std::path::Path;

use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;
pub const DEFAULT_MAX_ITER: usize = 30;

#[derive(Debug, Error)]
pub enum GridError {
    #[error("duplicate bus id {0}")]
    DuplicateBus(usize),
    #[error("bus ids must be contiguous 0..{n}, found id {id}")]
    NonContiguousBus { id: usize, n: usize },
    #[error("network must have exactly one slack bus, found {0}")]
    SlackCount(usize),
    #[error("branch {branch} references missing bus {bus}")]
    MissingBus { branch: usize, bus: usize },
    #[error("branch {0} connects a bus to itself")]
    SelfLoop(usize),
    #[error("branch {0} has zero impedance")]
    ZeroImpedance(usize),
    #[error("branch {0} has negative resistance")]
    NegativeResistance(usize),
    #[error("invalid value in field `{field}`: {reason}")]
    InvalidField { field: String, reason: String },
    #[error("network is islanded: bus {0} is not connected to the slack bus")]
    Islanded(usize),
    #[error("expected {expected} bus injections, got {got}")]
    InjectionLength { expected: usize, got: usize },
    #[error("power-flow tolerance must be positive, got {0}")]
    InvalidTolerance(f64),
    #[error("singular Jacobian at Newton iteration {iteration}")]
    SingularJacobian { iteration: usize },
    #[error("power-flow solution did not converge")]
    Unconverged,
    #[error("voltage band must satisfy v_lo < v_hi (got {lo} >= {hi})")]
    InvalidBand { lo: f64, hi: f64 },
    #[error("failed to parse network file: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("failed to read network file {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BusKind {
    Slack,
    Load,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BusSpec {
    pub id: usize,
    pub kind: BusKind,
    #[serde(default)]
    pub shunt_g: f64,
    #[serde(default)]
    pub shunt_b: f64,
}

impl BusSpec {
    pub fn load(id: usize) -> Self {
        Self { id, kind: BusKind::Load, shunt_g: 0.0, shunt_b: 0.0 }
    }

    pub fn slack(id: usize) -> Self {
        Self { id, kind: BusKind::Slack, shunt_g: 0.0, shunt_b: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BranchSpec {
    #[serde(rename = "from")]
    pub from_bus: usize,
    #[serde(rename = "to")]
    pub to_bus: usize,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b_half: f64,
}

impl BranchSpec {
    pub fn new(from_bus: usize, to_bus: usize, r: f64, x: f64) -> Self {
        Self { from_bus, to_bus, r, x, b_half: 0.0 }
    }

    pub fn series_admittance(&self) -> Complex64 {
        Complex64::new(1.0, 0.0) / Complex64::new(self.r, self.x)
    }
}

/// On-disk network description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NetworkFile {
    pub s_base_kva: f64,
    pub v_base_kv: f64,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
}

/// Immutable network with its bus admittance matrix.
#[derive(Debug, Clone)]
pub struct NetworkModel {
    buses: Vec<BusSpec>,
    branches: Vec<BranchSpec>,
    y: DMatrix<Complex64>,
    slack: usize,
    pub v_base_kv: f64,
    pub s_base_kva: f64,
}

/// Builds the network and its admittance matrix from bus and branch lists.
///
/// Buses may be given in any order but their ids must cover `0..N` exactly once.
pub fn build_admittance(
    buses: Vec<BusSpec>,
    branches: Vec<BranchSpec>,
) -> Result<NetworkModel, GridError> {
    let n = buses.len();
    let mut seen = vec![false; n];
    for bus in &buses {
        if bus.id >= n {
            return Err(GridError::NonContiguousBus { id: bus.id, n });
        }
        if seen[bus.id] {
            return Err(GridError::DuplicateBus(bus.id));
        }
        seen[bus.id] = true;
        if !bus.shunt_g.is_finite() || !bus.shunt_b.is_finite() {
            return Err(GridError::InvalidField {
                field: format!("buses[{}].shunt", bus.id),
                reason: "must be finite".into(),
            });
        }
    }
    let mut buses = buses;
    buses.sort_by_key(|b| b.id);

    let slacks: Vec<usize> =
        buses.iter().filter(|b| b.kind == BusKind::Slack).map(|b| b.id).collect();
    if slacks.len() != 1 {
        return Err(GridError::SlackCount(slacks.len()));
    }

    let mut y = DMatrix::<Complex64>::zeros(n, n);
    for bus in &buses {
        y[(bus.id, bus.id)] += Complex64::new(bus.shunt_g, bus.shunt_b);
    }
    for (idx, br) in branches.iter().enumerate() {
        for bus in [br.from_bus, br.to_bus] {
            if bus >= n {
                return Err(GridError::MissingBus { branch: idx, bus });
            }
        }
        if br.from_bus == br.to_bus {
            return Err(GridError::SelfLoop(idx));
        }
        if !(br.r.is_finite() && br.x.is_finite() && br.b_half.is_finite()) {
            return Err(GridError::InvalidField {
                field: format!("branches[{idx}]"),
                reason: "r, x and b_half must be finite".into(),
            });
        }
        if br.r < 0.0 {
            return Err(GridError::NegativeResistance(idx));
        }
        if br.r == 0.0 && br.x == 0.0 {
            return Err(GridError::ZeroImpedance(idx));
        }
        let ys = br.series_admittance();
        let charging = Complex64::new(0.0, br.b_half);
        let (f, t) = (br.from_bus, br.to_bus);
        y[(f, f)] += ys + charging;
        y[(t, t)] += ys + charging;
        y[(f, t)] -= ys;
        y[(t, f)] -= ys;
    }

    Ok(NetworkModel { buses, branches, y, slack: slacks[0], v_base_kv: 0.0, s_base_kva: 0.0 })
}

impl NetworkModel {
    pub fn from_file(file: NetworkFile) -> Result<Self, GridError> {
        for (field, value) in [("s_base_kva", file.s_base_kva), ("v_base_kv", file.v_base_kv)] {
            if !(value.is_finite() && value > 0.0) {
                return Err(GridError::InvalidField {
                    field: field.into(),
                    reason: format!("must be positive, got {value}"),
                });
            }
        }
        let mut net = build_admittance(file.buses, file.branches)?;
        net.s_base_kva = file.s_base_kva;
        net.v_base_kv = file.v_base_kv;
        net.check_connected()?;
        Ok(net)
    }

    pub fn from_json_str(json: &str) -> Result<Self, GridError> {
        Self::from_file(serde_json::from_str(json)?)
    }

    pub fn from_path(path: impl AsRef<Path>) -> Result<Self, GridError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| GridError::Io { path: path.display().to_string(), source })?;
        Self::from_json_str(&text)
    }

    pub fn to_file(&self) -> NetworkFile {
        NetworkFile {
            s_base_kva: self.s_base_kva,
            v_base_kv: self.v_base_kv,
            buses: self.buses.clone(),
            branches: self.branches.clone(),
        }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn slack(&self) -> usize {
        self.slack
    }

    pub fn buses(&self) -> &[BusSpec] {
        &self.buses
    }

    pub fn branches(&self) -> &[BranchSpec] {
        &self.branches
    }

    pub fn admittance(&self) -> &DMatrix<Complex64> {
        &self.y
    }

    /// Converts kW (or kVAr) to per unit on this network's power base.
    pub fn to_pu(&self, kw: f64) -> f64 {
        kw / self.s_base_kva
    }

    /// Fails with [`GridError::Islanded`] if some bus cannot reach the slack.
    pub fn check_connected(&self) -> Result<(), GridError> {
        let n = self.n_buses();
        let mut adj = vec![Vec::new(); n];
        for br in &self.branches {
            adj[br.from_bus].push(br.to_bus);
            adj[br.to_bus].push(br.from_bus);
        }
        let mut seen = vec![false; n];
        let mut stack = vec![self.slack];
        seen[self.slack] = true;
        while let Some(k) = stack.pop() {
            for &j in &adj[k] {
                if !seen[j] {
                    seen[j] = true;
                    stack.push(j);
                }
            }
        }
        match seen.iter().position(|s| !s) {
            Some(bus) => Err(GridError::Islanded(bus)),
            None => Ok(()),
        }
    }

    /// Complex power injections `S_k = V_k conj(sum_j Y_kj V_j)` at the given polar voltages.
    pub fn bus_powers(&self, v_mag: &[f64], v_ang: &[f64]) -> Vec<Complex64> {
        let n = self.n_buses();
        let v: Vec<Complex64> =
            v_mag.iter().zip(v_ang).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        (0..n)
            .map(|k| {
                let current: Complex64 = (0..n).map(|j| self.y[(k, j)] * v[j]).sum();
                v[k] * current.conj()
            })
            .collect()
    }

    /// Largest absolute real/reactive power residual over the non-slack buses.
    pub fn max_mismatch(&self, v_mag: &[f64], v_ang: &[f64], injections: &[(f64, f64)]) -> f64 {
        self.bus_powers(v_mag, v_ang)
            .iter()
            .enumerate()
            .filter(|(k, _)| *k != self.slack)
            .map(|(k, s)| (injections[k].0 - s.re).abs().max((injections[k].1 - s.im).abs()))
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerFlowSolution {
    pub v_mag: Vec<f64>,
    pub v_ang: Vec<f64>,
    pub mismatch: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// Newton-Raphson solution of the polar bus-injection equations.
///
/// `injections[k] = (p_k, q_k)` is the net injection in per unit (generation
/// positive). The slack entry is ignored. Starts flat at `|V| = slack_v`, `θ = 0`.
/// Non-convergence is reported through `converged = false`; a singular Jacobian
/// is an error.
pub fn solve_power_flow(
    net: &NetworkModel,
    injections: &[(f64, f64)],
    slack_v: f64,
    tol: f64,
    max_iter: usize,
) -> Result<PowerFlowSolution, GridError> {
    let n = net.n_buses();
    if injections.len() != n {
        return Err(GridError::InjectionLength { expected: n, got: injections.len() });
    }
    if !(tol > 0.0) {
        return Err(GridError::InvalidTolerance(tol));
    }
    let slack = net.slack();
    let pq: Vec<usize> = (0..n).filter(|&k| k != slack).collect();
    let m = pq.len();

    let mut v_mag = vec![slack_v; n];
    let mut v_ang = vec![0.0; n];
    let y = net.admittance();

    let mut iterations = 0;
    loop {
        let s = net.bus_powers(&v_mag, &v_ang);
        let mut rhs = DVector::<f64>::zeros(2 * m);
        let mut mismatch = 0.0_f64;
        for (row, &k) in pq.iter().enumerate() {
            let dp = injections[k].0 - s[k].re;
            let dq = injections[k].1 - s[k].im;
            rhs[row] = dp;
            rhs[m + row] = dq;
            mismatch = mismatch.max(dp.abs()).max(dq.abs());
        }
        if !mismatch.is_finite() {
            return Ok(PowerFlowSolution { v_mag, v_ang, mismatch, iterations, converged: false });
        }
        if mismatch < tol {
            return Ok(PowerFlowSolution { v_mag, v_ang, mismatch, iterations, converged: true });
        }
        if iterations >= max_iter {
            return Ok(PowerFlowSolution { v_mag, v_ang, mismatch, iterations, converged: false });
        }

        // Columns: [dθ for pq buses | d|V| for pq buses]; rows: [P rows | Q rows].
        let mut jac = DMatrix::<f64>::zeros(2 * m, 2 * m);
        for (row, &k) in pq.iter().enumerate() {
            let vk = v_mag[k];
            let (pk, qk) = (s[k].re, s[k].im);
            let gkk = y[(k, k)].re;
            let bkk = y[(k, k)].im;
            for (col, &j) in pq.iter().enumerate() {
                if j == k {
                    jac[(row, col)] = -qk - bkk * vk * vk;
                    jac[(row, m + col)] = pk / vk + gkk * vk;
                    jac[(m + row, col)] = pk - gkk * vk * vk;
                    jac[(m + row, m + col)] = qk / vk - bkk * vk;
                } else {
                    let (g, b) = (y[(k, j)].re, y[(k, j)].im);
                    if g == 0.0 && b == 0.0 {
                        continue;
                    }
                    let vj = v_mag[j];
                    let (sin, cos) = (v_ang[k] - v_ang[j]).sin_cos();
                    let a = g * sin - b * cos;
                    let c = g * cos + b * sin;
                    jac[(row, col)] = vk * vj * a;
                    jac[(row, m + col)] = vk * c;
                    jac[(m + row, col)] = -vk * vj * c;
                    jac[(m + row, m + col)] = vk * a;
                }
            }
        }

        let step = jac
            .lu()
            .solve(&rhs)
            .filter(|dx| dx.iter().all(|v| v.is_finite()))
            .ok_or(GridError::SingularJacobian { iteration: iterations })?;
        for (idx, &k) in pq.iter().enumerate() {
            v_ang[k] += step[idx];
            v_mag[k] += step[m + idx];
        }
        iterations += 1;
    }
}

/// Per-bus band deviation `max(0, v - v_hi) + max(0, v_lo - v)`.
pub fn band_deviation(v: f64, v_lo: f64, v_hi: f64) -> f64 {
    (v - v_hi).max(0.0) + (v_lo - v).max(0.0)
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoltageViolation {
    pub per_bus: Vec<f64>,
    /// `-lambda * sum(per_bus)`, never positive.
    pub penalty: f64,
}

impl VoltageViolation {
    pub fn total_deviation(&self) -> f64 {
        self.per_bus.iter().sum()
    }

    /// Penalty charged when the power flow fails: every bus counts as off by the full band width.
    pub fn maximal(n_buses: usize, v_lo: f64, v_hi: f64, lambda: f64) -> Self {
        let per_bus = vec![v_hi - v_lo; n_buses];
        let penalty = -lambda * per_bus.iter().sum::<f64>();
        Self { per_bus, penalty }
    }
}

/// System voltage-violation penalty over all buses, slack included.
pub fn voltage_violation(
    sol: &PowerFlowSolution,
    v_lo: f64,
    v_hi: f64,
    lambda: f64,
) -> Result<VoltageViolation, GridError> {
    if !sol.converged {
        return Err(GridError::Unconverged);
    }
    if !(v_lo < v_hi) {
        return Err(GridError::InvalidBand { lo: v_lo, hi: v_hi });
    }
    let per_bus: Vec<f64> = sol.v_mag.iter().map(|&v| band_deviation(v, v_lo, v_hi)).collect();
    let penalty = -lambda * per_bus.iter().sum::<f64>();
    Ok(VoltageViolation { per_bus, penalty })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn c(re: f64, im: f64) -> Complex64 {
        Complex64::new(re, im)
    }

    fn two_bus() -> NetworkModel {
        build_admittance(
            vec![BusSpec::slack(0), BusSpec::load(1)],
            vec![BranchSpec::new(0, 1, 0.0, 0.1)],
        )
        .unwrap()
    }

    #[test]
    fn two_bus_admittance() {
        let net = two_bus();
        let y = net.admittance();
        assert!((y[(0, 0)] - c(0.0, -10.0)).norm() < 1e-12);
        assert!((y[(0, 1)] - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y[(1, 0)] - c(0.0, 10.0)).norm() < 1e-12);
        assert!((y[(1, 1)] - c(0.0, -10.0)).norm() < 1e-12);
    }

    #[test]
    fn single_bus_is_zero() {
        let net = build_admittance(vec![BusSpec::slack(0)], vec![]).unwrap();
        assert_eq!(net.admittance()[(0, 0)], c(0.0, 0.0));
    }

    #[test]
    fn radial_three_bus_structure() {
        let net = build_admittance(
            vec![BusSpec::slack(0), BusSpec::load(1), BusSpec::load(2)],
            vec![BranchSpec::new(0, 1, 0.0, 0.1), BranchSpec::new(1, 2, 0.0, 0.1)],
        )
        .unwrap();
        let y = net.admittance();
        assert!((y[(1, 1)] - c(0.0, -20.0)).norm() < 1e-12);
        assert_eq!(y[(0, 2)], c(0.0, 0.0));
    }

    #[test]
    fn shunt_and_charging_on_diagonal() {
        let mut bus = BusSpec::load(1);
        bus.shunt_b = 0.05;
        let mut br = BranchSpec::new(0, 1, 0.01, 0.1);
        br.b_half = 0.002;
        let net = build_admittance(vec![BusSpec::slack(0), bus], vec![br.clone()]).unwrap();
        let y = net.admittance();
        // row sums equal total shunt (shunt plus charging)
        let row1 = y[(1, 0)] + y[(1, 1)];
        assert!((row1 - c(0.0, 0.052)).norm() < 1e-12);
        let row0 = y[(0, 0)] + y[(0, 1)];
        assert!((row0 - c(0.0, 0.002)).norm() < 1e-12);
    }

    #[test]
    fn admittance_errors() {
        let dup = build_admittance(vec![BusSpec::slack(0), BusSpec::load(0)], vec![]);
        assert!(matches!(dup, Err(GridError::DuplicateBus(0))));

        let missing = build_admittance(
            vec![BusSpec::slack(0), BusSpec::load(1)],
            vec![BranchSpec::new(0, 5, 0.0, 0.1)],
        );
        assert!(matches!(missing, Err(GridError::MissingBus { branch: 0, bus: 5 })));

        let zero = build_admittance(
            vec![BusSpec::slack(0), BusSpec::load(1)],
            vec![BranchSpec::new(0, 1, 0.0, 0.0)],
        );
        assert!(matches!(zero, Err(GridError::ZeroImpedance(0))));

        let two_slack = build_admittance(vec![BusSpec::slack(0), BusSpec::slack(1)], vec![]);
        assert!(matches!(two_slack, Err(GridError::SlackCount(2))));

        let gap = build_admittance(vec![BusSpec::slack(0), BusSpec::load(2)], vec![]);
        assert!(matches!(gap, Err(GridError::NonContiguousBus { id: 2, n: 2 })));
    }

    #[test]
    fn islanded_network_rejected() {
        let file = NetworkFile {
            s_base_kva: 1000.0,
            v_base_kv: 4.16,
            buses: vec![BusSpec::slack(0), BusSpec::load(1)],
            branches: vec![],
        };
        assert!(matches!(NetworkModel::from_file(file), Err(GridError::Islanded(1))));
    }

    #[test]
    fn zero_injection_is_flat() {
        let net = two_bus();
        let sol = solve_power_flow(&net, &[(0.0, 0.0); 2], 1.0, 1e-8, 30).unwrap();
        assert!(sol.converged);
        assert!(sol.iterations <= 1);
        assert!(sol.v_mag.iter().all(|&v| v == 1.0));
        assert!(sol.v_ang.iter().all(|&a| a == 0.0));
    }

    #[test]
    fn two_bus_load_resubstitutes() {
        let net = two_bus();
        let inj = [(0.0, 0.0), (-0.1, 0.0)];
        let sol = solve_power_flow(&net, &inj, 1.0, 1e-10, 30).unwrap();
        assert!(sol.converged);
        assert!(net.max_mismatch(&sol.v_mag, &sol.v_ang, &inj) < 1e-10);
        assert!(sol.v_ang[1] < 0.0);
    }

    #[test]
    fn unreachable_load_does_not_converge() {
        let net = two_bus();
        // far beyond the nose of the PV curve for x = 0.1
        let sol = solve_power_flow(&net, &[(0.0, 0.0), (-20.0, 0.0)], 1.0, 1e-8, 30);
        match sol {
            Ok(s) => assert!(!s.converged),
            Err(GridError::SingularJacobian { .. }) => {}
            Err(e) => panic!("unexpected error {e}"),
        }
    }

    #[test]
    fn injection_length_checked() {
        let net = two_bus();
        assert!(matches!(
            solve_power_flow(&net, &[(0.0, 0.0)], 1.0, 1e-8, 30),
            Err(GridError::InjectionLength { expected: 2, got: 1 })
        ));
        assert!(matches!(
            solve_power_flow(&net, &[(0.0, 0.0); 2], 1.0, 0.0, 30),
            Err(GridError::InvalidTolerance(_))
        ));
    }

    fn sol_with(v: Vec<f64>) -> PowerFlowSolution {
        let n = v.len();
        PowerFlowSolution { v_mag: v, v_ang: vec![0.0; n], mismatch: 0.0, iterations: 1, converged: true }
    }

    #[test]
    fn penalty_examples() {
        let inband = sol_with(vec![1.0, 0.96, 1.04, 0.99]);
        assert_eq!(voltage_violation(&inband, 0.96, 1.04, 1e4).unwrap().penalty, 0.0);

        let high = sol_with(vec![1.0, 1.05, 1.0]);
        let r = voltage_violation(&high, 0.96, 1.04, 1e4).unwrap().penalty;
        assert!((r + 100.0).abs() < 1e-9);

        let low = sol_with(vec![1.0, 0.95, 1.0]);
        let r = voltage_violation(&low, 0.96, 1.04, 1e4).unwrap().penalty;
        assert!((r + 100.0).abs() < 1e-9);
    }

    #[test]
    fn penalty_rejects_unconverged_and_bad_band() {
        let mut sol = sol_with(vec![1.0]);
        sol.converged = false;
        assert!(matches!(voltage_violation(&sol, 0.96, 1.04, 1.0), Err(GridError::Unconverged)));
        let sol = sol_with(vec![1.0]);
        assert!(matches!(
            voltage_violation(&sol, 1.04, 0.96, 1.0),
            Err(GridError::InvalidBand { .. })
        ));
    }

    #[test]
    fn maximal_penalty_uses_band_width() {
        let v = VoltageViolation::maximal(13, 0.96, 1.04, 1e4);
        assert!((v.total_deviation() - 13.0 * 0.08).abs() < 1e-12);
        assert!((v.penalty + 1e4 * 13.0 * 0.08).abs() < 1e-6);
    }
}
