//! Tank networks and their compartmental (flow) and Laplacian (diffusion)
//! matrices.

use std::collections::VecDeque;

use nalgebra::{DMatrix, DVector};

use crate::error::{Result, ValidationErrors};
use crate::sparse::CscMatrix;

/// A network of well-mixed tanks. Rates are in canonical units (volume per
/// day) once a scenario has been loaded.
#[derive(Debug, Clone, PartialEq)]
pub struct TankNetwork {
    pub volumes: Vec<f64>,
    pub inflow_rates: Vec<f64>,
    pub outflow_rates: Vec<f64>,
    /// `flows[(i, j)]` is the flow from tank `i` into tank `j`.
    pub flows: DMatrix<f64>,
    pub diffusion: DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkMatrices {
    /// Compartmental flow matrix.
    pub m: DMatrix<f64>,
    /// Diffusion Laplacian (negative semidefinite).
    pub l: DMatrix<f64>,
    /// `m + l`
    pub n: DMatrix<f64>,
    /// Diagonal of the inflow matrix.
    pub c: DVector<f64>,
}

impl TankNetwork {
    /// A network without inter-tank flow or diffusion.
    pub fn isolated(volumes: Vec<f64>, inflow_rates: Vec<f64>, outflow_rates: Vec<f64>) -> Self {
        let s = volumes.len();
        TankNetwork {
            volumes,
            inflow_rates,
            outflow_rates,
            flows: DMatrix::zeros(s, s),
            diffusion: DMatrix::zeros(s, s),
        }
    }

    pub fn n_tanks(&self) -> usize {
        self.volumes.len()
    }

    pub fn validate(&self) -> ValidationErrors {
        let mut errs = ValidationErrors::default();
        let s = self.volumes.len();
        if s == 0 {
            errs.push("network", "at least one tank is required");
            return errs;
        }
        if self.inflow_rates.len() != s || self.outflow_rates.len() != s {
            errs.push("network", format!("expected {s} inflow and outflow rates"));
            return errs;
        }
        if self.flows.shape() != (s, s) || self.diffusion.shape() != (s, s) {
            errs.push("network", format!("flow and diffusion matrices must be {s}x{s}"));
            return errs;
        }
        for i in 0..s {
            if !(self.volumes[i] > 0.0 && self.volumes[i].is_finite()) {
                errs.push(format!("tank[{i}].volume"), "must be positive and finite");
            }
            if !(self.inflow_rates[i] >= 0.0 && self.inflow_rates[i].is_finite()) {
                errs.push(format!("tank[{i}].inflow"), "must be nonnegative and finite");
            }
            if !(self.outflow_rates[i] >= 0.0 && self.outflow_rates[i].is_finite()) {
                errs.push(format!("tank[{i}].outflow"), "must be nonnegative and finite");
            }
            if self.flows[(i, i)] != 0.0 {
                errs.push(format!("flow[{i}->{i}]"), "self-flow is not allowed");
            }
            if self.diffusion[(i, i)] != 0.0 {
                errs.push(format!("diffusion[{i},{i}]"), "self-diffusion is not allowed");
            }
            for j in 0..s {
                let q = self.flows[(i, j)];
                if !(q >= 0.0 && q.is_finite()) {
                    errs.push(format!("flow[{i}->{j}]"), "must be nonnegative and finite");
                }
                let d = self.diffusion[(i, j)];
                if !(d >= 0.0 && d.is_finite()) {
                    errs.push(format!("diffusion[{i},{j}]"), "must be nonnegative and finite");
                }
                if j > i && d != self.diffusion[(j, i)] {
                    errs.push(
                        format!("diffusion[{i},{j}]"),
                        format!("asymmetric: d[{i},{j}]={d} but d[{j},{i}]={}", self.diffusion[(j, i)]),
                    );
                }
            }
        }
        errs
    }
}

/// Builds `M`, `L`, `N = M + L` and `diag(C)` for a network.
pub fn build_matrices(net: &TankNetwork) -> Result<NetworkMatrices> {
    net.validate().into_result()?;
    let s = net.n_tanks();
    let mut m = DMatrix::zeros(s, s);
    let mut l = DMatrix::zeros(s, s);
    for i in 0..s {
        let mut out = net.outflow_rates[i];
        let mut diff = 0.0;
        for k in 0..s {
            out += net.flows[(i, k)];
            diff += net.diffusion[(i, k)];
        }
        for j in 0..s {
            if i != j {
                m[(i, j)] = net.flows[(j, i)];
                l[(i, j)] = net.diffusion[(i, j)];
            }
        }
        m[(i, i)] = -out;
        l[(i, i)] = -diff;
    }
    let n = &m + &l;
    Ok(NetworkMatrices {
        m,
        l,
        n,
        c: DVector::from_column_slice(&net.inflow_rates),
    })
}

/// True when every tank has a directed flow path to a tank with outflow.
/// Diffusion edges are not considered.
pub fn is_outflow_connected(net: &TankNetwork) -> bool {
    let s = net.n_tanks();
    // walk the reversed flow graph from every tank with outflow
    let mut reached = vec![false; s];
    let mut queue: VecDeque<usize> = (0..s).filter(|&i| net.outflow_rates[i] > 0.0).collect();
    for &i in &queue {
        reached[i] = true;
    }
    while let Some(j) = queue.pop_front() {
        for i in 0..s {
            if !reached[i] && net.flows[(i, j)] > 0.0 {
                reached[i] = true;
                queue.push_back(i);
            }
        }
    }
    reached.into_iter().all(|r| r)
}

/// `A ⊗ I_m` as a sparse matrix.
pub fn kron_lift(a: &DMatrix<f64>, m: usize) -> CscMatrix {
    assert!(m >= 1, "lift dimension must be positive");
    let mut triplets = Vec::new();
    for j in 0..a.ncols() {
        for i in 0..a.nrows() {
            let v = a[(i, j)];
            if v != 0.0 {
                triplets.extend((0..m).map(|k| (i * m + k, j * m + k, v)));
            }
        }
    }
    CscMatrix::from_triplets(a.nrows() * m, a.ncols() * m, &triplets)
}

/// Piecewise-constant schedule of networks. Snapshot `k` applies from its
/// start step (1-based) up to the next snapshot's start.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkSchedule {
    snapshots: Vec<(usize, TankNetwork)>,
    matrices: Vec<NetworkMatrices>,
}

impl NetworkSchedule {
    pub fn constant(net: TankNetwork) -> Result<Self> {
        Self::new(vec![(1, net)])
    }

    pub fn new(snapshots: Vec<(usize, TankNetwork)>) -> Result<Self> {
        let mut errs = ValidationErrors::default();
        if snapshots.is_empty() {
            errs.push("network", "empty schedule");
            return Err(crate::Error::Validation(errs));
        }
        if snapshots[0].0 != 1 {
            errs.push("network.snapshot[0]", "the first snapshot must start at step 1");
        }
        for (k, w) in snapshots.windows(2).enumerate() {
            if w[1].0 <= w[0].0 {
                errs.push(
                    format!("network.snapshot[{}]", k + 1),
                    "start steps must be strictly increasing",
                );
            }
        }
        let s = snapshots[0].1.n_tanks();
        for (k, (_, net)) in snapshots.iter().enumerate() {
            for issue in net.validate().issues {
                errs.push(format!("network.snapshot[{k}].{}", issue.location), issue.message);
            }
            if net.n_tanks() != s || net.volumes != snapshots[0].1.volumes {
                errs.push(
                    format!("network.snapshot[{k}]"),
                    "all snapshots must share the tank count and volumes",
                );
            }
        }
        errs.into_result()?;
        let matrices = snapshots
            .iter()
            .map(|(_, net)| build_matrices(net))
            .collect::<Result<Vec<_>>>()?;
        Ok(NetworkSchedule { snapshots, matrices })
    }

    pub fn is_constant(&self) -> bool {
        self.snapshots.len() == 1
    }

    pub fn snapshots(&self) -> &[(usize, TankNetwork)] {
        &self.snapshots
    }

    fn index_at(&self, step: usize) -> usize {
        self.snapshots
            .iter()
            .rposition(|(start, _)| *start <= step)
            .unwrap_or(0)
    }

    pub fn at(&self, step: usize) -> &TankNetwork {
        &self.snapshots[self.index_at(step)].1
    }

    pub fn matrices_at(&self, step: usize) -> &NetworkMatrices {
        &self.matrices[self.index_at(step)]
    }

    pub fn n_tanks(&self) -> usize {
        self.snapshots[0].1.n_tanks()
    }

    pub fn volumes(&self) -> &[f64] {
        &self.snapshots[0].1.volumes
    }

    /// Diagonal of `V ⊗ I_m`.
    pub fn lifted_volumes(&self, m: usize) -> Vec<f64> {
        self.volumes()
            .iter()
            .flat_map(|&v| std::iter::repeat_n(v, m))
            .collect()
    }
}
