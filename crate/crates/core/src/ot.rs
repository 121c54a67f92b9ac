//! Discrete optimal transport between weighted point sets.
//!
//! [`sinkhorn`] is the production solver (log-domain, with ε-scaling).
//! [`exact_ot`] solves the transportation LP with a primal simplex and is
//! bounded to small instances; it anchors the tests.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::data::check_probability;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
pub enum Metric {
    #[default]
    SquaredEuclidean,
}

#[derive(Debug, Clone, PartialEq)]
pub struct CostMatrix {
    pub values: DMatrix<f64>,
    pub metric: Metric,
}

impl CostMatrix {
    pub fn new(values: DMatrix<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::InvalidInput("cost entries must be finite and nonnegative".into()));
        }
        Ok(CostMatrix {
            values,
            metric: Metric::SquaredEuclidean,
        })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.values.shape()
    }

    pub fn mean(&self) -> f64 {
        if self.values.is_empty() {
            0.0
        } else {
            self.values.sum() / self.values.len() as f64
        }
    }

    pub fn transpose(&self) -> CostMatrix {
        CostMatrix {
            values: self.values.transpose(),
            metric: self.metric,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransportPlan {
    pub coupling: DMatrix<f64>,
    pub source_marginal: Vec<f64>,
    pub target_marginal: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Largest absolute deviation of a row or column sum from its marginal.
    pub marginal_error: f64,
}

/// Pairwise squared Euclidean distances between the rows of `x` and `y`.
pub fn cost_matrix(x: &DMatrix<f64>, y: &DMatrix<f64>) -> Result<CostMatrix> {
    if x.ncols() != y.ncols() {
        return Err(Error::Dimension(format!(
            "point dimensions differ: {} vs {}",
            x.ncols(),
            y.ncols()
        )));
    }
    let (m, n, d) = (x.nrows(), y.nrows(), x.ncols());
    let values = DMatrix::from_fn(m, n, |i, j| {
        let mut s = 0.0;
        for k in 0..d {
            let t = x[(i, k)] - y[(j, k)];
            s += t * t;
        }
        s
    });
    CostMatrix::new(values)
}

/// ⟨π, C⟩.
pub fn transport_cost(plan: &TransportPlan, cost: &CostMatrix) -> Result<f64> {
    if plan.coupling.shape() != cost.values.shape() {
        return Err(Error::Dimension(format!(
            "plan is {:?}, cost is {:?}",
            plan.coupling.shape(),
            cost.values.shape()
        )));
    }
    Ok(plan.coupling.component_mul(&cost.values).sum())
}

pub fn marginal_error(coupling: &DMatrix<f64>, a: &[f64], b: &[f64]) -> f64 {
    let mut err: f64 = 0.0;
    for (i, ai) in a.iter().enumerate() {
        err = err.max((coupling.row(i).sum() - ai).abs());
    }
    for (j, bj) in b.iter().enumerate() {
        err = err.max((coupling.column(j).sum() - bj).abs());
    }
    err
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SinkhornParams {
    /// Absolute regularization strength ε > 0.
    pub epsilon: f64,
    pub max_iter: usize,
    pub tol_marginal: f64,
    /// Start at a large ε and halve down to `epsilon`, warm-starting the potentials.
    pub epsilon_scaling: bool,
}

impl SinkhornParams {
    pub const DEFAULT_RELATIVE_EPSILON: f64 = 0.05;

    /// ε = `relative`·mean(C) with the default iteration budget and tolerance.
    pub fn relative(relative: f64, cost: &CostMatrix) -> Self {
        SinkhornParams {
            epsilon: relative * cost.mean(),
            ..Self::default()
        }
    }
}

impl Default for SinkhornParams {
    fn default() -> Self {
        SinkhornParams {
            epsilon: 1.0,
            max_iter: 10_000,
            tol_marginal: 1e-7,
            epsilon_scaling: true,
        }
    }
}

/// Indices of strictly positive entries; zero-weight atoms are solved without.
fn support(w: &[f64]) -> Vec<usize> {
    (0..w.len()).filter(|&i| w[i] > 0.0).collect()
}

fn restrict(
    a: &[f64],
    b: &[f64],
    cost: &CostMatrix,
) -> (Vec<usize>, Vec<usize>, Vec<f64>, Vec<f64>, DMatrix<f64>) {
    let rows = support(a);
    let cols = support(b);
    let sa: Vec<f64> = rows.iter().map(|&i| a[i]).collect();
    let sb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let c = DMatrix::from_fn(rows.len(), cols.len(), |i, j| cost.values[(rows[i], cols[j])]);
    (rows, cols, sa, sb, c)
}

fn expand(sub: &DMatrix<f64>, rows: &[usize], cols: &[usize], m: usize, n: usize) -> DMatrix<f64> {
    let mut full = DMatrix::zeros(m, n);
    for (si, &i) in rows.iter().enumerate() {
        for (sj, &j) in cols.iter().enumerate() {
            full[(i, j)] = sub[(si, sj)];
        }
    }
    full
}

fn check_inputs(a: &[f64], b: &[f64], cost: &CostMatrix) -> Result<()> {
    check_probability(a, "source marginal")?;
    check_probability(b, "target marginal")?;
    if cost.shape() != (a.len(), b.len()) {
        return Err(Error::Dimension(format!(
            "cost is {:?}, marginals are ({}, {})",
            cost.shape(),
            a.len(),
            b.len()
        )));
    }
    Ok(())
}

fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}

/// Entropic optimal transport by log-domain Sinkhorn iterations.
///
/// The coupling is `π_ij = exp((f_i + g_j − C_ij) / ε)`; the dual potentials
/// `f`, `g` are updated alternately until the row marginals (the column
/// marginals are exact after each `g` update) deviate by at most
/// `tol_marginal`, or `max_iter` iterations have run at the target ε.
pub fn sinkhorn(a: &[f64], b: &[f64], cost: &CostMatrix, params: &SinkhornParams) -> Result<TransportPlan> {
    check_inputs(a, b, cost)?;
    if !(params.epsilon > 0.0) || !params.epsilon.is_finite() {
        return Err(Error::InvalidInput(format!("epsilon must be positive, got {}", params.epsilon)));
    }
    let (rows, cols, sa, sb, c) = restrict(a, b, cost);
    let (m, n) = (sa.len(), sb.len());

    let finish = |sub: DMatrix<f64>, converged: bool, iterations: usize| -> Result<TransportPlan> {
        if sub.iter().any(|v| !v.is_finite()) {
            return Err(Error::Solver("Sinkhorn produced non-finite coupling entries".into()));
        }
        let coupling = expand(&sub, &rows, &cols, a.len(), b.len());
        let marginal_error = marginal_error(&coupling, a, b);
        Ok(TransportPlan {
            coupling,
            source_marginal: a.to_vec(),
            target_marginal: b.to_vec(),
            converged,
            iterations,
            marginal_error,
        })
    };

    if m == 1 || n == 1 {
        let sub = DMatrix::from_fn(m, n, |i, j| sa[i] * sb[j]);
        return finish(sub, true, 1);
    }

    let log_a: Vec<f64> = sa.iter().map(|v| v.ln()).collect();
    let log_b: Vec<f64> = sb.iter().map(|v| v.ln()).collect();
    // Row-major copy for cache-friendly row sweeps.
    let c_rows: Vec<f64> = (0..m).flat_map(|i| (0..n).map(move |j| (i, j))).map(|(i, j)| c[(i, j)]).collect();

    let target = params.epsilon;
    let mut schedule = Vec::new();
    if params.epsilon_scaling {
        let cmax = c.max();
        let mut eps = cmax.max(target);
        while eps > target {
            schedule.push(eps);
            eps *= 0.5;
        }
    }
    schedule.push(target);

    let mut f = vec![0.0; m];
    let mut g = vec![0.0; n];
    let mut row_mass = vec![0.0; m];
    let mut total_iter = 0;
    let mut converged = false;
    let last = schedule.len() - 1;

    for (stage, &eps) in schedule.iter().enumerate() {
        let final_stage = stage == last;
        let stage_tol = if final_stage { params.tol_marginal } else { params.tol_marginal.max(1e-4) };
        let stage_cap = if final_stage { params.max_iter } else { params.max_iter.min(1000) };
        let mut it = 0;
        loop {
            // f-update
            for i in 0..m {
                let row = &c_rows[i * n..(i + 1) * n];
                let lse = log_sum_exp((0..n).map(|j| (g[j] - row[j]) / eps));
                f[i] = eps * (log_a[i] - lse);
            }
            // g-update
            for j in 0..n {
                let lse = log_sum_exp((0..m).map(|i| (f[i] - c_rows[i * n + j]) / eps));
                g[j] = eps * (log_b[j] - lse);
            }
            it += 1;
            total_iter += 1;
            if f.iter().chain(g.iter()).any(|v| !v.is_finite()) {
                return Err(Error::Solver(format!("non-finite dual potentials at epsilon {eps}")));
            }
            let mut err: f64 = 0.0;
            for i in 0..m {
                let row = &c_rows[i * n..(i + 1) * n];
                let s: f64 = (0..n).map(|j| ((f[i] + g[j] - row[j]) / eps).exp()).sum();
                row_mass[i] = s;
                err = err.max((s - sa[i]).abs());
            }
            if err <= stage_tol {
                if final_stage {
                    converged = true;
                }
                break;
            }
            if it >= stage_cap {
                break;
            }
        }
    }

    let sub = DMatrix::from_fn(m, n, |i, j| ((f[i] + g[j] - c_rows[i * n + j]) / target).exp());
    finish(sub, converged, total_iter)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExactParams {
    /// Largest accepted number of source or target atoms.
    pub max_size: usize,
}

impl Default for ExactParams {
    fn default() -> Self {
        ExactParams { max_size: 64 }
    }
}

/// Exact discrete OT by the transportation simplex (MODI pricing).
///
/// Bounded by `params.max_size`; intended for desk-scale checks. Any optimal
/// vertex is returned.
pub fn exact_ot(a: &[f64], b: &[f64], cost: &CostMatrix, params: &ExactParams) -> Result<TransportPlan> {
    check_inputs(a, b, cost)?;
    if a.len() > params.max_size || b.len() > params.max_size {
        return Err(Error::Solver(format!(
            "instance {}x{} exceeds exact solver bound {}",
            a.len(),
            b.len(),
            params.max_size
        )));
    }
    let (rows, cols, sa, sb, c) = restrict(a, b, cost);
    let (sub, pivots) = TransportSimplex::new(&sa, &sb, &c).solve()?;
    let coupling = expand(&sub, &rows, &cols, a.len(), b.len());
    let marginal_error = marginal_error(&coupling, a, b);
    Ok(TransportPlan {
        coupling,
        source_marginal: a.to_vec(),
        target_marginal: b.to_vec(),
        converged: true,
        iterations: pivots,
        marginal_error,
    })
}

/// Basis is a spanning tree over m row nodes and n column nodes (node `m + j`
/// for column j), with exactly m + n − 1 cells.
struct TransportSimplex<'a> {
    c: &'a DMatrix<f64>,
    m: usize,
    n: usize,
    basis: Vec<(usize, usize)>,
    flow: DMatrix<f64>,
    in_basis: DMatrix<bool>,
}

impl<'a> TransportSimplex<'a> {
    fn new(a: &[f64], b: &[f64], c: &'a DMatrix<f64>) -> Self {
        let (m, n) = (a.len(), b.len());
        let mut flow = DMatrix::zeros(m, n);
        let mut in_basis = DMatrix::from_element(m, n, false);
        let mut basis = Vec::with_capacity(m + n - 1);
        let mut ra = a.to_vec();
        let mut rb = b.to_vec();
        let (mut i, mut j) = (0, 0);
        // North-west corner rule.
        loop {
            let x = ra[i].min(rb[j]).max(0.0);
            flow[(i, j)] = x;
            in_basis[(i, j)] = true;
            basis.push((i, j));
            ra[i] -= x;
            rb[j] -= x;
            if i == m - 1 && j == n - 1 {
                break;
            }
            if j == n - 1 || (i < m - 1 && ra[i] <= rb[j]) {
                i += 1;
            } else {
                j += 1;
            }
        }
        TransportSimplex {
            c,
            m,
            n,
            basis,
            flow,
            in_basis,
        }
    }

    fn adjacency(&self) -> Vec<Vec<(usize, usize)>> {
        let mut adj = vec![Vec::new(); self.m + self.n];
        for (k, &(i, j)) in self.basis.iter().enumerate() {
            adj[i].push((self.m + j, k));
            adj[self.m + j].push((i, k));
        }
        adj
    }

    fn potentials(&self, adj: &[Vec<(usize, usize)>]) -> (Vec<f64>, Vec<f64>) {
        let total = self.m + self.n;
        let mut pot = vec![f64::NAN; total];
        pot[0] = 0.0;
        let mut stack = vec![0];
        while let Some(node) = stack.pop() {
            for &(next, k) in &adj[node] {
                if pot[next].is_nan() {
                    let (i, j) = self.basis[k];
                    // u_i + v_j = C_ij
                    pot[next] = self.c[(i, j)] - pot[node];
                    stack.push(next);
                }
            }
        }
        (pot[..self.m].to_vec(), pot[self.m..].to_vec())
    }

    /// Basis cells on the tree path from row `i` to column `j`, in order from `i`.
    fn path(&self, adj: &[Vec<(usize, usize)>], i: usize, j: usize) -> Vec<usize> {
        let total = self.m + self.n;
        let mut parent: Vec<Option<(usize, usize)>> = vec![None; total];
        let mut seen = vec![false; total];
        seen[i] = true;
        let mut queue = std::collections::VecDeque::from([i]);
        let goal = self.m + j;
        while let Some(node) = queue.pop_front() {
            if node == goal {
                break;
            }
            for &(next, k) in &adj[node] {
                if !seen[next] {
                    seen[next] = true;
                    parent[next] = Some((node, k));
                    queue.push_back(next);
                }
            }
        }
        let mut cells = Vec::new();
        let mut node = goal;
        while let Some((prev, k)) = parent[node] {
            cells.push(k);
            node = prev;
        }
        cells.reverse();
        cells
    }

    fn solve(mut self) -> Result<(DMatrix<f64>, usize)> {
        let scale = self.c.amax().max(1.0);
        let tol = 1e-12 * scale;
        let max_pivots = 50 * (self.m + self.n) * (self.m + self.n) + 1000;
        let mut degenerate_run = 0usize;
        let mut pivots = 0;
        loop {
            let adj = self.adjacency();
            let (u, v) = self.potentials(&adj);
            // Dantzig pricing; Bland's rule after a long run of degenerate pivots.
            let bland = degenerate_run > self.m + self.n;
            let mut entering = None;
            let mut best = -tol;
            'scan: for i in 0..self.m {
                for j in 0..self.n {
                    if self.in_basis[(i, j)] {
                        continue;
                    }
                    let r = self.c[(i, j)] - u[i] - v[j];
                    if r < best {
                        entering = Some((i, j));
                        if bland {
                            break 'scan;
                        }
                        best = r;
                    }
                }
            }
            let Some((ei, ej)) = entering else {
                return Ok((self.flow, pivots));
            };
            pivots += 1;
            if pivots > max_pivots {
                return Err(Error::Solver("transportation simplex did not terminate".into()));
            }

            let path = self.path(&adj, ei, ej);
            // Signs along the path from row ei: -, +, -, ..., -.
            let mut theta = f64::INFINITY;
            let mut leave = usize::MAX;
            for (pos, &k) in path.iter().enumerate() {
                if pos % 2 == 0 {
                    let (i, j) = self.basis[k];
                    let x = self.flow[(i, j)];
                    if x < theta || (x == theta && (bland && self.basis[k] < self.basis[leave])) {
                        theta = x;
                        leave = k;
                    }
                }
            }
            if theta <= 0.0 {
                degenerate_run += 1;
            } else {
                degenerate_run = 0;
            }
            self.flow[(ei, ej)] = theta;
            for (pos, &k) in path.iter().enumerate() {
                let (i, j) = self.basis[k];
                if pos % 2 == 0 {
                    self.flow[(i, j)] = (self.flow[(i, j)] - theta).max(0.0);
                } else {
                    self.flow[(i, j)] += theta;
                }
            }
            let (li, lj) = self.basis[leave];
            self.flow[(li, lj)] = 0.0;
            self.in_basis[(li, lj)] = false;
            self.in_basis[(ei, ej)] = true;
            self.basis[leave] = (ei, ej);
        }
    }
}
