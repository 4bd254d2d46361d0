//! Finite-difference solver for the stationary double-obstacle system
//! characterizing the game value, driven by policy iteration: given node
//! labels (continue / impulse / stop), the linear policy system is solved
//! exactly, then labels are improved from the branch comparison. The
//! residual combiner doubles as a verifier for closed forms.
//!
//! Linear solves are direct: a tridiagonal factorization per line with
//! low-rank corrections for the nonlocal impulse rows, marched slice by
//! slice along a pure-transport dimension when one is present. The jump
//! quadrature is handled by an outer fixed-point loop whose contraction
//! rate is `nu / (delta + nu)`.

use crate::grid::{BoundaryPolicy, Grid, GridFunction};
use crate::model::{GamePayoffs, GameSpec, PlayerObjective, Sense, StopPolicy, ThresholdImpulsePolicy};
use crate::operators::{
    build_stencil_parts, intervention_operator, node_state, InterventionResult, OperatorError,
    StencilParts, DEFAULT_NZ,
};
use std::sync::Arc;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum QviError {
    #[error("specification rejected: {0}")]
    SpecRejected(String),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] crate::grid::GridError),
    #[error(transparent)]
    Model(#[from] crate::model::ModelError),
    #[error("labels still changing after {iters} iterations ({changes} nodes flipping, e.g. {sample:?})")]
    LabelCycling { iters: usize, changes: usize, sample: Vec<usize> },
    #[error("non-contractive impulse policy: destination chain through node {0} never reaches a continue or stop node")]
    NonContractiveImpulse(usize),
    #[error("linear policy solve broke down: {0}")]
    SolverBreakdown(String),
    #[error("best responses oscillate after {rounds} rounds ({p1_changes} controller / {p2_changes} stopper nodes still flipping)")]
    BestResponseOscillation { rounds: usize, p1_changes: usize, p2_changes: usize },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum NodeAction {
    Continue,
    Impulse(f64),
    Stop,
}

impl NodeAction {
    pub fn kind(&self) -> u8 {
        match self {
            NodeAction::Continue => 0,
            NodeAction::Impulse(_) => 1,
            NodeAction::Stop => 2,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct IterationStat {
    pub iter: usize,
    pub residual: f64,
    pub label_changes: usize,
}

#[derive(Debug, Clone)]
pub struct PolicyState {
    pub labels: Vec<NodeAction>,
    pub iterations: usize,
    pub history: Vec<IterationStat>,
}

impl PolicyState {
    /// Threshold policies backed by the final labels (nearest node lookup).
    pub fn policies(&self, grid: &Grid) -> (ThresholdImpulsePolicy, StopPolicy) {
        let labels = Arc::new(self.labels.clone());
        let g = grid.clone();
        let l1 = labels.clone();
        let g1 = g.clone();
        let act_region: crate::model::StatePredicate =
            Arc::new(move |x| matches!(l1[nearest_node(&g1, x)], NodeAction::Impulse(_)));
        let l2 = labels.clone();
        let g2 = g.clone();
        let target: crate::model::ImpulseMap = Arc::new(move |x| match l2[nearest_node(&g2, x)] {
            NodeAction::Impulse(z) => z,
            _ => 0.0,
        });
        let l3 = labels;
        let stop_region: crate::model::StatePredicate =
            Arc::new(move |x| matches!(l3[nearest_node(&g, x)], NodeAction::Stop));
        (ThresholdImpulsePolicy { act_region, target }, StopPolicy { stop_region })
    }
}

fn nearest_node(grid: &Grid, x: &crate::model::State) -> usize {
    let w = grid.interp_weights(&x[..grid.dim().min(2)]);
    w.iter().max_by(|a, b| a.1.total_cmp(&b.1)).map(|(n, _)| n).unwrap_or(0)
}

/// Stability analysis of the continue-branch operator for the direct
/// solver. One-dimensional problems must give classic M-rows (else the grid
/// is too coarse for the requested upwinding). In 2D, rows mixing diffusion
/// with the marched transport term may lose within-slice dominance around
/// the crossover; those slices are flagged for the pivoted dense path.
fn analyze_solver_rows(
    parts: &StencilParts,
    grid: &Grid,
    delta: f64,
) -> Result<Vec<bool>, QviError> {
    let n1 = if grid.dim() == 2 { grid.axis(1).n } else { 1 };
    let mut dense_slice = vec![false; n1];
    for (idx, row) in parts.local.rows.iter().enumerate() {
        if row.edge {
            continue;
        }
        let mut diag = delta + parts.jump.intensity[idx];
        let mut off_neg_ok = true;
        let mut slice_off = 0.0f64;
        let mut scale = delta.abs();
        let (mut below, mut above) = (false, false);
        let slice_of = |i: usize| if grid.dim() == 2 { i % n1 } else { 0 };
        for &(col, c) in &row.entries {
            let col = col as usize;
            scale = scale.max(c.abs());
            if col == idx {
                diag -= c;
            } else {
                let coeff = -c;
                if coeff > 1e-12 {
                    off_neg_ok = false;
                }
                if slice_of(col) == slice_of(idx) {
                    slice_off += coeff.abs();
                    if col < idx {
                        below = true;
                    } else {
                        above = true;
                    }
                }
            }
        }
        let classic_m = diag > 0.0 && off_neg_ok;
        let dominant = diag.abs() > slice_off * (1.0 - 1e-9) && diag.abs() > 0.0;
        // one-sided (marching) rows are solved by substitution; they only
        // need a sound pivot
        let one_sided = !(below && above) && diag.abs() > 1e-9 * scale;
        if !(classic_m || dominant || one_sided) {
            if grid.dim() == 1 {
                return Err(QviError::Operator(OperatorError::GridTooCoarse {
                    dim: 0,
                    suggested_h: 0.5 * grid.axis(0).h(),
                }));
            }
            dense_slice[slice_of(idx)] = true;
        }
    }
    Ok(dense_slice)
}

#[derive(Clone)]
pub struct QviProblem {
    pub game: GameSpec,
    pub grid: Grid,
    pub boundary: BoundaryPolicy,
    pub n_z: usize,
}

impl QviProblem {
    /// Builds a problem, refusing specifications that fail the basic sanity
    /// and cost-floor checks. `new_forced` skips the refusal.
    pub fn new(game: GameSpec, grid: Grid) -> Result<Self, QviError> {
        let problem = Self::new_forced(game, grid);
        let iv = &problem.game.intervention;
        let t = problem.game.diffusion.horizon;
        let mut worst = f64::INFINITY;
        for i in 0..64 {
            let s = t * i as f64 / 63.0;
            worst = worst.min((iv.friction)(s, iv.z_lo));
        }
        if worst < iv.cost_floor * (1.0 - 1e-9) {
            return Err(QviError::SpecRejected(format!(
                "intervention friction dips to {worst:.3e}, below the declared floor {:.3e} (A.4)",
                iv.cost_floor
            )));
        }
        if let GamePayoffs::ZeroSum { .. } = problem.game.payoffs {
            if problem.game.controller_sense() == problem.game.stopper_sense() {
                return Err(QviError::SpecRejected("zero-sum game needs opposite senses".into()));
            }
        }
        Ok(problem)
    }

    pub fn new_forced(game: GameSpec, grid: Grid) -> Self {
        QviProblem { game, grid, boundary: BoundaryPolicy::DirichletBequest, n_z: DEFAULT_NZ }
    }

    pub fn with_boundary(mut self, boundary: BoundaryPolicy) -> Self {
        self.boundary = boundary;
        self
    }

    fn field(&self, values: Vec<f64>) -> Result<GridFunction, QviError> {
        Ok(GridFunction::new(self.grid.clone(), values)?.with_boundary(self.boundary.clone()))
    }
}

/// Stationary branch values at every node for one player objective.
pub(crate) struct Branches {
    /// `delta phi - L phi - f`
    pub lc: Vec<f64>,
    /// bequest values
    pub g: Vec<f64>,
    /// best intervention values and optimizers (absent when the impulse
    /// policy is frozen and the optimizer is not needed)
    pub m: Option<InterventionResult>,
    /// optimizer displaces the state by less than a quarter cell: "do
    /// nothing dressed as an impulse", never labeled
    pub degenerate: Vec<bool>,
    pub edge: Vec<bool>,
}

impl Branches {
    fn m_at(&self, i: usize) -> Option<f64> {
        self.m.as_ref().and_then(|m| m.optimizer[i].is_finite().then(|| m.m_phi.values[i]))
    }

    fn opt_at(&self, i: usize) -> f64 {
        self.m.as_ref().map_or(f64::NAN, |m| m.optimizer[i])
    }
}

pub(crate) fn branch_values(
    problem: &QviProblem,
    objective: &PlayerObjective,
    parts: &StencilParts,
    phi: &GridFunction,
    need_m: bool,
) -> Result<Branches, QviError> {
    let n = problem.grid.len();
    let delta = problem.game.discount;
    let lphi = parts.apply(phi)?;
    let mut lc = Vec::with_capacity(n);
    let mut g = Vec::with_capacity(n);
    for i in 0..n {
        let x = node_state(&problem.grid, i);
        let f = objective.running_at(&x);
        lc.push(delta * phi.values[i] - lphi.values[i] - f);
        g.push((objective.bequest)(&x));
    }
    // the intervention optimizer uses this player's cash flow
    let m = if need_m {
        let mut game = problem.game.clone();
        game.intervention.impulse_cash = objective.impulse_cash.clone();
        Some(intervention_operator(&game, phi, objective.sense, problem.n_z)?)
    } else {
        None
    };
    let degenerate = match &m {
        Some(m) => degenerate_impulses(problem, &m.optimizer),
        None => vec![false; n],
    };
    let edge = parts.local.rows.iter().map(|r| r.edge).collect();
    Ok(Branches { lc, g, m, degenerate, edge })
}

/// Flags optimizers whose response moves the state by less than a quarter
/// of a cell in every dimension.
fn degenerate_impulses(problem: &QviProblem, optimizer: &[f64]) -> Vec<bool> {
    let grid = &problem.grid;
    optimizer
        .iter()
        .enumerate()
        .map(|(i, &z)| {
            if !z.is_finite() {
                return false;
            }
            let x = node_state(grid, i);
            let y = (problem.game.intervention.response)(&x, z);
            let mut moved = 0.0f64;
            for d in 0..grid.dim() {
                moved = moved.max((y[d] - x[d]).abs() / grid.axis(d).h());
            }
            moved < 0.25
        })
        .collect()
}

/// Node-wise residual of the double-obstacle system for a candidate field:
/// the min/max combination of `{delta phi - L phi - f, phi - M phi, phi - G}`
/// selected by the players' senses. Edge rows use one-sided stencils.
pub fn qvi_residual(problem: &QviProblem, phi: &GridFunction) -> Result<GridFunction, QviError> {
    let parts = build_stencil_parts(&problem.game, &problem.grid)?;
    let objective = problem.game.controller_objective().clone();
    let b = branch_values(problem, &objective, &parts, phi, true)?;
    let cs = problem.game.controller_sense();
    let ss = problem.game.stopper_sense();
    let m = b.m.as_ref().expect("residual needs the intervention branch");
    let mut out = Vec::with_capacity(problem.grid.len());
    for i in 0..problem.grid.len() {
        let og = phi.values[i] - b.g[i];
        let om = phi.values[i] - m.m_phi.values[i];
        let inner = match ss {
            Sense::Maximize => b.lc[i].min(og),
            Sense::Minimize => b.lc[i].max(og),
        };
        let r = match cs {
            Sense::Minimize => inner.max(om),
            Sense::Maximize => inner.min(om),
        };
        out.push(r);
    }
    problem.field(out)
}

/// Sup-norm over non-edge rows.
pub fn interior_sup(values: &[f64], edge: &[bool]) -> f64 {
    values.iter().zip(edge).filter(|(_, &e)| !e).map(|(v, _)| v.abs()).fold(0.0, f64::max)
}

// ---------------------------------------------------------------------------
// Linear policy evaluation
// ---------------------------------------------------------------------------

/// Affine expansion of an impulse node over non-impulse nodes.
#[derive(Debug, Clone, Default)]
struct Expansion {
    constant: f64,
    terms: Vec<(u32, f64)>,
}

fn expand_impulses(
    problem: &QviProblem,
    cash: &crate::model::CashFn,
    labels: &[NodeAction],
) -> Result<Vec<Option<Expansion>>, QviError> {
    let grid = &problem.grid;
    let n = grid.len();
    let mut raw: Vec<Option<Expansion>> = vec![None; n];
    for i in 0..n {
        if let NodeAction::Impulse(z) = labels[i] {
            let x = node_state(grid, i);
            let y = (problem.game.intervention.response)(&x, z);
            let w = grid.interp_weights(&y[..grid.dim().min(2)]);
            raw[i] = Some(Expansion {
                constant: cash(z),
                terms: w.iter().map(|(node, wk)| (node as u32, wk)).collect(),
            });
        }
    }
    // resolve impulse-to-impulse references; chains must terminate
    let mut resolved: Vec<bool> = raw
        .iter()
        .map(|e| e.as_ref().map_or(true, |x| x.terms.iter().all(|&(t, _)| raw[t as usize].is_none())))
        .collect();
    loop {
        if resolved.iter().all(|&r| r) {
            break;
        }
        let mut progressed = false;
        for i in 0..n {
            if resolved[i] || raw[i].is_none() {
                continue;
            }
            let exp = raw[i].clone().unwrap();
            if exp
                .terms
                .iter()
                .any(|&(t, _)| raw[t as usize].is_some() && !resolved[t as usize] && t as usize != i)
            {
                continue; // dependency not yet resolved
            }
            if exp.terms.iter().any(|&(t, _)| t as usize == i) {
                return Err(QviError::NonContractiveImpulse(i));
            }
            let mut new_exp = Expansion { constant: exp.constant, terms: Vec::new() };
            for &(t, w) in &exp.terms {
                match &raw[t as usize] {
                    Some(inner) => {
                        new_exp.constant += w * inner.constant;
                        for &(tt, ww) in &inner.terms {
                            push_term(&mut new_exp.terms, tt, w * ww);
                        }
                    }
                    None => push_term(&mut new_exp.terms, t, w),
                }
            }
            raw[i] = Some(new_exp);
            resolved[i] = true;
            progressed = true;
        }
        if !progressed {
            let bad = (0..n).find(|&i| !resolved[i]).unwrap_or(0);
            return Err(QviError::NonContractiveImpulse(bad));
        }
    }
    Ok(raw)
}

fn push_term(terms: &mut Vec<(u32, f64)>, node: u32, w: f64) {
    if w == 0.0 {
        return;
    }
    if let Some(e) = terms.iter_mut().find(|(t, _)| *t == node) {
        e.1 += w;
    } else {
        terms.push((node, w));
    }
}

/// Tridiagonal solve with sparse low-rank corrections (Woodbury).
fn solve_banded_with_corrections(
    lo: &[f64],
    diag: &[f64],
    up: &[f64],
    rhs: &[f64],
    corrections: &[(usize, usize, f64)],
) -> Result<Vec<f64>, QviError> {
    let thomas = |rhs: &[f64]| -> Result<Vec<f64>, QviError> {
        let n = diag.len();
        let mut c = vec![0.0; n];
        let mut x = vec![0.0; n];
        let mut beta = diag[0];
        if beta.abs() < 1e-300 {
            return Err(QviError::SolverBreakdown("zero pivot in tridiagonal solve".into()));
        }
        x[0] = rhs[0] / beta;
        for i in 1..n {
            c[i] = up[i - 1] / beta;
            beta = diag[i] - lo[i] * c[i];
            if beta.abs() < 1e-300 {
                return Err(QviError::SolverBreakdown("zero pivot in tridiagonal solve".into()));
            }
            x[i] = (rhs[i] - lo[i] * x[i - 1]) / beta;
        }
        for i in (0..n.saturating_sub(1)).rev() {
            x[i] -= c[i + 1] * x[i + 1];
        }
        Ok(x)
    };
    if corrections.is_empty() {
        return thomas(rhs);
    }
    let r = corrections.len();
    if r > 512 {
        return Err(QviError::SolverBreakdown(format!(
            "{r} nonlocal couplings exceed the direct correction budget"
        )));
    }
    // A = T + sum val e_row e_col^T; Woodbury with U = [val e_row], V = [e_col]
    let y = thomas(rhs)?;
    let mut w_cols = Vec::with_capacity(r);
    for &(row, _, val) in corrections {
        let mut u = vec![0.0; diag.len()];
        u[row] = val;
        w_cols.push(thomas(&u)?);
    }
    // small dense system (I + V^T W) z = V^T y
    let mut s = vec![vec![0.0; r]; r];
    let mut b = vec![0.0; r];
    for (k, &(_, col, _)) in corrections.iter().enumerate() {
        b[k] = y[col];
        for j in 0..r {
            s[k][j] = if k == j { 1.0 } else { 0.0 };
            s[k][j] += w_cols[j][col];
        }
    }
    let z = dense_solve(&mut s, &mut b)?;
    let mut x = y;
    for j in 0..r {
        for i in 0..x.len() {
            x[i] -= w_cols[j][i] * z[j];
        }
    }
    Ok(x)
}

fn dense_solve(a: &mut [Vec<f64>], b: &mut [f64]) -> Result<Vec<f64>, QviError> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .ok_or_else(|| QviError::SolverBreakdown("empty dense system".into()))?;
        if a[piv][col].abs() < 1e-300 {
            return Err(QviError::SolverBreakdown("singular correction system".into()));
        }
        a.swap(col, piv);
        b.swap(col, piv);
        for row in (col + 1)..n {
            let f = a[row][col] / a[col][col];
            if f == 0.0 {
                continue;
            }
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in (row + 1)..n {
            s -= a[row][k] * x[k];
        }
        x[row] = s / a[row][row];
    }
    Ok(x)
}

/// Row of the assembled policy system in global indexing.
enum RowKind {
    /// `phi_i = value`
    Dirichlet(f64),
    /// full linear row: coefficients on global columns plus rhs
    Linear { coeffs: Vec<(u32, f64)>, rhs: f64 },
}

#[allow(clippy::too_many_arguments)]
fn build_row(
    problem: &QviProblem,
    parts: &StencilParts,
    objective: &PlayerObjective,
    boundary: &BoundaryPolicy,
    idx: usize,
    labels: &[NodeAction],
    expansions: &[Option<Expansion>],
    g: &[f64],
    stop_through: bool,
) -> RowKind {
    let grid = &problem.grid;
    let delta = problem.game.discount;
    match labels[idx] {
        NodeAction::Stop if !stop_through => return RowKind::Dirichlet(g[idx]),
        NodeAction::Impulse(_) => return RowKind::Dirichlet(0.0), // filled from expansion
        _ => {}
    }
    let row = &parts.local.rows[idx];
    if row.edge {
        return match boundary {
            BoundaryPolicy::DirichletBequest => RowKind::Dirichlet(g[idx]),
            BoundaryPolicy::DirichletData(data) => RowKind::Dirichlet(data[idx]),
            BoundaryPolicy::ExtrapolateLinear => {
                // linear extension toward the interior along the edge dim
                let ij = grid.multi_index(idx);
                let mut pick = (0usize, 1isize);
                for d in 0..grid.dim() {
                    if ij[d] == 0 {
                        pick = (d, 1);
                        break;
                    }
                    if ij[d] == grid.axis(d).n - 1 {
                        pick = (d, -1);
                        break;
                    }
                }
                let (d, s) = pick;
                let step: isize =
                    if grid.dim() == 1 || d == 1 { 1 } else { grid.axis(1).n as isize };
                let n1 = (idx as isize + s * step) as u32;
                let n2 = (idx as isize + 2 * s * step) as u32;
                RowKind::Linear {
                    coeffs: vec![(idx as u32, 1.0), (n1, -2.0), (n2, 1.0)],
                    rhs: 0.0,
                }
            }
        };
    }
    // (delta + nu) phi_i - L_loc phi_i = f + jump(phi_prev)
    let x = node_state(grid, idx);
    let f = objective.running_at(&x);
    let mut coeffs: Vec<(u32, f64)> = vec![(idx as u32, delta + parts.jump.intensity[idx])];
    let mut rhs = f;
    for &(col, c) in &row.entries {
        push_term(&mut coeffs, col, -c);
    }
    // substitute impulse columns with their expansions
    let mut expanded: Vec<(u32, f64)> = Vec::with_capacity(coeffs.len());
    for &(col, c) in &coeffs {
        match &expansions[col as usize] {
            Some(e) if matches!(labels[col as usize], NodeAction::Impulse(_)) => {
                rhs -= c * e.constant;
                for &(t, w) in &e.terms {
                    push_term(&mut expanded, t, c * w);
                }
            }
            _ => push_term(&mut expanded, col, c),
        }
    }
    RowKind::Linear { coeffs: expanded, rhs }
}

/// Exact solve of the labeled policy system. Marches along a pure-transport
/// dimension when one exists; the jump quadrature iterates explicitly.
#[allow(clippy::too_many_arguments)]
fn evaluate_policy(
    problem: &QviProblem,
    parts: &StencilParts,
    objective: &PlayerObjective,
    boundary: &BoundaryPolicy,
    labels: &[NodeAction],
    g: &[f64],
    prev: &[f64],
    stop_through: bool,
) -> Result<Vec<f64>, QviError> {
    let n = problem.grid.len();
    // transient labelings can produce self-referencing impulse chains;
    // demote those nodes and retry, erroring only when the policy is
    // structurally cyclic
    let mut labels_fixed: Vec<NodeAction> = labels.to_vec();
    let mut demotions = 0usize;
    let expansions = loop {
        match expand_impulses(problem, &objective.impulse_cash, &labels_fixed) {
            Ok(e) => break e,
            Err(QviError::NonContractiveImpulse(node)) => {
                demotions += 1;
                if demotions > n / 2 + 8 {
                    return Err(QviError::NonContractiveImpulse(node));
                }
                labels_fixed[node] = NodeAction::Continue;
            }
            Err(e) => return Err(e),
        }
    };
    let labels = &labels_fixed[..];
    let rows: Vec<RowKind> = (0..n)
        .map(|i| {
            build_row(problem, parts, objective, boundary, i, labels, &expansions, g, stop_through)
        })
        .collect();

    let has_jumps = !parts.jump.is_empty();
    let mut phi = prev.to_vec();
    let max_picard = if has_jumps { 4000 } else { 1 };
    let mut last_diff = 0.0;
    for _pic in 0..max_picard {
        let new_phi = solve_rows_direct(problem, &rows, labels, &expansions, parts, &phi, has_jumps)?;
        let mut diff = 0.0f64;
        let mut scale = 1.0f64;
        for i in 0..n {
            diff = diff.max((new_phi[i] - phi[i]).abs());
            scale = scale.max(new_phi[i].abs());
        }
        phi = new_phi;
        last_diff = diff / scale;
        if last_diff < 1e-13 {
            break;
        }
    }
    if has_jumps && last_diff > 1e-10 {
        return Err(QviError::SolverBreakdown(format!(
            "jump fixed point stalled at relative change {last_diff:.3e}"
        )));
    }
    Ok(phi)
}

/// One direct sweep: slice-marched banded solves with corrections, the jump
/// term taken explicitly from `phi_prev`.
fn solve_rows_direct(
    problem: &QviProblem,
    rows: &[RowKind],
    labels: &[NodeAction],
    expansions: &[Option<Expansion>],
    parts: &StencilParts,
    phi_prev: &[f64],
    has_jumps: bool,
) -> Result<Vec<f64>, QviError> {
    let grid = &problem.grid;
    let n = grid.len();
    let mut phi = vec![f64::NAN; n];

    // slice decomposition: in 2D, slices are lines of constant axis-1 index
    // (the transport direction of the reduced problems); in 1D one slice.
    let (n_slices, slice_len, stride): (usize, usize, usize) = if grid.dim() == 1 {
        (1, grid.axis(0).n, 1)
    } else {
        (grid.axis(1).n, grid.axis(0).n, grid.axis(1).n)
    };
    let dense_slice = analyze_solver_rows(parts, grid, problem.game.discount)?;

    for s in 0..n_slices {
        let base = if grid.dim() == 1 { 0 } else { s };
        let nodes: Vec<usize> = (0..slice_len).map(|p| base + p * stride).collect();
        let pos_of = |global: usize| -> Option<usize> {
            let off = global.checked_sub(base)?;
            if off % stride == 0 && off / stride < slice_len {
                Some(off / stride)
            } else {
                None
            }
        };
        // reduced unknowns: non-impulse nodes of the slice
        let mut red_index = vec![usize::MAX; slice_len];
        let mut red_nodes = Vec::new();
        for (p, &gidx) in nodes.iter().enumerate() {
            if !matches!(labels[gidx], NodeAction::Impulse(_)) {
                red_index[p] = red_nodes.len();
                red_nodes.push((p, gidx));
            }
        }
        if !red_nodes.is_empty() {
            let m = red_nodes.len();
            let mut lo = vec![0.0; m];
            let mut diag = vec![0.0; m];
            let mut up = vec![0.0; m];
            let mut rhs = vec![0.0; m];
            let mut corrections: Vec<(usize, usize, f64)> = Vec::new();

            for (r, &(_, gidx)) in red_nodes.iter().enumerate() {
                match &rows[gidx] {
                    RowKind::Dirichlet(v) => {
                        diag[r] = 1.0;
                        rhs[r] = *v;
                    }
                    RowKind::Linear { coeffs, rhs: row_rhs } => {
                        let mut b = *row_rhs;
                        if has_jumps {
                            b += parts.jump.apply_at(gidx, phi_prev);
                        }
                        for &(col, c) in coeffs {
                            let col = col as usize;
                            if let Some(p) = pos_of(col) {
                                let rr = red_index[p];
                                if rr == usize::MAX {
                                    return Err(QviError::SolverBreakdown(
                                        "impulse column survived expansion".into(),
                                    ));
                                }
                                match rr as isize - r as isize {
                                    0 => diag[r] += c,
                                    -1 => lo[rr + 1] += c,
                                    1 => up[rr - 1] += c,
                                    _ => corrections.push((r, rr, c)),
                                }
                            } else {
                                // cross-slice coupling: earlier slices are
                                // already solved when marching
                                let v = phi[col];
                                if v.is_nan() {
                                    return Err(QviError::SolverBreakdown(
                                        "slice marching hit an unsolved coupling; use the iterative path for elliptic 2D problems".into(),
                                    ));
                                }
                                b -= c * v;
                            }
                        }
                        rhs[r] = b;
                    }
                }
            }
            // slices flagged at the dominance crossover (or with many
            // nonlocal couplings) go through pivoted dense elimination
            let x = if dense_slice[s] || corrections.len() > 64 {
                let mut a = vec![vec![0.0; m]; m];
                let mut bb = rhs.clone();
                for r in 0..m {
                    a[r][r] = diag[r];
                    if r > 0 {
                        a[r][r - 1] = lo[r];
                    }
                    if r + 1 < m {
                        a[r][r + 1] = up[r];
                    }
                }
                for &(rr, cc, v) in &corrections {
                    a[rr][cc] += v;
                }
                dense_solve(&mut a, &mut bb)?
            } else {
                solve_banded_with_corrections(&lo, &diag, &up, &rhs, &corrections)?
            };
            for (r, &(_, gidx)) in red_nodes.iter().enumerate() {
                phi[gidx] = x[r];
            }
        }
        // back-fill impulse nodes of this slice where possible
        for &gidx in &nodes {
            if phi[gidx].is_nan() {
                if let Some(e) = &expansions[gidx] {
                    let mut v = e.constant;
                    let mut pending = false;
                    for &(t, w) in &e.terms {
                        if phi[t as usize].is_nan() {
                            pending = true;
                            break;
                        }
                        v += w * phi[t as usize];
                    }
                    if !pending {
                        phi[gidx] = v;
                    }
                }
            }
        }
    }
    // impulse nodes whose targets live in later slices
    for i in 0..n {
        if phi[i].is_nan() {
            if let Some(e) = &expansions[i] {
                let mut v = e.constant;
                for &(t, w) in &e.terms {
                    let tv = phi[t as usize];
                    if tv.is_nan() {
                        return Err(QviError::SolverBreakdown(
                            "impulse expansion references an unsolved node".into(),
                        ));
                    }
                    v += w * tv;
                }
                phi[i] = v;
            } else {
                return Err(QviError::SolverBreakdown(format!("node {i} left unsolved")));
            }
        }
    }
    Ok(phi)
}

// ---------------------------------------------------------------------------
// Policy iteration
// ---------------------------------------------------------------------------

/// Nodes within `band` index cells of a label-kind interface, per dimension.
fn interface_band(grid: &Grid, labels: &[NodeAction], band: usize) -> Vec<bool> {
    let n = grid.len();
    let mut mask = vec![false; n];
    let dims = grid.dim();
    for i in 0..n {
        let ij = grid.multi_index(i);
        for d in 0..dims {
            let step = if dims == 1 || d == 1 { 1 } else { grid.axis(1).n };
            if ij[d] + 1 < grid.axis(d).n {
                let j = i + step;
                if labels[i].kind() != labels[j].kind() {
                    for k in 0..=band {
                        if let Some(b) = i.checked_sub(k * step) {
                            mask[b] = true;
                        }
                        let f = j + k * step;
                        if f < n && grid.multi_index(f)[d] < grid.axis(d).n {
                            mask[f] = true;
                        }
                    }
                }
            }
        }
    }
    mask
}

/// Projected Gauss-Seidel sweeps on the double-obstacle complementarity with
/// a lagged intervention obstacle, restricted to the cells flagged in
/// `mask`: settles the free-boundary cells that label-based iteration
/// chatters on while leaving the exactly-evaluated field alone elsewhere.
/// Returns binding-based labels for the masked nodes (others keep `labels`).
#[allow(clippy::too_many_arguments)]
fn pgs_polish(
    problem: &QviProblem,
    parts: &StencilParts,
    objective: &PlayerObjective,
    boundary: &BoundaryPolicy,
    g: &[f64],
    phi: &mut [f64],
    labels: &[NodeAction],
    mask: &[bool],
    cs: Sense,
    ss: Sense,
    project_impulse: bool,
    project_stop: bool,
    sweeps: usize,
) -> Result<Vec<NodeAction>, QviError> {
    let grid = &problem.grid;
    let n = grid.len();
    let delta = problem.game.discount;
    let mut game = problem.game.clone();
    game.intervention.impulse_cash = objective.impulse_cash.clone();
    let compute_m = |phi: &[f64]| -> Result<Option<InterventionResult>, QviError> {
        if !project_impulse {
            return Ok(None);
        }
        let f = GridFunction::new(grid.clone(), phi.to_vec())?.with_boundary(boundary.clone());
        Ok(Some(intervention_operator(&game, &f, objective.sense, problem.n_z)?))
    };
    let mut m = compute_m(phi)?;
    let fvals: Vec<f64> = (0..n).map(|i| objective.running_at(&node_state(grid, i))).collect();
    let scale = phi.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    for sweep in 0..sweeps {
        if sweep > 0 && sweep % 16 == 0 {
            m = compute_m(phi)?;
        }
        let mut max_delta = 0.0f64;
        for i in 0..n {
            if !mask[i] {
                continue;
            }
            let row = &parts.local.rows[i];
            let new = if row.edge {
                match boundary {
                    BoundaryPolicy::DirichletBequest => g[i],
                    BoundaryPolicy::DirichletData(data) => data[i],
                    BoundaryPolicy::ExtrapolateLinear => {
                        let (n1, n2) = extrapolation_stencil(grid, i);
                        2.0 * phi[n1] - phi[n2]
                    }
                }
            } else {
                // unconstrained Gauss-Seidel value of the continue row
                let mut diag = delta + parts.jump.intensity[i];
                let mut num = fvals[i] + parts.jump.apply_at(i, phi);
                let mut row_scale = delta.abs();
                for &(col, c) in &row.entries {
                    row_scale = row_scale.max(c.abs());
                    if col as usize == i {
                        diag -= c;
                    } else {
                        num += c * phi[col as usize];
                    }
                }
                if diag.abs() < 1e-9 * row_scale {
                    // dominance crossover: relaxation is undefined here,
                    // leave the exactly-evaluated value alone
                    continue;
                }
                let tilde = num / diag;
                // obstacle projection per player senses, stopper first
                let mut v = tilde;
                if let Some(m) = &m {
                    if m.optimizer[i].is_finite() {
                        let mv = m.m_phi.values[i];
                        v = match cs {
                            Sense::Maximize => v.max(mv),
                            Sense::Minimize => v.min(mv),
                        };
                    }
                }
                if project_stop {
                    v = match ss {
                        Sense::Maximize => v.max(g[i]),
                        Sense::Minimize => v.min(g[i]),
                    };
                }
                v
            };
            max_delta = max_delta.max((new - phi[i]).abs());
            phi[i] = new;
        }
        if max_delta < 1e-14 * scale {
            break;
        }
    }
    // final labels from the binding structure on the polished band
    let m = compute_m(phi)?;
    let degenerate = match &m {
        Some(m) => degenerate_impulses(problem, &m.optimizer),
        None => vec![false; n],
    };
    let eps = 1e-9 * scale;
    let mut out = labels.to_vec();
    for i in 0..n {
        if !mask[i] {
            continue;
        }
        let stop_binds = project_stop
            && match ss {
                Sense::Maximize => phi[i] <= g[i] + eps,
                Sense::Minimize => phi[i] >= g[i] - eps,
            };
        let impulse_binds = m.as_ref().is_some_and(|m| {
            m.optimizer[i].is_finite()
                && !degenerate[i]
                && match cs {
                    Sense::Maximize => phi[i] <= m.m_phi.values[i] + eps,
                    Sense::Minimize => phi[i] >= m.m_phi.values[i] - eps,
                }
        });
        out[i] = if stop_binds {
            NodeAction::Stop
        } else if impulse_binds {
            NodeAction::Impulse(m.as_ref().unwrap().optimizer[i])
        } else {
            NodeAction::Continue
        };
    }
    Ok(out)
}

fn extrapolation_stencil(grid: &Grid, i: usize) -> (usize, usize) {
    let ij = grid.multi_index(i);
    let mut pick = (0usize, 1isize);
    for d in 0..grid.dim() {
        if ij[d] == 0 {
            pick = (d, 1);
            break;
        }
        if ij[d] == grid.axis(d).n - 1 {
            pick = (d, -1);
            break;
        }
    }
    let (d, sdir) = pick;
    let step: isize = if grid.dim() == 1 || d == 1 { 1 } else { grid.axis(1).n as isize };
    (((i as isize) + sdir * step) as usize, ((i as isize) + 2 * sdir * step) as usize)
}

struct RelabelOutcome {
    labels: Vec<NodeAction>,
}

/// Branch improvement per the double-obstacle complementarity. `frozen_stop`
/// fixes the stop set externally (controller sweeps of the best-response
/// loop); `frozen_impulse` fixes the impulse set (stopper sweeps).
///
/// `flips` carries per-node label-change counts; the switching threshold
/// widens geometrically with them (capped at `eps_cap` so a clearly signed
/// branch signal always wins), which damps free-boundary chattering.
#[allow(clippy::too_many_arguments)]
fn relabel(
    phi: &[f64],
    b: &Branches,
    cs: Sense,
    ss: Sense,
    labels: &[NodeAction],
    frozen_stop: Option<&[bool]>,
    frozen_impulse: Option<&[NodeAction]>,
    eps_base: f64,
    eps_cap: f64,
    flips: &[u32],
) -> RelabelOutcome {
    let n = phi.len();
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let eps = (eps_base * 4f64.powi(flips[i].min(24) as i32)).min(eps_cap);
        let m_val = b.m_at(i);
        let m_ok = m_val.is_some() && !b.degenerate[i];
        let m = m_val.unwrap_or(f64::NAN);
        let ctrl_improves = m_ok
            && match cs {
                Sense::Minimize => m < phi[i] - eps,
                Sense::Maximize => m > phi[i] + eps,
            };
        let stop_improves = match ss {
            Sense::Maximize => b.g[i] > phi[i] + eps,
            Sense::Minimize => b.g[i] < phi[i] - eps,
        };
        // release tests from the region characterization: the continue
        // branch wins when the PDE residual has the wrong sign for the
        // action region
        let stop_release = match ss {
            Sense::Maximize => b.lc[i] < -eps,
            Sense::Minimize => b.lc[i] > eps,
        };
        let impulse_release = match cs {
            Sense::Minimize => b.lc[i] > eps,
            Sense::Maximize => b.lc[i] < -eps,
        };
        let keep_impulse = || -> NodeAction {
            if impulse_release || !m_ok {
                NodeAction::Continue
            } else {
                NodeAction::Impulse(b.opt_at(i))
            }
        };
        let new = if let Some(fs) = frozen_stop {
            if fs[i] {
                NodeAction::Stop
            } else if ctrl_improves {
                NodeAction::Impulse(b.opt_at(i))
            } else if matches!(labels[i], NodeAction::Impulse(_)) {
                keep_impulse()
            } else {
                NodeAction::Continue
            }
        } else if let Some(fi) = frozen_impulse {
            if stop_improves {
                NodeAction::Stop
            } else if labels[i] == NodeAction::Stop && !stop_release {
                NodeAction::Stop
            } else if let NodeAction::Impulse(z) = fi[i] {
                NodeAction::Impulse(z)
            } else {
                NodeAction::Continue
            }
        } else {
            // full zero-sum relabel; stopper takes precedence on conflicts
            if stop_improves {
                NodeAction::Stop
            } else if ctrl_improves {
                NodeAction::Impulse(b.opt_at(i))
            } else {
                match labels[i] {
                    NodeAction::Stop => {
                        if stop_release {
                            NodeAction::Continue
                        } else {
                            NodeAction::Stop
                        }
                    }
                    NodeAction::Impulse(_) => keep_impulse(),
                    NodeAction::Continue => NodeAction::Continue,
                }
            }
        };
        out.push(new);
    }
    RelabelOutcome { labels: out }
}

struct SweepOutcome {
    iterations: usize,
    history: Vec<IterationStat>,
}

/// One player's Howard loop: relabel, exact policy evaluation, masked
/// projected polish; iterate until the labels are a fixed point (and, when
/// `residual_tol` is set, the double-obstacle residual is below it).
#[allow(clippy::too_many_arguments)]
fn howard_sweep(
    problem: &QviProblem,
    parts: &StencilParts,
    objective: &PlayerObjective,
    boundary: &BoundaryPolicy,
    cs: Sense,
    ss: Sense,
    frozen_stop: Option<&[bool]>,
    frozen_impulse: Option<&[NodeAction]>,
    stop_through: bool,
    residual_tol: Option<f64>,
    max_iter: usize,
    phi: &mut GridFunction,
    labels: &mut Vec<NodeAction>,
    flips: &mut [u32],
) -> Result<SweepOutcome, QviError> {
    let n = problem.grid.len();
    let need_m = frozen_impulse.is_none();
    let g: Vec<f64> =
        (0..n).map(|i| (objective.bequest)(&node_state(&problem.grid, i))).collect();
    let mut history = Vec::new();
    for iter in 0..max_iter {
        let b = branch_values(problem, objective, parts, phi, need_m)?;
        let eps = 1e-9 * (1.0 + phi.sup_norm());
        let eps_cap = 1e-3 * (1.0 + phi.sup_norm());
        let outcome =
            relabel(&phi.values, &b, cs, ss, labels, frozen_stop, frozen_impulse, eps, eps_cap, flips);

        let mut values = evaluate_policy(
            problem,
            parts,
            objective,
            boundary,
            &outcome.labels,
            &g,
            &phi.values,
            stop_through,
        )?;
        // the exact evaluation settles the field globally; the projected
        // sweeps settle the complementarity on a band around the label
        // interfaces, which label iteration alone chatters on
        let mut mask = interface_band(&problem.grid, &outcome.labels, 3);
        if let Some(fs) = frozen_stop {
            for i in 0..n {
                if fs[i] {
                    mask[i] = false;
                }
            }
        }
        if let Some(fi) = frozen_impulse {
            for i in 0..n {
                if matches!(fi[i], NodeAction::Impulse(_)) {
                    mask[i] = false;
                }
            }
        }
        let polished = pgs_polish(
            problem,
            parts,
            objective,
            boundary,
            &b.g,
            &mut values,
            &outcome.labels,
            &mask,
            cs,
            ss,
            need_m,
            frozen_stop.is_none() && !stop_through,
            48,
        )?;
        *phi = GridFunction::new(problem.grid.clone(), values)?.with_boundary(boundary.clone());
        let prev_labels = std::mem::replace(labels, polished);
        let mut changes = 0;
        for i in 0..n {
            if labels[i].kind() != prev_labels[i].kind() {
                changes += 1;
                if iter > 0 {
                    flips[i] += 2;
                }
            } else {
                flips[i] = flips[i].saturating_sub(1);
            }
        }

        let r = if let Some(tol) = residual_tol {
            let resid = qvi_residual(problem, phi)?;
            let r = interior_sup(&resid.values, &b.edge);
            if changes == 0 && iter > 0 && r < tol {
                history.push(IterationStat { iter, residual: r, label_changes: changes });
                return Ok(SweepOutcome { iterations: iter + 1, history });
            }
            r
        } else {
            if changes == 0 && iter > 0 {
                history.push(IterationStat { iter, residual: 0.0, label_changes: changes });
                return Ok(SweepOutcome { iterations: iter + 1, history });
            }
            0.0
        };
        history.push(IterationStat { iter, residual: r, label_changes: changes });
        log::debug!("howard sweep {iter}: residual {r:.3e}, {changes} label changes");
    }
    let changes = history.last().map_or(0, |h| h.label_changes);
    Err(QviError::LabelCycling { iters: max_iter, changes, sample: Vec::new() })
}

/// Howard policy iteration on the stationary zero-sum double-obstacle
/// system. Returns the value field and the final policy.
pub fn solve_qvi(
    problem: &QviProblem,
    tol: f64,
    max_iter: usize,
) -> Result<(GridFunction, PolicyState), QviError> {
    let parts = build_stencil_parts(&problem.game, &problem.grid)?;
    analyze_solver_rows(&parts, &problem.grid, problem.game.discount)?;
    let objective = problem.game.controller_objective().clone();
    let cs = problem.game.controller_sense();
    let ss = problem.game.stopper_sense();
    let n = problem.grid.len();

    // start from the bequest with an all-stop policy
    let g0: Vec<f64> = (0..n).map(|i| (objective.bequest)(&node_state(&problem.grid, i))).collect();
    let mut phi = problem.field(g0)?;
    let mut labels = vec![NodeAction::Stop; n];
    let mut flips = vec![0u32; n];
    let out = howard_sweep(
        problem,
        &parts,
        &objective,
        &problem.boundary,
        cs,
        ss,
        None,
        None,
        false,
        Some(tol),
        max_iter,
        &mut phi,
        &mut labels,
        &mut flips,
    )?;
    Ok((phi, PolicyState { labels, iterations: out.iterations, history: out.history }))
}

#[derive(Debug, Clone)]
pub struct NzsOptions {
    /// Player-1 field ignores the stop region (its rows stay continue /
    /// impulse there). Used when the stop set is unreachable along the flow
    /// and the controller's claim extends through it.
    pub p1_stop_through: bool,
    pub p1_boundary: BoundaryPolicy,
    pub p2_boundary: BoundaryPolicy,
    pub max_rounds: usize,
}

impl Default for NzsOptions {
    fn default() -> Self {
        NzsOptions {
            p1_stop_through: false,
            p1_boundary: BoundaryPolicy::DirichletBequest,
            p2_boundary: BoundaryPolicy::DirichletBequest,
            max_rounds: 40,
        }
    }
}

#[derive(Debug, Clone)]
pub struct NzsSolution {
    pub phi1: GridFunction,
    pub phi2: GridFunction,
    /// Combined labels: impulse set from player 1, stop set from player 2.
    pub policy: PolicyState,
    pub rounds: usize,
}

/// A 2D player subproblem whose data varies along a single axis: the field
/// is constant along the other axis (whose operator annihilates constants),
/// so it is solved on a line and broadcast. This is the well-posed route
/// for the reduced problems: pushing diffusion of one coordinate against a
/// marched transport in the other is a backward-parabolic coupling, and
/// fields that genuinely vary in both are rejected by the probes below.
struct LineReduction {
    dim: usize,
    problem: QviProblem,
    parts: StencilParts,
    objective: PlayerObjective,
    boundary: BoundaryPolicy,
    phi: GridFunction,
    labels: Vec<NodeAction>,
    flips: Vec<u32>,
}

impl LineReduction {
    /// Probes whether `objective`'s data varies along exactly one axis with
    /// autonomous coefficients there, and builds the line problem.
    fn detect(
        problem: &QviProblem,
        objective: &PlayerObjective,
        boundary: &BoundaryPolicy,
        impulse_player: bool,
    ) -> Option<LineReduction> {
        let grid = &problem.grid;
        if grid.dim() != 2 || !problem.game.diffusion.atoms.is_empty() {
            return None;
        }
        let probes = [0.21f64, 0.5, 0.83];
        let coord = |d: usize, t: f64| {
            let a = grid.axis(d);
            a.lo + t * (a.hi - a.lo)
        };
        let mut varies = [false; 2];
        for &ta in &probes {
            for &tb in &probes {
                for d in 0..2 {
                    let mut x = [0.0; crate::model::MAX_DIM];
                    x[d] = coord(d, ta);
                    x[1 - d] = coord(1 - d, 0.4);
                    let mut y = x;
                    y[d] = coord(d, tb);
                    if ((objective.bequest)(&x) - (objective.bequest)(&y)).abs() > 1e-12 {
                        varies[d] = true;
                    }
                    if let Some(f) = &objective.running {
                        if (f(&x) - f(&y)).abs() > 1e-12 {
                            varies[d] = true;
                        }
                    }
                }
            }
        }
        let dim = if impulse_player {
            // the active axis is the one the response moves
            let mut moved = [false; 2];
            for &ta in &probes {
                let mut x = [0.0; crate::model::MAX_DIM];
                x[0] = coord(0, ta);
                x[1] = coord(1, ta);
                let z = 0.5 * (problem.game.intervention.z_lo + problem.game.intervention.z_hi);
                let y = (problem.game.intervention.response)(&x, z);
                for d in 0..2 {
                    if (y[d] - x[d]).abs() > 1e-12 {
                        moved[d] = true;
                    }
                }
            }
            match (moved[0], moved[1]) {
                (true, false) => 0,
                (false, true) => 1,
                _ => return None,
            }
        } else {
            match (varies[0], varies[1]) {
                (true, false) => 0,
                (false, true) => 1,
                _ => return None,
            }
        };
        if impulse_player && varies[1 - dim] {
            return None;
        }
        // coefficients of the active axis must be autonomous in it
        for &ta in &probes {
            for &tb in &probes {
                let mut x = [0.0; crate::model::MAX_DIM];
                x[dim] = coord(dim, ta);
                x[1 - dim] = coord(1 - dim, 0.3);
                let mut y = x;
                y[1 - dim] = coord(1 - dim, tb);
                let (mx, my) =
                    ((problem.game.diffusion.drift)(0.0, &x), (problem.game.diffusion.drift)(0.0, &y));
                if (mx[dim] - my[dim]).abs() > 1e-12 * (1.0 + mx[dim].abs()) {
                    return None;
                }
                let (sx, sy) = (
                    (problem.game.diffusion.volatility)(0.0, &x),
                    (problem.game.diffusion.volatility)(0.0, &y),
                );
                for k in 0..problem.game.diffusion.drivers {
                    if (sx[dim][k] - sy[dim][k]).abs() > 1e-12 * (1.0 + sx[dim][k].abs()) {
                        return None;
                    }
                }
            }
        }

        // build the 1D game along the active axis
        let axis = *grid.axis(dim);
        let line_grid = Grid::line(axis.lo, axis.hi, axis.n).ok()?;
        let other_ref = coord(1 - dim, 0.4);
        let lift = move |x1: &crate::model::State| {
            let mut x = [0.0; crate::model::MAX_DIM];
            x[dim] = x1[0];
            x[1 - dim] = other_ref;
            x
        };
        let base = &problem.game;
        let d0 = base.diffusion.clone();
        let drift: crate::model::DriftFn = {
            let inner = d0.drift.clone();
            Arc::new(move |s, x1| {
                let full = inner(s, &lift(x1));
                let mut out = [0.0; crate::model::MAX_DIM];
                out[0] = full[dim];
                out
            })
        };
        let vol: crate::model::VolFn = {
            let inner = d0.volatility.clone();
            Arc::new(move |s, x1| {
                let full = inner(s, &lift(x1));
                let mut out = [[0.0; crate::model::MAX_DIM]; crate::model::MAX_DIM];
                out[0][..crate::model::MAX_DIM].copy_from_slice(&full[dim]);
                out
            })
        };
        let diffusion = crate::model::LevyDiffusionSpec {
            dim: 1,
            drivers: d0.drivers,
            drift,
            volatility: vol,
            jump_amplitude: Arc::new(|_x, _z| [0.0; crate::model::MAX_DIM]),
            atoms: Vec::new(),
            horizon: d0.horizon,
            geometric: None,
        };
        let response: crate::model::ResponseFn = {
            let inner = base.intervention.response.clone();
            Arc::new(move |x1, z| {
                let full = inner(&lift(x1), z);
                let mut out = *x1;
                out[0] = full[dim];
                out
            })
        };
        let intervention = crate::model::InterventionSpec {
            response,
            ..base.intervention.clone()
        };
        let objective_line = PlayerObjective {
            running: objective.running.as_ref().map(|f| {
                let f = f.clone();
                let out: crate::model::ScalarField = Arc::new(move |x1| f(&lift(x1)));
                out
            }),
            bequest: {
                let f = objective.bequest.clone();
                Arc::new(move |x1| f(&lift(x1)))
            },
            impulse_cash: objective.impulse_cash.clone(),
            sense: objective.sense,
        };
        let game = crate::model::GameSpec {
            diffusion,
            intervention,
            payoffs: GamePayoffs::ZeroSum { objective: objective_line.clone() },
            discount: base.discount,
            solvency: base.solvency,
        };
        let line_boundary = match boundary {
            BoundaryPolicy::DirichletData(data) => {
                // restrict the 2D data to the reference line
                let other = grid.axis(1 - dim);
                let t = ((other_ref - other.lo) / other.h()).round() as usize;
                let vals: Vec<f64> = (0..axis.n)
                    .map(|i| {
                        let idx = if dim == 0 { i * grid.axis(1).n + t } else { t * grid.axis(1).n + i };
                        data[idx]
                    })
                    .collect();
                BoundaryPolicy::DirichletData(Arc::new(vals))
            }
            other => other.clone(),
        };
        let n1 = axis.n;
        let g0: Vec<f64> = (0..n1)
            .map(|i| {
                let mut x1 = [0.0; crate::model::MAX_DIM];
                x1[0] = line_grid.coord(i)[0];
                (objective_line.bequest)(&x1)
            })
            .collect();
        let phi = GridFunction::new(line_grid.clone(), g0).ok()?.with_boundary(line_boundary.clone());
        let line_problem = QviProblem {
            game,
            grid: line_grid.clone(),
            boundary: line_boundary.clone(),
            n_z: problem.n_z,
        };
        let parts = build_stencil_parts(&line_problem.game, &line_grid).ok()?;
        Some(LineReduction {
            dim,
            problem: line_problem,
            parts,
            objective: objective_line,
            boundary: line_boundary,
            phi,
            labels: vec![NodeAction::Stop; n1],
            flips: vec![0u32; n1],
        })
    }

    /// Broadcasts the line field and labels onto the 2D grid.
    fn broadcast(&self, grid: &Grid) -> (Vec<f64>, Vec<NodeAction>) {
        let n = grid.len();
        let mut values = vec![0.0; n];
        let mut labels = vec![NodeAction::Continue; n];
        for idx in 0..n {
            let ij = grid.multi_index(idx);
            let li = ij[self.dim];
            values[idx] = self.phi.values[li];
            labels[idx] = self.labels[li];
        }
        (values, labels)
    }
}


/// Exact single-pass solve of a one-dimensional pure-transport obstacle
/// problem marched from the inflow boundary: each node depends only on its
/// upwind-source neighbor, so the complementarity
/// `phi_i = project(((b/h) phi_{i-1} - f_i) / (b/h - delta))` resolves in
/// one sweep. The inflow edge takes the bequest (the flow leaves it, and in
/// the reduced problems it sits inside the stop set).
fn solve_transport_obstacle_line(
    problem: &QviProblem,
    parts: &StencilParts,
    objective: &PlayerObjective,
    ss: Sense,
) -> Result<(Vec<f64>, Vec<NodeAction>), QviError> {
    let grid = &problem.grid;
    let n = grid.len();
    let delta = problem.game.discount;
    let g: Vec<f64> = (0..n).map(|i| (objective.bequest)(&node_state(grid, i))).collect();
    // direction from the one-sided rows
    let mut ascending = true;
    let mut found = false;
    for (i, row) in parts.local.rows.iter().enumerate() {
        for &(col, _) in &row.entries {
            if (col as usize) != i {
                ascending = (col as usize) < i;
                found = true;
                break;
            }
        }
        if found {
            break;
        }
    }
    let order: Vec<usize> = if ascending { (0..n).collect() } else { (0..n).rev().collect() };
    let mut phi = vec![0.0; n];
    let mut labels = vec![NodeAction::Stop; n];
    let scale = g.iter().fold(1.0f64, |s, v| s.max(v.abs()));
    for (pos, &i) in order.iter().enumerate() {
        let x = node_state(grid, i);
        let f = objective.running_at(&x);
        let tilde = if pos == 0 {
            g[i]
        } else {
            let row = &parts.local.rows[i];
            let mut diag = delta;
            let mut num = f;
            for &(col, c) in &row.entries {
                if col as usize == i {
                    diag -= c;
                } else {
                    num += c * phi[col as usize];
                }
            }
            if diag.abs() < 1e-300 {
                return Err(QviError::SolverBreakdown("transport line pivot vanished".into()));
            }
            num / diag
        };
        let v = match ss {
            Sense::Minimize => tilde.min(g[i]),
            Sense::Maximize => tilde.max(g[i]),
        };
        phi[i] = v;
        labels[i] = if (v - g[i]).abs() <= 1e-9 * scale {
            NodeAction::Stop
        } else {
            NodeAction::Continue
        };
    }
    Ok((phi, labels))
}

/// Best-response iteration for the non-zero-sum game: solve the stopper's
/// obstacle problem under the frozen impulse policy, then the controller's
/// impulse system under the frozen stop region; alternate until both label
/// sets are fixed. Oscillation is reported, not hidden.
pub fn solve_nonzero_sum(
    problem: &QviProblem,
    tol: f64,
    max_iter: usize,
    options: &NzsOptions,
) -> Result<NzsSolution, QviError> {
    let (controller, stopper) = match &problem.game.payoffs {
        GamePayoffs::NonZeroSum { controller, stopper } => (controller.clone(), stopper.clone()),
        GamePayoffs::ZeroSum { .. } => {
            return Err(QviError::SpecRejected(
                "solve_nonzero_sum needs a non-zero-sum payoff pair".into(),
            ))
        }
    };
    let parts = build_stencil_parts(&problem.game, &problem.grid)?;
    analyze_solver_rows(&parts, &problem.grid, problem.game.discount)?;
    let n = problem.grid.len();
    let cs = controller.sense;
    let ss = stopper.sense;

    let g1: Vec<f64> = (0..n).map(|i| (controller.bequest)(&node_state(&problem.grid, i))).collect();
    let g2: Vec<f64> = (0..n).map(|i| (stopper.bequest)(&node_state(&problem.grid, i))).collect();

    let mut phi1 =
        GridFunction::new(problem.grid.clone(), g1)?.with_boundary(options.p1_boundary.clone());
    let mut phi2 =
        GridFunction::new(problem.grid.clone(), g2)?.with_boundary(options.p2_boundary.clone());
    let mut labels1 = vec![NodeAction::Continue; n]; // controller's impulse set
    let mut labels2 = vec![NodeAction::Stop; n]; // stopper's labels under p1's policy
    let mut flips1 = vec![0u32; n];
    let mut flips2 = vec![0u32; n];
    let mut prev_stop_set: Option<Vec<bool>> = None;
    let mut prev_impulse_set: Option<Vec<bool>> = None;
    let mut last_p1_changes = usize::MAX;
    let mut last_p2_changes = usize::MAX;

    let p1_problem = {
        let mut p = problem.clone();
        p.boundary = options.p1_boundary.clone();
        p
    };
    let p2_problem = {
        let mut p = problem.clone();
        p.boundary = options.p2_boundary.clone();
        p
    };

    // separable 2D subproblems run on their active axis and broadcast
    let mut line2 = LineReduction::detect(&p2_problem, &stopper, &options.p2_boundary, false);
    let mut line1 = if options.p1_stop_through {
        LineReduction::detect(&p1_problem, &controller, &options.p1_boundary, true)
    } else {
        None
    };
    if line2.is_some() {
        log::debug!("stopper subproblem reduced to axis {}", line2.as_ref().unwrap().dim);
    }
    if line1.is_some() {
        log::debug!("controller subproblem reduced to axis {}", line1.as_ref().unwrap().dim);
    }

    for round in 0..options.max_rounds {
        // --- stopper best response under the frozen impulse policy ---
        if let Some(line) = &mut line2 {
            // pure-transport lines resolve in one exact marching pass;
            // diffusive lines go through the standard sweep
            // a transport row carries at most the diagonal and one neighbor
            let pure_transport = line.parts.local.rows.iter().all(|r| r.entries.len() <= 2);
            if pure_transport {
                let (values, lab) = solve_transport_obstacle_line(
                    &line.problem,
                    &line.parts,
                    &line.objective,
                    ss,
                )?;
                line.phi = GridFunction::new(line.problem.grid.clone(), values)?
                    .with_boundary(line.boundary.clone());
                line.labels = lab;
            } else {
                let frozen_cont = vec![NodeAction::Continue; line.problem.grid.len()];
                let mut phi = line.phi.clone();
                let mut labels = line.labels.clone();
                howard_sweep(
                    &line.problem,
                    &line.parts,
                    &line.objective,
                    &line.boundary,
                    cs,
                    ss,
                    None,
                    Some(&frozen_cont),
                    false,
                    None,
                    max_iter,
                    &mut phi,
                    &mut labels,
                    &mut line.flips,
                )?;
                line.phi = phi;
                line.labels = labels;
            }
            let (values, lab) = line.broadcast(&problem.grid);
            phi2 = GridFunction::new(problem.grid.clone(), values)?
                .with_boundary(options.p2_boundary.clone());
            labels2 = lab;
        } else {
            howard_sweep(
                &p2_problem,
                &parts,
                &stopper,
                &options.p2_boundary,
                cs,
                ss,
                None,
                Some(&labels1),
                false,
                None,
                max_iter,
                &mut phi2,
                &mut labels2,
                &mut flips2,
            )?;
        }
        let stop_set: Vec<bool> = labels2.iter().map(|l| matches!(l, NodeAction::Stop)).collect();

        // --- controller best response under the frozen stop region ---
        if let Some(line) = &mut line1 {
            let frozen = vec![false; line.problem.grid.len()];
            let mut phi = line.phi.clone();
            let mut labels = line.labels.clone();
            howard_sweep(
                &line.problem,
                &line.parts,
                &line.objective,
                &line.boundary,
                cs,
                ss,
                Some(&frozen),
                None,
                true,
                None,
                max_iter,
                &mut phi,
                &mut labels,
                &mut line.flips,
            )?;
            line.phi = phi;
            line.labels = labels;
            let (values, lab) = line.broadcast(&problem.grid);
            phi1 = GridFunction::new(problem.grid.clone(), values)?
                .with_boundary(options.p1_boundary.clone());
            labels1 = lab;
        } else {
            let frozen: Vec<bool> =
                if options.p1_stop_through { vec![false; n] } else { stop_set.clone() };
            howard_sweep(
                &p1_problem,
                &parts,
                &controller,
                &options.p1_boundary,
                cs,
                ss,
                Some(&frozen),
                None,
                options.p1_stop_through,
                None,
                max_iter,
                &mut phi1,
                &mut labels1,
                &mut flips1,
            )?;
        }
        let impulse_set: Vec<bool> =
            labels1.iter().map(|l| matches!(l, NodeAction::Impulse(_))).collect();

        let p2_changes = prev_stop_set
            .as_ref()
            .map_or(n, |p| (0..n).filter(|&i| p[i] != stop_set[i]).count());
        let p1_changes = prev_impulse_set
            .as_ref()
            .map_or(n, |p| (0..n).filter(|&i| p[i] != impulse_set[i]).count());
        log::debug!("best-response round {round}: p1 {p1_changes} / p2 {p2_changes} changes");
        if p1_changes == 0 && p2_changes == 0 {
            let mut labels = Vec::with_capacity(n);
            for i in 0..n {
                labels.push(if stop_set[i] { NodeAction::Stop } else { labels1[i] });
            }
            let policy = PolicyState {
                labels,
                iterations: round + 1,
                history: vec![IterationStat { iter: round, residual: tol, label_changes: 0 }],
            };
            return Ok(NzsSolution { phi1, phi2, policy, rounds: round + 1 });
        }
        prev_stop_set = Some(stop_set);
        prev_impulse_set = Some(impulse_set);
        last_p1_changes = p1_changes;
        last_p2_changes = p2_changes;
    }
    Err(QviError::BestResponseOscillation {
        rounds: options.max_rounds,
        p1_changes: last_p1_changes,
        p2_changes: last_p2_changes,
    })
}
