//! Semi-Lagrangian value iteration for the discounted (Kruzhkov-transformed)
//! minimum-time game.
//!
//! The transformed value `u = 1 - exp(-T)` satisfies `u + H(x, Du) = 0` off
//! the target with `u = 0` on it, where
//!
//! ```text
//! H(x, p) = rho_a sum_i g_i |p_i| - rho_b |sum_i h_i p_i| - sum_i l_i . p_i - 1
//! ```
//!
//! in relative coordinates and
//! `H = rho_a sum_i g(y_i) |p_i| - rho_b h(y_e) |p_e| - 1` in absolute ones.
//! The discrete problem is the fixed point of
//!
//! ```text
//! u(x) = max_b min_a [ e^{-dt} u(x + dt f(x, a, b)) ] + 1 - e^{-dt}
//! ```
//!
//! iterated with Jacobi sweeps from `u = 1` off the target. Controls are
//! sampled on the boundary spheres of the control balls (plus `b = 0`).

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Axis, GridError, TensorGrid, ValueField};
use crate::model::{
    check_hypothesis_h, norm, Coefficients, CoordinateMode, GameSpec, HypothesisReport, ModelError,
    TargetSelect, DEFAULT_HYPOTHESIS_SAMPLES,
};
use crate::sampling::{halton_points, StateBox};

/// Node budget above which a direct solve is refused.
pub const DEFAULT_NODE_BUDGET: u128 = 20_000_000;

/// Fraction of the CFL-like step `min spacing / max speed` used by default.
/// Memory allowed for cached foot-point cells per solve.
pub const STENCIL_CACHE_BYTES: usize = 256 << 20;

pub const DEFAULT_COURANT: f64 = 0.8;

/// Nodes per parallel work item.
const CHUNK: usize = 1024;

#[derive(Debug, Error)]
pub enum SolveError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
    #[error("hypothesis (H) fails: margin {:.6} at pursuer {} (sign violations: {})", .0.min_margin, .0.worst_pursuer + 1, .0.sign_violations)]
    HypothesisFailed(Box<HypothesisReport>),
    #[error("capture radius {r} is smaller than the grid spacing {spacing}; use r >= {spacing} or refine the grid")]
    UnresolvedTarget { r: f64, spacing: f64 },
    #[error("no grid node lies in the target set")]
    EmptyTarget,
    #[error("grid has dimension {found}, game state has dimension {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid solve parameters: {0}")]
    InvalidParams(String),
    #[error("grid has {nodes} nodes, over the budget of {budget}")]
    BudgetExceeded { nodes: u128, budget: u128 },
}

/// Which player's extremum is taken on the outside.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControlOrder {
    /// `max_b min_a`.
    EvaderOuter,
    /// `min_a max_b`.
    PursuerOuter,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveParams {
    /// Defaults to `0.8 * min spacing / max speed bound` over the grid.
    pub time_step: Option<f64>,
    /// Samples per control sphere; defaults to 2 for n = 1, 32 otherwise.
    pub control_samples: Option<usize>,
    pub tolerance: f64,
    pub max_iterations: usize,
    pub target: TargetSelect,
    pub order: ControlOrder,
    pub hypothesis_samples: usize,
}

impl Default for SolveParams {
    fn default() -> Self {
        SolveParams {
            time_step: None,
            control_samples: None,
            tolerance: 1e-6,
            max_iterations: 100_000,
            target: TargetSelect::All,
            order: ControlOrder::EvaderOuter,
            hypothesis_samples: DEFAULT_HYPOTHESIS_SAMPLES,
        }
    }
}

pub fn default_control_samples(n: usize) -> usize {
    match n {
        1 => 2,
        2 => 32,
        _ => 64,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolveReport {
    pub iterations: usize,
    pub residual: f64,
    pub converged: bool,
    pub time_step: f64,
    pub control_samples: usize,
    pub wall_clock_seconds: f64,
    pub nodes: usize,
    /// Largest single-node increase between consecutive sweeps.
    pub max_sweep_increase: f64,
    /// Value range seen across all sweeps.
    pub min_value: f64,
    pub max_value: f64,
    pub hypothesis: HypothesisReport,
    #[serde(skip)]
    pub residual_history: Vec<f64>,
}

impl SolveReport {
    /// Geometric-mean ratio of successive residuals over the last `window`
    /// sweeps.
    pub fn contraction_factor(&self, window: usize) -> Option<f64> {
        let h = &self.residual_history;
        if h.len() <= window {
            return None;
        }
        let last = h[h.len() - 1];
        let first = h[h.len() - 1 - window];
        if first <= 0.0 || last <= 0.0 {
            return None;
        }
        Some((last / first).powf(1.0 / window as f64))
    }
}

#[derive(Debug, Clone)]
pub struct Solved {
    pub field: ValueField,
    pub report: SolveReport,
}

/// Evaluates the game Hamiltonian at `x` for a gradient `p` of full state
/// dimension.
pub fn hamiltonian(spec: &GameSpec, x: &[f64], p: &[f64]) -> Result<f64, ModelError> {
    spec.check_dim(p)?;
    let c = spec.coefficients(x)?;
    Ok(hamiltonian_with(spec, &c, p))
}

pub fn hamiltonian_with(spec: &GameSpec, c: &Coefficients, p: &[f64]) -> f64 {
    let (m, n) = (spec.pursuers(), spec.space_dim());
    let pursuit: f64 = (0..m).map(|i| c.g[i] * norm(&p[i * n..(i + 1) * n])).sum::<f64>() * spec.rho_a();
    match spec.mode() {
        CoordinateMode::Relative => {
            let mut q = vec![0.0; n];
            let mut drift = 0.0;
            for i in 0..m {
                for k in 0..n {
                    q[k] += c.h[i] * p[i * n + k];
                    drift += c.l[i * n + k] * p[i * n + k];
                }
            }
            pursuit - spec.rho_b() * norm(&q) - drift - 1.0
        }
        CoordinateMode::Absolute => pursuit - spec.rho_b() * c.h[0] * norm(&p[m * n..]) - 1.0,
    }
}

/// Deterministic directions on the sphere of radius `radius` in `R^n`.
pub fn sphere_points(n: usize, count: usize, radius: f64) -> Vec<Vec<f64>> {
    match n {
        1 => vec![vec![-radius], vec![radius]],
        2 => (0..count)
            .map(|k| {
                let theta = 2.0 * std::f64::consts::PI * k as f64 / count as f64;
                vec![radius * theta.cos(), radius * theta.sin()]
            })
            .collect(),
        _ => {
            let mut out = Vec::with_capacity(count.max(2 * n));
            for k in 0..n {
                for s in [1.0, -1.0] {
                    let mut v = vec![0.0; n];
                    v[k] = s * radius;
                    out.push(v);
                }
            }
            let extra = count.saturating_sub(2 * n);
            let cube = StateBox::cube(n, -1.0, 1.0);
            for p in halton_points(&cube, extra + 1, 0).into_iter().skip(1) {
                let len = norm(&p);
                if len > 1e-9 {
                    out.push(p.iter().map(|v| radius * v / len).collect());
                }
            }
            out
        }
    }
}

/// Rejects grids above the node budget without allocating them.
pub fn check_budget(axes: &[Axis], budget: u128) -> Result<(), SolveError> {
    let nodes = TensorGrid::count_nodes(axes);
    if nodes > budget {
        return Err(SolveError::BudgetExceeded { nodes, budget });
    }
    Ok(())
}

/// Everything a sweep needs, precomputed per node.
pub struct Scheme<'a> {
    spec: &'a GameSpec,
    grid: &'a TensorGrid,
    order: ControlOrder,
    dt: f64,
    decay: f64,
    control_samples: usize,
    /// Flattened pursuer control combinations, `m*n` per entry.
    pursuer_controls: Vec<f64>,
    evader_controls: Vec<Vec<f64>>,
    coords: Vec<f64>,
    coeffs: Vec<Coefficients>,
    in_target: Vec<bool>,
    stencils: Option<Stencils>,
}

/// Foot-point cells for every (node, evader control, pursuer control),
/// laid out evader-major. They do not change between sweeps.
struct Stencils {
    base: Vec<u32>,
    t: Vec<f64>,
}

impl<'a> Scheme<'a> {
    pub fn new(spec: &'a GameSpec, params: &SolveParams, grid: &'a TensorGrid) -> Result<Self, SolveError> {
        let d = spec.state_dim();
        if grid.dim() != d {
            return Err(SolveError::Dimension {
                expected: d,
                found: grid.dim(),
            });
        }
        if !(params.tolerance > 0.0) {
            return Err(SolveError::InvalidParams("tolerance must be positive".into()));
        }
        if let TargetSelect::Pursuer(i) = params.target {
            if i >= spec.pursuers() {
                return Err(SolveError::InvalidParams(format!("target pursuer {i} out of range")));
            }
        }
        let (m, n) = (spec.pursuers(), spec.space_dim());
        let control_samples = params.control_samples.unwrap_or_else(|| default_control_samples(n));
        if control_samples < 2 {
            return Err(SolveError::InvalidParams("need at least 2 control samples".into()));
        }

        // Capture resolution: r must cover a grid cell on the axes it involves.
        let r = spec.capture_radius();
        let spacing = grid.spacing();
        let mut involved: Vec<usize> = match params.target {
            TargetSelect::All => (0..m * n).collect(),
            TargetSelect::Pursuer(i) => (i * n..(i + 1) * n).collect(),
        };
        if spec.mode() == CoordinateMode::Absolute {
            involved.extend(m * n..(m + 1) * n);
        }
        let coarsest = involved.iter().map(|&k| spacing[k]).fold(0.0, f64::max);
        if r < coarsest * (1.0 - 1e-9) {
            return Err(SolveError::UnresolvedTarget { r, spacing: coarsest });
        }

        let len = grid.len();
        let mut coords = vec![0.0; len * d];
        let mut coeffs = Vec::with_capacity(len);
        let mut in_target = Vec::with_capacity(len);
        let mut vmax: f64 = 0.0;
        for i in 0..len {
            let x = &mut coords[i * d..(i + 1) * d];
            grid.node_coords(i, x);
            let c = spec.coefficients(x)?;
            vmax = vmax.max(spec.speed_bound(&c));
            in_target.push(spec.in_target(x, params.target));
            coeffs.push(c);
        }
        if !in_target.iter().any(|t| *t) {
            return Err(SolveError::EmptyTarget);
        }
        let dt = match params.time_step {
            Some(dt) if dt > 0.0 && dt.is_finite() => dt,
            Some(_) => return Err(SolveError::InvalidParams("time step must be positive".into())),
            None => {
                if vmax <= 0.0 {
                    return Err(SolveError::InvalidParams("zero speed bound over the grid".into()));
                }
                DEFAULT_COURANT * grid.min_spacing() / vmax
            }
        };

        let sphere_a = sphere_points(n, control_samples, spec.rho_a());
        let mut pursuer_controls = Vec::new();
        let mut digits = vec![0usize; m];
        loop {
            for &k in &digits {
                pursuer_controls.extend_from_slice(&sphere_a[k]);
            }
            let mut pos = 0;
            while pos < m {
                digits[pos] += 1;
                if digits[pos] < sphere_a.len() {
                    break;
                }
                digits[pos] = 0;
                pos += 1;
            }
            if pos == m {
                break;
            }
        }
        let mut evader_controls = vec![vec![0.0; n]];
        evader_controls.extend(sphere_points(n, control_samples, spec.rho_b()));

        Ok(Scheme {
            spec,
            grid,
            order: params.order,
            dt,
            decay: (-dt).exp(),
            control_samples,
            pursuer_controls,
            evader_controls,
            coords,
            coeffs,
            in_target,
            stencils: None,
        })
    }

    fn stencil_bytes(&self) -> Option<usize> {
        let per_node = self.a_count() * self.evader_controls.len();
        let entry = 4 + 8 * self.grid.dim();
        self.grid.len().checked_mul(per_node)?.checked_mul(entry)
    }

    /// Caches all foot-point cells when they fit in `max_bytes`. Returns
    /// whether the cache was built.
    pub fn precompute_stencils(&mut self, max_bytes: usize) -> bool {
        if self.grid.len() > u32::MAX as usize || self.stencil_bytes().is_none_or(|b| b > max_bytes) {
            return false;
        }
        let d = self.grid.dim();
        let (a_count, b_count) = (self.a_count(), self.evader_controls.len());
        let per_node = a_count * b_count;
        let mut base = vec![0u32; self.grid.len() * per_node];
        let mut t = vec![0.0; self.grid.len() * per_node * d];
        let this = &*self;
        base.par_chunks_mut(per_node)
            .zip(t.par_chunks_mut(per_node * d))
            .enumerate()
            .for_each(|(node, (base, t))| {
                if this.in_target[node] {
                    return;
                }
                let mut b_pt = vec![0.0; d];
                let mut foot = vec![0.0; d];
                for (bi, b) in this.evader_controls.iter().enumerate() {
                    this.evader_base(node, b, &mut b_pt);
                    for ai in 0..a_count {
                        let k = bi * a_count + ai;
                        this.foot_point(node, &b_pt, this.a_at(ai), &mut foot);
                        base[k] = this.grid.locate_point(&foot, &mut t[k * d..(k + 1) * d]).0 as u32;
                    }
                }
            });
        self.stencils = Some(Stencils { base, t });
        true
    }

    fn a_count(&self) -> usize {
        self.pursuer_controls.len() / (self.spec.pursuers() * self.spec.space_dim())
    }

    fn a_at(&self, ai: usize) -> &[f64] {
        let width = self.spec.pursuers() * self.spec.space_dim();
        &self.pursuer_controls[ai * width..(ai + 1) * width]
    }

    pub fn time_step(&self) -> f64 {
        self.dt
    }

    pub fn control_samples(&self) -> usize {
        self.control_samples
    }

    pub fn in_target(&self, node: usize) -> bool {
        self.in_target[node]
    }

    /// Initial iterate: 0 on the target, 1 elsewhere.
    pub fn initial_values(&self) -> Vec<f64> {
        self.in_target.iter().map(|t| if *t { 0.0 } else { 1.0 }).collect()
    }

    /// Foot-point base after applying the evader control: pursuer
    /// coordinates are displaced by drift and (relative mode) evader
    /// coupling; evader coordinates by the evader velocity.
    fn evader_base(&self, node: usize, b: &[f64], base: &mut [f64]) {
        let (m, n) = (self.spec.pursuers(), self.spec.space_dim());
        let d = self.grid.dim();
        let x = &self.coords[node * d..(node + 1) * d];
        let c = &self.coeffs[node];
        match self.spec.mode() {
            CoordinateMode::Relative => {
                for i in 0..m {
                    for k in 0..n {
                        let j = i * n + k;
                        base[j] = x[j] + self.dt * (c.h[i] * b[k] + c.l[j]);
                    }
                }
            }
            CoordinateMode::Absolute => {
                base[..m * n].copy_from_slice(&x[..m * n]);
                for k in 0..n {
                    base[m * n + k] = x[m * n + k] + self.dt * c.h[0] * b[k];
                }
            }
        }
    }

    #[inline]
    fn foot_point(&self, node: usize, base: &[f64], a: &[f64], foot: &mut [f64]) {
        let n = self.spec.space_dim();
        let c = &self.coeffs[node];
        foot.copy_from_slice(base);
        for (j, aj) in a.iter().enumerate() {
            foot[j] -= self.dt * c.g[j / n] * aj;
        }
    }

    /// One Bellman update at `node` reading the previous iterate `prev`.
    pub fn update(&self, prev: &[f64], node: usize, scratch: &mut Scratch) -> f64 {
        if self.in_target[node] {
            return 0.0;
        }
        let a_count = self.a_count();
        let b_count = self.evader_controls.len();
        let d = self.grid.dim();
        let best = match &self.stencils {
            Some(st) => {
                let per_node = a_count * b_count;
                let cells = &st.base[node * per_node..(node + 1) * per_node];
                let offsets = &st.t[node * per_node * d..(node + 1) * per_node * d];
                if d == 1 {
                    self.saddle(a_count, b_count, |k| {
                        let i = cells[k] as usize;
                        prev[i] + offsets[k] * (prev[i + 1] - prev[i])
                    })
                } else {
                    self.saddle(a_count, b_count, |k| {
                        self.grid.blend(prev, cells[k] as usize, &offsets[k * d..(k + 1) * d])
                    })
                }
            }
            None => {
                let Scratch { bases, foot } = scratch;
                if bases.len() != b_count * d {
                    bases.resize(b_count * d, 0.0);
                }
                for (bi, b) in self.evader_controls.iter().enumerate() {
                    self.evader_base(node, b, &mut bases[bi * d..(bi + 1) * d]);
                }
                self.saddle(a_count, b_count, |k| {
                    let (bi, ai) = (k / a_count, k % a_count);
                    self.foot_point(node, &bases[bi * d..(bi + 1) * d], self.a_at(ai), foot);
                    self.grid.interpolate(prev, foot).0
                })
            }
        };
        self.decay * best + (1.0 - self.decay)
    }

    /// Max over evader controls of min over pursuer controls (or the
    /// reverse), with `value(b * a_count + a)` the propagated value. Inner
    /// loops stop as soon as they cannot change the outer optimum.
    #[inline(always)]
    fn saddle(&self, a_count: usize, b_count: usize, mut value: impl FnMut(usize) -> f64) -> f64 {
        match self.order {
            ControlOrder::EvaderOuter => {
                let mut best = f64::NEG_INFINITY;
                for bi in 0..b_count {
                    let mut inner = f64::INFINITY;
                    for ai in 0..a_count {
                        inner = inner.min(value(bi * a_count + ai));
                        if inner <= best {
                            break;
                        }
                    }
                    best = best.max(inner);
                }
                best
            }
            ControlOrder::PursuerOuter => {
                let mut best = f64::INFINITY;
                for ai in 0..a_count {
                    let mut inner = f64::NEG_INFINITY;
                    for bi in 0..b_count {
                        inner = inner.max(value(bi * a_count + ai));
                        if inner >= best {
                            break;
                        }
                    }
                    best = best.min(inner);
                }
                best
            }
        }
    }

    /// One Jacobi sweep `prev -> next`.
    pub fn sweep(&self, prev: &[f64], next: &mut [f64]) {
        // Dispatching a single chunk to the pool costs more than it saves.
        if next.len() <= CHUNK {
            let mut scratch = Scratch::new(self.grid.dim());
            for (k, out) in next.iter_mut().enumerate() {
                *out = self.update(prev, k, &mut scratch);
            }
            return;
        }
        next.par_chunks_mut(CHUNK).enumerate().for_each(|(ci, chunk)| {
            let mut scratch = Scratch::new(self.grid.dim());
            for (k, out) in chunk.iter_mut().enumerate() {
                *out = self.update(prev, ci * CHUNK + k, &mut scratch);
            }
        });
    }
}

/// Per-thread working buffers.
pub struct Scratch {
    bases: Vec<f64>,
    foot: Vec<f64>,
}

impl Scratch {
    pub fn new(dim: usize) -> Self {
        Scratch {
            bases: Vec::new(),
            foot: vec![0.0; dim],
        }
    }
}

/// One Bellman update at the node with multi-index `node`, reading `field`.
pub fn bellman_update(
    spec: &GameSpec,
    params: &SolveParams,
    field: &ValueField,
    node: &[usize],
) -> Result<f64, SolveError> {
    let scheme = Scheme::new(spec, params, field.grid())?;
    let index = field.grid().flat_index(node);
    Ok(scheme.update(field.values(), index, &mut Scratch::new(field.grid().dim())))
}

/// Solves the game on `grid` by value iteration.
pub fn solve_hji(spec: &GameSpec, params: &SolveParams, grid: &TensorGrid) -> Result<Solved, SolveError> {
    let started = Instant::now();
    if grid.dim() != spec.state_dim() {
        return Err(SolveError::Dimension {
            expected: spec.state_dim(),
            found: grid.dim(),
        });
    }
    let hypothesis = check_hypothesis_h(spec, &grid.bounds(), params.hypothesis_samples.max(1))?;
    if !hypothesis.passed {
        return Err(SolveError::HypothesisFailed(Box::new(hypothesis)));
    }
    let mut scheme = Scheme::new(spec, params, grid)?;
    scheme.precompute_stencils(STENCIL_CACHE_BYTES);
    let mut prev = scheme.initial_values();
    let mut next = prev.clone();
    let mut report = SolveReport {
        iterations: 0,
        residual: f64::INFINITY,
        converged: false,
        time_step: scheme.time_step(),
        control_samples: scheme.control_samples(),
        wall_clock_seconds: 0.0,
        nodes: grid.len(),
        max_sweep_increase: f64::NEG_INFINITY,
        min_value: 0.0,
        max_value: 1.0,
        hypothesis,
        residual_history: Vec::new(),
    };
    while report.iterations < params.max_iterations {
        scheme.sweep(&prev, &mut next);
        report.iterations += 1;
        let mut residual: f64 = 0.0;
        let mut increase = f64::NEG_INFINITY;
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for (new, old) in next.iter().zip(&prev) {
            residual = residual.max((new - old).abs());
            increase = increase.max(new - old);
            lo = lo.min(*new);
            hi = hi.max(*new);
        }
        report.max_sweep_increase = report.max_sweep_increase.max(increase);
        report.min_value = report.min_value.min(lo);
        report.max_value = report.max_value.max(hi);
        report.residual = residual;
        report.residual_history.push(residual);
        std::mem::swap(&mut prev, &mut next);
        if residual < params.tolerance {
            report.converged = true;
            break;
        }
    }
    report.wall_clock_seconds = started.elapsed().as_secs_f64();
    let field = ValueField::new(grid.clone(), prev)?;
    Ok(Solved { field, report })
}

/// Checks the node budget before building the grid, then solves.
pub fn solve_within_budget(
    spec: &GameSpec,
    params: &SolveParams,
    axes: &[Axis],
    budget: u128,
) -> Result<Solved, SolveError> {
    check_budget(axes, budget)?;
    let grid = TensorGrid::new(axes.to_vec())?;
    solve_hji(spec, params, &grid)
}
