//! Target decomposition and the lower-envelope value.
//!
//! The capture set is split into per-pursuer sets `{|y_i| <= r}` (or
//! `{|y_i - y_e| <= r}` in absolute coordinates). When the dynamics of block
//! `i` depend on that block alone, the game with target `T_i` reduces to an
//! `n`-dimensional game in `y_i`; in absolute coordinates with a shared
//! position-dependent pursuer speed it reduces to a `2n`-dimensional game in
//! `(y_i, y_e)`. The full value is then `u(x) = min_i u_i(x)` provided, at
//! every point where several sub-values are minimal, the Hamiltonian is
//! convex along the convex hull of their gradients:
//!
//! ```text
//! H(x, sum_i l_i xi_i) <= sum_i l_i H(x, xi_i)
//! ```
//!
//! [`check_condition_c`] samples this inequality a posteriori using grid
//! gradients in place of limiting superdifferentials. Where a sub-value is
//! not differentiable the grid gradient is only an approximation; this is
//! recorded in the report rather than resolved.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{GridError, TensorGrid, ValueField};
use crate::model::{CoordinateMode, GameDefinition, GameSpec, ModelError, TargetSelect};
use crate::sampling::{halton_points, StateBox};
use crate::solver::{hamiltonian_with, solve_hji, SolveError, SolveParams, SolveReport};

pub const DEFAULT_CONDITION_C_SAMPLES: usize = 2000;

/// Gap above which the convexity inequality counts as violated.
pub const DEFAULT_VIOLATION_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum DecompError {
    #[error("field {field} of pursuer {pursuer} reads x{variable}, outside its own block; decomposition refused")]
    CrossCoupled {
        field: String,
        pursuer: usize,
        variable: usize,
    },
    #[error("absolute-mode decomposition needs a pursuer speed field shared by all pursuers")]
    NotShared,
    #[error("expected {expected} sub-grids (or one shared), got {found}")]
    GridCount { expected: usize, found: usize },
    #[error("sub-problem {index}: {source}")]
    Solve {
        index: usize,
        #[source]
        source: SolveError,
    },
    #[error("sub-problem {index} did not converge after {} iterations (residual {:.3e})", .report.iterations, .report.residual)]
    NotConverged { index: usize, report: Box<SolveReport> },
    #[error("invalid envelope: {0}")]
    Envelope(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// A reduced game for one sub-target.
#[derive(Debug, Clone)]
pub struct SubProblem {
    /// 0-based pursuer index.
    pub index: usize,
    pub spec: GameSpec,
    /// Full-state coordinates read by the reduced state, in order.
    pub embedding: Vec<usize>,
}

fn restrict_source(
    field: &crate::fields::ScalarField,
    keep: &[usize],
    name: &str,
    pursuer: usize,
) -> Result<String, DecompError> {
    match field.restrict(keep) {
        Some(f) => Ok(f.source().to_string()),
        None => {
            let variable = field
                .variables()
                .into_iter()
                .find(|v| !keep.contains(v))
                .expect("restriction fails only on foreign variables");
            Err(DecompError::CrossCoupled {
                field: name.to_string(),
                pursuer: pursuer + 1,
                variable: variable + 1,
            })
        }
    }
}

/// Splits a game into one reduced game per pursuer.
pub fn decompose(spec: &GameSpec) -> Result<Vec<SubProblem>, DecompError> {
    let (m, n) = (spec.pursuers(), spec.space_dim());
    let def = spec.definition();
    match spec.mode() {
        CoordinateMode::Relative => (0..m)
            .map(|i| {
                let block: Vec<usize> = (i * n..(i + 1) * n).collect();
                let g = restrict_source(&spec.g_fields()[i], &block, &format!("g{}", i + 1), i)?;
                let h = restrict_source(&spec.h_fields()[i], &block, &format!("h{}", i + 1), i)?;
                let l = match spec.l_fields() {
                    None => None,
                    Some(rows) => Some(vec![rows[i]
                        .iter()
                        .enumerate()
                        .map(|(k, f)| restrict_source(f, &block, &format!("l{}[{}]", i + 1, k + 1), i))
                        .collect::<Result<Vec<_>, _>>()?]),
                };
                let reduced = if m == 1 {
                    spec.clone()
                } else {
                    GameSpec::new(GameDefinition {
                        mode: CoordinateMode::Relative,
                        m: 1,
                        n,
                        rho_a: def.rho_a,
                        rho_b: def.rho_b,
                        r: def.r,
                        g: vec![g],
                        h: vec![h],
                        l,
                    })?
                };
                Ok(SubProblem {
                    index: i,
                    spec: reduced,
                    embedding: block,
                })
            })
            .collect(),
        CoordinateMode::Absolute => {
            if !spec.shared_g() {
                return Err(DecompError::NotShared);
            }
            let reduced = GameSpec::new(GameDefinition {
                mode: CoordinateMode::Absolute,
                m: 1,
                n,
                rho_a: def.rho_a,
                rho_b: def.rho_b,
                r: def.r,
                g: vec![spec.g_fields()[0].source().to_string()],
                h: vec![spec.h_fields()[0].source().to_string()],
                l: None,
            })?;
            Ok((0..m)
                .map(|i| SubProblem {
                    index: i,
                    spec: reduced.clone(),
                    embedding: (i * n..(i + 1) * n).chain(m * n..(m + 1) * n).collect(),
                })
                .collect())
        }
    }
}

/// One sub-value together with the full-state coordinates it reads.
#[derive(Debug, Clone)]
pub struct EnvelopePart {
    pub field: ValueField,
    pub embedding: Vec<usize>,
}

/// Pointwise minimum of embedded sub-values.
#[derive(Debug, Clone)]
pub struct EnvelopeValue {
    parts: Vec<EnvelopePart>,
    full_dim: usize,
    delta: f64,
}

/// Envelope evaluated at one point.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvelopePoint {
    pub value: f64,
    /// Lowest index attaining the minimum exactly.
    pub argmin: usize,
    /// Indices within `delta` of the minimum, ascending.
    pub active: Vec<usize>,
    pub part_values: Vec<f64>,
    pub clamped: bool,
}

/// `max(10 * tolerance, coarsest sub-grid spacing)`.
pub fn default_delta(tolerance: f64, parts: &[EnvelopePart]) -> f64 {
    let dx = parts
        .iter()
        .flat_map(|p| p.field.grid().spacing())
        .fold(0.0, f64::max);
    (10.0 * tolerance).max(dx)
}

/// Builds the lower envelope of `parts` over a `full_dim`-dimensional state.
/// `delta` defaults to [`default_delta`] with the default solver tolerance.
pub fn envelope(
    parts: Vec<(ValueField, Vec<usize>)>,
    full_dim: usize,
    delta: Option<f64>,
) -> Result<EnvelopeValue, DecompError> {
    if parts.is_empty() {
        return Err(DecompError::Envelope("no sub-values".into()));
    }
    let parts: Vec<EnvelopePart> = parts
        .into_iter()
        .map(|(field, embedding)| EnvelopePart { field, embedding })
        .collect();
    for (i, p) in parts.iter().enumerate() {
        if p.embedding.len() != p.field.grid().dim() {
            return Err(DecompError::Envelope(format!(
                "part {i}: embedding has {} coordinates for a {}-dimensional grid",
                p.embedding.len(),
                p.field.grid().dim()
            )));
        }
        if p.embedding.iter().any(|&k| k >= full_dim) {
            return Err(DecompError::Envelope(format!("part {i}: embedding exceeds state dimension")));
        }
    }
    let delta = delta.unwrap_or_else(|| default_delta(SolveParams::default().tolerance, &parts));
    Ok(EnvelopeValue {
        parts,
        full_dim,
        delta,
    })
}

impl EnvelopeValue {
    pub fn parts(&self) -> &[EnvelopePart] {
        &self.parts
    }

    pub fn full_dim(&self) -> usize {
        self.full_dim
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }

    fn embedded(&self, i: usize, x: &[f64], out: &mut Vec<f64>) {
        out.clear();
        out.extend(self.parts[i].embedding.iter().map(|&k| x[k]));
    }

    pub fn part_value(&self, i: usize, x: &[f64]) -> f64 {
        let mut y = Vec::new();
        self.embedded(i, x, &mut y);
        self.parts[i].field.interpolate(&y).value
    }

    pub fn evaluate(&self, x: &[f64]) -> EnvelopePoint {
        let mut y = Vec::with_capacity(self.full_dim);
        let mut part_values = Vec::with_capacity(self.parts.len());
        let mut clamped = false;
        for i in 0..self.parts.len() {
            self.embedded(i, x, &mut y);
            let v = self.parts[i].field.interpolate(&y);
            clamped |= v.clamped;
            part_values.push(v.value);
        }
        let (argmin, value) = part_values
            .iter()
            .copied()
            .enumerate()
            .fold((0, f64::INFINITY), |acc, (i, v)| if v < acc.1 { (i, v) } else { acc });
        let active = part_values
            .iter()
            .enumerate()
            .filter(|(_, v)| **v <= value + self.delta)
            .map(|(i, _)| i)
            .collect();
        EnvelopePoint {
            value,
            argmin,
            active,
            part_values,
            clamped,
        }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.evaluate(x).value
    }

    /// Grid gradient of part `i`, scattered into the full state.
    pub fn part_gradient(&self, i: usize, x: &[f64]) -> Vec<f64> {
        let mut y = Vec::new();
        self.embedded(i, x, &mut y);
        let local = self.parts[i].field.numerical_gradient(&y);
        let mut out = vec![0.0; self.full_dim];
        for (k, &j) in self.parts[i].embedding.iter().enumerate() {
            out[j] += local[k];
        }
        out
    }

    /// Box on which every part is defined: the intersection of the embedded
    /// grid ranges. `None` if some coordinate is read by no part or the
    /// ranges do not overlap.
    pub fn bounds(&self) -> Option<StateBox> {
        let mut lower = vec![f64::NEG_INFINITY; self.full_dim];
        let mut upper = vec![f64::INFINITY; self.full_dim];
        for p in &self.parts {
            for (axis, &k) in p.field.grid().axes().iter().zip(&p.embedding) {
                lower[k] = lower[k].max(axis.lower);
                upper[k] = upper[k].min(axis.upper);
            }
        }
        let b = StateBox::new(lower, upper);
        b.is_bounded().then_some(b)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum WeightSet {
    /// Vertices, pairwise midpoints and the uniform weight.
    Standard,
    /// Every weight vector with entries in multiples of `1/resolution`.
    Simplex { resolution: usize },
}

impl WeightSet {
    fn weights(&self, k: usize) -> Vec<Vec<f64>> {
        match *self {
            WeightSet::Standard => {
                let mut out = Vec::new();
                for i in 0..k {
                    let mut w = vec![0.0; k];
                    w[i] = 1.0;
                    out.push(w);
                }
                for i in 0..k {
                    for j in i + 1..k {
                        let mut w = vec![0.0; k];
                        w[i] = 0.5;
                        w[j] = 0.5;
                        out.push(w);
                    }
                }
                if k > 2 {
                    out.push(vec![1.0 / k as f64; k]);
                }
                out
            }
            WeightSet::Simplex { resolution } => {
                let res = resolution.max(1);
                let mut out = Vec::new();
                let mut parts = vec![0usize; k];
                compositions(res, 0, &mut parts, &mut out);
                out.into_iter()
                    .map(|c| c.iter().map(|v| *v as f64 / res as f64).collect())
                    .collect()
            }
        }
    }
}

fn compositions(left: usize, pos: usize, parts: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
    if pos + 1 == parts.len() {
        parts[pos] = left;
        out.push(parts.clone());
        return;
    }
    for v in 0..=left {
        parts[pos] = v;
        compositions(left - v, pos + 1, parts, out);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConditionCOptions {
    pub samples: usize,
    pub seed: u64,
    pub weights: WeightSet,
    pub violation_tolerance: f64,
}

impl Default for ConditionCOptions {
    fn default() -> Self {
        ConditionCOptions {
            samples: DEFAULT_CONDITION_C_SAMPLES,
            seed: 0,
            weights: WeightSet::Standard,
            violation_tolerance: DEFAULT_VIOLATION_TOLERANCE,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCWitness {
    pub x: Vec<f64>,
    pub active: Vec<usize>,
    pub lambda: Vec<f64>,
    pub xi: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionCReport {
    pub passed: bool,
    pub samples: usize,
    /// Sampled points outside the target with two or more active sub-values.
    pub multi_active_points: usize,
    pub violations: usize,
    /// Largest `H(x, sum l xi) - sum l H(x, xi)` seen (0 if none tested).
    pub worst_violation: f64,
    pub witness: Option<ConditionCWitness>,
    /// Set when the decomposition's structural hypotheses were verified
    /// syntactically, so the inequality holds independently of sampling.
    pub structural_guarantee: bool,
    pub note: String,
}

/// `H(x, sum_i lambda_i xi_i) - sum_i lambda_i H(x, xi_i)`; positive values
/// violate the convexity condition.
pub fn convexity_gap(spec: &GameSpec, x: &[f64], xi: &[Vec<f64>], lambda: &[f64]) -> Result<f64, ModelError> {
    let c = spec.coefficients(x)?;
    Ok(gap_with(spec, &c, xi, lambda))
}

fn gap_with(spec: &GameSpec, c: &crate::model::Coefficients, xi: &[Vec<f64>], lambda: &[f64]) -> f64 {
    let d = spec.state_dim();
    let mut mix = vec![0.0; d];
    let mut rhs = 0.0;
    for (w, v) in lambda.iter().zip(xi) {
        if *w == 0.0 {
            continue;
        }
        for k in 0..d {
            mix[k] += w * v[k];
        }
        rhs += w * hamiltonian_with(spec, c, v);
    }
    hamiltonian_with(spec, c, &mix) - rhs
}

pub fn check_condition_c(
    spec: &GameSpec,
    env: &EnvelopeValue,
    region: &StateBox,
    samples: usize,
) -> Result<ConditionCReport, ModelError> {
    let opts = ConditionCOptions {
        samples,
        ..ConditionCOptions::default()
    };
    check_condition_c_with(spec, env, region, &opts)
}

pub fn check_condition_c_with(
    spec: &GameSpec,
    env: &EnvelopeValue,
    region: &StateBox,
    opts: &ConditionCOptions,
) -> Result<ConditionCReport, ModelError> {
    spec.check_dim(&region.lower)?;
    let mut report = ConditionCReport {
        passed: true,
        samples: opts.samples,
        multi_active_points: 0,
        violations: 0,
        worst_violation: 0.0,
        witness: None,
        structural_guarantee: false,
        note: "gradients are grid differences standing in for limiting superdifferentials; \
               at kinks of a sub-value they are approximations"
            .into(),
    };
    for x in halton_points(region, opts.samples, opts.seed) {
        if spec.in_target(&x, TargetSelect::All) {
            continue;
        }
        let point = env.evaluate(&x);
        if point.active.len() < 2 {
            continue;
        }
        report.multi_active_points += 1;
        let c = spec.coefficients(&x)?;
        let xi: Vec<Vec<f64>> = point.active.iter().map(|&i| env.part_gradient(i, &x)).collect();
        let mut violated = false;
        for lambda in opts.weights.weights(xi.len()) {
            let gap = gap_with(spec, &c, &xi, &lambda);
            if gap > opts.violation_tolerance {
                violated = true;
            }
            if gap > report.worst_violation || (report.witness.is_none() && gap >= report.worst_violation && violated) {
                report.worst_violation = gap;
                report.witness = Some(ConditionCWitness {
                    x: x.clone(),
                    active: point.active.clone(),
                    lambda,
                    xi: xi.clone(),
                });
            }
        }
        if violated {
            report.violations += 1;
        }
    }
    report.passed = report.violations == 0;
    if report.passed {
        report.witness = None;
    }
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecomposeOptions {
    pub condition_c: ConditionCOptions,
    /// Active-set tolerance; see [`default_delta`].
    pub delta: Option<f64>,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        DecomposeOptions {
            condition_c: ConditionCOptions::default(),
            delta: None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct DecomposedSolution {
    pub subproblems: Vec<SubProblem>,
    pub envelope: EnvelopeValue,
    pub reports: Vec<SolveReport>,
    pub condition_c: ConditionCReport,
}

pub fn solve_decomposed(
    spec: &GameSpec,
    params: &SolveParams,
    grids: &[TensorGrid],
) -> Result<DecomposedSolution, DecompError> {
    solve_decomposed_with(spec, params, grids, &DecomposeOptions::default())
}

/// Decomposes, solves every sub-game (concurrently), builds the envelope
/// and checks the convexity condition on its domain.
pub fn solve_decomposed_with(
    spec: &GameSpec,
    params: &SolveParams,
    grids: &[TensorGrid],
    opts: &DecomposeOptions,
) -> Result<DecomposedSolution, DecompError> {
    let subproblems = decompose(spec)?;
    if grids.len() != 1 && grids.len() != subproblems.len() {
        return Err(DecompError::GridCount {
            expected: subproblems.len(),
            found: grids.len(),
        });
    }
    let sub_params = SolveParams {
        target: TargetSelect::All,
        ..params.clone()
    };
    let grid_of = |sub: &SubProblem| &grids[if grids.len() == 1 { 0 } else { sub.index }];
    // Identical reduced games (always the case in absolute coordinates with
    // a shared grid) are solved once.
    let source: Vec<usize> = subproblems
        .iter()
        .map(|sub| {
            subproblems
                .iter()
                .position(|o| o.spec == sub.spec && grid_of(o) == grid_of(sub))
                .unwrap_or(sub.index)
        })
        .collect();
    let distinct: Vec<usize> = (0..subproblems.len()).filter(|&i| source[i] == i).collect();
    let solved: Vec<_> = distinct
        .par_iter()
        .map(|&i| {
            let sub = &subproblems[i];
            solve_hji(&sub.spec, &sub_params, grid_of(sub)).map_err(|source| DecompError::Solve {
                index: sub.index,
                source,
            })
        })
        .collect();
    let mut unique = Vec::with_capacity(solved.len());
    for (&i, result) in distinct.iter().zip(solved) {
        let s = result?;
        if !s.report.converged {
            return Err(DecompError::NotConverged {
                index: i,
                report: Box::new(s.report),
            });
        }
        unique.push((i, s));
    }
    let mut parts = Vec::with_capacity(subproblems.len());
    let mut reports = Vec::with_capacity(subproblems.len());
    for (sub, src) in subproblems.iter().zip(&source) {
        let s = &unique.iter().find(|(i, _)| i == src).expect("solved above").1;
        parts.push((s.field.clone(), sub.embedding.clone()));
        reports.push(s.report.clone());
    }
    let delta = opts.delta.or_else(|| {
        let tmp: Vec<EnvelopePart> = parts
            .iter()
            .map(|(f, e)| EnvelopePart {
                field: f.clone(),
                embedding: e.clone(),
            })
            .collect();
        Some(default_delta(params.tolerance, &tmp))
    });
    let env = envelope(parts, spec.state_dim(), delta)?;
    let region = env
        .bounds()
        .ok_or_else(|| DecompError::Envelope("sub-grids do not cover a common box".into()))?;
    let mut condition_c = check_condition_c_with(spec, &env, &region, &opts.condition_c)?;
    condition_c.structural_guarantee = true;
    Ok(DecomposedSolution {
        subproblems,
        envelope: env,
        reports,
        condition_c,
    })
}
