//! Game specification: dynamics, control sets, capture target and the
//! pursuer-advantage hypothesis.
//!
//! Two coordinate conventions are supported. In *relative* mode the state is
//! `(y_1, ..., y_m)` with `y_i` the evader position minus pursuer `i`'s, and
//!
//! ```text
//! y_i' = -g_i(y) a_i + h_i(y) b + l_i(y)
//! ```
//!
//! with fields written over the full `n*m`-dimensional state. In *absolute*
//! mode the state is `(y_1, ..., y_m, y_e)` of agent positions and
//!
//! ```text
//! y_i' = -g(y_i) a_i,    y_e' = h(y_e) b
//! ```
//!
//! where `g` and `h` are fields over a single `n`-dimensional position and
//! `g` is shared by all pursuers. Pursuer controls lie in the ball of radius
//! `rho_a`, the evader control in the ball of radius `rho_b`; capture happens
//! when some pursuer-evader separation is at most `r`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::fields::{EvalError, ParseError, ScalarField};
use crate::sampling::{halton_points, StateBox};

pub const DEFAULT_HYPOTHESIS_SAMPLES: usize = 10_000;

/// Slack allowed on control norms.
pub const CONTROL_SLACK: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid game parameter: {0}")]
    Invalid(String),
    #[error("{which}: expected {expected} field(s), found {found}")]
    FieldCount {
        which: &'static str,
        expected: String,
        found: usize,
    },
    #[error("cannot parse {which}: {source}")]
    Parse {
        which: String,
        #[source]
        source: ParseError,
    },
    #[error("cannot evaluate {which}: {source}")]
    Eval {
        which: String,
        #[source]
        source: EvalError,
    },
    #[error("state has dimension {found}, game expects {expected}")]
    Dimension { expected: usize, found: usize },
    #[error("invalid controls: {0}")]
    Control(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoordinateMode {
    Relative,
    Absolute,
}

/// Serializable description of a game; field expressions are kept as text.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GameDefinition {
    pub mode: CoordinateMode,
    pub m: usize,
    pub n: usize,
    pub rho_a: f64,
    pub rho_b: f64,
    pub r: f64,
    /// Pursuer speed coefficients; one entry is broadcast to all pursuers.
    pub g: Vec<String>,
    /// Evader coupling coefficients (relative) or the evader speed field
    /// (absolute, exactly one entry). One entry is broadcast in relative mode.
    pub h: Vec<String>,
    /// Drift fields, `m` lists of `n` expressions. Omitted means zero.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l: Option<Vec<Vec<String>>>,
}

/// Which part of the capture set a solve targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TargetSelect {
    /// Capture by any pursuer.
    All,
    /// Capture by one pursuer only (0-based).
    Pursuer(usize),
}

/// Pointwise coefficient values at one state.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Coefficients {
    pub g: Vec<f64>,
    /// Per pursuer; in absolute mode every entry equals `h(y_e)`.
    pub h: Vec<f64>,
    /// Flattened `m*n` drift, all zero when the game has none.
    pub l: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GameSpec {
    definition: GameDefinition,
    g: Vec<ScalarField>,
    h: Vec<ScalarField>,
    l: Option<Vec<Vec<ScalarField>>>,
    shared_g: bool,
}

fn broadcast(list: &[String], m: usize, which: &'static str) -> Result<Vec<String>, ModelError> {
    match list.len() {
        1 => Ok(vec![list[0].clone(); m]),
        k if k == m => Ok(list.to_vec()),
        k => Err(ModelError::FieldCount {
            which,
            expected: format!("1 or {m}"),
            found: k,
        }),
    }
}

fn parse(src: &str, dim: usize, which: String) -> Result<ScalarField, ModelError> {
    ScalarField::parse(src, dim).map_err(|source| ModelError::Parse { which, source })
}

impl GameSpec {
    pub fn new(definition: GameDefinition) -> Result<Self, ModelError> {
        let d = &definition;
        if d.m == 0 || d.n == 0 {
            return Err(ModelError::Invalid("m and n must be at least 1".into()));
        }
        if !(d.rho_a > 0.0 && d.rho_a.is_finite()) || !(d.rho_b > 0.0 && d.rho_b.is_finite()) {
            return Err(ModelError::Invalid("control radii must be positive and finite".into()));
        }
        if !(d.r >= 0.0 && d.r.is_finite()) {
            return Err(ModelError::Invalid("capture radius must be nonnegative".into()));
        }
        let field_dim = match d.mode {
            CoordinateMode::Relative => d.n * d.m,
            CoordinateMode::Absolute => d.n,
        };
        let g_src = broadcast(&d.g, d.m, "g")?;
        let g = g_src
            .iter()
            .enumerate()
            .map(|(i, s)| parse(s, field_dim, format!("g{}", i + 1)))
            .collect::<Result<Vec<_>, _>>()?;
        let shared_g = g_src.iter().all(|s| s.trim() == g_src[0].trim());
        let h = match d.mode {
            CoordinateMode::Relative => broadcast(&d.h, d.m, "h")?
                .iter()
                .enumerate()
                .map(|(i, s)| parse(s, field_dim, format!("h{}", i + 1)))
                .collect::<Result<Vec<_>, _>>()?,
            CoordinateMode::Absolute => {
                if d.h.len() != 1 {
                    return Err(ModelError::FieldCount {
                        which: "h",
                        expected: "1".into(),
                        found: d.h.len(),
                    });
                }
                vec![parse(&d.h[0], field_dim, "h".into())?]
            }
        };
        let l = match &d.l {
            None => None,
            Some(rows) => {
                if rows.len() != d.m {
                    return Err(ModelError::FieldCount {
                        which: "l",
                        expected: d.m.to_string(),
                        found: rows.len(),
                    });
                }
                let mut parsed = Vec::with_capacity(d.m);
                for (i, row) in rows.iter().enumerate() {
                    if row.len() != d.n {
                        return Err(ModelError::FieldCount {
                            which: "l component",
                            expected: d.n.to_string(),
                            found: row.len(),
                        });
                    }
                    parsed.push(
                        row.iter()
                            .enumerate()
                            .map(|(k, s)| parse(s, field_dim, format!("l{}[{}]", i + 1, k + 1)))
                            .collect::<Result<Vec<_>, _>>()?,
                    );
                }
                let all_zero = parsed
                    .iter()
                    .flatten()
                    .all(|f| f.is_constant() && f.eval(&vec![0.0; field_dim]).ok() == Some(0.0));
                (!all_zero).then_some(parsed)
            }
        };
        if d.mode == CoordinateMode::Absolute {
            if !shared_g {
                return Err(ModelError::Invalid(
                    "absolute mode requires a single speed field g shared by all pursuers".into(),
                ));
            }
            if l.is_some() {
                return Err(ModelError::Invalid("absolute mode does not admit drift terms".into()));
            }
        }
        Ok(GameSpec {
            definition,
            g,
            h,
            l,
            shared_g,
        })
    }

    pub fn definition(&self) -> &GameDefinition {
        &self.definition
    }

    pub fn mode(&self) -> CoordinateMode {
        self.definition.mode
    }

    pub fn pursuers(&self) -> usize {
        self.definition.m
    }

    pub fn space_dim(&self) -> usize {
        self.definition.n
    }

    pub fn rho_a(&self) -> f64 {
        self.definition.rho_a
    }

    pub fn rho_b(&self) -> f64 {
        self.definition.rho_b
    }

    pub fn capture_radius(&self) -> f64 {
        self.definition.r
    }

    pub fn shared_g(&self) -> bool {
        self.shared_g
    }

    pub fn g_fields(&self) -> &[ScalarField] {
        &self.g
    }

    pub fn h_fields(&self) -> &[ScalarField] {
        &self.h
    }

    pub fn l_fields(&self) -> Option<&[Vec<ScalarField>]> {
        self.l.as_deref()
    }

    /// Dimension of the full state vector.
    pub fn state_dim(&self) -> usize {
        match self.mode() {
            CoordinateMode::Relative => self.definition.n * self.definition.m,
            CoordinateMode::Absolute => self.definition.n * (self.definition.m + 1),
        }
    }

    /// Number of `n`-blocks in a gradient vector.
    pub fn block_count(&self) -> usize {
        match self.mode() {
            CoordinateMode::Relative => self.definition.m,
            CoordinateMode::Absolute => self.definition.m + 1,
        }
    }

    pub fn check_dim(&self, x: &[f64]) -> Result<(), ModelError> {
        if x.len() != self.state_dim() {
            return Err(ModelError::Dimension {
                expected: self.state_dim(),
                found: x.len(),
            });
        }
        Ok(())
    }

    pub fn coefficients(&self, x: &[f64]) -> Result<Coefficients, ModelError> {
        let mut out = Coefficients::default();
        self.coefficients_into(x, &mut out)?;
        Ok(out)
    }

    pub fn coefficients_into(&self, x: &[f64], out: &mut Coefficients) -> Result<(), ModelError> {
        self.check_dim(x)?;
        let (m, n) = (self.definition.m, self.definition.n);
        out.g.clear();
        out.h.clear();
        out.l.clear();
        let eval = |f: &ScalarField, at: &[f64], which: &dyn Fn() -> String| {
            f.eval(at).map_err(|source| ModelError::Eval {
                which: which(),
                source,
            })
        };
        match self.mode() {
            CoordinateMode::Relative => {
                for i in 0..m {
                    out.g.push(eval(&self.g[i], x, &|| format!("g{}", i + 1))?);
                    out.h.push(eval(&self.h[i], x, &|| format!("h{}", i + 1))?);
                }
                match &self.l {
                    None => out.l.resize(m * n, 0.0),
                    Some(rows) => {
                        for (i, row) in rows.iter().enumerate() {
                            for (k, f) in row.iter().enumerate() {
                                out.l.push(eval(f, x, &|| format!("l{}[{}]", i + 1, k + 1))?);
                            }
                        }
                    }
                }
            }
            CoordinateMode::Absolute => {
                let evader = &x[m * n..];
                let h = eval(&self.h[0], evader, &|| "h".to_string())?;
                for i in 0..m {
                    out.g.push(eval(&self.g[0], &x[i * n..(i + 1) * n], &|| "g".to_string())?);
                    out.h.push(h);
                }
                out.l.resize(m * n, 0.0);
            }
        }
        Ok(())
    }

    /// Velocity for flattened pursuer controls `a` (length `m*n`) and evader
    /// control `b`, given coefficients at the current state.
    pub fn velocity_into(&self, c: &Coefficients, a: &[f64], b: &[f64], out: &mut [f64]) {
        let (m, n) = (self.definition.m, self.definition.n);
        match self.mode() {
            CoordinateMode::Relative => {
                for i in 0..m {
                    for k in 0..n {
                        let j = i * n + k;
                        out[j] = -c.g[i] * a[j] + c.h[i] * b[k] + c.l[j];
                    }
                }
            }
            CoordinateMode::Absolute => {
                for i in 0..m {
                    for k in 0..n {
                        out[i * n + k] = -c.g[i] * a[i * n + k];
                    }
                }
                for k in 0..n {
                    out[m * n + k] = c.h[0] * b[k];
                }
            }
        }
    }

    /// Right-hand side of the state equation.
    pub fn dynamics_rhs(&self, x: &[f64], u: &ControlPair) -> Result<Vec<f64>, ModelError> {
        u.validate(self)?;
        let c = self.coefficients(x)?;
        let a: Vec<f64> = u.a.iter().flatten().copied().collect();
        let mut out = vec![0.0; self.state_dim()];
        self.velocity_into(&c, &a, &u.b, &mut out);
        Ok(out)
    }

    /// Separation vector between pursuer `i` and the evader: `y_i` in
    /// relative mode, `y_i - y_e` in absolute mode.
    pub fn separation(&self, x: &[f64], i: usize) -> Vec<f64> {
        let n = self.definition.n;
        let block = &x[i * n..(i + 1) * n];
        match self.mode() {
            CoordinateMode::Relative => block.to_vec(),
            CoordinateMode::Absolute => {
                let e = &x[self.definition.m * n..];
                block.iter().zip(e).map(|(p, q)| p - q).collect()
            }
        }
    }

    pub fn capture_distance(&self, x: &[f64], i: usize) -> f64 {
        norm(&self.separation(x, i))
    }

    /// Smallest separation over the pursuers selected by `target`.
    pub fn target_distance(&self, x: &[f64], target: TargetSelect) -> f64 {
        match target {
            TargetSelect::All => (0..self.definition.m)
                .map(|i| self.capture_distance(x, i))
                .fold(f64::INFINITY, f64::min),
            TargetSelect::Pursuer(i) => self.capture_distance(x, i),
        }
    }

    pub fn in_target(&self, x: &[f64], target: TargetSelect) -> bool {
        self.target_distance(x, target) <= self.definition.r * (1.0 + 1e-12) + 1e-12
    }

    /// Largest per-block speed `g_i rho_a + h_i rho_b + |l_i|`.
    pub fn speed_bound(&self, c: &Coefficients) -> f64 {
        let n = self.definition.n;
        (0..self.definition.m)
            .map(|i| match self.mode() {
                CoordinateMode::Relative => {
                    c.g[i].abs() * self.rho_a()
                        + c.h[i].abs() * self.rho_b()
                        + norm(&c.l[i * n..(i + 1) * n])
                }
                CoordinateMode::Absolute => {
                    (c.g[i].abs() * self.rho_a()).max(c.h[i].abs() * self.rho_b())
                }
            })
            .fold(0.0, f64::max)
    }

    /// `g_i rho_a - h_i rho_b - |l_i|` for pursuer `i`.
    pub fn margin(&self, c: &Coefficients, i: usize) -> f64 {
        let n = self.definition.n;
        c.g[i] * self.rho_a() - c.h[i] * self.rho_b() - norm(&c.l[i * n..(i + 1) * n])
    }
}

pub fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// One control per pursuer and one for the evader.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ControlPair {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<f64>,
}

impl ControlPair {
    pub fn zero(spec: &GameSpec) -> Self {
        ControlPair {
            a: vec![vec![0.0; spec.space_dim()]; spec.pursuers()],
            b: vec![0.0; spec.space_dim()],
        }
    }

    pub fn validate(&self, spec: &GameSpec) -> Result<(), ModelError> {
        let n = spec.space_dim();
        if self.a.len() != spec.pursuers() || self.a.iter().any(|a| a.len() != n) || self.b.len() != n
        {
            return Err(ModelError::Control(format!(
                "expected {} pursuer controls and one evader control of length {n}",
                spec.pursuers()
            )));
        }
        for (i, a) in self.a.iter().enumerate() {
            if norm(a) > spec.rho_a() + CONTROL_SLACK {
                return Err(ModelError::Control(format!(
                    "pursuer {} control has norm {} > rho_a = {}",
                    i + 1,
                    norm(a),
                    spec.rho_a()
                )));
            }
        }
        if norm(&self.b) > spec.rho_b() + CONTROL_SLACK {
            return Err(ModelError::Control(format!(
                "evader control has norm {} > rho_b = {}",
                norm(&self.b),
                spec.rho_b()
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HypothesisReport {
    pub passed: bool,
    /// Smallest observed `g_i rho_a - h_i rho_b - |l_i|`.
    pub min_margin: f64,
    pub worst_point: Vec<f64>,
    /// 0-based pursuer attaining the smallest margin.
    pub worst_pursuer: usize,
    pub samples: usize,
    /// Samples where some `g_i <= 0` or `h_i < 0`.
    pub sign_violations: usize,
}

/// Samples the pursuer-advantage margin over `region`.
pub fn check_hypothesis_h(
    spec: &GameSpec,
    region: &StateBox,
    samples: usize,
) -> Result<HypothesisReport, ModelError> {
    check_hypothesis_h_seeded(spec, region, samples, 0)
}

pub fn check_hypothesis_h_seeded(
    spec: &GameSpec,
    region: &StateBox,
    samples: usize,
    seed: u64,
) -> Result<HypothesisReport, ModelError> {
    spec.check_dim(&region.lower)?;
    if samples == 0 || !region.is_bounded() {
        return Err(ModelError::Invalid(
            "hypothesis check needs a bounded box and at least one sample".into(),
        ));
    }
    let mut report = HypothesisReport {
        passed: false,
        min_margin: f64::INFINITY,
        worst_point: region.center(),
        worst_pursuer: 0,
        samples,
        sign_violations: 0,
    };
    let mut c = Coefficients::default();
    for x in halton_points(region, samples, seed) {
        spec.coefficients_into(&x, &mut c)?;
        if c.g.iter().any(|g| *g <= 0.0) || c.h.iter().any(|h| *h < 0.0) {
            report.sign_violations += 1;
        }
        for i in 0..spec.pursuers() {
            let margin = spec.margin(&c, i);
            if margin < report.min_margin {
                report.min_margin = margin;
                report.worst_point = x.clone();
                report.worst_pursuer = i;
            }
        }
    }
    report.passed = report.min_margin > 0.0 && report.sign_violations == 0;
    Ok(report)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub fn relative(m: usize, n: usize, g: &[&str], h: &[&str], rho: (f64, f64), r: f64) -> GameSpec {
        GameSpec::new(GameDefinition {
            mode: CoordinateMode::Relative,
            m,
            n,
            rho_a: rho.0,
            rho_b: rho.1,
            r,
            g: g.iter().map(|s| s.to_string()).collect(),
            h: h.iter().map(|s| s.to_string()).collect(),
            l: None,
        })
        .unwrap()
    }

    pub fn example1() -> GameSpec {
        relative(2, 1, &["2/3", "1"], &["1/2"], (1.0, 1.0), 0.1)
    }

    pub fn channel(m: usize) -> GameSpec {
        GameSpec::new(GameDefinition {
            mode: CoordinateMode::Absolute,
            m,
            n: 2,
            rho_a: 1.0,
            rho_b: 1.0,
            r: 0.3,
            g: vec!["if(abs(x2) < 0.5, 1 - 0.5*cos(pi*x1), 1)".into()],
            h: vec!["0.4".into()],
            l: None,
        })
        .unwrap()
    }

    fn control(a: &[&[f64]], b: &[f64]) -> ControlPair {
        ControlPair {
            a: a.iter().map(|v| v.to_vec()).collect(),
            b: b.to_vec(),
        }
    }

    #[test]
    fn example1_dynamics() {
        let spec = example1();
        let v = spec.dynamics_rhs(&[0.7, 2.0], &control(&[&[1.0], &[1.0]], &[1.0])).unwrap();
        assert!((v[0] + 1.0 / 6.0).abs() < 1e-15);
        assert!((v[1] + 0.5).abs() < 1e-15);
        let zero = spec.dynamics_rhs(&[0.7, 2.0], &ControlPair::zero(&spec)).unwrap();
        assert_eq!(zero, vec![0.0, 0.0]);
    }

    #[test]
    fn absolute_dynamics() {
        let spec = channel(3);
        assert_eq!(spec.state_dim(), 8);
        let mut x = vec![1.0, 1.0, -1.0, 0.2, 0.5, 0.0, 0.0, 0.0];
        x[6] = 0.0;
        let u = control(&[&[0.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]], &[1.0, 0.0]);
        let v = spec.dynamics_rhs(&x, &u).unwrap();
        assert!((v[6] - 0.4).abs() < 1e-15);
        assert_eq!(v[7], 0.0);
        // Pursuer 1 sits at x1 = 1 inside the channel: g = 1.5.
        let u = control(&[&[0.0, 1.0], &[0.0, 0.0], &[0.0, 0.0]], &[0.0, 0.0]);
        let v = spec.dynamics_rhs(&[1.0, 0.0, 5.0, 5.0, 5.0, 5.0, 0.0, 0.0], &u).unwrap();
        assert!((v[1] + 1.5).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_dimensions_and_controls() {
        let spec = example1();
        let u = ControlPair::zero(&spec);
        assert!(matches!(spec.dynamics_rhs(&[0.0; 3], &u), Err(ModelError::Dimension { .. })));
        let big = control(&[&[1.5], &[0.0]], &[0.0]);
        assert!(matches!(spec.dynamics_rhs(&[0.0; 2], &big), Err(ModelError::Control(_))));
        let slack = control(&[&[1.0 + 1e-13], &[0.0]], &[0.0]);
        assert!(spec.dynamics_rhs(&[0.0; 2], &slack).is_ok());
    }

    #[test]
    fn invalid_definitions() {
        let mut d = example1().definition().clone();
        d.rho_a = 0.0;
        assert!(GameSpec::new(d.clone()).is_err());
        d.rho_a = 1.0;
        d.g = vec!["1".into(), "1".into(), "1".into()];
        assert!(matches!(GameSpec::new(d.clone()), Err(ModelError::FieldCount { .. })));
        d.g = vec!["x3".into()];
        assert!(matches!(GameSpec::new(d.clone()), Err(ModelError::Parse { .. })));
        let mut a = channel(2).definition().clone();
        a.g = vec!["1".into(), "2".into()];
        assert!(GameSpec::new(a.clone()).is_err());
        a.g = vec!["1".into()];
        a.l = Some(vec![vec!["0.1".into(), "0".into()]; 2]);
        assert!(GameSpec::new(a.clone()).is_err());
        a.l = Some(vec![vec!["0".into(), "0".into()]; 2]);
        assert!(GameSpec::new(a).unwrap().l_fields().is_none());
    }

    #[test]
    fn drift_enters_dynamics_and_margin() {
        let spec = GameSpec::new(GameDefinition {
            mode: CoordinateMode::Relative,
            m: 1,
            n: 2,
            rho_a: 1.0,
            rho_b: 0.5,
            r: 0.1,
            g: vec!["1".into()],
            h: vec!["1".into()],
            l: Some(vec![vec!["0.3".into(), "0.4".into()]]),
        })
        .unwrap();
        let v = spec.dynamics_rhs(&[0.0, 0.0], &ControlPair::zero(&spec)).unwrap();
        assert_eq!(v, vec![0.3, 0.4]);
        let c = spec.coefficients(&[0.0, 0.0]).unwrap();
        assert!(spec.margin(&c, 0).abs() < 1e-15);
    }

    #[test]
    fn hypothesis_examples() {
        let b = StateBox::cube(2, 0.0, 3.0);
        let rep = check_hypothesis_h(&example1(), &b, 100).unwrap();
        assert!(rep.passed);
        assert!((rep.min_margin - 1.0 / 6.0).abs() < 1e-12);
        assert_eq!(rep.worst_pursuer, 0);

        let bad = relative(1, 1, &["0.5"], &["1"], (1.0, 1.0), 0.1);
        let rep = check_hypothesis_h(&bad, &StateBox::cube(1, 0.0, 3.0), 100).unwrap();
        assert!(!rep.passed);
        assert!((rep.min_margin + 0.5).abs() < 1e-12);

        let rep = check_hypothesis_h(&channel(3), &StateBox::cube(8, -2.0, 2.0), 10_000).unwrap();
        assert!(rep.passed);
        assert!((rep.min_margin - 0.1).abs() < 1e-12);
    }

    #[test]
    fn hypothesis_reports_field_failures_as_errors() {
        let spec = relative(1, 1, &["1/x1"], &["0.5"], (1.0, 1.0), 0.1);
        let r = check_hypothesis_h(&spec, &StateBox::cube(1, -1.0, 1.0), 10);
        assert!(matches!(r, Err(ModelError::Eval { .. })));
    }

    #[test]
    fn sign_violations_fail_the_check() {
        let spec = relative(1, 1, &["2"], &["-0.5"], (1.0, 1.0), 0.1);
        let rep = check_hypothesis_h(&spec, &StateBox::cube(1, 0.0, 1.0), 10).unwrap();
        assert!(rep.min_margin > 0.0);
        assert!(!rep.passed);
        assert_eq!(rep.sign_violations, 10);
    }

    #[test]
    fn dimensions_per_mode() {
        assert_eq!(example1().state_dim(), 2);
        assert_eq!(channel(3).state_dim(), 8);
        assert_eq!(channel(3).block_count(), 4);
        assert!(channel(3).shared_g());
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn rhs_is_linear_in_controls(
                x in prop::collection::vec(-2.0f64..2.0, 4),
                a in prop::collection::vec(-0.5f64..0.5, 4),
                a2 in prop::collection::vec(-0.5f64..0.5, 4),
                b in prop::collection::vec(-0.3f64..0.3, 2),
                b2 in prop::collection::vec(-0.3f64..0.3, 2),
            ) {
                let spec = GameSpec::new(GameDefinition {
                    mode: CoordinateMode::Relative,
                    m: 2, n: 2, rho_a: 1.5, rho_b: 1.0, r: 0.1,
                    g: vec!["1 + 0.2*cos(x1)".into(), "1.2".into()],
                    h: vec!["0.5".into(), "0.3 + 0.1*sin(x4)".into()],
                    l: Some(vec![vec!["0.1*x2".into(), "0".into()], vec!["0".into(), "0.05".into()]]),
                }).unwrap();
                let pair = |a: &[f64], b: &[f64]| ControlPair { a: vec![a[..2].to_vec(), a[2..].to_vec()], b: b.to_vec() };
                let sum_a: Vec<f64> = a.iter().zip(&a2).map(|(p, q)| p + q).collect();
                let sum_b: Vec<f64> = b.iter().zip(&b2).map(|(p, q)| p + q).collect();
                let lhs1 = spec.dynamics_rhs(&x, &pair(&a, &b)).unwrap();
                let lhs2 = spec.dynamics_rhs(&x, &pair(&a2, &b2)).unwrap();
                let base = spec.dynamics_rhs(&x, &ControlPair::zero(&spec)).unwrap();
                let rhs = spec.dynamics_rhs(&x, &pair(&sum_a, &sum_b)).unwrap();
                for k in 0..4 {
                    prop_assert!((lhs1[k] + lhs2[k] - base[k] - rhs[k]).abs() < 1e-12);
                }
            }

            #[test]
            fn margin_monotone_in_rho_a(rho in 0.6f64..3.0, extra in 0.0f64..2.0) {
                let region = StateBox::cube(2, -1.0, 1.0);
                let def = |rho_a| GameDefinition {
                    mode: CoordinateMode::Relative, m: 2, n: 1, rho_a, rho_b: 0.5, r: 0.1,
                    g: vec!["1 + 0.5*x1^2".into(), "1".into()],
                    h: vec!["1".into()],
                    l: None,
                };
                let lo = check_hypothesis_h(&GameSpec::new(def(rho)).unwrap(), &region, 200).unwrap();
                let hi = check_hypothesis_h(&GameSpec::new(def(rho + extra)).unwrap(), &region, 200).unwrap();
                prop_assert!(hi.min_margin >= lo.min_margin);
            }
        }
    }
}
