//! Closed-loop simulation with explicit Euler steps.
//!
//! Controls are evaluated once at the start of each step and held for the
//! step. Within a step every separation moves along a straight segment, so
//! capture is checked against the segment's closest approach to the origin
//! (a grazing pass between two samples is not missed) and the first entry
//! time is refined by bisection.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{ControlPair, CoordinateMode, GameSpec, ModelError, TargetSelect};
use crate::sampling::StateBox;
use crate::strategy::{EvaderPolicy, PursuerPolicy};

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("invalid simulation parameters: {0}")]
    Invalid(String),
    #[error("value {0} is outside [0, 1]")]
    ValueRange(f64),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

/// Value transform `1 - e^{-t}`, mapping `[0, inf]` onto `[0, 1]`.
pub fn kruzhkov(t: f64) -> f64 {
    if t == f64::INFINITY {
        1.0
    } else {
        -(-t).exp_m1()
    }
}

/// `-ln(1 - v)`; infinite at `v = 1`.
pub fn kruzhkov_inverse(v: f64) -> Result<f64, SimError> {
    if !(0.0..=1.0).contains(&v) {
        return Err(SimError::ValueRange(v));
    }
    Ok(if v == 1.0 { f64::INFINITY } else { -(-v).ln_1p() })
}

/// Three times the predicted capture time, kept within `[1, 100]`.
pub fn default_horizon(value: f64) -> f64 {
    let t = kruzhkov_inverse(value.clamp(0.0, 1.0)).unwrap_or(f64::INFINITY);
    (3.0 * t).clamp(1.0, 100.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub horizon: f64,
    /// Flags the trajectory when the state leaves this box.
    pub region: Option<StateBox>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum Termination {
    Captured { pursuer: usize, time: f64 },
    Escaped { horizon: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    pub t: f64,
    pub state: Vec<f64>,
    /// Controls held from this step to the next; `None` on the last row.
    pub controls: Option<ControlPair>,
    pub min_distance: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<TrajectoryStep>,
    pub termination: Termination,
    pub left_box: bool,
}

impl Trajectory {
    pub fn capture_time(&self) -> Option<f64> {
        match self.termination {
            Termination::Captured { time, .. } => Some(time),
            Termination::Escaped { .. } => None,
        }
    }

    /// Writes one row per step: `t`, state, controls, min distance. Controls
    /// are left blank on the final row.
    pub fn write_csv<W: Write>(&self, spec: &GameSpec, mut out: W) -> Result<(), SimError> {
        let (m, n) = (spec.pursuers(), spec.space_dim());
        let mut header = vec!["t".to_string()];
        header.extend((1..=spec.state_dim()).map(|k| format!("x{k}")));
        for i in 1..=m {
            header.extend((1..=n).map(|k| format!("a{i}_{k}")));
        }
        header.extend((1..=n).map(|k| format!("b{k}")));
        header.push("min_distance".into());
        writeln!(out, "{}", header.join(","))?;
        let blanks = vec![String::new(); (m + 1) * n];
        for s in &self.steps {
            let mut row = vec![format!("{:?}", s.t)];
            row.extend(s.state.iter().map(|v| format!("{v:?}")));
            match &s.controls {
                Some(c) => {
                    row.extend(c.a.iter().flatten().map(|v| format!("{v:?}")));
                    row.extend(c.b.iter().map(|v| format!("{v:?}")));
                }
                None => row.extend(blanks.iter().cloned()),
            }
            row.push(format!("{:?}", s.min_distance));
            writeln!(out, "{}", row.join(","))?;
        }
        Ok(())
    }
}

/// Parses the output of [`Trajectory::write_csv`] back into rows of
/// `(t, state)`.
pub fn read_csv_states(text: &str, state_dim: usize) -> Result<Vec<(f64, Vec<f64>)>, SimError> {
    let bad = |line: usize| SimError::Invalid(format!("malformed trajectory row {line}"));
    text.lines()
        .enumerate()
        .skip(1)
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let cols: Vec<&str> = l.split(',').collect();
            if cols.len() < 1 + state_dim {
                return Err(bad(i + 1));
            }
            let parse = |s: &str| s.parse::<f64>().map_err(|_| bad(i + 1));
            Ok((parse(cols[0])?, cols[1..=state_dim].iter().map(|c| parse(c)).collect::<Result<_, _>>()?))
        })
        .collect()
}

fn separation_velocity(spec: &GameSpec, v: &[f64], i: usize) -> Vec<f64> {
    let (m, n) = (spec.pursuers(), spec.space_dim());
    let block = &v[i * n..(i + 1) * n];
    match spec.mode() {
        CoordinateMode::Relative => block.to_vec(),
        CoordinateMode::Absolute => block.iter().zip(&v[m * n..]).map(|(p, e)| p - e).collect(),
    }
}

fn along(s: &[f64], w: &[f64], t: f64) -> f64 {
    s.iter().zip(w).map(|(a, b)| (a + t * b).powi(2)).sum::<f64>().sqrt()
}

/// Earliest `t` in `[0, dt]` with `|s + t w| <= r`, if any.
fn first_entry(s: &[f64], w: &[f64], dt: f64, r: f64) -> Option<f64> {
    let ww: f64 = w.iter().map(|v| v * v).sum();
    let t_min = if ww > 0.0 {
        (-s.iter().zip(w).map(|(a, b)| a * b).sum::<f64>() / ww).clamp(0.0, dt)
    } else {
        0.0
    };
    if along(s, w, t_min) > r {
        return None;
    }
    // |s + t w| is convex, hence decreasing on [0, t_min].
    let (mut lo, mut hi) = (0.0, t_min);
    if along(s, w, lo) <= r {
        return Some(0.0);
    }
    while hi - lo > dt * 1e-9 {
        let mid = 0.5 * (lo + hi);
        if along(s, w, mid) <= r {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(hi)
}

/// Runs the closed loop from `x0` until capture or the horizon.
pub fn simulate(
    spec: &GameSpec,
    pursuers: &dyn PursuerPolicy,
    evader: &dyn EvaderPolicy,
    x0: &[f64],
    params: &SimParams,
) -> Result<Trajectory, SimError> {
    spec.check_dim(x0)?;
    if !(params.dt > 0.0 && params.dt.is_finite()) {
        return Err(SimError::Invalid(format!("time step {} must be positive", params.dt)));
    }
    if !(params.horizon >= 0.0 && params.horizon.is_finite()) {
        return Err(SimError::Invalid(format!("horizon {} must be finite and non-negative", params.horizon)));
    }
    let r = spec.capture_radius();
    let m = spec.pursuers();
    let outside = |x: &[f64]| params.region.as_ref().is_some_and(|b| !b.contains(x));

    let mut x = x0.to_vec();
    let mut t = 0.0;
    let mut steps = Vec::new();
    let mut left_box = outside(&x);

    if spec.in_target(&x, TargetSelect::All) {
        let pursuer = (0..m)
            .min_by(|&a, &b| spec.capture_distance(&x, a).total_cmp(&spec.capture_distance(&x, b)))
            .unwrap_or(0);
        steps.push(TrajectoryStep {
            t,
            min_distance: spec.target_distance(&x, TargetSelect::All),
            state: x,
            controls: None,
        });
        return Ok(Trajectory {
            steps,
            termination: Termination::Captured { pursuer, time: 0.0 },
            left_box,
        });
    }

    let mut v = vec![0.0; spec.state_dim()];
    loop {
        if t >= params.horizon * (1.0 - 1e-12) {
            steps.push(TrajectoryStep {
                t,
                min_distance: spec.target_distance(&x, TargetSelect::All),
                state: x,
                controls: None,
            });
            return Ok(Trajectory {
                steps,
                termination: Termination::Escaped { horizon: params.horizon },
                left_box,
            });
        }
        let h = params.dt.min(params.horizon - t);
        let controls = ControlPair {
            a: pursuers.pursuer_controls(&x)?,
            b: evader.evader_control(&x)?,
        };
        controls.validate(spec)?;
        let c = spec.coefficients(&x)?;
        let a_flat: Vec<f64> = controls.a.iter().flatten().copied().collect();
        spec.velocity_into(&c, &a_flat, &controls.b, &mut v);

        let hit = (0..m)
            .filter_map(|i| {
                first_entry(&spec.separation(&x, i), &separation_velocity(spec, &v, i), h, r).map(|s| (i, s))
            })
            .min_by(|a, b| a.1.total_cmp(&b.1));

        steps.push(TrajectoryStep {
            t,
            min_distance: spec.target_distance(&x, TargetSelect::All),
            state: x.clone(),
            controls: Some(controls),
        });

        if let Some((pursuer, s)) = hit {
            let end: Vec<f64> = x.iter().zip(&v).map(|(a, b)| a + s * b).collect();
            left_box |= outside(&end);
            steps.push(TrajectoryStep {
                t: t + s,
                min_distance: spec.target_distance(&end, TargetSelect::All),
                state: end,
                controls: None,
            });
            return Ok(Trajectory {
                steps,
                termination: Termination::Captured { pursuer, time: t + s },
                left_box,
            });
        }
        for (a, b) in x.iter_mut().zip(&v) {
            *a += h * b;
        }
        t += h;
        left_box |= outside(&x);
    }
}
