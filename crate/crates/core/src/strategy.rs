//! State-feedback controls read off a value gradient.
//!
//! Pursuer `i` moves along its own gradient block, which is the minimizer
//! of its term in the Hamiltonian. The evader maximizes along
//! `q = sum_i h_i p_i` (relative) or its own block `p_e` (absolute). Where a
//! block gradient vanishes the pursuer heads straight for the evader and the
//! evader stays put.

use crate::decomp::EnvelopeValue;
use crate::grid::ValueField;
use crate::model::{norm, CoordinateMode, GameSpec, ModelError};

/// Gradients shorter than this count as zero.
pub const GRADIENT_EPSILON: f64 = 1e-8;

/// Feedback rule for the pursuer team.
pub trait PursuerPolicy: Sync {
    fn pursuer_controls(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError>;
}

/// Feedback rule for the evader.
pub trait EvaderPolicy: Sync {
    fn evader_control(&self, x: &[f64]) -> Result<Vec<f64>, ModelError>;
}

#[derive(Debug, Clone, Copy)]
pub enum ValueSource<'a> {
    Field(&'a ValueField),
    Envelope(&'a EnvelopeValue),
}

impl ValueSource<'_> {
    pub fn value(&self, x: &[f64]) -> f64 {
        match self {
            ValueSource::Field(f) => f.interpolate(x).value,
            ValueSource::Envelope(e) => e.value(x),
        }
    }

    /// Grid gradient; for an envelope, that of its lowest-index active part.
    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        match self {
            ValueSource::Field(f) => f.numerical_gradient(x),
            ValueSource::Envelope(e) => {
                let p = e.evaluate(x);
                e.part_gradient(p.active[0], x)
            }
        }
    }
}

/// Optimal feedback for both sides derived from one value function.
#[derive(Debug, Clone, Copy)]
pub struct FeedbackStrategy<'a> {
    spec: &'a GameSpec,
    source: ValueSource<'a>,
}

impl<'a> FeedbackStrategy<'a> {
    pub fn new(spec: &'a GameSpec, source: ValueSource<'a>) -> Self {
        FeedbackStrategy { spec, source }
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.source.value(x)
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        self.source.gradient(x)
    }

    pub fn pursuer_feedback(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.spec.check_dim(x)?;
        Ok(pursuer_feedback(self.spec, x, &self.gradient(x)))
    }

    pub fn evader_feedback(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.spec.check_dim(x)?;
        evader_feedback(self.spec, x, &self.gradient(x))
    }
}

impl PursuerPolicy for FeedbackStrategy<'_> {
    fn pursuer_controls(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        self.pursuer_feedback(x)
    }
}

impl EvaderPolicy for FeedbackStrategy<'_> {
    fn evader_control(&self, x: &[f64]) -> Result<Vec<f64>, ModelError> {
        self.evader_feedback(x)
    }
}

fn scaled_direction(v: &[f64], radius: f64) -> Option<Vec<f64>> {
    let len = norm(v);
    (len > GRADIENT_EPSILON).then(|| v.iter().map(|c| radius * c / len).collect())
}

/// `a_i = rho_a p_i / |p_i|`, falling back to `rho_a d_i / |d_i|` with `d_i`
/// the separation from the evader.
pub fn pursuer_feedback(spec: &GameSpec, x: &[f64], p: &[f64]) -> Vec<Vec<f64>> {
    let n = spec.space_dim();
    (0..spec.pursuers())
        .map(|i| {
            scaled_direction(&p[i * n..(i + 1) * n], spec.rho_a())
                .or_else(|| scaled_direction(&spec.separation(x, i), spec.rho_a()))
                .unwrap_or_else(|| vec![0.0; n])
        })
        .collect()
}

/// `b = rho_b q / |q|`, or zero when `q` vanishes.
pub fn evader_feedback(spec: &GameSpec, x: &[f64], p: &[f64]) -> Result<Vec<f64>, ModelError> {
    let (m, n) = (spec.pursuers(), spec.space_dim());
    let q: Vec<f64> = match spec.mode() {
        CoordinateMode::Relative => {
            let c = spec.coefficients(x)?;
            (0..n)
                .map(|k| (0..m).map(|i| c.h[i] * p[i * n + k]).sum())
                .collect()
        }
        CoordinateMode::Absolute => p[m * n..].to_vec(),
    };
    Ok(scaled_direction(&q, spec.rho_b()).unwrap_or_else(|| vec![0.0; n]))
}

/// Constant controls, e.g. a frozen player.
#[derive(Debug, Clone, PartialEq)]
pub struct FixedControls {
    pub pursuers: Vec<Vec<f64>>,
    pub evader: Vec<f64>,
}

impl FixedControls {
    pub fn zero(spec: &GameSpec) -> Self {
        FixedControls {
            pursuers: vec![vec![0.0; spec.space_dim()]; spec.pursuers()],
            evader: vec![0.0; spec.space_dim()],
        }
    }
}

impl PursuerPolicy for FixedControls {
    fn pursuer_controls(&self, _x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        Ok(self.pursuers.clone())
    }
}

impl EvaderPolicy for FixedControls {
    fn evader_control(&self, _x: &[f64]) -> Result<Vec<f64>, ModelError> {
        Ok(self.evader.clone())
    }
}

/// Wraps a pursuer policy and holds the listed pursuers still.
pub struct IdlePursuers<'a> {
    pub inner: &'a dyn PursuerPolicy,
    pub idle: Vec<usize>,
}

impl PursuerPolicy for IdlePursuers<'_> {
    fn pursuer_controls(&self, x: &[f64]) -> Result<Vec<Vec<f64>>, ModelError> {
        let mut a = self.inner.pursuer_controls(x)?;
        for &i in &self.idle {
            if let Some(ai) = a.get_mut(i) {
                ai.iter_mut().for_each(|v| *v = 0.0);
            }
        }
        Ok(a)
    }
}
