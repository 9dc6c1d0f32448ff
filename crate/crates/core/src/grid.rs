//! Tensor-product grids, value storage and multilinear interpolation.
//!
//! Nodes are ordered lexicographically with the last axis varying fastest.
//! The same order is used by the text dump format.

use std::fmt::Write as _;
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::sampling::StateBox;

/// Highest grid dimension supported by interpolation (2^d corners per query).
pub const MAX_DIM: usize = 12;

const DUMP_MAGIC: &str = "pe-decomp-grid v1";

#[derive(Debug, Error)]
pub enum GridError {
    #[error("invalid grid: {0}")]
    Invalid(String),
    #[error("value field: {0}")]
    Values(String),
    #[error("malformed grid dump at line {line}: {message}")]
    Dump { line: usize, message: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Axis {
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

impl Axis {
    pub fn new(lower: f64, upper: f64, count: usize) -> Self {
        Axis { lower, upper, count }
    }

    pub fn spacing(&self) -> f64 {
        (self.upper - self.lower) / (self.count - 1) as f64
    }

    pub fn node(&self, i: usize) -> f64 {
        if i + 1 == self.count {
            self.upper
        } else {
            self.lower + i as f64 * self.spacing()
        }
    }

    /// Cell index `i <= count - 2` and local coordinate `t` in `[0, 1]` of
    /// `x` after clamping; the flag reports whether clamping happened.
    #[inline]
    fn locate(&self, x: f64, inv_spacing: f64) -> (usize, f64, bool) {
        let clamped = x < self.lower || x > self.upper;
        let s = ((x - self.lower) * inv_spacing).clamp(0.0, (self.count - 1) as f64);
        let i = (s.floor() as usize).min(self.count - 2);
        (i, s - i as f64, clamped)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Axis>", into = "Vec<Axis>")]
pub struct TensorGrid {
    axes: Vec<Axis>,
    #[serde(skip)]
    strides: Vec<usize>,
    #[serde(skip)]
    inv_spacing: Vec<f64>,
    #[serde(skip)]
    len: usize,
}

impl TryFrom<Vec<Axis>> for TensorGrid {
    type Error = GridError;
    fn try_from(axes: Vec<Axis>) -> Result<Self, GridError> {
        TensorGrid::new(axes)
    }
}

impl From<TensorGrid> for Vec<Axis> {
    fn from(g: TensorGrid) -> Self {
        g.axes
    }
}

impl TensorGrid {
    pub fn new(axes: Vec<Axis>) -> Result<Self, GridError> {
        if axes.is_empty() || axes.len() > MAX_DIM {
            return Err(GridError::Invalid(format!(
                "dimension must be between 1 and {MAX_DIM}, got {}",
                axes.len()
            )));
        }
        for (k, a) in axes.iter().enumerate() {
            if !(a.lower.is_finite() && a.upper.is_finite() && a.lower < a.upper) {
                return Err(GridError::Invalid(format!("axis {k}: need finite lower < upper")));
            }
            if a.count < 2 {
                return Err(GridError::Invalid(format!("axis {k}: need at least 2 nodes")));
            }
        }
        let mut strides = vec![1usize; axes.len()];
        let mut len = 1usize;
        for k in (0..axes.len()).rev() {
            strides[k] = len;
            len = len
                .checked_mul(axes[k].count)
                .ok_or_else(|| GridError::Invalid("node count overflows".into()))?;
        }
        let inv_spacing = axes.iter().map(|a| 1.0 / a.spacing()).collect();
        Ok(TensorGrid {
            axes,
            strides,
            inv_spacing,
            len,
        })
    }

    /// Same bounds and count on every axis.
    pub fn uniform(dim: usize, lower: f64, upper: f64, count: usize) -> Result<Self, GridError> {
        TensorGrid::new(vec![Axis::new(lower, upper, count); dim])
    }

    /// Node count of a prospective grid without allocating it; saturates.
    pub fn count_nodes(axes: &[Axis]) -> u128 {
        axes.iter().fold(1u128, |acc, a| acc.saturating_mul(a.count as u128))
    }

    pub fn axes(&self) -> &[Axis] {
        &self.axes
    }

    pub fn dim(&self) -> usize {
        self.axes.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn spacing(&self) -> Vec<f64> {
        self.axes.iter().map(Axis::spacing).collect()
    }

    pub fn min_spacing(&self) -> f64 {
        self.axes.iter().map(Axis::spacing).fold(f64::INFINITY, f64::min)
    }

    pub fn bounds(&self) -> StateBox {
        StateBox::new(
            self.axes.iter().map(|a| a.lower).collect(),
            self.axes.iter().map(|a| a.upper).collect(),
        )
    }

    pub fn multi_index(&self, mut index: usize, out: &mut [usize]) {
        for k in 0..self.dim() {
            out[k] = index / self.strides[k];
            index %= self.strides[k];
        }
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().zip(&self.strides).map(|(i, s)| i * s).sum()
    }

    pub fn node_coords(&self, index: usize, out: &mut [f64]) {
        let mut rest = index;
        for k in 0..self.dim() {
            let i = rest / self.strides[k];
            rest %= self.strides[k];
            out[k] = self.axes[k].node(i);
        }
    }

    pub fn node(&self, index: usize) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.node_coords(index, &mut out);
        out
    }

    /// Multilinear interpolation of node data at `x`, clamping `x` to the
    /// box first. Returns the value and whether any coordinate was clamped.
    #[inline]
    pub fn interpolate(&self, values: &[f64], x: &[f64]) -> (f64, bool) {
        debug_assert_eq!(values.len(), self.len);
        let mut t = [0.0f64; MAX_DIM];
        let (base, clamped) = self.locate_point(x, &mut t);
        (self.blend(values, base, &t[..self.dim()]), clamped)
    }

    /// Cell containing `x` (after clamping): flat index of its lower corner,
    /// with the fractional offsets written to `t`.
    #[inline]
    pub fn locate_point(&self, x: &[f64], t: &mut [f64]) -> (usize, bool) {
        let mut base = 0usize;
        let mut clamped = false;
        for k in 0..self.dim() {
            let (i, tk, c) = self.axes[k].locate(x[k], self.inv_spacing[k]);
            base += i * self.strides[k];
            t[k] = tk;
            clamped |= c;
        }
        (base, clamped)
    }

    /// Multilinear blend of the cell at `base` with offsets `t`.
    #[inline]
    pub fn blend(&self, values: &[f64], base: usize, t: &[f64]) -> f64 {
        let d = self.dim();
        // Successive halving: collapse the last axis first over the 2^d
        // corner block.
        if d == 1 {
            return values[base] + t[0] * (values[base + 1] - values[base]);
        }
        if d == 2 {
            let s = self.strides[0];
            let v00 = values[base];
            let v01 = values[base + 1];
            let v10 = values[base + s];
            let v11 = values[base + s + 1];
            let a = v00 + t[1] * (v01 - v00);
            let b = v10 + t[1] * (v11 - v10);
            return a + t[0] * (b - a);
        }
        let corners = 1usize << d;
        let mut small = [0.0f64; 64];
        let mut large = Vec::new();
        let buf: &mut [f64] = if corners <= small.len() {
            &mut small[..corners]
        } else {
            large.resize(corners, 0.0);
            &mut large
        };
        for (mask, slot) in buf.iter_mut().enumerate() {
            let mut off = base;
            for k in 0..d {
                if mask >> (d - 1 - k) & 1 == 1 {
                    off += self.strides[k];
                }
            }
            *slot = values[off];
        }
        let mut width = corners;
        for k in (0..d).rev() {
            width /= 2;
            for j in 0..width {
                let lo = buf[2 * j];
                let hi = buf[2 * j + 1];
                buf[j] = lo + t[k] * (hi - lo);
            }
        }
        buf[0]
    }

    /// Central differences with one grid spacing per axis, one-sided within
    /// one spacing of the box boundary.
    pub fn gradient(&self, values: &[f64], x: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.dim()];
        self.gradient_into(values, x, &mut out);
        out
    }

    pub fn gradient_into(&self, values: &[f64], x: &[f64], out: &mut [f64]) {
        let mut probe = [0.0f64; MAX_DIM];
        let d = self.dim();
        probe[..d].copy_from_slice(x);
        for k in 0..d {
            let axis = &self.axes[k];
            let h = axis.spacing();
            let xk = x[k].clamp(axis.lower, axis.upper);
            let (lo, hi) = if xk - h < axis.lower {
                (xk, xk + h)
            } else if xk + h > axis.upper {
                (xk - h, xk)
            } else {
                (xk - h, xk + h)
            };
            probe[k] = hi;
            let f_hi = self.interpolate(values, &probe[..d]).0;
            probe[k] = lo;
            let f_lo = self.interpolate(values, &probe[..d]).0;
            probe[k] = x[k];
            out[k] = (f_hi - f_lo) / (hi - lo);
        }
    }

    /// Node data sampled from a function.
    pub fn sample(&self, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
        let mut x = vec![0.0; self.dim()];
        (0..self.len)
            .map(|i| {
                self.node_coords(i, &mut x);
                f(&x)
            })
            .collect()
    }
}

/// Result of evaluating a field at an arbitrary point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interpolated {
    pub value: f64,
    pub clamped: bool,
}

/// A grid with one value in `[0, 1]` per node.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueField {
    grid: TensorGrid,
    values: Vec<f64>,
}

impl ValueField {
    pub fn new(grid: TensorGrid, values: Vec<f64>) -> Result<Self, GridError> {
        if values.len() != grid.len() {
            return Err(GridError::Values(format!(
                "expected {} values, got {}",
                grid.len(),
                values.len()
            )));
        }
        if let Some((i, v)) = values
            .iter()
            .enumerate()
            .find(|(_, v)| !(v.is_finite() && (0.0..=1.0).contains(*v)))
        {
            return Err(GridError::Values(format!("node {i} has value {v} outside [0, 1]")));
        }
        Ok(ValueField { grid, values })
    }

    pub fn grid(&self) -> &TensorGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn interpolate(&self, x: &[f64]) -> Interpolated {
        let (value, clamped) = self.grid.interpolate(&self.values, x);
        Interpolated { value, clamped }
    }

    pub fn numerical_gradient(&self, x: &[f64]) -> Vec<f64> {
        self.grid.gradient(&self.values, x)
    }

    pub fn write_dump<W: Write>(&self, mut out: W) -> Result<(), GridError> {
        let mut header = format!("{DUMP_MAGIC}; axes={}; counts=", self.grid.dim());
        let counts: Vec<String> = self.grid.axes().iter().map(|a| a.count.to_string()).collect();
        header.push_str(&counts.join(","));
        header.push_str("; bounds=");
        let bounds: Vec<String> = self
            .grid
            .axes()
            .iter()
            .map(|a| format!("{}:{}", a.lower, a.upper))
            .collect();
        header.push_str(&bounds.join(","));
        writeln!(out, "{header}")?;
        let mut line = String::new();
        for v in &self.values {
            line.clear();
            write!(line, "{v:.16e}").expect("write to string");
            writeln!(out, "{line}")?;
        }
        Ok(())
    }

    pub fn read_dump<R: BufRead>(input: R) -> Result<Self, GridError> {
        let mut lines = input.lines();
        let header = lines.next().ok_or(GridError::Dump {
            line: 1,
            message: "empty input".into(),
        })??;
        let bad = |message: &str| GridError::Dump {
            line: 1,
            message: message.to_string(),
        };
        let mut parts = header.split(';').map(str::trim);
        if parts.next() != Some(DUMP_MAGIC) {
            return Err(bad("missing magic"));
        }
        let mut get = |key: &str| {
            parts
                .next()
                .and_then(|p| p.strip_prefix(key))
                .and_then(|p| p.strip_prefix('='))
                .ok_or_else(|| bad(&format!("expected `{key}=`")))
        };
        let dim: usize = get("axes")?.parse().map_err(|_| bad("bad axes"))?;
        let counts: Vec<usize> = get("counts")?
            .split(',')
            .map(|s| s.parse().map_err(|_| bad("bad counts")))
            .collect::<Result<_, _>>()?;
        let bounds: Vec<(f64, f64)> = get("bounds")?
            .split(',')
            .map(|s| {
                let (a, b) = s.split_once(':').ok_or_else(|| bad("bad bounds"))?;
                Ok((
                    a.parse().map_err(|_| bad("bad bounds"))?,
                    b.parse().map_err(|_| bad("bad bounds"))?,
                ))
            })
            .collect::<Result<_, GridError>>()?;
        if counts.len() != dim || bounds.len() != dim {
            return Err(bad("axis count mismatch"));
        }
        let grid = TensorGrid::new(
            counts
                .iter()
                .zip(&bounds)
                .map(|(c, (a, b))| Axis::new(*a, *b, *c))
                .collect(),
        )?;
        let mut values = Vec::with_capacity(grid.len());
        for (k, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            values.push(line.trim().parse::<f64>().map_err(|_| GridError::Dump {
                line: k + 2,
                message: "bad value".into(),
            })?);
        }
        ValueField::new(grid, values)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn exact_at_nodes() {
        let g = TensorGrid::new(vec![Axis::new(0.0, 1.0, 5), Axis::new(-1.0, 2.0, 4), Axis::new(0.0, 0.5, 3)]).unwrap();
        let v: Vec<f64> = (0..g.len()).map(|i| (i as f64 * 0.37).sin()).collect();
        for i in 0..g.len() {
            let (val, clamped) = g.interpolate(&v, &g.node(i));
            assert!((val - v[i]).abs() < 1e-14);
            assert!(!clamped);
        }
    }

    #[test]
    fn affine_exactness() {
        let g = TensorGrid::uniform(1, 0.0, 1.0, 11).unwrap();
        let v = g.sample(|x| x[0]);
        assert!((g.interpolate(&v, &[0.35]).0 - 0.35).abs() < 1e-15);

        let g = TensorGrid::uniform(2, 0.0, 1.0, 11).unwrap();
        let v = g.sample(|x| 3.0 * x[0] - 2.0 * x[1]);
        let (val, clamped) = g.interpolate(&v, &[0.25, 0.55]);
        assert!((val + 0.35).abs() < 1e-14);
        assert!(!clamped);
        let grad = g.gradient(&v, &[0.25, 0.55]);
        assert!((grad[0] - 3.0).abs() < 1e-9 && (grad[1] + 2.0).abs() < 1e-9);
        // one-sided near the boundary
        let grad = g.gradient(&v, &[0.02, 0.99]);
        assert!((grad[0] - 3.0).abs() < 1e-9 && (grad[1] + 2.0).abs() < 1e-9);

        let g = TensorGrid::uniform(4, -1.0, 1.0, 5).unwrap();
        let v = g.sample(|x| 1.0 + x[0] - 0.5 * x[1] + 0.25 * x[2] + 2.0 * x[3]);
        let p = [0.13, -0.71, 0.44, 0.05];
        let expect = 1.0 + p[0] - 0.5 * p[1] + 0.25 * p[2] + 2.0 * p[3];
        assert!((g.interpolate(&v, &p).0 - expect).abs() < 1e-13);
        let grad = g.gradient(&v, &p);
        for (a, b) in grad.iter().zip([1.0, -0.5, 0.25, 2.0]) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn constant_field_has_zero_gradient() {
        let g = TensorGrid::uniform(3, 0.0, 1.0, 6).unwrap();
        let v = vec![0.7; g.len()];
        assert!(g.gradient(&v, &[0.3, 0.5, 0.9]).iter().all(|d| d.abs() < 1e-15));
    }

    #[test]
    fn gradient_of_exponential_profile() {
        let r = 0.1;
        let g = TensorGrid::uniform(1, 0.0, 3.0, 301).unwrap();
        let v = g.sample(|x| if x[0] <= r { 0.0 } else { 1.0 - (-6.0 * (x[0] - r)).exp() });
        let field = ValueField::new(g, v).unwrap();
        let d = field.numerical_gradient(&[0.6])[0];
        assert!((d - 6.0 * (-3.0f64).exp()).abs() < 1e-3, "{d}");
    }

    #[test]
    fn clamps_outside_points() {
        let g = TensorGrid::uniform(2, 0.0, 1.0, 3).unwrap();
        let v = g.sample(|x| x[0] + x[1]);
        let (val, clamped) = g.interpolate(&v, &[1.5, -0.2]);
        assert!(clamped);
        assert!((val - 1.0).abs() < 1e-15);
    }

    #[test]
    fn index_round_trip() {
        let g = TensorGrid::new(vec![Axis::new(0.0, 1.0, 3), Axis::new(0.0, 1.0, 4), Axis::new(0.0, 1.0, 2)]).unwrap();
        let mut multi = [0usize; 3];
        let mut seen = std::collections::HashSet::new();
        for i in 0..g.len() {
            g.multi_index(i, &mut multi);
            assert_eq!(g.flat_index(&multi), i);
            assert!(seen.insert(multi));
        }
        // last axis fastest
        g.multi_index(1, &mut multi);
        assert_eq!(multi, [0, 0, 1]);
        assert_eq!(seen.len(), 24);
    }

    #[test]
    fn invalid_grids() {
        assert!(TensorGrid::new(vec![]).is_err());
        assert!(TensorGrid::new(vec![Axis::new(1.0, 0.0, 3)]).is_err());
        assert!(TensorGrid::new(vec![Axis::new(0.0, 1.0, 1)]).is_err());
        let g = TensorGrid::uniform(1, 0.0, 1.0, 3).unwrap();
        assert!(ValueField::new(g.clone(), vec![0.0, 1.5, 0.2]).is_err());
        assert!(ValueField::new(g.clone(), vec![0.0, f64::NAN, 0.2]).is_err());
        assert!(ValueField::new(g, vec![0.0]).is_err());
    }

    #[test]
    fn dump_format() {
        let g = TensorGrid::new(vec![Axis::new(0.0, 3.0, 3), Axis::new(-1.5, 1.0, 2)]).unwrap();
        let v = vec![0.0, 0.1, 0.25, 1.0 / 3.0, 0.999, 1.0];
        let field = ValueField::new(g, v).unwrap();
        let mut buf = Vec::new();
        field.write_dump(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        let mut lines = text.lines();
        assert_eq!(
            lines.next().unwrap(),
            "pe-decomp-grid v1; axes=2; counts=3,2; bounds=0:3,-1.5:1"
        );
        assert_eq!(lines.nth(3).unwrap(), "3.3333333333333331e-1");
        let back = ValueField::read_dump(&buf[..]).unwrap();
        assert_eq!(back, field);
    }

    proptest! {
        #[test]
        fn dump_round_trip_is_bit_exact(vals in prop::collection::vec(0.0f64..=1.0, 12)) {
            let g = TensorGrid::new(vec![Axis::new(-0.3, 2.7, 4), Axis::new(0.0, 1.0, 3)]).unwrap();
            let field = ValueField::new(g, vals).unwrap();
            let mut buf = Vec::new();
            field.write_dump(&mut buf).unwrap();
            let back = ValueField::read_dump(&buf[..]).unwrap();
            for (a, b) in back.values().iter().zip(field.values()) {
                prop_assert_eq!(a.to_bits(), b.to_bits());
            }
        }

        #[test]
        fn interpolation_is_monotone(
            vals in prop::collection::vec(0.0f64..1.0, 27),
            node in 0usize..27,
            bump in 0.0f64..0.5,
            p in prop::collection::vec(-0.2f64..1.2, 3),
        ) {
            let g = TensorGrid::uniform(3, 0.0, 1.0, 3).unwrap();
            let mut raised = vals.clone();
            raised[node] += bump;
            prop_assert!(g.interpolate(&raised, &p).0 >= g.interpolate(&vals, &p).0 - 1e-15);
        }

        #[test]
        fn gradient_matches_directional_derivative(
            freq in (0.5f64..3.0, 0.5f64..3.0),
            cell in (1usize..9, 1usize..9),
            frac in (0.2f64..0.8, 0.2f64..0.8),
        ) {
            // Smooth data: inside a cell the interpolant's slope and the
            // spacing-wide difference agree to O(dx * max|f''|).
            let g = TensorGrid::uniform(2, 0.0, 1.0, 11).unwrap();
            let h = 0.1;
            let vals = g.sample(|x| 0.5 + 0.4 * (freq.0 * x[0]).sin() * (freq.1 * x[1]).cos());
            let x = [(cell.0 as f64 + frac.0) * h, (cell.1 as f64 + frac.1) * h];
            let grad = g.gradient(&vals, &x);
            let curvature = 0.4 * (freq.0.max(freq.1)).powi(2);
            let eps = 1e-7;
            for k in 0..2 {
                let mut xp = x;
                let mut xm = x;
                xp[k] += eps;
                xm[k] -= eps;
                let fd = (g.interpolate(&vals, &xp).0 - g.interpolate(&vals, &xm).0) / (2.0 * eps);
                prop_assert!((fd - grad[k]).abs() <= 2.0 * curvature * h, "{fd} vs {}", grad[k]);
            }
        }

        #[test]
        fn interpolation_reproduces_generic_path(
            vals in prop::collection::vec(0.0f64..1.0, 16),
            p in prop::collection::vec(0.0f64..1.0, 2),
        ) {
            // The dedicated 2D path agrees with the general corner reduction.
            let g2 = TensorGrid::uniform(2, 0.0, 1.0, 4).unwrap();
            let g3 = TensorGrid::new(vec![Axis::new(0.0, 1.0, 4), Axis::new(0.0, 1.0, 4), Axis::new(0.0, 1.0, 2)]).unwrap();
            let lifted: Vec<f64> = vals.iter().flat_map(|v| [*v, *v]).collect();
            let a = g2.interpolate(&vals, &p).0;
            let b = g3.interpolate(&lifted, &[p[0], p[1], 0.3]).0;
            prop_assert!((a - b).abs() < 1e-14);
        }
    }
}
