//! Marching squares on a regular 2D sample, chained into polylines.

use std::collections::HashMap;
use std::io::Write;

/// Samples on a regular `nx` by `ny` lattice, `values[j * nx + i]` at
/// `(x[i], y[j])`.
pub struct Lattice<'a> {
    pub x: &'a [f64],
    pub y: &'a [f64],
    pub values: &'a [f64],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyline {
    pub level: f64,
    pub points: Vec<[f64; 2]>,
}

impl Polyline {
    pub fn is_closed(&self) -> bool {
        self.points.len() > 2 && self.points.first() == self.points.last()
    }
}

impl Lattice<'_> {
    fn at(&self, i: usize, j: usize) -> f64 {
        self.values[j * self.x.len() + i]
    }

    // Horizontal edge (i,j)-(i+1,j) is 2*(j*nx+i); vertical (i,j)-(i,j+1) is +1.
    fn h_edge(&self, i: usize, j: usize) -> usize {
        2 * (j * self.x.len() + i)
    }

    fn v_edge(&self, i: usize, j: usize) -> usize {
        2 * (j * self.x.len() + i) + 1
    }

    fn crossing(&self, edge: usize, level: f64) -> [f64; 2] {
        let node = edge / 2;
        let (i, j) = (node % self.x.len(), node / self.x.len());
        let (i2, j2) = if edge % 2 == 0 { (i + 1, j) } else { (i, j + 1) };
        let (va, vb) = (self.at(i, j), self.at(i2, j2));
        let t = if vb == va { 0.5 } else { ((level - va) / (vb - va)).clamp(0.0, 1.0) };
        [
            self.x[i] + t * (self.x[i2] - self.x[i]),
            self.y[j] + t * (self.y[j2] - self.y[j]),
        ]
    }

    /// Contour segments of one level, as pairs of edge ids.
    fn segments(&self, level: f64) -> Vec<[usize; 2]> {
        let (nx, ny) = (self.x.len(), self.y.len());
        let mut out = Vec::new();
        for j in 0..ny.saturating_sub(1) {
            for i in 0..nx.saturating_sub(1) {
                let v = [self.at(i, j), self.at(i + 1, j), self.at(i + 1, j + 1), self.at(i, j + 1)];
                let above = v.map(|c| c >= level);
                // bottom, right, top, left
                let edges = [self.h_edge(i, j), self.v_edge(i + 1, j), self.h_edge(i, j + 1), self.v_edge(i, j)];
                let cut: Vec<usize> = (0..4).filter(|&k| above[k] != above[(k + 1) % 4]).collect();
                match cut.len() {
                    2 => out.push([edges[cut[0]], edges[cut[1]]]),
                    4 => {
                        // Saddle: the center decides which diagonal pair connects.
                        let center = 0.25 * v.iter().sum::<f64>() >= level;
                        if center == above[0] {
                            out.push([edges[0], edges[1]]);
                            out.push([edges[2], edges[3]]);
                        } else {
                            out.push([edges[3], edges[0]]);
                            out.push([edges[1], edges[2]]);
                        }
                    }
                    _ => {}
                }
            }
        }
        out
    }

    pub fn contour(&self, level: f64) -> Vec<Polyline> {
        let segments = self.segments(level);
        let mut by_edge: HashMap<usize, Vec<usize>> = HashMap::new();
        for (k, s) in segments.iter().enumerate() {
            by_edge.entry(s[0]).or_default().push(k);
            by_edge.entry(s[1]).or_default().push(k);
        }
        let mut used = vec![false; segments.len()];
        let mut lines = Vec::new();
        // Walk from `edge` through unused segments, appending edges.
        let walk = |start: usize, edge: usize, used: &mut Vec<bool>, chain: &mut Vec<usize>| {
            let mut edge = edge;
            let mut seg = start;
            loop {
                let next = by_edge[&edge].iter().copied().find(|&k| k != seg && !used[k]);
                let Some(k) = next else { break };
                used[k] = true;
                let s = segments[k];
                edge = if s[0] == edge { s[1] } else { s[0] };
                chain.push(edge);
                seg = k;
            }
        };
        for k in 0..segments.len() {
            if used[k] {
                continue;
            }
            used[k] = true;
            let [a, b] = segments[k];
            let mut forward = vec![a, b];
            walk(k, b, &mut used, &mut forward);
            let mut backward = Vec::new();
            if forward.last() != Some(&a) {
                walk(k, a, &mut used, &mut backward);
            }
            backward.reverse();
            backward.extend(forward);
            lines.push(Polyline {
                level,
                points: backward.into_iter().map(|e| self.crossing(e, level)).collect(),
            });
        }
        lines
    }
}

/// Rows `x, y, level`, one polyline per block, blocks separated by a blank
/// line.
pub fn write_polylines<W: Write>(mut out: W, names: [&str; 2], lines: &[Polyline]) -> std::io::Result<()> {
    writeln!(out, "{},{},level", names[0], names[1])?;
    for (k, line) in lines.iter().enumerate() {
        if k > 0 {
            writeln!(out)?;
        }
        for p in &line.points {
            writeln!(out, "{:?},{:?},{:?}", p[0], p[1], line.level)?;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lattice(n: usize, f: impl Fn(f64, f64) -> f64) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
        let x: Vec<f64> = (0..n).map(|i| -1.0 + 2.0 * i as f64 / (n - 1) as f64).collect();
        let y = x.clone();
        let mut v = Vec::new();
        for yj in &y {
            for xi in &x {
                v.push(f(*xi, *yj));
            }
        }
        (x, y, v)
    }

    #[test]
    fn circle_is_one_closed_loop() {
        let (x, y, v) = lattice(41, |a, b| (a * a + b * b).sqrt());
        let lat = Lattice { x: &x, y: &y, values: &v };
        let lines = lat.contour(0.5);
        assert_eq!(lines.len(), 1);
        assert!(lines[0].is_closed());
        for p in &lines[0].points {
            let r = (p[0] * p[0] + p[1] * p[1]).sqrt();
            assert!((r - 0.5).abs() < 0.01, "{r}");
        }
    }

    #[test]
    fn straight_level_is_one_open_line() {
        let (x, y, v) = lattice(11, |a, _| a);
        let lat = Lattice { x: &x, y: &y, values: &v };
        let lines = lat.contour(0.25);
        assert_eq!(lines.len(), 1);
        assert!(!lines[0].is_closed());
        assert_eq!(lines[0].points.len(), 11);
        assert!(lines[0].points.iter().all(|p| (p[0] - 0.25).abs() < 1e-12));
    }

    #[test]
    fn two_blobs_and_empty_levels() {
        let (x, y, v) = lattice(61, |a, b| ((a - 0.5).powi(2) + b * b).min((a + 0.5).powi(2) + b * b).sqrt());
        let lat = Lattice { x: &x, y: &y, values: &v };
        assert_eq!(lat.contour(0.2).len(), 2);
        assert!(lat.contour(5.0).is_empty());
    }

    #[test]
    fn output_format() {
        let lines = vec![
            Polyline {
                level: 0.5,
                points: vec![[0.0, 1.0], [1.0, 1.0]],
            },
            Polyline {
                level: 0.7,
                points: vec![[2.0, 0.0]],
            },
        ];
        let mut buf = Vec::new();
        write_polylines(&mut buf, ["x1", "x2"], &lines).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "x1,x2,level\n0.0,1.0,0.5\n1.0,1.0,0.5\n\n2.0,0.0,0.7\n");
    }
}
