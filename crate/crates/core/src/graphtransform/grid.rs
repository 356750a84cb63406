//! Uniform tensor grid over the cube `[-r, r]^k` with multilinear interpolation.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug, PartialEq)]
pub struct Grid {
    /// Number of axes.
    pub axes: usize,
    /// Nodes per axis.
    pub nodes: usize,
    pub radius: f64,
}

impl Grid {
    pub fn new(axes: usize, nodes: usize, radius: f64) -> Self {
        let nodes = if axes == 0 { 1 } else { nodes.max(2) };
        Grid { axes, nodes, radius }
    }

    pub fn len(&self) -> usize {
        self.nodes.pow(self.axes as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn spacing(&self) -> f64 {
        if self.nodes < 2 {
            return 0.0;
        }
        2.0 * self.radius / (self.nodes - 1) as f64
    }

    /// Multi-index of a flat node index (last axis fastest).
    pub fn multi_index(&self, mut idx: usize) -> Vec<usize> {
        let mut out = vec![0; self.axes];
        for a in (0..self.axes).rev() {
            out[a] = idx % self.nodes;
            idx /= self.nodes;
        }
        out
    }

    pub fn flat_index(&self, multi: &[usize]) -> usize {
        multi.iter().fold(0, |acc, &i| acc * self.nodes + i)
    }

    pub fn coord(&self, i: usize) -> f64 {
        if i + 1 == self.nodes {
            return self.radius;
        }
        -self.radius + self.spacing() * i as f64
    }

    pub fn node(&self, idx: usize) -> DVector<f64> {
        DVector::from_iterator(self.axes, self.multi_index(idx).into_iter().map(|i| self.coord(i)))
    }

    /// True when `u` lies in the cube up to a relative slack.
    pub fn contains(&self, u: &[f64], slack: f64) -> bool {
        u.iter().all(|c| c.abs() <= self.radius * (1.0 + slack))
    }

    /// True when the central-difference stencil of half-width `h` stays inside the cube.
    pub fn has_stencil(&self, u: &[f64], h: f64) -> bool {
        u.iter().all(|c| c.abs() + h <= self.radius * (1.0 + 1e-12))
    }

    /// Per axis: lower cell index and fractional position, clamped to the end cells so
    /// points slightly outside extrapolate linearly.
    fn locate(&self, u: &[f64]) -> Vec<(usize, f64)> {
        let h = self.spacing();
        u.iter()
            .map(|&c| {
                let s = (c + self.radius) / h;
                let i = (s.floor().max(0.0) as usize).min(self.nodes - 2);
                (i, s - i as f64)
            })
            .collect()
    }

    /// Multilinear interpolation of node data with `width` values per node.
    pub fn interpolate(&self, data: &[f64], width: usize, u: &[f64]) -> DVector<f64> {
        self.interpolate_with_gradient(data, width, u).0
    }

    /// Interpolated value and its derivative (`width × axes`) within the containing cell.
    pub fn interpolate_with_gradient(&self, data: &[f64], width: usize, u: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let mut value = DVector::zeros(width);
        let mut grad = DMatrix::zeros(width, self.axes);
        if self.axes == 0 {
            value.copy_from_slice(&data[..width]);
            return (value, grad);
        }
        let cells = self.locate(u);
        let h = self.spacing();
        let mut multi = vec![0; self.axes];
        for corner in 0..(1usize << self.axes) {
            let mut weight = 1.0;
            let mut dweights = vec![1.0; self.axes];
            for (a, &(i, f)) in cells.iter().enumerate() {
                let bit = (corner >> a) & 1;
                multi[a] = i + bit;
                let (w, dw) = if bit == 1 { (f, 1.0 / h) } else { (1.0 - f, -1.0 / h) };
                weight *= w;
                for (b, d) in dweights.iter_mut().enumerate() {
                    *d *= if a == b { dw } else { w };
                }
            }
            let base = self.flat_index(&multi) * width;
            for j in 0..width {
                let v = data[base + j];
                value[j] += weight * v;
                for a in 0..self.axes {
                    grad[(j, a)] += dweights[a] * v;
                }
            }
        }
        (value, grad)
    }

    /// Central-difference derivative (`width × axes`) of the interpolant at `u` with step `h`.
    pub fn central_difference(&self, data: &[f64], width: usize, u: &[f64], h: f64) -> DMatrix<f64> {
        let mut d = DMatrix::zeros(width, self.axes);
        let mut up = u.to_vec();
        for a in 0..self.axes {
            up[a] = u[a] + h;
            let plus = self.interpolate(data, width, &up);
            up[a] = u[a] - h;
            let minus = self.interpolate(data, width, &up);
            up[a] = u[a];
            d.set_column(a, &((plus - minus) / (2.0 * h)));
        }
        d
    }

    /// Flat indices of nodes whose full central-difference stencil is inside the grid.
    pub fn interior(&self) -> Vec<usize> {
        (0..self.len())
            .filter(|&i| self.multi_index(i).iter().all(|&j| j > 0 && j + 1 < self.nodes))
            .collect()
    }

    /// Forward edges `(i, j)` between grid neighbours.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.len() {
            let m = self.multi_index(i);
            for a in 0..self.axes {
                if m[a] + 1 < self.nodes {
                    let mut n = m.clone();
                    n[a] += 1;
                    out.push((i, self.flat_index(&n)));
                }
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_is_exact_on_bilinear_data() {
        let g = Grid::new(2, 5, 1.0);
        let f = |u: &DVector<f64>| 1.0 + 2.0 * u[0] - u[1] + 0.5 * u[0] * u[1];
        let data: Vec<f64> = (0..g.len()).map(|i| f(&g.node(i))).collect();
        for p in [[0.1, -0.7], [0.99, 0.33], [-1.0, 1.0]] {
            let (v, d) = g.interpolate_with_gradient(&data, 1, &p);
            assert!((v[0] - f(&DVector::from_column_slice(&p))).abs() < 1e-14);
            assert!((d[(0, 0)] - (2.0 + 0.5 * p[1])).abs() < 1e-12);
            assert!((d[(0, 1)] - (-1.0 + 0.5 * p[0])).abs() < 1e-12);
        }
    }

    #[test]
    fn indexing_round_trips() {
        let g = Grid::new(3, 4, 2.0);
        for i in 0..g.len() {
            assert_eq!(g.flat_index(&g.multi_index(i)), i);
        }
        assert_eq!(g.node(g.len() - 1).as_slice(), &[2.0, 2.0, 2.0]);
        assert_eq!(g.interior().len(), 8);
        assert_eq!(g.edges().len(), 3 * 3 * 16);
    }
}
