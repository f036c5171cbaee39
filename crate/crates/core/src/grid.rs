//! Uniform periodic lattice on the flat torus `[0, 2π)^n`.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::par;

/// Central-difference stencil accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(try_from = "u32", into = "u32")]
pub enum StencilOrder {
    Second,
    #[default]
    Fourth,
}

impl StencilOrder {
    pub fn order(self) -> u32 {
        match self {
            StencilOrder::Second => 2,
            StencilOrder::Fourth => 4,
        }
    }
}

impl TryFrom<u32> for StencilOrder {
    type Error = Error;

    fn try_from(v: u32) -> Result<Self> {
        match v {
            2 => Ok(StencilOrder::Second),
            4 => Ok(StencilOrder::Fourth),
            _ => arg(format!("stencil order must be 2 or 4, got {v}")),
        }
    }
}

impl From<StencilOrder> for u32 {
    fn from(s: StencilOrder) -> u32 {
        s.order()
    }
}

/// Isotropic periodic grid with `n` points per axis and spacing `h = 2π/n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Grid {
    dim: usize,
    n: usize,
}

impl Grid {
    pub const MIN_RESOLUTION: usize = 8;

    pub fn new(dim: usize, n: usize) -> Result<Self> {
        if !(2..=4).contains(&dim) {
            return arg(format!("grid dimension must be 2, 3 or 4, got {dim}"));
        }
        if n < Self::MIN_RESOLUTION {
            return arg(format!("resolution must be ≥ {}, got {n}", Self::MIN_RESOLUTION));
        }
        Ok(Grid { dim, n })
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.dim
    }

    #[inline]
    pub fn resolution(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn spacing(&self) -> f64 {
        2.0 * PI / self.n as f64
    }

    /// Total number of nodes, `n^dim`.
    #[inline]
    pub fn len(&self) -> usize {
        self.n.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Row-major stride of `axis` (axis 0 varies slowest).
    #[inline]
    pub fn stride(&self, axis: usize) -> usize {
        self.n.pow((self.dim - 1 - axis) as u32)
    }

    /// Lattice coordinate of `node` along `axis`.
    #[inline]
    pub fn coord(&self, node: usize, axis: usize) -> usize {
        (node / self.stride(axis)) % self.n
    }

    /// Physical position of a node, `x^a = i_a h`.
    pub fn position(&self, node: usize) -> Vec<f64> {
        let h = self.spacing();
        (0..self.dim).map(|a| self.coord(node, a) as f64 * h).collect()
    }

    /// Node index for a lattice multi-index (each entry reduced mod n).
    pub fn node_at(&self, index: &[usize]) -> usize {
        index
            .iter()
            .enumerate()
            .map(|(a, &i)| (i % self.n) * self.stride(a))
            .sum()
    }

    /// Node displaced by `shift` lattice steps along `axis`, wrapping periodically.
    #[inline]
    pub fn shifted(&self, node: usize, axis: usize, shift: isize) -> usize {
        let stride = self.stride(axis);
        let c = (node / stride) % self.n;
        let nc = (c as isize + shift).rem_euclid(self.n as isize) as usize;
        node + nc * stride - c * stride
    }

    /// Sample a function of position at every node.
    pub fn sample<F>(&self, f: F) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64 + Sync + Send,
    {
        let mut out = vec![0.0; self.len()];
        par::for_each_node(&mut out, 1, |node, v| v[0] = f(&self.position(node)));
        out
    }

    fn check_axis(&self, axis: usize) -> Result<()> {
        if axis >= self.dim {
            return arg(format!("axis {axis} out of range for dimension {}", self.dim));
        }
        Ok(())
    }

    /// Central-difference `∂/∂x^axis` of a field stored as `width` values per node.
    pub fn partial(
        &self,
        values: &[f64],
        width: usize,
        axis: usize,
        order: StencilOrder,
    ) -> Result<Vec<f64>> {
        self.check_axis(axis)?;
        self.check_len(values, width)?;
        let mut out = vec![0.0; values.len()];
        par::for_each_node(&mut out, width, |node, o| {
            self.partial_at(values, width, node, axis, order, o)
        });
        Ok(out)
    }

    /// All partials at once; the new derivative slot comes first, so the output
    /// holds `dim * width` values per node laid out as `[axis][component]`.
    pub fn gradient(&self, values: &[f64], width: usize, order: StencilOrder) -> Result<Vec<f64>> {
        self.check_len(values, width)?;
        let dim = self.dim;
        let mut out = vec![0.0; values.len() * dim];
        par::for_each_node(&mut out, width * dim, |node, o| {
            for (a, block) in o.chunks_mut(width).enumerate() {
                self.partial_at(values, width, node, a, order, block);
            }
        });
        Ok(out)
    }

    #[inline]
    pub(crate) fn partial_at(
        &self,
        values: &[f64],
        width: usize,
        node: usize,
        axis: usize,
        order: StencilOrder,
        out: &mut [f64],
    ) {
        let h = self.spacing();
        match order {
            StencilOrder::Second => {
                let p = self.shifted(node, axis, 1) * width;
                let m = self.shifted(node, axis, -1) * width;
                let s = 1.0 / (2.0 * h);
                for c in 0..width {
                    out[c] = (values[p + c] - values[m + c]) * s;
                }
            }
            StencilOrder::Fourth => {
                let p1 = self.shifted(node, axis, 1) * width;
                let m1 = self.shifted(node, axis, -1) * width;
                let p2 = self.shifted(node, axis, 2) * width;
                let m2 = self.shifted(node, axis, -2) * width;
                let s = 1.0 / (12.0 * h);
                for c in 0..width {
                    out[c] = (8.0 * (values[p1 + c] - values[m1 + c])
                        - (values[p2 + c] - values[m2 + c]))
                        * s;
                }
            }
        }
    }

    fn check_len(&self, values: &[f64], width: usize) -> Result<()> {
        if width == 0 || values.len() != self.len() * width {
            return arg(format!(
                "field has {} values, expected {} nodes × {width}",
                values.len(),
                self.len()
            ));
        }
        Ok(())
    }

    /// Riemann-sum integral `Σ f h^dim` over the torus (flat volume).
    pub fn integrate(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() * self.spacing().powi(self.dim as i32)
    }
}

/// Largest absolute value over all entries; 0 for an empty slice.
pub fn sup_norm(values: &[f64]) -> f64 {
    values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sin0(grid: &Grid) -> Vec<f64> {
        grid.sample(|x| x[0].sin())
    }

    #[test]
    fn rejects_coarse_or_odd_dimension_grids() {
        assert!(Grid::new(3, 7).is_err());
        assert!(Grid::new(1, 16).is_err());
        assert!(Grid::new(5, 16).is_err());
        let g = Grid::new(3, 8).unwrap();
        assert!((g.spacing() * 8.0 - 2.0 * PI).abs() < 1e-15);
    }

    #[test]
    fn shifted_wraps_on_every_axis() {
        let g = Grid::new(3, 8).unwrap();
        let node = g.node_at(&[0, 7, 3]);
        assert_eq!(g.shifted(node, 1, 1), g.node_at(&[0, 0, 3]));
        assert_eq!(g.shifted(node, 0, -1), g.node_at(&[7, 7, 3]));
        assert_eq!(g.shifted(node, 2, -5), g.node_at(&[0, 7, 6]));
    }

    #[test]
    fn partial_of_constant_is_exactly_zero() {
        let g = Grid::new(2, 16).unwrap();
        let c = vec![3.25; g.len()];
        for order in [StencilOrder::Second, StencilOrder::Fourth] {
            for axis in 0..2 {
                let d = g.partial(&c, 1, axis, order).unwrap();
                assert!(d.iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn partial_along_invariant_axis_is_exactly_zero() {
        let g = Grid::new(3, 12).unwrap();
        let f = sin0(&g);
        let d = g.partial(&f, 1, 2, StencilOrder::Fourth).unwrap();
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn partial_of_sine_at_origin() {
        let g = Grid::new(2, 32).unwrap();
        let d = g.partial(&sin0(&g), 1, 0, StencilOrder::Fourth).unwrap();
        let h = g.spacing();
        // leading truncation term is h^4/30 · f^(5)
        assert!((d[0] - 1.0).abs() < h.powi(4) / 20.0);
    }

    #[test]
    fn axis_out_of_range_is_an_argument_error() {
        let g = Grid::new(2, 8).unwrap();
        let f = vec![0.0; g.len()];
        assert!(matches!(
            g.partial(&f, 1, 2, StencilOrder::Fourth),
            Err(Error::Argument(_))
        ));
    }

    #[test]
    fn convergence_order_under_refinement() {
        for (order, min_slope) in [(StencilOrder::Second, 1.9), (StencilOrder::Fourth, 3.9)] {
            let err = |n: usize| {
                let g = Grid::new(2, n).unwrap();
                let d = g.partial(&sin0(&g), 1, 0, order).unwrap();
                let exact = g.sample(|x| x[0].cos());
                d.iter().zip(&exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max)
            };
            let slope = (err(16) / err(32)).log2();
            assert!(slope >= min_slope, "order {:?}: slope {slope}", order);
        }
    }

    #[test]
    fn mixed_partials_commute() {
        let g = Grid::new(3, 10).unwrap();
        let f = g.sample(|x| (x[0] + 2.0 * x[1]).sin() * x[2].cos() + x[1].cos());
        let o = StencilOrder::Fourth;
        let a = g.partial(&g.partial(&f, 1, 0, o).unwrap(), 1, 1, o).unwrap();
        let b = g.partial(&g.partial(&f, 1, 1, o).unwrap(), 1, 0, o).unwrap();
        let diff = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn sup_norm_bounds() {
        let g = Grid::new(2, 8).unwrap();
        assert_eq!(sup_norm(&vec![0.0; g.len()]), 0.0);
        let s = sup_norm(&sin0(&g));
        assert!(s <= 1.0 && s > 0.99);
    }
}
