//! Dense tensor fields over the periodic grid.
//!
//! Components are stored node-major: the `dim^rank` components of one node
//! are contiguous, ordered row-major in the slot indices (slot 0 slowest).

use nalgebra::{Const, DMatrix, DimMin, SMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{arg, Error, Result};
use crate::grid::{sup_norm, Grid};
use crate::par;

/// Largest tensor rank the library materialises (`∇²Rm`, `∇³H`).
pub const MAX_RANK: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variance {
    Upper,
    Lower,
}

impl Variance {
    pub fn flipped(self) -> Self {
        match self {
            Variance::Upper => Variance::Lower,
            Variance::Lower => Variance::Upper,
        }
    }

    pub fn code(self) -> char {
        match self {
            Variance::Upper => 'u',
            Variance::Lower => 'l',
        }
    }

    pub fn from_code(c: char) -> Option<Self> {
        match c {
            'u' => Some(Variance::Upper),
            'l' => Some(Variance::Lower),
            _ => None,
        }
    }
}

/// Shorthand for `n` lower slots.
pub fn lower(n: usize) -> Vec<Variance> {
    vec![Variance::Lower; n]
}

#[derive(Debug, Clone, PartialEq)]
pub struct TensorField {
    grid: Grid,
    variance: Vec<Variance>,
    data: Vec<f64>,
}

impl TensorField {
    pub fn zeros(grid: Grid, variance: Vec<Variance>) -> Self {
        let width = grid.dim().pow(variance.len() as u32);
        TensorField { data: vec![0.0; grid.len() * width], grid, variance }
    }

    pub fn from_data(grid: Grid, variance: Vec<Variance>, data: Vec<f64>) -> Result<Self> {
        if variance.len() > MAX_RANK {
            return arg(format!("rank {} exceeds {MAX_RANK}", variance.len()));
        }
        let width = grid.dim().pow(variance.len() as u32);
        if data.len() != grid.len() * width {
            return Err(Error::ShapeMismatch(format!(
                "{} components supplied, expected {} nodes × {width}",
                data.len(),
                grid.len()
            )));
        }
        Ok(TensorField { grid, variance, data })
    }

    /// Build a field node by node; `f` fills the node's component block.
    pub fn from_fn<F>(grid: Grid, variance: Vec<Variance>, f: F) -> Self
    where
        F: Fn(usize, &mut [f64]) + Sync + Send,
    {
        let mut t = TensorField::zeros(grid, variance);
        let w = t.width();
        par::for_each_node(&mut t.data, w, f);
        t
    }

    pub fn scalar(grid: Grid, values: Vec<f64>) -> Result<Self> {
        TensorField::from_data(grid, Vec::new(), values)
    }

    pub fn constant_scalar(grid: Grid, value: f64) -> Self {
        TensorField { data: vec![value; grid.len()], grid, variance: Vec::new() }
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    #[inline]
    pub fn rank(&self) -> usize {
        self.variance.len()
    }

    pub fn variance(&self) -> &[Variance] {
        &self.variance
    }

    pub fn is_covariant(&self) -> bool {
        self.variance.iter().all(|&v| v == Variance::Lower)
    }

    /// Components per node, `dim^rank`.
    #[inline]
    pub fn width(&self) -> usize {
        self.dim().pow(self.rank() as u32)
    }

    #[inline]
    pub fn at(&self, node: usize) -> &[f64] {
        let w = self.width();
        &self.data[node * w..(node + 1) * w]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Component at `node` for the slot multi-index `idx`.
    pub fn get(&self, node: usize, idx: &[usize]) -> f64 {
        self.at(node)[flat_index(idx, self.dim())]
    }

    pub fn sup_norm(&self) -> f64 {
        sup_norm(&self.data)
    }

    fn check_same_shape(&self, other: &TensorField) -> Result<()> {
        if self.grid != other.grid || self.variance != other.variance {
            return arg("tensor fields differ in grid or variance");
        }
        Ok(())
    }

    /// `self += alpha * other`.
    pub fn axpy(&mut self, alpha: f64, other: &TensorField) -> Result<()> {
        self.check_same_shape(other)?;
        self.data.iter_mut().zip(&other.data).for_each(|(a, b)| *a += alpha * b);
        Ok(())
    }

    pub fn scaled(&self, alpha: f64) -> TensorField {
        let mut t = self.clone();
        t.data.iter_mut().for_each(|v| *v *= alpha);
        t
    }

    pub fn sub(&self, other: &TensorField) -> Result<TensorField> {
        let mut t = self.clone();
        t.axpy(-1.0, other)?;
        Ok(t)
    }

    pub fn add(&self, other: &TensorField) -> Result<TensorField> {
        let mut t = self.clone();
        t.axpy(1.0, other)?;
        Ok(t)
    }

    /// Largest absolute component difference.
    pub fn max_abs_diff(&self, other: &TensorField) -> Result<f64> {
        self.check_same_shape(other)?;
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .fold(0.0_f64, |m, (a, b)| m.max((a - b).abs())))
    }

    /// Central-difference `∂/∂x^axis` applied component-wise.
    pub fn partial(&self, axis: usize, order: crate::grid::StencilOrder) -> Result<TensorField> {
        let data = self.grid.partial(&self.data, self.width(), axis, order)?;
        Ok(TensorField { grid: self.grid, variance: self.variance.clone(), data })
    }

    /// Swap two slots; both must share a variance.
    pub fn transpose(&self, a: usize, b: usize) -> Result<TensorField> {
        self.check_slot(a)?;
        self.check_slot(b)?;
        if self.variance[a] != self.variance[b] {
            return arg("cannot transpose slots of different variance");
        }
        let table = swap_table(self.dim(), self.rank(), a, b);
        Ok(TensorField::from_fn(self.grid, self.variance.clone(), |node, out| {
            let src = self.at(node);
            out.iter_mut().zip(&table).for_each(|(o, &c)| *o = src[c]);
        }))
    }

    /// Average of the field and its `(a, b)` transpose.
    pub fn symmetrized(&self, a: usize, b: usize) -> Result<TensorField> {
        let t = self.transpose(a, b)?;
        let mut s = self.add(&t)?;
        s.data.iter_mut().for_each(|v| *v *= 0.5);
        Ok(s)
    }

    /// Largest `|T_{..a..b..} − T_{..b..a..}|`.
    pub fn symmetry_defect(&self, a: usize, b: usize) -> Result<f64> {
        self.max_abs_diff(&self.transpose(a, b)?)
    }

    /// Largest violation of full antisymmetry under adjacent transpositions.
    pub fn antisymmetry_defect(&self) -> f64 {
        let rank = self.rank();
        if self.variance.windows(2).any(|w| w[0] != w[1]) {
            return f64::INFINITY;
        }
        let tables: Vec<Vec<usize>> =
            (1..rank).map(|s| swap_table(self.dim(), rank, s - 1, s)).collect();
        let w = self.width();
        par::max_over(self.grid.len(), |node| {
            let v = &self.data[node * w..(node + 1) * w];
            tables
                .iter()
                .flat_map(|t| v.iter().zip(t).map(|(x, &c)| (x + v[c]).abs()))
                .fold(0.0_f64, f64::max)
        })
        .max(0.0)
    }

    pub fn check_antisymmetric(&self, what: &str) -> Result<()> {
        let tol = 1e-10 * self.sup_norm().max(1.0);
        let d = self.antisymmetry_defect();
        if d > tol {
            return arg(format!("{what} is not antisymmetric (defect {d:e})"));
        }
        Ok(())
    }

    fn check_slot(&self, slot: usize) -> Result<()> {
        if slot >= self.rank() {
            return arg(format!("slot {slot} out of range for rank {}", self.rank()));
        }
        Ok(())
    }
}

/// Flat component offset of a slot multi-index.
#[inline]
pub fn flat_index(idx: &[usize], dim: usize) -> usize {
    idx.iter().fold(0, |acc, &i| acc * dim + i)
}

/// Decompose a flat component offset into `rank` slot indices.
#[inline]
pub fn multi_index(mut c: usize, rank: usize, dim: usize) -> [usize; MAX_RANK] {
    let mut idx = [0; MAX_RANK];
    for s in (0..rank).rev() {
        idx[s] = c % dim;
        c /= dim;
    }
    idx
}

/// For each component offset, the offset with slots `a` and `b` exchanged.
pub(crate) fn swap_table(dim: usize, rank: usize, a: usize, b: usize) -> Vec<usize> {
    (0..dim.pow(rank as u32))
        .map(|c| {
            let mut idx = multi_index(c, rank, dim);
            idx.swap(a, b);
            flat_index(&idx[..rank], dim)
        })
        .collect()
}

/// Apply the `dim×dim` matrix `m` to one slot: `out_{..i..} = m_{ik} src_{..k..}`.
#[inline]
pub(crate) fn apply_on_slot(
    m: &[f64],
    dim: usize,
    rank: usize,
    slot: usize,
    src: &[f64],
    out: &mut [f64],
) {
    let inner = dim.pow((rank - 1 - slot) as u32);
    let block = dim * inner;
    for (ob, sb) in out[..src.len()].chunks_exact_mut(block).zip(src.chunks_exact(block)) {
        for i in 0..dim {
            let row = &m[i * dim..(i + 1) * dim];
            let o = &mut ob[i * inner..(i + 1) * inner];
            o.fill(0.0);
            for (k, &mk) in row.iter().enumerate() {
                if mk == 0.0 {
                    continue;
                }
                let sk = &sb[k * inner..(k + 1) * inner];
                o.iter_mut().zip(sk).for_each(|(x, y)| *x += mk * y);
            }
        }
    }
}

/// Riemannian metric with cached pointwise inverse and determinant.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    value: TensorField,
    inverse: TensorField,
    det: Vec<f64>,
}

/// Determinants at or below this are treated as degenerate.
pub const MIN_DETERMINANT: f64 = 1e-14;
/// Frobenius condition estimates above this are treated as degenerate.
pub const MAX_CONDITION: f64 = 1e12;

impl MetricField {
    /// Validate a symmetric covariant 2-tensor and invert it nodewise.
    pub fn new(value: TensorField) -> Result<Self> {
        if value.rank() != 2 || !value.is_covariant() {
            return arg("metric must be a covariant 2-tensor");
        }
        let dim = value.dim();
        let scale = value.sup_norm().max(1.0);
        let asym = value.symmetry_defect(0, 1)?;
        if asym > 1e-12 * scale {
            return arg(format!("metric is not symmetric (defect {asym:e})"));
        }
        let grid = *value.grid();
        let results: Vec<std::result::Result<(Vec<f64>, f64), String>> =
            par::map_collect(grid.len(), |node| invert_spd(dim, value.at(node)));
        let mut inverse = Vec::with_capacity(value.data.len());
        let mut det = Vec::with_capacity(grid.len());
        for (node, r) in results.into_iter().enumerate() {
            match r {
                Ok((inv, d)) => {
                    inverse.extend_from_slice(&inv);
                    det.push(d);
                }
                Err(reason) => return Err(Error::Degenerate { node, reason }),
            }
        }
        let inverse = TensorField::from_data(grid, vec![Variance::Upper; 2], inverse)?;
        Ok(MetricField { value, inverse, det })
    }

    pub fn flat(grid: Grid) -> Self {
        MetricField::scaled_identity(grid, 1.0).expect("identity metric is valid")
    }

    /// Constant metric `a·δ`.
    pub fn scaled_identity(grid: Grid, a: f64) -> Result<Self> {
        let dim = grid.dim();
        MetricField::new(TensorField::from_fn(grid, lower(2), |_, g| {
            for i in 0..dim {
                g[i * dim + i] = a;
            }
        }))
    }

    /// Conformally flat metric `e^{2u} δ` for a scalar field `u`.
    pub fn conformal(grid: Grid, u: &[f64]) -> Result<Self> {
        let dim = grid.dim();
        MetricField::new(TensorField::from_fn(grid, lower(2), |node, g| {
            let f = (2.0 * u[node]).exp();
            for i in 0..dim {
                g[i * dim + i] = f;
            }
        }))
    }

    pub fn value(&self) -> &TensorField {
        &self.value
    }

    pub fn inverse(&self) -> &TensorField {
        &self.inverse
    }

    pub fn det(&self) -> &[f64] {
        &self.det
    }

    pub fn grid(&self) -> &Grid {
        self.value.grid()
    }

    pub fn dim(&self) -> usize {
        self.value.dim()
    }

    #[inline]
    pub fn g_at(&self, node: usize) -> &[f64] {
        self.value.at(node)
    }

    #[inline]
    pub fn inv_at(&self, node: usize) -> &[f64] {
        self.inverse.at(node)
    }

    /// Smallest eigenvalue over all nodes and the node where it occurs.
    pub fn min_eigenvalue(&self) -> (f64, usize) {
        let dim = self.dim();
        let vals = par::map_collect(self.grid().len(), |node| {
            sym_eigenvalues(dim, self.g_at(node))[0]
        });
        vals.iter()
            .enumerate()
            .fold((f64::INFINITY, 0), |best, (n, &v)| if v < best.0 { (v, n) } else { best })
    }

    /// `sqrt(det g)` at each node.
    pub fn volume_density(&self) -> Vec<f64> {
        self.det.iter().map(|d| d.sqrt()).collect()
    }
}

/// Sorted eigenvalues of a symmetric `dim×dim` matrix given row-major.
pub fn sym_eigenvalues(dim: usize, a: &[f64]) -> Vec<f64> {
    let mut ev: Vec<f64> = match dim {
        2 => nalgebra::Matrix2::from_row_slice(a).symmetric_eigenvalues().as_slice().to_vec(),
        3 => nalgebra::Matrix3::from_row_slice(a).symmetric_eigenvalues().as_slice().to_vec(),
        4 => nalgebra::Matrix4::from_row_slice(a).symmetric_eigenvalues().as_slice().to_vec(),
        _ => {
            let m = DMatrix::from_row_slice(dim, dim, a);
            m.symmetric_eigenvalues().iter().copied().collect()
        }
    };
    ev.sort_by(|x, y| x.total_cmp(y));
    ev
}

fn invert_spd(dim: usize, a: &[f64]) -> std::result::Result<(Vec<f64>, f64), String> {
    match dim {
        2 => invert_fixed::<2>(a),
        3 => invert_fixed::<3>(a),
        4 => invert_fixed::<4>(a),
        _ => Err(format!("unsupported dimension {dim}")),
    }
}

fn invert_fixed<const D: usize>(a: &[f64]) -> std::result::Result<(Vec<f64>, f64), String>
where
    Const<D>: DimMin<Const<D>, Output = Const<D>>,
{
    let m = SMatrix::<f64, D, D>::from_row_slice(a);
    let det = m.determinant();
    if !det.is_finite() || det <= MIN_DETERMINANT {
        return Err(format!("det(g) = {det:e}"));
    }
    if m.cholesky().is_none() {
        let ev = sym_eigenvalues(D, a);
        return Err(format!("not positive definite, smallest eigenvalue {:e}", ev[0]));
    }
    let inv = m.try_inverse().ok_or_else(|| "singular metric".to_string())?;
    let cond = m.norm() * inv.norm();
    if cond > MAX_CONDITION {
        return Err(format!("condition estimate {cond:e}"));
    }
    let mut out = Vec::with_capacity(D * D);
    for i in 0..D {
        for j in 0..D {
            // exact symmetry for the cached inverse
            out.push(0.5 * (inv[(i, j)] + inv[(j, i)]));
        }
    }
    Ok((out, det))
}

fn slot_matrix<'a>(g: &'a MetricField, node: usize, from: Variance) -> &'a [f64] {
    match from {
        Variance::Lower => g.inv_at(node),
        Variance::Upper => g.g_at(node),
    }
}

/// Raise a lower slot with `g⁻¹`.
pub fn raise(t: &TensorField, slot: usize, g: &MetricField) -> Result<TensorField> {
    change_variance(t, slot, g, Variance::Lower)
}

/// Lower an upper slot with `g`.
pub fn lower_slot(t: &TensorField, slot: usize, g: &MetricField) -> Result<TensorField> {
    change_variance(t, slot, g, Variance::Upper)
}

fn change_variance(
    t: &TensorField,
    slot: usize,
    g: &MetricField,
    expected: Variance,
) -> Result<TensorField> {
    t.check_slot(slot)?;
    if t.variance[slot] != expected {
        return arg(format!("slot {slot} is already {:?}", expected.flipped()));
    }
    if t.grid != *g.grid() {
        return arg("tensor and metric live on different grids");
    }
    let (dim, rank) = (t.dim(), t.rank());
    let mut variance = t.variance.clone();
    variance[slot] = expected.flipped();
    Ok(TensorField::from_fn(t.grid, variance, |node, out| {
        apply_on_slot(slot_matrix(g, node, expected), dim, rank, slot, t.at(node), out)
    }))
}

/// Fully contract one node's components of `t` against `u` with every slot of
/// `u` moved to the opposite variance. `scratch` needs two blocks of `u.len()`.
#[inline]
pub(crate) fn inner_at(
    t: &[f64],
    u: &[f64],
    variance: &[Variance],
    g: &MetricField,
    node: usize,
    scratch: &mut [f64],
) -> f64 {
    let dim = g.dim();
    let rank = variance.len();
    let w = u.len();
    let (a, b) = scratch.split_at_mut(w);
    let b = &mut b[..w];
    a.copy_from_slice(u);
    for (s, &v) in variance.iter().enumerate() {
        apply_on_slot(slot_matrix(g, node, v), dim, rank, s, a, b);
        a.copy_from_slice(b);
    }
    t.iter().zip(a.iter()).map(|(x, y)| x * y).sum()
}

/// Pointwise metric inner product of two tensors of equal variance.
pub fn inner(t: &TensorField, u: &TensorField, g: &MetricField) -> Result<TensorField> {
    t.check_same_shape(u)?;
    if t.grid != *g.grid() {
        return arg("tensor and metric live on different grids");
    }
    let w = t.width();
    Ok(TensorField::from_fn(t.grid, Vec::new(), |node, out| {
        let mut scratch = vec![0.0; 2 * w];
        out[0] = inner_at(t.at(node), u.at(node), &t.variance, g, node, &mut scratch);
    }))
}

/// Pointwise squared norm `|T|²_g`.
pub fn norm_sq(t: &TensorField, g: &MetricField) -> Result<TensorField> {
    inner(t, t, g)
}

/// Pointwise norm `|T|_g`.
pub fn norm(t: &TensorField, g: &MetricField) -> Result<TensorField> {
    let mut n = norm_sq(t, g)?;
    n.data.iter_mut().for_each(|v| *v = v.max(0.0).sqrt());
    Ok(n)
}

/// Sup over the grid of `|T|_g`.
pub fn sup_norm_g(t: &TensorField, g: &MetricField) -> Result<f64> {
    Ok(norm(t, g)?.sup_norm())
}

/// Trace over an upper slot `a` and a lower slot `b`.
pub fn contract(t: &TensorField, a: usize, b: usize) -> Result<TensorField> {
    t.check_slot(a)?;
    t.check_slot(b)?;
    if a == b || t.variance[a] == t.variance[b] {
        return arg("contraction needs one upper and one lower slot");
    }
    let (dim, rank) = (t.dim(), t.rank());
    let variance: Vec<Variance> = t
        .variance
        .iter()
        .enumerate()
        .filter(|&(s, _)| s != a && s != b)
        .map(|(_, &v)| v)
        .collect();
    let out_rank = rank - 2;
    Ok(TensorField::from_fn(t.grid, variance, |node, out| {
        let src = t.at(node);
        let mut idx = [0usize; MAX_RANK];
        for (c, o) in out.iter_mut().enumerate() {
            let oi = multi_index(c, out_rank, dim);
            let mut r = 0;
            for s in 0..rank {
                if s != a && s != b {
                    idx[s] = oi[r];
                    r += 1;
                }
            }
            let mut acc = 0.0;
            for k in 0..dim {
                idx[a] = k;
                idx[b] = k;
                acc += src[flat_index(&idx[..rank], dim)];
            }
            *o = acc;
        }
    }))
}

/// Trace of two lower slots against `g⁻¹`.
pub fn trace_with(t: &TensorField, a: usize, b: usize, g: &MetricField) -> Result<TensorField> {
    contract(&raise(t, a, g)?, a, b)
}
