//! Levi-Civita connection, curvature, covariant derivatives and the
//! operators on differential forms built from them.
//!
//! Curvature convention: `R(∂i,∂j)∂l = R^m_ijl ∂m` with
//! `R^m_ijl = ∂i Γ^m_jl − ∂j Γ^m_il + Γ^m_ip Γ^p_jl − Γ^m_jp Γ^p_il`,
//! lowered as `R_ijkl = g_km R^m_ijl`. Then `R_ij = g^kl R_ikjl`, and a round
//! sphere of curvature `K` has `R_ijkl = K (g_ik g_jl − g_il g_jk)`.

use crate::error::{arg, Result};
use crate::grid::{Grid, StencilOrder};
use crate::tensor::{
    apply_on_slot, contract, flat_index, lower, multi_index, raise, MetricField, TensorField,
    Variance, MAX_RANK,
};

/// Metric together with its Christoffel symbols `Γ^k_ij` (slots `k, i, j`).
#[derive(Debug, Clone)]
pub struct Connection {
    pub metric: MetricField,
    pub christoffel: TensorField,
    pub order: StencilOrder,
}

impl Connection {
    pub fn new(metric: MetricField, order: StencilOrder) -> Result<Self> {
        let christoffel = christoffel(&metric, order)?;
        Ok(Connection { metric, christoffel, order })
    }

    pub fn grid(&self) -> &Grid {
        self.metric.grid()
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }
}

/// Connection plus the curvature tensors of one metric.
#[derive(Debug, Clone)]
pub struct GeometryCache {
    pub conn: Connection,
    /// `R_ijkl`, all slots lower.
    pub riemann: TensorField,
    pub ricci: TensorField,
    pub scalar: TensorField,
}

impl GeometryCache {
    pub fn metric(&self) -> &MetricField {
        &self.conn.metric
    }
}

/// `Γ^k_ij = ½ g^kl (∂i g_jl + ∂j g_il − ∂l g_ij)`.
pub fn christoffel(g: &MetricField, order: StencilOrder) -> Result<TensorField> {
    let grid = *g.grid();
    let dim = grid.dim();
    let dg = grid.gradient(g.value().data(), dim * dim, order)?;
    let w = dim * dim;
    let variance = vec![Variance::Upper, Variance::Lower, Variance::Lower];
    Ok(TensorField::from_fn(grid, variance, |node, out| {
        let d = &dg[node * dim * w..(node + 1) * dim * w];
        let ginv = g.inv_at(node);
        // d[a*w + j*dim + l] = ∂a g_jl
        for i in 0..dim {
            for j in 0..dim {
                for l in 0..dim {
                    let lower_sym =
                        d[i * w + j * dim + l] + d[j * w + i * dim + l] - d[l * w + i * dim + j];
                    for k in 0..dim {
                        out[(k * dim + i) * dim + j] += 0.5 * ginv[k * dim + l] * lower_sym;
                    }
                }
            }
        }
    }))
}

/// Christoffel symbols, Riemann, Ricci and scalar curvature of `g`.
pub fn curvature(g: &MetricField, order: StencilOrder) -> Result<GeometryCache> {
    let conn = Connection::new(g.clone(), order)?;
    curvature_from(conn)
}

pub fn curvature_from(conn: Connection) -> Result<GeometryCache> {
    let grid = *conn.grid();
    let dim = grid.dim();
    let gam = &conn.christoffel;
    let w3 = dim * dim * dim;
    let dgam = grid.gradient(gam.data(), w3, conn.order)?;
    let g = &conn.metric;
    let riemann = TensorField::from_fn(grid, lower(4), |node, out| {
        let d = &dgam[node * dim * w3..(node + 1) * dim * w3];
        let c = gam.at(node);
        let gl = g.g_at(node);
        let at = |a: usize, b: usize, e: usize, f: usize| ((a * dim + b) * dim + e) * dim + f;
        // q[i][m][j][l] = ∂i Γ^m_jl + Γ^m_ip Γ^p_jl
        let mut q = [0.0; 256];
        for i in 0..dim {
            for m in 0..dim {
                for j in 0..dim {
                    for l in 0..dim {
                        let mut v = d[at(i, m, j, l)];
                        for p in 0..dim {
                            v += c[(m * dim + i) * dim + p] * c[(p * dim + j) * dim + l];
                        }
                        q[at(i, m, j, l)] = v;
                    }
                }
            }
        }
        for i in 0..dim {
            for j in (i + 1)..dim {
                for l in 0..dim {
                    let mut up = [0.0; 4];
                    for (m, u) in up.iter_mut().enumerate().take(dim) {
                        *u = q[at(i, m, j, l)] - q[at(j, m, i, l)];
                    }
                    for k in 0..dim {
                        let acc: f64 = (0..dim).map(|m| gl[k * dim + m] * up[m]).sum();
                        out[at(i, j, k, l)] = acc;
                        out[at(j, i, k, l)] = -acc;
                    }
                }
            }
        }
        project_algebraic(out, dim);
    });
    let ricci = ricci_from_riemann(&riemann, g)?;
    let scalar = contract(&raise(&ricci, 0, g)?, 0, 1)?;
    Ok(GeometryCache { conn, riemann, ricci, scalar })
}

/// Replace a 4-tensor by its nearest algebraic curvature tensor: antisymmetric
/// in each pair, symmetric under pair exchange, and satisfying the first
/// Bianchi identity. The lowered discrete Riemann tensor has these only to
/// truncation order; projecting makes Ricci exactly symmetric and keeps
/// contraction identities exact in floating point.
fn project_algebraic(r: &mut [f64], dim: usize) {
    let at = |i: usize, j: usize, k: usize, l: usize| ((i * dim + j) * dim + k) * dim + l;
    let mut a = [0.0; 256];
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                for l in 0..dim {
                    let v = 0.25
                        * (r[at(i, j, k, l)] - r[at(j, i, k, l)] - r[at(i, j, l, k)] + r[at(j, i, l, k)]);
                    let w = 0.25
                        * (r[at(k, l, i, j)] - r[at(l, k, i, j)] - r[at(k, l, j, i)] + r[at(l, k, j, i)]);
                    a[at(i, j, k, l)] = 0.5 * (v + w);
                }
            }
        }
    }
    for i in 0..dim {
        for j in 0..dim {
            for k in 0..dim {
                for l in 0..dim {
                    let cyc = a[at(i, j, k, l)] + a[at(i, k, l, j)] + a[at(i, l, j, k)];
                    r[at(i, j, k, l)] = a[at(i, j, k, l)] - cyc / 3.0;
                }
            }
        }
    }
}

/// `R_ij = g^kl R_ikjl`.
pub fn ricci_from_riemann(riemann: &TensorField, g: &MetricField) -> Result<TensorField> {
    let dim = g.dim();
    Ok(TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let r = riemann.at(node);
        let gi = g.inv_at(node);
        for i in 0..dim {
            for j in 0..dim {
                let mut acc = 0.0;
                for k in 0..dim {
                    for l in 0..dim {
                        acc += gi[k * dim + l] * r[((i * dim + k) * dim + j) * dim + l];
                    }
                }
                out[i * dim + j] = acc;
            }
        }
    }))
}

/// `∇T` at one node, new derivative slot first. `dt` holds `∂a T` blocks.
fn nabla_at(
    conn: &Connection,
    variance: &[Variance],
    t: &[f64],
    dt: &[f64],
    node: usize,
    out: &mut [f64],
    scratch: &mut [f64],
) {
    let dim = conn.dim();
    let rank = variance.len();
    let w = t.len();
    let gam = conn.christoffel.at(node);
    let mut m = [0.0; 16];
    out.copy_from_slice(dt);
    for a in 0..dim {
        let block = &mut out[a * w..(a + 1) * w];
        for (s, &v) in variance.iter().enumerate() {
            for i in 0..dim {
                for k in 0..dim {
                    m[i * dim + k] = match v {
                        // −Γ^k_{a i} T_{..k..}
                        Variance::Lower => -gam[(k * dim + a) * dim + i],
                        // +Γ^i_{a k} T^{..k..}
                        Variance::Upper => gam[(i * dim + a) * dim + k],
                    };
                }
            }
            apply_on_slot(&m[..dim * dim], dim, rank, s, t, scratch);
            block.iter_mut().zip(scratch.iter()).for_each(|(o, c)| *o += c);
        }
    }
}

fn check_grid(t: &TensorField, conn: &Connection) -> Result<()> {
    if t.grid() != conn.grid() {
        return arg("tensor and connection live on different grids");
    }
    Ok(())
}

/// Covariant derivative `∇T`; the derivative index becomes slot 0.
pub fn covariant_derivative(t: &TensorField, conn: &Connection) -> Result<TensorField> {
    check_grid(t, conn)?;
    if t.rank() + 1 > MAX_RANK {
        return arg(format!("covariant derivative of rank {} exceeds rank {MAX_RANK}", t.rank()));
    }
    let grid = *t.grid();
    let w = t.width();
    let dt = grid.gradient(t.data(), w, conn.order)?;
    let mut variance = vec![Variance::Lower];
    variance.extend_from_slice(t.variance());
    let dim = grid.dim();
    Ok(TensorField::from_fn(grid, variance, |node, out| {
        let mut scratch = vec![0.0; w];
        nabla_at(
            conn,
            t.variance(),
            t.at(node),
            &dt[node * dim * w..(node + 1) * dim * w],
            node,
            out,
            &mut scratch,
        );
    }))
}

/// `m`-fold covariant derivative.
pub fn covariant_derivative_n(t: &TensorField, conn: &Connection, m: usize) -> Result<TensorField> {
    let mut cur = t.clone();
    for _ in 0..m {
        cur = covariant_derivative(&cur, conn)?;
    }
    Ok(cur)
}

/// `g^ab ∇a S_{b…}` for a tensor whose first slot is lower.
pub fn divergence(s: &TensorField, conn: &Connection) -> Result<TensorField> {
    check_grid(s, conn)?;
    if s.rank() == 0 || s.variance()[0] != Variance::Lower {
        return arg("divergence needs a tensor with a lower first slot");
    }
    let grid = *s.grid();
    let dim = grid.dim();
    let w = s.width();
    let rest = w / dim;
    let variance = s.variance()[1..].to_vec();
    let g = &conn.metric;
    Ok(TensorField::from_fn(grid, variance, |node, out| {
        let mut dt = vec![0.0; dim * w];
        for a in 0..dim {
            grid.partial_at(s.data(), w, node, a, conn.order, &mut dt[a * w..(a + 1) * w]);
        }
        let mut full = vec![0.0; dim * w];
        let mut scratch = vec![0.0; w];
        nabla_at(conn, s.variance(), s.at(node), &dt, node, &mut full, &mut scratch);
        let gi = g.inv_at(node);
        for a in 0..dim {
            for b in 0..dim {
                let f = gi[a * dim + b];
                if f == 0.0 {
                    continue;
                }
                let src = &full[a * w + b * rest..a * w + (b + 1) * rest];
                out.iter_mut().zip(src).for_each(|(o, v)| *o += f * v);
            }
        }
    }))
}

/// Rough Laplacian `Δ T = g^ab ∇a ∇b T`.
pub fn rough_laplacian(t: &TensorField, conn: &Connection) -> Result<TensorField> {
    if t.rank() > 4 {
        return arg(format!("rough Laplacian of rank {} not supported", t.rank()));
    }
    divergence(&covariant_derivative(t, conn)?, conn)
}

/// Exterior derivative of a `p`-form (metric independent).
pub fn exterior_derivative(omega: &TensorField, order: StencilOrder) -> Result<TensorField> {
    let p = omega.rank();
    let grid = *omega.grid();
    let dim = grid.dim();
    if !omega.is_covariant() {
        return arg("exterior derivative needs a covariant form");
    }
    if p >= dim {
        return arg(format!("exterior derivative of a {p}-form in dimension {dim}"));
    }
    omega.check_antisymmetric("form")?;
    let w = omega.width();
    let d = grid.gradient(omega.data(), w, order)?;
    // (dω)_{i0…ip} = Σ_s (−1)^s ∂_{i_s} ω_{i0…î_s…ip}; gather offsets once
    let out_w = dim.pow(p as u32 + 1);
    let mut terms = Vec::with_capacity(out_w * (p + 1));
    let mut rest = [0usize; MAX_RANK];
    for c in 0..out_w {
        let idx = multi_index(c, p + 1, dim);
        for s in 0..=p {
            let mut r = 0;
            for t in 0..=p {
                if t != s {
                    rest[r] = idx[t];
                    r += 1;
                }
            }
            let sign = if s % 2 == 0 { 1.0 } else { -1.0 };
            terms.push((idx[s] * w + flat_index(&rest[..p], dim), sign));
        }
    }
    Ok(TensorField::from_fn(grid, lower(p + 1), |node, out| {
        let dn = &d[node * dim * w..(node + 1) * dim * w];
        for (o, chunk) in out.iter_mut().zip(terms.chunks(p + 1)) {
            *o = chunk.iter().map(|&(off, sign)| sign * dn[off]).sum();
        }
    }))
}

/// Codifferential `(d*ω)_{I} = −g^jk ∇j ω_{kI}`.
pub fn codifferential(omega: &TensorField, conn: &Connection) -> Result<TensorField> {
    if omega.rank() == 0 {
        return arg("codifferential of a 0-form");
    }
    if !omega.is_covariant() {
        return arg("codifferential needs a covariant form");
    }
    omega.check_antisymmetric("form")?;
    Ok(divergence(omega, conn)?.scaled(-1.0))
}

/// Hodge–Bochner Laplacian `□ω = −(d d*ω + d* dω)`.
pub fn hodge_laplacian(omega: &TensorField, conn: &Connection) -> Result<TensorField> {
    let p = omega.rank();
    let dim = conn.dim();
    let mut acc = TensorField::zeros(*omega.grid(), lower(p));
    if p > dim {
        // forms above top degree vanish identically
        return Ok(acc);
    }
    if p >= 1 {
        let dd = exterior_derivative(&codifferential(omega, conn)?, conn.order)?;
        acc.axpy(-1.0, &dd)?;
    }
    if p < dim {
        let dd = codifferential(&exterior_derivative(omega, conn.order)?, conn)?;
        acc.axpy(-1.0, &dd)?;
    }
    Ok(acc)
}

/// `−dd*ω`, the refined right side for closed forms.
pub fn neg_d_codifferential(omega: &TensorField, conn: &Connection) -> Result<TensorField> {
    if omega.rank() > conn.dim() {
        return Ok(TensorField::zeros(*omega.grid(), omega.variance().to_vec()));
    }
    Ok(exterior_derivative(&codifferential(omega, conn)?, conn.order)?.scaled(-1.0))
}

/// Commutator `[∇x, ∇y] T` written through the curvature:
/// `C_{xy c1…cr} = −Σ_t g^mk R_{xykc_t} T_{c1…m…cr}` (covariant `T` only).
pub fn curvature_action(t: &TensorField, riemann: &TensorField, g: &MetricField) -> Result<TensorField> {
    if !t.is_covariant() {
        return arg("curvature action implemented for covariant tensors");
    }
    let rank = t.rank();
    if rank + 2 > MAX_RANK {
        return arg(format!("curvature action on rank {rank} exceeds rank {MAX_RANK}"));
    }
    let dim = g.dim();
    let w = t.width();
    Ok(TensorField::from_fn(*t.grid(), lower(rank + 2), |node, out| {
        let r = riemann.at(node);
        let gi = g.inv_at(node);
        let tn = t.at(node);
        let mut m = [0.0; 16];
        let mut scratch = vec![0.0; w];
        for x in 0..dim {
            for y in 0..dim {
                // m[c][m'] = −R_{xy}^{m'}_c = −g^{m'k} R_{xykc}
                for c in 0..dim {
                    for mm in 0..dim {
                        let mut acc = 0.0;
                        for k in 0..dim {
                            acc += gi[mm * dim + k] * r[((x * dim + y) * dim + k) * dim + c];
                        }
                        m[c * dim + mm] = -acc;
                    }
                }
                let block = &mut out[(x * dim + y) * w..(x * dim + y + 1) * w];
                for s in 0..rank {
                    apply_on_slot(&m[..dim * dim], dim, rank, s, tn, &mut scratch);
                    block.iter_mut().zip(&scratch).for_each(|(o, v)| *o += v);
                }
            }
        }
    }))
}

/// Curvature term of the Weitzenböck formula, `□ω − Δω`, assembled from `Rm`:
/// `W_{i1…ip} = −Σ_s g^ab C_{b i_s; i1…a…ip}` with `C = [∇,∇]ω`.
pub fn weitzenbock_term(omega: &TensorField, geom: &GeometryCache) -> Result<TensorField> {
    let p = omega.rank();
    let g = geom.metric();
    let c = curvature_action(omega, &geom.riemann, g)?;
    let dim = g.dim();
    let w = omega.width();
    Ok(TensorField::from_fn(*omega.grid(), lower(p), |node, out| {
        let cn = c.at(node);
        let gi = g.inv_at(node);
        let mut idx = [0usize; MAX_RANK];
        for (f, o) in out.iter_mut().enumerate() {
            let i = multi_index(f, p, dim);
            let mut acc = 0.0;
            for s in 0..p {
                idx[..p].copy_from_slice(&i[..p]);
                for a in 0..dim {
                    idx[s] = a;
                    let inner = flat_index(&idx[..p], dim);
                    for b in 0..dim {
                        acc -= gi[a * dim + b] * cn[(b * dim + i[s]) * w + inner];
                    }
                }
            }
            *o = acc;
        }
    }))
}

/// `h_ij = H_ikl H_jpq g^kp g^lq`.
pub fn h_tensor(h: &TensorField, g: &MetricField) -> Result<TensorField> {
    if h.rank() != 3 || !h.is_covariant() {
        return arg("h_tensor needs a covariant 3-form");
    }
    let up = raise(&raise(h, 1, g)?, 2, g)?;
    let dim = g.dim();
    let d2 = dim * dim;
    Ok(TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let a = h.at(node);
        let b = up.at(node);
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = (0..d2).map(|kl| a[i * d2 + kl] * b[j * d2 + kl]).sum();
            }
        }
    }))
}

/// `f_ij = F_ik F_jl g^kl`.
pub fn f_tensor(f: &TensorField, g: &MetricField) -> Result<TensorField> {
    if f.rank() != 2 || !f.is_covariant() {
        return arg("f_tensor needs a covariant 2-form");
    }
    let up = raise(f, 1, g)?;
    let dim = g.dim();
    Ok(TensorField::from_fn(*g.grid(), lower(2), |node, out| {
        let a = f.at(node);
        let b = up.at(node);
        for i in 0..dim {
            for j in 0..dim {
                out[i * dim + j] = (0..dim).map(|k| a[i * dim + k] * b[j * dim + k]).sum();
            }
        }
    }))
}
