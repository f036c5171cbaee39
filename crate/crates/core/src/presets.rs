//! Initial data with known analytic structure.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg, Result};
use crate::flow::FlowState;
use crate::geometry::exterior_derivative;
use crate::grid::{Grid, StencilOrder};
use crate::tensor::{flat_index, lower, MetricField, TensorField};

/// Largest perturbation amplitude accepted by the presets.
pub const MAX_EPSILON: f64 = 0.3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum Preset {
    /// `g = δ`, `H = 0`.
    Flat,
    /// `g = a0·δ` on T³ with `H = k dx⁰∧dx¹∧dx²`.
    T3ConstantForm { a0: f64, k: f64 },
    /// `g = e^{2ε sin⟨w,x⟩} δ` on T², `H = 0`.
    ConformalT2 { epsilon: f64, wavevector: [i64; 2] },
    /// `g = δ + ε P` with a seeded band-limited symmetric `P`, and
    /// `H = dB` for a seeded band-limited 2-form `B` of size `form_amplitude`.
    PerturbedMetric { epsilon: f64, seed: u64, form_amplitude: f64 },
    /// Flat T³ with potentials `A = ε sin x⁰ dx¹`, `B = ε sin x⁰ dx¹∧dx²`.
    ExtendedMaxwell { epsilon: f64 },
}

impl Preset {
    pub fn name(&self) -> &'static str {
        match self {
            Preset::Flat => "flat",
            Preset::T3ConstantForm { .. } => "t3_constant_form",
            Preset::ConformalT2 { .. } => "conformal_t2",
            Preset::PerturbedMetric { .. } => "perturbed_metric",
            Preset::ExtendedMaxwell { .. } => "extended_maxwell",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PresetSpec {
    pub preset: Preset,
    pub grid: Grid,
}

fn check_epsilon(key: &str, eps: f64) -> Result<()> {
    if !(0.0..=MAX_EPSILON).contains(&eps) {
        return arg(format!("{key} must lie in [0, {MAX_EPSILON}], got {eps}"));
    }
    Ok(())
}

fn require_dim(grid: &Grid, dim: usize, name: &str) -> Result<()> {
    if grid.dim() != dim {
        return arg(format!("preset {name} requires dim = {dim}, got {}", grid.dim()));
    }
    Ok(())
}

impl PresetSpec {
    pub fn new(preset: Preset, grid: Grid) -> Result<Self> {
        let spec = PresetSpec { preset, grid };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let name = self.preset.name();
        match self.preset {
            Preset::Flat => Ok(()),
            Preset::T3ConstantForm { a0, k } => {
                require_dim(&self.grid, 3, name)?;
                if !(a0 > 0.0 && a0.is_finite()) {
                    return arg(format!("a0 must be positive, got {a0}"));
                }
                if !k.is_finite() {
                    return arg("k must be finite");
                }
                Ok(())
            }
            Preset::ConformalT2 { epsilon, wavevector } => {
                require_dim(&self.grid, 2, name)?;
                check_epsilon("epsilon", epsilon)?;
                if wavevector == [0, 0] {
                    return arg("wavevector must be nonzero");
                }
                Ok(())
            }
            Preset::PerturbedMetric { epsilon, form_amplitude, .. } => {
                check_epsilon("epsilon", epsilon)?;
                check_epsilon("form_amplitude", form_amplitude)?;
                if form_amplitude > 0.0 && self.grid.dim() < 3 {
                    return arg("a nonzero 3-form needs dim ≥ 3");
                }
                Ok(())
            }
            Preset::ExtendedMaxwell { epsilon } => {
                require_dim(&self.grid, 3, name)?;
                check_epsilon("epsilon", epsilon)
            }
        }
    }

    pub fn build(&self, order: StencilOrder) -> Result<FlowState> {
        build(self, order)
    }
}

fn zero_h(grid: Grid) -> TensorField {
    TensorField::zeros(grid, lower(3))
}

/// Constant 3-form `k dx⁰∧dx¹∧dx²` (dim ≥ 3).
pub fn volume_3form(grid: Grid, k: f64) -> TensorField {
    let dim = grid.dim();
    let perms: [([usize; 3], f64); 6] = [
        ([0, 1, 2], 1.0),
        ([1, 2, 0], 1.0),
        ([2, 0, 1], 1.0),
        ([0, 2, 1], -1.0),
        ([2, 1, 0], -1.0),
        ([1, 0, 2], -1.0),
    ];
    TensorField::from_fn(grid, lower(3), |_, out| {
        for (idx, sign) in &perms {
            out[flat_index(idx, dim)] = sign * k;
        }
    })
}

pub fn build(spec: &PresetSpec, order: StencilOrder) -> Result<FlowState> {
    spec.validate()?;
    let grid = spec.grid;
    let dim = grid.dim();
    match spec.preset {
        Preset::Flat => FlowState::new(0.0, MetricField::flat(grid), zero_h(grid)),
        Preset::T3ConstantForm { a0, k } => {
            FlowState::new(0.0, MetricField::scaled_identity(grid, a0)?, volume_3form(grid, k))
        }
        Preset::ConformalT2 { epsilon, wavevector } => {
            let w = wavevector.map(|c| c as f64);
            let u = grid.sample(|x| epsilon * (w[0] * x[0] + w[1] * x[1]).sin());
            FlowState::new(0.0, MetricField::conformal(grid, &u)?, zero_h(grid))
        }
        Preset::PerturbedMetric { epsilon, seed, form_amplitude } => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let modes = low_modes(dim);
            let pert = random_symmetric(grid, &modes, &mut rng);
            let g = TensorField::from_fn(grid, lower(2), |node, out| {
                let p = pert.at(node);
                for (c, o) in out.iter_mut().enumerate() {
                    let diag = if c / dim == c % dim { 1.0 } else { 0.0 };
                    *o = diag + epsilon * p[c];
                }
            });
            let g = MetricField::new(g)?;
            if form_amplitude == 0.0 {
                return FlowState::new(0.0, g, zero_h(grid));
            }
            let b = random_2form(grid, &modes, &mut rng).scaled(form_amplitude);
            let h = exterior_derivative(&b, order)?;
            FlowState::new(0.0, g, h)
        }
        Preset::ExtendedMaxwell { epsilon } => {
            let a = TensorField::from_fn(grid, lower(1), |node, out| {
                out[1] = epsilon * grid.position(node)[0].sin();
            });
            let b = TensorField::from_fn(grid, lower(2), |node, out| {
                let v = epsilon * grid.position(node)[0].sin();
                out[dim + 2] = v;
                out[2 * dim + 1] = -v;
            });
            FlowState::with_potentials(0.0, MetricField::flat(grid), a, b, order)
        }
    }
}

/// Integer wavevectors with `1 ≤ |m|₁ ≤ 2`, one of each `±m` pair.
fn low_modes(dim: usize) -> Vec<Vec<i64>> {
    let mut out = Vec::new();
    let total = 5usize.pow(dim as u32);
    for code in 0..total {
        let m: Vec<i64> = (0..dim).map(|a| ((code / 5usize.pow(a as u32)) % 5) as i64 - 2).collect();
        let l1: i64 = m.iter().map(|c| c.abs()).sum();
        let first = m.iter().find(|&&c| c != 0).copied().unwrap_or(0);
        if (1..=2).contains(&l1) && first > 0 {
            out.push(m);
        }
    }
    out
}

/// One random trigonometric series per component, scaled so `sup|P_c| ≤ 1/dim`.
fn random_series(grid: Grid, modes: &[Vec<i64>], count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let dim = grid.dim();
    (0..count)
        .map(|_| {
            let coeffs: Vec<(f64, f64)> =
                modes.iter().map(|_| (rng.gen_range(-1.0..=1.0), rng.gen_range(-1.0..=1.0))).collect();
            let bound: f64 = coeffs.iter().map(|(c, s)| c.abs() + s.abs()).sum();
            let scale = 1.0 / (bound.max(f64::MIN_POSITIVE) * dim as f64);
            grid.sample(|x| {
                modes
                    .iter()
                    .zip(&coeffs)
                    .map(|(m, (c, s))| {
                        let phase: f64 = m.iter().zip(x).map(|(&k, xi)| k as f64 * xi).sum();
                        c * phase.cos() + s * phase.sin()
                    })
                    .sum::<f64>()
                    * scale
            })
        })
        .collect()
}

fn random_symmetric(grid: Grid, modes: &[Vec<i64>], rng: &mut ChaCha8Rng) -> TensorField {
    let dim = grid.dim();
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|i| (i..dim).map(move |j| (i, j))).collect();
    let series = random_series(grid, modes, pairs.len(), rng);
    TensorField::from_fn(grid, lower(2), |node, out| {
        for (&(i, j), s) in pairs.iter().zip(&series) {
            out[i * dim + j] = s[node];
            out[j * dim + i] = s[node];
        }
    })
}

fn random_2form(grid: Grid, modes: &[Vec<i64>], rng: &mut ChaCha8Rng) -> TensorField {
    let dim = grid.dim();
    let pairs: Vec<(usize, usize)> = (0..dim).flat_map(|i| (i + 1..dim).map(move |j| (i, j))).collect();
    let series = random_series(grid, modes, pairs.len(), rng);
    TensorField::from_fn(grid, lower(2), |node, out| {
        for (&(i, j), s) in pairs.iter().zip(&series) {
            out[i * dim + j] = s[node];
            out[j * dim + i] = -s[node];
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::curvature;
    use crate::tensor::norm_sq;

    const O4: StencilOrder = StencilOrder::Fourth;

    fn spec(preset: Preset, dim: usize, n: usize) -> PresetSpec {
        PresetSpec::new(preset, Grid::new(dim, n).unwrap()).unwrap()
    }

    #[test]
    fn flat_preset() {
        let s = spec(Preset::Flat, 3, 8).build(O4).unwrap();
        assert_eq!(s.g, MetricField::flat(*s.grid()));
        assert_eq!(s.h.sup_norm(), 0.0);
        assert_eq!(curvature(&s.g, O4).unwrap().riemann.sup_norm(), 0.0);
    }

    #[test]
    fn t3_constant_form_has_norm_six() {
        let s = spec(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, 3, 8).build(O4).unwrap();
        let n2 = norm_sq(&s.h, &s.g).unwrap();
        assert!(n2.data().iter().all(|&v| v == 6.0));
        // index-sum oracle: six nonzero entries of magnitude k
        assert_eq!(s.h.at(0).iter().filter(|v| v.abs() == 1.0).count(), 6);
    }

    #[test]
    fn conformal_preset_scalar_curvature() {
        let s = spec(Preset::ConformalT2 { epsilon: 0.1, wavevector: [1, 0] }, 2, 64).build(O4).unwrap();
        let geom = curvature(&s.g, O4).unwrap();
        let node = s.grid().node_at(&[16, 3]);
        assert!((geom.scalar.data()[node] - 0.2 * (-0.2f64).exp()).abs() < 5e-6);
    }

    #[test]
    fn perturbed_metric_is_deterministic_and_positive() {
        let p = Preset::PerturbedMetric { epsilon: 0.3, seed: 7, form_amplitude: 0.2 };
        let a = spec(p.clone(), 3, 8).build(O4).unwrap();
        let b = spec(p, 3, 8).build(O4).unwrap();
        assert_eq!(a, b);
        assert!(a.g.min_eigenvalue().0 >= 0.7 - 1e-12);
        assert!(a.h.sup_norm() > 0.0);
        let c = spec(Preset::PerturbedMetric { epsilon: 0.3, seed: 8, form_amplitude: 0.2 }, 3, 8)
            .build(O4)
            .unwrap();
        assert_ne!(a.g, c.g);
    }

    #[test]
    fn perturbed_form_is_closed_in_4d() {
        let p = Preset::PerturbedMetric { epsilon: 0.1, seed: 1, form_amplitude: 0.1 };
        let s = spec(p, 4, 8).build(O4).unwrap();
        assert!(exterior_derivative(&s.h, O4).unwrap().sup_norm() < 1e-14);
    }

    #[test]
    fn low_modes_count() {
        assert_eq!(low_modes(2).len(), 6);
        assert_eq!(low_modes(3).len(), 12);
    }

    #[test]
    fn extended_maxwell_potentials() {
        let s = spec(Preset::ExtendedMaxwell { epsilon: 0.2 }, 3, 16).build(O4).unwrap();
        assert!(s.is_extended());
        let f = s.field_strength(O4).unwrap().unwrap();
        let h4 = s.grid().spacing().powi(4);
        assert!((f.get(0, &[0, 1]) - 0.2).abs() < h4);
        assert!((s.h.get(0, &[0, 1, 2]) - 0.2).abs() < h4);
    }

    #[test]
    fn dimension_and_range_checks() {
        let g2 = Grid::new(2, 8).unwrap();
        let g3 = Grid::new(3, 8).unwrap();
        assert!(PresetSpec::new(Preset::T3ConstantForm { a0: 1.0, k: 1.0 }, g2).is_err());
        assert!(PresetSpec::new(Preset::ConformalT2 { epsilon: 0.1, wavevector: [1, 0] }, g3).is_err());
        assert!(PresetSpec::new(Preset::ExtendedMaxwell { epsilon: 0.1 }, g2).is_err());
        assert!(PresetSpec::new(Preset::T3ConstantForm { a0: 0.0, k: 1.0 }, g3).is_err());
        assert!(PresetSpec::new(Preset::ConformalT2 { epsilon: 0.5, wavevector: [1, 0] }, g2).is_err());
        assert!(PresetSpec::new(Preset::ConformalT2 { epsilon: 0.1, wavevector: [0, 0] }, g2).is_err());
        let p = Preset::PerturbedMetric { epsilon: 0.1, seed: 0, form_amplitude: 0.1 };
        assert!(PresetSpec::new(p, g2).is_err());
    }
}
