//! Frozen verdict tolerances.
//!
//! Each residual check passes when `sup_residual ≤ C · (h^p + dt²)` (or the
//! stated variant). The prefactors were measured once on the flat, conformal
//! and perturbed presets at the resolutions used by the test suite and then
//! rounded up by roughly an order of magnitude. They are not tuned per run.

/// Riemann evolution residual prefactor.
pub const C_RIEMANN: f64 = 2.0;
/// Ricci evolution residual prefactor.
pub const C_RICCI: f64 = 2.0;
/// Scalar curvature evolution residual prefactor.
pub const C_SCALAR: f64 = 2.0;
/// Commutator identity `∇ΔA − Δ∇A = ∇Rm∗A + Rm∗∇A`. Calibrated on test
/// fields with wavenumbers at most 2 (observed `residual/h⁴` up to about 3);
/// the truncation error grows like the sixth power of the wavenumber.
pub const C_COMMUTATOR: f64 = 20.0;
/// General first-variation formula, against `h^p + ε⁴`.
pub const C_FIRST_VARIATION: f64 = 2.0;
/// Hodge minus rough Laplacian against the Weitzenböck term.
pub const C_BOCHNER: f64 = 2.0;
/// `−dd*H` against `□H` for closed `H`.
pub const C_RGRF_GRF: f64 = 1.0;
/// Expanded gauge-fixed metric rate against its assembled form.
pub const C_DETURCK: f64 = 2.0;
/// Extended-mode `F` and `H` evolution residuals.
pub const C_EXTENDED: f64 = 2.0;
/// Absolute bound on `sup|dH|` along closed runs.
pub const CLOSEDNESS: f64 = 1e-10;
/// Relative bound for identities that hold exactly in floating point algebra.
pub const ALGEBRAIC: f64 = 1e-10;
/// Allowed shortfall of a measured convergence order.
pub const ORDER_SLACK: f64 = 0.1;
/// Default constant in the maximum-principle bound `|H| ≤ K₂ e^{C K₁ t}`.
pub const MAX_PRINCIPLE_C: f64 = 8.0;
/// Tolerance on generalized-eigenvalue sandwich margins.
pub const EQUIVALENCE_MARGIN: f64 = 1e-10;
/// Coefficient `c_n` in `C̄ = 2 sup|Rc| + c_n sup|H|²` (`h(V,V) ≤ |H|² g(V,V)`).
pub const EQUIVALENCE_H_COEFF: f64 = 0.5;
