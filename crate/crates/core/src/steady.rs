//! Stationary profiles.
//!
//! At equilibrium both lumens carry the same concentration `ū`, and the
//! whole system reduces to one scalar ODE for the ascending epithelium
//! concentration `q̄2`:
//!
//! ```text
//! dq̄2/dx = G(q̄2) / (α (1 + G'(q̄2)/k)),     q̄2(0) + G(q̄2(0))/k = ū_b
//! ```
//!
//! The other compartments follow algebraically:
//! `ū = q̄2 + G/k`, `q̄1 = q̄2 + 2G/k`, `ū0 = q̄2 + (1/K1 + 2/k) G`.

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::grid::{derivative4, Grid1D};
use crate::model::ModelParams;
use crate::output::write_csv;
use crate::roots::newton_bisect;

/// Default number of nodes for steady solves.
pub const DEFAULT_STEADY_NODES: usize = 2001;

/// Tolerances of the boundary-value Newton solve.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteadyOptions {
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SteadyOptions {
    fn default() -> Self {
        Self { newton_rel_tol: 1e-12, newton_max_iter: 50 }
    }
}

/// Stationary solution sampled on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct SteadyProfile {
    pub grid: Grid1D,
    /// Common lumen concentration `ū = ū1 = ū2`.
    pub u: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub u0: Vec<f64>,
    /// Fractional increase in concentration along the lumen, in percent.
    pub fic: f64,
    /// `q̄2(0)`.
    pub q2_0: f64,
}

impl SteadyProfile {
    /// CSV with header `x,u,q1,q2,u0`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let x = self.grid.points();
        write_csv(
            w,
            &["x", "u", "q1", "q2", "u0"],
            (0..self.grid.len()).map(|i| vec![x[i], self.u[i], self.q1[i], self.q2[i], self.u0[i]]),
        )
    }

    /// Smallest relative gap in the chain `q̄2 < ū < q̄1 < ū0`, taken over
    /// nodes and links and measured against `ū`. Positive iff the chain is strict.
    pub fn ordering_margin(&self) -> f64 {
        (0..self.grid.len())
            .map(|i| {
                let gaps = [self.u[i] - self.q2[i], self.q1[i] - self.u[i], self.u0[i] - self.q1[i]];
                gaps.into_iter().fold(f64::INFINITY, f64::min) / self.u[i]
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Solves `y + G(y)/k = ub_bar` for the boundary value `q̄2(0)`.
pub fn solve_boundary_q2(ub_bar: f64, params: &ModelParams) -> Result<f64> {
    solve_boundary_q2_with(ub_bar, params, &SteadyOptions::default(), ub_bar)
}

/// [`solve_boundary_q2`] with explicit tolerances and Newton starting point.
pub fn solve_boundary_q2_with(ub_bar: f64, params: &ModelParams, opts: &SteadyOptions, guess: f64) -> Result<f64> {
    if !(ub_bar.is_finite() && ub_bar > 0.0) {
        return Err(invalid("ub_bar", format!("must be > 0, got {ub_bar}")));
    }
    let k = params.k();
    if k <= 0.0 {
        return Err(invalid("P", "steady profiles need a positive lumen permeability"));
    }
    let pump = params.pump;
    if pump.vm2 == 0.0 {
        return Ok(ub_bar);
    }
    let map = |y: f64| (y + pump.rate(y) / k - ub_bar, 1.0 + pump.derivative(y) / k);
    let root = newton_bisect(map, 0.0, ub_bar, guess, opts.newton_rel_tol, opts.newton_max_iter)?;
    let (residual, slope) = map(root.x);
    let residual = residual.abs();
    // a steep map (small k) amplifies the last-ulp error in y
    if residual > 1e-12 * ub_bar * slope.max(1.0) {
        return Err(Error::NoConvergence {
            method: "boundary Newton solve",
            iterations: root.newton_iterations,
            residual,
        });
    }
    Ok(root.x)
}

/// Right-hand side of the reduced steady ODE.
#[inline]
fn reduced_rhs(q: f64, params: &ModelParams) -> f64 {
    let p = &params.pump;
    p.rate(q) / (params.alpha() * (1.0 + p.derivative(q) / params.k()))
}

/// Classic RK4 for `dq̄2/dx = G(q̄2) / (α (1 + G'(q̄2)/k))` from `q2_0`.
pub fn integrate_q2(q2_0: f64, params: &ModelParams, grid: &Grid1D) -> Result<Vec<f64>> {
    if !(q2_0.is_finite() && q2_0 > 0.0) {
        return Err(invalid("q2_0", format!("must be > 0, got {q2_0}")));
    }
    rk4(q2_0, grid, |q| reduced_rhs(q, params))
}

pub(crate) fn rk4(y0: f64, grid: &Grid1D, f: impl Fn(f64) -> f64) -> Result<Vec<f64>> {
    let h = grid.spacing();
    let mut out = Vec::with_capacity(grid.len());
    let mut y = y0;
    out.push(y);
    for _ in 1..grid.len() {
        let k1 = f(y);
        let k2 = f(y + 0.5 * h * k1);
        let k3 = f(y + 0.5 * h * k2);
        let k4 = f(y + h * k3);
        y += h / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4);
        if !y.is_finite() {
            return Err(Error::NonFinite("steady RK4 step"));
        }
        out.push(y);
    }
    Ok(out)
}

/// Rebuilds all compartments from a `q̄2` profile.
pub fn reconstruct(q2: Vec<f64>, params: &ModelParams, grid: &Grid1D) -> Result<SteadyProfile> {
    if q2.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: q2.len() });
    }
    let (k, k1) = (params.k(), params.k1());
    let mut u = Vec::with_capacity(q2.len());
    let mut q1 = Vec::with_capacity(q2.len());
    let mut u0 = Vec::with_capacity(q2.len());
    for &q in &q2 {
        let g = params.pump.rate(q);
        u.push(q + g / k);
        q1.push(q + 2.0 * g / k);
        u0.push((1.0 / k1 + 2.0 / k) * g + q);
    }
    Ok(SteadyProfile { grid: *grid, fic: fic_of(&u), q2_0: q2[0], u, q1, q2, u0 })
}

pub fn solve_steady(params: &ModelParams, grid: &Grid1D) -> Result<SteadyProfile> {
    solve_steady_with(params, grid, &SteadyOptions::default())
}

pub fn solve_steady_with(params: &ModelParams, grid: &Grid1D, opts: &SteadyOptions) -> Result<SteadyProfile> {
    let q2_0 = solve_boundary_q2_with(params.ub_bar, params, opts, params.ub_bar)?;
    let q2 = integrate_q2(q2_0, params, grid)?;
    reconstruct(q2, params, grid)
}

/// `100 (ū(L) - ū(0)) / ū(0)`.
pub fn fic(profile: &SteadyProfile) -> f64 {
    fic_of(&profile.u)
}

pub fn fic_of(u: &[f64]) -> f64 {
    let (first, last) = (u[0], u[u.len() - 1]);
    100.0 * (last - first) / first
}

/// Residuals of the five stationary balance equations, each relative to the
/// largest individual flux term on the grid.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StationaryResiduals {
    pub lumen1: f64,
    pub lumen2: f64,
    pub epithelium1: f64,
    pub epithelium2: f64,
    pub interstitium: f64,
    pub inflow: f64,
}

impl StationaryResiduals {
    pub fn max(&self) -> f64 {
        [self.lumen1, self.lumen2, self.epithelium1, self.epithelium2, self.interstitium, self.inflow]
            .into_iter()
            .fold(0.0, f64::max)
    }
}

/// Evaluates the stationary system on the profile, with `∂x ū` from
/// fourth-order differences of the samples. Needs at least 5 nodes.
pub fn residuals(profile: &SteadyProfile, params: &ModelParams) -> Result<StationaryResiduals> {
    let n = profile.grid.len();
    if n < 5 {
        return Err(invalid("grid_n", "residual check needs at least 5 nodes"));
    }
    let (k, k1, alpha) = (params.k(), params.k1(), params.alpha());
    let du = derivative4(&profile.u, profile.grid.spacing());
    let mut scale = f64::MIN_POSITIVE;
    let mut r = [0.0f64; 5];
    for i in 0..n {
        let (u, q1, q2, u0) = (profile.u[i], profile.q1[i], profile.q2[i], profile.u0[i]);
        let g = params.pump.rate(q2);
        let terms = [alpha * du[i], k * (q1 - u), k * (q2 - u), k1 * (u0 - q1), g];
        scale = terms.iter().fold(scale, |m, t| m.max(t.abs()));
        let eqs = [
            alpha * du[i] - k * (q1 - u),
            -alpha * du[i] - k * (q2 - u),
            k * (u - q1) + k1 * (u0 - q1),
            k * (u - q2) - g,
            k1 * (q1 - u0) + g,
        ];
        for (acc, e) in r.iter_mut().zip(eqs) {
            *acc = acc.max(e.abs());
        }
    }
    Ok(StationaryResiduals {
        lumen1: r[0] / scale,
        lumen2: r[1] / scale,
        epithelium1: r[2] / scale,
        epithelium2: r[3] / scale,
        interstitium: r[4] / scale,
        inflow: (profile.u[0] - params.ub_bar).abs() / params.ub_bar,
    })
}

/// Derivatives of `q̄2(0)` with respect to the pump rate and to `k`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundarySensitivities {
    /// `∂q̄2(0)/∂Vm2`, never positive.
    pub d_vm: f64,
    /// `∂q̄2(0)/∂k`, never negative.
    pub d_k: f64,
}

/// Implicit differentiation of `q̄2(0) + G(q̄2(0))/k = ū_b`.
pub fn boundary_sensitivities(params: &ModelParams) -> Result<BoundarySensitivities> {
    let q = solve_boundary_q2(params.ub_bar, params)?;
    let k = params.k();
    let p = &params.pump;
    let denom = 1.0 + p.derivative(q) / k;
    Ok(BoundarySensitivities { d_vm: -(1.0 / k) * p.saturation_cubed(q) / denom, d_k: (p.rate(q) / (k * k)) / denom })
}

/// Axial luminal gradient at the inflow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxialGradient {
    /// `G(q̄2(0)) / α`, exact in the continuum.
    pub continuum: f64,
    /// Second-order one-sided difference of the sampled `ū` at `x = 0`.
    pub sampled: f64,
}

pub fn axial_gradient_at_origin(profile: &SteadyProfile, params: &ModelParams) -> AxialGradient {
    let h = profile.grid.spacing();
    let u = &profile.u;
    let sampled = if u.len() >= 3 { (-3.0 * u[0] + 4.0 * u[1] - u[2]) / (2.0 * h) } else { (u[1] - u[0]) / h };
    AxialGradient { continuum: params.pump.rate(profile.q2_0) / params.alpha(), sampled }
}

/// Slope of `q̄2` at the inflow, `G(q̄2(0)) / (α (1 + G'(q̄2(0))/k))`.
pub fn q2_slope_at_origin(params: &ModelParams) -> Result<f64> {
    let q = solve_boundary_q2(params.ub_bar, params)?;
    Ok(reduced_rhs(q, params))
}

/// The two asymptotic regimes of the lumen/epithelium permeability.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitRegimes {
    /// `k → ∞`: `dq̄2/dx = G(q̄2)/α`, `q̄2(0) = ū_b`, `ū = q̄1 = q̄2`,
    /// `ū0 = q̄2 + G(q̄2)/K1`.
    pub large_k: SteadyProfile,
    /// `k → 0`: the epithelial profile flattens, `∂x q̄2 → 0`.
    pub small_k_q2_slope: f64,
}

pub fn limit_regimes(params: &ModelParams, grid: &Grid1D) -> Result<LimitRegimes> {
    let alpha = params.alpha();
    let pump = params.pump;
    let q2 = rk4(params.ub_bar, grid, |q| pump.rate(q) / alpha)?;
    let u0: Vec<f64> = q2.iter().map(|&q| q + pump.rate(q) / params.k1()).collect();
    let large_k = SteadyProfile { grid: *grid, fic: fic_of(&q2), q2_0: q2[0], u: q2.clone(), q1: q2.clone(), u0, q2 };
    Ok(LimitRegimes { large_k, small_k_q2_slope: 0.0 })
}
