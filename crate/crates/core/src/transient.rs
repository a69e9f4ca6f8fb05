//! Time integration of the five-compartment system.
//!
//! Node-centred finite volumes on the uniform grid: node `i` owns a cell of
//! width `h` (`h/2` at both ends). Luminal transport is first-order upwind,
//! `u1` moving towards `x = L` with inflow `u_b(t)` and `u2` moving back
//! with the hairpin inflow `u2(L) = u1(L)`. Both the transport fluxes and
//! the five exchange fluxes cancel in the discrete mass
//! `Σ w (a1 u1 + a2 u2 + a3 q1 + a4 q2 + a0 u0)`, leaving only
//! `α (u_b - u2(0))` per unit time.

use std::io::Write;

use nalgebra::{Matrix5, Vector5};
use rayon::prelude::*;

use crate::eigen::{decay_rate, solve_eigenpair, EigenInputs, EigenPair};
use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::model::{Coefficients, ModelParams, PumpParams};
use crate::output::write_csv;
use crate::steady::{solve_boundary_q2, solve_steady, SteadyProfile};

/// Fraction of the positivity limit used by [`stable_dt`].
pub const CFL_SAFETY: f64 = 0.9;
/// Values below this are reported as a scheme failure.
pub const NEGATIVITY_TOL: f64 = -1e-12;
/// Default number of observer samples.
pub const DEFAULT_SAMPLES: usize = 200;
/// Default run length in units of the relaxation time `1/λ̄`.
pub const DEFAULT_RELAXATION_TIMES: f64 = 20.0;

const FIELD_NAMES: [&str; 5] = ["u1", "u2", "q1", "q2", "u0"];

/// Concentrations of all compartments at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct TransientState {
    pub t: f64,
    pub grid: Grid1D,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub u0: Vec<f64>,
}

impl TransientState {
    /// Validates lengths, finiteness and nonnegativity.
    pub fn from_fields(grid: Grid1D, fields: [Vec<f64>; 5]) -> Result<Self> {
        for (name, f) in FIELD_NAMES.iter().zip(&fields) {
            if f.len() != grid.len() {
                return Err(Error::GridMismatch { expected: grid.len(), got: f.len() });
            }
            if let Some((node, &value)) = f.iter().enumerate().find(|(_, v)| !(v.is_finite() && **v >= 0.0)) {
                if !value.is_finite() {
                    return Err(Error::NonFinite(name));
                }
                return Err(Error::Negativity { field: name, node, value });
            }
        }
        let [u1, u2, q1, q2, u0] = fields;
        Ok(Self { t: 0.0, grid, u1, u2, q1, q2, u0 })
    }

    pub fn uniform(grid: Grid1D, c: f64) -> Result<Self> {
        Self::from_fields(grid, std::array::from_fn(|_| vec![c; grid.len()]))
    }

    /// Both lumens take the steady `ū`.
    pub fn from_steady(profile: &SteadyProfile) -> Self {
        Self {
            t: 0.0,
            grid: profile.grid,
            u1: profile.u.clone(),
            u2: profile.u.clone(),
            q1: profile.q1.clone(),
            q2: profile.q2.clone(),
            u0: profile.u0.clone(),
        }
    }

    /// Fields in the order `u1, u2, q1, q2, u0`.
    pub fn fields(&self) -> [&[f64]; 5] {
        [&self.u1, &self.u2, &self.q1, &self.q2, &self.u0]
    }

    fn fields_mut(&mut self) -> [&mut Vec<f64>; 5] {
        [&mut self.u1, &mut self.u2, &mut self.q1, &mut self.q2, &mut self.u0]
    }

    /// Discrete total mass `Σ w (a1 u1 + a2 u2 + a3 q1 + a4 q2 + a0 u0)`.
    pub fn mass(&self, params: &ModelParams) -> f64 {
        let areas = params.coefficients().areas();
        let w = self.grid.cell_widths();
        (0..self.grid.len()).map(|i| w[i] * (0..5).map(|j| areas[j] * self.fields()[j][i]).sum::<f64>()).sum()
    }

    /// CSV with header `x,u1,u2,q1,q2,u0`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let x = self.grid.points();
        write_csv(
            w,
            &["x", "u1", "u2", "q1", "q2", "u0"],
            (0..self.grid.len()).map(|i| vec![x[i], self.u1[i], self.u2[i], self.q1[i], self.q2[i], self.u0[i]]),
        )
    }

    fn check_nonnegative(&self) -> Result<()> {
        for (name, f) in FIELD_NAMES.iter().zip(self.fields()) {
            for (node, &value) in f.iter().enumerate() {
                if !value.is_finite() {
                    return Err(Error::NonFinite(name));
                }
                if value < NEGATIVITY_TOL {
                    return Err(Error::Negativity { field: name, node, value });
                }
            }
        }
        Ok(())
    }
}

/// Inflow concentration `u_b(t)` at the descending-limb entrance.
#[derive(Debug, Clone, PartialEq)]
pub enum BoundarySignal {
    Constant {
        ub_bar: f64,
    },
    /// `ub_bar + c0 · exp(-mu0 · t)`.
    Exponential {
        ub_bar: f64,
        c0: f64,
        mu0: f64,
    },
    /// Piecewise-linear through `(t, value)` points, held at the end values.
    Table {
        ub_bar: f64,
        points: Vec<(f64, f64)>,
    },
}

impl BoundarySignal {
    pub fn constant(ub_bar: f64) -> Result<Self> {
        nonneg("ub_bar", ub_bar)?;
        Ok(Self::Constant { ub_bar })
    }

    pub fn exponential(ub_bar: f64, c0: f64, mu0: f64) -> Result<Self> {
        nonneg("ub_bar", ub_bar)?;
        if !c0.is_finite() {
            return Err(invalid("C0", "must be finite"));
        }
        if !(mu0.is_finite() && mu0 > 0.0) {
            return Err(invalid("mu0", format!("must be > 0, got {mu0}")));
        }
        if ub_bar + c0.min(0.0) < 0.0 {
            return Err(invalid("C0", "ub_bar + C0 must be >= 0 so the inflow stays nonnegative"));
        }
        Ok(Self::Exponential { ub_bar, c0, mu0 })
    }

    /// The last point must carry the limit value `ub_bar`.
    pub fn table(ub_bar: f64, points: Vec<(f64, f64)>) -> Result<Self> {
        nonneg("ub_bar", ub_bar)?;
        if points.is_empty() {
            return Err(invalid("table", "needs at least one point"));
        }
        if points.windows(2).any(|p| !(p[1].0 > p[0].0)) {
            return Err(invalid("table", "times must be strictly increasing"));
        }
        if points.iter().any(|&(t, v)| !(t.is_finite() && v.is_finite() && v >= 0.0)) {
            return Err(invalid("table", "times must be finite and values nonnegative"));
        }
        let last = points[points.len() - 1].1;
        if (last - ub_bar).abs() > 1e-12 * ub_bar.max(1.0) {
            return Err(invalid("table", format!("last value {last} must equal ub_bar = {ub_bar}")));
        }
        Ok(Self::Table { ub_bar, points })
    }

    /// Limit `ū_b` as `t → ∞`.
    pub fn limit(&self) -> f64 {
        match self {
            Self::Constant { ub_bar } | Self::Exponential { ub_bar, .. } | Self::Table { ub_bar, .. } => *ub_bar,
        }
    }

    pub fn value(&self, t: f64) -> f64 {
        match self {
            Self::Constant { ub_bar } => *ub_bar,
            Self::Exponential { ub_bar, c0, mu0 } => ub_bar + c0 * (-mu0 * t).exp(),
            Self::Table { points, .. } => {
                let i = points.partition_point(|p| p.0 <= t);
                if i == 0 {
                    points[0].1
                } else if i == points.len() {
                    points[i - 1].1
                } else {
                    let ((t0, v0), (t1, v1)) = (points[i - 1], points[i]);
                    v0 + (v1 - v0) * (t - t0) / (t1 - t0)
                }
            }
        }
    }
}

fn nonneg(name: &'static str, v: f64) -> Result<()> {
    if !(v.is_finite() && v >= 0.0) {
        return Err(invalid(name, format!("must be finite and >= 0, got {v}")));
    }
    Ok(())
}

/// Treatment of the exchange and pump terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Scheme {
    /// Forward Euler for everything.
    #[default]
    Explicit,
    /// Explicit transport, then backward Euler on the exchange block with the
    /// pump frozen as `(G(q2*)/q2*) · q2`. Only the transport limits `dt`.
    ImplicitExchange,
}

/// Initial data choices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Preset {
    Steady,
    Flat(f64),
    /// Steady plus `amplitude · sin(πx/L)` on every field, clipped at 0.
    PerturbedSteady(f64),
}

pub fn initialize(params: &ModelParams, grid: &Grid1D, preset: Preset) -> Result<TransientState> {
    match preset {
        Preset::Flat(c) => {
            nonneg("flat", c)?;
            TransientState::uniform(*grid, c)
        }
        Preset::Steady => Ok(TransientState::from_steady(&solve_steady(params, grid)?)),
        Preset::PerturbedSteady(eps) => {
            if !eps.is_finite() {
                return Err(invalid("perturbation", "must be finite"));
            }
            let mut s = TransientState::from_steady(&solve_steady(params, grid)?);
            let bump: Vec<f64> =
                grid.points().iter().map(|x| eps * (std::f64::consts::PI * x / grid.length()).sin()).collect();
            for f in s.fields_mut() {
                for (v, b) in f.iter_mut().zip(&bump) {
                    *v = (*v + b).max(0.0);
                }
            }
            Ok(s)
        }
    }
}

fn min_width(grid: &Grid1D) -> f64 {
    0.5 * grid.spacing()
}

/// Largest `dt` for which one step maps nonnegative data to nonnegative data.
pub fn step_limit(params: &ModelParams, grid: &Grid1D, scheme: Scheme) -> f64 {
    let c = params.coefficients();
    let transport = params.alpha() / min_width(grid);
    match scheme {
        Scheme::Explicit => {
            let g = params.pump.lipschitz_bound();
            let rates = [
                (transport + c.k) / c.a1,
                (transport + c.k) / c.a2,
                (c.k + c.k1) / c.a3,
                (c.k + g) / c.a4,
                c.k1 / c.a0,
            ];
            1.0 / rates.into_iter().fold(0.0, f64::max)
        }
        Scheme::ImplicitExchange => c.a1.min(c.a2) / transport,
    }
}

/// `CFL_SAFETY · step_limit`.
pub fn stable_dt(params: &ModelParams, grid: &Grid1D, scheme: Scheme) -> f64 {
    CFL_SAFETY * step_limit(params, grid, scheme)
}

/// Reusable buffers for repeated steps on one grid.
#[derive(Debug, Clone)]
pub struct Integrator {
    params: ModelParams,
    scheme: Scheme,
    widths: Vec<f64>,
    limit: f64,
    prev: TransientState,
}

impl Integrator {
    pub fn new(params: &ModelParams, grid: &Grid1D, scheme: Scheme) -> Result<Self> {
        Ok(Self {
            params: *params,
            scheme,
            widths: grid.cell_widths(),
            limit: step_limit(params, grid, scheme),
            prev: TransientState::uniform(*grid, 0.0)?,
        })
    }

    pub fn step_limit(&self) -> f64 {
        self.limit
    }

    /// Advances `state` by `dt` in place.
    pub fn step(&mut self, state: &mut TransientState, boundary: &BoundarySignal, dt: f64) -> Result<()> {
        if state.grid != self.prev.grid {
            return Err(Error::GridMismatch { expected: self.prev.grid.len(), got: state.grid.len() });
        }
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(invalid("dt", format!("must be > 0, got {dt}")));
        }
        if dt > self.limit * (1.0 + 1e-12) {
            return Err(Error::StepTooLarge { dt, limit: self.limit });
        }
        std::mem::swap(&mut self.prev, state);
        state.t = self.prev.t + dt;
        let ub = boundary.value(self.prev.t);
        match self.scheme {
            Scheme::Explicit => explicit_update(&self.prev, state, &self.params, &self.widths, ub, dt),
            Scheme::ImplicitExchange => implicit_update(&self.prev, state, &self.params, &self.widths, ub, dt)?,
        }
        state.check_nonnegative()
    }
}

fn explicit_update(old: &TransientState, new: &mut TransientState, params: &ModelParams, w: &[f64], ub: f64, dt: f64) {
    let Coefficients { a0, a1, a2, a3, a4, k, k1 } = *params.coefficients();
    let alpha = params.alpha();
    let pump = params.pump;
    let n = w.len();
    let hairpin = old.u1[n - 1];
    for i in 0..n {
        let (u1, u2, q1, q2, u0) = (old.u1[i], old.u2[i], old.q1[i], old.q2[i], old.u0[i]);
        let g = pump.rate(q2);
        let up1 = if i == 0 { ub } else { old.u1[i - 1] };
        let up2 = if i + 1 == n { hairpin } else { old.u2[i + 1] };
        let adv = alpha / w[i];
        new.u1[i] = u1 + dt * (adv * (up1 - u1) + k * (q1 - u1)) / a1;
        new.u2[i] = u2 + dt * (adv * (up2 - u2) + k * (q2 - u2)) / a2;
        new.q1[i] = q1 + dt * (k * (u1 - q1) + k1 * (u0 - q1)) / a3;
        new.q2[i] = q2 + dt * (k * (u2 - q2) - g) / a4;
        new.u0[i] = u0 + dt * (k1 * (q1 - u0) + g) / a0;
    }
}

/// `G(q)/q`, continuous at 0.
#[inline]
fn pump_ratio(pump: &PumpParams, q: f64) -> f64 {
    if q > 0.0 {
        pump.rate(q) / q
    } else {
        0.0
    }
}

fn implicit_update(
    old: &TransientState,
    new: &mut TransientState,
    params: &ModelParams,
    w: &[f64],
    ub: f64,
    dt: f64,
) -> Result<()> {
    let c = *params.coefficients();
    let alpha = params.alpha();
    let n = w.len();
    let hairpin = old.u1[n - 1];
    let (kd, k1d) = (dt * c.k, dt * c.k1);
    for i in 0..n {
        let up1 = if i == 0 { ub } else { old.u1[i - 1] };
        let up2 = if i + 1 == n { hairpin } else { old.u2[i + 1] };
        let adv = alpha / w[i];
        let u1s = old.u1[i] + dt * adv * (up1 - old.u1[i]) / c.a1;
        let u2s = old.u2[i] + dt * adv * (up2 - old.u2[i]) / c.a2;
        let rd = dt * pump_ratio(&params.pump, old.q2[i]);
        // rows/columns: u1, u2, q1, q2, u0; every column sums to its area
        #[rustfmt::skip]
        let m = Matrix5::new(
            c.a1 + kd, 0.0,       -kd,              0.0,            0.0,
            0.0,       c.a2 + kd, 0.0,              -kd,            0.0,
            -kd,       0.0,       c.a3 + kd + k1d,  0.0,            -k1d,
            0.0,       -kd,       0.0,              c.a4 + kd + rd, 0.0,
            0.0,       0.0,       -k1d,             -rd,            c.a0 + k1d,
        );
        let rhs = Vector5::new(c.a1 * u1s, c.a2 * u2s, c.a3 * old.q1[i], c.a4 * old.q2[i], c.a0 * old.u0[i]);
        let x = m.lu().solve(&rhs).ok_or(Error::NonFinite("implicit exchange solve"))?;
        new.u1[i] = x[0];
        new.u2[i] = x[1];
        new.q1[i] = x[2];
        new.q2[i] = x[3];
        new.u0[i] = x[4];
    }
    Ok(())
}

/// One step returning a new state.
pub fn step(
    state: &TransientState,
    params: &ModelParams,
    boundary: &BoundarySignal,
    dt: f64,
    scheme: Scheme,
) -> Result<TransientState> {
    let mut integ = Integrator::new(params, &state.grid, scheme)?;
    let mut next = state.clone();
    integ.step(&mut next, boundary, dt)?;
    Ok(next)
}

/// Exact fixed point of both schemes for a constant inflow `ub_bar`.
///
/// Each node satisfies `k (u2 - q2) = G(q2)`; the lumens then gain `w G/α`
/// per cell, `u1` from the inflow and `u2` from the hairpin back to `u2(0) = ub_bar`.
pub fn discrete_equilibrium(params: &ModelParams, grid: &Grid1D, ub_bar: f64) -> Result<TransientState> {
    let w = grid.cell_widths();
    let alpha = params.alpha();
    let (k, k1) = (params.k(), params.k1());
    let n = grid.len();
    let mut s = TransientState::uniform(*grid, 0.0)?;
    if ub_bar == 0.0 {
        return Ok(s);
    }
    let mut u1_prev = ub_bar;
    let mut u2 = ub_bar;
    for i in 0..n {
        let q2 = solve_boundary_q2(u2, params)?;
        let g = params.pump.rate(q2);
        let u1 = u1_prev + w[i] * g / alpha;
        s.u2[i] = u2;
        s.q2[i] = q2;
        s.u1[i] = u1;
        s.q1[i] = u1 + g / k;
        s.u0[i] = s.q1[i] + g / k1;
        u1_prev = u1;
        u2 += w[i] * g / alpha;
    }
    Ok(s)
}

fn check_pairing(n: usize, pair: &EigenPair) -> Result<()> {
    if pair.grid.len() != n {
        return Err(Error::GridMismatch { expected: n, got: pair.grid.len() });
    }
    Ok(())
}

/// `∫ Σ aᵢ |aᵢ-field difference| Φᵢ dx` between two states. The dual
/// eigenfunctions live on `[0, L/α]` and are matched to nodes by index.
pub fn weighted_distance(
    a: &TransientState,
    b: &TransientState,
    pair: &EigenPair,
    params: &ModelParams,
) -> Result<f64> {
    let n = a.grid.len();
    if b.grid.len() != n {
        return Err(Error::GridMismatch { expected: n, got: b.grid.len() });
    }
    check_pairing(n, pair)?;
    let areas = params.coefficients().areas();
    let dual = pair.dual();
    let (fa, fb) = (a.fields(), b.fields());
    let integrand: Vec<f64> =
        (0..n).map(|i| (0..5).map(|j| areas[j] * (fa[j][i] - fb[j][i]).abs() * dual[j][i]).sum()).collect();
    Ok(a.grid.integrate(&integrand))
}

/// Lyapunov functional `M` of `state` relative to a steady profile.
pub fn weighted_norm(
    state: &TransientState,
    steady: &SteadyProfile,
    pair: &EigenPair,
    params: &ModelParams,
) -> Result<f64> {
    weighted_distance(state, &TransientState::from_steady(steady), pair, params)
}

/// Everything the decay monitor compares against.
#[derive(Debug, Clone)]
pub struct DecayReference {
    pub steady: TransientState,
    pub equilibrium: TransientState,
    pub pair: EigenPair,
    /// Eigenvalue per transit length [m²/s].
    pub lambda: f64,
    /// Time decay rate `λ / max aᵢ` [1/s].
    pub lambda_bar: f64,
    /// `M` of the discrete equilibrium, the lowest value the scheme can reach.
    pub floor: f64,
}

impl DecayReference {
    pub fn new(params: &ModelParams, grid: &Grid1D) -> Result<Self> {
        let steady = TransientState::from_steady(&solve_steady(params, grid)?);
        let equilibrium = discrete_equilibrium(params, grid, params.ub_bar)?;
        let pair = solve_eigenpair(&EigenInputs::from_model(params)?, grid.len())?;
        let floor = weighted_distance(&equilibrium, &steady, &pair, params)?;
        Ok(Self { lambda: pair.lambda, lambda_bar: decay_rate(pair.lambda, params), steady, equilibrium, pair, floor })
    }

    /// `M` against the continuum steady state.
    pub fn m(&self, state: &TransientState, params: &ModelParams) -> Result<f64> {
        weighted_distance(state, &self.steady, &self.pair, params)
    }

    /// `M` against the discrete equilibrium.
    pub fn m_discrete(&self, state: &TransientState, params: &ModelParams) -> Result<f64> {
        weighted_distance(state, &self.equilibrium, &self.pair, params)
    }
}

/// Run controls for [`solve_transient`].
#[derive(Debug, Clone, PartialEq)]
pub struct TransientOptions {
    /// Defaults to `20/λ̄`.
    pub t_end: Option<f64>,
    pub samples: usize,
    pub scheme: Scheme,
    /// Overrides [`stable_dt`]; must stay within [`step_limit`].
    pub dt: Option<f64>,
    pub snapshot_times: Vec<f64>,
}

impl Default for TransientOptions {
    fn default() -> Self {
        Self { t_end: None, samples: DEFAULT_SAMPLES, scheme: Scheme::Explicit, dt: None, snapshot_times: Vec::new() }
    }
}

/// Observer record of a transient run.
#[derive(Debug, Clone, PartialEq)]
pub struct DecayReport {
    pub times: Vec<f64>,
    /// `M(t)` against the continuum steady state.
    pub m_values: Vec<f64>,
    /// `M(t)` against the discrete equilibrium of the scheme.
    pub m_discrete: Vec<f64>,
    pub mass_total: Vec<f64>,
    pub ub: Vec<f64>,
    /// `M(0) e^{-λ̄t} + α ph1(0) ∫ |u_b - ū_b| e^{-λ̄(t-s)} ds` at each sample.
    pub bound: Vec<f64>,
    pub floor: f64,
    pub lambda: f64,
    pub theoretical_rate: f64,
    /// Least-squares decay rate of `m_discrete` over the tail, if enough
    /// samples stay above roundoff.
    pub fitted_rate: Option<f64>,
    /// `M ≤ 1.05 · bound` at every sample with `M > 2 · floor`.
    pub bound_satisfied: bool,
    /// Largest `M / bound` over the checked samples.
    pub bound_ratio_max: f64,
    pub bound_samples_checked: usize,
    /// Largest per-step `|Δmass - dt α (u_b - u2(0))| / mass`.
    pub mass_ledger_max: f64,
    pub dt: f64,
    pub steps: usize,
}

/// Tolerance on the Gronwall bound.
pub const BOUND_SLACK: f64 = 1.05;
/// Samples within this factor of the floor are not checked against the bound.
pub const FLOOR_FACTOR: f64 = 2.0;

impl DecayReport {
    pub fn m0(&self) -> f64 {
        self.m_values[0]
    }

    pub fn final_m(&self) -> f64 {
        *self.m_values.last().expect("at least one sample")
    }

    /// CSV with header `t,M,mass_total,ub`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &["t", "M", "mass_total", "ub"],
            (0..self.times.len()).map(|i| vec![self.times[i], self.m_values[i], self.mass_total[i], self.ub[i]]),
        )
    }
}

/// Decay rate by least squares on `ln y` over the last half of the samples
/// that exceed `1e3 ε max(y)`.
pub fn fit_decay_rate(times: &[f64], values: &[f64]) -> Option<f64> {
    let top = values.iter().copied().fold(0.0, f64::max);
    let cut = 1e3 * f64::EPSILON * top;
    let kept: Vec<(f64, f64)> =
        times.iter().zip(values).filter(|(_, &v)| v > cut && v.is_finite()).map(|(&t, &v)| (t, v.ln())).collect();
    let tail = &kept[kept.len() / 2..];
    if tail.len() < 3 {
        return None;
    }
    let nf = tail.len() as f64;
    let (mt, my) = tail.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + t / nf, b + y / nf));
    let (sxy, sxx) = tail.iter().fold((0.0, 0.0), |(a, b), (t, y)| (a + (t - mt) * (y - my), b + (t - mt) * (t - mt)));
    (sxx > 0.0).then(|| -sxy / sxx)
}

/// Result of [`solve_transient`].
#[derive(Debug, Clone)]
pub struct TransientRun {
    pub final_state: TransientState,
    pub report: DecayReport,
    pub snapshots: Vec<TransientState>,
}

pub fn solve_transient(
    params: &ModelParams,
    initial: TransientState,
    boundary: &BoundarySignal,
    opts: &TransientOptions,
) -> Result<TransientRun> {
    let params = params.with_ub_bar(boundary.limit().max(f64::MIN_POSITIVE))?;
    let grid = initial.grid;
    let reference = DecayReference::new(&params, &grid)?;
    solve_transient_with(&params, initial, boundary, opts, &reference)
}

/// [`solve_transient`] with a precomputed reference (steady, equilibrium, eigenpair).
pub fn solve_transient_with(
    params: &ModelParams,
    initial: TransientState,
    boundary: &BoundarySignal,
    opts: &TransientOptions,
    reference: &DecayReference,
) -> Result<TransientRun> {
    let grid = initial.grid;
    initial.check_nonnegative()?;
    let lambda_bar = reference.lambda_bar;
    let t_end = opts.t_end.unwrap_or(DEFAULT_RELAXATION_TIMES / lambda_bar);
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(invalid("t_end", format!("must be > 0, got {t_end}")));
    }
    if opts.samples == 0 {
        return Err(invalid("samples", "must be >= 1"));
    }
    let mut integ = Integrator::new(params, &grid, opts.scheme)?;
    let dt_target = opts.dt.unwrap_or_else(|| CFL_SAFETY * integ.step_limit());
    let steps = (t_end / dt_target).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let stride = (steps / opts.samples).max(1);

    let alpha = params.alpha();
    let ph1_origin = reference.pair.ph1[0];
    let deviation = |t: f64| (boundary.value(t) - boundary.limit()).abs();
    let decay = (-lambda_bar * dt).exp();

    let mut state = initial;
    let t0 = state.t;
    let m0 = reference.m(&state, params)?;
    let mut report = DecayReport {
        times: Vec::new(),
        m_values: Vec::new(),
        m_discrete: Vec::new(),
        mass_total: Vec::new(),
        ub: Vec::new(),
        bound: Vec::new(),
        floor: reference.floor,
        lambda: reference.lambda,
        theoretical_rate: lambda_bar,
        fitted_rate: None,
        bound_satisfied: true,
        bound_ratio_max: 0.0,
        bound_samples_checked: 0,
        mass_ledger_max: 0.0,
        dt,
        steps,
    };
    let mut boundary_integral = 0.0;
    let mut snapshots = Vec::new();
    let mut pending: Vec<f64> = opts.snapshot_times.clone();
    pending.sort_by(f64::total_cmp);
    let mut pending = pending.into_iter().peekable();

    let mut mass = state.mass(params);
    let record = |state: &TransientState, mass: f64, bi: f64, report: &mut DecayReport| -> Result<()> {
        let m = reference.m(state, params)?;
        let elapsed = state.t - t0;
        let bound = m0 * (-lambda_bar * elapsed).exp() + alpha * ph1_origin * bi;
        report.times.push(state.t);
        report.m_values.push(m);
        report.m_discrete.push(reference.m_discrete(state, params)?);
        report.mass_total.push(mass);
        report.ub.push(boundary.value(state.t));
        report.bound.push(bound);
        if m > FLOOR_FACTOR * reference.floor {
            report.bound_samples_checked += 1;
            let ratio = if bound > 0.0 { m / bound } else { f64::INFINITY };
            report.bound_ratio_max = report.bound_ratio_max.max(ratio);
            if m > BOUND_SLACK * bound {
                report.bound_satisfied = false;
            }
        }
        Ok(())
    };
    record(&state, mass, 0.0, &mut report)?;
    for s in 1..=steps {
        let ub_old = boundary.value(state.t);
        let outflow = state.u2[0];
        let d_old = deviation(state.t);
        integ.step(&mut state, boundary, dt)?;
        let new_mass = state.mass(params);
        let ledger = ((new_mass - mass) - dt * alpha * (ub_old - outflow)).abs()
            / new_mass.abs().max(mass.abs()).max(f64::MIN_POSITIVE);
        report.mass_ledger_max = report.mass_ledger_max.max(ledger);
        mass = new_mass;
        boundary_integral = boundary_integral * decay + 0.5 * dt * (d_old * decay + deviation(state.t));
        while pending.peek().is_some_and(|&ts| ts <= state.t) {
            pending.next();
            snapshots.push(state.clone());
        }
        if s % stride == 0 || s == steps {
            record(&state, mass, boundary_integral, &mut report)?;
        }
    }
    report.fitted_rate = fit_decay_rate(&report.times, &report.m_discrete);
    Ok(TransientRun { final_state: state, report, snapshots })
}

/// Lumen and interstitium of the fused-epithelium limit.
#[derive(Debug, Clone, PartialEq)]
pub struct LimitState {
    pub t: f64,
    pub grid: Grid1D,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub u0: Vec<f64>,
}

impl LimitState {
    pub fn uniform(grid: Grid1D, c: f64) -> Result<Self> {
        nonneg("flat", c)?;
        let v = vec![c; grid.len()];
        Ok(Self { t: 0.0, grid, u1: v.clone(), u2: v.clone(), u0: v })
    }

    /// `Σ w ((a1+a3) u1 + (a2+a4) u2 + a0 u0)`.
    pub fn mass(&self, params: &ModelParams) -> f64 {
        let c = params.coefficients();
        let w = self.grid.cell_widths();
        (0..self.grid.len())
            .map(|i| w[i] * ((c.a1 + c.a3) * self.u1[i] + (c.a2 + c.a4) * self.u2[i] + c.a0 * self.u0[i]))
            .sum()
    }
}

/// Positivity limit of the explicit limit-system step.
pub fn limit_step_limit(params: &ModelParams, grid: &Grid1D) -> f64 {
    let c = params.coefficients();
    let transport = params.alpha() / min_width(grid);
    let g = params.pump.lipschitz_bound();
    let rates = [(transport + c.k1) / (c.a1 + c.a3), (transport + g) / (c.a2 + c.a4), c.k1 / c.a0];
    1.0 / rates.into_iter().fold(0.0, f64::max)
}

/// Integrates the limit `k → ∞`, in which each lumen merges with its
/// epithelium:
///
/// ```text
/// (a1 + a3) ∂t u1 + α ∂x u1 = K1 (u0 - u1)
/// (a2 + a4) ∂t u2 - α ∂x u2 = -G(u2)
/// a0 ∂t u0 = K1 (u1 - u0) + G(u2)
/// ```
///
/// with the same upwind cells and hairpin coupling as the full system.
pub fn solve_limit_system(
    params: &ModelParams,
    initial: LimitState,
    boundary: &BoundarySignal,
    t_end: f64,
    dt: Option<f64>,
) -> Result<LimitState> {
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(invalid("t_end", format!("must be > 0, got {t_end}")));
    }
    let grid = initial.grid;
    let limit = limit_step_limit(params, &grid);
    let dt_target = dt.unwrap_or(CFL_SAFETY * limit);
    if dt_target > limit * (1.0 + 1e-12) {
        return Err(Error::StepTooLarge { dt: dt_target, limit });
    }
    let steps = (t_end / dt_target).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let c = *params.coefficients();
    let (b1, b2) = (c.a1 + c.a3, c.a2 + c.a4);
    let alpha = params.alpha();
    let w = grid.cell_widths();
    let n = grid.len();
    let mut cur = initial;
    let mut old = cur.clone();
    for _ in 0..steps {
        std::mem::swap(&mut old, &mut cur);
        let ub = boundary.value(old.t);
        let hairpin = old.u1[n - 1];
        for i in 0..n {
            let (u1, u2, u0) = (old.u1[i], old.u2[i], old.u0[i]);
            let g = params.pump.rate(u2);
            let up1 = if i == 0 { ub } else { old.u1[i - 1] };
            let up2 = if i + 1 == n { hairpin } else { old.u2[i + 1] };
            let adv = alpha / w[i];
            cur.u1[i] = u1 + dt * (adv * (up1 - u1) + c.k1 * (u0 - u1)) / b1;
            cur.u2[i] = u2 + dt * (adv * (up2 - u2) - g) / b2;
            cur.u0[i] = u0 + dt * (c.k1 * (u1 - u0) + g) / c.a0;
        }
        cur.t = old.t + dt;
        for (name, f) in [("u1", &cur.u1), ("u2", &cur.u2), ("u0", &cur.u0)] {
            if let Some((node, &value)) = f.iter().enumerate().find(|(_, v)| !(**v >= NEGATIVITY_TOL)) {
                if !value.is_finite() {
                    return Err(Error::NonFinite(name));
                }
                return Err(Error::Negativity { field: name, node, value });
            }
        }
    }
    Ok(cur)
}

/// `ε = 1/k` giving the lumen/epithelium exchange of permeability `p`.
pub fn eps_for_permeability(p: f64, params: &ModelParams) -> f64 {
    1.0 / (2.0 * std::f64::consts::PI * params.geometry.r1 * p)
}

/// One member of an [`epsilon_study`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpsilonRow {
    pub eps: f64,
    pub k: f64,
    /// `max |u1 - q1|` at `t_end`.
    pub gap_u1_q1: f64,
    /// `max |u2 - q2|` at `t_end`.
    pub gap_u2_q2: f64,
    /// `max |full - limit| / max |limit|` over `u1, u2, u0` at `t_end`.
    pub limit_distance: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpsilonStudy {
    pub t_end: f64,
    pub dt: f64,
    pub rows: Vec<EpsilonRow>,
    pub limit: LimitState,
}

impl EpsilonStudy {
    /// Successive ratios of `gap_u1_q1`.
    pub fn gap_ratios(&self) -> Vec<f64> {
        self.rows.windows(2).map(|r| r[1].gap_u1_q1 / r[0].gap_u1_q1).collect()
    }

    /// CSV with header `eps,k,gap_u1_q1,gap_u2_q2,limit_distance`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &["eps", "k", "gap_u1_q1", "gap_u2_q2", "limit_distance"],
            self.rows.iter().map(|r| vec![r.eps, r.k, r.gap_u1_q1, r.gap_u2_q2, r.limit_distance]),
        )
    }
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// Runs the full system with `k = 1/ε` for each entry and compares it with
/// the limit system. Every run starts flat at `ū_b` with constant inflow and
/// uses the implicit-exchange scheme with one shared time step.
pub fn epsilon_study(params: &ModelParams, eps_list: &[f64], grid: &Grid1D, t_end: f64) -> Result<EpsilonStudy> {
    if eps_list.is_empty() {
        return Err(invalid("eps_list", "must not be empty"));
    }
    if eps_list.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
        return Err(invalid("eps_list", "entries must be finite and > 0"));
    }
    if eps_list.windows(2).any(|e| !(e[1] < e[0])) {
        return Err(invalid("eps_list", "entries must be strictly decreasing"));
    }
    let ub = params.ub_bar;
    let boundary = BoundarySignal::constant(ub)?;
    let members: Vec<ModelParams> = eps_list.iter().map(|e| params.with_exchange(1.0 / e)).collect::<Result<_>>()?;
    let dt = members
        .iter()
        .map(|m| step_limit(m, grid, Scheme::ImplicitExchange))
        .chain(std::iter::once(limit_step_limit(params, grid)))
        .fold(f64::INFINITY, f64::min)
        * CFL_SAFETY;
    let limit = solve_limit_system(params, LimitState::uniform(*grid, ub)?, &boundary, t_end, Some(dt))?;
    let scale = [&limit.u1, &limit.u2, &limit.u0].iter().flat_map(|v| v.iter()).fold(0.0f64, |m, v| m.max(v.abs()));
    let rows = members
        .par_iter()
        .zip(eps_list.par_iter())
        .map(|(m, &eps)| -> Result<EpsilonRow> {
            let opts = TransientOptions {
                t_end: Some(t_end),
                samples: 1,
                scheme: Scheme::ImplicitExchange,
                dt: Some(dt),
                snapshot_times: vec![],
            };
            let s = run_plain(m, TransientState::uniform(*grid, ub)?, &boundary, &opts)?;
            let distance = [sup_gap(&s.u1, &limit.u1), sup_gap(&s.u2, &limit.u2), sup_gap(&s.u0, &limit.u0)]
                .into_iter()
                .fold(0.0, f64::max)
                / scale;
            Ok(EpsilonRow {
                eps,
                k: m.k(),
                gap_u1_q1: sup_gap(&s.u1, &s.q1),
                gap_u2_q2: sup_gap(&s.u2, &s.q2),
                limit_distance: distance,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(EpsilonStudy { t_end, dt, rows, limit })
}

/// Integrates without the decay monitor.
pub fn run_plain(
    params: &ModelParams,
    initial: TransientState,
    boundary: &BoundarySignal,
    opts: &TransientOptions,
) -> Result<TransientState> {
    let t_end = opts.t_end.ok_or_else(|| invalid("t_end", "required"))?;
    if !(t_end.is_finite() && t_end > 0.0) {
        return Err(invalid("t_end", format!("must be > 0, got {t_end}")));
    }
    let mut integ = Integrator::new(params, &initial.grid, opts.scheme)?;
    let dt_target = opts.dt.unwrap_or_else(|| CFL_SAFETY * integ.step_limit());
    let steps = (t_end / dt_target).ceil().max(1.0) as usize;
    let dt = t_end / steps as f64;
    let mut state = initial;
    for _ in 0..steps {
        integ.step(&mut state, boundary, dt)?;
    }
    Ok(state)
}
