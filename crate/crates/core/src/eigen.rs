//! Principal eigenvalue of the linearized exchange operator, with its
//! direct and dual eigenfunctions.
//!
//! The linear system replaces the pump derivative by a constant `g` and is
//! written per unit transit length `y = x/α`, so [`EigenInputs::length`] is
//! `L/α` and `λ` carries the units of the exchange coefficients. The time
//! decay rate is `λ / max(aᵢ)`, see [`decay_rate`].

use std::io::Write;

use crate::error::{invalid, Error, Result};
use crate::grid::{derivative4, Grid1D};
use crate::model::ModelParams;
use crate::output::{fmt17, write_csv};
use crate::roots::{bisect, newton_bisect};

/// Inputs of the linear eigenproblem.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenInputs {
    /// Constant replacing `G'`.
    pub g: f64,
    pub k: f64,
    pub k1: f64,
    /// Transit length, `L/α` when built from a model.
    pub length: f64,
}

impl EigenInputs {
    pub fn new(g: f64, k: f64, k1: f64, length: f64) -> Result<Self> {
        for (name, v) in [("g", g), ("k", k), ("K1", k1), ("L", length)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(name, format!("must be finite and > 0, got {v}")));
            }
        }
        Ok(Self { g, k, k1, length })
    }

    /// `g` is the supremum of `G'`, the length is the transit length `L/α`.
    pub fn from_model(params: &ModelParams) -> Result<Self> {
        Self::new(params.pump.lipschitz_bound(), params.k(), params.k1(), params.length() / params.alpha())
    }

    pub fn with_g(self, g: f64) -> Result<Self> {
        Self::new(g, self.k, self.k1, self.length)
    }

    pub fn lambda_minus(&self) -> f64 {
        lambda_minus(self.k, self.k1)
    }
}

/// Smaller root of `λ² - (2K1 + k) λ + k K1`, the pole of `k_λ`.
///
/// Evaluated as `2 k K1 / (2K1 + k + √(4K1² + k²))` to avoid cancellation
/// for `k ≪ K1`.
pub fn lambda_minus(k: f64, k1: f64) -> f64 {
    2.0 * k * k1 / (2.0 * k1 + k + (4.0 * k1 * k1 + k * k).sqrt())
}

/// Coefficients of the reduced eigen-ODEs at a trial `λ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CharCoeffs {
    pub k_lambda: f64,
    pub c_lambda: f64,
    pub eta: f64,
    /// `c_λ - λ`, the extra decay of the dual profile.
    pub beta: f64,
    /// `k - λ - K1 λ/(K1 - λ)`.
    pub denom: f64,
}

impl CharCoeffs {
    /// Growth exponent of `U1/U2`, `c_λ + λ - η`.
    pub fn z(&self, lambda: f64) -> f64 {
        self.c_lambda + lambda - self.eta
    }
}

fn check_lambda(lambda: f64, inputs: &EigenInputs) -> Result<f64> {
    let lm = inputs.lambda_minus();
    if !(lambda.is_finite() && (0.0..lm).contains(&lambda)) {
        return Err(Error::Domain { quantity: "lambda", value: lambda, reason: "must lie in [0, lambda_minus)" });
    }
    Ok(lm)
}

pub fn char_coeffs(lambda: f64, inputs: &EigenInputs) -> Result<CharCoeffs> {
    let lm = check_lambda(lambda, inputs)?;
    let EigenInputs { g, k, k1, .. } = *inputs;
    let lp = k * k1 / lm;
    // (λ₋ - λ)(λ₊ - λ) = (K1 - λ) · denom, positive on [0, λ₋)
    let pole = (lm - lambda) * (lp - lambda);
    let k_lambda = k * k1 / pole;
    let beta = k * lambda * (2.0 * k1 - lambda) / pole;
    let denom = pole / (k1 - lambda);
    let eta = (g - lambda) / (1.0 + (g - lambda) / k);
    Ok(CharCoeffs { k_lambda, c_lambda: lambda + beta, eta, beta, denom })
}

/// `(eʸ - 1)/y`, with the removable point handled by its series.
pub fn exprel(y: f64) -> f64 {
    if y.abs() < 1e-8 {
        1.0 + 0.5 * y
    } else {
        y.exp_m1() / y
    }
}

/// Boundary functional whose root `F(λ) = 1` fixes the eigenvalue.
pub fn eval_f(lambda: f64, inputs: &EigenInputs) -> Result<f64> {
    let c = char_coeffs(lambda, inputs)?;
    let EigenInputs { g, k, length, .. } = *inputs;
    let pre = g * c.k_lambda / (1.0 + (g - lambda) / k);
    Ok(pre * length * exprel(c.z(lambda) * length))
}

/// Right end of the root bracket, backed off from the pole until `F > 1`.
fn upper_bracket(inputs: &EigenInputs) -> Result<f64> {
    let lm = inputs.lambda_minus();
    let mut delta = 1e-12 * lm;
    for _ in 0..60 {
        let hi = lm - delta;
        if hi < lm && eval_f(hi, inputs)? > 1.0 {
            return Ok(hi);
        }
        delta *= 0.5;
    }
    Err(Error::NoConvergence { method: "eigenvalue bracket", iterations: 60, residual: f64::NAN })
}

fn check_origin(inputs: &EigenInputs) -> Result<()> {
    let f0 = eval_f(0.0, inputs)?;
    if f0 >= 1.0 {
        return Err(Error::Domain { quantity: "F(0)", value: f0, reason: "must be < 1" });
    }
    Ok(())
}

/// Eigenvalue by plain bisection on `[0, λ₋)` down to adjacent floats.
pub fn solve_lambda_bisection(inputs: &EigenInputs) -> Result<f64> {
    check_origin(inputs)?;
    let hi = upper_bracket(inputs)?;
    bisect(|l| eval_f(l, inputs).map_or(f64::NAN, |f| f - 1.0), 0.0, hi, 2000)
}

/// Eigenvalue by bisection to `1e-10` relative, then safeguarded Newton.
pub fn solve_lambda(inputs: &EigenInputs) -> Result<f64> {
    check_origin(inputs)?;
    let hi = upper_bracket(inputs)?;
    let f = |l: f64| eval_f(l, inputs).map_or(f64::NAN, |f| f - 1.0);
    let (mut a, mut b) = (0.0, hi);
    while b - a > 1e-10 * b {
        let m = 0.5 * (a + b);
        if f(m) < 0.0 {
            a = m
        } else {
            b = m
        }
    }
    let step = 1e-7 * inputs.lambda_minus();
    let newton = |l: f64| {
        let lo = (l - step).max(0.0);
        let up = (l + step).min(hi);
        (f(l), (f(up) - f(lo)) / (up - lo))
    };
    let root = newton_bisect(newton, a, b, 0.5 * (a + b), 1e-15, 50)?;
    // Newton stops on the step size; finish on the better of the bracket ends
    let mut best = root.x;
    for cand in [a, b, root.x] {
        if f(cand).abs() < f(best).abs() {
            best = cand;
        }
    }
    Ok(best)
}

/// Direct and dual eigenfunctions on a shared grid over `[0, length]`.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenPair {
    pub inputs: EigenInputs,
    pub lambda: f64,
    pub lambda_minus: f64,
    pub grid: Grid1D,
    pub u1: Vec<f64>,
    pub u2: Vec<f64>,
    pub q1: Vec<f64>,
    pub q2: Vec<f64>,
    pub u0: Vec<f64>,
    pub ph1: Vec<f64>,
    pub ph2: Vec<f64>,
    pub phi1: Vec<f64>,
    pub phi2: Vec<f64>,
    pub ph0: Vec<f64>,
    /// Factor turning the `U2(0) = λ` gauge into the unit-mass gauge stored
    /// above: `U_stored = gauge_factor · U_proof`.
    pub gauge_factor: f64,
}

/// The five direct components, in the order `U1, U2, Q1, Q2, U0`.
pub type Components = [Vec<f64>; 5];

impl EigenPair {
    pub fn direct(&self) -> [&[f64]; 5] {
        [&self.u1, &self.u2, &self.q1, &self.q2, &self.u0]
    }

    pub fn dual(&self) -> [&[f64]; 5] {
        [&self.ph1, &self.ph2, &self.phi1, &self.phi2, &self.ph0]
    }

    /// Direct components in the gauge `U2(0) = λ`, with the dual rescaled so
    /// the pairing stays one.
    pub fn proof_gauge(&self) -> (Components, Components) {
        let s = self.gauge_factor;
        let scale = |v: &[f64], f: f64| v.iter().map(|x| x * f).collect::<Vec<_>>();
        let d = self.direct().map(|v| scale(v, 1.0 / s));
        let p = self.dual().map(|v| scale(v, s));
        (d, p)
    }

    pub fn f_residual(&self) -> f64 {
        eval_f(self.lambda, &self.inputs).map_or(f64::INFINITY, |f| (f - 1.0).abs())
    }

    /// CSV with header `x,U1,U2,Q1,Q2,U0,ph1,ph2,phi1,phi2,ph0`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        let x = self.grid.points();
        let cols: Vec<&[f64]> = self.direct().into_iter().chain(self.dual()).collect();
        write_csv(
            w,
            &["x", "U1", "U2", "Q1", "Q2", "U0", "ph1", "ph2", "phi1", "phi2", "ph0"],
            (0..self.grid.len()).map(|i| std::iter::once(x[i]).chain(cols.iter().map(|c| c[i])).collect()),
        )
    }

    /// One-line summary `{"lambda":…,"lambda_minus":…,"F_residual":…,"min_ph0_minus_phi2":…}`.
    pub fn summary_line(&self) -> String {
        format!(
            "{{\"lambda\":{},\"lambda_minus\":{},\"F_residual\":{},\"min_ph0_minus_phi2\":{}}}",
            fmt17(self.lambda),
            fmt17(self.lambda_minus),
            fmt17(self.f_residual()),
            fmt17(min_gap(&self.ph0, &self.phi2)),
        )
    }
}

fn min_gap(upper: &[f64], lower: &[f64]) -> f64 {
    let n = upper.len();
    (1..n.saturating_sub(1)).map(|i| upper[i] - lower[i]).fold(f64::INFINITY, f64::min)
}

/// Closed-form direct eigenfunctions, normalized to unit total mass.
/// Returns the components and the normalization factor applied to the
/// `U2(0) = λ` construction.
pub fn direct_eigenfunctions(lambda: f64, inputs: &EigenInputs, grid: &Grid1D) -> Result<(Components, f64)> {
    let c = char_coeffs(lambda, inputs)?;
    let EigenInputs { g, k, k1, .. } = *inputs;
    let damp = 1.0 + (g - lambda) / k;
    let z = c.z(lambda);
    let amp = lambda * g * c.k_lambda / damp;
    let n = grid.len();
    let mut out: Components = std::array::from_fn(|_| Vec::with_capacity(n));
    for x in grid.points() {
        let u2 = lambda * ((c.eta - lambda) * x).exp();
        let u1 = amp * ((c.eta - lambda) * x).exp() * x * exprel(z * x);
        let q2 = u2 / damp;
        let q1 = (g * k1 / (k1 - lambda) * q2 + k * u1) / c.denom;
        let u0 = (k1 * q1 + g * q2) / (k1 - lambda);
        for (col, v) in out.iter_mut().zip([u1, u2, q1, q2, u0]) {
            col.push(v);
        }
    }
    let mass: f64 = out.iter().map(|v| grid.integrate(v)).sum();
    if !(mass.is_finite() && mass > 0.0) {
        return Err(Error::NonFinite("direct eigenfunction mass"));
    }
    let factor = 1.0 / mass;
    for col in &mut out {
        col.iter_mut().for_each(|v| *v *= factor);
    }
    Ok((out, factor))
}

/// Closed-form dual eigenfunctions paired to the given direct ones.
pub fn dual_eigenfunctions(
    lambda: f64,
    inputs: &EigenInputs,
    direct: &Components,
    grid: &Grid1D,
) -> Result<Components> {
    let c = char_coeffs(lambda, inputs)?;
    let EigenInputs { g, k, .. } = *inputs;
    let [u1, u2, ..] = direct;
    if u1.len() != grid.len() {
        return Err(Error::GridMismatch { expected: grid.len(), got: u1.len() });
    }
    let n = grid.len();
    let mut out: Components = std::array::from_fn(|_| Vec::with_capacity(n));
    for (i, x) in grid.points().into_iter().enumerate() {
        let ph1 = (-c.c_lambda * x).exp();
        let ratio = u1[i] / u2[i];
        let vals = [
            ph1,
            ratio * ph1,
            ph1 * k / c.denom,
            (k * ratio + g * c.k_lambda) * ph1 / (k - lambda + g),
            c.k_lambda * ph1,
        ];
        for (col, v) in out.iter_mut().zip(vals) {
            col.push(v);
        }
    }
    let pairing: f64 = (0..5)
        .map(|j| {
            let prod: Vec<f64> = direct[j].iter().zip(&out[j]).map(|(a, b)| a * b).collect();
            grid.integrate(&prod)
        })
        .sum();
    if !(pairing.is_finite() && pairing > 0.0) {
        return Err(Error::NonFinite("dual eigenfunction pairing"));
    }
    for col in &mut out {
        col.iter_mut().for_each(|v| *v /= pairing);
    }
    Ok(out)
}

/// Solves for `λ` and assembles both eigenfunction sets on `n` nodes.
pub fn solve_eigenpair(inputs: &EigenInputs, n: usize) -> Result<EigenPair> {
    let grid = Grid1D::new(n, inputs.length)?;
    let lambda = solve_lambda(inputs)?;
    let (direct, gauge_factor) = direct_eigenfunctions(lambda, inputs, &grid)?;
    let dual = dual_eigenfunctions(lambda, inputs, &direct, &grid)?;
    let [u1, u2, q1, q2, u0] = direct;
    let [ph1, ph2, phi1, phi2, ph0] = dual;
    Ok(EigenPair {
        inputs: *inputs,
        lambda,
        lambda_minus: inputs.lambda_minus(),
        grid,
        u1,
        u2,
        q1,
        q2,
        u0,
        ph1,
        ph2,
        phi1,
        phi2,
        ph0,
        gauge_factor,
    })
}

/// Time decay rate `λ / max(aᵢ)` in 1/s.
pub fn decay_rate(lambda: f64, params: &ModelParams) -> f64 {
    lambda / params.coefficients().max_area()
}

/// Auxiliary function `H(y) = U1/(k_λ U2)`, which rises from 0 to `1/k_λ`.
pub fn auxiliary_h(y: f64, lambda: f64, inputs: &EigenInputs) -> Result<f64> {
    let c = char_coeffs(lambda, inputs)?;
    let damp = 1.0 + (inputs.g - lambda) / inputs.k;
    Ok(inputs.g / damp * y * exprel(c.z(lambda) * y))
}

/// Numerical checks on an assembled eigenpair. Residuals are relative to the
/// largest term of the respective system; the duality defect is relative to
/// `max(U1·ph1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Certificate {
    pub f_residual: f64,
    pub lambda_in_range: bool,
    pub direct_residual: f64,
    pub dual_residual: f64,
    pub duality_defect: f64,
    pub min_ph0_minus_phi2: f64,
    pub min_component: f64,
    pub direct_norm: f64,
    pub dual_norm: f64,
    /// `|U1(L) - U2(L)| / U2(L)`.
    pub hairpin_mismatch: f64,
    /// `|ph1(L) - ph2(L)| / ph1(L)`.
    pub dual_hairpin_mismatch: f64,
    pub u1_origin: f64,
    pub ph2_origin: f64,
    pub h_at_length: f64,
    pub inv_k_lambda: f64,
    /// Direct components use the unit-mass gauge, not `U2(0) = λ`.
    pub gauge: &'static str,
}

/// Thresholds used by [`Certificate::check`].
pub const F_TOL: f64 = 1e-12;
pub const RESIDUAL_TOL: f64 = 1e-8;
pub const DUALITY_TOL: f64 = 1e-10;
pub const NORM_TOL: f64 = 1e-9;
pub const BOUNDARY_TOL: f64 = 1e-10;

impl Certificate {
    /// Names of all failed items, empty when everything passes.
    pub fn failures(&self) -> Vec<String> {
        let mut f = Vec::new();
        let mut need = |ok: bool, what: String| {
            if !ok {
                f.push(what)
            }
        };
        need(self.f_residual <= F_TOL, format!("|F(lambda)-1| = {:e}", self.f_residual));
        need(self.lambda_in_range, "lambda outside (0, lambda_minus)".into());
        need(self.direct_residual <= RESIDUAL_TOL, format!("direct residual {:e}", self.direct_residual));
        need(self.dual_residual <= RESIDUAL_TOL, format!("dual residual {:e}", self.dual_residual));
        need(self.duality_defect <= DUALITY_TOL, format!("U1*ph1 - U2*ph2 defect {:e}", self.duality_defect));
        need(self.min_ph0_minus_phi2 > 0.0, format!("min(ph0 - phi2) = {:e}", self.min_ph0_minus_phi2));
        need(self.min_component > 0.0, format!("min interior component {:e}", self.min_component));
        need((self.direct_norm - 1.0).abs() <= NORM_TOL, format!("direct normalization {}", self.direct_norm));
        need((self.dual_norm - 1.0).abs() <= NORM_TOL, format!("dual normalization {}", self.dual_norm));
        need(self.hairpin_mismatch <= BOUNDARY_TOL, format!("U1(L) vs U2(L) {:e}", self.hairpin_mismatch));
        need(self.dual_hairpin_mismatch <= BOUNDARY_TOL, format!("ph1(L) vs ph2(L) {:e}", self.dual_hairpin_mismatch));
        need(self.u1_origin == 0.0, format!("U1(0) = {:e}", self.u1_origin));
        need(self.ph2_origin == 0.0, format!("ph2(0) = {:e}", self.ph2_origin));
        need(
            (self.h_at_length - self.inv_k_lambda).abs() <= BOUNDARY_TOL * self.inv_k_lambda,
            format!("H(L) = {:e} vs 1/k_lambda = {:e}", self.h_at_length, self.inv_k_lambda),
        );
        f
    }

    pub fn check(&self) -> Result<()> {
        let f = self.failures();
        if f.is_empty() {
            Ok(())
        } else {
            Err(Error::Verification(f))
        }
    }
}

fn max_rel(eqs: &[Vec<f64>], terms: &[Vec<f64>]) -> f64 {
    let scale = terms.iter().flatten().fold(f64::MIN_POSITIVE, |m, t| m.max(t.abs()));
    eqs.iter().flatten().fold(0.0f64, |m, e| m.max(e.abs())) / scale
}

/// Evaluates every certificate on the pair. Needs at least 5 nodes.
pub fn verify_eigenpair(pair: &EigenPair) -> Result<Certificate> {
    let inputs = &pair.inputs;
    let EigenInputs { g, k, k1, length } = *inputs;
    let l = pair.lambda;
    let n = pair.grid.len();
    if n < 5 {
        return Err(invalid("grid_n", "eigen certificates need at least 5 nodes"));
    }
    let h = pair.grid.spacing();
    let c = char_coeffs(l, inputs)?;
    let (du1, du2) = (derivative4(&pair.u1, h), derivative4(&pair.u2, h));
    let (dp1, dp2) = (derivative4(&pair.ph1, h), derivative4(&pair.ph2, h));

    let mut eqs: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let mut terms: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let mut deqs: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    let mut dterms: Vec<Vec<f64>> = (0..5).map(|_| Vec::with_capacity(n)).collect();
    for i in 0..n {
        let (u1, u2, q1, q2, u0) = (pair.u1[i], pair.u2[i], pair.q1[i], pair.q2[i], pair.u0[i]);
        let row = [
            du1[i] - l * u1 - k * (q1 - u1),
            -du2[i] - l * u2 - k * (q2 - u2),
            l * q1 + k * (u1 - q1) + k1 * (u0 - q1),
            l * q2 + k * (u2 - q2) - g * q2,
            l * u0 + k1 * (q1 - u0) + g * q2,
        ];
        let t =
            [du1[i], du2[i], l * u1, l * u2, k * q1, k * u1, k * q2, k * u2, k1 * u0, k1 * q1, g * q2, l * q1, l * u0];
        for (j, r) in row.into_iter().enumerate() {
            eqs[j].push(r);
        }
        terms[0].extend(t);

        let (p1, p2, f1, f2, p0) = (pair.ph1[i], pair.ph2[i], pair.phi1[i], pair.phi2[i], pair.ph0[i]);
        let drow = [
            -dp1[i] - l * p1 - k * (f1 - p1),
            dp2[i] - l * p2 - k * (f2 - p2),
            l * f1 + k * (p1 - f1) + k1 * (p0 - f1),
            l * f2 + k * (p2 - f2) + g * (p0 - f2),
            l * p0 + k1 * (f1 - p0),
        ];
        let dt =
            [dp1[i], dp2[i], l * p1, l * p2, k * f1, k * p1, k * f2, k * p2, k1 * p0, k1 * f1, g * p0, g * f2, l * p0];
        for (j, r) in drow.into_iter().enumerate() {
            deqs[j].push(r);
        }
        dterms[0].extend(dt);
    }

    let pair_prod: Vec<f64> = (0..n).map(|i| pair.u1[i] * pair.ph1[i]).collect();
    let defect = (0..n).map(|i| (pair.u1[i] * pair.ph1[i] - pair.u2[i] * pair.ph2[i]).abs()).fold(0.0, f64::max);
    let flux_scale = pair_prod.iter().fold(f64::MIN_POSITIVE, |m, v| m.max(*v));

    let grid = &pair.grid;
    let direct_norm: f64 = pair.direct().iter().map(|v| grid.integrate(v)).sum();
    let dual_norm: f64 = pair
        .direct()
        .iter()
        .zip(pair.dual())
        .map(|(a, b)| grid.integrate(&a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>()))
        .sum();
    let min_component = pair
        .direct()
        .iter()
        .chain(pair.dual().iter())
        .flat_map(|v| v[1..n - 1].iter().copied())
        .fold(f64::INFINITY, f64::min);
    let last = n - 1;
    Ok(Certificate {
        f_residual: pair.f_residual(),
        lambda_in_range: l > 0.0 && l < pair.lambda_minus,
        direct_residual: max_rel(&eqs, &terms),
        dual_residual: max_rel(&deqs, &dterms),
        duality_defect: defect / flux_scale,
        min_ph0_minus_phi2: min_gap(&pair.ph0, &pair.phi2),
        min_component,
        direct_norm,
        dual_norm,
        hairpin_mismatch: (pair.u1[last] - pair.u2[last]).abs() / pair.u2[last],
        dual_hairpin_mismatch: (pair.ph1[last] - pair.ph2[last]).abs() / pair.ph1[last],
        u1_origin: pair.u1[0],
        ph2_origin: pair.ph2[0],
        h_at_length: auxiliary_h(length, l, inputs)?,
        inv_k_lambda: 1.0 / c.k_lambda,
        gauge: "unit-mass",
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rel(a: f64, b: f64) -> f64 {
        (a - b).abs() / b.abs()
    }

    fn reference() -> EigenInputs {
        EigenInputs::from_model(&ModelParams::reference()).unwrap()
    }

    #[test]
    fn lambda_minus_limits() {
        assert!(lambda_minus(1e-30, 1.0) < 1e-29);
        let k1 = 2.5;
        assert!(rel(lambda_minus(k1, k1), k1 * (3.0 - 5f64.sqrt()) / 2.0) < 1e-15);
        assert!(rel(lambda_minus(k1, k1) / k1, 0.381966) < 1e-6);
        let naive = |k: f64, k1: f64| ((2.0 * k1 + k) - (4.0 * k1 * k1 + k * k).sqrt()) / 2.0;
        assert!(rel(lambda_minus(0.3, 1.7), naive(0.3, 1.7)) < 1e-14);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..1000 {
            let k = 10f64.powf(rng.gen_range(-12.0..2.0));
            let k1 = 10f64.powf(rng.gen_range(-12.0..2.0));
            let lm = lambda_minus(k, k1);
            assert!(lm > 0.0 && lm < k.min(k1));
            // root of the quadratic
            let q = lm * lm - (2.0 * k1 + k) * lm + k * k1;
            assert!(q.abs() <= 1e-12 * k * k1);
        }
    }

    #[test]
    fn coefficients_at_zero() {
        let inp = EigenInputs::new(0.7, 2.0, 3.0, 1.0).unwrap();
        let c = char_coeffs(0.0, &inp).unwrap();
        assert!(rel(c.k_lambda, 1.0) < 1e-15);
        assert_eq!(c.c_lambda, 0.0);
        assert!(rel(c.eta, 0.7 / (1.0 + 0.7 / 2.0)) < 1e-15);
    }

    #[test]
    fn coefficients_match_defining_fractions() {
        let inp = EigenInputs::new(0.7, 2.0, 3.0, 1.0).unwrap();
        let (g, k, k1) = (inp.g, inp.k, inp.k1);
        for l in [0.1, 0.5, 0.9 * inp.lambda_minus()] {
            let c = char_coeffs(l, &inp).unwrap();
            let d = k - l - k1 * l / (k1 - l);
            assert!(rel(c.k_lambda, k * k1 / (k1 - l) / d) < 1e-13);
            assert!(rel(c.c_lambda, l + k * (l + k1 * l / (k1 - l)) / d) < 1e-13);
            let z = 2.0 * l + 2.0 * k + k * k / d + k * k / (k + g - l) - 2.0 * k - 2.0 * k;
            // c + λ - η expands to 2λ - 2k + k²/d + k²/(k + g - λ) after collecting terms
            assert!(rel(c.z(l), 2.0 * l - 2.0 * k + k * k / d + k * k / (k + g - l)) < 1e-12, "{}", z);
        }
    }

    #[test]
    fn k_lambda_blows_up_at_pole() {
        let inp = reference();
        let lm = inp.lambda_minus();
        let a = char_coeffs(lm * (1.0 - 1e-6), &inp).unwrap().k_lambda;
        let b = char_coeffs(lm * (1.0 - 1e-9), &inp).unwrap().k_lambda;
        assert!(b > 100.0 * a && a > 1e3);
        assert!(char_coeffs(lm, &inp).is_err());
        assert!(char_coeffs(-1e-30, &inp).is_err());
        assert!(eval_f(lm * 1.01, &inp).is_err());
    }

    #[test]
    fn beta_is_positive() {
        let inp = reference();
        let lm = inp.lambda_minus();
        for i in 1..100 {
            assert!(char_coeffs(lm * i as f64 / 100.0, &inp).unwrap().beta > 0.0);
        }
    }

    #[test]
    fn f_at_origin_closed_form() {
        let inp = reference();
        let expect = 1.0 - (-inp.g * inp.length / (1.0 + inp.g / inp.k)).exp();
        assert!((eval_f(0.0, &inp).unwrap() - expect).abs() <= 1e-14);
        let tiny = inp.with_g(1e-30).unwrap();
        assert!(eval_f(0.0, &tiny).unwrap() < 1e-15);
    }

    #[test]
    fn f_monotone_on_random_inputs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let inp = EigenInputs::new(
                10f64.powf(rng.gen_range(-2.0..1.0)),
                10f64.powf(rng.gen_range(-1.0..1.0)),
                10f64.powf(rng.gen_range(-1.0..1.0)),
                10f64.powf(rng.gen_range(-1.0..1.0)),
            )
            .unwrap();
            let lm = inp.lambda_minus();
            let mut last = eval_f(0.0, &inp).unwrap();
            for i in 1..=1000 {
                let f = eval_f(lm * i as f64 / 1001.0, &inp).unwrap();
                if last == f64::INFINITY {
                    // overflowed towards the pole
                    assert_eq!(f, f64::INFINITY);
                    continue;
                }
                assert!(f > last, "{inp:?} at {i}: {f} {last}");
                last = f;
            }
        }
    }

    #[test]
    fn lambda_scales_with_rates() {
        let inp = EigenInputs::new(0.3, 1.2, 2.0, 1.5).unwrap();
        let l = solve_lambda(&inp).unwrap();
        for s in [1e-3, 7.0, 1e4] {
            let scaled = EigenInputs::new(s * inp.g, s * inp.k, s * inp.k1, inp.length / s).unwrap();
            assert!(rel(solve_lambda(&scaled).unwrap(), s * l) < 1e-11);
            let f = eval_f(0.4 * l, &inp).unwrap();
            assert!(rel(eval_f(0.4 * s * l, &scaled).unwrap(), f) < 1e-12);
        }
    }

    #[test]
    fn reference_eigenvalue() {
        let inp = reference();
        let l = solve_lambda(&inp).unwrap();
        assert!((eval_f(l, &inp).unwrap() - 1.0).abs() <= F_TOL);
        assert!(l > 0.0 && l < inp.lambda_minus());
        let b = solve_lambda_bisection(&inp).unwrap();
        assert!(rel(l, b) < 1e-11);
    }

    #[test]
    fn eigenpair_certificates_pass() {
        let pair = solve_eigenpair(&reference(), 2001).unwrap();
        let cert = verify_eigenpair(&pair).unwrap();
        assert!(cert.failures().is_empty(), "{:?}", cert.failures());
    }

    #[test]
    fn proof_gauge_has_u2_origin_lambda() {
        let pair = solve_eigenpair(&reference(), 201).unwrap();
        let (d, p) = pair.proof_gauge();
        assert_eq!(d[0][0], 0.0);
        assert!(rel(d[1][0], pair.lambda) < 1e-14);
        let pairing: f64 =
            (0..5).map(|j| pair.grid.integrate(&d[j].iter().zip(&p[j]).map(|(a, b)| a * b).collect::<Vec<_>>())).sum();
        assert!((pairing - 1.0).abs() < 1e-12);
    }

    #[test]
    fn normalizations_stable_under_refinement() {
        let inp = reference();
        let coarse = solve_eigenpair(&inp, 201).unwrap();
        let fine = solve_eigenpair(&inp, 401).unwrap();
        // compare the unnormalized masses, which depend on quadrature
        assert!(rel(coarse.gauge_factor, fine.gauge_factor) < 1e-9);
        let last = |p: &EigenPair| p.ph1[0];
        assert!(rel(last(&coarse), last(&fine)) < 1e-9);
    }

    #[test]
    fn shooting_matches_closed_form() {
        use nalgebra::{Matrix3, Vector3};
        let inp = reference();
        let l = solve_lambda(&inp).unwrap();
        let EigenInputs { g, k, k1, length } = inp;
        let algebraic = |u1: f64, u2: f64| {
            // rows: Q1, Q2, U0 balances
            let m = Matrix3::new(l - k - k1, 0.0, k1, 0.0, l - k - g, 0.0, k1, g, l - k1);
            let rhs = Vector3::new(-k * u1, -k * u2, 0.0);
            m.lu().solve(&rhs).unwrap()
        };
        let rhs = |y: [f64; 2]| {
            let s = algebraic(y[0], y[1]);
            [l * y[0] + k * (s[0] - y[0]), -(l * y[1] + k * (s[1] - y[1]))]
        };
        let steps = 4000;
        let h = length / steps as f64;
        let mut y = [0.0, l];
        for _ in 0..steps {
            let a = rhs(y);
            let b = rhs([y[0] + 0.5 * h * a[0], y[1] + 0.5 * h * a[1]]);
            let c = rhs([y[0] + 0.5 * h * b[0], y[1] + 0.5 * h * b[1]]);
            let d = rhs([y[0] + h * c[0], y[1] + h * c[1]]);
            for j in 0..2 {
                y[j] += h / 6.0 * (a[j] + 2.0 * b[j] + 2.0 * c[j] + d[j]);
            }
        }
        assert!(rel(y[0], y[1]) < 1e-8, "{} vs {}", y[0], y[1]);
    }

    #[test]
    fn decay_rate_in_seconds() {
        let m = ModelParams::reference();
        let l = solve_lambda(&EigenInputs::from_model(&m).unwrap()).unwrap();
        let rate = decay_rate(l, &m);
        assert!(rate > 1e-3 && rate < 1e-1, "{rate}");
    }

    #[test]
    fn invalid_inputs_rejected() {
        assert!(EigenInputs::new(0.0, 1.0, 1.0, 1.0).is_err());
        assert!(EigenInputs::new(1.0, 1.0, -1.0, 1.0).is_err());
        assert!(EigenInputs::new(1.0, 1.0, 1.0, f64::NAN).is_err());
    }

    #[test]
    fn csv_and_summary() {
        let pair = solve_eigenpair(&reference(), 11).unwrap();
        let mut buf = Vec::new();
        pair.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("x,U1,U2,Q1,Q2,U0,ph1,ph2,phi1,phi2,ph0\n"));
        assert_eq!(text.lines().count(), 12);
        let s = pair.summary_line();
        assert!(s.starts_with("{\"lambda\":") && s.contains("\"min_ph0_minus_phi2\":"));
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(64))]
        #[test]
        fn eigenfunctions_positive(lg in -2.0f64..1.0, lk in -1.0f64..1.0, lk1 in -1.0f64..1.0, ll in -1.0f64..1.0) {
            let inp = EigenInputs::new(10f64.powf(lg), 10f64.powf(lk), 10f64.powf(lk1), 10f64.powf(ll)).unwrap();
            let pair = solve_eigenpair(&inp, 101).unwrap();
            let cert = verify_eigenpair(&pair).unwrap();
            prop_assert!(cert.min_component > 0.0);
            prop_assert!(cert.min_ph0_minus_phi2 > 0.0);
            prop_assert!(cert.duality_defect <= DUALITY_TOL);
            let b = solve_lambda_bisection(&inp).unwrap();
            prop_assert!((eval_f(b, &inp).unwrap() - 1.0).abs() <= F_TOL);
            prop_assert!(pair.f_residual() <= F_TOL);
            // λ is only well determined when F(0) sits clearly below 1
            if eval_f(0.0, &inp).unwrap() < 1.0 - 1e-3 {
                prop_assert!(rel(b, pair.lambda) < 1e-11);
            }
        }
    }
}
