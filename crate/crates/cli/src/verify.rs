//! Invariant suite behind `ccsim verify`. Every check runs on the resolved
//! model, so config overrides are exercised as well.

use ccsim_core::eigen::{solve_eigenpair, verify_eigenpair, EigenInputs};
use ccsim_core::model::{fluxes, Compartments};
use ccsim_core::roots::bisect;
use ccsim_core::steady::{boundary_sensitivities, residuals, solve_boundary_q2, solve_steady};
use ccsim_core::transient::{
    discrete_equilibrium, initialize, BoundarySignal, DecayReference, Integrator, Preset, Scheme, TransientState,
};
use ccsim_core::{Grid1D, ModelParams};
use serde_json::json;

use crate::commands::finish;
use crate::config::RunConfig;
use crate::Failure;

struct Check {
    name: &'static str,
    pass: bool,
    detail: String,
}

type Probe = fn(&ModelParams) -> ccsim_core::Result<(bool, String)>;

const CHECKS: &[(&str, Probe)] = &[
    ("flux conservation", flux_conservation),
    ("pump derivative", pump_derivative),
    ("boundary root", boundary_root),
    ("sensitivities", sensitivities),
    ("steady residuals", steady_residuals),
    ("ordering chain", ordering_chain),
    ("FIC monotone in P", fic_monotone),
    ("eigen certificate", eigen_certificate),
    ("mass ledger", mass_ledger),
    ("discrete fixed point", fixed_point),
    ("positivity", positivity),
    ("M vanishes at steady", lyapunov_zero),
];

pub fn run(cfg: &RunConfig) -> Result<(), Failure> {
    let m = cfg.model()?;
    let results: Vec<Check> = CHECKS
        .iter()
        .map(|(name, probe)| match probe(&m) {
            Ok((pass, detail)) => Check { name, pass, detail },
            Err(e) => Check { name, pass: false, detail: format!("error: {e}") },
        })
        .collect();
    let width = results.iter().map(|c| c.name.len()).max().unwrap_or(0);
    for c in &results {
        eprintln!("{} {:width$}  {}", if c.pass { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed: Vec<&str> = results.iter().filter(|c| !c.pass).map(|c| c.name).collect();
    let summary = json!({
        "command": "verify",
        "passed": results.len() - failed.len(),
        "failed": failed,
        "checks": results.iter().map(|c| json!({"name": c.name, "pass": c.pass, "detail": c.detail})).collect::<Vec<_>>(),
    });
    finish(cfg, &summary)?;
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Failure::Verification(failed.join(", ")))
    }
}

fn grid(m: &ModelParams, n: usize) -> ccsim_core::Result<Grid1D> {
    Grid1D::new(n, m.length())
}

fn flux_conservation(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let levels = [0.0, 0.5, 3.5, 40.0, 140.0, 900.0];
    let mut worst = 0.0f64;
    for &a in &levels {
        for &b in &levels {
            for &c in &levels {
                let s = Compartments { u1: a, u2: b, q1: c, q2: a.max(b), u0: b.min(c) };
                let f = fluxes(&s, m)?;
                let scale = f.max_abs().max(f64::MIN_POSITIVE);
                worst = worst.max(f.sum().abs() / scale);
            }
        }
    }
    Ok((worst <= 1e-12, format!("max |sum J| / max |J| = {worst:.2e}")))
}

fn pump_derivative(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let p = m.pump;
    let mut worst = 0.0f64;
    for q in [0.1, 1.0, 3.5, 10.0, 140.0] {
        let h = 1e-5 * q;
        let fd = (p.rate(q + h) - p.rate(q - h)) / (2.0 * h);
        let exact = p.derivative(q);
        worst = worst.max((fd - exact).abs() / exact.abs().max(1e-300));
    }
    Ok((worst <= 1e-6, format!("max relative error vs central difference = {worst:.2e}")))
}

fn boundary_root(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let ub = m.ub_bar;
    let newton = solve_boundary_q2(ub, m)?;
    let (k, pump) = (m.k(), m.pump);
    let reference = bisect(|y| y + pump.rate(y) / k - ub, 0.0, ub, 200)?;
    let diff = (newton - reference).abs() / ub;
    Ok((diff <= 1e-10, format!("q2(0) = {newton:.12e}, |newton - bisection| / ub = {diff:.2e}")))
}

fn sensitivities(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let s = boundary_sensitivities(m)?;
    let signs_ok = s.d_vm <= 0.0 && s.d_k >= 0.0;
    let h = 1e-6;
    let base = solve_boundary_q2(m.ub_bar, m)?;
    let bumped = solve_boundary_q2(m.ub_bar, &m.with_exchange(m.k() * (1.0 + h))?)?;
    let fd = (bumped - base) / (m.k() * h);
    let rel = (fd - s.d_k).abs() / s.d_k.abs().max(1e-300);
    Ok((
        signs_ok && (s.d_k == 0.0 || rel <= 1e-3),
        format!("dq2/dVm = {:.3e}, dq2/dk = {:.3e}, fd mismatch = {rel:.1e}", s.d_vm, s.d_k),
    ))
}

fn steady_residuals(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let p = solve_steady(m, &grid(m, 2001)?)?;
    let r = residuals(&p, m)?.max();
    Ok((r <= 1e-6, format!("max relative stationary residual = {r:.2e}")))
}

fn ordering_chain(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let margin = solve_steady(m, &grid(m, 501)?)?.ordering_margin();
    Ok((margin >= 0.0, format!("min relative ordering margin = {margin:.3e}")))
}

fn fic_monotone(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let g = grid(m, 401)?;
    let values = [1e-8, 1e-7, 1e-6, 1e-5]
        .iter()
        .map(|&p| Ok(solve_steady(&m.with_permeability(p)?, &g)?.fic))
        .collect::<ccsim_core::Result<Vec<f64>>>()?;
    let ok = values.windows(2).all(|w| w[1] >= w[0] * (1.0 - 1e-9));
    let listed = values.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(", ");
    Ok((ok, format!("FIC at P = 1e-8..1e-5: [{listed}]")))
}

fn eigen_certificate(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let pair = solve_eigenpair(&EigenInputs::from_model(m)?, 2001)?;
    let cert = verify_eigenpair(&pair)?;
    let failures = cert.failures();
    let detail = if failures.is_empty() {
        format!("lambda = {:.6e}, |F - 1| = {:.1e}", pair.lambda, cert.f_residual)
    } else {
        failures.join("; ")
    };
    Ok((failures.is_empty(), detail))
}

fn mass_ledger(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let g = grid(m, 101)?;
    let boundary = BoundarySignal::exponential(m.ub_bar, 25.0, 0.02)?;
    let mut state = initialize(m, &g, Preset::Flat(0.7 * m.ub_bar))?;
    let mut integ = Integrator::new(m, &g, Scheme::Explicit)?;
    let dt = 0.9 * integ.step_limit();
    let mut mass = state.mass(m);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let inflow = m.alpha() * (boundary.value(state.t) - state.u2[0]);
        integ.step(&mut state, &boundary, dt)?;
        let next = state.mass(m);
        worst = worst.max(((next - mass) - dt * inflow).abs() / next);
        mass = next;
    }
    Ok((worst <= 1e-12, format!("max per-step relative balance error over 1000 steps = {worst:.2e}")))
}

fn fixed_point(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let g = grid(m, 101)?;
    let eq = discrete_equilibrium(m, &g, m.ub_bar)?;
    let mut state = eq.clone();
    let boundary = BoundarySignal::constant(m.ub_bar)?;
    let mut integ = Integrator::new(m, &g, Scheme::Explicit)?;
    let dt = 0.9 * integ.step_limit();
    for _ in 0..100 {
        integ.step(&mut state, &boundary, dt)?;
    }
    let drift = max_relative_gap(&state, &eq);
    Ok((drift <= 1e-9, format!("relative drift after 100 steps = {drift:.2e}")))
}

fn positivity(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let g = grid(m, 101)?;
    let boundary = BoundarySignal::constant(m.ub_bar)?;
    let mut state = initialize(m, &g, Preset::Flat(0.0))?;
    let mut integ = Integrator::new(m, &g, Scheme::Explicit)?;
    let dt = 0.9 * integ.step_limit();
    let mut lowest = f64::INFINITY;
    for _ in 0..2000 {
        integ.step(&mut state, &boundary, dt)?;
        lowest = state.fields().iter().flat_map(|f| f.iter()).fold(lowest, |a, &b| a.min(b));
    }
    Ok((lowest >= 0.0, format!("min concentration from an empty start = {lowest:.3e}")))
}

fn lyapunov_zero(m: &ModelParams) -> ccsim_core::Result<(bool, String)> {
    let g = grid(m, 201)?;
    let reference = DecayReference::new(m, &g)?;
    let at_steady = reference.m(&reference.steady, m)?;
    let at_eq = reference.m_discrete(&reference.equilibrium, m)?;
    Ok((
        at_steady == 0.0 && at_eq == 0.0,
        format!("M(steady) = {at_steady:.1e}, M_discrete(equilibrium) = {at_eq:.1e}"),
    ))
}

fn max_relative_gap(a: &TransientState, b: &TransientState) -> f64 {
    a.fields()
        .iter()
        .zip(b.fields().iter())
        .flat_map(|(x, y)| x.iter().zip(y.iter()))
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}
