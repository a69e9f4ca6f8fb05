//! One function per subcommand. Every run writes `manifest.toml` (the fully
//! resolved configuration) and `summary.json` into the output directory.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use ccsim_core::eigen::{decay_rate, solve_eigenpair, verify_eigenpair, EigenInputs};
use ccsim_core::experiments::{emit_profiles, run_fic_curve, run_fic_grid, write_fic_curve, Output};
use ccsim_core::output::write_csv;
use ccsim_core::steady::{axial_gradient_at_origin, boundary_sensitivities, residuals, solve_steady_with};
use ccsim_core::transient::{epsilon_study, initialize, solve_transient_with, DecayReference, TransientOptions};
use serde_json::{json, Value};

use crate::config::RunConfig;
use crate::{verify, Command, Failure};

pub fn dispatch(command: Command, cfg: &RunConfig) -> Result<(), Failure> {
    fs::create_dir_all(&cfg.out)?;
    write_manifest(command, cfg)?;
    let summary = match command {
        Command::Steady => steady(cfg)?,
        Command::Eigen => eigen(cfg)?,
        Command::Transient { .. } => transient(cfg)?,
        Command::Limit => limit(cfg)?,
        Command::Sweep => sweep(cfg)?,
        Command::Verify => return verify::run(cfg),
    };
    if summary.is_null() {
        return Ok(());
    }
    finish(cfg, &summary)
}

fn write_manifest(command: Command, cfg: &RunConfig) -> Result<(), Failure> {
    let text = format!(
        "# ccsim {} {}\n# rerun with: ccsim {} --config <this file>\n{}",
        env!("CARGO_PKG_VERSION"),
        command.name(),
        command.name(),
        cfg.to_toml()
    );
    fs::write(cfg.out.join("manifest.toml"), text)?;
    Ok(())
}

pub fn finish(cfg: &RunConfig, summary: &Value) -> Result<(), Failure> {
    let text = serde_json::to_string_pretty(summary).expect("summary serializes");
    fs::write(cfg.out.join("summary.json"), format!("{text}\n"))?;
    println!("{text}");
    Ok(())
}

fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

fn steady(cfg: &RunConfig) -> Result<Value, Failure> {
    let m = cfg.model()?;
    let grid = cfg.grid(cfg.grid_n)?;
    let profile = solve_steady_with(&m, &grid, &cfg.steady_options())?;
    profile.write_csv(create(&cfg.out, "steady_profile.csv")?)?;
    let res = if grid.len() >= 5 { Some(residuals(&profile, &m)?.max()) } else { None };
    let sens = boundary_sensitivities(&m)?;
    let grad = axial_gradient_at_origin(&profile, &m);
    Ok(json!({
        "command": "steady",
        "grid_n": grid.len(),
        "FIC": profile.fic,
        "q2_0": profile.q2_0,
        "u_L": profile.u[grid.len() - 1],
        "ordering_margin": profile.ordering_margin(),
        "max_relative_residual": res,
        "dq20_dVm": sens.d_vm,
        "dq20_dk": sens.d_k,
        "axial_gradient_continuum": grad.continuum,
        "axial_gradient_sampled": grad.sampled,
        "files": ["steady_profile.csv"],
    }))
}

fn eigen(cfg: &RunConfig) -> Result<Value, Failure> {
    let m = cfg.model()?;
    let inputs = EigenInputs::from_model(&m)?;
    let pair = solve_eigenpair(&inputs, cfg.grid_n)?;
    pair.write_csv(create(&cfg.out, "eigenpair.csv")?)?;
    let cert = verify_eigenpair(&pair)?;
    let summary = json!({
        "command": "eigen",
        "lambda": pair.lambda,
        "lambda_minus": pair.lambda_minus,
        "lambda_bar": decay_rate(pair.lambda, &m),
        "F_residual": cert.f_residual,
        "min_ph0_minus_phi2": cert.min_ph0_minus_phi2,
        "inputs": { "g": inputs.g, "k": inputs.k, "K1": inputs.k1, "transit_length": inputs.length },
        "certificate": {
            "gauge": cert.gauge,
            "direct_residual": cert.direct_residual,
            "dual_residual": cert.dual_residual,
            "duality_defect": cert.duality_defect,
            "min_component": cert.min_component,
            "direct_norm": cert.direct_norm,
            "dual_norm": cert.dual_norm,
            "hairpin_mismatch": cert.hairpin_mismatch,
            "dual_hairpin_mismatch": cert.dual_hairpin_mismatch,
            "H_at_L": cert.h_at_length,
            "inv_k_lambda": cert.inv_k_lambda,
            "failures": cert.failures(),
        },
        "proof_gauge_factor": pair.gauge_factor,
        "files": ["eigenpair.csv"],
    });
    // The summary is written even when the certificate fails, so the
    // offending quantities can be inspected.
    finish(cfg, &summary)?;
    cert.check()?;
    Ok(Value::Null)
}

fn transient(cfg: &RunConfig) -> Result<Value, Failure> {
    let m = cfg.model()?;
    let grid = cfg.grid(cfg.transient.grid_n)?;
    let reference = DecayReference::new(&m, &grid)?;
    let boundary = cfg.boundary_with_rate(reference.lambda_bar / 3.0)?;
    let initial = initialize(&m, &grid, cfg.preset())?;
    let opts = TransientOptions {
        t_end: cfg.transient.t_end,
        samples: cfg.transient.samples,
        scheme: cfg.scheme(),
        dt: None,
        snapshot_times: cfg.transient.snapshot_times.clone(),
    };
    let run = solve_transient_with(&m, initial, &boundary, &opts, &reference)?;
    let r = &run.report;
    r.write_csv(create(&cfg.out, "trajectory.csv")?)?;
    let mut files = vec!["trajectory.csv".to_string()];
    let mut snapshot_times = Vec::new();
    for (i, s) in run.snapshots.iter().enumerate() {
        let name = format!("snapshot_{i}.csv");
        s.write_csv(create(&cfg.out, &name)?)?;
        files.push(name);
        snapshot_times.push(s.t);
    }
    Ok(json!({
        "command": "transient",
        "grid_n": grid.len(),
        "t_end": r.times.last(),
        "dt": r.dt,
        "steps": r.steps,
        "M0": r.m0(),
        "M_final": r.final_m(),
        "M_discrete0": r.m_discrete[0],
        "M_discrete_final": r.m_discrete.last(),
        "truncation_floor": r.floor,
        "lambda": r.lambda,
        "lambda_bar": r.theoretical_rate,
        "fitted_rate": r.fitted_rate,
        "bound_satisfied": r.bound_satisfied,
        "bound_ratio_max": r.bound_ratio_max,
        "bound_samples_checked": r.bound_samples_checked,
        "mass_ledger_max": r.mass_ledger_max,
        "ub_limit": boundary.limit(),
        "snapshot_times": snapshot_times,
        "files": files,
    }))
}

fn limit(cfg: &RunConfig) -> Result<Value, Failure> {
    let m = cfg.model()?;
    let grid = cfg.grid(cfg.limit.grid_n)?;
    let eps = cfg.eps_list()?;
    let study = epsilon_study(&m, &eps, &grid, cfg.limit.t_end)?;
    study.write_csv(create(&cfg.out, "epsilon_study.csv")?)?;
    let x = grid.points();
    let lim = &study.limit;
    write_csv(
        create(&cfg.out, "limit_state.csv")?,
        &["x", "u1", "u2", "u0"],
        (0..grid.len()).map(|i| vec![x[i], lim.u1[i], lim.u2[i], lim.u0[i]]),
    )?;
    let rows: Vec<Value> = study
        .rows
        .iter()
        .map(|r| json!({"eps": r.eps, "k": r.k, "gap_u1_q1": r.gap_u1_q1, "gap_u2_q2": r.gap_u2_q2, "limit_distance": r.limit_distance}))
        .collect();
    Ok(json!({
        "command": "limit",
        "grid_n": grid.len(),
        "t_end": study.t_end,
        "dt": study.dt,
        "rows": rows,
        "gap_ratios": study.gap_ratios(),
        "files": ["epsilon_study.csv", "limit_state.csv"],
    }))
}

fn sweep(cfg: &RunConfig) -> Result<Value, Failure> {
    let m = cfg.model()?;
    let spec = cfg.sweep_spec()?;
    let mut summary = json!({ "command": "sweep", "grid_n": spec.grid.len() });
    let mut files = Vec::new();
    if spec.outputs.contains(&Output::FicCurve) {
        let curve = run_fic_curve(&spec, &m)?;
        write_fic_curve(&curve, create(&cfg.out, "fic_curve.csv")?)?;
        files.push("fic_curve.csv".to_string());
        let max = curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
        summary["fic_curve_max"] = json!(max);
        summary["fic_curve_nondecreasing"] = json!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
    }
    if spec.outputs.contains(&Output::FicGrid) {
        let grid = run_fic_grid(&spec, &m)?;
        grid.write_csv(create(&cfg.out, "fic_grid.csv")?)?;
        files.push("fic_grid.csv".to_string());
        let v = grid.violations();
        summary["fic_grid_min"] = json!(grid.min());
        summary["fic_grid_violations"] =
            json!(v.iter().map(|x| json!({"axis": x.axis, "i": x.i, "j": x.j, "drop": x.drop})).collect::<Vec<_>>());
    }
    if spec.outputs.contains(&Output::Profiles) {
        let entries = cfg
            .sweep
            .profile_p
            .iter()
            .map(|&p| Ok((format!("P{p:e}"), m.with_permeability(p)?)))
            .collect::<Result<Vec<_>, ccsim_core::Error>>()?;
        for path in emit_profiles(&entries, &spec.grid, &cfg.out)? {
            files.push(path.file_name().map(|f| f.to_string_lossy().into_owned()).unwrap_or_default());
        }
    }
    summary["files"] = json!(files);
    Ok(summary)
}
