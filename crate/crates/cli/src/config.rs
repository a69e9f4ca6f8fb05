//! Run configuration: a TOML document with model-parameter top-level keys and
//! one optional section per subcommand. Omitted keys take the reference
//! values; unknown keys are rejected.

use std::path::PathBuf;

use ccsim_core::experiments::{axis, Output, Spacing, SweepSpec};
use ccsim_core::model::{
    Geometry, Permeabilities, PumpParams, DEFAULT_KM2, DEFAULT_P1E, DEFAULT_PERMEABILITY, DEFAULT_UB_BAR,
    DEFAULT_VM_SCALE,
};
use ccsim_core::steady::{SteadyOptions, DEFAULT_STEADY_NODES};
use ccsim_core::transient::{BoundarySignal, Preset, Scheme, DEFAULT_SAMPLES};
use ccsim_core::{Grid1D, ModelParams};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    Parse(String),
    #[error("invalid value for `{key}`: {reason}")]
    Invalid { key: String, reason: String },
}

fn bad(key: &str, reason: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { key: key.to_string(), reason: reason.into() }
}

impl From<ccsim_core::Error> for ConfigError {
    fn from(e: ccsim_core::Error) -> Self {
        match e {
            ccsim_core::Error::InvalidParameter { name, reason } => bad(name, reason),
            other => bad("config", other.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    #[serde(rename = "L")]
    pub length: f64,
    pub alpha: f64,
    pub r1: f64,
    pub r2: f64,
    pub r1e: f64,
    pub r2e: f64,
    #[serde(rename = "P")]
    pub permeability: f64,
    #[serde(rename = "P1e")]
    pub p1e: f64,
    #[serde(rename = "Vm_scale")]
    pub vm_scale: f64,
    #[serde(rename = "KM2")]
    pub km2: f64,
    pub ub_bar: f64,
    pub grid_n: usize,
    pub out: PathBuf,
    pub solver: SolverSection,
    pub transient: TransientSection,
    pub sweep: SweepSection,
    pub limit: LimitSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        let g = Geometry::reference();
        Self {
            length: g.length,
            alpha: g.alpha,
            r1: g.r1,
            r2: g.r2,
            r1e: g.r1e,
            r2e: g.r2e,
            permeability: DEFAULT_PERMEABILITY,
            p1e: DEFAULT_P1E,
            vm_scale: DEFAULT_VM_SCALE,
            km2: DEFAULT_KM2,
            ub_bar: DEFAULT_UB_BAR,
            grid_n: DEFAULT_STEADY_NODES,
            out: PathBuf::from("ccsim-out"),
            solver: SolverSection::default(),
            transient: TransientSection::default(),
            sweep: SweepSection::default(),
            limit: LimitSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SolverSection {
    pub newton_rel_tol: f64,
    pub newton_max_iter: usize,
}

impl Default for SolverSection {
    fn default() -> Self {
        let o = SteadyOptions::default();
        Self { newton_rel_tol: o.newton_rel_tol, newton_max_iter: o.newton_max_iter }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum PresetName {
    Steady,
    Flat,
    PerturbedSteady,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Explicit,
    ImplicitExchange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum BoundaryMode {
    Constant,
    Exponential,
    Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TransientSection {
    pub grid_n: usize,
    /// Seconds; when absent the run lasts twenty relaxation times.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_end: Option<f64>,
    pub samples: usize,
    pub scheme: SchemeName,
    pub preset: PresetName,
    /// Level of the flat preset; defaults to `ub_bar`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub flat_value: Option<f64>,
    pub perturbation: f64,
    pub boundary: BoundaryMode,
    #[serde(rename = "C0")]
    pub c0: f64,
    /// Rate of the exponential inflow [1/s]; defaults to a third of the decay rate.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu0: Option<f64>,
    pub table: Vec<[f64; 2]>,
    pub snapshot_times: Vec<f64>,
}

impl Default for TransientSection {
    fn default() -> Self {
        Self {
            grid_n: 401,
            t_end: None,
            samples: DEFAULT_SAMPLES,
            scheme: SchemeName::Explicit,
            preset: PresetName::Flat,
            flat_value: None,
            perturbation: 5.0,
            boundary: BoundaryMode::Constant,
            c0: 10.0,
            mu0: None,
            table: Vec::new(),
            snapshot_times: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SpacingName {
    Linear,
    Log,
}

impl From<SpacingName> for Spacing {
    fn from(s: SpacingName) -> Self {
        match s {
            SpacingName::Linear => Spacing::Linear,
            SpacingName::Log => Spacing::Log,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutputName {
    Profiles,
    FicCurve,
    FicGrid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    pub grid_n: usize,
    #[serde(rename = "P_min")]
    pub p_min: f64,
    #[serde(rename = "P_max")]
    pub p_max: f64,
    #[serde(rename = "P_count")]
    pub p_count: usize,
    #[serde(rename = "P_spacing")]
    pub p_spacing: SpacingName,
    #[serde(rename = "Vm_min")]
    pub vm_min: f64,
    #[serde(rename = "Vm_max")]
    pub vm_max: f64,
    #[serde(rename = "Vm_count")]
    pub vm_count: usize,
    #[serde(rename = "Vm_spacing")]
    pub vm_spacing: SpacingName,
    pub outputs: Vec<OutputName>,
    /// Permeabilities for which `profile_<tag>` files are written.
    #[serde(rename = "profile_P")]
    pub profile_p: Vec<f64>,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            grid_n: DEFAULT_STEADY_NODES,
            p_min: 1e-8,
            p_max: 1e-5,
            p_count: 50,
            p_spacing: SpacingName::Linear,
            vm_min: 1e-5,
            vm_max: 1e-4,
            vm_count: 20,
            vm_spacing: SpacingName::Linear,
            outputs: vec![OutputName::FicCurve, OutputName::FicGrid, OutputName::Profiles],
            profile_p: vec![2e-7, 2e-5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    pub grid_n: usize,
    pub t_end: f64,
    /// Explicit `ε = 1/k` values; when empty they follow from `P_list`.
    pub eps_list: Vec<f64>,
    #[serde(rename = "P_list")]
    pub p_list: Vec<f64>,
}

impl Default for LimitSection {
    fn default() -> Self {
        Self { grid_n: 101, t_end: 1000.0, eps_list: Vec::new(), p_list: vec![1e-5, 1e-4, 1e-3, 1e-2] }
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<RunConfig, ConfigError> {
    let cfg: RunConfig = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
    cfg.validate()?;
    Ok(cfg)
}

fn grid_size(key: &str, n: usize) -> Result<(), ConfigError> {
    if n < 5 {
        return Err(bad(key, format!("must be at least 5, got {n}")));
    }
    Ok(())
}

fn finite_positive(key: &str, v: f64) -> Result<(), ConfigError> {
    if !(v.is_finite() && v > 0.0) {
        return Err(bad(key, format!("must be finite and > 0, got {v}")));
    }
    Ok(())
}

impl RunConfig {
    /// Checks every value, without solving anything.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.model()?;
        grid_size("grid_n", self.grid_n)?;
        if self.permeability <= 0.0 {
            return Err(bad("P", "must be > 0 for the steady reduction"));
        }
        finite_positive("solver.newton_rel_tol", self.solver.newton_rel_tol)?;
        if self.solver.newton_max_iter == 0 {
            return Err(bad("solver.newton_max_iter", "must be >= 1"));
        }
        let t = &self.transient;
        grid_size("transient.grid_n", t.grid_n)?;
        if let Some(te) = t.t_end {
            finite_positive("transient.t_end", te)?;
        }
        if t.samples == 0 {
            return Err(bad("transient.samples", "must be >= 1"));
        }
        if let Some(f) = t.flat_value {
            if !(f.is_finite() && f >= 0.0) {
                return Err(bad("transient.flat_value", "must be finite and >= 0"));
            }
        }
        if !t.perturbation.is_finite() {
            return Err(bad("transient.perturbation", "must be finite"));
        }
        if let Some(mu0) = t.mu0 {
            finite_positive("transient.mu0", mu0)?;
        }
        if t.snapshot_times.iter().any(|s| !(s.is_finite() && *s >= 0.0)) {
            return Err(bad("transient.snapshot_times", "entries must be finite and >= 0"));
        }
        if t.boundary != BoundaryMode::Table && !t.table.is_empty() {
            return Err(bad("transient.table", "only used with boundary = \"table\""));
        }
        self.boundary_with_rate(1.0).map_err(|e| match e {
            ConfigError::Invalid { key, reason } => bad(&format!("transient.{key}"), reason),
            other => other,
        })?;
        let s = &self.sweep;
        grid_size("sweep.grid_n", s.grid_n)?;
        self.sweep_spec()?;
        for p in &s.profile_p {
            finite_positive("sweep.profile_P", *p)?;
        }
        let l = &self.limit;
        grid_size("limit.grid_n", l.grid_n)?;
        finite_positive("limit.t_end", l.t_end)?;
        let eps = self.eps_list()?;
        if eps.is_empty() {
            return Err(bad("limit.eps_list", "needs at least one entry (or a nonempty P_list)"));
        }
        if eps.iter().any(|e| !(e.is_finite() && *e > 0.0)) {
            return Err(bad("limit.eps_list", "entries must be finite and > 0"));
        }
        if eps.windows(2).any(|w| w[1] >= w[0]) {
            return Err(bad("limit.eps_list", "must be strictly decreasing (P_list strictly increasing)"));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<ModelParams, ConfigError> {
        let g = Geometry::new(self.length, self.r1, self.r2, self.r1e, self.r2e, self.alpha)?;
        let perms = Permeabilities::matched(self.permeability, self.p1e, &g)?;
        let pump = PumpParams::from_scale(self.vm_scale, self.km2, &g)?;
        Ok(ModelParams::new(g, perms, pump, self.ub_bar)?)
    }

    pub fn steady_options(&self) -> SteadyOptions {
        SteadyOptions { newton_rel_tol: self.solver.newton_rel_tol, newton_max_iter: self.solver.newton_max_iter }
    }

    pub fn grid(&self, n: usize) -> Result<Grid1D, ConfigError> {
        Ok(Grid1D::new(n, self.length)?)
    }

    pub fn scheme(&self) -> Scheme {
        match self.transient.scheme {
            SchemeName::Explicit => Scheme::Explicit,
            SchemeName::ImplicitExchange => Scheme::ImplicitExchange,
        }
    }

    pub fn preset(&self) -> Preset {
        match self.transient.preset {
            PresetName::Steady => Preset::Steady,
            PresetName::Flat => Preset::Flat(self.transient.flat_value.unwrap_or(self.ub_bar)),
            PresetName::PerturbedSteady => Preset::PerturbedSteady(self.transient.perturbation),
        }
    }

    /// Inflow signal; `default_mu0` is used when `mu0` is not configured.
    pub fn boundary_with_rate(&self, default_mu0: f64) -> Result<BoundarySignal, ConfigError> {
        let t = &self.transient;
        Ok(match t.boundary {
            BoundaryMode::Constant => BoundarySignal::constant(self.ub_bar)?,
            BoundaryMode::Exponential => BoundarySignal::exponential(self.ub_bar, t.c0, t.mu0.unwrap_or(default_mu0))?,
            BoundaryMode::Table => BoundarySignal::table(self.ub_bar, t.table.iter().map(|p| (p[0], p[1])).collect())?,
        })
    }

    pub fn sweep_spec(&self) -> Result<SweepSpec, ConfigError> {
        let s = &self.sweep;
        let p = axis(s.p_min, s.p_max, s.p_count, s.p_spacing.into()).map_err(|e| prefixed("sweep.P", e))?;
        let vm = axis(s.vm_min, s.vm_max, s.vm_count, s.vm_spacing.into()).map_err(|e| prefixed("sweep.Vm", e))?;
        let outputs = s
            .outputs
            .iter()
            .map(|o| match o {
                OutputName::Profiles => Output::Profiles,
                OutputName::FicCurve => Output::FicCurve,
                OutputName::FicGrid => Output::FicGrid,
            })
            .collect();
        Ok(SweepSpec::new(p, vm, self.grid(s.grid_n)?, outputs)?)
    }

    /// `ε` values of the limit study, explicit or derived from `P_list`.
    pub fn eps_list(&self) -> Result<Vec<f64>, ConfigError> {
        let l = &self.limit;
        if !l.eps_list.is_empty() {
            return Ok(l.eps_list.clone());
        }
        let r1 = self.r1;
        l.p_list
            .iter()
            .map(|&p| {
                finite_positive("limit.P_list", p)?;
                Ok(1.0 / (2.0 * std::f64::consts::PI * r1 * p))
            })
            .collect()
    }

    /// The resolved configuration as TOML, loadable by [`parse_config`].
    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes")
    }
}

fn prefixed(prefix: &str, e: ccsim_core::Error) -> ConfigError {
    match e {
        ccsim_core::Error::InvalidParameter { reason, .. } => bad(prefix, reason),
        other => bad(prefix, other.to_string()),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_gives_reference_values() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, RunConfig::default());
        assert_eq!(cfg.permeability, 2e-7);
        assert_eq!(cfg.model().unwrap(), ModelParams::reference());
    }

    #[test]
    fn thin_epithelium_names_key() {
        let err = parse_config("r1e = 5e-6").unwrap_err();
        match err {
            ConfigError::Invalid { key, .. } => assert_eq!(key, "r1e"),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn km2_round_trips() {
        let cfg = parse_config("KM2 = 3.5").unwrap();
        assert_eq!(cfg.model().unwrap().pump.km2, 3.5);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(matches!(parse_config("Q = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config("[transient]\nfoo = 1"), Err(ConfigError::Parse(_))));
        assert!(matches!(parse_config("[nope]"), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn parse_error_reports_line() {
        let err = parse_config("P = 1e-7\nalpha = = 2").unwrap_err().to_string();
        assert!(err.contains("line 2"), "{err}");
    }

    #[test]
    fn section_validation_names_key() {
        for (doc, key) in [
            ("[transient]\nsamples = 0", "transient.samples"),
            ("[limit]\nP_list = [1e-3, 1e-4]", "limit.eps_list"),
            ("[sweep]\nP_min = 0.0", "sweep.P"),
            ("grid_n = 3", "grid_n"),
            ("[transient]\nboundary = \"exponential\"\nC0 = -500.0", "transient.C0"),
            ("[transient]\nboundary = \"table\"", "transient.table"),
            ("Vm_scale = -1.0", "Vm_scale"),
            ("P = 0.0", "P"),
        ] {
            match parse_config(doc) {
                Err(ConfigError::Invalid { key: k, .. }) => assert_eq!(k, key, "{doc}"),
                other => panic!("{doc}: {other:?}"),
            }
        }
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut cfg = parse_config(
            "P = 3e-7\n[transient]\nt_end = 12.5\nboundary = \"table\"\ntable = [[0.0, 100.0], [5.0, 140.0]]",
        )
        .unwrap();
        cfg.sweep.profile_p = vec![1e-7];
        let back = parse_config(&cfg.to_toml()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(parse_config(&RunConfig::default().to_toml()).unwrap(), RunConfig::default());
    }

    #[test]
    fn eps_from_permeabilities() {
        let cfg = RunConfig::default();
        let eps = cfg.eps_list().unwrap();
        assert_eq!(eps.len(), 4);
        let k = cfg.model().unwrap().with_permeability(1e-2).unwrap().k();
        assert!((eps[3] * k - 1.0).abs() < 1e-14);
    }
}
