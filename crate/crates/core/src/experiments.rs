//! Permeability and pump-rate sweeps of the stationary concentration gain.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::error::{invalid, Error, Result};
use crate::grid::Grid1D;
use crate::model::ModelParams;
use crate::output::write_csv;
use crate::steady::{solve_steady, SteadyProfile, DEFAULT_STEADY_NODES};

/// How points are placed on a sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

/// `count` points from `lo` to `hi` inclusive.
pub fn axis(lo: f64, hi: f64, count: usize, spacing: Spacing) -> Result<Vec<f64>> {
    if !(lo > 0.0 && hi > lo && hi.is_finite()) {
        return Err(invalid("axis", format!("need 0 < lo < hi, got [{lo}, {hi}]")));
    }
    if count < 2 {
        return Err(invalid("axis", "needs at least 2 points"));
    }
    let last = (count - 1) as f64;
    Ok((0..count)
        .map(|i| match (i, spacing) {
            (0, _) => lo,
            (i, _) if i == count - 1 => hi,
            (i, Spacing::Linear) => lo + (hi - lo) * i as f64 / last,
            (i, Spacing::Log) => lo * (hi / lo).powf(i as f64 / last),
        })
        .collect())
}

/// Permeability range of the single-curve and grid sweeps [m/s].
pub const P_RANGE: (f64, f64) = (1e-8, 1e-5);
/// Pump scale range of the grid sweep.
pub const VM_RANGE: (f64, f64) = (1e-5, 1e-4);

/// Artifacts a sweep may write.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Output {
    Profiles,
    FicCurve,
    FicGrid,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub p_values: Vec<f64>,
    /// Pump scales; `Vm2 = 2π r2e · scale`.
    pub vm_values: Vec<f64>,
    pub grid: Grid1D,
    pub outputs: Vec<Output>,
}

fn check_axis(name: &'static str, v: &[f64]) -> Result<()> {
    if v.is_empty() {
        return Err(invalid(name, "must not be empty"));
    }
    if v.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
        return Err(invalid(name, "entries must be finite and > 0"));
    }
    if v.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid(name, "entries must be strictly ascending"));
    }
    Ok(())
}

impl SweepSpec {
    pub fn new(p_values: Vec<f64>, vm_values: Vec<f64>, grid: Grid1D, outputs: Vec<Output>) -> Result<Self> {
        check_axis("P_values", &p_values)?;
        check_axis("Vm_values", &vm_values)?;
        Ok(Self { p_values, vm_values, grid, outputs })
    }

    /// 50 linear P values over `[1e-8, 1e-5]` at the reference pump and a
    /// 20×20 grid axis pair.
    pub fn reference(length: f64) -> Result<Self> {
        Self::new(
            axis(P_RANGE.0, P_RANGE.1, 50, Spacing::Linear)?,
            axis(VM_RANGE.0, VM_RANGE.1, 20, Spacing::Linear)?,
            Grid1D::new(DEFAULT_STEADY_NODES, length)?,
            vec![Output::FicCurve, Output::FicGrid],
        )
    }
}

fn fic_at(base: &ModelParams, p: f64, vm: Option<f64>, grid: &Grid1D) -> Result<f64> {
    let mut m = base.with_permeability(p)?;
    if let Some(vm) = vm {
        m = m.with_pump_scale(vm)?;
    }
    solve_steady(&m, grid).map(|s| s.fic).map_err(|e| annotate(e, p))
}

fn annotate(e: Error, p: f64) -> Error {
    match e {
        Error::InvalidParameter { name, reason } => {
            Error::InvalidParameter { name, reason: format!("{reason} (at P = {p:e})") }
        }
        other => other,
    }
}

/// FIC for every `P` at the pump of `base`, in axis order.
pub fn run_fic_curve(spec: &SweepSpec, base: &ModelParams) -> Result<Vec<(f64, f64)>> {
    spec.p_values.par_iter().map(|&p| fic_at(base, p, None, &spec.grid).map(|f| (p, f))).collect()
}

/// FIC over the `P × Vm` grid.
#[derive(Debug, Clone, PartialEq)]
pub struct FicGrid {
    pub p_axis: Vec<f64>,
    pub vm_axis: Vec<f64>,
    /// `fic[i][j]` at `p_axis[i]`, `vm_axis[j]`.
    pub fic: Vec<Vec<f64>>,
}

/// A decrease between neighbouring grid entries.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Violation {
    /// `"P"` or `"Vm"`.
    pub axis: &'static str,
    pub i: usize,
    pub j: usize,
    pub drop: f64,
}

impl FicGrid {
    pub fn violations(&self) -> Vec<Violation> {
        let mut out = Vec::new();
        let (np, nv) = (self.p_axis.len(), self.vm_axis.len());
        for i in 0..np {
            for j in 0..nv {
                if i + 1 < np && self.fic[i + 1][j] < self.fic[i][j] {
                    out.push(Violation { axis: "P", i, j, drop: self.fic[i][j] - self.fic[i + 1][j] });
                }
                if j + 1 < nv && self.fic[i][j + 1] < self.fic[i][j] {
                    out.push(Violation { axis: "Vm", i, j, drop: self.fic[i][j] - self.fic[i][j + 1] });
                }
            }
        }
        out
    }

    pub fn min(&self) -> f64 {
        self.fic.iter().flatten().copied().fold(f64::INFINITY, f64::min)
    }

    /// Long-form CSV `P,Vm,FIC`.
    pub fn write_csv<W: Write>(&self, w: W) -> std::io::Result<()> {
        write_csv(
            w,
            &["P", "Vm", "FIC"],
            self.p_axis
                .iter()
                .enumerate()
                .flat_map(|(i, &p)| self.vm_axis.iter().enumerate().map(move |(j, &v)| vec![p, v, self.fic[i][j]])),
        )
    }
}

pub fn run_fic_grid(spec: &SweepSpec, base: &ModelParams) -> Result<FicGrid> {
    let nv = spec.vm_values.len();
    let flat: Vec<f64> = (0..spec.p_values.len() * nv)
        .into_par_iter()
        .map(|idx| fic_at(base, spec.p_values[idx / nv], Some(spec.vm_values[idx % nv]), &spec.grid))
        .collect::<Result<_>>()?;
    Ok(FicGrid {
        p_axis: spec.p_values.clone(),
        vm_axis: spec.vm_values.clone(),
        fic: flat.chunks(nv).map(<[f64]>::to_vec).collect(),
    })
}

pub fn write_fic_curve<W: Write>(curve: &[(f64, f64)], w: W) -> std::io::Result<()> {
    write_csv(w, &["P", "FIC"], curve.iter().map(|&(p, f)| vec![p, f]))
}

/// Largest relative spread `(max - min)/min` of the four profile curves over all nodes.
pub fn max_relative_spread(profile: &SteadyProfile) -> f64 {
    (0..profile.grid.len())
        .map(|i| {
            let v = [profile.u[i], profile.q1[i], profile.q2[i], profile.u0[i]];
            let lo = v.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            (hi - lo) / lo
        })
        .fold(0.0, f64::max)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 50.0;

/// Curves drawn by [`profile_svg`], top to bottom at equilibrium.
pub const SVG_SERIES: [(&str, &str); 4] = [("u0", "#2ca02c"), ("q1", "#d62728"), ("u", "#1f77b4"), ("q2", "#9467bd")];

/// Line plot of `ū, q̄1, q̄2, ū0` against `x` as plain SVG text.
pub fn profile_svg(profile: &SteadyProfile, title: &str) -> String {
    let series: [(&str, &str, &[f64]); 4] = [
        (SVG_SERIES[0].0, SVG_SERIES[0].1, &profile.u0),
        (SVG_SERIES[1].0, SVG_SERIES[1].1, &profile.q1),
        (SVG_SERIES[2].0, SVG_SERIES[2].1, &profile.u),
        (SVG_SERIES[3].0, SVG_SERIES[3].1, &profile.q2),
    ];
    let all = series.iter().flat_map(|s| s.2.iter().copied());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let len = profile.grid.length();
    let px = |x: f64| MARGIN + (SVG_W - 2.0 * MARGIN) * x / len;
    let py = |v: f64| SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * (v - lo) / span;
    let xs = profile.grid.points();
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {SVG_W} {SVG_H}\" width=\"{SVG_W}\" height=\"{SVG_H}\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"30\" font-family=\"sans-serif\" font-size=\"14\">{}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"{MARGIN}\" x2=\"{MARGIN}\" y2=\"{b}\" stroke=\"black\"/>\n\
         <text x=\"{MARGIN}\" y=\"{lab}\" font-family=\"sans-serif\" font-size=\"11\">x = 0</text>\n\
         <text x=\"{r}\" y=\"{lab}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">x = {len:e} m</text>\n\
         <text x=\"5\" y=\"{MARGIN}\" font-family=\"sans-serif\" font-size=\"11\">{hi:.2}</text>\n\
         <text x=\"5\" y=\"{b}\" font-family=\"sans-serif\" font-size=\"11\">{lo:.2}</text>\n",
        escape(title),
        b = SVG_H - MARGIN,
        r = SVG_W - MARGIN,
        lab = SVG_H - MARGIN + 18.0,
    );
    for (k, (name, color, values)) in series.iter().enumerate() {
        let pts: Vec<String> =
            xs.iter().zip(values.iter()).map(|(x, v)| format!("{:.2},{:.2}", px(*x), py(*v))).collect();
        out.push_str(&format!(
            "<polyline id=\"{name}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" fill=\"{color}\">{name}</text>\n",
            SVG_W - MARGIN + 5.0,
            MARGIN + 15.0 * k as f64
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Solves and writes `profile_<tag>.csv` and `profile_<tag>.svg` for each
/// `(tag, params)` entry. Returns the written paths.
pub fn emit_profiles(entries: &[(String, ModelParams)], grid: &Grid1D, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    if entries.is_empty() {
        return Ok(written);
    }
    fs::create_dir_all(dir)?;
    for (tag, params) in entries {
        let profile = solve_steady(params, grid)?;
        let csv = dir.join(format!("profile_{tag}.csv"));
        profile.write_csv(std::io::BufWriter::new(fs::File::create(&csv)?))?;
        let svg = dir.join(format!("profile_{tag}.svg"));
        fs::write(&svg, profile_svg(&profile, &format!("{tag}: FIC = {:.3} %", profile.fic)))?;
        written.push(csv);
        written.push(svg);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(np: usize, nv: usize) -> SweepSpec {
        SweepSpec::new(
            axis(1e-8, 1e-5, np, Spacing::Log).unwrap(),
            axis(1e-5, 1e-4, nv, Spacing::Linear).unwrap(),
            Grid1D::new(501, 2e-3).unwrap(),
            vec![],
        )
        .unwrap()
    }

    #[test]
    fn axes() {
        let a = axis(1.0, 3.0, 3, Spacing::Linear).unwrap();
        assert_eq!(a, vec![1.0, 2.0, 3.0]);
        let l = axis(1e-8, 1e-5, 4, Spacing::Log).unwrap();
        assert_eq!(l[0], 1e-8);
        assert_eq!(l[3], 1e-5);
        assert!((l[1] / 1e-7 - 1.0).abs() < 1e-12);
        assert!(axis(0.0, 1.0, 3, Spacing::Log).is_err());
        assert!(axis(1.0, 2.0, 1, Spacing::Linear).is_err());
        let r = SweepSpec::reference(2e-3).unwrap();
        assert_eq!(r.p_values.len(), 50);
        assert_eq!(r.p_values[49], 1e-5);
    }

    #[test]
    fn spec_validation() {
        let g = Grid1D::new(11, 1.0).unwrap();
        assert!(SweepSpec::new(vec![], vec![1.0], g, vec![]).is_err());
        assert!(SweepSpec::new(vec![2.0, 1.0], vec![1.0], g, vec![]).is_err());
        assert!(SweepSpec::new(vec![1.0], vec![-1.0], g, vec![]).is_err());
    }

    #[test]
    fn curve_is_monotone_and_flattens() {
        let spec = small_spec(25, 2);
        let curve = run_fic_curve(&spec, &ModelParams::reference()).unwrap();
        assert!(curve.windows(2).all(|w| w[1].1 >= w[0].1));
        let first_step = curve[1].1 - curve[0].1;
        let last_step = curve[24].1 - curve[23].1;
        assert!(last_step < 0.1 * first_step);
    }

    #[test]
    fn grid_is_doubly_monotone_and_deterministic() {
        let spec = small_spec(6, 5);
        let base = ModelParams::reference();
        let g = run_fic_grid(&spec, &base).unwrap();
        assert!(g.violations().is_empty());
        assert_eq!(g.min(), g.fic[0][0]);
        assert_eq!(g, run_fic_grid(&spec, &base).unwrap());
        let direct = fic_at(&base, spec.p_values[3], Some(spec.vm_values[2]), &spec.grid).unwrap();
        assert_eq!(g.fic[3][2], direct);
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("P,Vm,FIC\n"));
        assert_eq!(text.lines().count(), 31);
    }

    #[test]
    fn violations_are_reported() {
        let g = FicGrid { p_axis: vec![1.0, 2.0], vm_axis: vec![1.0, 2.0], fic: vec![vec![1.0, 0.5], vec![0.9, 2.0]] };
        let v = g.violations();
        assert_eq!(v.len(), 2);
        assert!(v.iter().any(|x| x.axis == "P" && x.i == 0 && x.j == 0));
        assert!(v.iter().any(|x| x.axis == "Vm" && x.i == 0 && x.j == 0));
    }

    #[test]
    fn profiles_order_and_homogenize() {
        let g = Grid1D::new(401, 2e-3).unwrap();
        let base = ModelParams::reference();
        let low = solve_steady(&base.with_permeability(2e-7).unwrap(), &g).unwrap();
        let high = solve_steady(&base.with_permeability(2e-5).unwrap(), &g).unwrap();
        assert!(low.ordering_margin() > 0.0);
        assert!(max_relative_spread(&high) < max_relative_spread(&low));
        let svg = profile_svg(&low, "a < b");
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 4);
        assert!(svg.contains("a &lt; b"));
        // u0 is drawn highest: smallest y coordinate at mid-length
        let mid_y = |id: &str| -> f64 {
            let start = svg.find(&format!("id=\"{id}\"")).unwrap();
            let pts = &svg[start..];
            let pts = &pts[pts.find("points=\"").unwrap() + 8..];
            let pts = &pts[..pts.find('"').unwrap()];
            pts.split(' ').nth(200).unwrap().split(',').nth(1).unwrap().parse().unwrap()
        };
        assert!(mid_y("u0") < mid_y("q1") && mid_y("q1") < mid_y("u") && mid_y("u") < mid_y("q2"));
    }

    #[test]
    fn emit_writes_files() {
        let dir = tempfile::tempdir().unwrap();
        let g = Grid1D::new(51, 2e-3).unwrap();
        assert!(emit_profiles(&[], &g, &dir.path().join("none")).unwrap().is_empty());
        assert!(!dir.path().join("none").exists());
        let entries = vec![("p2e-7".to_string(), ModelParams::reference())];
        let files = emit_profiles(&entries, &g, dir.path()).unwrap();
        assert_eq!(files.len(), 2);
        let csv = std::fs::read_to_string(dir.path().join("profile_p2e-7.csv")).unwrap();
        assert!(csv.starts_with("x,u,q1,q2,u0\n"));
        assert!(dir.path().join("profile_p2e-7.svg").exists());
    }
}
