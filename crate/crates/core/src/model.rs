//! Physical parameters, derived coefficients, exchange fluxes and the
//! cubic Michaelis-Menten pump of the five-compartment model.
//!
//! Compartments: `u1`/`u2` are the descending/ascending lumens, `q1`/`q2`
//! the corresponding epithelial layers and `u0` the shared interstitium.
//! Everything is carried in SI units.

use std::f64::consts::PI;

use crate::error::{invalid, Error, Result};

/// Concentrations down to this much below zero are treated as roundoff and
/// clamped before the pump is evaluated.
pub const NEGATIVE_ROUNDOFF: f64 = 1e-14;

/// Tubule geometry and axial flow.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Geometry {
    /// Tubule length `L` [m].
    pub length: f64,
    /// Inner radius of the descending limb [m].
    pub r1: f64,
    /// Inner radius of the ascending limb [m].
    pub r2: f64,
    /// Outer (epithelium included) radius of the descending limb [m].
    pub r1e: f64,
    /// Outer (epithelium included) radius of the ascending limb [m].
    pub r2e: f64,
    /// Volumetric flow rate `alpha` [m^3/s].
    pub alpha: f64,
}

impl Geometry {
    pub fn new(length: f64, r1: f64, r2: f64, r1e: f64, r2e: f64, alpha: f64) -> Result<Self> {
        for (name, v) in [("L", length), ("r1", r1), ("r2", r2), ("r1e", r1e), ("r2e", r2e), ("alpha", alpha)] {
            positive(name, v)?;
        }
        if r1e <= r1 {
            return Err(invalid("r1e", format!("must exceed r1 = {r1:e} (epithelium thickness, a3 > 0)")));
        }
        if r2e <= r2 {
            return Err(invalid("r2e", format!("must exceed r2 = {r2:e} (epithelium thickness, a4 > 0)")));
        }
        Ok(Self { length, r1, r2, r1e, r2e, alpha })
    }

    /// Reference geometry: L = 2 mm, radii 10 µm / 15 µm, flow 1e-13 m^3/s.
    pub fn reference() -> Self {
        Self { length: 2e-3, r1: 1e-5, r2: 1e-5, r1e: 1.5e-5, r2e: 1.5e-5, alpha: 1e-13 }
    }
}

/// Membrane permeabilities [m/s].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Permeabilities {
    /// Lumen/epithelium, descending limb.
    pub p1: f64,
    /// Lumen/epithelium, ascending limb.
    pub p2: f64,
    /// Epithelium/interstitium, descending limb.
    pub p1e: f64,
}

impl Permeabilities {
    /// One luminal permeability `p` for the descending limb; the ascending
    /// limb value is chosen so both limbs share the exchange coefficient
    /// `2π r1 p1 = 2π r2 p2`.
    pub fn matched(p: f64, p1e: f64, geometry: &Geometry) -> Result<Self> {
        nonnegative("P", p)?;
        positive("P1e", p1e)?;
        Ok(Self { p1: p, p2: p * geometry.r1 / geometry.r2, p1e })
    }

    /// Explicit limb permeabilities; rejected unless they give equal
    /// lumen/epithelium exchange coefficients in both limbs.
    pub fn new(p1: f64, p2: f64, p1e: f64, geometry: &Geometry) -> Result<Self> {
        nonnegative("P1", p1)?;
        nonnegative("P2", p2)?;
        positive("P1e", p1e)?;
        let (k1, k2) = (geometry.r1 * p1, geometry.r2 * p2);
        if (k1 - k2).abs() > 1e-12 * k1.abs().max(k2.abs()) {
            return Err(invalid("P2", "r1*P1 and r2*P2 must agree (single exchange coefficient k)"));
        }
        Ok(Self { p1, p2, p1e })
    }
}

/// Basolateral Na+/K+-ATPase: `G(q) = vm2 * (q / (km2 + q))^3`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PumpParams {
    /// Saturated pump flux with the perimeter `2π r2e` folded in [mol/(m s)].
    pub vm2: f64,
    /// Half-activation concentration [mol/m^3].
    pub km2: f64,
}

impl PumpParams {
    pub fn new(vm2: f64, km2: f64) -> Result<Self> {
        nonnegative("Vm2", vm2)?;
        positive("KM2", km2)?;
        Ok(Self { vm2, km2 })
    }

    /// `vm2 = 2π r2e * scale`, with `scale` the per-area maximal rate.
    pub fn from_scale(scale: f64, km2: f64, geometry: &Geometry) -> Result<Self> {
        nonnegative("Vm_scale", scale)?;
        Self::new(2.0 * PI * geometry.r2e * scale, km2)
    }

    /// Pump flux; negative arguments are treated as zero.
    #[inline]
    pub fn rate(&self, q: f64) -> f64 {
        let q = q.max(0.0);
        let s = q / (self.km2 + q);
        self.vm2 * s * s * s
    }

    /// `G'(q)`; negative arguments are treated as zero.
    #[inline]
    pub fn derivative(&self, q: f64) -> f64 {
        let q = q.max(0.0);
        let d = self.km2 + q;
        3.0 * self.vm2 * self.km2 * q * q / (d * d * d * d)
    }

    /// `(q / (km2 + q))^3`, the sensitivity of `G` to `vm2`.
    #[inline]
    pub fn saturation_cubed(&self, q: f64) -> f64 {
        let q = q.max(0.0);
        let s = q / (self.km2 + q);
        s * s * s
    }

    /// `sup G' = 3 vm2 / (16 km2)`, attained at `q = km2`.
    pub fn lipschitz_bound(&self) -> f64 {
        3.0 * self.vm2 / (16.0 * self.km2)
    }
}

/// Coefficients derived from the geometry and permeabilities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Coefficients {
    /// Interstitial area `π (r1e² + r2e²) / 2`.
    pub a0: f64,
    /// Descending lumen area `π r1²`.
    pub a1: f64,
    /// Ascending lumen area `π r2²`.
    pub a2: f64,
    /// Descending epithelium area `π (r1e² - r1²)`.
    pub a3: f64,
    /// Ascending epithelium area `π (r2e² - r2²)`.
    pub a4: f64,
    /// Lumen/epithelium exchange `k = 2π r1 P1` [m^2/s].
    pub k: f64,
    /// Epithelium/interstitium exchange `K1 = 2π r1e P1e` [m^2/s].
    pub k1: f64,
}

impl Coefficients {
    pub fn areas(&self) -> [f64; 5] {
        [self.a1, self.a2, self.a3, self.a4, self.a0]
    }

    pub fn max_area(&self) -> f64 {
        self.areas().into_iter().fold(0.0, f64::max)
    }

    pub fn min_area(&self) -> f64 {
        self.areas().into_iter().fold(f64::INFINITY, f64::min)
    }
}

/// Fully validated model parameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelParams {
    pub geometry: Geometry,
    pub perms: Permeabilities,
    pub pump: PumpParams,
    /// Limiting inflow concentration `ū_b` [mol/m^3].
    pub ub_bar: f64,
    coefficients: Coefficients,
}

impl ModelParams {
    pub fn new(geometry: Geometry, perms: Permeabilities, pump: PumpParams, ub_bar: f64) -> Result<Self> {
        positive("ub_bar", ub_bar)?;
        let g = Geometry::new(geometry.length, geometry.r1, geometry.r2, geometry.r1e, geometry.r2e, geometry.alpha)?;
        let perms = Permeabilities::new(perms.p1, perms.p2, perms.p1e, &g)?;
        let pump = PumpParams::new(pump.vm2, pump.km2)?;
        let coefficients = Coefficients {
            a0: PI * (g.r1e * g.r1e + g.r2e * g.r2e) / 2.0,
            a1: PI * g.r1 * g.r1,
            a2: PI * g.r2 * g.r2,
            a3: PI * (g.r1e * g.r1e - g.r1 * g.r1),
            a4: PI * (g.r2e * g.r2e - g.r2 * g.r2),
            k: 2.0 * PI * g.r1 * perms.p1,
            k1: 2.0 * PI * g.r1e * perms.p1e,
        };
        Ok(Self { geometry: g, perms, pump, ub_bar, coefficients })
    }

    /// Reference parameter set: [`Geometry::reference`], `P = 2e-7` m/s,
    /// `K1 = 2π·1e-11` m²/s, `Vm2 = 2π r2e · 1e-5`, `KM2 = 3.5`, `ū_b = 140`.
    pub fn reference() -> Self {
        let g = Geometry::reference();
        let perms = Permeabilities::matched(DEFAULT_PERMEABILITY, DEFAULT_P1E, &g).expect("reference permeabilities");
        let pump = PumpParams::from_scale(DEFAULT_VM_SCALE, DEFAULT_KM2, &g).expect("reference pump");
        Self::new(g, perms, pump, DEFAULT_UB_BAR).expect("reference parameters")
    }

    pub fn coefficients(&self) -> &Coefficients {
        &self.coefficients
    }

    /// Lumen/epithelium exchange coefficient `k`.
    pub fn k(&self) -> f64 {
        self.coefficients.k
    }

    /// Epithelium/interstitium exchange coefficient `K1`.
    pub fn k1(&self) -> f64 {
        self.coefficients.k1
    }

    pub fn alpha(&self) -> f64 {
        self.geometry.alpha
    }

    pub fn length(&self) -> f64 {
        self.geometry.length
    }

    /// Same model with luminal permeability `p` in the descending limb.
    pub fn with_permeability(&self, p: f64) -> Result<Self> {
        let perms = Permeabilities::matched(p, self.perms.p1e, &self.geometry)?;
        Self::new(self.geometry, perms, self.pump, self.ub_bar)
    }

    /// Same model with exchange coefficient `k` imposed directly.
    pub fn with_exchange(&self, k: f64) -> Result<Self> {
        positive("k", k)?;
        self.with_permeability(k / (2.0 * PI * self.geometry.r1))
    }

    /// Same model with `Vm2 = 2π r2e · scale`.
    pub fn with_pump_scale(&self, scale: f64) -> Result<Self> {
        let pump = PumpParams::from_scale(scale, self.pump.km2, &self.geometry)?;
        Self::new(self.geometry, self.perms, pump, self.ub_bar)
    }

    pub fn with_pump(&self, pump: PumpParams) -> Result<Self> {
        Self::new(self.geometry, self.perms, pump, self.ub_bar)
    }

    pub fn with_ub_bar(&self, ub_bar: f64) -> Result<Self> {
        Self::new(self.geometry, self.perms, self.pump, ub_bar)
    }
}

pub const DEFAULT_PERMEABILITY: f64 = 2e-7;
pub const DEFAULT_P1E: f64 = 1e-11 / 1.5e-5;
pub const DEFAULT_VM_SCALE: f64 = 1e-5;
pub const DEFAULT_KM2: f64 = 3.5;
pub const DEFAULT_UB_BAR: f64 = 140.0;

/// Concentrations of the five compartments at one point.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Compartments {
    pub u1: f64,
    pub u2: f64,
    pub q1: f64,
    pub q2: f64,
    pub u0: f64,
}

impl Compartments {
    pub fn uniform(c: f64) -> Self {
        Self { u1: c, u2: c, q1: c, q2: c, u0: c }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.u1, self.u2, self.q1, self.q2, self.u0]
    }
}

/// Exchange fluxes into each compartment [mol/(m s)].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Fluxes {
    pub j1: f64,
    pub j2: f64,
    pub j3: f64,
    pub j4: f64,
    pub j0: f64,
}

impl Fluxes {
    pub fn sum(&self) -> f64 {
        self.j1 + self.j2 + self.j3 + self.j4 + self.j0
    }

    pub fn max_abs(&self) -> f64 {
        [self.j1, self.j2, self.j3, self.j4, self.j0].into_iter().fold(0.0, |m, v| m.max(v.abs()))
    }
}

/// Checks a concentration, absorbing roundoff-level negatives.
pub fn admissible(quantity: &'static str, c: f64) -> Result<f64> {
    if !c.is_finite() {
        return Err(Error::Domain { quantity, value: c, reason: "not finite" });
    }
    if c < -NEGATIVE_ROUNDOFF {
        return Err(Error::Domain { quantity, value: c, reason: "concentration must be nonnegative" });
    }
    Ok(c.max(0.0))
}

/// `G(q2)`.
pub fn pump_rate(q2: f64, pump: &PumpParams) -> Result<f64> {
    Ok(pump.rate(admissible("q2", q2)?))
}

/// `G'(q2) = 3 vm2 km2 q2² / (km2 + q2)^4`.
pub fn pump_derivative(q2: f64, pump: &PumpParams) -> Result<f64> {
    Ok(pump.derivative(admissible("q2", q2)?))
}

/// `‖G'‖∞ = 3 vm2 / (16 km2)`.
pub fn lipschitz_bound_g(pump: &PumpParams) -> f64 {
    pump.lipschitz_bound()
}

/// Exchange fluxes `J1..J4, J0` at one point.
pub fn fluxes(state: &Compartments, params: &ModelParams) -> Result<Fluxes> {
    let s = Compartments {
        u1: admissible("u1", state.u1)?,
        u2: admissible("u2", state.u2)?,
        q1: admissible("q1", state.q1)?,
        q2: admissible("q2", state.q2)?,
        u0: admissible("u0", state.u0)?,
    };
    Ok(fluxes_unchecked(&s, params))
}

#[inline]
pub(crate) fn fluxes_unchecked(s: &Compartments, params: &ModelParams) -> Fluxes {
    let c = params.coefficients();
    let g = params.pump.rate(s.q2);
    let lumen1 = c.k * (s.q1 - s.u1);
    let lumen2 = c.k * (s.q2 - s.u2);
    let baso = c.k1 * (s.u0 - s.q1);
    Fluxes { j1: lumen1, j2: lumen2, j3: -lumen1 + baso, j4: -lumen2 - g, j0: -baso + g }
}

/// Range of the reduced steady equation's denominator `α (1 + G'(q)/k)`
/// over a profile; `condition` is the max/min ratio.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DenominatorDiagnostics {
    pub min: f64,
    pub max: f64,
    pub condition: f64,
}

pub fn denominator_conditioning(q2: &[f64], params: &ModelParams) -> DenominatorDiagnostics {
    let (mut lo, mut hi) = (f64::INFINITY, 0.0f64);
    for &q in q2 {
        let d = params.alpha() * (1.0 + params.pump.derivative(q) / params.k());
        lo = lo.min(d);
        hi = hi.max(d);
    }
    DenominatorDiagnostics { min: lo, max: hi, condition: hi / lo }
}

fn positive(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v > 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and > 0, got {v}")))
    }
}

fn nonnegative(name: &'static str, v: f64) -> Result<()> {
    if v.is_finite() && v >= 0.0 {
        Ok(())
    } else {
        Err(invalid(name, format!("must be finite and >= 0, got {v}")))
    }
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

    #[test]
    fn pump_values() {
        let p = ModelParams::reference().pump;
        assert_eq!(pump_rate(0.0, &p).unwrap(), 0.0);
        assert!(rel(pump_rate(3.5, &p).unwrap(), p.vm2 / 8.0) < 1e-15);
        let big = pump_rate(1e9, &p).unwrap();
        assert!(big < p.vm2 && rel(big, p.vm2) < 1e-7);
        assert!(pump_rate(-1e-3, &p).is_err());
        assert_eq!(pump_rate(-1e-15, &p).unwrap(), 0.0);
    }

    #[test]
    fn pump_derivative_matches_central_differences() {
        let p = ModelParams::reference().pump;
        for q in [0.1, 1.0, 3.5, 10.0, 74.6, 140.0, 500.0] {
            let h = 1e-5 * q;
            let fd = (p.rate(q + h) - p.rate(q - h)) / (2.0 * h);
            let an = pump_derivative(q, &p).unwrap();
            assert!(rel(an, fd) < 1e-6, "q={q}: {an} vs {fd}");
        }
        assert_eq!(pump_derivative(0.0, &p).unwrap(), 0.0);
        assert!(pump_derivative(-1.0, &p).is_err());
    }

    #[test]
    fn derivative_peaks_at_affinity() {
        // dG'/dq = 0 gives 2 km2 - 2q = 0, i.e. q = km2, with value 3 vm2 / (16 km2).
        let p = ModelParams::reference().pump;
        let (mut best_q, mut best) = (0.0, 0.0);
        for i in 0..=200_000 {
            let q = i as f64 * 1e-4;
            let d = p.derivative(q);
            if d > best {
                best = d;
                best_q = q;
            }
        }
        assert!((best_q - 3.5).abs() < 2e-4, "argmax {best_q}");
        assert!(rel(best, 3.0 * p.vm2 / (16.0 * 3.5)) < 1e-9);
    }

    #[test]
    fn lipschitz_bound_values() {
        let zero = PumpParams::new(0.0, 3.5).unwrap();
        assert_eq!(lipschitz_bound_g(&zero), 0.0);
        let vm2 = 2.0 * PI * 1.5e-5 * 1e-5;
        let p = PumpParams::new(vm2, 3.5).unwrap();
        assert!(rel(lipschitz_bound_g(&p), 3.0 * vm2 / (16.0 * 3.5)) < 1e-15);
        let sampled = (0..10_000).map(|i| p.derivative(i as f64 * 0.05)).fold(0.0, f64::max);
        assert!(lipschitz_bound_g(&p) * (1.0 + 1e-12) >= sampled);
    }

    #[test]
    fn reference_areas() {
        let c = *ModelParams::reference().coefficients();
        assert!(rel(c.a1, PI * 1e-10) < 1e-14);
        assert!(rel(c.a3, PI * 1.25e-10) < 1e-14);
        assert!(rel(c.a0, PI * 2.25e-10) < 1e-14);
        assert!(rel(c.k1, 2.0 * PI * 1e-11) < 1e-14);
        assert!(rel(c.k, 2.0 * PI * 1e-5 * 2e-7) < 1e-14);
        assert_eq!(c.max_area(), c.a0);
    }

    #[test]
    fn construction_enforces_single_exchange_coefficient() {
        let g = Geometry::new(2e-3, 1e-5, 2e-5, 1.5e-5, 3e-5, 1e-13).unwrap();
        let p = Permeabilities::matched(2e-7, 1e-6, &g).unwrap();
        assert!(rel(g.r1 * p.p1, g.r2 * p.p2) < 1e-15);
        assert!(Permeabilities::new(2e-7, 2e-7, 1e-6, &g).is_err());
    }

    #[test]
    fn geometry_rejects_thin_epithelium() {
        let err = Geometry::new(2e-3, 1e-5, 1e-5, 5e-6, 1.5e-5, 1e-13).unwrap_err();
        assert!(err.to_string().contains("r1e"));
        assert!(Geometry::new(2e-3, 1e-5, 1e-5, 1.5e-5, 1e-5, 1e-13).is_err());
        assert!(Geometry::new(-1.0, 1e-5, 1e-5, 1.5e-5, 1.5e-5, 1e-13).is_err());
    }

    #[test]
    fn equal_state_without_pump_has_zero_flux() {
        let m = ModelParams::reference().with_pump_scale(0.0).unwrap();
        let f = fluxes(&Compartments::uniform(140.0), &m).unwrap();
        assert_eq!(f.max_abs(), 0.0);
    }

    #[test]
    fn interstitial_excess_signs() {
        let m = ModelParams::reference().with_pump_scale(0.0).unwrap();
        let s = Compartments { u0: 150.0, ..Compartments::uniform(140.0) };
        let f = fluxes(&s, &m).unwrap();
        assert!(f.j3 > 0.0 && f.j0 < 0.0);
        assert!(rel(f.j3, m.k1() * 10.0) < 1e-14);
        assert_eq!(f.j1, 0.0);
    }

    #[test]
    fn flux_conservation_at_a_million_states() {
        let m = ModelParams::reference();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..1_000_000 {
            let s = Compartments {
                u1: rng.gen_range(0.0..400.0),
                u2: rng.gen_range(0.0..400.0),
                q1: rng.gen_range(0.0..400.0),
                q2: rng.gen_range(0.0..400.0),
                u0: rng.gen_range(0.0..400.0),
            };
            let f = fluxes(&s, &m).unwrap();
            assert!(f.sum().abs() <= 1e-12 * f.max_abs().max(f64::MIN_POSITIVE));
        }
    }

    #[test]
    fn conditioning_diagnostic() {
        let m = ModelParams::reference();
        let d = denominator_conditioning(&[1.0, 3.5, 80.0], &m);
        assert!(d.min >= m.alpha() && d.condition >= 1.0);
        let expected = m.alpha() * (1.0 + m.pump.lipschitz_bound() / m.k());
        assert!(rel(d.max, expected) < 1e-14);
    }

    proptest! {
        #[test]
        fn pump_is_monotone_and_bounded(a in 0.0f64..1e4, b in 0.0f64..1e4, vs in 0.0f64..1e-3) {
            let g = Geometry::reference();
            let p = PumpParams::from_scale(vs, 3.5, &g).unwrap();
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            prop_assert!(p.rate(lo) <= p.rate(hi));
            prop_assert!(p.rate(hi) <= p.vm2);
            prop_assert!(p.derivative(a) >= 0.0);
            prop_assert!(p.derivative(a) <= p.lipschitz_bound() * (1.0 + 1e-12));
        }
    }
}
