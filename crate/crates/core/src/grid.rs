//! Uniform node grids on `[0, L]` and the quadratures used on them.

use crate::error::{invalid, Result};

/// `n` uniformly spaced nodes with `x[0] = 0` and `x[n-1] = length`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n: usize,
    length: f64,
}

impl Grid1D {
    pub fn new(n: usize, length: f64) -> Result<Self> {
        if n < 2 {
            return Err(invalid("grid_n", format!("need at least 2 nodes, got {n}")));
        }
        if !(length.is_finite() && length > 0.0) {
            return Err(invalid("L", format!("grid length must be positive, got {length}")));
        }
        Ok(Self { n, length })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn length(&self) -> f64 {
        self.length
    }

    pub fn spacing(&self) -> f64 {
        self.length / (self.n - 1) as f64
    }

    /// Node `i`; the last node is exactly `length`.
    pub fn x(&self, i: usize) -> f64 {
        if i + 1 == self.n {
            self.length
        } else {
            i as f64 * self.spacing()
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| self.x(i)).collect()
    }

    /// Same node count on a different interval.
    pub fn rescaled(&self, length: f64) -> Result<Self> {
        Self::new(self.n, length)
    }

    /// Grid with every interval halved (`2n - 1` nodes).
    pub fn refined(&self) -> Self {
        Self { n: 2 * self.n - 1, length: self.length }
    }

    /// Control-volume widths: `h/2` at both ends, `h` inside.
    pub fn cell_widths(&self) -> Vec<f64> {
        let h = self.spacing();
        let mut w = vec![h; self.n];
        w[0] = 0.5 * h;
        w[self.n - 1] = 0.5 * h;
        w
    }

    /// Composite Simpson rule. An odd number of intervals closes with the
    /// 3/8 rule on the last three; two nodes fall back to the trapezoid.
    pub fn integrate(&self, f: &[f64]) -> f64 {
        assert_eq!(f.len(), self.n, "sample count must match the grid");
        let h = self.spacing();
        let intervals = self.n - 1;
        match intervals {
            1 => 0.5 * h * (f[0] + f[1]),
            3 => three_eighths(h, &f[0..4]),
            m if m % 2 == 0 => simpson(h, f),
            m => simpson(h, &f[..m - 2]) + three_eighths(h, &f[m - 3..]),
        }
    }
}

fn simpson(h: f64, f: &[f64]) -> f64 {
    let m = f.len() - 1;
    debug_assert!(m.is_multiple_of(2));
    let mut acc = f[0] + f[m];
    for (i, v) in f.iter().enumerate().take(m).skip(1) {
        acc += if i % 2 == 1 { 4.0 * v } else { 2.0 * v };
    }
    acc * h / 3.0
}

fn three_eighths(h: f64, f: &[f64]) -> f64 {
    3.0 * h / 8.0 * (f[0] + 3.0 * f[1] + 3.0 * f[2] + f[3])
}

/// First derivative of uniformly sampled data, fourth order everywhere
/// (central inside, one-sided five-point stencils at the two ends on each side).
pub fn derivative4(f: &[f64], h: f64) -> Vec<f64> {
    let n = f.len();
    assert!(n >= 5, "fourth-order differences need at least 5 samples");
    let mut d = vec![0.0; n];
    let fwd = |s: &[f64]| (-25.0 * s[0] + 48.0 * s[1] - 36.0 * s[2] + 16.0 * s[3] - 3.0 * s[4]) / (12.0 * h);
    let fwd1 = |s: &[f64]| (-3.0 * s[0] - 10.0 * s[1] + 18.0 * s[2] - 6.0 * s[3] + s[4]) / (12.0 * h);
    d[0] = fwd(&f[0..5]);
    d[1] = fwd1(&f[0..5]);
    for i in 2..n - 2 {
        d[i] = (f[i - 2] - 8.0 * f[i - 1] + 8.0 * f[i + 1] - f[i + 2]) / (12.0 * h);
    }
    let rev: Vec<f64> = f[n - 5..].iter().rev().copied().collect();
    d[n - 1] = -fwd(&rev);
    d[n - 2] = -fwd1(&rev);
    d
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn endpoints_are_exact() {
        let g = Grid1D::new(7, 2e-3).unwrap();
        assert_eq!(g.x(0), 0.0);
        assert_eq!(g.x(6), 2e-3);
        assert!((g.spacing() - 2e-3 / 6.0).abs() < 1e-20);
    }

    #[test]
    fn rejects_degenerate_grids() {
        assert!(Grid1D::new(1, 1.0).is_err());
        assert!(Grid1D::new(3, 0.0).is_err());
        assert!(Grid1D::new(3, f64::NAN).is_err());
    }

    #[test]
    fn quadrature_is_exact_for_cubics() {
        for n in [2usize, 3, 4, 5, 6, 9, 10] {
            let g = Grid1D::new(n, 3.0).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| 2.0 * x * x * x - x + 1.0).collect();
            let exact = 2.0 * 81.0 / 4.0 - 4.5 + 3.0;
            let got = g.integrate(&f);
            if n >= 3 {
                assert!((got - exact).abs() < 1e-12, "n={n}: {got} vs {exact}");
            }
        }
    }

    #[test]
    fn simpson_refinement_order() {
        let exact = 1.0 - (-2.0f64).exp();
        let err = |n| {
            let g = Grid1D::new(n, 2.0).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| (-x).exp()).collect();
            (g.integrate(&f) - exact).abs()
        };
        let ratio = err(11) / err(21);
        assert!(ratio > 14.0 && ratio < 18.0, "ratio {ratio}");
    }

    #[test]
    fn cell_widths_sum_to_length() {
        let g = Grid1D::new(11, 5.0).unwrap();
        let s: f64 = g.cell_widths().iter().sum();
        assert!((s - 5.0).abs() < 1e-14);
    }

    #[test]
    fn fourth_order_derivative() {
        let err = |n: usize| {
            let g = Grid1D::new(n, 1.0).unwrap();
            let f: Vec<f64> = g.points().iter().map(|x| (3.0 * x).sin()).collect();
            let d = derivative4(&f, g.spacing());
            g.points().iter().zip(&d).map(|(x, di)| (di - 3.0 * (3.0 * x).cos()).abs()).fold(0.0, f64::max)
        };
        assert!(err(41) < 1e-4);
        let ratio = err(41) / err(81);
        assert!(ratio > 14.0, "ratio {ratio}");
    }
}
