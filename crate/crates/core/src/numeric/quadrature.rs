use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Axis-aligned rectangle `[x_lo, x_hi] × [y_lo, y_hi]`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Box2 {
    pub x_lo: f64,
    pub x_hi: f64,
    pub y_lo: f64,
    pub y_hi: f64,
}

impl Box2 {
    pub fn square(half_width: f64) -> Self {
        Self {
            x_lo: -half_width,
            x_hi: half_width,
            y_lo: -half_width,
            y_hi: half_width,
        }
    }

    pub fn area(&self) -> f64 {
        (self.x_hi - self.x_lo) * (self.y_hi - self.y_lo)
    }
}

/// Default integration box for all 8-Gaussians work.
pub const MIXTURE_BOX: Box2 = Box2 {
    x_lo: -6.0,
    x_hi: 6.0,
    y_lo: -6.0,
    y_hi: 6.0,
};
pub const MIXTURE_RESOLUTION: usize = 512;

/// Uniform grid of cell midpoints over a box.
#[derive(Clone, Debug)]
pub struct MidpointGrid {
    pub bounds: Box2,
    pub resolution: usize,
    pub xs: Vec<f64>,
    pub ys: Vec<f64>,
    pub cell_area: f64,
}

impl MidpointGrid {
    pub fn new(bounds: Box2, resolution: usize) -> Result<Self> {
        if resolution < 64 {
            return Err(Error::InvalidArgument(format!(
                "quadrature resolution must be at least 64, got {resolution}"
            )));
        }
        if !(bounds.x_hi > bounds.x_lo && bounds.y_hi > bounds.y_lo) {
            return Err(Error::InvalidArgument("empty quadrature box".into()));
        }
        let hx = (bounds.x_hi - bounds.x_lo) / resolution as f64;
        let hy = (bounds.y_hi - bounds.y_lo) / resolution as f64;
        let xs = (0..resolution)
            .map(|i| bounds.x_lo + (i as f64 + 0.5) * hx)
            .collect();
        let ys = (0..resolution)
            .map(|j| bounds.y_lo + (j as f64 + 0.5) * hy)
            .collect();
        Ok(Self {
            bounds,
            resolution,
            xs,
            ys,
            cell_area: hx * hy,
        })
    }

    pub fn dx(&self) -> f64 {
        (self.bounds.x_hi - self.bounds.x_lo) / self.resolution as f64
    }

    pub fn dy(&self) -> f64 {
        (self.bounds.y_hi - self.bounds.y_lo) / self.resolution as f64
    }

    /// Evaluates `f` at every midpoint, x-major (`values[i * res + j]` is `(xs[i], ys[j])`).
    pub fn evaluate(&self, f: impl Fn(&[f64]) -> f64) -> Result<Vec<f64>> {
        let mut out = Vec::with_capacity(self.resolution * self.resolution);
        for &x in &self.xs {
            for &y in &self.ys {
                let v = f(&[x, y]);
                if !v.is_finite() {
                    return Err(Error::NumericDomain(format!(
                        "integrand is {v} at ({x}, {y})"
                    )));
                }
                out.push(v);
            }
        }
        Ok(out)
    }
}

/// Midpoint-rule integral of a non-negative density over a box.
pub fn grid_quadrature_2d(
    f: impl Fn(&[f64]) -> f64,
    bounds: Box2,
    resolution: usize,
) -> Result<f64> {
    let grid = MidpointGrid::new(bounds, resolution)?;
    let values = grid.evaluate(f)?;
    Ok(values.iter().sum::<f64>() * grid.cell_area)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    #[test]
    fn standard_gaussian_normalizes() {
        let f = |x: &[f64]| (-(x[0] * x[0] + x[1] * x[1]) / 2.0).exp() / (2.0 * PI);
        let z = grid_quadrature_2d(f, Box2::square(8.0), 512).unwrap();
        assert!((z - 1.0).abs() < 1e-6, "{z}");
    }

    #[test]
    fn unit_square() {
        let b = Box2 {
            x_lo: 0.0,
            x_hi: 1.0,
            y_lo: 0.0,
            y_hi: 1.0,
        };
        let z = grid_quadrature_2d(|_| 1.0, b, 64).unwrap();
        assert!((z - 1.0).abs() < 1e-12);
    }

    #[test]
    fn errors() {
        assert!(grid_quadrature_2d(|_| 1.0, Box2::square(1.0), 32).is_err());
        assert!(grid_quadrature_2d(|_| f64::INFINITY, Box2::square(1.0), 64).is_err());
    }
}
