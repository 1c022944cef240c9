//! Lorentz (hyperboloid) model of hyperbolic space with curvature fixed at -1.
//!
//! Points are stored in ambient coordinates `(x0, x1, ..., xd)`: `x0` is the
//! time component and the rest are space components. Every point satisfies
//! `<x, x>_L = -1` and `x0 >= 1`.
//!
//! The typed API ([`LorentzPoint`], [`TangentVector`]) validates its inputs.
//! The [`ambient`] submodule exposes the same primitives on raw slices for the
//! scoring and optimizer hot loops.

use crate::error::{Error, Result};

/// Threshold below which `alpha -> 0` and `beta -> 1` use their limit values.
pub const SINGULAR_EPS: f64 = 1e-12;

/// Tolerance used when validating the hyperboloid and tangency constraints.
pub const CONSTRAINT_TOL: f64 = 1e-9;

/// A point on the upper sheet of the hyperboloid.
#[derive(Debug, Clone, PartialEq)]
pub struct LorentzPoint(Vec<f64>);

/// A vector in the tangent space of some [`LorentzPoint`].
///
/// The base point is not stored; callers pass it alongside.
#[derive(Debug, Clone, PartialEq)]
pub struct TangentVector(Vec<f64>);

impl LorentzPoint {
    /// The origin `(1, 0, ..., 0)` of hyperbolic space with `space_dim` space components.
    pub fn origin(space_dim: usize) -> Self {
        let mut coords = vec![0.0; space_dim + 1];
        coords[0] = 1.0;
        LorentzPoint(coords)
    }

    /// Lifts space components onto the hyperboloid: `x0 = sqrt(1 + |space|^2)`.
    pub fn lift(space: &[f64]) -> Result<Self> {
        check_finite(space, "lift")?;
        let mut coords = Vec::with_capacity(space.len() + 1);
        coords.push(ambient::time_from_space(space));
        coords.extend_from_slice(space);
        Ok(LorentzPoint(coords))
    }

    /// Wraps ambient coordinates, checking the hyperboloid constraint within `tol`.
    pub fn from_coords(coords: Vec<f64>, tol: f64) -> Result<Self> {
        if coords.len() < 2 {
            return Err(Error::Dimension {
                expected: 2,
                got: coords.len(),
            });
        }
        check_finite(&coords, "point")?;
        let norm = ambient::dot(&coords, &coords);
        if (norm + 1.0).abs() > tol * coords[0].abs().max(1.0).powi(2) || coords[0] < 1.0 - tol {
            return Err(Error::Numeric(format!(
                "point is off the hyperboloid: <x,x>_L = {norm}, x0 = {}",
                coords[0]
            )));
        }
        Ok(LorentzPoint(coords))
    }

    /// Wraps ambient coordinates without validation.
    pub(crate) fn from_coords_unchecked(coords: Vec<f64>) -> Self {
        LorentzPoint(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    pub fn time(&self) -> f64 {
        self.0[0]
    }

    pub fn space(&self) -> &[f64] {
        &self.0[1..]
    }

    /// Number of space components `d`.
    pub fn space_dim(&self) -> usize {
        self.0.len() - 1
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for LorentzPoint {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

impl TangentVector {
    pub fn zeros(ambient_dim: usize) -> Self {
        TangentVector(vec![0.0; ambient_dim])
    }

    /// Wraps `coords`, checking `<base, coords>_L = 0` within `tol` (relative to the operand scale).
    pub fn at(base: &LorentzPoint, coords: Vec<f64>, tol: f64) -> Result<Self> {
        Error::check_dim(base.0.len(), coords.len())?;
        let inner = ambient::dot(&base.0, &coords);
        let scale = ambient::euclid_norm(&base.0) * ambient::euclid_norm(&coords);
        if inner.abs() > tol * scale.max(1.0) {
            return Err(Error::Numeric(format!(
                "vector is not tangent at base: <base,v>_L = {inner}"
            )));
        }
        Ok(TangentVector(coords))
    }

    pub(crate) fn from_coords_unchecked(coords: Vec<f64>) -> Self {
        TangentVector(coords)
    }

    pub fn coords(&self) -> &[f64] {
        &self.0
    }

    /// Lorentzian norm `sqrt(<z,z>_L)`, clamped at zero for rounding noise.
    pub fn lorentz_norm(&self) -> f64 {
        ambient::dot(&self.0, &self.0).max(0.0).sqrt()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

impl AsRef<[f64]> for TangentVector {
    fn as_ref(&self) -> &[f64] {
        &self.0
    }
}

fn check_finite(values: &[f64], what: &str) -> Result<()> {
    if values.iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric(format!("non-finite input to {what}")))
    }
}

/// Minkowski inner product `-x0*y0 + sum_i xi*yi`.
pub fn minkowski_dot(x: &[f64], y: &[f64]) -> Result<f64> {
    Error::check_dim(x.len(), y.len())?;
    if x.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: x.len(),
        });
    }
    Ok(ambient::dot(x, y))
}

pub fn exp_map(base: &LorentzPoint, z: &TangentVector) -> Result<LorentzPoint> {
    Error::check_dim(base.0.len(), z.0.len())?;
    let mut out = vec![0.0; base.0.len()];
    ambient::exp_map(&base.0, &z.0, &mut out)?;
    Ok(LorentzPoint(out))
}

pub fn log_map(base: &LorentzPoint, y: &LorentzPoint) -> Result<TangentVector> {
    Error::check_dim(base.0.len(), y.0.len())?;
    let mut out = vec![0.0; base.0.len()];
    ambient::log_map(&base.0, &y.0, &mut out)?;
    Ok(TangentVector(out))
}

/// Squared Lorentzian distance `-2 - 2<x,y>_L`, clamped at zero.
pub fn distance_sq(x: &LorentzPoint, y: &LorentzPoint) -> Result<f64> {
    Error::check_dim(x.0.len(), y.0.len())?;
    Ok(ambient::distance_sq(&x.0, &y.0))
}

/// Projects an ambient vector onto the tangent space at `base`.
pub fn tangent_project(base: &LorentzPoint, u: &[f64]) -> Result<TangentVector> {
    Error::check_dim(base.0.len(), u.len())?;
    let mut out = u.to_vec();
    ambient::tangent_project_in_place(&base.0, &mut out);
    Ok(TangentVector(out))
}

pub fn parallel_transport(
    from: &LorentzPoint,
    to: &LorentzPoint,
    v: &TangentVector,
) -> Result<TangentVector> {
    Error::check_dim(from.0.len(), to.0.len())?;
    Error::check_dim(from.0.len(), v.0.len())?;
    let mut out = v.0.clone();
    ambient::parallel_transport_in_place(&from.0, &to.0, &mut out);
    Ok(TangentVector(out))
}

/// Recomputes the time component from the space components.
pub fn renormalize(x: &[f64]) -> Result<LorentzPoint> {
    if x.len() < 2 {
        return Err(Error::Dimension {
            expected: 2,
            got: x.len(),
        });
    }
    check_finite(x, "renormalize")?;
    let mut out = x.to_vec();
    ambient::renormalize_in_place(&mut out);
    Ok(LorentzPoint(out))
}

/// Slice-level kernels. Inputs are assumed to have matching lengths.
pub mod ambient {
    use super::SINGULAR_EPS;
    use crate::error::{Error, Result};

    #[inline]
    pub fn dot(x: &[f64], y: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), y.len());
        let space: f64 = x[1..].iter().zip(&y[1..]).map(|(a, b)| a * b).sum();
        space - x[0] * y[0]
    }

    #[inline]
    pub fn euclid_norm(x: &[f64]) -> f64 {
        x.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    #[inline]
    pub fn time_from_space(space: &[f64]) -> f64 {
        (1.0 + space.iter().map(|v| v * v).sum::<f64>()).sqrt()
    }

    #[inline]
    pub fn distance_sq(x: &[f64], y: &[f64]) -> f64 {
        (-2.0 - 2.0 * dot(x, y)).max(0.0)
    }

    pub fn renormalize_in_place(x: &mut [f64]) {
        x[0] = time_from_space(&x[1..]);
    }

    pub fn tangent_project_in_place(base: &[f64], u: &mut [f64]) {
        let inner = dot(base, u);
        for (ui, bi) in u.iter_mut().zip(base) {
            *ui += inner * bi;
        }
    }

    /// `cosh(alpha) * base + sinh(alpha) * z / alpha` with `alpha = sqrt(<z,z>_L)`.
    pub fn exp_map(base: &[f64], z: &[f64], out: &mut [f64]) -> Result<()> {
        let norm_sq = dot(z, z);
        if norm_sq < -1e-9 {
            return Err(Error::Numeric(format!(
                "exp_map needs a spacelike tangent, got <z,z>_L = {norm_sq}"
            )));
        }
        let alpha = norm_sq.max(0.0).sqrt();
        if alpha < SINGULAR_EPS {
            out.copy_from_slice(base);
            return Ok(());
        }
        let (c, s) = (alpha.cosh(), sinhc(alpha));
        for ((o, b), zi) in out.iter_mut().zip(base).zip(z) {
            *o = c * b + s * zi;
        }
        Ok(())
    }

    /// `arcosh(beta) / sqrt(beta^2 - 1) * (y - beta * x)` with `beta = -<x,y>_L`.
    pub fn log_map(x: &[f64], y: &[f64], out: &mut [f64]) -> Result<()> {
        let beta = -dot(x, y);
        if beta < 1.0 - 1e-9 {
            return Err(Error::Numeric(format!(
                "log_map inputs are off the hyperboloid: beta = {beta}"
            )));
        }
        if beta - 1.0 < SINGULAR_EPS {
            out.iter_mut().for_each(|o| *o = 0.0);
            return Ok(());
        }
        let scale = arcosh_over_sqrt(beta);
        for ((o, xi), yi) in out.iter_mut().zip(x).zip(y) {
            *o = scale * (yi - beta * xi);
        }
        Ok(())
    }

    /// Transports `v` (tangent at `from`) to the tangent space at `to`.
    pub fn parallel_transport_in_place(from: &[f64], to: &[f64], v: &mut [f64]) {
        let denom = 1.0 - dot(from, to);
        // coincident points give denom = 2; the guard only catches garbage input
        if denom.abs() < SINGULAR_EPS {
            return;
        }
        let coeff = dot(to, v) / denom;
        if coeff == 0.0 {
            return;
        }
        for ((vi, a), b) in v.iter_mut().zip(from).zip(to) {
            *vi += coeff * (a + b);
        }
    }

    /// `sinh(a) / a`, with the series form near zero.
    #[inline]
    fn sinhc(a: f64) -> f64 {
        if a < 1e-4 {
            1.0 + a * a / 6.0
        } else {
            a.sinh() / a
        }
    }

    /// `arcosh(b) / sqrt(b^2 - 1)` for `b >= 1`.
    #[inline]
    fn arcosh_over_sqrt(b: f64) -> f64 {
        let t = b - 1.0;
        if t < 1e-6 {
            // arcosh(1+t)/sqrt(t(2+t)) = 1 - t/3 + 2t^2/15 + O(t^3)
            1.0 - t / 3.0 + 2.0 * t * t / 15.0
        } else {
            b.acosh() / (t * (b + 1.0)).sqrt()
        }
    }
}
