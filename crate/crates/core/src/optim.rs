//! Riemannian Adam for entity points on the hyperboloid and plain Adam for
//! the Euclidean tables (angles, biases).
//!
//! Both optimizers keep moments per row and a per-row step counter, so a row
//! that is untouched in a batch is neither moved nor aged.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ambient, LorentzPoint, TangentVector};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamHyper {
    pub fn with_lr(lr: f64) -> Self {
        AdamHyper {
            lr,
            ..Default::default()
        }
    }

    #[inline]
    fn corrections(&self, step: u64) -> (f64, f64) {
        let t = step as f64;
        (1.0 - self.beta1.powf(t), 1.0 - self.beta2.powf(t))
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[inline]
fn precondition(m_hat: f64, v_hat: f64, eps: f64) -> f64 {
    let denom = v_hat.sqrt() + eps;
    if denom == 0.0 {
        0.0
    } else {
        m_hat / denom
    }
}

fn check_finite(grad: &[f64]) -> Result<()> {
    if grad.iter().all(|g| g.is_finite()) {
        Ok(())
    } else {
        Err(Error::Numeric("non-finite gradient; step aborted".into()))
    }
}

/// Converts an ambient Euclidean gradient into the Riemannian gradient at `point`.
pub fn riemannian_grad(point: &LorentzPoint, ambient_grad: &[f64]) -> Result<TangentVector> {
    Error::check_dim(point.coords().len(), ambient_grad.len())?;
    let mut out = ambient_grad.to_vec();
    riemannian_grad_in_place(point.coords(), &mut out);
    Ok(TangentVector::from_coords_unchecked(out))
}

/// Applies the inverse metric `J = diag(-1, 1, ..., 1)` and projects onto the tangent space.
pub fn riemannian_grad_in_place(point: &[f64], grad: &mut [f64]) {
    grad[0] = -grad[0];
    ambient::tangent_project_in_place(point, grad);
}

/// Riemannian Adam state for a table of hyperboloid points.
#[derive(Debug, Clone, PartialEq)]
pub struct RAdamState {
    pub hyper: AdamHyper,
    width: usize,
    /// First moments, tangent at the current point of each row.
    pub m: Vec<f64>,
    /// Component-wise second moments.
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
    /// Recompute the time coordinate every this many steps of a row.
    pub renorm_every: u64,
}

impl RAdamState {
    pub fn new(n_rows: usize, width: usize, hyper: AdamHyper) -> Self {
        RAdamState {
            hyper,
            width,
            m: vec![0.0; n_rows * width],
            v: vec![0.0; n_rows * width],
            steps: vec![0; n_rows],
            renorm_every: 1,
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.steps.len()
    }

    pub fn first_moment(&self, row: usize) -> &[f64] {
        &self.m[row * self.width..(row + 1) * self.width]
    }

    /// Updates `point` (row `row` of the table) in place.
    pub fn step(&mut self, row: usize, point: &mut [f64], ambient_grad: &[f64]) -> Result<()> {
        if row >= self.n_rows() {
            return Err(Error::Lookup {
                kind: "optimizer row",
                id: row,
                size: self.n_rows(),
            });
        }
        Error::check_dim(self.width, point.len())?;
        Error::check_dim(self.width, ambient_grad.len())?;
        check_finite(ambient_grad)?;

        let w = self.width;
        let hyper = self.hyper;
        let mut g = ambient_grad.to_vec();
        riemannian_grad_in_place(point, &mut g);

        let step = self.steps[row] + 1;
        let (c1, c2) = hyper.corrections(step);
        let m = &mut self.m[row * w..(row + 1) * w];
        let v = &mut self.v[row * w..(row + 1) * w];
        let mut direction = vec![0.0; w];
        for i in 0..w {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * g[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * g[i] * g[i];
            direction[i] = -hyper.lr * precondition(m[i] / c1, v[i] / c2, hyper.eps);
        }
        ambient::tangent_project_in_place(point, &mut direction);

        let mut next = vec![0.0; w];
        ambient::exp_map(point, &direction, &mut next)?;
        if step.is_multiple_of(self.renorm_every.max(1)) {
            ambient::renormalize_in_place(&mut next);
        }
        if next.iter().any(|x| !x.is_finite()) {
            return Err(Error::Numeric("non-finite point after update".into()));
        }
        ambient::parallel_transport_in_place(point, &next, m);
        point.copy_from_slice(&next);
        self.steps[row] = step;
        Ok(())
    }
}

/// One Riemannian Adam step for `entity`, returning the moved point.
pub fn radam_step(
    state: &mut RAdamState,
    entity: usize,
    point: &LorentzPoint,
    ambient_grad: &[f64],
) -> Result<LorentzPoint> {
    let mut coords = point.coords().to_vec();
    state.step(entity, &mut coords, ambient_grad)?;
    Ok(LorentzPoint::from_coords_unchecked(coords))
}

/// Adam state for a Euclidean table of `n_rows x width` values.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    width: usize,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub steps: Vec<u64>,
}

impl AdamState {
    pub fn new(n_rows: usize, width: usize, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            width,
            m: vec![0.0; n_rows * width],
            v: vec![0.0; n_rows * width],
            steps: vec![0; n_rows],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn n_rows(&self) -> usize {
        self.steps.len()
    }

    pub fn step_row(&mut self, row: usize, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if row >= self.n_rows() {
            return Err(Error::Lookup {
                kind: "optimizer row",
                id: row,
                size: self.n_rows(),
            });
        }
        Error::check_dim(self.width, params.len())?;
        Error::check_dim(self.width, grads.len())?;
        check_finite(grads)?;
        let w = self.width;
        let hyper = self.hyper;
        let step = self.steps[row] + 1;
        let (c1, c2) = hyper.corrections(step);
        let m = &mut self.m[row * w..(row + 1) * w];
        let v = &mut self.v[row * w..(row + 1) * w];
        for i in 0..w {
            m[i] = hyper.beta1 * m[i] + (1.0 - hyper.beta1) * grads[i];
            v[i] = hyper.beta2 * v[i] + (1.0 - hyper.beta2) * grads[i] * grads[i];
            params[i] -= hyper.lr * precondition(m[i] / c1, v[i] / c2, hyper.eps);
        }
        self.steps[row] = step;
        Ok(())
    }
}

/// One Adam step over the whole table.
pub fn adam_step(state: &mut AdamState, params: &[f64], grads: &[f64]) -> Result<Vec<f64>> {
    let len = state.n_rows() * state.width();
    Error::check_dim(len, params.len())?;
    Error::check_dim(len, grads.len())?;
    check_finite(grads)?;
    let mut out = params.to_vec();
    let w = state.width();
    for row in 0..state.n_rows() {
        state.step_row(row, &mut out[row * w..(row + 1) * w], &grads[row * w..(row + 1) * w])?;
    }
    Ok(out)
}
