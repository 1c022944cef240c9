//! Relations as block-diagonal Lorentz rotations, scored by squared Lorentzian distance.
//!
//! A relation with angles `theta_1..theta_{d/2}` rotates each consecutive pair
//! of space coordinates `(x_{2j-1}, x_{2j})` by `theta_j`; the time coordinate
//! is fixed. The score of `(h, r, t)` is
//!
//! ```text
//! s = -d_L^2(rot_r(v_h), v_t) + b_head[h] + b_tail[t]
//! ```
//!
//! so higher means more plausible.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::manifold::{ambient, LorentzPoint};

/// Rotation angles for one relation, one per 2-D block of space coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct RelationParams(pub Vec<f64>);

impl RelationParams {
    pub fn angles(&self) -> &[f64] {
        &self.0
    }
}

/// All trainable tables.
///
/// Relations are stored in augmented form: ids `0..n_base` are the dataset
/// relations and `r + n_base` is the inverse of `r`.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState {
    dim: usize,
    n_entities: usize,
    n_relations: usize,
    /// `n_entities x (dim + 1)` ambient coordinates, row-major.
    pub entity_points: Vec<f64>,
    pub head_bias: Vec<f64>,
    pub tail_bias: Vec<f64>,
    /// `n_relations x dim/2` angles, row-major.
    pub relation_angles: Vec<f64>,
}

/// Gradients of a single triple's score with respect to each parameter it touches.
///
/// Entity gradients are ambient (Euclidean) partial derivatives; the optimizer converts
/// them to Riemannian gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreGradients {
    pub d_head: Vec<f64>,
    pub d_tail: Vec<f64>,
    pub d_angles: Vec<f64>,
    pub d_bias_h: f64,
    pub d_bias_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamCount {
    /// `|V| * d + 2|R| * d`, the usual way of counting embedding parameters.
    pub nominal: u64,
    /// Values actually stored: coordinates, two bias tables and the angles.
    pub actual: u64,
}

pub fn validate_dim(dim: usize) -> Result<()> {
    if dim < 2 || !dim.is_multiple_of(2) {
        return Err(Error::Config(format!(
            "embedding dimension must be even and at least 2, got {dim}"
        )));
    }
    Ok(())
}

impl ModelState {
    /// Every entity at the origin, zero biases and zero angles.
    ///
    /// `n_relations` counts augmented relations and must be even.
    pub fn zeros(n_entities: usize, n_relations: usize, dim: usize) -> Result<Self> {
        validate_dim(dim)?;
        if !n_relations.is_multiple_of(2) {
            return Err(Error::Config(format!(
                "augmented relation count must be even, got {n_relations}"
            )));
        }
        let mut entity_points = vec![0.0; n_entities * (dim + 1)];
        for row in entity_points.chunks_exact_mut(dim + 1) {
            row[0] = 1.0;
        }
        Ok(ModelState {
            dim,
            n_entities,
            n_relations,
            entity_points,
            head_bias: vec![0.0; n_entities],
            tail_bias: vec![0.0; n_entities],
            relation_angles: vec![0.0; n_relations * dim / 2],
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n_entities(&self) -> usize {
        self.n_entities
    }

    /// Number of relations including inverses.
    pub fn n_relations(&self) -> usize {
        self.n_relations
    }

    pub fn n_base_relations(&self) -> usize {
        self.n_relations / 2
    }

    /// Id of the inverse of relation `r`.
    pub fn inverse_relation(&self, r: usize) -> usize {
        let base = self.n_base_relations();
        if r < base {
            r + base
        } else {
            r - base
        }
    }

    pub fn entity(&self, e: usize) -> &[f64] {
        let w = self.dim + 1;
        &self.entity_points[e * w..(e + 1) * w]
    }

    pub fn entity_mut(&mut self, e: usize) -> &mut [f64] {
        let w = self.dim + 1;
        &mut self.entity_points[e * w..(e + 1) * w]
    }

    pub fn entity_point(&self, e: usize) -> Result<LorentzPoint> {
        self.check_entity(e)?;
        Ok(LorentzPoint::from_coords_unchecked(self.entity(e).to_vec()))
    }

    pub fn angles(&self, r: usize) -> &[f64] {
        let w = self.dim / 2;
        &self.relation_angles[r * w..(r + 1) * w]
    }

    pub fn angles_mut(&mut self, r: usize) -> &mut [f64] {
        let w = self.dim / 2;
        &mut self.relation_angles[r * w..(r + 1) * w]
    }

    pub fn relation(&self, r: usize) -> Result<RelationParams> {
        self.check_relation(r)?;
        Ok(RelationParams(self.angles(r).to_vec()))
    }

    pub fn check_entity(&self, e: usize) -> Result<()> {
        if e < self.n_entities {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "entity",
                id: e,
                size: self.n_entities,
            })
        }
    }

    pub fn check_relation(&self, r: usize) -> Result<()> {
        if r < self.n_relations {
            Ok(())
        } else {
            Err(Error::Lookup {
                kind: "relation",
                id: r,
                size: self.n_relations,
            })
        }
    }

    fn check_triple(&self, h: usize, r: usize, t: usize) -> Result<()> {
        self.check_entity(h)?;
        self.check_relation(r)?;
        self.check_entity(t)
    }

    /// Largest deviation `|<x,x>_L + 1|` over all entity rows.
    pub fn max_constraint_violation(&self) -> f64 {
        self.entity_points
            .chunks_exact(self.dim + 1)
            .map(|row| (ambient::dot(row, row) + 1.0).abs())
            .fold(0.0, f64::max)
    }

    #[inline]
    fn score_rotated(&self, rotated_head: &[f64], h: usize, t: usize) -> f64 {
        -ambient::distance_sq(rotated_head, self.entity(t)) + self.head_bias[h] + self.tail_bias[t]
    }
}

/// Applies the block rotation given by `angles` to `point`, writing into `out`.
#[inline]
pub fn rotate_into(point: &[f64], angles: &[f64], out: &mut [f64]) {
    debug_assert_eq!(point.len(), 2 * angles.len() + 1);
    out[0] = point[0];
    for (j, &theta) in angles.iter().enumerate() {
        let (s, c) = theta.sin_cos();
        let (a, b) = (point[2 * j + 1], point[2 * j + 2]);
        out[2 * j + 1] = a * c - b * s;
        out[2 * j + 2] = a * s + b * c;
    }
}

pub fn rotate(point: &LorentzPoint, rel: &RelationParams) -> Result<LorentzPoint> {
    Error::check_dim(2 * rel.0.len() + 1, point.coords().len())?;
    let mut out = vec![0.0; point.coords().len()];
    rotate_into(point.coords(), &rel.0, &mut out);
    Ok(LorentzPoint::from_coords_unchecked(out))
}

pub fn score(state: &ModelState, h: usize, r: usize, t: usize) -> Result<f64> {
    state.check_triple(h, r, t)?;
    let mut rotated = vec![0.0; state.dim + 1];
    rotate_into(state.entity(h), state.angles(r), &mut rotated);
    Ok(state.score_rotated(&rotated, h, t))
}

/// Scores `(h, r, t)` for every entity `t`.
pub fn score_against_all_tails(state: &ModelState, h: usize, r: usize) -> Result<Vec<f64>> {
    let mut out = vec![0.0; state.n_entities];
    let mut rotated = vec![0.0; state.dim + 1];
    score_against_all_tails_into(state, h, r, &mut rotated, &mut out)?;
    Ok(out)
}

/// Buffer-reusing form of [`score_against_all_tails`].
pub fn score_against_all_tails_into(
    state: &ModelState,
    h: usize,
    r: usize,
    rotated: &mut [f64],
    out: &mut [f64],
) -> Result<()> {
    state.check_entity(h)?;
    state.check_relation(r)?;
    Error::check_dim(state.n_entities, out.len())?;
    Error::check_dim(state.dim + 1, rotated.len())?;
    rotate_into(state.entity(h), state.angles(r), rotated);
    for (t, slot) in out.iter_mut().enumerate() {
        *slot = state.score_rotated(rotated, h, t);
    }
    Ok(())
}

/// Score and its gradients for one triple.
pub fn score_with_gradients(
    state: &ModelState,
    h: usize,
    r: usize,
    t: usize,
) -> Result<(f64, ScoreGradients)> {
    state.check_triple(h, r, t)?;
    let w = state.dim + 1;
    let head = state.entity(h);
    let tail = state.entity(t);
    let angles = state.angles(r);

    let mut rotated = vec![0.0; w];
    rotate_into(head, angles, &mut rotated);
    let s = state.score_rotated(&rotated, h, t);

    // s = 2 + 2<R v_h, v_t>_L + biases, so ds/dv_t = 2 J R v_h.
    let mut d_tail = rotated.clone();
    d_tail[0] = -d_tail[0];
    d_tail.iter_mut().for_each(|g| *g *= 2.0);

    // ds/dv_h = 2 R^T J v_t; R^T is the rotation by -theta.
    let mut j_tail = tail.to_vec();
    j_tail[0] = -j_tail[0];
    let neg: Vec<f64> = angles.iter().map(|a| -a).collect();
    let mut d_head = vec![0.0; w];
    rotate_into(&j_tail, &neg, &mut d_head);
    d_head.iter_mut().for_each(|g| *g *= 2.0);

    let d_angles = angles
        .iter()
        .enumerate()
        .map(|(j, &theta)| {
            let (sn, cs) = theta.sin_cos();
            let (a, b) = (head[2 * j + 1], head[2 * j + 2]);
            let (da, db) = (-a * sn - b * cs, a * cs - b * sn);
            2.0 * (tail[2 * j + 1] * da + tail[2 * j + 2] * db)
        })
        .collect();

    Ok((
        s,
        ScoreGradients {
            d_head,
            d_tail,
            d_angles,
            d_bias_h: 1.0,
            d_bias_t: 1.0,
        },
    ))
}

pub fn score_gradients(state: &ModelState, h: usize, r: usize, t: usize) -> Result<ScoreGradients> {
    score_with_gradients(state, h, r, t).map(|(_, g)| g)
}

/// Parameter counts for `n_entities`, `n_base_relations` (before inverse augmentation) and `dim`.
pub fn param_count(n_entities: u64, n_base_relations: u64, dim: u64) -> Result<ParamCount> {
    validate_dim(dim as usize)?;
    let n_rel = 2 * n_base_relations;
    Ok(ParamCount {
        nominal: n_entities * dim + n_rel * dim,
        actual: n_entities * (dim + 1) + 2 * n_entities + n_rel * (dim / 2),
    })
}
