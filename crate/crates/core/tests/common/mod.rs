#![allow(dead_code)]

use fhre::data::{augment_inverse, KgDataset, Triple};
use fhre::manifold::{ambient, LorentzPoint, TangentVector};
use fhre::model::ModelState;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// A lifted point whose space part has entries in `[-scale, scale]`.
pub fn point(rng: &mut impl Rng, d: usize, scale: f64) -> LorentzPoint {
    let space: Vec<f64> = (0..d).map(|_| rng.random_range(-scale..=scale)).collect();
    LorentzPoint::lift(&space).unwrap()
}

/// A tangent at `base` with Lorentz norm drawn uniformly from `[0, max_norm]`.
pub fn tangent(rng: &mut impl Rng, base: &LorentzPoint, max_norm: f64) -> TangentVector {
    let mut u: Vec<f64> = (0..base.coords().len()).map(|_| rng.random_range(-1.0..1.0)).collect();
    ambient::tangent_project_in_place(base.coords(), &mut u);
    let norm = ambient::dot(&u, &u).max(0.0).sqrt();
    let target = rng.random_range(0.0..=max_norm);
    if norm > 0.0 {
        u.iter_mut().for_each(|x| *x *= target / norm);
    }
    TangentVector::at(base, u, 1e-6).unwrap()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn random_model(rng: &mut impl Rng, n_e: usize, n_rel_augmented: usize, d: usize, scale: f64) -> ModelState {
    let mut m = ModelState::zeros(n_e, n_rel_augmented, d).unwrap();
    for e in 0..n_e {
        let p = point(rng, d, scale);
        m.entity_mut(e).copy_from_slice(p.coords());
        m.head_bias[e] = rng.random_range(-1.0..1.0);
        m.tail_bias[e] = rng.random_range(-1.0..1.0);
    }
    for a in m.relation_angles.iter_mut() {
        *a = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    }
    m
}

fn random_triples(rng: &mut impl Rng, n_e: usize, n_r: usize, n: usize) -> Vec<Triple> {
    (0..n)
        .map(|_| Triple::new(rng.random_range(0..n_e), rng.random_range(0..n_r), rng.random_range(0..n_e)))
        .collect()
}

/// Augmented id-level KG; duplicates across splits are allowed.
pub fn random_kg(rng: &mut impl Rng, n_e: usize, n_r: usize, sizes: [usize; 3]) -> KgDataset {
    let train = random_triples(rng, n_e, n_r, sizes[0]);
    let valid = random_triples(rng, n_e, n_r, sizes[1]);
    let test = random_triples(rng, n_e, n_r, sizes[2]);
    augment_inverse(KgDataset::from_ids(n_e, n_r, train, valid, test).unwrap()).unwrap()
}

/// `||a - b|| / max(||a||, ||b||)`, or the absolute error when both are tiny.
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let scale = ambient::euclid_norm(a).max(ambient::euclid_norm(b));
    if scale < 1e-8 {
        diff
    } else {
        diff / scale
    }
}

/// Worst relative error of the analytic score gradient against central differences, over the
/// head, tail and angle blocks.
pub fn score_gradient_error(m: &ModelState, h: usize, r: usize, t: usize) -> f64 {
    use fhre::model::{score, score_with_gradients};
    const STEP: f64 = 1e-6;
    let (_, g) = score_with_gradients(m, h, r, t).unwrap();
    let w = m.dim() + 1;
    let central = |f: &dyn Fn(&mut ModelState, f64)| {
        let mut p = m.clone();
        f(&mut p, STEP);
        let mut q = m.clone();
        f(&mut q, -STEP);
        (score(&p, h, r, t).unwrap() - score(&q, h, r, t).unwrap()) / (2.0 * STEP)
    };
    let fd_entity = |e: usize| -> Vec<f64> {
        (0..w).map(|i| central(&|s: &mut ModelState, dx| s.entity_mut(e)[i] += dx)).collect()
    };
    // With h == t both blocks share a row; the derivative of that row is their sum.
    let (head_an, tail_an): (Vec<f64>, Vec<f64>) = if h == t {
        let sum: Vec<f64> = g.d_head.iter().zip(&g.d_tail).map(|(a, b)| a + b).collect();
        (sum.clone(), sum)
    } else {
        (g.d_head.clone(), g.d_tail.clone())
    };
    let fd_angles: Vec<f64> = (0..m.dim() / 2)
        .map(|j| central(&|s: &mut ModelState, dx| s.angles_mut(r)[j] += dx))
        .collect();
    let fd_hb = central(&|s: &mut ModelState, dx| s.head_bias[h] += dx);
    let fd_tb = central(&|s: &mut ModelState, dx| s.tail_bias[t] += dx);
    let bias_an = [g.d_bias_h, g.d_bias_t];
    [
        rel_error(&head_an, &fd_entity(h)),
        rel_error(&tail_an, &fd_entity(t)),
        rel_error(&g.d_angles, &fd_angles),
        rel_error(&bias_an, &[fd_hb, fd_tb]),
    ]
    .into_iter()
    .fold(0.0, f64::max)
}

/// Every true triple of `ds` in both directions, rebuilt from the raw splits.
pub fn known_true(ds: &KgDataset) -> std::collections::HashSet<Triple> {
    let n_r = ds.n_base_relations();
    ds.train
        .iter()
        .chain(&ds.valid)
        .chain(&ds.test)
        .flat_map(|t| [*t, Triple::new(t.t, t.r + n_r, t.h)])
        .collect()
}

/// Filtered rank by scoring candidates one at a time and sorting.
pub fn brute_force_rank(
    m: &ModelState,
    known: &std::collections::HashSet<Triple>,
    q: Triple,
    tie: fhre::evaluation::TiePolicy,
) -> f64 {
    use fhre::evaluation::TiePolicy;
    let target = fhre::model::score(m, q.h, q.r, q.t).unwrap();
    let mut scored: Vec<f64> = (0..m.n_entities())
        .filter(|&c| c == q.t || !known.contains(&Triple::new(q.h, q.r, c)))
        .map(|c| fhre::model::score(m, q.h, q.r, c).unwrap())
        .collect();
    scored.sort_by(|a, b| b.partial_cmp(a).unwrap());
    let first = scored.iter().position(|&s| s == target).unwrap();
    let last = scored.iter().rposition(|&s| s == target).unwrap();
    let (opt, pess) = ((first + 1) as f64, (last + 1) as f64);
    match tie {
        TiePolicy::Optimistic => opt,
        TiePolicy::Pessimistic => pess,
        TiePolicy::Mean => 0.5 * (opt + pess),
    }
}

/// Model whose scores are drawn from a few values so that ties are common.
pub fn tied_model(rng: &mut impl Rng, n_e: usize, n_rel_augmented: usize) -> ModelState {
    let mut m = ModelState::zeros(n_e, n_rel_augmented, 2).unwrap();
    for e in 0..n_e {
        m.tail_bias[e] = rng.random_range(0..3) as f64;
    }
    m
}
