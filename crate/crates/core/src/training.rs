//! Training loop: inverse-augmented positives, uniformly corrupted negatives,
//! binary cross-entropy, Riemannian Adam for entity points and Adam for the rest.

use std::fmt::Write as _;
use std::io::Write;
use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};

use crate::checkpoint::Checkpoint;
use crate::data::{sample_negatives_into, KgDataset, Split, Triple};
use crate::error::{Error, Result};
use crate::evaluation::{evaluate, Metrics, TiePolicy};
use crate::manifold::{ambient, LorentzPoint};
use crate::model::{score_with_gradients, validate_dim, ModelState};
use crate::optim::{AdamHyper, AdamState, RAdamState};

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub dim: usize,
    pub lr: f64,
    pub neg: usize,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    pub init_std: f64,
    pub eval_every: usize,
    pub renorm_every: u64,
    pub dataset: Option<PathBuf>,
    pub tie_policy: TiePolicy,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            dim: 32,
            lr: 5e-3,
            neg: 10,
            batch: 128,
            epochs: 500,
            seed: 42,
            init_std: 1e-3,
            eval_every: 20,
            renorm_every: 1,
            dataset: None,
            tie_policy: TiePolicy::Mean,
        }
    }
}

/// Published per-dataset settings, as `key = value` files.
pub const PRESETS: &[(&str, &str)] = &[
    ("nations", include_str!("../presets/nations.conf")),
    ("codex-s", include_str!("../presets/codex-s.conf")),
    ("codex-m", include_str!("../presets/codex-m.conf")),
    ("fb15k-237", include_str!("../presets/fb15k-237.conf")),
    ("fb15k-237-d500", include_str!("../presets/fb15k-237-d500.conf")),
    ("wn18rr", include_str!("../presets/wn18rr.conf")),
    ("wn18rr-d500", include_str!("../presets/wn18rr-d500.conf")),
];

impl TrainConfig {
    pub fn preset(name: &str) -> Result<Self> {
        let (_, text) = PRESETS
            .iter()
            .find(|(n, _)| *n == name)
            .ok_or_else(|| Error::Config(format!("unknown preset {name:?}")))?;
        let mut cfg = TrainConfig::default();
        cfg.apply_kv_text(text)?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::Config(format!("{key}: cannot parse {value:?}")))
        }
        match key {
            "dim" => self.dim = num(key, value)?,
            "lr" => self.lr = num(key, value)?,
            "neg" => self.neg = num(key, value)?,
            "batch" => self.batch = num(key, value)?,
            "epochs" => self.epochs = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "init_std" => self.init_std = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            "renorm_every" => self.renorm_every = num(key, value)?,
            "dataset" => self.dataset = Some(PathBuf::from(value)),
            "tie_policy" => self.tie_policy = value.parse()?,
            other => return Err(Error::Config(format!("unknown key {other:?}"))),
        }
        Ok(())
    }

    /// Applies `key = value` lines; `#` starts a comment.
    pub fn apply_kv_text(&mut self, text: &str) -> Result<()> {
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected key = value", i + 1)))?;
            self.set(k.trim(), v.trim())?;
        }
        Ok(())
    }

    pub fn to_kv_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "dim = {}", self.dim);
        let _ = writeln!(s, "lr = {}", self.lr);
        let _ = writeln!(s, "neg = {}", self.neg);
        let _ = writeln!(s, "batch = {}", self.batch);
        let _ = writeln!(s, "epochs = {}", self.epochs);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "init_std = {}", self.init_std);
        let _ = writeln!(s, "eval_every = {}", self.eval_every);
        let _ = writeln!(s, "renorm_every = {}", self.renorm_every);
        if let Some(d) = &self.dataset {
            let _ = writeln!(s, "dataset = {}", d.display());
        }
        let _ = writeln!(s, "tie_policy = {}", self.tie_policy);
        s
    }

    pub fn validate(&self) -> Result<()> {
        validate_dim(self.dim)?;
        let counts = [
            ("neg", self.neg),
            ("batch", self.batch),
            ("epochs", self.epochs),
            ("eval_every", self.eval_every),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.renorm_every == 0 {
            return Err(Error::Config("renorm_every must be positive".into()));
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("lr must be positive, got {}", self.lr)));
        }
        if !(self.init_std >= 0.0 && self.init_std.is_finite()) {
            return Err(Error::Config(format!("init_std must be >= 0, got {}", self.init_std)));
        }
        Ok(())
    }

    pub fn adam_hyper(&self) -> AdamHyper {
        AdamHyper::with_lr(self.lr)
    }
}

/// Optimizer state for every table of a [`ModelState`].
#[derive(Debug, Clone, PartialEq)]
pub struct OptimState {
    pub entities: RAdamState,
    pub head_bias: AdamState,
    pub tail_bias: AdamState,
    pub angles: AdamState,
}

impl OptimState {
    pub fn new(model: &ModelState, hyper: AdamHyper, renorm_every: u64) -> Self {
        let mut entities = RAdamState::new(model.n_entities(), model.dim() + 1, hyper);
        entities.renorm_every = renorm_every;
        OptimState {
            entities,
            head_bias: AdamState::new(model.n_entities(), 1, hyper),
            tail_bias: AdamState::new(model.n_entities(), 1, hyper),
            angles: AdamState::new(model.n_relations(), model.dim() / 2, hyper),
        }
    }
}

fn seeded(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Generator for epoch `epoch` (0-based); stream 0 is reserved for initialization.
pub fn epoch_rng(seed: u64, epoch: usize) -> ChaCha8Rng {
    seeded(seed, epoch as u64 + 1)
}

/// Random tangent vectors at the origin pushed through the exponential map once;
/// zero biases; angles uniform in `(-pi, pi)`.
pub fn initialize(config: &TrainConfig, ds: &KgDataset) -> Result<ModelState> {
    config.validate()?;
    let mut state = ModelState::zeros(ds.n_entities(), ds.n_relations(), config.dim)?;
    let mut rng = seeded(config.seed, 0);
    let normal = Normal::new(0.0, config.init_std).map_err(|e| Error::Config(e.to_string()))?;
    let origin = LorentzPoint::origin(config.dim);
    let mut tangent = vec![0.0; config.dim + 1];
    for e in 0..state.n_entities() {
        for v in &mut tangent[1..] {
            *v = normal.sample(&mut rng);
        }
        ambient::exp_map(origin.coords(), &tangent, state.entity_mut(e))?;
    }
    let uniform = Uniform::new(-std::f64::consts::PI, std::f64::consts::PI)
        .map_err(|e| Error::Config(e.to_string()))?;
    for a in &mut state.relation_angles {
        *a = uniform.sample(&mut rng);
    }
    Ok(state)
}

/// `log(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `-(1/N) sum_i [log sigma(s_i) + sum_j log(1 - sigma(s~_ij))]`.
///
/// `negative_scores` is row-major `N x k`.
pub fn bce_loss(positive_scores: &[f64], negative_scores: &[f64]) -> Result<f64> {
    let n = positive_scores.len();
    if n == 0 {
        return Ok(0.0);
    }
    if !negative_scores.len().is_multiple_of(n) {
        return Err(Error::Dimension {
            expected: n * (negative_scores.len() / n + 1),
            got: negative_scores.len(),
        });
    }
    let pos: f64 = positive_scores.iter().map(|&s| softplus(-s)).sum();
    let neg: f64 = negative_scores.iter().map(|&s| softplus(s)).sum();
    Ok((pos + neg) / n as f64)
}

/// Derivatives of [`bce_loss`] with respect to each positive and each negative score.
pub fn bce_score_grads(positive_scores: &[f64], negative_scores: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = positive_scores.len().max(1) as f64;
    (
        positive_scores.iter().map(|&s| (sigmoid(s) - 1.0) / n).collect(),
        negative_scores.iter().map(|&s| sigmoid(s) / n).collect(),
    )
}

/// Dense gradient accumulators with a record of which rows were touched.
struct GradBuffers {
    entity: Vec<f64>,
    angles: Vec<f64>,
    head_bias: Vec<f64>,
    tail_bias: Vec<f64>,
    touched_entities: Vec<bool>,
    touched_relations: Vec<bool>,
    touched_heads: Vec<bool>,
    touched_tails: Vec<bool>,
}

impl GradBuffers {
    fn new(model: &ModelState) -> Self {
        let n_e = model.n_entities();
        let n_r = model.n_relations();
        GradBuffers {
            entity: vec![0.0; n_e * (model.dim() + 1)],
            angles: vec![0.0; n_r * model.dim() / 2],
            head_bias: vec![0.0; n_e],
            tail_bias: vec![0.0; n_e],
            touched_entities: vec![false; n_e],
            touched_relations: vec![false; n_r],
            touched_heads: vec![false; n_e],
            touched_tails: vec![false; n_e],
        }
    }

    /// Scores `triple` and adds `dloss/ds * ds/dparam` for every parameter. Returns the score
    /// and the loss term.
    fn accumulate(
        &mut self,
        model: &ModelState,
        triple: Triple,
        positive: bool,
        inv_n: f64,
    ) -> Result<(f64, f64)> {
        let (s, g) = score_with_gradients(model, triple.h, triple.r, triple.t)?;
        let (loss, coeff) = if positive {
            (softplus(-s), (sigmoid(s) - 1.0) * inv_n)
        } else {
            (softplus(s), sigmoid(s) * inv_n)
        };
        let w = model.dim() + 1;
        let hw = model.dim() / 2;
        let add = |buf: &mut [f64], grad: &[f64]| {
            for (b, g) in buf.iter_mut().zip(grad) {
                *b += coeff * g;
            }
        };
        add(&mut self.entity[triple.h * w..(triple.h + 1) * w], &g.d_head);
        add(&mut self.entity[triple.t * w..(triple.t + 1) * w], &g.d_tail);
        add(&mut self.angles[triple.r * hw..(triple.r + 1) * hw], &g.d_angles);
        self.head_bias[triple.h] += coeff * g.d_bias_h;
        self.tail_bias[triple.t] += coeff * g.d_bias_t;
        self.touched_entities[triple.h] = true;
        self.touched_entities[triple.t] = true;
        self.touched_relations[triple.r] = true;
        self.touched_heads[triple.h] = true;
        self.touched_tails[triple.t] = true;
        Ok((s, loss))
    }

    /// Applies one optimizer step per touched row, in ascending row order, and clears the buffers.
    fn apply(&mut self, model: &mut ModelState, optim: &mut OptimState) -> Result<()> {
        let w = model.dim() + 1;
        let hw = model.dim() / 2;
        for e in 0..model.n_entities() {
            if std::mem::take(&mut self.touched_entities[e]) {
                let grad = &mut self.entity[e * w..(e + 1) * w];
                optim.entities.step(e, model.entity_mut(e), grad)?;
                grad.fill(0.0);
            }
            if std::mem::take(&mut self.touched_heads[e]) {
                let g = [std::mem::take(&mut self.head_bias[e])];
                optim.head_bias.step_row(e, &mut model.head_bias[e..e + 1], &g)?;
            }
            if std::mem::take(&mut self.touched_tails[e]) {
                let g = [std::mem::take(&mut self.tail_bias[e])];
                optim.tail_bias.step_row(e, &mut model.tail_bias[e..e + 1], &g)?;
            }
        }
        for r in 0..model.n_relations() {
            if std::mem::take(&mut self.touched_relations[r]) {
                let grad = &mut self.angles[r * hw..(r + 1) * hw];
                optim.angles.step_row(r, model.angles_mut(r), grad)?;
                grad.fill(0.0);
            }
        }
        Ok(())
    }
}

/// One pass over the augmented training triples. Returns the mean of the batch losses.
pub fn train_epoch<R: Rng + ?Sized>(
    model: &mut ModelState,
    optim: &mut OptimState,
    ds: &KgDataset,
    config: &TrainConfig,
    rng: &mut R,
    epoch: usize,
) -> Result<f64> {
    if !ds.is_augmented() {
        return Err(Error::NotAugmented);
    }
    let mut order: Vec<Triple> = ds.augmented_train.clone();
    order.shuffle(rng);
    let mut grads = GradBuffers::new(model);
    let mut negatives = Vec::with_capacity(config.neg);
    let mut loss_sum = 0.0;
    let mut n_batches = 0usize;
    for (batch_idx, batch) in order.chunks(config.batch).enumerate() {
        let inv_n = 1.0 / batch.len() as f64;
        let mut batch_loss = 0.0;
        for &pos in batch {
            batch_loss += grads.accumulate(model, pos, true, inv_n)?.1;
            sample_negatives_into(rng, pos, config.neg, ds.n_entities(), &mut negatives)?;
            for &neg in &negatives {
                batch_loss += grads.accumulate(model, neg, false, inv_n)?.1;
            }
        }
        let batch_loss = batch_loss * inv_n;
        if !batch_loss.is_finite() {
            return Err(Error::Numeric(format!(
                "non-finite loss at epoch {epoch}, batch {batch_idx}"
            )));
        }
        grads.apply(model, optim)?;
        loss_sum += batch_loss;
        n_batches += 1;
    }
    Ok(if n_batches == 0 {
        0.0
    } else {
        loss_sum / n_batches as f64
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ValidationRecord {
    /// 1-based epoch after which validation ran.
    pub epoch: usize,
    pub loss: f64,
    pub metrics: Metrics,
}

#[derive(Debug, Clone)]
pub struct FitResult {
    pub best: Checkpoint,
    pub history: Vec<ValidationRecord>,
    pub epoch_losses: Vec<f64>,
}

/// Trains for `config.epochs` epochs, keeping the checkpoint with the highest validation MRR.
pub fn fit(config: &TrainConfig, ds: &KgDataset) -> Result<FitResult> {
    fit_with_log(config, ds, &mut std::io::sink())
}

/// [`fit`] that also writes one `epoch<TAB>loss[<TAB>valid_mrr]` line per epoch to `log`.
pub fn fit_with_log(config: &TrainConfig, ds: &KgDataset, log: &mut dyn Write) -> Result<FitResult> {
    config.validate()?;
    if !ds.is_augmented() {
        return Err(Error::NotAugmented);
    }
    let mut model = initialize(config, ds)?;
    let mut optim = OptimState::new(&model, config.adam_hyper(), config.renorm_every);
    let mut history = Vec::new();
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut best: Option<Checkpoint> = None;
    let log_err = |e| Error::io("<training log>", e);

    for epoch in 0..config.epochs {
        let mut rng = epoch_rng(config.seed, epoch);
        let loss = train_epoch(&mut model, &mut optim, ds, config, &mut rng, epoch)?;
        epoch_losses.push(loss);
        let done = epoch + 1;
        if done % config.eval_every == 0 {
            let report = evaluate(&model, ds, Split::Valid, config.tie_policy, 1)?;
            let mrr = report.metrics.mrr;
            writeln!(log, "{done}\t{loss}\t{mrr}").map_err(log_err)?;
            history.push(ValidationRecord {
                epoch: done,
                loss,
                metrics: report.metrics,
            });
            if best.as_ref().is_none_or(|b| mrr > b.best_valid_mrr) {
                best = Some(Checkpoint::new(config, ds, &model, &optim, done, mrr));
            }
        } else {
            writeln!(log, "{done}\t{loss}").map_err(log_err)?;
        }
    }
    let best = best.unwrap_or_else(|| {
        Checkpoint::new(config, ds, &model, &optim, config.epochs, f64::NAN)
    });
    Ok(FitResult {
        best,
        history,
        epoch_losses,
    })
}
