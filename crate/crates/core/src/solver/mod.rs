//! Alternating stochastic max-min training of a transport map against a
//! dual potential.
//!
//! Each outer step draws mini-batches from the marginals, takes `K1` Adam
//! steps decreasing the mini-batch Lagrangian
//!
//! `1/B sum_k [ c(x_k, T(x_k)) - f(T(x_k)) ] + 1/B sum_k f(y_k)`
//!
//! in the map parameters, then `K2` steps increasing it in the potential
//! parameters. Unequal input/output dimensions are handled by zero-padding
//! the source inside the cost term only; composite mode swaps the
//! discriminator argument for `G(x) = T(x) (.) M^c + x (.) M` while the cost
//! keeps seeing `T(x)`; conditional mode appends one-hot labels to both
//! networks' inputs and passes labels into the cost.

mod io;

pub use io::{load_checkpoint, save_checkpoint};

use serde::{Deserialize, Serialize};

use crate::costs::{CostSpec, Label};
use crate::error::{Error, Result};
use crate::nn::{
    adam_step, backward, ema_update, forward, init_params, AdamState, EmaState, Mode, NetFn,
    NetworkSpec, ParamVector,
};
use crate::rng;
use crate::tensor::Tensor;

// Stream tags for deterministic seed derivation.
const TAG_INIT_MAP: u64 = 0x01;
const TAG_INIT_POT: u64 = 0x02;
const TAG_DRAW: u64 = 0x1000_0000;
const TAG_DROPOUT: u64 = 0x2000_0000;
const TAG_EVAL_X: u64 = 0x03;
const TAG_EVAL_Y: u64 = 0x04;

/// A batch of samples with optional integer class labels.
#[derive(Debug, Clone)]
pub struct Batch {
    pub points: Tensor,
    pub labels: Option<Vec<usize>>,
}

impl Batch {
    pub fn unlabeled(points: Tensor) -> Self {
        Self {
            points,
            labels: None,
        }
    }

    pub fn labeled(points: Tensor, labels: Vec<usize>) -> Result<Self> {
        if labels.len() != points.rows() {
            return Err(Error::DimMismatch {
                context: "label count",
                expected: points.rows(),
                got: labels.len(),
            });
        }
        Ok(Self {
            points,
            labels: Some(labels),
        })
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }
}

/// A deterministic source of sample batches: the same `(n, seed)` pair must
/// always yield the same batch.
pub trait Sampler: Sync {
    fn dim(&self) -> usize;
    fn sample(&self, n: usize, seed: u64) -> Batch;
}

/// Assigns a class label to a mapped point; stands in for the pretrained
/// target-domain classifier of the class-preserving setup.
pub trait LabelClassifier: Sync {
    fn classify(&self, y: &[f64]) -> Label;
}

/// Training hyperparameters and structural switches.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainConfig {
    /// Outer iterations (K).
    pub outer_steps: usize,
    /// Map updates per outer iteration (K1).
    pub map_steps: usize,
    /// Potential updates per outer iteration (K2).
    pub potential_steps: usize,
    pub batch_size: usize,
    pub lr_map: f64,
    pub lr_potential: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    pub weight_decay: f64,
    /// EMA decay for the map parameters, used at evaluation time.
    pub ema_decay: Option<f64>,
    pub seed: u64,
    /// History record cadence in outer steps.
    pub eval_every: usize,
    /// Evaluation batch size for history records.
    pub eval_batch: usize,
    /// Zero-pad source samples inside the cost term up to the map's output
    /// dimension.
    pub pad_source: bool,
    /// Binary mask turning on composite discriminator input.
    pub composite_mask: Option<Vec<f64>>,
    /// One-hot label conditioning for both networks.
    pub conditional: bool,
    /// Redraw mini-batches for every inner step instead of once per outer
    /// iteration.
    pub resample_inner: bool,
    /// Abort once |lagrangian| exceeds this.
    pub divergence_ceiling: f64,
    /// Parameter snapshot cadence in outer steps.
    pub checkpoint_every: Option<usize>,
}

impl TrainConfig {
    pub fn new(seed: u64) -> Self {
        Self {
            outer_steps: 2000,
            map_steps: 5,
            potential_steps: 5,
            batch_size: 256,
            lr_map: 1e-3,
            lr_potential: 1e-3,
            beta1: 0.5,
            beta2: 0.999,
            adam_eps: 1e-8,
            weight_decay: 0.0,
            ema_decay: Some(0.995),
            seed,
            eval_every: 200,
            eval_batch: 2048,
            pad_source: false,
            composite_mask: None,
            conditional: false,
            resample_inner: true,
            divergence_ceiling: 1e6,
            checkpoint_every: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("outer_steps", self.outer_steps),
            ("map_steps", self.map_steps),
            ("potential_steps", self.potential_steps),
            ("batch_size", self.batch_size),
            ("eval_every", self.eval_every),
            ("eval_batch", self.eval_batch),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be >= 1")));
            }
        }
        if self.lr_map <= 0.0 || self.lr_potential <= 0.0 {
            return Err(Error::InvalidConfig("learning rates must be positive".into()));
        }
        if let Some(d) = self.ema_decay {
            if !(0.0 < d && d < 1.0) {
                return Err(Error::InvalidConfig(format!(
                    "ema_decay must lie in (0, 1), got {d}"
                )));
            }
        }
        if let Some(ce) = self.checkpoint_every {
            if ce == 0 {
                return Err(Error::InvalidConfig("checkpoint_every must be >= 1".into()));
            }
        }
        if !self.divergence_ceiling.is_finite() || self.divergence_ceiling <= 0.0 {
            return Err(Error::InvalidConfig("divergence_ceiling must be positive".into()));
        }
        Ok(())
    }
}

/// Frozen training artifact: the map network plus the structural metadata
/// needed to evaluate it the way it was trained.
#[derive(Debug, Clone)]
pub struct TrainedMap {
    pub spec: NetworkSpec,
    pub params: ParamVector,
    pub ema_params: Option<ParamVector>,
    pub pad_to: Option<usize>,
    pub composite_mask: Option<Vec<f64>>,
    pub conditional: bool,
}

impl TrainedMap {
    /// Parameters used at evaluation time (EMA when tracked).
    pub fn eval_params(&self) -> &ParamVector {
        self.ema_params.as_ref().unwrap_or(&self.params)
    }

    /// Applies the map to raw source samples. Conditional maps require
    /// labels.
    pub fn apply(&self, x: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let input = conditioned_input(x, labels, &self.spec)?;
        forward(&self.spec, self.eval_params(), &input, Mode::Eval)
    }

    /// Composite output `G(x) = T(x) (.) M^c + x (.) M` when a mask is set,
    /// plain `T(x)` otherwise.
    pub fn apply_composite(&self, x: &Tensor, labels: Option<&[usize]>) -> Result<Tensor> {
        let z = self.apply(x, labels)?;
        match &self.composite_mask {
            None => Ok(z),
            Some(mask) => compose_masked(&z, x, mask),
        }
    }
}

/// One monitoring record of the training trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HistoryRecord {
    pub step: usize,
    pub lagrangian: f64,
    pub transport_cost: f64,
    pub f_target_mean: f64,
    pub f_pushforward_mean: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<HistoryRecord>,
}

impl TrainHistory {
    pub fn final_record(&self) -> Option<&HistoryRecord> {
        self.records.last()
    }

    pub fn write_csv<W: std::io::Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "step,lagrangian,transport_cost,f_target_mean,f_pushforward_mean")?;
        for r in &self.records {
            writeln!(
                w,
                "{},{},{},{},{}",
                r.step, r.lagrangian, r.transport_cost, r.f_target_mean, r.f_pushforward_mean
            )?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate();
        let (_, header) = lines.next().ok_or(Error::Empty("history csv"))?;
        if header.trim() != "step,lagrangian,transport_cost,f_target_mean,f_pushforward_mean" {
            return Err(Error::Csv {
                line: 1,
                msg: "unexpected history header".into(),
            });
        }
        let mut records = Vec::new();
        for (i, line) in lines {
            if line.trim().is_empty() {
                continue;
            }
            let cols: Vec<&str> = line.split(',').collect();
            if cols.len() != 5 {
                return Err(Error::Csv {
                    line: i + 1,
                    msg: format!("expected 5 columns, got {}", cols.len()),
                });
            }
            let parse_f = |s: &str| -> std::result::Result<f64, Error> {
                s.trim().parse().map_err(|_| Error::Csv {
                    line: i + 1,
                    msg: format!("bad float `{s}`"),
                })
            };
            records.push(HistoryRecord {
                step: cols[0].trim().parse().map_err(|_| Error::Csv {
                    line: i + 1,
                    msg: format!("bad step `{}`", cols[0]),
                })?,
                lagrangian: parse_f(cols[1])?,
                transport_cost: parse_f(cols[2])?,
                f_target_mean: parse_f(cols[3])?,
                f_pushforward_mean: parse_f(cols[4])?,
            });
        }
        Ok(Self { records })
    }
}

/// Parameter snapshot taken every `checkpoint_every` outer steps.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub map_params: ParamVector,
    pub map_ema: Option<ParamVector>,
    pub potential_params: ParamVector,
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub map: TrainedMap,
    pub potential_spec: NetworkSpec,
    pub potential_params: ParamVector,
    pub history: TrainHistory,
    pub checkpoints: Vec<Checkpoint>,
}

/// Zero-pads source samples on the right up to dimension `m`.
pub fn pad_source(x: &Tensor, m: usize) -> Result<Tensor> {
    let n = x.cols();
    if m < n {
        return Err(Error::DimMismatch {
            context: "pad target dimension",
            expected: n,
            got: m,
        });
    }
    if m == n {
        return Ok(x.clone());
    }
    let rows = x.rows();
    let mut out = Tensor::zeros(vec![rows, m]);
    for r in 0..rows {
        out.row_mut(r)[..n].copy_from_slice(x.row(r));
    }
    Ok(out)
}

/// Appends a one-hot label block when the spec is conditioned.
fn conditioned_input(points: &Tensor, labels: Option<&[usize]>, spec: &NetworkSpec) -> Result<Tensor> {
    if spec.condition_dim == 0 {
        return Ok(points.clone());
    }
    let labels = labels.ok_or_else(|| {
        Error::InvalidConfig("conditional network requires labeled samples".into())
    })?;
    if labels.len() != points.rows() {
        return Err(Error::DimMismatch {
            context: "label count",
            expected: points.rows(),
            got: labels.len(),
        });
    }
    let d = points.cols();
    let width = d + spec.condition_dim;
    let mut out = Tensor::zeros(vec![points.rows(), width]);
    for r in 0..points.rows() {
        let label = labels[r];
        if label >= spec.condition_dim {
            return Err(Error::InvalidConfig(format!(
                "label {label} exceeds condition width {}",
                spec.condition_dim
            )));
        }
        let row = out.row_mut(r);
        row[..d].copy_from_slice(points.row(r));
        row[d + label] = 1.0;
    }
    Ok(out)
}

/// `G = z (.) (1 - mask) + x (.) mask`, elementwise per row.
fn compose_masked(z: &Tensor, x: &Tensor, mask: &[f64]) -> Result<Tensor> {
    if x.cols() != z.cols() || mask.len() != z.cols() {
        return Err(Error::DimMismatch {
            context: "composite mask width",
            expected: z.cols(),
            got: mask.len().min(x.cols()),
        });
    }
    let mut out = z.clone();
    for r in 0..z.rows() {
        let xr = x.row(r);
        let or = out.row_mut(r);
        for j in 0..mask.len() {
            or[j] = or[j] * (1.0 - mask[j]) + xr[j] * mask[j];
        }
    }
    Ok(out)
}

/// Structural switches shared by the Lagrangian evaluation paths.
#[derive(Default, Clone, Copy)]
pub struct EvalOptions<'a> {
    pub pad_to: Option<usize>,
    pub composite_mask: Option<&'a [f64]>,
    pub classifier: Option<&'a dyn LabelClassifier>,
}

/// Decomposed value of the mini-batch Lagrangian.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LagrangianTerms {
    pub value: f64,
    pub transport_cost: f64,
    pub f_target_mean: f64,
    pub f_pushforward_mean: f64,
}

fn cost_labels(
    x_labels: Option<&[usize]>,
    k: usize,
    z_row: &[f64],
    classifier: Option<&dyn LabelClassifier>,
) -> Option<(Label, Label)> {
    let lx = x_labels?.get(k).copied()?;
    let mapped = match classifier {
        Some(c) => c.classify(z_row),
        None => Label::Class(lx),
    };
    Some((Label::Class(lx), mapped))
}

/// Exact mini-batch Lagrangian (eval mode, dropout off).
///
/// With a composite mask the discriminator argument is `G(x)` while the
/// transport cost still sees `T(x)`; with `f` constant the potential terms
/// cancel and the value is the mean transport cost.
pub fn lagrangian_batch(
    map: NetFn,
    potential: NetFn,
    cost: &CostSpec,
    x: &Batch,
    y: &Batch,
    opts: &EvalOptions,
) -> Result<LagrangianTerms> {
    let b = x.len();
    if b == 0 || y.is_empty() {
        return Err(Error::Empty("lagrangian batch"));
    }
    let map_in = conditioned_input(&x.points, x.labels.as_deref(), map.spec)?;
    let z = map.eval_batch(&map_in)?;

    let x_cost = match opts.pad_to {
        Some(m) => pad_source(&x.points, m)?,
        None => x.points.clone(),
    };
    let mut cost_sum = 0.0;
    for k in 0..b {
        let labels = cost_labels(x.labels.as_deref(), k, z.row(k), opts.classifier);
        let pair = labels.as_ref().map(|(a, b)| (a, b));
        cost_sum += cost.eval(x_cost.row(k), z.row(k), pair)?;
    }
    let transport_cost = cost_sum / b as f64;

    let u = match opts.composite_mask {
        Some(mask) => compose_masked(&z, &x.points, mask)?,
        None => z,
    };
    let f_push_in = conditioned_input(&u, x.labels.as_deref(), potential.spec)?;
    let f_push = potential.eval_batch(&f_push_in)?;
    let f_pushforward_mean = f_push.data().iter().sum::<f64>() / b as f64;

    let f_tgt_in = conditioned_input(&y.points, y.labels.as_deref(), potential.spec)?;
    let f_tgt = potential.eval_batch(&f_tgt_in)?;
    let f_target_mean = f_tgt.data().iter().sum::<f64>() / y.len() as f64;

    let value = transport_cost - f_pushforward_mean + f_target_mean;
    if !value.is_finite() {
        return Err(Error::NonFinite("lagrangian value"));
    }
    Ok(LagrangianTerms {
        value,
        transport_cost,
        f_target_mean,
        f_pushforward_mean,
    })
}

struct LoopCtx<'a> {
    map_spec: &'a NetworkSpec,
    pot_spec: &'a NetworkSpec,
    cost: &'a CostSpec,
    pad_to: Option<usize>,
    composite_mask: Option<&'a [f64]>,
    classifier: Option<&'a dyn LabelClassifier>,
    batch_inv: f64,
}

/// Gradient of the Lagrangian in the map parameters on one batch.
fn map_grads(
    ctx: &LoopCtx,
    theta: &ParamVector,
    eta: &ParamVector,
    xb: &Batch,
    map_seed: u64,
    pot_seed: u64,
) -> Result<Vec<f64>> {
    let b = xb.len();
    let m = ctx.map_spec.output_dim;
    let map_in = conditioned_input(&xb.points, xb.labels.as_deref(), ctx.map_spec)?;
    let map_mode = Mode::Train { rng_seed: map_seed };
    let z = forward(ctx.map_spec, theta, &map_in, map_mode)?;

    let x_cost = match ctx.pad_to {
        Some(target) => pad_source(&xb.points, target)?,
        None => xb.points.clone(),
    };

    // d/dz of the mean transport cost.
    let mut upstream = Tensor::zeros(vec![b, m]);
    for k in 0..b {
        let labels = cost_labels(xb.labels.as_deref(), k, z.row(k), ctx.classifier);
        let pair = labels.as_ref().map(|(a, b)| (a, b));
        let g = ctx.cost.grad_y(x_cost.row(k), z.row(k), pair)?;
        let row = upstream.row_mut(k);
        for j in 0..m {
            row[j] += g[j] * ctx.batch_inv;
        }
    }

    // d/dz of -mean f(U) where U = G(z) or z.
    let u = match ctx.composite_mask {
        Some(mask) => compose_masked(&z, &xb.points, mask)?,
        None => z.clone(),
    };
    let f_in = conditioned_input(&u, xb.labels.as_deref(), ctx.pot_spec)?;
    let f_mode = Mode::Train { rng_seed: pot_seed };
    let mut f_upstream = Tensor::zeros(vec![b, 1]);
    f_upstream.data_mut().fill(-ctx.batch_inv);
    let (_, f_in_grads) = backward(ctx.pot_spec, eta, &f_in, f_mode, &f_upstream)?;
    for k in 0..b {
        let gr = f_in_grads.row(k);
        let row = upstream.row_mut(k);
        match ctx.composite_mask {
            Some(mask) => {
                for j in 0..m {
                    row[j] += gr[j] * (1.0 - mask[j]);
                }
            }
            None => {
                for j in 0..m {
                    row[j] += gr[j];
                }
            }
        }
    }

    let (theta_grads, _) = backward(ctx.map_spec, theta, &map_in, map_mode, &upstream)?;
    Ok(theta_grads)
}

/// Gradient (for minimization) of the negated Lagrangian in the potential
/// parameters on one batch: Adam on this ascends the Lagrangian.
#[allow(clippy::too_many_arguments)]
fn potential_grads(
    ctx: &LoopCtx,
    theta: &ParamVector,
    eta: &ParamVector,
    xb: &Batch,
    yb: &Batch,
    map_seed: u64,
    pot_seed_push: u64,
    pot_seed_tgt: u64,
) -> Result<Vec<f64>> {
    let b = xb.len();
    let map_in = conditioned_input(&xb.points, xb.labels.as_deref(), ctx.map_spec)?;
    let z = forward(ctx.map_spec, theta, &map_in, Mode::Train { rng_seed: map_seed })?;
    let u = match ctx.composite_mask {
        Some(mask) => compose_masked(&z, &xb.points, mask)?,
        None => z,
    };

    let f_push_in = conditioned_input(&u, xb.labels.as_deref(), ctx.pot_spec)?;
    let mut up_push = Tensor::zeros(vec![b, 1]);
    up_push.data_mut().fill(-1.0 / b as f64);
    let (g_push, _) = backward(
        ctx.pot_spec,
        eta,
        &f_push_in,
        Mode::Train { rng_seed: pot_seed_push },
        &up_push,
    )?;

    let f_tgt_in = conditioned_input(&yb.points, yb.labels.as_deref(), ctx.pot_spec)?;
    let mut up_tgt = Tensor::zeros(vec![yb.len(), 1]);
    up_tgt.data_mut().fill(1.0 / yb.len() as f64);
    let (g_tgt, _) = backward(
        ctx.pot_spec,
        eta,
        &f_tgt_in,
        Mode::Train { rng_seed: pot_seed_tgt },
        &up_tgt,
    )?;

    // Ascent direction is g_push + g_tgt; negate for the minimizing Adam.
    Ok(g_push
        .iter()
        .zip(&g_tgt)
        .map(|(&a, &b)| -(a + b))
        .collect())
}

fn structural_checks(
    source_dim: usize,
    target_dim: usize,
    cost: &CostSpec,
    map_spec: &NetworkSpec,
    pot_spec: &NetworkSpec,
    config: &TrainConfig,
) -> Result<()> {
    map_spec.validate()?;
    pot_spec.validate()?;
    if map_spec.input_dim != source_dim {
        return Err(Error::DimMismatch {
            context: "map input vs source",
            expected: source_dim,
            got: map_spec.input_dim,
        });
    }
    if pot_spec.output_dim != 1 {
        return Err(Error::InvalidSpec("potential must have scalar output".into()));
    }
    if pot_spec.input_dim != map_spec.output_dim {
        return Err(Error::DimMismatch {
            context: "potential input vs map output",
            expected: map_spec.output_dim,
            got: pot_spec.input_dim,
        });
    }
    if target_dim != map_spec.output_dim {
        return Err(Error::DimMismatch {
            context: "target dim vs map output",
            expected: map_spec.output_dim,
            got: target_dim,
        });
    }
    let expected_n = if config.pad_source {
        if map_spec.output_dim < source_dim {
            return Err(Error::InvalidConfig(
                "pad_source requires map output dim >= source dim".into(),
            ));
        }
        map_spec.output_dim
    } else {
        source_dim
    };
    if cost.dims() != (expected_n, map_spec.output_dim) {
        return Err(Error::InvalidConfig(format!(
            "cost dims {:?} do not match ({}, {})",
            cost.dims(),
            expected_n,
            map_spec.output_dim
        )));
    }
    if let Some(mask) = &config.composite_mask {
        if mask.len() != map_spec.output_dim {
            return Err(Error::InvalidConfig("composite mask width mismatch".into()));
        }
        if map_spec.input_dim != map_spec.output_dim {
            return Err(Error::InvalidConfig(
                "composite mode requires equal input/output dims".into(),
            ));
        }
        match cost.kind() {
            crate::costs::CostKind::MaskedMse { mask: cm, .. } if cm == mask => {}
            _ => {
                return Err(Error::InvalidConfig(
                    "composite mode requires a masked_mse cost with the same mask".into(),
                ))
            }
        }
    }
    if config.conditional {
        if map_spec.condition_dim == 0 || map_spec.condition_dim != pot_spec.condition_dim {
            return Err(Error::InvalidConfig(
                "conditional mode needs equal nonzero condition dims on both networks".into(),
            ));
        }
    } else if map_spec.condition_dim != 0 || pot_spec.condition_dim != 0 {
        return Err(Error::InvalidConfig(
            "condition dims set but conditional mode is off".into(),
        ));
    }
    Ok(())
}

/// Runs the alternating max-min loop and returns the trained map, the
/// potential, the monitoring history and any parameter snapshots.
///
/// Total gradient-step count is `K (K1 + K2)`. The run aborts with a
/// divergence diagnostic if the Lagrangian leaves the configured ceiling or
/// stops being finite.
pub fn train(
    source: &dyn Sampler,
    target: &dyn Sampler,
    cost: &CostSpec,
    map_spec: &NetworkSpec,
    potential_spec: &NetworkSpec,
    config: &TrainConfig,
    classifier: Option<&dyn LabelClassifier>,
) -> Result<TrainOutput> {
    config.validate()?;
    structural_checks(
        source.dim(),
        target.dim(),
        cost,
        map_spec,
        potential_spec,
        config,
    )?;

    let mut theta = init_params(map_spec, rng::mix(config.seed, TAG_INIT_MAP))?;
    let mut eta = init_params(potential_spec, rng::mix(config.seed, TAG_INIT_POT))?;
    let mut adam_map = AdamState::new(theta.len(), config.lr_map)
        .with_betas(config.beta1, config.beta2)
        .with_eps(config.adam_eps)
        .with_weight_decay(config.weight_decay);
    let mut adam_pot = AdamState::new(eta.len(), config.lr_potential)
        .with_betas(config.beta1, config.beta2)
        .with_eps(config.adam_eps)
        .with_weight_decay(config.weight_decay);
    let mut ema = match config.ema_decay {
        Some(d) => Some(EmaState::new(&theta, d)?),
        None => None,
    };

    let ctx = LoopCtx {
        map_spec,
        pot_spec: potential_spec,
        cost,
        pad_to: config.pad_source.then_some(map_spec.output_dim),
        composite_mask: config.composite_mask.as_deref(),
        classifier,
        batch_inv: 1.0 / config.batch_size as f64,
    };
    let opts = EvalOptions {
        pad_to: ctx.pad_to,
        composite_mask: ctx.composite_mask,
        classifier,
    };

    let x_eval = source.sample(config.eval_batch, rng::mix(config.seed, TAG_EVAL_X));
    let y_eval = target.sample(config.eval_batch, rng::mix(config.seed, TAG_EVAL_Y));

    let mut history = TrainHistory::default();
    let mut checkpoints = Vec::new();
    let mut draw_ctr: u64 = 0;
    let mut dropout_ctr: u64 = 0;
    let next_draw = |ctr: &mut u64| {
        let s = rng::mix(config.seed, TAG_DRAW + *ctr);
        *ctr += 1;
        s
    };
    let next_dropout = |ctr: &mut u64| {
        let s = rng::mix(config.seed, TAG_DROPOUT + *ctr);
        *ctr += 1;
        s
    };

    let diverged = |step: usize, value: f64, history: &TrainHistory| Error::Diverged {
        step,
        value,
        history: Box::new(history.clone()),
    };

    for outer in 0..config.outer_steps {
        let mut xb = source.sample(config.batch_size, next_draw(&mut draw_ctr));
        let mut yb = target.sample(config.batch_size, next_draw(&mut draw_ctr));

        for _ in 0..config.map_steps {
            if config.resample_inner {
                xb = source.sample(config.batch_size, next_draw(&mut draw_ctr));
            }
            let ms = next_dropout(&mut dropout_ctr);
            let ps = next_dropout(&mut dropout_ctr);
            let grads = map_grads(&ctx, &theta, &eta, &xb, ms, ps)
                .map_err(|e| match e {
                    Error::NonFinite(_) => diverged(outer + 1, f64::NAN, &history),
                    other => other,
                })?;
            let (t2, a2) = adam_step(&theta, &grads, &adam_map)
                .map_err(|_| diverged(outer + 1, f64::NAN, &history))?;
            theta = t2;
            adam_map = a2;
            if let Some(e) = &ema {
                ema = Some(ema_update(e, &theta));
            }
        }

        for _ in 0..config.potential_steps {
            if config.resample_inner {
                xb = source.sample(config.batch_size, next_draw(&mut draw_ctr));
                yb = target.sample(config.batch_size, next_draw(&mut draw_ctr));
            }
            let ms = next_dropout(&mut dropout_ctr);
            let ps1 = next_dropout(&mut dropout_ctr);
            let ps2 = next_dropout(&mut dropout_ctr);
            let grads = potential_grads(&ctx, &theta, &eta, &xb, &yb, ms, ps1, ps2)
                .map_err(|e| match e {
                    Error::NonFinite(_) => diverged(outer + 1, f64::NAN, &history),
                    other => other,
                })?;
            let (e2, a2) = adam_step(&eta, &grads, &adam_pot)
                .map_err(|_| diverged(outer + 1, f64::NAN, &history))?;
            eta = e2;
            adam_pot = a2;
        }

        let step = outer + 1;
        if step % config.eval_every == 0 || step == config.outer_steps {
            let eval_params = ema
                .as_ref()
                .map(|e| e.shadow_params())
                .unwrap_or_else(|| theta.clone());
            let terms = lagrangian_batch(
                NetFn::new(map_spec, &eval_params),
                NetFn::new(potential_spec, &eta),
                cost,
                &x_eval,
                &y_eval,
                &opts,
            );
            let terms = match terms {
                Ok(t) => t,
                Err(Error::NonFinite(_)) => {
                    return Err(diverged(step, f64::NAN, &history));
                }
                Err(other) => return Err(other),
            };
            if !terms.value.is_finite() || terms.value.abs() > config.divergence_ceiling {
                return Err(diverged(step, terms.value, &history));
            }
            history.records.push(HistoryRecord {
                step,
                lagrangian: terms.value,
                transport_cost: terms.transport_cost,
                f_target_mean: terms.f_target_mean,
                f_pushforward_mean: terms.f_pushforward_mean,
            });
        }

        if let Some(ce) = config.checkpoint_every {
            if step % ce == 0 {
                checkpoints.push(Checkpoint {
                    step,
                    map_params: theta.clone(),
                    map_ema: ema.as_ref().map(|e| e.shadow_params()),
                    potential_params: eta.clone(),
                });
            }
        }
    }

    Ok(TrainOutput {
        map: TrainedMap {
            spec: map_spec.clone(),
            params: theta,
            ema_params: ema.map(|e| e.shadow_params()),
            pad_to: ctx.pad_to,
            composite_mask: config.composite_mask.clone(),
            conditional: config.conditional,
        },
        potential_spec: potential_spec.clone(),
        potential_params: eta,
        history,
        checkpoints,
    })
}
