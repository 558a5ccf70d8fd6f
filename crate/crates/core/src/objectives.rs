//! Training objectives and the optimization loop.
//!
//! Two losses are optimized jointly: the insertion loss — the negative log
//! of the variable-length insertion estimate, summed over every predicted
//! slot of a composed row — and, for labelled corpora, an auxiliary style
//! classification loss. The loop samples one token interval per document
//! per step, so in expectation every insertion position of every document
//! contributes.

use std::rc::Rc;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::Serialize;

use crate::encoding::{compose_interval, compose_l2r, sample_interval, ComposedRow};
use crate::error::{Error, Result};
use crate::model::{
    classify_log_probs, span_log_probs, DropoutPlan, ModelConfig, ParamVars, Params,
};
use crate::numerics::{real, to_f64, AdamState, Graph, Scalar, SeedRng, Tensor, Var};
use crate::positional::SinusoidTable;

/// Documents shorter than this teach nothing: the sampled interval swallows
/// most of the line and leaves no usable context on either side.
pub const MIN_TRAIN_DOC_LEN: usize = 3;

/// One training document: token ids plus an optional style label.
///
/// Labelled documents are composed with their style token and additionally
/// contribute the classification loss; unlabelled ones contribute only the
/// unconditional insertion loss.
#[derive(Debug, Clone)]
pub struct TrainDoc {
    pub ids: Vec<u32>,
    pub style: Option<usize>,
}

impl TrainDoc {
    pub fn plain(ids: Vec<u32>) -> Self {
        TrainDoc { ids, style: None }
    }

    pub fn styled(ids: Vec<u32>, style: usize) -> Self {
        TrainDoc {
            ids,
            style: Some(style),
        }
    }
}

/// Hyperparameters of the training loop.
#[derive(Debug, Clone)]
pub struct TrainConfig {
    /// Number of optimization steps.
    pub steps: usize,
    /// Documents per step; each contributes one sampled interval.
    pub batch_size: usize,
    /// Peak learning rate, reached after `warmup` steps and held constant.
    pub lr: f64,
    /// Steps of linear learning-rate warmup from zero.
    pub warmup: usize,
    pub beta1: f64,
    pub beta2: f64,
    /// Weight of the insertion loss.
    pub lambda_ins: f64,
    /// Weight of the style classification loss.
    pub lambda_cls: f64,
    /// Global gradient-norm ceiling.
    pub grad_clip: f64,
    /// Exclude single-token intervals from sampling.
    pub strict_intervals: bool,
    /// Emit a [`LossReport`] every this many steps (the final step always
    /// reports).
    pub report_every: usize,
    /// Measure wall-clock throughput. Off by default so that report streams
    /// are byte-identical across runs of the same seed.
    pub emit_timing: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 500,
            batch_size: 8,
            lr: 3e-4,
            warmup: 200,
            beta1: 0.9,
            beta2: 0.999,
            lambda_ins: 1.0,
            lambda_cls: 1.0,
            grad_clip: 1.0,
            strict_intervals: false,
            report_every: 25,
            emit_timing: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 || self.report_every == 0 {
            return Err(Error::Config(
                "steps, batch_size and report_every must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.lr)));
        }
        if self.lambda_ins < 0.0 || self.lambda_cls < 0.0 {
            return Err(Error::Config("loss weights must be non-negative".into()));
        }
        if !(self.grad_clip > 0.0) {
            return Err(Error::Config(format!(
                "gradient clip {} must be positive",
                self.grad_clip
            )));
        }
        Ok(())
    }
}

/// One line of the training metrics stream.
///
/// `ins_nll` is normalized per predicted slot (nats per token), `cls_ce`
/// is the mean cross-entropy per labelled document of the step (zero when
/// the step carried none), and `tps` is composed tokens per second — kept
/// at zero unless timing was requested, so the stream stays deterministic.
#[derive(Debug, Clone, Serialize)]
pub struct LossReport {
    pub step: usize,
    pub ins_nll: f64,
    pub cls_ce: f64,
    pub tps: f64,
}

/// Mean over rows of the summed per-slot negative log-likelihood: every
/// span token, plus the end-of-insertion marker when the row carries one.
///
/// `plans` supplies one dropout plan per row, or is empty for none.
pub fn insertion_loss<F: Scalar>(
    g: &Graph<F>,
    pv: &ParamVars,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
    rows: &[ComposedRow],
    plans: &[DropoutPlan<F>],
) -> Result<Var> {
    if rows.is_empty() {
        return Err(Error::Contract("insertion loss needs at least one row".into()));
    }
    if !plans.is_empty() && plans.len() != rows.len() {
        return Err(Error::Contract(format!(
            "{} dropout plans for {} rows",
            plans.len(),
            rows.len()
        )));
    }
    let none = DropoutPlan::none();
    let mut total: Option<Var> = None;
    for (r, row) in rows.iter().enumerate() {
        let plan = plans.get(r).unwrap_or(&none);
        let (lp, targets) = span_log_probs(g, pv, config, sinusoid, row, plan)?;
        let picked = g.pick_per_row(lp, Rc::new(targets));
        let nll = g.scale(g.sum(picked), real::<F>(-1.0));
        total = Some(match total {
            Some(t) => g.add(t, nll),
            None => nll,
        });
    }
    Ok(g.scale(total.expect("at least one row"), real::<F>(1.0 / rows.len() as f64)))
}

/// Mean classifier cross-entropy over labelled documents.
pub fn style_loss<F: Scalar>(
    g: &Graph<F>,
    pv: &ParamVars,
    config: &ModelConfig,
    sinusoid: &SinusoidTable<F>,
    batch: &[(Vec<u32>, usize)],
    plans: &[DropoutPlan<F>],
) -> Result<Var> {
    if batch.is_empty() {
        return Err(Error::Contract("style loss needs at least one document".into()));
    }
    if !plans.is_empty() && plans.len() != batch.len() {
        return Err(Error::Contract(format!(
            "{} dropout plans for {} documents",
            plans.len(),
            batch.len()
        )));
    }
    let none = DropoutPlan::none();
    let mut total: Option<Var> = None;
    for (r, (ids, label)) in batch.iter().enumerate() {
        if *label >= config.num_styles {
            return Err(Error::Contract(format!(
                "style label {label} outside the model's {} classes",
                config.num_styles
            )));
        }
        let plan = plans.get(r).unwrap_or(&none);
        let lp = classify_log_probs(g, pv, config, sinusoid, ids, plan)?;
        let picked = g.pick_per_row(lp, Rc::new(vec![*label]));
        let ce = g.scale(g.sum(picked), real::<F>(-1.0));
        total = Some(match total {
            Some(t) => g.add(t, ce),
            None => ce,
        });
    }
    Ok(g.scale(total.expect("at least one document"), real::<F>(1.0 / batch.len() as f64)))
}

/// Indices of documents long enough to train on.
fn usable_docs(docs: &[TrainDoc], config: &ModelConfig) -> Result<Vec<usize>> {
    let mut usable = Vec::new();
    for (i, doc) in docs.iter().enumerate() {
        if let Some(s) = doc.style {
            if s >= config.num_styles {
                return Err(Error::Contract(format!(
                    "document {i} carries style label {s} but the model has {} classes",
                    config.num_styles
                )));
            }
        }
        for &t in &doc.ids {
            if t as usize >= config.vocab_size {
                return Err(Error::OutOfVocab(format!(
                    "token id {t} in document {i} outside vocabulary of {}",
                    config.vocab_size
                )));
            }
        }
        if doc.ids.len() >= MIN_TRAIN_DOC_LEN {
            usable.push(i);
        }
    }
    if usable.is_empty() {
        return Err(Error::Corpus(format!(
            "no usable documents: all {} are shorter than {MIN_TRAIN_DOC_LEN} tokens",
            docs.len()
        )));
    }
    Ok(usable)
}

/// Cycles through the corpus in a fresh shuffled order each epoch.
struct DocSchedule {
    usable: Vec<usize>,
    order: Vec<usize>,
    cursor: usize,
    epoch: u64,
    root: SeedRng,
}

impl DocSchedule {
    fn new(usable: Vec<usize>, root: SeedRng) -> Self {
        let mut s = DocSchedule {
            usable,
            order: Vec::new(),
            cursor: 0,
            epoch: 0,
            root,
        };
        s.reshuffle();
        s
    }

    fn reshuffle(&mut self) {
        self.order = self.usable.clone();
        let mut rng = self.root.split_indexed("epoch", self.epoch);
        self.order.shuffle(&mut rng);
        self.epoch += 1;
    }

    fn next(&mut self) -> usize {
        if self.cursor == self.order.len() {
            self.reshuffle();
            self.cursor = 0;
        }
        let i = self.order[self.cursor];
        self.cursor += 1;
        i
    }
}

/// Trains a model from scratch and returns its parameters.
///
/// Deterministic given `train_config.seed`: initialization, shuffling,
/// interval sampling and dropout all derive from labelled splits of that
/// seed, so two runs produce identical parameters and identical reports.
/// `on_report` receives a [`LossReport`] every `report_every` steps and at
/// the final step.
pub fn train<F: Scalar>(
    docs: &[TrainDoc],
    model_config: &ModelConfig,
    train_config: &TrainConfig,
    mut on_report: impl FnMut(&LossReport) -> Result<()>,
) -> Result<Params<F>> {
    model_config.validate()?;
    train_config.validate()?;
    if docs.is_empty() {
        return Err(Error::Corpus("training corpus is empty".into()));
    }
    let usable = usable_docs(docs, model_config)?;

    let root = SeedRng::new(train_config.seed);
    let mut params: Params<F> = Params::init(model_config, &mut root.split("init"));
    let sinusoid = SinusoidTable::new(model_config.d_model, model_config.max_offset)?;
    let shapes: Vec<Vec<usize>> = params
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect();
    let mut adam = AdamState::new(
        shapes,
        real::<F>(train_config.lr),
        real::<F>(train_config.beta1),
        real::<F>(train_config.beta2),
    );
    let mut schedule = DocSchedule::new(usable, root.split("order"));

    let mut window_tokens = 0usize;
    let mut window_start = Instant::now();
    for step in 0..train_config.steps {
        let mut rng = root.split_indexed("step", step as u64);

        let mut rows = Vec::with_capacity(train_config.batch_size);
        let mut plans = Vec::with_capacity(train_config.batch_size);
        let mut cls_batch = Vec::new();
        let mut cls_plans = Vec::new();
        let mut slots = 0usize;
        let mut tokens = 0usize;
        for _ in 0..train_config.batch_size {
            let doc = &docs[schedule.next()];
            let n = doc.ids.len();
            let (i, j) = sample_interval(&mut rng, n, train_config.strict_intervals)?;
            let row = if model_config.l2r {
                compose_l2r(&doc.ids[..i], &doc.ids[i..=j], &doc.ids[j + 1..], doc.style, false)?
            } else {
                compose_interval(&doc.ids, i, j + 1, doc.style, false)?
            };
            slots += row.layout.b - row.layout.a + 1;
            tokens += row.ids.len();
            plans.push(DropoutPlan::sample(
                model_config.dropout,
                model_config.n_layers,
                row.ids.len(),
                model_config.d_model,
                &mut rng,
            ));
            rows.push(row);
            if train_config.lambda_cls > 0.0 {
                if let Some(s) = doc.style {
                    cls_plans.push(DropoutPlan::sample(
                        model_config.dropout,
                        model_config.n_layers,
                        n + 1,
                        model_config.d_model,
                        &mut rng,
                    ));
                    cls_batch.push((doc.ids.clone(), s));
                    tokens += n + 1;
                }
            }
        }

        let g = Graph::new();
        let pv = ParamVars::new(&g, &params, true);
        let ins = insertion_loss(&g, &pv, model_config, &sinusoid, &rows, &plans)?;
        let mut loss = g.scale(ins, real::<F>(train_config.lambda_ins));
        let mut cls_val = 0.0f64;
        if !cls_batch.is_empty() {
            let cls = style_loss(&g, &pv, model_config, &sinusoid, &cls_batch, &cls_plans)?;
            cls_val = to_f64(g.value(cls)[0]);
            loss = g.add(loss, g.scale(cls, real::<F>(train_config.lambda_cls)));
        }
        let ins_val = to_f64(g.value(ins)[0]);
        if !ins_val.is_finite() || !cls_val.is_finite() {
            return Err(Error::Contract(format!(
                "loss became non-finite at step {} (insertion {ins_val}, style {cls_val})",
                step + 1
            )));
        }
        let grads = g.backward(loss)?;

        let ordered = pv.ordered();
        let mut grad_tensors: Vec<Tensor<F>> = Vec::with_capacity(ordered.len());
        let mut sq = 0.0f64;
        for (var, shape) in ordered.iter().zip(adam_shapes(&params)) {
            let t = match grads.get(*var) {
                Some(t) => t.clone(),
                None => Tensor::zeros(shape),
            };
            sq += t.data().iter().map(|&x| to_f64(x) * to_f64(x)).sum::<f64>();
            grad_tensors.push(t);
        }
        drop(g);
        let norm = sq.sqrt();
        let clip_scale = if norm > train_config.grad_clip {
            train_config.grad_clip / norm
        } else {
            1.0
        };
        if clip_scale != 1.0 {
            for t in &mut grad_tensors {
                for x in t.data_mut() {
                    *x = *x * real::<F>(clip_scale);
                }
            }
        }
        let ramp = if train_config.warmup == 0 {
            1.0
        } else {
            ((step + 1) as f64 / train_config.warmup as f64).min(1.0)
        };
        adam.lr = real::<F>(train_config.lr * ramp);
        adam.begin_step();
        for (idx, ((_, param), grad)) in params
            .named_tensors_mut()
            .into_iter()
            .zip(&grad_tensors)
            .enumerate()
        {
            adam.update(idx, param, grad)?;
        }

        window_tokens += tokens;
        if (step + 1) % train_config.report_every == 0 || step + 1 == train_config.steps {
            let tps = if train_config.emit_timing {
                window_tokens as f64 / window_start.elapsed().as_secs_f64().max(1e-9)
            } else {
                0.0
            };
            on_report(&LossReport {
                step: step + 1,
                ins_nll: ins_val * rows.len() as f64 / slots as f64,
                cls_ce: cls_val,
                tps,
            })?;
            window_tokens = 0;
            window_start = Instant::now();
        }
    }
    Ok(params)
}

fn adam_shapes<F: Scalar>(params: &Params<F>) -> Vec<Vec<usize>> {
    params
        .named_tensors()
        .iter()
        .map(|(_, t)| t.shape().to_vec())
        .collect()
}
