//! Training loops: teacher pretraining, the alternating
//! discriminator/student schedule, and per-epoch metrics.
//!
//! The student never sees private data. Each student batch releases exactly
//! one sanitized distillation loss, and the accountant is advanced once per
//! release, so `sanitize_calls == accountant.steps()` holds by construction.
//! The teacher is read-only throughout; the discriminator, when present, is
//! trained on relaxed categorical samples and touches no private data either,
//! so its updates advance no privacy budget.

use std::time::Instant;

use serde::Serialize;

use crate::adversarial::{GanMode, DISC_PROB_CLAMP};
use crate::data::Dataset;
use crate::distill::{temperature_softmax, DistillBatch, ProbVector, EPS_FLOOR};
use crate::error::{Error, Result};
use crate::nn::optim::{OptimConfig, OptimizerState};
use crate::nn::tape::{Tape, Var};
use crate::nn::{argmax, init_net, DenseNet};
use crate::privacy::accountant::{default_orders, rdp_sgm_step, AccountantState, DpSpend};
use crate::privacy::{sanitize, DpConfig};
use crate::rng::{seeded, shuffled_indices, standard_gumbel, Rng};
use crate::tensor::Tensor;

/// Architecture and optimizer for one trainable network.
#[derive(Debug, Clone, Serialize)]
pub struct NetSpec {
    pub hidden: Vec<usize>,
    pub optim: OptimConfig,
}

/// Whether the student trains against the discriminator or from the
/// sanitized distillation signal alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainMode {
    Joint,
    KdOnly,
}

/// Full configuration for one transfer run.
///
/// `epochs` outer rounds each run `d_epochs` discriminator passes followed by
/// `s_epochs` student passes over the public set, in batches of `batch`.
/// `alpha` weighs the sanitized distillation loss against the adversarial
/// loss; `kd_only` ignores it and trains on the distillation term alone.
/// `relax_anneal` multiplies the relaxation temperature once per outer epoch.
#[derive(Debug, Clone, Serialize)]
pub struct TrainConfig {
    pub mode: TrainMode,
    pub epochs: usize,
    pub d_epochs: usize,
    pub s_epochs: usize,
    pub batch: usize,
    pub tau: f64,
    pub alpha: f64,
    pub relax_temp: f64,
    pub relax_anneal: f64,
    pub gan_mode: GanMode,
    pub gan_samples: usize,
    pub tau_sq_rescale: bool,
    pub condition_d_on_input: bool,
    pub student: NetSpec,
    pub discriminator: NetSpec,
    pub dp: DpConfig,
    pub seed: u64,
    pub per_batch: bool,
}

impl TrainConfig {
    /// Checks the schedule and hyperparameters against the public set the
    /// run will actually use.
    pub fn validate(&self, public: &Dataset) -> Result<()> {
        if self.epochs == 0 || self.s_epochs == 0 {
            return Err(Error::config(
                "epochs and s_epochs must be at least 1".to_string(),
            ));
        }
        if self.mode == TrainMode::Joint && self.d_epochs == 0 {
            return Err(Error::config(
                "joint mode needs at least one discriminator epoch per round".to_string(),
            ));
        }
        if self.batch == 0 || self.batch > public.len() {
            return Err(Error::config(format!(
                "batch size {} must be in 1..={}",
                self.batch,
                public.len()
            )));
        }
        if !(self.tau > 0.0) || !self.tau.is_finite() {
            return Err(Error::config(format!(
                "distillation temperature must be positive and finite, got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.alpha) || !self.alpha.is_finite() {
            return Err(Error::config(format!(
                "alpha must lie in [0, 1], got {}",
                self.alpha
            )));
        }
        if !(self.relax_temp > 0.0) || !self.relax_temp.is_finite() {
            return Err(Error::config(format!(
                "relaxation temperature must be positive and finite, got {}",
                self.relax_temp
            )));
        }
        if !(self.relax_anneal > 0.0) || self.relax_anneal > 1.0 {
            return Err(Error::config(format!(
                "relax_anneal must lie in (0, 1], got {}",
                self.relax_anneal
            )));
        }
        if self.gan_samples == 0 {
            return Err(Error::config(
                "gan_samples must be at least 1".to_string(),
            ));
        }
        self.student.optim.validate()?;
        self.discriminator.optim.validate()?;
        self.dp.validate()?;
        if self.dp.n_public != public.len() {
            return Err(Error::config(format!(
                "privacy config says n_public = {} but the public set has {} examples",
                self.dp.n_public,
                public.len()
            )));
        }
        let q = self.batch as f64 / public.len() as f64;
        if (self.dp.sample_rate - q).abs() > 1e-9 {
            return Err(Error::config(format!(
                "privacy sample rate {} does not match batch/public = {q}",
                self.dp.sample_rate
            )));
        }
        Ok(())
    }
}

/// Public and held-out test splits a run trains and reports on.
#[derive(Debug, Clone)]
pub struct DataBundle {
    pub public: Dataset,
    pub test: Dataset,
}

/// One outer epoch's worth of measurements. Adversarial losses are `None`
/// when the run has no discriminator. `floor_hits` counts probability-floor
/// activations inside the distillation loss over the epoch's batches; it
/// travels in this struct and the run summary, not in the metrics CSV.
#[derive(Debug, Clone, Serialize)]
pub struct MetricsRecord {
    pub epoch: usize,
    pub l_ds: f64,
    pub l_ds_noisy: f64,
    pub l_ad_d: Option<f64>,
    pub l_ad_s: Option<f64>,
    pub acc_student: f64,
    pub acc_teacher: f64,
    pub eps: f64,
    pub seconds: f64,
    pub floor_hits: u64,
}

/// One batch's losses, kept only when `per_batch` is set.
#[derive(Debug, Clone, Serialize)]
pub struct BatchRecord {
    pub epoch: usize,
    pub phase: &'static str,
    pub batch: usize,
    pub l_ds: Option<f64>,
    pub l_ds_noisy: Option<f64>,
    pub l_ad_d: Option<f64>,
    pub l_ad_s: Option<f64>,
}

/// Everything a finished run hands back.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub student: DenseNet,
    pub discriminator: Option<DenseNet>,
    pub metrics: Vec<MetricsRecord>,
    pub batches: Vec<BatchRecord>,
    pub spend: DpSpend,
    pub accountant: AccountantState,
    pub sanitize_calls: u64,
}

fn require_labels<'a>(data: &'a Dataset, what: &str) -> Result<&'a [usize]> {
    data.labels()
        .ok_or_else(|| Error::config(format!("{what} needs labels")))
}

fn batch_features(data: &Dataset, idx: &[usize]) -> Result<Tensor> {
    let d = data.dim();
    let mut out = Vec::with_capacity(idx.len() * d);
    for &i in idx {
        out.extend_from_slice(data.features().row(i));
    }
    Tensor::matrix(idx.len(), d, out)
}

fn gumbel_matrix(rows: usize, cols: usize, rng: &mut Rng) -> Tensor {
    let mut data = Vec::with_capacity(rows * cols);
    for _ in 0..rows * cols {
        data.push(standard_gumbel(rng));
    }
    Tensor::new(vec![rows, cols], data).expect("shape matches data by construction")
}

/// Trains a fresh classifier on labeled data with plain cross-entropy.
/// The net is drawn from `seeded(seed)` before any batch is touched, so
/// zero epochs returns the untouched initialization.
pub fn pretrain_teacher(
    data: &Dataset,
    hidden: &[usize],
    epochs: usize,
    batch: usize,
    optim: OptimConfig,
    seed: u64,
) -> Result<DenseNet> {
    let labels = require_labels(data, "teacher pretraining")?;
    if data.is_empty() {
        return Err(Error::config(
            "teacher pretraining needs a nonempty dataset".to_string(),
        ));
    }
    if batch == 0 {
        return Err(Error::config("batch size must be at least 1".to_string()));
    }
    if data.classes() < 2 {
        return Err(Error::config(format!(
            "teacher pretraining needs at least 2 classes, got {}",
            data.classes()
        )));
    }
    optim.validate()?;

    let mut sizes = vec![data.dim()];
    sizes.extend_from_slice(hidden);
    sizes.push(data.classes());
    let mut rng = seeded(seed);
    let mut net = init_net(&sizes, &mut rng)?;
    let mut opt = OptimizerState::new(optim, &net.param_shapes())?;

    for _ in 0..epochs {
        let order = shuffled_indices(data.len(), &mut rng);
        for chunk in order.chunks(batch) {
            let x = batch_features(data, chunk)?;
            let y: Vec<usize> = chunk.iter().map(|&i| labels[i]).collect();

            let mut tape = Tape::new();
            let bound = net.bind(&mut tape);
            let x_var = tape.leaf(x);
            let logits = net.forward_bound(&mut tape, &bound, x_var)?;
            let loss = tape.cross_entropy(logits, &y)?;
            let grads = tape.grad(loss)?;

            let flat = bound.flat();
            let grad_refs: Vec<&Tensor> = flat
                .iter()
                .map(|v| grads.get(*v).expect("all parameters reach the loss"))
                .collect();
            opt.step(&mut net.params_mut(), &grad_refs)?;
        }
    }
    Ok(net)
}

/// Fraction of labeled examples whose argmax prediction matches the label.
/// Ties resolve to the lowest class index, matching `argmax`.
pub fn evaluate(net: &DenseNet, data: &Dataset) -> Result<f64> {
    let labels = require_labels(data, "evaluation")?;
    if data.is_empty() {
        return Err(Error::config(
            "evaluation needs a nonempty dataset".to_string(),
        ));
    }
    let max_label = *labels.iter().max().expect("nonempty");
    if max_label >= net.output_dim() {
        return Err(Error::config(format!(
            "label {max_label} is out of range for a {}-output net",
            net.output_dim()
        )));
    }
    let logits = net.forward(data.features())?;
    let mut correct = 0usize;
    for (i, &label) in labels.iter().enumerate() {
        if argmax(logits.row(i)) == label {
            correct += 1;
        }
    }
    Ok(correct as f64 / data.len() as f64)
}

/// Relaxed sample batches for one GAN step, drawn at temperature 1 from each
/// net's predictive distribution. Teacher rows are drawn first, then student
/// rows, one Gumbel per class in class order.
fn relaxed_batches(
    teacher: &DenseNet,
    student: &DenseNet,
    x: &Tensor,
    relax_temp: f64,
    rng: &mut Rng,
) -> Result<(Tensor, Tensor)> {
    use crate::adversarial::{gumbel_sample, SampleSource};

    let classes = teacher.output_dim();
    let b = x.rows();
    let pt = temperature_softmax(&teacher.forward(x)?, 1.0)?;
    let ps = temperature_softmax(&student.forward(x)?, 1.0)?;
    let mut yt = Vec::with_capacity(b * classes);
    for p in &pt {
        yt.extend(gumbel_sample(p, SampleSource::Teacher, relax_temp, rng)?.y);
    }
    let mut ys = Vec::with_capacity(b * classes);
    for p in &ps {
        ys.extend(gumbel_sample(p, SampleSource::Student, relax_temp, rng)?.y);
    }
    Ok((
        Tensor::matrix(b, classes, yt)?,
        Tensor::matrix(b, classes, ys)?,
    ))
}

fn concat_cols(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let rows = a.rows();
    let mut data = Vec::with_capacity(rows * (a.cols() + b.cols()));
    for r in 0..rows {
        data.extend_from_slice(a.row(r));
        data.extend_from_slice(b.row(r));
    }
    Tensor::matrix(rows, a.cols() + b.cols(), data)
}

/// One pass of discriminator updates over the public set. The discriminator
/// ascends `mean ln D(y_T) + mean ln(1 - D(y_S))`; teacher and student are
/// read-only here. Returns the objective value per batch, pre-update.
///
/// Draw order per batch, after the epoch's index shuffle: teacher-sample
/// Gumbels row by row, then student-sample Gumbels row by row.
pub fn discriminator_epoch(
    cfg: &TrainConfig,
    teacher: &DenseNet,
    student: &DenseNet,
    disc: &mut DenseNet,
    opt: &mut OptimizerState,
    public: &Dataset,
    relax_temp: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let mut losses = Vec::new();
    let order = shuffled_indices(public.len(), rng);
    for chunk in order.chunks(cfg.batch) {
        let x = batch_features(public, chunk)?;
        let (yt, ys) = relaxed_batches(teacher, student, &x, relax_temp, rng)?;
        let (yt_in, ys_in) = if cfg.condition_d_on_input {
            (concat_cols(&yt, &x)?, concat_cols(&ys, &x)?)
        } else {
            (yt, ys)
        };

        let mut tape = Tape::new();
        let bound = disc.bind(&mut tape);
        let b = chunk.len();
        let ones = Tensor::matrix(b, 1, vec![1.0; b])?;

        let yt_var = tape.leaf(yt_in);
        let zt = disc.forward_bound(&mut tape, &bound, yt_var)?;
        let pt = tape.sigmoid(zt, DISC_PROB_CLAMP);
        let ln_t = tape.log_floored(pt, 0.0);
        let mean_t = tape.mean_all(ln_t)?;

        let ys_var = tape.leaf(ys_in);
        let zs = disc.forward_bound(&mut tape, &bound, ys_var)?;
        let ps = tape.sigmoid(zs, DISC_PROB_CLAMP);
        let one_minus = tape.sub_from_const(ps, ones)?;
        let ln_s = tape.log_floored(one_minus, 0.0);
        let mean_s = tape.mean_all(ln_s)?;

        let objective = tape.combine(mean_t, mean_s, 1.0, 1.0)?;
        losses.push(tape.value(objective).as_scalar()?);

        let descent = tape.scale_shift(objective, -1.0, 0.0);
        let grads = tape.grad(descent)?;
        let flat = bound.flat();
        let grad_refs: Vec<&Tensor> = flat
            .iter()
            .map(|v| grads.get(*v).expect("all parameters reach the loss"))
            .collect();
        opt.step(&mut disc.params_mut(), &grad_refs)?;
    }
    Ok(losses)
}

/// Per-batch student-epoch measurements.
#[derive(Debug, Clone)]
pub struct StudentBatchStats {
    pub l_ds: f64,
    pub l_ds_noisy: f64,
    pub l_ad_s: Option<f64>,
    pub floor_hits: u64,
}

/// One pass of student updates over the public set. Each batch releases one
/// sanitized distillation loss and advances the accountant by one step; with
/// a discriminator present the update descends
/// `alpha * L_DS + (1 - alpha) * L_AD`, otherwise the sanitized loss alone.
///
/// Draw order per batch, after the epoch's index shuffle: one Gaussian per
/// class for the sanitizer, then `gan_samples` Gumbel matrices row by row
/// (joint mode only).
#[allow(clippy::too_many_arguments)]
pub fn student_epoch(
    cfg: &TrainConfig,
    teacher: &DenseNet,
    student: &mut DenseNet,
    disc: Option<&DenseNet>,
    opt: &mut OptimizerState,
    public: &Dataset,
    accountant: &mut AccountantState,
    per_step_rdp: &[f64],
    relax_temp: f64,
    rng: &mut Rng,
) -> Result<Vec<StudentBatchStats>> {
    let denom = cfg.dp.sample_rate * cfg.dp.n_public as f64;
    let mut stats = Vec::new();
    let order = shuffled_indices(public.len(), rng);
    for chunk in order.chunks(cfg.batch) {
        let b = chunk.len();
        let classes = teacher.output_dim();
        let x = batch_features(public, chunk)?;
        let pt_tau = temperature_softmax(&teacher.forward(&x)?, cfg.tau)?;

        let mut tape = Tape::new();
        let bound_s = student.bind(&mut tape);
        let x_var = tape.leaf(x.clone());
        let z_s = student.forward_bound(&mut tape, &bound_s, x_var)?;
        let ps_tau = tape.softmax_rows(z_s, cfg.tau)?;

        let ps_rows: Vec<ProbVector> = (0..b)
            .map(|i| ProbVector::new(tape.value(ps_tau).row(i).to_vec(), cfg.tau))
            .collect::<Result<_>>()?;
        let (batch_v, floor_hits) = DistillBatch::from_probs(&pt_tau, &ps_rows)?;
        let (noisy, record) = sanitize(&batch_v, &cfg.dp, rng)?;
        accountant.compose(per_step_rdp, 1)?;

        // The released loss, rebuilt on the tape. Clip scales and noise are
        // treated as constants, so the gradient is that of the clipped,
        // normalized sum, while the value matches the sanitizer's output.
        let mut pt_flat = Vec::with_capacity(b * classes);
        let mut pt_ln_pt = Vec::with_capacity(b * classes);
        for p in &pt_tau {
            for &pk in p.probs() {
                pt_flat.push(pk);
                pt_ln_pt.push(if pk > 0.0 { pk * pk.ln() } else { 0.0 });
            }
        }
        let pt_const = Tensor::matrix(b, classes, pt_flat)?;
        let a_const = Tensor::matrix(b, classes, pt_ln_pt)?;
        let ln_ps = tape.log_floored(ps_tau, EPS_FLOOR);
        let weighted = tape.mul_const(ln_ps, pt_const)?;
        let v = tape.sub_from_const(weighted, a_const)?;
        let row_kl = tape.row_sum(v)?;
        let scales = Tensor::new(vec![b], record.clip_scales.clone())?;
        let clipped = tape.dot_const(row_kl, scales)?;
        let mut l_ds = tape.scale_shift(clipped, 1.0 / denom, record.noise_sum() / denom);
        if cfg.tau_sq_rescale {
            l_ds = tape.scale_shift(l_ds, cfg.tau * cfg.tau, 0.0);
        }

        let lad = match disc {
            Some(d) => {
                let bound_d = d.bind(&mut tape);
                let ps1 = tape.softmax_rows(z_s, 1.0)?;
                let ln_ps1 = tape.log_floored(ps1, EPS_FLOOR);
                let ones = Tensor::matrix(b, 1, vec![1.0; b])?;
                let mut acc: Option<Var> = None;
                for _ in 0..cfg.gan_samples {
                    let g = gumbel_matrix(b, classes, rng);
                    let perturbed = tape.add_const(ln_ps1, g)?;
                    let y = tape.softmax_rows(perturbed, relax_temp)?;
                    let y_in = if cfg.condition_d_on_input {
                        tape.concat_cols_const(y, x.clone())?
                    } else {
                        y
                    };
                    let zd = d.forward_bound(&mut tape, &bound_d, y_in)?;
                    let pd = tape.sigmoid(zd, DISC_PROB_CLAMP);
                    let term = match cfg.gan_mode {
                        GanMode::Minimax => {
                            let om = tape.sub_from_const(pd, ones.clone())?;
                            let ln = tape.log_floored(om, 0.0);
                            tape.mean_all(ln)?
                        }
                        GanMode::Nonsaturating => {
                            let ln = tape.log_floored(pd, 0.0);
                            let mean = tape.mean_all(ln)?;
                            tape.scale_shift(mean, -1.0, 0.0)
                        }
                    };
                    acc = Some(match acc {
                        None => term,
                        Some(sum) => tape.combine(sum, term, 1.0, 1.0)?,
                    });
                }
                let sum = acc.expect("gan_samples >= 1");
                Some(tape.scale_shift(sum, 1.0 / cfg.gan_samples as f64, 0.0))
            }
            None => None,
        };

        let total = match lad {
            Some(lad) => tape.combine(l_ds, lad, cfg.alpha, 1.0 - cfg.alpha)?,
            None => l_ds,
        };
        let grads = tape.grad(total)?;
        let flat = bound_s.flat();
        let grad_refs: Vec<&Tensor> = flat
            .iter()
            .map(|var| grads.get(*var).expect("all parameters reach the loss"))
            .collect();
        let l_ad_s = lad.map(|v| tape.value(v).as_scalar()).transpose()?;
        opt.step(&mut student.params_mut(), &grad_refs)?;

        stats.push(StudentBatchStats {
            l_ds: record.clean_loss,
            l_ds_noisy: noisy,
            l_ad_s,
            floor_hits,
        });
    }
    Ok(stats)
}

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

/// Runs the full alternating schedule against a pretrained teacher.
///
/// Every epoch evaluates both nets on the held-out test set and reports the
/// cumulative privacy spend at the configured delta. The whole run draws
/// from one seeded stream: student init, then discriminator init (joint
/// mode), then training draws in schedule order, so a seed pins the run.
pub fn run(cfg: &TrainConfig, teacher: &DenseNet, data: &DataBundle) -> Result<RunOutput> {
    cfg.validate(&data.public)?;
    require_labels(&data.test, "the test split")?;
    if data.test.is_empty() {
        return Err(Error::config("the test split is empty".to_string()));
    }
    if teacher.input_dim() != data.public.dim() || teacher.input_dim() != data.test.dim() {
        return Err(Error::config(format!(
            "teacher expects {}-dimensional inputs but public has {} and test has {}",
            teacher.input_dim(),
            data.public.dim(),
            data.test.dim()
        )));
    }
    let classes = teacher.output_dim();
    if classes < 2 {
        return Err(Error::config(
            "the teacher must output at least 2 classes".to_string(),
        ));
    }

    let mut rng = seeded(cfg.seed);
    let mut sizes = vec![data.public.dim()];
    sizes.extend_from_slice(&cfg.student.hidden);
    sizes.push(classes);
    let mut student = init_net(&sizes, &mut rng)?;
    let mut opt_s = OptimizerState::new(cfg.student.optim.clone(), &student.param_shapes())?;

    let joint = cfg.mode == TrainMode::Joint;
    let mut disc = if joint {
        let d_in = classes + if cfg.condition_d_on_input {
            data.public.dim()
        } else {
            0
        };
        let mut d_sizes = vec![d_in];
        d_sizes.extend_from_slice(&cfg.discriminator.hidden);
        d_sizes.push(1);
        Some(init_net(&d_sizes, &mut rng)?)
    } else {
        None
    };
    let mut opt_d = match &disc {
        Some(d) => Some(OptimizerState::new(
            cfg.discriminator.optim.clone(),
            &d.param_shapes(),
        )?),
        None => None,
    };

    let orders = default_orders();
    let per_step = rdp_sgm_step(cfg.dp.sample_rate, cfg.dp.noise_multiplier, &orders)?;
    let mut accountant = AccountantState::new(orders)?;
    let mut sanitize_calls = 0u64;
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let mut batches = Vec::new();

    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let relax_temp = cfg.relax_temp * cfg.relax_anneal.powi(epoch as i32);

        let mut d_losses = Vec::new();
        if let (Some(d), Some(opt)) = (disc.as_mut(), opt_d.as_mut()) {
            for _ in 0..cfg.d_epochs {
                let pass = discriminator_epoch(
                    cfg, teacher, &student, d, opt, &data.public, relax_temp, &mut rng,
                )?;
                if cfg.per_batch {
                    for (i, &l) in pass.iter().enumerate() {
                        batches.push(BatchRecord {
                            epoch,
                            phase: "disc",
                            batch: i,
                            l_ds: None,
                            l_ds_noisy: None,
                            l_ad_d: Some(l),
                            l_ad_s: None,
                        });
                    }
                }
                d_losses.extend(pass);
            }
        }

        let mut s_stats = Vec::new();
        for _ in 0..cfg.s_epochs {
            let pass = student_epoch(
                cfg,
                teacher,
                &mut student,
                disc.as_ref(),
                &mut opt_s,
                &data.public,
                &mut accountant,
                &per_step,
                relax_temp,
                &mut rng,
            )?;
            sanitize_calls += pass.len() as u64;
            if cfg.per_batch {
                for (i, s) in pass.iter().enumerate() {
                    batches.push(BatchRecord {
                        epoch,
                        phase: "student",
                        batch: i,
                        l_ds: Some(s.l_ds),
                        l_ds_noisy: Some(s.l_ds_noisy),
                        l_ad_d: None,
                        l_ad_s: s.l_ad_s,
                    });
                }
            }
            s_stats.extend(pass);
        }

        let l_ds: Vec<f64> = s_stats.iter().map(|s| s.l_ds).collect();
        let l_ds_noisy: Vec<f64> = s_stats.iter().map(|s| s.l_ds_noisy).collect();
        let l_ad_s: Vec<f64> = s_stats.iter().filter_map(|s| s.l_ad_s).collect();
        let floor_hits = s_stats.iter().map(|s| s.floor_hits).sum();

        metrics.push(MetricsRecord {
            epoch,
            l_ds: mean(&l_ds),
            l_ds_noisy: mean(&l_ds_noisy),
            l_ad_d: if d_losses.is_empty() {
                None
            } else {
                Some(mean(&d_losses))
            },
            l_ad_s: if l_ad_s.is_empty() {
                None
            } else {
                Some(mean(&l_ad_s))
            },
            acc_student: evaluate(&student, &data.test)?,
            acc_teacher: evaluate(teacher, &data.test)?,
            eps: accountant.to_dp(cfg.dp.delta)?.epsilon,
            seconds: started.elapsed().as_secs_f64(),
            floor_hits,
        });
    }

    let spend = accountant.to_dp(cfg.dp.delta)?;
    Ok(RunOutput {
        student,
        discriminator: disc,
        metrics,
        batches,
        spend,
        accountant,
        sanitize_calls,
    })
}

fn opt_cell(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// Renders epoch metrics with a pinned column order so downstream scripts
/// can rely on it.
pub fn metrics_csv(records: &[MetricsRecord]) -> String {
    let mut out =
        String::from("epoch,l_ds,l_ds_noisy,l_ad_d,l_ad_s,acc_student,acc_teacher,eps,seconds\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{}\n",
            r.epoch,
            r.l_ds,
            r.l_ds_noisy,
            opt_cell(r.l_ad_d),
            opt_cell(r.l_ad_s),
            r.acc_student,
            r.acc_teacher,
            r.eps,
            r.seconds
        ));
    }
    out
}

/// Renders the optional per-batch dump.
pub fn batches_csv(records: &[BatchRecord]) -> String {
    let mut out = String::from("epoch,phase,batch,l_ds,l_ds_noisy,l_ad_d,l_ad_s\n");
    for r in records {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.epoch,
            r.phase,
            r.batch,
            opt_cell(r.l_ds),
            opt_cell(r.l_ds_noisy),
            opt_cell(r.l_ad_d),
            opt_cell(r.l_ad_s)
        ));
    }
    out
}
