use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::{Mode, RngState, Tape, Tensor};

use super::adamw::{adamw_step, OptimizerState};
use super::loss::ClassWeights;
use super::mixup::sample_lambda;
use super::TrainConfig;

/// Labelled epochs of equal length, stored contiguously.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Dataset {
    seconds: usize,
    rate: usize,
    data: Vec<f64>,
    labels: Vec<usize>,
}

impl Dataset {
    pub fn new(seconds: usize, rate: usize) -> Self {
        Dataset {
            seconds,
            rate,
            data: Vec::new(),
            labels: Vec::new(),
        }
    }

    pub fn epoch_len(&self) -> usize {
        self.seconds * self.rate
    }

    pub fn seconds(&self) -> usize {
        self.seconds
    }

    pub fn rate(&self) -> usize {
        self.rate
    }

    pub fn push(&mut self, samples: &[f64], label: usize) -> Result<()> {
        if samples.len() != self.epoch_len() {
            return Err(Error::shape(
                "Dataset::push",
                format!("epoch has {} samples, expected {}", samples.len(), self.epoch_len()),
            ));
        }
        self.data.extend_from_slice(samples);
        self.labels.push(label);
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let n = self.epoch_len();
        &self.data[i * n..(i + 1) * n]
    }

    pub fn label(&self, i: usize) -> usize {
        self.labels[i]
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn class_counts(&self, k: usize) -> Vec<u64> {
        let mut c = vec![0u64; k];
        for &l in &self.labels {
            if l < k {
                c[l] += 1;
            }
        }
        c
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        let mut out = Dataset::new(self.seconds, self.rate);
        for &i in indices {
            out.data.extend_from_slice(self.sample(i));
            out.labels.push(self.labels[i]);
        }
        out
    }

    /// Input tensor `[B, T, F_s]` for the given rows.
    pub fn batch(&self, indices: &[usize]) -> Result<Tensor> {
        let mut data = Vec::with_capacity(indices.len() * self.epoch_len());
        for &i in indices {
            data.extend_from_slice(self.sample(i));
        }
        Tensor::new(&[indices.len(), self.seconds, self.rate], data)
    }

    /// One-hot rows for the given indices.
    pub fn one_hot(&self, indices: &[usize], k: usize) -> Vec<f64> {
        let mut y = vec![0.0; indices.len() * k];
        for (r, &i) in indices.iter().enumerate() {
            y[r * k + self.labels[i]] = 1.0;
        }
        y
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochStats {
    pub mean_loss: f64,
    pub batch_losses: Vec<f64>,
}

/// Forward, focal loss, backward and one AdamW update on a prepared batch.
pub fn train_step(
    model: &mut Model,
    x: &Tensor,
    soft_labels: &[f64],
    weights: &ClassWeights,
    optimizer: &mut OptimizerState,
    config: &TrainConfig,
    rng: &mut RngState,
) -> Result<f64> {
    let mut tape = Tape::new();
    let logits = model.forward(&mut tape, x, Mode::Train, rng)?;
    let p = tape.softmax(logits)?;
    let loss = tape.focal_loss(p, soft_labels, weights.as_slice(), config.focal_gamma)?;
    let value = tape.value(loss).data()[0];
    let grads = tape.backward(loss)?;
    let params = model.params_mut();
    params.zero_grads();
    tape.accumulate_param_grads(&grads, params);
    adamw_step(params, optimizer, config)?;
    Ok(value)
}

/// One pass over `data` in shuffled batches.
///
/// Per batch: draw λ ~ Beta(α, α), pair each row with a partner from a
/// random permutation, mix inputs and one-hot labels, then run
/// [`train_step`]. With `config.mixup` off the batch is used as is.
pub fn train_epoch(
    model: &mut Model,
    data: &Dataset,
    weights: &ClassWeights,
    optimizer: &mut OptimizerState,
    config: &TrainConfig,
    rng: &mut RngState,
) -> Result<EpochStats> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    let k = model.config().num_classes;
    if let Some(&bad) = data.labels().iter().find(|&&l| l >= k) {
        return Err(Error::InvalidArgument(format!("label {bad} outside {k} classes")));
    }
    let order = rng.permutation(data.len());
    let mut batch_losses = Vec::new();
    for chunk in order.chunks(config.batch_size) {
        let x = data.batch(chunk)?;
        let y = data.one_hot(chunk, k);
        let (x, y) = if config.mixup {
            let lambda = sample_lambda(config.mixup_alpha, rng)?;
            let partner = rng.permutation(chunk.len());
            mix_batch(&x, &y, &partner, lambda, k)?
        } else {
            (x, y)
        };
        batch_losses.push(train_step(model, &x, &y, weights, optimizer, config, rng)?);
    }
    let mean_loss = batch_losses.iter().sum::<f64>() / batch_losses.len() as f64;
    Ok(EpochStats {
        mean_loss,
        batch_losses,
    })
}

/// Mixes row `i` with row `partner[i]` of the same batch.
pub fn mix_batch(
    x: &Tensor,
    y: &[f64],
    partner: &[usize],
    lambda: f64,
    k: usize,
) -> Result<(Tensor, Vec<f64>)> {
    let b = x.shape()[0];
    let row = x.len() / b;
    let xs = x.data();
    let mut xm = Vec::with_capacity(x.len());
    let mut ym = Vec::with_capacity(y.len());
    for i in 0..b {
        let j = partner[i];
        let (xr, yr) = super::mixup(
            &xs[i * row..(i + 1) * row],
            &y[i * k..(i + 1) * k],
            &xs[j * row..(j + 1) * row],
            &y[j * k..(j + 1) * k],
            lambda,
        )?;
        xm.extend(xr);
        ym.extend(yr);
    }
    Ok((Tensor::new(x.shape(), xm)?, ym))
}

/// Eval-mode focal loss on unmixed labels, averaged over all rows.
pub fn evaluate_loss(
    model: &Model,
    data: &Dataset,
    weights: &ClassWeights,
    gamma: f64,
    batch_size: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::InvalidArgument("evaluation set is empty".into()));
    }
    let k = model.config().num_classes;
    let idx: Vec<usize> = (0..data.len()).collect();
    let mut total = 0.0;
    let mut rng = RngState::new(0);
    for chunk in idx.chunks(batch_size.max(1)) {
        let mut tape = Tape::new();
        let logits = model.forward_frozen(&mut tape, &data.batch(chunk)?, Mode::Eval, &mut rng)?;
        let p = tape.softmax(logits)?;
        let l = tape.focal_loss(p, &data.one_hot(chunk, k), weights.as_slice(), gamma)?;
        total += tape.value(l).data()[0] * chunk.len() as f64;
    }
    Ok(total / data.len() as f64)
}

/// Everything needed to continue training bit-for-bit.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub model: Model,
    pub optimizer: OptimizerState,
    pub rng: RngState,
    pub epochs_completed: u64,
}

impl TrainState {
    /// Fresh state; model init and the training stream both follow `seed`.
    pub fn new(model_config: crate::model::ModelConfig, seed: u64) -> Result<Self> {
        let root = RngState::new(seed);
        let model = Model::new(model_config, root.derive(1).seed())?;
        let optimizer = OptimizerState::new(model.params());
        Ok(TrainState {
            model,
            optimizer,
            rng: root.derive(2),
            epochs_completed: 0,
        })
    }

    pub fn run_epoch(&mut self, data: &Dataset, weights: &ClassWeights, config: &TrainConfig) -> Result<EpochStats> {
        let stats = train_epoch(
            &mut self.model,
            data,
            weights,
            &mut self.optimizer,
            config,
            &mut self.rng,
        )?;
        self.epochs_completed += 1;
        Ok(stats)
    }
}
