use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{loss_and_gradients, DynamicModel, GradientFlow, LossBreakdown, TrainingSample};
use crate::dataio::derive_seed;
use crate::nnet::{AdamConfig, AdamState, Tensor};
use crate::{Error, Exec, Result};

const SHUFFLE_STREAM: u64 = 0x5348_5546;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
    pub flow: GradientFlow,
    /// Set the evaluation output scale to the standard deviation of the
    /// training Chamfer targets and its bias to their mean, so the network
    /// learns standardized targets while the loss stays on the raw scale.
    pub standardize_eval: bool,
    pub exec: Exec,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 16,
            adam: AdamConfig::default(),
            seed: 7,
            flow: GradientFlow::Detached,
            standardize_eval: true,
            exec: Exec::default(),
        }
    }
}

/// Sample-weighted mean losses over one epoch (measured before each step).
pub type EpochLoss = LossBreakdown;

/// Minibatch Adam on the joint loss. Returns one entry per epoch.
pub fn train(
    model: &mut DynamicModel,
    samples: &[TrainingSample],
    config: &TrainConfig,
) -> Result<Vec<EpochLoss>> {
    train_with(model, samples, config, |_, _| {})
}

/// [`train`] with a callback invoked after every epoch.
pub fn train_with<F>(
    model: &mut DynamicModel,
    samples: &[TrainingSample],
    config: &TrainConfig,
    mut on_epoch: F,
) -> Result<Vec<EpochLoss>>
where
    F: FnMut(usize, &EpochLoss),
{
    if samples.is_empty() {
        return Err(Error::InvalidArgument("training set is empty".into()));
    }
    if config.batch_size == 0 {
        return Err(Error::InvalidArgument("batch size must be positive".into()));
    }
    let mut history = Vec::with_capacity(config.epochs);
    if config.epochs == 0 {
        return Ok(history);
    }
    if config.standardize_eval {
        standardize_eval_output(model, samples)?;
    }

    let mut adam = AdamState::new(
        config.adam,
        model.networks().into_iter().flat_map(|n| n.params().iter()),
    );
    let mut order: Vec<usize> = (0..samples.len()).collect();
    for epoch in 0..config.epochs {
        let mut rng =
            ChaCha8Rng::seed_from_u64(derive_seed(config.seed, SHUFFLE_STREAM, epoch as u64));
        order.shuffle(&mut rng);
        let mut sum = LossBreakdown::default();
        for (b, chunk) in order.chunks(config.batch_size).enumerate() {
            let batch: Vec<TrainingSample> = chunk.iter().map(|&i| samples[i].clone()).collect();
            let (loss, grads) = loss_and_gradients(model, &batch, config.flow, config.exec)?;
            let diverged = || Error::Diverged {
                epoch,
                batch: b,
                rec: loss.rec,
                trans: loss.trans,
                eval: loss.eval,
            };
            if !loss.is_finite() || !grads.max_abs().is_finite() {
                return Err(diverged());
            }
            let flat: Vec<Tensor> = grads.into_flat();
            adam.step(
                model
                    .networks_mut()
                    .into_iter()
                    .flat_map(|n| n.params_mut().iter_mut()),
                &flat,
            )?;
            if model
                .networks()
                .iter()
                .any(|n| n.params().iter().any(|t| t.check_finite("").is_err()))
            {
                return Err(diverged());
            }
            let w = chunk.len() as f64;
            sum.rec += loss.rec * w;
            sum.trans += loss.trans * w;
            sum.eval += loss.eval * w;
        }
        let n = samples.len() as f64;
        let epoch_loss = EpochLoss {
            rec: sum.rec / n,
            trans: sum.trans / n,
            eval: sum.eval / n,
        };
        on_epoch(epoch, &epoch_loss);
        history.push(epoch_loss);
    }
    Ok(history)
}

fn standardize_eval_output(model: &mut DynamicModel, samples: &[TrainingSample]) -> Result<()> {
    let targets: Vec<f64> = samples
        .iter()
        .flat_map(|s| [s.chamfer_source_target, s.chamfer_transformed_target])
        .collect();
    let n = targets.len() as f64;
    let mean = targets.iter().sum::<f64>() / n;
    let std = (targets.iter().map(|t| (t - mean).powi(2)).sum::<f64>() / n).sqrt();
    let scale = if std > 0.0 { std } else { mean.abs().max(1.0) };
    model.set_eval_scale(scale as f32)?;
    let last = model.evaluator.params().len() - 1;
    model.evaluator.params_mut()[last].fill((mean / scale) as f32);
    Ok(())
}
