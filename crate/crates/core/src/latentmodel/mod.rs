//! The latent dynamic model: a point-cloud auto-encoder, a latent
//! transformation network and an alignment-evaluation network, with the
//! losses that train them.
//!
//! Architecture (widths configurable through [`ModelConfig`]):
//! - encoder: shared per-point MLP `3 -> 64 -> 128 -> d` (ReLU), max pool over
//!   points, then a linear head `d -> d`;
//! - decoder: `d -> 256 -> 3M` producing `M` points;
//! - transformation network: `[z, a]` (`d + 6`) `-> h -> h -> d`;
//! - evaluation network: `[z1, z2]` (`2d`) `-> h -> h -> 1`, linear output.

mod loss;
mod samples;
mod train;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::geometry::{Action, Point, PointCloud};
use crate::nnet::{max_pool_backward, max_pool_over_points, Activation, Mlp, MlpCache, Tensor};
use crate::{Error, Result};

pub use loss::{
    loss_and_gradients, loss_eval, loss_rec, loss_total, loss_trans, GradientFlow, LossBreakdown,
    ModelGrads,
};
pub use samples::{generate_samples, TrainingSample};
pub use train::{train, train_with, EpochLoss, TrainConfig};

/// Number of action components fed to the transformation network.
pub const ACTION_DIM: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelConfig {
    pub latent_dim: usize,
    /// Hidden width of the transformation and evaluation networks.
    pub hidden: usize,
    pub decoder_hidden: usize,
    /// Points produced by the decoder.
    pub num_points: usize,
    pub point_widths: [usize; 2],
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            latent_dim: 128,
            hidden: 256,
            decoder_hidden: 256,
            num_points: 784,
            point_widths: [64, 128],
        }
    }
}

/// Latent state of a point cloud.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentState(pub Vec<f32>);

impl LatentState {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn as_slice(&self) -> &[f32] {
        &self.0
    }

    pub fn norm(&self) -> f64 {
        self.0
            .iter()
            .map(|&v| (v as f64) * (v as f64))
            .sum::<f64>()
            .sqrt()
    }
}

#[derive(Debug, Clone)]
pub struct DynamicModel {
    config: ModelConfig,
    pub(crate) point_net: Mlp,
    pub(crate) head: Mlp,
    pub(crate) decoder: Mlp,
    pub(crate) transform: Mlp,
    pub(crate) evaluator: Mlp,
    /// Fixed multiplier on the evaluation network's output, shape `[1]`.
    pub(crate) eval_scale: Tensor,
}

/// Forward state of one encoding, enough to backpropagate into the encoder.
pub(crate) struct EncodeTrace {
    pub points: usize,
    pub point_cache: MlpCache,
    pub argmax: Vec<usize>,
    pub head_cache: MlpCache,
}

impl EncodeTrace {
    pub fn latent(&self) -> &[f32] {
        self.head_cache.output()
    }
}

const NETWORKS: [&str; 5] = [
    "encoder.points",
    "encoder.head",
    "decoder",
    "transform",
    "evaluate",
];
const EVAL_SCALE: &str = "evaluate.output_scale";

impl DynamicModel {
    fn layouts(config: &ModelConfig) -> [(Vec<usize>, Vec<Activation>); 5] {
        use Activation::{Identity, Relu};
        let d = config.latent_dim;
        let h = config.hidden;
        let [w1, w2] = config.point_widths;
        [
            (vec![3, w1, w2, d], vec![Relu, Relu, Relu]),
            (vec![d, d], vec![Identity]),
            (
                vec![d, config.decoder_hidden, 3 * config.num_points],
                vec![Relu, Identity],
            ),
            (vec![d + ACTION_DIM, h, h, d], vec![Relu, Relu, Identity]),
            (vec![2 * d, h, h, 1], vec![Relu, Relu, Identity]),
        ]
    }

    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nets = Vec::with_capacity(5);
        for (sizes, acts) in Self::layouts(&config) {
            nets.push(Mlp::new(&sizes, &acts, &mut rng)?);
        }
        Ok(Self::assemble(config, nets))
    }

    /// Same architecture with every weight and bias zero.
    pub fn zeros(config: ModelConfig) -> Result<Self> {
        let mut nets = Vec::with_capacity(5);
        for (sizes, acts) in Self::layouts(&config) {
            nets.push(Mlp::zeros(&sizes, &acts)?);
        }
        Ok(Self::assemble(config, nets))
    }

    fn assemble(config: ModelConfig, nets: Vec<Mlp>) -> Self {
        let [point_net, head, decoder, transform, evaluator]: [Mlp; 5] = nets.try_into().unwrap();
        Self {
            config,
            point_net,
            head,
            decoder,
            transform,
            evaluator,
            eval_scale: Tensor::from_vec(&[1], vec![1.0]).expect("scalar tensor"),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub(crate) fn networks(&self) -> [&Mlp; 5] {
        [
            &self.point_net,
            &self.head,
            &self.decoder,
            &self.transform,
            &self.evaluator,
        ]
    }

    pub(crate) fn networks_mut(&mut self) -> [&mut Mlp; 5] {
        [
            &mut self.point_net,
            &mut self.head,
            &mut self.decoder,
            &mut self.transform,
            &mut self.evaluator,
        ]
    }

    pub fn param_count(&self) -> usize {
        self.networks().iter().map(|n| n.param_count()).sum()
    }

    /// Every parameter tensor with a stable dotted name, in optimizer order.
    pub fn named_tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::new();
        for (prefix, net) in NETWORKS.iter().zip(self.networks()) {
            for (i, t) in net.params().iter().enumerate() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                out.push((format!("{prefix}.{}.{kind}", i / 2), t));
            }
        }
        out.push((EVAL_SCALE.to_string(), &self.eval_scale));
        out
    }

    /// The fixed factor applied to the evaluation network's output.
    pub fn eval_scale(&self) -> f32 {
        self.eval_scale.data()[0]
    }

    /// Sets the output scale; the network then predicts `target / scale`.
    pub fn set_eval_scale(&mut self, scale: f32) -> Result<()> {
        if !(scale.is_finite() && scale > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "evaluation scale must be positive, got {scale}"
            )));
        }
        self.eval_scale.fill(scale);
        Ok(())
    }

    /// Rebuilds a model from [`DynamicModel::named_tensors`] output. The
    /// architecture is inferred from the tensor shapes.
    pub fn from_named_tensors(tensors: Vec<(String, Tensor)>) -> Result<Self> {
        let find = |name: &str| -> Result<&Tensor> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::IncompatibleCheckpoint(format!("missing tensor {name}")))
        };
        let dim = |name: &str, axis: usize| -> Result<usize> {
            find(name)?.shape().get(axis).copied().ok_or_else(|| {
                Error::IncompatibleCheckpoint(format!("tensor {name} has too few axes"))
            })
        };
        let decoder_out = dim("decoder.1.weight", 1)?;
        if decoder_out % 3 != 0 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "decoder output width {decoder_out} is not a multiple of 3"
            )));
        }
        let config = ModelConfig {
            latent_dim: dim("encoder.points.2.weight", 1)?,
            hidden: dim("transform.0.weight", 1)?,
            decoder_hidden: dim("decoder.0.weight", 1)?,
            num_points: decoder_out / 3,
            point_widths: [
                dim("encoder.points.0.weight", 1)?,
                dim("encoder.points.1.weight", 1)?,
            ],
        };
        let mut model = Self::zeros(config)?;
        for (prefix, net) in NETWORKS.iter().zip(model.networks_mut()) {
            let mut params = Vec::new();
            for i in 0..net.params().len() {
                let kind = if i % 2 == 0 { "weight" } else { "bias" };
                params.push(find(&format!("{prefix}.{}.{kind}", i / 2))?.clone());
            }
            net.set_params(params).map_err(|_| {
                Error::IncompatibleCheckpoint(format!("tensor shapes of {prefix} do not chain"))
            })?;
        }
        let scale = find(EVAL_SCALE)?;
        if scale.shape() != [1] {
            return Err(Error::IncompatibleCheckpoint(format!(
                "tensor {EVAL_SCALE} must have shape [1]"
            )));
        }
        model.eval_scale = scale.clone();
        if tensors.len() != model.named_tensors().len() {
            return Err(Error::IncompatibleCheckpoint(format!(
                "expected {} tensors, found {}",
                model.named_tensors().len(),
                tensors.len()
            )));
        }
        Ok(model)
    }

    pub(crate) fn encode_traced(&self, cloud: &PointCloud) -> Result<EncodeTrace> {
        let n = cloud.len();
        let point_cache = self.point_net.forward(&cloud.to_f32_rows(), n)?;
        let pooled = max_pool_over_points(point_cache.output(), n, self.config.latent_dim);
        let head_cache = self.head.forward(&pooled.values, 1)?;
        Ok(EncodeTrace {
            points: n,
            point_cache,
            argmax: pooled.argmax,
            head_cache,
        })
    }

    /// Backpropagates a latent-state gradient into the encoder parameters.
    pub(crate) fn encode_backward(
        &self,
        trace: &EncodeTrace,
        grad_latent: &[f32],
        grads: &mut ModelGrads,
    ) -> Result<()> {
        let pooled_grad = self
            .head
            .backward(&trace.head_cache, grad_latent, &mut grads.head)?;
        let point_grad = max_pool_backward(&pooled_grad, &trace.argmax, trace.points);
        self.point_net
            .backward(&trace.point_cache, &point_grad, &mut grads.point_net)?;
        Ok(())
    }

    /// `z = head(maxpool(point_net(x_i)))`.
    pub fn encode(&self, cloud: &PointCloud) -> Result<LatentState> {
        Ok(LatentState(self.encode_traced(cloud)?.latent().to_vec()))
    }

    fn check_latent(&self, z: &[f32]) -> Result<()> {
        if z.len() != self.config.latent_dim {
            return Err(Error::Dimension(format!(
                "latent state has dimension {}, model expects {}",
                z.len(),
                self.config.latent_dim
            )));
        }
        Ok(())
    }

    pub fn decode(&self, z: &LatentState) -> Result<PointCloud> {
        self.check_latent(&z.0)?;
        let cache = self.decoder.forward(&z.0, 1)?;
        let points = cache
            .output()
            .chunks_exact(3)
            .map(|c| Point::new(c[0] as f64, c[1] as f64, c[2] as f64))
            .collect();
        PointCloud::new(points)
    }

    pub(crate) fn transform_input<'a>(
        z: &'a [f32],
        action: &Action,
    ) -> impl Iterator<Item = f32> + 'a {
        let a = action.to_array();
        z.iter().copied().chain(a.into_iter().map(|v| v as f32))
    }

    /// `f([z, a])`: the predicted latent state after applying `action`.
    pub fn predict_transformed_latent(
        &self,
        z: &LatentState,
        action: &Action,
    ) -> Result<LatentState> {
        self.check_latent(&z.0)?;
        let input: Vec<f32> = Self::transform_input(&z.0, action).collect();
        let cache = self.transform.forward(&input, 1)?;
        Ok(LatentState(cache.output().to_vec()))
    }

    /// Predicted Chamfer distance between the clouds behind two latent states.
    pub fn evaluate_alignment(&self, z1: &LatentState, z2: &LatentState) -> Result<f64> {
        self.check_latent(&z1.0)?;
        self.check_latent(&z2.0)?;
        let input: Vec<f32> = z1.0.iter().chain(&z2.0).copied().collect();
        let cache = self.evaluator.forward(&input, 1)?;
        Ok((cache.output()[0] * self.eval_scale()) as f64)
    }

    /// `-evaluate_alignment(predict_transformed_latent(z_source, action), z_target)`.
    pub fn reward(
        &self,
        z_source: &LatentState,
        action: &Action,
        z_target: &LatentState,
    ) -> Result<f64> {
        let moved = self.predict_transformed_latent(z_source, action)?;
        Ok(-self.evaluate_alignment(&moved, z_target)?)
    }

    /// [`DynamicModel::reward`] for a batch of actions through single batched
    /// matrix products.
    pub fn rewards_batch(
        &self,
        z_source: &LatentState,
        actions: &[Action],
        z_target: &LatentState,
    ) -> Result<Vec<f64>> {
        self.check_latent(&z_source.0)?;
        self.check_latent(&z_target.0)?;
        if actions.is_empty() {
            return Ok(Vec::new());
        }
        let d = self.config.latent_dim;
        let rows = actions.len();
        let mut input = Vec::with_capacity(rows * (d + ACTION_DIM));
        for a in actions {
            input.extend(Self::transform_input(&z_source.0, a));
        }
        let moved = self.transform.forward(&input, rows)?;
        let mut pairs = Vec::with_capacity(rows * 2 * d);
        for z in moved.output().chunks_exact(d) {
            pairs.extend_from_slice(z);
            pairs.extend_from_slice(&z_target.0);
        }
        let scores = self.evaluator.forward(&pairs, rows)?;
        let scale = self.eval_scale();
        Ok(scores
            .output()
            .iter()
            .map(|&s| -((s * scale) as f64))
            .collect())
    }
}
