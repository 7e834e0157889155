use super::{DynamicModel, TrainingSample};
use crate::geometry::{nearest_neighbors, Point, PointCloud};
use crate::nnet::Tensor;
use crate::{Error, Exec, Result};

/// Which parameters each loss term may update.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientFlow {
    /// Reconstruction trains the encoder/decoder, the transformation loss
    /// trains only the transformation network and the geometric consistency
    /// loss only the evaluation network. Latent states are constants for the
    /// latter two.
    #[default]
    Detached,
    /// Every term backpropagates into every parameter it depends on,
    /// including the encoder.
    Joint,
}

/// Batch-mean loss components.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct LossBreakdown {
    pub rec: f64,
    pub trans: f64,
    pub eval: f64,
}

impl LossBreakdown {
    pub fn total(&self) -> f64 {
        self.rec + self.trans + self.eval
    }

    pub fn is_finite(&self) -> bool {
        self.rec.is_finite() && self.trans.is_finite() && self.eval.is_finite()
    }

    fn add(&mut self, other: &LossBreakdown) {
        self.rec += other.rec;
        self.trans += other.trans;
        self.eval += other.eval;
    }

    fn scaled(&self, s: f64) -> LossBreakdown {
        LossBreakdown {
            rec: self.rec * s,
            trans: self.trans * s,
            eval: self.eval * s,
        }
    }
}

/// Gradients for every network of a [`DynamicModel`], same layout as its parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelGrads {
    pub point_net: Vec<Tensor>,
    pub head: Vec<Tensor>,
    pub decoder: Vec<Tensor>,
    pub transform: Vec<Tensor>,
    pub evaluator: Vec<Tensor>,
}

impl ModelGrads {
    pub fn zeros(model: &DynamicModel) -> Self {
        let [p, h, d, t, e] = model.networks().map(|n| n.zero_grads());
        Self {
            point_net: p,
            head: h,
            decoder: d,
            transform: t,
            evaluator: e,
        }
    }

    pub fn groups(&self) -> [&Vec<Tensor>; 5] {
        [
            &self.point_net,
            &self.head,
            &self.decoder,
            &self.transform,
            &self.evaluator,
        ]
    }

    fn groups_mut(&mut self) -> [&mut Vec<Tensor>; 5] {
        [
            &mut self.point_net,
            &mut self.head,
            &mut self.decoder,
            &mut self.transform,
            &mut self.evaluator,
        ]
    }

    pub fn add_assign(&mut self, other: &ModelGrads) {
        for (mine, theirs) in self.groups_mut().into_iter().zip(other.groups()) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                a.add_assign(b);
            }
        }
    }

    pub fn scale(&mut self, s: f32) {
        for group in self.groups_mut() {
            group.iter_mut().for_each(|t| t.scale(s));
        }
    }

    /// All tensors in optimizer order.
    pub fn into_flat(self) -> Vec<Tensor> {
        let [p, h, d, t, e] = [
            self.point_net,
            self.head,
            self.decoder,
            self.transform,
            self.evaluator,
        ];
        p.into_iter().chain(h).chain(d).chain(t).chain(e).collect()
    }

    pub fn max_abs(&self) -> f32 {
        self.groups()
            .iter()
            .flat_map(|g| g.iter())
            .flat_map(|t| t.data().iter())
            .fold(0.0f32, |m, v| m.max(v.abs()))
    }
}

/// Chamfer distance between decoded points (interleaved `f32`) and a cloud,
/// with the gradient with respect to the decoded coordinates.
fn chamfer_with_gradient(decoded: &[f32], cloud: &PointCloud) -> (f64, Vec<f32>) {
    let pred: Vec<Point> = decoded
        .chunks_exact(3)
        .map(|c| Point::new(c[0] as f64, c[1] as f64, c[2] as f64))
        .collect();
    let forward = nearest_neighbors(&pred, cloud.points());
    let backward = nearest_neighbors(cloud.points(), &pred);
    let mut grad = vec![0.0f64; decoded.len()];
    let mut loss = 0.0;
    for (i, &(j, d)) in forward.iter().enumerate() {
        loss += d;
        if d > 0.0 {
            let g = (pred[i] - cloud.points()[j]) / d;
            for k in 0..3 {
                grad[3 * i + k] += g[k];
            }
        }
    }
    for (j, &(i, d)) in backward.iter().enumerate() {
        loss += d;
        if d > 0.0 {
            let g = (pred[i] - cloud.points()[j]) / d;
            for k in 0..3 {
                grad[3 * i + k] += g[k];
            }
        }
    }
    (loss, grad.into_iter().map(|v| v as f32).collect())
}

/// Forward (and optionally backward) pass for one sample. Loss values are
/// per-sample sums; gradients are accumulated unscaled.
fn sample_pass(
    model: &DynamicModel,
    sample: &TrainingSample,
    flow: GradientFlow,
    mut grads: Option<&mut ModelGrads>,
) -> Result<LossBreakdown> {
    let d = model.latent_dim();
    let clouds: [&PointCloud; 3] = [&sample.source, &sample.transformed, &sample.target];
    let traces = clouds
        .iter()
        .map(|c| model.encode_traced(c))
        .collect::<Result<Vec<_>>>()?;
    let [zx, zxt, zy] = [traces[0].latent(), traces[1].latent(), traces[2].latent()];
    let mut latent_grads = vec![vec![0.0f32; d]; 3];
    let mut out = LossBreakdown::default();

    // reconstruction
    for (k, cloud) in clouds.iter().enumerate() {
        let cache = model.decoder.forward(traces[k].latent(), 1)?;
        let (loss, grad) = chamfer_with_gradient(cache.output(), cloud);
        out.rec += loss;
        if let Some(g) = grads.as_deref_mut() {
            let dz = model.decoder.backward(&cache, &grad, &mut g.decoder)?;
            for (acc, v) in latent_grads[k].iter_mut().zip(dz) {
                *acc += v;
            }
        }
    }

    // transformation consistency
    let input: Vec<f32> = DynamicModel::transform_input(zx, &sample.action).collect();
    let cache = model.transform.forward(&input, 1)?;
    let diff: Vec<f32> = cache.output().iter().zip(zxt).map(|(p, t)| p - t).collect();
    out.trans = diff.iter().map(|&v| (v as f64) * (v as f64)).sum();
    if let Some(g) = grads.as_deref_mut() {
        let dout: Vec<f32> = diff.iter().map(|v| 2.0 * v).collect();
        let dinput = model.transform.backward(&cache, &dout, &mut g.transform)?;
        if flow == GradientFlow::Joint {
            for i in 0..d {
                latent_grads[0][i] += dinput[i];
                latent_grads[1][i] -= dout[i];
            }
        }
    }

    // geometric consistency
    let mut input = Vec::with_capacity(4 * d);
    input.extend_from_slice(zx);
    input.extend_from_slice(zy);
    input.extend_from_slice(zxt);
    input.extend_from_slice(zy);
    let cache = model.evaluator.forward(&input, 2)?;
    let targets = [
        sample.chamfer_source_target,
        sample.chamfer_transformed_target,
    ];
    let scale = model.eval_scale();
    let residual: Vec<f64> = cache
        .output()
        .iter()
        .zip(targets)
        .map(|(&p, t)| (p * scale) as f64 - t)
        .collect();
    out.eval = residual.iter().map(|r| r * r).sum();
    if let Some(g) = grads.as_deref_mut() {
        let dout: Vec<f32> = residual.iter().map(|r| (2.0 * r) as f32 * scale).collect();
        let dinput = model.evaluator.backward(&cache, &dout, &mut g.evaluator)?;
        if flow == GradientFlow::Joint {
            for i in 0..d {
                latent_grads[0][i] += dinput[i];
                latent_grads[2][i] += dinput[d + i] + dinput[3 * d + i];
                latent_grads[1][i] += dinput[2 * d + i];
            }
        }
    }

    if let Some(g) = grads {
        for (trace, dz) in traces.iter().zip(&latent_grads) {
            model.encode_backward(trace, dz, g)?;
        }
    }
    Ok(out)
}

fn require_batch(batch: &[TrainingSample]) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::InvalidArgument("loss over an empty batch".into()));
    }
    Ok(())
}

fn batch_losses(model: &DynamicModel, batch: &[TrainingSample]) -> Result<LossBreakdown> {
    require_batch(batch)?;
    let mut sum = LossBreakdown::default();
    for s in batch {
        sum.add(&sample_pass(model, s, GradientFlow::Detached, None)?);
    }
    Ok(sum.scaled(1.0 / batch.len() as f64))
}

/// Mean over the batch of `L(X) + L(X') + L(Y)`, `L(C) = D(decode(encode(C)), C)`.
pub fn loss_rec(model: &DynamicModel, batch: &[TrainingSample]) -> Result<f64> {
    Ok(batch_losses(model, batch)?.rec)
}

/// Mean over the batch of `|f([z_X, a]) - z_X'|^2`.
pub fn loss_trans(model: &DynamicModel, batch: &[TrainingSample]) -> Result<f64> {
    Ok(batch_losses(model, batch)?.trans)
}

/// Mean over the batch of `(d(z_X, z_Y) - D(X, Y))^2 + (d(z_X', z_Y) - D(X', Y))^2`.
pub fn loss_eval(model: &DynamicModel, batch: &[TrainingSample]) -> Result<f64> {
    Ok(batch_losses(model, batch)?.eval)
}

/// The three components and (through [`LossBreakdown::total`]) their unweighted sum.
pub fn loss_total(model: &DynamicModel, batch: &[TrainingSample]) -> Result<LossBreakdown> {
    batch_losses(model, batch)
}

/// Batch-mean losses and gradients. Per-sample gradients are computed
/// independently (in parallel under [`Exec::Parallel`]) and summed in batch
/// order, so the result does not depend on the execution mode.
pub fn loss_and_gradients(
    model: &DynamicModel,
    batch: &[TrainingSample],
    flow: GradientFlow,
    exec: Exec,
) -> Result<(LossBreakdown, ModelGrads)> {
    require_batch(batch)?;
    let per_sample = exec.map_slice(batch, |s| -> Result<(LossBreakdown, ModelGrads)> {
        let mut g = ModelGrads::zeros(model);
        let l = sample_pass(model, s, flow, Some(&mut g))?;
        Ok((l, g))
    });
    let mut losses = LossBreakdown::default();
    let mut grads: Option<ModelGrads> = None;
    for item in per_sample {
        let (l, g) = item?;
        losses.add(&l);
        match grads.as_mut() {
            None => grads = Some(g),
            Some(acc) => acc.add_assign(&g),
        }
    }
    let mut grads = grads.expect("non-empty batch");
    let inv = 1.0 / batch.len() as f64;
    grads.scale(inv as f32);
    Ok((losses.scaled(inv), grads))
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::dataio::{make_pair, sample_surface, PairSpec, Shape, ShapeKind};
    use crate::geometry::{chamfer_distance, normalize_unit_sphere, Action};
    use crate::latentmodel::{generate_samples, ModelConfig};
    use crate::nnet::{AdamConfig, AdamState};

    fn tiny_config(points: usize) -> ModelConfig {
        ModelConfig {
            latent_dim: 8,
            hidden: 10,
            decoder_hidden: 9,
            num_points: points,
            point_widths: [6, 7],
        }
    }

    fn batch(n_pairs: usize, per_pair: usize, points: usize, seed: u64) -> Vec<TrainingSample> {
        let pairs: Vec<_> = (0..n_pairs)
            .map(|i| {
                let kind = [ShapeKind::Wedge, ShapeKind::Box][i % 2];
                let x = normalize_unit_sphere(
                    &sample_surface(&Shape::canonical(kind), points, seed + i as u64).unwrap(),
                )
                .unwrap();
                make_pair(&x, &PairSpec::default(), seed + 100 + i as u64).unwrap()
            })
            .collect();
        generate_samples(&pairs, per_pair, 1.0, seed, Exec::Serial).unwrap()
    }

    #[test]
    fn loss_total_is_the_exact_sum() {
        let model = DynamicModel::new(tiny_config(12), 1).unwrap();
        let b = batch(2, 2, 12, 1);
        let total = loss_total(&model, &b).unwrap();
        assert_eq!(total.rec, loss_rec(&model, &b).unwrap());
        assert_eq!(total.trans, loss_trans(&model, &b).unwrap());
        assert_eq!(total.eval, loss_eval(&model, &b).unwrap());
        assert_eq!(total.total(), total.rec + total.trans + total.eval);
        assert!(total.rec >= 0.0 && total.trans >= 0.0 && total.eval >= 0.0);
    }

    #[test]
    fn empty_batch_rejected() {
        let model = DynamicModel::new(tiny_config(12), 1).unwrap();
        assert!(loss_total(&model, &[]).is_err());
    }

    #[test]
    fn perfect_single_point_autoencoder_has_zero_reconstruction_loss() {
        // all clouds are the single point p; a zero network with decoder bias p reconstructs it
        let p = [0.25f32, -0.5, 0.75];
        let cloud = Arc::new(PointCloud::from_arrays(&[[0.25, -0.5, 0.75]]).unwrap());
        let sample = TrainingSample::new(cloud.clone(), Action::ZERO, cloud).unwrap();
        let mut model = DynamicModel::zeros(tiny_config(1)).unwrap();
        model.decoder.params_mut()[3] = Tensor::from_vec(&[3], p.to_vec()).unwrap();
        let l = loss_total(&model, &[sample]).unwrap();
        assert_eq!(l.rec, 0.0);
        // zero transform net reproduces the zero latent, zero eval net matches the zero Chamfer
        assert_eq!(l.trans, 0.0);
        assert_eq!(l.eval, 0.0);
    }

    #[test]
    fn reconstruction_matches_hand_chamfer() {
        let model = DynamicModel::new(tiny_config(10), 3).unwrap();
        let b = batch(2, 1, 10, 3);
        let mut want = 0.0;
        for s in &b {
            for c in [&*s.source, &s.transformed, &*s.target] {
                let z = model.encode(c).unwrap();
                want += chamfer_distance(&model.decode(&z).unwrap(), c).unwrap();
            }
        }
        want /= 2.0;
        let got = loss_rec(&model, &b).unwrap();
        assert!(
            (got - want).abs() <= 1e-9 * want.max(1.0),
            "{got} vs {want}"
        );
    }

    #[test]
    fn transformation_loss_matches_hand_computation() {
        let model = DynamicModel::new(tiny_config(10), 4).unwrap();
        let b = batch(1, 1, 10, 4);
        let s = &b[0];
        let zx = model.encode(&s.source).unwrap();
        let zxt = model.encode(&s.transformed).unwrap();
        let pred = model.predict_transformed_latent(&zx, &s.action).unwrap();
        let want: f64 = pred
            .0
            .iter()
            .zip(&zxt.0)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum();
        assert!((loss_trans(&model, &b).unwrap() - want).abs() <= 1e-6 * want.max(1.0));
    }

    #[test]
    fn evaluation_loss_matches_hand_computation() {
        let model = DynamicModel::new(tiny_config(10), 5).unwrap();
        let b = batch(1, 1, 10, 5);
        let s = &b[0];
        let zx = model.encode(&s.source).unwrap();
        let zxt = model.encode(&s.transformed).unwrap();
        let zy = model.encode(&s.target).unwrap();
        let d1 = model.evaluate_alignment(&zx, &zy).unwrap();
        let d2 = model.evaluate_alignment(&zxt, &zy).unwrap();
        let want = (d1 - chamfer_distance(&s.source, &s.target).unwrap()).powi(2)
            + (d2 - chamfer_distance(&s.transformed, &s.target).unwrap()).powi(2);
        let got = loss_eval(&model, &b).unwrap();
        assert!(
            (got - want).abs() <= 1e-6 * want.max(1.0),
            "{got} vs {want}"
        );
    }

    #[test]
    fn transformation_loss_zero_when_prediction_is_exact() {
        // a transform net that copies z through: relu(z) - relu(-z)
        let d = 8;
        let cfg = ModelConfig {
            hidden: 2 * d,
            ..tiny_config(10)
        };
        let mut model = DynamicModel::new(cfg, 6).unwrap();
        let mut w0 = vec![0.0f32; (d + 6) * 2 * d];
        let mut w1 = vec![0.0f32; 2 * d * 2 * d];
        let mut w2 = vec![0.0f32; 2 * d * d];
        for i in 0..d {
            w0[i * 2 * d + i] = 1.0;
            w0[i * 2 * d + d + i] = -1.0;
            w2[i * d + i] = 1.0;
            w2[(d + i) * d + i] = -1.0;
        }
        for i in 0..2 * d {
            w1[i * 2 * d + i] = 1.0;
        }
        model
            .transform
            .set_params(vec![
                Tensor::from_vec(&[d + 6, 2 * d], w0).unwrap(),
                Tensor::zeros(&[2 * d]),
                Tensor::from_vec(&[2 * d, 2 * d], w1).unwrap(),
                Tensor::zeros(&[2 * d]),
                Tensor::from_vec(&[2 * d, d], w2).unwrap(),
                Tensor::zeros(&[d]),
            ])
            .unwrap();
        let x = Arc::new(
            normalize_unit_sphere(
                &sample_surface(&Shape::canonical(ShapeKind::Box), 10, 1).unwrap(),
            )
            .unwrap(),
        );
        let s = TrainingSample::new(x.clone(), Action::ZERO, x).unwrap();
        let z = model.encode(&s.source).unwrap();
        assert_eq!(
            model.predict_transformed_latent(&z, &Action::ZERO).unwrap(),
            z
        );
        assert_eq!(loss_trans(&model, &[s]).unwrap(), 0.0);
    }

    #[test]
    fn exact_eval_predictions_give_zero_loss() {
        // zero eval net, with both Chamfer targets zero (X = X' = Y)
        let cfg = tiny_config(10);
        let mut model = DynamicModel::new(cfg, 7).unwrap();
        for t in model.evaluator.params_mut() {
            t.fill(0.0);
        }
        let x = Arc::new(
            normalize_unit_sphere(
                &sample_surface(&Shape::canonical(ShapeKind::Box), 10, 1).unwrap(),
            )
            .unwrap(),
        );
        let s = TrainingSample::new(x.clone(), Action::ZERO, x).unwrap();
        assert_eq!(loss_eval(&model, &[s]).unwrap(), 0.0);
    }

    fn fd_check(model: &mut DynamicModel, batch: &[TrainingSample], flow: GradientFlow) {
        let (_, grads) = loss_and_gradients(model, batch, flow, Exec::Serial).unwrap();
        let analytic = grads.into_flat();
        let h = 1e-3f32;
        // detached flow: each network group is checked against the loss terms it owns
        let owned = |group: usize, l: &LossBreakdown| -> f64 {
            match (flow, group) {
                (GradientFlow::Joint, _) => l.total(),
                (_, 0..=2) => l.rec,
                (_, 3) => l.trans,
                _ => l.eval,
            }
        };
        let mut flat_index = 0;
        let mut checked = 0;
        let mut failures = Vec::new();
        for group in 0..5 {
            let n_tensors = model.networks()[group].params().len();
            for t in 0..n_tensors {
                let len = model.networks()[group].params()[t].len();
                // a strided subset keeps the check fast while touching every tensor
                let stride = (len / 25).max(1);
                for i in (0..len).step_by(stride) {
                    let orig = model.networks()[group].params()[t].data()[i];
                    model.networks_mut()[group].params_mut()[t].data_mut()[i] = orig + h;
                    let up = owned(group, &loss_total(model, batch).unwrap());
                    model.networks_mut()[group].params_mut()[t].data_mut()[i] = orig - h;
                    let down = owned(group, &loss_total(model, batch).unwrap());
                    model.networks_mut()[group].params_mut()[t].data_mut()[i] = orig;
                    let numeric = (up - down) / (2.0 * h as f64);
                    let a = analytic[flat_index + t].data()[i] as f64;
                    let scale = a.abs().max(numeric.abs()).max(1e-2);
                    checked += 1;
                    if (a - numeric).abs() > 1e-2 * scale {
                        failures.push((group, t, i, a, numeric));
                    }
                }
            }
            flat_index += n_tensors;
        }
        // non-smooth points (ReLU kinks, nearest-neighbor switches) can break
        // individual central differences; allow a handful
        assert!(
            failures.len() * 50 <= checked,
            "{} of {checked} gradient entries disagree: {:?}",
            failures.len(),
            &failures[..failures.len().min(10)]
        );
    }

    #[test]
    fn joint_gradients_match_finite_differences() {
        for seed in 0..3 {
            let mut model = DynamicModel::new(tiny_config(6), 10 + seed).unwrap();
            let b = batch(1, 2, 6, 20 + seed);
            fd_check(&mut model, &b, GradientFlow::Joint);
        }
    }

    #[test]
    fn detached_gradients_match_owned_terms() {
        let mut model = DynamicModel::new(tiny_config(6), 30).unwrap();
        let b = batch(2, 1, 6, 31);
        fd_check(&mut model, &b, GradientFlow::Detached);
    }

    #[test]
    fn detached_flow_keeps_dynamics_losses_out_of_the_encoder() {
        let model = DynamicModel::new(tiny_config(8), 40).unwrap();
        let b = batch(1, 2, 8, 41);
        let (_, detached) =
            loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Serial).unwrap();
        let (_, joint) = loss_and_gradients(&model, &b, GradientFlow::Joint, Exec::Serial).unwrap();
        assert_eq!(detached.decoder, joint.decoder);
        assert_eq!(detached.transform, joint.transform);
        assert_eq!(detached.evaluator, joint.evaluator);
        assert_ne!(detached.point_net, joint.point_net);
    }

    #[test]
    fn gradients_independent_of_exec_mode() {
        let model = DynamicModel::new(tiny_config(8), 50).unwrap();
        let b = batch(2, 2, 8, 51);
        let (l1, g1) =
            loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Serial).unwrap();
        let (l2, g2) =
            loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Parallel).unwrap();
        assert_eq!(l1, l2);
        assert_eq!(g1, g2);
    }

    #[test]
    fn reconstruction_loss_decreases_on_overfit_batch() {
        let mut model = DynamicModel::new(tiny_config(16), 60).unwrap();
        let b = batch(1, 2, 16, 61);
        let mut adam = AdamState::new(
            AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            model
                .networks()
                .iter()
                .flat_map(|n| n.params().iter())
                .collect::<Vec<_>>(),
        );
        let mut previous = loss_rec(&model, &b).unwrap();
        for _ in 0..10 {
            let (_, g) =
                loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Serial).unwrap();
            let params: Vec<&mut Tensor> = model
                .networks_mut()
                .into_iter()
                .flat_map(|n| n.params_mut().iter_mut())
                .collect();
            adam.step(params, &g.into_flat()).unwrap();
            let now = loss_rec(&model, &b).unwrap();
            assert!(now < previous, "{now} !< {previous}");
            previous = now;
        }
    }

    #[test]
    fn transformation_loss_halves_on_frozen_encoder() {
        let mut model = DynamicModel::new(tiny_config(12), 70).unwrap();
        let b = batch(8, 4, 12, 71);
        let start = loss_trans(&model, &b).unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            model.transform.params(),
        );
        for _ in 0..200 {
            let (_, g) =
                loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Serial).unwrap();
            adam.step(model.transform.params_mut().iter_mut(), &g.transform)
                .unwrap();
        }
        let end = loss_trans(&model, &b).unwrap();
        assert!(end <= 0.5 * start, "{start} -> {end}");
    }

    #[test]
    fn evaluation_loss_decreases_on_frozen_encoder() {
        let mut model = DynamicModel::new(tiny_config(12), 80).unwrap();
        let b = batch(8, 4, 12, 81);
        let start = loss_eval(&model, &b).unwrap();
        let mut adam = AdamState::new(
            AdamConfig {
                learning_rate: 1e-2,
                ..AdamConfig::default()
            },
            model.evaluator.params(),
        );
        for _ in 0..200 {
            let (_, g) =
                loss_and_gradients(&model, &b, GradientFlow::Detached, Exec::Serial).unwrap();
            adam.step(model.evaluator.params_mut().iter_mut(), &g.evaluator)
                .unwrap();
        }
        let end = loss_eval(&model, &b).unwrap();
        assert!(end <= 0.5 * start, "{start} -> {end}");
    }
}
