use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::{check_finite, gemm, Tensor};
use crate::{Error, Result};

static NEXT_STAMP: AtomicU64 = AtomicU64::new(1);

fn fresh_stamp() -> u64 {
    NEXT_STAMP.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    fn apply(self, v: f32) -> f32 {
        match self {
            Activation::Relu => v.max(0.0),
            Activation::Tanh => v.tanh(),
            Activation::Identity => v,
        }
    }

    /// Derivative expressed through the activation's output.
    #[inline]
    fn derivative_from_output(self, y: f32) -> f32 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

/// Fully connected network. Layer `l` computes `act_l(x W_l + b_l)` with
/// `W_l` stored `[in, out]`.
///
/// Parameters are ordered `[W_0, b_0, W_1, b_1, ..]` everywhere (gradients,
/// optimizer state, checkpoints).
#[derive(Debug, Clone)]
pub struct Mlp {
    sizes: Vec<usize>,
    activations: Vec<Activation>,
    params: Vec<Tensor>,
    stamp: u64,
}

/// Activations recorded by [`Mlp::forward`]; `layers[0]` is the input and
/// `layers[l + 1]` the output of layer `l`.
#[derive(Debug, Clone)]
pub struct MlpCache {
    stamp: u64,
    rows: usize,
    layers: Vec<Vec<f32>>,
}

impl MlpCache {
    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn output(&self) -> &[f32] {
        self.layers.last().unwrap()
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases.
    pub fn new<R: Rng>(sizes: &[usize], activations: &[Activation], rng: &mut R) -> Result<Self> {
        let mut mlp = Self::zeros(sizes, activations)?;
        for l in 0..activations.len() {
            let (fan_in, fan_out) = (sizes[l], sizes[l + 1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for w in mlp.params[2 * l].data_mut() {
                *w = rng.random_range(-limit..=limit) as f32;
            }
        }
        Ok(mlp)
    }

    pub fn zeros(sizes: &[usize], activations: &[Activation]) -> Result<Self> {
        if sizes.len() < 2 || activations.len() != sizes.len() - 1 {
            return Err(Error::Dimension(format!(
                "{} layer sizes need {} activations, got {}",
                sizes.len(),
                sizes.len().saturating_sub(1),
                activations.len()
            )));
        }
        if sizes.contains(&0) {
            return Err(Error::Dimension(format!("zero-width layer in {sizes:?}")));
        }
        let params = sizes
            .windows(2)
            .flat_map(|w| [Tensor::zeros(&[w[0], w[1]]), Tensor::zeros(&[w[1]])])
            .collect();
        Ok(Self {
            sizes: sizes.to_vec(),
            activations: activations.to_vec(),
            params,
            stamp: fresh_stamp(),
        })
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn activations(&self) -> &[Activation] {
        &self.activations
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.activations.len()
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(Tensor::len).sum()
    }

    pub fn params(&self) -> &[Tensor] {
        &self.params
    }

    /// Mutable parameter access. Any cache taken before this call becomes stale.
    pub fn params_mut(&mut self) -> &mut [Tensor] {
        self.stamp = fresh_stamp();
        &mut self.params
    }

    pub fn zero_grads(&self) -> Vec<Tensor> {
        self.params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect()
    }

    /// Forward pass over `rows` inputs laid out row-major.
    pub fn forward(&self, input: &[f32], rows: usize) -> Result<MlpCache> {
        if input.len() != rows * self.input_dim() {
            return Err(Error::Dimension(format!(
                "MLP input has {} values, expected {rows} x {}",
                input.len(),
                self.input_dim()
            )));
        }
        let mut layers = Vec::with_capacity(self.num_layers() + 1);
        layers.push(input.to_vec());
        for l in 0..self.num_layers() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let bias = self.params[2 * l + 1].data();
            let mut out = Vec::with_capacity(rows * fan_out);
            for _ in 0..rows {
                out.extend_from_slice(bias);
            }
            gemm(
                rows,
                fan_in,
                fan_out,
                &layers[l],
                false,
                self.params[2 * l].data(),
                false,
                &mut out,
                1.0,
            );
            let act = self.activations[l];
            if act != Activation::Identity {
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
            check_finite(&out, "MLP activation")?;
            layers.push(out);
        }
        Ok(MlpCache {
            stamp: self.stamp,
            rows,
            layers,
        })
    }

    /// Reverse pass: accumulates parameter gradients into `grads` (same order
    /// as [`Mlp::params`]) and returns the gradient with respect to the input.
    pub fn backward(
        &self,
        cache: &MlpCache,
        grad_output: &[f32],
        grads: &mut [Tensor],
    ) -> Result<Vec<f32>> {
        if cache.stamp != self.stamp {
            return Err(Error::Contract(
                "MLP cache does not belong to the current parameters".into(),
            ));
        }
        let rows = cache.rows;
        if grad_output.len() != rows * self.output_dim() {
            return Err(Error::Dimension(format!(
                "output gradient has {} values, expected {rows} x {}",
                grad_output.len(),
                self.output_dim()
            )));
        }
        if grads.len() != self.params.len() {
            return Err(Error::Dimension("gradient buffer count mismatch".into()));
        }
        let mut delta = grad_output.to_vec();
        for l in (0..self.num_layers()).rev() {
            let (fan_in, fan_out) = (self.sizes[l], self.sizes[l + 1]);
            let act = self.activations[l];
            if act != Activation::Identity {
                for (d, y) in delta.iter_mut().zip(&cache.layers[l + 1]) {
                    *d *= act.derivative_from_output(*y);
                }
            }
            let (w_grads, rest) = grads[2 * l..].split_at_mut(1);
            gemm(
                fan_in,
                rows,
                fan_out,
                &cache.layers[l],
                true,
                &delta,
                false,
                w_grads[0].data_mut(),
                1.0,
            );
            let b_grad = rest[0].data_mut();
            for row in delta.chunks_exact(fan_out) {
                for (g, d) in b_grad.iter_mut().zip(row) {
                    *g += d;
                }
            }
            let mut input_grad = vec![0.0; rows * fan_in];
            gemm(
                rows,
                fan_out,
                fan_in,
                &delta,
                false,
                self.params[2 * l].data(),
                true,
                &mut input_grad,
                0.0,
            );
            delta = input_grad;
        }
        Ok(delta)
    }

    /// Replaces all parameters, e.g. from a checkpoint. Shapes must match.
    pub fn set_params(&mut self, params: Vec<Tensor>) -> Result<()> {
        if params.len() != self.params.len()
            || params
                .iter()
                .zip(&self.params)
                .any(|(a, b)| a.shape() != b.shape())
        {
            return Err(Error::Dimension(
                "parameter shapes do not match the MLP".into(),
            ));
        }
        self.params = params;
        self.stamp = fresh_stamp();
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    /// Straight-line re-implementation with explicit loops, f64 accumulation.
    fn reference_forward(mlp: &Mlp, x: &[f32]) -> Vec<f64> {
        let mut h: Vec<f64> = x.iter().map(|&v| v as f64).collect();
        for l in 0..mlp.num_layers() {
            let (i_n, o_n) = (mlp.sizes()[l], mlp.sizes()[l + 1]);
            let w = mlp.params()[2 * l].data();
            let b = mlp.params()[2 * l + 1].data();
            let mut out = vec![0.0; o_n];
            for o in 0..o_n {
                let mut s = b[o] as f64;
                for i in 0..i_n {
                    s += h[i] * w[i * o_n + o] as f64;
                }
                out[o] = match mlp.activations()[l] {
                    Activation::Relu => s.max(0.0),
                    Activation::Tanh => s.tanh(),
                    Activation::Identity => s,
                };
            }
            h = out;
        }
        h
    }

    #[test]
    fn zero_mlp_gives_zero_output() {
        let mlp = Mlp::zeros(&[4, 3, 2], &[Activation::Identity, Activation::Identity]).unwrap();
        let cache = mlp.forward(&[1.0, -2.0, 3.0, 4.0], 1).unwrap();
        assert_eq!(cache.output(), &[0.0, 0.0]);
    }

    #[test]
    fn single_affine_unit() {
        let mut mlp = Mlp::zeros(&[1, 1], &[Activation::Identity]).unwrap();
        mlp.params_mut()[0].data_mut()[0] = 2.0;
        mlp.params_mut()[1].data_mut()[0] = 1.0;
        assert_eq!(mlp.forward(&[3.0], 1).unwrap().output(), &[7.0]);
    }

    #[test]
    fn forward_matches_reference() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        for trial in 0..10 {
            let acts = [Activation::Relu, Activation::Tanh, Activation::Identity];
            let mut mlp = Mlp::new(&[5, 7, 6, 3], &acts, &mut rng).unwrap();
            for b in [1, 3, 5] {
                for v in mlp.params_mut()[b].data_mut() {
                    *v = rng.random_range(-0.5..0.5);
                }
            }
            let rows = 1 + trial % 4;
            let x: Vec<f32> = (0..rows * 5).map(|_| rng.random_range(-2.0..2.0)).collect();
            let out = mlp.forward(&x, rows).unwrap();
            for r in 0..rows {
                let want = reference_forward(&mlp, &x[r * 5..(r + 1) * 5]);
                for (g, w) in out.output()[r * 3..(r + 1) * 3].iter().zip(want) {
                    assert!(
                        (*g as f64 - w).abs() <= 1e-6 * (1.0 + w.abs()),
                        "{g} vs {w}"
                    );
                }
            }
        }
    }

    #[test]
    fn input_dimension_checked() {
        let mlp = Mlp::zeros(&[3, 2], &[Activation::Relu]).unwrap();
        assert!(matches!(
            mlp.forward(&[1.0, 2.0], 1),
            Err(Error::Dimension(_))
        ));
        assert!(Mlp::zeros(&[3, 2], &[]).is_err());
    }

    #[test]
    fn zero_output_gradient_gives_zero_parameter_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mlp = Mlp::new(
            &[3, 4, 2],
            &[Activation::Tanh, Activation::Identity],
            &mut rng,
        )
        .unwrap();
        let cache = mlp.forward(&[0.1, 0.2, 0.3], 1).unwrap();
        let mut grads = mlp.zero_grads();
        mlp.backward(&cache, &[0.0, 0.0], &mut grads).unwrap();
        assert!(grads.iter().all(|g| g.data().iter().all(|&v| v == 0.0)));
    }

    #[test]
    fn linear_input_gradient_is_w_transpose_g() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mlp = Mlp::new(&[3, 2], &[Activation::Identity], &mut rng).unwrap();
        let cache = mlp.forward(&[1.0, 2.0, 3.0], 1).unwrap();
        let g = [0.5, -2.0];
        let dx = mlp.backward(&cache, &g, &mut mlp.zero_grads()).unwrap();
        let w = mlp.params()[0].data();
        for i in 0..3 {
            let want = w[i * 2] * g[0] + w[i * 2 + 1] * g[1];
            assert!((dx[i] - want).abs() < 1e-6);
        }
    }

    #[test]
    fn stale_cache_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut mlp = Mlp::new(&[2, 2], &[Activation::Relu], &mut rng).unwrap();
        let cache = mlp.forward(&[1.0, 1.0], 1).unwrap();
        mlp.params_mut()[1].data_mut()[0] += 1.0;
        let mut grads = mlp.zero_grads();
        assert!(matches!(
            mlp.backward(&cache, &[1.0, 1.0], &mut grads),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn init_bounds_follow_glorot() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mlp = Mlp::new(&[10, 30], &[Activation::Relu], &mut rng).unwrap();
        let limit = (6.0f32 / 40.0).sqrt();
        assert!(mlp.params()[0].data().iter().all(|w| w.abs() <= limit));
        assert!(mlp.params()[1].data().iter().all(|&b| b == 0.0));
    }

    /// Central finite differences on `loss = sum_i c_i * out_i`.
    #[test]
    fn gradients_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let h = 1e-3f32;
        for trial in 0..20 {
            let acts = [Activation::Tanh, Activation::Relu, Activation::Identity];
            let mut mlp = Mlp::new(&[4, 6, 5, 3], &acts, &mut rng).unwrap();
            for b in [1, 3, 5] {
                for v in mlp.params_mut()[b].data_mut() {
                    *v = rng.random_range(-0.3..0.3);
                }
            }
            let rows = 1 + trial % 3;
            let x: Vec<f32> = (0..rows * 4).map(|_| rng.random_range(-1.0..1.0)).collect();
            let coef: Vec<f32> = (0..rows * 3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let loss = |m: &Mlp, x: &[f32]| -> f64 {
                let out = m.forward(x, rows).unwrap();
                out.output()
                    .iter()
                    .zip(&coef)
                    .map(|(o, c)| (*o as f64) * (*c as f64))
                    .sum()
            };
            let cache = mlp.forward(&x, rows).unwrap();
            let mut grads = mlp.zero_grads();
            let dx = mlp.backward(&cache, &coef, &mut grads).unwrap();
            let close = |a: f64, n: f64| (a - n).abs() <= 1e-2 * a.abs().max(n.abs()).max(1e-2);
            for t in 0..mlp.params().len() {
                for i in 0..mlp.params()[t].len() {
                    let orig = mlp.params()[t].data()[i];
                    mlp.params_mut()[t].data_mut()[i] = orig + h;
                    let up = loss(&mlp, &x);
                    mlp.params_mut()[t].data_mut()[i] = orig - h;
                    let down = loss(&mlp, &x);
                    mlp.params_mut()[t].data_mut()[i] = orig;
                    let numeric = (up - down) / (2.0 * h as f64);
                    let analytic = grads[t].data()[i] as f64;
                    assert!(
                        close(analytic, numeric),
                        "trial {trial} tensor {t}[{i}]: {analytic} vs {numeric}"
                    );
                }
            }
            for i in 0..x.len() {
                let mut xp = x.clone();
                xp[i] += h;
                let mut xm = x.clone();
                xm[i] -= h;
                let numeric = (loss(&mlp, &xp) - loss(&mlp, &xm)) / (2.0 * h as f64);
                assert!(
                    close(dx[i] as f64, numeric),
                    "input {i}: {} vs {numeric}",
                    dx[i]
                );
            }
        }
    }
}
