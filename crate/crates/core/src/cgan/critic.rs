//! Critic: optional LSTM encoder of the window, MLP over `[order, encoding]`.
//!
//! The hidden layers are piecewise linear, so for fixed activation masks the
//! input gradient is linear in the weights. The gradient penalty's parameter
//! gradient is therefore exact double backpropagation with the masks held
//! constant; biases and the encoder receive no penalty gradient.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Axis};
use rand::Rng;

use super::lstm::{lstm_backward, lstm_forward, LstmBlocks, LstmTape};
use super::params::{BlockId, ParamSet};
use super::{check_finite, leaky_relu, window_steps, ModelConfig, ModelError, NormalizedOrder, ORDER_DIM};
use crate::data::FeatureWindow;

#[derive(Debug, Clone, PartialEq)]
pub struct Critic {
    config: ModelConfig,
    params: ParamSet,
    encoder: Option<LstmBlocks>,
    layers: Vec<(BlockId, BlockId)>,
}

/// Activations of one MLP pass.
#[derive(Debug, Clone)]
pub struct MlpTape {
    /// Input to each dense layer; `acts[0]` is `[x, e]`.
    acts: Vec<Array2<f64>>,
    /// Activation slopes of `acts[1..]`.
    masks: Vec<Array2<f64>>,
    score: Array1<f64>,
}

impl MlpTape {
    pub fn score(&self) -> &Array1<f64> {
        &self.score
    }

    pub fn batch(&self) -> usize {
        self.score.len()
    }
}

/// Input gradient of the score plus the masked deltas the penalty backward needs.
#[derive(Debug, Clone)]
pub struct InputGradient {
    pub grad: Array2<f64>,
    /// `masked[l]` is `∂D/∂a_{l+1} ⊙ mask_{l+1}`.
    masked: Vec<Array2<f64>>,
}

impl InputGradient {
    /// Gradient with respect to the order tuple only.
    pub fn order_part(&self) -> Array2<f64> {
        self.grad.slice(s![.., ..ORDER_DIM]).to_owned()
    }
}

impl Critic {
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut params = ParamSet::new();
        let encoder = config
            .critic_encoder
            .then(|| LstmBlocks::register(&mut params, "critic.encoder", config.features, config.hidden));
        let mut dims = vec![ORDER_DIM + if config.critic_encoder { config.hidden } else { 0 }];
        dims.extend(&config.critic_widths);
        dims.push(1);
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(l, d)| {
                (params.add(format!("critic.dense{l}.weight"), &[d[0], d[1]]), params.add(format!("critic.dense{l}.bias"), &[d[1]]))
            })
            .collect();
        Critic { config: config.clone(), params, encoder, layers }
    }

    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut c = Self::zeros(config);
        if let Some(enc) = c.encoder {
            enc.init(&mut c.params, rng);
        }
        for &(w, _) in &c.layers.clone() {
            let shape = c.params.blocks()[w.0].shape.clone();
            c.params.init_glorot(w, shape[0], shape[1], rng);
        }
        c
    }

    /// `D(x) = w·x + b`: no encoder, one dense layer, no activation.
    pub fn linear(w: [f64; ORDER_DIM], b: f64) -> Self {
        let config = ModelConfig { critic_encoder: false, critic_widths: vec![], ..ModelConfig::default() };
        let mut c = Self::zeros(&config);
        let (wid, bid) = c.layers[0];
        c.params.slice_mut(wid).copy_from_slice(&w);
        c.params.slice_mut(bid)[0] = b;
        c
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn set_params(&mut self, params: ParamSet) -> Result<(), ModelError> {
        if !params.same_layout(&self.params) {
            return Err(ModelError::LayoutMismatch("critic".into()));
        }
        self.params = params;
        Ok(())
    }

    pub fn has_encoder(&self) -> bool {
        self.encoder.is_some()
    }

    /// Encoder pass over chronological steps; `None` when the critic has no encoder.
    pub fn encode(&self, steps: Vec<Array2<f64>>) -> Option<LstmTape> {
        self.encoder.as_ref().map(|enc| lstm_forward(&self.params, enc, steps))
    }

    pub fn backward_encoder(&self, tape: &LstmTape, d_enc: &Array2<f64>, grads: &mut ParamSet) {
        if let Some(enc) = &self.encoder {
            lstm_backward(&self.params, enc, tape, d_enc, grads);
        }
    }

    /// Concatenate orders (`batch × 4`) with encodings.
    pub fn mlp_input(&self, x: &Array2<f64>, enc: Option<&Array2<f64>>) -> Array2<f64> {
        match enc {
            Some(e) => ndarray::concatenate(Axis(1), &[x.view(), e.view()]).expect("same batch"),
            None => x.clone(),
        }
    }

    pub fn mlp_forward(&self, input: Array2<f64>) -> Result<MlpTape, ModelError> {
        let slope = self.config.leaky_slope;
        let nl = self.layers.len();
        let mut acts = vec![input];
        let mut masks = Vec::with_capacity(nl - 1);
        for (l, &(w, b)) in self.layers.iter().enumerate() {
            let a = acts.last().unwrap();
            let mut z = Array2::zeros((a.nrows(), self.params.blocks()[w.0].shape[1]));
            z.assign(&self.params.view1(b));
            general_mat_mul(1.0, a, &self.params.view2(w), 1.0, &mut z);
            if l + 1 == nl {
                check_finite(&z, "critic score")?;
                let score = z.column(0).to_owned();
                return Ok(MlpTape { acts, masks, score });
            }
            masks.push(z.mapv(|v| if v > 0.0 { 1.0 } else { slope }));
            acts.push(leaky_relu(z, slope));
        }
        unreachable!("critic has at least one layer")
    }

    /// Accumulate parameter gradients for `d loss / d score`; returns the
    /// gradient with respect to the MLP input.
    pub fn mlp_backward(&self, tape: &MlpTape, d_score: &Array1<f64>, grads: &mut ParamSet) -> Array2<f64> {
        let mut d = d_score.clone().insert_axis(Axis(1));
        for (l, &(w, b)) in self.layers.iter().enumerate().rev() {
            if l + 1 < self.layers.len() {
                d *= &tape.masks[l];
            }
            {
                let mut gw = grads.view2_mut(w);
                general_mat_mul(1.0, &tape.acts[l].t(), &d, 1.0, &mut gw);
            }
            {
                let mut gb = grads.view1_mut(b);
                gb += &d.sum_axis(Axis(0));
            }
            d = d.dot(&self.params.view2(w).t());
        }
        d
    }

    /// `∂D/∂input` for every row of the tape.
    pub fn input_gradient(&self, tape: &MlpTape) -> InputGradient {
        let nl = self.layers.len();
        let batch = tape.batch();
        let (w_last, _) = self.layers[nl - 1];
        let w_row = self.params.view2(w_last).column(0).to_owned();
        let mut delta = w_row.broadcast((batch, w_row.len())).expect("broadcast").to_owned();
        let mut masked = vec![Array2::zeros((0, 0)); nl - 1];
        for l in (0..nl - 1).rev() {
            let dm = &delta * &tape.masks[l];
            delta = dm.dot(&self.params.view2(self.layers[l].0).t());
            masked[l] = dm;
        }
        InputGradient { grad: delta, masked }
    }

    /// Mean over rows of `λ (‖∇_x D‖ − 1)²`, plus the adjoint `∂penalty/∂grad`.
    pub fn penalty(&self, ig: &InputGradient, lambda: f64) -> (f64, Array2<f64>) {
        let batch = ig.grad.nrows();
        let mut adj = Array2::zeros(ig.grad.raw_dim());
        let mut total = 0.0;
        for b in 0..batch {
            let g = ig.grad.slice(s![b, ..ORDER_DIM]);
            let norm = g.dot(&g).sqrt();
            total += lambda * (norm - 1.0).powi(2);
            if norm > 0.0 {
                let k = lambda * 2.0 * (norm - 1.0) / norm / batch as f64;
                adj.slice_mut(s![b, ..ORDER_DIM]).assign(&(&g * k));
            }
        }
        (total / batch as f64, adj)
    }

    /// Accumulate the penalty's weight gradient given its adjoint.
    pub fn penalty_backward(&self, tape: &MlpTape, ig: &InputGradient, adj: Array2<f64>, grads: &mut ParamSet) {
        let nl = self.layers.len();
        let mut adj = adj;
        for l in 0..nl - 1 {
            let w = self.layers[l].0;
            {
                let mut gw = grads.view2_mut(w);
                general_mat_mul(1.0, &adj.t(), &ig.masked[l], 1.0, &mut gw);
            }
            adj = adj.dot(&self.params.view2(w)) * &tape.masks[l];
        }
        let (w_last, _) = self.layers[nl - 1];
        let col = adj.sum_axis(Axis(0));
        let mut gw = grads.view2_mut(w_last);
        gw.column_mut(0).scaled_add(1.0, &col);
    }

    /// Full pass for a batch of orders sharing `steps`.
    pub fn score_batch(&self, x: &Array2<f64>, steps: Vec<Array2<f64>>) -> Result<MlpTape, ModelError> {
        let enc = self.encode(steps);
        self.mlp_forward(self.mlp_input(x, enc.as_ref().map(|t| t.output())))
    }

    pub fn forward(&self, x: &NormalizedOrder, y: &FeatureWindow) -> Result<f64, ModelError> {
        let steps = if self.has_encoder() {
            self.config.check_window(y)?;
            window_steps(&[y], self.config.features)
        } else {
            Vec::new()
        };
        let xm = Array2::from_shape_vec((1, ORDER_DIM), x.as_array().to_vec()).expect("row");
        Ok(self.score_batch(&xm, steps)?.score[0])
    }

    /// `∇_x D(x|y)` for a single order.
    pub fn order_gradient(&self, x: &NormalizedOrder, y: &FeatureWindow) -> Result<[f64; ORDER_DIM], ModelError> {
        let steps = if self.has_encoder() {
            self.config.check_window(y)?;
            window_steps(&[y], self.config.features)
        } else {
            Vec::new()
        };
        let xm = Array2::from_shape_vec((1, ORDER_DIM), x.as_array().to_vec()).expect("row");
        let tape = self.score_batch(&xm, steps)?;
        let g = self.input_gradient(&tape).order_part();
        Ok([g[[0, 0]], g[[0, 1]], g[[0, 2]], g[[0, 3]]])
    }
}

/// `λ (‖∇_x D(x|y)‖₂ − 1)²` at a single evaluation point.
pub fn gradient_penalty(critic: &Critic, x: &NormalizedOrder, y: &FeatureWindow, lambda: f64) -> Result<f64, ModelError> {
    let g = critic.order_gradient(x, y)?;
    let norm = g.iter().map(|v| v * v).sum::<f64>().sqrt();
    Ok(lambda * (norm - 1.0).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn window(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> FeatureWindow {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        FeatureWindow::from_values((0..cfg.window_len()).map(|_| u.sample(rng)).collect()).unwrap()
    }

    fn order(rng: &mut ChaCha8Rng) -> NormalizedOrder {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        NormalizedOrder { price: u.sample(rng), volume: u.sample(rng), direction: u.sample(rng), time: u.sample(rng) }
    }

    #[test]
    fn zero_params_score_zero() {
        let cfg = ModelConfig::default();
        let c = Critic::zeros(&cfg);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10 {
            assert_eq!(c.forward(&order(&mut rng), &window(&mut rng, &cfg)).unwrap(), 0.0);
        }
    }

    #[test]
    fn unit_scale_params_give_finite_scores() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut c = Critic::zeros(&cfg);
        for v in c.params_mut().values_mut() {
            *v = StandardNormal.sample(&mut rng);
        }
        for _ in 0..1_000 {
            assert!(c.forward(&order(&mut rng), &window(&mut rng, &cfg)).unwrap().is_finite());
        }
    }

    #[test]
    fn linear_critic_closed_forms() {
        let y = FeatureWindow::from_values(vec![0.0; 500]).unwrap();
        let x = NormalizedOrder { price: 0.5, volume: -0.25, direction: 1.0, time: 0.1 };
        let c = Critic::linear([0.6, 0.8, 0.0, 0.0], 0.3);
        assert!((c.forward(&x, &y).unwrap() - (0.6 * 0.5 - 0.8 * 0.25 + 0.3)).abs() < 1e-15);
        assert!(gradient_penalty(&c, &x, &y, 10.0).unwrap().abs() < 1e-12);
        let c = Critic::linear([3.0, 4.0, 0.0, 0.0], 0.0);
        assert!((gradient_penalty(&c, &x, &y, 10.0).unwrap() - 160.0).abs() < 1e-9);
    }

    fn small_config(encoder: bool) -> ModelConfig {
        ModelConfig { history: 3, hidden: 3, critic_widths: vec![5, 4], critic_encoder: encoder, ..ModelConfig::default() }
    }

    fn random_critic(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> Critic {
        let mut c = Critic::zeros(cfg);
        for v in c.params_mut().values_mut() {
            *v = 0.7 * Distribution::<f64>::sample(&StandardNormal, rng);
        }
        c
    }

    #[test]
    fn input_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let cfg = small_config(true);
        for _ in 0..100 {
            let c = random_critic(&mut rng, &cfg);
            let y = window(&mut rng, &cfg);
            let x = order(&mut rng);
            let g = c.order_gradient(&x, &y).unwrap();
            let h = 1e-4;
            for i in 0..ORDER_DIM {
                let mut p = x.as_array();
                let mut m = x.as_array();
                p[i] += h;
                m[i] -= h;
                let fd = (c.forward(&NormalizedOrder::from_slice(&p), &y).unwrap()
                    - c.forward(&NormalizedOrder::from_slice(&m), &y).unwrap())
                    / (2.0 * h);
                let scale = g[i].abs().max(fd.abs()).max(1e-8);
                // a kink inside the stencil makes the difference quotient meaningless
                if (fd - g[i]).abs() / scale >= 1e-4 {
                    let kinked = c.order_gradient(&NormalizedOrder::from_slice(&p), &y).unwrap()[i]
                        != c.order_gradient(&NormalizedOrder::from_slice(&m), &y).unwrap()[i];
                    assert!(kinked, "component {i}: fd {fd} vs {}", g[i]);
                }
            }
        }
    }

    /// The penalty's weight gradient against central differences of the
    /// mean penalty over a batch.
    #[test]
    fn penalty_weight_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let cfg = small_config(true);
        let c = random_critic(&mut rng, &cfg);
        let windows: Vec<FeatureWindow> = (0..3).map(|_| window(&mut rng, &cfg)).collect();
        let refs: Vec<&FeatureWindow> = windows.iter().collect();
        let x = Array2::from_shape_fn((3, ORDER_DIM), |_| Uniform::new(-1.0, 1.0).unwrap().sample(&mut rng));
        let lambda = 10.0;
        let penalty = |c: &Critic| {
            let tape = c.score_batch(&x, window_steps(&refs, cfg.features)).unwrap();
            c.penalty(&c.input_gradient(&tape), lambda).0
        };
        let tape = c.score_batch(&x, window_steps(&refs, cfg.features)).unwrap();
        let ig = c.input_gradient(&tape);
        let (_, adj) = c.penalty(&ig, lambda);
        let mut grads = c.params().zeros_like();
        c.penalty_backward(&tape, &ig, adj, &mut grads);

        let eps = 1e-6;
        let mut checked = 0;
        for k in 0..c.params().len() {
            let mut plus = c.clone();
            plus.params_mut().values_mut()[k] += eps;
            let mut minus = c.clone();
            minus.params_mut().values_mut()[k] -= eps;
            let masks_same = |o: &Critic| {
                let t = o.score_batch(&x, window_steps(&refs, cfg.features)).unwrap();
                t.masks == tape.masks
            };
            if !masks_same(&plus) || !masks_same(&minus) {
                continue;
            }
            checked += 1;
            let fd = (penalty(&plus) - penalty(&minus)) / (2.0 * eps);
            let an = grads.values()[k];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {an}");
        }
        assert!(checked > c.params().len() / 2);
    }

    #[test]
    fn mlp_backward_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let cfg = small_config(true);
        let c = random_critic(&mut rng, &cfg);
        let windows: Vec<FeatureWindow> = (0..2).map(|_| window(&mut rng, &cfg)).collect();
        let refs: Vec<&FeatureWindow> = windows.iter().collect();
        let x = Array2::from_shape_fn((2, ORDER_DIM), |_| Uniform::new(-1.0, 1.0).unwrap().sample(&mut rng));
        let w = Array1::from_vec(vec![0.7, -1.3]);
        let loss = |c: &Critic| c.score_batch(&x, window_steps(&refs, cfg.features)).unwrap().score.dot(&w);

        let enc = c.encode(window_steps(&refs, cfg.features)).unwrap();
        let tape = c.mlp_forward(c.mlp_input(&x, Some(enc.output()))).unwrap();
        let mut grads = c.params().zeros_like();
        let d_in = c.mlp_backward(&tape, &w, &mut grads);
        c.backward_encoder(&enc, &d_in.slice(s![.., ORDER_DIM..]).to_owned(), &mut grads);

        let eps = 1e-6;
        for k in 0..c.params().len() {
            let mut plus = c.clone();
            plus.params_mut().values_mut()[k] += eps;
            let mut minus = c.clone();
            minus.params_mut().values_mut()[k] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = grads.values()[k];
            assert!((fd - an).abs() <= 1e-5 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {an}");
        }
    }
}
