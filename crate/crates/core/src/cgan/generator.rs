//! Generator: LSTM history encoding + noise, convolution stack, dense tanh head.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array2, Axis};
use rand::Rng;

use super::lstm::{lstm_backward, lstm_forward, LstmBlocks, LstmTape};
use super::params::{BlockId, ParamSet};
use super::{check_finite, leaky_relu, window_steps, ModelConfig, ModelError, NormalizedOrder, ORDER_DIM};
use crate::data::FeatureWindow;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct ConvBlocks {
    weight: BlockId,
    bias: BlockId,
    in_channels: usize,
    out_channels: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    config: ModelConfig,
    params: ParamSet,
    encoder: LstmBlocks,
    convs: Vec<ConvBlocks>,
    dense_w: BlockId,
    dense_b: BlockId,
}

/// Intermediate values of a batched generator pass.
pub struct GeneratorTape {
    encoder: LstmTape,
    /// Conv inputs in `(batch·length) × channels` layout, one per layer.
    conv_inputs: Vec<Array2<f64>>,
    /// Leaky-ReLU slopes applied after each conv layer.
    conv_masks: Vec<Array2<f64>>,
    flat: Array2<f64>,
    output: Array2<f64>,
}

impl GeneratorTape {
    /// Generated orders, `batch × 4`, each entry in (-1, 1).
    pub fn output(&self) -> &Array2<f64> {
        &self.output
    }
}

/// `(batch·len) × (k·c)` patches for a same-padded 1-d convolution.
fn im2col(input: &Array2<f64>, batch: usize, len: usize, kernel: usize) -> Array2<f64> {
    let c = input.ncols();
    let half = kernel / 2;
    let mut cols = Array2::zeros((batch * len, kernel * c));
    for b in 0..batch {
        for p in 0..len {
            let mut row = cols.row_mut(b * len + p);
            for j in 0..kernel {
                let q = p as isize + j as isize - half as isize;
                if q < 0 || q >= len as isize {
                    continue;
                }
                row.slice_mut(s![j * c..(j + 1) * c]).assign(&input.row(b * len + q as usize));
            }
        }
    }
    cols
}

fn col2im(cols: &Array2<f64>, batch: usize, len: usize, kernel: usize, channels: usize) -> Array2<f64> {
    let half = kernel / 2;
    let mut out = Array2::zeros((batch * len, channels));
    for b in 0..batch {
        for p in 0..len {
            let row = cols.row(b * len + p);
            for j in 0..kernel {
                let q = p as isize + j as isize - half as isize;
                if q < 0 || q >= len as isize {
                    continue;
                }
                let mut dst = out.row_mut(b * len + q as usize);
                dst += &row.slice(s![j * channels..(j + 1) * channels]);
            }
        }
    }
    out
}

impl Generator {
    /// All-zero parameters.
    pub fn zeros(config: &ModelConfig) -> Self {
        let mut params = ParamSet::new();
        let encoder = LstmBlocks::register(&mut params, "gen.encoder", config.features, config.hidden);
        let mut convs = Vec::new();
        let mut in_channels = 1;
        for l in 0..config.conv_layers {
            let out_channels = config.conv_channels;
            convs.push(ConvBlocks {
                weight: params.add(format!("gen.conv{l}.weight"), &[config.kernel * in_channels, out_channels]),
                bias: params.add(format!("gen.conv{l}.bias"), &[out_channels]),
                in_channels,
                out_channels,
            });
            in_channels = out_channels;
        }
        let flat = config.conv_length() * in_channels;
        let dense_w = params.add("gen.dense.weight", &[flat, ORDER_DIM]);
        let dense_b = params.add("gen.dense.bias", &[ORDER_DIM]);
        Generator { config: config.clone(), params, encoder, convs, dense_w, dense_b }
    }

    pub fn new<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Self {
        let mut g = Self::zeros(config);
        g.encoder.init(&mut g.params, rng);
        for c in g.convs.clone() {
            g.params.init_glorot(c.weight, config.kernel * c.in_channels, config.kernel * c.out_channels, rng);
        }
        let flat = g.params.blocks()[g.dense_w.0].shape[0];
        g.params.init_glorot(g.dense_w, flat, ORDER_DIM, rng);
        g
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
            return Err(ModelError::LayoutMismatch("generator".into()));
        }
        self.params = params;
        Ok(())
    }

    /// Final LSTM hidden state for one window.
    pub fn encode_history(&self, y: &FeatureWindow) -> Result<Vec<f64>, ModelError> {
        self.config.check_window(y)?;
        let tape = lstm_forward(&self.params, &self.encoder, window_steps(&[y], self.config.features));
        Ok(tape.output().row(0).to_vec())
    }

    /// Batched pass. `steps` are `batch × features` (oldest first), `noise` is
    /// `batch × noise_dim`.
    pub fn forward_batch(&self, steps: Vec<Array2<f64>>, noise: &Array2<f64>) -> Result<GeneratorTape, ModelError> {
        let cfg = &self.config;
        let batch = noise.nrows();
        if noise.ncols() != cfg.noise_dim {
            return Err(ModelError::DimensionMismatch { what: "noise", expected: cfg.noise_dim, found: noise.ncols() });
        }
        if steps.len() != cfg.history {
            return Err(ModelError::DimensionMismatch { what: "history", expected: cfg.history, found: steps.len() });
        }
        let encoder = lstm_forward(&self.params, &self.encoder, steps);
        check_finite(encoder.output(), "generator encoder")?;
        let len = cfg.conv_length();

        let mut v = Array2::zeros((batch, len));
        v.slice_mut(s![.., ..cfg.hidden]).assign(encoder.output());
        v.slice_mut(s![.., cfg.hidden..]).assign(noise);
        let mut act = v.into_shape_with_order((batch * len, 1)).expect("contiguous");

        let mut conv_inputs = Vec::with_capacity(self.convs.len());
        let mut conv_masks = Vec::with_capacity(self.convs.len());
        for c in &self.convs {
            let cols = im2col(&act, batch, len, cfg.kernel);
            let mut pre = Array2::zeros((batch * len, c.out_channels));
            pre.assign(&self.params.view1(c.bias));
            general_mat_mul(1.0, &cols, &self.params.view2(c.weight), 1.0, &mut pre);
            let mask = pre.mapv(|x| if x > 0.0 { 1.0 } else { cfg.leaky_slope });
            conv_inputs.push(act);
            act = leaky_relu(pre, cfg.leaky_slope);
            conv_masks.push(mask);
        }
        let channels = act.ncols();
        let flat = act.into_shape_with_order((batch, len * channels)).expect("contiguous");
        let mut out = Array2::zeros((batch, ORDER_DIM));
        out.assign(&self.params.view1(self.dense_b));
        general_mat_mul(1.0, &flat, &self.params.view2(self.dense_w), 1.0, &mut out);
        out.mapv_inplace(f64::tanh);
        check_finite(&out, "generator output")?;
        Ok(GeneratorTape { encoder, conv_inputs, conv_masks, flat, output: out })
    }

    pub fn forward(&self, z: &[f64], y: &FeatureWindow) -> Result<NormalizedOrder, ModelError> {
        self.config.check_window(y)?;
        let noise = Array2::from_shape_vec((1, z.len()), z.to_vec()).expect("row vector");
        let tape = self.forward_batch(window_steps(&[y], self.config.features), &noise)?;
        Ok(NormalizedOrder::from_slice(tape.output.row(0).as_slice().expect("contiguous")))
    }

    /// Accumulate parameter gradients given `d loss / d output` (`batch × 4`).
    pub fn backward(&self, tape: &GeneratorTape, d_out: &Array2<f64>, grads: &mut ParamSet) {
        let cfg = &self.config;
        let batch = d_out.nrows();
        let len = cfg.conv_length();
        let d_pre = d_out * &tape.output.mapv(|y| 1.0 - y * y);
        {
            let mut gw = grads.view2_mut(self.dense_w);
            general_mat_mul(1.0, &tape.flat.t(), &d_pre, 1.0, &mut gw);
        }
        {
            let mut gb = grads.view1_mut(self.dense_b);
            gb += &d_pre.sum_axis(Axis(0));
        }
        let d_flat = d_pre.dot(&self.params.view2(self.dense_w).t());
        let last_channels = self.convs.last().map_or(1, |c| c.out_channels);
        let mut d_act = d_flat.into_shape_with_order((batch * len, last_channels)).expect("contiguous");

        for (l, c) in self.convs.iter().enumerate().rev() {
            let d_pre = &d_act * &tape.conv_masks[l];
            let cols = im2col(&tape.conv_inputs[l], batch, len, cfg.kernel);
            {
                let mut gw = grads.view2_mut(c.weight);
                general_mat_mul(1.0, &cols.t(), &d_pre, 1.0, &mut gw);
            }
            {
                let mut gb = grads.view1_mut(c.bias);
                gb += &d_pre.sum_axis(Axis(0));
            }
            let d_cols = d_pre.dot(&self.params.view2(c.weight).t());
            d_act = col2im(&d_cols, batch, len, cfg.kernel, c.in_channels);
        }
        let d_v = d_act.into_shape_with_order((batch, len)).expect("single channel");
        let d_enc = d_v.slice(s![.., ..cfg.hidden]).to_owned();
        lstm_backward(&self.params, &self.encoder, &tape.encoder, &d_enc, grads);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cgan::ModelConfig;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal, Uniform};

    fn small_config() -> ModelConfig {
        ModelConfig { history: 4, noise_dim: 3, hidden: 3, conv_layers: 2, conv_channels: 2, ..ModelConfig::default() }
    }

    fn random_window(rng: &mut ChaCha8Rng, cfg: &ModelConfig) -> FeatureWindow {
        let u = Uniform::new(-1.0, 1.0).unwrap();
        FeatureWindow::from_values((0..cfg.window_len()).map(|_| u.sample(rng)).collect()).unwrap()
    }

    #[test]
    fn output_is_deterministic_and_bounded() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = Generator::new(&cfg, &mut rng);
        let y = random_window(&mut rng, &cfg);
        let z: Vec<f64> = (0..cfg.noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        let a = g.forward(&z, &y).unwrap();
        let b = g.forward(&z, &y).unwrap();
        assert_eq!(a, b);
        for _ in 0..1_000 {
            let y = random_window(&mut rng, &cfg);
            let z: Vec<f64> = (0..cfg.noise_dim).map(|_| 3.0 * Distribution::<f64>::sample(&StandardNormal, &mut rng)).collect();
            let o = g.forward(&z, &y).unwrap();
            assert!(o.as_array().iter().all(|v| v.abs() < 1.0));
        }
    }

    #[test]
    fn noise_changes_output() {
        let cfg = ModelConfig::default();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let g = Generator::new(&cfg, &mut rng);
        let y = random_window(&mut rng, &cfg);
        let prices: Vec<f64> = (0..100)
            .map(|_| {
                let z: Vec<f64> = (0..cfg.noise_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
                g.forward(&z, &y).unwrap().price
            })
            .collect();
        let mean = prices.iter().sum::<f64>() / 100.0;
        let var = prices.iter().map(|p| (p - mean).powi(2)).sum::<f64>() / 100.0;
        assert!(var.sqrt() > 0.0);
    }

    #[test]
    fn rejects_wrong_dimensions() {
        let cfg = small_config();
        let g = Generator::zeros(&cfg);
        let y = FeatureWindow::from_values(vec![0.0; 30]).unwrap();
        assert!(matches!(g.forward(&[0.0; 3], &y), Err(ModelError::DimensionMismatch { .. })));
        let y = FeatureWindow::from_values(vec![0.0; cfg.window_len()]).unwrap();
        assert!(matches!(g.forward(&[0.0; 5], &y), Err(ModelError::DimensionMismatch { .. })));
    }

    /// Loss = sum(w ⊙ G(z|y)) over a batch; compare every parameter gradient
    /// with central differences.
    #[test]
    fn backward_matches_finite_differences() {
        let cfg = small_config();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = Generator::new(&cfg, &mut rng);
        let windows: Vec<FeatureWindow> = (0..2).map(|_| random_window(&mut rng, &cfg)).collect();
        let refs: Vec<&FeatureWindow> = windows.iter().collect();
        let noise = Array2::from_shape_fn((2, cfg.noise_dim), |_| StandardNormal.sample(&mut rng));
        let w = Array2::from_shape_fn((2, ORDER_DIM), |_| StandardNormal.sample(&mut rng));
        let loss = |g: &Generator| {
            let t = g.forward_batch(window_steps(&refs, cfg.features), &noise).unwrap();
            (t.output() * &w).sum()
        };
        let tape = g.forward_batch(window_steps(&refs, cfg.features), &noise).unwrap();
        let mut grads = g.params().zeros_like();
        g.backward(&tape, &w, &mut grads);

        let eps = 1e-5;
        for k in 0..g.params().len() {
            let mut plus = g.clone();
            plus.params_mut().values_mut()[k] += eps;
            let mut minus = g.clone();
            minus.params_mut().values_mut()[k] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = grads.values()[k];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {an}");
        }
    }
}
