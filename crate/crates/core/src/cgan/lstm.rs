//! Batched LSTM history encoder with backpropagation through time.
//!
//! Gate layout in the fused weight matrices is `[input | forget | cell | output]`.
//! Sequences are fed oldest step first; the encoding is the final hidden state.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array2, Axis};
use rand::Rng;

use super::params::{BlockId, ParamSet};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LstmBlocks {
    pub w_ih: BlockId,
    pub w_hh: BlockId,
    pub bias: BlockId,
    pub input: usize,
    pub hidden: usize,
}

impl LstmBlocks {
    pub fn register(params: &mut ParamSet, prefix: &str, input: usize, hidden: usize) -> Self {
        LstmBlocks {
            w_ih: params.add(format!("{prefix}.w_ih"), &[input, 4 * hidden]),
            w_hh: params.add(format!("{prefix}.w_hh"), &[hidden, 4 * hidden]),
            bias: params.add(format!("{prefix}.bias"), &[4 * hidden]),
            input,
            hidden,
        }
    }

    /// Glorot weights, zero biases except a forget-gate bias of 1.
    pub fn init<R: Rng + ?Sized>(&self, params: &mut ParamSet, rng: &mut R) {
        params.init_glorot(self.w_ih, self.input, self.hidden, rng);
        params.init_glorot(self.w_hh, self.hidden, self.hidden, rng);
        let h = self.hidden;
        let bias = params.slice_mut(self.bias);
        bias.iter_mut().for_each(|b| *b = 0.0);
        bias[h..2 * h].iter_mut().for_each(|b| *b = 1.0);
    }
}

fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Everything backpropagation needs from a forward pass.
#[derive(Debug, Clone)]
pub struct LstmTape {
    xs: Vec<Array2<f64>>,
    hs: Vec<Array2<f64>>,
    cs: Vec<Array2<f64>>,
    gates: Vec<Array2<f64>>,
}

impl LstmTape {
    /// Final hidden state, `batch × hidden`.
    pub fn output(&self) -> &Array2<f64> {
        self.hs.last().expect("tape has the initial state")
    }
}

/// Run the cell over `xs` (each `batch × input`, oldest first).
pub fn lstm_forward(params: &ParamSet, blocks: &LstmBlocks, xs: Vec<Array2<f64>>) -> LstmTape {
    let h = blocks.hidden;
    let batch = xs.first().map_or(0, |x| x.nrows());
    let w_ih = params.view2(blocks.w_ih);
    let w_hh = params.view2(blocks.w_hh);
    let bias = params.view1(blocks.bias);
    let mut hs: Vec<Array2<f64>> = vec![Array2::zeros((batch, h))];
    let mut cs: Vec<Array2<f64>> = vec![Array2::zeros((batch, h))];
    let mut gates = Vec::with_capacity(xs.len());
    for x in &xs {
        let mut z = Array2::zeros((batch, 4 * h));
        z.assign(&bias);
        general_mat_mul(1.0, x, &w_ih, 1.0, &mut z);
        general_mat_mul(1.0, hs.last().unwrap(), &w_hh, 1.0, &mut z);
        let c_prev = cs.last().unwrap();
        let mut c = Array2::zeros((batch, h));
        let mut hn = Array2::zeros((batch, h));
        for r in 0..batch {
            let zr = z.row_mut(r).into_slice().expect("contiguous");
            let (zi, rest) = zr.split_at_mut(h);
            let (zf, rest) = rest.split_at_mut(h);
            let (zg, zo) = rest.split_at_mut(h);
            let cp = c_prev.row(r);
            let mut cr = c.row_mut(r);
            let mut hr = hn.row_mut(r);
            for j in 0..h {
                let i = sigmoid(zi[j]);
                let f = sigmoid(zf[j]);
                let g = zg[j].tanh();
                let o = sigmoid(zo[j]);
                let cv = f * cp[j] + i * g;
                zi[j] = i;
                zf[j] = f;
                zg[j] = g;
                zo[j] = o;
                cr[j] = cv;
                hr[j] = o * cv.tanh();
            }
        }
        gates.push(z);
        cs.push(c);
        hs.push(hn);
    }
    LstmTape { xs, hs, cs, gates }
}

/// Accumulate parameter gradients given `d loss / d output`.
pub fn lstm_backward(params: &ParamSet, blocks: &LstmBlocks, tape: &LstmTape, d_out: &Array2<f64>, grads: &mut ParamSet) {
    let h = blocks.hidden;
    let batch = d_out.nrows();
    let w_hh = params.view2(blocks.w_hh);
    let mut dh = d_out.clone();
    let mut dc = Array2::<f64>::zeros((batch, h));
    let mut dz = Array2::<f64>::zeros((batch, 4 * h));
    let mut d_w_ih = Array2::<f64>::zeros((blocks.input, 4 * h));
    let mut d_w_hh = Array2::<f64>::zeros((h, 4 * h));
    for t in (0..tape.gates.len()).rev() {
        let gates = &tape.gates[t];
        let c = &tape.cs[t + 1];
        let c_prev = &tape.cs[t];
        for r in 0..batch {
            let g_row = gates.row(r);
            let mut dz_row = dz.row_mut(r);
            for j in 0..h {
                let i = g_row[j];
                let f = g_row[h + j];
                let g = g_row[2 * h + j];
                let o = g_row[3 * h + j];
                let tc = c[[r, j]].tanh();
                let dhv = dh[[r, j]];
                let dct = dc[[r, j]] + dhv * o * (1.0 - tc * tc);
                dz_row[j] = dct * g * i * (1.0 - i);
                dz_row[h + j] = dct * c_prev[[r, j]] * f * (1.0 - f);
                dz_row[2 * h + j] = dct * i * (1.0 - g * g);
                dz_row[3 * h + j] = dhv * tc * o * (1.0 - o);
                dc[[r, j]] = dct * f;
            }
        }
        general_mat_mul(1.0, &tape.xs[t].t(), &dz, 1.0, &mut d_w_ih);
        general_mat_mul(1.0, &tape.hs[t].t(), &dz, 1.0, &mut d_w_hh);
        let mut db = grads.view1_mut(blocks.bias);
        db += &dz.sum_axis(Axis(0));
        if t > 0 {
            dh = dz.dot(&w_hh.t());
        }
    }
    let mut g = grads.view2_mut(blocks.w_ih);
    g += &d_w_ih;
    let mut g = grads.view2_mut(blocks.w_hh);
    g += &d_w_hh;
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, StandardNormal};

    fn random_inputs(rng: &mut ChaCha8Rng, steps: usize, batch: usize, input: usize) -> Vec<Array2<f64>> {
        (0..steps)
            .map(|_| Array2::from_shape_fn((batch, input), |_| StandardNormal.sample(rng)))
            .collect()
    }

    #[test]
    fn zero_parameters_give_zero_encoding() {
        let mut p = ParamSet::new();
        let blocks = LstmBlocks::register(&mut p, "enc", 3, 4);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let tape = lstm_forward(&p, &blocks, random_inputs(&mut rng, 5, 2, 3));
        assert!(tape.output().iter().all(|v| *v == 0.0));
    }

    /// Loss = sum(w ⊙ h_T) for a fixed random w; compare with central differences.
    #[test]
    fn bptt_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut p = ParamSet::new();
        let blocks = LstmBlocks::register(&mut p, "enc", 3, 4);
        for v in p.values_mut() {
            *v = 0.5 * Distribution::<f64>::sample(&StandardNormal, &mut rng);
        }
        let xs = random_inputs(&mut rng, 6, 2, 3);
        let w = Array2::from_shape_fn((2, 4), |_| StandardNormal.sample(&mut rng));
        let loss = |p: &ParamSet| (lstm_forward(p, &blocks, xs.clone()).output() * &w).sum();

        let tape = lstm_forward(&p, &blocks, xs.clone());
        let mut grads = p.zeros_like();
        lstm_backward(&p, &blocks, &tape, &w, &mut grads);

        let eps = 1e-5;
        for k in 0..p.len() {
            let mut plus = p.clone();
            plus.values_mut()[k] += eps;
            let mut minus = p.clone();
            minus.values_mut()[k] -= eps;
            let fd = (loss(&plus) - loss(&minus)) / (2.0 * eps);
            let an = grads.values()[k];
            assert!((fd - an).abs() <= 1e-6 * (1.0 + fd.abs()), "param {k}: fd {fd} vs {an}");
        }
    }
}
