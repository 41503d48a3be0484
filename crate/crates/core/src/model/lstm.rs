//! Two-layer LSTM with a dense head, batched over time-major inputs.
//!
//! Inputs for a batch of `B` sequences of length `T` are a `(T·B) × I` matrix
//! whose row `t·B + b` holds sample `b` at step `t`. Gate columns are ordered
//! input, forget, candidate, output.

use std::ops::Range;

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, ArrayViewMut2, Axis};
use rand::Rng;

use super::Mode;

/// Parameter blocks in storage order.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Block {
    /// Layer 1 input-to-hidden kernel, I × 4D.
    Kernel1,
    /// Layer 1 hidden-to-hidden weights, D × 4D.
    Recurrent1,
    Bias1,
    Kernel2,
    Recurrent2,
    Bias2,
    /// Dense head weights, D × 1.
    Dense,
    DenseBias,
}

impl Block {
    pub const ALL: [Block; 8] = [
        Block::Kernel1,
        Block::Recurrent1,
        Block::Bias1,
        Block::Kernel2,
        Block::Recurrent2,
        Block::Bias2,
        Block::Dense,
        Block::DenseBias,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Block::Kernel1 => "kernel1",
            Block::Recurrent1 => "recurrent1",
            Block::Bias1 => "bias1",
            Block::Kernel2 => "kernel2",
            Block::Recurrent2 => "recurrent2",
            Block::Bias2 => "bias2",
            Block::Dense => "dense",
            Block::DenseBias => "dense_bias",
        }
    }
}

/// All trainable weights, stored contiguously.
#[derive(Debug, Clone, PartialEq)]
pub struct Params {
    n_in: usize,
    hidden: usize,
    data: Vec<f64>,
}

impl Params {
    pub fn zeros(n_in: usize, hidden: usize) -> Self {
        let len = Block::ALL.iter().map(|b| block_len(n_in, hidden, *b)).sum();
        Self {
            n_in,
            hidden,
            data: vec![0.0; len],
        }
    }

    /// Uniform ±√(6/(fan_in+fan_out)) per matrix, zero biases except forget gates at 1.
    pub fn glorot<R: Rng>(n_in: usize, hidden: usize, rng: &mut R) -> Self {
        let mut p = Self::zeros(n_in, hidden);
        for block in [Block::Kernel1, Block::Recurrent1, Block::Kernel2, Block::Recurrent2, Block::Dense] {
            let (rows, cols) = p.shape(block);
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            for w in p.block_mut(block) {
                *w = rng.gen_range(-limit..limit);
            }
        }
        for block in [Block::Bias1, Block::Bias2] {
            p.block_mut(block)[hidden..2 * hidden].fill(1.0);
        }
        p
    }

    pub fn from_blocks(n_in: usize, hidden: usize, data: Vec<f64>) -> Option<Self> {
        let p = Self::zeros(n_in, hidden);
        (p.data.len() == data.len()).then_some(Self { data, ..p })
    }

    pub fn n_in(&self) -> usize {
        self.n_in
    }

    pub fn hidden(&self) -> usize {
        self.hidden
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn shape(&self, block: Block) -> (usize, usize) {
        block_shape(self.n_in, self.hidden, block)
    }

    pub fn range(&self, block: Block) -> Range<usize> {
        let start: usize = Block::ALL
            .iter()
            .take_while(|b| **b != block)
            .map(|b| block_len(self.n_in, self.hidden, *b))
            .sum();
        start..start + block_len(self.n_in, self.hidden, block)
    }

    pub fn block(&self, block: Block) -> &[f64] {
        &self.data[self.range(block)]
    }

    pub fn block_mut(&mut self, block: Block) -> &mut [f64] {
        let r = self.range(block);
        &mut self.data[r]
    }

    pub fn matrix(&self, block: Block) -> ArrayView2<'_, f64> {
        ArrayView2::from_shape(self.shape(block), self.block(block)).expect("block shape")
    }

    fn vector(&self, block: Block) -> ArrayView1<'_, f64> {
        ArrayView1::from(self.block(block))
    }

    /// Σ of squared input-to-hidden kernel weights over both layers.
    pub fn kernel_sq_norm(&self) -> f64 {
        [Block::Kernel1, Block::Kernel2]
            .iter()
            .flat_map(|b| self.block(*b))
            .map(|w| w * w)
            .sum()
    }
}

fn block_shape(n_in: usize, d: usize, block: Block) -> (usize, usize) {
    match block {
        Block::Kernel1 => (n_in, 4 * d),
        Block::Recurrent1 | Block::Kernel2 | Block::Recurrent2 => (d, 4 * d),
        Block::Bias1 | Block::Bias2 => (1, 4 * d),
        Block::Dense => (d, 1),
        Block::DenseBias => (1, 1),
    }
}

fn block_len(n_in: usize, d: usize, block: Block) -> usize {
    let (r, c) = block_shape(n_in, d, block);
    r * c
}

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

struct LayerCache {
    /// Activated gates, (T·B) × 4D.
    gates: Array2<f64>,
    /// Cell states c₀..c_T, ((T+1)·B) × D.
    cell: Array2<f64>,
    /// tanh(c₁..c_T), (T·B) × D.
    tanh_cell: Array2<f64>,
    /// Hidden states h₀..h_T, ((T+1)·B) × D.
    hidden: Array2<f64>,
}

fn layer_forward(
    x: ArrayView2<f64>,
    kernel: ArrayView2<f64>,
    recurrent: ArrayView2<f64>,
    bias: ArrayView1<f64>,
    steps: usize,
    batch: usize,
) -> LayerCache {
    let d = recurrent.nrows();
    let mut gates = x.dot(&kernel);
    gates += &bias;
    let mut cell = Array2::<f64>::zeros(((steps + 1) * batch, d));
    let mut tanh_cell = Array2::<f64>::zeros((steps * batch, d));
    let mut hidden = Array2::<f64>::zeros(((steps + 1) * batch, d));
    for t in 0..steps {
        let rows = t * batch..(t + 1) * batch;
        let mut z = gates.slice_mut(s![rows.clone(), ..]);
        general_mat_mul(1.0, &hidden.slice(s![rows.clone(), ..]), &recurrent, 1.0, &mut z);
        let z = z.as_slice_mut().expect("contiguous gates");
        let c_prev = cell.slice(s![rows.clone(), ..]).to_owned();
        let c_prev = c_prev.as_slice().expect("contiguous");
        let next = (t + 1) * batch..(t + 2) * batch;
        let mut c_next = cell.slice_mut(s![next.clone(), ..]);
        let c_next = c_next.as_slice_mut().expect("contiguous");
        let mut h_next = hidden.slice_mut(s![next, ..]);
        let h_next = h_next.as_slice_mut().expect("contiguous");
        let mut tc = tanh_cell.slice_mut(s![rows, ..]);
        let tc = tc.as_slice_mut().expect("contiguous");
        for b in 0..batch {
            let zr = &mut z[b * 4 * d..(b + 1) * 4 * d];
            for j in 0..d {
                let i = sigmoid(zr[j]);
                let f = sigmoid(zr[d + j]);
                let g = zr[2 * d + j].tanh();
                let o = sigmoid(zr[3 * d + j]);
                zr[j] = i;
                zr[d + j] = f;
                zr[2 * d + j] = g;
                zr[3 * d + j] = o;
                let k = b * d + j;
                let c = f * c_prev[k] + i * g;
                let th = c.tanh();
                c_next[k] = c;
                tc[k] = th;
                h_next[k] = o * th;
            }
        }
    }
    LayerCache {
        gates,
        cell,
        tanh_cell,
        hidden,
    }
}

struct LayerGrad {
    kernel: Array2<f64>,
    recurrent: Array2<f64>,
    bias: Array1<f64>,
    input: Option<Array2<f64>>,
}

/// `dh_out` is the loss gradient with respect to h₁..h_T, (T·B) × D.
fn layer_backward(
    cache: &LayerCache,
    x: ArrayView2<f64>,
    kernel: ArrayView2<f64>,
    recurrent: ArrayView2<f64>,
    dh_out: &Array2<f64>,
    steps: usize,
    batch: usize,
    need_input: bool,
) -> LayerGrad {
    let d = recurrent.nrows();
    let mut dz = Array2::<f64>::zeros((steps * batch, 4 * d));
    let mut dh_next = Array2::<f64>::zeros((batch, d));
    let mut dc_next = vec![0.0; batch * d];
    let gates = cache.gates.as_slice().expect("contiguous");
    let cell = cache.cell.as_slice().expect("contiguous");
    let tanh_cell = cache.tanh_cell.as_slice().expect("contiguous");
    let dh_out = dh_out.as_slice().expect("contiguous");
    let recurrent_t = recurrent.t();
    for t in (0..steps).rev() {
        let rows = t * batch..(t + 1) * batch;
        {
            let mut dzt = dz.slice_mut(s![rows.clone(), ..]);
            let dzt = dzt.as_slice_mut().expect("contiguous");
            let dhn = dh_next.as_slice().expect("contiguous");
            for b in 0..batch {
                let row = t * batch + b;
                let g_row = &gates[row * 4 * d..(row + 1) * 4 * d];
                let dz_row = &mut dzt[b * 4 * d..(b + 1) * 4 * d];
                for j in 0..d {
                    let k = b * d + j;
                    let (i, f, g, o) = (g_row[j], g_row[d + j], g_row[2 * d + j], g_row[3 * d + j]);
                    let th = tanh_cell[row * d + j];
                    let c_prev = cell[row * d + j];
                    let dh = dh_out[row * d + j] + dhn[k];
                    let d_o = dh * th;
                    let dc = dc_next[k] + dh * o * (1.0 - th * th);
                    dz_row[j] = dc * g * i * (1.0 - i);
                    dz_row[d + j] = dc * c_prev * f * (1.0 - f);
                    dz_row[2 * d + j] = dc * i * (1.0 - g * g);
                    dz_row[3 * d + j] = d_o * o * (1.0 - o);
                    dc_next[k] = dc * f;
                }
            }
        }
        general_mat_mul(1.0, &dz.slice(s![rows, ..]), &recurrent_t, 0.0, &mut dh_next);
    }
    let h_prev = cache.hidden.slice(s![..steps * batch, ..]);
    LayerGrad {
        kernel: x.t().dot(&dz),
        recurrent: h_prev.t().dot(&dz),
        bias: dz.sum_axis(Axis(0)),
        input: need_input.then(|| dz.dot(&kernel.t())),
    }
}

/// Intermediate values kept for the backward pass.
pub struct Cache {
    layer1: LayerCache,
    layer2_input: Array2<f64>,
    mask1: Option<Array2<f64>>,
    layer2: LayerCache,
    mask2: Option<Array2<f64>>,
    head_input: Array2<f64>,
}

pub struct ForwardPass {
    /// Scalar mode: one value per sample. Sequence mode: T·B values, time-major.
    pub output: Vec<f64>,
    pub cache: Cache,
}

fn dropout_mask<R: Rng>(rows: usize, cols: usize, rate: f64, rng: &mut R) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_fn((rows, cols), |_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

/// Runs the network on a time-major batch. Dropout is applied when `dropout`
/// carries a positive rate.
pub fn forward<R: Rng>(
    params: &Params,
    mode: Mode,
    x: ArrayView2<f64>,
    steps: usize,
    batch: usize,
    dropout: Option<(f64, &mut R)>,
) -> ForwardPass {
    debug_assert_eq!(x.nrows(), steps * batch);
    debug_assert_eq!(x.ncols(), params.n_in);
    let d = params.hidden;
    let (rate, mut rng) = match dropout {
        Some((r, rng)) if r > 0.0 => (r, Some(rng)),
        _ => (0.0, None),
    };

    let layer1 = layer_forward(
        x,
        params.matrix(Block::Kernel1),
        params.matrix(Block::Recurrent1),
        params.vector(Block::Bias1),
        steps,
        batch,
    );
    let mut layer2_input = layer1.hidden.slice(s![batch.., ..]).to_owned();
    let mask1 = rng.as_mut().map(|r| dropout_mask(steps * batch, d, rate, *r));
    if let Some(m) = &mask1 {
        layer2_input *= m;
    }
    let layer2 = layer_forward(
        layer2_input.view(),
        params.matrix(Block::Kernel2),
        params.matrix(Block::Recurrent2),
        params.vector(Block::Bias2),
        steps,
        batch,
    );
    let head_rows = match mode {
        Mode::Scalar => steps * batch..(steps + 1) * batch,
        Mode::Sequence => batch..(steps + 1) * batch,
    };
    let mut head_input = layer2.hidden.slice(s![head_rows.clone(), ..]).to_owned();
    let mask2 = rng.as_mut().map(|r| dropout_mask(head_rows.len(), d, rate, *r));
    if let Some(m) = &mask2 {
        head_input *= m;
    }
    let bias = params.block(Block::DenseBias)[0];
    let output = head_input.dot(&params.vector(Block::Dense)).mapv(|v| v + bias).to_vec();
    ForwardPass {
        output,
        cache: Cache {
            layer1,
            layer2_input,
            mask1,
            layer2,
            mask2,
            head_input,
        },
    }
}

/// Gradient of a loss with respect to all parameters given ∂loss/∂output.
pub fn backward(
    params: &Params,
    mode: Mode,
    x: ArrayView2<f64>,
    steps: usize,
    batch: usize,
    cache: &Cache,
    d_output: &[f64],
) -> Params {
    let d = params.hidden;
    let mut grad = Params::zeros(params.n_in, params.hidden);
    let dy = ArrayView1::from(d_output);
    write_block(&mut grad, Block::Dense, cache.head_input.t().dot(&dy).view().into_shape_with_order((d, 1)).expect("shape"));
    grad.block_mut(Block::DenseBias)[0] = dy.sum();

    let dense = params.vector(Block::Dense);
    let mut d_head = Array2::from_shape_fn((dy.len(), d), |(r, j)| dy[r] * dense[j]);
    if let Some(m) = &cache.mask2 {
        d_head *= m;
    }
    let dh2 = match mode {
        Mode::Sequence => d_head,
        Mode::Scalar => {
            let mut full = Array2::zeros((steps * batch, d));
            full.slice_mut(s![(steps - 1) * batch.., ..]).assign(&d_head);
            full
        }
    };
    let g2 = layer_backward(
        &cache.layer2,
        cache.layer2_input.view(),
        params.matrix(Block::Kernel2),
        params.matrix(Block::Recurrent2),
        &dh2,
        steps,
        batch,
        true,
    );
    let mut dh1 = g2.input.expect("requested input gradient");
    if let Some(m) = &cache.mask1 {
        dh1 *= m;
    }
    let g1 = layer_backward(
        &cache.layer1,
        x,
        params.matrix(Block::Kernel1),
        params.matrix(Block::Recurrent1),
        &dh1,
        steps,
        batch,
        false,
    );
    write_block(&mut grad, Block::Kernel1, g1.kernel.view());
    write_block(&mut grad, Block::Recurrent1, g1.recurrent.view());
    grad.block_mut(Block::Bias1).copy_from_slice(g1.bias.as_slice().expect("contiguous"));
    write_block(&mut grad, Block::Kernel2, g2.kernel.view());
    write_block(&mut grad, Block::Recurrent2, g2.recurrent.view());
    grad.block_mut(Block::Bias2).copy_from_slice(g2.bias.as_slice().expect("contiguous"));
    grad
}

fn write_block(p: &mut Params, block: Block, m: ArrayView2<f64>) {
    let shape = p.shape(block);
    let mut dst = ArrayViewMut2::from_shape(shape, p.block_mut(block)).expect("block shape");
    dst.assign(&m);
}
