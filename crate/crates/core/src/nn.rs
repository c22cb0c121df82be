//! Numeric kernels for the toy networks.
//!
//! Activations live in a channels-major batched layout: an `[C, N*H*W]`
//! matrix whose column index is `(n*H + y)*W + x`. Convolutions lower to a
//! single GEMM per layer over the whole batch (im2col), which is where
//! effectively all training time goes. Everything is generic over `f32`
//! (training) and `f64` (finite-difference verification), and single-threaded
//! so that runs are bitwise reproducible.

use ndarray::linalg::general_mat_mul;
use ndarray::{Array1, Array2, ArrayView2, ArrayViewMut2, NdFloat};
use num_traits::NumCast;

use crate::error::{Error, Result};
use crate::rng::Rng;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};

/// Element type of all tensors: `f32` or `f64`.
///
/// Random draws always happen at f64 and are cast down, so a run consumes an
/// identical RNG stream regardless of the scalar type.
pub trait Scalar: NdFloat {
    fn fromf(x: f64) -> Self {
        <Self as NumCast>::from(x).expect("finite f64 converts")
    }
    fn tof(self) -> f64 {
        <f64 as NumCast>::from(self).expect("scalar converts to f64")
    }
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Draw a standard normal at f64 precision, cast to `F`.
pub fn gauss<F: Scalar>(rng: &mut Rng) -> F {
    F::fromf(<StandardNormal as Distribution<f64>>::sample(&StandardNormal, rng))
}

/// Draw uniform in [0,1) at f64 precision, cast to `F`.
pub fn unit_uniform<F: Scalar>(rng: &mut Rng) -> F {
    F::fromf(rng.gen::<f64>())
}

/// Batched channels-major activation block: `data[(c, (n*H + y)*W + x)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch<F> {
    pub data: Array2<F>,
    pub n: usize,
    pub h: usize,
    pub w: usize,
}

impl<F: Scalar> Batch<F> {
    pub fn zeros(c: usize, n: usize, h: usize, w: usize) -> Self {
        Batch {
            data: Array2::zeros((c, n * h * w)),
            n,
            h,
            w,
        }
    }

    pub fn channels(&self) -> usize {
        self.data.nrows()
    }

    pub fn cols(&self) -> usize {
        self.n * self.h * self.w
    }

    /// Elements per sample (C*H*W).
    pub fn elems_per_sample(&self) -> usize {
        self.channels() * self.h * self.w
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.channels() == other.channels()
            && self.n == other.n
            && self.h == other.h
            && self.w == other.w
    }

    pub fn check_same_shape(&self, other: &Self, what: &str) -> Result<()> {
        if !self.same_shape(other) {
            return Err(Error::ShapeMismatch(format!(
                "{what}: [{}x{}x{}x{}] vs [{}x{}x{}x{}]",
                self.channels(),
                self.n,
                self.h,
                self.w,
                other.channels(),
                other.n,
                other.h,
                other.w
            )));
        }
        Ok(())
    }

    /// View of one sample as `[C, H*W]`.
    pub fn sample(&self, i: usize) -> ArrayView2<'_, F> {
        let hw = self.h * self.w;
        self.data.slice(ndarray::s![.., i * hw..(i + 1) * hw])
    }

    pub fn sample_mut(&mut self, i: usize) -> ArrayViewMut2<'_, F> {
        let hw = self.h * self.w;
        self.data.slice_mut(ndarray::s![.., i * hw..(i + 1) * hw])
    }

    /// Assemble a batch from per-sample `[C, H*W]` blocks.
    pub fn from_samples(samples: &[Array2<F>], h: usize, w: usize) -> Self {
        let n = samples.len();
        let c = samples[0].nrows();
        let mut batch = Batch::zeros(c, n, h, w);
        for (i, s) in samples.iter().enumerate() {
            batch.sample_mut(i).assign(s);
        }
        batch
    }

    pub fn fill_gauss(&mut self, rng: &mut Rng) {
        for v in self.data.iter_mut() {
            *v = gauss(rng);
        }
    }

    /// Mean of squared elements over the whole batch.
    pub fn mean_sq(&self) -> F {
        let total = self.data.iter().fold(F::zero(), |acc, &v| acc + v * v);
        total / F::fromf((self.data.len()) as f64)
    }
}

/// x * sigmoid(x)
pub fn silu<F: Scalar>(x: F) -> F {
    x / (F::one() + (-x).exp())
}

/// d/dx silu(x) = sigmoid(x) * (1 + x * (1 - sigmoid(x)))
pub fn dsilu<F: Scalar>(x: F) -> F {
    let s = F::one() / (F::one() + (-x).exp());
    s * (F::one() + x * (F::one() - s))
}

/// Sinusoidal embedding of a scalar timestep t in [0,1], dimension `dim`.
/// Frequencies span 1..50 rad geometrically, smooth at the sampler's step
/// resolution while still separating nearby timesteps.
pub fn time_embedding<F: Scalar>(t: F, dim: usize) -> Array1<F> {
    let half = dim / 2;
    let mut out = Array1::zeros(dim);
    let pos = t.tof();
    for k in 0..half {
        let freq = (50f64).powf(k as f64 / (half.max(2) - 1) as f64);
        let arg = pos * freq;
        out[2 * k] = F::fromf(arg.sin());
        out[2 * k + 1] = F::fromf(arg.cos());
    }
    out
}

/// C = A·B (+ C when `accumulate`).
pub fn matmul_into<F: Scalar>(
    a: &ArrayView2<F>,
    b: &ArrayView2<F>,
    c: &mut ArrayViewMut2<F>,
    accumulate: bool,
) {
    let beta = if accumulate { F::one() } else { F::zero() };
    general_mat_mul(F::one(), a, b, beta, c);
}

/// Scratch buffers reused across conv calls to keep per-step allocation flat.
#[derive(Default)]
pub struct Scratch<F> {
    col: Vec<F>,
    col_rows: usize,
    col_cols: usize,
}

impl<F: Scalar> Scratch<F> {
    pub fn new() -> Self {
        Scratch {
            col: Vec::new(),
            col_rows: 0,
            col_cols: 0,
        }
    }

    fn col_mut(&mut self, rows: usize, cols: usize) -> ArrayViewMut2<'_, F> {
        let need = rows * cols;
        if self.col.len() < need {
            self.col.resize(need, F::zero());
        }
        self.col_rows = rows;
        self.col_cols = cols;
        ArrayViewMut2::from_shape((rows, cols), &mut self.col[..need]).expect("scratch shape")
    }

    fn col_view(&self) -> ArrayView2<'_, F> {
        ArrayView2::from_shape(
            (self.col_rows, self.col_cols),
            &self.col[..self.col_rows * self.col_cols],
        )
        .expect("scratch shape")
    }
}

/// Lower a 3x3 same-padded convolution input to the column matrix
/// `[Cin*9, N*H*W]`; `col[(c*9 + dy*3 + dx), (n,y,x)] = in[c, (n, y+dy-1, x+dx-1)]`.
fn im2col3x3<F: Scalar>(input: &Batch<F>, scratch: &mut Scratch<F>) {
    let (cin, n, h, w) = (input.channels(), input.n, input.h, input.w);
    let cols = n * h * w;
    let mut col = scratch.col_mut(cin * 9, cols);
    let src = input.data.as_slice().expect("contiguous batch");
    let dst = col.as_slice_mut().expect("contiguous scratch");
    for c in 0..cin {
        let src_c = &src[c * cols..(c + 1) * cols];
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = (c * 9 + dy * 3 + dx) * cols;
                let dst_r = &mut dst[row..row + cols];
                let shift = dx as isize - 1;
                for i in 0..n {
                    let base = i * h * w;
                    for y in 0..h {
                        let sy = y as isize + dy as isize - 1;
                        let drow = base + y * w;
                        if sy < 0 || sy >= h as isize {
                            dst_r[drow..drow + w].fill(F::zero());
                            continue;
                        }
                        let srow = base + sy as usize * w;
                        // valid x range given horizontal shift dx-1
                        let (x0, x1) = match dx {
                            0 => (1usize, w),
                            1 => (0usize, w),
                            _ => (0usize, w - 1),
                        };
                        if x0 > 0 {
                            dst_r[drow] = F::zero();
                        }
                        if x1 < w {
                            dst_r[drow + w - 1] = F::zero();
                        }
                        let s0 = (srow as isize + x0 as isize + shift) as usize;
                        dst_r[drow + x0..drow + x1]
                            .copy_from_slice(&src_c[s0..s0 + (x1 - x0)]);
                    }
                }
            }
        }
    }
}

/// Scatter-add the column-matrix gradient back to input layout.
fn col2im3x3<F: Scalar>(dcol: &ArrayView2<F>, dinput: &mut Batch<F>) {
    let (cin, n, h, w) = (dinput.channels(), dinput.n, dinput.h, dinput.w);
    let cols = n * h * w;
    let src = dcol.as_slice().expect("contiguous col grad");
    let dst = dinput.data.as_slice_mut().expect("contiguous batch");
    for c in 0..cin {
        let dst_c = &mut dst[c * cols..(c + 1) * cols];
        for dy in 0..3usize {
            for dx in 0..3usize {
                let row = (c * 9 + dy * 3 + dx) * cols;
                let src_r = &src[row..row + cols];
                let shift = dx as isize - 1;
                for i in 0..n {
                    let base = i * h * w;
                    for y in 0..h {
                        let sy = y as isize + dy as isize - 1;
                        if sy < 0 || sy >= h as isize {
                            continue;
                        }
                        let srow = base + y * w;
                        let drow = base + sy as usize * w;
                        let (x0, x1) = match dx {
                            0 => (1usize, w),
                            1 => (0usize, w),
                            _ => (0usize, w - 1),
                        };
                        let d0 = (drow as isize + x0 as isize + shift) as usize;
                        let dslice = &mut dst_c[d0..d0 + (x1 - x0)];
                        let sslice = &src_r[srow + x0..srow + x1];
                        for (d, s) in dslice.iter_mut().zip(sslice) {
                            *d += *s;
                        }
                    }
                }
            }
        }
    }
}

/// out = W·col(input) + b, same-padded 3x3. `weight` is `[Cout, Cin*9]`.
pub fn conv3x3_forward<F: Scalar>(
    weight: &Array2<F>,
    bias: &Array2<F>,
    input: &Batch<F>,
    scratch: &mut Scratch<F>,
) -> Batch<F> {
    im2col3x3(input, scratch);
    let mut out = Batch::zeros(weight.nrows(), input.n, input.h, input.w);
    matmul_into(&weight.view(), &scratch.col_view(), &mut out.data.view_mut(), false);
    add_row_bias(&mut out, bias);
    out
}

/// Gradient wrt the conv input: col2im(Wᵀ·dOut).
pub fn conv3x3_backward_input<F: Scalar>(
    weight: &Array2<F>,
    d_out: &Batch<F>,
    cin: usize,
    scratch: &mut Scratch<F>,
) -> Batch<F> {
    let mut dcol = scratch.col_mut(cin * 9, d_out.cols());
    general_mat_mul(
        F::one(),
        &weight.t(),
        &d_out.data.view(),
        F::zero(),
        &mut dcol,
    );
    let mut d_in = Batch::zeros(cin, d_out.n, d_out.h, d_out.w);
    col2im3x3(&scratch.col_view(), &mut d_in);
    d_in
}

/// Accumulate weight/bias gradients: dW += dOut·col(input)ᵀ, db += rowsum(dOut).
pub fn conv3x3_backward_weights<F: Scalar>(
    input: &Batch<F>,
    d_out: &Batch<F>,
    d_weight: &mut Array2<F>,
    d_bias: &mut Array2<F>,
    scratch: &mut Scratch<F>,
) {
    im2col3x3(input, scratch);
    let col = scratch.col_view();
    general_mat_mul(
        F::one(),
        &d_out.data.view(),
        &col.t(),
        F::one(),
        &mut d_weight.view_mut(),
    );
    accumulate_row_sums(d_out, d_bias);
}

/// 1x1 convolution: out = W·input + b with `weight` `[Cout, Cin]`.
pub fn conv1x1_forward<F: Scalar>(
    weight: &Array2<F>,
    bias: &Array2<F>,
    input: &Batch<F>,
) -> Batch<F> {
    let mut out = Batch::zeros(weight.nrows(), input.n, input.h, input.w);
    matmul_into(&weight.view(), &input.data.view(), &mut out.data.view_mut(), false);
    add_row_bias(&mut out, bias);
    out
}

pub fn conv1x1_backward_input<F: Scalar>(weight: &Array2<F>, d_out: &Batch<F>) -> Batch<F> {
    let mut d_in = Batch::zeros(weight.ncols(), d_out.n, d_out.h, d_out.w);
    general_mat_mul(
        F::one(),
        &weight.t(),
        &d_out.data.view(),
        F::zero(),
        &mut d_in.data.view_mut(),
    );
    d_in
}

pub fn conv1x1_backward_weights<F: Scalar>(
    input: &Batch<F>,
    d_out: &Batch<F>,
    d_weight: &mut Array2<F>,
    d_bias: &mut Array2<F>,
) {
    general_mat_mul(
        F::one(),
        &d_out.data.view(),
        &input.data.t(),
        F::one(),
        &mut d_weight.view_mut(),
    );
    accumulate_row_sums(d_out, d_bias);
}

fn add_row_bias<F: Scalar>(out: &mut Batch<F>, bias: &Array2<F>) {
    for (c, mut row) in out.data.rows_mut().into_iter().enumerate() {
        let b = bias[(c, 0)];
        row.mapv_inplace(|v| v + b);
    }
}

fn accumulate_row_sums<F: Scalar>(d_out: &Batch<F>, d_bias: &mut Array2<F>) {
    for (c, row) in d_out.data.rows().into_iter().enumerate() {
        d_bias[(c, 0)] += row.sum();
    }
}

/// Rearrange images `[Cin, N*H*W]` into non-overlapping k×k patch columns
/// `[Cin*k², N*G²]` with G = H/k.
pub fn patchify<F: Scalar>(input: &Batch<F>, k: usize) -> Array2<F> {
    let (cin, n, h, w) = (input.channels(), input.n, input.h, input.w);
    let g = h / k;
    assert!(h % k == 0 && w % k == 0, "grid must divide image side");
    let mut col = Array2::zeros((cin * k * k, n * g * g));
    for c in 0..cin {
        for py in 0..k {
            for px in 0..k {
                let row = c * k * k + py * k + px;
                for i in 0..n {
                    for gy in 0..g {
                        for gx in 0..g {
                            let src = (i * h + gy * k + py) * w + gx * k + px;
                            let dst = (i * g + gy) * g + gx;
                            col[(row, dst)] = input.data[(c, src)];
                        }
                    }
                }
            }
        }
    }
    col
}

/// Inverse of [`patchify`]: scatter patch columns back into image layout.
pub fn unpatchify<F: Scalar>(col: &Array2<F>, cin: usize, n: usize, h: usize, w: usize, k: usize) -> Batch<F> {
    let g = h / k;
    let mut out = Batch::zeros(cin, n, h, w);
    for c in 0..cin {
        for py in 0..k {
            for px in 0..k {
                let row = c * k * k + py * k + px;
                for i in 0..n {
                    for gy in 0..g {
                        for gx in 0..g {
                            let dst = (i * h + gy * k + py) * w + gx * k + px;
                            let src = (i * g + gy) * g + gx;
                            out.data[(c, dst)] = col[(row, src)];
                        }
                    }
                }
            }
        }
    }
    out
}

/// Add a per-(channel, sample) bias, broadcast over spatial positions.
pub fn add_sample_bias<F: Scalar>(out: &mut Batch<F>, bias: &Array2<F>) {
    let hw = out.h * out.w;
    let (c_n, n) = (out.channels(), out.n);
    debug_assert_eq!(bias.dim(), (c_n, n));
    let data = out.data.as_slice_mut().expect("contiguous");
    for c in 0..c_n {
        for i in 0..n {
            let b = bias[(c, i)];
            let base = c * n * hw + i * hw;
            for v in &mut data[base..base + hw] {
                *v += b;
            }
        }
    }
}

/// Reduce a gradient over spatial positions to per-(channel, sample).
pub fn sum_spatial<F: Scalar>(d_out: &Batch<F>) -> Array2<F> {
    let hw = d_out.h * d_out.w;
    let (c_n, n) = (d_out.channels(), d_out.n);
    let mut out = Array2::zeros((c_n, n));
    let data = d_out.data.as_slice().expect("contiguous");
    for c in 0..c_n {
        for i in 0..n {
            let base = c * n * hw + i * hw;
            let mut acc = F::zero();
            for v in &data[base..base + hw] {
                acc += *v;
            }
            out[(c, i)] = acc;
        }
    }
    out
}

/// Adam with fixed hyperparameters (lr set per run, beta1=0.9, beta2=0.999).
pub struct Adam<F> {
    pub lr: F,
    beta1: F,
    beta2: F,
    eps: F,
    t: i32,
    m: Vec<Array2<F>>,
    v: Vec<Array2<F>>,
}

impl<F: Scalar> Adam<F> {
    pub fn new(lr: F, param_shapes: &[(usize, usize)]) -> Self {
        Adam {
            lr,
            beta1: F::fromf(0.9),
            beta2: F::fromf(0.999),
            eps: F::fromf(1e-8),
            t: 0,
            m: param_shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: param_shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn step(&mut self, params: Vec<&mut Array2<F>>, grads: Vec<&Array2<F>>) {
        assert_eq!(params.len(), self.m.len());
        assert_eq!(grads.len(), self.m.len());
        self.t += 1;
        let bc1 = F::one() - self.beta1.powi(self.t);
        let bc2 = F::one() - self.beta2.powi(self.t);
        for ((p, g), (m, v)) in params
            .into_iter()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            ndarray::Zip::from(&mut *m).and(g).for_each(|m, &g| {
                *m = self.beta1 * *m + (F::one() - self.beta1) * g;
            });
            ndarray::Zip::from(&mut *v).and(g).for_each(|v, &g| {
                *v = self.beta2 * *v + (F::one() - self.beta2) * g * g;
            });
            ndarray::Zip::from(p)
                .and(&*m)
                .and(&*v)
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p = *p - self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;

    fn random_batch(c: usize, n: usize, h: usize, w: usize, seed: u64) -> Batch<f64> {
        let mut rng = rng::seeded(seed);
        let mut b = Batch::zeros(c, n, h, w);
        b.fill_gauss(&mut rng);
        b
    }

    fn random_mat(r: usize, c: usize, seed: u64) -> Array2<f64> {
        let mut rng = rng::seeded(seed);
        Array2::from_shape_fn((r, c), |_| gauss::<f64>(&mut rng) * 0.3)
    }

    /// Direct (slow) reference convolution for cross-checking the GEMM path.
    fn conv3x3_reference(
        weight: &Array2<f64>,
        bias: &Array2<f64>,
        input: &Batch<f64>,
    ) -> Batch<f64> {
        let (cin, n, h, w) = (input.channels(), input.n, input.h, input.w);
        let cout = weight.nrows();
        let mut out = Batch::zeros(cout, n, h, w);
        for co in 0..cout {
            for i in 0..n {
                for y in 0..h as isize {
                    for x in 0..w as isize {
                        let mut acc = bias[(co, 0)];
                        for ci in 0..cin {
                            for dy in -1isize..=1 {
                                for dx in -1isize..=1 {
                                    let (sy, sx) = (y + dy, x + dx);
                                    if sy < 0 || sy >= h as isize || sx < 0 || sx >= w as isize {
                                        continue;
                                    }
                                    let wv = weight[(co, ci * 9 + (dy + 1) as usize * 3 + (dx + 1) as usize)];
                                    let iv = input.data[(ci, (i * h + sy as usize) * w + sx as usize)];
                                    acc += wv * iv;
                                }
                            }
                        }
                        out.data[(co, (i * h + y as usize) * w + x as usize)] = acc;
                    }
                }
            }
        }
        out
    }

    #[test]
    fn conv3x3_matches_reference() {
        let input = random_batch(3, 2, 5, 5, 1);
        let weight = random_mat(4, 27, 2);
        let bias = random_mat(4, 1, 3);
        let mut scratch = Scratch::new();
        let fast = conv3x3_forward(&weight, &bias, &input, &mut scratch);
        let slow = conv3x3_reference(&weight, &bias, &input);
        for (a, b) in fast.data.iter().zip(slow.data.iter()) {
            assert!((a - b).abs() < 1e-12, "{a} vs {b}");
        }
    }

    #[test]
    fn conv3x3_gradients_match_finite_differences() {
        let input = random_batch(2, 1, 4, 4, 10);
        let weight = random_mat(3, 18, 11);
        let bias = random_mat(3, 1, 12);
        let mut scratch = Scratch::new();

        // loss = 0.5 * sum(out^2)  =>  dOut = out
        let out = conv3x3_forward(&weight, &bias, &input, &mut scratch);
        let d_out = out.clone();
        let d_in = conv3x3_backward_input(&weight, &d_out, 2, &mut scratch);
        let mut d_w = Array2::zeros(weight.dim());
        let mut d_b = Array2::zeros(bias.dim());
        conv3x3_backward_weights(&input, &d_out, &mut d_w, &mut d_b, &mut scratch);

        let loss = |w: &Array2<f64>, b: &Array2<f64>, x: &Batch<f64>| -> f64 {
            let mut s = Scratch::new();
            let o = conv3x3_forward(w, b, x, &mut s);
            0.5 * o.data.iter().map(|v| v * v).sum::<f64>()
        };
        let eps = 1e-6;
        // input grad
        for idx in [0usize, 5, 13, 31] {
            let mut xp = input.clone();
            let mut xm = input.clone();
            xp.data.as_slice_mut().unwrap()[idx] += eps;
            xm.data.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&weight, &bias, &xp) - loss(&weight, &bias, &xm)) / (2.0 * eps);
            let an = d_in.data.as_slice().unwrap()[idx];
            assert!((fd - an).abs() / fd.abs().max(1e-8) < 1e-6, "input {fd} vs {an}");
        }
        // weight grad
        for idx in [0usize, 7, 35, 53] {
            let mut wp = weight.clone();
            let mut wm = weight.clone();
            wp.as_slice_mut().unwrap()[idx] += eps;
            wm.as_slice_mut().unwrap()[idx] -= eps;
            let fd = (loss(&wp, &bias, &input) - loss(&wm, &bias, &input)) / (2.0 * eps);
            let an = d_w.as_slice().unwrap()[idx];
            assert!((fd - an).abs() / fd.abs().max(1e-8) < 1e-6, "weight {fd} vs {an}");
        }
        // bias grad
        let mut bp = bias.clone();
        bp[(1, 0)] += eps;
        let mut bm = bias.clone();
        bm[(1, 0)] -= eps;
        let fd = (loss(&weight, &bp, &input) - loss(&weight, &bm, &input)) / (2.0 * eps);
        assert!((fd - d_b[(1, 0)]).abs() / fd.abs().max(1e-8) < 1e-6);
    }

    #[test]
    fn patchify_round_trips() {
        let input = random_batch(3, 2, 8, 8, 20);
        let col = patchify(&input, 4);
        assert_eq!(col.dim(), (3 * 16, 2 * 4));
        let back = unpatchify(&col, 3, 2, 8, 8, 4);
        assert_eq!(back.data, input.data);
    }

    #[test]
    fn sample_bias_round_trips_with_sum() {
        let mut b = Batch::<f64>::zeros(2, 3, 2, 2);
        let bias = random_mat(2, 3, 30);
        add_sample_bias(&mut b, &bias);
        let sums = sum_spatial(&b);
        for c in 0..2 {
            for i in 0..3 {
                assert!((sums[(c, i)] - bias[(c, i)] * 4.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn silu_derivative_matches() {
        for &x in &[-2.0, -0.5, 0.0, 0.3, 1.7] {
            let eps = 1e-6;
            let fd = (silu::<f64>(x + eps) - silu::<f64>(x - eps)) / (2.0 * eps);
            assert!((fd - dsilu::<f64>(x)).abs() < 1e-9);
        }
    }
}
