//! Fixed-architecture MLPs with a hand-written backward pass, Adam, the
//! Gaussian action head, and the zero-band power mapping of the refined
//! supply function.
//!
//! Parameters live in one flat `Vec<f64>` per network (per layer: the
//! `in x out` weight matrix row-major, then the `out` biases) so optimizer
//! state, checkpoints and finite-difference checks all work on plain slices.

use std::f64::consts::PI;

use ndarray::{Array2, ArrayView2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::{Observation, OBS_DIM};
use crate::error::{invalid, Error, Result};
use crate::hdb::SupplyFunction;

pub const HIDDEN: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Tanh,
    Identity,
}

/// `tanh(x)` as `1 - 2 / (e^{2x} + 1)` with a branch-free `exp`, and a
/// series near zero. Branch-free, so slice loops vectorize with identical
/// rounding in every lane.
#[inline(always)]
fn tanh_kernel(x: f64) -> f64 {
    const LOG2E: f64 = std::f64::consts::LOG2_E;
    const LN2_HI: f64 = 0.693_145_751_953_125;
    const LN2_LO: f64 = 1.428_606_820_309_417_2e-6;
    // 1.5 * 2^52: adding it rounds to an integer held in the low mantissa bits.
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    let c = x.clamp(-20.0, 20.0);
    let y = c + c;
    let biased = y * LOG2E + SHIFT;
    let n = biased - SHIFT;
    let r = (y - n * LN2_HI) - n * LN2_LO;
    let mut p = 1.0 / 6_227_020_800.0;
    for k in (1..13).rev() {
        p = p * r + INV_FACTORIAL[k];
    }
    let e = (p * r + 1.0) * f64::from_bits(biased.to_bits().wrapping_add(1023u64.wrapping_sub(1 << 51)) << 52);
    let wide = 1.0 - 2.0 / (e + 1.0);
    let x2 = c * c;
    let series = c * (1.0 - x2 * (1.0 / 3.0 - x2 * (2.0 / 15.0)));
    if c.abs() < 1e-3 {
        series
    } else {
        wide
    }
}

const INV_FACTORIAL: [f64; 13] = [
    1.0,
    1.0,
    1.0 / 2.0,
    1.0 / 6.0,
    1.0 / 24.0,
    1.0 / 120.0,
    1.0 / 720.0,
    1.0 / 5_040.0,
    1.0 / 40_320.0,
    1.0 / 362_880.0,
    1.0 / 3_628_800.0,
    1.0 / 39_916_800.0,
    1.0 / 479_001_600.0,
];

#[inline]
pub fn tanh(x: f64) -> f64 {
    tanh_kernel(x)
}

/// In-place `tanh` over a slice.
pub fn tanh_slice(xs: &mut [f64]) {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx512f") {
        // SAFETY: the CPU supports the enabled feature.
        unsafe { tanh_slice_avx512(xs) };
        return;
    }
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx2") {
        // SAFETY: the CPU supports the enabled feature.
        unsafe { tanh_slice_avx2(xs) };
        return;
    }
    xs.iter_mut().for_each(|x| *x = tanh_kernel(*x));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx2")]
unsafe fn tanh_slice_avx2(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = tanh_kernel(*x));
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx512f")]
unsafe fn tanh_slice_avx512(xs: &mut [f64]) {
    xs.iter_mut().for_each(|x| *x = tanh_kernel(*x));
}

impl Activation {
    fn apply(self, z: &mut Array2<f64>) {
        if self == Activation::Tanh {
            match z.as_slice_mut() {
                Some(s) => tanh_slice(s),
                None => z.mapv_inplace(tanh),
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    sizes: Vec<usize>,
    hidden: Activation,
    output: Activation,
    params: Vec<f64>,
}

/// Layer activations kept for the backward pass; `acts[0]` is the input.
pub struct Forward {
    acts: Vec<Array2<f64>>,
}

impl Forward {
    pub fn output(&self) -> &Array2<f64> {
        self.acts.last().expect("forward keeps at least the input")
    }
}

fn param_count(sizes: &[usize]) -> usize {
    sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl Mlp {
    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Result<Self> {
        if sizes.len() < 2 || sizes.contains(&0) {
            return Err(invalid(format!("bad layer sizes {sizes:?}")));
        }
        Ok(Self {
            sizes: sizes.to_vec(),
            hidden,
            output,
            params: vec![0.0; param_count(sizes)],
        })
    }

    /// Uniform fan-in initialization, `U(-1/sqrt(in), 1/sqrt(in))` for
    /// weights and biases; the last layer is additionally scaled by
    /// `last_scale`.
    pub fn init(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        last_scale: f64,
        rng: &mut impl Rng,
    ) -> Result<Self> {
        let mut net = Self::zeros(sizes, hidden, output)?;
        let layers = net.layers();
        let mut off = 0;
        for (l, (fan_in, fan_out)) in layers.into_iter().enumerate() {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let scale = if l + 2 == net.sizes.len() { last_scale } else { 1.0 };
            for p in &mut net.params[off..off + fan_in * fan_out + fan_out] {
                *p = rng.gen_range(-bound..bound) * scale;
            }
            off += fan_in * fan_out + fan_out;
        }
        Ok(net)
    }

    fn layers(&self) -> Vec<(usize, usize)> {
        self.sizes.windows(2).map(|w| (w[0], w[1])).collect()
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn input_dim(&self) -> usize {
        self.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn num_params(&self) -> usize {
        self.params.len()
    }

    /// Biases of the output layer.
    pub fn output_bias_mut(&mut self) -> &mut [f64] {
        let n = self.params.len();
        let o = self.output_dim();
        &mut self.params[n - o..]
    }

    fn offsets(&self) -> Vec<usize> {
        let mut off = 0;
        self.layers()
            .into_iter()
            .map(|(i, o)| {
                let here = off;
                off += i * o + o;
                here
            })
            .collect()
    }

    fn activation(&self, layer: usize) -> Activation {
        if layer + 2 == self.sizes.len() {
            self.output
        } else {
            self.hidden
        }
    }

    /// Batched forward pass, rows are samples.
    pub fn forward_batch(&self, x: ArrayView2<'_, f64>) -> Result<Forward> {
        if x.ncols() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.ncols(),
            });
        }
        let rows = x.nrows();
        let mut acts = Vec::with_capacity(self.sizes.len());
        acts.push(x.as_standard_layout().into_owned());
        for (l, ((fan_in, fan_out), off)) in self.layers().into_iter().zip(self.offsets()).enumerate() {
            let w = &self.params[off..off + fan_in * fan_out];
            let b = &self.params[off + fan_in * fan_out..off + fan_in * fan_out + fan_out];
            let mut z = Array2::<f64>::zeros((rows, fan_out));
            let a = acts[l].as_slice().unwrap();
            matmul(
                rows,
                fan_out,
                fan_in,
                z.as_slice_mut().unwrap(),
                MatRef::row_major(a, fan_in),
                MatRef::row_major(w, fan_out),
            );
            for mut row in z.rows_mut() {
                row.iter_mut().zip(b).for_each(|(zi, bi)| *zi += bi);
            }
            self.activation(l).apply(&mut z);
            acts.push(z);
        }
        Ok(Forward { acts })
    }

    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, x.len()), x).unwrap();
        Ok(self.forward_batch(view)?.output().row(0).to_vec())
    }

    /// Reverse-mode gradient of `sum(upstream * output)` with respect to the
    /// flat parameters, accumulated over the batch.
    pub fn backward(&self, fwd: &Forward, upstream: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let out = fwd.output();
        if upstream.dim() != out.dim() {
            return Err(Error::Dimension {
                expected: out.len(),
                got: upstream.len(),
            });
        }
        let rows = out.nrows();
        let layers = self.layers();
        let offsets = self.offsets();
        let mut grads = vec![0.0; self.params.len()];
        let mut delta = upstream.as_standard_layout().into_owned();
        for l in (0..layers.len()).rev() {
            if self.activation(l) == Activation::Tanh {
                delta.zip_mut_with(&fwd.acts[l + 1], |d, &y| *d *= 1.0 - y * y);
            }
            let (fan_in, fan_out) = layers[l];
            let o = offsets[l];
            let a = fwd.acts[l].as_slice().unwrap();
            let d = delta.as_slice().unwrap();
            let (gw, rest) = grads[o..].split_at_mut(fan_in * fan_out);
            matmul(
                fan_in,
                fan_out,
                rows,
                gw,
                MatRef::col_major(a, fan_in),
                MatRef::row_major(d, fan_out),
            );
            for (g, col) in rest[..fan_out].iter_mut().zip(delta.columns()) {
                *g = col.sum();
            }
            if l > 0 {
                let w = &self.params[o..o + fan_in * fan_out];
                let mut next = Array2::<f64>::zeros((rows, fan_in));
                matmul(
                    rows,
                    fan_in,
                    fan_out,
                    next.as_slice_mut().unwrap(),
                    MatRef::row_major(d, fan_out),
                    MatRef::col_major(w, fan_out),
                );
                delta = next;
            }
        }
        Ok(grads)
    }
}

/// A strided read-only matrix over a slice.
#[derive(Clone, Copy)]
struct MatRef<'a> {
    data: &'a [f64],
    rs: usize,
    cs: usize,
}

impl<'a> MatRef<'a> {
    /// Row-major storage with `cols` columns.
    fn row_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: cols, cs: 1 }
    }

    /// The transpose of a row-major matrix with `cols` columns.
    fn col_major(data: &'a [f64], cols: usize) -> Self {
        Self { data, rs: 1, cs: cols }
    }

    fn fits(&self, rows: usize, cols: usize) -> bool {
        rows == 0 || cols == 0 || (rows - 1) * self.rs + (cols - 1) * self.cs < self.data.len()
    }
}

/// `dst (m x n, row-major) = lhs (m x k) * rhs (k x n)`.
fn matmul(m: usize, n: usize, k: usize, dst: &mut [f64], lhs: MatRef<'_>, rhs: MatRef<'_>) {
    assert!(dst.len() >= m * n && lhs.fits(m, k) && rhs.fits(k, n));
    if m == 0 || n == 0 {
        return;
    }
    // SAFETY: every index the kernel touches is inside the slices checked above.
    unsafe {
        gemm::gemm(
            m,
            n,
            k,
            dst.as_mut_ptr(),
            1,
            n as isize,
            false,
            lhs.data.as_ptr(),
            lhs.cs as isize,
            lhs.rs as isize,
            rhs.data.as_ptr(),
            rhs.cs as isize,
            rhs.rs as isize,
            1.0,
            1.0,
            false,
            false,
            false,
            gemm::Parallelism::None,
        );
    }
}

// ---------------------------------------------------------------------------
// Adam

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }
}

/// One bias-corrected Adam step. A non-finite gradient leaves everything untouched.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    lr: f64,
    cfg: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || state.m.len() != params.len() {
        return Err(Error::Dimension {
            expected: params.len(),
            got: grads.len(),
        });
    }
    if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    state.t += 1;
    let bc1 = 1.0 - cfg.beta1.powi(state.t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.t as i32);
    for (((p, &g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

/// Scales `grads` in place so its L2 norm is at most `max_norm`; returns the
/// norm before scaling.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

// ---------------------------------------------------------------------------
// Gaussian head

pub fn gaussian_sample(mean: &[f64], sigma: f64, rng: &mut impl Rng) -> Vec<f64> {
    mean.iter()
        .map(|&m| m + sigma * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

pub fn gaussian_logprob(mean: &[f64], sigma: f64, action: &[f64]) -> f64 {
    let norm = -0.5 * (2.0 * PI).ln() - sigma.ln();
    mean.iter()
        .zip(action)
        .map(|(m, a)| {
            let z = (a - m) / sigma;
            norm - 0.5 * z * z
        })
        .sum()
}

/// Gradient of [`gaussian_logprob`] with respect to the mean.
pub fn gaussian_logprob_grad_mean(mean: &[f64], sigma: f64, action: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(action)
        .map(|(m, a)| (a - m) / (sigma * sigma))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StdSchedule {
    pub initial: f64,
    pub final_std: f64,
    pub decay_per_step: f64,
}

impl Default for StdSchedule {
    fn default() -> Self {
        Self {
            initial: 0.6,
            final_std: 0.25,
            decay_per_step: 2e-7,
        }
    }
}

/// Linearly decaying action std, floored at the final value.
pub fn std_schedule(step: u64, cfg: &StdSchedule) -> f64 {
    (cfg.initial - cfg.decay_per_step * step as f64).max(cfg.final_std)
}

/// Zero-band power mapping. `head` is `(λ^c, λ^d, p^c, p^d)` in normalized units;
/// the discharge branch is checked first.
pub fn nnsf_power(head: &[f64], lambda_norm: f64) -> f64 {
    let (lc, ld) = (head[0], head[1]);
    let (pc, pd) = (head[2].abs().min(1.0), head[3].abs().min(1.0));
    if lambda_norm >= ld {
        pd
    } else if lambda_norm <= lc {
        -pc
    } else {
        0.0
    }
}

// ---------------------------------------------------------------------------
// Policy and value networks

/// How the policy's mean head becomes a power at a given price.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum PowerHead {
    /// Four outputs through the zero-band mapping.
    ZeroBand,
    /// One output used directly as the power.
    Direct,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolicyNet {
    pub mlp: Mlp,
    pub sigma: f64,
}

impl PolicyNet {
    pub fn new(input: usize, output: usize, sigma: f64, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::init(
            &[input, HIDDEN, HIDDEN, output],
            Activation::Tanh,
            Activation::Tanh,
            0.01,
            rng,
        )?;
        Ok(Self { mlp, sigma })
    }

    pub fn mean(&self, state: &[f64]) -> Result<Vec<f64>> {
        self.mlp.forward(state)
    }

    /// Shifts output `dim` so that its mean sits near `mean` for small
    /// last-layer weights (tanh output).
    pub fn set_output_mean(&mut self, dim: usize, mean: f64) -> Result<()> {
        if dim >= self.mlp.output_dim() || !(mean > -1.0 && mean < 1.0) {
            return Err(invalid(format!("cannot center output {dim} at {mean}")));
        }
        self.mlp.output_bias_mut()[dim] = mean.atanh();
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ValueNet {
    pub mlp: Mlp,
}

impl ValueNet {
    pub fn new(input: usize, rng: &mut impl Rng) -> Result<Self> {
        let mlp = Mlp::init(
            &[input, HIDDEN, HIDDEN, 1],
            Activation::Tanh,
            Activation::Identity,
            1.0,
            rng,
        )?;
        Ok(Self { mlp })
    }

    pub fn value(&self, state: &[f64]) -> Result<f64> {
        Ok(self.mlp.forward(state)?[0])
    }
}

/// A price-conditioned policy viewed as a supply function.
pub struct Nnsf<'a> {
    pub policy: &'a PolicyNet,
    pub head: PowerHead,
}

impl SupplyFunction for Nnsf<'_> {
    fn eval_powers(&self, obs: &Observation, prices_norm: &[f64], out: &mut [f64]) {
        let dim = OBS_DIM + 1;
        let mut x = Array2::<f64>::zeros((prices_norm.len(), dim));
        for (mut row, &p) in x.rows_mut().into_iter().zip(prices_norm) {
            row.as_slice_mut().unwrap()[..OBS_DIM].copy_from_slice(&obs.0);
            row[OBS_DIM] = p;
        }
        let fwd = self
            .policy
            .mlp
            .forward_batch(x.view())
            .expect("state dimension matches the policy input");
        for ((o, head), &p) in out.iter_mut().zip(fwd.output().rows()).zip(prices_norm) {
            let head = head.as_slice().unwrap();
            *o = match self.head {
                PowerHead::ZeroBand => nnsf_power(head, p),
                PowerHead::Direct => head[0],
            };
        }
    }
}

/// Deterministic RNG stream for a given seed and purpose tag.
pub fn seeded_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}
