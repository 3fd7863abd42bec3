//! Bernoulli-Bernoulli restricted Boltzmann machine.
//!
//! Parameters follow the usual layout: `weights[[i, j]]` connects visible unit
//! `i` to hidden unit `j`. Batches are row-major `(n_samples, n_visible)`
//! matrices whose entries are read as Bernoulli probabilities in `[0, 1]`.
//!
//! The exact quantities (partition function, joint probability, log-likelihood
//! gradient) enumerate every visible configuration and are guarded by
//! [`ENUMERATION_LIMIT`]; they exist as oracles for small instances.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis, Zip};
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{check_len, Error, Result};

/// Largest `I + J` accepted by the enumeration routines.
pub const ENUMERATION_LIMIT: usize = 22;

/// Standard deviation of the Gaussian used for fresh weights.
pub const INIT_WEIGHT_STD: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RbmParameters {
    pub visible_bias: Array1<f64>,
    pub hidden_bias: Array1<f64>,
    /// `I × J`
    pub weights: Array2<f64>,
}

impl RbmParameters {
    pub fn new(visible_bias: Array1<f64>, hidden_bias: Array1<f64>, weights: Array2<f64>) -> Result<Self> {
        let params = Self {
            visible_bias,
            hidden_bias,
            weights,
        };
        params.validate()?;
        Ok(params)
    }

    pub fn zeros(n_visible: usize, n_hidden: usize) -> Self {
        Self {
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
            weights: Array2::zeros((n_visible, n_hidden)),
        }
    }

    /// Gaussian(0, 0.01) weights, zero biases.
    pub fn initialize<R: Rng + ?Sized>(n_visible: usize, n_hidden: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, INIT_WEIGHT_STD).expect("valid std");
        let weights = Array2::from_shape_simple_fn((n_visible, n_hidden), || normal.sample(rng));
        Self {
            visible_bias: Array1::zeros(n_visible),
            hidden_bias: Array1::zeros(n_hidden),
            weights,
        }
    }

    /// Like [`initialize`](Self::initialize), with each visible bias set to
    /// the logit of that unit's mean over `data` (clamped to [0.01, 0.99]).
    pub fn initialize_for<R: Rng + ?Sized>(data: ArrayView2<f64>, n_hidden: usize, rng: &mut R) -> Result<Self> {
        if data.nrows() == 0 {
            return Err(Error::Empty("data"));
        }
        let mut params = Self::initialize(data.ncols(), n_hidden, rng);
        let mean = data.mean_axis(Axis(0)).expect("non-empty");
        params.visible_bias = mean.mapv(|p| {
            let p = p.clamp(0.01, 0.99);
            (p / (1.0 - p)).ln()
        });
        Ok(params)
    }

    pub fn n_visible(&self) -> usize {
        self.visible_bias.len()
    }

    pub fn n_hidden(&self) -> usize {
        self.hidden_bias.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_visible() == 0 {
            return Err(Error::Empty("visible layer"));
        }
        if self.n_hidden() == 0 {
            return Err(Error::Empty("hidden layer"));
        }
        check_len("weight rows", self.n_visible(), self.weights.nrows())?;
        check_len("weight columns", self.n_hidden(), self.weights.ncols())?;
        self.check_finite()
    }

    pub fn check_finite(&self) -> Result<()> {
        if !self.visible_bias.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("visible_bias"));
        }
        if !self.hidden_bias.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("hidden_bias"));
        }
        if !self.weights.iter().all(|x| x.is_finite()) {
            return Err(Error::NonFinite("weights"));
        }
        Ok(())
    }

    fn same_shape(&self, other: &Self) -> bool {
        self.weights.dim() == other.weights.dim()
    }
}

/// Gradient (or update direction) for every parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct GradientTriple {
    pub d_visible_bias: Array1<f64>,
    pub d_hidden_bias: Array1<f64>,
    pub d_weights: Array2<f64>,
}

impl GradientTriple {
    pub fn zeros_like(params: &RbmParameters) -> Self {
        Self {
            d_visible_bias: Array1::zeros(params.n_visible()),
            d_hidden_bias: Array1::zeros(params.n_hidden()),
            d_weights: Array2::zeros(params.weights.dim()),
        }
    }

    pub fn norm(&self) -> f64 {
        let sq = |a: f64, x: &f64| a + x * x;
        (self.d_visible_bias.iter().fold(0.0, sq)
            + self.d_hidden_bias.iter().fold(0.0, sq)
            + self.d_weights.iter().fold(0.0, sq))
        .sqrt()
    }

    fn matches(&self, params: &RbmParameters) -> bool {
        self.d_visible_bias.len() == params.n_visible() && self.d_weights.dim() == params.weights.dim()
    }
}

/// Per-batch (or per-epoch, when aggregated) contrastive-divergence statistics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CdStats {
    pub epoch: usize,
    /// Mean squared difference between the data and the first Gibbs
    /// reconstruction probabilities.
    pub reconstruction_error: f64,
    /// Mean energy of (data, sampled hidden state) pairs.
    pub mean_energy: f64,
    pub grad_norm_c: f64,
    pub grad_norm_w: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CdConfig {
    pub k: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Default for CdConfig {
    fn default() -> Self {
        Self {
            k: 1,
            learning_rate: 0.05,
            batch_size: 64,
            momentum: 0.0,
            weight_decay: 0.0,
        }
    }
}

impl CdConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k == 0 {
            return Err(invalid("k", "must be at least 1"));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(invalid("learning_rate", "must be a finite value >= 0"));
        }
        if self.batch_size == 0 {
            return Err(invalid("batch_size", "must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(invalid("momentum", "must lie in [0, 1)"));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return Err(invalid("weight_decay", "must be a finite value >= 0"));
        }
        Ok(())
    }
}

fn invalid(field: &'static str, reason: &str) -> Error {
    Error::InvalidConfig {
        field,
        reason: reason.to_string(),
    }
}

#[inline]
pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `E(v, h) = -b·v - c·h - vᵀ W h`.
pub fn energy(v: ArrayView1<f64>, h: ArrayView1<f64>, params: &RbmParameters) -> Result<f64> {
    check_len("visible", params.n_visible(), v.len())?;
    check_len("hidden", params.n_hidden(), h.len())?;
    let interaction = v.dot(&params.weights.dot(&h));
    Ok(-params.visible_bias.dot(&v) - params.hidden_bias.dot(&h) - interaction)
}

fn check_enumerable(params: &RbmParameters) -> Result<()> {
    let units = params.n_visible() + params.n_hidden();
    if units > ENUMERATION_LIMIT {
        return Err(Error::TooLargeForEnumeration {
            units,
            limit: ENUMERATION_LIMIT,
        });
    }
    Ok(())
}

fn binary_state(bits: usize, len: usize) -> Array1<f64> {
    Array1::from_shape_fn(len, |i| ((bits >> i) & 1) as f64)
}

/// `-F(v) = b·v + Σ_j softplus(c_j + Σ_i v_i W_ij)`, i.e. `ln Σ_h exp(-E(v, h))`.
fn neg_free_energy(v: ArrayView1<f64>, params: &RbmParameters) -> f64 {
    let pre = v.dot(&params.weights) + &params.hidden_bias;
    params.visible_bias.dot(&v) + pre.iter().map(|&x| softplus(x)).sum::<f64>()
}

fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return max;
    }
    max + values.iter().map(|x| (x - max).exp()).sum::<f64>().ln()
}

/// `ln Z`, summing out the hidden layer analytically for each visible state.
pub fn log_partition_function(params: &RbmParameters) -> Result<f64> {
    check_enumerable(params)?;
    let i = params.n_visible();
    let terms: Vec<f64> = (0..1usize << i)
        .map(|bits| neg_free_energy(binary_state(bits, i).view(), params))
        .collect();
    Ok(log_sum_exp(&terms))
}

/// `Z = Σ_v Σ_h exp(-E(v, h))`.
pub fn partition_function(params: &RbmParameters) -> Result<f64> {
    log_partition_function(params).map(f64::exp)
}

pub fn joint_probability(v: ArrayView1<f64>, h: ArrayView1<f64>, params: &RbmParameters) -> Result<f64> {
    let e = energy(v, h, params)?;
    let log_z = log_partition_function(params)?;
    Ok((-e - log_z).exp())
}

/// `p(h_j = 1 | v) = sigmoid(c_j + Σ_i W_ij v_i)`.
pub fn hidden_conditional(v: ArrayView1<f64>, params: &RbmParameters) -> Result<Array1<f64>> {
    check_len("visible", params.n_visible(), v.len())?;
    Ok((v.dot(&params.weights) + &params.hidden_bias).mapv_into(sigmoid))
}

/// `p(v_i = 1 | h) = sigmoid(b_i + Σ_j W_ij h_j)`.
pub fn visible_conditional(h: ArrayView1<f64>, params: &RbmParameters) -> Result<Array1<f64>> {
    check_len("hidden", params.n_hidden(), h.len())?;
    Ok((params.weights.dot(&h) + &params.visible_bias).mapv_into(sigmoid))
}

/// Row-wise [`hidden_conditional`] over a batch.
pub fn hidden_probs(batch: ArrayView2<f64>, params: &RbmParameters) -> Result<Array2<f64>> {
    check_len("visible", params.n_visible(), batch.ncols())?;
    Ok((batch.dot(&params.weights) + &params.hidden_bias).mapv_into(sigmoid))
}

/// Row-wise [`visible_conditional`] over a batch of hidden states.
pub fn visible_probs(hidden: ArrayView2<f64>, params: &RbmParameters) -> Result<Array2<f64>> {
    check_len("hidden", params.n_hidden(), hidden.ncols())?;
    Ok((hidden.dot(&params.weights.t()) + &params.visible_bias).mapv_into(sigmoid))
}

fn sample_bernoulli<R: Rng + ?Sized>(probs: &Array2<f64>, rng: &mut R) -> Array2<f64> {
    probs.mapv(|p| if rng.random::<f64>() < p { 1.0 } else { 0.0 })
}

fn check_batch(batch: ArrayView2<f64>, params: &RbmParameters) -> Result<()> {
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    check_len("visible", params.n_visible(), batch.ncols())?;
    if let Some(&x) = batch.iter().find(|x| !(0.0..=1.0).contains(*x)) {
        return Err(Error::InvalidConfig {
            field: "batch",
            reason: format!("visible value {x} outside [0, 1]"),
        });
    }
    Ok(())
}

/// CD-k estimate of the log-likelihood gradient for one batch.
///
/// The positive phase uses mean-field hidden probabilities of the data. The
/// negative chain samples binary states at every step, and the final hidden
/// statistics are probabilities rather than samples.
pub fn cd_gradient<R: Rng + ?Sized>(
    params: &RbmParameters,
    batch: ArrayView2<f64>,
    k: usize,
    rng: &mut R,
) -> Result<(GradientTriple, CdStats)> {
    check_batch(batch, params)?;
    if k == 0 {
        return Err(invalid("k", "must be at least 1"));
    }
    let n = batch.nrows() as f64;

    let pos_h = hidden_probs(batch, params)?;
    let mut h_sample = sample_bernoulli(&pos_h, rng);

    // energy of (data, sampled h) per row
    let interaction = (batch.dot(&params.weights) * &h_sample).sum_axis(Axis(1));
    let energies = -(batch.dot(&params.visible_bias) + h_sample.dot(&params.hidden_bias) + interaction);
    let mean_energy = energies.sum() / n;

    let mut first_recon = None;
    let mut neg_v = Array2::zeros(batch.raw_dim());
    let mut neg_h = pos_h.clone();
    for step in 0..k {
        let v_probs = visible_probs(h_sample.view(), params)?;
        neg_v = sample_bernoulli(&v_probs, rng);
        if first_recon.is_none() {
            first_recon = Some(v_probs);
        }
        neg_h = hidden_probs(neg_v.view(), params)?;
        if step + 1 < k {
            h_sample = sample_bernoulli(&neg_h, rng);
        }
    }
    let recon = first_recon.expect("k >= 1");
    let reconstruction_error = (&recon - &batch).mapv(|d| d * d).mean().unwrap_or(0.0);

    let d_weights = (batch.t().dot(&pos_h) - neg_v.t().dot(&neg_h)) / n;
    let d_visible_bias = (batch.sum_axis(Axis(0)) - neg_v.sum_axis(Axis(0))) / n;
    let d_hidden_bias = (pos_h.sum_axis(Axis(0)) - neg_h.sum_axis(Axis(0))) / n;

    let stats = CdStats {
        epoch: 0,
        reconstruction_error,
        mean_energy,
        grad_norm_c: l2(d_hidden_bias.iter()),
        grad_norm_w: l2(d_weights.iter()),
    };
    Ok((
        GradientTriple {
            d_visible_bias,
            d_hidden_bias,
            d_weights,
        },
        stats,
    ))
}

fn l2<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.fold(0.0, |a, x| a + x * x).sqrt()
}

/// `θ + scale · step`, rejecting non-finite results by block name.
pub fn apply_step(params: &RbmParameters, step: &GradientTriple, scale: f64) -> Result<RbmParameters> {
    if !step.matches(params) {
        return Err(Error::Shape {
            axis: "gradient",
            expected: params.weights.len(),
            actual: step.d_weights.len(),
        });
    }
    let mut next = params.clone();
    next.visible_bias.scaled_add(scale, &step.d_visible_bias);
    next.hidden_bias.scaled_add(scale, &step.d_hidden_bias);
    next.weights.scaled_add(scale, &step.d_weights);
    next.check_finite()?;
    Ok(next)
}

/// One CD-k step with learning rate `learning_rate`. Pure: the returned
/// parameters are new, and the output depends only on the inputs and `rng`.
pub fn cd_update<R: Rng + ?Sized>(
    params: &RbmParameters,
    batch: ArrayView2<f64>,
    k: usize,
    learning_rate: f64,
    rng: &mut R,
) -> Result<(RbmParameters, CdStats)> {
    if !(learning_rate >= 0.0 && learning_rate.is_finite()) {
        return Err(invalid("learning_rate", "must be a finite value >= 0"));
    }
    let (grad, stats) = cd_gradient(params, batch, k, rng)?;
    if learning_rate == 0.0 {
        return Ok((params.clone(), stats));
    }
    Ok((apply_step(params, &grad, learning_rate)?, stats))
}

/// Momentum buffer carried across mini-batches. Reset after any structural edit.
#[derive(Clone, Debug, Default)]
pub struct Velocity(Option<GradientTriple>);

impl Velocity {
    pub fn reset(&mut self) {
        self.0 = None;
    }
}

/// One pass over `data` in shuffled mini-batches. Returns the new parameters
/// and batch-size-weighted averages of the per-batch statistics.
pub fn train_epoch<R: Rng + ?Sized>(
    params: &RbmParameters,
    data: ArrayView2<f64>,
    config: &CdConfig,
    velocity: &mut Velocity,
    rng: &mut R,
) -> Result<(RbmParameters, CdStats)> {
    if data.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let mut order: Vec<usize> = (0..data.nrows()).collect();
    rand::seq::SliceRandom::shuffle(order.as_mut_slice(), rng);

    let mut current = params.clone();
    let mut acc = CdStats {
        epoch: 0,
        reconstruction_error: 0.0,
        mean_energy: 0.0,
        grad_norm_c: 0.0,
        grad_norm_w: 0.0,
    };
    for chunk in order.chunks(config.batch_size.max(1)) {
        let batch = data.select(Axis(0), chunk);
        let (mut grad, stats) = cd_gradient(&current, batch.view(), config.k, rng)?;
        if config.weight_decay > 0.0 {
            grad.d_weights.scaled_add(-config.weight_decay, &current.weights);
        }
        let step = if config.momentum > 0.0 {
            let v = velocity.0.get_or_insert_with(|| GradientTriple::zeros_like(&current));
            Zip::from(&mut v.d_weights)
                .and(&grad.d_weights)
                .for_each(|a, &g| *a = config.momentum * *a + g);
            Zip::from(&mut v.d_visible_bias)
                .and(&grad.d_visible_bias)
                .for_each(|a, &g| *a = config.momentum * *a + g);
            Zip::from(&mut v.d_hidden_bias)
                .and(&grad.d_hidden_bias)
                .for_each(|a, &g| *a = config.momentum * *a + g);
            v.clone()
        } else {
            grad
        };
        if config.learning_rate > 0.0 {
            current = apply_step(&current, &step, config.learning_rate)?;
        }
        let w = chunk.len() as f64;
        acc.reconstruction_error += w * stats.reconstruction_error;
        acc.mean_energy += w * stats.mean_energy;
        acc.grad_norm_c += w * stats.grad_norm_c;
        acc.grad_norm_w += w * stats.grad_norm_w;
    }
    let n = data.nrows() as f64;
    acc.reconstruction_error /= n;
    acc.mean_energy /= n;
    acc.grad_norm_c /= n;
    acc.grad_norm_w /= n;
    Ok((current, acc))
}

/// Exact gradient of the mean log-likelihood of `batch`, with the model
/// expectation taken over every visible configuration.
pub fn exact_loglik_gradient(params: &RbmParameters, batch: ArrayView2<f64>) -> Result<GradientTriple> {
    check_enumerable(params)?;
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    check_len("visible", params.n_visible(), batch.ncols())?;
    let n = batch.nrows() as f64;

    let data_h = hidden_probs(batch, params)?;
    let mut grad = GradientTriple {
        d_visible_bias: batch.sum_axis(Axis(0)) / n,
        d_hidden_bias: data_h.sum_axis(Axis(0)) / n,
        d_weights: batch.t().dot(&data_h) / n,
    };

    let i = params.n_visible();
    let states: Vec<Array1<f64>> = (0..1usize << i).map(|bits| binary_state(bits, i)).collect();
    let log_weights: Vec<f64> = states.iter().map(|v| neg_free_energy(v.view(), params)).collect();
    let log_z = log_sum_exp(&log_weights);
    for (v, lw) in states.iter().zip(&log_weights) {
        let p = (lw - log_z).exp();
        let h = hidden_conditional(v.view(), params)?;
        grad.d_visible_bias.scaled_add(-p, v);
        grad.d_hidden_bias.scaled_add(-p, &h);
        for (row, &vi) in v.iter().enumerate() {
            if vi != 0.0 {
                grad.d_weights.row_mut(row).scaled_add(-p * vi, &h);
            }
        }
    }
    Ok(grad)
}

/// Exact mean `ln p(v)` over `batch`.
pub fn log_likelihood(params: &RbmParameters, batch: ArrayView2<f64>) -> Result<f64> {
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    check_len("visible", params.n_visible(), batch.ncols())?;
    let log_z = log_partition_function(params)?;
    let total: f64 = batch.rows().into_iter().map(|v| neg_free_energy(v, params)).sum();
    Ok(total / batch.nrows() as f64 - log_z)
}

/// Mean-field one-step reconstruction error, averaged over pixels and samples.
pub fn reconstruction_error(params: &RbmParameters, batch: ArrayView2<f64>) -> Result<f64> {
    if batch.nrows() == 0 {
        return Err(Error::Empty("batch"));
    }
    let h = hidden_probs(batch, params)?;
    let v = visible_probs(h.view(), params)?;
    Ok((&v - &batch).mapv(|d| d * d).mean().unwrap_or(0.0))
}

pub(crate) fn shapes_match(a: &RbmParameters, b: &RbmParameters) -> bool {
    a.same_shape(b) && a.visible_bias.len() == b.visible_bias.len()
}
