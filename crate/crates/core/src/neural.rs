//! Fully connected networks with exact reverse-mode gradients, the
//! reparametrized ELBO, and per-example gradients for DP-SGD.
//!
//! The encoder mean is the frozen PCA projection, so only the encoder's
//! log-variance head and the decoder carry trainable parameters. Parameter
//! vectors are flattened as `[encoder layers..., decoder layers...]`, each
//! layer as `weights (out × in, row-major)` then `bias`.

use rand::Rng as _;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mog::{kl_gauss_to_mog_grad, DiagGaussian, MoG, VARIANCE_FLOOR};
use crate::rng::Rng;

pub const LOGVAR_MIN: f64 = -20.0;
pub const LOGVAR_MAX: f64 = 2.0;
const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => sigmoid(x),
        }
    }

    /// Derivative given the pre-activation `x` and output `y`.
    fn derivative(self, x: f64, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if x > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn num_params(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
}

/// Inputs and pre-activations cached by [`Mlp::forward`].
#[derive(Debug, Clone)]
pub struct Trace {
    /// `activations[0]` is the input, `activations[l + 1]` the output of layer `l`.
    pub activations: Vec<Vec<f64>>,
    pub pre_activations: Vec<Vec<f64>>,
}

impl Trace {
    pub fn output(&self) -> &[f64] {
        self.activations.last().expect("trace holds the input")
    }
}

impl Mlp {
    /// Glorot-uniform weights, zero biases. `sizes` lists every layer width
    /// including input and output.
    pub fn new(sizes: &[usize], hidden: Activation, output: Activation, rng: &mut Rng) -> Self {
        let mut mlp = Mlp::zeros(sizes, hidden, output);
        for layer in &mut mlp.layers {
            let bound = (6.0 / (layer.inputs + layer.outputs) as f64).sqrt();
            for w in &mut layer.weights {
                *w = rng.random_range(-bound..bound);
            }
        }
        mlp
    }

    pub fn zeros(sizes: &[usize], hidden: Activation, output: Activation) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output widths");
        let n = sizes.len() - 1;
        let layers = sizes
            .windows(2)
            .enumerate()
            .map(|(i, w)| Layer {
                inputs: w[0],
                outputs: w[1],
                weights: vec![0.0; w[0] * w[1]],
                bias: vec![0.0; w[1]],
                activation: if i + 1 == n { output } else { hidden },
            })
            .collect();
        Mlp { layers }
    }

    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Domain("an MLP needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Domain(format!("layer {i} has inconsistent shapes")));
            }
            if i > 0 && layers[i - 1].outputs != l.inputs {
                return Err(Error::Domain(format!("layer {i} does not chain")));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Domain(format!("layer {i} holds non-finite values")));
            }
        }
        Ok(Mlp { layers })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.outputs)
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(Layer::num_params).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_params(&mut self, p: &[f64]) {
        assert_eq!(p.len(), self.num_params());
        let mut at = 0;
        for l in &mut self.layers {
            let w = l.weights.len();
            l.weights.copy_from_slice(&p[at..at + w]);
            at += w;
            let b = l.bias.len();
            l.bias.copy_from_slice(&p[at..at + b]);
            at += b;
        }
    }

    /// `θ ← θ + scale · delta`.
    pub fn add_scaled(&mut self, delta: &[f64], scale: f64) {
        assert_eq!(delta.len(), self.num_params());
        let mut it = delta.iter();
        for l in &mut self.layers {
            for p in l.weights.iter_mut().chain(l.bias.iter_mut()) {
                *p += scale * it.next().expect("length checked");
            }
        }
    }

    pub fn forward(&self, x: &[f64]) -> Result<Trace> {
        if x.len() != self.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.input_dim(),
                actual: x.len(),
            });
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(x.to_vec());
        for l in &self.layers {
            let input = activations.last().expect("nonempty");
            let mut pre = l.bias.clone();
            for (o, p) in pre.iter_mut().enumerate() {
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                *p += row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
            }
            let post = pre.iter().map(|&v| l.activation.apply(v)).collect();
            pre_activations.push(pre);
            activations.push(post);
        }
        Ok(Trace {
            activations,
            pre_activations,
        })
    }

    /// Backpropagates `grad_output` (∂loss/∂output) through a cached trace,
    /// adding parameter gradients into `grad_params` and returning ∂loss/∂input.
    pub fn backward(&self, trace: &Trace, grad_output: &[f64], grad_params: &mut [f64]) -> Vec<f64> {
        assert_eq!(grad_params.len(), self.num_params());
        let mut offsets = Vec::with_capacity(self.layers.len());
        let mut at = 0;
        for l in &self.layers {
            offsets.push(at);
            at += l.num_params();
        }
        let mut grad = grad_output.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let pre = &trace.pre_activations[li];
            let post = &trace.activations[li + 1];
            let input = &trace.activations[li];
            for o in 0..l.outputs {
                grad[o] *= l.activation.derivative(pre[o], post[o]);
            }
            let base = offsets[li];
            let (gw, gb) = grad_params[base..base + l.num_params()].split_at_mut(l.weights.len());
            let mut grad_in = vec![0.0; l.inputs];
            for o in 0..l.outputs {
                let g = grad[o];
                if g == 0.0 {
                    continue;
                }
                gb[o] += g;
                let row = &l.weights[o * l.inputs..(o + 1) * l.inputs];
                let grow = &mut gw[o * l.inputs..(o + 1) * l.inputs];
                for i in 0..l.inputs {
                    grow[i] += g * input[i];
                    grad_in[i] += g * row[i];
                }
            }
            grad = grad_in;
        }
        grad
    }
}

/// Likelihood family of `p_θ(x | z)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecoderHead {
    /// Independent Bernoulli per feature; the decoder emits logits.
    Bernoulli,
    /// Independent unit-variance Gaussian per feature; the decoder emits means.
    Gaussian,
}

impl DecoderHead {
    pub fn log_likelihood(self, x: &[f64], out: &[f64]) -> f64 {
        match self {
            DecoderHead::Bernoulli => x.iter().zip(out).map(|(x, a)| x * a - softplus(*a)).sum(),
            DecoderHead::Gaussian => x
                .iter()
                .zip(out)
                .map(|(x, a)| -0.5 * (x - a) * (x - a) - HALF_LN_2PI)
                .sum(),
        }
    }

    /// ∂ log-likelihood / ∂ decoder output.
    fn log_likelihood_grad(self, x: &[f64], out: &[f64]) -> Vec<f64> {
        match self {
            DecoderHead::Bernoulli => x.iter().zip(out).map(|(x, a)| x - sigmoid(*a)).collect(),
            DecoderHead::Gaussian => x.iter().zip(out).map(|(x, a)| x - a).collect(),
        }
    }

    pub fn mean(self, out: &[f64]) -> Vec<f64> {
        match self {
            DecoderHead::Bernoulli => out.iter().map(|a| sigmoid(*a)).collect(),
            DecoderHead::Gaussian => out.to_vec(),
        }
    }

    pub fn sample(self, out: &[f64], rng: &mut Rng) -> Vec<f64> {
        match self {
            DecoderHead::Bernoulli => out
                .iter()
                .map(|a| f64::from(u8::from(rng.random::<f64>() < sigmoid(*a))))
                .collect(),
            DecoderHead::Gaussian => out
                .iter()
                .map(|a| a + rng.sample::<f64, _>(StandardNormal))
                .collect(),
        }
    }
}

/// Whether the encoder variance is trained or pinned at the floor (the
/// deterministic autoencoder limit).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceMode {
    Learned,
    Frozen,
}

/// Fixed affine map `(z − center) / scale` applied before the decoder.
///
/// Set from the released prior, so it is post-processing; it does not
/// change the decoder's function class, only the conditioning of its input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatentNorm {
    pub center: Vec<f64>,
    pub scale: Vec<f64>,
}

impl LatentNorm {
    pub fn identity(dim: usize) -> Self {
        LatentNorm {
            center: vec![0.0; dim],
            scale: vec![1.0; dim],
        }
    }

    /// Per-dimension mean and standard deviation of the mixture.
    pub fn from_prior(prior: &MoG) -> Self {
        let d = prior.dim();
        let mut center = vec![0.0; d];
        let mut second = vec![0.0; d];
        for (w, c) in prior.weights.iter().zip(&prior.components) {
            for j in 0..d {
                center[j] += w * c.mean[j];
                second[j] += w * (c.variance[j] + c.mean[j] * c.mean[j]);
            }
        }
        let scale = (0..d)
            .map(|j| (second[j] - center[j] * center[j]).max(VARIANCE_FLOOR).sqrt())
            .collect();
        LatentNorm { center, scale }
    }

    pub fn apply(&self, z: &[f64]) -> Vec<f64> {
        z.iter()
            .zip(self.center.iter().zip(&self.scale))
            .map(|(z, (c, s))| (z - c) / s)
            .collect()
    }
}

/// The trainable parts of the model: encoder log-variance net and decoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Networks {
    pub encoder_var: Mlp,
    pub decoder: Mlp,
    pub latent_norm: LatentNorm,
    pub head: DecoderHead,
    pub variance_mode: VarianceMode,
}

impl Networks {
    /// Encoder `[d, hidden, d′]` and decoder `[d′, hidden, d]`, ReLU hidden layers.
    pub fn new(
        d: usize,
        d_prime: usize,
        hidden: usize,
        head: DecoderHead,
        variance_mode: VarianceMode,
        rng: &mut Rng,
    ) -> Self {
        let encoder_var = Mlp::new(&[d, hidden, d_prime], Activation::Relu, Activation::Identity, rng);
        let decoder = Mlp::new(&[d_prime, hidden, d], Activation::Relu, Activation::Identity, rng);
        Networks {
            encoder_var,
            decoder,
            latent_norm: LatentNorm::identity(d_prime),
            head,
            variance_mode,
        }
    }

    /// Decoder forward pass from a latent `z` (before normalization).
    pub fn decode(&self, z: &[f64]) -> Result<Trace> {
        if z.len() != self.latent_dim() {
            return Err(Error::DimensionMismatch {
                expected: self.latent_dim(),
                actual: z.len(),
            });
        }
        self.decoder.forward(&self.latent_norm.apply(z))
    }

    pub fn num_params(&self) -> usize {
        self.encoder_var.num_params() + self.decoder.num_params()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut p = self.encoder_var.params();
        p.extend(self.decoder.params());
        p
    }

    pub fn set_params(&mut self, p: &[f64]) {
        let e = self.encoder_var.num_params();
        self.encoder_var.set_params(&p[..e]);
        self.decoder.set_params(&p[e..]);
    }

    /// `θ ← θ − lr · grad`.
    pub fn descend(&mut self, grad: &[f64], lr: f64) {
        let e = self.encoder_var.num_params();
        self.encoder_var.add_scaled(&grad[..e], -lr);
        self.decoder.add_scaled(&grad[e..], -lr);
    }

    pub fn latent_dim(&self) -> usize {
        self.decoder.input_dim()
    }

    /// Clamped log-variance of `q(z | x)` and the raw head output.
    fn log_variance_trace(&self, x: &[f64]) -> Result<(Vec<f64>, Option<Trace>)> {
        match self.variance_mode {
            VarianceMode::Frozen => Ok((vec![LOGVAR_MIN; self.latent_dim()], None)),
            VarianceMode::Learned => {
                let t = self.encoder_var.forward(x)?;
                let lv = t.output().iter().map(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX)).collect();
                Ok((lv, Some(t)))
            }
        }
    }

    pub fn log_variance(&self, x: &[f64]) -> Result<Vec<f64>> {
        Ok(self.log_variance_trace(x)?.0)
    }

    /// Decoder distribution mean at `z`.
    pub fn decode_mean(&self, z: &[f64]) -> Result<Vec<f64>> {
        let t = self.decode(z)?;
        Ok(self.head.mean(t.output()))
    }
}

/// A reparametrized draw `z = mean + exp(logvar / 2) ⊙ ε` and its `ε`.
#[derive(Debug, Clone, PartialEq)]
pub struct Reparam {
    pub z: Vec<f64>,
    pub eps: Vec<f64>,
}

pub fn standard_normal_vec(dim: usize, rng: &mut Rng) -> Vec<f64> {
    (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect()
}

pub fn reparam_with(mean: &[f64], logvar: &[f64], eps: &[f64]) -> Vec<f64> {
    mean.iter()
        .zip(logvar)
        .zip(eps)
        .map(|((m, lv), e)| m + (0.5 * lv.clamp(LOGVAR_MIN, LOGVAR_MAX)).exp() * e)
        .collect()
}

pub fn reparam_sample(mean: &[f64], logvar: &[f64], rng: &mut Rng) -> Reparam {
    let eps = standard_normal_vec(mean.len(), rng);
    Reparam {
        z: reparam_with(mean, logvar, &eps),
        eps,
    }
}

/// Monte-Carlo ELBO decomposition; `total = −recon + kl` is minimized.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ElboTerms {
    pub recon: f64,
    pub kl: f64,
    pub total: f64,
}

/// One training example: the record, its frozen encoder mean, and the
/// standard-normal draws (`L` rows of `d′`) used for reparametrization.
#[derive(Debug, Clone)]
pub struct Example<'a> {
    pub x: &'a [f64],
    pub z_mean: &'a [f64],
    pub eps: Vec<Vec<f64>>,
}

/// ELBO terms and the gradient of `total` w.r.t. all parameters, for fixed
/// reparametrization draws.
pub fn elbo_with_noise(
    nets: &Networks,
    prior: &MoG,
    x: &[f64],
    z_mean: &[f64],
    eps: &[Vec<f64>],
) -> Result<(ElboTerms, Vec<f64>)> {
    let dp = nets.latent_dim();
    if z_mean.len() != dp {
        return Err(Error::DimensionMismatch {
            expected: dp,
            actual: z_mean.len(),
        });
    }
    if eps.is_empty() {
        return Err(Error::Domain("need at least one Monte-Carlo sample".into()));
    }
    let enc_n = nets.encoder_var.num_params();
    let mut grad = vec![0.0; nets.num_params()];
    let (logvar, enc_trace) = nets.log_variance_trace(x)?;
    let std: Vec<f64> = logvar.iter().map(|lv| (0.5 * lv).exp()).collect();

    let l = eps.len() as f64;
    let mut recon = 0.0;
    let mut d_logvar = vec![0.0; dp];
    {
        let (_, dec_grad) = grad.split_at_mut(enc_n);
        for e in eps {
            let z: Vec<f64> = (0..dp).map(|i| z_mean[i] + std[i] * e[i]).collect();
            let t = nets.decode(&z)?;
            recon += nets.head.log_likelihood(x, t.output()) / l;
            let g_out: Vec<f64> = nets
                .head
                .log_likelihood_grad(x, t.output())
                .into_iter()
                .map(|g| -g / l)
                .collect();
            let dz = nets.decoder.backward(&t, &g_out, dec_grad);
            for i in 0..dp {
                d_logvar[i] += dz[i] / nets.latent_norm.scale[i] * 0.5 * std[i] * e[i];
            }
        }
    }

    let q = DiagGaussian {
        mean: z_mean.to_vec(),
        variance: logvar.iter().map(|lv| lv.exp()).collect(),
    };
    let (kl, _, d_var) = kl_gauss_to_mog_grad(&q, prior);
    for i in 0..dp {
        d_logvar[i] += d_var[i] * q.variance[i];
    }

    if let Some(t) = enc_trace {
        let raw = t.output();
        let g_raw: Vec<f64> = (0..dp)
            .map(|i| {
                if raw[i] > LOGVAR_MIN && raw[i] < LOGVAR_MAX {
                    d_logvar[i]
                } else {
                    0.0
                }
            })
            .collect();
        nets.encoder_var.backward(&t, &g_raw, &mut grad[..enc_n]);
    }

    let terms = ElboTerms {
        recon,
        kl,
        total: -recon + kl,
    };
    if !terms.total.is_finite() {
        return Err(Error::NonFinite {
            step: 0,
            what: format!("ELBO terms {terms:?}"),
        });
    }
    if grad.iter().any(|g| !g.is_finite()) {
        return Err(Error::NonFinite {
            step: 0,
            what: "ELBO gradient".into(),
        });
    }
    Ok((terms, grad))
}

/// [`elbo_with_noise`] with `mc_samples` fresh draws from `rng`.
pub fn elbo_loss(
    nets: &Networks,
    prior: &MoG,
    x: &[f64],
    z_mean: &[f64],
    mc_samples: usize,
    rng: &mut Rng,
) -> Result<(ElboTerms, Vec<f64>)> {
    let eps: Vec<Vec<f64>> = (0..mc_samples)
        .map(|_| standard_normal_vec(nets.latent_dim(), rng))
        .collect();
    elbo_with_noise(nets, prior, x, z_mean, &eps)
}

/// One gradient per example, computed in parallel; output order follows input.
pub fn per_example_gradients(
    nets: &Networks,
    prior: &MoG,
    batch: &[Example<'_>],
) -> Result<Vec<(ElboTerms, Vec<f64>)>> {
    if batch.is_empty() {
        return Err(Error::Domain("empty batch".into()));
    }
    batch
        .par_iter()
        .map(|ex| elbo_with_noise(nets, prior, ex.x, ex.z_mean, &ex.eps))
        .collect()
}
