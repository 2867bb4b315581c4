//! Encoder, synthesizer and factorized rate model as plain functions over a
//! named parameter map.
//!
//! The encoder is a strided convolution stack, a 1x1 projection to the
//! embedding width with ReLU, then global average pooling. The synthesizer is a small U-net over the
//! colourless image: the embedding is projected, broadcast and concatenated
//! at the bottleneck, and every decoder stage is modulated feature-wise
//! (`h·(1+γ) + β`) by an MLP of the embedding and pooled bottleneck features.

use std::collections::BTreeMap;

use candle_core::{DType, Device, Tensor, Var, D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub embedding_dim: usize,
    pub encoder_channels: [usize; 3],
    /// Channels at full, half and quarter resolution.
    pub synth_channels: [usize; 3],
    /// Channels of the broadcast embedding projection at the bottleneck.
    pub embed_projection: usize,
    pub film_hidden: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            embedding_dim: crate::EMBEDDING_DIM,
            encoder_channels: [16, 32, 32],
            synth_channels: [8, 16, 32],
            embed_projection: 16,
            film_hidden: 64,
        }
    }
}

impl ModelConfig {
    /// A deliberately tiny network used for gradient checks.
    pub fn tiny(embedding_dim: usize) -> Self {
        Self {
            embedding_dim,
            encoder_channels: [2, 2, 3],
            synth_channels: [2, 2, 3],
            embed_projection: 2,
            film_hidden: 3,
        }
    }

    fn film_width(&self) -> usize {
        let [c0, c1, c2] = self.synth_channels;
        2 * (c2 + c1 + c0 + c0)
    }

    pub fn parameter_count(&self) -> usize {
        param_specs(self).iter().map(|s| s.shape.iter().product::<usize>()).sum()
    }
}

#[derive(Debug, Clone, Copy)]
enum Init {
    /// Uniform in ±sqrt(6 / fan_in), for layers followed by ReLU.
    He,
    /// Uniform in ±1/sqrt(fan_in).
    Fan,
    Zeros,
    Const(f64),
}

#[derive(Debug, Clone)]
pub(crate) struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    init: Init,
}

fn spec(name: &str, shape: &[usize], init: Init) -> ParamSpec {
    ParamSpec { name: name.to_string(), shape: shape.to_vec(), init }
}

fn conv(out: &mut Vec<ParamSpec>, name: &str, cout: usize, cin: usize, k: usize, init: Init) {
    out.push(spec(&format!("{name}.weight"), &[cout, cin, k, k], init));
    out.push(spec(&format!("{name}.bias"), &[cout], Init::Zeros));
}

fn linear(out: &mut Vec<ParamSpec>, name: &str, dout: usize, din: usize, init: Init) {
    out.push(spec(&format!("{name}.weight"), &[dout, din], init));
    out.push(spec(&format!("{name}.bias"), &[dout], Init::Zeros));
}

pub(crate) fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let mut v = Vec::new();
    let [e0, e1, e2] = cfg.encoder_channels;
    conv(&mut v, "encoder.conv0", e0, 3, 3, Init::He);
    conv(&mut v, "encoder.conv1", e1, e0, 3, Init::He);
    conv(&mut v, "encoder.conv2", e2, e1, 3, Init::He);
    conv(&mut v, "encoder.out", cfg.embedding_dim, e2, 1, Init::He);

    let [c0, c1, c2] = cfg.synth_channels;
    let p = cfg.embed_projection;
    conv(&mut v, "synth.down0", c0, 1, 3, Init::He);
    conv(&mut v, "synth.down1", c1, c0, 3, Init::He);
    conv(&mut v, "synth.down2", c2, c1, 3, Init::He);
    linear(&mut v, "synth.embed_proj", p, cfg.embedding_dim, Init::Fan);
    linear(&mut v, "synth.film_hidden", cfg.film_hidden, cfg.embedding_dim + c2, Init::He);
    linear(&mut v, "synth.film_out", cfg.film_width(), cfg.film_hidden, Init::Fan);
    conv(&mut v, "synth.bottleneck", c2, c2 + p, 3, Init::He);
    conv(&mut v, "synth.up1", c1, c2 + c1, 1, Init::He);
    conv(&mut v, "synth.up0", c0, c1 + c0, 1, Init::He);
    conv(&mut v, "synth.pixel", c0, c0, 1, Init::He);
    conv(&mut v, "synth.out", 3, c0 + 1, 1, Init::Fan);

    v.push(spec("rate.loc", &[cfg.embedding_dim], Init::Zeros));
    v.push(spec("rate.log_scale", &[cfg.embedding_dim], Init::Const(0.0)));
    v
}

fn init_values(spec: &ParamSpec, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let n: usize = spec.shape.iter().product();
    let fan_in: usize = spec.shape[1..].iter().product::<usize>().max(1);
    let bound = match spec.init {
        Init::He => (6.0 / fan_in as f64).sqrt(),
        Init::Fan => 1.0 / (fan_in as f64).sqrt(),
        Init::Zeros => return vec![0.0; n],
        Init::Const(c) => return vec![c; n],
    };
    (0..n).map(|_| rng.gen_range(-bound..bound)).collect()
}

/// Forward-pass weights. Tensors may be variable-backed during training.
#[derive(Clone)]
pub(crate) struct Network {
    pub config: ModelConfig,
    params: BTreeMap<String, Tensor>,
}

impl Network {
    /// Fresh variables, initialized deterministically from `seed`.
    pub fn init(config: ModelConfig, seed: u64, dtype: DType) -> Result<(Self, Vec<(String, Var)>)> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = BTreeMap::new();
        let mut vars = Vec::new();
        for s in param_specs(&config) {
            let values = init_values(&s, &mut rng);
            let t = Tensor::from_vec(values, s.shape.as_slice(), &Device::Cpu)?.to_dtype(dtype)?;
            let var = Var::from_tensor(&t)?;
            params.insert(s.name.clone(), var.as_tensor().clone());
            vars.push((s.name, var));
        }
        Ok((Self { config, params }, vars))
    }

    pub fn from_tensors(config: ModelConfig, params: BTreeMap<String, Tensor>) -> Result<Self> {
        for s in param_specs(&config) {
            let t = params.get(&s.name).ok_or_else(|| Error::Model(format!("missing parameter {}", s.name)))?;
            if t.dims() != s.shape.as_slice() {
                return Err(Error::Model(format!("parameter {} has shape {:?}, expected {:?}", s.name, t.dims(), s.shape)));
            }
        }
        Ok(Self { config, params })
    }

    pub fn params(&self) -> &BTreeMap<String, Tensor> {
        &self.params
    }

    fn p(&self, name: &str) -> &Tensor {
        &self.params[name]
    }

    fn conv(&self, name: &str, x: &Tensor, stride: usize) -> Result<Tensor> {
        conv2d(x, self.p(&format!("{name}.weight")), self.p(&format!("{name}.bias")), stride)
    }

    fn linear(&self, name: &str, x: &Tensor) -> Result<Tensor> {
        let w = self.p(&format!("{name}.weight"));
        let b = self.p(&format!("{name}.bias"));
        Ok(x.matmul(&w.t()?)?.broadcast_add(b)?)
    }

    /// `y`: `[B, 3, H, W]` in `[0, 1]` → embeddings `[B, D]`.
    pub fn encode(&self, y: &Tensor) -> Result<Tensor> {
        let h = (y - 0.5)?;
        let h = self.conv("encoder.conv0", &h, 2)?.relu()?;
        let h = self.conv("encoder.conv1", &h, 2)?.relu()?;
        let h = self.conv("encoder.conv2", &h, 2)?.relu()?;
        let h = self.conv("encoder.out", &h, 1)?.relu()?;
        Ok(h.mean(D::Minus1)?.mean(D::Minus1)?)
    }

    /// `x`: `[B, 1, H, W]` colourless, `e`: `[B, D]` → reconstruction `[B, 3, H, W]` (unclamped).
    pub fn synthesize(&self, x: &Tensor, e: &Tensor) -> Result<Tensor> {
        let [c0, c1, c2] = self.config.synth_channels;
        let xin = (x - 0.5)?;
        let s0 = self.conv("synth.down0", &xin, 1)?.relu()?;
        let s1 = self.conv("synth.down1", &s0, 2)?.relu()?;
        let s2 = self.conv("synth.down2", &s1, 2)?.relu()?;
        let (b, _, h2, w2) = s2.dims4()?;

        let pooled = s2.mean(D::Minus1)?.mean(D::Minus1)?;
        let cond = Tensor::cat(&[e, &pooled], 1)?;
        let cond = self.linear("synth.film_hidden", &cond)?.relu()?;
        let film = self.linear("synth.film_out", &cond)?;
        let mut offset = 0;
        let mut take = |c: usize| -> Result<(Tensor, Tensor)> {
            let gamma = film.narrow(1, offset, c)?.reshape((b, c, 1, 1))?;
            let beta = film.narrow(1, offset + c, c)?.reshape((b, c, 1, 1))?;
            offset += 2 * c;
            Ok((gamma, beta))
        };
        let modulate = |h: Tensor, (gamma, beta): (Tensor, Tensor)| -> Result<Tensor> {
            Ok(h.broadcast_mul(&(gamma + 1.0)?)?.broadcast_add(&beta)?.relu()?)
        };

        let proj = self.linear("synth.embed_proj", e)?;
        let p = proj.dim(1)?;
        let proj = proj.reshape((b, p, 1, 1))?.broadcast_as((b, p, h2, w2))?;
        let h = self.conv("synth.bottleneck", &Tensor::cat(&[&s2, &proj], 1)?, 1)?;
        let h = modulate(h, take(c2)?)?;

        let (_, _, h1, w1) = s1.dims4()?;
        let up = h.upsample_nearest2d(h1, w1)?;
        let h = self.conv("synth.up1", &Tensor::cat(&[&up, &s1], 1)?, 1)?;
        let h = modulate(h, take(c1)?)?;

        let (_, _, h0, w0) = s0.dims4()?;
        let up = h.upsample_nearest2d(h0, w0)?;
        let h = self.conv("synth.up0", &Tensor::cat(&[&up, &s0], 1)?, 1)?;
        let h = modulate(h, take(c0)?)?;
        let h = modulate(self.conv("synth.pixel", &h, 1)?, take(c0)?)?;

        let out = self.conv("synth.out", &Tensor::cat(&[&h, &xin], 1)?, 1)?;
        Ok((out + 0.5)?)
    }

    /// Bits per entry `[B, D]` under the per-entry logistic density
    /// integrated over a unit bin centred at each value.
    pub fn rate_bits(&self, e: &Tensor) -> Result<Tensor> {
        let loc = self.p("rate.loc");
        let scale = self.p("rate.log_scale").exp()?;
        let centred = e.broadcast_sub(loc)?;
        let upper = (&centred + 0.5)?.broadcast_div(&scale)?;
        let lower = (&centred - 0.5)?.broadcast_div(&scale)?;
        // Evaluate in the tail where the sigmoids are not saturated.
        let flip = (&upper + &lower)?.detach().ge(0.0)?.to_dtype(e.dtype())?.affine(2.0, -1.0)?;
        let mass = (sigmoid(&(&lower * &flip)?.neg()?)? - sigmoid(&(&upper * &flip)?.neg()?)?)?.abs()?;
        let mass = mass.maximum(MIN_LIKELIHOOD)?;
        Ok((mass.log()? * (-1.0 / std::f64::consts::LN_2))?)
    }
}

/// Same-padded convolution with bias. candle's conv backward is slow on CPU,
/// so stride-1 layers go through an explicit patch matrix instead, which
/// autodiffs through cheap copies and one matmul.
pub(crate) fn conv2d(x: &Tensor, w: &Tensor, bias: &Tensor, stride: usize) -> Result<Tensor> {
    let (cout, cin, k, _) = w.dims4()?;
    let y = if stride == 1 {
        let (b, _, h, wd) = x.dims4()?;
        let cols = if k == 1 {
            x.clone()
        } else {
            let p = k / 2;
            let xp = x.pad_with_zeros(2, p, p)?.pad_with_zeros(3, p, p)?;
            let mut taps = Vec::with_capacity(k * k);
            for dy in 0..k {
                for dx in 0..k {
                    taps.push(xp.narrow(2, dy, h)?.narrow(3, dx, wd)?);
                }
            }
            Tensor::stack(&taps, 2)?
        };
        let cols = cols.reshape((b, cin * k * k, h * wd))?;
        w.reshape((cout, cin * k * k))?.broadcast_matmul(&cols)?.reshape((b, cout, h, wd))?
    } else {
        x.conv2d(w, k / 2, stride, 1, 1)?
    };
    Ok(y.broadcast_add(&bias.reshape((1, (), 1, 1))?)?)
}

pub(crate) const MIN_LIKELIHOOD: f64 = 1e-9;

fn sigmoid(x: &Tensor) -> Result<Tensor> {
    Ok((((x * 0.5)?.tanh()? + 1.0)? * 0.5)?)
}

/// Scalar reference for one entry's bits, used at inference time.
pub(crate) fn entry_bits(value: f64, loc: f64, log_scale: f64) -> f64 {
    let s = log_scale.exp();
    let c = value - loc;
    let (upper, lower) = ((c + 0.5) / s, (c - 0.5) / s);
    let logistic = |z: f64| 1.0 / (1.0 + (-z).exp());
    let mass = if upper + lower >= 0.0 {
        logistic(-lower) - logistic(-upper)
    } else {
        logistic(upper) - logistic(lower)
    };
    -mass.abs().max(MIN_LIKELIHOOD).log2()
}
