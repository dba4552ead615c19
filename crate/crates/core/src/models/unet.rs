use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::fno::{spectral_conv, Stack};
use super::{check_width, fan_in_uniform, BoundParams, InputLayout, ModelBatch, ModelError, NeuralOperator, ParamSet};
use crate::diffkernel::{Graph, Real, Var};

/// Transposed convolutions use kernel 4, stride 2, padding 1: exact 2x upsampling.
const DECONV_KERNEL: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct UfnoConfig {
    pub in_channels: usize,
    pub lift_width: usize,
    /// Encoder kernel (odd).
    pub kernel: usize,
    /// Channels produced by the deepest transposed convolution.
    pub up_channels: usize,
    pub n_fno_layers: usize,
    pub n_ufno_layers: usize,
    pub modes: usize,
    pub out_channels: usize,
}

impl Default for UfnoConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            lift_width: 160,
            kernel: 3,
            up_channels: 200,
            n_fno_layers: 2,
            n_ufno_layers: 2,
            modes: 16,
            out_channels: 1,
        }
    }
}

impl UfnoConfig {
    /// Input channels of De-CNN1: skip (width) plus upsampled path.
    pub fn decnn1_in(&self) -> usize {
        self.lift_width + self.up_channels
    }
}

/// Name prefix of one U-net's parameters, e.g. `layer2.unet.`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnetPrefix(pub String);

impl UnetPrefix {
    pub fn layer(i: usize) -> Self {
        Self(format!("layer{i}.unet."))
    }

    fn name(&self, part: &str) -> String {
        format!("{}{part}", self.0)
    }
}

pub(crate) fn init_unet<T: Real>(
    p: &mut ParamSet<T>,
    prefix: &UnetPrefix,
    width: usize,
    kernel: usize,
    up: usize,
    rng: &mut ChaCha8Rng,
) {
    for conv in ["conv1", "conv2", "conv3"] {
        p.insert(
            prefix.name(&format!("{conv}.k")),
            fan_in_uniform(rng, &[width, width, kernel], width * kernel),
        );
        p.insert(
            prefix.name(&format!("{conv}.b")),
            fan_in_uniform(rng, &[width], width * kernel),
        );
    }
    let k = DECONV_KERNEL;
    // Transposed kernels are [C_in, C_out, K]; fan-in follows the output side.
    let deconvs = [
        ("deconv2", width, up),
        ("deconv1", width + up, width),
        ("deconv0", width, width),
    ];
    for (name, ci, co) in deconvs {
        p.insert(
            prefix.name(&format!("{name}.k")),
            fan_in_uniform(rng, &[ci, co, k], co * k),
        );
        p.insert(prefix.name(&format!("{name}.b")), fan_in_uniform(rng, &[co], co * k));
    }
    p.insert(
        prefix.name("reduce.w"),
        fan_in_uniform(rng, &[width, 2 * width], 2 * width),
    );
    p.insert(prefix.name("reduce.b"), fan_in_uniform(rng, &[width], 2 * width));
}

fn conv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &BoundParams,
    prefix: &UnetPrefix,
    name: &str,
) -> Result<Var, ModelError> {
    let k = p.get(&prefix.name(&format!("{name}.k")))?;
    let kernel = g.shape(k)?[2];
    let y = g.conv1d(x, k, 2, (kernel - 1) / 2)?;
    let y = g.add_bias_lead(y, p.get(&prefix.name(&format!("{name}.b")))?)?;
    Ok(g.relu(y)?)
}

fn deconv<T: Real>(
    g: &mut Graph<T>,
    x: Var,
    p: &BoundParams,
    prefix: &UnetPrefix,
    name: &str,
    keep: usize,
    relu: bool,
) -> Result<Var, ModelError> {
    let y = g.conv_transpose1d(x, p.get(&prefix.name(&format!("{name}.k")))?, 2, 1)?;
    let y = g.crop_last(y, keep)?;
    let y = g.add_bias_lead(y, p.get(&prefix.name(&format!("{name}.b")))?)?;
    Ok(if relu { g.relu(y)? } else { y })
}

/// Three stride-2 encoder convs, two skip concatenations, a 1x1 channel
/// reduction and three transposed convs; lengths are restored by cropping
/// the tail. `f` is `[C, L]` or `[C, N, L]`.
pub fn unet_forward<T: Real>(
    g: &mut Graph<T>,
    f: Var,
    p: &BoundParams,
    prefix: &UnetPrefix,
) -> Result<Var, ModelError> {
    let shape = g.shape(f)?.to_vec();
    let (x, len) = match shape[..] {
        [c, l] => (g.reshape(f, &[c, 1, l])?, l),
        [_, _, l] => (f, l),
        _ => {
            return Err(ModelError::Input(format!(
                "U-net expects [C, L] or [C, N, L], got {shape:?}"
            )))
        }
    };
    if len < 8 {
        return Err(ModelError::Input(format!("U-net needs at least 8 samples, got {len}")));
    }
    let e1 = conv(g, x, p, prefix, "conv1")?;
    let e2 = conv(g, e1, p, prefix, "conv2")?;
    let e3 = conv(g, e2, p, prefix, "conv3")?;
    let (l1, l2) = (*g.shape(e1)?.last().unwrap(), *g.shape(e2)?.last().unwrap());
    let d2 = deconv(g, e3, p, prefix, "deconv2", l2, true)?;
    let c2 = g.concat(&[e2, d2])?;
    let d1 = deconv(g, c2, p, prefix, "deconv1", l1, true)?;
    let c1 = g.concat(&[e1, d1])?;
    let r = g.channel_mix(
        c1,
        p.get(&prefix.name("reduce.w"))?,
        Some(p.get(&prefix.name("reduce.b"))?),
    )?;
    let r = g.relu(r)?;
    let y = deconv(g, r, p, prefix, "deconv0", len, false)?;
    if shape.len() == 2 {
        let c = g.shape(y)?[0];
        return Ok(g.reshape(y, &[c, len])?);
    }
    Ok(y)
}

/// `spectral_conv(f, R) + W f + b + unet(f)`, optionally followed by ReLU.
#[allow(clippy::too_many_arguments)]
pub fn ufno_layer<T: Real>(
    g: &mut Graph<T>,
    f: Var,
    r: Var,
    w: Var,
    b: Var,
    p: &BoundParams,
    prefix: &UnetPrefix,
    relu: bool,
) -> Result<Var, ModelError> {
    let s = spectral_conv(g, f, r)?;
    let lin = g.channel_mix(f, w, Some(b))?;
    let u = unet_forward(g, f, p, prefix)?;
    let y = g.add(s, lin)?;
    let y = g.add(y, u)?;
    Ok(if relu { g.relu(y)? } else { y })
}

pub struct Ufno {
    cfg: UfnoConfig,
    stack: Stack,
}

impl Ufno {
    pub fn new(cfg: UfnoConfig) -> Result<Self, ModelError> {
        check_width("in_channels", cfg.in_channels)?;
        check_width("lift_width", cfg.lift_width)?;
        check_width("up_channels", cfg.up_channels)?;
        check_width("modes", cfg.modes)?;
        check_width("out_channels", cfg.out_channels)?;
        if cfg.kernel.is_multiple_of(2) {
            return Err(ModelError::Config(format!(
                "U-net kernel must be odd, got {}",
                cfg.kernel
            )));
        }
        let mut unet = vec![false; cfg.n_fno_layers];
        unet.extend(vec![true; cfg.n_ufno_layers]);
        let stack = Stack {
            in_channels: cfg.in_channels,
            width: cfg.lift_width,
            modes: cfg.modes,
            out_channels: cfg.out_channels,
            unet,
            kernel: cfg.kernel,
            up_channels: cfg.up_channels,
        };
        Ok(Self { cfg, stack })
    }

    pub fn cfg(&self) -> &UfnoConfig {
        &self.cfg
    }
}

impl<T: Real> NeuralOperator<T> for Ufno {
    fn kind(&self) -> &'static str {
        "ufno"
    }

    fn layout(&self) -> InputLayout {
        InputLayout::Channels
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet<T> {
        self.stack.init(rng)
    }

    fn forward(&self, g: &mut Graph<T>, p: &BoundParams, batch: &ModelBatch<T>) -> Result<Var, ModelError> {
        self.stack.forward(g, p, batch)
    }
}
