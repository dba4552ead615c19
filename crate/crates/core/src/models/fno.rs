use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::unet::{init_unet, UnetPrefix};
use super::{
    check_width, fan_in_uniform, uniform, BoundParams, InputLayout, ModelBatch, ModelError, NeuralOperator, ParamSet,
};
use crate::diffkernel::{Graph, Real, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FnoConfig {
    pub in_channels: usize,
    pub lift_width: usize,
    pub n_layers: usize,
    pub modes: usize,
    pub out_channels: usize,
}

impl Default for FnoConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            lift_width: 64,
            n_layers: 4,
            modes: 16,
            out_channels: 1,
        }
    }
}

/// `f` is `[C_in, L]` or `[C_in, N, L]`, `r` is `[C_out, C_in, 2, modes]`
/// (real and imaginary planes). Output keeps the rank of `f`.
pub fn spectral_conv<T: Real>(g: &mut Graph<T>, f: Var, r: Var) -> Result<Var, ModelError> {
    let shape = g.shape(f)?.to_vec();
    let (x, len) = match shape[..] {
        [c, l] => (g.reshape(f, &[c, 1, l])?, l),
        [_, _, l] => (f, l),
        _ => {
            return Err(ModelError::Input(format!(
                "spectral_conv expects [C, L] or [C, N, L], got {shape:?}"
            )))
        }
    };
    let modes = *g.shape(r)?.last().unwrap_or(&0);
    let s = g.rdft_modes(x, modes)?;
    let m = g.spectral_mix(s, r)?;
    let y = g.irdft_modes(m, len)?;
    if shape.len() == 2 {
        let co = g.shape(y)?[0];
        return Ok(g.reshape(y, &[co, len])?);
    }
    Ok(y)
}

/// `spectral_conv(f, R) + W f + b`, optionally followed by ReLU.
pub fn fno_layer<T: Real>(g: &mut Graph<T>, f: Var, r: Var, w: Var, b: Var, relu: bool) -> Result<Var, ModelError> {
    let s = spectral_conv(g, f, r)?;
    let lin = g.channel_mix(f, w, Some(b))?;
    let y = g.add(s, lin)?;
    Ok(if relu { g.relu(y)? } else { y })
}

/// Layer stack shared by FNO and U-FNO: `unet[i]` adds a U-net path to layer `i`.
pub(crate) struct Stack {
    pub in_channels: usize,
    pub width: usize,
    pub modes: usize,
    pub out_channels: usize,
    pub unet: Vec<bool>,
    pub kernel: usize,
    pub up_channels: usize,
}

impl Stack {
    pub fn init<T: Real>(&self, rng: &mut ChaCha8Rng) -> ParamSet<T> {
        let (w, m) = (self.width, self.modes);
        let mut p = ParamSet::new();
        p.insert("lift.w", fan_in_uniform(rng, &[w, self.in_channels], self.in_channels));
        p.insert("lift.b", fan_in_uniform(rng, &[w], self.in_channels));
        for (i, &has_unet) in self.unet.iter().enumerate() {
            let scale = 1.0 / (w * w) as f64;
            p.insert(format!("layer{i}.spectral"), uniform(rng, &[w, w, 2, m], 0.0, scale));
            p.insert(format!("layer{i}.w"), fan_in_uniform(rng, &[w, w], w));
            p.insert(format!("layer{i}.b"), fan_in_uniform(rng, &[w], w));
            if has_unet {
                init_unet(&mut p, &UnetPrefix::layer(i), w, self.kernel, self.up_channels, rng);
            }
        }
        p.insert("project.w", fan_in_uniform(rng, &[self.out_channels, w], w));
        p.insert("project.b", fan_in_uniform(rng, &[self.out_channels], w));
        p
    }

    pub fn forward<T: Real>(
        &self,
        g: &mut Graph<T>,
        p: &BoundParams,
        batch: &ModelBatch<T>,
    ) -> Result<Var, ModelError> {
        let s = batch.inputs.shape();
        if s.len() != 3 || s[1] != self.in_channels {
            return Err(ModelError::Input(format!(
                "expected inputs [N, {}, L], got {s:?}",
                self.in_channels
            )));
        }
        let (n, len) = (s[0], s[2]);
        let x = g.constant(&batch.inputs);
        let x = g.swap_leading(x)?;
        let mut f = g.channel_mix(x, p.get("lift.w")?, Some(p.get("lift.b")?))?;
        let last = self.unet.len().saturating_sub(1);
        for (i, &has_unet) in self.unet.iter().enumerate() {
            let relu = i != last;
            let r = p.get(&format!("layer{i}.spectral"))?;
            let w = p.get(&format!("layer{i}.w"))?;
            let b = p.get(&format!("layer{i}.b"))?;
            f = if has_unet {
                super::unet::ufno_layer(g, f, r, w, b, p, &UnetPrefix::layer(i), relu)?
            } else {
                fno_layer(g, f, r, w, b, relu)?
            };
        }
        let y = g.channel_mix(f, p.get("project.w")?, Some(p.get("project.b")?))?;
        let y = g.swap_leading(y)?;
        if self.out_channels == 1 {
            Ok(g.reshape(y, &[n, len])?)
        } else {
            Ok(y)
        }
    }
}

pub struct Fno {
    cfg: FnoConfig,
    stack: Stack,
}

impl Fno {
    pub fn new(cfg: FnoConfig) -> Result<Self, ModelError> {
        check_width("in_channels", cfg.in_channels)?;
        check_width("lift_width", cfg.lift_width)?;
        check_width("modes", cfg.modes)?;
        check_width("out_channels", cfg.out_channels)?;
        let stack = Stack {
            in_channels: cfg.in_channels,
            width: cfg.lift_width,
            modes: cfg.modes,
            out_channels: cfg.out_channels,
            unet: vec![false; cfg.n_layers],
            kernel: 3,
            up_channels: 0,
        };
        Ok(Self { cfg, stack })
    }

    pub fn cfg(&self) -> &FnoConfig {
        &self.cfg
    }
}

impl<T: Real> NeuralOperator<T> for Fno {
    fn kind(&self) -> &'static str {
        "fno"
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
