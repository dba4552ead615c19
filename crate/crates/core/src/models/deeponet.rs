use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{check_width, fan_in_uniform, BoundParams, InputLayout, ModelBatch, ModelError, NeuralOperator, ParamSet};
use crate::diffkernel::{Graph, Real, Tensor, Var};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DeepOnetConfig {
    /// Branch input width: samples per period plus the appended frequency.
    pub branch_in: usize,
    pub trunk_in: usize,
    /// ReLU hidden layers in each subnetwork.
    pub depth: usize,
    pub hidden: usize,
    /// Number of basis terms `p`, the output width of both subnetworks.
    pub p: usize,
}

impl Default for DeepOnetConfig {
    fn default() -> Self {
        Self {
            branch_in: 501,
            trunk_in: 1,
            depth: 8,
            hidden: 100,
            p: 100,
        }
    }
}

/// `H[n, l] = sum_k c_k(B_n) xi_k(t_l) + b`.
pub struct DeepOnet {
    cfg: DeepOnetConfig,
}

impl DeepOnet {
    pub fn new(cfg: DeepOnetConfig) -> Result<Self, ModelError> {
        check_width("branch_in", cfg.branch_in)?;
        check_width("trunk_in", cfg.trunk_in)?;
        check_width("hidden", cfg.hidden)?;
        check_width("p", cfg.p)?;
        Ok(Self { cfg })
    }

    pub fn cfg(&self) -> &DeepOnetConfig {
        &self.cfg
    }

    /// Layer widths of one subnetwork.
    fn widths(&self, input: usize) -> Vec<usize> {
        let mut w = vec![input];
        w.extend(std::iter::repeat_n(self.cfg.hidden, self.cfg.depth));
        w.push(self.cfg.p);
        w
    }
}

fn init_mlp<T: Real>(p: &mut ParamSet<T>, prefix: &str, widths: &[usize], rng: &mut ChaCha8Rng) {
    for (j, pair) in widths.windows(2).enumerate() {
        p.insert(
            format!("{prefix}.{j}.w"),
            fan_in_uniform(rng, &[pair[0], pair[1]], pair[0]),
        );
        p.insert(format!("{prefix}.{j}.b"), fan_in_uniform(rng, &[pair[1]], pair[0]));
    }
}

fn mlp<T: Real>(g: &mut Graph<T>, x: Var, p: &BoundParams, prefix: &str, layers: usize) -> Result<Var, ModelError> {
    let mut h = x;
    for j in 0..layers {
        h = g.linear(
            h,
            p.get(&format!("{prefix}.{j}.w"))?,
            p.get(&format!("{prefix}.{j}.b"))?,
        )?;
        if j + 1 < layers {
            h = g.relu(h)?;
        }
    }
    Ok(h)
}

impl<T: Real> NeuralOperator<T> for DeepOnet {
    fn kind(&self) -> &'static str {
        "deeponet"
    }

    fn layout(&self) -> InputLayout {
        InputLayout::BranchTrunk
    }

    fn config(&self) -> serde_json::Value {
        serde_json::to_value(&self.cfg).expect("config serializes")
    }

    fn init_params(&self, rng: &mut ChaCha8Rng) -> ParamSet<T> {
        let mut p = ParamSet::new();
        init_mlp(&mut p, "branch", &self.widths(self.cfg.branch_in), rng);
        init_mlp(&mut p, "trunk", &self.widths(self.cfg.trunk_in), rng);
        p.insert("bias", Tensor::zeros(&[1]));
        p
    }

    fn forward(&self, g: &mut Graph<T>, p: &BoundParams, batch: &ModelBatch<T>) -> Result<Var, ModelError> {
        let trunk = batch
            .trunk
            .as_ref()
            .ok_or_else(|| ModelError::Input("DeepONet needs trunk coordinates".into()))?;
        let (bs, ts) = (batch.inputs.shape(), trunk.shape());
        if bs.len() != 2 || bs[1] != self.cfg.branch_in || ts.len() != 2 || ts[1] != self.cfg.trunk_in {
            return Err(ModelError::Input(format!(
                "expected branch [N, {}] and trunk [L, {}], got {bs:?} and {ts:?}",
                self.cfg.branch_in, self.cfg.trunk_in
            )));
        }
        let layers = self.cfg.depth + 1;
        let b = g.constant(&batch.inputs);
        let t = g.constant(trunk);
        let c = mlp(g, b, p, "branch", layers)?;
        let xi = mlp(g, t, p, "trunk", layers)?;
        let xi_t = g.swap_leading(xi)?;
        let h = g.matmul(c, xi_t)?;
        Ok(g.add_scalar(h, p.get("bias")?)?)
    }
}
