//! Dynamically recorded computation tape with reverse-mode accumulation.
//!
//! A [`Graph`] is built fresh for every forward pass. Each op computes its
//! value eagerly and records enough structure to replay the chain rule.
//! [`Graph::backward`] consumes the tape: intermediate values are released and
//! a second call fails with [`KernelError::TapeConsumed`].

use std::collections::HashMap;
use std::sync::Arc;

use super::linalg::{col2im, im2col, matmul, Mat, Window};
use super::spectral::{self, Twiddles};
use super::tensor::numel;
use super::{KernelError, Real, Tensor};

/// Handle to a node on a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<T> {
    Leaf,
    Reshape(Var),
    SwapLeading {
        x: Var,
        a: usize,
        b: usize,
    },
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBiasLast(Var, Var),
    AddBiasLead(Var, Var),
    AddScalar(Var, Var),
    Relu(Var),
    Sum(Var),
    SumSquares(Var),
    Sqrt(Var),
    MatMul(Var, Var),
    Conv1d {
        x: Var,
        k: Var,
        w: Window,
        c_out: usize,
    },
    ConvTranspose1d {
        x: Var,
        k: Var,
        w: Window,
        c_in: usize,
    },
    CropLast {
        x: Var,
        len: usize,
        keep: usize,
    },
    Concat(Vec<Var>),
    Rdft {
        x: Var,
        len: usize,
    },
    Irdft {
        x: Var,
        len: usize,
    },
    RdftModes {
        x: Var,
        tw: Arc<Twiddles<T>>,
    },
    IrdftModes {
        x: Var,
        tw: Arc<Twiddles<T>>,
    },
    SpectralMix {
        x: Var,
        w: Var,
        c_in: usize,
        c_out: usize,
        batch: usize,
        modes: usize,
    },
}

struct Node<T> {
    value: Vec<T>,
    shape: Vec<usize>,
    op: Op<T>,
    requires_grad: bool,
}

/// Gradients of a scalar loss with respect to every differentiable leaf.
#[derive(Debug)]
pub struct Gradients<T> {
    grads: HashMap<usize, Tensor<T>>,
}

impl<T: Real> Gradients<T> {
    /// `None` when `var` is not a differentiable leaf of the tape.
    pub fn get(&self, var: Var) -> Option<&Tensor<T>> {
        self.grads.get(&var.0)
    }

    pub fn take(&mut self, var: Var) -> Option<Tensor<T>> {
        self.grads.remove(&var.0)
    }
}

pub struct Graph<T: Real> {
    nodes: Vec<Node<T>>,
    consumed: bool,
    twiddles: HashMap<(usize, usize), Arc<Twiddles<T>>>,
}

impl<T: Real> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

fn same_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<(), KernelError> {
    if a != b {
        return Err(KernelError::Shape {
            op,
            lhs: a.to_vec(),
            rhs: b.to_vec(),
        });
    }
    Ok(())
}

impl<T: Real> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            consumed: false,
            twiddles: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn node(&self, v: Var) -> Result<&Node<T>, KernelError> {
        if self.consumed {
            return Err(KernelError::TapeConsumed);
        }
        self.nodes.get(v.0).ok_or(KernelError::Index {
            op: "var",
            index: v.0,
            extent: self.nodes.len(),
        })
    }

    fn push(&mut self, value: Vec<T>, shape: Vec<usize>, op: Op<T>, requires_grad: bool) -> Var {
        debug_assert_eq!(numel(&shape), value.len());
        self.nodes.push(Node {
            value,
            shape,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    pub fn shape(&self, v: Var) -> Result<&[usize], KernelError> {
        Ok(&self.node(v)?.shape)
    }

    pub fn data(&self, v: Var) -> Result<&[T], KernelError> {
        Ok(&self.node(v)?.value)
    }

    pub fn value(&self, v: Var) -> Result<Tensor<T>, KernelError> {
        let n = self.node(v)?;
        Tensor::new(n.shape.clone(), n.value.clone())
    }

    /// Places a tensor on the tape; differentiable iff `t.requires_grad()`.
    pub fn leaf(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, t.requires_grad())
    }

    /// Places a tensor on the tape as a differentiable parameter.
    pub fn param(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, true)
    }

    pub fn constant(&mut self, t: &Tensor<T>) -> Var {
        self.push(t.data().to_vec(), t.shape().to_vec(), Op::Leaf, false)
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        if numel(shape) != n.value.len() {
            return Err(KernelError::Reshape {
                from: n.shape.clone(),
                to: shape.to_vec(),
            });
        }
        let value = n.value.clone();
        let rg = n.requires_grad;
        Ok(self.push(value, shape.to_vec(), Op::Reshape(x), rg))
    }

    /// Exchanges the two leading axes: `[a, b, ...] -> [b, a, ...]`.
    pub fn swap_leading(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        if n.shape.len() < 2 {
            return Err(KernelError::Rank {
                op: "swap_leading",
                expected: 2,
                shape: n.shape.clone(),
            });
        }
        let (a, b) = (n.shape[0], n.shape[1]);
        let value = swap_leading_data(&n.value, a, b);
        let mut shape = n.shape.clone();
        shape.swap(0, 1);
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::SwapLeading { x, a, b }, rg))
    }

    fn zip_map(
        &mut self,
        op_name: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(T, T) -> T,
        op: Op<T>,
    ) -> Result<Var, KernelError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        same_shape(op_name, &na.shape, &nb.shape)?;
        let value = na.value.iter().zip(&nb.value).map(|(&x, &y)| f(x, y)).collect();
        let shape = na.shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, shape, op, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_map("add", a, b, |x, y| x + y, Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_map("sub", a, b, |x, y| x - y, Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        self.zip_map("mul", a, b, |x, y| x * y, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let st = T::of(s);
        let value = n.value.iter().map(|&v| v * st).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::Scale(x, s), rg))
    }

    /// Broadcasts `b[d]` over the trailing axis of `x[..., d]`.
    pub fn add_bias_last(&mut self, x: Var, b: Var) -> Result<Var, KernelError> {
        let (nx, nb) = (self.node(x)?, self.node(b)?);
        let d = *nx.shape.last().unwrap_or(&0);
        if nb.shape != [d] {
            return Err(KernelError::Shape {
                op: "add_bias_last",
                lhs: nx.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let mut value = nx.value.clone();
        for row in value.chunks_mut(d.max(1)) {
            for (v, &bb) in row.iter_mut().zip(&nb.value) {
                *v += bb;
            }
        }
        let shape = nx.shape.clone();
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, shape, Op::AddBiasLast(x, b), rg))
    }

    /// Broadcasts `b[c]` over everything after the leading axis of `x[c, ...]`.
    pub fn add_bias_lead(&mut self, x: Var, b: Var) -> Result<Var, KernelError> {
        let (nx, nb) = (self.node(x)?, self.node(b)?);
        let c = *nx.shape.first().unwrap_or(&0);
        if nb.shape != [c] {
            return Err(KernelError::Shape {
                op: "add_bias_lead",
                lhs: nx.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let inner = nx.value.len() / c.max(1);
        let mut value = nx.value.clone();
        for (row, &bb) in value.chunks_mut(inner.max(1)).zip(&nb.value) {
            for v in row {
                *v += bb;
            }
        }
        let shape = nx.shape.clone();
        let rg = self.rg(&[x, b]);
        Ok(self.push(value, shape, Op::AddBiasLead(x, b), rg))
    }

    /// Adds a one-element tensor to every entry of `x`.
    pub fn add_scalar(&mut self, x: Var, s: Var) -> Result<Var, KernelError> {
        let (nx, ns) = (self.node(x)?, self.node(s)?);
        if ns.value.len() != 1 {
            return Err(KernelError::Shape {
                op: "add_scalar",
                lhs: nx.shape.clone(),
                rhs: ns.shape.clone(),
            });
        }
        let sv = ns.value[0];
        let value = nx.value.iter().map(|&v| v + sv).collect();
        let shape = nx.shape.clone();
        let rg = self.rg(&[x, s]);
        Ok(self.push(value, shape, Op::AddScalar(x, s), rg))
    }

    /// `max(x, 0)`; the subgradient at zero is zero.
    pub fn relu(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let value = n
            .value
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::Relu(x), rg))
    }

    pub fn sum(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let s = n.value.iter().fold(T::zero(), |acc, &v| acc + v);
        let rg = n.requires_grad;
        Ok(self.push(vec![s], vec![], Op::Sum(x), rg))
    }

    pub fn sum_squares(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let s = n.value.iter().fold(T::zero(), |acc, &v| acc + v * v);
        let rg = n.requires_grad;
        Ok(self.push(vec![s], vec![], Op::SumSquares(x), rg))
    }

    /// Elementwise square root; the gradient at zero is taken as zero.
    pub fn sqrt(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let value = n.value.iter().map(|v| v.sqrt()).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::Sqrt(x), rg))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var, KernelError> {
        let (na, nb) = (self.node(a)?, self.node(b)?);
        if na.shape.len() != 2 || nb.shape.len() != 2 || na.shape[1] != nb.shape[0] {
            return Err(KernelError::Shape {
                op: "matmul",
                lhs: na.shape.clone(),
                rhs: nb.shape.clone(),
            });
        }
        let (m, k, n) = (na.shape[0], na.shape[1], nb.shape[1]);
        let value = matmul(Mat::new(&na.value, m, k), Mat::new(&nb.value, k, n));
        let rg = self.rg(&[a, b]);
        Ok(self.push(value, vec![m, n], Op::MatMul(a, b), rg))
    }

    /// `y = x W + b` over the trailing axis of `x[..., d_in]`.
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var, KernelError> {
        let xs = self.shape(x)?.to_vec();
        let ws = self.shape(w)?.to_vec();
        let bs = self.shape(b)?.to_vec();
        let d_in = *xs.last().unwrap_or(&0);
        if xs.is_empty() || ws.len() != 2 || ws[0] != d_in {
            return Err(KernelError::Shape {
                op: "linear",
                lhs: xs,
                rhs: ws,
            });
        }
        if bs != [ws[1]] {
            return Err(KernelError::Shape {
                op: "linear",
                lhs: ws,
                rhs: bs,
            });
        }
        let rows = numel(&xs) / d_in.max(1);
        let x2 = self.reshape(x, &[rows, d_in])?;
        let y = self.matmul(x2, w)?;
        let y = self.add_bias_last(y, b)?;
        let mut out_shape = xs;
        *out_shape.last_mut().expect("non-empty") = ws[1];
        self.reshape(y, &out_shape)
    }

    /// Pointwise channel mixing `y[o, ...] = sum_i w[o, i] x[i, ...] + b[o]`.
    pub fn channel_mix(&mut self, x: Var, w: Var, b: Option<Var>) -> Result<Var, KernelError> {
        let xs = self.shape(x)?.to_vec();
        let ws = self.shape(w)?.to_vec();
        if xs.is_empty() || ws.len() != 2 || ws[1] != xs[0] {
            return Err(KernelError::Shape {
                op: "channel_mix",
                lhs: xs,
                rhs: ws,
            });
        }
        let inner = numel(&xs[1..]);
        let x2 = self.reshape(x, &[xs[0], inner])?;
        let mut y = self.matmul(w, x2)?;
        if let Some(b) = b {
            y = self.add_bias_lead(y, b)?;
        }
        let mut out_shape = xs;
        out_shape[0] = ws[0];
        self.reshape(y, &out_shape)
    }

    fn batched_ncl(&self, op: &'static str, x: Var) -> Result<(usize, usize, usize), KernelError> {
        let s = self.shape(x)?;
        match *s {
            [c, l] => Ok((c, 1, l)),
            [c, n, l] => Ok((c, n, l)),
            _ => Err(KernelError::Rank {
                op,
                expected: 3,
                shape: s.to_vec(),
            }),
        }
    }

    /// Cross-correlation with zero padding. `x` is `[c_in, L]` or
    /// `[c_in, N, L]`, `k` is `[c_out, c_in, K]`.
    pub fn conv1d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, KernelError> {
        let (ci, batch, len) = self.batched_ncl("conv1d", x)?;
        let ks = self.shape(k)?.to_vec();
        if ks.len() != 3 || ks[1] != ci {
            return Err(KernelError::Shape {
                op: "conv1d",
                lhs: self.shape(x)?.to_vec(),
                rhs: ks,
            });
        }
        let (co, kernel) = (ks[0], ks[2]);
        if stride == 0 || kernel == 0 || len + 2 * pad < kernel {
            return Err(KernelError::Geometry {
                op: "conv1d",
                detail: format!("length {len} padded by {pad} cannot hold kernel {kernel} at stride {stride}"),
            });
        }
        let out_len = (len + 2 * pad - kernel) / stride + 1;
        let w = Window {
            channels: ci,
            batch,
            len,
            kernel,
            stride,
            pad,
            out_len,
        };
        let cols = im2col(&self.nodes[x.0].value, w);
        let value = matmul(
            Mat::new(&self.nodes[k.0].value, co, ci * kernel),
            Mat::new(&cols, ci * kernel, batch * out_len),
        );
        let shape = if self.nodes[x.0].shape.len() == 2 {
            vec![co, out_len]
        } else {
            vec![co, batch, out_len]
        };
        let rg = self.rg(&[x, k]);
        Ok(self.push(value, shape, Op::Conv1d { x, k, w, c_out: co }, rg))
    }

    /// Adjoint of [`Graph::conv1d`] for the same geometry. `k` is
    /// `[c_in, c_out, K]`; output length is `(L-1)*stride - 2*pad + K`.
    pub fn conv_transpose1d(&mut self, x: Var, k: Var, stride: usize, pad: usize) -> Result<Var, KernelError> {
        let (ci, batch, len) = self.batched_ncl("conv_transpose1d", x)?;
        let ks = self.shape(k)?.to_vec();
        if ks.len() != 3 || ks[0] != ci {
            return Err(KernelError::Shape {
                op: "conv_transpose1d",
                lhs: self.shape(x)?.to_vec(),
                rhs: ks,
            });
        }
        let (co, kernel) = (ks[1], ks[2]);
        let full = len.saturating_sub(1) * stride + kernel;
        if stride == 0 || kernel == 0 || len == 0 || full <= 2 * pad {
            return Err(KernelError::Geometry {
                op: "conv_transpose1d",
                detail: format!("length {len}, kernel {kernel}, stride {stride}, pad {pad} give an empty output"),
            });
        }
        let out_len = full - 2 * pad;
        let w = Window {
            channels: co,
            batch,
            len: out_len,
            kernel,
            stride,
            pad,
            out_len: len,
        };
        let cols = matmul(
            Mat::new(&self.nodes[k.0].value, ci, co * kernel).t(),
            Mat::new(&self.nodes[x.0].value, ci, batch * len),
        );
        let mut value = vec![T::zero(); co * batch * out_len];
        col2im(&cols, w, &mut value);
        let shape = if self.nodes[x.0].shape.len() == 2 {
            vec![co, out_len]
        } else {
            vec![co, batch, out_len]
        };
        let rg = self.rg(&[x, k]);
        Ok(self.push(value, shape, Op::ConvTranspose1d { x, k, w, c_in: ci }, rg))
    }

    /// Keeps the first `keep` entries of the trailing axis.
    pub fn crop_last(&mut self, x: Var, keep: usize) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let len = *n.shape.last().unwrap_or(&0);
        if n.shape.is_empty() || keep > len {
            return Err(KernelError::Geometry {
                op: "crop_last",
                detail: format!("cannot keep {keep} of {:?}", n.shape),
            });
        }
        let mut value = Vec::with_capacity(n.value.len() / len.max(1) * keep);
        for row in n.value.chunks(len.max(1)) {
            value.extend_from_slice(&row[..keep]);
        }
        let mut shape = n.shape.clone();
        *shape.last_mut().expect("non-empty") = keep;
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::CropLast { x, len, keep }, rg))
    }

    /// Concatenation along the leading axis.
    pub fn concat(&mut self, parts: &[Var]) -> Result<Var, KernelError> {
        let first = parts.first().ok_or(KernelError::Empty("concat"))?;
        let tail = self.shape(*first)?.get(1..).unwrap_or(&[]).to_vec();
        let mut lead = 0;
        let mut value = Vec::new();
        for &p in parts {
            let n = self.node(p)?;
            if n.shape.is_empty() || n.shape[1..] != tail[..] {
                return Err(KernelError::Shape {
                    op: "concat",
                    lhs: self.shape(*first)?.to_vec(),
                    rhs: n.shape.clone(),
                });
            }
            lead += n.shape[0];
            value.extend_from_slice(&n.value);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        let rg = self.rg(parts);
        Ok(self.push(value, shape, Op::Concat(parts.to_vec()), rg))
    }

    /// Real DFT over the trailing axis: `[..., L] -> [..., 2, L/2+1]`
    /// (planar real/imaginary parts). Unnormalized.
    pub fn rdft(&mut self, x: Var) -> Result<Var, KernelError> {
        let n = self.node(x)?;
        let len = *n.shape.last().unwrap_or(&0);
        if n.shape.is_empty() || len < 2 {
            return Err(KernelError::Geometry {
                op: "rdft",
                detail: format!("signal length must be at least 2, shape {:?}", n.shape),
            });
        }
        let value = spectral::rdft_rows(&n.value, len);
        let mut shape = n.shape[..n.shape.len() - 1].to_vec();
        shape.extend([2, spectral::n_bins(len)]);
        let rg = n.requires_grad;
        Ok(self.push(value, shape, Op::Rdft { x, len }, rg))
    }

    fn spectrum_dims(&self, op: &'static str, x: Var) -> Result<(Vec<usize>, usize), KernelError> {
        let s = self.shape(x)?;
        let r = s.len();
        if r < 2 || s[r - 2] != 2 {
            return Err(KernelError::Rank {
                op,
                expected: 2,
                shape: s.to_vec(),
            });
        }
        Ok((s[..r - 2].to_vec(), s[r - 1]))
    }

    /// Inverse of [`Graph::rdft`] with `1/L` normalization.
    pub fn irdft(&mut self, x: Var, len: usize) -> Result<Var, KernelError> {
        let (lead, bins) = self.spectrum_dims("irdft", x)?;
        if len < 2 || bins != spectral::n_bins(len) {
            return Err(KernelError::Shape {
                op: "irdft",
                lhs: self.shape(x)?.to_vec(),
                rhs: vec![len],
            });
        }
        let value = spectral::irdft_rows(&self.nodes[x.0].value, len);
        let mut shape = lead;
        shape.push(len);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, shape, Op::Irdft { x, len }, rg))
    }

    fn twiddles(&mut self, len: usize, modes: usize) -> Arc<Twiddles<T>> {
        self.twiddles
            .entry((len, modes))
            .or_insert_with(|| Arc::new(Twiddles::new(len, modes)))
            .clone()
    }

    /// Real DFT keeping only bins `0..modes`: `[..., L] -> [..., 2, modes]`.
    pub fn rdft_modes(&mut self, x: Var, modes: usize) -> Result<Var, KernelError> {
        let s = self.shape(x)?.to_vec();
        let len = *s.last().unwrap_or(&0);
        if s.is_empty() || len < 2 {
            return Err(KernelError::Geometry {
                op: "rdft_modes",
                detail: format!("signal length must be at least 2, shape {s:?}"),
            });
        }
        if modes == 0 || modes > spectral::n_bins(len) {
            return Err(KernelError::ModeOverflow {
                modes,
                max: spectral::n_bins(len),
            });
        }
        let tw = self.twiddles(len, modes);
        let rows = numel(&s) / len;
        let value = matmul(
            Mat::new(&self.nodes[x.0].value, rows, len),
            Mat::new(&tw.forward, len, 2 * modes),
        );
        let mut shape = s[..s.len() - 1].to_vec();
        shape.extend([2, modes]);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, shape, Op::RdftModes { x, tw }, rg))
    }

    /// Zero-fills bins `modes..` and applies the normalized inverse DFT.
    pub fn irdft_modes(&mut self, x: Var, len: usize) -> Result<Var, KernelError> {
        let (lead, modes) = self.spectrum_dims("irdft_modes", x)?;
        if len < 2 || modes == 0 || modes > spectral::n_bins(len) {
            return Err(KernelError::ModeOverflow {
                modes,
                max: spectral::n_bins(len.max(2)),
            });
        }
        let tw = self.twiddles(len, modes);
        let rows = numel(&lead);
        let value = matmul(
            Mat::new(&self.nodes[x.0].value, rows, 2 * modes),
            Mat::new(&tw.inverse, 2 * modes, len),
        );
        let mut shape = lead;
        shape.push(len);
        let rg = self.nodes[x.0].requires_grad;
        Ok(self.push(value, shape, Op::IrdftModes { x, tw }, rg))
    }

    /// Per-bin complex channel mixing of truncated spectra.
    /// `x` is `[c_in, N, 2, modes]`, `w` is `[c_out, c_in, 2, modes]`.
    pub fn spectral_mix(&mut self, x: Var, w: Var) -> Result<Var, KernelError> {
        let xs = self.shape(x)?.to_vec();
        let ws = self.shape(w)?.to_vec();
        if xs.len() != 4 || ws.len() != 4 || xs[2] != 2 || ws[2] != 2 || ws[1] != xs[0] || ws[3] != xs[3] {
            return Err(KernelError::Shape {
                op: "spectral_mix",
                lhs: xs,
                rhs: ws,
            });
        }
        let (c_in, batch, modes, c_out) = (xs[0], xs[1], xs[3], ws[0]);
        let value = spectral::mix_forward(
            &self.nodes[x.0].value,
            &self.nodes[w.0].value,
            c_in,
            c_out,
            batch,
            modes,
        );
        let rg = self.rg(&[x, w]);
        Ok(self.push(
            value,
            vec![c_out, batch, 2, modes],
            Op::SpectralMix {
                x,
                w,
                c_in,
                c_out,
                batch,
                modes,
            },
            rg,
        ))
    }

    /// Reverse-mode accumulation from a one-element `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients<T>, KernelError> {
        let shape = self.shape(loss)?.to_vec();
        if numel(&shape) != 1 {
            return Err(KernelError::NonScalarLoss { shape });
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(vec![T::one()]);
        let mut leaves = HashMap::new();
        for id in (0..=loss.0).rev() {
            let Some(g) = grads[id].take() else { continue };
            if !self.nodes[id].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[id].op {
                let t = Tensor::new(self.nodes[id].shape.clone(), g)?;
                leaves.insert(id, t);
            } else {
                self.propagate(id, g, &mut grads);
            }
        }
        // Differentiable leaves that the loss never reached get zeros.
        for (id, n) in self.nodes.iter().enumerate() {
            if matches!(n.op, Op::Leaf) && n.requires_grad && id <= loss.0 {
                leaves.entry(id).or_insert_with(|| Tensor::zeros(&n.shape));
            }
        }
        self.consumed = true;
        for n in &mut self.nodes {
            n.value = Vec::new();
        }
        Ok(Gradients { grads: leaves })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.nodes[v.0].requires_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(&g) {
                    *a += *b;
                }
            }
            slot => *slot = Some(g),
        }
    }

    fn wants(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn val(&self, v: Var) -> &[T] {
        &self.nodes[v.0].value
    }

    fn propagate(&self, id: usize, g: Vec<T>, grads: &mut [Option<Vec<T>>]) {
        match &self.nodes[id].op {
            Op::Leaf => {}
            Op::Reshape(x) => self.accumulate(grads, *x, g),
            Op::SwapLeading { x, a, b } => {
                self.accumulate(grads, *x, swap_leading_data(&g, *b, *a));
            }
            Op::Add(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.clone());
                }
                self.accumulate(grads, *a, g);
            }
            Op::Sub(a, b) => {
                if self.wants(*b) {
                    self.accumulate(grads, *b, g.iter().map(|&v| -v).collect());
                }
                self.accumulate(grads, *a, g);
            }
            Op::Mul(a, b) => {
                if self.wants(*a) {
                    let ga = g.iter().zip(self.val(*b)).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = g.iter().zip(self.val(*a)).map(|(&x, &y)| x * y).collect();
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Scale(x, s) => {
                let st = T::of(*s);
                self.accumulate(grads, *x, g.iter().map(|&v| v * st).collect());
            }
            Op::AddBiasLast(x, b) => {
                if self.wants(*b) {
                    let d = self.val(*b).len();
                    let mut gb = vec![T::zero(); d];
                    for row in g.chunks(d.max(1)) {
                        for (acc, &v) in gb.iter_mut().zip(row) {
                            *acc += v;
                        }
                    }
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *x, g);
            }
            Op::AddBiasLead(x, b) => {
                if self.wants(*b) {
                    let c = self.val(*b).len();
                    let inner = g.len() / c.max(1);
                    let gb = g
                        .chunks(inner.max(1))
                        .map(|row| row.iter().fold(T::zero(), |acc, &v| acc + v))
                        .collect();
                    self.accumulate(grads, *b, gb);
                }
                self.accumulate(grads, *x, g);
            }
            Op::AddScalar(x, s) => {
                if self.wants(*s) {
                    let total = g.iter().fold(T::zero(), |acc, &v| acc + v);
                    self.accumulate(grads, *s, vec![total]);
                }
                self.accumulate(grads, *x, g);
            }
            Op::Relu(x) => {
                let gx = g
                    .iter()
                    .zip(self.val(*x))
                    .map(|(&gv, &xv)| if xv > T::zero() { gv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sum(x) => {
                let n = self.val(*x).len();
                self.accumulate(grads, *x, vec![g[0]; n]);
            }
            Op::SumSquares(x) => {
                let two = T::of(2.0);
                let gx = self.val(*x).iter().map(|&v| two * v * g[0]).collect();
                self.accumulate(grads, *x, gx);
            }
            Op::Sqrt(x) => {
                let y = &self.nodes[id].value;
                let half = T::of(0.5);
                let gx = g
                    .iter()
                    .zip(y)
                    .map(|(&gv, &yv)| if yv > T::zero() { gv * half / yv } else { T::zero() })
                    .collect();
                self.accumulate(grads, *x, gx);
            }
            Op::MatMul(a, b) => {
                let (sa, sb) = (&self.nodes[a.0].shape, &self.nodes[b.0].shape);
                let (m, k, n) = (sa[0], sa[1], sb[1]);
                if self.wants(*a) {
                    let ga = matmul(Mat::new(&g, m, n), Mat::new(self.val(*b), k, n).t());
                    self.accumulate(grads, *a, ga);
                }
                if self.wants(*b) {
                    let gb = matmul(Mat::new(self.val(*a), m, k).t(), Mat::new(&g, m, n));
                    self.accumulate(grads, *b, gb);
                }
            }
            Op::Conv1d { x, k, w, c_out } => {
                let ck = w.channels * w.kernel;
                let cols_w = w.batch * w.out_len;
                if self.wants(*k) {
                    let cols = im2col(self.val(*x), *w);
                    let gk = matmul(Mat::new(&g, *c_out, cols_w), Mat::new(&cols, ck, cols_w).t());
                    self.accumulate(grads, *k, gk);
                }
                if self.wants(*x) {
                    let gcols = matmul(Mat::new(self.val(*k), *c_out, ck).t(), Mat::new(&g, *c_out, cols_w));
                    let mut gx = vec![T::zero(); self.val(*x).len()];
                    col2im(&gcols, *w, &mut gx);
                    self.accumulate(grads, *x, gx);
                }
            }
            Op::ConvTranspose1d { x, k, w, c_in } => {
                let ck = w.channels * w.kernel;
                let cols_w = w.batch * w.out_len;
                let gcols = im2col(&g, *w);
                if self.wants(*x) {
                    let gx = matmul(Mat::new(self.val(*k), *c_in, ck), Mat::new(&gcols, ck, cols_w));
                    self.accumulate(grads, *x, gx);
                }
                if self.wants(*k) {
                    let gk = matmul(Mat::new(self.val(*x), *c_in, cols_w), Mat::new(&gcols, ck, cols_w).t());
                    self.accumulate(grads, *k, gk);
                }
            }
            Op::CropLast { x, len, keep } => {
                let rows = g.len() / (*keep).max(1);
                let mut gx = vec![T::zero(); rows * len];
                for (dst, src) in gx.chunks_mut(*len).zip(g.chunks((*keep).max(1))) {
                    dst[..*keep].copy_from_slice(src);
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.val(*p).len();
                    if self.wants(*p) {
                        self.accumulate(grads, *p, g[off..off + n].to_vec());
                    }
                    off += n;
                }
            }
            Op::Rdft { x, len } => {
                self.accumulate(grads, *x, spectral::rdft_adjoint_rows(&g, *len));
            }
            Op::Irdft { x, len } => {
                self.accumulate(grads, *x, spectral::irdft_adjoint_rows(&g, *len));
            }
            Op::RdftModes { x, tw } => {
                let w = 2 * tw.modes;
                let rows = g.len() / w;
                let gx = matmul(Mat::new(&g, rows, w), Mat::new(&tw.forward, tw.len, w).t());
                self.accumulate(grads, *x, gx);
            }
            Op::IrdftModes { x, tw } => {
                let w = 2 * tw.modes;
                let rows = g.len() / tw.len;
                let gx = matmul(Mat::new(&g, rows, tw.len), Mat::new(&tw.inverse, w, tw.len).t());
                self.accumulate(grads, *x, gx);
            }
            Op::SpectralMix {
                x,
                w,
                c_in,
                c_out,
                batch,
                modes,
            } => {
                let (gx, gw) = spectral::mix_backward(
                    &g,
                    self.val(*x),
                    self.val(*w),
                    *c_in,
                    *c_out,
                    *batch,
                    *modes,
                    self.wants(*x),
                    self.wants(*w),
                );
                if let Some(gx) = gx {
                    self.accumulate(grads, *x, gx);
                }
                if let Some(gw) = gw {
                    self.accumulate(grads, *w, gw);
                }
            }
        }
    }
}

fn swap_leading_data<T: Copy>(src: &[T], a: usize, b: usize) -> Vec<T> {
    let inner = if a * b == 0 { 0 } else { src.len() / (a * b) };
    let mut out = Vec::with_capacity(src.len());
    for j in 0..b {
        for i in 0..a {
            out.extend_from_slice(&src[(i * b + j) * inner..(i * b + j + 1) * inner]);
        }
    }
    out
}
