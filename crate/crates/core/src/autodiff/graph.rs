//! Dynamically recorded computation graph with reverse-mode differentiation.
//!
//! Every forward op appends one node holding its output value. Inputs always
//! precede outputs, so the node list is a topological order and `backward`
//! visits each node once, last to first.

use std::collections::BTreeMap;
use std::str::FromStr;

use super::conv::{self, ConvGeom};
use crate::error::{config_err, dim_err, usage_err, Error, Result};
use crate::linalg::{gemm, MatRef};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Silu,
    /// tanh approximation, cubic coefficient 0.044715.
    Gelu,
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "silu" => Ok(Activation::Silu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(config_err!("unknown activation {:?}", other)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Ewise {
    Add,
    Sub,
    Mul,
}

const GELU_COEF: f64 = 0.044715;
const SQRT_2_OVER_PI: f64 = 0.797_884_560_802_865_4;

#[derive(Debug)]
enum Op<T> {
    Leaf,
    Conv2d {
        input: Var,
        weight: Var,
        bias: Option<Var>,
        geom: ConvGeom,
    },
    LayerNorm {
        input: Var,
        inv_std: Vec<T>,
    },
    Matmul {
        a: Var,
        b: Var,
    },
    Softmax {
        input: Var,
        axis: usize,
    },
    Activation {
        input: Var,
        kind: Activation,
    },
    Recip {
        input: Var,
    },
    Square {
        input: Var,
    },
    Ewise {
        a: Var,
        b: Var,
        kind: Ewise,
    },
    Affine {
        input: Var,
        scale: T,
    },
    Reshape {
        input: Var,
    },
    Transpose {
        input: Var,
    },
    Concat {
        inputs: Vec<Var>,
        axis: usize,
    },
    Narrow {
        input: Var,
        axis: usize,
        start: usize,
    },
    Upsample2x {
        input: Var,
    },
    SpaceToDepth {
        input: Var,
        factor: usize,
    },
    Sum {
        input: Var,
    },
    Mean {
        input: Var,
    },
}

#[derive(Debug)]
struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// A single forward pass worth of recorded operations.
#[derive(Debug)]
pub struct Graph<T: Scalar> {
    nodes: Vec<Node<T>>,
    params: BTreeMap<String, Var>,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients produced by [`Graph::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients<T> {
    grads: Vec<Option<Vec<T>>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, var: Var) -> Option<&[T]> {
        self.grads.get(var.0).and_then(|g| g.as_deref())
    }
}

/// Row-major strides.
fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

/// For every flat index of `a_shape`, the flat index of the element of
/// `b_shape` it reads under right-aligned unidirectional broadcasting.
pub(crate) fn broadcast_offsets(a_shape: &[usize], b_shape: &[usize]) -> Result<Option<Vec<usize>>> {
    if a_shape == b_shape {
        return Ok(None);
    }
    if b_shape.len() > a_shape.len() {
        return Err(dim_err!("cannot broadcast {:?} into {:?}", b_shape, a_shape));
    }
    let lead = a_shape.len() - b_shape.len();
    let b_strides = strides(b_shape);
    let mut eff = vec![0usize; a_shape.len()];
    for (i, &bd) in b_shape.iter().enumerate() {
        let ad = a_shape[lead + i];
        if bd == ad {
            eff[lead + i] = b_strides[i];
        } else if bd != 1 {
            return Err(dim_err!("cannot broadcast {:?} into {:?}", b_shape, a_shape));
        }
    }
    let n: usize = a_shape.iter().product();
    let mut out = Vec::with_capacity(n);
    let mut idx = vec![0usize; a_shape.len()];
    let mut off = 0usize;
    for _ in 0..n {
        out.push(off);
        for d in (0..a_shape.len()).rev() {
            idx[d] += 1;
            off += eff[d];
            if idx[d] < a_shape[d] {
                break;
            }
            off -= eff[d] * idx[d];
            idx[d] = 0;
        }
    }
    Ok(Some(out))
}

/// Index permutation of space-to-depth on [N,C,H,W]: `perm[out] = in`.
pub(crate) fn space_to_depth_perm(shape: &[usize], f: usize) -> Result<(Vec<usize>, [usize; 4])> {
    if shape.len() != 4 {
        return Err(dim_err!("space-to-depth expects NCHW, got {:?}", shape));
    }
    let (n, c, h, w) = (shape[0], shape[1], shape[2], shape[3]);
    if f == 0 || h % f != 0 || w % f != 0 {
        return Err(config_err!("spatial extents {}x{} not divisible by factor {}", h, w, f));
    }
    let (oh, ow, oc) = (h / f, w / f, c * f * f);
    let mut perm = Vec::with_capacity(n * c * h * w);
    for ni in 0..n {
        for ch in 0..oc {
            let (ci, dy, dx) = (ch / (f * f), (ch / f) % f, ch % f);
            for i in 0..oh {
                for j in 0..ow {
                    perm.push(((ni * c + ci) * h + i * f + dy) * w + j * f + dx);
                }
            }
        }
    }
    Ok((perm, [n, oc, oh, ow]))
}

fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

fn activation_fwd<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Silu => x * sigmoid(x),
        Activation::Gelu => {
            let u = T::of(SQRT_2_OVER_PI) * (x + T::of(GELU_COEF) * x * x * x);
            T::of(0.5) * x * (T::one() + u.tanh())
        }
    }
}

fn activation_grad<T: Scalar>(kind: Activation, x: T) -> T {
    match kind {
        Activation::Silu => {
            let s = sigmoid(x);
            s * (T::one() + x * (T::one() - s))
        }
        Activation::Gelu => {
            let c = T::of(SQRT_2_OVER_PI);
            let k = T::of(GELU_COEF);
            let th = (c * (x + k * x * x * x)).tanh();
            T::of(0.5) * (T::one() + th)
                + T::of(0.5) * x * (T::one() - th * th) * c * (T::one() + T::of(3.0) * k * x * x)
        }
    }
}

/// Split a shape around `axis` into (outer, len, inner) extents.
fn around(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    let outer = shape[..axis].iter().product();
    let inner = shape[axis + 1..].iter().product();
    (outer, shape[axis], inner)
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self {
            nodes: Vec::new(),
            params: BTreeMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// A leaf node. Only leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.push(value, Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// Record a named parameter leaf, reusing the node if already bound.
    pub fn bind_param(&mut self, name: &str, value: &Tensor<T>, requires_grad: bool) -> Var {
        if let Some(&v) = self.params.get(name) {
            return v;
        }
        let v = self.leaf(value.clone(), requires_grad);
        self.params.insert(name.to_string(), v);
        v
    }

    pub fn param_var(&self, name: &str) -> Option<Var> {
        self.params.get(name).copied()
    }

    pub fn bound_params(&self) -> impl Iterator<Item = (&str, Var)> {
        self.params.iter().map(|(k, v)| (k.as_str(), *v))
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.rg(v)
    }

    pub fn conv2d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Option<Var>,
        stride: usize,
        padding: usize,
        groups: usize,
    ) -> Result<Var> {
        let geom = ConvGeom::new(self.shape(input), self.shape(weight), stride, padding, groups)?;
        if let Some(b) = bias {
            if self.shape(b) != [geom.cout] {
                return Err(dim_err!(
                    "conv2d bias {:?} does not match {} output channels",
                    self.shape(b),
                    geom.cout
                ));
            }
        }
        let y = conv::forward(
            &geom,
            self.value(input).data(),
            self.value(weight).data(),
            bias.map(|b| self.value(b).data()),
        );
        let rg = self.rg(input) || self.rg(weight) || bias.is_some_and(|b| self.rg(b));
        let value = Tensor::new(geom.out_shape(), y)?;
        Ok(self.push(
            value,
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            },
            rg,
        ))
    }

    /// Normalize over axis 1 (channels) at every other index; no affine.
    pub fn layer_norm(&mut self, input: Var, eps: f64) -> Result<Var> {
        let x = self.value(input);
        if x.ndim() < 2 {
            return Err(dim_err!("layer_norm needs a channel axis, got {:?}", x.shape()));
        }
        if eps <= 0.0 {
            return Err(config_err!("layer_norm eps must be positive"));
        }
        let (outer, c, inner) = around(x.shape(), 1);
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        let mut inv_std = vec![T::zero(); outer * inner];
        let cf = T::of(c as f64);
        for o in 0..outer {
            for i in 0..inner {
                let at = |ch: usize| o * c * inner + ch * inner + i;
                let mean = (0..c).map(|ch| xd[at(ch)]).sum::<T>() / cf;
                let var = (0..c)
                    .map(|ch| {
                        let d = xd[at(ch)] - mean;
                        d * d
                    })
                    .sum::<T>()
                    / cf;
                let is = T::one() / (var + T::of(eps)).sqrt();
                inv_std[o * inner + i] = is;
                for ch in 0..c {
                    y[at(ch)] = (xd[at(ch)] - mean) * is;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), y)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::LayerNorm { input, inv_std }, rg))
    }

    /// Batched matrix product over the last two axes. Leading axes must be
    /// equal, or one side must be a plain matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa.len() < 2 || sb.len() < 2 {
            return Err(dim_err!("matmul needs ≥2-D operands, got {:?} and {:?}", sa, sb));
        }
        let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
        let (k2, p) = (sb[sb.len() - 2], sb[sb.len() - 1]);
        if k != k2 {
            return Err(dim_err!("matmul inner extents differ: {:?} · {:?}", sa, sb));
        }
        let (la, lb) = (&sa[..sa.len() - 2], &sb[..sb.len() - 2]);
        let lead = if la == lb || lb.is_empty() {
            la.to_vec()
        } else if la.is_empty() {
            lb.to_vec()
        } else {
            return Err(dim_err!("matmul batch extents differ: {:?} · {:?}", sa, sb));
        };
        let batch: usize = lead.iter().product();
        let (step_a, step_b) = (
            if la.is_empty() { 0 } else { m * k },
            if lb.is_empty() { 0 } else { k * p },
        );
        let (ad, bd) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * p];
        for i in 0..batch {
            gemm(
                MatRef::row_major(&ad[i * step_a..][..m * k], m, k),
                MatRef::row_major(&bd[i * step_b..][..k * p], k, p),
                &mut out[i * m * p..][..m * p],
                false,
            );
        }
        let mut shape = lead;
        shape.extend([m, p]);
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Tensor::new(shape, out)?, Op::Matmul { a, b }, rg))
    }

    /// Numerically stable softmax along `axis`.
    pub fn softmax(&mut self, input: Var, axis: usize) -> Result<Var> {
        let x = self.value(input);
        if axis >= x.ndim() {
            return Err(dim_err!("softmax axis {} on {:?}", axis, x.shape()));
        }
        let (outer, len, inner) = around(x.shape(), axis);
        let xd = x.data();
        let mut y = vec![T::zero(); xd.len()];
        for o in 0..outer {
            for i in 0..inner {
                let at = |j: usize| (o * len + j) * inner + i;
                let max = (0..len).map(|j| xd[at(j)]).fold(T::neg_infinity(), T::max);
                let mut total = T::zero();
                for j in 0..len {
                    let e = (xd[at(j)] - max).exp();
                    y[at(j)] = e;
                    total += e;
                }
                for j in 0..len {
                    y[at(j)] /= total;
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), y)?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Softmax { input, axis }, rg))
    }

    pub fn activation(&mut self, input: Var, kind: Activation) -> Var {
        let value = self.value(input).map(|v| activation_fwd(kind, v));
        let rg = self.rg(input);
        self.push(value, Op::Activation { input, kind }, rg)
    }

    pub fn silu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Silu)
    }

    pub fn gelu(&mut self, input: Var) -> Var {
        self.activation(input, Activation::Gelu)
    }

    pub fn recip(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| T::one() / v);
        let rg = self.rg(input);
        self.push(value, Op::Recip { input }, rg)
    }

    pub fn square(&mut self, input: Var) -> Var {
        let value = self.value(input).map(|v| v * v);
        let rg = self.rg(input);
        self.push(value, Op::Square { input }, rg)
    }

    /// Elementwise `a ∘ b`, with `b` broadcast into `a`'s shape.
    pub fn ewise(&mut self, a: Var, b: Var, kind: Ewise) -> Result<Var> {
        let offsets = broadcast_offsets(self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let (ad, bd) = (av.data(), bv.data());
        let f = |x: T, y: T| match kind {
            Ewise::Add => x + y,
            Ewise::Sub => x - y,
            Ewise::Mul => x * y,
        };
        let out: Vec<T> = match &offsets {
            None => ad.iter().zip(bd).map(|(&x, &y)| f(x, y)).collect(),
            Some(off) => ad.iter().zip(off).map(|(&x, &o)| f(x, bd[o])).collect(),
        };
        let value = Tensor::new(av.shape().to_vec(), out)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(value, Op::Ewise { a, b, kind }, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(a, b, Ewise::Add)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(a, b, Ewise::Sub)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.ewise(a, b, Ewise::Mul)
    }

    /// `x · scale + shift`.
    pub fn affine(&mut self, input: Var, scale: f64, shift: f64) -> Var {
        let (s, t) = (T::of(scale), T::of(shift));
        let value = self.value(input).map(|v| v * s + t);
        let rg = self.rg(input);
        self.push(value, Op::Affine { input, scale: s }, rg)
    }

    pub fn scale(&mut self, input: Var, factor: f64) -> Var {
        self.affine(input, factor, 0.0)
    }

    pub fn add_scalar(&mut self, input: Var, shift: f64) -> Var {
        self.affine(input, 1.0, shift)
    }

    pub fn reshape(&mut self, input: Var, shape: &[usize]) -> Result<Var> {
        let value = self.value(input).clone().reshape(shape.to_vec())?;
        let rg = self.rg(input);
        Ok(self.push(value, Op::Reshape { input }, rg))
    }

    /// Swap the last two axes.
    pub fn transpose(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let nd = x.ndim();
        if nd < 2 {
            return Err(dim_err!("transpose needs ≥2-D, got {:?}", x.shape()));
        }
        let (r, c) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let batch = x.numel() / (r * c);
        let xd = x.data();
        let mut out = vec![T::zero(); xd.len()];
        for b in 0..batch {
            let (src, dst) = (&xd[b * r * c..][..r * c], &mut out[b * r * c..][..r * c]);
            for i in 0..r {
                for j in 0..c {
                    dst[j * r + i] = src[i * c + j];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape.swap(nd - 2, nd - 1);
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::Transpose { input }, rg))
    }

    pub fn concat(&mut self, inputs: &[Var], axis: usize) -> Result<Var> {
        let first = *inputs.first().ok_or_else(|| dim_err!("concat of nothing"))?;
        let base = self.shape(first).to_vec();
        if axis >= base.len() {
            return Err(dim_err!("concat axis {} on {:?}", axis, base));
        }
        let mut total = 0;
        for &v in inputs {
            let s = self.shape(v);
            if s.len() != base.len()
                || s.iter().enumerate().any(|(d, &e)| d != axis && e != base[d])
            {
                return Err(dim_err!("concat {:?} with {:?} on axis {}", base, s, axis));
            }
            total += s[axis];
        }
        let (outer, _, inner) = around(&base, axis);
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for &v in inputs {
                let len = self.shape(v)[axis];
                out.extend_from_slice(&self.value(v).data()[o * len * inner..][..len * inner]);
            }
        }
        let mut shape = base;
        shape[axis] = total;
        let rg = inputs.iter().any(|&v| self.rg(v));
        Ok(self.push(
            Tensor::new(shape, out)?,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// `len` entries of `axis` starting at `start`.
    pub fn narrow(&mut self, input: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let x = self.value(input);
        if axis >= x.ndim() || len == 0 || start + len > x.shape()[axis] {
            return Err(dim_err!(
                "narrow({}, {}, {}) on {:?}",
                axis,
                start,
                len,
                x.shape()
            ));
        }
        let (outer, full, inner) = around(x.shape(), axis);
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            out.extend_from_slice(&x.data()[(o * full + start) * inner..][..len * inner]);
        }
        let mut shape = x.shape().to_vec();
        shape[axis] = len;
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::Narrow { input, axis, start }, rg))
    }

    /// Nearest-neighbour ×2 upsampling of the last two axes.
    pub fn upsample2x(&mut self, input: Var) -> Result<Var> {
        let x = self.value(input);
        let nd = x.ndim();
        if nd < 2 {
            return Err(dim_err!("upsample2x needs ≥2-D, got {:?}", x.shape()));
        }
        let (h, w) = (x.shape()[nd - 2], x.shape()[nd - 1]);
        let planes = x.numel() / (h * w);
        let mut out = vec![T::zero(); x.numel() * 4];
        for p in 0..planes {
            let src = &x.data()[p * h * w..][..h * w];
            let dst = &mut out[p * 4 * h * w..][..4 * h * w];
            for i in 0..2 * h {
                for j in 0..2 * w {
                    dst[i * 2 * w + j] = src[(i / 2) * w + j / 2];
                }
            }
        }
        let mut shape = x.shape().to_vec();
        shape[nd - 2] *= 2;
        shape[nd - 1] *= 2;
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::Upsample2x { input }, rg))
    }

    pub fn space_to_depth(&mut self, input: Var, factor: usize) -> Result<Var> {
        let (perm, shape) = space_to_depth_perm(self.shape(input), factor)?;
        let xd = self.value(input).data();
        let out = perm.iter().map(|&i| xd[i]).collect();
        let rg = self.rg(input);
        Ok(self.push(Tensor::new(shape, out)?, Op::SpaceToDepth { input, factor }, rg))
    }

    pub fn sum(&mut self, input: Var) -> Var {
        let s = self.value(input).sum();
        let rg = self.rg(input);
        self.push(Tensor::scalar(s), Op::Sum { input }, rg)
    }

    pub fn mean(&mut self, input: Var) -> Var {
        let x = self.value(input);
        let m = x.sum() / T::of(x.numel() as f64);
        let rg = self.rg(input);
        self.push(Tensor::scalar(m), Op::Mean { input }, rg)
    }

    /// Mean of squared differences.
    pub fn mse(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(dim_err!(
                "mse operands differ: {:?} vs {:?}",
                self.shape(a),
                self.shape(b)
            ));
        }
        let d = self.sub(a, b)?;
        let sq = self.square(d);
        Ok(self.mean(sq))
    }

    /// Reverse-mode sweep from a single-element `loss`.
    pub fn backward(&self, loss: Var) -> Result<Gradients<T>> {
        if self.value(loss).numel() != 1 {
            return Err(usage_err!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape(loss)
            ));
        }
        let mut grads: Vec<Option<Vec<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        if !self.rg(loss) {
            return Ok(Gradients { grads });
        }
        grads[loss.0] = Some(vec![T::one()]);
        for id in (0..=loss.0).rev() {
            let node = &self.nodes[id];
            if !node.requires_grad || matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(dy) = grads[id].take() else { continue };
            self.backprop_node(node, &dy, &mut grads)?;
        }
        // Interior grads were consumed above; only leaf grads remain.
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Vec<T>>], v: Var, g: Vec<T>) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g),
        }
    }

    fn backprop_node(&self, node: &Node<T>, dy: &[T], grads: &mut [Option<Vec<T>>]) -> Result<()> {
        let y = node.value.data();
        match &node.op {
            Op::Leaf => {}
            Op::Conv2d {
                input,
                weight,
                bias,
                geom,
            } => {
                let need = (
                    self.rg(*input),
                    self.rg(*weight),
                    bias.is_some_and(|b| self.rg(b)),
                );
                let g = conv::backward(
                    geom,
                    self.value(*input).data(),
                    self.value(*weight).data(),
                    dy,
                    need,
                );
                if let Some(dx) = g.input {
                    self.accumulate(grads, *input, dx);
                }
                if let Some(dw) = g.weight {
                    self.accumulate(grads, *weight, dw);
                }
                if let (Some(b), Some(db)) = (bias, g.bias) {
                    self.accumulate(grads, *b, db);
                }
            }
            Op::LayerNorm { input, inv_std } => {
                let (outer, c, inner) = around(node.value.shape(), 1);
                let cf = T::of(c as f64);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |ch: usize| o * c * inner + ch * inner + i;
                        let mean_dy = (0..c).map(|ch| dy[at(ch)]).sum::<T>() / cf;
                        let mean_dyy = (0..c).map(|ch| dy[at(ch)] * y[at(ch)]).sum::<T>() / cf;
                        let is = inv_std[o * inner + i];
                        for ch in 0..c {
                            dx[at(ch)] = is * (dy[at(ch)] - mean_dy - y[at(ch)] * mean_dyy);
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Matmul { a, b } => {
                let (sa, sb) = (self.shape(*a), self.shape(*b));
                let (m, k) = (sa[sa.len() - 2], sa[sa.len() - 1]);
                let p = sb[sb.len() - 1];
                let (step_a, step_b) = (
                    if sa.len() == 2 { 0 } else { m * k },
                    if sb.len() == 2 { 0 } else { k * p },
                );
                let batch = y.len() / (m * p);
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                if self.rg(*a) {
                    let mut da = vec![T::zero(); ad.len()];
                    for i in 0..batch {
                        gemm(
                            MatRef::row_major(&dy[i * m * p..][..m * p], m, p),
                            MatRef::row_major(&bd[i * step_b..][..k * p], k, p).t(),
                            &mut da[i * step_a..][..m * k],
                            true,
                        );
                    }
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); bd.len()];
                    for i in 0..batch {
                        gemm(
                            MatRef::row_major(&ad[i * step_a..][..m * k], m, k).t(),
                            MatRef::row_major(&dy[i * m * p..][..m * p], m, p),
                            &mut db[i * step_b..][..k * p],
                            true,
                        );
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Softmax { input, axis } => {
                let (outer, len, inner) = around(node.value.shape(), *axis);
                let mut dx = vec![T::zero(); y.len()];
                for o in 0..outer {
                    for i in 0..inner {
                        let at = |j: usize| (o * len + j) * inner + i;
                        let dot = (0..len).map(|j| dy[at(j)] * y[at(j)]).sum::<T>();
                        for j in 0..len {
                            dx[at(j)] = y[at(j)] * (dy[at(j)] - dot);
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Activation { input, kind } => {
                let x = self.value(*input).data();
                let dx = x
                    .iter()
                    .zip(dy)
                    .map(|(&xv, &d)| d * activation_grad(*kind, xv))
                    .collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Recip { input } => {
                let dx = y.iter().zip(dy).map(|(&r, &d)| -d * r * r).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Square { input } => {
                let x = self.value(*input).data();
                let dx = x.iter().zip(dy).map(|(&xv, &d)| T::of(2.0) * xv * d).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Ewise { a, b, kind } => {
                let offsets = broadcast_offsets(self.shape(*a), self.shape(*b))?;
                let (ad, bd) = (self.value(*a).data(), self.value(*b).data());
                let b_at = |i: usize| offsets.as_ref().map_or(i, |o| o[i]);
                if self.rg(*a) {
                    let da = match kind {
                        Ewise::Add | Ewise::Sub => dy.to_vec(),
                        Ewise::Mul => dy.iter().enumerate().map(|(i, &d)| d * bd[b_at(i)]).collect(),
                    };
                    self.accumulate(grads, *a, da);
                }
                if self.rg(*b) {
                    let mut db = vec![T::zero(); bd.len()];
                    for (i, &d) in dy.iter().enumerate() {
                        db[b_at(i)] += match kind {
                            Ewise::Add => d,
                            Ewise::Sub => -d,
                            Ewise::Mul => d * ad[i],
                        };
                    }
                    self.accumulate(grads, *b, db);
                }
            }
            Op::Affine { input, scale } => {
                let dx = dy.iter().map(|&d| d * *scale).collect();
                self.accumulate(grads, *input, dx);
            }
            Op::Reshape { input } => self.accumulate(grads, *input, dy.to_vec()),
            Op::Transpose { input } => {
                let s = node.value.shape();
                let (r, c) = (s[s.len() - 2], s[s.len() - 1]);
                let batch = y.len() / (r * c);
                let mut dx = vec![T::zero(); y.len()];
                for bi in 0..batch {
                    for i in 0..r {
                        for j in 0..c {
                            dx[bi * r * c + j * r + i] = dy[bi * r * c + i * c + j];
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Concat { inputs, axis } => {
                let (outer, total, inner) = around(node.value.shape(), *axis);
                let mut at = 0;
                for &v in inputs {
                    let len = self.shape(v)[*axis];
                    if self.rg(v) {
                        let mut dx = Vec::with_capacity(outer * len * inner);
                        for o in 0..outer {
                            dx.extend_from_slice(&dy[(o * total + at) * inner..][..len * inner]);
                        }
                        self.accumulate(grads, v, dx);
                    }
                    at += len;
                }
            }
            Op::Narrow { input, axis, start } => {
                let (outer, full, inner) = around(self.shape(*input), *axis);
                let len = node.value.shape()[*axis];
                let mut dx = vec![T::zero(); outer * full * inner];
                for o in 0..outer {
                    dx[(o * full + start) * inner..][..len * inner]
                        .copy_from_slice(&dy[o * len * inner..][..len * inner]);
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Upsample2x { input } => {
                let s = self.shape(*input);
                let (h, w) = (s[s.len() - 2], s[s.len() - 1]);
                let planes = y.len() / (4 * h * w);
                let mut dx = vec![T::zero(); y.len() / 4];
                for p in 0..planes {
                    for i in 0..2 * h {
                        for j in 0..2 * w {
                            dx[p * h * w + (i / 2) * w + j / 2] += dy[p * 4 * h * w + i * 2 * w + j];
                        }
                    }
                }
                self.accumulate(grads, *input, dx);
            }
            Op::SpaceToDepth { input, factor } => {
                let (perm, _) = space_to_depth_perm(self.shape(*input), *factor)?;
                let mut dx = vec![T::zero(); y.len()];
                for (o, &i) in perm.iter().enumerate() {
                    dx[i] = dy[o];
                }
                self.accumulate(grads, *input, dx);
            }
            Op::Sum { input } => {
                let n = self.value(*input).numel();
                self.accumulate(grads, *input, vec![dy[0]; n]);
            }
            Op::Mean { input } => {
                let n = self.value(*input).numel();
                let g = dy[0] / T::of(n as f64);
                self.accumulate(grads, *input, vec![g; n]);
            }
        }
        Ok(())
    }
}
