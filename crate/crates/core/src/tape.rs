//! Reverse-mode automatic differentiation over small dense tensors.
//!
//! A [`Tape`] records every operation as a node holding its forward value.
//! [`Tape::backward`] walks the nodes in reverse and returns the gradient of a
//! scalar root with respect to every node that needs one. Images are `[C, H, W]`
//! tensors; complex planes are `[2, H, W]` tensors with the real part in channel
//! 0 and the imaginary part in channel 1.
//!
//! Ops that are deliberately not differentiated in the usual sense:
//! - [`Tape::straight_through`] applies a forward map and passes the gradient
//!   through unchanged (used for the output clamp and for phase wrapping).
//! - [`Tape::weighted_logsumexp`] treats its weights as constants.

use alloc::collections::BTreeMap;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::fft::fft2_inplace;
use crate::math;
use crate::params::ParameterSet;
use crate::{Error, Result};

/// A dense row-major tensor of `f64`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len(), "tensor shape/data mismatch");
        Self { shape, data }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self { shape, data: vec![0.0; n] }
    }

    pub fn scalar(v: f64) -> Self {
        Self { shape: vec![1], data: vec![v] }
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// `(C, H, W)` view of a rank-3 tensor.
    pub fn chw(&self) -> (usize, usize, usize) {
        match self.shape.as_slice() {
            [c, h, w] => (*c, *h, *w),
            s => panic!("expected a [C, H, W] tensor, got {s:?}"),
        }
    }
}

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Div(Var, Var),
    Scale(Var, f64),
    Offset(Var),
    Exp(Var),
    Ln(Var),
    Sqrt(Var),
    Abs(Var),
    Square(Var),
    Sigmoid(Var),
    Tanh(Var),
    LeakyRelu(Var, f64),
    Sum(Var),
    Mean(Var),
    AddScalar(Var, Var),
    MulScalar(Var, Var),
    Conv2d { x: Var, w: Var, b: Option<Var>, k: usize },
    AvgPool2(Var),
    Upsample2(Var),
    AdaptiveAvgPool { x: Var, gh: usize, gw: usize },
    Concat(Vec<Var>),
    Slice { x: Var, start: usize },
    Reshape(Var),
    ChannelMix { x: Var, matrix: Vec<f64>, inputs: usize },
    StraightThrough(Var),
    Clamp(Var, f64, f64),
    Dft2 { x: Var, inverse: bool },
    Amplitude(Var),
    Phase(Var),
    Polar(Var, Var),
    ChannelScale(Var, Var),
    GlobalAvgPool(Var),
    MatVec(Var, Var),
    Gather { x: Var, idx: Vec<usize> },
    WeightedLse { x: Var, w: Vec<f64> },
}

#[derive(Debug, Clone)]
struct Node {
    value: Tensor,
    op: Op,
    needs_grad: bool,
}

/// Records a computation for reverse-mode differentiation.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: BTreeMap<String, Var>,
}

/// Gradients produced by [`Tape::backward`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
}

impl Gradients {
    /// Gradient of the root with respect to `v`, if `v` influenced the root
    /// and was marked as needing a gradient.
    pub fn wrt(&self, v: Var) -> Option<&[f64]> {
        self.grads.get(v.0).and_then(|g| g.as_deref())
    }

    /// Gradients of every parameter used on `tape`, keyed by parameter name.
    pub fn params(&self, tape: &Tape) -> BTreeMap<String, Vec<f64>> {
        let mut out = BTreeMap::new();
        for (name, v) in &tape.params {
            let g = match self.wrt(*v) {
                Some(g) => g.to_vec(),
                None => vec![0.0; tape.value(*v).len()],
            };
            out.insert(name.clone(), g);
        }
        out
    }
}

fn same_len(a: &Tensor, b: &Tensor) {
    assert_eq!(a.len(), b.len(), "elementwise op on tensors of shapes {:?} and {:?}", a.shape, b.shape);
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn scalar_value(&self, v: Var) -> f64 {
        self.nodes[v.0].value.data[0]
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.nodes[v.0].value.shape
    }

    fn push(&mut self, value: Tensor, op: Op, inputs: &[Var]) -> Var {
        let needs_grad = inputs.iter().any(|v| self.nodes[v.0].needs_grad);
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    /// A constant input; no gradient is tracked for it.
    pub fn constant(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// An input whose gradient is wanted.
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, needs_grad: true });
        Var(self.nodes.len() - 1)
    }

    /// The leaf bound to parameter `name` of `set`. Repeated requests for the
    /// same name return the same leaf, so its gradient accumulates all uses.
    pub fn param(&mut self, set: &ParameterSet, name: &str) -> Result<Var> {
        if let Some(v) = self.params.get(name) {
            return Ok(*v);
        }
        let p = set.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))?;
        let v = self.leaf(Tensor::new(p.shape().to_vec(), p.values().to_vec()));
        self.params.insert(name.to_string(), v);
        Ok(v)
    }

    /// Parameters referenced so far, by name.
    pub fn param_vars(&self) -> &BTreeMap<String, Var> {
        &self.params
    }

    fn map(&mut self, a: Var, op: Op, f: impl Fn(f64) -> f64) -> Var {
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|&x| f(x)).collect() };
        self.push(value, op, &[a])
    }

    fn zip(&mut self, a: Var, b: Var, op: Op, f: impl Fn(f64, f64) -> f64) -> Var {
        let (ta, tb) = (&self.nodes[a.0].value, &self.nodes[b.0].value);
        same_len(ta, tb);
        let data = ta.data.iter().zip(&tb.data).map(|(&x, &y)| f(x, y)).collect();
        let value = Tensor { shape: ta.shape.clone(), data };
        self.push(value, op, &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Add(a, b), |x, y| x + y)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Sub(a, b), |x, y| x - y)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Mul(a, b), |x, y| x * y)
    }

    pub fn div(&mut self, a: Var, b: Var) -> Var {
        self.zip(a, b, Op::Div(a, b), |x, y| x / y)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Scale(a, k), |x| k * x)
    }

    pub fn offset(&mut self, a: Var, k: f64) -> Var {
        self.map(a, Op::Offset(a), |x| x + k)
    }

    pub fn exp(&mut self, a: Var) -> Var {
        self.map(a, Op::Exp(a), math::exp)
    }

    pub fn ln(&mut self, a: Var) -> Var {
        self.map(a, Op::Ln(a), math::ln)
    }

    pub fn sqrt(&mut self, a: Var) -> Var {
        self.map(a, Op::Sqrt(a), math::sqrt)
    }

    pub fn abs(&mut self, a: Var) -> Var {
        self.map(a, Op::Abs(a), f64::abs)
    }

    pub fn square(&mut self, a: Var) -> Var {
        self.map(a, Op::Square(a), |x| x * x)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, Op::Sigmoid(a), math::sigmoid)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, Op::Tanh(a), math::tanh)
    }

    /// Leaky rectifier; `slope = 0` gives a plain ReLU.
    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(a, Op::LeakyRelu(a, slope), move |x| if x > 0.0 { x } else { slope * x })
    }

    /// Forward `f`, identity backward.
    pub fn straight_through(&mut self, a: Var, f: impl Fn(f64) -> f64) -> Var {
        self.map(a, Op::StraightThrough(a), f)
    }

    /// Clamp to `[lo, hi]`; the gradient is zero where the input is outside.
    pub fn clamp(&mut self, a: Var, lo: f64, hi: f64) -> Var {
        self.map(a, Op::Clamp(a, lo, hi), move |x| x.clamp(lo, hi))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.nodes[a.0].value.data.iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(a), &[a])
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let t = &self.nodes[a.0].value;
        let s = t.data.iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(a), &[a])
    }

    /// `a + s` with `s` a one-element tensor.
    pub fn add_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.nodes[s.0].value.data[0];
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|x| x + k).collect() };
        self.push(value, Op::AddScalar(a, s), &[a, s])
    }

    /// `a * s` with `s` a one-element tensor.
    pub fn mul_scalar(&mut self, a: Var, s: Var) -> Var {
        let k = self.nodes[s.0].value.data[0];
        let t = &self.nodes[a.0].value;
        let value = Tensor { shape: t.shape.clone(), data: t.data.iter().map(|x| x * k).collect() };
        self.push(value, Op::MulScalar(a, s), &[a, s])
    }

    /// Zero-padded "same" convolution of `x: [Ci, H, W]` with `w: [Co, Ci, k, k]`
    /// (odd `k`) and optional bias `b: [Co]`.
    pub fn conv2d(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let (ci, h, wd) = self.nodes[x.0].value.chw();
        let ws = &self.nodes[w.0].value.shape;
        assert_eq!(ws.len(), 4, "conv weight must be [Co, Ci, k, k]");
        let (co, k) = (ws[0], ws[2]);
        assert_eq!(ws[1], ci, "conv input channels");
        assert_eq!(ws[3], k);
        assert!(k % 2 == 1, "conv kernel must be odd");
        let input = &self.nodes[x.0].value.data;
        let weight = &self.nodes[w.0].value.data;
        let hw = h * wd;
        let mut out = vec![0.0; co * hw];
        if let Some(b) = b {
            let bias = &self.nodes[b.0].value.data;
            assert_eq!(bias.len(), co);
            for o in 0..co {
                out[o * hw..(o + 1) * hw].fill(bias[o]);
            }
        }
        conv_forward(input, weight, &mut out, ci, co, h, wd, k);
        let mut inputs = vec![x, w];
        inputs.extend(b);
        self.push(Tensor::new(vec![co, h, wd], out), Op::Conv2d { x, w, b, k }, &inputs)
    }

    /// 2x2 average pooling; `H` and `W` must be even.
    pub fn avg_pool2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        assert!(h % 2 == 0 && w % 2 == 0, "avg_pool2 needs even dims, got {h}x{w}");
        let (oh, ow) = (h / 2, w / 2);
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    let base = ch * h * w + 2 * y * w + 2 * xx;
                    out[ch * oh * ow + y * ow + xx] =
                        0.25 * (src[base] + src[base + 1] + src[base + w] + src[base + w + 1]);
                }
            }
        }
        self.push(Tensor::new(vec![c, oh, ow], out), Op::AvgPool2(x), &[x])
    }

    /// Nearest-neighbour 2x upsampling.
    pub fn upsample2(&mut self, x: Var) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        let (oh, ow) = (2 * h, 2 * w);
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; c * oh * ow];
        for ch in 0..c {
            for y in 0..oh {
                for xx in 0..ow {
                    out[ch * oh * ow + y * ow + xx] = src[ch * h * w + (y / 2) * w + xx / 2];
                }
            }
        }
        self.push(Tensor::new(vec![c, oh, ow], out), Op::Upsample2(x), &[x])
    }

    /// Block averages over a `gh x gw` grid (block edges at `floor(i * H / gh)`).
    pub fn adaptive_avg_pool(&mut self, x: Var, gh: usize, gw: usize) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        assert!(h >= gh && w >= gw, "adaptive pool grid larger than input");
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; c * gh * gw];
        for ch in 0..c {
            for by in 0..gh {
                let (y0, y1) = (by * h / gh, (by + 1) * h / gh);
                for bx in 0..gw {
                    let (x0, x1) = (bx * w / gw, (bx + 1) * w / gw);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        for xx in x0..x1 {
                            s += src[ch * h * w + y * w + xx];
                        }
                    }
                    out[ch * gh * gw + by * gw + bx] = s / ((y1 - y0) * (x1 - x0)) as f64;
                }
            }
        }
        self.push(Tensor::new(vec![c, gh, gw], out), Op::AdaptiveAvgPool { x, gh, gw }, &[x])
    }

    /// Concatenation along the leading dimension.
    pub fn concat(&mut self, parts: &[Var]) -> Var {
        assert!(!parts.is_empty());
        let tail: Vec<usize> = self.nodes[parts[0].0].value.shape[1..].to_vec();
        let mut lead = 0;
        let mut data = Vec::new();
        for p in parts {
            let t = &self.nodes[p.0].value;
            assert_eq!(&t.shape[1..], tail.as_slice(), "concat trailing dims differ");
            lead += t.shape[0];
            data.extend_from_slice(&t.data);
        }
        let mut shape = vec![lead];
        shape.extend(tail);
        self.push(Tensor::new(shape, data), Op::Concat(parts.to_vec()), parts)
    }

    /// `len` entries of the leading dimension starting at `start`.
    pub fn slice(&mut self, x: Var, start: usize, len: usize) -> Var {
        let t = &self.nodes[x.0].value;
        assert!(start + len <= t.shape[0], "slice out of range");
        let inner: usize = t.shape[1..].iter().product();
        let data = t.data[start * inner..(start + len) * inner].to_vec();
        let mut shape = t.shape.clone();
        shape[0] = len;
        self.push(Tensor::new(shape, data), Op::Slice { x, start }, &[x])
    }

    pub fn reshape(&mut self, x: Var, shape: Vec<usize>) -> Var {
        let t = &self.nodes[x.0].value;
        let value = Tensor::new(shape, t.data.clone());
        self.push(value, Op::Reshape(x), &[x])
    }

    /// Per-pixel affine channel mix with constant coefficients:
    /// `out[o] = sum_i matrix[o * inputs + i] * x[i] + offset[o]`.
    pub fn channel_mix(&mut self, x: Var, matrix: &[f64], offset: &[f64]) -> Var {
        let (ci, h, w) = self.nodes[x.0].value.chw();
        let co = offset.len();
        assert_eq!(matrix.len(), co * ci);
        let hw = h * w;
        let src = &self.nodes[x.0].value.data;
        let mut out = vec![0.0; co * hw];
        for o in 0..co {
            let dst = &mut out[o * hw..(o + 1) * hw];
            dst.fill(offset[o]);
            for i in 0..ci {
                let m = matrix[o * ci + i];
                if m != 0.0 {
                    for (d, s) in dst.iter_mut().zip(&src[i * hw..(i + 1) * hw]) {
                        *d += m * s;
                    }
                }
            }
        }
        let op = Op::ChannelMix { x, matrix: matrix.to_vec(), inputs: ci };
        self.push(Tensor::new(vec![co, h, w], out), op, &[x])
    }

    /// 2-D DFT of a complex `[2, H, W]` tensor. The forward transform is
    /// unnormalized; the inverse carries the `1 / (H W)` factor.
    pub fn dft2(&mut self, x: Var, inverse: bool) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        assert_eq!(c, 2, "dft2 expects a [2, H, W] complex tensor");
        let n = h * w;
        let mut data = self.nodes[x.0].value.data.clone();
        let (re, im) = data.split_at_mut(n);
        fft2_inplace(h, w, re, im, inverse);
        if inverse {
            let s = 1.0 / n as f64;
            data.iter_mut().for_each(|v| *v *= s);
        }
        self.push(Tensor::new(vec![2, h, w], data), Op::Dft2 { x, inverse }, &[x])
    }

    /// Modulus of a complex `[2, H, W]` tensor, as `[1, H, W]`.
    pub fn amplitude(&mut self, z: Var) -> Var {
        let (_, h, w) = self.nodes[z.0].value.chw();
        let n = h * w;
        let d = &self.nodes[z.0].value.data;
        let out = (0..n).map(|i| math::sqrt(d[i] * d[i] + d[n + i] * d[n + i])).collect();
        self.push(Tensor::new(vec![1, h, w], out), Op::Amplitude(z), &[z])
    }

    /// Argument of a complex `[2, H, W]` tensor in (-pi, pi], as `[1, H, W]`.
    pub fn phase(&mut self, z: Var) -> Var {
        let (_, h, w) = self.nodes[z.0].value.chw();
        let n = h * w;
        let d = &self.nodes[z.0].value.data;
        let out = (0..n).map(|i| math::atan2(d[n + i], d[i])).collect();
        self.push(Tensor::new(vec![1, h, w], out), Op::Phase(z), &[z])
    }

    /// `amp * exp(i * phase)` as a `[2, H, W]` complex tensor.
    pub fn polar(&mut self, amp: Var, phase: Var) -> Var {
        let (_, h, w) = self.nodes[amp.0].value.chw();
        let n = h * w;
        let a = &self.nodes[amp.0].value.data;
        let p = &self.nodes[phase.0].value.data;
        assert_eq!(p.len(), n);
        let mut out = vec![0.0; 2 * n];
        for i in 0..n {
            out[i] = a[i] * math::cos(p[i]);
            out[n + i] = a[i] * math::sin(p[i]);
        }
        self.push(Tensor::new(vec![2, h, w], out), Op::Polar(amp, phase), &[amp, phase])
    }

    /// Real `[1, H, W]` plane as a complex `[2, H, W]` tensor.
    pub fn to_complex(&mut self, x: Var) -> Var {
        let (_, h, w) = self.nodes[x.0].value.chw();
        let zero = self.constant(Tensor::zeros(vec![1, h, w]));
        self.concat(&[x, zero])
    }

    /// `x[c] * s[c]` for `x: [C, H, W]`, `s: [C]`.
    pub fn channel_scale(&mut self, x: Var, s: Var) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        let sv = &self.nodes[s.0].value.data;
        assert_eq!(sv.len(), c);
        let hw = h * w;
        let src = &self.nodes[x.0].value.data;
        let out = src.iter().enumerate().map(|(i, v)| v * sv[i / hw]).collect();
        self.push(Tensor::new(vec![c, h, w], out), Op::ChannelScale(x, s), &[x, s])
    }

    /// Spatial mean of each channel: `[C, H, W] -> [C]`.
    pub fn global_avg_pool(&mut self, x: Var) -> Var {
        let (c, h, w) = self.nodes[x.0].value.chw();
        let hw = h * w;
        let src = &self.nodes[x.0].value.data;
        let out = (0..c).map(|ch| src[ch * hw..(ch + 1) * hw].iter().sum::<f64>() / hw as f64).collect();
        self.push(Tensor::new(vec![c], out), Op::GlobalAvgPool(x), &[x])
    }

    /// `w: [O, I]` times `x: [I]`.
    pub fn matvec(&mut self, w: Var, x: Var) -> Var {
        let ws = &self.nodes[w.0].value.shape;
        assert_eq!(ws.len(), 2);
        let (o, i) = (ws[0], ws[1]);
        let wm = &self.nodes[w.0].value.data;
        let xv = &self.nodes[x.0].value.data;
        assert_eq!(xv.len(), i);
        let out = (0..o).map(|r| (0..i).map(|c| wm[r * i + c] * xv[c]).sum()).collect();
        self.push(Tensor::new(vec![o], out), Op::MatVec(w, x), &[w, x])
    }

    /// `out[k] = x[idx[k]]`, keeping the shape of `x`.
    pub fn gather(&mut self, x: Var, idx: Vec<usize>) -> Var {
        let t = &self.nodes[x.0].value;
        assert_eq!(idx.len(), t.len());
        let data = idx.iter().map(|&j| t.data[j]).collect();
        let value = Tensor::new(t.shape.clone(), data);
        self.push(value, Op::Gather { x, idx }, &[x])
    }

    /// `ln(sum_j w_j exp(x_j))` with constant positive weights, computed with
    /// the usual max shift.
    pub fn weighted_logsumexp(&mut self, x: Var, weights: &[f64]) -> Var {
        let xv = &self.nodes[x.0].value.data;
        assert_eq!(xv.len(), weights.len());
        let m = xv.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = xv.iter().zip(weights).map(|(v, w)| w * math::exp(v - m)).sum();
        let value = Tensor::scalar(m + math::ln(s));
        self.push(value, Op::WeightedLse { x, w: weights.to_vec() }, &[x])
    }

    /// Gradient of `root` (seeded with ones) with respect to every gradient
    /// leaf. Intermediate gradients are dropped as soon as they are consumed.
    pub fn backward(&self, root: Var) -> Gradients {
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        if !self.nodes[root.0].needs_grad {
            return Gradients { grads };
        }
        grads[root.0] = Some(vec![1.0; self.nodes[root.0].value.len()]);
        for i in (0..=root.0).rev() {
            let node = &self.nodes[i];
            if !node.needs_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(node, &g, &mut grads);
            if matches!(node.op, Op::Leaf) {
                grads[i] = Some(g);
            }
        }
        Gradients { grads }
    }

    fn propagate(&self, node: &Node, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let val = |v: Var| &self.nodes[v.0].value.data;
        let wants = |v: Var| self.nodes[v.0].needs_grad;
        macro_rules! acc {
            ($v:expr, |$d:ident| $body:block) => {{
                let v: Var = $v;
                if wants(v) {
                    let len = self.nodes[v.0].value.len();
                    let $d = grads[v.0].get_or_insert_with(|| vec![0.0; len]);
                    $body
                }
            }};
        }
        let out = &node.value.data;
        match &node.op {
            Op::Leaf => {}
            Op::Add(a, b) => {
                acc!(*a, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += g) });
                acc!(*b, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += g) });
            }
            Op::Sub(a, b) => {
                acc!(*a, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += g) });
                acc!(*b, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d -= g) });
            }
            Op::Mul(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] * bv[k];
                    }
                });
                acc!(*b, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] * av[k];
                    }
                });
            }
            Op::Div(a, b) => {
                let (av, bv) = (val(*a), val(*b));
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] / bv[k];
                    }
                });
                acc!(*b, |d| {
                    for k in 0..g.len() {
                        d[k] -= g[k] * av[k] / (bv[k] * bv[k]);
                    }
                });
            }
            Op::Scale(a, s) => acc!(*a, |d| {
                d.iter_mut().zip(g).for_each(|(d, g)| *d += s * g)
            }),
            Op::Offset(a) | Op::StraightThrough(a) | Op::Reshape(a) => {
                acc!(*a, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += g) })
            }
            Op::Exp(a) => acc!(*a, |d| {
                for k in 0..g.len() {
                    d[k] += g[k] * out[k];
                }
            }),
            Op::Ln(a) => {
                let av = val(*a);
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] / av[k];
                    }
                })
            }
            Op::Sqrt(a) => acc!(*a, |d| {
                for k in 0..g.len() {
                    if out[k] > 0.0 {
                        d[k] += 0.5 * g[k] / out[k];
                    }
                }
            }),
            Op::Abs(a) => {
                let av = val(*a);
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] * sign(av[k]);
                    }
                })
            }
            Op::Square(a) => {
                let av = val(*a);
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += 2.0 * g[k] * av[k];
                    }
                })
            }
            Op::Sigmoid(a) => acc!(*a, |d| {
                for k in 0..g.len() {
                    d[k] += g[k] * out[k] * (1.0 - out[k]);
                }
            }),
            Op::Tanh(a) => acc!(*a, |d| {
                for k in 0..g.len() {
                    d[k] += g[k] * (1.0 - out[k] * out[k]);
                }
            }),
            Op::Clamp(a, lo, hi) => {
                let av = val(*a);
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        if (*lo..=*hi).contains(&av[k]) {
                            d[k] += g[k];
                        }
                    }
                })
            }
            Op::LeakyRelu(a, slope) => {
                let av = val(*a);
                acc!(*a, |d| {
                    for k in 0..g.len() {
                        d[k] += if av[k] > 0.0 { g[k] } else { slope * g[k] };
                    }
                })
            }
            Op::Sum(a) => acc!(*a, |d| { d.iter_mut().for_each(|d| *d += g[0]) }),
            Op::Mean(a) => {
                let n = self.nodes[a.0].value.len() as f64;
                acc!(*a, |d| { d.iter_mut().for_each(|d| *d += g[0] / n) })
            }
            Op::AddScalar(a, s) => {
                acc!(*a, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += g) });
                acc!(*s, |d| { d[0] += g.iter().sum::<f64>() });
            }
            Op::MulScalar(a, s) => {
                let k = val(*s)[0];
                let av = val(*a);
                acc!(*a, |d| { d.iter_mut().zip(g).for_each(|(d, g)| *d += k * g) });
                acc!(*s, |d| { d[0] += g.iter().zip(av).map(|(g, a)| g * a).sum::<f64>() });
            }
            Op::Conv2d { x, w, b, k } => {
                let (ci, h, wd) = self.nodes[x.0].value.chw();
                let co = node.value.shape[0];
                let (xv, wv) = (val(*x), val(*w));
                acc!(*x, |d| { conv_backward_input(g, wv, d, ci, co, h, wd, *k) });
                acc!(*w, |d| { conv_backward_weight(g, xv, d, ci, co, h, wd, *k) });
                if let Some(b) = b {
                    let hw = h * wd;
                    acc!(*b, |d| {
                        for o in 0..co {
                            d[o] += g[o * hw..(o + 1) * hw].iter().sum::<f64>();
                        }
                    });
                }
            }
            Op::AvgPool2(x) => {
                let (c, h, w) = self.nodes[x.0].value.chw();
                let (oh, ow) = (h / 2, w / 2);
                acc!(*x, |d| {
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                let gv = 0.25 * g[ch * oh * ow + y * ow + xx];
                                let base = ch * h * w + 2 * y * w + 2 * xx;
                                d[base] += gv;
                                d[base + 1] += gv;
                                d[base + w] += gv;
                                d[base + w + 1] += gv;
                            }
                        }
                    }
                })
            }
            Op::Upsample2(x) => {
                let (c, h, w) = self.nodes[x.0].value.chw();
                let (oh, ow) = (2 * h, 2 * w);
                acc!(*x, |d| {
                    for ch in 0..c {
                        for y in 0..oh {
                            for xx in 0..ow {
                                d[ch * h * w + (y / 2) * w + xx / 2] += g[ch * oh * ow + y * ow + xx];
                            }
                        }
                    }
                })
            }
            Op::AdaptiveAvgPool { x, gh, gw } => {
                let (c, h, w) = self.nodes[x.0].value.chw();
                let (gh, gw) = (*gh, *gw);
                acc!(*x, |d| {
                    for ch in 0..c {
                        for by in 0..gh {
                            let (y0, y1) = (by * h / gh, (by + 1) * h / gh);
                            for bx in 0..gw {
                                let (x0, x1) = (bx * w / gw, (bx + 1) * w / gw);
                                let gv = g[ch * gh * gw + by * gw + bx] / ((y1 - y0) * (x1 - x0)) as f64;
                                for y in y0..y1 {
                                    for xx in x0..x1 {
                                        d[ch * h * w + y * w + xx] += gv;
                                    }
                                }
                            }
                        }
                    }
                })
            }
            Op::Concat(parts) => {
                let mut off = 0;
                for p in parts {
                    let n = self.nodes[p.0].value.len();
                    acc!(*p, |d| {
                        d.iter_mut().zip(&g[off..off + n]).for_each(|(d, g)| *d += g)
                    });
                    off += n;
                }
            }
            Op::Slice { x, start } => {
                let inner: usize = self.nodes[x.0].value.shape[1..].iter().product();
                let s = start * inner;
                acc!(*x, |d| {
                    d[s..s + g.len()].iter_mut().zip(g).for_each(|(d, g)| *d += g)
                })
            }
            Op::ChannelMix { x, matrix, inputs } => {
                let (ci, h, w) = self.nodes[x.0].value.chw();
                debug_assert_eq!(ci, *inputs);
                let co = node.value.shape[0];
                let hw = h * w;
                acc!(*x, |d| {
                    for o in 0..co {
                        let go = &g[o * hw..(o + 1) * hw];
                        for i in 0..ci {
                            let m = matrix[o * ci + i];
                            if m != 0.0 {
                                for (d, g) in d[i * hw..(i + 1) * hw].iter_mut().zip(go) {
                                    *d += m * g;
                                }
                            }
                        }
                    }
                })
            }
            Op::Dft2 { x, inverse } => {
                let (_, h, w) = node.value.chw();
                let n = h * w;
                // adjoint of the unnormalized forward DFT is the unnormalized
                // inverse DFT, and vice versa
                let mut gd = g.to_vec();
                let (re, im) = gd.split_at_mut(n);
                fft2_inplace(h, w, re, im, !*inverse);
                let s = if *inverse { 1.0 / n as f64 } else { 1.0 };
                acc!(*x, |d| { d.iter_mut().zip(&gd).for_each(|(d, g)| *d += s * g) })
            }
            Op::Amplitude(z) => {
                let zv = val(*z);
                let n = out.len();
                acc!(*z, |d| {
                    for k in 0..n {
                        if out[k] > 0.0 {
                            d[k] += g[k] * zv[k] / out[k];
                            d[n + k] += g[k] * zv[n + k] / out[k];
                        }
                    }
                })
            }
            Op::Phase(z) => {
                let zv = val(*z);
                let n = out.len();
                acc!(*z, |d| {
                    for k in 0..n {
                        let (re, im) = (zv[k], zv[n + k]);
                        let r2 = re * re + im * im;
                        if r2 > 0.0 {
                            d[k] -= g[k] * im / r2;
                            d[n + k] += g[k] * re / r2;
                        }
                    }
                })
            }
            Op::Polar(amp, phase) => {
                let (av, pv) = (val(*amp), val(*phase));
                let n = av.len();
                acc!(*amp, |d| {
                    for k in 0..n {
                        d[k] += g[k] * math::cos(pv[k]) + g[n + k] * math::sin(pv[k]);
                    }
                });
                acc!(*phase, |d| {
                    for k in 0..n {
                        let (c, s) = (math::cos(pv[k]), math::sin(pv[k]));
                        d[k] += av[k] * (-s * g[k] + c * g[n + k]);
                    }
                });
            }
            Op::ChannelScale(x, s) => {
                let (c, h, w) = self.nodes[x.0].value.chw();
                let hw = h * w;
                let (xv, sv) = (val(*x), val(*s));
                acc!(*x, |d| {
                    for k in 0..g.len() {
                        d[k] += g[k] * sv[k / hw];
                    }
                });
                acc!(*s, |d| {
                    for ch in 0..c {
                        let r = ch * hw..(ch + 1) * hw;
                        d[ch] += g[r.clone()].iter().zip(&xv[r]).map(|(g, x)| g * x).sum::<f64>();
                    }
                });
            }
            Op::GlobalAvgPool(x) => {
                let (_, h, w) = self.nodes[x.0].value.chw();
                let hw = h * w;
                acc!(*x, |d| {
                    for (k, dv) in d.iter_mut().enumerate() {
                        *dv += g[k / hw] / hw as f64;
                    }
                })
            }
            Op::MatVec(w, x) => {
                let ws = &self.nodes[w.0].value.shape;
                let (o, i) = (ws[0], ws[1]);
                let (wv, xv) = (val(*w), val(*x));
                acc!(*w, |d| {
                    for r in 0..o {
                        for c in 0..i {
                            d[r * i + c] += g[r] * xv[c];
                        }
                    }
                });
                acc!(*x, |d| {
                    for r in 0..o {
                        for c in 0..i {
                            d[c] += g[r] * wv[r * i + c];
                        }
                    }
                });
            }
            Op::Gather { x, idx } => acc!(*x, |d| {
                for (k, &j) in idx.iter().enumerate() {
                    d[j] += g[k];
                }
            }),
            Op::WeightedLse { x, w } => {
                let xv = val(*x);
                let lse = out[0];
                acc!(*x, |d| {
                    for k in 0..xv.len() {
                        d[k] += g[0] * w[k] * math::exp(xv[k] - lse);
                    }
                })
            }
        }
    }
}

#[inline]
fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}

/// Output row/column range for a kernel tap offset `d` over a length `n` axis.
#[inline]
fn tap_range(d: isize, n: usize) -> (usize, usize) {
    let lo = if d < 0 { (-d) as usize } else { 0 };
    let hi = if d > 0 { n.saturating_sub(d as usize) } else { n };
    (lo, hi.max(lo))
}

#[allow(clippy::too_many_arguments)]
fn conv_forward(input: &[f64], weight: &[f64], out: &mut [f64], ci: usize, co: usize, h: usize, w: usize, k: usize) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for o in 0..co {
        for i in 0..ci {
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weight[((o * ci + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let orow = o * hw + y * w;
                        let irow = (i * hw) as isize + (y as isize + dy) * w as isize + dx;
                        let src = &input[(irow + x0 as isize) as usize..(irow + x1 as isize) as usize];
                        for (d, s) in out[orow + x0..orow + x1].iter_mut().zip(src) {
                            *d += wv * s;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_input(g: &[f64], weight: &[f64], d: &mut [f64], ci: usize, co: usize, h: usize, w: usize, k: usize) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for o in 0..co {
        for i in 0..ci {
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(dx, w);
                    let wv = weight[((o * ci + i) * k + ky) * k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    for y in y0..y1 {
                        let orow = o * hw + y * w;
                        let irow = (i * hw) as isize + (y as isize + dy) * w as isize + dx;
                        let dst = &mut d[(irow + x0 as isize) as usize..(irow + x1 as isize) as usize];
                        for (dv, gv) in dst.iter_mut().zip(&g[orow + x0..orow + x1]) {
                            *dv += wv * gv;
                        }
                    }
                }
            }
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn conv_backward_weight(g: &[f64], input: &[f64], d: &mut [f64], ci: usize, co: usize, h: usize, w: usize, k: usize) {
    let hw = h * w;
    let pad = (k / 2) as isize;
    for o in 0..co {
        for i in 0..ci {
            for ky in 0..k {
                let dy = ky as isize - pad;
                let (y0, y1) = tap_range(dy, h);
                for kx in 0..k {
                    let dx = kx as isize - pad;
                    let (x0, x1) = tap_range(dx, w);
                    let mut s = 0.0;
                    for y in y0..y1 {
                        let orow = o * hw + y * w;
                        let irow = (i * hw) as isize + (y as isize + dy) * w as isize + dx;
                        let src = &input[(irow + x0 as isize) as usize..(irow + x1 as isize) as usize];
                        s += g[orow + x0..orow + x1].iter().zip(src).map(|(a, b)| a * b).sum::<f64>();
                    }
                    d[((o * ci + i) * k + ky) * k + kx] += s;
                }
            }
        }
    }
}
