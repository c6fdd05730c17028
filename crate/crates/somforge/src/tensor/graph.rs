//! Linear tape of primitive applications with reverse-mode differentiation.
//!
//! Nodes are appended in topological order during the forward pass; a
//! backward pass walks the tape exactly once in reverse, accumulating
//! cotangents in fixed order. Nodes not on a path to the loss get zero
//! gradient.

use crate::fft::is_pow2;
use crate::scalar::Scalar;
use crate::tensor::kernels as k;
use crate::tensor::{with_scalar_type, DType, Element, Tensor};
use crate::{Error, Result};

/// Identifier of a node on a [`Graph`] tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct NodeId(pub(crate) usize);

/// The primitive operation set.
///
/// `Conv2d` is stride-1 with zero padding to the same spatial size; odd
/// kernel extents only. Resolution changes go through the explicit
/// `UpsampleNearest2x` / `AvgPool2x` primitives. `Dft2` / `Idft2Real` are the
/// measurement-pipeline transforms; each one's backward pass is the other's
/// forward (the transforms are unitary), which is what ties gradient flow to
/// the analytic adjoint.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    /// inputs: x \[b,cin,h,w\], weight \[cout,cin,kh,kw\]
    Conv2d,
    /// inputs: x \[b,fin\], weight \[fout,fin\]
    Dense,
    /// inputs: x \[b,c,h,w\] or \[b,f\], bias \[c\] / \[f\]
    BiasAdd,
    LeakyRelu { slope: f64 },
    Tanh,
    Softplus,
    /// elementwise sum of two same-shape tensors
    Add,
    /// elementwise (Hadamard) product
    Mul,
    ScaleByConstant { factor: f64 },
    UpsampleNearest2x,
    AvgPool2x,
    PixelNorm { eps: f64 },
    /// mean over all elements -> scalar \[1\]
    ReduceMean,
    /// metadata-only shape change
    Reshape { shape: Vec<usize> },
    /// appends the batch-stddev statistic channel: \[b,c,h,w\] -> \[b,c+1,h,w\]
    MinibatchStddev { eps: f64 },
    /// real image to k-space planes: \[b,1,n,n\] -> \[b,2,n,n\]
    Dft2,
    /// real part of inverse transform: \[b,2,n,n\] -> \[b,1,n,n\]
    Idft2Real,
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Conv2d => "conv2d",
            Op::Dense => "dense",
            Op::BiasAdd => "bias_add",
            Op::LeakyRelu { .. } => "leaky_relu",
            Op::Tanh => "tanh",
            Op::Softplus => "softplus",
            Op::Add => "add",
            Op::Mul => "mul",
            Op::ScaleByConstant { .. } => "scale_by_constant",
            Op::UpsampleNearest2x => "upsample_nearest_2x",
            Op::AvgPool2x => "avgpool_2x",
            Op::PixelNorm { .. } => "pixel_norm",
            Op::ReduceMean => "reduce_mean",
            Op::Reshape { .. } => "reshape",
            Op::MinibatchStddev { .. } => "minibatch_stddev",
            Op::Dft2 => "dft2",
            Op::Idft2Real => "idft2_real",
        }
    }

    fn arity(&self) -> usize {
        match self {
            Op::Conv2d | Op::Dense | Op::BiasAdd | Op::Add | Op::Mul => 2,
            _ => 1,
        }
    }
}

struct Node {
    value: Tensor,
    /// `None` for graph inputs or when recording is disabled.
    provenance: Option<(Op, Vec<NodeId>)>,
}

/// A forward tape. Create one per training step, feed inputs, apply
/// primitives, then call [`Graph::backward`] on a scalar loss node.
pub struct Graph {
    nodes: Vec<Node>,
    recording: bool,
}

impl Default for Graph {
    fn default() -> Self {
        Self::new()
    }
}

impl Graph {
    /// A recording tape: applications are retained for backward.
    pub fn new() -> Self {
        Graph { nodes: Vec::new(), recording: true }
    }

    /// A non-recording tape for inference; backward is unavailable.
    pub fn inference() -> Self {
        Graph { nodes: Vec::new(), recording: false }
    }

    pub fn input(&mut self, value: Tensor) -> NodeId {
        self.nodes.push(Node { value, provenance: None });
        NodeId(self.nodes.len() - 1)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Apply a primitive to existing nodes, record it (when recording), and
    /// return the output node.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if inputs.len() != op.arity() {
            return Err(Error::Shape(format!(
                "{}: expected {} inputs, got {}",
                op.name(),
                op.arity(),
                inputs.len()
            )));
        }
        for id in inputs {
            if id.0 >= self.nodes.len() {
                return Err(Error::Shape(format!("{}: input node out of range", op.name())));
            }
        }
        let value = self.eval(&op, inputs)?;
        self.nodes.push(Node {
            value,
            provenance: if self.recording { Some((op, inputs.to_vec())) } else { None },
        });
        Ok(NodeId(self.nodes.len() - 1))
    }

    fn eval(&self, op: &Op, inputs: &[NodeId]) -> Result<Tensor> {
        let xs: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        if xs.len() == 2 {
            xs[0].same_dtype(xs[1], op.name())?;
        }
        let x = xs[0];
        let dt = x.dtype();

        match op {
            Op::Conv2d => {
                let w = xs[1];
                let (xs_, ws_) = (x.shape(), w.shape());
                if xs_.len() != 4 || ws_.len() != 4 {
                    return Err(shape_err(op, xs_, ws_));
                }
                let (b, cin, h, wd) = (xs_[0], xs_[1], xs_[2], xs_[3]);
                let (cout, wcin, kh, kw) = (ws_[0], ws_[1], ws_[2], ws_[3]);
                if wcin != cin || kh % 2 == 0 || kw % 2 == 0 {
                    return Err(shape_err(op, xs_, ws_));
                }
                Ok(with_scalar_type!(dt, T, {
                    let y = k::conv2d_fwd(T::slice(x), T::slice(w), b, cin, h, wd, cout, kh, kw);
                    T::build(&[b, cout, h, wd], y)
                }))
            }
            Op::Dense => {
                let w = xs[1];
                let (xs_, ws_) = (x.shape(), w.shape());
                if xs_.len() != 2 || ws_.len() != 2 || ws_[1] != xs_[1] {
                    return Err(shape_err(op, xs_, ws_));
                }
                let (b, fin, fout) = (xs_[0], xs_[1], ws_[0]);
                Ok(with_scalar_type!(dt, T, {
                    let y = k::dense_fwd(T::slice(x), T::slice(w), b, fin, fout);
                    T::build(&[b, fout], y)
                }))
            }
            Op::BiasAdd => {
                let bias = xs[1];
                let xs_ = x.shape();
                let ch = match xs_.len() {
                    4 => xs_[1],
                    2 => xs_[1],
                    _ => return Err(shape_err(op, xs_, bias.shape())),
                };
                if bias.shape() != [ch] {
                    return Err(shape_err(op, xs_, bias.shape()));
                }
                let per = if xs_.len() == 4 { xs_[2] * xs_[3] } else { 1 };
                let b = xs_[0];
                Ok(with_scalar_type!(dt, T, {
                    let xd = T::slice(x);
                    let bd = T::slice(bias);
                    let mut y = xd.to_vec();
                    for s in 0..b {
                        for c in 0..ch {
                            let base = (s * ch + c) * per;
                            let bv = bd[c];
                            for v in &mut y[base..base + per] {
                                *v += bv;
                            }
                        }
                    }
                    T::build(xs_, y)
                }))
            }
            Op::LeakyRelu { slope } => Ok(with_scalar_type!(dt, T, {
                let s = T::from_f64(*slope);
                let y: Vec<T> =
                    T::slice(x).iter().map(|&v| if v >= T::ZERO { v } else { v * s }).collect();
                T::build(x.shape(), y)
            })),
            Op::Tanh => Ok(with_scalar_type!(dt, T, {
                let y: Vec<T> = T::slice(x).iter().map(|&v| v.tanh()).collect();
                T::build(x.shape(), y)
            })),
            Op::Softplus => Ok(with_scalar_type!(dt, T, {
                // stable: max(x,0) + ln(1 + exp(-|x|))
                let y: Vec<T> = T::slice(x)
                    .iter()
                    .map(|&v| v.smax(T::ZERO) + (-v.abs()).exp().ln_1p())
                    .collect();
                T::build(x.shape(), y)
            })),
            Op::Add | Op::Mul => {
                let y2 = xs[1];
                if x.shape() != y2.shape() {
                    return Err(shape_err(op, x.shape(), y2.shape()));
                }
                Ok(with_scalar_type!(dt, T, {
                    let a = T::slice(x);
                    let b = T::slice(y2);
                    let y: Vec<T> = if matches!(op, Op::Add) {
                        a.iter().zip(b).map(|(&u, &v)| u + v).collect()
                    } else {
                        a.iter().zip(b).map(|(&u, &v)| u * v).collect()
                    };
                    T::build(x.shape(), y)
                }))
            }
            Op::ScaleByConstant { factor } => Ok(with_scalar_type!(dt, T, {
                let f = T::from_f64(*factor);
                let y: Vec<T> = T::slice(x).iter().map(|&v| v * f).collect();
                T::build(x.shape(), y)
            })),
            Op::UpsampleNearest2x => {
                let s = x.shape();
                if s.len() != 4 {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                Ok(with_scalar_type!(dt, T, {
                    let y = k::upsample2x_fwd(T::slice(x), b * c, h, w);
                    T::build(&[b, c, 2 * h, 2 * w], y)
                }))
            }
            Op::AvgPool2x => {
                let s = x.shape();
                if s.len() != 4 || s[2] % 2 != 0 || s[3] % 2 != 0 {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, c, h, w) = (s[0], s[1], s[2], s[3]);
                Ok(with_scalar_type!(dt, T, {
                    let y = k::avgpool2x_fwd(T::slice(x), b * c, h, w);
                    T::build(&[b, c, h / 2, w / 2], y)
                }))
            }
            Op::PixelNorm { eps } => {
                let s = x.shape();
                if s.len() != 4 {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                Ok(with_scalar_type!(dt, T, {
                    T::build(s, k::pixel_norm_fwd(T::slice(x), b, c, hw, *eps))
                }))
            }
            Op::ReduceMean => Ok(with_scalar_type!(dt, T, {
                let d = T::slice(x);
                let mut acc = T::ZERO;
                for &v in d {
                    acc += v;
                }
                T::build(&[1], vec![acc * T::from_f64(1.0 / d.len() as f64)])
            })),
            Op::Reshape { shape } => {
                if shape.iter().product::<usize>() != x.len() {
                    return Err(Error::Shape(format!(
                        "reshape: {:?} incompatible with {:?}",
                        x.shape(),
                        shape
                    )));
                }
                Ok(with_scalar_type!(dt, T, { T::build(shape, T::slice(x).to_vec()) }))
            }
            Op::MinibatchStddev { eps } => {
                let s = x.shape();
                if s.len() != 4 {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, c, hw) = (s[0], s[1], s[2] * s[3]);
                Ok(with_scalar_type!(dt, T, {
                    let y = k::minibatch_stddev_fwd(T::slice(x), b, c, hw, *eps);
                    T::build(&[s[0], s[1] + 1, s[2], s[3]], y)
                }))
            }
            Op::Dft2 => {
                let s = x.shape();
                if s.len() != 4 || s[1] != 1 || s[2] != s[3] || !is_pow2(s[2]) {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, n) = (s[0], s[2]);
                Ok(with_scalar_type!(dt, T, {
                    T::build(&[b, 2, n, n], k::dft2_batch(T::slice(x), b, n))
                }))
            }
            Op::Idft2Real => {
                let s = x.shape();
                if s.len() != 4 || s[1] != 2 || s[2] != s[3] || !is_pow2(s[2]) {
                    return Err(shape_err(op, s, &[]));
                }
                let (b, n) = (s[0], s[2]);
                Ok(with_scalar_type!(dt, T, {
                    T::build(&[b, 1, n, n], k::idft2_real_batch(T::slice(x), b, n))
                }))
            }
        }
    }

    /// Reverse-mode pass from a scalar loss node. Returns per-node gradients.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        if !self.recording {
            return Err(Error::Shape("backward on a non-recording graph".into()));
        }
        let loss_t = self.value(loss);
        if loss_t.len() != 1 {
            return Err(Error::Shape(format!(
                "backward: loss must be scalar, got shape {:?}",
                loss_t.shape()
            )));
        }
        let dt = loss_t.dtype();
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&[1], 1.0, dt));

        for idx in (0..=loss.0).rev() {
            let Some(gy) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if let Some((op, inputs)) = &node.provenance {
                let input_grads = self.vjp(op, inputs, &node.value, &gy)?;
                for (inp, g) in inputs.iter().zip(input_grads) {
                    match &mut grads[inp.0] {
                        Some(acc) => accumulate(acc, &g),
                        slot => *slot = Some(g),
                    }
                }
            }
            grads[idx] = Some(gy);
        }
        Ok(Gradients { grads, shapes: self.nodes.iter().map(|n| n.value.shape().to_vec()).collect(), dtype: dt })
    }

    /// Vector-Jacobian product of one primitive.
    fn vjp(&self, op: &Op, inputs: &[NodeId], output: &Tensor, gy: &Tensor) -> Result<Vec<Tensor>> {
        let xs: Vec<&Tensor> = inputs.iter().map(|i| &self.nodes[i.0].value).collect();
        let x = xs[0];
        let dt = x.dtype();

        Ok(match op {
            Op::Conv2d => {
                let w = xs[1];
                let (s, ws_) = (x.shape(), w.shape());
                let (b, cin, h, wd) = (s[0], s[1], s[2], s[3]);
                let (cout, kh, kw) = (ws_[0], ws_[2], ws_[3]);
                with_scalar_type!(dt, T, {
                    let (gx, gw) = k::conv2d_bwd(
                        T::slice(x),
                        T::slice(w),
                        T::slice(gy),
                        b,
                        cin,
                        h,
                        wd,
                        cout,
                        kh,
                        kw,
                    );
                    vec![T::build(s, gx), T::build(ws_, gw)]
                })
            }
            Op::Dense => {
                let w = xs[1];
                let (b, fin, fout) = (x.shape()[0], x.shape()[1], w.shape()[0]);
                with_scalar_type!(dt, T, {
                    let (gx, gw) =
                        k::dense_bwd(T::slice(x), T::slice(w), T::slice(gy), b, fin, fout);
                    vec![T::build(x.shape(), gx), T::build(w.shape(), gw)]
                })
            }
            Op::BiasAdd => {
                let bias = xs[1];
                let s = x.shape();
                let ch = s[1];
                let per = if s.len() == 4 { s[2] * s[3] } else { 1 };
                let b = s[0];
                with_scalar_type!(dt, T, {
                    let g = T::slice(gy);
                    let mut db = vec![T::ZERO; ch];
                    for si in 0..b {
                        for c in 0..ch {
                            let base = (si * ch + c) * per;
                            for &v in &g[base..base + per] {
                                db[c] += v;
                            }
                        }
                    }
                    vec![gy.clone(), T::build(bias.shape(), db)]
                })
            }
            Op::LeakyRelu { slope } => with_scalar_type!(dt, T, {
                let s = T::from_f64(*slope);
                let gx: Vec<T> = T::slice(x)
                    .iter()
                    .zip(T::slice(gy))
                    .map(|(&v, &g)| if v >= T::ZERO { g } else { g * s })
                    .collect();
                vec![T::build(x.shape(), gx)]
            }),
            Op::Tanh => with_scalar_type!(dt, T, {
                let gx: Vec<T> = T::slice(output)
                    .iter()
                    .zip(T::slice(gy))
                    .map(|(&y, &g)| g * (T::ONE - y * y))
                    .collect();
                vec![T::build(x.shape(), gx)]
            }),
            Op::Softplus => with_scalar_type!(dt, T, {
                // d softplus = sigmoid(x)
                let gx: Vec<T> = T::slice(x)
                    .iter()
                    .zip(T::slice(gy))
                    .map(|(&v, &g)| g * (T::ONE / (T::ONE + (-v).exp())))
                    .collect();
                vec![T::build(x.shape(), gx)]
            }),
            Op::Add => vec![gy.clone(), gy.clone()],
            Op::Mul => with_scalar_type!(dt, T, {
                let a = T::slice(x);
                let b = T::slice(xs[1]);
                let g = T::slice(gy);
                let ga: Vec<T> = g.iter().zip(b).map(|(&gv, &bv)| gv * bv).collect();
                let gb: Vec<T> = g.iter().zip(a).map(|(&gv, &av)| gv * av).collect();
                vec![T::build(x.shape(), ga), T::build(x.shape(), gb)]
            }),
            Op::ScaleByConstant { factor } => with_scalar_type!(dt, T, {
                let f = T::from_f64(*factor);
                let gx: Vec<T> = T::slice(gy).iter().map(|&g| g * f).collect();
                vec![T::build(x.shape(), gx)]
            }),
            Op::UpsampleNearest2x => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx = k::upsample2x_bwd(T::slice(gy), s[0] * s[1], s[2], s[3]);
                    vec![T::build(s, gx)]
                })
            }
            Op::AvgPool2x => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx = k::avgpool2x_bwd(T::slice(gy), s[0] * s[1], s[2], s[3]);
                    vec![T::build(s, gx)]
                })
            }
            Op::PixelNorm { eps } => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx =
                        k::pixel_norm_bwd(T::slice(x), T::slice(gy), s[0], s[1], s[2] * s[3], *eps);
                    vec![T::build(s, gx)]
                })
            }
            Op::ReduceMean => with_scalar_type!(dt, T, {
                let g = T::slice(gy)[0] * T::from_f64(1.0 / x.len() as f64);
                vec![T::build(x.shape(), vec![g; x.len()])]
            }),
            Op::Reshape { .. } => with_scalar_type!(dt, T, {
                vec![T::build(x.shape(), T::slice(gy).to_vec())]
            }),
            Op::MinibatchStddev { eps } => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx = k::minibatch_stddev_bwd(
                        T::slice(x),
                        T::slice(gy),
                        s[0],
                        s[1],
                        s[2] * s[3],
                        *eps,
                    );
                    vec![T::build(s, gx)]
                })
            }
            // unitary pair: each transform's adjoint is the other's forward
            Op::Dft2 => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx = k::idft2_real_batch(T::slice(gy), s[0], s[2]);
                    vec![T::build(s, gx)]
                })
            }
            Op::Idft2Real => {
                let s = x.shape();
                with_scalar_type!(dt, T, {
                    let gx = k::dft2_batch(T::slice(gy), s[0], s[2]);
                    vec![T::build(s, gx)]
                })
            }
        })
    }
}

fn shape_err(op: &Op, a: &[usize], b: &[usize]) -> Error {
    if b.is_empty() {
        Error::Shape(format!("{}: unsupported input shape {:?}", op.name(), a))
    } else {
        Error::Shape(format!("{}: incompatible shapes {:?} and {:?}", op.name(), a, b))
    }
}

fn accumulate(acc: &mut Tensor, g: &Tensor) {
    debug_assert_eq!(acc.shape(), g.shape());
    match acc.dtype() {
        DType::F32 => {
            let gd = g.f32_data().to_vec();
            for (a, v) in acc.f32_data_mut().iter_mut().zip(gd) {
                *a += v;
            }
        }
        DType::F64 => {
            let gd = g.f64_data().to_vec();
            for (a, v) in acc.f64_data_mut().iter_mut().zip(gd) {
                *a += v;
            }
        }
    }
}

/// Result of a backward pass: cotangents addressable by node id.
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
    dtype: DType,
}

impl Gradients {
    /// Gradient of the loss w.r.t. the node; zeros when the node does not
    /// feed the loss.
    pub fn get(&self, id: NodeId) -> Tensor {
        match &self.grads[id.0] {
            Some(t) => t.clone(),
            None => Tensor::zeros(&self.shapes[id.0], self.dtype),
        }
    }

    pub fn contains(&self, id: NodeId) -> bool {
        self.grads[id.0].is_some()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t64(shape: &[usize], data: Vec<f64>) -> Tensor {
        Tensor::from_f64(shape, data)
    }

    #[test]
    fn leaky_relu_example() {
        let mut g = Graph::new();
        let x = g.input(t64(&[2], vec![-1.0, 2.0]));
        let y = g.apply(Op::LeakyRelu { slope: 0.2 }, &[x]).unwrap();
        assert_eq!(g.value(y).f64_data(), &[-0.2, 2.0]);
    }

    #[test]
    fn upsample_of_single_value_replicates() {
        let mut g = Graph::new();
        let x = g.input(t64(&[1, 1, 1, 1], vec![3.0]));
        let y = g.apply(Op::UpsampleNearest2x, &[x]).unwrap();
        assert_eq!(g.value(y).f64_data(), &[3.0; 4]);
        assert_eq!(g.value(y).shape(), &[1, 1, 2, 2]);
    }

    #[test]
    fn reduce_mean_gradient_is_uniform() {
        let mut g = Graph::new();
        let x = g.input(t64(&[4], vec![1.0, 2.0, 3.0, 4.0]));
        let m = g.apply(Op::ReduceMean, &[x]).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).f64_data(), &[0.25; 4]);
    }

    #[test]
    fn zero_scale_gives_zero_gradients() {
        let mut g = Graph::new();
        let x = g.input(t64(&[3], vec![1.0, -2.0, 3.0]));
        let y = g.apply(Op::ScaleByConstant { factor: 0.0 }, &[x]).unwrap();
        let m = g.apply(Op::ReduceMean, &[y]).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).f64_data(), &[0.0; 3]);
    }

    #[test]
    fn unused_node_gets_zero_gradient() {
        let mut g = Graph::new();
        let x = g.input(t64(&[2], vec![1.0, 2.0]));
        let unused = g.input(t64(&[2], vec![5.0, 6.0]));
        let m = g.apply(Op::ReduceMean, &[x]).unwrap();
        let grads = g.backward(m).unwrap();
        assert!(!grads.contains(unused));
        assert_eq!(grads.get(unused).f64_data(), &[0.0, 0.0]);
    }

    #[test]
    fn loss_must_be_scalar() {
        let mut g = Graph::new();
        let x = g.input(t64(&[2], vec![1.0, 2.0]));
        assert!(g.backward(x).is_err());
    }

    #[test]
    fn mixed_dtypes_rejected() {
        let mut g = Graph::new();
        let a = g.input(Tensor::from_f32(&[2], vec![1.0, 2.0]));
        let b = g.input(t64(&[2], vec![1.0, 2.0]));
        let err = g.apply(Op::Add, &[a, b]).unwrap_err();
        assert!(matches!(err, Error::Dtype(_)));
    }

    #[test]
    fn shape_mismatch_names_primitive_and_shapes() {
        let mut g = Graph::new();
        let a = g.input(t64(&[2], vec![1.0, 2.0]));
        let b = g.input(t64(&[3], vec![1.0, 2.0, 3.0]));
        let err = g.apply(Op::Add, &[a, b]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("add") && msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn linearity_of_backward() {
        // loss = mean(a*x + b*y): grad x is a/n, grad y is b/n
        let mut g = Graph::new();
        let x = g.input(t64(&[4], vec![1.0; 4]));
        let y = g.input(t64(&[4], vec![2.0; 4]));
        let ax = g.apply(Op::ScaleByConstant { factor: 3.0 }, &[x]).unwrap();
        let by = g.apply(Op::ScaleByConstant { factor: -2.0 }, &[y]).unwrap();
        let s = g.apply(Op::Add, &[ax, by]).unwrap();
        let m = g.apply(Op::ReduceMean, &[s]).unwrap();
        let grads = g.backward(m).unwrap();
        assert_eq!(grads.get(x).f64_data(), &[0.75; 4]);
        assert_eq!(grads.get(y).f64_data(), &[-0.5; 4]);
    }

    #[test]
    fn inference_graph_rejects_backward() {
        let mut g = Graph::inference();
        let x = g.input(t64(&[1], vec![1.0]));
        let y = g.apply(Op::Tanh, &[x]).unwrap();
        assert!(g.backward(y).is_err());
    }

    #[test]
    fn deterministic_forward_backward() {
        let run = || {
            let mut g = Graph::new();
            let x = g.input(t64(&[1, 2, 4, 4], (0..32).map(|i| (i as f64) * 0.1 - 1.0).collect()));
            let w = g.input(t64(&[3, 2, 3, 3], (0..54).map(|i| ((i * 7 % 13) as f64) * 0.05).collect()));
            let c = g.apply(Op::Conv2d, &[x, w]).unwrap();
            let a = g.apply(Op::LeakyRelu { slope: 0.2 }, &[c]).unwrap();
            let m = g.apply(Op::ReduceMean, &[a]).unwrap();
            let grads = g.backward(m).unwrap();
            (g.value(m).f64_data().to_vec(), grads.get(w).f64_data().to_vec())
        };
        let (v1, g1) = run();
        let (v2, g2) = run();
        assert_eq!(v1, v2);
        assert_eq!(g1, g2);
    }
}
