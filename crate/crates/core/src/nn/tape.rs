//! Tensor-level reverse-mode differentiation.
//!
//! A [`Tape`] is created per forward pass. Every operation evaluates eagerly,
//! stores its value, and (when any input requires a gradient) a closure that
//! maps the output gradient to input gradients. [`Tape::backward`] consumes
//! the tape.

use std::rc::Rc;

use crate::error::{Error, Result};
use crate::nn::kernels::{gemm, gemm_nt, gemm_tn};
use crate::nn::tensor::Tensor;
use crate::real::Real;

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// What a backward closure sees.
pub struct BackwardCtx<'a, T> {
    pub grad: &'a Tensor<T>,
    pub inputs: Vec<&'a Tensor<T>>,
    pub output: &'a Tensor<T>,
    pub needs: Vec<bool>,
}

/// Returns one gradient per input; `None` means zero or not needed.
pub type BackwardFn<T> = Box<dyn Fn(&BackwardCtx<'_, T>) -> Vec<Option<Tensor<T>>>>;

struct Node<T> {
    value: Tensor<T>,
    parents: Vec<usize>,
    requires_grad: bool,
    backward: Option<BackwardFn<T>>,
}

pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Real> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar loss, keyed by the leaf handles that required them.
pub struct Gradients<T> {
    grads: Vec<Option<Tensor<T>>>,
    shapes: Vec<Vec<usize>>,
}

impl<T: Real> Gradients<T> {
    /// Gradient for `v`; a zero tensor when `v` is not on any path to the loss.
    pub fn get(&self, v: Var) -> Tensor<T> {
        match &self.grads[v.0] {
            Some(g) => g.clone(),
            None => Tensor::zeros(&self.shapes[v.0]),
        }
    }

    pub fn take(&mut self, v: Var) -> Tensor<T> {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(&self.shapes[v.0]))
    }
}

fn needs_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<()> {
    if a != b {
        Err(Error::dim(op, a, b))
    } else {
        Ok(())
    }
}

impl<T: Real> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn leaf(&mut self, value: Tensor<T>, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            parents: Vec::new(),
            requires_grad,
            backward: None,
        });
        Var(self.nodes.len() - 1)
    }

    /// A value that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, false)
    }

    /// A leaf whose gradient is reported by [`Tape::backward`].
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.leaf(value, true)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Records an operation computed outside the tape. The closure is kept
    /// only when some input requires a gradient.
    pub fn custom(&mut self, inputs: &[Var], value: Tensor<T>, backward: BackwardFn<T>) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node {
            value,
            parents: inputs.iter().map(|v| v.0).collect(),
            requires_grad,
            backward: requires_grad.then_some(backward),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn backward(self, loss: Var) -> Result<Gradients<T>> {
        let Tape { mut nodes } = self;
        if nodes[loss.0].value.len() != 1 {
            return Err(Error::contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                nodes[loss.0].value.shape()
            )));
        }
        let shapes: Vec<Vec<usize>> = nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        let mut grads: Vec<Option<Tensor<T>>> = (0..nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(&shapes[loss.0], T::one()));

        for i in (0..=loss.0).rev() {
            if nodes[i].backward.is_none() {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            let node = &nodes[i];
            let ctx = BackwardCtx {
                grad: &g,
                inputs: node.parents.iter().map(|&p| &nodes[p].value).collect(),
                output: &node.value,
                needs: node
                    .parents
                    .iter()
                    .map(|&p| nodes[p].requires_grad)
                    .collect(),
            };
            let input_grads = (node.backward.as_ref().unwrap())(&ctx);
            debug_assert_eq!(input_grads.len(), node.parents.len());
            let parents = node.parents.clone();
            for (p, ig) in parents.into_iter().zip(input_grads) {
                let Some(ig) = ig else { continue };
                if !nodes[p].requires_grad {
                    continue;
                }
                debug_assert_eq!(ig.shape(), shapes[p].as_slice(), "gradient shape");
                match &mut grads[p] {
                    Some(acc) => acc.add_assign(&ig),
                    slot @ None => *slot = Some(ig),
                }
            }
            // Intermediate values are no longer needed once propagated.
            nodes[i].backward = None;
            nodes[i].value = Tensor::zeros(&[0]);
        }
        Ok(Gradients { grads, shapes })
    }

    // ---------------------------------------------------------------- ops

    /// `a[m×k] · b[k×n]`
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.cols());
        if bv.rows() != k || bv.shape().len() != 2 {
            return Err(Error::dim("matmul", av.shape(), bv.shape()));
        }
        let out = Tensor::new(&[m, n], gemm(av.data(), bv.data(), m, k, n))?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |c| {
                let (x, w) = (c.inputs[0], c.inputs[1]);
                let g = c.grad.data();
                vec![
                    c.needs[0].then(|| {
                        Tensor::new(x.shape(), gemm_nt(g, w.data(), m, n, k)).unwrap()
                    }),
                    c.needs[1].then(|| {
                        Tensor::new(&[k, n], gemm_tn(x.data(), g, m, k, n)).unwrap()
                    }),
                ]
            }),
        ))
    }

    /// `a[m×k] · b[n×k]ᵀ`
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Result<Var> {
        let (av, bv) = (self.value(a), self.value(b));
        let (m, k, n) = (av.rows(), av.cols(), bv.rows());
        if bv.cols() != k {
            return Err(Error::dim("matmul_nt", av.shape(), bv.shape()));
        }
        let out = Tensor::new(&[m, n], gemm_nt(av.data(), bv.data(), m, k, n))?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |c| {
                let (x, y) = (c.inputs[0], c.inputs[1]);
                let g = c.grad.data();
                vec![
                    c.needs[0]
                        .then(|| Tensor::new(x.shape(), gemm(g, y.data(), m, n, k)).unwrap()),
                    c.needs[1]
                        .then(|| Tensor::new(y.shape(), gemm_tn(g, x.data(), m, n, k)).unwrap()),
                ]
            }),
        ))
    }

    /// `x[m×k] · w[k×n] + b[n]`
    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Result<Var> {
        let (xv, wv, bv) = (self.value(x), self.value(w), self.value(b));
        let (m, k, n) = (xv.rows(), xv.cols(), wv.cols());
        if wv.rows() != k || wv.shape().len() != 2 {
            return Err(Error::dim("linear", xv.shape(), wv.shape()));
        }
        if bv.len() != n {
            return Err(Error::dim("linear bias", wv.shape(), bv.shape()));
        }
        let mut y = gemm(xv.data(), wv.data(), m, k, n);
        for row in y.chunks_mut(n.max(1)) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        let out = Tensor::new(&[m, n], y)?;
        Ok(self.custom(
            &[x, w, b],
            out,
            Box::new(move |c| {
                let (x, w, b) = (c.inputs[0], c.inputs[1], c.inputs[2]);
                let g = c.grad.data();
                vec![
                    c.needs[0]
                        .then(|| Tensor::new(x.shape(), gemm_nt(g, w.data(), m, n, k)).unwrap()),
                    c.needs[1]
                        .then(|| Tensor::new(&[k, n], gemm_tn(x.data(), g, m, k, n)).unwrap()),
                    c.needs[2].then(|| {
                        let mut gb = vec![T::zero(); n];
                        for row in g.chunks(n.max(1)) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(b.shape(), gb).unwrap()
                    }),
                ]
            }),
        ))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        needs_shape("add", self.shape(a), self.shape(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x + y)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|c| vec![Some(c.grad.clone()), Some(c.grad.clone())]),
        ))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        needs_shape("sub", self.shape(a), self.shape(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x - y)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|c| {
                vec![
                    Some(c.grad.clone()),
                    c.needs[1].then(|| c.grad.map(|v| -v)),
                ]
            }),
        ))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        needs_shape("mul", self.shape(a), self.shape(b))?;
        let out = self.value(a).zip_map(self.value(b), |x, y| x * y)?;
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(|c| {
                vec![
                    c.needs[0].then(|| c.grad.zip_map(c.inputs[1], |g, y| g * y).unwrap()),
                    c.needs[1].then(|| c.grad.zip_map(c.inputs[0], |g, x| g * x).unwrap()),
                ]
            }),
        ))
    }

    /// Adds `b[n]` to every row of `x[m×n]`.
    pub fn add_row(&mut self, x: Var, b: Var) -> Result<Var> {
        let (xv, bv) = (self.value(x), self.value(b));
        let n = xv.cols();
        if bv.len() != n {
            return Err(Error::dim("add_row", xv.shape(), bv.shape()));
        }
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            for (o, &bb) in row.iter_mut().zip(bv.data()) {
                *o += bb;
            }
        }
        Ok(self.custom(
            &[x, b],
            out,
            Box::new(move |c| {
                vec![
                    Some(c.grad.clone()),
                    c.needs[1].then(|| {
                        let mut gb = vec![T::zero(); n];
                        for row in c.grad.data().chunks(n.max(1)) {
                            for (a, &v) in gb.iter_mut().zip(row) {
                                *a += v;
                            }
                        }
                        Tensor::new(c.inputs[1].shape(), gb).unwrap()
                    }),
                ]
            }),
        ))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let out = self.value(x).scale(s);
        self.custom(&[x], out, Box::new(move |c| vec![Some(c.grad.scale(s))]))
    }

    fn unary(
        &mut self,
        x: Var,
        f: impl Fn(T) -> T,
        // derivative from (input, output)
        df: impl Fn(T, T) -> T + 'static,
    ) -> Var {
        let out = self.value(x).map(f);
        self.custom(
            &[x],
            out,
            Box::new(move |c| {
                let g = Tensor::from_fn(c.grad.shape(), |i| {
                    c.grad.data()[i] * df(c.inputs[0].data()[i], c.output.data()[i])
                });
                vec![Some(g)]
            }),
        )
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, |_, y| y * (T::one() - y))
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.tanh(), |_, y| T::one() - y * y)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        self.unary(
            x,
            |v| v.max(T::zero()),
            |v, _| if v > T::zero() { T::one() } else { T::zero() },
        )
    }

    /// GELU, tanh approximation.
    pub fn gelu(&mut self, x: Var) -> Var {
        self.unary(x, gelu, |v, _| gelu_grad(v))
    }

    pub fn exp(&mut self, x: Var) -> Var {
        self.unary(x, |v| v.exp(), |_, y| y)
    }

    /// Row-wise softmax over the last axis.
    pub fn softmax(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let n = xv.cols();
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            softmax_in_place(row);
        }
        self.custom(
            &[x],
            out,
            Box::new(move |c| {
                let mut gx = c.grad.clone();
                for (gr, yr) in gx
                    .data_mut()
                    .chunks_mut(n.max(1))
                    .zip(c.output.data().chunks(n.max(1)))
                {
                    let dot: T = gr.iter().zip(yr).map(|(&g, &y)| g * y).sum();
                    for (g, &y) in gr.iter_mut().zip(yr) {
                        *g = y * (*g - dot);
                    }
                }
                vec![Some(gx)]
            }),
        )
    }

    /// Row-wise layer normalization with per-channel scale and shift.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: T) -> Result<Var> {
        let (xv, gv, bv) = (self.value(x), self.value(gamma), self.value(beta));
        let n = xv.cols();
        if gv.len() != n || bv.len() != n {
            return Err(Error::dim("layer_norm", xv.shape(), gv.shape()));
        }
        let rows = xv.rows();
        let nf = T::c(n as f64);
        // Normalized activations and inverse std are kept for the backward pass.
        let mut xhat = vec![T::zero(); xv.len()];
        let mut inv_std = vec![T::zero(); rows];
        let mut out = vec![T::zero(); xv.len()];
        for r in 0..rows {
            let row = xv.row(r);
            let mean = row.iter().copied().sum::<T>() / nf;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / nf;
            let is = T::one() / (var + eps).sqrt();
            inv_std[r] = is;
            for j in 0..n {
                let h = (row[j] - mean) * is;
                xhat[r * n + j] = h;
                out[r * n + j] = h * gv.data()[j] + bv.data()[j];
            }
        }
        let out = Tensor::new(xv.shape(), out)?;
        Ok(self.custom(
            &[x, gamma, beta],
            out,
            Box::new(move |c| {
                let g = c.grad.data();
                let gamma = c.inputs[1].data();
                let mut gx = vec![T::zero(); g.len()];
                let mut gg = vec![T::zero(); n];
                let mut gb = vec![T::zero(); n];
                for r in 0..rows {
                    let gr = &g[r * n..(r + 1) * n];
                    let hr = &xhat[r * n..(r + 1) * n];
                    let mut m1 = T::zero();
                    let mut m2 = T::zero();
                    for j in 0..n {
                        let gh = gr[j] * gamma[j];
                        m1 += gh;
                        m2 += gh * hr[j];
                        gg[j] += gr[j] * hr[j];
                        gb[j] += gr[j];
                    }
                    m1 /= nf;
                    m2 /= nf;
                    for j in 0..n {
                        let gh = gr[j] * gamma[j];
                        gx[r * n + j] = inv_std[r] * (gh - m1 - hr[j] * m2);
                    }
                }
                vec![
                    c.needs[0].then(|| Tensor::new(c.inputs[0].shape(), gx).unwrap()),
                    c.needs[1].then(|| Tensor::new(c.inputs[1].shape(), gg).unwrap()),
                    c.needs[2].then(|| Tensor::new(c.inputs[2].shape(), gb).unwrap()),
                ]
            }),
        ))
    }

    /// Columns `start..end` of a matrix.
    pub fn slice_cols(&mut self, x: Var, start: usize, end: usize) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if start > end || end > n {
            return Err(Error::dim("slice_cols", xv.shape(), &[start, end]));
        }
        let w = end - start;
        let mut data = Vec::with_capacity(m * w);
        for r in 0..m {
            data.extend_from_slice(&xv.row(r)[start..end]);
        }
        let out = Tensor::new(&[m, w], data)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |c| {
                let mut gx = Tensor::zeros(c.inputs[0].shape());
                for r in 0..m {
                    gx.row_mut(r)[start..end].copy_from_slice(c.grad.row(r));
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Concatenates matrices with equal row counts along columns.
    pub fn concat_cols(&mut self, xs: &[Var]) -> Result<Var> {
        let m = self.value(xs[0]).rows();
        let widths: Vec<usize> = xs.iter().map(|&v| self.value(v).cols()).collect();
        for &v in xs {
            if self.value(v).rows() != m {
                return Err(Error::dim(
                    "concat_cols",
                    self.value(xs[0]).shape(),
                    self.value(v).shape(),
                ));
            }
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(m * total);
        for r in 0..m {
            for &v in xs {
                data.extend_from_slice(self.value(v).row(r));
            }
        }
        let out = Tensor::new(&[m, total], data)?;
        Ok(self.custom(
            xs,
            out,
            Box::new(move |c| {
                let mut offset = 0;
                widths
                    .iter()
                    .enumerate()
                    .map(|(i, &w)| {
                        let start = offset;
                        offset += w;
                        c.needs[i].then(|| {
                            let mut g = Vec::with_capacity(m * w);
                            for r in 0..m {
                                g.extend_from_slice(&c.grad.row(r)[start..start + w]);
                            }
                            Tensor::new(&[m, w], g).unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    /// Stacks matrices with equal column counts.
    pub fn concat_rows(&mut self, xs: &[Var]) -> Result<Var> {
        let n = self.value(xs[0]).cols();
        let mut data = Vec::new();
        let mut sizes = Vec::with_capacity(xs.len());
        for &v in xs {
            let t = self.value(v);
            if t.cols() != n {
                return Err(Error::dim("concat_rows", self.value(xs[0]).shape(), t.shape()));
            }
            sizes.push(t.len());
            data.extend_from_slice(t.data());
        }
        let rows = data.len() / n.max(1);
        let out = Tensor::new(&[rows, n], data)?;
        Ok(self.custom(
            xs,
            out,
            Box::new(move |c| {
                let mut offset = 0;
                sizes
                    .iter()
                    .enumerate()
                    .map(|(i, &s)| {
                        let start = offset;
                        offset += s;
                        c.needs[i].then(|| {
                            Tensor::new(
                                c.inputs[i].shape(),
                                c.grad.data()[start..start + s].to_vec(),
                            )
                            .unwrap()
                        })
                    })
                    .collect()
            }),
        ))
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Result<Var> {
        let out = self.value(x).clone().reshape(shape)?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(|c| vec![Some(c.grad.clone().reshape(c.inputs[0].shape()).unwrap())]),
        ))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let out = Tensor::scalar(self.value(x).sum());
        self.custom(
            &[x],
            out,
            Box::new(|c| vec![Some(Tensor::full(c.inputs[0].shape(), c.grad.data()[0]))]),
        )
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let n = T::c(self.value(x).len().max(1) as f64);
        let s = self.sum(x);
        self.scale(s, T::one() / n)
    }

    /// Mean absolute difference between `a` and `b`. The subgradient at zero
    /// difference is taken as zero.
    pub fn l1_mean(&mut self, a: Var, b: Var) -> Result<Var> {
        needs_shape("l1_mean", self.shape(a), self.shape(b))?;
        let (av, bv) = (self.value(a), self.value(b));
        let n = T::c(av.len().max(1) as f64);
        let total: T = av
            .data()
            .iter()
            .zip(bv.data())
            .map(|(&x, &y)| (x - y).abs())
            .sum();
        let out = Tensor::scalar(total / n);
        Ok(self.custom(
            &[a, b],
            out,
            Box::new(move |c| {
                let g = c.grad.data()[0] / n;
                let sign = c.inputs[0]
                    .zip_map(c.inputs[1], |x, y| {
                        if x > y {
                            g
                        } else if x < y {
                            -g
                        } else {
                            T::zero()
                        }
                    })
                    .unwrap();
                let neg = c.needs[1].then(|| sign.map(|v| -v));
                vec![Some(sign), neg]
            }),
        ))
    }

    /// Each output row is a weighted sum of three input rows:
    /// `out[i] = Σₖ weights[i][k] · x[parents[i][k]]`.
    pub fn mix_rows(
        &mut self,
        x: Var,
        parents: Rc<Vec<[u32; 3]>>,
        weights: Rc<Vec<[T; 3]>>,
    ) -> Result<Var> {
        let xv = self.value(x);
        let (m, n) = (xv.rows(), xv.cols());
        if parents.len() != weights.len() {
            return Err(Error::dim("mix_rows", &[parents.len()], &[weights.len()]));
        }
        if let Some(bad) = parents.iter().flatten().find(|&&p| p as usize >= m) {
            return Err(Error::contract(format!(
                "mix_rows parent index {bad} out of range for {m} rows"
            )));
        }
        let out = Tensor::new(&[parents.len(), n], mix_rows_forward(xv, &parents, &weights))?;
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |c| {
                let mut gx = Tensor::zeros(c.inputs[0].shape());
                for (i, (p, w)) in parents.iter().zip(weights.iter()).enumerate() {
                    let gr = c.grad.row(i);
                    for k in 0..3 {
                        if w[k] == T::zero() {
                            continue;
                        }
                        let dst = gx.row_mut(p[k] as usize);
                        for (d, &g) in dst.iter_mut().zip(gr) {
                            *d += w[k] * g;
                        }
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }

    /// Normalizes every row to unit length; rows with norm below `1e-12`
    /// are replaced by `fallback` and pass no gradient.
    pub fn normalize_rows(&mut self, x: Var, fallback: &[T]) -> Result<Var> {
        let xv = self.value(x);
        let n = xv.cols();
        if fallback.len() != n {
            return Err(Error::dim("normalize_rows", xv.shape(), &[fallback.len()]));
        }
        let tiny = T::c(1e-12);
        let mut norms = Vec::with_capacity(xv.rows());
        let mut out = xv.clone();
        for row in out.data_mut().chunks_mut(n.max(1)) {
            let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
            norms.push(norm);
            if norm < tiny {
                row.copy_from_slice(fallback);
            } else {
                for v in row.iter_mut() {
                    *v /= norm;
                }
            }
        }
        Ok(self.custom(
            &[x],
            out,
            Box::new(move |c| {
                let mut gx = Tensor::zeros(c.inputs[0].shape());
                for (r, &norm) in norms.iter().enumerate() {
                    if norm < tiny {
                        continue;
                    }
                    let y = c.output.row(r);
                    let g = c.grad.row(r);
                    let dot: T = y.iter().zip(g).map(|(&a, &b)| a * b).sum();
                    for (j, d) in gx.row_mut(r).iter_mut().enumerate() {
                        *d = (g[j] - y[j] * dot) / norm;
                    }
                }
                vec![Some(gx)]
            }),
        ))
    }
}

pub(crate) fn mix_rows_forward<T: Real>(
    x: &Tensor<T>,
    parents: &[[u32; 3]],
    weights: &[[T; 3]],
) -> Vec<T> {
    let n = x.cols();
    let mut out = vec![T::zero(); parents.len() * n];
    for (i, (p, w)) in parents.iter().zip(weights).enumerate() {
        let dst = &mut out[i * n..(i + 1) * n];
        // The first term is assigned rather than accumulated so identity
        // rows (weight 1 on one parent) reproduce the input bit for bit.
        for (d, &v) in dst.iter_mut().zip(x.row(p[0] as usize)) {
            *d = w[0] * v;
        }
        for k in 1..3 {
            if w[k] == T::zero() {
                continue;
            }
            for (d, &v) in dst.iter_mut().zip(x.row(p[k] as usize)) {
                *d += w[k] * v;
            }
        }
    }
    out
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

const GELU_K: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub fn gelu<T: Real>(x: T) -> T {
    let inner = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    T::c(0.5) * x * (T::one() + inner.tanh())
}

#[inline]
pub fn gelu_grad<T: Real>(x: T) -> T {
    let inner = T::c(GELU_K) * (x + T::c(GELU_A) * x * x * x);
    let t = inner.tanh();
    let dinner = T::c(GELU_K) * (T::one() + T::c(3.0 * GELU_A) * x * x);
    T::c(0.5) * (T::one() + t) + T::c(0.5) * x * (T::one() - t * t) * dinner
}

/// Max-subtracted softmax of one row.
pub fn softmax_in_place<T: Real>(row: &mut [T]) {
    let max = row.iter().copied().fold(T::neg_infinity(), T::max);
    let mut total = T::zero();
    for v in row.iter_mut() {
        *v = (*v - max).exp();
        total += *v;
    }
    for v in row.iter_mut() {
        *v /= total;
    }
}
