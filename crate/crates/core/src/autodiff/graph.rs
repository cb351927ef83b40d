//! Tape-based reverse-mode differentiation over dense `f64` arrays.
//!
//! Every operation appends a node to the [`Graph`]; node ids grow
//! monotonically, so walking the tape backwards from the root is a valid
//! topological order and each node is visited exactly once.

use ndarray::{ArrayD, Axis, Ix2, Ix3, IxDyn, Zip};

use crate::error::AutodiffError;

type Res<T> = Result<T, AutodiffError>;

/// Handle to a value recorded on a [`Graph`].
///
/// The handle is only meaningful for the graph that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Tensor(usize);

impl Tensor {
    pub fn id(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul(Tensor, Tensor),
    Bmm(Tensor, Tensor),
    Add(Tensor, Tensor),
    Sub(Tensor, Tensor),
    Mul(Tensor, Tensor),
    Scale(Tensor, f64),
    Relu(Tensor),
    Sigmoid(Tensor),
    Tanh(Tensor),
    Log(Tensor),
    Softmax {
        input: Tensor,
        axis: usize,
        temperature: f64,
    },
    Concat {
        inputs: Vec<Tensor>,
        axis: usize,
    },
    Sum {
        input: Tensor,
        axis: usize,
    },
    Mean {
        input: Tensor,
        axis: usize,
    },
    SumAll(Tensor),
    MeanAll(Tensor),
    Reshape(Tensor),
    Permute {
        input: Tensor,
        axes: Vec<usize>,
    },
    Gather {
        input: Tensor,
        indices: Vec<usize>,
    },
    Narrow {
        input: Tensor,
        axis: usize,
        start: usize,
    },
    Pick {
        input: Tensor,
        cols: Vec<usize>,
    },
    BatchNorm {
        input: Tensor,
        gamma: Tensor,
        beta: Tensor,
        normalized: ArrayD<f64>,
        inv_std: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: ArrayD<f64>,
    grad: Option<ArrayD<f64>>,
    requires_grad: bool,
    op: Op,
}

/// Batch statistics produced by a training-mode batch normalization.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance of the batch.
    pub var: Vec<f64>,
    pub count: usize,
}

/// A single-threaded computation graph.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
    backward_done: bool,
}

fn broadcast_ok(lhs: &[usize], rhs: &[usize]) -> bool {
    rhs.len() <= lhs.len() && lhs[lhs.len() - rhs.len()..] == *rhs
}

/// Sums `grad` down to `shape`, where `shape` is a suffix of `grad`'s shape.
fn reduce_to(grad: &ArrayD<f64>, shape: &[usize]) -> ArrayD<f64> {
    if grad.shape() == shape {
        return grad.clone();
    }
    let inner: usize = shape.iter().product();
    let outer = grad.len() / inner.max(1);
    let flat = grad
        .as_standard_layout()
        .into_owned()
        .into_shape_with_order((outer, inner))
        .expect("contiguous reshape");
    flat.sum_axis(Axis(0))
        .into_shape_with_order(IxDyn(shape))
        .expect("suffix shape")
}

fn standard(a: ArrayD<f64>) -> ArrayD<f64> {
    if a.is_standard_layout() {
        a
    } else {
        a.as_standard_layout().into_owned()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: ArrayD<f64>, op: Op, requires_grad: bool) -> Tensor {
        self.nodes.push(Node {
            value: standard(value),
            grad: None,
            requires_grad,
            op,
        });
        Tensor(self.nodes.len() - 1)
    }

    fn rg(&self, t: Tensor) -> bool {
        self.nodes[t.0].requires_grad
    }

    /// Records a leaf value.
    pub fn leaf(&mut self, value: ArrayD<f64>, requires_grad: bool) -> Tensor {
        self.push(value, Op::Leaf, requires_grad)
    }

    /// Records a leaf that does not participate in differentiation.
    pub fn constant(&mut self, value: ArrayD<f64>) -> Tensor {
        self.leaf(value, false)
    }

    pub fn value(&self, t: Tensor) -> &ArrayD<f64> {
        &self.nodes[t.0].value
    }

    pub fn shape(&self, t: Tensor) -> &[usize] {
        self.nodes[t.0].value.shape()
    }

    pub fn requires_grad(&self, t: Tensor) -> bool {
        self.rg(t)
    }

    /// Gradient of the last backward root with respect to `t`, if populated.
    pub fn grad(&self, t: Tensor) -> Option<&ArrayD<f64>> {
        self.nodes[t.0].grad.as_ref()
    }

    /// Scalar value of a rank-0 (or single element) tensor.
    pub fn scalar(&self, t: Tensor) -> f64 {
        let v = &self.nodes[t.0].value;
        debug_assert_eq!(v.len(), 1);
        v.iter().next().copied().unwrap_or(f64::NAN)
    }

    /// 2-D matrix product `[n, k] x [k, m] -> [n, m]`.
    pub fn matmul(&mut self, a: Tensor, b: Tensor) -> Res<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(AutodiffError::ShapeMismatch {
                op: "matmul",
                lhs: sa,
                rhs: sb,
            });
        }
        let av = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix2>().unwrap();
        let out = av.dot(&bv).into_dyn();
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::MatMul(a, b), rg))
    }

    /// Batched matrix product `[g, n, k] x [g, k, m] -> [g, n, m]`.
    pub fn bmm(&mut self, a: Tensor, b: Tensor) -> Res<Tensor> {
        let (sa, sb) = (self.shape(a).to_vec(), self.shape(b).to_vec());
        if sa.len() != 3 || sb.len() != 3 || sa[0] != sb[0] || sa[2] != sb[1] {
            return Err(AutodiffError::ShapeMismatch {
                op: "bmm",
                lhs: sa,
                rhs: sb,
            });
        }
        let av = self.value(a).view().into_dimensionality::<Ix3>().unwrap();
        let bv = self.value(b).view().into_dimensionality::<Ix3>().unwrap();
        let mut out = ndarray::Array3::<f64>::zeros((sa[0], sa[1], sb[2]));
        for (g, mut slot) in out.outer_iter_mut().enumerate() {
            slot.assign(&av.index_axis(Axis(0), g).dot(&bv.index_axis(Axis(0), g)));
        }
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out.into_dyn(), Op::Bmm(a, b), rg))
    }

    fn binary(
        &mut self,
        op: &'static str,
        a: Tensor,
        b: Tensor,
        f: impl Fn(f64, f64) -> f64,
    ) -> Res<ArrayD<f64>> {
        let (sa, sb) = (self.shape(a), self.shape(b));
        if !broadcast_ok(sa, sb) {
            return Err(AutodiffError::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        let bv = self
            .value(b)
            .broadcast(self.value(a).raw_dim())
            .expect("checked broadcast");
        let mut out = self.value(a).clone();
        Zip::from(&mut out).and(&bv).for_each(|x, &y| *x = f(*x, y));
        Ok(out)
    }

    /// Element-wise sum; `b` may broadcast over the leading axes of `a`.
    pub fn add(&mut self, a: Tensor, b: Tensor) -> Res<Tensor> {
        let out = self.binary("add", a, b, |x, y| x + y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Add(a, b), rg))
    }

    /// Element-wise difference; `b` may broadcast over the leading axes of `a`.
    pub fn sub(&mut self, a: Tensor, b: Tensor) -> Res<Tensor> {
        let out = self.binary("sub", a, b, |x, y| x - y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Sub(a, b), rg))
    }

    /// Element-wise product; `b` may broadcast over the leading axes of `a`.
    pub fn mul(&mut self, a: Tensor, b: Tensor) -> Res<Tensor> {
        let out = self.binary("mul", a, b, |x, y| x * y)?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(out, Op::Mul(a, b), rg))
    }

    pub fn scale(&mut self, a: Tensor, factor: f64) -> Tensor {
        let out = self.value(a).mapv(|x| x * factor);
        let rg = self.rg(a);
        self.push(out, Op::Scale(a, factor), rg)
    }

    pub fn relu(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).mapv(|x| if x > 0.0 { x } else { 0.0 });
        let rg = self.rg(a);
        self.push(out, Op::Relu(a), rg)
    }

    pub fn sigmoid(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).mapv(sigmoid);
        let rg = self.rg(a);
        self.push(out, Op::Sigmoid(a), rg)
    }

    pub fn tanh(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).mapv(f64::tanh);
        let rg = self.rg(a);
        self.push(out, Op::Tanh(a), rg)
    }

    /// Natural logarithm. Non-positive inputs yield `-inf`/NaN like `f64::ln`.
    pub fn log(&mut self, a: Tensor) -> Tensor {
        let out = self.value(a).mapv(f64::ln);
        let rg = self.rg(a);
        self.push(out, Op::Log(a), rg)
    }

    /// Softmax of `a / temperature` along `axis`.
    pub fn softmax(&mut self, a: Tensor, axis: usize, temperature: f64) -> Res<Tensor> {
        if !(temperature > 0.0) || !temperature.is_finite() {
            return Err(AutodiffError::InvalidArgument {
                op: "softmax",
                message: format!("temperature must be positive, got {temperature}"),
            });
        }
        let shape = self.shape(a).to_vec();
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "softmax",
                message: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        let mut out = self.value(a).mapv(|x| x / temperature);
        for mut lane in out.lanes_mut(Axis(axis)) {
            let max = lane.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            lane.mapv_inplace(|x| (x - max).exp());
            let total = lane.sum();
            lane.mapv_inplace(|x| x / total);
        }
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::Softmax {
                input: a,
                axis,
                temperature,
            },
            rg,
        ))
    }

    pub fn concat(&mut self, inputs: &[Tensor], axis: usize) -> Res<Tensor> {
        let first = inputs.first().ok_or(AutodiffError::InvalidArgument {
            op: "concat",
            message: "no inputs".into(),
        })?;
        let s0 = self.shape(*first).to_vec();
        if axis >= s0.len() {
            return Err(AutodiffError::InvalidArgument {
                op: "concat",
                message: format!("axis {axis} out of range for shape {s0:?}"),
            });
        }
        for t in &inputs[1..] {
            let s = self.shape(*t);
            let compatible = s.len() == s0.len()
                && s.iter()
                    .zip(&s0)
                    .enumerate()
                    .all(|(d, (x, y))| d == axis || x == y);
            if !compatible {
                return Err(AutodiffError::ShapeMismatch {
                    op: "concat",
                    lhs: s0,
                    rhs: s.to_vec(),
                });
            }
        }
        let views: Vec<_> = inputs.iter().map(|t| self.value(*t).view()).collect();
        let out = ndarray::concatenate(Axis(axis), &views).expect("checked concat");
        let rg = inputs.iter().any(|t| self.rg(*t));
        Ok(self.push(
            out,
            Op::Concat {
                inputs: inputs.to_vec(),
                axis,
            },
            rg,
        ))
    }

    fn check_axis(&self, op: &'static str, a: Tensor, axis: usize) -> Res<()> {
        let shape = self.shape(a);
        if axis >= shape.len() {
            return Err(AutodiffError::InvalidArgument {
                op,
                message: format!("axis {axis} out of range for shape {shape:?}"),
            });
        }
        Ok(())
    }

    /// Sum over `axis`, removing it.
    pub fn sum(&mut self, a: Tensor, axis: usize) -> Res<Tensor> {
        self.check_axis("sum", a, axis)?;
        let out = self.value(a).sum_axis(Axis(axis));
        let rg = self.rg(a);
        Ok(self.push(out, Op::Sum { input: a, axis }, rg))
    }

    /// Mean over `axis`, removing it.
    pub fn mean(&mut self, a: Tensor, axis: usize) -> Res<Tensor> {
        self.check_axis("mean", a, axis)?;
        if self.shape(a)[axis] == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "mean",
                message: "mean over an empty axis".into(),
            });
        }
        let out = self.value(a).mean_axis(Axis(axis)).expect("non-empty");
        let rg = self.rg(a);
        Ok(self.push(out, Op::Mean { input: a, axis }, rg))
    }

    /// Sum of all entries as a rank-0 tensor.
    pub fn sum_all(&mut self, a: Tensor) -> Tensor {
        let out = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum());
        let rg = self.rg(a);
        self.push(out, Op::SumAll(a), rg)
    }

    /// Mean of all entries as a rank-0 tensor.
    pub fn mean_all(&mut self, a: Tensor) -> Res<Tensor> {
        let n = self.value(a).len();
        if n == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "mean_all",
                message: "empty tensor".into(),
            });
        }
        let out = ArrayD::from_elem(IxDyn(&[]), self.value(a).sum() / n as f64);
        let rg = self.rg(a);
        Ok(self.push(out, Op::MeanAll(a), rg))
    }

    pub fn reshape(&mut self, a: Tensor, shape: &[usize]) -> Res<Tensor> {
        let from = self.shape(a).to_vec();
        if from.iter().product::<usize>() != shape.iter().product::<usize>() {
            return Err(AutodiffError::ShapeMismatch {
                op: "reshape",
                lhs: from,
                rhs: shape.to_vec(),
            });
        }
        let out = self
            .value(a)
            .clone()
            .into_shape_with_order(IxDyn(shape))
            .expect("standard layout");
        let rg = self.rg(a);
        Ok(self.push(out, Op::Reshape(a), rg))
    }

    /// Reorders axes: output axis `k` is input axis `axes[k]`.
    pub fn permute(&mut self, a: Tensor, axes: &[usize]) -> Res<Tensor> {
        let shape = self.shape(a).to_vec();
        let mut seen = vec![false; shape.len()];
        let valid = axes.len() == shape.len()
            && axes.iter().all(|&k| k < seen.len() && !std::mem::replace(&mut seen[k], true));
        if !valid {
            return Err(AutodiffError::InvalidArgument {
                op: "permute",
                message: format!("axes {axes:?} invalid for shape {shape:?}"),
            });
        }
        let out = self.value(a).clone().permuted_axes(IxDyn(axes));
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::Permute {
                input: a,
                axes: axes.to_vec(),
            },
            rg,
        ))
    }

    /// Selects entries along axis 0 (repeats allowed).
    pub fn gather(&mut self, a: Tensor, indices: &[usize]) -> Res<Tensor> {
        let shape = self.shape(a).to_vec();
        if shape.is_empty() {
            return Err(AutodiffError::InvalidArgument {
                op: "gather",
                message: "cannot gather from a scalar".into(),
            });
        }
        if let Some(bad) = indices.iter().find(|&&i| i >= shape[0]) {
            return Err(AutodiffError::InvalidArgument {
                op: "gather",
                message: format!("index {bad} out of range for axis of length {}", shape[0]),
            });
        }
        let out = self.value(a).select(Axis(0), indices);
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::Gather {
                input: a,
                indices: indices.to_vec(),
            },
            rg,
        ))
    }

    /// Slice `[start, start + len)` along `axis`.
    pub fn narrow(&mut self, a: Tensor, axis: usize, start: usize, len: usize) -> Res<Tensor> {
        self.check_axis("narrow", a, axis)?;
        let dim = self.shape(a)[axis];
        if start + len > dim {
            return Err(AutodiffError::InvalidArgument {
                op: "narrow",
                message: format!("range {start}..{} exceeds axis length {dim}", start + len),
            });
        }
        let out = self
            .value(a)
            .slice_axis(Axis(axis), ndarray::Slice::from(start..start + len))
            .to_owned();
        let rg = self.rg(a);
        Ok(self.push(out, Op::Narrow { input: a, axis, start }, rg))
    }

    /// For a `[n, k]` input, picks entry `(r, cols[r])` of every row into an `[n]` output.
    pub fn pick(&mut self, a: Tensor, cols: &[usize]) -> Res<Tensor> {
        let shape = self.shape(a).to_vec();
        if shape.len() != 2 || shape[0] != cols.len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "pick",
                lhs: shape,
                rhs: vec![cols.len()],
            });
        }
        if let Some(bad) = cols.iter().find(|&&c| c >= shape[1]) {
            return Err(AutodiffError::InvalidArgument {
                op: "pick",
                message: format!("column {bad} out of range for width {}", shape[1]),
            });
        }
        let v = self.value(a).view().into_dimensionality::<Ix2>().unwrap();
        let out: Vec<f64> = cols.iter().enumerate().map(|(r, &c)| v[[r, c]]).collect();
        let out = ArrayD::from_shape_vec(IxDyn(&[cols.len()]), out).unwrap();
        let rg = self.rg(a);
        Ok(self.push(
            out,
            Op::Pick {
                input: a,
                cols: cols.to_vec(),
            },
            rg,
        ))
    }

    /// Training-mode batch normalization of an `[n, f]` input using batch statistics.
    pub fn batch_norm(
        &mut self,
        x: Tensor,
        gamma: Tensor,
        beta: Tensor,
        eps: f64,
    ) -> Res<(Tensor, BatchStats)> {
        let sx = self.shape(x).to_vec();
        if sx.len() != 2 || sx[0] == 0 {
            return Err(AutodiffError::InvalidArgument {
                op: "batch_norm",
                message: format!("expected non-empty [n, f] input, got {sx:?}"),
            });
        }
        for p in [gamma, beta] {
            if self.shape(p) != [sx[1]] {
                return Err(AutodiffError::ShapeMismatch {
                    op: "batch_norm",
                    lhs: sx.clone(),
                    rhs: self.shape(p).to_vec(),
                });
            }
        }
        let xv = self.value(x).view().into_dimensionality::<Ix2>().unwrap();
        let mean = xv.mean_axis(Axis(0)).unwrap();
        let var = xv.var_axis(Axis(0), 0.0);
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + eps).sqrt()).collect();
        let mut normalized = xv.to_owned();
        for mut row in normalized.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = (*v - mean[j]) * inv_std[j];
            }
        }
        let g = self.value(gamma).as_slice().unwrap().to_vec();
        let b = self.value(beta).as_slice().unwrap().to_vec();
        let mut out = normalized.clone();
        for mut row in out.rows_mut() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = *v * g[j] + b[j];
            }
        }
        let stats = BatchStats {
            mean: mean.to_vec(),
            var: var.to_vec(),
            count: sx[0],
        };
        let rg = self.rg(x) || self.rg(gamma) || self.rg(beta);
        let t = self.push(
            out.into_dyn(),
            Op::BatchNorm {
                input: x,
                gamma,
                beta,
                normalized: normalized.into_dyn(),
                inv_std,
            },
            rg,
        );
        Ok((t, stats))
    }

    fn accumulate(&mut self, t: Tensor, g: ArrayD<f64>) {
        let node = &mut self.nodes[t.0];
        if !node.requires_grad {
            return;
        }
        match &mut node.grad {
            Some(acc) => *acc += &g,
            None => node.grad = Some(g),
        }
    }

    /// Populates gradients of the scalar `root` with respect to every
    /// node that requires them. May run once per graph.
    pub fn backward(&mut self, root: Tensor) -> Res<()> {
        if self.backward_done {
            return Err(AutodiffError::BackwardAlreadyRun);
        }
        let shape = self.shape(root).to_vec();
        if !shape.is_empty() {
            return Err(AutodiffError::NonScalarRoot(shape));
        }
        self.backward_done = true;
        if !self.rg(root) {
            return Ok(());
        }
        self.nodes[root.0].grad = Some(ArrayD::from_elem(IxDyn(&[]), 1.0));
        for id in (0..=root.0).rev() {
            let Some(grad) = self.nodes[id].grad.take() else {
                continue;
            };
            let op = self.nodes[id].op.clone();
            self.propagate(Tensor(id), &op, &grad);
            self.nodes[id].grad = Some(grad);
        }
        Ok(())
    }

    fn propagate(&mut self, out: Tensor, op: &Op, grad: &ArrayD<f64>) {
        match op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                if self.rg(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<Ix2>().unwrap();
                    let ga = g2.dot(&bv.t()).into_dyn();
                    self.accumulate(*a, ga);
                }
                if self.rg(*b) {
                    let av = self.value(*a).view().into_dimensionality::<Ix2>().unwrap();
                    let gb = av.t().dot(&g2).into_dyn();
                    self.accumulate(*b, gb);
                }
            }
            Op::Bmm(a, b) => {
                let g3 = grad.view().into_dimensionality::<Ix3>().unwrap();
                if self.rg(*a) {
                    let bv = self.value(*b).view().into_dimensionality::<Ix3>().unwrap();
                    let s = self.shape(*a);
                    let mut ga = ndarray::Array3::<f64>::zeros((s[0], s[1], s[2]));
                    for (k, mut slot) in ga.outer_iter_mut().enumerate() {
                        slot.assign(&g3.index_axis(Axis(0), k).dot(&bv.index_axis(Axis(0), k).t()));
                    }
                    self.accumulate(*a, ga.into_dyn());
                }
                if self.rg(*b) {
                    let av = self.value(*a).view().into_dimensionality::<Ix3>().unwrap();
                    let s = self.shape(*b);
                    let mut gb = ndarray::Array3::<f64>::zeros((s[0], s[1], s[2]));
                    for (k, mut slot) in gb.outer_iter_mut().enumerate() {
                        slot.assign(&av.index_axis(Axis(0), k).t().dot(&g3.index_axis(Axis(0), k)));
                    }
                    self.accumulate(*b, gb.into_dyn());
                }
            }
            Op::Add(a, b) => {
                let sb = self.shape(*b).to_vec();
                self.accumulate(*a, grad.clone());
                if self.rg(*b) {
                    self.accumulate(*b, reduce_to(grad, &sb));
                }
            }
            Op::Sub(a, b) => {
                let sb = self.shape(*b).to_vec();
                self.accumulate(*a, grad.clone());
                if self.rg(*b) {
                    let neg = grad.mapv(|x| -x);
                    self.accumulate(*b, reduce_to(&neg, &sb));
                }
            }
            Op::Mul(a, b) => {
                let full = self.value(*a).raw_dim();
                if self.rg(*a) {
                    let bv = self.value(*b).broadcast(full.clone()).unwrap();
                    let ga = grad * &bv;
                    self.accumulate(*a, ga);
                }
                if self.rg(*b) {
                    let sb = self.shape(*b).to_vec();
                    let gb = grad * self.value(*a);
                    self.accumulate(*b, reduce_to(&gb, &sb));
                }
            }
            Op::Scale(a, f) => {
                let ga = grad.mapv(|x| x * f);
                self.accumulate(*a, ga);
            }
            Op::Relu(a) => {
                let mut ga = grad.clone();
                Zip::from(&mut ga)
                    .and(self.value(*a))
                    .for_each(|g, &x| {
                        if x <= 0.0 {
                            *g = 0.0
                        }
                    });
                self.accumulate(*a, ga);
            }
            Op::Sigmoid(a) => {
                let mut ga = grad.clone();
                Zip::from(&mut ga)
                    .and(&self.nodes[out.0].value)
                    .for_each(|g, &y| *g *= y * (1.0 - y));
                self.accumulate(*a, ga);
            }
            Op::Tanh(a) => {
                let mut ga = grad.clone();
                Zip::from(&mut ga)
                    .and(&self.nodes[out.0].value)
                    .for_each(|g, &y| *g *= 1.0 - y * y);
                self.accumulate(*a, ga);
            }
            Op::Log(a) => {
                let mut ga = grad.clone();
                Zip::from(&mut ga)
                    .and(self.value(*a))
                    .for_each(|g, &x| *g /= x);
                self.accumulate(*a, ga);
            }
            Op::Softmax {
                input,
                axis,
                temperature,
            } => {
                let y = &self.nodes[out.0].value;
                let mut ga = grad * y;
                let dots = ga.sum_axis(Axis(*axis)).insert_axis(Axis(*axis));
                let dots = dots.broadcast(y.raw_dim()).unwrap().to_owned();
                ga = ga - &(y * &dots);
                ga.mapv_inplace(|v| v / temperature);
                self.accumulate(*input, ga);
            }
            Op::Concat { inputs, axis } => {
                let mut offset = 0;
                for t in inputs {
                    let len = self.shape(*t)[*axis];
                    if self.rg(*t) {
                        let part = grad
                            .slice_axis(Axis(*axis), ndarray::Slice::from(offset..offset + len))
                            .to_owned();
                        self.accumulate(*t, part);
                    }
                    offset += len;
                }
            }
            Op::Sum { input, axis } => {
                let shape = self.value(*input).raw_dim();
                let ga = grad
                    .clone()
                    .insert_axis(Axis(*axis))
                    .broadcast(shape)
                    .unwrap()
                    .to_owned();
                self.accumulate(*input, ga);
            }
            Op::Mean { input, axis } => {
                let shape = self.value(*input).raw_dim();
                let n = shape[*axis] as f64;
                let ga = grad
                    .mapv(|x| x / n)
                    .insert_axis(Axis(*axis))
                    .broadcast(shape)
                    .unwrap()
                    .to_owned();
                self.accumulate(*input, ga);
            }
            Op::SumAll(a) => {
                let g = grad.iter().next().copied().unwrap();
                let ga = ArrayD::from_elem(self.value(*a).raw_dim(), g);
                self.accumulate(*a, ga);
            }
            Op::MeanAll(a) => {
                let n = self.value(*a).len() as f64;
                let g = grad.iter().next().copied().unwrap() / n;
                let ga = ArrayD::from_elem(self.value(*a).raw_dim(), g);
                self.accumulate(*a, ga);
            }
            Op::Reshape(a) => {
                let shape = self.value(*a).raw_dim();
                let ga = grad.clone().into_shape_with_order(shape).unwrap();
                self.accumulate(*a, ga);
            }
            Op::Permute { input, axes } => {
                let mut inverse = vec![0; axes.len()];
                for (k, &a) in axes.iter().enumerate() {
                    inverse[a] = k;
                }
                let ga = standard(grad.clone().permuted_axes(IxDyn(&inverse)));
                self.accumulate(*input, ga);
            }
            Op::Gather { input, indices } => {
                let mut ga = ArrayD::<f64>::zeros(self.value(*input).raw_dim());
                for (k, &i) in indices.iter().enumerate() {
                    let mut dst = ga.index_axis_mut(Axis(0), i);
                    dst += &grad.index_axis(Axis(0), k);
                }
                self.accumulate(*input, ga);
            }
            Op::Narrow { input, axis, start } => {
                let mut ga = ArrayD::<f64>::zeros(self.value(*input).raw_dim());
                let len = grad.shape()[*axis];
                ga.slice_axis_mut(Axis(*axis), ndarray::Slice::from(*start..*start + len))
                    .assign(grad);
                self.accumulate(*input, ga);
            }
            Op::Pick { input, cols } => {
                let mut ga = ArrayD::<f64>::zeros(self.value(*input).raw_dim());
                for (r, &c) in cols.iter().enumerate() {
                    ga[[r, c]] = grad[[r]];
                }
                self.accumulate(*input, ga);
            }
            Op::BatchNorm {
                input,
                gamma,
                beta,
                normalized,
                inv_std,
            } => {
                let g2 = grad.view().into_dimensionality::<Ix2>().unwrap();
                let xhat = normalized.view().into_dimensionality::<Ix2>().unwrap();
                let n = g2.nrows() as f64;
                if self.rg(*beta) {
                    self.accumulate(*beta, g2.sum_axis(Axis(0)).into_dyn());
                }
                if self.rg(*gamma) {
                    self.accumulate(*gamma, (&g2 * &xhat).sum_axis(Axis(0)).into_dyn());
                }
                if self.rg(*input) {
                    let gv = self.value(*gamma).as_slice().unwrap().to_vec();
                    let mut dxhat = g2.to_owned();
                    for mut row in dxhat.rows_mut() {
                        for (j, v) in row.iter_mut().enumerate() {
                            *v *= gv[j];
                        }
                    }
                    let sum_d = dxhat.sum_axis(Axis(0));
                    let sum_dx = (&dxhat * &xhat).sum_axis(Axis(0));
                    let mut gx = dxhat;
                    for (mut row, xrow) in gx.rows_mut().into_iter().zip(xhat.rows()) {
                        for j in 0..row.len() {
                            row[j] = inv_std[j] / n * (n * row[j] - sum_d[j] - xrow[j] * sum_dx[j]);
                        }
                    }
                    self.accumulate(*input, gx.into_dyn());
                }
            }
        }
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Convenience constructor for dynamic-rank arrays.
pub fn array(shape: &[usize], values: Vec<f64>) -> ArrayD<f64> {
    ArrayD::from_shape_vec(IxDyn(shape), values).expect("values length matches shape")
}
