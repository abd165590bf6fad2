//! Reverse-mode automatic differentiation over a linear record of operations.
//!
//! Every value produced on a [`Tape`] is a node addressed by a [`Var`]. Nodes are
//! appended in evaluation order, so the record is already topologically sorted and
//! `backward` simply walks it in reverse. Adjoints of intermediate nodes live only
//! for the duration of one backward pass; leaf gradients persist and accumulate
//! until [`Tape::zero_grad`].

use crate::autodiff::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul {
        a: Var,
        b: Var,
        m: usize,
        k: usize,
        n: usize,
    },
    Transpose {
        a: Var,
        rows: usize,
        cols: usize,
    },
    Add {
        a: Var,
        b: Var,
    },
    Sub {
        a: Var,
        b: Var,
    },
    Mul {
        a: Var,
        b: Var,
    },
    Scale {
        a: Var,
        factor: f64,
    },
    AddBias {
        a: Var,
        bias: Var,
        cols: usize,
    },
    Concat {
        parts: Vec<Var>,
        axis: usize,
    },
    Slice {
        a: Var,
        axis: usize,
        start: usize,
        end: usize,
    },
    Reshape {
        a: Var,
    },
    Tanh {
        a: Var,
    },
    Sigmoid {
        a: Var,
    },
    Elu {
        a: Var,
        alpha: f64,
    },
    Relu {
        a: Var,
    },
    LeakyRelu {
        a: Var,
        slope: f64,
    },
    Sum {
        a: Var,
    },
    Mean {
        a: Var,
    },
    MaskedSoftmax {
        a: Var,
        cols: usize,
    },
    OuterSum {
        col: Var,
        row: Var,
        m: usize,
        n: usize,
    },
    CrossEntropy {
        pred: Var,
        gold: Vec<usize>,
        cols: usize,
    },
    Embedding {
        table: Var,
        indices: Vec<usize>,
        dim: usize,
        frozen: Option<usize>,
    },
    SumSquares {
        a: Var,
        skip_row: Option<(usize, usize)>,
    },
}

#[derive(Debug, Clone)]
struct Node {
    shape: Vec<usize>,
    value: Vec<f64>,
    op: Op,
    requires_grad: bool,
    /// Persistent gradient; only allocated for leaves that require it.
    grad: Vec<f64>,
}

#[derive(Debug, Default, Clone)]
pub struct Tape {
    nodes: Vec<Node>,
}

fn dims2(shape: &[usize]) -> Option<(usize, usize)> {
    match shape {
        [n] => Some((1, *n)),
        [r, c] => Some((*r, *c)),
        _ => None,
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
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

    fn push(&mut self, shape: Vec<usize>, value: Vec<f64>, op: Op, requires_grad: bool) -> Var {
        debug_assert_eq!(shape.iter().product::<usize>(), value.len());
        self.nodes.push(Node {
            shape,
            value,
            op,
            requires_grad,
            grad: Vec::new(),
        });
        Var(self.nodes.len() - 1)
    }

    fn node(&self, v: Var) -> &Node {
        &self.nodes[v.0]
    }

    fn rg(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].requires_grad)
    }

    /// Records a leaf. Its `requires_grad` flag decides whether gradients reach it.
    pub fn leaf(&mut self, tensor: &Tensor) -> Var {
        let rg = tensor.requires_grad();
        let v = self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            Op::Leaf,
            rg,
        );
        if rg {
            self.nodes[v.0].grad = vec![0.0; tensor.numel()];
        }
        v
    }

    /// A trainable leaf regardless of the tensor's own flag.
    pub fn param(&mut self, tensor: &Tensor) -> Var {
        let v = self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            Op::Leaf,
            true,
        );
        self.nodes[v.0].grad = vec![0.0; tensor.numel()];
        v
    }

    /// A detached leaf; gradients never flow into it.
    pub fn constant(&mut self, tensor: &Tensor) -> Var {
        self.push(
            tensor.shape().to_vec(),
            tensor.values().to_vec(),
            Op::Leaf,
            false,
        )
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        &self.node(v).shape
    }

    pub fn value(&self, v: Var) -> &[f64] {
        &self.node(v).value
    }

    pub fn tensor(&self, v: Var) -> Tensor {
        let n = self.node(v);
        Tensor::new(&n.shape, n.value.clone()).expect("tape node shape is valid")
    }

    /// Accumulated gradient of a leaf. Empty for intermediates and detached leaves.
    pub fn grad(&self, v: Var) -> &[f64] {
        &self.node(v).grad
    }

    pub fn zero_grad(&mut self) {
        for n in &mut self.nodes {
            n.grad.iter_mut().for_each(|g| *g = 0.0);
        }
    }

    fn rank2(&self, op: &'static str, v: Var) -> Result<(usize, usize)> {
        let shape = &self.node(v).shape;
        match shape.as_slice() {
            [r, c] => Ok((*r, *c)),
            _ => Err(Error::Rank {
                op,
                expected: 2,
                shape: shape.clone(),
            }),
        }
    }

    fn same_shape(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (sa, sb) = (&self.node(a).shape, &self.node(b).shape);
        if sa != sb {
            return Err(Error::Dimension {
                op,
                left: sa.clone(),
                right: sb.clone(),
            });
        }
        Ok(())
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (m, k) = self.rank2("matmul", a)?;
        let (k2, n) = self.rank2("matmul", b)?;
        if k != k2 {
            return Err(Error::Dimension {
                op: "matmul",
                left: vec![m, k],
                right: vec![k2, n],
            });
        }
        let (av, bv) = (&self.node(a).value, &self.node(b).value);
        let mut out = vec![0.0; m * n];
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * n..(p + 1) * n];
                for (o, y) in orow.iter_mut().zip(brow) {
                    *o += x * y;
                }
            }
        }
        let rg = self.rg(&[a, b]);
        Ok(self.push(vec![m, n], out, Op::MatMul { a, b, m, k, n }, rg))
    }

    pub fn transpose(&mut self, a: Var) -> Result<Var> {
        let (rows, cols) = self.rank2("transpose", a)?;
        let av = &self.node(a).value;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            for j in 0..cols {
                out[j * rows + i] = av[i * cols + j];
            }
        }
        let rg = self.rg(&[a]);
        Ok(self.push(vec![cols, rows], out, Op::Transpose { a, rows, cols }, rg))
    }

    fn zip_with(
        &mut self,
        op: &'static str,
        a: Var,
        b: Var,
        f: impl Fn(f64, f64) -> f64,
        rec: Op,
    ) -> Result<Var> {
        self.same_shape(op, a, b)?;
        let out = self
            .node(a)
            .value
            .iter()
            .zip(&self.node(b).value)
            .map(|(&x, &y)| f(x, y))
            .collect();
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a, b]);
        Ok(self.push(shape, out, rec, rg))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("add", a, b, |x, y| x + y, Op::Add { a, b })
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("sub", a, b, |x, y| x - y, Op::Sub { a, b })
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.zip_with("mul", a, b, |x, y| x * y, Op::Mul { a, b })
    }

    fn map(&mut self, a: Var, f: impl Fn(f64) -> f64, rec: Op) -> Var {
        let n = self.node(a);
        let out = n.value.iter().map(|&x| f(x)).collect();
        let shape = n.shape.clone();
        let rg = n.requires_grad;
        self.push(shape, out, rec, rg)
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        self.map(a, |x| x * factor, Op::Scale { a, factor })
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        self.map(a, f64::tanh, Op::Tanh { a })
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        self.map(a, sigmoid, Op::Sigmoid { a })
    }

    pub fn elu(&mut self, a: Var, alpha: f64) -> Var {
        self.map(
            a,
            |x| if x > 0.0 { x } else { alpha * x.exp_m1() },
            Op::Elu { a, alpha },
        )
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.map(a, |x| x.max(0.0), Op::Relu { a })
    }

    pub fn leaky_relu(&mut self, a: Var, slope: f64) -> Var {
        self.map(
            a,
            |x| if x >= 0.0 { x } else { slope * x },
            Op::LeakyRelu { a, slope },
        )
    }

    /// Adds a length-`n` bias to every row of an `m×n` matrix.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let (m, n) = dims2(&self.node(a).shape).ok_or_else(|| Error::Rank {
            op: "add_bias",
            expected: 2,
            shape: self.node(a).shape.clone(),
        })?;
        if self.node(bias).value.len() != n {
            return Err(Error::Dimension {
                op: "add_bias",
                left: self.node(a).shape.clone(),
                right: self.node(bias).shape.clone(),
            });
        }
        let bv = &self.node(bias).value;
        let mut out = self.node(a).value.clone();
        for i in 0..m {
            for (o, b) in out[i * n..(i + 1) * n].iter_mut().zip(bv) {
                *o += b;
            }
        }
        let shape = self.node(a).shape.clone();
        let rg = self.rg(&[a, bias]);
        Ok(self.push(shape, out, Op::AddBias { a, bias, cols: n }, rg))
    }

    /// Concatenates along `axis`. Rank-1 inputs concatenate along axis 0; rank-2
    /// inputs stack rows (axis 0) or columns (axis 1).
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::Config("concat of zero tensors".into()))?;
        let s0 = self.node(first).shape.clone();
        let mismatch = |s: &[usize]| Error::Dimension {
            op: "concat",
            left: s0.clone(),
            right: s.to_vec(),
        };
        let (shape, value) = match (s0.len(), axis) {
            (1, 0) => {
                let mut value = Vec::new();
                for &p in parts {
                    let s = &self.node(p).shape;
                    if s.len() != 1 {
                        return Err(mismatch(s));
                    }
                    value.extend_from_slice(&self.node(p).value);
                }
                (vec![value.len()], value)
            }
            (2, 0) => {
                let cols = s0[1];
                let mut value = Vec::new();
                for &p in parts {
                    let s = &self.node(p).shape;
                    if s.len() != 2 || s[1] != cols {
                        return Err(mismatch(s));
                    }
                    value.extend_from_slice(&self.node(p).value);
                }
                (vec![value.len() / cols, cols], value)
            }
            (2, 1) => {
                let rows = s0[0];
                let mut widths = Vec::with_capacity(parts.len());
                for &p in parts {
                    let s = &self.node(p).shape;
                    if s.len() != 2 || s[0] != rows {
                        return Err(mismatch(s));
                    }
                    widths.push(s[1]);
                }
                let total: usize = widths.iter().sum();
                let mut value = Vec::with_capacity(rows * total);
                for i in 0..rows {
                    for (&p, &w) in parts.iter().zip(&widths) {
                        value.extend_from_slice(&self.node(p).value[i * w..(i + 1) * w]);
                    }
                }
                (vec![rows, total], value)
            }
            _ => {
                return Err(Error::Rank {
                    op: "concat",
                    expected: axis + 1,
                    shape: s0,
                })
            }
        };
        let rg = self.rg(parts);
        Ok(self.push(
            shape,
            value,
            Op::Concat {
                parts: parts.to_vec(),
                axis,
            },
            rg,
        ))
    }

    /// Half-open range `start..end` along `axis`; the inverse of [`Tape::concat`].
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, end: usize) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let av = &self.node(a).value;
        let bad = || Error::Dimension {
            op: "slice",
            left: shape.clone(),
            right: vec![axis, start, end],
        };
        let (out_shape, value) = match (shape.as_slice(), axis) {
            ([n], 0) => {
                if start >= end || end > *n {
                    return Err(bad());
                }
                (vec![end - start], av[start..end].to_vec())
            }
            ([r, c], 0) => {
                if start >= end || end > *r {
                    return Err(bad());
                }
                (vec![end - start, *c], av[start * c..end * c].to_vec())
            }
            ([r, c], 1) => {
                if start >= end || end > *c {
                    return Err(bad());
                }
                let w = end - start;
                let mut value = Vec::with_capacity(r * w);
                for i in 0..*r {
                    value.extend_from_slice(&av[i * c + start..i * c + end]);
                }
                (vec![*r, w], value)
            }
            _ => return Err(bad()),
        };
        let rg = self.rg(&[a]);
        Ok(self.push(
            out_shape,
            value,
            Op::Slice {
                a,
                axis,
                start,
                end,
            },
            rg,
        ))
    }

    pub fn row(&mut self, a: Var, i: usize) -> Result<Var> {
        self.slice(a, 0, i, i + 1)
    }

    pub fn reshape(&mut self, a: Var, shape: &[usize]) -> Result<Var> {
        let n = self.node(a);
        if shape.iter().product::<usize>() != n.value.len() || shape.contains(&0) {
            return Err(Error::Dimension {
                op: "reshape",
                left: n.shape.clone(),
                right: shape.to_vec(),
            });
        }
        let value = n.value.clone();
        let rg = n.requires_grad;
        Ok(self.push(shape.to_vec(), value, Op::Reshape { a }, rg))
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().sum();
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], Op::Sum { a }, rg)
    }

    pub fn mean(&mut self, a: Var) -> Var {
        let n = self.node(a);
        let s = n.value.iter().sum::<f64>() / n.value.len() as f64;
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], Op::Mean { a }, rg)
    }

    /// Row-wise softmax restricted to `mask` (row-major, same length as `a`).
    /// Masked-out entries are exactly zero. A rank-1 input is a single row.
    pub fn masked_softmax(&mut self, a: Var, mask: &[bool]) -> Result<Var> {
        let shape = self.node(a).shape.clone();
        let (rows, cols) = dims2(&shape).ok_or_else(|| Error::Rank {
            op: "masked_softmax",
            expected: 2,
            shape: shape.clone(),
        })?;
        if mask.len() != rows * cols {
            return Err(Error::Dimension {
                op: "masked_softmax",
                left: shape,
                right: vec![mask.len()],
            });
        }
        let av = &self.node(a).value;
        let mut out = vec![0.0; rows * cols];
        for i in 0..rows {
            let r = i * cols..(i + 1) * cols;
            let (x, m, o) = (&av[r.clone()], &mask[r.clone()], &mut out[r]);
            if !m.iter().any(|&keep| keep) {
                return Err(Error::DegenerateNeighborhood { node: i });
            }
            // A NaN score makes the whole row NaN rather than being skipped by `max`.
            let max = x
                .iter()
                .zip(m)
                .filter(|(_, &keep)| keep)
                .map(|(&v, _)| v)
                .fold(f64::NEG_INFINITY, |acc, v| {
                    if v.is_nan() || acc.is_nan() {
                        f64::NAN
                    } else {
                        acc.max(v)
                    }
                });
            let mut z = 0.0;
            for j in 0..cols {
                if m[j] {
                    o[j] = (x[j] - max).exp();
                    z += o[j];
                }
            }
            o.iter_mut().for_each(|v| *v /= z);
        }
        let rg = self.rg(&[a]);
        Ok(self.push(shape, out, Op::MaskedSoftmax { a, cols }, rg))
    }

    pub fn softmax_rows(&mut self, a: Var) -> Result<Var> {
        let mask = vec![true; self.node(a).value.len()];
        self.masked_softmax(a, &mask)
    }

    /// `out[i][j] = col[i] + row[j]` for vectors of length `m` and `n`.
    pub fn outer_sum(&mut self, col: Var, row: Var) -> Var {
        let (cv, rv) = (&self.node(col).value, &self.node(row).value);
        let (m, n) = (cv.len(), rv.len());
        let mut out = Vec::with_capacity(m * n);
        for &u in cv {
            out.extend(rv.iter().map(|&v| u + v));
        }
        let rg = self.rg(&[col, row]);
        self.push(vec![m, n], out, Op::OuterSum { col, row, m, n }, rg)
    }

    /// Summed negative log-likelihood `-Σ_i ln pred[i][gold[i]]` over the rows of a
    /// probability matrix (or a single distribution with one gold index).
    pub fn cross_entropy(&mut self, pred: Var, gold: &[usize]) -> Result<Var> {
        let shape = self.node(pred).shape.clone();
        let (rows, cols) = dims2(&shape).ok_or_else(|| Error::Rank {
            op: "cross_entropy",
            expected: 2,
            shape: shape.clone(),
        })?;
        if gold.len() != rows {
            return Err(Error::Dimension {
                op: "cross_entropy",
                left: shape,
                right: vec![gold.len()],
            });
        }
        if let Some(&g) = gold.iter().find(|&&g| g >= cols) {
            return Err(Error::Label(format!(
                "gold index {g} out of range for {cols} classes"
            )));
        }
        let pv = &self.node(pred).value;
        let loss = gold
            .iter()
            .enumerate()
            .map(|(i, &g)| -pv[i * cols + g].ln())
            .sum();
        let rg = self.rg(&[pred]);
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::CrossEntropy {
                pred,
                gold: gold.to_vec(),
                cols,
            },
            rg,
        ))
    }

    /// Gathers rows of `table`. Row `frozen`, if given, never receives gradient.
    pub fn embedding(
        &mut self,
        table: Var,
        indices: &[usize],
        frozen: Option<usize>,
    ) -> Result<Var> {
        let (size, dim) = self.rank2("embedding", table)?;
        if let Some(&index) = indices.iter().find(|&&i| i >= size) {
            return Err(Error::Vocab { index, size });
        }
        if indices.is_empty() {
            return Err(Error::Config(
                "embedding lookup of an empty sequence".into(),
            ));
        }
        let tv = &self.node(table).value;
        let mut out = Vec::with_capacity(indices.len() * dim);
        for &i in indices {
            out.extend_from_slice(&tv[i * dim..(i + 1) * dim]);
        }
        let rg = self.rg(&[table]);
        Ok(self.push(
            vec![indices.len(), dim],
            out,
            Op::Embedding {
                table,
                indices: indices.to_vec(),
                dim,
                frozen,
            },
            rg,
        ))
    }

    /// `Σ x²`, optionally skipping one row of a rank-2 tensor.
    pub fn sum_squares(&mut self, a: Var, skip_row: Option<usize>) -> Var {
        let n = self.node(a);
        let skip = skip_row.and_then(|r| dims2(&n.shape).map(|(_, c)| (r * c, (r + 1) * c)));
        let s = n
            .value
            .iter()
            .enumerate()
            .filter(|(i, _)| !skip.is_some_and(|(lo, hi)| (lo..hi).contains(i)))
            .map(|(_, x)| x * x)
            .sum();
        let rg = n.requires_grad;
        self.push(vec![1], vec![s], Op::SumSquares { a, skip_row: skip }, rg)
    }

    /// Backpropagates from a scalar, accumulating into leaf gradients.
    pub fn backward(&mut self, loss: Var) -> Result<()> {
        let root = self.node(loss);
        if root.value.len() != 1 {
            return Err(Error::Rank {
                op: "backward",
                expected: 0,
                shape: root.shape.clone(),
            });
        }
        let mut adj: Vec<Option<Vec<f64>>> = vec![None; loss.0 + 1];
        adj[loss.0] = Some(vec![1.0]);
        for i in (0..=loss.0).rev() {
            let Some(g) = adj[i].take() else { continue };
            if !self.nodes[i].requires_grad {
                continue;
            }
            if let Op::Leaf = self.nodes[i].op {
                for (acc, d) in self.nodes[i].grad.iter_mut().zip(&g) {
                    *acc += d;
                }
                continue;
            }
            self.propagate(i, &g, &mut adj);
        }
        Ok(())
    }

    fn propagate(&self, i: usize, g: &[f64], adj: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let out = &nodes[i].value;
        // Adjoint buffer of an input, allocated on first use; `None` when the input
        // does not need a gradient.
        macro_rules! target {
            ($v:expr) => {{
                let v: Var = $v;
                if nodes[v.0].requires_grad {
                    let len = nodes[v.0].value.len();
                    Some(adj[v.0].get_or_insert_with(|| vec![0.0; len]))
                } else {
                    None
                }
            }};
        }
        match &nodes[i].op {
            Op::Leaf => {}
            &Op::MatMul { a, b, m, k, n } => {
                let (av, bv) = (&nodes[a.0].value, &nodes[b.0].value);
                if let Some(da) = target!(a) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let brow = &bv[p * n..(p + 1) * n];
                            da[r * k + p] += grow.iter().zip(brow).map(|(x, y)| x * y).sum::<f64>();
                        }
                    }
                }
                if let Some(db) = target!(b) {
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let x = av[r * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for (d, y) in db[p * n..(p + 1) * n].iter_mut().zip(grow) {
                                *d += x * y;
                            }
                        }
                    }
                }
            }
            &Op::Transpose { a, rows, cols } => {
                if let Some(da) = target!(a) {
                    for r in 0..rows {
                        for c in 0..cols {
                            da[r * cols + c] += g[c * rows + r];
                        }
                    }
                }
            }
            &Op::Add { a, b } => {
                for v in [a, b] {
                    if let Some(d) = target!(v) {
                        d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::Sub { a, b } => {
                if let Some(d) = target!(a) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(d) = target!(b) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d -= x);
                }
            }
            &Op::Mul { a, b } => {
                if let Some(d) = target!(a) {
                    let other = &nodes[b.0].value;
                    for ((d, x), y) in d.iter_mut().zip(g).zip(other) {
                        *d += x * y;
                    }
                }
                if let Some(d) = target!(b) {
                    let other = &nodes[a.0].value;
                    for ((d, x), y) in d.iter_mut().zip(g).zip(other) {
                        *d += x * y;
                    }
                }
            }
            &Op::Scale { a, factor } => {
                if let Some(d) = target!(a) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d += factor * x);
                }
            }
            &Op::AddBias { a, bias, cols } => {
                if let Some(d) = target!(a) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
                if let Some(d) = target!(bias) {
                    for chunk in g.chunks(cols) {
                        d.iter_mut().zip(chunk).for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::Concat { parts, axis } => {
                if *axis == 0 {
                    let mut offset = 0;
                    for &p in parts {
                        let len = nodes[p.0].value.len();
                        if let Some(d) = target!(p) {
                            d.iter_mut()
                                .zip(&g[offset..offset + len])
                                .for_each(|(d, x)| *d += x);
                        }
                        offset += len;
                    }
                } else {
                    let rows = nodes[i].shape[0];
                    let total = nodes[i].shape[1];
                    let mut col = 0;
                    for &p in parts {
                        let w = nodes[p.0].shape[1];
                        if let Some(d) = target!(p) {
                            for r in 0..rows {
                                let src = &g[r * total + col..r * total + col + w];
                                d[r * w..(r + 1) * w]
                                    .iter_mut()
                                    .zip(src)
                                    .for_each(|(d, x)| *d += x);
                            }
                        }
                        col += w;
                    }
                }
            }
            &Op::Slice {
                a,
                axis,
                start,
                end,
            } => {
                let shape = nodes[a.0].shape.clone();
                if let Some(d) = target!(a) {
                    match (shape.as_slice(), axis) {
                        ([_], 0) => d[start..end].iter_mut().zip(g).for_each(|(d, x)| *d += x),
                        ([_, c], 0) => d[start * c..end * c]
                            .iter_mut()
                            .zip(g)
                            .for_each(|(d, x)| *d += x),
                        ([r, c], _) => {
                            let w = end - start;
                            for row in 0..*r {
                                let dst = &mut d[row * c + start..row * c + end];
                                dst.iter_mut()
                                    .zip(&g[row * w..(row + 1) * w])
                                    .for_each(|(d, x)| *d += x);
                            }
                        }
                        _ => unreachable!("slice shape validated at record time"),
                    }
                }
            }
            &Op::Reshape { a } => {
                if let Some(d) = target!(a) {
                    d.iter_mut().zip(g).for_each(|(d, x)| *d += x);
                }
            }
            &Op::Tanh { a } => {
                if let Some(d) = target!(a) {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += x * (1.0 - y * y);
                    }
                }
            }
            &Op::Sigmoid { a } => {
                if let Some(d) = target!(a) {
                    for ((d, x), y) in d.iter_mut().zip(g).zip(out) {
                        *d += x * y * (1.0 - y);
                    }
                }
            }
            &Op::Elu { a, alpha } => {
                let input = &nodes[a.0].value;
                if let Some(d) = target!(a) {
                    for ((d, x), (&u, &y)) in d.iter_mut().zip(g).zip(input.iter().zip(out)) {
                        *d += if u > 0.0 { *x } else { x * (y + alpha) };
                    }
                }
            }
            &Op::Relu { a } => {
                let input = &nodes[a.0].value;
                if let Some(d) = target!(a) {
                    for ((d, x), &u) in d.iter_mut().zip(g).zip(input) {
                        if u > 0.0 {
                            *d += x;
                        }
                    }
                }
            }
            &Op::LeakyRelu { a, slope } => {
                let input = &nodes[a.0].value;
                if let Some(d) = target!(a) {
                    for ((d, x), &u) in d.iter_mut().zip(g).zip(input) {
                        *d += if u >= 0.0 { *x } else { slope * x };
                    }
                }
            }
            &Op::Sum { a } => {
                if let Some(d) = target!(a) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean { a } => {
                if let Some(d) = target!(a) {
                    let s = g[0] / d.len() as f64;
                    d.iter_mut().for_each(|d| *d += s);
                }
            }
            &Op::MaskedSoftmax { a, cols } => {
                if let Some(d) = target!(a) {
                    for ((drow, grow), yrow) in
                        d.chunks_mut(cols).zip(g.chunks(cols)).zip(out.chunks(cols))
                    {
                        let dot: f64 = grow.iter().zip(yrow).map(|(x, y)| x * y).sum();
                        for ((d, x), y) in drow.iter_mut().zip(grow).zip(yrow) {
                            *d += y * (x - dot);
                        }
                    }
                }
            }
            &Op::OuterSum { col, row, m, n } => {
                if let Some(d) = target!(col) {
                    for r in 0..m {
                        d[r] += g[r * n..(r + 1) * n].iter().sum::<f64>();
                    }
                }
                if let Some(d) = target!(row) {
                    for r in 0..m {
                        d.iter_mut()
                            .zip(&g[r * n..(r + 1) * n])
                            .for_each(|(d, x)| *d += x);
                    }
                }
            }
            Op::CrossEntropy { pred, gold, cols } => {
                let pv = &nodes[pred.0].value;
                if let Some(d) = target!(*pred) {
                    for (r, &k) in gold.iter().enumerate() {
                        d[r * cols + k] -= g[0] / pv[r * cols + k];
                    }
                }
            }
            Op::Embedding {
                table,
                indices,
                dim,
                frozen,
            } => {
                if let Some(d) = target!(*table) {
                    for (r, &idx) in indices.iter().enumerate() {
                        if Some(idx) == *frozen {
                            continue;
                        }
                        let src = &g[r * dim..(r + 1) * dim];
                        d[idx * dim..(idx + 1) * dim]
                            .iter_mut()
                            .zip(src)
                            .for_each(|(d, x)| *d += x);
                    }
                }
            }
            &Op::SumSquares { a, skip_row } => {
                let input = &nodes[a.0].value;
                if let Some(d) = target!(a) {
                    for (j, (d, &x)) in d.iter_mut().zip(input).enumerate() {
                        if skip_row.is_some_and(|(lo, hi)| (lo..hi).contains(&j)) {
                            continue;
                        }
                        *d += 2.0 * x * g[0];
                    }
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn close(a: f64, b: f64, tol: f64) -> bool {
        (a - b).abs() <= tol
    }

    #[test]
    fn matmul_identity_and_hand_case() {
        let mut t = Tape::new();
        let i2 = t.constant(&Tensor::from_rows(&[&[1.0, 0.0], &[0.0, 1.0]]).unwrap());
        let m = t.constant(&Tensor::from_rows(&[&[1.0, 2.0], &[3.0, 4.0]]).unwrap());
        let p = t.matmul(i2, m).unwrap();
        assert_eq!(t.value(p), &[1.0, 2.0, 3.0, 4.0]);

        let row = t.constant(&Tensor::from_rows(&[&[1.0, 2.0]]).unwrap());
        let col = t.constant(&Tensor::from_rows(&[&[3.0], &[4.0]]).unwrap());
        let p = t.matmul(row, col).unwrap();
        assert_eq!(t.value(p), &[11.0]);

        let z = t.constant(&Tensor::zeros(&[2, 3]));
        let any = t.constant(&Tensor::matrix(3, 2, vec![1.5, -2.0, 3.0, 0.25, 7.0, 9.0]).unwrap());
        let p = t.matmul(z, any).unwrap();
        assert_eq!(t.shape(p), &[2, 2]);
        assert!(t.value(p).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn matmul_shape_mismatch_names_both_shapes() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::zeros(&[2, 3]));
        let b = t.constant(&Tensor::zeros(&[2, 3]));
        let err = t.matmul(a, b).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(matches!(err, Error::Dimension { .. }));
    }

    #[test]
    fn softmax_examples() {
        let mut t = Tape::new();
        let v = t.constant(&Tensor::vector(vec![0.7, 0.7, 0.7]));
        let s = t.masked_softmax(v, &[true; 3]).unwrap();
        for &p in t.value(s) {
            assert!(close(p, 1.0 / 3.0, 1e-15));
        }

        let v = t.constant(&Tensor::vector(vec![-42.0]));
        let s = t.masked_softmax(v, &[true]).unwrap();
        assert_eq!(t.value(s), &[1.0]);

        let v = t.constant(&Tensor::vector(vec![0.0, 2f64.ln()]));
        let s = t.masked_softmax(v, &[true, true]).unwrap();
        assert!(close(t.value(s)[0], 1.0 / 3.0, 1e-15));
        assert!(close(t.value(s)[1], 2.0 / 3.0, 1e-15));
    }

    #[test]
    fn softmax_empty_mask_is_degenerate() {
        let mut t = Tape::new();
        let v = t.constant(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(
            t.masked_softmax(v, &[false, false]),
            Err(Error::DegenerateNeighborhood { node: 0 })
        ));
    }

    #[test]
    fn softmax_survives_large_magnitudes() {
        let mut t = Tape::new();
        let v = t.constant(&Tensor::vector(vec![1000.0, -1000.0, 999.0, 5.0]));
        let s = t.masked_softmax(v, &[true, true, true, false]).unwrap();
        let out = t.value(s);
        assert!(out.iter().all(|p| p.is_finite()));
        assert_eq!(out[3], 0.0);
        assert!(close(out.iter().sum::<f64>(), 1.0, 1e-12));
    }

    #[test]
    fn pointwise_examples() {
        let mut t = Tape::new();
        let x = t.constant(&Tensor::vector(vec![5.0, 0.0, -1.0]));
        let y = t.leaky_relu(x, 0.2);
        assert_eq!(t.value(y), &[5.0, 0.0, -0.2]);

        let z = t.constant(&Tensor::scalar(0.0));
        let s = t.sigmoid(z);
        assert_eq!(t.value(s), &[0.5]);

        let h = t.constant(&Tensor::scalar(3f64.ln() / 2.0));
        let th = t.tanh(h);
        assert!(close(t.value(th)[0], 0.5, 1e-15));

        let a = t.constant(&Tensor::vector(vec![1.0]));
        let b = t.constant(&Tensor::vector(vec![2.0]));
        let c = t.concat(&[a, b], 0).unwrap();
        assert_eq!(t.value(c), &[1.0, 2.0]);
    }

    #[test]
    fn cross_entropy_examples() {
        let mut t = Tape::new();
        let p = t.constant(&Tensor::vector(vec![1.0, 0.0, 0.0]));
        let l = t.cross_entropy(p, &[0]).unwrap();
        assert_eq!(t.value(l), &[0.0]);

        let p = t.constant(&Tensor::vector(vec![1.0 / 3.0; 3]));
        let l = t.cross_entropy(p, &[2]).unwrap();
        assert!(close(t.value(l)[0], 3f64.ln(), 1e-12));

        let p = t.constant(&Tensor::vector(vec![0.25, 0.5, 0.25]));
        let l = t.cross_entropy(p, &[1]).unwrap();
        assert!(close(t.value(l)[0], 2f64.ln(), 1e-12));

        assert!(matches!(t.cross_entropy(p, &[3]), Err(Error::Label(_))));
    }

    #[test]
    fn backward_examples() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::zeros(&[2, 3]));
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(x), &[1.0; 6]);

        let mut t = Tape::new();
        let x = t.param(&Tensor::scalar(2.0));
        let y = t.param(&Tensor::scalar(3.0));
        let p = t.mul(x, y).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x), &[3.0]);
        assert_eq!(t.grad(y), &[2.0]);

        // Accumulates until zeroed.
        t.backward(p).unwrap();
        assert_eq!(t.grad(x), &[6.0]);
        t.zero_grad();
        assert_eq!(t.grad(x), &[0.0]);
    }

    #[test]
    fn detached_leaf_gets_no_gradient() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::scalar(2.0));
        let c = t.constant(&Tensor::scalar(3.0));
        let p = t.mul(x, c).unwrap();
        t.backward(p).unwrap();
        assert_eq!(t.grad(x), &[3.0]);
        assert!(t.grad(c).iter().all(|&g| g == 0.0));
    }

    #[test]
    fn leaves_off_the_loss_path_stay_zero() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::vector(vec![1.0, 2.0]));
        let unused = t.param(&Tensor::vector(vec![5.0, 6.0]));
        let _dead = t.tanh(unused);
        let s = t.sum(x);
        t.backward(s).unwrap();
        assert_eq!(t.grad(unused), &[0.0, 0.0]);
    }

    #[test]
    fn backward_rejects_non_scalar() {
        let mut t = Tape::new();
        let x = t.param(&Tensor::vector(vec![1.0, 2.0]));
        assert!(matches!(t.backward(x), Err(Error::Rank { .. })));
    }

    #[test]
    fn embedding_freezes_pad_row() {
        let mut t = Tape::new();
        let table = t.param(&Tensor::matrix(3, 2, vec![0.0, 0.0, 1.0, 2.0, 3.0, 4.0]).unwrap());
        let e = t.embedding(table, &[0, 2, 2], Some(0)).unwrap();
        assert_eq!(t.value(e), &[0.0, 0.0, 3.0, 4.0, 3.0, 4.0]);
        let s = t.sum(e);
        t.backward(s).unwrap();
        assert_eq!(t.grad(table), &[0.0, 0.0, 0.0, 0.0, 2.0, 2.0]);
        assert!(matches!(
            t.embedding(table, &[3], Some(0)),
            Err(Error::Vocab { index: 3, size: 3 })
        ));
    }

    #[test]
    fn binary_ops_reject_shape_mismatch() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::zeros(&[2]));
        let b = t.constant(&Tensor::zeros(&[3]));
        assert!(matches!(
            t.add(a, b),
            Err(Error::Dimension { op: "add", .. })
        ));
        assert!(matches!(
            t.mul(a, b),
            Err(Error::Dimension { op: "mul", .. })
        ));
    }

    #[test]
    fn masked_softmax_propagates_nan_scores() {
        let mut t = Tape::new();
        let a = t.constant(&Tensor::matrix(2, 2, vec![f64::NAN, 1.0, 0.5, 0.5]).unwrap());
        let p = t.masked_softmax(a, &[true, true, true, true]).unwrap();
        assert!(t.value(p)[..2].iter().all(|v| v.is_nan()));
        assert_eq!(&t.value(p)[2..], &[0.5, 0.5]);
    }
}
