//! Reverse-mode differentiation over a recorded operation log.
//!
//! A [`Tape`] stores every tensor produced during a forward pass together
//! with the operation that produced it. Operations are appended in execution
//! order, so the log is already topologically sorted and [`Tape::backward`]
//! can replay it in reverse, accumulating input gradients additively.
//!
//! Reductions accumulate strictly left-to-right so repeated runs on the same
//! platform produce bit-identical values. There is no broadcasting beyond
//! explicit scalar ops; shape alignment is always an explicit op.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a tensor recorded on a tape. Only valid for the tape that
/// created it.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

/// Nonlinearity applied inside the fused convolution op.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }

    /// Local derivative expressed in terms of the op output.
    fn derivative_from_output(self, y: f64) -> f64 {
        match self {
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - y * y,
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "relu" => Ok(Activation::Relu),
            "tanh" => Ok(Activation::Tanh),
            "identity" => Ok(Activation::Identity),
            other => Err(Error::Config(format!(
                "unknown activation '{other}' (expected relu, tanh or identity)"
            ))),
        }
    }
}

impl std::fmt::Display for Activation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Activation::Relu => "relu",
            Activation::Tanh => "tanh",
            Activation::Identity => "identity",
        };
        f.write_str(s)
    }
}

enum Op {
    Leaf,
    MatMul { a: usize, b: usize, m: usize, k: usize, n: usize },
    Add { a: usize, b: usize },
    Sub { a: usize, b: usize },
    Mul { a: usize, b: usize },
    Scale { a: usize, factor: f64 },
    Sigmoid { a: usize },
    Tanh { a: usize },
    Relu { a: usize },
    AddBias { m: usize, bias: usize, rows: usize, cols: usize },
    ConcatCols { a: usize, b: usize, rows: usize, a_cols: usize, b_cols: usize },
    Sum { a: usize },
    Reshape { a: usize },
    TimeSlice { a: usize, step: usize, steps: usize, features: usize },
    GatherRows { table: usize, ids: Vec<usize>, dim: usize },
    CharConv {
        input: usize,
        filter: usize,
        bias: usize,
        activation: Activation,
        sentences: usize,
        words: usize,
        chars: usize,
        in_dim: usize,
        out_dim: usize,
        window: usize,
    },
    MaxPoolChars { a: usize, sentences: usize, words: usize, chars: usize, features: usize },
    Softmax { a: usize, rows: usize, cols: usize },
    SoftmaxCrossEntropy { logits: usize, labels: Vec<usize>, rows: usize, cols: usize },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f64>,
    op: Op,
    trainable: bool,
}

/// Operation log with stored intermediate values and, after
/// [`Tape::backward`], per-node gradients.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Option<Vec<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f64>, op: Op) -> TensorId {
        self.nodes.push(Node { shape, data, op, trainable: false });
        TensorId(self.nodes.len() - 1)
    }

    fn check(&self, id: TensorId, op: &'static str) -> Result<usize> {
        if id.0 >= self.nodes.len() {
            return Err(Error::Usage(format!(
                "{op}: tensor id {} was not recorded on this tape",
                id.0
            )));
        }
        Ok(id.0)
    }

    /// Records a constant leaf (no gradient of interest).
    pub fn constant(&mut self, t: &Tensor) -> TensorId {
        self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf)
    }

    /// Records a trainable leaf; its gradient is read back after backward.
    pub fn parameter(&mut self, t: &Tensor) -> TensorId {
        let id = self.push(t.shape().to_vec(), t.data().to_vec(), Op::Leaf);
        self.nodes[id.0].trainable = true;
        id
    }

    pub fn constant_from(&mut self, shape: Vec<usize>, data: Vec<f64>) -> Result<TensorId> {
        let t = Tensor::new(shape, data)?;
        Ok(self.constant(&t))
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.nodes[id.0].shape
    }

    pub fn is_trainable(&self, id: TensorId) -> bool {
        self.nodes[id.0].trainable
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].data
    }

    pub fn scalar_value(&self, id: TensorId) -> f64 {
        debug_assert_eq!(self.nodes[id.0].data.len(), 1);
        self.nodes[id.0].data[0]
    }

    /// Copies a recorded value out as an owned [`Tensor`].
    pub fn tensor(&self, id: TensorId) -> Tensor {
        Tensor::new(self.nodes[id.0].shape.clone(), self.nodes[id.0].data.clone())
            .expect("recorded nodes always have consistent shapes")
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// `a[m,k] · b[k,n]`. Backward accumulates `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ai = self.check(a, "matmul")?;
        let bi = self.check(b, "matmul")?;
        let (ashape, bshape) = (&self.nodes[ai].shape, &self.nodes[bi].shape);
        if ashape.len() != 2 || bshape.len() != 2 || ashape[1] != bshape[0] {
            return Err(Error::DimensionMismatch {
                op: "matmul",
                left: ashape.clone(),
                right: bshape.clone(),
            });
        }
        let (m, k, n) = (ashape[0], ashape[1], bshape[1]);
        let data = matmul(&self.nodes[ai].data, &self.nodes[bi].data, m, k, n);
        Ok(self.push(vec![m, n], data, Op::MatMul { a: ai, b: bi, m, k, n }))
    }

    fn binary_elementwise(
        &mut self,
        name: &'static str,
        a: TensorId,
        b: TensorId,
        f: impl Fn(f64, f64) -> f64,
        op: impl Fn(usize, usize) -> Op,
    ) -> Result<TensorId> {
        let ai = self.check(a, name)?;
        let bi = self.check(b, name)?;
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(Error::DimensionMismatch {
                op: name,
                left: self.nodes[ai].shape.clone(),
                right: self.nodes[bi].shape.clone(),
            });
        }
        let data = self.nodes[ai]
            .data
            .iter()
            .zip(&self.nodes[bi].data)
            .map(|(&x, &y)| f(x, y))
            .collect();
        Ok(self.push(self.nodes[ai].shape.clone(), data, op(ai, bi)))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("add", a, b, |x, y| x + y, |a, b| Op::Add { a, b })
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("sub", a, b, |x, y| x - y, |a, b| Op::Sub { a, b })
    }

    /// Hadamard product.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.binary_elementwise("mul", a, b, |x, y| x * y, |a, b| Op::Mul { a, b })
    }

    /// The one permitted scalar broadcast.
    pub fn scale(&mut self, a: TensorId, factor: f64) -> Result<TensorId> {
        let ai = self.check(a, "scale")?;
        let data = self.nodes[ai].data.iter().map(|&x| x * factor).collect();
        Ok(self.push(self.nodes[ai].shape.clone(), data, Op::Scale { a: ai, factor }))
    }

    fn unary(
        &mut self,
        name: &'static str,
        a: TensorId,
        f: impl Fn(f64) -> f64,
        op: impl Fn(usize) -> Op,
    ) -> Result<TensorId> {
        let ai = self.check(a, name)?;
        let data = self.nodes[ai].data.iter().map(|&x| f(x)).collect();
        Ok(self.push(self.nodes[ai].shape.clone(), data, op(ai)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("sigmoid", a, |x| 1.0 / (1.0 + (-x).exp()), |a| Op::Sigmoid { a })
    }

    pub fn tanh(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("tanh", a, f64::tanh, |a| Op::Tanh { a })
    }

    pub fn relu(&mut self, a: TensorId) -> Result<TensorId> {
        self.unary("relu", a, |x| x.max(0.0), |a| Op::Relu { a })
    }

    /// Adds a `[cols]` vector to every row of a `[rows, cols]` matrix.
    pub fn add_bias(&mut self, m: TensorId, bias: TensorId) -> Result<TensorId> {
        let mi = self.check(m, "add_bias")?;
        let bi = self.check(bias, "add_bias")?;
        let mshape = &self.nodes[mi].shape;
        let bshape = &self.nodes[bi].shape;
        if mshape.len() != 2 || bshape.len() != 1 || bshape[0] != mshape[1] {
            return Err(Error::DimensionMismatch {
                op: "add_bias",
                left: mshape.clone(),
                right: bshape.clone(),
            });
        }
        let (rows, cols) = (mshape[0], mshape[1]);
        let mut data = self.nodes[mi].data.clone();
        for r in 0..rows {
            for (v, b) in data[r * cols..(r + 1) * cols].iter_mut().zip(&self.nodes[bi].data) {
                *v += b;
            }
        }
        Ok(self.push(vec![rows, cols], data, Op::AddBias { m: mi, bias: bi, rows, cols }))
    }

    /// `[rows, a_cols] ++ [rows, b_cols]` along the feature axis.
    pub fn concat_cols(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let ai = self.check(a, "concat_cols")?;
        let bi = self.check(b, "concat_cols")?;
        let ashape = &self.nodes[ai].shape;
        let bshape = &self.nodes[bi].shape;
        if ashape.len() != 2 || bshape.len() != 2 || ashape[0] != bshape[0] {
            return Err(Error::DimensionMismatch {
                op: "concat_cols",
                left: ashape.clone(),
                right: bshape.clone(),
            });
        }
        let (rows, a_cols, b_cols) = (ashape[0], ashape[1], bshape[1]);
        let mut data = Vec::with_capacity(rows * (a_cols + b_cols));
        for r in 0..rows {
            data.extend_from_slice(&self.nodes[ai].data[r * a_cols..(r + 1) * a_cols]);
            data.extend_from_slice(&self.nodes[bi].data[r * b_cols..(r + 1) * b_cols]);
        }
        Ok(self.push(
            vec![rows, a_cols + b_cols],
            data,
            Op::ConcatCols { a: ai, b: bi, rows, a_cols, b_cols },
        ))
    }

    /// Left-to-right sum of every element, producing a scalar.
    pub fn sum(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check(a, "sum")?;
        let mut acc = 0.0;
        for &v in &self.nodes[ai].data {
            acc += v;
        }
        Ok(self.push(vec![1], vec![acc], Op::Sum { a: ai }))
    }

    pub fn reshape(&mut self, a: TensorId, shape: Vec<usize>) -> Result<TensorId> {
        let ai = self.check(a, "reshape")?;
        let numel: usize = shape.iter().product();
        if shape.is_empty() || numel != self.nodes[ai].data.len() {
            return Err(Error::DimensionMismatch {
                op: "reshape",
                left: self.nodes[ai].shape.clone(),
                right: shape,
            });
        }
        let data = self.nodes[ai].data.clone();
        Ok(self.push(shape, data, Op::Reshape { a: ai }))
    }

    /// Extracts step `t` from `[sentences, steps, features]` as
    /// `[sentences, features]`.
    pub fn time_slice(&mut self, a: TensorId, t: usize) -> Result<TensorId> {
        let ai = self.check(a, "time_slice")?;
        let shape = &self.nodes[ai].shape;
        if shape.len() != 3 {
            return Err(Error::DimensionMismatch {
                op: "time_slice",
                left: shape.clone(),
                right: vec![],
            });
        }
        let (sentences, steps, features) = (shape[0], shape[1], shape[2]);
        if t >= steps {
            return Err(Error::IndexOutOfRange { what: "time step", index: t, size: steps });
        }
        let mut data = Vec::with_capacity(sentences * features);
        for s in 0..sentences {
            let start = (s * steps + t) * features;
            data.extend_from_slice(&self.nodes[ai].data[start..start + features]);
        }
        Ok(self.push(
            vec![sentences, features],
            data,
            Op::TimeSlice { a: ai, step: t, steps, features },
        ))
    }

    /// Embedding lookup: gathers `ids` rows of a `[vocab, dim]` table.
    /// Backward scatters gradients back into the gathered rows.
    pub fn gather_rows(&mut self, table: TensorId, ids: &[usize]) -> Result<TensorId> {
        let ti = self.check(table, "gather_rows")?;
        let shape = &self.nodes[ti].shape;
        if shape.len() != 2 {
            return Err(Error::DimensionMismatch {
                op: "gather_rows",
                left: shape.clone(),
                right: vec![],
            });
        }
        if ids.is_empty() {
            return Err(Error::Usage("gather_rows: empty id list".into()));
        }
        let (vocab, dim) = (shape[0], shape[1]);
        if let Some(&bad) = ids.iter().find(|&&id| id >= vocab) {
            return Err(Error::IndexOutOfRange { what: "embedding row", index: bad, size: vocab });
        }
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            data.extend_from_slice(&self.nodes[ti].data[id * dim..(id + 1) * dim]);
        }
        Ok(self.push(
            vec![ids.len(), dim],
            data,
            Op::GatherRows { table: ti, ids: ids.to_vec(), dim },
        ))
    }

    /// Character window convolution over `[S, M, N, in_dim]` with a
    /// `[1, window, in_dim, out_dim]` filter and `[out_dim]` bias.
    ///
    /// The window slides along the character axis only, zero-padded at the
    /// tail so the output keeps length `N`:
    /// `out[s,i,j,k] = f(bias[k] + Σ_{dj<window, q} in[s,i,j+dj,q]·filter[0,dj,q,k])`.
    pub fn char_conv(
        &mut self,
        input: TensorId,
        filter: TensorId,
        bias: TensorId,
        activation: Activation,
    ) -> Result<TensorId> {
        let ii = self.check(input, "char_conv")?;
        let fi = self.check(filter, "char_conv")?;
        let bi = self.check(bias, "char_conv")?;
        let ishape = self.nodes[ii].shape.clone();
        let fshape = self.nodes[fi].shape.clone();
        if ishape.len() != 4 || fshape.len() != 4 || fshape[0] != 1 || fshape[2] != ishape[3] {
            return Err(Error::DimensionMismatch { op: "char_conv", left: ishape, right: fshape });
        }
        let (sentences, words, chars, in_dim) = (ishape[0], ishape[1], ishape[2], ishape[3]);
        let (window, out_dim) = (fshape[1], fshape[3]);
        if window == 0 {
            return Err(Error::Config("char_conv: window must be >= 1".into()));
        }
        let bshape = &self.nodes[bi].shape;
        if bshape.len() != 1 || bshape[0] != out_dim {
            return Err(Error::DimensionMismatch {
                op: "char_conv",
                left: bshape.clone(),
                right: vec![out_dim],
            });
        }

        let in_data = &self.nodes[ii].data;
        let f_data = &self.nodes[fi].data;
        let b_data = &self.nodes[bi].data;
        let mut out = vec![0.0; sentences * words * chars * out_dim];
        let mut acc = vec![0.0; out_dim];
        for s in 0..sentences {
            for i in 0..words {
                let word_base = (s * words + i) * chars;
                for j in 0..chars {
                    acc.copy_from_slice(b_data);
                    for dj in 0..window {
                        let jj = j + dj;
                        if jj >= chars {
                            break; // zero padding past the last character
                        }
                        let crow = &in_data[(word_base + jj) * in_dim..(word_base + jj + 1) * in_dim];
                        for (q, &cv) in crow.iter().enumerate() {
                            let frow = &f_data[(dj * in_dim + q) * out_dim..(dj * in_dim + q + 1) * out_dim];
                            for (a, &fv) in acc.iter_mut().zip(frow) {
                                *a += cv * fv;
                            }
                        }
                    }
                    let orow = (word_base + j) * out_dim;
                    for (o, &a) in out[orow..orow + out_dim].iter_mut().zip(&acc) {
                        *o = activation.apply(a);
                    }
                }
            }
        }
        Ok(self.push(
            vec![sentences, words, chars, out_dim],
            out,
            Op::CharConv {
                input: ii,
                filter: fi,
                bias: bi,
                activation,
                sentences,
                words,
                chars,
                in_dim,
                out_dim,
                window,
            },
        ))
    }

    /// Max over the character axis: `[S, M, N, d] -> [S, M, d]`.
    /// Ties route the gradient to the first maximal position.
    pub fn max_pool_chars(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check(a, "max_pool_chars")?;
        let shape = self.nodes[ai].shape.clone();
        if shape.len() != 4 {
            return Err(Error::DimensionMismatch { op: "max_pool_chars", left: shape, right: vec![] });
        }
        let (sentences, words, chars, features) = (shape[0], shape[1], shape[2], shape[3]);
        let data = &self.nodes[ai].data;
        let mut out = vec![0.0; sentences * words * features];
        for sw in 0..sentences * words {
            let base = sw * chars * features;
            let orow = &mut out[sw * features..(sw + 1) * features];
            orow.copy_from_slice(&data[base..base + features]);
            for j in 1..chars {
                let row = &data[base + j * features..base + (j + 1) * features];
                for (o, &v) in orow.iter_mut().zip(row) {
                    if v > *o {
                        *o = v;
                    }
                }
            }
        }
        Ok(self.push(
            vec![sentences, words, features],
            out,
            Op::MaxPoolChars { a: ai, sentences, words, chars, features },
        ))
    }

    /// Row softmax of a `[rows, cols]` matrix.
    pub fn softmax(&mut self, a: TensorId) -> Result<TensorId> {
        let ai = self.check(a, "softmax")?;
        let shape = self.nodes[ai].shape.clone();
        if shape.len() != 2 {
            return Err(Error::DimensionMismatch { op: "softmax", left: shape, right: vec![] });
        }
        let (rows, cols) = (shape[0], shape[1]);
        let mut out = vec![0.0; rows * cols];
        for r in 0..rows {
            let row = &self.nodes[ai].data[r * cols..(r + 1) * cols];
            softmax_row(row, &mut out[r * cols..(r + 1) * cols]);
        }
        Ok(self.push(vec![rows, cols], out, Op::Softmax { a: ai, rows, cols }))
    }

    /// Mean over the batch of `-log softmax(logits)[label]`.
    /// Backward yields `(softmax - onehot) / rows`.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let li = self.check(logits, "softmax_cross_entropy")?;
        let shape = self.nodes[li].shape.clone();
        if shape.len() != 2 || shape[0] != labels.len() {
            return Err(Error::DimensionMismatch {
                op: "softmax_cross_entropy",
                left: shape,
                right: vec![labels.len()],
            });
        }
        let (rows, cols) = (shape[0], shape[1]);
        for (r, &label) in labels.iter().enumerate() {
            if label >= cols {
                return Err(Error::Data(format!(
                    "label {label} at row {r} out of range for {cols} classes"
                )));
            }
        }
        let mut total = 0.0;
        for (r, &label) in labels.iter().enumerate() {
            let row = &self.nodes[li].data[r * cols..(r + 1) * cols];
            let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
            let mut lse = 0.0;
            for &v in row {
                lse += (v - max).exp();
            }
            total += -(row[label] - max - lse.ln());
        }
        let loss = total / rows as f64;
        Ok(self.push(
            vec![1],
            vec![loss],
            Op::SoftmaxCrossEntropy { logits: li, labels: labels.to_vec(), rows, cols },
        ))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Replays the log in reverse from a scalar loss, filling gradients for
    /// every participating tensor. May be called once per tape.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let li = self.check(loss, "backward")?;
        if self.nodes[li].data.len() != 1 {
            return Err(Error::Usage(format!(
                "backward requires a scalar loss, got shape {:?}",
                self.nodes[li].shape
            )));
        }
        if self.grads.is_some() {
            return Err(Error::Usage(
                "backward already ran on this tape; record a fresh tape instead".into(),
            ));
        }
        let mut grads: Vec<Vec<f64>> =
            self.nodes.iter().map(|n| vec![0.0; n.data.len()]).collect();
        grads[li][0] = 1.0;

        for i in (0..self.nodes.len()).rev() {
            match &self.nodes[i].op {
                Op::Leaf => {}
                Op::MatMul { a, b, m, k, n } => {
                    let (a, b, m, k, n) = (*a, *b, *m, *k, *n);
                    let g = std::mem::take(&mut grads[i]);
                    // dA = g·Bᵀ
                    let bt = transpose(&self.nodes[b].data, k, n);
                    let da = matmul(&g, &bt, m, n, k);
                    add_into(&mut grads[a], &da);
                    // dB = Aᵀ·g
                    let at = transpose(&self.nodes[a].data, m, k);
                    let db = matmul(&at, &g, k, m, n);
                    add_into(&mut grads[b], &db);
                    grads[i] = g;
                }
                Op::Add { a, b } => {
                    let (a, b) = (*a, *b);
                    let g = std::mem::take(&mut grads[i]);
                    add_into(&mut grads[a], &g);
                    add_into(&mut grads[b], &g);
                    grads[i] = g;
                }
                Op::Sub { a, b } => {
                    let (a, b) = (*a, *b);
                    let g = std::mem::take(&mut grads[i]);
                    add_into(&mut grads[a], &g);
                    for (gb, &gv) in grads[b].iter_mut().zip(&g) {
                        *gb -= gv;
                    }
                    grads[i] = g;
                }
                Op::Mul { a, b } => {
                    let (a, b) = (*a, *b);
                    let g = std::mem::take(&mut grads[i]);
                    for ((ga, &gv), &bv) in grads[a].iter_mut().zip(&g).zip(&self.nodes[b].data) {
                        *ga += gv * bv;
                    }
                    for ((gb, &gv), &av) in grads[b].iter_mut().zip(&g).zip(&self.nodes[a].data) {
                        *gb += gv * av;
                    }
                    grads[i] = g;
                }
                Op::Scale { a, factor } => {
                    let (a, factor) = (*a, *factor);
                    let g = std::mem::take(&mut grads[i]);
                    for (ga, &gv) in grads[a].iter_mut().zip(&g) {
                        *ga += gv * factor;
                    }
                    grads[i] = g;
                }
                Op::Sigmoid { a } => {
                    let a = *a;
                    let g = std::mem::take(&mut grads[i]);
                    for ((ga, &gv), &y) in grads[a].iter_mut().zip(&g).zip(&self.nodes[i].data) {
                        *ga += gv * y * (1.0 - y);
                    }
                    grads[i] = g;
                }
                Op::Tanh { a } => {
                    let a = *a;
                    let g = std::mem::take(&mut grads[i]);
                    for ((ga, &gv), &y) in grads[a].iter_mut().zip(&g).zip(&self.nodes[i].data) {
                        *ga += gv * (1.0 - y * y);
                    }
                    grads[i] = g;
                }
                Op::Relu { a } => {
                    let a = *a;
                    let g = std::mem::take(&mut grads[i]);
                    for ((ga, &gv), &x) in grads[a].iter_mut().zip(&g).zip(&self.nodes[a].data) {
                        if x > 0.0 {
                            *ga += gv;
                        }
                    }
                    grads[i] = g;
                }
                Op::AddBias { m, bias, rows, cols } => {
                    let (m, bias, rows, cols) = (*m, *bias, *rows, *cols);
                    let g = std::mem::take(&mut grads[i]);
                    add_into(&mut grads[m], &g);
                    for r in 0..rows {
                        for (gb, &gv) in grads[bias].iter_mut().zip(&g[r * cols..(r + 1) * cols]) {
                            *gb += gv;
                        }
                    }
                    grads[i] = g;
                }
                Op::ConcatCols { a, b, rows, a_cols, b_cols } => {
                    let (a, b, rows, a_cols, b_cols) = (*a, *b, *rows, *a_cols, *b_cols);
                    let g = std::mem::take(&mut grads[i]);
                    let cols = a_cols + b_cols;
                    for r in 0..rows {
                        let grow = &g[r * cols..(r + 1) * cols];
                        for (ga, &gv) in
                            grads[a][r * a_cols..(r + 1) * a_cols].iter_mut().zip(&grow[..a_cols])
                        {
                            *ga += gv;
                        }
                        for (gb, &gv) in
                            grads[b][r * b_cols..(r + 1) * b_cols].iter_mut().zip(&grow[a_cols..])
                        {
                            *gb += gv;
                        }
                    }
                    grads[i] = g;
                }
                Op::Sum { a } => {
                    let a = *a;
                    let gv = grads[i][0];
                    for ga in grads[a].iter_mut() {
                        *ga += gv;
                    }
                }
                Op::Reshape { a } => {
                    let a = *a;
                    let g = std::mem::take(&mut grads[i]);
                    add_into(&mut grads[a], &g);
                    grads[i] = g;
                }
                Op::TimeSlice { a, step, steps, features } => {
                    let (a, step, steps, features) = (*a, *step, *steps, *features);
                    let g = std::mem::take(&mut grads[i]);
                    let sentences = g.len() / features;
                    for s in 0..sentences {
                        let start = (s * steps + step) * features;
                        for (ga, &gv) in grads[a][start..start + features]
                            .iter_mut()
                            .zip(&g[s * features..(s + 1) * features])
                        {
                            *ga += gv;
                        }
                    }
                    grads[i] = g;
                }
                Op::GatherRows { table, ids, dim } => {
                    let (table, dim) = (*table, *dim);
                    let ids = ids.clone();
                    let g = std::mem::take(&mut grads[i]);
                    for (r, &id) in ids.iter().enumerate() {
                        for (gt, &gv) in grads[table][id * dim..(id + 1) * dim]
                            .iter_mut()
                            .zip(&g[r * dim..(r + 1) * dim])
                        {
                            *gt += gv;
                        }
                    }
                    grads[i] = g;
                }
                Op::CharConv {
                    input,
                    filter,
                    bias,
                    activation,
                    sentences,
                    words,
                    chars,
                    in_dim,
                    out_dim,
                    window,
                } => {
                    let (input, filter, bias, activation) = (*input, *filter, *bias, *activation);
                    let (sentences, words, chars, in_dim, out_dim, window) =
                        (*sentences, *words, *chars, *in_dim, *out_dim, *window);
                    let g = std::mem::take(&mut grads[i]);
                    let mut din = std::mem::take(&mut grads[input]);
                    let mut dfilter = std::mem::take(&mut grads[filter]);
                    let mut dbias = std::mem::take(&mut grads[bias]);
                    let out = &self.nodes[i].data;
                    let in_data = &self.nodes[input].data;
                    let f_data = &self.nodes[filter].data;
                    let mut dpre = vec![0.0; out_dim];
                    for s in 0..sentences {
                        for w in 0..words {
                            let word_base = (s * words + w) * chars;
                            for j in 0..chars {
                                let orow = (word_base + j) * out_dim;
                                for k in 0..out_dim {
                                    dpre[k] = g[orow + k]
                                        * activation.derivative_from_output(out[orow + k]);
                                }
                                for (k, &d) in dpre.iter().enumerate() {
                                    dbias[k] += d;
                                }
                                for dj in 0..window {
                                    let jj = j + dj;
                                    if jj >= chars {
                                        break;
                                    }
                                    let crow = (word_base + jj) * in_dim;
                                    for q in 0..in_dim {
                                        let frow = (dj * in_dim + q) * out_dim;
                                        let cv = in_data[crow + q];
                                        let mut dc = 0.0;
                                        for (k, &d) in dpre.iter().enumerate() {
                                            dc += d * f_data[frow + k];
                                            dfilter[frow + k] += d * cv;
                                        }
                                        din[crow + q] += dc;
                                    }
                                }
                            }
                        }
                    }
                    grads[input] = din;
                    grads[filter] = dfilter;
                    grads[bias] = dbias;
                    grads[i] = g;
                }
                Op::MaxPoolChars { a, sentences, words, chars, features } => {
                    let (a, sentences, words, chars, features) =
                        (*a, *sentences, *words, *chars, *features);
                    let g = std::mem::take(&mut grads[i]);
                    let mut da = std::mem::take(&mut grads[a]);
                    let data = &self.nodes[a].data;
                    for sw in 0..sentences * words {
                        let base = sw * chars * features;
                        for f in 0..features {
                            // first maximal index, recomputed with the same scan
                            let mut best = 0;
                            let mut best_val = data[base + f];
                            for j in 1..chars {
                                let v = data[base + j * features + f];
                                if v > best_val {
                                    best_val = v;
                                    best = j;
                                }
                            }
                            da[base + best * features + f] += g[sw * features + f];
                        }
                    }
                    grads[a] = da;
                    grads[i] = g;
                }
                Op::Softmax { a, rows, cols } => {
                    let (a, rows, cols) = (*a, *rows, *cols);
                    let g = std::mem::take(&mut grads[i]);
                    for r in 0..rows {
                        let y = &self.nodes[i].data[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mut dot = 0.0;
                        for (gv, yv) in grow.iter().zip(y) {
                            dot += gv * yv;
                        }
                        for ((ga, &gv), &yv) in
                            grads[a][r * cols..(r + 1) * cols].iter_mut().zip(grow).zip(y)
                        {
                            *ga += yv * (gv - dot);
                        }
                    }
                    grads[i] = g;
                }
                Op::SoftmaxCrossEntropy { logits, labels, rows, cols } => {
                    let (logits, rows, cols) = (*logits, *rows, *cols);
                    let labels = labels.clone();
                    let gv = grads[i][0];
                    let scale = gv / rows as f64;
                    let mut probs = vec![0.0; cols];
                    for (r, &label) in labels.iter().enumerate() {
                        let row = &self.nodes[logits].data[r * cols..(r + 1) * cols];
                        softmax_row(row, &mut probs);
                        let grow = &mut grads[logits][r * cols..(r + 1) * cols];
                        for (c, (ga, &p)) in grow.iter_mut().zip(&probs).enumerate() {
                            let target = if c == label { 1.0 } else { 0.0 };
                            *ga += scale * (p - target);
                        }
                    }
                }
            }
        }
        self.grads = Some(grads);
        Ok(())
    }

    /// Gradient of the loss w.r.t. a recorded tensor; requires a prior
    /// [`Tape::backward`].
    pub fn grad(&self, id: TensorId) -> Result<&[f64]> {
        let i = self.check(id, "grad")?;
        match &self.grads {
            Some(grads) => Ok(&grads[i]),
            None => Err(Error::Usage("gradients requested before backward ran".into())),
        }
    }
}

fn softmax_row(row: &[f64], out: &mut [f64]) {
    let max = row.iter().fold(f64::NEG_INFINITY, |m, &v| m.max(v));
    let mut sum = 0.0;
    for (o, &v) in out.iter_mut().zip(row) {
        let e = (v - max).exp();
        *o = e;
        sum += e;
    }
    for o in out.iter_mut() {
        *o /= sum;
    }
}

fn add_into(target: &mut [f64], delta: &[f64]) {
    for (t, &d) in target.iter_mut().zip(delta) {
        *t += d;
    }
}

/// Row-major `a[m,k] · b[k,n]`. The i-k-j loop order keeps memory access
/// sequential while preserving the left-to-right accumulation over `k` for
/// every output element, so results are bit-identical to the naive triple
/// loop.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let crow = &mut c[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
    c
}

fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut t = vec![0.0; rows * cols];
    for r in 0..rows {
        for c in 0..cols {
            t[c * rows + r] = a[r * cols + c];
        }
    }
    t
}
