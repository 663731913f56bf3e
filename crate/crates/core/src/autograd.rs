//! Minimal reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! A [`Graph`] is built fresh for every forward pass. Leaves are either
//! trainable parameters (tagged with their index in the parameter store) or
//! constants. Every intermediate value is kept so that [`Graph::backward`]
//! can replay the operations in reverse.

use ndarray::{concatenate, s, Array2, Axis};
use statrs::function::erf::erf;

const INV_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;

/// Handle to a node in a [`Graph`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

enum Op {
    Leaf,
    MatMul(Var, Var),
    MatMulT(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    AddRow(Var, Var),
    MulRow(Var, Var),
    MulConst(Var, Array2<f64>),
    AddConst(Var),
    Scale(Var, f64),
    Relu(Var),
    Gelu(Var),
    Sigmoid(Var),
    Abs(Var),
    Mean(Var),
    Sum(Var),
    LayerNorm { input: Var, normed: Array2<f64>, inv_std: Vec<f64> },
    SoftmaxRows(Var),
    ConcatRows(Vec<Var>),
    ConcatCols(Vec<Var>),
    SliceRows(Var, usize),
    SliceCols(Var, usize),
    MeanRows(Var),
    Devectorize(Var, usize),
    Cosine(Var, Var),
    CrossEntropy { logits: Var, label: usize, probs: Vec<f64> },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    param: Option<usize>,
    requires_grad: bool,
}

/// Gradients of a scalar with respect to every trainable leaf, indexed by
/// parameter slot.
#[derive(Debug, Clone, Default)]
pub struct Gradients {
    slots: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, param: usize) -> Option<&Array2<f64>> {
        self.slots.get(param).and_then(Option::as_ref)
    }

    pub fn len(&self) -> usize {
        self.slots.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slots.iter().all(Option::is_none)
    }

    /// Adds `other` into `self`, slot by slot.
    pub fn accumulate(&mut self, other: Gradients) {
        if self.slots.len() < other.slots.len() {
            self.slots.resize(other.slots.len(), None);
        }
        for (slot, g) in self.slots.iter_mut().zip(other.slots) {
            if let Some(g) = g {
                match slot {
                    Some(acc) => *acc += &g,
                    None => *slot = Some(g),
                }
            }
        }
    }

    pub fn scale(&mut self, k: f64) {
        for g in self.slots.iter_mut().flatten() {
            g.mapv_inplace(|v| v * k);
        }
    }
}

#[derive(Default)]
pub struct Graph {
    nodes: Vec<Node>,
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

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    /// Scalar value of a 1×1 node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    fn push(&mut self, value: Array2<f64>, op: Op, inputs: &[Var]) -> Var {
        let requires_grad = inputs.iter().any(|v| self.nodes[v.0].requires_grad);
        self.nodes.push(Node { value, op, param: None, requires_grad });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: None, requires_grad: false });
        Var(self.nodes.len() - 1)
    }

    /// Trainable leaf bound to parameter slot `slot`.
    pub fn param(&mut self, slot: usize, value: Array2<f64>) -> Var {
        self.nodes.push(Node { value, op: Op::Leaf, param: Some(slot), requires_grad: true });
        Var(self.nodes.len() - 1)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(self.value(b));
        self.push(v, Op::MatMul(a, b), &[a, b])
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a).dot(&self.value(b).t());
        self.push(v, Op::MatMulT(a, b), &[a, b])
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) + self.value(b);
        self.push(v, Op::Add(a, b), &[a, b])
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let v = self.value(a) - self.value(b);
        self.push(v, Op::Sub(a, b), &[a, b])
    }

    /// Adds a 1×n row to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) + self.value(row);
        self.push(v, Op::AddRow(a, row), &[a, row])
    }

    /// Multiplies every row of `a` elementwise by a 1×n row.
    pub fn mul_row(&mut self, a: Var, row: Var) -> Var {
        let v = self.value(a) * self.value(row);
        self.push(v, Op::MulRow(a, row), &[a, row])
    }

    pub fn mul_const(&mut self, a: Var, k: Array2<f64>) -> Var {
        let v = self.value(a) * &k;
        self.push(v, Op::MulConst(a, k), &[a])
    }

    pub fn add_const(&mut self, a: Var, k: &Array2<f64>) -> Var {
        let v = self.value(a) + k;
        self.push(v, Op::AddConst(a), &[a])
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let v = self.value(a) * k;
        self.push(v, Op::Scale(a, k), &[a])
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| x.max(0.0));
        self.push(v, Op::Relu(a), &[a])
    }

    /// Exact (erf-based) GELU.
    pub fn gelu(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(|x| 0.5 * x * (1.0 + erf(x * INV_SQRT_2)));
        self.push(v, Op::Gelu(a), &[a])
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(sigmoid);
        self.push(v, Op::Sigmoid(a), &[a])
    }

    pub fn abs(&mut self, a: Var) -> Var {
        let v = self.value(a).mapv(f64::abs);
        self.push(v, Op::Abs(a), &[a])
    }

    /// Mean of all entries, as a 1×1 node.
    pub fn mean(&mut self, a: Var) -> Var {
        let m = self.value(a).mean().unwrap_or(0.0);
        self.push(Array2::from_elem((1, 1), m), Op::Mean(a), &[a])
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let s = self.value(a).sum();
        self.push(Array2::from_elem((1, 1), s), Op::Sum(a), &[a])
    }

    /// Row-wise layer normalisation without affine terms.
    pub fn layer_norm(&mut self, a: Var, eps: f64) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let mut normed = x.clone();
        let mut inv_std = Vec::with_capacity(x.nrows());
        for mut row in normed.rows_mut() {
            let mu = row.sum() / n;
            let var = row.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n;
            let is = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mu) * is);
            inv_std.push(is);
        }
        let v = normed.clone();
        self.push(v, Op::LayerNorm { input: a, normed, inv_std }, &[a])
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let mut v = self.value(a).clone();
        for mut row in v.rows_mut() {
            let max = row.fold(f64::NEG_INFINITY, |m, &x| m.max(x));
            row.mapv_inplace(|x| (x - max).exp());
            let z = row.sum();
            row.mapv_inplace(|x| x / z);
        }
        self.push(v, Op::SoftmaxRows(a), &[a])
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        self.push(v, Op::ConcatRows(parts.to_vec()), parts)
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let v = concatenate(Axis(1), &views).expect("concat_cols: row mismatch");
        self.push(v, Op::ConcatCols(parts.to_vec()), parts)
    }

    pub fn slice_rows(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![start..end, ..]).to_owned();
        self.push(v, Op::SliceRows(a, start), &[a])
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, end: usize) -> Var {
        let v = self.value(a).slice(s![.., start..end]).to_owned();
        self.push(v, Op::SliceCols(a, start), &[a])
    }

    /// Column-wise mean over rows, giving 1×n.
    pub fn mean_rows(&mut self, a: Var) -> Var {
        let v = self.value(a).mean_axis(Axis(0)).expect("mean_rows: empty").insert_axis(Axis(0));
        self.push(v, Op::MeanRows(a), &[a])
    }

    /// Maps a 1×r(r-1)/2 upper-triangle row vector onto a symmetric r×r
    /// matrix with zero diagonal.
    pub fn devectorize(&mut self, a: Var, r: usize) -> Var {
        let src = self.value(a);
        assert_eq!(src.len(), r * (r - 1) / 2, "devectorize: length mismatch");
        let mut v = Array2::zeros((r, r));
        let mut k = 0;
        for i in 0..r {
            for j in (i + 1)..r {
                let x = src[[0, k]];
                v[[i, j]] = x;
                v[[j, i]] = x;
                k += 1;
            }
        }
        self.push(v, Op::Devectorize(a, r), &[a])
    }

    /// Cosine similarity of a 1×d row against each row of a C×d matrix.
    pub fn cosine(&mut self, a: Var, b: Var) -> Var {
        let av = self.value(a);
        let bv = self.value(b);
        let na = l2(av.iter());
        let v = Array2::from_shape_fn((1, bv.nrows()), |(_, c)| {
            let row = bv.row(c);
            let nb = l2(row.iter());
            av.row(0).dot(&row) / (na * nb)
        });
        self.push(v, Op::Cosine(a, b), &[a, b])
    }

    /// Negative log-softmax of a 1×C logit row at `label`, as 1×1.
    pub fn cross_entropy(&mut self, logits: Var, label: usize) -> Var {
        let probs = softmax(self.value(logits).row(0).iter().copied());
        let loss = -probs[label].ln();
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy { logits, label, probs },
            &[logits],
        )
    }

    /// Reverse pass from a 1×1 node. `n_params` sizes the gradient table.
    pub fn backward(&self, root: Var, n_params: usize) -> Gradients {
        assert_eq!(self.value(root).dim(), (1, 1), "backward: root must be scalar");
        let mut grads: Vec<Option<Array2<f64>>> = Vec::with_capacity(self.nodes.len());
        grads.resize_with(self.nodes.len(), || None);
        grads[root.0] = Some(Array2::ones((1, 1)));
        let mut out = Gradients { slots: vec![None; n_params] };

        for idx in (0..=root.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            match &node.op {
                Op::Leaf => {
                    if let Some(p) = node.param {
                        match &mut out.slots[p] {
                            Some(acc) => *acc += &g,
                            slot => *slot = Some(g),
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::MatMulT(a, b) => {
                    if self.needs(*a) {
                        let ga = g.dot(self.value(*b));
                        self.acc(&mut grads, *a, ga);
                    }
                    if self.needs(*b) {
                        let gb = g.t().dot(self.value(*a));
                        self.acc(&mut grads, *b, gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, g.clone());
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::Sub(a, b) => {
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, -&g);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::AddRow(a, row) => {
                    if self.needs(*row) {
                        let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    self.acc(&mut grads, *a, g);
                }
                Op::MulRow(a, row) => {
                    if self.needs(*row) {
                        let gr = (&g * self.value(*a)).sum_axis(Axis(0)).insert_axis(Axis(0));
                        self.acc(&mut grads, *row, gr);
                    }
                    if self.needs(*a) {
                        let ga = &g * self.value(*row);
                        self.acc(&mut grads, *a, ga);
                    }
                }
                Op::MulConst(a, k) => self.acc(&mut grads, *a, &g * k),
                Op::AddConst(a) => self.acc(&mut grads, *a, g),
                Op::Scale(a, k) => self.acc(&mut grads, *a, g * *k),
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        if x <= 0.0 {
                            *gv = 0.0
                        }
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Gelu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| {
                        let cdf = 0.5 * (1.0 + erf(x * INV_SQRT_2));
                        let pdf = INV_SQRT_2PI * (-0.5 * x * x).exp();
                        *gv *= cdf + x * pdf;
                    });
                    self.acc(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |gv, &y| *gv *= y * (1.0 - y));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Abs(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |gv, &x| *gv *= sign(x));
                    self.acc(&mut grads, *a, ga);
                }
                Op::Mean(a) => {
                    let shape = self.value(*a).dim();
                    let n = (shape.0 * shape.1) as f64;
                    self.acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]] / n));
                }
                Op::Sum(a) => {
                    let shape = self.value(*a).dim();
                    self.acc(&mut grads, *a, Array2::from_elem(shape, g[[0, 0]]));
                }
                Op::LayerNorm { input, normed, inv_std } => {
                    let n = normed.ncols() as f64;
                    let mut ga = Array2::zeros(normed.dim());
                    for (r, is) in inv_std.iter().enumerate() {
                        let gr = g.row(r);
                        let xr = normed.row(r);
                        let mean_g = gr.sum() / n;
                        let mean_gx = gr.dot(&xr) / n;
                        for c in 0..normed.ncols() {
                            ga[[r, c]] = is * (gr[c] - mean_g - xr[c] * mean_gx);
                        }
                    }
                    self.acc(&mut grads, *input, ga);
                }
                Op::SoftmaxRows(a) => {
                    let y = &node.value;
                    let mut ga = &g * y;
                    for (mut row, yr) in ga.rows_mut().into_iter().zip(y.rows()) {
                        let dot = row.sum();
                        row.zip_mut_with(&yr, |v, &yv| *v -= yv * dot);
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let rows = self.value(*p).nrows();
                        if self.needs(*p) {
                            let gp = g.slice(s![off..off + rows, ..]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        off += rows;
                    }
                }
                Op::ConcatCols(parts) => {
                    let mut off = 0;
                    for p in parts {
                        let cols = self.value(*p).ncols();
                        if self.needs(*p) {
                            let gp = g.slice(s![.., off..off + cols]).to_owned();
                            self.acc(&mut grads, *p, gp);
                        }
                        off += cols;
                    }
                }
                Op::SliceRows(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![*start..*start + g.nrows(), ..]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::SliceCols(a, start) => {
                    let mut ga = Array2::zeros(self.value(*a).dim());
                    ga.slice_mut(s![.., *start..*start + g.ncols()]).assign(&g);
                    self.acc(&mut grads, *a, ga);
                }
                Op::MeanRows(a) => {
                    let shape = self.value(*a).dim();
                    let n = shape.0 as f64;
                    let row = g.row(0).mapv(|v| v / n);
                    let ga = row.broadcast(shape).expect("mean_rows broadcast").to_owned();
                    self.acc(&mut grads, *a, ga);
                }
                Op::Devectorize(a, r) => {
                    let mut ga = Array2::zeros((1, r * (r - 1) / 2));
                    let mut k = 0;
                    for i in 0..*r {
                        for j in (i + 1)..*r {
                            ga[[0, k]] = g[[i, j]] + g[[j, i]];
                            k += 1;
                        }
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::Cosine(a, b) => {
                    let av = self.value(*a);
                    let bv = self.value(*b);
                    let arow = av.row(0);
                    let na = l2(arow.iter());
                    let mut ga = Array2::zeros(av.dim());
                    let mut gb = Array2::zeros(bv.dim());
                    for c in 0..bv.nrows() {
                        let brow = bv.row(c);
                        let nb = l2(brow.iter());
                        let sim = node.value[[0, c]];
                        let gc = g[[0, c]];
                        for k in 0..arow.len() {
                            ga[[0, k]] += gc * (brow[k] / (na * nb) - sim * arow[k] / (na * na));
                            gb[[c, k]] = gc * (arow[k] / (na * nb) - sim * brow[k] / (nb * nb));
                        }
                    }
                    if self.needs(*b) {
                        self.acc(&mut grads, *b, gb);
                    }
                    self.acc(&mut grads, *a, ga);
                }
                Op::CrossEntropy { logits, label, probs } => {
                    let gs = g[[0, 0]];
                    let ga = Array2::from_shape_fn((1, probs.len()), |(_, c)| {
                        gs * (probs[c] - if c == *label { 1.0 } else { 0.0 })
                    });
                    self.acc(&mut grads, *logits, ga);
                }
            }
        }
        out
    }

    fn needs(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    fn acc(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.needs(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Numerically stable softmax.
pub fn softmax(xs: impl IntoIterator<Item = f64>) -> Vec<f64> {
    let xs: Vec<f64> = xs.into_iter().collect();
    let max = xs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = xs.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

fn l2<'a>(xs: impl Iterator<Item = &'a f64>) -> f64 {
    xs.map(|x| x * x).sum::<f64>().sqrt()
}

fn sign(x: f64) -> f64 {
    if x > 0.0 {
        1.0
    } else if x < 0.0 {
        -1.0
    } else {
        0.0
    }
}
