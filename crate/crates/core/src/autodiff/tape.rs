//! Reverse-mode differentiation over dense f64 tensors. Each operation
//! records its inputs on the tape; `backward` walks the tape in reverse and
//! accumulates exact gradients.

use crate::autodiff::params::Params;
use crate::error::{Error, Result};

/// Index of a tensor on its tape.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TensorId(usize);

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Param(usize),
    Add(TensorId, TensorId),
    Sub(TensorId, TensorId),
    Mul(TensorId, TensorId),
    AddN(Vec<TensorId>),
    MaxN(Vec<TensorId>),
    Neg(TensorId),
    ScalarMul(TensorId, f64),
    AddScalar(TensorId),
    Concat(Vec<TensorId>),
    Dot(TensorId, TensorId),
    Scale { vector: TensorId, scalar: TensorId },
    VecMat { x: TensorId, w: TensorId },
    MatMul(TensorId, TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Log(TensorId),
    Softmax { x: TensorId, axis: usize },
    MaskedSoftmax(TensorId),
    Lookup { table: TensorId, row: usize },
    Pick { x: TensorId, index: usize },
}

#[derive(Debug)]
struct Node {
    shape: Vec<usize>,
    values: Vec<f64>,
    grad: Option<Vec<f64>>,
    op: Op,
}

/// One forward computation. A tape is confined to a single execution
/// context; build a fresh tape per forward pass.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Tape {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, shape: Vec<usize>, values: Vec<f64>, op: Op) -> TensorId {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        self.nodes.push(Node {
            shape,
            values,
            grad: None,
            op,
        });
        TensorId(self.nodes.len() - 1)
    }

    fn node(&self, id: TensorId) -> &Node {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.node(id).values
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        &self.node(id).shape
    }

    /// Gradient of the last `backward` target with respect to `id`.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.node(id).grad.as_deref()
    }

    pub fn leaf(&mut self, values: Vec<f64>, shape: &[usize]) -> Result<TensorId> {
        if shape.iter().product::<usize>() != values.len() {
            return Err(Error::shape(
                "leaf",
                format!("shape {shape:?} incompatible with {} values", values.len()),
            ));
        }
        Ok(self.push(shape.to_vec(), values, Op::Leaf))
    }

    pub fn scalar(&mut self, v: f64) -> TensorId {
        self.push(vec![1], vec![v], Op::Leaf)
    }

    pub fn vector(&mut self, values: Vec<f64>) -> TensorId {
        let n = values.len();
        self.push(vec![n], values, Op::Leaf)
    }

    pub fn zeros(&mut self, n: usize) -> TensorId {
        self.vector(vec![0.0; n])
    }

    /// Binds a named parameter onto the tape. After `backward`,
    /// [`Tape::accumulate_param_grads`] adds the binding's gradient back
    /// into the parameter store.
    pub fn param(&mut self, params: &Params, name: &str) -> Result<TensorId> {
        let index = params
            .index_of(name)
            .ok_or_else(|| Error::validation(format!("unknown parameter '{name}'")))?;
        let p = params.item(index);
        Ok(self.push(p.shape.clone(), p.values.clone(), Op::Param(index)))
    }

    fn same_shape(&self, op: &'static str, a: TensorId, b: TensorId) -> Result<()> {
        if self.node(a).shape != self.node(b).shape {
            return Err(Error::shape(
                op,
                format!("{:?} vs {:?}", self.node(a).shape, self.node(b).shape),
            ));
        }
        Ok(())
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("add", a, b)?;
        let values = zip_with(&self.node(a).values, &self.node(b).values, |x, y| x + y);
        Ok(self.push(self.node(a).shape.clone(), values, Op::Add(a, b)))
    }

    pub fn sub(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("sub", a, b)?;
        let values = zip_with(&self.node(a).values, &self.node(b).values, |x, y| x - y);
        Ok(self.push(self.node(a).shape.clone(), values, Op::Sub(a, b)))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("mul", a, b)?;
        let values = zip_with(&self.node(a).values, &self.node(b).values, |x, y| x * y);
        Ok(self.push(self.node(a).shape.clone(), values, Op::Mul(a, b)))
    }

    /// Sum of equally shaped tensors.
    pub fn add_n(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::shape("add_n", "empty input list"))?;
        let mut values = self.node(first).values.clone();
        for id in &ids[1..] {
            self.same_shape("add_n", first, *id)?;
            for (v, x) in values.iter_mut().zip(&self.node(*id).values) {
                *v += x;
            }
        }
        Ok(self.push(self.node(first).shape.clone(), values, Op::AddN(ids.to_vec())))
    }

    /// Elementwise maximum over equally shaped tensors. Gradient routes to
    /// the first input attaining the maximum at each coordinate.
    pub fn max_n(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        let first = *ids
            .first()
            .ok_or_else(|| Error::shape("max_n", "empty input list"))?;
        let mut values = self.node(first).values.clone();
        for id in &ids[1..] {
            self.same_shape("max_n", first, *id)?;
            for (v, x) in values.iter_mut().zip(&self.node(*id).values) {
                if *x > *v {
                    *v = *x;
                }
            }
        }
        Ok(self.push(self.node(first).shape.clone(), values, Op::MaxN(ids.to_vec())))
    }

    pub fn neg(&mut self, a: TensorId) -> TensorId {
        let values = self.node(a).values.iter().map(|x| -x).collect();
        self.push(self.node(a).shape.clone(), values, Op::Neg(a))
    }

    pub fn scalar_mul(&mut self, a: TensorId, c: f64) -> TensorId {
        let values = self.node(a).values.iter().map(|x| c * x).collect();
        self.push(self.node(a).shape.clone(), values, Op::ScalarMul(a, c))
    }

    pub fn add_scalar(&mut self, a: TensorId, c: f64) -> TensorId {
        let values = self.node(a).values.iter().map(|x| x + c).collect();
        self.push(self.node(a).shape.clone(), values, Op::AddScalar(a))
    }

    /// Concatenation of 1-D tensors.
    pub fn concat(&mut self, ids: &[TensorId]) -> Result<TensorId> {
        if ids.is_empty() {
            return Err(Error::shape("concat", "empty input list"));
        }
        let mut values = Vec::new();
        for id in ids {
            if self.node(*id).shape.len() != 1 {
                return Err(Error::shape(
                    "concat",
                    format!("expected 1-D inputs, got {:?}", self.node(*id).shape),
                ));
            }
            values.extend_from_slice(&self.node(*id).values);
        }
        let n = values.len();
        Ok(self.push(vec![n], values, Op::Concat(ids.to_vec())))
    }

    pub fn dot(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        self.same_shape("dot", a, b)?;
        if self.node(a).shape.len() != 1 {
            return Err(Error::shape(
                "dot",
                format!("expected vectors, got {:?}", self.node(a).shape),
            ));
        }
        let v = self
            .node(a)
            .values
            .iter()
            .zip(&self.node(b).values)
            .map(|(x, y)| x * y)
            .sum();
        Ok(self.push(vec![1], vec![v], Op::Dot(a, b)))
    }

    /// Multiplies a tensor by a scalar tensor of shape `[1]`.
    pub fn scale(&mut self, vector: TensorId, scalar: TensorId) -> Result<TensorId> {
        if self.node(scalar).shape != [1] {
            return Err(Error::shape(
                "scale",
                format!("scalar operand has shape {:?}", self.node(scalar).shape),
            ));
        }
        let s = self.node(scalar).values[0];
        let values = self.node(vector).values.iter().map(|x| s * x).collect();
        Ok(self.push(
            self.node(vector).shape.clone(),
            values,
            Op::Scale { vector, scalar },
        ))
    }

    /// Row vector times matrix: `[n] x [n, m] -> [m]`.
    pub fn vecmat(&mut self, x: TensorId, w: TensorId) -> Result<TensorId> {
        let (xs, ws) = (self.node(x).shape.clone(), self.node(w).shape.clone());
        if xs.len() != 1 || ws.len() != 2 || xs[0] != ws[0] {
            return Err(Error::shape("vecmat", format!("{xs:?} x {ws:?}")));
        }
        let (n, m) = (ws[0], ws[1]);
        let xv = &self.node(x).values;
        let wv = &self.node(w).values;
        let mut values = vec![0.0; m];
        for i in 0..n {
            let xi = xv[i];
            if xi == 0.0 {
                continue;
            }
            let row = &wv[i * m..(i + 1) * m];
            for (out, wij) in values.iter_mut().zip(row) {
                *out += xi * wij;
            }
        }
        Ok(self.push(vec![m], values, Op::VecMat { x, w }))
    }

    /// Matrix product `[n, m] x [m, k] -> [n, k]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (sa, sb) = (self.node(a).shape.clone(), self.node(b).shape.clone());
        if sa.len() != 2 || sb.len() != 2 || sa[1] != sb[0] {
            return Err(Error::shape("matmul", format!("{sa:?} x {sb:?}")));
        }
        let (n, m, k) = (sa[0], sa[1], sb[1]);
        let av = &self.node(a).values;
        let bv = &self.node(b).values;
        let mut values = vec![0.0; n * k];
        for i in 0..n {
            for j in 0..m {
                let aij = av[i * m + j];
                if aij == 0.0 {
                    continue;
                }
                let brow = &bv[j * k..(j + 1) * k];
                let out = &mut values[i * k..(i + 1) * k];
                for (o, bjl) in out.iter_mut().zip(brow) {
                    *o += aij * bjl;
                }
            }
        }
        Ok(self.push(vec![n, k], values, Op::MatMul(a, b)))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        let values = self
            .node(a)
            .values
            .iter()
            .map(|x| 1.0 / (1.0 + (-x).exp()))
            .collect();
        self.push(self.node(a).shape.clone(), values, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        let values = self.node(a).values.iter().map(|x| x.tanh()).collect();
        self.push(self.node(a).shape.clone(), values, Op::Tanh(a))
    }

    pub fn log(&mut self, a: TensorId) -> TensorId {
        let values = self.node(a).values.iter().map(|x| x.ln()).collect();
        self.push(self.node(a).shape.clone(), values, Op::Log(a))
    }

    /// Softmax along `axis`. 1-D tensors use axis 0; 2-D tensors normalize
    /// each slice along the chosen axis.
    pub fn softmax(&mut self, a: TensorId, axis: usize) -> Result<TensorId> {
        let shape = self.node(a).shape.clone();
        if axis >= shape.len() {
            return Err(Error::shape(
                "softmax",
                format!("axis {axis} out of range for shape {shape:?}"),
            ));
        }
        let values = match shape.len() {
            1 => softmax_slice(&self.node(a).values),
            2 => {
                let (r, c) = (shape[0], shape[1]);
                let v = &self.node(a).values;
                let mut out = vec![0.0; r * c];
                if axis == 1 {
                    for i in 0..r {
                        let s = softmax_slice(&v[i * c..(i + 1) * c]);
                        out[i * c..(i + 1) * c].copy_from_slice(&s);
                    }
                } else {
                    for j in 0..c {
                        let col: Vec<f64> = (0..r).map(|i| v[i * c + j]).collect();
                        let s = softmax_slice(&col);
                        for i in 0..r {
                            out[i * c + j] = s[i];
                        }
                    }
                }
                out
            }
            _ => {
                return Err(Error::shape(
                    "softmax",
                    format!("unsupported rank {}", shape.len()),
                ))
            }
        };
        Ok(self.push(shape, values, Op::Softmax { x: a, axis }))
    }

    /// Softmax over a 1-D tensor with masked positions receiving exactly
    /// zero probability.
    pub fn masked_softmax(&mut self, a: TensorId, mask: &[bool]) -> Result<TensorId> {
        let shape = self.node(a).shape.clone();
        if shape.len() != 1 || shape[0] != mask.len() {
            return Err(Error::shape(
                "masked_softmax",
                format!("shape {shape:?} vs mask length {}", mask.len()),
            ));
        }
        if !mask.iter().any(|m| *m) {
            return Err(Error::shape("masked_softmax", "all positions masked"));
        }
        let v = &self.node(a).values;
        let max = v
            .iter()
            .zip(mask)
            .filter(|(_, m)| **m)
            .map(|(x, _)| *x)
            .fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = v
            .iter()
            .zip(mask)
            .map(|(x, m)| if *m { (x - max).exp() } else { 0.0 })
            .collect();
        let z: f64 = exps.iter().sum();
        let values = exps.iter().map(|e| e / z).collect();
        Ok(self.push(
            shape,
            values,
            Op::MaskedSoftmax(a),
        ))
    }

    /// Embedding lookup: row `row` of a 2-D tensor.
    pub fn lookup(&mut self, table: TensorId, row: usize) -> Result<TensorId> {
        let shape = self.node(table).shape.clone();
        if shape.len() != 2 {
            return Err(Error::shape(
                "lookup",
                format!("expected a matrix, got {shape:?}"),
            ));
        }
        let (r, c) = (shape[0], shape[1]);
        if row >= r {
            return Err(Error::shape(
                "lookup",
                format!("row {row} out of range for {r} rows"),
            ));
        }
        let values = self.node(table).values[row * c..(row + 1) * c].to_vec();
        Ok(self.push(vec![c], values, Op::Lookup { table, row }))
    }

    /// Selects one element of a 1-D tensor as a `[1]` tensor.
    pub fn pick(&mut self, x: TensorId, index: usize) -> Result<TensorId> {
        let shape = self.node(x).shape.clone();
        if shape.len() != 1 || index >= shape[0] {
            return Err(Error::shape(
                "pick",
                format!("index {index} out of range for shape {shape:?}"),
            ));
        }
        let v = self.node(x).values[index];
        Ok(self.push(vec![1], vec![v], Op::Pick { x, index }))
    }

    /// Runs reverse-mode accumulation from a scalar output.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        if self.node(loss).values.len() != 1 {
            return Err(Error::shape(
                "backward",
                format!("loss has shape {:?}, expected [1]", self.node(loss).shape),
            ));
        }
        let mut grads: Vec<Vec<f64>> = self
            .nodes
            .iter()
            .map(|n| vec![0.0; n.values.len()])
            .collect();
        grads[loss.0][0] = 1.0;

        for i in (0..=loss.0).rev() {
            let g = std::mem::take(&mut grads[i]);
            if g.iter().all(|x| *x == 0.0) {
                grads[i] = g;
                continue;
            }
            match self.nodes[i].op.clone() {
                Op::Leaf | Op::Param(_) => {}
                Op::Add(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, 1.0);
                }
                Op::Sub(a, b) => {
                    axpy(&mut grads[a.0], &g, 1.0);
                    axpy(&mut grads[b.0], &g, -1.0);
                }
                Op::Mul(a, b) => {
                    let (av, bv) = (&self.nodes[a.0].values, &self.nodes[b.0].values);
                    let ga: Vec<f64> = g.iter().zip(bv).map(|(gi, bi)| gi * bi).collect();
                    let gb: Vec<f64> = g.iter().zip(av).map(|(gi, ai)| gi * ai).collect();
                    axpy(&mut grads[a.0], &ga, 1.0);
                    axpy(&mut grads[b.0], &gb, 1.0);
                }
                Op::AddN(ids) => {
                    for id in ids {
                        axpy(&mut grads[id.0], &g, 1.0);
                    }
                }
                Op::MaxN(ids) => {
                    for (k, gk) in g.iter().enumerate() {
                        if *gk == 0.0 {
                            continue;
                        }
                        let out_k = self.nodes[i].values[k];
                        for id in &ids {
                            if self.nodes[id.0].values[k] == out_k {
                                grads[id.0][k] += *gk;
                                break;
                            }
                        }
                    }
                }
                Op::Neg(a) => axpy(&mut grads[a.0], &g, -1.0),
                Op::ScalarMul(a, c) => axpy(&mut grads[a.0], &g, c),
                Op::AddScalar(a) => axpy(&mut grads[a.0], &g, 1.0),
                Op::Concat(ids) => {
                    let mut offset = 0;
                    for id in ids {
                        let len = self.nodes[id.0].values.len();
                        axpy(&mut grads[id.0], &g[offset..offset + len], 1.0);
                        offset += len;
                    }
                }
                Op::Dot(a, b) => {
                    let g0 = g[0];
                    let (av, bv) = (
                        self.nodes[a.0].values.clone(),
                        self.nodes[b.0].values.clone(),
                    );
                    axpy(&mut grads[a.0], &bv, g0);
                    axpy(&mut grads[b.0], &av, g0);
                }
                Op::Scale { vector, scalar } => {
                    let s = self.nodes[scalar.0].values[0];
                    let vv = &self.nodes[vector.0].values;
                    grads[scalar.0][0] += g.iter().zip(vv).map(|(gi, vi)| gi * vi).sum::<f64>();
                    axpy(&mut grads[vector.0], &g, s);
                }
                Op::VecMat { x, w } => {
                    let (n, m) = (self.nodes[w.0].shape[0], self.nodes[w.0].shape[1]);
                    let xv = self.nodes[x.0].values.clone();
                    let wv = &self.nodes[w.0].values;
                    for idx in 0..n {
                        let row = &wv[idx * m..(idx + 1) * m];
                        grads[x.0][idx] += row.iter().zip(&g).map(|(wij, gj)| wij * gj).sum::<f64>();
                    }
                    let gw = &mut grads[w.0];
                    for (idx, xi) in xv.iter().enumerate() {
                        if *xi == 0.0 {
                            continue;
                        }
                        let row = &mut gw[idx * m..(idx + 1) * m];
                        for (out, gj) in row.iter_mut().zip(&g) {
                            *out += xi * gj;
                        }
                    }
                }
                Op::MatMul(a, b) => {
                    let (n, m) = (self.nodes[a.0].shape[0], self.nodes[a.0].shape[1]);
                    let k = self.nodes[b.0].shape[1];
                    let av = self.nodes[a.0].values.clone();
                    let bv = self.nodes[b.0].values.clone();
                    // dL/dA = G B^T, dL/dB = A^T G
                    for i2 in 0..n {
                        for j in 0..m {
                            let mut s = 0.0;
                            for l in 0..k {
                                s += g[i2 * k + l] * bv[j * k + l];
                            }
                            grads[a.0][i2 * m + j] += s;
                        }
                    }
                    for j in 0..m {
                        for l in 0..k {
                            let mut s = 0.0;
                            for i2 in 0..n {
                                s += av[i2 * m + j] * g[i2 * k + l];
                            }
                            grads[b.0][j * k + l] += s;
                        }
                    }
                }
                Op::Sigmoid(a) => {
                    let y = &self.nodes[i].values;
                    let ga: Vec<f64> = g
                        .iter()
                        .zip(y)
                        .map(|(gi, yi)| gi * yi * (1.0 - yi))
                        .collect();
                    axpy(&mut grads[a.0], &ga, 1.0);
                }
                Op::Tanh(a) => {
                    let y = &self.nodes[i].values;
                    let ga: Vec<f64> = g.iter().zip(y).map(|(gi, yi)| gi * (1.0 - yi * yi)).collect();
                    axpy(&mut grads[a.0], &ga, 1.0);
                }
                Op::Log(a) => {
                    let xv = &self.nodes[a.0].values;
                    let ga: Vec<f64> = g.iter().zip(xv).map(|(gi, xi)| gi / xi).collect();
                    axpy(&mut grads[a.0], &ga, 1.0);
                }
                Op::Softmax { x, axis } => {
                    let y = &self.nodes[i].values;
                    let shape = &self.nodes[i].shape;
                    let mut ga = vec![0.0; y.len()];
                    match shape.len() {
                        1 => softmax_backward(&g, y, &mut ga),
                        _ => {
                            let (r, c) = (shape[0], shape[1]);
                            if axis == 1 {
                                for i2 in 0..r {
                                    softmax_backward(
                                        &g[i2 * c..(i2 + 1) * c],
                                        &y[i2 * c..(i2 + 1) * c],
                                        &mut ga[i2 * c..(i2 + 1) * c],
                                    );
                                }
                            } else {
                                for j in 0..c {
                                    let gc: Vec<f64> = (0..r).map(|i2| g[i2 * c + j]).collect();
                                    let yc: Vec<f64> = (0..r).map(|i2| y[i2 * c + j]).collect();
                                    let mut gac = vec![0.0; r];
                                    softmax_backward(&gc, &yc, &mut gac);
                                    for i2 in 0..r {
                                        ga[i2 * c + j] = gac[i2];
                                    }
                                }
                            }
                        }
                    }
                    axpy(&mut grads[x.0], &ga, 1.0);
                }
                Op::MaskedSoftmax(x) => {
                    let y = &self.nodes[i].values;
                    let mut ga = vec![0.0; y.len()];
                    softmax_backward(&g, y, &mut ga);
                    axpy(&mut grads[x.0], &ga, 1.0);
                }
                Op::Lookup { table, row } => {
                    let c = self.nodes[table.0].shape[1];
                    axpy(&mut grads[table.0][row * c..(row + 1) * c], &g, 1.0);
                }
                Op::Pick { x, index } => {
                    grads[x.0][index] += g[0];
                }
            }
            grads[i] = g;
        }

        for (node, grad) in self.nodes.iter_mut().zip(grads) {
            node.grad = Some(grad);
        }
        Ok(())
    }

    /// Adds the gradients of every bound parameter into the store. Call
    /// after `backward`.
    pub fn accumulate_param_grads(&self, params: &mut Params) {
        for node in &self.nodes {
            if let Op::Param(index) = node.op {
                if let Some(grad) = &node.grad {
                    params.accumulate_grad(index, grad);
                }
            }
        }
    }
}

fn zip_with(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect()
}

fn axpy(acc: &mut [f64], x: &[f64], alpha: f64) {
    for (a, xi) in acc.iter_mut().zip(x) {
        *a += alpha * xi;
    }
}

fn softmax_slice(v: &[f64]) -> Vec<f64> {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = v.iter().map(|x| (x - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.iter().map(|e| e / z).collect()
}

// dL/dx_i = y_i * (g_i - sum_j g_j y_j)
fn softmax_backward(g: &[f64], y: &[f64], out: &mut [f64]) {
    let inner: f64 = g.iter().zip(y).map(|(gi, yi)| gi * yi).sum();
    for ((o, gi), yi) in out.iter_mut().zip(g).zip(y) {
        *o = yi * (gi - inner);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_of_zeros_is_uniform() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![0.0, 0.0]);
        let y = tape.softmax(x, 0).unwrap();
        assert_eq!(tape.value(y), &[0.5, 0.5]);
    }

    #[test]
    fn sigmoid_derivative_at_zero() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![0.0]);
        let y = tape.sigmoid(x);
        let loss = tape.pick(y, 0).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(x).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-12);
    }

    #[test]
    fn masked_softmax_zeroes_masked_positions() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![3.0, 1.0, 2.0]);
        let y = tape.masked_softmax(x, &[true, false, true]).unwrap();
        let v = tape.value(y);
        assert_eq!(v[1], 0.0);
        assert!((v.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(v[0] > v[2]);
    }

    #[test]
    fn masked_softmax_rejects_all_false() {
        let mut tape = Tape::new();
        let x = tape.vector(vec![1.0, 2.0]);
        assert!(tape.masked_softmax(x, &[false, false]).is_err());
    }

    #[test]
    fn shape_errors_name_the_op() {
        let mut tape = Tape::new();
        let a = tape.vector(vec![1.0, 2.0]);
        let b = tape.vector(vec![1.0]);
        let err = tape.add(a, b).unwrap_err();
        assert!(err.to_string().contains("add"), "{err}");
        let m = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let err = tape.vecmat(b, m).unwrap_err();
        assert!(err.to_string().contains("vecmat"), "{err}");
    }

    #[test]
    fn matmul_against_hand_computation() {
        let mut tape = Tape::new();
        let a = tape.leaf(vec![1.0, 2.0, 3.0, 4.0], &[2, 2]).unwrap();
        let b = tape.leaf(vec![5.0, 6.0, 7.0, 8.0], &[2, 2]).unwrap();
        let c = tape.matmul(a, b).unwrap();
        assert_eq!(tape.value(c), &[19.0, 22.0, 43.0, 50.0]);
    }

    #[test]
    fn concat_and_backward_split() {
        let mut tape = Tape::new();
        let a = tape.vector(vec![1.0, 2.0]);
        let b = tape.vector(vec![3.0]);
        let c = tape.concat(&[a, b]).unwrap();
        let w = tape.vector(vec![1.0, 10.0, 100.0]);
        let loss = tape.dot(c, w).unwrap();
        tape.backward(loss).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 10.0]);
        assert_eq!(tape.grad(b).unwrap(), &[100.0]);
    }

    #[test]
    fn max_n_routes_gradient_to_first_argmax() {
        let mut tape = Tape::new();
        let a = tape.vector(vec![1.0, 5.0]);
        let b = tape.vector(vec![1.0, 2.0]);
        let m = tape.max_n(&[a, b]).unwrap();
        assert_eq!(tape.value(m), &[1.0, 5.0]);
        let w = tape.vector(vec![1.0, 1.0]);
        let loss = tape.dot(m, w).unwrap();
        tape.backward(loss).unwrap();
        // Ties at coordinate 0 go to the first input.
        assert_eq!(tape.grad(a).unwrap(), &[1.0, 1.0]);
        assert_eq!(tape.grad(b).unwrap(), &[0.0, 0.0]);
    }
}
