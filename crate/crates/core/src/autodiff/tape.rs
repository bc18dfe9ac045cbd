use crate::error::{Error, Result};
use crate::linalg::{inverse, ridge_lambda, Matrix, PINV_REFINE_STEPS};
use crate::scalar::Scalar;

/// Handle to a node recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
enum Op<T> {
    Constant,
    Variable,
    MatMul(NodeId, NodeId),
    Transpose(NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Scale(NodeId, T),
    Mul(NodeId, NodeId),
    LeakyRelu(NodeId, T),
    Exp(NodeId),
    Log(NodeId),
    Recip(NodeId),
    Sqrt(NodeId),
    ColumnSoftmax(NodeId),
    ColSums(NodeId),
    BroadcastRows(NodeId),
    Sum(NodeId),
    BroadcastScalar(NodeId),
    ScaleByNode(NodeId, NodeId),
    SoftmaxCrossEntropy(NodeId, Vec<usize>),
    SquaredNorm(NodeId),
    Inverse(NodeId),
}

#[derive(Debug, Clone)]
struct Node<T> {
    op: Op<T>,
    value: Matrix<T>,
    requires_grad: bool,
}

/// Append-only record of matrix operations supporting reverse-mode differentiation.
///
/// Backward passes are themselves recorded as tape operations, so the adjoint of any node
/// can be differentiated again. This is what makes `∇_g ½‖∇_w L(g·w)‖²` available.
#[derive(Debug, Clone, Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, id: NodeId) -> &Matrix<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> (usize, usize) {
        self.nodes[id.0].value.shape()
    }

    pub fn requires_grad(&self, id: NodeId) -> bool {
        self.nodes[id.0].requires_grad
    }

    /// Scalar value of a 1x1 node.
    pub fn scalar(&self, id: NodeId) -> T {
        self.nodes[id.0].value.item()
    }

    fn push(&mut self, op: Op<T>, value: Matrix<T>, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            op,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 >= self.nodes.len() {
            return Err(Error::UnknownNode(id.0));
        }
        Ok(())
    }

    fn rg(&self, ids: &[NodeId]) -> bool {
        ids.iter().any(|id| self.nodes[id.0].requires_grad)
    }

    /// Differentiable input.
    pub fn variable(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Variable, value, true)
    }

    pub fn constant(&mut self, value: Matrix<T>) -> NodeId {
        self.push(Op::Constant, value, false)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).matmul(self.value(b))?;
        Ok(self.push(Op::MatMul(a, b), v, self.rg(&[a, b])))
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).transpose();
        Ok(self.push(Op::Transpose(a), v, self.rg(&[a])))
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).add(self.value(b))?;
        Ok(self.push(Op::Add(a, b), v, self.rg(&[a, b])))
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).sub(self.value(b))?;
        Ok(self.push(Op::Sub(a, b), v, self.rg(&[a, b])))
    }

    /// Multiplication by a fixed scalar.
    pub fn scale(&mut self, a: NodeId, s: T) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).scale(s);
        Ok(self.push(Op::Scale(a, s), v, self.rg(&[a])))
    }

    /// Elementwise product.
    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let v = self.value(a).hadamard(self.value(b))?;
        Ok(self.push(Op::Mul(a, b), v, self.rg(&[a, b])))
    }

    pub fn leaky_relu(&mut self, a: NodeId, slope: T) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).map(|x| leaky(x, slope));
        Ok(self.push(Op::LeakyRelu(a, slope), v, self.rg(&[a])))
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).map(|x| x.exp());
        Ok(self.push(Op::Exp(a), v, self.rg(&[a])))
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).map(|x| x.ln());
        Ok(self.push(Op::Log(a), v, self.rg(&[a])))
    }

    pub fn recip(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).map(|x| x.recip());
        Ok(self.push(Op::Recip(a), v, self.rg(&[a])))
    }

    pub fn sqrt(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = self.value(a).map(|x| x.sqrt());
        Ok(self.push(Op::Sqrt(a), v, self.rg(&[a])))
    }

    /// Softmax applied to each column independently.
    pub fn column_softmax(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = column_softmax(self.value(a));
        Ok(self.push(Op::ColumnSoftmax(a), v, self.rg(&[a])))
    }

    /// Sums each column, giving a 1 x cols row.
    pub fn col_sums(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let m = self.value(a);
        let v = Matrix::from_fn(1, m.cols(), |_, j| (0..m.rows()).map(|i| m.get(i, j)).sum());
        Ok(self.push(Op::ColSums(a), v, self.rg(&[a])))
    }

    /// Repeats a 1 x c row `rows` times.
    pub fn broadcast_rows(&mut self, a: NodeId, rows: usize) -> Result<NodeId> {
        self.check(a)?;
        let m = self.value(a);
        if m.rows() != 1 || rows == 0 {
            return Err(Error::ShapeMismatch {
                op: "broadcast_rows",
                lhs: m.shape(),
                rhs: (rows, m.cols()),
            });
        }
        let v = Matrix::from_fn(rows, m.cols(), |_, j| m.get(0, j));
        Ok(self.push(Op::BroadcastRows(a), v, self.rg(&[a])))
    }

    pub fn sum(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = Matrix::scalar(self.value(a).sum());
        Ok(self.push(Op::Sum(a), v, self.rg(&[a])))
    }

    pub fn mean(&mut self, a: NodeId) -> Result<NodeId> {
        let n = self.value(a).len();
        let s = self.sum(a)?;
        self.scale(s, T::one() / T::lit(n as f64))
    }

    pub fn broadcast_scalar(&mut self, a: NodeId, shape: (usize, usize)) -> Result<NodeId> {
        self.check(a)?;
        let m = self.value(a);
        if m.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "broadcast_scalar",
                lhs: m.shape(),
                rhs: shape,
            });
        }
        let v = Matrix::filled(shape.0, shape.1, m.item());
        Ok(self.push(Op::BroadcastScalar(a), v, self.rg(&[a])))
    }

    /// Multiplies matrix `a` by the 1x1 node `s`.
    pub fn scale_by(&mut self, s: NodeId, a: NodeId) -> Result<NodeId> {
        self.check(s)?;
        self.check(a)?;
        let sv = self.value(s);
        if sv.shape() != (1, 1) {
            return Err(Error::ShapeMismatch {
                op: "scale_by",
                lhs: sv.shape(),
                rhs: (1, 1),
            });
        }
        let v = self.value(a).scale(sv.item());
        Ok(self.push(Op::ScaleByNode(s, a), v, self.rg(&[s, a])))
    }

    /// Mean over columns of `-log softmax(logits)[label]`, computed with a max shift.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        self.check(logits)?;
        let z = self.value(logits);
        if labels.len() != z.cols() {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: z.shape(),
                rhs: (1, labels.len()),
            });
        }
        let v = Matrix::scalar(cross_entropy_value(z, labels)?);
        Ok(self.push(
            Op::SoftmaxCrossEntropy(logits, labels.to_vec()),
            v,
            self.rg(&[logits]),
        ))
    }

    /// Squared Frobenius norm as a 1x1 node.
    pub fn squared_norm(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = Matrix::scalar(self.value(a).frobenius_norm_sq());
        Ok(self.push(Op::SquaredNorm(a), v, self.rg(&[a])))
    }

    pub fn inverse(&mut self, a: NodeId) -> Result<NodeId> {
        self.check(a)?;
        let v = inverse(self.value(a))?;
        Ok(self.push(Op::Inverse(a), v, self.rg(&[a])))
    }

    /// Records `B·A⁺` exactly as [`crate::linalg::pseudoinverse_apply`] computes it.
    ///
    /// The ridge λ is computed from the current value of `A` and enters the graph as a constant.
    pub fn pseudo_solve(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.check(a)?;
        self.check(b)?;
        let (r, c) = self.shape(a);
        if self.shape(b).1 != c {
            return Err(Error::ShapeMismatch {
                op: "pseudo_solve",
                lhs: (r, c),
                rhs: self.shape(b),
            });
        }
        let fro2 = self.value(a).frobenius_norm_sq();
        if fro2 == T::zero() {
            let rows = self.shape(b).0;
            return Ok(self.constant(Matrix::zeros(rows, r)));
        }
        let lambda = ridge_lambda(fro2, r.min(c));
        let at = self.transpose(a)?;
        let p = if r <= c {
            let gram = self.matmul(a, at)?;
            let ridge = self.constant(Matrix::identity(r).scale(lambda));
            let reg = self.add(gram, ridge)?;
            let inv = self.inverse(reg)?;
            self.matmul(at, inv)?
        } else {
            let gram = self.matmul(at, a)?;
            let ridge = self.constant(Matrix::identity(c).scale(lambda));
            let reg = self.add(gram, ridge)?;
            let inv = self.inverse(reg)?;
            self.matmul(inv, at)?
        };
        let mut x = self.matmul(b, p)?;
        for _ in 0..PINV_REFINE_STEPS {
            let xa = self.matmul(x, a)?;
            let resid = self.sub(b, xa)?;
            let corr = self.matmul(resid, p)?;
            x = self.add(x, corr)?;
        }
        Ok(x)
    }

    /// Gradient values of the scalar `target` with respect to `wrt`.
    pub fn gradient(&mut self, target: NodeId, wrt: &[NodeId]) -> Result<Vec<Matrix<T>>> {
        let ids = self.grad_nodes(target, wrt)?;
        Ok(ids.into_iter().map(|id| self.value(id).clone()).collect())
    }

    /// Records the backward pass and returns the adjoint node of each `wrt` entry.
    ///
    /// Each `wrt` node is treated as an independent input: adjoints are not propagated
    /// past it. Unreachable roots get a zero constant of the right shape.
    pub fn grad_nodes(&mut self, target: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check(target)?;
        for &w in wrt {
            self.check(w)?;
        }
        let tshape = self.shape(target);
        if tshape != (1, 1) {
            return Err(Error::NonScalarTarget(tshape));
        }
        let end = target.0 + 1;
        let mut adj: Vec<Option<NodeId>> = vec![None; end];
        let mut is_root = vec![false; end];
        for &w in wrt {
            if w.0 < end {
                is_root[w.0] = true;
            }
        }
        let lowest = wrt.iter().map(|w| w.0).min().unwrap_or(end);
        if !wrt.is_empty() && self.nodes[target.0].requires_grad {
            adj[target.0] = Some(self.constant(Matrix::scalar(T::one())));
        }
        let mut i = end;
        while i > lowest {
            i -= 1;
            let Some(a) = adj[i] else { continue };
            if is_root[i] || !self.nodes[i].requires_grad {
                continue;
            }
            for (parent, contrib) in self.backward(NodeId(i), a)? {
                adj[parent.0] = Some(match adj[parent.0] {
                    Some(prev) => self.add(prev, contrib)?,
                    None => contrib,
                });
            }
        }
        let mut out = Vec::with_capacity(wrt.len());
        for &w in wrt {
            let id = match adj.get(w.0).copied().flatten() {
                Some(id) => id,
                None => {
                    let (r, c) = self.shape(w);
                    self.constant(Matrix::zeros(r, c))
                }
            };
            out.push(id);
        }
        Ok(out)
    }

    /// Gradient of `½ Σ ‖∂loss/∂inner_i‖²` with respect to each outer root.
    pub fn gradient_of_grad_norm(
        &mut self,
        loss: NodeId,
        inner: &[NodeId],
        outer: &[NodeId],
    ) -> Result<(T, Vec<Matrix<T>>)> {
        self.gradient_of_weighted_grad_norm(loss, inner, None, outer)
    }

    /// As [`Tape::gradient_of_grad_norm`], with optional elementwise weights `A_i` giving the
    /// objective `½ Σ ⟨∂L/∂inner_i, A_i ⊙ ∂L/∂inner_i⟩`. Returns the objective value too.
    pub fn gradient_of_weighted_grad_norm(
        &mut self,
        loss: NodeId,
        inner: &[NodeId],
        weights: Option<&[Matrix<T>]>,
        outer: &[NodeId],
    ) -> Result<(T, Vec<Matrix<T>>)> {
        if let Some(o) = outer.iter().find(|o| inner.contains(o)) {
            return Err(Error::OverlappingRoots(o.0));
        }
        let obj = self.grad_norm_node(loss, inner, weights)?;
        let value = self.scalar(obj);
        let grads = self.gradient(obj, outer)?;
        Ok((value, grads))
    }

    /// Records `½ Σ ⟨∂L/∂inner_i, A_i ⊙ ∂L/∂inner_i⟩` and returns its node.
    pub fn grad_norm_node(
        &mut self,
        loss: NodeId,
        inner: &[NodeId],
        weights: Option<&[Matrix<T>]>,
    ) -> Result<NodeId> {
        if let Some(ws) = weights {
            if ws.len() != inner.len() {
                return Err(Error::InvalidConfig(format!(
                    "{} objective weights for {} roots",
                    ws.len(),
                    inner.len()
                )));
            }
        }
        let adjs = self.grad_nodes(loss, inner)?;
        let mut total: Option<NodeId> = None;
        for (i, &a) in adjs.iter().enumerate() {
            let term = match weights {
                Some(ws) => {
                    let w = self.constant(ws[i].clone());
                    let wa = self.mul(w, a)?;
                    let prod = self.mul(wa, a)?;
                    self.sum(prod)?
                }
                None => self.squared_norm(a)?,
            };
            total = Some(match total {
                Some(t) => self.add(t, term)?,
                None => term,
            });
        }
        let total = total.unwrap_or_else(|| self.constant(Matrix::scalar(T::zero())));
        self.scale(total, T::lit(0.5))
    }

    /// Contributions of node `id` with adjoint `adj` to its parents, recorded on the tape.
    fn backward(&mut self, id: NodeId, adj: NodeId) -> Result<Vec<(NodeId, NodeId)>> {
        let op = self.nodes[id.0].op.clone();
        let mut out = Vec::with_capacity(2);
        match op {
            Op::Constant | Op::Variable => {}
            Op::MatMul(a, b) => {
                if self.requires_grad(a) {
                    let bt = self.transpose(b)?;
                    out.push((a, self.matmul(adj, bt)?));
                }
                if self.requires_grad(b) {
                    let at = self.transpose(a)?;
                    out.push((b, self.matmul(at, adj)?));
                }
            }
            Op::Transpose(a) => out.push((a, self.transpose(adj)?)),
            Op::Add(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, adj));
                }
                if self.requires_grad(b) {
                    out.push((b, adj));
                }
            }
            Op::Sub(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, adj));
                }
                if self.requires_grad(b) {
                    out.push((b, self.scale(adj, -T::one())?));
                }
            }
            Op::Scale(a, s) => out.push((a, self.scale(adj, s)?)),
            Op::Mul(a, b) => {
                if self.requires_grad(a) {
                    out.push((a, self.mul(adj, b)?));
                }
                if self.requires_grad(b) {
                    out.push((b, self.mul(adj, a)?));
                }
            }
            Op::LeakyRelu(a, slope) => {
                let mask = self
                    .value(a)
                    .map(|x| if x >= T::zero() { T::one() } else { slope });
                let m = self.constant(mask);
                out.push((a, self.mul(adj, m)?));
            }
            Op::Exp(a) => out.push((a, self.mul(adj, id)?)),
            Op::Log(a) => {
                let r = self.recip(a)?;
                out.push((a, self.mul(adj, r)?));
            }
            Op::Recip(a) => {
                let sq = self.mul(id, id)?;
                let t = self.mul(adj, sq)?;
                out.push((a, self.scale(t, -T::one())?));
            }
            Op::Sqrt(a) => {
                let r = self.recip(id)?;
                let t = self.mul(adj, r)?;
                out.push((a, self.scale(t, T::lit(0.5))?));
            }
            Op::ColumnSoftmax(a) => {
                // dz = y ⊙ (adj − 1·colsum(y ⊙ adj))
                let rows = self.shape(a).0;
                let ya = self.mul(id, adj)?;
                let cs = self.col_sums(ya)?;
                let bc = self.broadcast_rows(cs, rows)?;
                let yb = self.mul(id, bc)?;
                out.push((a, self.sub(ya, yb)?));
            }
            Op::ColSums(a) => {
                let rows = self.shape(a).0;
                out.push((a, self.broadcast_rows(adj, rows)?));
            }
            Op::BroadcastRows(a) => out.push((a, self.col_sums(adj)?)),
            Op::Sum(a) => {
                let shape = self.shape(a);
                out.push((a, self.broadcast_scalar(adj, shape)?));
            }
            Op::BroadcastScalar(a) => out.push((a, self.sum(adj)?)),
            Op::ScaleByNode(s, a) => {
                if self.requires_grad(s) {
                    let p = self.mul(adj, a)?;
                    out.push((s, self.sum(p)?));
                }
                if self.requires_grad(a) {
                    out.push((a, self.scale_by(s, adj)?));
                }
            }
            Op::SoftmaxCrossEntropy(z, labels) => {
                let (rows, cols) = self.shape(z);
                let y = self.column_softmax(z)?;
                let mut onehot = Matrix::zeros(rows, cols);
                for (j, &l) in labels.iter().enumerate() {
                    onehot.set(l, j, T::one());
                }
                let oh = self.constant(onehot);
                let diff = self.sub(y, oh)?;
                let avg = self.scale(diff, T::one() / T::lit(cols as f64))?;
                out.push((z, self.scale_by(adj, avg)?));
            }
            Op::SquaredNorm(a) => {
                let twice = self.scale(a, T::lit(2.0))?;
                out.push((a, self.scale_by(adj, twice)?));
            }
            Op::Inverse(a) => {
                // d(A⁻¹) = −A⁻¹ dA A⁻¹  ⇒  Ā = −Yᵀ Ȳ Yᵀ
                let yt = self.transpose(id)?;
                let left = self.matmul(yt, adj)?;
                let prod = self.matmul(left, yt)?;
                out.push((a, self.scale(prod, -T::one())?));
            }
        }
        out.retain(|(p, _)| self.requires_grad(*p));
        Ok(out)
    }
}

#[inline]
pub(crate) fn leaky<T: Scalar>(x: T, slope: T) -> T {
    if x >= T::zero() {
        x
    } else {
        slope * x
    }
}

pub(crate) fn column_softmax<T: Scalar>(z: &Matrix<T>) -> Matrix<T> {
    let (r, c) = z.shape();
    let mut out = Matrix::zeros(r, c);
    for j in 0..c {
        let mx = (0..r).map(|i| z.get(i, j)).fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for i in 0..r {
            let e = (z.get(i, j) - mx).exp();
            out.set(i, j, e);
            s += e;
        }
        for i in 0..r {
            let v = out.get(i, j) / s;
            out.set(i, j, v);
        }
    }
    out
}

pub(crate) fn cross_entropy_value<T: Scalar>(z: &Matrix<T>, labels: &[usize]) -> Result<T> {
    let (r, c) = z.shape();
    if c == 0 || labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut total = T::zero();
    for (j, &l) in labels.iter().enumerate() {
        if l >= r {
            return Err(Error::LabelOutOfRange {
                label: l,
                classes: r,
            });
        }
        let mx = (0..r).map(|i| z.get(i, j)).fold(T::neg_infinity(), T::max);
        let lse = (0..r).map(|i| (z.get(i, j) - mx).exp()).sum::<T>().ln() + mx;
        total += lse - z.get(l, j);
    }
    Ok(total / T::lit(c as f64))
}
