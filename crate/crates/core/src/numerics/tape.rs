//! Tape-based reverse-mode differentiation over [`Tensor`]s.
//!
//! Every operation records its inputs (and whatever forward quantities its
//! backward needs) on the tape. [`Tape::backward`] walks the tape in reverse,
//! and [`Tape::accumulate`] adds the gradients of parameter leaves into a
//! [`ParamStore`].

use std::collections::HashMap;
use std::rc::Rc;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use super::tensor::{
    gelu_grad_scalar, gelu_scalar, gemm, row_moments, sigmoid_scalar, softmax_row_in_place,
    COSINE_EPS,
};
use super::{ParamId, ParamStore, Tensor};

/// Lower/upper clamp applied to probabilities before taking logs in BCE.
pub const BCE_CLAMP: f64 = 1e-7;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// Forward-pass mode. Dropout is only active in `Train`.
pub enum Mode<'a> {
    Eval,
    Train(&'a mut ChaCha8Rng),
}

impl Mode<'_> {
    pub fn is_train(&self) -> bool {
        matches!(self, Mode::Train(_))
    }
}

/// Sparse row combination: output row `r` is `Σ w · table[idx]` over the
/// `(idx, w)` entries of that row. Covers embedding lookup, row selection
/// and path averaging.
#[derive(Debug, Clone, PartialEq)]
pub struct RowMix {
    offsets: Vec<usize>,
    index: Vec<usize>,
    weight: Vec<f64>,
}

impl RowMix {
    /// Plain gather: output row `r` is `table[rows[r]]`.
    pub fn select(rows: &[usize]) -> Self {
        Self {
            offsets: (0..=rows.len()).collect(),
            index: rows.to_vec(),
            weight: vec![1.0; rows.len()],
        }
    }

    pub fn from_rows<I, R>(rows: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: IntoIterator<Item = (usize, f64)>,
    {
        let mut mix = Self {
            offsets: vec![0],
            index: Vec::new(),
            weight: Vec::new(),
        };
        for row in rows {
            for (i, w) in row {
                mix.index.push(i);
                mix.weight.push(w);
            }
            mix.offsets.push(mix.index.len());
        }
        mix
    }

    pub fn num_rows(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn row(&self, r: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let span = self.offsets[r]..self.offsets[r + 1];
        self.index[span.clone()]
            .iter()
            .copied()
            .zip(self.weight[span].iter().copied())
    }

    fn max_index(&self) -> Option<usize> {
        self.index.iter().copied().max()
    }
}

/// Key mask for last-axis softmax: row `r` may only attend to positions `j`
/// with `keys[(r / rows_per_group) * width + j]` set.
#[derive(Debug, Clone, PartialEq)]
pub struct KeyMask {
    pub keys: Vec<bool>,
    pub rows_per_group: usize,
}

/// One contrastive group: a softmax over `candidates` with `positives`
/// (a subset of `candidates`) as targets, read from one row of a matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct ContrastGroup {
    pub row: usize,
    pub positives: Vec<usize>,
    pub candidates: Vec<usize>,
}

enum Op {
    Leaf,
    Param,
    MatMul(Var, Var),
    BatchMatMul { a: Var, b: Var, trans_b: bool },
    Add(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Gelu(Var),
    Sigmoid(Var),
    LayerNorm {
        x: Var,
        gain: Var,
        bias: Var,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
    },
    Softmax(Var),
    Permute { x: Var, perm: Vec<usize> },
    Reshape(Var),
    RowMix { table: Var, mix: Rc<RowMix> },
    SumLast(Var),
    Sum(Var),
    MaskScale { x: Var, mask: Vec<f64> },
    CosSim {
        z: Var,
        l: Var,
        z_norm: Vec<f64>,
        l_norm: Vec<f64>,
    },
    Contrastive {
        sim: Var,
        groups: Rc<Vec<ContrastGroup>>,
        tau: f64,
    },
    Bce { p: Var, targets: Vec<f64> },
    DiagMatMul(Var, Var),
}

struct Node {
    value: Tensor,
    op: Op,
}

/// Gradients of a scalar with respect to every node of a tape.
pub struct Gradients(Vec<Option<Tensor>>);

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.0.get(v.0).and_then(Option::as_ref)
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: HashMap<ParamId, Var>,
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

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.shape()
    }

    /// Non-parameter leaf. Gradients reach it but are not stored anywhere
    /// unless read from [`Gradients`].
    pub fn leaf(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// Leaf bound to a stored parameter; repeated calls return the same node.
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Var {
        if let Some(&v) = self.params.get(&id) {
            return v;
        }
        let v = self.push(store.value(id).clone(), Op::Param);
        self.params.insert(id, v);
        v
    }

    /// `a · b` where `b` is 2-D and `a` is viewed as rows over its last axis.
    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(bv.ndim(), 2, "matmul rhs must be 2-D, got {:?}", bv.shape());
        let (k, n) = (bv.shape()[0], bv.shape()[1]);
        assert_eq!(av.last_dim(), k, "matmul {:?} x {:?}", av.shape(), bv.shape());
        let m = av.rows();
        let mut out = vec![0.0; m * n];
        gemm(m, k, n, av.data(), false, bv.data(), false, &mut out, false);
        let mut shape = av.shape().to_vec();
        *shape.last_mut().unwrap() = n;
        let value = Tensor::new(shape, out).unwrap();
        self.push(value, Op::MatMul(a, b))
    }

    /// Batched product over the leading axis: `[B,m,k]·[B,k,n]`, or
    /// `[B,m,k]·[B,n,k]ᵀ` when `trans_b` is set.
    pub fn batch_matmul(&mut self, a: Var, b: Var, trans_b: bool) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.ndim() == 3 && bv.ndim() == 3, "batch_matmul expects 3-D operands");
        let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
        assert_eq!(bv.shape()[0], batch, "batch_matmul batch size");
        let n = if trans_b {
            assert_eq!(bv.shape()[2], k, "batch_matmul inner dimension");
            bv.shape()[1]
        } else {
            assert_eq!(bv.shape()[1], k, "batch_matmul inner dimension");
            bv.shape()[2]
        };
        let mut out = vec![0.0; batch * m * n];
        for t in 0..batch {
            gemm(
                m,
                k,
                n,
                &av.data()[t * m * k..(t + 1) * m * k],
                false,
                &bv.data()[t * k * n..(t + 1) * k * n],
                trans_b,
                &mut out[t * m * n..(t + 1) * m * n],
                false,
            );
        }
        let value = Tensor::new(vec![batch, m, n], out).unwrap();
        self.push(value, Op::BatchMatMul { a, b, trans_b })
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "add shapes");
        let mut value = av.clone();
        value.add_assign(bv);
        self.push(value, Op::Add(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.shape(), bv.shape(), "mul shapes");
        let mut value = av.clone();
        for (x, y) in value.data_mut().iter_mut().zip(bv.data()) {
            *x *= y;
        }
        self.push(value, Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: Var, c: f64) -> Var {
        let value = self.value(x).map(|v| v * c);
        self.push(value, Op::Scale(x, c))
    }

    /// Adds a vector along the last axis of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Var {
        let (xv, bv) = (self.value(x), self.value(bias));
        let d = xv.last_dim();
        assert_eq!(bv.len(), d, "bias size {:?} vs {:?}", bv.shape(), xv.shape());
        let mut value = xv.clone();
        for r in 0..value.rows() {
            for (v, b) in value.row_mut(r).iter_mut().zip(bv.data()) {
                *v += b;
            }
        }
        self.push(value, Op::AddBias(x, bias))
    }

    pub fn gelu(&mut self, x: Var) -> Var {
        let value = self.value(x).map(gelu_scalar);
        self.push(value, Op::Gelu(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let value = self.value(x).map(sigmoid_scalar);
        self.push(value, Op::Sigmoid(x))
    }

    /// Layer normalization over the last axis.
    pub fn layer_norm(&mut self, x: Var, gain: Var, bias: Var) -> Var {
        let xv = self.value(x);
        let d = xv.last_dim();
        let (g, b) = (self.value(gain).data(), self.value(bias).data());
        assert!(g.len() == d && b.len() == d, "layer_norm parameter size");
        let rows = xv.rows();
        let mut xhat = Vec::with_capacity(xv.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(xv.len());
        for r in 0..rows {
            let row = xv.row(r);
            let (mean, istd) = row_moments(row);
            inv_std.push(istd);
            for (c, &v) in row.iter().enumerate() {
                let h = (v - mean) * istd;
                xhat.push(h);
                out.push(h * g[c] + b[c]);
            }
        }
        let value = Tensor::new(xv.shape().to_vec(), out).unwrap();
        self.push(
            value,
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            },
        )
    }

    /// Softmax over the last axis, optionally with masked-out keys.
    pub fn softmax(&mut self, x: Var, mask: Option<Rc<KeyMask>>) -> Var {
        let mut value = self.value(x).clone();
        let d = value.last_dim();
        for r in 0..value.rows() {
            let keys = mask.as_ref().map(|m| {
                let g = r / m.rows_per_group;
                &m.keys[g * d..(g + 1) * d]
            });
            softmax_row_in_place(value.row_mut(r), keys);
        }
        self.push(value, Op::Softmax(x))
    }

    pub fn permute(&mut self, x: Var, perm: &[usize]) -> Var {
        let value = self.value(x).permute(perm);
        self.push(
            value,
            Op::Permute {
                x,
                perm: perm.to_vec(),
            },
        )
    }

    pub fn reshape(&mut self, x: Var, shape: &[usize]) -> Var {
        let value = self.value(x).clone().reshape(shape);
        self.push(value, Op::Reshape(x))
    }

    /// Sparse row combination of `table` (viewed as `[rows, last_dim]`).
    pub fn row_mix(&mut self, table: Var, mix: Rc<RowMix>) -> Var {
        let tv = self.value(table);
        let d = tv.last_dim();
        if let Some(max) = mix.max_index() {
            assert!(max < tv.rows(), "row_mix index {max} out of {} rows", tv.rows());
        }
        let mut out = Tensor::zeros(&[mix.num_rows(), d]);
        for r in 0..mix.num_rows() {
            let dst = out.row_mut(r);
            for (i, w) in mix.row(r) {
                for (o, v) in dst.iter_mut().zip(tv.row(i)) {
                    *o += w * v;
                }
            }
        }
        self.push(out, Op::RowMix { table, mix })
    }

    /// Sums over the last axis, dropping it.
    pub fn sum_last(&mut self, x: Var) -> Var {
        let xv = self.value(x);
        let data: Vec<f64> = (0..xv.rows()).map(|r| xv.row(r).iter().sum()).collect();
        let shape = xv.shape()[..xv.ndim() - 1].to_vec();
        let value = Tensor::new(shape, data).unwrap();
        self.push(value, Op::SumLast(x))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let value = Tensor::scalar(self.value(x).sum());
        self.push(value, Op::Sum(x))
    }

    /// Inverted dropout; identity in eval mode or when `rate` is zero.
    pub fn dropout(&mut self, x: Var, rate: f64, mode: &mut Mode<'_>) -> Var {
        let rng = match mode {
            Mode::Train(rng) if rate > 0.0 => rng,
            _ => return x,
        };
        let keep = 1.0 - rate;
        let n = self.value(x).len();
        let mask: Vec<f64> = (0..n)
            .map(|_| if rng.random::<f64>() < keep { 1.0 / keep } else { 0.0 })
            .collect();
        let mut value = self.value(x).clone();
        for (v, m) in value.data_mut().iter_mut().zip(&mask) {
            *v *= m;
        }
        self.push(value, Op::MaskScale { x, mask })
    }

    /// Cosine-similarity matrix between the rows of `z` (`[M,d]`) and `l` (`[K,d]`).
    pub fn cosine_matrix(&mut self, z: Var, l: Var) -> Var {
        let (zv, lv) = (self.value(z), self.value(l));
        assert!(zv.ndim() == 2 && lv.ndim() == 2, "cosine_matrix expects 2-D operands");
        let d = zv.last_dim();
        assert_eq!(lv.last_dim(), d, "cosine_matrix feature size");
        let (m, k) = (zv.rows(), lv.rows());
        let norms = |t: &Tensor| -> Vec<f64> {
            (0..t.rows()).map(|r| super::tensor::norm(t.row(r))).collect()
        };
        let (z_norm, l_norm) = (norms(zv), norms(lv));
        let mut out = vec![0.0; m * k];
        gemm(m, d, k, zv.data(), false, lv.data(), true, &mut out, false);
        for i in 0..m {
            for j in 0..k {
                out[i * k + j] /= z_norm[i].max(COSINE_EPS) * l_norm[j].max(COSINE_EPS);
            }
        }
        let value = Tensor::new(vec![m, k], out).unwrap();
        self.push(
            value,
            Op::CosSim {
                z,
                l,
                z_norm,
                l_norm,
            },
        )
    }

    /// Mean over groups of `(1/|P|) Σ_p −log softmax_τ(candidates)[p]`, read
    /// from rows of the matrix `sim`. Stabilized by max-subtraction.
    pub fn contrastive(&mut self, sim: Var, groups: Rc<Vec<ContrastGroup>>, tau: f64) -> Var {
        assert!(tau > 0.0, "temperature must be positive");
        let sv = self.value(sim);
        let mut total = 0.0;
        for g in groups.iter() {
            let row = sv.row(g.row);
            let lse = log_sum_exp(g.candidates.iter().map(|&s| row[s] / tau));
            let per: f64 = g.positives.iter().map(|&p| lse - row[p] / tau).sum();
            total += per / g.positives.len() as f64;
        }
        let value = Tensor::scalar(total / groups.len().max(1) as f64);
        self.push(value, Op::Contrastive { sim, groups, tau })
    }

    /// Binary cross-entropy summed over labels and averaged over rows.
    pub fn bce(&mut self, p: Var, targets: &Tensor) -> Var {
        let pv = self.value(p);
        assert_eq!(pv.shape(), targets.shape(), "bce shapes");
        let rows = pv.rows().max(1) as f64;
        let mut total = 0.0;
        for (&p, &y) in pv.data().iter().zip(targets.data()) {
            let q = p.clamp(BCE_CLAMP, 1.0 - BCE_CLAMP);
            total += y * q.ln() + (1.0 - y) * (1.0 - q).ln();
        }
        let value = Tensor::scalar(-total / rows);
        self.push(
            value,
            Op::Bce {
                p,
                targets: targets.data().to_vec(),
            },
        )
    }

    /// `out[i] = Σ_h a[i,h] · b[h,i]`, the diagonal of `a·b`.
    pub fn diag_matmul(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert!(av.ndim() == 2 && bv.ndim() == 2, "diag_matmul expects 2-D operands");
        let (k, d) = (av.shape()[0], av.shape()[1]);
        assert_eq!(bv.shape(), &[d, k], "diag_matmul shapes");
        let data = (0..k)
            .map(|i| (0..d).map(|h| av.data()[i * d + h] * bv.data()[h * k + i]).sum())
            .collect();
        self.push(Tensor::from_vec(data), Op::DiagMatMul(a, b))
    }

    /// Gradients of the scalar `loss` with respect to every node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).len(), 1, "backward from a non-scalar");
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(self.value(loss).shape(), 1.0));
        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            self.backward_node(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        Gradients(grads)
    }

    /// Adds gradients of every parameter leaf into the store.
    pub fn accumulate(&self, grads: &Gradients, store: &mut ParamStore) {
        for (&id, &v) in &self.params {
            if let Some(g) = grads.get(v) {
                store.get_mut(id).grad.add_assign(g);
            }
        }
    }

    pub fn backward_into(&self, loss: Var, store: &mut ParamStore) {
        let grads = self.backward(loss);
        self.accumulate(&grads, store);
    }

    fn backward_node(&self, i: usize, g: &Tensor, grads: &mut [Option<Tensor>]) {
        let node = &self.nodes[i];
        let out = &node.value;
        match &node.op {
            Op::Leaf | Op::Param => {}
            Op::MatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, n) = (bv.shape()[0], bv.shape()[1]);
                let m = av.rows();
                let mut da = vec![0.0; m * k];
                gemm(m, n, k, g.data(), false, bv.data(), true, &mut da, false);
                let mut db = vec![0.0; k * n];
                gemm(k, m, n, av.data(), true, g.data(), false, &mut db, false);
                accumulate(grads, *a, da, av.shape());
                accumulate(grads, *b, db, bv.shape());
            }
            Op::BatchMatMul { a, b, trans_b } => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (batch, m, k) = (av.shape()[0], av.shape()[1], av.shape()[2]);
                let n = out.shape()[2];
                let mut da = vec![0.0; av.len()];
                let mut db = vec![0.0; bv.len()];
                for t in 0..batch {
                    let gt = &g.data()[t * m * n..(t + 1) * m * n];
                    let at = &av.data()[t * m * k..(t + 1) * m * k];
                    let bt = &bv.data()[t * k * n..(t + 1) * k * n];
                    let da_t = &mut da[t * m * k..(t + 1) * m * k];
                    let db_t = &mut db[t * k * n..(t + 1) * k * n];
                    if *trans_b {
                        // C = A Bᵀ with B stored [n,k]: dA = G B, dB = Gᵀ A.
                        gemm(m, n, k, gt, false, bt, false, da_t, false);
                        gemm(n, m, k, gt, true, at, false, db_t, false);
                    } else {
                        gemm(m, n, k, gt, false, bt, true, da_t, false);
                        gemm(k, m, n, at, true, gt, false, db_t, false);
                    }
                }
                accumulate(grads, *a, da, av.shape());
                accumulate(grads, *b, db, bv.shape());
            }
            Op::Add(a, b) => {
                accumulate(grads, *a, g.data().to_vec(), g.shape());
                accumulate(grads, *b, g.data().to_vec(), g.shape());
            }
            Op::Mul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let da = g.data().iter().zip(bv.data()).map(|(g, y)| g * y).collect();
                let db = g.data().iter().zip(av.data()).map(|(g, x)| g * x).collect();
                accumulate(grads, *a, da, av.shape());
                accumulate(grads, *b, db, bv.shape());
            }
            Op::Scale(x, c) => {
                accumulate(grads, *x, g.data().iter().map(|v| v * c).collect(), g.shape());
            }
            Op::AddBias(x, b) => {
                let d = g.last_dim();
                let mut db = vec![0.0; d];
                for r in 0..g.rows() {
                    for (acc, v) in db.iter_mut().zip(g.row(r)) {
                        *acc += v;
                    }
                }
                accumulate(grads, *x, g.data().to_vec(), g.shape());
                let bshape = self.value(*b).shape().to_vec();
                accumulate(grads, *b, db, &bshape);
            }
            Op::Gelu(x) => {
                let xv = self.value(*x);
                let dx = g
                    .data()
                    .iter()
                    .zip(xv.data())
                    .map(|(g, &x)| g * gelu_grad_scalar(x))
                    .collect();
                accumulate(grads, *x, dx, xv.shape());
            }
            Op::Sigmoid(x) => {
                let dx = g
                    .data()
                    .iter()
                    .zip(out.data())
                    .map(|(g, y)| g * y * (1.0 - y))
                    .collect();
                accumulate(grads, *x, dx, out.shape());
            }
            Op::LayerNorm {
                x,
                gain,
                bias,
                xhat,
                inv_std,
            } => {
                let gv = self.value(*gain).data();
                let d = g.last_dim();
                let mut dx = vec![0.0; g.len()];
                let mut dgain = vec![0.0; d];
                let mut dbias = vec![0.0; d];
                for r in 0..g.rows() {
                    let gr = g.row(r);
                    let xh = &xhat[r * d..(r + 1) * d];
                    let mut mean_dxh = 0.0;
                    let mut mean_dxh_xh = 0.0;
                    for c in 0..d {
                        let dxh = gr[c] * gv[c];
                        mean_dxh += dxh;
                        mean_dxh_xh += dxh * xh[c];
                        dgain[c] += gr[c] * xh[c];
                        dbias[c] += gr[c];
                    }
                    mean_dxh /= d as f64;
                    mean_dxh_xh /= d as f64;
                    for c in 0..d {
                        let dxh = gr[c] * gv[c];
                        dx[r * d + c] = inv_std[r] * (dxh - mean_dxh - xh[c] * mean_dxh_xh);
                    }
                }
                accumulate(grads, *x, dx, g.shape());
                let gshape = self.value(*gain).shape().to_vec();
                accumulate(grads, *gain, dgain, &gshape);
                let bshape = self.value(*bias).shape().to_vec();
                accumulate(grads, *bias, dbias, &bshape);
            }
            Op::Softmax(x) => {
                let d = g.last_dim();
                let mut dx = vec![0.0; g.len()];
                for r in 0..g.rows() {
                    let (gr, yr) = (g.row(r), out.row(r));
                    let inner: f64 = gr.iter().zip(yr).map(|(a, b)| a * b).sum();
                    for c in 0..d {
                        dx[r * d + c] = yr[c] * (gr[c] - inner);
                    }
                }
                accumulate(grads, *x, dx, g.shape());
            }
            Op::Permute { x, perm } => {
                let mut inverse = vec![0; perm.len()];
                for (k, &p) in perm.iter().enumerate() {
                    inverse[p] = k;
                }
                let dx = g.permute(&inverse);
                let shape = dx.shape().to_vec();
                accumulate(grads, *x, dx.into_data(), &shape);
            }
            Op::Reshape(x) => {
                let shape = self.value(*x).shape().to_vec();
                accumulate(grads, *x, g.data().to_vec(), &shape);
            }
            Op::RowMix { table, mix } => {
                let tv = self.value(*table);
                let d = tv.last_dim();
                let mut dt = vec![0.0; tv.len()];
                for r in 0..mix.num_rows() {
                    let gr = g.row(r);
                    for (idx, w) in mix.row(r) {
                        for (acc, v) in dt[idx * d..(idx + 1) * d].iter_mut().zip(gr) {
                            *acc += w * v;
                        }
                    }
                }
                accumulate(grads, *table, dt, tv.shape());
            }
            Op::SumLast(x) => {
                let xv = self.value(*x);
                let d = xv.last_dim();
                let dx = g
                    .data()
                    .iter()
                    .flat_map(|&v| std::iter::repeat_n(v, d))
                    .collect();
                accumulate(grads, *x, dx, xv.shape());
            }
            Op::Sum(x) => {
                let xv = self.value(*x);
                accumulate(grads, *x, vec![g.item(); xv.len()], xv.shape());
            }
            Op::MaskScale { x, mask } => {
                let dx = g.data().iter().zip(mask).map(|(g, m)| g * m).collect();
                accumulate(grads, *x, dx, g.shape());
            }
            Op::CosSim {
                z,
                l,
                z_norm,
                l_norm,
            } => {
                let (zv, lv) = (self.value(*z), self.value(*l));
                let d = zv.last_dim();
                let (m, k) = (zv.rows(), lv.rows());
                let zn: Vec<f64> = z_norm.iter().map(|n| n.max(COSINE_EPS)).collect();
                let ln: Vec<f64> = l_norm.iter().map(|n| n.max(COSINE_EPS)).collect();
                // Scaled upstream gradient G / (|z_i| |l_j|).
                let mut gs = vec![0.0; m * k];
                let mut row_coef = vec![0.0; m];
                let mut col_coef = vec![0.0; k];
                for i in 0..m {
                    for j in 0..k {
                        let gij = g.data()[i * k + j];
                        gs[i * k + j] = gij / (zn[i] * ln[j]);
                        let gsij = gij * out.data()[i * k + j];
                        row_coef[i] += gsij;
                        col_coef[j] += gsij;
                    }
                }
                let mut dz = vec![0.0; m * d];
                gemm(m, k, d, &gs, false, lv.data(), false, &mut dz, false);
                for i in 0..m {
                    if z_norm[i] > COSINE_EPS {
                        let c = row_coef[i] / (zn[i] * zn[i]);
                        for (acc, v) in dz[i * d..(i + 1) * d].iter_mut().zip(zv.row(i)) {
                            *acc -= c * v;
                        }
                    }
                }
                let mut dl = vec![0.0; k * d];
                gemm(k, m, d, &gs, true, zv.data(), false, &mut dl, false);
                for j in 0..k {
                    if l_norm[j] > COSINE_EPS {
                        let c = col_coef[j] / (ln[j] * ln[j]);
                        for (acc, v) in dl[j * d..(j + 1) * d].iter_mut().zip(lv.row(j)) {
                            *acc -= c * v;
                        }
                    }
                }
                accumulate(grads, *z, dz, zv.shape());
                accumulate(grads, *l, dl, lv.shape());
            }
            Op::Contrastive { sim, groups, tau } => {
                let sv = self.value(*sim);
                let scale = g.item() / (groups.len().max(1) as f64 * tau);
                let mut ds = vec![0.0; sv.len()];
                let width = sv.last_dim();
                for grp in groups.iter() {
                    let row = sv.row(grp.row);
                    let logits: Vec<f64> = grp.candidates.iter().map(|&s| row[s] / tau).collect();
                    let lse = log_sum_exp(logits.iter().copied());
                    let inv_p = 1.0 / grp.positives.len() as f64;
                    for (&s, a) in grp.candidates.iter().zip(&logits) {
                        ds[grp.row * width + s] += scale * (a - lse).exp();
                    }
                    for &p in &grp.positives {
                        ds[grp.row * width + p] -= scale * inv_p;
                    }
                }
                accumulate(grads, *sim, ds, sv.shape());
            }
            Op::Bce { p, targets } => {
                let pv = self.value(*p);
                let scale = -g.item() / pv.rows().max(1) as f64;
                let dp = pv
                    .data()
                    .iter()
                    .zip(targets)
                    .map(|(&p, &y)| {
                        if p > BCE_CLAMP && p < 1.0 - BCE_CLAMP {
                            scale * (y / p - (1.0 - y) / (1.0 - p))
                        } else {
                            0.0
                        }
                    })
                    .collect();
                accumulate(grads, *p, dp, pv.shape());
            }
            Op::DiagMatMul(a, b) => {
                let (av, bv) = (self.value(*a), self.value(*b));
                let (k, d) = (av.shape()[0], av.shape()[1]);
                let mut da = vec![0.0; k * d];
                let mut db = vec![0.0; d * k];
                for i in 0..k {
                    let gi = g.data()[i];
                    for h in 0..d {
                        da[i * d + h] = gi * bv.data()[h * k + i];
                        db[h * k + i] = gi * av.data()[i * d + h];
                    }
                }
                accumulate(grads, *a, da, av.shape());
                accumulate(grads, *b, db, bv.shape());
            }
        }
    }
}

fn accumulate(grads: &mut [Option<Tensor>], v: Var, data: Vec<f64>, shape: &[usize]) {
    match &mut grads[v.0] {
        Some(existing) => {
            for (e, d) in existing.data_mut().iter_mut().zip(&data) {
                *e += d;
            }
        }
        slot @ None => *slot = Some(Tensor::new(shape.to_vec(), data).unwrap()),
    }
}

/// `log Σ exp(x)` with max-subtraction.
pub fn log_sum_exp(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = values.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.map(|v| (v - max).exp()).sum::<f64>().ln()
}
