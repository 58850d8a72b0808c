//! Op forward kernels and their VJPs.
//!
//! Every op computes eagerly; when an operand sits on a tape the result is
//! recorded so [`super::Tape::backward`] can replay the chain rule. Matrix
//! products go through `matrixmultiply::sgemm`; transposed operands are
//! expressed with strides rather than materialized.

use std::sync::Arc;

use crate::error::{Error, Result};

use super::tape::{Node, Src, Tape};
use super::Tensor;

/// Recorded op kind plus whatever the backward pass needs that is not an
/// input value (indices, constants, rotation tables).
pub(crate) enum OpRecord {
    Leaf,
    Matmul,
    /// a[m,k] @ b[n,k]^T -> [m,n]
    MatmulNT,
    Add,
    Sub,
    Mul,
    Square,
    Scale(f32),
    AddScalar,
    /// x[r,n] + b[n]
    AddRow,
    /// x[r,n] * g[n]
    MulRow,
    /// x[r,n] * (1 + s[n]) + t[n]
    Modulate,
    Silu,
    /// Row-wise softmax over the last axis.
    Softmax,
    RmsNorm { eps: f32 },
    Embedding { ids: Vec<usize> },
    Reshape,
    Transpose,
    ConcatRows,
    SliceRows { r0: usize, r1: usize },
    ConcatCols,
    SliceCols { c0: usize, c1: usize },
    SumAll,
    MeanAll,
    /// Pair rotation: (x[2k], x[2k+1]) rotated by the k-th table angle.
    Rope { cos: Arc<Vec<f32>>, sin: Arc<Vec<f32>> },
    /// Mean negative log-likelihood over rows of logits.
    CrossEntropy { targets: Vec<usize> },
}

#[inline]
unsafe fn sgemm_raw(
    m: usize,
    k: usize,
    n: usize,
    a: &[f32],
    rsa: isize,
    csa: isize,
    b: &[f32],
    rsb: isize,
    csb: isize,
    c: &mut [f32],
) {
    matrixmultiply::sgemm(
        m,
        k,
        n,
        1.0,
        a.as_ptr(),
        rsa,
        csa,
        b.as_ptr(),
        rsb,
        csb,
        0.0,
        c.as_mut_ptr(),
        n as isize,
        1,
    );
}

fn mm(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
    let mut c = vec![0.0; m * n];
    unsafe { sgemm_raw(m, k, n, a, k as isize, 1, b, n as isize, 1, &mut c) };
    c
}

fn mm_nt(m: usize, k: usize, n: usize, a: &[f32], b: &[f32]) -> Vec<f32> {
    // b holds an n-by-k matrix; view it transposed.
    let mut c = vec![0.0; m * n];
    unsafe { sgemm_raw(m, k, n, a, k as isize, 1, b, 1, k as isize, &mut c) };
    c
}

fn rows_cols(shape: &[usize]) -> (usize, usize) {
    let n = *shape.last().unwrap_or(&1);
    let numel: usize = shape.iter().product();
    (numel / n.max(1), n)
}

fn require_2d(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [m, n] => Ok((*m, *n)),
        s => Err(Error::dim(op, format!("expected rank-2 tensor, got {s:?}"))),
    }
}

fn src_of(t: &Tensor) -> Src {
    match t.node() {
        Some(nref) => Src::Node(nref.id),
        None => Src::Const { data: t.buf(), shape: t.shape().to_vec() },
    }
}

fn finish(
    tape: Option<Tape>,
    op: OpRecord,
    inputs: &[&Tensor],
    shape: Vec<usize>,
    data: Vec<f32>,
) -> Tensor {
    match tape {
        Some(tape) => tape.record(op, inputs.iter().map(|t| src_of(t)).collect(), shape, data),
        None => Tensor::from_parts(Arc::new(data), shape, false, None),
    }
}

impl Tensor {
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = require_2d(self, "matmul")?;
        let (k2, n) = require_2d(rhs, "matmul")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul",
                format!("inner dims differ: {:?} x {:?}", self.shape(), rhs.shape()),
            ));
        }
        let data = mm(m, k, n, self.data(), rhs.data());
        let tape = Tensor::common_tape(&[self, rhs])?;
        Ok(finish(tape, OpRecord::Matmul, &[self, rhs], vec![m, n], data))
    }

    /// `self[m,k] @ rhs[n,k]^T`, without materializing the transpose.
    pub fn matmul_nt(&self, rhs: &Tensor) -> Result<Tensor> {
        let (m, k) = require_2d(self, "matmul_nt")?;
        let (n, k2) = require_2d(rhs, "matmul_nt")?;
        if k != k2 {
            return Err(Error::dim(
                "matmul_nt",
                format!("inner dims differ: {:?} x {:?}^T", self.shape(), rhs.shape()),
            ));
        }
        let data = mm_nt(m, k, n, self.data(), rhs.data());
        let tape = Tensor::common_tape(&[self, rhs])?;
        Ok(finish(tape, OpRecord::MatmulNT, &[self, rhs], vec![m, n], data))
    }

    fn zip_same_shape(&self, rhs: &Tensor, op: &'static str) -> Result<()> {
        if self.shape() != rhs.shape() {
            return Err(Error::dim(
                op,
                format!("shapes differ: {:?} vs {:?}", self.shape(), rhs.shape()),
            ));
        }
        Ok(())
    }

    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "add")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a + b).collect();
        let tape = Tensor::common_tape(&[self, rhs])?;
        Ok(finish(tape, OpRecord::Add, &[self, rhs], self.shape().to_vec(), data))
    }

    pub fn sub(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "sub")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a - b).collect();
        let tape = Tensor::common_tape(&[self, rhs])?;
        Ok(finish(tape, OpRecord::Sub, &[self, rhs], self.shape().to_vec(), data))
    }

    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.zip_same_shape(rhs, "mul")?;
        let data = self.data().iter().zip(rhs.data()).map(|(a, b)| a * b).collect();
        let tape = Tensor::common_tape(&[self, rhs])?;
        Ok(finish(tape, OpRecord::Mul, &[self, rhs], self.shape().to_vec(), data))
    }

    pub fn square(&self) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a * a).collect();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Square, &[self], self.shape().to_vec(), data))
    }

    pub fn scale(&self, c: f32) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a * c).collect();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Scale(c), &[self], self.shape().to_vec(), data))
    }

    pub fn add_scalar(&self, c: f32) -> Result<Tensor> {
        let data = self.data().iter().map(|a| a + c).collect();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::AddScalar, &[self], self.shape().to_vec(), data))
    }

    /// Broadcast add of a length-n vector over the rows of an [..., n] tensor.
    pub fn add_row(&self, bias: &Tensor) -> Result<Tensor> {
        let (rows, n) = rows_cols(self.shape());
        if bias.shape() != [n] {
            return Err(Error::dim(
                "add_row",
                format!("bias {:?} does not match last dim of {:?}", bias.shape(), self.shape()),
            ));
        }
        let b = bias.data();
        let mut data = Vec::with_capacity(rows * n);
        for row in self.data().chunks_exact(n) {
            data.extend(row.iter().zip(b).map(|(x, bb)| x + bb));
        }
        let tape = Tensor::common_tape(&[self, bias])?;
        Ok(finish(tape, OpRecord::AddRow, &[self, bias], self.shape().to_vec(), data))
    }

    /// Broadcast multiply of a length-n vector over rows (gating).
    pub fn mul_row(&self, gate: &Tensor) -> Result<Tensor> {
        let (rows, n) = rows_cols(self.shape());
        if gate.shape() != [n] {
            return Err(Error::dim(
                "mul_row",
                format!("gate {:?} does not match last dim of {:?}", gate.shape(), self.shape()),
            ));
        }
        let g = gate.data();
        let mut data = Vec::with_capacity(rows * n);
        for row in self.data().chunks_exact(n) {
            data.extend(row.iter().zip(g).map(|(x, gg)| x * gg));
        }
        let tape = Tensor::common_tape(&[self, gate])?;
        Ok(finish(tape, OpRecord::MulRow, &[self, gate], self.shape().to_vec(), data))
    }

    /// Adaptive-norm modulation: `x * (1 + scale) + shift`, vectors broadcast
    /// over rows.
    pub fn modulate(&self, scale: &Tensor, shift: &Tensor) -> Result<Tensor> {
        let (rows, n) = rows_cols(self.shape());
        if scale.shape() != [n] || shift.shape() != [n] {
            return Err(Error::dim(
                "modulate",
                format!(
                    "scale {:?} / shift {:?} do not match last dim of {:?}",
                    scale.shape(),
                    shift.shape(),
                    self.shape()
                ),
            ));
        }
        let s = scale.data();
        let t = shift.data();
        let mut data = Vec::with_capacity(rows * n);
        for row in self.data().chunks_exact(n) {
            data.extend(
                row.iter()
                    .zip(s.iter().zip(t))
                    .map(|(x, (ss, tt))| x * (1.0 + ss) + tt),
            );
        }
        let tape = Tensor::common_tape(&[self, scale, shift])?;
        Ok(finish(tape, OpRecord::Modulate, &[self, scale, shift], self.shape().to_vec(), data))
    }

    pub fn silu(&self) -> Result<Tensor> {
        let data = self
            .data()
            .iter()
            .map(|&x| x * (1.0 / (1.0 + (-x).exp())))
            .collect();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Silu, &[self], self.shape().to_vec(), data))
    }

    /// Numerically stable softmax over the last axis. NaN inputs propagate.
    pub fn softmax(&self) -> Result<Tensor> {
        let (_, n) = rows_cols(self.shape());
        if n == 0 {
            return Err(Error::dim("softmax", "empty last axis".to_string()));
        }
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks_exact(n) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0;
            let start = data.len();
            for &x in row {
                let e = (x - max).exp();
                sum += e;
                data.push(e);
            }
            let inv = 1.0 / sum;
            for v in &mut data[start..] {
                *v *= inv;
            }
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Softmax, &[self], self.shape().to_vec(), data))
    }

    /// `x / sqrt(mean(x^2) + eps) * gamma`, row-wise over the last axis.
    pub fn rms_norm(&self, gamma: &Tensor, eps: f32) -> Result<Tensor> {
        let (_, n) = rows_cols(self.shape());
        if gamma.shape() != [n] {
            return Err(Error::dim(
                "rms_norm",
                format!("gamma {:?} does not match last dim of {:?}", gamma.shape(), self.shape()),
            ));
        }
        let g = gamma.data();
        let mut data = Vec::with_capacity(self.numel());
        for row in self.data().chunks_exact(n) {
            let ms: f32 = row.iter().map(|x| x * x).sum::<f32>() / n as f32;
            let inv = 1.0 / (ms + eps).sqrt();
            data.extend(row.iter().zip(g).map(|(x, gg)| x * inv * gg));
        }
        let tape = Tensor::common_tape(&[self, gamma])?;
        Ok(finish(tape, OpRecord::RmsNorm { eps }, &[self, gamma], self.shape().to_vec(), data))
    }

    /// Row gather: `self[v,d]` indexed by token ids -> `[len(ids), d]`.
    pub fn embedding(&self, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = require_2d(self, "embedding")?;
        if let Some(&bad) = ids.iter().find(|&&i| i >= v) {
            return Err(Error::contract(format!("embedding id {bad} out of vocab {v}")));
        }
        let mut data = Vec::with_capacity(ids.len() * d);
        for &i in ids {
            data.extend_from_slice(&self.data()[i * d..(i + 1) * d]);
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(
            tape,
            OpRecord::Embedding { ids: ids.to_vec() },
            &[self],
            vec![ids.len(), d],
            data,
        ))
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let numel: usize = shape.iter().product();
        if numel != self.numel() {
            return Err(Error::dim(
                "reshape",
                format!("cannot reshape {:?} into {:?}", self.shape(), shape),
            ));
        }
        let data = self.data().to_vec();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Reshape, &[self], shape.to_vec(), data))
    }

    pub fn transpose(&self) -> Result<Tensor> {
        let (m, n) = require_2d(self, "transpose")?;
        let src = self.data();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = src[i * n + j];
            }
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::Transpose, &[self], vec![n, m], data))
    }

    /// Stack rank-2 tensors along axis 0; all must share the column count.
    pub fn concat_rows(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_rows of zero tensors"));
        }
        let (_, n) = require_2d(parts[0], "concat_rows")?;
        let mut rows = 0;
        for p in parts {
            let (m, n2) = require_2d(p, "concat_rows")?;
            if n2 != n {
                return Err(Error::dim(
                    "concat_rows",
                    format!("column counts differ: {n} vs {n2}"),
                ));
            }
            rows += m;
        }
        let mut data = Vec::with_capacity(rows * n);
        for p in parts {
            data.extend_from_slice(p.data());
        }
        let tape = Tensor::common_tape(parts)?;
        Ok(finish(tape, OpRecord::ConcatRows, parts, vec![rows, n], data))
    }

    pub fn slice_rows(&self, r0: usize, r1: usize) -> Result<Tensor> {
        let (m, n) = require_2d(self, "slice_rows")?;
        if r0 > r1 || r1 > m {
            return Err(Error::dim(
                "slice_rows",
                format!("range {r0}..{r1} out of bounds for {m} rows"),
            ));
        }
        let data = self.data()[r0 * n..r1 * n].to_vec();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::SliceRows { r0, r1 }, &[self], vec![r1 - r0, n], data))
    }

    /// Stack rank-2 tensors along axis 1; all must share the row count.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        if parts.is_empty() {
            return Err(Error::contract("concat_cols of zero tensors"));
        }
        let (m, _) = require_2d(parts[0], "concat_cols")?;
        let mut cols = 0;
        for p in parts {
            let (m2, c) = require_2d(p, "concat_cols")?;
            if m2 != m {
                return Err(Error::dim("concat_cols", format!("row counts differ: {m} vs {m2}")));
            }
            cols += c;
        }
        let mut data = vec![0.0; m * cols];
        let mut offset = 0;
        for p in parts {
            let (_, c) = require_2d(p, "concat_cols")?;
            for (i, row) in p.data().chunks_exact(c).enumerate() {
                data[i * cols + offset..i * cols + offset + c].copy_from_slice(row);
            }
            offset += c;
        }
        let tape = Tensor::common_tape(parts)?;
        Ok(finish(tape, OpRecord::ConcatCols, parts, vec![m, cols], data))
    }

    pub fn slice_cols(&self, c0: usize, c1: usize) -> Result<Tensor> {
        let (m, n) = require_2d(self, "slice_cols")?;
        if c0 > c1 || c1 > n {
            return Err(Error::dim(
                "slice_cols",
                format!("range {c0}..{c1} out of bounds for {n} cols"),
            ));
        }
        let w = c1 - c0;
        let mut data = Vec::with_capacity(m * w);
        for row in self.data().chunks_exact(n) {
            data.extend_from_slice(&row[c0..c1]);
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::SliceCols { c0, c1 }, &[self], vec![m, w], data))
    }

    pub fn sum_all(&self) -> Result<Tensor> {
        let s: f32 = self.data().iter().sum();
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::SumAll, &[self], vec![1], vec![s]))
    }

    pub fn mean_all(&self) -> Result<Tensor> {
        let s: f32 = self.data().iter().sum();
        let n = self.numel().max(1) as f32;
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(tape, OpRecord::MeanAll, &[self], vec![1], vec![s / n]))
    }

    /// Rotate feature pairs by per-token angles. `self` is `[rows, d]` with
    /// even d; tables are `[rows, d/2]` of cos/sin values.
    pub fn rope(&self, cos: &[f32], sin: &[f32]) -> Result<Tensor> {
        let (rows, d) = require_2d(self, "rope")?;
        if d % 2 != 0 {
            return Err(Error::contract(format!("rope needs an even feature dim, got {d}")));
        }
        let half = d / 2;
        if cos.len() != rows * half || sin.len() != rows * half {
            return Err(Error::dim(
                "rope",
                format!("table length {} does not match {rows}x{half}", cos.len()),
            ));
        }
        let mut data = Vec::with_capacity(rows * d);
        for (r, row) in self.data().chunks_exact(d).enumerate() {
            let tc = &cos[r * half..(r + 1) * half];
            let ts = &sin[r * half..(r + 1) * half];
            for k in 0..half {
                let (x0, x1) = (row[2 * k], row[2 * k + 1]);
                data.push(x0 * tc[k] - x1 * ts[k]);
                data.push(x0 * ts[k] + x1 * tc[k]);
            }
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(
            tape,
            OpRecord::Rope { cos: Arc::new(cos.to_vec()), sin: Arc::new(sin.to_vec()) },
            &[self],
            vec![rows, d],
            data,
        ))
    }

    /// Mean cross-entropy of row-wise logits against target ids.
    pub fn cross_entropy(&self, targets: &[usize]) -> Result<Tensor> {
        let (m, v) = require_2d(self, "cross_entropy")?;
        if targets.len() != m {
            return Err(Error::dim(
                "cross_entropy",
                format!("{} targets for {m} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= v) {
            return Err(Error::contract(format!("target id {bad} out of vocab {v}")));
        }
        let mut total = 0.0;
        for (row, &t) in self.data().chunks_exact(v).zip(targets) {
            let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|x| (x - max).exp()).sum::<f32>().ln();
            total += lse - row[t];
        }
        let tape = Tensor::common_tape(&[self])?;
        Ok(finish(
            tape,
            OpRecord::CrossEntropy { targets: targets.to_vec() },
            &[self],
            vec![1],
            vec![total / m as f32],
        ))
    }
}

impl OpRecord {
    /// Gradients w.r.t. each input given the output gradient. `needs[i]`
    /// is false when input i cannot use a gradient; those slots may skip
    /// work and return None.
    pub(crate) fn vjp(
        &self,
        gout: &[f32],
        node: &Node,
        nodes: &[Node],
        needs: &[bool],
    ) -> Vec<Option<Vec<f32>>> {
        let in_data = |i: usize| node.inputs[i].data(nodes);
        let in_shape = |i: usize| node.inputs[i].shape(nodes);
        match self {
            OpRecord::Leaf => vec![],
            OpRecord::Matmul => {
                let (m, k) = dims2(in_shape(0));
                let n = dims2(in_shape(1)).1;
                let da = needs[0].then(|| {
                    // dA = dC . B^T
                    let mut da = vec![0.0; m * k];
                    unsafe {
                        sgemm_raw(m, n, k, gout, n as isize, 1, in_data(1), 1, n as isize, &mut da)
                    };
                    da
                });
                let db = needs[1].then(|| {
                    // dB = A^T . dC
                    let mut db = vec![0.0; k * n];
                    unsafe {
                        sgemm_raw(k, m, n, in_data(0), 1, k as isize, gout, n as isize, 1, &mut db)
                    };
                    db
                });
                vec![da, db]
            }
            OpRecord::MatmulNT => {
                let (m, k) = dims2(in_shape(0));
                let n = dims2(in_shape(1)).0;
                let da = needs[0].then(|| {
                    // dA = dC . B
                    mm(m, n, k, gout, in_data(1))
                });
                let db = needs[1].then(|| {
                    // dB = dC^T . A
                    let mut db = vec![0.0; n * k];
                    unsafe {
                        sgemm_raw(n, m, k, gout, 1, n as isize, in_data(0), k as isize, 1, &mut db)
                    };
                    db
                });
                vec![da, db]
            }
            OpRecord::Add => vec![
                needs[0].then(|| gout.to_vec()),
                needs[1].then(|| gout.to_vec()),
            ],
            OpRecord::Sub => vec![
                needs[0].then(|| gout.to_vec()),
                needs[1].then(|| gout.iter().map(|g| -g).collect()),
            ],
            OpRecord::Mul => vec![
                needs[0].then(|| gout.iter().zip(in_data(1)).map(|(g, b)| g * b).collect()),
                needs[1].then(|| gout.iter().zip(in_data(0)).map(|(g, a)| g * a).collect()),
            ],
            OpRecord::Square => vec![needs[0].then(|| {
                gout.iter()
                    .zip(in_data(0))
                    .map(|(g, x)| 2.0 * x * g)
                    .collect()
            })],
            OpRecord::Scale(c) => vec![needs[0].then(|| gout.iter().map(|g| g * c).collect())],
            OpRecord::AddScalar => vec![needs[0].then(|| gout.to_vec())],
            OpRecord::AddRow => {
                let n = *in_shape(1).last().unwrap();
                let dx = needs[0].then(|| gout.to_vec());
                let db = needs[1].then(|| {
                    let mut db = vec![0.0; n];
                    for row in gout.chunks_exact(n) {
                        for (d, g) in db.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    db
                });
                vec![dx, db]
            }
            OpRecord::MulRow => {
                let n = *in_shape(1).last().unwrap();
                let dx = needs[0].then(|| {
                    let g = in_data(1);
                    gout.chunks_exact(n)
                        .flat_map(|row| row.iter().zip(g).map(|(go, gg)| go * gg))
                        .collect()
                });
                let dg = needs[1].then(|| {
                    let x = in_data(0);
                    let mut dg = vec![0.0; n];
                    for (grow, xrow) in gout.chunks_exact(n).zip(x.chunks_exact(n)) {
                        for ((d, g), xx) in dg.iter_mut().zip(grow).zip(xrow) {
                            *d += g * xx;
                        }
                    }
                    dg
                });
                vec![dx, dg]
            }
            OpRecord::Modulate => {
                let n = *in_shape(1).last().unwrap();
                let dx = needs[0].then(|| {
                    let s = in_data(1);
                    gout.chunks_exact(n)
                        .flat_map(|row| row.iter().zip(s).map(|(g, ss)| g * (1.0 + ss)))
                        .collect()
                });
                let ds = needs[1].then(|| {
                    let x = in_data(0);
                    let mut ds = vec![0.0; n];
                    for (grow, xrow) in gout.chunks_exact(n).zip(x.chunks_exact(n)) {
                        for ((d, g), xx) in ds.iter_mut().zip(grow).zip(xrow) {
                            *d += g * xx;
                        }
                    }
                    ds
                });
                let dt = needs[2].then(|| {
                    let mut dt = vec![0.0; n];
                    for row in gout.chunks_exact(n) {
                        for (d, g) in dt.iter_mut().zip(row) {
                            *d += g;
                        }
                    }
                    dt
                });
                vec![dx, ds, dt]
            }
            OpRecord::Silu => vec![needs[0].then(|| {
                gout.iter()
                    .zip(in_data(0))
                    .map(|(g, &x)| {
                        let s = 1.0 / (1.0 + (-x).exp());
                        g * (s * (1.0 + x * (1.0 - s)))
                    })
                    .collect()
            })],
            OpRecord::Softmax => vec![needs[0].then(|| {
                let n = *node.shape.last().unwrap();
                let y = &node.data;
                let mut dx = Vec::with_capacity(gout.len());
                for (yrow, grow) in y.chunks_exact(n).zip(gout.chunks_exact(n)) {
                    let dot: f32 = yrow.iter().zip(grow).map(|(y, g)| y * g).sum();
                    dx.extend(yrow.iter().zip(grow).map(|(y, g)| y * (g - dot)));
                }
                dx
            })],
            OpRecord::RmsNorm { eps } => {
                let n = *in_shape(1).last().unwrap();
                let x = in_data(0);
                let g = in_data(1);
                let dx = needs[0].then(|| {
                    let mut dx = Vec::with_capacity(x.len());
                    for (xrow, grow) in x.chunks_exact(n).zip(gout.chunks_exact(n)) {
                        let ms: f32 = xrow.iter().map(|v| v * v).sum::<f32>() / n as f32;
                        let inv = 1.0 / (ms + eps).sqrt();
                        let dot: f32 = grow
                            .iter()
                            .zip(g)
                            .zip(xrow)
                            .map(|((go, gg), xx)| go * gg * xx)
                            .sum();
                        let c = inv * inv * inv / n as f32;
                        dx.extend(
                            grow.iter()
                                .zip(g)
                                .zip(xrow)
                                .map(|((go, gg), xx)| go * gg * inv - c * xx * dot),
                        );
                    }
                    dx
                });
                let dg = needs[1].then(|| {
                    let mut dg = vec![0.0; n];
                    for (xrow, grow) in x.chunks_exact(n).zip(gout.chunks_exact(n)) {
                        let ms: f32 = xrow.iter().map(|v| v * v).sum::<f32>() / n as f32;
                        let inv = 1.0 / (ms + eps).sqrt();
                        for ((d, go), xx) in dg.iter_mut().zip(grow).zip(xrow) {
                            *d += go * xx * inv;
                        }
                    }
                    dg
                });
                vec![dx, dg]
            }
            OpRecord::Embedding { ids } => vec![needs[0].then(|| {
                let (v, d) = dims2(in_shape(0));
                let mut dw = vec![0.0; v * d];
                for (&i, grow) in ids.iter().zip(gout.chunks_exact(d)) {
                    for (dst, g) in dw[i * d..(i + 1) * d].iter_mut().zip(grow) {
                        *dst += g;
                    }
                }
                dw
            })],
            OpRecord::Reshape => vec![needs[0].then(|| gout.to_vec())],
            OpRecord::Transpose => vec![needs[0].then(|| {
                let (m, n) = dims2(in_shape(0));
                let mut dx = vec![0.0; m * n];
                for j in 0..n {
                    for i in 0..m {
                        dx[i * n + j] = gout[j * m + i];
                    }
                }
                dx
            })],
            OpRecord::ConcatRows => {
                let n = *node.shape.last().unwrap();
                let mut offset = 0;
                node.inputs
                    .iter()
                    .enumerate()
                    .map(|(i, src)| {
                        let rows = src.shape(nodes)[0];
                        let out = needs[i]
                            .then(|| gout[offset * n..(offset + rows) * n].to_vec());
                        offset += rows;
                        out
                    })
                    .collect()
            }
            OpRecord::SliceRows { r0, r1 } => vec![needs[0].then(|| {
                let (m, n) = dims2(in_shape(0));
                let mut dx = vec![0.0; m * n];
                dx[r0 * n..r1 * n].copy_from_slice(gout);
                dx
            })],
            OpRecord::ConcatCols => {
                let total = *node.shape.last().unwrap();
                let rows = node.shape[0];
                let mut offset = 0;
                node.inputs
                    .iter()
                    .enumerate()
                    .map(|(i, src)| {
                        let c = *src.shape(nodes).last().unwrap();
                        let out = needs[i].then(|| {
                            let mut dx = Vec::with_capacity(rows * c);
                            for r in 0..rows {
                                dx.extend_from_slice(
                                    &gout[r * total + offset..r * total + offset + c],
                                );
                            }
                            dx
                        });
                        offset += c;
                        out
                    })
                    .collect()
            }
            OpRecord::SliceCols { c0, c1 } => vec![needs[0].then(|| {
                let (m, n) = dims2(in_shape(0));
                let w = c1 - c0;
                let mut dx = vec![0.0; m * n];
                for r in 0..m {
                    dx[r * n + c0..r * n + c1].copy_from_slice(&gout[r * w..(r + 1) * w]);
                }
                dx
            })],
            OpRecord::SumAll => vec![needs[0].then(|| {
                let numel: usize = in_shape(0).iter().product();
                vec![gout[0]; numel]
            })],
            OpRecord::MeanAll => vec![needs[0].then(|| {
                let numel: usize = in_shape(0).iter().product();
                vec![gout[0] / numel as f32; numel]
            })],
            OpRecord::Rope { cos, sin } => vec![needs[0].then(|| {
                let d = *node.shape.last().unwrap();
                let half = d / 2;
                let mut dx = Vec::with_capacity(gout.len());
                for (r, grow) in gout.chunks_exact(d).enumerate() {
                    let tc = &cos[r * half..(r + 1) * half];
                    let ts = &sin[r * half..(r + 1) * half];
                    for k in 0..half {
                        let (g0, g1) = (grow[2 * k], grow[2 * k + 1]);
                        dx.push(g0 * tc[k] + g1 * ts[k]);
                        dx.push(-g0 * ts[k] + g1 * tc[k]);
                    }
                }
                dx
            })],
            OpRecord::CrossEntropy { targets } => vec![needs[0].then(|| {
                let (m, v) = dims2(in_shape(0));
                let x = in_data(0);
                let scale = gout[0] / m as f32;
                let mut dx = Vec::with_capacity(m * v);
                for (row, &t) in x.chunks_exact(v).zip(targets) {
                    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
                    let sum: f32 = row.iter().map(|x| (x - max).exp()).sum();
                    for (j, &xj) in row.iter().enumerate() {
                        let p = (xj - max).exp() / sum;
                        dx.push(scale * (p - if j == t { 1.0 } else { 0.0 }));
                    }
                }
                dx
            })],
        }
    }
}

fn dims2(shape: &[usize]) -> (usize, usize) {
    (shape[0], shape[1])
}
