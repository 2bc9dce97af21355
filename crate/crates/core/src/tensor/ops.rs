use rand::Rng;

use super::tape::{Node, Var};
use super::{dims3, Tensor};
use crate::error::{Error, Result};

pub const BN_EPS: f64 = 1e-5;
pub const LN_EPS: f64 = 1e-5;

/// Batch statistics observed by a training-mode batch norm.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchStats {
    pub mean: Vec<f64>,
    /// Biased (population) variance per channel.
    pub var: Vec<f64>,
    /// Number of elements reduced per channel.
    pub count: usize,
}

#[derive(Clone, Copy, Debug)]
pub enum NormMode<'a> {
    /// Normalize with the statistics of the current batch.
    Train,
    /// Normalize with stored running statistics.
    Eval { mean: &'a [f64], var: &'a [f64] },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Axis {
    Rows,
    Cols,
}

pub(crate) enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Transpose { x: usize },
    Conv1d { x: usize, w: usize, b: usize, padding: usize },
    Softmax { x: usize },
    BatchNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64>, train: bool },
    LayerNorm { x: usize, gamma: usize, beta: usize, xhat: Vec<f64>, inv_std: Vec<f64> },
    Relu { x: usize },
    Dropout { x: usize, mask: Vec<f64> },
    MaxPoolLength { x: usize, argmax: Vec<usize> },
    Concat { a: usize, b: usize },
    Add { a: usize, b: usize },
    Replicate { x: usize, axis: Axis },
    PadLength { x: usize },
    CropLength { x: usize },
    Linear { x: usize, w: usize, b: usize },
    Embedding { table: usize, ids: Vec<usize>, len: usize },
    BceWithLogits { logits: usize, targets: Vec<f64> },
    Sum { x: usize },
    Pick { x: usize, index: usize },
    Scale { x: usize, factor: f64 },
    WeightedSum { x: usize, weights: Vec<f64> },
}

fn shape3(rank: usize, b: usize, r: usize, c: usize) -> Vec<usize> {
    match rank {
        1 => vec![c],
        2 => vec![r, c],
        _ => vec![b, r, c],
    }
}

fn expect3(op: &'static str, shape: &[usize]) -> Result<(usize, usize, usize)> {
    dims3(shape).ok_or_else(|| Error::Dimension {
        op,
        lhs: shape.to_vec(),
        rhs: vec![],
    })
}

impl<'t> Var<'t> {
    fn unary(&self, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn binary(&self, other: &Var<'t>, value: Tensor, op: Op) -> Var<'t> {
        let rg = self.requires_grad() || other.requires_grad();
        self.tape.push(value, op, rg)
    }

    fn same_tape(&self, other: &Var<'t>) -> Result<()> {
        if std::ptr::eq(self.tape, other.tape) {
            Ok(())
        } else {
            Err(Error::contract("operands recorded on different tapes"))
        }
    }

    /// Matrix product, batched over a leading dimension when present. A
    /// batch extent of one broadcasts against the other operand.
    pub fn matmul(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let mismatch = || Error::Dimension {
            op: "matmul",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        };
        if a.shape().len() < 2 || b.shape().len() < 2 {
            return Err(mismatch());
        }
        let (ba, m, k) = expect3("matmul", a.shape())?;
        let (bb, k2, n) = expect3("matmul", b.shape())?;
        if k != k2 || (ba != bb && ba != 1 && bb != 1) {
            return Err(mismatch());
        }
        let batch = ba.max(bb);
        let mut out = vec![0.0; batch * m * n];
        for bi in 0..batch {
            let ao = if ba == 1 { 0 } else { bi * m * k };
            let bo = if bb == 1 { 0 } else { bi * k * n };
            gemm(&a.data()[ao..ao + m * k], &b.data()[bo..bo + k * n], &mut out[bi * m * n..(bi + 1) * m * n], m, k, n);
        }
        let rank = a.shape().len().max(b.shape().len());
        let value = Tensor::new(shape3(rank, batch, m, n), out)?;
        Ok(self.binary(other, value, Op::MatMul { a: self.id, b: other.id }))
    }

    /// Swaps the last two axes.
    pub fn transpose(&self) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.shape().len();
        if rank < 2 {
            return Err(Error::contract("transpose needs rank >= 2"));
        }
        let (b, r, c) = expect3("transpose", x.shape())?;
        let mut out = vec![0.0; x.numel()];
        for bi in 0..b {
            let base = bi * r * c;
            for i in 0..r {
                for j in 0..c {
                    out[base + j * r + i] = x.data()[base + i * c + j];
                }
            }
        }
        let value = Tensor::new(shape3(rank, b, c, r), out)?;
        Ok(self.unary(value, Op::Transpose { x: self.id }))
    }

    /// One-dimensional cross-correlation with stride 1 and symmetric zero
    /// padding. `weight` is `[out_channels, in_channels, kernel]`.
    pub fn conv1d(&self, weight: &Var<'t>, bias: &Var<'t>, padding: usize) -> Result<Var<'t>> {
        self.same_tape(weight)?;
        self.same_tape(bias)?;
        let (x, w, bv) = (self.value(), weight.value(), bias.value());
        let rank = x.shape().len();
        if rank < 2 {
            return Err(Error::contract("conv1d input needs shape [C, L] or [B, C, L]"));
        }
        let (batch, cin, len) = expect3("conv1d", x.shape())?;
        let &[cout, wcin, k] = w.shape() else {
            return Err(Error::Dimension { op: "conv1d", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        };
        if wcin != cin || bv.shape() != [cout] {
            return Err(Error::Dimension { op: "conv1d", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        }
        if k > len + 2 * padding {
            return Err(Error::config(format!(
                "conv1d kernel {k} exceeds padded length {}",
                len + 2 * padding
            )));
        }
        let lout = len + 2 * padding - k + 1;
        let mut out = vec![0.0; batch * cout * lout];
        for bi in 0..batch {
            let xb = &x.data()[bi * cin * len..(bi + 1) * cin * len];
            let ob = &mut out[bi * cout * lout..(bi + 1) * cout * lout];
            for co in 0..cout {
                let orow = &mut ob[co * lout..(co + 1) * lout];
                orow.fill(bv.data()[co]);
                for ci in 0..cin {
                    let xrow = &xb[ci * len..(ci + 1) * len];
                    for kk in 0..k {
                        let wv = w.data()[(co * cin + ci) * k + kk];
                        let (t0, t1) = conv_range(kk, padding, len, lout);
                        let shift = kk as isize - padding as isize;
                        for t in t0..t1 {
                            orow[t] += wv * xrow[(t as isize + shift) as usize];
                        }
                    }
                }
            }
        }
        let value = Tensor::new(shape3(rank, batch, cout, lout), out)?;
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(value, Op::Conv1d { x: self.id, w: weight.id, b: bias.id, padding }, rg))
    }

    /// Softmax over the last axis.
    pub fn softmax(&self) -> Result<Var<'t>> {
        self.masked_softmax(None)
    }

    /// Softmax over the last axis where, for batch element `b`, only the
    /// first `lengths[b]` positions take part; the rest are exactly zero.
    pub fn masked_softmax(&self, lengths: Option<&[usize]>) -> Result<Var<'t>> {
        let x = self.value();
        let (batch, rows, n) = expect3("softmax", x.shape())?;
        if let Some(lens) = lengths {
            if lens.len() != batch || lens.iter().any(|&l| l == 0 || l > n) {
                return Err(Error::contract(format!(
                    "softmax mask lengths {lens:?} invalid for batch {batch} and width {n}"
                )));
            }
        }
        let mut out = vec![0.0; x.numel()];
        for bi in 0..batch {
            let valid = lengths.map_or(n, |l| l[bi]);
            for r in 0..rows {
                let off = (bi * rows + r) * n;
                let src = &x.data()[off..off + valid];
                let max = src.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let dst = &mut out[off..off + valid];
                let mut total = 0.0;
                for (d, &s) in dst.iter_mut().zip(src) {
                    *d = (s - max).exp();
                    total += *d;
                }
                dst.iter_mut().for_each(|d| *d /= total);
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        Ok(self.unary(value, Op::Softmax { x: self.id }))
    }

    /// Batch normalization over the batch and length axes of a
    /// `[B, C, N]` tensor, with a per-channel affine transform.
    pub fn batch_norm(&self, gamma: &Var<'t>, beta: &Var<'t>, mode: NormMode<'_>) -> Result<(Var<'t>, Option<BatchStats>)> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let (x, g, bt) = (self.value(), gamma.value(), beta.value());
        let (batch, ch, n) = expect3("batch_norm", x.shape())?;
        if g.shape() != [ch] || bt.shape() != [ch] {
            return Err(Error::Dimension { op: "batch_norm", lhs: x.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        let count = batch * n;
        let (mean, var, stats) = match mode {
            NormMode::Train => {
                let mut mean = vec![0.0; ch];
                let mut var = vec![0.0; ch];
                for c in 0..ch {
                    let mut s = 0.0;
                    for bi in 0..batch {
                        s += x.data()[(bi * ch + c) * n..(bi * ch + c + 1) * n].iter().sum::<f64>();
                    }
                    let mu = s / count as f64;
                    let mut v = 0.0;
                    for bi in 0..batch {
                        for &e in &x.data()[(bi * ch + c) * n..(bi * ch + c + 1) * n] {
                            v += (e - mu) * (e - mu);
                        }
                    }
                    mean[c] = mu;
                    var[c] = v / count as f64;
                }
                let stats = BatchStats { mean: mean.clone(), var: var.clone(), count };
                (mean, var, Some(stats))
            }
            NormMode::Eval { mean, var } => {
                if mean.len() != ch || var.len() != ch {
                    return Err(Error::contract("running statistics do not match channel count"));
                }
                (mean.to_vec(), var.to_vec(), None)
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * n;
                for i in off..off + n {
                    xhat[i] = (x.data()[i] - mean[c]) * inv_std[c];
                    out[i] = g.data()[c] * xhat[i] + bt.data()[c];
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        let train = matches!(mode, NormMode::Train);
        let op = Op::BatchNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std, train };
        Ok((self.tape.push(value, op, rg), stats))
    }

    /// Layer normalization over all non-batch elements of each sample, with
    /// a per-row (channel) affine transform.
    pub fn layer_norm(&self, gamma: &Var<'t>, beta: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(gamma)?;
        self.same_tape(beta)?;
        let (x, g, bt) = (self.value(), gamma.value(), beta.value());
        let (batch, rows, cols) = expect3("layer_norm", x.shape())?;
        if g.shape() != [rows] || bt.shape() != [rows] {
            return Err(Error::Dimension { op: "layer_norm", lhs: x.shape().to_vec(), rhs: g.shape().to_vec() });
        }
        let m = rows * cols;
        let mut xhat = vec![0.0; x.numel()];
        let mut out = vec![0.0; x.numel()];
        let mut inv_std = vec![0.0; batch];
        for bi in 0..batch {
            let xs = &x.data()[bi * m..(bi + 1) * m];
            let mu = xs.iter().sum::<f64>() / m as f64;
            let var = xs.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / m as f64;
            let inv = 1.0 / (var + LN_EPS).sqrt();
            inv_std[bi] = inv;
            for r in 0..rows {
                for c in 0..cols {
                    let i = bi * m + r * cols + c;
                    xhat[i] = (x.data()[i] - mu) * inv;
                    out[i] = g.data()[r] * xhat[i] + bt.data()[r];
                }
            }
        }
        let value = Tensor::new(x.shape().to_vec(), out)?;
        let rg = self.requires_grad() || gamma.requires_grad() || beta.requires_grad();
        Ok(self.tape.push(value, Op::LayerNorm { x: self.id, gamma: gamma.id, beta: beta.id, xhat, inv_std }, rg))
    }

    pub fn relu(&self) -> Var<'t> {
        let x = self.value();
        let out = x.data().iter().map(|&v| if v < 0.0 { 0.0 } else { v }).collect();
        let value = Tensor { shape: x.shape().to_vec(), data: out };
        self.unary(value, Op::Relu { x: self.id })
    }

    /// Inverted dropout: kept units are scaled by `1 / (1 - rate)` during
    /// training; evaluation is the identity.
    pub fn dropout<R: Rng + ?Sized>(&self, rate: f64, train: bool, rng: &mut R) -> Result<Var<'t>> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::config(format!("dropout rate {rate} outside [0, 1)")));
        }
        let x = self.value();
        let mask: Vec<f64> = if !train || rate == 0.0 {
            vec![1.0; x.numel()]
        } else {
            let keep = 1.0 / (1.0 - rate);
            (0..x.numel()).map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep }).collect()
        };
        let out = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
        let value = Tensor { shape: x.shape().to_vec(), data: out };
        Ok(self.unary(value, Op::Dropout { x: self.id, mask }))
    }

    /// Per-channel maximum over the length axis, returned transposed:
    /// `[B, C, L] -> [B, 1, C]`. Ties resolve to the lowest index.
    pub fn max_pool_length(&self) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.shape().len();
        if rank < 2 {
            return Err(Error::contract("max_pool_length needs shape [C, L] or [B, C, L]"));
        }
        let (batch, ch, len) = expect3("max_pool_length", x.shape())?;
        let mut out = vec![0.0; batch * ch];
        let mut argmax = vec![0; batch * ch];
        for bi in 0..batch {
            for c in 0..ch {
                let off = (bi * ch + c) * len;
                let row = &x.data()[off..off + len];
                let mut best = 0;
                for (i, &v) in row.iter().enumerate().skip(1) {
                    if v > row[best] {
                        best = i;
                    }
                }
                out[bi * ch + c] = row[best];
                argmax[bi * ch + c] = off + best;
            }
        }
        let value = Tensor::new(shape3(rank, batch, 1, ch), out)?;
        Ok(self.unary(value, Op::MaxPoolLength { x: self.id, argmax }))
    }

    /// Concatenation along the last axis.
    pub fn concat(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        let (ra, rb) = (a.shape().len(), b.shape().len());
        let mismatch = || Error::Dimension { op: "concat", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() };
        if ra != rb || a.shape()[..ra - 1] != b.shape()[..rb - 1] {
            return Err(mismatch());
        }
        let (ca, cb) = (a.shape()[ra - 1], b.shape()[rb - 1]);
        let outer = a.numel() / ca;
        let mut out = Vec::with_capacity(a.numel() + b.numel());
        for o in 0..outer {
            out.extend_from_slice(&a.data()[o * ca..(o + 1) * ca]);
            out.extend_from_slice(&b.data()[o * cb..(o + 1) * cb]);
        }
        let mut shape = a.shape().to_vec();
        shape[ra - 1] = ca + cb;
        let value = Tensor::new(shape, out)?;
        Ok(self.binary(other, value, Op::Concat { a: self.id, b: other.id }))
    }

    /// Elementwise sum of equally shaped tensors.
    pub fn add(&self, other: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(other)?;
        let (a, b) = (self.value(), other.value());
        if a.shape() != b.shape() {
            return Err(Error::Dimension { op: "add", lhs: a.shape().to_vec(), rhs: b.shape().to_vec() });
        }
        let out = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
        let value = Tensor { shape: a.shape().to_vec(), data: out };
        Ok(self.binary(other, value, Op::Add { a: self.id, b: other.id }))
    }

    /// Tiles a unit-extent axis `n` times.
    pub fn replicate(&self, axis: Axis, n: usize) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.shape().len();
        if rank < 2 || n == 0 {
            return Err(Error::contract("replicate needs rank >= 2 and a positive count"));
        }
        let (batch, rows, cols) = expect3("replicate", x.shape())?;
        let (out, shape) = match axis {
            Axis::Cols => {
                if cols != 1 {
                    return Err(Error::Dimension { op: "replicate", lhs: x.shape().to_vec(), rhs: vec![rows, 1] });
                }
                let out = x.data().iter().flat_map(|&v| std::iter::repeat_n(v, n)).collect();
                (out, shape3(rank, batch, rows, n))
            }
            Axis::Rows => {
                if rows != 1 {
                    return Err(Error::Dimension { op: "replicate", lhs: x.shape().to_vec(), rhs: vec![1, cols] });
                }
                let mut out = Vec::with_capacity(batch * n * cols);
                for bi in 0..batch {
                    for _ in 0..n {
                        out.extend_from_slice(&x.data()[bi * cols..(bi + 1) * cols]);
                    }
                }
                (out, shape3(rank, batch, n, cols))
            }
        };
        let value = Tensor::new(shape, out)?;
        Ok(self.unary(value, Op::Replicate { x: self.id, axis }))
    }

    /// Zero-pads the last axis up to `len`.
    pub fn pad_length(&self, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.shape().len();
        let (batch, rows, cols) = expect3("pad_length", x.shape())?;
        if len < cols {
            return Err(Error::Dimension { op: "pad_length", lhs: x.shape().to_vec(), rhs: vec![len] });
        }
        let mut out = vec![0.0; batch * rows * len];
        for r in 0..batch * rows {
            out[r * len..r * len + cols].copy_from_slice(&x.data()[r * cols..(r + 1) * cols]);
        }
        let value = Tensor::new(shape3(rank, batch, rows, len), out)?;
        Ok(self.unary(value, Op::PadLength { x: self.id }))
    }

    /// Keeps the first `len` positions of the last axis.
    pub fn crop_length(&self, len: usize) -> Result<Var<'t>> {
        let x = self.value();
        let rank = x.shape().len();
        let (batch, rows, cols) = expect3("crop_length", x.shape())?;
        if len > cols || len == 0 {
            return Err(Error::Dimension { op: "crop_length", lhs: x.shape().to_vec(), rhs: vec![len] });
        }
        let mut out = Vec::with_capacity(batch * rows * len);
        for r in 0..batch * rows {
            out.extend_from_slice(&x.data()[r * cols..r * cols + len]);
        }
        let value = Tensor::new(shape3(rank, batch, rows, len), out)?;
        Ok(self.unary(value, Op::CropLength { x: self.id }))
    }

    /// Fully connected layer over the last axis: `y = x Wᵀ + b` with
    /// `weight` shaped `[out, in]`.
    pub fn linear(&self, weight: &Var<'t>, bias: &Var<'t>) -> Result<Var<'t>> {
        self.same_tape(weight)?;
        self.same_tape(bias)?;
        let (x, w, bv) = (self.value(), weight.value(), bias.value());
        let rank = x.shape().len();
        let din = x.shape()[rank - 1];
        let &[dout, win] = w.shape() else {
            return Err(Error::Dimension { op: "linear", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        };
        if win != din || bv.shape() != [dout] {
            return Err(Error::Dimension { op: "linear", lhs: x.shape().to_vec(), rhs: w.shape().to_vec() });
        }
        let rows = x.numel() / din;
        let mut out = vec![0.0; rows * dout];
        for r in 0..rows {
            let xr = &x.data()[r * din..(r + 1) * din];
            for o in 0..dout {
                let wr = &w.data()[o * din..(o + 1) * din];
                out[r * dout + o] = bv.data()[o] + dot(xr, wr);
            }
        }
        let mut shape = x.shape().to_vec();
        shape[rank - 1] = dout;
        let value = Tensor::new(shape, out)?;
        let rg = self.requires_grad() || weight.requires_grad() || bias.requires_grad();
        Ok(self.tape.push(value, Op::Linear { x: self.id, w: weight.id, b: bias.id }, rg))
    }

    /// Looks up rows of an embedding table `[V, C]` for a batch of id
    /// sequences and returns them channel-major as `[B, C, L]`. Row 0 is the
    /// padding row and never receives gradient.
    pub fn embedding(&self, ids: &[Vec<usize>]) -> Result<Var<'t>> {
        let table = self.value();
        let &[vocab, ch] = table.shape() else {
            return Err(Error::contract("embedding table must be [V, C]"));
        };
        let len = ids.first().map_or(0, Vec::len);
        if ids.is_empty() || len == 0 || ids.iter().any(|s| s.len() != len) {
            return Err(Error::contract("embedding ids must be a non-empty rectangular batch"));
        }
        if let Some(&bad) = ids.iter().flatten().find(|&&i| i >= vocab) {
            return Err(Error::contract(format!("token id {bad} out of range for vocabulary of {vocab}")));
        }
        let batch = ids.len();
        let mut out = vec![0.0; batch * ch * len];
        for (bi, seq) in ids.iter().enumerate() {
            for (t, &id) in seq.iter().enumerate() {
                let row = &table.data()[id * ch..(id + 1) * ch];
                for c in 0..ch {
                    out[(bi * ch + c) * len + t] = row[c];
                }
            }
        }
        let value = Tensor::new(vec![batch, ch, len], out)?;
        let flat = ids.concat();
        Ok(self.unary(value, Op::Embedding { table: self.id, ids: flat, len }))
    }

    /// Mean binary cross-entropy of sigmoid(logits) against binary targets,
    /// evaluated in the fused log-sum-exp form.
    pub fn bce_with_logits(&self, targets: &[f64]) -> Result<Var<'t>> {
        let z = self.value();
        if z.numel() != targets.len() {
            return Err(Error::Dimension { op: "bce_with_logits", lhs: z.shape().to_vec(), rhs: vec![targets.len()] });
        }
        let n = targets.len() as f64;
        let loss = z.data().iter().zip(targets).map(|(&z, &t)| bce_term(z, t)).sum::<f64>() / n;
        Ok(self.unary(Tensor::scalar(loss), Op::BceWithLogits { logits: self.id, targets: targets.to_vec() }))
    }

    pub fn sum(&self) -> Var<'t> {
        let s = self.value().data().iter().sum();
        self.unary(Tensor::scalar(s), Op::Sum { x: self.id })
    }

    /// Selects one element by flat index as a scalar.
    pub fn pick(&self, index: usize) -> Result<Var<'t>> {
        let x = self.value();
        let v = *x
            .data()
            .get(index)
            .ok_or_else(|| Error::contract(format!("index {index} out of range for shape {:?}", x.shape())))?;
        Ok(self.unary(Tensor::scalar(v), Op::Pick { x: self.id, index }))
    }

    /// Scalar `Σ wᵢ xᵢ` against constant weights.
    pub fn weighted_sum(&self, weights: &[f64]) -> Result<Var<'t>> {
        let x = self.value();
        if x.numel() != weights.len() {
            return Err(Error::Dimension { op: "weighted_sum", lhs: x.shape().to_vec(), rhs: vec![weights.len()] });
        }
        let s = dot(x.data(), weights);
        Ok(self.unary(Tensor::scalar(s), Op::WeightedSum { x: self.id, weights: weights.to_vec() }))
    }

    pub fn scale(&self, factor: f64) -> Var<'t> {
        let x = self.value();
        let out = x.data().iter().map(|v| v * factor).collect();
        self.unary(Tensor { shape: x.shape().to_vec(), data: out }, Op::Scale { x: self.id, factor })
    }
}

/// `-[t ln σ(z) + (1 - t) ln(1 - σ(z))]` without forming σ(z).
pub(crate) fn bce_term(z: f64, t: f64) -> f64 {
    z.max(0.0) - z * t + (-z.abs()).exp().ln_1p()
}

/// Mean of the fused BCE terms over paired logits and targets.
pub fn bce_mean(logits: &[f64], targets: &[f64]) -> f64 {
    assert_eq!(logits.len(), targets.len(), "logits and targets must be paired");
    logits.iter().zip(targets).map(|(&z, &t)| bce_term(z, t)).sum::<f64>() / logits.len() as f64
}

/// Logistic function, evaluated without overflow for large `|z|`.
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Output positions `t` for which input index `t + kk - padding` is valid.
fn conv_range(kk: usize, padding: usize, len: usize, lout: usize) -> (usize, usize) {
    let t0 = padding.saturating_sub(kk);
    let t1 = (len + padding).saturating_sub(kk).min(lout);
    (t0, t1.max(t0))
}

/// `out += a[m×k] · b[k×n]`
fn gemm(a: &[f64], b: &[f64], out: &mut [f64], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
}

impl Op {
    pub(crate) fn inputs(&self) -> Vec<usize> {
        use Op::*;
        match *self {
            Leaf => vec![],
            MatMul { a, b } | Concat { a, b } | Add { a, b } => vec![a, b],
            Conv1d { x, w, b, .. } | Linear { x, w, b } => vec![x, w, b],
            BatchNorm { x, gamma, beta, .. } | LayerNorm { x, gamma, beta, .. } => vec![x, gamma, beta],
            Transpose { x } | Softmax { x } | Relu { x } | Dropout { x, .. } | MaxPoolLength { x, .. }
            | Replicate { x, .. } | PadLength { x } | CropLength { x } | Sum { x } | Pick { x, .. }
            | Scale { x, .. } | WeightedSum { x, .. } => vec![x],
            Embedding { table, .. } => vec![table],
            BceWithLogits { logits, .. } => vec![logits],
        }
    }

    /// Emits the vector-Jacobian product for each input given the output
    /// value `out` and upstream gradient `g`.
    pub(crate) fn backward(&self, out: &Tensor, g: &[f64], nodes: &[Node], emit: &mut dyn FnMut(usize, Vec<f64>)) {
        let val = |id: usize| -> &Tensor { &nodes[id].value };
        let wants = |id: usize| nodes[id].requires_grad;
        match self {
            Op::Leaf => {}
            Op::MatMul { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let (ba, m, k) = dims3(av.shape()).unwrap();
                let (bb, _, n) = dims3(bv.shape()).unwrap();
                let batch = ba.max(bb);
                let mut da = vec![0.0; av.numel()];
                let mut db = vec![0.0; bv.numel()];
                for bi in 0..batch {
                    let ao = if ba == 1 { 0 } else { bi * m * k };
                    let bo = if bb == 1 { 0 } else { bi * k * n };
                    let gb = &g[bi * m * n..(bi + 1) * m * n];
                    let a_blk = &av.data()[ao..ao + m * k];
                    let b_blk = &bv.data()[bo..bo + k * n];
                    if wants(*a) {
                        // da[i,p] += Σ_j g[i,j] b[p,j]
                        for i in 0..m {
                            for p in 0..k {
                                da[ao + i * k + p] += dot(&gb[i * n..(i + 1) * n], &b_blk[p * n..(p + 1) * n]);
                            }
                        }
                    }
                    if wants(*b) {
                        // db[p,j] += Σ_i a[i,p] g[i,j]
                        for i in 0..m {
                            for p in 0..k {
                                let aval = a_blk[i * k + p];
                                let drow = &mut db[bo + p * n..bo + (p + 1) * n];
                                for (d, &gv) in drow.iter_mut().zip(&gb[i * n..(i + 1) * n]) {
                                    *d += aval * gv;
                                }
                            }
                        }
                    }
                }
                emit(*a, da);
                emit(*b, db);
            }
            Op::Transpose { x } => {
                let (b, r, c) = dims3(val(*x).shape()).unwrap();
                let mut dx = vec![0.0; g.len()];
                for bi in 0..b {
                    let base = bi * r * c;
                    for i in 0..r {
                        for j in 0..c {
                            dx[base + i * c + j] = g[base + j * r + i];
                        }
                    }
                }
                emit(*x, dx);
            }
            Op::Conv1d { x, w, b, padding } => {
                let (xv, wv) = (val(*x), val(*w));
                let (batch, cin, len) = dims3(xv.shape()).unwrap();
                let (cout, k) = (wv.shape()[0], wv.shape()[2]);
                let lout = len + 2 * padding - k + 1;
                let mut dx = vec![0.0; xv.numel()];
                let mut dw = vec![0.0; wv.numel()];
                let mut db = vec![0.0; cout];
                for bi in 0..batch {
                    let xb = &xv.data()[bi * cin * len..(bi + 1) * cin * len];
                    let gb = &g[bi * cout * lout..(bi + 1) * cout * lout];
                    for co in 0..cout {
                        let grow = &gb[co * lout..(co + 1) * lout];
                        db[co] += grow.iter().sum::<f64>();
                        for ci in 0..cin {
                            for kk in 0..k {
                                let (t0, t1) = conv_range(kk, *padding, len, lout);
                                if t0 >= t1 {
                                    continue;
                                }
                                let s0 = t0 + kk - padding;
                                let s1 = t1 + kk - padding;
                                let widx = (co * cin + ci) * k + kk;
                                dw[widx] += dot(&grow[t0..t1], &xb[ci * len + s0..ci * len + s1]);
                                let wval = wv.data()[widx];
                                let drow = &mut dx[bi * cin * len + ci * len + s0..bi * cin * len + ci * len + s1];
                                for (d, &gv) in drow.iter_mut().zip(&grow[t0..t1]) {
                                    *d += wval * gv;
                                }
                            }
                        }
                    }
                }
                emit(*x, dx);
                emit(*w, dw);
                emit(*b, db);
            }
            Op::Softmax { x } => {
                let (batch, rows, n) = dims3(out.shape()).unwrap();
                let y = out.data();
                let mut dx = vec![0.0; y.len()];
                for r in 0..batch * rows {
                    let ys = &y[r * n..(r + 1) * n];
                    let gs = &g[r * n..(r + 1) * n];
                    let inner = dot(ys, gs);
                    for i in 0..n {
                        dx[r * n + i] = ys[i] * (gs[i] - inner);
                    }
                }
                emit(*x, dx);
            }
            Op::BatchNorm { x, gamma, beta, xhat, inv_std, train } => {
                let gm = val(*gamma);
                let (batch, ch, n) = dims3(out.shape()).unwrap();
                let count = (batch * n) as f64;
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for c in 0..ch {
                    let mut sum_g = 0.0;
                    let mut sum_gx = 0.0;
                    for bi in 0..batch {
                        let off = (bi * ch + c) * n;
                        for i in off..off + n {
                            sum_g += g[i];
                            sum_gx += g[i] * xhat[i];
                        }
                    }
                    dgamma[c] = sum_gx;
                    dbeta[c] = sum_g;
                    let gc = gm.data()[c];
                    for bi in 0..batch {
                        let off = (bi * ch + c) * n;
                        for i in off..off + n {
                            dx[i] = if *train {
                                gc * inv_std[c] * (g[i] - sum_g / count - xhat[i] * sum_gx / count)
                            } else {
                                gc * inv_std[c] * g[i]
                            };
                        }
                    }
                }
                emit(*x, dx);
                emit(*gamma, dgamma);
                emit(*beta, dbeta);
            }
            Op::LayerNorm { x, gamma, beta, xhat, inv_std } => {
                let gm = val(*gamma);
                let (batch, rows, cols) = dims3(out.shape()).unwrap();
                let m = rows * cols;
                let mut dx = vec![0.0; g.len()];
                let mut dgamma = vec![0.0; rows];
                let mut dbeta = vec![0.0; rows];
                for bi in 0..batch {
                    let mut sum_d = 0.0;
                    let mut sum_dx = 0.0;
                    for r in 0..rows {
                        for c in 0..cols {
                            let i = bi * m + r * cols + c;
                            let d = g[i] * gm.data()[r];
                            sum_d += d;
                            sum_dx += d * xhat[i];
                            dgamma[r] += g[i] * xhat[i];
                            dbeta[r] += g[i];
                        }
                    }
                    for r in 0..rows {
                        for c in 0..cols {
                            let i = bi * m + r * cols + c;
                            let d = g[i] * gm.data()[r];
                            dx[i] = inv_std[bi] * (d - sum_d / m as f64 - xhat[i] * sum_dx / m as f64);
                        }
                    }
                }
                emit(*x, dx);
                emit(*gamma, dgamma);
                emit(*beta, dbeta);
            }
            Op::Relu { x } => {
                let xv = val(*x);
                let dx = xv.data().iter().zip(g).map(|(&v, &gv)| if v > 0.0 { gv } else { 0.0 }).collect();
                emit(*x, dx);
            }
            Op::Dropout { x, mask } => {
                emit(*x, g.iter().zip(mask).map(|(a, b)| a * b).collect());
            }
            Op::MaxPoolLength { x, argmax } => {
                let mut dx = vec![0.0; val(*x).numel()];
                for (&pos, &gv) in argmax.iter().zip(g) {
                    dx[pos] += gv;
                }
                emit(*x, dx);
            }
            Op::Concat { a, b } => {
                let (av, bv) = (val(*a), val(*b));
                let ca = *av.shape().last().unwrap();
                let cb = *bv.shape().last().unwrap();
                let outer = av.numel() / ca;
                let mut da = Vec::with_capacity(av.numel());
                let mut db = Vec::with_capacity(bv.numel());
                for o in 0..outer {
                    let row = &g[o * (ca + cb)..(o + 1) * (ca + cb)];
                    da.extend_from_slice(&row[..ca]);
                    db.extend_from_slice(&row[ca..]);
                }
                emit(*a, da);
                emit(*b, db);
            }
            Op::Add { a, b } => {
                emit(*a, g.to_vec());
                emit(*b, g.to_vec());
            }
            Op::Replicate { x, axis } => {
                let (batch, rows, cols) = dims3(out.shape()).unwrap();
                let dx = match axis {
                    Axis::Cols => (0..batch * rows).map(|r| g[r * cols..(r + 1) * cols].iter().sum()).collect(),
                    Axis::Rows => {
                        let mut dx = vec![0.0; batch * cols];
                        for bi in 0..batch {
                            for r in 0..rows {
                                let src = &g[(bi * rows + r) * cols..(bi * rows + r + 1) * cols];
                                for (d, s) in dx[bi * cols..(bi + 1) * cols].iter_mut().zip(src) {
                                    *d += s;
                                }
                            }
                        }
                        dx
                    }
                };
                emit(*x, dx);
            }
            Op::PadLength { x } => {
                let (batch, rows, cols) = dims3(val(*x).shape()).unwrap();
                let len = *out.shape().last().unwrap();
                let mut dx = Vec::with_capacity(batch * rows * cols);
                for r in 0..batch * rows {
                    dx.extend_from_slice(&g[r * len..r * len + cols]);
                }
                emit(*x, dx);
            }
            Op::CropLength { x } => {
                let (batch, rows, cols) = dims3(val(*x).shape()).unwrap();
                let len = *out.shape().last().unwrap();
                let mut dx = vec![0.0; batch * rows * cols];
                for r in 0..batch * rows {
                    dx[r * cols..r * cols + len].copy_from_slice(&g[r * len..(r + 1) * len]);
                }
                emit(*x, dx);
            }
            Op::Linear { x, w, b } => {
                let (xv, wv) = (val(*x), val(*w));
                let (dout, din) = (wv.shape()[0], wv.shape()[1]);
                let rows = xv.numel() / din;
                let mut dx = vec![0.0; xv.numel()];
                let mut dw = vec![0.0; wv.numel()];
                let mut db = vec![0.0; dout];
                for r in 0..rows {
                    let xr = &xv.data()[r * din..(r + 1) * din];
                    for o in 0..dout {
                        let gv = g[r * dout + o];
                        db[o] += gv;
                        let wr = &wv.data()[o * din..(o + 1) * din];
                        for i in 0..din {
                            dx[r * din + i] += gv * wr[i];
                            dw[o * din + i] += gv * xr[i];
                        }
                    }
                }
                emit(*x, dx);
                emit(*w, dw);
                emit(*b, db);
            }
            Op::Embedding { table, ids, len } => {
                let tv = val(*table);
                let ch = tv.shape()[1];
                let mut dt = vec![0.0; tv.numel()];
                for (pos, &id) in ids.iter().enumerate() {
                    if id == 0 {
                        continue;
                    }
                    let (bi, t) = (pos / len, pos % len);
                    for c in 0..ch {
                        dt[id * ch + c] += g[(bi * ch + c) * len + t];
                    }
                }
                emit(*table, dt);
            }
            Op::BceWithLogits { logits, targets } => {
                let z = val(*logits);
                let n = targets.len() as f64;
                let dz = z.data().iter().zip(targets).map(|(&z, &t)| g[0] * (sigmoid(z) - t) / n).collect();
                emit(*logits, dz);
            }
            Op::Sum { x } => emit(*x, vec![g[0]; val(*x).numel()]),
            Op::Pick { x, index } => {
                let mut dx = vec![0.0; val(*x).numel()];
                dx[*index] = g[0];
                emit(*x, dx);
            }
            Op::Scale { x, factor } => emit(*x, g.iter().map(|v| v * factor).collect()),
            Op::WeightedSum { x, weights } => emit(*x, weights.iter().map(|w| w * g[0]).collect()),
        }
    }
}
