//! Forward constructors. Each operation validates its operands, computes
//! the result eagerly, and records enough state for the backward rule.

use rand::Rng;

use crate::error::{Result, TensorError};
use crate::tensor::{Node, Op, Tensor};
use crate::Real;

impl Tensor {
    fn record(&self, data: Vec<Real>, shape: Vec<usize>, requires_grad: bool, op: Op) -> Tensor {
        let id = self.tape.push(Node {
            data,
            grad: None,
            requires_grad,
            op,
        });
        Tensor {
            tape: self.tape.clone(),
            id,
            shape,
        }
    }

    fn rank2(&self, op: &'static str) -> Result<(usize, usize)> {
        match self.shape[..] {
            [r, c] => Ok((r, c)),
            _ => Err(TensorError::BadRank {
                op,
                expected: 2,
                shape: self.shape.clone(),
            }),
        }
    }

    fn rank1(&self, op: &'static str) -> Result<usize> {
        match self.shape[..] {
            [n] => Ok(n),
            _ => Err(TensorError::BadRank {
                op,
                expected: 1,
                shape: self.shape.clone(),
            }),
        }
    }

    /// Elementwise sum; shapes must match exactly.
    pub fn add(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "add")?;
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: "add",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data = self.with_data(|a| {
            rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<_>>())
        });
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.record(
            data,
            self.shape.clone(),
            rg,
            Op::Add {
                a: self.id,
                b: rhs.id,
            },
        ))
    }

    /// Add a rank-1 bias to every row of a rank-2 tensor. This is the only
    /// broadcast the engine supports.
    pub fn add_bias(&self, bias: &Tensor) -> Result<Tensor> {
        self.same_tape(bias, "add_bias")?;
        let (rows, cols) = self.rank2("add_bias")?;
        let n = bias.rank1("add_bias")?;
        if n != cols {
            return Err(TensorError::ShapeMismatch {
                op: "add_bias",
                left: self.shape.clone(),
                right: bias.shape.clone(),
            });
        }
        let data = self.with_data(|x| {
            bias.with_data(|b| {
                let mut out = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for j in 0..cols {
                        out.push(x[r * cols + j] + b[j]);
                    }
                }
                out
            })
        });
        let rg = self.requires_grad() || bias.requires_grad();
        Ok(self.record(
            data,
            self.shape.clone(),
            rg,
            Op::AddBias {
                x: self.id,
                bias: bias.id,
            },
        ))
    }

    /// Hadamard product; shapes must match exactly.
    pub fn mul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "mul")?;
        if self.shape != rhs.shape {
            return Err(TensorError::ShapeMismatch {
                op: "mul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data = self.with_data(|a| {
            rhs.with_data(|b| a.iter().zip(b).map(|(x, y)| x * y).collect::<Vec<_>>())
        });
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.record(
            data,
            self.shape.clone(),
            rg,
            Op::Mul {
                a: self.id,
                b: rhs.id,
            },
        ))
    }

    /// Multiply every element by a constant.
    pub fn scale(&self, c: Real) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v * c).collect::<Vec<_>>());
        self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Op::Scale { x: self.id, c },
        )
    }

    /// Matrix product of two rank-2 tensors, [m,k] x [k,n] -> [m,n].
    pub fn matmul(&self, rhs: &Tensor) -> Result<Tensor> {
        self.same_tape(rhs, "matmul")?;
        let (m, k) = self.rank2("matmul")?;
        let (k2, n) = rhs.rank2("matmul")?;
        if k != k2 {
            return Err(TensorError::ShapeMismatch {
                op: "matmul",
                left: self.shape.clone(),
                right: rhs.shape.clone(),
            });
        }
        let data = self.with_data(|a| rhs.with_data(|b| matmul_kernel(a, b, m, k, n)));
        let rg = self.requires_grad() || rhs.requires_grad();
        Ok(self.record(
            data,
            vec![m, n],
            rg,
            Op::Matmul {
                a: self.id,
                b: rhs.id,
                m,
                k,
                n,
            },
        ))
    }

    /// Rank-2 transpose.
    pub fn transpose(&self) -> Result<Tensor> {
        let (rows, cols) = self.rank2("transpose")?;
        let data = self.with_data(|x| {
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                for c in 0..cols {
                    out[c * rows + r] = x[r * cols + c];
                }
            }
            out
        });
        Ok(self.record(
            data,
            vec![cols, rows],
            self.requires_grad(),
            Op::Transpose {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    pub fn relu(&self) -> Tensor {
        let data = self.with_data(|x| x.iter().map(|v| v.max(0.0)).collect::<Vec<_>>());
        self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Op::Relu { x: self.id },
        )
    }

    /// Row-wise softmax of a rank-2 tensor. NaN input is rejected;
    /// large negative values (additive masks) are fine.
    pub fn softmax_rows(&self) -> Result<Tensor> {
        let (rows, cols) = self.rank2("softmax")?;
        if cols == 0 {
            return Err(TensorError::BadConfig {
                op: "softmax",
                msg: "rows must be non-empty".into(),
            });
        }
        let data = self.with_data(|x| {
            if x.iter().any(|v| v.is_nan()) {
                return Err(TensorError::NonFinite { op: "softmax" });
            }
            let mut out = vec![0.0; rows * cols];
            for r in 0..rows {
                let row = &x[r * cols..(r + 1) * cols];
                let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                let mut z = 0.0;
                for j in 0..cols {
                    let e = (row[j] - max).exp();
                    out[r * cols + j] = e;
                    z += e;
                }
                for j in 0..cols {
                    out[r * cols + j] /= z;
                }
            }
            Ok(out)
        })?;
        Ok(self.record(
            data,
            self.shape.clone(),
            self.requires_grad(),
            Op::SoftmaxRows {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    /// Row-wise layer normalization with learned gain and bias.
    /// Variance is the population variance of the row.
    pub fn layer_norm(&self, gain: &Tensor, bias: &Tensor, eps: Real) -> Result<Tensor> {
        self.same_tape(gain, "layer_norm")?;
        self.same_tape(bias, "layer_norm")?;
        if eps <= 0.0 {
            return Err(TensorError::BadConfig {
                op: "layer_norm",
                msg: format!("eps must be positive, got {eps}"),
            });
        }
        let (rows, cols) = self.rank2("layer_norm")?;
        let gn = gain.rank1("layer_norm")?;
        let bn = bias.rank1("layer_norm")?;
        if gn != cols || bn != cols {
            return Err(TensorError::ShapeMismatch {
                op: "layer_norm",
                left: self.shape.clone(),
                right: vec![gn.max(bn)],
            });
        }
        let mut x_hat = vec![0.0; rows * cols];
        let mut inv_std = vec![0.0; rows];
        let data = self.with_data(|x| {
            gain.with_data(|gd| {
                bias.with_data(|bd| {
                    let mut out = vec![0.0; rows * cols];
                    let nf = cols as Real;
                    for r in 0..rows {
                        let row = &x[r * cols..(r + 1) * cols];
                        let mean = row.iter().sum::<Real>() / nf;
                        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / nf;
                        let istd = 1.0 / (var + eps).sqrt();
                        inv_std[r] = istd;
                        for j in 0..cols {
                            let xh = (row[j] - mean) * istd;
                            x_hat[r * cols + j] = xh;
                            out[r * cols + j] = gd[j] * xh + bd[j];
                        }
                    }
                    out
                })
            })
        });
        let rg = self.requires_grad() || gain.requires_grad() || bias.requires_grad();
        Ok(self.record(
            data,
            self.shape.clone(),
            rg,
            Op::LayerNorm {
                x: self.id,
                gain: gain.id,
                bias: bias.id,
                rows,
                cols,
                x_hat,
                inv_std,
            },
        ))
    }

    /// Column means: [m,n] -> [n].
    pub fn mean_rows(&self) -> Result<Tensor> {
        let (rows, cols) = self.rank2("mean_rows")?;
        if rows == 0 {
            return Err(TensorError::BadConfig {
                op: "mean_rows",
                msg: "cannot average zero rows".into(),
            });
        }
        let data = self.with_data(|x| {
            let mut out = vec![0.0; cols];
            for r in 0..rows {
                for j in 0..cols {
                    out[j] += x[r * cols + j];
                }
            }
            for v in out.iter_mut() {
                *v /= rows as Real;
            }
            out
        });
        Ok(self.record(
            data,
            vec![cols],
            self.requires_grad(),
            Op::MeanRows {
                x: self.id,
                rows,
                cols,
            },
        ))
    }

    /// Sum of all elements, as a scalar.
    pub fn sum(&self) -> Tensor {
        let total = self.with_data(|x| x.iter().sum::<Real>());
        self.record(
            vec![total],
            vec![],
            self.requires_grad(),
            Op::Sum { x: self.id },
        )
    }

    /// Rows `start..end` of a rank-2 tensor.
    pub fn slice_rows(&self, start: usize, end: usize) -> Result<Tensor> {
        let (rows, cols) = self.rank2("slice_rows")?;
        if start >= end || end > rows {
            return Err(TensorError::OutOfRange {
                op: "slice_rows",
                start,
                end,
                extent: rows,
            });
        }
        let rows_out = end - start;
        let data = self.with_data(|x| x[start * cols..end * cols].to_vec());
        Ok(self.record(
            data,
            vec![rows_out, cols],
            self.requires_grad(),
            Op::SliceRows {
                x: self.id,
                start,
                rows_out,
                cols,
            },
        ))
    }

    /// Columns `start..end` of a rank-2 tensor.
    pub fn slice_cols(&self, start: usize, end: usize) -> Result<Tensor> {
        let (rows, cols) = self.rank2("slice_cols")?;
        if start >= end || end > cols {
            return Err(TensorError::OutOfRange {
                op: "slice_cols",
                start,
                end,
                extent: cols,
            });
        }
        let cols_out = end - start;
        let data = self.with_data(|x| {
            let mut out = Vec::with_capacity(rows * cols_out);
            for r in 0..rows {
                out.extend_from_slice(&x[r * cols + start..r * cols + end]);
            }
            out
        });
        Ok(self.record(
            data,
            vec![rows, cols_out],
            self.requires_grad(),
            Op::SliceCols {
                x: self.id,
                start,
                cols_out,
                rows,
                cols_in: cols,
            },
        ))
    }

    /// Concatenate rank-1 tensors end to end.
    pub fn concat(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::BadConfig {
            op: "concat",
            msg: "need at least one part".into(),
        })?;
        let mut data = Vec::new();
        let mut meta = Vec::with_capacity(parts.len());
        let mut rg = false;
        for p in parts {
            first.same_tape(p, "concat")?;
            let len = p.rank1("concat")?;
            p.with_data(|d| data.extend_from_slice(d));
            meta.push((p.id, len));
            rg |= p.requires_grad();
        }
        let total = data.len();
        Ok(first.record(data, vec![total], rg, Op::Concat { parts: meta }))
    }

    /// Concatenate rank-2 tensors side by side; all must share a height.
    pub fn concat_cols(parts: &[&Tensor]) -> Result<Tensor> {
        let first = parts.first().ok_or(TensorError::BadConfig {
            op: "concat_cols",
            msg: "need at least one part".into(),
        })?;
        let (rows, _) = first.rank2("concat_cols")?;
        let mut meta = Vec::with_capacity(parts.len());
        let mut rg = false;
        let mut total = 0;
        for p in parts {
            first.same_tape(p, "concat_cols")?;
            let (r, w) = p.rank2("concat_cols")?;
            if r != rows {
                return Err(TensorError::ShapeMismatch {
                    op: "concat_cols",
                    left: first.shape.clone(),
                    right: p.shape.clone(),
                });
            }
            meta.push((p.id, w));
            rg |= p.requires_grad();
            total += w;
        }
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for p in parts {
                let (_, w) = p.rank2("concat_cols")?;
                p.with_data(|d| data.extend_from_slice(&d[r * w..(r + 1) * w]));
            }
        }
        Ok(first.record(
            data,
            vec![rows, total],
            rg,
            Op::ConcatCols { parts: meta, rows },
        ))
    }

    /// Embedding lookup: select rows of a [v,d] table.
    pub fn gather_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let (v, d) = self.rank2("gather_rows")?;
        for &i in ids {
            if i >= v {
                return Err(TensorError::OutOfRange {
                    op: "gather_rows",
                    start: i,
                    end: i + 1,
                    extent: v,
                });
            }
        }
        let data = self.with_data(|t| {
            let mut out = Vec::with_capacity(ids.len() * d);
            for &i in ids {
                out.extend_from_slice(&t[i * d..(i + 1) * d]);
            }
            out
        });
        Ok(self.record(
            data,
            vec![ids.len(), d],
            self.requires_grad(),
            Op::GatherRows {
                table: self.id,
                ids: ids.to_vec(),
                cols: d,
            },
        ))
    }

    /// View the same data under a new shape with equal element count.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor> {
        let expected: usize = shape.iter().product();
        if expected != self.numel() {
            return Err(TensorError::DataLength {
                shape: shape.to_vec(),
                expected,
                got: self.numel(),
            });
        }
        let data = self.value();
        Ok(self.record(
            data,
            shape.to_vec(),
            self.requires_grad(),
            Op::Reshape { x: self.id },
        ))
    }

    /// Label-smoothed cross entropy between [t,v] logits and `t` target
    /// ids, averaged over non-pad positions. The smoothed target
    /// distribution is `(1-smoothing)` on the gold class plus a uniform
    /// `smoothing/v` everywhere. A batch of only pad positions yields a
    /// zero loss with `all_pad` raised in the returned info.
    pub fn cross_entropy_label_smoothed(
        &self,
        targets: &[usize],
        smoothing: Real,
        pad: usize,
    ) -> Result<CeOutput> {
        let (rows, cols) = self.rank2("cross_entropy")?;
        if targets.len() != rows {
            return Err(TensorError::ShapeMismatch {
                op: "cross_entropy",
                left: self.shape.clone(),
                right: vec![targets.len()],
            });
        }
        if !(0.0..1.0).contains(&smoothing) {
            return Err(TensorError::BadConfig {
                op: "cross_entropy",
                msg: format!("smoothing must lie in [0,1), got {smoothing}"),
            });
        }
        for &t in targets {
            if t != pad && t >= cols {
                return Err(TensorError::OutOfRange {
                    op: "cross_entropy",
                    start: t,
                    end: t + 1,
                    extent: cols,
                });
            }
        }
        let mut probs = vec![0.0; rows * cols];
        let mut counted = 0usize;
        let loss_value = self.with_data(|x| {
            if x.iter().any(|v| v.is_nan()) {
                return Err(TensorError::NonFinite { op: "cross_entropy" });
            }
            let uniform = smoothing / cols as Real;
            let mut total = 0.0;
            for r in 0..rows {
                let row = &x[r * cols..(r + 1) * cols];
                let max = row.iter().cloned().fold(Real::NEG_INFINITY, Real::max);
                let mut z = 0.0;
                for j in 0..cols {
                    let e = (row[j] - max).exp();
                    probs[r * cols + j] = e;
                    z += e;
                }
                let ln_z = z.ln();
                for j in 0..cols {
                    probs[r * cols + j] /= z;
                }
                let t = targets[r];
                if t == pad {
                    continue;
                }
                counted += 1;
                let mut row_loss = -(1.0 - smoothing) * (row[t] - max - ln_z);
                if smoothing > 0.0 {
                    for j in 0..cols {
                        row_loss -= uniform * (row[j] - max - ln_z);
                    }
                }
                total += row_loss;
            }
            if counted > 0 {
                Ok(total / counted as Real)
            } else {
                Ok(0.0)
            }
        })?;
        let all_pad = counted == 0;
        let tokens = counted;
        let loss = self.record(
            vec![loss_value],
            vec![],
            self.requires_grad(),
            Op::CrossEntropy {
                logits: self.id,
                rows,
                cols,
                targets: targets.to_vec(),
                smoothing,
                pad,
                probs,
                counted,
            },
        );
        Ok(CeOutput {
            loss,
            tokens,
            all_pad,
        })
    }

    /// Inverted dropout: keep with probability `1-p` and rescale kept
    /// activations by `1/(1-p)` so expectations match inference. Callers
    /// are expected to skip the call entirely at inference time and under
    /// gradient checking; `p == 0` is an identity.
    pub fn dropout<R: Rng>(&self, p: Real, rng: &mut R) -> Result<Tensor> {
        if !(0.0..1.0).contains(&p) {
            return Err(TensorError::BadConfig {
                op: "dropout",
                msg: format!("rate must lie in [0,1), got {p}"),
            });
        }
        if p == 0.0 {
            return Ok(self.clone());
        }
        let keep = 1.0 - p;
        let inv = 1.0 / keep;
        let mask: Vec<Real> = (0..self.numel())
            .map(|_| {
                if rng.gen::<Real>() < p {
                    0.0
                } else {
                    inv
                }
            })
            .collect();
        let mask = self.tape.constant(mask, &self.shape)?;
        self.mul(&mask)
    }
}

/// Aftermath of a cross-entropy call: the scalar loss plus how many
/// positions actually contributed.
pub struct CeOutput {
    pub loss: Tensor,
    pub tokens: usize,
    pub all_pad: bool,
}

/// Row-major [m,k] x [k,n] product.
pub(crate) fn matmul_kernel(a: &[Real], b: &[Real], m: usize, k: usize, n: usize) -> Vec<Real> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &a_ip) in arow.iter().enumerate() {
            if a_ip == 0.0 {
                continue;
            }
            let brow = &b[p * n..(p + 1) * n];
            for j in 0..n {
                orow[j] += a_ip * brow[j];
            }
        }
    }
    out
}
