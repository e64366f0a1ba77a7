//! The tape: every operator evaluates eagerly, appends a node holding its
//! output plus whatever the backward rule needs, and returns a [`Var`]
//! handle. Nodes are only ever appended, so operands always precede their
//! consumers and a single reverse sweep visits each node once.

use crate::error::{dim_err, Result, TensorError};
use crate::kernels::{self, ConvGeom};
use crate::norm::{BatchMoments, BatchNormMode};
use crate::tensor::Tensor;

/// Additive stabilizer on each standard deviation inside Pearson correlation.
pub const PEARSON_EPS: f64 = 1e-8;
/// Variance floor inside batch normalization.
pub const BN_EPS: f64 = 1e-7;

/// Handle to a node on a [`Graph`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Zero padding on either side of the time axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding {
    pub left: usize,
    pub right: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv1dSpec {
    pub dilation: usize,
    pub groups: usize,
    pub padding: Padding,
}

impl Default for Conv1dSpec {
    fn default() -> Self {
        Self {
            dilation: 1,
            groups: 1,
            padding: Padding::default(),
        }
    }
}

/// Cached normalization of a set of sequences: `(x - mean) / (std + eps)`.
#[derive(Debug)]
struct Normalized {
    /// Normalized rows, `rows × len`.
    z: Vec<f64>,
    /// Population standard deviation per row.
    std: Vec<f64>,
    len: usize,
}

impl Normalized {
    fn new(x: &[f64], len: usize) -> Self {
        let rows = x.len() / len;
        let mut z = vec![0.0; x.len()];
        let mut std = vec![0.0; rows];
        for r in 0..rows {
            let row = &x[r * len..(r + 1) * len];
            let mean = row.iter().sum::<f64>() / len as f64;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / len as f64;
            let sd = var.sqrt();
            let s = sd + PEARSON_EPS;
            for (o, v) in z[r * len..(r + 1) * len].iter_mut().zip(row) {
                *o = (v - mean) / s;
            }
            std[r] = sd;
        }
        Self { z, std, len }
    }

    /// Pull a gradient w.r.t. the normalized rows back to the raw rows.
    fn backward(&self, gz: &[f64]) -> Vec<f64> {
        let n = self.len;
        let mut gx = vec![0.0; gz.len()];
        for (r, &sd) in self.std.iter().enumerate() {
            let s = sd + PEARSON_EPS;
            let z = &self.z[r * n..(r + 1) * n];
            let g = &gz[r * n..(r + 1) * n];
            let out = &mut gx[r * n..(r + 1) * n];
            // centered values are z * s
            let gc_dot = g.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() * s;
            let coef = if sd > 0.0 {
                gc_dot / (s * s) / (n as f64 * sd)
            } else {
                0.0
            };
            for t in 0..n {
                out[t] = g[t] / s - coef * z[t] * s;
            }
            let mean = out.iter().sum::<f64>() / n as f64;
            out.iter_mut().for_each(|v| *v -= mean);
        }
        gx
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    Add {
        a: usize,
        b: usize,
        broadcast: bool,
    },
    Mul {
        a: usize,
        b: usize,
    },
    Scale {
        x: usize,
        factor: f64,
    },
    Sum {
        x: usize,
    },
    Mean {
        x: usize,
    },
    Elu {
        x: usize,
    },
    Sigmoid {
        x: usize,
    },
    Conv1d {
        x: usize,
        w: usize,
        b: Option<usize>,
        geom: ConvGeom,
    },
    BatchNorm {
        x: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<f64>,
        inv_std: Vec<f64>,
        train: bool,
    },
    Pearson {
        a: usize,
        b: usize,
        na: Normalized,
        nb: Normalized,
    },
    PearsonPairs {
        x: usize,
        y: usize,
        nx: Normalized,
        ny: Normalized,
        batch: usize,
        p: usize,
        q: usize,
    },
    ConcatFeatures {
        a: usize,
        b: usize,
        fa: usize,
        fb: usize,
    },
    ConcatBatch {
        a: usize,
        b: usize,
        len_a: usize,
    },
    SliceBatch {
        x: usize,
        offset: usize,
        len: usize,
    },
    Linear {
        x: usize,
        w: usize,
        b: Option<usize>,
        batch: usize,
        fin: usize,
        fout: usize,
    },
    BceWithLogits {
        z: usize,
        labels: Vec<f64>,
    },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
    requires_grad: bool,
}

/// Reverse-mode differentiation record.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

fn check_same_shape(op: &'static str, a: &Tensor, b: &Tensor) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(dim_err(
            op,
            format!("shapes {:?} and {:?} differ", a.shape(), b.shape()),
        ));
    }
    Ok(())
}

fn expect_rank(op: &'static str, t: &Tensor, rank: usize) -> Result<()> {
    if t.ndim() != rank {
        return Err(dim_err(
            op,
            format!("expected rank {rank}, got shape {:?}", t.shape()),
        ));
    }
    Ok(())
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

    fn push(&mut self, value: Tensor, op: Op, operands: &[usize]) -> Var {
        let requires_grad = operands.iter().any(|&i| self.nodes[i].requires_grad);
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Register an input. Leaves with `requires_grad` receive gradients.
    pub fn leaf(&mut self, value: Tensor, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op: Op::Leaf,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    pub fn param(&mut self, value: Tensor) -> Var {
        self.leaf(value, true)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    // ── elementwise ────────────────────────────────────────────────

    /// Elementwise sum. `b` may also match the trailing dimensions of `a`,
    /// in which case it is broadcast over the leading batch axis.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let broadcast = if ta.shape() == tb.shape() {
            false
        } else if ta.ndim() == tb.ndim() + 1 && &ta.shape()[1..] == tb.shape() {
            true
        } else {
            return Err(dim_err(
                "add",
                format!("cannot broadcast {:?} onto {:?}", tb.shape(), ta.shape()),
            ));
        };
        let mut out = ta.clone();
        if broadcast {
            let n = tb.len();
            for chunk in out.data_mut().chunks_exact_mut(n) {
                for (o, v) in chunk.iter_mut().zip(tb.data()) {
                    *o += v;
                }
            }
        } else {
            out.add_assign(tb);
        }
        Ok(self.push(
            out,
            Op::Add {
                a: a.0,
                b: b.0,
                broadcast,
            },
            &[a.0, b.0],
        ))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        check_same_shape("mul", ta, tb)?;
        let data = ta.data().iter().zip(tb.data()).map(|(x, y)| x * y).collect();
        let out = Tensor::new(ta.shape().to_vec(), data)?;
        Ok(self.push(out, Op::Mul { a: a.0, b: b.0 }, &[a.0, b.0]))
    }

    pub fn scale(&mut self, x: Var, factor: f64) -> Var {
        let out = self.value(x).map(|v| v * factor);
        self.push(out, Op::Scale { x: x.0, factor }, &[x.0])
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum { x: x.0 }, &[x.0])
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean { x: x.0 }, &[x.0])
    }

    /// ELU with alpha = 1.
    pub fn elu(&mut self, x: Var) -> Var {
        let out = self.value(x).map(elu);
        self.push(out, Op::Elu { x: x.0 }, &[x.0])
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        let out = self.value(x).map(sigmoid);
        self.push(out, Op::Sigmoid { x: x.0 }, &[x.0])
    }

    // ── convolution & normalization ────────────────────────────────

    /// Grouped, dilated 1-D convolution over `batch × c_in × t` with explicit
    /// zero padding. Output length must equal input length.
    pub fn conv1d(&mut self, x: Var, w: Var, bias: Option<Var>, spec: Conv1dSpec) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        expect_rank("conv1d", tx, 3)?;
        expect_rank("conv1d", tw, 3)?;
        let (batch, c_in, t_in) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (c_out, cin_pg, kernel) = (tw.shape()[0], tw.shape()[1], tw.shape()[2]);
        if spec.groups == 0 || spec.dilation == 0 || kernel == 0 {
            return Err(TensorError::Config {
                op: "conv1d",
                detail: "groups, dilation and kernel size must be positive".into(),
            });
        }
        if c_in % spec.groups != 0 || c_out % spec.groups != 0 {
            return Err(TensorError::Config {
                op: "conv1d",
                detail: format!(
                    "groups={} must divide c_in={c_in} and c_out={c_out}",
                    spec.groups
                ),
            });
        }
        if cin_pg != c_in / spec.groups {
            return Err(dim_err(
                "conv1d",
                format!(
                    "weight expects {cin_pg} input channels per group, input provides {}",
                    c_in / spec.groups
                ),
            ));
        }
        let reach = (kernel - 1) * spec.dilation;
        if spec.padding.left + spec.padding.right != reach {
            return Err(TensorError::Config {
                op: "conv1d",
                detail: format!(
                    "padding {}+{} must equal (K-1)*dilation = {reach}",
                    spec.padding.left, spec.padding.right
                ),
            });
        }
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [c_out] {
                return Err(dim_err(
                    "conv1d",
                    format!("bias shape {:?}, expected [{c_out}]", tb.shape()),
                ));
            }
        }
        let geom = ConvGeom {
            batch,
            c_in,
            c_out,
            groups: spec.groups,
            kernel,
            dilation: spec.dilation,
            pad_left: spec.padding.left,
            t_in,
            t_out: t_in,
        };
        let data = kernels::conv1d_forward(
            &geom,
            tx.data(),
            tw.data(),
            bias.map(|b| self.value(b).data()),
        );
        let out = Tensor::new(vec![batch, c_out, t_in], data)?;
        let mut operands = vec![x.0, w.0];
        operands.extend(bias.map(|b| b.0));
        Ok(self.push(
            out,
            Op::Conv1d {
                x: x.0,
                w: w.0,
                b: bias.map(|b| b.0),
                geom,
            },
            &operands,
        ))
    }

    /// Per-channel normalization over (batch, time) followed by an affine map.
    /// In train mode the batch moments are returned so the caller can fold
    /// them into its running statistics.
    pub fn batch_norm(
        &mut self,
        x: Var,
        gamma: Var,
        beta: Var,
        mode: BatchNormMode<'_>,
    ) -> Result<(Var, Option<BatchMoments>)> {
        let tx = self.value(x);
        expect_rank("batch_norm", tx, 3)?;
        let (batch, ch, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (tg, tb) = (self.value(gamma), self.value(beta));
        if tg.shape() != [ch] || tb.shape() != [ch] {
            return Err(dim_err(
                "batch_norm",
                format!(
                    "affine shapes {:?}/{:?}, expected [{ch}]",
                    tg.shape(),
                    tb.shape()
                ),
            ));
        }
        let n = batch * t;
        let xd = tx.data();
        let mut mean = vec![0.0; ch];
        let mut var = vec![0.0; ch];
        let train = matches!(mode, BatchNormMode::Train);
        let moments = match mode {
            BatchNormMode::Train => {
                if n < 2 {
                    return Err(TensorError::Contract(format!(
                        "batch_norm in train mode needs at least 2 samples per channel, got {n}"
                    )));
                }
                for b in 0..batch {
                    for c in 0..ch {
                        let row = &xd[(b * ch + c) * t..(b * ch + c + 1) * t];
                        mean[c] += row.iter().sum::<f64>();
                    }
                }
                mean.iter_mut().for_each(|m| *m /= n as f64);
                for b in 0..batch {
                    for c in 0..ch {
                        let row = &xd[(b * ch + c) * t..(b * ch + c + 1) * t];
                        var[c] += row.iter().map(|v| (v - mean[c]).powi(2)).sum::<f64>();
                    }
                }
                let unbiased = var.iter().map(|v| v / (n - 1) as f64).collect();
                var.iter_mut().for_each(|v| *v /= n as f64);
                Some(BatchMoments {
                    mean: mean.clone(),
                    var_unbiased: unbiased,
                })
            }
            BatchNormMode::Eval(stats) => {
                let stats = stats.ok_or_else(|| {
                    TensorError::State(
                        "batch_norm evaluated before any training step and without running statistics"
                            .into(),
                    )
                })?;
                if stats.channels() != ch {
                    return Err(dim_err(
                        "batch_norm",
                        format!("running stats for {} channels, input has {ch}", stats.channels()),
                    ));
                }
                mean.copy_from_slice(&stats.mean);
                var.copy_from_slice(&stats.var);
                None
            }
        };
        let inv_std: Vec<f64> = var.iter().map(|v| 1.0 / (v + BN_EPS).sqrt()).collect();
        let mut xhat = vec![0.0; xd.len()];
        let mut out = vec![0.0; xd.len()];
        let (g, be) = (tg.data(), tb.data());
        for b in 0..batch {
            for c in 0..ch {
                let r = (b * ch + c) * t..(b * ch + c + 1) * t;
                for i in r {
                    let h = (xd[i] - mean[c]) * inv_std[c];
                    xhat[i] = h;
                    out[i] = g[c] * h + be[c];
                }
            }
        }
        let out = Tensor::new(vec![batch, ch, t], out)?;
        let v = self.push(
            out,
            Op::BatchNorm {
                x: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
                train,
            },
            &[x.0, gamma.0, beta.0],
        );
        Ok((v, moments))
    }

    // ── correlation ────────────────────────────────────────────────

    /// Pearson correlation of two equal-length sequences (any shape, read flat).
    pub fn pearson(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.len() != tb.len() {
            return Err(dim_err(
                "pearson",
                format!("lengths {} and {} differ", ta.len(), tb.len()),
            ));
        }
        if ta.len() < 2 {
            return Err(TensorError::Contract(
                "pearson needs at least two samples".into(),
            ));
        }
        let n = ta.len();
        let na = Normalized::new(ta.data(), n);
        let nb = Normalized::new(tb.data(), n);
        let r = na.z.iter().zip(&nb.z).map(|(x, y)| x * y).sum::<f64>() / n as f64;
        Ok(self.push(
            Tensor::scalar(r),
            Op::Pearson {
                a: a.0,
                b: b.0,
                na,
                nb,
            },
            &[a.0, b.0],
        ))
    }

    /// All-pairs correlation over time: `x: B×P×T`, `y: B×Q×T` gives
    /// `B × (P·Q)` with entry `i·Q + j` holding `pearson(x[b,i], y[b,j])`.
    pub fn pearson_pairs(&mut self, x: Var, y: Var) -> Result<Var> {
        let (tx, ty) = (self.value(x), self.value(y));
        expect_rank("pearson_pairs", tx, 3)?;
        expect_rank("pearson_pairs", ty, 3)?;
        let (batch, p, t) = (tx.shape()[0], tx.shape()[1], tx.shape()[2]);
        let (by, q, ty_len) = (ty.shape()[0], ty.shape()[1], ty.shape()[2]);
        if batch != by || t != ty_len {
            return Err(dim_err(
                "pearson_pairs",
                format!("shapes {:?} and {:?} disagree", tx.shape(), ty.shape()),
            ));
        }
        if t < 2 {
            return Err(TensorError::Contract(
                "pearson_pairs needs at least two time samples".into(),
            ));
        }
        let nx = Normalized::new(tx.data(), t);
        let ny = Normalized::new(ty.data(), t);
        let mut out = vec![0.0; batch * p * q];
        for b in 0..batch {
            kernels::gemm(
                p,
                t,
                q,
                &nx.z[b * p * t..],
                (t as isize, 1),
                &ny.z[b * q * t..],
                (1, t as isize),
                0.0,
                &mut out[b * p * q..(b + 1) * p * q],
            );
        }
        out.iter_mut().for_each(|v| *v /= t as f64);
        let out = Tensor::new(vec![batch, p * q], out)?;
        Ok(self.push(
            out,
            Op::PearsonPairs {
                x: x.0,
                y: y.0,
                nx,
                ny,
                batch,
                p,
                q,
            },
            &[x.0, y.0],
        ))
    }

    // ── reshaping ──────────────────────────────────────────────────

    /// `B×Fa` ++ `B×Fb` along the feature axis.
    pub fn concat_features(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        expect_rank("concat_features", ta, 2)?;
        expect_rank("concat_features", tb, 2)?;
        let batch = ta.shape()[0];
        if tb.shape()[0] != batch {
            return Err(dim_err(
                "concat_features",
                format!("batch sizes {} and {} differ", batch, tb.shape()[0]),
            ));
        }
        let (fa, fb) = (ta.shape()[1], tb.shape()[1]);
        let mut out = Vec::with_capacity(batch * (fa + fb));
        for i in 0..batch {
            out.extend_from_slice(&ta.data()[i * fa..(i + 1) * fa]);
            out.extend_from_slice(&tb.data()[i * fb..(i + 1) * fb]);
        }
        let out = Tensor::new(vec![batch, fa + fb], out)?;
        Ok(self.push(
            out,
            Op::ConcatFeatures {
                a: a.0,
                b: b.0,
                fa,
                fb,
            },
            &[a.0, b.0],
        ))
    }

    /// Stack two tensors along the leading axis.
    pub fn concat_batch(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        if ta.ndim() == 0 || ta.shape()[1..] != tb.shape()[1..] || ta.ndim() != tb.ndim() {
            return Err(dim_err(
                "concat_batch",
                format!("shapes {:?} and {:?} disagree", ta.shape(), tb.shape()),
            ));
        }
        let mut shape = ta.shape().to_vec();
        shape[0] += tb.shape()[0];
        let mut data = ta.data().to_vec();
        data.extend_from_slice(tb.data());
        let len_a = ta.len();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::ConcatBatch {
                a: a.0,
                b: b.0,
                len_a,
            },
            &[a.0, b.0],
        ))
    }

    /// Rows `[start, start + count)` of the leading axis.
    pub fn slice_batch(&mut self, x: Var, start: usize, count: usize) -> Result<Var> {
        let tx = self.value(x);
        if tx.ndim() == 0 || start + count > tx.shape()[0] {
            return Err(dim_err(
                "slice_batch",
                format!("rows {start}..{} out of {:?}", start + count, tx.shape()),
            ));
        }
        let row = tx.len() / tx.shape()[0];
        let mut shape = tx.shape().to_vec();
        shape[0] = count;
        let data = tx.data()[start * row..(start + count) * row].to_vec();
        let out = Tensor::new(shape, data)?;
        Ok(self.push(
            out,
            Op::SliceBatch {
                x: x.0,
                offset: start * row,
                len: count * row,
            },
            &[x.0],
        ))
    }

    // ── dense head & loss ──────────────────────────────────────────

    /// `x: B×Fin`, `w: Fout×Fin`, `b: Fout` gives `B×Fout`.
    pub fn linear(&mut self, x: Var, w: Var, bias: Option<Var>) -> Result<Var> {
        let (tx, tw) = (self.value(x), self.value(w));
        expect_rank("linear", tx, 2)?;
        expect_rank("linear", tw, 2)?;
        let (batch, fin) = (tx.shape()[0], tx.shape()[1]);
        let fout = tw.shape()[0];
        if tw.shape()[1] != fin {
            return Err(dim_err(
                "linear",
                format!("weight {:?} against input {:?}", tw.shape(), tx.shape()),
            ));
        }
        let mut out = vec![0.0; batch * fout];
        if let Some(b) = bias {
            let tb = self.value(b);
            if tb.shape() != [fout] {
                return Err(dim_err(
                    "linear",
                    format!("bias shape {:?}, expected [{fout}]", tb.shape()),
                ));
            }
            for row in out.chunks_exact_mut(fout) {
                row.copy_from_slice(tb.data());
            }
        }
        kernels::gemm(
            batch,
            fin,
            fout,
            tx.data(),
            (fin as isize, 1),
            tw.data(),
            (1, fin as isize),
            1.0,
            &mut out,
        );
        let out = Tensor::new(vec![batch, fout], out)?;
        let mut operands = vec![x.0, w.0];
        operands.extend(bias.map(|b| b.0));
        Ok(self.push(
            out,
            Op::Linear {
                x: x.0,
                w: w.0,
                b: bias.map(|b| b.0),
                batch,
                fin,
                fout,
            },
            &operands,
        ))
    }

    /// Mean binary cross-entropy between logits (read flat) and 0/1 labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let tz = self.value(logits);
        if tz.len() != labels.len() {
            return Err(dim_err(
                "bce_with_logits",
                format!("{} logits for {} labels", tz.len(), labels.len()),
            ));
        }
        if let Some(bad) = labels.iter().find(|&&y| y != 0.0 && y != 1.0) {
            return Err(TensorError::Contract(format!(
                "labels must be 0 or 1, got {bad}"
            )));
        }
        let loss = tz
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| bce_with_logits(z, y))
            .sum::<f64>()
            / labels.len() as f64;
        Ok(self.push(
            Tensor::scalar(loss),
            Op::BceWithLogits {
                z: logits.0,
                labels: labels.to_vec(),
            },
            &[logits.0],
        ))
    }

    // ── reverse sweep ──────────────────────────────────────────────

    /// Accumulate d(loss)/d(node) for every node that requires a gradient.
    pub fn backward(&self, loss: Var) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(TensorError::Contract(format!(
                "backward needs a scalar loss, got shape {:?}",
                root.value.shape()
            )));
        }
        let mut grads: Vec<Option<Tensor>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape().to_vec(), 1.0));
        for i in (0..=loss.0).rev() {
            let node = &self.nodes[i];
            if !node.requires_grad {
                continue;
            }
            if matches!(node.op, Op::Leaf) {
                continue;
            }
            let Some(gy) = grads[i].take() else {
                continue;
            };
            for (target, g) in self.node_backward(node, &gy) {
                if !self.nodes[target].requires_grad {
                    continue;
                }
                match grads[target].as_mut() {
                    Some(acc) => acc.add_assign(&g),
                    None => grads[target] = Some(g),
                }
            }
        }
        let shapes = self.nodes.iter().map(|n| n.value.shape().to_vec()).collect();
        Ok(Gradients { grads, shapes })
    }

    fn node_backward(&self, node: &Node, gy: &Tensor) -> Vec<(usize, Tensor)> {
        let val = |i: usize| &self.nodes[i].value;
        let need = |i: usize| self.nodes[i].requires_grad;
        let like = |i: usize, data: Vec<f64>| {
            Tensor::new(val(i).shape().to_vec(), data).expect("gradient shape matches operand")
        };
        let g = gy.data();
        match &node.op {
            Op::Leaf => Vec::new(),
            Op::Add { a, b, broadcast } => {
                let mut out = vec![(*a, gy.clone())];
                if *broadcast {
                    let n = val(*b).len();
                    let mut acc = vec![0.0; n];
                    for chunk in g.chunks_exact(n) {
                        for (s, v) in acc.iter_mut().zip(chunk) {
                            *s += v;
                        }
                    }
                    out.push((*b, like(*b, acc)));
                } else {
                    out.push((*b, gy.clone()));
                }
                out
            }
            Op::Mul { a, b } => {
                let (ta, tb) = (val(*a).data(), val(*b).data());
                vec![
                    (*a, like(*a, g.iter().zip(tb).map(|(x, y)| x * y).collect())),
                    (*b, like(*b, g.iter().zip(ta).map(|(x, y)| x * y).collect())),
                ]
            }
            Op::Scale { x, factor } => vec![(*x, gy.map(|v| v * factor))],
            Op::Sum { x } => vec![(*x, Tensor::full(val(*x).shape().to_vec(), g[0]))],
            Op::Mean { x } => {
                let n = val(*x).len() as f64;
                vec![(*x, Tensor::full(val(*x).shape().to_vec(), g[0] / n))]
            }
            Op::Elu { x } => {
                let xd = val(*x).data();
                let d = xd
                    .iter()
                    .zip(g)
                    .map(|(&v, &gv)| if v > 0.0 { gv } else { gv * v.exp() })
                    .collect();
                vec![(*x, like(*x, d))]
            }
            Op::Sigmoid { x } => {
                let yd = node.value.data();
                let d = yd.iter().zip(g).map(|(&y, &gv)| gv * y * (1.0 - y)).collect();
                vec![(*x, like(*x, d))]
            }
            Op::Conv1d { x, w, b, geom } => {
                let grads = kernels::conv1d_backward(
                    geom,
                    val(*x).data(),
                    val(*w).data(),
                    g,
                    (need(*x), need(*w), b.is_some_and(need)),
                );
                let mut out = Vec::new();
                if let Some(dx) = grads.dx {
                    out.push((*x, like(*x, dx)));
                }
                if let Some(dw) = grads.dw {
                    out.push((*w, like(*w, dw)));
                }
                if let (Some(b), Some(db)) = (b, grads.db) {
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::BatchNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
                train,
            } => {
                let shape = val(*x).shape();
                let (batch, ch, t) = (shape[0], shape[1], shape[2]);
                let n = (batch * t) as f64;
                let gam = val(*gamma).data();
                let mut dgamma = vec![0.0; ch];
                let mut dbeta = vec![0.0; ch];
                for bi in 0..batch {
                    for c in 0..ch {
                        let r = (bi * ch + c) * t..(bi * ch + c + 1) * t;
                        for i in r {
                            dgamma[c] += g[i] * xhat[i];
                            dbeta[c] += g[i];
                        }
                    }
                }
                let mut dx = vec![0.0; g.len()];
                for bi in 0..batch {
                    for c in 0..ch {
                        let r = (bi * ch + c) * t..(bi * ch + c + 1) * t;
                        for i in r {
                            dx[i] = if *train {
                                gam[c] * inv_std[c] / n
                                    * (n * g[i] - dbeta[c] - xhat[i] * dgamma[c])
                            } else {
                                gam[c] * inv_std[c] * g[i]
                            };
                        }
                    }
                }
                vec![
                    (*x, like(*x, dx)),
                    (*gamma, like(*gamma, dgamma)),
                    (*beta, like(*beta, dbeta)),
                ]
            }
            Op::Pearson { a, b, na, nb } => {
                let n = na.len as f64;
                let ga: Vec<f64> = nb.z.iter().map(|v| g[0] * v / n).collect();
                let gb: Vec<f64> = na.z.iter().map(|v| g[0] * v / n).collect();
                vec![
                    (*a, like(*a, na.backward(&ga))),
                    (*b, like(*b, nb.backward(&gb))),
                ]
            }
            Op::PearsonPairs {
                x,
                y,
                nx,
                ny,
                batch,
                p,
                q,
            } => {
                let (batch, p, q) = (*batch, *p, *q);
                let t = nx.len;
                let mut gzx = vec![0.0; nx.z.len()];
                let mut gzy = vec![0.0; ny.z.len()];
                for b in 0..batch {
                    let gr = &g[b * p * q..(b + 1) * p * q];
                    // dZx = dR · Zy / T
                    kernels::gemm(
                        p,
                        q,
                        t,
                        gr,
                        (q as isize, 1),
                        &ny.z[b * q * t..],
                        (t as isize, 1),
                        0.0,
                        &mut gzx[b * p * t..(b + 1) * p * t],
                    );
                    // dZy = dRᵀ · Zx / T
                    kernels::gemm(
                        q,
                        p,
                        t,
                        gr,
                        (1, q as isize),
                        &nx.z[b * p * t..],
                        (t as isize, 1),
                        0.0,
                        &mut gzy[b * q * t..(b + 1) * q * t],
                    );
                }
                let inv_t = 1.0 / t as f64;
                gzx.iter_mut().for_each(|v| *v *= inv_t);
                gzy.iter_mut().for_each(|v| *v *= inv_t);
                let mut out = Vec::new();
                if need(*x) {
                    out.push((*x, like(*x, nx.backward(&gzx))));
                }
                if need(*y) {
                    out.push((*y, like(*y, ny.backward(&gzy))));
                }
                out
            }
            Op::ConcatFeatures { a, b, fa, fb } => {
                let (fa, fb) = (*fa, *fb);
                let mut ga = Vec::new();
                let mut gb = Vec::new();
                for row in g.chunks_exact(fa + fb) {
                    ga.extend_from_slice(&row[..fa]);
                    gb.extend_from_slice(&row[fa..]);
                }
                vec![(*a, like(*a, ga)), (*b, like(*b, gb))]
            }
            Op::ConcatBatch { a, b, len_a } => vec![
                (*a, like(*a, g[..*len_a].to_vec())),
                (*b, like(*b, g[*len_a..].to_vec())),
            ],
            Op::SliceBatch { x, offset, len } => {
                let mut d = vec![0.0; val(*x).len()];
                d[*offset..offset + len].copy_from_slice(g);
                vec![(*x, like(*x, d))]
            }
            Op::Linear {
                x,
                w,
                b,
                batch,
                fin,
                fout,
            } => {
                let (batch, fin, fout) = (*batch, *fin, *fout);
                let mut out = Vec::new();
                if need(*x) {
                    let mut dx = vec![0.0; batch * fin];
                    kernels::gemm(
                        batch,
                        fout,
                        fin,
                        g,
                        (fout as isize, 1),
                        val(*w).data(),
                        (fin as isize, 1),
                        0.0,
                        &mut dx,
                    );
                    out.push((*x, like(*x, dx)));
                }
                if need(*w) {
                    let mut dw = vec![0.0; fout * fin];
                    kernels::gemm(
                        fout,
                        batch,
                        fin,
                        g,
                        (1, fout as isize),
                        val(*x).data(),
                        (fin as isize, 1),
                        0.0,
                        &mut dw,
                    );
                    out.push((*w, like(*w, dw)));
                }
                if let Some(b) = b {
                    let mut db = vec![0.0; fout];
                    for row in g.chunks_exact(fout) {
                        for (s, v) in db.iter_mut().zip(row) {
                            *s += v;
                        }
                    }
                    out.push((*b, like(*b, db)));
                }
                out
            }
            Op::BceWithLogits { z, labels } => {
                let n = labels.len() as f64;
                let d = val(*z)
                    .data()
                    .iter()
                    .zip(labels)
                    .map(|(&zv, &y)| g[0] * (sigmoid(zv) - y) / n)
                    .collect();
                vec![(*z, like(*z, d))]
            }
        }
    }
}

/// Result of a reverse sweep.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Tensor>>,
    shapes: Vec<Vec<usize>>,
}

impl Gradients {
    /// Gradient of `v`, or `None` if nothing on the loss path reached it.
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(Option::as_ref)
    }

    /// Gradient of `v`, zeros when `v` is off the loss path.
    pub fn take(&mut self, v: Var) -> Tensor {
        self.grads[v.0]
            .take()
            .unwrap_or_else(|| Tensor::zeros(self.shapes[v.0].clone()))
    }
}

pub fn elu(x: f64) -> f64 {
    if x > 0.0 {
        x
    } else {
        x.exp_m1()
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

/// `max(z,0) - z·y + ln(1 + e^{-|z|})`.
pub fn bce_with_logits(z: f64, y: f64) -> f64 {
    z.max(0.0) - z * y + (-z.abs()).exp().ln_1p()
}

/// Pearson correlation of two slices under the same eps convention as the
/// taped operator.
pub fn pearson(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(dim_err(
            "pearson",
            format!("lengths {} and {} differ", a.len(), b.len()),
        ));
    }
    if a.len() < 2 {
        return Err(TensorError::Contract(
            "pearson needs at least two samples".into(),
        ));
    }
    let na = Normalized::new(a, a.len());
    let nb = Normalized::new(b, b.len());
    Ok(na.z.iter().zip(&nb.z).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64)
}
