//! Scaled dot-product attention, its multi-head form, and the residual
//! self-attention block used by every encoder stack.

use super::{Matrix, ParamId, ParamStore, Tape, Var};
use crate::error::{Error, Result};
use rand::Rng;

/// `softmax(q·kᵀ/√d_k)·v`. Returns the output and the weight matrix.
pub fn attention(q: &Matrix, k: &Matrix, v: &Matrix) -> Result<(Matrix, Matrix)> {
    if q.cols() != k.cols() {
        return Err(Error::Dimension {
            op: "attention q·kᵀ",
            lhs: q.shape(),
            rhs: k.shape(),
        });
    }
    if k.rows() != v.rows() {
        return Err(Error::Dimension {
            op: "attention weights·v",
            lhs: k.shape(),
            rhs: v.shape(),
        });
    }
    let scale = 1.0 / (k.cols() as f64).sqrt();
    let weights = q.matmul_bt(k)?.scale(scale).softmax_rows();
    let out = weights.matmul(v)?;
    Ok((out, weights))
}

/// Affine map `x·W + b`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        d_in: usize,
        d_out: usize,
        bias: bool,
    ) -> Self {
        let weight = store.add_randn(format!("{name}.weight"), d_in, d_out, rng);
        let bias = bias.then(|| store.add_zeros(format!("{name}.bias"), 1, d_out));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let w = tape.param(self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Per-row layer normalization with learned gain and shift.
#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl LayerNorm {
    pub fn new(store: &mut ParamStore, name: &str, width: usize) -> Self {
        Self {
            gamma: store.add(format!("{name}.gamma"), Matrix::filled(1, width, 1.0)),
            beta: store.add_zeros(format!("{name}.beta"), 1, width),
        }
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let g = tape.param(self.gamma);
        let b = tape.param(self.beta);
        tape.layer_norm(x, g, b)
    }
}

/// Multi-head attention with query/key/value/output projections.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub heads: usize,
    pub width: usize,
}

/// Output of a multi-head pass with the per-head weight rows kept.
pub struct AttentionTrace {
    pub output: Var,
    pub weights: Vec<Var>,
    /// Per-head outputs before concatenation and output projection.
    pub head_outputs: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        check_heads(width, heads)?;
        Ok(Self {
            wq: store.add_randn(format!("{name}.wq"), width, width, rng),
            wk: store.add_randn(format!("{name}.wk"), width, width, rng),
            wv: store.add_randn(format!("{name}.wv"), width, width, rng),
            wo: store.add_randn(format!("{name}.wo"), width, width, rng),
            heads,
            width,
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, q_in: Var, kv_in: Var) -> Result<Var> {
        Ok(self.trace(tape, q_in, kv_in, false)?.output)
    }

    pub fn forward_causal(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        Ok(self.trace(tape, x, x, true)?.output)
    }

    pub fn trace(&self, tape: &mut Tape<'_>, q_in: Var, kv_in: Var, causal: bool) -> Result<AttentionTrace> {
        for v in [q_in, kv_in] {
            if tape.shape(v).1 != self.width {
                return Err(Error::Dimension {
                    op: "multi_head_attention input",
                    lhs: tape.shape(v),
                    rhs: (self.width, self.width),
                });
            }
        }
        let (wq, wk, wv, wo) = (
            tape.param(self.wq),
            tape.param(self.wk),
            tape.param(self.wv),
            tape.param(self.wo),
        );
        let q = tape.matmul(q_in, wq)?;
        let k = tape.matmul(kv_in, wk)?;
        let v = tape.matmul(kv_in, wv)?;
        let dh = self.width / self.heads;
        let scale = 1.0 / (dh as f64).sqrt();
        let mut weights = Vec::with_capacity(self.heads);
        let mut head_outputs = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let (qh, kh, vh) = if self.heads == 1 {
                (q, k, v)
            } else {
                (
                    tape.slice_cols(q, h * dh, dh)?,
                    tape.slice_cols(k, h * dh, dh)?,
                    tape.slice_cols(v, h * dh, dh)?,
                )
            };
            let scores = tape.matmul_bt(qh, kh)?;
            let scores = tape.scale(scores, scale);
            let w = if causal {
                tape.causal_softmax_rows(scores)?
            } else {
                tape.softmax_rows(scores)
            };
            head_outputs.push(tape.matmul(w, vh)?);
            weights.push(w);
        }
        let joined = if self.heads == 1 {
            head_outputs[0]
        } else {
            tape.concat_cols(head_outputs.clone())?
        };
        let output = tape.matmul(joined, wo)?;
        Ok(AttentionTrace {
            output,
            weights,
            head_outputs,
        })
    }
}

pub fn check_heads(width: usize, heads: usize) -> Result<()> {
    if heads == 0 || !width.is_multiple_of(heads) {
        return Err(Error::config(format!(
            "width {width} is not divisible by {heads} heads"
        )));
    }
    Ok(())
}

/// Multi-head self-attention, residual connection, layer normalization.
/// No feed-forward sublayer.
#[derive(Debug, Clone)]
pub struct SelfAttentionLayer {
    pub attn: MultiHeadAttention,
    pub norm: LayerNorm,
}

impl SelfAttentionLayer {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
    ) -> Result<Self> {
        Ok(Self {
            attn: MultiHeadAttention::new(store, rng, &format!("{name}.attn"), width, heads)?,
            norm: LayerNorm::new(store, &format!("{name}.norm"), width),
        })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, x: Var) -> Result<Var> {
        let a = self.attn.forward(tape, x, x)?;
        let r = tape.add(x, a)?;
        self.norm.forward(tape, r)
    }
}

/// A stack of self-attention layers applied in order.
#[derive(Debug, Clone, Default)]
pub struct SelfAttentionStack {
    pub layers: Vec<SelfAttentionLayer>,
}

impl SelfAttentionStack {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        rng: &mut R,
        name: &str,
        width: usize,
        heads: usize,
        depth: usize,
    ) -> Result<Self> {
        let layers = (0..depth)
            .map(|i| SelfAttentionLayer::new(store, rng, &format!("{name}.{i}"), width, heads))
            .collect::<Result<_>>()?;
        Ok(Self { layers })
    }

    pub fn forward(&self, tape: &mut Tape<'_>, mut x: Var) -> Result<Var> {
        for layer in &self.layers {
            x = layer.forward(tape, x)?;
        }
        Ok(x)
    }
}
