//! Time-conditioned transformer block: SFT modulation, transposed
//! (channel) self-attention with a learnable per-head temperature, and a
//! three-path gated feed-forward network.

use super::layers::{Init, Net, LN_EPS};
use crate::error::{config_err, Result};
use crate::{Scalar, Tensor, Var};

pub(crate) fn init<T: Scalar>(i: &mut Init<'_, T>, name: &str, c: usize, heads: usize, time_dim: usize) -> Result<()> {
    if heads == 0 || c % heads != 0 {
        return Err(config_err!("{c} channels do not split into {heads} heads"));
    }
    i.linear(&format!("{name}.affine.l1"), time_dim, time_dim)?;
    // Zero so that all six modulation maps vanish at initialisation.
    i.linear_zero(&format!("{name}.affine.l2"), time_dim, 6 * c)?;
    i.conv(&format!("{name}.qkv"), 3 * c, c, 1)?;
    i.conv(&format!("{name}.qkv_dw"), 3 * c, 1, 3)?;
    i.tensor(&format!("{name}.alpha"), Tensor::ones(vec![heads, 1, 1]))?;
    i.conv(&format!("{name}.proj"), c, c, 1)?;
    // Three 2C-wide paths in one pointwise conv; the first two get a
    // depthwise conv.
    i.conv(&format!("{name}.ffn_in"), 6 * c, c, 1)?;
    i.conv(&format!("{name}.ffn_dw"), 4 * c, 1, 3)?;
    i.conv(&format!("{name}.ffn_out"), c, 2 * c, 1)
}

impl<T: Scalar> Net<'_, T> {
    pub fn transformer_block(&mut self, name: &str, x: Var, emb: Var, heads: usize) -> Result<Var> {
        Ok(self.transformer_block_traced(name, x, emb, heads)?.0)
    }

    /// As [`Net::transformer_block`], also returning the attention weights
    /// `[N, heads, C/h, C/h]`.
    pub fn transformer_block_traced(&mut self, name: &str, x: Var, emb: Var, heads: usize) -> Result<(Var, Var)> {
        let s = self.g.shape(x).to_vec();
        let (n, c, h, w) = (s[0], s[1], s[2], s[3]);
        if heads == 0 || c % heads != 0 {
            return Err(config_err!("{c} channels do not split into {heads} heads"));
        }
        let e = self.g.silu(emb);
        let e = self.linear(&format!("{name}.affine.l1"), e)?;
        let e = self.g.silu(e);
        let mods = self.linear(&format!("{name}.affine.l2"), e)?;
        let mut m = Vec::with_capacity(6);
        for k in 0..6 {
            let part = self.g.narrow(mods, 1, k * c, c)?;
            m.push(self.as_map(part)?);
        }
        let (a1, b1, g1, a2, b2, g2) = (m[0], m[1], m[2], m[3], m[4], m[5]);

        // F2 = α1 ⊙ (1 + LN(F_in)) + β1
        let ln = self.g.layer_norm(x, LN_EPS)?;
        let ln = self.g.add_scalar(ln, 1.0);
        let f2 = self.g.mul(ln, a1)?;
        let f2 = self.g.add(f2, b1)?;

        let qkv = self.conv(&format!("{name}.qkv"), f2, 1, 1)?;
        let qkv = self.conv(&format!("{name}.qkv_dw"), qkv, 1, 3 * c)?;
        let head_shape = [n, heads, c / heads, h * w];
        let q = self.g.narrow(qkv, 1, 0, c)?;
        let q = self.g.reshape(q, &head_shape)?;
        let k = self.g.narrow(qkv, 1, c, c)?;
        let k = self.g.reshape(k, &head_shape)?;
        let v = self.g.narrow(qkv, 1, 2 * c, c)?;
        let v = self.g.reshape(v, &head_shape)?;
        let kt = self.g.transpose(k)?;
        let scores = self.g.matmul(q, kt)?;
        let alpha = self.param(&format!("{name}.alpha"))?;
        let inv_alpha = self.g.recip(alpha);
        let scores = self.g.mul(scores, inv_alpha)?;
        let attn = self.g.softmax(scores, 3)?;
        let o = self.g.matmul(attn, v)?;
        let o = self.g.reshape(o, &s)?;
        let o = self.conv(&format!("{name}.proj"), o, 1, 1)?;
        let o = self.g.mul(o, g1)?;
        let f3 = self.g.add(x, o)?;

        // F4 = α2 ⊙ (1 + LN(F3)) + β2
        let ln = self.g.layer_norm(f3, LN_EPS)?;
        let ln = self.g.add_scalar(ln, 1.0);
        let f4 = self.g.mul(ln, a2)?;
        let f4 = self.g.add(f4, b2)?;

        let hidden = self.conv(&format!("{name}.ffn_in"), f4, 1, 1)?;
        let front = self.g.narrow(hidden, 1, 0, 4 * c)?;
        let front = self.conv(&format!("{name}.ffn_dw"), front, 1, 4 * c)?;
        let p1 = self.g.narrow(front, 1, 0, 2 * c)?;
        let p1 = self.g.gelu(p1);
        let p2 = self.g.narrow(front, 1, 2 * c, 2 * c)?;
        let p3 = self.g.narrow(hidden, 1, 4 * c, 2 * c)?;
        let p3 = self.g.gelu(p3);
        let gate = self.g.mul(p1, p2)?;
        let gate = self.g.mul(gate, p3)?;
        let ffn = self.conv(&format!("{name}.ffn_out"), gate, 1, 1)?;
        let ffn = self.g.mul(ffn, g2)?;
        Ok((self.g.add(f3, ffn)?, attn))
    }
}
