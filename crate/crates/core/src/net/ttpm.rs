//! Time-aware prompt: `Prompt = MLP(CrossAttention(P, emb) + P)`.

use super::config::{Ablation, Ablations, ModelConfig};
use super::layers::{Init, Net};
use crate::error::Result;
use crate::{Scalar, Tensor, Var};

pub(crate) fn init<T: Scalar>(i: &mut Init<'_, T>, cfg: &ModelConfig, abl: &Ablations) -> Result<()> {
    let (lp, dp) = (cfg.prompt_len, cfg.prompt_dim);
    let p = Tensor::randn(vec![lp, dp], 1.0, &mut i.rng);
    i.tensor("ttpm.P", p)?;
    if abl.has(Ablation::FixedPrompt) {
        return Ok(());
    }
    if !abl.has(Ablation::TtpmNoTime) {
        i.matrix("ttpm.attn.q", dp, dp)?;
        i.matrix("ttpm.attn.k", cfg.time_dim, dp)?;
        i.matrix("ttpm.attn.v", cfg.time_dim, dp)?;
        i.matrix_zero("ttpm.attn.out", dp, dp)?;
    }
    i.linear("ttpm.mlp.l1", dp, dp)?;
    i.linear("ttpm.mlp.l2", dp, dp)
}

impl<T: Scalar> Net<'_, T> {
    pub fn ttpm(&mut self, cfg: &ModelConfig, abl: &Ablations, emb: Var) -> Result<Var> {
        Ok(self.ttpm_traced(cfg, abl, emb)?.0)
    }

    /// Prompt `[N, L_p, d_p]` and, when the time path exists, the attention
    /// weights `[N, L_p, 1]`.
    pub fn ttpm_traced(&mut self, cfg: &ModelConfig, abl: &Ablations, emb: Var) -> Result<(Var, Option<Var>)> {
        let n = self.g.shape(emb)[0];
        let (lp, dp) = (cfg.prompt_len, cfg.prompt_dim);
        let p = self.param("ttpm.P")?;
        let zeros = self.g.constant(Tensor::zeros(vec![n, lp, dp]));
        let p = self.g.add(zeros, p)?;
        if abl.has(Ablation::FixedPrompt) {
            return Ok((p, None));
        }
        let (x, weights) = if abl.has(Ablation::TtpmNoTime) {
            (p, None)
        } else {
            let token = self.g.reshape(emb, &[n, 1, cfg.time_dim])?;
            let q = self.matrix("ttpm.attn.q", p)?;
            let k = self.matrix("ttpm.attn.k", token)?;
            let v = self.matrix("ttpm.attn.v", token)?;
            let kt = self.g.transpose(k)?;
            let scores = self.g.matmul(q, kt)?;
            let scores = self.g.scale(scores, 1.0 / (dp as f64).sqrt());
            // A single key: every weight is exactly 1.
            let w = self.g.softmax(scores, 2)?;
            let o = self.g.matmul(w, v)?;
            let o = self.matrix("ttpm.attn.out", o)?;
            (self.g.add(o, p)?, Some(w))
        };
        let h = self.linear("ttpm.mlp.l1", x)?;
        let h = self.g.gelu(h);
        Ok((self.linear("ttpm.mlp.l2", h)?, weights))
    }
}
