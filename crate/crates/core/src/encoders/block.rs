use rand::Rng;

use crate::tensor::{ParamId, ParamStore, Result, Tape, Tensor, Var};

/// Pre-norm transformer block with bidirectional multi-head attention.
#[derive(Debug, Clone)]
pub struct TransformerBlock {
    pub ln1_gamma: ParamId,
    pub ln1_beta: ParamId,
    pub wq: ParamId,
    pub wk: ParamId,
    pub wv: ParamId,
    pub wo: ParamId,
    pub ln2_gamma: ParamId,
    pub ln2_beta: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub heads: usize,
    pub eps: f64,
}

impl TransformerBlock {
    #[allow(clippy::too_many_arguments)]
    pub fn init<R: Rng + ?Sized>(
        store: &mut ParamStore,
        prefix: &str,
        width: usize,
        mlp_width: usize,
        heads: usize,
        std: f64,
        eps: f64,
        rng: &mut R,
    ) -> Self {
        assert!(width.is_multiple_of(heads), "width {width} not divisible by {heads} heads");
        let mut w = |name: &str, shape: &[usize], rng: &mut R| {
            store.add(format!("{prefix}.{name}"), Tensor::randn(shape, std, rng))
        };
        let wq = w("attn.wq", &[width, width], rng);
        let wk = w("attn.wk", &[width, width], rng);
        let wv = w("attn.wv", &[width, width], rng);
        let wo = w("attn.wo", &[width, width], rng);
        let fc_w = w("mlp.fc_w", &[width, mlp_width], rng);
        let proj_w = w("mlp.proj_w", &[mlp_width, width], rng);
        Self {
            ln1_gamma: store.add(format!("{prefix}.ln1.gamma"), Tensor::filled(&[width], 1.0)),
            ln1_beta: store.add(format!("{prefix}.ln1.beta"), Tensor::zeros(&[width])),
            wq,
            wk,
            wv,
            wo,
            ln2_gamma: store.add(format!("{prefix}.ln2.gamma"), Tensor::filled(&[width], 1.0)),
            ln2_beta: store.add(format!("{prefix}.ln2.beta"), Tensor::zeros(&[width])),
            fc_w,
            fc_b: store.add(format!("{prefix}.mlp.fc_b"), Tensor::zeros(&[mlp_width])),
            proj_w,
            proj_b: store.add(format!("{prefix}.mlp.proj_b"), Tensor::zeros(&[width])),
            heads,
            eps,
        }
    }

    pub fn param_ids(&self) -> Vec<ParamId> {
        vec![
            self.ln1_gamma,
            self.ln1_beta,
            self.wq,
            self.wk,
            self.wv,
            self.wo,
            self.ln2_gamma,
            self.ln2_beta,
            self.fc_w,
            self.fc_b,
            self.proj_w,
            self.proj_b,
        ]
    }

    /// `x: [L × width] -> [L × width]`.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let width = tape.value(x).cols();
        let head_dim = width / self.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();

        let g1 = tape.param(store, self.ln1_gamma);
        let b1 = tape.param(store, self.ln1_beta);
        let h = tape.layer_norm(x, g1, b1, self.eps)?;
        let wq = tape.param(store, self.wq);
        let wk = tape.param(store, self.wk);
        let wv = tape.param(store, self.wv);
        let q = tape.matmul(h, wq)?;
        let k = tape.matmul(h, wk)?;
        let v = tape.matmul(h, wv)?;

        let mut heads = Vec::with_capacity(self.heads);
        for head in 0..self.heads {
            let start = head * head_dim;
            let qh = tape.slice_cols(q, start, head_dim)?;
            let kh = tape.slice_cols(k, start, head_dim)?;
            let vh = tape.slice_cols(v, start, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale)?;
            let attn = tape.softmax(scores, 1)?;
            heads.push(tape.matmul(attn, vh)?);
        }
        let merged = tape.concat_cols(&heads)?;
        let wo = tape.param(store, self.wo);
        let attn_out = tape.matmul(merged, wo)?;
        let x = tape.add(x, attn_out)?;

        let g2 = tape.param(store, self.ln2_gamma);
        let b2 = tape.param(store, self.ln2_beta);
        let h = tape.layer_norm(x, g2, b2, self.eps)?;
        let fc_w = tape.param(store, self.fc_w);
        let fc_b = tape.param(store, self.fc_b);
        let hidden = tape.matmul(h, fc_w)?;
        let hidden = tape.add_row(hidden, fc_b)?;
        let hidden = tape.gelu(hidden)?;
        let proj_w = tape.param(store, self.proj_w);
        let proj_b = tape.param(store, self.proj_b);
        let out = tape.matmul(hidden, proj_w)?;
        let out = tape.add_row(out, proj_b)?;
        tape.add(x, out)
    }
}
