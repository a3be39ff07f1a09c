use serde::Serialize;

use super::config::{HeadKind, ModelConfig};
use crate::autodiff::{Gradients, Graph, Var};
use crate::error::{config_err, data_err, Error, Result};
use crate::tensor::{xavier_uniform, Tensor};
use crate::wavelet::{apply_multiscale, EmaConfig, KernelMap, LearnableKernelBank, WaveletMode};

/// A batch of equal-length token sequences, stored row-major `[batch×seq_len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub batch: usize,
    pub seq_len: usize,
    pub ids: Vec<usize>,
}

impl TokenBatch {
    pub fn new(batch: usize, seq_len: usize, ids: Vec<usize>) -> Result<Self> {
        if batch * seq_len != ids.len() || seq_len == 0 {
            return data_err(format!("{} ids do not form {batch} sequences of {seq_len}", ids.len()));
        }
        Ok(Self { batch, seq_len, ids })
    }

    pub fn from_rows(rows: &[Vec<usize>]) -> Result<Self> {
        let seq_len = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != seq_len) {
            return data_err("sequences in a batch must share a length");
        }
        Self::new(rows.len(), seq_len, rows.concat())
    }

    pub fn row(&self, b: usize) -> &[usize] {
        &self.ids[b * self.seq_len..(b + 1) * self.seq_len]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamGroup {
    Embedding,
    Block(usize),
    FinalNorm,
    Wavelet,
    Head,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub group: ParamGroup,
    pub tensor: Tensor,
}

/// Parameter totals by group.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ParamCount {
    pub embeddings: usize,
    pub blocks: Vec<usize>,
    pub final_norm: usize,
    pub wavelet: usize,
    pub head: usize,
    pub total: usize,
}

impl ParamCount {
    /// Parameters added by the wavelet operator.
    pub fn extra(&self) -> usize {
        self.wavelet
    }

    pub fn extra_ratio(&self) -> f64 {
        self.wavelet as f64 / (self.total - self.wavelet) as f64
    }
}

#[derive(Debug, Clone)]
struct BlockIdx {
    ln1: (usize, usize),
    wq: (usize, usize),
    wk: (usize, usize),
    wv: (usize, usize),
    wo: (usize, usize),
    ln2: (usize, usize),
    ff1: (usize, usize),
    ff2: (usize, usize),
}

/// Decoder-only transformer with the multi-scale operator between blocks.
#[derive(Debug, Clone)]
pub struct GptModel {
    config: ModelConfig,
    map: KernelMap,
    ema: Option<EmaConfig>,
    params: Vec<Param>,
    tok_emb: usize,
    pos_emb: usize,
    blocks: Vec<BlockIdx>,
    final_ln: (usize, usize),
    head_hidden: (usize, usize),
    head_out: (usize, usize),
    /// Parameter indices of each kernel bank, in coordinate order.
    banks: Vec<Vec<usize>>,
}

/// A recorded forward pass: the tape plus the graph handle of every
/// parameter, aligned with [`GptModel::params`].
pub struct ForwardPass {
    pub graph: Graph,
    pub params: Vec<Var>,
    pub output: Var,
}

impl GptModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let map = config.kernel_map()?;
        let ema = (config.wavelet_mode == WaveletMode::Ema).then(|| EmaConfig::linear(&map));
        let mut params = Vec::new();
        let mut push = |name: String, group: ParamGroup, tensor: Tensor| {
            params.push(Param { name, group, tensor: tensor.into_param() });
            params.len() - 1
        };
        let e = config.embed_dim;
        let matrix = |name: &str, fan_in: usize, fan_out: usize| xavier_uniform(fan_in, fan_out, seed, name);

        let tok_emb = push("tok_emb".into(), ParamGroup::Embedding, matrix("tok_emb", config.vocab_size, e));
        let pos_emb = push("pos_emb".into(), ParamGroup::Embedding, matrix("pos_emb", config.context_len, e));

        let mut blocks = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let grp = ParamGroup::Block(l);
            let mut norm = |tag: &str| {
                (
                    push(format!("block{l}.{tag}.gain"), grp, Tensor::filled(vec![e], 1.0)),
                    push(format!("block{l}.{tag}.bias"), grp, Tensor::zeros(vec![e])),
                )
            };
            let ln1 = norm("ln1");
            let ln2 = norm("ln2");
            let mut dense = |tag: &str, fan_in: usize, fan_out: usize| {
                let w = format!("block{l}.{tag}.w");
                (
                    push(w.clone(), grp, matrix(&w, fan_in, fan_out)),
                    push(format!("block{l}.{tag}.b"), grp, Tensor::zeros(vec![fan_out])),
                )
            };
            blocks.push(BlockIdx {
                ln1,
                wq: dense("attn.q", e, e),
                wk: dense("attn.k", e, e),
                wv: dense("attn.v", e, e),
                wo: dense("attn.o", e, e),
                ln2,
                ff1: dense("ff.in", e, config.ff_dim),
                ff2: dense("ff.out", config.ff_dim, e),
            });
        }
        let final_ln = (
            push("final_ln.gain".into(), ParamGroup::FinalNorm, Tensor::filled(vec![e], 1.0)),
            push("final_ln.bias".into(), ParamGroup::FinalNorm, Tensor::zeros(vec![e])),
        );
        let out_dim = match config.head {
            HeadKind::Lm => config.vocab_size,
            HeadKind::Classify { n_classes } => n_classes,
        };
        let p = config.penultimate_dim;
        let head_hidden = (
            push("head.hidden.w".into(), ParamGroup::Head, matrix("head.hidden.w", e, p)),
            push("head.hidden.b".into(), ParamGroup::Head, Tensor::zeros(vec![p])),
        );
        let head_out = (
            push("head.out.w".into(), ParamGroup::Head, matrix("head.out.w", p, out_dim)),
            push("head.out.b".into(), ParamGroup::Head, Tensor::zeros(vec![out_dim])),
        );

        let banks = (0..config.n_banks())
            .map(|b| {
                LearnableKernelBank::new(&map)
                    .kernels()
                    .iter()
                    .enumerate()
                    .map(|(c, k)| push(format!("wavelet.bank{b}.coord{}", e / 2 + c), ParamGroup::Wavelet, k.clone()))
                    .collect()
            })
            .collect();

        Ok(Self { config, map, ema, params, tok_emb, pos_emb, blocks, final_ln, head_hidden, head_out, banks })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn kernel_map(&self) -> &KernelMap {
        &self.map
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn zero_grad(&mut self) {
        self.params.iter_mut().for_each(|p| p.tensor.zero_grad());
    }

    pub fn param_count(&self) -> ParamCount {
        let mut count = ParamCount {
            embeddings: 0,
            blocks: vec![0; self.config.n_layers],
            final_norm: 0,
            wavelet: 0,
            head: 0,
            total: 0,
        };
        for p in &self.params {
            let n = p.tensor.len();
            match p.group {
                ParamGroup::Embedding => count.embeddings += n,
                ParamGroup::Block(l) => count.blocks[l] += n,
                ParamGroup::FinalNorm => count.final_norm += n,
                ParamGroup::Wavelet => count.wavelet += n,
                ParamGroup::Head => count.head += n,
            }
            count.total += n;
        }
        count
    }

    /// Bank used after block `gap`.
    fn bank_for_gap(&self, gap: usize) -> Option<&[usize]> {
        match self.banks.len() {
            0 => None,
            1 if self.config.share_across_layers => Some(&self.banks[0]),
            _ => self.banks.get(gap).map(Vec::as_slice),
        }
    }

    fn check_tokens(&self, tokens: &TokenBatch) -> Result<()> {
        if tokens.seq_len > self.config.context_len {
            return data_err(format!(
                "sequence of {} tokens exceeds context length {}",
                tokens.seq_len, self.config.context_len
            ));
        }
        if let Some((pos, &bad)) = tokens.ids.iter().enumerate().find(|(_, &t)| t >= self.config.vocab_size) {
            return data_err(format!("token {bad} at flat position {pos} outside vocabulary {}", self.config.vocab_size));
        }
        Ok(())
    }

    /// Runs the decoder stack and returns the final-normed hidden states,
    /// `[batch·seq_len × E]`.
    fn trunk(&self, g: &mut Graph, pv: &[Var], tokens: &TokenBatch) -> Result<Var> {
        self.check_tokens(tokens)?;
        let l = tokens.seq_len;
        let positions: Vec<usize> = (0..tokens.batch).flat_map(|_| 0..l).collect();
        let tok = g.embedding(pv[self.tok_emb], &tokens.ids)?;
        let pos = g.embedding(pv[self.pos_emb], &positions)?;
        let mut x = g.add(tok, pos)?;
        let heads = self.config.n_heads;
        for (layer, blk) in self.blocks.iter().enumerate() {
            let h = g.layer_norm(x, pv[blk.ln1.0], pv[blk.ln1.1])?;
            let q = g.linear(h, pv[blk.wq.0], pv[blk.wq.1])?;
            let k = g.linear(h, pv[blk.wk.0], pv[blk.wk.1])?;
            let v = g.linear(h, pv[blk.wv.0], pv[blk.wv.1])?;
            let a = g.causal_attention(q, k, v, heads, l)?;
            let a = g.linear(a, pv[blk.wo.0], pv[blk.wo.1])?;
            x = g.add(x, a)?;
            let h = g.layer_norm(x, pv[blk.ln2.0], pv[blk.ln2.1])?;
            let f = g.linear(h, pv[blk.ff1.0], pv[blk.ff1.1])?;
            let f = g.gelu(f)?;
            let f = g.linear(f, pv[blk.ff2.0], pv[blk.ff2.1])?;
            x = g.add(x, f)?;
            if layer + 1 < self.config.n_layers || self.config.apply_after_last {
                let bank: Option<Vec<Var>> = self.bank_for_gap(layer).map(|idx| idx.iter().map(|&i| pv[i]).collect());
                x = apply_multiscale(g, x, l, &self.map, self.config.wavelet_mode, bank.as_deref(), self.ema.as_ref())?;
            }
        }
        g.layer_norm(x, pv[self.final_ln.0], pv[self.final_ln.1])
    }

    fn head(&self, g: &mut Graph, pv: &[Var], x: Var) -> Result<Var> {
        let mut z = g.linear(x, pv[self.head_hidden.0], pv[self.head_hidden.1])?;
        if self.config.penultimate_gelu {
            z = g.gelu(z)?;
        }
        g.linear(z, pv[self.head_out.0], pv[self.head_out.1])
    }

    fn start(&self) -> (Graph, Vec<Var>) {
        let mut g = Graph::new();
        let pv = self.params.iter().map(|p| g.param(&p.tensor)).collect();
        (g, pv)
    }

    /// Records the language-model forward pass; output is logits
    /// `[batch·seq_len × V]`, row `t` predicting token `t + 1`.
    pub fn record_lm(&self, tokens: &TokenBatch) -> Result<ForwardPass> {
        if self.config.head != HeadKind::Lm {
            return config_err("model has a classification head, not a language-model head");
        }
        let (mut g, pv) = self.start();
        let x = self.trunk(&mut g, &pv, tokens)?;
        let output = self.head(&mut g, &pv, x)?;
        g.check_finite()?;
        Ok(ForwardPass { graph: g, params: pv, output })
    }

    /// Records the classification forward pass; output is `[batch × C]`.
    pub fn record_classify(&self, tokens: &TokenBatch) -> Result<ForwardPass> {
        if !matches!(self.config.head, HeadKind::Classify { .. }) {
            return config_err("model has a language-model head, not a classification head");
        }
        let (mut g, pv) = self.start();
        let x = self.trunk(&mut g, &pv, tokens)?;
        let last: Vec<usize> = (0..tokens.batch).map(|b| b * tokens.seq_len + tokens.seq_len - 1).collect();
        let x = g.select_rows(x, &last)?;
        let output = self.head(&mut g, &pv, x)?;
        g.check_finite()?;
        Ok(ForwardPass { graph: g, params: pv, output })
    }

    /// Logits `[batch, seq_len, V]`.
    pub fn forward_lm(&self, tokens: &TokenBatch) -> Result<Tensor> {
        let pass = self.record_lm(tokens)?;
        let v = self.config.vocab_size;
        Tensor::new(vec![tokens.batch, tokens.seq_len, v], pass.graph.value(pass.output).to_vec())
    }

    /// Class logits `[batch, C]`.
    pub fn forward_classify(&self, tokens: &TokenBatch) -> Result<Tensor> {
        let pass = self.record_classify(tokens)?;
        Ok(pass.graph.to_tensor(pass.output))
    }

    /// Mean next-token cross-entropy (nats) with its tape.
    pub fn lm_loss(&self, inputs: &TokenBatch, targets: &[usize]) -> Result<(ForwardPass, Var)> {
        let mut pass = self.record_lm(inputs)?;
        let loss = pass.graph.cross_entropy_logits(pass.output, targets)?;
        Ok((pass, loss))
    }

    /// Mean classification cross-entropy (nats) with its tape.
    pub fn classify_loss(&self, inputs: &TokenBatch, labels: &[usize]) -> Result<(ForwardPass, Var)> {
        let mut pass = self.record_classify(inputs)?;
        let loss = pass.graph.cross_entropy_logits(pass.output, labels)?;
        Ok((pass, loss))
    }

    /// Adds the gradients of a backward sweep into every parameter's buffer.
    pub fn accumulate_grads(&mut self, pass: &ForwardPass, grads: &Gradients) -> Result<()> {
        for (p, &v) in self.params.iter_mut().zip(&pass.params) {
            grads.accumulate_into(v, &mut p.tensor)?;
        }
        Ok(())
    }

    /// Replaces parameter values by name; every parameter must be present
    /// with a matching shape.
    pub fn load_values<'a>(&mut self, mut lookup: impl FnMut(&str) -> Option<(&'a [usize], &'a [f64])>) -> Result<()> {
        for p in &mut self.params {
            let (shape, data) = lookup(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing parameter `{}`", p.name)))?;
            if shape != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "parameter `{}` has shape {shape:?}, expected {:?}",
                    p.name,
                    p.tensor.shape()
                )));
            }
            p.tensor.data_mut().copy_from_slice(data);
        }
        Ok(())
    }
}
