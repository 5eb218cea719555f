use std::rc::Rc;

use super::{LayerNorm, Linear, Mlp, NdError, ParamId, ParamStore, Rng, Session, Var};

/// Token ids of several sequences laid end to end.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenBatch {
    pub ids: Vec<usize>,
    /// `sequences + 1` offsets into `ids`.
    pub offsets: Vec<usize>,
}

impl TokenBatch {
    pub fn from_sequences<S: AsRef<[usize]>>(seqs: &[S]) -> Self {
        let mut ids = Vec::new();
        let mut offsets = vec![0];
        for s in seqs {
            ids.extend_from_slice(s.as_ref());
            offsets.push(ids.len());
        }
        Self { ids, offsets }
    }

    pub fn len(&self) -> usize {
        self.offsets.len() - 1
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformerConfig {
    pub vocab_size: usize,
    pub max_len: usize,
    pub dim: usize,
    pub heads: usize,
    pub ffn_hidden: usize,
}

/// Token + learned positional embedding, one post-norm self-attention block,
/// a two-layer feed-forward block, and mean pooling per sequence.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    pub config: TransformerConfig,
    pub token_embed: ParamId,
    pub pos_embed: ParamId,
    pub query: Linear,
    pub key: Linear,
    pub value: Linear,
    pub proj: Linear,
    pub norm1: LayerNorm,
    pub ffn: Mlp,
    pub norm2: LayerNorm,
}

pub struct EncodeOutput {
    /// `sequences x dim`.
    pub pooled: Var,
    /// Block output per token before pooling.
    pub tokens: Var,
    /// Attention matrices in (sequence, head) order.
    pub attention: Vec<Var>,
    /// Ids at or above the vocabulary size that were replaced by UNK.
    pub unk_substitutions: usize,
}

pub const UNK_ID: usize = 0;

impl TransformerEncoder {
    pub fn new(store: &mut ParamStore, name: &str, config: TransformerConfig, rng: &mut Rng) -> Self {
        assert!(config.dim % config.heads == 0, "dim must divide into heads");
        let d = config.dim;
        let token_embed = store.add_uniform(format!("{name}.token_embed"), config.vocab_size, d, 1, rng);
        let pos_embed = store.add_uniform(format!("{name}.pos_embed"), config.max_len, d, 1, rng);
        Self {
            config,
            token_embed,
            pos_embed,
            query: Linear::new(store, &format!("{name}.query"), d, d, rng),
            key: Linear::new(store, &format!("{name}.key"), d, d, rng),
            value: Linear::new(store, &format!("{name}.value"), d, d, rng),
            proj: Linear::new(store, &format!("{name}.proj"), d, d, rng),
            norm1: LayerNorm::new(store, &format!("{name}.norm1"), d),
            ffn: Mlp::new(store, &format!("{name}.ffn"), d, config.ffn_hidden, d, rng),
            norm2: LayerNorm::new(store, &format!("{name}.norm2"), d),
        }
    }

    pub fn forward(&self, s: &mut Session, batch: &TokenBatch) -> Result<EncodeOutput, NdError> {
        let cfg = self.config;
        let mut unk = 0;
        let ids: Vec<usize> = batch
            .ids
            .iter()
            .map(|&t| {
                if t >= cfg.vocab_size {
                    unk += 1;
                    UNK_ID
                } else {
                    t
                }
            })
            .collect();
        let mut positions = Vec::with_capacity(ids.len());
        for w in batch.offsets.windows(2) {
            let len = w[1] - w[0];
            if len == 0 {
                return Err(NdError::EmptySegment(positions.len()));
            }
            if len > cfg.max_len {
                return Err(NdError::IndexOutOfRange {
                    index: len,
                    len: cfg.max_len,
                });
            }
            positions.extend(0..len);
        }
        let tok_table = s.param(self.token_embed);
        let pos_table = s.param(self.pos_embed);
        let tok = s.tape.gather_rows(tok_table, Rc::from(ids))?;
        let pos = s.tape.gather_rows(pos_table, Rc::from(positions))?;
        let x = s.tape.add(tok, pos)?;

        let q = self.query.forward(s, x)?;
        let k = self.key.forward(s, x)?;
        let v = self.value.forward(s, x)?;
        let head_dim = cfg.dim / cfg.heads;
        let scale = 1.0 / (head_dim as f64).sqrt();
        let mut seq_outputs = Vec::with_capacity(batch.len());
        let mut attention = Vec::with_capacity(batch.len() * cfg.heads);
        for w in batch.offsets.windows(2) {
            let (lo, hi) = (w[0], w[1]);
            let qs = s.tape.slice_rows(q, lo, hi)?;
            let ks = s.tape.slice_rows(k, lo, hi)?;
            let vs = s.tape.slice_rows(v, lo, hi)?;
            let mut per_head = Vec::with_capacity(cfg.heads);
            for h in 0..cfg.heads {
                let (c0, c1) = (h * head_dim, (h + 1) * head_dim);
                let qh = s.tape.slice_cols(qs, c0, c1)?;
                let kh = s.tape.slice_cols(ks, c0, c1)?;
                let vh = s.tape.slice_cols(vs, c0, c1)?;
                let kt = s.tape.transpose(kh);
                let scores = s.tape.matmul(qh, kt)?;
                let scores = s.tape.scale(scores, scale);
                let attn = s.tape.softmax_rows(scores);
                attention.push(attn);
                per_head.push(s.tape.matmul(attn, vh)?);
            }
            seq_outputs.push(s.tape.concat_cols(&per_head)?);
        }
        let ctx = s.tape.concat_rows(&seq_outputs)?;
        let attn_out = self.proj.forward(s, ctx)?;
        let res1 = s.tape.add(x, attn_out)?;
        let h1 = self.norm1.forward(s, res1)?;
        let ff = self.ffn.forward(s, h1)?;
        let res2 = s.tape.add(h1, ff)?;
        let h2 = self.norm2.forward(s, res2)?;
        let pooled = s.tape.segment_mean(h2, Rc::from(batch.offsets.clone()))?;
        Ok(EncodeOutput {
            pooled,
            tokens: h2,
            attention,
            unk_substitutions: unk,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn encoder() -> (ParamStore, TransformerEncoder) {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(21);
        let cfg = TransformerConfig {
            vocab_size: 10,
            max_len: 8,
            dim: 8,
            heads: 4,
            ffn_hidden: 16,
        };
        let enc = TransformerEncoder::new(&mut store, "tok", cfg, &mut rng);
        (store, enc)
    }

    #[test]
    fn single_token_pool_equals_block_output() {
        let (store, enc) = encoder();
        let mut s = Session::new(&store);
        let out = enc.forward(&mut s, &TokenBatch::from_sequences(&[vec![3]])).unwrap();
        assert_eq!(s.tape.value(out.pooled), s.tape.value(out.tokens));
    }

    #[test]
    fn attention_rows_sum_to_one() {
        let (store, enc) = encoder();
        let mut s = Session::new(&store);
        let batch = TokenBatch::from_sequences(&[vec![1, 2, 3, 4], vec![5, 6]]);
        let out = enc.forward(&mut s, &batch).unwrap();
        assert_eq!(out.attention.len(), 8);
        for a in out.attention {
            let t = s.tape.value(a);
            for r in 0..t.rows() {
                assert!((t.row(r).iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn swapping_tokens_changes_output() {
        let (store, enc) = encoder();
        let mut s = Session::new(&store);
        let a = enc.forward(&mut s, &TokenBatch::from_sequences(&[vec![1, 2, 3]])).unwrap();
        let b = enc.forward(&mut s, &TokenBatch::from_sequences(&[vec![2, 1, 3]])).unwrap();
        let (va, vb) = (s.tape.value(a.pooled), s.tape.value(b.pooled));
        let diff: f64 = va.data().iter().zip(vb.data()).map(|(x, y)| (x - y).abs()).sum();
        assert!(diff > 1e-6, "positional embedding had no effect");
    }

    #[test]
    fn out_of_vocab_ids_become_unk() {
        let (store, enc) = encoder();
        let mut s = Session::new(&store);
        let a = enc.forward(&mut s, &TokenBatch::from_sequences(&[vec![UNK_ID, 4]])).unwrap();
        let b = enc.forward(&mut s, &TokenBatch::from_sequences(&[vec![99, 4]])).unwrap();
        assert_eq!(b.unk_substitutions, 1);
        assert_eq!(a.unk_substitutions, 0);
        assert_eq!(s.tape.value(a.pooled), s.tape.value(b.pooled));
    }
}
