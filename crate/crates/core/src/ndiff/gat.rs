use std::rc::Rc;

use super::{Linear, NdError, ParamId, ParamStore, Rng, Session, Tensor, Var};

/// Directed message-passing index for a (batched) bond list. Each bond yields
/// two directed edges and every node gets a self-loop; self-loops come last.
#[derive(Debug, Clone)]
pub struct EdgeIndex {
    pub n_nodes: usize,
    pub n_bonds: usize,
    pub src: Rc<[usize]>,
    pub dst: Rc<[usize]>,
    /// Bond index for each of the first `2 * n_bonds` edges.
    pub bond_of_edge: Rc<[usize]>,
}

impl EdgeIndex {
    pub fn new(n_nodes: usize, bonds: &[(usize, usize)]) -> Result<Self, NdError> {
        if n_nodes == 0 {
            return Err(NdError::EmptyGraph);
        }
        let mut src = Vec::with_capacity(2 * bonds.len() + n_nodes);
        let mut dst = Vec::with_capacity(src.capacity());
        let mut bond_of_edge = Vec::with_capacity(2 * bonds.len());
        for (b, &(u, v)) in bonds.iter().enumerate() {
            if u >= n_nodes || v >= n_nodes {
                return Err(NdError::IndexOutOfRange {
                    index: u.max(v),
                    len: n_nodes,
                });
            }
            src.extend([u, v]);
            dst.extend([v, u]);
            bond_of_edge.extend([b, b]);
        }
        for i in 0..n_nodes {
            src.push(i);
            dst.push(i);
        }
        Ok(Self {
            n_nodes,
            n_bonds: bonds.len(),
            src: src.into(),
            dst: dst.into(),
            bond_of_edge: bond_of_edge.into(),
        })
    }

    pub fn n_edges(&self) -> usize {
        self.src.len()
    }
}

/// Multi-head graph attention with bond features in the attention logit:
/// `logit(i <- j) = leaky_relu(a_dst . W h_i + a_src . W h_j + a_edge . W_e e_ij)`.
#[derive(Debug, Clone)]
pub struct GatLayer {
    pub node: Linear,
    pub edge: Option<Linear>,
    /// `head_dim x heads`, one column per head.
    pub att_src: ParamId,
    pub att_dst: ParamId,
    pub att_edge: Option<ParamId>,
    pub heads: usize,
    pub head_dim: usize,
    pub slope: f64,
}

pub struct GatOutput {
    pub out: Var,
    /// Per-head attention coefficients over [`EdgeIndex`] order (`edges x 1`).
    pub attention: Vec<Var>,
}

impl GatLayer {
    pub const NEGATIVE_SLOPE: f64 = 0.2;

    /// `edge_dim = None` builds a layer that ignores bond features.
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        edge_dim: Option<usize>,
        heads: usize,
        head_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let width = heads * head_dim;
        let node = Linear::without_bias(store, &format!("{name}.w"), in_dim, width, rng);
        let edge = edge_dim.map(|d| Linear::without_bias(store, &format!("{name}.w_edge"), d, width, rng));
        let fan = if edge_dim.is_some() { 3 * head_dim } else { 2 * head_dim };
        let att_src = store.add_uniform(format!("{name}.att_src"), head_dim, heads, fan, rng);
        let att_dst = store.add_uniform(format!("{name}.att_dst"), head_dim, heads, fan, rng);
        let att_edge = edge_dim
            .map(|_| store.add_uniform(format!("{name}.att_edge"), head_dim, heads, fan, rng));
        Self {
            node,
            edge,
            att_src,
            att_dst,
            att_edge,
            heads,
            head_dim,
            slope: Self::NEGATIVE_SLOPE,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.heads * self.head_dim
    }

    pub fn forward(
        &self,
        s: &mut Session,
        h: Var,
        edge_feats: Option<Var>,
        index: &EdgeIndex,
    ) -> Result<Var, NdError> {
        Ok(self.forward_with_attention(s, h, edge_feats, index)?.out)
    }

    pub fn forward_with_attention(
        &self,
        s: &mut Session,
        h: Var,
        edge_feats: Option<Var>,
        index: &EdgeIndex,
    ) -> Result<GatOutput, NdError> {
        let (n, _) = s.tape.value(h).dims();
        if n == 0 {
            return Err(NdError::EmptyGraph);
        }
        if n != index.n_nodes {
            return Err(NdError::ShapeMismatch {
                op: "gat_layer",
                left: s.tape.value(h).shape().to_vec(),
                right: vec![index.n_nodes],
            });
        }
        let wh = self.node.forward(s, h)?;
        let bond_proj = match (&self.edge, edge_feats) {
            (Some(lin), Some(e)) if index.n_bonds > 0 => {
                let rows = s.tape.value(e).rows();
                if rows != index.n_bonds {
                    return Err(NdError::ShapeMismatch {
                        op: "gat_layer",
                        left: s.tape.value(e).shape().to_vec(),
                        right: vec![index.n_bonds],
                    });
                }
                Some(lin.forward(s, e)?)
            }
            _ => None,
        };
        let self_loop_zeros = s.tape.constant(Tensor::zeros(index.n_nodes, 1));
        let att_src = s.param(self.att_src);
        let att_dst = s.param(self.att_dst);
        let att_edge = self.att_edge.map(|p| s.param(p));

        let mut heads_out = Vec::with_capacity(self.heads);
        let mut attention = Vec::with_capacity(self.heads);
        for hd in 0..self.heads {
            let (lo, hi) = (hd * self.head_dim, (hd + 1) * self.head_dim);
            let wh_h = s.tape.slice_cols(wh, lo, hi)?;
            let a_src = s.tape.slice_cols(att_src, hd, hd + 1)?;
            let a_dst = s.tape.slice_cols(att_dst, hd, hd + 1)?;
            let score_src = s.tape.matmul(wh_h, a_src)?;
            let score_dst = s.tape.matmul(wh_h, a_dst)?;
            let per_src = s.tape.gather_rows(score_src, index.src.clone())?;
            let per_dst = s.tape.gather_rows(score_dst, index.dst.clone())?;
            let mut logits = s.tape.add(per_src, per_dst)?;
            if let (Some(bp), Some(a_e)) = (bond_proj, att_edge) {
                let bp_h = s.tape.slice_cols(bp, lo, hi)?;
                let a_e = s.tape.slice_cols(a_e, hd, hd + 1)?;
                let score_bond = s.tape.matmul(bp_h, a_e)?;
                let per_edge = s.tape.gather_rows(score_bond, index.bond_of_edge.clone())?;
                let full = s.tape.concat_rows(&[per_edge, self_loop_zeros])?;
                logits = s.tape.add(logits, full)?;
            }
            let logits = s.tape.leaky_relu(logits, self.slope);
            let alpha = s.tape.segment_softmax(logits, index.dst.clone(), index.n_nodes)?;
            let msgs = s.tape.gather_rows(wh_h, index.src.clone())?;
            let weighted = s.tape.mul_col(msgs, alpha)?;
            let agg = s.tape.scatter_add_rows(weighted, index.dst.clone(), index.n_nodes)?;
            heads_out.push(agg);
            attention.push(alpha);
        }
        let out = if heads_out.len() == 1 {
            heads_out[0]
        } else {
            s.tape.concat_cols(&heads_out)?
        };
        Ok(GatOutput { out, attention })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn layer(edge: bool) -> (ParamStore, GatLayer) {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(11);
        let l = GatLayer::new(&mut store, "gat", 3, edge.then_some(2), 2, 4, &mut rng);
        (store, l)
    }

    #[test]
    fn isolated_node_returns_projection() {
        let (store, l) = layer(true);
        let idx = EdgeIndex::new(1, &[]).unwrap();
        let mut s = Session::new(&store);
        let h = s.tape.constant(Tensor::from_rows(&[[0.3, -0.5, 1.2]]));
        let out = l.forward_with_attention(&mut s, h, None, &idx).unwrap();
        let wh = l.node.forward(&mut s, h).unwrap();
        assert_eq!(s.tape.value(out.out), s.tape.value(wh));
        for a in out.attention {
            assert_eq!(s.tape.value(a).data(), &[1.0]);
        }
    }

    #[test]
    fn symmetric_pair_splits_attention_evenly() {
        let (store, l) = layer(true);
        let idx = EdgeIndex::new(2, &[(0, 1)]).unwrap();
        let mut s = Session::new(&store);
        let h = s.tape.constant(Tensor::from_rows(&[[0.3, -0.5, 1.2], [0.3, -0.5, 1.2]]));
        // self-loops see a zero edge vector, so symmetry needs a zero bond vector too
        let e = s.tape.constant(Tensor::from_rows(&[[0.0, 0.0]]));
        let out = l.forward_with_attention(&mut s, h, Some(e), &idx).unwrap();
        for a in out.attention {
            for &w in s.tape.value(a).data() {
                assert!((w - 0.5).abs() < 1e-15);
            }
        }
    }

    #[test]
    fn attention_normalized_per_neighborhood() {
        let (store, l) = layer(true);
        let bonds = [(0, 1), (1, 2), (2, 3), (3, 0), (1, 3)];
        let idx = EdgeIndex::new(4, &bonds).unwrap();
        let mut s = Session::new(&store);
        let mut rng = Rng::seed(5);
        let h = s.tape.constant(Tensor::matrix(4, 3, (0..12).map(|_| rng.uniform(-2.0, 2.0)).collect()).unwrap());
        let e = s.tape.constant(Tensor::matrix(5, 2, (0..10).map(|_| rng.uniform(-1.0, 1.0)).collect()).unwrap());
        let out = l.forward_with_attention(&mut s, h, Some(e), &idx).unwrap();
        assert_eq!(s.tape.value(out.out).dims(), (4, 8));
        for a in out.attention {
            let mut sums = [0.0; 4];
            for (w, &d) in s.tape.value(a).data().iter().zip(idx.dst.iter()) {
                sums[d] += w;
            }
            for sum in sums {
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn empty_graph_rejected() {
        assert!(matches!(EdgeIndex::new(0, &[]), Err(NdError::EmptyGraph)));
    }

    #[test]
    fn edge_free_layer_has_fewer_params() {
        let (with, _) = layer(true);
        let (without, _) = layer(false);
        assert!(without.count() < with.count());
    }
}
