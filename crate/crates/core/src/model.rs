//! HMFNet: a local branch (HMFM, atom/bond encoders, GAT stack, mean pool)
//! and a global branch (fingerprint MLP, SMILES transformer + MLP), fused by
//! concatenation into a multi-label MLP head.

use std::rc::Rc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::featurize::{MoleculeFeatures, ATOM_FEATURES, BOND_FEATURES, FINGERPRINT_WIDTH};
use crate::hmfm::{Hmfm, HmfmConfig};
use crate::ndiff::{
    sigmoid, EdgeIndex, GatLayer, Linear, Mlp, NdError, ParamStore, Rng, Session, Tensor, TokenBatch,
    TransformerConfig, TransformerEncoder, Var,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("the node branch cannot be disabled")]
    NodeDisabled,
    #[error("neither fingerprint nor token branch is enabled")]
    BothBranchesDisabled,
    #[error("no branch feeds the classifier head")]
    NoBranches,
    #[error("unknown ablation switch {0:?}")]
    UnknownSwitch(String),
    #[error("invalid model configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Nd(#[from] NdError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Switches {
    pub node: bool,
    pub edge: bool,
    pub fingerprint: bool,
    pub token: bool,
    pub hmfm: bool,
    pub cil: bool,
    /// The whole local branch; off means a global-only head.
    pub lmfe: bool,
}

impl Default for Switches {
    fn default() -> Self {
        Self {
            node: true,
            edge: true,
            fingerprint: true,
            token: true,
            hmfm: true,
            cil: true,
            lmfe: true,
        }
    }
}

impl Switches {
    /// Node, edge, HMFM, CIL, fingerprint, token flags.
    const fn table(edge: bool, hmfm: bool, cil: bool, fingerprint: bool, token: bool) -> Self {
        Self {
            node: true,
            edge,
            fingerprint,
            token,
            hmfm,
            cil,
            lmfe: true,
        }
    }

    /// Compact tag such as `N+E+F+T+H+C`.
    pub fn tag(&self) -> String {
        let mut parts = Vec::new();
        if self.lmfe && self.node {
            parts.push("N");
        }
        for (on, t) in [
            (self.lmfe && self.edge, "E"),
            (self.fingerprint, "F"),
            (self.token, "T"),
            (self.lmfe && self.hmfm, "H"),
            (self.cil, "C"),
        ] {
            if on {
                parts.push(t);
            }
        }
        parts.join("+")
    }
}

/// The eight switch patterns of the branch ablation table, top to bottom.
pub const ABLATION_ROWS: [Switches; 8] = [
    Switches::table(false, false, false, false, false),
    Switches::table(true, false, false, false, false),
    Switches::table(true, true, false, false, false),
    Switches::table(true, true, true, false, false),
    Switches::table(true, false, false, true, false),
    Switches::table(true, false, false, true, true),
    Switches::table(true, true, false, true, true),
    Switches::table(true, true, true, true, true),
];

/// Structural ablations: full model, then without HMFM, LMFE and GMFE.
pub const STRUCTURAL_ABLATIONS: [&str; 4] = ["full", "w/o HMFM", "w/o LMFE", "w/o GMFE"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub hidden: usize,
    pub gat_layers: usize,
    pub gat_heads: usize,
    pub mlp_hidden: usize,
    pub embed: usize,
    pub token_heads: usize,
    pub hmfm_sigma: f64,
    /// Filled from the training data when zero.
    pub num_labels: usize,
    /// Filled from the token vocabulary when zero.
    pub vocab_size: usize,
    pub max_len: usize,
    pub switches: Switches,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            hidden: 64,
            gat_layers: 2,
            gat_heads: 4,
            mlp_hidden: 128,
            embed: 64,
            token_heads: 4,
            hmfm_sigma: 1.0,
            num_labels: 0,
            vocab_size: 0,
            max_len: 128,
            switches: Switches::default(),
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<(), ModelError> {
        let s = self.switches;
        if !s.node {
            return Err(ModelError::NodeDisabled);
        }
        if !s.lmfe && !s.fingerprint && !s.token {
            return Err(ModelError::NoBranches);
        }
        if self.num_labels == 0 {
            return Err(ModelError::Invalid("num_labels must be >= 1".into()));
        }
        if self.hidden == 0 || self.gat_heads == 0 || self.hidden % self.gat_heads != 0 {
            return Err(ModelError::Invalid("hidden must be a positive multiple of gat_heads".into()));
        }
        if self.embed == 0 || self.token_heads == 0 || self.embed % self.token_heads != 0 {
            return Err(ModelError::Invalid("embed must be a positive multiple of token_heads".into()));
        }
        if self.mlp_hidden == 0 || self.max_len == 0 {
            return Err(ModelError::Invalid("mlp_hidden and max_len must be positive".into()));
        }
        if s.token && self.vocab_size == 0 {
            return Err(ModelError::Invalid("vocab_size must be set when the token branch is on".into()));
        }
        if !(self.hmfm_sigma > 0.0) {
            return Err(ModelError::Invalid("hmfm_sigma must be > 0".into()));
        }
        Ok(())
    }

    pub fn local_width(&self) -> usize {
        if self.switches.lmfe {
            self.hidden
        } else {
            0
        }
    }

    pub fn global_width(&self) -> usize {
        (self.switches.fingerprint as usize + self.switches.token as usize) * self.embed
    }

    pub fn head_width(&self) -> usize {
        self.local_width() + self.global_width()
    }
}

/// Disables the named components. Accepts flag names (`edge`, `hmfm`, ...),
/// `lmfe`, `gmfe`, and the `w/o X` spelling.
pub fn apply_ablation(config: &ModelConfig, switches: &[&str]) -> Result<ModelConfig, ModelError> {
    let mut c = config.clone();
    for raw in switches {
        let name = raw.trim().to_ascii_lowercase();
        let name = name.strip_prefix("w/o").map(str::trim).unwrap_or(&name);
        let s = &mut c.switches;
        match name {
            "node" => return Err(ModelError::NodeDisabled),
            "edge" => s.edge = false,
            "fingerprint" => s.fingerprint = false,
            "token" => s.token = false,
            "hmfm" => s.hmfm = false,
            "cil" => s.cil = false,
            "lmfe" => s.lmfe = false,
            "gmfe" => {
                s.fingerprint = false;
                s.token = false;
            }
            "" | "full" => {}
            other => return Err(ModelError::UnknownSwitch(other.to_string())),
        }
    }
    Ok(c)
}

/// Several molecules laid end to end.
#[derive(Debug, Clone)]
pub struct GraphBatch {
    pub atoms: Tensor,
    pub bonds: Tensor,
    pub edges: EdgeIndex,
    /// `graphs + 1` row offsets into `atoms`.
    pub node_offsets: Vec<usize>,
    pub tokens: TokenBatch,
    pub fingerprints: Tensor,
    pub y: Option<Tensor>,
}

impl GraphBatch {
    pub fn new(mols: &[&MoleculeFeatures], y: Option<Tensor>) -> Result<Self, ModelError> {
        if mols.is_empty() {
            return Err(ModelError::Nd(NdError::EmptyGraph));
        }
        let n_atoms: usize = mols.iter().map(|m| m.atoms.rows()).sum();
        let n_bonds: usize = mols.iter().map(|m| m.bonds.rows()).sum();
        let mut atoms = Vec::with_capacity(n_atoms * ATOM_FEATURES);
        let mut bonds = Vec::with_capacity(n_bonds * BOND_FEATURES);
        let mut edges = Vec::with_capacity(n_bonds);
        let mut node_offsets = vec![0];
        let mut fps = Vec::with_capacity(mols.len() * FINGERPRINT_WIDTH);
        for m in mols {
            let base = *node_offsets.last().unwrap();
            if m.atoms.rows() == 0 {
                return Err(ModelError::Nd(NdError::EmptySegment(node_offsets.len() - 1)));
            }
            atoms.extend_from_slice(m.atoms.data());
            bonds.extend_from_slice(m.bonds.data());
            edges.extend(m.edges.iter().map(|&(a, b)| (a + base, b + base)));
            node_offsets.push(base + m.atoms.rows());
            fps.extend_from_slice(&m.fingerprint);
        }
        let tokens = TokenBatch::from_sequences(&mols.iter().map(|m| m.tokens.tokens.clone()).collect::<Vec<_>>());
        Ok(Self {
            atoms: Tensor::matrix(n_atoms, ATOM_FEATURES, atoms)?,
            bonds: Tensor::matrix(n_bonds, BOND_FEATURES, bonds)?,
            edges: EdgeIndex::new(n_atoms, &edges)?,
            node_offsets,
            tokens,
            fingerprints: Tensor::matrix(mols.len(), FINGERPRINT_WIDTH, fps)?,
            y,
        })
    }

    pub fn graphs(&self) -> usize {
        self.node_offsets.len() - 1
    }
}

#[derive(Debug, Clone)]
pub struct Prediction {
    pub logits: Tensor,
    pub probabilities: Tensor,
}

#[derive(Debug, Clone, Copy)]
pub struct ForwardVars {
    pub logits: Var,
    pub probs: Var,
    pub local: Option<Var>,
    pub global: Option<Var>,
}

#[derive(Debug, Clone)]
pub struct HmfNet {
    pub config: ModelConfig,
    pub params: ParamStore,
    pub hmfm: Option<Hmfm>,
    pub node_encoder: Option<Linear>,
    pub bond_encoder: Option<Linear>,
    pub gat: Vec<GatLayer>,
    pub fingerprint_mlp: Option<Mlp>,
    pub token_encoder: Option<TransformerEncoder>,
    pub token_mlp: Option<Mlp>,
    pub head: Mlp,
}

impl HmfNet {
    pub fn new(config: ModelConfig, rng: &mut Rng) -> Result<Self, ModelError> {
        config.validate()?;
        let sw = config.switches;
        let mut store = ParamStore::new();
        let (mut hmfm, mut node_encoder, mut bond_encoder, mut gat) = (None, None, None, Vec::new());
        if sw.lmfe {
            let mut node_in = ATOM_FEATURES;
            if sw.hmfm {
                let hc = HmfmConfig {
                    input_dim: ATOM_FEATURES,
                    base_sigma: config.hmfm_sigma,
                };
                let h = Hmfm::new(&mut store, "hmfm", hc, rng)?;
                node_in = h.output_dim();
                hmfm = Some(h);
            }
            node_encoder = Some(Linear::new(&mut store, "node_encoder", node_in, config.hidden, rng));
            if sw.edge {
                bond_encoder = Some(Linear::new(&mut store, "bond_encoder", BOND_FEATURES, config.hidden, rng));
            }
            let head_dim = config.hidden / config.gat_heads;
            for i in 0..config.gat_layers {
                gat.push(GatLayer::new(
                    &mut store,
                    &format!("gat.{i}"),
                    config.hidden,
                    sw.edge.then_some(config.hidden),
                    config.gat_heads,
                    head_dim,
                    rng,
                ));
            }
        }
        let fingerprint_mlp = sw.fingerprint.then(|| {
            Mlp::new(&mut store, "gmfe.fingerprint", FINGERPRINT_WIDTH, config.mlp_hidden, config.embed, rng)
        });
        let (token_encoder, token_mlp) = if sw.token {
            let tc = TransformerConfig {
                vocab_size: config.vocab_size,
                max_len: config.max_len,
                dim: config.embed,
                heads: config.token_heads,
                ffn_hidden: config.mlp_hidden,
            };
            (
                Some(TransformerEncoder::new(&mut store, "gmfe.token_encoder", tc, rng)),
                Some(Mlp::new(&mut store, "gmfe.token", config.embed, config.mlp_hidden, config.embed, rng)),
            )
        } else {
            (None, None)
        };
        let head = Mlp::new(&mut store, "head", config.head_width(), config.mlp_hidden, config.num_labels, rng);
        Ok(Self {
            config,
            params: store,
            hmfm,
            node_encoder,
            bond_encoder,
            gat,
            fingerprint_mlp,
            token_encoder,
            token_mlp,
            head,
        })
    }

    pub fn parameter_count(&self) -> usize {
        self.params.count()
    }

    /// Graph-level local representation, `graphs x hidden`.
    pub fn lmfe_forward(&self, s: &mut Session, batch: &GraphBatch) -> Result<Var, ModelError> {
        let enc = self.node_encoder.as_ref().ok_or(ModelError::NoBranches)?;
        let x = s.tape.constant(batch.atoms.clone());
        let x = match &self.hmfm {
            Some(h) => h.forward(s, x)?,
            None => x,
        };
        let h = enc.forward(s, x)?;
        let mut h = s.tape.relu(h);
        let e = match &self.bond_encoder {
            Some(be) if batch.bonds.rows() > 0 => {
                let b = s.tape.constant(batch.bonds.clone());
                let e = be.forward(s, b)?;
                Some(s.tape.relu(e))
            }
            _ => None,
        };
        for layer in &self.gat {
            let out = layer.forward(s, h, e, &batch.edges)?;
            h = s.tape.relu(out);
        }
        Ok(s.tape.segment_mean(h, Rc::from(batch.node_offsets.clone()))?)
    }

    /// Concatenated global representation, `graphs x (64 per active branch)`.
    pub fn gmfe_forward(&self, s: &mut Session, batch: &GraphBatch) -> Result<Var, ModelError> {
        let mut parts = Vec::new();
        if let Some(mlp) = &self.fingerprint_mlp {
            let g = s.tape.constant(batch.fingerprints.clone());
            parts.push(mlp.forward(s, g)?);
        }
        if let (Some(enc), Some(mlp)) = (&self.token_encoder, &self.token_mlp) {
            let pooled = enc.forward(s, &batch.tokens)?.pooled;
            parts.push(mlp.forward(s, pooled)?);
        }
        match parts.len() {
            0 => Err(ModelError::BothBranchesDisabled),
            1 => Ok(parts[0]),
            _ => Ok(s.tape.concat_cols(&parts)?),
        }
    }

    pub fn fuse_and_classify(&self, s: &mut Session, local: Option<Var>, global: Option<Var>) -> Result<(Var, Var), ModelError> {
        let parts: Vec<Var> = local.into_iter().chain(global).collect();
        let z = match parts.len() {
            0 => return Err(ModelError::NoBranches),
            1 => parts[0],
            _ => s.tape.concat_cols(&parts)?,
        };
        let logits = self.head.forward(s, z)?;
        let probs = s.tape.sigmoid(logits);
        Ok((logits, probs))
    }

    pub fn forward_vars(&self, s: &mut Session, batch: &GraphBatch) -> Result<ForwardVars, ModelError> {
        let local = if self.config.switches.lmfe {
            Some(self.lmfe_forward(s, batch)?)
        } else {
            None
        };
        let global = if self.fingerprint_mlp.is_some() || self.token_encoder.is_some() {
            Some(self.gmfe_forward(s, batch)?)
        } else {
            None
        };
        let (logits, probs) = self.fuse_and_classify(s, local, global)?;
        Ok(ForwardVars {
            logits,
            probs,
            local,
            global,
        })
    }

    pub fn predict(&self, batch: &GraphBatch) -> Result<Prediction, ModelError> {
        let mut s = Session::new(&self.params);
        let out = self.forward_vars(&mut s, batch)?;
        let logits = s.tape.value(out.logits).clone();
        let probabilities = logits.map(sigmoid);
        Ok(Prediction { logits, probabilities })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::Vocab;

    fn feats(smiles: &[&str]) -> Vec<MoleculeFeatures> {
        let v = Vocab::default();
        smiles.iter().map(|s| MoleculeFeatures::from_smiles(s, &v).unwrap()).collect()
    }

    fn config(sw: Switches) -> ModelConfig {
        ModelConfig {
            num_labels: 3,
            vocab_size: Vocab::default().len(),
            switches: sw,
            ..Default::default()
        }
    }

    #[test]
    fn table_rows_are_distinct() {
        let tags: std::collections::HashSet<String> = ABLATION_ROWS.iter().map(Switches::tag).collect();
        assert_eq!(tags.len(), 8);
        assert_eq!(ABLATION_ROWS[0].tag(), "N");
        assert_eq!(ABLATION_ROWS[7].tag(), "N+E+F+T+H+C");
    }

    #[test]
    fn head_widths() {
        let full = config(Switches::default());
        assert_eq!(full.head_width(), 192);
        assert_eq!(config(ABLATION_ROWS[0]).head_width(), 64);
        assert_eq!(config(ABLATION_ROWS[4]).head_width(), 128);
        let gm = apply_ablation(&full, &["w/o LMFE"]).unwrap();
        assert_eq!(gm.head_width(), 128);
    }

    #[test]
    fn ablation_names() {
        let base = config(Switches::default());
        assert_eq!(apply_ablation(&base, &[]).unwrap(), base);
        let h = apply_ablation(&base, &["w/o HMFM"]).unwrap();
        assert!(!h.switches.hmfm && h.switches.edge && h.switches.cil);
        let g = apply_ablation(&base, &["w/o GMFE"]).unwrap();
        assert!(!g.switches.fingerprint && !g.switches.token);
        assert!(matches!(apply_ablation(&base, &["node"]), Err(ModelError::NodeDisabled)));
        assert!(matches!(apply_ablation(&base, &["wings"]), Err(ModelError::UnknownSwitch(_))));
    }

    #[test]
    fn node_encoder_width_follows_hmfm() {
        let mut rng = Rng::seed(0);
        let on = HmfNet::new(config(Switches::default()), &mut rng).unwrap();
        assert_eq!(on.node_encoder.as_ref().unwrap().in_dim, 2 * ATOM_FEATURES);
        let off = HmfNet::new(config(ABLATION_ROWS[1]), &mut rng).unwrap();
        assert_eq!(off.node_encoder.as_ref().unwrap().in_dim, ATOM_FEATURES);
    }

    #[test]
    fn disabling_branches_shrinks_parameters() {
        let mut rng = Rng::seed(0);
        let full = HmfNet::new(config(Switches::default()), &mut rng).unwrap().parameter_count();
        for off in ["edge", "fingerprint", "token", "hmfm", "lmfe"] {
            let c = apply_ablation(&config(Switches::default()), &[off]).unwrap();
            let n = HmfNet::new(c, &mut rng).unwrap().parameter_count();
            assert!(n < full, "{off}");
        }
    }

    #[test]
    fn probabilities_in_unit_interval_and_rows_repeat() {
        let f = feats(&["CCO", "c1ccccc1", "CCO", "C"]);
        let refs: Vec<&MoleculeFeatures> = f.iter().collect();
        let batch = GraphBatch::new(&refs, None).unwrap();
        let net = HmfNet::new(config(Switches::default()), &mut Rng::seed(4)).unwrap();
        let p = net.predict(&batch).unwrap().probabilities;
        assert_eq!(p.dims(), (4, 3));
        assert!(p.data().iter().all(|&v| v > 0.0 && v < 1.0));
        assert_eq!(p.row(0), p.row(2));
    }

    #[test]
    fn batch_matches_single_forwards() {
        let f = feats(&["CC(=O)O", "c1ccncc1", "CCl", "C"]);
        let net = HmfNet::new(config(Switches::default()), &mut Rng::seed(9)).unwrap();
        let refs: Vec<&MoleculeFeatures> = f.iter().collect();
        let all = net.predict(&GraphBatch::new(&refs, None).unwrap()).unwrap().probabilities;
        for (i, m) in f.iter().enumerate() {
            let one = net.predict(&GraphBatch::new(&[m], None).unwrap()).unwrap().probabilities;
            for (a, b) in one.row(0).iter().zip(all.row(i)) {
                assert!((a - b).abs() <= 1e-10);
            }
        }
    }

    #[test]
    fn gmfe_requires_a_branch() {
        let f = feats(&["CC"]);
        let batch = GraphBatch::new(&[&f[0]], None).unwrap();
        let net = HmfNet::new(config(ABLATION_ROWS[0]), &mut Rng::seed(1)).unwrap();
        let mut s = Session::new(&net.params);
        assert!(matches!(net.gmfe_forward(&mut s, &batch), Err(ModelError::BothBranchesDisabled)));
    }
}
