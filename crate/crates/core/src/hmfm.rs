//! Harmonic modulated feature mapping: learned per-feature importance,
//! learned frequency modulation against fixed base frequencies, and a
//! cosine/sine encoding of the modulated features.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::ndiff::{LayerNorm, Linear, NdError, ParamStore, Rng, Session, Tensor, Var};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HmfmConfig {
    pub input_dim: usize,
    pub base_sigma: f64,
}

impl HmfmConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            base_sigma: 1.0,
        }
    }

    /// Number of base frequencies; equals the input width.
    pub fn frequencies(&self) -> usize {
        self.input_dim
    }
}

/// `b_j = 2 pi sigma j / D` for `j = 0..D`.
pub fn base_frequencies(config: &HmfmConfig) -> Vec<f64> {
    let d = config.frequencies() as f64;
    (0..config.frequencies())
        .map(|j| 2.0 * PI * config.base_sigma * j as f64 / d)
        .collect()
}

#[derive(Debug, Clone, Copy)]
pub struct HmfmActivation {
    pub w_imp: Var,
    pub x_weighted: Var,
    pub f: Var,
    pub m: Var,
    pub x_encoded: Var,
    pub x_final: Var,
}

#[derive(Debug, Clone)]
pub struct Hmfm {
    pub config: HmfmConfig,
    pub importance: Linear,
    pub norm: LayerNorm,
    pub modulation: Linear,
    base: Tensor,
}

impl Hmfm {
    pub fn new(store: &mut ParamStore, name: &str, config: HmfmConfig, rng: &mut Rng) -> Result<Self, NdError> {
        if !(config.base_sigma > 0.0) || config.input_dim == 0 {
            return Err(NdError::ShapeMismatch {
                op: "hmfm_config",
                left: vec![config.input_dim],
                right: vec![config.frequencies()],
            });
        }
        let a = config.input_dim;
        Ok(Self {
            config,
            importance: Linear::new(store, &format!("{name}.importance"), a, a, rng),
            norm: LayerNorm::new(store, &format!("{name}.norm"), a),
            modulation: Linear::new(store, &format!("{name}.modulation"), a, config.frequencies(), rng),
            base: Tensor::row_vector(base_frequencies(&config)),
        })
    }

    pub fn output_dim(&self) -> usize {
        2 * self.config.frequencies()
    }

    fn check(&self, s: &Session, x: Var) -> Result<(), NdError> {
        let cols = s.tape.value(x).cols();
        if cols != self.config.input_dim {
            return Err(NdError::ShapeMismatch {
                op: "hmfm",
                left: s.tape.value(x).shape().to_vec(),
                right: vec![self.config.input_dim],
            });
        }
        Ok(())
    }

    /// Returns `(w_imp, x')`.
    pub fn importance_weights(&self, s: &mut Session, x: Var) -> Result<(Var, Var), NdError> {
        self.check(s, x)?;
        let z = self.importance.forward(s, x)?;
        let z = self.norm.forward(s, z)?;
        let w = s.tape.sigmoid(z);
        let xw = s.tape.mul(x, w)?;
        Ok((w, xw))
    }

    /// Returns `(f, m)`.
    pub fn frequency_modulation(&self, s: &mut Session, x_weighted: Var) -> Result<(Var, Var), NdError> {
        let f = self.modulation.forward(s, x_weighted)?;
        let f = s.tape.sigmoid(f);
        let b = s.tape.constant(self.base.clone());
        let m = s.tape.mul_row(f, b)?;
        Ok((f, m))
    }

    pub fn forward_with_activation(&self, s: &mut Session, x: Var) -> Result<HmfmActivation, NdError> {
        let (w_imp, x_weighted) = self.importance_weights(s, x)?;
        let (f, m) = self.frequency_modulation(s, x_weighted)?;
        let (x_encoded, x_final) = harmonic_encode(s, x_weighted, m)?;
        Ok(HmfmActivation {
            w_imp,
            x_weighted,
            f,
            m,
            x_encoded,
            x_final,
        })
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, NdError> {
        Ok(self.forward_with_activation(s, x)?.x_final)
    }
}

/// Returns `(m * x', [cos | sin])`.
pub fn harmonic_encode(s: &mut Session, x_weighted: Var, m: Var) -> Result<(Var, Var), NdError> {
    let enc = s.tape.mul(m, x_weighted)?;
    let c = s.tape.cos(enc);
    let sn = s.tape.sin(enc);
    let out = s.tape.concat_cols(&[c, sn])?;
    Ok((enc, out))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn zeroed(a: usize) -> (ParamStore, Hmfm) {
        let mut store = ParamStore::new();
        let h = Hmfm::new(&mut store, "hmfm", HmfmConfig::new(a), &mut Rng::seed(1)).unwrap();
        store.zero_all();
        (store, h)
    }

    #[test]
    fn base_frequency_values() {
        let b = base_frequencies(&HmfmConfig::new(2));
        assert_eq!(b, vec![0.0, PI]);
        let b = base_frequencies(&HmfmConfig::new(4));
        assert_eq!(b, vec![0.0, PI / 2.0, PI, 3.0 * PI / 2.0]);
        let b2 = base_frequencies(&HmfmConfig {
            input_dim: 4,
            base_sigma: 2.0,
        });
        for (x, y) in b.iter().zip(&b2) {
            assert_eq!(2.0 * x, *y);
        }
    }

    #[test]
    fn zero_params_hand_evaluation() {
        let (store, h) = zeroed(2);
        let mut s = Session::new(&store);
        let x = s.tape.constant(Tensor::from_rows(&[[1.0, 1.0]]));
        let act = h.forward_with_activation(&mut s, x).unwrap();
        assert_eq!(s.tape.value(act.w_imp).data(), &[0.5, 0.5]);
        assert_eq!(s.tape.value(act.x_weighted).data(), &[0.5, 0.5]);
        assert_eq!(s.tape.value(act.m).data(), &[0.0, PI / 2.0]);
        let out = s.tape.value(act.x_final).data();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        let expect = [1.0, r, 0.0, r];
        for (o, e) in out.iter().zip(expect) {
            assert!((o - e).abs() < 1e-12, "{out:?}");
        }
    }

    #[test]
    fn zero_input_stays_zero() {
        let mut store = ParamStore::new();
        let h = Hmfm::new(&mut store, "hmfm", HmfmConfig::new(5), &mut Rng::seed(3)).unwrap();
        let mut s = Session::new(&store);
        let x = s.tape.constant(Tensor::zeros(3, 5));
        let act = h.forward_with_activation(&mut s, x).unwrap();
        assert!(s.tape.value(act.x_weighted).data().iter().all(|&v| v == 0.0));
        let out = s.tape.value(act.x_final);
        assert_eq!(out.dims(), (3, 10));
    }

    #[test]
    fn rejects_wrong_width() {
        let (store, h) = zeroed(3);
        let mut s = Session::new(&store);
        let x = s.tape.constant(Tensor::zeros(1, 4));
        assert!(matches!(h.forward(&mut s, x), Err(NdError::ShapeMismatch { .. })));
    }
}
