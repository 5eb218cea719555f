use super::{NdError, ParamId, ParamStore, Rng, Session, Tensor, Var};

/// `y = x W + b` with `W: in x out`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl Linear {
    pub fn new(store: &mut ParamStore, name: &str, in_dim: usize, out_dim: usize, rng: &mut Rng) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, out_dim));
        Self {
            weight,
            bias: Some(bias),
            in_dim,
            out_dim,
        }
    }

    pub fn without_bias(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        let weight = store.add_uniform(format!("{name}.weight"), in_dim, out_dim, in_dim, rng);
        Self {
            weight,
            bias: None,
            in_dim,
            out_dim,
        }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, NdError> {
        let w = s.param(self.weight);
        let y = s.tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = s.param(b);
                s.tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

#[derive(Debug, Clone)]
pub struct LayerNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub eps: f64,
}

impl LayerNorm {
    pub const DEFAULT_EPS: f64 = 1e-5;

    pub fn new(store: &mut ParamStore, name: &str, dim: usize) -> Self {
        Self::with_eps(store, name, dim, Self::DEFAULT_EPS)
    }

    pub fn with_eps(store: &mut ParamStore, name: &str, dim: usize, eps: f64) -> Self {
        assert!(eps > 0.0, "layer norm epsilon must be positive");
        let gamma = store.add(format!("{name}.gamma"), Tensor::ones(1, dim));
        let beta = store.add(format!("{name}.beta"), Tensor::zeros(1, dim));
        Self { gamma, beta, eps }
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, NdError> {
        let g = s.param(self.gamma);
        let b = s.param(self.beta);
        s.tape.layer_norm(x, g, b, self.eps)
    }
}

/// Two linear layers with a ReLU between them.
#[derive(Debug, Clone)]
pub struct Mlp {
    pub hidden: Linear,
    pub output: Linear,
}

impl Mlp {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        in_dim: usize,
        hidden: usize,
        out_dim: usize,
        rng: &mut Rng,
    ) -> Self {
        Self {
            hidden: Linear::new(store, &format!("{name}.0"), in_dim, hidden, rng),
            output: Linear::new(store, &format!("{name}.1"), hidden, out_dim, rng),
        }
    }

    pub fn out_dim(&self) -> usize {
        self.output.out_dim
    }

    pub fn forward(&self, s: &mut Session, x: Var) -> Result<Var, NdError> {
        let h = self.hidden.forward(s, x)?;
        let h = s.tape.relu(h);
        self.output.forward(s, h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_shapes_and_zero_bias() {
        let mut store = ParamStore::new();
        let mut rng = Rng::seed(0);
        let lin = Linear::new(&mut store, "l", 3, 5, &mut rng);
        assert_eq!(store.get(lin.weight).dims(), (3, 5));
        assert!(store.get(lin.bias.unwrap()).data().iter().all(|&b| b == 0.0));
        let mut s = Session::new(&store);
        let x = s.tape.constant(Tensor::zeros(2, 3));
        let y = lin.forward(&mut s, x).unwrap();
        assert_eq!(s.tape.value(y).dims(), (2, 5));
    }

    #[test]
    fn layer_norm_defaults() {
        let mut store = ParamStore::new();
        let ln = LayerNorm::new(&mut store, "ln", 4);
        assert_eq!(ln.eps, 1e-5);
        assert_eq!(store.get(ln.gamma).data(), &[1.0; 4]);
        assert_eq!(store.get(ln.beta).data(), &[0.0; 4]);
    }
}
