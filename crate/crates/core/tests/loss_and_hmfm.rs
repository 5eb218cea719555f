use hmfnet::cil::{
    class_energy_loss, class_weights, co_occurrence_matrix, energy_targets, label_correlation_loss,
    sample_loss, total_loss, weighted_bce, CilConfig, EnergyMode, LossWeights,
};
use hmfnet::hmfm::{Hmfm, HmfmConfig};
use hmfnet::ndiff::{ParamStore, Rng, Session, Tensor};
use hmfnet::train::RunConfig;

fn random_probs(rng: &mut Rng, n: usize, m: usize) -> Tensor {
    Tensor::matrix(n, m, (0..n * m).map(|_| rng.uniform(0.01, 0.99)).collect()).unwrap()
}

fn random_labels(rng: &mut Rng, n: usize, m: usize) -> Tensor {
    Tensor::matrix(n, m, (0..n * m).map(|_| rng.bernoulli(0.3) as u8 as f64).collect()).unwrap()
}

#[test]
fn weight_clamp_reaches_both_bounds() {
    let col = |pos: usize, neg: usize| {
        let mut v = vec![1.0; pos];
        v.extend(vec![0.0; neg]);
        Tensor::column_vector(v)
    };
    assert_eq!(class_weights(&col(1, 999)).w, vec![10.0]);
    assert_eq!(class_weights(&col(99, 1)).w, vec![0.1]);
    assert_eq!(class_weights(&col(0, 5)).w, vec![10.0]);
    assert_eq!(class_weights(&col(10, 90)).w, vec![9.0]);
}

#[test]
fn energy_targets_hand_example() {
    let y = Tensor::from_rows(&[[1.0, 1.0], [1.0, 0.0]]);
    let t = energy_targets(&y, 0.2);
    assert_eq!(t.m_in, vec![1.2, 1.1]);
    assert_eq!(t.m_out, vec![0.0, 0.1]);
    assert_eq!(co_occurrence_matrix(&y), vec![vec![2, 1], vec![1, 1]]);
}

#[test]
fn literal_positive_hinge_never_fires() {
    let mut rng = Rng::seed(5);
    for _ in 0..50 {
        let p = random_probs(&mut rng, 6, 3);
        let y = Tensor::ones(6, 3);
        for c in [0.0, 0.2, 1.0, 10.0] {
            let t = energy_targets(&y, c);
            assert_eq!(class_energy_loss(&p, &y, &t, EnergyMode::Literal).unwrap(), 0.0);
        }
    }
}

#[test]
fn total_is_weighted_sum_of_components() {
    let mut rng = Rng::seed(9);
    for _ in 0..30 {
        let p = random_probs(&mut rng, 7, 4);
        let y = random_labels(&mut rng, 7, 4);
        let lambda = LossWeights::from_array([rng.uniform(0.0, 2.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0), rng.uniform(0.0, 1.0)]);
        for mode in [EnergyMode::Literal, EnergyMode::Corrected] {
            let cfg = CilConfig {
                lambda,
                mode,
                ..CilConfig::default()
            };
            let w = class_weights(&y);
            let t = energy_targets(&y, cfg.c);
            let b = total_loss(&p, &y, &w, &t, &cfg).unwrap();
            let l = lambda.as_array();
            let sum = l[0] * b.basis + l[1] * b.class + l[2] * b.sample + l[3] * b.col;
            assert!((b.total - sum).abs() <= 1e-12, "{} vs {}", b.total, sum);
            assert_eq!(b.basis, weighted_bce(&p, &y, &w.w).unwrap());
            assert_eq!(b.class, class_energy_loss(&p, &y, &t, mode).unwrap());
            assert_eq!(b.sample, sample_loss(&p, &y, &cfg.sample).unwrap());
            assert_eq!(b.col, label_correlation_loss(&p, &y).unwrap());
        }
    }
}

#[test]
fn correlation_loss_vanishes_on_labels() {
    let mut rng = Rng::seed(3);
    for k in 0..20 {
        let y = random_labels(&mut rng, 3 + k, 5);
        assert_eq!(label_correlation_loss(&y, &y).unwrap(), 0.0);
    }
    let y = Tensor::from_rows(&[[1.0, 0.0]]);
    let p = Tensor::from_rows(&[[0.5, 0.5]]);
    assert!((label_correlation_loss(&p, &y).unwrap() - 0.75).abs() < 1e-15);
}

#[test]
fn defaults_come_from_default_config() {
    let cfg = RunConfig::from_json("{}").unwrap();
    assert_eq!(cfg.cil.c, 0.2);
    assert_eq!(cfg.cil.lambda.as_array(), [1.0, 0.2, 0.1, 0.2]);
    assert_eq!(cfg.cil.mode, EnergyMode::Corrected);
    assert_eq!((cfg.cil.sample.e1, cfg.cil.sample.e2), (0.5, 0.5));
}

fn hmfm_output(a: usize, seed: u64, x: &Tensor, zero: bool) -> (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut store = ParamStore::new();
    let h = Hmfm::new(&mut store, "h", HmfmConfig::new(a), &mut Rng::seed(seed)).unwrap();
    if zero {
        store.zero_all();
    }
    let mut s = Session::new(&store);
    let xv = s.tape.constant(x.clone());
    let act = h.forward_with_activation(&mut s, xv).unwrap();
    let v = |var| s.tape.value(var).data().to_vec();
    (v(act.x_final), v(act.w_imp), v(act.m), v(act.x_weighted))
}

#[test]
fn hmfm_width_range_and_pairing() {
    let mut rng = Rng::seed(11);
    for a in [1, 2, 5, 16] {
        let n = 4;
        let x = Tensor::matrix(n, a, (0..n * a).map(|_| rng.uniform(-5.0, 5.0)).collect()).unwrap();
        let (out, ..) = hmfm_output(a, a as u64, &x, false);
        assert_eq!(out.len(), n * 2 * a);
        assert!(out.iter().all(|v| (-1.0..=1.0).contains(v)));
        for i in 0..n {
            let row = &out[i * 2 * a..(i + 1) * 2 * a];
            for j in 0..a {
                let p = row[j] * row[j] + row[a + j] * row[a + j];
                assert!((p - 1.0).abs() <= 1e-12);
            }
        }
    }
}

#[test]
fn hmfm_zero_parameters_closed_form() {
    let a = 6;
    let x = Tensor::matrix(2, a, (0..2 * a).map(|k| k as f64 * 0.37 - 1.0).collect()).unwrap();
    let (out, w, m, xw) = hmfm_output(a, 4, &x, true);
    assert!(w.iter().all(|&v| v == 0.5));
    for (k, &v) in xw.iter().enumerate() {
        assert_eq!(v, 0.5 * x.data()[k]);
    }
    for i in 0..2 {
        for j in 0..a {
            let b = 2.0 * std::f64::consts::PI * j as f64 / a as f64;
            assert_eq!(m[i * a + j], 0.5 * b);
            let z = 0.5 * b * 0.5 * x.get(i, j);
            assert!((out[i * 2 * a + j] - z.cos()).abs() <= 1e-15);
            assert!((out[i * 2 * a + a + j] - z.sin()).abs() <= 1e-15);
        }
    }
}

#[test]
fn hmfm_two_feature_hand_example() {
    // b = [0, pi], m = [0, pi/2], x' = [0.5, 0.5] -> angles [0, pi/4]
    let (out, ..) = hmfm_output(2, 1, &Tensor::from_rows(&[[1.0, 1.0]]), true);
    let r = std::f64::consts::FRAC_1_SQRT_2;
    for (o, e) in out.iter().zip([1.0, r, 0.0, r]) {
        assert!((o - e).abs() <= 1e-12, "{out:?}");
    }
}
