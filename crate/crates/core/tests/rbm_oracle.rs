mod common;

use adbn::rbm::{self, RbmParameters};
use common::{bits, finite_difference_gradient, seeded_rbm, Plain};
use ndarray::{array, Array2};
use proptest::prelude::*;

// Frozen from an independent Python enumeration (W drawn with random.seed(2024)).
const Z_2X2: f64 = 17.768690355315677;
const P_2X1: f64 = 0.23378036126063964;
const P_H1_3X2: f64 = 0.6570104626734987;

#[test]
fn partition_function_frozen_value() {
    let p = RbmParameters::new(
        array![0.1, -0.1],
        array![0.2, 0.0],
        array![[-0.158584, 0.030158], [-0.069235, 0.197147]],
    )
    .unwrap();
    let z = rbm::partition_function(&p).unwrap();
    assert!((z - Z_2X2).abs() < 1e-12 * Z_2X2, "{z}");
    assert!((Plain::from(&p).z() - z).abs() < 1e-12 * z);
}

#[test]
fn joint_probability_frozen_value() {
    let p = RbmParameters::new(array![0.3, -0.2], array![0.15], array![[0.4], [-0.25]]).unwrap();
    let q = rbm::joint_probability(array![1.0, 0.0].view(), array![1.0].view(), &p).unwrap();
    assert!((q - P_2X1).abs() < 1e-12);
}

#[test]
fn hidden_conditional_frozen_value() {
    let p = RbmParameters::new(
        array![0.1, -0.3, 0.2],
        array![-0.1, 0.25],
        array![[0.5, -0.2], [0.3, 0.1], [-0.4, 0.6]],
    )
    .unwrap();
    let h = rbm::hidden_conditional(array![1.0, 0.0, 1.0].view(), &p).unwrap();
    assert!((h[0] - 0.5).abs() < 1e-12);
    assert!((h[1] - P_H1_3X2).abs() < 1e-12);
}

#[test]
fn visible_conditional_matches_enumeration() {
    let p = seeded_rbm(4, 3, 31, 0.8);
    let plain = Plain::from(&p);
    for hb in 0..8 {
        let h = bits(hb, 3);
        let got = rbm::visible_conditional(ndarray::ArrayView1::from(&h[..]), &p).unwrap();
        for (a, b) in got.iter().zip(plain.visible_conditional(&h)) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}

#[test]
fn exact_gradient_vanishes_at_fitted_fixed_point() {
    // gradient ascent of a 1x1 model on p(v=1) = 0.5
    let batch = array![[1.0], [0.0]];
    let mut p = RbmParameters::new(array![0.7], array![-0.4], array![[0.9]]).unwrap();
    for _ in 0..20_000 {
        let g = rbm::exact_loglik_gradient(&p, batch.view()).unwrap();
        if g.norm() < 1e-12 {
            break;
        }
        p = rbm::apply_step(&p, &g, 1.0).unwrap();
    }
    let g = rbm::exact_loglik_gradient(&p, batch.view()).unwrap();
    assert!(g.norm() < 1e-8, "{}", g.norm());
    // the fitted model reproduces the data marginal
    let plain = Plain::from(&p);
    assert!((plain.marginal(&[1.0]) / (plain.marginal(&[1.0]) + plain.marginal(&[0.0])) - 0.5).abs() < 1e-8);
}

#[test]
fn exact_gradient_matches_finite_differences() {
    let p = seeded_rbm(3, 2, 77, 0.6);
    let data: Vec<Vec<f64>> = vec![bits(5, 3), bits(3, 3), bits(5, 3), bits(0, 3)];
    let batch = Array2::from_shape_fn((4, 3), |(r, c)| data[r][c]);
    let g = rbm::exact_loglik_gradient(&p, batch.view()).unwrap();
    let analytic: Vec<f64> = g
        .d_visible_bias
        .iter()
        .chain(&g.d_hidden_bias)
        .chain(g.d_weights.iter())
        .copied()
        .collect();
    let numeric = finite_difference_gradient(&p, &data, 1e-5);
    for (a, n) in analytic.iter().zip(&numeric) {
        assert!((a - n).abs() <= 1e-6 * a.abs().max(n.abs()).max(1.0), "{a} vs {n}");
    }
}

#[test]
fn log_likelihood_matches_enumeration() {
    let p = seeded_rbm(4, 2, 5, 0.5);
    let data: Vec<Vec<f64>> = vec![bits(9, 4), bits(6, 4)];
    let batch = Array2::from_shape_fn((2, 4), |(r, c)| data[r][c]);
    let ll = rbm::log_likelihood(&p, batch.view()).unwrap();
    assert!((ll - Plain::from(&p).log_likelihood(&data)).abs() < 1e-10);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn joint_probability_normalizes(i in 1usize..5, j in 1usize..5, seed in any::<u64>()) {
        let p = seeded_rbm(i, j, seed, 1.0);
        let mut total = 0.0;
        for vb in 0..1usize << i {
            for hb in 0..1usize << j {
                let v = ndarray::Array1::from(bits(vb, i));
                let h = ndarray::Array1::from(bits(hb, j));
                total += rbm::joint_probability(v.view(), h.view(), &p).unwrap();
            }
        }
        prop_assert!((total - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hidden_conditional_matches_enumeration(i in 1usize..6, j in 1usize..6, seed in any::<u64>(), vb in any::<usize>()) {
        let p = seeded_rbm(i, j, seed, 1.0);
        let v = bits(vb % (1 << i), i);
        let got = rbm::hidden_conditional(ndarray::ArrayView1::from(&v[..]), &p).unwrap();
        let want = Plain::from(&p).hidden_conditional(&v);
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-10);
        }
    }

    #[test]
    fn energy_matches_plain_sum(seed in any::<u64>(), vb in 0usize..16, hb in 0usize..8) {
        let p = seeded_rbm(4, 3, seed, 1.0);
        let (v, h) = (bits(vb, 4), bits(hb, 3));
        let e = rbm::energy(ndarray::ArrayView1::from(&v[..]), ndarray::ArrayView1::from(&h[..]), &p).unwrap();
        prop_assert!((e - Plain::from(&p).energy(&v, &h)).abs() < 1e-12);
    }
}
