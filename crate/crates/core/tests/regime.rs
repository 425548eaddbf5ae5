mod common;

use approx::assert_abs_diff_eq;
use mortality_regime::panel::RegionGraph;
use mortality_regime::regime::*;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;
use statrs::distribution::{Discrete, Poisson};

fn softmax_row(logits: &[f64]) -> Vec<f64> {
    let m = logits.iter().cloned().fold(0.0f64, f64::max);
    let denom = (-m).exp() + logits.iter().map(|l| (l - m).exp()).sum::<f64>();
    std::iter::once((-m).exp() / denom).chain(logits.iter().map(|l| (l - m).exp() / denom)).collect()
}

fn check_stochastic(p: &[[f64; 3]; 3]) {
    for (i, row) in p.iter().enumerate() {
        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-12, "row {i} = {row:?}");
        for (j, &v) in row.iter().enumerate() {
            assert!((0.0..=1.0).contains(&v));
            if is_forbidden(i, j) {
                assert_eq!(v, 0.0);
            }
        }
    }
}

#[test]
fn transition_rows_stay_stochastic_over_random_draws() {
    let mut rng = common::rng(11);
    for draw in 0..10_000 {
        let scale = if draw % 10 == 0 { 50.0 } else { 3.0 };
        let z: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-scale..scale)).collect()).collect();
        let beta: Vec<Vec<f64>> = (0..4).map(|_| (0..3).map(|_| rng.random_range(-scale..scale)).collect()).collect();
        let u = rng.random_range(-scale..scale);
        let p = transition_matrix(
            [&z[0], &z[1], &z[2], &z[3]],
            [&beta[0], &beta[1], &beta[2], &beta[3]],
            u,
        );
        check_stochastic(&p);
    }
}

#[test]
fn transition_rows_match_a_direct_softmax() {
    let p = transition_from_logits([0.3, -1.2, 0.8, -0.4]);
    let row0 = softmax_row(&[0.3, -1.2]);
    assert_abs_diff_eq!(p[0][0], row0[0], epsilon = 1e-15);
    assert_abs_diff_eq!(p[0][1], row0[1], epsilon = 1e-15);
    assert_abs_diff_eq!(p[0][2], row0[2], epsilon = 1e-15);
    assert_abs_diff_eq!(p[1][1], 1.0 / (1.0 + (-0.8f64).exp()), epsilon = 1e-15);
    assert_abs_diff_eq!(p[2][2], 1.0 / (1.0 + 0.4f64.exp()), epsilon = 1e-15);
}

#[test]
fn emissions_match_poisson_log_pmf() {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, 2, 4, 5, 20.0, 3);
    let params = common::toy_params(&data, &spec, 3);
    for r in 0..2 {
        for k in 0..5 {
            let e = log_emissions(&data, &params, r, k).unwrap();
            for s in 0..3 {
                let mut total = 0.0;
                for x in 0..4 {
                    let g = data.group_of_age[x];
                    let b = data.b_hat(r, x, k);
                    let mean = if s == 0 {
                        b
                    } else {
                        let z = data.state_z[s - 1].row(r, k);
                        let a = &params.alpha(s)[g];
                        b * z.iter().zip(a).map(|(z, a)| z * a).sum::<f64>().exp()
                    };
                    total += Poisson::new(mean).unwrap().ln_pmf(data.deaths(r, x, k) as u64);
                }
                assert_abs_diff_eq!(e[s], total, epsilon = 1e-9);
            }
        }
    }
}

#[test]
fn two_week_complete_loglik_by_hand() {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, 1, 2, 2, 10.0, 5);
    let params = common::toy_params(&data, &spec, 5);
    let u = [0.0];
    let states = [0usize, 1];
    let mut hand = params.rho[0].ln();
    for (k, &s) in states.iter().enumerate() {
        for x in 0..2 {
            let b = data.b_hat(0, x, k);
            let mean = if s == 0 {
                b
            } else {
                let z = data.state_z[s - 1].row(0, k);
                b * z.iter().zip(&params.alpha(s)[data.group_of_age[x]]).map(|(z, a)| z * a).sum::<f64>().exp()
            };
            hand += Poisson::new(mean).unwrap().ln_pmf(data.deaths(0, x, k) as u64);
        }
    }
    let eta = |tr: Transition| -> f64 {
        let z = data.trans_z[tr.index()].row(0, 1);
        z.iter().zip(params.beta(tr)).map(|(z, b)| z * b).sum::<f64>()
    };
    hand += softmax_row(&[eta(Transition::T01), eta(Transition::T02)])[1].ln();
    let got = complete_loglik(&data, &params, &states, &u, 1.0, &Icar::new(&RegionGraph::path(1)).unwrap(), false).unwrap();
    assert_abs_diff_eq!(got, hand, epsilon = 1e-10);
}

fn helmert(n: usize) -> DMatrix<f64> {
    let mut h = DMatrix::zeros(n, n - 1);
    for j in 1..n {
        let norm = ((j * (j + 1)) as f64).sqrt();
        for i in 0..j {
            h[(i, j - 1)] = 1.0 / norm;
        }
        h[(j, j - 1)] = -(j as f64) / norm;
    }
    h
}

#[test]
fn laplace_terms_use_the_sum_to_zero_determinant() {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, 3, 2, 6, 15.0, 8);
    let params = common::toy_params(&data, &spec, 8);
    let graph = RegionGraph::path(3);
    let icar = Icar::new(&graph).unwrap();
    let u = common::random_u(3, 8);
    let states: Vec<usize> = vec![0, 0, 1, 1, 0, 0, 0, 2, 2, 0, 0, 0, 0, 0, 0, 1, 0, 0];
    let tau = 2.5;
    let without = complete_loglik(&data, &params, &states, &u, tau, &icar, false).unwrap();
    let with = complete_loglik(&data, &params, &states, &u, tau, &icar, true).unwrap();
    let h = path_curvature(&data, &params, &states, &u).unwrap();
    let m = spatial_precision(&icar, tau, &h);
    let b = helmert(3);
    let logdet = (b.transpose() * &m * &b).determinant().ln();
    let expected = icar.logdensity(&u, tau) + 2.0 / 2.0 * (2.0 * std::f64::consts::PI).ln() - 0.5 * logdet;
    assert_abs_diff_eq!(with - without, expected, epsilon = 1e-10);
}

#[test]
fn forbidden_paths_are_rejected() {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, 1, 2, 3, 10.0, 1);
    let params = common::toy_params(&data, &spec, 1);
    let icar = Icar::new(&RegionGraph::path(1)).unwrap();
    let err = complete_loglik(&data, &params, &[0, 1, 2], &[0.0], 1.0, &icar, false).unwrap_err();
    assert!(err.to_string().contains("forbids"), "{err}");
    assert!(complete_loglik(&data, &params, &[0, 2, 0], &[0.0], 1.0, &icar, false).is_ok());
}

#[test]
fn baseline_only_spec_pins_the_chain() {
    let spec = RegimeSpec::baseline_only();
    let data = common::toy_data(&spec, 1, 2, 3, 10.0, 2);
    let layout = ParamLayout::new(&spec, data.n_groups());
    let params = RegimeParams::initial(&layout, false);
    let e = log_emissions(&data, &params, 0, 1).unwrap();
    assert!(e[0].is_finite());
    assert_eq!(e[1], f64::NEG_INFINITY);
    assert_eq!(e[2], f64::NEG_INFINITY);
    let p = transition_from_logits(logits(&data, &params, 0, 1, 0.0));
    assert_eq!(p[0], [1.0, 0.0, 0.0]);
}

proptest! {
    #[test]
    fn rows_stochastic_for_any_logits(l in prop::array::uniform4(-100.0f64..100.0)) {
        check_stochastic(&transition_from_logits(l.map(|v| if clamped(v) { v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP) } else { v })));
    }

    #[test]
    fn icar_density_ignores_constant_shifts(seed in 0u64..1000, shift in -5.0f64..5.0, tau in 0.01f64..100.0) {
        let icar = Icar::new(&RegionGraph::path(5)).unwrap();
        let u = common::random_u(5, seed);
        let shifted: Vec<f64> = u.iter().map(|v| v + shift).collect();
        prop_assert!((icar.logdensity(&u, tau) - icar.logdensity(&shifted, tau)).abs() < 1e-9);
    }

    #[test]
    fn row_sensitivity_is_a_probability(l in prop::array::uniform4(-40.0f64..40.0)) {
        let l = l.map(|v| v.clamp(-LOGIT_CLAMP, LOGIT_CLAMP));
        let p = transition_from_logits(l);
        for m in row_sensitivity(l, &p) {
            prop_assert!((0.0..=1.0).contains(&m));
        }
    }
}
