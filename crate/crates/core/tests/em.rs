mod common;

use std::collections::BTreeMap;

use approx::assert_abs_diff_eq;
use mortality_regime::em::*;
use mortality_regime::panel::{IsoWeek, RegionGraph, WeekIndex};
use mortality_regime::regime::*;
use mortality_regime::stats::log_sum_exp;
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::Rng;

struct Toy {
    data: RegimeData,
    params: RegimeParams,
    icar: Icar,
    u: Vec<f64>,
}

fn toy(n_regions: usize, n_ages: usize, n_weeks: usize, seed: u64) -> Toy {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, n_regions, n_ages, n_weeks, 8.0, seed);
    let params = common::toy_params(&data, &spec, seed);
    let icar = Icar::new(&RegionGraph::path(n_regions)).unwrap();
    let u = common::random_u(n_regions, seed);
    Toy { data, params, icar, u }
}

/// Log of the sum over all state paths of region `r`.
fn enumerate_region(data: &RegimeData, params: &RegimeParams, r: usize, u: f64) -> f64 {
    let t = data.n_weeks();
    let mut terms = Vec::new();
    for code in 0..3usize.pow(t as u32) {
        let path: Vec<usize> = (0..t).map(|k| (code / 3usize.pow(k as u32)) % 3).collect();
        let mut v = params.rho[path[0]].ln();
        for k in 0..t {
            v += log_emissions(data, params, r, k).unwrap()[path[k]];
            if k > 0 {
                v += transition_from_logits(logits(data, params, r, k, u))[path[k - 1]][path[k]].ln();
            }
        }
        if v.is_finite() {
            terms.push(v);
        }
    }
    log_sum_exp(&terms)
}

#[test]
fn filter_matches_path_enumeration() {
    let mut rng = common::rng(21);
    for case in 0..40 {
        let (nr, nx, nt) = (rng.random_range(1..=2), rng.random_range(1..=2), rng.random_range(1..=4));
        let t = toy(nr, nx, nt, 100 + case);
        let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
        let oracle: f64 = (0..nr).map(|r| enumerate_region(&t.data, &t.params, r, t.u[r])).sum();
        assert!((filter.loglik() - oracle).abs() < 1e-10, "case {case}: {} vs {oracle}", filter.loglik());
    }
}

fn point_mass(data: &RegimeData, states: &[usize]) -> FilterState {
    let t = data.n_weeks();
    FilterState {
        regions: (0..data.n_regions())
            .map(|r| {
                let mut marginal = vec![[0.0; 3]; t];
                let mut joint = vec![[[0.0; 3]; 3]; t];
                for k in 0..t {
                    marginal[k][states[r * t + k]] = 1.0;
                    if k > 0 {
                        joint[k][states[r * t + k - 1]][states[r * t + k]] = 1.0;
                    }
                }
                RegionFilter { marginal, joint, log_norm: vec![0.0; t] }
            })
            .collect(),
    }
}

#[test]
fn q_on_a_point_mass_equals_the_complete_loglik() {
    let t = toy(3, 2, 6, 4);
    let states = vec![0, 1, 1, 0, 0, 2, 0, 0, 0, 0, 0, 0, 2, 2, 2, 0, 1, 0];
    let tau = 3.0;
    let q = q_value(&t.data, &point_mass(&t.data, &states), &t.params, &t.u, tau, &t.icar).unwrap();
    let direct = complete_loglik(&t.data, &t.params, &states, &t.u, tau, &t.icar, true).unwrap();
    assert_abs_diff_eq!(q.total(), direct, epsilon = 1e-9);
}

#[test]
fn q_matches_path_sampling_average() {
    let t = toy(1, 2, 3, 9);
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let q = q_value(&t.data, &filter, &t.params, &t.u, 1.0, &t.icar).unwrap();
    let target = q.initial + q.emission + q.transition;
    let f = &filter.regions[0];
    let draw = |p: &[f64], rng: &mut rand_chacha::ChaCha8Rng| {
        let x: f64 = rng.random();
        let mut acc = 0.0;
        for (i, v) in p.iter().enumerate() {
            acc += v;
            if x < acc {
                return i;
            }
        }
        p.len() - 1
    };
    let mut rng = common::rng(9);
    let n = 100_000;
    let (mut sum, mut sum2) = (0.0, 0.0);
    for _ in 0..n {
        // each term of Q is an expectation under its own filtered weights
        let s1 = draw(&f.marginal[0], &mut rng);
        let mut v = t.params.rho[s1].ln();
        for k in 0..3 {
            let s = draw(&f.marginal[k], &mut rng);
            v += log_emissions(&t.data, &t.params, 0, k).unwrap()[s];
        }
        for k in 1..3 {
            let flat: Vec<f64> = f.joint[k].iter().flatten().copied().collect();
            let c = draw(&flat, &mut rng);
            v += transition_from_logits(logits(&t.data, &t.params, 0, k, t.u[0]))[c / 3][c % 3].ln();
        }
        sum += v;
        sum2 += v * v;
    }
    let mean = sum / n as f64;
    let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
    assert!((mean - target).abs() < 3.0 * se, "{mean} vs {target} (se {se})");
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-3)
}

#[test]
fn score_matches_finite_differences_of_q() {
    let t = toy(3, 4, 12, 31);
    let tau = 2.0;
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let grad = q_gradient(&t.data, &filter, &t.params, &t.u, tau, &t.icar).unwrap();
    let theta = t.params.theta();
    for j in 0..theta.len() {
        let h = 1e-5;
        let at = |d: f64| {
            let mut th = theta.clone();
            th[j] += d;
            q_value(&t.data, &filter, &t.params.with_theta(&th).unwrap(), &t.u, tau, &t.icar).unwrap().total()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!(rel_err(grad[j], fd) < 1e-5, "θ[{j}]: analytic {} vs fd {fd}", grad[j]);
    }
}

#[test]
fn spatial_hessian_matches_finite_differences() {
    let t = toy(3, 2, 10, 17);
    let tau = 1.5;
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let s = spatial_hessian(&t.data, &filter, &t.params, &t.u, tau, &t.icar);
    let h = 1e-5;
    for j in 0..3 {
        let grad_at = |d: f64| {
            let mut u = t.u.clone();
            u[j] += d;
            spatial_objective(&t.data, &filter, &t.params, &u, tau, &t.icar).1
        };
        let (gp, gm) = (grad_at(h), grad_at(-h));
        for i in 0..3 {
            let fd = -(gp[i] - gm[i]) / (2.0 * h);
            assert!(rel_err(s[(i, j)], fd) < 1e-5, "S[{i},{j}] = {} vs fd {fd}", s[(i, j)]);
        }
    }
}

fn nelder_mead<F: Fn(&[f64]) -> f64>(f: F, x0: Vec<f64>, step: f64) -> Vec<f64> {
    let n = x0.len();
    let mut simplex: Vec<(Vec<f64>, f64)> = (0..=n)
        .map(|i| {
            let mut x = x0.clone();
            if i > 0 {
                x[i - 1] += step;
            }
            let v = f(&x);
            (x, v)
        })
        .collect();
    for _ in 0..20_000 {
        simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
        if (simplex[n].1 - simplex[0].1).abs() < 1e-15 {
            break;
        }
        let centroid: Vec<f64> = (0..n).map(|d| simplex[..n].iter().map(|p| p.0[d]).sum::<f64>() / n as f64).collect();
        let along = |t: f64| -> Vec<f64> { (0..n).map(|d| centroid[d] + t * (simplex[n].0[d] - centroid[d])).collect() };
        let xr = along(-1.0);
        let fr = f(&xr);
        if fr < simplex[0].1 {
            let xe = along(-2.0);
            let fe = f(&xe);
            simplex[n] = if fe < fr { (xe, fe) } else { (xr, fr) };
        } else if fr < simplex[n - 1].1 {
            simplex[n] = (xr, fr);
        } else {
            let xc = along(0.5);
            let fc = f(&xc);
            if fc < simplex[n].1 {
                simplex[n] = (xc, fc);
            } else {
                let best = simplex[0].0.clone();
                for p in simplex.iter_mut().skip(1) {
                    p.0 = p.0.iter().zip(&best).map(|(a, b)| b + 0.5 * (a - b)).collect();
                    p.1 = f(&p.0);
                }
            }
        }
    }
    simplex.sort_by(|a, b| a.1.total_cmp(&b.1));
    simplex.swap_remove(0).0
}

#[test]
fn spatial_mode_matches_a_derivative_free_search() {
    let t = toy(3, 2, 20, 5);
    let tau = 0.7;
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let u_star = update_spatial_mode(&t.data, &filter, &t.params, tau, &t.icar, &[0.0; 3]).unwrap();
    assert!(u_star.iter().sum::<f64>().abs() < 1e-12);
    let (_, grad, _) = spatial_objective(&t.data, &filter, &t.params, &u_star, tau, &t.icar);
    let mean = grad.iter().sum::<f64>() / 3.0;
    assert!(grad.iter().all(|g| (g - mean).abs() < 1e-8), "projected gradient {grad:?}");
    let embed = |v: &[f64]| vec![v[0], v[1], -v[0] - v[1]];
    let best = nelder_mead(|v| -spatial_objective(&t.data, &filter, &t.params, &embed(v), tau, &t.icar).0, vec![0.0, 0.0], 0.5);
    let best = embed(&best);
    for r in 0..3 {
        assert!((best[r] - u_star[r]).abs() < 1e-6, "{best:?} vs {u_star:?}");
    }
}

#[test]
fn strong_prior_pins_the_spatial_mode() {
    let t = toy(4, 2, 15, 6);
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let u = update_spatial_mode(&t.data, &filter, &t.params, 1e6, &t.icar, &t.u).unwrap();
    assert!(u.iter().all(|v| v.abs() < 1e-5), "{u:?}");
}

fn with_marginals(n_weeks: usize, first: &[[f64; 3]]) -> FilterState {
    FilterState {
        regions: first
            .iter()
            .map(|m| RegionFilter {
                marginal: vec![*m; n_weeks],
                joint: vec![[[0.0; 3]; 3]; n_weeks],
                log_norm: vec![0.0; n_weeks],
            })
            .collect(),
    }
}

#[test]
fn rho_update_examples() {
    assert_eq!(m_step_rho(&with_marginals(2, &[[1.0, 0.0, 0.0]; 3])), [1.0, 0.0, 0.0]);
    assert_eq!(m_step_rho(&with_marginals(2, &[[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]])), [0.5, 0.5, 0.0]);
    let mut rng = common::rng(3);
    for _ in 0..1000 {
        let rows: Vec<[f64; 3]> = (0..5)
            .map(|_| {
                let w = [rng.random::<f64>(), rng.random::<f64>(), rng.random::<f64>()];
                let s: f64 = w.iter().sum();
                w.map(|v| v / s)
            })
            .collect();
        let rho = m_step_rho(&with_marginals(1, &rows));
        assert!((rho.iter().sum::<f64>() - 1.0).abs() < 1e-14);
    }
}

fn intercept_data(seed: u64) -> RegimeData {
    let mut spec = common::toy_spec();
    spec.state1 = vec!["ONE".to_string()];
    let base = common::toy_data(&spec, 2, 4, 8, 12.0, seed);
    let mut columns = BTreeMap::new();
    for name in spec.columns() {
        let col = if name == "ONE" { vec![1.0; 16] } else { vec![0.3; 16] };
        columns.insert(name, col);
    }
    let deaths = base.deaths_u32();
    RegimeData::from_columns(
        &spec,
        base.regions.clone(),
        base.age_groups.clone(),
        base.weeks.clone(),
        &deaths,
        base.b_hat_slice().to_vec(),
        &columns,
    )
    .unwrap()
}

#[test]
fn alpha_step_with_unit_weights_and_intercept() {
    let data = intercept_data(12);
    let params = RegimeParams::initial(&ParamLayout::new(&common::toy_spec(), data.n_groups()), true);
    let params = {
        let mut p = params;
        p.alpha1 = vec![vec![0.0]; data.n_groups()];
        p
    };
    let alpha = m_step_alpha(&data, &with_marginals(8, &[[0.0, 1.0, 0.0]; 2]), &params, 1).unwrap().unwrap();
    for g in 0..data.n_groups() {
        let (mut d, mut b) = (0.0, 0.0);
        for r in 0..2 {
            for x in (0..4).filter(|&x| data.group_of_age[x] == g) {
                for k in 0..8 {
                    d += data.deaths(r, x, k);
                    b += data.b_hat(r, x, k);
                }
            }
        }
        assert_abs_diff_eq!(alpha[g][0], (d / b).ln(), epsilon = 1e-9);
    }
    assert!(m_step_alpha(&data, &with_marginals(8, &[[1.0, 0.0, 0.0]; 2]), &params, 1).unwrap().is_none());
}

#[test]
fn beta_step_is_stationary_and_the_determinant_matters() {
    let t = toy(3, 2, 25, 44);
    let tau = 1.0;
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let step = m_step_beta(&t.data, &filter, &t.params, &t.u, tau, &t.icar).unwrap();
    let (_, grad) = beta_objective(&t.data, &filter, &step.params, &t.u, tau, &t.icar).unwrap();
    assert!(grad.iter().all(|g| g.abs() < 1e-6), "{grad:?}");
    let beta = beta_vector(&step.params);
    let log_det = |b: &[f64]| q_value(&t.data, &filter, &with_beta(&step.params, b), &t.u, tau, &t.icar).unwrap().log_det;
    let slope = (0..beta.len())
        .map(|j| {
            let (mut p, mut m) = (beta.clone(), beta.clone());
            p[j] += 1e-5;
            m[j] -= 1e-5;
            ((log_det(&p) - log_det(&m)) / 2e-5).abs()
        })
        .fold(0.0, f64::max);
    // the transition part alone is not stationary here
    assert!(slope > 1e-4, "{slope}");
}

#[test]
fn infinite_epsilon_runs_one_iteration() {
    let t = toy(2, 2, 20, 8);
    let init = RegimeParams::initial(&t.params.layout(), true);
    let fit = fit_em(&t.data, &t.icar, 1.0, &init, None, EmOptions { epsilon: f64::INFINITY, max_iter: 200 }).unwrap();
    assert_eq!(fit.trace.n_steps(), 1);
    assert!(fit.trace.converged);
}

#[test]
fn quiet_data_stays_in_the_baseline_state() {
    let spec = common::toy_spec();
    let mut rng = common::rng(77);
    let (nr, nx, nt) = (3, 2, 60);
    let mut columns = BTreeMap::new();
    for name in spec.columns() {
        columns.insert(name, vec![0.0; nr * nt]);
    }
    let b_hat: Vec<f64> = (0..nr * nx * nt).map(|_| 20.0).collect();
    let deaths: Vec<u32> = b_hat.iter().map(|&b| common::poisson(&mut rng, b)).collect();
    let weeks = WeekIndex::from_start(IsoWeek { year: 2020, week: 1 }, nt);
    let regions = (0..nr).map(|r| format!("R{r}")).collect();
    let ages = (0..nx).map(|x| format!("A{x}")).collect();
    let data = RegimeData::from_columns(&spec, regions, ages, weeks, &deaths, b_hat, &columns).unwrap();
    let icar = Icar::new(&RegionGraph::path(nr)).unwrap();
    let mut init = RegimeParams::initial(&ParamLayout::new(&spec, data.n_groups()), true);
    init.beta01[0] = -12.0;
    init.beta02[0] = -12.0;
    let fit = fit_em(&data, &icar, 10.0, &init, None, EmOptions::default()).unwrap();
    for a in fit.params.alpha1.iter().chain(&fit.params.alpha2).flatten() {
        assert!(a.abs() < 1e-6, "{a}");
    }
    for f in &fit.filter.regions {
        // identical emissions: the most probable state is what matters
        for m in &f.marginal {
            assert!(m[0] > m[1] && m[0] > m[2], "{m:?}");
        }
    }
}

#[test]
fn synthetic_fit_ascends_within_each_iteration() {
    let spec = mortality_regime::synthetic::planted_spec();
    let cfg = mortality_regime::synthetic::SyntheticConfig { n_weeks: 150, ..Default::default() };
    let panel = mortality_regime::synthetic::synthetic_panel(&cfg, &spec, None, &mut common::rng(2)).unwrap();
    let init = RegimeParams::initial(&panel.params.layout(), true);
    let fit = fit_em(&panel.data, &panel.icar, panel.tau, &init, None, EmOptions::default()).unwrap();
    let it = &fit.trace.iterations;
    for w in it.windows(2) {
        let gain = w[1].q_after_m.unwrap() - w[0].q_value;
        assert!(gain > -1e-6, "iteration {}: M-step gain {gain}", w[1].iteration);
    }
    assert!(fit.trace.objective().last().unwrap() > &it[0].q_value);
    assert!(fit.profile_loglik.is_finite());
}

#[test]
fn profile_tau_single_point_and_ties() {
    let t = toy(3, 2, 15, 19);
    let init = RegimeParams::initial(&t.params.layout(), true);
    let opts = EmOptions { epsilon: 1e-4, max_iter: 50 };
    let single = profile_tau(&t.data, &t.icar, &[5.0], &init, opts).unwrap();
    assert_eq!(single.tau, 5.0);
    assert_eq!(single.best().tau, 5.0);
    let twice = profile_tau(&t.data, &t.icar, &[7.0, 2.0, 7.0], &init, opts).unwrap();
    assert_eq!(twice.curve.len(), 3);
    let best = twice.curve.iter().map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let smallest = twice.curve.iter().filter(|c| c.1 == best).map(|c| c.0).fold(f64::INFINITY, f64::min);
    assert_eq!(twice.tau, smallest);
    assert!(profile_tau(&t.data, &t.icar, &[], &init, opts).is_err());
}

#[test]
fn regime_fit_round_trip_and_tamper_check() {
    let spec = common::toy_spec();
    let t = toy(2, 2, 10, 23);
    let init = RegimeParams::initial(&t.params.layout(), true);
    let fit = fit_em(&t.data, &t.icar, 1.0, &init, None, EmOptions { epsilon: 1e-3, max_iter: 20 }).unwrap();
    let frame = mortality_regime::features::FeatureFrame::new(t.data.regions.clone(), t.data.weeks.clone());
    let standardizer = mortality_regime::features::Standardizer::fit(&frame, &[]).unwrap();
    let saved = RegimeFit::new(&spec, &t.data, &fit, vec![(1.0, fit.profile_loglik)], standardizer);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("fit.json");
    saved.save(&path).unwrap();
    assert_eq!(RegimeFit::load(&path).unwrap(), saved);
    let text = std::fs::read_to_string(&path).unwrap().replacen("\"Z1\"", "\"Z9\"", 1);
    std::fs::write(&path, text).unwrap();
    assert!(RegimeFit::load(&path).is_err());
}

#[test]
fn tau_must_be_positive() {
    let t = toy(2, 1, 5, 1);
    let init = RegimeParams::initial(&t.params.layout(), true);
    assert!(fit_em(&t.data, &t.icar, 0.0, &init, None, EmOptions::default()).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn filter_probabilities_are_normalized(seed in 0u64..10_000) {
        let t = toy(2, 2, 6, seed);
        let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
        for f in &filter.regions {
            for k in 0..6 {
                prop_assert!((f.marginal[k].iter().sum::<f64>() - 1.0).abs() < 1e-12);
                if k > 0 {
                    let total: f64 = f.joint[k].iter().flatten().sum();
                    prop_assert!((total - 1.0).abs() < 1e-12);
                    for j in 0..3 {
                        let m: f64 = (0..3).map(|i| f.joint[k][i][j]).sum();
                        prop_assert!((m - f.marginal[k][j]).abs() < 1e-12);
                    }
                    prop_assert_eq!(f.joint[k][1][2], 0.0);
                    prop_assert_eq!(f.joint[k][2][1], 0.0);
                }
            }
        }
    }

    #[test]
    fn q_is_finite_and_term_monotone(seed in 0u64..10_000) {
        let t = toy(2, 2, 5, seed);
        let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
        let q = q_value(&t.data, &filter, &t.params, &t.u, 1.0, &t.icar).unwrap();
        prop_assert!(q.total().is_finite());
        let hess: DMatrix<f64> = spatial_hessian(&t.data, &filter, &t.params, &t.u, 1.0, &t.icar);
        prop_assert!(hess.symmetric_eigenvalues().iter().all(|&v| v > -1e-10));
    }
}
