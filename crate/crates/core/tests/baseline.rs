mod common;

use mortality_regime::baseline::{
    baseline_gradient, baseline_objective, design_matrix, fit_baseline, penalty_value, predict_baseline, ubre_select,
    BaselineFit, LambdaGrid,
};
use mortality_regime::panel::{IsoWeek, RegionGraph, WeekIndex};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::Rng;

fn weeks() -> WeekIndex {
    WeekIndex::build((2015, 1), (2019, 52)).unwrap()
}

/// Textbook IRLS on one region: working response z = η + (y − μ)/μ.
fn irls_oracle(x: &DMatrix<f64>, y: &[f64], offset: &[f64]) -> DVector<f64> {
    let n = y.len();
    let mut beta = DVector::zeros(x.ncols());
    let ybar = y.iter().sum::<f64>() / offset.iter().map(|o| o.exp()).sum::<f64>();
    beta[0] = ybar.ln();
    for _ in 0..100 {
        let eta = x * &beta;
        let mut xtwx = DMatrix::zeros(x.ncols(), x.ncols());
        let mut xtwz = DVector::zeros(x.ncols());
        for i in 0..n {
            let mu = (eta[i] + offset[i]).exp();
            let z = eta[i] + (y[i] - mu) / mu;
            let row = x.row(i).transpose();
            xtwx += &row * row.transpose() * mu;
            xtwz += &row * (mu * z);
        }
        let next = xtwx.lu().solve(&xtwz).unwrap();
        let done = (&next - &beta).amax() < 1e-13;
        beta = next;
        if done {
            break;
        }
    }
    beta
}

#[test]
fn zero_penalty_reproduces_per_region_mle() {
    let graph = RegionGraph::path(4);
    let w = weeks();
    let panel = common::serfling_panel(&graph, 2, &w, &common::typical_gamma(4, 2, 0.3), 4000.0, 11);
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::fixed([0.0; 6])).unwrap();
    let design = design_matrix(&w, w.first());
    for r in 0..4 {
        for x in 0..2 {
            let y: Vec<f64> = (0..w.len()).map(|k| f64::from(panel.deaths(r, x, k))).collect();
            let off: Vec<f64> = (0..w.len()).map(|k| panel.exposure(r, x, k).ln()).collect();
            let oracle = irls_oracle(&design, &y, &off);
            for p in 0..6 {
                let got = fit.gamma(r, x, p);
                assert!(
                    (got - oracle[p]).abs() < 1e-6 * oracle[p].abs().max(1.0),
                    "r={r} x={x} p={p}: {got} vs {}",
                    oracle[p]
                );
            }
        }
    }
}

fn max_spread(fit: &BaselineFit, n_regions: usize, x: usize, p: usize) -> f64 {
    let vals: Vec<f64> = (0..n_regions).map(|r| fit.gamma(r, x, p)).collect();
    vals.iter().cloned().fold(f64::MIN, f64::max) - vals.iter().cloned().fold(f64::MAX, f64::min)
}

#[test]
fn huge_penalty_equalizes_regions() {
    let graph = RegionGraph::path(4);
    // the residual spread at the optimum is of order score / λ, so keep the scores modest
    let w = WeekIndex::build((2019, 1), (2019, 52)).unwrap();
    let panel = common::serfling_panel(&graph, 2, &w, &common::typical_gamma(4, 2, 0.1), 1000.0, 12);
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::fixed([1e9; 6])).unwrap();
    for x in 0..2 {
        for p in 0..6 {
            let spread = max_spread(&fit, 4, x, p);
            assert!(spread < 1e-6, "x={x} p={p} spread {spread}");
        }
    }
}

#[test]
fn spread_shrinks_inversely_with_penalty() {
    let graph = RegionGraph::path(4);
    let panel = common::serfling_panel(&graph, 1, &weeks(), &common::typical_gamma(4, 1, 0.3), 4000.0, 17);
    let a = fit_baseline(&panel, &graph, &LambdaGrid::fixed([1e9; 6])).unwrap();
    let b = fit_baseline(&panel, &graph, &LambdaGrid::fixed([1e10; 6])).unwrap();
    for p in 0..6 {
        let ratio = max_spread(&a, 4, 0, p) / max_spread(&b, 4, 0, p);
        assert!((7.0..=13.0).contains(&ratio), "p={p} ratio {ratio}");
    }
}

#[test]
fn optimum_is_stationary_and_beats_perturbations() {
    let graph = RegionGraph::path(5);
    let panel = common::serfling_panel(&graph, 2, &weeks(), &common::typical_gamma(5, 2, 0.2), 3000.0, 13);
    let lambda = [10.0, 1e4, 1.0, 1.0, 0.1, 0.1];
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::fixed(lambda)).unwrap();
    let mut rng = common::rng(99);
    for x in 0..2 {
        let g = baseline_gradient(&panel, &graph, &lambda, x, &fit.gamma[x]).unwrap();
        let gmax = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        assert!(gmax < 1e-6, "gradient max-norm {gmax}");
        let best = baseline_objective(&panel, &graph, &lambda, x, &fit.gamma[x]).unwrap();
        for _ in 0..50 {
            let pert: Vec<f64> = fit.gamma[x].iter().map(|v| v + rng.random_range(-1e-3..1e-3)).collect();
            assert!(baseline_objective(&panel, &graph, &lambda, x, &pert).unwrap() >= best);
        }
    }
}

#[test]
fn simulate_then_refit_recovers_coefficients() {
    let graph = RegionGraph::path(3);
    let truth = common::typical_gamma(3, 2, 0.3);
    let panel = common::serfling_panel(&graph, 2, &weeks(), &truth, 20_000.0, 14);
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::fixed([0.0; 6])).unwrap();
    let mut inside = 0;
    let mut total = 0;
    for x in 0..2 {
        let cov = fit.fisher_matrix(x).try_inverse().unwrap();
        for i in 0..18 {
            let se = cov[(i, i)].sqrt();
            total += 1;
            if (fit.gamma[x][i] - truth[x][i]).abs() < 3.0 * se {
                inside += 1;
            }
        }
    }
    assert!(inside as f64 >= 0.95 * total as f64, "{inside}/{total}");
}

#[test]
fn ubre_prefers_smoothing_for_flat_truth_and_not_for_heterogeneous_truth() {
    let graph = RegionGraph::path(5);
    let w = WeekIndex::build((2017, 1), (2019, 52)).unwrap();
    let grid = [0.0, 1.0, 100.0, 1e4, 1e6];
    let mut mean_curve = vec![0.0; grid.len()];
    for rep in 0..20 {
        let panel = common::serfling_panel(&graph, 1, &w, &common::typical_gamma(5, 1, 0.0), 2000.0, 100 + rep);
        for (i, &l) in grid.iter().enumerate() {
            mean_curve[i] += fit_baseline(&panel, &graph, &LambdaGrid::fixed([l; 6])).unwrap().ubre / 20.0;
        }
    }
    for pair in mean_curve.windows(2) {
        assert!(pair[1] <= pair[0] + 1e-9, "{mean_curve:?}");
    }

    let mut below_max = 0;
    for rep in 0..20 {
        let panel = common::serfling_panel(&graph, 1, &w, &common::typical_gamma(5, 1, 0.6), 20_000.0, 200 + rep);
        let sel = ubre_select(&panel, &graph, &LambdaGrid::uniform(&grid).unwrap()).unwrap();
        if sel.lambda[0] < 1e6 {
            below_max += 1;
        }
    }
    assert!(below_max >= 18, "{below_max}/20");
}

#[test]
fn single_point_grid_and_masking() {
    let graph = RegionGraph::path(3);
    let w = weeks();
    let panel = common::serfling_panel(&graph, 1, &w, &common::typical_gamma(3, 1, 0.1), 3000.0, 15);
    let sel = ubre_select(&panel, &graph, &LambdaGrid::uniform(&[5.0]).unwrap()).unwrap();
    assert_eq!(sel.lambda, [5.0; 6]);

    let masked = panel
        .mask_weeks(&(12..=16).map(|k| IsoWeek::new(2018, k).unwrap()).collect::<Vec<_>>())
        .unwrap();
    let fit = fit_baseline(&masked, &graph, &LambdaGrid::fixed([1.0; 6])).unwrap();
    assert_eq!(fit.n, (w.len() - 5) * 3);

    let all: Vec<IsoWeek> = w.iter().collect();
    let err = fit_baseline(&panel.mask_weeks(&all).unwrap(), &graph, &LambdaGrid::fixed([1.0; 6])).unwrap_err();
    assert!(err.to_string().contains("no usable observations"), "{err}");
}

#[test]
fn predictions_and_serialization() {
    let graph = RegionGraph::path(3);
    let w = weeks();
    let panel = common::serfling_panel(&graph, 2, &w, &common::typical_gamma(3, 2, 0.1), 3000.0, 16);
    let fit = fit_baseline(&panel, &graph, &LambdaGrid::fixed([1.0; 6])).unwrap();
    assert!(fit.fitted_b.iter().all(|&b| b > 0.0));
    let again = predict_baseline(&fit, &w, panel.exposures_slice()).unwrap();
    assert_eq!(again, fit.fitted_b);

    let mut zero = fit.clone();
    zero.gamma = vec![vec![0.0; 18]; 2];
    assert_eq!(predict_baseline(&zero, &w, panel.exposures_slice()).unwrap(), panel.exposures_slice());

    // negative trend, fixed ISO week: decreasing across years
    let mut down = zero.clone();
    down.gamma[0][1] = -0.01;
    let b = predict_baseline(&down, &w, panel.exposures_slice()).unwrap();
    let same_week: Vec<f64> = (0..w.len()).filter(|&k| w.w(k + 1) == 10).map(|k| b[k]).collect();
    assert!(same_week.windows(2).all(|p| p[1] < p[0]));

    // horizon continues t from the calibration origin
    let horizon = w.continuation(10);
    let e = vec![1.0; 3 * 2 * 10];
    let h = predict_baseline(&fit, &horizon, &e).unwrap();
    let t_first = (w.len() + 1) as f64;
    let row = mortality_regime::baseline::design_row(t_first, f64::from(horizon.w(1)));
    let eta: f64 = (0..6).map(|p| row[p] * fit.gamma(0, 0, p)).sum();
    assert!((h[0] - eta.exp()).abs() < 1e-12 * h[0]);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("baseline.json");
    fit.save(&path).unwrap();
    let loaded = BaselineFit::load(&path).unwrap();
    let re = predict_baseline(&loaded, &w, panel.exposures_slice()).unwrap();
    for (a, b) in re.iter().zip(&fit.fitted_b) {
        assert!((a - b).abs() <= 1e-10 * b);
    }
}

#[test]
fn zero_exposure_on_unmasked_cell_is_refused() {
    let graph = RegionGraph::path(2);
    let w = WeekIndex::build((2019, 1), (2019, 20)).unwrap();
    let n = 2 * w.len();
    let mut e = vec![100.0; n];
    e[3] = 0.0;
    let panel = mortality_regime::panel::MortalityPanel::new(
        graph.regions().to_vec(),
        vec!["90+".into()],
        w.clone(),
        vec![1; n],
        e,
    )
    .unwrap();
    assert!(fit_baseline(&panel, &graph, &LambdaGrid::fixed([0.0; 6])).is_err());
    let masked = panel.mask_weeks(&[w.iso(4)]).unwrap();
    assert!(fit_baseline(&masked, &graph, &LambdaGrid::fixed([0.0; 6])).is_ok());
}

proptest! {
    #[test]
    fn penalty_invariant_under_region_constant_shift(
        gamma in proptest::collection::vec(-3.0f64..3.0, 24),
        shift in -10.0f64..10.0,
        p in 0usize..6,
        lam in 0.0f64..100.0,
    ) {
        let graph = RegionGraph::path(4);
        let mut lambda = [0.5; 6];
        lambda[p] = lam;
        let mut shifted = gamma.clone();
        for r in 0..4 {
            shifted[r * 6 + p] += shift;
        }
        let a = penalty_value(&graph, &lambda, &gamma);
        let b = penalty_value(&graph, &lambda, &shifted);
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0) * 100.0);
    }
}

