mod common;

use mortality_regime::em::filter_all;
use mortality_regime::features::{FeatureFrame, Standardizer};
use mortality_regime::forecast::*;
use mortality_regime::panel::{IsoWeek, RegionGraph, WeekIndex};
use mortality_regime::regime::*;
use mortality_regime::synthetic::{planted_spec, synthetic_panel, SyntheticConfig};
use mortality_regime::uncertainty::mean_in_state;
use nalgebra::DMatrix;
use statrs::distribution::{DiscreteCDF, Poisson};

struct Toy {
    data: RegimeData,
    params: RegimeParams,
    u: Vec<f64>,
    icar: Icar,
}

fn toy(n_regions: usize, n_weeks: usize, seed: u64) -> Toy {
    let spec = common::toy_spec();
    let data = common::toy_data(&spec, n_regions, 2, n_weeks, 25.0, seed);
    let params = common::toy_params(&data, &spec, seed);
    let icar = Icar::new(&RegionGraph::path(n_regions)).unwrap();
    Toy { u: common::random_u(n_regions, seed), data, params, icar }
}

fn setup<'a>(t: &'a Toy, path: &'a [usize], sigma2: Option<&'a DMatrix<f64>>, exposures: &'a [f64]) -> BootstrapSetup<'a> {
    BootstrapSetup {
        data: &t.data,
        params: &t.params,
        sigma2,
        u: &t.u,
        tau: 2.0,
        icar: &t.icar,
        baseline: None,
        start: Start::Initial(vec![argmax(&t.params.rho); t.data.n_regions()]),
        fixed_path: path,
        exposures,
    }
}

#[test]
fn best_estimate_deaths_follow_the_path() {
    let t = toy(2, 6, 1);
    let zeros = vec![0; 12];
    let be = best_estimate_deaths(&zeros, &t.data, &t.params).unwrap();
    assert_eq!(be, t.data.b_hat_slice());

    let mixed = vec![0, 1, 1, 0, 2, 2, 0, 0, 1, 0, 0, 2];
    let be = best_estimate_deaths(&mixed, &t.data, &t.params).unwrap();
    for r in 0..2 {
        for x in 0..2 {
            for k in 0..6 {
                let want = mean_in_state(&t.data, &t.params, r, x, k, mixed[r * 6 + k]).unwrap();
                assert_eq!(be[t.data.cell(r, x, k)], want);
            }
        }
    }
    assert!(best_estimate_deaths(&mixed[..5], &t.data, &t.params).is_err());
}

#[test]
fn state_one_multiplies_the_baseline() {
    let t = toy(1, 3, 2);
    let mut params = t.params.clone();
    // single active covariate with z·α = log 1.5 at week 2
    let z = t.data.state_z[0].row(0, 1).to_vec();
    for g in params.alpha1.iter_mut() {
        g.iter_mut().for_each(|a| *a = 0.0);
        g[0] = 1.5f64.ln() / z[0];
    }
    let be = best_estimate_deaths(&[0, 1, 0], &t.data, &params).unwrap();
    for x in 0..2 {
        let c = t.data.cell(0, x, 1);
        assert!((be[c] - 1.5 * t.data.b_hat(0, x, 1)).abs() < 1e-9 * be[c]);
    }
}

#[test]
fn best_estimate_states_recover_planted_paths() {
    let spec = planted_spec();
    let mut acc = 0.0;
    for seed in 0..20 {
        let cfg = SyntheticConfig { n_regions: 3, n_weeks: 150, ..Default::default() };
        let p = synthetic_panel(&cfg, &spec, None, &mut common::rng(300 + seed)).unwrap();
        let filter = filter_all(&p.data, &p.params, &p.u).unwrap();
        let be = best_estimate_states(&filter);
        acc += be.iter().zip(&p.states).filter(|(a, b)| a == b).count() as f64 / be.len() as f64;
    }
    acc /= 20.0;
    assert!(acc >= 0.9, "accuracy {acc}");
}

#[test]
fn all_toggles_off_collapses_to_the_mean_path() {
    let t = toy(3, 10, 3);
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let path = best_estimate_states(&filter);
    let exposures = vec![1000.0; t.data.b_hat_slice().len()];
    let bands = bootstrap_predict(&setup(&t, &path, None, &exposures), 50, Toggles::none(), 1).unwrap();
    let be = best_estimate_deaths(&path, &t.data, &t.params).unwrap();
    for c in 0..be.len() {
        assert_eq!(bands.q025[c], be[c]);
        assert_eq!(bands.q50[c], be[c]);
        assert_eq!(bands.q975[c], be[c]);
    }
}

#[test]
fn poisson_only_matches_exact_quantiles() {
    let t = toy(2, 4, 4);
    let path = vec![0; 8];
    let exposures = vec![1000.0; 16];
    let b = DEFAULT_SAMPLES;
    let toggles = Toggles { poisson: true, ..Toggles::none() };
    let bands = bootstrap_predict(&setup(&t, &path, None, &exposures), b, toggles, 7).unwrap();
    for (c, &mean) in t.data.b_hat_slice().iter().enumerate() {
        let dist = Poisson::new(mean).unwrap();
        for (p, q) in [(0.025, bands.q025[c]), (0.5, bands.q50[c]), (0.975, bands.q975[c])] {
            // quantiles at p ± 3 binomial SEs bracket the sample quantile
            let se = (p * (1.0 - p) / b as f64).sqrt();
            let lo = dist.inverse_cdf(p - 3.0 * se) as f64;
            let hi = dist.inverse_cdf(p + 3.0 * se) as f64;
            assert!(lo <= q && q <= hi, "cell {c} p {p}: {q} outside [{lo}, {hi}]");
        }
    }
}

#[test]
fn bands_are_ordered_deterministic_and_nested() {
    let t = toy(3, 12, 5);
    let filter = filter_all(&t.data, &t.params, &t.u).unwrap();
    let path = best_estimate_states(&filter);
    let exposures = vec![500.0; t.data.b_hat_slice().len()];
    let q = t.params.theta().len();
    let sigma2 = DMatrix::from_diagonal_element(q, q, 0.01);
    let s = setup(&t, &path, Some(&sigma2), &exposures);
    let a = bootstrap_predict(&s, 2000, Toggles::all(), 3).unwrap();
    let b = bootstrap_predict(&s, 2000, Toggles::all(), 3).unwrap();
    assert_eq!(a, b);
    for c in 0..a.n_cells() {
        assert!(a.q025[c] <= a.q50[c] && a.q50[c] <= a.q975[c]);
    }

    let width = |bands: &PredictionBands| bands.q975.iter().zip(&bands.q025).map(|(h, l)| h - l).sum::<f64>() / bands.n_cells() as f64;
    let ladder = [
        Toggles::none(),
        Toggles { poisson: true, ..Toggles::none() },
        Toggles { poisson: true, state: true, ..Toggles::none() },
        Toggles { poisson: true, state: true, spatial: true, ..Toggles::none() },
        Toggles::all(),
    ];
    for seed in 0..5 {
        let widths: Vec<f64> = ladder.iter().map(|&tg| width(&bootstrap_predict(&s, 10_000, tg, 100 + seed).unwrap())).collect();
        for w in widths.windows(2) {
            assert!(w[1] >= w[0] * 0.99, "seed {seed}: {widths:?}");
        }
    }
}

#[test]
fn parameter_toggle_requires_a_covariance() {
    let t = toy(2, 3, 6);
    let path = vec![0; 6];
    let exposures = vec![1.0; 12];
    let err = bootstrap_predict(&setup(&t, &path, None, &exposures), 10, Toggles::all(), 1).unwrap_err();
    assert!(err.to_string().contains("Σ₂"));
    assert!(bootstrap_predict(&setup(&t, &path, None, &exposures), 0, Toggles::none(), 1).is_err());
}

#[test]
fn forecast_start_steps_from_the_preceding_state() {
    let t = toy(2, 5, 8);
    let mut params = t.params.clone();
    params.beta_mut(Transition::T01)[0] = 30.0;
    for b in params.beta_mut(Transition::T01).iter_mut().skip(1) {
        *b = 0.0;
    }
    params.beta_mut(Transition::T11)[0] = 30.0;
    for b in params.beta_mut(Transition::T11).iter_mut().skip(1) {
        *b = 0.0;
    }
    let u = [0.0, 0.0];
    // from state 0 the chain jumps to state 1 at the first horizon week
    let after = most_probable_path(&t.data, &params, &u, &Start::After(vec![0, 0])).unwrap();
    assert!(after.iter().all(|&s| s == 1), "{after:?}");
    let initial = most_probable_path(&t.data, &params, &u, &Start::Initial(vec![0, 0])).unwrap();
    assert_eq!(initial[0], 0);
    assert_eq!(initial[5], 0);
    assert!(initial[1..5].iter().all(|&s| s == 1));
}

fn tiny_bands() -> PredictionBands {
    PredictionBands {
        regions: vec!["A".into()],
        age_groups: vec!["65-69".into(), "70-74".into()],
        weeks: WeekIndex::from_start(IsoWeek { year: 2020, week: 52 }, 10),
        samples: 100,
        seed: 1,
        toggles: Toggles::all(),
        exposures: (0..20).map(|c| 1000.0 + c as f64).collect(),
        q025: (0..20).map(|c| 5.0 + c as f64).collect(),
        q50: (0..20).map(|c| 10.0 + c as f64).collect(),
        q975: (0..20).map(|c| 15.0 + c as f64).collect(),
    }
}

#[test]
fn coverage_examples() {
    let b = tiny_bands();
    assert_eq!(coverage_check(&b, &b.q50).unwrap(), 1.0);
    let far: Vec<f64> = b.q975.iter().map(|v| v + 100.0).collect();
    assert_eq!(coverage_check(&b, &far).unwrap(), 0.0);
    let mut half = b.q50.clone();
    half[..10].iter_mut().for_each(|v| *v = -1.0);
    assert_eq!(coverage_check(&b, &half).unwrap(), 0.5);
    assert!(coverage_check(&b, &[1.0]).is_err());
}

#[test]
fn excess_death_examples() {
    let mut b = tiny_bands();
    b.exposures = vec![1000.0; 20];
    b.q50 = vec![10.0; 20];
    let same = excess_deaths(&b, &b.q50.clone()).unwrap();
    assert!(same.iter().all(|e| e.relative == 0.0));

    let scaled: Vec<f64> = b.q50.iter().map(|v| v / 1.1).collect();
    for e in excess_deaths(&b, &scaled).unwrap() {
        assert!((e.relative - 0.1).abs() < 1e-12);
    }

    let base = b.q50.clone();
    b.q50[3] = 20.0;
    b.q50[13] = 20.0;
    for e in excess_deaths(&b, &base).unwrap() {
        assert!((e.relative - 0.1).abs() < 1e-12);
    }
    assert!(excess_deaths(&b, &[0.0; 20]).is_err());
}

#[test]
fn bands_csv_round_trip() {
    let b = tiny_bands();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("bands.csv");
    b.write_csv(&path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    assert!(text.starts_with("region,age_group,iso_year,iso_week,q025,q50,q975,metric\n"));
    assert_eq!(text.lines().count(), 1 + 2 * 20);
    assert!(text.contains("rate_per_1000py"));
    let back = PredictionBands::read_csv(&path).unwrap();
    assert_eq!(back.weeks, b.weeks);
    assert_eq!(back.q50, b.q50);
    for (e, want) in back.exposures.iter().zip(&b.exposures) {
        assert!((e - want).abs() < 1e-9 * want);
    }
}

#[test]
fn horizon_gaps_are_listed() {
    let spec = common::toy_spec();
    let regions = vec!["R0".to_string()];
    let horizon = WeekIndex::from_start(IsoWeek { year: 2030, week: 1 }, 4);
    let mut frame = FeatureFrame::new(regions.clone(), horizon.clone());
    for name in spec.columns() {
        let mut col = vec![0.5; 4];
        if name == "Z2" {
            col[2] = f64::NAN;
        }
        frame.set_column(&name, col).unwrap();
    }
    let std = Standardizer::fit(&frame, &["Z1".to_string()]).unwrap();
    let ages = vec!["A0".to_string()];
    let err = horizon_data(&spec, &ages, &horizon, &frame, &std, vec![10.0; 4]).unwrap_err();
    assert!(err.to_string().contains("Z2 R0 2030-W03"), "{err}");

    let longer = WeekIndex::from_start(IsoWeek { year: 2030, week: 1 }, 6);
    let err = horizon_data(&spec, &ages, &longer, &frame, &std, vec![10.0; 6]).unwrap_err();
    assert!(err.to_string().contains("2030-W05, 2030-W06"), "{err}");
}
