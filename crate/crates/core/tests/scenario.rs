mod common;

use std::collections::BTreeMap;

use mortality_regime::features::{
    build_features, DailyRegionalSeries, FeatureConfig, WeeklyEntries, WeeklyRegionalSeries,
};
use mortality_regime::panel::{IsoWeek, WeekIndex};
use mortality_regime::scenario::*;

fn planted() -> SirsParams {
    let mut phi = [0.0; N_BLOCKS];
    for (j, v) in phi.iter_mut().enumerate() {
        *v = -0.1 + 0.3 * (2.0 * std::f64::consts::PI * (j as f64 - 0.5) / 13.0).cos();
    }
    SirsParams { phi, psi: 0.2, kappa: 0.9, zeta: 0.01 }
}

fn planted_series(seed: u64) -> (Vec<f64>, WeekIndex) {
    let weeks = WeekIndex::from_start(IsoWeek { year: 2016, week: 1 }, 156);
    let (obs, _) = simulate_sirs(&planted(), 1e5, &weeks, [200.0, 220.0, 250.0, 240.0], &mut common::rng(seed)).unwrap();
    (obs, weeks)
}

fn options(seed: u64) -> McmcOptions {
    McmcOptions { iterations: 6000, burn_in: 3000, samples: Some(1000), seed, priors: SirsPriors::default() }
}

fn mean_sd(v: &[f64]) -> (f64, f64) {
    let m = v.iter().sum::<f64>() / v.len() as f64;
    let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() - 1) as f64;
    (m, var.sqrt())
}

#[test]
fn block_index_is_surjective_and_matches_formula() {
    let blocks: Vec<usize> = (1..=53).map(|w| q_of_week(w).unwrap()).collect();
    for q in 1..=N_BLOCKS {
        assert!(blocks.contains(&q), "block {q} never hit");
    }
    for w in 1..=53u32 {
        let expected = if w % 4 == 0 { w / 4 } else { (w / 4 + 1).min(13) };
        assert_eq!(blocks[w as usize - 1], expected as usize);
    }
    assert!(blocks.windows(2).all(|p| p[1] >= p[0]));
}

#[test]
fn recursion_examples() {
    let st = SirsState { s: 900.0, r: 100.0, i_prev: 10.0, i_prev2: 10.0 };
    let step = sirs_step(&st, 1000.0, 0.1, 1.0, 0.0, 0.0).unwrap();
    assert_eq!((step.lambda, step.s, step.r), (18.0, 892.0, 100.0));

    let absorbing = sirs_step(&st, 1000.0, 0.0, 1.0, 0.0, 0.0).unwrap();
    assert_eq!(absorbing.r, st.r + st.i_prev);

    let dead = SirsState { s: 900.0, r: 100.0, i_prev: 0.0, i_prev2: 0.0 };
    let mut rng = common::rng(1);
    let step = sirs_step_sampled(&dead, 1000.0, 0.1, 1.0, 0.5, 0.3, &mut rng).unwrap();
    assert_eq!((step.lambda, step.i), (0.0, 0.0));

    assert!(sirs_step(&SirsState { s: -1.0, ..st }, 1000.0, 0.1, 1.0, 0.0, 0.0).is_err());
    assert!(sirs_step(&st, 0.0, 0.1, 1.0, 0.0, 0.0).is_err());
}

#[test]
fn susceptible_clip_is_flagged() {
    let st = SirsState { s: 10.0, r: 0.0, i_prev: 1000.0, i_prev2: 1000.0 };
    let step = sirs_step(&st, 1000.0, 0.0, 1.0, 0.0, 0.0).unwrap();
    assert!(step.clipped);
    assert_eq!(step.s, 0.0);
}

#[test]
fn deterministic_recursion_is_reproducible() {
    let p = planted();
    let run = || {
        let mut st = SirsState::from_recent(1e5, &[200.0, 220.0, 250.0, 240.0]).unwrap();
        let mut out = Vec::new();
        for w in 1..=52 {
            let step = sirs_step(&st, 1e5, p.psi, p.kappa, p.rate(w).unwrap(), 0.0).unwrap();
            out.push(step.i);
            st = step.next_state(&st);
        }
        out
    };
    assert_eq!(run(), run());
}

#[test]
fn mcmc_keeps_one_sample_after_single_post_burn_in_iteration() {
    let (obs, weeks) = planted_series(3);
    let opts = McmcOptions { iterations: 201, burn_in: 200, samples: None, seed: 1, priors: SirsPriors::default() };
    let post = sirs_mcmc("X", &obs, &weeks, 1e5, &opts).unwrap();
    assert_eq!(post.samples.len(), 1);
    assert!(post.samples[0].log_density.is_finite());
}

#[test]
fn mcmc_rejects_bad_input() {
    let (obs, weeks) = planted_series(3);
    let bad = McmcOptions { iterations: 100, burn_in: 100, ..options(0) };
    assert!(sirs_mcmc("X", &obs, &weeks, 1e5, &bad).is_err());
    let short = WeekIndex::from_start(IsoWeek { year: 2016, week: 1 }, 60);
    assert!(sirs_mcmc("X", &obs[..60], &short, 1e5, &options(0)).is_err());
    let mut frac = obs.clone();
    frac[10] = 1.5;
    assert!(sirs_mcmc("X", &frac, &weeks, 1e5, &options(0)).is_err());
}

#[test]
fn mcmc_recovers_planted_parameters() {
    let p = planted();
    let truth: Vec<f64> = p.phi.iter().copied().chain([p.psi, p.kappa]).collect();
    let (mut inside, mut total) = (0, 0);
    for rep in 0..10 {
        let (obs, weeks) = planted_series(100 + rep);
        let post = sirs_mcmc("X", &obs, &weeks, 1e5, &options(rep)).unwrap();
        assert!(post.samples.iter().all(|s| s.log_density.is_finite()));
        let draws = post.parameter_draws();
        for (i, t) in truth.iter().enumerate() {
            let (m, sd) = mean_sd(&draws.iter().map(|d| d[i]).collect::<Vec<_>>());
            inside += usize::from((m - t).abs() <= 3.0 * sd);
            total += 1;
        }
    }
    let share = inside as f64 / total as f64;
    assert!(share >= 0.8, "{inside}/{total} within 3 posterior SDs");
}

#[test]
fn independent_chains_agree() {
    let (obs, weeks) = planted_series(7);
    let a = sirs_mcmc("X", &obs, &weeks, 1e5, &options(11)).unwrap().parameter_draws();
    let b = sirs_mcmc("X", &obs, &weeks, 1e5, &options(12)).unwrap().parameter_draws();
    for i in 0..a[0].len() {
        let chains = vec![a.iter().map(|d| d[i]).collect(), b.iter().map(|d| d[i]).collect()];
        let rhat = split_rhat(&chains);
        assert!(rhat < 1.1, "parameter {i}: R-hat {rhat}");
    }
}

#[test]
fn split_rhat_flags_disagreeing_chains() {
    let mut rng = common::rng(5);
    use rand::Rng;
    let a: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..500).map(|_| rng.random::<f64>()).collect();
    assert!(split_rhat(&[a.clone(), b]) < 1.02);
    let shifted: Vec<f64> = a.iter().map(|v| v + 3.0).collect();
    assert!(split_rhat(&[a, shifted]) > 1.5);
}

fn degenerate_posterior(end: SirsState) -> SirsPosterior {
    let weeks = WeekIndex::from_start(IsoWeek { year: 2016, week: 1 }, 156);
    let params = SirsParams { zeta: 0.0, ..planted() };
    SirsPosterior {
        region: "X".into(),
        n: 1e5,
        weeks,
        samples: vec![SirsSample { params, end, log_density: 0.0 }],
        acceptance: Vec::new(),
        proposal_scales: Vec::new(),
    }
}

#[test]
fn degenerate_forecast_follows_the_recursion() {
    let end = SirsState { s: 95_000.0, r: 5_000.0, i_prev: 300.0, i_prev2: 280.0 };
    let post = degenerate_posterior(end);
    let fc = sirs_forecast(&post, 30, &[0.5, 0.8, 0.95], true, 0).unwrap();
    let p = &post.samples[0].params;
    let mut st = end;
    for (k, w) in fc.weeks.iter().enumerate() {
        let step = sirs_step(&st, 1e5, p.psi, p.kappa, p.rate(w.week).unwrap(), 0.0).unwrap();
        for l in 0..3 {
            assert_eq!(fc.trajectories[l][k], step.i);
        }
        st = step.next_state(&st);
    }
    assert_eq!(fc.weeks.first(), IsoWeek { year: 2019, week: 1 });
}

#[test]
fn forecast_quantiles_are_ordered() {
    let (obs, weeks) = planted_series(9);
    let post = sirs_mcmc("X", &obs, &weeks, 1e5, &McmcOptions { iterations: 3000, burn_in: 1500, ..options(2) }).unwrap();
    let fc = sirs_forecast(&post, 52, &[0.5, 0.8, 0.95], false, 4).unwrap();
    for k in 0..52 {
        assert!(fc.trajectories[0][k] <= fc.trajectories[1][k]);
        assert!(fc.trajectories[1][k] <= fc.trajectories[2][k]);
    }
    assert!(fc.conservation_drift.is_finite());
}

#[test]
fn zero_infections_stay_extinct() {
    let post = degenerate_posterior(SirsState { s: 1e5, r: 0.0, i_prev: 0.0, i_prev2: 0.0 });
    for deterministic in [true, false] {
        let fc = sirs_forecast(&post, 20, &[0.5, 0.8, 0.95], deterministic, 1).unwrap();
        assert!(fc.trajectories.iter().flatten().all(|&v| v == 0.0));
    }
}

struct Inputs {
    temp: DailyRegionalSeries,
    ili: WeeklyEntries,
    all: WeekIndex,
}

fn inputs() -> Inputs {
    let all = WeekIndex::build((2016, 1), (2019, 52)).unwrap();
    let start = all.first().monday();
    let n = all.len() * 7;
    let regions = vec!["A".to_string(), "B".to_string()];
    let mut values = Vec::new();
    for r in 0..2 {
        for d in 0..n {
            let doy = f64::from(start.add_days(d as i64).day_of_year());
            let wiggle = ((d * 7919 + r * 104_729) % 97) as f64 / 97.0 - 0.5;
            values.push(12.0 + 9.0 * (2.0 * std::f64::consts::PI * (doy - 110.0) / 365.0).sin() + 4.0 * wiggle);
        }
    }
    let temp = DailyRegionalSeries::new(regions.clone(), start, n, values).unwrap();
    let mut ili = WeeklyEntries::new();
    for r in &regions {
        for (k, w) in all.iter().enumerate() {
            let season = (2.0 * std::f64::consts::PI * f64::from(w.week) / 52.18).cos().max(0.0);
            ili.insert((r.clone(), w), 0.2 * season + 0.01 * ((k * 31) % 7) as f64);
        }
    }
    Inputs { temp, ili, all }
}

#[test]
fn default_scenarios_pair_pathways_with_severities() {
    let inp = inputs();
    let window = WeekIndex::build((2016, 1), (2018, 52)).unwrap();
    let horizon = window.continuation(52);
    let (frame, calib) =
        build_features(&inp.temp.restrict(&window).unwrap(), &inp.ili, None, &window, &FeatureConfig::default()).unwrap();
    let regions = frame.regions().to_vec();
    let same_temp = inp.temp.restrict(&horizon).unwrap();
    let temperature: BTreeMap<String, DailyRegionalSeries> =
        ["RCP2.6", "RCP4.5", "RCP8.5"].iter().map(|p| (p.to_string(), same_temp.clone())).collect();
    let mut influenza = BTreeMap::new();
    for (i, (sev, _)) in SEVERITIES.iter().enumerate() {
        let base = WeeklyRegionalSeries::from_entries(&regions, &horizon, &inp.ili, None, "ili").unwrap();
        let scaled = base.values.iter().map(|v| v * (1.0 + i as f64)).collect();
        influenza.insert(sev.to_string(), WeeklyRegionalSeries::new(regions.clone(), horizon.clone(), scaled).unwrap());
    }
    let set = assemble_scenarios(&calib, &frame, &temperature, &influenza, 0.0, &horizon, &default_pairings()).unwrap();

    let pairs: Vec<(&str, &str, &str)> = set
        .scenarios
        .iter()
        .map(|s| (s.provenance.label.as_str(), s.provenance.pathway.as_str(), s.provenance.severity.as_str()))
        .collect();
    assert_eq!(
        pairs,
        vec![("scenario1", "RCP2.6", "moderate"), ("scenario2", "RCP4.5", "high"), ("scenario3", "RCP8.5", "severe")]
    );
    assert_eq!(set.get("scenario3").unwrap().provenance.influenza_quantile, 0.95);

    for s in &set.scenarios {
        assert_eq!(s.frame.weeks(), &horizon);
        for name in s.frame.names() {
            if name.starts_with("HA") {
                assert!(s.frame.column(name).unwrap().iter().all(|&v| v == 0.0), "{name}");
            }
        }
    }
    let (a, b) = (&set.scenarios[0].frame, &set.scenarios[2].frame);
    for name in ["TA", "HI", "CI"] {
        assert_eq!(a.column(name), b.column(name), "{name}");
    }
    assert_ne!(a.column("IA"), b.column("IA"));

    let dir = tempfile::tempdir().unwrap();
    let files = set.write(dir.path()).unwrap();
    assert_eq!(files.len(), 6);
    assert!(dir.path().join("scenario2.json").exists());
    let _ = inp.all;
}

#[test]
fn horizon_gap_is_rejected() {
    let inp = inputs();
    let window = WeekIndex::build((2016, 1), (2018, 52)).unwrap();
    let horizon = window.continuation(52);
    let (frame, calib) =
        build_features(&inp.temp.restrict(&window).unwrap(), &inp.ili, None, &window, &FeatureConfig::default()).unwrap();
    let regions = frame.regions().to_vec();
    let short = inp.temp.restrict(&WeekIndex::from_start(horizon.first(), 40)).unwrap();
    let temperature: BTreeMap<String, DailyRegionalSeries> =
        ["RCP2.6", "RCP4.5", "RCP8.5"].iter().map(|p| (p.to_string(), short.clone())).collect();
    let flu = WeeklyRegionalSeries::from_entries(&regions, &horizon, &inp.ili, None, "ili").unwrap();
    let influenza: BTreeMap<String, WeeklyRegionalSeries> =
        SEVERITIES.iter().map(|(s, _)| (s.to_string(), flu.clone())).collect();
    let err = assemble_scenarios(&calib, &frame, &temperature, &influenza, 0.0, &horizon, &default_pairings()).unwrap_err();
    assert!(err.to_string().contains("RCP2.6"), "{err}");
}
