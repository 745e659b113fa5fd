use std::collections::BTreeMap;

use budcheck_core::health::{
    fit, health_from_cycle, health_index, marginal_effect, predict_cycle, Coefficient, HealthError, ModelFit,
    ModelSpec, Observation, Term, TransducerIntercept,
};
use budcheck_core::session::{Side, Source, TransducerKey};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

const PAIRS: [&str; 3] = ["Alpha", "Beta", "Gamma"];
const OFFSETS: [f64; 6] = [-0.5, 0.0, 0.5, -0.5, 0.0, 0.5];

fn transducers() -> Vec<(String, Side)> {
    PAIRS
        .iter()
        .flat_map(|p| [Side::Left, Side::Right].map(|s| (p.to_string(), s)))
        .collect()
}

fn obs(pair: &str, side: Side, source: Source, run: u32, cycle: u32, metrics: &[(&str, f64)]) -> Observation {
    Observation {
        pair: pair.into(),
        side,
        source,
        run,
        cycle,
        metrics: metrics.iter().map(|&(k, v)| (k.to_string(), v)).collect(),
    }
}

/// cycle = slope·m + u_t + ε, solved for m.
fn slope_data(seed: u64, slope: f64, sigma: f64) -> Vec<Observation> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, sigma).unwrap();
    let mut out = Vec::new();
    for ((pair, side), u) in transducers().into_iter().zip(OFFSETS) {
        for cycle in 0..6u32 {
            for run in 1..=3 {
                let eps = if sigma > 0.0 { noise.sample(&mut rng) } else { 0.0 };
                let m = (cycle as f64 - u - eps) / slope;
                out.push(obs(&pair, side, Source::Mic, run, cycle, &[("m", m)]));
            }
        }
    }
    out
}

fn key(i: usize) -> TransducerKey {
    let (p, s) = transducers()[i].clone();
    TransducerKey::new(p, s)
}

#[test]
fn recovers_slope_and_intercepts_over_seeds() {
    let spec = ModelSpec::parse("cycle ~ m").unwrap();
    let mut passes = 0;
    for seed in 0..100 {
        let f = fit(&slope_data(seed, 2.0, 0.1), &spec).unwrap();
        let slope = f.term("m").unwrap().estimate;
        let intercepts_ok = (0..6).all(|i| (f.intercept(&key(i)).unwrap() - OFFSETS[i]).abs() <= 0.15);
        if (1.9..=2.1).contains(&slope) && intercepts_ok {
            passes += 1;
        }
    }
    assert!(passes >= 95, "{passes}/100");
}

#[test]
fn noiseless_data_is_fit_exactly() {
    let data = slope_data(0, 2.0, 0.0);
    let f = fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()).unwrap();
    assert!((f.term("m").unwrap().estimate - 2.0).abs() <= 2e-9);
    assert!(f.residual_sd < 1e-9);
    assert_eq!(f.n_obs, 108);
    for o in data.iter().step_by(7) {
        let p = predict_cycle(&f, &o.metrics, &o.transducer()).unwrap();
        assert!((p - o.cycle as f64).abs() < 1e-9);
    }
}

#[test]
fn constant_metric_is_rank_deficient() {
    let data: Vec<_> = slope_data(1, 2.0, 0.1)
        .into_iter()
        .map(|mut o| {
            o.metrics.insert("m".into(), 0.3);
            o
        })
        .collect();
    assert!(matches!(
        fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()),
        Err(HealthError::RankDeficient(_))
    ));
}

#[test]
fn insufficient_data_is_reported() {
    let data = vec![
        obs("Alpha", Side::Left, Source::Mic, 1, 0, &[("m", 0.0)]),
        obs("Alpha", Side::Left, Source::Mic, 1, 1, &[("m", 1.0)]),
        obs("Beta", Side::Left, Source::Mic, 1, 1, &[("m", 1.0)]),
    ];
    let err = fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()).unwrap_err();
    assert!(matches!(err, HealthError::Insufficient(_)), "{err}");
    let same = vec![
        obs("Alpha", Side::Left, Source::Mic, 1, 2, &[("m", 0.0)]),
        obs("Alpha", Side::Left, Source::Mic, 2, 2, &[("m", 1.0)]),
        obs("Alpha", Side::Left, Source::Mic, 3, 2, &[("m", 3.0)]),
    ];
    assert!(matches!(
        fit(&same, &ModelSpec::parse("cycle ~ m").unwrap()),
        Err(HealthError::Insufficient(_))
    ));
}

#[test]
fn response_shift_moves_only_intercepts() {
    let data = slope_data(3, 2.0, 0.1);
    let spec = ModelSpec::parse("y ~ m + cycle").unwrap();
    let with_y = |c: f64| -> Vec<Observation> {
        data.iter()
            .enumerate()
            .map(|(i, o)| {
                let mut o = o.clone();
                let y = 0.7 * o.metrics["m"] + ((i * 37) % 11) as f64 * 0.01 + c;
                o.metrics.insert("y".into(), y);
                o
            })
            .collect()
    };
    let a = fit(&with_y(0.0), &spec).unwrap();
    let b = fit(&with_y(12.5), &spec).unwrap();
    for (ca, cb) in a.terms.iter().zip(&b.terms) {
        assert!((ca.estimate - cb.estimate).abs() <= 1e-9);
    }
    for (ia, ib) in a.intercepts.iter().zip(&b.intercepts) {
        assert!((ib.estimate - ia.estimate - 12.5).abs() <= 1e-9);
    }
}

#[test]
fn null_source_effect_is_rarely_significant() {
    let spec = ModelSpec::parse("correlation ~ cycle + source").unwrap();
    let mut quiet = 0;
    for seed in 0..100 {
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let noise = Normal::new(0.0, 0.01).unwrap();
        let mut data = Vec::new();
        for ((pair, side), u) in transducers().into_iter().zip(OFFSETS) {
            for cycle in 0..6 {
                for source in [Source::Mic, Source::Phone] {
                    for run in 1..=3 {
                        let c = 0.98 - 0.02 * cycle as f64 + 0.01 * u + noise.sample(&mut rng);
                        data.push(obs(&pair, side, source, run, cycle, &[("correlation", c)]));
                    }
                }
            }
        }
        let f = fit(&data, &spec).unwrap();
        if f.term("source").unwrap().t_value.abs() < 2.0 {
            quiet += 1;
        }
        assert!(f.term("cycle").unwrap().t_value < -2.0);
    }
    assert!(quiet >= 90, "{quiet}/100");
}

fn hand_fit() -> ModelFit {
    let spec = ModelSpec::parse("cycle ~ correlation * difference_mss").unwrap();
    let coef = |name: &str, estimate: f64| Coefficient {
        name: name.into(),
        estimate,
        std_error: 1.0,
        t_value: estimate,
    };
    ModelFit {
        response: "cycle".into(),
        terms: vec![
            coef("correlation", -1.0),
            coef("difference_mss", 0.01),
            coef("correlation:difference_mss", 0.02),
        ],
        spec,
        intercepts: vec![TransducerIntercept {
            transducer: key(0),
            estimate: 0.0,
            std_error: 0.0,
        }],
        residual_sd: 0.0,
        n_obs: 10,
        covariance: vec![vec![0.0; 4]; 4],
    }
}

#[test]
fn marginal_effect_is_linear_in_partner() {
    let f = hand_fit();
    let at = |c: f64| BTreeMap::from([("correlation".to_string(), c)]);
    assert!((marginal_effect(&f, "difference_mss", &at(1.0)).unwrap() - 0.03).abs() < 1e-15);
    assert_eq!(marginal_effect(&f, "difference_mss", &at(0.0)).unwrap(), 0.01);
    assert!(matches!(
        marginal_effect(&f, "thd_dbc", &at(0.0)),
        Err(HealthError::UnknownTerm(_))
    ));
    assert!(matches!(
        marginal_effect(&f, "difference_mss", &BTreeMap::new()),
        Err(HealthError::MissingValue(_))
    ));
}

#[test]
fn interaction_generator_recovers_conditional_slope() {
    let gamma = 0.5;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let noise = Normal::new(0.0, 0.3).unwrap();
    let mut data = Vec::new();
    for (pair, side) in transducers() {
        for cycle in 0..6u32 {
            for run in 1..=3 {
                for source in [Source::Mic, Source::Phone] {
                    let c: f64 = rng.random_range(0.4..1.0);
                    let d = if c > 0.9 {
                        cycle as f64 / gamma + noise.sample(&mut rng)
                    } else {
                        rng.random_range(0.0..(5.0 / gamma))
                    };
                    data.push(obs(&pair, side, source, run, cycle, &[("correlation", c), ("difference_mss", d)]));
                }
            }
        }
    }
    let f = fit(&data, &ModelSpec::parse("cycle ~ correlation * difference_mss").unwrap()).unwrap();
    let at = |c: f64| BTreeMap::from([("correlation".to_string(), c)]);
    let high = marginal_effect(&f, "difference_mss", &at(1.0)).unwrap();
    let low = marginal_effect(&f, "difference_mss", &at(0.5)).unwrap();
    assert!(high > 0.0 && high > low, "high {high}, low {low}");
}

#[test]
fn predictions_are_affine_and_anchor_at_cycle_zero() {
    let data = slope_data(5, 2.0, 0.1);
    let f = fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()).unwrap();
    let slope = f.term("m").unwrap().estimate;
    for i in 0..6 {
        let t = key(i);
        let m0: Vec<f64> = data
            .iter()
            .filter(|o| o.transducer() == t && o.cycle == 0)
            .map(|o| o.metrics["m"])
            .collect();
        let level = m0.iter().sum::<f64>() / m0.len() as f64;
        let at = |m: f64| BTreeMap::from([("m".to_string(), m)]);
        let p0 = predict_cycle(&f, &at(level), &t).unwrap();
        assert!(p0.abs() <= 2.0 * f.residual_sd, "{p0} vs {}", f.residual_sd);
        let p1 = predict_cycle(&f, &at(level + 1.0 / slope), &t).unwrap();
        assert!((p1 - p0 - 1.0).abs() < 1e-12);
    }
    let stranger = TransducerKey::new("Delta", Side::Left);
    assert!(matches!(
        predict_cycle(&f, &BTreeMap::from([("m".to_string(), 0.0)]), &stranger),
        Err(HealthError::UnknownTransducer(_))
    ));
    assert!(matches!(
        predict_cycle(&f, &BTreeMap::new(), &key(0)),
        Err(HealthError::MissingValue(_))
    ));
}

#[test]
fn health_index_bounds_and_monotonicity() {
    assert_eq!(health_from_cycle(0.0, 6.0), 1.0);
    assert_eq!(health_from_cycle(6.0, 6.0), 0.0);
    assert_eq!(health_from_cycle(3.0, 6.0), 0.5);
    assert_eq!(health_from_cycle(-2.0, 6.0), 1.0);
    assert_eq!(health_from_cycle(9.0, 6.0), 0.0);
    let mut prev = f64::INFINITY;
    for i in -20..100 {
        let h = health_from_cycle(i as f64 * 0.1, 6.0);
        assert!((0.0..=1.0).contains(&h) && h <= prev);
        prev = h;
    }
    let f = fit(&slope_data(0, 2.0, 0.0), &ModelSpec::parse("cycle ~ m").unwrap()).unwrap();
    let at = BTreeMap::from([("m".to_string(), (3.0 + 0.5) / 2.0)]);
    // transducer 0 has offset −0.5, so this metric level predicts cycle 3
    assert!((health_index(&f, &at, &key(0), 6.0).unwrap() - 0.5).abs() < 1e-9);
    assert!(matches!(
        health_index(&f, &at, &key(0), 0.0),
        Err(HealthError::BadFailureCycle(_))
    ));
}

#[test]
fn formulas_parse_and_print() {
    let s = ModelSpec::parse("cycle ~ correlation*difference_mss").unwrap();
    assert_eq!(
        s.terms,
        vec![
            Term::Variable("correlation".into()),
            Term::Variable("difference_mss".into()),
            Term::Interaction("correlation".into(), "difference_mss".into()),
        ]
    );
    assert_eq!(s.to_string(), "cycle ~ correlation + difference_mss + correlation:difference_mss");
    for bad in ["cycle", "~ m", "cycle ~", "cycle ~ m +", "cycle ~ cycle", "cycle ~ a-b"] {
        assert!(matches!(ModelSpec::parse(bad), Err(HealthError::BadFormula(..))), "{bad}");
    }
}

#[test]
fn unusable_rows_are_left_out() {
    let mut data = slope_data(2, 2.0, 0.1);
    let complete = fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()).unwrap();
    data.push(obs("Alpha", Side::Left, Source::Mic, 1, 6, &[]));
    data.push(obs("Alpha", Side::Left, Source::Mic, 2, 6, &[("m", f64::NAN)]));
    let padded = fit(&data, &ModelSpec::parse("cycle ~ m").unwrap()).unwrap();
    assert_eq!(padded, complete);
}
