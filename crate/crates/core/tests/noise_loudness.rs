use budcheck_core::audio::Recording;
use budcheck_core::degrade::{apply_attenuation, apply_noise};
use budcheck_core::loudness::{ear_model, internal_noise, rms_noise_loudness, LoudnessError};
use budcheck_core::siggen::{gen_linear_sweep, SweepSpec};

/// A few seconds of broadband program material with some spectral shape.
fn program(seconds: f64) -> Recording {
    let rate = 44_100;
    let n = (seconds * rate as f64) as usize;
    let samples = (0..n)
        .map(|i| {
            let t = i as f64 / rate as f64;
            let env = 0.6 + 0.4 * (std::f64::consts::TAU * 1.3 * t).sin();
            let v = 0.08 * (std::f64::consts::TAU * 220.0 * t).sin()
                + 0.05 * (std::f64::consts::TAU * 660.0 * t).sin()
                + 0.03 * (std::f64::consts::TAU * 2500.0 * t).sin()
                + 0.01 * (std::f64::consts::TAU * 7000.0 * t).sin();
            env * v
        })
        .collect();
    Recording::new(samples, rate, "program")
}

#[test]
fn self_comparison_is_exactly_zero() {
    for rec in [program(2.0), gen_linear_sweep(&SweepSpec { duration_s: 3.0, ..Default::default() }).unwrap()] {
        let r = rms_noise_loudness(&rec, &rec).unwrap();
        assert_eq!(r.rms_noise_loudness, 0.0);
        assert!(r.per_frame.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn pure_attenuation_scores_zero() {
    let reference = program(2.0);
    let quieter = apply_attenuation(&reference, -6.0).unwrap();
    assert_eq!(rms_noise_loudness(&quieter, &reference).unwrap().rms_noise_loudness, 0.0);
}

#[test]
fn strictly_increasing_as_snr_falls() {
    let reference = program(3.0);
    let scores: Vec<f64> = [40.0, 32.5, 25.0, 17.5, 10.0]
        .iter()
        .map(|&snr| {
            let test = apply_noise(&reference, snr, 99).unwrap();
            let r = rms_noise_loudness(&test, &reference).unwrap();
            assert!(r.per_frame.iter().all(|&v| v >= 0.0));
            let rms = (r.per_frame.iter().map(|v| v * v).sum::<f64>() / r.per_frame.len() as f64).sqrt();
            assert!((rms - r.rms_noise_loudness).abs() <= 1e-12 * rms.max(1.0));
            r.rms_noise_loudness
        })
        .collect();
    assert!(scores[0] > 0.0);
    assert!(scores.windows(2).all(|w| w[1] > w[0]), "{scores:?}");
}

#[test]
fn monotone_in_noise_scale_for_fixed_realization() {
    let reference = program(1.5);
    let unit = apply_noise(&Recording::new(vec![0.0; reference.len()], 44_100, "z").map(|_| 1.0), 0.0, 5)
        .unwrap()
        .map(|v| v - 1.0);
    let mut last = 0.0;
    for sigma in [0.0, 1e-4, 1e-3, 5e-3, 2e-2] {
        let test = Recording::new(
            reference
                .samples
                .iter()
                .zip(&unit.samples)
                .map(|(r, n)| r + sigma * n)
                .collect(),
            44_100,
            "t",
        );
        let score = rms_noise_loudness(&test, &reference).unwrap().rms_noise_loudness;
        assert!(score >= last, "sigma {sigma}: {score} < {last}");
        last = score;
    }
}

#[test]
fn metric_is_asymmetric() {
    let reference = program(1.5);
    let noisy = apply_noise(&reference, 15.0, 4).unwrap();
    let forward = rms_noise_loudness(&noisy, &reference).unwrap().rms_noise_loudness;
    let backward = rms_noise_loudness(&reference, &noisy).unwrap().rms_noise_loudness;
    assert!(forward > backward, "{forward} vs {backward}");
}

#[test]
fn excitation_scales_with_power_above_floor() {
    let rec = program(0.5);
    let g = 0.25f64;
    let a = ear_model(&rec).unwrap();
    let b = ear_model(&rec.map(|x| x * g)).unwrap();
    let floors: Vec<f64> = a.band_centers_hz().iter().map(|&f| internal_noise(f)).collect();
    let mut checked = 0;
    for (ra, rb) in a.excitation.iter().zip(&b.excitation) {
        for ((ea, eb), floor) in ra.iter().zip(rb).zip(&floors) {
            let (sa, sb) = (ea - floor, eb - floor);
            if sa > 1e3 * floor {
                assert!((sb - g * g * sa).abs() <= 1e-6 * g * g * sa, "{sb} vs {}", g * g * sa);
                checked += 1;
            }
        }
    }
    assert!(checked > 100);
}

#[test]
fn rate_mismatch_is_rejected() {
    let a = program(0.5);
    let b = Recording::new(a.samples.clone(), 48_000, "b");
    assert!(matches!(
        rms_noise_loudness(&a, &b),
        Err(LoudnessError::SampleRateMismatch { .. })
    ));
}
