//! Cross-module behavior of the codec, two-stage pipeline, channels and detector.

use std::f64::consts::PI;

use rayon::prelude::*;
use t2smark::bep::{analytic_bep, simulate_single_stage};
use t2smark::rng::{stream_from_u64, task_stream, unit_open};
use t2smark::stats::tail_moments;
use t2smark::{
    decode, decode_two_stage, detection_statistic, encode, encode_two_stage, ChannelSpec,
    CodecParams, MasterKey, NoiseVector, NullModel, SupportMap, TwoStageParams, WatermarkBits,
    DEFAULT_TAU,
};

/// Box-Muller normal from the stream's uniforms; independent of the
/// inverse-CDF sampler used by the library.
fn box_muller(rng: &mut t2smark::RandomStream) -> f64 {
    let u1 = unit_open(rng);
    let u2 = unit_open(rng);
    (-2.0 * u1.ln()).sqrt() * (2.0 * PI * u2).cos()
}

#[test]
fn ber_is_monotone_in_sigma() {
    let params = CodecParams::default_payload();
    let mut last = 0.0;
    for sigma in [0.5, 1.0, 2.0, 3.0] {
        let ber = simulate_single_stage(&params, &ChannelSpec::Awgn { sigma }, 400, 11, 0)
            .unwrap()
            .rate();
        assert!(ber >= last, "σ={sigma}: {ber} < {last}");
        last = ber;
    }
    assert!(last > 0.0);
}

#[test]
fn awgn_ber_tracks_analytic_prediction() {
    let params = CodecParams::default_payload();
    let counts =
        simulate_single_stage(&params, &ChannelSpec::Awgn { sigma: 2.0 }, 1000, 12, 0).unwrap();
    let pe = analytic_bep(params.n, params.m, params.tau, 2.0)
        .unwrap()
        .p_e;
    let se = (pe * (1.0 - pe) / counts.bits as f64).sqrt();
    assert!(
        (counts.rate() - pe).abs() < 4.0 * se,
        "{} vs {pe}",
        counts.rate()
    );
}

#[test]
fn erasure_ber_matches_scalar_oracle() {
    let params = CodecParams::default_payload();
    let mu_check = tail_moments(params.tau).unwrap().mu;
    for (c, f) in [0.5, 0.8].into_iter().enumerate() {
        let counts = simulate_single_stage(
            &params,
            &ChannelSpec::Erasure { fraction: f },
            2000,
            13,
            c as u64,
        )
        .unwrap();

        // Oracle: one bit = r coordinates; each erased w.p. f (fresh normal),
        // otherwise a tail magnitude drawn by rejection from Box-Muller normals.
        let oracle_trials = 400_000u64;
        let oracle_errors: u64 = (0..oracle_trials)
            .into_par_iter()
            .map(|t| {
                let mut rng = task_stream(0x0a11ce, &[c as u64, t]);
                let mut p = 0.0;
                for _ in 0..params.r {
                    if unit_open(&mut rng) < f {
                        p += box_muller(&mut rng);
                    } else {
                        loop {
                            let x = box_muller(&mut rng).abs();
                            if x >= params.tau {
                                p += x;
                                break;
                            }
                        }
                    }
                }
                u64::from(p < 0.0)
            })
            .sum();
        let p_oracle = oracle_errors as f64 / oracle_trials as f64;
        let se = (p_oracle * (1.0 - p_oracle) / counts.bits as f64
            + p_oracle * (1.0 - p_oracle) / oracle_trials as f64)
            .sqrt();
        assert!(
            (counts.rate() - p_oracle).abs() < 4.0 * se,
            "f={f}: {} vs {p_oracle}",
            counts.rate()
        );
    }
    assert!(mu_check > 1.27);
}

#[test]
fn small_erasure_is_harmless_at_defaults() {
    let params = CodecParams::default_payload();
    let counts = simulate_single_stage(
        &params,
        &ChannelSpec::Erasure { fraction: 0.05 },
        200,
        14,
        0,
    )
    .unwrap();
    assert_eq!(counts.errors, 0);
}

#[test]
fn wrong_master_key_gives_chance_agreement() {
    let params = TwoStageParams::sd21();
    let mut rng = stream_from_u64(20);
    let mut agree = 0usize;
    let mut total = 0usize;
    while total < 100_000 {
        let master = MasterKey::random(&mut rng);
        let wrong = MasterKey::random(&mut rng);
        let payload = WatermarkBits::random(&mut rng, 256);
        let enc = encode_two_stage(&params, &master, &payload, &mut rng).unwrap();
        let dec = decode_two_stage(&params, &wrong, &enc.noise).unwrap();
        agree += dec.payload.agreement(&payload);
        total += 256;
    }
    let frac = agree as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn forced_session_key_error_cascades() {
    let params = TwoStageParams::sd21();
    let mut rng = stream_from_u64(21);
    let master = MasterKey::random(&mut rng);
    let mut agree = 0usize;
    let mut total = 0usize;
    while total < 100_000 {
        let payload = WatermarkBits::random(&mut rng, 256);
        let enc = encode_two_stage(&params, &master, &payload, &mut rng).unwrap();
        let mut v = enc.noise.into_inner();
        let fresh = NoiseVector::standard_normal(&mut rng, params.stage1.n);
        v[..params.stage1.n].copy_from_slice(fresh.as_slice());
        let dec = decode_two_stage(&params, &master, &NoiseVector::new(v).unwrap()).unwrap();
        if dec.session_key == enc.session_key {
            continue; // 2^-16 chance of a lucky key
        }
        agree += dec.payload.agreement(&payload);
        total += 256;
    }
    let frac = agree as f64 / total as f64;
    assert!((frac - 0.5).abs() < 0.02, "{frac}");
}

#[test]
fn session_key_success_rate_matches_per_bit_bep() {
    // σ = 5 puts the stage-1 per-bit error near 2e-3.
    let params = TwoStageParams::sd21();
    let sigma = 5.0;
    let eps = analytic_bep(params.stage1.n, params.stage1.m, params.stage1.tau, sigma)
        .unwrap()
        .p_e;
    let predicted = (1.0 - eps).powi(params.stage1.m as i32);
    let trials = 4000;
    let channel = ChannelSpec::Awgn { sigma };
    let master = MasterKey::from_bytes([7; 32]);
    let ok: usize = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = task_stream(22, &[t]);
            let payload = WatermarkBits::random(&mut rng, 256);
            let enc = encode_two_stage(&params, &master, &payload, &mut rng).unwrap();
            let noisy = channel.apply(&enc.noise, &mut rng).unwrap();
            usize::from(
                decode_two_stage(&params, &master, &noisy)
                    .unwrap()
                    .session_key
                    == enc.session_key,
            )
        })
        .sum();
    let rate = ok as f64 / trials as f64;
    let se = (predicted * (1.0 - predicted) / trials as f64).sqrt();
    assert!(
        (rate - predicted).abs() < 3.0 * se + 1e-3,
        "{rate} vs {predicted}"
    );
}

#[test]
fn detection_under_awgn_stays_far_above_threshold() {
    let params = TwoStageParams::sd21();
    let mut rng = stream_from_u64(23);
    let master = MasterKey::random(&mut rng);
    let t = tail_moments(DEFAULT_TAU).unwrap();
    let (mk, rk) = (params.stage1.m as f64, params.stage1.r as f64);
    let sigma = 2.0;
    // E|N(a, s²)| = s·√(2/π)·exp(−a²/2s²) + a·(1 − 2Φ(−a/s))
    let a = rk * t.mu;
    let s = (rk * (t.dvar + sigma * sigma)).sqrt();
    let folded = s * (2.0 / PI).sqrt() * (-a * a / (2.0 * s * s)).exp()
        + a * (1.0 - 2.0 * t2smark::std_normal_cdf(-a / s).unwrap());
    let expected = mk * folded;

    let null = NullModel::for_params(&params);
    let d = null.mean + t2smark::std_normal_quantile(1.0 - 1e-6).unwrap() * null.sd();
    let mut sum = 0.0;
    let reps = 200;
    for _ in 0..reps {
        let enc = encode_two_stage(
            &params,
            &master,
            &WatermarkBits::random(&mut rng, 256),
            &mut rng,
        )
        .unwrap();
        let noisy = ChannelSpec::Awgn { sigma }
            .apply(&enc.noise, &mut rng)
            .unwrap();
        let l = detection_statistic(&params, &master, &noisy).unwrap();
        assert!(l > 5.0 * d);
        sum += l;
    }
    assert!((sum / reps as f64 / expected - 1.0).abs() < 0.01);
}

#[test]
fn same_key_reencoding_reproduces_with_same_stream() {
    let params = CodecParams::new(4096, 64, DEFAULT_TAU).unwrap();
    let key = MasterKey::from_bytes([9; 32]);
    let map = SupportMap::derive(&key.derivation_key(), params.n, params.m, params.r).unwrap();
    let bits = WatermarkBits::random(&mut stream_from_u64(1), params.m);
    let a = encode(&params, &map, &bits, &mut stream_from_u64(2)).unwrap();
    let b = encode(&params, &map, &bits, &mut stream_from_u64(2)).unwrap();
    assert_eq!(a, b);
    assert_eq!(decode(&map, &a).unwrap(), bits);
}
