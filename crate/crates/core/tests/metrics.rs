use mambattention::metrics::{estoi, si_sdr, ssnr, ssnr_frames, MetricReport, SI_SDR_CAP};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn gauss(len: usize, seed: u64) -> Vec<f64> {
    let mut r = ChaCha8Rng::seed_from_u64(seed);
    (0..len).map(|_| r.sample(StandardNormal)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `ref + n` with `n` orthogonal to `ref` and `|n|^2 = |ref|^2 / ratio`.
fn orthogonal_pair(len: usize, ratio: f64, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let r = gauss(len, seed);
    let mut n = gauss(len, seed + 1000);
    let k = dot(&n, &r) / dot(&r, &r);
    n.iter_mut().zip(&r).for_each(|(v, x)| *v -= k * x);
    let s = (dot(&r, &r) / ratio / dot(&n, &n)).sqrt();
    let est = r.iter().zip(&n).map(|(x, v)| x + s * v).collect();
    (r, est)
}

#[test]
fn orthogonal_noise_at_one_tenth_energy_is_ten_db() {
    for seed in 0..5 {
        let (r, e) = orthogonal_pair(8000, 10.0, seed);
        let v = si_sdr(&r, &e).unwrap();
        assert!((v - 10.0).abs() < 1e-6, "{v}");
    }
}

#[test]
fn si_sdr_caps_and_rejections() {
    let r = gauss(1000, 1);
    assert_eq!(si_sdr(&r, &r).unwrap(), SI_SDR_CAP);
    let scaled: Vec<f64> = r.iter().map(|v| -3.5 * v).collect();
    assert_eq!(si_sdr(&r, &scaled).unwrap(), SI_SDR_CAP);
    assert!(si_sdr(&[0.0; 10], &[1.0; 10]).is_err());
    assert!(si_sdr(&r, &r[..999]).is_err());
}

#[test]
fn si_sdr_falls_as_orthogonal_noise_grows() {
    let vals: Vec<f64> = [100.0, 10.0, 1.0, 0.1]
        .iter()
        .map(|&ratio| {
            let (r, e) = orthogonal_pair(4000, ratio, 7);
            si_sdr(&r, &e).unwrap()
        })
        .collect();
    for (v, want) in vals.iter().zip([20.0, 10.0, 0.0, -10.0]) {
        assert!((v - want).abs() < 1e-6);
    }
}

#[test]
fn negated_estimate_gives_minus_six_db_per_frame() {
    let r = gauss(16000, 2);
    let neg: Vec<f64> = r.iter().map(|v| -v).collect();
    let want = 10.0 * 0.25f64.log10();
    for f in ssnr_frames(&r, &neg).unwrap() {
        assert!((f - want).abs() < 1e-9);
    }
    assert!((ssnr(&r, &neg).unwrap() + 6.02).abs() < 0.01);
}

#[test]
fn identical_signals_hit_the_upper_clamp() {
    let r = gauss(4000, 3);
    assert_eq!(ssnr(&r, &r).unwrap(), 35.0);
    assert!(ssnr(&[0.0; 2048], &[0.0; 2048]).is_err());
}

#[test]
fn zero_db_noise_in_every_frame() {
    // equal energy in every 256-sample block makes every 512/256 frame 0 dB
    let r = gauss(256 * 40, 4);
    let n = gauss(256 * 40, 5);
    let mut est = r.clone();
    for b in 0..40 {
        let (rs, ns) = (&r[b * 256..(b + 1) * 256], &n[b * 256..(b + 1) * 256]);
        let g = (dot(rs, rs) / dot(ns, ns)).sqrt();
        for i in 0..256 {
            est[b * 256 + i] -= g * ns[i];
        }
    }
    assert!(ssnr(&r, &est).unwrap().abs() < 0.01);
}

#[test]
fn estoi_of_a_signal_with_itself_is_one() {
    let x: Vec<f64> = gauss(24000, 6)
        .iter()
        .enumerate()
        .map(|(i, v)| v * (1.0 + (i as f64 / 1600.0).sin()))
        .collect();
    assert!((estoi(&x, &x, 16000).unwrap() - 1.0).abs() < 1e-9);
}

#[test]
fn estoi_of_independent_noises_is_near_zero() {
    for t in 0..10 {
        let s = estoi(&gauss(24000, 100 + t), &gauss(24000, 200 + t), 16000).unwrap();
        assert!(s.abs() < 0.1, "trial {t}: {s}");
    }
}

#[test]
fn estoi_rejects_short_input_and_other_rates() {
    let x = gauss(1000, 7);
    assert!(estoi(&x, &x, 16000).is_err());
    let y = gauss(24000, 8);
    assert!(estoi(&y, &y, 8000).is_err());
}

#[test]
fn estoi_is_scale_invariant() {
    let r = gauss(20000, 9);
    let e: Vec<f64> = r.iter().zip(gauss(20000, 10)).map(|(a, b)| a + 0.7 * b).collect();
    let base = estoi(&r, &e, 16000).unwrap();
    assert!((-1.0..=1.0).contains(&base));
    for a in [0.01, 3.0, 250.0] {
        let es: Vec<f64> = e.iter().map(|v| v * a).collect();
        let rs: Vec<f64> = r.iter().map(|v| v * a).collect();
        assert!((estoi(&r, &es, 16000).unwrap() - base).abs() < 1e-9);
        assert!((estoi(&rs, &e, 16000).unwrap() - base).abs() < 1e-9);
    }
}

#[test]
fn report_statistics_match_direct_recomputation() {
    let mut rep = MetricReport::new(&["a", "b"]);
    let rows = [[1.0, 2.0], [4.0, f64::NAN], [-2.5, 8.0], [0.5, 1.0]];
    for (i, r) in rows.iter().enumerate() {
        rep.push(format!("f{i}"), r.to_vec()).unwrap();
    }
    assert!(rep.push("bad", vec![1.0]).is_err());
    for c in 0..2 {
        let vals: Vec<f64> = rows.iter().map(|r| r[c]).filter(|v| v.is_finite()).collect();
        let m = vals.iter().sum::<f64>() / vals.len() as f64;
        let s = (vals.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / vals.len() as f64).sqrt();
        assert!((rep.mean()[c] - m).abs() < 1e-12);
        assert!((rep.std()[c] - s).abs() < 1e-12);
    }
    let mut buf = Vec::new();
    rep.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    let lines: Vec<&str> = text.lines().collect();
    assert_eq!(lines[0], "id,a,b");
    assert_eq!(lines.len(), 1 + rows.len() + 2);
    assert!(lines[2].ends_with("NaN"));
    assert!(lines[5].starts_with("mean,") && lines[6].starts_with("std,"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn si_sdr_is_invariant_to_positive_scaling(seed in any::<u64>(), a in 1e-3f64..1e3) {
        let r = gauss(600, seed);
        let e: Vec<f64> = r.iter().zip(gauss(600, seed ^ 9)).map(|(x, n)| x + 0.5 * n).collect();
        let es: Vec<f64> = e.iter().map(|v| v * a).collect();
        prop_assert!((si_sdr(&r, &e).unwrap() - si_sdr(&r, &es).unwrap()).abs() < 1e-9);
    }

    #[test]
    fn ssnr_frames_are_clamped_and_order_free(seed in any::<u64>(), level in 1e-4f64..1e2) {
        let r = gauss(4096, seed);
        let e: Vec<f64> = r.iter().zip(gauss(4096, seed ^ 3)).map(|(x, n)| x + level * n).collect();
        let f = ssnr_frames(&r, &e).unwrap();
        prop_assert!(f.iter().all(|v| (-10.0..=35.0).contains(v)));
        let mut rev = f.clone();
        rev.reverse();
        let m = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
        prop_assert!((m(&f) - m(&rev)).abs() < 1e-12);
        prop_assert!((ssnr(&r, &e).unwrap() - m(&f)).abs() < 1e-12);
    }
}
