use hamexpand::catalog::{stein_stein_model, SteinSteinParams};
use hamexpand::mc::{
    read_samples_binary, simulate_black_scholes, simulate_coordinate, simulate_stein_stein, simulate_stein_stein_coupled,
    simulate_terminal,
    tail_slope, write_samples_binary, write_samples_csv, McConfig, TailSlopeOptions,
};
use hamexpand::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, Normal};

fn cfg(n_paths: usize, n_steps: usize, seed: u64) -> McConfig {
    McConfig {
        n_paths,
        n_steps,
        seed,
        ..McConfig::default()
    }
}

fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn black_scholes_mean() {
    let s = simulate_black_scholes(1.0, 0.0, 1.0, &cfg(200_000, 1, 3)).unwrap();
    let (m, v) = mean_var(&s);
    assert!((m + 0.5).abs() < 3.0 * (v / s.len() as f64).sqrt(), "mean {m}");
    assert!((v - 1.0).abs() < 0.02);
}

#[test]
fn stein_stein_vol_variance() {
    let (c, t) = (1.3, 0.8);
    let m = stein_stein_model(&SteinSteinParams::new(0.0, 0.0, c, 0.2, 0.0, t)).unwrap();
    let z = simulate_coordinate(&m, t, &cfg(100_000, 50, 11), 1).unwrap();
    let (mean, var) = mean_var(&z);
    let target = c * c * t;
    let se = target * (2.0 / z.len() as f64).sqrt();
    assert!((var - target).abs() < 3.0 * se, "var {var} vs {target}");
    assert!((mean - 0.2).abs() < 3.0 * (target / z.len() as f64).sqrt());
    assert!(simulate_coordinate(&m, t, &cfg(10, 5, 0), 2).is_err());
}

#[test]
fn generic_and_specialized_kernels_agree() {
    let params = SteinSteinParams::new(0.1, -0.5, 1.0, 0.2, -0.6, 1.0);
    let m = stein_stein_model(&params).unwrap();
    let c = cfg(2_000, 40, 5);
    let a = simulate_terminal(&m, 1.0, &c).unwrap();
    let b = simulate_stein_stein(&params, &c).unwrap();
    for (x, y) in a.iter().zip(&b) {
        assert!((x - y).abs() < 1e-12 * (1.0 + x.abs()));
    }
}

#[test]
fn determinism() {
    let params = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, -0.5, 1.0);
    let c = cfg(20_000, 100, 42);
    let a = simulate_stein_stein(&params, &c).unwrap();
    let b = simulate_stein_stein(&params, &c).unwrap();
    let one = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
    let three = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let d = one.install(|| simulate_stein_stein(&params, &c).unwrap());
    let e = three.install(|| simulate_stein_stein(&params, &c).unwrap());
    let bytes = |v: &[f64]| {
        let mut out = Vec::new();
        write_samples_binary(v, &mut out).unwrap();
        out
    };
    assert_eq!(bytes(&a), bytes(&b));
    assert_eq!(bytes(&a), bytes(&d));
    assert_eq!(bytes(&a), bytes(&e));
    let other = simulate_stein_stein(&params, &cfg(20_000, 100, 43)).unwrap();
    assert_ne!(a, other);

    let anti = McConfig {
        antithetic: true,
        ..cfg(1_000, 1, 9)
    };
    let s = simulate_black_scholes(1.0, 0.0, 1.0, &anti).unwrap();
    for pair in s.chunks(2) {
        assert!((pair[0] + pair[1] + 1.0).abs() < 1e-14);
    }
}

#[test]
fn sample_files() {
    let s = vec![1.5, -0.25, f64::MAX, 0.0];
    let mut bin = Vec::new();
    write_samples_binary(&s, &mut bin).unwrap();
    assert_eq!(&bin[..8], b"HXSAMP01");
    assert_eq!(u64::from_le_bytes(bin[8..16].try_into().unwrap()), 4);
    assert_eq!(bin.len(), 16 + 32);
    assert_eq!(f64::from_le_bytes(bin[16..24].try_into().unwrap()), 1.5);
    assert_eq!(read_samples_binary(bin.as_slice()).unwrap(), s);
    assert!(read_samples_binary(&b"HXSAMP02\0\0\0\0\0\0\0\0"[..]).is_err());
    bin.truncate(30);
    assert!(read_samples_binary(bin.as_slice()).is_err());

    let mut csv = Vec::new();
    write_samples_csv(&[1.5, -0.25], &mut csv).unwrap();
    let text = String::from_utf8(csv).unwrap();
    let rows: Vec<f64> = text.lines().skip(1).map(|l| l.parse().unwrap()).collect();
    assert!(text.starts_with("y\n"));
    assert_eq!(rows, [1.5, -0.25]);
}

fn exponential(n: usize, rate: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = Exp::new(rate).unwrap();
    (0..n).map(|_| rng.sample(d)).collect()
}

#[test]
fn exponential_rate() {
    let s = exponential(200_000, 2.0, 1);
    let r = tail_slope(&s, &TailSlopeOptions::default()).unwrap();
    assert!((r.slope + 2.0).abs() < 3.0 * r.standard_error, "{r:?}");
    assert!((r.c1_estimate - 2.0).abs() < 3.0 * r.standard_error);
    assert!(r.tail_points >= 100);
}

#[test]
fn gaussian_rate() {
    let sigma = 0.7;
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let d = Normal::new(0.0, sigma).unwrap();
    let s: Vec<f64> = (0..1_000_000).map(|_| rng.sample(d)).collect();
    // the Gaussian survival function carries a 1/y prefactor
    let opts = TailSlopeOptions {
        theta: 1,
        survival_log_power: -1.0,
        ..TailSlopeOptions::default()
    };
    let r = tail_slope(&s, &opts).unwrap();
    let rate = 1.0 / (2.0 * sigma * sigma);
    assert!((r.slope + rate).abs() < 3.0 * r.standard_error, "{r:?} vs {rate}");
}

#[test]
fn calibration() {
    let hits = (0..100)
        .filter(|&k| {
            let s = exponential(100_000, 2.0, 1000 + k);
            let opts = TailSlopeOptions {
                seed: k,
                ..TailSlopeOptions::default()
            };
            let r = tail_slope(&s, &opts).unwrap();
            (r.slope + 2.0).abs() < 3.0 * r.standard_error
        })
        .count();
    assert!(hits >= 95, "{hits}/100");
}

#[test]
fn too_few_tail_points() {
    let s = exponential(1_000, 1.0, 3);
    assert!(matches!(tail_slope(&s, &TailSlopeOptions::default()), Err(Error::InsufficientData(_))));
}

#[test]
fn halving_the_step() {
    let params = SteinSteinParams::new(0.0, 0.0, 1.0, 0.2, 0.0, 1.0);
    let c = cfg(1_000_000, 400, 17);
    // coarse and fine schemes share each Brownian path
    let (coarse, fine) = simulate_stein_stein_coupled(&params, &c).unwrap();
    assert_eq!(fine, simulate_stein_stein(&params, &c).unwrap());
    let opts = TailSlopeOptions::default();
    let (a, b) = (tail_slope(&coarse, &opts).unwrap(), tail_slope(&fine, &opts).unwrap());
    assert!((a.slope - b.slope).abs() < b.standard_error, "{} vs {} (se {})", a.slope, b.slope, b.standard_error);
    assert!(simulate_stein_stein_coupled(&params, &cfg(10, 3, 0)).is_err());
}
