use statrs::distribution::{ContinuousCDF, Normal};

use sdebatch::rng::{normals_for_step, philox_block, to_uniform, CounterKey};

fn draws(count: usize, seed: u64) -> Vec<f64> {
    // 7 equations per step, so blocks straddle the Box-Muller pairs.
    let mut out = Vec::with_capacity(count);
    let mut step = 0u64;
    while out.len() < count {
        for orbit in 0..4u32 {
            out.extend(normals_for_step(seed, orbit, step, 7));
        }
        step += 1;
    }
    out.truncate(count);
    out
}

#[test]
fn normal_moments() {
    let xs = draws(1_000_000, 3);
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let skew = xs.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / n / var.powf(1.5);
    let kurt = xs.iter().map(|x| (x - mean).powi(4)).sum::<f64>() / n / (var * var);
    assert!(mean.abs() < 0.01, "mean {mean}");
    assert!((var - 1.0).abs() < 0.01, "var {var}");
    assert!(skew.abs() < 0.02, "skew {skew}");
    assert!((kurt - 3.0).abs() < 0.05, "kurtosis {kurt}");
}

#[test]
fn kolmogorov_smirnov_against_standard_normal() {
    let mut xs = draws(200_000, 99);
    xs.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let n = xs.len() as f64;
    let d = xs
        .iter()
        .enumerate()
        .map(|(k, &x)| {
            let f = normal.cdf(x);
            (f - k as f64 / n).abs().max(((k + 1) as f64 / n - f).abs())
        })
        .fold(0.0, f64::max);
    // 1% critical value.
    assert!(d < 1.63 / n.sqrt(), "KS statistic {d}");
}

#[test]
fn uniform_words_are_balanced() {
    let mut bins = [0usize; 16];
    let mut mean = 0.0;
    let blocks = 1 << 16;
    for c in 0..blocks {
        let ck = CounterKey { key: [17, 4], counter: [c, 0, 0, 0] };
        for w in philox_block(ck) {
            bins[(w >> 28) as usize] += 1;
            mean += to_uniform(w);
        }
    }
    let total = (blocks * 4) as f64;
    mean /= total;
    assert!((mean - 0.5).abs() < 0.005, "mean {mean}");
    let expected = total / 16.0;
    let chi2: f64 = bins.iter().map(|&b| (b as f64 - expected).powi(2) / expected).sum();
    // 15 degrees of freedom, 0.1% critical value.
    assert!(chi2 < 37.7, "chi-square {chi2}");
}

#[test]
fn streams_for_neighbouring_orbits_are_uncorrelated() {
    let a: Vec<f64> = (0..100_000u64).map(|s| normals_for_step(5, 0, s, 1)[0]).collect();
    let b: Vec<f64> = (0..100_000u64).map(|s| normals_for_step(5, 1, s, 1)[0]).collect();
    let corr = a.iter().zip(&b).map(|(x, y)| x * y).sum::<f64>() / a.len() as f64;
    assert!(corr.abs() < 0.015, "correlation {corr}");
}
