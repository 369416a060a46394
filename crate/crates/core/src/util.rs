//! Small shared helpers: seeded streams, summary statistics, fits and quadrature.

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

/// Seed-derivation tags, one per random primitive.
pub mod tag {
    pub const GFF: u64 = 0x4746_4600;
    pub const NOISE: u64 = 0x4e4f_4953;
    pub const BRIDGE: u64 = 0x4252_4447;
    pub const PCN: u64 = 0x5043_4e00;
    pub const PROBE: u64 = 0x5052_4f42;
    pub const QUERY: u64 = 0x5155_4552;
}

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Independent generator for `(master seed, purpose tag, member id)`.
pub fn stream_rng(seed: u64, tag: u64, member: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(tag)));
    rng.set_stream(member);
    rng
}

/// Complex Gaussian with E z = 0, E|z|² = var and independent real/imaginary parts.
pub fn complex_normal<R: Rng + ?Sized>(rng: &mut R, var: f64) -> Complex64 {
    let s = (0.5 * var).sqrt();
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    Complex64::new(s * re, s * im)
}

/// Sample mean and its standard error.
pub fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::INFINITY);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Least-squares line y ≈ slope·x + intercept.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64) {
    assert_eq!(x.len(), y.len());
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let slope = sxy / sxx;
    (slope, my - slope * mx)
}

/// Slope of log y against log x.
pub fn loglog_slope(x: &[f64], y: &[f64]) -> f64 {
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    linear_fit(&lx, &ly).0
}

fn legendre_pair(n: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    (p1, p0)
}

/// Gauss–Legendre nodes and weights on [a, b].
pub fn gauss_legendre(n: usize, a: f64, b: f64) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let half = 0.5 * (b - a);
    let mid = 0.5 * (b + a);
    for i in 0..(n + 1) / 2 {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, pm1) = legendre_pair(n, z);
            let dz = p / (n as f64 * (z * p - pm1) / (z * z - 1.0));
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (p, pm1) = legendre_pair(n, z);
        let dp = n as f64 * (z * p - pm1) / (z * z - 1.0);
        let wi = half * 2.0 / ((1.0 - z * z) * dp * dp);
        x[i] = mid - half * z;
        x[n - 1 - i] = mid + half * z;
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

/// Hex SHA-256 of a byte string.
pub fn sha256_hex(bytes: &[u8]) -> String {
    use sha2::{Digest, Sha256};
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        for n in [1, 2, 5, 12, 40] {
            let (x, w) = gauss_legendre(n, -1.0, 2.0);
            for deg in 0..(2 * n) {
                let q: f64 = x.iter().zip(&w).map(|(xi, wi)| wi * xi.powi(deg as i32)).sum();
                let exact = (2f64.powi(deg as i32 + 1) - (-1f64).powi(deg as i32 + 1)) / (deg as f64 + 1.0);
                assert!((q - exact).abs() <= 1e-11 * exact.abs().max(1.0), "n={n} deg={deg}");
            }
        }
    }

    #[test]
    fn gauss_legendre_large_order_oscillatory() {
        let (x, w) = gauss_legendre(600, 0.0, 1.0);
        let k = 1500.0;
        let q: Complex64 = x.iter().zip(&w).map(|(t, wi)| Complex64::from_polar(*wi, k * t)).sum();
        let exact = (Complex64::from_polar(1.0, k) - 1.0) / Complex64::new(0.0, k);
        assert!((q - exact).norm() < 1e-12);
    }

    #[test]
    fn streams_are_reproducible_and_distinct() {
        let a: u64 = stream_rng(7, tag::GFF, 3).gen();
        let b: u64 = stream_rng(7, tag::GFF, 3).gen();
        let c: u64 = stream_rng(7, tag::GFF, 4).gen();
        let d: u64 = stream_rng(7, tag::NOISE, 3).gen();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_ne!(a, d);
    }

    #[test]
    fn fit_recovers_line() {
        let x = [1.0, 2.0, 3.0, 4.0];
        let y: Vec<f64> = x.iter().map(|v| 2.5 * v - 1.0).collect();
        let (s, i) = linear_fit(&x, &y);
        assert!((s - 2.5).abs() < 1e-12 && (i + 1.0).abs() < 1e-12);
    }
}
