//! Seeded RNG streams and the handful of distributions the samplers need.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};

pub type SimRng = ChaCha8Rng;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Independent stream keyed by `(seed, iteration, block, index)`. Draws for a
/// given key never depend on thread count or on how many other streams were
/// used.
pub fn stream(seed: u64, iter: u64, block: u64, index: u64) -> SimRng {
    let mut key = [0u8; 32];
    let mut h = splitmix(seed);
    for (k, part) in [iter, block, index, 0x5eed].into_iter().enumerate() {
        h = splitmix(h ^ part);
        key[k * 8..(k + 1) * 8].copy_from_slice(&h.to_le_bytes());
    }
    SimRng::from_seed(key)
}

pub fn seeded(seed: u64) -> SimRng {
    SimRng::seed_from_u64(seed)
}

/// Open-interval uniform on (0, 1).
pub fn uniform_open<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    loop {
        let u: f64 = rng.random();
        if u > 0.0 {
            return u;
        }
    }
}

pub fn std_normal<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

/// Gamma draw with shape/rate parameterisation.
pub fn gamma<R: Rng + ?Sized>(shape: f64, rate: f64, rng: &mut R) -> f64 {
    Gamma::new(shape, 1.0 / rate).expect("positive gamma parameters").sample(rng)
}

/// Log of a unit-rate Gamma draw, stable for shapes far below one.
pub fn ln_gamma_draw<R: Rng + ?Sized>(shape: f64, rng: &mut R) -> f64 {
    if shape >= 1.0 {
        Gamma::new(shape, 1.0).expect("positive shape").sample(rng).ln()
    } else {
        // G_a = G_{a+1} * U^{1/a}
        let g: f64 = Gamma::new(shape + 1.0, 1.0).expect("positive shape").sample(rng);
        g.ln() + uniform_open(rng).ln() / shape
    }
}

/// Beta draw computed in log space so tiny shapes do not collapse to exact
/// 0 or 1 through underflow of the gamma variates.
pub fn beta<R: Rng + ?Sized>(a: f64, b: f64, rng: &mut R) -> Result<f64> {
    if !(a > 0.0 && b > 0.0 && a.is_finite() && b.is_finite()) {
        return Err(Error::InvalidParameter(format!("Beta({a}, {b})")));
    }
    let la = ln_gamma_draw(a, rng);
    let lb = ln_gamma_draw(b, rng);
    let m = la.max(lb);
    let lse = m + ((la - m).exp() + (lb - m).exp()).ln();
    Ok((la - lse).exp())
}

pub fn bernoulli<R: Rng + ?Sized>(p: f64, rng: &mut R) -> bool {
    rng.random::<f64>() < p
}

/// Draw from N(mean, cov) given the lower Cholesky factor of `cov`.
pub fn mvn_chol<R: Rng + ?Sized>(mean: &[f64], chol: &DMatrix<f64>, rng: &mut R) -> Vec<f64> {
    let e = DVector::from_iterator(mean.len(), (0..mean.len()).map(|_| std_normal(rng)));
    let d = chol * e;
    mean.iter().zip(d.iter()).map(|(m, x)| m + x).collect()
}

/// Wishart(df, scale) draw by the Bartlett decomposition: with `L L' = scale`
/// and `A` lower triangular holding `sqrt(chi2(df - k))` on the diagonal and
/// standard normals below it, `W = L A A' L'`.
pub fn wishart<R: Rng + ?Sized>(df: f64, scale: &DMatrix<f64>, rng: &mut R) -> Result<DMatrix<f64>> {
    let d = scale.nrows();
    if df <= d as f64 - 1.0 {
        return Err(Error::InvalidParameter(format!("Wishart df {df} too small for dimension {d}")));
    }
    let l = scale.clone().cholesky().ok_or_else(|| Error::NotSpd("Wishart scale".into()))?.l();
    let mut a = DMatrix::<f64>::zeros(d, d);
    for r in 0..d {
        let chi2 = 2.0 * gamma((df - r as f64) / 2.0, 1.0, rng);
        a[(r, r)] = chi2.sqrt();
        for c in 0..r {
            a[(r, c)] = std_normal(rng);
        }
    }
    let la = l * a;
    let w = &la * la.transpose();
    Ok(symmetrize(w))
}

pub fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Log density of N(mean, cov) from the lower Cholesky factor of `cov`.
pub fn mvn_log_density(x: &[f64], mean: &[f64], chol: &DMatrix<f64>) -> f64 {
    let d = x.len();
    let diff = DVector::from_iterator(d, x.iter().zip(mean).map(|(a, b)| a - b));
    let sol = chol.solve_lower_triangular(&diff).expect("non-singular Cholesky factor");
    let log_det: f64 = (0..d).map(|k| chol[(k, k)].ln()).sum::<f64>() * 2.0;
    -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det + sol.norm_squared())
}

/// Fisher-Yates permutation of `0..n`.
pub fn permutation<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}

/// Index drawn from unnormalised log weights.
pub fn categorical_log<R: Rng + ?Sized>(logw: &[f64], rng: &mut R) -> Option<usize> {
    let m = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m == f64::NEG_INFINITY {
        return None;
    }
    let w: Vec<f64> = logw.iter().map(|&l| (l - m).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random::<f64>() * total;
    let mut last = None;
    for (k, &wk) in w.iter().enumerate() {
        if wk > 0.0 {
            last = Some(k);
            if u < wk {
                return Some(k);
            }
            u -= wk;
        }
    }
    last
}
