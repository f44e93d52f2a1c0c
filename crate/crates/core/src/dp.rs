//! Slice-sampled stick-breaking mixture over attention-probability vectors.
//!
//! Components are stored densely `0..K*` and never relabelled mid-run.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{stick_weights, ConsiderationState, Hyperparams, MixtureState};
use crate::random::{beta, categorical_log, gamma, uniform_open};

pub const Q_FLOOR: f64 = 1e-12;
const MAX_COMPONENTS: usize = 100_000;

/// Occupancy and per-category inclusion counts for each active component.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterStats {
    pub counts: Vec<usize>,
    pub inclusion: Vec<Vec<usize>>,
}

impl ClusterStats {
    pub fn compute(cs: &ConsiderationState, assign: &[usize], k_star: usize) -> Self {
        let n_alt = cs.n_alt();
        let mut counts = vec![0; k_star];
        let mut inclusion = vec![vec![0; n_alt]; k_star];
        for (i, &h) in assign.iter().enumerate() {
            counts[h] += 1;
            for (acc, &b) in inclusion[h].iter_mut().zip(cs.row(i)) {
                *acc += usize::from(b);
            }
        }
        Self { counts, inclusion }
    }

    pub fn k_star(&self) -> usize {
        self.counts.len()
    }
}

fn clamp_q(q: f64) -> f64 {
    q.clamp(Q_FLOOR, 1.0 - Q_FLOOR)
}

/// `q_{hj} ~ Beta(a_j + sum C_ij, b_j + sum (1 - C_ij))` over members of `h`;
/// empty components draw from the prior.
pub fn sample_q<R: Rng + ?Sized>(stats: &ClusterStats, hyper: &Hyperparams, rng: &mut R) -> Result<Vec<Vec<f64>>> {
    if stats.k_star() == 0 {
        return Err(Error::InvalidParameter("K* must be at least 1".into()));
    }
    stats
        .counts
        .iter()
        .zip(&stats.inclusion)
        .map(|(&n_h, inc)| {
            inc.iter()
                .enumerate()
                .map(|(j, &k)| {
                    let a = hyper.q_a[j] + k as f64;
                    let b = hyper.q_b[j] + (n_h - k) as f64;
                    beta(a, b, rng).map(clamp_q)
                })
                .collect()
        })
        .collect()
}

pub fn prior_q_row<R: Rng + ?Sized>(hyper: &Hyperparams, rng: &mut R) -> Result<Vec<f64>> {
    hyper.q_a.iter().zip(&hyper.q_b).map(|(&a, &b)| beta(a, b, rng).map(clamp_q)).collect()
}

/// `V_h ~ Beta(1 + n_h, alpha + sum_{l > h} n_l)`.
pub fn sample_sticks<R: Rng + ?Sized>(stats: &ClusterStats, alpha: f64, rng: &mut R) -> Result<Vec<f64>> {
    if !(alpha > 0.0) {
        return Err(Error::InvalidParameter(format!("alpha must be positive, got {alpha}")));
    }
    let mut tail: usize = stats.counts.iter().sum();
    stats
        .counts
        .iter()
        .map(|&n_h| {
            tail -= n_h;
            beta(1.0 + n_h as f64, alpha + tail as f64, rng).map(|v| v.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16))
        })
        .collect()
}

/// `u_i ~ U(0, w_{S_i}]`.
pub fn sample_slices<R: Rng + ?Sized>(assign: &[usize], weights: &[f64], rng: &mut R) -> Vec<f64> {
    assign.iter().map(|&s| weights[s] * (1.0 - uniform_open(rng)).max(f64::MIN_POSITIVE)).collect()
}

/// Smallest `K` with `sum_{h <= K} w_h > 1 - u_min`, if reached.
pub fn required_k(weights: &[f64], u_min: f64) -> Option<usize> {
    let mut cum = 0.0;
    for (h, &w) in weights.iter().enumerate() {
        cum += w;
        if cum > 1.0 - u_min {
            return Some(h + 1);
        }
    }
    None
}

/// Appends prior sticks and attention rows until the retained weight exceeds
/// `1 - min_i u_i`, then drops unneeded trailing components. Returns K*.
pub fn extend_sticks<R: Rng + ?Sized>(mix: &mut MixtureState, hyper: &Hyperparams, rng: &mut R) -> Result<usize> {
    let u_min = mix.slice.iter().copied().fold(1.0, f64::min);
    let occupied_top = mix.assign.iter().map(|&s| s + 1).max().unwrap_or(1);
    mix.refresh_weights();
    loop {
        if let Some(k) = required_k(&mix.weights, u_min) {
            // Occupied components always fall inside the required prefix;
            // the max guards against rounding at the boundary.
            let k = k.max(occupied_top).min(mix.sticks.len());
            mix.sticks.truncate(k);
            mix.q.truncate(k);
            mix.weights.truncate(k);
            return Ok(k);
        }
        if mix.sticks.len() >= MAX_COMPONENTS {
            return Err(Error::InvalidParameter("stick extension exceeded component limit".into()));
        }
        let v = beta(1.0, mix.alpha, rng)?.clamp(f64::MIN_POSITIVE, 1.0 - 1e-16);
        mix.sticks.push(v);
        mix.q.push(prior_q_row(hyper, rng)?);
        mix.weights = stick_weights(&mix.sticks);
    }
}

/// Log of the independent-Bernoulli mass of `c` under attention row `q`.
pub fn log_bernoulli_mass(c: &[bool], q: &[f64]) -> f64 {
    c.iter().zip(q).map(|(&b, &p)| if b { p.ln() } else { (-p).ln_1p() }).sum()
}

/// Precomputed `(log q, log(1-q))` per component.
pub struct LogAttention {
    pub log_q: Vec<Vec<f64>>,
    pub log_1mq: Vec<Vec<f64>>,
}

impl LogAttention {
    pub fn new(q: &[Vec<f64>]) -> Self {
        Self {
            log_q: q.iter().map(|r| r.iter().map(|p| p.ln()).collect()).collect(),
            log_1mq: q.iter().map(|r| r.iter().map(|p| (-p).ln_1p()).collect()).collect(),
        }
    }

    pub fn mass(&self, h: usize, c: &[bool]) -> f64 {
        c.iter().zip(self.log_q[h].iter().zip(&self.log_1mq[h])).map(|(&b, (lq, l1))| if b { lq } else { l1 }).sum()
    }
}

/// Draws `S_i` over components with `w_h >= u_i`.
pub fn sample_assignment_one<R: Rng + ?Sized>(
    i: usize,
    c: &[bool],
    u: f64,
    weights: &[f64],
    la: &LogAttention,
    rng: &mut R,
) -> Result<usize> {
    let logw: Vec<f64> =
        weights.iter().enumerate().map(|(h, &w)| if u <= w { la.mass(h, c) } else { f64::NEG_INFINITY }).collect();
    categorical_log(&logw, rng).ok_or(Error::NoAdmissibleComponent(i))
}

pub fn sample_assignments<R: Rng + ?Sized>(
    cs: &ConsiderationState,
    slice: &[f64],
    weights: &[f64],
    q: &[Vec<f64>],
    rng: &mut R,
) -> Result<Vec<usize>> {
    let la = LogAttention::new(q);
    (0..cs.n()).map(|i| sample_assignment_one(i, cs.row(i), slice[i], weights, &la, rng)).collect()
}

/// Weight on the `Gamma(a + G, b - log eta)` branch of the Escobar-West
/// mixture.
pub fn alpha_mixture_weight(a_alpha: f64, b_alpha: f64, occupied: usize, n: usize, eta: f64) -> f64 {
    let g = occupied as f64;
    let num = a_alpha + g - 1.0;
    let other = n as f64 * (b_alpha - eta.ln());
    if num <= 0.0 {
        return 0.0;
    }
    num / (num + other)
}

/// Escobar-West update: `eta ~ Beta(alpha + 1, n)`, then alpha from the
/// two-component Gamma mixture with rate `b - log eta`.
pub fn sample_alpha<R: Rng + ?Sized>(
    alpha: f64,
    occupied: usize,
    n: usize,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Result<f64> {
    if occupied == 0 || n == 0 {
        return Err(Error::InvalidParameter("alpha update needs at least one occupied component".into()));
    }
    let eta = beta(alpha + 1.0, n as f64, rng)?.max(f64::MIN_POSITIVE);
    let rate = hyper.b_alpha - eta.ln();
    let pi = alpha_mixture_weight(hyper.a_alpha, hyper.b_alpha, occupied, n, eta);
    let shape =
        if rng.random::<f64>() < pi { hyper.a_alpha + occupied as f64 } else { hyper.a_alpha + occupied as f64 - 1.0 };
    Ok(gamma(shape, rate, rng).max(f64::MIN_POSITIVE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::random::seeded;

    fn hyper(j: usize) -> Hyperparams {
        let mut h = Hyperparams::defaults(j, 0);
        h.set_uniform_q(j);
        h
    }

    #[test]
    fn conjugate_count_update() {
        let cs = ConsiderationState::full(3, 2);
        let stats = ClusterStats::compute(&cs, &[0, 0, 0], 1);
        assert_eq!(stats.inclusion[0], vec![3, 3]);
        let mut rng = seeded(1);
        // Beta(4, 1) has mean 0.8
        let m: f64 = (0..40_000).map(|_| sample_q(&stats, &hyper(2), &mut rng).unwrap()[0][0]).sum::<f64>() / 40_000.0;
        assert!((m - 0.8).abs() < 0.005, "{m}");
    }

    #[test]
    fn empty_component_draws_prior() {
        let cs = ConsiderationState::full(2, 1);
        let stats = ClusterStats::compute(&cs, &[0, 0], 2);
        assert_eq!(stats.counts, vec![2, 0]);
        let mut h = hyper(1);
        h.q_a = vec![2.0];
        h.q_b = vec![6.0];
        let mut rng = seeded(2);
        let m: f64 = (0..40_000).map(|_| sample_q(&stats, &h, &mut rng).unwrap()[1][0]).sum::<f64>() / 40_000.0;
        assert!((m - 0.25).abs() < 0.005);
    }

    #[test]
    fn empty_sticks_are_uniform_under_unit_alpha() {
        let stats = ClusterStats { counts: vec![0, 0], inclusion: vec![vec![], vec![]] };
        let mut rng = seeded(3);
        let draws: Vec<f64> = (0..40_000).map(|_| sample_sticks(&stats, 1.0, &mut rng).unwrap()[0]).collect();
        let mean = draws.iter().sum::<f64>() / 4e4;
        let below = draws.iter().filter(|&&v| v < 0.25).count() as f64 / 4e4;
        assert!((mean - 0.5).abs() < 0.01);
        assert!((below - 0.25).abs() < 0.01);
    }

    #[test]
    fn all_in_first_component() {
        let stats = ClusterStats { counts: vec![10, 0], inclusion: vec![vec![], vec![]] };
        let mut rng = seeded(4);
        let m: f64 = (0..40_000).map(|_| sample_sticks(&stats, 2.0, &mut rng).unwrap()[0]).sum::<f64>() / 4e4;
        assert!((m - 11.0 / 13.0).abs() < 0.005);
    }

    #[test]
    fn single_atom_slices_are_uniform() {
        let mut rng = seeded(5);
        let u = sample_slices(&vec![0; 50_000], &[1.0], &mut rng);
        let mean = u.iter().sum::<f64>() / 5e4;
        assert!((mean - 0.5).abs() < 0.01);
        assert!(u.iter().all(|&x| x > 0.0 && x <= 1.0));
    }

    #[test]
    fn truncation_rule() {
        assert_eq!(required_k(&[0.5, 0.3], 0.4), Some(2));
        assert_eq!(required_k(&[0.5], 0.4), None);
        assert_eq!(required_k(&[0.5], 0.6), Some(1));
    }

    #[test]
    fn extension_covers_and_is_deterministic() {
        let run = |seed| {
            let mut rng = seeded(seed);
            let mut ks = Vec::new();
            let mut mix = MixtureState {
                sticks: vec![0.5],
                weights: vec![0.5],
                q: vec![vec![0.5; 3]],
                assign: vec![0; 4],
                slice: vec![0.4, 0.3, 0.01, 0.2],
                alpha: 1.0,
            };
            for _ in 0..20 {
                let k = extend_sticks(&mut mix, &hyper(3), &mut rng).unwrap();
                mix.check_invariants().unwrap();
                ks.push(k);
                mix.slice = sample_slices(&mix.assign, &mix.weights, &mut rng);
            }
            ks
        };
        assert_eq!(run(9), run(9));
        assert!(run(9).iter().all(|&k| k >= 1));
    }

    #[test]
    fn single_admissible_component() {
        let cs = ConsiderationState::full(1, 2);
        let mut rng = seeded(6);
        for _ in 0..200 {
            let s = sample_assignments(&cs, &[0.45], &[0.3, 0.5, 0.1], &vec![vec![0.5; 2]; 3], &mut rng).unwrap();
            assert_eq!(s, vec![1]);
        }
        assert!(matches!(
            sample_assignments(&cs, &[0.9], &[0.3, 0.5], &vec![vec![0.5; 2]; 2], &mut rng),
            Err(Error::NoAdmissibleComponent(0))
        ));
    }

    #[test]
    fn identical_rows_give_uniform_assignment() {
        let cs = ConsiderationState::full(1, 3);
        let mut rng = seeded(7);
        let q = vec![vec![0.3, 0.6, 0.9]; 2];
        let ones = (0..40_000)
            .filter(|_| sample_assignments(&cs, &[0.1], &[0.5, 0.4], &q, &mut rng).unwrap()[0] == 1)
            .count() as f64;
        assert!((ones / 4e4 - 0.5).abs() < 0.01);
    }

    #[test]
    fn alpha_rate_and_weight() {
        let eta: f64 = 0.3;
        assert!(4.0 - eta.ln() > 4.0);
        let w = alpha_mixture_weight(2.0, 4.0, 1, 50, eta);
        let want = 2.0 / (2.0 + 50.0 * (4.0 - eta.ln()));
        assert!((w - want).abs() < 1e-15);
    }
}
