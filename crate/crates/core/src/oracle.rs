//! Brute-force references over the full power set of categories.
//!
//! Subsets are encoded as bitmasks: bit `j` set means category `j` (0-based)
//! is included, so index 0 is the empty set.

use crate::cs_sampler::conditional_cs_logpmf;
use crate::error::{Error, Result};
use crate::likelihood::{choice_prob, log_sum_exp, utilities};
use crate::model::{mask_row, PanelDataset, ResponseParams};

pub const ENUMERATION_LIMIT: usize = 20;

fn guard(j: usize) -> Result<()> {
    if j > ENUMERATION_LIMIT {
        Err(Error::EnumerationGuard { j, limit: ENUMERATION_LIMIT })
    } else {
        Ok(())
    }
}

/// Probability vector over all subsets together with the empty-set mass.
#[derive(Debug, Clone, PartialEq)]
pub struct SubsetPmf {
    pub j: usize,
    pub probs: Vec<f64>,
}

impl SubsetPmf {
    pub fn empty_mass(&self) -> f64 {
        self.probs[0]
    }

    pub fn total(&self) -> f64 {
        self.probs.iter().sum()
    }

    /// Mass restricted to nonempty subsets and rescaled to sum to one.
    pub fn nonempty_normalized(&self) -> Vec<f64> {
        let rest = self.total() - self.probs[0];
        let mut out: Vec<f64> = self.probs.iter().map(|p| p / rest).collect();
        out[0] = 0.0;
        out
    }
}

/// Independent-Bernoulli product measure for one attention row, built one
/// coordinate at a time.
pub fn bernoulli_product(q: &[f64]) -> Vec<f64> {
    let mut p = vec![1.0];
    for (j, &qj) in q.iter().enumerate() {
        let mut next = vec![0.0; p.len() * 2];
        for (m, &v) in p.iter().enumerate() {
            next[m] = v * (1.0 - qj);
            next[m | (1 << j)] = v * qj;
        }
        p = next;
    }
    p
}

/// Mixture mass `sum_h w_h prod_j q_hj^c_j (1 - q_hj)^(1 - c_j)` without any
/// requirement that the weights sum to one.
pub fn mixture_cs_mass(weights: &[f64], q: &[Vec<f64>]) -> Result<SubsetPmf> {
    let j = q.first().map_or(0, |r| r.len());
    guard(j)?;
    if weights.len() != q.len() {
        return Err(Error::Index(format!("{} weights for {} attention rows", weights.len(), q.len())));
    }
    let mut probs = vec![0.0; 1 << j];
    for (w, row) in weights.iter().zip(q) {
        if row.len() != j {
            return Err(Error::Index("attention rows of unequal length".into()));
        }
        for (k, &qj) in row.iter().enumerate() {
            if !(0.0..=1.0).contains(&qj) {
                return Err(Error::InvalidProbability { what: format!("attention probability {}", k + 1), value: qj });
            }
        }
        for (acc, p) in probs.iter_mut().zip(bernoulli_product(row)) {
            *acc += w * p;
        }
    }
    Ok(SubsetPmf { j, probs })
}

/// Mixture pmf over every subset, empty set included. Weights must sum to one.
pub fn mixture_cs_pmf(weights: &[f64], q: &[Vec<f64>]) -> Result<SubsetPmf> {
    let total: f64 = weights.iter().sum();
    if (total - 1.0).abs() > 1e-9 || weights.iter().any(|&w| w < 0.0) {
        return Err(Error::InvalidProbability { what: "mixture weights total".into(), value: total });
    }
    mixture_cs_mass(weights, q)
}

/// Exact normalized full conditional of subject `i`'s consideration vector
/// over all `2^n_alt` subsets. Forced-inclusion violators get exactly zero.
pub fn enumerate_cs_posterior(
    i: usize,
    params: &ResponseParams,
    q_row: &[f64],
    data: &PanelDataset,
) -> Result<Vec<f64>> {
    let na = data.n_alt();
    guard(na)?;
    if i >= data.n() {
        return Err(Error::Index(format!("subject {i} of {}", data.n())));
    }
    let mut logp = vec![f64::NEG_INFINITY; 1 << na];
    for (mask, lp) in logp.iter_mut().enumerate().skip(1) {
        *lp = conditional_cs_logpmf(i, &mask_row(mask as u64, na), params, q_row, data)?;
    }
    let z = log_sum_exp(logp.iter().copied());
    Ok(logp.iter().map(|&l| if l == f64::NEG_INFINITY { 0.0 } else { (l - z).exp() }).collect())
}

/// `Pr(Y_it = j)` under a pmf over subsets, mixing logit probabilities over
/// nonempty sets. Empty-set mass is renormalised away.
pub fn marginal_response_prob(
    j: usize,
    params: &ResponseParams,
    data: &PanelDataset,
    i: usize,
    t: usize,
    cs_pmf: &[f64],
) -> Result<f64> {
    let na = data.n_alt();
    guard(na)?;
    if cs_pmf.len() != 1 << na {
        return Err(Error::Index(format!("pmf over {} subsets, expected {}", cs_pmf.len(), 1usize << na)));
    }
    if j >= na {
        return Err(Error::Index(format!("category {j} of {na}")));
    }
    let v = utilities(params, data, i, t)?;
    let mut num = 0.0;
    for (mask, &p) in cs_pmf.iter().enumerate().skip(1) {
        if p > 0.0 && mask >> j & 1 == 1 {
            num += p * choice_prob(j, &mask_row(mask as u64, na), &v)?;
        }
    }
    Ok(num / (1.0 - cs_pmf[0]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::subject_loglik;
    use crate::model::SubjectRecord;
    use crate::random::seeded;
    use proptest::prelude::*;
    use rand::Rng;

    /// Second implementation: explicit double loop over subsets and components.
    fn loop_pmf(w: &[f64], q: &[Vec<f64>]) -> Vec<f64> {
        let j = q[0].len();
        (0..1usize << j)
            .map(|m| {
                let mut total = 0.0;
                for h in 0..w.len() {
                    let mut prod = w[h];
                    for k in 0..j {
                        prod *= if m >> k & 1 == 1 { q[h][k] } else { 1.0 - q[h][k] };
                    }
                    total += prod;
                }
                total
            })
            .collect()
    }

    #[test]
    fn symmetric_product_measure() {
        let p = mixture_cs_pmf(&[1.0], &[vec![0.5, 0.5]]).unwrap();
        for v in &p.probs {
            assert!((v - 0.25).abs() < 1e-15);
        }
        assert!((p.empty_mass() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn degenerate_attention() {
        let p = mixture_cs_pmf(&[1.0], &[vec![1.0, 0.0]]).unwrap();
        assert_eq!(p.probs, vec![0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn two_components_match_loop() {
        let mut rng = seeded(1);
        let q: Vec<Vec<f64>> = (0..2).map(|_| (0..5).map(|_| rng.random::<f64>()).collect()).collect();
        let w = [0.6, 0.4];
        let p = mixture_cs_pmf(&w, &q).unwrap();
        assert!((p.total() - 1.0).abs() < 1e-12);
        for (a, b) in p.probs.iter().zip(loop_pmf(&w, &q)) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn guard_and_weight_checks() {
        assert!(matches!(mixture_cs_pmf(&[1.0], &[vec![0.5; 21]]), Err(Error::EnumerationGuard { .. })));
        assert!(mixture_cs_pmf(&[0.5], &[vec![0.5; 2]]).is_err());
        assert!(mixture_cs_mass(&[0.5], &[vec![0.5; 2]]).is_ok());
    }

    proptest! {
        #[test]
        fn pmf_sums_to_one(k in 1usize..6, j in 1usize..8, seed in any::<u64>()) {
            let mut rng = seeded(seed);
            let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>() + 1e-3).collect();
            let s: f64 = raw.iter().sum();
            let w: Vec<f64> = raw.iter().map(|x| x / s).collect();
            let q: Vec<Vec<f64>> = (0..k).map(|_| (0..j).map(|_| rng.random::<f64>()).collect()).collect();
            let p = mixture_cs_pmf(&w, &q).unwrap();
            prop_assert!((p.total() - 1.0).abs() < 1e-12);
        }
    }

    fn one_subject(j: usize, responses: Vec<usize>, x: Vec<f64>) -> PanelDataset {
        let rec = SubjectRecord { id: 1, responses, x, z: vec![] };
        PanelDataset::from_subjects(j, 1, 0, false, vec![rec]).unwrap()
    }

    #[test]
    fn two_category_hand_computation() {
        // one observation y = 1, zero utilities: L({1}) = 1, L({1,2}) = 1/2
        let d = one_subject(2, vec![0], vec![0.0, 0.0]);
        let p = ResponseParams::for_data(&d);
        let post = enumerate_cs_posterior(0, &p, &[0.5, 0.5], &d).unwrap();
        assert_eq!(post[0], 0.0);
        assert_eq!(post[2], 0.0);
        assert!((post[1] - 2.0 / 3.0).abs() < 1e-14);
        assert!((post[3] - 1.0 / 3.0).abs() < 1e-14);
    }

    #[test]
    fn structural_zeros_are_exact() {
        let d = one_subject(4, vec![0, 2, 0], (0..12).map(|k| (k as f64 * 0.37).sin()).collect());
        let mut p = ResponseParams::for_data(&d);
        p.beta = vec![1.0];
        let post = enumerate_cs_posterior(0, &p, &[0.3, 0.6, 0.5, 0.2], &d).unwrap();
        for (m, &v) in post.iter().enumerate() {
            if m & 0b101 != 0b101 {
                assert_eq!(v, 0.0);
            } else {
                assert!(v > 0.0);
            }
        }
        assert!((post.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        // proportional to likelihood times prior
        let q = [0.3, 0.6, 0.5, 0.2];
        let un = |m: usize| {
            let row = mask_row(m as u64, 4);
            let prior: f64 = (0..4).map(|k| if row[k] { q[k] } else { 1.0 - q[k] }).product();
            subject_loglik(&p, &d, &row, 0).unwrap().exp() * prior
        };
        assert!((post[0b111] / post[0b101] - un(0b111) / un(0b101)).abs() < 1e-12);
    }

    #[test]
    fn full_set_pmf_reduces_to_logit() {
        let d = one_subject(3, vec![1], vec![0.4, -1.0, 0.3]);
        let mut p = ResponseParams::for_data(&d);
        p.beta = vec![0.7];
        let mut pmf = vec![0.0; 8];
        pmf[7] = 1.0;
        let v = utilities(&p, &d, 0, 0).unwrap();
        for j in 0..3 {
            let want = choice_prob(j, &[true; 3], &v).unwrap();
            assert!((marginal_response_prob(j, &p, &d, 0, 0, &pmf).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn zero_utilities_average_one_over_size() {
        let d = one_subject(3, vec![0], vec![0.0; 3]);
        let p = ResponseParams::for_data(&d);
        let mut rng = seeded(2);
        let mut pmf: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        pmf[0] = 0.0;
        let s: f64 = pmf.iter().sum();
        pmf.iter_mut().for_each(|v| *v /= s);
        for j in 0..3 {
            let want: f64 = (1..8usize).filter(|m| m >> j & 1 == 1).map(|m| pmf[m] / m.count_ones() as f64).sum();
            assert!((marginal_response_prob(j, &p, &d, 0, 0, &pmf).unwrap() - want).abs() < 1e-15);
        }
    }

    #[test]
    fn random_instance_matches_triple_loop() {
        let d = one_subject(3, vec![2], vec![0.9, -0.3, 0.2]);
        let mut p = ResponseParams::for_data(&d);
        p.beta = vec![1.3];
        p.delta = vec![0.4, -0.2, 0.0];
        let mut rng = seeded(3);
        let raw: Vec<f64> = (0..8).map(|_| rng.random::<f64>()).collect();
        let s: f64 = raw.iter().sum();
        let pmf: Vec<f64> = raw.iter().map(|v| v / s).collect();
        let v: Vec<f64> = (0..3).map(|j| p.delta[j] + 1.3 * [0.9, -0.3, 0.2][j]).collect();
        for j in 0..3 {
            let mut want = 0.0;
            for a in 0..2usize {
                for b in 0..2usize {
                    for c in 0..2usize {
                        let m = a | b << 1 | c << 2;
                        if m == 0 || m >> j & 1 == 0 {
                            continue;
                        }
                        let den: f64 = (0..3).filter(|k| m >> k & 1 == 1).map(|k| v[k].exp()).sum();
                        want += pmf[m] * v[j].exp() / den;
                    }
                }
            }
            want /= 1.0 - pmf[0];
            assert!((marginal_response_prob(j, &p, &d, 0, 0, &pmf).unwrap() - want).abs() < 1e-12);
        }
    }
}
