//! Random-effects logit restricted to a consideration set.
//!
//! All probabilities are handled in log space. An excluded response yields a
//! log-likelihood of `f64::NEG_INFINITY`, which callers treat as probability
//! zero and never exponentiate on the way into an acceptance ratio.

use crate::error::{Error, Result};
use crate::model::{ConsiderationState, PanelDataset, ResponseParams};

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `V_{ijt} = delta_j + x'beta + z'b_i` without bounds checks.
#[inline]
pub fn utility(params: &ResponseParams, data: &PanelDataset, i: usize, t: usize, j: usize) -> f64 {
    let mut v = params.delta[j] + dot(data.x(i, t, j), &params.beta);
    if data.d_z() > 0 {
        v += dot(data.z(i, t, j), params.b_i(i));
    }
    v
}

/// Representative utilities for every alternative at `(i, t)`.
pub fn utilities(params: &ResponseParams, data: &PanelDataset, i: usize, t: usize) -> Result<Vec<f64>> {
    data.check_index(i, t)?;
    Ok((0..data.n_alt()).map(|j| utility(params, data, i, t, j)).collect())
}

pub fn log_sum_exp<I: IntoIterator<Item = f64>>(it: I) -> f64 {
    let vals: Vec<f64> = it.into_iter().collect();
    let m = vals.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if m.is_infinite() {
        return m;
    }
    m + vals.iter().map(|v| (v - m).exp()).sum::<f64>().ln()
}

/// `log sum_{l in C} exp(V_l)`.
pub fn log_denominator(c: &[bool], v: &[f64]) -> f64 {
    log_sum_exp(c.iter().zip(v).filter(|(&b, _)| b).map(|(_, &x)| x))
}

/// Log choice probability; `-inf` when `j` lies outside the set.
pub fn log_choice_prob(j: usize, c: &[bool], v: &[f64]) -> Result<f64> {
    if !c.iter().any(|&b| b) {
        return Err(Error::EmptyConsiderationSet);
    }
    if j >= c.len() {
        return Err(Error::Index(format!("category {j} of {}", c.len())));
    }
    if !c[j] {
        return Ok(f64::NEG_INFINITY);
    }
    Ok(v[j] - log_denominator(c, v))
}

/// Logit probability of `j` among the members of `c`; exactly zero outside.
pub fn choice_prob(j: usize, c: &[bool], v: &[f64]) -> Result<f64> {
    Ok(log_choice_prob(j, c, v)?.exp())
}

/// Sum over occasions of log choice probabilities for subject `i` given its
/// consideration row.
pub fn subject_loglik(params: &ResponseParams, data: &PanelDataset, c: &[bool], i: usize) -> Result<f64> {
    if i >= data.n() {
        return Err(Error::Index(format!("subject {i} of {}", data.n())));
    }
    if c.len() != data.n_alt() {
        return Err(Error::Index(format!("consideration row of length {} for {} alternatives", c.len(), data.n_alt())));
    }
    let mut total = 0.0;
    let mut v = vec![0.0; data.n_alt()];
    for t in 0..data.t(i) {
        let y = data.response(i, t);
        if !c[y] {
            return Ok(f64::NEG_INFINITY);
        }
        for (j, vj) in v.iter_mut().enumerate() {
            *vj = utility(params, data, i, t, j);
        }
        total += v[y] - log_denominator(c, &v);
    }
    Ok(total)
}

pub fn panel_loglik(params: &ResponseParams, data: &PanelDataset, cs: &ConsiderationState) -> Result<f64> {
    let mut total = 0.0;
    for i in 0..data.n() {
        total += subject_loglik(params, data, cs.row(i), i)?;
    }
    Ok(total)
}

/// Cached `V_{ijt}` for every subject, occasion and alternative.
#[derive(Debug, Clone)]
pub struct UtilityTable {
    n_alt: usize,
    v: Vec<f64>,
}

impl UtilityTable {
    pub fn build(params: &ResponseParams, data: &PanelDataset) -> Self {
        let n_alt = data.n_alt();
        let mut tbl = Self { n_alt, v: vec![0.0; data.total_occasions() * n_alt] };
        for i in 0..data.n() {
            tbl.refresh_subject(params, data, i);
        }
        tbl
    }

    pub fn refresh_subject(&mut self, params: &ResponseParams, data: &PanelDataset, i: usize) {
        let off = data.occ_offset(i);
        for t in 0..data.t(i) {
            for j in 0..self.n_alt {
                self.v[(off + t) * self.n_alt + j] = utility(params, data, i, t, j);
            }
        }
    }

    /// Utilities at global occasion index `o`.
    pub fn row(&self, o: usize) -> &[f64] {
        &self.v[o * self.n_alt..(o + 1) * self.n_alt]
    }

    pub fn set(&mut self, o: usize, j: usize, value: f64) {
        self.v[o * self.n_alt + j] = value;
    }

    /// Subject-level slice: occasions `off..off+T_i`.
    pub fn subject_rows(&self, data: &PanelDataset, i: usize) -> &[f64] {
        let off = data.occ_offset(i);
        &self.v[off * self.n_alt..(off + data.t(i)) * self.n_alt]
    }
}

/// Per-occasion log-denominators under the current consideration state.
pub fn log_denominators(tbl: &UtilityTable, data: &PanelDataset, cs: &ConsiderationState) -> Vec<f64> {
    let mut out = vec![0.0; data.total_occasions()];
    for i in 0..data.n() {
        let off = data.occ_offset(i);
        for t in 0..data.t(i) {
            out[off + t] = log_denominator(cs.row(i), tbl.row(off + t));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectRecord;
    use crate::random::{seeded, std_normal};
    use proptest::prelude::*;

    fn data_with(j: usize, d_x: usize, d_z: usize, t: usize, n: usize, seed: u64) -> PanelDataset {
        let mut rng = seeded(seed);
        let subjects = (0..n)
            .map(|i| SubjectRecord {
                id: i as u64,
                responses: (0..t).map(|s| (i * 7 + s * 3) % j).collect(),
                x: (0..t * j * d_x).map(|_| std_normal(&mut rng)).collect(),
                z: (0..t * j * d_z).map(|_| std_normal(&mut rng)).collect(),
            })
            .collect();
        PanelDataset::from_subjects(j, d_x, d_z, false, subjects).unwrap()
    }

    fn random_params(data: &PanelDataset, seed: u64) -> ResponseParams {
        let mut rng = seeded(seed);
        let mut p = ResponseParams::for_data(data);
        for v in p.delta.iter_mut() {
            *v = std_normal(&mut rng);
        }
        *p.delta.last_mut().unwrap() = 0.0;
        for v in p.beta.iter_mut().chain(p.b.iter_mut()) {
            *v = std_normal(&mut rng);
        }
        p
    }

    #[test]
    fn zero_params_give_zero_utilities() {
        let d = data_with(4, 2, 2, 2, 1, 1);
        let p = ResponseParams::for_data(&d);
        assert_eq!(utilities(&p, &d, 0, 1).unwrap(), vec![0.0; 4]);
    }

    #[test]
    fn utilities_direct_arithmetic() {
        let rec = SubjectRecord { id: 1, responses: vec![0], x: vec![0.5, -0.5], z: vec![] };
        let d = PanelDataset::from_subjects(2, 1, 0, false, vec![rec]).unwrap();
        let mut p = ResponseParams::for_data(&d);
        p.delta = vec![1.0, 0.0];
        p.beta = vec![2.0];
        assert_eq!(utilities(&p, &d, 0, 0).unwrap(), vec![2.0, -1.0]);
    }

    #[test]
    fn utilities_match_scalar_loop() {
        let d = data_with(5, 3, 3, 4, 3, 11);
        let p = random_params(&d, 12);
        for i in 0..d.n() {
            for t in 0..d.t(i) {
                let got = utilities(&p, &d, i, t).unwrap();
                for (j, g) in got.iter().enumerate() {
                    let mut r = p.delta[j];
                    for k in 0..3 {
                        r += d.x(i, t, j)[k] * p.beta[k];
                    }
                    for k in 0..3 {
                        r += d.z(i, t, j)[k] * p.b_i(i)[k];
                    }
                    assert!((g - r).abs() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn utilities_reject_bad_index() {
        let d = data_with(3, 1, 0, 2, 2, 0);
        let p = ResponseParams::for_data(&d);
        assert!(utilities(&p, &d, 2, 0).is_err());
        assert!(utilities(&p, &d, 0, 2).is_err());
    }

    #[test]
    fn singleton_and_uniform_sets() {
        let v = [0.3, -1.2, 2.0];
        let c = [false, true, false];
        assert_eq!(choice_prob(1, &c, &v).unwrap(), 1.0);
        assert_eq!(choice_prob(0, &c, &v).unwrap(), 0.0);
        let flat = [0.7; 3];
        let c3 = [true, false, true];
        assert!((choice_prob(2, &c3, &flat).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn large_utilities_do_not_overflow() {
        let p = choice_prob(1, &[true, true], &[1000.0, 1001.0]).unwrap();
        let want = 1f64.exp() / (1.0 + 1f64.exp());
        assert!((p - want).abs() < 1e-12);
    }

    #[test]
    fn empty_set_is_an_error() {
        assert!(matches!(choice_prob(0, &[false, false], &[0.0, 0.0]), Err(Error::EmptyConsiderationSet)));
    }

    #[test]
    fn uniform_subject_loglik() {
        let rec = SubjectRecord { id: 1, responses: vec![0, 3, 1], x: vec![0.0; 12], z: vec![] };
        let d = PanelDataset::from_subjects(4, 1, 0, false, vec![rec]).unwrap();
        let p = ResponseParams::for_data(&d);
        let ll = subject_loglik(&p, &d, &[true; 4], 0).unwrap();
        assert!((ll - 3.0 * 0.25f64.ln()).abs() < 1e-14);
        let excl = subject_loglik(&p, &d, &[true, false, true, true], 0).unwrap();
        assert_eq!(excl, f64::NEG_INFINITY);
    }

    #[test]
    fn subject_loglik_matches_product_of_ratios() {
        let d = data_with(4, 2, 1, 5, 1, 21);
        let p = random_params(&d, 22);
        let c = [true, true, true, true];
        let mut prod = 1.0;
        for t in 0..5 {
            let v = utilities(&p, &d, 0, t).unwrap();
            let num = v[d.response(0, t)].exp();
            let den: f64 = v.iter().map(|x| x.exp()).sum();
            prod *= num / den;
        }
        let ll = subject_loglik(&p, &d, &c, 0).unwrap();
        assert!((ll - prod.ln()).abs() < 1e-12);
    }

    #[test]
    fn panel_loglik_is_additive_and_matches_naive_loops() {
        let d = data_with(4, 2, 1, 3, 10, 31);
        let p = random_params(&d, 32);
        let cs = ConsiderationState::full(10, 4);
        let total = panel_loglik(&p, &d, &cs).unwrap();
        let mut naive = 0.0;
        for i in 0..10 {
            for t in 0..3 {
                let mut vs = [0.0; 4];
                for (j, v) in vs.iter_mut().enumerate() {
                    *v = p.delta[j]
                        + d.x(i, t, j).iter().zip(&p.beta).map(|(a, b)| a * b).sum::<f64>()
                        + d.z(i, t, j)[0] * p.b_i(i)[0];
                }
                let den: f64 = vs.iter().map(|v| v.exp()).sum();
                naive += vs[d.response(i, t)] - den.ln();
            }
        }
        assert!((total - naive).abs() < 1e-10);

        let one = d.select(&[0]);
        let one_p = ResponseParams { b: p.b_i(0).to_vec(), ..p.clone() };
        let l1 = panel_loglik(&one_p, &one, &ConsiderationState::full(1, 4)).unwrap();
        assert!((l1 - subject_loglik(&p, &d, cs.row(0), 0).unwrap()).abs() < 1e-15);
        let sum2 = subject_loglik(&p, &d, cs.row(0), 0).unwrap() + subject_loglik(&p, &d, cs.row(1), 1).unwrap();
        let two = d.select(&[0, 1]);
        let two_p = ResponseParams { b: p.b[..2].to_vec(), ..p.clone() };
        let l2 = panel_loglik(&two_p, &two, &ConsiderationState::full(2, 4)).unwrap();
        assert!((l2 - sum2).abs() < 1e-12);
    }

    fn vec_and_set() -> impl Strategy<Value = (Vec<f64>, Vec<bool>)> {
        (2usize..12).prop_flat_map(|j| {
            (
                prop::collection::vec(-30.0f64..30.0, j),
                prop::collection::vec(any::<bool>(), j).prop_filter("nonempty", |c| c.iter().any(|&b| b)),
            )
        })
    }

    proptest! {
        #[test]
        fn probabilities_normalise((v, c) in vec_and_set()) {
            let total: f64 = (0..v.len()).map(|j| choice_prob(j, &c, &v).unwrap()).sum();
            prop_assert!((total - 1.0).abs() < 1e-12);
        }

        #[test]
        fn shift_invariance((v, c) in vec_and_set(), kappa in -50.0f64..50.0) {
            let shifted: Vec<f64> = v.iter().map(|x| x + kappa).collect();
            for j in 0..v.len() {
                let a = choice_prob(j, &c, &v).unwrap();
                let b = choice_prob(j, &c, &shifted).unwrap();
                prop_assert!((a - b).abs() < 1e-12);
            }
        }

        #[test]
        fn removing_unchosen_item_never_lowers_others((v, c) in vec_and_set(), pick in 0usize..12) {
            let members: Vec<usize> = (0..c.len()).filter(|&j| c[j]).collect();
            prop_assume!(members.len() >= 2);
            let drop = members[pick % members.len()];
            let mut smaller = c.clone();
            smaller[drop] = false;
            for &j in members.iter().filter(|&&j| j != drop) {
                prop_assert!(choice_prob(j, &smaller, &v).unwrap() >= choice_prob(j, &c, &v).unwrap() - 1e-15);
            }
        }
    }
}
