//! Coordinate-wise Metropolis-Hastings update of a subject's consideration
//! vector.
//!
//! Each non-forced coordinate is proposed from `Bernoulli(q_{S_i j})`; forced
//! coordinates (observed responses, outside option) are proposed as 1. The
//! attention prior cancels against the proposal, so the acceptance ratio is
//! the likelihood ratio alone. Per-occasion log-denominators are cached and
//! adjusted by `+-exp(V_{ijt})` when coordinate `j` flips.

use rand::Rng;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::{log_denominator, subject_loglik, utility};
use crate::model::{PanelDataset, ResponseParams};
use crate::random::{bernoulli, permutation};

/// One proposed flip (or no-op) of a single coordinate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CsProposal {
    pub subject: usize,
    pub coord: usize,
    pub from: bool,
    pub to: bool,
    pub accept_prob: f64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, serde::Deserialize)]
pub struct CsCounts {
    pub add_proposed: u64,
    pub add_accepted: u64,
    pub remove_proposed: u64,
    pub remove_accepted: u64,
    /// Non-forced proposals, including ones equal to the current bit.
    pub proposed: u64,
    pub accepted: u64,
}

impl CsCounts {
    pub fn merge(&mut self, o: &CsCounts) {
        self.add_proposed += o.add_proposed;
        self.add_accepted += o.add_accepted;
        self.remove_proposed += o.remove_proposed;
        self.remove_accepted += o.remove_accepted;
        self.proposed += o.proposed;
        self.accepted += o.accepted;
    }

    pub fn rate(&self) -> f64 {
        if self.proposed == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.proposed as f64
        }
    }
}

fn check_q(q_row: &[f64]) -> Result<()> {
    for (j, &q) in q_row.iter().enumerate() {
        if !(0.0..=1.0).contains(&q) {
            return Err(Error::InvalidProbability { what: format!("attention probability {}", j + 1), value: q });
        }
    }
    Ok(())
}

/// Unnormalised log of the full conditional of `C_i`: likelihood, independent
/// Bernoulli attention prior and the forced-inclusion indicator.
pub fn conditional_cs_logpmf(
    i: usize,
    c: &[bool],
    params: &ResponseParams,
    q_row: &[f64],
    data: &PanelDataset,
) -> Result<f64> {
    check_q(q_row)?;
    if q_row.len() != c.len() {
        return Err(Error::Index(format!("attention row of length {} for {} alternatives", q_row.len(), c.len())));
    }
    let forced = data.forced(i);
    if forced.iter().zip(c).any(|(&f, &b)| f && !b) || !c.iter().any(|&b| b) {
        return Ok(f64::NEG_INFINITY);
    }
    let mut prior = 0.0;
    for (&b, &q) in c.iter().zip(q_row) {
        prior += if b { q.ln() } else { (-q).ln_1p() };
    }
    Ok(subject_loglik(params, data, c, i)? + prior)
}

/// Sweeps every coordinate of one subject in a fresh random order.
///
/// `v` holds the subject's utilities as `T` rows of `forced.len()` entries.
/// Proposals are appended to `log` when given.
#[allow(clippy::too_many_arguments)]
pub fn sweep_subject<R: Rng + ?Sized>(
    subject: usize,
    c: &mut [bool],
    forced: &[bool],
    v: &[f64],
    q_row: &[f64],
    rng: &mut R,
    mut log: Option<&mut Vec<CsProposal>>,
) -> CsCounts {
    let n_alt = forced.len();
    let t_len = if n_alt == 0 { 0 } else { v.len() / n_alt };
    let mut log_den: Vec<f64> = (0..t_len).map(|t| log_denominator(c, &v[t * n_alt..(t + 1) * n_alt])).collect();
    let mut counts = CsCounts::default();
    let record = |log: &mut Option<&mut Vec<CsProposal>>, p: CsProposal| {
        if let Some(l) = log.as_deref_mut() {
            l.push(p);
        }
    };

    for j in permutation(n_alt, rng) {
        let from = c[j];
        if forced[j] {
            // Proposal is 1; the state already holds it, so nothing to evaluate.
            debug_assert!(from, "forced coordinate excluded");
            continue;
        }
        let to = bernoulli(q_row[j], rng);
        counts.proposed += 1;
        if to == from {
            counts.accepted += 1;
            record(&mut log, CsProposal { subject, coord: j, from, to, accept_prob: 1.0, accepted: true });
            continue;
        }
        let accept_prob;
        let accepted;
        if to {
            counts.add_proposed += 1;
            // log S_new - log S_old = log1p(exp(V_j - log S_old))
            let mut delta = 0.0;
            for t in 0..t_len {
                delta -= (v[t * n_alt + j] - log_den[t]).exp().ln_1p();
            }
            accept_prob = delta.min(0.0).exp();
            accepted = rng.random::<f64>() < accept_prob;
            if accepted {
                counts.add_accepted += 1;
                c[j] = true;
                for t in 0..t_len {
                    log_den[t] += (v[t * n_alt + j] - log_den[t]).exp().ln_1p();
                }
            }
        } else {
            counts.remove_proposed += 1;
            // Each occasion's denominator shrinks, so every term is >= 0.
            let mut delta = 0.0;
            let mut shares = Vec::with_capacity(t_len);
            for t in 0..t_len {
                let share = (v[t * n_alt + j] - log_den[t]).exp().min(1.0);
                shares.push(share);
                delta -= (-share).ln_1p();
            }
            accept_prob = delta.min(0.0).exp();
            accepted = rng.random::<f64>() < accept_prob;
            if accepted {
                counts.remove_accepted += 1;
                c[j] = false;
                for (t, &share) in shares.iter().enumerate() {
                    if share < 0.5 {
                        log_den[t] += (-share).ln_1p();
                    } else {
                        log_den[t] = log_denominator(c, &v[t * n_alt..(t + 1) * n_alt]);
                    }
                }
            }
        }
        if accepted {
            counts.accepted += 1;
        }
        record(&mut log, CsProposal { subject, coord: j, from, to, accept_prob, accepted });
    }
    counts
}

/// Result of [`mh_update_cs`].
#[derive(Debug, Clone)]
pub struct CsUpdate {
    pub c: Vec<bool>,
    pub proposals: Vec<CsProposal>,
    pub counts: CsCounts,
}

/// One sweep of the consideration-set M-H step for subject `i`.
pub fn mh_update_cs<R: Rng + ?Sized>(
    i: usize,
    c: &[bool],
    params: &ResponseParams,
    q_row: &[f64],
    data: &PanelDataset,
    rng: &mut R,
) -> Result<CsUpdate> {
    check_q(q_row)?;
    let forced = data.forced(i);
    if forced.iter().zip(c).any(|(&f, &b)| f && !b) {
        return Err(Error::InvalidParameter(format!("subject {i}: consideration row violates forced inclusion")));
    }
    let n_alt = data.n_alt();
    let mut v = Vec::with_capacity(data.t(i) * n_alt);
    for t in 0..data.t(i) {
        for j in 0..n_alt {
            v.push(utility(params, data, i, t, j));
        }
    }
    let mut row = c.to_vec();
    let mut proposals = Vec::new();
    let counts = sweep_subject(i, &mut row, &forced, &v, q_row, rng, Some(&mut proposals));
    Ok(CsUpdate { c: row, proposals, counts })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectRecord;
    use crate::random::seeded;

    fn fixture() -> (PanelDataset, ResponseParams) {
        let rec = SubjectRecord { id: 1, responses: vec![0, 2], x: vec![0.3, -0.2, 1.1, 0.0, 0.5, -0.7], z: vec![] };
        let d = PanelDataset::from_subjects(3, 1, 0, false, vec![rec]).unwrap();
        let mut p = ResponseParams::for_data(&d);
        p.beta = vec![0.8];
        p.delta = vec![0.2, -0.4, 0.0];
        (d, p)
    }

    #[test]
    fn forced_violation_is_minus_infinity() {
        let (d, p) = fixture();
        let v = conditional_cs_logpmf(0, &[true, true, false], &p, &[0.5; 3], &d).unwrap();
        assert_eq!(v, f64::NEG_INFINITY);
    }

    #[test]
    fn symmetric_prior_term() {
        let (d, p) = fixture();
        for c in [[true, false, true], [true, true, true]] {
            let got = conditional_cs_logpmf(0, &c, &p, &[0.5; 3], &d).unwrap();
            let ll = subject_loglik(&p, &d, &c, 0).unwrap();
            assert!((got - ll - 3.0 * 0.5f64.ln()).abs() < 1e-12);
        }
    }

    #[test]
    fn hand_evaluated_conditional() {
        let (d, p) = fixture();
        let q = [0.7, 0.2, 0.9];
        let c = [true, true, true];
        // V_{j,t} = delta_j + 0.8 x_{j,t}
        let v1 = [0.2 + 0.8 * 0.3, -0.4 + 0.8 * -0.2, 0.8 * 1.1];
        let v2 = [0.2 + 0.0, -0.4 + 0.8 * 0.5, 0.8 * -0.7];
        let lse = |v: &[f64; 3]| v.iter().map(|x| x.exp()).sum::<f64>().ln();
        let want = (v1[0] - lse(&v1)) + (v2[2] - lse(&v2)) + 0.7f64.ln() + 0.2f64.ln() + 0.9f64.ln();
        let got = conditional_cs_logpmf(0, &c, &p, &q, &d).unwrap();
        assert!((got - want).abs() < 1e-12);
    }

    #[test]
    fn rejects_invalid_q() {
        let (d, p) = fixture();
        assert!(conditional_cs_logpmf(0, &[true; 3], &p, &[0.5, 1.2, 0.5], &d).is_err());
    }

    #[test]
    fn exclusions_accepted_with_probability_one() {
        let (d, p) = fixture();
        let mut rng = seeded(5);
        let mut c = vec![true; 3];
        let mut n_excl = 0;
        for _ in 0..5000 {
            let up = mh_update_cs(0, &c, &p, &[0.4, 0.4, 0.4], &d, &mut rng).unwrap();
            for pr in &up.proposals {
                if pr.from && !pr.to {
                    n_excl += 1;
                    assert_eq!(pr.accept_prob, 1.0);
                    assert!(pr.accepted);
                }
                if pr.from == pr.to {
                    assert_eq!(pr.accept_prob, 1.0);
                }
                assert!(pr.coord == 1, "forced coordinates are never proposed");
            }
            c = up.c;
            assert!(c[0] && c[2]);
        }
        assert!(n_excl > 100);
    }
}
