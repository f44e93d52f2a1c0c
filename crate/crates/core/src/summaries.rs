//! Posterior summaries computed from stored draws.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::likelihood::{log_choice_prob, log_sum_exp, utilities};
use crate::model::PanelDataset;
use crate::oracle::{mixture_cs_mass, ENUMERATION_LIMIT};
use crate::sampler::ChainStore;
use crate::simulate::quantile;

fn nonempty(chain: &ChainStore) -> Result<()> {
    if chain.is_empty() {
        Err(Error::InvalidParameter("chain has no stored draws".into()))
    } else {
        Ok(())
    }
}

/// `n x n_alt` posterior means of the inclusion indicators.
pub fn inclusion_probs(chain: &ChainStore) -> Result<Vec<Vec<f64>>> {
    nonempty(chain)?;
    let n = chain.meta.n;
    let na = chain.meta.n_alt;
    let mut counts = vec![vec![0u64; na]; n];
    for d in &chain.draws {
        for (i, acc) in counts.iter_mut().enumerate() {
            for (a, &b) in acc.iter_mut().zip(d.cs.row(i)) {
                *a += u64::from(b);
            }
        }
    }
    let g = chain.len() as f64;
    Ok(counts.into_iter().map(|r| r.into_iter().map(|c| c as f64 / g).collect()).collect())
}

/// Categories whose inclusion probability strictly exceeds `threshold`.
pub fn cs_point_estimate(incl: &[Vec<f64>], threshold: f64) -> Vec<Vec<usize>> {
    incl.iter().map(|r| r.iter().enumerate().filter(|&(_, &p)| p > threshold).map(|(j, _)| j).collect()).collect()
}

/// Posterior co-clustering probabilities `Pr(S_i = S_k)`.
pub fn similarity_matrix(chain: &ChainStore) -> Result<Vec<Vec<f64>>> {
    nonempty(chain)?;
    let n = chain.meta.n;
    let g = chain.len() as f64;
    let upper: Vec<Vec<u64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0u64; n - i];
            for d in &chain.draws {
                let s = d.assign[i];
                for (k, acc) in row.iter_mut().enumerate() {
                    *acc += u64::from(d.assign[i + k] == s);
                }
            }
            row
        })
        .collect();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for k in i..n {
            let v = upper[i][k - i] as f64 / g;
            m[i][k] = v;
            m[k][i] = v;
        }
        m[i][i] = 1.0;
    }
    Ok(m)
}

/// Model-implied pmf over consideration sets, summarised across draws.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsDistribution {
    pub n_alt: usize,
    /// Per subset: mean of the truncated mixture mass.
    pub mean: Vec<f64>,
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    /// Per subset: mean of the mass renormalised over nonempty subsets.
    pub nonempty_mean: Vec<f64>,
    pub empty_mass: f64,
    /// Mean weight beyond the active components.
    pub truncation_mass: f64,
}

pub fn marginal_cs_distribution(chain: &ChainStore) -> Result<CsDistribution> {
    nonempty(chain)?;
    let na = chain.meta.n_alt;
    if na > ENUMERATION_LIMIT {
        return Err(Error::EnumerationGuard { j: na, limit: ENUMERATION_LIMIT });
    }
    let per_draw = chain
        .draws
        .par_iter()
        .map(|d| mixture_cs_mass(&d.weights, &d.q).map(|p| (p.probs, 1.0 - d.weights.iter().sum::<f64>())))
        .collect::<Result<Vec<_>>>()?;
    let g = per_draw.len() as f64;
    let m = 1usize << na;
    let mut mean = vec![0.0; m];
    let mut nonempty_mean = vec![0.0; m];
    let mut trunc = 0.0;
    for (p, t) in &per_draw {
        let rest: f64 = p[1..].iter().sum();
        for k in 0..m {
            mean[k] += p[k] / g;
            if k > 0 {
                nonempty_mean[k] += p[k] / rest / g;
            }
        }
        trunc += t / g;
    }
    let (lower, upper): (Vec<f64>, Vec<f64>) = (0..m)
        .map(|k| {
            let mut v: Vec<f64> = per_draw.iter().map(|(p, _)| p[k]).collect();
            v.sort_by(f64::total_cmp);
            (quantile(&v, 0.025), quantile(&v, 0.975))
        })
        .unzip();
    Ok(CsDistribution { n_alt: na, empty_mass: mean[0], mean, lower, upper, nonempty_mean, truncation_mass: trunc })
}

/// Posterior mean of `C_ij C_il` for one subject.
pub fn co_inclusion(chain: &ChainStore, i: usize) -> Result<Vec<Vec<f64>>> {
    nonempty(chain)?;
    if i >= chain.meta.n {
        return Err(Error::Index(format!("subject {i} of {}", chain.meta.n)));
    }
    let na = chain.meta.n_alt;
    let mut m = vec![vec![0.0; na]; na];
    let g = chain.len() as f64;
    for d in &chain.draws {
        let row = d.cs.row(i);
        for j in 0..na {
            if row[j] {
                for l in 0..na {
                    if row[l] {
                        m[j][l] += 1.0 / g;
                    }
                }
            }
        }
    }
    Ok(m)
}

/// Model-implied population inclusion `sum_h w_h q_hj` and co-inclusion
/// `sum_h w_h q_hj q_hl`, normalised by the retained weight and averaged over
/// draws.
pub fn mixture_inclusion_moments(chain: &ChainStore) -> Result<(Vec<f64>, Vec<Vec<f64>>)> {
    nonempty(chain)?;
    let na = chain.meta.n_alt;
    let g = chain.len() as f64;
    let mut first = vec![0.0; na];
    let mut second = vec![vec![0.0; na]; na];
    for d in &chain.draws {
        let total: f64 = d.weights.iter().sum();
        for (w, q) in d.weights.iter().zip(&d.q) {
            let w = w / total / g;
            for j in 0..na {
                first[j] += w * q[j];
                for l in 0..na {
                    second[j][l] += w * q[j] * q[l];
                }
            }
        }
    }
    Ok((first, second))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PredictiveRow {
    pub subject: u64,
    pub h: usize,
    /// Log of the draw-averaged joint probability of the held-out responses.
    pub logpred: f64,
    /// Draw-average of the log joint probability; never above `logpred`.
    pub mean_log: f64,
}

/// Log predictive likelihood of each holdout subject's responses, averaging
/// probabilities (not log-probabilities) across draws.
pub fn predictive_loglik(chain: &ChainStore, holdout: &PanelDataset) -> Result<Vec<PredictiveRow>> {
    nonempty(chain)?;
    if holdout.n_alt() != chain.meta.n_alt || holdout.d_x() != chain.meta.d_x || holdout.d_z() != chain.meta.d_z {
        return Err(Error::Format("holdout shape differs from the fitted dataset".into()));
    }
    let g = chain.len() as f64;
    let params: Vec<_> = chain.draws.iter().map(|d| d.params()).collect();
    (0..holdout.n())
        .into_par_iter()
        .map(|k| {
            let id = holdout.subject_ids()[k];
            let i = chain.meta.subject_ids.iter().position(|&s| s == id).ok_or(Error::UnknownSubject(id))?;
            let h = holdout.t(k);
            if h == 0 {
                return Ok(PredictiveRow { subject: id, h, logpred: 0.0, mean_log: 0.0 });
            }
            let mut logs = Vec::with_capacity(chain.len());
            for (d, p) in chain.draws.iter().zip(&params) {
                // Holdout utilities use this subject's random effect.
                let mut pp = p.clone();
                let dz = p.d_z;
                pp.b = vec![0.0; (k + 1) * dz];
                pp.b[k * dz..].copy_from_slice(p.b_i(i));
                let row = d.cs.row(i);
                let mut total = 0.0;
                for t in 0..h {
                    let v = utilities(&pp, holdout, k, t)?;
                    total += log_choice_prob(holdout.response(k, t), row, &v)?;
                }
                logs.push(total);
            }
            let logpred = log_sum_exp(logs.iter().copied()) - g.ln();
            let mean_log = logs.iter().sum::<f64>() / g;
            Ok(PredictiveRow { subject: id, h, logpred, mean_log })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ConsiderationState, Hyperparams, SubjectRecord};
    use crate::sampler::{ChainMeta, Counters, Draw, Variant};

    fn meta(n: usize, na: usize) -> ChainMeta {
        ChainMeta {
            seed: 0,
            variant: Variant::MnlC,
            hyper: Hyperparams::defaults(na, 0),
            iters: 1,
            burnin: 0,
            thin: 1,
            n,
            j: na,
            n_alt: na,
            d_x: 1,
            d_z: 0,
            outside_option: false,
            subject_ids: (1..=n as u64).collect(),
        }
    }

    fn draw(rows: Vec<Vec<bool>>, assign: Vec<usize>, beta: f64) -> Draw {
        let na = rows[0].len();
        Draw {
            iter: 1,
            delta: vec![0.0; na],
            beta: vec![beta],
            b: vec![],
            d: vec![],
            cs: ConsiderationState::from_rows(rows).unwrap(),
            assign,
            alpha: 1.0,
            k_star: 2,
            weights: vec![0.6, 0.3],
            q: vec![vec![0.9, 0.2, 0.5], vec![0.1, 0.7, 0.5]],
            loglik: 0.0,
            counters: Counters::default(),
        }
    }

    fn chain(draws: Vec<Draw>) -> ChainStore {
        let n = draws[0].cs.n();
        let na = draws[0].cs.n_alt();
        ChainStore { meta: meta(n, na), draws }
    }

    #[test]
    fn single_draw_summaries_are_degenerate() {
        let rows = vec![vec![true, false, true], vec![false, true, true]];
        let c = chain(vec![draw(rows.clone(), vec![0, 0], 1.0)]);
        let incl = inclusion_probs(&c).unwrap();
        for (r, want) in incl.iter().zip(&rows) {
            for (p, &b) in r.iter().zip(want) {
                assert_eq!(*p, f64::from(u8::from(b)));
            }
        }
        let sim = similarity_matrix(&c).unwrap();
        assert!(sim.iter().flatten().all(|&v| v == 1.0));
        let dist = marginal_cs_distribution(&c).unwrap();
        assert_eq!(dist.lower, dist.mean);
        assert_eq!(dist.upper, dist.mean);
        let total: f64 = dist.mean.iter().sum();
        assert!((total + dist.truncation_mass - 1.0).abs() < 1e-12);
        assert!((dist.nonempty_mean.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn point_estimate_thresholds_strictly() {
        let incl = vec![vec![1.0, 0.49, 0.5, 0.95]];
        assert_eq!(cs_point_estimate(&incl, 0.5), vec![vec![0, 3]]);
        assert_eq!(cs_point_estimate(&incl, 0.9), vec![vec![0, 3]]);
        assert_eq!(cs_point_estimate(&incl, 0.97), vec![vec![0]]);
    }

    #[test]
    fn similarity_is_label_invariant_and_symmetric() {
        let rows = vec![vec![true; 3]; 4];
        let a = chain(vec![draw(rows.clone(), vec![0, 0, 1, 1], 1.0), draw(rows.clone(), vec![0, 1, 1, 0], 1.0)]);
        let b = chain(vec![draw(rows.clone(), vec![1, 1, 0, 0], 1.0), draw(rows, vec![1, 0, 0, 1], 1.0)]);
        let sa = similarity_matrix(&a).unwrap();
        assert_eq!(sa, similarity_matrix(&b).unwrap());
        for i in 0..4 {
            for k in 0..4 {
                assert_eq!(sa[i][k], sa[k][i]);
            }
        }
        assert_eq!(sa[0][1], 0.5);
        assert_eq!(sa[0][3], 0.5);
        assert_eq!(sa[2][3], 0.5);
    }

    fn holdout(responses: Vec<usize>) -> PanelDataset {
        let t = responses.len();
        let rec = SubjectRecord { id: 1, responses, x: vec![0.3; t * 3], z: vec![] };
        PanelDataset::from_subjects(3, 1, 0, false, vec![rec]).unwrap()
    }

    #[test]
    fn predictive_edge_cases() {
        let c = chain(vec![draw(vec![vec![false, true, false]], vec![0], 1.0)]);
        let empty = predictive_loglik(&c, &holdout(vec![])).unwrap();
        assert_eq!(empty[0].logpred, 0.0);
        let sure = predictive_loglik(&c, &holdout(vec![1, 1])).unwrap();
        assert_eq!(sure[0].logpred, 0.0);
        let never = predictive_loglik(&c, &holdout(vec![0])).unwrap();
        assert_eq!(never[0].logpred, f64::NEG_INFINITY);
        let mut other = holdout(vec![1]);
        other = PanelDataset::from_subjects(3, 1, 0, false, vec![SubjectRecord { id: 9, ..other.record(0) }]).unwrap();
        assert!(matches!(predictive_loglik(&c, &other), Err(Error::UnknownSubject(9))));
    }

    #[test]
    fn predictive_averages_in_probability_space() {
        let c = chain(vec![draw(vec![vec![true; 3]], vec![0], 0.0), draw(vec![vec![true, true, false]], vec![0], 0.0)]);
        let r = &predictive_loglik(&c, &holdout(vec![0])).unwrap()[0];
        let want = ((1.0 / 3.0 + 0.5) / 2.0f64).ln();
        assert!((r.logpred - want).abs() < 1e-14);
        assert!(r.logpred >= r.mean_log);
    }
}
