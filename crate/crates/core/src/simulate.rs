//! Synthetic panels with known consideration sets, and draws from the prior
//! over consideration-set distributions.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mask_row, ConsiderationState, Hyperparams, PanelDataset, SubjectRecord};
use crate::oracle::{mixture_cs_pmf, ENUMERATION_LIMIT};
use crate::random::{bernoulli, beta, categorical_log, gamma, std_normal, stream, SimRng};

const S_CS: u64 = 1;
const S_RESP: u64 = 2;
const S_PRIOR: u64 = 3;

/// Pmf over nonempty subsets of `J` categories, keyed by bitmask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetDist {
    pub j: usize,
    pub entries: Vec<(u64, f64)>,
}

impl SubsetDist {
    pub fn new(j: usize, entries: Vec<(u64, f64)>) -> Result<Self> {
        if j == 0 || j > 63 {
            return Err(Error::InvalidParameter(format!("subset pmf over {j} categories")));
        }
        let mut total = 0.0;
        for &(m, p) in &entries {
            if m == 0 || m >> j != 0 {
                return Err(Error::InvalidParameter(format!("subset mask {m:#b} outside nonempty subsets of {j}")));
            }
            if !(p >= 0.0) {
                return Err(Error::InvalidProbability { what: format!("subset {m:#b}"), value: p });
            }
            total += p;
        }
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidProbability { what: "subset pmf total".into(), value: total });
        }
        Ok(Self { j, entries })
    }

    /// Builds from 1-based category lists.
    pub fn from_sets(j: usize, sets: &[(&[usize], f64)]) -> Result<Self> {
        let entries = sets
            .iter()
            .map(|(s, p)| {
                let mut m = 0u64;
                for &k in s.iter() {
                    if k == 0 || k > j {
                        return Err(Error::InvalidParameter(format!("category {k} outside 1..{j}")));
                    }
                    m |= 1 << (k - 1);
                }
                Ok((m, *p))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(j, entries)
    }

    pub fn degenerate(j: usize, mask: u64) -> Result<Self> {
        Self::new(j, vec![(mask, 1.0)])
    }

    /// Dense vector over all `2^J` masks.
    pub fn dense(&self) -> Vec<f64> {
        let mut v = vec![0.0; 1 << self.j];
        for &(m, p) in &self.entries {
            v[m as usize] += p;
        }
        v
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> u64 {
        let lw: Vec<f64> = self.entries.iter().map(|e| e.1.ln()).collect();
        self.entries[categorical_log(&lw, rng).expect("pmf has positive mass")].0
    }
}

/// Logit design shared by the generators: `V_ijt = (beta + b_i) x_ijt` with
/// scalar `x ~ N(0, x_var)` and, optionally, a scalar random slope with
/// `z = x`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseDesign {
    pub beta: f64,
    pub x_var: f64,
    pub re_sd: Option<f64>,
}

impl Default for ResponseDesign {
    fn default() -> Self {
        Self { beta: 1.0, x_var: 2.0, re_sd: None }
    }
}

#[derive(Debug, Clone)]
pub struct SimOutput {
    pub data: PanelDataset,
    pub truth: ConsiderationState,
    /// True random slopes when the design has them.
    pub b: Vec<f64>,
}

fn simulate_responses(
    truth: &ConsiderationState,
    t: usize,
    design: &ResponseDesign,
    seed: u64,
) -> Result<(PanelDataset, Vec<f64>)> {
    let j = truth.n_alt();
    let d_z = usize::from(design.re_sd.is_some());
    let sd = design.x_var.sqrt();
    let mut b = Vec::new();
    let subjects = (0..truth.n())
        .map(|i| {
            let mut rng = stream(seed, 0, S_RESP, i as u64);
            let bi = design.re_sd.map_or(0.0, |s| s * std_normal(&mut rng));
            if d_z == 1 {
                b.push(bi);
            }
            let row = truth.row(i);
            let mut x = Vec::with_capacity(t * j);
            let mut responses = Vec::with_capacity(t);
            for _ in 0..t {
                let xs: Vec<f64> = (0..j).map(|_| sd * std_normal(&mut rng)).collect();
                let lw: Vec<f64> = xs
                    .iter()
                    .zip(row)
                    .map(|(&xv, &c)| if c { (design.beta + bi) * xv } else { f64::NEG_INFINITY })
                    .collect();
                responses.push(categorical_log(&lw, &mut rng).ok_or(Error::EmptyConsiderationSet)?);
                x.extend(xs);
            }
            let z = if d_z == 1 { x.clone() } else { vec![] };
            Ok(SubjectRecord { id: i as u64 + 1, responses, x, z })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok((PanelDataset::from_subjects(j, 1, d_z, false, subjects)?, b))
}

/// Small-J design: true sets drawn from `cs_pmf`, `x ~ N(0, 2)`,
/// `V = beta* x`, no fixed or random effects.
pub fn simulate_small(n: usize, t: usize, cs_pmf: &SubsetDist, beta_star: f64, seed: u64) -> Result<SimOutput> {
    simulate_with_design(n, t, cs_pmf, &ResponseDesign { beta: beta_star, ..Default::default() }, seed)
}

pub fn simulate_with_design(
    n: usize,
    t: usize,
    cs_pmf: &SubsetDist,
    design: &ResponseDesign,
    seed: u64,
) -> Result<SimOutput> {
    let rows = (0..n).map(|i| mask_row(cs_pmf.sample(&mut stream(seed, 0, S_CS, i as u64)), cs_pmf.j)).collect();
    let truth = ConsiderationState::from_rows(rows)?;
    let (data, b) = simulate_responses(&truth, t, design, seed)?;
    Ok(SimOutput { data, truth, b })
}

/// Two subpopulations with independent Bernoulli attention: `high` on the
/// listed hot categories (1-based), `low` elsewhere.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TwoPopDesign {
    pub n: usize,
    pub j: usize,
    pub t: usize,
    pub high: f64,
    pub low: f64,
    pub hot: [Vec<usize>; 2],
    pub response: ResponseDesign,
}

impl TwoPopDesign {
    /// `J = 100`, `n = 100`, hot items `{10,30,...,90}` and `{20,40,...,100}`.
    pub fn large(t: usize) -> Self {
        Self {
            n: 100,
            j: 100,
            t,
            high: 0.8,
            low: 0.05,
            hot: [vec![10, 30, 50, 70, 90], vec![20, 40, 60, 80, 100]],
            response: ResponseDesign::default(),
        }
    }

    pub fn attention(&self, pop: usize) -> Vec<f64> {
        let mut q = vec![self.low; self.j];
        for &k in &self.hot[pop] {
            q[k - 1] = self.high;
        }
        q
    }

    /// Subpopulation of 0-based subject `i`: first half 0, second half 1.
    pub fn population(&self, i: usize) -> usize {
        usize::from(i >= self.n / 2)
    }
}

/// Draws true sets from the design's attention vectors, redrawing empty sets.
pub fn draw_two_pop_sets(design: &TwoPopDesign, seed: u64) -> Result<ConsiderationState> {
    if design.hot.iter().flatten().any(|&k| k == 0 || k > design.j) {
        return Err(Error::InvalidParameter("hot category outside 1..J".into()));
    }
    let qs = [design.attention(0), design.attention(1)];
    let rows = (0..design.n)
        .map(|i| {
            let mut rng: SimRng = stream(seed, 0, S_CS, i as u64);
            let q = &qs[design.population(i)];
            loop {
                let row: Vec<bool> = q.iter().map(|&p| bernoulli(p, &mut rng)).collect();
                if row.iter().any(|&b| b) {
                    return row;
                }
            }
        })
        .collect();
    ConsiderationState::from_rows(rows)
}

pub fn simulate_large_two_pop(design: &TwoPopDesign, seed: u64) -> Result<SimOutput> {
    let truth = draw_two_pop_sets(design, seed)?;
    let (data, b) = simulate_responses(&truth, design.t, &design.response, seed)?;
    Ok(SimOutput { data, truth, b })
}

/// Draws from the prior over consideration-set distributions.
#[derive(Debug, Clone, PartialEq)]
pub struct PriorCsDraws {
    pub j: usize,
    /// Per draw, `1 - sum_{h<=K} w_h` before the last stick is closed.
    pub residual: Vec<f64>,
    /// Per draw, probability of every subset (small J only).
    pub subset_probs: Option<Vec<Vec<f64>>>,
    /// Per draw, marginal inclusion probability of each category.
    pub item_incl: Vec<Vec<f64>>,
}

/// For each draw: `alpha ~ Gamma`, `K` stick-breaking weights with the last
/// stick set to one so the weights sum to one, attention rows from their Beta
/// priors, then the mixture pmf.
pub fn simulate_prior_cs(hyper: &Hyperparams, j: usize, k: usize, n_draws: usize, seed: u64) -> Result<PriorCsDraws> {
    if k == 0 {
        return Err(Error::InvalidParameter("truncation K must be at least 1".into()));
    }
    if hyper.q_a.len() != j || hyper.q_b.len() != j {
        return Err(Error::InvalidParameter("attention prior length differs from J".into()));
    }
    let small = j <= ENUMERATION_LIMIT;
    let mut residual = Vec::with_capacity(n_draws);
    let mut subset = small.then(Vec::new);
    let mut items = Vec::with_capacity(n_draws);
    for d in 0..n_draws {
        let mut rng = stream(seed, d as u64, S_PRIOR, 0);
        let alpha = gamma(hyper.a_alpha, hyper.b_alpha, &mut rng).max(f64::MIN_POSITIVE);
        let mut w = Vec::with_capacity(k);
        let mut rest = 1.0;
        for _ in 0..k {
            let v = beta(1.0, alpha, &mut rng)?;
            w.push(v * rest);
            rest *= 1.0 - v;
        }
        residual.push(rest);
        *w.last_mut().unwrap() += rest;
        let q = (0..k)
            .map(|_| (0..j).map(|c| beta(hyper.q_a[c], hyper.q_b[c], &mut rng)).collect::<Result<Vec<_>>>())
            .collect::<Result<Vec<_>>>()?;
        items.push((0..j).map(|c| w.iter().zip(&q).map(|(wh, qh)| wh * qh[c]).sum()).collect());
        if let Some(s) = subset.as_mut() {
            s.push(mixture_cs_pmf(&w, &q)?.probs);
        }
    }
    Ok(PriorCsDraws { j, residual, subset_probs: subset, item_incl: items })
}

/// Empirical quantile with linear interpolation.
pub fn quantile(sorted: &[f64], p: f64) -> f64 {
    if sorted.is_empty() {
        return f64::NAN;
    }
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// `(mask, q05, q50, q95)` for every subset.
pub fn prior_subset_quantiles(draws: &PriorCsDraws) -> Vec<(u64, f64, f64, f64)> {
    let Some(s) = &draws.subset_probs else { return vec![] };
    (0..1usize << draws.j)
        .map(|m| {
            let mut v: Vec<f64> = s.iter().map(|p| p[m]).collect();
            v.sort_by(f64::total_cmp);
            (m as u64, quantile(&v, 0.05), quantile(&v, 0.5), quantile(&v, 0.95))
        })
        .collect()
}

/// Default small-J truth: a handful of well-separated sets over four
/// categories.
pub fn default_small_pmf() -> SubsetDist {
    SubsetDist::from_sets(
        4,
        &[(&[1, 2, 3], 0.35), (&[1, 2], 0.2), (&[2, 4], 0.2), (&[3, 4], 0.15), (&[1, 2, 3, 4], 0.1)],
    )
    .expect("valid default pmf")
}
