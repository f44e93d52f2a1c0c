//! Sampler-against-enumeration checks on a three-category micro fixture.

use serde::Serialize;

use crate::cs_sampler::sweep_subject;
use crate::dp::{sample_assignment_one, LogAttention};
use crate::error::Result;
use crate::likelihood::utilities;
use crate::model::{row_mask, PanelDataset, ResponseParams, SubjectRecord};
use crate::oracle::{enumerate_cs_posterior, marginal_response_prob, mixture_cs_pmf};
use crate::random::stream;

pub const TV_TOLERANCE: f64 = 0.01;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleCheck {
    pub name: String,
    pub passed: bool,
    /// Observed total-variation distance, or absolute error for exact checks.
    pub value: f64,
    pub tolerance: f64,
}

impl OracleCheck {
    fn new(name: &str, value: f64, tolerance: f64) -> Self {
        Self { name: name.into(), passed: value.is_finite() && value < tolerance, value, tolerance }
    }
}

pub fn total_variation(p: &[f64], q: &[f64]) -> f64 {
    0.5 * p.iter().zip(q).map(|(a, b)| (a - b).abs()).sum::<f64>()
}

pub struct MicroFixture {
    pub data: PanelDataset,
    pub params: ResponseParams,
    pub q_row: Vec<f64>,
    pub weights: Vec<f64>,
    pub q: Vec<Vec<f64>>,
}

/// Two subjects over J = 3: one always picks category 1, the other picks 1
/// and 3, leaving four and two admissible sets respectively.
pub fn micro_fixture() -> MicroFixture {
    let x1 = vec![0.4, -0.3, 1.1, 0.9, 0.2, -0.8, -0.5, 0.7, 0.1, 1.3, -1.0, 0.0];
    let x2 = vec![0.6, 0.2, -0.4, -0.9, 1.2, 0.5];
    let subjects = vec![
        SubjectRecord { id: 1, responses: vec![0, 0, 0, 0], x: x1, z: vec![] },
        SubjectRecord { id: 2, responses: vec![0, 2], x: x2, z: vec![] },
    ];
    let data = PanelDataset::from_subjects(3, 1, 0, false, subjects).expect("fixture shape");
    let params = ResponseParams { delta: vec![0.3, -0.2, 0.5], beta: vec![0.8], b: vec![], d: vec![], d_z: 0 };
    MicroFixture {
        data,
        params,
        q_row: vec![0.6, 0.45, 0.3],
        weights: vec![0.35, 0.25, 0.2, 0.12, 0.08],
        q: vec![
            vec![0.9, 0.2, 0.6],
            vec![0.3, 0.7, 0.5],
            vec![0.5, 0.5, 0.1],
            vec![0.1, 0.8, 0.9],
            vec![0.7, 0.4, 0.3],
        ],
    }
}

/// Long-run frequencies of the consideration-set sweep against the
/// enumerated full conditional, per subject. Returns the largest TV.
pub fn cs_sampler_tv(fx: &MicroFixture, sweeps: u64, seed: u64) -> Result<f64> {
    let na = fx.data.n_alt();
    let mut worst: f64 = 0.0;
    for i in 0..fx.data.n() {
        let exact = enumerate_cs_posterior(i, &fx.params, &fx.q_row, &fx.data)?;
        let v: Vec<f64> =
            (0..fx.data.t(i)).map(|t| utilities(&fx.params, &fx.data, i, t)).collect::<Result<Vec<_>>>()?.concat();
        let forced = fx.data.forced(i);
        let mut c = vec![true; na];
        let mut rng = stream(seed, 0, 0, i as u64);
        let mut freq = vec![0.0; 1 << na];
        for _ in 0..sweeps {
            sweep_subject(i, &mut c, &forced, &v, &fx.q_row, &mut rng, None);
            freq[row_mask(&c) as usize] += 1.0 / sweeps as f64;
        }
        worst = worst.max(total_variation(&freq, &exact));
    }
    Ok(worst)
}

/// Slice-conditional assignment frequencies for consideration vector `c`
/// and slice `u` against direct normalisation of
/// `1{u <= w_h} prod_j q_hj^c_j (1 - q_hj)^(1 - c_j)`.
pub fn assignment_tv(weights: &[f64], q: &[Vec<f64>], c: &[bool], u: f64, draws: u64, seed: u64) -> Result<f64> {
    let mut direct: Vec<f64> = weights
        .iter()
        .zip(q)
        .map(
            |(&w, qh)| {
                if u <= w {
                    c.iter().zip(qh).map(|(&b, &p)| if b { p } else { 1.0 - p }).product()
                } else {
                    0.0
                }
            },
        )
        .collect();
    let z: f64 = direct.iter().sum();
    direct.iter_mut().for_each(|p| *p /= z);
    let la = LogAttention::new(q);
    let mut rng = stream(seed, 0, 1, 0);
    let mut freq = vec![0.0; weights.len()];
    for _ in 0..draws {
        let h = sample_assignment_one(0, c, u, weights, &la, &mut rng)?;
        freq[h] += 1.0 / draws as f64;
    }
    Ok(total_variation(&freq, &direct))
}

/// Runs every check. `sweeps` controls the Monte Carlo length of the two
/// sampler checks.
pub fn run_oracle_checks(sweeps: u64, seed: u64) -> Result<Vec<OracleCheck>> {
    let fx = micro_fixture();
    let pmf = mixture_cs_pmf(&fx.weights, &fx.q)?;
    let mut resp_err: f64 = 0.0;
    for i in 0..fx.data.n() {
        for t in 0..fx.data.t(i) {
            let total: f64 = (0..fx.data.n_alt())
                .map(|j| marginal_response_prob(j, &fx.params, &fx.data, i, t, &pmf.probs))
                .sum::<Result<f64>>()?;
            resp_err = resp_err.max((total - 1.0).abs());
        }
    }
    Ok(vec![
        OracleCheck::new("cs_sampler_vs_enumeration", cs_sampler_tv(&fx, sweeps, seed)?, TV_TOLERANCE),
        OracleCheck::new(
            "assignment_vs_direct",
            assignment_tv(&fx.weights, &fx.q, &[true, false, true], 0.1, sweeps, seed)?,
            TV_TOLERANCE,
        ),
        OracleCheck::new("mixture_pmf_sums_to_one", (pmf.total() - 1.0).abs(), 1e-12),
        OracleCheck::new("marginal_response_sums_to_one", resp_err, 1e-12),
    ])
}
