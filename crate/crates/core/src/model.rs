//! Domain types shared by every sampler block: the panel dataset, latent
//! consideration vectors, response-model parameters, the slice-sampled
//! Dirichlet-process state and the hyperparameters.
//!
//! Categories are 0-based inside the library. Files and the Python bindings
//! use 1-based category labels.

use std::fmt;

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One subject's raw block of a [`PanelDataset`].
///
/// `x` holds `T * n_alt * d_x` values laid out as `[t][j][k]`, `z` likewise
/// with `d_z`. A non-finite entry marks a missing covariate.
#[derive(Debug, Clone)]
pub struct SubjectRecord {
    pub id: u64,
    pub responses: Vec<usize>,
    pub x: Vec<f64>,
    pub z: Vec<f64>,
}

/// Panel of categorical responses with alternative-specific covariates.
///
/// Panels may be unbalanced. Construction performs only shape checks; data
/// invariants are reported by [`validate_dataset`].
#[derive(Debug, Clone)]
pub struct PanelDataset {
    j: usize,
    outside_option: bool,
    d_x: usize,
    d_z: usize,
    ids: Vec<u64>,
    occ_start: Vec<usize>,
    responses: Vec<usize>,
    x: Vec<f64>,
    z: Vec<f64>,
}

impl PanelDataset {
    /// `j` counts the inside categories; with `outside_option` every record
    /// carries `j + 1` alternatives per occasion.
    pub fn from_subjects(
        j: usize,
        d_x: usize,
        d_z: usize,
        outside_option: bool,
        subjects: Vec<SubjectRecord>,
    ) -> Result<Self> {
        if j == 0 {
            return Err(Error::InvalidParameter("J must be positive".into()));
        }
        let n_alt = j + usize::from(outside_option);
        let mut occ_start = Vec::with_capacity(subjects.len() + 1);
        let mut ids = Vec::with_capacity(subjects.len());
        let mut responses = Vec::new();
        let mut x = Vec::new();
        let mut z = Vec::new();
        occ_start.push(0);
        for s in subjects {
            let t = s.responses.len();
            if s.x.len() != t * n_alt * d_x || s.z.len() != t * n_alt * d_z {
                return Err(Error::Format(format!(
                    "subject {}: covariate block has wrong length (T={t}, alternatives={n_alt})",
                    s.id
                )));
            }
            ids.push(s.id);
            responses.extend_from_slice(&s.responses);
            x.extend_from_slice(&s.x);
            z.extend_from_slice(&s.z);
            occ_start.push(responses.len());
        }
        Ok(Self { j, outside_option, d_x, d_z, ids, occ_start, responses, x, z })
    }

    pub fn n(&self) -> usize {
        self.ids.len()
    }

    /// Declared number of inside categories.
    pub fn j(&self) -> usize {
        self.j
    }

    /// Number of alternatives in the model, including the outside option.
    pub fn n_alt(&self) -> usize {
        self.j + usize::from(self.outside_option)
    }

    pub fn outside_option(&self) -> bool {
        self.outside_option
    }

    pub fn d_x(&self) -> usize {
        self.d_x
    }

    pub fn d_z(&self) -> usize {
        self.d_z
    }

    pub fn subject_ids(&self) -> &[u64] {
        &self.ids
    }

    pub fn subject_index(&self, id: u64) -> Option<usize> {
        self.ids.iter().position(|&v| v == id)
    }

    pub fn t(&self, i: usize) -> usize {
        self.occ_start[i + 1] - self.occ_start[i]
    }

    pub fn total_occasions(&self) -> usize {
        self.responses.len()
    }

    /// Global occasion offset of subject `i`.
    pub fn occ_offset(&self, i: usize) -> usize {
        self.occ_start[i]
    }

    pub fn responses(&self, i: usize) -> &[usize] {
        &self.responses[self.occ_start[i]..self.occ_start[i + 1]]
    }

    pub fn response(&self, i: usize, t: usize) -> usize {
        self.responses[self.occ_start[i] + t]
    }

    pub fn x(&self, i: usize, t: usize, j: usize) -> &[f64] {
        let row = (self.occ_start[i] + t) * self.n_alt() + j;
        &self.x[row * self.d_x..(row + 1) * self.d_x]
    }

    pub fn z(&self, i: usize, t: usize, j: usize) -> &[f64] {
        let row = (self.occ_start[i] + t) * self.n_alt() + j;
        &self.z[row * self.d_z..(row + 1) * self.d_z]
    }

    pub fn check_index(&self, i: usize, t: usize) -> Result<()> {
        if i >= self.n() {
            return Err(Error::Index(format!("subject {i} of {}", self.n())));
        }
        if t >= self.t(i) {
            return Err(Error::Index(format!("occasion {t} of {} for subject {i}", self.t(i))));
        }
        Ok(())
    }

    /// Categories that must be in subject `i`'s consideration set: every
    /// observed response plus the outside option when present.
    pub fn forced(&self, i: usize) -> Vec<bool> {
        let mut f = vec![false; self.n_alt()];
        for &y in self.responses(i) {
            if y < f.len() {
                f[y] = true;
            }
        }
        if self.outside_option {
            f[self.j] = true;
        }
        f
    }

    /// Subset of subjects, in the given order.
    pub fn select(&self, subjects: &[usize]) -> Self {
        let recs = subjects.iter().map(|&i| self.record(i)).collect();
        Self::from_subjects(self.j, self.d_x, self.d_z, self.outside_option, recs)
            .expect("shapes copied from a valid dataset")
    }

    pub fn record(&self, i: usize) -> SubjectRecord {
        let lo = self.occ_start[i] * self.n_alt();
        let hi = self.occ_start[i + 1] * self.n_alt();
        SubjectRecord {
            id: self.ids[i],
            responses: self.responses(i).to_vec(),
            x: self.x[lo * self.d_x..hi * self.d_x].to_vec(),
            z: self.z[lo * self.d_z..hi * self.d_z].to_vec(),
        }
    }

    /// Splits the last `h` occasions of every subject off as a holdout panel.
    /// Subjects with `T_i <= h` keep one estimation occasion.
    pub fn split_holdout(&self, h: usize) -> (Self, Self) {
        let na = self.n_alt();
        let mut est = Vec::with_capacity(self.n());
        let mut hold = Vec::with_capacity(self.n());
        for i in 0..self.n() {
            let rec = self.record(i);
            let t = rec.responses.len();
            let keep = t.saturating_sub(h).max(1.min(t));
            let cut_x = keep * na * self.d_x;
            let cut_z = keep * na * self.d_z;
            est.push(SubjectRecord {
                id: rec.id,
                responses: rec.responses[..keep].to_vec(),
                x: rec.x[..cut_x].to_vec(),
                z: rec.z[..cut_z].to_vec(),
            });
            hold.push(SubjectRecord {
                id: rec.id,
                responses: rec.responses[keep..].to_vec(),
                x: rec.x[cut_x..].to_vec(),
                z: rec.z[cut_z..].to_vec(),
            });
        }
        let mk = |v| Self::from_subjects(self.j, self.d_x, self.d_z, self.outside_option, v).unwrap();
        (mk(est), mk(hold))
    }
}

/// A single data-invariant breach. Indices are 1-based in the rendered
/// message.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Violation {
    NoOccasions { subject: u64 },
    ResponseOutOfRange { subject: u64, occasion: usize, value: usize },
    MissingCovariate { subject: u64, occasion: usize, category: usize },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::NoOccasions { subject } => write!(f, "subject {subject}: no occasions"),
            Violation::ResponseOutOfRange { subject, occasion, value } => {
                write!(f, "subject {subject}, occasion {}: response out of range ({})", occasion + 1, value + 1)
            }
            Violation::MissingCovariate { subject, occasion, category } => {
                write!(f, "subject {subject}, occasion {}, category {}: missing covariate", occasion + 1, category + 1)
            }
        }
    }
}

/// Lists every violated dataset invariant; empty means the panel is usable.
pub fn validate_dataset(data: &PanelDataset) -> Vec<Violation> {
    let mut out = Vec::new();
    let na = data.n_alt();
    for i in 0..data.n() {
        let id = data.ids[i];
        if data.t(i) == 0 {
            out.push(Violation::NoOccasions { subject: id });
        }
        for t in 0..data.t(i) {
            let y = data.response(i, t);
            if y >= na {
                out.push(Violation::ResponseOutOfRange { subject: id, occasion: t, value: y });
            }
            for j in 0..na {
                let ok = data.x(i, t, j).iter().chain(data.z(i, t, j)).all(|v| v.is_finite());
                if !ok {
                    out.push(Violation::MissingCovariate { subject: id, occasion: t, category: j });
                }
            }
        }
    }
    out
}

pub fn ensure_valid(data: &PanelDataset) -> Result<()> {
    let v = validate_dataset(data);
    match v.first() {
        None => Ok(()),
        Some(first) => Err(Error::Validation { count: v.len(), first: first.to_string() }),
    }
}

/// Latent binary inclusion vectors, one row of length `n_alt` per subject.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConsiderationState {
    n_alt: usize,
    bits: Vec<bool>,
}

impl ConsiderationState {
    pub fn full(n: usize, n_alt: usize) -> Self {
        Self { n_alt, bits: vec![true; n * n_alt] }
    }

    /// Smallest admissible state: each subject considers exactly its forced
    /// categories.
    pub fn observed(data: &PanelDataset) -> Self {
        let mut bits = Vec::with_capacity(data.n() * data.n_alt());
        for i in 0..data.n() {
            bits.extend(data.forced(i));
        }
        Self { n_alt: data.n_alt(), bits }
    }

    pub fn from_rows(rows: Vec<Vec<bool>>) -> Result<Self> {
        let n_alt = rows.first().map_or(0, Vec::len);
        if rows.iter().any(|r| r.len() != n_alt) {
            return Err(Error::Format("ragged consideration rows".into()));
        }
        Ok(Self { n_alt, bits: rows.concat() })
    }

    pub fn n(&self) -> usize {
        if self.n_alt == 0 {
            0
        } else {
            self.bits.len() / self.n_alt
        }
    }

    pub fn n_alt(&self) -> usize {
        self.n_alt
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.bits[i * self.n_alt..(i + 1) * self.n_alt]
    }

    pub fn row_mut(&mut self, i: usize) -> &mut [bool] {
        &mut self.bits[i * self.n_alt..(i + 1) * self.n_alt]
    }

    pub fn rows_mut(&mut self) -> std::slice::ChunksMut<'_, bool> {
        self.bits.chunks_mut(self.n_alt)
    }

    /// Set view of row `i`.
    pub fn set(&self, i: usize) -> Vec<usize> {
        set_of(self.row(i))
    }

    /// Bitmask encoding of row `i` (bit `j` for category `j`); `None` above 63
    /// alternatives.
    pub fn mask(&self, i: usize) -> Option<u64> {
        (self.n_alt <= 63).then(|| row_mask(self.row(i)))
    }

    /// `(subject, occasion)` pairs whose response is excluded.
    pub fn forced_inclusion_violations(&self, data: &PanelDataset) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..data.n() {
            let row = self.row(i);
            for (t, &y) in data.responses(i).iter().enumerate() {
                if !row[y] {
                    out.push((i, t));
                }
            }
        }
        out
    }

    pub fn to_strings(&self) -> Vec<String> {
        self.bits.chunks(self.n_alt.max(1)).map(|r| r.iter().map(|&b| if b { '1' } else { '0' }).collect()).collect()
    }

    pub fn from_strings(rows: &[String]) -> Result<Self> {
        let parsed = rows
            .iter()
            .map(|s| {
                s.chars()
                    .map(|c| match c {
                        '1' => Ok(true),
                        '0' => Ok(false),
                        _ => Err(Error::Format(format!("bad consideration bit {c:?}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_rows(parsed)
    }
}

impl Serialize for ConsiderationState {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        self.to_strings().serialize(s)
    }
}

impl<'de> Deserialize<'de> for ConsiderationState {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let rows = Vec::<String>::deserialize(d)?;
        Self::from_strings(&rows).map_err(serde::de::Error::custom)
    }
}

pub fn set_of(row: &[bool]) -> Vec<usize> {
    row.iter().enumerate().filter_map(|(j, &b)| b.then_some(j)).collect()
}

pub fn row_mask(row: &[bool]) -> u64 {
    row.iter().enumerate().fold(0u64, |m, (j, &b)| if b { m | (1 << j) } else { m })
}

pub fn mask_row(mask: u64, n_alt: usize) -> Vec<bool> {
    (0..n_alt).map(|j| mask >> j & 1 == 1).collect()
}

/// Parameters of the random-effects logit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResponseParams {
    /// Category fixed effects; the last entry is pinned at zero.
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
    /// Random effects, `n * d_z` row-major.
    pub b: Vec<f64>,
    /// Random-effect covariance, `d_z * d_z` row-major.
    pub d: Vec<f64>,
    pub d_z: usize,
}

impl ResponseParams {
    pub fn zeros(n: usize, n_alt: usize, d_x: usize, d_z: usize) -> Self {
        let mut d = vec![0.0; d_z * d_z];
        for k in 0..d_z {
            d[k * d_z + k] = 1.0;
        }
        Self { delta: vec![0.0; n_alt], beta: vec![0.0; d_x], b: vec![0.0; n * d_z], d, d_z }
    }

    pub fn for_data(data: &PanelDataset) -> Self {
        Self::zeros(data.n(), data.n_alt(), data.d_x(), data.d_z())
    }

    pub fn b_i(&self, i: usize) -> &[f64] {
        &self.b[i * self.d_z..(i + 1) * self.d_z]
    }

    pub fn b_i_mut(&mut self, i: usize) -> &mut [f64] {
        &mut self.b[i * self.d_z..(i + 1) * self.d_z]
    }

    pub fn d_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.d_z, self.d_z, &self.d)
    }

    pub fn set_d(&mut self, m: &DMatrix<f64>) {
        self.d = m.transpose().as_slice().to_vec();
    }
}

/// Stick-breaking weights from stick proportions.
pub fn stick_weights(sticks: &[f64]) -> Vec<f64> {
    let mut rest = 1.0;
    sticks
        .iter()
        .map(|&v| {
            let w = v * rest;
            rest *= 1.0 - v;
            w
        })
        .collect()
}

/// Slice-sampled truncation of the DP mixture over attention probabilities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureState {
    pub sticks: Vec<f64>,
    pub weights: Vec<f64>,
    /// Attention-probability rows, one per active component.
    pub q: Vec<Vec<f64>>,
    pub assign: Vec<usize>,
    pub slice: Vec<f64>,
    pub alpha: f64,
}

impl MixtureState {
    pub fn k_star(&self) -> usize {
        self.sticks.len()
    }

    pub fn refresh_weights(&mut self) {
        self.weights = stick_weights(&self.sticks);
    }

    pub fn occupied(&self) -> usize {
        let mut seen = vec![false; self.k_star()];
        for &s in &self.assign {
            seen[s] = true;
        }
        seen.into_iter().filter(|&b| b).count()
    }

    /// Checks the stick, slice and truncation invariants; returns a
    /// description of the first breach.
    pub fn check_invariants(&self) -> std::result::Result<(), String> {
        let w = stick_weights(&self.sticks);
        for (a, b) in w.iter().zip(&self.weights) {
            if (a - b).abs() > 1e-12 {
                return Err(format!("stored weight {b} differs from recomputed {a}"));
            }
        }
        if self.weights.iter().any(|&x| x < 0.0) || self.weights.iter().sum::<f64>() > 1.0 + 1e-12 {
            return Err("weights not a sub-probability vector".into());
        }
        for (i, (&s, &u)) in self.assign.iter().zip(&self.slice).enumerate() {
            if s >= self.k_star() {
                return Err(format!("subject {i} assigned past K*"));
            }
            if u > self.weights[s] {
                return Err(format!("subject {i}: slice {u} exceeds weight {}", self.weights[s]));
            }
        }
        if let Some(umin) = self.slice.iter().copied().reduce(f64::min) {
            if self.weights.iter().sum::<f64>() <= 1.0 - umin {
                return Err("truncation mass does not cover 1 - min u".into());
            }
        }
        Ok(())
    }
}

/// Prior hyperparameters and proposal tuning.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    /// Gamma shape and rate for the concentration parameter.
    pub a_alpha: f64,
    pub b_alpha: f64,
    pub q_a: Vec<f64>,
    pub q_b: Vec<f64>,
    pub v_delta: f64,
    pub v_beta: f64,
    pub wishart_df: f64,
    /// Wishart scale for `D^{-1}`, `d_z * d_z` row-major.
    pub wishart_scale: Vec<f64>,
    /// Multiplier on the tailored proposal covariance for beta and delta.
    pub proposal_scale: f64,
}

impl Hyperparams {
    /// Simulation-study defaults: Gamma(2,4) on alpha, N(0,3) on beta and
    /// delta, sparsity prior with s = 1 and r0 = 1, Wishart(9, I/9).
    pub fn defaults(n_alt: usize, d_z: usize) -> Self {
        let df = 9f64.max(d_z as f64);
        let mut scale = vec![0.0; d_z * d_z];
        for k in 0..d_z {
            scale[k * d_z + k] = 1.0 / df;
        }
        let mut h = Self {
            a_alpha: 2.0,
            b_alpha: 4.0,
            q_a: vec![],
            q_b: vec![],
            v_delta: 3.0,
            v_beta: 3.0,
            wishart_df: df,
            wishart_scale: scale,
            proposal_scale: 1.0,
        };
        h.set_sparsity(n_alt, 1.0, 1.0);
        h
    }

    /// Application profile: sparsity prior with s = 5, r0 = 30 and proposal
    /// variance scaled by 1e-2.
    pub fn application(n_alt: usize, d_z: usize) -> Self {
        let mut h = Self::defaults(n_alt, d_z);
        h.set_sparsity(n_alt, 5.0, 30.0);
        h.proposal_scale = 1e-2;
        h
    }

    /// `a = s r`, `b = s (1 - r)` with `r = r0 / J`.
    pub fn set_sparsity(&mut self, n_alt: usize, s: f64, r0: f64) {
        let r = r0 / n_alt as f64;
        self.q_a = vec![s * r; n_alt];
        self.q_b = vec![s * (1.0 - r); n_alt];
    }

    pub fn set_uniform_q(&mut self, n_alt: usize) {
        self.q_a = vec![1.0; n_alt];
        self.q_b = vec![1.0; n_alt];
    }

    pub fn wishart_scale_matrix(&self) -> DMatrix<f64> {
        let d = (self.wishart_scale.len() as f64).sqrt() as usize;
        DMatrix::from_row_slice(d, d, &self.wishart_scale)
    }

    pub fn validate(&self, n_alt: usize, d_z: usize) -> Result<()> {
        let pos = |name: &str, v: f64| {
            if v > 0.0 && v.is_finite() {
                Ok(())
            } else {
                Err(Error::InvalidParameter(format!("{name} must be positive, got {v}")))
            }
        };
        pos("a_alpha", self.a_alpha)?;
        pos("b_alpha", self.b_alpha)?;
        pos("v_delta", self.v_delta)?;
        pos("v_beta", self.v_beta)?;
        pos("proposal_scale", self.proposal_scale)?;
        if self.q_a.len() != n_alt || self.q_b.len() != n_alt {
            return Err(Error::InvalidParameter(format!(
                "attention prior has {} entries, expected {n_alt}",
                self.q_a.len()
            )));
        }
        for (a, b) in self.q_a.iter().zip(&self.q_b) {
            pos("q_a", *a)?;
            pos("q_b", *b)?;
        }
        if d_z > 0 {
            if self.wishart_df < d_z as f64 {
                return Err(Error::InvalidParameter(format!("Wishart df {} below dimension {d_z}", self.wishart_df)));
            }
            if self.wishart_scale.len() != d_z * d_z {
                return Err(Error::InvalidParameter("Wishart scale has wrong dimension".into()));
            }
            if self.wishart_scale_matrix().cholesky().is_none() {
                return Err(Error::NotSpd("Wishart scale".into()));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) fn tiny(j: usize, n: usize, t: usize) -> PanelDataset {
        let subjects = (0..n)
            .map(|i| SubjectRecord {
                id: i as u64 + 1,
                responses: (0..t).map(|s| (i + s) % j).collect(),
                x: vec![0.5; t * j],
                z: vec![],
            })
            .collect();
        PanelDataset::from_subjects(j, 1, 0, false, subjects).unwrap()
    }

    #[test]
    fn well_formed_dataset_has_no_violations() {
        assert!(validate_dataset(&tiny(4, 2, 3)).is_empty());
    }

    #[test]
    fn out_of_range_response_reported() {
        let mut recs: Vec<_> = (0..2).map(|i| tiny(4, 2, 3).record(i)).collect();
        recs[0].responses[0] = 4;
        let d = PanelDataset::from_subjects(4, 1, 0, false, recs).unwrap();
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::ResponseOutOfRange { subject: 1, occasion: 0, value: 4 }]);
        assert!(v[0].to_string().contains("response out of range"));
    }

    #[test]
    fn missing_covariate_reported() {
        let mut recs: Vec<_> = (0..2).map(|i| tiny(4, 2, 3).record(i)).collect();
        // x_{2,3,1}: subject 2, category 3, occasion 1
        recs[1].x[2] = f64::NAN;
        let d = PanelDataset::from_subjects(4, 1, 0, false, recs).unwrap();
        let v = validate_dataset(&d);
        assert_eq!(v, vec![Violation::MissingCovariate { subject: 2, occasion: 0, category: 2 }]);
        assert!(v[0].to_string().contains("missing covariate"));
    }

    #[test]
    fn observed_state_satisfies_forced_inclusion() {
        let d = tiny(5, 3, 2);
        let c = ConsiderationState::observed(&d);
        assert!(c.forced_inclusion_violations(&d).is_empty());
        for i in 0..d.n() {
            assert!(!c.set(i).is_empty());
        }
    }

    #[test]
    fn stick_weights_arithmetic() {
        let w = stick_weights(&[0.5, 0.5, 0.5]);
        assert_eq!(w, vec![0.5, 0.25, 0.125]);
    }

    #[test]
    fn consideration_strings_roundtrip() {
        let c = ConsiderationState::from_rows(vec![vec![true, false, true], vec![false, true, true]]).unwrap();
        let back = ConsiderationState::from_strings(&c.to_strings()).unwrap();
        assert_eq!(c, back);
        assert_eq!(c.mask(0), Some(0b101));
    }

    #[test]
    fn holdout_split_keeps_tail() {
        let d = tiny(3, 2, 5);
        let (est, hold) = d.split_holdout(2);
        assert_eq!(est.t(0), 3);
        assert_eq!(hold.t(0), 2);
        assert_eq!(hold.responses(1), &d.responses(1)[3..]);
    }

    #[test]
    fn sparsity_parameterisation() {
        let h = Hyperparams::application(73, 3);
        let r = 30.0 / 73.0;
        assert!((h.q_a[0] - 5.0 * r).abs() < 1e-15);
        assert!((h.q_b[0] - 5.0 * (1.0 - r)).abs() < 1e-15);
        assert!(h.validate(73, 3).is_ok());
    }
}
