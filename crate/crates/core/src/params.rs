//! Response-model parameter updates.
//!
//! `beta` and each `delta_k` use a tailored independence M-H step whose
//! proposal is Gaussian at the Newton-Raphson conditional mode with the
//! inverse negative Hessian (times a scale knob) as covariance. Random
//! effects use a symmetric random walk with covariance `D`, and `D^{-1}` is
//! drawn from its conjugate Wishart.

use log::warn;
use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::likelihood::{log_denominator, log_sum_exp, UtilityTable};
use crate::model::{ConsiderationState, Hyperparams, PanelDataset, ResponseParams};
use crate::random::{mvn_chol, mvn_log_density, permutation, symmetrize, wishart};

pub const NEWTON_MAX_ITER: usize = 50;
pub const NEWTON_TOL: f64 = 1e-8;

/// Objective value, gradient and Hessian.
pub type Derivs = (f64, Vec<f64>, DMatrix<f64>);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailoredProposal {
    pub mode: Vec<f64>,
    pub cov: Vec<f64>,
    pub scale: f64,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NewtonResult {
    pub mode: Vec<f64>,
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: DMatrix<f64>,
    pub iterations: usize,
    pub converged: bool,
    /// `-H` admitted a Cholesky factor at the returned point.
    pub negative_definite: bool,
}

/// Damped Newton-Raphson maximisation starting at `start`.
pub fn newton_maximize<F: Fn(&[f64]) -> Derivs>(f: F, start: &[f64], max_iter: usize, tol: f64) -> NewtonResult {
    let mut x = start.to_vec();
    let (mut val, mut g, mut h) = f(&x);
    let mut iterations = 0;
    loop {
        let neg = -&h;
        let chol = neg.clone().cholesky();
        let gnorm = g.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if gnorm < tol || iterations >= max_iter || chol.is_none() || !val.is_finite() {
            return NewtonResult {
                mode: x,
                value: val,
                grad: g,
                negative_definite: chol.is_some(),
                converged: gnorm < tol && chol.is_some(),
                hess: h,
                iterations,
            };
        }
        let step = chol.unwrap().solve(&DVector::from_vec(g.clone()));
        iterations += 1;
        let mut t = 1.0;
        loop {
            let cand: Vec<f64> = x.iter().zip(step.iter()).map(|(a, s)| a + t * s).collect();
            let (cv, cg, ch) = f(&cand);
            if cv.is_finite() && cv >= val - 1e-12 * val.abs().max(1.0) || t < 1e-10 {
                x = cand;
                val = cv;
                g = cg;
                h = ch;
                break;
            }
            t *= 0.5;
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub accepted: bool,
    pub log_accept: f64,
    pub fell_back: bool,
}

/// Tailored independence M-H step on a target with analytic derivatives.
/// Falls back to a random walk with covariance `fallback_var * I` when the
/// Hessian at the Newton end point is not negative-definite.
pub fn tailored_step<F: Fn(&[f64]) -> Derivs, R: Rng + ?Sized>(
    target: F,
    current: &mut Vec<f64>,
    scale: f64,
    fallback_var: f64,
    rng: &mut R,
) -> (StepOutcome, Option<TailoredProposal>) {
    let d = current.len();
    let nr = newton_maximize(&target, current, NEWTON_MAX_ITER, NEWTON_TOL);
    let cur_val = target(current).0;
    let cov = if nr.negative_definite { (-&nr.hess).try_inverse().map(|m| symmetrize(m) * scale) } else { None };
    let chol = cov.as_ref().and_then(|c| c.clone().cholesky()).map(|c| c.l());
    match (cov, chol) {
        (Some(cov), Some(l)) => {
            let cand = mvn_chol(&nr.mode, &l, rng);
            let cand_val = target(&cand).0;
            let log_a =
                cand_val - cur_val + mvn_log_density(current, &nr.mode, &l) - mvn_log_density(&cand, &nr.mode, &l);
            let accepted = accept(log_a, rng);
            if accepted {
                *current = cand;
            }
            let proposal = TailoredProposal {
                mode: nr.mode,
                cov: cov.transpose().as_slice().to_vec(),
                scale,
                iterations: nr.iterations,
                converged: nr.converged,
            };
            (StepOutcome { accepted, log_accept: log_a.min(0.0), fell_back: false }, Some(proposal))
        }
        _ => {
            warn!("Hessian not negative-definite after {} Newton iterations; random-walk fallback", nr.iterations);
            let l = DMatrix::<f64>::identity(d, d) * fallback_var.sqrt();
            let cand = mvn_chol(current, &l, rng);
            let log_a = target(&cand).0 - cur_val;
            let accepted = accept(log_a, rng);
            if accepted {
                *current = cand;
            }
            (StepOutcome { accepted, log_accept: log_a.min(0.0), fell_back: true }, None)
        }
    }
}

fn accept<R: Rng + ?Sized>(log_a: f64, rng: &mut R) -> bool {
    if log_a.is_nan() {
        return false;
    }
    log_a >= 0.0 || rng.random::<f64>() < log_a.exp()
}

/// `delta_j + z'b_i` for every occasion and alternative.
fn offsets(data: &PanelDataset, params: &ResponseParams) -> Vec<f64> {
    let na = data.n_alt();
    let mut out = vec![0.0; data.total_occasions() * na];
    for i in 0..data.n() {
        let off = data.occ_offset(i);
        for t in 0..data.t(i) {
            for j in 0..na {
                let mut v = params.delta[j];
                for (a, b) in data.z(i, t, j).iter().zip(params.b_i(i)) {
                    v += a * b;
                }
                out[(off + t) * na + j] = v;
            }
        }
    }
    out
}

/// Conditional log-posterior of `beta` (up to a constant) with gradient and
/// Hessian, given `delta`, random effects and consideration sets.
pub struct BetaTarget<'a> {
    data: &'a PanelDataset,
    members: Vec<Vec<usize>>,
    offset: Vec<f64>,
    prior_var: f64,
}

impl<'a> BetaTarget<'a> {
    pub fn new(data: &'a PanelDataset, params: &ResponseParams, cs: &ConsiderationState, prior_var: f64) -> Self {
        Self { data, members: (0..data.n()).map(|i| cs.set(i)).collect(), offset: offsets(data, params), prior_var }
    }

    pub fn eval(&self, beta: &[f64]) -> Derivs {
        let d = beta.len();
        let na = self.data.n_alt();
        let mut f = -beta.iter().map(|b| b * b).sum::<f64>() / (2.0 * self.prior_var);
        let mut g: Vec<f64> = beta.iter().map(|b| -b / self.prior_var).collect();
        let mut h = DMatrix::<f64>::identity(d, d) * (-1.0 / self.prior_var);
        let mut v = Vec::new();
        let mut xbar = vec![0.0; d];
        for i in 0..self.data.n() {
            let m = &self.members[i];
            let off = self.data.occ_offset(i);
            for t in 0..self.data.t(i) {
                let y = self.data.response(i, t);
                if !m.contains(&y) {
                    return (f64::NEG_INFINITY, g, h);
                }
                v.clear();
                for &j in m {
                    let x = self.data.x(i, t, j);
                    v.push(self.offset[(off + t) * na + j] + x.iter().zip(beta).map(|(a, b)| a * b).sum::<f64>());
                }
                let lse = log_sum_exp(v.iter().copied());
                let pos = m.iter().position(|&j| j == y).unwrap();
                f += v[pos] - lse;
                xbar.iter_mut().for_each(|a| *a = 0.0);
                for (k, &j) in m.iter().enumerate() {
                    let p = (v[k] - lse).exp();
                    let x = self.data.x(i, t, j);
                    for a in 0..d {
                        xbar[a] += p * x[a];
                        for b in 0..=a {
                            h[(a, b)] -= p * x[a] * x[b];
                        }
                    }
                }
                let xy = self.data.x(i, t, y);
                for a in 0..d {
                    g[a] += xy[a] - xbar[a];
                    for b in 0..=a {
                        h[(a, b)] += xbar[a] * xbar[b];
                    }
                }
            }
        }
        for a in 0..d {
            for b in 0..a {
                h[(b, a)] = h[(a, b)];
            }
        }
        (f, g, h)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tally {
    pub accepted: u64,
    pub tried: u64,
}

impl Tally {
    pub fn add(&mut self, accepted: bool) {
        self.tried += 1;
        self.accepted += u64::from(accepted);
    }

    pub fn merge(&mut self, o: &Tally) {
        self.accepted += o.accepted;
        self.tried += o.tried;
    }

    pub fn rate(&self) -> f64 {
        if self.tried == 0 {
            f64::NAN
        } else {
            self.accepted as f64 / self.tried as f64
        }
    }
}

/// Tailored M-H update of `beta`.
pub fn sample_beta<R: Rng + ?Sized>(
    params: &mut ResponseParams,
    cs: &ConsiderationState,
    data: &PanelDataset,
    hyper: &Hyperparams,
    rng: &mut R,
) -> (StepOutcome, Option<TailoredProposal>) {
    let target = BetaTarget::new(data, params, cs, hyper.v_beta);
    let mut beta = params.beta.clone();
    let out = tailored_step(|b| target.eval(b), &mut beta, hyper.proposal_scale, hyper.v_beta, rng);
    params.beta = beta;
    out
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Scalar conditional of `delta_k`. Each relevant occasion contributes
/// `[y = k](d + c) - softplus(d + c)` with `c = V_k - delta_k - log A` and
/// `A` the denominator without `k`.
pub struct DeltaTarget {
    terms: Vec<(usize, f64, bool)>,
    prior_var: f64,
}

impl DeltaTarget {
    pub fn new(
        k: usize,
        delta_k: f64,
        data: &PanelDataset,
        cs: &ConsiderationState,
        util: &UtilityTable,
        log_den: &[f64],
        prior_var: f64,
    ) -> Self {
        let mut terms = Vec::new();
        for i in 0..data.n() {
            let row = cs.row(i);
            if !row[k] {
                continue;
            }
            let off = data.occ_offset(i);
            for t in 0..data.t(i) {
                let o = off + t;
                let v = util.row(o);
                let share = (v[k] - log_den[o]).exp();
                let log_a = if share < 0.5 {
                    log_den[o] + (-share).ln_1p()
                } else {
                    log_sum_exp(row.iter().enumerate().filter(|&(j, &b)| b && j != k).map(|(j, _)| v[j]))
                };
                terms.push((o, v[k] - delta_k - log_a, data.response(i, t) == k));
            }
        }
        Self { terms, prior_var }
    }

    pub fn is_prior_only(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn eval(&self, d: f64) -> (f64, f64, f64) {
        let mut f = -d * d / (2.0 * self.prior_var);
        let mut g = -d / self.prior_var;
        let mut h = -1.0 / self.prior_var;
        for &(_, c, is_y) in &self.terms {
            if c == f64::NEG_INFINITY {
                // k is the only member: probability one regardless of delta_k.
                continue;
            }
            let e = d + c;
            let s = sigmoid(e);
            if is_y {
                f += e;
                g += 1.0;
            }
            f -= softplus(e);
            g -= s;
            h -= s * (1.0 - s);
        }
        (f, g, h)
    }

    fn derivs(&self, x: &[f64]) -> Derivs {
        let (f, g, h) = self.eval(x[0]);
        (f, vec![g], DMatrix::from_element(1, 1, h))
    }

    /// Writes the accepted value into the caches.
    fn commit(&self, k: usize, old: f64, new: f64, data: &PanelDataset, util: &mut UtilityTable, log_den: &mut [f64]) {
        let shift = new - old;
        for o in 0..data.total_occasions() {
            let v = util.row(o)[k];
            util.set(o, k, v + shift);
        }
        for &(o, c, _) in &self.terms {
            // log S = log A + softplus(delta + c)
            let log_a = util.row(o)[k] - new - c;
            log_den[o] = if c == f64::NEG_INFINITY { util.row(o)[k] } else { log_a + softplus(new + c) };
        }
    }
}

/// Updates `delta_k` for every free category in random order; the last
/// alternative stays pinned at zero. The caches must match `params` and `cs`
/// on entry and are kept coherent.
#[allow(clippy::too_many_arguments)]
pub fn sample_delta_cached<R: Rng + ?Sized>(
    params: &mut ResponseParams,
    cs: &ConsiderationState,
    data: &PanelDataset,
    hyper: &Hyperparams,
    util: &mut UtilityTable,
    log_den: &mut [f64],
    rng: &mut R,
    tally: &mut Tally,
) {
    let free = params.delta.len() - 1;
    for k in permutation(free, rng) {
        let old = params.delta[k];
        let target = DeltaTarget::new(k, old, data, cs, util, log_den, hyper.v_delta);
        let mut cur = vec![old];
        let (out, _) = tailored_step(|x| target.derivs(x), &mut cur, hyper.proposal_scale, hyper.v_delta, rng);
        tally.add(out.accepted);
        if out.accepted {
            params.delta[k] = cur[0];
            target.commit(k, old, cur[0], data, util, log_den);
        }
    }
}

/// Convenience wrapper around [`sample_delta_cached`] that builds its caches.
pub fn sample_delta<R: Rng + ?Sized>(
    params: &mut ResponseParams,
    cs: &ConsiderationState,
    data: &PanelDataset,
    hyper: &Hyperparams,
    rng: &mut R,
) -> Tally {
    let mut util = UtilityTable::build(params, data);
    let mut log_den = crate::likelihood::log_denominators(&util, data, cs);
    let mut tally = Tally::default();
    sample_delta_cached(params, cs, data, hyper, &mut util, &mut log_den, rng, &mut tally);
    tally
}

/// Subject log-likelihood with a candidate random effect.
fn subject_loglik_with_b(
    data: &PanelDataset,
    params: &ResponseParams,
    row: &[bool],
    i: usize,
    b: &[f64],
    scratch: &mut Vec<f64>,
) -> f64 {
    let na = data.n_alt();
    let mut total = 0.0;
    for t in 0..data.t(i) {
        scratch.clear();
        for j in 0..na {
            let mut v = params.delta[j];
            v += data.x(i, t, j).iter().zip(&params.beta).map(|(a, c)| a * c).sum::<f64>();
            v += data.z(i, t, j).iter().zip(b).map(|(a, c)| a * c).sum::<f64>();
            scratch.push(v);
        }
        let y = data.response(i, t);
        if !row[y] {
            return f64::NEG_INFINITY;
        }
        total += scratch[y] - log_denominator(row, scratch);
    }
    total
}

/// Random-walk M-H for one subject's random effect with proposal
/// `N(b_i, D)` and target `N(b_i | 0, D) * L_i(b_i)`. `chol_d` is the lower
/// Cholesky factor of `D`.
pub fn sample_b_one<R: Rng + ?Sized>(
    i: usize,
    params: &ResponseParams,
    row: &[bool],
    data: &PanelDataset,
    chol_d: &DMatrix<f64>,
    rng: &mut R,
) -> (Vec<f64>, bool) {
    let cur = params.b_i(i).to_vec();
    let zero = vec![0.0; cur.len()];
    let cand = mvn_chol(&cur, chol_d, rng);
    let mut scratch = Vec::new();
    let lp = |b: &[f64], s: &mut Vec<f64>| {
        mvn_log_density(b, &zero, chol_d) + subject_loglik_with_b(data, params, row, i, b, s)
    };
    let log_a = lp(&cand, &mut scratch) - lp(&cur, &mut scratch);
    if accept(log_a, rng) {
        (cand, true)
    } else {
        (cur, false)
    }
}

/// Sequential random-effect sweep over all subjects.
pub fn sample_b<R: Rng + ?Sized>(
    params: &mut ResponseParams,
    cs: &ConsiderationState,
    data: &PanelDataset,
    rng: &mut R,
) -> Result<Tally> {
    let chol = params.d_matrix().cholesky().ok_or_else(|| Error::NotSpd("D".into()))?.l();
    let mut tally = Tally::default();
    for i in 0..data.n() {
        let (b, acc) = sample_b_one(i, params, cs.row(i), data, &chol, rng);
        params.b_i_mut(i).copy_from_slice(&b);
        tally.add(acc);
    }
    Ok(tally)
}

/// `D^{-1} ~ Wishart(v + n, [R^{-1} + sum b_i b_i']^{-1})`; returns `D`.
pub fn sample_d<R: Rng + ?Sized>(b: &[f64], d_z: usize, hyper: &Hyperparams, rng: &mut R) -> Result<DMatrix<f64>> {
    let n = if d_z == 0 { 0 } else { b.len() / d_z };
    let r_inv = hyper.wishart_scale_matrix().try_inverse().ok_or_else(|| Error::NotSpd("Wishart scale".into()))?;
    let mut acc = r_inv;
    for i in 0..n {
        let bi = DVector::from_column_slice(&b[i * d_z..(i + 1) * d_z]);
        acc += &bi * bi.transpose();
    }
    let scale = symmetrize(acc.try_inverse().ok_or_else(|| Error::NotSpd("Wishart posterior scale".into()))?);
    let w = wishart(hyper.wishart_df + n as f64, &scale, rng)?;
    let d = symmetrize(w.try_inverse().ok_or_else(|| Error::NotSpd("Wishart draw".into()))?);
    if d.clone().cholesky().is_none() {
        return Err(Error::NotSpd("D draw".into()));
    }
    Ok(d)
}

/// Largest relative discrepancy between the analytic gradient/Hessian of the
/// beta target and central finite differences at `beta`, measured as
/// `max |analytic - fd| / max(|analytic|_inf, 1)`.
pub fn beta_fd_error(target: &BetaTarget<'_>, beta: &[f64], step: f64) -> (f64, f64) {
    let d = beta.len();
    let (_, g, h) = target.eval(beta);
    let mut fd_g = vec![0.0; d];
    let mut fd_h = DMatrix::<f64>::zeros(d, d);
    for a in 0..d {
        let mut up = beta.to_vec();
        let mut dn = beta.to_vec();
        up[a] += step;
        dn[a] -= step;
        let (fu, gu, _) = target.eval(&up);
        let (fdn, gd, _) = target.eval(&dn);
        fd_g[a] = (fu - fdn) / (2.0 * step);
        for b in 0..d {
            fd_h[(b, a)] = (gu[b] - gd[b]) / (2.0 * step);
        }
    }
    let gscale = g.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let hscale = h.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let ge = g.iter().zip(&fd_g).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / gscale;
    let he = h.iter().zip(fd_h.iter()).fold(0.0f64, |m, (a, b)| m.max((a - b).abs())) / hscale;
    (ge, he)
}
