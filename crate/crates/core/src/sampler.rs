//! Full MCMC cycle: beta, random effects, D, delta, consideration sets, then
//! the DP block (sticks, attention rows, slices, assignments, alpha).
//!
//! Every random draw comes from a stream keyed by `(seed, iteration, block,
//! subject)`, so a chain is a pure function of its seed and starting state
//! regardless of the rayon thread count, and resuming from a checkpoint
//! reproduces the uninterrupted run.

use std::fmt;
use std::str::FromStr;

use log::{info, warn};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cs_sampler::{sweep_subject, CsCounts, CsProposal};
use crate::dp::{
    extend_sticks, sample_alpha, sample_assignment_one, sample_q, sample_slices, sample_sticks, ClusterStats,
    LogAttention,
};
use crate::error::{Error, Result};
use crate::likelihood::{log_denominators, UtilityTable};
use crate::model::{
    ensure_valid, stick_weights, ConsiderationState, Hyperparams, MixtureState, PanelDataset, ResponseParams,
};
use crate::params::{beta_fd_error, sample_b_one, sample_beta, sample_d, sample_delta_cached, BetaTarget, Tally};
use crate::random::{beta as beta_draw, std_normal, stream};

const B_BETA: u64 = 1;
const B_B: u64 = 2;
const B_D: u64 = 3;
const B_DELTA: u64 = 4;
const B_CS: u64 = 5;
const B_STICKS: u64 = 6;
const B_Q: u64 = 7;
const B_SLICE: u64 = 8;
const B_EXTEND: u64 = 9;
const B_ASSIGN: u64 = 10;
const B_ALPHA: u64 = 11;
const B_INIT: u64 = 12;
const B_FD: u64 = 13;

/// Which latent blocks are switched on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    Mnl,
    MnlR,
    MnlC,
    MnlRc,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Mnl, Variant::MnlR, Variant::MnlC, Variant::MnlRc];

    pub fn random_effects(self) -> bool {
        matches!(self, Variant::MnlR | Variant::MnlRc)
    }

    pub fn consideration(self) -> bool {
        matches!(self, Variant::MnlC | Variant::MnlRc)
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Variant::Mnl => "mnl",
            Variant::MnlR => "mnl_r",
            Variant::MnlC => "mnl_c",
            Variant::MnlRc => "mnl_rc",
        })
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mnl" => Ok(Variant::Mnl),
            "mnl_r" => Ok(Variant::MnlR),
            "mnl_c" => Ok(Variant::MnlC),
            "mnl_rc" => Ok(Variant::MnlRc),
            _ => Err(Error::Config(format!("unknown variant {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcControl {
    pub iters: u64,
    /// Defaults to 20% of `iters`.
    pub burnin: Option<u64>,
    pub thin: u64,
    pub seed: u64,
    /// Components the assignments are spread over at start-up.
    pub init_clusters: usize,
    pub log_proposals: bool,
    pub report_every: u64,
    pub check_derivatives: bool,
    pub checkpoint_every: u64,
}

impl Default for McmcControl {
    fn default() -> Self {
        Self {
            iters: 1000,
            burnin: None,
            thin: 1,
            seed: 1,
            init_clusters: 10,
            log_proposals: false,
            report_every: 1000,
            check_derivatives: false,
            checkpoint_every: 0,
        }
    }
}

impl McmcControl {
    pub fn burnin(&self) -> u64 {
        self.burnin.unwrap_or(self.iters / 5).min(self.iters)
    }

    pub fn retained(&self) -> usize {
        let post = self.iters - self.burnin();
        post.div_ceil(self.thin.max(1)) as usize
    }

    /// Whether the state after 1-based iteration `g` is stored.
    pub fn keeps(&self, g: u64) -> bool {
        let b = self.burnin();
        g > b && (g - b - 1).is_multiple_of(self.thin.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub mcmc: McmcControl,
}

impl FitConfig {
    pub fn new(data: &PanelDataset, variant: Variant) -> Self {
        Self { variant, hyper: Hyperparams::defaults(data.n_alt(), data.d_z()), mcmc: McmcControl::default() }
    }
}

/// Cumulative acceptance counters per block.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub beta: Tally,
    pub delta: Tally,
    pub b: Tally,
    pub cs: CsCounts,
}

impl Counters {
    fn minus(&self, o: &Counters) -> Counters {
        let t = |a: Tally, b: Tally| Tally { accepted: a.accepted - b.accepted, tried: a.tried - b.tried };
        Counters {
            beta: t(self.beta, o.beta),
            delta: t(self.delta, o.delta),
            b: t(self.b, o.b),
            cs: CsCounts {
                add_proposed: self.cs.add_proposed - o.cs.add_proposed,
                add_accepted: self.cs.add_accepted - o.cs.add_accepted,
                remove_proposed: self.cs.remove_proposed - o.cs.remove_proposed,
                remove_accepted: self.cs.remove_accepted - o.cs.remove_accepted,
                proposed: self.cs.proposed - o.cs.proposed,
                accepted: self.cs.accepted - o.cs.accepted,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainState {
    pub params: ResponseParams,
    pub cs: ConsiderationState,
    pub mix: MixtureState,
}

/// One stored posterior draw.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Draw {
    pub iter: u64,
    pub delta: Vec<f64>,
    pub beta: Vec<f64>,
    pub b: Vec<f64>,
    pub d: Vec<f64>,
    pub cs: ConsiderationState,
    pub assign: Vec<usize>,
    pub alpha: f64,
    pub k_star: usize,
    pub weights: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub loglik: f64,
    pub counters: Counters,
}

impl Draw {
    pub fn params(&self) -> ResponseParams {
        ResponseParams {
            delta: self.delta.clone(),
            beta: self.beta.clone(),
            b: self.b.clone(),
            d: self.d.clone(),
            d_z: (self.d.len() as f64).sqrt() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainMeta {
    pub seed: u64,
    pub variant: Variant,
    pub hyper: Hyperparams,
    pub iters: u64,
    pub burnin: u64,
    pub thin: u64,
    pub n: usize,
    pub j: usize,
    pub n_alt: usize,
    pub d_x: usize,
    pub d_z: usize,
    pub outside_option: bool,
    pub subject_ids: Vec<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChainStore {
    pub meta: ChainMeta,
    pub draws: Vec<Draw>,
}

impl ChainStore {
    pub fn len(&self) -> usize {
        self.draws.len()
    }

    pub fn is_empty(&self) -> bool {
        self.draws.is_empty()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LoggedProposal {
    pub iter: u64,
    pub proposal: CsProposal,
}

/// Windowed acceptance rate for one block.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReportRow {
    pub iter: u64,
    pub block: &'static str,
    pub accepted: u64,
    pub proposed: u64,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub iter: u64,
    pub state: ChainState,
    pub counters: Counters,
}

pub struct Sampler<'a> {
    data: &'a PanelDataset,
    cfg: FitConfig,
    state: ChainState,
    iter: u64,
    counters: Counters,
    last_report: Counters,
    forced: Vec<Vec<bool>>,
    util: UtilityTable,
    log_den: Vec<f64>,
    loglik: f64,
    pub proposals: Vec<LoggedProposal>,
    pub report: Vec<ReportRow>,
    /// Worst gradient and Hessian finite-difference errors from start-up.
    pub fd_check: Option<(f64, f64)>,
}

fn initial_state(data: &PanelDataset, cfg: &FitConfig) -> Result<ChainState> {
    let n = data.n();
    let mut rng = stream(cfg.mcmc.seed, 0, B_INIT, 0);
    let params = ResponseParams::for_data(data);
    let cs = if cfg.variant.consideration() {
        ConsiderationState::observed(data)
    } else {
        ConsiderationState::full(n, data.n_alt())
    };
    let k0 = cfg.mcmc.init_clusters.max(1);
    // Equal initial weights; the last stick absorbs the remainder.
    let sticks: Vec<f64> = (0..k0).map(|h| (1.0 / (k0 - h) as f64).min(1.0 - 1e-16)).collect();
    let weights = stick_weights(&sticks);
    let assign: Vec<usize> = (0..n).map(|_| rand::Rng::random_range(&mut rng, 0..k0)).collect();
    let q = (0..k0)
        .map(|_| (0..data.n_alt()).map(|_| beta_draw(1.0, 1.0, &mut rng)).collect::<Result<Vec<_>>>())
        .collect::<Result<Vec<_>>>()?;
    let slice = sample_slices(&assign, &weights, &mut rng);
    let mut mix = MixtureState { sticks, weights, q, assign, slice, alpha: cfg.hyper.a_alpha / cfg.hyper.b_alpha };
    if n > 0 {
        extend_sticks(&mut mix, &cfg.hyper, &mut rng)?;
    }
    Ok(ChainState { params, cs, mix })
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a PanelDataset, cfg: FitConfig) -> Result<Self> {
        let state = initial_state(data, &cfg)?;
        Self::from_parts(data, cfg, state, 0, Counters::default())
    }

    pub fn from_checkpoint(data: &'a PanelDataset, cfg: FitConfig, ck: Checkpoint) -> Result<Self> {
        if ck.state.cs.n() != data.n() || ck.state.params.delta.len() != data.n_alt() {
            return Err(Error::Format("checkpoint does not match dataset".into()));
        }
        Self::from_parts(data, cfg, ck.state, ck.iter, ck.counters)
    }

    fn from_parts(
        data: &'a PanelDataset,
        cfg: FitConfig,
        state: ChainState,
        iter: u64,
        counters: Counters,
    ) -> Result<Self> {
        ensure_valid(data)?;
        cfg.hyper.validate(data.n_alt(), data.d_z())?;
        if cfg.mcmc.thin == 0 {
            return Err(Error::Config("thin must be at least 1".into()));
        }
        let util = UtilityTable::build(&state.params, data);
        let log_den = log_denominators(&util, data, &state.cs);
        let mut s = Self {
            data,
            forced: (0..data.n()).map(|i| data.forced(i)).collect(),
            cfg,
            state,
            iter,
            counters,
            last_report: counters,
            util,
            log_den,
            loglik: 0.0,
            proposals: Vec::new(),
            report: Vec::new(),
            fd_check: None,
        };
        s.loglik = s.cached_loglik();
        if s.cfg.mcmc.check_derivatives && data.d_x() > 0 {
            s.fd_check = Some(s.derivative_check());
        }
        Ok(s)
    }

    fn derivative_check(&self) -> (f64, f64) {
        let mut rng = stream(self.cfg.mcmc.seed, 0, B_FD, 0);
        let target = BetaTarget::new(self.data, &self.state.params, &self.state.cs, self.cfg.hyper.v_beta);
        let mut worst = (0.0f64, 0.0f64);
        for _ in 0..5 {
            let b: Vec<f64> = (0..self.data.d_x()).map(|_| std_normal(&mut rng)).collect();
            let (g, h) = beta_fd_error(&target, &b, 1e-5);
            worst = (worst.0.max(g), worst.1.max(h));
        }
        if worst.0 >= 1e-5 || worst.1 >= 1e-5 {
            warn!("beta derivatives disagree with finite differences: {worst:?}");
        }
        worst
    }

    pub fn iter(&self) -> u64 {
        self.iter
    }

    pub fn state(&self) -> &ChainState {
        &self.state
    }

    pub fn counters(&self) -> &Counters {
        &self.counters
    }

    pub fn config(&self) -> &FitConfig {
        &self.cfg
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint { iter: self.iter, state: self.state.clone(), counters: self.counters }
    }

    fn cached_loglik(&self) -> f64 {
        let na = self.data.n_alt();
        let mut total = 0.0;
        for i in 0..self.data.n() {
            let off = self.data.occ_offset(i);
            for (t, &y) in self.data.responses(i).iter().enumerate() {
                let o = off + t;
                total += self.util.row(o)[y] - self.log_den[o];
            }
        }
        debug_assert_eq!(self.util.row(0).len(), na);
        total
    }

    /// Largest absolute gap between the cached utilities/log-denominators and
    /// a from-scratch rebuild.
    pub fn cache_discrepancy(&self) -> f64 {
        let fresh = UtilityTable::build(&self.state.params, self.data);
        let fresh_den = log_denominators(&fresh, self.data, &self.state.cs);
        let mut worst = 0.0f64;
        for o in 0..self.data.total_occasions() {
            for (a, b) in fresh.row(o).iter().zip(self.util.row(o)) {
                worst = worst.max((a - b).abs());
            }
            let d = fresh_den[o] - self.log_den[o];
            if !(fresh_den[o].is_infinite() && self.log_den[o] == fresh_den[o]) {
                worst = worst.max(d.abs());
            }
        }
        worst
    }

    pub fn loglik(&self) -> f64 {
        self.loglik
    }

    fn numerical(&self, msg: impl Into<String>) -> Error {
        Error::Numerical { iter: self.iter, msg: msg.into() }
    }

    /// Runs one full cycle.
    pub fn step(&mut self) -> Result<()> {
        let g = self.iter + 1;
        let seed = self.cfg.mcmc.seed;
        let data = self.data;
        let hyper = &self.cfg.hyper;
        let n = data.n();
        let st = &mut self.state;

        if data.d_x() > 0 {
            let (out, _) = sample_beta(&mut st.params, &st.cs, data, hyper, &mut stream(seed, g, B_BETA, 0));
            self.counters.beta.add(out.accepted);
        }

        if self.cfg.variant.random_effects() && data.d_z() > 0 {
            let chol = st
                .params
                .d_matrix()
                .cholesky()
                .ok_or_else(|| Error::Numerical { iter: g, msg: "D not positive-definite".into() })?
                .l();
            let params = &st.params;
            let cs = &st.cs;
            let draws: Vec<(Vec<f64>, bool)> = (0..n)
                .into_par_iter()
                .map(|i| sample_b_one(i, params, cs.row(i), data, &chol, &mut stream(seed, g, B_B, i as u64)))
                .collect();
            for (i, (b, acc)) in draws.into_iter().enumerate() {
                st.params.b_i_mut(i).copy_from_slice(&b);
                self.counters.b.add(acc);
            }
            let d = sample_d(&st.params.b, data.d_z(), hyper, &mut stream(seed, g, B_D, 0))
                .map_err(|e| Error::Numerical { iter: g, msg: e.to_string() })?;
            st.params.set_d(&d);
        }

        self.util = UtilityTable::build(&st.params, data);
        self.log_den = log_denominators(&self.util, data, &st.cs);
        if data.n_alt() > 1 {
            sample_delta_cached(
                &mut st.params,
                &st.cs,
                data,
                hyper,
                &mut self.util,
                &mut self.log_den,
                &mut stream(seed, g, B_DELTA, 0),
                &mut self.counters.delta,
            );
        }

        if self.cfg.variant.consideration() && n > 0 {
            let mix = &st.mix;
            let util = &self.util;
            let forced = &self.forced;
            let log = self.cfg.mcmc.log_proposals;
            let na = data.n_alt();
            let rows: Vec<&mut [bool]> = st.cs.rows_mut().collect();
            let results: Vec<(CsCounts, Vec<CsProposal>)> = rows
                .into_par_iter()
                .enumerate()
                .map(|(i, row)| {
                    let mut buf = Vec::new();
                    let mut rng = stream(seed, g, B_CS, i as u64);
                    let q_row = &mix.q[mix.assign[i]];
                    let v = util.subject_rows(data, i);
                    debug_assert_eq!(v.len(), data.t(i) * na);
                    let c = sweep_subject(i, row, &forced[i], v, q_row, &mut rng, log.then_some(&mut buf));
                    (c, buf)
                })
                .collect();
            for (c, buf) in results {
                self.counters.cs.merge(&c);
                self.proposals.extend(buf.into_iter().map(|proposal| LoggedProposal { iter: g, proposal }));
            }
            self.log_den = log_denominators(&self.util, data, &st.cs);
            Self::dp_block(st, hyper, seed, g)?;
        }

        self.iter = g;
        self.loglik = self.cached_loglik();
        let p = &self.state.params;
        if self.loglik.is_nan() || p.beta.iter().chain(&p.delta).any(|v| !v.is_finite()) {
            return Err(Error::Numerical { iter: g, msg: "non-finite log-likelihood or parameter".into() });
        }
        if !self.state.mix.alpha.is_finite() {
            return Err(self.numerical("non-finite concentration parameter"));
        }
        let every = self.cfg.mcmc.report_every;
        if every > 0 && g.is_multiple_of(every) {
            self.push_report(g);
        }
        Ok(())
    }

    fn dp_block(st: &mut ChainState, hyper: &Hyperparams, seed: u64, g: u64) -> Result<()> {
        let n = st.cs.n();
        let mix = &mut st.mix;
        let stats = ClusterStats::compute(&st.cs, &mix.assign, mix.k_star());
        mix.sticks = sample_sticks(&stats, mix.alpha, &mut stream(seed, g, B_STICKS, 0))?;
        mix.refresh_weights();
        mix.q = sample_q(&stats, hyper, &mut stream(seed, g, B_Q, 0))?;
        mix.slice = sample_slices(&mix.assign, &mix.weights, &mut stream(seed, g, B_SLICE, 0));
        extend_sticks(mix, hyper, &mut stream(seed, g, B_EXTEND, 0))?;
        let la = LogAttention::new(&mix.q);
        let cs = &st.cs;
        let (slice, weights) = (&mix.slice, &mix.weights);
        mix.assign = (0..n)
            .into_par_iter()
            .map(|i| {
                sample_assignment_one(i, cs.row(i), slice[i], weights, &la, &mut stream(seed, g, B_ASSIGN, i as u64))
            })
            .collect::<Result<Vec<_>>>()?;
        mix.alpha = sample_alpha(mix.alpha, mix.occupied(), n, hyper, &mut stream(seed, g, B_ALPHA, 0))?;
        Ok(())
    }

    fn push_report(&mut self, g: u64) {
        let w = self.counters.minus(&self.last_report);
        let rows = [
            ("beta", w.beta.accepted, w.beta.tried),
            ("delta", w.delta.accepted, w.delta.tried),
            ("b", w.b.accepted, w.b.tried),
            ("cs", w.cs.accepted, w.cs.proposed),
            ("cs_add", w.cs.add_accepted, w.cs.add_proposed),
            ("cs_remove", w.cs.remove_accepted, w.cs.remove_proposed),
        ];
        for (block, accepted, proposed) in rows {
            if proposed > 0 {
                self.report.push(ReportRow {
                    iter: g,
                    block,
                    accepted,
                    proposed,
                    rate: accepted as f64 / proposed as f64,
                });
            }
        }
        self.last_report = self.counters;
        info!("iteration {g}: beta acceptance {:.3}, loglik {:.3}", w.beta.rate(), self.loglik);
    }

    pub fn draw(&self) -> Draw {
        let st = &self.state;
        Draw {
            iter: self.iter,
            delta: st.params.delta.clone(),
            beta: st.params.beta.clone(),
            b: st.params.b.clone(),
            d: st.params.d.clone(),
            cs: st.cs.clone(),
            assign: st.mix.assign.clone(),
            alpha: st.mix.alpha,
            k_star: st.mix.k_star(),
            weights: st.mix.weights.clone(),
            q: st.mix.q.clone(),
            loglik: self.loglik,
            counters: self.counters,
        }
    }

    pub fn meta(&self) -> ChainMeta {
        let d = self.data;
        ChainMeta {
            seed: self.cfg.mcmc.seed,
            variant: self.cfg.variant,
            hyper: self.cfg.hyper.clone(),
            iters: self.cfg.mcmc.iters,
            burnin: self.cfg.mcmc.burnin(),
            thin: self.cfg.mcmc.thin,
            n: d.n(),
            j: d.j(),
            n_alt: d.n_alt(),
            d_x: d.d_x(),
            d_z: d.d_z(),
            outside_option: d.outside_option(),
            subject_ids: d.subject_ids().to_vec(),
        }
    }

    /// Advances to the configured iteration count, handing every retained
    /// draw to `on_draw` and every checkpoint to `on_checkpoint`.
    pub fn run_with<F, C>(&mut self, mut on_draw: F, mut on_checkpoint: C) -> Result<()>
    where
        F: FnMut(&Draw) -> Result<()>,
        C: FnMut(&Checkpoint) -> Result<()>,
    {
        let total = self.cfg.mcmc.iters;
        let every = self.cfg.mcmc.checkpoint_every;
        while self.iter < total {
            self.step()?;
            if self.cfg.mcmc.keeps(self.iter) {
                on_draw(&self.draw())?;
            }
            if every > 0 && self.iter.is_multiple_of(every) {
                on_checkpoint(&self.checkpoint())?;
            }
        }
        Ok(())
    }

    /// Runs to completion and collects the retained draws.
    pub fn run(&mut self) -> Result<ChainStore> {
        let mut draws = Vec::with_capacity(self.cfg.mcmc.retained());
        self.run_with(
            |d| {
                draws.push(d.clone());
                Ok(())
            },
            |_| Ok(()),
        )?;
        Ok(ChainStore { meta: self.meta(), draws })
    }
}

/// Everything a fit produces besides the draws.
#[derive(Debug, Clone)]
pub struct FitOutput {
    pub chain: ChainStore,
    pub proposals: Vec<LoggedProposal>,
    pub report: Vec<ReportRow>,
    pub fd_check: Option<(f64, f64)>,
    pub counters: Counters,
}

pub fn fit(data: &PanelDataset, cfg: FitConfig) -> Result<FitOutput> {
    let mut s = Sampler::new(data, cfg)?;
    let chain = s.run()?;
    Ok(FitOutput {
        chain,
        proposals: std::mem::take(&mut s.proposals),
        report: std::mem::take(&mut s.report),
        fd_check: s.fd_check,
        counters: s.counters,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::SubjectRecord;
    use crate::random::seeded;

    fn toy(n: usize, t: usize, j: usize, d_z: usize, seed: u64) -> PanelDataset {
        let mut rng = seeded(seed);
        let subjects = (0..n)
            .map(|i| {
                let x: Vec<f64> = (0..t * j).map(|_| std_normal(&mut rng) * 1.4).collect();
                let z: Vec<f64> = (0..t * j * d_z).map(|_| std_normal(&mut rng)).collect();
                let responses = (0..t).map(|s| (i + s) % 2 * (j - 1).min(1 + i % (j - 1))).collect();
                SubjectRecord { id: i as u64 + 1, responses, x, z }
            })
            .collect();
        PanelDataset::from_subjects(j, 1, d_z, false, subjects).unwrap()
    }

    fn cfg(data: &PanelDataset, v: Variant, iters: u64) -> FitConfig {
        let mut c = FitConfig::new(data, v);
        c.mcmc.iters = iters;
        c.mcmc.seed = 42;
        c
    }

    #[test]
    fn variant_roundtrip() {
        for v in Variant::ALL {
            assert_eq!(v.to_string().parse::<Variant>().unwrap(), v);
        }
        assert!("logit".parse::<Variant>().is_err());
    }

    #[test]
    fn retained_count_matches_burnin_and_thin() {
        let c = McmcControl { iters: 103, burnin: Some(10), thin: 4, ..Default::default() };
        let kept = (1..=103).filter(|&g| c.keeps(g)).count();
        assert_eq!(kept, c.retained());
        assert_eq!(kept, 24);
        let d = McmcControl { iters: 50, ..Default::default() };
        assert_eq!(d.burnin(), 10);
        assert_eq!(d.retained(), 40);
    }

    #[test]
    fn caches_stay_coherent_through_the_cycle() {
        let data = toy(15, 4, 4, 1, 1);
        let mut s = Sampler::new(&data, cfg(&data, Variant::MnlRc, 30)).unwrap();
        for _ in 0..30 {
            s.step().unwrap();
            assert!(s.cache_discrepancy() < 1e-8);
            let fresh = crate::likelihood::panel_loglik(&s.state().params, &data, &s.state().cs).unwrap();
            assert!((fresh - s.loglik()).abs() < 1e-8);
        }
    }

    #[test]
    fn stored_states_satisfy_invariants() {
        let data = toy(20, 3, 5, 2, 2);
        let out = fit(&data, cfg(&data, Variant::MnlRc, 60)).unwrap();
        assert_eq!(out.chain.len(), 48);
        for d in &out.chain.draws {
            assert!(d.cs.forced_inclusion_violations(&data).is_empty());
            assert_eq!(*d.delta.last().unwrap(), 0.0);
            let dm = d.params().d_matrix();
            assert!(dm.symmetric_eigenvalues().min() > 0.0);
            let w: f64 = d.weights.iter().sum();
            assert!(w <= 1.0 + 1e-12);
            assert_eq!(d.weights.len(), d.k_star);
        }
    }

    #[test]
    fn chains_are_reproducible_across_thread_counts() {
        let data = toy(12, 3, 4, 1, 3);
        let a = fit(&data, cfg(&data, Variant::MnlRc, 20)).unwrap().chain;
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool.install(|| fit(&data, cfg(&data, Variant::MnlRc, 20)).unwrap().chain);
        assert_eq!(a, b);
    }

    #[test]
    fn resume_reproduces_uninterrupted_chain() {
        let data = toy(10, 3, 4, 1, 4);
        let full = fit(&data, cfg(&data, Variant::MnlRc, 40)).unwrap().chain;
        let mut c = cfg(&data, Variant::MnlRc, 40);
        c.mcmc.iters = 40;
        let mut first = Sampler::new(&data, c.clone()).unwrap();
        let mut draws = Vec::new();
        for _ in 0..17 {
            first.step().unwrap();
            if c.mcmc.keeps(first.iter()) {
                draws.push(first.draw());
            }
        }
        let ck: Checkpoint = serde_json::from_str(&serde_json::to_string(&first.checkpoint()).unwrap()).unwrap();
        let mut second = Sampler::from_checkpoint(&data, c, ck).unwrap();
        let rest = second.run().unwrap();
        draws.extend(rest.draws);
        assert_eq!(draws.len(), full.draws.len());
        for (a, b) in draws.iter().zip(&full.draws) {
            assert_eq!(a.iter, b.iter);
            assert_eq!(a.beta, b.beta);
            assert_eq!(a.cs, b.cs);
            assert_eq!(a.assign, b.assign);
        }
    }

    #[test]
    fn plain_logit_keeps_full_sets_and_zero_effects() {
        let data = toy(10, 3, 3, 1, 5);
        let out = fit(&data, cfg(&data, Variant::Mnl, 20)).unwrap();
        for d in &out.chain.draws {
            assert!(d.cs.to_strings().iter().all(|s| s == "111"));
            assert!(d.b.iter().all(|&v| v == 0.0));
        }
        assert_eq!(out.counters.cs.proposed, 0);
    }

    #[test]
    fn proposal_log_and_report() {
        let data = toy(8, 3, 4, 0, 6);
        let mut c = cfg(&data, Variant::MnlC, 20);
        c.mcmc.log_proposals = true;
        c.mcmc.report_every = 10;
        c.mcmc.check_derivatives = true;
        let out = fit(&data, c).unwrap();
        assert!(!out.proposals.is_empty());
        assert!(out.proposals.iter().all(|p| !(p.proposal.from && !p.proposal.to) || p.proposal.accept_prob == 1.0));
        assert_eq!(out.report.iter().filter(|r| r.block == "beta").count(), 2);
        let (ge, he) = out.fd_check.unwrap();
        assert!(ge < 1e-5 && he < 1e-5);
    }
}
