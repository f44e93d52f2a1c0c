//! Flat `key = value` configuration files with `[section]` headers.
//!
//! ```text
//! [mcmc]
//! iters = 2000
//! seed = 7
//! ```
//!
//! Blank lines and lines starting with `#` or `;` are ignored. Unknown
//! sections and keys are rejected.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Hyperparams, PanelDataset};
use crate::sampler::{FitConfig, McmcControl, Variant};
use crate::simulate::{default_small_pmf, ResponseDesign, SubsetDist, TwoPopDesign};

const KNOWN: &[(&str, &[&str])] = &[
    ("model", &["variant"]),
    (
        "prior",
        &[
            "profile",
            "a_alpha",
            "b_alpha",
            "v_beta",
            "v_delta",
            "sparsity_s",
            "sparsity_r0",
            "q_uniform",
            "wishart_df",
            "wishart_scale",
        ],
    ),
    (
        "mcmc",
        &[
            "iters",
            "burnin",
            "thin",
            "seed",
            "init_clusters",
            "proposal_scale",
            "log_proposals",
            "report_every",
            "check_derivatives",
            "checkpoint_every",
        ],
    ),
    (
        "simulate",
        &[
            "design",
            "seed",
            "n",
            "t",
            "j",
            "beta",
            "x_var",
            "re_sd",
            "pmf",
            "high",
            "low",
            "hot1",
            "hot2",
            "prior_k",
            "prior_draws",
        ],
    ),
];

const PRESETS: &[(&str, &str)] = &[
    ("sim_small", include_str!("../presets/sim_small.cfg")),
    ("sim_large", include_str!("../presets/sim_large.cfg")),
    ("fit_default", include_str!("../presets/fit_default.cfg")),
    ("fit_application", include_str!("../presets/fit_application.cfg")),
];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Config {
    sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl Config {
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Config::default();
        let mut section: Option<String> = None;
        for (ln, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') || line.starts_with(';') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim().to_string();
                if !KNOWN.iter().any(|(s, _)| *s == name) {
                    return Err(Error::Config(format!("line {}: unknown section [{name}]", ln + 1)));
                }
                section = Some(name);
                continue;
            }
            let (k, v) =
                line.split_once('=').ok_or_else(|| Error::Config(format!("line {}: expected key = value", ln + 1)))?;
            let sec =
                section.clone().ok_or_else(|| Error::Config(format!("line {}: key outside a section", ln + 1)))?;
            cfg.set(&sec, k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::parse(&std::fs::read_to_string(path)?)
    }

    /// A built-in preset by name, or a file path.
    pub fn load_or_preset(spec: &str) -> Result<Self> {
        match PRESETS.iter().find(|(n, _)| *n == spec) {
            Some((_, text)) => Self::parse(text),
            None => Self::load(Path::new(spec)),
        }
    }

    pub fn preset_names() -> impl Iterator<Item = &'static str> {
        PRESETS.iter().map(|(n, _)| *n)
    }

    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        let keys = KNOWN
            .iter()
            .find(|(s, _)| *s == section)
            .ok_or_else(|| Error::Config(format!("unknown section [{section}]")))?
            .1;
        if !keys.contains(&key) {
            return Err(Error::Config(format!("unknown key {key:?} in [{section}]")));
        }
        self.sections.entry(section.into()).or_default().insert(key.into(), value.into());
        Ok(())
    }

    pub fn raw(&self, section: &str, key: &str) -> Option<&str> {
        self.sections.get(section)?.get(key).map(String::as_str)
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<Option<T>> {
        self.raw(section, key)
            .map(|v| v.parse::<T>().map_err(|_| Error::Config(format!("[{section}] {key} = {v:?} is not valid"))))
            .transpose()
    }

    fn or<T: FromStr>(&self, section: &str, key: &str, default: T) -> Result<T> {
        Ok(self.get(section, key)?.unwrap_or(default))
    }

    /// Prior settings for `n_alt` categories and `d_z` random effects,
    /// starting from the selected profile.
    pub fn hyperparams(&self, na: usize, dz: usize) -> Result<Hyperparams> {
        let mut hyper = match self.raw("prior", "profile").unwrap_or("default") {
            "default" => Hyperparams::defaults(na, dz),
            "application" => Hyperparams::application(na, dz),
            p => return Err(Error::Config(format!("unknown prior profile {p:?}"))),
        };
        hyper.a_alpha = self.or("prior", "a_alpha", hyper.a_alpha)?;
        hyper.b_alpha = self.or("prior", "b_alpha", hyper.b_alpha)?;
        hyper.v_beta = self.or("prior", "v_beta", hyper.v_beta)?;
        hyper.v_delta = self.or("prior", "v_delta", hyper.v_delta)?;
        if self.or("prior", "q_uniform", false)? {
            hyper.set_uniform_q(na);
        } else if self.raw("prior", "sparsity_s").is_some() || self.raw("prior", "sparsity_r0").is_some() {
            let s = self.or("prior", "sparsity_s", 1.0)?;
            let r0 = self.or("prior", "sparsity_r0", 1.0)?;
            if !(r0 > 0.0 && r0 < na as f64) {
                return Err(Error::Config(format!("sparsity_r0 must lie in (0, {na})")));
            }
            hyper.set_sparsity(na, s, r0);
        }
        if let Some(df) = self.get::<f64>("prior", "wishart_df")? {
            hyper.wishart_df = df;
        }
        if let Some(v) = self.get::<f64>("prior", "wishart_scale")? {
            hyper.wishart_scale = vec![0.0; dz * dz];
            for k in 0..dz {
                hyper.wishart_scale[k * dz + k] = v;
            }
        }
        hyper.proposal_scale = self.or("mcmc", "proposal_scale", hyper.proposal_scale)?;
        hyper.validate(na, dz)?;
        Ok(hyper)
    }

    /// Fit settings for `data`.
    pub fn fit_config(&self, data: &PanelDataset) -> Result<FitConfig> {
        let hyper = self.hyperparams(data.n_alt(), data.d_z())?;
        let d = McmcControl::default();
        let mcmc = McmcControl {
            iters: self.or("mcmc", "iters", d.iters)?,
            burnin: self.get("mcmc", "burnin")?,
            thin: self.or("mcmc", "thin", d.thin)?,
            seed: self.or("mcmc", "seed", d.seed)?,
            init_clusters: self.or("mcmc", "init_clusters", d.init_clusters)?,
            log_proposals: self.or("mcmc", "log_proposals", d.log_proposals)?,
            report_every: self.or("mcmc", "report_every", d.report_every)?,
            check_derivatives: self.or("mcmc", "check_derivatives", d.check_derivatives)?,
            checkpoint_every: self.or("mcmc", "checkpoint_every", d.checkpoint_every)?,
        };
        let variant: Variant = self.or("model", "variant", Variant::MnlRc)?;
        Ok(FitConfig { variant, hyper, mcmc })
    }

    pub fn simulation(&self) -> Result<SimSpec> {
        let seed = self.or("simulate", "seed", 1u64)?;
        let response = ResponseDesign {
            beta: self.or("simulate", "beta", 1.0)?,
            x_var: self.or("simulate", "x_var", 2.0)?,
            re_sd: self.get("simulate", "re_sd")?,
        };
        match self.raw("simulate", "design").unwrap_or("small") {
            "small" => {
                let pmf = match self.raw("simulate", "pmf") {
                    Some(s) => parse_pmf(self.or("simulate", "j", 4)?, s)?,
                    None => default_small_pmf(),
                };
                Ok(SimSpec::Small {
                    n: self.or("simulate", "n", 100)?,
                    t: self.or("simulate", "t", 10)?,
                    pmf,
                    response,
                    seed,
                })
            }
            "two_pop" => {
                let base = TwoPopDesign::large(self.or("simulate", "t", 20)?);
                let hot = |key: &str, d: &[usize]| -> Result<Vec<usize>> {
                    match self.raw("simulate", key) {
                        Some(s) => parse_list(s),
                        None => Ok(d.to_vec()),
                    }
                };
                let design = TwoPopDesign {
                    n: self.or("simulate", "n", base.n)?,
                    j: self.or("simulate", "j", base.j)?,
                    t: base.t,
                    high: self.or("simulate", "high", base.high)?,
                    low: self.or("simulate", "low", base.low)?,
                    hot: [hot("hot1", &base.hot[0])?, hot("hot2", &base.hot[1])?],
                    response,
                };
                Ok(SimSpec::TwoPop { design, seed })
            }
            "prior" => Ok(SimSpec::Prior {
                j: self.or("simulate", "j", 4)?,
                k: self.or("simulate", "prior_k", 20)?,
                draws: self.or("simulate", "prior_draws", 1000)?,
                seed,
            }),
            d => Err(Error::Config(format!("unknown simulation design {d:?}"))),
        }
    }
}

impl fmt::Display for Config {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut out = String::new();
        for (s, kv) in &self.sections {
            let _ = writeln!(out, "[{s}]");
            for (k, v) in kv {
                let _ = writeln!(out, "{k} = {v}");
            }
            out.push('\n');
        }
        f.write_str(out.trim_end())?;
        f.write_str("\n")
    }
}

/// What `simulate` should produce.
#[derive(Debug, Clone, PartialEq)]
pub enum SimSpec {
    Small { n: usize, t: usize, pmf: SubsetDist, response: ResponseDesign, seed: u64 },
    TwoPop { design: TwoPopDesign, seed: u64 },
    Prior { j: usize, k: usize, draws: usize, seed: u64 },
}

fn parse_list(s: &str) -> Result<Vec<usize>> {
    s.split(',').map(|t| t.trim().parse::<usize>().map_err(|_| Error::Config(format!("bad category {t:?}")))).collect()
}

/// `"1,2,3:0.35; 1,2:0.2"` with 1-based categories.
pub fn parse_pmf(j: usize, s: &str) -> Result<SubsetDist> {
    let mut entries = Vec::new();
    for part in s.split(';').map(str::trim).filter(|p| !p.is_empty()) {
        let (set, p) = part.split_once(':').ok_or_else(|| Error::Config(format!("bad pmf entry {part:?}")))?;
        let p: f64 = p.trim().parse().map_err(|_| Error::Config(format!("bad probability in {part:?}")))?;
        entries.push((parse_list(set)?, p));
    }
    let refs: Vec<(&[usize], f64)> = entries.iter().map(|(s, p)| (s.as_slice(), *p)).collect();
    SubsetDist::from_sets(j, &refs)
}
