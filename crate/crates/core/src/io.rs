//! On-disk formats. Categories and occasions are 1-based in every file.

use std::collections::HashMap;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{mask_row, set_of, ConsiderationState, PanelDataset, SubjectRecord};
use crate::sampler::{ChainMeta, ChainStore, Checkpoint, Draw, LoggedProposal, ReportRow};
use crate::summaries::{CsDistribution, PredictiveRow};

pub const META_FILE: &str = "meta.json";
pub const DRAWS_FILE: &str = "draws.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.json";

/// JSON sidecar describing a dataset CSV.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub n: usize,
    #[serde(rename = "J")]
    pub j: usize,
    pub d_x: usize,
    pub d_z: usize,
    pub outside_option: bool,
}

impl DatasetMeta {
    pub fn of(data: &PanelDataset) -> Self {
        Self { n: data.n(), j: data.j(), d_x: data.d_x(), d_z: data.d_z(), outside_option: data.outside_option() }
    }
}

pub fn sidecar_path(csv: &Path) -> PathBuf {
    csv.with_extension("json")
}

fn fmt_f(v: f64) -> String {
    if v.is_finite() {
        v.to_string()
    } else {
        String::new()
    }
}

fn parse_f(s: &str) -> Result<f64> {
    let s = s.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Ok(f64::NAN);
    }
    s.parse().map_err(|_| Error::Format(format!("not a number: {s:?}")))
}

fn parse_u(s: &str, what: &str) -> Result<u64> {
    s.trim().parse().map_err(|_| Error::Format(format!("bad {what}: {s:?}")))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn csv_writer(path: &Path) -> Result<csv::Writer<BufWriter<File>>> {
    Ok(csv::Writer::from_writer(create(path)?))
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n")?;
    w.flush()?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    Ok(serde_json::from_reader(BufReader::new(File::open(path)?))?)
}

/// Long-format dataset CSV plus its JSON sidecar.
pub fn write_dataset(path: &Path, data: &PanelDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["subject".to_string(), "occasion".into(), "choice".into()];
    header.extend((1..=data.d_x()).map(|k| format!("x{k}")));
    header.extend((1..=data.d_z()).map(|k| format!("z{k}")));
    header.push("alternative".into());
    w.write_record(&header)?;
    for i in 0..data.n() {
        let id = data.subject_ids()[i].to_string();
        for t in 0..data.t(i) {
            let occ = (t + 1).to_string();
            let choice = (data.response(i, t) + 1).to_string();
            for j in 0..data.n_alt() {
                let mut rec = vec![id.clone(), occ.clone(), choice.clone()];
                rec.extend(data.x(i, t, j).iter().map(|&v| fmt_f(v)));
                rec.extend(data.z(i, t, j).iter().map(|&v| fmt_f(v)));
                rec.push((j + 1).to_string());
                w.write_record(&rec)?;
            }
        }
    }
    w.flush()?;
    write_json(&sidecar_path(path), &DatasetMeta::of(data))
}

/// Reads a dataset written by [`write_dataset`]. Rows of one subject must be
/// contiguous and ordered by occasion then alternative.
pub fn read_dataset(path: &Path) -> Result<PanelDataset> {
    let meta: DatasetMeta = read_json(&sidecar_path(path))?;
    let na = meta.j + usize::from(meta.outside_option);
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let mut expected = vec!["subject".to_string(), "occasion".into(), "choice".into()];
    expected.extend((1..=meta.d_x).map(|k| format!("x{k}")));
    expected.extend((1..=meta.d_z).map(|k| format!("z{k}")));
    expected.push("alternative".into());
    if header.iter().map(str::trim).ne(expected.iter().map(String::as_str)) {
        return Err(Error::Format(format!("header {:?} does not match sidecar, expected {expected:?}", header)));
    }
    let mut subjects: Vec<SubjectRecord> = Vec::new();
    let mut seen: HashMap<u64, usize> = HashMap::new();
    let mut rows: Vec<usize> = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let at = |msg: String| Error::Format(format!("row {}: {msg}", line + 2));
        let id = parse_u(&rec[0], "subject")?;
        let occ = parse_u(&rec[1], "occasion")? as usize;
        let choice = parse_u(&rec[2], "choice")? as usize;
        let alt = parse_u(&rec[3 + meta.d_x + meta.d_z], "alternative")? as usize;
        if subjects.last().is_none_or(|s| s.id != id) {
            if seen.insert(id, subjects.len()).is_some() {
                return Err(at(format!("rows of subject {id} are not contiguous")));
            }
            subjects.push(SubjectRecord { id, responses: vec![], x: vec![], z: vec![] });
            rows.push(0);
        }
        let s = subjects.last_mut().expect("pushed above");
        let done = rows.last().copied().unwrap_or(0);
        let (t_now, j_now) = (done / na + 1, done % na + 1);
        if occ != t_now || alt != j_now {
            return Err(at(format!("expected occasion {t_now} alternative {j_now}, found {occ}, {alt}")));
        }
        *rows.last_mut().expect("pushed above") += 1;
        if choice == 0 {
            return Err(at("choice is 1-based".into()));
        }
        if alt == 1 {
            s.responses.push(choice - 1);
        } else if s.responses[occ - 1] != choice - 1 {
            return Err(at(format!("choice changes within occasion {occ}")));
        }
        for k in 0..meta.d_x {
            s.x.push(parse_f(&rec[3 + k])?);
        }
        for k in 0..meta.d_z {
            s.z.push(parse_f(&rec[3 + meta.d_x + k])?);
        }
    }
    if subjects.len() != meta.n {
        return Err(Error::Format(format!("sidecar says n = {}, file has {}", meta.n, subjects.len())));
    }
    for (s, &r) in subjects.iter().zip(&rows) {
        if r % na != 0 {
            return Err(Error::Format(format!("subject {} has an incomplete final occasion", s.id)));
        }
    }
    PanelDataset::from_subjects(meta.j, meta.d_x, meta.d_z, meta.outside_option, subjects)
}

/// `subject,category,included`.
pub fn write_truth_cs(path: &Path, data: &PanelDataset, cs: &ConsiderationState) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "category", "included"])?;
    for i in 0..cs.n() {
        for (j, &b) in cs.row(i).iter().enumerate() {
            w.write_record([data.subject_ids()[i].to_string(), (j + 1).to_string(), u8::from(b).to_string()])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn read_truth_cs(path: &Path, data: &PanelDataset) -> Result<ConsiderationState> {
    let mut rows = vec![vec![false; data.n_alt()]; data.n()];
    let mut r = csv::Reader::from_path(path)?;
    for rec in r.records() {
        let rec = rec?;
        let id = parse_u(&rec[0], "subject")?;
        let i = data.subject_index(id).ok_or(Error::UnknownSubject(id))?;
        let j = parse_u(&rec[1], "category")? as usize;
        if j == 0 || j > data.n_alt() {
            return Err(Error::Format(format!("category {j} out of range")));
        }
        rows[i][j - 1] = parse_u(&rec[2], "included")? == 1;
    }
    ConsiderationState::from_rows(rows)
}

fn set_label(mask: u64, n_alt: usize) -> String {
    set_of(&mask_row(mask, n_alt)).iter().map(|j| (j + 1).to_string()).collect::<Vec<_>>().join(" ")
}

/// `mask,set,q05,q50,q95`; bit `j - 1` of `mask` is category `j`.
pub fn write_prior_quantiles(path: &Path, j: usize, rows: &[(u64, f64, f64, f64)]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mask", "set", "q05", "q50", "q95"])?;
    for &(m, a, b, c) in rows {
        w.write_record([m.to_string(), set_label(m, j), fmt_f(a), fmt_f(b), fmt_f(c)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_proposals(path: &Path, log: &[LoggedProposal], data: &PanelDataset) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["iter", "subject", "coord", "from", "to", "accept_prob", "accepted"])?;
    for p in log {
        let q = &p.proposal;
        w.write_record([
            p.iter.to_string(),
            data.subject_ids()[q.subject].to_string(),
            (q.coord + 1).to_string(),
            u8::from(q.from).to_string(),
            u8::from(q.to).to_string(),
            fmt_f(q.accept_prob),
            u8::from(q.accepted).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_report(path: &Path, rows: &[ReportRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    if rows.is_empty() {
        w.write_record(["iter", "block", "accepted", "proposed", "rate"])?;
    }
    w.flush()?;
    Ok(())
}

/// `subject,category,inclusion`.
pub fn write_inclusion(path: &Path, ids: &[u64], incl: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "category", "inclusion"])?;
    for (id, row) in ids.iter().zip(incl) {
        for (j, &p) in row.iter().enumerate() {
            w.write_record([id.to_string(), (j + 1).to_string(), fmt_f(p)])?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Square matrix with subject ids along both margins.
pub fn write_similarity(path: &Path, ids: &[u64], sim: &[Vec<f64>]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let mut header = vec!["subject".to_string()];
    header.extend(ids.iter().map(u64::to_string));
    w.write_record(&header)?;
    for (id, row) in ids.iter().zip(sim) {
        let mut rec = vec![id.to_string()];
        rec.extend(row.iter().map(|&v| fmt_f(v)));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

/// `mask,set,mean,lower,upper,nonempty_mean`, empty set first.
pub fn write_cs_pmf(path: &Path, dist: &CsDistribution) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["mask", "set", "mean", "lower", "upper", "nonempty_mean"])?;
    for m in 0..dist.mean.len() {
        w.write_record([
            m.to_string(),
            set_label(m as u64, dist.n_alt),
            fmt_f(dist.mean[m]),
            fmt_f(dist.lower[m]),
            fmt_f(dist.upper[m]),
            fmt_f(dist.nonempty_mean[m]),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `subject,h,logpred`.
pub fn write_pred_loglik(path: &Path, rows: &[PredictiveRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["subject", "h", "logpred"])?;
    for r in rows {
        w.write_record([r.subject.to_string(), r.h.to_string(), fmt_f(r.logpred)])?;
    }
    w.flush()?;
    Ok(())
}

/// Replaces `old` with its rows whose leading `iter` field is at most
/// `upto`, followed by the rows of `new`. `new` is removed afterwards.
pub fn splice_csv(old: &Path, new: &Path, upto: u64) -> Result<()> {
    let fresh = fs::read_to_string(new)?;
    let mut lines = fresh.lines();
    let header = lines.next().unwrap_or_default();
    let mut out = format!("{header}\n");
    if let Ok(prev) = fs::read_to_string(old) {
        for l in prev.lines().skip(1) {
            let iter = l.split(',').next().and_then(|f| f.parse::<u64>().ok());
            if iter.is_some_and(|i| i <= upto) {
                out.push_str(l);
                out.push('\n');
            }
        }
    }
    for l in lines {
        out.push_str(l);
        out.push('\n');
    }
    fs::write(old, out)?;
    fs::remove_file(new)?;
    Ok(())
}

/// Streams retained draws into a chain directory.
pub struct ChainWriter {
    dir: PathBuf,
    draws: BufWriter<File>,
}

impl ChainWriter {
    pub fn create(dir: &Path, meta: &ChainMeta) -> Result<Self> {
        fs::create_dir_all(dir)?;
        write_json(&dir.join(META_FILE), meta)?;
        let draws = BufWriter::new(File::create(dir.join(DRAWS_FILE))?);
        Ok(Self { dir: dir.to_path_buf(), draws })
    }

    /// Reopens a chain for resumption, dropping draws past the checkpoint.
    pub fn resume(dir: &Path, meta: &ChainMeta, ck: &Checkpoint) -> Result<Self> {
        let kept: Vec<Draw> = read_draws(dir)?.into_iter().filter(|d| d.iter <= ck.iter).collect();
        let mut w = Self::create(dir, meta)?;
        for d in &kept {
            w.push(d)?;
        }
        Ok(w)
    }

    pub fn push(&mut self, d: &Draw) -> Result<()> {
        serde_json::to_writer(&mut self.draws, d)?;
        self.draws.write_all(b"\n")?;
        Ok(())
    }

    /// Flushes pending draws before writing the checkpoint so the pair on
    /// disk is always consistent.
    pub fn checkpoint(&mut self, ck: &Checkpoint) -> Result<()> {
        self.draws.flush()?;
        let tmp = self.dir.join("checkpoint.json.tmp");
        write_json(&tmp, ck)?;
        fs::rename(tmp, self.dir.join(CHECKPOINT_FILE))?;
        Ok(())
    }

    pub fn finish(mut self) -> Result<()> {
        self.draws.flush()?;
        Ok(())
    }
}

fn read_draws(dir: &Path) -> Result<Vec<Draw>> {
    let f = File::open(dir.join(DRAWS_FILE))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

pub fn write_chain(dir: &Path, chain: &ChainStore) -> Result<()> {
    let mut w = ChainWriter::create(dir, &chain.meta)?;
    for d in &chain.draws {
        w.push(d)?;
    }
    w.finish()
}

pub fn read_chain(dir: &Path) -> Result<ChainStore> {
    let meta_path = dir.join(META_FILE);
    if !meta_path.exists() {
        return Err(Error::Io(std::io::Error::new(
            std::io::ErrorKind::NotFound,
            format!("no chain at {}", dir.display()),
        )));
    }
    Ok(ChainStore { meta: read_json(&meta_path)?, draws: read_draws(dir)? })
}

pub fn read_checkpoint(dir: &Path) -> Result<Checkpoint> {
    read_json(&dir.join(CHECKPOINT_FILE))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sampler::{fit, FitConfig, Variant};
    use crate::simulate::{default_small_pmf, simulate_small};

    #[test]
    fn dataset_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let sim = simulate_small(7, 3, &default_small_pmf(), 1.0, 3).unwrap();
        let p = dir.path().join("data.csv");
        write_dataset(&p, &sim.data).unwrap();
        let back = read_dataset(&p).unwrap();
        assert_eq!(back.subject_ids(), sim.data.subject_ids());
        for i in 0..back.n() {
            assert_eq!(back.responses(i), sim.data.responses(i));
            for t in 0..back.t(i) {
                for j in 0..back.n_alt() {
                    assert_eq!(back.x(i, t, j), sim.data.x(i, t, j));
                    assert_eq!(back.z(i, t, j), sim.data.z(i, t, j));
                }
            }
        }
        let text = fs::read_to_string(&p).unwrap();
        let z = if sim.data.d_z() == 1 { "z1," } else { "" };
        assert!(text.starts_with(&format!("subject,occasion,choice,x1,{z}alternative\n")));
        let truth = dir.path().join("truth.csv");
        write_truth_cs(&truth, &sim.data, &sim.truth).unwrap();
        assert_eq!(read_truth_cs(&truth, &sim.data).unwrap(), sim.truth);
    }

    #[test]
    fn missing_values_and_bad_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("d.csv");
        fs::write(sidecar_path(&p), r#"{"n":1,"J":2,"d_x":1,"d_z":0,"outside_option":false}"#).unwrap();
        fs::write(&p, "subject,occasion,choice,x1,alternative\n5,1,2,,1\n5,1,2,0.5,2\n").unwrap();
        let d = read_dataset(&p).unwrap();
        assert!(d.x(0, 0, 0)[0].is_nan());
        assert_eq!(d.response(0, 0), 1);
        fs::write(&p, "subject,occasion,choice,x1,alternative\n5,1,2,1,1\n5,1,1,0.5,2\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
        fs::write(&p, "subject,occasion,choice,x1,alternative\n5,1,2,1,1\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
        fs::write(&p, "subject,occasion,choice,x2,alternative\n").unwrap();
        assert!(matches!(read_dataset(&p), Err(Error::Format(_))));
    }

    #[test]
    fn chain_roundtrip_and_resume_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let sim = simulate_small(5, 2, &default_small_pmf(), 1.0, 1).unwrap();
        let mut cfg = FitConfig::new(&sim.data, Variant::MnlRc);
        cfg.mcmc.iters = 20;
        cfg.mcmc.burnin = Some(0);
        let out = fit(&sim.data, cfg).unwrap();
        write_chain(dir.path(), &out.chain).unwrap();
        assert_eq!(read_chain(dir.path()).unwrap(), out.chain);

        let ck = Checkpoint {
            iter: 8,
            state: crate::sampler::ChainState {
                params: out.chain.draws[7].params(),
                cs: out.chain.draws[7].cs.clone(),
                mix: crate::model::MixtureState {
                    sticks: vec![],
                    weights: vec![],
                    q: vec![],
                    assign: vec![],
                    slice: vec![],
                    alpha: 1.0,
                },
            },
            counters: Default::default(),
        };
        let mut w = ChainWriter::resume(dir.path(), &out.chain.meta, &ck).unwrap();
        w.checkpoint(&ck).unwrap();
        w.finish().unwrap();
        assert_eq!(read_chain(dir.path()).unwrap().draws, out.chain.draws[..8].to_vec());
        assert_eq!(read_checkpoint(dir.path()).unwrap(), ck);
        assert!(read_chain(&dir.path().join("nope")).is_err());
    }

    #[test]
    fn set_labels_are_one_based() {
        assert_eq!(set_label(0b1011, 4), "1 2 4");
        assert_eq!(set_label(0, 4), "");
    }
}
