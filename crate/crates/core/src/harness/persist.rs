//! Result files: `results.csv` (one row per evaluation cell), `episodes.csv`
//! (the per-episode data behind each row), `manifest.txt` (resolved config
//! and fingerprint), learning curves and ablation tables.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::env::TaskKind;
use crate::error::{Error, Result};
use crate::metrics::{EpisodeRecord, EvalSummary};

pub const SCHEMA_VERSION: u32 = 1;

pub const RESULTS_FILE: &str = "results.csv";
pub const EPISODES_FILE: &str = "episodes.csv";
pub const MANIFEST_FILE: &str = "manifest.txt";

pub const RESULTS_HEADER: [&str; 15] = [
    "task",
    "agent",
    "seed",
    "site",
    "kind",
    "train_level",
    "test_level",
    "param_overrides",
    "n_episodes",
    "mean_return",
    "std_return",
    "mean_rmse",
    "std_rmse",
    "mean_len",
    "status",
];

pub const EPISODES_HEADER: [&str; 5] = ["row", "episode", "return", "length", "rmse"];
pub const CURVE_HEADER: [&str; 4] = ["step", "mean_metric", "std_metric", "n_seeds"];
pub const ABLATION_HEADER: [&str; 9] = [
    "condition",
    "variant",
    "n_seeds",
    "n_failed",
    "n_episodes",
    "mean_rmse",
    "std_rmse",
    "mean_return",
    "std_return",
];

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Status {
    Ok,
    /// Training diverged; the cell has no episodes.
    Failed,
}

impl Status {
    pub fn name(self) -> &'static str {
        match self {
            Status::Ok => "ok",
            Status::Failed => "failed",
        }
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Status {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ok" => Ok(Status::Ok),
            "failed" => Ok(Status::Failed),
            _ => Err(Error::Schema(format!("unknown status '{s}'"))),
        }
    }
}

/// One evaluation cell: a trained agent, a seed, and a test condition.
///
/// `site`, `kind` and `test_level` are text because ablation conditions can
/// combine sites (`obs+act`); single-site cells hold plain names and numbers.
#[derive(Clone, Debug, PartialEq)]
pub struct EvalRecord {
    pub task: TaskKind,
    pub agent: String,
    pub seed: u64,
    pub site: String,
    pub kind: String,
    pub train_level: f64,
    pub test_level: String,
    pub param_overrides: String,
    pub episodes: Vec<EpisodeRecord>,
    pub status: Status,
}

impl EvalRecord {
    pub fn summary(&self) -> Option<EvalSummary> {
        EvalSummary::new(self.episodes.clone()).ok()
    }

    fn stat(&self, f: impl Fn(&EvalSummary) -> f64) -> f64 {
        self.summary().map_or(f64::NAN, |s| f(&s))
    }

    pub fn mean_return(&self) -> f64 {
        self.stat(EvalSummary::mean_return)
    }

    pub fn std_return(&self) -> f64 {
        self.stat(EvalSummary::std_return)
    }

    pub fn mean_rmse(&self) -> f64 {
        self.stat(EvalSummary::mean_rmse)
    }

    pub fn std_rmse(&self) -> f64 {
        self.stat(EvalSummary::std_rmse)
    }

    pub fn mean_len(&self) -> f64 {
        self.stat(EvalSummary::mean_len)
    }

    /// Numeric test level, when the cell has a single one.
    pub fn test_level_value(&self) -> Option<f64> {
        self.test_level.parse().ok()
    }

    /// Same cell and identical numbers, bit for bit.
    pub fn bit_eq(&self, other: &EvalRecord) -> bool {
        let bits = |e: &EpisodeRecord| (e.ret.to_bits(), e.len, e.rmse.to_bits());
        self.task == other.task
            && self.agent == other.agent
            && self.seed == other.seed
            && self.site == other.site
            && self.kind == other.kind
            && self.train_level.to_bits() == other.train_level.to_bits()
            && self.test_level == other.test_level
            && self.param_overrides == other.param_overrides
            && self.status == other.status
            && self.episodes.len() == other.episodes.len()
            && self.episodes.iter().zip(&other.episodes).all(|(a, b)| bits(a) == bits(b))
    }

    fn row(&self) -> Vec<String> {
        vec![
            self.task.to_string(),
            self.agent.clone(),
            self.seed.to_string(),
            self.site.clone(),
            self.kind.clone(),
            self.train_level.to_string(),
            self.test_level.clone(),
            self.param_overrides.clone(),
            self.episodes.len().to_string(),
            self.mean_return().to_string(),
            self.std_return().to_string(),
            self.mean_rmse().to_string(),
            self.std_rmse().to_string(),
            self.mean_len().to_string(),
            self.status.to_string(),
        ]
    }
}

/// Resolved config entries plus schema version and fingerprint.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Manifest {
    pub entries: Vec<(String, String)>,
}

impl Manifest {
    pub fn new(command: &str, fingerprint: &str, resolved: &[(String, String)]) -> Self {
        let mut entries = vec![
            ("schema_version".to_string(), SCHEMA_VERSION.to_string()),
            ("command".to_string(), command.to_string()),
            ("fingerprint".to_string(), fingerprint.to_string()),
        ];
        entries.extend(resolved.iter().cloned());
        Self { entries }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn render(&self) -> String {
        self.entries.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for line in text.lines().filter(|l| !l.trim().is_empty()) {
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Schema(format!("manifest line '{line}' is not 'key = value'")))?;
            entries.push((k.trim().to_string(), v.trim().to_string()));
        }
        Ok(Self { entries })
    }
}

/// Everything one command writes besides charts and checkpoints.
#[derive(Clone, Debug, PartialEq)]
pub struct ResultSet {
    pub manifest: Manifest,
    pub records: Vec<EvalRecord>,
}

fn schema(msg: impl Into<String>) -> Error {
    Error::Schema(msg.into())
}

fn check_header(file: &str, got: &csv::StringRecord, want: &[&str]) -> Result<()> {
    if got.iter().ne(want.iter().copied()) {
        return Err(schema(format!(
            "{file}: header {:?} does not match {:?}",
            got.iter().collect::<Vec<_>>(),
            want
        )));
    }
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, file: &str, line: usize) -> Result<T> {
    let raw = rec.get(i).unwrap_or("");
    raw.parse()
        .map_err(|_| schema(format!("{file}:{line}: cannot parse column {i} value '{raw}'")))
}

pub fn persist(set: &ResultSet, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(MANIFEST_FILE), set.manifest.render())?;
    let mut w = csv::Writer::from_path(dir.join(RESULTS_FILE))?;
    w.write_record(RESULTS_HEADER)?;
    for r in &set.records {
        w.write_record(r.row())?;
    }
    w.flush()?;
    let mut w = csv::Writer::from_path(dir.join(EPISODES_FILE))?;
    w.write_record(EPISODES_HEADER)?;
    for (i, r) in set.records.iter().enumerate() {
        for (e, ep) in r.episodes.iter().enumerate() {
            w.write_record([
                i.to_string(),
                e.to_string(),
                ep.ret.to_string(),
                ep.len.to_string(),
                ep.rmse.to_string(),
            ])?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load(dir: &Path) -> Result<ResultSet> {
    let manifest = Manifest::parse(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    match manifest.get("schema_version") {
        Some(v) if v == SCHEMA_VERSION.to_string() => {}
        Some(v) => {
            return Err(schema(format!(
                "results were written with schema version {v}, this build reads {SCHEMA_VERSION}"
            )))
        }
        None => return Err(schema("manifest has no schema_version")),
    }

    let mut rd = csv::Reader::from_path(dir.join(EPISODES_FILE))?;
    check_header(EPISODES_FILE, rd.headers()?, &EPISODES_HEADER)?;
    let mut episodes: Vec<Vec<EpisodeRecord>> = Vec::new();
    for (n, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = n + 2;
        let row: usize = field(&rec, 0, EPISODES_FILE, line)?;
        let ep: usize = field(&rec, 1, EPISODES_FILE, line)?;
        if episodes.len() <= row {
            episodes.resize(row + 1, Vec::new());
        }
        if ep != episodes[row].len() {
            return Err(schema(format!("{EPISODES_FILE}:{line}: episodes out of order")));
        }
        episodes[row].push(EpisodeRecord {
            ret: field(&rec, 2, EPISODES_FILE, line)?,
            len: field(&rec, 3, EPISODES_FILE, line)?,
            rmse: field(&rec, 4, EPISODES_FILE, line)?,
        });
    }

    let mut rd = csv::Reader::from_path(dir.join(RESULTS_FILE))?;
    check_header(RESULTS_FILE, rd.headers()?, &RESULTS_HEADER)?;
    let mut records = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        let f = |c: usize| rec.get(c).unwrap_or("").to_string();
        let r = EvalRecord {
            task: f(0).parse()?,
            agent: f(1),
            seed: field(&rec, 2, RESULTS_FILE, line)?,
            site: f(3),
            kind: f(4),
            train_level: field(&rec, 5, RESULTS_FILE, line)?,
            test_level: f(6),
            param_overrides: f(7),
            episodes: episodes.get(i).cloned().unwrap_or_default(),
            status: f(14).parse()?,
        };
        let n: usize = field(&rec, 8, RESULTS_FILE, line)?;
        if n != r.episodes.len() || r.row() != rec.iter().collect::<Vec<_>>() {
            return Err(schema(format!(
                "{RESULTS_FILE}:{line}: aggregates disagree with {EPISODES_FILE}"
            )));
        }
        records.push(r);
    }
    if episodes.len() > records.len() {
        return Err(schema(format!("{EPISODES_FILE} refers to rows missing from {RESULTS_FILE}")));
    }
    Ok(ResultSet { manifest, records })
}

/// Learning curve aggregated over seeds at one step count.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CurvePoint {
    pub step: usize,
    pub mean: f64,
    pub std: f64,
    pub n_seeds: usize,
}

pub fn write_curve(path: &Path, points: &[CurvePoint]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(CURVE_HEADER)?;
    for p in points {
        w.write_record([p.step.to_string(), p.mean.to_string(), p.std.to_string(), p.n_seeds.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_curve(path: &Path) -> Result<Vec<CurvePoint>> {
    let name = path.display().to_string();
    let mut rd = csv::Reader::from_path(path)?;
    check_header(&name, rd.headers()?, &CURVE_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        out.push(CurvePoint {
            step: field(&rec, 0, &name, i + 2)?,
            mean: field(&rec, 1, &name, i + 2)?,
            std: field(&rec, 2, &name, i + 2)?,
            n_seeds: field(&rec, 3, &name, i + 2)?,
        });
    }
    Ok(out)
}

/// Ablation cell pooled over seeds.
#[derive(Clone, Debug, PartialEq)]
pub struct AblationCell {
    pub condition: String,
    pub variant: String,
    pub n_seeds: usize,
    pub n_failed: usize,
    pub n_episodes: usize,
    pub mean_rmse: f64,
    pub std_rmse: f64,
    pub mean_return: f64,
    pub std_return: f64,
}

pub fn write_ablation(path: &Path, cells: &[AblationCell]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(ABLATION_HEADER)?;
    for c in cells {
        w.write_record([
            c.condition.clone(),
            c.variant.clone(),
            c.n_seeds.to_string(),
            c.n_failed.to_string(),
            c.n_episodes.to_string(),
            c.mean_rmse.to_string(),
            c.std_rmse.to_string(),
            c.mean_return.to_string(),
            c.std_return.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ablation(path: &Path) -> Result<Vec<AblationCell>> {
    let name = path.display().to_string();
    let mut rd = csv::Reader::from_path(path)?;
    check_header(&name, rd.headers()?, &ABLATION_HEADER)?;
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec?;
        let l = i + 2;
        out.push(AblationCell {
            condition: rec.get(0).unwrap_or("").to_string(),
            variant: rec.get(1).unwrap_or("").to_string(),
            n_seeds: field(&rec, 2, &name, l)?,
            n_failed: field(&rec, 3, &name, l)?,
            n_episodes: field(&rec, 4, &name, l)?,
            mean_rmse: field(&rec, 5, &name, l)?,
            std_rmse: field(&rec, 6, &name, l)?,
            mean_return: field(&rec, 7, &name, l)?,
            std_return: field(&rec, 8, &name, l)?,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(seed: u64, eps: Vec<EpisodeRecord>, status: Status) -> EvalRecord {
        EvalRecord {
            task: TaskKind::CartPole,
            agent: "ppo".into(),
            seed,
            site: "obs+act".into(),
            kind: "uniform+white".into(),
            train_level: 0.1,
            test_level: "0.05+1".into(),
            param_overrides: "pole_length=0.7".into(),
            episodes: eps,
            status,
        }
    }

    fn set(records: Vec<EvalRecord>) -> ResultSet {
        ResultSet {
            manifest: Manifest::new("sweep", "abc", &[("task".into(), "cartpole".into())]),
            records,
        }
    }

    proptest! {
        #[test]
        fn round_trip_is_exact(
            rows in prop::collection::vec(
                prop::collection::vec((-1e3..0.0f64, 1usize..250, 0.0..5.0f64), 0..6), 0..5)
        ) {
            let records: Vec<EvalRecord> = rows
                .into_iter()
                .enumerate()
                .map(|(i, eps)| {
                    let status = if eps.is_empty() { Status::Failed } else { Status::Ok };
                    let eps = eps.into_iter().map(|(ret, len, rmse)| EpisodeRecord { ret, len, rmse }).collect();
                    record(i as u64, eps, status)
                })
                .collect();
            let dir = tempfile::tempdir().unwrap();
            let s = set(records);
            persist(&s, dir.path()).unwrap();
            let back = load(dir.path()).unwrap();
            prop_assert_eq!(back.manifest, s.manifest);
            prop_assert_eq!(back.records.len(), s.records.len());
            for (a, b) in back.records.iter().zip(&s.records) {
                prop_assert!(a.bit_eq(b));
            }
        }
    }

    #[test]
    fn generic_reader_sees_documented_header() {
        let dir = tempfile::tempdir().unwrap();
        let eps = vec![EpisodeRecord { ret: -3.0, len: 250, rmse: 0.2 }];
        persist(&set(vec![record(1, eps, Status::Ok)]), dir.path()).unwrap();
        let text = fs::read_to_string(dir.path().join(RESULTS_FILE)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next().unwrap(), RESULTS_HEADER.join(","));
        let row: Vec<&str> = lines.next().unwrap().split(',').collect();
        assert_eq!(row.len(), RESULTS_HEADER.len());
        assert_eq!(row[9].parse::<f64>().unwrap(), -3.0 / 250.0);
    }

    #[test]
    fn schema_version_mismatch_is_explicit() {
        let dir = tempfile::tempdir().unwrap();
        persist(&set(vec![]), dir.path()).unwrap();
        let m = dir.path().join(MANIFEST_FILE);
        let text = fs::read_to_string(&m).unwrap().replace("schema_version = 1", "schema_version = 0");
        fs::write(&m, text).unwrap();
        let err = load(dir.path()).unwrap_err();
        assert!(matches!(err, Error::Schema(ref s) if s.contains("schema version 0")), "{err}");
    }

    #[test]
    fn tampered_aggregates_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let eps = vec![EpisodeRecord { ret: -3.0, len: 250, rmse: 0.2 }];
        persist(&set(vec![record(1, eps, Status::Ok)]), dir.path()).unwrap();
        let p = dir.path().join(EPISODES_FILE);
        let text = fs::read_to_string(&p).unwrap().replace("-3", "-4");
        fs::write(&p, text).unwrap();
        assert!(matches!(load(dir.path()), Err(Error::Schema(_))));
    }

    #[test]
    fn failed_rows_have_nan_aggregates() {
        let r = record(3, vec![], Status::Failed);
        assert!(r.mean_return().is_nan() && r.mean_rmse().is_nan());
        assert_eq!(r.row()[8], "0");
        assert_eq!(r.row()[14], "failed");
    }

    #[test]
    fn curve_and_ablation_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let pts = vec![
            CurvePoint { step: 0, mean: 0.1, std: 0.0, n_seeds: 3 },
            CurvePoint { step: 10_000, mean: 0.93, std: 0.012, n_seeds: 2 },
        ];
        let p = dir.path().join("curve.csv");
        write_curve(&p, &pts).unwrap();
        assert_eq!(read_curve(&p).unwrap(), pts);
        let cells = vec![AblationCell {
            condition: "params x1.5".into(),
            variant: "ppo_dr[low]".into(),
            n_seeds: 3,
            n_failed: 0,
            n_episodes: 75,
            mean_rmse: 0.3,
            std_rmse: 0.05,
            mean_return: 0.8,
            std_return: 0.01,
        }];
        let p = dir.path().join("ablation.csv");
        write_ablation(&p, &cells).unwrap();
        assert_eq!(read_ablation(&p).unwrap(), cells);
    }
}
