use std::cmp::Ordering;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::Serialize;
use serde_json::{json, Value};

use crate::randnet::sig9;
use crate::search::{Candidate, SearchError, SearchSpec};

/// `round(0.1 · n)`, half away from zero.
pub fn bucket_size(n: usize) -> usize {
    (n + 5) / 10
}

/// Hyphen-joined widths, e.g. `34-34-45-55-66`.
pub fn format_channels(channels: &[usize]) -> String {
    channels.iter().map(usize::to_string).collect::<Vec<_>>().join("-")
}

fn mean_std(xs: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = xs.clone().count() as f64;
    let mean = xs.clone().sum::<f64>() / n;
    let var = xs.map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Statistics over one rank bucket (population standard deviations).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Bucket {
    /// Candidate ids in rank order.
    pub members: Vec<usize>,
    pub mean_channels: Vec<f64>,
    pub std_channels: Vec<f64>,
    pub mean_score: f64,
    pub std_score: f64,
    pub mean_params: f64,
    pub mean_macs: f64,
}

impl Bucket {
    fn from_members(members: &[&Candidate]) -> Self {
        let d = members[0].channels.len();
        let (mean_channels, std_channels) = (0..d)
            .map(|i| mean_std(members.iter().map(|c| c.channels[i] as f64)))
            .unzip();
        let (mean_score, std_score) = mean_std(members.iter().map(|c| c.score.expect("scored")));
        Self {
            members: members.iter().map(|c| c.id).collect(),
            mean_channels,
            std_channels,
            mean_score,
            std_score,
            mean_params: mean_std(members.iter().map(|c| c.cost.params as f64)).0,
            mean_macs: mean_std(members.iter().map(|c| c.cost.macs as f64)).0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Deciles {
    pub top10: Bucket,
    pub mid10: Bucket,
    pub bottom10: Bucket,
}

impl Deciles {
    pub fn named(&self) -> [(&'static str, &Bucket); 3] {
        [("top10", &self.top10), ("mid10", &self.mid10), ("bottom10", &self.bottom10)]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchRun {
    pub spec: SearchSpec,
    /// All candidates, ordered by id.
    pub candidates: Vec<Candidate>,
    /// Candidate ids from best to worst.
    pub ranking: Vec<usize>,
    pub deciles: Deciles,
    pub best: Candidate,
    pub worst: Candidate,
}

fn rank_cmp(a: &Candidate, b: &Candidate) -> Ordering {
    let (sa, sb) = (a.score.expect("scored"), b.score.expect("scored"));
    sb.total_cmp(&sa)
        .then(a.cost.params.cmp(&b.cost.params))
        .then(a.id.cmp(&b.id))
}

/// Ranks by score (descending), then fewer params, then lower id, and
/// collects the top, middle (ranks ⌊n/2⌋+1 … ⌊n/2⌋+m) and bottom buckets of
/// size `m = round(0.1 · n)`.
pub fn aggregate(spec: &SearchSpec, mut candidates: Vec<Candidate>) -> Result<SearchRun, SearchError> {
    if let Some(c) = candidates.iter().find(|c| c.score.is_none()) {
        return Err(SearchError::Unscored(c.id));
    }
    let n = candidates.len();
    let m = bucket_size(n);
    if m == 0 {
        return Err(SearchError::InvalidSpec(format!("{n} candidates leave the deciles empty")));
    }
    candidates.sort_by_key(|c| c.id);
    let mut ranked: Vec<&Candidate> = candidates.iter().collect();
    ranked.sort_by(|a, b| rank_cmp(a, b));
    let half = n / 2;
    let deciles = Deciles {
        top10: Bucket::from_members(&ranked[..m]),
        mid10: Bucket::from_members(&ranked[half..half + m]),
        bottom10: Bucket::from_members(&ranked[n - m..]),
    };
    let ranking = ranked.iter().map(|c| c.id).collect();
    let best = ranked[0].clone();
    let worst = ranked[n - 1].clone();
    Ok(SearchRun {
        spec: spec.clone(),
        candidates,
        ranking,
        deciles,
        best,
        worst,
    })
}

fn comment_lines(metadata: Option<&Value>) -> String {
    metadata.map(|m| format!("# {m}\n")).unwrap_or_default()
}

fn candidate_json(c: &Candidate) -> Value {
    json!({
        "id": c.id,
        "channels": format_channels(&c.channels),
        "params": c.cost.params,
        "macs": c.cost.macs,
        "score": c.score,
    })
}

pub fn emit_run(run: &SearchRun, dir: &Path) -> Result<(), SearchError> {
    emit_run_with_metadata(run, dir, None)
}

/// Writes `candidates.csv`, `deciles.csv` and `summary.json` into `dir`.
/// With `metadata`, the CSVs open with a `# <json>` line and the summary
/// gains a `metadata` field.
pub fn emit_run_with_metadata(run: &SearchRun, dir: &Path, metadata: Option<&Value>) -> Result<(), SearchError> {
    let write = |name: &str, text: String| {
        let path = dir.join(name);
        fs::write(&path, text).map_err(|source| SearchError::Io { path, source })
    };
    fs::create_dir_all(dir).map_err(|source| SearchError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let d = run.spec.depth_d;

    let mut csv = comment_lines(metadata);
    csv.push_str("id");
    for i in 1..=d {
        write!(csv, ",c{i}").unwrap();
    }
    csv.push_str(",params,macs,score\n");
    for c in &run.candidates {
        write!(csv, "{}", c.id).unwrap();
        for ch in &c.channels {
            write!(csv, ",{ch}").unwrap();
        }
        writeln!(csv, ",{},{},{}", c.cost.params, c.cost.macs, sig9(c.score.expect("scored"))).unwrap();
    }
    write("candidates.csv", csv)?;

    let mut csv = comment_lines(metadata);
    csv.push_str("bucket,block_index,mean_channel,std_channel\n");
    for (name, b) in run.deciles.named() {
        for i in 0..d {
            writeln!(csv, "{name},{},{},{}", i + 1, sig9(b.mean_channels[i]), sig9(b.std_channels[i])).unwrap();
        }
    }
    write("deciles.csv", csv)?;

    let buckets: serde_json::Map<String, Value> = run
        .deciles
        .named()
        .into_iter()
        .map(|(name, b)| {
            (
                name.to_string(),
                json!({
                    "size": b.members.len(),
                    "members": b.members,
                    "mean_score": b.mean_score,
                    "std_score": b.std_score,
                    "mean_params": b.mean_params,
                    "mean_macs": b.mean_macs,
                }),
            )
        })
        .collect();
    let mut summary = json!({
        "depth": d,
        "num_candidates": run.candidates.len(),
        "budget": run.spec.budget,
        "best": candidate_json(&run.best),
        "worst": candidate_json(&run.worst),
        "buckets": buckets,
    });
    if let Some(m) = metadata {
        summary["metadata"] = m.clone();
    }
    let mut text = serde_json::to_string_pretty(&summary).expect("summary serializes");
    text.push('\n');
    write("summary.json", text)
}
