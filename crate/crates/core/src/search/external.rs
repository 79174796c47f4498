use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::search::{Candidate, SearchError, SearchSpec};
use crate::seed::derive_seed;

pub const CANDIDATES_FILE: &str = "candidates.json";
pub const SCORES_FILE: &str = "scores.json";
const POLL: Duration = Duration::from_millis(50);

#[derive(Serialize)]
struct CandidateEntry<'a> {
    id: usize,
    channels: &'a [usize],
    params: u64,
    macs: u64,
}

#[derive(Serialize)]
struct CandidatesFile<'a> {
    run_id: &'a str,
    candidates: Vec<CandidateEntry<'a>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoreEntry {
    id: usize,
    score: f64,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScoresFile {
    run_id: String,
    scores: Vec<ScoreEntry>,
}

/// Identifier tying a `scores.json` to the `candidates.json` it answers.
pub(crate) fn run_id(spec: &SearchSpec) -> String {
    let text = serde_json::to_string(spec).expect("spec serializes");
    let h = text.bytes().fold(derive_seed(spec.master_seed, &[0x1D]), |acc, b| derive_seed(acc, &[b as u64]));
    format!("{h:016x}")
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> SearchError + '_ {
    move |source| SearchError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes `candidates.json` through a temporary file and a rename so readers
/// never observe a partial file.
pub fn write_candidates_json(dir: &Path, run_id: &str, cands: &[Candidate]) -> Result<PathBuf, SearchError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let body = CandidatesFile {
        run_id,
        candidates: cands
            .iter()
            .map(|c| CandidateEntry {
                id: c.id,
                channels: &c.channels,
                params: c.cost.params,
                macs: c.cost.macs,
            })
            .collect(),
    };
    let path = dir.join(CANDIDATES_FILE);
    let tmp = dir.join(format!(".{CANDIDATES_FILE}.tmp"));
    let mut text = serde_json::to_string_pretty(&body).expect("candidates serialize");
    text.push('\n');
    fs::write(&tmp, text).map_err(io_err(&tmp))?;
    fs::rename(&tmp, &path).map_err(io_err(&path))?;
    Ok(path)
}

/// Parses a `scores.json`. Returns `Ok(None)` when it belongs to another run.
pub fn read_scores(path: &Path, run_id: &str) -> Result<Option<BTreeMap<usize, f64>>, SearchError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let file: ScoresFile = serde_json::from_str(&text)
        .map_err(|e| SearchError::Exchange(format!("malformed {}: {e}", path.display())))?;
    if file.run_id != run_id {
        return Ok(None);
    }
    let mut out = BTreeMap::new();
    for s in file.scores {
        if !s.score.is_finite() {
            return Err(SearchError::Exchange(format!("candidate {} has a non-finite score", s.id)));
        }
        if out.insert(s.id, s.score).is_some() {
            return Err(SearchError::Exchange(format!("candidate {} is scored twice", s.id)));
        }
    }
    Ok(Some(out))
}

pub(crate) fn exchange(
    mut cands: Vec<Candidate>,
    dir: &Path,
    timeout: Option<Duration>,
    run_id: &str,
) -> Result<Vec<Candidate>, SearchError> {
    write_candidates_json(dir, run_id, &cands)?;
    let scores_path = dir.join(SCORES_FILE);
    let start = Instant::now();
    let scores = loop {
        if scores_path.exists() {
            if let Some(s) = read_scores(&scores_path, run_id)? {
                break s;
            }
        }
        if let Some(t) = timeout {
            if start.elapsed() >= t {
                return Err(SearchError::Timeout(t));
            }
        }
        thread::sleep(POLL);
    };
    let missing: Vec<usize> = cands.iter().map(|c| c.id).filter(|id| !scores.contains_key(id)).collect();
    if !missing.is_empty() {
        return Err(SearchError::Exchange(format!("scores missing for candidate ids {missing:?}")));
    }
    if scores.len() != cands.len() {
        let known: std::collections::BTreeSet<usize> = cands.iter().map(|c| c.id).collect();
        let extra: Vec<usize> = scores.keys().copied().filter(|id| !known.contains(id)).collect();
        return Err(SearchError::Exchange(format!("scores for unknown candidate ids {extra:?}")));
    }
    for c in &mut cands {
        c.score = Some(scores[&c.id]);
    }
    Ok(cands)
}
