//! Per-issue task driver shared by the SFT and preference generators.
//!
//! Each (case, issue) pair gets one shard file under `<out>/shards/<stage>/`
//! holding its settled outcome. A rerun reads settled shards instead of
//! calling the model again, and the final JSONL is assembled from the shards
//! in (case id, issue id) order, so worker scheduling never shows up in the
//! output.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::kg::IracGraph;
use crate::query::legal_issues;

#[derive(Debug, Clone)]
pub(crate) struct IssueTask<'a> {
    pub graph: &'a IracGraph,
    pub issue_id: String,
}

/// Every issue of every graph, ordered by case id then issue id.
pub(crate) fn issue_tasks(graphs: &[IracGraph]) -> Vec<IssueTask<'_>> {
    let mut tasks: Vec<IssueTask<'_>> = graphs
        .iter()
        .flat_map(|g| {
            legal_issues(g).into_iter().map(move |i| IssueTask {
                graph: g,
                issue_id: i.id.clone(),
            })
        })
        .collect();
    tasks.sort_by(|a, b| {
        (a.graph.case_id.as_str(), a.issue_id.as_str()).cmp(&(b.graph.case_id.as_str(), b.issue_id.as_str()))
    });
    tasks
}

pub(crate) fn shard_path(out: &Path, stage: &str, case_id: &str, issue_id: &str) -> PathBuf {
    out.join("shards")
        .join(stage)
        .join(format!("{}.json", crate::text::record_id(&[case_id, issue_id])))
}

pub(crate) fn write_atomic(path: &Path, body: &[u8]) -> io::Result<()> {
    use std::io::Write;
    let dir = path.parent().unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(body)?;
    tmp.persist(path).map_err(|e| e.error)?;
    Ok(())
}

#[derive(Serialize, serde::Deserialize)]
struct Shard<T> {
    fingerprint: String,
    outcome: T,
}

/// Identifies the inputs of a task: the whole graph, the issue and `salt`
/// (the model tag). A shard whose fingerprint differs is stale.
fn fingerprint(task: &IssueTask<'_>, salt: &str) -> String {
    let graph = serde_json::to_string(task.graph).unwrap_or_default();
    crate::text::sha256_hex(&[&graph, &task.issue_id, salt])
}

/// Runs `work` for every task on `jobs` threads. Outcomes for which
/// `settled` holds are written to their shard; outcomes already on disk with
/// a matching fingerprint are returned without calling `work`. The second
/// element of each pair tells whether the outcome was reused.
pub(crate) fn run_sharded<T, W, S>(
    tasks: &[IssueTask<'_>],
    out: &Path,
    stage: &str,
    salt: &str,
    jobs: usize,
    work: W,
    settled: S,
) -> io::Result<Vec<(T, bool)>>
where
    T: Serialize + DeserializeOwned + Send,
    W: Fn(&IssueTask<'_>) -> T + Sync,
    S: Fn(&T) -> bool + Sync,
{
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs.max(1))
        .build()
        .map_err(io::Error::other)?;
    pool.install(|| {
        tasks
            .par_iter()
            .map(|task| {
                let path = shard_path(out, stage, &task.graph.case_id, &task.issue_id);
                let fingerprint = fingerprint(task, salt);
                if let Some(prev) = fs::read(&path)
                    .ok()
                    .and_then(|b| serde_json::from_slice::<Shard<T>>(&b).ok())
                    .filter(|s| s.fingerprint == fingerprint)
                {
                    return Ok((prev.outcome, true));
                }
                let outcome = work(task);
                if settled(&outcome) {
                    let shard = Shard { fingerprint, outcome };
                    write_atomic(&path, &serde_json::to_vec(&shard)?)?;
                    return Ok((shard.outcome, false));
                }
                Ok((outcome, false))
            })
            .collect()
    })
}
