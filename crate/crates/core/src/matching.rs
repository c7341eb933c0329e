//! Inlier counts for (query, candidate) pairs.
//!
//! Counts come either from a precomputed CSV table or from an external
//! matcher invoked once per pair as a subprocess. Absent counts are reported
//! as errors, never as zero: zero inliers is a legitimate (maximally
//! uncertain) measurement.

use std::collections::HashMap;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Condvar, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{Error, Result};
use crate::retrieval::{check_header, csv_io};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MatchError {
    #[error("no inlier count for ({query}, {db})")]
    Missing { query: String, db: String },

    #[error("matcher timed out after {timeout:?} on ({query}, {db})")]
    Timeout {
        query: String,
        db: String,
        timeout: Duration,
    },

    #[error("matcher exited with {status} on ({query}, {db})")]
    NonZeroExit {
        query: String,
        db: String,
        status: String,
    },

    #[error("unparseable matcher output {output:?} on ({query}, {db})")]
    Unparseable {
        query: String,
        db: String,
        output: String,
    },

    #[error("could not run matcher on ({query}, {db}): {msg}")]
    Spawn { query: String, db: String, msg: String },

    #[error("no image paths for ({query}, {db})")]
    NoImagePaths { query: String, db: String },
}

impl MatchError {
    pub fn pair(&self) -> (&str, &str) {
        match self {
            MatchError::Missing { query, db }
            | MatchError::Timeout { query, db, .. }
            | MatchError::NonZeroExit { query, db, .. }
            | MatchError::Unparseable { query, db, .. }
            | MatchError::Spawn { query, db, .. }
            | MatchError::NoImagePaths { query, db } => (query, db),
        }
    }
}

/// Anything that can report the inlier count of a (query, database) pair.
pub trait InlierSource: Sync {
    fn inliers(&self, query_id: &str, db_id: &str) -> Result<u32, MatchError>;
}

/// Precomputed `(query_id, db_id) -> inliers` table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct InlierTable {
    counts: HashMap<(String, String), u32>,
}

#[derive(Serialize, Deserialize)]
struct InlierRow {
    query_id: String,
    db_id: String,
    inliers: String,
}

impl InlierTable {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts a count; a repeated pair is an error.
    pub fn insert(&mut self, query_id: &str, db_id: &str, inliers: u32) -> Result<()> {
        let key = (query_id.to_owned(), db_id.to_owned());
        if self.counts.contains_key(&key) {
            return Err(Error::DuplicatePair {
                query: key.0,
                db: key.1,
            });
        }
        self.counts.insert(key, inliers);
        Ok(())
    }

    pub fn get(&self, query_id: &str, db_id: &str) -> Option<u32> {
        // HashMap<(String, String), _> cannot be probed with borrowed halves
        self.counts
            .get(&(query_id.to_owned(), db_id.to_owned()))
            .copied()
    }

    pub fn len(&self) -> usize {
        self.counts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counts.is_empty()
    }

    /// Rows sorted by `(query_id, db_id)`.
    pub fn sorted_rows(&self) -> Vec<(&str, &str, u32)> {
        let mut rows: Vec<_> = self
            .counts
            .iter()
            .map(|((q, d), &n)| (q.as_str(), d.as_str(), n))
            .collect();
        rows.sort_unstable();
        rows
    }

    pub fn from_reader(reader: impl Read, path: &Path) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        check_header(&mut rdr, path, "inlier table", &["query_id", "db_id", "inliers"])?;
        let mut table = Self::new();
        for (i, row) in rdr.deserialize::<InlierRow>().enumerate() {
            let line = i + 2;
            let row = row.map_err(|e| Error::Csv {
                what: "inlier table",
                line,
                msg: e.to_string(),
            })?;
            let text = row.inliers.trim();
            let inliers: u32 = match text.parse::<i64>() {
                Ok(n) if n < 0 => {
                    return Err(Error::Csv {
                        what: "inlier table",
                        line,
                        msg: format!("negative inlier count {n}"),
                    })
                }
                Ok(n) => u32::try_from(n).map_err(|_| Error::Csv {
                    what: "inlier table",
                    line,
                    msg: format!("inlier count {n} out of range"),
                })?,
                Err(_) => {
                    return Err(Error::Csv {
                        what: "inlier table",
                        line,
                        msg: format!("inlier count {text:?} is not an integer"),
                    })
                }
            };
            table.insert(&row.query_id, &row.db_id, inliers)?;
        }
        Ok(table)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::from_reader(file, path)
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path).map_err(|e| csv_io(path, e))?;
        w.write_record(["query_id", "db_id", "inliers"])
            .map_err(|e| csv_io(path, e))?;
        for (q, d, n) in self.sorted_rows() {
            w.write_record([q, d, &n.to_string()])
                .map_err(|e| csv_io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }
}

pub fn load_inlier_table(path: &Path) -> Result<InlierTable> {
    InlierTable::load(path)
}

impl InlierSource for InlierTable {
    fn inliers(&self, query_id: &str, db_id: &str) -> Result<u32, MatchError> {
        self.get(query_id, db_id).ok_or_else(|| MatchError::Missing {
            query: query_id.to_owned(),
            db: db_id.to_owned(),
        })
    }
}

/// Maps image ids to files: `<dir>/<id><extension>`.
#[derive(Debug, Clone)]
pub struct ImageLayout {
    pub query_dir: PathBuf,
    pub db_dir: PathBuf,
    pub extension: String,
}

impl ImageLayout {
    pub fn paths(&self, query_id: &str, db_id: &str) -> (PathBuf, PathBuf) {
        (
            self.query_dir.join(format!("{query_id}{}", self.extension)),
            self.db_dir.join(format!("{db_id}{}", self.extension)),
        )
    }
}

/// Counting semaphore.
#[derive(Debug)]
struct Slots {
    free: Mutex<usize>,
    released: Condvar,
}

impl Slots {
    fn new(n: usize) -> Self {
        Self {
            free: Mutex::new(n),
            released: Condvar::new(),
        }
    }

    fn acquire(&self) -> SlotGuard<'_> {
        let mut free = self.free.lock().unwrap();
        while *free == 0 {
            free = self.released.wait(free).unwrap();
        }
        *free -= 1;
        SlotGuard(self)
    }
}

struct SlotGuard<'a>(&'a Slots);

impl Drop for SlotGuard<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().unwrap() += 1;
        self.0.released.notify_one();
    }
}

/// Runs an external matcher per pair through `sh -c`.
///
/// `{query}` and `{db}` in the template are replaced by shell-quoted image
/// paths. The command must exit 0; the last whitespace-delimited token of its
/// stdout is the inlier count.
#[derive(Debug)]
pub struct SubprocessMatcher {
    template: String,
    timeout: Duration,
    max_concurrent: usize,
    layout: Option<ImageLayout>,
    slots: Slots,
    active: AtomicUsize,
    peak: AtomicUsize,
}

impl SubprocessMatcher {
    pub fn new(template: impl Into<String>, timeout: Duration, max_concurrent: usize) -> Result<Self> {
        if timeout.is_zero() {
            return Err(Error::InvalidConfig("matcher timeout must be positive".into()));
        }
        if max_concurrent == 0 {
            return Err(Error::InvalidConfig("matcher concurrency must be at least 1".into()));
        }
        Ok(Self {
            template: template.into(),
            timeout,
            max_concurrent,
            layout: None,
            slots: Slots::new(max_concurrent),
            active: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        })
    }

    pub fn with_layout(mut self, layout: ImageLayout) -> Self {
        self.layout = Some(layout);
        self
    }

    pub fn max_concurrent(&self) -> usize {
        self.max_concurrent
    }

    /// Highest number of simultaneously running invocations observed so far.
    pub fn peak_concurrency(&self) -> usize {
        self.peak.load(Ordering::SeqCst)
    }

    pub fn command_line(&self, query_path: &Path, db_path: &Path) -> String {
        self.template
            .replace("{query}", &shell_quote(query_path))
            .replace("{db}", &shell_quote(db_path))
    }

    pub fn run(&self, query_id: &str, db_id: &str, query_path: &Path, db_path: &Path) -> Result<u32, MatchError> {
        let _slot = self.slots.acquire();
        let now = self.active.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        let out = self.run_unbounded(query_id, db_id, query_path, db_path);
        self.active.fetch_sub(1, Ordering::SeqCst);
        out
    }

    fn run_unbounded(&self, query_id: &str, db_id: &str, query_path: &Path, db_path: &Path) -> Result<u32, MatchError> {
        let pair = || (query_id.to_owned(), db_id.to_owned());
        let spawn_err = |msg: String| {
            let (query, db) = pair();
            MatchError::Spawn { query, db, msg }
        };
        let mut child = Command::new("sh")
            .arg("-c")
            .arg(self.command_line(query_path, db_path))
            .stdin(Stdio::null())
            .stdout(Stdio::piped())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| spawn_err(e.to_string()))?;

        let mut stdout = child.stdout.take().expect("stdout is piped");
        let reader = thread::spawn(move || {
            let mut buf = Vec::new();
            stdout.read_to_end(&mut buf).map(|_| buf)
        });

        let deadline = Instant::now() + self.timeout;
        let status = loop {
            match child.try_wait().map_err(|e| spawn_err(e.to_string()))? {
                Some(status) => break status,
                None if Instant::now() >= deadline => {
                    let _ = child.kill();
                    let _ = child.wait();
                    // the reader may still block on a grandchild holding the pipe
                    drop(reader);
                    let (query, db) = pair();
                    return Err(MatchError::Timeout {
                        query,
                        db,
                        timeout: self.timeout,
                    });
                }
                None => thread::sleep(Duration::from_millis(2)),
            }
        };
        if !status.success() {
            let (query, db) = pair();
            return Err(MatchError::NonZeroExit {
                query,
                db,
                status: status.to_string(),
            });
        }
        let bytes = reader
            .join()
            .map_err(|_| spawn_err("stdout reader panicked".into()))?
            .map_err(|e| spawn_err(e.to_string()))?;
        let text = String::from_utf8_lossy(&bytes);
        parse_last_token(&text).ok_or_else(|| {
            let (query, db) = pair();
            MatchError::Unparseable {
                query,
                db,
                output: text.trim().chars().rev().take(80).collect::<Vec<_>>().into_iter().rev().collect(),
            }
        })
    }
}

fn parse_last_token(stdout: &str) -> Option<u32> {
    stdout.split_whitespace().last()?.parse().ok()
}

fn shell_quote(path: &Path) -> String {
    let s = path.to_string_lossy();
    format!("'{}'", s.replace('\'', r"'\''"))
}

/// Where inlier counts come from.
#[derive(Debug)]
pub enum MatcherProvider {
    Table(InlierTable),
    Subprocess(SubprocessMatcher),
}

impl MatcherProvider {
    /// Inlier count for one pair. Subprocess providers need `image_paths`
    /// unless they were configured with an [`ImageLayout`].
    pub fn get_inliers(
        &self,
        query_id: &str,
        db_id: &str,
        image_paths: Option<(&Path, &Path)>,
    ) -> Result<u32, MatchError> {
        match self {
            MatcherProvider::Table(t) => t.inliers(query_id, db_id),
            MatcherProvider::Subprocess(m) => match (image_paths, &m.layout) {
                (Some((q, d)), _) => m.run(query_id, db_id, q, d),
                (None, Some(layout)) => {
                    let (q, d) = layout.paths(query_id, db_id);
                    m.run(query_id, db_id, &q, &d)
                }
                (None, None) => Err(MatchError::NoImagePaths {
                    query: query_id.to_owned(),
                    db: db_id.to_owned(),
                }),
            },
        }
    }
}

impl InlierSource for MatcherProvider {
    fn inliers(&self, query_id: &str, db_id: &str) -> Result<u32, MatchError> {
        self.get_inliers(query_id, db_id, None)
    }
}

impl<T: InlierSource + ?Sized> InlierSource for &T {
    fn inliers(&self, query_id: &str, db_id: &str) -> Result<u32, MatchError> {
        (**self).inliers(query_id, db_id)
    }
}
