//! Drives an external matcher through a shell command template. The stand-in
//! matcher here is a shell script that derives a count from the file sizes.

use std::fs;
use std::time::Duration;

use vprgate::matching::{ImageLayout, MatcherProvider, SubprocessMatcher};
use vprgate::rerank::rerank;
use vprgate::retrieval::{Shortlist, ShortlistEntry};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = tempfile::tempdir()?;
    let (qdir, ddir) = (dir.path().join("queries"), dir.path().join("db"));
    fs::create_dir_all(&qdir)?;
    fs::create_dir_all(&ddir)?;
    fs::write(qdir.join("q0.jpg"), vec![0u8; 40])?;
    for (id, size) in [("a", 10), ("b", 35), ("c", 20)] {
        fs::write(ddir.join(format!("{id}.jpg")), vec![0u8; size])?;
    }
    fs::write(ddir.join("broken.jpg"), b"")?;

    let script = dir.path().join("match.sh");
    fs::write(
        &script,
        "q=$(wc -c < \"$1\"); d=$(wc -c < \"$2\")\n\
         [ \"$d\" -eq 0 ] && { echo 'no keypoints' >&2; exit 3; }\n\
         echo \"matched keypoints\"\n\
         echo \"inliers: $(( q < d ? q : d ))\"\n",
    )?;
    let template = format!("sh {} {{query}} {{db}}", script.display());

    let matcher = SubprocessMatcher::new(template, Duration::from_secs(5), 2)?.with_layout(ImageLayout {
        query_dir: qdir,
        db_dir: ddir,
        extension: ".jpg".into(),
    });
    let provider = MatcherProvider::Subprocess(matcher);

    let shortlist = Shortlist {
        query_id: "q0".into(),
        entries: ["a", "broken", "b", "c"]
            .iter()
            .enumerate()
            .map(|(i, id)| ShortlistEntry { db_id: (*id).into(), distance: 0.5 + 0.1 * i as f64 })
            .collect(),
    };
    let r = rerank(&shortlist, &provider)?;
    for e in &r.entries {
        println!("{:<7} inliers={:?} (was rank {})", e.db_id, e.inliers, e.original_rank);
    }
    for d in &r.diagnostics {
        println!("diagnostic: {d}");
    }
    if let MatcherProvider::Subprocess(m) = &provider {
        println!("peak concurrent matcher processes: {}", m.peak_concurrency());
    }
    Ok(())
}
