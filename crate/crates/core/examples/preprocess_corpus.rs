//! Parse, filter, segment and split a check-in log, then print the dataset
//! statistics and activity-radius histogram.
//!
//!     cargo run --example preprocess_corpus -- [path/to/dataset_TSMC2014_NYC.txt]
//!
//! Without a path a synthetic log is used.

use nextpoi::config::CorpusConfig;
use nextpoi::corpus::{corpus_report, load_corpus, parse_dataset, preprocess, save_corpus};
use nextpoi::synthetic::{generate, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let cfg = CorpusConfig::default();
    let (rows, skipped) = match std::env::args().nth(1) {
        Some(p) => {
            let parsed = parse_dataset(p.as_ref(), cfg.tz_mode)?;
            (parsed.checkins, parsed.skipped)
        }
        None => (generate(&SyntheticConfig { users: 60, ..Default::default() })?, 0),
    };
    println!("{} raw check-ins ({} malformed rows skipped)", rows.len(), skipped);

    let split = preprocess(rows, &cfg)?;
    let s = split.stats;
    println!("users        {}", s.users);
    println!("POIs         {}", s.pois);
    println!("categories   {}", s.categories);
    println!("check-ins    {}", s.checkins);
    println!("trajectories {} ({} train / {} test)", s.trajectories, s.train_trajectories, s.test_trajectories);

    let report = corpus_report(&split, 10.0)?;
    println!("\nactivity radius");
    for b in &report.radius_buckets {
        println!("  {:>4}-{:<4} km  {:5.1}%", b.lo_km, b.hi_km, 100.0 * b.proportion);
    }

    let dir = std::env::temp_dir().join("nextpoi-example-corpus");
    save_corpus(&split, &dir, &cfg, skipped)?;
    let (back, meta) = load_corpus(&dir)?;
    assert_eq!(back, split);
    println!("\nsaved to {} (config {})", dir.display(), meta.config_hash);
    Ok(())
}
