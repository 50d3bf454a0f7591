//! Writes a seeded synthetic check-in log in the Foursquare TSV layout.
//!
//!     cargo run --example synthetic_checkins -- /tmp/synthetic.tsv [users]

use std::path::PathBuf;

use nextpoi::synthetic::{generate, write_tsv, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let mut args = std::env::args().skip(1);
    let out = PathBuf::from(args.next().unwrap_or_else(|| "synthetic.tsv".into()));
    let users = args.next().and_then(|s| s.parse().ok()).unwrap_or(40);
    let cfg = SyntheticConfig {
        users,
        pois: 120,
        days: 30,
        ..SyntheticConfig::default()
    };
    let rows = generate(&cfg)?;
    write_tsv(&rows, &out)?;
    println!("{} check-ins from {} users written to {}", rows.len(), users, out.display());
    Ok(())
}
