//! Find the history trajectory whose encoded representation is closest to
//! a user's latest trajectory.

use nextpoi::config::PipelineConfig;
use nextpoi::context::ContextStats;
use nextpoi::embedding::FrozenEmbeddings;
use nextpoi::experiments::case_study;
use nextpoi::synthetic::{corpus, SyntheticConfig};
use nextpoi::train::train;

fn main() -> nextpoi::Result<()> {
    let mut cfg = PipelineConfig::small();
    cfg.train.max_epochs = 3;
    let split = corpus(&SyntheticConfig { users: 20, days: 28, ..Default::default() }, &cfg.corpus)?;
    let ctx = ContextStats::build(&split, &cfg.context)?;
    let frozen = FrozenEmbeddings::build(&ctx, &cfg.embedding)?;
    let state = train(&split, &ctx, frozen, &cfg, None)?.state;

    let cs = case_study(&state, &split, 2)?;
    let show = |label: &str, m: &nextpoi::experiments::TrajectoryMatch| {
        let pois: Vec<u32> = m.path.iter().map(|p| p.poi).collect();
        println!("{label:<13} #{:<3} {:<9} cos {:.4}  {pois:?}", m.index, m.weekday, m.similarity);
    };
    show("current", &cs.current);
    for m in cs.ranked.iter().take(3) {
        show("history", m);
    }
    let dir = std::env::temp_dir().join("nextpoi-example-case");
    cs.write(&dir)?;
    println!("paths for plotting in {}", dir.join("case_study_paths.csv").display());
    Ok(())
}
