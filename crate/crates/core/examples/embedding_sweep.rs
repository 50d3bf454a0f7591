//! Retrain embeddings and model for several POI embedding sizes.

use nextpoi::config::PipelineConfig;
use nextpoi::context::ContextStats;
use nextpoi::experiments::embedding_dim_sweep;
use nextpoi::synthetic::{corpus, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let mut cfg = PipelineConfig::small();
    cfg.train.max_epochs = 4;
    let split = corpus(&SyntheticConfig { users: 30, pois: 100, days: 25, ..Default::default() }, &cfg.corpus)?;
    let ctx = ContextStats::build(&split, &cfg.context)?;
    let dir = std::env::temp_dir().join("nextpoi-example-sweep");
    for row in embedding_dim_sweep(&[8, 16, 32, 64], &split, &ctx, &cfg, "synthetic", Some(&dir))? {
        println!("D_l {:>3}: Rec@5 {:.4} NDCG@5 {:.4}", row.dim, row.report.recall_at(5), row.report.ndcg_at(5));
    }
    println!("table and plot in {}", dir.display());
    Ok(())
}
