//! Train the full model and a few ablations on the same data and compare.

use nextpoi::config::PipelineConfig;
use nextpoi::context::ContextStats;
use nextpoi::embedding::FrozenEmbeddings;
use nextpoi::experiments::run_ablation;
use nextpoi::synthetic::{corpus, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let cfg = PipelineConfig::small();
    let split = corpus(&SyntheticConfig { users: 40, pois: 120, days: 30, ..Default::default() }, &cfg.corpus)?;
    let ctx = ContextStats::build(&split, &cfg.context)?;
    let frozen = FrozenEmbeddings::build(&ctx, &cfg.embedding)?;

    println!("{:<26} {:>7} {:>7} {:>8}", "variant", "Rec@1", "Rec@5", "NDCG@5");
    for variant in ["full", "w/o Short", "w/o Long", "w/o Short&Social", "w/o Long&STC-dilated", "lstm-baseline"] {
        let r = run_ablation(variant, &split, &ctx, frozen.clone(), &cfg, "synthetic", None)?;
        println!("{variant:<26} {:>7.4} {:>7.4} {:>8.4}", r.recall_at(1), r.recall_at(5), r.ndcg_at(5));
    }
    Ok(())
}
