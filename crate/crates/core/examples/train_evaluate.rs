//! Train the full model on a synthetic corpus, evaluate it, and check that
//! a saved checkpoint scores identically.

use nextpoi::config::PipelineConfig;
use nextpoi::context::ContextStats;
use nextpoi::embedding::FrozenEmbeddings;
use nextpoi::metrics::evaluate;
use nextpoi::model::ModelState;
use nextpoi::synthetic::{corpus, SyntheticConfig};
use nextpoi::train::train;

fn main() -> nextpoi::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cfg = PipelineConfig::small();
    let split = corpus(&SyntheticConfig { users: 40, pois: 120, days: 30, ..Default::default() }, &cfg.corpus)?;
    let ctx = ContextStats::build(&split, &cfg.context)?;
    let frozen = FrozenEmbeddings::build(&ctx, &cfg.embedding)?;

    let dir = std::env::temp_dir().join("nextpoi-example-run");
    let out = train(&split, &ctx, frozen, &cfg, Some(&dir))?;
    println!("best epoch {} of {} ({:?})", out.best_epoch, out.history.len(), out.stop);
    for r in &out.history {
        println!("  epoch {:>2} train {:.4} test {:.4}", r.epoch, r.train_loss, r.test_loss.unwrap_or(f64::NAN));
    }

    let report = evaluate(&out.state, &split, &ctx, &cfg.eval)?;
    println!("test: {}", report.summary());

    let loaded = ModelState::load(&dir.join("checkpoints/best"))?;
    assert_eq!(evaluate(&loaded, &split, &ctx, &cfg.eval)?.recall, report.recall);
    println!("checkpoint in {} reproduces the metrics", dir.display());
    Ok(())
}
