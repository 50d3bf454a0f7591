//! Context statistics built from training trajectories: transition graphs,
//! distances, time-slot correlation, category transitions and friends.

use nextpoi::config::{ContextConfig, CorpusConfig};
use nextpoi::context::ContextStats;
use nextpoi::synthetic::{corpus, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let split = corpus(&SyntheticConfig::default(), &CorpusConfig::default())?;
    let ctx = ContextStats::build(&split, &ContextConfig::default())?;

    println!("POI graph: {} nodes, {} edges", ctx.poi_graph.num_nodes(), ctx.poi_graph.edges().count());
    let (lo, hi) = ctx.distance.bounds_km();
    println!("distance range {lo:.3} .. {hi:.3} km");
    let (lo, hi) = ctx.interval.bounds_hours();
    println!("interval range {lo:.2} .. {hi:.2} h");

    println!("\ntime-slot correlation (weekday 9h vs others)");
    for s in [8u8, 10, 18, 33] {
        println!("  tau[9][{s:>2}] = {:.3}", ctx.time_corr.get(9, s));
    }

    let c0 = ctx.category.probs.row(0);
    let best = c0.iter().enumerate().max_by(|a, b| a.1.total_cmp(b.1)).unwrap();
    println!("\nmost likely category after 0: {} (p = {:.3})", best.0, best.1);

    for u in 0..3 {
        let f = ctx.social.friend[u] as usize;
        println!("user {u}: friend {f}, similarity {:.3}", ctx.social.similarity(u, f));
    }

    let t = &split.train[0][0].checkins;
    let (a, b) = (&t[0], &t[1]);
    let feats = ctx.transition_features((a.poi, a.category), (b.poi, b.category));
    println!("\ntransition {} -> {}: sigma(d) {:.3}, sigma(t) {:.3}, 1-sigma(c) {:.3}", a.poi, b.poi, feats[0], feats[1], feats[2]);
    Ok(())
}
