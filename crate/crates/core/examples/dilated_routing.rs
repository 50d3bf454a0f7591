//! How the dilated short-term pass picks each step's predecessor from the
//! distance, interval and category-transition costs.

use nextpoi::config::{ContextConfig, CorpusConfig};
use nextpoi::context::ContextStats;
use nextpoi::short_term::{candidate_features, plan_dilation, DilatedPlan};
use nextpoi::synthetic::{corpus, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let split = corpus(&SyntheticConfig::default(), &CorpusConfig::default())?;
    let ctx = ContextStats::build(&split, &ContextConfig::default())?;
    let traj = split
        .train_trajectories()
        .max_by_key(|t| t.checkins.len())
        .unwrap();
    let prefix = &traj.checkins;
    let kappa_max = 3;
    let third = 1.0 / 3.0;

    println!("trajectory of user {} with {} check-ins", traj.user, prefix.len());
    let feats = candidate_features(prefix, &ctx, kappa_max);
    for (j, cands) in feats.iter().enumerate().skip(1) {
        let costs: Vec<String> = cands
            .iter()
            .map(|f| format!("{:.3}", third * (f[0] + f[1] + f[2])))
            .collect();
        println!("  step {j}: cost by skip 1..={}: [{}]", cands.len(), costs.join(", "));
    }

    let plan = plan_dilation(prefix, &ctx, [third; 3], kappa_max);
    println!("chosen skips {:?}", plan.offsets);
    let no_cat = DilatedPlan::from_features(&feats, [third, third, 0.0]);
    println!("without the category term {:?}", no_cat.offsets);
    println!("kappa_max = 1 gives a plain chain: {}", plan_dilation(prefix, &ctx, [third; 3], 1).is_chain());
    Ok(())
}
