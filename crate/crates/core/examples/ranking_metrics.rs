//! Recall@K and NDCG@K for a single prediction and aggregated over users.

use nextpoi::config::Aggregation;
use nextpoi::metrics::{ndcg_at_k, rank_of, ranking, recall_at_k, MetricAccumulator};

fn main() {
    let scores = [0.10, 0.40, 0.05, 0.40, 0.30, 0.02];
    let ranked = ranking(&scores);
    println!("ranking {ranked:?} (ties go to the lower index)");
    for target in [1, 3, 4, 5] {
        print!("target {target}: rank {}", rank_of(&scores, target));
        for k in [1, 5] {
            print!("  Rec@{k} {} NDCG@{k} {:.4}", recall_at_k(&ranked, target, k), ndcg_at_k(&ranked, target, k));
        }
        println!();
    }

    // User 0 predicts three times, user 1 once.
    let mut acc = MetricAccumulator::new(&[1, 5]);
    for (user, rank) in [(0, 1), (0, 1), (0, 4), (1, 7)] {
        acc.add(user, rank);
    }
    for agg in [Aggregation::PerPrediction, Aggregation::PerUser] {
        let (r, n) = acc.finish(agg);
        println!("{agg:?}: Rec@1 {:.3} Rec@5 {:.3} NDCG@5 {:.3}", r[&1], r[&5], n[&5]);
    }
}
