//! node2vec embeddings of the POI transition graph; POIs of the same
//! spatial cluster should end up closer than POIs of different clusters.

use nextpoi::config::{ContextConfig, CorpusConfig, EmbeddingConfig};
use nextpoi::context::{cosine, ContextStats};
use nextpoi::embedding::{train_graph_embedding, GraphEmbeddingConfig};
use nextpoi::synthetic::{corpus, SyntheticConfig};

fn main() -> nextpoi::Result<()> {
    let syn = SyntheticConfig::default();
    let split = corpus(&syn, &CorpusConfig::default())?;
    let ctx = ContextStats::build(&split, &ContextConfig::default())?;
    let cfg = GraphEmbeddingConfig::from_config(&EmbeddingConfig::default(), 32);
    let emb = train_graph_embedding(&ctx.poi_graph, &cfg, 42)?;
    println!("{} POIs embedded in {} dimensions", emb.nrows(), emb.ncols());

    // Synthetic POI ids are "v<k>" and k % clusters is the cluster.
    let cluster: Vec<usize> = split
        .vocab
        .pois
        .iter()
        .map(|p| p.id[1..].parse::<usize>().unwrap() % syn.clusters)
        .collect();
    let (mut same, mut ns, mut diff, mut nd) = (0.0, 0, 0.0, 0);
    for i in 0..emb.nrows() {
        for j in i + 1..emb.nrows() {
            let c = cosine(emb.row(i).as_slice().unwrap(), emb.row(j).as_slice().unwrap());
            if cluster[i] == cluster[j] {
                same += c;
                ns += 1;
            } else {
                diff += c;
                nd += 1;
            }
        }
    }
    println!("mean cosine within clusters {:.3}", same / ns as f64);
    println!("mean cosine across clusters {:.3}", diff / nd as f64);

    let q = 0;
    let mut near: Vec<(usize, f64)> = (0..emb.nrows())
        .filter(|&j| j != q)
        .map(|j| (j, cosine(emb.row(q).as_slice().unwrap(), emb.row(j).as_slice().unwrap())))
        .collect();
    near.sort_by(|a, b| b.1.total_cmp(&a.1));
    println!("\nnearest to POI {q} (cluster {}):", cluster[q]);
    for (j, c) in near.iter().take(5) {
        println!("  POI {j:>3} cluster {} cosine {c:.3}", cluster[*j]);
    }
    Ok(())
}
