use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{CategoryInfo, CorpusSplit, CorpusStats, PoiInfo, Trajectory, Vocab};
use crate::config::{config_hash, CorpusConfig};
use crate::error::{Error, Result};

pub const CORPUS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CorpusMeta {
    pub format_version: u32,
    pub stats: CorpusStats,
    pub config_hash: String,
    pub config: CorpusConfig,
    pub skipped_rows: usize,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(
        File::create(path).map_err(|e| Error::io(path, e))?,
    ))
}

fn write_err(path: &Path) -> impl Fn(std::io::Error) -> Error + '_ {
    move |e| Error::io(path, e)
}

/// Writes the versioned corpus directory.
pub fn save_corpus(
    split: &CorpusSplit,
    dir: &Path,
    cfg: &CorpusConfig,
    skipped_rows: usize,
) -> Result<CorpusMeta> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let meta = CorpusMeta {
        format_version: CORPUS_FORMAT_VERSION,
        stats: split.stats,
        config_hash: config_hash(cfg),
        config: cfg.clone(),
        skipped_rows,
    };
    let p = dir.join("corpus.meta");
    fs::write(&p, serde_json::to_string_pretty(&meta)? + "\n").map_err(write_err(&p))?;

    let p = dir.join("vocab.users.tsv");
    let mut w = create(&p)?;
    for (i, u) in split.vocab.users.iter().enumerate() {
        writeln!(w, "{i}\t{u}").map_err(write_err(&p))?;
    }
    w.flush().map_err(write_err(&p))?;

    let p = dir.join("vocab.pois.tsv");
    let mut w = create(&p)?;
    for (i, poi) in split.vocab.pois.iter().enumerate() {
        writeln!(w, "{i}\t{}\t{}\t{}\t{}", poi.id, poi.lat, poi.lon, poi.category)
            .map_err(write_err(&p))?;
    }
    w.flush().map_err(write_err(&p))?;

    let p = dir.join("vocab.categories.tsv");
    let mut w = create(&p)?;
    for (i, c) in split.vocab.categories.iter().enumerate() {
        writeln!(w, "{i}\t{}\t{}", c.id, c.name).map_err(write_err(&p))?;
    }
    w.flush().map_err(write_err(&p))?;

    for (name, part) in [("train.jsonl", &split.train), ("test.jsonl", &split.test)] {
        let p = dir.join(name);
        let mut w = create(&p)?;
        for t in part.iter().flatten() {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n").map_err(write_err(&p))?;
        }
        w.flush().map_err(write_err(&p))?;
    }
    Ok(meta)
}

fn read_tsv(path: &Path, min_cols: usize) -> Result<Vec<Vec<String>>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.is_empty() {
            continue;
        }
        let cols: Vec<String> = line.split('\t').map(str::to_string).collect();
        if cols.len() < min_cols || cols[0] != i.to_string() {
            return Err(Error::data(format!(
                "{}: bad row {}",
                path.display(),
                i + 1
            )));
        }
        rows.push(cols);
    }
    Ok(rows)
}

fn parse<T: std::str::FromStr>(s: &str, path: &Path) -> Result<T> {
    s.parse()
        .map_err(|_| Error::data(format!("{}: cannot parse {s:?}", path.display())))
}

/// Reads a corpus directory written by [`save_corpus`].
pub fn load_corpus(dir: &Path) -> Result<(CorpusSplit, CorpusMeta)> {
    let p = dir.join("corpus.meta");
    let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
    let meta: CorpusMeta = serde_json::from_str(&text)?;
    if meta.format_version != CORPUS_FORMAT_VERSION {
        return Err(Error::data(format!(
            "corpus format {} unsupported (expected {CORPUS_FORMAT_VERSION})",
            meta.format_version
        )));
    }

    let p = dir.join("vocab.users.tsv");
    let users: Vec<String> = read_tsv(&p, 2)?.into_iter().map(|r| r[1].clone()).collect();
    let p = dir.join("vocab.pois.tsv");
    let pois = read_tsv(&p, 5)?
        .into_iter()
        .map(|r| {
            Ok(PoiInfo {
                id: r[1].clone(),
                lat: parse(&r[2], &p)?,
                lon: parse(&r[3], &p)?,
                category: parse(&r[4], &p)?,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    let p = dir.join("vocab.categories.tsv");
    let categories = read_tsv(&p, 2)?
        .into_iter()
        .map(|r| CategoryInfo {
            id: r[1].clone(),
            name: r.get(2).cloned().unwrap_or_default(),
        })
        .collect();

    let n_users = users.len();
    let mut parts = [vec![Vec::new(); n_users], vec![Vec::new(); n_users]];
    for (slot, name) in ["train.jsonl", "test.jsonl"].iter().enumerate() {
        let p = dir.join(name);
        let f = File::open(&p).map_err(|e| Error::io(&p, e))?;
        for line in BufReader::new(f).lines() {
            let line = line.map_err(|e| Error::io(&p, e))?;
            if line.is_empty() {
                continue;
            }
            let t: Trajectory = serde_json::from_str(&line)?;
            let u = t.user as usize;
            if u >= n_users {
                return Err(Error::data(format!("{name}: user {u} out of range")));
            }
            parts[slot][u].push(t);
        }
    }
    let [train, test] = parts;
    let split = CorpusSplit {
        train,
        test,
        vocab: Vocab {
            users,
            pois,
            categories,
        },
        stats: meta.stats,
    };
    Ok((split, meta))
}
