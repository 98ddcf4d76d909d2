//! Interaction-log ingestion: parsing, sequence construction, and the
//! co-interaction user graph that serves as the discrete base manifold.

use std::collections::{HashMap, HashSet};
use std::fs::File;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A single raw interaction event.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionRecord {
    pub user_raw_id: String,
    pub item_raw_id: String,
    pub rating: Option<f64>,
    pub timestamp: i64,
}

/// Input file format for [`parse_interactions`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LogFormat {
    /// `user<TAB>item<TAB>rating<TAB>timestamp`, no header.
    MovielensTab,
    /// Comma-separated with a header naming at least `user,item,timestamp`.
    GenericCsv,
}

impl std::str::FromStr for LogFormat {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens_tab" => Ok(LogFormat::MovielensTab),
            "generic_csv" => Ok(LogFormat::GenericCsv),
            other => Err(Error::Usage(format!("unknown format '{other}'"))),
        }
    }
}

/// Id-mapped dataset with per-user time-ordered item sequences.
#[derive(Debug, Clone, PartialEq)]
pub struct InteractionDataset {
    pub n_users: usize,
    pub n_items: usize,
    /// raw user id -> dense index, plus the reverse table.
    pub user_ids: IdMap,
    pub item_ids: IdMap,
    /// Per user: (item index, timestamp), sorted non-decreasing by timestamp,
    /// ties in input-file order.
    pub sequences: Vec<Vec<(usize, i64)>>,
}

/// Bijection between raw string ids and dense indices, in first-appearance order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct IdMap {
    pub to_index: HashMap<String, usize>,
    pub to_raw: Vec<String>,
}

impl IdMap {
    fn intern(&mut self, raw: &str) -> usize {
        if let Some(&i) = self.to_index.get(raw) {
            return i;
        }
        let i = self.to_raw.len();
        self.to_index.insert(raw.to_string(), i);
        self.to_raw.push(raw.to_string());
        i
    }

    pub fn len(&self) -> usize {
        self.to_raw.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_raw.is_empty()
    }
}

/// kNN co-interaction graph: per-user `(neighbor index, Jaccard weight)`.
#[derive(Debug, Clone, PartialEq)]
pub struct UserGraph {
    pub neighbors: Vec<Vec<(usize, f64)>>,
}

fn validate_record(rec: &InteractionRecord, line: usize) -> Result<()> {
    if rec.user_raw_id.is_empty() {
        return Err(Error::Parse { line, msg: "empty user id".into() });
    }
    if rec.item_raw_id.is_empty() {
        return Err(Error::Parse { line, msg: "empty item id".into() });
    }
    if rec.timestamp < 0 {
        return Err(Error::Parse { line, msg: "negative timestamp".into() });
    }
    Ok(())
}

fn parse_movielens_tab(path: &Path) -> Result<Vec<InteractionRecord>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let mut records = Vec::new();
    for (idx, line) in BufReader::new(file).lines().enumerate() {
        let lineno = idx + 1;
        let line = line.map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').collect();
        if fields.len() != 4 {
            return Err(Error::Parse {
                line: lineno,
                msg: format!("expected 4 tab-separated fields, got {}", fields.len()),
            });
        }
        let rating: f64 = fields[2].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad rating '{}'", fields[2]),
        })?;
        let timestamp: i64 = fields[3].trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp '{}'", fields[3]),
        })?;
        let rec = InteractionRecord {
            user_raw_id: fields[0].trim().to_string(),
            item_raw_id: fields[1].trim().to_string(),
            rating: Some(rating),
            timestamp,
        };
        validate_record(&rec, lineno)?;
        records.push(rec);
    }
    Ok(records)
}

fn parse_generic_csv(path: &Path) -> Result<Vec<InteractionRecord>> {
    let file = File::open(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let mut reader = csv::ReaderBuilder::new().has_headers(true).from_reader(file);
    let headers = reader
        .headers()
        .map_err(|e| Error::Parse { line: 1, msg: e.to_string() })?
        .clone();
    let col = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::Parse { line: 1, msg: format!("missing required column '{name}'") })
    };
    let user_col = col("user")?;
    let item_col = col("item")?;
    let ts_col = col("timestamp")?;
    let rating_col = headers.iter().position(|h| h.trim() == "rating");

    let mut records = Vec::new();
    for (idx, row) in reader.records().enumerate() {
        let lineno = idx + 2; // header is line 1
        let row = row.map_err(|e| Error::Parse { line: lineno, msg: e.to_string() })?;
        let get = |c: usize| -> Result<&str> {
            row.get(c)
                .ok_or_else(|| Error::Parse { line: lineno, msg: format!("missing field {c}") })
        };
        let timestamp: i64 = get(ts_col)?.trim().parse().map_err(|_| Error::Parse {
            line: lineno,
            msg: format!("bad timestamp '{}'", get(ts_col).unwrap_or("")),
        })?;
        let rating = match rating_col {
            Some(c) => {
                let raw = get(c)?.trim();
                if raw.is_empty() {
                    None
                } else {
                    Some(raw.parse().map_err(|_| Error::Parse {
                        line: lineno,
                        msg: format!("bad rating '{raw}'"),
                    })?)
                }
            }
            None => None,
        };
        let rec = InteractionRecord {
            user_raw_id: get(user_col)?.trim().to_string(),
            item_raw_id: get(item_col)?.trim().to_string(),
            rating,
            timestamp,
        };
        validate_record(&rec, lineno)?;
        records.push(rec);
    }
    Ok(records)
}

/// Build an [`InteractionDataset`] from raw records, preserving input order
/// for timestamp ties and assigning dense indices in first-appearance order.
pub fn dataset_from_records(records: &[InteractionRecord]) -> Result<InteractionDataset> {
    if records.is_empty() {
        return Err(Error::Data("no interaction records".into()));
    }
    let mut user_ids = IdMap::default();
    let mut item_ids = IdMap::default();
    let mut sequences: Vec<Vec<(usize, i64)>> = Vec::new();
    for rec in records {
        let u = user_ids.intern(&rec.user_raw_id);
        let i = item_ids.intern(&rec.item_raw_id);
        if u == sequences.len() {
            sequences.push(Vec::new());
        }
        sequences[u].push((i, rec.timestamp));
    }
    for seq in &mut sequences {
        seq.sort_by_key(|&(_, ts)| ts); // stable: ties keep input order
    }
    Ok(InteractionDataset {
        n_users: user_ids.len(),
        n_items: item_ids.len(),
        user_ids,
        item_ids,
        sequences,
    })
}

/// Parse an interaction log into an id-mapped dataset.
pub fn parse_interactions(path: &Path, format: LogFormat) -> Result<InteractionDataset> {
    let records = match format {
        LogFormat::MovielensTab => parse_movielens_tab(path)?,
        LogFormat::GenericCsv => parse_generic_csv(path)?,
    };
    if records.is_empty() {
        return Err(Error::Data(format!("empty interaction file: {}", path.display())));
    }
    dataset_from_records(&records)
}

/// Write a dataset back out as `generic_csv` (user,item,timestamp,rating).
/// Re-parsing the output yields an identical dataset.
pub fn write_generic_csv(ds: &InteractionDataset, path: &Path) -> Result<()> {
    let mut file = File::create(path).map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    let mut out = String::from("user,item,timestamp\n");
    for (u, seq) in ds.sequences.iter().enumerate() {
        for &(item, ts) in seq {
            out.push_str(&format!(
                "{},{},{}\n",
                ds.user_ids.to_raw[u], ds.item_ids.to_raw[item], ts
            ));
        }
    }
    file.write_all(out.as_bytes())
        .map_err(|e| Error::Io { path: path.display().to_string(), source: e })?;
    Ok(())
}

/// Drop users with fewer than `min_len` interactions and re-densify user
/// indices. The item space is left unchanged. Idempotent.
pub fn filter_min_length(ds: &InteractionDataset, min_len: usize) -> Result<InteractionDataset> {
    if min_len < 1 {
        return Err(Error::Usage("min_len must be >= 1".into()));
    }
    let mut user_ids = IdMap::default();
    let mut sequences = Vec::new();
    for (u, seq) in ds.sequences.iter().enumerate() {
        if seq.len() >= min_len {
            user_ids.intern(&ds.user_ids.to_raw[u]);
            sequences.push(seq.clone());
        }
    }
    if sequences.is_empty() {
        return Err(Error::Data(format!(
            "filter_min_length({min_len}) removed every user"
        )));
    }
    Ok(InteractionDataset {
        n_users: user_ids.len(),
        n_items: ds.n_items,
        user_ids,
        item_ids: ds.item_ids.clone(),
        sequences,
    })
}

/// kNN graph under Jaccard similarity of item sets.
///
/// Each user gets the up-to-`k` most similar other users among pairs sharing
/// at least `min_common` distinct items; ties break toward the lower user
/// index. Edges are directed (symmetry is not forced).
pub fn build_user_graph(ds: &InteractionDataset, k: usize, min_common: usize) -> Result<UserGraph> {
    if k < 1 {
        return Err(Error::Usage("k must be >= 1".into()));
    }
    if min_common < 1 {
        return Err(Error::Usage("min_common must be >= 1".into()));
    }
    let item_sets: Vec<HashSet<usize>> = ds
        .sequences
        .iter()
        .map(|seq| seq.iter().map(|&(i, _)| i).collect())
        .collect();
    let mut neighbors = Vec::with_capacity(ds.n_users);
    for u in 0..ds.n_users {
        let mut cands: Vec<(usize, f64)> = Vec::new();
        for v in 0..ds.n_users {
            if v == u {
                continue;
            }
            let common = item_sets[u].intersection(&item_sets[v]).count();
            if common < min_common {
                continue;
            }
            let union = item_sets[u].len() + item_sets[v].len() - common;
            if union == 0 {
                continue;
            }
            cands.push((v, common as f64 / union as f64));
        }
        // highest similarity first, ties toward lower index
        cands.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap().then(a.0.cmp(&b.0)));
        cands.truncate(k);
        neighbors.push(cands);
    }
    Ok(UserGraph { neighbors })
}
