//! Canonical data types, seed ingestion, split assignment and the dataset
//! manifest.
//!
//! Seed directories hold two line-delimited JSON files:
//!
//! - `tables.jsonl`: `{"id": "t1", "headers": ["rank", "athlete"], "rows": [["1", "usain bolt"], ...]}`
//! - `claims.jsonl`: `{"id": "c1", "table_id": "t1", "text": "...", "label": "supports"}`
//!
//! A claim record may also carry `"reasoning_types": ["retrieve value", ...]`.
//!
//! The manifest is line-delimited JSON as well. Its first line is a header
//! record `{"schema_version": N}`, followed by one record per sample.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Component, Path};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Manifest schema version written by this crate.
pub const SCHEMA_VERSION: u32 = 1;

pub const TABLES_FILE: &str = "tables.jsonl";
pub const CLAIMS_FILE: &str = "claims.jsonl";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("malformed seed ({file}:{line}): {reason}")]
    MalformedSeed {
        file: String,
        line: usize,
        reason: String,
    },
    #[error("i/o failure on {path}: {source}")]
    IoFailure {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest schema mismatch: {0}")]
    SchemaVersionMismatch(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DataError + '_ {
    move |source| DataError::IoFailure {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Supports,
    Refutes,
}

impl Label {
    /// Binary target used by the classifiers (Supports = 1).
    pub fn target(self) -> f64 {
        match self {
            Label::Supports => 1.0,
            Label::Refutes => 0.0,
        }
    }

    pub fn from_target(is_supports: bool) -> Self {
        if is_supports {
            Label::Supports
        } else {
            Label::Refutes
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Label::Supports => "supports",
            Label::Refutes => "refutes",
        }
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    /// Label tokens are matched case-insensitively.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "supports" => Ok(Label::Supports),
            "refutes" => Ok(Label::Refutes),
            other => Err(format!("unknown label token {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Valid, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "train" => Ok(Split::Train),
            "valid" => Ok(Split::Valid),
            "test" => Ok(Split::Test),
            other => Err(format!("unknown split token {other:?}")),
        }
    }
}

/// The seven chart reasoning types used for error analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ReasoningType {
    RetrieveValue,
    Filter,
    ComputeDerivedValue,
    FindExtremum,
    DetermineRange,
    FindAnomalies,
    Compare,
}

impl ReasoningType {
    pub const ALL: [ReasoningType; 7] = [
        ReasoningType::RetrieveValue,
        ReasoningType::Filter,
        ReasoningType::ComputeDerivedValue,
        ReasoningType::FindExtremum,
        ReasoningType::DetermineRange,
        ReasoningType::FindAnomalies,
        ReasoningType::Compare,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ReasoningType::RetrieveValue => "retrieve value",
            ReasoningType::Filter => "filter",
            ReasoningType::ComputeDerivedValue => "compute derived value",
            ReasoningType::FindExtremum => "find extremum",
            ReasoningType::DetermineRange => "determine range",
            ReasoningType::FindAnomalies => "find anomalies",
            ReasoningType::Compare => "compare",
        }
    }
}

impl fmt::Display for ReasoningType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for ReasoningType {
    type Err = String;

    /// Accepts "retrieve value", "retrieve_value", "RetrieveValue", "comparison" etc.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let key: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .map(|c| c.to_ascii_lowercase())
            .collect();
        let ty = match key.as_str() {
            "retrievevalue" | "retrieval" | "retrieve" => ReasoningType::RetrieveValue,
            "filter" | "filtering" => ReasoningType::Filter,
            "computederivedvalue" | "computederivedvalues" => ReasoningType::ComputeDerivedValue,
            "findextremum" | "extremum" => ReasoningType::FindExtremum,
            "determinerange" | "range" => ReasoningType::DetermineRange,
            "findanomalies" | "anomalies" => ReasoningType::FindAnomalies,
            "compare" | "comparison" => ReasoningType::Compare,
            _ => return Err(format!("unknown reasoning type {s:?}")),
        };
        Ok(ty)
    }
}

/// A seed evidence table. Rows are rectangular with respect to `headers`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    pub id: String,
    pub headers: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(id: impl Into<String>, headers: Vec<String>, rows: Vec<Vec<String>>) -> Result<Self, String> {
        let table = Table {
            id: id.into(),
            headers,
            rows,
        };
        table.validate()?;
        Ok(table)
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.headers.is_empty() {
            return Err(format!("table {} has no headers", self.id));
        }
        if let Some(i) = self.headers.iter().position(|h| h.trim().is_empty()) {
            return Err(format!("table {} has an empty header at column {i}", self.id));
        }
        for (r, row) in self.rows.iter().enumerate() {
            if row.len() != self.headers.len() {
                return Err(format!(
                    "table {} row {r} has {} cells, expected {}",
                    self.id,
                    row.len(),
                    self.headers.len()
                ));
            }
        }
        Ok(())
    }

    pub fn column(&self, index: usize) -> impl Iterator<Item = &str> {
        self.rows.iter().map(move |r| r[index].as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Claim {
    pub id: String,
    pub text: String,
    pub label: Label,
}

/// One dataset entry: a claim, its chart artifact and its split.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub claim: Claim,
    pub subtable_ref: String,
    pub image_path: String,
    pub sidecar_path: String,
    pub split: Split,
    pub reasoning_types: Option<BTreeSet<ReasoningType>>,
}

impl Sample {
    pub fn id(&self) -> &str {
        &self.claim.id
    }

    pub fn label(&self) -> Label {
        self.claim.label
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct TableRecord {
    id: String,
    headers: Vec<String>,
    rows: Vec<Vec<String>>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ClaimRecord {
    id: String,
    table_id: String,
    text: String,
    label: String,
    #[serde(default)]
    reasoning_types: Vec<String>,
}

/// A claim as read from a seed directory, with its table foreign key.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SeedClaim {
    pub claim: Claim,
    pub table_id: String,
    pub reasoning_types: Option<BTreeSet<ReasoningType>>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Seed {
    pub tables: Vec<Table>,
    pub claims: Vec<SeedClaim>,
}

impl Seed {
    pub fn table(&self, id: &str) -> Option<&Table> {
        self.tables.iter().find(|t| t.id == id)
    }
}

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, DataError> {
    let file = fs::File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        out.push((i + 1, line));
    }
    Ok(out)
}

/// Reads `tables.jsonl` and `claims.jsonl` from a seed directory.
pub fn load_seed(dir: &Path) -> Result<Seed, DataError> {
    let tables_path = dir.join(TABLES_FILE);
    let claims_path = dir.join(CLAIMS_FILE);
    let malformed = |file: &Path, line: usize, reason: String| DataError::MalformedSeed {
        file: file.display().to_string(),
        line,
        reason,
    };

    let mut tables = Vec::new();
    let mut ids = HashSet::new();
    for (line, text) in read_lines(&tables_path)? {
        let rec: TableRecord =
            serde_json::from_str(&text).map_err(|e| malformed(&tables_path, line, e.to_string()))?;
        let table = Table::new(rec.id, rec.headers, rec.rows).map_err(|e| malformed(&tables_path, line, e))?;
        if !ids.insert(table.id.clone()) {
            return Err(malformed(&tables_path, line, format!("duplicate table id {}", table.id)));
        }
        tables.push(table);
    }

    let mut claims = Vec::new();
    let mut claim_ids = HashSet::new();
    for (line, text) in read_lines(&claims_path)? {
        let rec: ClaimRecord =
            serde_json::from_str(&text).map_err(|e| malformed(&claims_path, line, e.to_string()))?;
        if !ids.contains(&rec.table_id) {
            return Err(malformed(
                &claims_path,
                line,
                format!("claim {} references unknown table id {}", rec.id, rec.table_id),
            ));
        }
        if !claim_ids.insert(rec.id.clone()) {
            return Err(malformed(&claims_path, line, format!("duplicate claim id {}", rec.id)));
        }
        if rec.text.trim().is_empty() {
            return Err(malformed(&claims_path, line, format!("claim {} has empty text", rec.id)));
        }
        let label: Label = rec.label.parse().map_err(|e| malformed(&claims_path, line, e))?;
        let reasoning_types = if rec.reasoning_types.is_empty() {
            None
        } else {
            let set = rec
                .reasoning_types
                .iter()
                .map(|t| t.parse::<ReasoningType>())
                .collect::<Result<BTreeSet<_>, _>>()
                .map_err(|e| malformed(&claims_path, line, e))?;
            Some(set)
        };
        claims.push(SeedClaim {
            claim: Claim {
                id: rec.id,
                text: rec.text,
                label,
            },
            table_id: rec.table_id,
            reasoning_types,
        });
    }
    Ok(Seed { tables, claims })
}

/// Writes a seed directory in the format read by [`load_seed`].
pub fn write_seed(seed: &Seed, dir: &Path) -> Result<(), DataError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let tables_path = dir.join(TABLES_FILE);
    let mut w = BufWriter::new(fs::File::create(&tables_path).map_err(io_err(&tables_path))?);
    for t in &seed.tables {
        let rec = serde_json::json!({"id": t.id, "headers": t.headers, "rows": t.rows});
        writeln!(w, "{rec}").map_err(io_err(&tables_path))?;
    }
    w.flush().map_err(io_err(&tables_path))?;

    let claims_path = dir.join(CLAIMS_FILE);
    let mut w = BufWriter::new(fs::File::create(&claims_path).map_err(io_err(&claims_path))?);
    for c in &seed.claims {
        let mut rec = serde_json::json!({
            "id": c.claim.id,
            "table_id": c.table_id,
            "text": c.claim.text,
            "label": c.claim.label.as_str(),
        });
        if let Some(types) = &c.reasoning_types {
            rec["reasoning_types"] = types.iter().map(|t| t.name()).collect::<Vec<_>>().into();
        }
        writeln!(w, "{rec}").map_err(io_err(&claims_path))?;
    }
    w.flush().map_err(io_err(&claims_path))?;
    Ok(())
}

/// Deterministic two-class interleaving: position `t` (1-based) of the merged
/// sequence holds `round(t * n_a / n)` members of class A, so every contiguous
/// window of length `b` holds `b * n_a / n` of them within ±1.
pub(crate) fn proportional_interleave<T>(a: Vec<T>, b: Vec<T>) -> Vec<T> {
    let n_a = a.len();
    let n = n_a + b.len();
    let mut ia = a.into_iter();
    let mut ib = b.into_iter();
    let mut out = Vec::with_capacity(n);
    let mut taken_a = 0usize;
    for t in 1..=n {
        // floor(t * n_a / n + 1/2) in integer arithmetic
        let want_a = (2 * t * n_a + n) / (2 * n);
        if want_a > taken_a {
            taken_a += 1;
            out.push(ia.next().expect("class A exhausted"));
        } else {
            out.push(ib.next().expect("class B exhausted"));
        }
    }
    out
}

/// Largest-remainder apportionment of `n` items over `weights`; ties go to the
/// lower index.
pub(crate) fn apportion(n: usize, weights: &[u32]) -> Vec<usize> {
    let total: u64 = weights.iter().map(|&w| w as u64).sum();
    assert!(total > 0, "weights must not all be zero");
    let mut sizes: Vec<usize> = weights
        .iter()
        .map(|&w| (n as u64 * w as u64 / total) as usize)
        .collect();
    let mut rem: Vec<(u64, usize)> = weights
        .iter()
        .enumerate()
        .map(|(i, &w)| ((n as u64 * w as u64) % total, i))
        .collect();
    rem.sort_by(|x, y| y.0.cmp(&x.0).then(x.1.cmp(&y.1)));
    let assigned: usize = sizes.iter().sum();
    for &(_, i) in rem.iter().take(n - assigned) {
        sizes[i] += 1;
    }
    sizes
}

/// Split ratio, e.g. `(8, 1, 1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitRatio(pub u32, pub u32, pub u32);

impl Default for SplitRatio {
    fn default() -> Self {
        SplitRatio(8, 1, 1)
    }
}

/// Assigns every sample to exactly one split.
///
/// Split sizes are the largest-remainder apportionment of the ratio. In
/// stratified mode the samples of each label are shuffled independently and
/// interleaved proportionally before the cut, so every split keeps the global
/// class ratio to within one sample per class.
pub fn assign_splits(mut samples: Vec<Sample>, ratio: SplitRatio, seed: u64, stratified: bool) -> Vec<Sample> {
    if samples.is_empty() {
        return samples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let order: Vec<usize> = if stratified {
        let (mut sup, mut refu): (Vec<usize>, Vec<usize>) =
            (0..samples.len()).partition(|&i| samples[i].label() == Label::Supports);
        sup.shuffle(&mut rng);
        refu.shuffle(&mut rng);
        proportional_interleave(sup, refu)
    } else {
        let mut idx: Vec<usize> = (0..samples.len()).collect();
        idx.shuffle(&mut rng);
        idx
    };
    let sizes = apportion(samples.len(), &[ratio.0, ratio.1, ratio.2]);
    let mut cursor = 0;
    for (split, size) in Split::ALL.into_iter().zip(sizes) {
        for &i in &order[cursor..cursor + size] {
            samples[i].split = split;
        }
        cursor += size;
    }
    samples
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestHeader {
    schema_version: u32,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ManifestRecord {
    id: String,
    claim: String,
    label: String,
    subtable_ref: String,
    image_path: String,
    sidecar_path: String,
    split: String,
    reasoning_types: Vec<String>,
}

fn check_relative(path: &str) -> Result<(), DataError> {
    let p = Path::new(path);
    let inside = !path.is_empty()
        && p.components()
            .all(|c| matches!(c, Component::Normal(_) | Component::CurDir));
    if inside {
        Ok(())
    } else {
        Err(DataError::SchemaVersionMismatch(format!(
            "path {path:?} does not resolve inside the dataset root"
        )))
    }
}

pub fn write_manifest(samples: &[Sample], path: &Path) -> Result<(), DataError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    let mut w = BufWriter::new(fs::File::create(path).map_err(io_err(path))?);
    let header = serde_json::to_string(&ManifestHeader {
        schema_version: SCHEMA_VERSION,
    })
    .expect("header serializes");
    writeln!(w, "{header}").map_err(io_err(path))?;
    for s in samples {
        let rec = ManifestRecord {
            id: s.claim.id.clone(),
            claim: s.claim.text.clone(),
            label: s.claim.label.as_str().to_string(),
            subtable_ref: s.subtable_ref.clone(),
            image_path: s.image_path.clone(),
            sidecar_path: s.sidecar_path.clone(),
            split: s.split.as_str().to_string(),
            reasoning_types: s
                .reasoning_types
                .iter()
                .flatten()
                .map(|t| t.name().to_string())
                .collect(),
        };
        let line = serde_json::to_string(&rec).expect("record serializes");
        writeln!(w, "{line}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_manifest(path: &Path) -> Result<Vec<Sample>, DataError> {
    let lines = read_lines(path)?;
    let mismatch = |line: usize, what: String| DataError::SchemaVersionMismatch(format!("line {line}: {what}"));
    let mut iter = lines.into_iter();
    let (line, first) = iter
        .next()
        .ok_or_else(|| DataError::SchemaVersionMismatch("missing header record".into()))?;
    let header: ManifestHeader = serde_json::from_str(&first).map_err(|e| mismatch(line, e.to_string()))?;
    if header.schema_version != SCHEMA_VERSION {
        return Err(mismatch(
            line,
            format!("schema version {} (expected {SCHEMA_VERSION})", header.schema_version),
        ));
    }
    let mut out = Vec::new();
    for (line, text) in iter {
        let rec: ManifestRecord = serde_json::from_str(&text).map_err(|e| mismatch(line, e.to_string()))?;
        let label: Label = rec.label.parse().map_err(|e| mismatch(line, e))?;
        let split: Split = rec.split.parse().map_err(|e| mismatch(line, e))?;
        check_relative(&rec.image_path)?;
        check_relative(&rec.sidecar_path)?;
        let reasoning_types = if rec.reasoning_types.is_empty() {
            None
        } else {
            Some(
                rec.reasoning_types
                    .iter()
                    .map(|t| t.parse::<ReasoningType>())
                    .collect::<Result<BTreeSet<_>, _>>()
                    .map_err(|e| mismatch(line, e))?,
            )
        };
        out.push(Sample {
            claim: Claim {
                id: rec.id,
                text: rec.claim,
                label,
            },
            subtable_ref: rec.subtable_ref,
            image_path: rec.image_path,
            sidecar_path: rec.sidecar_path,
            split,
            reasoning_types,
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample(i: usize, label: Label) -> Sample {
        Sample {
            claim: Claim {
                id: format!("s{i}"),
                text: format!("claim {i}"),
                label,
            },
            subtable_ref: format!("t{i}#0,1"),
            image_path: format!("charts/s{i}.png"),
            sidecar_path: format!("charts/s{i}.json"),
            split: Split::Train,
            reasoning_types: None,
        }
    }

    fn write_seed_files(dir: &Path, tables: &str, claims: &str) {
        fs::write(dir.join(TABLES_FILE), tables).unwrap();
        fs::write(dir.join(CLAIMS_FILE), claims).unwrap();
    }

    #[test]
    fn load_seed_counts() {
        let dir = tempfile::tempdir().unwrap();
        write_seed_files(
            dir.path(),
            r#"{"id":"t1","headers":["rank","athlete"],"rows":[["1","usain bolt"],["2","andy stanfield"]]}"#,
            "{\"id\":\"c1\",\"table_id\":\"t1\",\"text\":\"usain bolt was ranked 1\",\"label\":\"supports\"}\n\
             {\"id\":\"c2\",\"table_id\":\"t1\",\"text\":\"andy stanfield was ranked 1\",\"label\":\"refutes\"}\n",
        );
        let seed = load_seed(dir.path()).unwrap();
        assert_eq!(seed.tables.len(), 1);
        assert_eq!(seed.claims.len(), 2);
        assert!(seed.claims.iter().all(|c| c.table_id == "t1"));
    }

    #[test]
    fn unknown_table_id_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        write_seed_files(
            dir.path(),
            r#"{"id":"t1","headers":["a"],"rows":[["x"]]}"#,
            r#"{"id":"c1","table_id":"t9","text":"x","label":"supports"}"#,
        );
        assert!(matches!(load_seed(dir.path()), Err(DataError::MalformedSeed { .. })));
    }

    #[test]
    fn ragged_row_is_malformed() {
        let dir = tempfile::tempdir().unwrap();
        write_seed_files(dir.path(), r#"{"id":"t1","headers":["a","b"],"rows":[["x"]]}"#, "");
        assert!(matches!(load_seed(dir.path()), Err(DataError::MalformedSeed { .. })));
    }

    #[test]
    fn label_token_case_folds_and_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        write_seed_files(
            dir.path(),
            r#"{"id":"t1","headers":["a"],"rows":[["x"]]}"#,
            "{\"id\":\"c1\",\"table_id\":\"t1\",\"text\":\"x\",\"label\":\"SUPPORTS\"}\n\
             {\"id\":\"c2\",\"table_id\":\"t1\",\"text\":\"x\",\"label\":\"Refutes\"}\n",
        );
        let seed = load_seed(dir.path()).unwrap();
        assert_eq!(seed.claims[0].claim.label, Label::Supports);
        assert_eq!(seed.claims[1].claim.label, Label::Refutes);

        let out = tempfile::tempdir().unwrap();
        write_seed(&seed, out.path()).unwrap();
        assert_eq!(load_seed(out.path()).unwrap(), seed);

        write_seed_files(
            dir.path(),
            r#"{"id":"t1","headers":["a"],"rows":[["x"]]}"#,
            r#"{"id":"c1","table_id":"t1","text":"x","label":"maybe"}"#,
        );
        assert!(matches!(load_seed(dir.path()), Err(DataError::MalformedSeed { .. })));
    }

    #[test]
    fn ten_samples_split_eight_one_one() {
        let samples: Vec<_> = (0..10)
            .map(|i| sample(i, if i % 2 == 0 { Label::Supports } else { Label::Refutes }))
            .collect();
        for stratified in [true, false] {
            let out = assign_splits(samples.clone(), SplitRatio(8, 1, 1), 3, stratified);
            let count = |s| out.iter().filter(|x| x.split == s).count();
            assert_eq!((count(Split::Train), count(Split::Valid), count(Split::Test)), (8, 1, 1));
        }
    }

    #[test]
    fn split_sizes_near_reported_counts() {
        // 8,829 supports / 7,057 refutes as in the published class table.
        let samples: Vec<_> = (0..15_886)
            .map(|i| sample(i, if i < 8_829 { Label::Supports } else { Label::Refutes }))
            .collect();
        let out = assign_splits(samples, SplitRatio(8, 1, 1), 11, true);
        let reported = [12_702.0, 1_593.0, 1_591.0];
        let exact = [15_886.0 * 0.8, 15_886.0 * 0.1, 15_886.0 * 0.1];
        for (k, split) in Split::ALL.into_iter().enumerate() {
            let n = out.iter().filter(|s| s.split == split).count() as f64;
            assert!((n - exact[k]).abs() <= 0.005 * exact[k], "{split}: {n}");
            assert!((n - reported[k]).abs() / reported[k] < 0.01, "{split}: {n}");
            let sup = out
                .iter()
                .filter(|s| s.split == split && s.label() == Label::Supports)
                .count() as f64;
            assert!((sup / n - 8_829.0 / 15_886.0).abs() < 0.02);
        }
    }

    #[test]
    fn split_is_deterministic() {
        let samples: Vec<_> = (0..50).map(|i| sample(i, Label::Supports)).collect();
        let a = assign_splits(samples.clone(), SplitRatio(8, 1, 1), 5, true);
        let b = assign_splits(samples.clone(), SplitRatio(8, 1, 1), 5, true);
        assert_eq!(a, b);
        let c = assign_splits(samples, SplitRatio(8, 1, 1), 6, true);
        assert_ne!(a, c);
    }

    #[test]
    fn manifest_round_trip_and_empty() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("manifest.jsonl");
        let mut samples: Vec<_> = (0..3).map(|i| sample(i, Label::Refutes)).collect();
        samples[1].reasoning_types = Some([ReasoningType::Filter, ReasoningType::Compare].into());
        samples[2].split = Split::Test;
        write_manifest(&samples, &path).unwrap();
        assert_eq!(read_manifest(&path).unwrap(), samples);

        write_manifest(&[], &path).unwrap();
        assert!(read_manifest(&path).unwrap().is_empty());
    }

    #[test]
    fn manifest_rejects_unknown_split_and_version() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.jsonl");
        fs::write(
            &path,
            "{\"schema_version\":1}\n{\"id\":\"a\",\"claim\":\"c\",\"label\":\"supports\",\"subtable_ref\":\"t\",\
             \"image_path\":\"a.png\",\"sidecar_path\":\"a.json\",\"split\":\"holdout\",\"reasoning_types\":[]}\n",
        )
        .unwrap();
        assert!(matches!(read_manifest(&path), Err(DataError::SchemaVersionMismatch(_))));
        fs::write(&path, "{\"schema_version\":99}\n").unwrap();
        assert!(matches!(read_manifest(&path), Err(DataError::SchemaVersionMismatch(_))));
        fs::write(
            &path,
            "{\"schema_version\":1}\n{\"id\":\"a\",\"claim\":\"c\",\"label\":\"supports\",\"subtable_ref\":\"t\",\
             \"image_path\":\"../a.png\",\"sidecar_path\":\"a.json\",\"split\":\"train\",\"reasoning_types\":[]}\n",
        )
        .unwrap();
        assert!(read_manifest(&path).is_err());
    }

    #[test]
    fn interleave_windows_stay_proportional() {
        let a: Vec<u8> = vec![1; 80];
        let b: Vec<u8> = vec![0; 20];
        let merged = proportional_interleave(a, b);
        for chunk in merged.chunks(10) {
            let ones = chunk.iter().filter(|&&x| x == 1).count() as i64;
            assert!((ones - 8).abs() <= 1);
        }
    }

    #[test]
    fn reasoning_type_names_parse() {
        for t in ReasoningType::ALL {
            assert_eq!(t.name().parse::<ReasoningType>().unwrap(), t);
            assert_eq!(format!("{t:?}").parse::<ReasoningType>().unwrap(), t);
        }
        assert_eq!("comparison".parse::<ReasoningType>().unwrap(), ReasoningType::Compare);
    }
}
