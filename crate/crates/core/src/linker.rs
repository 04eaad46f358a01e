//! Claim-to-table linking and sub-table extraction.
//!
//! A claim is linked to table columns by exact lemma matches of claim n-grams
//! (up to three tokens) against header and cell lemma strings. Tokens that
//! link to several columns are resolved by edit distance to the header, and
//! the surviving columns must form a chartable two-column slice.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::data::Table;
use crate::text::{lemma_key, TokenizedText};

pub const MAX_SUBTABLE_ROWS: usize = 20;
pub const MAX_NGRAM: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum LinkError {
    #[error("more than two linked columns ({0})")]
    RejectedTooManyColumns(usize),
    #[error("more than {MAX_SUBTABLE_ROWS} rows ({0})")]
    RejectedTooManyRows(usize),
    #[error("neither linked column is fully numeric")]
    RejectedNonNumeric,
    #[error("fewer than two linked columns ({0})")]
    RejectedUnderlinked(usize),
    #[error("table has no rows")]
    RejectedEmpty,
    #[error("empty category cell in row {0}")]
    RejectedEmptyCategory(usize),
}

impl LinkError {
    /// Stable reason code for rejection logs.
    pub fn code(&self) -> &'static str {
        match self {
            LinkError::RejectedTooManyColumns(_) => "too_many_columns",
            LinkError::RejectedTooManyRows(_) => "too_many_rows",
            LinkError::RejectedNonNumeric => "non_numeric",
            LinkError::RejectedUnderlinked(_) => "underlinked",
            LinkError::RejectedEmpty => "empty_table",
            LinkError::RejectedEmptyCategory(_) => "empty_category",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum MatchKind {
    HeaderMatch,
    CellMatch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct LinkResult {
    pub token_index: usize,
    /// Number of claim tokens covered by the matching n-gram.
    pub span: usize,
    pub column_index: usize,
    pub match_kind: MatchKind,
}

/// A numeric cell, keeping the source text verbatim.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NumericCell {
    pub text: String,
    pub value: f64,
}

/// Parses `[-+]digits[.digits]` with optional thousands commas.
pub fn parse_numeric(text: &str) -> Option<NumericCell> {
    let t = text.trim();
    let body = t.strip_prefix(['-', '+']).unwrap_or(t);
    let (int_part, frac_part) = match body.split_once('.') {
        Some((i, f)) => (i, Some(f)),
        None => (body, None),
    };
    if int_part.is_empty() && frac_part.is_none() {
        return None;
    }
    let groups: Vec<&str> = int_part.split(',').collect();
    let int_ok = if groups.len() == 1 {
        groups[0].bytes().all(|b| b.is_ascii_digit()) && (!groups[0].is_empty() || frac_part.is_some())
    } else {
        (1..=3).contains(&groups[0].len())
            && groups.iter().all(|g| g.bytes().all(|b| b.is_ascii_digit()))
            && groups[1..].iter().all(|g| g.len() == 3)
    };
    let frac_ok = frac_part.is_none_or(|f| !f.is_empty() && f.bytes().all(|b| b.is_ascii_digit()));
    if !int_ok || !frac_ok {
        return None;
    }
    let value: f64 = t.replace(',', "").parse().ok()?;
    value.is_finite().then(|| NumericCell {
        text: t.to_string(),
        value,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTableRow {
    pub category: String,
    pub value: NumericCell,
}

/// Two-column slice of a seed table: a categorical column and a numeric one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubTable {
    pub category_header: String,
    pub value_header: String,
    pub rows: Vec<SubTableRow>,
}

impl SubTable {
    pub fn validate(&self) -> Result<(), String> {
        if self.rows.is_empty() || self.rows.len() > MAX_SUBTABLE_ROWS {
            return Err(format!("row count {} outside 1..={MAX_SUBTABLE_ROWS}", self.rows.len()));
        }
        if let Some(r) = self.rows.iter().position(|r| r.category.trim().is_empty()) {
            return Err(format!("empty category in row {r}"));
        }
        if let Some(r) = self.rows.iter().position(|r| !r.value.value.is_finite()) {
            return Err(format!("non-finite value in row {r}"));
        }
        Ok(())
    }
}

/// Classic edit distance with unit insert/delete/substitute costs, over chars.
pub fn levenshtein(a: &str, b: &str) -> usize {
    let a: Vec<char> = a.chars().collect();
    let b: Vec<char> = b.chars().collect();
    if a.is_empty() {
        return b.len();
    }
    let mut prev: Vec<usize> = (0..=b.len()).collect();
    let mut cur = vec![0; b.len() + 1];
    for (i, ca) in a.iter().enumerate() {
        cur[0] = i + 1;
        for (j, cb) in b.iter().enumerate() {
            let sub = prev[j] + usize::from(ca != cb);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// Index of the candidate header closest to `token`; ties go to the lowest
/// index.
pub fn resolve_ambiguous(token: &str, candidate_headers: &[&str]) -> usize {
    candidate_headers
        .iter()
        .enumerate()
        .min_by_key(|(i, h)| (levenshtein(token, h), *i))
        .map(|(i, _)| i)
        .expect("resolve_ambiguous needs at least one candidate")
}

fn has_alnum(s: &str) -> bool {
    s.chars().any(char::is_alphanumeric)
}

/// All exact lemma matches of claim n-grams against headers and cells,
/// ordered by token index.
pub fn link_claim(claim: &TokenizedText, table: &Table) -> Vec<LinkResult> {
    let header_keys: Vec<String> = table.headers.iter().map(|h| lemma_key(h)).collect();
    let cell_keys: Vec<HashSet<String>> = (0..table.headers.len())
        .map(|c| table.column(c).map(lemma_key).collect())
        .collect();
    let mut out = Vec::new();
    for i in 0..claim.lemmas.len() {
        for span in 1..=MAX_NGRAM.min(claim.lemmas.len() - i) {
            let gram = claim.lemmas[i..i + span].join(" ");
            if !has_alnum(&gram) {
                continue;
            }
            for c in 0..table.headers.len() {
                if header_keys[c] == gram {
                    out.push(LinkResult {
                        token_index: i,
                        span,
                        column_index: c,
                        match_kind: MatchKind::HeaderMatch,
                    });
                }
                if cell_keys[c].contains(&gram) {
                    out.push(LinkResult {
                        token_index: i,
                        span,
                        column_index: c,
                        match_kind: MatchKind::CellMatch,
                    });
                }
            }
        }
    }
    out.sort();
    out
}

/// Reduces raw links to one column per matched claim n-gram.
///
/// N-grams nested inside a longer matched n-gram are dropped. An n-gram that
/// links to several columns keeps only columns that other n-grams link to
/// unambiguously, when there are any; remaining ties are resolved by
/// [`resolve_ambiguous`] against the column headers.
pub fn disambiguate(links: &[LinkResult], claim: &TokenizedText, table: &Table) -> Vec<LinkResult> {
    let mut groups: BTreeMap<(usize, usize), Vec<LinkResult>> = BTreeMap::new();
    for l in links {
        groups.entry((l.token_index, l.span)).or_default().push(*l);
    }
    let spans: Vec<(usize, usize)> = groups.keys().copied().collect();
    let covered = |&(i, n): &(usize, usize)| {
        spans
            .iter()
            .any(|&(j, m)| (j, m) != (i, n) && j <= i && i + n <= j + m)
    };
    groups.retain(|k, _| !covered(k));

    let columns_of = |g: &[LinkResult]| -> BTreeSet<usize> { g.iter().map(|l| l.column_index).collect() };
    let anchored: BTreeSet<usize> = groups
        .values()
        .map(|g| columns_of(g))
        .filter(|cols| cols.len() == 1)
        .flatten()
        .collect();

    let mut out = Vec::new();
    for (&(i, span), group) in &groups {
        let cols = columns_of(group);
        let mut candidates: Vec<usize> = cols.iter().copied().filter(|c| anchored.contains(c)).collect();
        if candidates.is_empty() {
            candidates = cols.into_iter().collect();
        }
        let column = if candidates.len() == 1 {
            candidates[0]
        } else {
            let token = claim.lemmas[i..i + span].join(" ");
            let headers: Vec<String> = candidates.iter().map(|&c| lemma_key(&table.headers[c])).collect();
            let refs: Vec<&str> = headers.iter().map(String::as_str).collect();
            candidates[resolve_ambiguous(&token, &refs)]
        };
        let chosen = group
            .iter()
            .filter(|l| l.column_index == column)
            .min_by_key(|l| l.match_kind)
            .copied()
            .expect("chosen column comes from the group");
        out.push(chosen);
    }
    out
}

/// Keeps the two linked columns and all table rows.
///
/// When both columns are numeric the lower-index column is the category.
pub fn extract_subtable(table: &Table, links: &[LinkResult]) -> Result<SubTable, LinkError> {
    let columns: BTreeSet<usize> = links.iter().map(|l| l.column_index).collect();
    if columns.len() > 2 {
        return Err(LinkError::RejectedTooManyColumns(columns.len()));
    }
    if columns.len() < 2 {
        return Err(LinkError::RejectedUnderlinked(columns.len()));
    }
    if table.rows.len() > MAX_SUBTABLE_ROWS {
        return Err(LinkError::RejectedTooManyRows(table.rows.len()));
    }
    if table.rows.is_empty() {
        return Err(LinkError::RejectedEmpty);
    }
    let cols: Vec<usize> = columns.into_iter().collect();
    let numeric: Vec<Option<Vec<NumericCell>>> = cols
        .iter()
        .map(|&c| table.column(c).map(parse_numeric).collect::<Option<Vec<_>>>())
        .collect();
    let (cat_col, values) = match (&numeric[0], &numeric[1]) {
        (_, Some(v)) => (cols[0], v.clone()),
        (Some(v), None) => (cols[1], v.clone()),
        (None, None) => return Err(LinkError::RejectedNonNumeric),
    };
    let val_col = if cat_col == cols[0] { cols[1] } else { cols[0] };
    let mut rows = Vec::with_capacity(values.len());
    for (r, (cat, value)) in table.column(cat_col).zip(values).enumerate() {
        let category = cat.split_whitespace().collect::<Vec<_>>().join(" ");
        if category.is_empty() {
            return Err(LinkError::RejectedEmptyCategory(r));
        }
        rows.push(SubTableRow { category, value });
    }
    let sub = SubTable {
        category_header: normalize_space(&table.headers[cat_col]),
        value_header: normalize_space(&table.headers[val_col]),
        rows,
    };
    debug_assert!(sub.validate().is_ok());
    Ok(sub)
}

fn normalize_space(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Full linking step for one claim: tokenize, link, disambiguate, extract.
/// Returns the sub-table and the two column indices (category, value).
pub fn build_subtable(claim_text: &str, table: &Table) -> Result<(SubTable, [usize; 2]), LinkError> {
    let claim = crate::text::tokenize_lemmatize(claim_text);
    let links = link_claim(&claim, table);
    let resolved = disambiguate(&links, &claim, table);
    let sub = extract_subtable(table, &resolved)?;
    let cat = table
        .headers
        .iter()
        .position(|h| normalize_space(h) == sub.category_header)
        .unwrap_or(0);
    let val = table
        .headers
        .iter()
        .enumerate()
        .position(|(i, h)| i != cat && normalize_space(h) == sub.value_header)
        .unwrap_or(0);
    Ok((sub, [cat, val]))
}
