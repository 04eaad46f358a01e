//! Turning chart text regions into one input sequence, either by plain
//! concatenation or by filling per-bar record templates.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::reader::{chart_structure, ReadOutput};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SeqError {
    #[error("read output has no regions")]
    EmptyReadOutput,
    #[error("{categories} category ticks but {values} value annotations")]
    UnpairedRegions { categories: usize, values: usize },
    #[error("axis title missing for the {0} axis")]
    MissingAxisTitle(&'static str),
    #[error("region {0} has no role; classify roles first")]
    Unclassified(usize),
}

/// Where an emitted token came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Region(usize),
    Scaffold,
    Separator,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SequenceResult {
    pub tokens: Vec<String>,
    pub alignment: Vec<Origin>,
}

impl SequenceResult {
    pub fn text(&self) -> String {
        self.tokens.join(" ")
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    fn push(&mut self, token: impl Into<String>, origin: Origin) {
        self.tokens.push(token.into());
        self.alignment.push(origin);
    }

    fn push_region(&mut self, out: &ReadOutput, i: usize) {
        for t in out.regions[i].tokens() {
            self.push(t, Origin::Region(i));
        }
    }
}

/// How a chart becomes a sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Template {
    Concat,
    Tmp1,
    Tmp2,
    Tmp3,
}

impl Template {
    pub const ALL: [Template; 4] = [Template::Concat, Template::Tmp1, Template::Tmp2, Template::Tmp3];

    pub fn name(self) -> &'static str {
        match self {
            Template::Concat => "concat",
            Template::Tmp1 => "tmp1",
            Template::Tmp2 => "tmp2",
            Template::Tmp3 => "tmp3",
        }
    }
}

impl fmt::Display for Template {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Template {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Template::ALL
            .into_iter()
            .find(|t| t.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| format!("unknown template {s:?} (expected concat, tmp1, tmp2 or tmp3)"))
    }
}

/// One bar as a (category, value) text pair.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordPair {
    pub text_x: String,
    pub text_y: String,
    /// 1-based position along the category axis.
    pub num: usize,
    pub category_region: usize,
    pub value_region: usize,
}

/// All regions in reading order joined by `;`.
pub fn seq_concat(output: &ReadOutput) -> Result<SequenceResult, SeqError> {
    if output.regions.is_empty() {
        return Err(SeqError::EmptyReadOutput);
    }
    let mut seq = SequenceResult::default();
    for i in 0..output.regions.len() {
        if i > 0 {
            seq.push(";", Origin::Separator);
        }
        seq.push_region(output, i);
    }
    Ok(seq)
}

fn check_roles(output: &ReadOutput) -> Result<(), SeqError> {
    if output.regions.is_empty() {
        return Err(SeqError::EmptyReadOutput);
    }
    match output.regions.iter().position(|r| r.role.is_none()) {
        Some(i) => Err(SeqError::Unclassified(i)),
        None => Ok(()),
    }
}

/// Pairs every category tick with its bar's value annotation, in category
/// axis order.
pub fn pair_records(output: &ReadOutput) -> Result<Vec<RecordPair>, SeqError> {
    check_roles(output)?;
    let s = chart_structure(output);
    let paired = s.annotations.iter().filter(|a| a.is_some()).count();
    if s.categories.is_empty() || paired != s.categories.len() {
        return Err(SeqError::UnpairedRegions {
            categories: s.categories.len(),
            values: paired,
        });
    }
    Ok(s.categories
        .iter()
        .zip(&s.annotations)
        .enumerate()
        .map(|(k, (&c, a))| {
            let v = a.expect("all paired");
            RecordPair {
                text_x: output.regions[c].text.clone(),
                text_y: output.regions[v].text.clone(),
                num: k + 1,
                category_region: c,
                value_region: v,
            }
        })
        .collect())
}

const NUMBER_WORDS: [&str; 20] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve", "thirteen",
    "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen", "twenty",
];

fn number_word(n: usize) -> String {
    NUMBER_WORDS.get(n.wrapping_sub(1)).map_or_else(|| n.to_string(), |w| w.to_string())
}

/// Fills one template per bar and joins the records with `;`.
///
/// Records read "entry one: <category title> is <category> ; <value title>
/// is <value>" (tmp1), "row 0: ..." with a zero-based counter (tmp2), or
/// "<category title> is <category> when <value title> is <value>" (tmp3).
pub fn seq_template(output: &ReadOutput, template: Template) -> Result<SequenceResult, SeqError> {
    if template == Template::Concat {
        return seq_concat(output);
    }
    check_roles(output)?;
    let s = chart_structure(output);
    let cat_title = s.category_title.ok_or(SeqError::MissingAxisTitle("category"))?;
    let val_title = s.value_title.ok_or(SeqError::MissingAxisTitle("value"))?;
    let pairs = pair_records(output)?;

    let mut seq = SequenceResult::default();
    for (k, p) in pairs.iter().enumerate() {
        if k > 0 {
            seq.push(";", Origin::Separator);
        }
        match template {
            Template::Tmp1 => {
                seq.push("entry", Origin::Scaffold);
                seq.push(format!("{}:", number_word(p.num)), Origin::Scaffold);
            }
            Template::Tmp2 => {
                seq.push("row", Origin::Scaffold);
                seq.push(format!("{}:", p.num - 1), Origin::Scaffold);
            }
            _ => {}
        }
        seq.push_region(output, cat_title);
        seq.push("is", Origin::Scaffold);
        seq.push_region(output, p.category_region);
        match template {
            Template::Tmp3 => seq.push("when", Origin::Scaffold),
            _ => seq.push(";", Origin::Separator),
        }
        seq.push_region(output, val_title);
        seq.push("is", Origin::Scaffold);
        seq.push_region(output, p.value_region);
    }
    Ok(seq)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::reader::read_oracle;
    use crate::render::render;
    use crate::synth::sprint_spec;

    fn fig1() -> ReadOutput {
        read_oracle(&render(&sprint_spec()).unwrap()).unwrap()
    }

    #[test]
    fn worked_examples() {
        let out = fig1();
        assert!(seq_concat(&out).unwrap().text().starts_with("usain bolt ; 1 ; andy stanfield ; 2"));
        let first = |t| seq_template(&out, t).unwrap().text();
        assert!(first(Template::Tmp1).starts_with("entry one: athlete is usain bolt ; rank is 1 ; entry two:"));
        assert!(first(Template::Tmp2).starts_with("row 0: athlete is usain bolt ; rank is 1 ; row 1:"));
        assert!(first(Template::Tmp3).starts_with("athlete is usain bolt when rank is 1 ; athlete is"));
    }

    #[test]
    fn pairs_follow_bars() {
        let pairs = pair_records(&fig1()).unwrap();
        assert_eq!(pairs.len(), 8);
        assert_eq!((pairs[0].text_x.as_str(), pairs[0].text_y.as_str()), ("usain bolt", "1"));
        assert_eq!(pairs.iter().map(|p| p.num).collect::<Vec<_>>(), (1..=8).collect::<Vec<_>>());
    }

    #[test]
    fn unpaired_and_empty() {
        let mut out = fig1();
        let drop = out
            .regions
            .iter()
            .position(|r| r.text == "2" && r.bbox.y < 100)
            .unwrap();
        out.regions.remove(drop);
        assert_eq!(
            pair_records(&out),
            Err(SeqError::UnpairedRegions {
                categories: 8,
                values: 7
            })
        );
        let empty = ReadOutput {
            regions: vec![],
            ..fig1()
        };
        assert_eq!(seq_concat(&empty), Err(SeqError::EmptyReadOutput));
    }

    #[test]
    fn single_region_and_alignment() {
        let mut out = fig1();
        out.regions.retain(|r| r.text == "rank");
        let seq = seq_concat(&out).unwrap();
        assert_eq!(seq.text(), "rank");
        assert_eq!(seq.alignment, [Origin::Region(0)]);

        let out = fig1();
        let seq = seq_template(&out, Template::Tmp1).unwrap();
        assert_eq!(seq.tokens.len(), seq.alignment.len());
        for (t, o) in seq.tokens.iter().zip(&seq.alignment) {
            match o {
                Origin::Region(i) => assert!(out.regions[*i].tokens().any(|x| x == t)),
                Origin::Separator => assert_eq!(t, ";"),
                Origin::Scaffold => {}
            }
        }
    }

    #[test]
    fn missing_title() {
        let mut out = fig1();
        out.regions.retain(|r| r.text != "athlete");
        assert_eq!(seq_template(&out, Template::Tmp3), Err(SeqError::MissingAxisTitle("category")));
        assert_eq!("TMP2".parse::<Template>(), Ok(Template::Tmp2));
    }
}
