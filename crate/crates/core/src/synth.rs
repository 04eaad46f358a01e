//! Built-in fixtures: the athletics example table, a synthetic seed corpus
//! generator, and the ranked-claim mini datasets used for smoke training.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Claim, Label, ReasoningType, Seed, SeedClaim, Table};
use crate::linker::{build_subtable, parse_numeric, SubTable, SubTableRow};
use crate::render::{Background, BarColor, Canvas, ChartSpec, Grid, Orientation, Style};

fn strings(xs: &[&str]) -> Vec<String> {
    xs.iter().map(|s| s.to_string()).collect()
}

/// Men's sprint results table whose first rows are usain bolt (1) and
/// andy stanfield (2).
pub fn sprint_table() -> Table {
    let rows = [
        ["1", "usain bolt", "jamaica", "19.30"],
        ["2", "andy stanfield", "united states", "20.81"],
        ["3", "shawn crawford", "united states", "19.79"],
        ["4", "joseph deloach", "united states", "19.75"],
        ["5", "bobby morrow", "united states", "20.75"],
        ["6", "michael johnson", "united states", "19.32"],
        ["7", "thane baker", "united states", "20.97"],
        ["7", "nate cartmell", "united states", "21.60"],
    ];
    Table::new(
        "athletics-200m",
        strings(&["rank", "athlete", "nationality", "time"]),
        rows.iter().map(|r| strings(r)).collect(),
    )
    .expect("fixture table is rectangular")
}

pub fn sprint_claim() -> Claim {
    Claim {
        id: "athletics-200m-0".into(),
        text: "Both Thane Baker and Nate Cartmell were ranked last.".into(),
        label: Label::Supports,
    }
}

pub fn sprint_subtable() -> SubTable {
    build_subtable(&sprint_claim().text, &sprint_table())
        .expect("fixture claim links athlete and rank")
        .0
}

pub fn sprint_style() -> Style {
    Style {
        orientation: Orientation::Horizontal,
        bar_color: BarColor::Blue,
        grid: Grid::None,
        background: Background::White,
    }
}

pub fn sprint_spec() -> ChartSpec {
    ChartSpec::from_subtable(&sprint_subtable(), sprint_style(), Canvas::default(), 0)
}

/// Seed directory contents with the single example table and claim.
pub fn sprint_seed() -> Seed {
    let claim = sprint_claim();
    Seed {
        tables: vec![sprint_table()],
        claims: vec![SeedClaim {
            table_id: "athletics-200m".into(),
            reasoning_types: Some(BTreeSet::from([ReasoningType::Filter, ReasoningType::FindExtremum])),
            claim,
        }],
    }
}

const PLACE_WORDS: &[&str] = &[
    "north", "south", "east", "west", "upper", "lower", "old", "new", "grand", "little", "silver", "golden",
    "red", "green", "stone", "river", "lake", "hill", "forest", "harbor", "iron", "crystal", "royal", "central",
];
const NAME_WORDS: &[&str] = &[
    "falcon", "harbor", "valley", "bridge", "meadow", "rover", "lion", "tiger", "comet", "anchor", "summit",
    "prairie", "canyon", "ember", "glacier", "orchard", "beacon", "thunder", "willow", "raven", "pioneer",
    "spartan", "mariner", "ranger",
];
const CATEGORY_HEADERS: &[&str] = &["team", "club", "city", "school", "player", "district", "station", "province"];
const VALUE_HEADERS: &[&str] = &[
    "points", "goals", "wins", "losses", "score", "population", "votes", "margin", "attendance", "revenue",
    "elevation", "budget",
];
const TEXT_HEADERS: &[&str] = &["venue", "coach", "region", "founded by"];

fn value_text(rng: &mut ChaCha8Rng, kind: u32) -> String {
    match kind {
        0 => rng.random_range(0..100).to_string(),
        1 => format!("{:.1}", rng.random_range(0.0..50.0)),
        2 => {
            let v: i64 = rng.random_range(1_000..2_000_000);
            let s = v.to_string();
            let mut out = String::new();
            for (i, c) in s.chars().enumerate() {
                if i > 0 && (s.len() - i) % 3 == 0 {
                    out.push(',');
                }
                out.push(c);
            }
            out
        }
        _ => rng.random_range(-40..60).to_string(),
    }
}

/// Synthetic seed corpus of `n_tables` tables with `claims_per_table`
/// superlative or comparative claims each. Each claim names one category
/// cell (or two) and one numeric header, so it links exactly two columns.
pub fn seed_corpus(n_tables: usize, claims_per_table: usize, seed: u64) -> Seed {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Seed::default();
    for t in 0..n_tables {
        let n_rows = rng.random_range(2..=12usize);
        let n_values = rng.random_range(1..=3usize);
        let cat_header = *CATEGORY_HEADERS.choose(&mut rng).unwrap();
        let mut value_headers: Vec<&str> = VALUE_HEADERS.to_vec();
        value_headers.shuffle(&mut rng);
        value_headers.truncate(n_values);
        let text_header = rng.random_bool(0.5).then(|| *TEXT_HEADERS.choose(&mut rng).unwrap());

        let mut names = BTreeSet::new();
        while names.len() < n_rows {
            let a = PLACE_WORDS.choose(&mut rng).unwrap();
            let b = NAME_WORDS.choose(&mut rng).unwrap();
            names.insert(format!("{a} {b}"));
        }
        let mut names: Vec<String> = names.into_iter().collect();
        names.shuffle(&mut rng);

        let kinds: Vec<u32> = value_headers.iter().map(|_| rng.random_range(0..4)).collect();
        let mut headers = vec![cat_header.to_string()];
        headers.extend(value_headers.iter().map(|h| h.to_string()));
        headers.extend(text_header.map(String::from));
        let rows: Vec<Vec<String>> = names
            .iter()
            .map(|name| {
                let mut row = vec![name.clone()];
                row.extend(kinds.iter().map(|&k| value_text(&mut rng, k)));
                if text_header.is_some() {
                    row.push(format!("site {}", rng.random_range(1..30)));
                }
                row
            })
            .collect();
        let table = Table::new(format!("t{t:04}"), headers, rows).expect("generated table is rectangular");

        for c in 0..claims_per_table {
            let v = rng.random_range(0..n_values);
            let header = value_headers[v];
            let values: Vec<f64> = table.column(1 + v).map(|s| parse_numeric(s).unwrap().value).collect();
            let want = rng.random_bool(0.5);
            let (text, truth, kind) = match rng.random_range(0..3) {
                0 | 1 => {
                    let highest = rng.random_bool(0.5);
                    let best = if highest {
                        values.iter().cloned().fold(f64::MIN, f64::max)
                    } else {
                        values.iter().cloned().fold(f64::MAX, f64::min)
                    };
                    let pool: Vec<usize> = (0..n_rows).filter(|&r| (values[r] == best) == want).collect();
                    let r = *pool.choose(&mut rng).unwrap_or(&0);
                    let word = if highest { "highest" } else { "lowest" };
                    (format!("{} has the {word} {header}", names[r]), values[r] == best, ReasoningType::FindExtremum)
                }
                _ => {
                    let a = rng.random_range(0..n_rows);
                    let b = (a + rng.random_range(1..n_rows.max(2))) % n_rows;
                    (
                        format!("{} has more {header} than {}", names[a], names[b]),
                        values[a] > values[b],
                        ReasoningType::Compare,
                    )
                }
            };
            out.claims.push(SeedClaim {
                claim: Claim {
                    id: format!("t{t:04}-c{c}"),
                    text,
                    label: Label::from_target(truth),
                },
                table_id: table.id.clone(),
                reasoning_types: Some(BTreeSet::from([kind])),
            });
        }
        out.tables.push(table);
    }
    out
}

/// Which claim family a mini dataset uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MiniTask {
    /// "<category> is ranked <k>" with k a rank shown on the chart: supported
    /// claims name the category drawn with rank k, refuted claims name a
    /// category missing from the chart.
    Ranked,
    /// "<word> is on the x axis": supported iff the word is the title drawn
    /// under the horizontal axis; refuted claims name the other title.
    AxisLocation,
}

/// One constructed sample: a claim, the chart data, and its drawing style.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniSample {
    pub claim: Claim,
    pub subtable: SubTable,
    pub style: Style,
}

const MINI_NAMES: &[&str] = &[
    "ava", "ben", "cole", "dana", "eli", "finn", "gail", "hugo", "ida", "jon", "kai", "lena", "milo", "nora",
    "omar", "pia", "quin", "rosa", "sam", "tess", "uma", "vic", "wes", "yara",
];
const MINI_TITLES: &[&str] = &[
    "athlete", "team", "player", "rider", "club", "school", "city", "driver", "runner", "boxer", "swimmer",
    "skater",
];

/// Balanced constructed dataset of `n` samples with 2–`max_bars` bars each,
/// drawing category names from the first `names` entries of a fixed pool.
pub fn mini_dataset(task: MiniTask, n: usize, max_bars: usize, names: usize, seed: u64) -> Vec<MiniSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let max_bars = max_bars.clamp(2, MINI_NAMES.len() - 1);
    let pool = &MINI_NAMES[..names.clamp(max_bars + 1, MINI_NAMES.len())];
    let styles = crate::render::enumerate_styles();
    (0..n)
        .map(|i| {
            let n_bars = rng.random_range(2..=max_bars);
            let names: Vec<&str> = pool.choose_multiple(&mut rng, n_bars).copied().collect();
            let mut ranks: Vec<usize> = (1..=n_bars).collect();
            ranks.shuffle(&mut rng);
            let supports = i % 2 == 0;
            let style = styles[rng.random_range(0..styles.len())];
            let (category_header, value_header, text) = match task {
                MiniTask::Ranked => {
                    let b = rng.random_range(0..n_bars);
                    let name = if supports {
                        names[b]
                    } else {
                        let absent: Vec<&str> = pool.iter().copied().filter(|p| !names.contains(p)).collect();
                        *absent.choose(&mut rng).unwrap()
                    };
                    let title = *MINI_TITLES.choose(&mut rng).unwrap();
                    (title.to_string(), "rank".to_string(), format!("{name} is ranked {}", ranks[b]))
                }
                MiniTask::AxisLocation => {
                    let pair: Vec<&str> = MINI_TITLES.choose_multiple(&mut rng, 2).copied().collect();
                    let (cat, val) = (pair[0], pair[1]);
                    let x_title = match style.orientation {
                        Orientation::Horizontal => val,
                        Orientation::Vertical => cat,
                    };
                    let y_title = if x_title == cat { val } else { cat };
                    let word = if supports { x_title } else { y_title };
                    (cat.to_string(), val.to_string(), format!("{word} is on the x axis"))
                }
            };
            let rows = names
                .iter()
                .zip(&ranks)
                .map(|(name, r)| SubTableRow {
                    category: name.to_string(),
                    value: parse_numeric(&r.to_string()).unwrap(),
                })
                .collect();
            MiniSample {
                claim: Claim {
                    id: format!("mini-{i:05}"),
                    text,
                    label: Label::from_target(supports),
                },
                subtable: SubTable {
                    category_header,
                    value_header,
                    rows,
                },
                style,
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linker::build_subtable;

    #[test]
    fn corpus_claims_link_two_columns() {
        let seed = seed_corpus(40, 3, 7);
        assert_eq!(seed.tables.len(), 40);
        let linked = seed
            .claims
            .iter()
            .filter(|c| build_subtable(&c.claim.text, seed.table(&c.table_id).unwrap()).is_ok())
            .count();
        assert!(linked * 10 >= seed.claims.len() * 9, "{linked}/{}", seed.claims.len());
        let sup = seed.claims.iter().filter(|c| c.claim.label == Label::Supports).count();
        assert!(sup > 30 && sup < 90, "{sup}");
    }

    #[test]
    fn mini_dataset_is_balanced_and_consistent() {
        let data = mini_dataset(MiniTask::Ranked, 100, 4, 24, 1);
        assert_eq!(data.iter().filter(|s| s.claim.label == Label::Supports).count(), 50);
        for s in &data {
            let words: Vec<&str> = s.claim.text.split(' ').collect();
            let row = s.subtable.rows.iter().find(|r| r.category == words[0]);
            assert_eq!(row.is_some(), s.claim.label == Label::Supports, "{}", s.claim.text);
            assert!(s.subtable.rows.iter().any(|r| r.value.text == words[3]));
            if let Some(row) = row {
                assert_eq!(row.value.text, words[3]);
            }
        }
        assert_eq!(mini_dataset(MiniTask::AxisLocation, 20, 3, 6, 5), mini_dataset(MiniTask::AxisLocation, 20, 3, 6, 5));
    }
}
