//! Reading text regions back out of a chart: the sidecar oracle, an external
//! OCR adapter, geometric role classification, and OCR-noise simulation.

use std::cmp::Ordering;
use std::io::{Read, Write};
use std::process::{Command, Stdio};

use base64::Engine;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{reading_order, BBox};
use crate::render::{BarColor, Canvas, ChartArtifact, Orientation, Role, GAP, GLYPH};

#[derive(Debug, Error)]
pub enum ReadError {
    #[error("chart artifact has no layout sidecar")]
    MissingSidecar,
    #[error("OCR adapter unreachable: {0}")]
    AdapterUnreachable(String),
    #[error("malformed OCR adapter reply: {0}")]
    MalformedAdapterReply(String),
    #[error("cannot classify region roles: {0}")]
    Unclassifiable(String),
    #[error("cannot decode chart image: {0}")]
    DecodeFailure(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Oracle,
    Ocr,
}

/// One recognized text span.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TextRegion {
    pub text: String,
    #[serde(flatten)]
    pub bbox: BBox,
    pub role: Option<Role>,
    pub confidence: f64,
}

impl TextRegion {
    pub fn tokens(&self) -> impl Iterator<Item = &str> {
        self.text.split_whitespace()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReadOutput {
    pub regions: Vec<TextRegion>,
    pub canvas: Canvas,
    pub source: Source,
}

impl ReadOutput {
    pub fn region_boxes(&self) -> Vec<BBox> {
        self.regions.iter().map(|r| r.bbox).collect()
    }

    /// Puts the regions in reading order.
    pub fn sort_reading_order(&mut self) {
        let order = reading_order(&self.region_boxes(), |a, b| {
            let (ra, rb) = (&self.regions[a], &self.regions[b]);
            ra.text.cmp(&rb.text).then(ra.role.cmp(&rb.role))
        });
        self.regions = order.into_iter().map(|i| self.regions[i].clone()).collect();
    }

    pub fn without_roles(&self) -> ReadOutput {
        let mut out = self.clone();
        for r in &mut out.regions {
            r.role = None;
        }
        out
    }
}

/// Ground-truth reading: the sidecar regions, in their stored order.
pub fn read_oracle(artifact: &ChartArtifact) -> Result<ReadOutput, ReadError> {
    let sidecar = artifact.sidecar.as_ref().ok_or(ReadError::MissingSidecar)?;
    Ok(ReadOutput {
        regions: sidecar
            .regions
            .iter()
            .map(|r| TextRegion {
                text: r.text.clone(),
                bbox: r.bbox,
                role: Some(r.role),
                confidence: 1.0,
            })
            .collect(),
        canvas: sidecar.spec.canvas,
        source: Source::Oracle,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct OcrRequest {
    pub request_id: String,
    /// Base64-encoded PNG bytes.
    pub image: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrRegion {
    pub text: String,
    pub x: i64,
    pub y: i64,
    pub w: i64,
    pub h: i64,
    pub confidence: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OcrReply {
    pub request_id: String,
    pub regions: Vec<OcrRegion>,
}

/// Transport to an OCR engine speaking the request/reply documents above.
pub trait OcrAdapter {
    fn recognize(&self, request: &OcrRequest) -> Result<OcrReply, ReadError>;
}

impl<F> OcrAdapter for F
where
    F: Fn(&OcrRequest) -> Result<OcrReply, ReadError>,
{
    fn recognize(&self, request: &OcrRequest) -> Result<OcrReply, ReadError> {
        self(request)
    }
}

fn parse_reply(body: &str) -> Result<OcrReply, ReadError> {
    serde_json::from_str(body).map_err(|e| ReadError::MalformedAdapterReply(e.to_string()))
}

/// Adapter reached over HTTP: one POST to `<endpoint>/ocr` per image.
#[derive(Debug, Clone)]
pub struct HttpAdapter {
    pub endpoint: String,
}

impl HttpAdapter {
    pub fn new(endpoint: impl Into<String>) -> Self {
        HttpAdapter { endpoint: endpoint.into() }
    }

    fn url(&self) -> String {
        let base = self.endpoint.trim_end_matches('/');
        if base.ends_with("/ocr") {
            base.to_string()
        } else {
            format!("{base}/ocr")
        }
    }
}

impl OcrAdapter for HttpAdapter {
    fn recognize(&self, request: &OcrRequest) -> Result<OcrReply, ReadError> {
        let body = serde_json::to_string(request).expect("request serializes");
        let mut resp = ureq::post(&self.url())
            .header("content-type", "application/json")
            .send(&body)
            .map_err(|e| ReadError::AdapterUnreachable(e.to_string()))?;
        let text = resp
            .body_mut()
            .read_to_string()
            .map_err(|e| ReadError::AdapterUnreachable(e.to_string()))?;
        parse_reply(&text)
    }
}

/// Adapter run as a local process: the request document goes to stdin and
/// the reply is read from stdout.
#[derive(Debug, Clone)]
pub struct CommandAdapter {
    pub program: String,
    pub args: Vec<String>,
}

impl OcrAdapter for CommandAdapter {
    fn recognize(&self, request: &OcrRequest) -> Result<OcrReply, ReadError> {
        let unreachable = |e: std::io::Error| ReadError::AdapterUnreachable(format!("{}: {e}", self.program));
        let mut child = Command::new(&self.program)
            .args(&self.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .spawn()
            .map_err(unreachable)?;
        let body = serde_json::to_vec(request).expect("request serializes");
        child.stdin.take().expect("piped stdin").write_all(&body).map_err(unreachable)?;
        let mut out = String::new();
        child.stdout.take().expect("piped stdout").read_to_string(&mut out).map_err(unreachable)?;
        let status = child.wait().map_err(unreachable)?;
        if !status.success() {
            return Err(ReadError::AdapterUnreachable(format!("{} exited with {status}", self.program)));
        }
        parse_reply(&out)
    }
}

fn decode(png: &[u8]) -> Result<image::RgbImage, ReadError> {
    image::load_from_memory(png)
        .map(|i| i.to_rgb8())
        .map_err(|e| ReadError::DecodeFailure(e.to_string()))
}

/// Reads a chart image through an OCR adapter. Roles are left unset.
pub fn read_ocr(png: &[u8], adapter: &dyn OcrAdapter) -> Result<ReadOutput, ReadError> {
    let (width, height) = decode(png)?.dimensions();
    let request = OcrRequest {
        request_id: format!("{:016x}", crate::render::fnv1a(png)),
        image: base64::engine::general_purpose::STANDARD.encode(png),
    };
    let reply = adapter.recognize(&request)?;
    if reply.request_id != request.request_id {
        return Err(ReadError::MalformedAdapterReply(format!(
            "reply id {} does not match request {}",
            reply.request_id, request.request_id
        )));
    }
    let mut regions = Vec::with_capacity(reply.regions.len());
    for (i, r) in reply.regions.into_iter().enumerate() {
        let bad = |m: &str| ReadError::MalformedAdapterReply(format!("region {i}: {m}"));
        if r.w <= 0 || r.h <= 0 {
            return Err(bad("non-positive width or height"));
        }
        if r.x < 0 || r.y < 0 || r.x + r.w > width as i64 || r.y + r.h > height as i64 {
            return Err(bad("box outside the image"));
        }
        if !(0.0..=1.0).contains(&r.confidence) {
            return Err(bad("confidence outside [0, 1]"));
        }
        if r.text.trim().is_empty() {
            continue;
        }
        regions.push(TextRegion {
            text: r.text,
            bbox: BBox::new(r.x as u32, r.y as u32, r.w as u32, r.h as u32),
            role: None,
            confidence: r.confidence,
        });
    }
    let mut out = ReadOutput {
        regions,
        canvas: Canvas { width, height },
        source: Source::Ocr,
    };
    out.sort_reading_order();
    Ok(out)
}

fn median(mut xs: Vec<f64>) -> f64 {
    xs.sort_by(f64::total_cmp);
    match xs.len() {
        0 => 0.0,
        n if n % 2 == 1 => xs[n / 2],
        n => (xs[n / 2 - 1] + xs[n / 2]) / 2.0,
    }
}

fn numeric(text: &str) -> Option<f64> {
    crate::linker::parse_numeric(text).map(|c| c.value)
}

/// True if the texts parse as numbers in arithmetic progression whose pixel
/// positions are equally spaced too.
fn looks_like_value_axis(regions: &[&TextRegion], along_x: bool) -> bool {
    if regions.len() < 2 {
        return false;
    }
    let mut pts: Vec<(f64, f64)> = Vec::new();
    for r in regions {
        let Some(v) = numeric(&r.text) else { return false };
        pts.push((if along_x { r.bbox.cx() } else { r.bbox.cy() }, v));
    }
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let dv = pts[1].1 - pts[0].1;
    let dp = pts[1].0 - pts[0].0;
    if dv == 0.0 || dp == 0.0 {
        return false;
    }
    pts.windows(2).all(|w| {
        let (a, b) = (w[0], w[1]);
        ((b.1 - a.1) - dv).abs() <= 1e-9 * dv.abs().max(1.0) && ((b.0 - a.0) - dp).abs() <= 2.0
    })
}

/// Assigns roles from relative geometry only.
///
/// The region lowest on the canvas is the x-axis title and the leftmost of
/// the rest is the y-axis title. Of the remaining regions, those whose top
/// edge lies on the lowest text line form the bottom band, those sharing the
/// leftmost right edge form the left band, and everything else sits inside
/// the plot as bar value annotations. The category band is the band the
/// annotations line up with; the other band holds the value ticks.
pub fn classify_roles(output: &ReadOutput) -> Result<ReadOutput, ReadError> {
    let n = output.regions.len();
    if n < 3 {
        return Err(ReadError::Unclassifiable(format!("{n} regions, need at least 3")));
    }
    let b: Vec<BBox> = output.region_boxes();
    let tol = median(b.iter().map(|r| r.w.min(r.h) as f64).collect()) / 2.0;

    let by = |key: &dyn Fn(&BBox) -> f64, pool: &[usize], max: bool| -> usize {
        *pool
            .iter()
            .min_by(|&&i, &&j| {
                let o = key(&b[i]).total_cmp(&key(&b[j]));
                let o = if max { o.reverse() } else { o };
                o.then(b[i].x.cmp(&b[j].x)).then(b[i].y.cmp(&b[j].y)).then(i.cmp(&j))
            })
            .unwrap()
    };
    let all: Vec<usize> = (0..n).collect();
    let title_x = by(&|r| r.cy(), &all, true);
    let rest: Vec<usize> = all.into_iter().filter(|&i| i != title_x).collect();
    let title_y = by(&|r| r.cx(), &rest, false);
    let rest: Vec<usize> = rest.into_iter().filter(|&i| i != title_y).collect();
    if rest.is_empty() {
        return Err(ReadError::Unclassifiable("no tick regions".into()));
    }

    let max_top = rest.iter().map(|&i| b[i].y).max().unwrap() as f64;
    let (bottom, rest): (Vec<usize>, Vec<usize>) = rest.into_iter().partition(|&i| b[i].y as f64 >= max_top - tol);
    let (left, interior): (Vec<usize>, Vec<usize>) = if rest.is_empty() {
        (vec![], vec![])
    } else {
        let min_right = rest.iter().map(|&i| b[i].right()).min().unwrap() as f64;
        rest.into_iter().partition(|&i| b[i].right() as f64 <= min_right + tol)
    };

    // Hypothesis A: horizontal bars, categories on the left band.
    // Hypothesis B: vertical bars, categories on the bottom band.
    let aligned = |i: usize, band: &[usize], rows: bool| -> Option<f64> {
        band.iter()
            .map(|&c| {
                if rows {
                    (b[i].cy() - b[c].cy()).abs()
                } else {
                    (b[i].cx() - b[c].cx()).abs()
                }
            })
            .filter(|d| *d <= tol)
            .min_by(f64::total_cmp)
    };
    let mut score = [(0usize, 0.0f64); 2];
    for &i in &interior {
        if let Some(d) = aligned(i, &left, true) {
            score[0].0 += 1;
            score[0].1 += d;
        }
        if let Some(d) = aligned(i, &bottom, false) {
            score[1].0 += 1;
            score[1].1 += d;
        }
    }
    let axis_ok = |values: &[usize], along_x: bool| -> (bool, bool) {
        let refs: Vec<&TextRegion> = values.iter().map(|&i| &output.regions[i]).collect();
        (values.len() >= 2, looks_like_value_axis(&refs, along_x))
    };
    let (a_size, a_num) = axis_ok(&bottom, true);
    let (b_size, b_num) = axis_ok(&left, false);
    let keys = [
        (score[0].0, a_size && !left.is_empty(), a_num, -score[0].1),
        (score[1].0, b_size && !bottom.is_empty(), b_num, -score[1].1),
    ];
    let horizontal = match compare_hypotheses(keys[0], keys[1]) {
        Ordering::Greater => true,
        Ordering::Less => false,
        Ordering::Equal => {
            return Err(ReadError::Unclassifiable(
                "category band is ambiguous between the left and bottom bands".into(),
            ))
        }
    };
    let (categories, values) = if horizontal { (&left, &bottom) } else { (&bottom, &left) };

    let mut out = output.clone();
    out.regions[title_x].role = Some(Role::AxisTitleX);
    out.regions[title_y].role = Some(Role::AxisTitleY);
    for &i in categories {
        out.regions[i].role = Some(Role::TickCategory);
    }
    for &i in values.iter().chain(&interior) {
        out.regions[i].role = Some(Role::TickValue);
    }
    Ok(out)
}

fn compare_hypotheses(a: (usize, bool, bool, f64), b: (usize, bool, bool, f64)) -> Ordering {
    a.0.cmp(&b.0)
        .then(a.1.cmp(&b.1))
        .then(a.2.cmp(&b.2))
        .then(a.3.partial_cmp(&b.3).unwrap_or(Ordering::Equal))
}

/// Bar structure recovered from classified regions.
#[derive(Debug, Clone, PartialEq)]
pub struct ChartStructure {
    pub orientation: Orientation,
    /// Category regions ordered along the category axis.
    pub categories: Vec<usize>,
    /// Annotation region paired with each category, if one was found.
    pub annotations: Vec<Option<usize>>,
    /// Value-axis tick regions.
    pub axis_ticks: Vec<usize>,
    pub category_title: Option<usize>,
    pub value_title: Option<usize>,
}

fn annotation_distance(r: &BBox, c: &BBox, orientation: Orientation) -> Option<f64> {
    let tol = 0.75 * c.w.min(c.h) as f64;
    match orientation {
        Orientation::Horizontal => {
            let d = (r.cy() - c.cy()).abs();
            (d <= tol && r.x >= c.right()).then_some(d)
        }
        Orientation::Vertical => {
            let d = (r.cx() - c.cx()).abs();
            (d <= tol && r.bottom() <= c.y).then_some(d)
        }
    }
}

/// Pairs each category tick with the value annotation on its row (horizontal
/// bars) or column (vertical bars).
pub fn chart_structure(output: &ReadOutput) -> ChartStructure {
    let with = |role: Role| -> Vec<usize> {
        (0..output.regions.len())
            .filter(|&i| output.regions[i].role == Some(role))
            .collect()
    };
    let cats = with(Role::TickCategory);
    let values = with(Role::TickValue);
    let b = output.region_boxes();

    let votes = |o: Orientation| {
        values
            .iter()
            .filter(|&&v| cats.iter().any(|&c| annotation_distance(&b[v], &b[c], o).is_some()))
            .count()
    };
    let (h, v) = (votes(Orientation::Horizontal), votes(Orientation::Vertical));
    let orientation = if h != v {
        if h > v {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        }
    } else if cats.len() >= 2 {
        let spread = |f: &dyn Fn(&BBox) -> f64| {
            let xs: Vec<f64> = cats.iter().map(|&c| f(&b[c])).collect();
            xs.iter().cloned().fold(f64::MIN, f64::max) - xs.iter().cloned().fold(f64::MAX, f64::min)
        };
        if spread(&|r| r.cy()) >= spread(&|r| r.cx()) {
            Orientation::Horizontal
        } else {
            Orientation::Vertical
        }
    } else if cats.first().is_some_and(|&c| b[c].h > b[c].w) {
        Orientation::Vertical
    } else {
        Orientation::Horizontal
    };

    let mut categories = cats;
    match orientation {
        Orientation::Horizontal => categories.sort_by(|&i, &j| b[i].cy().total_cmp(&b[j].cy()).then(i.cmp(&j))),
        Orientation::Vertical => categories.sort_by(|&i, &j| b[i].cx().total_cmp(&b[j].cx()).then(i.cmp(&j))),
    }
    let mut used = vec![false; output.regions.len()];
    let annotations: Vec<Option<usize>> = categories
        .iter()
        .map(|&c| {
            let best = values
                .iter()
                .filter(|&&v| !used[v])
                .filter_map(|&v| annotation_distance(&b[v], &b[c], orientation).map(|d| (d, v)))
                .min_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)))
                .map(|(_, v)| v);
            if let Some(v) = best {
                used[v] = true;
            }
            best
        })
        .collect();
    let axis_ticks = values.into_iter().filter(|&v| !used[v]).collect();
    let title = |role| with(role).first().copied();
    let (x_title, y_title) = (title(Role::AxisTitleX), title(Role::AxisTitleY));
    let (category_title, value_title) = match orientation {
        Orientation::Horizontal => (y_title, x_title),
        Orientation::Vertical => (x_title, y_title),
    };
    ChartStructure {
        orientation,
        categories,
        annotations,
        axis_ticks,
        category_title,
        value_title,
    }
}

fn is_bar_pixel(px: &[u8; 3]) -> bool {
    BarColor::ALL.iter().any(|c| c.rgb() == *px)
}

fn decimals(text: &str) -> usize {
    text.rsplit_once('.').map_or(0, |(_, frac)| frac.len())
}

/// Fills in missing bar value annotations by measuring bar ends in the
/// raster and interpolating between the two nearest value ticks.
pub fn estimate_values(png: &[u8], output: &ReadOutput) -> Result<ReadOutput, ReadError> {
    let s = chart_structure(output);
    if s.annotations.iter().all(Option::is_some) {
        return Ok(output.clone());
    }
    let img = decode(png)?;
    let (w, h) = img.dimensions();
    let horizontal = s.orientation == Orientation::Horizontal;
    let mut ticks: Vec<(f64, f64)> = s
        .axis_ticks
        .iter()
        .filter_map(|&i| {
            let r = &output.regions[i];
            numeric(&r.text).map(|v| (if horizontal { r.bbox.cx() } else { r.bbox.cy() }, v))
        })
        .collect();
    if ticks.len() < 2 {
        return Err(ReadError::Unclassifiable("fewer than two numeric value ticks".into()));
    }
    ticks.sort_by(|a, b| a.0.total_cmp(&b.0));
    let places = s
        .axis_ticks
        .iter()
        .map(|&i| decimals(&output.regions[i].text))
        .max()
        .unwrap_or(0);
    let value_at = |p: f64| -> f64 {
        let mut near: Vec<&(f64, f64)> = ticks.iter().collect();
        near.sort_by(|a, b| (a.0 - p).abs().total_cmp(&(b.0 - p).abs()));
        let (a, b) = (near[0], near[1]);
        a.1 + (p - a.0) * (b.1 - a.1) / (b.0 - a.0)
    };
    let zero_at = {
        let (a, b) = (ticks[0], ticks[ticks.len() - 1]);
        a.0 + (0.0 - a.1) * (b.0 - a.0) / (b.1 - a.1)
    };

    let mut out = output.clone();
    for (k, &c) in s.categories.iter().enumerate() {
        if s.annotations[k].is_some() {
            continue;
        }
        let cb = output.regions[c].bbox;
        let run: Vec<u32> = if horizontal {
            let y = (cb.cy().floor() as u32).min(h - 1);
            (cb.right()..w).filter(|&x| is_bar_pixel(&img.get_pixel(x, y).0)).collect()
        } else {
            let x = (cb.cx().floor() as u32).min(w - 1);
            (0..cb.y.min(h)).filter(|&y| is_bar_pixel(&img.get_pixel(x, y).0)).collect()
        };
        let end = match (run.first(), run.last()) {
            (Some(&lo), Some(&hi)) => {
                let (lo, hi) = (lo as f64, hi as f64 + 1.0);
                if (hi - zero_at).abs() >= (lo - zero_at).abs() {
                    hi
                } else {
                    lo
                }
            }
            _ => zero_at,
        };
        let value = value_at(end);
        let mut text = format!("{value:.places$}");
        if text.trim_start_matches('-').chars().all(|ch| ch == '0' || ch == '.') {
            text = text.trim_start_matches('-').to_string();
        }
        let len = text.chars().count() as u32 * GLYPH;
        let positive = if horizontal { end >= zero_at } else { end <= zero_at };
        let bbox = if horizontal {
            let x = if positive { end + GAP as f64 } else { end - GAP as f64 - len as f64 };
            BBox::new((x.max(cb.right() as f64) as u32).min(w - len.min(w)), cb.y, len, GLYPH)
        } else {
            let y = if positive { end - GAP as f64 - len as f64 } else { end + GAP as f64 };
            let x = (cb.cx() - GLYPH as f64 / 2.0).max(0.0) as u32;
            let y = y.clamp(0.0, cb.y.saturating_sub(len) as f64) as u32;
            BBox::new(x, y, GLYPH, len)
        };
        out.regions.push(TextRegion {
            text,
            bbox,
            role: Some(Role::TickValue),
            confidence: 0.5,
        });
    }
    out.sort_reading_order();
    Ok(out)
}

/// OCR-like corruption settings.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Noise {
    pub drop_prob: f64,
    pub char_err_prob: f64,
    pub jitter_px: u32,
}

const SUBSTITUTES: &[u8] = b"abcdefghijklmnopqrstuvwxyz0123456789";

/// Drops whole regions, substitutes characters and jitters boxes,
/// deterministically for a given seed.
pub fn perturb(output: &ReadOutput, noise: Noise, seed: u64) -> ReadOutput {
    assert!((0.0..=1.0).contains(&noise.drop_prob) && (0.0..=1.0).contains(&noise.char_err_prob));
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (cw, ch) = (output.canvas.width, output.canvas.height);
    let j = noise.jitter_px as i64;
    let mut regions = Vec::with_capacity(output.regions.len());
    for r in &output.regions {
        if rng.random_bool(noise.drop_prob) {
            continue;
        }
        let text: String = r
            .text
            .chars()
            .map(|c| {
                if !c.is_whitespace() && rng.random_bool(noise.char_err_prob) {
                    loop {
                        let s = SUBSTITUTES[rng.random_range(0..SUBSTITUTES.len())] as char;
                        if s != c {
                            break s;
                        }
                    }
                } else {
                    c
                }
            })
            .collect();
        let dx = rng.random_range(-j..=j);
        let dy = rng.random_range(-j..=j);
        let shift = |v: u32, d: i64, size: u32, extent: u32| -> u32 {
            (v as i64 + d).clamp(0, extent.saturating_sub(size) as i64) as u32
        };
        let b = r.bbox;
        let bbox = if j == 0 {
            b
        } else {
            BBox::new(shift(b.x, dx, b.w, cw), shift(b.y, dy, b.h, ch), b.w, b.h)
        };
        regions.push(TextRegion {
            text,
            bbox,
            role: r.role,
            confidence: r.confidence,
        });
    }
    ReadOutput {
        regions,
        canvas: output.canvas,
        source: output.source,
    }
}
