//! Deterministic bar-chart rendering with a ground-truth layout sidecar.
//!
//! Text is drawn with an embedded 8×8 bitmap font, so layout arithmetic is
//! exact and identical on every platform. Every chart carries one region per
//! axis title, category tick, value tick and bar value annotation.

mod layout;
mod raster;

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::BBox;
use crate::linker::SubTable;

pub use layout::{
    layout_metrics, nice_step, plan_layout, text_size, tick_values, LayoutMetrics, BAR_FILL, GAP, GLYPH,
    MIN_PITCH, MIN_VALUE_LENGTH, PAD,
};
pub use raster::{render_svg, BACKGROUND_GRAY, BACKGROUND_WHITE};

#[derive(Debug, Error)]
pub enum RenderError {
    #[error("layout overflow: {0}")]
    LayoutOverflow(String),
    #[error("invalid chart spec: {0}")]
    InvalidSpec(String),
    #[error("image encoding failed: {0}")]
    Encode(String),
    #[error("i/o failure on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed sidecar {path}: {reason}")]
    MalformedSidecar { path: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BarColor {
    Green,
    Blue,
    Pink,
}

impl BarColor {
    pub const ALL: [BarColor; 3] = [BarColor::Green, BarColor::Blue, BarColor::Pink];

    pub fn rgb(self) -> [u8; 3] {
        match self {
            BarColor::Green => [46, 139, 87],
            BarColor::Blue => [31, 119, 180],
            BarColor::Pink => [227, 119, 194],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Grid {
    None,
    White,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Background {
    White,
    Gray,
}

/// One point of the chart style space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Style {
    pub orientation: Orientation,
    pub bar_color: BarColor,
    pub grid: Grid,
    pub background: Background,
}

/// The full Cartesian product of orientations, colors, grids and backgrounds.
pub fn enumerate_styles() -> Vec<Style> {
    let mut out = Vec::with_capacity(24);
    for orientation in [Orientation::Horizontal, Orientation::Vertical] {
        for bar_color in BarColor::ALL {
            for grid in [Grid::None, Grid::White] {
                for background in [Background::White, Background::Gray] {
                    out.push(Style {
                        orientation,
                        bar_color,
                        grid,
                        background,
                    });
                }
            }
        }
    }
    out
}

/// 64-bit FNV-1a.
pub(crate) fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Style for a sample, chosen by hashing its id with the style seed.
pub fn style_for(sample_id: &str, style_seed: u64) -> Style {
    let mut key = style_seed.to_le_bytes().to_vec();
    key.extend_from_slice(sample_id.as_bytes());
    let styles = enumerate_styles();
    styles[(fnv1a(&key) % styles.len() as u64) as usize]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
}

impl Default for Canvas {
    fn default() -> Self {
        Canvas {
            width: 640,
            height: 480,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Bar {
    pub label: String,
    pub value: f64,
    /// Annotation text drawn at the bar end, verbatim from the source cell.
    pub value_text: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChartSpec {
    pub orientation: Orientation,
    pub bar_color: BarColor,
    pub grid: Grid,
    pub background: Background,
    pub category_axis_title: String,
    pub value_axis_title: String,
    pub bars: Vec<Bar>,
    pub canvas: Canvas,
    pub style_seed: u64,
}

impl ChartSpec {
    pub fn from_subtable(sub: &SubTable, style: Style, canvas: Canvas, style_seed: u64) -> Self {
        ChartSpec {
            orientation: style.orientation,
            bar_color: style.bar_color,
            grid: style.grid,
            background: style.background,
            category_axis_title: sub.category_header.clone(),
            value_axis_title: sub.value_header.clone(),
            bars: sub
                .rows
                .iter()
                .map(|r| Bar {
                    label: r.category.clone(),
                    value: r.value.value,
                    value_text: r.value.text.clone(),
                })
                .collect(),
            canvas,
            style_seed,
        }
    }

    pub fn style(&self) -> Style {
        Style {
            orientation: self.orientation,
            bar_color: self.bar_color,
            grid: self.grid,
            background: self.background,
        }
    }

    /// Title drawn under the horizontal axis.
    pub fn x_axis_title(&self) -> &str {
        match self.orientation {
            Orientation::Horizontal => &self.value_axis_title,
            Orientation::Vertical => &self.category_axis_title,
        }
    }

    /// Title drawn beside the vertical axis.
    pub fn y_axis_title(&self) -> &str {
        match self.orientation {
            Orientation::Horizontal => &self.category_axis_title,
            Orientation::Vertical => &self.value_axis_title,
        }
    }

    pub fn validate(&self) -> Result<(), RenderError> {
        let bad = |m: String| Err(RenderError::InvalidSpec(m));
        if self.bars.is_empty() || self.bars.len() > crate::linker::MAX_SUBTABLE_ROWS {
            return bad(format!("bar count {} outside 1..=20", self.bars.len()));
        }
        if self.canvas.width < 320 || self.canvas.height < 240 {
            return bad(format!("canvas {}x{} below 320x240", self.canvas.width, self.canvas.height));
        }
        if let Some(b) = self.bars.iter().find(|b| !b.value.is_finite()) {
            return bad(format!("non-finite value for {:?}", b.label));
        }
        let blank = |s: &str| s.trim().is_empty();
        if blank(&self.category_axis_title) || blank(&self.value_axis_title) {
            return bad("empty axis title".into());
        }
        if let Some(b) = self.bars.iter().find(|b| blank(&b.label) || blank(&b.value_text)) {
            return bad(format!("empty label or value text for bar {:?}", b.label));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    AxisTitleX,
    AxisTitleY,
    TickCategory,
    TickValue,
}

impl Role {
    pub fn is_title(self) -> bool {
        matches!(self, Role::AxisTitleX | Role::AxisTitleY)
    }
}

/// A text region of the layout. Value annotations are `TickValue` regions
/// that carry the index of their bar; axis ticks carry none.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRegion {
    pub text: String,
    pub role: Role,
    #[serde(flatten)]
    pub bbox: BBox,
    /// Text drawn rotated 90° counter-clockwise.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub rotated: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub bar_index: Option<usize>,
}

/// Ground-truth layout document written next to each chart image.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub regions: Vec<LayoutRegion>,
    pub spec: ChartSpec,
    pub values: Vec<f64>,
    pub bar_geometry: Vec<BBox>,
}

impl Sidecar {
    pub fn write(&self, path: &Path) -> Result<(), RenderError> {
        let text = serde_json::to_string_pretty(self).expect("sidecar serializes");
        fs::write(path, text).map_err(|source| RenderError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, RenderError> {
        let text = fs::read_to_string(path).map_err(|source| RenderError::Io {
            path: path.display().to_string(),
            source,
        })?;
        serde_json::from_str(&text).map_err(|e| RenderError::MalformedSidecar {
            path: path.display().to_string(),
            reason: e.to_string(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ChartArtifact {
    /// PNG-encoded RGB raster.
    pub image: Vec<u8>,
    pub sidecar: Option<Sidecar>,
}

impl ChartArtifact {
    /// Loads an image and, if present, its sidecar.
    pub fn load(image_path: &Path, sidecar_path: &Path) -> Result<Self, RenderError> {
        let image = fs::read(image_path).map_err(|source| RenderError::Io {
            path: image_path.display().to_string(),
            source,
        })?;
        let sidecar = if sidecar_path.exists() {
            Some(Sidecar::read(sidecar_path)?)
        } else {
            None
        };
        Ok(ChartArtifact { image, sidecar })
    }

    pub fn spec(&self) -> Option<&ChartSpec> {
        self.sidecar.as_ref().map(|s| &s.spec)
    }
}

/// Plans and rasterizes a chart. The PNG bytes depend only on `spec`.
pub fn render(spec: &ChartSpec) -> Result<ChartArtifact, RenderError> {
    let plan = layout::plan(spec)?;
    let image = raster::rasterize(spec, &plan)?;
    Ok(ChartArtifact {
        image,
        sidecar: Some(Sidecar {
            values: spec.bars.iter().map(|b| b.value).collect(),
            regions: plan.regions,
            spec: spec.clone(),
            bar_geometry: plan.bars,
        }),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn spec(orientation: Orientation, background: Background) -> ChartSpec {
        let sub = crate::synth::sprint_subtable();
        ChartSpec::from_subtable(
            &sub,
            Style {
                orientation,
                bar_color: BarColor::Blue,
                grid: Grid::White,
                background,
            },
            Canvas::default(),
            0,
        )
    }

    #[test]
    fn style_space() {
        let styles = enumerate_styles();
        assert_eq!(styles.len(), 24);
        assert_eq!(styles.iter().collect::<HashSet<_>>().len(), 24);
        assert!(styles.contains(&Style {
            orientation: Orientation::Horizontal,
            bar_color: BarColor::Green,
            grid: Grid::None,
            background: Background::White,
        }));
    }

    #[test]
    fn style_hash_covers_all_styles() {
        let seen: HashSet<_> = (0..400).map(|i| style_for(&format!("s{i}"), 7)).collect();
        assert_eq!(seen.len(), 24);
        assert_eq!(style_for("abc", 1), style_for("abc", 1));
    }

    #[test]
    fn render_is_deterministic() {
        let s = spec(Orientation::Horizontal, Background::White);
        let a = render(&s).unwrap();
        let b = render(&s).unwrap();
        assert_eq!(a.image, b.image);
        assert_eq!(a.sidecar, b.sidecar);
        assert_eq!(a.sidecar.unwrap().regions, plan_layout(&s).unwrap().0);
    }

    #[test]
    fn gray_background_corner_pixel() {
        for (bg, rgb) in [(Background::Gray, BACKGROUND_GRAY), (Background::White, BACKGROUND_WHITE)] {
            let art = render(&spec(Orientation::Vertical, bg)).unwrap();
            let img = image::load_from_memory(&art.image).unwrap().to_rgb8();
            assert_eq!(img.dimensions(), (640, 480));
            assert_eq!(img.get_pixel(0, 0).0, rgb);
            assert_eq!(img.get_pixel(639, 479).0, rgb);
        }
    }

    #[test]
    fn orientation_flip_moves_category_ticks() {
        let h = plan_layout(&spec(Orientation::Horizontal, Background::White)).unwrap().0;
        let v = plan_layout(&spec(Orientation::Vertical, Background::White)).unwrap().0;
        let cats = |regions: &[LayoutRegion]| -> Vec<BBox> {
            let mut c: Vec<&LayoutRegion> = regions.iter().filter(|r| r.role == Role::TickCategory).collect();
            c.sort_by_key(|r| r.bar_index);
            c.iter().map(|r| r.bbox).collect()
        };
        // horizontal: one column on the left, stacked top to bottom
        let hc = cats(&h);
        assert!(hc.iter().all(|b| b.right() == hc[0].right()));
        assert!(hc.windows(2).all(|w| w[0].cy() < w[1].cy()));
        // vertical: one row under the plot, left to right
        let vc = cats(&v);
        assert!(vc.iter().all(|b| b.y == vc[0].y));
        assert!(vc.windows(2).all(|w| w[0].cx() < w[1].cx()));
        let rotated = |regions: &[LayoutRegion]| regions.iter().filter(|r| r.role == Role::TickCategory).all(|r| r.rotated);
        assert!(rotated(&v) && !h.iter().any(|r| r.rotated && r.role == Role::TickCategory));
    }

    #[test]
    fn sidecar_round_trip() {
        let art = render(&spec(Orientation::Vertical, Background::Gray)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let img = dir.path().join("a.png");
        let side = dir.path().join("a.json");
        fs::write(&img, &art.image).unwrap();
        art.sidecar.as_ref().unwrap().write(&side).unwrap();
        assert_eq!(ChartArtifact::load(&img, &side).unwrap(), art);
        let missing = ChartArtifact::load(&img, &dir.path().join("none.json")).unwrap();
        assert!(missing.sidecar.is_none());
    }

    #[test]
    fn invalid_specs_rejected() {
        let mut s = spec(Orientation::Horizontal, Background::White);
        s.canvas = Canvas {
            width: 300,
            height: 240,
        };
        assert!(matches!(render(&s), Err(RenderError::InvalidSpec(_))));
        let mut s = spec(Orientation::Horizontal, Background::White);
        s.bars[0].value = f64::NAN;
        assert!(matches!(render(&s), Err(RenderError::InvalidSpec(_))));
        s.bars.clear();
        assert!(matches!(render(&s), Err(RenderError::InvalidSpec(_))));
    }
}
