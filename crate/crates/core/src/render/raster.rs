use std::fmt::Write as _;
use std::io::Cursor;

use font8x8::legacy::BASIC_LEGACY;
use image::{ImageFormat, RgbImage};

use super::layout::{self, Plan, GLYPH, PAD};
use super::{Background, ChartSpec, Grid, LayoutRegion, Orientation, RenderError};

pub const BACKGROUND_WHITE: [u8; 3] = [255, 255, 255];
pub const BACKGROUND_GRAY: [u8; 3] = [234, 234, 242];
const GRID_ON_WHITE: [u8; 3] = [225, 225, 225];
const GRID_ON_GRAY: [u8; 3] = [255, 255, 255];
const AXIS: [u8; 3] = [60, 60, 60];
const INK: [u8; 3] = [0, 0, 0];

fn background(spec: &ChartSpec) -> [u8; 3] {
    match spec.background {
        Background::White => BACKGROUND_WHITE,
        Background::Gray => BACKGROUND_GRAY,
    }
}

fn grid_color(spec: &ChartSpec) -> [u8; 3] {
    match spec.background {
        Background::White => GRID_ON_WHITE,
        Background::Gray => GRID_ON_GRAY,
    }
}

fn glyph(c: char) -> &'static [u8; 8] {
    let i = if c.is_ascii() && !c.is_ascii_control() { c as usize } else { '?' as usize };
    &BASIC_LEGACY[i]
}

struct Raster {
    width: u32,
    height: u32,
    buf: Vec<u8>,
}

impl Raster {
    fn new(width: u32, height: u32, fill: [u8; 3]) -> Self {
        let buf = fill.iter().copied().cycle().take((width * height * 3) as usize).collect();
        Raster { width, height, buf }
    }

    fn put(&mut self, x: u32, y: u32, rgb: [u8; 3]) {
        if x < self.width && y < self.height {
            let i = ((y * self.width + x) * 3) as usize;
            self.buf[i..i + 3].copy_from_slice(&rgb);
        }
    }

    fn fill(&mut self, x: u32, y: u32, w: u32, h: u32, rgb: [u8; 3]) {
        for yy in y..y.saturating_add(h) {
            for xx in x..x.saturating_add(w) {
                self.put(xx, yy, rgb);
            }
        }
    }

    fn text(&mut self, region: &LayoutRegion) {
        let (x, y) = (region.bbox.x, region.bbox.y);
        let n = region.text.chars().count() as u32;
        for (i, c) in region.text.chars().enumerate() {
            let rows = glyph(c);
            for (gy, bits) in rows.iter().enumerate() {
                for gx in 0..GLYPH {
                    if bits >> gx & 1 == 0 {
                        continue;
                    }
                    let (gx, gy) = (gx, gy as u32);
                    if region.rotated {
                        // 90° counter-clockwise: the string runs bottom to top.
                        let cell_top = y + GLYPH * (n - 1 - i as u32);
                        self.put(x + gy, cell_top + GLYPH - 1 - gx, INK);
                    } else {
                        self.put(x + GLYPH * i as u32 + gx, y + gy, INK);
                    }
                }
            }
        }
    }
}

pub(crate) fn rasterize(spec: &ChartSpec, plan: &Plan) -> Result<Vec<u8>, RenderError> {
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    let mut r = Raster::new(w, h, background(spec));
    let bar_rgb = spec.bar_color.rgb();
    match spec.orientation {
        Orientation::Horizontal => {
            let span = plan.axis_y - PAD;
            if spec.grid == Grid::White {
                for &t in &plan.tick_px {
                    r.fill(t, PAD, 1, span, grid_color(spec));
                }
            }
            for b in &plan.bars {
                r.fill(b.x, b.y, b.w, b.h, bar_rgb);
            }
            r.fill(plan.axis_x, PAD, 1, span + 1, AXIS);
            r.fill(plan.zero_px, PAD, 1, span + 1, AXIS);
            r.fill(plan.axis_x, plan.axis_y, plan.frame_value_end - plan.axis_x + 1, 1, AXIS);
        }
        Orientation::Vertical => {
            let span = plan.frame_category_end - plan.axis_x;
            if spec.grid == Grid::White {
                for &t in &plan.tick_px {
                    r.fill(plan.axis_x, t, span, 1, grid_color(spec));
                }
            }
            for b in &plan.bars {
                r.fill(b.x, b.y, b.w, b.h, bar_rgb);
            }
            r.fill(plan.axis_x, PAD, 1, plan.axis_y - PAD + 1, AXIS);
            r.fill(plan.axis_x, plan.axis_y, span + 1, 1, AXIS);
            r.fill(plan.axis_x, plan.zero_px, span + 1, 1, AXIS);
        }
    }
    for region in &plan.regions {
        r.text(region);
    }
    let img = RgbImage::from_raw(w, h, r.buf).expect("buffer matches canvas");
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| RenderError::Encode(e.to_string()))?;
    Ok(out.into_inner())
}

fn hex([r, g, b]: [u8; 3]) -> String {
    format!("#{r:02x}{g:02x}{b:02x}")
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Vector rendering of the same layout, for inspection.
pub fn render_svg(spec: &ChartSpec) -> Result<String, RenderError> {
    let plan = layout::plan(spec)?;
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="{}"/>"#, hex(background(spec)));
    for b in &plan.bars {
        let _ = writeln!(
            s,
            r#"<rect x="{}" y="{}" width="{}" height="{}" fill="{}"/>"#,
            b.x,
            b.y,
            b.w,
            b.h,
            hex(spec.bar_color.rgb())
        );
    }
    for r in &plan.regions {
        let b = r.bbox;
        if r.rotated {
            let (cx, by) = (b.x + b.w, b.bottom());
            let _ = writeln!(
                s,
                r#"<text x="{cx}" y="{by}" transform="rotate(-90 {cx} {by})" font-family="monospace" font-size="8">{}</text>"#,
                escape(&r.text)
            );
        } else {
            let _ = writeln!(
                s,
                r#"<text x="{}" y="{}" font-family="monospace" font-size="8">{}</text>"#,
                b.x,
                b.bottom(),
                escape(&r.text)
            );
        }
    }
    s.push_str("</svg>\n");
    Ok(s)
}
