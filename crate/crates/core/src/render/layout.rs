use crate::geometry::{reading_order, BBox};

use super::{ChartSpec, LayoutRegion, Orientation, RenderError, Role};

/// Glyph cell size of the embedded font, in pixels.
pub const GLYPH: u32 = 8;
/// Canvas padding.
pub const PAD: u32 = 8;
/// Gap between text and the element it labels.
pub const GAP: u32 = 4;
/// Smallest category slot pitch that still separates adjacent labels.
pub const MIN_PITCH: f64 = 14.0;
/// Fraction of a category slot filled by its bar.
pub const BAR_FILL: f64 = 0.6;
/// Shortest usable value axis, in pixels.
pub const MIN_VALUE_LENGTH: f64 = 40.0;

/// Pixel size of `text`; rotated text runs bottom to top.
pub fn text_size(text: &str, rotated: bool) -> (u32, u32) {
    let n = text.chars().count() as u32;
    if rotated {
        (GLYPH, GLYPH * n)
    } else {
        (GLYPH * n, GLYPH)
    }
}

/// Smallest step of the form {1, 2, 5}·10^k that is ≥ `raw`, as (mantissa, k).
pub fn nice_step(raw: f64) -> (u32, i32) {
    assert!(raw > 0.0 && raw.is_finite());
    let mut e = raw.log10().floor() as i32;
    loop {
        for m in [1u32, 2, 5] {
            if m as f64 * 10f64.powi(e) >= raw * (1.0 - 1e-12) {
                return (m, e);
            }
        }
        e += 1;
    }
}

fn next_step((m, e): (u32, i32)) -> (u32, i32) {
    match m {
        1 => (2, e),
        2 => (5, e),
        _ => (1, e + 1),
    }
}

/// Round-number ticks `k·step` inside `[lo, hi]` with their labels.
pub fn tick_values(lo: f64, hi: f64, (m, e): (u32, i32)) -> Vec<(f64, String)> {
    let step = m as f64 * 10f64.powi(e);
    let k_min = (lo / step - 1e-9).ceil() as i64;
    let k_max = (hi / step + 1e-9).floor() as i64;
    (k_min..=k_max)
        .map(|k| {
            let units = k * m as i64;
            let value = units as f64 * 10f64.powi(e);
            let text = if e >= 0 {
                (units * 10i64.pow(e as u32)).to_string()
            } else {
                format!("{:.*}", (-e) as usize, value)
            };
            (value, text)
        })
        .collect()
}

/// Everything the rasterizer needs besides the text regions.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Plan {
    pub regions: Vec<LayoutRegion>,
    pub bars: Vec<BBox>,
    /// Axis corner: the category axis line and the value axis line meet here.
    pub axis_x: u32,
    pub axis_y: u32,
    /// Far end of the frame along the value direction (x for horizontal
    /// charts, y for vertical ones) and along the category direction.
    pub frame_value_end: u32,
    pub frame_category_end: u32,
    /// Pixel coordinate of every value tick along the value axis.
    pub tick_px: Vec<u32>,
    pub zero_px: u32,
    pub pitch: f64,
    pub value_length: f64,
}

/// Public summary of a layout, for diagnostics.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LayoutMetrics {
    pub pitch: f64,
    pub value_length: f64,
}

enum Attempt {
    Fits(Box<Plan>),
    TickCollision,
}

fn overflow<T>(msg: impl Into<String>) -> Result<T, RenderError> {
    Err(RenderError::LayoutOverflow(msg.into()))
}

fn px(v: f64, what: &str) -> Result<u32, RenderError> {
    let r = v.round();
    if r < 0.0 || r > u32::MAX as f64 {
        return overflow(format!("{what} falls outside the canvas"));
    }
    Ok(r as u32)
}

fn region(text: &str, role: Role, x: u32, y: u32, rotated: bool, bar_index: Option<usize>) -> LayoutRegion {
    let (w, h) = text_size(text, rotated);
    LayoutRegion {
        text: text.to_string(),
        role,
        bbox: BBox::new(x, y, w, h),
        rotated,
        bar_index,
    }
}

fn value_range(spec: &ChartSpec) -> (f64, f64) {
    let lo = spec.bars.iter().map(|b| b.value).fold(0.0, f64::min);
    let mut hi = spec.bars.iter().map(|b| b.value).fold(0.0, f64::max);
    if hi == lo {
        hi = lo + 1.0;
    }
    (lo, hi)
}

/// Lays out the chart: text regions in reading order plus per-bar pixel
/// rectangles.
pub fn plan_layout(spec: &ChartSpec) -> Result<(Vec<LayoutRegion>, Vec<BBox>), RenderError> {
    let plan = plan(spec)?;
    Ok((plan.regions, plan.bars))
}

pub fn layout_metrics(spec: &ChartSpec) -> Result<LayoutMetrics, RenderError> {
    let plan = plan(spec)?;
    Ok(LayoutMetrics { pitch: plan.pitch, value_length: plan.value_length })
}

pub(crate) fn plan(spec: &ChartSpec) -> Result<Plan, RenderError> {
    spec.validate()?;
    let (lo, hi) = value_range(spec);
    let mut step = nice_step((hi - lo) / 5.0);
    for _ in 0..16 {
        let ticks = tick_values(lo, hi, step);
        if ticks.len() < 2 {
            return overflow("value tick labels do not fit the value axis");
        }
        let attempt = match spec.orientation {
            Orientation::Horizontal => horizontal(spec, lo, hi, &ticks)?,
            Orientation::Vertical => vertical(spec, lo, hi, &ticks)?,
        };
        match attempt {
            Attempt::Fits(mut plan) => {
                check_regions(spec, &plan.regions)?;
                let order = reading_order(&plan.regions.iter().map(|r| r.bbox).collect::<Vec<_>>(), |a, b| {
                    let (ra, rb) = (&plan.regions[a], &plan.regions[b]);
                    (ra.role, &ra.text, ra.bar_index).cmp(&(rb.role, &rb.text, rb.bar_index))
                });
                plan.regions = order.into_iter().map(|i| plan.regions[i].clone()).collect();
                return Ok(*plan);
            }
            Attempt::TickCollision => step = next_step(step),
        }
    }
    overflow("value tick labels collide at every step size")
}

fn check_regions(spec: &ChartSpec, regions: &[LayoutRegion]) -> Result<(), RenderError> {
    let (w, h) = (spec.canvas.width, spec.canvas.height);
    for r in regions {
        if !r.bbox.within(w, h) {
            return overflow(format!("{:?} label {:?} leaves the canvas", r.role, r.text));
        }
    }
    for (i, a) in regions.iter().enumerate() {
        for b in &regions[i + 1..] {
            if a.bbox.overlaps(&b.bbox) {
                return overflow(format!("labels {:?} and {:?} overlap", a.text, b.text));
            }
        }
    }
    Ok(())
}

fn max_width<'a>(texts: impl Iterator<Item = &'a str>, rotated: bool) -> u32 {
    texts
        .map(|t| {
            let (w, h) = text_size(t, rotated);
            if rotated {
                h
            } else {
                w
            }
        })
        .max()
        .unwrap_or(0)
}

fn annotation_reserve(spec: &ChartSpec, negative: bool, rotated: bool) -> u32 {
    let extent = max_width(
        spec.bars
            .iter()
            .filter(|b| (b.value < 0.0) == negative)
            .map(|b| b.value_text.as_str()),
        rotated,
    );
    if extent == 0 {
        0
    } else {
        GAP + extent
    }
}

fn horizontal(spec: &ChartSpec, lo: f64, hi: f64, ticks: &[(f64, String)]) -> Result<Attempt, RenderError> {
    let (cw, ch) = (spec.canvas.width as f64, spec.canvas.height as f64);
    let (pad, gap, glyph) = (PAD as f64, GAP as f64, GLYPH as f64);
    let n = spec.bars.len();

    let cat_w = max_width(spec.bars.iter().map(|b| b.label.as_str()), false) as f64;
    let axis_x = pad + glyph + 2.0 * gap + cat_w + gap;
    let reserve_pos = annotation_reserve(spec, false, false) as f64;
    let reserve_neg = annotation_reserve(spec, true, false) as f64;
    let last_half = text_size(&ticks[ticks.len() - 1].1, false).0 as f64 / 2.0;
    let frame_right = (cw - pad).min(cw - pad + reserve_pos - last_half);
    let p_lo = axis_x + reserve_neg;
    let p_hi = frame_right - reserve_pos;
    let length = p_hi - p_lo;
    if length < MIN_VALUE_LENGTH {
        return overflow(format!("value axis is {length:.1}px long"));
    }
    let pos = |v: f64| p_lo + (v - lo) / (hi - lo) * length;

    let axis_y = ch - pad - 2.0 * glyph - 2.0 * gap;
    let pitch = (axis_y - pad) / n as f64;
    if pitch < MIN_PITCH {
        return overflow(format!("{n} bars leave a {pitch:.1}px category pitch"));
    }
    let thick = (BAR_FILL * pitch).round().max(1.0);

    let mut regions = Vec::with_capacity(2 * n + ticks.len() + 2);
    let mut bars = Vec::with_capacity(n);
    for (i, bar) in spec.bars.iter().enumerate() {
        let center = pad + (i as f64 + 0.5) * pitch;
        let y0 = px(center - thick / 2.0, "bar")?;
        let (zero, end) = (pos(0.0), pos(bar.value));
        let x0 = px(zero.min(end), "bar")?;
        let x1 = px(zero.max(end), "bar")?;
        bars.push(BBox::new(x0, y0, x1 - x0, thick as u32));

        let text_y = px(center - glyph / 2.0, "label")?;
        let (lw, _) = text_size(&bar.label, false);
        let lx = px(axis_x - gap - lw as f64, "category label")?;
        regions.push(region(&bar.label, Role::TickCategory, lx, text_y, false, Some(i)));

        let (aw, _) = text_size(&bar.value_text, false);
        let ax = if bar.value >= 0.0 {
            end.round() + gap
        } else {
            end.round() - gap - aw as f64
        };
        regions.push(region(&bar.value_text, Role::TickValue, px(ax, "annotation")?, text_y, false, Some(i)));
    }

    let tick_y = px(axis_y + gap, "tick")?;
    let mut tick_px = Vec::with_capacity(ticks.len());
    let mut prev_right: Option<u32> = None;
    for (value, text) in ticks {
        let (w, _) = text_size(text, false);
        let p = pos(*value);
        let x = px(p - w as f64 / 2.0, "tick label")?;
        if prev_right.is_some_and(|r| x < r + GAP) {
            return Ok(Attempt::TickCollision);
        }
        prev_right = Some(x + w);
        tick_px.push(px(p, "tick")?);
        regions.push(region(text, Role::TickValue, x, tick_y, false, None));
    }

    let x_title = spec.x_axis_title();
    let (tw, _) = text_size(x_title, false);
    if tw as f64 > cw - 2.0 * pad {
        return overflow("x-axis title wider than the canvas");
    }
    let tx = ((axis_x + frame_right) / 2.0 - tw as f64 / 2.0).clamp(pad, cw - pad - tw as f64);
    regions.push(region(x_title, Role::AxisTitleX, px(tx, "title")?, px(ch - pad - glyph, "title")?, false, None));

    let y_title = spec.y_axis_title();
    let (_, th) = text_size(y_title, true);
    if th as f64 > axis_y - pad {
        return overflow("y-axis title taller than the plot");
    }
    let ty = ((pad + axis_y) / 2.0 - th as f64 / 2.0).clamp(pad, axis_y - th as f64);
    regions.push(region(y_title, Role::AxisTitleY, PAD, px(ty, "title")?, true, None));

    Ok(Attempt::Fits(Box::new(Plan {
        regions,
        bars,
        axis_x: px(axis_x, "axis")?,
        axis_y: px(axis_y, "axis")?,
        frame_value_end: px(frame_right, "frame")?,
        frame_category_end: PAD,
        tick_px,
        zero_px: px(pos(0.0), "axis")?,
        pitch,
        value_length: length,
    })))
}

fn vertical(spec: &ChartSpec, lo: f64, hi: f64, ticks: &[(f64, String)]) -> Result<Attempt, RenderError> {
    let (cw, ch) = (spec.canvas.width as f64, spec.canvas.height as f64);
    let (pad, gap, glyph) = (PAD as f64, GAP as f64, GLYPH as f64);
    let n = spec.bars.len();

    let tick_w = max_width(ticks.iter().map(|t| t.1.as_str()), false) as f64;
    let axis_x = pad + glyph + 2.0 * gap + tick_w + gap;
    let cat_h = max_width(spec.bars.iter().map(|b| b.label.as_str()), true) as f64;
    let axis_y = ch - pad - glyph - 2.0 * gap - cat_h;
    let reserve_pos = annotation_reserve(spec, false, true) as f64;
    let reserve_neg = annotation_reserve(spec, true, true) as f64;
    let p_hi = pad + reserve_pos.max(glyph / 2.0);
    let p_lo = axis_y - reserve_neg;
    let length = p_lo - p_hi;
    if length < MIN_VALUE_LENGTH {
        return overflow(format!("value axis is {length:.1}px long"));
    }
    let pos = |v: f64| p_lo - (v - lo) / (hi - lo) * length;

    let frame_right = cw - pad;
    let pitch = (frame_right - axis_x) / n as f64;
    if pitch < MIN_PITCH {
        return overflow(format!("{n} bars leave a {pitch:.1}px category pitch"));
    }
    let thick = (BAR_FILL * pitch).round().max(1.0);

    let mut regions = Vec::with_capacity(2 * n + ticks.len() + 2);
    let mut bars = Vec::with_capacity(n);
    for (i, bar) in spec.bars.iter().enumerate() {
        let center = axis_x + (i as f64 + 0.5) * pitch;
        let x0 = px(center - thick / 2.0, "bar")?;
        let (zero, end) = (pos(0.0), pos(bar.value));
        let y0 = px(zero.min(end), "bar")?;
        let y1 = px(zero.max(end), "bar")?;
        bars.push(BBox::new(x0, y0, thick as u32, y1 - y0));

        let text_x = px(center - glyph / 2.0, "label")?;
        regions.push(region(&bar.label, Role::TickCategory, text_x, px(axis_y + gap, "label")?, true, Some(i)));

        let (_, ah) = text_size(&bar.value_text, true);
        let ay = if bar.value >= 0.0 {
            end.round() - gap - ah as f64
        } else {
            end.round() + gap
        };
        regions.push(region(&bar.value_text, Role::TickValue, text_x, px(ay, "annotation")?, true, Some(i)));
    }

    let mut tick_px = Vec::with_capacity(ticks.len());
    let mut prev_top: Option<u32> = None;
    for (value, text) in ticks {
        let (w, _) = text_size(text, false);
        let p = pos(*value);
        let y = px(p - glyph / 2.0, "tick label")?;
        if prev_top.is_some_and(|top| y + GLYPH + 2 > top) {
            return Ok(Attempt::TickCollision);
        }
        prev_top = Some(y);
        tick_px.push(px(p, "tick")?);
        regions.push(region(text, Role::TickValue, px(axis_x - gap - w as f64, "tick")?, y, false, None));
    }

    let x_title = spec.x_axis_title();
    let (tw, _) = text_size(x_title, false);
    if tw as f64 > cw - 2.0 * pad {
        return overflow("x-axis title wider than the canvas");
    }
    let tx = ((axis_x + frame_right) / 2.0 - tw as f64 / 2.0).clamp(pad, cw - pad - tw as f64);
    regions.push(region(x_title, Role::AxisTitleX, px(tx, "title")?, px(ch - pad - glyph, "title")?, false, None));

    let y_title = spec.y_axis_title();
    let (_, th) = text_size(y_title, true);
    if th as f64 > axis_y - pad {
        return overflow("y-axis title taller than the plot");
    }
    let ty = ((pad + axis_y) / 2.0 - th as f64 / 2.0).clamp(pad, axis_y - th as f64);
    regions.push(region(y_title, Role::AxisTitleY, PAD, px(ty, "title")?, true, None));

    Ok(Attempt::Fits(Box::new(Plan {
        regions,
        bars,
        axis_x: px(axis_x, "axis")?,
        axis_y: px(axis_y, "axis")?,
        frame_value_end: PAD,
        frame_category_end: px(frame_right, "frame")?,
        tick_px,
        zero_px: px(pos(0.0), "axis")?,
        pitch,
        value_length: length,
    })))
}
