//! Pixel boxes and the reading-order contract shared by the renderer and
//! the reader.

use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

/// Axis-aligned box; `(x, y)` is the top-left corner, y grows downward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct BBox {
    pub x: u32,
    pub y: u32,
    pub w: u32,
    pub h: u32,
}

impl BBox {
    pub fn new(x: u32, y: u32, w: u32, h: u32) -> Self {
        BBox { x, y, w, h }
    }

    pub fn right(&self) -> u32 {
        self.x + self.w
    }

    pub fn bottom(&self) -> u32 {
        self.y + self.h
    }

    pub fn cx(&self) -> f64 {
        self.x as f64 + self.w as f64 / 2.0
    }

    pub fn cy(&self) -> f64 {
        self.y as f64 + self.h as f64 / 2.0
    }

    pub fn overlaps(&self, other: &BBox) -> bool {
        self.x < other.right() && other.x < self.right() && self.y < other.bottom() && other.y < self.bottom()
    }

    pub fn within(&self, width: u32, height: u32) -> bool {
        self.w > 0 && self.h > 0 && self.right() <= width && self.bottom() <= height
    }
}

fn median(mut xs: Vec<f64>) -> f64 {
    if xs.is_empty() {
        return 0.0;
    }
    xs.sort_by(|a, b| a.total_cmp(b));
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        (xs[n / 2 - 1] + xs[n / 2]) / 2.0
    }
}

/// Permutation of `0..boxes.len()` in reading order: boxes are grouped into
/// rows whose y-centers lie within half the median box height of the row's
/// first box, rows go top to bottom and boxes within a row left to right.
///
/// `tie` breaks exact geometric ties so the result does not depend on the
/// input order.
pub fn reading_order<F>(boxes: &[BBox], mut tie: F) -> Vec<usize>
where
    F: FnMut(usize, usize) -> Ordering,
{
    let tol = median(boxes.iter().map(|b| b.h as f64).collect()) / 2.0;
    let mut idx: Vec<usize> = (0..boxes.len()).collect();
    idx.sort_by(|&a, &b| {
        boxes[a]
            .cy()
            .total_cmp(&boxes[b].cy())
            .then(boxes[a].cx().total_cmp(&boxes[b].cx()))
            .then_with(|| tie(a, b))
    });
    let mut rows: Vec<Vec<usize>> = Vec::new();
    let mut anchor = f64::NEG_INFINITY;
    for i in idx {
        let cy = boxes[i].cy();
        match rows.last_mut() {
            Some(row) if cy - anchor <= tol => row.push(i),
            _ => {
                anchor = cy;
                rows.push(vec![i]);
            }
        }
    }
    let mut out = Vec::with_capacity(boxes.len());
    for mut row in rows {
        row.sort_by(|&a, &b| {
            boxes[a]
                .cx()
                .total_cmp(&boxes[b].cx())
                .then(boxes[a].cy().total_cmp(&boxes[b].cy()))
                .then_with(|| tie(a, b))
        });
        out.extend(row);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rows_then_columns() {
        let boxes = [
            BBox::new(100, 52, 8, 8),
            BBox::new(10, 50, 80, 8),
            BBox::new(10, 10, 80, 8),
            BBox::new(100, 11, 8, 8),
        ];
        assert_eq!(reading_order(&boxes, |a, b| a.cmp(&b)), vec![2, 3, 1, 0]);
    }

    #[test]
    fn overlap_and_containment() {
        let a = BBox::new(0, 0, 10, 10);
        assert!(a.overlaps(&BBox::new(9, 9, 5, 5)));
        assert!(!a.overlaps(&BBox::new(10, 0, 5, 5)));
        assert!(a.within(10, 10));
        assert!(!a.within(9, 10));
        assert!(!BBox::new(0, 0, 0, 3).within(10, 10));
    }
}
