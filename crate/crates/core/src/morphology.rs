//! Binary morphology on pixel masks and grids, plus connected components.

use crate::geom::{BinaryMask, CameraView};
use crate::prelude::*;

/// Structuring element given as offsets relative to its center.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Element {
    offsets: Vec<(i64, i64)>,
}

impl Element {
    /// `(2·half + 1)²` square.
    pub fn square(half: usize) -> Self {
        let h = half as i64;
        let offsets = (-h..=h).flat_map(|dy| (-h..=h).map(move |dx| (dx, dy))).collect();
        Self { offsets }
    }

    /// Disk of the given pixel radius (offsets with `dx² + dy² ≤ r²`).
    pub fn disk(radius: usize) -> Self {
        let r = radius as i64;
        let offsets = (-r..=r)
            .flat_map(|dy| (-r..=r).map(move |dx| (dx, dy)))
            .filter(|(dx, dy)| dx * dx + dy * dy <= r * r)
            .collect();
        Self { offsets }
    }

    pub fn offsets(&self) -> &[(i64, i64)] {
        &self.offsets
    }
}

/// Symmetric elements only, so dilation needs no reflection.
pub fn dilate(mask: &BinaryMask, element: &Element) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            if !mask.get(x, y) {
                continue;
            }
            for &(dx, dy) in element.offsets() {
                let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                    out.set(xx as usize, yy as usize, true);
                }
            }
        }
    }
    out
}

/// Pixels outside the frame count as foreground, so closing never shrinks
/// a mask that touches the border.
pub fn erode(mask: &BinaryMask, element: &Element) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    let mut out = BinaryMask::new(w, h);
    for y in 0..h {
        for x in 0..w {
            let keep = element
                .offsets()
                .iter()
                .all(|&(dx, dy)| {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    let outside = xx < 0 || yy < 0 || xx as usize >= w || yy as usize >= h;
                    outside || mask.get(xx as usize, yy as usize)
                });
            out.set(x, y, keep);
        }
    }
    out
}

pub fn close(mask: &BinaryMask, element: &Element) -> BinaryMask {
    erode(&dilate(mask, element), element)
}

/// Box dilation, disk dilation and disk erosion sizes for moving masks.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MaskParams {
    pub box_size: usize,
    pub dilate_radius: usize,
    pub erode_radius: usize,
}

impl Default for MaskParams {
    fn default() -> Self {
        Self { box_size: 11, dilate_radius: 10, erode_radius: 7 }
    }
}

/// Impulse mask of the pixels hit by projected points.
pub fn splat_points(view: &CameraView, points: &[Point3]) -> BinaryMask {
    let mut mask = BinaryMask::new(view.width(), view.height());
    for p in points {
        if let Some(px) = view.project(p) {
            let (x, y) = (px.x.round(), px.y.round());
            if x >= 0.0 && y >= 0.0 && (x as usize) < mask.width() && (y as usize) < mask.height() {
                mask.set(x as usize, y as usize, true);
            }
        }
    }
    mask
}

/// Morphological post-processing of an impulse mask of moving pixels.
pub fn grow_moving_mask(impulses: &BinaryMask, params: &MaskParams) -> BinaryMask {
    let boxed = dilate(impulses, &Element::square(params.box_size / 2));
    let dilated = dilate(&boxed, &Element::disk(params.dilate_radius));
    erode(&dilated, &Element::disk(params.erode_radius))
}

/// Mask of pixels covered by moving objects in `view` (true = moving).
pub fn build_moving_mask(view: &CameraView, moving: &[Point3], params: &MaskParams) -> BinaryMask {
    grow_moving_mask(&splat_points(view, moving), params)
}

/// 8-connected components of the true cells, each as a sorted list of
/// linear indices; components are ordered by their smallest index.
pub fn connected_components(mask: &BinaryMask) -> Vec<Vec<usize>> {
    let (w, h) = (mask.width(), mask.height());
    let mut seen = vec![false; w * h];
    let mut out = Vec::new();
    for start in 0..w * h {
        if seen[start] || !mask.bits()[start] {
            continue;
        }
        seen[start] = true;
        let mut stack = vec![start];
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            comp.push(i);
            let (x, y) = ((i % w) as i64, (i / w) as i64);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (xx, yy) = (x + dx, y + dy);
                    if mask.get_signed(xx, yy) {
                        let j = yy as usize * w + xx as usize;
                        if !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        comp.sort_unstable();
        out.push(comp);
    }
    out
}
