//! Size and border-irregularity features computed from segmentation masks.
//!
//! Diameters are Feret (caliper) diameters of the polygon formed by the
//! foreground pixel corner points. Perimeters for convexity and compactness
//! come from a marching-squares contour of the mask, which cuts staircase
//! corners and keeps compactness stable under rasterization; the convex hull
//! used for convexity is taken over the contour vertices so that
//! `convexity <= 1` holds exactly.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::corpus::VoxelSpacing;
use crate::error::{LnmError, Result};

/// Raw and normalized morphometric features of one node mask.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NodeFeatures {
    pub short_axis_mm: f64,
    pub long_axis_mm: f64,
    /// short / long, in (0, 1].
    pub axis_ratio: f64,
    /// Hull perimeter over contour perimeter, in (0, 1].
    pub convexity: f64,
    /// Contour perimeter squared over 4*pi*area; 1 for a perfect circle.
    pub compactness: f64,
}

pub const FEATURE_COUNT: usize = 5;

impl NodeFeatures {
    pub fn as_array(&self) -> [f64; FEATURE_COUNT] {
        [self.short_axis_mm, self.long_axis_mm, self.axis_ratio, self.convexity, self.compactness]
    }

    /// Mean of convexity and reciprocal compactness; both components live in
    /// (0, 1] and 1 means a perfectly smooth circle.
    pub fn border_irregularity_mean(&self) -> f64 {
        (self.convexity + 1.0 / self.compactness) / 2.0
    }
}

/// Compute the full feature vector for one mask.
pub fn node_features(mask: &Array2<u8>, spacing: &VoxelSpacing) -> Result<NodeFeatures> {
    let (long_axis_mm, short_axis_mm) = diameters(mask, spacing)?;
    let (convexity, compactness, _) = border_irregularity(mask, spacing)?;
    Ok(NodeFeatures {
        short_axis_mm,
        long_axis_mm,
        axis_ratio: if long_axis_mm > 0.0 { short_axis_mm / long_axis_mm } else { 1.0 },
        convexity,
        compactness,
    })
}

/// Maximum and minimum Feret diameters in millimetres.
///
/// The long axis is the maximum distance between any two pixel corner points
/// of the foreground; the short axis is the minimum width over all support
/// directions of their convex hull.
pub fn diameters(mask: &Array2<u8>, spacing: &VoxelSpacing) -> Result<(f64, f64)> {
    let corners = corner_points(mask)?;
    let hull = convex_hull(&corners);
    let long_px = max_feret(&hull);
    let short_px = min_feret(&hull);
    Ok((long_px * spacing.in_plane_mm, short_px * spacing.in_plane_mm))
}

/// Convexity, compactness and their mean-style aggregate.
pub fn border_irregularity(mask: &Array2<u8>, _spacing: &VoxelSpacing) -> Result<(f64, f64, f64)> {
    let area = mask.iter().filter(|&&v| v > 0).count();
    if area == 0 {
        return Err(LnmError::Feature("empty mask: nothing to measure".into()));
    }
    let contour_perimeter = if area == 1 {
        // Degenerate single pixel: use the pixel square itself.
        4.0
    } else {
        let contours = marching_squares(mask);
        contours.iter().map(|c| polygon_perimeter(c)).sum()
    };
    let hull_perimeter = if area == 1 {
        4.0
    } else {
        let contours = marching_squares(mask);
        let all_points: Vec<Point> = contours.into_iter().flatten().collect();
        let hull = convex_hull(&all_points);
        polygon_perimeter_closed(&hull)
    };
    let convexity = (hull_perimeter / contour_perimeter).min(1.0);
    let compactness = compactness_from(contour_perimeter, area as f64);
    let features = NodeFeatures {
        short_axis_mm: 0.0,
        long_axis_mm: 0.0,
        axis_ratio: 1.0,
        convexity,
        compactness,
    };
    Ok((convexity, compactness, features.border_irregularity_mean()))
}

/// `perimeter^2 / (4 * pi * area)` on already-measured quantities.
pub fn compactness_from(perimeter: f64, area: f64) -> f64 {
    perimeter * perimeter / (4.0 * std::f64::consts::PI * area)
}

/// Min-max scaler fitted on the training split only.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureScaler {
    pub min: [f64; FEATURE_COUNT],
    pub max: [f64; FEATURE_COUNT],
    /// Number of training feature rows the scaler was fitted on.
    pub fitted_on: usize,
}

/// Fit per-feature min/max on the training features.
pub fn fit_scaler(train_features: &[NodeFeatures]) -> Result<FeatureScaler> {
    if train_features.is_empty() {
        return Err(LnmError::Validation("cannot fit scaler on an empty training set".into()));
    }
    let mut min = [f64::INFINITY; FEATURE_COUNT];
    let mut max = [f64::NEG_INFINITY; FEATURE_COUNT];
    for f in train_features {
        for (k, v) in f.as_array().iter().enumerate() {
            min[k] = min[k].min(*v);
            max[k] = max[k].max(*v);
        }
    }
    for k in 0..FEATURE_COUNT {
        if min[k] == max[k] {
            log::warn!("feature {k} is degenerate during scaler fit (min == max == {}); it will map to 0", min[k]);
        }
    }
    Ok(FeatureScaler { min, max, fitted_on: train_features.len() })
}

/// Normalize to [0,1] with the fitted extrema; out-of-range values clip.
pub fn apply_scaler(features: &NodeFeatures, scaler: &FeatureScaler) -> [f64; FEATURE_COUNT] {
    let raw = features.as_array();
    let mut out = [0.0; FEATURE_COUNT];
    for k in 0..FEATURE_COUNT {
        let span = scaler.max[k] - scaler.min[k];
        out[k] = if span > 0.0 { ((raw[k] - scaler.min[k]) / span).clamp(0.0, 1.0) } else { 0.0 };
    }
    out
}

type Point = (f64, f64);

/// All four corner points of every foreground pixel, (x, y) in pixel units.
fn corner_points(mask: &Array2<u8>) -> Result<Vec<Point>> {
    let mut points = Vec::new();
    for ((i, j), &v) in mask.indexed_iter() {
        if v > 0 {
            let (x, y) = (j as f64, i as f64);
            points.push((x, y));
            points.push((x + 1.0, y));
            points.push((x, y + 1.0));
            points.push((x + 1.0, y + 1.0));
        }
    }
    if points.is_empty() {
        return Err(LnmError::Feature("empty mask: nothing to measure".into()));
    }
    Ok(points)
}

/// Monotone-chain convex hull; returns vertices in counter-clockwise order.
fn convex_hull(points: &[Point]) -> Vec<Point> {
    let mut pts: Vec<Point> = points.to_vec();
    pts.sort_by(|a, b| a.partial_cmp(b).expect("finite coordinates"));
    pts.dedup();
    if pts.len() <= 2 {
        return pts;
    }
    let cross = |o: Point, a: Point, b: Point| (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0);
    let mut lower: Vec<Point> = Vec::new();
    for &p in &pts {
        while lower.len() >= 2 && cross(lower[lower.len() - 2], lower[lower.len() - 1], p) <= 0.0 {
            lower.pop();
        }
        lower.push(p);
    }
    let mut upper: Vec<Point> = Vec::new();
    for &p in pts.iter().rev() {
        while upper.len() >= 2 && cross(upper[upper.len() - 2], upper[upper.len() - 1], p) <= 0.0 {
            upper.pop();
        }
        upper.push(p);
    }
    lower.pop();
    upper.pop();
    lower.extend(upper);
    lower
}

/// Maximum pairwise distance between hull vertices.
fn max_feret(hull: &[Point]) -> f64 {
    let mut best: f64 = 0.0;
    for i in 0..hull.len() {
        for j in (i + 1)..hull.len() {
            let d = dist(hull[i], hull[j]);
            best = best.max(d);
        }
    }
    best
}

/// Minimum width over the hull's edge directions (rotating calipers).
fn min_feret(hull: &[Point]) -> f64 {
    if hull.len() == 1 {
        return 0.0;
    }
    if hull.len() == 2 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    let n = hull.len();
    for i in 0..n {
        let a = hull[i];
        let b = hull[(i + 1) % n];
        let len = dist(a, b);
        if len == 0.0 {
            continue;
        }
        // Max distance of any vertex to the supporting line through edge (a,b).
        let mut width: f64 = 0.0;
        for &p in hull {
            let d = ((b.0 - a.0) * (a.1 - p.1) - (a.0 - p.0) * (b.1 - a.1)).abs() / len;
            width = width.max(d);
        }
        best = best.min(width);
    }
    best
}

fn dist(a: Point, b: Point) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

fn polygon_perimeter(polygon: &[Point]) -> f64 {
    polygon_perimeter_closed(polygon)
}

fn polygon_perimeter_closed(polygon: &[Point]) -> f64 {
    if polygon.len() < 2 {
        return 0.0;
    }
    let mut p = 0.0;
    for i in 0..polygon.len() {
        p += dist(polygon[i], polygon[(i + 1) % polygon.len()]);
    }
    p
}

/// Marching squares at iso-level 0.5 over pixel centres.
///
/// Returns closed contours whose vertices sit on cell-edge midpoints; the
/// staircase corners of the rasterization are cut at 45 degrees, which keeps
/// the perimeter close to the underlying smooth boundary.
fn marching_squares(mask: &Array2<u8>) -> Vec<Vec<Point>> {
    let (h, w) = mask.dim();
    // Sample grid padded with background so contours always close.
    let at = |i: isize, j: isize| -> u8 {
        if i < 0 || j < 0 || i >= h as isize || j >= w as isize {
            0
        } else {
            mask[[i as usize, j as usize]]
        }
    };

    // Segments per cell, keyed by (cell_i, cell_j); cell (i,j) spans pixel
    // centres (i,j) .. (i+1, j+1) in padded coordinates starting at -1.
    use std::collections::HashMap;
    let mut segments: Vec<(Point, Point)> = Vec::new();
    for ci in -1..h as isize {
        for cj in -1..w as isize {
            let tl = at(ci, cj) > 0;
            let tr = at(ci, cj + 1) > 0;
            let bl = at(ci + 1, cj) > 0;
            let br = at(ci + 1, cj + 1) > 0;
            let case = (tl as u8) | (tr as u8) << 1 | (bl as u8) << 2 | (br as u8) << 3;
            // Edge midpoints in (x, y) image coordinates; pixel centre (i,j)
            // maps to (j + 0.5, i + 0.5).
            let x = cj as f64 + 0.5;
            let y = ci as f64 + 0.5;
            let top = (x + 0.5, y);
            let bottom = (x + 0.5, y + 1.0);
            let left = (x, y + 0.5);
            let right = (x + 1.0, y + 0.5);
            match case {
                0 | 15 => {}
                1 => segments.push((left, top)),
                2 => segments.push((top, right)),
                3 => segments.push((left, right)),
                4 => segments.push((bottom, left)),
                5 => segments.push((bottom, top)),
                6 => {
                    // Ambiguous saddle: connect around the foreground diagonal.
                    segments.push((top, left));
                    segments.push((bottom, right));
                }
                7 => segments.push((bottom, right)),
                8 => segments.push((right, bottom)),
                9 => {
                    segments.push((left, bottom));
                    segments.push((right, top));
                }
                10 => segments.push((top, bottom)),
                11 => segments.push((left, bottom)),
                12 => segments.push((right, left)),
                13 => segments.push((right, top)),
                14 => segments.push((top, left)),
                _ => unreachable!(),
            }
        }
    }

    // Chain segments into closed loops.
    let key = |p: Point| -> (i64, i64) { ((p.0 * 2.0).round() as i64, (p.1 * 2.0).round() as i64) };
    let mut from: HashMap<(i64, i64), Vec<usize>> = HashMap::new();
    for (idx, seg) in segments.iter().enumerate() {
        from.entry(key(seg.0)).or_default().push(idx);
    }
    let mut used = vec![false; segments.len()];
    let mut contours = Vec::new();
    for start in 0..segments.len() {
        if used[start] {
            continue;
        }
        let mut contour = vec![segments[start].0];
        let mut current = segments[start].1;
        used[start] = true;
        loop {
            contour.push(current);
            let Some(candidates) = from.get(&key(current)) else { break };
            let Some(&next) = candidates.iter().find(|&&i| !used[i]) else { break };
            used[next] = true;
            current = segments[next].1;
            if key(current) == key(contour[0]) {
                break;
            }
        }
        // Drop the duplicated closing vertex if present.
        if contour.len() > 1 && key(*contour.last().unwrap()) == key(contour[0]) {
            contour.pop();
        }
        if contour.len() >= 3 {
            contours.push(contour);
        }
    }
    contours
}
