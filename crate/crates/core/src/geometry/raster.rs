//! Row-major per-pixel containers. Pixel `(x, y)` has its center at integer
//! coordinates and lives at index `y * width + x`.

use nalgebra::Vector2;

use crate::{Error, Result};

pub(crate) fn check_dims(what: &str, a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}

/// Bilinear taps for a continuous position, clamped to the image. Returns
/// `(index, weight)` for the four neighbours.
pub(crate) fn bilinear_taps(width: usize, height: usize, x: f64, y: f64) -> [(usize, f64); 4] {
    let xc = x.clamp(0.0, (width - 1) as f64);
    let yc = y.clamp(0.0, (height - 1) as f64);
    let x0 = (xc.floor() as usize).min(width.saturating_sub(2));
    let y0 = (yc.floor() as usize).min(height.saturating_sub(2));
    let x1 = (x0 + 1).min(width - 1);
    let y1 = (y0 + 1).min(height - 1);
    let fx = if x1 > x0 { xc - x0 as f64 } else { 0.0 };
    let fy = if y1 > y0 { yc - y0 as f64 } else { 0.0 };
    [
        (y0 * width + x0, (1.0 - fx) * (1.0 - fy)),
        (y0 * width + x1, fx * (1.0 - fy)),
        (y1 * width + x0, (1.0 - fx) * fy),
        (y1 * width + x1, fx * fy),
    ]
}

/// Nearest pixel for a continuous position, if inside the image.
pub fn nearest_pixel(width: usize, height: usize, p: &Vector2<f64>) -> Option<(usize, usize)> {
    let x = p.x.round();
    let y = p.y.round();
    if x < 0.0 || y < 0.0 || x >= width as f64 || y >= height as f64 || !x.is_finite() || !y.is_finite() {
        return None;
    }
    Some((x as usize, y as usize))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMask {
    pub width: usize,
    pub height: usize,
    pub data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![false; width * height] }
    }

    pub fn filled(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![true; width * height] }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, data }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x]
    }

    /// Out-of-bounds reads are `false`.
    #[inline]
    pub fn get_signed(&self, x: isize, y: isize) -> bool {
        if x < 0 || y < 0 || x >= self.width as isize || y >= self.height as isize {
            return false;
        }
        self.data[y as usize * self.width + x as usize]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.data[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn contains_point(&self, p: &Vector2<f64>) -> bool {
        nearest_pixel(self.width, self.height, p).is_some_and(|(x, y)| self.get(x, y))
    }

    pub fn intersection_count(&self, other: &BinaryMask) -> usize {
        self.data.iter().zip(&other.data).filter(|(a, b)| **a && **b).count()
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            width: self.width,
            height: self.height,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let inter = self.intersection_count(other);
        let union = self.data.iter().zip(&other.data).filter(|(a, b)| **a || **b).count();
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }

    /// Iterator over `(x, y)` of set pixels in raster order.
    pub fn pixels(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let w = self.width;
        self.data.iter().enumerate().filter(|(_, &b)| b).map(move |(i, _)| (i % w, i / w))
    }
}

/// Per-pixel scalar with a validity flag.
#[derive(Debug, Clone, PartialEq)]
pub struct ScalarMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl ScalarMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.width + x;
        self.values[i] = v;
        self.valid[i] = true;
    }

    pub fn max_valid(&self) -> Option<f64> {
        self.values
            .iter()
            .zip(&self.valid)
            .filter(|(_, &ok)| ok)
            .map(|(v, _)| *v)
            .fold(None, |acc, v| Some(acc.map_or(v, |a: f64| a.max(v))))
    }
}

/// Metric depth map. Valid entries are finite and positive.
#[derive(Debug, Clone, PartialEq)]
pub struct DepthMap {
    pub width: usize,
    pub height: usize,
    pub values: Vec<f64>,
    pub valid: Vec<bool>,
}

impl DepthMap {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, values: vec![0.0; width * height], valid: vec![false; width * height] }
    }

    /// Builds a map, marking non-finite or non-positive entries invalid.
    pub fn from_values(width: usize, height: usize, values: Vec<f64>) -> Self {
        let valid = values.iter().map(|v| v.is_finite() && *v > 0.0).collect();
        Self { width, height, values, valid }
    }

    pub fn constant(width: usize, height: usize, depth: f64) -> Self {
        Self::from_values(width, height, vec![depth; width * height])
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<f64> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, v: f64) {
        let i = y * self.width + x;
        self.values[i] = v;
        self.valid[i] = v.is_finite() && v > 0.0;
    }

    pub fn valid_count(&self) -> usize {
        self.valid.iter().filter(|&&b| b).count()
    }

    /// Bilinear interpolation; `None` unless all four taps are valid.
    pub fn sample(&self, p: &Vector2<f64>) -> Option<f64> {
        if !(p.x >= -0.5 && p.y >= -0.5 && p.x <= self.width as f64 - 0.5 && p.y <= self.height as f64 - 0.5) {
            return None;
        }
        let mut acc = 0.0;
        for (i, w) in bilinear_taps(self.width, self.height, p.x, p.y) {
            if w > 0.0 {
                if !self.valid[i] {
                    return None;
                }
                acc += w * self.values[i];
            }
        }
        Some(acc)
    }

    pub fn median_valid(&self) -> Option<f64> {
        let mut v: Vec<f64> =
            self.values.iter().zip(&self.valid).filter(|(_, &ok)| ok).map(|(v, _)| *v).collect();
        if v.is_empty() {
            return None;
        }
        v.sort_by(f64::total_cmp);
        let n = v.len();
        Some(if n % 2 == 1 { v[n / 2] } else { 0.5 * (v[n / 2 - 1] + v[n / 2]) })
    }
}

/// Per-pixel displacement from frame `t` to `t'`.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    pub width: usize,
    pub height: usize,
    pub values: Vec<Vector2<f64>>,
    pub valid: Vec<bool>,
}

impl FlowField {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            values: vec![Vector2::zeros(); width * height],
            valid: vec![false; width * height],
        }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> Option<Vector2<f64>> {
        let i = y * self.width + x;
        self.valid[i].then(|| self.values[i])
    }

    pub fn set(&mut self, x: usize, y: usize, v: Vector2<f64>) {
        let i = y * self.width + x;
        self.values[i] = v;
        self.valid[i] = v.x.is_finite() && v.y.is_finite();
    }
}

/// Linear RGB image with channels in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct RgbImage {
    pub width: usize,
    pub height: usize,
    pub data: Vec<[f64; 3]>,
}

impl RgbImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, data: vec![[0.0; 3]; width * height] }
    }

    pub fn filled(width: usize, height: usize, c: [f64; 3]) -> Self {
        Self { width, height, data: vec![c; width * height] }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f64; 3] {
        self.data[y * self.width + x]
    }

    pub fn sample(&self, p: &Vector2<f64>) -> [f64; 3] {
        let mut acc = [0.0; 3];
        for (i, w) in bilinear_taps(self.width, self.height, p.x, p.y) {
            for c in 0..3 {
                acc[c] += w * self.data[i][c];
            }
        }
        acc
    }

    /// Quantizes to 8 bits per channel with rounding.
    pub fn to_u8(&self) -> Vec<u8> {
        self.data
            .iter()
            .flat_map(|px| px.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8))
            .collect()
    }

    pub fn from_u8(width: usize, height: usize, bytes: &[u8]) -> Self {
        let data = bytes
            .chunks_exact(3)
            .map(|c| [c[0] as f64 / 255.0, c[1] as f64 / 255.0, c[2] as f64 / 255.0])
            .collect();
        Self { width, height, data }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bilinear_midpoint() {
        let mut d = DepthMap::constant(3, 1, 1.0);
        d.set(1, 0, 3.0);
        assert!((d.sample(&Vector2::new(0.5, 0.0)).unwrap() - 2.0).abs() < 1e-12);
        assert!((d.sample(&Vector2::new(1.0, 0.0)).unwrap() - 3.0).abs() < 1e-12);
    }

    #[test]
    fn sample_rejects_invalid_taps() {
        let mut d = DepthMap::constant(3, 3, 1.0);
        d.set(1, 1, f64::NAN);
        assert!(d.sample(&Vector2::new(0.5, 0.5)).is_none());
        assert!(d.sample(&Vector2::new(0.0, 0.0)).is_some());
    }

    #[test]
    fn median_of_even_count() {
        let d = DepthMap::from_values(4, 1, vec![1.0, 4.0, 2.0, -1.0]);
        assert_eq!(d.median_valid(), Some(2.0));
    }

    #[test]
    fn nearest_pixel_bounds() {
        assert_eq!(nearest_pixel(4, 4, &Vector2::new(-0.4, 3.4)), Some((0, 3)));
        assert_eq!(nearest_pixel(4, 4, &Vector2::new(-0.6, 0.0)), None);
        assert_eq!(nearest_pixel(4, 4, &Vector2::new(0.0, 3.6)), None);
    }
}
