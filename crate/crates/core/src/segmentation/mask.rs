use std::path::Path;

use sigan_tensor::Tensor;

use crate::data::{read_gray, write_gray_png, RawImage};
use crate::error::{Result, SiganError};

/// Binary `H x W` grid; `true` marks defect pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Mask {
    pub height: usize,
    pub width: usize,
    pub bits: Vec<bool>,
}

impl Mask {
    pub fn new(height: usize, width: usize, bits: Vec<bool>) -> Self {
        assert_eq!(bits.len(), height * width, "mask size");
        Self { height, width, bits }
    }

    pub fn empty(height: usize, width: usize) -> Self {
        Self::new(height, width, vec![false; height * width])
    }

    pub fn from_fn(height: usize, width: usize, f: impl Fn(usize, usize) -> bool) -> Self {
        Self::new(height, width, (0..height * width).map(|i| f(i / width, i % width)).collect())
    }

    /// `mask[i] = grid[i] > threshold` for an `H x W` grid.
    pub fn above(grid: &Tensor<f32>, threshold: f64) -> Self {
        let (h, w) = (grid.shape()[0], grid.shape()[1]);
        Self::new(h, w, grid.data().iter().map(|&v| v as f64 > threshold).collect())
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|&&b| b).count()
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }

    /// Nearest-neighbour resampling.
    pub fn resize_nearest(&self, height: usize, width: usize) -> Self {
        if (height, width) == self.shape() {
            return self.clone();
        }
        let src =
            |i: usize, out: usize, inp: usize| (((i as f64 + 0.5) * inp as f64 / out as f64) as usize).min(inp - 1);
        Self::from_fn(height, width, |y, x| {
            self.bits[src(y, height, self.height) * self.width + src(x, width, self.width)]
        })
    }

    /// 0 for background, 255 for defect.
    pub fn to_raw(&self) -> RawImage {
        RawImage::new(self.width, self.height, self.bits.iter().map(|&b| if b { 255 } else { 0 }).collect())
    }
}

/// Reads a mask image; any nonzero pixel is a defect. With `size`, the mask
/// is resampled to `size x size` by nearest neighbour.
pub fn read_mask(path: &Path, size: Option<usize>) -> Result<Mask> {
    let raw = read_gray(path)?;
    let mask = Mask::new(raw.height, raw.width, raw.pixels.iter().map(|&p| p > 0).collect());
    Ok(match size {
        Some(s) => mask.resize_nearest(s, s),
        None => mask,
    })
}

/// Writes a mask as an 8-bit PNG, optionally resampled to `(height, width)`.
pub fn write_mask(path: &Path, mask: &Mask, resize_to: Option<(usize, usize)>) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| SiganError::io(parent, e))?;
    }
    let m = match resize_to {
        Some((h, w)) => mask.resize_nearest(h, w),
        None => mask.clone(),
    };
    write_gray_png(path, &m.to_raw())
}

/// Removes 8-connected components with fewer than `min_area` pixels.
pub fn filter_small_components(mask: &Mask, min_area: usize) -> Mask {
    let (h, w) = mask.shape();
    let mut seen = vec![false; h * w];
    let mut out = mask.clone();
    let mut stack = Vec::new();
    let mut component = Vec::new();
    for start in 0..h * w {
        if !mask.bits[start] || seen[start] {
            continue;
        }
        component.clear();
        stack.push(start);
        seen[start] = true;
        while let Some(i) = stack.pop() {
            component.push(i);
            let (y, x) = ((i / w) as isize, (i % w) as isize);
            for dy in -1..=1 {
                for dx in -1..=1 {
                    let (ny, nx) = (y + dy, x + dx);
                    if ny < 0 || nx < 0 || ny >= h as isize || nx >= w as isize {
                        continue;
                    }
                    let j = ny as usize * w + nx as usize;
                    if mask.bits[j] && !seen[j] {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
        }
        if component.len() < min_area {
            component.iter().for_each(|&i| out.bits[i] = false);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_pixels_are_connected() {
        let m = Mask::from_fn(5, 5, |y, x| (y == x && y < 3) || (y, x) == (4, 0));
        let f = filter_small_components(&m, 2);
        assert_eq!(f.count(), 3);
        assert!(!f.bits[20]);
    }

    #[test]
    fn threshold_is_monotone() {
        let grid = Tensor::from_fn([6, 6], |i| (i as f32 * 0.37).sin().abs() * 2.0);
        let mut last = usize::MAX;
        for k in 0..=20 {
            let m = Mask::above(&grid, k as f64 * 0.1);
            assert!(m.count() <= last);
            last = m.count();
        }
    }

    #[test]
    fn png_round_trip_with_resize() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m/mask.png");
        let m = Mask::from_fn(4, 4, |y, x| y < 2 && x >= 2);
        write_mask(&path, &m, Some((8, 8))).unwrap();
        let back = read_mask(&path, Some(4)).unwrap();
        assert_eq!(back, m);
        assert_eq!(read_mask(&path, None).unwrap().shape(), (8, 8));
    }
}
