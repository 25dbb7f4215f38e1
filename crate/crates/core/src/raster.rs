//! Single-band rasters, tile coordinates and the on-disk raster encoding.
//!
//! Rasters are stored as raw little-endian `f32` values in C row-major,
//! band-major order (`[band][row][col]`); masks are raw `u8`.

use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{io_err, Error, Result};

/// Position of a tile in the tile grid (`row` = tile_y, `col` = tile_x).
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct TileCoord {
    pub row: usize,
    pub col: usize,
}

impl TileCoord {
    pub fn new(row: usize, col: usize) -> Self {
        Self { row, col }
    }
}

impl fmt::Display for TileCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}:{}", self.row, self.col)
    }
}

impl FromStr for TileCoord {
    type Err = Error;

    /// Parses the `tile_y:tile_x` notation.
    fn from_str(s: &str) -> Result<Self> {
        let (r, c) = s
            .split_once(':')
            .ok_or_else(|| Error::InvalidParams(format!("tile '{s}' is not of the form y:x")))?;
        let parse = |v: &str| {
            v.trim()
                .parse::<usize>()
                .map_err(|_| Error::InvalidParams(format!("tile '{s}' has a non-integer part")))
        };
        Ok(Self::new(parse(r)?, parse(c)?))
    }
}

/// A single-band `f32` raster in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Raster {
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl Raster {
    pub fn new(height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::Shape(format!(
                "raster data of length {} cannot be {height}x{width}",
                data.len()
            )));
        }
        Ok(Self { height, width, data })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Self {
        Self {
            height,
            width,
            data: vec![value; height * width],
        }
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::filled(height, width, 0.0)
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> f32 {
        self.data[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: f32) {
        self.data[row * self.width + col] = value;
    }

    pub fn same_shape(&self, other: &Raster) -> bool {
        self.height == other.height && self.width == other.width
    }

    /// Center crop to `size`x`size`.
    pub fn center_crop(&self, size: usize) -> Result<Raster> {
        if size > self.height || size > self.width {
            return Err(Error::Shape(format!(
                "cannot crop {size}x{size} from {}x{}",
                self.height, self.width
            )));
        }
        let y0 = (self.height - size) / 2;
        let x0 = (self.width - size) / 2;
        Ok(Raster {
            height: size,
            width: size,
            data: crop_plane(&self.data, self.height, self.width, y0 as isize, x0 as isize, size, size),
        })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        write_f32(path, &self.data)
    }

    pub fn read(path: &Path, height: usize, width: usize) -> Result<Raster> {
        Ok(Raster {
            height,
            width,
            data: read_f32(path, height * width)?,
        })
    }
}

/// Crops `th`x`tw` from a `h`x`w` plane at `(y0, x0)`; out-of-bounds pixels are zero.
pub fn crop_plane(plane: &[f32], h: usize, w: usize, y0: isize, x0: isize, th: usize, tw: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; th * tw];
    for r in 0..th {
        let y = y0 + r as isize;
        if y < 0 || y >= h as isize {
            continue;
        }
        let row = &plane[y as usize * w..(y as usize + 1) * w];
        for c in 0..tw {
            let x = x0 + c as isize;
            if x >= 0 && x < w as isize {
                out[r * tw + c] = row[x as usize];
            }
        }
    }
    out
}

/// Mirrors a plane left-right.
pub fn flip_plane(plane: &[f32], h: usize, w: usize) -> Vec<f32> {
    let mut out = vec![0.0f32; h * w];
    for r in 0..h {
        for c in 0..w {
            out[r * w + c] = plane[r * w + (w - 1 - c)];
        }
    }
    out
}

/// Rotates a plane by 90° counter-clockwise; returns the new plane with shape `w`x`h`.
pub fn rot90_plane(plane: &[f32], h: usize, w: usize) -> Vec<f32> {
    // out[r][c] = in[c][w-1-r], out shape w x h
    let mut out = vec![0.0f32; h * w];
    for r in 0..w {
        for c in 0..h {
            out[r * h + c] = plane[c * w + (w - 1 - r)];
        }
    }
    out
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 4);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

pub fn write_f32(path: &Path, values: &[f32]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, encode_f32(values)).map_err(io_err(path))
}

/// Reads exactly `len` floats; any other byte length is an error.
pub fn read_f32(path: &Path, len: usize) -> Result<Vec<f32>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != len * 4 {
        return Err(Error::RasterLength {
            path: path.to_path_buf(),
            expected: len * 4,
            actual: bytes.len(),
        });
    }
    Ok(decode_f32(&bytes))
}

pub fn write_u8(path: &Path, values: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(io_err(parent))?;
    }
    fs::write(path, values).map_err(io_err(path))
}

pub fn read_u8(path: &Path, len: usize) -> Result<Vec<u8>> {
    let bytes = fs::read(path).map_err(io_err(path))?;
    if bytes.len() != len {
        return Err(Error::RasterLength {
            path: path.to_path_buf(),
            expected: len,
            actual: bytes.len(),
        });
    }
    Ok(bytes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn four_rotations_are_identity() {
        let plane: Vec<f32> = (0..12).map(|v| v as f32).collect();
        let (mut p, mut h, mut w) = (plane.clone(), 3, 4);
        for _ in 0..4 {
            p = rot90_plane(&p, h, w);
            std::mem::swap(&mut h, &mut w);
        }
        assert_eq!(p, plane);
    }

    #[test]
    fn rot90_moves_top_right_to_top_left() {
        // 2x2: [a b; c d] -> ccw -> [b d; a c]
        let out = rot90_plane(&[1.0, 2.0, 3.0, 4.0], 2, 2);
        assert_eq!(out, vec![2.0, 4.0, 1.0, 3.0]);
    }

    #[test]
    fn crop_pads_with_zeros() {
        let plane = vec![1.0; 4];
        let out = crop_plane(&plane, 2, 2, 1, 1, 2, 2);
        assert_eq!(out, vec![1.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn tile_coord_parses_y_x() {
        let t: TileCoord = "43:18".parse().unwrap();
        assert_eq!(t, TileCoord::new(43, 18));
        assert_eq!(t.to_string(), "43:18");
        assert!("43".parse::<TileCoord>().is_err());
    }

    #[test]
    fn center_crop_drops_one_pixel_border() {
        let mut r = Raster::zeros(32, 32);
        r.set(1, 1, 5.0);
        let c = r.center_crop(30).unwrap();
        assert_eq!(c.get(0, 0), 5.0);
        assert_eq!(c.data.len(), 900);
    }
}
