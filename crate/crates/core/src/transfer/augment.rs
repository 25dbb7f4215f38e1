use std::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::model::WindowTensor;
use crate::pipeline::BANDS;
use crate::raster::{flip_plane, rot90_plane, Raster};

/// One of the 16 augmentations: optional left-right flip, then `rot`
/// counter-clockwise quarter turns, and optionally the temporal comb.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct AugmentTag {
    pub flip: bool,
    pub rot: u8,
    pub comb: bool,
}

impl AugmentTag {
    pub const IDENTITY: AugmentTag = AugmentTag { flip: false, rot: 0, comb: false };

    pub fn all() -> Vec<AugmentTag> {
        (0..16).map(Self::from_index).collect()
    }

    pub fn from_index(i: usize) -> Self {
        Self {
            flip: i & 1 == 1,
            rot: ((i >> 1) & 3) as u8,
            comb: (i >> 3) & 1 == 1,
        }
    }

    pub fn index(self) -> usize {
        usize::from(self.flip) | (usize::from(self.rot) << 1) | (usize::from(self.comb) << 3)
    }

    pub fn from_seed(seed: u64) -> Self {
        Self::from_index(ChaCha8Rng::seed_from_u64(seed).random_range(0..16))
    }

    /// Same tag without the temporal part.
    pub fn spatial(self) -> Self {
        Self { comb: false, ..self }
    }
}

impl fmt::Display for AugmentTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "flip{}-rot{}-comb{}", u8::from(self.flip), u16::from(self.rot) * 90, u8::from(self.comb))
    }
}

fn transform_plane(plane: &[f32], h: usize, w: usize, tag: AugmentTag) -> (Vec<f32>, usize, usize) {
    let mut out = if tag.flip { flip_plane(plane, h, w) } else { plane.to_vec() };
    let (mut h, mut w) = (h, w);
    for _ in 0..tag.rot % 4 {
        out = rot90_plane(&out, h, w);
        std::mem::swap(&mut h, &mut w);
    }
    (out, h, w)
}

pub fn augment_raster(raster: &Raster, tag: AugmentTag) -> Raster {
    let (data, height, width) = transform_plane(&raster.data, raster.height, raster.width, tag);
    Raster { height, width, data }
}

/// Applies the spatial transform to every band of every frame; the comb
/// marks every second valid frame as invalid.
pub fn augment_window(window: &WindowTensor, tag: AugmentTag) -> WindowTensor {
    let p = window.pixels();
    let (mut h, mut w) = (window.height, window.width);
    let mut data = Vec::with_capacity(window.data.len());
    for plane in window.data.chunks(p) {
        let (out, nh, nw) = transform_plane(plane, window.height, window.width, tag);
        data.extend_from_slice(&out);
        (h, w) = (nh, nw);
    }
    let mut validity = window.validity.clone();
    if tag.comb {
        for (seen, v) in validity.iter_mut().filter(|v| **v).enumerate() {
            if seen % 2 == 1 {
                *v = false;
            }
        }
    }
    debug_assert_eq!(data.len(), window.frames() * BANDS * p);
    WindowTensor {
        height: h,
        width: w,
        data,
        validity,
    }
}

pub fn augment_sample(windows: &[WindowTensor], label: &Raster, tag: AugmentTag) -> (Vec<WindowTensor>, Raster) {
    (
        windows.iter().map(|w| augment_window(w, tag)).collect(),
        augment_raster(label, tag.spatial()),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{init_with, Architecture, ModelParams, Network};
    use std::collections::BTreeSet;

    fn ramp(h: usize, w: usize) -> Raster {
        Raster::new(h, w, (0..h * w).map(|v| v as f32).collect()).unwrap()
    }

    #[test]
    fn sixteen_distinct_tags() {
        let tags: BTreeSet<_> = AugmentTag::all().into_iter().collect();
        assert_eq!(tags.len(), 16);
        for (i, t) in AugmentTag::all().into_iter().enumerate() {
            assert_eq!(t.index(), i);
        }
        let names: BTreeSet<_> = AugmentTag::all().iter().map(|t| t.to_string()).collect();
        assert_eq!(names.len(), 16);
    }

    #[test]
    fn four_quarter_turns_are_identity() {
        let r = ramp(4, 4);
        let mut x = r.clone();
        for _ in 0..4 {
            x = augment_raster(&x, AugmentTag { flip: false, rot: 1, comb: false });
        }
        assert_eq!(x, r);
    }

    #[test]
    fn label_tracks_frame_pixels() {
        let (h, w) = (3, 4);
        let p = h * w;
        // band 0 of every frame holds the pixel index, as does the label
        let mut data = vec![0.0f32; 2 * BANDS * p];
        for f in 0..2 {
            for k in 0..p {
                data[f * BANDS * p + k] = k as f32;
            }
        }
        let win = WindowTensor::new(h, w, data, vec![true, true]).unwrap();
        for tag in AugmentTag::all() {
            let (ws, label) = augment_sample(std::slice::from_ref(&win), &ramp(h, w), tag);
            let frame = ws[0].frame(0);
            assert_eq!(&frame[..label.data.len()], label.data.as_slice(), "{tag}");
            assert_eq!((ws[0].height, ws[0].width), (label.height, label.width));
        }
    }

    #[test]
    fn comb_drops_every_second_valid_frame() {
        let win = WindowTensor::new(1, 1, vec![0.0; 5 * BANDS], vec![false, true, true, true, true]).unwrap();
        let out = augment_window(&win, AugmentTag { flip: false, rot: 0, comb: true });
        assert_eq!(out.validity, vec![false, true, false, true, false]);
        assert_eq!(out.data, win.data);
    }

    /// Averages every spatial kernel over the eight symmetries of the square.
    fn symmetrize(params: &mut ModelParams) {
        for t in params.tensors.iter_mut().filter(|t| t.shape.len() == 4) {
            let (kh, kw) = (t.shape[2], t.shape[3]);
            for k in t.data.chunks_mut(kh * kw) {
                let base = Raster::new(kh, kw, k.to_vec()).unwrap();
                let mut acc = vec![0.0f32; kh * kw];
                for tag in AugmentTag::all().into_iter().filter(|t| !t.comb) {
                    for (a, v) in acc.iter_mut().zip(&augment_raster(&base, tag).data) {
                        *a += v / 8.0;
                    }
                }
                k.copy_from_slice(&acc);
            }
        }
    }

    #[test]
    fn prediction_commutes_with_spatial_transforms() {
        let mut params = init_with(Architecture::default(), 21);
        symmetrize(&mut params);
        let net = Network::<f32>::from_params(&params).unwrap();
        let (h, w) = (8, 8);
        let data: Vec<f32> = (0..3 * BANDS * h * w).map(|i| ((i * 37 % 101) as f32) / 101.0).collect();
        let win = WindowTensor::new(h, w, data, vec![true; 3]).unwrap();
        let base = net.predict(&win).unwrap();
        for tag in AugmentTag::all().into_iter().filter(|t| !t.comb) {
            let a = net.predict(&augment_window(&win, tag)).unwrap();
            let b = augment_raster(&base, tag);
            for (x, y) in a.data.iter().zip(&b.data) {
                assert!((x - y).abs() < 1e-5, "{tag}: {x} vs {y}");
            }
        }
    }
}
