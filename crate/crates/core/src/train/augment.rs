use ahdr_tensor::{Element, Shape, Tensor};
use rand::Rng;

use crate::error::{Error, Result};
use crate::synth::SampleTriplet;

/// One of the eight symmetries of the square: an optional horizontal flip
/// followed by `quarter_turns` counter-clockwise rotations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dihedral {
    pub flip: bool,
    pub quarter_turns: u8,
}

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral {
        flip: false,
        quarter_turns: 0,
    };

    pub fn all() -> [Dihedral; 8] {
        let mut out = [Dihedral::IDENTITY; 8];
        for (i, d) in out.iter_mut().enumerate() {
            d.flip = i >= 4;
            d.quarter_turns = (i % 4) as u8;
        }
        out
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::all()[rng.random_range(0..8)]
    }

    /// Applies the transform to the spatial axes of every plane.
    pub fn apply<T: Element>(&self, t: &Tensor<T>) -> Tensor<T> {
        let [n, c, h, w] = t.shape().dims();
        let turns = self.quarter_turns % 4;
        let (oh, ow) = if turns % 2 == 1 { (w, h) } else { (h, w) };
        let flip = self.flip;
        Tensor::from_fn(Shape::new(n, c, oh, ow), |b, ch, y, x| {
            // Source coordinates in the flipped image.
            let (sy, sx) = match turns {
                0 => (y, x),
                1 => (x, w - 1 - y),
                2 => (h - 1 - y, w - 1 - x),
                _ => (h - 1 - x, y),
            };
            let sx = if flip { w - 1 - sx } else { sx };
            t.at(b, ch, sy, sx)
        })
    }
}

/// Crops the same `size × size` window from every image of the sample.
pub fn sample_patch<R: Rng + ?Sized>(sample: &SampleTriplet, size: usize, rng: &mut R) -> Result<SampleTriplet> {
    let (h, w) = (sample.height(), sample.width());
    if size == 0 || size > h || size > w {
        return Err(Error::Config(format!("patch size {size} does not fit a {h}x{w} image")));
    }
    let top = rng.random_range(0..=h - size);
    let left = rng.random_range(0..=w - size);
    sample.map_images(|t| Ok(t.crop(top, left, size, size)?))
}

/// Applies one random dihedral transform to all images of the sample.
pub fn augment<R: Rng + ?Sized>(sample: &SampleTriplet, rng: &mut R) -> Result<SampleTriplet> {
    let d = Dihedral::random(rng);
    augment_with(sample, d)
}

pub fn augment_with(sample: &SampleTriplet, d: Dihedral) -> Result<SampleTriplet> {
    sample.map_images(|t| Ok(d.apply(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(Shape::new(1, 2, h, w), |_, c, y, x| (c * 100 + y * 10 + x) as f32)
    }

    #[test]
    fn identity_and_involutions() {
        let t = grid(4, 4);
        assert_eq!(Dihedral::IDENTITY.apply(&t), t);
        let flip = Dihedral {
            flip: true,
            quarter_turns: 0,
        };
        assert_eq!(flip.apply(&flip.apply(&t)), t);
        let quarter = Dihedral {
            flip: false,
            quarter_turns: 1,
        };
        let mut r = t.clone();
        for _ in 0..4 {
            r = quarter.apply(&r);
        }
        assert_eq!(r, t);
    }

    #[test]
    fn all_eight_are_distinct() {
        let t = grid(3, 3);
        let outs: Vec<_> = Dihedral::all().iter().map(|d| d.apply(&t)).collect();
        for i in 0..8 {
            for j in i + 1..8 {
                assert_ne!(outs[i], outs[j], "{i} vs {j}");
            }
        }
    }

    #[test]
    fn quarter_turn_is_counter_clockwise() {
        let t = grid(2, 3);
        let r = Dihedral {
            flip: false,
            quarter_turns: 1,
        }
        .apply(&t);
        assert_eq!(r.shape(), Shape::new(1, 2, 3, 2));
        // Top-right corner moves to the top-left.
        assert_eq!(r.at(0, 0, 0, 0), t.at(0, 0, 0, 2));
        assert_eq!(r.at(0, 0, 2, 0), t.at(0, 0, 0, 0));
    }
}
