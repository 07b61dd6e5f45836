//! Geometric augmentation that leaves per-pixel noise statistics intact.

use dualtrace_tensor::Tensor;

use super::mask::BinaryMask;
use super::preprocess::Sample;

/// One of the eight symmetries of the square: bit 0 mirrors x, bit 1
/// mirrors y, bit 2 transposes. Non-square inputs ignore the transpose.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Dihedral(pub u8);

impl Dihedral {
    pub const IDENTITY: Dihedral = Dihedral(0);

    /// Source coordinate of output pixel `(x, y)`.
    fn source(self, x: usize, y: usize, w: usize, h: usize) -> (usize, usize) {
        let (mut u, mut v) = if self.0 & 4 != 0 && w == h { (y, x) } else { (x, y) };
        if self.0 & 1 != 0 {
            u = w - 1 - u;
        }
        if self.0 & 2 != 0 {
            v = h - 1 - v;
        }
        (u, v)
    }

    fn mask(self, m: &BinaryMask) -> BinaryMask {
        let (w, h) = (m.width(), m.height());
        BinaryMask::from_fn(w, h, |x, y| {
            let (u, v) = self.source(x, y, w, h);
            m.get(u, v)
        })
    }

    /// Applies the symmetry to the image and both targets.
    pub fn apply(self, s: &Sample) -> Sample {
        if self == Self::IDENTITY {
            return s.clone();
        }
        let shape = s.image.shape();
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        let src = s.image.data();
        let image = Tensor::from_fn(&[c, h, w], |i| {
            let (ch, y, x) = (i / (h * w), (i / w) % h, i % w);
            let (u, v) = self.source(x, y, w, h);
            src[(ch * h + v) * w + u]
        });
        Sample { image, mask: self.mask(&s.mask), edge: self.mask(&s.edge) }
    }
}

/// The `size × size` window at `(x0, y0)`. Edge targets are cut from the
/// full-frame band, so the window border is not mistaken for a boundary.
pub fn crop(s: &Sample, x0: usize, y0: usize, size: usize) -> Sample {
    let shape = s.image.shape();
    let (c, h, w) = (shape[0], shape[1], shape[2]);
    assert!(x0 + size <= w && y0 + size <= h, "crop window outside the image");
    let src = s.image.data();
    let image = Tensor::from_fn(&[c, size, size], |i| {
        let (ch, y, x) = (i / (size * size), (i / size) % size, i % size);
        src[(ch * h + y0 + y) * w + x0 + x]
    });
    let cut = |m: &BinaryMask| BinaryMask::from_fn(size, size, |x, y| m.get(x0 + x, y0 + y));
    Sample { image, mask: cut(&s.mask), edge: cut(&s.edge) }
}
