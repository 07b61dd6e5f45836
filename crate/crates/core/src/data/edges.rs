//! Ground-truth edge bands via the morphological gradient.

use super::BinaryMask;

pub const DEFAULT_EDGE_WIDTH: usize = 2;

// Sliding max (dilate) or min (erode) over a 1-D window of radius r.
// Pixels outside the image read as 0 for both.
fn pass_1d(src: &[u8], dst: &mut [u8], r: usize, dilate: bool) {
    let n = src.len();
    for i in 0..n {
        let lo = i.saturating_sub(r);
        let hi = i + r;
        let window = &src[lo..=hi.min(n - 1)];
        dst[i] = if dilate {
            window.iter().any(|&b| b != 0) as u8
        } else {
            let touches_border = i < r || hi >= n;
            (!touches_border && window.iter().all(|&b| b != 0)) as u8
        };
    }
}

fn morph(mask: &BinaryMask, r: usize, dilate: bool) -> BinaryMask {
    let (w, h) = (mask.width(), mask.height());
    if w == 0 || h == 0 {
        return mask.clone();
    }
    let mut rows = vec![0u8; w * h];
    for y in 0..h {
        pass_1d(&mask.data()[y * w..(y + 1) * w], &mut rows[y * w..(y + 1) * w], r, dilate);
    }
    let mut out = vec![0u8; w * h];
    let (mut col, mut res) = (vec![0u8; h], vec![0u8; h]);
    for x in 0..w {
        for y in 0..h {
            col[y] = rows[y * w + x];
        }
        pass_1d(&col, &mut res, r, dilate);
        for y in 0..h {
            out[y * w + x] = res[y];
        }
    }
    BinaryMask::from_bytes(w, h, out).expect("same geometry")
}

pub fn dilate(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, radius, true)
}

pub fn erode(mask: &BinaryMask, radius: usize) -> BinaryMask {
    morph(mask, radius, false)
}

/// `dilate(mask, w) XOR erode(mask, w)` with a square element of radius `w`.
pub fn derive_edge_gt(mask: &BinaryMask, width: usize) -> BinaryMask {
    let (d, e) = (dilate(mask, width), erode(mask, width));
    let bytes = d.data().iter().zip(e.data()).map(|(a, b)| a ^ b).collect();
    BinaryMask::from_bytes(mask.width(), mask.height(), bytes).expect("same geometry")
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Direct definition: any pixel within the square window differs from
    // another, with out-of-image reads as 0.
    fn oracle(mask: &BinaryMask, r: usize) -> BinaryMask {
        let (w, h) = (mask.width() as isize, mask.height() as isize);
        let r = r as isize;
        BinaryMask::from_fn(mask.width(), mask.height(), |x, y| {
            let (mut any, mut all) = (false, true);
            for dy in -r..=r {
                for dx in -r..=r {
                    let (xx, yy) = (x as isize + dx, y as isize + dy);
                    let v = xx >= 0 && yy >= 0 && xx < w && yy < h && mask.get(xx as usize, yy as usize);
                    any |= v;
                    all &= v;
                }
            }
            any != all
        })
    }

    #[test]
    fn empty_mask_has_no_edge() {
        assert!(derive_edge_gt(&BinaryMask::zeros(32, 32), 2).is_empty());
    }

    #[test]
    fn full_frame_gives_border_band() {
        let full = BinaryMask::from_fn(20, 20, |_, _| true);
        let edge = derive_edge_gt(&full, 2);
        let band = BinaryMask::from_fn(20, 20, |x, y| x < 2 || y < 2 || x >= 18 || y >= 18);
        assert_eq!(edge, band);
    }

    #[test]
    fn centered_square_gives_ring() {
        let sq = BinaryMask::from_fn(256, 256, |x, y| (96..160).contains(&x) && (96..160).contains(&y));
        let edge = derive_edge_gt(&sq, 2);
        let inside = |x: usize, y: usize, lo: usize, hi: usize| (lo..hi).contains(&x) && (lo..hi).contains(&y);
        let ring = BinaryMask::from_fn(256, 256, |x, y| inside(x, y, 94, 162) && !inside(x, y, 98, 158));
        assert_eq!(edge, ring);
        assert_eq!(edge.count(), 68 * 68 - 60 * 60);
    }

    fn mask_strategy() -> impl Strategy<Value = BinaryMask> {
        (4usize..24, 4usize..24).prop_flat_map(|(w, h)| {
            proptest::collection::vec(any::<bool>(), w * h)
                .prop_map(move |v| BinaryMask::from_bytes(w, h, v.into_iter().map(u8::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn matches_window_oracle(m in mask_strategy(), r in 0usize..4) {
            prop_assert_eq!(derive_edge_gt(&m, r), oracle(&m, r));
        }

        #[test]
        fn complement_has_same_interior_edges(m in mask_strategy(), r in 1usize..3) {
            let (a, b) = (derive_edge_gt(&m, r), derive_edge_gt(&m.complement(), r));
            for y in r..m.height().saturating_sub(r) {
                for x in r..m.width().saturating_sub(r) {
                    prop_assert_eq!(a.get(x, y), b.get(x, y));
                }
            }
        }

        #[test]
        fn edge_lies_in_boundary_band(m in mask_strategy(), r in 1usize..3) {
            let edge = derive_edge_gt(&m, r);
            prop_assert_eq!(edge.is_empty(), m.is_empty());
            // every edge pixel is within r of a set pixel
            let near = dilate(&m, r);
            for (e, n) in edge.data().iter().zip(near.data()) {
                prop_assert!(*e <= *n);
            }
        }
    }
}
