//! Auxiliary supervision targets derived from a binary saliency mask.
//!
//! Pixels outside the image count as background everywhere in this module,
//! so objects touching the frame still get an edge band.

use crate::error::{invalid, Result};
use crate::ops::bilinear_resize;
use crate::tensor::Tensor;

/// Cell size of the location map's pooling grid.
pub const LOCATION_CELL: usize = 16;
/// Edge widths included in an [`AuxMapSet`].
pub const EDGE_WIDTHS: [usize; 5] = [1, 2, 3, 4, 5];

/// Strictly binary 2-D map, row-major.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    h: usize,
    w: usize,
    data: Vec<bool>,
}

impl BinaryMask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if h == 0 || w == 0 {
            return invalid("mask dimensions must be non-empty");
        }
        if data.len() != h * w {
            return invalid(format!("mask {h}x{w} needs {} values, got {}", h * w, data.len()));
        }
        Ok(BinaryMask { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Result<Self> {
        Self::new(h, w, vec![false; h * w])
    }

    pub fn from_fn(h: usize, w: usize, mut f: impl FnMut(usize, usize) -> bool) -> Result<Self> {
        let data = (0..h * w).map(|i| f(i / w, i % w)).collect();
        Self::new(h, w, data)
    }

    /// Accepts a single-map tensor whose values are exactly 0 or 1.
    pub fn from_tensor(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims();
        if n != 1 || c != 1 {
            return invalid(format!("mask tensor must be (1, 1, h, w), got {:?}", t.shape()));
        }
        if let Some(v) = t.data().iter().find(|&&v| v != 0.0 && v != 1.0) {
            return invalid(format!("mask value {v} is not binary"));
        }
        Self::new(h, w, t.data().iter().map(|&v| v == 1.0).collect())
    }

    /// Binarizes a `(1, 1, h, w)` map at `>= 0.5`.
    pub fn threshold(t: &Tensor) -> Result<Self> {
        let (n, c, h, w) = t.dims();
        if n != 1 || c != 1 {
            return invalid(format!("mask tensor must be (1, 1, h, w), got {:?}", t.shape()));
        }
        Self::new(h, w, t.data().iter().map(|&v| v >= 0.5).collect())
    }

    pub fn to_tensor(&self) -> Tensor {
        let data = self.data.iter().map(|&b| if b { 1.0 } else { 0.0 }).collect();
        Tensor::new([1, 1, self.h, self.w], data).expect("sized")
    }

    pub fn height(&self) -> usize {
        self.h
    }

    pub fn width(&self) -> usize {
        self.w
    }

    pub fn get(&self, y: usize, x: usize) -> bool {
        self.data[y * self.w + x]
    }

    pub fn data(&self) -> &[bool] {
        &self.data
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.count() == 0
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.data.len() == other.data.len() && self.data.iter().zip(&other.data).all(|(&a, &b)| !a || b)
    }

    /// Intersection over union; 1 when both are empty.
    pub fn iou(&self, other: &BinaryMask) -> f64 {
        let (mut inter, mut union) = (0usize, 0usize);
        for (&a, &b) in self.data.iter().zip(&other.data) {
            inter += (a && b) as usize;
            union += (a || b) as usize;
        }
        if union == 0 {
            1.0
        } else {
            inter as f64 / union as f64
        }
    }
}

/// 3x3 erosion.
pub fn erode(mask: &BinaryMask) -> BinaryMask {
    let (h, w) = (mask.h as isize, mask.w as isize);
    let inside = |y: isize, x: isize| y >= 0 && x >= 0 && y < h && x < w && mask.get(y as usize, x as usize);
    BinaryMask::from_fn(mask.h, mask.w, |y, x| {
        let (y, x) = (y as isize, x as isize);
        (-1..=1).all(|dy| (-1..=1).all(|dx| inside(y + dy, x + dx)))
    })
    .expect("same size")
}

/// Chessboard distance from each salient pixel to the nearest background
/// pixel; 0 on background. Two chamfer passes with unit 8-neighbour steps.
pub fn chebyshev_distance(mask: &BinaryMask) -> Vec<u32> {
    let (h, w) = (mask.h, mask.w);
    let mut d: Vec<u32> = mask.data.iter().map(|&b| if b { u32::MAX } else { 0 }).collect();
    let at = |d: &[u32], y: isize, x: isize| -> u32 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0
        } else {
            d[y as usize * w + x as usize]
        }
    };
    for y in 0..h as isize {
        for x in 0..w as isize {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = [(-1, -1), (-1, 0), (-1, 1), (0, -1)]
                .iter()
                .map(|&(dy, dx)| at(&d, y + dy, x + dx))
                .min()
                .unwrap();
            d[i] = d[i].min(m.saturating_add(1));
        }
    }
    for y in (0..h as isize).rev() {
        for x in (0..w as isize).rev() {
            let i = y as usize * w + x as usize;
            if d[i] == 0 {
                continue;
            }
            let m = [(1, 1), (1, 0), (1, -1), (0, 1)]
                .iter()
                .map(|&(dy, dx)| at(&d, y + dy, x + dx))
                .min()
                .unwrap();
            d[i] = d[i].min(m.saturating_add(1));
        }
    }
    d
}

/// Salient pixels within chessboard distance `width` of the background.
pub fn edge_map(mask: &BinaryMask, width: usize) -> Result<BinaryMask> {
    if width == 0 {
        return invalid("edge width must be at least 1");
    }
    let d = chebyshev_distance(mask);
    BinaryMask::new(
        mask.h,
        mask.w,
        d.iter()
            .zip(&mask.data)
            .map(|(&d, &m)| m && d as usize <= width)
            .collect(),
    )
}

/// Coarse object blob: mean over 16x16 cells, bilinear upsampling, `>= 0.5`.
///
/// Cells that overhang the image average only the pixels inside it; the grid
/// is upsampled to the padded size and cropped.
pub fn location_map(mask: &BinaryMask) -> Result<BinaryMask> {
    let (h, w) = (mask.h, mask.w);
    let (gh, gw) = (h.div_ceil(LOCATION_CELL), w.div_ceil(LOCATION_CELL));
    let mut sums = vec![0usize; gh * gw];
    let mut counts = vec![0usize; gh * gw];
    for y in 0..h {
        for x in 0..w {
            let c = (y / LOCATION_CELL) * gw + x / LOCATION_CELL;
            counts[c] += 1;
            sums[c] += mask.get(y, x) as usize;
        }
    }
    let grid = Tensor::new(
        [1, 1, gh, gw],
        sums.iter().zip(&counts).map(|(&s, &c)| s as f32 / c as f32).collect(),
    )?;
    let up = bilinear_resize(&grid, gh * LOCATION_CELL, gw * LOCATION_CELL)?;
    BinaryMask::from_fn(h, w, |y, x| up.at(0, 0, y, x) >= 0.5)
}

/// Squared 1-D distance transform of a sampled function (lower envelope of parabolas).
fn edt_1d(f: &[f64], out: &mut [f64]) {
    let n = f.len();
    let mut v = vec![0usize; n];
    let mut z = vec![0.0f64; n + 1];
    let mut k = 0usize;
    z[0] = f64::NEG_INFINITY;
    z[1] = f64::INFINITY;
    let cross =
        |q: usize, p: usize| ((f[q] + (q * q) as f64) - (f[p] + (p * p) as f64)) / (2.0 * (q as f64 - p as f64));
    for q in 1..n {
        let mut s = cross(q, v[k]);
        while s <= z[k] {
            k -= 1;
            s = cross(q, v[k]);
        }
        k += 1;
        v[k] = q;
        z[k] = s;
        z[k + 1] = f64::INFINITY;
    }
    k = 0;
    for (q, o) in out.iter_mut().enumerate() {
        while z[k + 1] < q as f64 {
            k += 1;
        }
        *o = (q as f64 - v[k] as f64).powi(2) + f[v[k]];
    }
}

/// Euclidean distance from each salient pixel to the nearest background
/// pixel, exterior included; 0 on background.
pub fn euclidean_distance(mask: &BinaryMask) -> Vec<f64> {
    // one-pixel background frame stands in for the exterior
    let (h, w) = (mask.h + 2, mask.w + 2);
    // exceeds any squared distance inside the frame, keeps arithmetic exact
    let big = 2.0 * ((h + w) * (h + w)) as f64;
    let mut g: Vec<f64> = vec![0.0; h * w];
    for y in 0..mask.h {
        for x in 0..mask.w {
            if mask.get(y, x) {
                g[(y + 1) * w + x + 1] = big;
            }
        }
    }
    let mut col = vec![0.0; h];
    let mut col_out = vec![0.0; h];
    for x in 0..w {
        for y in 0..h {
            col[y] = g[y * w + x];
        }
        edt_1d(&col, &mut col_out);
        for y in 0..h {
            g[y * w + x] = col_out[y];
        }
    }
    let mut row_out = vec![0.0; w];
    for y in 0..h {
        edt_1d(&g[y * w..(y + 1) * w], &mut row_out);
        g[y * w..(y + 1) * w].copy_from_slice(&row_out);
    }
    let mut d = Vec::with_capacity(mask.h * mask.w);
    for y in 0..mask.h {
        for x in 0..mask.w {
            d.push(g[(y + 1) * w + x + 1].sqrt());
        }
    }
    d
}

/// Splits a mask into an interior-weighted body and the remaining detail,
/// with `body + detail == mask` exactly. Both are `(1, 1, h, w)`.
pub fn body_detail(mask: &BinaryMask) -> (Tensor, Tensor) {
    let d = euclidean_distance(mask);
    let max = d.iter().cloned().fold(0.0f64, f64::max);
    let body: Vec<f32> = d
        .iter()
        .zip(&mask.data)
        .map(|(&d, &m)| if m && max > 0.0 { (d / max) as f32 } else { 0.0 })
        .collect();
    let detail: Vec<f32> = body
        .iter()
        .zip(&mask.data)
        .map(|(&b, &m)| if m { 1.0 - b } else { 0.0 })
        .collect();
    let shape = [1, 1, mask.h, mask.w];
    (
        Tensor::new(shape, body).expect("sized"),
        Tensor::new(shape, detail).expect("sized"),
    )
}

/// Every auxiliary map for one mask.
#[derive(Clone, Debug, PartialEq)]
pub struct AuxMapSet {
    /// Edge bands for widths 1 to 5.
    pub edges: Vec<BinaryMask>,
    pub location: BinaryMask,
    pub body: Tensor,
    pub detail: Tensor,
}

impl AuxMapSet {
    pub fn generate(mask: &BinaryMask) -> Result<Self> {
        let edges = EDGE_WIDTHS.iter().map(|&w| edge_map(mask, w)).collect::<Result<_>>()?;
        let (body, detail) = body_detail(mask);
        Ok(AuxMapSet {
            edges,
            location: location_map(mask)?,
            body,
            detail,
        })
    }

    pub fn edge(&self, width: usize) -> Option<&BinaryMask> {
        EDGE_WIDTHS.iter().position(|&w| w == width).map(|i| &self.edges[i])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn square(h: usize, w: usize, y0: usize, x0: usize, side: usize) -> BinaryMask {
        BinaryMask::from_fn(h, w, |y, x| y >= y0 && y < y0 + side && x >= x0 && x < x0 + side).unwrap()
    }

    #[test]
    fn full_image_width_two() {
        let m = BinaryMask::from_fn(10, 10, |_, _| true).unwrap();
        assert_eq!(edge_map(&m, 2).unwrap().count(), 64);
    }

    #[test]
    fn thin_square_is_all_edge() {
        let m = square(8, 8, 2, 2, 4);
        assert_eq!(edge_map(&m, 2).unwrap(), m);
        assert!(edge_map(&m, 0).is_err());
    }

    #[test]
    fn empty_mask_maps() {
        let m = BinaryMask::empty(7, 9).unwrap();
        assert!(edge_map(&m, 3).unwrap().is_empty());
        assert!(location_map(&m).unwrap().is_empty());
        let (b, d) = body_detail(&m);
        assert!(b.data().iter().chain(d.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn location_all_ones_and_centered_square() {
        for (h, w) in [(16, 16), (20, 37), (64, 64)] {
            let m = BinaryMask::from_fn(h, w, |_, _| true).unwrap();
            assert_eq!(location_map(&m).unwrap(), m);
        }
        let m = square(64, 64, 16, 16, 32);
        assert!(location_map(&m).unwrap().iou(&m) >= 0.8);
    }

    #[test]
    fn single_pixel_body() {
        let m = square(5, 5, 2, 2, 1);
        let (b, d) = body_detail(&m);
        assert_eq!(b.at(0, 0, 2, 2), 1.0);
        assert_eq!(d.at(0, 0, 2, 2), 0.0);
    }

    #[test]
    fn euclidean_matches_brute_force() {
        let m = BinaryMask::from_fn(9, 11, |y, x| {
            (y * 7 + x * 3) % 5 != 0 || (y > 2 && y < 7 && x > 2 && x < 9)
        })
        .unwrap();
        let d = euclidean_distance(&m);
        for y in 0..9isize {
            for x in 0..11isize {
                let mut best = f64::INFINITY;
                for by in -1..=9isize {
                    for bx in -1..=11isize {
                        let outside = by < 0 || bx < 0 || by >= 9 || bx >= 11;
                        if outside || !m.get(by as usize, bx as usize) {
                            best = best.min((((by - y).pow(2) + (bx - x).pow(2)) as f64).sqrt());
                        }
                    }
                }
                let got = d[y as usize * 11 + x as usize];
                let expect = if m.get(y as usize, x as usize) { best } else { 0.0 };
                assert!((got - expect).abs() < 1e-9, "({y},{x}) {got} vs {expect}");
            }
        }
    }

    #[test]
    fn non_binary_tensor_rejected() {
        let t = Tensor::new([1, 1, 1, 2], vec![0.0, 0.5]).unwrap();
        assert!(BinaryMask::from_tensor(&t).is_err());
        assert_eq!(BinaryMask::threshold(&t).unwrap().count(), 1);
    }
}
