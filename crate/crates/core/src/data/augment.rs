//! Background/ROI separation and recomposition of ground-truth images.

use serde::{Deserialize, Serialize};

use crate::error::{FpmError, Result};
use crate::field::RealGrid;
use crate::scalar::Real;

/// Axis-aligned box; `x` is the column and `y` the row of its top-left corner.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BBox {
    pub x: usize,
    pub y: usize,
    pub w: usize,
    pub h: usize,
}

impl BBox {
    pub fn new(x: usize, y: usize, w: usize, h: usize) -> Self {
        BBox { x, y, w, h }
    }

    pub fn validate(&self, dims: (usize, usize)) -> Result<()> {
        if self.w == 0 || self.h == 0 || self.y + self.h > dims.0 || self.x + self.w > dims.1 {
            return Err(FpmError::domain(format!(
                "box {self:?} does not fit a {}x{} image",
                dims.0, dims.1
            )));
        }
        Ok(())
    }

    fn contains(&self, i: usize, j: usize) -> bool {
        i >= self.y && i < self.y + self.h && j >= self.x && j < self.x + self.w
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Flip {
    #[default]
    None,
    Horizontal,
    Vertical,
}

/// Flip followed by `quarter_turns` quarter turns.
///
/// A quarter turn maps `out[i][j] = in[h-1-j][i]`, so the column `[a; b]`
/// becomes the row `[b, a]`; this is counterclockwise with the row axis
/// pointing up.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Transform {
    pub quarter_turns: u8,
    pub flip: Flip,
}

impl Transform {
    pub const IDENTITY: Transform = Transform {
        quarter_turns: 0,
        flip: Flip::None,
    };

    pub fn new(quarter_turns: u8, flip: Flip) -> Self {
        Transform {
            quarter_turns: quarter_turns % 4,
            flip,
        }
    }

    /// All twelve (rotation, flip) combinations; they realize the eight
    /// elements of the dihedral group.
    pub fn all() -> Vec<Transform> {
        let mut v = Vec::with_capacity(12);
        for flip in [Flip::None, Flip::Horizontal, Flip::Vertical] {
            for q in 0..4 {
                v.push(Transform::new(q, flip));
            }
        }
        v
    }

    /// Output dimensions for an `h × w` input.
    pub fn output_dims(&self, h: usize, w: usize) -> (usize, usize) {
        if self.quarter_turns % 2 == 1 {
            (w, h)
        } else {
            (h, w)
        }
    }

    pub fn apply<T: Real>(&self, img: &RealGrid<T>) -> RealGrid<T> {
        let (h, w) = img.dims();
        let mut out = match self.flip {
            Flip::None => img.clone(),
            Flip::Horizontal => RealGrid::from_fn(h, w, |i, j| img[(i, w - 1 - j)]),
            Flip::Vertical => RealGrid::from_fn(h, w, |i, j| img[(h - 1 - i, j)]),
        };
        for _ in 0..self.quarter_turns % 4 {
            let (h, w) = out.dims();
            out = RealGrid::from_fn(w, h, |i, j| out[(h - 1 - j, i)]);
        }
        out
    }

    /// The transform equal to applying `self` and then `other`.
    pub fn then(&self, other: &Transform) -> Transform {
        let probe = RealGrid::from_fn(2, 3, |i, j| (i * 3 + j) as f64);
        let target = other.apply(&self.apply(&probe));
        Transform::all()
            .into_iter()
            .find(|t| t.apply(&probe) == target)
            .expect("the dihedral group is closed")
    }
}

/// A region cut from a source image and where it is pasted.
#[derive(Clone, Debug, PartialEq)]
pub struct RoiSpec<T> {
    pub source: RealGrid<T>,
    pub bbox: BBox,
    pub transform: Transform,
    /// Top-left `(x, y)` of the transformed patch on the canvas.
    pub paste: (usize, usize),
}

impl<T: Real> RoiSpec<T> {
    /// Transformed patch.
    pub fn patch(&self) -> RealGrid<T> {
        let b = self.bbox;
        self.transform.apply(&self.source.block(b.y, b.x, b.h, b.w))
    }
}

fn median<T: Real>(mut v: Vec<T>) -> T {
    v.sort_by(|a, b| a.partial_cmp(b).expect("finite pixels"));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / T::lit(2.0)
    }
}

/// Width of the ring sampled around a box for infill.
pub const RING_WIDTH: usize = 2;

/// `gt` with every box replaced by the median of the ring of pixels around
/// it that lie outside all boxes.
pub fn extract_background<T: Real>(gt: &RealGrid<T>, bboxes: &[BBox]) -> Result<RealGrid<T>> {
    let (h, w) = gt.dims();
    for b in bboxes {
        b.validate((h, w))?;
    }
    let inside_any = |i: usize, j: usize| bboxes.iter().any(|b| b.contains(i, j));
    let mut out = gt.clone();
    for b in bboxes {
        let top = b.y.saturating_sub(RING_WIDTH);
        let left = b.x.saturating_sub(RING_WIDTH);
        let bottom = (b.y + b.h + RING_WIDTH).min(h);
        let right = (b.x + b.w + RING_WIDTH).min(w);
        let mut ring = Vec::new();
        for i in top..bottom {
            for j in left..right {
                if !inside_any(i, j) {
                    ring.push(gt[(i, j)]);
                }
            }
        }
        if ring.is_empty() {
            ring = (0..h)
                .flat_map(|i| (0..w).map(move |j| (i, j)))
                .filter(|&(i, j)| !inside_any(i, j))
                .map(|(i, j)| gt[(i, j)])
                .collect();
        }
        if ring.is_empty() {
            ring = gt.data().to_vec();
        }
        let fill = median(ring);
        for i in b.y..b.y + b.h {
            for j in b.x..b.x + b.w {
                out[(i, j)] = fill;
            }
        }
    }
    Ok(out)
}

/// Verbatim crops, untransformed and pasted back where they came from.
pub fn extract_rois<T: Real>(gt: &RealGrid<T>, bboxes: &[BBox]) -> Result<Vec<RoiSpec<T>>> {
    bboxes
        .iter()
        .map(|&b| {
            b.validate(gt.dims())?;
            Ok(RoiSpec {
                source: gt.block(b.y, b.x, b.h, b.w),
                bbox: BBox::new(0, 0, b.w, b.h),
                transform: Transform::IDENTITY,
                paste: (b.x, b.y),
            })
        })
        .collect()
}

/// Pastes every ROI in order; later ROIs overwrite earlier ones.
pub fn composite<T: Real>(background: &RealGrid<T>, rois: &[RoiSpec<T>]) -> Result<RealGrid<T>> {
    let (h, w) = background.dims();
    let mut out = background.clone();
    for r in rois {
        r.bbox.validate(r.source.dims())?;
        let patch = r.patch();
        let (ph, pw) = patch.dims();
        let (x, y) = r.paste;
        if y + ph > h || x + pw > w {
            return Err(FpmError::domain(format!(
                "{ph}x{pw} patch at ({x}, {y}) leaves the {h}x{w} canvas"
            )));
        }
        for i in 0..ph {
            for j in 0..pw {
                out[(y + i, x + j)] = patch[(i, j)];
            }
        }
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Complexity {
    Simple,
    Complex,
}

impl Complexity {
    pub fn as_str(self) -> &'static str {
        match self {
            Complexity::Simple => "simple",
            Complexity::Complex => "complex",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "simple" => Ok(Complexity::Simple),
            "complex" => Ok(Complexity::Complex),
            _ => Err(FpmError::format(format!("unknown complexity `{s}`"))),
        }
    }
}

pub const DEFAULT_SIMPLE_THRESHOLD: usize = 1;

/// Simple iff the sample holds at most `threshold` ROIs.
pub fn classify_complexity(roi_count: usize, threshold: usize) -> Complexity {
    if roi_count <= threshold {
        Complexity::Simple
    } else {
        Complexity::Complex
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(h: usize, w: usize) -> RealGrid<f64> {
        RealGrid::from_fn(h, w, |i, j| (i * w + j) as f64)
    }

    #[test]
    fn quarter_turn_of_a_column() {
        let col = RealGrid::from_vec(2, 1, vec![1.0, 2.0]).unwrap();
        let r = Transform::new(1, Flip::None).apply(&col);
        assert_eq!(r.dims(), (1, 2));
        assert_eq!(r.data(), &[2.0, 1.0]);
    }

    #[test]
    fn flips() {
        let x = ramp(2, 3);
        assert_eq!(Transform::new(0, Flip::Horizontal).apply(&x).data(), &[2.0, 1.0, 0.0, 5.0, 4.0, 3.0]);
        assert_eq!(Transform::new(0, Flip::Vertical).apply(&x).data(), &[3.0, 4.0, 5.0, 0.0, 1.0, 2.0]);
    }

    #[test]
    fn dihedral_group_has_eight_elements_and_is_closed() {
        let probe = ramp(2, 3);
        let mut images: Vec<RealGrid<f64>> = Vec::new();
        for t in Transform::all() {
            let im = t.apply(&probe);
            if !images.contains(&im) {
                images.push(im);
            }
        }
        assert_eq!(images.len(), 8);
        for a in Transform::all() {
            for b in Transform::all() {
                let c = a.then(&b);
                assert_eq!(c.apply(&probe), b.apply(&a.apply(&probe)));
            }
        }
        let four = (0..4).fold(Transform::IDENTITY, |t, _| t.then(&Transform::new(1, Flip::None)));
        assert_eq!(four.apply(&probe), probe);
    }

    #[test]
    fn background_without_boxes_is_the_input() {
        let x = ramp(5, 5);
        assert_eq!(extract_background(&x, &[]).unwrap(), x);
    }

    #[test]
    fn constant_background_is_unchanged() {
        let x = RealGrid::filled(8, 8, 0.3);
        assert_eq!(extract_background(&x, &[BBox::new(2, 2, 3, 3)]).unwrap(), x);
    }

    #[test]
    fn ring_median_fill() {
        let mut x = RealGrid::filled(8, 8, 0.2);
        for i in 3..5 {
            for j in 3..5 {
                x[(i, j)] = 1.0;
            }
        }
        x[(1, 1)] = 9.0;
        let bg = extract_background(&x, &[BBox::new(3, 3, 2, 2)]).unwrap();
        assert_eq!(bg[(3, 3)], 0.2);
        assert_eq!(bg[(1, 1)], 9.0);
    }

    #[test]
    fn crops_match_indexing() {
        let x = ramp(6, 7);
        let b = BBox::new(2, 1, 3, 4);
        let r = &extract_rois(&x, &[b]).unwrap()[0];
        for i in 0..4 {
            for j in 0..3 {
                assert_eq!(r.source[(i, j)], x[(1 + i, 2 + j)]);
            }
        }
        assert!(extract_rois(&x, &[BBox::new(5, 0, 3, 1)]).is_err());
    }

    #[test]
    fn identity_paste_restores_the_box() {
        let x = ramp(6, 6);
        let boxes = [BBox::new(1, 1, 2, 3), BBox::new(3, 2, 3, 2)];
        let bg = extract_background(&x, &boxes).unwrap();
        let rois = extract_rois(&x, &boxes).unwrap();
        let c = composite(&bg, &rois).unwrap();
        for b in boxes {
            for i in b.y..b.y + b.h {
                for j in b.x..b.x + b.w {
                    assert_eq!(c[(i, j)], x[(i, j)]);
                }
            }
        }
    }

    #[test]
    fn last_writer_wins() {
        let bg = RealGrid::zeros(4, 4);
        let mk = |v: f64, paste| RoiSpec {
            source: RealGrid::filled(2, 2, v),
            bbox: BBox::new(0, 0, 2, 2),
            transform: Transform::IDENTITY,
            paste,
        };
        let c = composite(&bg, &[mk(1.0, (0, 0)), mk(2.0, (1, 1))]).unwrap();
        assert_eq!(c[(0, 0)], 1.0);
        assert_eq!(c[(1, 1)], 2.0);
        assert_eq!(c[(1, 0)], 1.0);
        assert_eq!(c[(2, 2)], 2.0);
        assert!(composite(&bg, &[mk(1.0, (3, 0))]).is_err());
    }

    #[test]
    fn complexity_threshold() {
        assert_eq!(classify_complexity(1, DEFAULT_SIMPLE_THRESHOLD), Complexity::Simple);
        assert_eq!(classify_complexity(5, DEFAULT_SIMPLE_THRESHOLD), Complexity::Complex);
        assert_eq!(classify_complexity(3, 3), Complexity::Simple);
        assert_eq!(classify_complexity(0, DEFAULT_SIMPLE_THRESHOLD), Complexity::Simple);
    }
}
