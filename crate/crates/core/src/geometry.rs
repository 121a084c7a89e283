//! Boxes, landmark sets, 5-point similarity estimation and bilinear warping.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataio;
use crate::error::{DataError, GeometryError};

/// Axis-aligned box in pixels, top-left origin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoundingBox {
    pub x: f32,
    pub y: f32,
    pub w: f32,
    pub h: f32,
}

impl BoundingBox {
    pub const fn new(x: f32, y: f32, w: f32, h: f32) -> Self {
        BoundingBox { x, y, w, h }
    }

    pub fn area(&self) -> f32 {
        self.w.max(0.0) * self.h.max(0.0)
    }

    pub fn center(&self) -> [f32; 2] {
        [self.x + self.w / 2.0, self.y + self.h / 2.0]
    }

    /// Smallest box containing every point.
    pub fn enclosing(points: &[[f32; 2]]) -> Self {
        let (mut x0, mut y0) = (f32::INFINITY, f32::INFINITY);
        let (mut x1, mut y1) = (f32::NEG_INFINITY, f32::NEG_INFINITY);
        for p in points {
            x0 = x0.min(p[0]);
            y0 = y0.min(p[1]);
            x1 = x1.max(p[0]);
            y1 = y1.max(p[1]);
        }
        if points.is_empty() {
            return BoundingBox::new(0.0, 0.0, 0.0, 0.0);
        }
        BoundingBox::new(x0, y0, x1 - x0, y1 - y0)
    }
}

/// Intersection over union. Zero-area boxes always give 0.
pub fn iou(a: &BoundingBox, b: &BoundingBox) -> f32 {
    let span = |lo: f32, len: f32| (lo as f64, lo as f64 + len as f64);
    let ((ax0, ax1), (ay0, ay1)) = (span(a.x, a.w), span(a.y, a.h));
    let ((bx0, bx1), (by0, by1)) = (span(b.x, b.w), span(b.y, b.h));
    let ix = ax1.min(bx1) - ax0.max(bx0);
    let iy = ay1.min(by1) - ay0.max(by0);
    if ix <= 0.0 || iy <= 0.0 {
        return 0.0;
    }
    let inter = ix * iy;
    let union = a.w as f64 * a.h as f64 + b.w as f64 * b.h as f64 - inter;
    if union <= 0.0 {
        return 0.0;
    }
    ((inter / union) as f32).clamp(0.0, 1.0)
}

/// Scales width and height by `factor` about the box center.
pub fn enlarge(b: &BoundingBox, factor: f32) -> Result<BoundingBox, GeometryError> {
    if !(factor > 0.0) {
        return Err(GeometryError::NonPositiveFactor(factor));
    }
    let [cx, cy] = b.center();
    let (w, h) = (b.w * factor, b.h * factor);
    Ok(BoundingBox::new(cx - w / 2.0, cy - h / 2.0, w, h))
}

/// Five facial landmarks, ordered
/// `[left-eye-outer, left-eye-inner, nose, right-eye-inner, right-eye-outer]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LandmarkSet5 {
    pub points: [[f32; 2]; 5],
}

impl LandmarkSet5 {
    pub fn new(points: [[f32; 2]; 5]) -> Self {
        LandmarkSet5 { points }
    }

    pub fn bounding_rect(&self) -> BoundingBox {
        BoundingBox::enclosing(&self.points)
    }

    pub fn map(&self, t: &SimilarityTransform) -> LandmarkSet5 {
        LandmarkSet5 {
            points: self.points.map(|p| {
                let q = t.apply([p[0] as f64, p[1] as f64]);
                [q[0] as f32, q[1] as f32]
            }),
        }
    }
}

/// Default reference face in 224x224 output space. A symmetric template,
/// overridable through [`load_reference`].
pub const DEFAULT_REFERENCE: LandmarkSet5 = LandmarkSet5 {
    points: [
        [70.7, 85.0],
        [98.0, 85.0],
        [112.0, 120.0],
        [126.0, 85.0],
        [153.3, 85.0],
    ],
};

pub const ALIGNED_SIZE: usize = 224;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReferenceFaceConfig {
    pub reference_landmarks: LandmarkSet5,
}

/// Loads `{"reference_landmarks": [[x,y] x 5]}`.
pub fn load_reference(path: &Path) -> Result<LandmarkSet5, DataError> {
    let cfg: ReferenceFaceConfig = dataio::read_json(path)?;
    if cfg.reference_landmarks.points.iter().flatten().any(|v| !v.is_finite()) {
        return Err(DataError::Invariant {
            line: 0,
            message: "non-finite reference landmark".into(),
        });
    }
    Ok(cfg.reference_landmarks)
}

/// `p -> scale * R(rotation) * p + translation`, no reflection.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityTransform {
    pub scale: f64,
    pub rotation: f64,
    pub translation: [f64; 2],
}

impl Default for SimilarityTransform {
    fn default() -> Self {
        Self::IDENTITY
    }
}

impl SimilarityTransform {
    pub const IDENTITY: SimilarityTransform = SimilarityTransform {
        scale: 1.0,
        rotation: 0.0,
        translation: [0.0, 0.0],
    };

    /// Row-major 2x3 matrix `[s cos, -s sin, tx; s sin, s cos, ty]`.
    pub fn matrix(&self) -> [[f64; 3]; 2] {
        let (sin, cos) = self.rotation.sin_cos();
        let (a, b) = (self.scale * cos, self.scale * sin);
        [
            [a, -b, self.translation[0]],
            [b, a, self.translation[1]],
        ]
    }

    /// Recovers parameters from a similarity matrix.
    pub fn from_matrix(m: &[[f64; 3]; 2]) -> Self {
        let (a, b) = (m[0][0], m[1][0]);
        SimilarityTransform {
            scale: a.hypot(b),
            rotation: b.atan2(a),
            translation: [m[0][2], m[1][2]],
        }
    }

    pub fn apply(&self, p: [f64; 2]) -> [f64; 2] {
        let m = self.matrix();
        [
            m[0][0] * p[0] + m[0][1] * p[1] + m[0][2],
            m[1][0] * p[0] + m[1][1] * p[1] + m[1][2],
        ]
    }

    pub fn inverse(&self) -> SimilarityTransform {
        let inv_scale = 1.0 / self.scale;
        let rotation = -self.rotation;
        let (sin, cos) = rotation.sin_cos();
        let [tx, ty] = self.translation;
        SimilarityTransform {
            scale: inv_scale,
            rotation,
            translation: [
                -inv_scale * (cos * tx - sin * ty),
                -inv_scale * (sin * tx + cos * ty),
            ],
        }
    }

    /// `self` applied after `first`.
    pub fn compose(&self, first: &SimilarityTransform) -> SimilarityTransform {
        let t = self.apply(first.translation);
        SimilarityTransform {
            scale: self.scale * first.scale,
            rotation: self.rotation + first.rotation,
            translation: t,
        }
    }

    /// Scaling about `center`.
    pub fn scale_about(scale: f64, center: [f64; 2]) -> SimilarityTransform {
        SimilarityTransform {
            scale,
            rotation: 0.0,
            translation: [center[0] * (1.0 - scale), center[1] * (1.0 - scale)],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityFit {
    pub transform: SimilarityTransform,
    /// Sum of squared residuals `sum |T(src_i) - dst_i|^2`.
    pub residual: f64,
}

/// Least-squares similarity (rotation, uniform scale, translation) mapping
/// `src` onto `dst`, for any number of correspondences.
pub fn estimate_similarity_points(
    src: &[[f64; 2]],
    dst: &[[f64; 2]],
) -> Result<SimilarityFit, GeometryError> {
    assert_eq!(src.len(), dst.len(), "point sets differ in length");
    let n = src.len();
    if n == 0 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let mean = |pts: &[[f64; 2]]| {
        let s = pts.iter().fold([0.0, 0.0], |acc, p| [acc[0] + p[0], acc[1] + p[1]]);
        [s[0] / n as f64, s[1] / n as f64]
    };
    let (ms, md) = (mean(src), mean(dst));

    let (mut var, mut dot, mut cross) = (0.0f64, 0.0f64, 0.0f64);
    for (s, d) in src.iter().zip(dst) {
        let (sx, sy) = (s[0] - ms[0], s[1] - ms[1]);
        let (dx, dy) = (d[0] - md[0], d[1] - md[1]);
        var += sx * sx + sy * sy;
        dot += sx * dx + sy * dy;
        cross += sx * dy - sy * dx;
    }
    let spread = src
        .iter()
        .flat_map(|p| [p[0].abs(), p[1].abs()])
        .fold(1.0f64, f64::max);
    if var <= (spread * 1e-12).powi(2) * n as f64 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let norm = dot.hypot(cross);
    if norm == 0.0 {
        return Err(GeometryError::DegenerateConfiguration);
    }
    let scale = norm / var;
    let rotation = cross.atan2(dot);
    let (sin, cos) = rotation.sin_cos();
    let translation = [
        md[0] - scale * (cos * ms[0] - sin * ms[1]),
        md[1] - scale * (sin * ms[0] + cos * ms[1]),
    ];
    let transform = SimilarityTransform {
        scale,
        rotation,
        translation,
    };
    let residual = src
        .iter()
        .zip(dst)
        .map(|(s, d)| {
            let q = transform.apply(*s);
            (q[0] - d[0]).powi(2) + (q[1] - d[1]).powi(2)
        })
        .sum();
    Ok(SimilarityFit {
        transform,
        residual,
    })
}

pub fn estimate_similarity(
    src: &LandmarkSet5,
    dst: &LandmarkSet5,
) -> Result<SimilarityFit, GeometryError> {
    let widen = |l: &LandmarkSet5| l.points.map(|p| [p[0] as f64, p[1] as f64]);
    estimate_similarity_points(&widen(src), &widen(dst))
}

/// An RGB frame, row-major HxWx3, values nominally in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Frame {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self, GeometryError> {
        if width * height * 3 != data.len() {
            return Err(GeometryError::BadFrameBuffer {
                width,
                height,
                found: data.len(),
            });
        }
        Ok(Frame {
            width,
            height,
            data,
        })
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Frame {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn is_empty(&self) -> bool {
        self.width == 0 || self.height == 0
    }

    /// Bilinear sample at continuous pixel coordinates (pixel centers on
    /// integers); neighbours outside the frame contribute black.
    #[inline]
    pub fn sample_bilinear(&self, x: f64, y: f64) -> [f32; 3] {
        if !(x > -1.0 && y > -1.0 && x < self.width as f64 && y < self.height as f64) {
            return [0.0; 3];
        }
        let (x0, y0) = (x.floor(), y.floor());
        let (fx, fy) = ((x - x0) as f32, (y - y0) as f32);
        let (x0, y0) = (x0 as i64, y0 as i64);
        let fetch = |xi: i64, yi: i64| -> [f32; 3] {
            if xi < 0 || yi < 0 || xi >= self.width as i64 || yi >= self.height as i64 {
                [0.0; 3]
            } else {
                self.pixel(xi as usize, yi as usize)
            }
        };
        let p00 = fetch(x0, y0);
        let p10 = fetch(x0 + 1, y0);
        let p01 = fetch(x0, y0 + 1);
        let p11 = fetch(x0 + 1, y0 + 1);
        let mut out = [0.0f32; 3];
        for c in 0..3 {
            let top = (1.0 - fx) * p00[c] + fx * p10[c];
            let bottom = (1.0 - fx) * p01[c] + fx * p11[c];
            out[c] = (1.0 - fy) * top + fy * bottom;
        }
        out
    }
}

/// Renders `frame` through `t` (source -> output coordinates) into an
/// `out_w x out_h` frame by inverse mapping and bilinear sampling.
pub fn warp_frame(
    frame: &Frame,
    t: &SimilarityTransform,
    out_w: usize,
    out_h: usize,
) -> Result<Frame, GeometryError> {
    if frame.is_empty() || frame.data.is_empty() {
        return Err(GeometryError::EmptyFrame);
    }
    let inv = t.inverse().matrix();
    let mut out = Frame::zeros(out_w, out_h);
    for v in 0..out_h {
        let (vf, row) = (v as f64, v * out_w * 3);
        for u in 0..out_w {
            let uf = u as f64;
            let x = inv[0][0] * uf + inv[0][1] * vf + inv[0][2];
            let y = inv[1][0] * uf + inv[1][1] * vf + inv[1][2];
            let px = frame.sample_bilinear(x, y);
            let o = row + u * 3;
            for c in 0..3 {
                out.data[o + c] = px[c].clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_2;

    fn lm(points: [[f32; 2]; 5]) -> LandmarkSet5 {
        LandmarkSet5::new(points)
    }

    #[test]
    fn iou_examples() {
        let b = BoundingBox::new(3.0, 4.0, 5.0, 6.0);
        assert_eq!(iou(&b, &b), 1.0);
        let a = BoundingBox::new(0.0, 0.0, 2.0, 2.0);
        let c = BoundingBox::new(1.0, 1.0, 2.0, 2.0);
        assert!((iou(&a, &c) - 1.0 / 7.0).abs() < 1e-6);
        let d = BoundingBox::new(0.0, 0.0, 1.0, 1.0);
        let e = BoundingBox::new(5.0, 5.0, 1.0, 1.0);
        assert_eq!(iou(&d, &e), 0.0);
        let z = BoundingBox::new(1.0, 1.0, 0.0, 0.0);
        assert_eq!(iou(&z, &z), 0.0);
    }

    #[test]
    fn enlarge_examples() {
        let b = enlarge(&BoundingBox::new(10.0, 10.0, 10.0, 10.0), 1.8).unwrap();
        for (got, want) in [(b.x, 6.0), (b.y, 6.0), (b.w, 18.0), (b.h, 18.0)] {
            assert!((got - want).abs() < 1e-5, "{b:?}");
        }
        let id = BoundingBox::new(1.5, 2.5, 3.0, 7.0);
        assert_eq!(enlarge(&id, 1.0).unwrap(), id);
        let b = enlarge(&BoundingBox::new(0.0, 0.0, 4.0, 2.0), 2.0).unwrap();
        assert_eq!(b, BoundingBox::new(-2.0, -1.0, 8.0, 4.0));
        assert_eq!(enlarge(&id, 0.0), Err(GeometryError::NonPositiveFactor(0.0)));
        assert!(enlarge(&id, -1.0).is_err());
    }

    #[test]
    fn similarity_identity() {
        let fit = estimate_similarity(&DEFAULT_REFERENCE, &DEFAULT_REFERENCE).unwrap();
        assert!((fit.transform.scale - 1.0).abs() < 1e-9);
        assert!(fit.transform.rotation.abs() < 1e-9);
        assert!(fit.transform.translation[0].abs() < 1e-9);
        assert!(fit.transform.translation[1].abs() < 1e-9);
    }

    #[test]
    fn similarity_scale_and_shift() {
        let src = DEFAULT_REFERENCE;
        let dst = lm(src.points.map(|p| [2.0 * p[0] + 3.0, 2.0 * p[1] + 4.0]));
        let fit = estimate_similarity(&src, &dst).unwrap();
        assert!((fit.transform.scale - 2.0).abs() < 1e-6);
        assert!(fit.transform.rotation.abs() < 1e-6);
        assert!((fit.transform.translation[0] - 3.0).abs() < 1e-4);
        assert!((fit.transform.translation[1] - 4.0).abs() < 1e-4);
        assert!(fit.residual < 1e-6);
    }

    #[test]
    fn similarity_quarter_turn() {
        let src = DEFAULT_REFERENCE;
        let dst = lm(src.points.map(|p| [-p[1], p[0]]));
        let fit = estimate_similarity(&src, &dst).unwrap();
        assert!((fit.transform.rotation - FRAC_PI_2).abs() < 1e-6);
        assert!((fit.transform.scale - 1.0).abs() < 1e-6);
    }

    #[test]
    fn similarity_rejects_coincident_points() {
        let src = lm([[5.0, 5.0]; 5]);
        assert_eq!(
            estimate_similarity(&src, &DEFAULT_REFERENCE),
            Err(GeometryError::DegenerateConfiguration)
        );
    }

    #[test]
    fn no_reflection_for_mirrored_targets() {
        let src = DEFAULT_REFERENCE;
        let dst = lm(src.points.map(|p| [-p[0], p[1]]));
        let fit = estimate_similarity(&src, &dst).unwrap();
        assert!(fit.transform.scale > 0.0);
        assert!(fit.residual > 1.0);
    }

    #[test]
    fn matrix_and_params_agree() {
        let t = SimilarityTransform {
            scale: 1.7,
            rotation: -0.4,
            translation: [12.0, -3.0],
        };
        let back = SimilarityTransform::from_matrix(&t.matrix());
        assert!((back.scale - t.scale).abs() < 1e-12);
        assert!((back.rotation - t.rotation).abs() < 1e-12);
        let p = t.inverse().apply(t.apply([3.0, 9.0]));
        assert!((p[0] - 3.0).abs() < 1e-9 && (p[1] - 9.0).abs() < 1e-9);
    }

    fn checker(w: usize, h: usize) -> Frame {
        let data = (0..w * h * 3).map(|i| ((i * 37) % 101) as f32 / 100.0).collect();
        Frame::new(w, h, data).unwrap()
    }

    #[test]
    fn warp_identity_is_exact() {
        let f = checker(224, 224);
        let out = warp_frame(&f, &SimilarityTransform::IDENTITY, 224, 224).unwrap();
        assert_eq!(out, f);
    }

    #[test]
    fn warp_translation_moves_pixel() {
        let mut f = Frame::zeros(16, 16);
        f.set_pixel(5, 7, [1.0, 1.0, 1.0]);
        let t = SimilarityTransform {
            translation: [1.0, 0.0],
            ..SimilarityTransform::IDENTITY
        };
        let out = warp_frame(&f, &t, 16, 16).unwrap();
        let lit: Vec<(usize, usize)> = (0..16)
            .flat_map(|y| (0..16).map(move |x| (x, y)))
            .filter(|&(x, y)| out.pixel(x, y)[0] > 0.0)
            .collect();
        assert_eq!(lit, vec![(6, 7)]);
        assert_eq!(out.pixel(6, 7), [1.0, 1.0, 1.0]);
    }

    #[test]
    fn warp_out_of_bounds_is_black() {
        let f = checker(32, 32);
        let t = SimilarityTransform {
            translation: [1000.0, 1000.0],
            ..SimilarityTransform::IDENTITY
        };
        let out = warp_frame(&f, &t, 224, 224).unwrap();
        assert!(out.data.iter().all(|&v| v == 0.0));
        assert_eq!(
            warp_frame(&Frame::zeros(0, 0), &t, 4, 4),
            Err(GeometryError::EmptyFrame)
        );
    }

    #[test]
    fn reference_loads_from_json() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ref.json");
        std::fs::write(
            &path,
            r#"{"reference_landmarks": [[1,2],[3,4],[5,6],[7,8],[9,10]]}"#,
        )
        .unwrap();
        let r = load_reference(&path).unwrap();
        assert_eq!(r.points[4], [9.0, 10.0]);
    }

    fn arb_box() -> impl Strategy<Value = BoundingBox> {
        (-50.0f32..50.0, -50.0f32..50.0, 0.1f32..40.0, 0.1f32..40.0)
            .prop_map(|(x, y, w, h)| BoundingBox::new(x, y, w, h))
    }

    fn arb_landmarks() -> impl Strategy<Value = LandmarkSet5> {
        proptest::array::uniform5((-60.0f32..60.0, -60.0f32..60.0))
            .prop_map(|ps| LandmarkSet5::new(ps.map(|(x, y)| [x, y])))
            .prop_filter("spread", |l| {
                let r = l.bounding_rect();
                r.w > 5.0 && r.h > 5.0
            })
    }

    fn arb_transform() -> impl Strategy<Value = SimilarityTransform> {
        (0.5f64..2.0, -3.1f64..3.1, -40.0f64..40.0, -40.0f64..40.0).prop_map(
            |(scale, rotation, tx, ty)| SimilarityTransform {
                scale,
                rotation,
                translation: [tx, ty],
            },
        )
    }

    proptest! {
        #[test]
        fn iou_properties(a in arb_box(), b in arb_box()) {
            let ab = iou(&a, &b);
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab, iou(&b, &a));
            prop_assert!((iou(&a, &a) - 1.0).abs() < 1e-6);
        }

        #[test]
        fn similarity_round_trip(src in arb_landmarks(), t in arb_transform()) {
            let fit = estimate_similarity(&src, &src.map(&t)).unwrap();
            let (got, want) = (fit.transform.matrix(), t.matrix());
            for r in 0..2 {
                for c in 0..3 {
                    prop_assert!((got[r][c] - want[r][c]).abs() < 1e-5, "{got:?} vs {want:?}");
                }
            }
        }

        #[test]
        fn residual_invariant_to_rigid_motion(
            src in arb_landmarks(),
            dst in arb_landmarks(),
            angle in -3.1f64..3.1,
            shift in (-30.0f64..30.0, -30.0f64..30.0),
        ) {
            let widen = |l: &LandmarkSet5| l.points.map(|p| [p[0] as f64, p[1] as f64]);
            let motion = SimilarityTransform { scale: 1.0, rotation: angle, translation: [shift.0, shift.1] };
            let (s, d) = (widen(&src), widen(&dst));
            let base = estimate_similarity_points(&s, &d).unwrap().residual;
            let moved = estimate_similarity_points(&s.map(|p| motion.apply(p)), &d.map(|p| motion.apply(p)))
                .unwrap()
                .residual;
            prop_assert!((base - moved).abs() < 1e-6, "{base} vs {moved}");
        }
    }
}
