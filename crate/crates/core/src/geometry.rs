//! Differentiable projective geometry: backprojection, rigid reprojection,
//! bilinear sampling, and view synthesis.
//!
//! The reprojection of target pixel p with depth D under pose T and shared
//! intrinsics K is `p_hat = project(K, T(D * K^-1 p))`. An exact identity-pose
//! fast path returns the pixel grid unchanged, because `(d * x) / d` is not
//! bit-exact in floating point while the identity warp must be.

use crate::camera::Intrinsics;
use crate::depth::DepthMap;
use crate::grid::{pixel_center, PixelGrid};
use crate::image::{BoolMask, ImageBuffer};
use crate::math::{mat_mul_vec, vec_scale, Mat3, Vec3};
use crate::pose::{rotation_partials, PoseSE3};

/// Reprojected points closer than this are treated as behind the camera.
pub const MIN_PROJECTION_DEPTH: f64 = 1e-6;

const INVALID_COORD: [f64; 2] = [-1.0, -1.0];

#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    coords: Vec<[f64; 2]>,
    valid: BoolMask,
}

impl FlowField {
    pub fn from_parts(height: usize, width: usize, coords: Vec<[f64; 2]>, valid: BoolMask) -> Self {
        assert_eq!(coords.len(), height * width, "flow length mismatch");
        assert_eq!(
            (valid.height(), valid.width()),
            (height, width),
            "flow mask shape mismatch"
        );
        Self {
            height,
            width,
            coords,
            valid,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn coord(&self, r: usize, c: usize) -> [f64; 2] {
        self.coords[r * self.width + c]
    }

    pub fn coords(&self) -> &[[f64; 2]] {
        &self.coords
    }

    pub fn valid(&self) -> &BoolMask {
        &self.valid
    }
}

/// Camera-frame points produced by backprojection.
#[derive(Debug, Clone, PartialEq)]
pub struct PointField {
    height: usize,
    width: usize,
    points: Vec<[f64; 3]>,
    valid: BoolMask,
}

impl PointField {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn point(&self, r: usize, c: usize) -> [f64; 3] {
        self.points[r * self.width + c]
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn valid(&self) -> &BoolMask {
        &self.valid
    }
}

/// Per-pixel partials of the reprojected coordinate, laid out `[coord][param]`.
#[derive(Debug, Clone)]
pub struct JacobianBundle {
    height: usize,
    width: usize,
    /// d(u', v') / d(depth)
    pub d_depth: Vec<[f64; 2]>,
    /// d(u', v') / d(r0, r1, r2, t0, t1, t2)
    pub d_pose: Vec<[[f64; 6]; 2]>,
    /// d(u', v') / d(fx, fy, cx, cy)
    pub d_intrinsics: Vec<[[f64; 4]; 2]>,
}

impl JacobianBundle {
    fn zeros(height: usize, width: usize) -> Self {
        let n = height * width;
        Self {
            height,
            width,
            d_depth: vec![[0.0; 2]; n],
            d_pose: vec![[[0.0; 6]; 2]; n],
            d_intrinsics: vec![[[0.0; 4]; 2]; n],
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

pub fn backproject(grid: &PixelGrid, depth: &DepthMap, k: &Intrinsics) -> PointField {
    assert_eq!(
        (grid.height(), grid.width()),
        (depth.height(), depth.width()),
        "grid/depth shape mismatch"
    );
    let (h, w) = (grid.height(), grid.width());
    let mut points = Vec::with_capacity(h * w);
    let mut valid = BoolMask::all_true(h, w);
    for r in 0..h {
        for c in 0..w {
            if !depth.is_valid(r, c) {
                valid.set(r, c, false);
                points.push([0.0; 3]);
                continue;
            }
            let p = grid.get(r, c);
            let ray = k.ray(p[0], p[1]);
            points.push(vec_scale(ray, depth.get(r, c)));
        }
    }
    PointField {
        height: h,
        width: w,
        points,
        valid,
    }
}

/// Reprojects one continuous coordinate; returns the new coordinate and its
/// support-frame depth. The caller decides validity from the returned depth.
#[inline]
pub fn reproject_coord(
    u: f64,
    v: f64,
    depth: f64,
    rot: &Mat3,
    t: Vec3,
    k: &Intrinsics,
) -> ([f64; 2], f64) {
    let ray = k.ray(u, v);
    let xt = vec_scale(ray, depth);
    let mut xs = mat_mul_vec(rot, xt);
    xs[0] += t[0];
    xs[1] += t[1];
    xs[2] += t[2];
    if xs[2].abs() < MIN_PROJECTION_DEPTH {
        return (INVALID_COORD, xs[2]);
    }
    let (u2, v2) = k.project(xs);
    ([u2, v2], xs[2])
}

fn in_bounds(coord: [f64; 2], w: usize, h: usize) -> bool {
    coord[0] >= 0.0 && coord[0] <= w as f64 && coord[1] >= 0.0 && coord[1] <= h as f64
}

pub fn reproject(depth: &DepthMap, pose: &PoseSE3, k: &Intrinsics) -> FlowField {
    let (h, w) = (depth.height(), depth.width());
    let mut coords = Vec::with_capacity(h * w);
    let mut valid = BoolMask::all_true(h, w);
    if pose.is_identity() {
        for r in 0..h {
            for c in 0..w {
                let (u, v) = pixel_center(r, c);
                coords.push([u, v]);
                if !depth.is_valid(r, c) {
                    valid.set(r, c, false);
                }
            }
        }
        return FlowField {
            height: h,
            width: w,
            coords,
            valid,
        };
    }
    let rot = pose.rotation_matrix();
    for r in 0..h {
        for c in 0..w {
            if !depth.is_valid(r, c) {
                valid.set(r, c, false);
                coords.push(INVALID_COORD);
                continue;
            }
            let (u, v) = pixel_center(r, c);
            let (coord, z) = reproject_coord(u, v, depth.get(r, c), &rot, pose.translation, k);
            if z < MIN_PROJECTION_DEPTH || !in_bounds(coord, w, h) {
                valid.set(r, c, false);
            }
            coords.push(coord);
        }
    }
    FlowField {
        height: h,
        width: w,
        coords,
        valid,
    }
}

/// Reprojection plus closed-form partials with respect to depth, the six pose
/// parameters, and the four intrinsics. Entries at invalid pixels are zero.
pub fn reproject_with_jacobian(
    depth: &DepthMap,
    pose: &PoseSE3,
    k: &Intrinsics,
) -> (FlowField, JacobianBundle) {
    let (h, w) = (depth.height(), depth.width());
    let mut jac = JacobianBundle::zeros(h, w);
    let rot = pose.rotation_matrix();
    let drot = rotation_partials(pose.rotation);
    let identity = pose.is_identity();
    let mut coords = Vec::with_capacity(h * w);
    let mut valid = BoolMask::all_true(h, w);
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if !depth.is_valid(r, c) {
                valid.set(r, c, false);
                coords.push(INVALID_COORD);
                continue;
            }
            let (u, v) = pixel_center(r, c);
            let d = depth.get(r, c);
            let ray = k.ray(u, v);
            let xt = vec_scale(ray, d);
            let mut xs = mat_mul_vec(&rot, xt);
            xs[0] += pose.translation[0];
            xs[1] += pose.translation[1];
            xs[2] += pose.translation[2];
            if xs[2] < MIN_PROJECTION_DEPTH {
                valid.set(r, c, false);
                coords.push(INVALID_COORD);
                continue;
            }
            let coord = if identity {
                [u, v]
            } else {
                let (u2, v2) = k.project(xs);
                [u2, v2]
            };
            if !in_bounds(coord, w, h) {
                valid.set(r, c, false);
            }
            coords.push(coord);

            // Projection partials d(u', v')/d(X_s).
            let inv_z = 1.0 / xs[2];
            let pu = [k.fx * inv_z, 0.0, -k.fx * xs[0] * inv_z * inv_z];
            let pv = [0.0, k.fy * inv_z, -k.fy * xs[1] * inv_z * inv_z];
            let apply = |dxs: Vec3| [
                pu[0] * dxs[0] + pu[1] * dxs[1] + pu[2] * dxs[2],
                pv[0] * dxs[0] + pv[1] * dxs[1] + pv[2] * dxs[2],
            ];

            let d_depth = apply(mat_mul_vec(&rot, ray));
            jac.d_depth[idx] = d_depth;

            let mut d_pose = [[0.0; 6]; 2];
            for i in 0..3 {
                let g = apply(mat_mul_vec(&drot[i], xt));
                d_pose[0][i] = g[0];
                d_pose[1][i] = g[1];
            }
            // Translation enters X_s additively.
            d_pose[0][3] = pu[0];
            d_pose[0][4] = pu[1];
            d_pose[0][5] = pu[2];
            d_pose[1][3] = pv[0];
            d_pose[1][4] = pv[1];
            d_pose[1][5] = pv[2];
            jac.d_pose[idx] = d_pose;

            // Intrinsics act twice: through the ray (K^-1) and the projection (K).
            let dray = [
                [-ray[0] / k.fx, 0.0, 0.0],
                [0.0, -ray[1] / k.fy, 0.0],
                [-1.0 / k.fx, 0.0, 0.0],
                [0.0, -1.0 / k.fy, 0.0],
            ];
            let direct = [
                [xs[0] * inv_z, 0.0],
                [0.0, xs[1] * inv_z],
                [1.0, 0.0],
                [0.0, 1.0],
            ];
            let mut d_int = [[0.0; 4]; 2];
            for p in 0..4 {
                let g = apply(mat_mul_vec(&rot, vec_scale(dray[p], d)));
                d_int[0][p] = g[0] + direct[p][0];
                d_int[1][p] = g[1] + direct[p][1];
            }
            jac.d_intrinsics[idx] = d_int;
        }
    }
    (
        FlowField {
            height: h,
            width: w,
            coords,
            valid,
        },
        jac,
    )
}

/// Per-sample partials of the interpolated value with respect to the flow
/// coordinate, indexed `pixel * channels + channel`.
#[derive(Debug, Clone)]
pub struct SampleGradients {
    pub du: Vec<f64>,
    pub dv: Vec<f64>,
}

#[inline]
fn interp_cell(img: &ImageBuffer, u: f64, v: f64) -> (usize, usize, f64, f64) {
    let (h, w) = (img.height(), img.width());
    let x = u - 0.5;
    let y = v - 0.5;
    let c0 = if w < 2 {
        0
    } else {
        (x.floor() as usize).min(w - 2)
    };
    let r0 = if h < 2 {
        0
    } else {
        (y.floor() as usize).min(h - 2)
    };
    let tx = if w < 2 { 0.0 } else { x - c0 as f64 };
    let ty = if h < 2 { 0.0 } else { y - r0 as f64 };
    (r0, c0, tx, ty)
}

#[inline]
fn sampleable(img: &ImageBuffer, coord: [f64; 2]) -> bool {
    coord[0] >= 0.5
        && coord[0] <= img.width() as f64 - 0.5
        && coord[1] >= 0.5
        && coord[1] <= img.height() as f64 - 0.5
}

/// Samples `img` at the flow coordinates. Out-of-bounds or invalid samples are
/// masked and set to zero rather than edge-clamped, so they can be excluded
/// from losses instead of fabricating border evidence.
pub fn bilinear_sample(img: &ImageBuffer, flow: &FlowField) -> (ImageBuffer, BoolMask) {
    let (out, mask, _) = bilinear_sample_impl(img, flow, false);
    (out, mask)
}

/// As [`bilinear_sample`], additionally returning d(out)/d(u, v) per sample.
pub fn bilinear_sample_with_grad(
    img: &ImageBuffer,
    flow: &FlowField,
) -> (ImageBuffer, BoolMask, SampleGradients) {
    let (out, mask, grads) = bilinear_sample_impl(img, flow, true);
    (out, mask, grads.expect("gradients requested"))
}

fn bilinear_sample_impl(
    img: &ImageBuffer,
    flow: &FlowField,
    want_grads: bool,
) -> (ImageBuffer, BoolMask, Option<SampleGradients>) {
    let (h, w) = (flow.height(), flow.width());
    let channels = img.channels();
    let mut data = vec![0.0; h * w * channels];
    let mut mask = BoolMask::all_false(h, w);
    let mut grads = if want_grads {
        Some(SampleGradients {
            du: vec![0.0; h * w * channels],
            dv: vec![0.0; h * w * channels],
        })
    } else {
        None
    };
    for r in 0..h {
        for c in 0..w {
            let idx = r * w + c;
            if !flow.valid().get(r, c) {
                continue;
            }
            let coord = flow.coords()[idx];
            if !sampleable(img, coord) {
                continue;
            }
            mask.set(r, c, true);
            let (r0, c0, tx, ty) = interp_cell(img, coord[0], coord[1]);
            let r1 = (r0 + 1).min(img.height() - 1);
            let c1 = (c0 + 1).min(img.width() - 1);
            for ch in 0..channels {
                let i00 = img.get(r0, c0, ch);
                let i01 = img.get(r0, c1, ch);
                let i10 = img.get(r1, c0, ch);
                let i11 = img.get(r1, c1, ch);
                let top = (1.0 - tx) * i00 + tx * i01;
                let bot = (1.0 - tx) * i10 + tx * i11;
                data[idx * channels + ch] = (1.0 - ty) * top + ty * bot;
                if let Some(g) = grads.as_mut() {
                    g.du[idx * channels + ch] = (1.0 - ty) * (i01 - i00) + ty * (i11 - i10);
                    g.dv[idx * channels + ch] = bot - top;
                }
            }
        }
    }
    let out = ImageBuffer::new(h, w, channels, data).expect("convex combinations stay in range");
    (out, mask, grads)
}

/// Warps the support frame into the target view: reproject then sample.
pub fn synthesize_support(
    depth: &DepthMap,
    support: &ImageBuffer,
    pose: &PoseSE3,
    k: &Intrinsics,
) -> (ImageBuffer, BoolMask) {
    assert_eq!(
        (depth.height(), depth.width()),
        (support.height(), support.width()),
        "depth/support shape mismatch"
    );
    let flow = reproject(depth, pose, k);
    bilinear_sample(support, &flow)
}
