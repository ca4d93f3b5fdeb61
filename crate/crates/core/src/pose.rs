//! Rigid transforms as axis-angle rotation plus translation.
//!
//! A pose maps points from the target camera frame to a support camera frame:
//! `X_s = R X_t + t`. That direction is fixed project-wide; serialization tags
//! it explicitly so files cannot be consumed under the wrong convention.

use serde::{Deserialize, Serialize};

use crate::math::{
    cross, dot, mat_add, mat_mul, mat_mul_vec, mat_scale, mat_transpose, norm, skew, vec_add,
    vec_scale, Mat3, Vec3, IDENTITY,
};

/// Below this angle Rodrigues terms switch to their Taylor expansions.
const SMALL_ANGLE: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PoseSE3 {
    pub rotation: Vec3,
    pub translation: Vec3,
}

impl PoseSE3 {
    pub fn identity() -> Self {
        Self {
            rotation: [0.0; 3],
            translation: [0.0; 3],
        }
    }

    pub fn new(rotation: Vec3, translation: Vec3) -> Self {
        Self {
            rotation,
            translation,
        }
    }

    /// Exact zero parameters; used to take the bit-exact identity-warp path.
    pub fn is_identity(&self) -> bool {
        self.rotation == [0.0; 3] && self.translation == [0.0; 3]
    }

    pub fn rotation_matrix(&self) -> Mat3 {
        axis_angle_to_matrix(self.rotation)
    }

    #[inline]
    pub fn transform(&self, p: Vec3) -> Vec3 {
        vec_add(mat_mul_vec(&self.rotation_matrix(), p), self.translation)
    }

    /// Flat `[r, t]` parameter vector consumed by the optimizer.
    pub fn params(&self) -> [f64; 6] {
        [
            self.rotation[0],
            self.rotation[1],
            self.rotation[2],
            self.translation[0],
            self.translation[1],
            self.translation[2],
        ]
    }

    pub fn from_params(p: [f64; 6]) -> Self {
        Self {
            rotation: [p[0], p[1], p[2]],
            translation: [p[3], p[4], p[5]],
        }
    }
}

/// Rodrigues rotation; continuous through the origin via Taylor expansion.
pub fn axis_angle_to_matrix(r: Vec3) -> Mat3 {
    let theta2 = dot(r, r);
    let k = skew(r);
    let k2 = mat_mul(&k, &k);
    let (a, b) = if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        // sin(t)/t and (1-cos(t))/t^2 to second order.
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        let theta = theta2.sqrt();
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    mat_add(&mat_add(&IDENTITY, &mat_scale(&k, a)), &mat_scale(&k2, b))
}

/// Axis-angle logarithm of a rotation matrix; inverse of [`axis_angle_to_matrix`].
///
/// Stable in all three regimes: small angles use the antisymmetric part
/// directly, generic angles the closed form, and angles near pi recover the
/// axis from the symmetric part where the antisymmetric part degenerates.
pub fn so3_log(m: &Mat3) -> Vec3 {
    let trace = m[0][0] + m[1][1] + m[2][2];
    let cos_theta = ((trace - 1.0) * 0.5).clamp(-1.0, 1.0);
    let theta = cos_theta.acos();
    let vee = [
        m[2][1] - m[1][2],
        m[0][2] - m[2][0],
        m[1][0] - m[0][1],
    ];
    if theta < 1e-9 {
        return vec_scale(vee, 0.5);
    }
    if theta < std::f64::consts::PI - 1e-4 {
        return vec_scale(vee, theta / (2.0 * theta.sin()));
    }
    // Near pi: a a^T = I + sym(M - I) / (1 - cos(theta)).
    let denom = 1.0 - cos_theta;
    let mut outer = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            let sym = (m[i][j] + m[j][i]) * 0.5;
            let delta = if i == j { 1.0 } else { 0.0 };
            outer[i][j] = delta + (sym - delta) / denom;
        }
    }
    let mut axis_idx = 0;
    for i in 1..3 {
        if outer[i][i] > outer[axis_idx][axis_idx] {
            axis_idx = i;
        }
    }
    let mut axis = [0.0; 3];
    axis[axis_idx] = outer[axis_idx][axis_idx].max(0.0).sqrt();
    for j in 0..3 {
        if j != axis_idx {
            axis[j] = outer[axis_idx][j] / axis[axis_idx];
        }
    }
    let n = norm(axis);
    let mut axis = vec_scale(axis, 1.0 / n);
    if dot(vee, axis) < 0.0 {
        axis = vec_scale(axis, -1.0);
    }
    vec_scale(axis, theta)
}

/// Sequential composition: apply `a`, then `b`.
pub fn pose_compose(a: &PoseSE3, b: &PoseSE3) -> PoseSE3 {
    let ra = a.rotation_matrix();
    let rb = b.rotation_matrix();
    let r = mat_mul(&rb, &ra);
    let t = vec_add(mat_mul_vec(&rb, a.translation), b.translation);
    PoseSE3 {
        rotation: so3_log(&r),
        translation: t,
    }
}

pub fn pose_invert(p: &PoseSE3) -> PoseSE3 {
    let rt = mat_transpose(&p.rotation_matrix());
    PoseSE3 {
        rotation: vec_scale(p.rotation, -1.0),
        translation: vec_scale(mat_mul_vec(&rt, p.translation), -1.0),
    }
}

/// Partial derivatives of the rotation matrix with respect to each axis-angle
/// component, after Gallego & Yezzi; Taylor branch keeps them finite at zero.
pub fn rotation_partials(r: Vec3) -> [Mat3; 3] {
    let theta2 = dot(r, r);
    let mut out = [[[0.0; 3]; 3]; 3];
    if theta2 < SMALL_ANGLE * SMALL_ANGLE {
        let k = skew(r);
        for (i, partial) in out.iter_mut().enumerate() {
            let mut e = [0.0; 3];
            e[i] = 1.0;
            let ei = skew(e);
            // d/dr_i [I + K + K^2/2] = E_i + (E_i K + K E_i)/2 + O(theta^2)
            let second = mat_scale(&mat_add(&mat_mul(&ei, &k), &mat_mul(&k, &ei)), 0.5);
            *partial = mat_add(&ei, &second);
        }
        return out;
    }
    let rot = axis_angle_to_matrix(r);
    let k = skew(r);
    for (i, partial) in out.iter_mut().enumerate() {
        let mut e = [0.0; 3];
        e[i] = 1.0;
        let i_minus_r_e = [
            e[0] - rot[0][i],
            e[1] - rot[1][i],
            e[2] - rot[2][i],
        ];
        let term = mat_add(&mat_scale(&k, r[i]), &skew(cross(r, i_minus_r_e)));
        *partial = mat_mul(&mat_scale(&term, 1.0 / theta2), &rot);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn random_pose(rng: &mut ChaCha8Rng) -> PoseSE3 {
        PoseSE3::new(
            [
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
                rng.random_range(-1.5..1.5),
            ],
            [
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
                rng.random_range(-2.0..2.0),
            ],
        )
    }

    /// Independent 4x4 homogeneous matrix form used as a composition oracle.
    fn matrix4(p: &PoseSE3) -> [[f64; 4]; 4] {
        let r = p.rotation_matrix();
        let mut m = [[0.0; 4]; 4];
        for i in 0..3 {
            for j in 0..3 {
                m[i][j] = r[i][j];
            }
            m[i][3] = p.translation[i];
        }
        m[3][3] = 1.0;
        m
    }

    fn matmul4(a: &[[f64; 4]; 4], b: &[[f64; 4]; 4]) -> [[f64; 4]; 4] {
        let mut out = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                for (k, bk) in b.iter().enumerate() {
                    out[i][j] += a[i][k] * bk[j];
                }
            }
        }
        out
    }

    #[test]
    fn zero_rotation_is_identity() {
        let m = axis_angle_to_matrix([0.0; 3]);
        assert_eq!(m, IDENTITY);
    }

    #[test]
    fn quarter_turn_about_z() {
        let m = axis_angle_to_matrix([0.0, 0.0, PI / 2.0]);
        let p = mat_mul_vec(&m, [1.0, 0.0, 0.0]);
        assert_relative_eq!(p[0], 0.0, epsilon = 1e-12);
        assert_relative_eq!(p[1], 1.0, epsilon = 1e-12);
        assert_relative_eq!(p[2], 0.0, epsilon = 1e-12);
    }

    #[test]
    fn rotation_matrices_are_orthonormal() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        for _ in 0..200 {
            let p = random_pose(&mut rng);
            let r = p.rotation_matrix();
            let rrt = mat_mul(&r, &mat_transpose(&r));
            for i in 0..3 {
                for j in 0..3 {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (rrt[i][j] - expect).abs() < 1e-9,
                        "RR^T deviation {} at ({},{})",
                        rrt[i][j] - expect,
                        i,
                        j
                    );
                }
            }
            let det = r[0][0] * (r[1][1] * r[2][2] - r[1][2] * r[2][1])
                - r[0][1] * (r[1][0] * r[2][2] - r[1][2] * r[2][0])
                + r[0][2] * (r[1][0] * r[2][1] - r[1][1] * r[2][0]);
            assert_relative_eq!(det, 1.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn log_inverts_exp_across_regimes() {
        let mut rng = ChaCha8Rng::seed_from_u64(22);
        let check = |r: Vec3| {
            let m = axis_angle_to_matrix(r);
            let back = so3_log(&m);
            for i in 0..3 {
                assert_relative_eq!(back[i], r[i], max_relative = 1e-7, epsilon = 1e-9);
            }
        };
        for _ in 0..100 {
            let axis = {
                let v = [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ];
                vec_scale(v, 1.0 / norm(v))
            };
            // Generic, tiny, and near-pi angles all round-trip.
            check(vec_scale(axis, rng.random_range(0.01..3.0)));
            check(vec_scale(axis, 1e-8));
            check(vec_scale(axis, PI - 1e-6));
        }
        check([0.0; 3]);
    }

    #[test]
    fn invert_identity_and_pure_translation() {
        let id = PoseSE3::identity();
        assert_eq!(pose_invert(&id), id);
        let t = PoseSE3::new([0.0; 3], [1.0, -2.0, 3.0]);
        let round = pose_compose(&t, &pose_invert(&t));
        for i in 0..3 {
            assert_relative_eq!(round.translation[i], 0.0, epsilon = 1e-12);
            assert_relative_eq!(round.rotation[i], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn compose_then_invert_is_identity_in_matrix_form() {
        let mut rng = ChaCha8Rng::seed_from_u64(23);
        for _ in 0..100 {
            let p = random_pose(&mut rng);
            let round = pose_compose(&p, &pose_invert(&p));
            let m = matrix4(&round);
            for (i, row) in m.iter().enumerate() {
                for (j, &mij) in row.iter().enumerate() {
                    let expect = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (mij - expect).abs() < 1e-9,
                        "entry ({},{}) off by {}",
                        i,
                        j,
                        mij - expect
                    );
                }
            }
        }
    }

    #[test]
    fn compose_matches_matrix_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(24);
        for _ in 0..100 {
            let a = random_pose(&mut rng);
            let b = random_pose(&mut rng);
            let composed = pose_compose(&a, &b);
            let expect = matmul4(&matrix4(&b), &matrix4(&a));
            let got = matrix4(&composed);
            for i in 0..3 {
                for j in 0..4 {
                    assert!(
                        (got[i][j] - expect[i][j]).abs() < 1e-9,
                        "entry ({},{}) off by {}",
                        i,
                        j,
                        got[i][j] - expect[i][j]
                    );
                }
            }
        }
    }

    #[test]
    fn rotation_partials_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(25);
        let h = 1e-6;
        let check = |r: Vec3| {
            let partials = rotation_partials(r);
            for i in 0..3 {
                let mut rp = r;
                let mut rm = r;
                rp[i] += h;
                rm[i] -= h;
                let mp = axis_angle_to_matrix(rp);
                let mm = axis_angle_to_matrix(rm);
                for a in 0..3 {
                    for b in 0..3 {
                        let fd = (mp[a][b] - mm[a][b]) / (2.0 * h);
                        assert_relative_eq!(
                            partials[i][a][b],
                            fd,
                            max_relative = 1e-4,
                            epsilon = 1e-7
                        );
                    }
                }
            }
        };
        for _ in 0..100 {
            check(random_pose(&mut rng).rotation);
        }
        check([0.0; 3]);
        check([1e-7, -2e-7, 5e-8]);
    }

    #[test]
    fn params_round_trip() {
        let p = PoseSE3::new([0.1, -0.2, 0.3], [1.0, 2.0, -3.0]);
        assert_eq!(PoseSE3::from_params(p.params()), p);
        assert!(PoseSE3::identity().is_identity());
        assert!(!p.is_identity());
    }
}
