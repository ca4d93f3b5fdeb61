//! Randomized property checks over the public API: algebraic identities that
//! must hold for every input, not just the seeded cases in the unit tests.

use proptest::prelude::*;

use photodepth::augment::{apply_photo_op, apply_policy, AugmentPolicy, PhotoOp};
use photodepth::depth::{DepthMap, DepthRange};
use photodepth::eval::{abs_rel, align_lstsq, aligned_depth};
use photodepth::image::{BoolMask, ImageBuffer};
use photodepth::math::{mat_mul, mat_transpose, IDENTITY};
use photodepth::pose::{axis_angle_to_matrix, pose_invert, PoseSE3};
use photodepth::reproject;
use photodepth::Intrinsics;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small_pose() -> impl Strategy<Value = PoseSE3> {
    (
        prop::array::uniform3(-0.2f64..0.2),
        prop::array::uniform3(-0.5f64..0.5),
    )
        .prop_map(|(r, t)| PoseSE3::new(r, t))
}

fn any_pose() -> impl Strategy<Value = PoseSE3> {
    (
        prop::array::uniform3(-1.5f64..1.5),
        prop::array::uniform3(-5.0f64..5.0),
    )
        .prop_map(|(r, t)| PoseSE3::new(r, t))
}

proptest! {
    #[test]
    fn depth_disparity_round_trip(
        min in 0.01f64..10.0,
        ratio in 1.5f64..100.0,
        d in 1e-6f64..=0.999_999,
    ) {
        let range = DepthRange::new(min, min * ratio).unwrap();
        let depth = range.depth_of(d);
        prop_assert!(depth > range.min && depth < range.max);
        let back = range.disparity_of(depth);
        prop_assert!((back - d).abs() < 1e-9, "{d} -> {depth} -> {back}");
    }

    #[test]
    fn rotation_matrices_are_orthonormal(r in prop::array::uniform3(-1.5f64..1.5)) {
        let m = axis_angle_to_matrix(r);
        let gram = mat_mul(&m, &mat_transpose(&m));
        for i in 0..3 {
            for j in 0..3 {
                prop_assert!((gram[i][j] - IDENTITY[i][j]).abs() < 1e-12);
            }
        }
        let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
        prop_assert!((det - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pose_inverse_undoes_transform(
        pose in any_pose(),
        x in prop::array::uniform3(-10.0f64..10.0),
    ) {
        let there = pose.transform(x);
        let back = pose_invert(&pose).transform(there);
        for i in 0..3 {
            prop_assert!((back[i] - x[i]).abs() < 1e-9 * (1.0 + x[i].abs()));
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn reprojection_ignores_joint_depth_translation_scale(
        depth_values in prop::collection::vec(0.5f64..20.0, 54),
        pose in small_pose(),
        focal in 4.0f64..30.0,
        s in 0.1f64..10.0,
    ) {
        let (h, w) = (6usize, 9usize);
        let k = Intrinsics::new(focal, focal, w as f64 / 2.0, h as f64 / 2.0, w, h).unwrap();
        let depth = DepthMap::new(h, w, depth_values.clone()).unwrap();
        let scaled_depth =
            DepthMap::new(h, w, depth_values.iter().map(|z| z * s).collect()).unwrap();
        let scaled_pose = PoseSE3::new(
            pose.rotation,
            [
                pose.translation[0] * s,
                pose.translation[1] * s,
                pose.translation[2] * s,
            ],
        );
        let base = reproject(&depth, &pose, &k);
        let scaled = reproject(&scaled_depth, &scaled_pose, &k);
        for r in 0..h {
            for c in 0..w {
                if base.valid().get(r, c) && scaled.valid().get(r, c) {
                    let [u0, v0] = base.coord(r, c);
                    let [u1, v1] = scaled.coord(r, c);
                    prop_assert!((u0 - u1).abs() < 1e-9 && (v0 - v1).abs() < 1e-9);
                }
            }
        }
    }

    #[test]
    fn photometric_ops_stay_inside_unit_range(
        values in prop::collection::vec(0.0f64..=1.0, 8 * 9 * 3),
        op in prop::sample::select(PhotoOp::ALL.to_vec()),
        factor in 0.1f64..=1.9,
    ) {
        let img = ImageBuffer::new(8, 9, 3, values).unwrap();
        let out = apply_photo_op(&img, op, factor);
        prop_assert_eq!(
            (out.height(), out.width(), out.channels()),
            (8, 9, 3)
        );
        for &v in out.data() {
            prop_assert!((0.0..=1.0).contains(&v), "{op:?}({factor}) produced {v}");
        }
    }

    #[test]
    fn policy_replays_identically_per_seed(
        seed in any::<u64>(),
        values in prop::collection::vec(0.0f64..=1.0, 12 * 16 * 3),
    ) {
        let frames = vec![ImageBuffer::new(12, 16, 3, values).unwrap()];
        let k = Intrinsics::new(20.0, 20.0, 8.0, 6.0, 16, 12).unwrap();
        let policy = AugmentPolicy::default();
        let run = |seed: u64| {
            apply_policy(&mut ChaCha8Rng::seed_from_u64(seed), &policy, &frames, &k).unwrap()
        };
        let (frames_a, k_a, record_a) = run(seed);
        let (frames_b, k_b, record_b) = run(seed);
        prop_assert_eq!(frames_a, frames_b);
        prop_assert_eq!(record_a, record_b);
        prop_assert_eq!((k_a.fx, k_a.fy, k_a.cx, k_a.cy), (k_b.fx, k_b.fy, k_b.cx, k_b.cy));
    }

    #[test]
    fn alignment_recovers_a_planted_affine_map(
        base in 1.0f64..20.0,
        step in 0.05f64..1.0,
        a in 0.2f64..5.0,
        b in 0.0f64..0.1,
    ) {
        let n = 40usize;
        let gt_values: Vec<f64> = (0..n).map(|i| base + step * i as f64).collect();
        let gt = DepthMap::new(1, n, gt_values.clone()).unwrap();
        let pred: Vec<f64> = gt_values.iter().map(|z| a / z + b).collect();
        let mask = BoolMask::all_true(1, n);

        // The aligner maps the prediction into disparity space, so the exact
        // inverse of `p = a d + b` is `scale = 1/a, shift = -b/a`.
        let alignment = align_lstsq(&pred, &gt, &mask).unwrap();
        prop_assert!(!alignment.fallback_median);
        prop_assert!((alignment.scale - 1.0 / a).abs() < 1e-9 / a);
        prop_assert!((alignment.shift + b / a).abs() < 1e-9 * (1.0 + b / a));

        let (aligned, clamped) = aligned_depth(&pred, 1, n, &alignment);
        prop_assert_eq!(clamped, 0);
        let err = abs_rel(&aligned, &gt, &mask).unwrap();
        prop_assert!(err < 1e-9, "AbsRel {err}% after exact alignment");
    }
}
