//! Finite-difference verification of the analytic gradients.
//!
//! The total loss is only piecewise smooth: the static-pixel mask, the
//! per-pixel argmin over supports, absolute values, and the warp validity
//! boundary are all discrete decisions. Central differences across such a
//! decision measure nothing useful, so candidate scenes are rejection-sampled
//! until every decision sits far enough from its flip point that a +-step
//! perturbation cannot cross it. Within that region the analytic gradient is
//! exact and the comparison is meaningful.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::depth::DepthRange;
use crate::image::{BoolMask, ImageBuffer};
use crate::losses::{
    loss_diagnostics, photometric_loss, total_loss_with_identity, LossConfig, LossMap,
};
use crate::math::{logit, softplus_inv};
use crate::optimizer::SceneState;
use crate::synth::SinusoidTexture;

/// Flow coordinates must sit this many pixels from a validity boundary; the
/// largest finite-difference step moves them by under 1e-3 px.
const FLOW_MARGIN: f64 = 0.01;
/// Interior bilinear cells are only C0 at integer lattice lines; a coordinate
/// crossing one under a global-parameter step changes its interpolation slope
/// and poisons the central difference. Require this much lattice clearance.
const CELL_MARGIN: f64 = 1e-3;
/// Mask and argmin decisions must clear their flip point by this much loss.
const DECISION_MARGIN: f64 = 1e-4;
/// Tighter margins around the single pixel a disparity logit controls.
const LOGIT_DECISION_MARGIN: f64 = 1e-3;
const L1_MARGIN: f64 = 1e-3;
const SMOOTH_MARGIN: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorruptTerm {
    Disparity,
    Pose,
    Intrinsics,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub scenes: usize,
    pub step: f64,
    pub tolerance: f64,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Check the loss with the static-pixel mask active. Either way the mask
    /// is frozen across each finite difference by the margin screen.
    pub automask: bool,
    /// Negative-control hook: corrupt one analytic group by 10% so the check
    /// must fail naming that group.
    pub corrupt: Option<CorruptTerm>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            scenes: 20,
            step: 1e-5,
            tolerance: 1e-3,
            seed: 0,
            height: 16,
            width: 24,
            automask: true,
            corrupt: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroupSummary {
    pub params_checked: usize,
    pub max_rel_err: f64,
}

impl GroupSummary {
    fn empty() -> Self {
        Self {
            params_checked: 0,
            max_rel_err: 0.0,
        }
    }

    fn absorb(&mut self, rel_err: f64) {
        self.params_checked += 1;
        if rel_err > self.max_rel_err {
            self.max_rel_err = rel_err;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub scenes_checked: usize,
    pub scenes_rejected: usize,
    pub disparity: GroupSummary,
    pub pose: GroupSummary,
    pub intrinsics: GroupSummary,
    pub step: f64,
    pub tolerance: f64,
    pub passed: bool,
    pub failing_group: Option<String>,
}

struct Candidate {
    state: SceneState,
    target: ImageBuffer,
    supports: Vec<ImageBuffer>,
    identity: Vec<LossMap>,
}

fn build_candidate(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Candidate {
    let target = SinusoidTexture::sample(rng, 3, 5).sample_image(h, w);
    let supports: Vec<ImageBuffer> = (0..2)
        .map(|_| SinusoidTexture::sample(rng, 3, 5).sample_image(h, w))
        .collect();

    // Smooth positive depth field well inside the range.
    let z0 = rng.random_range(3.0..8.0);
    let wavelength = rng.random_range(16.0..40.0);
    let angle = rng.random_range(0.0..std::f64::consts::TAU);
    let (fu, fv) = (angle.cos() / wavelength, angle.sin() / wavelength);
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let range = DepthRange::new(1.0, 20.0).unwrap();
    let logits = (0..h * w)
        .map(|i| {
            let (u, v) = ((i % w) as f64 + 0.5, (i / w) as f64 + 0.5);
            let z = z0
                * (1.0
                    + 0.25
                        * (std::f64::consts::TAU * (fu * u + fv * v) + phase).sin());
            logit(range.disparity_of(z))
        })
        .collect();

    // Rotation plus translation in all axes keeps warped rows and columns off
    // the knife-edge validity boundaries that pure lateral motion produces.
    let poses = (0..2)
        .map(|_| {
            [
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.02..0.02),
                rng.random_range(-0.3..0.3),
                rng.random_range(-0.1..0.1),
                rng.random_range(-0.05..0.05),
            ]
        })
        .collect();
    let intrinsics_raw = [
        softplus_inv(rng.random_range(0.5..1.2)),
        softplus_inv(rng.random_range(0.5..1.2)),
        rng.random_range(-0.4..0.4),
        rng.random_range(-0.4..0.4),
    ];
    let state = SceneState::from_parts(h, w, logits, poses, intrinsics_raw, range)
        .expect("candidate shapes are consistent");

    let all = BoolMask::all_true(h, w);
    let identity = supports
        .iter()
        .map(|s| photometric_loss(&target, s, &all, 0.85).unwrap())
        .collect();
    Candidate {
        state,
        target,
        supports,
        identity,
    }
}

fn coord_clears_boundaries(coord: [f64; 2], w: usize, h: usize, margin: f64) -> bool {
    let clears = |x: f64, lo: f64, hi: f64| (x - lo).abs() > margin && (x - hi).abs() > margin;
    clears(coord[0], 0.5, w as f64 - 0.5) && clears(coord[1], 0.5, h as f64 - 0.5)
}

fn coord_clears_lattice(coord: [f64; 2], margin: f64) -> bool {
    let clears = |x: f64| {
        let frac = (x - 0.5).rem_euclid(1.0);
        frac.min(1.0 - frac) > margin
    };
    clears(coord[0]) && clears(coord[1])
}

fn coord_inside(coord: [f64; 2], w: usize, h: usize) -> bool {
    coord[0] > 0.5 && coord[0] < w as f64 - 0.5 && coord[1] > 0.5 && coord[1] < h as f64 - 0.5
}

/// Margins at one pixel: distance of the automask decision and the argmin
/// decision from flipping. `None` means the decision does not arise there.
fn decision_margins(
    diag: &crate::losses::LossDiagnostics,
    i: usize,
) -> (Option<f64>, Option<f64>) {
    let synth: Vec<f64> = diag
        .synth_losses
        .iter()
        .filter(|m| m.valid().get_flat(i))
        .map(|m| m.values()[i])
        .collect();
    let automask = if synth.is_empty() {
        None
    } else {
        let ms = synth.iter().cloned().fold(f64::INFINITY, f64::min);
        let mi = diag
            .identity_losses
            .iter()
            .map(|m| m.values()[i])
            .fold(f64::INFINITY, f64::min);
        Some((ms - mi).abs())
    };
    let argmin = if synth.len() >= 2 {
        let mut sorted = synth;
        sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Some(sorted[1] - sorted[0])
    } else {
        None
    };
    (automask, argmin)
}

fn screen_scene(candidate: &Candidate, config: &GradcheckConfig) -> Option<Vec<usize>> {
    let loss_config = LossConfig {
        automask: config.automask,
        ..LossConfig::default()
    };
    let diag = loss_diagnostics(
        &candidate.state,
        &candidate.target,
        &candidate.supports,
        &loss_config,
    )
    .ok()?;
    // Margins are sized for the default step; larger steps move everything
    // proportionally further, so widen the exclusion zones with them.
    let scale = (config.step / 1e-5).max(1.0);
    let (h, w) = (candidate.target.height(), candidate.target.width());
    let n = h * w;
    if diag.kept.count_true() < n / 4 {
        return None;
    }
    for flow in &diag.flows {
        for (i, &coord) in flow.coords().iter().enumerate() {
            if !coord_clears_boundaries(coord, w, h, FLOW_MARGIN * scale) {
                return None;
            }
            if flow.valid().get_flat(i)
                && coord_inside(coord, w, h)
                && !coord_clears_lattice(coord, CELL_MARGIN * scale)
            {
                return None;
            }
        }
    }
    let mut margins = Vec::with_capacity(n);
    for i in 0..n {
        let (automask, argmin) = decision_margins(&diag, i);
        if config.automask {
            if let Some(m) = automask {
                if m < DECISION_MARGIN * scale {
                    return None;
                }
            }
        }
        if let Some(m) = argmin {
            if m < DECISION_MARGIN * scale {
                return None;
            }
        }
        margins.push((automask, argmin));
    }

    // A disparity logit is checkable when its own pixel and the SSIM windows
    // it feeds sit clear of every decision flip.
    let disp = candidate.state.disparity();
    let channels = candidate.target.channels();
    let synths: Vec<_> = diag
        .flows
        .iter()
        .zip(&candidate.supports)
        .map(|(flow, support)| crate::geometry::bilinear_sample(support, flow))
        .collect();
    let safe = (0..n)
        .filter(|&i| {
            let (r, c) = (i / w, i % w);
            for rr in r.saturating_sub(1)..=(r + 1).min(h - 1) {
                for cc in c.saturating_sub(1)..=(c + 1).min(w - 1) {
                    let (am, ag) = margins[rr * w + cc];
                    if config.automask && am.is_some_and(|m| m < LOGIT_DECISION_MARGIN * scale) {
                        return false;
                    }
                    if ag.is_some_and(|m| m < LOGIT_DECISION_MARGIN * scale) {
                        return false;
                    }
                }
            }
            for (synth, mask) in &synths {
                if !mask.get_flat(i) {
                    continue;
                }
                for ch in 0..channels {
                    let diff = candidate.target.get(r, c, ch) - synth.get(r, c, ch);
                    if diff.abs() < L1_MARGIN * scale {
                        return false;
                    }
                }
            }
            let d = disp.get(r, c);
            let neighbors = [
                (r > 0).then(|| disp.get(r - 1, c)),
                (r + 1 < h).then(|| disp.get(r + 1, c)),
                (c > 0).then(|| disp.get(r, c - 1)),
                (c + 1 < w).then(|| disp.get(r, c + 1)),
            ];
            neighbors
                .into_iter()
                .flatten()
                .all(|nb| (nb - d).abs() > SMOOTH_MARGIN * scale)
        })
        .collect::<Vec<_>>();
    if safe.len() < 10 {
        return None;
    }
    Some(safe)
}

fn rel_err(analytic: f64, fd: f64) -> f64 {
    (analytic - fd).abs() / analytic.abs().max(fd.abs()).max(1e-6)
}

/// Worst absolute error between the analytic pose jacobian of the reprojected
/// flow and central differences at `step`, on one random scene.
///
/// The flow coordinate is infinitely differentiable in the pose (unlike the
/// sampled loss, which is only piecewise smooth), so this error must shrink
/// quadratically with the step until roundoff takes over: the convergence
/// signature that validates the finite-difference machinery itself.
pub fn flow_jacobian_fd_error(step: f64, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let candidate = build_candidate(&mut rng, 16, 24);
    let depth = candidate.state.depth_map();
    let k = candidate.state.intrinsics();
    let params = candidate.state.pose_params()[0];
    let (base, jac) = crate::geometry::reproject_with_jacobian(
        &depth,
        &crate::pose::PoseSE3::from_params(params),
        &k,
    );
    let (h, w) = (depth.height(), depth.width());
    let mut worst: f64 = 0.0;
    for j in 0..6 {
        let mut plus = params;
        let mut minus = params;
        plus[j] += step;
        minus[j] -= step;
        let fp = crate::geometry::reproject(&depth, &crate::pose::PoseSE3::from_params(plus), &k);
        let fm = crate::geometry::reproject(&depth, &crate::pose::PoseSE3::from_params(minus), &k);
        for r in 0..h {
            for c in 0..w {
                // Pixels whose projection leaves the frame under the step carry
                // sentinel coordinates; only stable pixels are comparable.
                if !(base.valid().get(r, c) && fp.valid().get(r, c) && fm.valid().get(r, c)) {
                    continue;
                }
                let i = r * w + c;
                for axis in 0..2 {
                    let fd = (fp.coords()[i][axis] - fm.coords()[i][axis]) / (2.0 * step);
                    worst = worst.max((jac.d_pose[i][axis][j] - fd).abs());
                }
            }
        }
    }
    worst
}

/// Verify analytic gradients of the total loss against central finite
/// differences on `config.scenes` screened random scenes.
pub fn run_gradcheck(config: &GradcheckConfig) -> GradcheckReport {
    let loss_config = LossConfig {
        automask: config.automask,
        ..LossConfig::default()
    };
    let mut disparity = GroupSummary::empty();
    let mut pose = GroupSummary::empty();
    let mut intrinsics = GroupSummary::empty();
    let mut accepted = 0;
    let mut rejected = 0;
    let mut attempt = 0u64;
    let max_attempts = config.scenes as u64 * 100;
    while accepted < config.scenes && attempt < max_attempts {
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(attempt));
        attempt += 1;
        let mut candidate = build_candidate(&mut rng, config.height, config.width);
        let Some(safe_logits) = screen_scene(&candidate, config) else {
            rejected += 1;
            continue;
        };
        accepted += 1;

        let (_, mut grads) = total_loss_with_identity(
            &candidate.state,
            &candidate.target,
            &candidate.supports,
            &loss_config,
            Some(&candidate.identity),
        )
        .expect("screened scene evaluates");
        match config.corrupt {
            Some(CorruptTerm::Disparity) => {
                for g in grads.disparity_logits.iter_mut() {
                    *g *= 1.1;
                }
            }
            Some(CorruptTerm::Pose) => {
                for p in grads.poses.iter_mut() {
                    for g in p.iter_mut() {
                        *g *= 1.1;
                    }
                }
            }
            Some(CorruptTerm::Intrinsics) => {
                for g in grads.intrinsics_raw.iter_mut() {
                    *g *= 1.1;
                }
            }
            None => {}
        }

        let eval = |state: &SceneState| {
            total_loss_with_identity(
                state,
                &candidate.target,
                &candidate.supports,
                &loss_config,
                Some(&candidate.identity),
            )
            .expect("perturbed scene evaluates")
            .0
            .total
        };

        // Spread the checked logits over the safe set.
        let stride = (safe_logits.len() / 12).max(1);
        let picks: Vec<usize> = safe_logits.iter().step_by(stride).cloned().collect();
        let mut state = candidate.state.clone();
        for &i in &picks {
            let orig = state.disparity_logits()[i];
            state.disparity_logits_mut()[i] = orig + config.step;
            let plus = eval(&state);
            state.disparity_logits_mut()[i] = orig - config.step;
            let minus = eval(&state);
            state.disparity_logits_mut()[i] = orig;
            let fd = (plus - minus) / (2.0 * config.step);
            disparity.absorb(rel_err(grads.disparity_logits[i], fd));
        }
        for kk in 0..candidate.supports.len() {
            for j in 0..6 {
                let orig = state.pose_params()[kk][j];
                state.poses_mut()[kk][j] = orig + config.step;
                let plus = eval(&state);
                state.poses_mut()[kk][j] = orig - config.step;
                let minus = eval(&state);
                state.poses_mut()[kk][j] = orig;
                let fd = (plus - minus) / (2.0 * config.step);
                pose.absorb(rel_err(grads.poses[kk][j], fd));
            }
        }
        for j in 0..4 {
            let orig = state.intrinsics_raw()[j];
            state.intrinsics_raw_mut()[j] = orig + config.step;
            let plus = eval(&state);
            state.intrinsics_raw_mut()[j] = orig - config.step;
            let minus = eval(&state);
            state.intrinsics_raw_mut()[j] = orig;
            let fd = (plus - minus) / (2.0 * config.step);
            intrinsics.absorb(rel_err(grads.intrinsics_raw[j], fd));
        }
        candidate.state = state;
    }

    let groups = [
        ("disparity", disparity.max_rel_err),
        ("pose", pose.max_rel_err),
        ("intrinsics", intrinsics.max_rel_err),
    ];
    let failing_group = if accepted < config.scenes {
        Some("scene sampling exhausted".to_string())
    } else {
        groups
            .iter()
            .find(|(_, err)| *err >= config.tolerance)
            .map(|(name, _)| name.to_string())
    };
    GradcheckReport {
        scenes_checked: accepted,
        scenes_rejected: rejected,
        disparity,
        pose,
        intrinsics,
        step: config.step,
        tolerance: config.tolerance,
        passed: failing_group.is_none(),
        failing_group,
    }
}
