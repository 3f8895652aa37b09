//! Acceptance checks. Prints one PASS/FAIL line per criterion. Failures are
//! reported without failing the run unless `ACCEPTANCE_STRICT` is set.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use astro_float::{BigFloat, Consts, RoundingMode};
use nalgebra::{Rotation3, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use orthoplane::camera::{compute_rc, Pose, rectify_plane, rectify_pose, AugmentParams, Intrinsics, RigidPose, StereoRig};
use orthoplane::io::{read_disparity_png16, read_pfm, write_disparity_png16, write_pfm, PfmImage};
use orthoplane::loss::mll_pixel;
use orthoplane::metrics::{depth_metrics, Crop, CLIP_MIN};
use orthoplane::mixture::{compose_depth, mixture_probs, mmp, softmax_weights, MixtureField, SIGMA_MIN};
use orthoplane::occlusion::{distill_label, occlusion_mask_lr, occlusion_mask_rl, post_process, right_view_mask, MaskSide, OcclusionMask};
use orthoplane::pipeline::EvalRecord;
use orthoplane::planes::{render_disparity_stack, DepthLimits, Plane, PlaneBank, PlaneKind, SamplingParams};
use orthoplane::raster::{Map, Mask, PlaneStack};
use orthoplane::scene::{
    default_intrinsics, oracle_occlusion, oracle_occlusion_virtual_left, plane_coords, psnr, random_bank_scene,
    reconstructable_mask, render_view, scene_mixture_field, Extent, IdealFieldParams, Patch, SceneGenOptions, SceneSpec,
    Surface,
};
use orthoplane::warp::{homography, map_pixel, synthesize_view};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

struct Setup {
    intr: Intrinsics,
    rig: StereoRig,
    bank: PlaneBank,
}

fn setup() -> Setup {
    let intr = default_intrinsics(640, 192).unwrap();
    let rig = StereoRig::new(0.54).unwrap();
    let bank = PlaneBank::uniform(SamplingParams::default(), &rig, &intr).unwrap();
    Setup { intr, rig, bank }
}

fn single_thread<T: Send>(f: impl FnOnce() -> T + Send) -> T {
    rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap().install(f)
}

// 1
fn round_trip_synthesis() -> Outcome {
    let s = setup();
    assert_eq!(s.bank.len(), 63);
    let (mut worst_psnr, mut worst_time) = (f64::INFINITY, 0.0f64);
    for seed in 0..10 {
        let t = Instant::now();
        let p = single_thread(|| {
            let scene = random_bank_scene(&s.bank, &s.intr, &s.rig, seed, &SceneGenOptions::default()).unwrap();
            let left = render_view(&scene, &s.intr, &RigidPose::identity()).unwrap();
            let right = render_view(&scene, &s.intr, &s.rig.target_to_reference()).unwrap();
            let field = scene_mixture_field(&scene, &s.bank, &s.intr, &s.rig, &IdealFieldParams::default()).unwrap();
            let syn = synthesize_view(
                &field,
                &left.image,
                s.bank.planes(),
                &s.rig.target_to_reference(),
                &s.intr,
                &DepthLimits::default(),
            )
            .unwrap();
            let mask = reconstructable_mask(&scene, &s.intr, &s.rig).unwrap().and(&syn.valid);
            psnr(&syn.image, &right.image, &mask).unwrap()
        });
        worst_time = worst_time.max(t.elapsed().as_secs_f64());
        worst_psnr = worst_psnr.min(p);
    }
    outcome(
        worst_psnr >= 40.0 && worst_time < 10.0,
        format!("10 scenes, min PSNR {worst_psnr:.1} dB (>= 40), max {worst_time:.2} s/scene single-threaded (< 10)"),
    )
}

fn agreement(visible: &Mask, occluded: &Mask, surfaces: &[Surface]) -> f64 {
    let (mut agree, mut total) = (0usize, 0usize);
    for px in 0..surfaces.len() {
        if surfaces[px] == Surface::Miss {
            continue;
        }
        total += 1;
        if visible.data()[px] != occluded.data()[px] {
            agree += 1;
        }
    }
    agree as f64 / total as f64
}

fn vertical_near(s: &Setup, disparity: f64) -> (Plane, f64) {
    let bank = &s.bank;
    (0..bank.len())
        .filter(|&i| bank.kinds()[i] == PlaneKind::Vertical)
        .map(|i| (bank.planes()[i], s.rig.disparity(&s.intr, bank.planes()[i].distance())))
        .min_by(|a, b| (a.1 - disparity).abs().total_cmp(&(b.1 - disparity).abs()))
        .unwrap()
}

fn band(mask: &Map, y: usize, cols: std::ops::Range<usize>) -> usize {
    cols.filter(|&x| mask.get(x, y, 0) < 0.5).count()
}

// 2
fn occlusion_agreement() -> Outcome {
    let s = setup();
    let disps = render_disparity_stack(s.bank.planes(), &s.intr, &s.rig, &DepthLimits::default()).unwrap();
    let mut worst = [1.0f64; 3];
    for seed in 100..120 {
        let scene = random_bank_scene(&s.bank, &s.intr, &s.rig, seed, &SceneGenOptions::default()).unwrap();
        let left = render_view(&scene, &s.intr, &RigidPose::identity()).unwrap();
        let right = render_view(&scene, &s.intr, &s.rig.target_to_reference()).unwrap();
        let field = scene_mixture_field(&scene, &s.bank, &s.intr, &s.rig, &IdealFieldParams::default()).unwrap();
        let oracle = oracle_occlusion(&scene, &s.intr, &s.rig).unwrap();
        let virtual_left = oracle_occlusion_virtual_left(&scene, &s.intr, &s.rig).unwrap();
        let rl = occlusion_mask_rl(&field, &disps).unwrap().binarize(0.5);
        let lr = occlusion_mask_lr(&field, &disps).unwrap().binarize(0.5);
        let r = right_view_mask(&field, &disps).unwrap().binarize(0.5);
        let got = [
            agreement(&rl, &oracle.left, &left.surface),
            agreement(&lr, &virtual_left, &left.surface),
            agreement(&r, &oracle.right, &right.surface),
        ];
        for k in 0..3 {
            worst[k] = worst[k].min(got[k]);
        }
    }

    // axis-aligned foreground rectangle over the far background
    let (bg, d_bg) = vertical_near(&s, 0.0);
    let (x0, x1, y0, y1) = (200.0, 330.0, 60.0, 130.0);
    let mut worst_band = 0.0f64;
    for target in [8.0, 20.0, 45.0] {
        let (fg, d_fg) = vertical_near(&s, target);
        let corners = [(x0, y0), (x1, y1)].map(|(x, y)| plane_coords(&fg, &s.intr.backproject(x, y, fg.distance())));
        let scene = SceneSpec {
            patches: vec![Patch {
                plane: fg,
                extent: Extent {
                    u_min: corners[0].x.min(corners[1].x),
                    u_max: corners[0].x.max(corners[1].x),
                    v_min: corners[0].y.min(corners[1].y),
                    v_max: corners[0].y.max(corners[1].y),
                },
                texture_seed: 1,
            }],
            background: bg,
            background_seed: 2,
            seed: 0,
            light: 1.0,
        };
        let field = scene_mixture_field(&scene, &s.bank, &s.intr, &s.rig, &IdealFieldParams::default()).unwrap();
        let w = s.intr.width;
        let y = 95;
        let (xs, xe) = (x0 as usize, x1 as usize + 1);
        let expected = d_fg - d_bg;
        let widths = [
            band(&occlusion_mask_rl(&field, &disps).unwrap().values, y, 4..xs),
            band(&occlusion_mask_lr(&field, &disps).unwrap().values, y, xe..w - 4),
            band(&right_view_mask(&field, &disps).unwrap().values, y, (xe - d_fg as usize - 2)..w - 4),
        ];
        for wd in widths {
            worst_band = worst_band.max((wd as f64 - expected).abs());
        }
    }
    let pass = worst.iter().all(|&a| a >= 0.99) && worst_band <= 1.0;
    outcome(
        pass,
        format!(
            "20 scenes, min agreement RL {:.4} LR {:.4} R {:.4} (>= 0.99); band width error max {worst_band:.2} px (<= 1)",
            worst[0], worst[1], worst[2]
        ),
    )
}

// 3
fn mll_gradient_check() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let h = 1e-5;
    let (mut worst, mut worst_richardson) = (0.0f64, 0.0f64);
    for trial in 0..1000 {
        let n = [1, 2, 8][trial % 3];
        let logits: Vec<f64> = (0..n).map(|_| rng.random_range(-4.0..4.0)).collect();
        let scales: Vec<f64> = (0..n).map(|_| 10f64.powf(rng.random_range(-2.0..1.0))).collect();
        let errors: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..0.5)).collect();
        let (mut gl, mut gs) = (vec![0.0; n], vec![0.0; n]);
        mll_pixel(&logits, &scales, &errors, &mut gl, &mut gs);
        let f = |l: &[f64], s: &[f64]| {
            let (mut a, mut b) = (vec![0.0; n], vec![0.0; n]);
            mll_pixel(l, s, &errors, &mut a, &mut b)
        };
        let central = |k: usize, step: f64, on_scale: bool| {
            let (mut lp, mut lm, mut sp, mut sm) = (logits.clone(), logits.clone(), scales.clone(), scales.clone());
            if on_scale {
                sp[k] += step;
                sm[k] -= step;
            } else {
                lp[k] += step;
                lm[k] -= step;
            }
            (f(&lp, &sp) - f(&lm, &sm)) / (2.0 * step)
        };
        let rel = |a: f64, b: f64| (a - b).abs() / a.abs().max(b.abs()).max(1e-3);
        for k in 0..n {
            for (analytic, on_scale) in [(gl[k], false), (gs[k], true)] {
                let d1 = central(k, h, on_scale);
                worst = worst.max(rel(analytic, d1));
                // fourth-order estimate from steps h and h/2
                let d2 = central(k, h / 2.0, on_scale);
                worst_richardson = worst_richardson.max(rel(analytic, (4.0 * d2 - d1) / 3.0));
            }
        }
    }
    outcome(
        worst < 1e-4,
        format!(
            "1000 configurations, max relative error vs h=1e-5 central differences {worst:.2e} (< 1e-4); \
             vs Richardson-extrapolated differences {worst_richardson:.2e}"
        ),
    )
}

fn random_aug(rng: &mut ChaCha8Rng, intr: &Intrinsics) -> AugmentParams {
    AugmentParams::new(
        rng.random_range(0.5..2.0),
        rng.random_range(0.0..intr.width as f64),
        rng.random_range(0.0..intr.height as f64),
    )
    .unwrap()
}

fn random_pose(rng: &mut ChaCha8Rng) -> RigidPose {
    let axis = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
    let rot = Rotation3::new(axis.normalize() * rng.random_range(0.0..0.1));
    let t = Vector3::new(rng.random_range(-1.0..1.0), rng.random_range(-0.3..0.3), rng.random_range(-1.0..1.0));
    RigidPose::new(*rot.matrix(), t).unwrap()
}

/// Random plane through a point seen at a random pixel and depth.
fn random_plane(rng: &mut ChaCha8Rng, intr: &Intrinsics) -> Plane {
    let u = Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
    let w = intr.backproject(u.x, u.y, rng.random_range(5.0..60.0));
    let n = match rng.random_range(0..3) {
        0 => Vector3::z(),
        1 => Vector3::y(),
        _ => Vector3::new(rng.random_range(-0.5..0.5), rng.random_range(-0.5..0.5), 1.0).normalize(),
    };
    let n = if n.dot(&w) < 0.0 { -n } else { n };
    Plane::new(n, n.dot(&w)).unwrap()
}

// 4
fn augmentation_commutation() -> Outcome {
    let intr = default_intrinsics(640, 192).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let (mut worst, mut pixels, mut skipped) = (0.0f64, 0usize, 0usize);
    for _ in 0..100 {
        let aug = random_aug(&mut rng, &intr);
        let rc = compute_rc(&intr, &aug);
        let plane = random_plane(&mut rng, &intr);
        let pose = random_pose(&mut rng);
        let h = homography(&plane, &pose, &intr).unwrap();
        let h_aug = homography(
            &rectify_plane(&plane, &rc).unwrap(),
            &rectify_pose(&pose, &rc).unwrap(),
            &intr,
        )
        .unwrap();
        let mut done = 0;
        while done < 100 {
            let u = Vector2::new(rng.random_range(0.0..intr.width as f64), rng.random_range(0.0..intr.height as f64));
            // keep points in front of both cameras
            let Some(depth) = plane.depth_at(&intr, u.x, u.y) else {
                skipped += 1;
                continue;
            };
            if !(0.5..500.0).contains(&depth) || pose.apply(&intr.backproject(u.x, u.y, depth)).z < 0.5 {
                skipped += 1;
                continue;
            }
            let a = aug.map_pixel(&intr, map_pixel(&h, u).unwrap());
            let b = map_pixel(&h_aug, aug.map_pixel(&intr, u)).unwrap();
            worst = worst.max((a - b).norm());
            done += 1;
            pixels += 1;
        }
    }
    outcome(
        worst < 1e-8,
        format!("100 triples, {pixels} pixels ({skipped} behind-camera draws redrawn), max discrepancy {worst:.2e} px (< 1e-8)"),
    )
}

// 5
fn rectification_membership() -> Outcome {
    let intr = default_intrinsics(640, 192).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (mut membership, mut vertical_exact, mut ground) = (0.0f64, true, 0.0f64);
    for _ in 0..1000 {
        let aug = random_aug(&mut rng, &intr);
        let rc = compute_rc(&intr, &aug);
        let plane = random_plane(&mut rng, &intr);
        let rect = rectify_plane(&plane, &rc).unwrap();
        let n = plane.normal();
        let mut w = Vector3::new(rng.random_range(-50.0..50.0), rng.random_range(-5.0..5.0), rng.random_range(1.0..80.0));
        w -= n * (n.dot(&w) - plane.distance());
        let r = rect.normal().dot(&(rc * w)) - rect.distance();
        membership = membership.max(r.abs());

        let dist = rng.random_range(1.0..100.0);
        let v = rectify_plane(&Plane::new(Vector3::z(), dist).unwrap(), &rc).unwrap();
        vertical_exact &= v.normal() == Vector3::z();
        let g = rectify_plane(&Plane::new(Vector3::y(), dist).unwrap(), &rc).unwrap();
        let q = (aug.py - intr.cy) / (intr.fy * aug.fs);
        let closed = Vector3::new(0.0, 1.0, q) / (1.0 + q * q).sqrt();
        ground = ground.max((g.normal() - closed).amax());
    }
    outcome(
        membership <= 1e-9 && vertical_exact && ground <= 1e-12,
        format!(
            "1000 pairs, max residual {membership:.2e} (<= 1e-9), vertical normal exact: {vertical_exact}, ground normal error {ground:.2e} (<= 1e-12)"
        ),
    )
}

// 6
fn distill_algebra() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let (w, h) = (23, 11);
    let mut rand_map = |lo: f64, hi: f64| Map::from_fn(w, h, 1, |_, _, _| rng.random_range(lo..hi));
    let d = rand_map(0.5, 120.0);
    let d_ff = rand_map(0.5, 120.0);
    let soft_rl = rand_map(0.0, 1.0);
    let soft_lr = rand_map(0.0, 1.0);
    let mask = |side, v: f64| OcclusionMask {
        side,
        values: Map::filled(w, h, 1, v),
    };
    let pp = post_process(&d, &d_ff).unwrap();
    let case_pp = distill_label(&d, &d_ff, &mask(MaskSide::Rl, 1.0), &mask(MaskSide::Lr, 1.0)).unwrap() == pp;
    let case_d = distill_label(&d, &d_ff, &mask(MaskSide::Rl, 1.0), &mask(MaskSide::Lr, 0.0)).unwrap() == d;
    let case_ff = distill_label(&d, &d_ff, &mask(MaskSide::Rl, 0.0), &mask(MaskSide::Lr, 0.3)).unwrap() == d_ff;
    let label = distill_label(
        &d,
        &d_ff,
        &OcclusionMask {
            side: MaskSide::Rl,
            values: soft_rl,
        },
        &OcclusionMask {
            side: MaskSide::Lr,
            values: soft_lr,
        },
    )
    .unwrap();
    let mut convex = true;
    for i in 0..label.data().len() {
        let (a, b, l) = (d.data()[i], d_ff.data()[i], label.data()[i]);
        // a few ulps of rounding in the blend
        let tol = 4.0 * f64::EPSILON * a.max(b);
        convex &= a.min(b) - tol <= l && l <= a.max(b) + tol;
    }
    outcome(
        case_pp && case_d && case_ff && convex,
        format!("corners exact (d_pp {case_pp}, d {case_d}, d_ff {case_ff}); convex bound on {} px: {convex}", w * h),
    )
}

fn random_stack(rng: &mut ChaCha8Rng, w: usize, h: usize, n: usize) -> PlaneStack {
    let mut s = PlaneStack::new(w, h, n);
    for i in 0..n {
        for v in s.layer_mut(i) {
            *v = rng.random_range(1.0..100.0);
        }
    }
    s
}

// 7
fn mixture_sanity() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let (w, h) = (16, 8);
    let mut sum_err = 0.0f64;
    for n in [1, 2, 5, 17, 63] {
        let logits = (0..n * w * h).map(|_| rng.random_range(-6.0..6.0)).collect();
        let scales = (0..n * w * h).map(|_| 10f64.powf(rng.random_range(-4.0..1.5))).collect();
        let field = MixtureField::new(w, h, n, logits, scales).unwrap();
        let probs = mixture_probs(&field, &random_stack(&mut rng, w, h, n)).unwrap();
        for px in 0..w * h {
            if probs.valid()[px] {
                sum_err = sum_err.max((probs.pixel(px).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }

    let n = 9;
    let depths = {
        let mut s = PlaneStack::new(w, h, n);
        for i in 0..n {
            s.layer_mut(i).fill(2.0 + 7.5 * i as f64);
        }
        s
    };
    let mut logits = vec![0.0; n * w * h];
    let mut chosen = vec![0usize; w * h];
    for px in 0..w * h {
        chosen[px] = rng.random_range(0..n);
        logits[chosen[px] * w * h + px] = 50.0;
    }
    let one_hot = MixtureField::new(w, h, n, logits, vec![SIGMA_MIN; n * w * h]).unwrap();
    let (d, _) = compose_depth(&mixture_probs(&one_hot, &depths).unwrap(), &depths).unwrap();
    let comp_err = (0..w * h)
        .map(|px| {
            let want = depths.value(chosen[px], px);
            (d.data()[px] - want).abs() / want
        })
        .fold(0.0, f64::max);

    let mut mmp_exact = true;
    for n in [1, 2, 3, 7, 49, 63] {
        let uniform = softmax_weights(&MixtureField::constant(w, h, n, 0.0, 1.0).unwrap());
        mmp_exact &= mmp(&uniform).unwrap() == 1.0 / n as f64;
    }
    mmp_exact &= mmp(&softmax_weights(&one_hot)).unwrap() == 1.0;
    outcome(
        sum_err <= 1e-9 && comp_err < 1e-6 && mmp_exact,
        format!("max |sum p - 1| {sum_err:.1e} (<= 1e-9); one-hot composition error {comp_err:.1e} (< 1e-6); MMP exact: {mmp_exact}"),
    )
}

const PREC: usize = 256;
const RM: RoundingMode = RoundingMode::ToEven;

fn big(x: f64) -> BigFloat {
    BigFloat::from_f64(x, PREC)
}

/// Metrics recomputed in 256-bit arithmetic.
fn oracle_metrics(pred: &Map, gt: &Map, valid: &Mask, clip_max: f64, crop: Option<&Crop>, cc: &mut Consts) -> [BigFloat; 7] {
    let (rows, cols) = crop.map_or((0..gt.height(), 0..gt.width()), |c| c.pixel_ranges(gt.width(), gt.height()));
    let zero = big(0.0);
    let mut acc = [zero.clone(), zero.clone(), zero.clone(), zero.clone()];
    let mut hits = [0u64; 3];
    let mut n = 0u64;
    let thresholds = [big(1.25), big(1.5625), big(1.953125)];
    for y in rows {
        for x in cols.clone() {
            if !valid.get(x, y) {
                continue;
            }
            n += 1;
            let g = big(gt.get(x, y, 0).clamp(CLIP_MIN, clip_max));
            let p = big(pred.get(x, y, 0).clamp(CLIP_MIN, clip_max));
            let diff = g.sub(&p, PREC, RM);
            let sq = diff.mul(&diff, PREC, RM);
            acc[0] = acc[0].add(&diff.abs().div(&g, PREC, RM), PREC, RM);
            acc[1] = acc[1].add(&sq.div(&g, PREC, RM), PREC, RM);
            acc[2] = acc[2].add(&sq, PREC, RM);
            let dl = g.ln(PREC, RM, cc).sub(&p.ln(PREC, RM, cc), PREC, RM);
            acc[3] = acc[3].add(&dl.mul(&dl, PREC, RM), PREC, RM);
            let (r1, r2) = (p.div(&g, PREC, RM), g.div(&p, PREC, RM));
            let ratio = if r1.cmp(&r2).unwrap() > 0 { r1 } else { r2 };
            for k in 0..3 {
                if ratio.cmp(&thresholds[k]).unwrap() < 0 {
                    hits[k] += 1;
                }
            }
        }
    }
    let nb = big(n as f64);
    let mean = |v: &BigFloat| v.div(&nb, PREC, RM);
    let frac = |k: usize| big(hits[k] as f64).div(&nb, PREC, RM);
    [
        mean(&acc[0]),
        mean(&acc[1]),
        mean(&acc[2]).sqrt(PREC, RM),
        mean(&acc[3]).sqrt(PREC, RM),
        frac(0),
        frac(1),
        frac(2),
    ]
}

// 8
fn metrics_oracle() -> Outcome {
    let mut cc = Consts::new().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let tol = big(1e-12);
    let one = big(1.0);
    let mut all_ok = true;
    for trial in 0..10 {
        let (w, h) = (rng.random_range(3..12), rng.random_range(3..9));
        let gt = Map::from_fn(w, h, 1, |_, _, _| rng.random_range(0.5..95.0));
        let pred = Map::from_fn(w, h, 1, |x, y, _| gt.get(x, y, 0) * rng.random_range(0.5..1.8));
        let valid = Mask::from_vec(w, h, (0..w * h).map(|_| rng.random_bool(0.8)).collect()).unwrap();
        let crop = (trial % 2 == 1).then_some(Crop {
            top: 0.2,
            bottom: 1.0,
            left: 0.0,
            right: 0.9,
        });
        let Ok(m) = depth_metrics(&pred, &gt, &valid, 80.0, crop.as_ref()) else {
            continue;
        };
        let oracle = oracle_metrics(&pred, &gt, &valid, 80.0, crop.as_ref(), &mut cc);
        for (v, o) in m.values().iter().zip(&oracle) {
            let err = big(*v).sub(o, PREC, RM).abs();
            let scale = if o.abs().cmp(&one).unwrap() > 0 { o.abs() } else { one.clone() };
            all_ok &= err.cmp(&tol.mul(&scale, PREC, RM)).unwrap() <= 0;
        }
    }
    let gt = Map::from_fn(8, 6, 1, |x, y, _| 1.0 + x as f64 + 0.5 * y as f64);
    let prop = depth_metrics(&gt.map(|d| 1.3 * d), &gt, &Mask::new(8, 6, true), 80.0, None).unwrap();
    let prop_ok = (prop.abs_rel - 0.3).abs() < 1e-12 && prop.a1 == 0.0 && prop.a2 == 1.0;
    outcome(
        all_ok && prop_ok,
        format!(
            "10 random maps within 1e-12 of the 256-bit reference: {all_ok}; 1.3x case Abs Rel {:.15} A1 {} A2 {}",
            prop.abs_rel, prop.a1, prop.a2
        ),
    )
}

// 9
fn end_to_end_cli() -> Outcome {
    let exe = env!("CARGO_BIN_EXE_orthoplane");
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().to_str().unwrap();
    let t = Instant::now();
    for stage in ["synth", "masks", "distill", "eval"] {
        let status = Command::new(exe)
            .args(["--seed", "11", "--out", out, stage])
            .output()
            .unwrap();
        if !status.status.success() {
            return outcome(
                false,
                format!("stage {stage} failed: {}", String::from_utf8_lossy(&status.stderr).trim()),
            );
        }
    }
    let elapsed = t.elapsed().as_secs_f64();
    let text = std::fs::read_to_string(Path::new(out).join("metrics_label.json")).unwrap();
    let record: EvalRecord = serde_json::from_str(&text).unwrap();
    let abs_rel = record.metrics.abs_rel;
    outcome(
        abs_rel < 0.01 && elapsed < 60.0,
        format!("exit 0 for all stages, Abs Rel {abs_rel:.2e} (< 0.01) over {} px, {elapsed:.1} s (< 60)", record.metrics.count),
    )
}

// 10
fn format_round_trips() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let mut pfm_exact = true;
    for trial in 0..20 {
        let channels = if trial % 2 == 0 { 1 } else { 3 };
        let (w, h) = (rng.random_range(1..40), rng.random_range(1..30));
        let mut data: Vec<f32> = (0..w * h * channels).map(|_| f32::from_bits(rng.random())).collect();
        data[0] = -0.0;
        let img = PfmImage::new(w, h, channels, data).unwrap();
        let path = dir.path().join(format!("m{trial}.pfm"));
        write_pfm(&path, &img).unwrap();
        let back = read_pfm(&path).unwrap();
        pfm_exact &= back.width == w
            && back.height == h
            && back.channels == channels
            && back.data.iter().zip(&img.data).all(|(a, b)| a.to_bits() == b.to_bits());
    }
    let mut png_err = 0.0f64;
    let mut png_valid = true;
    for trial in 0..10 {
        let (w, h) = (rng.random_range(1..200), rng.random_range(1..100));
        let disp = Map::from_fn(w, h, 1, |_, _, _| rng.random_range(1.0 / 256.0..255.99));
        let valid = Mask::from_vec(w, h, (0..w * h).map(|_| rng.random_bool(0.9)).collect()).unwrap();
        let path = dir.path().join(format!("d{trial}.png"));
        write_disparity_png16(&path, &disp, Some(&valid)).unwrap();
        let (back, back_valid) = read_disparity_png16(&path).unwrap();
        png_valid &= back_valid == valid;
        for i in 0..disp.data().len() {
            if valid.data()[i] {
                png_err = png_err.max((back.data()[i] - disp.data()[i]).abs());
            }
        }
    }
    outcome(
        pfm_exact && png_valid && png_err <= 1.0 / 512.0,
        format!("PFM bit-exact on 20 maps: {pfm_exact}; PNG16 max error {png_err:.2e} px (<= 1/512), validity kept: {png_valid}"),
    )
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 10] = [
        ("round-trip synthesis", round_trip_synthesis),
        ("occlusion oracle agreement", occlusion_agreement),
        ("MLL gradient check", mll_gradient_check),
        ("augmentation commutation", augmentation_commutation),
        ("plane rectification membership", rectification_membership),
        ("distillation label algebra", distill_algebra),
        ("mixture sanity", mixture_sanity),
        ("metrics oracle", metrics_oracle),
        ("end-to-end CLI", end_to_end_cli),
        ("format round-trips", format_round_trips),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let t = Instant::now();
        let result = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|e| {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            outcome(false, format!("panicked: {msg}"))
        });
        if !result.pass {
            failed += 1;
        }
        println!(
            "criterion {:>2} {} {name}: {} [{:.1}s]",
            i + 1,
            if result.pass { "PASS" } else { "FAIL" },
            result.detail,
            t.elapsed().as_secs_f64()
        );
    }
    println!("acceptance: {} passed, {failed} failed", criteria.len() - failed);
    if failed > 0 && std::env::var_os("ACCEPTANCE_STRICT").is_some() {
        std::process::exit(1);
    }
}
