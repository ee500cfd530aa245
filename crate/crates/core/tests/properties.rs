use proptest::prelude::*;
use weathercycle_core::augment::{sample_batch, AugmentConfig};
use weathercycle_core::colorspace::{rgb_to_ycbcr, ycbcr_to_rgb};
use weathercycle_core::dacr::{dacr_loss_var, DifficultyLabel};
use weathercycle_core::generators::init_full_model;
use weathercycle_core::ldgm::{ldgm_trace, LdgmConfig};
use weathercycle_core::losses::{cycle_loss, total_loss, LossWeights};
use weathercycle_core::metrics::{psnr, psnr_from_mse, ssim};
use weathercycle_core::optim::cosine_lr;
use weathercycle_core::spectral::{fft2, ifft2, swap_amplitude};
use weathercycle_core::tape::{Tape, Tensor};
use weathercycle_core::{LumaPlane, RgbImage};

fn image(h: usize, w: usize) -> impl Strategy<Value = RgbImage> {
    prop::collection::vec(0.0f64..=1.0, 3 * h * w).prop_map(move |d| RgbImage::from_planar(h, w, d).unwrap())
}

fn sized_image(lo: usize, hi: usize) -> impl Strategy<Value = RgbImage> {
    (lo..=hi, lo..=hi).prop_flat_map(|(h, w)| image(h, w))
}

fn plane(lo: usize, hi: usize) -> impl Strategy<Value = LumaPlane> {
    (lo..=hi, lo..=hi).prop_flat_map(|(h, w)| {
        prop::collection::vec(0.0f64..=1.0, h * w).prop_map(move |d| LumaPlane::new(h, w, d).unwrap())
    })
}

fn embedding() -> impl Strategy<Value = Vec<f64>> {
    prop::collection::vec(-1.0f64..1.0, 8).prop_filter("non-zero", |v| v.iter().map(|x| x * x).sum::<f64>() > 1e-3)
}

fn single_term(a: &[f64], p: &[f64], n: &[f64], w: f64) -> f64 {
    let mut t = Tape::new();
    let v = |t: &mut Tape, x: &[f64]| t.constant(Tensor::new(vec![x.len()], x.to_vec()));
    let (av, pv, nv) = (v(&mut t, a), v(&mut t, p), v(&mut t, n));
    let out = dacr_loss_var(&mut t, &[av], &[pv], &[(nv, w)], &[0], 0.1, false).unwrap();
    t.scalar_value(out.loss.unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn colorspace_round_trip(img in sized_image(1, 12)) {
        let (y, c) = rgb_to_ycbcr(&img).unwrap();
        prop_assert_eq!(y.dims(), img.dims());
        prop_assert!(y.data().iter().chain(c.data()).all(|v| (0.0..=1.0).contains(v)));
        prop_assert!(ycbcr_to_rgb(&y, &c).unwrap().max_abs_diff(&img) < 1e-5);
    }

    #[test]
    fn neutral_gray_has_neutral_chroma(g in 0.0f64..=1.0, h in 1usize..6, w in 1usize..6) {
        let (_, c) = rgb_to_ycbcr(&RgbImage::filled(h, w, [g, g, g])).unwrap();
        prop_assert!(c.data().iter().all(|v| (v - 0.5).abs() < 1e-12));
    }

    #[test]
    fn fft_round_trip_parseval_and_self_swap(p in plane(8, 20)) {
        let s = fft2(&p).unwrap();
        prop_assert!(s.amplitude().iter().all(|a| *a >= 0.0));
        prop_assert!(ifft2(&s).unwrap().max_abs_diff(&p) < 1e-5);
        let n = (p.height() * p.width()) as f64;
        let space: f64 = p.data().iter().map(|x| x * x).sum();
        let freq: f64 = s.amplitude().iter().map(|a| a * a).sum::<f64>() / n;
        prop_assert!((space - freq).abs() <= 1e-4 * space.max(1e-12));
        prop_assert!(swap_amplitude(&p, &p).unwrap().max_abs_diff(&p) < 1e-5);
    }

    #[test]
    fn ldgm_structural_identity(clean in plane(8, 8), patch in plane(8, 8), seed in 0u64..1000) {
        let cfg = LdgmConfig { cta: weathercycle_core::ldgm::CtaConfig { lift_channels: 4, topk: 2 }, hidden: 3 };
        let params = weathercycle_core::ldgm::init_params(&cfg, 8, 8, seed).unwrap();
        let t = ldgm_trace(&params, &clean, &patch, &cfg.cta).unwrap();
        for k in 0..64 {
            let want = t.clean_amp[k] * (1.0 + t.filter[k]);
            prop_assert!((t.fused_amp[k] - want).abs() <= 1e-6 * want.abs().max(1.0));
        }
        prop_assert!(t.residue < 1e-5);
    }

    #[test]
    fn psnr_and_ssim_laws(a in image(12, 12), b in image(12, 12)) {
        prop_assert_eq!(psnr(&a, &b).unwrap(), psnr(&b, &a).unwrap());
        let s = ssim(&a, &b).unwrap();
        prop_assert!((s - ssim(&b, &a).unwrap()).abs() < 1e-12);
        prop_assert!(s.abs() <= 1.0 + 1e-12);
        prop_assert!((ssim(&a, &a).unwrap() - 1.0).abs() < 1e-9);
        prop_assert_eq!(psnr(&a, &a).unwrap(), 100.0);
    }

    #[test]
    fn psnr_strictly_decreasing_in_mse(m1 in 1e-8f64..1.0, m2 in 1e-8f64..1.0) {
        prop_assume!(m1 < m2 && psnr_from_mse(m1) < 100.0);
        prop_assert!(psnr_from_mse(m1) > psnr_from_mse(m2));
    }

    #[test]
    fn dacr_monotone_in_difficulty_and_alignment(a in embedding(), p in embedding(), n in embedding(), t in 0.0f64..1.0) {
        let easy = single_term(&a, &p, &n, 1.0);
        let hard = single_term(&a, &p, &n, 3.0);
        let very = single_term(&a, &p, &n, 5.0);
        prop_assert!(easy < hard && hard < very);
        prop_assert!((very - easy - 5f64.ln()).abs() < 1e-9);
        // Moving the positive toward the anchor raises sim(anchor, pos).
        let unit = |v: &[f64]| { let n = v.iter().map(|x| x * x).sum::<f64>().sqrt(); v.iter().map(|x| x / n).collect::<Vec<_>>() };
        let (ua, up) = (unit(&a), unit(&p));
        prop_assume!(ua.iter().zip(&up).map(|(x, y)| x * y).sum::<f64>() < 0.999);
        let closer: Vec<f64> = ua.iter().zip(&up).map(|(x, y)| (1.0 - t) * y + t * x).collect();
        prop_assume!(t > 0.01);
        prop_assert!(single_term(&a, &closer, &n, 1.0) < single_term(&a, &p, &n, 1.0));
    }

    #[test]
    fn difficulty_argmax_invariant_under_monotone_maps(s in prop::collection::vec(-1.0f64..1.0, 3), k in 0.1f64..10.0, c in -5.0f64..5.0) {
        let base = DifficultyLabel::from_scores(s.clone()).unwrap().level;
        let affine = DifficultyLabel::from_scores(s.iter().map(|x| k * x + c).collect()).unwrap().level;
        let exp = DifficultyLabel::from_scores(s.iter().map(|x| x.exp()).collect()).unwrap().level;
        prop_assert_eq!(base, affine);
        prop_assert_eq!(base, exp);
    }

    #[test]
    fn cosine_lr_is_non_increasing(total in 1u64..2000, lr_min in 0.0f64..1e-4) {
        let mut prev = f64::INFINITY;
        for step in 0..=total.min(200) {
            let s = step * total / total.min(200);
            let lr = cosine_lr(s, total, 2e-4, lr_min).unwrap();
            prop_assert!(lr <= prev + 1e-18);
            prev = lr;
        }
    }

    #[test]
    fn augmentation_preserves_range_and_size(imgs in prop::collection::vec(image(10, 12), 1..3), seed in any::<u64>()) {
        let cfg = AugmentConfig { brightness: 0.4, contrast: 0.4, saturation: 0.4, ..AugmentConfig::default() };
        let b = sample_batch(&imgs, &imgs, 8, &cfg, 3, seed).unwrap();
        for img in b.clean.iter().chain(&b.degraded) {
            prop_assert_eq!(img.dims(), (8, 8));
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn cycle_loss_non_negative_and_total_linear(a in image(8, 8), b in image(8, 8), x in 0.0f64..5.0, y in -5.0f64..5.0) {
        let l = cycle_loss(&a, &b, &b, &a, 0.1).unwrap();
        prop_assert!(l > 0.0 || a == b);
        prop_assert_eq!(cycle_loss(&a, &a, &b, &b, 0.1).unwrap(), 0.0);
        let w = LossWeights::default();
        prop_assert!((total_loss(x, y, &w).unwrap() - (x + 0.8 * y)).abs() < 1e-12);
    }
}

#[test]
fn every_forward_parameter_exists_once() {
    let cfg = weathercycle_core::generators::ModelConfig::default();
    let params = init_full_model(&cfg, 1).unwrap();
    let names: Vec<&str> = params.names().collect();
    let mut sorted = names.clone();
    sorted.dedup();
    assert_eq!(sorted.len(), names.len());
}
