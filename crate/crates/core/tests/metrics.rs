mod common;

use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use textir::conditioning::ConditionEmbedding;
use textir::degradations::TaskSample;
use textir::features::RandomConvExtractor;
use textir::metrics::{
    evaluate_dataset, psnr, ssim, EvalOptions, MetricReport, PerceptualMetric, Restorer, SsimConfig, TextSource,
};
use textir::training::Dataset;
use textir::{ColorSpace, ImageTensor, StubProvider, Task};

use common::*;

fn random_image(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize) -> ImageTensor {
    ImageTensor::from_fn(c, h, w, ColorSpace::Rgb, |_, _, _| rng.gen())
}

fn jitter(img: &ImageTensor, amp: f32, rng: &mut ChaCha8Rng) -> ImageTensor {
    let (c, h, w) = img.dims();
    ImageTensor::from_fn(c, h, w, ColorSpace::Rgb, |ch, y, x| {
        (img.plane(ch)[y * w + x] + amp * (rng.gen::<f32>() - 0.5)).clamp(0.0, 1.0)
    })
}

fn psnr_oracle(a: &[f32], b: &[f32]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (*x as f64 - *y as f64).powi(2)).sum::<f64>() / a.len() as f64;
    -10.0 * mse.log10()
}

/// Direct 2-D weighted sums at every valid window position.
fn ssim_oracle(a: &ImageTensor, b: &ImageTensor) -> f64 {
    let (c, h, w) = a.dims();
    let n = 11;
    let mut k2 = vec![0.0f64; n * n];
    for i in 0..n {
        for j in 0..n {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            k2[i * n + j] = (-(dy * dy + dx * dx) / (2.0 * 1.5 * 1.5)).exp();
        }
    }
    let s: f64 = k2.iter().sum();
    k2.iter_mut().for_each(|v| *v /= s);
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut scores = Vec::new();
    for ch in 0..c {
        let (pa, pb) = (a.plane(ch), b.plane(ch));
        for y0 in 0..=h - n {
            for x0 in 0..=w - n {
                let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for i in 0..n {
                    for j in 0..n {
                        let wgt = k2[i * n + j];
                        let p = pa[(y0 + i) * w + x0 + j] as f64;
                        let q = pb[(y0 + i) * w + x0 + j] as f64;
                        mx += wgt * p;
                        my += wgt * q;
                        sxx += wgt * p * p;
                        syy += wgt * q * q;
                        sxy += wgt * p * q;
                    }
                }
                let (vx, vy, cov) = (sxx - mx * mx, syy - my * my, sxy - mx * my);
                scores.push(((2.0 * mx * my + c1) * (2.0 * cov + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2)));
            }
        }
    }
    scores.iter().sum::<f64>() / scores.len() as f64
}

#[test]
fn psnr_and_ssim_match_brute_force_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let cfg = SsimConfig::default();
    for _ in 0..100 {
        let (c, h, w) = (rng.gen_range(1..=3), rng.gen_range(11..20), rng.gen_range(11..20));
        let a = random_image(&mut rng, c, h, w);
        let noise: f32 = rng.gen_range(0.01..0.5);
        let b = jitter(&a, noise, &mut rng);
        assert!((psnr(&a, &b, 1.0).unwrap() - psnr_oracle(a.data(), b.data())).abs() < 1e-9);
        assert!((ssim(&a, &b, &cfg).unwrap() - ssim_oracle(&a, &b)).abs() < 1e-6);
    }
}

#[test]
fn psnr_reference_values() {
    let a = ImageTensor::filled(3, 16, 16, ColorSpace::Rgb, 0.25);
    let b = ImageTensor::filled(3, 16, 16, ColorSpace::Rgb, 0.35);
    assert!((psnr(&a, &b, 1.0).unwrap() - 20.0).abs() < 1e-6);
    assert_eq!(psnr(&a, &a, 1.0).unwrap(), f64::INFINITY);
    assert!(psnr(&a, &ImageTensor::filled(1, 16, 16, ColorSpace::Rgb, 0.0), 1.0).is_err());
}

#[test]
fn ssim_reference_values() {
    let cfg = SsimConfig::default();
    let a = pattern(32, 0.0);
    let neg = a.map(|v| 1.0 - v);
    assert!((ssim(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-6);
    let ab = ssim(&a, &neg, &cfg).unwrap();
    assert!(ab < 0.2);
    assert!((ab - ssim(&neg, &a, &cfg).unwrap()).abs() < 1e-9);
    let small = pattern(10, 0.0);
    assert!(ssim(&small, &small, &cfg).is_err());
}

#[test]
fn perceptual_distance_identity_symmetry_ranking() {
    let metric = PerceptualMetric::new(Arc::new(RandomConvExtractor::new(1)));
    assert!(!metric.is_calibrated());
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for i in 0..50 {
        let a = pattern(32, rng.gen_range(0.0..2.0));
        let near = jitter(&a, 0.01, &mut rng);
        let other = random_image(&mut rng, 3, 32, 32);
        let d_near = metric.distance(&a, &near).unwrap();
        let d_far = metric.distance(&a, &other).unwrap();
        assert!(d_near < d_far, "triple {i}: {d_near} vs {d_far}");
        if i < 5 {
            assert!(metric.distance(&a, &a).unwrap().abs() < 1e-6);
            assert!((d_far - metric.distance(&other, &a).unwrap()).abs() < 1e-6);
        }
    }
}

struct Perfect;

impl Restorer for Perfect {
    fn restore_sample(&self, s: &TaskSample, _: &ConditionEmbedding) -> textir::Result<ImageTensor> {
        Ok(s.ground_truth.clone())
    }
}

/// Returns the degraded RGB planes unchanged.
struct Identity;

impl Restorer for Identity {
    fn restore_sample(&self, s: &TaskSample, _: &ConditionEmbedding) -> textir::Result<ImageTensor> {
        s.degraded.select_channels(0, 3, ColorSpace::Rgb)
    }
}

fn options(text_source: TextSource) -> EvalOptions {
    EvalOptions {
        task: Task::Inpaint,
        resolution: 32,
        text_source,
        seed: 42,
        strokes: Default::default(),
        ssim: SsimConfig::default(),
    }
}

fn eval(restorer: &dyn Restorer, ds: &Dataset, source: TextSource) -> MetricReport {
    let metric = PerceptualMetric::new(Arc::new(RandomConvExtractor::new(0)));
    evaluate_dataset(restorer, ds, &StubProvider::new(), &metric, &options(source)).unwrap()
}

#[test]
fn perfect_restorer_bounds_identity_restorer() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 4, 32);
    let ds = Dataset::open(dir.path()).unwrap();
    let best = eval(&Perfect, &ds, TextSource::Image);
    assert_eq!(best.evaluated, 4);
    assert!((best.mean_ssim - 1.0).abs() < 1e-6);
    assert!(best.mean_perceptual.abs() < 1e-6);
    assert_eq!(best.mean_psnr, f64::INFINITY);

    let plain = eval(&Identity, &ds, TextSource::Image);
    for (p, q) in best.per_image.iter().zip(&plain.per_image) {
        assert_eq!(p.path, q.path);
        assert!(q.psnr < p.psnr && q.ssim < p.ssim && q.perceptual > p.perceptual);
    }

    let json = serde_json::to_string(&best).unwrap();
    assert!(json.contains("\"mean_psnr\":\"inf\""));
    let back: MetricReport = serde_json::from_str(&json).unwrap();
    assert_eq!(back, best);
    assert!(best.table().contains("uncalibrated"));
}

#[test]
fn report_is_order_invariant_and_means_are_exact() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 6, 32);
    let ds = Dataset::open(dir.path()).unwrap();
    let mut entries = ds.entries().to_vec();
    entries.reverse();
    entries.swap(0, 2);
    let shuffled = Dataset::from_entries(ds.root(), entries);
    let a = eval(&Identity, &ds, TextSource::Image);
    let b = eval(&Identity, &shuffled, TextSource::Image);
    assert!((a.mean_psnr - b.mean_psnr).abs() < 1e-9);
    assert!((a.mean_ssim - b.mean_ssim).abs() < 1e-9);
    assert!((a.mean_perceptual - b.mean_perceptual).abs() < 1e-9);
    assert_eq!(a.config_hash, b.config_hash);
    let n = a.per_image.len() as f64;
    assert!((a.mean_ssim - a.per_image.iter().map(|m| m.ssim).sum::<f64>() / n).abs() < 1e-9);
    assert!((a.mean_psnr - a.per_image.iter().map(|m| m.psnr).sum::<f64>() / n).abs() < 1e-9);
}

#[test]
fn images_without_captions_are_counted_not_scored() {
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), 5, 32);
    std::fs::write(dir.path().join("broken.png"), b"nope").unwrap();
    let mut index = std::fs::read_to_string(dir.path().join("index.tsv")).unwrap();
    index.push_str("broken.png\ttrain\ta caption\n");
    std::fs::write(dir.path().join("index.tsv"), index).unwrap();
    let ds = Dataset::open(dir.path()).unwrap();
    let r = eval(&Identity, &ds, TextSource::Captions);
    assert_eq!(r.evaluated, 3);
    assert_eq!(r.skipped_missing_captions, 2);
    assert_eq!(r.skipped_unreadable, 1);
    let r = eval(&Identity, &ds, TextSource::Image);
    assert_eq!(r.evaluated, 5);
    assert_eq!(r.skipped_missing_captions, 0);
}

#[test]
fn text_source_parses() {
    assert_eq!("captions".parse::<TextSource>().unwrap(), TextSource::Captions);
    assert_eq!("image".parse::<TextSource>().unwrap(), TextSource::Image);
    assert!("words".parse::<TextSource>().is_err());
}
