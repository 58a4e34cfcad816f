use candle_core::{DType, Device, Tensor};
use textir::conditioning::interpolate_condition;
use textir::generator::{strength_to_weights, GeneratorSpec, StrengthFactor, StyleConv};
use textir::nn::ParamStore;
use textir::{ColorSpace, EmbeddingProvider, ImageTensor, StubProvider, Task, TextIr};

fn max_diff(a: &Tensor, b: &Tensor) -> f32 {
    (a - b).unwrap().abs().unwrap().max_all().unwrap().to_scalar::<f32>().unwrap()
}

fn image(c: usize, side: usize, space: ColorSpace) -> ImageTensor {
    ImageTensor::from_fn(c, side, side, space, |c, y, x| ((c * 13 + y * 7 + x * 3) % 29) as f32 / 28.0)
}

#[test]
fn standard_pyramid_spacing() {
    let dev = Device::Cpu;
    let spec = GeneratorSpec::standard(Task::Inpaint);
    let model = TextIr::new(spec.clone(), &dev, 0).unwrap();
    let x = Tensor::zeros((1, 4, 256, 256), DType::F32, &dev).unwrap();
    let (pyramid, s) = model.encode(&x).unwrap();
    let sides: Vec<usize> = (0..pyramid.len()).map(|j| pyramid.level(j).dims()[2]).collect();
    assert_eq!(sides, vec![256, 128, 64, 32, 16]);
    for j in 0..pyramid.len() {
        assert_eq!(pyramid.level(j).dims()[1], spec.widths[j]);
        let v = pyramid.level(j).flatten_all().unwrap().to_vec1::<f32>().unwrap();
        assert!(v.iter().all(|v| v.is_finite()));
    }
    let s = s.unwrap().flatten_all().unwrap().to_vec1::<f32>().unwrap()[0];
    assert!((0.0..=1.0).contains(&s));
}

#[test]
fn sr_coarsest_level() {
    let dev = Device::Cpu;
    let mut spec = GeneratorSpec::tiny(Task::SuperResolution, 512);
    spec.levels = 3;
    spec.widths = vec![4; 4];
    let model = TextIr::new(spec, &dev, 0).unwrap();
    let x = Tensor::zeros((1, 3, 512, 512), DType::F32, &dev).unwrap();
    let (pyramid, s) = model.encode(&x).unwrap();
    assert_eq!(pyramid.coarsest().dims()[2], 512 / 8);
    assert!(s.is_none());
    let c = StubProvider::new().embed_text("a face").unwrap();
    let lr = image(3, 512, ColorSpace::Rgb);
    assert!(model.restore(&lr, &c, None).is_err());
}

#[test]
fn style_scale_invariance() {
    let dev = Device::Cpu;
    let mut store = ParamStore::new(&dev, 3);
    let layer = StyleConv::new(&mut store, "sc", 6, 5, 3).unwrap();
    let x = Tensor::randn(0f32, 1.0, (1, 6, 9, 9), &dev).unwrap();
    let style = Tensor::rand(0.2f32, 2.0, (1, 6), &dev).unwrap();
    let base = layer.forward(&x, &style).unwrap();
    for sigma in [0.1, 0.5, 2.0, 10.0] {
        let y = layer.forward(&x, &style.affine(sigma, 0.0).unwrap()).unwrap();
        assert!(max_diff(&base, &y) <= 1e-3, "sigma {sigma}");
    }
}

#[test]
fn strength_endpoints_give_distinct_weights() {
    let dev = Device::Cpu;
    let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 32), &dev, 5).unwrap();
    let w0 = strength_to_weights(StrengthFactor::explicit(0.0).unwrap(), model.strength_mlp(), &dev).unwrap();
    let w1 = strength_to_weights(StrengthFactor::explicit(1.0).unwrap(), model.strength_mlp(), &dev).unwrap();
    let differs = (0..w0.levels()).any(|i| max_diff(&w0.raw(i).0, &w1.raw(i).0) > 0.0);
    assert!(differs);
}

#[test]
fn swapping_style_codes_changes_output() {
    let dev = Device::Cpu;
    let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 32), &dev, 1).unwrap();
    let p = StubProvider::new();
    let x = model
        .network_input(&[&image(4, 32, ColorSpace::RgbWithMask)])
        .unwrap();
    let (pyramid, s) = model.encode(&x).unwrap();
    let weights = model.fusion_weights(&s.unwrap()).unwrap();
    let c1 = p.embed_text("a red car").unwrap().to_tensor(&dev).unwrap();
    let c2 = p.embed_text("a blue sky").unwrap().to_tensor(&dev).unwrap();
    let codes1 = model.style_codes(&c1).unwrap();
    let codes2 = model.style_codes(&c2).unwrap();
    let out1 = model.generator().forward(&pyramid, &codes1, &weights).unwrap();
    for k in 0..codes1.len() {
        let swapped = codes1.with_code(k, codes2.codes()[k].clone());
        let out = model.generator().forward(&pyramid, &swapped, &weights).unwrap();
        assert!(max_diff(&out1, &out) > 0.0, "code {k} does not reach the output");
    }
}

#[test]
fn restore_shapes_per_task() {
    let dev = Device::Cpu;
    let p = StubProvider::new();
    let c = p.embed_text("he is a bald man").unwrap();
    let cases = [
        (Task::Inpaint, 256, ColorSpace::RgbWithMask, None),
        (Task::SuperResolution, 512, ColorSpace::Rgb, Some(StrengthFactor::from_sr_factor(16).unwrap())),
        (Task::Colorize, 256, ColorSpace::LabLightness, None),
    ];
    for (task, side, space, s) in cases {
        let model = TextIr::new(GeneratorSpec::tiny(task, side), &dev, 0).unwrap();
        let mut input = image(task.input_channels(), side, space);
        if task == Task::Colorize {
            input = input.map(|v| v * 100.0);
        }
        let r = model.restore(&input, &c, s).unwrap();
        assert_eq!(r.output.dims(), (task.output_channels(), side, side));
        assert_eq!(r.rgb.dims(), (3, side, side));
        assert!(r.rgb.is_finite());
        let wrong = image(task.input_channels() + 1, side, ColorSpace::Rgb);
        assert!(model.restore(&wrong, &c, s).is_err());
    }
}

#[test]
fn inference_is_deterministic() {
    let dev = Device::Cpu;
    let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 32), &dev, 9).unwrap();
    let c = StubProvider::new().embed_text("a smiling woman").unwrap();
    let x = image(4, 32, ColorSpace::RgbWithMask);
    let a = model.restore(&x, &c, None).unwrap();
    let b = model.restore(&x, &c, None).unwrap();
    assert_eq!(a.rgb.data(), b.rgb.data());
}

#[test]
fn beta_sweep_moves_away_from_image_endpoint() {
    let dev = Device::Cpu;
    let model = TextIr::new(GeneratorSpec::tiny(Task::Inpaint, 32), &dev, 2).unwrap();
    let p = StubProvider::new();
    let clean = image(3, 32, ColorSpace::Rgb);
    let x = image(4, 32, ColorSpace::RgbWithMask);
    let text = p.embed_text("he is a bald man").unwrap();
    let img = p.embed_image(&clean).unwrap();
    let outs: Vec<ImageTensor> = [0.0, 0.25, 0.5, 0.75, 1.0]
        .iter()
        .map(|&beta| {
            let c = interpolate_condition(&text, &img, beta).unwrap();
            model.restore(&x, &c, None).unwrap().rgb
        })
        .collect();
    let dist: Vec<f64> = outs
        .iter()
        .map(|o| {
            o.data()
                .iter()
                .zip(outs[0].data())
                .map(|(a, b)| ((a - b) as f64).powi(2))
                .sum::<f64>()
                .sqrt()
        })
        .collect();
    for w in dist.windows(2) {
        assert!(w[1] > w[0], "distances {dist:?}");
    }
}
