use sinnet_core::label::rasterize;
use sinnet_core::model::{
    batch_gradients, crop_output, evaluate_loss, from_bytes, load_model, pad_image, save_model, to_bytes, train, LossReduction,
    LossWeights, Sample, SinNet, TrainConfig, DECODER_FILTERS, ENCODER_FILTERS,
};
use sinnet_core::{synth, GrayImage, PointType, Shape, Tensor};

/// Full-width parameter count, derived by hand from the layer inventory.
const FULL_WIDTH_PARAMS: usize = 4_451_866;

fn inception_params(cin: usize, filters: usize) -> usize {
    let q = filters / 4;
    let r = (filters / 8).max(1);
    let a = cin * q + q;
    let b = (cin * r + r) + (r * q * 9 + q);
    let c = (cin * r + r) + (r * q * 9 + q) + (q * q * 9 + q);
    let d = cin * q + q;
    a + b + c + d
}

fn analytic_params(divisor: usize) -> usize {
    let enc: Vec<usize> = ENCODER_FILTERS.iter().map(|f| f / divisor).collect();
    let mut n = 0;
    let mut cin = 1;
    for &f in &enc {
        n += inception_params(cin, f);
        cin = f;
    }
    let mut branch = 0;
    let mut prev = enc[4];
    for (k, f) in DECODER_FILTERS.iter().map(|f| f / divisor).enumerate() {
        branch += inception_params(prev + enc[3 - k], f);
        prev = f;
    }
    branch += prev * 2 * 9 + 2 + 2 + 1;
    n + 2 * branch
}

#[test]
fn parameter_counts() {
    assert_eq!(analytic_params(1), FULL_WIDTH_PARAMS);
    let full = SinNet::<f32>::new(1).unwrap();
    assert_eq!(full.params().scalar_count(), FULL_WIDTH_PARAMS);
    for d in [2, 4, 8, 16] {
        assert_eq!(SinNet::<f32>::new(d).unwrap().params().scalar_count(), analytic_params(d), "divisor {d}");
    }
    assert_eq!(analytic_params(8), 70_468);

    // the serialized tensors carry the same number of values
    let bytes = to_bytes(&full);
    let mut pos = 20;
    let mut values = 0;
    let u32_at = |p: usize| u32::from_le_bytes(bytes[p..p + 4].try_into().unwrap()) as usize;
    for _ in 0..u32_at(16) {
        pos += 4 + u32_at(pos);
        let n: usize = (0..4).map(|i| u32_at(pos + 4 * i)).product();
        pos += 16 + 4 * n;
        values += n;
    }
    assert_eq!(pos, bytes.len());
    assert_eq!(values, FULL_WIDTH_PARAMS);
}

#[test]
fn skip_link_channel_accounting() {
    for d in [1, 2, 4, 8, 16] {
        let net = SinNet::<f32>::new(d).unwrap();
        for branch in PointType::ALL {
            let dec = net.decoder(branch);
            let mut prev = net.encoder()[4].out_channels();
            for (k, stage) in dec.stages.iter().enumerate() {
                assert_eq!(stage.in_channels, prev + net.encoder()[3 - k].out_channels());
                prev = stage.out_channels();
            }
            assert_eq!(prev, 64 / d);
            assert_eq!(dec.head.out_channels, 2);
            assert_eq!(dec.output.out_channels, 1);
        }
    }
    for d in [0, 3, 32, 64] {
        assert!(SinNet::<f32>::new(d).is_err(), "divisor {d}");
    }
}

#[test]
fn initialization() {
    let mut a = SinNet::<f32>::new(1).unwrap();
    let mut b = SinNet::<f32>::new(1).unwrap();
    a.init_weights(11);
    b.init_weights(11);
    assert_eq!(to_bytes(&a), to_bytes(&b));
    b.init_weights(12);
    assert_ne!(to_bytes(&a), to_bytes(&b));

    let mut checked = 0;
    for p in a.params().iter() {
        let s = p.value.shape();
        if p.name.ends_with(".bias") {
            assert!(p.value.data().iter().all(|&v| v == 0.0));
            continue;
        }
        let fan_in = s.channels * s.height * s.width;
        if fan_in < 256 || p.value.len() < 1000 {
            continue;
        }
        let n = p.value.len() as f64;
        let mean = p.value.sum() / n;
        let var = p.value.data().iter().map(|&v| (f64::from(v) - mean).powi(2)).sum::<f64>() / n;
        let expected = (2.0 / fan_in as f64).sqrt();
        assert!((var.sqrt() / expected - 1.0).abs() < 0.1, "{}: std {} vs {expected}", p.name, var.sqrt());
        checked += 1;
    }
    assert!(checked > 20);

    // both decoders start identical
    for p in a.params().iter().filter(|p| p.name.starts_with("core.")) {
        let twin = a.params().find(&p.name.replacen("core.", "delta.", 1)).unwrap();
        assert_eq!(a.params().get(twin).value, p.value, "{}", p.name);
    }
}

fn small_dataset(count: usize, size: usize, seed: u64) -> Vec<Sample<f32>> {
    synth::generate(count, seed, size)
        .iter()
        .map(|s| {
            let m = rasterize(&s.points, size, size).unwrap();
            Sample::from_image(&s.image, &m.core, &m.delta).unwrap()
        })
        .collect()
}

fn branch_params(net: &SinNet<f32>, prefix: &str) -> Vec<(String, Tensor<f32>)> {
    net.params()
        .iter()
        .filter_map(|p| p.name.strip_prefix(prefix).map(|n| (n.to_string(), p.value.clone())))
        .collect()
}

#[test]
fn swapping_masks_swaps_branches() {
    let data = small_dataset(3, 32, 4);
    let swapped: Vec<Sample<f32>> = data
        .iter()
        .map(|s| Sample {
            image: s.image.clone(),
            core: s.delta.clone(),
            delta: s.core.clone(),
        })
        .collect();
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 2,
        epochs: 3,
        width_divisor: 16,
        loss_reduction: LossReduction::ImageMean,
        seed: 9,
        ..TrainConfig::default()
    };
    let mut a = SinNet::<f32>::new(16).unwrap();
    a.init_weights(1);
    let mut b = a.clone();
    train(&mut a, &data, &config).unwrap();
    train(&mut b, &swapped, &config).unwrap();
    assert_eq!(branch_params(&a, "core."), branch_params(&b, "delta."));
    assert_eq!(branch_params(&a, "delta."), branch_params(&b, "core."));
    // and the branches did learn something different
    assert_ne!(branch_params(&a, "core."), branch_params(&a, "delta."));
}

#[test]
fn encoder_receives_both_branch_gradients() {
    let data = small_dataset(1, 32, 6);
    let mut net = SinNet::<f32>::new(16).unwrap();
    net.init_weights(2);
    let s = &data[0];
    let grads = |w: LossWeights| {
        batch_gradients(&net, s.image.clone(), s.core.clone(), s.delta.clone(), w, None).unwrap().1
    };
    let both = grads(LossWeights::default());
    let core_only = grads(LossWeights { core: 1.0, delta: 0.0 });
    let id = net.params().find("enc1.a.weight").unwrap();
    assert_ne!(both.param(id), core_only.param(id));
    let delta_head = net.params().find("delta.out.weight").unwrap();
    assert!(core_only.param(delta_head).unwrap().data().iter().all(|&g| g == 0.0));
}

#[test]
fn zero_learning_rate_leaves_parameters() {
    let data = small_dataset(2, 32, 1);
    let mut net = SinNet::<f32>::new(16).unwrap();
    net.init_weights(3);
    let before = to_bytes(&net);
    let config = TrainConfig {
        learning_rate: 0.0,
        epochs: 1,
        width_divisor: 16,
        ..TrainConfig::default()
    };
    let log = train(&mut net, &data, &config).unwrap();
    assert_eq!(log.epochs.len(), 1);
    assert_eq!(to_bytes(&net), before);
}

#[test]
fn initial_loss_with_zeroed_output_layer_is_pixels_ln2() {
    let data = small_dataset(2, 48, 2);
    let mut net = SinNet::<f32>::new(16).unwrap();
    net.init_weights(0);
    for name in ["core.out.weight", "delta.out.weight"] {
        let id = net.params().find(name).unwrap();
        net.params_mut().get_mut(id).value.fill(0.0);
    }
    let pixels = 2 * data.len() * 48 * 48;
    let loss = evaluate_loss(&net, &data).unwrap();
    assert!((loss / (pixels as f64 * std::f64::consts::LN_2) - 1.0).abs() < 1e-6, "{loss}");
}

#[test]
fn training_is_reproducible() {
    let data = small_dataset(3, 32, 8);
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 2,
        epochs: 2,
        width_divisor: 16,
        loss_reduction: LossReduction::ImageMean,
        seed: 5,
        ..TrainConfig::default()
    };
    let run = || {
        let mut net = SinNet::<f32>::new(16).unwrap();
        net.init_weights(5);
        let log = train(&mut net, &data, &config).unwrap();
        (to_bytes(&net), log)
    };
    let (a, la) = run();
    let (b, lb) = run();
    assert_eq!(a, b);
    assert_eq!(la, lb);
}

#[test]
fn odd_image_pads_and_crops() {
    let img = GrayImage::from_vec(355, 390, (0..355 * 390).map(|i| ((i * 37) % 255) as f32 / 255.0).collect()).unwrap();
    let (x, record) = pad_image::<f32>(&img).unwrap();
    assert_eq!(x.shape(), Shape::new(1, 1, 400, 368));
    let mut net = SinNet::<f32>::new(16).unwrap();
    net.init_weights(4);
    let (c, d) = net.predict(&x).unwrap();
    for m in [&c, &d] {
        assert_eq!(m.shape(), x.shape());
        assert!(m.data().iter().all(|&p| p > 0.0 && p < 1.0));
        assert_eq!(crop_output(m, record).unwrap().shape(), Shape::new(1, 1, 390, 355));
    }
    let (cm, dm) = net.probability_maps(&img).unwrap();
    assert_eq!((cm.width(), cm.height(), dm.width(), dm.height()), (355, 390, 355, 390));
}

#[test]
fn save_load_forward_is_bit_identical() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.sinnet");
    let mut net = SinNet::<f32>::new(8).unwrap();
    net.init_weights(21);
    save_model(&net, &path).unwrap();
    let back = load_model(&path).unwrap();
    assert_eq!(to_bytes(&back), std::fs::read(&path).unwrap());
    let x = small_dataset(1, 48, 3).remove(0).image;
    assert_eq!(net.predict(&x).unwrap(), back.predict(&x).unwrap());
    assert!(from_bytes(&std::fs::read(&path).unwrap()[..100]).is_err());
}

#[test]
fn overfits_a_single_image() {
    let data = small_dataset(1, 96, 1);
    let config = TrainConfig {
        learning_rate: 0.01,
        batch_size: 1,
        epochs: 300,
        width_divisor: 8,
        loss_reduction: LossReduction::ImageMean,
        seed: 4,
        ..TrainConfig::default()
    };
    let mut net = SinNet::<f32>::new(8).unwrap();
    net.init_weights(4);
    train(&mut net, &data, &config).unwrap();
    let per_pixel = evaluate_loss(&net, &data).unwrap() / (2 * 96 * 96) as f64;
    assert!(per_pixel < 0.05, "per-pixel BCE {per_pixel}");
}
