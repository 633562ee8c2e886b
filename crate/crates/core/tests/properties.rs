use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use fsdehaze::dataset::{generate_pairs, read_manifest, synthetic_scene, PairDataset, SynthesisRecipe, MANIFEST_FILE};
use fsdehaze::discriminator::MultiScaleDiscriminator;
use fsdehaze::extractor::PerceptualExtractor;
use fsdehaze::generator::{FeatureMap, GeneratorNet};
use fsdehaze::haze::{transmission_from_depth, DepthMap};
use fsdehaze::losses::{
    adversarial_loss, discriminator_loss, feature_reg_loss, gram, perceptual_loss, style_loss, AdversarialVariant,
};
use fsdehaze::metrics::detection::{average_precision, DetectionRecord};
use fsdehaze::metrics::{psnr, ssim, SsimConfig};
use fsdehaze::nn::{Graph, L1Reduction};
use fsdehaze::trainer::{build_extractor, train_on, train_step, TrainConfig, TrainState, METRICS_FILE};
use fsdehaze::{ImageTensor, Tensor};

fn image_from(seed: u64, h: usize, w: usize) -> ImageTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageTensor::new(h, w, 3, (0..h * w * 3).map(|_| rng.random::<f32>()).collect()).unwrap()
}

fn features(seed: u64, c: usize, h: usize, w: usize) -> FeatureMap<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    FeatureMap {
        layer_id: "f".into(),
        data: Tensor::randn([1, c, h, w], 1.0, &mut rng),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn gram_is_symmetric_and_positive_semidefinite(seed in any::<u64>(), c in 1usize..6, h in 1usize..6, w in 1usize..6) {
        let g = gram(&features(seed, c, h, w)).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 1);
        for i in 0..c {
            for j in 0..c {
                prop_assert_eq!(g.at(i, j), g.at(j, i));
            }
        }
        for _ in 0..5 {
            let v: Vec<f64> = (0..c).map(|_| rng.random_range(-1.0..1.0)).collect();
            let q: f64 = (0..c).flat_map(|i| (0..c).map(move |j| (i, j))).map(|(i, j)| v[i] * g.at(i, j) * v[j]).sum();
            prop_assert!(q >= -1e-12, "vᵀGv = {}", q);
        }
    }

    #[test]
    fn feature_regularization_is_symmetric_and_non_negative(seed in any::<u64>()) {
        let (a, b) = (features(seed, 3, 4, 4), features(seed ^ 7, 3, 4, 4));
        for r in [L1Reduction::Sum, L1Reduction::Mean] {
            let ab = feature_reg_loss(&a, &b, r).unwrap();
            prop_assert!(ab >= 0.0);
            prop_assert_eq!(ab, feature_reg_loss(&b, &a, r).unwrap());
        }
    }

    #[test]
    fn score_losses_have_the_expected_signs(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let maps = |rng: &mut ChaCha8Rng| [4usize, 2, 1].map(|s| Tensor::<f64>::rand_uniform([1, 1, s, s], 0.0, 1.0, rng)).to_vec();
        let (fake, real) = (maps(&mut rng), maps(&mut rng));
        prop_assert!(adversarial_loss(&fake, AdversarialVariant::Saturating) <= 0.0);
        prop_assert!(adversarial_loss(&fake, AdversarialVariant::NonSaturating) >= 0.0);
        prop_assert!(discriminator_loss(&fake, &real) >= 0.0);
    }

    #[test]
    fn psnr_is_symmetric_and_falls_with_larger_error(seed in any::<u64>(), e1 in 0.001f32..0.2, extra in 0.001f32..0.2) {
        let x = image_from(seed, 6, 5);
        let y = image_from(seed ^ 3, 6, 5);
        prop_assert_eq!(psnr(&x, &y, 1.0).unwrap(), psnr(&y, &x, 1.0).unwrap());
        let base = ImageTensor::filled(6, 5, 3, 0.5);
        let shifted = |e: f32| ImageTensor::filled(6, 5, 3, 0.5 + e);
        prop_assert!(psnr(&base, &shifted(e1 + extra), 1.0).unwrap() <= psnr(&base, &shifted(e1), 1.0).unwrap());
    }

    #[test]
    fn ssim_is_one_on_itself_and_symmetric(seed in any::<u64>(), windowed in any::<bool>()) {
        let cfg = if windowed { SsimConfig::default().windowed(5) } else { SsimConfig::default() };
        let x = image_from(seed, 9, 8);
        let y = image_from(seed ^ 5, 9, 8);
        prop_assert!((ssim(&x, &x, &cfg).unwrap() - 1.0).abs() < 1e-12);
        prop_assert!((ssim(&x, &y, &cfg).unwrap() - ssim(&y, &x, &cfg).unwrap()).abs() < 1e-12);
    }

    #[test]
    fn ap_ignores_order_preserving_score_transforms(seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let bx = |rng: &mut ChaCha8Rng| {
            let (x, y) = (rng.random_range(0..5) as f64 * 3.0, rng.random_range(0..5) as f64 * 3.0);
            [x, y, x + rng.random_range(2..8) as f64, y + rng.random_range(2..8) as f64]
        };
        let truths: Vec<_> = (0..rng.random_range(1..6))
            .map(|_| DetectionRecord::new("i", "c", None, bx(&mut rng)).unwrap())
            .collect();
        let preds: Vec<_> = (0..rng.random_range(0..15))
            .map(|_| DetectionRecord::new("i", "c", Some(rng.random_range(0..6) as f64 / 6.0), bx(&mut rng)).unwrap())
            .collect();
        let warped: Vec<_> = preds
            .iter()
            .map(|p| DetectionRecord { score: p.score.map(|s| (3.0 * s).exp() - 0.5), ..p.clone() })
            .collect();
        prop_assert_eq!(average_precision(&preds, &truths, 0.5).unwrap(), average_precision(&warped, &truths, 0.5).unwrap());
    }

    #[test]
    fn transmission_decreases_in_beta(depth in 0.01f32..1.0, b1 in 0.1f64..3.0, db in 0.01f64..1.0) {
        let d = DepthMap::new(1, 1, vec![depth]).unwrap();
        let t1 = transmission_from_depth(&d, b1).unwrap().data()[0];
        let t2 = transmission_from_depth(&d, b1 + db).unwrap().data()[0];
        prop_assert!(t2 < t1);
    }
}

#[test]
fn perceptual_and_style_are_non_negative() {
    let ex = PerceptualExtractor::<f32>::random(2);
    for seed in 0..5 {
        let (a, b) = (image_from(seed, 16, 16), image_from(seed + 100, 16, 16));
        assert!(perceptual_loss(&ex, &a, &b).unwrap() >= 0.0);
        assert!(style_loss(&ex, &a, &b).unwrap() >= 0.0);
    }
}

#[test]
fn stored_hazy_images_match_resynthesis_within_quantization() {
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("src");
    let depth_dir = dir.path().join("depth");
    std::fs::create_dir_all(&src).unwrap();
    std::fs::create_dir_all(&depth_dir).unwrap();
    for i in 0..4u64 {
        synthetic_scene(i, 20, 24).save_png(&src.join(format!("s{i}.png"))).unwrap();
        // Depth as a grey ramp image with the same stem.
        let ramp: Vec<f32> = (0..20 * 24).map(|k| ((k % 24) as f32 + 1.0) / 25.0).collect();
        ImageTensor::new(20, 24, 1, ramp).unwrap().save_png(&depth_dir.join(format!("s{i}.png"))).unwrap();
    }
    for (recipe, depth) in [(SynthesisRecipe::remote_sensing(5), None), (SynthesisRecipe::indoor(6), Some(depth_dir.as_path()))] {
        let out = dir.path().join(format!("{:?}", recipe.mode));
        generate_pairs(&src, depth, &recipe, &out, 4).unwrap();
        let records = read_manifest(&out.join(MANIFEST_FILE)).unwrap();
        assert_eq!(records.len(), 4);
        for r in records {
            let clean = ImageTensor::load(&out.join("clean").join(&r.name)).unwrap();
            let stored = ImageTensor::load(&out.join("hazy").join(&r.name)).unwrap();
            let dmap = depth.map(|d| fsdehaze::dataset::load_depth(&d.join(&r.name)).unwrap());
            let again = r.params.apply(&clean, dmap.as_ref()).unwrap();
            let worst = again.data().iter().zip(stored.data()).map(|(a, b)| (a - b).abs()).fold(0.0f32, f32::max);
            assert!(worst <= 1.0 / 255.0 + 1e-6, "{}: {worst}", r.name);
        }
    }
}

#[test]
fn every_generator_parameter_receives_gradient() {
    let net = GeneratorNet::<f32>::new(4);
    let x = image_from(1, 16, 16).to_tensor::<f32>();
    let target = image_from(2, 16, 16).to_tensor::<f32>();
    let mut g = Graph::new();
    let bound = net.params.bind(&mut g, true);
    let xv = g.input(x, false);
    let (out, _) = net.forward_graph(&mut g, &bound, xv).unwrap();
    let t = g.input(target, false);
    let loss = g.mean_sq_diff(out, t);
    let mut grads = g.backward(loss);
    let per_param = net.params.collect_grads(&mut grads, &bound);
    for (i, gr) in per_param.iter().enumerate() {
        assert!(gr.all_finite(), "{} has non-finite gradient", net.params.name(i));
        assert!(gr.max_abs() > 0.0, "{} receives no gradient", net.params.name(i));
    }
}

#[test]
fn discriminator_gradients_reach_parameters_and_candidate() {
    let d = MultiScaleDiscriminator::<f32>::new(5);
    // At 64×64 the coarsest sub-network normalizes a 1×1 map, which carries no gradient.
    let hazy = image_from(3, 128, 128).to_tensor::<f32>();
    let cand = image_from(4, 128, 128).to_tensor::<f32>();
    let mut g = Graph::new();
    let bound = d.params.bind(&mut g, true);
    let h = g.input(hazy, false);
    let c = g.input(cand, true);
    let hp = fsdehaze::discriminator::pyramid_of(&mut g, h);
    let cp = fsdehaze::discriminator::pyramid_of(&mut g, c);
    let scores = d.score_graph(&mut g, &bound, &hp, &cp).unwrap();
    let loss = fsdehaze::losses::discriminator_graph(&mut g, &scores, &scores);
    let mut grads = g.backward(loss);
    let gc = grads.get(c).unwrap();
    assert!(gc.all_finite() && gc.max_abs() > 0.0);
    for (i, gr) in d.params.collect_grads(&mut grads, &bound).iter().enumerate() {
        assert!(gr.all_finite() && gr.max_abs() > 0.0, "{} receives no gradient", d.params.name(i));
    }
}

/// Instance normalization couples every position through its statistics, so cells outside the
/// receptive field still move slightly; the edit's effect must be concentrated inside it.
#[test]
fn full_scale_scores_respond_locally_to_a_patch_edit() {
    let d = MultiScaleDiscriminator::<f64>::new(6);
    let hazy = image_from(5, 128, 128);
    let cand = image_from(6, 128, 128);
    let mut edited = cand.data().to_vec();
    let (r0, c0) = (48usize, 64usize);
    for r in r0..r0 + 16 {
        for c in c0..c0 + 16 {
            for ch in 0..3 {
                edited[(r * 128 + c) * 3 + ch] = 1.0 - edited[(r * 128 + c) * 3 + ch];
            }
        }
    }
    let edited = ImageTensor::new(128, 128, 3, edited).unwrap();
    let before = &d.score(&hazy, &cand).unwrap()[0];
    let after = &d.score(&hazy, &edited).unwrap()[0];
    // Output cell i sees input rows 16i − 15 ..= 16i + 30.
    let hit = |i: usize, lo: usize| 16 * i + 30 >= lo && 16 * i <= lo + 15 + 15;
    let (mut inside, mut outside) = (0.0f64, 0.0f64);
    for i in 0..before.height() {
        for j in 0..before.width() {
            let delta = (before.at(0, 0, i, j) - after.at(0, 0, i, j)).abs();
            if hit(i, r0) && hit(j, c0) {
                inside = inside.max(delta);
            } else {
                outside = outside.max(delta);
            }
        }
    }
    assert!(inside > 0.0);
    assert!(outside < 0.25 * inside, "inside {inside:e}, outside {outside:e}");
}

fn supervised_config() -> TrainConfig {
    TrainConfig {
        gamma1: 0.0,
        train_discriminator: false,
        patch_size: 16,
        batch_size: 1,
        checkpoint_interval: 0,
        ..TrainConfig::default()
    }
}

#[test]
fn supervised_overfit_loss_falls_window_by_window() {
    let config = TrainConfig {
        patch_size: 8,
        ..supervised_config()
    };
    let clean = synthetic_scene(9, 8, 8);
    let hazy = SynthesisRecipe::remote_sensing(1).sample("x").apply(&clean, None).unwrap();
    let data = PairDataset::from_pairs(vec!["x".into()], vec![hazy], vec![clean]).unwrap();
    let ex = build_extractor(&config).unwrap();
    let mut state = TrainState::new(&config);
    let batch = data.loader(8, 1, 0).unwrap().batch_at(0);
    let totals: Vec<f64> = (0..600)
        .map(|_| train_step(&mut state, &batch, &config, &ex).unwrap().losses.total)
        .collect();
    let means: Vec<f64> = totals.chunks(200).map(|w| w.iter().sum::<f64>() / w.len() as f64).collect();
    assert!(means.windows(2).all(|m| m[1] <= m[0]), "window means {means:?}");
}

#[test]
fn logged_learning_rate_follows_the_schedule() {
    let config = TrainConfig {
        max_iterations: 9,
        lr_step: 3,
        ..supervised_config()
    };
    let data = PairDataset::from_pairs(
        vec!["a".into()],
        vec![synthetic_scene(1, 16, 16)],
        vec![synthetic_scene(2, 16, 16)],
    )
    .unwrap();
    let dir = tempfile::tempdir().unwrap();
    train_on(&config, &data, dir.path(), None).unwrap();
    let log = std::fs::read_to_string(dir.path().join(METRICS_FILE)).unwrap();
    let mut rows = 0;
    for line in log.lines().skip(1) {
        let f: Vec<&str> = line.split('\t').collect();
        let it: u64 = f[0].parse().unwrap();
        let lr: f64 = f[7].parse().unwrap();
        assert_eq!(lr, config.lr_at(it), "iteration {it}");
        rows += 1;
    }
    assert_eq!(rows, 9);
}
