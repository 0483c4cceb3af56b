use proptest::prelude::*;
use st3d::data::{
    center_clips, make_batch, synthetic_dataset, AugmentConfig, AugmentedData, ClipSample, CropPosition, FixedClips,
    Provenance, SyntheticSpec,
};
use st3d::layers::softmax_cross_entropy;
use st3d::train::{
    argmax, evaluate_clips, fit, load_checkpoint, run_epoch, save_checkpoint, train_epoch, PlateauSchedule, Sgd,
    TrainConfig, TrainState, MAX_LR_DROPS,
};
use st3d::{ArchSpec, Network, Rng, Tensor};

fn tiny(input: [usize; 4], classes: usize) -> ArchSpec {
    ArchSpec::resnet18(classes)
        .with_stage_channels([4, 8, 8, 8])
        .with_input(input)
}

fn random_clip(shape: [usize; 4], label: usize, rng: &mut Rng) -> ClipSample {
    ClipSample {
        tensor: Tensor::from_fn(&shape, |_| rng.normal() as f32),
        label,
        provenance: Provenance {
            video: format!("r{label}"),
            start: 0,
            position: CropPosition::Center,
            scale: 1.0,
            flipped: false,
        },
    }
}

fn trainable_snapshot(net: &Network<f32>) -> Vec<(String, Vec<f32>)> {
    net.parameters()
        .into_iter()
        .map(|(n, _, t)| (n, t.data().to_vec()))
        .collect()
}

#[test]
fn repeated_sample_loss_strictly_decreases() {
    let spec = tiny([3, 8, 32, 32], 4);
    let mut rng = Rng::new(2);
    let mut net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let clip = random_clip([3, 8, 32, 32], 2, &mut rng);
    let data = FixedClips {
        clips: vec![clip; 4],
        num_classes: 4,
    };
    let mut opt = Sgd::new(&net, 0.9, 0.001, true);
    let losses: Vec<f64> = (1..=5)
        .map(|e| train_epoch(&mut net, &data, &mut opt, 0.01, 4, &mut rng, e).unwrap().0)
        .collect();
    for w in losses.windows(2) {
        assert!(w[1] < w[0], "{losses:?}");
    }
}

#[test]
fn fixed_batch_loss_falls_tenfold_in_200_steps() {
    let spec = tiny([3, 4, 16, 16], 3);
    let mut rng = Rng::new(8);
    let mut net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let clips: Vec<ClipSample> = (0..6).map(|i| random_clip([3, 4, 16, 16], i % 3, &mut rng)).collect();
    let batch = make_batch(&clips).unwrap();
    let mut opt = Sgd::new(&net, 0.9, 0.001, true);
    let mut first = None;
    let mut last = f64::NAN;
    for _ in 0..200 {
        let logits = net.forward_train(&batch.clips).unwrap();
        let out = softmax_cross_entropy(&logits, &batch.labels).unwrap();
        first.get_or_insert(out.loss);
        last = out.loss;
        let grads = net.backward(&out.grad).unwrap();
        net.clear_cache();
        opt.step(&mut net, &grads, 0.01).unwrap();
    }
    let first = first.unwrap();
    assert!(last < 0.1 * first, "initial {first}, after 200 steps {last}");
}

#[test]
fn zero_learning_rate_leaves_parameters_bitwise() {
    let spec = tiny([3, 4, 16, 16], 3);
    let mut rng = Rng::new(4);
    let mut net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let clips: Vec<ClipSample> = (0..9).map(|i| random_clip([3, 4, 16, 16], i % 3, &mut rng)).collect();
    let before = trainable_snapshot(&net);
    let data = FixedClips {
        clips: clips.clone(),
        num_classes: 3,
    };
    let mut opt = Sgd::new(&net, 0.9, 0.001, true);
    let (train_loss, _) = train_epoch(&mut net, &data, &mut opt, 0.0, 9, &mut rng, 1).unwrap();
    assert_eq!(trainable_snapshot(&net), before);
    // single full batch: batch statistics differ from the running ones only through BN
    let (eval_loss, _) = evaluate_clips(&net, &clips, 9).unwrap();
    assert!(train_loss.is_finite() && eval_loss.is_finite());
}

#[test]
fn random_labels_give_chance_accuracy() {
    let spec = tiny([3, 4, 16, 16], 4);
    let mut rng = Rng::new(17);
    let net = Network::<f32>::build(&spec, &mut rng).unwrap();
    let n = 1600;
    let clips: Vec<ClipSample> = (0..n)
        .map(|_| {
            let label = rng.below(4);
            random_clip([3, 4, 16, 16], label, &mut rng)
        })
        .collect();
    let (_, acc) = evaluate_clips(&net, &clips, 64).unwrap();
    let sigma = (0.25 * 0.75 / n as f64).sqrt();
    assert!((acc - 0.25).abs() <= 3.0 * sigma, "accuracy {acc}");

    let mut hits = 0usize;
    for _ in 0..n {
        let logits: Vec<f64> = (0..4).map(|_| rng.normal()).collect();
        hits += (argmax(&logits) == rng.below(4)) as usize;
    }
    assert!((hits as f64 / n as f64 - 0.25).abs() <= 3.0 * sigma);
}

fn resume_fixture() -> (ArchSpec, TrainConfig, AugmentedData, Vec<ClipSample>) {
    let synth = SyntheticSpec {
        classes: 3,
        videos_per_class: 3,
        frames: 12,
        height: 24,
        width: 32,
        seed: 3,
    };
    let ds = synthetic_dataset(&synth).unwrap();
    let cfg = AugmentConfig {
        clip_len: 4,
        crop_size: 16,
        ..AugmentConfig::new(ds.mean)
    };
    let val = center_clips(&ds, 4, 16).unwrap();
    let data = AugmentedData::new(ds, cfg);
    let config = TrainConfig {
        lr0: 0.01,
        batch_size: 4,
        max_epochs: 4,
        plateau_patience: 1,
        seed: 99,
        ..Default::default()
    };
    (tiny([3, 4, 16, 16], 3), config, data, val)
}

#[test]
fn resume_reproduces_the_uninterrupted_run() {
    let (spec, config, data, val) = resume_fixture();
    let mut full = TrainState::<f32>::new(&spec, &config).unwrap();
    let straight = fit(&mut full, &config, &data, &val, |_, _| Ok(true)).unwrap();
    assert_eq!(straight.len(), 4);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("mid.ckpt");
    let mut first = TrainState::<f32>::new(&spec, &config).unwrap();
    let mut resumed_stats = Vec::new();
    for _ in 0..2 {
        resumed_stats.push(run_epoch(&mut first, &config, &data, &val).unwrap());
    }
    save_checkpoint(&first, &path).unwrap();
    drop(first);
    let mut second = load_checkpoint::<f32>(&path).unwrap();
    assert_eq!(second.epoch, 2);
    resumed_stats.extend(fit(&mut second, &config, &data, &val, |_, _| Ok(true)).unwrap());

    assert_eq!(straight, resumed_stats);
    let a: Vec<_> = full
        .net
        .state_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    let b: Vec<_> = second
        .net
        .state_tensors()
        .into_iter()
        .map(|(n, t)| (n, t.clone()))
        .collect();
    assert_eq!(a, b);
    assert_eq!(full.schedule, second.schedule);
}

#[test]
fn documented_schedule_traces() {
    let mut s = PlateauSchedule::new(0.1, 2, 0.0);
    assert!(!s.observe(1.0).unwrap());
    assert!(!s.observe(1.0).unwrap());
    assert!(s.observe(1.0).unwrap());
    assert!((s.lr() - 0.01).abs() < 1e-15);

    let mut s = PlateauSchedule::new(0.1, 1, 0.0);
    for _ in 0..103 {
        s.observe(5.0).unwrap();
    }
    assert_eq!(s.drops(), 3);
    assert_eq!(s.lr(), 0.1 / 1000.0);

    let mut s = PlateauSchedule::new(0.1, 3, 1e-4);
    for i in 0..500 {
        s.observe(10.0 - i as f64 * 0.01).unwrap();
    }
    assert_eq!(s.lr(), 0.1);
}

/// Independent re-statement of the plateau rule; returns drops after each call.
fn schedule_oracle(losses: &[f64], patience: usize, min_delta: f64) -> Vec<u32> {
    let (mut best, mut stall, mut drops) = (f64::INFINITY, 0usize, 0u32);
    losses
        .iter()
        .map(|&l| {
            if l < best - min_delta {
                best = l;
                stall = 0;
            } else {
                stall += 1;
                if stall == patience && drops < 3 {
                    drops += 1;
                    stall = 0;
                }
            }
            drops
        })
        .collect()
}

proptest! {
    #[test]
    fn lr_is_lr0_over_powers_of_ten(
        losses in prop::collection::vec(0.0f64..3.0, 1..120),
        patience in 1usize..6,
        min_delta in prop::sample::select(vec![0.0, 1e-4, 0.05]),
    ) {
        let mut s = PlateauSchedule::new(0.1, patience, min_delta);
        let expect = schedule_oracle(&losses, patience, min_delta);
        for (l, d) in losses.iter().zip(expect) {
            s.observe(*l).unwrap();
            prop_assert_eq!(s.drops(), d);
            prop_assert!(s.drops() <= MAX_LR_DROPS);
            prop_assert_eq!(s.lr(), 0.1 / 10f64.powi(s.drops() as i32));
        }
    }
}

#[test]
fn nan_validation_loss_is_an_error() {
    let mut s = PlateauSchedule::new(0.1, 2, 0.0);
    assert!(s.observe(f64::NAN).is_err());
    let (spec, config, _, _) = resume_fixture();
    assert!(TrainState::<f32>::new(
        &spec,
        &TrainConfig {
            lr0: f64::NAN,
            ..config
        }
    )
    .is_err());
}
