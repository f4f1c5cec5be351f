use rsa_core::probe::*;
use rsa_core::tensor::NeighborhoodSpec;
use rsa_core::Error;

fn data_cfg(per_class: usize) -> DatasetConfig {
    DatasetConfig {
        seed: 3,
        per_class,
        time: 4,
        height: 8,
        width: 8,
    }
}

fn probe_cfg(transform: TransformKind) -> ProbeConfig {
    ProbeConfig {
        transform,
        channels: 4,
        queries: 2,
        latent: 2,
        groups: 2,
        window: NeighborhoodSpec::new(3, 3, 3).unwrap(),
        normalize: true,
    }
}

fn opts(epochs: usize, lr: f64) -> TrainOptions {
    TrainOptions {
        epochs,
        lr,
        batch_size: 4,
        seed: 1,
        checkpoint: None,
    }
}

#[test]
fn dataset_is_balanced_paired_and_deterministic() {
    let d = gen_dataset(&data_cfg(10)).unwrap();
    for dir in Direction::ALL {
        assert_eq!(d.clips().filter(|c| c.label == dir).count(), 10);
        assert_eq!(d.train.iter().filter(|c| c.label == dir).count(), 8);
    }
    for c in d.clips() {
        let partner = d.clips().find(|o| o.pair == c.pair && o.label != c.label).unwrap();
        assert_eq!(partner.label, c.label.reversed());
        assert_eq!(c.data.reverse_time().data(), partner.data.data());
    }
    let again = gen_dataset(&data_cfg(10)).unwrap();
    assert!(d
        .clips()
        .zip(again.clips())
        .all(|(a, b)| a.data == b.data && a.label == b.label && a.pair == b.pair));
    let other = gen_dataset(&DatasetConfig {
        seed: 4,
        ..data_cfg(10)
    })
    .unwrap();
    assert!(d.clips().zip(other.clips()).any(|(a, b)| a.data != b.data));
}

#[test]
fn clips_hold_one_moving_bar() {
    let d = gen_dataset(&data_cfg(6)).unwrap();
    for c in d.clips() {
        let s = c.data.shape();
        assert_eq!(s.channels, INPUT_CHANNELS);
        let frame_mass: Vec<f64> = (0..s.time)
            .map(|t| {
                (0..s.height * s.width)
                    .map(|p| c.data.row(0, t * s.height * s.width + p)[0])
                    .sum()
            })
            .collect();
        assert!(frame_mass[0] > 0.0);
        assert!(frame_mass.iter().all(|&m| m == frame_mass[0]));
        assert!(c.data.data().chunks(2).all(|r| r[1] == 1.0));
    }
}

#[test]
fn wraparound_geometry_is_rejected() {
    assert!(gen_dataset(&DatasetConfig { time: 3, ..data_cfg(2) }).is_err());
    assert!(gen_dataset(&DatasetConfig {
        height: 7,
        ..data_cfg(2)
    })
    .is_err());
    assert!(gen_dataset(&DatasetConfig { time: 9, ..data_cfg(2) }).is_err());
    assert!(gen_dataset(&DatasetConfig {
        per_class: 0,
        ..data_cfg(2)
    })
    .is_err());
}

#[test]
fn zero_learning_rate_leaves_parameters_unchanged() {
    let d = gen_dataset(&data_cfg(3)).unwrap();
    let (model, report) = train(probe_cfg(TransformKind::Rsa), &d, &opts(2, 0.0)).unwrap();
    assert_eq!(model, ProbeModel::new(probe_cfg(TransformKind::Rsa), 1).unwrap());
    assert_eq!(report.epochs.len(), 2);
}

#[test]
fn training_is_reproducible() {
    let d = gen_dataset(&data_cfg(3)).unwrap();
    let a = train(probe_cfg(TransformKind::Rsa), &d, &opts(2, 0.3)).unwrap();
    let b = train(probe_cfg(TransformKind::Rsa), &d, &opts(2, 0.3)).unwrap();
    assert_eq!(a.0, b.0);
    assert_eq!(
        serde_json::to_string(&a.1).unwrap(),
        serde_json::to_string(&b.1).unwrap()
    );
    let m = a.1.final_metrics().unwrap();
    assert!((0.0..=1.0).contains(&m.train_acc) && (0.0..=1.0).contains(&m.test_acc));
}

#[test]
fn divergence_is_reported() {
    let d = gen_dataset(&data_cfg(3)).unwrap();
    let r = train(probe_cfg(TransformKind::Involution), &d, &opts(3, 1e300));
    assert!(matches!(r, Err(Error::Diverged { .. })), "{r:?}");
    assert!(train(probe_cfg(TransformKind::Rsa), &d, &opts(1, -1.0)).is_err());
    assert!(train(
        probe_cfg(TransformKind::Rsa),
        &d,
        &TrainOptions {
            batch_size: 0,
            ..opts(1, 0.1)
        }
    )
    .is_err());
}

#[test]
fn content_attention_is_blind_to_reversal() {
    let d = gen_dataset(&data_cfg(5)).unwrap();
    let clips: Vec<Clip> = d.clips().cloned().collect();
    for seed in 0..3 {
        let model = ProbeModel::new(probe_cfg(TransformKind::SaContent), seed).unwrap();
        let r = paired_logit_test(&model, &clips).unwrap();
        assert_eq!(r.pairs, 10);
        assert!(r.max_gap <= 1e-10, "{}", r.max_gap);
    }
    for kind in [TransformKind::SaFull, TransformKind::Rsa] {
        let model = ProbeModel::new(probe_cfg(kind), 0).unwrap();
        assert!(paired_logit_test(&model, &clips).unwrap().max_gap > 1e-8, "{kind}");
    }
}

#[test]
fn checkpoint_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.json");
    for kind in TransformKind::ALL {
        let model = ProbeModel::new(probe_cfg(kind), 9).unwrap();
        let manifest = save(&model, &path).unwrap();
        assert_eq!(manifest.tensors.len(), model.tensors().len());
        assert_eq!(load(&path).unwrap(), model);
    }
}

#[test]
fn tampered_checkpoint_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("probe.json");
    let manifest = save(&ProbeModel::new(probe_cfg(TransformKind::Rsa), 9).unwrap(), &path).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    let blob = dir.path().join(&manifest.blob);
    let bytes = std::fs::read(&blob).unwrap();

    std::fs::write(&blob, &bytes[..bytes.len() - 8]).unwrap();
    assert!(load(&path).is_err());
    std::fs::write(&blob, [bytes.as_slice(), &[0u8; 8]].concat()).unwrap();
    assert!(load(&path).is_err());
    std::fs::write(&blob, &bytes).unwrap();

    let mut bad = manifest.clone();
    bad.tensors[1].shape = vec![1, 1];
    std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(load(&path).is_err());
    let mut bad = manifest.clone();
    bad.tensors.swap(1, 2);
    std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(load(&path).is_err());
    let mut bad = manifest.clone();
    bad.format = "other/1".into();
    std::fs::write(&path, serde_json::to_string(&bad).unwrap()).unwrap();
    assert!(load(&path).is_err());
    std::fs::write(&path, text.replace("\"seed\"", "\"extra\": 1, \"seed\"")).unwrap();
    assert!(load(&path).is_err());
}

#[test]
fn dump_writes_every_kernel_for_both_clips() {
    let d = gen_dataset(&data_cfg(2)).unwrap();
    let clip = &d.train[0].data;
    let dir = tempfile::tempdir().unwrap();
    for kind in TransformKind::ALL {
        let cfg = probe_cfg(kind);
        let out = dir.path().join(kind.name());
        let model = ProbeModel::new(cfg, 2).unwrap();
        let dumped = dump_kernels(&model, clip, [1, 4, 4], &out).unwrap();
        let expected = cfg.kernel_heads() * cfg.kernel_kinds().len() * 2;
        assert_eq!(dumped.len(), expected);
        assert_eq!(std::fs::read_dir(&out).unwrap().count(), expected);
        for k in &dumped {
            let parsed = parse_kernel_csv(&std::fs::read_to_string(&k.path).unwrap()).unwrap();
            assert_eq!(parsed, k.values);
            assert_eq!(parsed.len(), 27);
        }
    }
    assert!(dump_kernels(
        &ProbeModel::new(probe_cfg(TransformKind::Rsa), 2).unwrap(),
        clip,
        [4, 0, 0],
        dir.path()
    )
    .is_err());
}

#[test]
fn dumped_content_attention_kernels_sum_to_one() {
    let d = gen_dataset(&data_cfg(2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let model = ProbeModel::new(probe_cfg(TransformKind::SaContent), 2).unwrap();
    for k in dump_kernels(&model, &d.train[0].data, [1, 4, 4], dir.path()).unwrap() {
        let v = parse_kernel_csv(&std::fs::read_to_string(&k.path).unwrap()).unwrap();
        assert!((v.iter().sum::<f64>() - 1.0).abs() <= 1e-6);
    }
}

#[test]
fn basic_kernel_fixed_relational_kernel_varies_under_reversal() {
    let d = gen_dataset(&data_cfg(2)).unwrap();
    let clip = &d.train[0].data;
    let dir = tempfile::tempdir().unwrap();
    let model = ProbeModel::new(probe_cfg(TransformKind::Rsa), 5).unwrap();
    let dumped = dump_kernels(&model, clip, [1, 4, 4], dir.path()).unwrap();
    let get = |tag: &str, head: usize, kind: &str| {
        dumped
            .iter()
            .find(|k| k.clip == tag && k.head == head && k.kind == kind)
            .unwrap()
            .values
            .clone()
    };
    for head in 0..2 {
        assert_eq!(get("original", head, "basic"), get("reversed", head, "basic"));
        let (a, b) = (get("original", head, "relational"), get("reversed", head, "relational"));
        assert!(a.iter().zip(&b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) > 1e-6);
    }
}

#[test]
fn clip_gradient_matches_finite_differences() {
    let d = gen_dataset(&data_cfg(2)).unwrap();
    let clip = &d.train[1];
    for kind in TransformKind::ALL {
        let model = ProbeModel::new(probe_cfg(kind), 6).unwrap();
        let g = model.clip_grad(clip).unwrap();
        let names: Vec<&str> = model.tensors().iter().map(|(n, _)| *n).collect();
        assert_eq!(g.grads.len(), names.len());
        let eps = 1e-5;
        for (t, name) in names.iter().enumerate() {
            let len = g.grads[t].data().len();
            for i in (0..len).step_by((len / 5).max(1)) {
                let mut plus = model.clone();
                plus.tensors_mut()[t].data_mut()[i] += eps;
                let mut minus = model.clone();
                minus.tensors_mut()[t].data_mut()[i] -= eps;
                let numeric = (plus.clip_grad(clip).unwrap().loss - minus.clip_grad(clip).unwrap().loss) / (2.0 * eps);
                let analytic = g.grads[t].data()[i];
                let err = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
                assert!(err <= 1e-4, "{kind} {name}[{i}]: {analytic} vs {numeric}");
            }
        }
    }
}

#[test]
fn probe_config_parsing() {
    for kind in TransformKind::ALL {
        assert_eq!(kind.name().parse::<TransformKind>().unwrap(), kind);
    }
    assert!("mlp".parse::<TransformKind>().is_err());
    let mut bad = probe_cfg(TransformKind::Rsa);
    bad.queries = 3;
    assert!(ProbeModel::new(bad, 0).is_err());
}
