use drssl_core::evalkit::{prepare_split, PreparedSplit};
use drssl_core::losses::{evaluate, Backprop, Batch, Terms};
use drssl_core::model::{
    encoder_backward, encoder_forward, init_params, predictor_backward, predictor_forward,
    ModelConfig, ModelParams, Part, PROB_CLAMP,
};
use drssl_core::nn::{adam_step, Mode};
use drssl_core::shiftdata::{SplitMode, TaskSpec};
use drssl_core::trainer::{
    train, train_step, BatchSampler, StepRecord, TrainConfig, TrainHistory, Trainer, Variant,
};
use drssl_core::{Rng, Stream, Tensor};

fn tiny_task() -> TaskSpec {
    TaskSpec {
        channels: 2,
        window_len: 16,
        n_classes: 2,
        n_per_class: 24,
        phase_jitter: 0.5,
        ..TaskSpec::default()
    }
}

fn tiny_split(seed: u64) -> PreparedSplit {
    let task = TaskSpec {
        seed,
        ..tiny_task()
    };
    prepare_split(&task, &[0], &[1], SplitMode::Stratified, seed).unwrap()
}

fn tiny_cfg(variant: Variant, thre_a: f64, thre_rec: f64) -> TrainConfig {
    let mut cfg = TrainConfig {
        variant,
        thre_a,
        thre_rec,
        batch_l: 8,
        batch_u: 8,
        epochs: 100,
        ..TrainConfig::default()
    };
    cfg.adam.lr = 1e-3;
    cfg
}

fn hashes(p: &ModelParams) -> Vec<[u8; 32]> {
    Part::ALL.iter().map(|&part| p.part_hash(part)).collect()
}

fn changed(before: &[[u8; 32]], after: &[[u8; 32]], part: Part) -> bool {
    let i = Part::ALL.iter().position(|&p| p == part).unwrap();
    before[i] != after[i]
}

/// Median of the logged `l_a` and `l_rec` of a free-running trace, so that
/// thresholds at those values split the gates roughly in half.
fn median_thresholds(split: &PreparedSplit) -> (f64, f64) {
    let cfg = TrainConfig {
        epochs: 4,
        ..tiny_cfg(Variant::Full, f64::INFINITY, f64::INFINITY)
    };
    let (_, h) = train(
        &split.labeled,
        &split.unlabeled,
        &ModelConfig::tiny(),
        &cfg,
        None,
    )
    .unwrap();
    let med = |f: fn(&StepRecord) -> f64| {
        let mut v: Vec<f64> = h.records.iter().map(f).collect();
        v.sort_by(f64::total_cmp);
        v[v.len() / 2]
    };
    (med(|r| r.l_a), med(|r| r.l_rec))
}

pub fn gates_update_exactly_their_parameter_sets() {
    let split = tiny_split(3);
    let (mid_a, mid_rec) = median_thresholds(&split);
    let inf = f64::INFINITY;
    let settings = [
        (inf, inf),
        (-inf, -inf),
        (inf, -inf),
        (-inf, inf),
        (mid_a, mid_rec),
    ];
    for variant in Variant::ALL {
        for &(thre_a, thre_rec) in &settings {
            let cfg = tiny_cfg(variant, thre_a, thre_rec);
            let mut trainer = Trainer::new(
                &split.labeled,
                &split.unlabeled,
                &ModelConfig::tiny(),
                &cfg,
                None,
            )
            .unwrap();
            let (mut fired_s, mut fired_e) = (0, 0);
            for _ in 0..100 {
                let before = hashes(&trainer.params);
                let out = trainer.step().unwrap();
                let after = hashes(&trainer.params);
                let tag = format!("{variant} thre_a={thre_a} thre_rec={thre_rec}");
                assert_eq!(
                    out.gate_s,
                    variant.adversarial() && out.report.l_a < thre_a,
                    "{tag}"
                );
                assert_eq!(
                    out.gate_e,
                    !variant.autoencoding() || out.report.l_rec < thre_rec,
                    "{tag}"
                );
                assert_eq!(
                    changed(&before, &after, Part::Discriminator),
                    out.gate_s,
                    "{tag}: discriminator"
                );
                assert_eq!(
                    changed(&before, &after, Part::DecoderL),
                    variant.autoencoding(),
                    "{tag}: decoder L"
                );
                assert_eq!(
                    changed(&before, &after, Part::DecoderU),
                    variant.autoencoding(),
                    "{tag}: decoder U"
                );
                assert_eq!(
                    changed(&before, &after, Part::Encoder),
                    out.gate_e,
                    "{tag}: encoder"
                );
                assert_eq!(
                    changed(&before, &after, Part::Predictor),
                    out.gate_e,
                    "{tag}: predictor"
                );
                fired_s += u32::from(out.gate_s);
                fired_e += u32::from(out.gate_e);
            }
            if (thre_a, thre_rec) == (mid_a, mid_rec) && variant == Variant::Full {
                assert!(
                    fired_s > 0 && fired_s < 100,
                    "discriminator gate fired {fired_s} times"
                );
                assert!(
                    fired_e > 0 && fired_e < 100,
                    "encoder gate fired {fired_e} times"
                );
            }
        }
    }
}

#[test]
fn closed_gates_freeze_their_parameters() {
    let split = tiny_split(5);
    let model = ModelConfig::tiny();
    let init = init_params(&model).unwrap();
    let cfg = tiny_cfg(Variant::Full, f64::NEG_INFINITY, f64::NEG_INFINITY);
    let (p, h) = train(&split.labeled, &split.unlabeled, &model, &cfg, None).unwrap();
    assert_eq!(h.gate_s_count, 0);
    assert_eq!(h.gate_e_count, 0);
    for part in [Part::Discriminator, Part::Encoder, Part::Predictor] {
        assert_eq!(p.part_hash(part), init.part_hash(part), "{part:?}");
    }
    for part in [Part::DecoderL, Part::DecoderU] {
        assert_ne!(p.part_hash(part), init.part_hash(part), "{part:?}");
    }
}

#[test]
fn open_gates_run_to_completion_with_finite_losses() {
    let split = tiny_split(6);
    let cfg = tiny_cfg(Variant::Full, f64::INFINITY, f64::INFINITY);
    let (_, h) = train(
        &split.labeled,
        &split.unlabeled,
        &ModelConfig::tiny(),
        &cfg,
        None,
    )
    .unwrap();
    assert_eq!(h.gate_s_count, h.steps());
    assert_eq!(h.gate_e_count, h.steps());
    assert!(h.records.iter().all(|r| [r.l_a, r.l_rec, r.l_con, r.l_y]
        .iter()
        .all(|v| v.is_finite())));
}

#[test]
fn parameter_sets_partition_all_parameters() {
    let p = init_params(&ModelConfig::tiny()).unwrap();
    let mut names: Vec<&str> = Part::ALL
        .iter()
        .flat_map(|&part| p.part(part))
        .map(|q| q.name.as_str())
        .collect();
    let total = names.len();
    names.sort_unstable();
    names.dedup();
    assert_eq!(names.len(), total);
    assert_eq!(total, p.all_params().len());
}

/// Counts gate firings from a history file using only the thresholds, the
/// variant's term set and the logged losses.
fn interpret_trace(
    jsonl: &str,
    variant: &str,
    thre_a: f64,
    thre_rec: f64,
) -> (u64, u64, Vec<(bool, bool)>) {
    let adversarial = variant == "full" || variant == "ly+la";
    let autoencoding = variant == "full" || variant == "ly+rec+con";
    let mut flags = Vec::new();
    for line in jsonl.lines() {
        let v: serde_json::Value = serde_json::from_str(line).unwrap();
        let l_a = v["l_a"].as_f64().unwrap();
        let l_rec = v["l_rec"].as_f64().unwrap();
        flags.push((
            adversarial && l_a < thre_a,
            !autoencoding || l_rec < thre_rec,
        ));
    }
    let s = flags.iter().filter(|f| f.0).count() as u64;
    let e = flags.iter().filter(|f| f.1).count() as u64;
    (s, e, flags)
}

pub fn gate_counters_match_trace_interpreter() {
    let split = tiny_split(8);
    let (mid_a, mid_rec) = median_thresholds(&split);
    for variant in Variant::ALL {
        let cfg = TrainConfig {
            epochs: 34,
            ..tiny_cfg(variant, mid_a, mid_rec)
        };
        let (_, h) = train(
            &split.labeled,
            &split.unlabeled,
            &ModelConfig::tiny(),
            &cfg,
            None,
        )
        .unwrap();
        assert!(h.steps() >= 100);
        let mut buf = Vec::new();
        h.write_jsonl(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let (s, e, flags) = interpret_trace(&text, variant.name(), mid_a, mid_rec);
        assert_eq!((s, e), (h.gate_s_count, h.gate_e_count), "{variant}");
        let logged: Vec<(bool, bool)> = h.records.iter().map(|r| (r.gate_s, r.gate_e)).collect();
        assert_eq!(flags, logged, "{variant}");
        let steps: Vec<u64> = h.records.iter().map(|r| r.step).collect();
        assert_eq!(steps, (1..=h.steps()).collect::<Vec<_>>());
    }
}

pub fn hand_counted_ten_step_trace() {
    let records = [
        (-1.5, 0.4),
        (-0.2, 0.6),
        (-0.9, 0.5),
        (-1.1, 0.49),
        (-0.3, 0.2),
        (-2.0, 0.7),
        (-0.31, 0.51),
        (-0.1, 0.1),
        (-1.0, 0.5),
        (-0.5, 0.3),
    ];
    let mut h = TrainHistory::default();
    for (i, &(l_a, l_rec)) in records.iter().enumerate() {
        h.push(StepRecord {
            step: i as u64 + 1,
            l_a,
            l_rec,
            l_con: 0.0,
            l_y: 0.0,
            gate_s: l_a < -0.3,
            gate_e: l_rec < 0.5,
        });
    }
    // By hand: l_a < -0.3 at steps 1, 3, 4, 6, 7, 9, 10; l_rec < 0.5 at steps 1, 4, 5, 8, 10.
    assert_eq!(h.gate_s_count, 7);
    assert_eq!(h.gate_e_count, 5);
    let mut buf = Vec::new();
    h.write_jsonl(&mut buf).unwrap();
    let (s, e, _) = interpret_trace(&String::from_utf8(buf).unwrap(), "full", -0.3, 0.5);
    assert_eq!((s, e), (7, 5));
}

#[test]
fn training_is_deterministic() {
    let split = tiny_split(9);
    let cfg = TrainConfig {
        epochs: 10,
        ..tiny_cfg(Variant::Full, -0.3, 1.0)
    };
    let model = ModelConfig {
        keep_prob: 0.7,
        ..ModelConfig::tiny()
    };
    let (p1, h1) = train(
        &split.labeled,
        &split.unlabeled,
        &model,
        &cfg,
        Some(&split.test),
    )
    .unwrap();
    let (p2, h2) = train(
        &split.labeled,
        &split.unlabeled,
        &model,
        &cfg,
        Some(&split.test),
    )
    .unwrap();
    assert_eq!(h1, h2);
    assert_eq!(hashes(&p1), hashes(&p2));
    assert_eq!(p1.enc.bn_running, p2.enc.bn_running);
    let other = TrainConfig { seed: 1, ..cfg };
    let (_, h3) = train(&split.labeled, &split.unlabeled, &model, &other, None).unwrap();
    assert_ne!(h1.records, h3.records);
}

/// Supervised training written directly against the layer API: encoder and
/// predictor forward, cross-entropy gradient, backward, Adam.
fn plain_cnn(split: &PreparedSplit, model: &ModelConfig, cfg: &TrainConfig) -> ModelParams {
    let mut params = init_params(&ModelConfig {
        seed: cfg.seed,
        ..model.clone()
    })
    .unwrap();
    let labels = split.labeled.labels().unwrap();
    let mut sampler = BatchSampler::new(split.labeled.len(), split.unlabeled.len(), cfg).unwrap();
    let mut rng = Rng::stream(cfg.seed, Stream::Dropout);
    let m = model.n_classes;
    for _ in 0..cfg.epochs * sampler.steps_per_epoch() {
        let (il, _) = sampler.next_indices();
        let x = split.labeled.batch(&il).unwrap();
        let b = il.len();
        params.zero_grad();
        let (z, cache) = encoder_forward(&params, &x, Mode::Train, &mut rng).unwrap();
        let out = predictor_forward(&params, &z).unwrap();
        let mut dlogits = Tensor::zeros(&[b, m]);
        for (i, &k) in il.iter().enumerate() {
            let row = &out.probs.data()[i * m..(i + 1) * m];
            if row[labels[k]] >= PROB_CLAMP {
                for j in 0..m {
                    let onehot = if j == labels[k] { 1.0 } else { 0.0 };
                    dlogits.data_mut()[i * m + j] = (row[j] - onehot) / b as f64;
                }
            }
        }
        let dz = predictor_backward(&mut params, &out, &dlogits);
        encoder_backward(&mut params, &cache, &dz, false).unwrap();
        params.enc.bn_running.update(cache.batch_stats().unwrap());
        for part in [Part::Encoder, Part::Predictor] {
            for p in params.part_mut(part) {
                adam_step(p, &cfg.adam).unwrap();
            }
        }
    }
    params
}

#[test]
fn supervised_variant_equals_plain_cnn_training() {
    let split = tiny_split(4);
    let model = ModelConfig {
        keep_prob: 0.6,
        ..ModelConfig::tiny()
    };
    let cfg = TrainConfig {
        epochs: 8,
        seed: 13,
        ..tiny_cfg(Variant::Ly, -0.3, 0.05)
    };
    let (trained, h) = train(&split.labeled, &split.unlabeled, &model, &cfg, None).unwrap();
    let reference = plain_cnn(&split, &model, &cfg);
    assert_eq!(hashes(&trained), hashes(&reference));
    assert_eq!(trained.enc.bn_running, reference.enc.bn_running);
    assert_eq!(h.gate_s_count, 0);
    assert!(h
        .records
        .iter()
        .all(|r| r.l_a == 0.0 && r.l_rec == 0.0 && r.l_con == 0.0));
}

#[test]
fn supervised_loss_falls_on_separable_data() {
    let task = TaskSpec {
        shift: 0.0,
        noise_std: 0.05,
        n_per_class: 64,
        ..tiny_task()
    };
    let split = prepare_split(&task, &[0], &[1], SplitMode::Stratified, 0).unwrap();
    let cfg = TrainConfig {
        epochs: 60,
        ..tiny_cfg(Variant::Ly, -0.3, 0.05)
    };
    let (_, h) = train(
        &split.labeled,
        &split.unlabeled,
        &ModelConfig::tiny(),
        &cfg,
        None,
    )
    .unwrap();
    let ly: Vec<f64> = h.records.iter().map(|r| r.l_y).collect();
    let smooth: Vec<f64> = ly
        .windows(50)
        .step_by(50)
        .map(|w| w.iter().sum::<f64>() / 50.0)
        .collect();
    assert!(smooth.len() >= 8);
    for w in smooth.windows(2) {
        assert!(w[1] < w[0], "smoothed l_y rose: {smooth:?}");
    }
}

/// Mean change of a loss across one gated branch over repeated trials on a
/// frozen batch. `branch` selects the parameter set that moves.
fn mean_branch_delta(part: Part, terms: Terms, trials: u64) -> f64 {
    let split = tiny_split(2);
    let labels = split.labeled.labels().unwrap();
    let mut total = 0.0;
    for t in 0..trials {
        let model = ModelConfig {
            seed: 100 + t,
            ..ModelConfig::tiny()
        };
        let mut params = init_params(&model).unwrap();
        let mut idx = Rng::new(t).permutation(split.labeled.len());
        idx.truncate(8);
        let iu: Vec<usize> = Rng::new(t + 1000)
            .permutation(split.unlabeled.len())
            .into_iter()
            .take(8)
            .collect();
        let x_l = split.labeled.batch(&idx).unwrap();
        let y_l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
        let x_u = split.unlabeled.batch(&iu).unwrap();
        let batch = Batch {
            x_l: &x_l,
            y_l: &y_l,
            x_u: &x_u,
        };
        let mut rng = Rng::new(0);
        let mut loss = |p: &mut ModelParams| {
            evaluate(p, &batch, terms, Mode::Train, &mut rng, Backprop::Full)
                .unwrap()
                .report
                .l_total
        };
        params.zero_grad();
        let before = loss(&mut params);
        let ascent = part == Part::Discriminator;
        let mut adam = TrainConfig::default().adam;
        adam.lr = 1e-3;
        for p in params.part_mut(part) {
            if ascent {
                p.grad.scale(-1.0);
            }
            adam_step(p, &adam).unwrap();
        }
        params.zero_grad();
        total += loss(&mut params) - before;
    }
    total / trials as f64
}

#[test]
fn discriminator_step_ascends_adversarial_loss() {
    let terms = Terms {
        adversarial: true,
        ..Terms::NONE
    };
    let d = mean_branch_delta(Part::Discriminator, terms, 30);
    assert!(d > 0.0, "mean change {d}");
}

#[test]
fn encoder_step_descends_adversarial_loss() {
    let terms = Terms {
        adversarial: true,
        ..Terms::NONE
    };
    let d = mean_branch_delta(Part::Encoder, terms, 30);
    assert!(d < 0.0, "mean change {d}");
}

#[test]
fn encoder_step_descends_its_objective() {
    let terms = Terms {
        reconstruction: false,
        ..Terms::ALL
    };
    let d = mean_branch_delta(Part::Encoder, terms, 30);
    assert!(d < 0.0, "mean change {d}");
}

#[test]
fn train_step_reports_start_of_step_losses() {
    let split = tiny_split(1);
    let labels = split.labeled.labels().unwrap();
    let idx: Vec<usize> = (0..8).collect();
    let x_l = split.labeled.batch(&idx).unwrap();
    let y_l: Vec<usize> = idx.iter().map(|&i| labels[i]).collect();
    let x_u = split.unlabeled.batch(&idx).unwrap();
    let batch = Batch {
        x_l: &x_l,
        y_l: &y_l,
        x_u: &x_u,
    };
    let mut params = init_params(&ModelConfig::tiny()).unwrap();
    let mut probe = params.clone();
    let expected = evaluate(
        &mut probe,
        &batch,
        Terms::ALL,
        Mode::Train,
        &mut Rng::new(4),
        Backprop::None,
    )
    .unwrap()
    .report;
    let cfg = tiny_cfg(Variant::Full, f64::INFINITY, f64::INFINITY);
    let out = train_step(&mut params, &batch, &cfg, &mut Rng::new(4)).unwrap();
    assert_eq!(out.report, expected);
    assert!(out.gate_s && out.gate_e);
}

#[test]
fn sampler_visits_every_window_once_per_epoch() {
    let cfg = TrainConfig {
        batch_l: 7,
        batch_u: 5,
        ..TrainConfig::default()
    };
    let mut s = BatchSampler::new(50, 40, &cfg).unwrap();
    assert_eq!(s.steps_per_epoch(), 7);
    let mut seen_l = Vec::new();
    let mut seen_u = Vec::new();
    for _ in 0..7 {
        let (l, u) = s.next_indices();
        assert_eq!((l.len(), u.len()), (7, 5));
        seen_l.extend(l);
        seen_u.extend(u);
    }
    seen_l.sort_unstable();
    seen_l.dedup();
    seen_u.sort_unstable();
    seen_u.dedup();
    assert_eq!((seen_l.len(), seen_u.len()), (49, 35));
    let again = BatchSampler::new(50, 40, &cfg).unwrap().next_indices();
    assert_eq!(
        again,
        BatchSampler::new(50, 40, &cfg).unwrap().next_indices()
    );
    assert!(BatchSampler::new(6, 40, &cfg).is_err());
    assert!(BatchSampler::new(50, 4, &cfg).is_err());
}

#[test]
fn sampled_class_frequencies_match_the_dataset() {
    let task = TaskSpec {
        n_classes: 3,
        n_per_class: 30,
        ..tiny_task()
    };
    // Unbalanced labeled set: drop part of class 0.
    let split = prepare_split(&task, &[0], &[1], SplitMode::Stratified, 0).unwrap();
    let labels = split.labeled.labels().unwrap();
    let keep: Vec<usize> = (0..labels.len())
        .filter(|&i| labels[i] != 0 || i % 3 == 0)
        .collect();
    let labels: Vec<usize> = keep.iter().map(|&i| labels[i]).collect();
    let cfg = TrainConfig {
        batch_l: 16,
        batch_u: 2,
        ..TrainConfig::default()
    };
    let mut s = BatchSampler::new(labels.len(), 1000, &cfg).unwrap();
    let mut counts = [0usize; 3];
    for _ in 0..2000 {
        for i in s.next_indices().0 {
            counts[labels[i]] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    for k in 0..3 {
        let expected = labels.iter().filter(|&&y| y == k).count() as f64 / labels.len() as f64;
        let got = counts[k] as f64 / total as f64;
        assert!(
            (got - expected).abs() < 0.02,
            "class {k}: {got} vs {expected}"
        );
    }
}

mod run {
    #[test]
    fn gates_update_exactly_their_parameter_sets() {
        super::gates_update_exactly_their_parameter_sets();
    }

    #[test]
    fn gate_counters_match_trace_interpreter() {
        super::gate_counters_match_trace_interpreter();
    }

    #[test]
    fn hand_counted_ten_step_trace() {
        super::hand_counted_ten_step_trace();
    }
}
