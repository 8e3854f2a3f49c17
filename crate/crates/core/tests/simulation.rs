use fedsketch_core::data::partition_by_label;
use fedsketch_core::model::loss_and_grad;
use fedsketch_core::sim::{prepare, run_experiment, sample_clients, DatasetSpec, ExperimentConfig, PartitionSpec};
use fedsketch_core::train::{local_train, ClientContext, Constraint, LayerUpdate};
use fedsketch_core::wire::serialize;
use fedsketch_core::{
    CompressionConfig, Matrix, ModelSpec, RoundConfig, Scheme, SeededRng, SketchConfig, SyntheticSpec, Weighting,
};

fn config(scheme: Scheme, rounds: u32) -> ExperimentConfig {
    ExperimentConfig {
        seed: 11,
        dataset: DatasetSpec::Synthetic(SyntheticSpec {
            num_classes: 4,
            dim: 16,
            train_examples: 800,
            test_examples: 200,
            clusters_per_class: 1,
            separation: 1.0,
            noise: 1.0,
        }),
        partition: PartitionSpec::Iid,
        num_clients: 8,
        model: ModelSpec::Mlp { hidden: 12 },
        round: RoundConfig {
            clients_per_round: 3,
            local_epochs: 1,
            local_lr: 0.1,
            server_lr: 1.0,
            batch_size: 20,
            weighting: Weighting::Uniform,
        },
        compression: CompressionConfig {
            scheme,
            exemption_threshold: 0.05,
        },
        rounds,
        eval_interval: 1,
        output: None,
        model_output: None,
    }
}

fn sketch(rotate: bool, fraction: f32, bits: Option<u8>) -> Scheme {
    Scheme::Sketch(SketchConfig {
        rotate,
        subsample_fraction: fraction,
        bits,
    })
}

#[test]
fn runs_are_deterministic() {
    for scheme in [
        Scheme::Raw,
        Scheme::LowRank { mode: 0.25 },
        Scheme::Mask { fraction: 0.2 },
        sketch(true, 0.25, Some(2)),
    ] {
        let a = run_experiment(&config(scheme, 4)).unwrap();
        let b = run_experiment(&config(scheme, 4)).unwrap();
        assert_eq!(a.records, b.records, "{scheme:?}");
        assert_eq!(a.final_params, b.final_params, "{scheme:?}");
    }
}

#[test]
fn zero_rounds_leave_model_untouched() {
    let cfg = config(Scheme::Raw, 0);
    let res = run_experiment(&cfg).unwrap();
    assert!(res.records.is_empty());
    assert!(res.ledger.entries().is_empty());
    assert_eq!(res.final_params, prepare(&cfg).unwrap().initial);
}

#[test]
fn raw_uplink_matches_message_layout() {
    let cfg = config(Scheme::Raw, 3);
    let res = run_experiment(&cfg).unwrap();
    let params = prepare(&cfg).unwrap().initial;
    // magic 4, scheme 1, dims 8, bits 1, fraction 4, payload length 8
    let per_client: u64 = params.layers().iter().map(|l| 26 + 4 * l.weights.len() as u64).sum();
    let mut running = 0;
    for r in &res.records {
        assert_eq!(r.uplink.total(), per_client * r.clients.len() as u64);
        running += r.uplink.total();
        assert_eq!(r.uplink_cumulative.total(), running);
    }
    let ledger_sum: u64 = res.ledger.entries().iter().map(|e| e.size.total()).sum();
    assert_eq!(ledger_sum, running);
}

#[test]
fn sketch_uplink_matches_predicted_payload() {
    let cfg = config(sketch(true, 0.25, Some(1)), 2);
    let res = run_experiment(&cfg).unwrap();
    let params = prepare(&cfg).unwrap().initial;
    let per_client: u64 = params
        .layers()
        .iter()
        .map(|l| {
            let d = l.weights.len();
            if l.compressible {
                let kept = ((0.25 * d.next_power_of_two() as f64).round() as u64).max(1);
                kept.div_ceil(8)
            } else {
                4 * d as u64
            }
        })
        .sum();
    for r in &res.records {
        assert_eq!(r.uplink.payload, per_client * r.clients.len() as u64);
    }
}

#[test]
fn client_sampling_is_uniform() {
    let (n, m, rounds) = (20usize, 5usize, 10_000u32);
    let mut counts = vec![0u32; n];
    for r in 1..=rounds {
        let s = sample_clients(3, r, n, m);
        assert_eq!(s.len(), m);
        assert!(s.windows(2).all(|w| w[0] < w[1]));
        for c in s {
            counts[c as usize] += 1;
        }
    }
    let p = m as f64 / n as f64;
    let mean = rounds as f64 * p;
    let sigma = (rounds as f64 * p * (1.0 - p)).sqrt();
    for (c, &k) in counts.iter().enumerate() {
        assert!((f64::from(k) - mean).abs() <= 3.0 * sigma, "client {c}: {k} vs {mean}");
    }
}

/// One client holding all data, full-batch steps and server rate 1 must
/// reproduce plain gradient descent on that client's data.
#[test]
fn single_client_raw_equals_gradient_descent() {
    let mut cfg = config(Scheme::Raw, 6);
    cfg.num_clients = 1;
    cfg.round.clients_per_round = 1;
    cfg.round.batch_size = 10_000;
    let setup = prepare(&cfg).unwrap();
    let data = &setup.clients[0].data;
    let mut w = setup.initial.clone();
    for _ in 0..cfg.rounds {
        let (_, grads) = loss_and_grad(&cfg.model, &w, &data.features, &data.labels);
        for (i, g) in grads.iter().enumerate() {
            w.layer_mut(i).add_scaled(-cfg.round.local_lr, g).unwrap();
        }
    }
    let res = run_experiment(&cfg).unwrap();
    for i in 0..w.len() {
        let diff = res.final_params.layer(i).max_abs_diff(w.layer(i));
        assert!(diff < 1e-5, "layer {i}: {diff}");
    }
}

#[test]
fn lossless_schemes_agree() {
    let raw = run_experiment(&config(Scheme::Raw, 5)).unwrap();
    for scheme in [Scheme::Mask { fraction: 1.0 }, sketch(false, 1.0, None), sketch(true, 1.0, None)] {
        let other = run_experiment(&config(scheme, 5)).unwrap();
        for (a, b) in raw.records.iter().zip(&other.records) {
            assert!((a.test_accuracy.unwrap() - b.test_accuracy.unwrap()).abs() < 1e-4);
            assert!((a.train_loss - b.train_loss).abs() < 1e-4);
        }
        for i in 0..raw.final_params.len() {
            assert!(raw.final_params.layer(i).max_abs_diff(other.final_params.layer(i)) < 1e-4);
        }
    }
}

#[test]
fn masked_training_never_touches_dropped_entries() {
    let cfg = config(Scheme::Mask { fraction: 0.1 }, 1);
    let setup = prepare(&cfg).unwrap();
    let ctx = ClientContext {
        seed: cfg.seed,
        round: 1,
        client: 0,
    };
    let mut round = cfg.round.clone();
    round.local_epochs = 3;
    let local = local_train(
        &cfg.model,
        &setup.initial,
        &setup.clients[0].data,
        &round,
        Constraint::from(&cfg.compression.scheme),
        ctx,
    )
    .unwrap();
    let mut masked_layers = 0;
    for u in &local.layers {
        if let LayerUpdate::Masked { pattern, update, .. } = u {
            masked_layers += 1;
            let keep = pattern.dense();
            assert!(update.data().iter().zip(&keep).all(|(&v, &k)| k || v == 0.0));
            assert!(update.data().iter().any(|&v| v != 0.0));
        }
    }
    assert_eq!(masked_layers, 2);
}

#[test]
fn exempt_layers_are_sent_raw() {
    let cfg = config(sketch(true, 0.1, Some(1)), 1);
    let setup = prepare(&cfg).unwrap();
    let names: Vec<_> = setup
        .initial
        .layers()
        .iter()
        .filter(|l| !l.compressible)
        .map(|l| l.name.as_str())
        .collect();
    assert_eq!(names, ["b1", "b2"]);
    let ctx = ClientContext {
        seed: cfg.seed,
        round: 1,
        client: 0,
    };
    let local = local_train(&cfg.model, &setup.initial, &setup.clients[0].data, &cfg.round, Constraint::None, ctx)
        .unwrap();
    for (u, l) in local.layers.iter().zip(setup.initial.layers()) {
        let enc = fedsketch_core::train::encode_layer(u, &cfg.compression.scheme, l.compressible, ctx, 0).unwrap();
        let bytes = serialize(&enc).unwrap();
        assert_eq!(bytes[4] == 0, !l.compressible, "{}", l.name);
    }
}

#[test]
fn label_partition_limits_classes_per_client() {
    let (train, _) = SyntheticSpec {
        num_classes: 10,
        dim: 4,
        train_examples: 2000,
        test_examples: 10,
        clusters_per_class: 1,
        separation: 1.0,
        noise: 1.0,
    }
    .generate(5)
    .unwrap();
    let clients = partition_by_label(&train, 20, 2, &mut SeededRng::new(9)).unwrap();
    let mut total = 0;
    for c in &clients {
        let mut labels = c.data.labels.clone();
        labels.sort_unstable();
        labels.dedup();
        assert!(labels.len() <= 2, "client {} has {:?}", c.id, labels);
        total += c.data.len();
    }
    assert_eq!(total, train.len());
}

#[test]
fn divergence_is_reported_not_propagated() {
    let mut cfg = config(Scheme::Raw, 50);
    cfg.round.local_lr = 1e6;
    let err = run_experiment(&cfg).unwrap_err();
    assert!(
        matches!(err, fedsketch_core::Error::Divergence { .. } | fedsketch_core::Error::NonFinite(_)),
        "{err:?}"
    );
}

#[test]
fn aggregation_ignores_update_order() {
    use fedsketch_core::sim::{server_aggregate, ClientUpdate};
    use fedsketch_core::EncodedUpdate;
    let global = fedsketch_core::ModelParams::new(vec![("w".into(), Matrix::zeros(1, 3))]).unwrap();
    let mut rng = SeededRng::new(4);
    let updates: Vec<ClientUpdate> = (0..7)
        .map(|c| ClientUpdate {
            client: c,
            examples: 1 + c as usize,
            layers: vec![EncodedUpdate::Raw(Matrix::from_fn(1, 3, |_, _| (rng.normal() * 1e3) as f32))],
        })
        .collect();
    let mut reversed = updates.clone();
    reversed.reverse();
    for weighting in [Weighting::Uniform, Weighting::Examples] {
        assert_eq!(
            server_aggregate(&global, &updates, 1.0, weighting).unwrap(),
            server_aggregate(&global, &reversed, 1.0, weighting).unwrap()
        );
    }
}
