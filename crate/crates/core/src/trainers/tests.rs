use super::*;
use crate::data::{synth_nc, synth_st, NcDataset, SlackSpec, StDataset, SynthNcConfig, SynthStConfig};

fn st_fixture(added: f64) -> (Dataset, BackboneConfig) {
    let (ds, _) = synth_st(&SynthStConfig {
        n_nodes: 8,
        steps: 260,
        window: 6,
        horizon: 1,
        knn: 2,
        slack: SlackSpec { added, removed: 0.0 },
        seed: 5,
        ..Default::default()
    })
    .unwrap();
    let mut bb = BackboneConfig::stgnn(4, 6, 1);
    bb.dropout = 0.1;
    (Dataset::St(ds), bb)
}

fn nc_fixture() -> (Dataset, BackboneConfig) {
    let ds = synth_nc(&SynthNcConfig {
        n_nodes: 60,
        classes: 3,
        avg_degree: 4.0,
        feature_dim: 5,
        train_per_class: 5,
        val_size: 15,
        test_size: 20,
        seed: 2,
        ..Default::default()
    })
    .unwrap();
    let bb = BackboneConfig::gcn(5, 8, 3, 0.5);
    (Dataset::Nc(ds), bb)
}

fn cfg(mode: Mode, t: usize) -> TrainConfig {
    TrainConfig {
        mode,
        inner_steps: t,
        epochs: 3,
        batch_size: 16,
        seed: 7,
        ..Default::default()
    }
}

fn softmax(d: &Dataset) -> GraphParam {
    GraphParam::softmax_from(d.graph())
}

#[test]
fn frozen_single_step_reproduces_vanilla() {
    let (st, sb) = st_fixture(0.5);
    let (nc, nb) = nc_fixture();
    for (d, bb, phi) in [
        (&st, &sb, softmax(&st)),
        (&nc, &nb, GraphParam::bernoulli_from(nc.graph(), 4).unwrap()),
    ] {
        let mut v = train(&cfg(Mode::Vanilla, 5), bb, &phi, d).unwrap();
        let f = train(&cfg(Mode::FrozenPhi, 1), bb, &phi, d).unwrap();
        assert_eq!(v.train_loss, f.train_loss);
        v.config = f.config.clone();
        assert_eq!(v, f);
    }
}

#[test]
fn runs_are_deterministic() {
    let (d, bb) = st_fixture(0.5);
    let c = TrainConfig {
        instrument: true,
        ..cfg(Mode::Bilevel, 2)
    };
    let a = train(&c, &bb, &softmax(&d), &d).unwrap();
    let b = train(&c, &bb, &softmax(&d), &d).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.train_loss.len(), 3);
    assert!(a.failure.is_none());
}

#[test]
fn bilevel_moves_phi_within_support() {
    let (d, bb) = st_fixture(0.5);
    let phi0 = softmax(&d);
    let r = train(&cfg(Mode::Bilevel, 2), &bb, &phi0, &d).unwrap();
    assert_ne!(r.phi, phi0);
    let a0 = phi0.materialize(Materialize::Deterministic).unwrap();
    let a = r.phi.materialize(Materialize::Deterministic).unwrap();
    for (x, y) in a.data().iter().zip(a0.data()) {
        assert_eq!(*x != 0.0, *y != 0.0);
    }
    let frozen = train(&cfg(Mode::FrozenPhi, 2), &bb, &phi0, &d).unwrap();
    assert_eq!(frozen.phi, phi0);
}

#[test]
fn bernoulli_outer_step_keeps_theta_valid() {
    let (d, bb) = nc_fixture();
    let phi0 = GraphParam::bernoulli_from(d.graph(), 3).unwrap();
    let c = TrainConfig {
        outer_lr: 0.05,
        epochs: 5,
        ..cfg(Mode::Bilevel, 2)
    };
    let r = train(&c, &bb, &phi0, &d).unwrap();
    assert_ne!(r.phi, phi0);
    let t = r.phi.raw();
    let n = t.shape()[0];
    for i in 0..n {
        assert_eq!(t.get2(i, i), 0.0);
        for j in 0..n {
            assert!((0.0..=1.0).contains(&t.get2(i, j)));
            assert_eq!(t.get2(i, j), t.get2(j, i));
        }
    }
}

#[test]
fn e2e_updates_structure_from_training_loss() {
    let (d, bb) = st_fixture(0.5);
    let phi0 = softmax(&d);
    let r = train(&cfg(Mode::E2eJoint, 9), &bb, &phi0, &d).unwrap();
    assert_ne!(r.phi, phi0);
    assert!(r.failure.is_none());
}

#[test]
fn reset_regime_repeats_each_outer_iteration() {
    let (d, mut bb) = nc_fixture();
    bb.dropout = 0.0;
    let c = TrainConfig {
        regime: Regime::FullbatchReset,
        epochs: 3,
        ..cfg(Mode::FrozenPhi, 4)
    };
    let r = train(&c, &bb, &GraphParam::bernoulli_from(d.graph(), 1).unwrap(), &d).unwrap();
    assert!(r.val_metric.iter().all(|&v| v == r.val_metric[0]));
    assert!(r.train_loss.iter().all(|&v| v == r.train_loss[0]));
    assert_eq!(r.best_epoch, 0);
}

#[test]
fn invalid_configs_are_rejected() {
    let (d, bb) = st_fixture(0.0);
    let phi = softmax(&d);
    let bad = [
        cfg(Mode::FrozenPhi, 0),
        TrainConfig {
            warmup_epochs: 9,
            ..cfg(Mode::Bilevel, 2)
        },
        TrainConfig {
            regime: Regime::FullbatchReset,
            ..cfg(Mode::Vanilla, 1)
        },
        TrainConfig {
            inner_lr: f64::NAN,
            ..cfg(Mode::Vanilla, 1)
        },
    ];
    for c in bad {
        assert!(train(&c, &bb, &phi, &d).is_err(), "{:?}", c);
    }
    let (nc, nb) = nc_fixture();
    assert!(train(&cfg(Mode::Vanilla, 1), &nb, &phi, &d).is_err());
    assert!(train(&cfg(Mode::Vanilla, 1), &bb, &softmax(&nc), &nc).is_err());
    let bern = GraphParam::bernoulli_from(d.graph(), 2).unwrap();
    assert!(train(&cfg(Mode::E2eJoint, 1), &bb, &bern, &d).is_err());
}

#[test]
fn instrumentation_counts_and_recomputation() {
    let (d, bb) = st_fixture(0.5);
    let c = TrainConfig {
        instrument: true,
        epochs: 1,
        grad_clip: Some(1e-3),
        ..cfg(Mode::FrozenPhi, 3)
    };
    let phi = softmax(&d);
    let r = train(&c, &bb, &phi, &d).unwrap();
    let batches = train_batches(&d, &c, 0).unwrap();
    let rows = r.grad_norms.as_ref().unwrap();
    assert_eq!(rows.len(), batches.len() * 3);
    let csv = r.grad_norm_csv().unwrap();
    assert_eq!(csv.lines().count(), rows.len() + 1);

    // replay the first batch by hand from the init weights
    let adj = phi.materialize(Materialize::Deterministic).unwrap();
    let mut p = bb.init(c.seed).unwrap().tensors;
    let mut opt = Optimizer::new(c.optimizer, c.weight_decay, &p);
    for s in 0..3 {
        let seed = mix_seed(&[c.seed, STREAM_DROPOUT, 0, 0, s as u64]);
        let (_, mut g) = theta_grad(&bb, &p, &adj, &batches[0], seed).unwrap();
        let norm = global_norm(&g);
        assert_eq!(norm, rows[s].norm);
        assert!(norm > 1e-3, "clip threshold must bind for this check");
        clip_global(&mut g, c.grad_clip);
        opt.step(&mut p, &g, c.inner_lr);
    }
}

#[test]
fn exposure_parity_across_modes() {
    let (d, bb) = st_fixture(0.5);
    let phi = softmax(&d);
    let mut seen = Vec::new();
    for (m, t) in [(Mode::Vanilla, 1), (Mode::FrozenPhi, 3), (Mode::Bilevel, 3)] {
        let c = TrainConfig {
            instrument: true,
            ..cfg(m, t)
        };
        let r = train(&c, &bb, &phi, &d).unwrap();
        let mut batches: Vec<(usize, usize)> = r
            .grad_norms
            .unwrap()
            .iter()
            .map(|row| (row.epoch, row.batch))
            .collect();
        batches.dedup();
        seen.push(batches);
    }
    assert_eq!(seen[0], seen[1]);
    assert_eq!(seen[1], seen[2]);
}

#[test]
fn non_finite_loss_aborts_with_record() {
    let (d, bb) = st_fixture(0.0);
    let Dataset::St(ds) = d else { unreachable!() };
    let mut raw = ds.raw.clone();
    raw.set2(10, 0, f64::NAN);
    let bad = Dataset::St(StDataset::new(ds.graph.clone(), raw, ds.window, ds.horizon, ds.splits.clone()).unwrap());
    let r = train(&cfg(Mode::Vanilla, 1), &bb, &softmax(&bad), &bad).unwrap();
    assert!(r.failure.as_deref().unwrap().contains("epoch 0"));
    assert!(r.train_loss.is_empty());
}

#[test]
fn early_stopping_and_best_checkpoint() {
    let (d, bb) = nc_fixture();
    let c = TrainConfig {
        epochs: 40,
        early_stop_patience: Some(3),
        inner_lr: 0.05,
        ..cfg(Mode::Vanilla, 1)
    };
    let phi = softmax(&d);
    let r = train(&c, &bb, &phi, &d).unwrap();
    assert!(r.val_metric.len() <= r.best_epoch + 4);
    let best = r.val_metric.iter().cloned().fold(f64::INFINITY, f64::min);
    assert_eq!(r.best_val, best);
    assert_eq!(r.val_metric.iter().position(|&v| v == best), Some(r.best_epoch));
    let adj = r.phi.materialize(Materialize::Deterministic).unwrap();
    assert_eq!(evaluate(&bb, &r.params, &adj, &d, Split::Test).unwrap(), r.test_metric);
}

#[test]
fn gcn_beats_majority_class() {
    let (d, bb) = nc_fixture();
    let c = TrainConfig {
        epochs: 60,
        inner_lr: 0.02,
        ..cfg(Mode::Vanilla, 1)
    };
    let r = train(&c, &bb, &softmax(&d), &d).unwrap();
    let Dataset::Nc(ds) = &d else { unreachable!() };
    let ds: &NcDataset = ds;
    let mut counts = vec![0; ds.classes];
    for &v in &ds.test {
        counts[ds.labels()[v]] += 1;
    }
    let majority_err = 100.0 * (1.0 - *counts.iter().max().unwrap() as f64 / ds.test.len() as f64);
    assert!(r.test_metric < majority_err, "{} vs {}", r.test_metric, majority_err);
}
