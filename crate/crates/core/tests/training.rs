//! End-to-end behaviour of the transfer and supervised training loops.

use ndarray::array;
use pct_core::coherence::dc_exact_features;
use pct_core::datasets::{gen_two_moons, split, PointSet};
use pct_core::eval::spearman;
use pct_core::loss::LossConfig;
use pct_core::metric::Metric;
use pct_core::nn::{format_checkpoint, parse_checkpoint, DenseNet, SoftmaxHead};
use pct_core::transfer::{
    extractor_specs, stylized_study, train_probe, train_teacher, transfer_configuration, transfer_features, Snapshot,
    StylizedConfig, TransferConfig,
};

fn moons(n: usize, seed: u64) -> PointSet {
    gen_two_moons(n, 0.05, seed).unwrap()
}

#[test]
fn copying_the_teacher_is_a_fixed_point() {
    let teacher = DenseNet::new(&extractor_specs(20, 20), 3).unwrap();
    let mut student = teacher.clone();
    let data = moons(128, 3);
    let mut cfg = TransferConfig::features_default(3);
    cfg.epochs = 3;
    cfg.checkpoint_every = 1;
    cfg.loss = LossConfig::new(0.1, 0.1, 1.0).unwrap();
    let trace = transfer_features(&teacher, &mut student, &data, &cfg).unwrap();
    assert!(trace.epoch_loss.iter().all(|&l| l == 0.0), "{:?}", trace.epoch_loss);
    assert!(trace.checkpoint_phis().iter().all(|&p| p == 1.0));
    assert_eq!(student, teacher);
}

#[test]
fn tied_teacher_is_flagged_and_still_trains() {
    let mut pts = moons(24, 1).points;
    for j in 0..2 {
        pts[[1, j]] = pts[[0, j]];
    }
    let teacher = PointSet::new(pts, None, 1, "tied").unwrap();
    let mut cfg = TransferConfig::configuration_default(1);
    cfg.batch_size = 8;
    cfg.epochs = 4;
    cfg.checkpoint_every = 0;
    let (student, trace) = transfer_configuration(&teacher, 2, &cfg).unwrap();
    assert!(trace.teacher_ties);
    assert_eq!(student.points.dim(), (24, 2));
    assert!(trace.final_phi.is_finite());
}

#[test]
fn trace_csv_has_one_row_per_epoch() {
    let teacher = moons(64, 2);
    let mut cfg = TransferConfig::configuration_default(2);
    cfg.batch_size = 16;
    cfg.epochs = 7;
    cfg.checkpoint_every = 3;
    let (_, trace) = transfer_configuration(&teacher, 2, &cfg).unwrap();
    let csv = trace.to_csv();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "epoch,loss,phi_or_blank");
    assert_eq!(lines.len(), 8);
    let phis: Vec<bool> = lines[1..].iter().map(|l| !l.rsplit(',').next().unwrap().is_empty()).collect();
    assert_eq!(phis, [false, false, true, false, false, true, true]);
    assert_eq!(trace.checkpoints.iter().map(|c| c.epoch).collect::<Vec<_>>(), [3, 6]);
}

#[test]
fn small_configuration_transfer_converges_from_either_scale() {
    let teacher = moons(200, 4);
    for scale in [1.0, 10.0] {
        let mut cfg = TransferConfig::configuration_default(4);
        cfg.batch_size = 32;
        cfg.epochs = 300;
        cfg.init_scale = scale;
        let (_, trace) = transfer_configuration(&teacher, 2, &cfg).unwrap();
        assert!(trace.final_phi >= 0.9, "scale {scale}: {}", trace.final_phi);
        assert!(trace.epoch_loss.last() < trace.epoch_loss.first());
    }
}

#[test]
fn checkpoints_reload_to_the_same_coherence() {
    let teacher = DenseNet::new(&extractor_specs(20, 20), 5).unwrap();
    let mut student = DenseNet::new_on_stream(&extractor_specs(10, 20), 5, 77).unwrap();
    let data = moons(128, 5);
    let mut cfg = TransferConfig::features_default(5);
    cfg.epochs = 4;
    cfg.checkpoint_every = 2;
    let trace = transfer_features(&teacher, &mut student, &data, &cfg).unwrap();
    let tf = teacher.predict(data.points.view()).unwrap();
    let cos = Metric::cosine();
    for c in &trace.checkpoints {
        let Snapshot::Network(net) = &c.snapshot else { panic!("expected a network snapshot") };
        let (reloaded, step) = parse_checkpoint(&format_checkpoint(net, c.epoch as u64)).unwrap();
        assert_eq!(step, c.epoch as u64);
        assert_eq!(&reloaded, net);
        let sf = reloaded.predict(data.points.view()).unwrap();
        assert_eq!(dc_exact_features(tf.view(), sf.view(), (cos, cos)).unwrap().global_phi, c.phi);
    }
}

#[test]
fn stylized_study_at_the_default_seed() {
    let cfg = StylizedConfig::new(0);
    let result = stylized_study(&cfg).unwrap();
    assert_eq!((result.teacher_train_accuracy, result.teacher_test_accuracy), (1.0, 1.0));
    assert_eq!(result.rows.len(), 10);
    let epochs: Vec<f64> = result.rows.iter().map(|r| r.epoch as f64).collect();
    let phis: Vec<f64> = result.rows.iter().map(|r| r.phi).collect();
    assert!(spearman(&epochs, &phis).unwrap() > 0.0);
    assert!(result.trace.epoch_loss.last() < result.trace.epoch_loss.first());
    assert!(result.pearson.unwrap() > 0.0);
    assert_eq!(stylized_study(&cfg).unwrap(), result);
}

#[test]
fn teacher_is_perfect_on_most_seeds() {
    let perfect = (0..10)
        .filter(|&s| {
            let t = train_teacher(&StylizedConfig::new(s)).unwrap();
            t.train_accuracy == 1.0 && t.test_accuracy == 1.0
        })
        .count();
    assert!(perfect >= 8, "{perfect} of 10");
}

#[test]
fn teacher_probe_is_perfect_and_repeatable() {
    let cfg = StylizedConfig::new(1);
    let teacher = train_teacher(&cfg).unwrap();

    let mut head = SoftmaxHead::new(cfg.features, 2, 1).unwrap();
    let acc = train_probe(&teacher.net, &mut head, &teacher.data, &cfg.probe, 1).unwrap();
    assert_eq!(acc, 1.0);
    let mut again = SoftmaxHead::new(cfg.features, 2, 1).unwrap();
    assert_eq!(train_probe(&teacher.net, &mut again, &teacher.data, &cfg.probe, 1).unwrap(), acc);
    assert_eq!(again, head);
}

#[test]
fn random_features_reach_the_majority_baseline() {
    // Three class-0 points for every class-1 point.
    let moons = moons(800, 6);
    let labels = moons.labels.clone().unwrap();
    let keep: Vec<usize> = (0..800).filter(|&i| labels[i] == 0 || i % 3 == 0).collect();
    let data = split(&moons.select(&keep).unwrap(), 0.5, 6).unwrap();
    let cfg = StylizedConfig::new(6);
    let frozen = DenseNet::new(&extractor_specs(20, 20), 6).unwrap();
    let mut head = SoftmaxHead::new(20, 2, 6).unwrap();
    let acc = train_probe(&frozen, &mut head, &data, &cfg.probe, 6).unwrap();
    let test = data.test.labels.as_ref().unwrap();
    let zeros = test.iter().filter(|&&l| l == 0).count() as f64 / test.len() as f64;
    assert!(acc >= zeros.max(1.0 - zeros), "{acc} vs prior {zeros}");
}

#[test]
fn split_keeps_labels_aligned() {
    let ps = PointSet::new(array![[0.0, 0.0], [1.0, 1.0], [2.0, 2.0], [3.0, 3.0]], Some(vec![0, 1, 0, 1]), 0, "toy").unwrap();
    let s = split(&ps, 0.5, 9).unwrap();
    for (set, idx) in [(&s.train, &s.train_indices), (&s.test, &s.test_indices)] {
        for (row, &i) in idx.iter().enumerate() {
            assert_eq!(set.points.row(row), ps.points.row(i));
            assert_eq!(set.labels.as_ref().unwrap()[row], i % 2);
        }
    }
}
