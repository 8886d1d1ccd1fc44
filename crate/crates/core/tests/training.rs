use dpn_core::data::{
    generate_gaussians, generate_ood, split_holdout, Covariance, Dataset, GaussianCluster, Label, OodSource,
};
use dpn_core::eval::{build_report, score_dataset, Provenance};
use dpn_core::numeric::{argmax, sigmoid};
use dpn_core::trainer::{classify, train_baseline, train_dpn, Model, TrainConfig};

fn two_blobs(seed: u64) -> (Dataset, Dataset, Dataset) {
    let c = |m: Vec<f64>| GaussianCluster {
        mean: m,
        covariance: Covariance::Diagonal(vec![0.5, 0.5]),
        count: 500,
    };
    let id = generate_gaussians(&[c(vec![-3.0, 0.0]), c(vec![3.0, 0.0])], seed).unwrap();
    let (train, holdout) = split_holdout(&id, 0.1, seed).unwrap();
    let far = OodSource::Ring {
        center: vec![0.0, 0.0],
        radius: 12.0,
        width: 2.0,
    };
    (train, holdout, generate_ood(&far, 500, seed + 100).unwrap())
}

fn cfg(epochs: usize) -> TrainConfig {
    TrainConfig {
        epochs,
        hidden: vec![32, 32],
        seed: 11,
        ..TrainConfig::new(2).unwrap()
    }
}

fn accuracy(model: &Model, data: &Dataset) -> f64 {
    let hits = data
        .iter()
        .filter(|s| classify(model, &s.features).unwrap().0 == s.label.class().unwrap())
        .count();
    hits as f64 / data.len() as f64
}

#[test]
fn separable_blobs_are_learned() {
    let (train, holdout, ood) = two_blobs(1);
    let out = train_dpn(&train, &ood, &cfg(50)).unwrap();
    let (first, last) = (out.log.first().unwrap(), out.log.last().unwrap());
    assert_eq!(out.log.records.len(), 50);
    assert!(last.loss_in < first.loss_in, "{} -> {}", first.loss_in, last.loss_in);
    let acc = accuracy(&out.model, &holdout);
    assert!(acc > 0.95, "holdout accuracy {acc}");
}

#[test]
fn baseline_separates_training_streams() {
    let (train, _, ood) = two_blobs(2);
    let out = train_baseline(&train, &ood, &cfg(50)).unwrap();
    assert!(out.model.is_binary());
    let all = train.concat(&ood).unwrap();
    let logits = out.model.logits(&all).unwrap();
    let mut hits = 0;
    for (z, s) in logits.iter().zip(all.iter()) {
        let p_in = sigmoid(z[0]);
        assert!(p_in > 0.0 && p_in < 1.0 || z[0].abs() > 36.0);
        hits += usize::from((z[0] > 0.0) == (s.label != Label::Ood));
    }
    let acc = hits as f64 / all.len() as f64;
    assert!(acc > 0.99, "training accuracy {acc}");
}

#[test]
fn predicted_class_is_argmax_of_concentrations() {
    let (train, holdout, ood) = two_blobs(3);
    let out = train_dpn(&train, &ood, &cfg(5)).unwrap();
    for s in holdout.iter().take(50) {
        let (class, scores) = classify(&out.model, &s.features).unwrap();
        let z = out.model.logits_of(&s.features).unwrap();
        let alphas: Vec<f64> = z.iter().map(|v| v.exp()).collect();
        assert_eq!(class, argmax(&alphas));
        assert!((scores.max_probability - alphas[class] / alphas.iter().sum::<f64>()).abs() < 1e-12);
    }
}

#[test]
fn untrained_networks_score_near_chance_on_overlapping_sources() {
    // OOD drawn from the in-domain region: nothing separates the sources
    let c = |m: Vec<f64>| GaussianCluster {
        mean: m,
        covariance: Covariance::Diagonal(vec![1.0, 1.0]),
        count: 300,
    };
    let id = generate_gaussians(&[c(vec![-1.0, 0.0]), c(vec![1.0, 0.0])], 5).unwrap();
    let near = OodSource::ShiftedGaussian {
        mean: vec![0.0, 0.0],
        std: 1.4,
    };
    let ood = generate_ood(&near, 300, 6).unwrap();
    let untrained = cfg(1);
    let dpn = train_dpn(
        &id,
        &ood,
        &TrainConfig {
            learning_rate: 1e-12,
            ..untrained.clone()
        },
    )
    .unwrap();
    let base = train_baseline(
        &id,
        &ood,
        &TrainConfig {
            learning_rate: 1e-12,
            ..untrained
        },
    )
    .unwrap();
    let report = build_report(&dpn.model, &base.model, &id, &ood, &ood, 0).unwrap();
    for r in &report.rows {
        assert!((0.3..=0.7).contains(&r.auroc), "{} {}: {}", r.split, r.measure, r.auroc);
    }
    assert_eq!(
        score_dataset(&dpn.model, &ood, Provenance::UnseenOod).unwrap().len(),
        ood.len()
    );
}

#[test]
fn default_scenario_loss_trends_down() {
    let cfg = dpn_core::config::RunConfig::default_run().with_seed(4);
    let data = cfg.scenario.generate().unwrap();
    let out = train_dpn(&data.train_id, &data.train_ood, &cfg.train).unwrap();
    assert_eq!(out.log.records.len(), 200);
    let (first, last) = (out.log.first().unwrap(), out.log.last().unwrap());
    assert!(
        last.loss_total < first.loss_total,
        "{} -> {}",
        first.loss_total,
        last.loss_total
    );
    assert!(last.frac_ood_all_neg >= 0.9, "{}", last.frac_ood_all_neg);
}
