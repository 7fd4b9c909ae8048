use privrisk_core::attribute_model::{predict_attributes, train_attribute_model};
use privrisk_core::metrics::{average_precision, c_map};
use privrisk_core::profiles::{best_match_agreement, select_profiles, SelectDirection, SelectOptions};
use privrisk_core::risk::{predict_risk, risk_targets, train_risk_regressor};
use privrisk_core::synth::{planted_preferences, random_profiles, TeacherWorld};
use privrisk_core::{LossKind, SgdConfig};

fn attribute_config() -> SgdConfig {
    SgdConfig {
        learning_rate: 0.5,
        batch_size: 16,
        epochs: 200,
        seed: 11,
        ..SgdConfig::default()
    }
}

#[test]
fn both_losses_learn_separable_labels() {
    let world = TeacherWorld::generate(16, 8, 500, 200, 21);
    for loss in [LossKind::SigmoidCe, LossKind::SmoothedHinge] {
        let (model, report) = train_attribute_model(&world.train, &world.val, &attribute_config(), loss, "v").unwrap();
        assert!(report.best_val_cmap >= 0.95, "{loss:?}: {}", report.best_val_cmap);
        assert_eq!(report.val_cmap.len(), 201);

        let scores: Vec<Vec<f64>> = world
            .val
            .features
            .iter()
            .map(|x| predict_attributes(&model, "v", x).unwrap().y)
            .collect();
        let cm = c_map(&scores, &world.val.labels).unwrap();
        assert!((cm.c_map.unwrap() - report.best_val_cmap).abs() < 1e-12);

        let (again, _) = train_attribute_model(&world.train, &world.val, &attribute_config(), loss, "v").unwrap();
        assert_eq!(again, model);
    }
}

#[test]
fn ce_training_gives_high_ap_on_every_frequent_attribute() {
    let world = TeacherWorld::generate(16, 8, 500, 200, 22);
    let (model, _) =
        train_attribute_model(&world.train, &world.val, &attribute_config(), LossKind::SigmoidCe, "v").unwrap();
    for a in 0..8 {
        let positives: Vec<bool> = world.val.labels.iter().map(|l| l[a]).collect();
        if positives.iter().filter(|&&p| p).count() < 5 {
            continue;
        }
        let scores: Vec<f64> = world
            .val
            .features
            .iter()
            .map(|x| model.posteriors(x).unwrap()[a])
            .collect();
        let ap = average_precision(&scores, &positives).unwrap();
        assert!(ap >= 0.95, "attribute {a}: AP {ap}");
    }
}

#[test]
fn planted_clusters_are_recovered() {
    let planted = planted_preferences(68, 67, 305, 3, 0.3, false, 5);
    let candidates: Vec<usize> = (2..=6).collect();
    let sel = select_profiles(&planted.responses, 67, &candidates, 9, &SelectOptions::default()).unwrap();
    assert_eq!(sel.k, 3);
    assert_eq!(sel.table.iter().map(|r| r.k).collect::<Vec<_>>(), candidates);
    let found: Vec<usize> = planted
        .responses
        .iter()
        .map(|r| sel.result.assignment[&r.user_id])
        .collect();
    assert!(best_match_agreement(&found, &planted.truth) >= 0.99);

    let min = SelectOptions {
        direction: SelectDirection::Minimize,
        ..SelectOptions::default()
    };
    let sel_min = select_profiles(&planted.responses, 67, &candidates, 9, &min).unwrap();
    let lowest = sel
        .table
        .iter()
        .fold(f64::INFINITY, |acc, r| acc.min(r.silhouette));
    assert_eq!(sel_min.result.silhouette, lowest);
}

#[test]
fn risk_head_fits_its_training_points() {
    let world = TeacherWorld::generate(6, 4, 150, 50, 31);
    let profiles = random_profiles(4, 3, 2, 32);
    let cfg = SgdConfig {
        learning_rate: 0.1,
        batch_size: 8,
        epochs: 300,
        seed: 4,
        ..SgdConfig::default()
    };
    let (reg, report) = train_risk_regressor(&world.train, &world.val, &profiles, &cfg, "v").unwrap();
    assert!(report.best_val_l1 < report.val_l1[0]);
    let targets = risk_targets(&world.train.labels, &profiles).unwrap();
    let pred = predict_risk(&reg, &world.train.features[0]).unwrap();
    for (p, t) in pred.iter().zip(&targets[0]) {
        assert!((p - t).abs() <= 0.3, "{p} vs {t}");
    }
}
