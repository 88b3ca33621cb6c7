use iglu_core::acquisition::{generate_dataset, generate_dataset_with, AdcConfig, ForwardModelConfig, GenerationConfig};
use iglu_core::data::{export_csv, load_csv, split_dataset, GlucoseKind, Split, SplitFractions};
use iglu_core::evaluation::{evaluate, evaluate_with, Zone};
use iglu_core::par::Execution;
use iglu_core::regress::model::{fit_model, fit_model_with, ModelChoice, TrainedModel};
use iglu_core::Dataset;

fn cohort(n: usize, seed: u64) -> Dataset {
    cohort_split(n, seed, SplitFractions::new(0.6, 0.4, 0.0))
}

fn cohort_split(n: usize, seed: u64, f: SplitFractions) -> Dataset {
    let gen = GenerationConfig { n, ..Default::default() };
    let fm = ForwardModelConfig { seed, ..Default::default() };
    let d = generate_dataset(&gen, &fm, &AdcConfig::default()).unwrap();
    split_dataset(&d, seed, f).unwrap()
}

#[test]
fn generation_is_identical_across_execution_modes() {
    let gen = GenerationConfig { n: 60, ..Default::default() };
    let fm = ForwardModelConfig { seed: 11, ..Default::default() };
    let adc = AdcConfig::default();
    let a = generate_dataset_with(&gen, &fm, &adc, Execution::Sequential).unwrap();
    let b = generate_dataset_with(&gen, &fm, &adc, Execution::Parallel).unwrap();
    assert_eq!(a, b);
}

#[test]
fn calibrate_then_validate_mpr3() {
    let d = cohort_split(187, 3, SplitFractions::new(113.0 / 187.0, 74.0 / 187.0, 0.0));
    assert_eq!(d.split(Split::Calibration).count(), 113);
    assert_eq!(d.split(Split::Validation).count(), 74);
    let cal = d.subset(Split::Calibration);
    let val = d.subset(Split::Validation);
    let model = fit_model(&ModelChoice::Mpr3(Default::default()), &cal, GlucoseKind::Serum).unwrap();
    let e = evaluate(&model, &val, GlucoseKind::Serum).unwrap();
    assert_eq!(e.metrics.n, 74);
    assert!(e.metrics.mard_pct < 5.0, "mARD {}", e.metrics.mard_pct);
    assert!(e.metrics.r_pearson > 0.95);
    assert!(e.ceg.percent(Zone::A) > 90.0);
    assert!(e.readings.tags().iter().all(|t| t.split == Some(Split::Validation)));
}

#[test]
fn every_family_survives_a_file_round_trip() {
    let d = cohort(120, 5);
    let cal = d.subset(Split::Calibration);
    let val = d.subset(Split::Validation);
    let dir = tempfile::tempdir().unwrap();
    for choice in ["mpr3", "svr:cubic", "svr:fine-gaussian", "dnn"] {
        let mut choice: ModelChoice = choice.parse().unwrap();
        if let ModelChoice::Dnn(cfg) = &mut choice {
            cfg.hidden_layers = 2;
            cfg.max_iters = 50;
        }
        let model = fit_model(&choice, &cal, GlucoseKind::Capillary).unwrap();
        let path = dir.path().join("model.json");
        model.save(&path).unwrap();
        let back = TrainedModel::load(&path).unwrap();
        assert_eq!(back, model);
        for s in val.samples() {
            assert_eq!(
                back.predict_raw(&s.voltages).unwrap().to_bits(),
                model.predict_raw(&s.voltages).unwrap().to_bits()
            );
        }
    }
}

#[test]
fn fits_do_not_depend_on_execution_mode() {
    let d = cohort(90, 8);
    let cal = d.subset(Split::Calibration);
    for choice in ["svr", "dnn"] {
        let mut choice: ModelChoice = choice.parse().unwrap();
        if let ModelChoice::Dnn(cfg) = &mut choice {
            cfg.hidden_layers = 2;
            cfg.max_iters = 30;
        }
        let a = fit_model_with(&choice, &cal, GlucoseKind::Serum, Execution::Sequential).unwrap();
        let b = fit_model_with(&choice, &cal, GlucoseKind::Serum, Execution::Parallel).unwrap();
        assert_eq!(a, b);
        let ea = evaluate_with(&a, &d, GlucoseKind::Serum, Execution::Sequential).unwrap();
        let eb = evaluate_with(&b, &d, GlucoseKind::Serum, Execution::Parallel).unwrap();
        assert_eq!(ea, eb);
    }
}

#[test]
fn csv_round_trip_keeps_labels() {
    let d = cohort(40, 2);
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cohort.csv");
    export_csv(&d, &path).unwrap();
    assert_eq!(load_csv(&path).unwrap(), d);
}

#[test]
fn training_hash_tracks_data() {
    let d = cohort(80, 1);
    let cal = d.subset(Split::Calibration);
    let val = d.subset(Split::Validation);
    let choice = ModelChoice::Mpr3(Default::default());
    let a = fit_model(&choice, &cal, GlucoseKind::Serum).unwrap();
    let b = fit_model(&choice, &cal, GlucoseKind::Serum).unwrap();
    let c = fit_model(&choice, &val, GlucoseKind::Serum).unwrap();
    assert_eq!(a.metadata.training_hash, b.metadata.training_hash);
    assert_ne!(a.metadata.training_hash, c.metadata.training_hash);
    assert_eq!(a.metadata.training_hash.len(), 64);
}
