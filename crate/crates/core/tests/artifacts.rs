use std::fs;

use pairdebias::data::{format_dataset, parse_dataset, DatasetFormat};
use pairdebias::debias::PropensityTable;
use pairdebias::exam::{ExaminationModel, ModelConfig, ThetaTable, Variant};
use pairdebias::experiment::{run_pipeline, ExperimentSpec, Manifest};
use pairdebias::sim::{simulate, ClickLog, SimulationConfig};
use pairdebias::synth::{generate_synthetic_dataset, SynthSpec};
use sha2::{Digest, Sha256};

#[test]
fn dataset_click_log_and_table_files_round_trip() {
    let data = generate_synthetic_dataset(&SynthSpec::new(40, 10, 6, 11)).unwrap();
    let text = format_dataset(&data, true);
    let back = parse_dataset(&text, DatasetFormat::SvmlightRanked, None).unwrap();
    assert_eq!(back, data);

    let model = ExaminationModel::independent(ThetaTable::inverse_rank(8));
    let log = simulate(&data, &SimulationConfig::new(model.clone(), 8, 3, 4)).unwrap();
    for latent in [false, true] {
        let t = log.to_text("data.txt", latent);
        let parsed = ClickLog::parse(&t, &data).unwrap();
        assert_eq!(parsed.to_text("data.txt", latent), t);
        assert_eq!(parsed.collections().len(), log.lists.len());
    }

    let table = PropensityTable::from_model(&model, 8).unwrap();
    let again = PropensityTable::parse(&table.to_text()).unwrap();
    assert_eq!(again.to_text(), table.to_text());
    for r in 1..=8 {
        assert_eq!(again.theta(r).unwrap(), 1.0 / r as f64);
    }
}

#[test]
fn manifest_lists_every_artifact_with_its_digest() {
    let train = generate_synthetic_dataset(&SynthSpec::new(60, 10, 6, 1)).unwrap();
    let test = generate_synthetic_dataset(&SynthSpec::new(20, 10, 6, 2)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let mut spec = ExperimentSpec::parse(
        r#"train = "unused"
test = "unused"
output_dir = "unused"
[simulation]
truncation = 5
repetitions = 2
[simulation.model]
variant = "independent"
[[runs]]
name = "plain"
scheme = "plain"
[runs.trainer]
num_trees = 3
[[runs]]
name = "oracle"
scheme = "oracle"
[runs.trainer]
num_trees = 3
"#,
    )
    .unwrap();
    spec.simulation.model = ModelConfig::inverse_rank(Variant::Continuous);
    run_pipeline(&spec, &train, &test, Some(dir.path())).unwrap();

    let manifest = Manifest::load(dir.path().join("manifest.json")).unwrap();
    assert_eq!(manifest.status, "complete");
    assert!(manifest.failed_stage.is_none());
    let paths: Vec<&str> = manifest.artifacts.iter().map(|a| a.path.as_str()).collect();
    for p in ["clicks.txt", "models/plain.model", "models/oracle.model", "comparison.json"] {
        assert!(paths.contains(&p), "{p} not in {paths:?}");
    }
    for a in &manifest.artifacts {
        let bytes = fs::read(dir.path().join(&a.path)).unwrap();
        assert_eq!(hex::encode(Sha256::digest(&bytes)), a.sha256, "{}", a.path);
    }
}
