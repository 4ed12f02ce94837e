mod common;

use std::collections::HashMap;

use hmd_core::cascade::{train_cascade, CascadeConfig};
use hmd_core::embed::{join, load_embeddings, mean_pool};
use hmd_core::evalharness::{
    ablation_run, cross_validate, stratified_folds, subset_experiment, AblationConfig, ModelSpec, StratifyMode, Task,
    TaskSpec, Variant,
};
use hmd_core::explain::{global_weights, select_top_k, FeatureStats};
use hmd_core::hierarchy::{train_pipeline, AMP_COLUMN};
use hmd_core::matrix::LabelMatrix;
use hmd_core::rng::rng_from;
use hmd_core::seqio::{parse_fasta, parse_labels, Dataset, ACTIVITY_LABELS};
use hmd_core::{Error, ExplainConfig, Matrix, PipelineConfig};

use common::*;

fn tiny_cascade(seed: u64) -> CascadeConfig {
    CascadeConfig {
        n_trees: 6,
        max_layers: 3,
        seed,
        ..CascadeConfig::default()
    }
}

#[test]
fn pipeline_stages_see_all_records_and_positives() {
    let (dataset, features) = two_level(11, 40, 5, 3);
    // force exactly 20 AMPs
    let mut dataset = dataset;
    for (i, r) in dataset.records.iter_mut().enumerate() {
        let amp = i % 2 == 0;
        r.amp_label = Some(amp);
        r.activity_labels = amp.then(|| vec![i % 4 == 0, i % 3 == 0, i % 8 < 4]);
    }
    let positives = dataset.positives();
    assert_eq!((dataset.len(), positives.len()), (40, 20));

    let config = PipelineConfig::new(tiny_cascade(11), 3);
    let model = train_pipeline(&dataset, &positives, &features, &config).unwrap();

    let x_all = join(&dataset, &features).unwrap();
    let amp: Vec<bool> = dataset.records.iter().map(|r| r.amp_label.unwrap()).collect();
    let binary = train_cascade(&x_all, &LabelMatrix::binary_classes(&amp), &config.binary).unwrap();
    assert_eq!(model.binary(), &binary);

    let x_pos = join(&positives, &features).unwrap();
    let rows: Vec<Vec<bool>> = positives.records.iter().map(|r| r.activity_labels.clone().unwrap()).collect();
    let multilabel = train_cascade(&x_pos, &LabelMatrix::from_rows(&rows).unwrap(), &config.multilabel).unwrap();
    assert_eq!(model.multilabel(), &multilabel);

    let v = model.predict("q", features.values.row(0)).unwrap();
    assert_eq!(v.amp_score, model.binary().predict(features.values.row(0)).unwrap()[AMP_COLUMN]);
}

#[test]
fn pipeline_rejects_positive_marked_non_amp() {
    let (mut dataset, features) = two_level(12, 30, 4, 2);
    let positives = dataset.positives();
    let victim = positives.records[0].id.clone();
    for r in &mut dataset.records {
        if r.id == victim {
            r.amp_label = Some(false);
        }
    }
    let config = PipelineConfig::new(tiny_cascade(12), 2);
    let err = train_pipeline(&dataset, &positives, &features, &config).unwrap_err();
    assert!(matches!(err, Error::Inconsistent(ref m) if m.contains(&victim)));
}

/// Writes an embedding file as the exporter would: `#dim` header, then one mean-pooled row
/// per sequence, printed with 8 significant digits.
fn exporter_file(residue_vectors: &[(String, Matrix)]) -> String {
    let dim = residue_vectors[0].1.n_cols();
    let mut out = format!("#dim {dim}\n");
    for (id, m) in residue_vectors {
        let pooled = mean_pool(m).unwrap();
        let cells: Vec<String> = pooled.iter().map(|v| format!("{v:.8e}")).collect();
        out.push_str(&format!("{id}\t{}\n", cells.join("\t")));
    }
    out
}

#[test]
fn exporter_format_files_load_and_join() {
    let mut rng = rng_from(13);
    let fasta = ">a desc\nKKLLKK\n>b\nGIGAVLKV\n>c\nFLPLIAGLAANFLPKIFCKITRKC\n";
    let seqs = parse_fasta(fasta).unwrap();
    let residues: Vec<(String, Matrix)> = seqs
        .iter()
        .map(|(id, s)| (id.clone(), gaussian_matrix(&mut rng, s.len(), 1280)))
        .collect();
    let text = exporter_file(&residues);
    let emb = load_embeddings::<f64>(&text).unwrap();
    assert_eq!((emb.len(), emb.dim()), (3, 1280));
    for (i, (_, m)) in residues.iter().enumerate() {
        // independent mean over residue rows
        for j in 0..1280 {
            let want = (0..m.n_rows()).map(|r| m.get(r, j)).sum::<f64>() / m.n_rows() as f64;
            assert!((emb.values.get(i, j) - want).abs() < 1e-5);
        }
    }

    let labels_text = format!("id\t{}\nb\t{}\n", ACTIVITY_LABELS.join("\t"), ["1"; 11].join("\t"));
    let names: Vec<String> = ACTIVITY_LABELS.iter().map(|s| s.to_string()).collect();
    let labels = parse_labels(&labels_text, &names).unwrap();
    let dataset = Dataset::from_parts(seqs, &labels, &names).unwrap();
    assert_eq!(dataset.records.iter().filter(|r| r.amp_label == Some(true)).count(), 1);
    let x = join(&dataset, &emb).unwrap();
    assert_eq!(x.row(1), emb.values.row(1));

    // a FASTA id missing from the embedding file is reported by name
    let extra = Dataset::from_parts(parse_fasta(">zz\nKK\n").unwrap(), &HashMap::new(), &names).unwrap();
    assert!(matches!(join(&extra, &emb), Err(Error::MissingIds(ids)) if ids == vec!["zz".to_string()]));

    // a row with the wrong width is rejected
    let bad = text.replacen("#dim 1280", "#dim 1279", 1);
    assert!(load_embeddings::<f64>(&bad).is_err());
}

#[test]
fn explain_select_project_retrain() {
    let (dataset, features) = two_level(14, 60, 10, 2);
    let amp: Vec<bool> = dataset.records.iter().map(|r| r.amp_label.unwrap()).collect();
    let y = LabelMatrix::binary_classes(&amp);
    let model = train_cascade(&features.values, &y, &tiny_cascade(14)).unwrap();
    let stats = FeatureStats::from_matrix(&features.values).unwrap();
    let score = |v: &[f64]| model.predict(v).unwrap()[AMP_COLUMN];
    let cfg = ExplainConfig {
        n_samples: 200,
        seed: 14,
        ..ExplainConfig::default()
    };
    let instances = features.values.select_rows(&[0, 10, 20, 30, 40, 50]);
    let g = global_weights(&score, &instances, &stats, &cfg).unwrap();
    let top = select_top_k(&g, 3, true).unwrap();
    assert_eq!(top[0], 0, "AMP status depends on feature 0 only: {:?}", g.weights);

    let reduced = features.project(&top).unwrap();
    assert_eq!(reduced.ids, features.ids);
    assert_eq!(reduced.dim(), 3);
    for i in 0..reduced.len() {
        for (c, &j) in top.iter().enumerate() {
            assert_eq!(reduced.values.get(i, c), features.values.get(i, j));
        }
    }
    let config = PipelineConfig {
        subset: Some(top.clone()),
        ..PipelineConfig::new(tiny_cascade(14), 2)
    };
    let p = train_pipeline(&dataset, &dataset.positives(), &features, &config).unwrap();
    assert_eq!(p.features().model_dim(), 3);
    assert_eq!(p.features().input_dim, 10);
    assert!(p.predict("x", features.values.row(3)).is_ok());
    assert!(p.predict("x", reduced.values.row(3)).is_err());
}

#[test]
fn cross_validation_reports_are_reproducible() {
    let (dataset, features) = two_level(15, 90, 6, 3);
    let positives = dataset.positives();
    let spec = TaskSpec {
        task: Task::Multilabel,
        model: ModelSpec::Cascade(tiny_cascade(0)),
        thresholds: None,
    };
    let plan = stratified_folds(&positives, 3, 15, StratifyMode::IterativeMultilabel).unwrap();
    let a = cross_validate(&positives, &features, &spec, &plan).unwrap();
    let b = cross_validate(&positives, &features, &spec, &plan).unwrap();
    assert_eq!(a.to_tsv(), b.to_tsv());
    assert_eq!(a.folds.len(), 3);
    assert!(a.folds.iter().all(|f| f.best_layer.unwrap() <= f.levels.unwrap()));
    assert!(a.metric("macro_auc").unwrap().mean.unwrap() > 0.5);

    let bin = TaskSpec {
        task: Task::Binary,
        ..spec.clone()
    };
    let plan = stratified_folds(&dataset, 3, 15, StratifyMode::Binary).unwrap();
    let r = cross_validate(&dataset, &features, &bin, &plan).unwrap();
    assert_eq!(r.label_names, vec!["AMP".to_string()]);
    assert_eq!(r.folds.iter().map(|f| f.n_test).sum::<usize>(), 90);
}

#[test]
fn subsets_and_ablation_variants_run() {
    let (dataset, features) = two_level(16, 120, 6, 3);
    let positives = dataset.positives();
    let spec = TaskSpec {
        task: Task::Multilabel,
        model: ModelSpec::Cascade(tiny_cascade(1)),
        thresholds: None,
    };
    let out = subset_experiment(&positives, &features, &spec, &[20, 30], 2, 16).unwrap();
    assert_eq!(out.iter().map(|(s, _)| *s).collect::<Vec<_>>(), vec![20, 30]);
    for (size, report) in &out {
        assert_eq!(report.folds.iter().map(|f| f.n_test).sum::<usize>(), *size);
        assert!(report.config.contains(&format!("subset_size={size}")));
    }

    let config = AblationConfig {
        cascade: CascadeConfig {
            max_layers: 2,
            ..tiny_cascade(2)
        },
        forest_trees: 10,
        max_len: 12,
        ..AblationConfig::default()
    };
    let plan = stratified_folds(&positives, 3, 16, StratifyMode::IterativeMultilabel).unwrap();
    for v in Variant::ALL {
        let r = ablation_run(&positives, Some(&features), v, &config, &plan).unwrap();
        assert!(r.config.starts_with(&format!("variant={}\n", v.name())));
        assert_eq!(r.folds.len(), 3);
    }
    assert!(ablation_run::<f64>(&positives, None, Variant::Hmd, &config, &plan).is_err());
    assert!(ablation_run::<f64>(&positives, None, Variant::DeepForestOneHot, &config, &plan).is_ok());
}
