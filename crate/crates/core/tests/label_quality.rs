//! Quality of the label model's posteriors and of the end model beyond
//! labeler coverage.

use std::path::Path;

use pws_core::data::load_dataset;
use pws_core::end_model::LinearModel;
use pws_core::fixtures::spam_synth;
use pws_core::label_model::{fit_dawid_skene, infer, DawidSkeneConfig};
use pws_core::pipeline::{model_file, run_pipeline, RunConfig, RunOptions};
use pws_core::synthetic::PlantedDawidSkene;

#[test]
fn posteriors_near_point_seven_five_are_right_that_often() {
    let planted = PlantedDawidSkene {
        n: 20_000,
        alpha: vec![0.8, 0.7, 0.65, 0.75, 0.6],
        beta: vec![0.5, 0.4, 0.6, 0.3, 0.5],
        prior: vec![0.5, 0.5],
        seed: 11,
    }
    .sample();
    let fit = fit_dawid_skene(&planted.matrix, 2, &DawidSkeneConfig::default()).unwrap();
    let soft = infer(&fit.params, &planted.matrix).unwrap();
    let (mut hits, mut total) = (0usize, 0usize);
    for (q, &y) in soft.rows.iter().zip(&planted.gold) {
        let (top, p) = if q[1] >= q[0] { (1, q[1]) } else { (0, q[0]) };
        if (0.7..0.8).contains(&p) {
            total += 1;
            hits += usize::from(top == y);
        }
    }
    assert!(total >= 200, "bucket holds only {total} examples");
    let acc = hits as f64 / total as f64;
    assert!(
        (0.65..=0.85).contains(&acc),
        "bucket accuracy {acc:.3} over {total}"
    );
}

#[test]
fn end_model_labels_the_slice_every_labeler_abstains_on() {
    let tmp = tempfile::tempdir().unwrap();
    spam_synth::write(tmp.path()).unwrap();
    let cfg = RunConfig::load(tmp.path().join(spam_synth::PWS_CONFIG)).unwrap();
    let out = run_pipeline(&cfg, &RunOptions::default()).unwrap();
    let dataset = load_dataset(cfg.dataset_dir()).unwrap();
    let dark: Vec<_> = dataset
        .split(&cfg.eval_split)
        .unwrap()
        .examples
        .iter()
        .filter(|e| spam_synth::is_dark(e.text()))
        .collect();
    assert!(dark.len() >= 20, "only {} dark examples", dark.len());

    // With every vote abstaining the label model returns its prior.
    let prior_class = usize::from(spam_synth::PRIOR[1] > spam_synth::PRIOR[0]);
    let gold = |e: &&pws_core::data::Example| e.gold.unwrap();
    let prior_acc =
        dark.iter().filter(|e| gold(e) == prior_class).count() as f64 / dark.len() as f64;

    for &seed in &cfg.seeds {
        let model = LinearModel::load(Path::new(&out.run_dir).join(model_file(seed))).unwrap();
        let acc = dark
            .iter()
            .filter(|e| model.predict(&model.spec.featurize(e)) == gold(e))
            .count() as f64
            / dark.len() as f64;
        assert!(
            acc >= prior_acc + 0.10,
            "seed {seed}: end model {acc:.3} vs prior {prior_acc:.3}"
        );
    }
}
