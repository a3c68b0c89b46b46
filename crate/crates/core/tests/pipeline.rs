use zbcnn::data::synth::SYNTH_CLASSES;
use zbcnn::data::{load_manifest, split_folds, synth_generate, write_synth, SplitProtocol};
use zbcnn::introspect::{conv_maxima, receptive_window, top_n, NeuronRef, ReconMode, Traced};
use zbcnn::train::{
    evaluate, fold_splits, init_params, load_model, save_model, train, Control, CvProtocol, InitConfig, TrainConfig,
};
use zbcnn::{ModelSpec, Rng};

fn classes() -> Vec<String> {
    SYNTH_CLASSES.iter().map(|s| s.to_string()).collect()
}

fn tiny_spec() -> ModelSpec {
    ModelSpec::with_widths([1, 96, 96], [2, 3, 4], 5, 8, 6, 0.5)
}

#[test]
fn synthetic_set_survives_disk_roundtrip() {
    let ds = synth_generate(3, 4, &classes(), &Rng::new(1)).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_synth(&ds, dir.path()).unwrap();
    let back = load_manifest(&dir.path().join("manifest.csv"), dir.path(), &classes()).unwrap();
    assert_eq!(back.len(), ds.len());
    for (a, b) in ds.samples.iter().zip(&back.samples) {
        assert_eq!(a.label, b.label);
        assert_eq!(a.subject_id, b.subject_id);
        assert_eq!(a.fau_set, b.fau_set);
        // Generated pixels are already on the 8-bit grid.
        assert!(a.image.bit_eq(&b.image));
    }
}

#[test]
fn train_save_load_evaluate() {
    let ds = synth_generate(4, 6, &classes(), &Rng::new(2)).unwrap();
    let set = ds.prepare_all::<f32>().unwrap();
    let (p, _) = init_params::<f32>(&tiny_spec(), &InitConfig::default(), &mut Rng::new(3)).unwrap();
    let cfg = TrainConfig { epochs: 2, ..TrainConfig::default() };
    let mut seen = 0;
    let out = train(p, &set, None, &cfg, &mut Rng::new(4), &mut |m, _| {
        seen += 1;
        assert!(m.train_loss.is_finite());
        Control::Continue
    })
    .unwrap();
    assert_eq!(seen, 2);
    assert_eq!(out.params.meta.epochs, 2);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.zbc");
    save_model(&out.params, &path).unwrap();
    let back = load_model::<f32>(&path).unwrap();
    assert!(back.bit_eq(&out.params));
    assert_eq!(evaluate(&back, &set).unwrap(), evaluate(&out.params, &set).unwrap());
}

#[test]
fn hook_can_stop_early() {
    let ds = synth_generate(2, 6, &classes(), &Rng::new(5)).unwrap();
    let set = ds.prepare_all::<f32>().unwrap();
    let (p, _) = init_params::<f32>(&tiny_spec(), &InitConfig::default(), &mut Rng::new(3)).unwrap();
    let cfg = TrainConfig { epochs: 10, ..TrainConfig::default() };
    let out = train(p, &set, None, &cfg, &mut Rng::new(4), &mut |m, _| {
        if m.epoch == 3 {
            Control::Stop
        } else {
            Control::Continue
        }
    })
    .unwrap();
    assert_eq!(out.history.len(), 3);
}

#[test]
fn subject_folds_are_disjoint() {
    let ds = synth_generate(12, 3, &classes(), &Rng::new(6)).unwrap();
    let ds = split_folds(ds, &SplitProtocol::SubjectKFold { folds: 10 }, &mut Rng::new(7)).unwrap();
    let splits = fold_splits(&ds, CvProtocol::CkPlus10Fold).unwrap();
    assert_eq!(splits.len(), 10);
    let mut tested = vec![0usize; ds.len()];
    for s in &splits {
        let subj = |v: &[usize]| v.iter().map(|&i| ds.samples[i].subject_id.clone()).collect::<std::collections::BTreeSet<_>>();
        assert!(subj(&s.train).is_disjoint(&subj(&s.test)));
        for &i in &s.test {
            tested[i] += 1;
        }
    }
    assert!(tested.iter().all(|&c| c == 1), "every sample is tested exactly once");
}

#[test]
fn reconstructions_of_top_images_stay_in_their_window() {
    let ds = synth_generate(2, 6, &classes(), &Rng::new(8)).unwrap();
    let set = ds.prepare_all::<f32>().unwrap();
    let (p, _) = init_params::<f32>(&tiny_spec(), &InitConfig::default(), &mut Rng::new(9)).unwrap();
    let table = conv_maxima(&p, &set, 3).unwrap();
    let conv = p.spec.conv_index(3).unwrap();
    for f in 0..table.filters {
        for e in top_n(&table, f, 3).unwrap() {
            let pos = set.sample_ids.iter().position(|&id| id == e.sample_id).unwrap();
            let traced = Traced::new(&p, &set.images[pos], 3).unwrap();
            let n = NeuronRef { layer: 3, filter: f, y: e.position.0, x: e.position.1 };
            let rec = traced.reconstruct(&n, ReconMode::Plain).unwrap();
            let (y0, y1, x0, x1) = receptive_window(&p.spec, conv, n.y, n.x).unwrap();
            assert_eq!((y1 - y0, x1 - x0), (32, 32));
            for y in 0..96 {
                for x in 0..96 {
                    if !((y0..y1).contains(&y) && (x0..x1).contains(&x)) {
                        assert_eq!(rec.map.at(0, 0, y, x), 0.0);
                    }
                }
            }
        }
    }
}
