use std::fs;
use std::path::Path;

use wdsrkit::blocks::BlockSpec;
use wdsrkit::data::synth::write_corpus;
use wdsrkit::data::{bicubic_downsample, prepare_dataset, ImageBuf, Manifest, Prepared, Split};
use wdsrkit::layers::Normalization;
use wdsrkit::network::{Model, NetSpec};
use wdsrkit::train::{self, MemorySink, NullSink, PairSet, TrainConfig};

fn prepared(dir: &Path, scale: usize) -> Prepared {
    let hr_in = dir.join("in");
    write_corpus(&hr_in, 12, 41, 37, 3).unwrap();
    // things preparation has to step around
    fs::write(hr_in.join("notes.txt"), "not an image").unwrap();
    ImageBuf::filled(1, 1, [9, 9, 9])
        .save(&hr_in.join("tiny.png"))
        .unwrap();
    fs::write(hr_in.join(".hidden.png"), "ignored").unwrap();
    prepare_dataset(&hr_in, &dir.join("prep"), scale, 3).unwrap()
}

#[test]
fn preparation_writes_consistent_manifests() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), 3);
    assert_eq!(prep.train.split, Split::Train);
    assert_eq!(prep.val.split, Split::Val);
    assert_eq!(prep.train.records.len(), 9);
    assert_eq!(prep.val.records.len(), 3);
    let mut skipped: Vec<_> = prep.skipped().iter().map(|(f, _)| f.as_str()).collect();
    skipped.sort();
    assert_eq!(skipped, ["notes.txt", "tiny.png"]);

    // the validation split is the tail of the name order
    let val_names: Vec<_> = prep
        .val
        .records
        .iter()
        .map(|r| r.hr.file_name().unwrap().to_owned())
        .collect();
    assert_eq!(
        val_names,
        ["scene_009.png", "scene_010.png", "scene_011.png"]
    );

    // manifests survive a write/read cycle
    assert_eq!(Manifest::read(&prep.train_path).unwrap(), prep.train);
    assert_eq!(Manifest::read(&prep.val_path).unwrap(), prep.val);

    let mut sums = [0.0f64; 3];
    let mut pixels = 0;
    for (hr, lr) in prep.train.load_pairs().unwrap() {
        assert_eq!(
            (hr.width(), hr.height()),
            (39, 36),
            "cropped to a multiple of the scale"
        );
        assert_eq!((lr.width(), lr.height()), (13, 12));
        assert_eq!(lr, bicubic_downsample(&hr, 3).unwrap());
        let s = hr.channel_sums();
        (0..3).for_each(|c| sums[c] += s[c]);
        pixels += hr.pixel_count();
    }
    for (mean, sum) in prep.train.rgb_mean.iter().zip(sums) {
        assert!((*mean as f64 - sum / pixels as f64).abs() < 1e-3);
    }
    assert_eq!(prep.train.rgb_mean, prep.val.rgb_mean);
}

#[test]
fn mismatched_lr_is_rejected_on_load() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), 2);
    let rec = &prep.val.records[0];
    ImageBuf::filled(5, 5, [0, 0, 0])
        .save(&prep.val.resolve(&rec.lr))
        .unwrap();
    let err = prep.val.load_pairs().unwrap_err();
    assert!(err.to_string().contains("expected"), "{err}");
}

fn short_run(prep: &Prepared, seed: u64) -> (train::TrainReport, Model<f32>) {
    let spec = NetSpec::wdsr(
        2,
        2,
        BlockSpec::wdsr_a(6, 4).with_normalization(Normalization::WeightNorm),
    )
    .with_rgb_mean(prep.train.rgb_mean);
    let mut model = Model::from_seed(spec, seed).unwrap();
    let data = PairSet::from_manifest(&prep.train).unwrap();
    let val = prep.val.load_pairs().unwrap();
    let cfg = TrainConfig {
        lr0: 1e-3,
        batch_size: 4,
        patch_size: 16,
        max_steps: 30,
        val_every: 10,
        seed,
        ..Default::default()
    };
    let sink = MemorySink::new();
    let mut snapshots = Vec::new();
    let report = train::train(&mut model, &data, &val, &cfg, &sink, &mut |_, step| {
        snapshots.push(step);
        Ok(())
    })
    .unwrap();
    assert_eq!(snapshots, [10, 20, 30]);
    let rows = sink.rows();
    assert_eq!(rows.len(), 30);
    assert_eq!(rows.iter().filter(|r| r.val_psnr.is_some()).count(), 3);
    (report, model)
}

#[test]
fn training_is_deterministic_per_seed() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), 2);
    let (a, ma) = short_run(&prep, 5);
    let (b, mb) = short_run(&prep, 5);
    assert_eq!(a, b);
    for ((_, pa), (_, pb)) in ma.params.iter().zip(mb.params.iter()) {
        assert_eq!(pa.value, pb.value);
    }
    let (c, _) = short_run(&prep, 6);
    assert_ne!(a.losses, c.losses);
    assert!(a.losses.iter().all(|l| l.is_finite()));
    assert_eq!(a.validations.len(), 3);
}

#[test]
fn patches_larger_than_the_data_are_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let prep = prepared(dir.path(), 2);
    let data = PairSet::from_manifest(&prep.train).unwrap();
    let spec = NetSpec::wdsr(2, 1, BlockSpec::wdsr_a(4, 4));
    let mut model = Model::from_seed(spec, 0).unwrap();
    let cfg = TrainConfig {
        patch_size: 64,
        batch_size: 1,
        max_steps: 1,
        ..Default::default()
    };
    let err =
        train::train(&mut model, &data, &[], &cfg, &NullSink, &mut |_, _| Ok(())).unwrap_err();
    assert_eq!(err.category(), wdsrkit::ErrorCategory::Data);
}
