use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::data::bicubic::bicubic_downsample;
use crate::data::image::ImageBuf;
use crate::data::manifest::{Manifest, Record, Split};
use crate::error::{Error, Result};

pub const TRAIN_MANIFEST: &str = "train.manifest";
pub const VAL_MANIFEST: &str = "val.manifest";

#[derive(Clone, Debug, PartialEq)]
pub struct Prepared {
    pub train: Manifest,
    pub val: Manifest,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
}

impl Prepared {
    pub fn skipped(&self) -> &[(String, String)] {
        &self.train.skipped
    }
}

enum Outcome {
    Kept { stem: String, hr: ImageBuf },
    Skipped { file: String, reason: String },
}

fn process(path: &Path, scale: usize, out_dir: &Path) -> Result<Outcome> {
    let file = path
        .file_name()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    let skip = |reason: String| {
        Ok(Outcome::Skipped {
            file: file.clone(),
            reason,
        })
    };
    let img = match ImageBuf::load(path) {
        Ok(img) => img,
        Err(e) => {
            log::warn!("skipping {}: {e}", path.display());
            return skip(e.to_string());
        }
    };
    if img.width() < scale || img.height() < scale {
        log::warn!("skipping {}: smaller than the scale factor", path.display());
        return skip(format!(
            "{}x{} is smaller than scale {scale}",
            img.width(),
            img.height()
        ));
    }
    let hr = img.crop_to_multiple(scale)?;
    let lr = bicubic_downsample(&hr, scale)?;
    let stem = path
        .file_stem()
        .unwrap_or_default()
        .to_string_lossy()
        .into_owned();
    hr.save(&out_dir.join("hr").join(format!("{stem}.png")))?;
    lr.save(
        &out_dir
            .join(format!("lr_x{scale}"))
            .join(format!("{stem}.png")),
    )?;
    Ok(Outcome::Kept { stem, hr })
}

/// Crops every image in `hr_dir` to a multiple of `scale`, writes HR and
/// bicubic LR copies under `out_dir`, and writes train/val manifests. The
/// last `val_count` files in name order form the validation split (at least
/// one image always stays in training).
pub fn prepare_dataset(
    hr_dir: &Path,
    out_dir: &Path,
    scale: usize,
    val_count: usize,
) -> Result<Prepared> {
    if scale == 0 {
        return Err(Error::Config("scale must be at least 1".into()));
    }
    let mut inputs: Vec<PathBuf> = fs::read_dir(hr_dir)
        .map_err(|e| Error::io(hr_dir, e))?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.is_file())
        .filter(|p| {
            !p.file_name()
                .is_some_and(|n| n.to_string_lossy().starts_with('.'))
        })
        .collect();
    inputs.sort();
    if inputs.is_empty() {
        return Err(Error::NoImages(hr_dir.to_path_buf()));
    }
    for sub in ["hr".to_string(), format!("lr_x{scale}")] {
        let d = out_dir.join(sub);
        fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
    }

    let outcomes = inputs
        .par_iter()
        .map(|p| process(p, scale, out_dir))
        .collect::<Result<Vec<_>>>()?;
    let mut kept = Vec::new();
    let mut skipped = Vec::new();
    for o in outcomes {
        match o {
            Outcome::Kept { stem, hr } => kept.push((stem, hr)),
            Outcome::Skipped { file, reason } => skipped.push((file, reason)),
        }
    }
    if kept.is_empty() {
        return Err(Error::NoImages(hr_dir.to_path_buf()));
    }
    let n_val = val_count.min(kept.len() - 1);
    let n_train = kept.len() - n_val;

    let mut sums = [0.0f64; 3];
    let mut pixels = 0usize;
    for (_, hr) in &kept[..n_train] {
        let s = hr.channel_sums();
        (0..3).for_each(|c| sums[c] += s[c]);
        pixels += hr.pixel_count();
    }
    let rgb_mean = sums.map(|s| (s / pixels as f64) as f32);

    let manifest = |split: Split, items: &[(String, ImageBuf)]| {
        let mut m = Manifest::new(split, out_dir);
        m.rgb_mean = rgb_mean;
        m.skipped = skipped.clone();
        m.records = items
            .iter()
            .map(|(stem, _)| Record {
                hr: PathBuf::from("hr").join(format!("{stem}.png")),
                lr: PathBuf::from(format!("lr_x{scale}")).join(format!("{stem}.png")),
                scale,
            })
            .collect();
        m
    };
    let train = manifest(Split::Train, &kept[..n_train]);
    let val = manifest(Split::Val, &kept[n_train..]);
    let train_path = out_dir.join(TRAIN_MANIFEST);
    let val_path = out_dir.join(VAL_MANIFEST);
    train.write(&train_path)?;
    val.write(&val_path)?;
    Ok(Prepared {
        train,
        val,
        train_path,
        val_path,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_dir_is_an_error() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        let err = prepare_dataset(src.path(), out.path(), 2, 1).unwrap_err();
        assert!(matches!(err, Error::NoImages(_)));
        assert!(err.to_string().contains("no images found"));
    }

    #[test]
    fn gray_corpus_mean_and_skips() {
        let src = tempfile::tempdir().unwrap();
        let out = tempfile::tempdir().unwrap();
        for i in 0..3 {
            ImageBuf::filled(9, 7, [128; 3])
                .save(&src.path().join(format!("{i}.png")))
                .unwrap();
        }
        fs::write(src.path().join("notes.png"), b"not a png").unwrap();
        let prep = prepare_dataset(src.path(), out.path(), 2, 1).unwrap();
        assert_eq!(prep.train.rgb_mean, [128.0; 3]);
        assert_eq!(prep.train.records.len(), 2);
        assert_eq!(prep.val.records.len(), 1);
        assert_eq!(prep.skipped().len(), 1);
        let reread = Manifest::read(&prep.train_path).unwrap();
        assert_eq!(reread.skipped[0].0, "notes.png");
        for (hr, lr) in reread.load_pairs().unwrap() {
            assert_eq!((hr.width(), hr.height()), (8, 6));
            assert_eq!((lr.width(), lr.height()), (4, 3));
        }
    }
}
