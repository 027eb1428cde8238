//! Plain-text dataset manifests. Fields are tab-separated; `#` lines form
//! the header and every other line is one record:
//!
//! ```text
//! #split  train
//! #rgb_mean  114.1  111.9  103.2
//! #kernel  bicubic a=-0.5 half-pixel antialias
//! #skipped  broken.png  <reason>
//! hr/0001.png  lr_x2/0001.png  2
//! ```
//!
//! Record paths are relative to the manifest's directory.

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::data::image::ImageBuf;
use crate::error::{Error, Result};

pub const KERNEL_NOTE: &str = "bicubic a=-0.5 half-pixel antialias clamped-edges";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
        })
    }
}

impl FromStr for Split {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            _ => Err(format!("unknown split `{s}`")),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub hr: PathBuf,
    pub lr: PathBuf,
    pub scale: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Manifest {
    pub split: Split,
    pub rgb_mean: [f32; 3],
    pub kernel: String,
    /// `(file, reason)` for inputs left out during preparation.
    pub skipped: Vec<(String, String)>,
    pub records: Vec<Record>,
    /// Directory the record paths are relative to.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(split: Split, root: impl Into<PathBuf>) -> Self {
        Self {
            split,
            rgb_mean: [0.0; 3],
            kernel: KERNEL_NOTE.to_string(),
            skipped: Vec::new(),
            records: Vec::new(),
            root: root.into(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("#split\t{}\n", self.split);
        let [r, g, b] = self.rgb_mean;
        out += &format!("#rgb_mean\t{r}\t{g}\t{b}\n");
        out += &format!("#kernel\t{}\n", self.kernel);
        for (file, reason) in &self.skipped {
            out += &format!("#skipped\t{file}\t{}\n", reason.replace(['\t', '\n'], " "));
        }
        for rec in &self.records {
            out += &format!(
                "{}\t{}\t{}\n",
                rec.hr.display(),
                rec.lr.display(),
                rec.scale
            );
        }
        out
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let bad = |line: usize, msg: String| Error::Manifest {
            path: path.to_path_buf(),
            msg: format!("line {line}: {msg}"),
        };
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        let mut split = None;
        let mut m = Manifest::new(Split::Train, root);
        m.kernel.clear();
        for (i, line) in text.lines().enumerate() {
            let n = i + 1;
            if line.trim().is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            if let Some(key) = fields[0].strip_prefix('#') {
                match (key, &fields[1..]) {
                    ("split", [s]) => split = Some(s.parse().map_err(|e| bad(n, e))?),
                    ("rgb_mean", [r, g, b]) => {
                        let parse = |s: &str| {
                            s.parse::<f32>()
                                .ok()
                                .filter(|v| v.is_finite())
                                .ok_or_else(|| bad(n, format!("bad rgb_mean value `{s}`")))
                        };
                        m.rgb_mean = [parse(r)?, parse(g)?, parse(b)?];
                    }
                    ("kernel", [k]) => m.kernel = k.to_string(),
                    ("skipped", [file, reason]) => {
                        m.skipped.push((file.to_string(), reason.to_string()))
                    }
                    _ => return Err(bad(n, format!("unrecognized header `{line}`"))),
                }
                continue;
            }
            let [hr, lr, scale] = fields[..] else {
                return Err(bad(
                    n,
                    format!("expected 3 tab-separated fields, got {}", fields.len()),
                ));
            };
            let scale = scale
                .parse::<usize>()
                .ok()
                .filter(|&s| s >= 1)
                .ok_or_else(|| bad(n, format!("bad scale `{scale}`")))?;
            m.records.push(Record {
                hr: hr.into(),
                lr: lr.into(),
                scale,
            });
        }
        m.split = split.ok_or_else(|| bad(0, "missing #split header".into()))?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn resolve(&self, rel: &Path) -> PathBuf {
        self.root.join(rel)
    }

    /// Loads every pair, checking `lr == floor(hr / scale)` per side.
    pub fn load_pairs(&self) -> Result<Vec<(ImageBuf, ImageBuf)>> {
        self.records
            .iter()
            .map(|rec| {
                let hr_path = self.resolve(&rec.hr);
                let hr = ImageBuf::load(&hr_path)?;
                let lr = ImageBuf::load(&self.resolve(&rec.lr))?;
                let want = (hr.width() / rec.scale, hr.height() / rec.scale);
                if (lr.width(), lr.height()) != want {
                    return Err(Error::Manifest {
                        path: hr_path,
                        msg: format!(
                            "LR is {}x{}, expected {}x{} for scale {}",
                            lr.width(),
                            lr.height(),
                            want.0,
                            want.1,
                            rec.scale
                        ),
                    });
                }
                Ok((hr, lr))
            })
            .collect()
    }

    /// The common scale of all records.
    pub fn scale(&self) -> Option<usize> {
        let first = self.records.first()?.scale;
        self.records
            .iter()
            .all(|r| r.scale == first)
            .then_some(first)
    }
}
