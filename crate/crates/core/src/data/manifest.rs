use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::BadConfig(format!("unknown split {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Record {
    /// Relative to the manifest root, `/`-separated.
    pub path: String,
    pub class: usize,
    pub split: Split,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub classes: Vec<String>,
    pub seed: u64,
    pub records: Vec<Record>,
}

/// Train/val/test counts for `n` items at 7:2:1.
///
/// Largest-remainder apportionment: each split gets the floor of its exact
/// quota, and leftover items go to the largest fractional remainders, ties
/// broken in train, val, test order. Every count is within one item of
/// its exact quota.
pub fn split_counts(n: usize) -> [usize; 3] {
    const PARTS: [usize; 3] = [7, 2, 1];
    let mut counts = PARTS.map(|p| n * p / 10);
    let rems = PARTS.map(|p| n * p % 10);
    let mut order = [0, 1, 2];
    order.sort_by_key(|&i| std::cmp::Reverse(rems[i]));
    let leftover = n - counts.iter().sum::<usize>();
    for &i in order.iter().take(leftover) {
        counts[i] += 1;
    }
    counts
}

fn is_image(path: &Path) -> bool {
    path.is_file()
        && path
            .extension()
            .and_then(|e| e.to_str())
            .is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = std::fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Enumerate `root/<class>/<file>.png` and assign splits.
///
/// Classes are the sorted subdirectory names. Within each class the sorted
/// file list is shuffled by a generator seeded from `seed` on a per-class
/// stream, then cut into train, val and test.
pub fn build_manifest(root: impl AsRef<Path>, seed: u64) -> Result<DatasetManifest> {
    let root = root.as_ref();
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if class_dirs.is_empty() {
        return Err(Error::NoClasses(root.to_path_buf()));
    }
    let mut classes = Vec::with_capacity(class_dirs.len());
    let mut records = Vec::new();
    for (class, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::BadConfig(format!("class directory {} is not UTF-8", dir.display())))?;
        let files: Vec<String> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| is_image(p))
            .map(|p| {
                let file = p
                    .file_name()
                    .and_then(|n| n.to_str())
                    .ok_or_else(|| Error::BadConfig(format!("file name {} is not UTF-8", p.display())))?;
                Ok(format!("{name}/{file}"))
            })
            .collect::<Result<_>>()?;
        if files.is_empty() {
            return Err(Error::EmptyClass(dir.clone()));
        }
        let mut order: Vec<usize> = (0..files.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(class as u64);
        order.shuffle(&mut rng);
        let [n_train, n_val, _] = split_counts(files.len());
        let mut splits = vec![Split::Test; files.len()];
        for (rank, &i) in order.iter().enumerate() {
            splits[i] = if rank < n_train {
                Split::Train
            } else if rank < n_train + n_val {
                Split::Val
            } else {
                Split::Test
            };
        }
        records.extend(
            files
                .into_iter()
                .zip(splits)
                .map(|(path, split)| Record { path, class, split }),
        );
        classes.push(name.to_string());
    }
    Ok(DatasetManifest {
        root: root.to_path_buf(),
        classes,
        seed,
        records,
    })
}

impl DatasetManifest {
    pub fn split(&self, split: Split) -> Vec<&Record> {
        self.records.iter().filter(|r| r.split == split).collect()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn absolute(&self, record: &Record) -> PathBuf {
        self.root.join(record.path.split('/').collect::<PathBuf>())
    }

    /// `split<TAB>class_index<TAB>relative_path`, one record per line.
    pub fn to_tsv(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            s.push_str(&format!("{}\t{}\t{}\n", r.split, r.class, r.path));
        }
        s
    }

    /// Inverse of [`to_tsv`](Self::to_tsv). Class names are taken from the
    /// first path component of each record.
    pub fn from_tsv(root: impl AsRef<Path>, seed: u64, text: &str) -> Result<Self> {
        let mut records = Vec::new();
        let mut classes: Vec<Option<String>> = Vec::new();
        for (lineno, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || Error::BadConfig(format!("manifest line {}: {line:?}", lineno + 1));
            let mut cols = line.split('\t');
            let (Some(split), Some(class), Some(path), None) = (cols.next(), cols.next(), cols.next(), cols.next())
            else {
                return Err(bad());
            };
            let split: Split = split.parse()?;
            let class: usize = class.parse().map_err(|_| bad())?;
            let name = path.split('/').next().ok_or_else(bad)?.to_string();
            if classes.len() <= class {
                classes.resize(class + 1, None);
            }
            match &classes[class] {
                Some(existing) if *existing != name => return Err(bad()),
                _ => classes[class] = Some(name),
            }
            records.push(Record {
                path: path.to_string(),
                class,
                split,
            });
        }
        let classes = classes
            .into_iter()
            .enumerate()
            .map(|(i, c)| c.ok_or_else(|| Error::BadConfig(format!("manifest has no records for class {i}"))))
            .collect::<Result<Vec<_>>>()?;
        if classes.is_empty() {
            return Err(Error::NoClasses(root.as_ref().to_path_buf()));
        }
        Ok(Self {
            root: root.as_ref().to_path_buf(),
            classes,
            seed,
            records,
        })
    }
}
