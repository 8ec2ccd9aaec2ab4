//! Dataset ingestion, preprocessing, fold planning and batching.
//!
//! Two sources are supported: an image folder laid out as
//! `root/<class_name>/*.{png,jpg,jpeg}`, and CIFAR binary batch files.
//! Images are held as `(1, 3, h, w)` tensors with values in `[0, 1]` until
//! [`preprocess`] resizes and normalises them for the network.
//!
//! All shuffling uses ChaCha8 seeded through `seed_from_u64`, with the
//! stream number selecting independent sequences (stream 0 for fold
//! planning, stream `epoch + 1` for batch order), followed by a
//! Fisher-Yates shuffle. ChaCha8 output is specified bit-for-bit and does
//! not depend on platform word size or endianness.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::tensor::{Shape4, Tensor};

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// `(1, 3, h, w)`.
    pub image: Tensor,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub class_names: Vec<String>,
    pub samples: Vec<Sample>,
    pub source: String,
    /// CIFAR-100 coarse labels, kept so records can be written back unchanged.
    pub coarse_labels: Option<Vec<u8>>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.class_names.len()
    }

    pub fn labels(&self) -> Vec<usize> {
        self.samples.iter().map(|s| s.label).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_classes()];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Keeps only the named classes (in this dataset's class order) and
    /// relabels them `0..names.len()`.
    pub fn filter_classes(&self, names: &[String]) -> Result<Self> {
        let mut keep = Vec::new();
        for name in names {
            let idx = self
                .class_names
                .iter()
                .position(|c| c == name)
                .ok_or_else(|| Error::Data(format!("class {name:?} not found in {}", self.source)))?;
            if !keep.contains(&idx) {
                keep.push(idx);
            }
        }
        keep.sort_unstable();
        let remap = |label: usize| keep.iter().position(|&k| k == label);
        let samples = self
            .samples
            .iter()
            .filter_map(|s| {
                remap(s.label).map(|label| Sample {
                    image: s.image.clone(),
                    label,
                })
            })
            .collect();
        Ok(Self {
            class_names: keep.iter().map(|&k| self.class_names[k].clone()).collect(),
            samples,
            source: format!("{} (classes: {})", self.source, names.join(", ")),
            coarse_labels: None,
        })
    }

    /// Applies [`preprocess`] to every sample.
    pub fn preprocessed(&self, cfg: &PreprocessConfig) -> Result<Self> {
        let samples = self
            .samples
            .par_iter()
            .map(|s| {
                Ok(Sample {
                    image: preprocess(&s.image, cfg)?,
                    label: s.label,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            samples,
            ..self.clone()
        })
    }

    /// Stacks the given samples into one `(indices.len(), 3, h, w)` batch.
    pub fn batch(&self, indices: &[usize]) -> Result<(Tensor, Vec<usize>)> {
        let images: Vec<&Tensor> = indices.iter().map(|&i| &self.samples[i].image).collect();
        let labels = indices.iter().map(|&i| self.samples[i].label).collect();
        Ok((Tensor::stack(&images)?, labels))
    }
}

fn is_image_file(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .map(|e| matches!(e.to_ascii_lowercase().as_str(), "png" | "jpg" | "jpeg"))
        .unwrap_or(false)
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.retain(|p| {
        !p.file_name()
            .and_then(|n| n.to_str())
            .map(|n| n.starts_with('.'))
            .unwrap_or(true)
    });
    entries.sort();
    Ok(entries)
}

/// Decodes a PNG or JPEG into a `(1, 3, h, w)` tensor scaled to `[0, 1]`.
/// Grayscale is replicated across channels; alpha is dropped.
pub fn decode_image(path: &Path) -> Result<Tensor> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image_bytes(&bytes).map_err(|message| Error::Decode {
        path: path.to_owned(),
        message,
    })
}

pub fn decode_image_bytes(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let img = image::load_from_memory(bytes).map_err(|e| e.to_string())?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    if w == 0 || h == 0 {
        return Err("image has zero area".into());
    }
    let mut out = Tensor::zeros((1, 3, h, w));
    let plane = h * w;
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            out.data_mut()[c * plane + i] = f32::from(px[c]) / 255.0;
        }
    }
    Ok(out)
}

fn list_image_folder(root: &Path) -> Result<(Vec<String>, Vec<(PathBuf, usize)>)> {
    let class_dirs: Vec<PathBuf> = sorted_entries(root)?
        .into_iter()
        .filter(|p| p.is_dir())
        .collect();
    if class_dirs.len() < 2 {
        return Err(Error::Data(format!(
            "{} needs at least 2 class subdirectories, found {}",
            root.display(),
            class_dirs.len()
        )));
    }
    let mut class_names = Vec::new();
    let mut files = Vec::new();
    for (label, dir) in class_dirs.iter().enumerate() {
        let name = dir
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| Error::Data(format!("class directory {} is not UTF-8", dir.display())))?
            .to_owned();
        let images: Vec<PathBuf> = sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file() && is_image_file(p))
            .collect();
        if images.is_empty() {
            return Err(Error::Data(format!("class {name:?} has no PNG/JPEG images")));
        }
        files.extend(images.into_iter().map(|p| (p, label)));
        class_names.push(name);
    }
    Ok((class_names, files))
}

/// Loads `root/<class>/*.{png,jpg,jpeg}` at native resolution.
pub fn load_image_folder(root: impl AsRef<Path>) -> Result<LabeledDataset> {
    load_image_folder_with(root, None)
}

/// Like [`load_image_folder`], optionally preprocessing each image right
/// after it is decoded.
pub fn load_image_folder_with(
    root: impl AsRef<Path>,
    preprocess_cfg: Option<&PreprocessConfig>,
) -> Result<LabeledDataset> {
    let root = root.as_ref();
    let (class_names, files) = list_image_folder(root)?;
    let samples = files
        .par_iter()
        .map(|(path, label)| {
            let mut image = decode_image(path)?;
            if let Some(cfg) = preprocess_cfg {
                image = preprocess(&image, cfg)?;
            }
            Ok(Sample {
                image,
                label: *label,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LabeledDataset {
        class_names,
        samples,
        source: root.display().to_string(),
        coarse_labels: None,
    })
}

/// Paths of every image [`load_image_folder`] would read, in sample order.
pub fn image_folder_files(root: impl AsRef<Path>) -> Result<Vec<PathBuf>> {
    Ok(list_image_folder(root.as_ref())?
        .1
        .into_iter()
        .map(|(p, _)| p)
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CifarFlavor {
    /// One label byte per record.
    Cifar10,
    /// Coarse then fine label byte per record.
    Cifar100,
}

pub const CIFAR_SIDE: usize = 32;
pub const CIFAR_PIXELS: usize = 3 * CIFAR_SIDE * CIFAR_SIDE;

impl CifarFlavor {
    pub fn label_bytes(self) -> usize {
        match self {
            Self::Cifar10 => 1,
            Self::Cifar100 => 2,
        }
    }

    pub fn record_len(self) -> usize {
        self.label_bytes() + CIFAR_PIXELS
    }

    pub fn num_classes(self) -> usize {
        match self {
            Self::Cifar10 => 10,
            Self::Cifar100 => 100,
        }
    }

    fn names_file(self) -> &'static str {
        match self {
            Self::Cifar10 => "batches.meta.txt",
            Self::Cifar100 => "fine_label_names.txt",
        }
    }
}

/// Parses CIFAR records from memory.
pub fn parse_cifar_records(
    bytes: &[u8],
    flavor: CifarFlavor,
) -> Result<(Vec<Sample>, Option<Vec<u8>>)> {
    let rec = flavor.record_len();
    if !bytes.len().is_multiple_of(rec) {
        return Err(Error::Data(format!(
            "CIFAR data length {} is not a multiple of the {rec}-byte record size",
            bytes.len()
        )));
    }
    let mut samples = Vec::with_capacity(bytes.len() / rec);
    let mut coarse = Vec::new();
    for record in bytes.chunks_exact(rec) {
        let label = record[flavor.label_bytes() - 1] as usize;
        if label >= flavor.num_classes() {
            return Err(Error::Label {
                sample: samples.len(),
                label,
                classes: flavor.num_classes(),
            });
        }
        if flavor == CifarFlavor::Cifar100 {
            coarse.push(record[0]);
        }
        let data = record[flavor.label_bytes()..]
            .iter()
            .map(|&b| f32::from(b) / 255.0)
            .collect();
        samples.push(Sample {
            image: Tensor::from_vec((1, 3, CIFAR_SIDE, CIFAR_SIDE), data)?,
            label,
        });
    }
    Ok((samples, (flavor == CifarFlavor::Cifar100).then_some(coarse)))
}

/// Loads and concatenates CIFAR binary batch files.
///
/// Class names come from `batches.meta.txt` / `fine_label_names.txt` next to
/// the first file when present, and are `class_NN` otherwise.
pub fn load_cifar_binary(files: &[PathBuf], flavor: CifarFlavor) -> Result<LabeledDataset> {
    if files.is_empty() {
        return Err(Error::Data("no CIFAR files given".into()));
    }
    let mut samples = Vec::new();
    let mut coarse = Vec::new();
    for path in files {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        let (s, c) = parse_cifar_records(&bytes, flavor).map_err(|e| match e {
            Error::Data(msg) => Error::Data(format!("{}: {msg}", path.display())),
            other => other,
        })?;
        samples.extend(s);
        coarse.extend(c.unwrap_or_default());
    }
    let names_path = files[0]
        .parent()
        .map(|d| d.join(flavor.names_file()));
    let class_names = names_path
        .and_then(|p| std::fs::read_to_string(p).ok())
        .map(|text| {
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect::<Vec<_>>()
        })
        .filter(|names| names.len() == flavor.num_classes())
        .unwrap_or_else(|| {
            (0..flavor.num_classes())
                .map(|i| format!("class_{i:02}"))
                .collect()
        });
    Ok(LabeledDataset {
        class_names,
        samples,
        source: files
            .iter()
            .map(|p| p.display().to_string())
            .collect::<Vec<_>>()
            .join(","),
        coarse_labels: (flavor == CifarFlavor::Cifar100).then_some(coarse),
    })
}

/// Writes samples back in CIFAR record layout.
pub fn write_cifar_records(dataset: &LabeledDataset, flavor: CifarFlavor) -> Result<Vec<u8>> {
    let mut out = Vec::with_capacity(dataset.len() * flavor.record_len());
    for (i, s) in dataset.samples.iter().enumerate() {
        if s.image.shape() != Shape4::new(1, 3, CIFAR_SIDE, CIFAR_SIDE) {
            return Err(Error::shape("write_cifar_records", "(1, 3, 32, 32)", s.image.shape()));
        }
        if flavor == CifarFlavor::Cifar100 {
            let coarse = dataset
                .coarse_labels
                .as_ref()
                .and_then(|c| c.get(i))
                .copied()
                .unwrap_or(0);
            out.push(coarse);
        }
        out.push(s.label as u8);
        out.extend(
            s.image
                .data()
                .iter()
                .map(|&v| (v * 255.0).round().clamp(0.0, 255.0) as u8),
        );
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessConfig {
    pub target_h: usize,
    pub target_w: usize,
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            target_h: 32,
            target_w: 32,
            mean: [0.5; 3],
            std: [0.5; 3],
        }
    }
}

/// Bilinear resize with half-pixel centres: output pixel `i` samples source
/// coordinate `(i + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let s = img.shape();
    if s.h == 0 || s.w == 0 || out_h == 0 || out_w == 0 {
        return Err(Error::Data(format!(
            "cannot resize {s} to {out_h}x{out_w}: zero area"
        )));
    }
    if (s.h, s.w) == (out_h, out_w) {
        return Ok(img.clone());
    }
    let taps = |out: usize, len: usize| -> Vec<(usize, usize, f32)> {
        let scale = len as f64 / out as f64;
        (0..out)
            .map(|i| {
                let src = ((i as f64 + 0.5) * scale - 0.5).clamp(0.0, (len - 1) as f64);
                let lo = src.floor() as usize;
                let hi = (lo + 1).min(len - 1);
                (lo, hi, (src - lo as f64) as f32)
            })
            .collect()
    };
    let rows = taps(out_h, s.h);
    let cols = taps(out_w, s.w);
    let mut out = Tensor::zeros((s.n, s.c, out_h, out_w));
    for n in 0..s.n {
        for c in 0..s.c {
            for (i, &(y0, y1, fy)) in rows.iter().enumerate() {
                for (j, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let top = img.get(n, c, y0, x0) * (1.0 - fx) + img.get(n, c, y0, x1) * fx;
                    let bottom = img.get(n, c, y1, x0) * (1.0 - fx) + img.get(n, c, y1, x1) * fx;
                    out.set(n, c, i, j, top * (1.0 - fy) + bottom * fy);
                }
            }
        }
    }
    Ok(out)
}

/// Resizes to the target resolution, then applies `(x - mean) / std` per channel.
pub fn preprocess(img: &Tensor, cfg: &PreprocessConfig) -> Result<Tensor> {
    if cfg.std.iter().any(|&s| !(s > 0.0)) {
        return Err(Error::Config("normalisation std must be positive".into()));
    }
    if img.shape().c != 3 {
        return Err(Error::shape("preprocess", "(n, 3, h, w)", img.shape()));
    }
    let mut out = resize_bilinear(img, cfg.target_h, cfg.target_w)?;
    let s = out.shape();
    let plane = s.plane_len();
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let c = i % 3;
        for v in chunk {
            *v = (*v - cfg.mean[c]) / cfg.std[c];
        }
    }
    Ok(out)
}

/// `k` disjoint validation folds covering every sample index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FoldPlan {
    pub k: usize,
    pub seed: u64,
    pub folds: Vec<Vec<usize>>,
}

impl FoldPlan {
    /// All indices outside fold `i`, ascending.
    pub fn train_indices(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .folds
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .flat_map(|(_, f)| f.iter().copied())
            .collect();
        out.sort_unstable();
        out
    }

    pub fn total(&self) -> usize {
        self.folds.iter().map(Vec::len).sum()
    }

    /// One line per fold: `fold <i> (<size>): <indices...>`.
    pub fn to_text(&self) -> String {
        let mut out = format!("# fold plan k={} seed={}\n", self.k, self.seed);
        for (i, fold) in self.folds.iter().enumerate() {
            let _ = write!(out, "fold {i} ({}):", fold.len());
            for idx in fold {
                let _ = write!(out, " {idx}");
            }
            out.push('\n');
        }
        out
    }
}

/// Stratified k-fold plan.
///
/// Each class's indices are shuffled, the per-class lists are concatenated
/// in class order, and position `p` of the concatenation goes to fold
/// `p mod k`. Per-class fold counts therefore differ by at most one, and so
/// do total fold sizes.
pub fn kfold_split(dataset: &LabeledDataset, k: usize, seed: u64) -> Result<FoldPlan> {
    kfold_split_labels(&dataset.labels(), &dataset.class_names, k, seed)
}

pub fn kfold_split_labels(
    labels: &[usize],
    class_names: &[String],
    k: usize,
    seed: u64,
) -> Result<FoldPlan> {
    if k < 2 {
        return Err(Error::Config(format!("need at least 2 folds, got {k}")));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); class_names.len()];
    for (i, &label) in labels.iter().enumerate() {
        if label >= class_names.len() {
            return Err(Error::Label {
                sample: i,
                label,
                classes: class_names.len(),
            });
        }
        by_class[label].push(i);
    }
    for (name, members) in class_names.iter().zip(&by_class) {
        if members.len() < k {
            return Err(Error::Data(format!(
                "class {name:?} has {} samples, fewer than {k} folds",
                members.len()
            )));
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut folds = vec![Vec::new(); k];
    let mut position = 0;
    for members in &mut by_class {
        members.shuffle(&mut rng);
        for &idx in members.iter() {
            folds[position % k].push(idx);
            position += 1;
        }
    }
    for fold in &mut folds {
        fold.sort_unstable();
    }
    Ok(FoldPlan { k, seed, folds })
}

/// Seeded mini-batches over `indices` for one epoch.
///
/// A trailing batch with fewer than two samples is merged into the one
/// before it.
pub fn iterate_batches(indices: &[usize], batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order = indices.to_vec();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(epoch as u64 + 1);
    order.shuffle(&mut rng);
    let mut batches: Vec<Vec<usize>> = order.chunks(batch_size.max(1)).map(<[usize]>::to_vec).collect();
    if batches.len() >= 2 && batches.last().is_some_and(|b| b.len() < 2) {
        let tail = batches.pop().unwrap();
        batches.last_mut().unwrap().extend(tail);
    }
    batches
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic_labels(counts: &[usize]) -> (Vec<usize>, Vec<String>) {
        let labels = counts
            .iter()
            .enumerate()
            .flat_map(|(c, &n)| std::iter::repeat_n(c, n))
            .collect();
        let names = (0..counts.len()).map(|c| format!("c{c}")).collect();
        (labels, names)
    }

    #[test]
    fn fold_sizes_for_328() {
        let (labels, names) = synthetic_labels(&[102, 116, 110]);
        let plan = kfold_split_labels(&labels, &names, 5, 0).unwrap();
        let sizes: Vec<usize> = plan.folds.iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![66, 66, 66, 65, 65]);
        assert_eq!(plan.total(), 328);
    }

    #[test]
    fn folds_partition_and_stratify() {
        let (labels, names) = synthetic_labels(&[17, 9, 31, 5]);
        let plan = kfold_split_labels(&labels, &names, 5, 99).unwrap();
        let mut all: Vec<usize> = plan.folds.iter().flatten().copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..labels.len()).collect::<Vec<_>>());
        for c in 0..names.len() {
            let per: Vec<usize> = plan
                .folds
                .iter()
                .map(|f| f.iter().filter(|&&i| labels[i] == c).count())
                .collect();
            let (lo, hi) = (per.iter().min().unwrap(), per.iter().max().unwrap());
            assert!(hi - lo <= 1, "class {c}: {per:?}");
        }
        let train = plan.train_indices(2);
        assert_eq!(train.len() + plan.folds[2].len(), labels.len());
        assert!(train.iter().all(|i| !plan.folds[2].contains(i)));
    }

    #[test]
    fn fold_determinism() {
        let (labels, names) = synthetic_labels(&[102, 116, 110]);
        let a = kfold_split_labels(&labels, &names, 5, 7).unwrap();
        let b = kfold_split_labels(&labels, &names, 5, 7).unwrap();
        let c = kfold_split_labels(&labels, &names, 5, 8).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.folds, c.folds);
        let sizes = |p: &FoldPlan| p.folds.iter().map(Vec::len).collect::<Vec<_>>();
        assert_eq!(sizes(&a), sizes(&c));
    }

    #[test]
    fn fold_config_errors() {
        let (labels, names) = synthetic_labels(&[10, 3]);
        assert!(matches!(kfold_split_labels(&labels, &names, 1, 0), Err(Error::Config(_))));
        let err = kfold_split_labels(&labels, &names, 5, 0).unwrap_err();
        assert!(err.to_string().contains("\"c1\""), "{err}");
    }

    #[test]
    fn fold_text_export() {
        let (labels, names) = synthetic_labels(&[2, 2]);
        let plan = kfold_split_labels(&labels, &names, 2, 0).unwrap();
        let text = plan.to_text();
        assert!(text.starts_with("# fold plan k=2 seed=0\nfold 0 (2):"));
        assert_eq!(text.lines().count(), 3);
    }

    #[test]
    fn batch_sizes_and_merge() {
        let idx: Vec<usize> = (0..66).collect();
        let sizes: Vec<usize> = iterate_batches(&idx, 32, 1, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 32, 2]);
        let idx: Vec<usize> = (0..65).collect();
        let sizes: Vec<usize> = iterate_batches(&idx, 32, 1, 0).iter().map(Vec::len).collect();
        assert_eq!(sizes, vec![32, 33]);
    }

    #[test]
    fn batches_reshuffle_per_epoch() {
        let idx: Vec<usize> = (100..160).collect();
        let a: Vec<usize> = iterate_batches(&idx, 16, 3, 0).concat();
        let b: Vec<usize> = iterate_batches(&idx, 16, 3, 1).concat();
        assert_ne!(a, b);
        let (mut sa, mut sb) = (a.clone(), b);
        sa.sort_unstable();
        sb.sort_unstable();
        assert_eq!(sa, idx);
        assert_eq!(sb, idx);
        assert_eq!(a, iterate_batches(&idx, 16, 3, 0).concat());
    }

    #[test]
    fn cifar_single_record() {
        let mut bytes = vec![7u8];
        bytes.extend(std::iter::repeat_n(255u8, CIFAR_PIXELS));
        let (samples, coarse) = parse_cifar_records(&bytes, CifarFlavor::Cifar10).unwrap();
        assert_eq!(samples.len(), 1);
        assert_eq!(samples[0].label, 7);
        assert!(samples[0].image.data().iter().all(|&v| v == 1.0));
        assert!(coarse.is_none());

        let mut bytes = vec![3u8];
        bytes.extend(std::iter::repeat_n(128u8, CIFAR_PIXELS));
        let (samples, _) = parse_cifar_records(&bytes, CifarFlavor::Cifar10).unwrap();
        assert!((samples[0].image.data()[0] - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn cifar_length_and_label_errors() {
        let bytes = vec![0u8; CifarFlavor::Cifar10.record_len() + 1];
        assert!(matches!(
            parse_cifar_records(&bytes, CifarFlavor::Cifar10),
            Err(Error::Data(_))
        ));
        let mut bytes = vec![10u8];
        bytes.extend(vec![0u8; CIFAR_PIXELS]);
        assert!(matches!(
            parse_cifar_records(&bytes, CifarFlavor::Cifar10),
            Err(Error::Label { label: 10, .. })
        ));
    }

    #[test]
    fn cifar100_round_trip() {
        let mut bytes = Vec::new();
        for r in 0..3u8 {
            bytes.push(r + 10);
            bytes.push(r * 30);
            bytes.extend((0..CIFAR_PIXELS).map(|i| ((i * 7 + r as usize) % 256) as u8));
        }
        let (samples, coarse) = parse_cifar_records(&bytes, CifarFlavor::Cifar100).unwrap();
        assert_eq!(samples[2].label, 60);
        let ds = LabeledDataset {
            class_names: (0..100).map(|i| i.to_string()).collect(),
            samples,
            source: "mem".into(),
            coarse_labels: coarse,
        };
        assert_eq!(write_cifar_records(&ds, CifarFlavor::Cifar100).unwrap(), bytes);
    }

    #[test]
    fn resize_corners_keep_source_values() {
        let img = Tensor::from_vec((1, 1, 2, 2), vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let up = resize_bilinear(&img, 4, 4).unwrap();
        assert!(up.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
        assert_eq!(up.get(0, 0, 0, 0), 0.0);
        assert_eq!(up.get(0, 0, 0, 3), 1.0);
        assert_eq!(up.get(0, 0, 3, 0), 1.0);
        assert_eq!(up.get(0, 0, 3, 3), 0.0);
        // (1, 0) maps to source (-0.25 -> 0, 0.25): 0.75*0 + 0.25*1
        assert!((up.get(0, 0, 0, 1) - 0.25).abs() < 1e-6);
    }

    #[test]
    fn preprocess_cases() {
        let cfg = PreprocessConfig::default();
        let img = Tensor::new_filled((1, 3, 17, 45), 0.5);
        let out = preprocess(&img, &cfg).unwrap();
        assert_eq!(out.shape(), Shape4::new(1, 3, 32, 32));
        assert!(out.data().iter().all(|&v| v == 0.0));

        let data: Vec<f32> = (0..3 * 32 * 32).map(|i| (i % 11) as f32 / 10.0).collect();
        let img = Tensor::from_vec((1, 3, 32, 32), data.clone()).unwrap();
        let out = preprocess(&img, &cfg).unwrap();
        for (o, x) in out.data().iter().zip(&data) {
            assert_eq!(*o, (x - 0.5) / 0.5);
        }
        assert!(out.data().iter().all(|v| (-1.0..=1.0).contains(v)));

        assert!(preprocess(&Tensor::zeros((1, 3, 0, 4)), &cfg).is_err());
    }

    #[test]
    fn filter_classes_relabels() {
        let mk = |label| Sample {
            image: Tensor::zeros((1, 3, 1, 1)),
            label,
        };
        let ds = LabeledDataset {
            class_names: vec!["a".into(), "b".into(), "c".into()],
            samples: vec![mk(0), mk(1), mk(2), mk(2)],
            source: "mem".into(),
            coarse_labels: None,
        };
        let f = ds.filter_classes(&["c".into(), "a".into()]).unwrap();
        assert_eq!(f.class_names, vec!["a", "c"]);
        assert_eq!(f.labels(), vec![0, 1, 1]);
        assert!(ds.filter_classes(&["zzz".into()]).is_err());
    }
}
