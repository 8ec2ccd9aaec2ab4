mod common;

use std::path::Path;

use image::{GrayImage, Luma, Rgb, RgbImage};
use voltavision::data::{
    image_folder_files, load_cifar_binary, load_image_folder, load_image_folder_with, write_cifar_records,
    CifarFlavor, PreprocessConfig,
};
use voltavision::Error;

fn rgb_png(path: &Path, w: u32, h: u32, color: [u8; 3]) {
    RgbImage::from_pixel(w, h, Rgb(color)).save(path).unwrap();
}

fn two_class_folder(root: &Path) {
    for (class, color) in [("beta", [255, 0, 0]), ("alpha", [0, 0, 255])] {
        std::fs::create_dir(root.join(class)).unwrap();
        for i in 0..3 {
            rgb_png(&root.join(class).join(format!("{i}.png")), 40, 24, color);
        }
    }
}

#[test]
fn folder_classes_are_sorted_and_pixels_scaled() {
    let dir = tempfile::tempdir().unwrap();
    two_class_folder(dir.path());
    let ds = load_image_folder(dir.path()).unwrap();
    assert_eq!(ds.class_names, ["alpha", "beta"]);
    assert_eq!(ds.len(), 6);
    assert_eq!(ds.class_counts(), [3, 3]);
    let first = &ds.samples[0];
    assert_eq!(first.label, 0);
    assert_eq!(first.image.shape().to_string(), "(1, 3, 24, 40)");
    assert_eq!(first.image.get(0, 2, 0, 0), 1.0);
    assert_eq!(first.image.get(0, 0, 0, 0), 0.0);
}

#[test]
fn preprocessing_on_load_gives_normalized_32x32() {
    let dir = tempfile::tempdir().unwrap();
    two_class_folder(dir.path());
    let ds = load_image_folder_with(dir.path(), Some(&PreprocessConfig::default())).unwrap();
    for s in &ds.samples {
        assert_eq!(s.image.shape().to_string(), "(1, 3, 32, 32)");
        assert!(s.image.data().iter().all(|v| (-1.0..=1.0).contains(v)));
    }
    let blue = &ds.samples[0].image;
    assert!((blue.get(0, 2, 16, 16) - 1.0).abs() < 1e-6);
    assert!((blue.get(0, 0, 16, 16) + 1.0).abs() < 1e-6);
}

#[test]
fn grayscale_is_replicated_across_channels() {
    let dir = tempfile::tempdir().unwrap();
    two_class_folder(dir.path());
    GrayImage::from_pixel(8, 8, Luma([51])).save(dir.path().join("alpha/gray.png")).unwrap();
    let files = image_folder_files(dir.path()).unwrap();
    let idx = files.iter().position(|p| p.ends_with("gray.png")).unwrap();
    let ds = load_image_folder(dir.path()).unwrap();
    let img = &ds.samples[idx].image;
    for c in 0..3 {
        assert!((img.get(0, c, 3, 3) - 0.2).abs() < 1e-6);
    }
}

#[test]
fn hidden_and_non_image_files_are_skipped() {
    let dir = tempfile::tempdir().unwrap();
    two_class_folder(dir.path());
    std::fs::write(dir.path().join("alpha/notes.txt"), "hello").unwrap();
    std::fs::write(dir.path().join("alpha/.hidden.png"), "junk").unwrap();
    assert_eq!(load_image_folder(dir.path()).unwrap().len(), 6);
}

#[test]
fn single_class_folder_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::create_dir(dir.path().join("only")).unwrap();
    rgb_png(&dir.path().join("only/a.png"), 4, 4, [1, 2, 3]);
    assert!(matches!(load_image_folder(dir.path()), Err(Error::Data(_))));
}

#[test]
fn corrupt_image_is_a_decode_error() {
    let dir = tempfile::tempdir().unwrap();
    two_class_folder(dir.path());
    std::fs::write(dir.path().join("beta/broken.png"), b"\x89PNG not really").unwrap();
    let err = load_image_folder(dir.path()).unwrap_err();
    assert!(matches!(err, Error::Decode { .. }), "{err:?}");
    assert!(err.to_string().contains("decode error"));
    assert!(err.is_io_or_decode());
}

#[test]
fn missing_root_is_an_io_error() {
    let err = load_image_folder("/definitely/not/here").unwrap_err();
    assert!(err.is_io_or_decode(), "{err:?}");
}

#[test]
fn cifar_files_round_trip_through_disk() {
    let ds = common::separable_dataset(&[2, 3, 1], 5);
    let raw = voltavision::data::LabeledDataset {
        samples: ds
            .samples
            .iter()
            .map(|s| voltavision::data::Sample {
                image: {
                    let v = s.image.data().iter().map(|x| ((x + 1.0) / 2.0).clamp(0.0, 1.0)).collect();
                    voltavision::Tensor::from_vec(s.image.shape(), v).unwrap()
                },
                label: s.label,
            })
            .collect(),
        ..ds
    };
    let bytes = write_cifar_records(&raw, CifarFlavor::Cifar10).unwrap();
    assert_eq!(bytes.len(), 6 * CifarFlavor::Cifar10.record_len());
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("data_batch_1.bin");
    let b = dir.path().join("data_batch_2.bin");
    std::fs::write(&a, &bytes).unwrap();
    std::fs::write(&b, &bytes).unwrap();
    let loaded = load_cifar_binary(&[a, b], CifarFlavor::Cifar10).unwrap();
    assert_eq!(loaded.len(), 12);
    assert_eq!(loaded.labels()[..6], raw.labels()[..]);
    for (x, y) in loaded.samples[0].image.data().iter().zip(raw.samples[0].image.data()) {
        assert!((x - y).abs() <= 0.5 / 255.0 + 1e-6);
    }
}

#[test]
fn truncated_cifar_file_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("short.bin");
    std::fs::write(&p, vec![0u8; CifarFlavor::Cifar10.record_len() + 5]).unwrap();
    assert!(load_cifar_binary(&[p], CifarFlavor::Cifar10).is_err());
}
