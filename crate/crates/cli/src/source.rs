//! `--data` arguments and class-name sidecar files.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use voltavision::data::{load_cifar_binary, load_image_folder_with, CifarFlavor, LabeledDataset, PreprocessConfig};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DataSource {
    Folder(PathBuf),
    /// `None` means the flavor is inferred from the file length.
    Cifar(Option<CifarFlavor>, PathBuf),
}

impl DataSource {
    pub fn path(&self) -> &Path {
        match self {
            DataSource::Folder(p) | DataSource::Cifar(_, p) => p,
        }
    }
}

impl FromStr for DataSource {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let cifar = |flavor, rest: &str| {
            if rest.is_empty() {
                Err(format!("{s:?}: missing file after prefix"))
            } else {
                Ok(DataSource::Cifar(flavor, PathBuf::from(rest)))
            }
        };
        if let Some(rest) = s.strip_prefix("cifar10:") {
            cifar(Some(CifarFlavor::Cifar10), rest)
        } else if let Some(rest) = s.strip_prefix("cifar100:") {
            cifar(Some(CifarFlavor::Cifar100), rest)
        } else if let Some(rest) = s.strip_prefix("cifar:") {
            cifar(None, rest)
        } else if s.is_empty() {
            Err("empty data path".into())
        } else {
            Ok(DataSource::Folder(PathBuf::from(s)))
        }
    }
}

impl fmt::Display for DataSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DataSource::Folder(p) => write!(f, "{}", p.display()),
            DataSource::Cifar(None, p) => write!(f, "cifar:{}", p.display()),
            DataSource::Cifar(Some(CifarFlavor::Cifar10), p) => write!(f, "cifar10:{}", p.display()),
            DataSource::Cifar(Some(CifarFlavor::Cifar100), p) => write!(f, "cifar100:{}", p.display()),
        }
    }
}

/// Picks the flavor whose record length divides the file size. A size that
/// fits both is read as CIFAR-10.
fn infer_flavor(path: &Path) -> Result<CifarFlavor, CliError> {
    let len = std::fs::metadata(path).map_err(|e| CliError::io(path, e))?.len() as usize;
    [CifarFlavor::Cifar10, CifarFlavor::Cifar100]
        .into_iter()
        .find(|f| len > 0 && len.is_multiple_of(f.record_len()))
        .ok_or_else(|| {
            CliError::Config(format!(
                "{}: {len} bytes is not a whole number of CIFAR-10 or CIFAR-100 records",
                path.display()
            ))
        })
}

/// Loads the sources as one 32x32 normalized dataset. Either a single image
/// folder or any number of CIFAR files of one flavor.
pub fn load_sources(sources: &[DataSource]) -> Result<LabeledDataset, CliError> {
    let cfg = PreprocessConfig::default();
    match sources {
        [] => Err(CliError::Config("at least one --data source is required".into())),
        [DataSource::Folder(dir)] => Ok(load_image_folder_with(dir, Some(&cfg))?),
        _ => {
            let mut flavor = None;
            let mut files = Vec::new();
            for src in sources {
                let DataSource::Cifar(f, path) = src else {
                    return Err(CliError::Config(
                        "an image folder cannot be combined with other --data sources".into(),
                    ));
                };
                let f = match f {
                    Some(f) => *f,
                    None => infer_flavor(path)?,
                };
                if flavor.is_some_and(|prev| prev != f) {
                    return Err(CliError::Config("CIFAR-10 and CIFAR-100 files cannot be mixed".into()));
                }
                flavor = Some(f);
                files.push(path.clone());
            }
            let ds = load_cifar_binary(&files, flavor.expect("non-empty"))?;
            Ok(ds.preprocessed(&cfg)?)
        }
    }
}

/// `<checkpoint>.classes.txt`
pub fn classes_path_for(checkpoint: &Path) -> PathBuf {
    let mut name = checkpoint.as_os_str().to_owned();
    name.push(".classes.txt");
    PathBuf::from(name)
}

pub fn write_class_names(path: &Path, names: &[String]) -> Result<(), CliError> {
    let mut text = names.join("\n");
    text.push('\n');
    std::fs::write(path, text).map_err(|e| CliError::io(path, e))
}

pub fn read_class_names(path: &Path) -> Result<Vec<String>, CliError> {
    let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    Ok(text.lines().map(str::trim).filter(|l| !l.is_empty()).map(String::from).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_prefixes() {
        assert_eq!(
            "cifar10:a/b.bin".parse::<DataSource>().unwrap(),
            DataSource::Cifar(Some(CifarFlavor::Cifar10), "a/b.bin".into())
        );
        assert_eq!(
            "cifar100:x".parse::<DataSource>().unwrap(),
            DataSource::Cifar(Some(CifarFlavor::Cifar100), "x".into())
        );
        assert_eq!("cifar:x".parse::<DataSource>().unwrap(), DataSource::Cifar(None, "x".into()));
        assert_eq!("imgs".parse::<DataSource>().unwrap(), DataSource::Folder("imgs".into()));
        assert!("cifar:".parse::<DataSource>().is_err());
    }

    #[test]
    fn display_round_trips() {
        for s in ["cifar10:a.bin", "cifar100:b.bin", "cifar:c.bin", "dir/x"] {
            assert_eq!(s.parse::<DataSource>().unwrap().to_string(), s);
        }
    }

    #[test]
    fn flavor_from_length() {
        let dir = tempfile::tempdir().unwrap();
        let ten = dir.path().join("ten.bin");
        std::fs::write(&ten, vec![0u8; 2 * CifarFlavor::Cifar10.record_len()]).unwrap();
        assert_eq!(infer_flavor(&ten).unwrap(), CifarFlavor::Cifar10);
        let hundred = dir.path().join("hundred.bin");
        std::fs::write(&hundred, vec![0u8; 3 * CifarFlavor::Cifar100.record_len()]).unwrap();
        assert_eq!(infer_flavor(&hundred).unwrap(), CifarFlavor::Cifar100);
        let bad = dir.path().join("bad.bin");
        std::fs::write(&bad, vec![0u8; 10]).unwrap();
        assert!(infer_flavor(&bad).is_err());
    }

    #[test]
    fn class_names_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = classes_path_for(&dir.path().join("m.vvc"));
        let names = vec!["Capacitor".to_string(), "Resistor".into(), "Transistor".into()];
        write_class_names(&p, &names).unwrap();
        assert_eq!(read_class_names(&p).unwrap(), names);
    }
}
