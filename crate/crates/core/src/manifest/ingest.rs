//! Readers for the published directory layouts.
//!
//! * CUB-200-2011: `images.txt`, `image_class_labels.txt`,
//!   `train_test_split.txt`, `classes.txt`, pixels under `images/`.
//! * Stanford Cars (devkit annotations exported to CSV): `names.csv`,
//!   `anno_train.csv`, `anno_test.csv` with rows
//!   `filename,x1,y1,x2,y2,class`, pixels under `cars_train/` and `cars_test/`.
//! * FGVC-Aircraft: `data/variants.txt`, `data/images_variant_trainval.txt`,
//!   `data/images_variant_test.txt`, pixels under `data/images/`.
//! * Generic: `<root>/<class>/<image>` or `<root>/{train,test}/<class>/<image>`.

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use walkdir::WalkDir;

use super::{DatasetKind, DatasetManifest, ImageRecord, ManifestError, Provenance, Split};

const IMAGE_EXTENSIONS: [&str; 5] = ["jpg", "jpeg", "png", "bmp", "webp"];

#[derive(Debug, Clone)]
pub struct IngestOptions {
    /// Probe every image header and drop unreadable files as record-level issues.
    pub verify_images: bool,
    /// Overrides the default manifest name (`CUB`, `Cars`, `Aircraft`, or the directory name).
    pub name: Option<String>,
}

impl Default for IngestOptions {
    fn default() -> Self {
        Self {
            verify_images: true,
            name: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IngestIssue {
    pub path: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct IngestReport {
    pub manifest: DatasetManifest,
    pub issues: Vec<IngestIssue>,
}

pub fn load_source_dataset(
    root: impl AsRef<Path>,
    kind: DatasetKind,
    options: &IngestOptions,
) -> Result<IngestReport, ManifestError> {
    let root = root.as_ref();
    if !root.is_dir() {
        return Err(ManifestError::Empty(root.display().to_string()));
    }
    let (classes, records, split_policy) = match kind {
        DatasetKind::Cub => read_cub(root)?,
        DatasetKind::Cars => read_cars(root)?,
        DatasetKind::Aircraft => read_aircraft(root)?,
        DatasetKind::Generic => read_generic(root)?,
    };
    if records.is_empty() {
        return Err(ManifestError::Empty(root.display().to_string()));
    }

    let mut issues = Vec::new();
    let records = if options.verify_images {
        records
            .into_iter()
            .filter(|r| match image::image_dimensions(root.join(&r.source_path)) {
                Ok(_) => true,
                Err(e) => {
                    issues.push(IngestIssue {
                        path: r.source_path.clone(),
                        message: e.to_string(),
                    });
                    false
                }
            })
            .collect()
    } else {
        records
    };

    let name = options.name.clone().unwrap_or_else(|| match kind {
        DatasetKind::Generic => root
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "generic".into()),
        k => k.display_name().to_string(),
    });
    let manifest = DatasetManifest {
        name,
        kind,
        classes,
        records,
        provenance: Provenance {
            split_policy,
            ..Provenance::original()
        },
    };
    manifest.validate()?;
    Ok(IngestReport { manifest, issues })
}

type Parsed = (Vec<String>, Vec<ImageRecord>, Option<String>);

fn read_lines(path: &Path) -> Result<Vec<(usize, String)>, ManifestError> {
    if !path.is_file() {
        return Err(ManifestError::MissingFile(path.display().to_string()));
    }
    let text = fs::read_to_string(path).map_err(|e| ManifestError::io(path, e))?;
    Ok(text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim().to_string()))
        .filter(|(_, l)| !l.is_empty())
        .collect())
}

fn annotation_error(path: &Path, line: usize, message: impl Into<String>) -> ManifestError {
    ManifestError::Annotation {
        file: path.display().to_string(),
        line,
        message: message.into(),
    }
}

/// Parses `<id> <value...>` lines into an id-keyed map.
fn id_table(path: &Path) -> Result<Vec<(u64, String, usize)>, ManifestError> {
    read_lines(path)?
        .into_iter()
        .map(|(n, line)| {
            let (id, rest) = line
                .split_once(char::is_whitespace)
                .ok_or_else(|| annotation_error(path, n, "expected `<id> <value>`"))?;
            let id = id
                .parse::<u64>()
                .map_err(|_| annotation_error(path, n, format!("bad id `{id}`")))?;
            Ok((id, rest.trim().to_string(), n))
        })
        .collect()
}

fn read_cub(root: &Path) -> Result<Parsed, ManifestError> {
    let images_txt = root.join("images.txt");
    let labels_txt = root.join("image_class_labels.txt");
    let split_txt = root.join("train_test_split.txt");
    let classes_txt = root.join("classes.txt");

    let classes_raw = id_table(&classes_txt)?;
    let mut classes = vec![String::new(); classes_raw.len()];
    for (id, name, n) in classes_raw {
        let slot = classes
            .get_mut((id as usize).wrapping_sub(1))
            .ok_or_else(|| annotation_error(&classes_txt, n, format!("class id {id} out of range")))?;
        *slot = name;
    }

    let labels: HashMap<u64, (String, usize)> = id_table(&labels_txt)?
        .into_iter()
        .map(|(id, v, n)| (id, (v, n)))
        .collect();
    let splits: HashMap<u64, (String, usize)> = id_table(&split_txt)?
        .into_iter()
        .map(|(id, v, n)| (id, (v, n)))
        .collect();

    let mut records = Vec::new();
    for (id, rel, n) in id_table(&images_txt)? {
        let (label, ln) = labels
            .get(&id)
            .ok_or_else(|| annotation_error(&labels_txt, 0, format!("no label for image {id}")))?;
        let class_id = label
            .parse::<u32>()
            .ok()
            .filter(|c| *c >= 1 && (*c as usize) <= classes.len())
            .ok_or_else(|| annotation_error(&labels_txt, *ln, format!("bad class `{label}`")))?
            - 1;
        let split = match splits.get(&id).map(|(s, n)| (s.as_str(), *n)) {
            Some(("1", _)) => Split::Train,
            Some(("0", _)) => Split::Test,
            Some((s, n)) => return Err(annotation_error(&split_txt, n, format!("bad split flag `{s}`"))),
            None => return Err(annotation_error(&images_txt, n, format!("no split for image {id}"))),
        };
        records.push(ImageRecord::new(
            format!("images/{rel}"),
            class_id,
            classes[class_id as usize].clone(),
            split,
        ));
    }
    Ok((classes, records, None))
}

fn read_cars(root: &Path) -> Result<Parsed, ManifestError> {
    let names = root.join("names.csv");
    let classes: Vec<String> = read_lines(&names)?.into_iter().map(|(_, l)| l).collect();
    let mut records = Vec::new();
    for (file, dir, split) in [
        ("anno_train.csv", "cars_train", Split::Train),
        ("anno_test.csv", "cars_test", Split::Test),
    ] {
        let path = root.join(file);
        for (n, line) in read_lines(&path)? {
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 6 {
                return Err(annotation_error(&path, n, "expected 6 comma-separated fields"));
            }
            let class = fields[5]
                .parse::<u32>()
                .ok()
                .filter(|c| *c >= 1 && (*c as usize) <= classes.len())
                .ok_or_else(|| annotation_error(&path, n, format!("bad class `{}`", fields[5])))?;
            let class_id = class - 1;
            records.push(ImageRecord::new(
                format!("{dir}/{}", fields[0]),
                class_id,
                classes[class_id as usize].clone(),
                split,
            ));
        }
    }
    Ok((classes, records, None))
}

fn read_aircraft(root: &Path) -> Result<Parsed, ManifestError> {
    let data = root.join("data");
    let classes: Vec<String> = read_lines(&data.join("variants.txt"))?
        .into_iter()
        .map(|(_, l)| l)
        .collect();
    let index: HashMap<&str, u32> = classes
        .iter()
        .enumerate()
        .map(|(i, c)| (c.as_str(), i as u32))
        .collect();
    let mut records = Vec::new();
    for (file, split) in [
        ("images_variant_trainval.txt", Split::Train),
        ("images_variant_test.txt", Split::Test),
    ] {
        let path = data.join(file);
        for (n, line) in read_lines(&path)? {
            let (id, variant) = line
                .split_once(' ')
                .ok_or_else(|| annotation_error(&path, n, "expected `<image id> <variant>`"))?;
            let class_id = *index
                .get(variant.trim())
                .ok_or_else(|| annotation_error(&path, n, format!("unknown variant `{variant}`")))?;
            records.push(ImageRecord::new(
                format!("data/images/{id}.jpg"),
                class_id,
                classes[class_id as usize].clone(),
                split,
            ));
        }
    }
    Ok((
        classes,
        records,
        Some("trainval as train, test as test".to_string()),
    ))
}

fn is_image(path: &Path) -> bool {
    path.extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| IMAGE_EXTENSIONS.contains(&e.to_ascii_lowercase().as_str()))
}

fn class_dirs(dir: &Path) -> Result<Vec<PathBuf>, ManifestError> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| ManifestError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    out.sort();
    Ok(out)
}

fn read_generic(root: &Path) -> Result<Parsed, ManifestError> {
    let has_splits = root.join("train").is_dir() && root.join("test").is_dir();
    let split_roots: Vec<(PathBuf, Split)> = if has_splits {
        vec![(root.join("train"), Split::Train), (root.join("test"), Split::Test)]
    } else {
        vec![(root.to_path_buf(), Split::Train)]
    };

    let mut class_names = BTreeSet::new();
    for (dir, _) in &split_roots {
        for c in class_dirs(dir)? {
            class_names.insert(c.file_name().unwrap().to_string_lossy().into_owned());
        }
    }
    let classes: Vec<String> = class_names.into_iter().collect();
    let mut records = Vec::new();
    for (dir, split) in &split_roots {
        for class_dir in class_dirs(dir)? {
            let name = class_dir.file_name().unwrap().to_string_lossy().into_owned();
            let class_id = classes.binary_search(&name).expect("collected above") as u32;
            let mut files: Vec<PathBuf> = WalkDir::new(&class_dir)
                .into_iter()
                .filter_map(Result::ok)
                .filter(|e| e.file_type().is_file() && is_image(e.path()))
                .map(|e| e.into_path())
                .collect();
            files.sort();
            for f in files {
                let rel = f.strip_prefix(root).expect("walked under root");
                let rel = rel
                    .components()
                    .map(|c| c.as_os_str().to_string_lossy())
                    .collect::<Vec<_>>()
                    .join("/");
                records.push(ImageRecord::new(rel, class_id, name.clone(), *split));
            }
        }
    }
    Ok((classes, records, None))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Cursor;

    fn tiny_png() -> Vec<u8> {
        let img = image::RgbImage::from_pixel(2, 2, image::Rgb([10, 20, 30]));
        let mut buf = Cursor::new(Vec::new());
        img.write_to(&mut buf, image::ImageFormat::Png).unwrap();
        buf.into_inner()
    }

    fn write(root: &Path, rel: &str, bytes: &[u8]) {
        let p = root.join(rel);
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, bytes).unwrap();
    }

    #[test]
    fn empty_directory_is_error() {
        let dir = tempfile::tempdir().unwrap();
        for kind in [DatasetKind::Cub, DatasetKind::Cars, DatasetKind::Aircraft, DatasetKind::Generic] {
            assert!(load_source_dataset(dir.path(), kind, &IngestOptions::default()).is_err());
        }
    }

    #[test]
    fn generic_two_by_two_fixture() {
        let dir = tempfile::tempdir().unwrap();
        let png = tiny_png();
        for rel in ["cat/a.png", "cat/b.png", "dog/a.png", "dog/b.png"] {
            write(dir.path(), rel, &png);
        }
        let rep = load_source_dataset(dir.path(), DatasetKind::Generic, &IngestOptions::default()).unwrap();
        assert_eq!(rep.manifest.classes, vec!["cat", "dog"]);
        assert_eq!(rep.manifest.records.len(), 4);
        assert_eq!(rep.manifest.records[2].record_id, "dog/a.png");
        assert_eq!(rep.manifest.records[2].class_id, 1);
        assert!(rep.issues.is_empty());
    }

    #[test]
    fn unreadable_image_is_record_level_issue() {
        let dir = tempfile::tempdir().unwrap();
        write(dir.path(), "cat/a.png", &tiny_png());
        write(dir.path(), "cat/broken.png", b"not an image");
        let rep = load_source_dataset(dir.path(), DatasetKind::Generic, &IngestOptions::default()).unwrap();
        assert_eq!(rep.manifest.records.len(), 1);
        assert_eq!(rep.issues.len(), 1);
        assert_eq!(rep.issues[0].path, "cat/broken.png");
    }

    #[test]
    fn cub_layout_and_missing_file() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        write(r, "classes.txt", b"1 001.Albatross\n2 002.Auklet\n");
        write(r, "images.txt", b"1 001.Albatross/x.jpg\n2 002.Auklet/y.jpg\n");
        write(r, "image_class_labels.txt", b"1 1\n2 2\n");
        let opts = IngestOptions {
            verify_images: false,
            name: None,
        };
        match load_source_dataset(r, DatasetKind::Cub, &opts) {
            Err(ManifestError::MissingFile(f)) => assert!(f.ends_with("train_test_split.txt")),
            other => panic!("{other:?}"),
        }
        write(r, "train_test_split.txt", b"1 1\n2 0\n");
        let m = load_source_dataset(r, DatasetKind::Cub, &opts).unwrap().manifest;
        assert_eq!(m.name, "CUB");
        assert_eq!(m.records[0].source_path, "images/001.Albatross/x.jpg");
        assert_eq!(m.records[1].split, Split::Test);
        assert_eq!(m.records[1].class_name, "002.Auklet");
    }

    #[test]
    fn aircraft_records_split_policy() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        write(r, "data/variants.txt", b"707-320\nA300B4\n");
        write(r, "data/images_variant_trainval.txt", b"0034309 707-320\n");
        write(r, "data/images_variant_test.txt", b"0056978 A300B4\n");
        let opts = IngestOptions {
            verify_images: false,
            name: None,
        };
        let m = load_source_dataset(r, DatasetKind::Aircraft, &opts).unwrap().manifest;
        assert_eq!(m.records[1].source_path, "data/images/0056978.jpg");
        assert_eq!(m.records[1].class_id, 1);
        assert!(m.provenance.split_policy.is_some());
    }

    #[test]
    fn cars_bad_class_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let r = dir.path();
        write(r, "names.csv", b"AM General Hummer SUV 2000\n");
        write(r, "anno_train.csv", b"00001.jpg,1,2,3,4,1\n00002.jpg,1,2,3,4,7\n");
        write(r, "anno_test.csv", b"");
        let opts = IngestOptions {
            verify_images: false,
            name: None,
        };
        match load_source_dataset(r, DatasetKind::Cars, &opts) {
            Err(ManifestError::Annotation { line, .. }) => assert_eq!(line, 2),
            other => panic!("{other:?}"),
        }
    }
}
