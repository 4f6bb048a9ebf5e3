//! On-disk dataset layouts.
//!
//! Pair layout:
//! ```text
//! root/visual/<stem>.png
//! root/tactile/<stem>.png
//! root/labels.csv        stem,category,hard_soft,rough_smooth
//! root/split.csv         stem,split   (optional; train|test)
//! ```
//! Grasp layout:
//! ```text
//! root/<attempt>/{rgb_during.png, tac_left_during.png, tac_right_during.png, label.txt}
//! ```

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{Image, PairedDataset, PairedSample, Split, TaskLabels};
use crate::error::{Error, Result};

/// Seed of the 80/20 split used when a layout carries no split file.
pub const DEFAULT_SPLIT_SEED: u64 = 0x5EED;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Layout {
    Pair,
    Grasp,
}

/// Reads an 8-bit PNG as RGB scaled to `[0,1]`.
pub fn load_png(path: &Path) -> Result<Image> {
    let rgb = image::open(path)?.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0.0f32; 3 * w * h];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * w * h + i] = px.0[c] as f32 / 255.0;
        }
    }
    Image::new(3, h, w, data)
}

/// Writes a 3-channel image as an 8-bit RGB PNG.
pub fn save_png(img: &Image, path: &Path) -> Result<()> {
    if img.channels != 3 {
        return Err(Error::DatasetFormat(format!("can only save 3-channel images, got {}", img.channels)));
    }
    let hw = img.height * img.width;
    let mut buf = image::RgbImage::new(img.width as u32, img.height as u32);
    for (i, px) in buf.pixels_mut().enumerate() {
        for c in 0..3 {
            px.0[c] = (img.data[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        }
    }
    buf.save(path)?;
    Ok(())
}

fn png_stems(dir: &Path) -> Result<BTreeMap<String, PathBuf>> {
    let mut out = BTreeMap::new();
    if !dir.is_dir() {
        return Ok(out);
    }
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        if path.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                out.insert(stem.to_string(), path.clone());
            }
        }
    }
    Ok(out)
}

fn parse_opt(field: Option<&str>, what: &str, stem: &str) -> Result<Option<usize>> {
    match field.map(str::trim) {
        None | Some("") => Ok(None),
        Some(v) => v
            .parse()
            .map(Some)
            .map_err(|_| Error::DatasetFormat(format!("{what} '{v}' for stem '{stem}' is not a class index"))),
    }
}

fn read_labels(path: &Path) -> Result<HashMap<String, TaskLabels>> {
    let mut reader = csv::ReaderBuilder::new().flexible(true).from_path(path)?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let stem = row.get(0).unwrap_or("").trim().to_string();
        if stem.is_empty() {
            continue;
        }
        let labels = TaskLabels {
            category: parse_opt(row.get(1), "category", &stem)?,
            hard_soft: parse_opt(row.get(2), "hard_soft", &stem)?,
            rough_smooth: parse_opt(row.get(3), "rough_smooth", &stem)?,
            grasp: None,
        };
        if out.insert(stem.clone(), labels).is_some() {
            return Err(Error::DatasetFormat(format!("duplicate stem '{stem}' in labels.csv")));
        }
    }
    Ok(out)
}

fn read_split(path: &Path) -> Result<HashMap<String, Split>> {
    let mut reader = csv::Reader::from_path(path)?;
    let mut out = HashMap::new();
    for row in reader.records() {
        let row = row?;
        let stem = row.get(0).unwrap_or("").trim().to_string();
        let split = match row.get(1).map(str::trim) {
            Some("train") => Split::Train,
            Some("test") => Split::Test,
            other => {
                return Err(Error::DatasetFormat(format!("split '{}' for stem '{stem}'", other.unwrap_or(""))))
            }
        };
        if out.insert(stem.clone(), split).is_some() {
            return Err(Error::DatasetFormat(format!("duplicate stem '{stem}' in split.csv")));
        }
    }
    Ok(out)
}

/// Loads the pair layout. Stems with only one modality are skipped and
/// counted in [`PairedDataset::skipped`].
pub fn load_pair_dataset(root: &Path) -> Result<PairedDataset> {
    let labels_path = root.join("labels.csv");
    if !labels_path.is_file() {
        return Err(Error::DatasetFormat(format!("{} is missing", labels_path.display())));
    }
    let labels = read_labels(&labels_path)?;
    let split_path = root.join("split.csv");
    let splits = if split_path.is_file() { Some(read_split(&split_path)?) } else { None };

    let visual = png_stems(&root.join("visual"))?;
    let tactile = png_stems(&root.join("tactile"))?;
    let mut skipped = tactile.keys().filter(|k| !visual.contains_key(*k)).count();
    let mut samples = Vec::new();
    for (stem, vpath) in &visual {
        let Some(tpath) = tactile.get(stem) else {
            skipped += 1;
            continue;
        };
        samples.push(PairedSample {
            stem: stem.clone(),
            visual: load_png(vpath)?,
            tactile: load_png(tpath)?,
            labels: labels.get(stem).copied().unwrap_or_default(),
            split: splits
                .as_ref()
                .and_then(|s| s.get(stem).copied())
                .unwrap_or(Split::Train),
        });
    }
    if samples.is_empty() {
        return Err(Error::DatasetFormat(format!("no visual/tactile pairs under {}", root.display())));
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} stems without a counterpart image");
    }
    let mut dataset = PairedDataset { samples, skipped };
    if splits.is_none() {
        dataset.assign_random_split(0.8, DEFAULT_SPLIT_SEED);
    }
    Ok(dataset)
}

/// Writes `dataset` in the pair layout, including `split.csv`.
pub fn export_pair_dataset(dataset: &PairedDataset, root: &Path) -> Result<()> {
    fs::create_dir_all(root.join("visual"))?;
    fs::create_dir_all(root.join("tactile"))?;
    let mut labels = csv::Writer::from_path(root.join("labels.csv"))?;
    labels.write_record(["stem", "category", "hard_soft", "rough_smooth"])?;
    let mut split = csv::Writer::from_path(root.join("split.csv"))?;
    split.write_record(["stem", "split"])?;
    let opt = |v: Option<usize>| v.map(|x| x.to_string()).unwrap_or_default();
    for s in &dataset.samples {
        save_png(&s.visual, &root.join("visual").join(format!("{}.png", s.stem)))?;
        save_png(&s.tactile, &root.join("tactile").join(format!("{}.png", s.stem)))?;
        labels.write_record([
            s.stem.clone(),
            opt(s.labels.category),
            opt(s.labels.hard_soft),
            opt(s.labels.rough_smooth),
        ])?;
        let name = match s.split {
            Split::Train => "train",
            Split::Test => "test",
        };
        split.write_record([s.stem.as_str(), name])?;
    }
    labels.flush()?;
    split.flush()?;
    Ok(())
}

const GRASP_IMAGES: [&str; 3] = ["rgb_during.png", "tac_left_during.png", "tac_right_during.png"];

/// Loads the grasp layout: 'during' RGB as visual, left and right tactile
/// frames stacked into 6 channels. Incomplete attempts are skipped.
pub fn load_grasp_dataset(root: &Path) -> Result<PairedDataset> {
    let mut attempts: Vec<PathBuf> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir())
        .collect();
    attempts.sort();
    let mut samples = Vec::new();
    let mut skipped = 0;
    for dir in attempts {
        let stem = dir.file_name().and_then(|s| s.to_str()).unwrap_or_default().to_string();
        if GRASP_IMAGES.iter().any(|f| !dir.join(f).is_file()) {
            log::warn!("attempt '{stem}' lacks a 'during' frame; skipped");
            skipped += 1;
            continue;
        }
        let label_path = dir.join("label.txt");
        let raw = fs::read_to_string(&label_path)
            .map_err(|_| Error::DatasetFormat(format!("attempt '{stem}' has no label.txt")))?;
        let label = match raw.trim() {
            "0" => 0,
            "1" => 1,
            other => return Err(Error::DatasetFormat(format!("attempt '{stem}': label '{other}' is not 0/1"))),
        };
        let left = load_png(&dir.join(GRASP_IMAGES[1]))?;
        let right = load_png(&dir.join(GRASP_IMAGES[2]))?;
        samples.push(PairedSample {
            stem,
            visual: load_png(&dir.join(GRASP_IMAGES[0]))?,
            tactile: left.stack_channels(&right)?,
            labels: TaskLabels {
                grasp: Some(label),
                ..TaskLabels::default()
            },
            split: Split::Train,
        });
    }
    if samples.is_empty() {
        return Err(Error::DatasetFormat(format!("no complete grasp attempts under {}", root.display())));
    }
    let mut dataset = PairedDataset { samples, skipped };
    dataset.assign_random_split(0.8, DEFAULT_SPLIT_SEED);
    Ok(dataset)
}

/// Recognizes the layout of `root`.
pub fn detect_layout(root: &Path) -> Result<Layout> {
    if root.join("labels.csv").is_file() || root.join("visual").is_dir() {
        return Ok(Layout::Pair);
    }
    if root.is_dir() {
        for entry in fs::read_dir(root)? {
            let p = entry?.path();
            if p.is_dir() && (p.join("label.txt").is_file() || p.join(GRASP_IMAGES[0]).is_file()) {
                return Ok(Layout::Grasp);
            }
        }
    }
    Err(Error::DatasetFormat(format!("{} is neither a pair nor a grasp layout", root.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(v: f32) -> Image {
        Image::filled(3, 4, 4, v)
    }

    fn write_pair(root: &Path, stem: &str, visual: bool, tactile: bool) {
        fs::create_dir_all(root.join("visual")).unwrap();
        fs::create_dir_all(root.join("tactile")).unwrap();
        if visual {
            save_png(&img(0.2), &root.join("visual").join(format!("{stem}.png"))).unwrap();
        }
        if tactile {
            save_png(&img(0.6), &root.join("tactile").join(format!("{stem}.png"))).unwrap();
        }
    }

    #[test]
    fn matching_rule_counts_skips() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for s in ["a", "b", "c"] {
            write_pair(root, s, true, true);
        }
        write_pair(root, "d", true, false);
        fs::write(root.join("labels.csv"), "stem,category,hard_soft,rough_smooth\na,0,1,\nb,1,,0\nc,2,0,1\nd,0,0,0\n").unwrap();
        let ds = load_pair_dataset(root).unwrap();
        assert_eq!(ds.len(), 3);
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.samples[0].labels.category, Some(0));
        assert_eq!(ds.samples[0].labels.rough_smooth, None);
        assert_eq!(ds.samples[1].labels.hard_soft, None);
        assert_eq!(detect_layout(root).unwrap(), Layout::Pair);
    }

    #[test]
    fn split_file_is_honored() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for s in ["a", "b"] {
            write_pair(root, s, true, true);
        }
        fs::write(root.join("labels.csv"), "stem,category,hard_soft,rough_smooth\na,0,,\nb,1,,\n").unwrap();
        fs::write(root.join("split.csv"), "stem,split\na,test\nb,train\n").unwrap();
        let ds = load_pair_dataset(root).unwrap();
        assert_eq!(ds.samples[0].split, Split::Test);
        assert_eq!(ds.samples[1].split, Split::Train);
    }

    #[test]
    fn format_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(matches!(load_pair_dataset(dir.path()), Err(Error::DatasetFormat(_))));
        assert!(detect_layout(dir.path()).is_err());
        write_pair(dir.path(), "a", true, true);
        fs::write(dir.path().join("labels.csv"), "stem,category,hard_soft,rough_smooth\na,0,,\na,1,,\n").unwrap();
        let err = load_pair_dataset(dir.path()).unwrap_err();
        assert!(err.to_string().contains("'a'"), "{err}");
    }

    #[test]
    fn grasp_layout() {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path();
        for (i, complete, label) in [(0, true, "1"), (1, false, "0"), (2, true, "0\n")] {
            let a = root.join(format!("attempt{i}"));
            fs::create_dir_all(&a).unwrap();
            save_png(&img(0.1), &a.join("rgb_during.png")).unwrap();
            save_png(&img(0.3), &a.join("tac_left_during.png")).unwrap();
            if complete {
                save_png(&img(0.7), &a.join("tac_right_during.png")).unwrap();
            }
            fs::write(a.join("label.txt"), label).unwrap();
        }
        assert_eq!(detect_layout(root).unwrap(), Layout::Grasp);
        let ds = load_grasp_dataset(root).unwrap();
        assert_eq!(ds.len(), 2);
        assert_eq!(ds.skipped, 1);
        assert_eq!(ds.samples[0].tactile.channels, 6);
        assert!((ds.samples[0].tactile.plane(0)[0] - 0.3).abs() < 0.01);
        assert!((ds.samples[0].tactile.plane(5)[0] - 0.7).abs() < 0.01);
        assert_eq!(ds.samples[0].labels.grasp, Some(1));
        fs::remove_file(root.join("attempt0/label.txt")).unwrap();
        assert!(matches!(load_grasp_dataset(root), Err(Error::DatasetFormat(_))));
    }
}
