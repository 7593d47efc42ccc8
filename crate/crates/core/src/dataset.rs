//! Labelled image collections: CSV pixel rows, per-class image folders and a
//! seeded synthetic generator.
//!
//! CSV labels follow the 25-letter fingerspelling alphabet without J and Z:
//! raw labels 0..=24 with 9 absent. They are stored densely as 0..=23, so raw
//! labels above 9 shift down by one.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imaging::{normalize, read_pnm, resize, Image, InterpMethod};
use crate::trainer::Example;

pub const CLASS_COUNT: usize = 24;
pub const IMAGE_SIDE: usize = 28;
/// Side of the synthetic source renderings.
pub const SOURCE_SIDE: usize = 240;

const SKIPPED_RAW_LABEL: u32 = 9;

/// Letter shown for each dense class index.
pub const CLASS_LETTERS: [char; CLASS_COUNT] = [
    'A', 'B', 'C', 'D', 'E', 'F', 'G', 'H', 'I', 'K', 'L', 'M', 'N', 'O', 'P', 'Q', 'R', 'S', 'T',
    'U', 'V', 'W', 'X', 'Y',
];

/// Directory name for a class; sorts in class order.
pub fn class_name(label: usize) -> String {
    CLASS_LETTERS
        .get(label)
        .map(|c| c.to_string())
        .unwrap_or_else(|| format!("class{label:03}"))
}

/// Writes `<root>/<class>/<index>.pgm` for every sample, the layout read by
/// [`load_image_dir_dataset`].
pub fn write_image_dir(ds: &Dataset, root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    let mut counts = vec![0usize; ds.class_count()];
    for s in ds.samples() {
        let dir = root.join(class_name(s.label));
        fs::create_dir_all(&dir)?;
        crate::imaging::write_pgm(dir.join(format!("{:05}.pgm", counts[s.label])), &s.image)?;
        counts[s.label] += 1;
    }
    Ok(())
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub image: Image,
    pub label: usize,
    /// Where the sample came from, e.g. a file path or generator tag.
    pub provenance: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    samples: Vec<Sample>,
    class_count: usize,
}

impl Dataset {
    pub fn new(samples: Vec<Sample>, class_count: usize) -> Result<Self> {
        if let Some(first) = samples.first() {
            let (w, h) = (first.image.width(), first.image.height());
            for (i, s) in samples.iter().enumerate() {
                if s.label >= class_count {
                    return Err(Error::InvalidArgument(format!(
                        "sample {i} has label {} but there are {class_count} classes",
                        s.label
                    )));
                }
                if s.image.width() != w || s.image.height() != h {
                    return Err(Error::Shape(format!(
                        "sample {i} is {}x{}, expected {w}x{h}",
                        s.image.width(),
                        s.image.height()
                    )));
                }
            }
        }
        Ok(Self {
            samples,
            class_count,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<Sample> {
        self.samples
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_histogram(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count];
        for s in &self.samples {
            counts[s.label] += 1;
        }
        counts
    }

    /// Normalized `[h, w, 1]` inputs with labels.
    pub fn examples(&self) -> Vec<Example> {
        self.samples
            .iter()
            .map(|s| Example {
                input: normalize(&s.image),
                label: s.label,
            })
            .collect()
    }

    /// Seeded per-class split: within each class, `fraction` of the samples
    /// (rounded) go to the second set. Returns `(kept, held_out)`.
    pub fn stratified_split(&self, fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
        if !(0.0..=1.0).contains(&fraction) {
            return Err(Error::InvalidArgument(format!(
                "split fraction must lie in [0, 1], got {fraction}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); self.class_count];
        for (i, s) in self.samples.iter().enumerate() {
            by_class[s.label].push(i);
        }
        let mut held = vec![false; self.samples.len()];
        for idx in &mut by_class {
            idx.shuffle(&mut rng);
            let n = (idx.len() as f64 * fraction).round() as usize;
            for &i in &idx[..n] {
                held[i] = true;
            }
        }
        let (mut a, mut b) = (Vec::new(), Vec::new());
        for (s, h) in self.samples.iter().zip(held) {
            if h { b.push(s.clone()) } else { a.push(s.clone()) }
        }
        Ok((
            Dataset::new(a, self.class_count)?,
            Dataset::new(b, self.class_count)?,
        ))
    }

    /// First `n` samples of every class, in dataset order.
    pub fn take_per_class(&self, n: usize) -> Dataset {
        let mut seen = vec![0; self.class_count];
        let samples = self
            .samples
            .iter()
            .filter(|s| {
                seen[s.label] += 1;
                seen[s.label] <= n
            })
            .cloned()
            .collect();
        Dataset {
            samples,
            class_count: self.class_count,
        }
    }
}

/// Raw CSV label to dense class index.
pub fn dense_label(raw: u32) -> Option<usize> {
    match raw {
        SKIPPED_RAW_LABEL => None,
        r if r < SKIPPED_RAW_LABEL => Some(r as usize),
        r if r <= CLASS_COUNT as u32 => Some(r as usize - 1),
        _ => None,
    }
}

/// Dense class index back to the raw CSV label.
pub fn raw_label(dense: usize) -> u32 {
    if dense < SKIPPED_RAW_LABEL as usize {
        dense as u32
    } else {
        dense as u32 + 1
    }
}

fn parse_error(path: &Path, line: u64, message: impl Into<String>) -> Error {
    Error::Parse {
        path: path.to_path_buf(),
        line,
        message: message.into(),
    }
}

/// Reads `label,pixel1,...,pixel784` rows into 28×28 images.
pub fn load_csv_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    let pixels = IMAGE_SIDE * IMAGE_SIDE;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let header = reader.headers()?.clone();
    if header.len() != pixels + 1 || &header[0] != "label" {
        return Err(parse_error(
            path,
            1,
            format!("expected header label,pixel1..pixel{pixels}"),
        ));
    }
    let mut samples = Vec::new();
    for record in reader.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        if record.len() != pixels + 1 {
            return Err(parse_error(
                path,
                line,
                format!("expected {} fields, found {}", pixels + 1, record.len()),
            ));
        }
        let raw: u32 = record[0]
            .trim()
            .parse()
            .map_err(|_| parse_error(path, line, format!("bad label {:?}", &record[0])))?;
        let label = dense_label(raw)
            .ok_or_else(|| parse_error(path, line, format!("label {raw} out of range")))?;
        let px = record
            .iter()
            .skip(1)
            .enumerate()
            .map(|(i, f)| {
                f.trim()
                    .parse::<u8>()
                    .map_err(|_| parse_error(path, line, format!("pixel{} is {f:?}, not 0-255", i + 1)))
            })
            .collect::<Result<Vec<u8>>>()?;
        samples.push(Sample {
            image: Image::new(IMAGE_SIDE, IMAGE_SIDE, px)?,
            label,
            provenance: format!("{}:{line}", path.display()),
        });
    }
    Dataset::new(samples, CLASS_COUNT)
}

/// Writes 28×28 samples in the CSV layout read by [`load_csv_dataset`].
pub fn write_csv(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["label".to_string()];
    header.extend((1..=IMAGE_SIDE * IMAGE_SIDE).map(|i| format!("pixel{i}")));
    w.write_record(&header)?;
    for (i, s) in ds.samples().iter().enumerate() {
        if s.image.width() != IMAGE_SIDE || s.image.height() != IMAGE_SIDE {
            return Err(Error::Shape(format!(
                "sample {i} is {}x{}, CSV rows hold {IMAGE_SIDE}x{IMAGE_SIDE}",
                s.image.width(),
                s.image.height()
            )));
        }
        let mut row = vec![raw_label(s.label).to_string()];
        row.extend(s.image.pixels().iter().map(|p| p.to_string()));
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn is_image_file(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref(),
        Some("pgm" | "ppm" | "pnm")
    )
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<Vec<_>>>()?;
    out.sort();
    Ok(out)
}

/// Reads `<root>/<class>/*.pgm` without resizing. Classes are the
/// subdirectories in byte-wise name order.
pub fn load_image_dir_sources(root: impl AsRef<Path>) -> Result<Dataset> {
    let root = root.as_ref();
    let classes: Vec<PathBuf> = sorted_entries(root)?.into_iter().filter(|p| p.is_dir()).collect();
    if classes.is_empty() {
        log::warn!("{}: no class directories found", root.display());
        return Dataset::new(Vec::new(), CLASS_COUNT);
    }
    if classes.len() != CLASS_COUNT {
        log::warn!(
            "{}: found {} class directories, expected {CLASS_COUNT}",
            root.display(),
            classes.len()
        );
    }
    let mut samples = Vec::new();
    for (label, dir) in classes.iter().enumerate() {
        for file in sorted_entries(dir)?.into_iter().filter(|p| is_image_file(p)) {
            samples.push(Sample {
                image: read_pnm(&file)?,
                label,
                provenance: file.display().to_string(),
            });
        }
    }
    Dataset::new(samples, classes.len().max(1))
}

/// Like [`load_image_dir_sources`], with every image resized to 28×28.
pub fn load_image_dir_dataset(root: impl AsRef<Path>, method: InterpMethod) -> Result<Dataset> {
    let raw = load_image_dir_sources(root)?;
    let class_count = raw.class_count();
    let samples = raw
        .into_samples()
        .into_iter()
        .map(|s| {
            let image = if s.image.width() == IMAGE_SIDE && s.image.height() == IMAGE_SIDE {
                s.image
            } else {
                resize(&s.image, IMAGE_SIDE, IMAGE_SIDE, method)?
            };
            Ok(Sample { image, ..s })
        })
        .collect::<Result<_>>()?;
    Dataset::new(samples, class_count)
}

/// Look of the synthetic renderings.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SynthStyle {
    /// Dark flat background, mild noise.
    Clean,
    /// Brighter gradient background, heavier noise, a distractor dot and
    /// wider jitter. Used as the out-of-distribution set.
    Cluttered,
}

/// Class geometry: 6 orientations 60° apart times 4 blob layouts.
fn class_layout(class: usize) -> (f64, f64, [(f64, f64); 2]) {
    let angle = (class % 6) as f64 * 60.0;
    let variant = class / 6 % 4;
    let separation = if variant.is_multiple_of(2) { 48.0 } else { 80.0 };
    // (radius, intensity) of the leading and trailing blob
    let blobs = if variant < 2 {
        [(30.0, 235.0), (15.0, 165.0)]
    } else {
        [(20.0, 245.0), (20.0, 115.0)]
    };
    (angle, separation, blobs)
}

/// Renders one `SOURCE_SIDE` square two-blob pattern for `class`.
pub fn render_synth(class: usize, style: SynthStyle, rng: &mut ChaCha8Rng) -> Image {
    let (angle, separation, blobs) = class_layout(class);
    let side = SOURCE_SIDE as f64;
    let (jitter_pos, jitter_angle, noise, background) = match style {
        SynthStyle::Clean => (14.0, 5.0, 6.0, 20.0),
        SynthStyle::Cluttered => (22.0, 9.0, 18.0, 55.0),
    };
    let theta = (angle + rng.gen_range(-jitter_angle..=jitter_angle)).to_radians();
    let cx = side / 2.0 + rng.gen_range(-jitter_pos..=jitter_pos);
    let cy = side / 2.0 + rng.gen_range(-jitter_pos..=jitter_pos);
    let sep = separation * rng.gen_range(0.9..1.1);
    let (dx, dy) = (theta.cos() * sep / 2.0, -theta.sin() * sep / 2.0);
    let mut spots: Vec<(f64, f64, f64, f64)> = blobs
        .iter()
        .zip([1.0, -1.0])
        .map(|(&(r, v), sign)| {
            (
                cx + sign * dx,
                cy + sign * dy,
                r * rng.gen_range(0.9..1.1),
                (v + rng.gen_range(-15.0..=15.0)).min(255.0),
            )
        })
        .collect();
    let gradient = match style {
        SynthStyle::Clean => 0.0,
        SynthStyle::Cluttered => {
            spots.push((
                rng.gen_range(20.0..side - 20.0),
                rng.gen_range(20.0..side - 20.0),
                rng.gen_range(5.0..9.0),
                rng.gen_range(120.0..200.0),
            ));
            rng.gen_range(-40.0..40.0)
        }
    };
    let noise_seed: u64 = rng.gen();
    let mut noise_rng = ChaCha8Rng::seed_from_u64(noise_seed);
    Image::from_fn(SOURCE_SIDE, SOURCE_SIDE, |x, y| {
        let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
        let mut v = background + gradient * (px / side - 0.5);
        for &(bx, by, r, peak) in &spots {
            let d = ((px - bx).powi(2) + (py - by).powi(2)).sqrt();
            // flat core with a soft two-pixel rim
            let w = ((r + 2.0 - d) / 4.0).clamp(0.0, 1.0);
            v = v.max(background + (peak - background) * w);
        }
        v += noise_rng.gen_range(-noise..=noise);
        v.round().clamp(0.0, 255.0) as u8
    })
    .expect("fixed positive size")
}

fn synth_rng(seed: u64, class: usize, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((class as u64) << 32) | index as u64);
    rng
}

/// `per_class` source renderings of every class at full resolution, ordered
/// class by class.
pub fn synth_sources(classes: usize, per_class: usize, seed: u64, style: SynthStyle) -> Result<Dataset> {
    if classes == 0 || per_class == 0 {
        return Err(Error::InvalidArgument(
            "synthetic data needs at least one class and one sample per class".into(),
        ));
    }
    let tag = match style {
        SynthStyle::Clean => "synth-clean",
        SynthStyle::Cluttered => "synth-cluttered",
    };
    let samples = (0..classes)
        .flat_map(|c| (0..per_class).map(move |i| (c, i)))
        .map(|(c, i)| Sample {
            image: render_synth(c, style, &mut synth_rng(seed, c, i)),
            label: c,
            provenance: format!("{tag}:seed={seed}:class={c}:index={i}"),
        })
        .collect();
    Dataset::new(samples, classes)
}

/// Area-downscaled 28×28 synthetic dataset.
pub fn synth_dataset_styled(classes: usize, per_class: usize, seed: u64, style: SynthStyle) -> Result<Dataset> {
    let src = synth_sources(classes, per_class, seed, style)?;
    let samples = src
        .into_samples()
        .into_iter()
        .map(|s| {
            Ok(Sample {
                image: resize(&s.image, IMAGE_SIDE, IMAGE_SIDE, InterpMethod::Area)?,
                ..s
            })
        })
        .collect::<Result<_>>()?;
    Dataset::new(samples, classes)
}

pub fn synth_dataset(classes: usize, per_class: usize, seed: u64) -> Result<Dataset> {
    synth_dataset_styled(classes, per_class, seed, SynthStyle::Clean)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::imaging::write_pgm;

    #[test]
    fn label_mapping_skips_nine() {
        assert_eq!(dense_label(0), Some(0));
        assert_eq!(dense_label(8), Some(8));
        assert_eq!(dense_label(9), None);
        assert_eq!(dense_label(10), Some(9));
        assert_eq!(dense_label(24), Some(23));
        assert_eq!(dense_label(25), None);
        for d in 0..CLASS_COUNT {
            assert_eq!(dense_label(raw_label(d)), Some(d));
        }
    }

    fn csv_text(rows: &[(u32, Vec<u8>)]) -> String {
        let mut s = String::from("label");
        for i in 1..=784 {
            s.push_str(&format!(",pixel{i}"));
        }
        s.push('\n');
        for (l, px) in rows {
            s.push_str(&l.to_string());
            for p in px {
                s.push_str(&format!(",{p}"));
            }
            s.push('\n');
        }
        s
    }

    #[test]
    fn csv_single_black_row() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, csv_text(&[(0, vec![0; 784])])).unwrap();
        let ds = load_csv_dataset(&p).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.samples()[0].label, 0);
        assert!(ds.samples()[0].image.pixels().iter().all(|&v| v == 0));
    }

    #[test]
    fn csv_errors_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        fs::write(&p, csv_text(&[(1, vec![3; 784]), (2, vec![3; 783])])).unwrap();
        let err = load_csv_dataset(&p).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");

        fs::write(&p, csv_text(&[(9, vec![0; 784])])).unwrap();
        assert!(matches!(load_csv_dataset(&p).unwrap_err(), Error::Parse { line: 2, .. }));
        fs::write(&p, csv_text(&[(25, vec![0; 784])])).unwrap();
        assert!(load_csv_dataset(&p).is_err());
        let mut bad = csv_text(&[(1, vec![0; 784])]);
        bad = bad.replacen(",0", ",256", 1);
        fs::write(&p, bad).unwrap();
        assert!(load_csv_dataset(&p).is_err());
    }

    #[test]
    fn csv_round_trip_is_content_identical() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.csv");
        let rows: Vec<(u32, Vec<u8>)> = [0u32, 8, 10, 24, 3]
            .iter()
            .enumerate()
            .map(|(i, &l)| (l, (0..784).map(|j| ((i * 31 + j * 7) % 256) as u8).collect()))
            .collect();
        let text = csv_text(&rows);
        fs::write(&p, &text).unwrap();
        let ds = load_csv_dataset(&p).unwrap();
        let q = dir.path().join("b.csv");
        write_csv(&ds, &q).unwrap();
        assert_eq!(fs::read_to_string(&q).unwrap(), text);
    }

    #[test]
    fn image_dirs() {
        let dir = tempfile::tempdir().unwrap();
        let empty = load_image_dir_dataset(dir.path(), InterpMethod::Area).unwrap();
        assert!(empty.is_empty());
        for c in 0..CLASS_COUNT {
            let sub = dir.path().join(format!("{}", (b'a' + c as u8) as char));
            fs::create_dir(&sub).unwrap();
            write_pgm(sub.join("0.pgm"), &Image::filled(240, 240, c as u8 * 10).unwrap()).unwrap();
            fs::write(sub.join("notes.txt"), "ignored").unwrap();
        }
        let ds = load_image_dir_dataset(dir.path(), InterpMethod::Area).unwrap();
        assert_eq!(ds.len(), CLASS_COUNT);
        for (c, s) in ds.samples().iter().enumerate() {
            assert_eq!(s.label, c);
            assert_eq!((s.image.width(), s.image.height()), (28, 28));
            assert!(s.image.pixels().iter().all(|&v| v == c as u8 * 10));
        }
    }

    #[test]
    fn image_dir_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let ds = synth_dataset(24, 2, 3).unwrap();
        write_image_dir(&ds, dir.path()).unwrap();
        let back = load_image_dir_dataset(dir.path(), InterpMethod::Area).unwrap();
        assert_eq!(back.len(), ds.len());
        for (a, b) in ds.samples().iter().zip(back.samples()) {
            assert_eq!(a.label, b.label);
            assert_eq!(a.image, b.image);
        }
    }

    #[test]
    fn synth_is_deterministic_and_sized() {
        let a = synth_dataset(24, 10, 5).unwrap();
        assert_eq!(a.len(), 240);
        assert_eq!(a.class_histogram(), vec![10; 24]);
        let b = synth_dataset(24, 10, 5).unwrap();
        assert_eq!(a, b);
        let c = synth_dataset(24, 10, 6).unwrap();
        assert_ne!(a, c);
        assert!(synth_dataset(24, 0, 5).is_err());
    }

    #[test]
    fn stratified_split_keeps_class_balance() {
        let ds = synth_dataset(4, 10, 1).unwrap();
        let (train, test) = ds.stratified_split(0.2, 3).unwrap();
        assert_eq!(train.class_histogram(), vec![8; 4]);
        assert_eq!(test.class_histogram(), vec![2; 4]);
        assert_eq!(ds.take_per_class(3).class_histogram(), vec![3; 4]);
    }
}
