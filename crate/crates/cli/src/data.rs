//! Datasets on disk: generation, loading and ingestion.

use std::fs;
use std::path::{Path, PathBuf};

use hwdm_core::imaging::{decode_pnm, encode_pnm, resize_nearest, ImageU8};
use hwdm_core::reports::write_atomic;
use hwdm_core::{PlantClass, PreprocessConfig, Sample, NUM_CLASSES};

use crate::error::{CliError, CliResult};
use crate::manifest::{self, Manifest, Parsed, Record};
use crate::synth::{render_sample, sample_seed};

pub const IMAGE_DIR: &str = "images";
pub const MASK_DIR: &str = "masks";

/// A manifest read from disk, with the directory its paths are relative to.
pub struct Loaded {
    pub path: PathBuf,
    pub base: PathBuf,
    pub parsed: Parsed,
}

impl Loaded {
    pub fn records(&self) -> impl Iterator<Item = (usize, &Record)> {
        self.parsed.lines.iter().copied().zip(&self.parsed.manifest.records)
    }

    fn at(&self, line: usize) -> String {
        format!("{}:{line}", self.path.display())
    }
}

/// Reads and parses a manifest and checks that every referenced file exists.
pub fn load_manifest(path: &Path) -> CliResult<Loaded> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let parsed = Manifest::parse(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))?;
    let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new(".")).to_path_buf();
    let loaded = Loaded { path: path.to_path_buf(), base, parsed };
    for (line, r) in loaded.records() {
        for file in std::iter::once(&r.path).chain(&r.mask) {
            if !manifest::resolve(&loaded.base, file).is_file() {
                return Err(CliError::Data(format!("{}: file {file} not found", loaded.at(line))));
            }
        }
    }
    Ok(loaded)
}

fn read_image(loaded: &Loaded, line: usize, file: &str) -> CliResult<ImageU8> {
    let bytes = fs::read(manifest::resolve(&loaded.base, file))?;
    decode_pnm(&bytes).map_err(|e| CliError::Data(format!("{}: {file}: {e}", loaded.at(line))))
}

/// Raw RGB images and labels, in manifest order.
pub fn raw_images(loaded: &Loaded) -> CliResult<Vec<(ImageU8, PlantClass)>> {
    loaded.records().map(|(line, r)| Ok((read_image(loaded, line, &r.path)?.to_rgb(), r.label))).collect()
}

/// Class-index mask of a record, resized to `target` with nearest sampling.
fn read_mask(loaded: &Loaded, line: usize, file: &str, image: &ImageU8, target: (usize, usize)) -> CliResult<Vec<u8>> {
    let mask = read_image(loaded, line, file)?;
    let bad = |m: String| CliError::Data(format!("{}: {file}: {m}", loaded.at(line)));
    if mask.channels() != 1 {
        return Err(bad("mask must be a single-channel PGM".into()));
    }
    if (mask.height(), mask.width()) != (image.height(), image.width()) {
        return Err(bad(format!("mask is {}x{}, image is {}x{}", mask.height(), mask.width(), image.height(), image.width())));
    }
    if let Some(v) = mask.pixels().iter().find(|&&v| v as usize >= NUM_CLASSES) {
        return Err(bad(format!("mask value {v} is not a class index")));
    }
    Ok(resize_nearest(&mask, target)?.into_pixels())
}

/// Loads every record and applies `pre`; sample ids are the image paths.
pub fn ingest(loaded: &Loaded, pre: &PreprocessConfig) -> CliResult<Vec<Sample>> {
    let mut samples = Vec::with_capacity(loaded.parsed.manifest.records.len());
    for (line, r) in loaded.records() {
        let raw = read_image(loaded, line, &r.path)?.to_rgb();
        let image = pre.apply(&raw).map_err(|e| CliError::from(e).context(loaded.at(line)))?;
        let mask = match &r.mask {
            Some(m) => Some(read_mask(loaded, line, m, &raw, pre.target_size)?),
            None => None,
        };
        samples.push(Sample { id: r.path.clone(), image, label: r.label, mask, growth: r.growth, synthetic: r.synthetic });
    }
    Ok(samples)
}

/// Writes `images/`, `masks/` and `manifest.tsv` under `out` with `counts[c]`
/// rendered samples of class `c`.
pub fn gen_synthetic(out: &Path, counts: [usize; NUM_CLASSES], size: usize, seed: u64) -> CliResult<Manifest> {
    fs::create_dir_all(out.join(IMAGE_DIR))?;
    fs::create_dir_all(out.join(MASK_DIR))?;
    let mut records = Vec::new();
    for class in PlantClass::ALL {
        for i in 0..counts[class.index()] {
            let s = render_sample(class, size, sample_seed(seed, class, i));
            let name = format!("{class}_{i:04}");
            let image = format!("{IMAGE_DIR}/{name}.ppm");
            let mask = format!("{MASK_DIR}/{name}.pgm");
            write_atomic(&out.join(&image), &encode_pnm(&s.image))?;
            write_atomic(&out.join(&mask), &encode_pnm(&ImageU8::new(size, size, 1, s.mask)?))?;
            records.push(Record { path: image, label: class, mask: Some(mask), growth: Some(s.growth), synthetic: false });
        }
    }
    let manifest = Manifest { records, procedural: true };
    write_atomic(&out.join(manifest::FILE_NAME), manifest.to_text().as_bytes())?;
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generated_set_ingests_with_masks() {
        let dir = tempfile::tempdir().unwrap();
        let m = gen_synthetic(dir.path(), [2, 1, 1, 2], 16, 3).unwrap();
        assert_eq!(m.class_counts(), [2, 1, 1, 2]);
        let loaded = load_manifest(&dir.path().join(manifest::FILE_NAME)).unwrap();
        assert_eq!(loaded.parsed.manifest, m);
        let pre = PreprocessConfig { target_size: (8, 8), ..PreprocessConfig::default() };
        let samples = ingest(&loaded, &pre).unwrap();
        assert_eq!(samples.len(), 6);
        for (s, r) in samples.iter().zip(&m.records) {
            assert_eq!(s.image.shape(), &[3, 8, 8]);
            assert_eq!(s.mask.as_ref().unwrap().len(), 64);
            assert_eq!(s.label, r.label);
        }
    }

    #[test]
    fn missing_files_and_bad_masks_name_the_line() {
        let dir = tempfile::tempdir().unwrap();
        gen_synthetic(dir.path(), [1, 1, 0, 0], 8, 1).unwrap();
        let path = dir.path().join("m.tsv");
        fs::write(&path, "images/broadleaf_0000.ppm\tbroadleaf\t-\t-\t0\nimages/nope.ppm\tsoil\t-\t-\t0\n").unwrap();
        let err = load_manifest(&path).err().unwrap();
        assert!(matches!(&err, CliError::Data(m) if m.ends_with("m.tsv:2: file images/nope.ppm not found")), "{err}");
        // The image itself as a mask: three channels.
        fs::write(&path, "\nimages/grass_0000.ppm\tgrass\timages/grass_0000.ppm\t-\t0\n").unwrap();
        let loaded = load_manifest(&path).unwrap();
        let err = ingest(&loaded, &PreprocessConfig { target_size: (8, 8), ..PreprocessConfig::default() }).unwrap_err();
        assert!(err.to_string().contains("m.tsv:2"), "{err}");
    }
}
