//! Tab-separated sample list.
//!
//! One record per line: image path, class label, mask path or `-`, growth
//! score or `-`, synthetic flag `0`/`1`. Paths are relative to the
//! manifest's directory. Blank lines, `#` comments and the header line are
//! skipped, except the marker comment that flags a procedurally generated
//! stand-in dataset.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use hwdm_core::PlantClass;

pub const HEADER: &str = "path\tlabel\tmask\tgrowth\tsynthetic";
pub const FILE_NAME: &str = "manifest.tsv";
pub const PROCEDURAL_MARK: &str = "# source: procedural";

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub path: String,
    pub label: PlantClass,
    pub mask: Option<String>,
    pub growth: Option<f64>,
    pub synthetic: bool,
}

impl Record {
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.path,
            self.label,
            self.mask.as_deref().unwrap_or("-"),
            self.growth.map_or_else(|| "-".to_string(), |g| g.to_string()),
            u8::from(self.synthetic)
        )
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub records: Vec<Record>,
    /// Generated by `gen-data` rather than collected in a field.
    pub procedural: bool,
}

/// A parsed manifest with the source line of every record.
#[derive(Clone, Debug, PartialEq)]
pub struct Parsed {
    pub manifest: Manifest,
    pub lines: Vec<usize>,
    pub warnings: Vec<String>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ManifestError {
    pub line: usize,
    pub message: String,
}

impl fmt::Display for ManifestError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "manifest line {}: {}", self.line, self.message)
    }
}

impl std::error::Error for ManifestError {}

impl Manifest {
    pub fn to_text(&self) -> String {
        let mut out = String::from(HEADER);
        out.push('\n');
        if self.procedural {
            out.push_str(PROCEDURAL_MARK);
            out.push('\n');
        }
        for r in &self.records {
            out.push_str(&r.to_line());
            out.push('\n');
        }
        out
    }

    pub fn parse(text: &str) -> Result<Parsed, ManifestError> {
        let mut records = Vec::new();
        let mut lines = Vec::new();
        let mut warnings = Vec::new();
        let mut seen: HashMap<String, usize> = HashMap::new();
        let mut procedural = false;
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let raw = raw.strip_suffix('\r').unwrap_or(raw);
            procedural |= raw == PROCEDURAL_MARK;
            if raw.trim().is_empty() || raw.starts_with('#') || (records.is_empty() && raw == HEADER) {
                continue;
            }
            let err = |message: String| ManifestError { line, message };
            let fields: Vec<&str> = raw.split('\t').collect();
            if fields.len() != 5 {
                return Err(err(format!("expected 5 tab-separated fields, found {}", fields.len())));
            }
            if fields[0].is_empty() {
                return Err(err("empty image path".into()));
            }
            let label = fields[1]
                .parse()
                .map_err(|_| err(format!("unknown label {:?}; expected broadleaf, grass, soil or soybean", fields[1])))?;
            let mask = match fields[2] {
                "-" => None,
                "" => return Err(err("empty mask path; use - for none".into())),
                m => Some(m.to_string()),
            };
            let growth = match fields[3] {
                "-" => None,
                g => {
                    let v: f64 = g.parse().map_err(|_| err(format!("bad growth value {g:?}")))?;
                    if !(0.0..=1.0).contains(&v) {
                        return Err(err(format!("growth {v} outside [0, 1]")));
                    }
                    Some(v)
                }
            };
            let synthetic = match fields[4] {
                "0" => false,
                "1" => true,
                s => return Err(err(format!("synthetic flag must be 0 or 1, got {s:?}"))),
            };
            if let Some(first) = seen.insert(fields[0].to_string(), line) {
                warnings.push(format!("manifest line {line}: duplicate path {} (first on line {first}); both kept", fields[0]));
            }
            records.push(Record { path: fields[0].to_string(), label, mask, growth, synthetic });
            lines.push(line);
        }
        if records.is_empty() {
            warnings.push("manifest has no records".to_string());
        }
        Ok(Parsed { manifest: Manifest { records, procedural }, lines, warnings })
    }

    pub fn class_counts(&self) -> [usize; hwdm_core::NUM_CLASSES] {
        let mut counts = [0; hwdm_core::NUM_CLASSES];
        for r in &self.records {
            counts[r.label.index()] += 1;
        }
        counts
    }
}

/// Resolves a manifest-relative path.
pub fn resolve(base: &Path, relative: &str) -> PathBuf {
    base.join(relative)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn record(path: &str, label: PlantClass) -> Record {
        Record { path: path.into(), label, mask: None, growth: None, synthetic: false }
    }

    #[test]
    fn parses_all_field_forms() {
        let text = "# comment\npath\tlabel\tmask\tgrowth\tsynthetic\na.ppm\tgrass\tm/a.pgm\t0.25\t0\r\n\nb.ppm\tsoil\t-\t-\t1\n";
        let p = Manifest::parse(text).unwrap();
        assert_eq!(p.lines, vec![3, 5]);
        assert!(p.warnings.is_empty());
        assert!(!p.manifest.procedural);
        let r = &p.manifest.records;
        assert_eq!(
            r[0],
            Record {
                path: "a.ppm".into(),
                label: PlantClass::Grass,
                mask: Some("m/a.pgm".into()),
                growth: Some(0.25),
                synthetic: false
            }
        );
        assert_eq!(r[1], Record { synthetic: true, ..record("b.ppm", PlantClass::Soil) });
    }

    #[test]
    fn empty_manifest_is_valid_with_a_warning() {
        let p = Manifest::parse("").unwrap();
        assert!(p.manifest.records.is_empty());
        assert_eq!(p.warnings.len(), 1);
        assert!(Manifest::parse(HEADER).unwrap().manifest.records.is_empty());
    }

    #[test]
    fn duplicates_are_kept_with_a_warning() {
        let p = Manifest::parse("a.ppm\tsoil\t-\t-\t0\na.ppm\tgrass\t-\t-\t0\n").unwrap();
        assert_eq!(p.manifest.records.len(), 2);
        assert_eq!(p.warnings, vec!["manifest line 2: duplicate path a.ppm (first on line 1); both kept".to_string()]);
    }

    #[test]
    fn errors_carry_line_numbers() {
        let bad = [
            ("a\tsoil\t-\t-\t0\nb\tweed\t-\t-\t0\n", 2),
            ("a\tsoil\t-\t-\n", 1),
            ("\n\na\tsoil\t-\t2.0\t0\n", 3),
            ("a\tsoil\t-\tx\t0\n", 1),
            ("a\tsoil\t-\t-\tyes\n", 1),
            ("\tsoil\t-\t-\t0\n", 1),
            ("a\tsoil\t\t-\t0\n", 1),
        ];
        for (text, line) in bad {
            let e = Manifest::parse(text).unwrap_err();
            assert_eq!(e.line, line, "{text:?}: {e}");
        }
    }

    fn label() -> impl Strategy<Value = PlantClass> {
        (0usize..4).prop_map(|i| PlantClass::ALL[i])
    }

    fn any_record() -> impl Strategy<Value = Record> {
        (
            "[a-z0-9_/]{1,12}\\.ppm",
            label(),
            prop::option::of("[a-z0-9_/]{1,12}\\.pgm"),
            prop::option::of(0.0f64..=1.0),
            any::<bool>(),
        )
            .prop_map(|(path, label, mask, growth, synthetic)| Record { path, label, mask, growth, synthetic })
    }

    proptest! {
        #[test]
        fn write_then_read_preserves_records(records in prop::collection::vec(any_record(), 0..20), procedural in any::<bool>()) {
            let m = Manifest { records, procedural };
            prop_assert_eq!(Manifest::parse(&m.to_text()).unwrap().manifest, m);
        }
    }
}
