//! Cohort manifests and the clinical-metadata encoder.
//!
//! A manifest is a CSV file whose first five columns are fixed
//! (`id, volume_path, treatment, mrs, split`) and whose remaining columns
//! are named clinical fields, with `NA` marking a missing value. The
//! encoder infers each field's type from the training rows: a field whose
//! observed training values all parse as numbers is continuous (z-scored
//! with training statistics), anything else is categorical (one-hot over
//! the training levels). A `:cat` suffix on the header forces categorical,
//! for integer-coded categories.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{Mode, CLINICAL_DIM, TREATMENT_DIM};
use crate::tensor::Tensor;

pub const MISSING: &str = "NA";
pub const FIXED_COLUMNS: [&str; 5] = ["id", "volume_path", "treatment", "mrs", "split"];
pub const NUM_MRS: usize = 7;
const CATEGORICAL_SUFFIX: &str = ":cat";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Test,
    Unassigned,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
            Split::Unassigned => "",
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
        match s.trim() {
            "train" => Ok(Split::Train),
            "test" => Ok(Split::Test),
            "" | MISSING => Ok(Split::Unassigned),
            other => Err(Error::param(format!("unknown split tag {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PatientRecord {
    pub id: String,
    pub volume_path: String,
    /// 1 = EVT, 0 = control.
    pub treatment: u8,
    pub mrs: u8,
    pub split: Split,
    /// Raw clinical values in manifest column order; `None` is missing.
    pub fields: Vec<Option<String>>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct CohortManifest {
    pub feature_names: Vec<String>,
    pub records: Vec<PatientRecord>,
    /// Directory relative volume paths are resolved against.
    pub base_dir: Option<PathBuf>,
}

impl CohortManifest {
    pub fn validate(&self) -> Result<()> {
        let mut seen = BTreeSet::new();
        for r in &self.records {
            if r.fields.len() != self.feature_names.len() {
                return Err(Error::shape(format!(
                    "record {} has {} clinical fields, header declares {}",
                    r.id,
                    r.fields.len(),
                    self.feature_names.len()
                )));
            }
            if r.treatment > 1 {
                return Err(Error::param(format!(
                    "record {}: treatment {} not in {{0,1}}",
                    r.id, r.treatment
                )));
            }
            if r.mrs as usize >= NUM_MRS {
                return Err(Error::param(format!("record {}: mRS {} out of range", r.id, r.mrs)));
            }
            if !seen.insert(r.id.as_str()) {
                return Err(Error::param(format!("duplicate record id {}", r.id)));
            }
        }
        Ok(())
    }

    pub fn indices(&self, split: Split) -> Vec<usize> {
        (0..self.records.len())
            .filter(|&i| self.records[i].split == split)
            .collect()
    }

    /// mRS histogram over the records with the given split tag.
    pub fn class_counts(&self, split: Split) -> [usize; NUM_MRS] {
        let mut counts = [0; NUM_MRS];
        for r in self.records.iter().filter(|r| r.split == split) {
            counts[r.mrs as usize] += 1;
        }
        counts
    }

    pub fn resolve_volume(&self, record: &PatientRecord) -> PathBuf {
        let p = Path::new(&record.volume_path);
        match &self.base_dir {
            Some(base) if p.is_relative() => base.join(p),
            _ => p.to_path_buf(),
        }
    }

    pub fn from_csv<R: std::io::Read>(reader: R, origin: &str) -> Result<Self> {
        let bad = |reason: String| Error::Format {
            path: origin.to_string(),
            reason,
        };
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let header = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
        let cols: Vec<&str> = header.iter().collect();
        if cols.len() < FIXED_COLUMNS.len() || cols[..FIXED_COLUMNS.len()] != FIXED_COLUMNS {
            return Err(bad(format!("header must start with {}", FIXED_COLUMNS.join(","))));
        }
        let feature_names: Vec<String> = cols[FIXED_COLUMNS.len()..].iter().map(|s| s.to_string()).collect();
        let mut records = Vec::new();
        for (line, row) in rdr.records().enumerate() {
            let row = row.map_err(|e| bad(e.to_string()))?;
            let at = |e: Error| bad(format!("row {}: {e}", line + 2));
            let int = |s: &str, what: &str| -> Result<u8> {
                s.parse::<u8>()
                    .map_err(|_| Error::param(format!("{what} {s:?} is not an integer")))
            };
            records.push(PatientRecord {
                id: row[0].to_string(),
                volume_path: row[1].to_string(),
                treatment: int(&row[2], "treatment").map_err(at)?,
                mrs: int(&row[3], "mrs").map_err(at)?,
                split: row[4].parse().map_err(at)?,
                fields: row
                    .iter()
                    .skip(FIXED_COLUMNS.len())
                    .map(|v| (v != MISSING && !v.is_empty()).then(|| v.to_string()))
                    .collect(),
            });
        }
        let m = CohortManifest {
            feature_names,
            records,
            base_dir: None,
        };
        m.validate().map_err(|e| bad(e.to_string()))?;
        Ok(m)
    }

    pub fn read(path: &Path) -> Result<Self> {
        let file =
            std::fs::File::open(path).map_err(|e| Error::Io(e).context(format!("opening {}", path.display())))?;
        let mut m = CohortManifest::from_csv(file, &path.display().to_string())?;
        m.base_dir = path.parent().map(Path::to_path_buf);
        Ok(m)
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let csv_err = |e: csv::Error| Error::param(format!("writing manifest: {e}"));
        let header = FIXED_COLUMNS
            .iter()
            .map(|s| s.to_string())
            .chain(self.feature_names.iter().cloned());
        w.write_record(header).map_err(csv_err)?;
        for r in &self.records {
            let fixed = [
                r.id.clone(),
                r.volume_path.clone(),
                r.treatment.to_string(),
                r.mrs.to_string(),
                r.split.to_string(),
            ];
            let fields = r
                .fields
                .iter()
                .map(|f| f.clone().unwrap_or_else(|| MISSING.to_string()));
            w.write_record(fixed.into_iter().chain(fields)).map_err(csv_err)?;
        }
        let bytes = w.into_inner().map_err(|e| Error::param(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_csv()?)?;
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureEncoding {
    Continuous {
        name: String,
        mean: f64,
        std: f64,
        median: f64,
    },
    Categorical {
        name: String,
        levels: Vec<String>,
    },
}

impl FeatureEncoding {
    fn width(&self) -> usize {
        match self {
            FeatureEncoding::Continuous { .. } => 1,
            FeatureEncoding::Categorical { levels, .. } => levels.len(),
        }
    }

    fn column_names(&self) -> Vec<String> {
        match self {
            FeatureEncoding::Continuous { name, .. } => vec![name.clone()],
            FeatureEncoding::Categorical { name, levels } => {
                let base = name.strip_suffix(CATEGORICAL_SUFFIX).unwrap_or(name);
                levels.iter().map(|l| format!("{base}={l}")).collect()
            }
        }
    }
}

/// Per-record bookkeeping from [`MetadataEncoder::encode`].
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct EncodeStats {
    /// Missing values replaced by the training median (or left all-zero for
    /// categorical fields).
    pub imputed: usize,
    /// Categorical values never seen in training.
    pub unknown_levels: usize,
}

impl std::ops::AddAssign for EncodeStats {
    fn add_assign(&mut self, o: Self) {
        self.imputed += o.imputed;
        self.unknown_levels += o.unknown_levels;
    }
}

/// Fixed-width metadata layout and its training-split statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct MetadataEncoder {
    pub features: Vec<FeatureEncoding>,
    pub width: usize,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl MetadataEncoder {
    /// Infers the schema and statistics from the manifest's training rows
    /// only, using the default clinical width.
    pub fn fit(manifest: &CohortManifest) -> Result<Self> {
        MetadataEncoder::fit_with_width(manifest, CLINICAL_DIM)
    }

    pub fn fit_with_width(manifest: &CohortManifest, width: usize) -> Result<Self> {
        if width < TREATMENT_DIM {
            return Err(Error::config(format!(
                "metadata width {width} cannot hold the treatment one-hot"
            )));
        }
        let train: Vec<&PatientRecord> = manifest.records.iter().filter(|r| r.split == Split::Train).collect();
        if train.is_empty() {
            return Err(Error::config(
                "manifest has no training rows to fit metadata statistics on",
            ));
        }
        let mut features = Vec::with_capacity(manifest.feature_names.len());
        for (j, name) in manifest.feature_names.iter().enumerate() {
            let observed: Vec<&str> = train.iter().filter_map(|r| r.fields[j].as_deref()).collect();
            let numbers: Option<Vec<f64>> = observed
                .iter()
                .map(|s| s.parse::<f64>().ok().filter(|v| v.is_finite()))
                .collect();
            let forced = name.ends_with(CATEGORICAL_SUFFIX);
            features.push(match numbers {
                Some(mut xs) if !forced => {
                    let (mean, std, med) = if xs.is_empty() {
                        (0.0, 1.0, 0.0)
                    } else {
                        xs.sort_by(f64::total_cmp);
                        let n = xs.len() as f64;
                        let mean = xs.iter().sum::<f64>() / n;
                        let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
                        let std = if var.sqrt() > 1e-12 { var.sqrt() } else { 1.0 };
                        (mean, std, median(&xs))
                    };
                    FeatureEncoding::Continuous {
                        name: name.clone(),
                        mean,
                        std,
                        median: med,
                    }
                }
                _ => FeatureEncoding::Categorical {
                    name: name.clone(),
                    levels: observed
                        .iter()
                        .map(|s| s.to_string())
                        .collect::<BTreeSet<_>>()
                        .into_iter()
                        .collect(),
                },
            });
        }
        // continuous block first, then categorical, regardless of column order
        features.sort_by_key(|f| matches!(f, FeatureEncoding::Categorical { .. }));
        let enc = MetadataEncoder { features, width };
        let raw = enc.raw_width();
        if raw > width {
            log::warn!("encoded metadata needs {raw} columns; truncating to {width}");
        }
        Ok(enc)
    }

    /// Width before padding/truncation.
    pub fn raw_width(&self) -> usize {
        TREATMENT_DIM + self.features.iter().map(FeatureEncoding::width).sum::<usize>()
    }

    /// Column names of the encoded layout, `pad` for padding.
    pub fn layout(&self) -> Vec<String> {
        let mut cols = vec!["treatment=control".to_string(), "treatment=evt".to_string()];
        cols.extend(self.features.iter().flat_map(FeatureEncoding::column_names));
        cols.resize(self.width, "pad".to_string());
        cols
    }

    fn feature_index(&self, manifest: &CohortManifest, name: &str) -> usize {
        manifest
            .feature_names
            .iter()
            .position(|n| n == name)
            .expect("encoder fitted on this manifest schema")
    }

    /// Encodes one record. `image_only` uses the treatment one-hot alone.
    pub fn encode(
        &self,
        manifest: &CohortManifest,
        record: &PatientRecord,
        mode: Mode,
    ) -> Result<(Vec<f64>, EncodeStats)> {
        if record.fields.len() != manifest.feature_names.len() {
            return Err(Error::shape(format!(
                "record {} has {} fields, manifest declares {}",
                record.id,
                record.fields.len(),
                manifest.feature_names.len()
            )));
        }
        let mut out = vec![0.0; TREATMENT_DIM];
        out[usize::from(record.treatment == 1)] = 1.0;
        let mut stats = EncodeStats::default();
        if mode == Mode::ImageOnly {
            return Ok((out, stats));
        }
        for f in &self.features {
            match f {
                FeatureEncoding::Continuous {
                    name,
                    mean,
                    std,
                    median,
                } => {
                    let raw = record.fields[self.feature_index(manifest, name)].as_deref();
                    let v = match raw.map(str::parse::<f64>) {
                        Some(Ok(v)) if v.is_finite() => v,
                        Some(_) => {
                            return Err(Error::param(format!(
                                "record {}: field {name} value {:?} is not numeric",
                                record.id,
                                raw.unwrap()
                            )))
                        }
                        None => {
                            stats.imputed += 1;
                            *median
                        }
                    };
                    out.push((v - mean) / std);
                }
                FeatureEncoding::Categorical { name, levels } => {
                    let start = out.len();
                    out.resize(start + levels.len(), 0.0);
                    match record.fields[self.feature_index(manifest, name)].as_deref() {
                        None => stats.imputed += 1,
                        Some(v) => match levels.iter().position(|l| l == v) {
                            Some(k) => out[start + k] = 1.0,
                            None => stats.unknown_levels += 1,
                        },
                    }
                }
            }
        }
        out.resize(self.width, 0.0);
        Ok((out, stats))
    }

    /// Encodes the given records into an `N×V` tensor, logging a warning
    /// when unseen categorical levels were zeroed.
    pub fn encode_rows(
        &self,
        manifest: &CohortManifest,
        indices: &[usize],
        mode: Mode,
    ) -> Result<(Tensor, EncodeStats)> {
        let width = if mode == Mode::ImageOnly {
            TREATMENT_DIM
        } else {
            self.width
        };
        let mut data = Vec::with_capacity(indices.len() * width);
        let mut total = EncodeStats::default();
        for &i in indices {
            let (row, stats) = self.encode(manifest, &manifest.records[i], mode)?;
            data.extend(row);
            total += stats;
        }
        if total.unknown_levels > 0 {
            log::warn!(
                "{} categorical values had levels unseen in training and were zeroed",
                total.unknown_levels
            );
        }
        Ok((Tensor::new(&[indices.len(), width], data)?, total))
    }
}

/// Single-record convenience wrapper returning a `1×V` tensor.
pub fn encode_metadata(
    record: &PatientRecord,
    manifest: &CohortManifest,
    encoder: &MetadataEncoder,
    mode: Mode,
) -> Result<Tensor> {
    let (row, _) = encoder.encode(manifest, record, mode)?;
    let v = row.len();
    Tensor::new(&[1, v], row)
}

#[cfg(test)]
mod tests {
    use super::*;

    const CSV: &str = "\
id,volume_path,treatment,mrs,split,age,sex,site:cat
p1,v/p1.svol,1,2,train,60,M,1
p2,v/p2.svol,0,5,train,70,F,2
p3,v/p3.svol,1,0,train,NA,F,1
p4,v/p4.svol,0,3,test,80,X,3
";

    fn manifest() -> CohortManifest {
        CohortManifest::from_csv(CSV.as_bytes(), "mem").unwrap()
    }

    #[test]
    fn parses_and_round_trips() {
        let m = manifest();
        assert_eq!(m.feature_names, ["age", "sex", "site:cat"]);
        assert_eq!(m.records[2].fields[0], None);
        assert_eq!(m.records[3].split, Split::Test);
        let again = CohortManifest::from_csv(m.to_csv().unwrap().as_bytes(), "mem").unwrap();
        assert_eq!(again, m);
    }

    #[test]
    fn rejects_bad_rows() {
        assert!(CohortManifest::from_csv("id,volume_path,treatment,mrs\n".as_bytes(), "h").is_err());
        let bad_mrs = "id,volume_path,treatment,mrs,split\na,v,1,7,train\n";
        assert!(CohortManifest::from_csv(bad_mrs.as_bytes(), "m").is_err());
        let bad_treat = "id,volume_path,treatment,mrs,split\na,v,2,1,train\n";
        assert!(CohortManifest::from_csv(bad_treat.as_bytes(), "t").is_err());
        let dup = "id,volume_path,treatment,mrs,split\na,v,1,1,train\na,v,0,1,test\n";
        assert!(CohortManifest::from_csv(dup.as_bytes(), "d").is_err());
    }

    #[test]
    fn image_only_is_treatment_one_hot() {
        let m = manifest();
        let enc = MetadataEncoder::fit(&m).unwrap();
        let t = encode_metadata(&m.records[0], &m, &enc, Mode::ImageOnly).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
        let t = encode_metadata(&m.records[1], &m, &enc, Mode::ImageOnly).unwrap();
        assert_eq!(t.data(), &[1.0, 0.0]);
    }

    #[test]
    fn schema_statistics_and_layout() {
        let m = manifest();
        let enc = MetadataEncoder::fit(&m).unwrap();
        // age from training rows {60, 70}: mean 65, std 5, median 65
        assert_eq!(
            enc.features[0],
            FeatureEncoding::Continuous {
                name: "age".into(),
                mean: 65.0,
                std: 5.0,
                median: 65.0
            }
        );
        let layout = enc.layout();
        assert_eq!(layout.len(), 52);
        assert_eq!(
            &layout[..7],
            [
                "treatment=control",
                "treatment=evt",
                "age",
                "sex=F",
                "sex=M",
                "site=1",
                "site=2"
            ]
        );

        let (p1, s) = enc.encode(&m, &m.records[0], Mode::Multimodal).unwrap();
        assert_eq!(&p1[..7], &[0.0, 1.0, -1.0, 0.0, 1.0, 1.0, 0.0]);
        assert_eq!(s, EncodeStats::default());
        assert!(p1[7..].iter().all(|&v| v == 0.0));

        // missing age imputes the median, which z-scores to 0 here
        let (p3, s) = enc.encode(&m, &m.records[2], Mode::MetadataOnly).unwrap();
        assert_eq!(p3[2], 0.0);
        assert_eq!(s.imputed, 1);

        // test row: unseen sex "X" and site "3" become all-zero groups
        let (p4, s) = enc.encode(&m, &m.records[3], Mode::Multimodal).unwrap();
        assert_eq!(&p4[..7], &[1.0, 0.0, 3.0, 0.0, 0.0, 0.0, 0.0]);
        assert_eq!(s.unknown_levels, 2);
    }

    #[test]
    fn statistics_ignore_test_rows() {
        let mut m = manifest();
        let before = MetadataEncoder::fit(&m).unwrap();
        m.records[3].fields[0] = Some("1000".into());
        m.records[3].fields[1] = Some("Q".into());
        assert_eq!(MetadataEncoder::fit(&m).unwrap(), before);
    }

    #[test]
    fn width_is_fixed_by_truncation() {
        let m = manifest();
        let enc = MetadataEncoder::fit_with_width(&m, 4).unwrap();
        let (row, _) = enc.encode(&m, &m.records[0], Mode::Multimodal).unwrap();
        assert_eq!(row.len(), 4);
        assert_eq!(enc.layout().len(), 4);
    }

    #[test]
    fn needs_training_rows() {
        let mut m = manifest();
        for r in &mut m.records {
            r.split = Split::Test;
        }
        assert!(matches!(MetadataEncoder::fit(&m), Err(Error::Config(_))));
    }
}
