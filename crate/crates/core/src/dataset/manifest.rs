use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub const MANIFEST_VERSION: &str = "csv/1";

pub const MANIFEST_HEADER: [&str; 9] = [
    "id",
    "path",
    "label",
    "tool",
    "source_db",
    "eye_lx",
    "eye_ly",
    "eye_rx",
    "eye_ry",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Label {
    Bonafide,
    Morph,
}

impl Label {
    pub fn as_str(self) -> &'static str {
        match self {
            Label::Bonafide => "bonafide",
            Label::Morph => "morph",
        }
    }

    pub fn is_morph(self) -> bool {
        self == Label::Morph
    }
}

impl fmt::Display for Label {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Label {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_lowercase().as_str() {
            "bonafide" | "bona_fide" | "bona-fide" => Ok(Label::Bonafide),
            "morph" | "attack" => Ok(Label::Morph),
            other => Err(format!("unknown label `{other}`")),
        }
    }
}

/// Morphing tool tag. The vocabulary is open: any lowercase tag made of
/// `[a-z0-9_-]` is accepted, `none` is reserved for bona fide samples.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct Tool(String);

impl Tool {
    pub const NONE: &'static str = "none";
    pub const AMSL: &'static str = "amsl";
    pub const FACEMORPHER: &'static str = "facemorpher";
    pub const OPENCV: &'static str = "opencv";
    pub const STYLEGAN2: &'static str = "stylegan2";
    pub const WEBMORPH: &'static str = "webmorph";
    pub const FACEFUSION: &'static str = "facefusion";

    pub fn new(tag: &str) -> std::result::Result<Self, String> {
        let tag = tag.trim().to_ascii_lowercase();
        if tag.is_empty() {
            return Err("empty tool tag".into());
        }
        if !tag
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_' || c == '-')
        {
            return Err(format!("invalid tool tag `{tag}`"));
        }
        Ok(Tool(tag))
    }

    pub fn none() -> Self {
        Tool(Self::NONE.to_string())
    }

    pub fn is_none(&self) -> bool {
        self.0 == Self::NONE
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for Tool {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl TryFrom<String> for Tool {
    type Error = String;

    fn try_from(value: String) -> std::result::Result<Self, String> {
        Tool::new(&value)
    }
}

impl From<Tool> for String {
    fn from(t: Tool) -> String {
        t.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum SourceDb {
    Amsl,
    Frll,
    Feret,
    Frgc,
}

impl SourceDb {
    pub fn as_str(self) -> &'static str {
        match self {
            SourceDb::Amsl => "AMSL",
            SourceDb::Frll => "FRLL",
            SourceDb::Feret => "FERET",
            SourceDb::Frgc => "FRGC",
        }
    }
}

impl FromStr for SourceDb {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s.trim().to_ascii_uppercase().as_str() {
            "AMSL" => Ok(SourceDb::Amsl),
            "FRLL" => Ok(SourceDb::Frll),
            "FERET" => Ok(SourceDb::Feret),
            "FRGC" | "FRGCV2" => Ok(SourceDb::Frgc),
            other => Err(format!("unknown source_db `{other}`")),
        }
    }
}

/// Eye-centre pixel coordinates `(x, y)` in the original image.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EyeLandmarks {
    pub left: (f64, f64),
    pub right: (f64, f64),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleRecord {
    pub id: String,
    pub path: PathBuf,
    pub label: Label,
    pub tool: Tool,
    pub source_db: SourceDb,
    pub landmarks: Option<EyeLandmarks>,
}

impl SampleRecord {
    /// Checks the label/tool pairing.
    pub fn validate(&self) -> std::result::Result<(), String> {
        if self.id.trim().is_empty() {
            return Err("empty id".into());
        }
        match (self.label, self.tool.is_none()) {
            (Label::Bonafide, false) => Err(format!(
                "bona fide sample `{}` carries morph tool `{}`",
                self.id, self.tool
            )),
            (Label::Morph, true) => Err(format!("morph sample `{}` has tool `none`", self.id)),
            _ => Ok(()),
        }
    }

    pub fn stratum(&self) -> (Label, Tool) {
        (self.label, self.tool.clone())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MissingFilePolicy {
    /// Abort loading on the first missing image.
    #[default]
    Fail,
    /// Log a warning and drop the record.
    Warn,
    /// Do not touch the filesystem.
    Skip,
}

#[derive(Debug, Clone, Default)]
pub struct LoadOptions {
    pub missing_files: MissingFilePolicy,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub records: Vec<SampleRecord>,
    pub version: String,
}

impl DatasetManifest {
    pub fn new(records: Vec<SampleRecord>) -> Result<Self> {
        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        let mut seen = HashSet::with_capacity(records.len());
        for r in &records {
            r.validate().map_err(Error::InvalidParam)?;
            if !seen.insert(r.id.as_str()) {
                return Err(Error::DuplicateId(r.id.clone()));
            }
        }
        Ok(Self {
            records,
            version: MANIFEST_VERSION.to_string(),
        })
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&SampleRecord> {
        self.records.iter().find(|r| r.id == id)
    }

    /// Sample counts per `(label, tool)` stratum.
    pub fn counts(&self) -> BTreeMap<(Label, Tool), usize> {
        let mut out = BTreeMap::new();
        for r in &self.records {
            *out.entry(r.stratum()).or_insert(0) += 1;
        }
        out
    }

    pub fn count_label(&self, label: Label) -> usize {
        self.records.iter().filter(|r| r.label == label).count()
    }

    /// Distinct morph tools, sorted.
    pub fn morph_tools(&self) -> Vec<Tool> {
        let mut tools: Vec<Tool> = self
            .records
            .iter()
            .filter(|r| r.label == Label::Morph)
            .map(|r| r.tool.clone())
            .collect();
        tools.sort();
        tools.dedup();
        tools
    }

    /// Keeps the records matching `keep`. The result may be empty.
    pub fn filter(&self, keep: impl Fn(&SampleRecord) -> bool) -> DatasetManifest {
        DatasetManifest {
            records: self.records.iter().filter(|r| keep(r)).cloned().collect(),
            version: self.version.clone(),
        }
    }

    pub fn from_reader<R: Read>(reader: R, base_dir: &Path, opts: &LoadOptions) -> Result<Self> {
        let mut rdr = csv::ReaderBuilder::new()
            .has_headers(true)
            .trim(csv::Trim::All)
            .flexible(true)
            .from_reader(reader);
        let headers = rdr.headers()?.clone();
        if headers.is_empty() || headers.iter().all(|h| h.is_empty()) {
            return Err(Error::NoRecords);
        }
        let column = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
        let mut cols = [None; 9];
        for (slot, name) in cols.iter_mut().zip(MANIFEST_HEADER) {
            *slot = column(name);
        }
        for (i, name) in MANIFEST_HEADER.iter().enumerate().take(5) {
            if cols[i].is_none() {
                return Err(Error::Manifest {
                    line: 1,
                    message: format!("missing required column `{name}`"),
                });
            }
        }

        let mut records = Vec::new();
        let mut seen = HashSet::new();
        for row in rdr.records() {
            let row = row?;
            let line = row.position().map(|p| p.line() as usize).unwrap_or(0);
            if row.iter().all(|f| f.is_empty()) {
                continue;
            }
            let bad = |message: String| Error::Manifest { line, message };
            let field = |i: usize| cols[i].and_then(|c| row.get(c)).unwrap_or("");

            let id = field(0).to_string();
            if id.is_empty() {
                return Err(bad("empty id".into()));
            }
            let raw_path = field(1);
            if raw_path.is_empty() {
                return Err(bad("empty path".into()));
            }
            let label: Label = field(2).parse().map_err(bad)?;
            let tool_field = field(3);
            let tool = if tool_field.is_empty() {
                Tool::none()
            } else {
                Tool::new(tool_field).map_err(bad)?
            };
            let source_db: SourceDb = field(4).parse().map_err(bad)?;

            let coords: Vec<&str> = (5..9).map(field).collect();
            let landmarks = if coords.iter().all(|c| c.is_empty()) {
                None
            } else if coords.iter().any(|c| c.is_empty()) {
                return Err(bad("landmark columns must be all set or all empty".into()));
            } else {
                let mut v = [0.0; 4];
                for (slot, c) in v.iter_mut().zip(&coords) {
                    *slot = c
                        .parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| bad(format!("invalid landmark coordinate `{c}`")))?;
                }
                Some(EyeLandmarks {
                    left: (v[0], v[1]),
                    right: (v[2], v[3]),
                })
            };

            let path = {
                let p = PathBuf::from(raw_path);
                if p.is_relative() {
                    base_dir.join(p)
                } else {
                    p
                }
            };

            let record = SampleRecord {
                id,
                path,
                label,
                tool,
                source_db,
                landmarks,
            };
            record.validate().map_err(bad)?;
            if !seen.insert(record.id.clone()) {
                return Err(Error::DuplicateId(record.id));
            }

            match opts.missing_files {
                MissingFilePolicy::Skip => {}
                _ if record.path.is_file() => {}
                MissingFilePolicy::Fail => return Err(Error::MissingFile(record.path)),
                MissingFilePolicy::Warn => {
                    log::warn!(
                        "manifest line {line}: dropping `{}`, file {} not found",
                        record.id,
                        record.path.display()
                    );
                    continue;
                }
            }
            records.push(record);
        }

        if records.is_empty() {
            return Err(Error::NoRecords);
        }
        Ok(DatasetManifest {
            records,
            version: MANIFEST_VERSION.to_string(),
        })
    }

    /// Writes the manifest as CSV. Paths are written as stored.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(MANIFEST_HEADER)?;
        for r in &self.records {
            let (lx, ly, rx, ry) = match r.landmarks {
                Some(l) => (
                    l.left.0.to_string(),
                    l.left.1.to_string(),
                    l.right.0.to_string(),
                    l.right.1.to_string(),
                ),
                None => Default::default(),
            };
            w.write_record([
                r.id.as_str(),
                &r.path.to_string_lossy(),
                r.label.as_str(),
                r.tool.as_str(),
                r.source_db.as_str(),
                &lx,
                &ly,
                &rx,
                &ry,
            ])?;
        }
        w.flush().map_err(|e| Error::io("<manifest>", e))?;
        Ok(())
    }
}

/// Loads a manifest CSV. Relative image paths resolve against the
/// manifest's directory.
pub fn load_manifest(path: &Path, opts: &LoadOptions) -> Result<DatasetManifest> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let base = path.parent().unwrap_or_else(|| Path::new("."));
    let manifest = DatasetManifest::from_reader(file, base, opts)?;
    log::info!(
        "loaded {} records ({} bona fide, {} morph) from {}",
        manifest.len(),
        manifest.count_label(Label::Bonafide),
        manifest.count_label(Label::Morph),
        path.display()
    );
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> Result<DatasetManifest> {
        let opts = LoadOptions {
            missing_files: MissingFilePolicy::Skip,
        };
        DatasetManifest::from_reader(text.as_bytes(), Path::new("/data"), &opts)
    }

    #[test]
    fn amsl_inventory_counts() {
        let mut text = String::from("id,path,label,tool,source_db,eye_lx,eye_ly,eye_rx,eye_ry\n");
        for i in 0..204 {
            text.push_str(&format!("bf{i},bf/{i}.png,bonafide,none,AMSL,,,,\n"));
        }
        for i in 0..2175 {
            text.push_str(&format!("m{i},m/{i}.png,morph,amsl,AMSL,60,90,120,90\n"));
        }
        let m = parse(&text).unwrap();
        assert_eq!(m.count_label(Label::Bonafide), 204);
        assert_eq!(m.count_label(Label::Morph), 2175);
        assert_eq!(m.morph_tools(), vec![Tool::new("amsl").unwrap()]);
        assert_eq!(m.records[0].path, Path::new("/data/bf/0.png"));
        assert!(m.records[300].landmarks.is_some());
    }

    #[test]
    fn empty_input_has_no_records() {
        assert!(matches!(parse(""), Err(Error::NoRecords)));
        assert!(matches!(
            parse("id,path,label,tool,source_db\n"),
            Err(Error::NoRecords)
        ));
    }

    #[test]
    fn bonafide_with_tool_is_rejected_with_line() {
        let err = parse(
            "id,path,label,tool,source_db\n\
             a,a.png,bonafide,none,FRLL\n\
             b,b.png,bonafide,facemorpher,FRLL\n",
        )
        .unwrap_err();
        match err {
            Error::Manifest { line, .. } => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn morph_without_tool_is_rejected() {
        let err = parse("id,path,label,tool,source_db\nm,m.png,morph,none,FRLL\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let err = parse(
            "id,path,label,tool,source_db\n\
             a,a.png,bonafide,none,FRLL\n\
             a,b.png,bonafide,none,FRLL\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::DuplicateId(id) if id == "a"));
    }

    #[test]
    fn malformed_rows_name_their_line() {
        let err = parse(
            "id,path,label,tool,source_db,eye_lx,eye_ly,eye_rx,eye_ry\n\
             a,a.png,bonafide,none,FRLL,,,,\n\
             b,b.png,morph,webmorph,FRLL,1,2,x,4\n",
        )
        .unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 3, .. }), "{err}");

        let err = parse("id,path,label,tool,source_db\na,a.png,maybe,none,FRLL\n").unwrap_err();
        assert!(matches!(err, Error::Manifest { line: 2, .. }));
    }

    #[test]
    fn extensible_tool_vocabulary() {
        let m = parse("id,path,label,tool,source_db\nu,u.png,morph,ubo-morpher,FRGC\n").unwrap();
        assert_eq!(m.records[0].tool.as_str(), "ubo-morpher");
    }

    #[test]
    fn missing_file_policies() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.csv");
        std::fs::write(
            &path,
            "id,path,label,tool,source_db\na,missing.png,bonafide,none,FRLL\nb,present.png,bonafide,none,FRLL\n",
        )
        .unwrap();
        std::fs::write(dir.path().join("present.png"), b"x").unwrap();

        let fail = load_manifest(&path, &LoadOptions::default()).unwrap_err();
        assert!(matches!(fail, Error::MissingFile(_)));

        let warn = load_manifest(
            &path,
            &LoadOptions {
                missing_files: MissingFilePolicy::Warn,
            },
        )
        .unwrap();
        assert_eq!(warn.len(), 1);
        assert_eq!(warn.records[0].id, "b");
    }

    #[test]
    fn csv_round_trip() {
        let m = parse(
            "id,path,label,tool,source_db,eye_lx,eye_ly,eye_rx,eye_ry\n\
             a,a.png,bonafide,none,FERET,,,,\n\
             b,b.png,morph,stylegan2,FRLL,10.5,20,30,20.25\n",
        )
        .unwrap();
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        let back = parse(std::str::from_utf8(&buf).unwrap()).unwrap();
        assert_eq!(m, back);
    }
}
