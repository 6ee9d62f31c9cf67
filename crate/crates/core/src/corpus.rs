//! Labeled and unlabeled text collections: data model, JSONL ingestion,
//! stratified splitting.

use std::collections::{BTreeSet, HashSet};
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// The five rubric categories a reviewer may attach to a true alarming response.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RubricCategory {
    HarmToSelf,
    HarmToAnother,
    HarmFromAnother,
    SevereDepressionTrauma,
    SeriousRequestForHelp,
}

impl RubricCategory {
    pub const ALL: [RubricCategory; 5] = [
        RubricCategory::HarmToSelf,
        RubricCategory::HarmToAnother,
        RubricCategory::HarmFromAnother,
        RubricCategory::SevereDepressionTrauma,
        RubricCategory::SeriousRequestForHelp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RubricCategory::HarmToSelf => "harm_to_self",
            RubricCategory::HarmToAnother => "harm_to_another",
            RubricCategory::HarmFromAnother => "harm_from_another",
            RubricCategory::SevereDepressionTrauma => "severe_depression_trauma",
            RubricCategory::SeriousRequestForHelp => "serious_request_for_help",
        }
    }

    /// Reviewer guidance shown next to the category selector.
    pub fn details(self) -> &'static str {
        match self {
            RubricCategory::HarmToSelf => {
                "Suicidal or self-harming thoughts or actions, eating disorder, drug use"
            }
            RubricCategory::HarmToAnother => {
                "Threat or admission of violence, threat of sexual assault, threatening hate speech"
            }
            RubricCategory::HarmFromAnother => "Report of abuse, report of sexual assault, bullying",
            RubricCategory::SevereDepressionTrauma => "Ongoing or unresolved depression or trauma",
            RubricCategory::SeriousRequestForHelp => "Specific serious request for help, not test related",
        }
    }
}

impl fmt::Display for RubricCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RubricCategory {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RubricCategory::ALL
            .into_iter()
            .find(|c| c.as_str() == s)
            .ok_or_else(|| Error::Validation(format!("unknown rubric category {s:?}")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Student,
    Supplementary,
}

/// Binary label: 0 = normal, 1 = alarming.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Label(u8);

impl Label {
    pub const NORMAL: Label = Label(0);
    pub const ASR: Label = Label(1);

    pub fn new(value: u8) -> Result<Self> {
        match value {
            0 | 1 => Ok(Label(value)),
            other => Err(Error::Validation(format!("label must be 0 or 1, got {other}"))),
        }
    }

    pub fn is_asr(self) -> bool {
        self.0 == 1
    }

    pub fn value(self) -> u8 {
        self.0
    }
}

impl Serialize for Label {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> std::result::Result<S::Ok, S::Error> {
        serializer.serialize_u8(self.0)
    }
}

impl<'de> Deserialize<'de> for Label {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> std::result::Result<Self, D::Error> {
        let raw = i64::deserialize(deserializer)?;
        u8::try_from(raw)
            .ok()
            .and_then(|v| Label::new(v).ok())
            .ok_or_else(|| serde::de::Error::custom(format!("label must be 0 or 1, got {raw}")))
    }
}

/// One training or validation text.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledText {
    pub id: String,
    pub text: String,
    pub label: Label,
    pub source: Source,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub category: Option<RubricCategory>,
}

fn parse_record(line: &str, line_no: usize) -> Result<LabeledText> {
    let record: LabeledText = serde_json::from_str(line).map_err(|e| Error::Parse {
        line: line_no,
        message: e.to_string(),
    })?;
    if record.id.is_empty() {
        return Err(Error::Parse {
            line: line_no,
            message: "empty id".into(),
        });
    }
    Ok(record)
}

fn check_unique_ids<'a>(records: impl IntoIterator<Item = &'a LabeledText>) -> Result<()> {
    let mut seen = HashSet::new();
    for r in records {
        if !seen.insert(r.id.as_str()) {
            return Err(Error::Validation(format!("duplicate id {:?}", r.id)));
        }
    }
    Ok(())
}

/// Parse labeled records from any reader, one JSON object per line.
/// Blank lines are skipped; line numbers in errors are 1-based.
pub fn read_labeled(reader: impl BufRead) -> Result<Vec<LabeledText>> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line.map_err(|e| Error::Parse {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(parse_record(&line, idx + 1)?);
    }
    check_unique_ids(&out)?;
    Ok(out)
}

pub fn load_labeled(path: impl AsRef<Path>) -> Result<Vec<LabeledText>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_labeled(BufReader::new(file))
}

pub fn write_labeled_to(mut writer: impl Write, records: &[LabeledText]) -> std::io::Result<()> {
    for r in records {
        serde_json::to_writer(&mut writer, r)?;
        writer.write_all(b"\n")?;
    }
    writer.flush()
}

pub fn write_labeled(path: impl AsRef<Path>, records: &[LabeledText]) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    write_labeled_to(BufWriter::new(file), records).map_err(|e| Error::io(path, e))
}

/// A deterministic train/dev partition of a labeled collection.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusSplit {
    pub train_ids: BTreeSet<String>,
    pub dev_ids: BTreeSet<String>,
    pub seed: u64,
}

impl CorpusSplit {
    /// Materialize both sides, preserving corpus order.
    pub fn partition<'a>(&self, corpus: &'a [LabeledText]) -> (Vec<&'a LabeledText>, Vec<&'a LabeledText>) {
        corpus.iter().partition(|r| self.train_ids.contains(&r.id))
    }
}

/// Stratified split: `round(ratio * N)` records go to train, allocated across
/// the two labels by largest remainder.
pub fn split(corpus: &[LabeledText], ratio: f64, seed: u64) -> Result<CorpusSplit> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::InvalidArgument(format!("split ratio must lie in (0,1), got {ratio}")));
    }
    if corpus.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "cannot stratify a corpus of {} record(s)",
            corpus.len()
        )));
    }
    check_unique_ids(corpus)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut classes: [Vec<&str>; 2] = [Vec::new(), Vec::new()];
    for r in corpus {
        classes[r.label.value() as usize].push(r.id.as_str());
    }
    for class in classes.iter_mut() {
        class.shuffle(&mut rng);
    }

    let n = corpus.len();
    let n_train = (ratio * n as f64).round() as usize;
    let quotas: Vec<f64> = classes.iter().map(|c| ratio * c.len() as f64).collect();
    let mut take: Vec<usize> = quotas.iter().map(|q| q.floor() as usize).collect();
    let mut remaining = n_train.saturating_sub(take.iter().sum());
    let mut order: Vec<usize> = vec![0, 1];
    order.sort_by(|&a, &b| {
        let fa = quotas[a] - quotas[a].floor();
        let fb = quotas[b] - quotas[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    for &c in order.iter().cycle().take(4) {
        if remaining == 0 {
            break;
        }
        if take[c] < classes[c].len() {
            take[c] += 1;
            remaining -= 1;
        }
    }

    // Keep positives on both sides whenever there are at least two of them.
    let positives = classes[1].len();
    if positives >= 2 {
        if take[1] == 0 && take[0] > 0 {
            take[1] = 1;
            take[0] -= 1;
        } else if take[1] == positives && take[0] < classes[0].len() {
            take[1] -= 1;
            take[0] += 1;
        }
    }

    let mut train_ids = BTreeSet::new();
    let mut dev_ids = BTreeSet::new();
    for (class, &k) in classes.iter().zip(&take) {
        for (i, id) in class.iter().enumerate() {
            if i < k {
                train_ids.insert(id.to_string());
            } else {
                dev_ids.insert(id.to_string());
            }
        }
    }
    Ok(CorpusSplit {
        train_ids,
        dev_ids,
        seed,
    })
}

/// Unlabeled sample of typical traffic used to turn review percentages into cutoffs.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ThresholdCorpus {
    texts: Vec<String>,
}

impl ThresholdCorpus {
    pub fn new(texts: Vec<String>) -> Self {
        ThresholdCorpus { texts }
    }

    /// One raw text per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        let mut texts = Vec::new();
        for line in BufReader::new(file).lines() {
            let line = line.map_err(|e| Error::io(path, e))?;
            if !line.trim().is_empty() {
                texts.push(line);
            }
        }
        Ok(ThresholdCorpus { texts })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        for t in &self.texts {
            // One text per line: embedded newlines are folded to spaces.
            writeln!(w, "{}", t.replace(['\n', '\r'], " ")).map_err(|e| Error::io(path, e))?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn texts(&self) -> &[String] {
        &self.texts
    }

    pub fn declared_size(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }

    /// SHA-256 over the newline-joined texts, hex encoded.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        for t in &self.texts {
            h.update(t.as_bytes());
            h.update(b"\n");
        }
        hex::encode(h.finalize())
    }
}

/// Known alarming texts; every element carries label 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ValidationSet {
    texts: Vec<LabeledText>,
}

impl ValidationSet {
    pub fn new(texts: Vec<LabeledText>) -> Result<Self> {
        if let Some(bad) = texts.iter().find(|t| !t.label.is_asr()) {
            return Err(Error::Validation(format!(
                "validation record {:?} has label 0; validation sets hold alarming texts only",
                bad.id
            )));
        }
        check_unique_ids(&texts)?;
        Ok(ValidationSet { texts })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        ValidationSet::new(load_labeled(path)?)
    }

    pub fn texts(&self) -> &[LabeledText] {
        &self.texts
    }

    pub fn len(&self) -> usize {
        self.texts.len()
    }

    pub fn is_empty(&self) -> bool {
        self.texts.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rec(id: &str, label: u8) -> LabeledText {
        LabeledText {
            id: id.into(),
            text: format!("text {id}"),
            label: Label::new(label).unwrap(),
            source: Source::Student,
            category: None,
        }
    }

    #[test]
    fn reads_records_in_order() {
        let data = concat!(
            r#"{"id":"a","text":"x","label":0,"source":"student"}"#,
            "\n",
            r#"{"id":"b","text":"y","label":1,"source":"supplementary","category":"harm_to_self"}"#,
            "\n",
            r#"{"id":"c","text":"z","label":0,"source":"student"}"#,
            "\n"
        );
        let recs = read_labeled(data.as_bytes()).unwrap();
        let ids: Vec<_> = recs.iter().map(|r| r.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(recs[1].category, Some(RubricCategory::HarmToSelf));
    }

    #[test]
    fn missing_label_names_the_line() {
        let data = concat!(
            r#"{"id":"a","text":"x","label":0,"source":"student"}"#,
            "\n",
            r#"{"id":"b","text":"y","source":"student"}"#,
            "\n"
        );
        match read_labeled(data.as_bytes()) {
            Err(Error::Parse { line, message }) => {
                assert_eq!(line, 2);
                assert!(message.contains("label"), "{message}");
            }
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn rejects_bad_label_and_unknown_fields() {
        let bad_label = r#"{"id":"a","text":"x","label":2,"source":"student"}"#;
        assert!(matches!(read_labeled(bad_label.as_bytes()), Err(Error::Parse { line: 1, .. })));
        let extra = r#"{"id":"a","text":"x","label":0,"source":"student","extra":1}"#;
        assert!(read_labeled(extra.as_bytes()).is_err());
    }

    #[test]
    fn duplicate_ids_are_a_validation_error() {
        let data = concat!(
            r#"{"id":"a","text":"x","label":0,"source":"student"}"#,
            "\n",
            r#"{"id":"a","text":"y","label":0,"source":"student"}"#
        );
        assert!(matches!(read_labeled(data.as_bytes()), Err(Error::Validation(_))));
    }

    #[test]
    fn split_ten_records() {
        let corpus: Vec<_> = (0..10).map(|i| rec(&format!("r{i}"), (i == 3) as u8)).collect();
        let s = split(&corpus, 0.8, 7).unwrap();
        assert_eq!(s.train_ids.len(), 8);
        assert_eq!(s.dev_ids.len(), 2);
        assert_eq!(s, split(&corpus, 0.8, 7).unwrap());
    }

    #[test]
    fn split_stratifies_positives() {
        let corpus: Vec<_> = (0..100).map(|i| rec(&format!("r{i:03}"), (i % 10 == 0) as u8)).collect();
        let s = split(&corpus, 0.8, 11).unwrap();
        let (train, dev) = s.partition(&corpus);
        let pos = |v: &[&LabeledText]| v.iter().filter(|r| r.label.is_asr()).count();
        assert_eq!((train.len(), dev.len()), (80, 20));
        assert_eq!(pos(&train), 8);
        assert_eq!(pos(&dev), 2);
    }

    #[test]
    fn split_rejects_single_record_and_bad_ratio() {
        assert!(split(&[rec("a", 1)], 0.8, 1).is_err());
        let two = [rec("a", 0), rec("b", 1)];
        assert!(split(&two, 0.0, 1).is_err());
        assert!(split(&two, 1.0, 1).is_err());
    }

    #[test]
    fn validation_set_requires_label_one() {
        assert!(ValidationSet::new(vec![rec("a", 1), rec("b", 0)]).is_err());
        assert_eq!(ValidationSet::new(vec![rec("a", 1)]).unwrap().len(), 1);
    }

    #[test]
    fn rubric_category_round_trips_through_str() {
        for c in RubricCategory::ALL {
            assert_eq!(c.as_str().parse::<RubricCategory>().unwrap(), c);
        }
        assert!("harm".parse::<RubricCategory>().is_err());
    }

    #[test]
    fn threshold_fingerprint_tracks_content() {
        let a = ThresholdCorpus::new(vec!["one".into(), "two".into()]);
        let b = ThresholdCorpus::new(vec!["one".into(), "two".into()]);
        let c = ThresholdCorpus::new(vec!["two".into(), "one".into()]);
        assert_eq!(a.fingerprint(), b.fingerprint());
        assert_ne!(a.fingerprint(), c.fingerprint());
    }
}
