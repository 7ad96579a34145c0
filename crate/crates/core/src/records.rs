//! Review and QA corpora: record types, JSONL/CSV ingestion, and
//! train/valid/test split generation.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};

use crate::error::{Error, Result};

/// Ground-truth label of a node. `Unknown` covers unlabeled rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub enum Label {
    Normal,
    Spam,
    #[default]
    Unknown,
}

impl Label {
    pub fn from_code(code: Option<u8>) -> Option<Self> {
        match code {
            None => Some(Label::Unknown),
            Some(0) => Some(Label::Normal),
            Some(1) => Some(Label::Spam),
            Some(_) => None,
        }
    }

    pub fn code(self) -> Option<u8> {
        match self {
            Label::Normal => Some(0),
            Label::Spam => Some(1),
            Label::Unknown => None,
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReviewRecord {
    pub review_id: usize,
    pub user_id: String,
    pub product_id: String,
    pub rating: u8,
    /// Seconds since the Unix epoch, UTC.
    pub timestamp: i64,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QaRecord {
    pub qa_id: usize,
    pub question_id: String,
    pub asker_id: String,
    pub answerer_id: String,
    pub question_time: i64,
    pub answer_time: i64,
    pub text: String,
    pub label: Label,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InputFormat {
    Jsonl,
    Csv,
}

impl InputFormat {
    /// Guesses the format from a file extension; anything but `.csv` is JSONL.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("csv") => InputFormat::Csv,
            _ => InputFormat::Jsonl,
        }
    }
}

pub fn ingest_reviews(path: &Path, format: InputFormat) -> Result<Vec<ReviewRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    match format {
        InputFormat::Jsonl => read_reviews_jsonl(BufReader::new(file)),
        InputFormat::Csv => read_reviews_csv(file),
    }
}

/// Reads JSONL reviews. Blank lines are skipped and do not count as rows.
pub fn read_reviews_jsonl<R: BufRead>(reader: R) -> Result<Vec<ReviewRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = out.len();
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row,
            field: "<json>".into(),
            reason: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::MalformedRow {
            row,
            field: "<json>".into(),
            reason: "expected a JSON object".into(),
        })?;
        let fields = JsonRow { row, obj };
        out.push(review_from_fields(
            row,
            fields.string("user_id")?,
            fields.string("product_id")?,
            fields.integer("rating")?,
            fields.integer("timestamp")?,
            fields.string("text")?,
            fields.label()?,
        )?);
    }
    Ok(out)
}

struct JsonRow<'a> {
    row: usize,
    obj: &'a Map<String, Value>,
}

impl JsonRow<'_> {
    fn err(&self, field: &str, reason: &str) -> Error {
        Error::MalformedRow {
            row: self.row,
            field: field.into(),
            reason: reason.into(),
        }
    }

    fn string(&self, field: &str) -> Result<String> {
        match self.obj.get(field) {
            Some(Value::String(s)) => Ok(s.clone()),
            // numeric ids are common in public dumps
            Some(Value::Number(n)) => Ok(n.to_string()),
            Some(_) => Err(self.err(field, "expected a string")),
            None => Err(self.err(field, "missing")),
        }
    }

    fn integer(&self, field: &str) -> Result<i64> {
        match self.obj.get(field) {
            Some(Value::Number(n)) => n
                .as_i64()
                .ok_or_else(|| self.err(field, "expected an integer")),
            Some(_) => Err(self.err(field, "expected an integer")),
            None => Err(self.err(field, "missing")),
        }
    }

    fn label(&self) -> Result<Label> {
        let code = match self.obj.get("label") {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => match n.as_u64() {
                Some(c) if c <= 1 => Some(c as u8),
                _ => return Err(self.err("label", "expected 0 or 1")),
            },
            Some(_) => return Err(self.err("label", "expected 0 or 1")),
        };
        Ok(Label::from_code(code).expect("code checked above"))
    }
}

fn review_from_fields(
    row: usize,
    user_id: String,
    product_id: String,
    rating: i64,
    timestamp: i64,
    text: String,
    label: Label,
) -> Result<ReviewRecord> {
    if !(1..=5).contains(&rating) {
        return Err(Error::RatingOutOfRange { row, rating });
    }
    Ok(ReviewRecord {
        review_id: row,
        user_id,
        product_id,
        rating: rating as u8,
        timestamp,
        text,
        label,
    })
}

/// Reads CSV reviews with a header row. The text column is expected last;
/// surplus unquoted fields on a row are folded back into the text.
pub fn read_reviews_csv<R: std::io::Read>(reader: R) -> Result<Vec<ReviewRecord>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_reader(reader);
    let header: Vec<String> = rdr
        .headers()
        .map_err(|e| Error::Format(format!("csv header: {e}")))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    let col = |name: &str| header.iter().position(|h| h == name);
    let required = ["user_id", "product_id", "rating", "timestamp", "text"];
    let mut idx = [0usize; 5];
    for (slot, name) in idx.iter_mut().zip(required) {
        *slot = col(name).ok_or_else(|| Error::MalformedRow {
            row: 0,
            field: name.into(),
            reason: "column missing from header".into(),
        })?;
    }
    let [user_col, product_col, rating_col, ts_col, text_col] = idx;
    let label_col = col("label");
    let text_is_last = text_col + 1 == header.len();

    let mut out = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| Error::MalformedRow {
            row,
            field: "<csv>".into(),
            reason: e.to_string(),
        })?;
        let get = |i: usize, field: &str| {
            rec.get(i).ok_or_else(|| Error::MalformedRow {
                row,
                field: field.into(),
                reason: "missing".into(),
            })
        };
        let parse_int = |i: usize, field: &str| -> Result<i64> {
            get(i, field)?
                .trim()
                .parse::<i64>()
                .map_err(|e| Error::MalformedRow {
                    row,
                    field: field.into(),
                    reason: e.to_string(),
                })
        };
        let text = if text_is_last && rec.len() > header.len() {
            rec.iter().skip(text_col).collect::<Vec<_>>().join(",")
        } else {
            get(text_col, "text")?.to_string()
        };
        let label = match label_col.and_then(|i| rec.get(i)).map(str::trim) {
            None | Some("") => Label::Unknown,
            Some("0") => Label::Normal,
            Some("1") => Label::Spam,
            Some(other) => {
                return Err(Error::MalformedRow {
                    row,
                    field: "label".into(),
                    reason: format!("expected 0 or 1, got {other:?}"),
                })
            }
        };
        out.push(review_from_fields(
            row,
            get(user_col, "user_id")?.to_string(),
            get(product_col, "product_id")?.to_string(),
            parse_int(rating_col, "rating")?,
            parse_int(ts_col, "timestamp")?,
            text,
            label,
        )?);
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ReviewRow<'a> {
    user_id: &'a str,
    product_id: &'a str,
    rating: u8,
    timestamp: i64,
    text: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    label: Option<u8>,
}

/// Writes the canonical JSONL form; `review_id` is implied by row order.
pub fn write_reviews_jsonl<W: Write>(mut writer: W, records: &[ReviewRecord]) -> Result<()> {
    for r in records {
        let row = ReviewRow {
            user_id: &r.user_id,
            product_id: &r.product_id,
            rating: r.rating,
            timestamp: r.timestamp,
            text: &r.text,
            label: r.label.code(),
        };
        serde_json::to_writer(&mut writer, &row)?;
        writer
            .write_all(b"\n")
            .map_err(|e| Error::io("<writer>", e))?;
    }
    Ok(())
}

pub fn save_reviews(path: &Path, records: &[ReviewRecord]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_reviews_jsonl(&mut w, records)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn ingest_qa(path: &Path) -> Result<Vec<QaRecord>> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_qa_jsonl(BufReader::new(file))
}

pub fn read_qa_jsonl<R: BufRead>(reader: R) -> Result<Vec<QaRecord>> {
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line.map_err(|e| Error::io("<reader>", e))?;
        if line.trim().is_empty() {
            continue;
        }
        let row = out.len();
        let value: Value = serde_json::from_str(&line).map_err(|e| Error::MalformedRow {
            row,
            field: "<json>".into(),
            reason: e.to_string(),
        })?;
        let obj = value.as_object().ok_or_else(|| Error::MalformedRow {
            row,
            field: "<json>".into(),
            reason: "expected a JSON object".into(),
        })?;
        let f = JsonRow { row, obj };
        let question_time = f.integer("question_time")?;
        let answer_time = f.integer("answer_time")?;
        if answer_time < question_time {
            return Err(f.err("answer_time", "earlier than question_time"));
        }
        out.push(QaRecord {
            qa_id: row,
            question_id: f.string("question_id")?,
            asker_id: f.string("asker_id")?,
            answerer_id: f.string("answerer_id")?,
            question_time,
            answer_time,
            text: f.string("text")?,
            label: f.label()?,
        });
    }
    Ok(out)
}

pub fn labels_of(records: &[ReviewRecord]) -> Vec<Label> {
    records.iter().map(|r| r.label).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SplitTag {
    Train,
    Valid,
    Test,
}

impl SplitTag {
    pub fn code(self) -> u8 {
        match self {
            SplitTag::Train => 0,
            SplitTag::Valid => 1,
            SplitTag::Test => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(SplitTag::Train),
            1 => Some(SplitTag::Valid),
            2 => Some(SplitTag::Test),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitAssignment {
    pub seed: u64,
    pub ratios: [f64; 3],
    pub tags: Vec<SplitTag>,
}

#[derive(Serialize, Deserialize)]
struct SplitFile {
    seed: u64,
    ratios: [f64; 3],
    tags: Vec<u8>,
}

impl SplitAssignment {
    pub fn len(&self) -> usize {
        self.tags.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tags.is_empty()
    }

    /// Node indices carrying `tag`, ascending.
    pub fn nodes(&self, tag: SplitTag) -> Vec<usize> {
        self.tags
            .iter()
            .enumerate()
            .filter(|(_, t)| **t == tag)
            .map(|(i, _)| i)
            .collect()
    }

    /// (train, valid, test) counts.
    pub fn sizes(&self) -> (usize, usize, usize) {
        let count = |t| self.tags.iter().filter(|x| **x == t).count();
        (
            count(SplitTag::Train),
            count(SplitTag::Valid),
            count(SplitTag::Test),
        )
    }

    pub fn to_json(&self) -> Result<String> {
        let file = SplitFile {
            seed: self.seed,
            ratios: self.ratios,
            tags: self.tags.iter().map(|t| t.code()).collect(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let file: SplitFile = serde_json::from_str(s)?;
        let tags = file
            .tags
            .iter()
            .map(|&c| {
                SplitTag::from_code(c)
                    .ok_or_else(|| Error::Format(format!("split tag {c} not in 0..=2")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(SplitAssignment {
            seed: file.seed,
            ratios: file.ratios,
            tags,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let s = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&s)
    }
}

fn validate_ratios(ratios: [f64; 3]) -> Result<()> {
    if ratios.iter().any(|r| !r.is_finite() || *r < 0.0) {
        return Err(Error::InvalidSplit(format!(
            "ratios must be finite and nonnegative, got {ratios:?}"
        )));
    }
    let sum: f64 = ratios.iter().sum();
    if (sum - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidSplit(format!(
            "ratios must sum to 1, got {sum}"
        )));
    }
    Ok(())
}

/// `floor(ratio * n)` evaluated on the ratio's shortest decimal form, so
/// that e.g. 0.29 * 100 gives 29 rather than 28.
pub fn floor_fraction(ratio: f64, n: usize) -> usize {
    let repr = format!("{ratio}");
    let (int_part, frac_part) = repr.split_once('.').unwrap_or((&repr, ""));
    let digits = format!("{int_part}{frac_part}");
    if frac_part.len() <= 30 {
        if let Ok(num) = digits.parse::<u128>() {
            let den = 10u128.pow(frac_part.len() as u32);
            if let Some(prod) = num.checked_mul(n as u128) {
                return (prod / den) as usize;
            }
        }
    }
    (ratio * n as f64).floor() as usize
}

/// Uniform random split: nodes are shuffled with a seeded PRNG, then the
/// first `floor(r_train*N)` go to train, the next `floor(r_valid*N)` to
/// valid and the rest to test.
pub fn make_split(n_nodes: usize, ratios: [f64; 3], seed: u64) -> Result<SplitAssignment> {
    if n_nodes == 0 {
        return Err(Error::InvalidSplit("n_nodes must be at least 1".into()));
    }
    validate_ratios(ratios)?;
    let mut order: Vec<usize> = (0..n_nodes).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    order.shuffle(&mut rng);
    let mut tags = vec![SplitTag::Test; n_nodes];
    assign_prefix(&order, ratios, &mut tags);
    Ok(SplitAssignment {
        seed,
        ratios,
        tags,
    })
}

fn assign_prefix(order: &[usize], ratios: [f64; 3], tags: &mut [SplitTag]) {
    let n = order.len();
    let n_train = floor_fraction(ratios[0], n).min(n);
    let n_valid = floor_fraction(ratios[1], n).min(n - n_train);
    for (pos, &node) in order.iter().enumerate() {
        tags[node] = if pos < n_train {
            SplitTag::Train
        } else if pos < n_train + n_valid {
            SplitTag::Valid
        } else {
            SplitTag::Test
        };
    }
}

/// Label-stratified variant: the floor formula is applied within each
/// label class (normal, spam, unknown) separately, so overall sizes can
/// differ from the uniform split by up to two nodes per tag.
pub fn make_stratified_split(
    labels: &[Label],
    ratios: [f64; 3],
    seed: u64,
) -> Result<SplitAssignment> {
    if labels.is_empty() {
        return Err(Error::InvalidSplit("n_nodes must be at least 1".into()));
    }
    validate_ratios(ratios)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut tags = vec![SplitTag::Test; labels.len()];
    for class in [Label::Normal, Label::Spam, Label::Unknown] {
        let mut members: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        members.shuffle(&mut rng);
        assign_prefix(&members, ratios, &mut tags);
    }
    Ok(SplitAssignment {
        seed,
        ratios,
        tags,
    })
}
