//! Counting negated captions in large caption corpora.
//!
//! A caption is *negative* when any token is in the negation lexicon, and
//! *negative-then-noun* when, in addition, some token after a negative word is
//! in the noun list (not necessarily adjacent). Nouns are found by list
//! membership, so the noun sub-count depends on the list used.

use std::collections::HashSet;
use std::fs::File;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The 26 negative words used by default.
pub const DEFAULT_NEGATIONS: [&str; 26] = [
    "not", "no", "never", "none", "nothing", "nobody", "nowhere", "neither", "nor", "can't",
    "cannot", "won't", "don't", "doesn't", "didn't", "isn't", "aren't", "wasn't", "weren't",
    "hasn't", "haven't", "hadn't", "shouldn't", "wouldn't", "couldn't", "mustn't",
];

/// Bundled noun list: common English nouns plus the COCO and VOC class names.
pub const BUNDLED_NOUNS: &str = include_str!("../data/nouns.txt");

fn word_set<'a>(words: impl Iterator<Item = &'a str>) -> HashSet<String> {
    words
        .map(str::trim)
        .filter(|w| !w.is_empty() && !w.starts_with('#'))
        .map(|w| w.to_lowercase().replace('\u{2019}', "'"))
        .collect()
}

fn read_word_file(path: &Path) -> Result<HashSet<String>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let set = word_set(text.lines());
    if set.is_empty() {
        return Err(Error::Config(format!("{}: word list is empty", path.display())));
    }
    Ok(set)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NegationLexicon {
    words: HashSet<String>,
}

impl Default for NegationLexicon {
    fn default() -> Self {
        Self {
            words: word_set(DEFAULT_NEGATIONS.into_iter()),
        }
    }
}

impl NegationLexicon {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Result<Self> {
        let words = word_set(words.into_iter());
        if words.is_empty() {
            return Err(Error::Config("negation lexicon is empty".into()));
        }
        Ok(Self { words })
    }

    /// One word per line; blank lines and `#` comments ignored.
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            words: read_word_file(path.as_ref())?,
        })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NounList {
    words: HashSet<String>,
}

impl Default for NounList {
    fn default() -> Self {
        Self {
            words: word_set(BUNDLED_NOUNS.lines()),
        }
    }
}

impl NounList {
    pub fn new<'a>(words: impl IntoIterator<Item = &'a str>) -> Self {
        Self {
            words: word_set(words.into_iter()),
        }
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        Ok(Self {
            words: read_word_file(path.as_ref())?,
        })
    }

    pub fn contains(&self, token: &str) -> bool {
        self.words.contains(token)
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

fn is_apostrophe(c: char) -> bool {
    c == '\'' || c == '\u{2019}'
}

/// Lowercased word tokens. Splits on whitespace and punctuation, except that
/// an apostrophe between two alphanumerics stays inside the token
/// (`"don't"` is one token). Typographic apostrophes become `'`.
pub fn tokenize(text: &str) -> Vec<String> {
    let chars: Vec<char> = text.chars().collect();
    let mut tokens = Vec::new();
    let mut current = String::new();
    for (i, &c) in chars.iter().enumerate() {
        if c.is_alphanumeric() {
            current.extend(c.to_lowercase());
        } else if is_apostrophe(c)
            && !current.is_empty()
            && chars.get(i + 1).is_some_and(|n| n.is_alphanumeric())
        {
            current.push('\'');
        } else if !current.is_empty() {
            tokens.push(std::mem::take(&mut current));
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum CaptionClass {
    None,
    Negative,
    NegativeThenNoun,
}

pub fn classify_caption<S: AsRef<str>>(tokens: &[S], lexicon: &NegationLexicon, nouns: &NounList) -> CaptionClass {
    let Some(first) = tokens.iter().position(|t| lexicon.contains(t.as_ref())) else {
        return CaptionClass::None;
    };
    if tokens[first + 1..].iter().any(|t| nouns.contains(t.as_ref())) {
        CaptionClass::NegativeThenNoun
    } else {
        CaptionClass::Negative
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorpusStats {
    pub total_texts: u64,
    pub texts_with_negative: u64,
    pub texts_with_negative_then_noun: u64,
}

impl CorpusStats {
    pub fn record(&mut self, class: CaptionClass) {
        self.total_texts += 1;
        match class {
            CaptionClass::None => {}
            CaptionClass::Negative => self.texts_with_negative += 1,
            CaptionClass::NegativeThenNoun => {
                self.texts_with_negative += 1;
                self.texts_with_negative_then_noun += 1;
            }
        }
    }

    pub fn merge(&mut self, other: &CorpusStats) {
        self.total_texts += other.total_texts;
        self.texts_with_negative += other.texts_with_negative;
        self.texts_with_negative_then_noun += other.texts_with_negative_then_noun;
    }

    fn percent(part: u64, total: u64) -> f64 {
        if total == 0 {
            0.0
        } else {
            100.0 * part as f64 / total as f64
        }
    }

    pub fn negative_percent(&self) -> f64 {
        Self::percent(self.texts_with_negative, self.total_texts)
    }

    pub fn negative_then_noun_percent(&self) -> f64 {
        Self::percent(self.texts_with_negative_then_noun, self.total_texts)
    }

    pub fn summary(&self) -> String {
        format!(
            "{} texts; {} with negative words ({:.2}%); {} with a noun after a negative word ({:.2}%)",
            self.total_texts,
            self.texts_with_negative,
            self.negative_percent(),
            self.texts_with_negative_then_noun,
            self.negative_then_noun_percent()
        )
    }
}

/// How captions are laid out in a shard.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum InputFormat {
    /// One caption per line; blank lines are skipped.
    Txt,
    /// Comma-separated with a header row; captions in column `col`.
    Csv { col: usize },
    /// Tab-separated with a header row; captions in column `col`.
    Tsv { col: usize },
}

impl FromStr for InputFormat {
    type Err = Error;

    /// `txt`, `csv`, `tsv`, `csv:col=N` or `tsv:col=N`.
    fn from_str(s: &str) -> Result<Self> {
        let (kind, rest) = s.split_once(':').unwrap_or((s, ""));
        let col = if rest.is_empty() {
            0
        } else {
            rest.strip_prefix("col=")
                .and_then(|n| n.parse().ok())
                .ok_or_else(|| Error::Config(format!("bad format option {rest:?}, expected col=N")))?
        };
        match kind {
            "txt" if rest.is_empty() => Ok(InputFormat::Txt),
            "csv" => Ok(InputFormat::Csv { col }),
            "tsv" => Ok(InputFormat::Tsv { col }),
            _ => Err(Error::Config(format!("unknown input format {s:?}"))),
        }
    }
}

/// Counts of one shard plus the number of captions that held invalid UTF-8.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct ShardStats {
    pub stats: CorpusStats,
    pub invalid_utf8: u64,
}

/// Scans captions from any reader.
pub fn scan_reader<R: Read>(
    reader: R,
    format: InputFormat,
    lexicon: &NegationLexicon,
    nouns: &NounList,
) -> std::io::Result<ShardStats> {
    let mut out = ShardStats::default();
    let mut visit = |bytes: &[u8]| {
        let text = String::from_utf8_lossy(bytes);
        if matches!(text, std::borrow::Cow::Owned(_)) {
            out.invalid_utf8 += 1;
        }
        let tokens = tokenize(&text);
        out.stats.record(classify_caption(&tokens, lexicon, nouns));
    };
    match format {
        InputFormat::Txt => {
            let mut reader = BufReader::new(reader);
            let mut line = Vec::new();
            loop {
                line.clear();
                if reader.read_until(b'\n', &mut line)? == 0 {
                    break;
                }
                while matches!(line.last(), Some(b'\n' | b'\r')) {
                    line.pop();
                }
                if line.iter().all(u8::is_ascii_whitespace) {
                    continue;
                }
                visit(&line);
            }
        }
        InputFormat::Csv { col } | InputFormat::Tsv { col } => {
            let delimiter = if matches!(format, InputFormat::Csv { .. }) { b',' } else { b'\t' };
            let mut rdr = csv::ReaderBuilder::new()
                .delimiter(delimiter)
                .has_headers(true)
                .flexible(true)
                .from_reader(reader);
            let mut record = csv::ByteRecord::new();
            while rdr.read_byte_record(&mut record).map_err(std::io::Error::other)? {
                if let Some(field) = record.get(col) {
                    visit(field);
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardReport {
    pub path: PathBuf,
    pub stats: CorpusStats,
    pub invalid_utf8: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShardError {
    pub path: PathBuf,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub stats: CorpusStats,
    pub invalid_utf8: u64,
    pub shards: Vec<ShardReport>,
    pub errors: Vec<ShardError>,
}

impl ScanReport {
    pub fn is_complete(&self) -> bool {
        self.errors.is_empty()
    }
}

/// Scans every shard on a pool of `workers` threads. Unreadable shards are
/// recorded in [`ScanReport::errors`] and do not stop the scan. Totals are
/// merged in input order.
pub fn scan_corpus(
    inputs: &[PathBuf],
    lexicon: &NegationLexicon,
    nouns: &NounList,
    workers: usize,
    format: InputFormat,
) -> Result<ScanReport> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    let results: Vec<std::result::Result<ShardReport, ShardError>> = pool.install(|| {
        inputs
            .par_iter()
            .map(|path| {
                let scanned = File::open(path).and_then(|f| scan_reader(f, format, lexicon, nouns));
                match scanned {
                    Ok(s) => {
                        log::info!("{}: {}", path.display(), s.stats.summary());
                        Ok(ShardReport {
                            path: path.clone(),
                            stats: s.stats,
                            invalid_utf8: s.invalid_utf8,
                        })
                    }
                    Err(e) => {
                        log::error!("{}: {e}", path.display());
                        Err(ShardError {
                            path: path.clone(),
                            message: e.to_string(),
                        })
                    }
                }
            })
            .collect()
    });
    let mut report = ScanReport {
        stats: CorpusStats::default(),
        invalid_utf8: 0,
        shards: Vec::new(),
        errors: Vec::new(),
    };
    for r in results {
        match r {
            Ok(shard) => {
                report.stats.merge(&shard.stats);
                report.invalid_utf8 += shard.invalid_utf8;
                report.shards.push(shard);
            }
            Err(e) => report.errors.push(e),
        }
    }
    Ok(report)
}
