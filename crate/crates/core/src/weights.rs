//! Phone-dependent edit weights.
//!
//! Weights are estimated from forced-alignment score losses measured by an
//! external scorer: for every phone under test, a sample of dictionary words
//! containing it is edited (phone deleted, inserted, or replaced) and each
//! edited transcription is scored against every synthesized voice. This module
//! plans those probes, averages the returned score deltas and normalizes them
//! to mean 1.0 per deletion vector, insertion vector and substitution row.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::lexicon::{normalize_word, parse_phone, Inventory, Phone, PhoneSeq, PronouncingDictionary, WakeWordSpec};

/// Tolerance on the mean-one invariant of stored and built tables.
pub const MEAN_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, PartialEq)]
pub enum WeightsError {
    #[error("no dictionary word contains phone {0}")]
    NoQualifyingWords(Phone),
    #[error("no probe scores given")]
    EmptyInput,
    #[error("probe score for {phone} is a {found} edit, expected {expected}")]
    KindMismatch { phone: Phone, expected: EditKind, found: EditKind },
    #[error("duplicate score for phone {phone}, word `{word}`, voice {voice}")]
    DuplicateCell { phone: String, word: String, voice: u32 },
    #[error("values have non-positive mean {0}")]
    ZeroMean(f64),
    #[error("no scores for wake-word phones: {}", join_phones(.0))]
    MissingRow(Vec<Phone>),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for WeightsError {
    fn from(err: std::io::Error) -> Self {
        WeightsError::Io(err.to_string())
    }
}

fn join_phones(phones: &[Phone]) -> String {
    phones.iter().map(Phone::to_string).collect::<Vec<_>>().join(", ")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EditKind {
    Delete,
    Insert,
    Substitute,
}

impl std::fmt::Display for EditKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            EditKind::Delete => "delete",
            EditKind::Insert => "insert",
            EditKind::Substitute => "substitute",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ProbeEdit {
    Delete,
    Insert,
    SubstituteWith(Phone),
}

impl ProbeEdit {
    pub fn kind(&self) -> EditKind {
        match self {
            ProbeEdit::Delete => EditKind::Delete,
            ProbeEdit::Insert => EditKind::Insert,
            ProbeEdit::SubstituteWith(_) => EditKind::Substitute,
        }
    }
}

/// One forced-alignment score loss for an edited probe word.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbeScore {
    pub phone: Phone,
    pub edit: ProbeEdit,
    pub word: String,
    pub voice: u32,
    pub score_delta: f64,
}

/// Words drawn for probing one phone.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbePlan {
    pub phone: Phone,
    pub words: Vec<String>,
    pub n_words: usize,
    pub n_voices: u32,
    pub seed: u64,
}

pub const DEFAULT_PROBE_WORDS: usize = 100;
pub const DEFAULT_PROBE_VOICES: u32 = 10;

/// Draws `n_words` dictionary words containing `phone`, uniformly without
/// replacement. The result is listed in dictionary order.
pub fn sample_probe_words(
    dict: &PronouncingDictionary,
    phone: Phone,
    n_words: usize,
    seed: u64,
) -> Result<ProbePlan, WeightsError> {
    let qualifying: Vec<&str> =
        dict.iter().filter(|(_, prons)| prons.iter().any(|p| p.phones.contains(&phone))).map(|(w, _)| w).collect();
    if qualifying.is_empty() {
        return Err(WeightsError::NoQualifyingWords(phone));
    }
    let words = if qualifying.len() <= n_words {
        if qualifying.len() < n_words {
            warn!(
                "only {} dictionary words contain {phone}; probing all of them instead of {n_words}",
                qualifying.len()
            );
        }
        qualifying.iter().map(|w| w.to_string()).collect()
    } else {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked = sample(&mut rng, qualifying.len(), n_words).into_vec();
        picked.sort_unstable();
        picked.into_iter().map(|i| qualifying[i].to_string()).collect()
    };
    Ok(ProbePlan { phone, words, n_words, n_voices: DEFAULT_PROBE_VOICES, seed })
}

/// Writes the probe rows for `plan` as TSV: every word, voice and edit with
/// the original and edited phone strings.
///
/// The edit is applied to the first occurrence of the phone in the word's
/// first pronunciation containing it. Insertion doubles that occurrence.
pub fn write_probe_plan<W: Write>(plan: &ProbePlan, dict: &PronouncingDictionary, mut out: W) -> std::io::Result<()> {
    writeln!(out, "phone\tedit\ttarget\tword\tvoice\toriginal\tedited")?;
    let others: Vec<Phone> = dict.inventory().phones().filter(|&q| q != plan.phone).collect();
    for word in &plan.words {
        let Some(pron) = dict.lookup(word).iter().find(|p| p.phones.contains(&plan.phone)) else {
            continue;
        };
        let pos = pron.phones.iter().position(|&q| q == plan.phone).expect("contains phone");
        let original = &pron.phones;
        let mut edits: Vec<(ProbeEdit, PhoneSeq)> = Vec::with_capacity(others.len() + 2);
        let mut deleted = original.to_vec();
        deleted.remove(pos);
        edits.push((ProbeEdit::Delete, deleted.into()));
        let mut inserted = original.to_vec();
        inserted.insert(pos + 1, plan.phone);
        edits.push((ProbeEdit::Insert, inserted.into()));
        for &q in &others {
            let mut swapped = original.to_vec();
            swapped[pos] = q;
            edits.push((ProbeEdit::SubstituteWith(q), swapped.into()));
        }
        for voice in 1..=plan.n_voices {
            for (edit, edited) in &edits {
                let (kind, target) = edit_columns(edit);
                writeln!(out, "{}\t{kind}\t{target}\t{word}\t{voice}\t{original}\t{edited}", plan.phone)?;
            }
        }
    }
    Ok(())
}

fn edit_columns(edit: &ProbeEdit) -> (EditKind, String) {
    match edit {
        ProbeEdit::SubstituteWith(q) => (EditKind::Substitute, q.to_string()),
        other => (other.kind(), "-".to_string()),
    }
}

/// Parses a probe-score TSV (`phone edit target word voice score_delta`, header required).
pub fn parse_probe_scores<R: BufRead>(
    reader: R,
    inventory: &Inventory,
    n_voices: u32,
) -> Result<Vec<ProbeScore>, WeightsError> {
    let mut lines = reader.lines().enumerate();
    let fmt_err = |line: usize, message: String| WeightsError::Format { line, message };
    match lines.next() {
        Some((_, header)) => {
            let header = header?;
            if !header.starts_with("phone") {
                return Err(fmt_err(1, "missing header line".into()));
            }
        }
        None => return Ok(Vec::new()),
    }
    let mut out = Vec::new();
    for (idx, line) in lines {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 6 {
            return Err(fmt_err(lineno, format!("expected 6 columns, found {}", cols.len())));
        }
        let phone = parse_phone(cols[0], inventory).map_err(|e| fmt_err(lineno, e.to_string()))?;
        let edit = match (cols[1], cols[2]) {
            ("delete", "-") => ProbeEdit::Delete,
            ("insert", "-") => ProbeEdit::Insert,
            ("substitute", target) => {
                ProbeEdit::SubstituteWith(parse_phone(target, inventory).map_err(|e| fmt_err(lineno, e.to_string()))?)
            }
            (kind, target) => return Err(fmt_err(lineno, format!("bad edit `{kind}` with target `{target}`"))),
        };
        let voice: u32 = cols[4].parse().map_err(|_| fmt_err(lineno, format!("bad voice `{}`", cols[4])))?;
        if voice == 0 || voice > n_voices {
            return Err(fmt_err(lineno, format!("voice {voice} outside 1..={n_voices}")));
        }
        let score_delta: f64 = cols[5]
            .trim()
            .parse()
            .ok()
            .filter(|v: &f64| v.is_finite())
            .ok_or_else(|| fmt_err(lineno, format!("bad score `{}`", cols[5])))?;
        out.push(ProbeScore { phone, edit, word: normalize_word(cols[3]), voice, score_delta });
    }
    Ok(out)
}

/// Averaged but not yet normalized weights of one kind.
#[derive(Debug, Clone, PartialEq)]
pub enum RawComponent {
    Vector(BTreeMap<Phone, f64>),
    Matrix(BTreeMap<Phone, BTreeMap<Phone, f64>>),
}

/// Arithmetic mean of `score_delta` per phone (or per phone pair for
/// substitutions). Negative means are clamped to zero.
pub fn aggregate_weights(scores: &[ProbeScore], kind: EditKind) -> Result<RawComponent, WeightsError> {
    if scores.is_empty() {
        return Err(WeightsError::EmptyInput);
    }
    let mut seen = BTreeSet::new();
    let mut sums: BTreeMap<(Phone, Option<Phone>), (f64, usize)> = BTreeMap::new();
    for s in scores {
        if s.edit.kind() != kind {
            return Err(WeightsError::KindMismatch { phone: s.phone, expected: kind, found: s.edit.kind() });
        }
        let target = match s.edit {
            ProbeEdit::SubstituteWith(q) if q == s.phone => {
                warn!("ignoring self-substitution score for {}", s.phone);
                continue;
            }
            ProbeEdit::SubstituteWith(q) => Some(q),
            _ => None,
        };
        if !seen.insert((s.phone, target, s.word.as_str(), s.voice)) {
            let phone = match target {
                Some(q) => format!("{}>{q}", s.phone),
                None => s.phone.to_string(),
            };
            return Err(WeightsError::DuplicateCell { phone, word: s.word.clone(), voice: s.voice });
        }
        let slot = sums.entry((s.phone, target)).or_insert((0.0, 0));
        slot.0 += s.score_delta;
        slot.1 += 1;
    }
    let mean = |(key, (sum, count)): ((Phone, Option<Phone>), (f64, usize))| {
        let m = sum / count as f64;
        if m < 0.0 {
            match key.1 {
                Some(q) => warn!("negative mean score loss for {}>{q}; clamped to 0", key.0),
                None => warn!("negative mean score loss for {}; clamped to 0", key.0),
            }
        }
        (key, m.max(0.0))
    };
    Ok(match kind {
        EditKind::Substitute => {
            let mut rows: BTreeMap<Phone, BTreeMap<Phone, f64>> = BTreeMap::new();
            for ((p, q), v) in sums.into_iter().map(mean) {
                rows.entry(p).or_default().insert(q.expect("substitution target"), v);
            }
            RawComponent::Matrix(rows)
        }
        _ => RawComponent::Vector(sums.into_iter().map(mean).map(|((p, _), v)| (p, v)).collect()),
    })
}

/// Divides every value by the arithmetic mean so the result has mean 1.0.
pub fn normalize_mean_one<K: Ord + Clone>(values: &BTreeMap<K, f64>) -> Result<BTreeMap<K, f64>, WeightsError> {
    if values.is_empty() {
        return Err(WeightsError::EmptyInput);
    }
    let mean = values.values().sum::<f64>() / values.len() as f64;
    if !mean.is_finite() || mean <= 0.0 {
        return Err(WeightsError::ZeroMean(mean));
    }
    Ok(values.iter().map(|(k, v)| (k.clone(), v / mean)).collect())
}

/// Normalized deletion, insertion and substitution weights.
///
/// Substitution rows are keyed by the replaced (wake-word) phone; columns by the
/// phone it is replaced with.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct WeightTable {
    deletion: BTreeMap<Phone, f64>,
    insertion: BTreeMap<Phone, f64>,
    substitution: BTreeMap<Phone, BTreeMap<Phone, f64>>,
}

impl WeightTable {
    /// Assembles a table and checks its invariants.
    pub fn new(
        deletion: BTreeMap<Phone, f64>,
        insertion: BTreeMap<Phone, f64>,
        substitution: BTreeMap<Phone, BTreeMap<Phone, f64>>,
    ) -> Result<WeightTable, WeightsError> {
        let table = WeightTable { deletion, insertion, substitution };
        table.validate().map_err(|message| WeightsError::Format { line: 0, message })?;
        Ok(table)
    }

    /// A table with every weight equal to 1.0 over the given phones.
    pub fn uniform(phones: &[Phone]) -> WeightTable {
        let vector: BTreeMap<Phone, f64> = phones.iter().map(|&p| (p, 1.0)).collect();
        let substitution =
            phones.iter().map(|&p| (p, phones.iter().filter(|&&q| q != p).map(|&q| (q, 1.0)).collect())).collect();
        WeightTable { deletion: vector.clone(), insertion: vector, substitution }
    }

    pub fn deletion_weight(&self, p: Phone) -> Option<f64> {
        self.deletion.get(&p).copied()
    }

    pub fn insertion_weight(&self, p: Phone) -> Option<f64> {
        self.insertion.get(&p).copied()
    }

    pub fn substitution_weight(&self, from: Phone, to: Phone) -> Option<f64> {
        self.substitution.get(&from)?.get(&to).copied()
    }

    pub fn deletion(&self) -> &BTreeMap<Phone, f64> {
        &self.deletion
    }

    pub fn insertion(&self) -> &BTreeMap<Phone, f64> {
        &self.insertion
    }

    pub fn substitution(&self) -> &BTreeMap<Phone, BTreeMap<Phone, f64>> {
        &self.substitution
    }

    pub fn row_phones(&self) -> impl Iterator<Item = Phone> + '_ {
        self.substitution.keys().copied()
    }

    /// Phones among `phones` that lack a deletion weight or a substitution row.
    pub fn missing_rows(&self, phones: impl IntoIterator<Item = Phone>) -> Vec<Phone> {
        phones.into_iter().filter(|p| !self.deletion.contains_key(p) || !self.substitution.contains_key(p)).collect()
    }

    /// Checks non-negativity and the mean-one property of every component.
    pub fn validate(&self) -> Result<(), String> {
        let check_values = |what: &str, values: &BTreeMap<Phone, f64>| -> Result<(), String> {
            if let Some((p, v)) = values.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
                return Err(format!("{what} weight for {p} is {v}"));
            }
            if values.is_empty() {
                return Ok(());
            }
            let mean = values.values().sum::<f64>() / values.len() as f64;
            if (mean - 1.0).abs() > MEAN_TOLERANCE {
                return Err(format!("{what} weights have mean {mean}, expected 1.0"));
            }
            Ok(())
        };
        check_values("deletion", &self.deletion)?;
        check_values("insertion", &self.insertion)?;
        for (row, cols) in &self.substitution {
            if cols.contains_key(row) {
                return Err(format!("substitution row {row} contains its own diagonal"));
            }
            check_values(&format!("substitution row {row}"), cols)?;
        }
        Ok(())
    }

    /// Writes the sectioned text format.
    pub fn store<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        let mut text = String::new();
        text.push_str("[deletion]\n");
        for (p, w) in &self.deletion {
            let _ = writeln!(text, "{p}\t{w:.15}");
        }
        text.push_str("[insertion]\n");
        for (p, w) in &self.insertion {
            let _ = writeln!(text, "{p}\t{w:.15}");
        }
        text.push_str("[substitution]\n");
        for (row, cols) in &self.substitution {
            for (col, w) in cols {
                let _ = writeln!(text, "{row}\t{col}\t{w:.15}");
            }
        }
        out.write_all(text.as_bytes())
    }

    /// Reads and validates the sectioned text format.
    pub fn load<R: BufRead>(reader: R, inventory: &Inventory) -> Result<WeightTable, WeightsError> {
        #[derive(PartialEq)]
        enum Section {
            None,
            Deletion,
            Insertion,
            Substitution,
        }
        let mut section = Section::None;
        let mut table = WeightTable::default();
        let fmt_err = |line: usize, message: String| WeightsError::Format { line, message };
        let mut last_line = 0;
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            last_line = lineno;
            let body = line.trim();
            if body.is_empty() || body.starts_with('#') {
                continue;
            }
            match body {
                "[deletion]" => section = Section::Deletion,
                "[insertion]" => section = Section::Insertion,
                "[substitution]" => section = Section::Substitution,
                _ => {
                    let cols: Vec<&str> = body.split('\t').map(str::trim).collect();
                    let phone = |s: &str| parse_phone(s, inventory).map_err(|e| fmt_err(lineno, e.to_string()));
                    let weight = |s: &str| -> Result<f64, WeightsError> {
                        let v: f64 = s.parse().map_err(|_| fmt_err(lineno, format!("bad weight `{s}`")))?;
                        if !v.is_finite() || v < 0.0 {
                            return Err(fmt_err(lineno, format!("weight {v} must be finite and non-negative")));
                        }
                        Ok(v)
                    };
                    let duplicate = || fmt_err(lineno, "duplicate entry".to_string());
                    match (&section, cols.as_slice()) {
                        (Section::Deletion, [p, w]) => {
                            if table.deletion.insert(phone(p)?, weight(w)?).is_some() {
                                return Err(duplicate());
                            }
                        }
                        (Section::Insertion, [p, w]) => {
                            if table.insertion.insert(phone(p)?, weight(w)?).is_some() {
                                return Err(duplicate());
                            }
                        }
                        (Section::Substitution, [r, c, w]) => {
                            let (r, c) = (phone(r)?, phone(c)?);
                            if r == c {
                                return Err(fmt_err(lineno, format!("diagonal entry {r}>{c}")));
                            }
                            if table.substitution.entry(r).or_default().insert(c, weight(w)?).is_some() {
                                return Err(duplicate());
                            }
                        }
                        (Section::None, _) => return Err(fmt_err(lineno, "entry outside of a section".into())),
                        _ => return Err(fmt_err(lineno, format!("wrong column count for section: `{body}`"))),
                    }
                }
            }
        }
        table.validate().map_err(|message| fmt_err(last_line, message))?;
        Ok(table)
    }
}

/// Builds a normalized table from probe scores of all three kinds.
///
/// Every phone in `wake_words` must have deletion scores and a substitution row.
pub fn build_weight_table(scores: &[ProbeScore], wake_words: &[WakeWordSpec]) -> Result<WeightTable, WeightsError> {
    let mut by_kind: BTreeMap<EditKind, Vec<ProbeScore>> = BTreeMap::new();
    for s in scores {
        by_kind.entry(s.edit.kind()).or_default().push(s.clone());
    }
    let vector = |kind| -> Result<BTreeMap<Phone, f64>, WeightsError> {
        match by_kind.get(&kind) {
            None => Ok(BTreeMap::new()),
            Some(list) => match aggregate_weights(list, kind)? {
                RawComponent::Vector(v) => normalize_mean_one(&v),
                RawComponent::Matrix(_) => unreachable!("vector kind"),
            },
        }
    };
    let deletion = vector(EditKind::Delete)?;
    let insertion = vector(EditKind::Insert)?;
    let mut substitution = BTreeMap::new();
    if let Some(list) = by_kind.get(&EditKind::Substitute) {
        let RawComponent::Matrix(rows) = aggregate_weights(list, EditKind::Substitute)? else {
            unreachable!("matrix kind")
        };
        for (row, cols) in rows {
            substitution.insert(row, normalize_mean_one(&cols)?);
        }
    }
    let table = WeightTable { deletion, insertion, substitution };
    let missing = table.missing_rows(crate::lexicon::wake_word_phones(wake_words));
    if !missing.is_empty() {
        return Err(WeightsError::MissingRow(missing));
    }
    Ok(table)
}
