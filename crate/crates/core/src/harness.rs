//! Measurement-log analysis for the playback rig.
//!
//! The rig logs every LED activation while media plays. Each logged event is
//! then verified by replaying a window around it ten times, classified as a
//! local or cloud-confirmed activation from the LED timing, and labeled by
//! two reviewers. This module turns those three JSON-lines files into
//! windows, reproducibility bins, agreement statistics and summary tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::{self, Write as _};
use std::io::BufRead;

use chrono::{DateTime, Utc};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Seconds replayed before the logged progress.
pub const REWIND_S: f64 = 7.0;
/// Seconds replayed after the logged progress.
pub const FOLLOW_S: f64 = 3.0;
/// Nominal number of verification replays.
pub const REPLAYS: u32 = 10;
/// LED-on duration from which an activation counts as cloud-confirmed.
pub const CLOUD_THRESHOLD_S: f64 = 2.0;

#[derive(Debug, Error, PartialEq)]
pub enum HarnessError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("line {line}: negative playback progress {progress}")]
    NegativeProgress { line: usize, progress: f64 },
    #[error("event at {progress}s lies beyond the media length {media_len}s")]
    EventBeyondMedia { progress: f64, media_len: f64 },
    #[error("media length must be positive, got {0}")]
    InvalidMediaLength(f64),
    #[error("hit count {0} outside 0..=10")]
    OutOfRange(u32),
    #[error("label lists differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("no labels given")]
    EmptyInput,
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for HarnessError {
    fn from(err: std::io::Error) -> Self {
        HarnessError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TriggerEvent {
    #[serde(rename = "ts")]
    pub timestamp: DateTime<Utc>,
    #[serde(rename = "media")]
    pub media_id: String,
    pub progress_s: f64,
    #[serde(rename = "speaker")]
    pub speaker_id: String,
}

fn parse_json_lines<T: DeserializeOwned, R: BufRead>(reader: R) -> Result<Vec<(usize, T)>, HarnessError> {
    let mut out = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record =
            serde_json::from_str(&line).map_err(|e| HarnessError::Parse { line: idx + 1, message: e.to_string() })?;
        out.push((idx + 1, record));
    }
    Ok(out)
}

/// Reads the search-phase log, one JSON object per line. Unknown fields are ignored.
pub fn parse_event_log<R: BufRead>(reader: R) -> Result<Vec<TriggerEvent>, HarnessError> {
    parse_json_lines::<TriggerEvent, _>(reader)?
        .into_iter()
        .map(|(line, e)| {
            if e.progress_s < 0.0 || !e.progress_s.is_finite() {
                Err(HarnessError::NegativeProgress { line, progress: e.progress_s })
            } else {
                Ok(e)
            }
        })
        .collect()
}

/// Replay window `[progress − 7, progress + 3]` clamped to the media.
pub fn verification_window(event: &TriggerEvent, media_len_s: f64) -> Result<(f64, f64), HarnessError> {
    if !media_len_s.is_finite() || media_len_s <= 0.0 {
        return Err(HarnessError::InvalidMediaLength(media_len_s));
    }
    let progress = event.progress_s;
    if progress > media_len_s {
        return Err(HarnessError::EventBeyondMedia { progress, media_len: media_len_s });
    }
    let start = (progress - REWIND_S).max(0.0);
    let end = (progress + FOLLOW_S).min(media_len_s);
    Ok((start, end))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReproBin {
    None,
    Low,
    Medium,
    High,
}

impl fmt::Display for ReproBin {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ReproBin::None => "none",
            ReproBin::Low => "low",
            ReproBin::Medium => "medium",
            ReproBin::High => "high",
        })
    }
}

/// 0 → none, 1–3 → low, 4–7 → medium, 8–10 → high.
pub fn bin_reproducibility(hits: u32) -> Result<ReproBin, HarnessError> {
    match hits {
        0 => Ok(ReproBin::None),
        1..=3 => Ok(ReproBin::Low),
        4..=7 => Ok(ReproBin::Medium),
        8..=10 => Ok(ReproBin::High),
        other => Err(HarnessError::OutOfRange(other)),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ActivationObservation {
    pub led_on_duration_s: f64,
    #[serde(default)]
    pub voice_response: bool,
    #[serde(default)]
    pub pattern_cloud_signal: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Local,
    LocalPlusCloud,
}

impl fmt::Display for Activation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Activation::Local => "local",
            Activation::LocalPlusCloud => "local_plus_cloud",
        })
    }
}

/// Cloud-confirmed if the LED stayed on for at least `threshold_s`, or a voice
/// response or cloud LED pattern was seen.
pub fn classify_activation(obs: &ActivationObservation, threshold_s: f64) -> Activation {
    if obs.led_on_duration_s >= threshold_s || obs.voice_response || obs.pattern_cloud_signal {
        Activation::LocalPlusCloud
    } else {
        Activation::Local
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ReviewLabel {
    Accidental,
    WakeWordPresent,
    RelatedWord,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Resolution {
    Accidental,
    Discarded,
    NeedsReview,
}

impl fmt::Display for Resolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Resolution::Accidental => "accidental",
            Resolution::Discarded => "discarded",
            Resolution::NeedsReview => "needs-review",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Adjudication {
    pub reviewer_a: ReviewLabel,
    pub reviewer_b: ReviewLabel,
    pub resolution: Resolution,
}

pub fn adjudicate(reviewer_a: ReviewLabel, reviewer_b: ReviewLabel) -> Adjudication {
    use ReviewLabel::*;
    let resolution = match (reviewer_a, reviewer_b) {
        (Accidental, Accidental) => Resolution::Accidental,
        (WakeWordPresent | RelatedWord, WakeWordPresent | RelatedWord) => Resolution::Discarded,
        _ => Resolution::NeedsReview,
    };
    Adjudication { reviewer_a, reviewer_b, resolution }
}

/// Cohen's kappa of two raters over the same items.
///
/// Defined as 1.0 when both raters use one identical constant label.
pub fn cohens_kappa<T: Ord>(labels_a: &[T], labels_b: &[T]) -> Result<f64, HarnessError> {
    if labels_a.len() != labels_b.len() {
        return Err(HarnessError::LengthMismatch(labels_a.len(), labels_b.len()));
    }
    if labels_a.is_empty() {
        return Err(HarnessError::EmptyInput);
    }
    let n = labels_a.len() as f64;
    let mut marg_a: BTreeMap<&T, usize> = BTreeMap::new();
    let mut marg_b: BTreeMap<&T, usize> = BTreeMap::new();
    let mut agree = 0usize;
    for (a, b) in labels_a.iter().zip(labels_b) {
        *marg_a.entry(a).or_default() += 1;
        *marg_b.entry(b).or_default() += 1;
        agree += usize::from(a == b);
    }
    let p_o = agree as f64 / n;
    let p_e: f64 =
        marg_a.iter().map(|(label, &ca)| ca as f64 * marg_b.get(label).copied().unwrap_or(0) as f64).sum::<f64>()
            / (n * n);
    if (1.0 - p_e).abs() < f64::EPSILON {
        return Ok(if p_o >= 1.0 { 1.0 } else { 0.0 });
    }
    Ok((p_o - p_e) / (1.0 - p_e))
}

/// Verification outcome for one logged event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VerificationRecord {
    /// 0-based index into the event log.
    pub event_index: usize,
    pub media_len_s: f64,
    #[serde(default = "default_category")]
    pub category: String,
    #[serde(default = "default_replays")]
    pub replays: u32,
    pub hits: u32,
    #[serde(flatten)]
    pub activation: ActivationObservation,
}

fn default_category() -> String {
    "-".to_string()
}

fn default_replays() -> u32 {
    REPLAYS
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AdjudicationRecord {
    pub event_index: usize,
    pub reviewer_a: ReviewLabel,
    pub reviewer_b: ReviewLabel,
}

pub fn parse_verifications<R: BufRead>(reader: R) -> Result<Vec<VerificationRecord>, HarnessError> {
    parse_json_lines::<VerificationRecord, _>(reader)?
        .into_iter()
        .map(|(line, v)| {
            if v.hits > v.replays {
                return Err(HarnessError::Parse {
                    line,
                    message: format!("hits {} exceed replays {}", v.hits, v.replays),
                });
            }
            if v.activation.led_on_duration_s < 0.0 {
                return Err(HarnessError::Parse { line, message: "negative LED duration".into() });
            }
            Ok(v)
        })
        .collect()
}

pub fn parse_adjudications<R: BufRead>(reader: R) -> Result<Vec<AdjudicationRecord>, HarnessError> {
    Ok(parse_json_lines(reader)?.into_iter().map(|(_, r)| r).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct VerificationResult {
    pub event: TriggerEvent,
    pub replays: u32,
    pub hits: u32,
    pub bin: ReproBin,
}

/// Everything known about one logged event after all three phases.
#[derive(Debug, Clone, PartialEq)]
pub struct EventAnalysis {
    pub event_index: usize,
    pub event: TriggerEvent,
    pub category: String,
    pub window: Option<(f64, f64)>,
    pub verification: Option<VerificationResult>,
    pub activation: Option<Activation>,
    pub adjudication: Option<Adjudication>,
}

/// Joins events with their verification and adjudication records.
///
/// Records pointing at unknown event indices are reported as parse errors.
/// Bins are recomputed for `REPLAYS` nominal replays; other replay counts are
/// scaled to ten before binning.
pub fn analyze(
    events: &[TriggerEvent],
    verifications: &[VerificationRecord],
    adjudications: &[AdjudicationRecord],
) -> Result<Vec<EventAnalysis>, HarnessError> {
    let mut out: Vec<EventAnalysis> = events
        .iter()
        .enumerate()
        .map(|(i, e)| EventAnalysis {
            event_index: i,
            event: e.clone(),
            category: default_category(),
            window: None,
            verification: None,
            activation: None,
            adjudication: None,
        })
        .collect();
    let missing = |kind: &str, idx: usize| HarnessError::Parse {
        line: 0,
        message: format!("{kind} record refers to unknown event {idx}"),
    };
    for v in verifications {
        let slot = out.get_mut(v.event_index).ok_or_else(|| missing("verification", v.event_index))?;
        slot.window = Some(verification_window(&slot.event, v.media_len_s)?);
        let scaled = if v.replays == REPLAYS || v.replays == 0 {
            v.hits
        } else {
            ((v.hits as f64 * REPLAYS as f64) / v.replays as f64).round() as u32
        };
        slot.verification = Some(VerificationResult {
            event: slot.event.clone(),
            replays: v.replays,
            hits: v.hits,
            bin: bin_reproducibility(scaled)?,
        });
        slot.category = v.category.clone();
        slot.activation = Some(classify_activation(&v.activation, CLOUD_THRESHOLD_S));
    }
    for a in adjudications {
        let slot = out.get_mut(a.event_index).ok_or_else(|| missing("adjudication", a.event_index))?;
        slot.adjudication = Some(adjudicate(a.reviewer_a, a.reviewer_b));
    }
    Ok(out)
}

/// One summary row, keyed by speaker and media category.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SummaryRow {
    pub events: usize,
    pub verified: usize,
    /// Accidental triggers.
    pub accidental: usize,
    /// Discarded because the wake word (or a related word) was said.
    pub wake_word: usize,
    pub needs_review: usize,
    /// Bin histogram of accidental triggers: none, low, medium, high.
    pub bins: [usize; 4],
    pub local: usize,
    pub local_plus_cloud: usize,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct Summary {
    pub rows: BTreeMap<(String, String), SummaryRow>,
    pub kappa: Option<f64>,
}

impl Summary {
    pub fn total(&self) -> SummaryRow {
        let mut t = SummaryRow::default();
        for r in self.rows.values() {
            t.events += r.events;
            t.verified += r.verified;
            t.accidental += r.accidental;
            t.wake_word += r.wake_word;
            t.needs_review += r.needs_review;
            for (a, b) in t.bins.iter_mut().zip(r.bins) {
                *a += b;
            }
            t.local += r.local;
            t.local_plus_cloud += r.local_plus_cloud;
        }
        t
    }

    pub fn render_tsv(&self) -> String {
        let mut s = String::new();
        match self.kappa {
            Some(k) => {
                let _ = writeln!(s, "# kappa\t{k:.6}");
            }
            None => s.push_str("# kappa\t-\n"),
        }
        s.push_str(
            "speaker\tcategory\tevents\tverified\tA\tW\treview\tnone\tlow\tmedium\thigh\tlocal\tlocal_plus_cloud\n",
        );
        let mut line = |speaker: &str, category: &str, r: &SummaryRow| {
            let _ = writeln!(
                s,
                "{speaker}\t{category}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}\t{}",
                r.events,
                r.verified,
                r.accidental,
                r.wake_word,
                r.needs_review,
                r.bins[0],
                r.bins[1],
                r.bins[2],
                r.bins[3],
                r.local,
                r.local_plus_cloud
            );
        };
        for ((speaker, category), r) in &self.rows {
            line(speaker, category, r);
        }
        line("TOTAL", "*", &self.total());
        s
    }
}

/// Per-speaker, per-category counts. Bins and the local/cloud split cover
/// verified events resolved as accidental.
pub fn summarize(analyses: &[EventAnalysis]) -> Summary {
    let mut summary = Summary::default();
    let mut a_labels = Vec::new();
    let mut b_labels = Vec::new();
    for an in analyses {
        let row = summary.rows.entry((an.event.speaker_id.clone(), an.category.clone())).or_default();
        row.events += 1;
        row.verified += usize::from(an.verification.is_some());
        if let Some(adj) = &an.adjudication {
            a_labels.push(adj.reviewer_a);
            b_labels.push(adj.reviewer_b);
            match adj.resolution {
                Resolution::Accidental => {
                    row.accidental += 1;
                    if let Some(v) = &an.verification {
                        row.bins[v.bin as usize] += 1;
                    }
                    match an.activation {
                        Some(Activation::Local) => row.local += 1,
                        Some(Activation::LocalPlusCloud) => row.local_plus_cloud += 1,
                        None => {}
                    }
                }
                Resolution::Discarded => row.wake_word += 1,
                Resolution::NeedsReview => row.needs_review += 1,
            }
        }
    }
    summary.kappa = cohens_kappa(&a_labels, &b_labels).ok();
    summary
}

/// Per-event TSV: window, hits, bin, activation class and resolution.
pub fn render_events_tsv(analyses: &[EventAnalysis]) -> String {
    let mut s = String::from(
        "event\tspeaker\tmedia\tcategory\tprogress_s\twindow_start\twindow_end\thits\tbin\tactivation\tresolution\n",
    );
    let opt = |v: Option<String>| v.unwrap_or_else(|| "-".to_string());
    for an in analyses {
        let _ = writeln!(
            s,
            "{}\t{}\t{}\t{}\t{:.3}\t{}\t{}\t{}\t{}\t{}\t{}",
            an.event_index,
            an.event.speaker_id,
            an.event.media_id,
            an.category,
            an.event.progress_s,
            opt(an.window.map(|w| format!("{:.3}", w.0))),
            opt(an.window.map(|w| format!("{:.3}", w.1))),
            opt(an.verification.as_ref().map(|v| format!("{}/{}", v.hits, v.replays))),
            opt(an.verification.as_ref().map(|v| v.bin.to_string())),
            opt(an.activation.map(|a| a.to_string())),
            opt(an.adjudication.map(|a| a.resolution.to_string())),
        );
    }
    s
}

/// Speakers seen in `analyses` but absent from `known`.
pub fn unknown_speakers<'a>(analyses: &'a [EventAnalysis], known: &BTreeSet<String>) -> BTreeSet<&'a str> {
    analyses.iter().map(|a| a.event.speaker_id.as_str()).filter(|s| !known.contains(*s)).collect()
}
