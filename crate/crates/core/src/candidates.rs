//! Candidate vocabularies, blocklists, top-K ranking and synthesis manifests.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::io::{BufRead, Write};

use log::warn;
use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use thiserror::Error;

use crate::distance::{self, distance_to_wakeword, CostModel, DistanceBreakdown, DistanceError};
use crate::lexicon::{normalize_label, PhoneSeq, PronouncingDictionary, WakeWordSpec};

/// Distances closer than this are treated as equal when forming tie classes.
pub const TIE_EPSILON: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum CandidateError {
    #[error("no candidates left after blocklist filtering")]
    EmptyVocabulary,
    #[error("K must be at least 1")]
    InvalidK,
    #[error("n-gram order must be 1, 2 or 3, got {0}")]
    InvalidOrder(usize),
    #[error("line {line}: {message}")]
    Format { line: usize, message: String },
    #[error(transparent)]
    Distance(#[from] DistanceError),
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for CandidateError {
    fn from(err: std::io::Error) -> Self {
        CandidateError::Io(err.to_string())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CandidateSource {
    Dictionary,
    Ngram(u8),
}

impl fmt::Display for CandidateSource {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CandidateSource::Dictionary => f.write_str("dictionary"),
            CandidateSource::Ngram(n) => write!(f, "{n}-gram"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Candidate {
    pub label: String,
    pub prons: Vec<PhoneSeq>,
    pub source: CandidateSource,
    /// Occurrences in the source corpus (1 for dictionary words).
    pub count: usize,
}

impl Candidate {
    pub fn new(label: &str, prons: Vec<PhoneSeq>, source: CandidateSource) -> Candidate {
        Candidate { label: normalize_label(label), prons, source, count: 1 }
    }
}

/// Every dictionary word as a candidate, in dictionary order.
pub fn dictionary_vocabulary(dict: &PronouncingDictionary) -> Vec<Candidate> {
    dict.iter()
        .map(|(word, prons)| {
            Candidate::new(word, prons.iter().map(|p| p.phones.clone()).collect(), CandidateSource::Dictionary)
        })
        .collect()
}

/// Labels excluded when ranking against `wake`: its explicit list, its own
/// text, and every dictionary word with a pronunciation that is a contiguous
/// run of the wake word's phones.
pub fn build_blocklist(wake: &WakeWordSpec, dict: &PronouncingDictionary) -> BTreeSet<String> {
    let mut out: BTreeSet<String> = wake.explicit_blocklist.iter().map(|w| normalize_label(w)).collect();
    out.insert(normalize_label(&wake.text));
    for (word, prons) in dict.iter() {
        if prons.iter().any(|p| p.phones.is_contiguous_in(&wake.phones)) {
            out.insert(normalize_label(word));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedItem {
    /// 1-based position in the list.
    pub rank: usize,
    pub candidate: Candidate,
    /// Breakdown of the closest pronunciation.
    pub breakdown: DistanceBreakdown,
    pub pron_index: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RankedList {
    pub wake: WakeWordSpec,
    pub model: CostModel,
    pub k: usize,
    pub seed: u64,
    /// Number of candidates tied at the boundary distance.
    pub boundary_pool_size: usize,
    /// How many boundary candidates were drawn at random.
    pub boundary_drawn: usize,
    pub items: Vec<RankedItem>,
}

impl RankedList {
    pub fn labels(&self) -> Vec<&str> {
        self.items.iter().map(|i| i.candidate.label.as_str()).collect()
    }

    /// TSV with a comment header recording model, seed and boundary pool.
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(
            out,
            "# wake={} model={} k={} seed={} boundary_pool_size={} boundary_drawn={}",
            self.wake.id, self.model, self.k, self.seed, self.boundary_pool_size, self.boundary_drawn
        )?;
        writeln!(out, "rank\tlabel\tL\tS_n\tD_n\tI_n")?;
        for item in &self.items {
            let b = &item.breakdown;
            writeln!(
                out,
                "{}\t{}\t{:.6}\t{}\t{}\t{}",
                item.rank, item.candidate.label, b.distance, b.sub_count, b.del_count, b.ins_count
            )?;
        }
        Ok(())
    }
}

/// Groups sorted values into tie classes; returns the class start index of each position.
pub(crate) fn tie_class_starts(sorted: &[f64]) -> Vec<usize> {
    let mut starts = Vec::with_capacity(sorted.len());
    let mut start = 0;
    for (i, v) in sorted.iter().enumerate() {
        if i > 0 && v - sorted[i - 1] > TIE_EPSILON {
            start = i;
        }
        starts.push(start);
    }
    starts
}

/// Computes the minimum distance of every candidate in parallel, preserving order.
pub fn candidate_distances(
    vocab: &[Candidate],
    wake: &WakeWordSpec,
    model: &CostModel,
) -> Result<Vec<f64>, DistanceError> {
    let refs: Vec<&Candidate> = vocab.iter().collect();
    min_distances(&refs, wake, model)
}

fn min_distances(vocab: &[&Candidate], wake: &WakeWordSpec, model: &CostModel) -> Result<Vec<f64>, DistanceError> {
    if wake.phones.is_empty() {
        return Err(DistanceError::EmptyWakeWord);
    }
    vocab
        .par_iter()
        .map_init(Vec::new, |row, c| {
            if c.prons.is_empty() {
                return Err(DistanceError::NoPronunciation);
            }
            Ok(c.prons
                .iter()
                .map(|p| distance::distance_with_buffer(&wake.phones, p, model, row))
                .fold(f64::INFINITY, f64::min))
        })
        .collect()
}

/// Top-`k` candidates by distance to `wake`, excluding `blocklist`.
///
/// Everything strictly closer than the `k`-th smallest distance is kept; the
/// remaining slots are filled by a seeded uniform draw from the candidates tied
/// at that distance. Within a tie class, items keep vocabulary order.
pub fn rank_candidates(
    vocab: &[Candidate],
    wake: &WakeWordSpec,
    model: &CostModel,
    k: usize,
    seed: u64,
    blocklist: &BTreeSet<String>,
) -> Result<RankedList, CandidateError> {
    if k == 0 {
        return Err(CandidateError::InvalidK);
    }
    let kept: Vec<&Candidate> = vocab.iter().filter(|c| !blocklist.contains(&c.label)).collect();
    if kept.is_empty() {
        return Err(CandidateError::EmptyVocabulary);
    }
    let dists = min_distances(&kept, wake, model)?;

    let selection = select_top_k(&dists, k, seed);
    let items = selection
        .indices
        .iter()
        .enumerate()
        .map(|(pos, &idx)| {
            let cand = kept[idx];
            let best = distance_to_wakeword(wake, &cand.prons, model)?;
            if best.breakdown.fallback_lookups > 0 {
                log::debug!("`{}`: {} weight lookups fell back to 1.0", cand.label, best.breakdown.fallback_lookups);
            }
            Ok(RankedItem {
                rank: pos + 1,
                candidate: cand.clone(),
                breakdown: best.breakdown,
                pron_index: best.pron_index,
            })
        })
        .collect::<Result<Vec<_>, DistanceError>>()?;
    Ok(RankedList {
        wake: wake.clone(),
        model: model.clone(),
        k,
        seed,
        boundary_pool_size: selection.pool_size,
        boundary_drawn: selection.drawn,
        items,
    })
}

/// Indices chosen by the top-K tie rule, in output order.
#[derive(Debug, Clone, PartialEq)]
pub struct TopKSelection {
    pub indices: Vec<usize>,
    pub pool_size: usize,
    pub drawn: usize,
}

/// Applies the top-K tie rule to raw distances.
pub fn select_top_k(dists: &[f64], k: usize, seed: u64) -> TopKSelection {
    let mut order: Vec<usize> = (0..dists.len()).collect();
    order.sort_by(|&a, &b| dists[a].total_cmp(&dists[b]).then(a.cmp(&b)));
    if order.is_empty() {
        return TopKSelection { indices: Vec::new(), pool_size: 0, drawn: 0 };
    }
    let sorted: Vec<f64> = order.iter().map(|&i| dists[i]).collect();
    let starts = tie_class_starts(&sorted);
    let boundary_pos = k.min(order.len()) - 1;
    let pool_start = starts[boundary_pos];
    let pool_end = (boundary_pos..order.len()).find(|&p| starts[p] != pool_start).unwrap_or(order.len());
    let pool_size = pool_end - pool_start;
    let need = k.min(order.len()) - pool_start;

    let mut indices: Vec<usize> = order[..pool_start].to_vec();
    let drawn = if need < pool_size {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picks = sample(&mut rng, pool_size, need).into_vec();
        picks.sort_unstable();
        indices.extend(picks.into_iter().map(|p| order[pool_start + p]));
        need
    } else {
        indices.extend_from_slice(&order[pool_start..pool_start + need]);
        0
    };
    TopKSelection { indices, pool_size, drawn }
}

/// Lowercases and strips punctuation; hyphens and other separators split tokens,
/// apostrophes inside words are kept.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split(|c: char| !(c.is_alphanumeric() || c == '\''))
        .map(|t| t.trim_matches('\'').to_lowercase())
        .filter(|t| !t.is_empty())
        .collect()
}

/// Sliding-window `n`-grams of one token list, before deduplication.
pub fn line_ngrams(tokens: &[String], n: usize) -> Vec<Vec<String>> {
    if n == 0 {
        return Vec::new();
    }
    tokens.windows(n).map(<[String]>::to_vec).collect()
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct NgramStats {
    pub lines: usize,
    pub total: usize,
    pub distinct: usize,
    pub oov_dropped: usize,
}

/// Distinct `n`-grams of a transcript, one utterance per line, with phone strings.
///
/// N-grams never span lines. Out-of-vocabulary n-grams are dropped and counted.
/// Output order is first occurrence.
pub fn extract_ngrams<R: BufRead>(
    transcripts: R,
    n: usize,
    dict: &PronouncingDictionary,
) -> Result<(Vec<Candidate>, NgramStats), CandidateError> {
    if !(1..=3).contains(&n) {
        return Err(CandidateError::InvalidOrder(n));
    }
    let mut stats = NgramStats::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    let mut out: Vec<Candidate> = Vec::new();
    let mut oov: HashMap<String, ()> = HashMap::new();
    for line in transcripts.lines() {
        let line = line?;
        stats.lines += 1;
        let tokens = tokenize(&line);
        for gram in line_ngrams(&tokens, n) {
            stats.total += 1;
            let label = gram.join(" ");
            if let Some(&i) = index.get(&label) {
                out[i].count += 1;
                continue;
            }
            if oov.contains_key(&label) {
                stats.oov_dropped += 1;
                continue;
            }
            match dict.phrase_phones(&gram) {
                Ok(prons) => {
                    index.insert(label.clone(), out.len());
                    out.push(Candidate { label, prons, source: CandidateSource::Ngram(n as u8), count: 1 });
                }
                Err(_) => {
                    stats.oov_dropped += 1;
                    oov.insert(label, ());
                }
            }
        }
    }
    stats.distinct = out.len();
    if stats.oov_dropped > 0 {
        warn!("dropped {} out-of-vocabulary {n}-gram occurrences", stats.oov_dropped);
    }
    Ok((out, stats))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VoiceKind {
    Standard,
    Wavenet,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Gender {
    Female,
    Male,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Voice {
    pub id: String,
    pub kind: VoiceKind,
    pub gender: Gender,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VoiceConfig {
    pub voices: Vec<Voice>,
}

impl Default for VoiceConfig {
    /// Ten US English voices: four standard and six WaveNet, half female and half male.
    fn default() -> Self {
        use Gender::*;
        use VoiceKind::*;
        let spec = [
            ("en-US-Standard-B", Standard, Male),
            ("en-US-Standard-C", Standard, Female),
            ("en-US-Standard-D", Standard, Male),
            ("en-US-Standard-E", Standard, Female),
            ("en-US-Wavenet-A", Wavenet, Male),
            ("en-US-Wavenet-B", Wavenet, Male),
            ("en-US-Wavenet-C", Wavenet, Female),
            ("en-US-Wavenet-D", Wavenet, Male),
            ("en-US-Wavenet-E", Wavenet, Female),
            ("en-US-Wavenet-F", Wavenet, Female),
        ];
        VoiceConfig {
            voices: spec.into_iter().map(|(id, kind, gender)| Voice { id: id.to_string(), kind, gender }).collect(),
        }
    }
}

impl VoiceConfig {
    /// Parses `id  standard|wavenet  f|m` rows (tab or space separated, `#` comments).
    pub fn parse<R: BufRead>(reader: R) -> Result<VoiceConfig, CandidateError> {
        let mut voices: Vec<Voice> = Vec::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let err = |message: String| CandidateError::Format { line: lineno, message };
            let cols: Vec<&str> = body.split_whitespace().collect();
            let [id, kind, gender] = cols.as_slice() else {
                return Err(err("expected `id kind gender`".into()));
            };
            let kind = match kind.to_ascii_lowercase().as_str() {
                "standard" => VoiceKind::Standard,
                "wavenet" => VoiceKind::Wavenet,
                other => return Err(err(format!("unknown voice kind `{other}`"))),
            };
            let gender = match gender.to_ascii_lowercase().as_str() {
                "f" | "female" => Gender::Female,
                "m" | "male" => Gender::Male,
                other => return Err(err(format!("unknown gender `{other}`"))),
            };
            if voices.iter().any(|v| v.id == *id) {
                return Err(err(format!("duplicate voice `{id}`")));
            }
            voices.push(Voice { id: id.to_string(), kind, gender });
        }
        if voices.is_empty() {
            return Err(CandidateError::Format { line: 0, message: "no voices configured".into() });
        }
        Ok(VoiceConfig { voices })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ManifestEntry {
    pub rank: usize,
    pub label: String,
    pub voice: String,
    pub kind: VoiceKind,
    pub gender: Gender,
    pub file_name: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SynthesisManifest {
    pub entries: Vec<ManifestEntry>,
    /// Labels whose slug had to be suffixed to stay unique.
    pub renamed: Vec<String>,
}

impl SynthesisManifest {
    pub fn write_tsv<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        writeln!(out, "rank\tlabel\tvoice\tkind\tgender\tfile")?;
        for e in &self.entries {
            let kind = match e.kind {
                VoiceKind::Standard => "standard",
                VoiceKind::Wavenet => "wavenet",
            };
            let gender = match e.gender {
                Gender::Female => "f",
                Gender::Male => "m",
            };
            writeln!(out, "{}\t{}\t{}\t{kind}\t{gender}\t{}", e.rank, e.label, e.voice, e.file_name)?;
        }
        Ok(())
    }
}

/// Lowercase alphanumeric runs joined by `-`.
pub fn slugify(label: &str) -> String {
    label
        .split(|c: char| !c.is_ascii_alphanumeric())
        .filter(|s| !s.is_empty())
        .map(str::to_ascii_lowercase)
        .collect::<Vec<_>>()
        .join("-")
}

/// One entry per (candidate, voice), rank-major and voice-minor.
pub fn export_manifest(ranked: &RankedList, voices: &VoiceConfig) -> SynthesisManifest {
    let mut manifest = SynthesisManifest::default();
    let mut used: HashMap<String, usize> = HashMap::new();
    for item in &ranked.items {
        let base = match slugify(&item.candidate.label) {
            s if s.is_empty() => "x".to_string(),
            s => s,
        };
        let mut slug = base.clone();
        let mut n = 1;
        while used.contains_key(&slug) {
            n += 1;
            slug = format!("{base}-{n}");
        }
        if n > 1 {
            warn!("slug `{base}` already used; `{}` exported as `{slug}`", item.candidate.label);
            manifest.renamed.push(item.candidate.label.clone());
        }
        used.insert(slug.clone(), item.rank);
        for v in &voices.voices {
            manifest.entries.push(ManifestEntry {
                rank: item.rank,
                label: item.candidate.label.clone(),
                voice: v.id.clone(),
                kind: v.kind,
                gender: v.gender,
                file_name: format!("{}_{slug}_{}.wav", item.rank, v.id),
            });
        }
    }
    manifest
}
