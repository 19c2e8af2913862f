//! Phone inventory, pronouncing dictionary and word-to-phone conversion.
//!
//! Dictionaries use the CMU text layout: `WORD[(n)]  PH1 PH2 ...`, with `;;;`
//! comment lines. Stress digits are stripped on load so every downstream
//! distance works on bare ARPAbet symbols.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::io::{BufRead, Write};
use std::ops::Deref;
use std::str::FromStr;

use thiserror::Error;

/// Upper bound on the number of combined pronunciations produced for a phrase.
pub const MAX_PHRASE_VARIANTS: usize = 16;

#[derive(Debug, Error, PartialEq)]
pub enum LexiconError {
    #[error("unknown phone `{0}`")]
    UnknownPhone(String),
    #[error("line {line}: unknown phone `{phone}`")]
    UnknownPhoneAt { line: usize, phone: String },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("word `{0}` is not in the dictionary")]
    OutOfVocabulary(String),
    #[error("empty phrase")]
    EmptyPhrase,
    #[error("{0}")]
    Io(String),
}

impl From<std::io::Error> for LexiconError {
    fn from(err: std::io::Error) -> Self {
        LexiconError::Io(err.to_string())
    }
}

/// A stress-free phone symbol of at most four ASCII characters.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Phone([u8; 4]);

impl Phone {
    /// Builds a phone from a raw symbol without consulting an inventory.
    /// Returns `None` for empty, over-long or non-alphanumeric symbols.
    pub fn new(symbol: &str) -> Option<Phone> {
        let bytes = symbol.as_bytes();
        if bytes.is_empty() || bytes.len() > 4 || !bytes.iter().all(u8::is_ascii_alphanumeric) {
            return None;
        }
        let mut code = [0u8; 4];
        for (slot, b) in code.iter_mut().zip(bytes) {
            *slot = b.to_ascii_uppercase();
        }
        Some(Phone(code))
    }

    pub fn as_str(&self) -> &str {
        let len = self.0.iter().position(|&b| b == 0).unwrap_or(4);
        // Only ASCII is ever stored.
        std::str::from_utf8(&self.0[..len]).unwrap_or("")
    }
}

impl fmt::Display for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl fmt::Debug for Phone {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum PhoneClass {
    Vowel,
    Consonant,
}

impl FromStr for PhoneClass {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "vowel" | "v" => Ok(PhoneClass::Vowel),
            "consonant" | "c" => Ok(PhoneClass::Consonant),
            other => Err(format!("unknown phone class `{other}`")),
        }
    }
}

impl fmt::Display for PhoneClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhoneClass::Vowel => "vowel",
            PhoneClass::Consonant => "consonant",
        })
    }
}

const ARPABET_VOWELS: [&str; 15] =
    ["AA", "AE", "AH", "AO", "AW", "AY", "EH", "ER", "EY", "IH", "IY", "OW", "OY", "UH", "UW"];
const ARPABET_CONSONANTS: [&str; 24] = [
    "B", "CH", "D", "DH", "F", "G", "HH", "JH", "K", "L", "M", "N", "NG", "P", "R", "S", "SH", "T", "TH", "V", "W",
    "Y", "Z", "ZH",
];

/// The set of phones a dictionary may use.
#[derive(Debug, Clone, PartialEq)]
pub struct Inventory {
    phones: BTreeMap<Phone, PhoneClass>,
}

impl Default for Inventory {
    fn default() -> Self {
        Inventory::arpabet()
    }
}

impl Inventory {
    /// The 39 base ARPAbet symbols used by the CMU dictionary.
    pub fn arpabet() -> Inventory {
        let vowels = ARPABET_VOWELS.iter().map(|s| (s, PhoneClass::Vowel));
        let consonants = ARPABET_CONSONANTS.iter().map(|s| (s, PhoneClass::Consonant));
        let phones = vowels.chain(consonants).map(|(s, c)| (Phone::new(s).expect("static symbol"), c)).collect();
        Inventory { phones }
    }

    /// Reads an inventory file: one `SYMBOL CLASS` pair per line, `#` comments allowed.
    pub fn parse<R: BufRead>(reader: R) -> Result<Inventory, LexiconError> {
        let mut phones = BTreeMap::new();
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let body = line.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let mut fields = body.split_whitespace();
            let (Some(symbol), Some(class), None) = (fields.next(), fields.next(), fields.next()) else {
                return Err(LexiconError::Parse { line: lineno, message: "expected `SYMBOL CLASS`".into() });
            };
            let phone = Phone::new(symbol).ok_or_else(|| LexiconError::Parse {
                line: lineno,
                message: format!("invalid phone symbol `{symbol}`"),
            })?;
            let class = class.parse().map_err(|message| LexiconError::Parse { line: lineno, message })?;
            if phones.insert(phone, class).is_some() {
                return Err(LexiconError::Parse { line: lineno, message: format!("duplicate phone `{symbol}`") });
            }
        }
        Ok(Inventory { phones })
    }

    pub fn contains(&self, phone: Phone) -> bool {
        self.phones.contains_key(&phone)
    }

    pub fn class(&self, phone: Phone) -> Option<PhoneClass> {
        self.phones.get(&phone).copied()
    }

    pub fn phones(&self) -> impl Iterator<Item = Phone> + '_ {
        self.phones.keys().copied()
    }

    pub fn len(&self) -> usize {
        self.phones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.phones.is_empty()
    }
}

/// Strips trailing stress digits (0-2) from `token` and resolves it against `inventory`.
pub fn parse_phone(token: &str, inventory: &Inventory) -> Result<Phone, LexiconError> {
    let bare = token.trim_end_matches(['0', '1', '2']);
    Phone::new(bare).filter(|p| inventory.contains(*p)).ok_or_else(|| LexiconError::UnknownPhone(token.to_string()))
}

/// An ordered sequence of phones.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Default)]
pub struct PhoneSeq(Vec<Phone>);

impl PhoneSeq {
    pub fn new(phones: Vec<Phone>) -> PhoneSeq {
        PhoneSeq(phones)
    }

    /// Parses a whitespace-separated phone string such as `"AH0 L EH1 K S AH0"`.
    pub fn parse(text: &str, inventory: &Inventory) -> Result<PhoneSeq, LexiconError> {
        text.split_whitespace().map(|t| parse_phone(t, inventory)).collect::<Result<Vec<_>, _>>().map(PhoneSeq)
    }

    pub fn into_inner(self) -> Vec<Phone> {
        self.0
    }

    /// True if `self` occurs as a contiguous run inside `other`.
    pub fn is_contiguous_in(&self, other: &[Phone]) -> bool {
        !self.0.is_empty() && other.windows(self.0.len()).any(|w| w == self.0.as_slice())
    }
}

impl Deref for PhoneSeq {
    type Target = [Phone];

    fn deref(&self) -> &[Phone] {
        &self.0
    }
}

impl From<Vec<Phone>> for PhoneSeq {
    fn from(v: Vec<Phone>) -> Self {
        PhoneSeq(v)
    }
}

impl fmt::Display for PhoneSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, p) in self.0.iter().enumerate() {
            if i > 0 {
                f.write_str(" ")?;
            }
            f.write_str(p.as_str())?;
        }
        Ok(())
    }
}

impl fmt::Debug for PhoneSeq {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{self}]")
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Pronunciation {
    pub word: String,
    pub variant_index: u32,
    pub phones: PhoneSeq,
}

/// Normalizes a dictionary headword or query word.
pub fn normalize_word(word: &str) -> String {
    word.trim().to_uppercase()
}

/// Word to pronunciations map, immutable after loading.
#[derive(Debug, Clone, PartialEq)]
pub struct PronouncingDictionary {
    entries: BTreeMap<String, Vec<Pronunciation>>,
    inventory: Inventory,
}

impl PronouncingDictionary {
    pub fn empty(inventory: Inventory) -> PronouncingDictionary {
        PronouncingDictionary { entries: BTreeMap::new(), inventory }
    }

    /// Loads CMU-format text against the default ARPAbet inventory.
    pub fn load<R: BufRead>(reader: R) -> Result<PronouncingDictionary, LexiconError> {
        Self::load_with_inventory(reader, Inventory::arpabet())
    }

    pub fn load_with_inventory<R: BufRead>(
        reader: R,
        inventory: Inventory,
    ) -> Result<PronouncingDictionary, LexiconError> {
        let mut dict = PronouncingDictionary::empty(inventory);
        for (idx, line) in reader.lines().enumerate() {
            let line = line?;
            let lineno = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with(";;;") {
                continue;
            }
            // cmudict.dict style trailing comments: `word  W ER D # note`
            let body = match trimmed.find(" #") {
                Some(pos) => trimmed[..pos].trim_end(),
                None => trimmed,
            };
            let mut fields = body.split_whitespace();
            let head = fields.next().unwrap_or_default();
            let (word, variant_index) = split_headword(head)
                .ok_or_else(|| LexiconError::Parse { line: lineno, message: format!("malformed headword `{head}`") })?;
            let phones = fields
                .map(|t| {
                    parse_phone(t, &dict.inventory)
                        .map_err(|_| LexiconError::UnknownPhoneAt { line: lineno, phone: t.to_string() })
                })
                .collect::<Result<Vec<_>, _>>()?;
            if phones.is_empty() {
                return Err(LexiconError::Parse { line: lineno, message: format!("entry `{head}` has no phones") });
            }
            let variants = dict.entries.entry(word.clone()).or_default();
            if variants.iter().any(|p| p.variant_index == variant_index) {
                return Err(LexiconError::Parse {
                    line: lineno,
                    message: format!("duplicate variant {variant_index} for `{word}`"),
                });
            }
            variants.push(Pronunciation { word, variant_index, phones: PhoneSeq(phones) });
        }
        for variants in dict.entries.values_mut() {
            variants.sort_by_key(|p| p.variant_index);
        }
        Ok(dict)
    }

    /// Writes the dictionary back in CMU layout (stress-free).
    pub fn write_to<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for prons in self.entries.values() {
            for p in prons {
                if p.variant_index == 1 {
                    writeln!(out, "{}  {}", p.word, p.phones)?;
                } else {
                    writeln!(out, "{}({})  {}", p.word, p.variant_index, p.phones)?;
                }
            }
        }
        Ok(())
    }

    /// All variants of `word` in variant order; empty when absent.
    pub fn lookup(&self, word: &str) -> &[Pronunciation] {
        self.entries.get(&normalize_word(word)).map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn contains(&self, word: &str) -> bool {
        self.entries.contains_key(&normalize_word(word))
    }

    /// Concatenated phone sequences for a phrase, one per variant combination.
    ///
    /// Combinations are enumerated with the first word as the most significant
    /// digit and truncated after [`MAX_PHRASE_VARIANTS`], so the all-first-variant
    /// combination always comes first.
    pub fn phrase_phones<S: AsRef<str>>(&self, words: &[S]) -> Result<Vec<PhoneSeq>, LexiconError> {
        if words.is_empty() {
            return Err(LexiconError::EmptyPhrase);
        }
        let per_word = words
            .iter()
            .map(|w| {
                let prons = self.lookup(w.as_ref());
                if prons.is_empty() {
                    Err(LexiconError::OutOfVocabulary(w.as_ref().to_string()))
                } else {
                    Ok(prons)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;

        let mut out = Vec::new();
        let mut digits = vec![0usize; per_word.len()];
        loop {
            let phones: Vec<Phone> =
                per_word.iter().zip(&digits).flat_map(|(prons, &d)| prons[d].phones.iter().copied()).collect();
            out.push(PhoneSeq(phones));
            if out.len() == MAX_PHRASE_VARIANTS {
                break;
            }
            // odometer increment, last word fastest
            let mut pos = per_word.len();
            loop {
                if pos == 0 {
                    return Ok(out);
                }
                pos -= 1;
                digits[pos] += 1;
                if digits[pos] < per_word[pos].len() {
                    break;
                }
                digits[pos] = 0;
            }
        }
        Ok(out)
    }

    pub fn inventory(&self) -> &Inventory {
        &self.inventory
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Iterates `(word, variants)` in sorted word order.
    pub fn iter(&self) -> impl Iterator<Item = (&str, &[Pronunciation])> {
        self.entries.iter().map(|(w, v)| (w.as_str(), v.as_slice()))
    }

    /// Adds a pronunciation programmatically, assigning the next variant index.
    pub fn insert(&mut self, word: &str, phones: PhoneSeq) -> Result<(), LexiconError> {
        if let Some(bad) = phones.iter().find(|p| !self.inventory.contains(**p)) {
            return Err(LexiconError::UnknownPhone(bad.to_string()));
        }
        if phones.is_empty() {
            return Err(LexiconError::Parse { line: 0, message: format!("`{word}` has no phones") });
        }
        let word = normalize_word(word);
        let variants = self.entries.entry(word.clone()).or_default();
        let variant_index = variants.last().map_or(1, |p| p.variant_index + 1);
        variants.push(Pronunciation { word, variant_index, phones });
        Ok(())
    }
}

fn split_headword(head: &str) -> Option<(String, u32)> {
    match head.find('(') {
        Some(open) if head.ends_with(')') && open > 0 => {
            let index: u32 = head[open + 1..head.len() - 1].parse().ok()?;
            (index >= 1).then(|| (normalize_word(&head[..open]), index))
        }
        Some(_) => None,
        None => Some((normalize_word(head), 1)),
    }
}

/// A wake word with its reference pronunciation and explicit blocklist.
#[derive(Debug, Clone, PartialEq)]
pub struct WakeWordSpec {
    pub id: String,
    pub text: String,
    pub phones: PhoneSeq,
    pub explicit_blocklist: Vec<String>,
}

impl WakeWordSpec {
    pub fn new(id: &str, text: &str, phones: PhoneSeq, blocklist: &[&str]) -> WakeWordSpec {
        WakeWordSpec {
            id: id.to_string(),
            text: text.to_string(),
            phones,
            explicit_blocklist: blocklist.iter().map(|w| normalize_label(w)).collect(),
        }
    }
}

/// Normalizes a candidate label: lowercase, single spaces.
pub fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

/// Reads a wake-word file with tab-separated `id  text  phones  blocklist` rows.
///
/// `phones` may be `-` to take the first dictionary pronunciation of each word
/// in `text`; `blocklist` is a comma-separated word list or `-`.
pub fn parse_wake_words<R: BufRead>(
    reader: R,
    dict: &PronouncingDictionary,
) -> Result<Vec<WakeWordSpec>, LexiconError> {
    let mut out: Vec<WakeWordSpec> = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        let lineno = idx + 1;
        if line.trim().is_empty() || line.starts_with('#') {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').map(str::trim).collect();
        if cols.len() < 3 || cols.len() > 4 {
            return Err(LexiconError::Parse {
                line: lineno,
                message: "expected `id<TAB>text<TAB>phones[<TAB>blocklist]`".into(),
            });
        }
        let (id, text) = (cols[0], cols[1]);
        if id.is_empty() || out.iter().any(|w| w.id == id) {
            return Err(LexiconError::Parse {
                line: lineno,
                message: format!("missing or duplicate wake-word id `{id}`"),
            });
        }
        let phones = if cols[2] == "-" {
            let words: Vec<&str> = text.split_whitespace().collect();
            let mut prons =
                dict.phrase_phones(&words).map_err(|e| LexiconError::Parse { line: lineno, message: e.to_string() })?;
            prons.swap_remove(0)
        } else {
            PhoneSeq::parse(cols[2], dict.inventory())
                .map_err(|e| LexiconError::Parse { line: lineno, message: e.to_string() })?
        };
        if phones.is_empty() {
            return Err(LexiconError::Parse { line: lineno, message: "wake word has no phones".into() });
        }
        let blocklist = match cols.get(3) {
            Some(&"-") | Some(&"") | None => Vec::new(),
            Some(list) => list.split(',').map(normalize_label).filter(|w| !w.is_empty()).collect(),
        };
        out.push(WakeWordSpec { id: id.to_string(), text: text.to_string(), phones, explicit_blocklist: blocklist });
    }
    Ok(out)
}

/// Distinct phones occurring in any of the given wake words.
pub fn wake_word_phones(wakes: &[WakeWordSpec]) -> BTreeSet<Phone> {
    wakes.iter().flat_map(|w| w.phones.iter().copied()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(s: &str) -> Phone {
        Phone::new(s).unwrap()
    }

    fn seq(s: &str) -> PhoneSeq {
        PhoneSeq::parse(s, &Inventory::arpabet()).unwrap()
    }

    #[test]
    fn strips_stress_digits() {
        let inv = Inventory::arpabet();
        assert_eq!(parse_phone("AH0", &inv).unwrap(), p("AH"));
        assert_eq!(parse_phone("EH1", &inv).unwrap(), p("EH"));
        assert_eq!(parse_phone("K", &inv).unwrap(), p("K"));
        assert_eq!(parse_phone("ZZ9", &inv), Err(LexiconError::UnknownPhone("ZZ9".into())));
        assert!(parse_phone("", &inv).is_err());
    }

    #[test]
    fn default_inventory_has_39_phones() {
        let inv = Inventory::arpabet();
        assert_eq!(inv.len(), 39);
        assert_eq!(inv.class(p("AH")), Some(PhoneClass::Vowel));
        assert_eq!(inv.class(p("NG")), Some(PhoneClass::Consonant));
    }

    #[test]
    fn inventory_file() {
        let inv = Inventory::parse("# mini\nAH vowel\nK consonant\n".as_bytes()).unwrap();
        assert_eq!(inv.len(), 2);
        assert!(Inventory::parse("AH vowel\nAH vowel\n".as_bytes()).is_err());
        assert!(Inventory::parse("AH fricative\n".as_bytes()).is_err());
    }

    #[test]
    fn loads_variants_and_comments() {
        let text = ";;; comment\n\nALEXA  AH0 L EH1 K S AH0\nTOMATO  T AH0 M EY1 T OW2\nTOMATO(2)  T AH0 M AA1 T OW2\n";
        let dict = PronouncingDictionary::load(text.as_bytes()).unwrap();
        assert_eq!(dict.len(), 2);
        assert_eq!(dict.lookup("alexa")[0].phones, seq("AH L EH K S AH"));
        let tomato = dict.lookup("Tomato");
        assert_eq!(tomato.len(), 2);
        assert_eq!(tomato[1].variant_index, 2);
        assert_eq!(tomato[1].phones, seq("T AH M AA T OW"));
        assert!(dict.lookup("QQQQ").is_empty());
    }

    #[test]
    fn empty_stream_is_empty_dictionary() {
        let dict = PronouncingDictionary::load("".as_bytes()).unwrap();
        assert!(dict.is_empty());
    }

    #[test]
    fn load_errors_carry_line_numbers() {
        let err = PronouncingDictionary::load("A  AH0\nB  B IY1 QQ\n".as_bytes()).unwrap_err();
        assert_eq!(err, LexiconError::UnknownPhoneAt { line: 2, phone: "QQ".into() });
        let err = PronouncingDictionary::load("A(x)  AH0\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 1, .. }));
        let err = PronouncingDictionary::load("A\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 1, .. }));
        let err = PronouncingDictionary::load("A  AH\nA  EY\n".as_bytes()).unwrap_err();
        assert!(matches!(err, LexiconError::Parse { line: 2, .. }));
    }

    #[test]
    fn variants_are_sorted_even_if_out_of_order() {
        let dict = PronouncingDictionary::load("READ(2)  R EH1 D\nREAD  R IY1 D\n".as_bytes()).unwrap();
        let v = dict.lookup("read");
        assert_eq!(v[0].variant_index, 1);
        assert_eq!(v[0].phones, seq("R IY D"));
    }

    #[test]
    fn phrase_phones_cartesian_product() {
        let text = "MY  M AY1\nCEREAL  S IH1 R IY0 AH0 L\nTOMATO  T AH0 M EY1 T OW2\nTOMATO(2)  T AH0 M AA1 T OW2\n";
        let dict = PronouncingDictionary::load(text.as_bytes()).unwrap();
        assert_eq!(dict.phrase_phones(&["my", "cereal"]).unwrap(), vec![seq("M AY S IH R IY AH L")]);
        let two = dict.phrase_phones(&["tomato", "tomato"]).unwrap();
        assert_eq!(two.len(), 4);
        assert_eq!(two[0], seq("T AH M EY T OW T AH M EY T OW"));
        assert_eq!(two[1], seq("T AH M EY T OW T AH M AA T OW"));
        assert_eq!(dict.phrase_phones(&["my", "qqqq"]), Err(LexiconError::OutOfVocabulary("qqqq".into())));
        let empty: [&str; 0] = [];
        assert_eq!(dict.phrase_phones(&empty), Err(LexiconError::EmptyPhrase));
    }

    #[test]
    fn phrase_variants_are_capped() {
        let mut dict = PronouncingDictionary::empty(Inventory::arpabet());
        for v in ["AA", "AE", "AH", "AO", "AW"] {
            dict.insert("x", seq(v)).unwrap();
        }
        let prons = dict.phrase_phones(&["x", "x"]).unwrap();
        assert_eq!(prons.len(), MAX_PHRASE_VARIANTS);
        assert_eq!(prons[0], seq("AA AA"));
        // lowest-index combinations: (0,0..4), (1,0..4), (2,0..4), (3,0)
        assert_eq!(prons[15], seq("AO AA"));
    }

    #[test]
    fn wake_word_file() {
        let dict = PronouncingDictionary::load("HEY  HH EY1\nSIRI  S IH1 R IY0\n".as_bytes()).unwrap();
        let text = "VA6\tHey Siri\t-\they,siri\nVA7b\tCortana\tK AO R T AE N AH\t-\n";
        let wakes = parse_wake_words(text.as_bytes(), &dict).unwrap();
        assert_eq!(wakes[0].phones, seq("HH EY S IH R IY"));
        assert_eq!(wakes[0].explicit_blocklist, vec!["hey", "siri"]);
        assert_eq!(wakes[1].phones, seq("K AO R T AE N AH"));
        assert!(wakes[1].explicit_blocklist.is_empty());
        assert!(parse_wake_words("X\tCortana\t-\n".as_bytes(), &dict).is_err());
    }

    #[test]
    fn contiguous_subsequence() {
        assert!(seq("HH EY").is_contiguous_in(&seq("HH EY S IH R IY")));
        assert!(seq("S IH").is_contiguous_in(&seq("HH EY S IH R IY")));
        assert!(!seq("HH S").is_contiguous_in(&seq("HH EY S IH R IY")));
    }
}
