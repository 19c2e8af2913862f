#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::PathBuf;

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use wakeprobe_core::candidates::CandidateSource;
use wakeprobe_core::lexicon::{Inventory, Phone, PhoneSeq, WakeWordSpec};
use wakeprobe_core::tuning::{rank_in, TieRank};
use wakeprobe_core::weights::{normalize_mean_one, WeightTable};
use wakeprobe_core::{Candidate, CostModel, ScaleFactors, Variant};

pub fn fixtures() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures")
}

pub fn phones(s: &str) -> Vec<Phone> {
    PhoneSeq::parse(s, &Inventory::arpabet()).unwrap().into_inner()
}

pub fn seq(s: &str) -> PhoneSeq {
    PhoneSeq::parse(s, &Inventory::arpabet()).unwrap()
}

pub fn cand(label: &str, pron: &str) -> Candidate {
    Candidate::new(label, vec![seq(pron)], CandidateSource::Dictionary)
}

pub const ALPHABET6: [&str; 6] = ["AA", "B", "K", "S", "IY", "T"];

pub fn alphabet6() -> Vec<Phone> {
    ALPHABET6.iter().map(|p| Phone::new(p).unwrap()).collect()
}

pub fn random_seq(rng: &mut ChaCha8Rng, alphabet: &[Phone], min: usize, max: usize) -> Vec<Phone> {
    let len = rng.random_range(min..=max);
    (0..len).map(|_| alphabet[rng.random_range(0..alphabet.len())]).collect()
}

/// A normalized table over `alphabet` with random positive weights.
pub fn random_table(rng: &mut ChaCha8Rng, alphabet: &[Phone]) -> WeightTable {
    let mut vec = || -> BTreeMap<Phone, f64> {
        let raw: BTreeMap<Phone, f64> = alphabet.iter().map(|&p| (p, rng.random_range(0.05..3.0))).collect();
        normalize_mean_one(&raw).unwrap()
    };
    let deletion = vec();
    let insertion = vec();
    let mut substitution = BTreeMap::new();
    for &p in alphabet {
        let raw: BTreeMap<Phone, f64> =
            alphabet.iter().filter(|&&q| q != p).map(|&q| (q, rng.random_range(0.05..3.0))).collect();
        substitution.insert(p, normalize_mean_one(&raw).unwrap());
    }
    WeightTable::new(deletion, insertion, substitution).unwrap()
}

/// Step costs of one model, looked up directly from the table.
pub struct StepCosts<'a> {
    pub scales: ScaleFactors,
    pub table: Option<&'a WeightTable>,
}

impl<'a> StepCosts<'a> {
    pub fn of(model: &'a CostModel) -> StepCosts<'a> {
        let scales = if model.variant() == Variant::Unweighted { ScaleFactors::UNIT } else { model.scales() };
        StepCosts { scales, table: model.table() }
    }

    fn sub(&self, p: Phone, q: Phone) -> f64 {
        self.scales.sub * self.table.and_then(|t| t.substitution_weight(p, q)).unwrap_or(1.0)
    }

    fn del(&self, p: Phone) -> f64 {
        self.scales.del * self.table.and_then(|t| t.deletion_weight(p)).unwrap_or(1.0)
    }

    fn ins(&self, q: Phone) -> f64 {
        self.scales.ins * self.table.and_then(|t| t.insertion_weight(q)).unwrap_or(1.0)
    }
}

/// Minimum over every edit script of its cost summed left to right, divided by
/// the wake-word length. Exponential; for short sequences only.
pub fn brute_force_distance(wake: &[Phone], cand: &[Phone], costs: &StepCosts) -> f64 {
    fn go(w: &[Phone], c: &[Phone], acc: f64, costs: &StepCosts, best: &mut f64) {
        if w.is_empty() && c.is_empty() {
            if acc < *best {
                *best = acc;
            }
            return;
        }
        if let (Some(&p), Some(&q)) = (w.first(), c.first()) {
            let step = if p == q { 0.0 } else { costs.sub(p, q) };
            go(&w[1..], &c[1..], acc + step, costs, best);
        }
        if let Some(&p) = w.first() {
            go(&w[1..], c, acc + costs.del(p), costs, best);
        }
        if let Some(&q) = c.first() {
            go(w, &c[1..], acc + costs.ins(q), costs, best);
        }
    }
    let mut best = f64::INFINITY;
    go(wake, cand, 0.0, costs, &mut best);
    best / wake.len() as f64
}

/// Objective of one grid point computed from scratch with the plain DP.
pub fn brute_force_objective(
    vocab: &[Candidate],
    wakes: &[WakeWordSpec],
    triggers: &[(&str, &str)],
    model: &CostModel,
) -> usize {
    wakes
        .iter()
        .filter_map(|w| {
            let dists: Vec<f64> = vocab
                .iter()
                .map(|c| {
                    c.prons
                        .iter()
                        .map(|p| wakeprobe_core::distance::distance(&w.phones, p, model).unwrap())
                        .fold(f64::INFINITY, f64::min)
                })
                .collect();
            triggers
                .iter()
                .filter(|(id, _)| *id == w.id)
                .map(|(_, label)| {
                    let idx = vocab.iter().position(|c| c.label == *label).unwrap();
                    rank_in(&dists, dists[idx], TieRank::Max)
                })
                .max()
        })
        .sum()
}

/// Three wake words over disjoint phones; every vocabulary item has four phones
/// and differs from its wake word only by phones absent from all wake words, so
/// an item with `k` replaced positions sits at `k * min(s, d + i) / 4`.
///
/// * VA1 `AA B CH D`: homophones va1_h1, va1_h2; trigger va1_t1 (k=1).
/// * VA2 `EH F G HH`: homophones va2_h1, va2_h2; 120 decoys (k=2); trigger va2_t3 (k=3).
/// * VA3 `IY JH K L`: homophone va3_h1; 110 decoys (k=1); trigger junk (k=4 to all).
pub fn loocv_fixture() -> (Vec<WakeWordSpec>, Vec<Candidate>, Vec<(&'static str, &'static str)>) {
    let wakes = vec![
        WakeWordSpec::new("VA1", "va one", seq("AA B CH D"), &[]),
        WakeWordSpec::new("VA2", "va two", seq("EH F G HH"), &[]),
        WakeWordSpec::new("VA3", "va three", seq("IY JH K L"), &[]),
    ];
    let junk = ["M", "N", "P", "R", "S", "T", "V", "W", "Z", "ZH"];
    let mut vocab = vec![
        cand("va1_h1", "AA B CH D"),
        cand("va1_h2", "AA B CH D"),
        cand("va1_t1", "AA B CH Z"),
        cand("va2_h1", "EH F G HH"),
        cand("va2_h2", "EH F G HH"),
        cand("va2_t3", "EH M N P"),
        cand("va3_h1", "IY JH K L"),
        cand("junk", "M N P R"),
    ];
    let mut n = 0;
    'outer: for x in junk {
        for y in junk {
            for pron in [format!("EH F {x} {y}"), format!("{x} {y} G HH")] {
                if n == 120 {
                    break 'outer;
                }
                vocab.push(cand(&format!("va2_d{n:03}"), &pron));
                n += 1;
            }
        }
    }
    let wake3 = ["IY", "JH", "K", "L"];
    for n in 0..110 {
        let mut p = wake3;
        p[n % 4] = junk[(n / 4) % junk.len()];
        vocab.push(cand(&format!("va3_d{n:03}"), &p.join(" ")));
    }
    let triggers = vec![
        ("VA1", "va1_h1"),
        ("VA1", "va1_h2"),
        ("VA1", "va1_t1"),
        ("VA2", "va2_h1"),
        ("VA2", "va2_h2"),
        ("VA2", "va2_t3"),
        ("VA3", "va3_h1"),
        ("VA3", "junk"),
    ];
    (wakes, vocab, triggers)
}
