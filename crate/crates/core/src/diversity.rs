//! Group-relative diversity scoring of rendered rollouts.
//!
//! Each rollout inside a group gets two distinctiveness scores in `[0, 1]`:
//!
//! * `d_emb`: mean embedding distance to the other members, where the
//!   embedding is an L2-normalized count vector of hashed word 1-/2-grams.
//! * `d_eq`: the fraction of the rollout's extracted formulas that no other
//!   member of the group produced.
//!
//! Their average `d` is clipped to `[0, sigma_d]`, giving `d_bar`, the value
//! the reward shaping and coupling weights consume. Hashing is seeded FNV-1a
//! with a fixed bucket count, so scores are reproducible across platforms
//! and need no external model.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec::Vec;

use crate::math;

pub const DEFAULT_EMBED_DIM: usize = 64;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum DiversityError {
    #[error("diversity scores need a group of at least 2, got {got}")]
    GroupTooSmall { got: usize },
}

const FNV_OFFSET: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0000_0100_0000_01b3;

fn fnv1a(seed: u64, parts: &[&[u8]]) -> u64 {
    let mut h = FNV_OFFSET;
    for b in seed.to_le_bytes() {
        h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
    }
    for part in parts {
        for &b in *part {
            h = (h ^ u64::from(b)).wrapping_mul(FNV_PRIME);
        }
    }
    h
}

/// Unit-norm embedding of one text.
#[derive(Debug, Clone, PartialEq)]
pub struct Embedding {
    v: Vec<f64>,
}

impl Embedding {
    /// Builds an embedding directly from components, normalizing them.
    /// All-zero input maps to the first basis vector, like an empty text.
    pub fn from_components(components: Vec<f64>) -> Self {
        let mut v = components;
        assert!(!v.is_empty(), "embedding dimension must be at least 1");
        let norm = math::sqrt(v.iter().map(|x| x * x).sum());
        if norm == 0.0 {
            v[0] = 1.0;
            Self { v }
        } else {
            for x in v.iter_mut() {
                *x /= norm;
            }
            Self { v }
        }
    }

    pub fn dim(&self) -> usize {
        self.v.len()
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.v
    }

    pub fn dot(&self, other: &Embedding) -> f64 {
        assert_eq!(self.dim(), other.dim(), "embedding dimension mismatch");
        self.v.iter().zip(other.v.iter()).map(|(a, b)| a * b).sum()
    }
}

/// Hashed 1-/2-gram bag-of-words embedder. Words are whitespace-separated;
/// each word and each adjacent word pair is hashed into one of `dim`
/// buckets.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Embedder {
    dim: usize,
    seed: u64,
}

impl Embedder {
    pub fn new(dim: usize, seed: u64) -> Self {
        assert!(dim >= 1, "embedding dimension must be at least 1");
        Self { dim, seed }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn embed(&self, text: &str) -> Embedding {
        let mut counts = alloc::vec![0.0; self.dim];
        let words: Vec<&str> = text.split_whitespace().collect();
        for w in &words {
            let bucket = (fnv1a(self.seed, &[w.as_bytes()]) % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        for pair in words.windows(2) {
            let bucket = (fnv1a(self.seed, &[pair[0].as_bytes(), b"\x1f", pair[1].as_bytes()])
                % self.dim as u64) as usize;
            counts[bucket] += 1.0;
        }
        Embedding::from_components(counts)
    }
}

/// Cosine-derived distance in `[0, 1]`: `(1 - dot) / 2`, clamped against
/// rounding drift.
pub fn emb_distance(a: &Embedding, b: &Embedding) -> f64 {
    ((1.0 - a.dot(b)) / 2.0).clamp(0.0, 1.0)
}

/// For each member, its mean embedding distance to the other members.
pub fn group_emb_diversity(embeddings: &[Embedding]) -> Result<Vec<f64>, DiversityError> {
    let n = embeddings.len();
    if n < 2 {
        return Err(DiversityError::GroupTooSmall { got: n });
    }
    let mut out = alloc::vec![0.0; n];
    for i in 0..n {
        let mut sum = 0.0;
        for (j, e) in embeddings.iter().enumerate() {
            if j != i {
                sum += emb_distance(&embeddings[i], e);
            }
        }
        out[i] = sum / (n - 1) as f64;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Tok {
    Int,
    Ident,
    Plus,
    Minus,
    Star,
    LParen,
    RParen,
    Eq,
}

fn tokenize(line: &str) -> Option<Vec<Tok>> {
    let mut toks = Vec::new();
    let mut chars = line.chars().peekable();
    while let Some(&c) = chars.peek() {
        if c.is_whitespace() {
            chars.next();
            continue;
        }
        let tok = match c {
            '+' => Tok::Plus,
            '-' => Tok::Minus,
            '*' => Tok::Star,
            '(' => Tok::LParen,
            ')' => Tok::RParen,
            '=' => Tok::Eq,
            '0'..='9' => {
                while matches!(chars.peek(), Some('0'..='9')) {
                    chars.next();
                }
                toks.push(Tok::Int);
                continue;
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                while matches!(chars.peek(), Some(c) if c.is_ascii_alphanumeric() || *c == '_') {
                    chars.next();
                }
                toks.push(Tok::Ident);
                continue;
            }
            _ => return None,
        };
        chars.next();
        toks.push(tok);
    }
    Some(toks)
}

fn parse_atom(toks: &[Tok], pos: &mut usize) -> bool {
    match toks.get(*pos) {
        Some(Tok::Int) | Some(Tok::Ident) => {
            *pos += 1;
            true
        }
        Some(Tok::LParen) => {
            *pos += 1;
            if !parse_expr(toks, pos) {
                return false;
            }
            if toks.get(*pos) == Some(&Tok::RParen) {
                *pos += 1;
                true
            } else {
                false
            }
        }
        _ => false,
    }
}

fn parse_term(toks: &[Tok], pos: &mut usize) -> bool {
    if !parse_atom(toks, pos) {
        return false;
    }
    while toks.get(*pos) == Some(&Tok::Star) {
        *pos += 1;
        if !parse_atom(toks, pos) {
            return false;
        }
    }
    true
}

fn parse_expr(toks: &[Tok], pos: &mut usize) -> bool {
    if !parse_term(toks, pos) {
        return false;
    }
    while matches!(toks.get(*pos), Some(Tok::Plus) | Some(Tok::Minus)) {
        *pos += 1;
        if !parse_term(toks, pos) {
            return false;
        }
    }
    true
}

fn parses_as_expr(toks: &[Tok]) -> bool {
    let mut pos = 0;
    parse_expr(toks, &mut pos) && pos == toks.len()
}

fn is_formula(line: &str) -> bool {
    let Some(toks) = tokenize(line) else {
        return false;
    };
    let eq_positions: Vec<usize> = toks
        .iter()
        .enumerate()
        .filter(|(_, t)| **t == Tok::Eq)
        .map(|(i, _)| i)
        .collect();
    let [eq] = eq_positions.as_slice() else {
        return false;
    };
    parses_as_expr(&toks[..*eq]) && parses_as_expr(&toks[*eq + 1..])
}

fn canonical(line: &str) -> String {
    line.chars().filter(|c| !c.is_whitespace()).collect()
}

/// Extracts the set of equation-shaped lines from a text. A line counts as
/// a formula when it is `EXPR = EXPR` with expressions over integers,
/// identifiers, `+`, `-`, `*`, and parentheses. Returned formulas are
/// canonicalized by removing all whitespace, so layout differences do not
/// create spurious novelty.
pub fn extract_formulas(text: &str) -> BTreeSet<String> {
    text.lines().filter(|l| is_formula(l)).map(canonical).collect()
}

/// For each member, the fraction of its formulas that appear in no other
/// member's set. Members with no formulas score 0.
pub fn group_eq_diversity(sets: &[BTreeSet<String>]) -> Result<Vec<f64>, DiversityError> {
    let n = sets.len();
    if n < 2 {
        return Err(DiversityError::GroupTooSmall { got: n });
    }
    let mut counts: BTreeMap<&String, usize> = BTreeMap::new();
    for set in sets {
        for f in set {
            *counts.entry(f).or_insert(0) += 1;
        }
    }
    Ok(sets
        .iter()
        .map(|set| {
            if set.is_empty() {
                0.0
            } else {
                let unique = set.iter().filter(|f| counts[*f] == 1).count();
                unique as f64 / set.len() as f64
            }
        })
        .collect())
}

/// Diversity scores of one rollout within its group.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiversityScore {
    pub d_emb: f64,
    pub d_eq: f64,
    /// Equal-weight combination `(d_emb + d_eq) / 2`.
    pub d: f64,
    /// `d` clipped to `[0, sigma_d]`; the value shaping consumes.
    pub d_bar: f64,
}

pub fn combine_and_clip(d_emb: f64, d_eq: f64, sigma_d: f64) -> DiversityScore {
    let d = 0.5 * (d_emb + d_eq);
    DiversityScore { d_emb, d_eq, d, d_bar: d.clamp(0.0, sigma_d) }
}

/// Full scoring pipeline for one group of rendered texts.
pub fn score_group(
    texts: &[&str],
    embedder: &Embedder,
    sigma_d: f64,
) -> Result<Vec<DiversityScore>, DiversityError> {
    let embeddings: Vec<Embedding> = texts.iter().map(|t| embedder.embed(t)).collect();
    let d_emb = group_emb_diversity(&embeddings)?;
    let sets: Vec<BTreeSet<String>> = texts.iter().map(|t| extract_formulas(t)).collect();
    let d_eq = group_eq_diversity(&sets)?;
    Ok(d_emb
        .into_iter()
        .zip(d_eq)
        .map(|(e, q)| combine_and_clip(e, q, sigma_d))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn basis(dim: usize, i: usize) -> Embedding {
        let mut v = alloc::vec![0.0; dim];
        v[i] = 1.0;
        Embedding::from_components(v)
    }

    #[test]
    fn distance_of_identical_is_zero_orthogonal_is_half() {
        let a = basis(4, 0);
        let b = basis(4, 1);
        assert_eq!(emb_distance(&a, &a), 0.0);
        assert_eq!(emb_distance(&a, &b), 0.5);
    }

    #[test]
    fn group_emb_diversity_on_two_clones_and_one_outlier() {
        let embs = alloc::vec![basis(4, 0), basis(4, 0), basis(4, 1)];
        let d = group_emb_diversity(&embs).unwrap();
        assert_eq!(d, alloc::vec![0.25, 0.25, 0.5]);
    }

    #[test]
    fn group_of_one_is_rejected() {
        let embs = alloc::vec![basis(2, 0)];
        assert_eq!(
            group_emb_diversity(&embs),
            Err(DiversityError::GroupTooSmall { got: 1 })
        );
        let sets = alloc::vec![BTreeSet::new()];
        assert_eq!(group_eq_diversity(&sets), Err(DiversityError::GroupTooSmall { got: 1 }));
    }

    #[test]
    fn embedding_is_deterministic_and_unit_norm() {
        let emb = Embedder::new(64, 0);
        let a = emb.embed("1 + 3 = 4\nanswer = 4");
        let b = emb.embed("1 + 3 = 4\nanswer = 4");
        assert_eq!(a, b);
        let norm: f64 = a.as_slice().iter().map(|x| x * x).sum();
        assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn embedding_counts_grams_into_seeded_buckets() {
        // Independent recomputation of the bucketing for a two-word text:
        // grams are "a", "b", and the pair "a\x1fb".
        let dim = 7usize;
        let seed = 9u64;
        let hash = |bytes: &[u8]| -> u64 {
            let mut h = 0xcbf29ce484222325u64;
            for b in seed.to_le_bytes() {
                h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
            }
            for &b in bytes {
                h = (h ^ u64::from(b)).wrapping_mul(0x100000001b3);
            }
            h
        };
        let mut counts = alloc::vec![0.0; dim];
        counts[(hash(b"a") % dim as u64) as usize] += 1.0;
        counts[(hash(b"b") % dim as u64) as usize] += 1.0;
        counts[(hash(b"a\x1fb") % dim as u64) as usize] += 1.0;
        let want = Embedding::from_components(counts);
        assert_eq!(Embedder::new(dim, seed).embed("a b"), want);
    }

    #[test]
    fn empty_text_embeds_to_first_basis_vector() {
        let emb = Embedder::new(8, 0);
        assert_eq!(emb.embed(""), basis(8, 0));
        assert_eq!(emb.embed("   \n  "), basis(8, 0));
    }

    #[test]
    fn different_seeds_bucket_differently() {
        let text = "2 + 5 = 0\nanswer = 0";
        let a = Embedder::new(64, 0).embed(text);
        let b = Embedder::new(64, 1).embed(text);
        assert_ne!(a, b);
    }

    #[test]
    fn formula_extraction_accepts_the_grammar() {
        let set = extract_formulas("1 + 3 = 4\nanswer = 4");
        let want: BTreeSet<String> =
            ["1+3=4", "answer=4"].into_iter().map(String::from).collect();
        assert_eq!(set, want);

        assert!(is_formula("x = (2 + 3) * 4"));
        assert!(is_formula("a_1 - 2 = b3"));
        assert!(is_formula(" 7*7=49 "));
    }

    #[test]
    fn formula_extraction_rejects_non_formulas() {
        assert!(!is_formula("hello world"));
        assert!(!is_formula("= 4"));
        assert!(!is_formula("1 + = 4"));
        assert!(!is_formula("a = b = c"));
        assert!(!is_formula("2 / 3 = 4"));
        assert!(!is_formula("(1 + 2 = 3"));
        assert!(!is_formula("1 + 3"));
        assert!(!is_formula(""));
    }

    #[test]
    fn canonicalization_is_idempotent() {
        let once = extract_formulas("1 + 3 = 4");
        let canon = once.iter().next().unwrap();
        let twice = extract_formulas(canon);
        assert_eq!(once, twice);
    }

    #[test]
    fn eq_diversity_on_the_two_demo_modes() {
        let sets: Vec<BTreeSet<String>> = ["1 + 3 = 4\nanswer = 4", "1 * 4 = 4\nanswer = 4"]
            .iter()
            .map(|t| extract_formulas(t))
            .collect();
        // Each rollout has one unique op line and the shared answer line.
        assert_eq!(group_eq_diversity(&sets).unwrap(), alloc::vec![0.5, 0.5]);
    }

    #[test]
    fn eq_diversity_empty_set_scores_zero() {
        let sets = alloc::vec![
            extract_formulas("no equations here"),
            extract_formulas("1 + 1 = 2"),
        ];
        assert_eq!(group_eq_diversity(&sets).unwrap(), alloc::vec![0.0, 1.0]);
    }

    #[test]
    fn combine_averages_then_clips() {
        let s = combine_and_clip(0.5, 0.75, 0.5);
        assert_eq!(s.d, 0.625);
        assert_eq!(s.d_bar, 0.5);
        let t = combine_and_clip(0.25, 0.25, 0.5);
        assert_eq!(t.d, 0.25);
        assert_eq!(t.d_bar, 0.25);
    }

    #[test]
    fn score_group_identical_texts_all_zero() {
        let embedder = Embedder::new(64, 0);
        let texts = ["answer = 1", "answer = 1", "answer = 1"];
        let scores = score_group(&texts, &embedder, 0.5).unwrap();
        for s in scores {
            assert!(s.d_emb < 1e-12, "cosine rounding only: {}", s.d_emb);
            assert_eq!(s.d_eq, 0.0);
            assert!(s.d_bar < 1e-12);
        }
    }

    proptest! {
        #[test]
        fn scores_stay_in_range(texts in proptest::collection::vec("[a-z0-9+*= \\n]{0,40}", 2..6), sigma in 0.05f64..1.0) {
            let embedder = Embedder::new(64, 3);
            let refs: Vec<&str> = texts.iter().map(|s| s.as_str()).collect();
            let scores = score_group(&refs, &embedder, sigma).unwrap();
            for s in scores {
                prop_assert!((0.0..=1.0).contains(&s.d_emb));
                prop_assert!((0.0..=1.0).contains(&s.d_eq));
                prop_assert!((0.0..=1.0).contains(&s.d));
                prop_assert!((0.0..=sigma).contains(&s.d_bar));
            }
        }

        #[test]
        fn emb_distance_is_symmetric_and_bounded(a in "[a-z ]{0,30}", b in "[a-z ]{0,30}") {
            let embedder = Embedder::new(16, 0);
            let ea = embedder.embed(&a);
            let eb = embedder.embed(&b);
            let d1 = emb_distance(&ea, &eb);
            let d2 = emb_distance(&eb, &ea);
            prop_assert_eq!(d1, d2);
            prop_assert!((0.0..=1.0).contains(&d1));
        }
    }
}
