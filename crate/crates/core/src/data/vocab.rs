use std::collections::HashMap;
use std::path::Path;

use super::{BOS, EOS, PAD, RESERVED, UNK};
use crate::error::{read_text, write_file, Error, Result};

/// Strips ASCII punctuation, lowercases and splits on whitespace.
pub fn tokenize(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().map(str::to_owned).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    counts: Vec<u64>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    fn from_entries(entries: Vec<(String, u64)>) -> Result<Self> {
        let mut index = HashMap::with_capacity(entries.len());
        for (i, (tok, _)) in entries.iter().enumerate() {
            if index.insert(tok.clone(), i).is_some() {
                return Err(Error::Format(format!("duplicate vocabulary token `{tok}`")));
            }
        }
        let (tokens, counts) = entries.into_iter().unzip();
        Ok(Vocabulary { tokens, counts, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn count(&self, id: usize) -> Option<u64> {
        self.counts.get(id).copied()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// `token<TAB>count` per line, reserved tokens first.
    pub fn to_tsv(&self) -> String {
        let mut out = String::new();
        for (t, c) in self.tokens.iter().zip(&self.counts) {
            out.push_str(t);
            out.push('\t');
            out.push_str(&c.to_string());
            out.push('\n');
        }
        out
    }

    pub fn from_tsv(text: &str) -> Result<Self> {
        let mut entries = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            if line.is_empty() {
                continue;
            }
            let (tok, count) = line
                .split_once('\t')
                .ok_or_else(|| Error::Format(format!("vocabulary line {}: expected token<TAB>count", lineno + 1)))?;
            let count = count
                .trim()
                .parse()
                .map_err(|_| Error::Format(format!("vocabulary line {}: bad count `{count}`", lineno + 1)))?;
            entries.push((tok.to_owned(), count));
        }
        if entries.len() < RESERVED.len() || entries.iter().zip(RESERVED).any(|((t, _), r)| t != r) {
            return Err(Error::Format(format!("vocabulary must start with {RESERVED:?}")));
        }
        Self::from_entries(entries)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        write_file(path, self.to_tsv())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_tsv(&read_text(path)?)
    }
}

/// Keeps tokens seen at least `min_count` times. Order: reserved tokens,
/// then by descending frequency, ties by first occurrence in the corpus.
pub fn build_vocab<S: AsRef<str>>(corpus: &[S], min_count: u64) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyInput { op: "build_vocab" });
    }
    let mut seen: HashMap<String, (u64, usize)> = HashMap::new();
    let mut order = 0;
    for text in corpus {
        for tok in tokenize(text.as_ref()) {
            let e = seen.entry(tok).or_insert_with(|| {
                order += 1;
                (0, order)
            });
            e.0 += 1;
        }
    }
    let mut kept: Vec<(String, u64, usize)> = seen
        .into_iter()
        .filter(|(tok, (c, _))| *c >= min_count.max(1) && !RESERVED.contains(&tok.as_str()))
        .map(|(t, (c, o))| (t, c, o))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.2.cmp(&b.2)));
    let entries = RESERVED
        .iter()
        .map(|r| (r.to_string(), 0))
        .chain(kept.into_iter().map(|(t, c, _)| (t, c)))
        .collect();
    Vocabulary::from_entries(entries)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CaptionSequence {
    pub video_id: String,
    /// `[BOS, w_1, …, w_k, EOS]`.
    pub tokens: Vec<usize>,
    pub text: String,
}

pub fn encode_caption(video_id: &str, text: &str, vocab: &Vocabulary) -> CaptionSequence {
    let mut tokens = vec![BOS];
    tokens.extend(tokenize(text).iter().map(|t| vocab.id(t)));
    tokens.push(EOS);
    CaptionSequence {
        video_id: video_id.to_owned(),
        tokens,
        text: text.to_owned(),
    }
}

/// Drops PAD/BOS/EOS and joins the rest with single spaces. Decoding stops at
/// the first EOS.
pub fn decode_tokens(ids: &[usize], vocab: &Vocabulary) -> String {
    ids.iter()
        .take_while(|&&i| i != EOS)
        .filter(|&&i| i != PAD && i != BOS)
        .map(|&i| vocab.token(i).unwrap_or(RESERVED[UNK]))
        .collect::<Vec<_>>()
        .join(" ")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tokenizer_rules() {
        assert_eq!(tokenize("A man, a plan"), vec!["a", "man", "a", "plan"]);
        assert_eq!(tokenize("  It's   DONE!\t"), vec!["its", "done"]);
        assert!(tokenize("?!.").is_empty());
    }

    #[test]
    fn small_corpus() {
        let v = build_vocab(&["a b", "a"], 1).unwrap();
        assert_eq!(v.len(), 6);
        assert_eq!(&v.tokens()[4..], ["a", "b"]);
        let v2 = build_vocab(&["a b", "a"], 2).unwrap();
        assert_eq!(&v2.tokens()[4..], ["a"]);
        assert_eq!(v2.id("b"), UNK);
    }

    #[test]
    fn ties_break_by_first_occurrence() {
        let v = build_vocab(&["z y x", "x y z w w"], 1).unwrap();
        assert_eq!(&v.tokens()[4..], ["z", "y", "x", "w"]);
    }

    #[test]
    fn empty_corpus_rejected() {
        assert!(build_vocab::<&str>(&[], 1).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = build_vocab(&["a b"], 1).unwrap();
        let c = encode_caption("v", "A b", &v);
        assert_eq!(c.tokens, vec![BOS, 4, 5, EOS]);
        assert_eq!(decode_tokens(&c.tokens, &v), "a b");
        assert_eq!(encode_caption("v", "a zebra", &v).tokens, vec![BOS, 4, UNK, EOS]);
        assert_eq!(decode_tokens(&[EOS, 4], &v), "");
    }

    #[test]
    fn tsv_round_trip() {
        let v = build_vocab(&["the dog runs", "the cat"], 1).unwrap();
        let back = Vocabulary::from_tsv(&v.to_tsv()).unwrap();
        assert_eq!(back, v);
        assert!(Vocabulary::from_tsv("a\t1\n").is_err());
    }
}
