//! Byte-pair-encoding tokenizer shared by the language model and the text encoder.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

pub const UNK: usize = 0;
/// Marks the end of the prompt and the start of the generated output.
pub const SEP: usize = 1;
pub const EOS: usize = 2;
const SPECIALS: [&str; 3] = ["<unk>", "<sep>", "<eos>"];

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Tokenizer {
    vocab: Vec<String>,
    merges: Vec<(String, String)>,
    #[serde(skip)]
    index: HashMap<String, usize>,
    #[serde(skip)]
    ranks: HashMap<(String, String), usize>,
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Class {
    Word,
    Digit,
    Newline,
    Space,
    Punct,
}

fn class(c: char) -> Class {
    if c == '\n' {
        Class::Newline
    } else if c.is_whitespace() {
        Class::Space
    } else if c.is_alphabetic() {
        Class::Word
    } else if c.is_numeric() {
        Class::Digit
    } else {
        Class::Punct
    }
}

/// Splits text into chunks that merges never cross: a run of letters, digits
/// or punctuation with at most one leading space; each newline alone; other
/// whitespace runs alone.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut chunks = Vec::new();
    let idx: Vec<(usize, char)> = text.char_indices().collect();
    let mut i = 0;
    while i < idx.len() {
        let start = idx[i].0;
        let (_, c) = idx[i];
        let mut j = i + 1;
        match class(c) {
            Class::Newline => {}
            Class::Space => {
                let next = idx.get(i + 1).map(|&(_, n)| class(n));
                if c == ' ' && matches!(next, Some(Class::Word | Class::Digit | Class::Punct)) {
                    let cls = next.unwrap();
                    j = i + 2;
                    while j < idx.len() && class(idx[j].1) == cls {
                        j += 1;
                    }
                } else {
                    while j < idx.len()
                        && class(idx[j].1) == Class::Space
                        && !(idx[j].1 == ' '
                            && matches!(
                                idx.get(j + 1).map(|&(_, n)| class(n)),
                                Some(Class::Word | Class::Digit | Class::Punct)
                            ))
                    {
                        j += 1;
                    }
                }
            }
            cls => {
                while j < idx.len() && class(idx[j].1) == cls {
                    j += 1;
                }
            }
        }
        let end = idx.get(j).map_or(text.len(), |&(b, _)| b);
        chunks.push(&text[start..end]);
        i = j;
    }
    chunks
}

impl Tokenizer {
    /// Learns merges over `corpus` until the vocabulary reaches `vocab_size`
    /// or no pair occurs twice. Deterministic: frequency ties are broken by
    /// the lexicographically smallest pair.
    pub fn train<'a>(corpus: impl IntoIterator<Item = &'a str>, vocab_size: usize) -> Self {
        let mut words: HashMap<&str, usize> = HashMap::new();
        for text in corpus {
            for chunk in pretokenize(text) {
                *words.entry(chunk).or_default() += 1;
            }
        }
        let mut alphabet: Vec<String> = words
            .keys()
            .flat_map(|w| w.chars())
            .map(String::from)
            .collect();
        alphabet.sort();
        alphabet.dedup();
        let mut vocab: Vec<String> = SPECIALS.iter().map(|s| s.to_string()).collect();
        vocab.extend(alphabet);

        let mut entries: Vec<(Vec<String>, usize)> = {
            let mut v: Vec<_> = words
                .iter()
                .map(|(w, &n)| (w.chars().map(String::from).collect::<Vec<_>>(), n))
                .collect();
            v.sort();
            v
        };
        let mut merges = Vec::new();
        while vocab.len() < vocab_size {
            let mut counts: HashMap<(&str, &str), usize> = HashMap::new();
            for (syms, n) in &entries {
                for pair in syms.windows(2) {
                    *counts.entry((&pair[0], &pair[1])).or_default() += n;
                }
            }
            let best = counts
                .into_iter()
                .filter(|&(_, n)| n >= 2)
                .max_by(|a, b| a.1.cmp(&b.1).then_with(|| b.0.cmp(&a.0)));
            let Some(((l, r), _)) = best else { break };
            let (l, r) = (l.to_owned(), r.to_owned());
            let joined = format!("{l}{r}");
            for (syms, _) in &mut entries {
                let mut out = Vec::with_capacity(syms.len());
                let mut i = 0;
                while i < syms.len() {
                    if i + 1 < syms.len() && syms[i] == l && syms[i + 1] == r {
                        out.push(joined.clone());
                        i += 2;
                    } else {
                        out.push(std::mem::take(&mut syms[i]));
                        i += 1;
                    }
                }
                *syms = out;
            }
            vocab.push(joined);
            merges.push((l, r));
        }
        Self::from_parts(vocab, merges)
    }

    pub fn from_parts(vocab: Vec<String>, merges: Vec<(String, String)>) -> Self {
        let mut t = Self {
            vocab,
            merges,
            index: HashMap::new(),
            ranks: HashMap::new(),
        };
        t.rebuild();
        t
    }

    /// Restores lookup tables after deserialization.
    pub fn rebuild(&mut self) {
        self.index = self
            .vocab
            .iter()
            .enumerate()
            .map(|(i, s)| (s.clone(), i))
            .collect();
        self.ranks = self
            .merges
            .iter()
            .enumerate()
            .map(|(i, p)| (p.clone(), i))
            .collect();
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn token(&self, id: usize) -> &str {
        &self.vocab[id]
    }

    fn encode_chunk(&self, chunk: &str, out: &mut Vec<usize>) {
        let mut syms: Vec<String> = chunk.chars().map(String::from).collect();
        loop {
            let best = syms
                .windows(2)
                .enumerate()
                .filter_map(|(i, p)| {
                    self.ranks
                        .get(&(p[0].clone(), p[1].clone()))
                        .map(|&rank| (rank, i))
                })
                .min();
            let Some((_, i)) = best else { break };
            let joined = format!("{}{}", syms[i], syms[i + 1]);
            syms.splice(i..i + 2, [joined]);
        }
        out.extend(syms.iter().map(|s| self.index.get(s).copied().unwrap_or(UNK)));
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        let mut out = Vec::new();
        for chunk in pretokenize(text) {
            self.encode_chunk(chunk, &mut out);
        }
        out
    }

    /// Concatenates token strings; special tokens are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&id| id >= SPECIALS.len())
            .filter_map(|&id| self.vocab.get(id).map(String::as_str))
            .collect()
    }
}
