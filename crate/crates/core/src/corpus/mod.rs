//! Dialogue corpora, vocabularies, tf-idf document vectors and pretrained
//! word embeddings.

mod stopwords;

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use stopwords::{is_stop_word, STOP_WORDS};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";
pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const PAD_ID: usize = 0;
pub const UNK_ID: usize = 1;
pub const SOS_ID: usize = 2;
pub const EOS_ID: usize = 3;
pub const NUM_RESERVED: usize = 4;

/// Lowercases `text` and splits it on whitespace, with every ASCII
/// punctuation character split off as its own token.
pub fn tokenize(text: &str) -> Vec<String> {
    let mut tokens = Vec::new();
    let mut current = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
        } else if ch.is_ascii_punctuation() {
            if !current.is_empty() {
                tokens.push(std::mem::take(&mut current));
            }
            tokens.push(ch.to_string());
        } else {
            current.extend(ch.to_lowercase());
        }
    }
    if !current.is_empty() {
        tokens.push(current);
    }
    tokens
}

pub fn detokenize(tokens: &[String]) -> String {
    tokens.join(" ")
}

/// Content tokens: everything that is not a stop-word or punctuation.
pub fn content_tokens<'a>(tokens: impl IntoIterator<Item = &'a String>) -> impl Iterator<Item = &'a String> {
    tokens.into_iter().filter(|t| !is_stop_word(t))
}

/// Bidirectional token/index map. Indices 0..4 are PAD, UNK, SOS, EOS.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<String>", into = "Vec<String>")]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::from_words(std::iter::empty::<String>())
    }
}

impl Vocabulary {
    /// Reserved tokens followed by `words` in order; duplicates are skipped.
    pub fn from_words<S: Into<String>>(words: impl IntoIterator<Item = S>) -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for special in [PAD, UNK, SOS, EOS] {
            v.push(special.to_string());
        }
        for w in words {
            v.push(w.into());
        }
        v
    }

    fn push(&mut self, token: String) {
        if !self.index.contains_key(&token) {
            self.index.insert(token.clone(), self.tokens.len());
            self.tokens.push(token);
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() == NUM_RESERVED
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn contains(&self, token: &str) -> bool {
        self.index.contains_key(token)
    }

    pub fn id_or_unk(&self, token: &str) -> usize {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id_or_unk(t)).collect()
    }

    /// Tokens for `ids`, dropping reserved entries.
    pub fn decode(&self, ids: &[usize]) -> Vec<String> {
        ids.iter()
            .filter(|&&i| i >= NUM_RESERVED)
            .filter_map(|&i| self.token(i).map(str::to_string))
            .collect()
    }

    /// Non-reserved entries with their indices.
    pub fn words(&self) -> impl Iterator<Item = (usize, &str)> {
        self.tokens
            .iter()
            .enumerate()
            .skip(NUM_RESERVED)
            .map(|(i, t)| (i, t.as_str()))
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }
}

impl TryFrom<Vec<String>> for Vocabulary {
    type Error = String;

    fn try_from(tokens: Vec<String>) -> std::result::Result<Self, String> {
        if tokens.len() < NUM_RESERVED || tokens[..NUM_RESERVED] != [PAD, UNK, SOS, EOS] {
            return Err("vocabulary must start with the reserved tokens".into());
        }
        let n = tokens.len();
        let v = Self::from_words(tokens.into_iter().skip(NUM_RESERVED));
        if v.len() != n {
            return Err("vocabulary contains duplicate tokens".into());
        }
        Ok(v)
    }
}

impl From<Vocabulary> for Vec<String> {
    fn from(v: Vocabulary) -> Self {
        v.tokens
    }
}

/// Keeps the `size_limit - 4` most frequent tokens (ties broken
/// lexicographically) after the reserved entries.
pub fn build_vocab<'a, I, D>(corpus: I, size_limit: usize, remove_stopwords: bool) -> Vocabulary
where
    I: IntoIterator<Item = D>,
    D: IntoIterator<Item = &'a String>,
{
    assert!(size_limit > NUM_RESERVED, "size_limit must exceed the reserved tokens");
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for doc in corpus {
        for tok in doc {
            if remove_stopwords && is_stop_word(tok) {
                continue;
            }
            *counts.entry(tok.as_str()).or_default() += 1;
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, _)| ![PAD, UNK, SOS, EOS].contains(t))
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Vocabulary::from_words(
        ranked
            .into_iter()
            .take(size_limit - NUM_RESERVED)
            .map(|(t, _)| t.to_string()),
    )
}

/// One training target: persona sentences, prior utterances and the
/// persona owner's response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DialogueExample {
    /// index of the source conversation within its file
    pub conversation: usize,
    pub persona: Vec<Vec<String>>,
    pub history: Vec<Vec<String>>,
    pub response: Vec<String>,
}

/// A whole conversation: persona of the responding speaker and alternating
/// utterances, partner first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Conversation {
    pub persona: Vec<Vec<String>>,
    pub utterances: Vec<Vec<String>>,
}

impl Conversation {
    /// Every token of the conversation, persona included, as one document.
    pub fn document(&self) -> Vec<String> {
        self.persona.iter().chain(&self.utterances).flatten().cloned().collect()
    }

    /// One example per response of the persona owner (odd utterance index).
    pub fn examples(&self, conversation: usize) -> Vec<DialogueExample> {
        (1..self.utterances.len())
            .step_by(2)
            .map(|t| DialogueExample {
                conversation,
                persona: self.persona.clone(),
                history: self.utterances[..t].to_vec(),
                response: self.utterances[t].clone(),
            })
            .filter(|ex| !ex.response.is_empty() && !ex.persona.is_empty())
            .collect()
    }
}

fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

/// Parses Persona-Chat text: `<n> your persona: <sentence>` lines and
/// `<n> <partner>\t<target>[\t...]` exchange lines; index 1 opens a new
/// conversation.
pub fn parse_personachat(text: &str, source: &str) -> Result<Vec<Conversation>> {
    let mut conversations: Vec<Conversation> = Vec::new();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let (num, rest) = line
            .split_once(' ')
            .ok_or_else(|| err("expected `<index> <text>`".into()))?;
        let index: usize = num.parse().map_err(|_| err(format!("malformed line index `{num}`")))?;
        if index == 1 || conversations.is_empty() {
            conversations.push(Conversation::default());
        }
        let conv = conversations.last_mut().expect("pushed above");
        if let Some(sentence) = rest.strip_prefix("your persona:") {
            conv.persona.push(tokenize(sentence));
        } else if rest.starts_with("partner's persona:") {
            continue;
        } else {
            let mut fields = rest.split('\t');
            let partner = fields.next().unwrap_or_default();
            let target = fields
                .next()
                .ok_or_else(|| err("missing tab between partner and target utterance".into()))?;
            conv.utterances.push(tokenize(partner));
            conv.utterances.push(tokenize(target));
        }
    }
    Ok(conversations)
}

pub fn load_personachat_conversations(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    parse_personachat(&read_text(path)?, &path.display().to_string())
}

/// Loads a Persona-Chat file expanded into one example per target turn.
pub fn load_personachat(path: impl AsRef<Path>) -> Result<Vec<DialogueExample>> {
    Ok(conversations_to_examples(&load_personachat_conversations(path)?))
}

pub fn conversations_to_examples(conversations: &[Conversation]) -> Vec<DialogueExample> {
    conversations
        .iter()
        .enumerate()
        .flat_map(|(i, c)| c.examples(i))
        .collect()
}

/// DailyDialog text: one dialogue per line, utterances separated by `__eou__`.
/// Dialogues carry no persona.
pub fn parse_dailydialog(text: &str) -> Vec<Conversation> {
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| Conversation {
            persona: Vec::new(),
            utterances: l.split("__eou__").map(tokenize).filter(|u| !u.is_empty()).collect(),
        })
        .collect()
}

/// Reads either corpus format, deciding by whether the first non-empty line
/// starts with a line index.
pub fn load_any_corpus(path: impl AsRef<Path>) -> Result<Vec<Conversation>> {
    let path = path.as_ref();
    let text = read_text(path)?;
    let first = text.lines().find(|l| !l.trim().is_empty()).unwrap_or("");
    let numbered = first.split_once(' ').is_some_and(|(n, _)| n.parse::<usize>().is_ok());
    if numbered {
        parse_personachat(&text, &path.display().to_string())
    } else {
        Ok(parse_dailydialog(&text))
    }
}

/// Sparse non-negative tf-idf weights keyed by vocabulary index.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TfIdfDoc {
    pub weights: BTreeMap<usize, f64>,
}

impl TfIdfDoc {
    pub fn weight(&self, index: usize) -> f64 {
        self.weights.get(&index).copied().unwrap_or(0.0)
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn dense(&self, dim: usize) -> Vec<f64> {
        let mut v = vec![0.0; dim];
        for (&i, &w) in &self.weights {
            v[i] = w;
        }
        v
    }
}

/// `count(w, d) * ln(N / (1 + df(w)))`, clamped at zero. Tokens outside the
/// vocabulary are ignored and zero weights are not stored.
pub fn compute_tfidf(documents: &[Vec<String>], vocab: &Vocabulary) -> Vec<TfIdfDoc> {
    let counts: Vec<BTreeMap<usize, usize>> = documents
        .iter()
        .map(|doc| {
            let mut c = BTreeMap::new();
            for tok in doc {
                if let Some(i) = vocab.get(tok).filter(|&i| i >= NUM_RESERVED) {
                    *c.entry(i).or_insert(0) += 1;
                }
            }
            c
        })
        .collect();
    let mut df: HashMap<usize, usize> = HashMap::new();
    for c in &counts {
        for &i in c.keys() {
            *df.entry(i).or_default() += 1;
        }
    }
    let n = documents.len() as f64;
    counts
        .into_iter()
        .map(|c| TfIdfDoc {
            weights: c
                .into_iter()
                .filter_map(|(i, count)| {
                    let idf = (n / (1.0 + df[&i] as f64)).ln();
                    let w = count as f64 * idf;
                    (w > 0.0).then_some((i, w))
                })
                .collect(),
        })
        .collect()
}

/// Pretrained word vectors restricted to a vocabulary.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmbeddingTable {
    pub dim: usize,
    pub vectors: HashMap<String, Vec<f64>>,
}

impl EmbeddingTable {
    pub fn get(&self, token: &str) -> Option<&[f64]> {
        self.vectors.get(token).map(Vec::as_slice)
    }

    pub fn len(&self) -> usize {
        self.vectors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vectors.is_empty()
    }
}

/// Parses `token v1 .. vD` lines (GloVe text format). Every line must have
/// the same arity, including lines whose token is skipped.
pub fn parse_embeddings(text: &str, source: &str, vocab: Option<&Vocabulary>) -> Result<EmbeddingTable> {
    let mut table = EmbeddingTable::default();
    let mut dim: Option<usize> = None;
    for (lineno, line) in text.lines().enumerate() {
        let mut parts = line.split_whitespace();
        let Some(token) = parts.next() else {
            continue;
        };
        let err = |msg: String| Error::Parse {
            path: source.to_string(),
            line: lineno + 1,
            msg,
        };
        let values = parts
            .map(|p| p.parse::<f64>().map_err(|_| err(format!("bad number `{p}`"))))
            .collect::<Result<Vec<_>>>()?;
        match dim {
            None if values.is_empty() => return Err(err("token without vector".into())),
            None => dim = Some(values.len()),
            Some(d) if d != values.len() => return Err(err(format!("expected {d} values, found {}", values.len()))),
            Some(_) => {}
        }
        if vocab.is_none_or(|v| v.contains(token)) {
            table.vectors.insert(token.to_string(), values);
        }
    }
    table.dim = dim.unwrap_or(0);
    Ok(table)
}

pub fn load_embeddings(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<EmbeddingTable> {
    let path = path.as_ref();
    parse_embeddings(&read_text(path)?, &path.display().to_string(), Some(vocab))
}
