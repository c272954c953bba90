//! Byte-level BPE tokenizer and the multi-turn chat template.
//!
//! Ids `0..256` are raw bytes, ids `256..256 + merges` are merge results in
//! priority order, and the reserved chat markers take the last ids.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BinaryHeap, HashMap, HashSet};
use std::path::Path;

use base64::engine::general_purpose::STANDARD as BASE64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const USER_MARKER: &str = "<|user|>";
pub const ASSISTANT_MARKER: &str = "<|assistant|>";
pub const END_MARKER: &str = "<|end|>";
pub const CHAT_MARKERS: [&str; 3] = [USER_MARKER, ASSISTANT_MARKER, END_MARKER];

pub const TOKENIZER_FILE_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct TokenizerModel {
    vocab: Vec<Vec<u8>>,
    merges: Vec<(u32, u32)>,
    ranks: HashMap<(u32, u32), u32>,
    special_tokens: BTreeMap<String, u32>,
    special_ids: HashSet<u32>,
}

/// Splits text before every whitespace run that follows a non-whitespace
/// character, so each piece is `whitespace* non-whitespace*`.
pub fn pretokenize(text: &str) -> Vec<&str> {
    let mut pieces = Vec::new();
    let mut start = 0;
    let mut prev_ws = true;
    for (i, c) in text.char_indices() {
        let ws = c.is_whitespace();
        if ws && !prev_ws {
            pieces.push(&text[start..i]);
            start = i;
        }
        prev_ws = ws;
    }
    if start < text.len() {
        pieces.push(&text[start..]);
    }
    pieces
}

/// Trains with the default chat markers reserved.
pub fn train_bpe<S: AsRef<str>>(corpus: &[S], vocab_size: usize) -> Result<TokenizerModel> {
    train_bpe_with_specials(corpus, vocab_size, &CHAT_MARKERS)
}

/// Greedy BPE: repeatedly merges the most frequent adjacent pair until the
/// vocabulary is full or no pair occurs at least twice. Ties go to the
/// lexicographically smallest byte pair.
pub fn train_bpe_with_specials<S: AsRef<str>>(
    corpus: &[S],
    vocab_size: usize,
    specials: &[&str],
) -> Result<TokenizerModel> {
    if corpus.iter().all(|t| t.as_ref().is_empty()) {
        return Err(Error::Domain("cannot train a tokenizer on an empty corpus".into()));
    }
    let floor = 256 + specials.len();
    if vocab_size < floor {
        return Err(Error::Domain(format!(
            "vocab size {vocab_size} is below the {floor} byte and special ids"
        )));
    }

    let mut counts: BTreeMap<&[u8], u64> = BTreeMap::new();
    for text in corpus {
        for piece in pretokenize(text.as_ref()) {
            *counts.entry(piece.as_bytes()).or_default() += 1;
        }
    }
    let mut words: Vec<(Vec<u32>, u64)> = counts
        .into_iter()
        .map(|(w, c)| (w.iter().map(|&b| b as u32).collect(), c))
        .collect();

    let mut vocab: Vec<Vec<u8>> = (0..=255u8).map(|b| vec![b]).collect();
    let mut merges = Vec::new();

    let mut pair_counts: HashMap<(u32, u32), u64> = HashMap::new();
    let mut pair_words: HashMap<(u32, u32), HashSet<usize>> = HashMap::new();
    for (wi, (syms, c)) in words.iter().enumerate() {
        for p in syms.windows(2) {
            let pair = (p[0], p[1]);
            *pair_counts.entry(pair).or_default() += c;
            pair_words.entry(pair).or_default().insert(wi);
        }
    }

    type HeapKey = (u64, Reverse<(Vec<u8>, Vec<u8>)>, (u32, u32));
    let key = |vocab: &[Vec<u8>], pair: (u32, u32), c: u64| -> HeapKey {
        (c, Reverse((vocab[pair.0 as usize].clone(), vocab[pair.1 as usize].clone())), pair)
    };
    let mut heap: BinaryHeap<HeapKey> = pair_counts.iter().map(|(&p, &c)| key(&vocab, p, c)).collect();

    let n_merges = vocab_size - floor;
    while merges.len() < n_merges {
        let Some((c, _, pair)) = heap.pop() else { break };
        if pair_counts.get(&pair) != Some(&c) {
            continue; // stale entry
        }
        if c < 2 {
            break;
        }
        let new_id = vocab.len() as u32;
        let mut bytes = vocab[pair.0 as usize].clone();
        bytes.extend_from_slice(&vocab[pair.1 as usize]);
        vocab.push(bytes);
        merges.push(pair);

        let mut affected: Vec<usize> = pair_words.remove(&pair).unwrap_or_default().into_iter().collect();
        affected.sort_unstable();
        let mut touched: HashSet<(u32, u32)> = HashSet::new();
        for wi in affected {
            let (syms, wc) = &mut words[wi];
            for p in syms.windows(2) {
                let old = (p[0], p[1]);
                if let Some(v) = pair_counts.get_mut(&old) {
                    *v -= *wc;
                    touched.insert(old);
                }
            }
            *syms = merge_pair(syms, pair, new_id);
            for p in syms.windows(2) {
                let new = (p[0], p[1]);
                *pair_counts.entry(new).or_default() += *wc;
                pair_words.entry(new).or_default().insert(wi);
                touched.insert(new);
            }
        }
        pair_counts.remove(&pair);
        let mut touched: Vec<_> = touched.into_iter().collect();
        touched.sort_unstable();
        for p in touched {
            match pair_counts.get(&p).copied() {
                Some(0) => {
                    pair_counts.remove(&p);
                }
                Some(c) => heap.push(key(&vocab, p, c)),
                None => {}
            }
        }
    }

    TokenizerModel::from_parts(vocab, merges, specials)
}

fn merge_pair(syms: &[u32], pair: (u32, u32), new_id: u32) -> Vec<u32> {
    let mut out = Vec::with_capacity(syms.len());
    let mut i = 0;
    while i < syms.len() {
        if i + 1 < syms.len() && syms[i] == pair.0 && syms[i + 1] == pair.1 {
            out.push(new_id);
            i += 2;
        } else {
            out.push(syms[i]);
            i += 1;
        }
    }
    out
}

#[derive(Serialize, Deserialize)]
struct TokenizerFile {
    version: u32,
    vocab: BTreeMap<u32, String>,
    merges: Vec<(u32, u32)>,
    special_tokens: BTreeMap<String, u32>,
}

impl TokenizerModel {
    /// A tokenizer with no merges: every byte is its own token.
    pub fn byte_level(specials: &[&str]) -> Self {
        let vocab = (0..=255u8).map(|b| vec![b]).collect();
        Self::from_parts(vocab, Vec::new(), specials).expect("byte-level vocabulary is valid")
    }

    fn from_parts(mut vocab: Vec<Vec<u8>>, merges: Vec<(u32, u32)>, specials: &[&str]) -> Result<Self> {
        let mut special_tokens = BTreeMap::new();
        for name in specials {
            let id = vocab.len() as u32;
            if special_tokens.insert(name.to_string(), id).is_some() {
                return Err(Error::Domain(format!("duplicate special token {name}")));
            }
            vocab.push(name.as_bytes().to_vec());
        }
        let ranks = merges.iter().enumerate().map(|(r, &p)| (p, r as u32)).collect();
        let special_ids = special_tokens.values().copied().collect();
        Ok(Self {
            vocab,
            merges,
            ranks,
            special_tokens,
            special_ids,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.vocab.len()
    }

    pub fn merges(&self) -> &[(u32, u32)] {
        &self.merges
    }

    pub fn special_tokens(&self) -> &BTreeMap<String, u32> {
        &self.special_tokens
    }

    pub fn special_id(&self, name: &str) -> Option<u32> {
        self.special_tokens.get(name).copied()
    }

    pub fn is_special(&self, id: u32) -> bool {
        self.special_ids.contains(&id)
    }

    pub fn token_bytes(&self, id: u32) -> Result<&[u8]> {
        self.vocab
            .get(id as usize)
            .map(Vec::as_slice)
            .ok_or_else(|| Error::Domain(format!("token id {id} outside vocabulary of {}", self.vocab.len())))
    }

    fn marker(&self, name: &str) -> Result<u32> {
        self.special_id(name)
            .ok_or_else(|| Error::Domain(format!("tokenizer has no {name} marker")))
    }

    pub fn end_id(&self) -> Option<u32> {
        self.special_id(END_MARKER)
    }

    /// Plain-text encoding. Marker spellings in the input are encoded as
    /// ordinary bytes, never as reserved ids.
    pub fn encode(&self, text: &str) -> Vec<u32> {
        let mut out = Vec::new();
        for piece in pretokenize(text) {
            self.encode_piece(piece.as_bytes(), &mut out);
        }
        out
    }

    fn encode_piece(&self, bytes: &[u8], out: &mut Vec<u32>) {
        let mut syms: Vec<u32> = bytes.iter().map(|&b| b as u32).collect();
        while syms.len() > 1 {
            let best = syms
                .windows(2)
                .filter_map(|p| self.ranks.get(&(p[0], p[1])).map(|&r| (r, (p[0], p[1]))))
                .min();
            let Some((rank, pair)) = best else { break };
            syms = merge_pair(&syms, pair, 256 + rank);
        }
        out.extend(syms);
    }

    pub fn decode_bytes(&self, ids: &[u32]) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.token_bytes(id)?);
        }
        Ok(out)
    }

    /// Batch decode; invalid UTF-8 is replaced with U+FFFD.
    pub fn decode(&self, ids: &[u32]) -> Result<String> {
        Ok(String::from_utf8_lossy(&self.decode_bytes(ids)?).into_owned())
    }

    pub fn streaming_decoder(&self) -> StreamingDecoder<'_> {
        StreamingDecoder {
            tokenizer: self,
            pending: Vec::new(),
        }
    }

    /// Serialises the chat template; with `add_generation_prefix` the
    /// sequence ends on an opening assistant marker.
    pub fn render_chat(&self, transcript: &ChatTranscript, add_generation_prefix: bool) -> Result<Vec<u32>> {
        transcript.validate()?;
        let user = self.marker(USER_MARKER)?;
        let assistant = self.marker(ASSISTANT_MARKER)?;
        let end = self.marker(END_MARKER)?;
        if add_generation_prefix && transcript.turns.last().map(|t| t.role) == Some(Role::Assistant) {
            return Err(Error::Domain("generation prefix must follow a user turn".into()));
        }
        let mut out = Vec::new();
        for turn in &transcript.turns {
            out.push(match turn.role {
                Role::User => user,
                Role::Assistant => assistant,
            });
            out.extend(self.encode(&turn.text));
            out.push(end);
        }
        if add_generation_prefix {
            out.push(assistant);
        }
        Ok(out)
    }

    pub fn to_json(&self) -> Result<String> {
        let file = TokenizerFile {
            version: TOKENIZER_FILE_VERSION,
            vocab: self
                .vocab
                .iter()
                .enumerate()
                .map(|(i, b)| (i as u32, BASE64.encode(b)))
                .collect(),
            merges: self.merges.clone(),
            special_tokens: self.special_tokens.clone(),
        };
        Ok(serde_json::to_string(&file)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: TokenizerFile = serde_json::from_str(text)?;
        if file.version != TOKENIZER_FILE_VERSION {
            return Err(Error::Format(format!("unsupported tokenizer version {}", file.version)));
        }
        let n = file.vocab.len();
        let mut vocab = Vec::with_capacity(n);
        for (expected, (id, b64)) in file.vocab.iter().enumerate() {
            if *id as usize != expected {
                return Err(Error::Integrity(format!("vocab ids are not dense at {expected}")));
            }
            vocab.push(
                BASE64
                    .decode(b64)
                    .map_err(|e| Error::Format(format!("vocab entry {id}: {e}")))?,
            );
        }
        let n_special = file.special_tokens.len();
        if n < 256 + file.merges.len() + n_special {
            return Err(Error::Integrity("vocabulary smaller than bytes + merges + specials".into()));
        }
        for (i, v) in vocab.iter().take(256).enumerate() {
            if v.as_slice() != [i as u8] {
                return Err(Error::Integrity(format!("id {i} is not the raw byte {i}")));
            }
        }
        let merge_end = 256 + file.merges.len();
        for (r, &(a, b)) in file.merges.iter().enumerate() {
            let id = 256 + r;
            if a as usize >= id || b as usize >= id {
                return Err(Error::Integrity(format!("merge {r} references a later id")));
            }
            let mut joined = vocab[a as usize].clone();
            joined.extend_from_slice(&vocab[b as usize]);
            if joined != vocab[id] {
                return Err(Error::Integrity(format!("merge {r} does not produce vocab entry {id}")));
            }
        }
        if merge_end + n_special != n {
            return Err(Error::Integrity("unexpected entries after the merge table".into()));
        }
        let mut by_id: Vec<(u32, &String)> = file.special_tokens.iter().map(|(k, v)| (*v, k)).collect();
        by_id.sort();
        for (offset, (id, name)) in by_id.iter().enumerate() {
            if *id as usize != merge_end + offset || vocab[*id as usize] != name.as_bytes() {
                return Err(Error::Integrity(format!("special token {name} has inconsistent id {id}")));
            }
        }
        let specials: Vec<&str> = by_id.iter().map(|(_, n)| n.as_str()).collect();
        vocab.truncate(merge_end);
        Self::from_parts(vocab, file.merges, &specials)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }
}

/// Incremental detokenizer that withholds incomplete UTF-8 sequences until
/// the remaining bytes arrive.
#[derive(Debug)]
pub struct StreamingDecoder<'a> {
    tokenizer: &'a TokenizerModel,
    pending: Vec<u8>,
}

impl StreamingDecoder<'_> {
    /// Returns the newly completed text after appending `id`.
    pub fn push(&mut self, id: u32) -> Result<String> {
        self.pending.extend_from_slice(self.tokenizer.token_bytes(id)?);
        let mut out = String::new();
        loop {
            match std::str::from_utf8(&self.pending) {
                Ok(s) => {
                    out.push_str(s);
                    self.pending.clear();
                    break;
                }
                Err(e) => {
                    let valid = e.valid_up_to();
                    out.push_str(std::str::from_utf8(&self.pending[..valid]).expect("validated prefix"));
                    match e.error_len() {
                        None => {
                            self.pending.drain(..valid);
                            break;
                        }
                        Some(bad) => {
                            out.push(char::REPLACEMENT_CHARACTER);
                            self.pending.drain(..valid + bad);
                        }
                    }
                }
            }
        }
        Ok(out)
    }

    pub fn has_pending(&self) -> bool {
        !self.pending.is_empty()
    }

    /// Flushes withheld bytes, replacing an unfinished sequence with U+FFFD.
    pub fn finish(&mut self) -> String {
        let out = String::from_utf8_lossy(&self.pending).into_owned();
        self.pending.clear();
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTurn {
    pub role: Role,
    pub text: String,
}

/// Alternating user/assistant turns, starting with the user.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatTranscript {
    pub turns: Vec<ChatTurn>,
}

impl ChatTranscript {
    pub fn single(query: impl Into<String>) -> Self {
        Self {
            turns: vec![ChatTurn {
                role: Role::User,
                text: query.into(),
            }],
        }
    }

    pub fn push(&mut self, role: Role, text: impl Into<String>) -> &mut Self {
        self.turns.push(ChatTurn { role, text: text.into() });
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.turns.is_empty() {
            return Err(Error::Domain("transcript has no turns".into()));
        }
        for (i, turn) in self.turns.iter().enumerate() {
            let expected = if i % 2 == 0 { Role::User } else { Role::Assistant };
            if turn.role != expected {
                return Err(Error::Domain(format!("turn {i} should be {expected:?}, found {:?}", turn.role)));
            }
            if turn.text.is_empty() {
                return Err(Error::Domain(format!("turn {i} is empty")));
            }
        }
        Ok(())
    }
}
