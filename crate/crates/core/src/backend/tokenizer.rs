//! Greedy longest-match word-piece tokenizer for the toy backend.
//!
//! The vocabulary is: `<eos>`, `<unk>`, the blank-line separator, every
//! printable ASCII character plus `\n` and `\t`, and a fixed list of word
//! pieces. Pieces never contain digits or spaces, so numbers are spelled one
//! digit per token and token boundaries always fall on spaces.

use std::collections::HashMap;

pub const EOS: u32 = 0;
pub const UNK: u32 = 1;
pub const SEPARATOR: u32 = 2;
pub const SEPARATOR_TEXT: &str = "\n\n";

pub const MAX_VOCAB: usize = 512;

const WORDS: &str = "
the The a A an of and or to in on at is are was be it its for with by from as that this what What who Who
which Which when how How many much do does did not no yes can will would could should
Question Answer answer Answers question result number numbers value values total
least greatest common multiple divisor factor square root cube power raised exponent logarithm
log natural base remainder divided division divide choose ways way order ordered permutations
permutation combinations combination sum difference product quotient plus minus times multiply
multiplied add added subtract subtracted left over when leaves after take away compute calculate
find Find Compute Calculate items pick arrange select from group equals equal
year years city country river mountain lake island author writer painter singer leader founder
owner member capital language currency winner team club sport award prize school company
official first last main largest highest oldest native birth home place name named
red blue green black white golden silver northern southern eastern western central ancient
royal grand little major minor primary secondary early late old new high low
name title rank label code origin source range border partner rival symbol emblem anthem motto
mascot colour color flag coin seal crest river island port peak
Goal Instruction Plan I am my me want go walk sit read book open close turn on off put
grab take watch drink eat wash work computer desk chair sofa bed novel table television
kitchen bedroom bathroom office living room door window light lamp phone cup glass water
fridge food plate towel sink shirt pillow keyboard mouse mail newspaper faucet toothbrush
cabinet remote control down up lie start reading then some
objects manipulate They sit chair
";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub id: u32,
    /// Byte range in the source text.
    pub start: usize,
    pub end: usize,
}

#[derive(Clone, Debug)]
pub struct ToyTokenizer {
    pieces: Vec<String>,
    index: HashMap<String, u32>,
    max_piece_bytes: usize,
}

impl Default for ToyTokenizer {
    fn default() -> Self {
        Self::with_extra_pieces(&[])
    }
}

impl ToyTokenizer {
    /// Builds the default vocabulary plus `extra` multi-character pieces
    /// (which, unlike built-in pieces, may contain digits).
    pub fn with_extra_pieces(extra: &[&str]) -> Self {
        let mut pieces: Vec<String> = vec!["<eos>".into(), "<unk>".into(), SEPARATOR_TEXT.into()];
        pieces.push("\n".into());
        pieces.push("\t".into());
        pieces.extend((32u8..=126).map(|b| (b as char).to_string()));
        let mut index: HashMap<String, u32> = HashMap::new();
        for (i, p) in pieces.iter().enumerate() {
            if i >= 2 {
                index.insert(p.clone(), i as u32);
            }
        }
        let mut add = |p: &str, pieces: &mut Vec<String>| {
            if pieces.len() < MAX_VOCAB && !index.contains_key(p) {
                index.insert(p.to_string(), pieces.len() as u32);
                pieces.push(p.to_string());
            }
        };
        for p in extra {
            add(p, &mut pieces);
        }
        for w in WORDS.split_whitespace() {
            add(w, &mut pieces);
        }
        let max_piece_bytes = pieces[2..].iter().map(|p| p.len()).max().unwrap_or(1);
        ToyTokenizer {
            pieces,
            index,
            max_piece_bytes,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.pieces.len()
    }

    pub fn piece(&self, id: u32) -> Option<&str> {
        self.pieces.get(id as usize).map(String::as_str)
    }

    pub fn id_of(&self, piece: &str) -> Option<u32> {
        self.index.get(piece).copied()
    }

    pub fn tokenize_with_offsets(&self, text: &str) -> Vec<Token> {
        let mut out = Vec::with_capacity(text.len() / 2);
        let mut pos = 0;
        while pos < text.len() {
            let rest = &text[pos..];
            let mut len = self.max_piece_bytes.min(rest.len());
            let mut found = None;
            while len > 0 {
                if rest.is_char_boundary(len) {
                    if let Some(&id) = self.index.get(&rest[..len]) {
                        found = Some((id, len));
                        break;
                    }
                }
                len -= 1;
            }
            let (id, len) = found.unwrap_or_else(|| {
                let ch = rest.chars().next().expect("non-empty");
                (UNK, ch.len_utf8())
            });
            out.push(Token {
                id,
                start: pos,
                end: pos + len,
            });
            pos += len;
        }
        out
    }

    pub fn tokenize(&self, text: &str) -> Vec<u32> {
        self.tokenize_with_offsets(text).into_iter().map(|t| t.id).collect()
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        let mut s = String::new();
        for &id in ids {
            match id {
                EOS => {}
                UNK => s.push('\u{FFFD}'),
                _ => s.push_str(self.piece(id).unwrap_or("\u{FFFD}")),
            }
        }
        s
    }

    pub fn is_digit(&self, id: u32) -> bool {
        self.piece(id)
            .is_some_and(|p| !p.is_empty() && p.bytes().all(|b| b.is_ascii_digit()))
    }
}
