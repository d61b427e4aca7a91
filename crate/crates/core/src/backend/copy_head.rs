//! Structural induction head for the toy backend.
//!
//! The head aligns the current position with an earlier occurrence of the
//! same context ("anchor") and predicts what followed there. When the token
//! that followed in the earlier episode was itself a copy of something from
//! that episode's own text, the head copies the analogous span from the
//! current episode instead. This is what lets an untrained toy model complete
//! `[tool](` with the operands of the current question after seeing a few
//! demonstrations.
//!
//! Comparisons for anchoring and left-context alignment treat every number
//! (digit run, optionally with one inner decimal point) as a single symbol.
//! Episodes are delimited by the blank-line separator token.

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Sym {
    Tok(u32),
    Num,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
struct Unit {
    sym: Sym,
    start: usize,
    end: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Align {
    Free,
    /// Current position corresponds to `demo`.
    Aligned {
        demo: usize,
    },
    /// Current token was copied from `cursor`; `demo` was a copy of `source`.
    Copy {
        demo: usize,
        source: usize,
        cursor: usize,
    },
}

#[derive(Clone, Debug)]
pub struct CopyHead {
    is_digit: Vec<bool>,
    dot: Option<u32>,
    separator: u32,
    min_anchor: usize,
    max_match: usize,
}

impl CopyHead {
    pub fn new(is_digit: Vec<bool>, dot: Option<u32>, separator: u32) -> Self {
        CopyHead {
            is_digit,
            dot,
            separator,
            min_anchor: 3,
            max_match: 64,
        }
    }

    pub fn start(&self) -> CopyTrace {
        CopyTrace::default()
    }

    fn digit(&self, id: u32) -> bool {
        self.is_digit.get(id as usize).copied().unwrap_or(false)
    }
}

/// Per-context state of the head; grows one token at a time.
#[derive(Clone, Debug, Default)]
pub struct CopyTrace {
    tokens: Vec<u32>,
    unit_of: Vec<usize>,
    units: Vec<Unit>,
    episode: Vec<usize>,
    align: Vec<Align>,
    pred: Vec<Option<(u32, Align)>>,
}

impl CopyTrace {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Appends a token and returns the head's prediction for the next one.
    pub fn push(&mut self, head: &CopyHead, token: u32) -> Option<u32> {
        let i = self.tokens.len();
        self.tokens.push(token);
        self.extend_units(head, token, i);
        let prev_episode = if i == 0 { 0 } else { self.episode[i - 1] };
        let prev_is_sep = i > 0 && self.tokens[i - 1] == head.separator;
        self.episode.push(if prev_is_sep { i } else { prev_episode });

        let followed = match i.checked_sub(1).and_then(|p| self.pred[p]) {
            Some((tok, next)) if tok == token => Some(next),
            _ => None,
        };
        let align = followed.unwrap_or_else(|| self.anchor(head, i));
        self.align.push(align);
        let pred = self.predict(head, i);
        self.pred.push(pred);
        pred.map(|(t, _)| t)
    }

    fn extend_units(&mut self, head: &CopyHead, token: u32, i: usize) {
        if head.digit(token) {
            if let Some(last) = self.units.last_mut() {
                if last.sym == Sym::Num && last.end + 1 == i {
                    last.end = i;
                    self.unit_of.push(self.units.len() - 1);
                    return;
                }
            }
            let n = self.units.len();
            if n >= 2
                && Some(self.tokens[i - 1]) == head.dot
                && self.units[n - 1].sym == Sym::Tok(self.tokens[i - 1])
                && self.units[n - 2].sym == Sym::Num
                && self.units[n - 2].end + 2 == i
            {
                self.units.pop();
                let num = self.units.len() - 1;
                self.units[num].end = i;
                self.unit_of[i - 1] = num;
                self.unit_of.push(num);
                return;
            }
            self.units.push(Unit {
                sym: Sym::Num,
                start: i,
                end: i,
            });
        } else {
            self.units.push(Unit {
                sym: Sym::Tok(token),
                start: i,
                end: i,
            });
        }
        self.unit_of.push(self.units.len() - 1);
    }

    /// Longest unit-level suffix match ending before the current unit.
    fn anchor(&self, head: &CopyHead, _i: usize) -> Align {
        let u = self.units.len() - 1;
        let mut best_len = 0;
        let mut best = None;
        for v in (0..u).rev() {
            if self.units[v].sym != self.units[u].sym {
                continue;
            }
            let len = self.suffix_match(u, v, head.max_match);
            if len > best_len {
                best_len = len;
                best = Some(v);
            }
        }
        match best {
            Some(v) if best_len >= head.min_anchor => Align::Aligned {
                demo: self.units[v].end,
            },
            _ => Align::Free,
        }
    }

    fn suffix_match(&self, a: usize, b: usize, cap: usize) -> usize {
        let mut k = 0;
        while k < cap && k <= b && self.units[a - k].sym == self.units[b - k].sym {
            k += 1;
        }
        k
    }

    /// Unit-level match of the contexts strictly before units `a` and `b`.
    fn left_match(&self, a: usize, b: usize, cap: usize) -> usize {
        let mut k = 0;
        while k < cap && k < a && k < b && self.units[a - 1 - k].sym == self.units[b - 1 - k].sym {
            k += 1;
        }
        k
    }

    fn unit_tokens(&self, pos: usize) -> &[u32] {
        let u = self.units[self.unit_of[pos]];
        &self.tokens[u.start..=u.end]
    }

    fn is_unit_start(&self, pos: usize) -> bool {
        self.units[self.unit_of[pos]].start == pos
    }

    fn predict(&self, head: &CopyHead, i: usize) -> Option<(u32, Align)> {
        match self.align[i] {
            Align::Free => None,
            Align::Aligned { demo } => self.predict_aligned(head, i, demo),
            Align::Copy { demo, source, cursor } => self.predict_copy(i, demo, source, cursor),
        }
    }

    fn predict_aligned(&self, head: &CopyHead, i: usize, j: usize) -> Option<(u32, Align)> {
        let next = j + 1;
        if next > i {
            return None;
        }
        let y = self.tokens[next];
        let literal = Some((y, Align::Aligned { demo: next }));
        if self.episode[j] == self.episode[i] || y == head.separator {
            return literal;
        }
        let demo_lo = self.episode[j];
        let cur_lo = self.episode[i];
        // (agreement, left match, source, cursor)
        let mut best: Option<(usize, usize, usize, usize)> = None;
        for p in demo_lo..=j {
            if self.tokens[p] != y || !self.is_unit_start(p) {
                continue;
            }
            let mut m = 0;
            while next + m < i && p + m + 1 < next && self.tokens[next + m + 1] == self.tokens[p + m + 1] {
                m += 1;
            }
            for q in cur_lo..=i {
                if !self.is_unit_start(q) {
                    continue;
                }
                let l = self.left_match(self.unit_of[p], self.unit_of[q], 32);
                if l < 2 {
                    continue;
                }
                let better = match best {
                    None => true,
                    Some((bm, bl, _, _)) => (m, l) > (bm, bl),
                };
                if better {
                    best = Some((m, l, p, q));
                }
            }
        }
        match best {
            Some((m, _, p, q)) if m >= 1 || self.unit_tokens(p) != self.unit_tokens(q) => Some((
                self.tokens[q],
                Align::Copy {
                    demo: next,
                    source: p,
                    cursor: q,
                },
            )),
            _ => literal,
        }
    }

    fn predict_copy(&self, i: usize, j: usize, p: usize, q: usize) -> Option<(u32, Align)> {
        let mut m = 0;
        while j + m < i && p + m + 1 < j && self.tokens[j + m + 1] == self.tokens[p + m + 1] {
            m += 1;
        }
        let s_term = p + m + 1;
        let c_post = j + m + 1;
        if s_term >= j || c_post > i || q + 1 > i {
            return None;
        }
        if self.tokens[q + 1] == self.tokens[s_term] {
            Some((self.tokens[c_post], Align::Aligned { demo: c_post }))
        } else {
            let step = usize::from(m > 0);
            Some((
                self.tokens[q + 1],
                Align::Copy {
                    demo: j + step,
                    source: p + step,
                    cursor: q + 1,
                },
            ))
        }
    }
}
