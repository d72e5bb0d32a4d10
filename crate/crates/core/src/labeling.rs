//! IQ-token label augmentation.
//!
//! A deterministic longest-match slot grammar finds the spans of semantic
//! slots in a transcript. The closing position of every slot, plus every pause
//! inside the utterance, becomes an insertion point for `<intended>` (intended
//! utterances) or `<unintended>` (unintended utterances, which also get one at
//! the end).

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Intent, TokenId, Utterance, Vocabulary};
use crate::error::{Error, Result};

/// Pauses shorter than this many frames do not count as a silence boundary.
pub const MIN_SILENCE_FRAMES: usize = 8;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SlotSpan {
    pub slot_name: String,
    pub start_token: usize,
    /// Exclusive.
    pub end_token: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum PatternItem {
    Word(TokenId),
    Slot { optional: bool },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SlotRule {
    pattern: Vec<PatternItem>,
    pub slot_name: String,
    /// Slot values, longest first.
    values: Vec<Vec<TokenId>>,
}

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct SlotGrammar {
    pub rules: Vec<SlotRule>,
}

impl SlotGrammar {
    /// Adds a rule such as `"play <media_object>"` or `"snooze alarm [<time_label>]"`.
    /// Exactly one slot placeholder per pattern; brackets make it optional.
    pub fn add_rule(&mut self, vocab: &Vocabulary, pattern: &str, values: &[&str]) -> Result<&mut Self> {
        let mut items = Vec::new();
        let mut slot_name = None;
        for w in pattern.split_whitespace() {
            let (inner, optional) = match w.strip_prefix('[').and_then(|r| r.strip_suffix(']')) {
                Some(inner) => (inner, true),
                None => (w, false),
            };
            if let Some(name) = inner.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
                if slot_name.replace(name.to_string()).is_some() {
                    return Err(Error::arg(format!("rule {pattern:?} has more than one slot")));
                }
                items.push(PatternItem::Slot { optional });
            } else if optional {
                return Err(Error::arg(format!("rule {pattern:?}: only slots may be optional")));
            } else {
                let id = vocab
                    .id(inner)
                    .filter(|&i| vocab.is_wordpiece(i))
                    .ok_or_else(|| Error::arg(format!("rule {pattern:?}: unknown word {inner:?}")))?;
                items.push(PatternItem::Word(id));
            }
        }
        let slot_name = slot_name.ok_or_else(|| Error::arg(format!("rule {pattern:?} has no slot")))?;
        if values.is_empty() {
            return Err(Error::arg(format!("slot {slot_name} has an empty vocabulary")));
        }
        let mut encoded = values
            .iter()
            .map(|v| {
                let words: Vec<&str> = v.split_whitespace().collect();
                if words.is_empty() {
                    return Err(Error::arg(format!("slot {slot_name} has an empty value")));
                }
                vocab.encode(&words)
            })
            .collect::<Result<Vec<_>>>()?;
        // Stable: equal-length values keep their listed order.
        encoded.sort_by_key(|v| std::cmp::Reverse(v.len()));
        if self.rules.iter().any(|r| r.pattern == items && r.slot_name == slot_name) {
            return Err(Error::arg(format!("duplicate rule {pattern:?}")));
        }
        self.rules.push(SlotRule {
            pattern: items,
            slot_name,
            values: encoded,
        });
        Ok(self)
    }

    /// Grammar matching the default intended domains.
    pub fn bundled(vocab: &Vocabulary) -> Result<Self> {
        let mut g = SlotGrammar::default();
        g.add_rule(vocab, "play <media_object>", &["jazz", "this song", "some music", "the news"])?
            .add_rule(vocab, "<alarm_action>", &["snooze alarm", "stop the alarm"])?
            .add_rule(vocab, "set an alarm for <time_label>", &["8:00", "7:00", "noon"])?
            .add_rule(vocab, "call <contact>", &["mom", "john", "the office"])?
            .add_rule(vocab, "how many <unit>", &["metres", "feet"])?
            .add_rule(vocab, "why is <fact_subject>", &["the sky blue"])?
            .add_rule(vocab, "what is <fact_topic>", &["the weather", "the time"])?
            .add_rule(vocab, "<undo_action>", &["undo that", "cancel that"])?;
        Ok(g)
    }
}

impl SlotRule {
    /// Length of the match at `pos` and the slot span it yields, if any.
    fn match_at(&self, tokens: &[TokenId], pos: usize) -> Option<(usize, Option<(usize, usize)>)> {
        fn go(
            rule: &SlotRule,
            item: usize,
            tokens: &[TokenId],
            pos: usize,
            span: Option<(usize, usize)>,
        ) -> Option<(usize, Option<(usize, usize)>)> {
            let Some(it) = rule.pattern.get(item) else {
                return Some((pos, span));
            };
            match *it {
                PatternItem::Word(w) => (tokens.get(pos) == Some(&w))
                    .then(|| go(rule, item + 1, tokens, pos + 1, span))
                    .flatten(),
                PatternItem::Slot { optional } => {
                    for v in &rule.values {
                        if tokens.get(pos..pos + v.len()) == Some(v.as_slice()) {
                            if let Some(m) = go(rule, item + 1, tokens, pos + v.len(), Some((pos, pos + v.len()))) {
                                return Some(m);
                            }
                        }
                    }
                    if optional {
                        go(rule, item + 1, tokens, pos, span)
                    } else {
                        None
                    }
                }
            }
        }
        go(self, 0, tokens, pos, None).map(|(end, span)| (end - pos, span))
    }
}

/// Left-to-right longest-match parse. At each position the rule with the
/// longest match wins (earliest rule on ties); unmatched tokens are skipped.
pub fn parse_slots(transcript: &[TokenId], grammar: &SlotGrammar) -> Vec<SlotSpan> {
    let mut spans = Vec::new();
    let mut pos = 0;
    while pos < transcript.len() {
        let best = grammar
            .rules
            .iter()
            .rev()
            .filter_map(|r| r.match_at(transcript, pos).map(|(len, span)| (len, span, r)))
            .filter(|(len, _, _)| *len > 0)
            .max_by_key(|(len, _, _)| *len);
        match best {
            Some((len, span, rule)) => {
                if let Some((s, e)) = span {
                    spans.push(SlotSpan {
                        slot_name: rule.slot_name.clone(),
                        start_token: s,
                        end_token: e,
                    });
                }
                pos += len;
            }
            None => pos += 1,
        }
    }
    spans
}

/// Why an item sits where it does in an augmented sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Wordpiece,
    SlotClose,
    Silence,
    UtteranceEnd,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AugmentedLabelSequence {
    pub items: Vec<(TokenId, Origin)>,
    pub intent: Intent,
}

impl AugmentedLabelSequence {
    pub fn ids(&self) -> Vec<TokenId> {
        self.items.iter().map(|(t, _)| *t).collect()
    }

    pub fn wordpieces(&self) -> Vec<TokenId> {
        self.items
            .iter()
            .filter(|(_, o)| *o == Origin::Wordpiece)
            .map(|(t, _)| *t)
            .collect()
    }

    /// Rebuilds provenance for a stored id sequence (IQ tokens are tagged by
    /// position only, so slot/silence provenance is not recoverable).
    pub fn from_ids(ids: &[TokenId], intent: Intent, vocab: &Vocabulary) -> Result<Self> {
        let mut items = Vec::with_capacity(ids.len());
        for (k, &id) in ids.iter().enumerate() {
            if id == vocab.blank_id || id >= vocab.len() {
                return Err(Error::arg(format!("augmented sequence holds invalid id {id}")));
            }
            let origin = if !vocab.is_iq(id) {
                Origin::Wordpiece
            } else if k + 1 == ids.len() {
                Origin::UtteranceEnd
            } else {
                Origin::Silence
            };
            items.push((id, origin));
        }
        Ok(AugmentedLabelSequence { items, intent })
    }
}

/// Inserts IQ tokens after slot closings and at pauses.
///
/// `silence_boundaries` are token-gap indices (count of preceding tokens) of
/// internal pauses. Unintended utterances also receive a token at the end;
/// intended ones receive one at the end only when nothing else was inserted.
pub fn insert_iq_tokens(
    transcript: &[TokenId],
    slots: &[SlotSpan],
    silence_boundaries: &[usize],
    intent: Intent,
    vocab: &Vocabulary,
) -> Result<AugmentedLabelSequence> {
    let n = transcript.len();
    if n == 0 {
        return Err(Error::arg("cannot augment an empty transcript"));
    }
    let mut sorted: Vec<&SlotSpan> = slots.iter().collect();
    sorted.sort_by_key(|s| (s.start_token, s.end_token));
    let mut prev_end = 0;
    for s in &sorted {
        if s.start_token >= s.end_token || s.end_token > n {
            return Err(Error::arg(format!(
                "slot {} span [{}, {}) invalid for {n} tokens",
                s.slot_name, s.start_token, s.end_token
            )));
        }
        if s.start_token < prev_end {
            return Err(Error::arg(format!("slot {} overlaps a previous slot", s.slot_name)));
        }
        prev_end = s.end_token;
    }
    if let Some(&g) = silence_boundaries.iter().find(|&&g| g == 0 || g >= n) {
        return Err(Error::arg(format!("silence boundary {g} is not inside a {n}-token transcript")));
    }

    // Gap index → origin; a BTreeMap keeps one insertion per gap.
    let mut points: BTreeMap<usize, Origin> = BTreeMap::new();
    for &g in silence_boundaries {
        points.insert(g, Origin::Silence);
    }
    match intent {
        Intent::Intended => {
            for s in &sorted {
                points.insert(s.end_token, Origin::SlotClose);
            }
            if points.is_empty() {
                points.insert(n, Origin::UtteranceEnd);
            }
        }
        Intent::Unintended => {
            points.insert(n, Origin::UtteranceEnd);
        }
    }
    let iq = vocab.iq_token(intent);
    let mut items = Vec::with_capacity(n + points.len());
    for (i, &tok) in transcript.iter().enumerate() {
        items.push((tok, Origin::Wordpiece));
        if let Some(&o) = points.get(&(i + 1)) {
            items.push((iq, o));
        }
    }
    Ok(AugmentedLabelSequence { items, intent })
}

/// Targets for the two training stages: wordpieces only, or the full augmented sequence.
pub fn to_training_targets(aug: &AugmentedLabelSequence, include_iq: bool) -> Result<Vec<TokenId>> {
    if aug.items.is_empty() {
        return Err(Error::arg("empty label sequence"));
    }
    Ok(if include_iq { aug.ids() } else { aug.wordpieces() })
}

/// Full labeling of one corpus utterance with the given grammar.
pub fn augment_utterance(utt: &Utterance, grammar: &SlotGrammar, vocab: &Vocabulary) -> Result<AugmentedLabelSequence> {
    let slots = match utt.intent {
        Intent::Intended => parse_slots(&utt.transcript, grammar),
        Intent::Unintended => Vec::new(),
    };
    let silences = utt.silence_boundaries(MIN_SILENCE_FRAMES);
    insert_iq_tokens(&utt.transcript, &slots, &silences, utt.intent, vocab)
}
