//! Synthetic intended/unintended utterance corpora.
//!
//! Each utterance is rendered from a domain template: tokens become runs of
//! noisy frames around a per-token mean vector, separated by optional pauses.
//! Intended domains speak faster than unintended ones, and the two classes
//! share part of their vocabulary.

mod domains;
mod generate;
mod io;

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::labeling::SlotSpan;
use crate::numkernel::Matrix;

pub use domains::{default_intended_domains, default_unintended_domains};
pub use generate::{generate_corpus, render_features, RenderedFeatures, TokenMeans};
pub use io::{read_corpus, read_feature_file, write_corpus, write_feature_file, FEATURE_MAGIC};

pub type TokenId = usize;

pub const BLANK: &str = "<blank>";
pub const INTENDED: &str = "<intended>";
pub const UNINTENDED: &str = "<unintended>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Intent {
    Intended,
    Unintended,
}

impl Intent {
    pub fn as_str(self) -> &'static str {
        match self {
            Intent::Intended => "intended",
            Intent::Unintended => "unintended",
        }
    }
}

impl std::str::FromStr for Intent {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "intended" => Ok(Intent::Intended),
            "unintended" => Ok(Intent::Unintended),
            other => Err(format!("unknown intent {other:?}")),
        }
    }
}

/// Token inventory. Layout: `<blank>` first, then wordpieces, then the two IQ tokens,
/// so ASR joint outputs index `0..asr_size()` and IQ joint outputs add two more.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
    pub blank_id: TokenId,
    pub intended_id: TokenId,
    pub unintended_id: TokenId,
}

impl Vocabulary {
    /// Builds the canonical layout around the given wordpieces (order preserved, duplicates dropped).
    pub fn from_wordpieces<I, S>(words: I) -> Result<Self>
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut tokens = vec![BLANK.to_string()];
        for w in words {
            let w = w.into();
            if [BLANK, INTENDED, UNINTENDED].contains(&w.as_str()) {
                return Err(Error::arg(format!("wordpiece {w:?} collides with a reserved token")));
            }
            if !tokens.contains(&w) {
                tokens.push(w);
            }
        }
        tokens.push(INTENDED.into());
        tokens.push(UNINTENDED.into());
        Self::from_tokens(tokens)
    }

    /// Accepts any ordering as long as the three reserved entries are present exactly once.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i).is_some() {
                return Err(Error::arg(format!("duplicate token {t:?}")));
            }
        }
        let find = |name: &str| {
            index
                .get(name)
                .copied()
                .ok_or_else(|| Error::arg(format!("vocabulary lacks reserved token {name}")))
        };
        let (blank_id, intended_id, unintended_id) = (find(BLANK)?, find(INTENDED)?, find(UNINTENDED)?);
        let vocab = Vocabulary {
            tokens,
            index,
            blank_id,
            intended_id,
            unintended_id,
        };
        if blank_id != 0 || intended_id != vocab.asr_size() || unintended_id != vocab.asr_size() + 1 {
            return Err(Error::arg("vocabulary must place <blank> first and <intended>, <unintended> last"));
        }
        Ok(vocab)
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Output size of the ASR joint: wordpieces plus blank.
    pub fn asr_size(&self) -> usize {
        self.tokens.len() - 2
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn is_wordpiece(&self, id: TokenId) -> bool {
        id != self.blank_id && id != self.intended_id && id != self.unintended_id && id < self.tokens.len()
    }

    pub fn is_iq(&self, id: TokenId) -> bool {
        id == self.intended_id || id == self.unintended_id
    }

    pub fn iq_token(&self, intent: Intent) -> TokenId {
        match intent {
            Intent::Intended => self.intended_id,
            Intent::Unintended => self.unintended_id,
        }
    }

    pub fn encode(&self, words: &[&str]) -> Result<Vec<TokenId>> {
        words
            .iter()
            .map(|w| self.id(w).ok_or_else(|| Error::arg(format!("unknown token {w:?}"))))
            .collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter().map(|&i| self.token(i).unwrap_or("<unk>").to_string()).collect()
    }

    pub fn render(&self, ids: &[TokenId]) -> String {
        self.decode(ids).join(" ")
    }
}

/// One domain of speech: sentence templates plus the filler values they draw from.
///
/// Template syntax: whitespace-separated tokens; `<name>` is a slot filled from
/// `fillers[name]` and recorded as a slot span; `{name}` is a plain filler;
/// `|` marks a phrase boundary where a pause may be inserted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainTemplate {
    pub name: String,
    pub templates: Vec<String>,
    #[serde(default)]
    pub fillers: BTreeMap<String, Vec<String>>,
    /// Inclusive range of frames per token.
    pub tempo_frames: (usize, usize),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum TemplateItem {
    Word(String),
    Slot(String),
    Filler(String),
    Break,
}

pub(crate) fn parse_template(t: &str) -> Vec<TemplateItem> {
    t.split_whitespace()
        .map(|w| {
            if w == "|" {
                TemplateItem::Break
            } else if let Some(name) = w.strip_prefix('<').and_then(|r| r.strip_suffix('>')) {
                TemplateItem::Slot(name.to_string())
            } else if let Some(name) = w.strip_prefix('{').and_then(|r| r.strip_suffix('}')) {
                TemplateItem::Filler(name.to_string())
            } else {
                TemplateItem::Word(w.to_string())
            }
        })
        .collect()
}

impl DomainTemplate {
    pub fn validate(&self, intent: Intent) -> Result<()> {
        let (lo, hi) = self.tempo_frames;
        if lo == 0 || lo > hi {
            return Err(Error::arg(format!("domain {}: bad tempo range {:?}", self.name, self.tempo_frames)));
        }
        if self.templates.is_empty() {
            return Err(Error::arg(format!("domain {} has no templates", self.name)));
        }
        for t in &self.templates {
            let items = parse_template(t);
            if !items.iter().any(|i| !matches!(i, TemplateItem::Break)) {
                return Err(Error::arg(format!("domain {}: empty template {t:?}", self.name)));
            }
            for item in items {
                let name = match item {
                    TemplateItem::Slot(n) => {
                        if intent == Intent::Unintended {
                            return Err(Error::arg(format!(
                                "domain {}: slot <{n}> not allowed in an unintended domain",
                                self.name
                            )));
                        }
                        n
                    }
                    TemplateItem::Filler(n) => n,
                    _ => continue,
                };
                match self.fillers.get(&name) {
                    Some(v) if !v.is_empty() && v.iter().all(|s| !s.trim().is_empty()) => {}
                    _ => return Err(Error::arg(format!("domain {}: filler {name:?} missing or empty", self.name))),
                }
            }
        }
        Ok(())
    }

    /// Every token any template of this domain can produce, in first-seen order.
    pub fn words(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        let mut push = |w: &str| {
            if !out.iter().any(|x| x == w) {
                out.push(w.to_string());
            }
        };
        for t in &self.templates {
            for item in parse_template(t) {
                match item {
                    TemplateItem::Word(w) => push(&w),
                    TemplateItem::Slot(n) | TemplateItem::Filler(n) => {
                        for v in self.fillers.get(&n).into_iter().flatten() {
                            v.split_whitespace().for_each(&mut push);
                        }
                    }
                    TemplateItem::Break => {}
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CorpusSpec {
    /// Seeds token identities (mean vectors) and, with `stream`, the utterance draws.
    pub seed: u64,
    /// Independent utterance stream, so train and eval splits share token identities.
    pub stream: u64,
    pub id_prefix: String,
    pub n_intended: usize,
    pub n_unintended: usize,
    pub feature_dim: usize,
    pub frame_period_ms: f64,
    pub intended_domains: Vec<DomainTemplate>,
    pub unintended_domains: Vec<DomainTemplate>,
    pub noise_sigma: f64,
    pub silence_insertion_prob: f64,
    pub leading_silence_frames: (usize, usize),
    pub trailing_silence_frames: (usize, usize),
    pub pause_frames: (usize, usize),
}

impl Default for CorpusSpec {
    fn default() -> Self {
        CorpusSpec {
            seed: 42,
            stream: 0,
            id_prefix: "utt".into(),
            n_intended: 2000,
            n_unintended: 2000,
            feature_dim: 16,
            frame_period_ms: 10.0,
            intended_domains: default_intended_domains(),
            unintended_domains: default_unintended_domains(),
            noise_sigma: 0.25,
            silence_insertion_prob: 0.3,
            leading_silence_frames: (5, 15),
            trailing_silence_frames: (5, 12),
            pause_frames: (8, 14),
        }
    }
}

impl CorpusSpec {
    pub fn validate(&self) -> Result<()> {
        if self.n_intended == 0 || self.n_unintended == 0 {
            return Err(Error::arg("corpus needs at least one utterance of each class"));
        }
        if self.feature_dim == 0 {
            return Err(Error::arg("feature_dim must be positive"));
        }
        if !(self.frame_period_ms > 0.0) {
            return Err(Error::arg("frame_period_ms must be positive"));
        }
        if !(self.noise_sigma >= 0.0) {
            return Err(Error::arg("noise_sigma must be non-negative"));
        }
        if !(0.0..=1.0).contains(&self.silence_insertion_prob) {
            return Err(Error::arg("silence_insertion_prob must lie in [0, 1]"));
        }
        for (name, (lo, hi)) in [
            ("leading_silence_frames", self.leading_silence_frames),
            ("trailing_silence_frames", self.trailing_silence_frames),
            ("pause_frames", self.pause_frames),
        ] {
            if lo > hi {
                return Err(Error::arg(format!("{name}: min {lo} exceeds max {hi}")));
            }
        }
        if self.intended_domains.is_empty() || self.unintended_domains.is_empty() {
            return Err(Error::arg("each class needs at least one domain"));
        }
        for d in &self.intended_domains {
            d.validate(Intent::Intended)?;
        }
        for d in &self.unintended_domains {
            d.validate(Intent::Unintended)?;
        }
        Ok(())
    }

    /// Vocabulary implied by the domains, intended domains first.
    pub fn vocabulary(&self) -> Result<Vocabulary> {
        let words = self
            .intended_domains
            .iter()
            .chain(&self.unintended_domains)
            .flat_map(DomainTemplate::words);
        Vocabulary::from_wordpieces(words)
    }

    pub fn domain(&self, name: &str) -> Option<(&DomainTemplate, Intent)> {
        self.intended_domains
            .iter()
            .map(|d| (d, Intent::Intended))
            .chain(self.unintended_domains.iter().map(|d| (d, Intent::Unintended)))
            .find(|(d, _)| d.name == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Utterance {
    pub id: String,
    pub domain: String,
    pub intent: Intent,
    pub transcript: Vec<TokenId>,
    /// frames × feature_dim; values are exactly representable as `f32`.
    pub features: Matrix,
    /// Half-open `(start, end)` frame ranges.
    pub silence_segments: Vec<(usize, usize)>,
    pub start_of_speech_frame: usize,
    /// Half-open frame range of each transcript token.
    pub token_alignment: Vec<(usize, usize)>,
    /// Slot spans recorded from the template at synthesis time.
    pub slots: Vec<SlotSpan>,
    /// Wordpieces interleaved with IQ tokens, once labeling has run.
    pub augmented_targets: Option<Vec<TokenId>>,
}

impl Utterance {
    pub fn num_frames(&self) -> usize {
        self.features.rows()
    }

    pub fn start_of_speech_ms(&self, frame_period_ms: f64) -> f64 {
        self.start_of_speech_frame as f64 * frame_period_ms
    }

    /// Token-gap indices (number of preceding tokens) of pauses lasting at least
    /// `min_frames` between two tokens.
    pub fn silence_boundaries(&self, min_frames: usize) -> Vec<usize> {
        let mut out = Vec::new();
        for g in 1..self.token_alignment.len() {
            let (prev_end, next_start) = (self.token_alignment[g - 1].1, self.token_alignment[g].0);
            let silent: usize = self
                .silence_segments
                .iter()
                .filter(|(s, e)| *s >= prev_end && *e <= next_start)
                .map(|(s, e)| e - s)
                .sum();
            if silent >= min_frames {
                out.push(g);
            }
        }
        out
    }

    /// Checks the structural invariants tying features, silences and alignment together.
    pub fn check(&self) -> Result<()> {
        let n = self.num_frames();
        let err = |m: String| Err(Error::arg(format!("utterance {}: {m}", self.id)));
        if self.start_of_speech_frame >= n {
            return err(format!("start_of_speech_frame {} >= {n} frames", self.start_of_speech_frame));
        }
        if self.token_alignment.len() != self.transcript.len() {
            return err("alignment length differs from transcript".into());
        }
        let mut covered = vec![0u8; n];
        let mut last = 0;
        for &(s, e) in &self.silence_segments {
            if s >= e || e > n || s < last {
                return err(format!("bad silence segment ({s}, {e})"));
            }
            covered[s..e].iter_mut().for_each(|c| *c += 1);
            last = e;
        }
        last = 0;
        for &(s, e) in &self.token_alignment {
            if s >= e || e > n || s < last {
                return err(format!("bad token alignment ({s}, {e})"));
            }
            covered[s..e].iter_mut().for_each(|c| *c += 1);
            last = e;
        }
        if covered.iter().any(|&c| c != 1) {
            return err("silence and token frames must partition the utterance".into());
        }
        if self.token_alignment.first().map(|a| a.0) != Some(self.start_of_speech_frame) {
            return err("start of speech must be the first token frame".into());
        }
        Ok(())
    }
}

/// A generated or loaded corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub vocab: Vocabulary,
    pub utterances: Vec<Utterance>,
}

impl Corpus {
    pub fn count(&self, intent: Intent) -> usize {
        self.utterances.iter().filter(|u| u.intent == intent).count()
    }
}
