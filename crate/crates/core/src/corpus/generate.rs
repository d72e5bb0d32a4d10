use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};
use rayon::prelude::*;

use super::{parse_template, Corpus, CorpusSpec, DomainTemplate, Intent, TemplateItem, TokenId, Utterance, Vocabulary};
use crate::error::{Error, Result};
use crate::labeling::SlotSpan;
use crate::numkernel::Matrix;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Independent generator for `(seed, stream, index)`.
pub(crate) fn derived_rng(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(mix(seed) ^ stream) ^ index))
}

/// Fixed unit-norm mean vector per token id.
#[derive(Debug, Clone, PartialEq)]
pub struct TokenMeans {
    means: Matrix,
}

impl TokenMeans {
    pub fn new(seed: u64, vocab_len: usize, dim: usize) -> Self {
        let mut means = Matrix::zeros(vocab_len, dim);
        for k in 0..vocab_len {
            let mut rng = derived_rng(seed, u64::MAX, k as u64);
            let row = means.row_mut(k);
            for v in row.iter_mut() {
                *v = StandardNormal.sample(&mut rng);
            }
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-12);
            row.iter_mut().for_each(|v| *v /= norm);
        }
        TokenMeans { means }
    }

    pub fn mean(&self, token: TokenId) -> &[f64] {
        self.means.row(token)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedFeatures {
    pub features: Matrix,
    pub silence_segments: Vec<(usize, usize)>,
    pub start_of_speech_frame: usize,
    pub token_alignment: Vec<(usize, usize)>,
}

/// Lays out silences and token durations, then fills frames with mean + noise.
///
/// `phrase_breaks` are token-gap indices (count of preceding tokens) where a
/// pause may be inserted with probability `spec.silence_insertion_prob`.
pub fn render_features(
    transcript: &[TokenId],
    phrase_breaks: &[usize],
    domain: &DomainTemplate,
    spec: &CorpusSpec,
    means: &TokenMeans,
    rng: &mut ChaCha8Rng,
) -> Result<RenderedFeatures> {
    if transcript.is_empty() {
        return Err(Error::arg("cannot render an empty transcript"));
    }
    let range = |rng: &mut ChaCha8Rng, (lo, hi): (usize, usize)| rng.random_range(lo..=hi);

    let mut silence_segments = Vec::new();
    let mut token_alignment = Vec::with_capacity(transcript.len());
    let mut frame = 0;
    let lead = range(rng, spec.leading_silence_frames);
    if lead > 0 {
        silence_segments.push((0, lead));
        frame = lead;
    }
    for i in 0..transcript.len() {
        if i > 0 && phrase_breaks.contains(&i) && rng.random::<f64>() < spec.silence_insertion_prob {
            let pause = range(rng, spec.pause_frames);
            if pause > 0 {
                silence_segments.push((frame, frame + pause));
                frame += pause;
            }
        }
        let d = range(rng, domain.tempo_frames);
        token_alignment.push((frame, frame + d));
        frame += d;
    }
    let trail = range(rng, spec.trailing_silence_frames);
    if trail > 0 {
        silence_segments.push((frame, frame + trail));
        frame += trail;
    }

    let dim = spec.feature_dim;
    let mut features = Matrix::zeros(frame, dim);
    for (&tok, &(s, e)) in transcript.iter().zip(&token_alignment) {
        for t in s..e {
            features.row_mut(t).copy_from_slice(means.mean(tok));
        }
    }
    if spec.noise_sigma > 0.0 {
        let noise = Normal::new(0.0, spec.noise_sigma).map_err(|e| Error::arg(e.to_string()))?;
        for v in features.data_mut() {
            *v += noise.sample(rng);
        }
    }
    // Stored on disk as f32; keep memory and disk identical.
    for v in features.data_mut() {
        *v = *v as f32 as f64;
    }
    let start_of_speech_frame = token_alignment[0].0;
    Ok(RenderedFeatures {
        features,
        silence_segments,
        start_of_speech_frame,
        token_alignment,
    })
}

struct Instantiated {
    tokens: Vec<TokenId>,
    slots: Vec<SlotSpan>,
    breaks: Vec<usize>,
}

fn instantiate(template: &str, domain: &DomainTemplate, vocab: &Vocabulary, rng: &mut ChaCha8Rng) -> Result<Instantiated> {
    let mut out = Instantiated {
        tokens: Vec::new(),
        slots: Vec::new(),
        breaks: Vec::new(),
    };
    let lookup = |w: &str| vocab.id(w).ok_or_else(|| Error::arg(format!("token {w:?} not in vocabulary")));
    for item in parse_template(template) {
        let is_slot = matches!(item, TemplateItem::Slot(_));
        match item {
            TemplateItem::Word(w) => out.tokens.push(lookup(&w)?),
            TemplateItem::Break => {
                if !out.tokens.is_empty() {
                    out.breaks.push(out.tokens.len());
                }
            }
            TemplateItem::Slot(name) | TemplateItem::Filler(name) => {
                let values = domain
                    .fillers
                    .get(&name)
                    .filter(|v| !v.is_empty())
                    .ok_or_else(|| Error::arg(format!("domain {}: no filler named {name:?}", domain.name)))?;
                let value = &values[rng.random_range(0..values.len())];
                let start = out.tokens.len();
                for w in value.split_whitespace() {
                    out.tokens.push(lookup(w)?);
                }
                if is_slot {
                    out.slots.push(SlotSpan {
                        slot_name: name,
                        start_token: start,
                        end_token: out.tokens.len(),
                    });
                }
            }
        }
    }
    Ok(out)
}

fn generate_one(spec: &CorpusSpec, vocab: &Vocabulary, means: &TokenMeans, index: usize) -> Result<Utterance> {
    let intent = if index < spec.n_intended {
        Intent::Intended
    } else {
        Intent::Unintended
    };
    let mut rng = derived_rng(spec.seed, spec.stream, index as u64);
    let domains = match intent {
        Intent::Intended => &spec.intended_domains,
        Intent::Unintended => &spec.unintended_domains,
    };
    let domain = &domains[rng.random_range(0..domains.len())];
    let template = &domain.templates[rng.random_range(0..domain.templates.len())];
    let inst = instantiate(template, domain, vocab, &mut rng)?;
    let r = render_features(&inst.tokens, &inst.breaks, domain, spec, means, &mut rng)?;
    Ok(Utterance {
        id: format!("{}-{index:05}", spec.id_prefix),
        domain: domain.name.clone(),
        intent,
        transcript: inst.tokens,
        features: r.features,
        silence_segments: r.silence_segments,
        start_of_speech_frame: r.start_of_speech_frame,
        token_alignment: r.token_alignment,
        slots: inst.slots,
        augmented_targets: None,
    })
}

/// Deterministic in `spec`: utterance `i` depends only on `(seed, stream, i)`.
/// The first `n_intended` utterances are intended, the rest unintended.
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Corpus> {
    spec.validate()?;
    let vocab = spec.vocabulary()?;
    let means = TokenMeans::new(spec.seed, vocab.len(), spec.feature_dim);
    let total = spec.n_intended + spec.n_unintended;
    let utterances = (0..total)
        .into_par_iter()
        .map(|i| generate_one(spec, &vocab, &means, i))
        .collect::<Result<Vec<_>>>()?;
    Ok(Corpus { vocab, utterances })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec() -> CorpusSpec {
        CorpusSpec {
            n_intended: 10,
            n_unintended: 5,
            ..Default::default()
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let a = generate_corpus(&small_spec()).unwrap();
        let b = generate_corpus(&small_spec()).unwrap();
        assert_eq!(a, b);
        let bytes = |c: &Corpus| -> Vec<u64> {
            c.utterances
                .iter()
                .flat_map(|u| u.features.data().iter().map(|v| v.to_bits()))
                .collect()
        };
        assert_eq!(bytes(&a), bytes(&b));
    }

    #[test]
    fn class_counts_match_spec() {
        let c = generate_corpus(&small_spec()).unwrap();
        assert_eq!(c.utterances.len(), 15);
        assert_eq!(c.count(Intent::Intended), 10);
        assert_eq!(c.count(Intent::Unintended), 5);
    }

    #[test]
    fn utterances_satisfy_frame_invariants() {
        let spec = CorpusSpec {
            n_intended: 200,
            n_unintended: 200,
            ..Default::default()
        };
        let c = generate_corpus(&spec).unwrap();
        for u in &c.utterances {
            u.check().unwrap();
            let speech: usize = u.token_alignment.iter().map(|(s, e)| e - s).sum();
            let silence: usize = u.silence_segments.iter().map(|(s, e)| e - s).sum();
            assert_eq!(speech + silence, u.num_frames());
            let (lo, hi) = spec.domain(&u.domain).unwrap().0.tempo_frames;
            assert!(u.token_alignment.iter().all(|(s, e)| (lo..=hi).contains(&(e - s))));
            if u.intent == Intent::Intended {
                assert!(!u.slots.is_empty(), "{} has no slot", u.id);
            } else {
                assert!(u.slots.is_empty());
            }
        }
    }

    #[test]
    fn noiseless_frames_equal_token_means() {
        let spec = CorpusSpec {
            noise_sigma: 0.0,
            ..small_spec()
        };
        let c = generate_corpus(&spec).unwrap();
        let means = TokenMeans::new(spec.seed, c.vocab.len(), spec.feature_dim);
        for u in &c.utterances {
            for (&tok, &(s, e)) in u.transcript.iter().zip(&u.token_alignment) {
                let expect: Vec<f64> = means.mean(tok).iter().map(|v| *v as f32 as f64).collect();
                for t in s..e {
                    assert_eq!(u.features.row(t), expect.as_slice());
                }
            }
            for &(s, e) in &u.silence_segments {
                assert!(u.features.data()[s * spec.feature_dim..e * spec.feature_dim]
                    .iter()
                    .all(|v| *v == 0.0));
            }
        }
    }

    #[test]
    fn fixed_tempo_counts_frames_exactly() {
        let spec = CorpusSpec {
            leading_silence_frames: (0, 0),
            trailing_silence_frames: (0, 0),
            silence_insertion_prob: 0.0,
            ..small_spec()
        };
        let domain = DomainTemplate {
            tempo_frames: (4, 4),
            ..spec.intended_domains[0].clone()
        };
        let means = TokenMeans::new(1, 10, spec.feature_dim);
        let mut rng = derived_rng(1, 0, 0);
        let r = render_features(&[1, 2, 3], &[1, 2], &domain, &spec, &means, &mut rng).unwrap();
        assert_eq!(r.features.rows(), 12);
        assert!(r.silence_segments.is_empty());
        assert_eq!(r.token_alignment, vec![(0, 4), (4, 8), (8, 12)]);
        assert_eq!(r.start_of_speech_frame, 0);
    }

    #[test]
    fn leading_silence_sets_start_of_speech() {
        let spec = CorpusSpec {
            leading_silence_frames: (7, 7),
            ..small_spec()
        };
        let means = TokenMeans::new(1, 10, spec.feature_dim);
        let mut rng = derived_rng(1, 0, 0);
        let r = render_features(&[4, 5], &[], &spec.intended_domains[0], &spec, &means, &mut rng).unwrap();
        assert_eq!(r.start_of_speech_frame, 7);
        assert_eq!(r.silence_segments[0], (0, 7));
        assert!(render_features(&[], &[], &spec.intended_domains[0], &spec, &means, &mut rng).is_err());
    }

    #[test]
    fn token_means_are_unit_norm() {
        let m = TokenMeans::new(42, 20, 16);
        for k in 0..20 {
            let n: f64 = m.mean(k).iter().map(|v| v * v).sum();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn domain_histogram_is_uniform_within_three_sigma() {
        let spec = CorpusSpec {
            n_intended: 10_000,
            n_unintended: 1,
            stream: 7,
            ..Default::default()
        };
        let vocab = spec.vocabulary().unwrap();
        // Domain choice is the first draw of each utterance stream; sample it directly.
        let k = spec.intended_domains.len();
        let mut counts = vec![0usize; k];
        for i in 0..spec.n_intended {
            let mut rng = derived_rng(spec.seed, spec.stream, i as u64);
            counts[rng.random_range(0..k)] += 1;
        }
        // Cross-check the sampled choice against a handful of real generations.
        let means = TokenMeans::new(spec.seed, vocab.len(), spec.feature_dim);
        for i in 0..20 {
            let u = generate_one(&spec, &vocab, &means, i).unwrap();
            let mut rng = derived_rng(spec.seed, spec.stream, i as u64);
            assert_eq!(u.domain, spec.intended_domains[rng.random_range(0..k)].name);
        }
        let n = spec.n_intended as f64;
        let p = 1.0 / k as f64;
        let sigma = (n * p * (1.0 - p)).sqrt();
        for c in counts {
            assert!((c as f64 - n * p).abs() <= 3.0 * sigma, "count {c} vs expectation {}", n * p);
        }
    }

    #[test]
    fn intended_tempo_is_faster() {
        let spec = CorpusSpec {
            n_intended: 1000,
            n_unintended: 1000,
            ..Default::default()
        };
        let c = generate_corpus(&spec).unwrap();
        let mean_rate = |intent| {
            let (mut frames, mut toks) = (0usize, 0usize);
            for u in c.utterances.iter().filter(|u| u.intent == intent) {
                frames += u.token_alignment.iter().map(|(s, e)| e - s).sum::<usize>();
                toks += u.transcript.len();
            }
            frames as f64 / toks as f64
        };
        assert!(mean_rate(Intent::Intended) < mean_rate(Intent::Unintended));
    }
}
