use std::collections::BTreeMap;

use super::DomainTemplate;

fn domain(name: &str, tempo: (usize, usize), templates: &[&str], fillers: &[(&str, &[&str])]) -> DomainTemplate {
    DomainTemplate {
        name: name.into(),
        templates: templates.iter().map(|s| s.to_string()).collect(),
        fillers: fillers
            .iter()
            .map(|(k, v)| (k.to_string(), v.iter().map(|s| s.to_string()).collect()))
            .collect::<BTreeMap<_, _>>(),
        tempo_frames: tempo,
    }
}

const INTENDED_TEMPO: (usize, usize) = (4, 8);
const UNINTENDED_TEMPO: (usize, usize) = (6, 12);

/// Device-directed domains: media, alarm, call, facts, undo.
pub fn default_intended_domains() -> Vec<DomainTemplate> {
    vec![
        domain(
            "media",
            INTENDED_TEMPO,
            &[
                "play <media_object>",
                "play <media_object> | on the speaker",
                "can you play <media_object>",
                "play <media_object> | please",
            ],
            &[("media_object", &["jazz", "this song", "some music", "the news"])],
        ),
        domain(
            "alarm",
            INTENDED_TEMPO,
            &[
                "<alarm_action>",
                "<alarm_action> | at {clock}",
                "set an alarm for <time_label>",
                "<alarm_action> | please",
            ],
            &[
                ("alarm_action", &["snooze alarm", "stop the alarm"]),
                ("clock", &["8:00", "7:00", "noon"]),
                ("time_label", &["8:00", "7:00", "noon"]),
            ],
        ),
        domain(
            "call",
            INTENDED_TEMPO,
            &["call <contact>", "call <contact> | on the speaker", "can you call <contact>"],
            &[("contact", &["mom", "john", "the office"])],
        ),
        domain(
            "facts",
            INTENDED_TEMPO,
            &[
                "how many <unit> | in a mile",
                "why is <fact_subject>",
                "what is <fact_topic> | today",
            ],
            &[
                ("unit", &["metres", "feet"]),
                ("fact_subject", &["the sky blue"]),
                ("fact_topic", &["the weather", "the time"]),
            ],
        ),
        domain(
            "undo",
            INTENDED_TEMPO,
            &["<undo_action>", "<undo_action> | please"],
            &[("undo_action", &["undo that", "cancel that"])],
        ),
    ]
}

/// Side talk: chatting with a spouse, praising the assistant to someone else,
/// enjoying the music aloud, and thinking aloud in a low voice.
pub fn default_unintended_domains() -> Vec<DomainTemplate> {
    vec![
        domain(
            "spouse_chat",
            UNINTENDED_TEMPO,
            &[
                "what do you want | for dinner tonight",
                "did you watch {show} | last night",
                "i think {topic} | is crazy",
            ],
            &[
                ("show", &["the game", "the news", "that show"]),
                ("topic", &["the news", "the election", "the weather"]),
            ],
        ),
        domain(
            "assistant_praise",
            UNINTENDED_TEMPO,
            &["wow | that was so helpful", "it played {media} | for me", "see | it set the alarm"],
            &[("media", &["this song", "some music", "the news", "jazz"])],
        ),
        domain(
            "love_song",
            UNINTENDED_TEMPO,
            &["i love this song", "this song is | so good", "i love {music}"],
            &[("music", &["jazz", "this music", "some music"])],
        ),
        domain(
            "low_voice",
            UNINTENDED_TEMPO,
            &[
                "i should call {person} | later",
                "hmm | what time is it",
                "maybe | i will play {thing} | tonight",
            ],
            &[("person", &["mom", "john"]), ("thing", &["the game", "some music"])],
        ),
    ]
}
