//! Template-based synthetic corpora standing in for real student data.
//!
//! Normal texts are built from neutral sentences about schoolwork, with a
//! small share containing benign uses of words that also appear in alarming
//! statements ("kill time", "my brother beats me at chess"). Alarming texts
//! embed one rubric-style statement inside the same neutral filler.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::corpus::{Label, LabeledText, RubricCategory, Source};
use crate::error::{Error, Result};

const SUBJECTS: &[&str] = &[
    "the author", "the narrator", "the main character", "the poet", "the scientist",
    "my group", "the article", "the writer", "the speaker", "the class", "our teacher",
    "the student", "the team", "the farmer", "the explorer", "the inventor",
];

const VERBS: &[&str] = &[
    "explains", "shows", "argues", "describes", "suggests", "compares", "proves",
    "claims", "believes", "demonstrates", "notices", "remembers", "questions", "observes",
];

const TOPICS: &[&str] = &[
    "the water cycle", "photosynthesis", "the civil war", "renewable energy", "the solar system",
    "friendship", "climate change", "the food chain", "ancient egypt", "the constitution",
    "volcanoes", "fractions", "the election", "recycling", "the ocean", "honeybees",
    "electric circuits", "the roman empire", "migration", "healthy habits", "the desert",
    "gravity", "the rainforest", "community gardens", "space exploration", "the printing press",
    "weather patterns", "the human heart", "bridges", "poetry", "music history", "rivers",
];

const ADJECTIVES: &[&str] = &[
    "important", "interesting", "complicated", "useful", "surprising", "confusing",
    "helpful", "difficult", "amazing", "strange", "necessary", "valuable", "simple", "clear",
];

const CONNECTIVES: &[&str] = &[
    "because", "since", "although", "even though", "while", "so", "and", "but",
];

const EVIDENCE: &[&str] = &[
    "the second paragraph gives an example",
    "the chart shows the numbers went up",
    "the text says it happened many years ago",
    "the experiment had two different results",
    "the story ends with a big surprise",
    "there are three main reasons in the passage",
    "the diagram labels each part carefully",
    "the data table compares both groups",
    "the quote from the expert supports it",
    "the timeline shows what changed first",
    "the title hints at the main idea",
    "the map shows where the people lived",
];

const OPINIONS: &[&str] = &[
    "I think this answer makes sense",
    "in my opinion the reasoning is strong",
    "I agree with the conclusion",
    "I learned a lot from reading this",
    "this reminds me of a book we read last year",
    "I would like to learn more about it",
    "my answer is that both sides have a point",
    "I am not sure but I think it is correct",
    "this was easier than the last question",
    "I used the strategy we practiced in class",
    "my favorite part was the ending",
    "I checked my work twice",
];

/// Benign sentences that reuse words from alarming statements.
const DISTRACTORS: &[&str] = &[
    "we had to kill time before the bus came",
    "I would die for a slice of pizza right now",
    "we hit the ball really hard in gym class",
    "my brother beats me at chess every time",
    "I hate math homework but I still finish it",
    "help me understand what the question means",
    "the character in the story wanted to die a hero",
    "the hunter had to kill the wolf to save the village",
    "the battle in the book was violent and sad",
    "my dog cut his paw on a rock at the park",
    "the lion will kill its prey to feed the cubs",
    "this test is killing me but I will try my best",
    "the queen was dead by the end of the play",
    "I hurt my knee playing soccer last week",
    "the villain threatened the town in the movie",
    "please help me find the right answer to number four",
];

const HARM_TO_SELF: &[&str] = &[
    "I wanna kill myself",
    "I cut a lot",
    "I want to end my life",
    "I have been cutting my arms again",
    "sometimes I think about killing myself",
    "I stopped eating so I can disappear",
    "I take pills to make everything stop",
    "I am going to hurt myself tonight",
    "I keep thinking about ways to kill myself",
];

const HARM_TO_ANOTHER: &[&str] = &[
    "I hit my girlfriend",
    "I want a sniper rifle",
    "I am going to shoot everyone at this school",
    "I will hurt the kids who laugh at me",
    "I am bringing a knife to school tomorrow",
    "they all deserve to die and I will make it happen",
    "I want to beat him until he stops breathing",
    "I know where my dad keeps the gun and I will use it",
];

const HARM_FROM_ANOTHER: &[&str] = &[
    "My dad beats me",
    "I get bullied",
    "my stepdad hurts me when mom is gone",
    "they push me into the lockers and punch me every day",
    "my uncle touches me and I am scared to go home",
    "my mom hits me with a belt when she is angry",
    "the older boys threaten me after school",
];

const SEVERE_DEPRESSION: &[&str] = &[
    "Please kill me",
    "I want to die",
    "I wish I was dead",
    "nothing matters and I feel empty every single day",
    "I cry every night and nobody cares if I am alive",
    "I do not see the point of living anymore",
    "everything is dark and I cannot get out of bed",
];

const REQUEST_FOR_HELP: &[&str] = &[
    "I hate my life, please help",
    "help me or kill me",
    "please someone help me I am not safe at home",
    "I need help and I do not know who to tell",
    "if anyone reads this please get me help",
    "can someone please call for help I am scared",
];

fn statements(category: RubricCategory) -> &'static [&'static str] {
    match category {
        RubricCategory::HarmToSelf => HARM_TO_SELF,
        RubricCategory::HarmToAnother => HARM_TO_ANOTHER,
        RubricCategory::HarmFromAnother => HARM_FROM_ANOTHER,
        RubricCategory::SevereDepressionTrauma => SEVERE_DEPRESSION,
        RubricCategory::SeriousRequestForHelp => REQUEST_FOR_HELP,
    }
}

fn pick<'a>(rng: &mut ChaCha8Rng, items: &[&'a str]) -> &'a str {
    items.choose(rng).copied().expect("non-empty word bank")
}

fn neutral_sentence(rng: &mut ChaCha8Rng) -> String {
    match rng.random_range(0..5) {
        0 => format!(
            "{} {} that {} is {}",
            pick(rng, SUBJECTS),
            pick(rng, VERBS),
            pick(rng, TOPICS),
            pick(rng, ADJECTIVES)
        ),
        1 => format!(
            "{} is {} {} {}",
            pick(rng, TOPICS),
            pick(rng, ADJECTIVES),
            pick(rng, CONNECTIVES),
            pick(rng, EVIDENCE)
        ),
        2 => pick(rng, OPINIONS).to_string(),
        3 => format!(
            "{} {} {}",
            pick(rng, OPINIONS),
            pick(rng, CONNECTIVES),
            pick(rng, EVIDENCE)
        ),
        _ => format!(
            "{} {} how {} works",
            pick(rng, SUBJECTS),
            pick(rng, VERBS),
            pick(rng, TOPICS)
        ),
    }
}

fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

fn join_sentences(sentences: &[String]) -> String {
    sentences
        .iter()
        .map(|s| format!("{}.", capitalize(s)))
        .collect::<Vec<_>>()
        .join(" ")
}

fn normal_text(rng: &mut ChaCha8Rng) -> String {
    let n = rng.random_range(1..=4);
    let mut sentences: Vec<String> = (0..n).map(|_| neutral_sentence(rng)).collect();
    if rng.random_bool(0.08) {
        let at = rng.random_range(0..=sentences.len());
        sentences.insert(at, pick(rng, DISTRACTORS).to_string());
    }
    join_sentences(&sentences)
}

fn alarming_text(rng: &mut ChaCha8Rng, category: RubricCategory) -> String {
    let n = rng.random_range(0..=3);
    let mut sentences: Vec<String> = (0..n).map(|_| neutral_sentence(rng)).collect();
    let at = rng.random_range(0..=sentences.len());
    sentences.insert(at, pick(rng, statements(category)).to_string());
    join_sentences(&sentences)
}

/// Generate `n_normal + n_asr` labeled texts in a seed-determined order.
pub fn generate_synthetic(n_normal: usize, n_asr: usize, seed: u64) -> Result<Vec<LabeledText>> {
    if n_normal == 0 && n_asr == 0 {
        return Err(Error::InvalidArgument("at least one of n_normal, n_asr must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let total = n_normal + n_asr;
    // Choose which positions hold alarming texts without materializing a shuffle.
    let mut is_asr = vec![false; total];
    for slot in rand::seq::index::sample(&mut rng, total, n_asr) {
        is_asr[slot] = true;
    }

    let mut out = Vec::with_capacity(total);
    for (i, asr) in is_asr.into_iter().enumerate() {
        let id = format!("syn-{seed}-{i:07}");
        let record = if asr {
            let category = *RubricCategory::ALL.choose(&mut rng).expect("five categories");
            let source = if rng.random_bool(0.2) {
                Source::Supplementary
            } else {
                Source::Student
            };
            LabeledText {
                id,
                text: alarming_text(&mut rng, category),
                label: Label::ASR,
                source,
                category: Some(category),
            }
        } else {
            let source = if rng.random_bool(0.003) {
                Source::Supplementary
            } else {
                Source::Student
            };
            LabeledText {
                id,
                text: normal_text(&mut rng),
                label: Label::NORMAL,
                source,
                category: None,
            }
        };
        out.push(record);
    }
    Ok(out)
}

/// Unlabeled texts drawn at the given alarming prevalence.
pub fn generate_threshold_texts(n: usize, prevalence: f64, seed: u64) -> Result<Vec<String>> {
    if n == 0 {
        return Err(Error::InvalidArgument("threshold corpus size must be positive".into()));
    }
    let n_asr = (prevalence.clamp(0.0, 1.0) * n as f64).round() as usize;
    Ok(generate_synthetic(n - n_asr, n_asr, seed)?
        .into_iter()
        .map(|r| r.text)
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn prevalence(recs: &[LabeledText]) -> f64 {
        recs.iter().filter(|r| r.label.is_asr()).count() as f64 / recs.len() as f64
    }

    #[test]
    fn counts_and_prevalence() {
        let recs = generate_synthetic(980, 20, 1).unwrap();
        assert_eq!(recs.len(), 1000);
        assert!((prevalence(&recs) - 0.02).abs() < 1e-12);

        let all = generate_synthetic(0, 5, 1).unwrap();
        assert!(all.iter().all(|r| r.label.is_asr() && r.category.is_some()));

        let rare = generate_synthetic(99_988, 12, 1).unwrap();
        assert!((prevalence(&rare) * 100.0 - 0.012).abs() < 1e-9);
    }

    #[test]
    fn zero_counts_rejected() {
        assert!(generate_synthetic(0, 0, 1).is_err());
    }

    #[test]
    fn byte_deterministic() {
        let a = serde_json::to_string(&generate_synthetic(300, 7, 42).unwrap()).unwrap();
        let b = serde_json::to_string(&generate_synthetic(300, 7, 42).unwrap()).unwrap();
        let c = serde_json::to_string(&generate_synthetic(300, 7, 43).unwrap()).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn ids_unique_and_normal_texts_lack_categories() {
        let recs = generate_synthetic(500, 50, 3).unwrap();
        let ids: std::collections::HashSet<_> = recs.iter().map(|r| &r.id).collect();
        assert_eq!(ids.len(), recs.len());
        assert!(recs.iter().filter(|r| !r.label.is_asr()).all(|r| r.category.is_none()));
        assert!(recs.iter().all(|r| !r.text.trim().is_empty() && !r.text.contains('\n')));
    }
}
