//! Few-shot prompt assembly and the argmax prediction rule.
//!
//! A prompt is an ordered list of text and image parts: the instruction,
//! k demonstration (image, label) pairs, an answer-format reminder, and
//! the query image last. Demonstration selection cycles the classes
//! round-robin so coverage grows evenly with the shot count.

use crate::imaging::RasterImage;
use crate::labels::ClassLabel;
pub use crate::labels::{normalize_label, AliasTable};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PromptingError {
    #[error("requested {k} demonstrations but the pool has {pool}")]
    PoolTooSmall { k: usize, pool: usize },
    #[error("empty score map")]
    EmptyScores,
    #[error("non-finite score for {0}")]
    NonFiniteScore(ClassLabel),
}

/// One labeled example embedded in a prompt.
#[derive(Debug, Clone, PartialEq)]
pub struct Demonstration {
    pub image: RasterImage,
    pub label: ClassLabel,
}

/// The instruction plus the k chosen demonstrations.
#[derive(Debug, Clone, PartialEq)]
pub struct DemonstrationSet {
    /// Instruction template; `{label_list}` expands to the candidate
    /// labels with one-phrase glosses at prompt-build time.
    pub instruction: String,
    pub demonstrations: Vec<Demonstration>,
}

/// The default instruction template shipped with the crate.
pub fn default_instruction_template() -> &'static str {
    include_str!("../assets/instruction.txt")
}

/// Expands `{label_list}` in the template. A template without the
/// placeholder gets the list appended, so candidates are always present.
pub fn render_instruction(template: &str, candidates: &[ClassLabel]) -> String {
    let list = candidates
        .iter()
        .map(|l| format!("- {}: {}", l.as_str(), l.gloss()))
        .collect::<Vec<_>>()
        .join("\n");
    if template.contains("{label_list}") {
        template.replace("{label_list}", &list)
    } else {
        format!("{}\n{}", template.trim_end(), list)
    }
}

/// Picks k demonstrations, cycling the classes in canonical order so
/// each round adds at most one example per class. Within a class the
/// candidate order is shuffled by the seed; the choice is deterministic
/// for a fixed pool, k, and seed.
pub fn select_demonstrations(
    pool: &[Demonstration],
    k: usize,
    seed: u64,
    instruction: &str,
) -> Result<DemonstrationSet, PromptingError> {
    if k > pool.len() {
        return Err(PromptingError::PoolTooSmall { k, pool: pool.len() });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut per_class: Vec<Vec<usize>> = vec![Vec::new(); ClassLabel::ALL.len()];
    for (idx, demo) in pool.iter().enumerate() {
        per_class[demo.label.canonical_index()].push(idx);
    }
    for list in per_class.iter_mut() {
        list.shuffle(&mut rng);
    }

    let mut chosen = Vec::with_capacity(k);
    let mut round = 0;
    while chosen.len() < k {
        for class_list in &per_class {
            if chosen.len() == k {
                break;
            }
            if let Some(&idx) = class_list.get(round) {
                chosen.push(idx);
            }
        }
        round += 1;
    }
    Ok(DemonstrationSet {
        instruction: instruction.to_string(),
        demonstrations: chosen.into_iter().map(|i| pool[i].clone()).collect(),
    })
}

/// One ordered prompt part.
#[derive(Debug, Clone, PartialEq)]
pub enum PromptPart {
    Text(String),
    Image(RasterImage),
}

/// An assembled prompt: instruction, demonstrations, reminder, query.
#[derive(Debug, Clone, PartialEq)]
pub struct Prompt {
    pub parts: Vec<PromptPart>,
}

const REMINDER: &str =
    "Now classify the next image. Reply with exactly one category name from the list, and nothing else.";

impl Prompt {
    pub fn image_count(&self) -> usize {
        self.parts
            .iter()
            .filter(|p| matches!(p, PromptPart::Image(_)))
            .count()
    }

    /// The final image part: the query.
    pub fn query_image(&self) -> Option<&RasterImage> {
        self.parts.iter().rev().find_map(|p| match p {
            PromptPart::Image(img) => Some(img),
            PromptPart::Text(_) => None,
        })
    }

    /// Deterministic byte serialization: text parts verbatim, image
    /// parts as their PGM encoding, each behind a type marker. Backends
    /// fingerprint and transmit from this representation.
    pub fn to_wire_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for part in &self.parts {
            match part {
                PromptPart::Text(t) => {
                    out.extend_from_slice(b"[text]\n");
                    out.extend_from_slice(t.as_bytes());
                    out.push(b'\n');
                }
                PromptPart::Image(img) => {
                    let pgm = img.to_pgm();
                    out.extend_from_slice(format!("[image {} bytes]\n", pgm.len()).as_bytes());
                    out.extend_from_slice(&pgm);
                    out.push(b'\n');
                }
            }
        }
        out
    }
}

/// Assembles the prompt: [instruction, (demo image, demo label) x k,
/// reminder, query image]. Always exactly k + 1 images.
pub fn build_prompt(
    demos: &DemonstrationSet,
    query: &RasterImage,
    candidates: &[ClassLabel],
) -> Prompt {
    let mut parts = Vec::with_capacity(2 * demos.demonstrations.len() + 3);
    parts.push(PromptPart::Text(render_instruction(
        &demos.instruction,
        candidates,
    )));
    for demo in &demos.demonstrations {
        parts.push(PromptPart::Image(demo.image.clone()));
        parts.push(PromptPart::Text(format!("Category: {}", demo.label)));
    }
    parts.push(PromptPart::Text(REMINDER.to_string()));
    parts.push(PromptPart::Image(query.clone()));
    Prompt { parts }
}

/// Argmax over a score map; ties go to the earliest label in canonical
/// order. The map's BTreeMap ordering is canonical order, so keeping the
/// first strict maximum implements the tie rule.
pub fn predict(scores: &BTreeMap<ClassLabel, f64>) -> Result<ClassLabel, PromptingError> {
    if scores.is_empty() {
        return Err(PromptingError::EmptyScores);
    }
    let mut best: Option<(ClassLabel, f64)> = None;
    for (&label, &score) in scores {
        if !score.is_finite() {
            return Err(PromptingError::NonFiniteScore(label));
        }
        match best {
            None => best = Some((label, score)),
            Some((_, s)) if score > s => best = Some((label, score)),
            _ => {}
        }
    }
    Ok(best.expect("non-empty").0)
}
