//! Built-in landmark-extraction and cooccurrence-generation prompts.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::PriorError;

pub const PLACEHOLDER: &str = "{input}";
/// Cooccurrences requested from the model regardless of the configured `n_co`,
/// so one cached response serves every truncation length.
pub const DEFAULT_REQUESTED_COOCCURRENCES: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InstructionStyle {
    /// Step-by-step instructions (R2R, R4R, RxR).
    FineGrained,
    /// Goal-level instructions (REVERIE).
    HighLevel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PromptKind {
    LandmarkExtraction,
    CooccurrenceGeneration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptTemplate {
    pub style: InstructionStyle,
    pub kind: PromptKind,
    body: String,
    /// Requested cooccurrence count; `None` for landmark extraction.
    pub k: Option<usize>,
}

const LANDMARK_PREAMBLE: &str = "Given an instruction, you need to extract the landmarks in the instruction and sort them in the order in which they appear in the real navigation (not in the order they appear in the instruction). Landmarks must be the actual objects and scenes you see in the navigation, and do not include other abstract nouns such as \"left\" and \"right\".
Requirement 1: Extract all landmarks in the instruction.
Requirement 2: do not generate landmarks that are not in the instruction.
Below you will find several examples of landmark extraction and the instruction you need to complete the extraction, output by format:
";

const FINE_GRAINED_EXAMPLES: &[(&str, &[&str])] = &[
    (
        "Exit the room. Turn left and go down the hallway. Continue down the hallway until you get to the stairs. Turn left and go up the first step.",
        &["room", "hallway", "hallway", "stairs", "step"],
    ),
    (
        "Walk into the hallway and through the entrance to the kitchen area. Walk Passed the sink and stove area and stop between the refrigerator and dining table.",
        &["hallway", "entrance", "kitchen area", "sink", "stove area", "refrigerator", "dining table"],
    ),
    (
        "Walk past the TV and continue toward the bathroom. Stop before walking through the bathroom door.",
        &["TV", "bathroom", "bathroom door"],
    ),
    (
        "Walk between the columns and make a sharp turn right. Walk down the steps and stop on the landing.",
        &["columns", "steps", "landing"],
    ),
    (
        "With the windows on your left, walk through the large room past the sitting areas. Go through the door left of the tapestry and enter a wood-paneled room with a circular table in the middle. Go up the stairs and stop on the sixth step from the bottom.",
        &["windows", "large room", "sitting areas", "door", "tapestry", "wood-paneled room", "circular table", "stairs", "step"],
    ),
];

const HIGH_LEVEL_EXAMPLES: &[(&str, &[&str])] = &[
    (
        "Go to the lounge on the first level and bring the trinket with the clock that's sitting on the fireplace.",
        &["first level", "lounge", "fireplace", "clock", "trinket"],
    ),
    (
        "Go to the staircase by entryway and touch the front of the banister of the staircase.",
        &["entryway", "staircase", "staircase", "banister"],
    ),
    (
        "Go to the bedroom with the fireplace and bring me the lowest hanging small picture on the right wall across from the bedside table with the lamp on it.",
        &["bedroom", "fireplace", "bedside table", "lamp", "wall", "small picture"],
    ),
    (
        "Go to the bedroom on level 2 to the right of the green bathroom and remove the white pillow closest to the bedroom door from the bed.",
        &["level 2", "green bathroom", "bedroom", "bedroom door", "bed", "white pillow"],
    ),
    (
        "Go to the first level bedroom adjacent to the hallway leading to the lounge and dust the sofa chair and place 2 more pillows on it.",
        &["first level", "hallway", "lounge", "bedroom", "sofa chair", "pillows"],
    ),
];

const COOCCURRENCE_EXAMPLES: &[(&str, &[&str])] = &[
    (
        "bedroom",
        &["bed", "door", "window", "mirror", "closet", "rug", "curtains", "walls", "ceiling", "floor"],
    ),
    (
        "sink",
        &["water", "faucet", "basin", "counter", "tile", "porcelain", "chrome", "soap", "towel", "mirror"],
    ),
];

/// Renders `items` the way the task examples list them:
/// `1. a;` … `n. z.`, one per line.
pub fn render_numbered_list(items: &[&str]) -> String {
    let n = items.len();
    items
        .iter()
        .enumerate()
        .map(|(i, it)| {
            let end = if i + 1 == n { '.' } else { ';' };
            format!("{}. {it}{end}", i + 1)
        })
        .collect::<Vec<_>>()
        .join("\n")
}

impl PromptTemplate {
    pub fn landmark_extraction(style: InstructionStyle) -> Self {
        let examples = match style {
            InstructionStyle::FineGrained => FINE_GRAINED_EXAMPLES,
            InstructionStyle::HighLevel => HIGH_LEVEL_EXAMPLES,
        };
        let mut body = String::from(LANDMARK_PREAMBLE);
        for (instruction, landmarks) in examples {
            body.push_str(&format!(
                "Instruction: {instruction}\nLandmarks:\n{}\n",
                render_numbered_list(landmarks)
            ));
        }
        body.push_str(&format!("Instruction: {PLACEHOLDER}\nLandmarks:"));
        Self {
            style,
            kind: PromptKind::LandmarkExtraction,
            body,
            k: None,
        }
    }

    /// Cooccurrence prompt asking for `k` items. The task examples always
    /// list ten.
    pub fn cooccurrence(style: InstructionStyle, k: usize) -> Self {
        let mut body = format!(
            "Given a target landmark in navigation, you need to give {k} possible co-occurrences of this landmark based on real-world common sense.
Requirement: These co-occurrences need to be objects or scenes in an indoor or outdoor environment that can be observed by the robot.
Below you will find several examples of co-occurrences extraction and the target landmark, output by format:
"
        );
        for (landmark, items) in COOCCURRENCE_EXAMPLES {
            body.push_str(&format!(
                "Tell me {} co-occurrences of {landmark}:\n{}\n",
                items.len(),
                render_numbered_list(items)
            ));
        }
        body.push_str(&format!("Tell me {k} co-occurrences of {PLACEHOLDER}:"));
        Self {
            style,
            kind: PromptKind::CooccurrenceGeneration,
            body,
            k: Some(k),
        }
    }

    /// Template with a caller-supplied body. The body must contain the
    /// placeholder exactly once.
    pub fn custom(
        style: InstructionStyle,
        kind: PromptKind,
        body: impl Into<String>,
        k: Option<usize>,
    ) -> Result<Self, PriorError> {
        let body = body.into();
        let n = body.matches(PLACEHOLDER).count();
        if n != 1 {
            return Err(PriorError::InvalidTemplate(format!(
                "expected exactly one {PLACEHOLDER} placeholder, found {n}"
            )));
        }
        Ok(Self { style, kind, body, k })
    }

    pub fn body(&self) -> &str {
        &self.body
    }

    /// Hex SHA-256 of the body; part of the cache key.
    pub fn hash(&self) -> String {
        let digest = Sha256::digest(self.body.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}

pub fn build_prompt(template: &PromptTemplate, input: &str) -> Result<String, PriorError> {
    if input.trim().is_empty() {
        return Err(PriorError::EmptyInput);
    }
    Ok(template.body.replacen(PLACEHOLDER, input, 1))
}
