//! Caption grammar for synthetic contexts.
//!
//! A context is a (place, activity, object) triple. Each attribute value has
//! a fixed visual pattern, so an unseen combination in the test split is
//! still describable by words the backbone saw during training.

pub struct Place {
    pub key: &'static str,
    /// Prepositional phrase, e.g. "in the park".
    pub phrase: &'static str,
}

pub struct Activity {
    pub key: &'static str,
    pub progressive: &'static str,
    pub simple: &'static str,
}

pub struct Object {
    pub key: &'static str,
    pub phrase: &'static str,
}

pub const PLACES: &[Place] = &[
    Place { key: "park", phrase: "in the park" },
    Place { key: "beach", phrase: "on the beach" },
    Place { key: "kitchen", phrase: "in a kitchen" },
    Place { key: "street", phrase: "on a city street" },
    Place { key: "field", phrase: "in a snowy field" },
    Place { key: "lake", phrase: "near a lake" },
];

pub const ACTIVITIES: &[Activity] = &[
    Activity { key: "bike", progressive: "riding a bike", simple: "rides a bike" },
    Activity { key: "run", progressive: "running", simple: "runs" },
    Activity { key: "eat", progressive: "eating a sandwich", simple: "eats a sandwich" },
    Activity { key: "tennis", progressive: "playing tennis", simple: "plays tennis" },
    Activity { key: "read", progressive: "reading a book", simple: "reads a book" },
    Activity { key: "kite", progressive: "flying a kite", simple: "flies a kite" },
];

pub const OBJECTS: &[Object] = &[
    Object { key: "dog", phrase: "with a dog" },
    Object { key: "umbrella", phrase: "with an umbrella" },
    Object { key: "hat", phrase: "wearing a hat" },
    Object { key: "phone", phrase: "holding a phone" },
];

/// Coarse appearance adjectives, one binary attribute per pair. Backbone
/// pretraining captions describe the person with these instead of a name.
pub const APPEARANCE: &[(&str, &str)] = &[
    ("young", "elderly"),
    ("dark-haired", "fair-haired"),
    ("smiling", "serious"),
    ("bearded", "beardless"),
    ("curly-haired", "straight-haired"),
    ("pale", "tanned"),
];

/// Noun phrase for a set of appearance attributes, e.g. "a young dark-haired
/// smiling bearded curly-haired pale person".
pub fn appearance_phrase(attributes: &[bool]) -> String {
    let words: Vec<&str> = APPEARANCE
        .iter()
        .zip(attributes)
        .map(|(&(a, b), &on)| if on { a } else { b })
        .collect();
    format!("a {} person", words.join(" "))
}

/// Caption of a pretraining portrait; `{}` is an appearance phrase.
pub fn portrait_caption(appearance: &str) -> String {
    format!("a portrait of {appearance}")
}

/// Generic noun phrase substituted for the person when a template mentions
/// the entity outside the caption body.
pub const GENERIC_PERSON: &str = "a person";

/// Caption templates. `[ENTITY]` marks the person, `[CAPTION]` the stem and
/// `[CAPTION:phrase]` the stem with its entity slot replaced by `phrase`.
/// Only the first is taken verbatim from the reference setup; the rest are
/// toy phrasings.
pub const DEFAULT_TEMPLATES: &[&str] = &[
    "[ENTITY] in the image. [CAPTION]",
    "[CAPTION]",
    "An image with [ENTITY]. [CAPTION]",
    "[CAPTION:the famous person [ENTITY]]",
    "This is [ENTITY]. [CAPTION]",
];

/// Entity-only prompt set used for prompt ensembling.
pub const DEFAULT_ENTITY_PROMPTS: &[&str] = &["An image with [ENTITY]", "The famous [ENTITY]", "[ENTITY]"];

/// Renders the caption stems of a context.
pub fn stems(place: usize, activity: usize, object: usize) -> Vec<String> {
    let (p, a, o) = (&PLACES[place], &ACTIVITIES[activity], &OBJECTS[object]);
    vec![
        format!("[ENTITY] is {} {}", a.progressive, p.phrase),
        format!("{}, [ENTITY] {} {}", capitalize(p.phrase), a.simple, o.phrase),
        format!("[ENTITY] {} is {} {}", o.phrase, a.progressive, p.phrase),
    ]
}

pub fn capitalize(s: &str) -> String {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) => c.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Every surface string the default grammar, templates and prompts can emit
/// (excluding entity names).
pub fn all_phrases() -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    out.extend(PLACES.iter().map(|p| p.phrase.to_string()));
    out.extend(ACTIVITIES.iter().flat_map(|a| [a.progressive.to_string(), a.simple.to_string()]));
    out.extend(OBJECTS.iter().map(|o| o.phrase.to_string()));
    out.extend(stems(0, 0, 0));
    out.push(GENERIC_PERSON.to_string());
    out.extend(APPEARANCE.iter().map(|(a, b)| format!("{a} {b}")));
    out.push(portrait_caption(GENERIC_PERSON));
    out.extend(DEFAULT_TEMPLATES.iter().map(|t| t.to_string()));
    out.extend(DEFAULT_ENTITY_PROMPTS.iter().map(|t| t.to_string()));
    out
}
