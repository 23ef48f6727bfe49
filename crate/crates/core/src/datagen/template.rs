use super::grammar::{capitalize, GENERIC_PERSON};
use super::DataError;
use crate::query::ENTITY;

const CAPTION: &str = "[CAPTION]";
const CAPTION_WITH: &str = "[CAPTION:";

/// Caption pair produced by one template application.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TemplatedCaption {
    /// Name withheld, exactly one `[ENTITY]`.
    pub anonymized: String,
    /// `[ENTITY]` replaced by the name.
    pub named: String,
}

/// Locates the caption marker: `(start, end, replacement phrase)`.
fn caption_marker(template: &str) -> Result<(usize, usize, Option<&str>), DataError> {
    let starts: Vec<usize> = template.match_indices("[CAPTION").map(|(i, _)| i).collect();
    let &[start] = starts.as_slice() else {
        return Err(DataError::Format(format!(
            "template {template:?} must contain exactly one caption marker"
        )));
    };
    let rest = &template[start..];
    if rest.starts_with(CAPTION) {
        return Ok((start, start + CAPTION.len(), None));
    }
    if !rest.starts_with(CAPTION_WITH) {
        return Err(DataError::Format(format!("bad caption marker in {template:?}")));
    }
    let body = start + CAPTION_WITH.len();
    let mut depth = 1;
    for (i, c) in template[body..].char_indices() {
        match c {
            '[' => depth += 1,
            ']' => {
                depth -= 1;
                if depth == 0 {
                    let end = body + i;
                    return Ok((start, end + 1, Some(&template[body..end])));
                }
            }
            _ => {}
        }
    }
    Err(DataError::Format(format!("unterminated caption marker in {template:?}")))
}

/// Replaces the stem's entity with the generic person noun, capitalized when
/// it opens the sentence.
fn generic_stem(stem: &str) -> String {
    if stem.starts_with(ENTITY) {
        stem.replacen(ENTITY, &capitalize(GENERIC_PERSON), 1)
    } else {
        stem.replacen(ENTITY, GENERIC_PERSON, 1)
    }
}

/// Renders `template` around `stem`.
///
/// `[CAPTION]` keeps the stem's `[ENTITY]` unless the template mentions the
/// entity itself, in which case the stem refers to a generic person.
/// `[CAPTION:phrase]` substitutes `phrase` for the stem's entity.
pub fn apply_template(template: &str, stem: &str, name: &str) -> Result<TemplatedCaption, DataError> {
    if stem.matches(ENTITY).count() != 1 {
        return Err(DataError::Format(format!("stem {stem:?} must contain exactly one {ENTITY}")));
    }
    let (start, end, phrase) = caption_marker(template)?;
    let (head, tail) = (&template[..start], &template[end..]);
    let outer_entity = head.contains(ENTITY) || tail.contains(ENTITY);
    let body = match phrase {
        Some(p) => stem.replacen(ENTITY, p, 1),
        None if outer_entity => generic_stem(stem),
        None => stem.to_string(),
    };
    let anonymized = format!("{head}{body}{tail}");
    if anonymized.matches(ENTITY).count() != 1 {
        return Err(DataError::Format(format!(
            "template {template:?} yields {:?}, which does not mention {ENTITY} exactly once",
            anonymized
        )));
    }
    let named = anonymized.replacen(ENTITY, name, 1);
    Ok(TemplatedCaption { anonymized, named })
}
