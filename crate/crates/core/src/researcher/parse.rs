//! Structured completions: the first balanced `{...}` in a reply.

use serde::de::DeserializeOwned;

/// Returns the first balanced JSON object in `text`, ignoring braces inside
/// string literals. Code fences and prose around the object are skipped.
pub fn first_json_object(text: &str) -> Option<&str> {
    let start = text.find('{')?;
    let mut depth = 0usize;
    let mut in_string = false;
    let mut escaped = false;
    for (i, c) in text[start..].char_indices() {
        if in_string {
            match c {
                _ if escaped => escaped = false,
                '\\' => escaped = true,
                '"' => in_string = false,
                _ => {}
            }
            continue;
        }
        match c {
            '"' => in_string = true,
            '{' => depth += 1,
            '}' => {
                depth -= 1;
                if depth == 0 {
                    return Some(&text[start..start + i + 1]);
                }
            }
            _ => {}
        }
    }
    None
}

pub fn parse_object<T: DeserializeOwned>(text: &str) -> Result<T, String> {
    let json = first_json_object(text).ok_or_else(|| "no JSON object in completion".to_string())?;
    serde_json::from_str(json).map_err(|e| e.to_string())
}
