//! Closed prompt vocabulary shared by the data generator and the networks.
//!
//! Prompts are plain space-separated words over 6 color names, 3 shape
//! kinds, and the connective "and". Tokenization is a table lookup; there is
//! no learned text encoder anywhere in the system.

use crate::error::{Error, Result};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "white", "purple"];
pub const KINDS: [&str; 3] = ["circle", "square", "triangle"];
pub const CONNECTIVE: &str = "and";

/// RGB values in [0,1] for each palette color, aligned with [`COLORS`].
pub const PALETTE: [[f32; 3]; 6] = [
    [0.85, 0.10, 0.10], // red
    [0.10, 0.80, 0.15], // green
    [0.15, 0.20, 0.85], // blue
    [0.90, 0.85, 0.10], // yellow
    [0.95, 0.95, 0.95], // white
    [0.60, 0.15, 0.80], // purple
];

/// Canvas background, chosen away from both the palette and the 0.5
/// sentinel fill used for masked pixels.
pub const BACKGROUND: [f32; 3] = [0.15, 0.15, 0.15];

/// Token ids: colors 0..6, kinds 6..9, "and" = 9.
pub fn vocab() -> Vec<&'static str> {
    let mut v: Vec<&'static str> = COLORS.to_vec();
    v.extend_from_slice(&KINDS);
    v.push(CONNECTIVE);
    v
}

pub fn vocab_size() -> usize {
    COLORS.len() + KINDS.len() + 1
}

pub fn token_id(word: &str) -> Result<usize> {
    vocab()
        .iter()
        .position(|&w| w == word)
        .ok_or_else(|| Error::UnknownToken {
            token: word.to_string(),
        })
}

/// Whitespace tokenization against the closed vocabulary.
pub fn tokenize(prompt: &str) -> Result<Vec<usize>> {
    let ids: Result<Vec<usize>> = prompt.split_whitespace().map(token_id).collect();
    let ids = ids?;
    if ids.is_empty() {
        return Err(Error::DomainError("empty prompt".to_string()));
    }
    Ok(ids)
}

pub fn color_index(name: &str) -> Result<usize> {
    COLORS
        .iter()
        .position(|&c| c == name)
        .ok_or_else(|| Error::UnknownToken {
            token: name.to_string(),
        })
}
