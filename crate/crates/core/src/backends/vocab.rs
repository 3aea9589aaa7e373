//! Fixed 64-word vocabulary of the toy backend.

pub const VOCAB: [&str; 64] = [
    "<image>", "<unk>", "<bos>", "<eos>", "<vision_start>", "<vision_end>", "<assistant>", "<soft>",
    "circle", "square", "triangle", "object", "objects",
    "red", "green", "blue", "yellow", "cyan", "purple",
    "left", "right", "top", "bottom", "middle", "center",
    "moving", "static", "still", "moves",
    "the", "a", "on", "at", "of", "in", "is", "that", "to", "and", "with", "what", "which", "target",
    "expression", "attributes", "distinguishing", "main", "referred", "respond", "single", "word",
    "focus", "attention", "precisely", "region", "track", "consistently", "across", "frames", "frame",
    "video", "reasoning", "best", "describes",
];

pub const IMAGE: usize = 0;
pub const UNK: usize = 1;
pub const BOS: usize = 2;
pub const VISION_START: usize = 4;
pub const VISION_END: usize = 5;
pub const ASSISTANT: usize = 6;
pub const SOFT: usize = 7;

pub const SHAPE_WORDS: [&str; 3] = ["circle", "square", "triangle"];
pub const FALLBACK_NOUN: &str = "object";

pub fn id(word: &str) -> usize {
    VOCAB.iter().position(|w| *w == word).unwrap_or(UNK)
}

/// Lowercased `[a-z0-9]+` runs of `text`.
pub fn words(text: &str) -> Vec<String> {
    text.to_lowercase()
        .split(|c: char| !(c.is_ascii_lowercase() || c.is_ascii_digit()))
        .filter(|w| !w.is_empty())
        .map(str::to_string)
        .collect()
}

/// Vocabulary ids of `text`; unknown words map to `<unk>`.
pub fn tokenize(text: &str) -> Vec<usize> {
    words(text).iter().map(|w| id(w)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vocabulary_is_unique() {
        let mut v = VOCAB.to_vec();
        v.sort();
        v.dedup();
        assert_eq!(v.len(), 64);
    }

    #[test]
    fn tokenizer_maps_unknown_words() {
        assert_eq!(
            tokenize("The RED circle, zebra!"),
            vec![id("the"), id("red"), id("circle"), UNK]
        );
        assert_eq!(words("e.g., 'cat'"), vec!["e", "g", "cat"]);
    }
}
