//! Token categorization: question, supporting fact, context, predicted answer.

use serde::{Deserialize, Serialize};

use crate::trace::{Segment, TraceManifest};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Category {
    Question,
    SupportingFact,
    Context,
    Answer,
}

impl Category {
    pub const ALL: [Category; 4] = [
        Category::Question,
        Category::SupportingFact,
        Category::Context,
        Category::Answer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Category::Question => "question",
            Category::SupportingFact => "supporting_fact",
            Category::Context => "context",
            Category::Answer => "answer",
        }
    }

    pub fn label(self) -> &'static str {
        match self {
            Category::Question => "Question",
            Category::SupportingFact => "Supporting fact",
            Category::Context => "Context",
            Category::Answer => "Predicted answer",
        }
    }
}

/// Half-open char range `[start, end)` into the context text.
pub type CharSpan = (usize, usize);

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CategoryAssignment {
    pub categories: Vec<Category>,
    pub supporting_fact_char_span: Option<CharSpan>,
}

impl CategoryAssignment {
    pub fn len(&self) -> usize {
        self.categories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.categories.is_empty()
    }

    pub fn count(&self, category: Category) -> usize {
        self.categories.iter().filter(|&&c| c == category).count()
    }

    /// Restricts the assignment to the listed token indices, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        Self {
            categories: indices.iter().map(|&i| self.categories[i]).collect(),
            supporting_fact_char_span: self.supporting_fact_char_span,
        }
    }
}

fn fold_case(c: char) -> char {
    c.to_lowercase().next().unwrap_or(c)
}

fn is_terminator(c: char) -> bool {
    matches!(c, '.' | '!' | '?')
}

/// Sentence spans of `chars`. A sentence ends at '.', '!' or '?' followed by
/// whitespace or end of text; leading whitespace is not part of a sentence.
fn sentences(chars: &[char]) -> Vec<CharSpan> {
    let mut spans = Vec::new();
    let mut start = 0;
    for i in 0..chars.len() {
        let at_boundary = is_terminator(chars[i]) && chars.get(i + 1).is_none_or(|c| c.is_whitespace());
        if at_boundary {
            spans.push((start, i + 1));
            start = i + 1;
        }
    }
    if start < chars.len() {
        spans.push((start, chars.len()));
    }
    spans
        .into_iter()
        .map(|(s, e)| {
            let skip = chars[s..e].iter().take_while(|c| c.is_whitespace()).count();
            (s + skip, e)
        })
        .filter(|(s, e)| s < e)
        .collect()
}

/// Char span of the sentence(s) containing the first case-insensitive
/// occurrence of `answer_text` in `context_text`.
pub fn find_supporting_sentence(context_text: &str, answer_text: &str) -> Option<CharSpan> {
    let haystack: Vec<char> = context_text.chars().map(fold_case).collect();
    let needle: Vec<char> = answer_text.chars().map(fold_case).collect();
    if needle.is_empty() || needle.len() > haystack.len() {
        return None;
    }
    let hit = haystack.windows(needle.len()).position(|w| w == needle.as_slice())?;
    let hit_end = hit + needle.len();

    let chars: Vec<char> = context_text.chars().collect();
    let spans = sentences(&chars);
    let first = spans.iter().find(|&&(_, e)| e > hit)?;
    let last = spans.iter().find(|&&(_, e)| e >= hit_end)?;
    Some((first.0.min(hit), last.1))
}

/// Assigns every token exactly one category, with precedence
/// answer > supporting fact > question > context.
pub fn assign_categories(manifest: &TraceManifest, supporting_span: Option<CharSpan>) -> CategoryAssignment {
    let categories = manifest
        .tokens
        .iter()
        .enumerate()
        .map(|(i, tok)| {
            let in_answer = manifest.prediction.as_ref().is_some_and(|p| p.contains(i));
            let in_fact = tok.segment == Segment::Context
                && supporting_span
                    .zip(tok.char_range())
                    .is_some_and(|((fs, fe), (ts, te))| ts < fe && te > fs);
            if in_answer {
                Category::Answer
            } else if in_fact {
                Category::SupportingFact
            } else if tok.segment == Segment::Question {
                Category::Question
            } else {
                Category::Context
            }
        })
        .collect();
    CategoryAssignment {
        categories,
        supporting_fact_char_span: supporting_span,
    }
}
