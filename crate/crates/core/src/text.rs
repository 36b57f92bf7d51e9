//! Word-level helpers shared by the mutation operators, the syntactic
//! validator and the rule-based vagueness detector.

use std::sync::LazyLock;

use regex::Regex;

static WORD: LazyLock<Regex> = LazyLock::new(|| {
    Regex::new(r"[A-Za-z0-9_]+(?:[./\-][A-Za-z0-9_]+)*%?|>=|<=|==|!=|[<>=,;:]")
        .expect("word pattern")
});

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) struct Word {
    pub start: usize,
    pub end: usize,
    pub lower: String,
}

pub(crate) fn words(text: &str) -> Vec<Word> {
    WORD.find_iter(text)
        .map(|m| Word {
            start: m.start(),
            end: m.end(),
            lower: m.as_str().to_lowercase(),
        })
        .collect()
}

pub(crate) fn is_number(word: &str) -> bool {
    let digits = word.strip_prefix(['-', '+']).unwrap_or(word);
    digits.starts_with(|c: char| c.is_ascii_digit())
}

pub(crate) fn is_comparator_symbol(word: &str) -> bool {
    matches!(word, ">" | "<" | ">=" | "<=")
}

pub(crate) const VERBS: &[&str] = &[
    "is",
    "are",
    "be",
    "was",
    "were",
    "been",
    "will",
    "shall",
    "should",
    "must",
    "can",
    "may",
    "has",
    "have",
    "does",
    "do",
    "stays",
    "stay",
    "remains",
    "remain",
    "exceeds",
    "exceed",
    "reaches",
    "reach",
    "rises",
    "rise",
    "falls",
    "fall",
    "drops",
    "drop",
    "increases",
    "increase",
    "decreases",
    "decrease",
    "holds",
    "hold",
    "becomes",
    "become",
    "goes",
    "go",
    "responds",
    "respond",
    "activates",
    "activate",
    "settles",
    "settle",
    "returns",
    "return",
    "triggers",
    "trigger",
    "occurs",
    "occur",
    "starts",
    "start",
    "stops",
    "stop",
    "switches",
    "switch",
    "opens",
    "open",
    "closes",
    "close",
    "changes",
    "change",
    "turns",
    "turn",
    "keeps",
    "keep",
    "enters",
    "enter",
    "exits",
    "exit",
    "gets",
    "get",
    "reacts",
    "react",
    "achieves",
    "achieve",
    "operates",
    "operate",
    "runs",
    "run",
    "moves",
    "move",
    "follows",
    "follow",
    "satisfies",
    "satisfy",
    "equals",
    "equal",
    "drives",
    "drive",
    "brakes",
    "brake",
    "engages",
    "engage",
    "shuts",
    "shut",
    "exceeded",
    "dropped",
    "fell",
    "rose",
    "reached",
    "stayed",
    "remained",
    "happens",
    "happen",
    "lasts",
    "last",
    "recovers",
    "recover",
    "oscillates",
    "oscillate",
    "converges",
    "converge",
];

pub(crate) const COMPARATOR_PHRASES: &[&str] = &[
    "greater than",
    "less than",
    "more than",
    "higher than",
    "lower than",
    "larger than",
    "smaller than",
    "above",
    "below",
    "at least",
    "at most",
    "exceeds",
    "exceed",
];

pub(crate) const MODALS: &[&str] = &[
    "will", "shall", "should", "must", "can", "may", "would", "could", "might",
];

pub(crate) const SUBORDINATORS: &[&str] = &[
    "if",
    "when",
    "whenever",
    "once",
    "while",
    "unless",
    "because",
    "after",
    "before",
    "as soon as",
    "until",
    "since",
    "provided",
];

/// Words that open a clause as a connective, so a comma before them is not a
/// bare juxtaposition.
pub(crate) const CONNECTIVES: &[&str] = &[
    "and",
    "or",
    "but",
    "so",
    "then",
    "if",
    "when",
    "whenever",
    "while",
    "unless",
    "because",
    "after",
    "before",
    "once",
    "until",
    "otherwise",
    "which",
    "where",
    "since",
    "yet",
    "nor",
    "as",
];

/// `phrase` occurs in `text` as a whole-word, case-insensitive match.
pub(crate) fn contains_phrase(text: &str, phrase: &str) -> bool {
    find_phrase(text, phrase).is_some()
}

pub(crate) fn find_phrase(text: &str, phrase: &str) -> Option<(usize, usize)> {
    let target: Vec<String> = words(phrase).into_iter().map(|w| w.lower).collect();
    if target.is_empty() {
        return None;
    }
    let ws = words(text);
    ws.windows(target.len())
        .find(|window| window.iter().zip(&target).all(|(w, t)| w.lower == *t))
        .map(|window| (window[0].start, window[window.len() - 1].end))
}

fn has_word_sequence(ws: &[Word], phrase: &str) -> bool {
    let target: Vec<String> = phrase.split(' ').map(str::to_string).collect();
    ws.windows(target.len())
        .any(|window| window.iter().zip(&target).all(|(w, t)| w.lower == *t))
}

/// A segment reads as a clause when it has a finite verb or a comparison.
pub(crate) fn is_clause(segment: &[Word]) -> bool {
    segment
        .iter()
        .any(|w| VERBS.contains(&w.lower.as_str()) || is_comparator_symbol(&w.lower))
        || COMPARATOR_PHRASES
            .iter()
            .any(|p| has_word_sequence(segment, p))
}

fn has_subordinator(segment: &[Word]) -> bool {
    SUBORDINATORS.iter().any(|s| has_word_sequence(segment, s))
}

/// Two clauses joined only by a comma, with no subordinator on the left and
/// no connective opening the right: a condition whose link was dropped.
pub(crate) fn comma_splice(text: &str) -> bool {
    let ws = words(text);
    let segments: Vec<&[Word]> = ws.split(|w| w.lower == "," || w.lower == ";").collect();
    segments.windows(2).any(|pair| {
        let (left, right) = (pair[0], pair[1]);
        let opens_with_connective = right
            .first()
            .is_some_and(|w| CONNECTIVES.contains(&w.lower.as_str()));
        is_clause(left) && is_clause(right) && !has_subordinator(left) && !opens_with_connective
    })
}

/// Words after which a magnitude cue's value would have to appear.
pub(crate) const CLAUSE_BREAKS: &[&str] = &[
    "for", "during", "within", "in", "after", "before", "until", "while", "when", "whenever",
    "and", "or", "then", "if", "unless", "once", ",", ";", ":", "but", "since", "from", "between",
    "every",
];

pub(crate) const MAGNITUDE_CUES: &[&str] = &[
    "exceed",
    "exceeds",
    "exceeded",
    "exceeding",
    "increase",
    "increases",
    "increased",
    "increasing",
    "decrease",
    "decreases",
    "decreased",
    "decreasing",
    "rise",
    "rises",
    "drop",
    "drops",
    "fall",
    "falls",
    "above",
    "below",
    "greater",
    "higher",
    "larger",
    "less",
    "lower",
    "smaller",
    "reach",
    "reaches",
    "at least",
    "at most",
];

/// Index of a magnitude cue word (or the last word of a two-word cue) whose
/// clause never states a number.
pub(crate) fn unquantified_magnitude(text: &str) -> Option<usize> {
    let ws = words(text);
    for (i, w) in ws.iter().enumerate() {
        let two = ws.get(i + 1).map(|n| format!("{} {}", w.lower, n.lower));
        let cue_end = if two.as_deref().is_some_and(|t| MAGNITUDE_CUES.contains(&t)) {
            i + 1
        } else if MAGNITUDE_CUES.contains(&w.lower.as_str()) && !w.lower.starts_with("at") {
            i
        } else {
            continue;
        };
        let quantified = ws[cue_end + 1..]
            .iter()
            .take_while(|n| !CLAUSE_BREAKS.contains(&n.lower.as_str()))
            .any(|n| is_number(&n.lower));
        if !quantified {
            return Some(cue_end);
        }
    }
    None
}

pub(crate) const TEMPORAL_KEYWORDS: &[&str] = &["within", "during", "for the next", "in the next"];

/// A temporal keyword with no number among the following three words.
pub(crate) fn unquantified_temporal(text: &str) -> bool {
    let ws = words(text);
    TEMPORAL_KEYWORDS.iter().any(|keyword| {
        let len = keyword.split(' ').count();
        ws.windows(len).enumerate().any(|(i, window)| {
            window
                .iter()
                .zip(keyword.split(' '))
                .all(|(w, k)| w.lower == k)
                && !ws[i + len..].iter().take(3).any(|n| is_number(&n.lower))
        })
    })
}

pub(crate) fn capitalize(text: &str) -> String {
    let mut chars = text.chars();
    match chars.next() {
        Some(first) => first.to_uppercase().chain(chars).collect(),
        None => String::new(),
    }
}

/// Collapses whitespace and drops spaces before commas and periods.
pub(crate) fn tidy(text: &str) -> String {
    let mut out = text.split_whitespace().collect::<Vec<_>>().join(" ");
    for (from, to) in [(" ,", ","), (",,", ","), (" .", ".")] {
        while out.contains(from) {
            out = out.replace(from, to);
        }
    }
    out
}
