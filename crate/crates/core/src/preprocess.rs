//! Text cleaning: lowercase, contraction expansion, URL and mention removal,
//! tokenisation, stopword removal and a small rule-based lemmatiser.
//!
//! All tables are plain data and can be replaced from files, so the whole
//! pipeline is a pure function of (input, tables).

use std::collections::{BTreeMap, BTreeSet};
use std::sync::OnceLock;

use regex::Regex;

/// Version tag of the built-in stoplist; bump when the list changes.
pub const STOPLIST_VERSION: &str = "en-v1";

const DEFAULT_STOPWORDS: &[&str] = &[
    "a", "about", "above", "after", "again", "against", "ain", "all", "am", "an", "and", "any", "are", "as",
    "at", "be", "because", "been", "before", "being", "below", "between", "both", "but", "by", "can", "could",
    "d", "did", "do", "does", "doing", "down", "during", "each", "few", "for", "from", "further", "had", "has",
    "have", "having", "he", "her", "here", "hers", "herself", "him", "himself", "his", "how", "i", "if", "in",
    "into", "is", "it", "its", "itself", "just", "ll", "m", "ma", "me", "more", "most", "my", "myself", "no",
    "nor", "not", "now", "o", "of", "off", "on", "once", "only", "or", "other", "our", "ours", "ourselves",
    "out", "over", "own", "re", "s", "same", "she", "should", "so", "some", "such", "t", "than", "that", "the",
    "their", "theirs", "them", "themselves", "then", "there", "these", "they", "this", "those", "through", "to",
    "too", "under", "until", "up", "ve", "very", "was", "we", "were", "what", "when", "where", "which", "while",
    "who", "whom", "why", "will", "with", "would", "y", "you", "your", "yours", "yourself", "yourselves",
];

const DEFAULT_CONTRACTIONS: &[(&str, &str)] = &[
    ("ain't", "am not"),
    ("aren't", "are not"),
    ("can't", "cannot"),
    ("can't've", "cannot have"),
    ("could've", "could have"),
    ("couldn't", "could not"),
    ("couldn't've", "could not have"),
    ("didn't", "did not"),
    ("doesn't", "does not"),
    ("don't", "do not"),
    ("hadn't", "had not"),
    ("hasn't", "has not"),
    ("haven't", "have not"),
    ("he'd", "he would"),
    ("he'll", "he will"),
    ("he's", "he is"),
    ("how'd", "how did"),
    ("how's", "how is"),
    ("i'd", "i would"),
    ("i'll", "i will"),
    ("i'm", "i am"),
    ("i've", "i have"),
    ("isn't", "is not"),
    ("it'd", "it would"),
    ("it'll", "it will"),
    ("it's", "it is"),
    ("let's", "let us"),
    ("ma'am", "madam"),
    ("mightn't", "might not"),
    ("might've", "might have"),
    ("mustn't", "must not"),
    ("must've", "must have"),
    ("needn't", "need not"),
    ("o'clock", "of the clock"),
    ("shan't", "shall not"),
    ("she'd", "she would"),
    ("she'll", "she will"),
    ("she's", "she is"),
    ("should've", "should have"),
    ("shouldn't", "should not"),
    ("that's", "that is"),
    ("there's", "there is"),
    ("they'd", "they would"),
    ("they'll", "they will"),
    ("they're", "they are"),
    ("they've", "they have"),
    ("wasn't", "was not"),
    ("we'd", "we would"),
    ("we'll", "we will"),
    ("we're", "we are"),
    ("we've", "we have"),
    ("weren't", "were not"),
    ("what's", "what is"),
    ("where's", "where is"),
    ("who's", "who is"),
    ("won't", "will not"),
    ("wouldn't", "would not"),
    ("y'all", "you all"),
    ("you'd", "you would"),
    ("you'll", "you will"),
    ("you're", "you are"),
    ("you've", "you have"),
];

const DEFAULT_LEMMA_EXCEPTIONS: &[(&str, &str)] = &[
    ("adding", "add"),
    ("always", "always"),
    ("across", "across"),
    ("bus", "bus"),
    ("children", "child"),
    ("does", "do"),
    ("feet", "foot"),
    ("gas", "gas"),
    ("has", "have"),
    ("his", "his"),
    ("its", "its"),
    ("lies", "lie"),
    ("men", "man"),
    ("mice", "mouse"),
    ("news", "news"),
    ("perhaps", "perhaps"),
    ("ran", "run"),
    ("series", "series"),
    ("species", "species"),
    ("this", "this"),
    ("thus", "thus"),
    ("was", "was"),
    ("went", "go"),
    ("women", "woman"),
    ("yes", "yes"),
];

/// Contraction surface form (lowercase, ASCII apostrophe) to expansion.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContractionTable {
    entries: BTreeMap<String, String>,
}

impl Default for ContractionTable {
    fn default() -> Self {
        ContractionTable {
            entries: DEFAULT_CONTRACTIONS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl ContractionTable {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        ContractionTable {
            entries: entries
                .into_iter()
                .map(|(k, v)| (normalize_apostrophes(&k.to_lowercase()), v))
                .collect(),
        }
    }

    /// Parses `surface<TAB>expansion` lines; blank lines and `#` comments are skipped.
    pub fn parse(contents: &str) -> Result<Self, String> {
        let mut entries = Vec::new();
        for (n, line) in contents.lines().enumerate() {
            let line = line.trim_end_matches('\r');
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (surface, expansion) = line
                .split_once('\t')
                .ok_or_else(|| format!("line {}: expected surface<TAB>expansion", n + 1))?;
            entries.push((surface.trim().to_string(), expansion.trim().to_string()));
        }
        Ok(ContractionTable::new(entries))
    }

    pub fn get(&self, surface: &str) -> Option<&str> {
        self.entries.get(surface).map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stoplist {
    words: BTreeSet<String>,
}

impl Default for Stoplist {
    fn default() -> Self {
        Stoplist {
            words: DEFAULT_STOPWORDS.iter().map(|w| w.to_string()).collect(),
        }
    }
}

impl Stoplist {
    pub fn new(words: impl IntoIterator<Item = String>) -> Self {
        Stoplist {
            words: words.into_iter().map(|w| w.to_lowercase()).collect(),
        }
    }

    /// One word per line.
    pub fn parse(contents: &str) -> Self {
        Stoplist::new(
            contents
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty() && !l.starts_with('#'))
                .map(str::to_string),
        )
    }

    pub fn contains(&self, word: &str) -> bool {
        self.words.contains(word)
    }

    pub fn extend(&mut self, words: impl IntoIterator<Item = String>) {
        self.words.extend(words.into_iter().map(|w| w.to_lowercase()));
    }

    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LemmaExceptions {
    map: BTreeMap<String, String>,
}

impl Default for LemmaExceptions {
    fn default() -> Self {
        LemmaExceptions {
            map: DEFAULT_LEMMA_EXCEPTIONS
                .iter()
                .map(|(k, v)| (k.to_string(), v.to_string()))
                .collect(),
        }
    }
}

impl LemmaExceptions {
    pub fn new(entries: impl IntoIterator<Item = (String, String)>) -> Self {
        LemmaExceptions {
            map: entries.into_iter().collect(),
        }
    }

    pub fn get(&self, word: &str) -> Option<&str> {
        self.map.get(word).map(String::as_str)
    }
}

fn normalize_apostrophes(s: &str) -> String {
    s.replace(['\u{2019}', '\u{2018}', '`'], "'")
}

fn url_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?:https?://|www\.)\S*").expect("valid url regex"))
}

fn mention_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"@\w+").expect("valid mention regex"))
}

fn expand_contractions(text: &str, table: &ContractionTable) -> String {
    let mut out = String::with_capacity(text.len());
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if word.is_empty() {
            return;
        }
        let core = word.trim_matches('\'');
        match table.get(core) {
            Some(expansion) => {
                out.push(' ');
                out.push_str(expansion);
                out.push(' ');
            }
            None => out.push_str(word),
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() || c == '\'' {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

fn is_kept_char(c: char) -> bool {
    c.is_alphanumeric() && c.to_lowercase().eq(std::iter::once(c))
}

/// Lowercases, removes URLs and @-mentions, expands contractions, replaces
/// every other non-alphanumeric character with a space and collapses spaces.
pub fn clean_text(raw: &str, table: &ContractionTable) -> String {
    let lowered = normalize_apostrophes(&raw.to_lowercase());
    let no_urls = url_regex().replace_all(&lowered, " ");
    let no_mentions = mention_regex().replace_all(&no_urls, " ");
    let expanded = expand_contractions(&no_mentions, table);
    let mut cleaned = String::with_capacity(expanded.len());
    let mut pending_space = false;
    for c in expanded.chars() {
        if is_kept_char(c) {
            if pending_space && !cleaned.is_empty() {
                cleaned.push(' ');
            }
            pending_space = false;
            cleaned.push(c);
        } else {
            pending_space = true;
        }
    }
    cleaned
}

/// Splits cleaned text on single spaces.
pub fn tokenize(cleaned: &str) -> Vec<String> {
    if cleaned.is_empty() {
        return Vec::new();
    }
    let tokens: Vec<String> = cleaned.split(' ').map(str::to_string).collect();
    debug_assert!(
        tokens.iter().all(|t| !t.is_empty()),
        "tokenize expects cleaned text (single spaces, no padding): {cleaned:?}"
    );
    tokens
}

pub fn remove_stopwords(tokens: &[String], stoplist: &Stoplist) -> Vec<String> {
    tokens.iter().filter(|t| !stoplist.contains(t)).cloned().collect()
}

fn is_vowel(c: u8) -> bool {
    matches!(c, b'a' | b'e' | b'i' | b'o' | b'u')
}

fn has_vowel(stem: &str) -> bool {
    let b = stem.as_bytes();
    b.iter().enumerate().any(|(i, &c)| is_vowel(c) || (c == b'y' && i > 0))
}

fn undouble(mut stem: String) -> String {
    let b = stem.as_bytes();
    let n = b.len();
    if n >= 2 && b[n - 1] == b[n - 2] && !is_vowel(b[n - 1]) && !matches!(b[n - 1], b'l' | b's' | b'z') {
        stem.pop();
    }
    stem
}

/// Restores the silent `e` lost with `-ing`/`-ed` (`dating` -> `date`,
/// `disabled` -> `disable`), leaving doubled-consonant stems alone.
fn restore_e(stem: &str) -> String {
    let undoubled = undouble(stem.to_string());
    if undoubled.len() != stem.len() {
        return undoubled;
    }
    let b = stem.as_bytes();
    let short_cvc =
        b.len() == 3 && !is_vowel(b[0]) && is_vowel(b[1]) && !is_vowel(b[2]) && !matches!(b[2], b'w' | b'x' | b'y');
    let consonant_at = stem.ends_with("at") && b.len() >= 3 && !is_vowel(b[b.len() - 3]);
    if consonant_at || stem.ends_with("bl") || stem.ends_with("iz") || short_cvc {
        format!("{stem}e")
    } else {
        undoubled
    }
}

/// One application of the ordered suffix rules; `None` when no rule fires.
fn strip_suffix_once(word: &str) -> Option<String> {
    if !word.is_ascii() {
        return None;
    }
    let len = word.len();
    if len > 4 && word.ends_with("ies") {
        return Some(format!("{}y", &word[..len - 3]));
    }
    if word.ends_with("sses") {
        return Some(word[..len - 2].to_string());
    }
    if let Some(stem) = word.strip_suffix("ing") {
        if stem.len() >= 3 && has_vowel(stem) {
            return Some(restore_e(stem));
        }
        return None;
    }
    if let Some(stem) = word.strip_suffix("ed") {
        if stem.len() >= 3 && has_vowel(stem) {
            return Some(restore_e(stem));
        }
        return None;
    }
    if len >= 4 && word.ends_with('s') && !(word.ends_with("ss") || word.ends_with("us") || word.ends_with("is")) {
        return Some(word[..len - 1].to_string());
    }
    None
}

/// Lemmatises one token: exceptions first, then suffix rules, repeated until
/// nothing changes, so the output is a fixed point.
pub fn lemmatize_word(word: &str, exceptions: &LemmaExceptions) -> String {
    let mut current = word.to_string();
    for _ in 0..=word.len() {
        let next = match exceptions.get(&current) {
            Some(mapped) => mapped.to_string(),
            None => match strip_suffix_once(&current) {
                Some(s) => s,
                None => break,
            },
        };
        if next == current {
            break;
        }
        current = next;
    }
    current
}

pub fn lemmatize(tokens: &[String], exceptions: &LemmaExceptions) -> Vec<String> {
    tokens.iter().map(|t| lemmatize_word(t, exceptions)).collect()
}

/// Output of the full cleaning pipeline for one text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CleanText {
    pub original: String,
    pub cleaned: String,
    pub tokens: Vec<String>,
    /// Lemmas of `tokens` with stopwords removed (checked on both surface and lemma).
    pub content_tokens: Vec<String>,
}

/// Bundles the tables used by the cleaning pipeline.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Preprocessor {
    pub contractions: ContractionTable,
    pub stoplist: Stoplist,
    pub exceptions: LemmaExceptions,
}

impl Preprocessor {
    pub fn clean(&self, raw: &str) -> String {
        clean_text(raw, &self.contractions)
    }

    pub fn process(&self, raw: &str) -> CleanText {
        let cleaned = self.clean(raw);
        let tokens = tokenize(&cleaned);
        let content_tokens = tokens
            .iter()
            .filter(|t| !self.stoplist.contains(t))
            .map(|t| lemmatize_word(t, &self.exceptions))
            .filter(|l| !self.stoplist.contains(l))
            .collect();
        CleanText {
            original: raw.to_string(),
            cleaned,
            tokens,
            content_tokens,
        }
    }

    /// Content tokens only.
    pub fn content_tokens(&self, raw: &str) -> Vec<String> {
        self.process(raw).content_tokens
    }
}
