/// English stopwords. The common 179-word list minus the negators and
/// quantity words `no`, `nor`, `not`, `few`, `against`, which carry meaning in
/// clinical text.
pub const STOPWORDS: [&str; 174] = [
    "i", "me", "my", "myself", "we", "our", "ours", "ourselves", "you", "you're", "you've", "you'll", "you'd",
    "your", "yours", "yourself", "yourselves", "he", "him", "his", "himself", "she", "she's", "her", "hers",
    "herself", "it", "it's", "its", "itself", "they", "them", "their", "theirs", "themselves", "what", "which",
    "who", "whom", "this", "that", "that'll", "these", "those", "am", "is", "are", "was", "were", "be", "been",
    "being", "have", "has", "had", "having", "do", "does", "did", "doing", "a", "an", "the", "and", "but", "if",
    "or", "because", "as", "until", "while", "of", "at", "by", "for", "with", "about", "between", "into",
    "through", "during", "before", "after", "above", "below", "to", "from", "up", "down", "in", "out", "on",
    "off", "over", "under", "again", "further", "then", "once", "here", "there", "when", "where", "why", "how",
    "all", "any", "both", "each", "more", "most", "other", "some", "such", "only", "own", "same", "so", "than",
    "too", "very", "s", "t", "can", "will", "just", "don", "don't", "should", "should've", "now", "d", "ll", "m",
    "o", "re", "ve", "y", "ain", "aren", "aren't", "couldn", "couldn't", "didn", "didn't", "doesn", "doesn't",
    "hadn", "hadn't", "hasn", "hasn't", "haven", "haven't", "isn", "isn't", "ma", "mightn", "mightn't", "mustn",
    "mustn't", "needn", "needn't", "shan", "shan't", "shouldn", "shouldn't", "wasn", "wasn't", "weren",
    "weren't", "won", "won't", "wouldn", "wouldn't",
];

fn is_stopword(token: &str) -> bool {
    STOPWORDS.contains(&token)
}

/// Lowercases, turns every non-letter (digits, punctuation, the `___`
/// de-identification marks) into a separator and drops stopwords.
pub fn normalize_text(text: &str) -> Vec<String> {
    let cleaned: String = text
        .chars()
        .map(|c| if c.is_alphabetic() { c } else { ' ' })
        .flat_map(char::to_lowercase)
        .collect();
    cleaned.split_whitespace().filter(|t| !is_stopword(t)).map(str::to_string).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::collections::HashSet;

    #[test]
    fn stopword_list_is_distinct_and_keeps_negators() {
        let set: HashSet<_> = STOPWORDS.iter().collect();
        assert_eq!(set.len(), 174);
        for kept in ["no", "not", "nor", "few", "against"] {
            assert!(!is_stopword(kept));
        }
    }

    #[test]
    fn examples() {
        assert_eq!(normalize_text("Chest X-Ray 2: no edema."), ["chest", "x", "ray", "no", "edema"]);
        assert!(normalize_text("").is_empty());
        assert!(normalize_text("THE the The").is_empty());
        assert_eq!(normalize_text("Pt ___ seen on ___, 10mg"), ["pt", "seen", "mg"]);
    }

    proptest! {
        #[test]
        fn tokens_are_lowercase_letters_without_stopwords(s in "\\PC{0,80}") {
            for t in normalize_text(&s) {
                prop_assert!(!t.is_empty());
                prop_assert!(t.chars().all(char::is_alphabetic));
                prop_assert!(!is_stopword(&t));
                prop_assert_eq!(t.to_lowercase(), t.clone());
            }
        }
    }
}
