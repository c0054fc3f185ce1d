use std::sync::OnceLock;

use regex::Regex;

use super::PriorError;

/// Items dropped after parsing even when the model lists them.
pub const ABSTRACT_STOPLIST: &[&str] = &["left", "right", "straight", "wind", "support"];

fn item_regex() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(\d+)\s*[.):\-]\s*(.*)$").unwrap())
}

/// Extracts phrases from lines carrying an index prefix (`1.`, `2)`, `3 -`).
///
/// Lines and `;`-separated segments are both treated as item boundaries, so
/// `1.first level; 2.lounge;` on a single line parses the same as one item
/// per line. Trailing `;`/`.` are stripped and phrases are lowercased.
pub fn parse_numbered_list(text: &str) -> Result<Vec<String>, PriorError> {
    let re = item_regex();
    let mut out = Vec::new();
    for segment in text.split(['\n', ';']) {
        let segment = segment.trim();
        let Some(caps) = re.captures(segment) else {
            continue;
        };
        let phrase = caps[2]
            .trim()
            .trim_end_matches(|c: char| c == ';' || c == '.' || c.is_whitespace())
            .to_lowercase();
        if !phrase.is_empty() {
            out.push(phrase);
        }
    }
    if out.is_empty() {
        return Err(PriorError::NoItemsFound);
    }
    Ok(out)
}

pub fn drop_abstract(items: Vec<String>) -> Vec<String> {
    items
        .into_iter()
        .filter(|p| !ABSTRACT_STOPLIST.contains(&p.as_str()))
        .collect()
}

/// Keeps the first occurrence of each phrase.
pub fn dedup_keep_first(items: Vec<String>) -> Vec<String> {
    let mut seen = std::collections::HashSet::new();
    items.into_iter().filter(|p| seen.insert(p.clone())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::priors::prompt::render_numbered_list;
    use proptest::prelude::*;

    #[test]
    fn reverie_example() {
        let got = parse_numbered_list("1.first level;\n2.lounge;\n3.fireplace;\n4.trinket.").unwrap();
        assert_eq!(got, ["first level", "lounge", "fireplace", "trinket"]);
    }

    #[test]
    fn cooccurrence_example() {
        let got = parse_numbered_list("1. bed;\n2. mirror;\n3. nightstand;").unwrap();
        assert_eq!(got, ["bed", "mirror", "nightstand"]);
    }

    #[test]
    fn single_line_list() {
        let got = parse_numbered_list("1.first level; 2.lounge; 3.fireplace; 4.trinket.").unwrap();
        assert_eq!(got, ["first level", "lounge", "fireplace", "trinket"]);
    }

    #[test]
    fn alternative_index_styles() {
        let got = parse_numbered_list("Here you go:\n1) TV\n2 - bathroom\n3. bathroom door.\nthanks").unwrap();
        assert_eq!(got, ["tv", "bathroom", "bathroom door"]);
    }

    #[test]
    fn phrases_with_digits_and_hyphens() {
        let got = parse_numbered_list("1. level 2;\n2. wood-paneled room.").unwrap();
        assert_eq!(got, ["level 2", "wood-paneled room"]);
    }

    #[test]
    fn no_items() {
        assert!(matches!(
            parse_numbered_list("Sure! Here are the landmarks:"),
            Err(PriorError::NoItemsFound)
        ));
        assert!(matches!(parse_numbered_list(""), Err(PriorError::NoItemsFound)));
    }

    #[test]
    fn stoplist_and_dedup() {
        let items = vec!["hallway".into(), "left".into(), "hallway".into(), "wind".into()];
        let filtered = drop_abstract(items);
        assert_eq!(filtered, ["hallway", "hallway"]);
        assert_eq!(dedup_keep_first(filtered), ["hallway"]);
    }

    proptest! {
        #[test]
        fn render_then_parse_round_trips(xs in proptest::collection::vec("[a-z][a-z0-9 -]{0,12}[a-z]", 1..12)) {
            let xs: Vec<String> = xs
                .into_iter()
                .map(|x| x.split_whitespace().collect::<Vec<_>>().join(" "))
                .collect();
            let refs: Vec<&str> = xs.iter().map(String::as_str).collect();
            let parsed = parse_numbered_list(&render_numbered_list(&refs)).unwrap();
            prop_assert_eq!(parsed, xs);
        }
    }
}
