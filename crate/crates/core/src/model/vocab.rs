//! Token vocabulary with reserved entity-marker slots.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::corpus::{Instance, MARKERS};

/// Index of the unknown-token embedding.
pub const UNK_INDEX: usize = 4;

/// Marker indices: `[E11]`/`[E12]` bracket the head entity, `[E21]`/`[E22]`
/// the tail entity.
pub const E11: usize = 0;
pub const E12: usize = 1;
pub const E21: usize = 2;
pub const E22: usize = 3;

const UNK_TOKEN: &str = "[UNK]";

/// Dense token-to-index map. Indices 0-3 are the entity markers, 4 is the
/// unknown token; corpus tokens follow in first-appearance order, which makes
/// construction deterministic for a fixed instance order.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    tokens: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, usize>,
}

impl Vocab {
    pub fn build<'a>(instances: impl IntoIterator<Item = &'a Instance>) -> Vocab {
        let mut tokens: Vec<String> = MARKERS.iter().map(|m| m.to_string()).collect();
        tokens.push(UNK_TOKEN.to_string());
        let mut index: HashMap<String, usize> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for inst in instances {
            for tok in &inst.tokens {
                if !index.contains_key(tok) {
                    index.insert(tok.clone(), tokens.len());
                    tokens.push(tok.clone());
                }
            }
        }
        Vocab { tokens, index }
    }

    /// Rebuild the lookup map after deserialization.
    pub fn reindex(&mut self) {
        self.index = self
            .tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
    }

    pub fn lookup(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK_INDEX)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn token(&self, idx: usize) -> &str {
        &self.tokens[idx]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Span;

    fn inst(tokens: &[&str]) -> Instance {
        Instance {
            instance_id: "t".into(),
            tokens: tokens.iter().map(|t| t.to_string()).collect(),
            head_span: Span::new(0, 1),
            tail_span: Span::new(1, 2),
            relation: 0,
        }
    }

    #[test]
    fn markers_sit_at_fixed_indices() {
        let v = Vocab::build([&inst(&["a", "b"])]);
        assert_eq!(v.lookup("[E11]"), E11);
        assert_eq!(v.lookup("[E12]"), E12);
        assert_eq!(v.lookup("[E21]"), E21);
        assert_eq!(v.lookup("[E22]"), E22);
        assert_eq!(v.lookup("a"), 5);
        assert_eq!(v.lookup("b"), 6);
    }

    #[test]
    fn unknown_tokens_map_to_unk() {
        let v = Vocab::build([&inst(&["a", "b"])]);
        assert_eq!(v.lookup("never-seen"), UNK_INDEX);
    }

    #[test]
    fn build_order_is_first_appearance() {
        let a = inst(&["x", "y"]);
        let b = inst(&["y", "z"]);
        let v = Vocab::build([&a, &b]);
        assert_eq!(v.lookup("x"), 5);
        assert_eq!(v.lookup("y"), 6);
        assert_eq!(v.lookup("z"), 7);
        assert_eq!(v.len(), 8);
    }
}
