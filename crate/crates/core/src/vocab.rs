//! Character vocabulary with four reserved specials.

use serde::{Deserialize, Serialize};

pub const PAD: usize = 0;
pub const BOS: usize = 1;
pub const EOS: usize = 2;
pub const UNK: usize = 3;
pub const NUM_SPECIALS: usize = 4;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    chars: Vec<char>,
}

impl Vocab {
    /// Space plus the given alphabet, after the specials.
    pub fn new(alphabet: &[char]) -> Self {
        let mut chars = vec![' '];
        for &c in alphabet {
            if !chars.contains(&c) {
                chars.push(c);
            }
        }
        Vocab { chars }
    }

    pub fn len(&self) -> usize {
        NUM_SPECIALS + self.chars.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        text.chars()
            .map(|c| {
                self.chars
                    .iter()
                    .position(|&v| v == c)
                    .map_or(UNK, |i| i + NUM_SPECIALS)
            })
            .collect()
    }

    /// Specials other than `UNK` are dropped.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter_map(|&id| match id {
                UNK => Some('?'),
                id if id >= NUM_SPECIALS => self.chars.get(id - NUM_SPECIALS).copied(),
                _ => None,
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_and_unknowns() {
        let v = Vocab::new(&['a', 'b', 'c']);
        assert_eq!(v.len(), 8);
        let ids = v.encode("ab ca");
        assert_eq!(ids, vec![5, 6, 4, 7, 5]);
        assert_eq!(v.decode(&ids), "ab ca");
        assert_eq!(v.encode("z"), vec![UNK]);
        assert_eq!(v.decode(&[BOS, 5, EOS, PAD]), "a");
    }
}
