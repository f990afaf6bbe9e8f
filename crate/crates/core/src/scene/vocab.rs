use std::collections::HashMap;

use super::SceneError;

pub type TokenId = usize;

pub const PAD: TokenId = 0;
pub const BOS: TokenId = 1;
pub const EOS: TokenId = 2;
pub const UNK: TokenId = 3;

pub const RESERVED: [&str; 4] = ["<pad>", "<bos>", "<eos>", "<unk>"];

/// Token/id bijection with four fixed reserved ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens; ids start at 4 in the given
    /// order. Duplicates and reserved names are rejected.
    pub fn new<S: AsRef<str>>(content: &[S]) -> Result<Self, SceneError> {
        let mut tokens: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        let mut index: HashMap<String, TokenId> = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i))
            .collect();
        for tok in content {
            let tok = tok.as_ref();
            if tok.is_empty() || tok.chars().any(char::is_whitespace) {
                return Err(SceneError::Format(format!("invalid token {tok:?}")));
            }
            if index.contains_key(tok) {
                return Err(SceneError::Format(format!("duplicate token {tok:?}")));
            }
            index.insert(tok.to_string(), tokens.len());
            tokens.push(tok.to_string());
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn id(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    /// Content tokens in id order (excludes the reserved ones).
    pub fn content_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    /// Lowercase whitespace tokenization, framed with BOS/EOS.
    pub fn encode(&self, sentence: &str) -> Result<TokenSequence, SceneError> {
        let mut ids = vec![BOS];
        for word in sentence.split_whitespace() {
            let word = word.to_lowercase();
            match self.id(&word) {
                Some(id) if id >= RESERVED.len() => ids.push(id),
                _ => return Err(SceneError::Coverage { token: word }),
            }
        }
        ids.push(EOS);
        TokenSequence::new(ids)
    }

    /// Space-joined content tokens; unknown ids render as `<unk>`.
    pub fn decode(&self, seq: &TokenSequence) -> String {
        seq.content()
            .iter()
            .map(|&id| self.token(id).unwrap_or(RESERVED[UNK]))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Caption ids framed `BOS … EOS` with no interior framing or padding.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TokenSequence {
    ids: Vec<TokenId>,
}

impl TokenSequence {
    pub fn new(ids: Vec<TokenId>) -> Result<Self, SceneError> {
        if ids.len() < 2 || ids[0] != BOS || ids[ids.len() - 1] != EOS {
            return Err(SceneError::Sequence(format!(
                "sequence must start with BOS and end with EOS: {ids:?}"
            )));
        }
        if let Some(pos) = ids[1..ids.len() - 1]
            .iter()
            .position(|&t| t == BOS || t == EOS || t == PAD)
        {
            return Err(SceneError::Sequence(format!(
                "reserved id {} at interior position {}",
                ids[pos + 1],
                pos + 1
            )));
        }
        Ok(Self { ids })
    }

    pub fn from_content(content: &[TokenId]) -> Result<Self, SceneError> {
        let mut ids = Vec::with_capacity(content.len() + 2);
        ids.push(BOS);
        ids.extend_from_slice(content);
        ids.push(EOS);
        Self::new(ids)
    }

    pub fn ids(&self) -> &[TokenId] {
        &self.ids
    }

    pub fn content(&self) -> &[TokenId] {
        &self.ids[1..self.ids.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reserved_ids_are_fixed() {
        let v = Vocabulary::new(&["a", "red"]).unwrap();
        assert_eq!(v.id("<pad>"), Some(PAD));
        assert_eq!(v.id("<bos>"), Some(BOS));
        assert_eq!(v.id("<eos>"), Some(EOS));
        assert_eq!(v.id("<unk>"), Some(UNK));
        assert_eq!(v.id("a"), Some(4));
        assert_eq!(v.token(5), Some("red"));
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn rejects_duplicates_and_reserved() {
        assert!(Vocabulary::new(&["a", "a"]).is_err());
        assert!(Vocabulary::new(&["<eos>"]).is_err());
        assert!(Vocabulary::new(&["two words"]).is_err());
    }

    #[test]
    fn encode_decode() {
        let v = Vocabulary::new(&["a", "red", "square"]).unwrap();
        let s = v.encode("A red square").unwrap();
        assert_eq!(s.ids(), &[BOS, 4, 5, 6, EOS]);
        assert_eq!(v.decode(&s), "a red square");
        assert_eq!(
            v.encode("a blue square"),
            Err(SceneError::Coverage {
                token: "blue".into()
            })
        );
        assert!(v.encode("a <eos> square").is_err());
    }

    #[test]
    fn sequence_invariants() {
        assert!(TokenSequence::new(vec![BOS, EOS]).is_ok());
        assert!(TokenSequence::new(vec![BOS]).is_err());
        assert!(TokenSequence::new(vec![4, EOS]).is_err());
        assert!(TokenSequence::new(vec![BOS, 4, 5]).is_err());
        assert!(TokenSequence::new(vec![BOS, 4, PAD, EOS]).is_err());
        assert!(TokenSequence::new(vec![BOS, BOS, EOS]).is_err());
        assert_eq!(
            TokenSequence::from_content(&[7, 8]).unwrap().content(),
            &[7, 8]
        );
    }
}
