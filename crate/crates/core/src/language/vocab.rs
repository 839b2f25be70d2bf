use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::GrammaticalNumber;

/// Padded sentence length fed to the encoder.
pub const MAX_LEN: usize = 12;
pub const PAD: &str = "<pad>";
pub const PAD_ID: usize = 0;

/// Word classes used by the sentence templates.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocabulary {
    /// (singular, plural)
    pub nouns: Vec<(String, String)>,
    /// Intransitive main verbs, (singular, plural).
    pub intransitive_verbs: Vec<(String, String)>,
    /// Copula, (singular, plural).
    pub copula: (String, String),
    pub adjectives: Vec<String>,
    /// Transitive verbs used inside relative clauses, (singular, plural).
    pub transitive_verbs: Vec<(String, String)>,
    /// Past-tense verbs taking a reflexive object (no agreement).
    pub reflexive_verbs: Vec<String>,
    pub singular_pronouns: Vec<String>,
    pub plural_pronoun: String,
    pub prepositions: Vec<String>,
    /// Index = token id. Id 0 is padding.
    pub tokens: Vec<String>,
    #[serde(skip)]
    ids: HashMap<String, usize>,
}

fn pairs(items: &[(&str, &str)]) -> Vec<(String, String)> {
    items.iter().map(|(s, p)| (s.to_string(), p.to_string())).collect()
}

fn words(items: &[&str]) -> Vec<String> {
    items.iter().map(|s| s.to_string()).collect()
}

impl Vocabulary {
    pub fn builtin() -> Self {
        let mut vocab = Vocabulary {
            nouns: pairs(&[
                ("farmer", "farmers"),
                ("surgeon", "surgeons"),
                ("senator", "senators"),
                ("pilot", "pilots"),
                ("teacher", "teachers"),
                ("officer", "officers"),
                ("consultant", "consultants"),
                ("manager", "managers"),
                ("author", "authors"),
                ("customer", "customers"),
                ("dancer", "dancers"),
                ("taxi driver", "taxi drivers"),
            ]),
            intransitive_verbs: pairs(&[("laughs", "laugh"), ("smiles", "smile"), ("swims", "swim")]),
            copula: ("is".into(), "are".into()),
            adjectives: words(&["old", "young", "tall", "short"]),
            transitive_verbs: pairs(&[("likes", "like"), ("admires", "admire"), ("hates", "hate")]),
            reflexive_verbs: words(&["hurt", "injured", "embarrassed", "congratulated"]),
            singular_pronouns: words(&["himself", "herself"]),
            plural_pronoun: "themselves".into(),
            prepositions: words(&["near", "behind", "in front of", "to the side of", "across from"]),
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        vocab.rebuild_ids();
        vocab
    }

    fn rebuild_ids(&mut self) {
        let mut tokens = vec![PAD.to_string(), "the".into(), "that".into()];
        for (s, p) in self
            .nouns
            .iter()
            .chain(&self.intransitive_verbs)
            .chain(std::iter::once(&self.copula))
            .chain(&self.transitive_verbs)
        {
            tokens.push(s.clone());
            tokens.push(p.clone());
        }
        tokens.extend(self.adjectives.iter().cloned());
        tokens.extend(self.reflexive_verbs.iter().cloned());
        tokens.extend(self.singular_pronouns.iter().cloned());
        tokens.push(self.plural_pronoun.clone());
        tokens.extend(self.prepositions.iter().cloned());
        self.ids = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        self.tokens = tokens;
    }

    /// Rejects empty template slots and duplicate tokens.
    pub fn validate(&self) -> Result<()> {
        let slots = [
            ("nouns", self.nouns.len()),
            ("intransitive_verbs", self.intransitive_verbs.len()),
            ("adjectives", self.adjectives.len()),
            ("transitive_verbs", self.transitive_verbs.len()),
            ("reflexive_verbs", self.reflexive_verbs.len()),
            ("singular_pronouns", self.singular_pronouns.len()),
            ("prepositions", self.prepositions.len()),
        ];
        if let Some((name, n)) = slots.iter().find(|(_, n)| *n < 2) {
            return Err(Error::Config(format!("template slot {name} has {n} fillers, needs at least 2")));
        }
        if self.ids.len() != self.tokens.len() {
            return Err(Error::Config("vocabulary has duplicate tokens".into()));
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let mut vocab: Vocabulary = serde_json::from_str(text)?;
        let stored = std::mem::take(&mut vocab.tokens);
        vocab.rebuild_ids();
        if !stored.is_empty() && stored != vocab.tokens {
            return Err(Error::Format {
                what: "vocabulary",
                detail: "token table does not match word classes".into(),
            });
        }
        vocab.validate()?;
        Ok(vocab)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Result<&str> {
        self.tokens.get(id).map(String::as_str).ok_or(Error::UnknownToken(id))
    }

    /// Longest multiword entry, in words.
    fn max_words(&self) -> usize {
        self.tokens.iter().map(|t| t.split(' ').count()).max().unwrap_or(1)
    }

    /// Splits a sentence into vocabulary items (multiword items greedily,
    /// longest first), maps them to ids and left-pads to [`MAX_LEN`].
    pub fn tokenize(&self, sentence: &str) -> Result<Vec<usize>> {
        let words: Vec<&str> = sentence.split_whitespace().collect();
        let mut ids = Vec::new();
        let mut i = 0;
        while i < words.len() {
            let longest = self.max_words().min(words.len() - i);
            let found = (1..=longest).rev().find_map(|n| {
                let candidate = words[i..i + n].join(" ");
                self.id(&candidate).filter(|&id| id != PAD_ID).map(|id| (id, n))
            });
            let (id, n) = found.ok_or_else(|| Error::OutOfVocabulary(words[i].to_string()))?;
            ids.push(id);
            i += n;
        }
        self.pad(ids)
    }

    pub fn pad(&self, ids: Vec<usize>) -> Result<Vec<usize>> {
        if ids.len() > MAX_LEN {
            return Err(Error::Config(format!("sentence of {} tokens exceeds {MAX_LEN}", ids.len())));
        }
        let mut padded = vec![PAD_ID; MAX_LEN - ids.len()];
        padded.extend(ids);
        Ok(padded)
    }

    pub fn detokenize(&self, ids: &[usize]) -> Result<String> {
        let mut words = Vec::new();
        for &id in ids.iter().filter(|&&id| id != PAD_ID) {
            words.push(self.token(id)?);
        }
        Ok(words.join(" "))
    }

    /// Number of a noun form, if the token is a noun.
    pub fn noun_number(&self, token: &str) -> Option<GrammaticalNumber> {
        number_in(&self.nouns, token)
    }

    /// Number of an agreeing verb form (copula, intransitive or transitive).
    pub fn verb_number(&self, token: &str) -> Option<GrammaticalNumber> {
        number_in(std::slice::from_ref(&self.copula), token)
            .or_else(|| number_in(&self.intransitive_verbs, token))
            .or_else(|| number_in(&self.transitive_verbs, token))
    }

    pub fn pronoun_number(&self, token: &str) -> Option<GrammaticalNumber> {
        if self.singular_pronouns.iter().any(|p| p == token) {
            Some(GrammaticalNumber::Singular)
        } else if self.plural_pronoun == token {
            Some(GrammaticalNumber::Plural)
        } else {
            None
        }
    }
}

fn number_in(pairs: &[(String, String)], token: &str) -> Option<GrammaticalNumber> {
    pairs.iter().find_map(|(s, p)| {
        if s == token {
            Some(GrammaticalNumber::Singular)
        } else if p == token {
            Some(GrammaticalNumber::Plural)
        } else {
            None
        }
    })
}
