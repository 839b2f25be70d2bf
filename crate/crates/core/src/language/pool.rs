use serde::{Deserialize, Serialize};

use super::vocab::Vocabulary;
use super::{Features, SentenceStimulus};
use crate::error::Result;
use crate::task::{Cell, GrammaticalNumber, Rule, Split};

use GrammaticalNumber::{Plural, Singular};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TaskFamily {
    SubjectVerb,
    Anaphora,
}

impl TaskFamily {
    pub fn of(rule: Rule) -> Option<TaskFamily> {
        match rule {
            Rule::SubjectVerb(_) => Some(TaskFamily::SubjectVerb),
            Rule::Anaphora(_) => Some(TaskFamily::Anaphora),
            _ => None,
        }
    }

    /// Default (train, val, test) example counts.
    pub fn default_sizes(self) -> [usize; 3] {
        match self {
            TaskFamily::SubjectVerb => [9500, 500, 1000],
            TaskFamily::Anaphora => [2500, 200, 200],
        }
    }
}

const NUMBERS: [GrammaticalNumber; 2] = [Singular, Plural];

fn pick<'a>(pair: &'a (String, String), n: GrammaticalNumber) -> &'a str {
    match n {
        Singular => &pair.0,
        Plural => &pair.1,
    }
}

struct Builder<'v> {
    vocab: &'v Vocabulary,
    family: TaskFamily,
    out: Vec<SentenceStimulus>,
}

impl<'v> Builder<'v> {
    fn push(&mut self, items: Vec<&str>, first: GrammaticalNumber, second: GrammaticalNumber) -> Result<()> {
        let surface: Vec<String> = items.iter().map(|s| s.to_string()).collect();
        let mut ids = Vec::with_capacity(items.len());
        for item in &items {
            ids.push(
                self.vocab
                    .id(item)
                    .ok_or_else(|| crate::error::Error::OutOfVocabulary(item.to_string()))?,
            );
        }
        let features = match self.family {
            TaskFamily::SubjectVerb => Features::SubjectVerb {
                subject_number: first,
                verb_number: second,
            },
            TaskFamily::Anaphora => Features::Anaphora {
                antecedent_number: first,
                pronoun_number: second,
            },
        };
        self.out.push(SentenceStimulus {
            tokens: self.vocab.pad(ids)?,
            surface,
            features,
        });
        Ok(())
    }

    /// (first noun, second noun) over distinct lemmas, with numbers.
    fn noun_pairs(&self) -> Vec<(&'v (String, String), GrammaticalNumber, &'v (String, String), GrammaticalNumber)> {
        let nouns = &self.vocab.nouns;
        let mut out = Vec::new();
        for (i, a) in nouns.iter().enumerate() {
            for (j, b) in nouns.iter().enumerate() {
                if i == j {
                    continue;
                }
                for na in NUMBERS {
                    for nb in NUMBERS {
                        out.push((a, na, b, nb));
                    }
                }
            }
        }
        out
    }

    /// Verb phrases: copula + adjective, or an intransitive verb.
    fn verb_phrases(&self, n: GrammaticalNumber) -> Vec<Vec<&'v str>> {
        let mut out: Vec<Vec<&str>> = self
            .vocab
            .adjectives
            .iter()
            .map(|adj| vec![pick(&self.vocab.copula, n), adj.as_str()])
            .collect();
        out.extend(self.vocab.intransitive_verbs.iter().map(|v| vec![pick(v, n)]));
        out
    }

    fn subject_verb(&mut self) -> Result<()> {
        let vocab = self.vocab;
        let mut sentences = Vec::new();
        for (n1, num1, n2, num2) in self.noun_pairs() {
            let (s1, s2) = (pick(n1, num1), pick(n2, num2));
            for vn in NUMBERS {
                for vp in self.verb_phrases(vn) {
                    for prep in &vocab.prepositions {
                        sentences.push((concat(&[&["the", s1, prep.as_str(), "the", s2], &vp[..]]), num1, vn));
                    }
                    for tv in &vocab.transitive_verbs {
                        // object relatives, with and without "that"
                        let t2 = pick(tv, num2);
                        sentences.push((concat(&[&["the", s1, "that", "the", s2, t2], &vp[..]]), num1, vn));
                        sentences.push((concat(&[&["the", s1, "the", s2, t2], &vp[..]]), num1, vn));
                        // subject relative: the embedded verb agrees with the subject
                        let t1 = pick(tv, num1);
                        sentences.push((concat(&[&["the", s1, "that", t1, "the", s2], &vp[..]]), num1, vn));
                    }
                }
            }
        }
        for (items, a, b) in sentences {
            self.push(items, a, b)?;
        }
        Ok(())
    }

    fn anaphora(&mut self) -> Result<()> {
        let vocab = self.vocab;
        let pronouns: Vec<(&str, GrammaticalNumber)> = vocab
            .singular_pronouns
            .iter()
            .map(|p| (p.as_str(), Singular))
            .chain(std::iter::once((vocab.plural_pronoun.as_str(), Plural)))
            .collect();
        let mut sentences = Vec::new();
        for n1 in &vocab.nouns {
            for num1 in NUMBERS {
                for rv in &vocab.reflexive_verbs {
                    for &(p, pn) in &pronouns {
                        sentences.push((vec!["the", pick(n1, num1), rv.as_str(), p], num1, pn));
                    }
                }
            }
        }
        for (n1, num1, n2, num2) in self.noun_pairs() {
            let (s1, s2) = (pick(n1, num1), pick(n2, num2));
            for tv in &vocab.transitive_verbs {
                for rv in &vocab.reflexive_verbs {
                    for &(p, pn) in &pronouns {
                        sentences.push((
                            vec!["the", s1, "that", "the", s2, pick(tv, num2), rv.as_str(), p],
                            num1,
                            pn,
                        ));
                    }
                }
            }
        }
        for (items, a, b) in sentences {
            self.push(items, a, b)?;
        }
        Ok(())
    }
}

fn concat<'a>(parts: &[&[&'a str]]) -> Vec<&'a str> {
    parts.iter().flat_map(|p| p.iter().copied()).collect()
}

/// Split a sentence belongs to, from a hash of its surface form
/// (80% train, 10% val, 10% test).
pub fn split_of(surface: &[String]) -> Split {
    let mut hash: u64 = 0xcbf2_9ce4_8422_2325;
    for byte in surface.join(" ").bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0100_0000_01b3);
    }
    match hash % 10 {
        0..=7 => Split::Train,
        8 => Split::Val,
        _ => Split::Test,
    }
}

/// All template instantiations of a family, bucketed by split and by the
/// numbers of the two agreement features.
#[derive(Clone, Debug)]
pub struct SentencePool {
    pub family: TaskFamily,
    pub sentences: Vec<SentenceStimulus>,
    /// `buckets[split][first is plural][second is plural]` -> sentence indices.
    buckets: [[[Vec<usize>; 2]; 2]; 3],
}

fn split_index(split: Split) -> usize {
    match split {
        Split::Train => 0,
        Split::Val => 1,
        Split::Test => 2,
    }
}

fn number_index(n: GrammaticalNumber) -> usize {
    match n {
        Singular => 0,
        Plural => 1,
    }
}

impl SentencePool {
    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }

    /// Indices of sentences in `split` whose features are `(first, second)`.
    pub fn bucket(&self, split: Split, first: GrammaticalNumber, second: GrammaticalNumber) -> &[usize] {
        &self.buckets[split_index(split)][number_index(first)][number_index(second)]
    }

    /// Indices realizing `cell` under a partition: `+` means the feature
    /// matches the partition's number.
    pub fn cell_bucket(&self, split: Split, partition: GrammaticalNumber, cell: Cell) -> &[usize] {
        let number = |hit: bool| if hit { partition } else { partition.flip() };
        self.bucket(split, number(cell.0), number(cell.1))
    }
}

/// Enumerates every template instantiation of `family`. Both partitions use
/// the same pool; a partition only relabels which number counts as `+`.
pub fn expand_templates(vocab: &Vocabulary, family: TaskFamily) -> Result<SentencePool> {
    vocab.validate()?;
    let mut builder = Builder {
        vocab,
        family,
        out: Vec::new(),
    };
    match family {
        TaskFamily::SubjectVerb => builder.subject_verb()?,
        TaskFamily::Anaphora => builder.anaphora()?,
    }
    let mut sentences = builder.out;
    sentences.sort_by(|a, b| a.tokens.cmp(&b.tokens));
    sentences.dedup_by(|a, b| a.tokens == b.tokens);
    let mut buckets: [[[Vec<usize>; 2]; 2]; 3] = Default::default();
    for (i, s) in sentences.iter().enumerate() {
        let (a, b) = s.features.numbers();
        buckets[split_index(split_of(&s.surface))][number_index(a)][number_index(b)].push(i);
    }
    Ok(SentencePool {
        family,
        sentences,
        buckets,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_cell_present_in_every_split() {
        let vocab = Vocabulary::builtin();
        for family in [TaskFamily::SubjectVerb, TaskFamily::Anaphora] {
            let pool = expand_templates(&vocab, family).unwrap();
            for split in Split::ALL {
                for a in NUMBERS {
                    for b in NUMBERS {
                        assert!(pool.bucket(split, a, b).len() >= 50, "{family:?} {split:?} {a:?} {b:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn paper_shaped_sentences_exist() {
        let vocab = Vocabulary::builtin();
        let sv = expand_templates(&vocab, TaskFamily::SubjectVerb).unwrap();
        let has = |pool: &SentencePool, s: &str| pool.sentences.iter().any(|x| x.surface.join(" ") == s);
        assert!(has(&sv, "the farmer near the teachers is old"));
        assert!(has(&sv, "the officers that like the author swims"));
        let an = expand_templates(&vocab, TaskFamily::Anaphora).unwrap();
        assert!(has(&an, "the consultants that the dancers hate injured themselves"));
    }
}
