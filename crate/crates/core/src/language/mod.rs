//! Templated agreement sentences for subject-verb agreement and reflexive
//! anaphora, in singular and plural partitions.

mod pool;
mod vocab;

use std::collections::HashSet;
use std::sync::OnceLock;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

pub use pool::{expand_templates, split_of, SentencePool, TaskFamily};
pub use vocab::{Vocabulary, MAX_LEN, PAD, PAD_ID};

use crate::dataset::{Dataset, DatasetMeta, OddOneOutExample, Stimulus, StimulusInput};
use crate::error::{Error, Result};
use crate::rng::{self, Rng};
use crate::task::{follows_rule, plan_cells, Cell, GrammaticalNumber, OddOtherFactor, Rule, TaskSpec};

/// Odd cells of the base task. The doubly mismatching cell is a grammatical
/// sentence of the other partition and is never used.
pub const BASE_VIOLATORS: [Cell; 2] = [Cell(false, true), Cell(true, false)];

/// Numbers of the two agreement features of a sentence.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Features {
    SubjectVerb {
        subject_number: GrammaticalNumber,
        verb_number: GrammaticalNumber,
    },
    Anaphora {
        antecedent_number: GrammaticalNumber,
        pronoun_number: GrammaticalNumber,
    },
}

impl Features {
    /// (noun of interest, agreeing word).
    pub fn numbers(self) -> (GrammaticalNumber, GrammaticalNumber) {
        match self {
            Features::SubjectVerb {
                subject_number,
                verb_number,
            } => (subject_number, verb_number),
            Features::Anaphora {
                antecedent_number,
                pronoun_number,
            } => (antecedent_number, pronoun_number),
        }
    }

    pub fn family(self) -> TaskFamily {
        match self {
            Features::SubjectVerb { .. } => TaskFamily::SubjectVerb,
            Features::Anaphora { .. } => TaskFamily::Anaphora,
        }
    }

    /// The factor cell under a partition: `+` where a feature matches it.
    pub fn cell(self, partition: GrammaticalNumber) -> Cell {
        let (a, b) = self.numbers();
        Cell(a == partition, b == partition)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SentenceStimulus {
    /// Left-padded ids of length [`MAX_LEN`].
    pub tokens: Vec<usize>,
    /// Vocabulary items, multiword items kept whole.
    pub surface: Vec<String>,
    pub features: Features,
}

impl SentenceStimulus {
    pub fn text(&self) -> String {
        self.surface.join(" ")
    }
}

impl Stimulus for SentenceStimulus {
    fn model_input(&self) -> StimulusInput {
        StimulusInput::Tokens(self.tokens.clone())
    }
}

/// Recomputes agreement features from the surface form alone: the noun of
/// interest is the second item; the agreeing word is the pronoun (anaphora)
/// or the last agreeing verb (subject-verb).
pub fn recompute_features(vocab: &Vocabulary, family: TaskFamily, surface: &[String]) -> Result<Features> {
    let bad = |detail: &str| Error::Format {
        what: "sentence",
        detail: format!("{detail}: {:?}", surface.join(" ")),
    };
    let noun = surface
        .get(1)
        .and_then(|w| vocab.noun_number(w))
        .ok_or_else(|| bad("second item is not a noun"))?;
    Ok(match family {
        TaskFamily::SubjectVerb => {
            let verb = surface
                .iter()
                .rev()
                .find_map(|w| vocab.verb_number(w))
                .ok_or_else(|| bad("no agreeing verb"))?;
            Features::SubjectVerb {
                subject_number: noun,
                verb_number: verb,
            }
        }
        TaskFamily::Anaphora => {
            let pronoun = surface
                .last()
                .and_then(|w| vocab.pronoun_number(w))
                .ok_or_else(|| bad("no final pronoun"))?;
            Features::Anaphora {
                antecedent_number: noun,
                pronoun_number: pronoun,
            }
        }
    })
}

fn partition_of(rule: Rule) -> Result<(TaskFamily, GrammaticalNumber)> {
    match rule {
        Rule::SubjectVerb(n) => Ok((TaskFamily::SubjectVerb, n)),
        Rule::Anaphora(n) => Ok((TaskFamily::Anaphora, n)),
        _ => Err(Error::Config(format!("{rule} is not a language rule"))),
    }
}

/// The built-in vocabulary and its pools, built once.
pub fn builtin() -> &'static (Vocabulary, SentencePool, SentencePool) {
    static CELL: OnceLock<(Vocabulary, SentencePool, SentencePool)> = OnceLock::new();
    CELL.get_or_init(|| {
        let vocab = Vocabulary::builtin();
        let sv = expand_templates(&vocab, TaskFamily::SubjectVerb).expect("builtin vocabulary expands");
        let an = expand_templates(&vocab, TaskFamily::Anaphora).expect("builtin vocabulary expands");
        (vocab, sv, an)
    })
}

pub fn builtin_pool(family: TaskFamily) -> &'static SentencePool {
    let (_, sv, an) = builtin();
    match family {
        TaskFamily::SubjectVerb => sv,
        TaskFamily::Anaphora => an,
    }
}

/// One odd-one-out example drawn from `pool` (restricted to the task's split).
///
/// Mask-training odd items keep the other feature matching the partition, so
/// every odd sentence is ungrammatical.
pub fn generate_example(
    pool: &SentencePool,
    task: &TaskSpec,
    rng: &mut Rng,
) -> Result<OddOneOutExample<SentenceStimulus>> {
    let (family, partition) = partition_of(task.rule)?;
    if family != pool.family {
        return Err(Error::Config(format!("{} needs the {family:?} pool", task.rule)));
    }
    let plan = plan_cells(task.rule, task.role, &BASE_VIOLATORS, OddOtherFactor::Positive, rng)?;
    let mut chosen: Vec<usize> = Vec::with_capacity(4);
    for cell in plan.cells {
        let bucket = pool.cell_bucket(task.split, partition, cell);
        let needed = 4;
        if bucket.len() < needed {
            return Err(Error::PoolTooSmall {
                cell: format!("{} {} {}", task.rule, cell.describe(task.rule), task.split.as_str()),
                needed,
            });
        }
        let index = loop {
            let candidate = bucket[rng.random_range(0..bucket.len())];
            if !chosen.contains(&candidate) {
                break candidate;
            }
        };
        chosen.push(index);
    }
    let example = OddOneOutExample {
        stimuli: chosen.iter().map(|&i| pool.sentences[i].clone()).collect(),
        odd_index: plan.odd_index,
        rule: task.rule,
        role: task.role,
        number: None,
    };
    Ok(example)
}

/// Re-derives the odd index from surface forms.
pub fn recompute_odd_index(vocab: &Vocabulary, example: &OddOneOutExample<SentenceStimulus>) -> Result<Option<usize>> {
    let (family, partition) = partition_of(example.rule)?;
    let mut violators = Vec::new();
    for (i, s) in example.stimuli.iter().enumerate() {
        let cell = recompute_features(vocab, family, &s.surface)?.cell(partition);
        if !follows_rule(example.rule, example.role, cell)? {
            violators.push(i);
        }
    }
    Ok(match violators.as_slice() {
        [only] => Some(*only),
        _ => None,
    })
}

/// Deterministic dataset for `task` over the built-in vocabulary.
pub fn build_dataset(task: &TaskSpec, seed: u64) -> Result<Dataset<SentenceStimulus>> {
    task.validate()?;
    let (family, _) = partition_of(task.rule)?;
    build_dataset_from(builtin_pool(family), task, seed)
}

pub fn build_dataset_from(pool: &SentencePool, task: &TaskSpec, seed: u64) -> Result<Dataset<SentenceStimulus>> {
    let mut rng = rng::stream(seed, &format!("language-data/{}", task.data_key()));
    let examples = (0..task.size)
        .map(|_| generate_example(pool, task, &mut rng))
        .collect::<Result<Vec<_>>>()?;
    let (_, partition) = partition_of(task.rule)?;
    let cells = [Cell(true, true), Cell(true, false), Cell(false, true), Cell(false, false)];
    let sizes: Vec<String> = cells
        .iter()
        .map(|&c| format!("{}={}", c.describe(task.rule), pool.cell_bucket(task.split, partition, c).len()))
        .collect();
    let distinct: HashSet<&Vec<usize>> = examples.iter().flat_map(|e| e.stimuli.iter().map(|s| &s.tokens)).collect();
    Ok(Dataset {
        meta: DatasetMeta {
            task: *task,
            seed,
            notes: vec![
                format!("{} pool sentences per cell: {}", task.split.as_str(), sizes.join(", ")),
                format!("{} distinct sentences used", distinct.len()),
                "splits are disjoint at the sentence level".into(),
            ],
        },
        examples,
    })
}
