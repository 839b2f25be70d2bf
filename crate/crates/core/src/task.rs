//! Compositional rules, subroutines and the dataset roles built from them.

use std::fmt;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::Rng;

/// Grammatical number, also used to name the language partitions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GrammaticalNumber {
    Singular,
    Plural,
}

impl GrammaticalNumber {
    pub fn flip(self) -> Self {
        match self {
            Self::Singular => Self::Plural,
            Self::Plural => Self::Singular,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Singular => "singular",
            Self::Plural => "plural",
        }
    }
}

/// A compositional rule `C = SR1 & SR2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Rule {
    InsideContact,
    NumberContact,
    InsideNumber,
    SubjectVerb(GrammaticalNumber),
    Anaphora(GrammaticalNumber),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Subroutine {
    Inside,
    Contact,
    Number,
    Subject,
    Verb,
    Antecedent,
    Pronoun,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Modality {
    Vision,
    Language,
}

impl Rule {
    pub const VISION: [Rule; 3] = [Rule::InsideContact, Rule::NumberContact, Rule::InsideNumber];
    pub const LANGUAGE: [Rule; 4] = [
        Rule::SubjectVerb(GrammaticalNumber::Singular),
        Rule::SubjectVerb(GrammaticalNumber::Plural),
        Rule::Anaphora(GrammaticalNumber::Singular),
        Rule::Anaphora(GrammaticalNumber::Plural),
    ];

    pub fn all() -> Vec<Rule> {
        Self::VISION.iter().chain(Self::LANGUAGE.iter()).copied().collect()
    }

    /// The two subroutines, in factor order: cells are written `(first, second)`.
    pub fn subroutines(self) -> [Subroutine; 2] {
        use Subroutine::*;
        match self {
            Rule::InsideContact => [Inside, Contact],
            Rule::NumberContact => [Number, Contact],
            Rule::InsideNumber => [Inside, Number],
            Rule::SubjectVerb(_) => [Subject, Verb],
            Rule::Anaphora(_) => [Antecedent, Pronoun],
        }
    }

    pub fn modality(self) -> Modality {
        match self {
            Rule::InsideContact | Rule::NumberContact | Rule::InsideNumber => Modality::Vision,
            Rule::SubjectVerb(_) | Rule::Anaphora(_) => Modality::Language,
        }
    }

    pub fn uses_number(self) -> bool {
        matches!(self, Rule::NumberContact | Rule::InsideNumber)
    }

    pub fn factor_of(self, sr: Subroutine) -> Result<usize> {
        self.subroutines()
            .iter()
            .position(|&s| s == sr)
            .ok_or_else(|| Error::Config(format!("{sr} is not a subroutine of {self}")))
    }

    pub fn other(self, sr: Subroutine) -> Result<Subroutine> {
        let idx = self.factor_of(sr)?;
        Ok(self.subroutines()[1 - idx])
    }

    pub fn slug(self) -> String {
        match self {
            Rule::InsideContact => "inside-contact".into(),
            Rule::NumberContact => "number-contact".into(),
            Rule::InsideNumber => "inside-number".into(),
            Rule::SubjectVerb(n) => format!("sv-{}", n.as_str()),
            Rule::Anaphora(n) => format!("anaphora-{}", n.as_str()),
        }
    }
}

impl fmt::Display for Rule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

impl FromStr for Rule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let norm = s.to_ascii_lowercase().replace('_', "-");
        Rule::all()
            .into_iter()
            .find(|r| r.slug() == norm || format!("{r:?}").to_ascii_lowercase() == norm)
            .ok_or_else(|| Error::Config(format!("unknown rule {s:?}")))
    }
}

impl From<Rule> for String {
    fn from(rule: Rule) -> String {
        rule.slug()
    }
}

impl TryFrom<String> for Rule {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Subroutine {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Subroutine::Inside => "inside",
            Subroutine::Contact => "contact",
            Subroutine::Number => "number",
            Subroutine::Subject => "subject",
            Subroutine::Verb => "verb",
            Subroutine::Antecedent => "antecedent",
            Subroutine::Pronoun => "pronoun",
        };
        f.write_str(s)
    }
}

impl FromStr for Subroutine {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        use Subroutine::*;
        [Inside, Contact, Number, Subject, Verb, Antecedent, Pronoun]
            .into_iter()
            .find(|sr| sr.to_string() == s.to_ascii_lowercase())
            .ok_or_else(|| Error::Config(format!("unknown subroutine {s:?}")))
    }
}

/// What a dataset is used for, relative to its rule.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Role {
    /// The compositional task the base model is trained on.
    Base,
    /// Rule defined by one subroutine alone; used to train masks.
    MaskTrain(Subroutine),
    /// Rule followers are `(+,+)`; the odd item differs only in the named subroutine.
    TestTarget(Subroutine),
    /// Rule followers are `(+,+)`; the odd item differs only in the *other* subroutine.
    TestOther(Subroutine),
}

impl Role {
    /// For probe roles, the subroutine in which the odd item differs from `(+,+)`.
    pub fn probed(self, rule: Rule) -> Result<Option<Subroutine>> {
        Ok(match self {
            Role::TestTarget(sr) => Some(sr),
            Role::TestOther(sr) => Some(rule.other(sr)?),
            _ => None,
        })
    }

    pub fn slug(self) -> String {
        match self {
            Role::Base => "base".into(),
            Role::MaskTrain(sr) => format!("mask-train-{sr}"),
            Role::TestTarget(sr) => format!("test-target-{sr}"),
            Role::TestOther(sr) => format!("test-other-{sr}"),
        }
    }
}

impl FromStr for Role {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        if s == "base" {
            return Ok(Role::Base);
        }
        let parse = |prefix: &str| s.strip_prefix(prefix).map(str::parse::<Subroutine>);
        if let Some(sr) = parse("mask-train-") {
            return Ok(Role::MaskTrain(sr?));
        }
        if let Some(sr) = parse("test-target-") {
            return Ok(Role::TestTarget(sr?));
        }
        if let Some(sr) = parse("test-other-") {
            return Ok(Role::TestOther(sr?));
        }
        Err(Error::Config(format!("unknown role {s:?}")))
    }
}

impl From<Role> for String {
    fn from(role: Role) -> String {
        role.slug()
    }
}

impl TryFrom<String> for Role {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.slug())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub const ALL: [Split; 3] = [Split::Train, Split::Val, Split::Test];

    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Split::ALL
            .into_iter()
            .find(|sp| sp.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown split {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub rule: Rule,
    pub role: Role,
    pub split: Split,
    pub size: usize,
}

impl TaskSpec {
    pub fn new(rule: Rule, role: Role, split: Split, size: usize) -> Result<Self> {
        let spec = Self {
            rule,
            role,
            split,
            size,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.size == 0 {
            return Err(Error::Config(format!("{} has size 0", self.slug())));
        }
        match self.role {
            Role::Base => {}
            Role::MaskTrain(sr) | Role::TestTarget(sr) | Role::TestOther(sr) => {
                self.rule.factor_of(sr)?;
            }
        }
        Ok(())
    }

    /// Stable file stem, e.g. `inside-contact.test-target-inside.val.500`.
    pub fn slug(&self) -> String {
        format!("{}.{}.{}.{}", self.rule, self.role, self.split.as_str(), self.size)
    }

    /// Data identity: probe roles that realize the same odd cell share data,
    /// so `test-target(inside)` and `test-other(contact)` are the same dataset.
    pub fn data_key(&self) -> String {
        let role = match self.role.probed(self.rule) {
            Ok(Some(sr)) => format!("probe-{sr}"),
            _ => self.role.slug(),
        };
        format!("{}.{}.{}.{}", self.rule, role, self.split.as_str(), self.size)
    }
}

/// A cell of the 2x2 factor design: whether each factor holds (`+`) or not.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Cell(pub bool, pub bool);

impl Cell {
    pub const FOLLOWS: Cell = Cell(true, true);

    pub fn factor(self, idx: usize) -> bool {
        if idx == 0 {
            self.0
        } else {
            self.1
        }
    }

    pub fn with_factor(self, idx: usize, value: bool) -> Cell {
        if idx == 0 {
            Cell(value, self.1)
        } else {
            Cell(self.0, value)
        }
    }

    pub fn describe(self, rule: Rule) -> String {
        let [a, b] = rule.subroutines();
        let sign = |v: bool| if v { '+' } else { '-' };
        format!("({}{a}, {}{b})", sign(self.0), sign(self.1))
    }
}

/// Cell plan for one odd-one-out example: three followers and the odd item.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CellPlan {
    pub cells: [Cell; 4],
    pub odd_index: usize,
}

/// How the odd item of a mask-training example treats the non-target factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OddOtherFactor {
    /// Drawn uniformly, like the followers.
    Free,
    /// Held at `+`, so the odd item differs from a follower only in the target.
    Positive,
}

/// Which cells a role draws for followers and odd items.
///
/// * base: followers `(+,+)`; odd uniform over `violators`.
/// * mask-train(SR): followers have `+SR` with the other factor uniform; the
///   odd item has `-SR` and the other factor per `odd_other`.
/// * probes: followers `(+,+)`; the odd item flips only the probed factor.
pub fn plan_cells(
    rule: Rule,
    role: Role,
    violators: &[Cell],
    odd_other: OddOtherFactor,
    rng: &mut Rng,
) -> Result<CellPlan> {
    let odd_index = rng.random_range(0..4);
    let mut cells = [Cell::FOLLOWS; 4];
    match role {
        Role::Base => {
            cells[odd_index] = violators[rng.random_range(0..violators.len())];
        }
        Role::MaskTrain(sr) => {
            let f = rule.factor_of(sr)?;
            for (i, cell) in cells.iter_mut().enumerate() {
                let other = if i == odd_index && odd_other == OddOtherFactor::Positive {
                    true
                } else {
                    rng.random_bool(0.5)
                };
                *cell = Cell::FOLLOWS.with_factor(1 - f, other).with_factor(f, i != odd_index);
            }
        }
        Role::TestTarget(_) | Role::TestOther(_) => {
            let probed = role.probed(rule)?.expect("probe role");
            let f = rule.factor_of(probed)?;
            cells[odd_index] = Cell::FOLLOWS.with_factor(f, false);
        }
    }
    Ok(CellPlan { cells, odd_index })
}

/// Whether `cell` follows the rule governing `role`.
pub fn follows_rule(rule: Rule, role: Role, cell: Cell) -> Result<bool> {
    Ok(match role {
        Role::MaskTrain(sr) => cell.factor(rule.factor_of(sr)?),
        _ => cell == Cell::FOLLOWS,
    })
}
