use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Entity types of the IRAC graph.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EntityKind {
    Case,
    CitedCase,
    MaterialFact,
    LegalIssue,
    Conclusion,
    Rule,
    Statute,
    Regulation,
}

impl EntityKind {
    pub const ALL: [EntityKind; 8] = [
        EntityKind::Case,
        EntityKind::CitedCase,
        EntityKind::MaterialFact,
        EntityKind::LegalIssue,
        EntityKind::Conclusion,
        EntityKind::Rule,
        EntityKind::Statute,
        EntityKind::Regulation,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            EntityKind::Case => "Case",
            EntityKind::CitedCase => "CitedCase",
            EntityKind::MaterialFact => "MaterialFact",
            EntityKind::LegalIssue => "LegalIssue",
            EntityKind::Conclusion => "Conclusion",
            EntityKind::Rule => "Rule",
            EntityKind::Statute => "Statute",
            EntityKind::Regulation => "Regulation",
        }
    }
}

impl fmt::Display for EntityKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown kind {0:?}")]
pub struct UnknownKind(pub String);

impl FromStr for EntityKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        EntityKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

/// Relation types of the IRAC graph. Each carries a fixed endpoint rule,
/// see [`RelationKind::endpoint_rule`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum RelationKind {
    Cites,
    References,
    ArisesFrom,
    Addresses,
    AppliedTo,
    DerivesFrom,
    LeadsTo,
}

/// Allowed source and target entity kinds for one relation kind.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct EndpointRule {
    pub sources: &'static [EntityKind],
    pub targets: &'static [EntityKind],
}

impl EndpointRule {
    pub fn allows(&self, from: EntityKind, to: EntityKind) -> bool {
        self.sources.contains(&from) && self.targets.contains(&to)
    }
}

impl RelationKind {
    pub const ALL: [RelationKind; 7] = [
        RelationKind::Cites,
        RelationKind::References,
        RelationKind::ArisesFrom,
        RelationKind::Addresses,
        RelationKind::AppliedTo,
        RelationKind::DerivesFrom,
        RelationKind::LeadsTo,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            RelationKind::Cites => "CITES",
            RelationKind::References => "REFERENCES",
            RelationKind::ArisesFrom => "ARISES_FROM",
            RelationKind::Addresses => "ADDRESSES",
            RelationKind::AppliedTo => "APPLIED_TO",
            RelationKind::DerivesFrom => "DERIVES_FROM",
            RelationKind::LeadsTo => "LEADS_TO",
        }
    }

    /// The static endpoint table. Total over all relation kinds.
    pub fn endpoint_rule(self) -> EndpointRule {
        use EntityKind::*;
        match self {
            RelationKind::Cites => EndpointRule {
                sources: &[Case],
                targets: &[CitedCase],
            },
            RelationKind::References => EndpointRule {
                sources: &[Case],
                targets: &[Statute, Regulation],
            },
            RelationKind::ArisesFrom => EndpointRule {
                sources: &[LegalIssue],
                targets: &[MaterialFact],
            },
            RelationKind::Addresses => EndpointRule {
                sources: &[Rule],
                targets: &[LegalIssue],
            },
            RelationKind::AppliedTo => EndpointRule {
                sources: &[Rule],
                targets: &[MaterialFact],
            },
            RelationKind::DerivesFrom => EndpointRule {
                sources: &[Rule],
                targets: &[CitedCase, Statute, Regulation],
            },
            RelationKind::LeadsTo => EndpointRule {
                sources: &[Rule],
                targets: &[Conclusion],
            },
        }
    }
}

impl fmt::Display for RelationKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for RelationKind {
    type Err = UnknownKind;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        RelationKind::ALL
            .into_iter()
            .find(|k| k.as_str() == s)
            .ok_or_else(|| UnknownKind(s.to_string()))
    }
}

/// Free function form of [`RelationKind::endpoint_rule`].
pub fn relation_endpoint_rule(kind: RelationKind) -> EndpointRule {
    kind.endpoint_rule()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    pub kind: EntityKind,
    pub label: String,
}

impl Entity {
    pub fn new(id: impl Into<String>, kind: EntityKind, label: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            label: label.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Relation {
    pub id: String,
    pub kind: RelationKind,
    pub from: String,
    pub to: String,
}

impl Relation {
    pub fn new(id: impl Into<String>, kind: RelationKind, from: impl Into<String>, to: impl Into<String>) -> Self {
        Self {
            id: id.into(),
            kind,
            from: from.into(),
            to: to.into(),
        }
    }
}

/// One case's IRAC graph.
///
/// Fields are public so tooling can build or edit graphs in memory; use
/// [`validate_graph`](super::validate_graph) before trusting one.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IracGraph {
    pub case_id: String,
    pub entities: Vec<Entity>,
    pub relations: Vec<Relation>,
}

impl IracGraph {
    pub fn new(case_id: impl Into<String>) -> Self {
        Self {
            case_id: case_id.into(),
            ..Default::default()
        }
    }

    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }

    pub fn entities_of(&self, kind: EntityKind) -> impl Iterator<Item = &Entity> {
        self.entities.iter().filter(move |e| e.kind == kind)
    }

    pub fn relations_of(&self, kind: RelationKind) -> impl Iterator<Item = &Relation> {
        self.relations.iter().filter(move |r| r.kind == kind)
    }
}
