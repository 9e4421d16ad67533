use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;

use serde::{Deserialize, Serialize};

use super::FrameInterval;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Motion {
    Standing,
    Walking,
    Running,
}

impl Motion {
    pub fn as_str(self) -> &'static str {
        match self {
            Motion::Standing => "standing",
            Motion::Walking => "walking",
            Motion::Running => "running",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    /// Stable across frames.
    pub id: String,
    /// How questions refer to the entity, e.g. "outlined person".
    pub name: String,
    /// Class name used in answers and counts, e.g. "basketball player".
    pub identity: String,
    pub person: bool,
    pub attribute: Motion,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Relation {
    pub source: String,
    pub predicate: String,
    pub target: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SceneFrame {
    pub entities: Vec<Entity>,
    pub edges: Vec<Relation>,
}

impl SceneFrame {
    pub fn entity(&self, id: &str) -> Option<&Entity> {
        self.entities.iter().find(|e| e.id == id)
    }
}

/// Sub-activity over frames `[start, end)`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActivitySpan {
    pub start: usize,
    pub end: usize,
    pub description: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ToySceneGraph {
    pub frames: Vec<SceneFrame>,
    pub spans: Vec<ActivitySpan>,
}

impl ToySceneGraph {
    pub fn validate(&self) -> Result<()> {
        for (i, frame) in self.frames.iter().enumerate() {
            let mut ids = HashSet::new();
            for e in &frame.entities {
                if !ids.insert(e.id.as_str()) {
                    return Err(Error::validation(
                        "entities",
                        format!("frame {i}"),
                        format!("duplicate id `{}`", e.id),
                    ));
                }
            }
            for edge in &frame.edges {
                for end in [&edge.source, &edge.target] {
                    if !ids.contains(end.as_str()) {
                        return Err(Error::validation(
                            "edges",
                            format!("frame {i}"),
                            format!("unknown endpoint `{end}`"),
                        ));
                    }
                }
            }
        }
        let mut prev_end = 0;
        for (j, span) in self.spans.iter().enumerate() {
            let id = format!("span {j}");
            if span.start >= span.end || span.end > self.frames.len() {
                return Err(Error::validation(
                    "spans",
                    id,
                    format!("bad range [{}, {})", span.start, span.end),
                ));
            }
            if span.start < prev_end {
                return Err(Error::validation("spans", id, "overlaps or precedes the previous span"));
            }
            prev_end = span.end;
        }
        Ok(())
    }

    fn span_frames(&self, span: &ActivitySpan) -> &[SceneFrame] {
        &self.frames[span.start..span.end]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum QuestionKind {
    Relationship,
    Motion,
    Description,
}

impl fmt::Display for QuestionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            QuestionKind::Relationship => "relationship",
            QuestionKind::Motion => "motion",
            QuestionKind::Description => "description",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct QaRecord {
    pub question_id: String,
    pub kind: QuestionKind,
    pub question: String,
    pub answer: String,
    pub interval: FrameInterval,
}

fn title_case(s: &str) -> String {
    s.split_whitespace()
        .map(|w| {
            let mut c = w.chars();
            match c.next() {
                Some(first) => first.to_uppercase().chain(c).collect(),
                None => String::new(),
            }
        })
        .collect::<Vec<_>>()
        .join(" ")
}

/// Relationship, motion and description questions for every span of `graph`.
pub fn generate_questions(graph: &ToySceneGraph) -> Result<Vec<QaRecord>> {
    graph.validate()?;
    let mut out = Vec::new();
    for (j, span) in graph.spans.iter().enumerate() {
        let frames = graph.span_frames(span);
        let interval = (span.start, span.end);
        let when = &span.description;
        let mut push = |kind, question: String, answer: String| {
            let n = out.len();
            out.push(QaRecord {
                question_id: format!("s{j}-{kind}-{n}"),
                kind,
                question,
                answer,
                interval,
            });
        };

        let mut seen = BTreeSet::new();
        for frame in frames {
            for edge in &frame.edges {
                if !seen.insert(edge) {
                    continue;
                }
                let src = frame.entity(&edge.source).expect("validated");
                let dst = frame.entity(&edge.target).expect("validated");
                let wh = if dst.person { "Who" } else { "What" };
                push(
                    QuestionKind::Relationship,
                    format!("When {when}, {wh} is the {} {}?", src.name, edge.predicate),
                    title_case(&dst.identity),
                );
            }
        }

        let mut seen = HashSet::new();
        for frame in frames {
            for e in &frame.entities {
                if seen.insert(&e.id) {
                    push(
                        QuestionKind::Motion,
                        format!("When {when}, is the {} standing, walking, or running?", e.name),
                        title_case(e.attribute.as_str()),
                    );
                }
            }
        }

        // identity -> count in the first span frame that shows it
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut order = Vec::new();
        for frame in frames {
            let mut here: BTreeMap<&str, usize> = BTreeMap::new();
            for e in &frame.entities {
                *here.entry(&e.identity).or_default() += 1;
            }
            for e in &frame.entities {
                if !counts.contains_key(e.identity.as_str()) {
                    counts.insert(&e.identity, here[e.identity.as_str()]);
                    order.push(e.identity.as_str());
                }
            }
        }
        for identity in order {
            push(
                QuestionKind::Description,
                format!("When {when}, how many {identity}s are in the scene?"),
                counts[identity].to_string(),
            );
        }
    }
    Ok(out)
}
