//! Open-ended answer scoring: positional token accuracy and WUPS over a word taxonomy.

use std::collections::{BTreeMap, HashMap};
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::report::QaSection;

/// Threshold of the reported WUPS score.
pub const WUPS_GAMMA: f64 = 0.9;

const BUNDLED: &str = include_str!("../assets/taxonomy.txt");

/// Lowercase, whitespace-split tokens.
pub fn tokenize(s: &str) -> Vec<String> {
    s.split_whitespace().map(str::to_lowercase).collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AnswerPair {
    pub prediction: Vec<String>,
    pub ground_truth: Vec<String>,
}

impl AnswerPair {
    pub fn new(prediction: &str, ground_truth: &str) -> Self {
        AnswerPair {
            prediction: tokenize(prediction),
            ground_truth: tokenize(ground_truth),
        }
    }
}

fn check_pairs(pairs: &[AnswerPair]) -> Result<()> {
    if pairs.is_empty() {
        return Err(Error::Argument("no answer pairs to score".into()));
    }
    if let Some(i) = pairs.iter().position(|p| p.ground_truth.is_empty()) {
        return Err(Error::validation("ground_truth", format!("pair {i}"), "empty answer"));
    }
    Ok(())
}

/// Mean over pairs of the fraction of ground-truth positions the prediction matches.
pub fn token_accuracy(pairs: &[AnswerPair]) -> Result<f64> {
    check_pairs(pairs)?;
    let total: f64 = pairs
        .iter()
        .map(|p| {
            let hits = p.prediction.iter().zip(&p.ground_truth).filter(|(a, b)| a == b).count();
            hits as f64 / p.ground_truth.len() as f64
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Single-rooted word hierarchy with the root at depth 1.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Taxonomy {
    parent: HashMap<String, String>,
    depth: HashMap<String, usize>,
    root: String,
}

impl Taxonomy {
    /// Parses `child parent` lines; `#` starts a comment and the root is its own parent.
    pub fn parse(text: &str) -> Result<Self> {
        let mut parent: HashMap<String, String> = HashMap::new();
        let mut roots = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split_whitespace().collect();
            let &[child, par] = fields.as_slice() else {
                return Err(taxonomy_error(i, format!("expected `child parent`, got `{line}`")));
            };
            let child = child.to_lowercase();
            let par = par.to_lowercase();
            if parent.contains_key(&child) {
                return Err(taxonomy_error(i, format!("`{child}` listed twice")));
            }
            if child == par {
                roots.push(child.clone());
            }
            parent.insert(child, par);
        }
        let root = match roots.as_slice() {
            [r] => r.clone(),
            [] => return Err(taxonomy_error(0, "no root".into())),
            _ => return Err(taxonomy_error(0, format!("several roots: {}", roots.join(", ")))),
        };
        if let Some((c, p)) = parent.iter().find(|(_, p)| !parent.contains_key(*p)) {
            return Err(Error::validation("taxonomy", c, format!("unknown parent `{p}`")));
        }

        let mut depth = HashMap::with_capacity(parent.len());
        depth.insert(root.clone(), 1);
        for node in parent.keys() {
            let mut chain = Vec::new();
            let mut cur = node.clone();
            while !depth.contains_key(&cur) {
                if chain.len() > parent.len() {
                    return Err(Error::validation("taxonomy", node, "cycle without the root"));
                }
                chain.push(cur.clone());
                cur = parent[&cur].clone();
            }
            let mut d = depth[&cur];
            for n in chain.into_iter().rev() {
                d += 1;
                depth.insert(n, d);
            }
        }
        Ok(Taxonomy { parent, depth, root })
    }

    /// The taxonomy shipped with the crate.
    pub fn bundled() -> Self {
        Taxonomy::parse(BUNDLED).expect("bundled taxonomy is well formed")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Taxonomy::parse(&text)
    }

    pub fn root(&self) -> &str {
        &self.root
    }

    pub fn len(&self) -> usize {
        self.parent.len()
    }

    pub fn is_empty(&self) -> bool {
        self.parent.is_empty()
    }

    pub fn contains(&self, word: &str) -> bool {
        self.parent.contains_key(word)
    }

    pub fn depth(&self, word: &str) -> Option<usize> {
        self.depth.get(word).copied()
    }

    pub fn parent(&self, word: &str) -> Option<&str> {
        self.parent.get(word).map(String::as_str)
    }

    fn ancestors(&self, word: &str) -> Vec<&str> {
        let mut out = vec![];
        let Some((mut cur, _)) = self.parent.get_key_value(word) else {
            return out;
        };
        loop {
            out.push(cur);
            let p = &self.parent[cur];
            if p == cur {
                return out;
            }
            cur = p;
        }
    }

    /// Deepest common ancestor of two known words.
    pub fn lcs(&self, a: &str, b: &str) -> Option<&str> {
        if !self.contains(a) || !self.contains(b) {
            return None;
        }
        let up = self.ancestors(a);
        self.ancestors(b).into_iter().find(|n| up.contains(n))
    }
}

fn taxonomy_error(line: usize, reason: String) -> Error {
    Error::validation("taxonomy", format!("line {}", line + 1), reason)
}

/// Wu-Palmer similarity; words outside the taxonomy score 1 when equal, else 0.
pub fn wup_similarity(tax: &Taxonomy, a: &str, b: &str) -> f64 {
    match tax.lcs(a, b) {
        Some(l) => {
            let d = |w| tax.depth(w).expect("known word") as f64;
            2.0 * d(l) / (d(a) + d(b))
        }
        None => f64::from(u8::from(a == b)),
    }
}

fn thresholded(w: f64, gamma: f64) -> f64 {
    if w >= gamma {
        w
    } else {
        0.1 * w
    }
}

/// `Π_{a ∈ from} max_{b ∈ to} W_γ(a, b)`; an empty `to` scores 0 per token.
fn directed(tax: &Taxonomy, from: &[String], to: &[String], gamma: f64) -> f64 {
    from.iter()
        .map(|a| {
            to.iter()
                .map(|b| thresholded(wup_similarity(tax, a, b), gamma))
                .fold(0.0, f64::max)
        })
        .product()
}

pub fn wups_pair(pair: &AnswerPair, tax: &Taxonomy, gamma: f64) -> f64 {
    let gt = directed(tax, &pair.ground_truth, &pair.prediction, gamma);
    let pred = directed(tax, &pair.prediction, &pair.ground_truth, gamma);
    gt.min(pred)
}

/// Mean WUPS@γ over pairs.
pub fn wups_at(pairs: &[AnswerPair], tax: &Taxonomy, gamma: f64) -> Result<f64> {
    if !(gamma > 0.0 && gamma <= 1.0) {
        return Err(Error::Argument(format!("gamma must lie in (0, 1], got {gamma}")));
    }
    check_pairs(pairs)?;
    Ok(pairs.iter().map(|p| wups_pair(p, tax, gamma)).sum::<f64>() / pairs.len() as f64)
}

/// One line of an answers file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerRecord {
    pub question_id: String,
    pub prediction: String,
    pub ground_truth: String,
}

pub fn load_answers(path: impl AsRef<Path>) -> Result<Vec<AnswerRecord>> {
    let path = path.as_ref();
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            reason: e.to_string(),
        })?);
    }
    Ok(out)
}

/// Accuracy and WUPS@0.9 of a set of answers; later duplicates of a question id win.
pub fn score_answers(records: &[AnswerRecord], tax: &Taxonomy) -> Result<QaSection> {
    let unique: BTreeMap<&str, &AnswerRecord> = records.iter().map(|r| (r.question_id.as_str(), r)).collect();
    let pairs: Vec<AnswerPair> = unique
        .values()
        .map(|r| AnswerPair::new(&r.prediction, &r.ground_truth))
        .collect();
    Ok(QaSection {
        accuracy: token_accuracy(&pairs)?,
        wups: wups_at(&pairs, tax, WUPS_GAMMA)?,
    })
}
