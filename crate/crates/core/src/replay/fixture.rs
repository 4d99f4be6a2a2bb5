//! Conversation fixtures on disk.
//!
//! A fixture directory holds one subdirectory per conversation (or is itself
//! a conversation). Each conversation directory contains text files with one
//! value per line, line `i` belonging to query `i`:
//!
//! | file | content |
//! |---|---|
//! | `queries.txt` | the queries (required) |
//! | `responses.txt` | canned chat-model responses |
//! | `verifier_scores.txt` | verifier score 0..=10 for the cheap model's answer |
//! | `judge_scores.txt` | judge score 0..=10 for non-identical replies |
//! | `context_decisions.txt` | context-model answers, e.g. `standalone,standalone` |
//!
//! Blank lines are ignored. Optional files must have exactly one line per query.
//! A query whose context answers include `needed` gets a visibly different
//! reply when it is answered without any history.

use std::path::Path;

use crate::adapter::mock::{parse_context_list, MockConfig, MockRule};
use crate::adapter::prompt::ContextAnswer;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConversationFixture {
    pub id: String,
    pub queries: Vec<String>,
    pub responses: Option<Vec<String>>,
    pub verifier_scores: Option<Vec<u8>>,
    pub judge_scores: Option<Vec<u8>>,
    pub context_decisions: Option<Vec<Vec<ContextAnswer>>>,
}

impl ConversationFixture {
    pub fn new(id: &str, queries: Vec<String>) -> Self {
        ConversationFixture {
            id: id.to_string(),
            queries,
            responses: None,
            verifier_scores: None,
            judge_scores: None,
            context_decisions: None,
        }
    }

    pub fn load(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref();
        let id = dir
            .file_name()
            .and_then(|n| n.to_str())
            .unwrap_or("conversation")
            .to_string();
        let queries = read_column(dir, "queries.txt")?
            .ok_or_else(|| Error::Fixture(format!("{}: missing queries.txt", dir.display())))?;
        let scores = |name: &str| -> Result<Option<Vec<u8>>> {
            read_column(dir, name)?
                .map(|rows| {
                    rows.iter()
                        .map(|r| match r.trim().parse::<u8>() {
                            Ok(s) if s <= 10 => Ok(s),
                            _ => Err(Error::Fixture(format!("{}/{name}: bad score {r:?}", dir.display()))),
                        })
                        .collect()
                })
                .transpose()
        };
        let fixture = ConversationFixture {
            id,
            responses: read_column(dir, "responses.txt")?,
            verifier_scores: scores("verifier_scores.txt")?,
            judge_scores: scores("judge_scores.txt")?,
            context_decisions: read_column(dir, "context_decisions.txt")?
                .map(|rows| {
                    rows.iter()
                        .map(|r| parse_context_list(r).map_err(Error::Fixture))
                        .collect::<Result<Vec<_>>>()
                })
                .transpose()?,
            queries,
        };
        fixture.validate()?;
        Ok(fixture)
    }

    /// Every optional column covers every query.
    pub fn validate(&self) -> Result<()> {
        if self.queries.is_empty() {
            return Err(Error::Fixture(format!("{}: no queries", self.id)));
        }
        let n = self.queries.len();
        let check = |name: &str, len: Option<usize>| match len {
            Some(l) if l != n => Err(Error::Fixture(format!(
                "{}: {name} has {l} rows for {n} queries",
                self.id
            ))),
            _ => Ok(()),
        };
        check("responses", self.responses.as_ref().map(Vec::len))?;
        check("verifier_scores", self.verifier_scores.as_ref().map(Vec::len))?;
        check("judge_scores", self.judge_scores.as_ref().map(Vec::len))?;
        check("context_decisions", self.context_decisions.as_ref().map(Vec::len))?;
        Ok(())
    }

    fn rule(&self, i: usize) -> MockRule {
        let mut rule = MockRule::exact(&self.queries[i]);
        if let Some(r) = &self.responses {
            rule = rule.response(&r[i]);
        }
        if let Some(s) = &self.verifier_scores {
            rule = rule.verifier_score(s[i]);
        }
        if let Some(s) = &self.judge_scores {
            rule = rule.judge_score(s[i]);
        }
        if let Some(c) = &self.context_decisions {
            rule = rule.context(&c[i]);
            if c[i].contains(&ContextAnswer::Needed) {
                rule = rule.requires_context();
            }
        }
        rule
    }
}

fn read_column(dir: &Path, name: &str) -> Result<Option<Vec<String>>> {
    let path = dir.join(name);
    if !path.exists() {
        return Ok(None);
    }
    let text = std::fs::read_to_string(&path)?;
    Ok(Some(
        text.lines()
            .map(str::trim)
            .filter(|l| !l.is_empty())
            .map(str::to_string)
            .collect(),
    ))
}

/// Loads `dir` as one conversation if it has `queries.txt`, otherwise every
/// subdirectory with one, sorted by name.
pub fn load_fixtures(dir: impl AsRef<Path>) -> Result<Vec<ConversationFixture>> {
    let dir = dir.as_ref();
    if dir.join("queries.txt").exists() {
        return Ok(vec![ConversationFixture::load(dir)?]);
    }
    let mut subdirs: Vec<_> = std::fs::read_dir(dir)
        .map_err(|e| Error::Fixture(format!("{}: {e}", dir.display())))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("queries.txt").exists())
        .collect();
    subdirs.sort();
    if subdirs.is_empty() {
        return Err(Error::Fixture(format!("{}: no conversations found", dir.display())));
    }
    subdirs.iter().map(ConversationFixture::load).collect()
}

/// Exact-match mock rules for every fixture query, ahead of `base`'s rules.
/// The same query text may only appear with identical fixture data.
pub fn mock_config(fixtures: &[ConversationFixture], base: MockConfig) -> Result<MockConfig> {
    let mut rules: Vec<MockRule> = Vec::new();
    let mut seen: std::collections::HashMap<String, usize> = std::collections::HashMap::new();
    for f in fixtures {
        f.validate()?;
        for i in 0..f.queries.len() {
            let rule = f.rule(i);
            match seen.get(&f.queries[i]) {
                Some(&j) if rules[j] != rule => {
                    return Err(Error::Fixture(format!(
                        "query {:?} appears with conflicting fixture data",
                        f.queries[i]
                    )));
                }
                Some(_) => {}
                None => {
                    seen.insert(f.queries[i].clone(), rules.len());
                    rules.push(rule);
                }
            }
        }
    }
    let mut cfg = base;
    rules.extend(cfg.rules);
    cfg.rules = rules;
    Ok(cfg)
}

/// A synthetic conversation of `n` queries and responses with a fixed word
/// count each, so every message has the same token count.
pub fn uniform_conversation(id: &str, n: usize, query_words: usize, response_words: usize) -> ConversationFixture {
    let text = |kind: &str, i: usize, words: usize| {
        let mut w = vec![format!("{kind}{i}")];
        w.extend((1..words).map(|j| format!("w{}", j % 10)));
        w.join(" ")
    };
    let mut f = ConversationFixture::new(id, (0..n).map(|i| text(&format!("{id}q"), i, query_words)).collect());
    f.responses = Some((0..n).map(|i| text(&format!("{id}r"), i, response_words)).collect());
    f
}
