//! Declarative context filters and their text syntax.
//!
//! A plan is a list of groups; each group is a chain of filters applied left
//! to right. Groups are written separated by `|`, filters within a chain by
//! `>`:
//!
//! ```text
//! lastk:4 > smart | lastk:1
//! similar:0.8 > summarize:gpt-4o-mini
//! full
//! ```
//!
//! `full` (or an empty string) is the empty plan, meaning all history that
//! fits the target model's context window.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

#[derive(Debug, Clone, PartialEq)]
pub enum ContextFilter {
    /// The `k` most recent messages.
    LastK(usize),
    /// All-or-nothing decision by a cheap model; `None` uses the configured
    /// context model.
    SmartContext(Option<String>),
    /// Messages whose query embedding has cosine similarity above the value.
    Similar(f64),
    /// Rewrites the input into one synthetic summary message.
    Summarize(Option<String>),
}

impl fmt::Display for ContextFilter {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ContextFilter::LastK(k) => write!(f, "lastk:{k}"),
            ContextFilter::SmartContext(None) => write!(f, "smart"),
            ContextFilter::SmartContext(Some(m)) => write!(f, "smart:{m}"),
            ContextFilter::Similar(t) => write!(f, "similar:{t}"),
            ContextFilter::Summarize(None) => write!(f, "summarize"),
            ContextFilter::Summarize(Some(m)) => write!(f, "summarize:{m}"),
        }
    }
}

impl FromStr for ContextFilter {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        let (name, arg) = match s.split_once(':') {
            Some((n, a)) => (n.trim(), Some(a.trim())),
            None => (s, None),
        };
        let model = |a: Option<&str>| a.filter(|m| !m.is_empty()).map(str::to_string);
        match name.to_ascii_lowercase().as_str() {
            "lastk" | "last" => {
                let k = arg.ok_or("lastk needs a count, e.g. lastk:5")?;
                k.parse().map(ContextFilter::LastK).map_err(|_| format!("bad count {k:?}"))
            }
            "smart" | "smart_context" | "smartcontext" => Ok(ContextFilter::SmartContext(model(arg))),
            "similar" => {
                let t = arg.ok_or("similar needs a threshold, e.g. similar:0.8")?;
                let theta: f64 = t.parse().map_err(|_| format!("bad threshold {t:?}"))?;
                if !(-1.0..=1.0).contains(&theta) {
                    return Err(format!("similarity threshold {theta} outside [-1, 1]"));
                }
                Ok(ContextFilter::Similar(theta))
            }
            "summarize" | "summary" => Ok(ContextFilter::Summarize(model(arg))),
            other => Err(format!("unknown context filter {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct FilterPlan {
    pub groups: Vec<Vec<ContextFilter>>,
}

impl FilterPlan {
    /// All history that fits the window.
    pub fn full() -> Self {
        FilterPlan::default()
    }

    pub fn chain(filters: Vec<ContextFilter>) -> Self {
        FilterPlan { groups: vec![filters] }
    }

    pub fn last_k(k: usize) -> Self {
        Self::chain(vec![ContextFilter::LastK(k)])
    }

    pub fn is_full(&self) -> bool {
        self.groups.is_empty()
    }

    pub fn or(mut self, chain: Vec<ContextFilter>) -> Self {
        self.groups.push(chain);
        self
    }
}

impl fmt::Display for FilterPlan {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.groups.is_empty() {
            return write!(f, "full");
        }
        let groups: Vec<String> = self
            .groups
            .iter()
            .map(|chain| {
                chain
                    .iter()
                    .map(ToString::to_string)
                    .collect::<Vec<_>>()
                    .join(" > ")
            })
            .collect();
        write!(f, "{}", groups.join(" | "))
    }
}

impl FromStr for FilterPlan {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let s = s.trim();
        if s.is_empty() || s.eq_ignore_ascii_case("full") {
            return Ok(FilterPlan::full());
        }
        let mut groups = Vec::new();
        for group in s.split('|') {
            let chain = group
                .split('>')
                .map(str::parse)
                .collect::<Result<Vec<ContextFilter>, String>>()?;
            groups.push(chain);
        }
        Ok(FilterPlan { groups })
    }
}

impl Serialize for FilterPlan {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for FilterPlan {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        String::deserialize(d)?.parse().map_err(serde::de::Error::custom)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_two_group_plan() {
        let plan: FilterPlan = "lastk:4 > smart | lastk:1".parse().unwrap();
        assert_eq!(
            plan.groups,
            vec![
                vec![ContextFilter::LastK(4), ContextFilter::SmartContext(None)],
                vec![ContextFilter::LastK(1)],
            ]
        );
        assert_eq!(plan.to_string(), "lastk:4 > smart | lastk:1");
    }

    #[test]
    fn full_plan_and_models() {
        assert!("".parse::<FilterPlan>().unwrap().is_full());
        assert!("FULL".parse::<FilterPlan>().unwrap().is_full());
        let plan: FilterPlan = "similar:0.5>summarize:phi-3-mini".parse().unwrap();
        assert_eq!(
            plan.groups[0],
            vec![
                ContextFilter::Similar(0.5),
                ContextFilter::Summarize(Some("phi-3-mini".into()))
            ]
        );
    }

    #[test]
    fn rejects_bad_filters() {
        assert!("lastk".parse::<FilterPlan>().is_err());
        assert!("lastk:x".parse::<FilterPlan>().is_err());
        assert!("similar:1.5".parse::<FilterPlan>().is_err());
        assert!("bogus:1".parse::<FilterPlan>().is_err());
    }

    #[test]
    fn serde_uses_text_form() {
        let plan = FilterPlan::last_k(5).or(vec![ContextFilter::SmartContext(Some("gpt-4o-mini".into()))]);
        let json = serde_json::to_string(&plan).unwrap();
        assert_eq!(json, "\"lastk:5 | smart:gpt-4o-mini\"");
        assert_eq!(serde_json::from_str::<FilterPlan>(&json).unwrap(), plan);
    }
}
