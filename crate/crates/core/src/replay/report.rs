//! Strategy reports and their CSV form.
//!
//! `summary.csv` has one row per strategy and `per_query.csv` one row per
//! (strategy, conversation, query). Dollar amounts are exact decimals and
//! floats are written in shortest round-trip form, so parsing the two files
//! reproduces the reports exactly.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::money::Usd;
use crate::trace::Trace;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueryReport {
    pub strategy: String,
    pub conversation: String,
    pub index: usize,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Input tokens of the calls that produced the answer, auxiliary
    /// context and cache calls excluded.
    pub chat_input_tokens: u64,
    pub usd: Usd,
    pub duration_ms: u64,
    /// Mean judge score over repetitions; empty when judging was off.
    pub score: Option<f64>,
    pub model: String,
    pub context_messages: usize,
}

impl QueryReport {
    /// Averages one query's traces over repetitions, rounding down.
    pub fn average<'a>(
        strategy: &str,
        conversation: &str,
        index: usize,
        traces: impl Iterator<Item = &'a Trace>,
        model: &str,
        context_messages: usize,
        scores: &[f64],
    ) -> Self {
        let mut n = 0u64;
        let (mut input, mut output, mut chat_input, mut duration) = (0, 0, 0, 0);
        let mut usd = Usd::ZERO;
        for t in traces {
            n += 1;
            let usage = t.usage();
            input += usage.input_tokens;
            output += usage.output_tokens;
            chat_input += t
                .calls
                .iter()
                .filter(|c| c.role.is_chat_answer())
                .map(|c| c.usage.input_tokens)
                .sum::<u64>();
            usd += t.cost();
            duration += t.duration_ms();
        }
        let n = n.max(1);
        QueryReport {
            strategy: strategy.into(),
            conversation: conversation.into(),
            index,
            input_tokens: input / n,
            output_tokens: output / n,
            chat_input_tokens: chat_input / n,
            usd: usd.div_floor(n),
            duration_ms: duration / n,
            score: mean(scores),
            model: model.into(),
            context_messages,
        }
    }
}

fn mean(xs: &[f64]) -> Option<f64> {
    (!xs.is_empty()).then(|| xs.iter().sum::<f64>() / xs.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct StrategyReport {
    pub strategy: String,
    pub input_tokens: u64,
    pub output_tokens: u64,
    pub chat_input_tokens: u64,
    pub total_usd: Usd,
    pub total_duration_ms: u64,
    pub mean_score: Option<f64>,
    /// Total cost divided by the cheapest compared strategy's total.
    pub normalized_cost: f64,
    pub per_query: Vec<QueryReport>,
}

impl StrategyReport {
    pub fn from_queries(strategy: &str, per_query: Vec<QueryReport>) -> Self {
        let scores: Vec<f64> = per_query.iter().filter_map(|q| q.score).collect();
        StrategyReport {
            strategy: strategy.into(),
            input_tokens: per_query.iter().map(|q| q.input_tokens).sum(),
            output_tokens: per_query.iter().map(|q| q.output_tokens).sum(),
            chat_input_tokens: per_query.iter().map(|q| q.chat_input_tokens).sum(),
            total_usd: per_query.iter().map(|q| q.usd).sum(),
            total_duration_ms: per_query.iter().map(|q| q.duration_ms).sum(),
            mean_score: mean(&scores),
            normalized_cost: 1.0,
            per_query,
        }
    }

    pub fn scores(&self) -> Vec<Option<f64>> {
        self.per_query.iter().map(|q| q.score).collect()
    }
}

/// Sets every `normalized_cost` relative to the cheapest report.
pub fn normalize(reports: &mut [StrategyReport]) {
    let Some(min) = reports.iter().map(|r| r.total_usd).min() else {
        return;
    };
    for r in reports {
        r.normalized_cost = r.total_usd.ratio(min);
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct SummaryRow {
    strategy: String,
    input_tokens: u64,
    output_tokens: u64,
    chat_input_tokens: u64,
    total_usd: Usd,
    total_duration_ms: u64,
    mean_score: Option<f64>,
    normalized_cost: f64,
    queries: usize,
}

fn csv_err(e: impl std::fmt::Display) -> Error {
    Error::Storage(format!("csv: {e}"))
}

fn write_rows<T: Serialize>(rows: impl Iterator<Item = T>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for row in rows {
        w.serialize(row).map_err(csv_err)?;
    }
    let bytes = w.into_inner().map_err(csv_err)?;
    String::from_utf8(bytes).map_err(csv_err)
}

pub fn summary_csv(reports: &[StrategyReport]) -> Result<String> {
    write_rows(reports.iter().map(|r| SummaryRow {
        strategy: r.strategy.clone(),
        input_tokens: r.input_tokens,
        output_tokens: r.output_tokens,
        chat_input_tokens: r.chat_input_tokens,
        total_usd: r.total_usd,
        total_duration_ms: r.total_duration_ms,
        mean_score: r.mean_score,
        normalized_cost: r.normalized_cost,
        queries: r.per_query.len(),
    }))
}

pub fn per_query_csv(reports: &[StrategyReport]) -> Result<String> {
    write_rows(reports.iter().flat_map(|r| r.per_query.iter()))
}

/// Inverse of [`summary_csv`] and [`per_query_csv`].
pub fn parse_csv(summary: &str, per_query: &str) -> Result<Vec<StrategyReport>> {
    let mut queries: Vec<QueryReport> = csv::Reader::from_reader(per_query.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    let rows: Vec<SummaryRow> = csv::Reader::from_reader(summary.as_bytes())
        .deserialize()
        .collect::<std::result::Result<_, _>>()
        .map_err(csv_err)?;
    let mut out = Vec::with_capacity(rows.len());
    for row in rows {
        if queries.len() < row.queries {
            return Err(csv_err(format!("{}: missing per-query rows", row.strategy)));
        }
        let rest = queries.split_off(row.queries);
        let mine = std::mem::replace(&mut queries, rest);
        if mine.iter().any(|q| q.strategy != row.strategy) {
            return Err(csv_err(format!("{}: per-query rows out of order", row.strategy)));
        }
        out.push(StrategyReport {
            strategy: row.strategy,
            input_tokens: row.input_tokens,
            output_tokens: row.output_tokens,
            chat_input_tokens: row.chat_input_tokens,
            total_usd: row.total_usd,
            total_duration_ms: row.total_duration_ms,
            mean_score: row.mean_score,
            normalized_cost: row.normalized_cost,
            per_query: mine,
        });
    }
    if !queries.is_empty() {
        return Err(csv_err("per-query rows without a summary row"));
    }
    Ok(out)
}

/// Plain-text table of the summary.
pub fn render_summary(reports: &[StrategyReport]) -> String {
    let width = reports.iter().map(|r| r.strategy.len()).max().unwrap_or(8).max(8);
    let mut s = format!(
        "{:<width$}  {:>12}  {:>12}  {:>14}  {:>10}  {:>6}  {:>10}\n",
        "strategy", "input tok", "output tok", "usd", "normalized", "score", "time ms"
    );
    for r in reports {
        let score = r.mean_score.map(|m| format!("{m:.2}")).unwrap_or_else(|| "-".into());
        let _ = writeln!(
            s,
            "{:<width$}  {:>12}  {:>12}  {:>14}  {:>10.3}  {:>6}  {:>10}",
            r.strategy,
            r.input_tokens,
            r.output_tokens,
            r.total_usd.to_string(),
            r.normalized_cost,
            score,
            r.total_duration_ms
        );
    }
    s
}
