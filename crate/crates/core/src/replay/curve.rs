//! Cumulative input tokens of a uniform conversation under last-k context.

use std::fmt::Write as _;

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenCurve {
    pub ks: Vec<usize>,
    /// `cumulative[i][j]`: input tokens of queries `0..=i` under `ks[j]`.
    pub cumulative: Vec<Vec<u64>>,
}

/// `n` queries of `input` tokens each answered with `output` tokens; query
/// `i` carries its own tokens plus the `min(k, i)` previous exchanges.
pub fn token_curve(n: usize, ks: &[usize], input: u64, output: u64) -> Result<TokenCurve> {
    if n == 0 {
        return Err(Error::BadRequest("curve needs at least one query".into()));
    }
    if ks.is_empty() {
        return Err(Error::BadRequest("curve needs at least one k".into()));
    }
    let mut totals = vec![0u64; ks.len()];
    let mut cumulative = Vec::with_capacity(n);
    for i in 0..n {
        for (t, &k) in totals.iter_mut().zip(ks) {
            *t += input + k.min(i) as u64 * (input + output);
        }
        cumulative.push(totals.clone());
    }
    Ok(TokenCurve {
        ks: ks.to_vec(),
        cumulative,
    })
}

impl TokenCurve {
    pub fn final_totals(&self) -> &[u64] {
        self.cumulative.last().map(Vec::as_slice).unwrap_or(&[])
    }

    pub fn final_total(&self, k: usize) -> Option<u64> {
        let j = self.ks.iter().position(|&x| x == k)?;
        Some(self.final_totals()[j])
    }

    /// Final total under `k` over the final total under `base`.
    pub fn ratio(&self, k: usize, base: usize) -> Option<f64> {
        Some(self.final_total(k)? as f64 / self.final_total(base)? as f64)
    }

    /// `query,k=<k>,...` with queries numbered from 1.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("query");
        for k in &self.ks {
            let _ = write!(s, ",k={k}");
        }
        s.push('\n');
        for (i, row) in self.cumulative.iter().enumerate() {
            let _ = write!(s, "{}", i + 1);
            for v in row {
                let _ = write!(s, ",{v}");
            }
            s.push('\n');
        }
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{full_context_closed_form, lastk_input_tokens, TokenUsage};

    #[test]
    fn uniform_example() {
        let c = token_curve(50, &[0, 1, 50], 100, 100).unwrap();
        assert_eq!(c.final_totals(), [5_000, 14_800, 250_000]);
        assert_eq!(c.ratio(50, 0), Some(50.0));
        assert_eq!(c.final_total(50), Some(full_context_closed_form(50, 100, 100)));
        assert!(c.to_csv().starts_with("query,k=0,k=1,k=50\n1,100,100,100\n2,200,400,400\n"));
    }

    #[test]
    fn agrees_with_the_estimator_on_every_prefix() {
        let c = token_curve(20, &[0, 2, 7, 20], 13, 4).unwrap();
        for (i, row) in c.cumulative.iter().enumerate() {
            let msgs = vec![TokenUsage::new(13, 4); i + 1];
            for (j, &k) in c.ks.iter().enumerate() {
                assert_eq!(row[j], lastk_input_tokens(&msgs, k));
            }
        }
    }

    #[test]
    fn single_query_is_just_its_input() {
        let c = token_curve(1, &[0, 3, 99], 42, 7).unwrap();
        assert_eq!(c.final_totals(), [42, 42, 42]);
        assert!(token_curve(0, &[1], 1, 1).is_err());
    }
}
