//! Placement-constraint evaluation.

use thiserror::Error;

use crate::resources::Host;

use super::app::{Constraint, Operator};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConstraintError {
    #[error("agent {host} has no attribute {field:?}")]
    UnknownField { host: String, field: String },
}

/// Anchored full-string pattern: `|` separates alternatives, `*` matches any
/// run of characters, everything else is literal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pattern {
    alternatives: Vec<String>,
}

impl Pattern {
    pub fn parse(text: &str) -> Result<Self, String> {
        if text.is_empty() {
            return Err("empty pattern".into());
        }
        Ok(Pattern {
            alternatives: text.split('|').map(str::to_owned).collect(),
        })
    }

    pub fn matches(&self, value: &str) -> bool {
        self.alternatives
            .iter()
            .any(|alt| glob(alt.as_bytes(), value.as_bytes()))
    }
}

fn glob(pattern: &[u8], text: &[u8]) -> bool {
    let (mut p, mut t) = (0, 0);
    let mut backtrack: Option<(usize, usize)> = None;
    while t < text.len() {
        if p < pattern.len() && pattern[p] == b'*' {
            backtrack = Some((p, t));
            p += 1;
        } else if p < pattern.len() && pattern[p] == text[t] {
            p += 1;
            t += 1;
        } else if let Some((star, consumed)) = backtrack {
            p = star + 1;
            t = consumed + 1;
            backtrack = Some((star, consumed + 1));
        } else {
            return false;
        }
    }
    pattern[p..].iter().all(|&c| c == b'*')
}

/// True iff `candidate` satisfies every constraint given the hosts already
/// running instances of the same app.
pub fn evaluate_constraints(
    constraints: &[Constraint],
    candidate: &Host,
    placed: &[&Host],
) -> Result<bool, ConstraintError> {
    for c in constraints {
        if !holds(c, candidate, placed)? {
            return Ok(false);
        }
    }
    Ok(true)
}

fn holds(c: &Constraint, candidate: &Host, placed: &[&Host]) -> Result<bool, ConstraintError> {
    let value = candidate.field(&c.field);
    match c.operator {
        Operator::Unique => {
            let mine = value.unwrap_or("");
            Ok(placed
                .iter()
                .all(|h| h.field(&c.field).unwrap_or("") != mine))
        }
        Operator::Cluster | Operator::Like => {
            let value = value.ok_or_else(|| ConstraintError::UnknownField {
                host: candidate.hostname.to_string(),
                field: c.field.clone(),
            })?;
            let expected = c.value.as_deref().unwrap_or_default();
            Ok(match c.operator {
                Operator::Cluster => value == expected,
                _ => Pattern::parse(expected).is_ok_and(|p| p.matches(value)),
            })
        }
    }
}

/// Checks a whole placement at once, as a sweep over a steady state would.
pub fn placement_is_valid(constraints: &[Constraint], hosts: &[&Host]) -> bool {
    hosts.iter().enumerate().all(|(i, h)| {
        let others: Vec<&Host> = hosts
            .iter()
            .enumerate()
            .filter(|&(j, _)| j != i)
            .map(|(_, h)| *h)
            .collect();
        evaluate_constraints(constraints, h, &others).unwrap_or(false)
    })
}
