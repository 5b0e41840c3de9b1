//! The comparison-tree predicate language used by policy rules.

use serde::{Deserialize, Serialize};

use super::context::{EvaluationContext, FieldValue};
use super::{PolicyError, Thresholds};
use crate::decision::{AgentProposal, Observation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CmpOp {
    Gt,
    Ge,
    Lt,
    Le,
    Eq,
    Ne,
}

impl CmpOp {
    fn apply(self, a: f64, b: f64) -> bool {
        match self {
            CmpOp::Gt => a > b,
            CmpOp::Ge => a >= b,
            CmpOp::Lt => a < b,
            CmpOp::Le => a <= b,
            CmpOp::Eq => a == b,
            CmpOp::Ne => a != b,
        }
    }
}

/// Right-hand side of a comparison: a literal or a named bundle threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Operand {
    Number(f64),
    Threshold { threshold: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Comparison {
    pub field: String,
    pub op: CmpOp,
    pub value: Operand,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Membership {
    pub field: String,
    pub values: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BoolTest {
    pub field: String,
    pub value: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Predicate {
    All(Vec<Predicate>),
    Any(Vec<Predicate>),
    Not(Box<Predicate>),
    Cmp(Comparison),
    In(Membership),
    Is(BoolTest),
    /// True when an optional context field carries a value.
    Present(String),
}

impl Predicate {
    /// Every context field name this predicate reads.
    pub fn fields(&self, out: &mut Vec<String>) {
        match self {
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.fields(out)),
            Predicate::Not(p) => p.fields(out),
            Predicate::Cmp(c) => out.push(c.field.clone()),
            Predicate::In(m) => out.push(m.field.clone()),
            Predicate::Is(b) => out.push(b.field.clone()),
            Predicate::Present(f) => out.push(f.clone()),
        }
    }

    pub fn thresholds(&self, out: &mut Vec<String>) {
        match self {
            Predicate::All(ps) | Predicate::Any(ps) => ps.iter().for_each(|p| p.thresholds(out)),
            Predicate::Not(p) => p.thresholds(out),
            Predicate::Cmp(Comparison {
                value: Operand::Threshold { threshold },
                ..
            }) => out.push(threshold.clone()),
            _ => {}
        }
    }
}

pub(crate) struct Evaluator<'a> {
    pub proposal: &'a AgentProposal,
    pub ctx: &'a EvaluationContext,
    pub thresholds: &'a Thresholds,
    pub rule_id: &'a str,
    pub observations: Vec<Observation>,
}

impl Evaluator<'_> {
    fn missing(&self, field: &str) -> PolicyError {
        PolicyError::ContextMissingField {
            rule_id: self.rule_id.to_string(),
            field: field.to_string(),
        }
    }

    fn value(&self, field: &str) -> Result<FieldValue, PolicyError> {
        self.ctx
            .field(field, self.proposal)
            .ok_or_else(|| PolicyError::UnknownFieldInPredicate {
                rule_id: self.rule_id.to_string(),
                field: field.to_string(),
            })?
            .ok_or_else(|| self.missing(field))
    }

    /// Short-circuit evaluation, left to right.
    pub fn eval(&mut self, p: &Predicate) -> Result<bool, PolicyError> {
        match p {
            Predicate::All(ps) => {
                for q in ps {
                    if !self.eval(q)? {
                        return Ok(false);
                    }
                }
                Ok(true)
            }
            Predicate::Any(ps) => {
                for q in ps {
                    if self.eval(q)? {
                        return Ok(true);
                    }
                }
                Ok(false)
            }
            Predicate::Not(q) => Ok(!self.eval(q)?),
            Predicate::Present(f) => Ok(self
                .ctx
                .field(f, self.proposal)
                .ok_or_else(|| PolicyError::UnknownFieldInPredicate {
                    rule_id: self.rule_id.to_string(),
                    field: f.clone(),
                })?
                .is_some()),
            Predicate::Cmp(c) => {
                let observed = match self.value(&c.field)? {
                    FieldValue::Num(x) => x,
                    _ => return Err(PolicyError::TypeMismatch {
                        rule_id: self.rule_id.to_string(),
                        field: c.field.clone(),
                    }),
                };
                let threshold = match &c.value {
                    Operand::Number(x) => *x,
                    Operand::Threshold { threshold } => self.thresholds.get(threshold).ok_or_else(|| {
                        PolicyError::UnknownThreshold {
                            rule_id: self.rule_id.to_string(),
                            name: threshold.clone(),
                        }
                    })?,
                };
                let hit = c.op.apply(observed, threshold);
                self.observations.push(Observation {
                    field: c.field.clone(),
                    observed: serde_json::json!(observed),
                    threshold: serde_json::json!(threshold),
                });
                Ok(hit)
            }
            Predicate::In(m) => match self.value(&m.field)? {
                FieldValue::Str(s) => Ok(m.values.contains(&s)),
                _ => Err(PolicyError::TypeMismatch {
                    rule_id: self.rule_id.to_string(),
                    field: m.field.clone(),
                }),
            },
            Predicate::Is(b) => match self.value(&b.field)? {
                FieldValue::Bool(x) => {
                    self.observations.push(Observation {
                        field: b.field.clone(),
                        observed: serde_json::json!(x),
                        threshold: serde_json::json!(b.value),
                    });
                    Ok(x == b.value)
                }
                _ => Err(PolicyError::TypeMismatch {
                    rule_id: self.rule_id.to_string(),
                    field: b.field.clone(),
                }),
            },
        }
    }
}
