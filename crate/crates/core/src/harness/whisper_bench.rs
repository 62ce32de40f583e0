use std::collections::BTreeMap;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::{Fixtures, HarnessError};
use crate::model::{AgentId, BundleId};
use crate::runtime::RoomConfig;
use crate::whisper::Whisper;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Condition {
    ToOther,
    ToSelf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Annotation {
    Success,
    Partial,
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FailureMode {
    TalkMisalignment,
    ActionMisalignment,
    OverSoftened,
    UnclearWhisper,
    SemanticDrift,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct WhisperCase {
    pub id: String,
    pub whisper: String,
    pub condition: Condition,
    pub agent: AgentId,
    #[serde(default)]
    pub target: Option<AgentId>,
    pub direction: String,
    #[serde(default)]
    pub expected_bundles: Vec<BundleId>,
    #[serde(default)]
    pub expect_fallback: bool,
    pub annotation: Annotation,
    #[serde(default)]
    pub failure_mode: Option<FailureMode>,
}

/// A case rerun with an opposing whisper in the same context.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CrossCase {
    pub case: String,
    pub opposing: String,
}

fn parse_jsonl<T: DeserializeOwned>(text: &str) -> Result<Vec<T>, HarnessError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| HarnessError::Case {
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

pub fn parse_whisper_cases(text: &str) -> Result<Vec<WhisperCase>, HarnessError> {
    let cases: Vec<WhisperCase> = parse_jsonl(text)?;
    for (i, c) in cases.iter().enumerate() {
        let bad = match c.condition {
            Condition::ToOther => c.target.is_none(),
            Condition::ToSelf => c.target.is_some(),
        };
        if bad {
            return Err(HarnessError::Case {
                line: i + 1,
                message: format!("case {}: target does not match condition", c.id),
            });
        }
    }
    Ok(cases)
}

pub fn parse_cross_cases(text: &str) -> Result<Vec<CrossCase>, HarnessError> {
    parse_jsonl(text)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CaseResult {
    pub id: String,
    pub condition: Condition,
    pub primary: Option<BundleId>,
    pub accompanying: Option<BundleId>,
    pub dialogue: Option<String>,
    pub fell_back: bool,
    /// The grounded pair matches the case's expected bundles or fallback.
    pub matched_expectation: bool,
    pub annotation: Annotation,
    pub failure_mode: Option<FailureMode>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionRate {
    pub n: usize,
    pub success: usize,
    pub partial: usize,
    pub failure: usize,
    /// (success + partial) / n, from the annotations.
    pub aligned_rate: f64,
    /// Share of cases whose grounded pair matched the expectation.
    pub matched_rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossResult {
    pub case: String,
    pub original: Option<BundleId>,
    pub opposing: Option<BundleId>,
    pub flipped: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WhisperReport {
    pub policy_id: String,
    pub conditions: BTreeMap<Condition, ConditionRate>,
    pub failure_modes: BTreeMap<FailureMode, usize>,
    pub cross: Vec<CrossResult>,
    pub flips: usize,
    pub cases: Vec<CaseResult>,
}

impl WhisperReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn to_table(&self) -> String {
        let mut out = format!(
            "# policy {}\n{:<9} {:>3} {:>8} {:>8} {:>8} {:>9} {:>9}\n",
            self.policy_id, "condition", "N", "success", "partial", "failure", "aligned", "matched"
        );
        for (c, r) in &self.conditions {
            out.push_str(&format!(
                "{:<9} {:>3} {:>8} {:>8} {:>8} {:>8.1}% {:>8.1}%\n",
                match c {
                    Condition::ToOther => "to-other",
                    Condition::ToSelf => "to-self",
                },
                r.n,
                r.success,
                r.partial,
                r.failure,
                r.aligned_rate * 100.0,
                r.matched_rate * 100.0
            ));
        }
        for (m, n) in &self.failure_modes {
            out.push_str(&format!("failure mode {m:?}: {n}\n"));
        }
        out.push_str(&format!("cross-whisper flips: {}/{}\n", self.flips, self.cross.len()));
        for c in &self.cross {
            out.push_str(&format!(
                "  {}: {} -> {} {}\n",
                c.case,
                c.original.as_ref().map_or("-".into(), |b| b.to_string()),
                c.opposing.as_ref().map_or("-".into(), |b| b.to_string()),
                if c.flipped { "flipped" } else { "same" }
            ));
        }
        out
    }
}

struct Outcome {
    primary: Option<BundleId>,
    accompanying: Option<BundleId>,
    dialogue: Option<String>,
    fell_back: bool,
}

/// Submits one whisper to a fresh room and runs one round.
fn execute(
    fixtures: &Fixtures,
    seed: u64,
    agent: &AgentId,
    target: Option<&AgentId>,
    text: &str,
) -> Result<Outcome, HarnessError> {
    let (mut room, _) = fixtures.room(RoomConfig {
        master_seed: seed,
        ..Default::default()
    })?;
    let owner = room
        .state()
        .agent(agent)
        .ok_or_else(|| HarnessError::UnknownAgent(agent.clone()))?
        .owner
        .clone()
        .unwrap_or_default();
    if let Some(t) = target {
        if room.state().agent(t).is_none() {
            return Err(HarnessError::UnknownAgent(t.clone()));
        }
    }
    let id = room.submit_whisper(Whisper {
        player_id: owner,
        agent_id: agent.clone(),
        target_id: target.cloned(),
        text: text.to_string(),
        logical_time: 0,
    })?;
    let events = room.advance_round()?;
    let event = events.into_iter().find(|e| e.event_id == id);
    Ok(match event {
        Some(e) => Outcome {
            primary: e.bundle_pair.as_ref().map(|p| p.primary.clone()),
            accompanying: e.bundle_pair.as_ref().and_then(|p| p.accompanying.clone()),
            dialogue: e.dialogue,
            fell_back: e.fell_back,
        },
        None => Outcome {
            primary: None,
            accompanying: None,
            dialogue: None,
            fell_back: false,
        },
    })
}

/// Runs every case through the full whisper pipeline, then the cross-whisper
/// pairs: same agent, target and seed, opposing text.
pub fn run_whisper_benchmark(
    cases: &[WhisperCase],
    cross: &[CrossCase],
    fixtures: &Fixtures,
    seed: u64,
) -> Result<WhisperReport, HarnessError> {
    let mut results = Vec::with_capacity(cases.len());
    for c in cases {
        let o = execute(fixtures, seed, &c.agent, c.target.as_ref(), &c.whisper)?;
        let matched_expectation = if c.expect_fallback {
            o.fell_back
        } else {
            [&o.primary, &o.accompanying]
                .into_iter()
                .flatten()
                .any(|b| c.expected_bundles.contains(b))
        };
        results.push(CaseResult {
            id: c.id.clone(),
            condition: c.condition,
            primary: o.primary,
            accompanying: o.accompanying,
            dialogue: o.dialogue,
            fell_back: o.fell_back,
            matched_expectation,
            annotation: c.annotation,
            failure_mode: c.failure_mode,
        });
    }

    let mut conditions = BTreeMap::new();
    for cond in [Condition::ToOther, Condition::ToSelf] {
        let rs: Vec<&CaseResult> = results.iter().filter(|r| r.condition == cond).collect();
        if rs.is_empty() {
            continue;
        }
        let count = |a: Annotation| rs.iter().filter(|r| r.annotation == a).count();
        let (success, partial, failure) = (count(Annotation::Success), count(Annotation::Partial), count(Annotation::Failure));
        let n = rs.len();
        conditions.insert(
            cond,
            ConditionRate {
                n,
                success,
                partial,
                failure,
                aligned_rate: (success + partial) as f64 / n as f64,
                matched_rate: rs.iter().filter(|r| r.matched_expectation).count() as f64 / n as f64,
            },
        );
    }
    let mut failure_modes = BTreeMap::new();
    for m in results.iter().filter_map(|r| r.failure_mode) {
        *failure_modes.entry(m).or_insert(0) += 1;
    }

    let mut cross_results = Vec::with_capacity(cross.len());
    for x in cross {
        let base = cases
            .iter()
            .find(|c| c.id == x.case)
            .ok_or_else(|| HarnessError::Config(format!("cross case {} has no base case", x.case)))?;
        let original = results.iter().find(|r| r.id == x.case).and_then(|r| r.primary.clone());
        let opposing = execute(fixtures, seed, &base.agent, base.target.as_ref(), &x.opposing)?.primary;
        cross_results.push(CrossResult {
            case: x.case.clone(),
            flipped: original.is_some() && opposing.is_some() && original != opposing,
            original,
            opposing,
        });
    }

    Ok(WhisperReport {
        policy_id: fixtures.policy.id().to_string(),
        conditions,
        failure_modes,
        flips: cross_results.iter().filter(|c| c.flipped).count(),
        cross: cross_results,
        cases: results,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{SHIPPED_CROSS_CASES, SHIPPED_WHISPER_CASES};

    #[test]
    fn shipped_cases_parse() {
        let cases = parse_whisper_cases(SHIPPED_WHISPER_CASES).unwrap();
        assert_eq!(cases.iter().filter(|c| c.condition == Condition::ToOther).count(), 20);
        assert_eq!(cases.iter().filter(|c| c.condition == Condition::ToSelf).count(), 10);
        assert_eq!(parse_cross_cases(SHIPPED_CROSS_CASES).unwrap().len(), 5);
    }

    #[test]
    fn mismatched_condition_rejected() {
        let line = r#"{"id":"x","whisper":"hi","condition":"to_self","agent":"A","target":"B","direction":"d","annotation":"success"}"#;
        assert!(matches!(parse_whisper_cases(line), Err(HarnessError::Case { line: 1, .. })));
    }

    #[test]
    fn unknown_agent() {
        let case = WhisperCase {
            id: "x".into(),
            whisper: "hi".into(),
            condition: Condition::ToSelf,
            agent: AgentId::from("Q"),
            target: None,
            direction: "d".into(),
            expected_bundles: vec![],
            expect_fallback: false,
            annotation: Annotation::Success,
            failure_mode: None,
        };
        assert!(matches!(
            run_whisper_benchmark(&[case], &[], &Fixtures::shipped(), 0),
            Err(HarnessError::UnknownAgent(_))
        ));
    }

    #[test]
    fn shipped_benchmark_under_mock() {
        let cases = parse_whisper_cases(SHIPPED_WHISPER_CASES).unwrap();
        let cross = parse_cross_cases(SHIPPED_CROSS_CASES).unwrap();
        let r = run_whisper_benchmark(&cases, &cross, &Fixtures::shipped(), 0).unwrap();
        let other = &r.conditions[&Condition::ToOther];
        assert_eq!(other.matched_rate, 1.0, "{}", r.to_table());
        assert_eq!(r.flips, 5, "{}", r.to_table());
        for c in r.cases.iter().filter(|c| c.id.starts_with('s')) {
            assert!(c.matched_expectation, "{}", c.id);
        }
    }
}
