use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use super::{DialoguePair, PolicyBackend, PolicyContext, PolicyFailure, PolicyProposal, StimulusKind};
use crate::rng::fnv1a64;

const GENERIC_TALK: &str = "ask what they think";
const GENERIC_DIALOGUE: [&str; 2] = ["What do you think, {target}?", "I'd like to hear your view, {target}."];
const GENERIC_SELF: &str = "Stand idle";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MockRule {
    pub keywords: Vec<String>,
    pub talk_name: String,
    #[serde(default)]
    pub nontalk_name: Option<String>,
    #[serde(default)]
    pub dialogue: Vec<String>,
}

impl MockRule {
    fn matches(&self, lowered: &str) -> bool {
        self.keywords.iter().any(|k| lowered.contains(&k.to_lowercase()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct MockRuleSet {
    pub rules: Vec<MockRule>,
    /// Self-intents heartbeats pick from.
    #[serde(default)]
    pub autonomous: Vec<String>,
}

impl MockRuleSet {
    pub fn shipped() -> Self {
        serde_json::from_str(include_str!("../../fixtures/mock_rules.json")).expect("shipped rule table parses")
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, String> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Deterministic keyword-rule policy.
///
/// The first rule whose keyword occurs in the lowercased stimulus text wins.
/// Heartbeats always yield a self intent chosen by hashing agent and time.
#[derive(Debug, Default)]
pub struct MockPolicy {
    rules: MockRuleSet,
    propose_calls: AtomicU64,
    dialogue_calls: AtomicU64,
}

impl MockPolicy {
    pub fn new(rules: MockRuleSet) -> Self {
        Self {
            rules,
            propose_calls: AtomicU64::new(0),
            dialogue_calls: AtomicU64::new(0),
        }
    }

    pub fn shipped() -> Self {
        Self::new(MockRuleSet::shipped())
    }

    pub fn propose_calls(&self) -> u64 {
        self.propose_calls.load(Ordering::Relaxed)
    }

    pub fn dialogue_calls(&self) -> u64 {
        self.dialogue_calls.load(Ordering::Relaxed)
    }

    pub fn matching_rule(&self, text: &str) -> Option<&MockRule> {
        let lowered = text.to_lowercase();
        self.rules.rules.iter().find(|r| r.matches(&lowered))
    }

    fn fill(template: &str, context: &PolicyContext) -> String {
        let agent = context.display_name(&context.acting_agent);
        let target = context
            .stimulus
            .target
            .as_ref()
            .map_or_else(|| "friend".to_string(), |t| context.display_name(t));
        template.replace("{agent}", &agent).replace("{target}", &target)
    }
}

impl PolicyBackend for MockPolicy {
    fn id(&self) -> &str {
        "mock"
    }

    fn propose(&self, context: &PolicyContext) -> Result<PolicyProposal, PolicyFailure> {
        self.propose_calls.fetch_add(1, Ordering::Relaxed);
        if context.stimulus.kind == StimulusKind::Heartbeat {
            let key = format!("{}/{}", context.acting_agent, context.logical_time);
            let intent = match self.rules.autonomous.len() {
                0 => GENERIC_SELF.to_string(),
                n => self.rules.autonomous[(fnv1a64(key.as_bytes()) % n as u64) as usize].clone(),
            };
            return Ok(PolicyProposal {
                self_intent: Some(intent),
                rationale: Some("heartbeat".into()),
                ..Default::default()
            });
        }
        Ok(match self.matching_rule(&context.stimulus.text) {
            Some(rule) => PolicyProposal {
                talk_name: rule.talk_name.clone(),
                nontalk_name: rule.nontalk_name.clone(),
                dialogue: rule.dialogue.first().map(|t| Self::fill(t, context)),
                rationale: Some(format!("rule {:?}", rule.keywords)),
                self_intent: None,
                target_id: None,
            },
            None => PolicyProposal {
                talk_name: GENERIC_TALK.into(),
                nontalk_name: None,
                dialogue: Some(Self::fill(GENERIC_DIALOGUE[0], context)),
                rationale: Some("no rule matched".into()),
                self_intent: None,
                target_id: None,
            },
        })
    }

    fn generate_dialogue(
        &self,
        context: &PolicyContext,
        pair: DialoguePair<'_>,
        attempt: u32,
    ) -> Result<String, PolicyFailure> {
        if !pair.talk.is_dialogue_action() {
            return Err(PolicyFailure::Precondition(format!("{} is not a dialogue action", pair.talk.id)));
        }
        self.dialogue_calls.fetch_add(1, Ordering::Relaxed);
        let templates: Vec<&str> = match self.matching_rule(&context.stimulus.text) {
            Some(rule) if !rule.dialogue.is_empty() => rule.dialogue.iter().map(String::as_str).collect(),
            _ => GENERIC_DIALOGUE.to_vec(),
        };
        let template = templates[attempt as usize % templates.len()];
        Ok(Self::fill(template, context))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{AgentState, BehaviorBundle, PoolKind, PriorityClass, RoomState};
    use crate::policy::{Stimulus, HISTORY_WINDOW};
    use crate::runtime::RoomConfig;

    fn context(kind: StimulusKind, text: &str, time: u64) -> PolicyContext {
        let mut room = RoomState::new("party", RoomConfig::default());
        room.logical_clock = time;
        for (id, name) in [("A", "Aiko"), ("B", "Bruno")] {
            room.agents.insert(id.into(), AgentState::new(id.into(), name));
        }
        let stimulus = Stimulus {
            kind,
            priority: PriorityClass::A,
            text: text.into(),
            event: None,
            target: (kind != StimulusKind::Heartbeat).then(|| "B".into()),
        };
        PolicyContext::build(&room, &"A".into(), stimulus, HISTORY_WINDOW)
    }

    fn talk() -> BehaviorBundle {
        BehaviorBundle {
            id: "talk.praise".into(),
            name: "Praise/Compliment".into(),
            pool: PoolKind::Talk,
            emotion_valence: vec![],
            pglv: 1,
            relationship_delta: 0,
            is_safe_default: false,
            metadata: Default::default(),
        }
    }

    #[test]
    fn compliment_rule() {
        let p = MockPolicy::shipped();
        let prop = p.propose(&context(StimulusKind::Whisper, "Compliment their recent achievement", 3)).unwrap();
        assert_eq!(prop.talk_name, "praise their achievement");
        assert_eq!(prop.nontalk_name.as_deref(), Some("smile warmly"));
        assert_eq!(p.propose_calls(), 1);
    }

    #[test]
    fn push_back_rule() {
        let p = MockPolicy::shipped();
        let prop = p.propose(&context(StimulusKind::Whisper, "push back on their idea", 3)).unwrap();
        assert_eq!(prop.talk_name, "voice disagreement with their view");
    }

    #[test]
    fn empty_table_gives_generic_proposal() {
        let p = MockPolicy::new(MockRuleSet::default());
        let prop = p.propose(&context(StimulusKind::Whisper, "compliment them", 3)).unwrap();
        assert_eq!(prop.talk_name, GENERIC_TALK);
        let hb = p.propose(&context(StimulusKind::Heartbeat, "", 3)).unwrap();
        assert_eq!(hb.self_intent.as_deref(), Some(GENERIC_SELF));
    }

    #[test]
    fn heartbeat_is_self_directed_and_deterministic() {
        let p = MockPolicy::shipped();
        let a = p.propose(&context(StimulusKind::Heartbeat, "", 45)).unwrap();
        let b = p.propose(&context(StimulusKind::Heartbeat, "", 45)).unwrap();
        assert_eq!(a, b);
        assert!(a.is_self_directed());
    }

    #[test]
    fn dialogue_templates_fill_names() {
        let p = MockPolicy::shipped();
        let ctx = context(StimulusKind::Whisper, "praise them", 3);
        let bundle = talk();
        let pair = DialoguePair { talk: &bundle, nontalk: None };
        assert_eq!(p.generate_dialogue(&ctx, pair, 0).unwrap(), "That pitch you closed last week? Brilliant.");
        assert_eq!(p.generate_dialogue(&ctx, pair, 1).unwrap(), "Bruno, honestly, that was impressive work.");
        assert_eq!(p.generate_dialogue(&ctx, pair, 1).unwrap(), p.generate_dialogue(&ctx, pair, 1).unwrap());
    }

    #[test]
    fn dialogue_requires_talk_bundle() {
        let p = MockPolicy::shipped();
        let mut b = talk();
        b.pool = PoolKind::NonTalk;
        let ctx = context(StimulusKind::Whisper, "praise", 0);
        assert!(p.generate_dialogue(&ctx, DialoguePair { talk: &b, nontalk: None }, 0).is_err());
    }
}
