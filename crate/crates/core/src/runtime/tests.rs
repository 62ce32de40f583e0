use super::*;
use crate::embed::FixtureEmbedder;
use crate::policy::MockPolicy;

const CATALOG: &str = include_str!("../../fixtures/sample_catalog.jsonl");
const EMBEDDINGS: &str = include_str!("../../fixtures/embeddings.jsonl");

fn room(config: RoomConfig) -> (Room, Arc<Mutex<MemorySink>>) {
    let state = Scenario::party().build_state(config);
    let catalog = Arc::new(BundleCatalog::parse_jsonl(CATALOG).unwrap());
    let embedder = Arc::new(FixtureEmbedder::parse_jsonl(EMBEDDINGS).unwrap());
    let sink = Arc::new(Mutex::new(MemorySink::default()));
    let room = Room::new(state, catalog, embedder, Arc::new(MockPolicy::shipped()))
        .unwrap()
        .with_sink(Box::new(sink.clone()))
        .unwrap();
    (room, sink)
}

fn a(id: &str) -> AgentId {
    AgentId::from(id)
}

fn injected(actor: &str, target: &str, bundle: &str) -> Event {
    Event {
        event_id: 0,
        logical_time: 0,
        actor: a(actor),
        target: Some(a(target)),
        source: Source::INJECTED,
        kind: EventKind::InjectedSocial,
        bundle_pair: Some(BundlePair {
            primary: BundleId::from(bundle),
            accompanying: None,
        }),
        dialogue: None,
        whisper_text: None,
        reply_to: None,
        chain_root: None,
        fell_back: false,
        superseded: false,
    }
}

fn whisper(agent: &str, target: Option<&str>, text: &str) -> Whisper {
    Whisper {
        player_id: format!("player-{}", agent.to_lowercase()),
        agent_id: a(agent),
        target_id: target.map(a),
        text: text.into(),
        logical_time: 0,
    }
}

fn run_chain(room: &mut Room, root: u64, max_rounds: usize) -> Vec<Event> {
    let mut out = Vec::new();
    for _ in 0..max_rounds {
        out.extend(room.advance_round().unwrap());
        if room.chain(root).is_some_and(|c| c.status != ChainStatus::Active) {
            break;
        }
    }
    out
}

#[test]
fn injected_chain_alternates_and_terminates() {
    let (mut room, _) = room(RoomConfig {
        master_seed: 3,
        ..Default::default()
    });
    let root = room.inject_event(injected("A", "B", "talk.debate")).unwrap();
    let events = run_chain(&mut room, root, 50);
    let chain = room.chain(root).copied().unwrap();
    assert_ne!(chain.status, ChainStatus::Active);
    let in_chain: Vec<&Event> = events.iter().filter(|e| e.chain_root == Some(root)).collect();
    assert_eq!(in_chain[0].event_id, root);
    for w in in_chain.windows(2) {
        assert_eq!(w[1].reply_to, Some(w[0].event_id));
        assert_eq!(w[1].source, next_source(w[0].source));
        assert_eq!(w[1].target.as_ref(), Some(&w[0].actor));
        assert_eq!(w[1].kind, EventKind::Reply);
    }
    assert_eq!(chain.max_source, in_chain.last().unwrap().source.get());
    for e in &room.state().history {
        e.validate().unwrap();
    }
}

#[test]
fn disabled_decay_hits_depth_cap() {
    let (mut room, _) = room(RoomConfig {
        decay_enabled: false,
        ..Default::default()
    });
    let root = room.inject_event(injected("A", "B", "talk.debate")).unwrap();
    run_chain(&mut room, root, 50);
    let chain = room.chain(root).unwrap();
    assert_eq!(chain.status, ChainStatus::DepthCap);
    assert_eq!(chain.max_source, 10);
    assert!(room.pending_stimuli(&a("A")).is_empty() && room.pending_stimuli(&a("B")).is_empty());
    // the chain stays halted
    for _ in 0..5 {
        assert!(room.advance_round().unwrap().iter().all(|e| e.chain_root != Some(root)));
    }
}

#[test]
fn event_ceiling_halts_room() {
    let (mut room, sink) = room(RoomConfig {
        decay_enabled: false,
        event_ceiling: 4,
        ..Default::default()
    });
    let root = room.inject_event(injected("A", "B", "talk.debate")).unwrap();
    for _ in 0..10 {
        room.advance_round().unwrap();
    }
    assert!(room.is_halted());
    assert_eq!(room.state().history.len(), 4);
    assert_eq!(room.chain(root).unwrap().status, ChainStatus::EventCeiling);
    let clock = room.state().logical_clock;
    assert!(room.advance_round().unwrap().is_empty());
    assert_eq!(room.state().logical_clock, clock);
    assert!(sink.lock().unwrap().text().contains("room_halted"));
}

#[test]
fn locked_agent_keeps_stimulus_pending() {
    let (mut room, sink) = room(RoomConfig {
        decay_enabled: false,
        ..Default::default()
    });
    // B is whispered a talk action, so it holds the lock when A's event lands
    room.submit_whisper(whisper("B", Some("C"), "compliment their outfit")).unwrap();
    let root = room.inject_event(injected("A", "B", "talk.debate")).unwrap();
    let first = room.advance_round().unwrap();
    assert!(first.iter().all(|e| e.reply_to != Some(root)));
    assert!(room.pending_stimuli(&a("B")).contains(&root));
    assert!(sink.lock().unwrap().text().contains("lock_rejected"));
    // B's praise raised its score toward C, so C's reply beats A's event
    let second = room.advance_round().unwrap();
    let reply = second.iter().find(|e| e.actor == a("B")).unwrap();
    assert_eq!(reply.target, Some(a("C")));
    assert!(!room.pending_stimuli(&a("B")).contains(&root));
    assert!(sink.lock().unwrap().text().contains(&format!(r#""stimulus":{root},"chosen""#)));
}

#[test]
fn second_whisper_supersedes_first() {
    let (mut room, _) = room(RoomConfig::default());
    let first = room.submit_whisper(whisper("A", Some("B"), "compliment them")).unwrap();
    let second = room.submit_whisper(whisper("A", Some("C"), "tell a joke")).unwrap();
    room.advance_round().unwrap();
    assert!(room.state().event(first).unwrap().superseded);
    assert!(!room.state().event(second).unwrap().superseded);
    let view = room.replay_view();
    assert!(view.history.iter().find(|e| e.event_id == first).unwrap().superseded);
}

#[test]
fn whisper_to_self_is_targetless() {
    let (mut room, _) = room(RoomConfig::default());
    let id = room.submit_whisper(whisper("C", None, "Dance")).unwrap();
    let events = room.advance_round().unwrap();
    let e = events.iter().find(|e| e.event_id == id).unwrap();
    assert_eq!((e.kind, e.source, e.target.clone()), (EventKind::Whisper, Source::INJECTED, None));
    assert_eq!(e.whisper_text.as_deref(), Some("Dance"));
    assert_eq!(e.bundle_pair.as_ref().unwrap().primary, BundleId::from("self.dance"));
}

#[test]
fn whisper_ownership_checked() {
    let (mut room, _) = room(RoomConfig::default());
    let mut w = whisper("A", Some("B"), "hello");
    w.player_id = "player-b".into();
    assert!(matches!(room.submit_whisper(w), Err(RuntimeError::Whisper(WhisperError::NotOwner { .. }))));
}

#[test]
fn heartbeat_fires_at_offset() {
    let (mut room, _) = room(RoomConfig::default());
    let mut fired = Vec::new();
    for _ in 0..5 {
        fired.extend(room.advance_round().unwrap());
    }
    assert_eq!(fired.len(), 1);
    let e = &fired[0];
    assert_eq!((e.actor.clone(), e.logical_time), (a("A"), 5));
    assert_eq!((e.kind, e.source, e.target.clone()), (EventKind::AutonomousAction, Source::AUTONOMOUS, None));
    assert_eq!(room.state().agents[&a("A")].next_heartbeat, 45);
}

#[test]
fn heartbeat_deferred_while_busy() {
    let (mut room, sink) = room(RoomConfig {
        decay_enabled: false,
        ..Default::default()
    });
    for _ in 0..4 {
        room.advance_round().unwrap();
    }
    // A acts in phase 1 at tick 5, so its heartbeat waits
    room.submit_whisper(whisper("A", None, "Stretch")).unwrap();
    let events = room.advance_round().unwrap();
    assert!(events.iter().all(|e| e.source != Source::AUTONOMOUS));
    assert!(sink.lock().unwrap().text().contains("heartbeat_deferred"));
    let next = room.advance_round().unwrap();
    assert!(next.iter().any(|e| e.actor == a("A") && e.source == Source::AUTONOMOUS));
    assert_eq!(room.state().agents[&a("A")].next_heartbeat, 45);
}

#[test]
fn trigger_validation() {
    let mut config = RoomConfig::default();
    config.grounding.max_pglv = 1;
    let (mut room, _) = room(config);
    let t = |bundle: &str, target: Option<&str>| Trigger {
        player_id: None,
        agent_id: a("A"),
        bundle_id: BundleId::from(bundle),
        target_id: target.map(a),
    };
    assert!(matches!(room.submit_trigger(t("talk.nope", Some("B"))), Err(RuntimeError::UnknownBundle(_))));
    assert!(matches!(room.submit_trigger(t("talk.joke", None)), Err(RuntimeError::Contract(_))));
    assert!(matches!(room.submit_trigger(t("talk.reveal", Some("B"))), Err(RuntimeError::BundleFiltered(_))));
    let id = room.submit_trigger(t("talk.comfort", Some("B"))).unwrap();
    let events = room.advance_round().unwrap();
    let e = events.iter().find(|e| e.event_id == id).unwrap();
    assert_eq!((e.kind, e.source), (EventKind::Trigger, Source::INJECTED));
    assert!(e.dialogue.is_some());
    assert_eq!(room.state().agents[&a("A")].relationship_to(&a("B")), 2);
}

#[test]
fn inject_rejects_bad_events() {
    let (mut room, _) = room(RoomConfig::default());
    let mut e = injected("A", "B", "talk.debate");
    e.source = Source(2);
    assert!(matches!(room.inject_event(e), Err(RuntimeError::Contract(_))));
    assert!(matches!(room.inject_event(injected("A", "Z", "talk.debate")), Err(RuntimeError::UnknownAgent(_))));
    assert!(matches!(room.inject_event(injected("A", "A", "talk.debate")), Err(RuntimeError::Contract(_))));
    assert!(matches!(room.inject_event(injected("A", "B", "talk.zzz")), Err(RuntimeError::UnknownBundle(_))));
}

#[test]
fn same_seed_same_trace_and_replay_matches() {
    let run = |seed| {
        let (mut room, sink) = room(RoomConfig {
            master_seed: seed,
            ..Default::default()
        });
        room.inject_event(injected("A", "B", "talk.debate")).unwrap();
        room.submit_whisper(whisper("C", Some("D"), "compliment them")).unwrap();
        for _ in 0..120 {
            room.advance_round().unwrap();
        }
        let text = sink.lock().unwrap().text();
        (text, room.replay_view())
    };
    let (t1, v1) = run(11);
    let (t2, _) = run(11);
    assert_eq!(t1, t2);
    let replayed = replay(t1.as_bytes()).unwrap();
    assert_eq!(replayed, v1);
}

#[test]
fn ids_and_clock_monotone() {
    let (mut room, _) = room(RoomConfig {
        master_seed: 5,
        ..Default::default()
    });
    room.inject_event(injected("E", "A", "talk.debate")).unwrap();
    for _ in 0..200 {
        room.advance_round().unwrap();
    }
    let h = &room.state().history;
    for w in h.windows(2) {
        assert!(w[0].event_id < w[1].event_id);
        assert!(w[0].logical_time <= w[1].logical_time);
    }
}

#[test]
fn subscribers_receive_events() {
    let (mut room, _) = room(RoomConfig::default());
    let rx = room.subscribe();
    room.submit_whisper(whisper("B", None, "Stretch")).unwrap();
    room.advance_round().unwrap();
    let got: Vec<Event> = rx.try_iter().collect();
    assert_eq!(got.len(), 1);
    assert_eq!(got[0].actor, a("B"));
}

#[test]
fn bystanders_join_when_enabled() {
    let (mut room, _) = room(RoomConfig {
        bystander_reply_prob: 1.0,
        decay_enabled: false,
        ..Default::default()
    });
    room.inject_event(injected("A", "B", "talk.debate")).unwrap();
    room.advance_round().unwrap();
    for id in ["B", "C", "D", "E"] {
        assert!(room.state().history.iter().any(|e| e.actor == a(id) && e.kind == EventKind::Reply), "{id}");
    }
}
