use bounded_core::harness::{run_trial, Fixtures, Setup, TrialConfig};
use bounded_core::runtime::{replay, ReplayError, RoomConfig};

#[test]
fn replayed_trace_matches_live_room() {
    let f = Fixtures::shipped();
    let (mut room, sink) = f.room(RoomConfig::default()).unwrap();
    for _ in 0..300 {
        room.advance_round().unwrap();
    }
    room.flush().unwrap();
    let text = sink.lock().unwrap().text();
    let state = replay(text.as_bytes()).unwrap();
    assert_eq!(state, room.replay_view());
    assert!(!state.history.is_empty());
}

#[test]
fn replay_of_trial_trace_rebuilds_chain() {
    let f = Fixtures::shipped();
    let config = TrialConfig::for_setup(Setup::Baseline, false, 1);
    let run = run_trial(&config, &f, 5).unwrap();
    let state = replay(run.trace.as_bytes()).unwrap();
    let depth = state
        .history
        .iter()
        .filter(|e| e.chain_root == state.history.first().and_then(|e| e.chain_root))
        .map(|e| e.source.get())
        .max()
        .unwrap();
    assert_eq!(depth, run.metrics.max_depth);
}

#[test]
fn corrupt_line_is_reported_with_its_number() {
    let f = Fixtures::shipped();
    let config = TrialConfig::for_setup(Setup::Baseline, true, 1);
    let run = run_trial(&config, &f, 0).unwrap();
    let mut lines: Vec<&str> = run.trace.lines().collect();
    lines[3] = "{\"kind\": garbage";
    let err = replay(lines.join("\n").as_bytes()).unwrap_err();
    match err {
        ReplayError::Corrupt { line, .. } => assert_eq!(line, 4),
        other => panic!("expected corrupt line, got {other}"),
    }
}

#[test]
fn empty_trace_has_no_header() {
    assert!(matches!(replay(&b""[..]), Err(ReplayError::MissingHeader)));
}
