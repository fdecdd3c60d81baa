use humaine_core::conversation::{replay, Arm, EventKind, EventLog, Liked, SessionEvent, SessionLog, Timestamp};
use humaine_core::Error;
use proptest::prelude::*;

fn ev(at: u64, kind: EventKind) -> SessionEvent {
    SessionEvent::new("s1", Timestamp::from_millis(at), kind)
}

fn start(at: u64) -> SessionEvent {
    ev(at, EventKind::SessionStart { topic: "Travel and Culture".into(), arm: Arm::Experimental })
}

fn bot(at: u64, turn: u32) -> SessionEvent {
    ev(at, EventKind::BotMessage { turn_index: turn, text: format!("bot {turn}") })
}

fn user(at: u64, turn: u32, typing: Option<u64>) -> SessionEvent {
    ev(
        at,
        EventKind::UserMessage {
            turn_index: turn,
            text: format!("reply number {turn}."),
            typing_started_ms: typing.map(Timestamp::from_millis),
        },
    )
}

#[test]
fn replay_builds_turns_feedback_and_surveys() {
    let events = vec![
        start(0),
        ev(10, EventKind::Elicitation { question: "style".into(), answer: "casual".into() }),
        bot(100, 1),
        user(4_000, 1, Some(1_500)),
        ev(4_500, EventKind::Feedback { turn_index: 1, liked: Liked::Like }),
        bot(5_000, 2),
        ev(9_000, EventKind::Survey { question_id: 1, rating: 4 }),
        ev(9_500, EventKind::SessionEnd),
    ];
    let rec = SessionLog::from_events(events.clone()).unwrap().replay().unwrap();
    assert_eq!(rec.turns.len(), 2);
    assert_eq!(rec.completed_turns().count(), 1);
    assert_eq!(rec.turns[0].feedback.as_ref().unwrap().liked, Liked::Like);
    assert_eq!(rec.elicitation_answers.len(), 1);
    assert_eq!(rec.surveys.len(), 1);
    assert_eq!(rec.ended_at, Some(Timestamp::from_millis(9_500)));
    assert_eq!(replay(&events).unwrap(), rec);
}

#[test]
fn invalid_sequences_are_rejected() {
    let mut log = SessionLog::new();
    assert!(matches!(log.append(bot(0, 1)), Err(Error::SessionNotFound(_))));
    log.append(start(50)).unwrap();
    assert!(matches!(log.append(bot(10, 1)), Err(Error::OutOfOrder { at_ms: 10, last_ms: 50 })));
    assert!(log.append(start(60)).is_err());

    // replies must follow their own bot message
    assert!(replay(&[start(0), user(10, 1, None)]).is_err());
    assert!(replay(&[start(0), bot(5, 2)]).is_err());
    assert!(replay(&[start(0), bot(5, 1), user(10, 1, Some(1))]).is_err());
    assert!(replay(&[start(0), bot(5, 1), user(10, 1, None), user(12, 1, None)]).is_err());
    assert!(replay(&[]).is_err());
}

#[test]
fn events_serialise_flat_with_a_type_tag() {
    let e = user(1_000, 3, Some(400));
    let v = serde_json::to_value(&e).unwrap();
    assert_eq!(v["type"], "user_message");
    assert_eq!(v["session_id"], "s1");
    assert_eq!(v["turn_index"], 3);
    let back: SessionEvent = serde_json::from_value(v).unwrap();
    assert_eq!(back, e);
}

#[test]
fn multi_session_log_routes_by_id() {
    let mut log = EventLog::new();
    log.append(start(0)).unwrap();
    log.append(SessionEvent::new("s2", Timestamp::from_millis(0), EventKind::SessionEnd)).unwrap_err();
    log.append(bot(1, 1)).unwrap();
    assert_eq!(log.session("s1").unwrap().len(), 2);
    assert!(log.session("s2").is_none());
}

proptest! {
    /// Any well-formed conversation replays to as many turns as bot messages.
    #[test]
    fn replay_counts_turns(gaps in prop::collection::vec((1u64..5_000, 1u64..5_000, any::<bool>()), 1..15)) {
        let mut events = vec![start(0)];
        let mut t = 0;
        for (i, (think, typing, answered)) in gaps.iter().enumerate() {
            let turn = i as u32 + 1;
            t += think;
            events.push(bot(t, turn));
            if *answered {
                let began = t;
                t += typing;
                events.push(user(t, turn, Some(began)));
            }
        }
        let rec = replay(&events).unwrap();
        prop_assert_eq!(rec.turns.len(), gaps.len());
        prop_assert_eq!(rec.completed_turns().count(), gaps.iter().filter(|g| g.2).count());
        prop_assert!(SessionLog::from_events(events).is_ok());
    }
}
