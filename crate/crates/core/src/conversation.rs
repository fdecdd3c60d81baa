//! Sessions, turns, feedback and surveys, plus the append-only event model
//! they are replayed from.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::profiler::{AdaptationAction, RewardSignal, UserProfile};
use crate::prompt::PromptParameters;
use crate::{Error, Result};

/// Milliseconds since the Unix epoch.
#[derive(
    Debug, Clone, Copy, Default, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize,
)]
#[serde(transparent)]
pub struct Timestamp(u64);

impl Timestamp {
    pub const fn from_millis(ms: u64) -> Self {
        Timestamp(ms)
    }

    pub const fn millis(self) -> u64 {
        self.0
    }

    pub fn plus_millis(self, ms: u64) -> Self {
        Timestamp(self.0 + ms)
    }

    /// Signed difference `self - earlier` in fractional seconds.
    pub fn seconds_since(self, earlier: Timestamp) -> f64 {
        (self.0 as f64 - earlier.0 as f64) / 1000.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Author {
    User,
    Bot,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub author: Author,
    pub text: String,
    /// Unicode scalar values in `text`.
    pub char_count: usize,
    pub sent_at: Timestamp,
    pub typing_started_at: Option<Timestamp>,
}

impl Utterance {
    pub fn bot(text: impl Into<String>, sent_at: Timestamp) -> Self {
        let text = text.into();
        Utterance {
            author: Author::Bot,
            char_count: text.chars().count(),
            text,
            sent_at,
            typing_started_at: None,
        }
    }

    pub fn user(
        text: impl Into<String>,
        typing_started_at: Option<Timestamp>,
        sent_at: Timestamp,
    ) -> Result<Self> {
        if let Some(start) = typing_started_at {
            if start > sent_at {
                return Err(Error::InvalidEvent(
                    "typing_started_at is after sent_at".to_string(),
                ));
            }
        }
        let text = text.into();
        Ok(Utterance {
            author: Author::User,
            char_count: text.chars().count(),
            text,
            sent_at,
            typing_started_at,
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Liked {
    Like,
    Dislike,
    #[default]
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeedbackEvent {
    pub turn_index: u32,
    pub liked: Liked,
    pub at: Timestamp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SurveyResponse {
    pub question_id: u32,
    pub rating: u8,
}

impl SurveyResponse {
    pub fn new(question_id: u32, rating: u8) -> Result<Self> {
        if !(1..=5).contains(&rating) {
            return Err(Error::OutOfRange(format!("survey rating {rating} not in 1..=5")));
        }
        Ok(SurveyResponse { question_id, rating })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Arm {
    Control,
    Experimental,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TurnRecord {
    /// 1-based turn index.
    pub index: u32,
    pub bot_prompt: Utterance,
    pub user_reply: Option<Utterance>,
    pub feedback: Option<FeedbackEvent>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ElicitationAnswer {
    pub question: String,
    pub answer: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionRecord {
    pub session_id: String,
    pub started_at: Timestamp,
    pub ended_at: Option<Timestamp>,
    pub topic: String,
    pub arm: Arm,
    pub turns: Vec<TurnRecord>,
    pub surveys: Vec<SurveyResponse>,
    pub elicitation_answers: Vec<ElicitationAnswer>,
}

impl SessionRecord {
    /// Turns that received a user reply.
    pub fn completed_turns(&self) -> impl Iterator<Item = &TurnRecord> {
        self.turns.iter().filter(|t| t.user_reply.is_some())
    }

    pub fn last_event_at(&self) -> Timestamp {
        let mut last = self.started_at;
        for t in &self.turns {
            last = last.max(t.bot_prompt.sent_at);
            if let Some(r) = &t.user_reply {
                last = last.max(r.sent_at);
            }
            if let Some(f) = &t.feedback {
                last = last.max(f.at);
            }
        }
        self.ended_at.map_or(last, |e| last.max(e))
    }
}

/// `t_end - t_start` in seconds.
pub fn session_duration(session: &SessionRecord) -> Result<f64> {
    let end = session.ended_at.ok_or(Error::OpenSession)?;
    if end < session.started_at {
        return Err(Error::InvalidEvent("session ends before it starts".to_string()));
    }
    Ok(end.seconds_since(session.started_at))
}

/// Type-specific payload of a logged event.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum EventKind {
    SessionStart {
        topic: String,
        arm: Arm,
    },
    BotMessage {
        turn_index: u32,
        text: String,
    },
    UserMessage {
        turn_index: u32,
        text: String,
        typing_started_ms: Option<Timestamp>,
    },
    Feedback {
        turn_index: u32,
        liked: Liked,
    },
    Elicitation {
        question: String,
        answer: String,
    },
    Survey {
        question_id: u32,
        rating: u8,
    },
    /// Profile adaptation applied before the bot message of `turn_index`.
    Adaptation {
        turn_index: u32,
        action: AdaptationAction,
        profile: UserProfile,
        params: PromptParameters,
    },
    Reward {
        turn_index: u32,
        signal: RewardSignal,
    },
    SessionEnd,
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub session_id: String,
    pub at_ms: Timestamp,
    #[serde(flatten)]
    pub kind: EventKind,
}

impl SessionEvent {
    pub fn new(session_id: impl Into<String>, at_ms: Timestamp, kind: EventKind) -> Self {
        SessionEvent { session_id: session_id.into(), at_ms, kind }
    }
}

/// Ordered events of a single session.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionLog {
    events: Vec<SessionEvent>,
}

impl SessionLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn events(&self) -> &[SessionEvent] {
        &self.events
    }

    pub fn last_at(&self) -> Option<Timestamp> {
        self.events.last().map(|e| e.at_ms)
    }

    /// Check that `event` may follow the current log.
    pub fn check(&self, event: &SessionEvent) -> Result<()> {
        match self.events.first() {
            None => {
                if !matches!(event.kind, EventKind::SessionStart { .. }) {
                    return Err(Error::SessionNotFound(event.session_id.clone()));
                }
            }
            Some(first) => {
                if first.session_id != event.session_id {
                    return Err(Error::SessionNotFound(event.session_id.clone()));
                }
                if matches!(event.kind, EventKind::SessionStart { .. }) {
                    return Err(Error::InvalidEvent("duplicate session_start".to_string()));
                }
                if matches!(self.events.last().map(|e| &e.kind), Some(EventKind::SessionEnd)) {
                    return Err(Error::InvalidEvent("session already ended".to_string()));
                }
            }
        }
        if let Some(last) = self.last_at() {
            if event.at_ms < last {
                return Err(Error::OutOfOrder {
                    at_ms: event.at_ms.millis(),
                    last_ms: last.millis(),
                });
            }
        }
        Ok(())
    }

    /// Append after validating ordering and session identity.
    pub fn append(&mut self, event: SessionEvent) -> Result<()> {
        self.check(&event)?;
        self.events.push(event);
        Ok(())
    }

    pub fn from_events(events: impl IntoIterator<Item = SessionEvent>) -> Result<Self> {
        let mut log = SessionLog::new();
        for e in events {
            log.append(e)?;
        }
        Ok(log)
    }

    /// Rebuild the session record from the logged events.
    pub fn replay(&self) -> Result<SessionRecord> {
        replay(&self.events)
    }
}

/// Replay an ordered event sequence into a [`SessionRecord`].
pub fn replay(events: &[SessionEvent]) -> Result<SessionRecord> {
    let first = events.first().ok_or(Error::EmptyInput("event log"))?;
    let (topic, arm) = match &first.kind {
        EventKind::SessionStart { topic, arm } => (topic.clone(), *arm),
        _ => return Err(Error::InvalidEvent("log must begin with session_start".to_string())),
    };
    let mut rec = SessionRecord {
        session_id: first.session_id.clone(),
        started_at: first.at_ms,
        ended_at: None,
        topic,
        arm,
        turns: Vec::new(),
        surveys: Vec::new(),
        elicitation_answers: Vec::new(),
    };
    for e in &events[1..] {
        let at = e.at_ms;
        match &e.kind {
            EventKind::SessionStart { .. } => {
                return Err(Error::InvalidEvent("duplicate session_start".to_string()))
            }
            EventKind::BotMessage { turn_index, text } => {
                if *turn_index as usize != rec.turns.len() + 1 {
                    return Err(Error::InvalidEvent(format!(
                        "bot message for turn {turn_index}, expected {}",
                        rec.turns.len() + 1
                    )));
                }
                rec.turns.push(TurnRecord {
                    index: *turn_index,
                    bot_prompt: Utterance::bot(text.clone(), at),
                    user_reply: None,
                    feedback: None,
                });
            }
            EventKind::UserMessage { turn_index, text, typing_started_ms } => {
                let turn = turn_mut(&mut rec, *turn_index)?;
                if turn.user_reply.is_some() {
                    return Err(Error::InvalidEvent(format!(
                        "turn {turn_index} already has a reply"
                    )));
                }
                if let Some(start) = typing_started_ms {
                    if *start < turn.bot_prompt.sent_at {
                        return Err(Error::InvalidEvent(
                            "typing started before the bot prompt".to_string(),
                        ));
                    }
                }
                turn.user_reply = Some(Utterance::user(text.clone(), *typing_started_ms, at)?);
            }
            EventKind::Feedback { turn_index, liked } => {
                let turn = turn_mut(&mut rec, *turn_index)?;
                turn.feedback = Some(FeedbackEvent { turn_index: *turn_index, liked: *liked, at });
            }
            EventKind::Elicitation { question, answer } => {
                rec.elicitation_answers
                    .push(ElicitationAnswer { question: question.clone(), answer: answer.clone() });
            }
            EventKind::Survey { question_id, rating } => {
                rec.surveys.push(SurveyResponse::new(*question_id, *rating)?);
            }
            EventKind::Adaptation { .. } | EventKind::Reward { .. } => {}
            EventKind::SessionEnd => rec.ended_at = Some(at),
        }
    }
    Ok(rec)
}

fn turn_mut(rec: &mut SessionRecord, index: u32) -> Result<&mut TurnRecord> {
    if index == 0 {
        return Err(Error::InvalidEvent("turn index 0".to_string()));
    }
    rec.turns
        .get_mut(index as usize - 1)
        .ok_or_else(|| Error::InvalidEvent(format!("turn {index} does not exist")))
}

/// In-memory multi-session log.
#[derive(Debug, Clone, Default)]
pub struct EventLog {
    sessions: BTreeMap<String, SessionLog>,
}

impl EventLog {
    pub fn new() -> Self {
        Self::default()
    }

    /// Append an event; a `session_start` opens a new session, anything else
    /// must target a known one.
    pub fn append(&mut self, event: SessionEvent) -> Result<()> {
        match self.sessions.get_mut(&event.session_id) {
            Some(log) => log.append(event),
            None => {
                if !matches!(event.kind, EventKind::SessionStart { .. }) {
                    return Err(Error::SessionNotFound(event.session_id));
                }
                let id = event.session_id.clone();
                let mut log = SessionLog::new();
                log.append(event)?;
                self.sessions.insert(id, log);
                Ok(())
            }
        }
    }

    pub fn session(&self, id: &str) -> Option<&SessionLog> {
        self.sessions.get(id)
    }

    pub fn len(&self) -> usize {
        self.sessions.values().map(SessionLog::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.sessions.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ev(at: u64, kind: EventKind) -> SessionEvent {
        SessionEvent::new("s1", Timestamp::from_millis(at), kind)
    }

    fn start(at: u64) -> SessionEvent {
        ev(at, EventKind::SessionStart { topic: "Personal Finance".into(), arm: Arm::Experimental })
    }

    #[test]
    fn session_start_creates_log_of_length_one() {
        let mut log = EventLog::new();
        assert!(log.is_empty());
        log.append(start(0)).unwrap();
        assert_eq!(log.len(), 1);
    }

    #[test]
    fn out_of_order_event_is_rejected() {
        let mut log = SessionLog::new();
        log.append(start(100)).unwrap();
        let err = log
            .append(ev(50, EventKind::BotMessage { turn_index: 1, text: "hi".into() }))
            .unwrap_err();
        assert_eq!(err, Error::OutOfOrder { at_ms: 50, last_ms: 100 });
    }

    #[test]
    fn unknown_session_is_not_found() {
        let mut log = EventLog::new();
        let err = log
            .append(ev(0, EventKind::BotMessage { turn_index: 1, text: "hi".into() }))
            .unwrap_err();
        assert!(matches!(err, Error::SessionNotFound(_)));
    }

    #[test]
    fn replay_builds_turns() {
        let log = SessionLog::from_events([
            start(0),
            ev(10, EventKind::BotMessage { turn_index: 1, text: "Hello.".into() }),
            ev(
                900,
                EventKind::UserMessage {
                    turn_index: 1,
                    text: "héllo".into(),
                    typing_started_ms: Some(Timestamp::from_millis(400)),
                },
            ),
            ev(950, EventKind::Feedback { turn_index: 1, liked: Liked::Like }),
            ev(960, EventKind::Feedback { turn_index: 1, liked: Liked::Dislike }),
            ev(1000, EventKind::Survey { question_id: 1, rating: 4 }),
            ev(248_000, EventKind::SessionEnd),
        ])
        .unwrap();
        let rec = log.replay().unwrap();
        assert_eq!(rec.turns.len(), 1);
        let reply = rec.turns[0].user_reply.as_ref().unwrap();
        assert_eq!(reply.char_count, 5);
        assert_eq!(rec.turns[0].feedback.unwrap().liked, Liked::Dislike);
        assert_eq!(session_duration(&rec).unwrap(), 248.0);
    }

    #[test]
    fn duration_cases() {
        let mut rec = SessionLog::from_events([start(5000)]).unwrap().replay().unwrap();
        assert_eq!(session_duration(&rec), Err(Error::OpenSession));
        rec.ended_at = Some(Timestamp::from_millis(5000));
        assert_eq!(session_duration(&rec).unwrap(), 0.0);
    }

    #[test]
    fn survey_rating_range() {
        assert!(SurveyResponse::new(1, 0).is_err());
        assert!(SurveyResponse::new(1, 6).is_err());
        assert!(SurveyResponse::new(1, 5).is_ok());
    }

    #[test]
    fn reply_to_missing_turn_fails_replay() {
        let events = [
            start(0),
            ev(1, EventKind::UserMessage { turn_index: 1, text: "x".into(), typing_started_ms: None }),
        ];
        assert!(replay(&events).is_err());
    }
}
