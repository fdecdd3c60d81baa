//! HTTP service for live chat sessions, versioned under `/v1`.
//!
//! Each session's event log on disk is the source of truth: a call's events
//! are written before its response is sent, and a failed write undoes the
//! call. One message per session is processed at a time; a concurrent one
//! gets 429.

use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex, PoisonError};
use std::time::{SystemTime, UNIX_EPOCH};

use axum::body::Bytes;
use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use humaine_core::conversation::{Arm, ElicitationAnswer, EventKind, Liked, SessionEvent, Timestamp};
use humaine_core::experiment::{pretrain, sha256_hex, ExperimentConfig, TrainedModels};
use humaine_core::gateway::mock_complete;
use humaine_core::live::{LiveContext, LiveSession, LiveSettings, Participant, ProfileSnapshot, TurnError, UserMessage};
use humaine_core::metrics::MetricsConfig;
use humaine_core::profiler::{ActionMode, AdaptiveAgent, AgentConfig, PpoConfig, PpoLearner, ProfilerModel, RewardSignal};
use humaine_core::prompt::{ElicitationQuestion, PromptParameters};
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use tokio::sync::Mutex as TurnLock;

use crate::error::Error;
use crate::formats::{load_snapshot, ModelSnapshot};
use crate::llm::{GatewayError, LiveClient, LlmMode, LlmSettings};
use crate::store::EventStore;

pub const ENV_DATA_DIR: &str = "HUMAINE_DATA_DIR";
pub const ENV_SEED: &str = "HUMAINE_SEED";
pub const MODEL_FILE: &str = "model.json";
pub const SESSIONS_DIR: &str = "sessions";

/// Profiler and policy an adaptive session starts from.
#[derive(Debug, Clone)]
pub struct ServiceModels {
    pub profiler: ProfilerModel,
    pub learner: PpoLearner,
}

impl ServiceModels {
    pub fn from_trained(m: TrainedModels) -> Self {
        ServiceModels { profiler: m.profiler, learner: m.learner }
    }

    pub fn from_snapshot(s: ModelSnapshot, ppo: &PpoConfig) -> Result<Self, Error> {
        let n = s.networks;
        let (Some(policy), Some(value)) = (n.policy, n.value) else {
            return Err(humaine_core::Error::MissingField("policy and value networks").into());
        };
        Ok(ServiceModels { profiler: n.profiler, learner: PpoLearner::from_models(policy, value, ppo) })
    }
}

pub struct ServiceConfig {
    pub data_dir: PathBuf,
    pub seed: u64,
    pub llm: LlmSettings,
    pub metrics: MetricsConfig,
    pub ppo: PpoConfig,
    pub action_mode: ActionMode,
    pub models: ServiceModels,
    /// Milliseconds since the epoch, used for events the client does not time.
    pub clock: fn() -> Timestamp,
}

pub fn system_clock() -> Timestamp {
    Timestamp::from_millis(SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64))
}

impl ServiceConfig {
    /// Settings from the environment. Models come from
    /// `HUMAINE_DATA_DIR/model.json` when present and are pre-trained from
    /// the seed otherwise.
    pub fn from_env() -> Result<Self, Error> {
        let data_dir = PathBuf::from(std::env::var(ENV_DATA_DIR).unwrap_or_else(|_| "humaine-data".to_string()));
        let seed = match std::env::var(ENV_SEED) {
            Ok(s) => s.trim().parse().map_err(|_| humaine_core::Error::Config(format!("{ENV_SEED} `{s}` is not a u64")))?,
            Err(_) => 0,
        };
        let llm = LlmSettings::from_env()?;
        let exp = ExperimentConfig { master_seed: seed, ..ExperimentConfig::default() };
        let metrics = MetricsConfig::default();
        let model_path = data_dir.join(MODEL_FILE);
        let models = if model_path.exists() {
            ServiceModels::from_snapshot(load_snapshot(&model_path)?, &exp.ppo)?
        } else {
            ServiceModels::from_trained(pretrain(&exp, &metrics)?)
        };
        Ok(ServiceConfig {
            data_dir,
            seed,
            llm,
            metrics,
            ppo: exp.ppo,
            action_mode: ActionMode::Greedy,
            models,
            clock: system_clock,
        })
    }
}

enum Responder {
    Mock,
    Live(LiveClient),
}

struct SessionSlot {
    session: Arc<TurnLock<LiveSession>>,
    /// Replaced whole after each committed call, so readers never see a
    /// half-applied turn.
    snapshot: Mutex<ProfileSnapshot>,
    user_id: Option<String>,
}

pub struct AppState {
    ctx: Arc<LiveContext>,
    store: EventStore,
    sessions: Mutex<HashMap<String, Arc<SessionSlot>>>,
    /// Agents of returning users between their sessions.
    agents: Mutex<HashMap<String, AdaptiveAgent>>,
    /// Users with a session in progress.
    active_users: Mutex<HashMap<String, String>>,
    learner: PpoLearner,
    agent_config: AgentConfig,
    responder: Responder,
    llm: LlmSettings,
    config_hash: String,
    next_id: AtomicU64,
    clock: fn() -> Timestamp,
}

impl AppState {
    pub fn new(cfg: ServiceConfig) -> Result<Self, Error> {
        let store = EventStore::open(cfg.data_dir.join(SESSIONS_DIR))?;
        let responder = match cfg.llm.mode {
            LlmMode::Mock => Responder::Mock,
            LlmMode::Live => Responder::Live(LiveClient::new(&cfg.llm)?),
        };
        let settings = LiveSettings { seed: cfg.seed, metrics: cfg.metrics, ..LiveSettings::default() };
        let config_hash = sha256_hex(
            &serde_json::to_vec(&(&settings, cfg.llm.mode, &cfg.ppo, cfg.action_mode)).expect("settings serialise"),
        );
        Ok(AppState {
            ctx: Arc::new(LiveContext::new(settings, Some(cfg.models.profiler))),
            store,
            sessions: Mutex::new(HashMap::new()),
            agents: Mutex::new(HashMap::new()),
            active_users: Mutex::new(HashMap::new()),
            learner: cfg.models.learner,
            agent_config: AgentConfig { ppo: cfg.ppo, mode: cfg.action_mode, learn: true },
            responder,
            llm: cfg.llm,
            config_hash,
            next_id: AtomicU64::new(1),
            clock: cfg.clock,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.config_hash
    }

    fn now(&self) -> Timestamp {
        (self.clock)()
    }

    fn slot(&self, id: &str) -> Result<Arc<SessionSlot>, ApiError> {
        lock(&self.sessions).get(id).cloned().ok_or_else(|| ApiError::not_found(format!("session `{id}` not found")))
    }

    fn fresh_id(&self) -> String {
        loop {
            let n = self.next_id.fetch_add(1, Ordering::Relaxed);
            let id = format!("s{n:06}");
            if !self.store.exists(&id) && !lock(&self.sessions).contains_key(&id) {
                return id;
            }
        }
    }
}

fn lock<T>(m: &Mutex<T>) -> std::sync::MutexGuard<'_, T> {
    m.lock().unwrap_or_else(PoisonError::into_inner)
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/healthz", get(healthz))
        .route("/v1/sessions", post(create_session))
        .route("/v1/sessions/{id}/elicitation", post(elicit))
        .route("/v1/sessions/{id}/messages", post(message))
        .route("/v1/sessions/{id}/feedback", post(feedback))
        .route("/v1/sessions/{id}/profile", get(profile))
        .route("/v1/sessions/{id}/survey", post(survey))
        .with_state(state)
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    message: String,
}

impl ApiError {
    fn new(status: StatusCode, message: impl Into<String>) -> Self {
        ApiError { status, message: message.into() }
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, message)
    }

    fn storage(e: Error) -> Self {
        Self::new(StatusCode::SERVICE_UNAVAILABLE, format!("storage failure: {e}"))
    }
}

impl From<humaine_core::Error> for ApiError {
    fn from(e: humaine_core::Error) -> Self {
        use humaine_core::Error as E;
        let status = match &e {
            E::SessionNotFound(_) | E::TurnNotFound(_) => StatusCode::NOT_FOUND,
            E::Conflict(_) => StatusCode::CONFLICT,
            E::OutOfOrder { .. }
            | E::InvalidEvent(_)
            | E::DegenerateInterval
            | E::EmptyInput(_)
            | E::UnknownDomain(_)
            | E::OutOfRange(_) => StatusCode::BAD_REQUEST,
            _ => StatusCode::INTERNAL_SERVER_ERROR,
        };
        ApiError::new(status, e.to_string())
    }
}

impl From<GatewayError> for ApiError {
    fn from(e: GatewayError) -> Self {
        ApiError::new(StatusCode::BAD_GATEWAY, e.to_string())
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(serde_json::json!({ "error": self.message }))).into_response()
    }
}

/// Strict JSON body: malformed input and unknown fields are both 400.
fn body<T: DeserializeOwned>(bytes: &Bytes) -> Result<T, ApiError> {
    serde_json::from_slice(bytes).map_err(|e| ApiError::bad_request(format!("invalid body: {e}")))
}

#[derive(Serialize)]
struct Health<'a> {
    status: &'static str,
    mode: &'static str,
    config_hash: &'a str,
}

async fn healthz(State(st): State<Arc<AppState>>) -> Response {
    Json(Health { status: "ok", mode: st.llm.mode.as_str(), config_hash: &st.config_hash }).into_response()
}

fn default_arm() -> Arm {
    Arm::Experimental
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct CreateBody {
    topic: String,
    #[serde(default = "default_arm")]
    arm: Arm,
    #[serde(default)]
    participant: Participant,
    /// Keeps the adaptive agent across this user's sessions.
    #[serde(default)]
    user_id: Option<String>,
}

#[derive(Serialize)]
struct Created {
    session_id: String,
    topic: String,
    arm: Arm,
    elicitation_questions: Vec<ElicitationQuestion>,
    turn_index: u32,
    greeting: String,
    profile_snapshot: ProfileSnapshot,
}

async fn create_session(State(st): State<Arc<AppState>>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: CreateBody = body(&bytes)?;
    if req.user_id.as_deref().is_some_and(str::is_empty) {
        return Err(ApiError::bad_request("user_id must not be empty"));
    }
    let id = st.fresh_id();
    let agent = match (req.arm, &req.user_id) {
        (Arm::Control, _) => None,
        (Arm::Experimental, user) => {
            if let Some(user) = user {
                let mut active = lock(&st.active_users);
                if let Some(open) = active.get(user) {
                    return Err(ApiError::new(StatusCode::CONFLICT, format!("user `{user}` has session `{open}` open")));
                }
                active.insert(user.clone(), id.clone());
            }
            let remembered = user.as_ref().and_then(|u| lock(&st.agents).remove(u));
            Some(remembered.unwrap_or_else(|| AdaptiveAgent::new(st.learner.clone(), st.agent_config.clone())))
        }
    };
    let release = |agent: Option<AdaptiveAgent>| {
        if let (Some(user), Arm::Experimental) = (&req.user_id, req.arm) {
            lock(&st.active_users).remove(user);
            if let Some(a) = agent.filter(|a| a.memory().sessions > 0) {
                lock(&st.agents).insert(user.clone(), a);
            }
        }
    };
    let kept = agent.clone();
    let (session, events) =
        match LiveSession::open(Arc::clone(&st.ctx), id.clone(), &req.topic, req.arm, req.participant, agent, st.now()) {
            Ok(v) => v,
            Err(e) => {
                release(kept);
                return Err(e.into());
            }
        };
    if let Err(e) = st.store.append_all(&events) {
        release(kept);
        return Err(ApiError::storage(e));
    }
    let greeting = events
        .iter()
        .find_map(|e| match &e.kind {
            EventKind::BotMessage { text, .. } => Some(text.clone()),
            _ => None,
        })
        .unwrap_or_default();
    let out = Created {
        session_id: id.clone(),
        topic: req.topic,
        arm: req.arm,
        elicitation_questions: session.questions().to_vec(),
        turn_index: session.turn_index(),
        greeting,
        profile_snapshot: session.snapshot(),
    };
    let slot = SessionSlot {
        snapshot: Mutex::new(session.snapshot()),
        session: Arc::new(TurnLock::new(session)),
        user_id: req.user_id,
    };
    lock(&st.sessions).insert(id, Arc::new(slot));
    Ok((StatusCode::CREATED, Json(out)).into_response())
}

/// Run `f` on the session with blocking IO allowed. Fails with 429 while
/// another call holds the session.
async fn with_session<T: Send + 'static>(
    st: &Arc<AppState>,
    id: &str,
    f: impl FnOnce(&AppState, &SessionSlot, &mut LiveSession) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    let slot = st.slot(id)?;
    let mut guard = Arc::clone(&slot.session)
        .try_lock_owned()
        .map_err(|_| ApiError::new(StatusCode::TOO_MANY_REQUESTS, format!("session `{id}` is busy")))?;
    let st = Arc::clone(st);
    tokio::task::spawn_blocking(move || f(&st, &slot, &mut guard))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, e.to_string()))?
}

/// Apply `change` to the session, persist its events and publish the new
/// snapshot; on a storage failure the session is rolled back.
fn commit<T>(
    st: &AppState,
    slot: &SessionSlot,
    session: &mut LiveSession,
    change: impl FnOnce(&mut LiveSession) -> Result<(T, Vec<SessionEvent>), ApiError>,
) -> Result<T, ApiError> {
    let before = session.clone();
    let (out, events) = change(session)?;
    if let Err(e) = st.store.append_all(&events) {
        *session = before;
        return Err(ApiError::storage(e));
    }
    *lock(&slot.snapshot) = session.snapshot();
    Ok(out)
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ElicitBody {
    answers: Vec<ElicitationAnswer>,
}

async fn elicit(State(st): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: ElicitBody = body(&bytes)?;
    with_session(&st, &id, move |st, slot, s| {
        let at = st.now();
        commit(st, slot, s, |s| Ok(((), s.elicit(&req.answers, at)?)))
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct MessageBody {
    text: String,
    #[serde(default)]
    typing_started_ms: Option<Timestamp>,
    sent_ms: Timestamp,
}

#[derive(Serialize)]
struct MessageReply {
    turn_index: u32,
    reply: String,
    profile_snapshot: ProfileSnapshot,
    params: PromptParameters,
    reward: RewardSignal,
}

async fn message(State(st): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: MessageBody = body(&bytes)?;
    if req.text.trim().is_empty() {
        return Err(ApiError::bad_request("message text is empty"));
    }
    let msg = UserMessage { text: req.text, typing_started_ms: req.typing_started_ms, sent_ms: req.sent_ms };
    let reply = with_session(&st, &id, move |st, slot, s| {
        commit(st, slot, s, |s| {
            let turn = s
                .user_message(&msg, |g| match &st.responder {
                    Responder::Mock => mock_complete(g.params, g.topic, g.turn_index, g.seed).map_err(ApiError::from),
                    Responder::Live(client) => {
                        let req = st.llm.request(g.prompt)?;
                        Ok(tokio::runtime::Handle::current().block_on(client.complete_async(&req))?.text)
                    }
                })
                .map_err(|e| match e {
                    TurnError::Session(e) => ApiError::from(e),
                    TurnError::Generator(e) => e,
                })?;
            let events = turn.events.clone();
            Ok((turn, events))
        })
    })
    .await?;
    let out = MessageReply {
        turn_index: reply.turn_index,
        params: reply.snapshot.params,
        reply: reply.reply,
        profile_snapshot: reply.snapshot,
        reward: reply.reward,
    };
    Ok(Json(out).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct FeedbackBody {
    turn_index: u32,
    liked: bool,
}

async fn feedback(State(st): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: FeedbackBody = body(&bytes)?;
    let liked = if req.liked { Liked::Like } else { Liked::Dislike };
    with_session(&st, &id, move |st, slot, s| {
        let at = st.now();
        commit(st, slot, s, |s| Ok(((), s.feedback(req.turn_index, liked, at)?)))
    })
    .await?;
    Ok(StatusCode::NO_CONTENT.into_response())
}

async fn profile(State(st): State<Arc<AppState>>, Path(id): Path<String>) -> Result<Response, ApiError> {
    let slot = st.slot(&id)?;
    let snapshot = lock(&slot.snapshot).clone();
    Ok(Json(snapshot).into_response())
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct SurveyBody {
    ratings: Vec<u8>,
}

#[derive(Serialize)]
struct SurveyReply {
    sbs: f64,
}

async fn survey(State(st): State<Arc<AppState>>, Path(id): Path<String>, bytes: Bytes) -> Result<Response, ApiError> {
    let req: SurveyBody = body(&bytes)?;
    let sbs = with_session(&st, &id, move |st, slot, s| {
        let at = st.now();
        let sbs = commit(st, slot, s, |s| Ok(s.survey(&req.ratings, at)?))?;
        if let Some(user) = &slot.user_id {
            lock(&st.active_users).remove(user);
            if let Some(agent) = s.agent() {
                lock(&st.agents).insert(user.clone(), agent.clone());
            }
        }
        Ok(sbs)
    })
    .await?;
    Ok(Json(SurveyReply { sbs }).into_response())
}

/// Serve on `addr` until the process is stopped.
pub async fn serve(state: Arc<AppState>, addr: std::net::SocketAddr) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    axum::serve(listener, router(state)).await
}
