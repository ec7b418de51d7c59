//! Session-based HTTP/JSON service for playing against a checkpoint.
//!
//! Endpoints (all JSON; see `docs/api.md`):
//!
//! - `GET  /api/engines`
//! - `POST /api/sessions` `{engine?, human_color, sims?}`
//! - `GET  /api/sessions/{id}`
//! - `POST /api/sessions/{id}/move` `{move}`
//! - `POST /api/sessions/{id}/analyze`
//! - `POST /api/sessions/{id}/resign`
//! - `POST /api/replay` `{transcript}`

use std::collections::{BTreeMap, HashMap};
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use uuid::Uuid;

use othello_zero::board::{parse_transcript, Color, Move, Outcome, Position, Transcript};
use othello_zero::net::{Checkpoint, NetParams};
use othello_zero::search::{Oracle, SearchConfig, Searcher, UniformOracle};

/// Play budget when a session does not ask for one.
pub const DEFAULT_SIMS: u32 = 1000;
/// Largest budget a session may request.
pub const MAX_SIMS: u32 = 100_000;

/// A named oracle sessions can play against.
#[derive(Clone)]
pub struct EngineEntry {
    pub name: String,
    /// Checkpoint hash, empty for built-in oracles.
    pub hash: String,
    pub oracle: Arc<dyn Oracle + Send + Sync>,
}

impl EngineEntry {
    pub fn from_checkpoint(name: impl Into<String>, checkpoint: &Checkpoint) -> Self {
        EngineEntry { name: name.into(), hash: checkpoint.hash(), oracle: Arc::new(checkpoint.params.clone()) }
    }

    pub fn from_params(name: impl Into<String>, params: NetParams<f32>) -> Self {
        Self::from_checkpoint(name, &Checkpoint::new(params))
    }

    pub fn uniform() -> Self {
        EngineEntry { name: "uniform".into(), hash: String::new(), oracle: Arc::new(UniformOracle) }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ongoing,
    Finished,
}

struct Session {
    id: Uuid,
    engine: EngineEntry,
    sims: u32,
    human: Color,
    position: Position,
    history: Transcript,
    /// Engine root value after each engine search, engine's point of view.
    value_trace: Vec<f32>,
    resigned: Option<Color>,
    last_engine_move: Option<Move>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeView {
    pub black: u8,
    pub white: u8,
    /// Tournament score, black first, as in `35-29`.
    pub score: String,
    pub winner: Option<Color>,
}

impl From<Outcome> for OutcomeView {
    fn from(o: Outcome) -> Self {
        let (b, w) = o.score();
        OutcomeView { black: o.black, white: o.white, score: format!("{b}-{w}"), winner: o.winner() }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionView {
    pub id: String,
    pub engine: String,
    pub sims: u32,
    pub human_color: Color,
    /// Rows from rank 8 down to rank 1, files a to h: `B`, `W` or `.`.
    pub board: Vec<String>,
    pub to_move: Color,
    /// The human's legal moves when it is their turn, otherwise empty. A lone
    /// `PA` is a forced pass the client must confirm.
    pub legal_moves: Vec<String>,
    pub history: String,
    pub value_trace: Vec<f32>,
    pub status: Status,
    pub outcome: Option<OutcomeView>,
    pub resigned: Option<Color>,
    pub engine_move: Option<String>,
}

fn board_rows(p: &Position) -> Vec<String> {
    (0..8u8)
        .rev()
        .map(|rank| {
            (0..8u8)
                .map(|file| match p.cell(rank * 8 + file) {
                    Some(Color::Black) => 'B',
                    Some(Color::White) => 'W',
                    None => '.',
                })
                .collect()
        })
        .collect()
}

impl Session {
    fn finished(&self) -> bool {
        self.resigned.is_some() || self.position.is_terminal()
    }

    fn view(&self) -> SessionView {
        let human_turn = !self.finished() && self.position.to_move() == self.human;
        SessionView {
            id: self.id.to_string(),
            engine: self.engine.name.clone(),
            sims: self.sims,
            human_color: self.human,
            board: board_rows(&self.position),
            to_move: self.position.to_move(),
            legal_moves: if human_turn { self.position.legal_moves().iter().map(|m| m.to_string()).collect() } else { vec![] },
            history: self.history.to_string(),
            value_trace: self.value_trace.clone(),
            status: if self.finished() { Status::Finished } else { Status::Ongoing },
            outcome: if self.position.is_terminal() { self.position.outcome().ok().map(Into::into) } else { None },
            resigned: self.resigned,
            engine_move: self.last_engine_move.map(|m| m.to_string()),
        }
    }

    fn search_config(&self) -> SearchConfig {
        SearchConfig { temperature_moves: 0, ..SearchConfig::with_simulations(self.sims) }
    }

    fn search(&self) -> othello_zero::search::SearchResult {
        let mut rng = ChaCha8Rng::seed_from_u64(self.history.len() as u64);
        Searcher::new(self.search_config())
            .search(&self.position, &*self.engine.oracle, false, &mut rng)
            .expect("search on an ongoing position")
    }

    /// Plays engine moves until the human is to move or the game ends. A pass
    /// forced on the engine is played without searching.
    fn engine_turns(&mut self) {
        while !self.finished() && self.position.to_move() != self.human {
            let legal = self.position.legal_moves();
            let mv = if legal.len() == 1 && legal[0].is_pass() {
                Move::PASS
            } else {
                let result = self.search();
                self.value_trace.push(result.q_root.clamp(-1.0, 1.0));
                result.best_move()
            };
            self.position = self.position.play_unchecked(mv);
            self.history.push(mv);
            self.last_engine_move = Some(mv);
        }
    }
}

#[derive(Clone)]
pub struct AppState {
    engines: Arc<BTreeMap<String, EngineEntry>>,
    default_engine: String,
    sessions: Arc<Mutex<HashMap<Uuid, Arc<Mutex<Session>>>>>,
}

impl AppState {
    /// The first engine is the default for sessions that do not name one.
    pub fn new(engines: Vec<EngineEntry>) -> Self {
        assert!(!engines.is_empty(), "at least one engine");
        let default_engine = engines[0].name.clone();
        AppState {
            engines: Arc::new(engines.into_iter().map(|e| (e.name.clone(), e)).collect()),
            default_engine,
            sessions: Arc::new(Mutex::new(HashMap::new())),
        }
    }

    fn session(&self, id: &str) -> Result<Arc<Mutex<Session>>, ApiError> {
        let id = Uuid::parse_str(id).map_err(|_| ApiError::not_found(id))?;
        self.sessions.lock().expect("session table").get(&id).cloned().ok_or_else(|| ApiError::not_found(&id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub error: String,
    pub message: String,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, error: &str, message: impl Into<String>) -> Self {
        ApiError { status, body: ErrorBody { error: error.into(), message: message.into() } }
    }

    fn not_found(id: &str) -> Self {
        Self::new(StatusCode::NOT_FOUND, "unknown-session", format!("no session {id}"))
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct EngineInfo {
    pub name: String,
    pub hash: String,
    pub default_sims: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CreateRequest {
    pub engine: Option<String>,
    pub human_color: Color,
    pub sims: Option<u32>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MoveRequest {
    #[serde(rename = "move")]
    pub mv: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MoveProb {
    #[serde(rename = "move")]
    pub mv: String,
    pub p: f32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Analysis {
    /// Visit distribution over the legal moves, in move-index order.
    pub pi: Vec<MoveProb>,
    /// Root value for the side to move.
    pub q_root: f32,
    pub best_move: String,
    pub simulations: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayRequest {
    pub transcript: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReplayView {
    /// Canonical transcript with forced passes written out.
    pub transcript: String,
    pub board: Vec<String>,
    pub to_move: Color,
    pub black: u32,
    pub white: u32,
    pub finished: bool,
    pub outcome: Option<OutcomeView>,
}

pub fn app(state: AppState) -> Router {
    Router::new()
        .route("/api/engines", get(list_engines))
        .route("/api/sessions", post(create_session))
        .route("/api/sessions/{id}", get(get_session))
        .route("/api/sessions/{id}/move", post(submit_move))
        .route("/api/sessions/{id}/analyze", post(analyze))
        .route("/api/sessions/{id}/resign", post(resign))
        .route("/api/replay", post(replay))
        .with_state(state)
}

/// Serves the API on `addr` until the process ends.
pub async fn serve(addr: &str, state: AppState) -> std::io::Result<()> {
    let listener = tokio::net::TcpListener::bind(addr).await?;
    log::info!("listening on {}", listener.local_addr()?);
    axum::serve(listener, app(state)).await
}

async fn list_engines(State(state): State<AppState>) -> Json<Vec<EngineInfo>> {
    Json(
        state
            .engines
            .values()
            .map(|e| EngineInfo { name: e.name.clone(), hash: e.hash.clone(), default_sims: DEFAULT_SIMS })
            .collect(),
    )
}

/// Runs `f` on the session under its lock, off the async workers.
async fn with_session<T: Send + 'static>(
    session: Arc<Mutex<Session>>,
    f: impl FnOnce(&mut Session) -> Result<T, ApiError> + Send + 'static,
) -> Result<T, ApiError> {
    tokio::task::spawn_blocking(move || f(&mut session.lock().expect("session lock")))
        .await
        .map_err(|e| ApiError::new(StatusCode::INTERNAL_SERVER_ERROR, "internal", e.to_string()))?
}

async fn create_session(State(state): State<AppState>, Json(req): Json<CreateRequest>) -> Result<Json<SessionView>, ApiError> {
    let name = req.engine.unwrap_or_else(|| state.default_engine.clone());
    let engine = state
        .engines
        .get(&name)
        .cloned()
        .ok_or_else(|| ApiError::new(StatusCode::BAD_REQUEST, "unknown-engine", format!("no engine {name}")))?;
    let sims = req.sims.unwrap_or(DEFAULT_SIMS);
    if sims == 0 || sims > MAX_SIMS {
        return Err(ApiError::new(StatusCode::BAD_REQUEST, "bad-sims", format!("sims must lie in 1..={MAX_SIMS}")));
    }
    let id = Uuid::new_v4();
    let session = Arc::new(Mutex::new(Session {
        id,
        engine,
        sims,
        human: req.human_color,
        position: Position::initial(),
        history: Transcript::new(),
        value_trace: Vec::new(),
        resigned: None,
        last_engine_move: None,
    }));
    state.sessions.lock().expect("session table").insert(id, session.clone());
    with_session(session, |s| {
        s.engine_turns();
        Ok(s.view())
    })
    .await
    .map(Json)
}

async fn get_session(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    with_session(session, |s| Ok(s.view())).await.map(Json)
}

async fn submit_move(
    State(state): State<AppState>,
    Path(id): Path<String>,
    Json(req): Json<MoveRequest>,
) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    with_session(session, move |s| {
        if s.finished() {
            return Err(ApiError::new(StatusCode::CONFLICT, "session-finished", "the game is over"));
        }
        if s.position.to_move() != s.human {
            return Err(ApiError::new(StatusCode::CONFLICT, "not-your-turn", "the engine is to move"));
        }
        let mv: Move = req
            .mv
            .parse()
            .map_err(|_| ApiError::new(StatusCode::BAD_REQUEST, "malformed-move", format!("cannot parse {:?}", req.mv)))?;
        if !s.position.is_legal(mv) {
            return Err(ApiError::new(StatusCode::BAD_REQUEST, "illegal-move", format!("{mv} is not legal here")));
        }
        s.position = s.position.play_unchecked(mv);
        s.history.push(mv);
        s.last_engine_move = None;
        s.engine_turns();
        Ok(s.view())
    })
    .await
    .map(Json)
}

async fn analyze(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<Analysis>, ApiError> {
    let session = state.session(&id)?;
    with_session(session, |s| {
        if s.finished() {
            return Err(ApiError::new(StatusCode::CONFLICT, "session-finished", "the game is over"));
        }
        let result = s.search();
        let pi = s
            .position
            .legal_moves()
            .iter()
            .map(|m| MoveProb { mv: m.to_string(), p: result.pi[m.index()] })
            .collect();
        Ok(Analysis { pi, q_root: result.q_root, best_move: result.best_move().to_string(), simulations: s.sims })
    })
    .await
    .map(Json)
}

async fn resign(State(state): State<AppState>, Path(id): Path<String>) -> Result<Json<SessionView>, ApiError> {
    let session = state.session(&id)?;
    with_session(session, |s| {
        if s.finished() {
            return Err(ApiError::new(StatusCode::CONFLICT, "session-finished", "the game is over"));
        }
        s.resigned = Some(s.human);
        Ok(s.view())
    })
    .await
    .map(Json)
}

async fn replay(Json(req): Json<ReplayRequest>) -> Result<Json<ReplayView>, ApiError> {
    let bad = |e: String| ApiError::new(StatusCode::BAD_REQUEST, "bad-transcript", e);
    let t = parse_transcript(&req.transcript).map_err(|e| bad(e.to_string()))?;
    let canonical = t.with_explicit_passes().map_err(|e| bad(e.to_string()))?;
    let p = t.replay().map_err(|e| bad(e.to_string()))?;
    Ok(Json(ReplayView {
        transcript: canonical.to_string(),
        board: board_rows(&p),
        to_move: p.to_move(),
        black: p.black().count_ones(),
        white: p.white().count_ones(),
        finished: p.is_terminal(),
        outcome: if p.is_terminal() { p.outcome().ok().map(Into::into) } else { None },
    }))
}
