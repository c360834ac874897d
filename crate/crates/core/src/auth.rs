//! Users, sessions and the two authentication modes.
//!
//! `SessionIdle` sessions live as long as requests keep arriving within the
//! timeout. `IpWindow` authenticates a peer address for a fixed window after
//! a login from it; the window table can be persisted so restarts keep it.

use std::collections::HashMap;
use std::net::IpAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use argon2::password_hash::{PasswordHash, PasswordHasher, PasswordVerifier, SaltString};
use argon2::{Argon2, Params};
use rand::TryRngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::clock::Timestamp;
use crate::doctree::{el, DocNode};
use crate::secret::Secret;

pub const DEFAULT_IDLE_TIMEOUT: Duration = Duration::from_secs(1800);
pub const DEFAULT_IP_VALIDITY: Duration = Duration::from_secs(8 * 3600);

#[derive(Debug, Error)]
pub enum AuthError {
    #[error("invalid user name or password")]
    InvalidCredentials,
    #[error("password hashing failed: {0}")]
    Hashing(String),
    #[error("no randomness available: {0}")]
    Randomness(String),
    #[error("session window file {path}: {message}")]
    Persistence { path: PathBuf, message: String },
}

/// Argon2 cost settings for new hashes. Verification reads the settings
/// stored in each hash.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct HashCost {
    pub memory_kib: u32,
    pub iterations: u32,
    pub parallelism: u32,
}

impl Default for HashCost {
    fn default() -> Self {
        HashCost {
            memory_kib: Params::DEFAULT_M_COST,
            iterations: Params::DEFAULT_T_COST,
            parallelism: Params::DEFAULT_P_COST,
        }
    }
}

impl HashCost {
    /// Cheap settings for fixtures.
    pub const TEST: HashCost = HashCost { memory_kib: 256, iterations: 1, parallelism: 1 };
}

pub fn hash_password(plain: &str) -> Result<String, AuthError> {
    hash_password_with(plain, HashCost::default())
}

pub fn hash_password_with(plain: &str, cost: HashCost) -> Result<String, AuthError> {
    let mut salt = [0u8; 16];
    rand::rngs::OsRng.try_fill_bytes(&mut salt).map_err(|e| AuthError::Randomness(e.to_string()))?;
    let salt = SaltString::encode_b64(&salt).map_err(|e| AuthError::Hashing(e.to_string()))?;
    let params = Params::new(cost.memory_kib, cost.iterations, cost.parallelism, None)
        .map_err(|e| AuthError::Hashing(e.to_string()))?;
    Argon2::new(argon2::Algorithm::Argon2id, argon2::Version::V0x13, params)
        .hash_password(plain.as_bytes(), &salt)
        .map(|h| h.to_string())
        .map_err(|e| AuthError::Hashing(e.to_string()))
}

pub fn verify_password(hash: &str, plain: &str) -> bool {
    PasswordHash::new(hash).map(|h| Argon2::default().verify_password(plain.as_bytes(), &h).is_ok()).unwrap_or(false)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserEntry {
    pub hdb_name: String,
    /// PHC-format salted hash.
    pub password_hash: String,
    pub db_user: String,
    pub db_password: Secret,
}

impl UserEntry {
    pub fn new(
        hdb_name: impl Into<String>,
        password_hash: impl Into<String>,
        db_user: impl Into<String>,
        db_password: impl Into<Secret>,
    ) -> Self {
        UserEntry {
            hdb_name: hdb_name.into(),
            password_hash: password_hash.into(),
            db_user: db_user.into(),
            db_password: db_password.into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AuthMode {
    SessionIdle { timeout: Duration },
    IpWindow { validity: Duration },
}

impl Default for AuthMode {
    fn default() -> Self {
        AuthMode::SessionIdle { timeout: DEFAULT_IDLE_TIMEOUT }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Session {
    pub id: String,
    pub user: Arc<UserEntry>,
    pub login_time: Timestamp,
    pub peer: IpAddr,
    pub last_activity: Timestamp,
}

impl Session {
    /// Credentials for every database connection made on this session's
    /// behalf.
    pub fn db_credentials(&self) -> (&str, &Secret) {
        (&self.user.db_user, &self.user.db_password)
    }
}

pub fn db_credentials(session: &Session) -> (&str, &Secret) {
    session.db_credentials()
}

/// A fresh `xxxx-xxxx-xxxx-xxxx` id from the OS random source.
pub fn new_session_id() -> Result<String, AuthError> {
    let mut bytes = [0u8; 8];
    rand::rngs::OsRng.try_fill_bytes(&mut bytes).map_err(|e| AuthError::Randomness(e.to_string()))?;
    let hex: Vec<String> = bytes.chunks(2).map(|c| format!("{:02x}{:02x}", c[0], c[1])).collect();
    Ok(hex.join("-"))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validation {
    Valid(Session),
    Expired,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct WindowEntry {
    peer: IpAddr,
    user: String,
    session_id: String,
    login_time: Timestamp,
    expiry: Timestamp,
}

fn chrono_duration(d: Duration) -> chrono::Duration {
    chrono::Duration::from_std(d).unwrap_or(chrono::Duration::MAX)
}

/// Users, live sessions and the peer windows, behind one lock each.
#[derive(Debug)]
pub struct SessionStore {
    mode: AuthMode,
    users: Vec<Arc<UserEntry>>,
    sessions: Mutex<HashMap<String, Session>>,
    windows: Mutex<HashMap<IpAddr, WindowEntry>>,
    window_file: Option<PathBuf>,
}

impl SessionStore {
    pub fn new(mode: AuthMode, users: Vec<UserEntry>) -> Self {
        SessionStore {
            mode,
            users: users.into_iter().map(Arc::new).collect(),
            sessions: Mutex::new(HashMap::new()),
            windows: Mutex::new(HashMap::new()),
            window_file: None,
        }
    }

    /// Persists IpWindow entries in `path`, loading any already there.
    pub fn with_window_file(mut self, path: impl Into<PathBuf>) -> Result<Self, AuthError> {
        let path = path.into();
        if path.exists() {
            let err = |m: String| AuthError::Persistence { path: path.clone(), message: m };
            let text = std::fs::read_to_string(&path).map_err(|e| err(e.to_string()))?;
            let entries: Vec<WindowEntry> = serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
            let mut w = self.windows.lock().expect("window lock");
            for e in entries {
                if self.users.iter().any(|u| u.hdb_name == e.user) {
                    w.insert(e.peer, e);
                }
            }
        }
        self.window_file = Some(path);
        Ok(self)
    }

    pub fn mode(&self) -> AuthMode {
        self.mode
    }

    pub fn users(&self) -> &[Arc<UserEntry>] {
        &self.users
    }

    pub fn login(&self, name: &str, password: &str, peer: IpAddr, now: Timestamp) -> Result<Session, AuthError> {
        let user = self
            .users
            .iter()
            .find(|u| u.hdb_name == name)
            .filter(|u| verify_password(&u.password_hash, password))
            .ok_or(AuthError::InvalidCredentials)?
            .clone();
        let mut sessions = self.sessions.lock().expect("session lock");
        let id = loop {
            let id = new_session_id()?;
            if !sessions.contains_key(&id) {
                break id;
            }
        };
        let session = Session { id: id.clone(), user, login_time: now, peer, last_activity: now };
        sessions.insert(id.clone(), session.clone());
        drop(sessions);
        if let AuthMode::IpWindow { validity } = self.mode {
            let entry = WindowEntry {
                peer,
                user: session.user.hdb_name.clone(),
                session_id: id,
                login_time: now,
                expiry: now + chrono_duration(validity),
            };
            self.windows.lock().expect("window lock").insert(peer, entry);
            if let Err(e) = self.save_windows() {
                tracing::warn!("{e}");
            }
        }
        Ok(session)
    }

    pub fn validate(&self, peer: IpAddr, session_id: Option<&str>, now: Timestamp) -> Validation {
        match self.mode {
            AuthMode::SessionIdle { timeout } => {
                let Some(id) = session_id else { return Validation::Expired };
                let mut sessions = self.sessions.lock().expect("session lock");
                let Some(s) = sessions.get_mut(id) else { return Validation::Expired };
                if now - s.last_activity > chrono_duration(timeout) {
                    sessions.remove(id);
                    return Validation::Expired;
                }
                if now > s.last_activity {
                    s.last_activity = now;
                }
                Validation::Valid(s.clone())
            }
            AuthMode::IpWindow { .. } => {
                let windows = self.windows.lock().expect("window lock");
                let Some(w) = windows.get(&peer).filter(|w| w.expiry >= now) else {
                    return Validation::Expired;
                };
                let Some(user) = self.users.iter().find(|u| u.hdb_name == w.user) else {
                    return Validation::Expired;
                };
                let mut sessions = self.sessions.lock().expect("session lock");
                let s = sessions.entry(w.session_id.clone()).or_insert_with(|| Session {
                    id: w.session_id.clone(),
                    user: user.clone(),
                    login_time: w.login_time,
                    peer,
                    last_activity: now,
                });
                if now > s.last_activity {
                    s.last_activity = now;
                }
                Validation::Valid(s.clone())
            }
        }
    }

    pub fn logout(&self, session_id: &str) {
        let removed = self.sessions.lock().expect("session lock").remove(session_id);
        let mut windows = self.windows.lock().expect("window lock");
        let before = windows.len();
        windows.retain(|_, w| w.session_id != session_id);
        let changed = windows.len() != before;
        drop(windows);
        if removed.is_some() && changed {
            if let Err(e) = self.save_windows() {
                tracing::warn!("{e}");
            }
        }
    }

    fn save_windows(&self) -> Result<(), AuthError> {
        let Some(path) = &self.window_file else { return Ok(()) };
        let entries: Vec<WindowEntry> = self.windows.lock().expect("window lock").values().cloned().collect();
        write_atomically(path, &serde_json::to_string_pretty(&entries).expect("serializable"))
    }
}

fn write_atomically(path: &Path, contents: &str) -> Result<(), AuthError> {
    let err = |m: String| AuthError::Persistence { path: path.to_owned(), message: m };
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| err(e.to_string()))?;
    std::io::Write::write_all(&mut tmp, contents.as_bytes()).map_err(|e| err(e.to_string()))?;
    tmp.persist(path).map_err(|e| err(e.to_string()))?;
    Ok(())
}

/// What the profile page reports about the serving process.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServerMeta {
    pub title: String,
    pub version: String,
    pub host: String,
    pub port: u16,
}

pub fn profile_page(session: &Session, server: &ServerMeta) -> DocNode {
    let lines = [
        format!("Logged-in on hdb server: {}", server.title),
        format!("With user name: {}", session.user.hdb_name),
        format!("Database user name: {}", session.user.db_user),
        format!("Login time: {}", session.login_time.to_rfc3339_opts(chrono::SecondsFormat::Millis, true)),
        format!("Peer: {}", session.peer),
        format!("Pages are served by : hdb {}", server.version),
        format!("Server: {}:{}", server.host, server.port),
        format!("Session: {}", session.id),
    ];
    el("div").attr("class", "profile").children(lines.into_iter().map(|l| el("p").text(l))).into()
}
