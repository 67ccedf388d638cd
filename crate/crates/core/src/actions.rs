//! Action register and dispatch. An action is a named, parametrised
//! behaviour run at a node; handlers live on the robot, in-process, or behind
//! a remote endpoint speaking the framed goal/feedback/result/cancel protocol.

use std::collections::BTreeMap;
use std::net::{TcpStream, ToSocketAddrs};
use std::path::PathBuf;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{mpsc, Arc};
use std::time::{Duration as StdDuration, Instant};

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};
use thiserror::Error;

use crate::map::{NodeId, TopologicalMap};
use crate::nav::RobotAdapter;
use crate::time::{seconds, Timestamp};
use crate::wire::{read_frame, write_frame};

pub type Params = Map<String, Value>;

/// Extra wall time allowed past a timeout before a result is forced.
pub const GRACE_S: f64 = 1.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ActionError {
    #[error("unknown action {0}")]
    UnknownAction(String),
    #[error("invalid parameters for {action}: {}", .problems.join("; "))]
    InvalidParameters { action: String, problems: Vec<String> },
    #[error("invalid registration: {0}")]
    InvalidRegistration(String),
}

/// Shared cancellation flag.
#[derive(Clone, Debug, Default)]
pub struct CancelToken(Arc<AtomicBool>);

impl CancelToken {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn cancel(&self) {
        self.0.store(true, Ordering::SeqCst);
    }

    pub fn is_cancelled(&self) -> bool {
        self.0.load(Ordering::SeqCst)
    }

    pub fn reset(&self) {
        self.0.store(false, Ordering::SeqCst);
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionSpec {
    pub name: String,
    #[serde(default)]
    pub parameters: Params,
    #[serde(default = "default_timeout")]
    pub timeout_s: f64,
}

fn default_timeout() -> f64 {
    300.0
}

impl ActionSpec {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            parameters: Params::new(),
            timeout_s: default_timeout(),
        }
    }

    pub fn with_param(mut self, key: &str, value: Value) -> Self {
        self.parameters.insert(key.to_string(), value);
        self
    }

    pub fn with_timeout(mut self, timeout_s: f64) -> Self {
        self.timeout_s = timeout_s;
        self
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionStatus {
    Succeeded,
    Failed,
    TimedOut,
    Cancelled,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionResult {
    pub status: ActionStatus,
    #[serde(default)]
    pub payload: Params,
    pub duration_s: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl ActionResult {
    pub fn succeeded(payload: Params, duration_s: f64) -> Self {
        Self {
            status: ActionStatus::Succeeded,
            payload,
            duration_s,
            message: None,
        }
    }

    pub fn with_status(status: ActionStatus, duration_s: f64, message: impl Into<String>) -> Self {
        Self {
            status,
            payload: Params::new(),
            duration_s,
            message: Some(message.into()),
        }
    }

    pub fn failed(duration_s: f64, message: impl Into<String>) -> Self {
        Self::with_status(ActionStatus::Failed, duration_s, message)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamType {
    String,
    Number,
    Integer,
    Boolean,
    Object,
    Array,
    Any,
}

impl ParamType {
    fn accepts(self, v: &Value) -> bool {
        match self {
            ParamType::String => v.is_string(),
            ParamType::Number => v.is_number(),
            ParamType::Integer => v.is_i64() || v.is_u64(),
            ParamType::Boolean => v.is_boolean(),
            ParamType::Object => v.is_object(),
            ParamType::Array => v.is_array(),
            ParamType::Any => true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamSpec {
    pub name: String,
    #[serde(rename = "type")]
    pub ty: ParamType,
    #[serde(default)]
    pub required: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub default: Option<Value>,
}

impl ParamSpec {
    pub fn required(name: &str, ty: ParamType) -> Self {
        Self {
            name: name.into(),
            ty,
            required: true,
            default: None,
        }
    }

    pub fn optional(name: &str, ty: ParamType, default: Option<Value>) -> Self {
        Self {
            name: name.into(),
            ty,
            required: false,
            default,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Endpoint {
    /// Implemented by the robot adapter.
    Robot,
    /// A remote action server reachable at `address` (host:port).
    Remote { address: String },
    /// In-process handler supplied at registration.
    Local,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ActionRegistration {
    pub name: String,
    #[serde(default)]
    pub parameters: Vec<ParamSpec>,
    pub endpoint: Endpoint,
}

impl ActionRegistration {
    pub fn new(name: &str, parameters: Vec<ParamSpec>, endpoint: Endpoint) -> Self {
        Self {
            name: name.into(),
            parameters,
            endpoint,
        }
    }

    fn check(&self) -> Result<(), ActionError> {
        let bad = |m: String| Err(ActionError::InvalidRegistration(m));
        if self.name.trim().is_empty() {
            return bad("action name must be non-empty".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for p in &self.parameters {
            if p.name.is_empty() {
                return bad(format!("{}: parameter with empty name", self.name));
            }
            if !seen.insert(&p.name) {
                return bad(format!("{}: duplicate parameter {}", self.name, p.name));
            }
            if let Some(d) = &p.default {
                if p.required {
                    return bad(format!("{}: required parameter {} has a default", self.name, p.name));
                }
                if !p.ty.accepts(d) {
                    return bad(format!("{}: default of {} does not match its type", self.name, p.name));
                }
            }
        }
        if let Endpoint::Remote { address } = &self.endpoint {
            if address.to_socket_addrs().map(|mut a| a.next().is_none()).unwrap_or(true) {
                return bad(format!("{}: unresolvable remote address {address}", self.name));
            }
        }
        Ok(())
    }

    /// Validate `params`, returning them with defaults filled in.
    pub fn validate(&self, params: &Params) -> Result<Params, ActionError> {
        let mut problems = Vec::new();
        let mut out = Params::new();
        for key in params.keys() {
            if !self.parameters.iter().any(|p| &p.name == key) {
                problems.push(format!("unknown parameter {key}"));
            }
        }
        for p in &self.parameters {
            match params.get(&p.name) {
                Some(v) if p.ty.accepts(v) => {
                    out.insert(p.name.clone(), v.clone());
                }
                Some(v) => problems.push(format!("{} must be {:?}, got {v}", p.name, p.ty)),
                None if p.required => problems.push(format!("missing required parameter {}", p.name)),
                None => {
                    if let Some(d) = &p.default {
                        out.insert(p.name.clone(), d.clone());
                    }
                }
            }
        }
        if problems.is_empty() {
            Ok(out)
        } else {
            Err(ActionError::InvalidParameters {
                action: self.name.clone(),
                problems,
            })
        }
    }
}

/// Everything a handler needs besides its parameters.
#[derive(Clone)]
pub struct ExecContext {
    pub started: Timestamp,
    pub deadline: Timestamp,
    pub cancel: CancelToken,
    /// Where artifacts for this task go.
    pub artifact_dir: Option<PathBuf>,
    pub node: Option<NodeId>,
    pub map: Option<Arc<TopologicalMap>>,
}

impl ExecContext {
    pub fn new(now: Timestamp, timeout_s: f64, cancel: CancelToken) -> Self {
        Self {
            started: now,
            deadline: now + seconds(timeout_s),
            cancel,
            artifact_dir: None,
            node: None,
            map: None,
        }
    }

    pub fn timeout_s(&self) -> f64 {
        crate::time::as_seconds(self.deadline - self.started)
    }
}

pub trait ActionHandler: Send + Sync {
    fn run(&self, params: &Params, ctx: &ExecContext) -> ActionResult;
}

impl<F> ActionHandler for F
where
    F: Fn(&Params, &ExecContext) -> ActionResult + Send + Sync,
{
    fn run(&self, params: &Params, ctx: &ExecContext) -> ActionResult {
        self(params, ctx)
    }
}

/// The simulated sensor and docking actions every robot adapter provides.
pub fn builtin_registrations() -> Vec<ActionRegistration> {
    use ParamType::*;
    vec![
        ActionRegistration::new("noop", vec![], Endpoint::Robot),
        ActionRegistration::new(
            "capture_image",
            vec![
                ParamSpec::required("camera", String),
                ParamSpec::optional("pan", Number, Some(json!(0.0))),
                ParamSpec::optional("tilt", Number, Some(json!(0.0))),
                ParamSpec::optional("zoom", Number, Some(json!(1.0))),
            ],
            Endpoint::Robot,
        ),
        ActionRegistration::new("read_temp_humidity", vec![], Endpoint::Robot),
        ActionRegistration::new(
            "record_radiation",
            vec![ParamSpec::optional("duration_s", Number, Some(json!(60)))],
            Endpoint::Robot,
        ),
        ActionRegistration::new("dock", vec![], Endpoint::Robot),
    ]
}

#[derive(Clone, Default)]
pub struct ActionRegistry {
    entries: BTreeMap<String, ActionRegistration>,
    handlers: BTreeMap<String, Arc<dyn ActionHandler>>,
}

impl std::fmt::Debug for ActionRegistry {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_list().entries(self.entries.keys()).finish()
    }
}

impl ActionRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_builtins() -> Self {
        let mut r = Self::new();
        for reg in builtin_registrations() {
            r.register(reg).expect("built-in registrations are valid");
        }
        r
    }

    /// Add or replace a registration. Returns true when an entry was replaced.
    pub fn register(&mut self, reg: ActionRegistration) -> Result<bool, ActionError> {
        if reg.endpoint == Endpoint::Local {
            return Err(ActionError::InvalidRegistration(format!(
                "{}: local endpoints need a handler",
                reg.name
            )));
        }
        reg.check()?;
        self.handlers.remove(&reg.name);
        Ok(self.entries.insert(reg.name.clone(), reg).is_some())
    }

    pub fn register_local(&mut self, mut reg: ActionRegistration, handler: Arc<dyn ActionHandler>) -> Result<bool, ActionError> {
        reg.endpoint = Endpoint::Local;
        reg.check()?;
        self.handlers.insert(reg.name.clone(), handler);
        Ok(self.entries.insert(reg.name.clone(), reg).is_some())
    }

    pub fn get(&self, name: &str) -> Option<&ActionRegistration> {
        self.entries.get(name)
    }

    /// Registrations in name order.
    pub fn list(&self) -> Vec<ActionRegistration> {
        self.entries.values().cloned().collect()
    }

    pub fn validate(&self, spec: &ActionSpec) -> Result<Params, ActionError> {
        if !(spec.timeout_s > 0.0 && spec.timeout_s.is_finite()) {
            return Err(ActionError::InvalidParameters {
                action: spec.name.clone(),
                problems: vec![format!("timeout {} must be positive", spec.timeout_s)],
            });
        }
        self.entries
            .get(&spec.name)
            .ok_or_else(|| ActionError::UnknownAction(spec.name.clone()))?
            .validate(&spec.parameters)
    }

    /// Validate and dispatch `spec`. The returned duration never exceeds the
    /// timeout by more than [`GRACE_S`].
    pub fn execute(
        &self,
        spec: &ActionSpec,
        adapter: &mut dyn RobotAdapter,
        ctx: &ExecContext,
    ) -> Result<ActionResult, ActionError> {
        let params = self.validate(spec)?;
        let reg = &self.entries[&spec.name];
        let resolved = ActionSpec {
            name: spec.name.clone(),
            parameters: params.clone(),
            timeout_s: spec.timeout_s,
        };
        if ctx.cancel.is_cancelled() {
            return Ok(ActionResult::with_status(ActionStatus::Cancelled, 0.0, "cancelled before start"));
        }
        let mut result = match &reg.endpoint {
            Endpoint::Robot => adapter.execute(&resolved, ctx),
            Endpoint::Local => run_local(self.handlers[&spec.name].clone(), params, ctx.clone()),
            Endpoint::Remote { address } => execute_remote(address, &resolved, ctx),
        };
        let cap = spec.timeout_s + GRACE_S;
        if result.duration_s > cap {
            result.duration_s = cap;
        }
        Ok(result)
    }
}

fn run_local(handler: Arc<dyn ActionHandler>, params: Params, ctx: ExecContext) -> ActionResult {
    let timeout = ctx.timeout_s();
    let cancel = ctx.cancel.clone();
    let (tx, rx) = mpsc::channel();
    let start = Instant::now();
    std::thread::spawn(move || {
        let _ = tx.send(handler.run(&params, &ctx));
    });
    match rx.recv_timeout(StdDuration::from_secs_f64(timeout)) {
        Ok(mut r) => {
            r.duration_s = r.duration_s.max(start.elapsed().as_secs_f64()).min(timeout + GRACE_S);
            r
        }
        Err(_) => {
            cancel.cancel();
            ActionResult::with_status(ActionStatus::TimedOut, timeout, "handler did not finish in time")
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum ActionMessage {
    Goal {
        action: String,
        parameters: Params,
        timeout_s: f64,
    },
    Cancel,
    Feedback {
        #[serde(default)]
        progress: Value,
    },
    Result {
        result: ActionResult,
    },
}

/// Client side of the remote protocol. Timeouts are measured in wall time.
pub fn execute_remote(address: &str, spec: &ActionSpec, ctx: &ExecContext) -> ActionResult {
    let start = Instant::now();
    let elapsed = || start.elapsed().as_secs_f64();
    let addr = match address.to_socket_addrs().ok().and_then(|mut a| a.next()) {
        Some(a) => a,
        None => return ActionResult::failed(0.0, format!("cannot resolve {address}")),
    };
    let mut stream = match TcpStream::connect_timeout(&addr, StdDuration::from_secs(5)) {
        Ok(s) => s,
        Err(e) => return ActionResult::failed(elapsed(), format!("connect {address}: {e}")),
    };
    let goal = ActionMessage::Goal {
        action: spec.name.clone(),
        parameters: spec.parameters.clone(),
        timeout_s: spec.timeout_s,
    };
    if let Err(e) = write_frame(&mut stream, &goal) {
        return ActionResult::failed(elapsed(), format!("send goal: {e}"));
    }
    let mut reader = match stream.try_clone() {
        Ok(r) => r,
        Err(e) => return ActionResult::failed(elapsed(), e.to_string()),
    };
    let (tx, rx) = mpsc::channel();
    std::thread::spawn(move || loop {
        match read_frame::<_, ActionMessage>(&mut reader) {
            Ok(Some(m)) => {
                if tx.send(Ok(m)).is_err() {
                    break;
                }
            }
            Ok(None) => {
                let _ = tx.send(Err("connection closed".to_string()));
                break;
            }
            Err(e) => {
                let _ = tx.send(Err(e.to_string()));
                break;
            }
        }
    });

    let timeout = spec.timeout_s;
    let mut cancel_sent: Option<(ActionStatus, f64)> = None;
    loop {
        match rx.recv_timeout(StdDuration::from_millis(20)) {
            Ok(Ok(ActionMessage::Result { mut result })) => {
                if let Some((status, at)) = cancel_sent {
                    if result.status != ActionStatus::Succeeded {
                        result.status = status;
                    }
                    result.duration_s = result.duration_s.max(at);
                }
                return result;
            }
            Ok(Ok(_)) => {}
            Ok(Err(e)) => {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return match cancel_sent {
                    Some((status, at)) => ActionResult::with_status(status, at, e),
                    None => ActionResult::failed(elapsed(), e),
                };
            }
            Err(mpsc::RecvTimeoutError::Timeout) => {}
            Err(mpsc::RecvTimeoutError::Disconnected) => {
                return ActionResult::failed(elapsed(), "reader stopped");
            }
        }
        let t = elapsed();
        match cancel_sent {
            None => {
                let why = if ctx.cancel.is_cancelled() {
                    Some(ActionStatus::Cancelled)
                } else if t >= timeout {
                    Some(ActionStatus::TimedOut)
                } else {
                    None
                };
                if let Some(status) = why {
                    let _ = write_frame(&mut stream, &ActionMessage::Cancel);
                    cancel_sent = Some((status, t.min(timeout)));
                }
            }
            Some((status, at)) if t >= at + GRACE_S * 0.9 => {
                let _ = stream.shutdown(std::net::Shutdown::Both);
                return ActionResult::with_status(status, at, "remote did not acknowledge cancel");
            }
            Some(_) => {}
        }
    }
}

/// Server side of the remote protocol for one connection: read a goal, run
/// `handler`, report the result. A cancel frame trips the handler's token.
pub fn serve_remote_goal(stream: TcpStream, handler: &dyn ActionHandler) -> std::io::Result<()> {
    let mut reader = stream.try_clone()?;
    let mut writer = stream;
    let goal = match read_frame::<_, ActionMessage>(&mut reader)? {
        Some(ActionMessage::Goal {
            parameters, timeout_s, ..
        }) => (parameters, timeout_s),
        Some(other) => {
            return Err(std::io::Error::new(
                std::io::ErrorKind::InvalidData,
                format!("expected goal, got {other:?}"),
            ))
        }
        None => return Ok(()),
    };
    let cancel = CancelToken::new();
    let watcher = {
        let cancel = cancel.clone();
        std::thread::spawn(move || {
            while let Ok(Some(m)) = read_frame::<_, ActionMessage>(&mut reader) {
                if m == ActionMessage::Cancel {
                    cancel.cancel();
                }
            }
        })
    };
    write_frame(
        &mut writer,
        &ActionMessage::Feedback {
            progress: json!({"state": "active"}),
        },
    )?;
    let ctx = ExecContext::new(chrono::Utc::now(), goal.1, cancel);
    let result = handler.run(&goal.0, &ctx);
    write_frame(&mut writer, &ActionMessage::Result { result })?;
    let _ = writer.shutdown(std::net::Shutdown::Write);
    let _ = watcher.join();
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn radiation() -> ActionRegistration {
        builtin_registrations().into_iter().find(|r| r.name == "record_radiation").unwrap()
    }

    #[test]
    fn defaults_fill_in() {
        let p = radiation().validate(&Params::new()).unwrap();
        assert_eq!(p["duration_s"], json!(60));
    }

    #[test]
    fn schema_violations_are_listed() {
        let cap = builtin_registrations().into_iter().find(|r| r.name == "capture_image").unwrap();
        let mut params = Params::new();
        params.insert("pan".into(), json!("left"));
        params.insert("focus".into(), json!(1));
        match cap.validate(&params) {
            Err(ActionError::InvalidParameters { problems, .. }) => assert_eq!(problems.len(), 3, "{problems:?}"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn malformed_registrations_rejected() {
        let mut r = ActionRegistry::new();
        let dup = ActionRegistration::new(
            "x",
            vec![ParamSpec::required("a", ParamType::Number), ParamSpec::required("a", ParamType::Number)],
            Endpoint::Robot,
        );
        assert!(matches!(r.register(dup), Err(ActionError::InvalidRegistration(_))));
        let bad_default = ActionRegistration::new(
            "x",
            vec![ParamSpec::optional("a", ParamType::Integer, Some(json!("one")))],
            Endpoint::Robot,
        );
        assert!(matches!(r.register(bad_default), Err(ActionError::InvalidRegistration(_))));
        assert!(matches!(
            r.register(ActionRegistration::new(" ", vec![], Endpoint::Robot)),
            Err(ActionError::InvalidRegistration(_))
        ));
    }

    #[test]
    fn replacement_keeps_one_entry() {
        let mut r = ActionRegistry::with_builtins();
        let n = r.list().len();
        assert!(!r.register(ActionRegistration::new("custom", vec![], Endpoint::Robot)).unwrap());
        assert!(r.register(ActionRegistration::new("custom", vec![], Endpoint::Robot)).unwrap());
        assert_eq!(r.list().len(), n + 1);
        assert_eq!(r.list().iter().filter(|e| e.name == "custom").count(), 1);
    }

    #[test]
    fn registration_documents_round_trip() {
        for reg in builtin_registrations() {
            let s = serde_json::to_string(&reg).unwrap();
            assert_eq!(serde_json::from_str::<ActionRegistration>(&s).unwrap(), reg);
        }
    }
}
