#![allow(dead_code)]

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Arc;

use ideaspace_core::engine::stub::default_fixture_path;
use ideaspace_core::engine::template::default_prompt_dir;
use ideaspace_server::config::Config;
use reqwest::StatusCode;
use serde_json::{json, Value};

pub const INTENT: &str = "using wearable data to train a multi-agent system for health prediction";

pub fn stub_config(persist: Option<&Path>) -> Config {
    let mut c = Config::default();
    c.server.port = 0;
    c.provider.prompts_dir = default_prompt_dir();
    c.provider.fixture = Some(default_fixture_path());
    c.persistence.dir = persist.map(Path::to_path_buf);
    c.persistence.snapshot_every = 4;
    c
}

/// Server running inside the test process.
pub async fn spawn_in_process(config: Config) -> Client {
    let state = ideaspace_server::build_state(&config).expect("state");
    let (tx, rx) = tokio::sync::oneshot::channel();
    tokio::spawn(async move {
        ideaspace_server::serve(&config, state, |addr| {
            let _ = tx.send(addr);
        })
        .await
        .expect("serve");
    });
    let addr = rx.await.expect("bound");
    Client::new(format!("http://{addr}"))
}

/// The real server binary, for tests that kill the process.
pub struct ServerProcess {
    child: Child,
    pub client: Client,
}

impl ServerProcess {
    pub fn start(config_path: &Path) -> ServerProcess {
        let mut child = Command::new(env!("CARGO_BIN_EXE_ideaspace-server"))
            .arg("--config")
            .arg(config_path)
            .env("RUST_LOG", "warn")
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("spawn server");
        let stdout = child.stdout.take().expect("stdout");
        let mut line = String::new();
        BufReader::new(stdout).read_line(&mut line).expect("read banner");
        let url = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        ServerProcess {
            child,
            client: Client::new(url),
        }
    }

    /// SIGKILL: no shutdown hooks run.
    pub fn kill(mut self) {
        self.child.kill().expect("kill");
        self.child.wait().expect("wait");
    }
}

impl Drop for ServerProcess {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

/// Writes a config file for the binary; paths are absolute.
pub fn write_config(dir: &Path, persist: &Path) -> PathBuf {
    let path = dir.join("server.toml");
    let text = format!(
        "[server]\nport = 0\n\n[provider]\nkind = \"stub\"\nprompts_dir = {:?}\nfixture = {:?}\n\n[persistence]\ndir = {:?}\nsnapshot_every = 4\n",
        default_prompt_dir().canonicalize().unwrap(),
        default_fixture_path().canonicalize().unwrap(),
        persist,
    );
    std::fs::write(&path, text).unwrap();
    path
}

#[derive(Clone)]
pub struct Client {
    pub base: Arc<str>,
    http: reqwest::Client,
}

#[derive(Debug)]
pub struct Reply {
    pub status: StatusCode,
    pub body: Value,
}

impl Reply {
    pub fn data(&self) -> &Value {
        assert_eq!(self.body["status"], "ok", "error reply {:#}", self.body);
        &self.body["data"]
    }

    pub fn code(&self) -> &str {
        self.body["error"]["code"].as_str().unwrap_or("")
    }
}

#[derive(Debug, Clone)]
pub struct SseEvent {
    pub kind: String,
    pub id: Option<u64>,
    pub data: Value,
}

impl Client {
    pub fn new(base: String) -> Client {
        Client {
            base: base.into(),
            http: reqwest::Client::new(),
        }
    }

    async fn reply(resp: reqwest::Response) -> Reply {
        let status = resp.status();
        let text = resp.text().await.unwrap();
        let body = serde_json::from_str(&text).unwrap_or(Value::String(text));
        Reply { status, body }
    }

    pub async fn get(&self, path: &str) -> Reply {
        Self::reply(self.http.get(format!("{}{path}", self.base)).send().await.unwrap()).await
    }

    pub async fn post(&self, path: &str, body: Value) -> Reply {
        Self::reply(
            self.http
                .post(format!("{}{path}", self.base))
                .json(&body)
                .send()
                .await
                .unwrap(),
        )
        .await
    }

    pub async fn post_raw(&self, path: &str, body: &str) -> Reply {
        Self::reply(
            self.http
                .post(format!("{}{path}", self.base))
                .header("content-type", "application/json")
                .body(body.to_string())
                .send()
                .await
                .unwrap(),
        )
        .await
    }

    /// Runs a generation stream to completion. Err carries a non-stream reply.
    pub async fn generate(&self, sid: &str) -> Result<Vec<SseEvent>, Reply> {
        let resp = self
            .http
            .post(format!("{}/sessions/{sid}/generate", self.base))
            .send()
            .await
            .unwrap();
        let is_stream = resp
            .headers()
            .get("content-type")
            .and_then(|v| v.to_str().ok())
            .is_some_and(|v| v.starts_with("text/event-stream"));
        if !is_stream {
            return Err(Self::reply(resp).await);
        }
        Ok(parse_sse(&resp.text().await.unwrap()))
    }

    pub async fn state(&self, sid: &str) -> Value {
        self.get(&format!("/sessions/{sid}/state")).await.data().clone()
    }
}

pub fn parse_sse(text: &str) -> Vec<SseEvent> {
    let mut out = Vec::new();
    for block in text.split("\n\n") {
        let mut kind = None;
        let mut id = None;
        let mut data = String::new();
        for line in block.lines() {
            if let Some(v) = line.strip_prefix("event:") {
                kind = Some(v.trim().to_string());
            } else if let Some(v) = line.strip_prefix("id:") {
                id = v.trim().parse().ok();
            } else if let Some(v) = line.strip_prefix("data:") {
                data.push_str(v.strip_prefix(' ').unwrap_or(v));
            }
        }
        if let Some(kind) = kind {
            out.push(SseEvent {
                kind,
                id,
                data: serde_json::from_str(&data).unwrap_or(Value::Null),
            });
        }
    }
    out
}

pub fn node_by_title<'a>(state: &'a Value, title: &str) -> &'a Value {
    state["nodes"]
        .as_array()
        .unwrap()
        .iter()
        .find(|n| n["title"] == title)
        .unwrap_or_else(|| panic!("no node titled {title:?}"))
}

pub fn scores_of(node: &Value) -> Value {
    let entries = node["scores"]["entries"].as_object().unwrap();
    Value::Object(entries.iter().map(|(k, v)| (k.clone(), v["score"].clone())).collect())
}

/// One request of the wearable-health walkthrough. Each step is a single
/// acknowledged request, so a test can stop (or crash the server) after any.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Step {
    Create,
    SelectDimensions,
    Generate,
    Rotate,
    Steer,
    Merge,
    Fragment,
    ApplyFragment,
    Correct,
    ToggleZ,
}

pub const SCENARIO: [Step; 6] = [
    Step::Create,
    Step::SelectDimensions,
    Step::Generate,
    Step::Rotate,
    Step::Steer,
    Step::Merge,
];

pub const EXTENDED: [Step; 10] = [
    Step::Create,
    Step::SelectDimensions,
    Step::Generate,
    Step::Rotate,
    Step::Steer,
    Step::Merge,
    Step::Fragment,
    Step::ApplyFragment,
    Step::Correct,
    Step::ToggleZ,
];

/// Target for the drag of Agent-Based Modeling into the Simple + Data
/// Utilization quadrant of the X-Y face; Z is the locked axis.
pub const STEER_TARGET: [i64; 3] = [30, 35, 20];

#[derive(Default, Debug)]
pub struct Walkthrough {
    pub session: String,
    pub stream: Vec<SseEvent>,
    pub steered: String,
    pub merged: String,
    pub fragment: String,
    pub from_fragment: String,
}

impl Walkthrough {
    pub async fn run(&mut self, client: &Client, step: Step) {
        let sid = self.session.clone();
        match step {
            Step::Create => {
                let r = client.post("/sessions", json!({ "intent": INTENT })).await;
                assert_eq!(r.status, StatusCode::CREATED, "{:#}", r.body);
                self.session = r.data()["session_id"].as_str().unwrap().to_string();
            }
            Step::SelectDimensions => {
                let assignments: Vec<Value> = ["X", "Y", "Z"]
                    .iter()
                    .enumerate()
                    .map(|(i, axis)| json!({"dimension_pair_id": format!("dim-000{}", i + 1), "axis": axis}))
                    .collect();
                let r = client
                    .post(&format!("/sessions/{sid}/dimensions"), json!({ "assignments": assignments }))
                    .await;
                assert_eq!(r.status, StatusCode::OK, "{:#}", r.body);
            }
            Step::Generate => {
                self.stream = client.generate(&sid).await.expect("stream");
                let last = self.stream.last().expect("events");
                assert_eq!(last.kind, "batch_done");
                assert_eq!(last.data["partial"], false, "{:?}", self.stream);
            }
            Step::Rotate => {
                let now = chrono::Utc::now();
                let events: Vec<Value> = (0..3)
                    .map(|i| {
                        json!({
                            "kind": if i < 2 { "rotation" } else { "view_change" },
                            "payload": {"face": "PosZ", "step": i},
                            "timestamp": now + chrono::Duration::milliseconds(i),
                        })
                    })
                    .collect();
                let r = client
                    .post(&format!("/sessions/{sid}/events"), json!({ "events": events }))
                    .await;
                assert_eq!(r.data()["accepted"], 3);
            }
            Step::Steer => {
                let state = client.state(&sid).await;
                let abm = node_by_title(&state, "Agent-Based Modeling")["id"].as_str().unwrap().to_string();
                let target: serde_json::Map<String, Value> = STEER_TARGET
                    .iter()
                    .enumerate()
                    .map(|(i, s)| (format!("dim-000{}", i + 1), json!(s)))
                    .collect();
                let r = client
                    .post(
                        &format!("/sessions/{sid}/nodes/{abm}/steer"),
                        json!({"target_scores": target, "mode": "iterate", "request_token": "steer-abm"}),
                    )
                    .await;
                assert!(r.status.is_success(), "{:#}", r.body);
                self.steered = r.data()["node"]["id"].as_str().unwrap().to_string();
            }
            Step::Merge => {
                let state = client.state(&sid).await;
                let rtsi = node_by_title(&state, "Real-Time Sensing Integration")["id"].as_str().unwrap();
                let r = client
                    .post(
                        &format!("/sessions/{sid}/merge"),
                        json!({"node_a": self.steered, "node_b": rtsi, "request_token": "merge-1"}),
                    )
                    .await;
                assert!(r.status.is_success(), "{:#}", r.body);
                self.merged = r.data()["node"]["id"].as_str().unwrap().to_string();
            }
            Step::Fragment => {
                let r = client
                    .post(
                        &format!("/sessions/{sid}/fragments"),
                        json!({"source_node": self.merged, "text": "real-time"}),
                    )
                    .await;
                assert_eq!(r.status, StatusCode::CREATED, "{:#}", r.body);
                self.fragment = r.data()["fragment"]["id"].as_str().unwrap().to_string();
            }
            Step::ApplyFragment => {
                let state = client.state(&sid).await;
                let epf = node_by_title(&state, "Ethical Privacy Framework")["id"].as_str().unwrap();
                let r = client
                    .post(
                        &format!("/sessions/{sid}/fragments/{}/apply", self.fragment),
                        json!({"target_node": epf, "request_token": "frag-apply-1"}),
                    )
                    .await;
                assert!(r.status.is_success(), "{:#}", r.body);
                self.from_fragment = r.data()["node"]["id"].as_str().unwrap().to_string();
            }
            Step::Correct => {
                let state = client.state(&sid).await;
                let epf = node_by_title(&state, "Ethical Privacy Framework");
                let id = epf["id"].as_str().unwrap();
                let mut target = scores_of(epf);
                target["dim-0001"] = json!(-25);
                let r = client
                    .post(
                        &format!("/sessions/{sid}/nodes/{id}/steer"),
                        json!({"target_scores": target, "mode": "correct", "request_token": "fix-epf"}),
                    )
                    .await;
                assert_eq!(r.status, StatusCode::OK, "{:#}", r.body);
            }
            Step::ToggleZ => {
                let r = client
                    .post(&format!("/sessions/{sid}/axes/Z"), json!({"enabled": false}))
                    .await;
                assert_eq!(r.data()["enabled_axes"], json!(["X", "Y"]));
            }
        }
    }
}

/// In-process server around an arbitrary provider, without persistence.
pub async fn spawn_with_provider(
    provider: Arc<dyn ideaspace_core::engine::provider::Provider>,
) -> (Client, Arc<ideaspace_server::state::AppState>) {
    use ideaspace_core::engine::template::TemplateRegistry;
    use ideaspace_core::engine::{Engine, EngineConfig};
    use ideaspace_core::geometry::GeometryConfig;

    let templates = Arc::new(TemplateRegistry::load(default_prompt_dir()).unwrap());
    let engine = Arc::new(Engine::new(provider, templates, EngineConfig::default()));
    let state = Arc::new(ideaspace_server::state::AppState::new(engine, GeometryConfig::default(), 3, None));
    let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
    let addr = listener.local_addr().unwrap();
    let app = ideaspace_server::api::router(state.clone());
    tokio::spawn(async move { axum::serve(listener, app).await.unwrap() });
    (Client::new(format!("http://{addr}")), state)
}

pub fn fixture_stub() -> ideaspace_core::engine::stub::StubProvider {
    use ideaspace_core::engine::stub::{StubFixture, StubProvider};
    StubProvider::with_fixture(0, StubFixture::load(&default_fixture_path()).unwrap())
}
