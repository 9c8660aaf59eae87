//! Shared pieces for the integration targets: a small chat-completions
//! stand-in server and the one-question smoke run.

#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use serde_json::Value;
use tokio::io::{AsyncReadExt, AsyncWriteExt};
use tokio::net::{TcpListener, TcpStream};

use teachprobe::harness::{full_pipeline, HarnessConfig, Limits, PipelineOutcome};
use teachprobe::teaching::{read_transcript, transcript_path, Termination};

pub fn toy_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR"))
        .join("../../fixtures/toy")
        .canonicalize()
        .expect("toy fixture present")
}

/// One request as the server saw it.
#[derive(Debug, Clone)]
pub struct Captured {
    pub path: String,
    /// Header names lowercased.
    pub headers: Vec<(String, String)>,
    pub body: Value,
}

impl Captured {
    pub fn header(&self, name: &str) -> Option<&str> {
        self.headers
            .iter()
            .find(|(k, _)| k == name)
            .map(|(_, v)| v.as_str())
    }

    pub fn last_user(&self) -> &str {
        self.body["messages"]
            .as_array()
            .and_then(|m| m.iter().rev().find(|m| m["role"] == "user"))
            .and_then(|m| m["content"].as_str())
            .unwrap_or("")
    }
}

type Handler = dyn Fn(&Captured) -> (u16, String) + Send + Sync;

pub struct FakeServer {
    pub base_url: String,
    pub seen: Arc<Mutex<Vec<Captured>>>,
}

impl FakeServer {
    pub fn requests(&self) -> Vec<Captured> {
        self.seen.lock().unwrap().clone()
    }
}

pub fn completion(content: &str) -> String {
    serde_json::json!({
        "choices": [{"index": 0, "message": {"role": "assistant", "content": content}}],
        "usage": {"prompt_tokens": 10, "completion_tokens": 5, "total_tokens": 15}
    })
    .to_string()
}

/// Serves `/chat/completions` on a loopback port until the runtime stops.
pub async fn serve(
    handler: impl Fn(&Captured) -> (u16, String) + Send + Sync + 'static,
) -> FakeServer {
    let listener = TcpListener::bind("127.0.0.1:0").await.unwrap();
    let base_url = format!("http://{}/v1", listener.local_addr().unwrap());
    let seen = Arc::new(Mutex::new(Vec::new()));
    let handler: Arc<Handler> = Arc::new(handler);
    let log = seen.clone();
    tokio::spawn(async move {
        loop {
            let Ok((stream, _)) = listener.accept().await else {
                return;
            };
            let (handler, log) = (handler.clone(), log.clone());
            tokio::spawn(async move {
                let _ = answer(stream, &*handler, &log).await;
            });
        }
    });
    FakeServer { base_url, seen }
}

async fn answer(
    mut stream: TcpStream,
    handler: &Handler,
    log: &Mutex<Vec<Captured>>,
) -> std::io::Result<()> {
    let mut buf = Vec::new();
    let mut chunk = [0u8; 4096];
    let head_end = loop {
        let n = stream.read(&mut chunk).await?;
        if n == 0 {
            return Ok(());
        }
        buf.extend_from_slice(&chunk[..n]);
        if let Some(i) = buf.windows(4).position(|w| w == b"\r\n\r\n") {
            break i + 4;
        }
    };
    let head = String::from_utf8_lossy(&buf[..head_end]).into_owned();
    let mut lines = head.split("\r\n");
    let path = lines
        .next()
        .and_then(|l| l.split_whitespace().nth(1))
        .unwrap_or("")
        .to_string();
    let headers: Vec<(String, String)> = lines
        .filter_map(|l| l.split_once(':'))
        .map(|(k, v)| (k.trim().to_ascii_lowercase(), v.trim().to_string()))
        .collect();
    let length: usize = headers
        .iter()
        .find(|(k, _)| k == "content-length")
        .and_then(|(_, v)| v.parse().ok())
        .unwrap_or(0);
    while buf.len() < head_end + length {
        let n = stream.read(&mut chunk).await?;
        if n == 0 {
            break;
        }
        buf.extend_from_slice(&chunk[..n]);
    }
    let body = serde_json::from_slice(&buf[head_end..]).unwrap_or(Value::Null);
    let captured = Captured {
        path,
        headers,
        body,
    };
    let (status, reply) = handler(&captured);
    log.lock().unwrap().push(captured);
    let response = format!(
        "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{reply}",
        reply.len()
    );
    stream.write_all(response.as_bytes()).await?;
    stream.shutdown().await
}

/// Teacher and student behaviour of the toy scripts, keyed on the model name.
pub fn toy_models(request: &Captured) -> (u16, String) {
    let everything = request.body["messages"].to_string();
    let reply = match request.body["model"].as_str() {
        Some("teacher-model") if request.last_user().contains("明白了") => {
            "好的，今天就到这里。teach done"
        }
        Some("teacher-model") => "请先记住解题要诀：先定方法，再代入验算。",
        Some("student-model") if request.last_user().contains("（单选题）") => {
            if everything.contains("解题要诀") {
                "答案：B"
            } else {
                "答案：A"
            }
        }
        Some("student-model") => "明白了，谢谢老师。",
        _ => return (404, r#"{"error": "unknown model"}"#.into()),
    };
    (200, completion(reply))
}

pub struct SmokeEndpoints<'a> {
    pub base_url: &'a str,
    pub teacher_model: &'a str,
    pub student_model: &'a str,
    /// Name of the environment variable holding the API key.
    pub credential_ref: Option<&'a str>,
}

pub struct SmokeResult {
    pub post_pass_at_1: f64,
    pub teacher_turns: usize,
    pub termination: Termination,
    pub calls_logged: usize,
}

/// One question, one session, four samples, against real HTTP endpoints.
pub async fn smoke_run(work: &Path, endpoints: &SmokeEndpoints<'_>) -> Result<SmokeResult, String> {
    let questions =
        std::fs::read_to_string(toy_dir().join("questions.jsonl")).map_err(|e| e.to_string())?;
    let first = questions.lines().next().ok_or("empty toy questions")?;
    std::fs::create_dir_all(work).map_err(|e| e.to_string())?;
    std::fs::write(work.join("questions.jsonl"), format!("{first}\n"))
        .map_err(|e| e.to_string())?;
    let credential = endpoints
        .credential_ref
        .map(|c| format!("credential_ref = {c:?}\n"))
        .unwrap_or_default();
    let text = format!(
        r#"language = "zh"
label = "smoke"

[data]
tree = {tree:?}
questions = "questions.jsonl"

[endpoints.teacher]
base_url = {base:?}
model = {teacher:?}
{credential}
[endpoints.student]
base_url = {base:?}
model = {student:?}
{credential}
[roles]
teacher = "teacher"
student = "student"

[teaching]
sessions = 1

[evaluation]
samples_per_session = 4
ks = [1, 4]
seed = 1
"#,
        tree = toy_dir().join("tree.json"),
        base = endpoints.base_url,
        teacher = endpoints.teacher_model,
        student = endpoints.student_model,
    );
    let config_path = work.join("config.toml");
    std::fs::write(&config_path, text).map_err(|e| e.to_string())?;
    let config = HarnessConfig::load(&config_path).map_err(|e| e.to_string())?;

    let run_dir = work.join("run");
    let outcome = full_pipeline(&config, &run_dir, Limits::default())
        .await
        .map_err(|e| e.to_string())?;
    let PipelineOutcome::Complete { report, .. } = outcome else {
        return Err("run stopped early".into());
    };
    let post = report
        .post
        .as_ref()
        .ok_or("report has no post-teaching results")?;
    let session = read_transcript(&transcript_path(
        &run_dir.join("transcripts"),
        "toy-1",
        "session-1",
    ))
    .map_err(|e| format!("transcript: {e}"))?;
    session.check()?;
    let calls = std::fs::read_to_string(run_dir.join("calls.jsonl")).map_err(|e| e.to_string())?;
    Ok(SmokeResult {
        post_pass_at_1: post.mean[&1],
        teacher_turns: session.teacher_turns(),
        termination: session.termination,
        calls_logged: calls.lines().count(),
    })
}
