use std::time::Duration;

use serde::{Deserialize, Serialize};

use super::{DialoguePair, PolicyBackend, PolicyContext, PolicyFailure, PolicyProposal, POLICY_SCHEMA_VERSION};

pub const ENDPOINT_ENV: &str = "BOUNDED_POLICY_ENDPOINT";
pub const AUTH_ENV: &str = "BOUNDED_POLICY_AUTH";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemotePolicyConfig {
    pub endpoint: String,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    #[serde(default)]
    pub retries: u32,
    /// Sent verbatim as the `Authorization` header.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_header: Option<String>,
    /// Forwarded to the service; how bundle names are presented is up to it.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_template: Option<String>,
}

fn default_timeout_ms() -> u64 {
    10_000
}

impl RemotePolicyConfig {
    pub fn new(endpoint: impl Into<String>) -> Self {
        Self {
            endpoint: endpoint.into(),
            timeout_ms: default_timeout_ms(),
            retries: 0,
            auth_header: None,
            prompt_template: None,
        }
    }

    /// Reads the endpoint and auth header from the environment.
    pub fn from_env() -> Option<Self> {
        let endpoint = std::env::var(ENDPOINT_ENV).ok()?;
        let mut c = Self::new(endpoint);
        c.auth_header = std::env::var(AUTH_ENV).ok();
        Some(c)
    }
}

#[derive(Serialize)]
struct PolicyRequest<'a> {
    schema_version: u32,
    request: &'a str,
    context: &'a PolicyContext,
    #[serde(skip_serializing_if = "Option::is_none")]
    prompt_template: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    talk_bundle: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    nontalk_bundle: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    attempt: Option<u32>,
}

#[derive(Deserialize)]
struct DialogueResponse {
    dialogue: Option<String>,
}

/// HTTP client for an external text-generation service.
pub struct RemotePolicy {
    config: RemotePolicyConfig,
    client: reqwest::blocking::Client,
}

impl RemotePolicy {
    pub fn new(config: RemotePolicyConfig) -> Result<Self, PolicyFailure> {
        let client = reqwest::blocking::Client::builder()
            .timeout(Duration::from_millis(config.timeout_ms))
            .build()
            .map_err(|e| PolicyFailure::Transport(e.to_string()))?;
        Ok(Self { config, client })
    }

    fn post(&self, body: &PolicyRequest<'_>) -> Result<serde_json::Value, PolicyFailure> {
        let mut last = PolicyFailure::Transport("no attempt made".into());
        for _ in 0..=self.config.retries {
            match self.post_once(body) {
                Ok(v) => return Ok(v),
                // a malformed answer will not improve on retry
                Err(e @ PolicyFailure::Malformed(_)) => return Err(e),
                Err(e) => last = e,
            }
        }
        Err(last)
    }

    fn post_once(&self, body: &PolicyRequest<'_>) -> Result<serde_json::Value, PolicyFailure> {
        let mut req = self.client.post(&self.config.endpoint).json(body);
        if let Some(auth) = &self.config.auth_header {
            req = req.header("Authorization", auth);
        }
        let resp = req.send().map_err(|e| {
            if e.is_timeout() {
                PolicyFailure::Timeout
            } else {
                PolicyFailure::Transport(e.to_string())
            }
        })?;
        if !resp.status().is_success() {
            return Err(PolicyFailure::Transport(format!("status {}", resp.status())));
        }
        resp.json().map_err(|e| {
            if e.is_timeout() {
                PolicyFailure::Timeout
            } else {
                PolicyFailure::Malformed(e.to_string())
            }
        })
    }
}

impl PolicyBackend for RemotePolicy {
    fn id(&self) -> &str {
        "remote"
    }

    fn propose(&self, context: &PolicyContext) -> Result<PolicyProposal, PolicyFailure> {
        let value = self.post(&PolicyRequest {
            schema_version: POLICY_SCHEMA_VERSION,
            request: "propose",
            context,
            prompt_template: self.config.prompt_template.as_deref(),
            talk_bundle: None,
            nontalk_bundle: None,
            attempt: None,
        })?;
        if value.get("talk_name").is_none() && value.get("self_intent").is_none() {
            return Err(PolicyFailure::Malformed("missing talk_name".into()));
        }
        let proposal: PolicyProposal =
            serde_json::from_value(value).map_err(|e| PolicyFailure::Malformed(e.to_string()))?;
        proposal.validate()?;
        Ok(proposal)
    }

    fn generate_dialogue(
        &self,
        context: &PolicyContext,
        pair: DialoguePair<'_>,
        attempt: u32,
    ) -> Result<String, PolicyFailure> {
        if !pair.talk.is_dialogue_action() {
            return Err(PolicyFailure::Precondition(format!("{} is not a dialogue action", pair.talk.id)));
        }
        let value = self.post(&PolicyRequest {
            schema_version: POLICY_SCHEMA_VERSION,
            request: "dialogue",
            context,
            prompt_template: self.config.prompt_template.as_deref(),
            talk_bundle: Some(&pair.talk.name),
            nontalk_bundle: pair.nontalk.map(|b| b.name.as_str()),
            attempt: Some(attempt),
        })?;
        let resp: DialogueResponse =
            serde_json::from_value(value).map_err(|e| PolicyFailure::Malformed(e.to_string()))?;
        resp.dialogue
            .filter(|d| !d.trim().is_empty())
            .ok_or_else(|| PolicyFailure::Malformed("missing dialogue".into()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{PriorityClass, RoomState};
    use crate::policy::{Stimulus, StimulusKind, HISTORY_WINDOW};
    use crate::runtime::RoomConfig;
    use std::io::{BufRead, BufReader, Read, Write};
    use std::net::TcpListener;
    use std::sync::mpsc;
    use std::thread;

    /// Serves one canned HTTP response and hands back the request body.
    fn serve_once(status: &'static str, body: &'static str) -> (String, mpsc::Receiver<String>) {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/policy", listener.local_addr().unwrap());
        let (tx, rx) = mpsc::channel();
        thread::spawn(move || {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut len = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some(v) = line.to_ascii_lowercase().strip_prefix("content-length:") {
                    len = v.trim().parse().unwrap();
                }
            }
            let mut buf = vec![0; len];
            reader.read_exact(&mut buf).unwrap();
            tx.send(String::from_utf8(buf).unwrap()).unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status}\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            )
            .unwrap();
        });
        (url, rx)
    }

    fn context() -> PolicyContext {
        let room = RoomState::new("party", RoomConfig::default());
        let stimulus = Stimulus {
            kind: StimulusKind::Whisper,
            priority: PriorityClass::A,
            text: "compliment them".into(),
            event: None,
            target: Some("B".into()),
        };
        PolicyContext::build(&room, &"A".into(), stimulus, HISTORY_WINDOW)
    }

    #[test]
    fn well_formed_response() {
        let (url, rx) = serve_once("200 OK", r#"{"talk_name":"praise","nontalk_name":"smile","dialogue":"nice"}"#);
        let p = RemotePolicy::new(RemotePolicyConfig::new(url)).unwrap();
        let prop = p.propose(&context()).unwrap();
        assert_eq!(prop.talk_name, "praise");
        assert_eq!(prop.nontalk_name.as_deref(), Some("smile"));
        let sent: serde_json::Value = serde_json::from_str(&rx.recv().unwrap()).unwrap();
        assert_eq!(sent["schema_version"], 1);
        assert_eq!(sent["context"]["stimulus"]["text"], "compliment them");
    }

    #[test]
    fn non_200_is_transport_error() {
        let (url, _rx) = serve_once("500 Internal Server Error", "{}");
        let p = RemotePolicy::new(RemotePolicyConfig::new(url)).unwrap();
        assert!(matches!(p.propose(&context()), Err(PolicyFailure::Transport(_))));
    }

    #[test]
    fn missing_talk_name_is_malformed() {
        let (url, _rx) = serve_once("200 OK", r#"{"nontalk_name":"smile"}"#);
        let p = RemotePolicy::new(RemotePolicyConfig::new(url)).unwrap();
        assert!(matches!(p.propose(&context()), Err(PolicyFailure::Malformed(_))));
    }

    #[test]
    fn unreachable_endpoint_fails_without_hanging() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        drop(listener);
        let mut config = RemotePolicyConfig::new(url);
        config.timeout_ms = 500;
        let p = RemotePolicy::new(config).unwrap();
        assert!(p.propose(&context()).is_err());
    }

    #[test]
    fn slow_endpoint_times_out() {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/", listener.local_addr().unwrap());
        let handle = thread::spawn(move || {
            let (_stream, _) = listener.accept().unwrap();
            thread::sleep(Duration::from_millis(800));
        });
        let mut config = RemotePolicyConfig::new(url);
        config.timeout_ms = 200;
        let p = RemotePolicy::new(config).unwrap();
        assert_eq!(p.propose(&context()), Err(PolicyFailure::Timeout));
        handle.join().unwrap();
    }
}
