//! Adapter for third-party simulators over a newline-delimited JSON protocol
//! on the child process's stdin/stdout. See `docs/external_protocol.md`.

use std::io::{BufRead, BufReader, Write};
use std::process::{Child, ChildStdin, ChildStdout, Command, Stdio};

use rand::RngCore;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{
    remap_continuous, remap_discrete, Action, ActionKind, EnvSpec, Environment, Step, SwitchMode,
};
use crate::error::{Error, Result};
use crate::rng::RngStream;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalConfig {
    pub command: String,
    #[serde(default)]
    pub args: Vec<String>,
    pub obs_dim: usize,
    pub action_kind: ActionKind,
    pub max_steps: usize,
    pub score_range: (f64, f64),
}

impl ExternalConfig {
    pub fn spec(&self) -> EnvSpec {
        EnvSpec {
            obs_dim: self.obs_dim,
            action_kind: self.action_kind,
            max_steps: self.max_steps,
            score_range: self.score_range,
        }
    }
}

/// One protocol line: `{"type":...,"payload":...}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WireMessage {
    #[serde(rename = "type")]
    pub kind: String,
    pub payload: Value,
}

impl WireMessage {
    pub fn reset(seed: u64) -> Self {
        Self {
            kind: "reset".into(),
            payload: json!({ "seed": seed }),
        }
    }

    pub fn step(action: &Action) -> Self {
        let action = match action {
            Action::Discrete(a) => json!(a),
            Action::Continuous(v) => json!(v),
        };
        Self {
            kind: "step".into(),
            payload: json!({ "action": action }),
        }
    }

    pub fn encode(&self) -> Result<String> {
        let mut s = serde_json::to_string(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn decode(line: &str) -> Result<Self> {
        Ok(serde_json::from_str(line.trim_end_matches(['\n', '\r']))?)
    }

    /// Interprets a `result` message as `(obs, reward, done)`.
    pub fn into_result(self, obs_dim: usize) -> Result<Step> {
        #[derive(Deserialize)]
        struct Payload {
            obs: Vec<f64>,
            #[serde(default)]
            reward: f64,
            #[serde(default)]
            done: bool,
        }
        match self.kind.as_str() {
            "result" => {
                let p: Payload = serde_json::from_value(self.payload)?;
                if p.obs.len() != obs_dim {
                    return Err(Error::Environment(format!(
                        "observation has {} values, expected {obs_dim}",
                        p.obs.len()
                    )));
                }
                Ok(Step {
                    obs: p.obs,
                    reward: p.reward,
                    done: p.done,
                })
            }
            "error" => Err(Error::Environment(self.payload.to_string())),
            other => Err(Error::Environment(format!("unexpected message type `{other}`"))),
        }
    }
}

pub struct ExternalEnv {
    config: ExternalConfig,
    spec: EnvSpec,
    child: Child,
    stdin: ChildStdin,
    stdout: BufReader<ChildStdout>,
    mode: SwitchMode,
    last_obs: Vec<f64>,
}

impl std::fmt::Debug for ExternalEnv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ExternalEnv")
            .field("command", &self.config.command)
            .field("mode", &self.mode)
            .finish()
    }
}

impl ExternalEnv {
    pub fn spawn(config: ExternalConfig) -> Result<Self> {
        let mut child = Command::new(&config.command)
            .args(&config.args)
            .stdin(Stdio::piped())
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .map_err(|e| Error::Environment(format!("spawning `{}`: {e}", config.command)))?;
        let stdin = child.stdin.take().expect("piped stdin");
        let stdout = BufReader::new(child.stdout.take().expect("piped stdout"));
        Ok(Self {
            spec: config.spec(),
            config,
            child,
            stdin,
            stdout,
            mode: SwitchMode::Normal,
            last_obs: Vec::new(),
        })
    }

    fn exchange(&mut self, msg: &WireMessage) -> Result<Step> {
        let env_err = |e: std::io::Error| Error::Environment(e.to_string());
        self.stdin.write_all(msg.encode()?.as_bytes()).map_err(env_err)?;
        self.stdin.flush().map_err(env_err)?;
        let mut line = String::new();
        if self.stdout.read_line(&mut line).map_err(env_err)? == 0 {
            return Err(Error::Environment("simulator closed its output".into()));
        }
        WireMessage::decode(&line)?.into_result(self.config.obs_dim)
    }
}

impl Drop for ExternalEnv {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

impl Environment for ExternalEnv {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn mode(&self) -> SwitchMode {
        self.mode
    }

    fn set_mode(&mut self, mode: SwitchMode) {
        self.mode = mode;
    }

    fn reset(&mut self, stream: &RngStream) -> Result<Vec<f64>> {
        let seed = stream.rng().next_u64();
        let step = self.exchange(&WireMessage::reset(seed))?;
        self.last_obs = step.obs.clone();
        Ok(step.obs)
    }

    fn step(&mut self, action: &Action) -> Result<Step> {
        let executed = match (action, self.config.action_kind) {
            (Action::Discrete(a), ActionKind::Discrete(n)) if *a < n => {
                Action::Discrete(remap_discrete(*a, n, self.mode))
            }
            (Action::Continuous(v), ActionKind::Continuous(d)) if v.len() == d => {
                Action::Continuous(remap_continuous(v, self.mode))
            }
            (other, kind) => {
                return Err(Error::ActionOutOfRange(format!("{other:?} for {kind:?}")))
            }
        };
        let step = self.exchange(&WireMessage::step(&executed))?;
        self.last_obs = step.obs.clone();
        Ok(step)
    }

    fn trace_point(&self) -> Vec<f64> {
        self.last_obs.clone()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn wire_bytes_are_exact() {
        assert_eq!(WireMessage::reset(7).encode().unwrap(), "{\"type\":\"reset\",\"payload\":{\"seed\":7}}\n");
        assert_eq!(
            WireMessage::step(&Action::Discrete(3)).encode().unwrap(),
            "{\"type\":\"step\",\"payload\":{\"action\":3}}\n"
        );
        assert_eq!(
            WireMessage::step(&Action::Continuous(vec![0.5, -1.0])).encode().unwrap(),
            "{\"type\":\"step\",\"payload\":{\"action\":[0.5,-1.0]}}\n"
        );
    }

    #[test]
    fn decodes_results_and_errors() {
        let ok = WireMessage::decode("{\"type\":\"result\",\"payload\":{\"obs\":[1.0,2.0],\"reward\":0.5,\"done\":true}}\n")
            .unwrap()
            .into_result(2)
            .unwrap();
        assert_eq!(ok, Step { obs: vec![1.0, 2.0], reward: 0.5, done: true });
        let err = WireMessage::decode("{\"type\":\"error\",\"payload\":{\"message\":\"boom\"}}").unwrap();
        assert!(matches!(err.into_result(2), Err(Error::Environment(_))));
        let short = WireMessage::decode("{\"type\":\"result\",\"payload\":{\"obs\":[1.0]}}").unwrap();
        assert!(short.into_result(2).is_err());
    }

    const ECHO_SIM: &str = r#"n=0
while read -r line; do
  case "$line" in
    *'"type":"reset"'*) n=0; echo '{"type":"result","payload":{"obs":[0.0,0.0],"reward":0.0,"done":false}}' ;;
    *'"action":1'*) n=$((n+1)); echo "{\"type\":\"result\",\"payload\":{\"obs\":[1.0,$n],\"reward\":1.0,\"done\":$([ $n -ge 3 ] && echo true || echo false)}}" ;;
    *'"action":0'*) n=$((n+1)); echo "{\"type\":\"result\",\"payload\":{\"obs\":[0.0,$n],\"reward\":0.0,\"done\":$([ $n -ge 3 ] && echo true || echo false)}}" ;;
    *) echo '{"type":"error","payload":{"message":"bad request"}}' ;;
  esac
done"#;

    fn echo_config() -> ExternalConfig {
        ExternalConfig {
            command: "sh".into(),
            args: vec!["-c".into(), ECHO_SIM.into()],
            obs_dim: 2,
            action_kind: ActionKind::Discrete(2),
            max_steps: 10,
            score_range: (0.0, 10.0),
        }
    }

    #[test]
    fn drives_a_subprocess_and_remaps_actions() {
        let mut env = ExternalEnv::spawn(echo_config()).unwrap();
        let stream = RngStream::new(0, 0, 0, crate::rng::Purpose::Episode(0));
        assert_eq!(env.reset(&stream).unwrap(), vec![0.0, 0.0]);
        let s = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!((s.obs.clone(), s.reward, s.done), (vec![1.0, 1.0], 1.0, false));
        env.set_mode(SwitchMode::Inverted);
        let s = env.step(&Action::Discrete(1)).unwrap();
        assert_eq!(s.obs, vec![0.0, 2.0]);
        assert!(env.step(&Action::Discrete(0)).unwrap().done);
        assert!(env.step(&Action::Discrete(2)).is_err());
    }

    #[test]
    fn missing_command_is_an_environment_error() {
        let mut cfg = echo_config();
        cfg.command = "/nonexistent/simulator".into();
        assert!(matches!(ExternalEnv::spawn(cfg), Err(Error::Environment(_))));
    }
}
