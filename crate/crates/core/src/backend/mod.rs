//! Client side of the trainer-backend protocol.
//!
//! A [`Gateway`] owns one backend session (in-process mock, child process
//! over stdio, or HTTP) and tracks model lineage, which the wire protocol
//! does not carry.

mod conformance;
mod mock;
pub mod protocol;
mod transport;

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use conformance::{run_conformance, ConformanceCheck};
pub use mock::{MockBackend, SkillProfile, SkillRule, UNTRAINED_FALLBACK};
pub use protocol::{codes, serve_lines, Handler, Hyperparams, Request, Response};
pub use transport::{HttpTransport, InProcess, StdioTransport, Transport};

pub const MOCK_TIMEOUT: Duration = Duration::from_secs(60);
pub const REAL_TIMEOUT: Duration = Duration::from_secs(72 * 3600);

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GatewayError {
    #[error("backend unavailable: {0}")]
    BackendUnavailable(String),
    #[error("training failed ({code}): {message}")]
    TrainFailed { code: String, message: String },
    #[error("backend call exceeded {0:?}")]
    Timeout(Duration),
    #[error("backend does not know model {0}")]
    UnknownModel(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("backend error ({code}): {message}")]
    Backend { code: String, message: String },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainJob {
    pub job_id: String,
    pub train_path: PathBuf,
    pub val_path: PathBuf,
    pub hyperparams: Hyperparams,
    pub seed: u64,
    pub init_from: Option<String>,
}

impl TrainJob {
    pub fn to_request(&self) -> Request {
        Request::Train {
            job_id: self.job_id.clone(),
            train_path: self.train_path.to_string_lossy().into_owned(),
            val_path: self.val_path.to_string_lossy().into_owned(),
            hyperparams: self.hyperparams.clone(),
            seed: self.seed,
            init_from: self.init_from.clone(),
        }
    }
}

/// Immutable reference to a trained model. `lineage` lists job ids from the
/// first training job to the one that produced this model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelHandle {
    pub model_id: String,
    pub lineage: Vec<String>,
    pub best_val_metric: f64,
}

/// How to reach a backend.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum BackendSpec {
    Mock {
        #[serde(default)]
        skill_profile: Option<SkillProfile>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    Stdio {
        command: Vec<String>,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
    Http {
        url: String,
        #[serde(default)]
        timeout_secs: Option<u64>,
    },
}

impl BackendSpec {
    pub fn mock() -> Self {
        Self::Mock {
            skill_profile: None,
            timeout_secs: None,
        }
    }

    pub fn timeout(&self) -> Duration {
        match self {
            Self::Mock { timeout_secs, .. } => timeout_secs.map_or(MOCK_TIMEOUT, Duration::from_secs),
            Self::Stdio { timeout_secs, .. } | Self::Http { timeout_secs, .. } => {
                timeout_secs.map_or(REAL_TIMEOUT, Duration::from_secs)
            }
        }
    }

    pub fn connect(&self) -> Result<Gateway, GatewayError> {
        let timeout = self.timeout();
        let transport: Box<dyn Transport> = match self {
            Self::Mock { skill_profile, .. } => {
                let mock = MockBackend::new(skill_profile.clone()).map_err(GatewayError::BackendUnavailable)?;
                Box::new(InProcess::new(mock, timeout))
            }
            Self::Stdio { command, .. } => Box::new(StdioTransport::spawn(command.clone(), timeout)?),
            Self::Http { url, .. } => Box::new(HttpTransport::new(url.clone(), timeout)),
        };
        Ok(Gateway::new(transport))
    }
}

pub struct Gateway {
    transport: Box<dyn Transport>,
    lineage: HashMap<String, Vec<String>>,
}

fn backend_error(response: &Response) -> (String, String) {
    (
        response.code.clone().unwrap_or_else(|| "Unknown".into()),
        response.message.clone().unwrap_or_default(),
    )
}

impl Gateway {
    pub fn new(transport: Box<dyn Transport>) -> Self {
        Self {
            transport,
            lineage: HashMap::new(),
        }
    }

    pub fn ping(&mut self) -> Result<(), GatewayError> {
        let r = self.transport.call(&Request::Ping)?;
        if r.ok {
            Ok(())
        } else {
            let (code, message) = backend_error(&r);
            Err(GatewayError::Backend { code, message })
        }
    }

    pub fn train(&mut self, job: &TrainJob) -> Result<ModelHandle, GatewayError> {
        for path in [&job.train_path, &job.val_path] {
            if !Path::new(path).is_file() {
                return Err(GatewayError::TrainFailed {
                    code: codes::DATASET.into(),
                    message: format!("{} does not exist", path.display()),
                });
            }
        }
        let r = self.transport.call(&job.to_request())?;
        if !r.ok {
            let (code, message) = backend_error(&r);
            return Err(GatewayError::TrainFailed { code, message });
        }
        let (Some(model_id), Some(best_val_metric)) = (r.model_id, r.best_val_metric) else {
            return Err(GatewayError::Protocol(
                "train response lacks model_id or best_val_metric".into(),
            ));
        };
        let mut lineage = match &job.init_from {
            Some(parent) => self.lineage.get(parent).cloned().unwrap_or_else(|| {
                log::warn!("parent model {parent} was not trained in this session; lineage starts here");
                Vec::new()
            }),
            None => Vec::new(),
        };
        lineage.push(job.job_id.clone());
        self.lineage.insert(model_id.clone(), lineage.clone());
        Ok(ModelHandle {
            model_id,
            lineage,
            best_val_metric,
        })
    }

    pub fn predict(&mut self, handle: &ModelHandle, inputs: &[String]) -> Result<Vec<String>, GatewayError> {
        let r = self.transport.call(&Request::Predict {
            model_id: handle.model_id.clone(),
            inputs: inputs.to_vec(),
        })?;
        if !r.ok {
            let (code, message) = backend_error(&r);
            return Err(if code == codes::UNKNOWN_MODEL {
                GatewayError::UnknownModel(handle.model_id.clone())
            } else {
                GatewayError::Backend { code, message }
            });
        }
        let outputs = r
            .outputs
            .ok_or_else(|| GatewayError::Protocol("predict response lacks outputs".into()))?;
        if outputs.len() != inputs.len() {
            return Err(GatewayError::Protocol(format!(
                "{} outputs for {} inputs",
                outputs.len(),
                inputs.len()
            )));
        }
        Ok(outputs)
    }

    pub fn shutdown(mut self) -> Result<(), GatewayError> {
        self.transport.call(&Request::Shutdown).map(|_| ())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::prompt::{write_prompted_jsonl, PromptedExample, TaskTag};

    fn ex(input: &str, target: &str) -> PromptedExample {
        PromptedExample {
            input_text: input.into(),
            target_text: target.into(),
            origin_id: input.into(),
            task: TaskTag::Alsc,
        }
    }

    fn write(dir: &Path, name: &str, examples: &[PromptedExample]) -> PathBuf {
        let path = dir.join(name);
        write_prompted_jsonl(examples, std::fs::File::create(&path).unwrap()).unwrap();
        path
    }

    fn job(id: &str, train: &Path, val: &Path, seed: u64, init_from: Option<&str>) -> TrainJob {
        TrainJob {
            job_id: id.into(),
            train_path: train.into(),
            val_path: val.into(),
            hyperparams: Hyperparams::default(),
            seed,
            init_from: init_from.map(String::from),
        }
    }

    #[test]
    fn majority_and_memory() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(
            dir.path(),
            "t.jsonl",
            &[
                ex("a", "positive"),
                ex("b", "positive"),
                ex("c", "positive"),
                ex("d", "negative"),
            ],
        );
        let val = write(dir.path(), "v.jsonl", &[ex("d", "negative"), ex("zz", "neutral")]);
        let mut gw = BackendSpec::mock().connect().unwrap();
        let h = gw.train(&job("j", &train, &val, 1, None)).unwrap();
        assert_eq!(h.lineage, vec!["j".to_string()]);
        assert_eq!(h.best_val_metric, 50.0);
        let out = gw.predict(&h, &["d".into(), "unseen".into()]).unwrap();
        assert_eq!(out, vec!["negative", "positive"]);
        assert!(gw.predict(&h, &[]).unwrap().is_empty());
    }

    #[test]
    fn model_id_is_digest_of_job() {
        let dir = tempfile::tempdir().unwrap();
        let train = write(dir.path(), "t.jsonl", &[ex("a", "positive")]);
        let mut g1 = BackendSpec::mock().connect().unwrap();
        let mut g2 = BackendSpec::mock().connect().unwrap();
        let a = g1.train(&job("j", &train, &train, 1, None)).unwrap();
        let b = g2.train(&job("j", &train, &train, 1, None)).unwrap();
        let c = g2.train(&job("j", &train, &train, 2, None)).unwrap();
        assert_eq!(a.model_id, b.model_id);
        assert_ne!(a.model_id, c.model_id);
    }

    #[test]
    fn chained_training_and_errors() {
        let dir = tempfile::tempdir().unwrap();
        let aux = write(dir.path(), "aux.jsonl", &[ex("Get antecedent: *it*", "food")]);
        let tgt = write(dir.path(), "tgt.jsonl", &[ex("x", "negative")]);
        let mut gw = BackendSpec::mock().connect().unwrap();
        let a = gw.train(&job("aux", &aux, &aux, 1, None)).unwrap();
        let t = gw.train(&job("tgt", &tgt, &tgt, 1, Some(&a.model_id))).unwrap();
        assert_eq!(t.lineage, vec!["aux".to_string(), "tgt".to_string()]);
        // The chained model remembers the parent's pairs but uses its own majority.
        let out = gw.predict(&t, &["Get antecedent: *it*".into(), "new".into()]).unwrap();
        assert_eq!(out, vec!["food", "negative"]);

        let err = gw.train(&job("bad", &tgt, &tgt, 1, Some("nope"))).unwrap_err();
        assert!(matches!(err, GatewayError::TrainFailed { ref code, .. } if code == codes::UNKNOWN_INIT_MODEL));
        let ghost = ModelHandle {
            model_id: "ghost".into(),
            lineage: vec!["x".into()],
            best_val_metric: 0.0,
        };
        assert_eq!(
            gw.predict(&ghost, &[]).unwrap_err(),
            GatewayError::UnknownModel("ghost".into())
        );
        let missing = gw
            .train(&job("m", &dir.path().join("none"), &tgt, 1, None))
            .unwrap_err();
        assert!(matches!(missing, GatewayError::TrainFailed { .. }));
    }

    #[test]
    fn untrained_fallback_and_skill_rules() {
        let dir = tempfile::tempdir().unwrap();
        let dpr = write(
            dir.path(),
            "dpr.jsonl",
            &[ex("Get antecedent: The cat sat, *it* slept", "The cat")],
        );
        let alsc = write(
            dir.path(),
            "alsc.jsonl",
            &[ex("get sentiment: ok. aspect: x", "neutral")],
        );
        let profile = SkillProfile {
            rules: vec![
                SkillRule {
                    pattern: r"\bit\b".into(),
                    output: "positive".into(),
                    trained_on: Some("^Get antecedent:".into()),
                    seed_modulus: None,
                },
                SkillRule {
                    pattern: "odd".into(),
                    output: "negative".into(),
                    trained_on: None,
                    seed_modulus: Some((2, 1)),
                },
            ],
        };
        let mut gw = BackendSpec::Mock {
            skill_profile: Some(profile),
            timeout_secs: None,
        }
        .connect()
        .unwrap();
        let plain = gw.train(&job("p", &alsc, &alsc, 2, None)).unwrap();
        let inputs = vec!["loved it".to_string(), "odd one".to_string()];
        assert_eq!(gw.predict(&plain, &inputs).unwrap(), vec!["neutral", "neutral"]);
        let aux = gw.train(&job("a", &dpr, &dpr, 3, None)).unwrap();
        let chained = gw.train(&job("t", &alsc, &alsc, 3, Some(&aux.model_id))).unwrap();
        assert_eq!(gw.predict(&chained, &inputs).unwrap(), vec!["positive", "negative"]);

        let mut fresh = MockBackend::new(None).unwrap();
        let r = fresh.handle(Request::Predict {
            model_id: "none".into(),
            inputs: vec![],
        });
        assert_eq!(r.code.as_deref(), Some(codes::UNKNOWN_MODEL));
        assert_eq!(UNTRAINED_FALLBACK, "neutral");
    }
}
