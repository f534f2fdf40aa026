//! Newline-delimited JSON messages exchanged with trainer backends.
//!
//! ```text
//! {"op":"train","job_id":..,"train_path":..,"val_path":..,"hyperparams":{..},"seed":..,"init_from":null|id}
//!   -> {"ok":true,"model_id":..,"best_val_metric":..}
//! {"op":"predict","model_id":..,"inputs":[..]} -> {"ok":true,"outputs":[..]}
//! {"op":"ping"} / {"op":"shutdown"}            -> {"ok":true}
//! any failure                                 -> {"ok":false,"code":..,"message":..}
//! ```

use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub learning_rate: f64,
    pub batch_size: u32,
    pub max_epochs: u32,
    pub early_stop_patience: u32,
}

impl Hyperparams {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for Hyperparams {
    fn default() -> Self {
        Self {
            learning_rate: 5e-4,
            batch_size: 16,
            max_epochs: 30,
            early_stop_patience: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "lowercase")]
pub enum Request {
    Train {
        job_id: String,
        train_path: String,
        val_path: String,
        hyperparams: Hyperparams,
        seed: u64,
        init_from: Option<String>,
    },
    Predict {
        model_id: String,
        inputs: Vec<String>,
    },
    Ping,
    Shutdown,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Response {
    pub ok: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub best_val_metric: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub outputs: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

impl Response {
    pub fn ack() -> Self {
        Self {
            ok: true,
            model_id: None,
            best_val_metric: None,
            outputs: None,
            code: None,
            message: None,
        }
    }

    pub fn trained(model_id: impl Into<String>, best_val_metric: f64) -> Self {
        Self {
            model_id: Some(model_id.into()),
            best_val_metric: Some(best_val_metric),
            ..Self::ack()
        }
    }

    pub fn predicted(outputs: Vec<String>) -> Self {
        Self {
            outputs: Some(outputs),
            ..Self::ack()
        }
    }

    pub fn error(code: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            ok: false,
            code: Some(code.into()),
            message: Some(message.into()),
            ..Self::ack()
        }
    }
}

/// Error codes used by the bundled backends.
pub mod codes {
    pub const UNKNOWN_MODEL: &str = "UnknownModel";
    pub const UNKNOWN_INIT_MODEL: &str = "UnknownInitModel";
    pub const DATASET: &str = "DatasetError";
    pub const BAD_REQUEST: &str = "BadRequest";
}

/// Something that answers protocol requests.
pub trait Handler {
    fn handle(&mut self, request: Request) -> Response;
}

/// Answer one raw line. Unparseable requests get a `BadRequest` error.
pub fn handle_line<H: Handler + ?Sized>(handler: &mut H, line: &str) -> (Response, bool) {
    match serde_json::from_str::<Request>(line) {
        Ok(Request::Shutdown) => (Response::ack(), true),
        Ok(req) => (handler.handle(req), false),
        Err(e) => (Response::error(codes::BAD_REQUEST, e.to_string()), false),
    }
}

/// Serve a handler over line-oriented streams until `shutdown` or EOF.
pub fn serve_lines<H, R, W>(handler: &mut H, input: R, mut output: W) -> std::io::Result<()>
where
    H: Handler + ?Sized,
    R: BufRead,
    W: Write,
{
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (response, stop) = handle_line(handler, &line);
        serde_json::to_writer(&mut output, &response)?;
        output.write_all(b"\n")?;
        output.flush()?;
        if stop {
            break;
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn train_request_field_names() {
        let req = Request::Train {
            job_id: "j1".into(),
            train_path: "t.jsonl".into(),
            val_path: "v.jsonl".into(),
            hyperparams: Hyperparams::default(),
            seed: 3,
            init_from: None,
        };
        assert_eq!(
            serde_json::to_string(&req).unwrap(),
            r#"{"op":"train","job_id":"j1","train_path":"t.jsonl","val_path":"v.jsonl","hyperparams":{"learning_rate":0.0005,"batch_size":16,"max_epochs":30,"early_stop_patience":3},"seed":3,"init_from":null}"#
        );
    }

    #[test]
    fn response_shapes() {
        assert_eq!(serde_json::to_string(&Response::ack()).unwrap(), r#"{"ok":true}"#);
        assert_eq!(
            serde_json::to_string(&Response::trained("m", 50.0)).unwrap(),
            r#"{"ok":true,"model_id":"m","best_val_metric":50.0}"#
        );
        assert_eq!(
            serde_json::to_string(&Response::predicted(vec!["a".into()])).unwrap(),
            r#"{"ok":true,"outputs":["a"]}"#
        );
        assert_eq!(
            serde_json::to_string(&Response::error("UnknownModel", "nope")).unwrap(),
            r#"{"ok":false,"code":"UnknownModel","message":"nope"}"#
        );
    }

    #[test]
    fn ping_and_shutdown_messages() {
        assert_eq!(serde_json::to_string(&Request::Ping).unwrap(), r#"{"op":"ping"}"#);
        assert_eq!(
            serde_json::from_str::<Request>(r#"{"op":"shutdown"}"#).unwrap(),
            Request::Shutdown
        );
    }
}
