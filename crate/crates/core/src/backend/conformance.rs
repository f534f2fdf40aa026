//! Protocol conformance suite shared by `backend-check` and the tests.

use std::path::Path;

use serde::Serialize;

use super::protocol::{codes, Hyperparams, Request, Response};
use super::Transport;
use crate::prompt::{write_prompted_jsonl, PromptedExample, TaskTag};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConformanceCheck {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

const TOY: [(&str, &str); 8] = [
    ("get sentiment: The sushi was fresh. aspect: sushi", "positive"),
    ("get sentiment: Service was slow. aspect: service", "negative"),
    ("get sentiment: We ordered the soup. aspect: soup", "neutral"),
    ("get sentiment: Great wine list. aspect: wine list", "positive"),
    ("get sentiment: The bread was stale. aspect: bread", "negative"),
    ("get sentiment: Loved the dessert. aspect: dessert", "positive"),
    ("get sentiment: The room was cold. aspect: room", "negative"),
    ("get sentiment: Friendly staff. aspect: staff", "positive"),
];

fn toy(range: std::ops::Range<usize>) -> Vec<PromptedExample> {
    TOY[range]
        .iter()
        .enumerate()
        .map(|(i, (input, target))| PromptedExample {
            input_text: (*input).into(),
            target_text: (*target).into(),
            origin_id: format!("toy-{i}"),
            task: TaskTag::Alsc,
        })
        .collect()
}

fn train_request(job_id: &str, dir: &Path, seed: u64, init_from: Option<String>) -> Request {
    Request::Train {
        job_id: job_id.into(),
        train_path: dir.join("toy-train.jsonl").to_string_lossy().into_owned(),
        val_path: dir.join("toy-val.jsonl").to_string_lossy().into_owned(),
        hyperparams: Hyperparams::default(),
        seed,
        init_from,
    }
}

fn describe(r: &Result<Response, super::GatewayError>) -> String {
    match r {
        Ok(resp) => serde_json::to_string(resp).unwrap_or_default(),
        Err(e) => e.to_string(),
    }
}

/// Drive ping, train, predict, the error shapes and shutdown through a
/// transport. Toy data is written into `workdir`.
pub fn run_conformance(transport: &mut dyn Transport, workdir: &Path) -> std::io::Result<Vec<ConformanceCheck>> {
    write_prompted_jsonl(&toy(0..6), std::fs::File::create(workdir.join("toy-train.jsonl"))?)?;
    write_prompted_jsonl(&toy(6..8), std::fs::File::create(workdir.join("toy-val.jsonl"))?)?;
    let mut checks = Vec::new();
    let mut check =
        |name: &'static str, passed: bool, detail: String| checks.push(ConformanceCheck { name, passed, detail });

    let r = transport.call(&Request::Ping);
    check("ping", matches!(&r, Ok(resp) if resp.ok), describe(&r));

    let r = transport.call(&train_request("conformance-1", workdir, 1, None));
    let model = match &r {
        Ok(Response {
            ok: true,
            model_id: Some(id),
            best_val_metric: Some(m),
            ..
        }) if !id.is_empty() && m.is_finite() => Some(id.clone()),
        _ => None,
    };
    check("train", model.is_some(), describe(&r));

    if let Some(id) = &model {
        let inputs: Vec<String> = TOY[5..8].iter().map(|(i, _)| (*i).to_string()).collect();
        let r = transport.call(&Request::Predict {
            model_id: id.clone(),
            inputs,
        });
        let ok = matches!(&r, Ok(Response { ok: true, outputs: Some(o), .. }) if o.len() == 3);
        check("predict returns one output per input", ok, describe(&r));

        let r = transport.call(&Request::Predict {
            model_id: id.clone(),
            inputs: vec![],
        });
        let ok = matches!(&r, Ok(Response { ok: true, outputs: Some(o), .. }) if o.is_empty());
        check("predict on empty input", ok, describe(&r));

        let r = transport.call(&train_request("conformance-2", workdir, 1, Some(id.clone())));
        let ok = matches!(&r, Ok(Response { ok: true, model_id: Some(child), .. }) if child != id);
        check("chained train yields a new model", ok, describe(&r));
    }

    let r = transport.call(&Request::Predict {
        model_id: "conformance-no-such-model".into(),
        inputs: vec!["x".into()],
    });
    let ok = matches!(&r, Ok(Response { ok: false, code: Some(c), message: Some(_), .. }) if c == codes::UNKNOWN_MODEL);
    check("unknown model error shape", ok, describe(&r));

    let r = transport.call(&train_request(
        "conformance-3",
        workdir,
        1,
        Some("conformance-no-such-model".into()),
    ));
    let ok = matches!(
        &r,
        Ok(Response {
            ok: false,
            code: Some(_),
            message: Some(_),
            ..
        })
    );
    check("unknown init_from is rejected", ok, describe(&r));

    let r = transport.call(&Request::Shutdown);
    check("shutdown", matches!(&r, Ok(resp) if resp.ok), describe(&r));
    Ok(checks)
}
