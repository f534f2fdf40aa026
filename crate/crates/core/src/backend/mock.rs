//! Deterministic stand-in for a trainer backend.
//!
//! Training memorizes every (input -> target) pair, inheriting the memory
//! of the `init_from` model, and records the majority target of the job's
//! own training set. Prediction returns the memorized target when the input
//! was seen; otherwise the first active skill rule whose pattern matches;
//! otherwise the majority target; otherwise `"neutral"`.
//!
//! A skill rule is active for a model when its `trained_on` pattern (if
//! any) matched some training input anywhere in the model's lineage, and
//! its `seed_modulus` (if any) accepts the job seed. This lets tests script
//! aux-task and seed dependent behaviour without any randomness.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::protocol::{codes, Handler, Request, Response};
use crate::digest::sha256_hex;
use crate::prompt::{read_prompted_jsonl, PromptedExample};

/// Prediction when nothing was trained.
pub const UNTRAINED_FALLBACK: &str = "neutral";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillRule {
    /// Regex matched against the prediction input.
    pub pattern: String,
    pub output: String,
    /// Regex that some training input in the lineage must match.
    #[serde(default)]
    pub trained_on: Option<String>,
    /// `[m, r]`: active only when `seed % m == r`.
    #[serde(default)]
    pub seed_modulus: Option<(u64, u64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SkillProfile {
    pub rules: Vec<SkillRule>,
}

impl SkillProfile {
    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        serde_json::from_str(&text).map_err(|e| format!("{}: {e}", path.display()))
    }
}

struct CompiledRule {
    pattern: Regex,
    output: String,
    trained_on: Option<Regex>,
    seed_modulus: Option<(u64, u64)>,
}

#[derive(Clone)]
struct MockModel {
    memory: HashMap<String, String>,
    majority: Option<String>,
    /// Rules whose `trained_on` condition has been met somewhere in the lineage.
    learned: Vec<bool>,
    seed: u64,
}

pub struct MockBackend {
    rules: Vec<CompiledRule>,
    models: HashMap<String, MockModel>,
}

fn compile(pattern: &str) -> Result<Regex, String> {
    Regex::new(pattern).map_err(|e| format!("bad pattern {pattern:?}: {e}"))
}

impl MockBackend {
    pub fn new(profile: Option<SkillProfile>) -> Result<Self, String> {
        let rules = profile
            .unwrap_or_default()
            .rules
            .into_iter()
            .map(|r| {
                if let Some((m, _)) = r.seed_modulus {
                    if m == 0 {
                        return Err("seed_modulus divisor must be positive".to_string());
                    }
                }
                Ok(CompiledRule {
                    pattern: compile(&r.pattern)?,
                    output: r.output,
                    trained_on: r.trained_on.as_deref().map(compile).transpose()?,
                    seed_modulus: r.seed_modulus,
                })
            })
            .collect::<Result<_, _>>()?;
        Ok(Self {
            rules,
            models: HashMap::new(),
        })
    }

    fn load(path: &str) -> Result<Vec<PromptedExample>, Response> {
        let file = std::fs::File::open(path).map_err(|e| Response::error(codes::DATASET, format!("{path}: {e}")))?;
        read_prompted_jsonl(std::io::BufReader::new(file))
            .map_err(|e| Response::error(codes::DATASET, format!("{path}: {e}")))
    }

    fn predict_one(&self, model: &MockModel, input: &str) -> String {
        if let Some(t) = model.memory.get(input) {
            return t.clone();
        }
        let active = self.rules.iter().zip(&model.learned).find(|(rule, learned)| {
            let lineage_ok = rule.trained_on.is_none() || **learned;
            let seed_ok = rule.seed_modulus.is_none_or(|(m, r)| model.seed % m == r);
            lineage_ok && seed_ok && rule.pattern.is_match(input)
        });
        if let Some((rule, _)) = active {
            return rule.output.clone();
        }
        model.majority.clone().unwrap_or_else(|| UNTRAINED_FALLBACK.to_string())
    }

    fn train(&mut self, request: &Request) -> Result<Response, Response> {
        let Request::Train {
            train_path,
            val_path,
            seed,
            init_from,
            ..
        } = request
        else {
            return Err(Response::error(codes::BAD_REQUEST, "not a train request"));
        };
        let mut model =
            match init_from {
                Some(id) => self.models.get(id).cloned().ok_or_else(|| {
                    Response::error(codes::UNKNOWN_INIT_MODEL, format!("unknown init_from model {id}"))
                })?,
                None => MockModel {
                    memory: HashMap::new(),
                    majority: None,
                    learned: vec![false; self.rules.len()],
                    seed: *seed,
                },
            };
        model.seed = *seed;

        let train = Self::load(train_path)?;
        let val = Self::load(val_path)?;
        let mut tally: BTreeMap<&str, usize> = BTreeMap::new();
        for ex in &train {
            model.memory.insert(ex.input_text.clone(), ex.target_text.clone());
            *tally.entry(ex.target_text.as_str()).or_default() += 1;
            for (rule, learned) in self.rules.iter().zip(model.learned.iter_mut()) {
                if let Some(re) = &rule.trained_on {
                    *learned |= re.is_match(&ex.input_text);
                }
            }
        }
        // Ties resolve to the lexicographically smallest label.
        model.majority = tally
            .iter()
            .fold(None::<(&str, usize)>, |best, (&label, &n)| match best {
                Some((_, bn)) if bn >= n => best,
                _ => Some((label, n)),
            })
            .map(|(l, _)| l.to_string());

        let metric = if val.is_empty() {
            0.0
        } else {
            let correct = val
                .iter()
                .filter(|ex| self.predict_one(&model, &ex.input_text).trim() == ex.target_text.trim())
                .count();
            100.0 * correct as f64 / val.len() as f64
        };

        let canonical = serde_json::to_vec(request).unwrap_or_default();
        let model_id = format!("mock-{}", &sha256_hex(&canonical)[..16]);
        self.models.insert(model_id.clone(), model);
        Ok(Response::trained(model_id, metric))
    }
}

impl Handler for MockBackend {
    fn handle(&mut self, request: Request) -> Response {
        match &request {
            Request::Train { .. } => self.train(&request).unwrap_or_else(|e| e),
            Request::Predict { model_id, inputs } => match self.models.get(model_id) {
                Some(model) => Response::predicted(inputs.iter().map(|i| self.predict_one(model, i)).collect()),
                None => Response::error(codes::UNKNOWN_MODEL, format!("unknown model {model_id}")),
            },
            Request::Ping | Request::Shutdown => Response::ack(),
        }
    }
}
