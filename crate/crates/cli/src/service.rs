//! HTTP completion service.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use axum::extract::rejection::JsonRejection;
use axum::extract::State;
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value as JsonValue};

use gdimpute_core::diffusion::{ImputerModel, SampleSet};
use gdimpute_core::metrics;
use gdimpute_core::rng;
use gdimpute_core::schema::{FeatureSpec, PartialDesign, Value};

pub const MAX_SAMPLES: usize = 1000;
pub const HISTOGRAM_BINS: usize = 10;

pub struct AppState {
    model: Arc<ImputerModel>,
    version: String,
    rng: Mutex<rng::Rng>,
}

impl AppState {
    /// `version` identifies the loaded checkpoint (its digest); `seed` drives seeds for requests without one.
    pub fn new(model: ImputerModel, version: impl Into<String>, seed: u64) -> Self {
        AppState {
            model: Arc::new(model),
            version: version.into(),
            rng: Mutex::new(rng::seeded(seed)),
        }
    }

    fn next_seed(&self) -> u64 {
        self.rng.lock().unwrap_or_else(|p| p.into_inner()).random()
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/v1/complete", post(complete))
        .route("/v1/schema", get(schema))
        .route("/v1/health", get(health))
        .with_state(state)
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CompletionRequest {
    /// Feature name → value; absent or null means missing.
    #[serde(default)]
    pub values: Map<String, JsonValue>,
    #[serde(default = "default_k")]
    pub k: usize,
    pub seed: Option<u64>,
}

fn default_k() -> usize {
    10
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FeatureSummary {
    Numeric {
        mean: f64,
        min: f64,
        max: f64,
        /// Equal-width bins over the schema range.
        bin_edges: Vec<f64>,
        counts: Vec<usize>,
    },
    Categorical {
        mode: String,
        counts: BTreeMap<String, usize>,
    },
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct CompletionResponse {
    pub model_version: String,
    pub seed: u64,
    pub k: usize,
    pub missing: Vec<String>,
    pub completions: Vec<BTreeMap<String, JsonValue>>,
    pub summary: BTreeMap<String, FeatureSummary>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warning: Option<String>,
}

fn error(status: StatusCode, message: impl Into<String>, field: Option<&str>) -> Response {
    let mut body = json!({ "error": message.into() });
    if let Some(f) = field {
        body["field"] = json!(f);
    }
    (status, Json(body)).into_response()
}

fn internal(detail: impl std::fmt::Display) -> Response {
    let id = format!("{:016x}", rand::rng().random::<u64>());
    eprintln!("internal error {id}: {detail}");
    (
        StatusCode::INTERNAL_SERVER_ERROR,
        Json(json!({ "error": "internal error", "id": id })),
    )
        .into_response()
}

fn parse_value(f: &FeatureSpec, raw: &JsonValue) -> Result<Value, String> {
    let v = match raw {
        JsonValue::Null => return Ok(Value::Missing),
        JsonValue::Number(n) if f.is_numeric() => Value::Num(n.as_f64().ok_or("not a finite number")?),
        JsonValue::String(s) if !f.is_numeric() => Value::Cat(s.clone()),
        _ if f.is_numeric() => return Err("expected a number".into()),
        _ => return Err("expected a category label string".into()),
    };
    f.check_value(&v)?;
    Ok(v)
}

fn to_json(v: &Value) -> JsonValue {
    match v {
        Value::Num(x) => json!(x),
        Value::Cat(c) => json!(c),
        Value::Missing => JsonValue::Null,
    }
}

fn summarize(f: &FeatureSpec, values: &[Value]) -> FeatureSummary {
    let counts = metrics::histogram(f, values, HISTOGRAM_BINS);
    match (f.range(), f.categories()) {
        (Some((lo, hi)), _) => {
            let xs: Vec<f64> = values.iter().filter_map(Value::as_num).collect();
            FeatureSummary::Numeric {
                mean: xs.iter().sum::<f64>() / xs.len() as f64,
                min: xs.iter().copied().fold(f64::INFINITY, f64::min),
                max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
                bin_edges: (0..=HISTOGRAM_BINS)
                    .map(|b| lo + (hi - lo) * b as f64 / HISTOGRAM_BINS as f64)
                    .collect(),
                counts,
            }
        }
        (None, Some(cats)) => {
            let best = counts.iter().enumerate().fold(0, |b, (i, &c)| if c > counts[b] { i } else { b });
            FeatureSummary::Categorical {
                mode: cats[best].clone(),
                counts: cats.iter().cloned().zip(counts).collect(),
            }
        }
        (None, None) => unreachable!("feature is numeric or categorical"),
    }
}

fn respond(state: &AppState, set: &SampleSet, seed: u64, k: usize) -> CompletionResponse {
    let schema = state.model.schema();
    let mut summary = BTreeMap::new();
    for &j in &set.missing {
        let f = schema.feature(j);
        let values: Vec<Value> = set.values(j).cloned().collect();
        summary.insert(f.name.clone(), summarize(f, &values));
    }
    CompletionResponse {
        model_version: state.version.clone(),
        seed,
        k,
        missing: set.missing.iter().map(|&j| schema.feature(j).name.clone()).collect(),
        completions: set
            .draws
            .iter()
            .map(|d| {
                schema
                    .features()
                    .iter()
                    .zip(d.values())
                    .map(|(f, v)| (f.name.clone(), to_json(v)))
                    .collect()
            })
            .collect(),
        summary,
        warning: None,
    }
}

async fn complete(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CompletionRequest>, JsonRejection>,
) -> Response {
    let Json(req) = match body {
        Ok(b) => b,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.body_text(), None),
    };
    if req.k == 0 || req.k > MAX_SAMPLES {
        return error(
            StatusCode::BAD_REQUEST,
            format!("k must lie in 1..={MAX_SAMPLES}"),
            Some("k"),
        );
    }
    let schema = state.model.schema().clone();
    let mut values = vec![Value::Missing; schema.len()];
    for (name, raw) in &req.values {
        let Some(j) = schema.index_of(name) else {
            return error(StatusCode::BAD_REQUEST, format!("unknown feature '{name}'"), Some(name));
        };
        match parse_value(schema.feature(j), raw) {
            Ok(v) => values[j] = v,
            Err(m) => {
                return error(StatusCode::BAD_REQUEST, format!("feature '{name}': {m}"), Some(name))
            }
        }
    }
    let partial = match PartialDesign::new(&schema, values) {
        Ok(p) => p,
        Err(e) => return error(StatusCode::BAD_REQUEST, e.to_string(), None),
    };
    let seed = req.seed.unwrap_or_else(|| state.next_seed());
    let k = req.k;
    let worker = state.clone();
    let result = tokio::task::spawn_blocking(move || {
        let set = worker.model.sample(&partial, k, seed).map_err(|e| e.to_string())?;
        Ok::<_, String>(respond(&worker, &set, seed, k))
    })
    .await;
    match result {
        Ok(Ok(mut resp)) => {
            if resp.missing.is_empty() && k > 1 {
                resp.warning = Some(
                    "every feature is observed; the completions are identical copies".into(),
                );
                (StatusCode::UNPROCESSABLE_ENTITY, Json(resp)).into_response()
            } else {
                Json(resp).into_response()
            }
        }
        Ok(Err(e)) => internal(e),
        Err(e) => internal(e),
    }
}

async fn schema(State(state): State<Arc<AppState>>) -> Response {
    let graph = state.model.graph();
    let schema = graph.schema();
    let mut body: JsonValue = match serde_json::from_str(&schema.to_json()) {
        Ok(v) => v,
        Err(e) => return internal(e),
    };
    let groups: Vec<JsonValue> = schema
        .components()
        .iter()
        .enumerate()
        .map(|(c, name)| {
            json!({
                "name": name,
                "features": schema
                    .component_features(c)
                    .iter()
                    .map(|&j| schema.feature(j).name.clone())
                    .collect::<Vec<_>>(),
            })
        })
        .collect();
    body["groups"] = json!(groups);
    body["edges"] = json!(graph
        .edge_names()
        .into_iter()
        .map(|(a, b)| [a, b])
        .collect::<Vec<_>>());
    Json(body).into_response()
}

async fn health(State(state): State<Arc<AppState>>) -> Response {
    Json(json!({
        "status": "ok",
        "model_version": state.version,
        "features": state.model.schema().len(),
        "trained": state.model.is_trained(),
    }))
    .into_response()
}
