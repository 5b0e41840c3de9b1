//! Minimal blocking client for a running `pipekeeper serve`.

use anyhow::{anyhow, Context};
use serde_json::Value;

use crate::api::TOKEN_ENV;

fn token() -> anyhow::Result<String> {
    std::env::var(TOKEN_ENV).with_context(|| format!("{TOKEN_ENV} is not set"))
}

fn url(base: &str, path: &str) -> String {
    format!("{}{}", base.trim_end_matches('/'), path)
}

fn decode(res: Result<ureq::Response, ureq::Error>) -> anyhow::Result<Value> {
    match res {
        Ok(r) => Ok(r.into_json()?),
        Err(ureq::Error::Status(code, r)) => {
            let body: Value = r.into_json().unwrap_or(Value::Null);
            let msg = body["message"].as_str().unwrap_or("request failed");
            Err(anyhow!("server answered {code}: {msg}"))
        }
        Err(e) => Err(anyhow!(e)),
    }
}

pub fn get(base: &str, path: &str) -> anyhow::Result<Value> {
    let auth = format!("Bearer {}", token()?);
    decode(ureq::get(&url(base, path)).set("authorization", &auth).call())
}

pub fn post(base: &str, path: &str, body: &Value) -> anyhow::Result<Value> {
    let auth = format!("Bearer {}", token()?);
    decode(ureq::post(&url(base, path)).set("authorization", &auth).send_json(body.clone()))
}
