//! The HTTP API in-process: start on an ephemeral port, call each
//! endpoint once and shut down.

mod shared;

use std::collections::BTreeMap;
use std::sync::Arc;

use serde_json::{json, Value};

use fivedollar::server::{router, AppState};

fn main() -> fivedollar::Result<()> {
    let (model, resolver) = shared::trained_model();
    let state = Arc::new(AppState::new(BTreeMap::from([("maps".to_string(), model)]), resolver));

    let rt = tokio::runtime::Runtime::new().unwrap();
    let listener = rt.block_on(tokio::net::TcpListener::bind("127.0.0.1:0")).unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    rt.spawn(async move { axum::serve(listener, router(state)).await });

    let get = |path: &str| -> Value { ureq::get(&format!("{base}{path}")).call().unwrap().into_json().unwrap() };
    let post = |path: &str, body: Value| -> Value {
        match ureq::post(&format!("{base}{path}")).send_json(body) {
            Ok(r) => r.into_json().unwrap(),
            Err(ureq::Error::Status(code, r)) => json!({ "status": code, "body": r.into_json::<Value>().unwrap() }),
            Err(e) => panic!("{e}"),
        }
    };

    println!("GET /health -> {}", get("/health"));
    println!("GET /models -> {}", get("/models"));
    let g = post("/generate", json!({ "prompt": "lava with walls", "count": 2, "seed": 1 }));
    println!("POST /generate -> {} images, first grid {}", g["images"].as_array().unwrap().len(), g["images"][0]["grid"]);
    let w = post("/interpolate", json!({ "a": "grass with river", "b": "lava with walls", "steps": 4 }));
    println!("POST /interpolate -> {} frames", w["frames"].as_array().unwrap().len());
    let a = post("/arithmetic", json!({ "expr": "\"grass with river\" - \"grass\" + \"lava\"" }));
    println!("POST /arithmetic -> grid {}", a["image"]["grid"]);
    println!("POST /generate (unknown prompt) -> {}", post("/generate", json!({ "prompt": "a castle" })));
    Ok(())
}
