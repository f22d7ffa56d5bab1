//! Builds clients from a TOML backend config, shows retry on scripted
//! failures and the response cache.
//!
//!     cargo run --example client

use std::sync::Arc;

use normalign::client::{BackendRegistry, ChatClient, ClientConfig, DiskCache, RetryPolicy, ScriptEntry, ScriptedChat};

const CONFIG: &str = r#"
[[backend]]
name = "judge"
kind = "mock"
script = "toy/mocks/match.jsonl"

[[backend]]
name = "live"
kind = "chat"
base_url = "https://openrouter.ai/api/v1"
model = "mistralai/mistral-small-3.2-24b-instruct"
api_key_env = "NORMALIGN_KEY_OPENROUTER"

[stages]
match = "judge"
"#;

fn main() {
    let dir = tempfile::tempdir().unwrap();
    let config = ClientConfig::parse(CONFIG, env!("CARGO_MANIFEST_DIR").into()).unwrap();
    let cache = Arc::new(DiskCache::new(dir.path().join("cache")));
    let registry = BackendRegistry::new(config, Some(cache.clone()));

    let backend = registry.stage_backend("match", None).unwrap();
    let judge = registry.chat(&backend, "match").unwrap();
    let req = judge.request("Solution A: Tal med Finn\nSolution B: Tal med Pia\n");
    let first = judge.complete(&req).unwrap();
    let second = judge.complete(&req).unwrap();
    println!("{} -> {}", judge.model_ref(), first.text);
    println!("cached on second call: {}", second.cached);

    match registry.chat("live", "respond") {
        Ok(_) => println!("live backend ready"),
        Err(e) => println!("live backend unavailable: {e}"),
    }

    let flaky = ScriptedChat::new("mock:flaky", vec![ScriptEntry::fallback("ok").with_failures(vec![429, 503, 0])]);
    let client = ChatClient::new(Arc::new(flaky)).with_retry(RetryPolicy::immediate(5));
    let c = client.complete(&client.request("hello")).unwrap();
    println!("after three transient failures: {:?}", c.text);
}
