//! Classify one text against a real OpenAI-compatible server.
//!
//! ARIIHA_ENDPOINT=http://localhost:8000/v1 ARIIHA_MODEL=Qwen/Qwen2.5-7B-Instruct \
//!     cargo run --example http_backend -- "they should all go back"
//!
//! ARIIHA_API_KEY is sent as a bearer token when set.

use ariiha::llm::{classify, BackendConfig, PromptTemplate};

fn main() {
    let Ok(endpoint) = std::env::var("ARIIHA_ENDPOINT") else {
        eprintln!("set ARIIHA_ENDPOINT (and optionally ARIIHA_MODEL, ARIIHA_API_KEY) to run this example");
        eprintln!("e.g. start vLLM with `vllm serve Qwen/Qwen2.5-7B-Instruct` and use http://localhost:8000/v1");
        return;
    };
    let text = std::env::args()
        .nth(1)
        .unwrap_or_else(|| "they should all go back".into());
    let config = BackendConfig::Http {
        endpoint,
        model: std::env::var("ARIIHA_MODEL").unwrap_or_else(|_| "Qwen/Qwen2.5-7B-Instruct".into()),
        max_tokens: 256,
        retries: 3,
        timeout_secs: 60,
    };
    let template = PromptTemplate::default();
    let result = config.build(&template.label_lexicon, 0).and_then(|backend| {
        println!("backend: {}", backend.identity());
        classify(
            backend.as_ref(),
            &template.render_prompt(&[], &text),
            &template.label_lexicon,
        )
    });
    match result {
        Ok(out) => println!("{}\n-> {}", out.rationale, out.label),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
