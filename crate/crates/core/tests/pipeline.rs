use gam_core::memorizer::{render_memory, MemorizerConfig};
use gam_core::researcher::Termination;
use gam_core::{
    Engine, EngineSettings, OutputFormat, Request, ScriptRule, ScriptedBackend, Session,
};

fn chunk_rules() -> Vec<ScriptRule> {
    let mut rules = vec![ScriptRule::pattern("^TASK: HEADER", "(no prior context)")];
    for i in 0..10 {
        rules.push(ScriptRule::pattern(
            &format!("^TASK: MEMORIZE.*## New session chunk\\s+topic{i} "),
            format!("memo about topic {i}"),
        ));
    }
    rules
}

#[test]
fn ten_chunks_give_ten_memos_in_order() {
    let backend = ScriptedBackend::new(chunk_rules());
    let settings = EngineSettings {
        memorizer: MemorizerConfig {
            page_size: 4,
            ..MemorizerConfig::default()
        },
        ..EngineSettings::default()
    };
    let mut engine = Engine::new(settings);
    let content: String = (0..10)
        .map(|i| format!("topic{i} alpha beta gamma. "))
        .collect();
    let ids = engine.ingest(&Session::new(0, content), &backend).unwrap();
    assert_eq!(ids.len(), 10);
    let texts: Vec<_> = engine
        .state
        .memory
        .memos()
        .iter()
        .map(|m| m.text.as_str())
        .collect();
    let expected: Vec<String> = (0..10).map(|i| format!("memo about topic {i}")).collect();
    assert_eq!(texts, expected);
    assert_eq!(backend.call_count(), 20);
}

#[test]
fn ingest_persist_reload_research() {
    let backend = ScriptedBackend::new(vec![
        ScriptRule::pattern("^TASK: HEADER", "household chat"),
        ScriptRule::pattern("^TASK: MEMORIZE.*dog", "Alice owns a dog."),
        ScriptRule::pattern("^TASK: MEMORIZE", "small talk"),
        ScriptRule::pattern(
            "^TASK: PLAN",
            r#"{"calls":[{"tool":"bm25","query":"dog name"}]}"#,
        ),
        ScriptRule::pattern(
            "^TASK: INTEGRATE.*Rex",
            r#"{"text":"Alice's dog is named Rex.","cited":[0]}"#,
        ),
        ScriptRule::pattern("^TASK: REFLECT", r#"{"sufficient":true}"#),
    ]);
    let dir = tempfile::tempdir().unwrap();
    let mut engine = Engine::new(EngineSettings::default());
    engine
        .ingest(
            &Session::new(0, "Alice adopted a dog; the dog name is Rex."),
            &backend,
        )
        .unwrap();
    engine
        .ingest(&Session::new(1, "We chatted about the weather."), &backend)
        .unwrap();
    engine.save(dir.path()).unwrap();

    let mut reloaded = Engine::load(dir.path(), EngineSettings::default()).unwrap();
    assert_eq!(
        render_memory(&reloaded.state.memory),
        render_memory(&engine.state.memory)
    );
    reloaded.settings.research.output_format = OutputFormat::IntegrationWithPage;
    let out = reloaded
        .research(&Request::new("What is the dog's name?"), &backend)
        .unwrap();
    assert_eq!(out.trace.termination, Termination::Sufficient);
    assert!(out.context.starts_with("Alice's dog is named Rex."));
    assert!(out.context.contains("the dog name is Rex"));
}
