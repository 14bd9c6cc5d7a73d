mod common;

use serde_json::{json, Value};
use vrvs_core::sim::scenario::{generate_scale_scenario, load_scenario, ScaleParams, SimSettings};

use common::{bundled_scenarios, scenarios_dir};

fn schema() -> Value {
    let text = std::fs::read_to_string(scenarios_dir().join("scenario.schema.json")).unwrap();
    serde_json::from_str(&text).unwrap()
}

fn validator() -> jsonschema::Validator {
    jsonschema::validator_for(&schema()).expect("the schema compiles")
}

#[test]
fn bundled_scenarios_conform() {
    let v = validator();
    for (name, text) in bundled_scenarios() {
        let doc: Value = serde_json::from_str(&text).unwrap();
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
        assert!(errors.is_empty(), "{name}: {errors:#?}");
    }
}

#[test]
fn generated_and_reserialized_scenarios_conform() {
    let v = validator();
    let scale = generate_scale_scenario(&ScaleParams::default());
    let doc: Value = serde_json::from_str(&scale.to_json()).unwrap();
    assert!(v.is_valid(&doc));
    for (name, text) in bundled_scenarios() {
        let s = load_scenario(&text).unwrap();
        let doc: Value = serde_json::from_str(&s.to_json()).unwrap();
        let errors: Vec<String> = v.iter_errors(&doc).map(|e| format!("{} at {}", e, e.instance_path())).collect();
        assert!(errors.is_empty(), "{name} reserialized: {errors:#?}");
    }
}

#[test]
fn documented_settings_defaults_match() {
    let schema = schema();
    let props = schema["$defs"]["settings"]["properties"].as_object().unwrap();
    let defaults = serde_json::to_value(SimSettings::default()).unwrap();
    let defaults = defaults.as_object().unwrap();
    let documented: std::collections::BTreeSet<&String> = props.keys().collect();
    let actual: std::collections::BTreeSet<&String> = defaults.keys().collect();
    assert_eq!(documented, actual);
    for (key, value) in defaults {
        let doc = &props[key]["default"];
        let same = match (doc.as_f64(), value.as_f64()) {
            (Some(a), Some(b)) => a == b,
            _ => doc == value,
        };
        assert!(same, "settings.{key}: schema says {doc}, loader uses {value}");
    }
}

#[test]
fn schema_and_loader_reject_the_same_shapes() {
    let v = validator();
    let base = json!({"seed": 1, "duration_ms": 100, "reflectors": [{"id": 1}, {"id": 2}],
        "links": [{"a": 1, "b": 2, "latency_ms": 5}], "clients": [{"id": 1, "reflector": 1, "rooms": [1]}]});
    assert!(v.is_valid(&base));
    assert!(load_scenario(&base.to_string()).is_ok());

    let broken = [
        json!({"seed": 1, "reflectors": []}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [], "extra": true}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 0}]}),
        json!({"seed": -1, "duration_ms": 10, "reflectors": []}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [], "settings": {"alpha": 0}}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [], "settings": {"k_miss": 0}}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 1}, {"id": 2}],
            "links": [{"a": 1, "b": 2, "latency_ms": 5, "loss": 1.5}]}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 1}],
            "events": [{"at_ms": 1, "action": "explode", "reflector": 1}]}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 1}],
            "events": [{"at_ms": 1, "action": "kill_reflector", "reflector": 1, "force": true}]}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 1}],
            "events": [{"action": "heal"}]}),
        json!({"seed": 1, "duration_ms": 10, "reflectors": [{"id": 1}],
            "events": [{"at_ms": 1, "action": "chair", "room": 1, "control": {"op": "mute_audio"}}]}),
    ];
    for doc in broken {
        assert!(!v.is_valid(&doc), "schema accepts {doc}");
        assert!(load_scenario(&doc.to_string()).is_err(), "loader accepts {doc}");
    }
}
