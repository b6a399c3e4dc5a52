use serde_json::{json, Value};

use crate::config::{CONTROLLERS, GRID_CHECKS, INCOMPATIBLE_POLICIES, SAMPLE_REGIONS, SYSTEMS};

fn num() -> Value {
    json!({"type": "number"})
}

fn vector() -> Value {
    json!({"type": "array", "items": {"type": "number"}})
}

fn counts() -> Value {
    json!({"type": "array", "items": {"type": "integer", "minimum": 1}})
}

fn object(properties: Value, required: &[&str]) -> Value {
    json!({
        "type": "object",
        "additionalProperties": false,
        "required": required,
        "properties": properties,
    })
}

/// JSON Schema (draft 2020-12) of the experiment configuration.
pub fn schema() -> Value {
    let mut root = object(
        json!({
            "name": {"type": "string", "description": "defaults to the config file stem"},
            "system": {"enum": SYSTEMS},
            "bump": object(json!({
                "lambda_cutoff": num(),
                "wclf_infeasible_x1": num(),
            }), &[]),
            "barrier": object(json!({
                "kind": {"enum": ["bump_half_plane", "unicycle_heading_disk"]},
                "delta": num(),
                "gamma": num(),
                "active_tol": num(),
            }), &[]),
            "controller": object(json!({
                "kind": {"enum": CONTROLLERS},
                "epsilon": num(),
                "alpha0": num(),
                "c_bar": num(),
                "lambda": num(),
                "hysteresis": num(),
                "w_scale": num(),
                "b": num(),
                "on_incompatible": {"enum": INCOMPATIBLE_POLICIES},
            }), &[]),
            "sim": object(json!({
                "dt": num(),
                "horizon": num(),
                "origin_tol": num(),
                "record_every": {"type": "integer", "minimum": 1},
            }), &[]),
            "initial_states": {"type": "array", "items": vector()},
            "random_initial_states": {"oneOf": [{"type": "null"}, object(json!({
                "count": {"type": "integer", "minimum": 0},
                "lower": vector(),
                "upper": vector(),
                "region": {"enum": SAMPLE_REGIONS},
            }), &["count", "lower", "upper"])]},
            "grids": {"type": "array", "items": object(json!({
                "name": {"type": "string"},
                "check": {"enum": GRID_CHECKS},
                "lower": vector(),
                "upper": vector(),
                "resolution": counts(),
                "boundary_band": num(),
                "c_bar": num(),
                "level_step": num(),
                "u_bound": num(),
                "estimate_alpha0": {"type": "boolean"},
            }), &["check", "lower", "upper", "resolution"])},
            "region_scan": {"oneOf": [{"type": "null"}, object(json!({
                "lower": vector(),
                "upper": vector(),
                "resolution": counts(),
                "slice": vector(),
                "u_bound": num(),
            }), &["lower", "upper", "resolution"])]},
            "output_dir": {"type": "string"},
            "seed": {"type": "integer", "minimum": 0},
        }),
        &["system"],
    );
    let map = root.as_object_mut().expect("object");
    map.insert(
        "$schema".into(),
        json!("https://json-schema.org/draft/2020-12/schema"),
    );
    map.insert("title".into(), json!("barrier-stab experiment"));
    root
}
