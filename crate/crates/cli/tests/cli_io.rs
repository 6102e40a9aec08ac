//! End-to-end behavior of the command-line surface: file formats, exit
//! codes, report contents, and SVG emission. Most cases drive the library
//! `run` entry point; a few spawn the real binary to cover argument parsing.

use std::fs;
use std::path::PathBuf;
use std::process::Command as Process;
use std::sync::atomic::{AtomicU32, Ordering};

use branchflow::flow::{Flow, Instance};
use branchflow_cli::{run, Command, DemoName, RunConfig};

fn scratch(name: &str) -> PathBuf {
    static COUNTER: AtomicU32 = AtomicU32::new(0);
    let n = COUNTER.fetch_add(1, Ordering::Relaxed);
    std::env::temp_dir().join(format!(
        "branchflow-cli-io-{}-{n}-{name}",
        std::process::id()
    ))
}

fn base_config(command: Command) -> RunConfig {
    RunConfig {
        command,
        report: None,
        svg: None,
        allow_degree4: false,
        merge_tol: None,
        tie_tol: 1e-10,
        angle_tol: 1e-6,
        seed: 42,
        samples: 10,
        labels: false,
    }
}

const TWO_TERMINALS: &str = r#"{
    "dimension": 2,
    "terminals": [
        {"id": "t1", "position": [0.0, 0.0], "mass": 4.0},
        {"id": "t2", "position": [3.0, 0.0], "mass": -4.0}
    ],
    "cost": {"type": "power", "p": 0.5}
}"#;

#[test]
fn solve_two_terminal_instance_reports_direct_edge() {
    let input = scratch("inst.json");
    let report_path = scratch("report.json");
    let svg_path = scratch("flow.svg");
    fs::write(&input, TWO_TERMINALS).unwrap();
    let mut config = base_config(Command::Solve {
        input: input.clone(),
    });
    config.report = Some(report_path.clone());
    config.svg = Some(svg_path.clone());
    assert_eq!(run(&config), 0);

    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    // Mass 4 at p = 1/2 costs 2 per unit length over distance 3.
    assert!((report["functional"].as_f64().unwrap() - 6.0).abs() < 1e-12);
    assert_eq!(report["schema_version"], "1");
    assert_eq!(report["degree_census"].as_object().unwrap().len(), 0);
    assert!(report["converged"].as_bool().unwrap());

    let svg = fs::read_to_string(&svg_path).unwrap();
    assert!(svg.starts_with("<svg"));
    assert_eq!(svg.matches("<line").count(), 1);
    assert_eq!(svg.matches("<circle").count(), 2);

    // The reported flow must itself parse and validate against the instance.
    let flow: Flow = serde_json::from_value(report["flow"].clone()).unwrap();
    let instance: Instance = serde_json::from_str(TWO_TERMINALS).unwrap();
    assert!(branchflow::flow::validate_flow(&flow, &instance)
        .unwrap()
        .is_empty());

    for p in [input, report_path, svg_path] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn malformed_inputs_exit_2_with_named_invariant() {
    // Masses not summing to zero.
    let input = scratch("imbalanced.json");
    fs::write(
        &input,
        r#"{"dimension":2,"terminals":[
            {"id":"a","position":[0.0,0.0],"mass":1.0},
            {"id":"b","position":[1.0,0.0],"mass":-0.25}
        ],"cost":{"type":"power","p":0.5}}"#,
    )
    .unwrap();
    assert_eq!(
        run(&base_config(Command::Solve {
            input: input.clone()
        })),
        2
    );
    let _ = fs::remove_file(&input);

    // Broken JSON.
    let input = scratch("broken.json");
    fs::write(&input, "{not json").unwrap();
    assert_eq!(
        run(&base_config(Command::Solve {
            input: input.clone()
        })),
        2
    );
    let _ = fs::remove_file(&input);

    // Invalid cost parameters.
    let input = scratch("badcost.json");
    fs::write(
        &input,
        r#"{"dimension":2,"terminals":[
            {"id":"a","position":[0.0,0.0],"mass":1.0},
            {"id":"b","position":[1.0,0.0],"mass":-1.0}
        ],"cost":{"type":"power","p":1.5}}"#,
    )
    .unwrap();
    assert_eq!(
        run(&base_config(Command::Solve {
            input: input.clone()
        })),
        2
    );
    let _ = fs::remove_file(&input);

    // Missing file.
    assert_eq!(
        run(&base_config(Command::Solve {
            input: scratch("absent.json")
        })),
        2
    );
}

#[test]
fn solver_cap_exits_3() {
    let terminals: Vec<String> = (0..8)
        .map(|i| {
            format!(
                r#"{{"id":"t{i}","position":[{}.0,{}.0],"mass":{}}}"#,
                i % 4,
                i / 4,
                if i == 0 { "-7.0" } else { "1.0" }
            )
        })
        .collect();
    let input = scratch("eight.json");
    fs::write(
        &input,
        format!(
            r#"{{"dimension":2,"terminals":[{}],"cost":{{"type":"power","p":0.5}}}}"#,
            terminals.join(",")
        ),
    )
    .unwrap();
    assert_eq!(
        run(&base_config(Command::Solve {
            input: input.clone()
        })),
        3
    );
    let _ = fs::remove_file(&input);
}

#[test]
fn check_flags_tampered_flow_and_exits_1() {
    let input = scratch("inst.json");
    let report_path = scratch("solve.json");
    fs::write(&input, TWO_TERMINALS).unwrap();
    let mut config = base_config(Command::Solve {
        input: input.clone(),
    });
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();

    // The solved flow checks clean.
    let flow_path = scratch("flow.json");
    fs::write(&flow_path, serde_json::to_vec(&report["flow"]).unwrap()).unwrap();
    let check = base_config(Command::Check {
        input: input.clone(),
        flow: flow_path.clone(),
    });
    assert_eq!(run(&check), 0);

    // Tampering with the edge mass breaks divergence.
    let mut flow: serde_json::Value = report["flow"].clone();
    flow["edges"][0]["mass"] = serde_json::json!(1.25);
    fs::write(&flow_path, serde_json::to_vec(&flow).unwrap()).unwrap();
    let check_report = scratch("check.json");
    let mut check = base_config(Command::Check {
        input: input.clone(),
        flow: flow_path.clone(),
    });
    check.report = Some(check_report.clone());
    assert_eq!(run(&check), 1);
    let parsed: serde_json::Value =
        serde_json::from_slice(&fs::read(&check_report).unwrap()).unwrap();
    assert!(!parsed["clean"].as_bool().unwrap());
    assert!(!parsed["violations"].as_array().unwrap().is_empty());

    // Dangling edge ids are structural: exit 2, not a violation list.
    flow["edges"][0]["u"] = serde_json::json!("ghost");
    fs::write(&flow_path, serde_json::to_vec(&flow).unwrap()).unwrap();
    let check = base_config(Command::Check {
        input: input.clone(),
        flow: flow_path.clone(),
    });
    assert_eq!(run(&check), 2);

    for p in [input, report_path, flow_path, check_report] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn solving_the_planar_star_instance_reports_degree_four() {
    let instance = branchflow::counterexamples::trapezoid_instance().unwrap();
    let input = scratch("star-inst.json");
    let report_path = scratch("star-report.json");
    fs::write(&input, serde_json::to_vec(&instance).unwrap()).unwrap();
    let mut config = base_config(Command::Solve {
        input: input.clone(),
    });
    config.allow_degree4 = true;
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert!((report["functional"].as_f64().unwrap() - 5.61).abs() < 1e-9);
    let census = report["degree_census"].as_object().unwrap();
    assert!(
        census.values().any(|d| d.as_u64() == Some(4)),
        "census {census:?}"
    );
    assert_eq!(
        report["angle_audit"]["violations"]
            .as_array()
            .unwrap()
            .len(),
        0
    );
    for p in [input, report_path] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn demo_exit_codes() {
    // Valid trapezoid certificate.
    let report_path = scratch("trap.json");
    let svg_path = scratch("trap.svg");
    let mut config = base_config(Command::Demo {
        name: DemoName::Trapezoid,
        masses: None,
        p: 0.5,
    });
    config.report = Some(report_path.clone());
    config.svg = Some(svg_path.clone());
    assert_eq!(run(&config), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert!(report["valid"].as_bool().unwrap());
    assert!((report["certificate"]["star_value"].as_f64().unwrap() - 5.61).abs() < 1e-12);
    assert!(fs::read_to_string(&svg_path).unwrap().contains("<svg"));

    // Zero pair sum rejects the hypothesis: exit 4, report still written.
    let reject_path = scratch("reject.json");
    let mut config = base_config(Command::Demo {
        name: DemoName::Simplex3d,
        masses: Some(vec![1.0, 1.0, -1.0, -1.0]),
        p: 0.5,
    });
    config.report = Some(reject_path.clone());
    assert_eq!(run(&config), 4);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&reject_path).unwrap()).unwrap();
    assert!(!report["valid"].as_bool().unwrap());
    assert!(report["rejection"]
        .as_str()
        .unwrap()
        .contains("sum to zero"));

    // Missing masses for simplex3d is an input error.
    let config = base_config(Command::Demo {
        name: DemoName::Simplex3d,
        masses: None,
        p: 0.5,
    });
    assert_eq!(run(&config), 2);

    for p in [report_path, svg_path, reject_path] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn verify_theorem_exit_codes_and_summary() {
    let report_path = scratch("theorem.json");
    let mut config = base_config(Command::VerifyTheorem);
    config.samples = 6;
    config.seed = 5;
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert_eq!(report["instances_run"], 6);
    assert!(report["max_degree_seen"].as_u64().unwrap() <= 3);
    assert!(report["all_pass"].as_bool().unwrap());
    assert_eq!(report["failures"].as_array().unwrap().len(), 0);
    let _ = fs::remove_file(&report_path);

    // Zero samples violates the precondition.
    let mut config = base_config(Command::VerifyTheorem);
    config.samples = 0;
    assert_eq!(run(&config), 2);
}

/// Guard the report schemas: consumers key on these field names.
#[test]
fn report_schemas_expose_stable_keys() {
    let input = scratch("schema-inst.json");
    let report_path = scratch("schema-report.json");
    fs::write(&input, TWO_TERMINALS).unwrap();
    let mut config = base_config(Command::Solve {
        input: input.clone(),
    });
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let solve: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    for key in [
        "schema_version",
        "command",
        "instance",
        "allow_degree4",
        "topologies_evaluated",
        "topology",
        "flow",
        "functional",
        "converged",
        "iterations",
        "competitor_gap",
        "degree_census",
        "angle_audit",
    ] {
        assert!(solve.get(key).is_some(), "solve report missing `{key}`");
    }

    let mut config = base_config(Command::VerifyTheorem);
    config.samples = 2;
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let theorem: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    for key in [
        "schema_version",
        "command",
        "seed",
        "samples",
        "instances_run",
        "max_degree_seen",
        "worst_competitor_gap",
        "angle_violations_total",
        "all_pass",
        "failures",
    ] {
        assert!(theorem.get(key).is_some(), "theorem report missing `{key}`");
    }

    let mut config = base_config(Command::Demo {
        name: DemoName::Trapezoid,
        masses: None,
        p: 0.5,
    });
    config.report = Some(report_path.clone());
    assert_eq!(run(&config), 0);
    let demo: serde_json::Value = serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    for key in [
        "schema_version",
        "command",
        "demo",
        "valid",
        "rejection",
        "certificate",
    ] {
        assert!(demo.get(key).is_some(), "demo report missing `{key}`");
    }
    for key in [
        "instance",
        "masses",
        "star_value",
        "residual",
        "diagonal_margins",
        "competitor_values",
        "consecutive",
        "star_flow",
    ] {
        assert!(
            demo["certificate"].get(key).is_some(),
            "certificate missing `{key}`"
        );
    }

    for p in [input, report_path] {
        let _ = fs::remove_file(p);
    }
}

#[test]
fn binary_argument_parsing() {
    let exe = env!("CARGO_BIN_EXE_branchflow");

    // Unknown demo name is a usage error (clap exits 2).
    let status = Process::new(exe)
        .args(["demo", "hexagon"])
        .output()
        .expect("binary runs");
    assert_eq!(status.status.code(), Some(2));

    // Negative masses parse through the comma-separated flag.
    let report_path = scratch("bin-demo.json");
    let status = Process::new(exe)
        .args([
            "demo",
            "simplex3d",
            "--masses",
            "-4,1,1,2",
            "--p",
            "0.7",
            "--report",
            report_path.to_str().unwrap(),
        ])
        .output()
        .expect("binary runs");
    assert_eq!(
        status.status.code(),
        Some(0),
        "stderr: {}",
        String::from_utf8_lossy(&status.stderr)
    );
    let report: serde_json::Value =
        serde_json::from_slice(&fs::read(&report_path).unwrap()).unwrap();
    assert!(report["valid"].as_bool().unwrap());
    let _ = fs::remove_file(&report_path);

    // Stdout report when --report is omitted.
    let input = scratch("bin-inst.json");
    fs::write(&input, TWO_TERMINALS).unwrap();
    let output = Process::new(exe)
        .args(["solve", "--input", input.to_str().unwrap()])
        .output()
        .expect("binary runs");
    assert_eq!(output.status.code(), Some(0));
    let parsed: serde_json::Value = serde_json::from_slice(&output.stdout).unwrap();
    assert_eq!(parsed["command"], "solve");
    let _ = fs::remove_file(&input);
}
