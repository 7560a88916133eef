use std::fs::OpenOptions;
use std::io::Write;

use freezekit::log::{read_jsonl, to_jsonl_string, write_csv, SessionStatus, SubjectKind};
use freezekit::protocol::{make_schedule, Condition, Group, Phase, TaskConfig, TrialPos};
use freezekit::report::{analyze, AnalysisOptions};
use freezekit_platform::service::{
    Awaiting, ChoiceRequest, ConfidenceRequest, CreateRequest, ExportFilter, SessionService, SessionView,
};
use freezekit_platform::store::Store;
use freezekit_platform::PlatformError;
use tempfile::TempDir;

fn service(dir: &TempDir) -> SessionService {
    SessionService::with_seed(Store::open(dir.path()).unwrap(), 42).unwrap()
}

fn preset(name: &str) -> CreateRequest {
    CreateRequest {
        preset: Some(name.into()),
        ..CreateRequest::default()
    }
}

fn pick(i: usize) -> i64 {
    // A fixed, irregular choice pattern.
    ((i * 7 + i / 3) % 5 < 2) as i64
}

/// Plays a session to the end, rating every probe, and returns the final view.
fn play(svc: &SessionService, id: &str) -> SessionView {
    let mut i = 0;
    loop {
        let view = svc.view(id).unwrap();
        match view.awaiting {
            Awaiting::Complete => return view,
            Awaiting::Confidence => {
                svc.submit_confidence(
                    id,
                    ConfidenceRequest {
                        rating: 1 + (i % 7) as i64,
                        ..ConfidenceRequest::default()
                    },
                )
                .unwrap();
            }
            Awaiting::Choice => {
                let d = view.directive.unwrap();
                svc.submit_choice(
                    id,
                    ChoiceRequest {
                        choice: pick(i),
                        rt_ms: Some(350 + i as i64),
                        phase: Some(d.phase),
                        trial_index: Some(d.trial_index),
                        ..ChoiceRequest::default()
                    },
                )
                .unwrap();
                i += 1;
            }
        }
    }
}

fn code(err: PlatformError) -> (u16, String) {
    (err.status(), err.code().to_string())
}

#[test]
fn full_prompt_session_is_valid_and_replays() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let view = svc.create(preset("exp3_high")).unwrap();
    assert_eq!(view.status, SessionStatus::Created);
    assert_eq!(view.experiment_condition, Condition::MetacognitivePrompt);
    let done = play(&svc, &view.session_id);
    assert_eq!(done.status, SessionStatus::Complete);
    assert_eq!(done.trials_completed, 60);

    let log = svc.export_session(&view.session_id).unwrap();
    log.validate().unwrap();
    assert_eq!(log.subject, SubjectKind::Human);
    let probed: Vec<u32> = log.main_trials().filter(|t| t.probe_shown).map(|t| t.trial_index).collect();
    assert_eq!(probed, (1..=16).map(|k| 3 * k).collect::<Vec<_>>());
    assert!(log.main_trials().all(|t| t.probe_shown == t.confidence.is_some()));
    let prompted: Vec<u32> = log.main_trials().filter(|t| t.prompt_shown).map(|t| t.trial_index).collect();
    assert_eq!(prompted, vec![5, 10, 15, 20, 25, 30, 35, 40, 45, 50]);

    // Re-simulating the stored schedule with the logged choices reproduces every outcome.
    let schedule = make_schedule(&log.config).unwrap();
    for t in &log.trials {
        assert_eq!(Some(schedule.outcome(t.pos(), t.choice).unwrap()), t.outcome);
    }
    let report = analyze(std::slice::from_ref(&log), &AnalysisOptions::default()).unwrap();
    assert!(report.cells[0].baseline.win_stay.is_some_and(f64::is_finite));
}

#[test]
fn preset_sets_practice_probability_and_group() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let id = svc.create(preset("exp1_high")).unwrap().session_id;
    let log = svc.export_session(&id).unwrap();
    assert_eq!(log.config.practice_reward_prob, 0.9);
    assert_eq!(log.group, Group::High);
    let first = svc.view(&id).unwrap().directive.unwrap();
    assert_eq!((first.phase, first.trial_index), (Phase::Practice, 1));
}

#[test]
fn unknown_preset_lists_presets() {
    let dir = TempDir::new().unwrap();
    let err = service(&dir).create(preset("exp9")).unwrap_err();
    assert_eq!((err.status(), err.code()), (400, "unknown_preset"));
    let listed = err.body().details["presets"].as_array().unwrap().len();
    assert_eq!(listed, TaskConfig::preset_names().len());
}

#[test]
fn invalid_inline_config_lists_fields() {
    let dir = TempDir::new().unwrap();
    let config = TaskConfig {
        main_trials: 0,
        confidence_probe_interval: 0,
        ..TaskConfig::default()
    };
    let err = service(&dir)
        .create(CreateRequest {
            config: Some(config),
            ..CreateRequest::default()
        })
        .unwrap_err();
    assert_eq!(err.status(), 422);
    let fields: Vec<String> = err.body().details["fields"]
        .as_array()
        .unwrap()
        .iter()
        .map(|f| f["field"].as_str().unwrap().to_string())
        .collect();
    assert!(fields.contains(&"main_trials".to_string()), "{fields:?}");
    assert!(fields.contains(&"confidence_probe_interval".to_string()), "{fields:?}");
}

#[test]
fn sessions_are_isolated() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let a = svc.create(preset("exp1_normal")).unwrap().session_id;
    let b = svc.create(preset("exp1_normal")).unwrap().session_id;
    assert_ne!(a, b);
    let la = svc.export_session(&a).unwrap();
    let lb = svc.export_session(&b).unwrap();
    assert_ne!(la.config.seed, lb.config.seed);
    assert_ne!(make_schedule(&la.config).unwrap(), make_schedule(&lb.config).unwrap());
}

#[test]
fn probe_blocks_the_next_choice() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let id = svc.create(preset("exp1_high")).unwrap().session_id;
    for _ in 0..10 {
        svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
    }
    // practice trial 10 carries the practice probe
    let v = svc.view(&id).unwrap();
    assert_eq!(v.awaiting, Awaiting::Confidence);
    assert!(v.directive.unwrap().show_confidence_probe);
    let err = svc.submit_choice(&id, ChoiceRequest::default()).unwrap_err();
    assert_eq!(code(err), (409, "protocol_violation".into()));

    let err = svc
        .submit_confidence(
            &id,
            ConfidenceRequest {
                rating: 0,
                ..ConfidenceRequest::default()
            },
        )
        .unwrap_err();
    assert_eq!(code(err), (422, "invalid_config".into()));
    let ack = svc
        .submit_confidence(
            &id,
            ConfidenceRequest {
                rating: 4,
                ..ConfidenceRequest::default()
            },
        )
        .unwrap();
    assert_eq!((ack.phase, ack.trial_index, ack.rating), (Phase::Practice, 10, 4));
    assert_eq!(ack.state.awaiting, Awaiting::Choice);
    let d = ack.state.directive.unwrap();
    assert_eq!((d.phase, d.trial_index), (Phase::Main, 1));
    assert_eq!(svc.export_session(&id).unwrap().trials[9].confidence, Some(4));

    // no probe pending now
    let err = svc
        .submit_confidence(
            &id,
            ConfidenceRequest {
                rating: 4,
                ..ConfidenceRequest::default()
            },
        )
        .unwrap_err();
    assert_eq!(code(err), (409, "protocol_violation".into()));
}

#[test]
fn out_of_order_and_invalid_choices() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let id = svc.create(preset("exp1_high")).unwrap().session_id;
    let ahead = ChoiceRequest {
        phase: Some(Phase::Practice),
        trial_index: Some(2),
        ..ChoiceRequest::default()
    };
    assert_eq!(code(svc.submit_choice(&id, ahead).unwrap_err()).0, 409);
    let bad = ChoiceRequest {
        choice: 2,
        rt_ms: Some(-1),
        ..ChoiceRequest::default()
    };
    let msg = svc.submit_choice(&id, bad).unwrap_err().to_string();
    assert!(msg.contains("choice") && msg.contains("rt_ms"), "{msg}");
    assert_eq!(code(svc.view("missing").unwrap_err()), (404, "not_found".into()));
    assert_eq!(svc.view(&id).unwrap().trials_completed, 0);
}

#[test]
fn idempotent_retry_returns_original_response() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let id = svc.create(preset("exp2_high")).unwrap().session_id;
    let req = ChoiceRequest {
        choice: 1,
        rt_ms: Some(500),
        idempotency_key: Some("k1".into()),
        ..ChoiceRequest::default()
    };
    let first = svc.submit_choice(&id, req.clone()).unwrap();
    svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
    let again = svc.submit_choice(&id, req).unwrap();
    assert_eq!(first, again);
    assert_eq!(svc.export_session(&id).unwrap().trials.len(), 2);
}

#[test]
fn restart_replays_state_and_keys() {
    let dir = TempDir::new().unwrap();
    let (id, before, first) = {
        let svc = service(&dir);
        let id = svc.create(preset("exp2_normal")).unwrap().session_id;
        let req = ChoiceRequest {
            idempotency_key: Some("a".into()),
            ..ChoiceRequest::default()
        };
        let first = svc.submit_choice(&id, req).unwrap();
        for i in 1..14 {
            let v = svc.view(&id).unwrap();
            if v.awaiting == Awaiting::Confidence {
                let r = ConfidenceRequest {
                    rating: 5,
                    ..ConfidenceRequest::default()
                };
                svc.submit_confidence(&id, r).unwrap();
            }
            let r = ChoiceRequest {
                choice: pick(i),
                ..ChoiceRequest::default()
            };
            svc.submit_choice(&id, r).unwrap();
        }
        (id.clone(), svc.export_session(&id).unwrap(), first)
    };
    let svc = service(&dir);
    assert_eq!(svc.export_session(&id).unwrap(), before);
    let req = ChoiceRequest {
        idempotency_key: Some("a".into()),
        ..ChoiceRequest::default()
    };
    assert_eq!(svc.submit_choice(&id, req).unwrap(), first);
    let done = play(&svc, &id);
    assert_eq!(done.status, SessionStatus::Complete);
}

#[test]
fn torn_final_line_is_discarded() {
    let dir = TempDir::new().unwrap();
    let id = {
        let svc = service(&dir);
        let id = svc.create(preset("exp1_high")).unwrap().session_id;
        svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
        id
    };
    let path = dir.path().join(format!("{id}.jsonl"));
    let mut f = OpenOptions::new().append(true).open(&path).unwrap();
    f.write_all(b"{\"type\":\"choice\",\"rec").unwrap();
    drop(f);
    let svc = service(&dir);
    assert_eq!(svc.export_session(&id).unwrap().trials.len(), 1);
    svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
    let svc = service(&dir);
    assert_eq!(svc.export_session(&id).unwrap().trials.len(), 2);
}

#[test]
fn tampered_outcome_fails_replay() {
    let dir = TempDir::new().unwrap();
    let id = {
        let svc = service(&dir);
        let id = svc.create(preset("exp1_high")).unwrap().session_id;
        svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
        id
    };
    let path = dir.path().join(format!("{id}.jsonl"));
    let text = std::fs::read_to_string(&path).unwrap();
    let flipped = if text.contains("\"outcome\":\"win\"") {
        text.replace("\"outcome\":\"win\"", "\"outcome\":\"loss\"")
    } else {
        text.replace("\"outcome\":\"loss\"", "\"outcome\":\"win\"")
    };
    std::fs::write(&path, flipped).unwrap();
    let err = SessionService::with_seed(Store::open(dir.path()).unwrap(), 42).err().unwrap();
    assert_eq!(err.code(), "malformed_log");
}

#[test]
fn export_round_trip_and_filters() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let h = svc.create(preset("exp1_high")).unwrap().session_id;
    let n = svc.create(preset("exp2_normal")).unwrap().session_id;
    play(&svc, &h);
    for _ in 0..4 {
        svc.submit_choice(&n, ChoiceRequest::default()).unwrap();
    }

    let all = svc.export(&ExportFilter::default());
    assert_eq!(all.len(), 2);
    let text = to_jsonl_string(&all);
    let back = read_jsonl(text.as_bytes()).unwrap();
    assert_eq!(to_jsonl_string(&back), text);
    let mut csv = Vec::new();
    write_csv(&all, &mut csv).unwrap();
    let rows = String::from_utf8(csv).unwrap().lines().count() - 1;
    assert_eq!(rows, 64);

    let highs = svc.export(&ExportFilter::parse("group:high").unwrap());
    assert_eq!(highs.len(), 1);
    assert_eq!(highs[0].session_id, h);
    let f = ExportFilter::parse(&format!("session:{n},status:in_progress")).unwrap();
    assert_eq!(svc.export(&f).len(), 1);
    let none = ExportFilter::parse("condition:metacognitive_prompt").unwrap();
    assert!(svc.export(&none).is_empty());
    assert!(ExportFilter::parse("colour:red").is_err());
    assert!(ExportFilter::parse("group:tall").is_err());
}

#[test]
fn trajectory_payload_follows_history() {
    let dir = TempDir::new().unwrap();
    let svc = service(&dir);
    let id = svc.create(preset("exp2_high")).unwrap().session_id;
    let mut outcomes = Vec::new();
    for _ in 0..10 {
        let r = svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
        outcomes.push(r.outcome);
    }
    svc.submit_confidence(
        &id,
        ConfidenceRequest {
            rating: 3,
            ..ConfidenceRequest::default()
        },
    )
    .unwrap();
    let mut main = Vec::new();
    for _ in 0..12 {
        let r = svc.submit_choice(&id, ChoiceRequest::default()).unwrap();
        main.push(r.outcome);
        if r.probe_pending {
            let c = ConfidenceRequest {
                rating: 3,
                ..ConfidenceRequest::default()
            };
            svc.submit_confidence(&id, c).unwrap();
        }
    }
    let d = svc.view(&id).unwrap().directive.unwrap();
    assert_eq!(d.pos(), TrialPos::new(Phase::Main, 13));
    assert_eq!(d.trajectory_payload.unwrap(), main[2..].to_vec());
    assert!(svc.export_session(&id).unwrap().trials.iter().all(|t| t.trajectory_shown));
}
