use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use helpgrid_core::agents::AgentProfile;
use helpgrid_core::clarify::LoopConfig;
use helpgrid_core::corpus::{generate_synthetic, index_by_id, Episode};
use helpgrid_core::help::{HelpContext, HelpKind, HelpPayload};
use helpgrid_core::GridBounds;
use helpgrid_service::session::{AnswerRequest, CreateRequest, EpisodeSelector, HelpRequest};
use helpgrid_service::{Phase, ServiceConfig, SessionError, SessionManager};

fn corpus() -> Vec<Episode> {
    generate_synthetic(9, 40, &[], GridBounds::default())
}

fn manager_with(config: ServiceConfig) -> SessionManager {
    SessionManager::new(ServiceConfig {
        corpus: Arc::new(index_by_id(&corpus())),
        ..config
    })
}

fn manager() -> SessionManager {
    manager_with(ServiceConfig::default())
}

fn pick(pred: impl Fn(&Episode) -> bool) -> Episode {
    corpus().into_iter().find(|e| pred(e)).expect("corpus has a matching episode")
}

fn request(ep: &Episode) -> CreateRequest {
    CreateRequest {
        episode: Some(EpisodeSelector::Corpus { corpus_id: ep.id.clone() }),
        ..Default::default()
    }
}

fn clarify_on(kinds: &[HelpKind], threshold: f64) -> Option<LoopConfig> {
    Some(LoopConfig {
        threshold,
        help_kinds: kinds.to_vec(),
        ..Default::default()
    })
}

#[test]
fn create_assigns_distinct_ids_and_starts_awaiting_step() {
    let m = manager();
    let ep = pick(|_| true);
    let a = m.create(request(&ep)).unwrap();
    let b = m.create(request(&ep)).unwrap();
    assert_ne!(a.id, b.id);
    assert_eq!(a.phase, Phase::AwaitingStep);
    assert_eq!(a.episode_id, ep.id);
    assert!(a.prediction.is_none());
    assert_eq!(m.get(&a.id).unwrap(), a);
}

#[test]
fn unknown_episode_and_session_are_reported() {
    let m = manager();
    let err = m
        .create(CreateRequest {
            episode: Some(EpisodeSelector::Corpus { corpus_id: "nope".into() }),
            ..Default::default()
        })
        .unwrap_err();
    assert!(matches!(err, SessionError::UnknownEpisode(_)));
    assert!(matches!(m.get("s999"), Err(SessionError::NotFound(_))));
    assert!(matches!(m.create(CreateRequest::default()), Err(SessionError::BadRequest(_))));
}

#[test]
fn synthetic_selector_is_deterministic() {
    let m = manager();
    let sel = || CreateRequest {
        episode: Some(EpisodeSelector::Synthetic { synthetic_seed: 5, index: 3 }),
        ..Default::default()
    };
    let a = m.create(sel()).unwrap();
    let b = m.create(sel()).unwrap();
    assert_eq!(a.episode_id, b.episode_id);
    assert_eq!(a.grid_before, b.grid_before);
    let sa = m.step(&a.id).unwrap();
    let sb = m.step(&b.id).unwrap();
    assert_eq!(sa.prediction, sb.prediction);
}

#[test]
fn step_without_loop_waits_for_help_and_blocks_match_utterance() {
    let m = manager();
    let ep = pick(|_| true);
    let v = m.create(request(&ep)).unwrap();
    let v = m.step(&v.id).unwrap();
    assert_eq!(v.phase, Phase::AwaitingHelp);
    assert!(v.question.is_none());
    let p = v.prediction.unwrap();
    let parsed = helpgrid_core::codec::parse_detailed(&p.utterance, ep.bounds()).diff;
    assert_eq!(parsed, p.blocks);
}

#[test]
fn length_help_yields_exact_count() {
    let m = manager();
    let ep = pick(|e| e.gold.added().len() == 3 && e.gold.removed().is_empty());
    let id = m.create(request(&ep)).unwrap().id;
    m.step(&id).unwrap();
    let v = m
        .provide_help(
            &id,
            HelpRequest {
                text: Some("You should place 3 blocks.".into()),
                skip: false,
            },
        )
        .unwrap();
    assert_eq!(v.phase, Phase::Done);
    assert_eq!(v.help.as_ref().unwrap().kind(), HelpKind::Length);
    let fin = v.final_prediction.unwrap();
    assert_eq!(fin.blocks.added().len(), 3);
    assert_eq!(v.score.unwrap().help_followed, Some(true));
}

#[test]
fn unrecognized_help_keeps_phase_and_skip_finishes() {
    let m = manager();
    let ep = pick(|_| true);
    let id = m.create(request(&ep)).unwrap().id;
    m.step(&id).unwrap();
    for text in ["", "the weather is nice"] {
        let err = m
            .provide_help(&id, HelpRequest { text: Some(text.into()), skip: false })
            .unwrap_err();
        assert!(matches!(err, SessionError::Unrecognized { .. }), "{text:?}: {err:?}");
        assert_eq!(m.get(&id).unwrap().phase, Phase::AwaitingHelp);
    }
    let v = m.provide_help(&id, HelpRequest { text: None, skip: true }).unwrap();
    assert_eq!(v.phase, Phase::Done);
    assert!(v.help.is_none());
    assert_eq!(v.final_prediction, v.prediction);
    assert_eq!(v.score.unwrap().help_followed, None);
    let err = m.step(&id).unwrap_err();
    assert!(matches!(
        err,
        SessionError::WrongPhase { expected: Phase::AwaitingStep, actual: Phase::Done }
    ));
}

#[test]
fn negative_threshold_always_asks_and_checks_answer_kind() {
    let m = manager();
    let ep = pick(|e| e.gold.added().len() >= 2 && e.gold.removed().is_empty());
    let id = m
        .create(CreateRequest {
            clarify: clarify_on(&[HelpKind::Length], -1.0),
            ..request(&ep)
        })
        .unwrap()
        .id;
    let v = m.step(&id).unwrap();
    assert_eq!(v.phase, Phase::AwaitingClarificationAnswer);
    assert_eq!(v.question.as_deref(), Some("How many blocks should I place?"));
    assert!(matches!(m.provide_help(&id, HelpRequest::default()), Err(SessionError::WrongPhase { .. })));

    let err = m
        .answer(&id, AnswerRequest { text: "You made 2 mistakes.".into() })
        .unwrap_err();
    match err {
        SessionError::KindMismatch { expected, got } => {
            assert_eq!(expected, HelpKind::Length);
            assert_eq!(got, HelpKind::Mistake);
        }
        other => panic!("expected a kind mismatch, got {other:?}"),
    }
    assert_eq!(m.get(&id).unwrap().phase, Phase::AwaitingClarificationAnswer);

    let n = ep.gold.added().len();
    let v = m
        .answer(&id, AnswerRequest { text: format!("You should place {n} blocks.") })
        .unwrap();
    assert_eq!(v.phase, Phase::Done);
    let placed = v.final_prediction.unwrap().blocks.added().len();
    if n > 5 {
        assert!(placed > 5);
    } else {
        assert_eq!(placed, n);
    }
    let trace = m.trace(&id).unwrap();
    let lt = trace.loop_trace.unwrap();
    assert_eq!(lt.chosen, Some(HelpKind::Length));
    assert!(lt.answer.is_some());
}

#[test]
fn infinite_threshold_never_asks() {
    let m = manager();
    let ep = pick(|_| true);
    let id = m
        .create(CreateRequest {
            clarify: clarify_on(&HelpKind::ALL, f64::INFINITY),
            ..request(&ep)
        })
        .unwrap()
        .id;
    let v = m.step(&id).unwrap();
    assert_eq!(v.phase, Phase::AwaitingHelp);
    assert!(v.clarify_enabled);
    assert!(v.question.is_none());
}

#[test]
fn idle_sessions_expire() {
    let now = Arc::new(Mutex::new(Instant::now()));
    let clock = {
        let now = now.clone();
        Arc::new(move || *now.lock().unwrap())
    };
    let m = manager_with(ServiceConfig {
        idle_timeout: Duration::from_secs(60),
        clock,
        ..Default::default()
    });
    let id = m.create(request(&pick(|_| true))).unwrap().id;
    *now.lock().unwrap() += Duration::from_secs(30);
    m.step(&id).unwrap();
    *now.lock().unwrap() += Duration::from_secs(61);
    let err = m.provide_help(&id, HelpRequest { text: None, skip: true }).unwrap_err();
    assert!(matches!(err, SessionError::Expired));
    assert_eq!(m.get(&id).unwrap().phase, Phase::Expired);
}

#[test]
fn finished_sessions_are_logged() {
    let dir = tempfile::tempdir().unwrap();
    let m = manager_with(ServiceConfig {
        trace_dir: Some(dir.path().join("traces")),
        ..Default::default()
    });
    let ep = pick(|_| true);
    for _ in 0..2 {
        let id = m.create(request(&ep)).unwrap().id;
        m.step(&id).unwrap();
        m.provide_help(&id, HelpRequest { text: None, skip: true }).unwrap();
    }
    let log = std::fs::read_to_string(dir.path().join("traces/sessions.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = log.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    assert_eq!(lines.len(), 2);
    assert_eq!(lines[0]["episode_id"], ep.id.as_str());
    assert_eq!(lines[0]["phase"], "done");
    assert_ne!(lines[0]["session_id"], lines[1]["session_id"]);
}

#[test]
fn oracle_agent_reproduces_gold() {
    let m = manager();
    let ep = pick(|_| true);
    let id = m
        .create(CreateRequest {
            agent: Some(AgentProfile::oracle()),
            ..request(&ep)
        })
        .unwrap()
        .id;
    let v = m.step(&id).unwrap();
    assert_eq!(v.prediction.unwrap().blocks, ep.gold);
    let v = m.provide_help(&id, HelpRequest { text: None, skip: true }).unwrap();
    assert_eq!(v.score.unwrap().distance, 0.0);
}

#[test]
fn region_answer_confines_final_blocks() {
    let m = manager();
    let ctx = HelpContext::default();
    for ep in corpus().iter().take(15) {
        let id = m
            .create(CreateRequest {
                clarify: clarify_on(&[HelpKind::Restrictive], -1.0),
                ..request(ep)
            })
            .unwrap()
            .id;
        let v = m.step(&id).unwrap();
        assert_eq!(v.question.as_deref(), Some("What quadrant should the block be placed in?"));
        let answer = ctx.oracle(HelpKind::Restrictive, &ep.gold, None, 1).unwrap();
        let v = m.answer(&id, AnswerRequest { text: answer.utterance.clone() }).unwrap();
        let HelpPayload::Restrictive { region } = &answer.payload else {
            unreachable!()
        };
        let fin = v.final_prediction.unwrap();
        assert!(!fin.blocks.added().is_empty());
        for &b in fin.blocks.added() {
            assert!(ctx.scheme.contains(region, b, ep.bounds()), "{}: {b:?} outside {}", ep.id, region.name);
        }
        assert_eq!(v.score.unwrap().help_followed, Some(true));
    }
}

#[test]
fn replaying_requests_on_a_fresh_manager_reproduces_responses() {
    let play = || {
        let m = manager();
        let mut views = Vec::new();
        for (i, ep) in corpus().iter().take(6).enumerate() {
            let clarify = (i % 2 == 0).then(LoopConfig::default);
            let v = m.create(CreateRequest { clarify, ..request(ep) }).unwrap();
            let id = v.id.clone();
            views.push(v);
            let v = m.step(&id).unwrap();
            let done = if v.phase == Phase::AwaitingClarificationAnswer {
                m.answer(&id, AnswerRequest { text: "Place 2 blocks.".into() })
            } else {
                m.provide_help(&id, HelpRequest { text: Some("Move it to the left.".into()), skip: false })
            };
            views.push(v);
            views.push(done.unwrap_or_else(|_| m.get(&id).unwrap()));
        }
        serde_json::to_string(&views).unwrap()
    };
    assert_eq!(play(), play());
}
