mod common;

use std::sync::{Arc, Mutex};
use std::time::{Duration, Instant};

use common::{gateway, gateway_with};
use costgate::adapter::mock::{MockConfig, MockRule};
use costgate::gateway::{ProxyRequest, ProxyResponse};
use costgate::service::ServiceBindings;
use costgate::trace::CallRole;
use costgate::{Error, ServiceType, TokenUsage, Usd};

fn chat(user: &str, query: &str, st: ServiceType) -> ProxyRequest {
    ProxyRequest::new(user, "s1", query, st)
}

fn check_conservation(resp: &ProxyResponse) {
    let m = &resp.metadata;
    let usd: Usd = m.component_trace.iter().map(|c| c.cost_usd).sum();
    let usage: TokenUsage = m.component_trace.iter().map(|c| c.usage).sum();
    assert_eq!(m.cost.usd, usd);
    assert_eq!((m.cost.input_tokens, m.cost.output_tokens), (usage.input_tokens, usage.output_tokens));
    assert_eq!(m.duration_ms, m.component_trace.iter().map(|c| c.duration_ms).sum::<u64>());
}

#[tokio::test]
async fn every_service_type_populates_metadata() {
    let gw = gateway(MockConfig::default());
    for st in ServiceType::NAMED {
        for q in ["first question here", "second question there"] {
            let resp = gw.coordinator.handle(chat(st.name(), q, st.clone())).await.unwrap();
            let m = &resp.metadata;
            assert!(!resp.answer.is_empty());
            assert!(gw.coordinator.catalog().contains(&m.model_used), "{}", m.model_used);
            assert_eq!(m.service_type_effective, st);
            assert!(!m.component_trace.is_empty());
            assert!(m.persisted);
            check_conservation(&resp);

            let rec = gw.coordinator.get_request(&resp.request_id).unwrap();
            assert_eq!(rec.model_id, m.model_used);
            assert_eq!(rec.metadata["total_cost_usd"], m.cost.usd.to_string());
            assert_eq!(rec.metadata["cache_hit"], m.cache_hit.to_string());
            let answering = m.component_trace.iter().rev().find(|c| c.role.is_chat_answer() || c.role == CallRole::CacheAnswer);
            assert_eq!(rec.cost_usd, answering.map(|c| c.cost_usd).unwrap_or(Usd::ZERO));
        }
        gw.coordinator.wait_prefetch(st.name()).await;
    }
}

#[tokio::test]
async fn named_policies_pick_their_models_and_context() {
    let gw = gateway(MockConfig::default());
    for i in 0..6 {
        gw.coordinator
            .handle(chat("u", &format!("warmup {i}"), ServiceType::OptCost))
            .await
            .unwrap();
    }
    let q = gw.coordinator.handle(chat("u", "quality", ServiceType::OptQuality)).await.unwrap();
    assert_eq!((q.metadata.model_used.as_str(), q.metadata.context_messages_used), ("gpt-4o", 6));
    let c = gw.coordinator.handle(chat("u", "cheap", ServiceType::OptCost)).await.unwrap();
    assert_eq!((c.metadata.model_used.as_str(), c.metadata.context_messages_used), ("titan-text-lite", 0));
    let m = gw.coordinator.handle(chat("u", "select", ServiceType::ModelSelector)).await.unwrap();
    assert_eq!(m.metadata.context_messages_used, 5);
    assert_eq!(m.metadata.escalated, Some(false));
    assert_eq!(m.metadata.model_used, "gpt-3.5-turbo");
}

#[tokio::test]
async fn low_verifier_score_escalates() {
    let gw = gateway(MockConfig::default().rule(MockRule::exact("hard one").verifier_score(3)));
    let r = gw.coordinator.handle(chat("u", "hard one", ServiceType::ModelSelector)).await.unwrap();
    assert_eq!(r.metadata.escalated, Some(true));
    assert_eq!(r.metadata.model_used, "gpt-4");
    let roles: Vec<CallRole> = r.metadata.component_trace.iter().map(|c| c.role).collect();
    assert_eq!(roles, [CallRole::Candidate, CallRole::Verifier, CallRole::Escalation]);
    check_conservation(&r);
}

#[tokio::test]
async fn explicit_model_overrides_and_reports_custom() {
    let gw = gateway(MockConfig::default());
    let mut req = chat("u", "hi", ServiceType::OptCost);
    req.explicit_model = Some("claude-3-opus".into());
    let r = gw.coordinator.handle(req).await.unwrap();
    assert_eq!(r.metadata.model_used, "claude-3-opus");
    assert!(matches!(r.metadata.service_type_effective, ServiceType::Custom(_)));

    let mut req = chat("u", "hi", ServiceType::OptCost);
    req.explicit_model = Some("gpt-9".into());
    assert!(matches!(gw.coordinator.handle(req).await, Err(Error::CatalogMiss(_))));
}

#[tokio::test]
async fn regeneration_supersedes_without_mutation() {
    let gw = gateway(MockConfig::default());
    let first = gw.coordinator.handle(chat("u", "one", ServiceType::OptCost)).await.unwrap();
    let second = gw.coordinator.handle(chat("u", "two", ServiceType::OptCost)).await.unwrap();
    let before = gw.coordinator.get_request(&first.request_id).unwrap();

    let mut regen = ProxyRequest::regenerate("u", "s1", &first.request_id, ServiceType::OptQuality);
    regen.explicit_model = Some("gpt-4".into());
    let redo = gw.coordinator.handle(regen).await.unwrap();
    assert_eq!(redo.metadata.regenerated_from.as_deref(), Some(first.request_id.as_str()));
    assert_eq!(redo.metadata.context_messages_used, 0);
    assert_eq!(redo.metadata.model_used, "gpt-4");
    assert!(!redo.metadata.cache_hit);

    assert_eq!(gw.coordinator.get_request(&first.request_id).unwrap(), before);
    let new_rec = gw.coordinator.get_request(&redo.request_id).unwrap();
    assert_eq!(new_rec.supersedes.as_deref(), Some(first.request_id.as_str()));
    assert_eq!(new_rec.query, "one");

    let session = gw.coordinator.session("u", "s1").unwrap();
    assert_eq!(session.len(), 3);
    assert_eq!(session[0].superseded_by.as_deref(), Some(redo.request_id.as_str()));
    assert!(session[1].superseded_by.is_none());
    assert_eq!(session[1].record.request_id, second.request_id);

    // the regenerated answer replaces the original in later context
    let next = gw.coordinator.handle(chat("u", "three", ServiceType::OptQuality)).await.unwrap();
    assert_eq!(next.metadata.context_messages_used, 2);

    let bad = ProxyRequest::regenerate("u", "s1", "missing", ServiceType::OptCost);
    assert!(matches!(gw.coordinator.handle(bad).await, Err(Error::NotFound(_))));
    let other_user = ProxyRequest::regenerate("v", "s1", &first.request_id, ServiceType::OptCost);
    assert!(matches!(gw.coordinator.handle(other_user).await, Err(Error::NotFound(_))));
}

#[tokio::test]
async fn tapped_followup_is_an_exact_cache_hit() {
    let cfg = MockConfig::default().rule(MockRule::exact("tell me about rust").followups(&[
        "What is ownership?",
        "What is borrowing?",
        "What are lifetimes?",
    ]));
    let gw = gateway(cfg);
    let r = gw
        .coordinator
        .handle(chat("u", "tell me about rust", ServiceType::SmartCache))
        .await
        .unwrap();
    assert_eq!(r.metadata.followups.len(), 3);
    assert_eq!(r.metadata.component_trace.iter().filter(|c| c.role == CallRole::Followups).count(), 1);

    gw.coordinator.wait_prefetch("u").await;
    gw.mock.reset();
    let tap = gw
        .coordinator
        .handle(chat("u", "What is borrowing?", ServiceType::SmartCache))
        .await
        .unwrap();
    assert!(tap.metadata.cache_hit);
    assert!(tap.metadata.component_trace.is_empty());
    assert!(tap.metadata.followups.is_empty());
    assert_eq!(gw.mock.calls_for("chat"), 0);
    assert_eq!(tap.metadata.cost.usd, Usd::ZERO);
    check_conservation(&tap);
}

#[tokio::test]
async fn unpersisted_requests_leave_no_history() {
    let gw = gateway(MockConfig::default());
    let mut req = chat("u", "ephemeral", ServiceType::OptQuality);
    req.update_context = false;
    let r = gw.coordinator.handle(req).await.unwrap();
    assert!(!r.metadata.persisted);
    assert!(gw.coordinator.session("u", "s1").unwrap().is_empty());
    assert!(matches!(gw.coordinator.get_request(&r.request_id), Err(Error::NotFound(_))));
}

#[tokio::test]
async fn invalid_requests_are_rejected() {
    let gw = gateway(MockConfig::default());
    assert!(matches!(
        gw.coordinator.handle(chat("u", "   ", ServiceType::OptCost)).await,
        Err(Error::BadRequest(_))
    ));
    assert!(matches!(
        gw.coordinator.handle(ProxyRequest::new("", "s", "q", ServiceType::OptCost)).await,
        Err(Error::BadRequest(_))
    ));
}

#[tokio::test]
async fn failed_escalation_serves_the_cheap_candidate() {
    let cfg = MockConfig {
        failing_models: vec!["gpt-4".into()],
        default_verifier_score: 1,
        ..MockConfig::default()
    };
    let gw = gateway(cfg);
    let r = gw.coordinator.handle(chat("u", "q", ServiceType::ModelSelector)).await.unwrap();
    assert!(r.metadata.degraded);
    assert_eq!(r.metadata.model_used, "gpt-3.5-turbo");
    assert!(!r.metadata.notes.is_empty());
    check_conservation(&r);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn per_user_order_is_arrival_order() {
    let delays = [90u64, 5, 40, 0, 60];
    let mut cfg = MockConfig::default();
    for (i, d) in delays.iter().enumerate() {
        cfg = cfg.rule(MockRule::exact(&format!("q{i}")).delay_ms(*d));
    }
    let gw = gateway(cfg);
    let done = Arc::new(Mutex::new(Vec::new()));
    let mut tasks = Vec::new();
    for i in 0..delays.len() {
        let pending = gw.coordinator.enqueue(chat("u", &format!("q{i}"), ServiceType::OptCost)).unwrap();
        let done = done.clone();
        tasks.push(tokio::spawn(async move {
            pending
                .run_then(|_| done.lock().unwrap().push(i))
                .await
                .unwrap();
        }));
    }
    for t in tasks {
        t.await.unwrap();
    }
    assert_eq!(*done.lock().unwrap(), [0, 1, 2, 3, 4]);
    let order: Vec<String> = gw
        .coordinator
        .session("u", "s1")
        .unwrap()
        .into_iter()
        .map(|e| e.record.query)
        .collect();
    assert_eq!(order, ["q0", "q1", "q2", "q3", "q4"]);
}

#[tokio::test(flavor = "multi_thread", worker_threads = 4)]
async fn users_do_not_block_each_other() {
    let cfg = MockConfig::default().rule(MockRule::exact("slow").delay_ms(400));
    let gw = gateway(cfg);
    let slow = {
        let c = gw.coordinator.clone();
        tokio::spawn(async move { c.handle(chat("a", "slow", ServiceType::OptCost)).await })
    };
    tokio::time::sleep(Duration::from_millis(20)).await;
    let started = Instant::now();
    gw.coordinator.handle(chat("b", "fast", ServiceType::OptCost)).await.unwrap();
    assert!(started.elapsed() < Duration::from_millis(300));
    assert!(!slow.is_finished());
    slow.await.unwrap().unwrap();
}

#[tokio::test]
async fn queue_bound_rejects_excess_requests() {
    let gw = gateway_with(MockConfig::default(), ServiceBindings::default(), 2);
    let a = gw.coordinator.enqueue(chat("u", "a", ServiceType::OptCost)).unwrap();
    let _b = gw.coordinator.enqueue(chat("u", "b", ServiceType::OptCost)).unwrap();
    assert!(matches!(
        gw.coordinator.enqueue(chat("u", "c", ServiceType::OptCost)),
        Err(Error::QueueFull(_))
    ));
    assert!(gw.coordinator.enqueue(chat("v", "d", ServiceType::OptCost)).is_ok());
    a.run().await.unwrap();
    assert!(gw.coordinator.enqueue(chat("u", "e", ServiceType::OptCost)).is_ok());
}
