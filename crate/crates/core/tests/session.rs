use std::io::{BufRead, BufReader, Write};
use std::net::TcpListener;
use std::thread;
use std::time::Duration;

use skg_core::channel_sim::{simulate_scenario, ScenarioConfig};
use skg_core::keyderive::{toeplitz_extract, ToeplitzSeed};
use skg_core::pipeline::run_stages;
use skg_core::presets;
use skg_core::session::*;
use skg_core::trace_model::{FftOrdering, ProbeTrace};

fn preset_traces(name: &str, seed: u64) -> (ProbeTrace, ProbeTrace) {
    let sim = simulate_scenario(&presets::find(name).unwrap().config(seed)).unwrap();
    (sim.gnb, sim.ue)
}

fn cfg(seed: u64) -> SessionConfig {
    SessionConfig { scenario_id: format!("t{seed}"), nonce: nonce_from_seed(seed), ..SessionConfig::default() }
}

#[test]
fn agreement_on_a_los_preset() {
    let (g, u) = preset_traces("los3", 2);
    let out = run_session(&g, &u, &cfg(2)).unwrap();
    let (a, b) = (out.gnb.as_ref().unwrap(), out.ue.as_ref().unwrap());
    assert_eq!(a.key, b.key);
    assert_eq!(a.key.scenario_id, "t2");
    assert!(out.report.session.key_verified);
    assert_eq!(out.report.session.key_bits, 256);
    assert_eq!(a.ledger.leaked_bits, b.ledger.leaked_bits);
}

#[test]
fn reruns_are_identical() {
    let (g, u) = preset_traces("nlos1", 4);
    let a = run_session(&g, &u, &cfg(4)).unwrap();
    let b = run_session(&g, &u, &cfg(4)).unwrap();
    assert_eq!(a.local().key, b.local().key);
    assert_eq!(a.local().ledger, b.local().ledger);
    let c = run_session(&g, &u, &cfg(5)).unwrap();
    assert_ne!(a.local().key.key, c.local().key.key);
}

#[test]
fn tcp_matches_in_process() {
    let (g, u) = preset_traces("los1", 3);
    let local = run_session(&g, &u, &cfg(3)).unwrap();
    let remote = run_two_process(&g, &u, &cfg(3)).unwrap();
    let (lg, rg) = (local.gnb.unwrap(), remote.gnb.unwrap());
    let (lu, ru) = (local.ue.unwrap(), remote.ue.unwrap());
    assert_eq!(lg.key, rg.key);
    assert_eq!(lu.key, ru.key);
    assert_eq!(lg.ledger.leaked_bits, rg.ledger.leaked_bits);
    assert_eq!(lu.ledger.corrected_positions, ru.ledger.corrected_positions);
    assert_eq!(lu.ledger.discarded_blocks, ru.ledger.discarded_blocks);
    assert_eq!(lg.audited_bits, rg.audited_bits);
}

#[test]
fn short_trace_needs_more_probes() {
    let base = presets::find("nlos1").unwrap().config(1);
    let sim = simulate_scenario(&ScenarioConfig { duration_ms: 500, ..base }).unwrap();
    assert_eq!(sim.gnb.len(), 50);
    let err = run_session(&sim.gnb, &sim.ue, &cfg(1)).unwrap_err();
    assert!(matches!(err, SessionError::NeedsLongerTrace { .. }), "{err:?}");
    assert_eq!(err.name(), "NeedsLongerTrace");
}

#[test]
fn eavesdropper_trace_does_not_yield_the_key() {
    let base = presets::find("los5").unwrap().config(6);
    let sim = simulate_scenario(&ScenarioConfig { eavesdropper: true, ..base }).unwrap();
    let legit = run_session(&sim.gnb, &sim.ue, &cfg(6)).unwrap();
    match run_session(&sim.gnb, sim.eve.as_ref().unwrap(), &cfg(6)) {
        Ok(out) => assert_ne!(out.local().key.key, legit.local().key.key),
        Err(e) => assert!(!matches!(e, SessionError::Config(_)), "{e:?}"),
    }
}

#[test]
fn eavesdropper_guess_of_amplified_bits_is_a_coin_flip() {
    let base = presets::find("los5").unwrap().config(6);
    let sim = simulate_scenario(&ScenarioConfig { eavesdropper: true, ..base }).unwrap();
    let c = cfg(6);
    let out = run_session(&sim.gnb, &sim.ue, &c).unwrap();
    let party = out.gnb.as_ref().unwrap();
    let n = party.reconciled.len();
    let m = party.amplified_bits;
    let seed = ToeplitzSeed::from_public(&c.public_seed().for_attempt(party.attempts - 1), m, n).unwrap();
    let legit = toeplitz_extract(party.reconciled.bits(), &seed).unwrap();

    let forced = SessionConfig { forced_ordering: Some(FftOrdering::ReversedNegative), ..c };
    let tapped = prepare(&sim.gnb, sim.eve.as_ref().unwrap(), &forced).unwrap();
    let eve_bits = run_stages(&tapped.pairs, &party.subband, forced.levels, true).unwrap().ue_bits;
    let guess = toeplitz_extract(&eve_bits.bits()[..n], &seed).unwrap();
    let agree = legit.iter().zip(&guess).filter(|(a, b)| a == b).count() as f64 / m as f64;
    let sigma = 0.5 / (m as f64).sqrt();
    assert!((agree - 0.5).abs() <= 3.0 * sigma, "agreement {agree} over {m} bits");
}

#[test]
fn refused_connection() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let (g, u) = preset_traces("los3", 1);
    let err = connect_and_run(("127.0.0.1", port), &g, &u, &cfg(1)).unwrap_err();
    assert_eq!(err.name(), "ConnectionRefused");
}

#[test]
fn peer_vanishing_after_hello_is_an_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let fake = thread::spawn(move || {
        let (mut s, _) = listener.accept().unwrap();
        writeln!(s, "HELLO v1 nonce={} role=LEADER", hex::encode(nonce_from_seed(9))).unwrap();
        let mut line = String::new();
        BufReader::new(s.try_clone().unwrap()).read_line(&mut line).unwrap();
        line
    });
    let (g, u) = preset_traces("los3", 1);
    let err = connect_and_run(addr, &g, &u, &cfg(1)).unwrap_err();
    let reply = fake.join().unwrap();
    assert!(reply.starts_with("HELLO v1 nonce=") && reply.trim_end().ends_with("role=FOLLOWER"), "{reply}");
    assert!(matches!(err.name(), "TransportFailure" | "Timeout"), "{err:?}");
}

#[test]
fn silent_peer_times_out() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let hold = thread::spawn(move || {
        let (s, _) = listener.accept().unwrap();
        thread::sleep(Duration::from_millis(1500));
        drop(s);
    });
    let (g, u) = preset_traces("los3", 1);
    let c = SessionConfig { timeout: Duration::from_millis(300), ..cfg(1) };
    let err = connect_and_run(addr, &g, &u, &c).unwrap_err();
    hold.join().unwrap();
    assert_eq!(err.name(), "Timeout");
}

#[test]
fn report_serialises_with_quality_fields() {
    let (g, u) = preset_traces("los7", 2);
    let out = run_session(&g, &u, &cfg(2)).unwrap();
    let v: serde_json::Value = serde_json::to_value(&out.report).unwrap();
    for field in ["h1_per_bit", "session", "notes"] {
        assert!(v.get(field).is_some(), "missing {field}: {v}");
    }
}
