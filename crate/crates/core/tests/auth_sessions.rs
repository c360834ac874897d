//! Session identifiers and both authentication modes under an injected clock.

use std::collections::HashSet;
use std::net::IpAddr;
use std::time::Duration;

use hdb_core::auth::{hash_password_with, new_session_id, AuthMode, HashCost, SessionStore, UserEntry, Validation};
use hdb_core::{Clock, ManualClock};

fn users() -> Vec<UserEntry> {
    vec![UserEntry::new("nicos", hash_password_with("pw", HashCost::TEST).unwrap(), "hdb_owner", "owner-pw")]
}

fn peer(s: &str) -> IpAddr {
    s.parse().unwrap()
}

fn clock() -> ManualClock {
    ManualClock::new("2007-08-24T14:22:40Z".parse().unwrap())
}

fn valid(v: Validation) -> bool {
    matches!(v, Validation::Valid(_))
}

#[test]
fn ten_thousand_ids_are_unique_and_well_formed() {
    let shape = |id: &str| {
        let parts: Vec<&str> = id.split('-').collect();
        parts.len() == 4
            && parts.iter().all(|p| p.len() == 4 && p.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b)))
    };
    let mut seen = HashSet::new();
    for _ in 0..10_000 {
        let id = new_session_id().unwrap();
        assert!(shape(&id), "{id}");
        assert!(seen.insert(id));
    }
}

#[test]
fn idle_sessions_expire_and_activity_resets_the_timer() {
    let c = clock();
    let store = SessionStore::new(AuthMode::SessionIdle { timeout: Duration::from_secs(2) }, users());
    let p = peer("129.215.137.168");
    let s = store.login("nicos", "pw", p, c.now()).unwrap();
    for _ in 0..10 {
        c.advance(chrono::Duration::seconds(1));
        assert!(valid(store.validate(p, Some(&s.id), c.now())));
    }
    c.advance(chrono::Duration::seconds(3));
    assert_eq!(store.validate(p, Some(&s.id), c.now()), Validation::Expired);

    let s = store.login("nicos", "pw", p, c.now()).unwrap();
    store.logout(&s.id);
    assert_eq!(store.validate(p, Some(&s.id), c.now()), Validation::Expired);
}

#[test]
fn ip_window_is_bound_to_the_peer() {
    let c = clock();
    let store = SessionStore::new(AuthMode::IpWindow { validity: Duration::from_secs(5) }, users());
    let p = peer("129.215.137.168");
    store.login("nicos", "pw", p, c.now()).unwrap();
    c.advance(chrono::Duration::seconds(3));
    assert!(valid(store.validate(p, None, c.now())));
    assert_eq!(store.validate(peer("10.0.0.7"), None, c.now()), Validation::Expired);
    c.advance(chrono::Duration::seconds(3));
    assert_eq!(store.validate(p, None, c.now()), Validation::Expired);
}

#[test]
fn ip_window_survives_a_restart() {
    let dir = tempfile::tempdir().unwrap();
    let file = dir.path().join("windows.json");
    let c = clock();
    let p = peer("192.0.2.10");
    let mode = AuthMode::IpWindow { validity: Duration::from_secs(5) };
    {
        let store = SessionStore::new(mode, users()).with_window_file(&file).unwrap();
        store.login("nicos", "pw", p, c.now()).unwrap();
    }
    let store = SessionStore::new(mode, users()).with_window_file(&file).unwrap();
    c.advance(chrono::Duration::seconds(4));
    match store.validate(p, None, c.now()) {
        Validation::Valid(s) => assert_eq!(s.user.hdb_name, "nicos"),
        Validation::Expired => panic!("window lost across restart"),
    }
    c.advance(chrono::Duration::seconds(2));
    assert_eq!(store.validate(p, None, c.now()), Validation::Expired);
}

#[test]
fn wrong_credentials_are_indistinguishable() {
    let store = SessionStore::new(AuthMode::default(), users());
    let now = clock().now();
    let p = peer("192.0.2.1");
    let a = store.login("nicos", "wrong", p, now).unwrap_err().to_string();
    let b = store.login("nobody", "pw", p, now).unwrap_err().to_string();
    assert_eq!(a, b);
}
