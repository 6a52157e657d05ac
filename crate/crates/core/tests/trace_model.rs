mod common;

use pmbugs::levelhash::{generate_workload, WorkloadConfig};
use pmbugs::trace::{parse_trace_str, write_trace_string};
use pmbugs::{EventKind, TraceBuilder, TraceError};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn single_store_record() {
    let t = parse_trace_str(
        r#"{"kind":"store","addr":64,"size":8,"value":"00000000000000ff","site":"a.c:1"}"#,
    )
    .unwrap();
    assert_eq!(t.len(), 1);
    assert_eq!(t.events[0].index, 0);
    assert_eq!(
        t.events[0].kind,
        EventKind::Store {
            addr: 64,
            value: vec![0, 0, 0, 0, 0, 0, 0, 0xff]
        }
    );
    assert_eq!(t.events[0].site, "a.c:1");
}

#[test]
fn wide_store_splits_on_lines() {
    let value = "ab".repeat(128);
    let text =
        format!(r#"{{"kind":"store","addr":64,"size":128,"value":"{value}","site":"w.c:9"}}"#);
    let t = parse_trace_str(&text).unwrap();
    assert_eq!(t.len(), 2);
    for (i, e) in t.events.iter().enumerate() {
        assert_eq!(e.index, i);
        assert_eq!(e.site, "w.c:9");
        assert_eq!(
            e.kind,
            EventKind::Store {
                addr: 64 + 64 * i as u64,
                value: vec![0xab; 64]
            }
        );
    }
}

#[test]
fn unknown_kind_names_the_line() {
    let text = "{\"kind\":\"fence\",\"site\":\"x\"}\n{\"kind\":\"stroe\",\"addr\":0}\n";
    match parse_trace_str(text) {
        Err(TraceError::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("expected parse error, got {other:?}"),
    }
}

#[test]
fn unknown_keys_are_rejected() {
    let text = r#"{"kind":"fence","site":"x","color":"red"}"#;
    assert!(parse_trace_str(text).is_err());
}

#[test]
fn overlapping_regions_are_rejected() {
    let text = "{\"kind\":\"region\",\"addr\":0,\"size\":128,\"persistent\":true}\n\
                {\"kind\":\"region\",\"addr\":64,\"size\":64,\"persistent\":false}\n";
    assert!(parse_trace_str(text).is_err());
}

#[test]
fn region_after_use_is_rejected() {
    let text = "{\"kind\":\"fence\",\"site\":\"x\"}\n\
                {\"kind\":\"store\",\"addr\":0,\"size\":1,\"value\":\"01\",\"site\":\"s\"}\n\
                {\"kind\":\"region\",\"addr\":0,\"size\":64,\"persistent\":true}\n";
    assert!(parse_trace_str(text).is_err());
}

#[test]
fn straddling_small_store_is_rejected() {
    let text = r#"{"kind":"store","addr":60,"size":8,"value":"0102030405060708","site":"s"}"#;
    assert!(parse_trace_str(text).is_err());
}

#[test]
fn empty_and_single_fence_streams() {
    let empty = TraceBuilder::new().finish();
    assert_eq!(write_trace_string(&empty), "");
    let mut b = TraceBuilder::new();
    b.fence("f.c:1");
    let out = write_trace_string(&b.finish());
    assert_eq!(out.lines().count(), 1);
    assert!(out.contains("\"kind\":\"fence\""));
}

#[test]
fn levelhash_trace_round_trips_byte_identically() {
    let w = generate_workload(&WorkloadConfig {
        ops: 300,
        seed: 4,
        ..WorkloadConfig::default()
    })
    .unwrap();
    assert!(w.trace.len() >= 1000, "{}", w.trace.len());
    let text = write_trace_string(&w.trace);
    let back = parse_trace_str(&text).unwrap();
    assert_eq!(back, w.trace);
    assert_eq!(write_trace_string(&back), text);
}

proptest! {
    #[test]
    fn round_trip_and_dense_indices(seed in any::<u64>(), n in 0usize..200) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let t = common::random_trace(&mut rng, 8, n);
        let back = parse_trace_str(&write_trace_string(&t)).unwrap();
        prop_assert_eq!(&back, &t);
        for (i, e) in back.events.iter().enumerate() {
            prop_assert_eq!(e.index, i);
        }
    }

    #[test]
    fn split_pieces_concatenate_to_the_original(
        line in 0u64..16,
        off in 0u64..64,
        bytes in proptest::collection::vec(any::<u8>(), 9..300),
    ) {
        let addr = line * 64 + off;
        let mut b = TraceBuilder::new();
        b.store(addr, &bytes, "s").unwrap();
        let t = b.finish();
        let mut joined = Vec::new();
        let mut next = addr;
        for e in &t.events {
            let EventKind::Store { addr: a, value } = &e.kind else { panic!() };
            prop_assert_eq!(*a, next);
            prop_assert_eq!(a / 64, (a + value.len() as u64 - 1) / 64);
            next += value.len() as u64;
            joined.extend_from_slice(value);
        }
        prop_assert_eq!(joined, bytes);
    }
}
