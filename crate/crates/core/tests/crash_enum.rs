mod common;

use std::collections::BTreeSet;

use pmbugs::crash_enum::{simulate, DEFAULT_PENDING_CAP};
use pmbugs::pm_state::replay;
use pmbugs::{check_images, enumerate_crash_images, CrashImage, CrashPoints, Verdict};
use proptest::prelude::*;

fn as_set(images: &[CrashImage]) -> common::ImageSet {
    images
        .iter()
        .map(|i| (i.included_pending.clone(), common::normalize(&i.image)))
        .collect()
}

#[test]
fn matches_brute_force_on_100_traces() {
    for seed in 0..100 {
        let (t, at) = common::crash_case(seed);
        let images = enumerate_crash_images(&t, at, DEFAULT_PENDING_CAP).unwrap();
        let k = common::naive_state(&t, at).2.len();
        assert!(k <= 12);
        assert_eq!(images.len(), 1 << k, "seed {seed}");
        assert_eq!(
            as_set(&images),
            common::brute_force_images(&t, at),
            "seed {seed}"
        );
    }
}

#[test]
fn markers_resolve_to_crash_records() {
    let text = "{\"kind\":\"region\",\"addr\":0,\"size\":4096,\"persistent\":true}\n\
                {\"kind\":\"store\",\"addr\":0,\"size\":1,\"value\":\"01\",\"site\":\"s\"}\n\
                {\"kind\":\"flush\",\"addr\":0,\"flush_kind\":\"clwb\",\"site\":\"f\"}\n\
                {\"kind\":\"crash\"}\n\
                {\"kind\":\"fence\",\"site\":\"x\"}\n";
    let t = pmbugs::trace::parse_trace_str(text).unwrap();
    let reports = simulate(
        &t,
        &CrashPoints::Markers,
        DEFAULT_PENDING_CAP,
        &mut (),
        |_, _, _| |_: &CrashImage| Verdict::Consistent,
    )
    .unwrap();
    assert_eq!(reports.len(), 1);
    assert_eq!(reports[0].crash_event, 3);
    assert_eq!(reports[0].pending_k, 1);
    assert_eq!(reports[0].images.len(), 2);
}

#[test]
fn impure_checker_runs_sequentially() {
    use pmbugs::RecoveryChecker;
    use std::sync::atomic::{AtomicUsize, Ordering};
    struct Counting(AtomicUsize);
    impl RecoveryChecker for Counting {
        fn check(&self, _: &CrashImage) -> Verdict {
            self.0.fetch_add(1, Ordering::SeqCst);
            Verdict::Consistent
        }
        fn is_pure(&self) -> bool {
            false
        }
    }
    let (t, _) = common::crash_case(7);
    let images = enumerate_crash_images(&t, t.len(), DEFAULT_PENDING_CAP).unwrap();
    let n = images.len();
    let c = Counting(AtomicUsize::new(0));
    let checked = check_images(images, &c);
    assert_eq!(c.0.load(Ordering::SeqCst), n);
    assert_eq!(checked.counts["Consistent"], n);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn image_properties(seed in any::<u64>()) {
        let (t, at) = common::crash_case(seed);
        let images = enumerate_crash_images(&t, at, DEFAULT_PENDING_CAP).unwrap();
        let machine = replay(&t.events[..at], Some(&t.regions)).unwrap();
        let pending = machine.pending_set();
        prop_assert_eq!(images.len(), 1usize << pending.len());

        // The empty subset is the persisted view.
        prop_assert_eq!(&images[0].image, &machine.persisted_view());

        // Union of included lines is the pending set, each a subset of it.
        let union: BTreeSet<u64> = images.iter().flat_map(|i| i.included_pending.clone()).collect();
        prop_assert_eq!(&union, pending);

        // Non-pending lines agree with the persisted view everywhere.
        let persisted = machine.persisted_view();
        for img in &images {
            for (line, content) in &persisted {
                if !pending.contains(line) {
                    prop_assert_eq!(img.image.get(line), Some(content));
                }
            }
        }
    }
}
