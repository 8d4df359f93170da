use equisel_core::agents::SessionConfig;
use equisel_server::session::{LiveSession, Phase, SeatKind};
use proptest::prelude::*;

#[derive(Clone, Debug)]
enum Op {
    Join(u8),
    Submit(u8, i64),
    Timeout,
    Resolve,
    Advance,
    FillBots,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        3 => (0u8..7).prop_map(Op::Join),
        6 => ((0u8..7), (0i64..7)).prop_map(|(k, s)| Op::Submit(k, s)),
        1 => Just(Op::Timeout),
        2 => Just(Op::Resolve),
        2 => Just(Op::Advance),
        1 => Just(Op::FillBots),
    ]
}

fn seat_kind() -> impl Strategy<Value = SeatKind> {
    prop_oneof![Just(SeatKind::Human), Just(SeatKind::Bot)]
}

/// Position in the linear order Lobby < Open(1) < Resolved(1) < Open(2) < ... < Finished.
fn ordinal(p: &Phase, rounds: u32) -> u32 {
    match p {
        Phase::Lobby => 0,
        Phase::RoundOpen { t, .. } => 2 * t - 1,
        Phase::RoundResolved { t } => 2 * t,
        Phase::Finished => 2 * rounds + 1,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn phases_never_skip(plan in proptest::collection::vec(seat_kind(), 5), ops in proptest::collection::vec(op(), 0..120), seed in 0u64..50) {
        let rounds = 4;
        let cfg = SessionConfig { rounds, ..SessionConfig::treatment(0.4, seed) };
        let mut s = LiveSession::new("x".into(), cfg, &plan).unwrap();
        s.try_start().unwrap();
        let mut submitted = std::collections::HashSet::new();
        for op in ops {
            let before = s.phase().clone();
            let records_before = s.records().len();
            let res = match &op {
                Op::Join(k) => s.join(&format!("t{k}")).map(|_| ()),
                Op::Submit(k, st) => {
                    let token = format!("t{k}");
                    let r = s.submit(&token, *st).map(|_| ());
                    if let (Ok(()), Phase::RoundOpen { t, .. }) = (&r, &before) {
                        prop_assert!(submitted.insert((token, *t)), "seat submitted twice in one round");
                    }
                    r
                }
                Op::Timeout => s.timeout().map(|_| ()),
                Op::Resolve => s.resolve().map(|_| ()),
                Op::Advance => s.advance().map(|_| ()),
                Op::FillBots => s.fill_with_bots(),
            };
            let after = s.phase().clone();
            let (a, b) = (ordinal(&before, rounds), ordinal(&after, rounds));
            if res.is_err() {
                prop_assert_eq!(&before, &after.clone(), "failed op {:?} changed phase", op);
                prop_assert_eq!(records_before, s.records().len());
            } else {
                prop_assert!(b == a || b == a + 1, "{:?}: {:?} -> {:?}", op, before, after);
            }
            if let Phase::RoundResolved { t } | Phase::RoundOpen { t, .. } = after {
                prop_assert!(t >= 1 && t <= rounds);
            }
            let expected_records = match &after {
                Phase::Lobby => 0,
                Phase::RoundOpen { t, .. } => t - 1,
                Phase::RoundResolved { t } => *t,
                Phase::Finished => rounds,
            };
            prop_assert_eq!(s.records().len() as u32, expected_records);
        }
    }
}
