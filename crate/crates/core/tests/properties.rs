use proptest::prelude::*;
use rplsim::messages::{
    decode, encode, BaseFrame, Cc, ControlMessage, Dao, DaoAck, Dio, Dis, DodagConfig, Frame,
    SecureEnvelope, SecurityLevel,
};
use rplsim::security::{Key, SecurityContext, SecurityError, SecurityMode};
use rplsim::stats::t_critical_975;
use rplsim::types::{NodeId, Rank};
use statrs::distribution::{ContinuousCDF, StudentsT};

fn node_id() -> impl Strategy<Value = NodeId> {
    any::<u16>().prop_map(NodeId)
}

fn dio() -> impl Strategy<Value = ControlMessage> {
    (
        node_id(),
        any::<u16>(),
        any::<[u8; 3]>(),
        any::<bool>(),
        0u8..8,
        any::<[u8; 3]>(),
        any::<[u16; 3]>(),
    )
        .prop_map(
            |(sender, rank, [version, instance, dtsn], grounded, mop, c, r)| {
                ControlMessage::Dio(Dio {
                    sender,
                    rank: Rank(rank),
                    version,
                    instance,
                    dtsn,
                    grounded,
                    mop,
                    config: DodagConfig {
                        dio_interval_doublings: c[0],
                        dio_interval_min: c[1],
                        dio_redundancy: c[2],
                        max_rank_increase: r[0],
                        min_hop_rank_increase: r[1],
                        ocp: r[2],
                    },
                })
            },
        )
}

fn base_message() -> impl Strategy<Value = ControlMessage> {
    prop_oneof![
        dio(),
        (node_id(), any::<u8>())
            .prop_map(|(sender, flags)| ControlMessage::Dis(Dis { sender, flags })),
        (
            node_id(),
            any::<u8>(),
            any::<bool>(),
            prop::collection::vec(node_id(), 0..40)
        )
            .prop_map(
                |(sender, sequence, ack_requested, targets)| ControlMessage::Dao(Dao {
                    sender,
                    sequence,
                    ack_requested,
                    targets,
                })
            ),
        (node_id(), any::<u8>(), any::<u8>()).prop_map(|(sender, sequence, status)| {
            ControlMessage::DaoAck(DaoAck {
                sender,
                sequence,
                status,
            })
        }),
    ]
}

fn any_message() -> impl Strategy<Value = ControlMessage> {
    prop_oneof![
        4 => base_message(),
        1 => (node_id(), any::<bool>(), any::<u32>(), any::<u32>()).prop_map(
            |(sender, response, nonce, counter)| ControlMessage::Cc(Cc {
                sender,
                response,
                nonce,
                counter,
            })
        ),
    ]
}

fn ctx(id: NodeId, key: [u8; 16], seed: u64) -> SecurityContext {
    SecurityContext::new(id, SecurityMode::Psm, Some(Key(key)), seed)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(10_000))]

    #[test]
    fn base_codec_round_trips(msg in base_message()) {
        let bytes = encode(&msg);
        prop_assert_eq!(decode(&bytes).unwrap(), msg.clone());
        let frame = Frame::parse(&bytes).unwrap();
        prop_assert_eq!(frame, Frame::Base(BaseFrame::new(msg).unwrap()));
    }

    #[test]
    fn secure_codec_round_trips(msg in any_message(), key in any::<[u8; 16]>(), mac_only in any::<bool>()) {
        let sender = msg.sender();
        let mut tx = ctx(sender, key, 1);
        if mac_only {
            tx.level = SecurityLevel::MacOnly;
        }
        let env = tx.secure_wrap(&msg).unwrap();
        let wire = env.to_bytes();
        prop_assert_eq!(SecureEnvelope::from_bytes(&wire).unwrap(), env.clone());
        let mut rx = ctx(NodeId(sender.0.wrapping_add(1)), key, 2);
        prop_assert_eq!(rx.open(&env, sender).unwrap(), msg);
    }

    #[test]
    fn decode_never_panics(bytes in prop::collection::vec(any::<u8>(), 0..64)) {
        let _ = decode(&bytes);
        let _ = Frame::parse(&bytes);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(1_000))]

    #[test]
    fn wrong_key_is_rejected(
        msg in any_message(),
        k1 in any::<[u8; 16]>(),
        k2 in any::<[u8; 16]>(),
    ) {
        prop_assume!(k1 != k2);
        let sender = msg.sender();
        let env = ctx(sender, k1, 3).secure_wrap(&msg).unwrap();
        let mut rx = ctx(NodeId(0), k2, 4);
        prop_assert_eq!(rx.open(&env, sender), Err(SecurityError::AuthFailure));
    }

    #[test]
    fn keyless_node_cannot_open(msg in any_message(), k in any::<[u8; 16]>()) {
        let sender = msg.sender();
        let env = ctx(sender, k, 5).secure_wrap(&msg).unwrap();
        let mut rx = SecurityContext::new(NodeId(0), SecurityMode::Psm, None, 6);
        prop_assert!(rx.open(&env, sender).is_err());
    }
}

#[test]
fn t_table_matches_distribution() {
    for df in 1..=30usize {
        let exact = StudentsT::new(0.0, 1.0, df as f64)
            .unwrap()
            .inverse_cdf(0.975);
        let table = t_critical_975(df).unwrap();
        assert!((exact - table).abs() < 5e-4, "df {df}: {table} vs {exact}");
    }
}
