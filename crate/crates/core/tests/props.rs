//! Randomized robustness properties: codecs must be total on arbitrary
//! bytes, valid programs must round-trip through the assembler, execution
//! must stay within its budget, and tampered ciphertexts must never pass.

use onionq_core::envelope::{generate_keypair, SymKey};
use onionq_core::onion::{build_head, head_size_for, open_body, peel, LayerPlan, QueryBody};
use onionq_core::request::parse_request;
use onionq_core::vm::{self, asm, CarrierString, MapEnvironment};
use onionq_core::Address;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

/// One encoded instruction with no control flow.
fn instr_strategy() -> impl Strategy<Value = Vec<u8>> {
    let float = any::<f64>().prop_map(|v| if v.is_nan() { f64::NAN } else { v });
    let label = "[a-z][a-z0-9_]{0,9}";
    prop_oneof![
        Just(vec![0x00u8]),
        float.prop_map(|v| {
            let mut b = vec![0x01u8];
            b.extend(v.to_le_bytes());
            b
        }),
        label.prop_map(|l| {
            let mut b = vec![0x02u8, l.len() as u8];
            b.extend(l.as_bytes());
            b
        }),
        label.prop_map(|l| {
            let mut b = vec![0x03u8, l.len() as u8];
            b.extend(l.as_bytes());
            b
        }),
        (0u8..6).prop_map(|c| vec![0x04, c]),
        (0u8..3).prop_map(|f| vec![0x06, f]),
        (0u8..3).prop_map(|f| vec![0x07, f]),
        Just(vec![0x08u8]),
        Just(vec![0x09u8]),
        Just(vec![0x0Au8]),
    ]
}

/// A valid program: straight-line instructions closed by a jump to the end.
fn program_strategy() -> impl Strategy<Value = Vec<u8>> {
    proptest::collection::vec(instr_strategy(), 0..12).prop_map(|instrs| {
        let mut prog: Vec<u8> = instrs.concat();
        let end = (prog.len() + 3) as u16;
        prog.push(0x05);
        prog.extend(end.to_le_bytes());
        prog
    })
}

proptest! {
    #[test]
    fn task_validation_is_total_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..512)) {
        let _ = vm::validate(&bytes);
        let _ = vm::quantities(&bytes);
    }

    #[test]
    fn execution_stays_in_budget_and_preserves_the_carrier_on_failure(
        bytes in proptest::collection::vec(any::<u8>(), 0..256),
    ) {
        if vm::validate(&bytes).is_ok() {
            let w = CarrierString { acc1: 4.0, acc2: 9.0, count: 2 };
            let env = MapEnvironment::with_sensor("temperature", 20.0);
            let out = vm::execute(&bytes, &w, &env, 2_000);
            prop_assert!(out.steps <= 2_000);
            if !out.completed() {
                prop_assert_eq!(out.carrier.to_bytes(), w.to_bytes());
            }
        }
    }

    #[test]
    fn valid_programs_roundtrip_through_the_assembler(prog in program_strategy()) {
        let text = asm::disassemble(&prog).unwrap();
        let back = asm::assemble(&text).unwrap();
        prop_assert_eq!(back, prog);
    }

    #[test]
    fn carrier_codec_roundtrips_every_bit_pattern(a in any::<u64>(), b in any::<u64>(), c in any::<u64>()) {
        let w = CarrierString { acc1: f64::from_bits(a), acc2: f64::from_bits(b), count: c };
        let bytes = w.to_bytes();
        prop_assert_eq!(CarrierString::from_bytes(&bytes).to_bytes(), bytes);
    }

    #[test]
    fn request_parsing_is_total(text in "\\PC{0,64}") {
        let _ = parse_request(&text);
    }

    #[test]
    fn garbage_bodies_are_rejected_without_panicking(junk in proptest::collection::vec(any::<u8>(), 0..128)) {
        let key = SymKey([3u8; 32]);
        prop_assert!(open_body(&key, &QueryBody::from_bytes(junk)).is_err());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn any_single_bit_flip_breaks_a_head(
        seed in any::<u64>(),
        byte in 0usize..315,
        bit in 0u8..8,
    ) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let kp1 = generate_keypair(&mut rng);
        let kp2 = generate_keypair(&mut rng);
        let sink_kp = generate_keypair(&mut rng);
        let plans = [
            LayerPlan {
                address: Address::from_index(1),
                public_key: kp1.public(),
                keys: Some((SymKey([1; 32]), SymKey([2; 32]))),
            },
            LayerPlan { address: Address::from_index(2), public_key: kp2.public(), keys: None },
        ];
        let head = build_head(
            &mut rng,
            &plans,
            Address::from_index(9),
            &sink_kp.public(),
            &SymKey([9; 32]),
            head_size_for(2).unwrap(),
        )
        .unwrap();

        let mut bytes = head.as_bytes().to_vec();
        bytes[byte] ^= 1 << bit;
        let tampered = onionq_core::onion::QueryHead::from_bytes(bytes);
        prop_assert!(peel(&tampered, &kp1).is_err(), "tampered head still peeled");
    }
}
