//! Pinned wire formats. These vectors are the interoperability contract:
//! a second implementation that matches them byte for byte can exchange
//! queries with this one.

use onionq_core::envelope::{
    generate_keypair, open, seal, sym_decrypt, SymKey, SEAL_OVERHEAD, SYM_OVERHEAD,
};
use onionq_core::onion::{
    body_size_for, build_body, build_head, head_size_for, LayerPlan, OnionError,
    HOP_FIELDS_LEN, HOP_LAYER_OVERHEAD, TERMINAL_MIN_LEN,
};
use onionq_core::vm::asm::assemble;
use onionq_core::vm::{CarrierString, CARRIER_LEN};
use onionq_core::{Address, Registry};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn rng() -> ChaCha20Rng {
    ChaCha20Rng::seed_from_u64(0xF0F0)
}

#[test]
fn framing_constants_are_pinned() {
    assert_eq!(SEAL_OVERHEAD, 48, "ephemeral key (32) plus tag (16)");
    assert_eq!(SYM_OVERHEAD, 28, "nonce (12) plus tag (16)");
    assert_eq!(HOP_FIELDS_LEN, 69, "flag (1) plus address (4) plus two keys (64)");
    assert_eq!(HOP_LAYER_OVERHEAD, 117);
    assert_eq!(TERMINAL_MIN_LEN, 81, "sealed flag (1) plus identifier (32)");
    assert_eq!(CARRIER_LEN, 32);

    assert_eq!(head_size_for(2).unwrap(), 315);
    assert_eq!(head_size_for(100).unwrap(), 11781);
    for n in 2..=60 {
        assert_eq!(
            head_size_for(n + 1).unwrap() - head_size_for(n).unwrap(),
            HOP_LAYER_OVERHEAD,
            "every extra hop costs exactly one layer"
        );
    }
    assert!(matches!(head_size_for(1), Err(OnionError::PathTooShort { .. })));

    assert_eq!(body_size_for(0), 62, "length word (2) plus carrier (32) plus overhead (28)");
    assert_eq!(body_size_for(1280), 1342);
}

#[test]
fn carrier_string_encoding_is_pinned() {
    let w = CarrierString { acc1: 21.5, acc2: -3.0, count: 7 };
    assert_eq!(
        hex::encode(w.to_bytes()),
        "000000000080354000000000000008c007000000000000000000000000000000",
        "little-endian acc1, acc2, count, then reserved zeros"
    );
    let back = CarrierString::from_bytes(&w.to_bytes());
    assert_eq!(back.to_bytes(), w.to_bytes());
}

#[test]
fn task_bytecode_encoding_is_pinned() {
    let text = "
        read_sensor t
        read_status power
        cmp ge
        jmp_if_false skip
        push 1.5
        load_w acc2
        add
        mul
skip:   max
        store_w acc1
        halt
";
    let task = assemble(text).unwrap();
    #[rustfmt::skip]
    let expected: Vec<u8> = vec![
        0x02, 1, b't',                                  // read_sensor "t"
        0x03, 5, b'p', b'o', b'w', b'e', b'r',          // read_status "power"
        0x04, 5,                                        // cmp ge
        0x05, 28, 0,                                    // jmp_if_false 28 (little-endian)
        0x01, 0, 0, 0, 0, 0, 0, 0xF8, 0x3F,             // push 1.5
        0x06, 1,                                        // load_w acc2
        0x08,                                           // add
        0x09,                                           // mul
        0x0A,                                           // max  <- offset 28
        0x07, 0,                                        // store_w acc1
        0x00,                                           // halt
    ];
    assert_eq!(task, expected);
}

#[test]
fn body_plaintext_layout_is_pinned() {
    let key = SymKey([7u8; 32]);
    let task = [0x00u8]; // halt
    let w = CarrierString { acc1: 1.0, acc2: 2.0, count: 3 };
    let body = build_body(&mut rng(), &task, &w.to_bytes(), &key, 16).unwrap();
    assert_eq!(body.len(), body_size_for(16));

    let pt = sym_decrypt(&key, body.as_bytes()).unwrap();
    assert_eq!(pt.len(), 2 + 16 + CARRIER_LEN);
    assert_eq!(&pt[..2], &[1, 0], "task length, little-endian");
    assert_eq!(pt[2], 0x00, "the task itself");
    // pt[3..18] is random padding up to the task capacity.
    assert_eq!(&pt[18..50], &w.to_bytes(), "carrier rides in the tail");
}

#[test]
fn sealed_box_wire_shape_is_pinned() {
    let mut rng = rng();
    let kp = generate_keypair(&mut rng);
    let sealed = seal(&mut rng, &kp.public(), b"hello").unwrap();
    assert_eq!(sealed.len(), 5 + SEAL_OVERHEAD, "ephemeral key, ciphertext, tag");
    assert_eq!(open(&kp, &sealed).unwrap(), b"hello");

    // Flipping any single byte breaks authentication.
    for i in [0, 31, 32, 36, sealed.len() - 1] {
        let mut bad = sealed.clone();
        bad[i] ^= 0x01;
        assert!(open(&kp, &bad).is_err(), "byte {i} tampering went unnoticed");
    }
}

/// Unwrap a two-node head layer by layer with the raw envelope, pinning the
/// exact field offsets of hop layers and the terminal layer.
#[test]
fn hop_layer_field_layout_is_pinned() {
    let mut rng = rng();
    let kp1 = generate_keypair(&mut rng);
    let kp2 = generate_keypair(&mut rng);
    let sink_kp = generate_keypair(&mut rng);
    let a1 = Address::from_index(1);
    let a2 = Address::from_index(2);
    let sink = Address::from_index(99);
    let e_a = SymKey([0xAA; 32]);
    let e_b = SymKey([0xBB; 32]);
    let id = SymKey([0xCC; 32]);

    let plans = [
        LayerPlan { address: a1, public_key: kp1.public(), keys: Some((e_a, e_b)) },
        LayerPlan { address: a2, public_key: kp2.public(), keys: None },
    ];
    let head = build_head(&mut rng, &plans, sink, &sink_kp.public(), &id, 315).unwrap();

    // Outermost layer: a target layer for node 1.
    let layer1 = open(&kp1, head.as_bytes()).unwrap();
    assert_eq!(layer1.len(), 315 - SEAL_OVERHEAD);
    assert_eq!(layer1[0], 1, "target flag");
    assert_eq!(&layer1[1..5], &a2.0, "next-hop address");
    assert_eq!(&layer1[5..37], &e_a.0, "first key slot");
    assert_eq!(&layer1[37..69], &e_b.0, "second key slot");

    // Next layer: a decoy layer for node 2, keys zero-filled.
    let layer2 = open(&kp2, &layer1[HOP_FIELDS_LEN..]).unwrap();
    assert_eq!(layer2.len(), 315 - SEAL_OVERHEAD - HOP_LAYER_OVERHEAD);
    assert_eq!(layer2[0], 0, "decoy flag");
    assert_eq!(&layer2[1..5], &sink.0, "decoys still learn their next hop");
    assert_eq!(&layer2[5..69], &[0u8; 64], "decoy key slots are zero filler");

    // Innermost: the terminal layer, sealed to the sink.
    let terminal = open(&sink_kp, &layer2[HOP_FIELDS_LEN..]).unwrap();
    assert_eq!(terminal.len(), 33);
    assert_eq!(terminal[0], 2, "terminal flag");
    assert_eq!(&terminal[1..], &id.0, "query identifier");
}

#[test]
fn registry_text_format_roundtrips() {
    let text = "10.0.0.1 1111111111111111111111111111111111111111111111111111111111111111 laboratory humidity,temperature\n\
                10.0.0.2 - hall light\n";
    let registry = Registry::parse(text).unwrap();
    assert_eq!(registry.len(), 2);
    assert_eq!(registry.to_text(), text);

    let commented = format!("# inventory\n\n{text}");
    assert_eq!(Registry::parse(&commented).unwrap().to_text(), text);
}
