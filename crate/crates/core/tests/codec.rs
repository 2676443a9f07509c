mod common;

use common::{expected_wire, golden_frames, hex, read_wire};
use pid_sim::obexlite::{
    build_put_frames, chunk_capacity, decode_connect_response, decode_frame, encode_frame,
    expected_frame_count, first_frame_extra, serve_push, ConnectParams, ObexFrame, ObexHeader,
    Opcode,
};
use pid_sim::simnet::{MacId, RadioDevice};
use proptest::prelude::*;

fn golden_cases() -> Vec<(&'static str, ObexFrame)> {
    let connect_resp = ObexFrame {
        opcode: Opcode::Success,
        connect: Some(ConnectParams::new(1024)),
        headers: vec![ObexHeader::ConnectionId(1)],
    };
    vec![
        ("connect_1024", ObexFrame::connect(1024)),
        ("disconnect", ObexFrame::new(Opcode::Disconnect, vec![])),
        ("continue", ObexFrame::response(Opcode::Continue)),
        ("success", ObexFrame::response(Opcode::Success)),
        (
            "put_final_empty_name",
            ObexFrame::new(
                Opcode::PutFinal,
                vec![
                    ObexHeader::Name(String::new()),
                    ObexHeader::Length(0),
                    ObexHeader::EndOfBody(vec![]),
                ],
            ),
        ),
        (
            "put_final_cpi_hello",
            ObexFrame::new(
                Opcode::PutFinal,
                vec![
                    ObexHeader::Name("cpi.txt".into()),
                    ObexHeader::Length(5),
                    ObexHeader::EndOfBody(b"hello".to_vec()),
                ],
            ),
        ),
        (
            "put_body_ab",
            ObexFrame::new(Opcode::Put, vec![ObexHeader::Body(b"ab".to_vec())]),
        ),
        (
            "success_connection_id",
            ObexFrame::new(Opcode::Success, vec![ObexHeader::ConnectionId(1)]),
        ),
        ("connect_response_1024", connect_resp),
    ]
}

#[test]
fn golden_frames_encode_byte_exact() {
    let golden = golden_frames();
    let cases = golden_cases();
    assert_eq!(golden.len(), cases.len());
    for (label, frame) in cases {
        let want = &golden[label];
        let got = encode_frame(&frame).unwrap();
        assert_eq!(hex(&got), hex(want), "{label}");
        let decoded = if label.starts_with("connect_response") {
            decode_connect_response(want).unwrap()
        } else {
            decode_frame(want).unwrap()
        };
        assert_eq!(decoded, (frame.clone(), &[][..]), "{label}");
        let wire = read_wire(want, frame.connect.is_some()).expect(label);
        assert_eq!(wire, expected_wire(&frame), "{label}");
    }
}

#[test]
fn golden_single_chunk_push_matches_builder() {
    let frames = build_put_frames("cpi.txt", b"hello", 1024).unwrap();
    assert_eq!(frames.len(), 1);
    assert_eq!(
        encode_frame(&frames[0]).unwrap(),
        golden_frames()["put_final_cpi_hello"]
    );
}

#[test]
fn back_to_back_frames_decode_in_order() {
    let g = golden_frames();
    let mut stream = g["put_body_ab"].clone();
    stream.extend(&g["disconnect"]);
    let (first, rest) = decode_frame(&stream).unwrap();
    assert_eq!(first.opcode, Opcode::Put);
    let (second, rest) = decode_frame(rest).unwrap();
    assert_eq!(second.opcode, Opcode::Disconnect);
    assert!(rest.is_empty());
}

fn arb_header() -> impl Strategy<Value = ObexHeader> {
    prop_oneof![
        "[ -~]{0,40}".prop_map(ObexHeader::Name),
        any::<u32>().prop_map(ObexHeader::Length),
        proptest::collection::vec(any::<u8>(), 0..300).prop_map(ObexHeader::Body),
        proptest::collection::vec(any::<u8>(), 0..300).prop_map(ObexHeader::EndOfBody),
        any::<u32>().prop_map(ObexHeader::ConnectionId),
    ]
}

fn arb_request() -> impl Strategy<Value = ObexFrame> {
    let op = prop_oneof![
        Just(Opcode::Connect),
        Just(Opcode::Disconnect),
        Just(Opcode::Put),
        Just(Opcode::PutFinal),
        Just(Opcode::Continue),
        Just(Opcode::Success),
        Just(Opcode::BadRequest),
        Just(Opcode::Forbidden),
    ];
    (
        op,
        any::<u8>(),
        any::<u8>(),
        any::<u16>(),
        proptest::collection::vec(arb_header(), 0..6),
    )
        .prop_map(|(opcode, version, flags, max_packet, headers)| ObexFrame {
            opcode,
            connect: (opcode == Opcode::Connect).then_some(ConnectParams {
                version,
                flags,
                max_packet,
            }),
            headers,
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn decode_inverts_encode(frame in arb_request()) {
        let bytes = encode_frame(&frame).unwrap();
        prop_assert_eq!(bytes.len(), frame.encoded_len());
        let (back, rest) = decode_frame(&bytes).unwrap();
        prop_assert!(rest.is_empty());
        prop_assert_eq!(&back, &frame);
        prop_assert_eq!(read_wire(&bytes, frame.connect.is_some()), Some(expected_wire(&frame)));
    }

    #[test]
    fn encode_inverts_decode(frame in arb_request(), trailer in proptest::collection::vec(any::<u8>(), 0..8)) {
        let mut bytes = encode_frame(&frame).unwrap();
        let frame_len = bytes.len();
        bytes.extend(&trailer);
        let (decoded, rest) = decode_frame(&bytes).unwrap();
        prop_assert_eq!(rest, &trailer[..]);
        prop_assert_eq!(encode_frame(&decoded).unwrap(), bytes[..frame_len].to_vec());
    }

    #[test]
    fn truncated_input_is_an_error(frame in arb_request(), cut in any::<prop::sample::Index>()) {
        let bytes = encode_frame(&frame).unwrap();
        let keep = cut.index(bytes.len());
        prop_assert!(decode_frame(&bytes[..keep]).is_err());
    }

    #[test]
    fn put_frames_reassemble_and_fit(
        name in "[a-z]{1,12}\\.txt",
        max_packet in 40u16..600,
        factor in 0usize..=4000,
        fill in any::<u8>(),
    ) {
        let size = factor * usize::from(max_packet) * 4 / 4000;
        let payload: Vec<u8> = (0..size).map(|i| (i as u8).wrapping_mul(31) ^ fill).collect();
        let frames = build_put_frames(&name, &payload, max_packet).unwrap();
        prop_assert_eq!(frames.len(), expected_frame_count(&name, size, max_packet));
        let capacity = usize::from(max_packet) - 6;
        let want = (size + 3 + name.len() + 5).div_ceil(capacity).max(1);
        prop_assert_eq!(frames.len(), want);

        let mut device = RadioDevice::new(MacId::from_u64(1).unwrap(), "rx");
        let mut rebuilt: Vec<u8> = Vec::new();
        for (i, frame) in frames.iter().enumerate() {
            let bytes = encode_frame(frame).unwrap();
            prop_assert!(bytes.len() <= usize::from(max_packet));
            let last = i + 1 == frames.len();
            prop_assert_eq!(frame.opcode, if last { Opcode::PutFinal } else { Opcode::Put });
            let wire = read_wire(&bytes, false).unwrap();
            for (id, data) in &wire.headers {
                if *id == 0x48 || *id == 0x49 {
                    rebuilt.extend(data);
                }
            }
            let reply = serve_push(&mut device, &decode_frame(&bytes).unwrap().0);
            prop_assert_eq!(reply.opcode, if last { Opcode::Success } else { Opcode::Continue });
        }
        prop_assert_eq!(&rebuilt, &payload);
        prop_assert_eq!(device.inbox.get(&name), Some(&payload));
    }

    #[test]
    fn capacity_helpers_agree(name in "[ -~]{0,30}", max_packet in 6u16..=u16::MAX) {
        prop_assert_eq!(chunk_capacity(max_packet), usize::from(max_packet) - 6);
        prop_assert_eq!(first_frame_extra(&name), name.len() + 8);
    }
}
