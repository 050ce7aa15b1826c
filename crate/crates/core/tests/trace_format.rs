use proptest::prelude::*;
use vistrace_core::synth::random_trace;
use vistrace_core::trace::{decode_manifest, HEADER_LEN};
use vistrace_core::{decode_trace, encode_trace, TraceError};

fn bits(trace: &vistrace_core::HiddenStateTrace) -> Vec<Vec<u32>> {
    trace
        .layers
        .iter()
        .map(|m| m.as_slice().iter().map(|v| v.to_bits()).collect())
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn round_trip_is_bit_exact(seed in any::<u64>()) {
        let trace = random_trace(seed, 40, 6, 24);
        let bytes = encode_trace(&trace).unwrap();
        let back = decode_trace(&bytes).unwrap();
        prop_assert_eq!(&back.manifest, &trace.manifest);
        prop_assert_eq!(bits(&back), bits(&trace));
        prop_assert_eq!(encode_trace(&back).unwrap(), bytes);
    }

    #[test]
    fn mutated_files_never_panic(
        seed in any::<u64>(),
        edits in prop::collection::vec((any::<usize>(), any::<u8>(), 0u8..4), 1..8),
    ) {
        let mut bytes = encode_trace(&random_trace(seed, 10, 3, 6)).unwrap();
        for (pos, byte, op) in edits {
            if bytes.is_empty() {
                bytes.push(byte);
                continue;
            }
            let pos = pos % bytes.len();
            match op {
                0 => bytes[pos] = byte,
                1 => bytes.truncate(pos),
                2 => bytes.insert(pos, byte),
                _ => { bytes.remove(pos); }
            }
        }
        let _ = decode_trace(&bytes);
        let _ = decode_manifest(&bytes);
    }
}

#[test]
fn payload_size_is_exact() {
    let trace = random_trace(5, 10, 4, 8);
    let m = &trace.manifest;
    let bytes = encode_trace(&trace).unwrap();
    let manifest_len = u32::from_le_bytes(bytes[5..9].try_into().unwrap()) as usize;
    assert_eq!(
        bytes.len(),
        HEADER_LEN + manifest_len + 4 * m.stored_layers * m.num_tokens * m.hidden_size
    );
}

#[test]
fn truncated_payload_reports_lengths() {
    let bytes = encode_trace(&random_trace(9, 10, 2, 4)).unwrap();
    let err = decode_trace(&bytes[..bytes.len() - 1]).unwrap_err();
    assert!(matches!(err, TraceError::PayloadLengthMismatch { .. }), "{err}");
    assert!(err.to_string().starts_with("payload length mismatch"));
}

#[test]
fn extra_bytes_are_rejected() {
    let mut bytes = encode_trace(&random_trace(11, 10, 2, 4)).unwrap();
    bytes.extend_from_slice(&[0, 0, 0, 0]);
    assert!(matches!(
        decode_trace(&bytes),
        Err(TraceError::PayloadLengthMismatch { .. })
    ));
}
