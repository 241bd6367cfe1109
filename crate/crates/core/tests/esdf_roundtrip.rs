mod support;

use escrow_core::datamodel::Dataframe;
use escrow_core::offload::{deserialize_df, serialize_df};
use proptest::prelude::*;
use support::esdf::{check_round_trip, dataframe};

proptest! {
    #![proptest_config(ProptestConfig { cases: 1000, ..ProptestConfig::default() })]

    #[test]
    fn round_trip_and_stable_bytes(df in dataframe()) {
        check_round_trip(&df).map_err(TestCaseError::fail)?;
    }

    #[test]
    fn arbitrary_bytes_never_panic(bytes in prop::collection::vec(any::<u8>(), 0..256)) {
        let _ = deserialize_df(&bytes);
    }

    #[test]
    fn truncations_are_rejected(df in dataframe(), cut in any::<prop::sample::Index>()) {
        let bytes = serialize_df(&df);
        let cut = cut.index(bytes.len());
        prop_assert!(deserialize_df(&bytes[..cut]).is_err());
    }
}

#[test]
fn empty_frame_is_18_bytes() {
    let bytes = serialize_df(&Dataframe::empty());
    assert_eq!(bytes.len(), 18);
    assert_eq!(&bytes[..4], b"ESDF");
    assert_eq!(deserialize_df(&bytes).unwrap(), Dataframe::empty());
}

