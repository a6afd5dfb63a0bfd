// The quick examples run as tests; the training-length ones are left to `cargo run`.

macro_rules! example_test {
    ($name:ident, $file:literal) => {
        mod $name {
            #![allow(dead_code)]
            include!(concat!(env!("CARGO_MANIFEST_DIR"), "/examples/", $file));

            #[test]
            fn runs() {
                run_example().unwrap();
            }
        }
    };
}

example_test!(synth_corpus, "synth_corpus.rs");
example_test!(sinc_filters, "sinc_filters.rs");
example_test!(mtl_variants, "mtl_variants.rs");
example_test!(fusion_features, "fusion_features.rs");
example_test!(speaker_folds, "speaker_folds.rs");
example_test!(predict_ensemble, "predict_ensemble.rs");
