use std::ffi::{CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use negclip::encoders::{EncoderBundle, ToyConfig};
use negclip_ffi::*;

fn cstr(s: &str) -> CString {
    CString::new(s).unwrap()
}

fn last_error() -> String {
    let p = negclip_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

#[test]
fn lexicon_and_scanner() {
    unsafe {
        let mut lex = ptr::null_mut();
        assert_eq!(negclip_lexicon_new(ptr::null(), &mut lex), NegclipStatus::Ok);
        let mut count = 0usize;
        let text = cstr("A dog that is not running and has no ball.");
        assert_eq!(negclip_contains_negation(lex, text.as_ptr(), &mut count), NegclipStatus::Ok);
        assert_eq!(count, 2);

        let mut scanner = ptr::null_mut();
        assert_eq!(negclip_scanner_new(lex, &mut scanner), NegclipStatus::Ok);
        for caption in ["a cat on a mat", "no cars here", "never ever not"] {
            let c = cstr(caption);
            assert_eq!(negclip_scanner_push(scanner, c.as_ptr()), NegclipStatus::Ok);
        }
        let mut stats = NegclipStats::default();
        assert_eq!(negclip_scanner_stats(scanner, &mut stats), NegclipStatus::Ok);
        assert_eq!((stats.caption_total, stats.caption_neg), (3, 2));
        assert_eq!((stats.word_total, stats.word_neg), (11, 2));
        assert_eq!(stats.word_ratio, 2.0 / 11.0);
        negclip_scanner_free(scanner);
        negclip_lexicon_free(lex);
    }
}

#[test]
fn custom_lexicon_and_bad_input() {
    unsafe {
        let mut lex = ptr::null_mut();
        let terms = cstr("without");
        assert_eq!(negclip_lexicon_new(terms.as_ptr(), &mut lex), NegclipStatus::Ok);
        let mut count = 0usize;
        let text = cstr("no bread, without butter");
        negclip_contains_negation(lex, text.as_ptr(), &mut count);
        assert_eq!(count, 1);
        assert_eq!(
            negclip_contains_negation(lex, ptr::null(), &mut count),
            NegclipStatus::NullPointer
        );
        assert!(last_error().contains("text"));
        let invalid = [0xffu8, 0];
        assert_eq!(
            negclip_contains_negation(lex, invalid.as_ptr().cast(), &mut count),
            NegclipStatus::InvalidUtf8
        );
        negclip_lexicon_free(lex);
        negclip_lexicon_free(ptr::null_mut());
    }
}

#[test]
fn maximize_patch_clips_one_edge() {
    let patch = NegclipBox { x: 40, y: 40, w: 20, h: 20 };
    let other = NegclipBox { x: 70, y: 0, w: 30, h: 100 };
    let mut out = NegclipBox::default();
    unsafe {
        assert_eq!(negclip_maximize_patch(patch, other, 100, 100, &mut out), NegclipStatus::Ok);
    }
    // Limits are (20,20)-(80,80); the right edge is pulled in to x = 70.
    assert_eq!(out, NegclipBox { x: 20, y: 20, w: 50, h: 60 });
    let overlapping = NegclipBox { x: 50, y: 50, w: 20, h: 20 };
    unsafe {
        assert_eq!(
            negclip_maximize_patch(patch, overlapping, 100, 100, &mut out),
            NegclipStatus::InvalidArgument
        );
    }
}

#[test]
fn bundle_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let bundle_dir = dir.path().join("bundle");
    let reference = EncoderBundle::init_toy("ViT-B/32", &ToyConfig::default(), 7).unwrap();
    reference.save(&bundle_dir).unwrap();
    let image_path = dir.path().join("red.png");
    image::RgbImage::from_pixel(8, 8, image::Rgb([200, 10, 10])).save(&image_path).unwrap();

    unsafe {
        let mut bundle = ptr::null_mut();
        let path = cstr(bundle_dir.to_str().unwrap());
        assert_eq!(negclip_bundle_load(path.as_ptr(), &mut bundle), NegclipStatus::Ok);
        let dim = negclip_bundle_dim(bundle);
        assert_eq!(dim, 64);
        let arch = negclip_bundle_architecture(bundle);
        assert_eq!(CStr::from_ptr(arch).to_str().unwrap(), "ViT-B/32");
        negclip_string_free(arch);

        let mut t = vec![0.0; dim];
        let text = cstr("a red square");
        assert_eq!(negclip_encode_text(bundle, text.as_ptr(), t.as_mut_ptr(), dim), NegclipStatus::Ok);
        assert_eq!(t, reference.encode_text("a red square").unwrap().values());

        let mut i = vec![0.0; dim];
        let img = cstr(image_path.to_str().unwrap());
        assert_eq!(negclip_encode_image_file(bundle, img.as_ptr(), i.as_mut_ptr(), dim), NegclipStatus::Ok);
        let norm: f64 = i.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let mut short = vec![0.0; dim - 1];
        assert_eq!(
            negclip_encode_text(bundle, text.as_ptr(), short.as_mut_ptr(), dim - 1),
            NegclipStatus::BufferTooSmall
        );

        let mut sim = 0.0;
        assert_eq!(negclip_similarity(t.as_ptr(), t.as_ptr(), dim, &mut sim), NegclipStatus::Ok);
        assert!((sim - 1.0).abs() < 1e-12);
        negclip_bundle_free(bundle);
    }
}

#[test]
fn missing_bundle_reports_class() {
    unsafe {
        let mut bundle = ptr::null_mut();
        let path = cstr("/nonexistent/negclip-bundle");
        assert_eq!(negclip_bundle_load(path.as_ptr(), &mut bundle), NegclipStatus::BundleNotFound);
        assert!(bundle.is_null());
        assert!(last_error().starts_with("bundle-not-found"));
    }
}

#[test]
fn info_nce_matches_closed_form() {
    // Two orthonormal pairs: logits are diag(s), off-diagonal 0.
    let text = [1.0, 0.0, 0.0, 1.0];
    let s = 10.0_f64;
    let expected = (1.0 + (-s).exp()).ln();
    let mut loss = 0.0;
    unsafe {
        assert_eq!(negclip_info_nce(text.as_ptr(), text.as_ptr(), 2, 2, s, &mut loss), NegclipStatus::Ok);
    }
    assert!((loss - expected).abs() < 1e-12, "{loss} vs {expected}");
    let unnormalized = [2.0, 0.0, 0.0, 1.0];
    unsafe {
        assert_eq!(
            negclip_info_nce(unnormalized.as_ptr(), text.as_ptr(), 2, 2, s, &mut loss),
            NegclipStatus::NotNormalized
        );
    }
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/negclip.h");
    let text = std::fs::read_to_string(&header).unwrap();
    for name in ["negclip_bundle_load", "negclip_info_nce", "negclip_maximize_patch", "NEGCLIP_STATUS_OK"] {
        assert!(text.contains(name), "{name} missing from header");
    }
    let Ok(status) = Command::new("cc").args(["-fsyntax-only", "-x", "c", "-Wall", "-Werror"]).arg(&header).status()
    else {
        eprintln!("no C compiler; skipping syntax check");
        return;
    };
    assert!(status.success());
}
