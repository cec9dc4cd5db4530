use std::ffi::{c_char, CStr, CString};
use std::path::Path;
use std::process::Command;
use std::ptr;

use mnmt::model::{TransformerConfig, TransformerModel};
use mnmt::pipeline::{save_checkpoint, Checkpoint};
use mnmt::tokenizer::bpe_train;
use mnmt_ffi::*;

fn c(s: &str) -> CString {
    CString::new(s).unwrap()
}

unsafe fn take(s: *mut c_char) -> String {
    let out = CStr::from_ptr(s).to_str().unwrap().to_string();
    mnmt_string_free(s);
    out
}

fn last_error() -> String {
    let p = mnmt_last_error_message();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_str().unwrap().to_string()
}

#[test]
fn bleu_identity_and_errors() {
    let hyps = [c("the cat sat"), c("on the mat")];
    let ptrs: Vec<*const c_char> = hyps.iter().map(|s| s.as_ptr()).collect();
    let mut score = -1.0;
    let st = unsafe { mnmt_bleu_corpus(ptrs.as_ptr(), ptrs.as_ptr(), 2, 4, &mut score) };
    assert_eq!(st, MnmtStatus::Ok);
    assert_eq!(score, 100.0);

    let st = unsafe { mnmt_bleu_corpus(ptr::null(), ptrs.as_ptr(), 2, 4, &mut score) };
    assert_eq!(st, MnmtStatus::NullPointer);
    assert!(last_error().contains("null"));

    let empty = [c("")];
    let e: Vec<*const c_char> = empty.iter().map(|s| s.as_ptr()).collect();
    let st = unsafe { mnmt_bleu_corpus(e.as_ptr(), e.as_ptr(), 1, 4, &mut score) };
    assert_eq!(st, MnmtStatus::InvalidArgument);
}

#[test]
fn bpe_encode_decode_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let prefix = dir.path().join("bpe");
    bpe_train(["low lower lowest", "newer newest"], 8).unwrap().save(&prefix).unwrap();
    let prefix = c(prefix.to_str().unwrap());
    let mut bpe = ptr::null_mut();
    assert_eq!(unsafe { mnmt_bpe_load(prefix.as_ptr(), &mut bpe) }, MnmtStatus::Ok);
    let text = c("lower newest");
    let (mut ids, mut len) = (ptr::null_mut(), 0usize);
    assert_eq!(unsafe { mnmt_bpe_encode(bpe, text.as_ptr(), &mut ids, &mut len) }, MnmtStatus::Ok);
    assert!(len > 0);
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { mnmt_bpe_decode(bpe, ids, len, &mut out) }, MnmtStatus::Ok);
    assert_eq!(unsafe { take(out) }, "lower newest");
    unsafe {
        mnmt_ids_free(ids, len);
        mnmt_bpe_free(bpe);
    }

    let missing = c("/nonexistent/bpe");
    let mut bpe = ptr::null_mut();
    assert_eq!(unsafe { mnmt_bpe_load(missing.as_ptr(), &mut bpe) }, MnmtStatus::Io);
    assert!(bpe.is_null());
}

#[test]
fn transliteration_and_language_errors() {
    let (text, hi, bn, xx) = (c("क"), c("hi"), c("bn"), c("xx"));
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { mnmt_transliterate(text.as_ptr(), hi.as_ptr(), bn.as_ptr(), &mut out) },
        MnmtStatus::Ok
    );
    assert_eq!(unsafe { take(out) }, "\u{0995}");
    assert_eq!(
        unsafe { mnmt_transliterate(text.as_ptr(), hi.as_ptr(), xx.as_ptr(), &mut out) },
        MnmtStatus::UnknownLanguage
    );
    assert!(last_error().contains("xx"));
    let en = c("en");
    assert_eq!(
        unsafe { mnmt_transliterate(text.as_ptr(), hi.as_ptr(), en.as_ptr(), &mut out) },
        MnmtStatus::Unsupported
    );
    let bad = [0xffu8, 0];
    assert_eq!(
        unsafe { mnmt_transliterate(bad.as_ptr() as *const c_char, hi.as_ptr(), bn.as_ptr(), &mut out) },
        MnmtStatus::InvalidUtf8
    );
}

#[test]
fn filter_verdicts() {
    let (en, hi) = (c("en"), c("hi"));
    let mut v = MnmtFilterVerdict::Duplicate;
    let cases = [
        ("a small house", "एक छोटा घर", MnmtFilterVerdict::Keep),
        ("", "घर", MnmtFilterVerdict::EmptySide),
        ("one", "एक दो तीन चार पांच", MnmtFilterVerdict::LengthRatio),
        ("a small house", "a small house", MnmtFilterVerdict::ScriptMismatch),
    ];
    for (s, t, want) in cases {
        let (s, t) = (c(s), c(t));
        let st = unsafe { mnmt_filter_pair(s.as_ptr(), t.as_ptr(), en.as_ptr(), hi.as_ptr(), &mut v) };
        assert_eq!(st, MnmtStatus::Ok);
        assert_eq!(v, want);
    }
}

#[test]
fn translator_matches_library_and_rejects_corrupt_checkpoints() {
    let dir = tempfile::tempdir().unwrap();
    let bpe = bpe_train(["a b c", "b c a"], 2).unwrap();
    bpe.save(dir.path().join("bpe")).unwrap();
    let model = TransformerModel::new(TransformerConfig::tiny(bpe.vocab_size(), 1, 2, 8, 16), 3).unwrap();
    let ckpt = dir.path().join("m.ckpt");
    save_checkpoint(&Checkpoint::fresh(model.clone(), 3), &ckpt).unwrap();
    let expected = mnmt::pipeline::translate_sentences(
        &model,
        &bpe,
        &["a b".to_string()],
        mnmt::LangCode::Hi,
        &mnmt::pipeline::DecodeConfig {
            beam_size: 3,
            ..Default::default()
        },
    )
    .unwrap();

    let path = |p: &Path| c(p.to_str().unwrap());
    let (ck, prefix) = (path(&ckpt), path(&dir.path().join("bpe")));
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { mnmt_translator_load(ck.as_ptr(), prefix.as_ptr(), &mut t) }, MnmtStatus::Ok);
    let (src, hi) = (c("a b"), c("hi"));
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { mnmt_translator_translate(t, src.as_ptr(), hi.as_ptr(), 3, &mut out) },
        MnmtStatus::Ok
    );
    assert_eq!(unsafe { take(out) }, expected[0]);
    assert_eq!(
        unsafe { mnmt_translator_translate(t, src.as_ptr(), hi.as_ptr(), 0, &mut out) },
        MnmtStatus::InvalidArgument
    );
    unsafe { mnmt_translator_free(t) };

    let mut bytes = std::fs::read(&ckpt).unwrap();
    let mid = bytes.len() / 2;
    bytes[mid] ^= 1;
    let bad = dir.path().join("bad.ckpt");
    std::fs::write(&bad, bytes).unwrap();
    let bad = path(&bad);
    let mut t = ptr::null_mut();
    assert_eq!(unsafe { mnmt_translator_load(bad.as_ptr(), prefix.as_ptr(), &mut t) }, MnmtStatus::Format);
    assert!(t.is_null());
}

#[test]
fn header_compiles_as_c() {
    let header = Path::new(env!("CARGO_MANIFEST_DIR")).join("include/mnmt.h");
    let out = Command::new("cc")
        .args(["-fsyntax-only", "-Wall", "-Werror", "-x", "c"])
        .arg(&header)
        .output()
        .expect("a C compiler named cc");
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
}
