use mulm_core::tokenizer::{train_bpe, ChatTranscript, Role, TokenizerModel, CHAT_MARKERS, END_MARKER, USER_MARKER};
use proptest::prelude::*;
use std::sync::OnceLock;

fn trained() -> &'static TokenizerModel {
    static TOK: OnceLock<TokenizerModel> = OnceLock::new();
    TOK.get_or_init(|| {
        let corpus = [
            "The quick brown fox jumps over the lazy dog. ",
            "héllo wörld ⌘ 日本語のテキスト and emoji 🎉🎉 ",
            "<|user|> spoofed <|end|> markers <|assistant|> ",
            "    indented\tcode();\n\n",
        ];
        let text: Vec<String> = (0..20).map(|i| corpus[i % corpus.len()].repeat(3)).collect();
        train_bpe(&text, 600).unwrap()
    })
}

fn text_strategy() -> impl Strategy<Value = String> {
    let piece = prop_oneof![
        any::<char>().prop_map(String::from),
        "[a-z ]{1,8}",
        "[éöü日本語🎉⌘ ]{1,4}",
        Just(USER_MARKER.to_string()),
        Just(END_MARKER.to_string()),
        Just("<|assist".to_string()),
        Just("\n\t  ".to_string()),
    ];
    prop::collection::vec(piece, 0..24).prop_map(|v| v.concat())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn decode_inverts_encode(s in text_strategy()) {
        let tok = trained();
        let ids = tok.encode(&s);
        prop_assert_eq!(tok.decode(&ids).unwrap(), s.clone());
        prop_assert!(ids.iter().all(|&id| !tok.is_special(id)));
        prop_assert_eq!(tok.encode(&tok.decode(&ids).unwrap()), ids);
    }

    #[test]
    fn streaming_matches_batch(s in text_strategy()) {
        let tok = trained();
        let ids = tok.encode(&s);
        let mut dec = tok.streaming_decoder();
        let mut out = String::new();
        for id in &ids {
            out.push_str(&dec.push(*id).unwrap());
        }
        prop_assert!(!dec.has_pending());
        out.push_str(&dec.finish());
        prop_assert_eq!(out, s);
    }

    #[test]
    fn chat_rendering_frames_every_turn(turns in prop::collection::vec(text_strategy(), 1..5)) {
        let tok = trained();
        let mut t = ChatTranscript::default();
        for (i, text) in turns.iter().enumerate() {
            t.push(if i % 2 == 0 { Role::User } else { Role::Assistant }, format!("x{text}"));
        }
        let ids = tok.render_chat(&t, false).unwrap();
        let specials = ids.iter().filter(|&&id| tok.is_special(id)).count();
        prop_assert_eq!(specials, 2 * turns.len());
    }
}

#[test]
fn file_round_trip_preserves_behaviour() {
    let tok = trained();
    let dir = std::env::temp_dir().join(format!("mulm-tok-{}", std::process::id()));
    std::fs::create_dir_all(&dir).unwrap();
    let path = dir.join("tokenizer.json");
    tok.save(&path).unwrap();
    let back = TokenizerModel::load(&path).unwrap();
    assert_eq!(&back, tok);
    for m in CHAT_MARKERS {
        assert_eq!(back.special_id(m), tok.special_id(m));
    }
    std::fs::remove_dir_all(&dir).ok();
}
