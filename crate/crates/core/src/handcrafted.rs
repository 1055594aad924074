//! The packaged list of hand-written follow-up replies that signal a nonsensical
//! message in Diplomacy dialogues ("that move isn't possible", "you just said
//! that", ...). One reply per line, stored verbatim.

use crate::data::{Reply, ReplyOrigin};
use crate::error::Result;
use crate::scorer::{reply_from_text, Scorer};

pub const HANDCRAFTED_REPLIES: &str = include_str!("../data/handcrafted_replies.txt");

pub fn handcrafted_texts() -> Vec<&'static str> {
    HANDCRAFTED_REPLIES.lines().filter(|l| !l.is_empty()).collect()
}

/// Tokenizes every packaged reply with the scorer's tokenizer.
pub fn handcrafted_replies(scorer: &dyn Scorer) -> Result<Vec<Reply>> {
    handcrafted_texts()
        .into_iter()
        .map(|t| reply_from_text(scorer, t, ReplyOrigin::Handcrafted))
        .collect()
}
