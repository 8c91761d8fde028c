//! Frozen dual encoder with context-token injection.

mod encoder;
mod tokens;
mod vit;

pub use encoder::{embed_images, EmbeddingBatch, EncoderPair, Lexicon};
pub use tokens::{init_context_tokens, ContextTokens, DEFAULT_TOKEN_COUNT, TOKEN_INIT_STD};
pub use vit::{AttentionGrads, ForwardCache, FrozenVit, VitConfig};
