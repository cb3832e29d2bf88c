//! Dataset files and in-memory datasets.

pub mod behaviors;
pub mod dataset;
pub mod embeddings;
pub mod news;
pub mod synth;

pub use behaviors::{parse_behaviors_str, parse_behaviors_tsv, write_behaviors_tsv, ImpressionRecord};
pub use dataset::{Dataset, Impression};
pub use embeddings::{degrade_images, load_embeddings, save_embeddings, EmbeddingStore, BLANK_ID};
pub use news::{parse_news_str, parse_news_tsv, write_news_tsv, NewsRecord};
pub use synth::{synth_dataset, ClickRule, SynthConfig, SynthDataset};
