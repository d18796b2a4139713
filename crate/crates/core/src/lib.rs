pub mod cefr;
pub mod controls;
pub mod corpus;
pub mod jsonl;
pub mod metrics;
pub mod pipeline;
pub mod rng;
pub mod seq2seq;
pub mod splitter;
pub mod srl;
pub mod toy;
