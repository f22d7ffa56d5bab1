pub mod annotation;
pub mod batch;
pub mod cli;
pub mod client;
pub mod corpus;
pub mod extraction;
pub mod io;
pub mod lexicon;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod rational;
pub mod template;
