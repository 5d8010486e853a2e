pub mod augment;
pub mod changepoint;
pub mod nn;
pub mod pipeline;
pub mod preprocess;
pub mod seqdata;
pub mod stream;
