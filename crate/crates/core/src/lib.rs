pub mod annotations;
pub mod gmm;
pub mod lacs;
pub mod lis;
pub mod llm;
pub mod pipeline;
pub mod png;
pub mod seed;
