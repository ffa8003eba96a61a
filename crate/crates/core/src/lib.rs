pub mod dataset;
pub mod domain;
pub mod ecd;
pub mod glm;
pub mod infer;
pub mod lkc;
pub mod pipeline;
pub mod preproc;
pub mod report;
pub mod simulate;
pub mod special;
