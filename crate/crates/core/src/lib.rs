pub mod data;
pub mod netcore;
pub mod oracle;
pub mod prob;
pub mod seed;
pub mod hillsynth;
pub mod gansynth;
pub mod shadow_tree;
pub mod fca;
pub mod eval;
pub mod pipeline;

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/quickstart.md")]
    mod quickstart {}
    #[doc = include_str!("../../../book/src/oracle.md")]
    mod oracle {}
    #[doc = include_str!("../../../book/src/hill.md")]
    mod hill {}
    #[doc = include_str!("../../../book/src/gan.md")]
    mod gan {}
    #[doc = include_str!("../../../book/src/tree.md")]
    mod tree {}
    #[doc = include_str!("../../../book/src/fca.md")]
    mod fca {}
    #[doc = include_str!("../../../book/src/eval.md")]
    mod eval {}
    #[doc = include_str!("../../../book/src/pipeline.md")]
    mod pipeline {}
}
