// Book chapters compiled as doc-tests so their snippets cannot rot.

#[doc = include_str!("../../../book/src/introduction.md")]
pub mod introduction {}
#[doc = include_str!("../../../book/src/tasks.md")]
pub mod tasks {}
#[doc = include_str!("../../../book/src/conditioning.md")]
pub mod conditioning {}
#[doc = include_str!("../../../book/src/strength.md")]
pub mod strength {}
#[doc = include_str!("../../../book/src/training.md")]
pub mod training {}
#[doc = include_str!("../../../book/src/evaluation.md")]
pub mod evaluation {}
#[doc = include_str!("../../../book/src/serving.md")]
pub mod serving {}
