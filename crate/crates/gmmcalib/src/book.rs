//! Compiles every code snippet in the user guide under `book/` as a doc-test
//! so the guide can never drift from the library API.

macro_rules! chapter {
    ($name:ident, $path:literal) => {
        #[doc = include_str!($path)]
        mod $name {}
    };
}

chapter!(introduction, "../../../book/src/introduction.md");
