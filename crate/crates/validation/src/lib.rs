//! Holds the acceptance suite (`cargo test -p lpsnet-validation --test acceptance`).
//! The crate itself is empty.
