//! Home of the `acceptance` test target. Run it with
//! `cargo test -p hetvar-validation --test acceptance`.
