//! Verification suites that exercise the whole toolkit.

pub mod gradcheck;
