//! Closed forms and oracles (placeholder).
