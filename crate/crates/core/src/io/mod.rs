pub mod hdr;
pub mod pfm;
pub mod png;
