#![allow(dead_code)]

pub mod collectives;
pub mod golden;
pub mod random;
