#![allow(dead_code)]

pub mod data;
pub mod gradients;
pub mod oracle;
pub mod scripted;
pub mod stats;
