// SPDX-License-Identifier: Apache-2.0

pub mod defense;
pub mod harness;
pub mod machine;
pub mod payload;
pub mod regfile;
pub mod trigger;
