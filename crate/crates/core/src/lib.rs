pub mod corpus;
pub mod curriculum;
pub mod grammar;
pub mod harness;
pub mod optimizer;
pub mod policy;
pub mod rewards;
pub mod seed;
