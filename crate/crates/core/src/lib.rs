pub mod expr;
pub mod quadrature;
pub mod roots;
pub mod homeo;
pub mod problem;
pub mod operator;
pub mod solver;
pub mod theorems;
pub mod config;
pub mod report;
pub mod selftest;
pub mod cli;
