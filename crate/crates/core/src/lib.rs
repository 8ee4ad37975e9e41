pub mod agents;
pub mod corpus;
pub mod evaluation;
pub mod fsutil;
pub mod llm;
pub mod ontology;
pub mod ontology_builder;
pub mod retrieval;
pub mod sampling;
