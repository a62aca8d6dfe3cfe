//! System prompts for the remote agents. Bump [`PROMPT_VERSION`] whenever a
//! text changes so transcripts stay attributable.

pub const PROMPT_VERSION: &str = "v1";

pub const PERCEPTION_PARSER: &str = include_str!("../../resources/prompts/perception_parser.txt");
pub const VALUE_GENERATOR: &str = include_str!("../../resources/prompts/value_generator.txt");
pub const VALUE_EVALUATOR: &str = include_str!("../../resources/prompts/value_evaluator.txt");
pub const ITEM_GENERATOR: &str = include_str!("../../resources/prompts/item_generator.txt");
