//! Smali code model, parser and whole-program index.

mod index;
mod model;
mod parser;

pub use index::{build_code_index, CodeIndex, IndexError};
pub use model::{
    Instruction, InstructionKind, MethodRef, MethodRefParseError, Op, SmaliClass, SmaliMethod,
};
pub use parser::{parse_smali_file, ParseError, ParseErrorKind};

pub(crate) use model::split_type_list;
